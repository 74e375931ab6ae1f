#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "duet/autodiff.hpp"
#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet {

/// Ordered collection of named trainable tensors. Insertion order is the
/// iteration order, so optimizer sweeps and checkpoints are deterministic.
struct ParamStore {
  std::vector<std::string> names;
  std::unordered_map<std::string, ad::Var> vars;

  ad::Var& add(const std::string& name, Mat init) {
    require<BadArgument>(!vars.count(name), "duplicate parameter: " + name);
    names.push_back(name);
    auto [it, ok] = vars.emplace(name, ad::Var::leaf(std::move(init), true));
    return it->second;
  }

  bool has(const std::string& name) const { return vars.count(name) > 0; }

  ad::Var& at(const std::string& name) {
    auto it = vars.find(name);
    require<BadArgument>(it != vars.end(), "unknown parameter: " + name);
    return it->second;
  }
  const ad::Var& at(const std::string& name) const {
    auto it = vars.find(name);
    require<BadArgument>(it != vars.end(), "unknown parameter: " + name);
    return it->second;
  }

  long scalar_count() const {
    long n = 0;
    for (const auto& name : names) n += at(name).value().size();
    return n;
  }

  void zero_grads() {
    for (const auto& name : names) at(name).zero_grad();
  }
};

/// Dense init with 1/sqrt(fan_in) scaling; biases and gating layers start
/// at zero elsewhere.
inline Mat dense_init(Rng& rng, long in_dim, long out_dim) {
  return random_normal(rng, in_dim, out_dim, 1.0 / std::sqrt(double(in_dim)));
}

}  // namespace duet
