#pragma once

#include <stdexcept>
#include <string>

namespace duet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct DegenerateRotation : Error { using Error::Error; };
struct NotARotation : Error { using Error::Error; };
struct OutOfRange : Error { using Error::Error; };
struct BadArgument : Error { using Error::Error; };
struct EmptyPrompt : Error { using Error::Error; };
struct BackendUnavailable : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct DatasetTooSmall : Error { using Error::Error; };
struct DegenerateCovariance : Error { using Error::Error; };
struct MalformedResponse : Error { using Error::Error; };
struct NotTrained : Error { using Error::Error; };
struct SourceUnavailable : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };

template <class E = BadArgument>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace duet
