#pragma once

#include <string>
#include <utility>
#include <vector>

#include "duet/dataset.hpp"
#include "duet/length_estimator.hpp"
#include "duet/llm.hpp"
#include "duet/motion_source.hpp"
#include "duet/prompts.hpp"
#include "duet/sampler.hpp"

namespace duet {

/// Asks the language model for m fresh two-person descriptions.
inline std::vector<std::string> synthesize_descriptions(
    LlmClient& llm, const std::string& theme,
    const std::vector<std::string>& tags,
    const std::vector<std::string>& examples, int m) {
  const std::string prompt = build_interaction_prompt(theme, tags, examples, m);
  return parse_description_array(llm.complete(prompt));
}

/// Splits one two-person description into per-person texts.
inline PromptBundle decompose_description(LlmClient& llm,
                                          const std::string& theme,
                                          const std::vector<std::string>& tags,
                                          const std::string& two_person_text) {
  PromptBundle bundle;
  bundle.theme = theme;
  bundle.tags = tags;
  bundle.two_person_text = trim_copy(two_person_text);
  auto [p1, p2] =
      parse_person_pair(llm.complete(build_decomposition_prompt(two_person_text)));
  bundle.person1_text = std::move(p1);
  bundle.person2_text = std::move(p2);
  bundle.validate();
  return bundle;
}

/// Everything compose_interaction needs besides the bundle itself.
struct ComposeContext {
  SinglePersonSource& source;
  DenoiserParameters& reaction;
  DiffusionSchedule schedule;
  SamplerConfig sampler;
  ChannelStats stats;
  LengthEstimator length;
  int fps = 30;
};

/// Builds one interaction: the first agent comes from the single-person
/// source at the estimated length, bit-exact in the output; the second is
/// generated by the reaction model conditioned on the first agent's joints
/// and the two-person text.
inline InteractionSample compose_interaction(const PromptBundle& bundle,
                                             ComposeContext& ctx) {
  bundle.validate();
  const int frames = std::min(ctx.length.predict(tokenize(bundle.two_person_text)),
                              ctx.reaction.config.max_frames);
  MotionSequence first =
      ctx.source.generate(bundle.person1_text, frames, ctx.sampler.seed);

  auto prompt = embed_words(tokenize(bundle.two_person_text),
                            StubWordEmbedder(ctx.reaction.config.text_width));
  InteractionSample sample =
      reaction_sample(ctx.reaction, first.positions, prompt,
                      bundle.two_person_text, ctx.sampler, ctx.schedule,
                      ctx.stats, ctx.fps);
  sample.agents[0] = std::move(first);  // full pass-through, not positions only
  sample.agents[0].fps = ctx.fps;
  sample.provenance = Provenance::synthetic_raw;
  return sample;
}

}  // namespace duet
