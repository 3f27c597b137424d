#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vixen/fusion.hpp"
#include "vixen/language_model.hpp"
#include "vixen/tokenizer.hpp"

namespace vixen {

/// log p(. | prompt, prior) over the vocabulary.
std::vector<double> next_token_logprobs(const LanguageModel& lm, const SoftPrompt& prompt,
                                        std::span<const TokenId> prior);

/// Teacher-forced negative log-likelihood of `target` after `prompt`:
///   -sum_i log p(t_i | prompt, t_1..t_{i-1}).
/// The prompt is the whole conditioning context; no <bos> is inserted.
double caption_loss(const LanguageModel& lm, const SoftPrompt& prompt, std::span<const TokenId> target);

struct LossWithGrad {
  double loss = 0.0;
  Matrix d_prompt;  // same shape as the prompt
};
/// caption_loss plus its gradient with respect to the prompt rows.
LossWithGrad caption_loss_with_grad(const LanguageModel& lm, const SoftPrompt& prompt,
                                    std::span<const TokenId> target);

struct GenerateOptions {
  enum class Mode { Greedy, Sample };
  Mode mode = Mode::Greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_len = 32;
};

struct Generation {
  std::vector<TokenId> ids;  // excludes the terminating <eos>
  std::string text;
  bool stopped_at_eos = false;
};

/// Autoregressive decoding. Greedy ties resolve to the lowest id. Sampling
/// owns a fresh RNG seeded from options.seed, so it is reproducible.
Generation generate(const LanguageModel& lm, const SoftPrompt& prompt, const Tokenizer& tokenizer,
                    const GenerateOptions& options);

}  // namespace vixen
