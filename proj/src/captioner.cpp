#include "vixen/captioner.hpp"

#include <cmath>

#include "vixen/error.hpp"
#include "vixen/random.hpp"

namespace vixen {

namespace {

void check_prompt(const LanguageModel& lm, const SoftPrompt& prompt) {
  if (prompt.cols() != lm.embed_width()) {
    throw DimensionError("prompt width " + std::to_string(prompt.cols()) + " does not match LM width " +
                         std::to_string(lm.embed_width()));
  }
  if (prompt.rows() == 0) throw DimensionError("empty prompt: the LM needs at least one conditioning row");
}

void check_ids(const LanguageModel& lm, std::span<const TokenId> ids) {
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= lm.vocab_size()) {
      throw TokenError("token id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(lm.vocab_size()) + ")");
    }
  }
}

Matrix teacher_forced_inputs(const LanguageModel& lm, const SoftPrompt& prompt, std::span<const TokenId> fed) {
  return vstack(prompt, embed_tokens(fed, lm.embedding_table()));
}

}  // namespace

std::vector<double> next_token_logprobs(const LanguageModel& lm, const SoftPrompt& prompt,
                                        std::span<const TokenId> prior) {
  check_prompt(lm, prompt);
  check_ids(lm, prior);
  const Matrix logits = lm.logits(teacher_forced_inputs(lm, prompt, prior));
  return log_softmax(logits.row(logits.rows() - 1));
}

double caption_loss(const LanguageModel& lm, const SoftPrompt& prompt, std::span<const TokenId> target) {
  check_prompt(lm, prompt);
  check_ids(lm, target);
  if (target.empty()) return 0.0;
  const Matrix logits = lm.logits(teacher_forced_inputs(lm, prompt, target.first(target.size() - 1)));
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto lp = log_softmax(logits.row(prompt.rows() - 1 + i));
    loss -= lp[static_cast<std::size_t>(target[i])];
  }
  return loss;
}

LossWithGrad caption_loss_with_grad(const LanguageModel& lm, const SoftPrompt& prompt,
                                    std::span<const TokenId> target) {
  check_prompt(lm, prompt);
  check_ids(lm, target);
  LossWithGrad out{0.0, Matrix(prompt.rows(), prompt.cols())};
  if (target.empty()) return out;

  const Matrix inputs = teacher_forced_inputs(lm, prompt, target.first(target.size() - 1));
  const Matrix logits = lm.logits(inputs);
  Matrix d_logits(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const std::size_t row = prompt.rows() - 1 + i;
    const auto lp = log_softmax(logits.row(row));
    const auto y = static_cast<std::size_t>(target[i]);
    out.loss -= lp[y];
    auto d = d_logits.row(row);
    for (std::size_t v = 0; v < lp.size(); ++v) d[v] = std::exp(lp[v]);
    d[y] -= 1.0;
  }
  out.d_prompt = row_slice(lm.input_gradient(inputs, d_logits), 0, prompt.rows());
  return out;
}

Generation generate(const LanguageModel& lm, const SoftPrompt& prompt, const Tokenizer& tokenizer,
                    const GenerateOptions& options) {
  check_prompt(lm, prompt);
  if (options.max_len == 0) throw ConfigError({"generate: max_len must be at least 1"});
  if (options.mode == GenerateOptions::Mode::Sample && !(options.temperature > 0.0)) {
    throw ConfigError({"generate: temperature must be positive"});
  }
  Rng rng(options.seed);
  Generation gen;
  while (gen.ids.size() < options.max_len && prompt.rows() + gen.ids.size() <= lm.max_positions()) {
    const auto lp = next_token_logprobs(lm, prompt, gen.ids);
    std::size_t pick = 0;
    if (options.mode == GenerateOptions::Mode::Greedy) {
      for (std::size_t v = 1; v < lp.size(); ++v)
        if (lp[v] > lp[pick]) pick = v;
    } else {
      std::vector<double> scaled(lp.size());
      for (std::size_t v = 0; v < lp.size(); ++v) scaled[v] = lp[v] / options.temperature;
      const auto probs = log_softmax(scaled);
      const double u = uniform01(rng);
      double acc = 0.0;
      pick = lp.size() - 1;
      for (std::size_t v = 0; v < probs.size(); ++v) {
        acc += std::exp(probs[v]);
        if (u < acc) {
          pick = v;
          break;
        }
      }
    }
    const auto id = static_cast<TokenId>(pick);
    if (id == tokenizer.eos()) {
      gen.stopped_at_eos = true;
      break;
    }
    gen.ids.push_back(id);
  }
  gen.text = tokenizer.decode(gen.ids);
  return gen;
}

}  // namespace vixen
