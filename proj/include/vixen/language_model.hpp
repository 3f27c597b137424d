#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vixen/matrix.hpp"

namespace vixen {

// Frozen causal language model driven by input embeddings.
//
// `logits(inputs)` maps an m x e sequence of input rows to m x V next-token
// logits; row i may depend on input rows 0..i only. `input_gradient` returns
// d(sum(d_logits .* logits(inputs)))/d(inputs), which is how a loss on the
// output reaches a soft prompt without touching model parameters.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::string name() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t embed_width() const = 0;
  /// V x e input embedding table used for text tokens.
  virtual const Matrix& embedding_table() const = 0;
  virtual std::size_t max_positions() const { return std::numeric_limits<std::size_t>::max(); }

  virtual Matrix logits(const Matrix& inputs) const = 0;
  virtual Matrix input_gradient(const Matrix& inputs, const Matrix& d_logits) const = 0;

  virtual std::uint64_t parameter_checksum() const = 0;
};

// Emits the same logit vector at every position regardless of input. With all
// logits equal this is the uniform model; with one logit raised it always
// prefers that token.
class ConstantLogitLM final : public LanguageModel {
 public:
  /// Embedding table is seeded uniform(-1, 1) so prompts can still be assembled.
  ConstantLogitLM(std::vector<double> logits, std::size_t embed_width, std::uint64_t seed = 0);
  static ConstantLogitLM uniform(std::size_t vocab, std::size_t embed_width, std::uint64_t seed = 0);

  std::string name() const override { return "constant-logit"; }
  std::size_t vocab_size() const override { return logits_.size(); }
  std::size_t embed_width() const override { return table_.cols(); }
  const Matrix& embedding_table() const override { return table_; }
  Matrix logits(const Matrix& inputs) const override;
  Matrix input_gradient(const Matrix& inputs, const Matrix& d_logits) const override;
  std::uint64_t parameter_checksum() const override;

 private:
  std::vector<double> logits_;
  Matrix table_;
};

/// Numerically stable log-softmax of one row.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace vixen
