#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vixen/language_model.hpp"
#include "vixen/matrix.hpp"

namespace vixen {

struct TransformerConfig {
  std::size_t vocab = 0;
  std::size_t width = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_positions = 128;
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 0;

  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

// All weights of the transformer. Also used as the gradient accumulator, so
// the two always share layout. Vectors are stored as 1 x n matrices.
struct TransformerParams {
  struct Block {
    Matrix ln1_gain, ln1_bias;
    Matrix wq, wk, wv, wo;  // e x e, applied as x * W
    Matrix ln2_gain, ln2_bias;
    Matrix w1, b1;  // e x (ratio*e), 1 x (ratio*e)
    Matrix w2, b2;  // (ratio*e) x e, 1 x e
  };
  Matrix token_embedding;     // V x e
  Matrix position_embedding;  // P x e
  std::vector<Block> blocks;
  Matrix lnf_gain, lnf_bias;
  Matrix w_out;  // V x e
  Matrix b_out;  // 1 x V

  /// Zero-filled with the layout `cfg` implies.
  static TransformerParams zeros(const TransformerConfig& cfg);

  /// Stable traversal order over every tensor.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  /// Whether a tensor (same order as tensors()) is a matrix weight that takes weight decay.
  std::vector<bool> decay_mask() const;
};

// Pre-LayerNorm causal transformer decoder with learned positions, GELU MLP
// and an untied output head. Used as the default frozen LM in tests and toy
// runs; `pretrain_prompted_lm` can fit it from scratch before it is frozen.
class TinyTransformer final : public LanguageModel {
 public:
  /// Seeded init: matrices uniform(+-sqrt(3)*0.02*...), LayerNorm gain 1, biases 0.
  explicit TinyTransformer(const TransformerConfig& cfg);
  TinyTransformer(const TransformerConfig& cfg, TransformerParams params);

  std::string name() const override { return "tiny-transformer"; }
  std::size_t vocab_size() const override { return cfg_.vocab; }
  std::size_t embed_width() const override { return cfg_.width; }
  const Matrix& embedding_table() const override { return params_.token_embedding; }
  std::size_t max_positions() const override { return cfg_.max_positions; }

  Matrix logits(const Matrix& inputs) const override;
  Matrix input_gradient(const Matrix& inputs, const Matrix& d_logits) const override;
  std::uint64_t parameter_checksum() const override;

  struct Cache;
  /// Forward pass retaining activations for `backward`.
  Matrix forward(const Matrix& inputs, Cache& cache) const;
  /// Returns d/d(inputs); accumulates parameter gradients into `grads` when non-null.
  Matrix backward(const Cache& cache, const Matrix& d_logits, TransformerParams* grads) const;

  const TransformerConfig& config() const noexcept { return cfg_; }
  const TransformerParams& params() const noexcept { return params_; }
  /// Mutable access, for from-scratch pretraining before the model is frozen.
  TransformerParams& mutable_params() noexcept { return params_; }

 private:
  void check_config() const;

  TransformerConfig cfg_;
  TransformerParams params_;
};

struct LayerNormCache {
  Matrix normalized;
  std::vector<double> inv_std;
};

struct TinyTransformer::Cache {
  struct BlockCache {
    Matrix x_in;
    LayerNormCache ln1;
    Matrix a, q, k, v;
    std::vector<Matrix> probs;  // per head, m x m (lower triangle used)
    Matrix attn;                // concatenated heads, m x e
    Matrix x_mid;
    LayerNormCache ln2;
    Matrix b, u, g;
  };
  std::vector<BlockCache> blocks;
  Matrix x_final;
  LayerNormCache lnf;
  Matrix z;
};

// Model file ("VXLM", version 1): config as u64s (vocab, width, layers,
// heads, max_positions, mlp_ratio, seed), then every tensor in
// TransformerParams::tensors() order as u64 rows, u64 cols, f64 data; CRC-32.
void save_transformer(const std::filesystem::path& path, const TinyTransformer& model);
TinyTransformer load_transformer(const std::filesystem::path& path);

// One sequence for prompted pretraining: `prompt_rows` learned continuous
// rows, then the `context` tokens, then the `target` tokens. Loss is taken
// on the target tokens only.
struct PromptedExample {
  std::size_t prompt_rows = 0;
  std::vector<int> context;
  std::vector<int> target;
};

struct PretrainOptions {
  std::size_t steps = 400;
  double lr = 3e-3;
  std::uint64_t seed = 0;
};

struct PretrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Fits the transformer from scratch so that learned prompt rows steer it
// towards each target, i.e. so that it is "promptable". Each example gets
// its own trainable prompt rows; those are discarded afterwards and only the
// transformer weights are kept. Full-batch Adam over all examples.
PretrainReport pretrain_prompted_lm(TinyTransformer& model, const std::vector<PromptedExample>& examples,
                                    const PretrainOptions& options);

}  // namespace vixen
