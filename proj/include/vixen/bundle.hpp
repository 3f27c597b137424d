#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vixen/captioner.hpp"
#include "vixen/encoder.hpp"
#include "vixen/fusion.hpp"
#include "vixen/language_model.hpp"
#include "vixen/tokenizer.hpp"

namespace vixen {

// Everything needed to caption an image pair: frozen encoder and LM, the
// tokenizer, the fusion rule, the text prefix and the trainable projection.
struct ModelBundle {
  std::shared_ptr<const ImageEncoder> encoder;
  std::shared_ptr<const LanguageModel> lm;
  Tokenizer tokenizer;
  FusionStrategy fusion = FusionStrategy::Concatenation;
  std::string prefix;
  ProjectionLayer projection;

  /// Combined checksum of the encoder and LM weights.
  std::uint64_t frozen_checksum() const;
  /// Throws ConfigError listing every shape disagreement between parts.
  void check() const;
};

/// Visual rows fused from both images, followed by the embedded prefix.
SoftPrompt build_prompt(const ModelBundle& bundle, const FeatureMap& first, const FeatureMap& second);

/// Tokenized target with the closing <eos> appended.
std::vector<TokenId> target_ids(const ModelBundle& bundle, std::string_view text);

Generation caption_pair(const ModelBundle& bundle, const Image& first, const Image& second,
                        const GenerateOptions& options = {});

struct ToyBundleOptions {
  std::size_t patch_size = 8;
  std::size_t feature_width = 16;
  std::size_t lm_width = 32;
  std::size_t lm_layers = 2;
  std::size_t lm_heads = 4;
  std::size_t max_positions = 96;
  FusionStrategy fusion = FusionStrategy::Concatenation;
  std::string prefix_profile = "differences";
  /// Steps of prompted pretraining on the corpus before the LM is frozen; 0 skips it.
  std::size_t pretrain_steps = 300;
  double pretrain_lr = 3e-3;
  std::uint64_t seed = 0;
};

// Builds a small self-contained bundle: toy patch encoder, tokenizer fitted
// on `corpus`, and a tiny transformer. With pretrain_steps > 0 the LM is
// first fitted so that learned soft prompts can select each corpus sentence,
// then frozen. `image_size` fixes k for the pretraining prompts.
ModelBundle make_toy_bundle(const std::vector<std::string>& corpus, std::size_t image_size,
                            const ToyBundleOptions& options = {});

// Bundle directory: bundle.json, vocab.txt, lm.vxlm, projection.vxpj.
// Only toy encoders and TinyTransformer LMs are persisted; adapter-backed
// parts are recorded by name and resolved again through the registry.
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& dir);

}  // namespace vixen
