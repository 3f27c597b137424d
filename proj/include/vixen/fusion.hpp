#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vixen/encoder.hpp"
#include "vixen/matrix.hpp"
#include "vixen/random.hpp"
#include "vixen/tokenizer.hpp"

namespace vixen {

/// m x e rows fed to the language model in place of token embeddings.
using SoftPrompt = Matrix;

enum class FusionStrategy { Concatenation, Subtraction, Addition, Multiplication, Mean };

inline constexpr FusionStrategy kAllFusionStrategies[] = {
    FusionStrategy::Concatenation, FusionStrategy::Subtraction, FusionStrategy::Addition,
    FusionStrategy::Multiplication, FusionStrategy::Mean};

/// Short CLI spelling: concat, sub, add, mul, mean.
std::string_view to_string(FusionStrategy s) noexcept;
/// Accepts the short spelling or the full name ("concatenation", ...).
FusionStrategy parse_fusion(std::string_view name);

/// Rows a fused prompt will have for k feature rows per image.
std::size_t fused_length(std::size_t k, FusionStrategy s) noexcept;

/// Prompt prefix texts.
inline constexpr std::string_view kDifferencesPrefix = "The differences between the images are as follows: ";
inline constexpr std::string_view kEditInstructionsPrefix = "Edit instructions:";
/// "differences" or "edit-instructions".
std::string_view prefix_text(std::string_view profile);

// Affine map from encoder width h to language-model width e; the only
// trainable parameters in the system.
struct ProjectionLayer {
  Matrix weight;             // e x h
  std::vector<double> bias;  // e

  ProjectionLayer() = default;
  /// Zero weight and bias.
  ProjectionLayer(std::size_t h, std::size_t e);
  /// weight ~ uniform(-1/sqrt(h), 1/sqrt(h)), drawn row-major; bias = 0.
  static ProjectionLayer initialized(std::size_t h, std::size_t e, Rng& rng);

  std::size_t in_width() const noexcept { return weight.cols(); }
  std::size_t out_width() const noexcept { return weight.rows(); }
  std::uint64_t checksum() const;

  friend bool operator==(const ProjectionLayer&, const ProjectionLayer&) = default;
};

struct ProjectionGrad {
  Matrix weight;
  std::vector<double> bias;

  ProjectionGrad() = default;
  ProjectionGrad(std::size_t h, std::size_t e) : weight(e, h), bias(e, 0.0) {}
  ProjectionGrad& operator+=(const ProjectionGrad& o);
  ProjectionGrad& operator*=(double s);
};

/// Row i of the result is weight * f_i + bias.
Matrix project(const FeatureMap& f, const ProjectionLayer& layer);
/// Accumulates d(loss)/d(weight, bias) given d(loss)/d(project(f)).
void project_backward(const FeatureMap& f, const Matrix& d_projected, ProjectionGrad& grad);

SoftPrompt fuse(const Matrix& first, const Matrix& second, FusionStrategy strategy);

struct FuseGrad {
  Matrix first;
  Matrix second;
};
FuseGrad fuse_backward(const Matrix& first, const Matrix& second, FusionStrategy strategy,
                       const Matrix& d_fused);

/// Embedding-table rows for each id.
Matrix embed_tokens(std::span<const TokenId> ids, const Matrix& embedding_table);

/// [visual rows; embedded prefix tokens]. An empty prefix returns `visual` unchanged.
SoftPrompt assemble_prompt(const SoftPrompt& visual, std::string_view prefix, const Tokenizer& tokenizer,
                           const Matrix& embedding_table);

// Projection file ("VXPJ", version 1):
//   magic "VXPJ" | u32 version | u64 h | u64 e | f64[e*h] weight row-major |
//   f64[e] bias | u32 CRC-32 of all preceding bytes; little-endian throughout.
std::string serialize_projection(const ProjectionLayer& layer);
ProjectionLayer deserialize_projection(std::string data);
void save_projection(const std::filesystem::path& path, const ProjectionLayer& layer);
ProjectionLayer load_projection(const std::filesystem::path& path);

}  // namespace vixen
