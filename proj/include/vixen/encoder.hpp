#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "vixen/image.hpp"
#include "vixen/matrix.hpp"

namespace vixen {

/// k x h feature map: one row per spatial position or query token.
using FeatureMap = Matrix;

enum class EncoderKind { ToyPatch, ExternalAdapter };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::ToyPatch;
  std::size_t patch_size = 16;
  std::size_t h = 8;
  std::uint64_t seed = 0;
  bool zero_bias = true;
  // ExternalAdapter only: registry name, resolved by make_encoder().
  std::string adapter;
};

// The (k, h) contract an encoder promises. Toy encoders derive k from the
// image size; adapters declare a fixed k up front.
struct EncoderContract {
  std::size_t h = 0;
  std::size_t patch_size = 0;
  std::optional<std::size_t> fixed_k;

  /// Throws DimensionError if the image does not tile exactly.
  std::size_t k_for(std::size_t height, std::size_t width) const;
  std::string k_formula() const;
};

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual FeatureMap encode(const Image& image) const = 0;
  virtual EncoderContract describe() const = 0;
  virtual std::string name() const = 0;
  /// Checksum of all parameters; stays constant for frozen encoders.
  virtual std::uint64_t parameter_checksum() const = 0;
};

// Non-overlapping patch flatten followed by a seeded linear map.
//
// Patches are taken in row-major grid order; inside a patch, values are
// flattened as (y, x, channel). Weights are h x (patch*patch*3), drawn
// row-major from mt19937_64(seed) as uniform(-s, s), s = 1/sqrt(patch*patch*3).
// A nonzero bias, when requested, is drawn after the weights from the same stream.
class ToyPatchEncoder final : public ImageEncoder {
 public:
  explicit ToyPatchEncoder(const EncoderConfig& cfg);

  FeatureMap encode(const Image& image) const override;
  EncoderContract describe() const override;
  std::string name() const override { return "toy-patch"; }
  std::uint64_t parameter_checksum() const override;

  const EncoderConfig& config() const noexcept { return config_; }
  const Matrix& weight() const noexcept { return weight_; }
  const std::vector<double>& bias() const noexcept { return bias_; }

 private:
  EncoderConfig config_;
  std::size_t patch_;
  Matrix weight_;
  std::vector<double> bias_;
};

// Wraps an arbitrary callable (in-process model, subprocess bridge, remote
// service) behind the encoder contract. Declared (k, h) are enforced on every
// call and failures are rethrown as AdapterError carrying the adapter name.
class AdapterEncoder final : public ImageEncoder {
 public:
  using Fn = std::function<FeatureMap(const Image&)>;

  AdapterEncoder(std::string name, std::size_t k, std::size_t h, Fn fn);

  FeatureMap encode(const Image& image) const override;
  EncoderContract describe() const override;
  std::string name() const override { return name_; }
  std::uint64_t parameter_checksum() const override { return 0; }

 private:
  std::string name_;
  std::size_t k_;
  std::size_t h_;
  Fn fn_;
};

/// Contract for a configuration without instantiating weights.
EncoderContract describe(const EncoderConfig& cfg);

}  // namespace vixen
