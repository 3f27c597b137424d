#include "vixen/encoder.hpp"

#include <cmath>

#include "vixen/error.hpp"
#include "vixen/random.hpp"

namespace vixen {

std::size_t EncoderContract::k_for(std::size_t height, std::size_t width) const {
  if (fixed_k) return *fixed_k;
  if (patch_size == 0) throw DimensionError("encoder contract has no patch size");
  if (height < patch_size || width < patch_size || height % patch_size != 0 ||
      width % patch_size != 0) {
    throw DimensionError("image " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible into " + std::to_string(patch_size) + "-pixel patches");
  }
  return (height / patch_size) * (width / patch_size);
}

std::string EncoderContract::k_formula() const {
  if (fixed_k) return std::to_string(*fixed_k);
  return "(H/" + std::to_string(patch_size) + ")*(W/" + std::to_string(patch_size) + ")";
}

EncoderContract describe(const EncoderConfig& cfg) {
  if (cfg.kind == EncoderKind::ExternalAdapter) {
    throw ConfigError({"describe(): adapter encoders are described by their registry profile"});
  }
  return EncoderContract{cfg.h, cfg.patch_size, std::nullopt};
}

ToyPatchEncoder::ToyPatchEncoder(const EncoderConfig& cfg) : config_(cfg), patch_(cfg.patch_size) {
  std::vector<std::string> problems;
  if (cfg.kind != EncoderKind::ToyPatch) problems.emplace_back("ToyPatchEncoder needs kind toy-patch");
  if (cfg.patch_size == 0) problems.emplace_back("patch_size must be positive");
  if (cfg.h == 0) problems.emplace_back("h must be positive");
  if (!problems.empty()) throw ConfigError(std::move(problems));

  const std::size_t in = patch_ * patch_ * 3;
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  Rng rng(cfg.seed);
  weight_ = Matrix(cfg.h, in);
  for (double& w : weight_.values()) w = uniform(rng, -scale, scale);
  bias_.assign(cfg.h, 0.0);
  if (!cfg.zero_bias) {
    for (double& b : bias_) b = uniform(rng, -scale, scale);
  }
}

FeatureMap ToyPatchEncoder::encode(const Image& image) const {
  validate(image);
  const std::size_t k = describe().k_for(image.height, image.width);
  const std::size_t grid_w = image.width / patch_;
  const std::size_t in = patch_ * patch_ * 3;

  FeatureMap out(k, weight_.rows());
  std::vector<double> patch(in);
  for (std::size_t p = 0; p < k; ++p) {
    const std::size_t y0 = (p / grid_w) * patch_;
    const std::size_t x0 = (p % grid_w) * patch_;
    std::size_t d = 0;
    for (std::size_t y = 0; y < patch_; ++y)
      for (std::size_t x = 0; x < patch_; ++x)
        for (std::size_t c = 0; c < 3; ++c) patch[d++] = image.at(y0 + y, x0 + x, c);

    auto row = out.row(p);
    for (std::size_t i = 0; i < weight_.rows(); ++i) {
      auto w = weight_.row(i);
      double acc = 0.0;
      for (std::size_t j = 0; j < in; ++j) acc += w[j] * patch[j];
      row[i] = acc + bias_[i];
    }
  }
  return out;
}

EncoderContract ToyPatchEncoder::describe() const {
  return EncoderContract{weight_.rows(), patch_, std::nullopt};
}

std::uint64_t ToyPatchEncoder::parameter_checksum() const {
  return checksum(bias_, checksum(weight_));
}

AdapterEncoder::AdapterEncoder(std::string name, std::size_t k, std::size_t h, Fn fn)
    : name_(std::move(name)), k_(k), h_(h), fn_(std::move(fn)) {
  if (k_ == 0 || h_ == 0) throw AdapterError(name_, "declared shape must be positive");
  if (!fn_) throw AdapterError(name_, "no callable bound");
}

FeatureMap AdapterEncoder::encode(const Image& image) const {
  FeatureMap out;
  try {
    out = fn_(image);
  } catch (const AdapterError&) {
    throw;
  } catch (const std::exception& e) {
    throw AdapterError(name_, e.what());
  }
  if (out.rows() != k_ || out.cols() != h_) {
    throw AdapterError(name_, "declared " + std::to_string(k_) + "x" + std::to_string(h_) +
                                  " but produced " + shape_string(out));
  }
  if (!out.all_finite()) throw AdapterError(name_, "produced non-finite features");
  return out;
}

EncoderContract AdapterEncoder::describe() const { return EncoderContract{h_, 0, k_}; }

}  // namespace vixen
