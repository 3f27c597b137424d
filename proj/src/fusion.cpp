#include "vixen/fusion.hpp"

#include <cmath>

#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"

namespace vixen {

std::string_view to_string(FusionStrategy s) noexcept {
  switch (s) {
    case FusionStrategy::Concatenation: return "concat";
    case FusionStrategy::Subtraction: return "sub";
    case FusionStrategy::Addition: return "add";
    case FusionStrategy::Multiplication: return "mul";
    case FusionStrategy::Mean: return "mean";
  }
  return "?";
}

FusionStrategy parse_fusion(std::string_view name) {
  if (name == "concat" || name == "concatenation") return FusionStrategy::Concatenation;
  if (name == "sub" || name == "subtraction") return FusionStrategy::Subtraction;
  if (name == "add" || name == "addition") return FusionStrategy::Addition;
  if (name == "mul" || name == "multiplication") return FusionStrategy::Multiplication;
  if (name == "mean") return FusionStrategy::Mean;
  throw ConfigError({"unknown fusion strategy '" + std::string(name) +
                     "' (expected concat, sub, add, mul or mean)"});
}

std::size_t fused_length(std::size_t k, FusionStrategy s) noexcept {
  return s == FusionStrategy::Concatenation ? 2 * k : k;
}

std::string_view prefix_text(std::string_view profile) {
  if (profile == "differences") return kDifferencesPrefix;
  if (profile == "edit-instructions") return kEditInstructionsPrefix;
  if (profile == "none") return {};
  throw ConfigError({"unknown prefix profile '" + std::string(profile) +
                     "' (expected differences, edit-instructions or none)"});
}

ProjectionLayer::ProjectionLayer(std::size_t h, std::size_t e) : weight(e, h), bias(e, 0.0) {}

ProjectionLayer ProjectionLayer::initialized(std::size_t h, std::size_t e, Rng& rng) {
  if (h == 0 || e == 0) throw DimensionError("projection dimensions must be positive");
  ProjectionLayer layer(h, e);
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (double& w : layer.weight.values()) w = uniform(rng, -bound, bound);
  return layer;
}

std::uint64_t ProjectionLayer::checksum() const { return vixen::checksum(bias, vixen::checksum(weight)); }

ProjectionGrad& ProjectionGrad::operator+=(const ProjectionGrad& o) {
  weight += o.weight;
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += o.bias[i];
  return *this;
}

ProjectionGrad& ProjectionGrad::operator*=(double s) {
  weight *= s;
  for (double& b : bias) b *= s;
  return *this;
}

Matrix project(const FeatureMap& f, const ProjectionLayer& layer) {
  if (f.cols() != layer.in_width()) {
    throw DimensionError("project: feature width " + std::to_string(f.cols()) +
                         " does not match projection input width " + std::to_string(layer.in_width()));
  }
  Matrix out = matmul_nt(f, layer.weight);
  add_row_vector(out, layer.bias);
  return out;
}

void project_backward(const FeatureMap& f, const Matrix& d_projected, ProjectionGrad& grad) {
  if (d_projected.rows() != f.rows() || d_projected.cols() != grad.weight.rows() ||
      f.cols() != grad.weight.cols()) {
    throw DimensionError("project_backward: shapes " + shape_string(f) + ", " +
                         shape_string(d_projected) + ", grad " + shape_string(grad.weight));
  }
  grad.weight += matmul_tn(d_projected, f);
  const auto db = column_sums(d_projected);
  for (std::size_t i = 0; i < db.size(); ++i) grad.bias[i] += db[i];
}

SoftPrompt fuse(const Matrix& first, const Matrix& second, FusionStrategy strategy) {
  if (first.rows() != second.rows() || first.cols() != second.cols()) {
    throw DimensionError("fuse: shape mismatch " + shape_string(first) + " vs " + shape_string(second));
  }
  switch (strategy) {
    case FusionStrategy::Concatenation: return vstack(first, second);
    case FusionStrategy::Subtraction: return first - second;
    case FusionStrategy::Addition: return first + second;
    case FusionStrategy::Multiplication: return hadamard(first, second);
    case FusionStrategy::Mean: {
      Matrix out = first + second;
      out *= 0.5;
      return out;
    }
  }
  throw Error("fuse: unreachable strategy");
}

FuseGrad fuse_backward(const Matrix& first, const Matrix& second, FusionStrategy strategy,
                       const Matrix& d_fused) {
  const std::size_t k = first.rows();
  if (d_fused.rows() != fused_length(k, strategy) || d_fused.cols() != first.cols()) {
    throw DimensionError("fuse_backward: gradient shape " + shape_string(d_fused));
  }
  switch (strategy) {
    case FusionStrategy::Concatenation:
      return {row_slice(d_fused, 0, k), row_slice(d_fused, k, 2 * k)};
    case FusionStrategy::Subtraction: return {d_fused, d_fused * -1.0};
    case FusionStrategy::Addition: return {d_fused, d_fused};
    case FusionStrategy::Multiplication: return {hadamard(d_fused, second), hadamard(d_fused, first)};
    case FusionStrategy::Mean: return {d_fused * 0.5, d_fused * 0.5};
  }
  throw Error("fuse_backward: unreachable strategy");
}

Matrix embed_tokens(std::span<const TokenId> ids, const Matrix& embedding_table) {
  Matrix out(ids.size(), embedding_table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= embedding_table.rows()) {
      throw TokenError("token id " + std::to_string(id) + " outside embedding table of " +
                       std::to_string(embedding_table.rows()) + " rows");
    }
    auto src = embedding_table.row(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

SoftPrompt assemble_prompt(const SoftPrompt& visual, std::string_view prefix, const Tokenizer& tokenizer,
                           const Matrix& embedding_table) {
  if (embedding_table.cols() != visual.cols()) {
    throw DimensionError("assemble_prompt: embedding width " + std::to_string(embedding_table.cols()) +
                         " does not match prompt width " + std::to_string(visual.cols()));
  }
  if (prefix.empty()) return visual;
  const auto ids = tokenizer.encode(prefix);
  return vstack(visual, embed_tokens(ids, embedding_table));
}

namespace {
constexpr std::string_view kProjectionMagic = "VXPJ";
constexpr std::uint32_t kProjectionVersion = 1;
}  // namespace

std::string serialize_projection(const ProjectionLayer& layer) {
  BinaryWriter w(kProjectionMagic, kProjectionVersion);
  w.u64(layer.in_width());
  w.u64(layer.out_width());
  w.f64s(layer.weight.values());
  w.f64s(layer.bias);
  return std::move(w).finish();
}

ProjectionLayer deserialize_projection(std::string data) {
  BinaryReader r(std::move(data), kProjectionMagic, kProjectionVersion, "projection file");
  const auto h = r.u64();
  const auto e = r.u64();
  ProjectionLayer layer;
  layer.weight = Matrix(e, h, r.f64s(e * h));
  layer.bias = r.f64s(e);
  r.expect_end();
  return layer;
}

void save_projection(const std::filesystem::path& path, const ProjectionLayer& layer) {
  write_file_atomic(path, serialize_projection(layer));
}

ProjectionLayer load_projection(const std::filesystem::path& path) {
  return deserialize_projection(read_file(path));
}

}  // namespace vixen
