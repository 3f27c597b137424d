#include "vixen/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "vixen/error.hpp"
#include "vixen/metrics.hpp"

namespace vixen {

namespace {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

HashedBowEmbedder::HashedBowEmbedder(std::size_t dimension) : d_(dimension) {
  if (d_ == 0) throw ConfigError({"hashed-bow embedder: dimension must be positive"});
}

std::vector<double> HashedBowEmbedder::embed(const std::string& text) const {
  std::vector<double> v(d_, 0.0);
  for (const auto& tok : metric_tokens(text)) {
    const std::uint64_t h = fnv1a64(tok);
    v[h % d_] += (h >> 63) ? -1.0 : 1.0;
  }
  const double n = norm(v);
  if (n == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    v[0] = 1.0;
    return v;
  }
  for (double& x : v) x /= n;
  return v;
}

AdapterEmbedder::AdapterEmbedder(std::string name, std::size_t dimension, Fn fn)
    : name_(std::move(name)), d_(dimension), fn_(std::move(fn)) {
  if (!fn_) throw AdapterError(name_, "empty embedding function");
}

std::vector<double> AdapterEmbedder::embed(const std::string& text) const {
  std::vector<double> v;
  try {
    v = fn_(text);
  } catch (const AdapterError&) {
    throw;
  } catch (const std::exception& e) {
    throw AdapterError(name_, e.what());
  }
  if (v.size() != d_) {
    throw AdapterError(name_, "declared d=" + std::to_string(d_) + " but returned " + std::to_string(v.size()) +
                                  " values");
  }
  const double n = norm(v);
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6) {
    throw AdapterError(name_, "embedding is not unit length (norm " + std::to_string(n) + ")");
  }
  return v;
}

double semantic_similarity(const std::string& a, const std::string& b, const SentenceEmbedder& embedder) {
  const auto u = embedder.embed(a);
  const auto v = embedder.embed(b);
  if (u.size() != v.size()) throw DimensionError("semantic_similarity: embedding sizes differ");
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
  const double denom = norm(u) * norm(v);
  const double c = denom == 0.0 ? 0.0 : dot / denom;
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace vixen
