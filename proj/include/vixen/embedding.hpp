#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace vixen {

// Maps a sentence to a unit-length vector of fixed dimension.
class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> embed(const std::string& text) const = 0;
};

// Hashed bag of words over the metric tokenizer with signed buckets
// (FNV-1a 64; bucket = hash mod d, sign from the top bit). Texts whose
// bucket vector is zero, including the empty text, map to the first basis vector.
class HashedBowEmbedder final : public SentenceEmbedder {
 public:
  explicit HashedBowEmbedder(std::size_t dimension = 256);
  std::string name() const override { return "hashed-bow"; }
  std::size_t dimension() const override { return d_; }
  std::vector<double> embed(const std::string& text) const override;

 private:
  std::size_t d_;
};

// Wraps an external embedding function; the declared dimension and the unit
// norm (within 1e-6) are checked on every call.
class AdapterEmbedder final : public SentenceEmbedder {
 public:
  using Fn = std::function<std::vector<double>(const std::string&)>;
  AdapterEmbedder(std::string name, std::size_t dimension, Fn fn);
  std::string name() const override { return name_; }
  std::size_t dimension() const override { return d_; }
  std::vector<double> embed(const std::string& text) const override;

 private:
  std::string name_;
  std::size_t d_;
  Fn fn_;
};

/// Cosine of the two embeddings, clamped to [-1, 1]. Symmetric bit for bit.
double semantic_similarity(const std::string& a, const std::string& b, const SentenceEmbedder& embedder);

}  // namespace vixen
