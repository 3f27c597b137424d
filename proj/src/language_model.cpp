#include "vixen/language_model.hpp"

#include <algorithm>
#include <cmath>

#include "vixen/error.hpp"
#include "vixen/random.hpp"

namespace vixen {

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("log_softmax of empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

ConstantLogitLM::ConstantLogitLM(std::vector<double> logits, std::size_t embed_width, std::uint64_t seed)
    : logits_(std::move(logits)), table_(logits_.size(), embed_width) {
  if (logits_.empty() || embed_width == 0) throw DimensionError("ConstantLogitLM: empty vocabulary or width");
  Rng rng(seed);
  for (double& v : table_.values()) v = vixen::uniform(rng, -1.0, 1.0);
}

ConstantLogitLM ConstantLogitLM::uniform(std::size_t vocab, std::size_t embed_width, std::uint64_t seed) {
  return ConstantLogitLM(std::vector<double>(vocab, 0.0), embed_width, seed);
}

Matrix ConstantLogitLM::logits(const Matrix& inputs) const {
  if (inputs.cols() != embed_width()) {
    throw DimensionError("ConstantLogitLM: input width " + std::to_string(inputs.cols()) +
                         " != " + std::to_string(embed_width()));
  }
  Matrix out(inputs.rows(), logits_.size());
  for (std::size_t i = 0; i < out.rows(); ++i) std::copy(logits_.begin(), logits_.end(), out.row(i).begin());
  return out;
}

Matrix ConstantLogitLM::input_gradient(const Matrix& inputs, const Matrix&) const {
  return Matrix(inputs.rows(), inputs.cols());
}

std::uint64_t ConstantLogitLM::parameter_checksum() const { return checksum(logits_, checksum(table_)); }

}  // namespace vixen
