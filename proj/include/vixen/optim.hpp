#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vixen {

class BinaryWriter;
class BinaryReader;

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.05;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

// AdamW with decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)     (wd only where enabled)
// Parameter groups are registered once, in a fixed order; `step` takes the
// parameter and gradient buffers in that same order.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {});

  /// Registers the next parameter group.
  void add_group(std::size_t size, bool decay);

  void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads);

  const AdamWConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return t_; }

  void write(BinaryWriter& w) const;
  /// Restores state; group sizes and decay flags must match the registered ones.
  void read(BinaryReader& r);

  friend bool operator==(const AdamW&, const AdamW&) = default;

 private:
  struct Group {
    bool decay;
    std::vector<double> m;
    std::vector<double> v;
    friend bool operator==(const Group&, const Group&) = default;
  };
  AdamWConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Group> groups_;
};

}  // namespace vixen
