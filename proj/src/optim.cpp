#include "vixen/optim.hpp"

#include <cmath>

#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"

namespace vixen {

AdamW::AdamW(AdamWConfig config) : config_(config) {
  std::vector<std::string> problems;
  if (!(config_.lr > 0.0)) problems.emplace_back("lr must be positive");
  if (!(config_.beta1 > 0.0 && config_.beta1 < 1.0)) problems.emplace_back("beta1 must lie in (0, 1)");
  if (!(config_.beta2 > 0.0 && config_.beta2 < 1.0)) problems.emplace_back("beta2 must lie in (0, 1)");
  if (!(config_.eps > 0.0)) problems.emplace_back("eps must be positive");
  if (!(config_.weight_decay >= 0.0)) problems.emplace_back("weight_decay must be non-negative");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

void AdamW::add_group(std::size_t size, bool decay) {
  groups_.push_back(Group{decay, std::vector<double>(size, 0.0), std::vector<double>(size, 0.0)});
}

void AdamW::step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
  if (params.size() != groups_.size() || grads.size() != groups_.size()) {
    throw DimensionError("AdamW::step: expected " + std::to_string(groups_.size()) + " groups");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    auto& g = groups_[gi];
    auto p = params[gi];
    auto d = grads[gi];
    if (p.size() != g.m.size() || d.size() != g.m.size()) {
      throw DimensionError("AdamW::step: group " + std::to_string(gi) + " size mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      g.m[i] = config_.beta1 * g.m[i] + (1.0 - config_.beta1) * d[i];
      g.v[i] = config_.beta2 * g.v[i] + (1.0 - config_.beta2) * d[i] * d[i];
      const double m_hat = g.m[i] / bc1;
      const double v_hat = g.v[i] / bc2;
      double update = m_hat / (std::sqrt(v_hat) + config_.eps);
      if (g.decay) update += config_.weight_decay * p[i];
      p[i] -= config_.lr * update;
    }
  }
}

void AdamW::write(BinaryWriter& w) const {
  w.f64(config_.lr);
  w.f64(config_.beta1);
  w.f64(config_.beta2);
  w.f64(config_.eps);
  w.f64(config_.weight_decay);
  w.u64(t_);
  w.u64(groups_.size());
  for (const auto& g : groups_) {
    w.u32(g.decay ? 1 : 0);
    w.u64(g.m.size());
    w.f64s(g.m);
    w.f64s(g.v);
  }
}

void AdamW::read(BinaryReader& r) {
  AdamWConfig cfg;
  cfg.lr = r.f64();
  cfg.beta1 = r.f64();
  cfg.beta2 = r.f64();
  cfg.eps = r.f64();
  cfg.weight_decay = r.f64();
  const auto t = r.u64();
  const auto n = r.u64();
  if (n != groups_.size()) throw CheckpointError("optimizer state has " + std::to_string(n) + " groups");
  std::vector<Group> groups;
  for (std::size_t i = 0; i < n; ++i) {
    const bool decay = r.u32() != 0;
    const auto size = r.u64();
    if (decay != groups_[i].decay || size != groups_[i].m.size()) {
      throw CheckpointError("optimizer group " + std::to_string(i) + " layout mismatch");
    }
    Group g{decay, r.f64s(size), r.f64s(size)};
    groups.push_back(std::move(g));
  }
  config_ = cfg;
  t_ = t;
  groups_ = std::move(groups);
}

}  // namespace vixen
