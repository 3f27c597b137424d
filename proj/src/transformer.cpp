#include "vixen/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"
#include "vixen/optim.hpp"
#include "vixen/random.hpp"

namespace vixen {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

Matrix row_vector(std::size_t n, double fill) { return Matrix(1, n, fill); }

void init_uniform(Matrix& m, Rng& rng, double stddev) {
  const double a = std::sqrt(3.0) * stddev;
  for (double& v : m.values()) v = uniform(rng, -a, a);
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
  const std::size_t n = x.cols();
  Matrix out(x.rows(), n);
  cache.normalized = Matrix(x.rows(), n);
  cache.inv_std.assign(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[i] = inv;
    auto xh = cache.normalized.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (r[j] - mean) * inv;
      o[j] = xh[j] * gain(0, j) + bias(0, j);
    }
  }
  return out;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix* d_gain,
                           Matrix* d_bias) {
  const std::size_t n = dy.cols();
  Matrix dx(dy.rows(), n);
  std::vector<double> dxh(n);
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    auto g = dy.row(i);
    auto xh = cache.normalized.row(i);
    double mean_dxh = 0.0;
    double mean_dxh_xh = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (d_gain) (*d_gain)(0, j) += g[j] * xh[j];
      if (d_bias) (*d_bias)(0, j) += g[j];
      dxh[j] = g[j] * gain(0, j);
      mean_dxh += dxh[j];
      mean_dxh_xh += dxh[j] * xh[j];
    }
    mean_dxh /= static_cast<double>(n);
    mean_dxh_xh /= static_cast<double>(n);
    auto out = dx.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = cache.inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
    }
  }
  return dx;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

void add_bias(Matrix& m, const Matrix& bias) { add_row_vector(m, bias.row(0)); }

void accumulate_bias_grad(Matrix* grad, const Matrix& d) {
  if (!grad) return;
  const auto s = column_sums(d);
  for (std::size_t j = 0; j < s.size(); ++j) (*grad)(0, j) += s[j];
}

}  // namespace

TransformerParams TransformerParams::zeros(const TransformerConfig& cfg) {
  const std::size_t e = cfg.width;
  const std::size_t hidden = cfg.mlp_ratio * e;
  TransformerParams p;
  p.token_embedding = Matrix(cfg.vocab, e);
  p.position_embedding = Matrix(cfg.max_positions, e);
  p.blocks.resize(cfg.layers);
  for (auto& b : p.blocks) {
    b.ln1_gain = row_vector(e, 0.0);
    b.ln1_bias = row_vector(e, 0.0);
    b.wq = Matrix(e, e);
    b.wk = Matrix(e, e);
    b.wv = Matrix(e, e);
    b.wo = Matrix(e, e);
    b.ln2_gain = row_vector(e, 0.0);
    b.ln2_bias = row_vector(e, 0.0);
    b.w1 = Matrix(e, hidden);
    b.b1 = row_vector(hidden, 0.0);
    b.w2 = Matrix(hidden, e);
    b.b2 = row_vector(e, 0.0);
  }
  p.lnf_gain = row_vector(e, 0.0);
  p.lnf_bias = row_vector(e, 0.0);
  p.w_out = Matrix(cfg.vocab, e);
  p.b_out = row_vector(cfg.vocab, 0.0);
  return p;
}

std::vector<Matrix*> TransformerParams::tensors() {
  std::vector<Matrix*> out = {&token_embedding, &position_embedding};
  for (auto& b : blocks) {
    for (Matrix* m : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain, &b.ln2_bias, &b.w1,
                      &b.b1, &b.w2, &b.b2})
      out.push_back(m);
  }
  for (Matrix* m : {&lnf_gain, &lnf_bias, &w_out, &b_out}) out.push_back(m);
  return out;
}

std::vector<const Matrix*> TransformerParams::tensors() const {
  auto mut = const_cast<TransformerParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

std::vector<bool> TransformerParams::decay_mask() const {
  std::vector<bool> mask = {false, false};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    for (bool d : {false, false, true, true, true, true, false, false, true, false, true, false})
      mask.push_back(d);
  }
  for (bool d : {false, false, true, false}) mask.push_back(d);
  return mask;
}

TinyTransformer::TinyTransformer(const TransformerConfig& cfg) : cfg_(cfg) {
  check_config();
  params_ = TransformerParams::zeros(cfg_);
  Rng rng(cfg_.seed);
  const double e = static_cast<double>(cfg_.width);
  const double hidden = static_cast<double>(cfg_.mlp_ratio * cfg_.width);
  const double depth_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.layers));
  init_uniform(params_.token_embedding, rng, 0.1);
  init_uniform(params_.position_embedding, rng, 0.1);
  for (auto& b : params_.blocks) {
    b.ln1_gain.fill(1.0);
    b.ln2_gain.fill(1.0);
    init_uniform(b.wq, rng, 1.0 / std::sqrt(e));
    init_uniform(b.wk, rng, 1.0 / std::sqrt(e));
    init_uniform(b.wv, rng, 1.0 / std::sqrt(e));
    init_uniform(b.wo, rng, depth_scale / std::sqrt(e));
    init_uniform(b.w1, rng, 1.0 / std::sqrt(e));
    init_uniform(b.w2, rng, depth_scale / std::sqrt(hidden));
  }
  params_.lnf_gain.fill(1.0);
  init_uniform(params_.w_out, rng, 1.0 / std::sqrt(e));
}

TinyTransformer::TinyTransformer(const TransformerConfig& cfg, TransformerParams params)
    : cfg_(cfg), params_(std::move(params)) {
  check_config();
  auto expected = TransformerParams::zeros(cfg_);
  auto want = expected.tensors();
  auto got = params_.tensors();
  if (want.size() != got.size()) throw DimensionError("TinyTransformer: parameter count mismatch");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i]->rows() != got[i]->rows() || want[i]->cols() != got[i]->cols()) {
      throw DimensionError("TinyTransformer: tensor " + std::to_string(i) + " is " + shape_string(*got[i]) +
                           ", expected " + shape_string(*want[i]));
    }
  }
}

void TinyTransformer::check_config() const {
  std::vector<std::string> problems;
  if (cfg_.vocab == 0) problems.emplace_back("vocab must be positive");
  if (cfg_.width == 0) problems.emplace_back("width must be positive");
  if (cfg_.heads == 0 || (cfg_.width % std::max<std::size_t>(cfg_.heads, 1)) != 0)
    problems.emplace_back("heads must divide width");
  if (cfg_.max_positions == 0) problems.emplace_back("max_positions must be positive");
  if (cfg_.mlp_ratio == 0) problems.emplace_back("mlp_ratio must be positive");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

Matrix TinyTransformer::forward(const Matrix& inputs, Cache& cache) const {
  const std::size_t m = inputs.rows();
  const std::size_t e = cfg_.width;
  if (inputs.cols() != e) {
    throw DimensionError("TinyTransformer: input width " + std::to_string(inputs.cols()) + " != " +
                         std::to_string(e));
  }
  if (m == 0) throw DimensionError("TinyTransformer: empty input sequence");
  if (m > cfg_.max_positions) {
    throw DimensionError("TinyTransformer: sequence of " + std::to_string(m) + " exceeds max_positions " +
                         std::to_string(cfg_.max_positions));
  }
  const std::size_t heads = cfg_.heads;
  const std::size_t dh = e / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x = inputs + row_slice(params_.position_embedding, 0, m);
  cache.blocks.assign(params_.blocks.size(), {});
  for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
    const auto& p = params_.blocks[l];
    auto& c = cache.blocks[l];
    c.x_in = x;
    c.a = layer_norm(x, p.ln1_gain, p.ln1_bias, c.ln1);
    c.q = matmul(c.a, p.wq);
    c.k = matmul(c.a, p.wk);
    c.v = matmul(c.a, p.wv);
    c.attn = Matrix(m, e);
    c.probs.assign(heads, Matrix(m, m));
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      Matrix& probs = c.probs[h];
      for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += c.q(i, off + d) * c.k(j, off + d);
          probs(i, j) = s * scale;
          mx = std::max(mx, probs(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          probs(i, j) = std::exp(probs(i, j) - mx);
          sum += probs(i, j);
        }
        for (std::size_t j = 0; j <= i; ++j) probs(i, j) /= sum;
        for (std::size_t j = 0; j <= i; ++j) {
          const double pij = probs(i, j);
          for (std::size_t d = 0; d < dh; ++d) c.attn(i, off + d) += pij * c.v(j, off + d);
        }
      }
    }
    x = x + matmul(c.attn, p.wo);
    c.x_mid = x;
    c.b = layer_norm(x, p.ln2_gain, p.ln2_bias, c.ln2);
    c.u = matmul(c.b, p.w1);
    add_bias(c.u, p.b1);
    c.g = c.u;
    for (double& v : c.g.values()) v = gelu(v);
    Matrix mlp = matmul(c.g, p.w2);
    add_bias(mlp, p.b2);
    x = x + mlp;
  }
  cache.x_final = x;
  cache.z = layer_norm(x, params_.lnf_gain, params_.lnf_bias, cache.lnf);
  Matrix out = matmul_nt(cache.z, params_.w_out);
  add_bias(out, params_.b_out);
  return out;
}

Matrix TinyTransformer::backward(const Cache& cache, const Matrix& d_logits, TransformerParams* grads) const {
  const std::size_t m = cache.z.rows();
  const std::size_t e = cfg_.width;
  if (d_logits.rows() != m || d_logits.cols() != cfg_.vocab) {
    throw DimensionError("TinyTransformer::backward: d_logits is " + shape_string(d_logits));
  }
  const std::size_t heads = cfg_.heads;
  const std::size_t dh = e / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  if (grads) {
    grads->w_out += matmul_tn(d_logits, cache.z);
    accumulate_bias_grad(&grads->b_out, d_logits);
  }
  Matrix dz = matmul(d_logits, params_.w_out);
  Matrix dx = layer_norm_backward(dz, params_.lnf_gain, cache.lnf, grads ? &grads->lnf_gain : nullptr,
                                  grads ? &grads->lnf_bias : nullptr);

  for (std::size_t l = params_.blocks.size(); l-- > 0;) {
    const auto& p = params_.blocks[l];
    const auto& c = cache.blocks[l];
    auto* g = grads ? &grads->blocks[l] : nullptr;

    // MLP branch: x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
    if (g) {
      g->w2 += matmul_tn(c.g, dx);
      accumulate_bias_grad(&g->b2, dx);
    }
    Matrix du = matmul_nt(dx, p.w2);
    for (std::size_t i = 0; i < du.size(); ++i) du.values()[i] *= gelu_grad(c.u.values()[i]);
    if (g) {
      g->w1 += matmul_tn(c.b, du);
      accumulate_bias_grad(&g->b1, du);
    }
    Matrix db = matmul_nt(du, p.w1);
    dx += layer_norm_backward(db, p.ln2_gain, c.ln2, g ? &g->ln2_gain : nullptr, g ? &g->ln2_bias : nullptr);

    // Attention branch: x_mid = x_in + Attn(LN1(x_in)) Wo
    if (g) g->wo += matmul_tn(c.attn, dx);
    Matrix d_attn = matmul_nt(dx, p.wo);
    Matrix dq(m, e), dk(m, e), dv(m, e);
    std::vector<double> dp(m);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const Matrix& probs = c.probs[h];
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += d_attn(i, off + d) * c.v(j, off + d);
          dp[j] = s;
          dot += probs(i, j) * s;
          for (std::size_t d = 0; d < dh; ++d) dv(j, off + d) += probs(i, j) * d_attn(i, off + d);
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = probs(i, j) * (dp[j] - dot) * scale;
          for (std::size_t d = 0; d < dh; ++d) {
            dq(i, off + d) += ds * c.k(j, off + d);
            dk(j, off + d) += ds * c.q(i, off + d);
          }
        }
      }
    }
    if (g) {
      g->wq += matmul_tn(c.a, dq);
      g->wk += matmul_tn(c.a, dk);
      g->wv += matmul_tn(c.a, dv);
    }
    Matrix da = matmul_nt(dq, p.wq);
    da += matmul_nt(dk, p.wk);
    da += matmul_nt(dv, p.wv);
    dx += layer_norm_backward(da, p.ln1_gain, c.ln1, g ? &g->ln1_gain : nullptr, g ? &g->ln1_bias : nullptr);
  }

  if (grads) {
    for (std::size_t i = 0; i < m; ++i) {
      auto src = dx.row(i);
      auto dst = grads->position_embedding.row(i);
      for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
    }
  }
  return dx;
}

Matrix TinyTransformer::logits(const Matrix& inputs) const {
  Cache cache;
  return forward(inputs, cache);
}

Matrix TinyTransformer::input_gradient(const Matrix& inputs, const Matrix& d_logits) const {
  Cache cache;
  forward(inputs, cache);
  return backward(cache, d_logits, nullptr);
}

std::uint64_t TinyTransformer::parameter_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Matrix* t : params_.tensors()) h = checksum(t->values(), h);
  return h;
}

namespace {
constexpr std::string_view kModelMagic = "VXLM";
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_transformer(const std::filesystem::path& path, const TinyTransformer& model) {
  const auto& cfg = model.config();
  BinaryWriter w(kModelMagic, kModelVersion);
  for (auto v : {cfg.vocab, cfg.width, cfg.layers, cfg.heads, cfg.max_positions, cfg.mlp_ratio})
    w.u64(v);
  w.u64(cfg.seed);
  for (const Matrix* t : model.params().tensors()) {
    w.u64(t->rows());
    w.u64(t->cols());
    w.f64s(t->values());
  }
  write_file_atomic(path, std::move(w).finish());
}

TinyTransformer load_transformer(const std::filesystem::path& path) {
  BinaryReader r(read_file(path), kModelMagic, kModelVersion, "model file " + path.string());
  TransformerConfig cfg;
  cfg.vocab = r.u64();
  cfg.width = r.u64();
  cfg.layers = r.u64();
  cfg.heads = r.u64();
  cfg.max_positions = r.u64();
  cfg.mlp_ratio = r.u64();
  cfg.seed = r.u64();
  if (cfg.layers > 1024 || cfg.width > (1u << 16)) throw CheckpointError("model file: implausible config");
  auto params = TransformerParams::zeros(cfg);
  for (Matrix* t : params.tensors()) {
    const auto rows = r.u64();
    const auto cols = r.u64();
    if (rows != t->rows() || cols != t->cols()) throw CheckpointError("model file: tensor shape mismatch");
    *t = Matrix(rows, cols, r.f64s(rows * cols));
  }
  r.expect_end();
  return TinyTransformer(cfg, std::move(params));
}

PretrainReport pretrain_prompted_lm(TinyTransformer& model, const std::vector<PromptedExample>& examples,
                                    const PretrainOptions& options) {
  if (examples.empty()) throw ConfigError({"pretrain_prompted_lm: no examples"});
  const std::size_t e = model.embed_width();
  Rng rng(options.seed);

  std::vector<Matrix> prompts;
  for (const auto& ex : examples) {
    if (ex.target.empty()) throw ConfigError({"pretrain_prompted_lm: empty target"});
    if (ex.prompt_rows + ex.context.size() == 0) {
      throw ConfigError({"pretrain_prompted_lm: example without conditioning rows"});
    }
    Matrix p(ex.prompt_rows, e);
    for (double& v : p.values()) v = uniform(rng, -0.5, 0.5);
    prompts.push_back(std::move(p));
  }

  auto& params = model.mutable_params();
  auto tensors = params.tensors();
  const auto mask = params.decay_mask();
  AdamW opt(AdamWConfig{options.lr, 0.9, 0.98, 1e-8, 0.0});
  for (std::size_t i = 0; i < tensors.size(); ++i) opt.add_group(tensors[i]->size(), mask[i]);
  for (const auto& p : prompts) opt.add_group(p.size(), false);

  PretrainReport report;
  for (std::size_t step = 0; step < options.steps; ++step) {
    auto grads = TransformerParams::zeros(model.config());
    std::vector<Matrix> prompt_grads;
    double total = 0.0;
    for (std::size_t n = 0; n < examples.size(); ++n) {
      const auto& ex = examples[n];
      std::vector<int> fed = ex.context;
      fed.insert(fed.end(), ex.target.begin(), ex.target.end() - 1);
      Matrix text(fed.size(), e);
      for (std::size_t i = 0; i < fed.size(); ++i) {
        auto src = params.token_embedding.row(static_cast<std::size_t>(fed[i]));
        std::copy(src.begin(), src.end(), text.row(i).begin());
      }
      Matrix inputs = vstack(prompts[n], text);

      TinyTransformer::Cache cache;
      Matrix logits = model.forward(inputs, cache);
      Matrix d_logits(logits.rows(), logits.cols());
      const std::size_t first = ex.prompt_rows + ex.context.size() - 1;
      for (std::size_t t = 0; t < ex.target.size(); ++t) {
        const std::size_t row = first + t;
        auto lp = log_softmax(logits.row(row));
        const auto y = static_cast<std::size_t>(ex.target[t]);
        total -= lp[y];
        auto d = d_logits.row(row);
        for (std::size_t v = 0; v < lp.size(); ++v) d[v] = std::exp(lp[v]);
        d[y] -= 1.0;
      }
      Matrix d_inputs = model.backward(cache, d_logits, &grads);
      for (std::size_t i = 0; i < fed.size(); ++i) {
        auto src = d_inputs.row(ex.prompt_rows + i);
        auto dst = grads.token_embedding.row(static_cast<std::size_t>(fed[i]));
        for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
      }
      prompt_grads.push_back(row_slice(d_inputs, 0, ex.prompt_rows));
    }
    const double mean_loss = total / static_cast<double>(examples.size());
    if (step == 0) report.initial_loss = mean_loss;
    report.final_loss = mean_loss;

    const double inv_n = 1.0 / static_cast<double>(examples.size());
    auto grad_tensors = grads.tensors();
    std::vector<std::span<double>> ps;
    std::vector<std::span<const double>> gs;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      *grad_tensors[i] *= inv_n;
      ps.push_back(tensors[i]->values());
      gs.push_back(grad_tensors[i]->values());
    }
    for (std::size_t n = 0; n < prompts.size(); ++n) {
      prompt_grads[n] *= inv_n;
      ps.push_back(prompts[n].values());
      gs.push_back(prompt_grads[n].values());
    }
    opt.step(ps, gs);
  }
  return report;
}

}  // namespace vixen
