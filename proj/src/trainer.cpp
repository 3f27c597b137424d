#include "vixen/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"

namespace vixen {

using json = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool finite(const ProjectionGrad& g) {
  if (!g.weight.all_finite()) return false;
  for (double v : g.bias)
    if (!std::isfinite(v)) return false;
  return true;
}

json row_json(const EpochRow& r) {
  return {{"epoch", r.epoch},       {"phase", r.phase},           {"p_d", r.p_d},
          {"mean_loss", r.mean_loss}, {"examples", r.examples}, {"distractors", r.distractors},
          {"optimizer_steps", r.optimizer_steps}};
}

}  // namespace

std::vector<std::string> default_no_difference_pool() {
  return {"There is no difference between the images.",
          "The two images are identical.",
          "Nothing has changed.",
          "The images are the same.",
          "No change is visible between the two images.",
          "Both images show exactly the same scene.",
          "There are no differences.",
          "The second image is identical to the first."};
}

namespace {

std::vector<TrainingPair> sample_pointers(std::span<const PairExample* const> records, double p_d,
                                          const std::vector<std::string>& pool, Rng& rng) {
  if (!(p_d >= 0.0 && p_d <= 1.0)) throw ConfigError({"p_d must lie in [0, 1]"});
  if (p_d > 0.0 && pool.empty()) throw ConfigError({"no-difference pool is empty but p_d > 0"});
  std::vector<TrainingPair> out;
  out.reserve(records.size());
  for (const PairExample* r : records) {
    TrainingPair p;
    p.record = r;
    if (uniform01(rng) < p_d) {
      p.first = &r->source;
      p.second = &r->source;
      p.target = pool[uniform_index(rng, pool.size())];
      p.distractor = true;
    } else {
      p.first = &r->source;
      p.second = &r->edited;
      p.target = r->summary;
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<TrainingPair> sample_batch(std::span<const PairExample> records, double p_d,
                                       const std::vector<std::string>& pool, Rng& rng) {
  std::vector<const PairExample*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return sample_pointers(ptrs, p_d, pool, rng);
}

std::size_t TrainConfig::total_epochs() const noexcept {
  std::size_t n = 0;
  for (const auto& p : phases) n += p.epochs;
  return n;
}

std::vector<double> TrainConfig::pd_sequence() const {
  std::vector<double> out;
  for (const auto& p : phases) out.insert(out.end(), p.epochs, p.p_d);
  return out;
}

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (phases.empty()) out.emplace_back("schedule has no phases");
  bool needs_pool = false;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const auto& p = phases[i];
    const std::string where = "phase " + std::to_string(i + 1);
    if (p.epochs == 0) out.push_back(where + ": epochs must be positive");
    if (!(p.p_d >= 0.0 && p.p_d <= 1.0)) out.push_back(where + ": p_d must lie in [0, 1]");
    if (p.p_d > 0.0) needs_pool = true;
  }
  const auto& o = optimizer;
  if (!(o.lr > 0.0) || !std::isfinite(o.lr)) out.emplace_back("lr must be positive");
  if (!(o.beta1 > 0.0 && o.beta1 < 1.0)) out.emplace_back("beta1 must lie in (0, 1)");
  if (!(o.beta2 > 0.0 && o.beta2 < 1.0)) out.emplace_back("beta2 must lie in (0, 1)");
  if (!(o.eps > 0.0)) out.emplace_back("eps must be positive");
  if (!(o.weight_decay >= 0.0) || !std::isfinite(o.weight_decay)) out.emplace_back("weight_decay must be >= 0");
  if (micro_batch == 0) out.emplace_back("micro_batch must be positive");
  if (accumulation_steps == 0) out.emplace_back("accumulation_steps must be positive");
  if (checkpoint_every == 0) out.emplace_back("checkpoint_every must be positive");
  if (needs_pool && no_difference_pool.empty()) out.emplace_back("no_difference_pool is empty but p_d > 0");
  return out;
}

json to_json(const TrainConfig& c) {
  json phases = json::array();
  for (const auto& p : c.phases) phases.push_back({{"epochs", p.epochs}, {"p_d", p.p_d}});
  return {{"phases", phases},
          {"lr", c.optimizer.lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"micro_batch", c.micro_batch},
          {"accumulation_steps", c.accumulation_steps},
          {"effective_batch", c.effective_batch()},
          {"seed", c.seed},
          {"no_difference_pool", c.no_difference_pool},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"train config must be a JSON object"});
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const json& v = it.value();
    try {
      if (key == "phases") {
        c.phases.clear();
        for (const auto& p : v) c.phases.push_back({p.at("epochs").get<std::size_t>(), p.at("p_d").get<double>()});
      } else if (key == "lr") {
        c.optimizer.lr = v.get<double>();
      } else if (key == "beta1") {
        c.optimizer.beta1 = v.get<double>();
      } else if (key == "beta2") {
        c.optimizer.beta2 = v.get<double>();
      } else if (key == "eps") {
        c.optimizer.eps = v.get<double>();
      } else if (key == "weight_decay") {
        c.optimizer.weight_decay = v.get<double>();
      } else if (key == "micro_batch") {
        c.micro_batch = v.get<std::size_t>();
      } else if (key == "accumulation_steps") {
        c.accumulation_steps = v.get<std::size_t>();
      } else if (key == "effective_batch") {
        // checked below, after both factors are known
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else if (key == "no_difference_pool") {
        c.no_difference_pool = v.get<std::vector<std::string>>();
      } else if (key == "checkpoint_every") {
        c.checkpoint_every = v.get<std::size_t>();
      } else {
        problems.push_back("unknown train config key '" + key + "'");
      }
    } catch (const json::exception& e) {
      problems.push_back("train config key '" + key + "': " + e.what());
    }
  }
  if (j.contains("effective_batch") && j["effective_batch"].is_number_unsigned() &&
      j["effective_batch"].get<std::size_t>() != c.effective_batch()) {
    problems.push_back("effective_batch " + j["effective_batch"].dump() + " != micro_batch * accumulation_steps = " +
                       std::to_string(c.effective_batch()));
  }
  auto more = c.problems();
  problems.insert(problems.end(), more.begin(), more.end());
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

double pair_loss_and_grad(const ModelBundle& bundle, const FeatureMap& first, const FeatureMap& second,
                          std::string_view target, ProjectionGrad& grad) {
  const Matrix p1 = project(first, bundle.projection);
  const Matrix p2 = project(second, bundle.projection);
  const SoftPrompt visual = fuse(p1, p2, bundle.fusion);
  const SoftPrompt prompt = assemble_prompt(visual, bundle.prefix, bundle.tokenizer, bundle.lm->embedding_table());
  const auto ids = target_ids(bundle, target);
  const LossWithGrad lg = caption_loss_with_grad(*bundle.lm, prompt, ids);
  if (!std::isfinite(lg.loss)) return lg.loss;
  const FuseGrad g = fuse_backward(p1, p2, bundle.fusion, row_slice(lg.d_prompt, 0, visual.rows()));
  project_backward(first, g.first, grad);
  project_backward(second, g.second, grad);
  return lg.loss;
}

Trainer::Trainer(ModelBundle& bundle, TrainConfig config, std::vector<PairExample> data)
    : bundle_(bundle), config_(std::move(config)), data_(std::move(data)), optimizer_(config_.optimizer),
      rng_(config_.seed) {
  auto problems = config_.problems();
  if (data_.empty()) problems.emplace_back("training data is empty");
  if (!problems.empty()) throw ConfigError(std::move(problems));
  bundle_.check();
  frozen_checksum_ = bundle_.frozen_checksum();
  optimizer_.add_group(bundle_.projection.weight.size(), true);
  optimizer_.add_group(bundle_.projection.bias.size(), false);
  pending_ = ProjectionGrad(bundle_.projection.in_width(), bundle_.projection.out_width());
  fingerprint_ = compute_fingerprint();
}

const FeatureMap& Trainer::features(const Image* image) {
  auto it = feature_cache_.find(image);
  if (it == feature_cache_.end()) it = feature_cache_.emplace(image, bundle_.encoder->encode(*image)).first;
  return it->second;
}

double Trainer::evaluate_loss(const TrainingPair& pair) {
  const SoftPrompt prompt = build_prompt(bundle_, features(pair.first), features(pair.second));
  const auto ids = target_ids(bundle_, pair.target);
  return caption_loss(*bundle_.lm, prompt, ids);
}

StepResult Trainer::train_step(std::span<const TrainingPair> batch) {
  StepResult result;
  if (batch.empty()) return result;
  ProjectionGrad local(bundle_.projection.in_width(), bundle_.projection.out_width());
  double total = 0.0;
  for (const auto& pair : batch) {
    const double loss = pair_loss_and_grad(bundle_, features(pair.first), features(pair.second), pair.target, local);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "non-finite loss " << loss << " on record '" << (pair.record ? pair.record->id : "?") << "'"
          << (pair.distractor ? " (distractor)" : "") << " after " << optimizer_.steps() << " optimizer steps";
      throw TrainingError(msg.str());
    }
    total += loss;
  }
  if (!finite(local)) throw TrainingError("non-finite projection gradient; step aborted");

  pending_ += local;
  pending_examples_ += batch.size();
  ++pending_micro_batches_;
  result.loss = total / static_cast<double>(batch.size());
  if (pending_micro_batches_ == config_.accumulation_steps) {
    apply_step();
    result.applied = true;
  }
  return result;
}

bool Trainer::flush() {
  if (pending_micro_batches_ == 0) return false;
  apply_step();
  return true;
}

void Trainer::apply_step() {
  pending_ *= 1.0 / static_cast<double>(pending_examples_);
  auto& proj = bundle_.projection;
  const std::span<double> params[] = {proj.weight.values(), proj.bias};
  const std::span<const double> grads[] = {pending_.weight.values(), pending_.bias};
  optimizer_.step(params, grads);
  pending_ = ProjectionGrad(proj.in_width(), proj.out_width());
  pending_examples_ = 0;
  pending_micro_batches_ = 0;
  check_frozen();
}

void Trainer::check_frozen() const {
  const auto now = bundle_.frozen_checksum();
  if (now != frozen_checksum_) {
    throw TrainingError("frozen encoder/LM parameters changed during training (checksum " + hex64(frozen_checksum_) +
                        " -> " + hex64(now) + ")");
  }
}

std::size_t Trainer::phase_of(std::size_t epoch_index) const {
  std::size_t end = 0;
  for (std::size_t i = 0; i < config_.phases.size(); ++i) {
    end += config_.phases[i].epochs;
    if (epoch_index < end) return i;
  }
  throw TrainingError("epoch " + std::to_string(epoch_index + 1) + " is past the end of the schedule");
}

EpochRow Trainer::run_epoch() {
  const std::size_t index = curve_.size();
  const std::size_t phase = phase_of(index);
  const double p_d = config_.phases[phase].p_d;

  std::vector<const PairExample*> order;
  order.reserve(data_.size());
  for (const auto& r : data_) order.push_back(&r);
  shuffle(order, rng_);

  EpochRow row;
  row.epoch = index + 1;
  row.phase = phase + 1;
  row.p_d = p_d;
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config_.micro_batch) {
    const std::size_t n = std::min(config_.micro_batch, order.size() - start);
    const auto batch = sample_pointers(std::span(order).subspan(start, n), p_d, config_.no_difference_pool, rng_);
    for (const auto& p : batch) row.distractors += p.distractor ? 1 : 0;
    const StepResult r = train_step(batch);
    total += r.loss * static_cast<double>(n);
    row.examples += n;
  }
  flush();
  row.mean_loss = total / static_cast<double>(row.examples);
  row.optimizer_steps = optimizer_.steps();
  curve_.push_back(row);
  return row;
}

std::uint64_t Trainer::compute_fingerprint() const {
  std::uint64_t h = fnv(to_json(config_).dump());
  h = fnv(to_string(bundle_.fusion), h);
  h = fnv(bundle_.prefix, h);
  h = fnv(hex64(frozen_checksum_), h);
  h = fnv(hex64(checksum(bundle_.projection.weight)) + std::to_string(bundle_.projection.in_width()), h);
  for (const auto& r : data_) {
    h = fnv(r.id, h);
    h = fnv(r.summary, h);
    h = checksum(r.source.pixels, h);
    h = checksum(r.edited.pixels, h);
  }
  return h;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  BinaryWriter w(kCheckpointMagic, kCheckpointVersion);
  w.u64(fingerprint_);
  w.u64(curve_.size());
  w.bytes(serialize_projection(bundle_.projection));
  optimizer_.write(w);
  w.bytes(serialize_rng(rng_));
  w.u64(pending_examples_);
  w.u64(pending_micro_batches_);
  w.f64s(pending_.weight.values());
  w.f64s(pending_.bias);
  w.u64(curve_.size());
  for (const auto& r : curve_) {
    w.u64(r.epoch);
    w.u64(r.phase);
    w.f64(r.p_d);
    w.f64(r.mean_loss);
    w.u64(r.examples);
    w.u64(r.distractors);
    w.u64(r.optimizer_steps);
  }
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, std::move(w).finish());
}

void Trainer::load_checkpoint(const std::filesystem::path& path, bool allow_config_mismatch) {
  BinaryReader r(read_file(path), kCheckpointMagic, kCheckpointVersion, "checkpoint " + path.string());
  const auto fp = r.u64();
  if (fp != fingerprint_ && !allow_config_mismatch) {
    throw CheckpointError("checkpoint " + path.string() + " was written under a different configuration (" +
                          hex64(fp) + " != " + hex64(fingerprint_) + "); resume with the override to proceed");
  }
  const auto epochs = r.u64();
  ProjectionLayer projection = deserialize_projection(r.bytes());
  if (projection.in_width() != bundle_.projection.in_width() ||
      projection.out_width() != bundle_.projection.out_width()) {
    throw CheckpointError("checkpoint projection is " + shape_string(projection.weight) + ", bundle expects " +
                          shape_string(bundle_.projection.weight));
  }
  AdamW optimizer = optimizer_;
  optimizer.read(r);
  Rng rng = deserialize_rng(r.bytes());
  const auto pending_examples = r.u64();
  const auto pending_micro = r.u64();
  ProjectionGrad pending;
  pending.weight = Matrix(projection.out_width(), projection.in_width(), r.f64s(projection.weight.size()));
  pending.bias = r.f64s(projection.bias.size());
  const auto rows = r.u64();
  if (rows != epochs) throw CheckpointError("checkpoint " + path.string() + ": loss curve length mismatch");
  std::vector<EpochRow> curve;
  for (std::uint64_t i = 0; i < rows; ++i) {
    EpochRow row;
    row.epoch = r.u64();
    row.phase = r.u64();
    row.p_d = r.f64();
    row.mean_loss = r.f64();
    row.examples = r.u64();
    row.distractors = r.u64();
    row.optimizer_steps = r.u64();
    curve.push_back(row);
  }
  r.expect_end();
  if (epochs > config_.total_epochs()) {
    throw CheckpointError("checkpoint " + path.string() + " is at epoch " + std::to_string(epochs) +
                          ", past the configured schedule of " + std::to_string(config_.total_epochs()));
  }

  bundle_.projection = std::move(projection);
  optimizer_ = std::move(optimizer);
  rng_ = rng;
  pending_ = std::move(pending);
  pending_examples_ = pending_examples;
  pending_micro_batches_ = pending_micro;
  curve_ = std::move(curve);
}

json Trainer::manifest() const {
  json m;
  m["tool"] = "vixen";
  m["manifest_version"] = 1;
  m["fingerprint"] = hex64(fingerprint_);
  m["train_config"] = to_json(config_);
  const auto& o = config_.optimizer;
  m["optimizer"] = {{"name", "AdamW"},
                    {"lr", o.lr},
                    {"betas", {o.beta1, o.beta2}},
                    {"eps", o.eps},
                    {"weight_decay", o.weight_decay},
                    {"decayed_parameters", {"projection.weight"}},
                    {"steps", optimizer_.steps()}};
  json phases = json::array();
  for (const auto& p : config_.phases) phases.push_back({{"epochs", p.epochs}, {"p_d", p.p_d}});
  m["schedule"] = {{"phases", phases},
                   {"total_epochs", config_.total_epochs()},
                   {"pd_sequence", config_.pd_sequence()},
                   {"micro_batch", config_.micro_batch},
                   {"accumulation_steps", config_.accumulation_steps},
                   {"effective_batch", config_.effective_batch()}};
  const auto contract = bundle_.encoder->describe();
  m["bundle"] = {{"encoder", bundle_.encoder->name()},
                 {"encoder_h", contract.h},
                 {"encoder_k", contract.k_formula()},
                 {"lm", bundle_.lm->name()},
                 {"lm_width", bundle_.lm->embed_width()},
                 {"vocab_size", bundle_.lm->vocab_size()},
                 {"fusion", std::string(to_string(bundle_.fusion))},
                 {"prefix", bundle_.prefix},
                 {"frozen_checksum", hex64(frozen_checksum_)}};
  m["data"] = {{"records", data_.size()}};
  json epochs = json::array();
  for (const auto& r : curve_) epochs.push_back(row_json(r));
  m["epochs"] = epochs;
  m["executed_pd_sequence"] = json::array();
  for (const auto& r : curve_) m["executed_pd_sequence"].push_back(r.p_d);
  m["projection_checksum"] = hex64(bundle_.projection.checksum());
  m["frozen_checksum_now"] = hex64(bundle_.frozen_checksum());
  return m;
}

RunResult Trainer::run(const RunOptions& options) {
  if (options.resume_from) load_checkpoint(*options.resume_from, options.allow_config_mismatch);
  RunResult result;
  const auto ckpt_dir = options.out_dir / "checkpoints";
  std::filesystem::create_directories(ckpt_dir);
  const std::size_t total = config_.total_epochs();
  const std::size_t stop = std::min(total, options.stop_after_epoch.value_or(total));
  while (epochs_done() < stop) {
    run_epoch();
    const std::size_t done = epochs_done();
    if (done % config_.checkpoint_every == 0 || done == stop) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.vxtr", done);
      save_checkpoint(ckpt_dir / name);
      result.checkpoints.push_back(ckpt_dir / name);
    }
    write_loss_curve_csv(options.out_dir / "loss_curve.csv", curve_);
  }
  write_loss_curve_csv(options.out_dir / "loss_curve.csv", curve_);
  save_projection(options.out_dir / "projection.vxpj", bundle_.projection);

  json m = manifest();
  json files = json::array();
  for (const auto& c : result.checkpoints) files.push_back(std::filesystem::relative(c, options.out_dir).string());
  m["checkpoints"] = files;
  if (options.resume_from) m["resumed_from"] = options.resume_from->string();
  m["run"] = options.extra;
  result.manifest = options.out_dir / "run_manifest.json";
  write_file_atomic(result.manifest, m.dump(2) + "\n");
  result.curve = curve_;
  result.projection_checksum = bundle_.projection.checksum();
  return result;
}

void write_loss_curve_csv(const std::filesystem::path& path, std::span<const EpochRow> curve) {
  std::ostringstream out;
  out << "epoch,phase,p_d,mean_loss,examples,distractors,optimizer_steps\n";
  out.precision(17);
  for (const auto& r : curve) {
    out << r.epoch << ',' << r.phase << ',' << r.p_d << ',' << r.mean_loss << ',' << r.examples << ','
        << r.distractors << ',' << r.optimizer_steps << '\n';
  }
  write_file_atomic(path, out.str());
}

}  // namespace vixen
