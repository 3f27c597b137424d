#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vixen/adapters.hpp"
#include "vixen/binary_io.hpp"
#include "vixen/bundle.hpp"
#include "vixen/dataset.hpp"
#include "vixen/error.hpp"
#include "vixen/evaluate.hpp"
#include "vixen/image.hpp"
#include "vixen/synth.hpp"
#include "vixen/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace vixen;

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitImage = 3;
constexpr int kExitCheckpoint = 4;
constexpr int kExitTraining = 5;
constexpr int kExitAdapter = 6;

// A subcommand plus the values bound to its options, so the resolved
// configuration can be echoed without going back through CLI11.
struct Command {
  CLI::App* app = nullptr;
  std::string section;  // "train", "dataset.filter", ...
  std::vector<std::pair<std::string, std::function<json()>>> fields;
  std::function<void(const Command&)> run;

  template <class T>
  CLI::Option* option(const std::string& name, T& value, const std::string& help) {
    fields.emplace_back(name, [&value] { return json(value); });
    return app->add_option("--" + name, value, help)->capture_default_str();
  }
  CLI::Option* flag(const std::string& name, bool& value, const std::string& help) {
    fields.emplace_back(name, [&value] { return json(value); });
    return app->add_flag("--" + name, value, help);
  }

  json resolved() const {
    json j = json::object();
    for (const auto& [name, get] : fields) j[name] = get();
    return j;
  }
};

std::string toml_text(const std::string& section, const json& values) {
  std::ostringstream out;
  out << "[" << section << "]\n";
  for (const auto& [key, value] : values.items()) {
    // An empty list can't be told apart from "use the default" on the way back in.
    if (value.is_array() && value.empty()) continue;
    out << key << " = " << value.dump() << "\n";
  }
  return out.str();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_uri(const std::string& ref) { return ref.find("://") != std::string::npos; }

// Bookkeeping shared by every command: the output directory, the files it
// read and wrote, and the run manifest tying them to the resolved config.
class Run {
 public:
  Run(const Command& cmd, const std::string& out) : cmd_(cmd), out_(out) {}

  const fs::path& out() const { return out_; }

  void input(const fs::path& path) {
    if (path.empty() || is_uri(path.string())) return;
    inputs_.push_back(path);
  }

  // Creates the output directory after checking no output would land on an input.
  void prepare(const std::vector<std::string>& files) {
    std::vector<std::string> problems;
    for (const auto& f : files) {
      const fs::path target = out_ / f;
      for (const auto& in : inputs_) {
        std::error_code ec;
        if (fs::exists(target) && fs::equivalent(target, in, ec)) {
          problems.push_back("output '" + target.string() + "' is the input file '" + in.string() + "'");
        }
      }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec || !fs::is_directory(out_)) {
      throw ConfigError({"output directory '" + out_.string() + "' can't be created: " + ec.message()});
    }
  }

  void output(const std::string& relative) { outputs_.push_back(relative); }

  json manifest(const json& result) const {
    json m;
    m["tool"] = "vixen";
    m["manifest_version"] = 1;
    m["command"] = cmd_.section;
    m["config"] = cmd_.resolved();
    m["resolved_config"] = "resolved_config.toml";
    json ins = json::array();
    for (const auto& in : inputs_) {
      json e{{"path", in.string()}};
      if (fs::is_regular_file(in)) {
        const std::string bytes = read_file(in);
        e["bytes"] = bytes.size();
        e["fnv1a64"] = hex64(fnv1a(bytes));
      }
      ins.push_back(e);
    }
    m["inputs"] = ins;
    m["outputs"] = outputs_;
    m["result"] = result;
    return m;
  }

  void finish(const json& result) {
    write_file_atomic(out_ / "resolved_config.toml", toml_text(cmd_.section, cmd_.resolved()));
    write_file_atomic(out_ / "run_manifest.json", manifest(result).dump(2) + "\n");
  }

 private:
  const Command& cmd_;
  fs::path out_;
  std::vector<fs::path> inputs_;
  std::vector<std::string> outputs_;
};

void require(std::vector<std::string>& problems, bool ok, const std::string& message) {
  if (!ok) problems.push_back(message);
}

void throw_if(std::vector<std::string> problems) {
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

// Image references in a manifest resolve against its directory; a copy
// written elsewhere needs them rewritten relative to its new home.
std::vector<ImagePairRecord> rebase(std::vector<ImagePairRecord> records, const fs::path& from_manifest,
                                    const fs::path& to_dir) {
  const fs::path base = fs::absolute(from_manifest).parent_path();
  const fs::path dest = fs::absolute(to_dir);
  for (auto& r : records) {
    for (std::string* ref : {&r.src_image, &r.edit_image}) {
      if (ref->empty() || is_uri(*ref)) continue;
      fs::path p(*ref);
      if (p.is_relative()) p = base / p;
      *ref = fs::proximate(p.lexically_normal(), dest).generic_string();
    }
  }
  return records;
}

fs::path resolve_image(const fs::path& manifest, const std::string& ref) {
  if (is_uri(ref)) throw ConfigError({"image '" + ref + "' is a URI; fetch it to a local file first"});
  fs::path p(ref);
  return p.is_relative() ? manifest.parent_path() / p : p;
}

json values_summary(const MetricValues& v) {
  auto o = [](const std::optional<double>& x) { return x ? json(*x) : json(nullptr); };
  return json{{"count", v.count}, {"bleu4", o(v.bleu4)}, {"cider_d", o(v.cider_d)}, {"meteor", o(v.meteor)},
              {"rouge_l", o(v.rouge_l)}, {"semantic_similarity", o(v.semantic)}};
}

// Least-squares slope over epochs plus how often the loss went down.
json loss_trend(const std::vector<EpochRow>& curve) {
  json t;
  const std::size_t n = curve.size();
  if (n == 0) return t;
  const double first = curve.front().mean_loss;
  const double last = curve.back().mean_loss;
  double best = first;
  std::size_t down = 0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    best = std::min(best, curve[i].mean_loss);
    if (i > 0 && curve[i].mean_loss < curve[i - 1].mean_loss) ++down;
    mx += static_cast<double>(i);
    my += curve[i].mean_loss;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (static_cast<double>(i) - mx) * (curve[i].mean_loss - my);
    sxx += (static_cast<double>(i) - mx) * (static_cast<double>(i) - mx);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  std::string verdict = "flat";
  if (n > 1 && last < first && slope < 0.0) verdict = "decreasing";
  if (n > 1 && last > first && slope > 0.0) verdict = "increasing";
  t["epochs"] = n;
  t["first_loss"] = first;
  t["last_loss"] = last;
  t["min_loss"] = best;
  t["last_over_first"] = first > 0.0 ? last / first : 0.0;
  t["slope_per_epoch"] = slope;
  t["decreasing_steps"] = down;
  t["monotone"] = n > 1 && down == n - 1;
  t["verdict"] = verdict;
  return t;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::string manifest;
  std::size_t synthetic = 0;
  std::size_t image_size = 32;
  std::string fusion = "concat";
  std::string prefix = "differences";
  std::vector<std::size_t> epochs{2, 2};
  std::vector<double> pd{0.0, 0.5};
  std::size_t micro_batch = 8;
  std::size_t accumulation = 4;
  double lr = AdamWConfig{}.lr;
  double weight_decay = AdamWConfig{}.weight_decay;
  std::size_t checkpoint_every = 1;
  std::string resume;
  std::size_t pretrain_steps = ToyBundleOptions{}.pretrain_steps;
  double pretrain_lr = ToyBundleOptions{}.pretrain_lr;
  std::size_t patch_size = ToyBundleOptions{}.patch_size;
  std::size_t feature_width = ToyBundleOptions{}.feature_width;
  std::size_t lm_width = ToyBundleOptions{}.lm_width;
  std::size_t lm_layers = ToyBundleOptions{}.lm_layers;
  std::size_t lm_heads = ToyBundleOptions{}.lm_heads;
  std::size_t max_positions = ToyBundleOptions{}.max_positions;
  std::size_t decode_check = 8;
  std::size_t max_len = GenerateOptions{}.max_len;
};

void cmd_train(const Command& cmd, const TrainArgs& a) {
  std::vector<std::string> problems;
  require(problems, !a.out.empty(), "--out is required");
  require(problems, a.manifest.empty() != (a.synthetic == 0), "give exactly one of --manifest or --synthetic");
  require(problems, a.epochs.size() == a.pd.size(),
          "--epochs and --pd need one entry per phase (got " + std::to_string(a.epochs.size()) + " and " +
              std::to_string(a.pd.size()) + ")");
  require(problems, a.image_size > 0 && a.image_size % 4 == 0, "--image-size must be a positive multiple of 4");
  std::optional<FusionStrategy> fusion;
  try {
    fusion = parse_fusion(a.fusion);
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) problems.push_back(p);
  }
  try {
    prefix_text(a.prefix);
  } catch (const ConfigError& e) {
    for (const auto& p : e.problems()) problems.push_back(p);
  }
  TrainConfig tc;
  tc.phases.clear();
  for (std::size_t i = 0; i < std::min(a.epochs.size(), a.pd.size()); ++i) tc.phases.push_back({a.epochs[i], a.pd[i]});
  tc.micro_batch = a.micro_batch;
  tc.accumulation_steps = a.accumulation;
  tc.optimizer.lr = a.lr;
  tc.optimizer.weight_decay = a.weight_decay;
  tc.checkpoint_every = a.checkpoint_every;
  tc.seed = a.seed;
  for (const auto& p : tc.problems()) problems.push_back(p);
  throw_if(std::move(problems));

  Run run(cmd, a.out);
  std::vector<PairExample> data;
  if (!a.manifest.empty()) {
    const fs::path mpath(a.manifest);
    run.input(mpath);
    const auto records = load_manifest(mpath, true);
    std::vector<std::string> missing;
    for (const auto& r : records) {
      if (!r.change_summary || r.change_summary->empty()) {
        if (missing.size() < 10) missing.push_back("record '" + r.id + "' has no change_summary to train on");
        continue;
      }
      const fs::path src = resolve_image(mpath, r.src_image);
      const fs::path edit = resolve_image(mpath, r.edit_image);
      run.input(src);
      run.input(edit);
      data.push_back({r.id, load_image(src), load_image(edit), *r.change_summary});
    }
    throw_if(std::move(missing));
  } else {
    for (auto& s : synthesize_pairs(a.synthetic, a.image_size, a.seed)) {
      data.push_back({s.id, std::move(s.source), std::move(s.edited), s.summary});
    }
  }
  if (!a.resume.empty()) run.input(a.resume);
  run.prepare({"loss_curve.csv", "projection.vxpj", "run_manifest.json", "resolved_config.toml"});

  std::vector<std::string> corpus;
  for (const auto& d : data) corpus.push_back(d.summary);
  // Distractor targets have to be in the vocabulary only when they can be drawn.
  const bool distractors = std::any_of(tc.phases.begin(), tc.phases.end(), [](const Phase& p) { return p.p_d > 0.0; });
  if (distractors) {
    for (const auto& p : tc.no_difference_pool) corpus.push_back(p);
  }
  ToyBundleOptions bo;
  bo.patch_size = a.patch_size;
  bo.feature_width = a.feature_width;
  bo.lm_width = a.lm_width;
  bo.lm_layers = a.lm_layers;
  bo.lm_heads = a.lm_heads;
  bo.max_positions = a.max_positions;
  bo.fusion = *fusion;
  bo.prefix_profile = a.prefix;
  bo.pretrain_steps = a.pretrain_steps;
  bo.pretrain_lr = a.pretrain_lr;
  bo.seed = a.seed;
  // Pretraining prompts use the first record's image size.
  const std::size_t size = data.empty() ? a.image_size : data.front().source.width;
  ModelBundle bundle = make_toy_bundle(corpus, size, bo);

  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(bundle, tc, data);
  RunOptions ro;
  ro.out_dir = run.out();
  if (!a.resume.empty()) ro.resume_from = fs::path(a.resume);
  const RunResult result = trainer.run(ro);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_bundle(run.out() / "bundle", bundle);

  GenerateOptions g;
  g.max_len = a.max_len;
  std::size_t checked = 0, exact = 0;
  for (const auto& d : data) {
    if (checked == a.decode_check) break;
    ++checked;
    if (caption_pair(bundle, d.source, d.edited, g).text == d.summary) ++exact;
  }

  // The trainer already wrote its own manifest; wrap it with the CLI view.
  json trainer_manifest = json::parse(read_file(result.manifest));
  const json trend = loss_trend(result.curve);
  run.output("loss_curve.csv");
  run.output("projection.vxpj");
  for (const auto& c : result.checkpoints) run.output(fs::relative(c, run.out()).generic_string());
  run.output("bundle");
  json summary{{"records", data.size()},
               {"loss_trend", trend},
               {"projection_checksum", hex64(result.projection_checksum)},
               {"decode_check", {{"checked", checked}, {"exact", exact}}},
               {"train_seconds", seconds},
               {"trainer", trainer_manifest}};
  run.finish(summary);

  std::cout << "trained " << data.size() << " records for " << trend.value("epochs", 0) << " epochs in " << seconds
            << " s\n";
  std::cout << "loss " << trend.value("first_loss", 0.0) << " -> " << trend.value("last_loss", 0.0) << " ("
            << trend.value("verdict", std::string()) << ", " << trend.value("decreasing_steps", 0) << "/"
            << (result.curve.empty() ? 0 : result.curve.size() - 1) << " epochs lower than the one before)\n";
  std::cout << "greedy decoding reproduced " << exact << "/" << checked << " training summaries\n";
}

// --- caption ----------------------------------------------------------------

struct CaptionArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::string bundle;
  std::string manifest;
  std::string source;
  std::string edited;
  std::string mode = "greedy";
  double temperature = 1.0;
  std::size_t max_len = GenerateOptions{}.max_len;
};

void cmd_caption(const Command& cmd, const CaptionArgs& a) {
  std::vector<std::string> problems;
  require(problems, !a.out.empty(), "--out is required");
  require(problems, !a.bundle.empty(), "--bundle is required");
  require(problems, a.manifest.empty() != (a.source.empty() && a.edited.empty()),
          "give either --manifest or both --source and --edited");
  require(problems, a.manifest.empty() || (a.source.empty() && a.edited.empty()),
          "--manifest can't be combined with --source/--edited");
  require(problems, !a.manifest.empty() || (!a.source.empty() && !a.edited.empty()),
          "--source and --edited go together");
  require(problems, a.mode == "greedy" || a.mode == "sample", "--mode must be greedy or sample");
  require(problems, a.temperature > 0.0, "--temperature must be positive");
  require(problems, a.max_len > 0, "--max-len must be positive");
  throw_if(std::move(problems));

  Run run(cmd, a.out);
  const ModelBundle bundle = load_bundle(a.bundle);
  for (const char* f : {"bundle.json", "vocab.txt", "lm.vxlm", "projection.vxpj"}) run.input(fs::path(a.bundle) / f);

  GenerateOptions g;
  g.mode = a.mode == "sample" ? GenerateOptions::Mode::Sample : GenerateOptions::Mode::Greedy;
  g.temperature = a.temperature;
  g.seed = a.seed;
  g.max_len = a.max_len;

  std::vector<Prediction> predictions;
  if (!a.manifest.empty()) {
    const fs::path mpath(a.manifest);
    run.input(mpath);
    const auto records = load_manifest(mpath, true);
    std::vector<std::pair<fs::path, fs::path>> images;
    for (const auto& r : records) {
      images.emplace_back(resolve_image(mpath, r.src_image), resolve_image(mpath, r.edit_image));
      run.input(images.back().first);
      run.input(images.back().second);
    }
    run.prepare({"predictions.jsonl"});
    for (std::size_t i = 0; i < records.size(); ++i) {
      const Image src = load_image(images[i].first);
      const Image edit = load_image(images[i].second);
      predictions.push_back({records[i].id, caption_pair(bundle, src, edit, g).text});
    }
  } else {
    run.input(a.source);
    run.input(a.edited);
    run.prepare({"predictions.jsonl"});
    const std::string id = fs::path(a.source).stem().string();
    predictions.push_back({id, caption_pair(bundle, load_image(a.source), load_image(a.edited), g).text});
    std::cout << predictions.back().candidate << "\n";
  }
  save_predictions(run.out() / "predictions.jsonl", predictions);
  run.output("predictions.jsonl");
  run.finish({{"predictions", predictions.size()}});
  std::cerr << "wrote " << predictions.size() << " predictions to " << (run.out() / "predictions.jsonl").string()
            << "\n";
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string out;
  std::string predictions;
  std::string manifest;
  std::vector<double> thresholds{3.0, 4.0, 5.0};
  bool no_thresholds = false;
  bool smoothed_bleu = false;
  std::string embedder = "hashed-bow";
};

void cmd_eval(const Command& cmd, const EvalArgs& a) {
  std::vector<std::string> problems;
  require(problems, !a.out.empty(), "--out is required");
  require(problems, !a.predictions.empty(), "--predictions is required");
  require(problems, !a.manifest.empty(), "--manifest is required");
  for (double t : a.thresholds) require(problems, t >= 1.0 && t <= 5.0, "threshold " + std::to_string(t) + " is outside [1, 5]");
  throw_if(std::move(problems));

  Run run(cmd, a.out);
  run.input(a.predictions);
  run.input(a.manifest);
  run.prepare({"metrics.json", "metrics.csv"});
  const auto preds = load_predictions(a.predictions);
  const auto records = load_manifest(a.manifest, false);
  const auto pairs = join_predictions(preds, records);

  EvaluateOptions o;
  if (!a.no_thresholds) o.thresholds = a.thresholds;
  else o.thresholds.clear();
  o.smoothed_bleu = a.smoothed_bleu;
  std::shared_ptr<const SentenceEmbedder> emb;
  if (a.embedder != "hashed-bow") {
    emb = adapter_registry().make_embedder(a.embedder);
    o.embedder = emb.get();
  }
  const MetricReport report = evaluate_corpus(pairs, o);
  write_file_atomic(run.out() / "metrics.json", report.to_json().dump(2) + "\n");
  write_file_atomic(run.out() / "metrics.csv", report.to_csv());
  run.output("metrics.json");
  run.output("metrics.csv");
  json subsets = json::array();
  for (const auto& s : report.subsets) {
    json v = values_summary(s.values);
    v["threshold"] = s.threshold;
    subsets.push_back(v);
  }
  run.finish({{"all", values_summary(report.all)}, {"subsets", subsets}});
  std::cout << report.to_csv();
}

// --- prompts ----------------------------------------------------------------

struct PromptsArgs {
  std::string out;
  std::string manifest;
  bool all = false;
};

void cmd_prompts(const Command& cmd, const PromptsArgs& a) {
  std::vector<std::string> problems;
  require(problems, !a.out.empty(), "--out is required");
  require(problems, !a.manifest.empty(), "--manifest is required");
  throw_if(std::move(problems));

  Run run(cmd, a.out);
  run.input(a.manifest);
  run.prepare({"prompts.jsonl"});
  const auto records = load_manifest(a.manifest, false);
  std::string text;
  std::size_t n = 0, skipped = 0;
  std::vector<std::string> bad;
  for (const auto& r : records) {
    if (!a.all && r.change_summary) {
      ++skipped;
      continue;
    }
    try {
      text += json{{"id", r.id}, {"prompt", build_fewshot_prompt(r)}}.dump() + "\n";
      ++n;
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems()) bad.push_back("record '" + r.id + "': " + p);
    }
  }
  throw_if(std::move(bad));
  write_file_atomic(run.out() / "prompts.jsonl", text);
  run.output("prompts.jsonl");
  run.finish({{"prompts", n}, {"skipped_with_summary", skipped}});
  std::cout << "wrote " << n << " prompts (" << skipped << " records already summarized)\n";
}

// --- augment ----------------------------------------------------------------

struct AugmentArgs {
  std::string out;
  std::string manifest;
  std::string endpoint = LlmClientConfig{}.endpoint;
  std::string model = LlmClientConfig{}.model;
  double temperature = LlmClientConfig{}.temperature;
  std::size_t max_tokens = LlmClientConfig{}.max_tokens;
  std::string stop = LlmClientConfig{}.stop;
  std::size_t max_retries = LlmClientConfig{}.max_retries;
  std::int64_t initial_backoff_ms = LlmClientConfig{}.initial_backoff.count();
  double backoff_multiplier = LlmClientConfig{}.backoff_multiplier;
  std::int64_t max_backoff_ms = LlmClientConfig{}.max_backoff.count();
  std::size_t concurrency = LlmClientConfig{}.concurrency;
  std::string api_key_env = LlmClientConfig{}.api_key_env;
  std::int64_t timeout_s = LlmClientConfig{}.timeout.count();
};

void cmd_augment(const Command& cmd, const AugmentArgs& a) {
  LlmClientConfig c;
  c.endpoint = a.endpoint;
  c.model = a.model;
  c.temperature = a.temperature;
  c.max_tokens = a.max_tokens;
  c.stop = a.stop;
  c.max_retries = a.max_retries;
  c.initial_backoff = std::chrono::milliseconds(a.initial_backoff_ms);
  c.backoff_multiplier = a.backoff_multiplier;
  c.max_backoff = std::chrono::milliseconds(a.max_backoff_ms);
  c.concurrency = a.concurrency;
  c.api_key_env = a.api_key_env;
  c.timeout = std::chrono::seconds(a.timeout_s);
  std::vector<std::string> problems = c.problems();
  require(problems, !a.out.empty(), "--out is required");
  require(problems, !a.manifest.empty(), "--manifest is required");
  throw_if(std::move(problems));

  Run run(cmd, a.out);
  run.input(a.manifest);
  run.prepare({"manifest.jsonl", "augment_audit.jsonl"});
  const auto records = load_manifest(a.manifest, false);
  HttpLlmClient client(c);
  const AugmentResult result = augment_with_llm(records, client, c);
  save_manifest(run.out() / "manifest.jsonl", rebase(result.records, a.manifest, run.out()));
  write_audit_log(run.out() / "augment_audit.jsonl", result.audit);
  run.output("manifest.jsonl");
  run.output("augment_audit.jsonl");
  run.finish({{"records", records.size()}, {"filled", result.filled}, {"failed", result.failed}});
  std::cout << "filled " << result.filled << ", failed " << result.failed << " of " << records.size()
            << " records\n";
}

// --- dataset ----------------------------------------------------------------

struct DatasetArgs {
  std::string out;
  std::string manifest;
  std::uint64_t seed = 0;
  bool check_images = true;
  double min_score = 4.0;
  std::vector<std::string> partitions{"train=0.8", "val=0.1", "test=0.1"};
  std::string spec;
};

std::vector<std::string> dataset_problems(const DatasetArgs& a) {
  std::vector<std::string> problems;
  require(problems, !a.out.empty(), "--out is required");
  require(problems, !a.manifest.empty(), "--manifest is required");
  return problems;
}

void cmd_validate(const Command& cmd, const DatasetArgs& a) {
  throw_if(dataset_problems(a));
  Run run(cmd, a.out);
  run.input(a.manifest);
  run.prepare({});
  const auto records = load_manifest(a.manifest, a.check_images);
  run.finish({{"records", records.size()}, {"valid", true}});
  std::cout << a.manifest << ": " << records.size() << " valid records\n";
}

void cmd_stats(const Command& cmd, const DatasetArgs& a) {
  throw_if(dataset_problems(a));
  Run run(cmd, a.out);
  run.input(a.manifest);
  run.prepare({"stats.json"});
  const auto records = load_manifest(a.manifest, false);
  const ScoreHistogram h = score_stats(records);
  std::size_t summarized = 0;
  for (const auto& r : records) summarized += r.change_summary ? 1 : 0;
  json bins = json::array();
  for (int b = 0; b < 5; ++b) {
    bins.push_back({{"score", b + 1}, {"count", h.counts[b]}, {"percent", h.percent[b]}});
  }
  const json stats{{"records", records.size()},
                   {"with_change_summary", summarized},
                   {"scored", h.scored},
                   {"unscored", h.unscored},
                   {"histogram", bins}};
  write_file_atomic(run.out() / "stats.json", stats.dump(2) + "\n");
  run.output("stats.json");
  run.finish(stats);
  std::cout << "records " << records.size() << ", scored " << h.scored << ", unscored " << h.unscored << "\n";
  for (int b = 0; b < 5; ++b) {
    char line[64];
    std::snprintf(line, sizeof line, "  %d: %6zu  %6.2f%%\n", b + 1, h.counts[b], h.percent[b]);
    std::cout << line;
  }
}

SplitSpec parse_partitions(const std::vector<std::string>& items, std::uint64_t seed) {
  json j{{"seed", seed}, {"partitions", json::array()}};
  std::vector<std::string> problems;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back("partition '" + item + "' should look like name=fraction");
      continue;
    }
    try {
      std::size_t used = 0;
      const double f = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument("trailing text");
      j["partitions"].push_back({{"name", item.substr(0, eq)}, {"fraction", f}});
    } catch (const std::exception&) {
      problems.push_back("partition '" + item + "' has no numeric fraction");
    }
  }
  throw_if(std::move(problems));
  return split_spec_from_json(j);
}

void cmd_split(const Command& cmd, const DatasetArgs& a) {
  throw_if(dataset_problems(a));
  Run run(cmd, a.out);
  run.input(a.manifest);
  SplitSpec spec;
  if (!a.spec.empty()) {
    run.input(a.spec);
    try {
      spec = split_spec_from_json(json::parse(read_file(a.spec)));
    } catch (const json::parse_error& e) {
      throw ConfigError({"split spec '" + a.spec + "' is not valid JSON: " + e.what()});
    }
  } else {
    spec = parse_partitions(a.partitions, a.seed);
  }
  std::vector<std::string> files{"split_spec.json"};
  for (const auto& p : spec.partitions) files.push_back(p.name + ".jsonl");
  run.prepare(files);
  const auto records = load_manifest(a.manifest, false);
  const auto parts = split(records, spec);
  std::map<std::string, const ImagePairRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  json sizes = json::object();
  for (const auto& [name, ids] : parts) {
    std::vector<ImagePairRecord> subset;
    for (const auto& id : ids) subset.push_back(*by_id.at(id));
    save_manifest(run.out() / (name + ".jsonl"), rebase(subset, a.manifest, run.out()));
    run.output(name + ".jsonl");
    sizes[name] = ids.size();
    std::cout << name << ": " << ids.size() << "\n";
  }
  write_file_atomic(run.out() / "split_spec.json", to_json(spec).dump(2) + "\n");
  run.output("split_spec.json");
  run.finish({{"partitions", sizes}});
}

void cmd_filter(const Command& cmd, const DatasetArgs& a) {
  std::vector<std::string> problems = dataset_problems(a);
  require(problems, a.min_score >= 1.0 && a.min_score <= 5.0, "--min-score must be within [1, 5]");
  throw_if(std::move(problems));
  Run run(cmd, a.out);
  run.input(a.manifest);
  run.prepare({"manifest.jsonl"});
  const auto records = load_manifest(a.manifest, false);
  const auto kept = filter_min_score(records, a.min_score);
  std::size_t unscored = 0;
  for (const auto& r : records) unscored += r.correspondence_score ? 0 : 1;
  save_manifest(run.out() / "manifest.jsonl", rebase(kept, a.manifest, run.out()));
  run.output("manifest.jsonl");
  run.finish({{"records", records.size()}, {"kept", kept.size()}, {"unscored_dropped", unscored}});
  std::cout << "kept " << kept.size() << " of " << records.size() << " records with score >= " << a.min_score
            << "\n";
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t count = 8;
  std::size_t image_size = 32;
  double score = 5.0;
};

void cmd_synth(const Command& cmd, const SynthArgs& a) {
  std::vector<std::string> problems;
  require(problems, !a.out.empty(), "--out is required");
  require(problems, a.count > 0, "--count must be positive");
  require(problems, a.image_size > 0 && a.image_size % 4 == 0, "--image-size must be a positive multiple of 4");
  require(problems, a.score >= 1.0 && a.score <= 5.0, "--score must be within [1, 5]");
  throw_if(std::move(problems));
  Run run(cmd, a.out);
  run.prepare({"manifest.jsonl"});
  fs::create_directories(run.out() / "images");
  std::vector<ImagePairRecord> records;
  for (const auto& s : synthesize_pairs(a.count, a.image_size, a.seed)) {
    ImagePairRecord r;
    r.id = s.id;
    r.src_image = "images/" + s.id + "_src.png";
    r.edit_image = "images/" + s.id + "_edit.png";
    save_png(run.out() / r.src_image, s.source);
    save_png(run.out() / r.edit_image, s.edited);
    r.caption_src = s.caption_source;
    r.caption_edit = s.caption_edited;
    r.edit_instruction = s.instruction;
    r.change_summary = s.summary;
    r.correspondence_score = a.score;
    records.push_back(std::move(r));
  }
  save_manifest(run.out() / "manifest.jsonl", records);
  run.output("manifest.jsonl");
  run.output("images");
  run.finish({{"records", records.size()}});
  std::cout << "wrote " << records.size() << " pairs to " << (run.out() / "manifest.jsonl").string() << "\n";
}

// --- probe ------------------------------------------------------------------

struct ProbeArgs {
  std::string out;
  std::string adapter = "toy-patch";
  std::string image;
  std::size_t image_size = 48;
};

void cmd_probe(const Command& cmd, const ProbeArgs& a) {
  std::vector<std::string> problems;
  require(problems, !a.out.empty(), "--out is required");
  throw_if(std::move(problems));
  Run run(cmd, a.out);
  Image sample(a.image_size, a.image_size);
  if (!a.image.empty()) {
    run.input(a.image);
    sample = load_image(a.image);
  }
  run.prepare({});
  const ShapeReport r = probe(adapter_registry(), a.adapter, sample);
  run.finish({{"adapter", a.adapter}, {"rows", r.rows}, {"cols", r.cols}});
  std::cout << r.text() << "\n";
}

// --- errors -----------------------------------------------------------------

int report(const std::string& kind, const std::string& message, const std::vector<std::string>& problems, int code) {
  json j{{"error", kind}, {"message", message}, {"exit_code", code}};
  if (!problems.empty()) j["problems"] = problems;
  std::cerr << j.dump() << std::endl;
  return code;
}

// The command path named on the command line. Config sections for other
// commands mark them as parsed too, so dispatch can't rely on that.
std::vector<std::string> named_path(int argc, char** argv, CLI::App& root) {
  std::vector<std::string> path;
  CLI::App* app = &root;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (app == &root && arg == "--config") {
      ++i;
      continue;
    }
    if (arg.starts_with("-")) continue;
    CLI::App* sub = nullptr;
    try {
      sub = app->get_subcommand(arg);
    } catch (const CLI::OptionNotFound&) {
    }
    if (!sub) break;
    path.push_back(arg);
    app = sub;
    if (app->get_subcommands({}).empty()) break;
  }
  return path;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-difference captioning: training, captioning, evaluation and dataset tools"};
  app.set_config("--config", "", "TOML file with a [command] section; flags override its values");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", "vixen 0.1.0");

  std::vector<std::unique_ptr<Command>> commands;
  auto make = [&](CLI::App* parent, const std::string& name, const std::string& section, const std::string& help) {
    auto c = std::make_unique<Command>();
    c->app = parent->add_subcommand(name, help)->configurable();
    c->section = section;
    commands.push_back(std::move(c));
    return commands.back().get();
  };
  const std::vector<std::string> fusions{"concat", "sub", "add", "mul", "mean"};
  const std::vector<std::string> prefixes{"differences", "edit-instructions"};

  TrainArgs ta;
  {
    Command* c = make(&app, "train", "train", "Train the projection layer and write checkpoints and a bundle");
    c->option("out", ta.out, "Output directory");
    c->option("seed", ta.seed, "Seed for the bundle, sampling and synthetic data");
    c->option("manifest", ta.manifest, "JSONL manifest with change_summary on every record");
    c->option("synthetic", ta.synthetic, "Train on this many generated pairs instead of a manifest");
    c->option("image-size", ta.image_size, "Side of generated images");
    c->option("fusion", ta.fusion, "Fusion of the two projected feature maps")->check(CLI::IsMember(fusions));
    c->option("prefix", ta.prefix, "Text prefix after the visual prompt")->check(CLI::IsMember(prefixes));
    c->option("epochs", ta.epochs, "Epochs per phase");
    c->option("pd", ta.pd, "Distractor probability per phase");
    c->option("micro-batch", ta.micro_batch, "Pairs per forward/backward pass");
    c->option("accumulation", ta.accumulation, "Micro-batches per optimizer step");
    c->option("lr", ta.lr, "AdamW learning rate");
    c->option("weight-decay", ta.weight_decay, "AdamW decoupled weight decay");
    c->option("checkpoint-every", ta.checkpoint_every, "Epochs between checkpoints");
    c->option("resume", ta.resume, "Checkpoint to resume from");
    c->option("pretrain-steps", ta.pretrain_steps, "Toy LM pretraining steps before freezing");
    c->option("pretrain-lr", ta.pretrain_lr, "Toy LM pretraining learning rate");
    c->option("patch-size", ta.patch_size, "Toy encoder patch side");
    c->option("feature-width", ta.feature_width, "Toy encoder feature width h");
    c->option("lm-width", ta.lm_width, "Toy LM embedding width e");
    c->option("lm-layers", ta.lm_layers, "Toy LM layers");
    c->option("lm-heads", ta.lm_heads, "Toy LM attention heads");
    c->option("max-positions", ta.max_positions, "Toy LM context length");
    c->option("decode-check", ta.decode_check, "Greedy-decode this many training pairs after training");
    c->option("max-len", ta.max_len, "Token limit for the decode check");
    c->run = [&](const Command& self) { cmd_train(self, ta); };
  }

  CaptionArgs ca;
  {
    Command* c = make(&app, "caption", "caption", "Caption image pairs with a trained bundle");
    c->option("out", ca.out, "Output directory");
    c->option("seed", ca.seed, "Sampling seed");
    c->option("bundle", ca.bundle, "Bundle directory written by train");
    c->option("manifest", ca.manifest, "Caption every pair in this manifest");
    c->option("source", ca.source, "Source image of a single pair");
    c->option("edited", ca.edited, "Edited image of a single pair");
    c->option("mode", ca.mode, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
    c->option("temperature", ca.temperature, "Sampling temperature");
    c->option("max-len", ca.max_len, "Maximum generated tokens");
    c->run = [&](const Command& self) { cmd_caption(self, ca); };
  }

  EvalArgs ea;
  {
    Command* c = make(&app, "eval", "eval", "Score predictions against manifest summaries");
    c->option("out", ea.out, "Output directory");
    c->option("predictions", ea.predictions, "JSONL predictions (id, candidate)");
    c->option("manifest", ea.manifest, "Manifest holding the reference summaries");
    c->option("threshold", ea.thresholds, "Correspondence-score thresholds for subsets");
    c->flag("no-thresholds", ea.no_thresholds, "Report the full set only");
    c->flag("smoothed-bleu", ea.smoothed_bleu, "Mean smoothed sentence BLEU instead of corpus BLEU");
    c->option("embedder", ea.embedder, "Sentence embedder: hashed-bow or a registered adapter");
    c->run = [&](const Command& self) { cmd_eval(self, ea); };
  }

  PromptsArgs pa;
  {
    Command* c = make(&app, "prompts", "prompts", "Write the few-shot summarization prompt for each record");
    c->option("out", pa.out, "Output directory");
    c->option("manifest", pa.manifest, "Input manifest");
    c->flag("all", pa.all, "Include records that already have a change_summary");
    c->run = [&](const Command& self) { cmd_prompts(self, pa); };
  }

  AugmentArgs aa;
  {
    Command* c = make(&app, "augment", "augment", "Fill missing change summaries with a text-completion API");
    c->option("out", aa.out, "Output directory");
    c->option("manifest", aa.manifest, "Input manifest");
    c->option("endpoint", aa.endpoint, "Completion endpoint URL");
    c->option("model", aa.model, "Model name sent with each request");
    c->option("temperature", aa.temperature, "Sampling temperature");
    c->option("max-tokens", aa.max_tokens, "Completion token limit");
    c->option("stop", aa.stop, "Stop sequence");
    c->option("max-retries", aa.max_retries, "Retries after the first attempt");
    c->option("initial-backoff-ms", aa.initial_backoff_ms, "First retry delay");
    c->option("backoff-multiplier", aa.backoff_multiplier, "Delay growth per retry");
    c->option("max-backoff-ms", aa.max_backoff_ms, "Retry delay cap");
    c->option("concurrency", aa.concurrency, "Requests in flight");
    c->option("api-key-env", aa.api_key_env, "Environment variable holding the API key");
    c->option("timeout-s", aa.timeout_s, "Per-request timeout");
    c->run = [&](const Command& self) { cmd_augment(self, aa); };
  }

  DatasetArgs da;
  {
    CLI::App* ds = app.add_subcommand("dataset", "Manifest utilities")->configurable();
    ds->require_subcommand(1);
    auto common = [&](Command* c) {
      c->option("out", da.out, "Output directory");
      c->option("manifest", da.manifest, "Input manifest");
    };
    Command* v = make(ds, "validate", "dataset.validate", "Check a manifest and report every problem");
    common(v);
    v->option("check-images", da.check_images, "Require local image files to exist");
    v->run = [&](const Command& self) { cmd_validate(self, da); };
    Command* s = make(ds, "stats", "dataset.stats", "Correspondence-score histogram");
    common(s);
    s->run = [&](const Command& self) { cmd_stats(self, da); };
    Command* sp = make(ds, "split", "dataset.split", "Split into partitions by fraction or explicit ids");
    common(sp);
    sp->option("seed", da.seed, "Shuffle seed for fraction splits");
    sp->option("partition", da.partitions, "name=fraction, repeatable");
    sp->option("spec", da.spec, "JSON split spec (overrides --partition)");
    sp->run = [&](const Command& self) { cmd_split(self, da); };
    Command* f = make(ds, "filter", "dataset.filter", "Keep records with correspondence score >= t");
    common(f);
    f->option("min-score", da.min_score, "Minimum average correspondence score");
    f->run = [&](const Command& self) { cmd_filter(self, da); };
  }

  SynthArgs sa;
  {
    Command* c = make(&app, "synth", "synth", "Generate a synthetic manifest of shape edits");
    c->option("out", sa.out, "Output directory");
    c->option("seed", sa.seed, "Generator seed");
    c->option("count", sa.count, "Number of pairs");
    c->option("image-size", sa.image_size, "Image side in pixels");
    c->option("score", sa.score, "Correspondence score given to every pair");
    c->run = [&](const Command& self) { cmd_synth(self, sa); };
  }

  ProbeArgs pra;
  {
    Command* c = make(&app, "probe", "probe", "Report the feature-map shape an encoder adapter produces");
    c->option("out", pra.out, "Output directory");
    c->option("adapter", pra.adapter, "Registered encoder name");
    c->option("image", pra.image, "Sample image (a blank one otherwise)");
    c->option("image-size", pra.image_size, "Side of the blank sample");
    c->run = [&](const Command& self) { cmd_probe(self, pra); };
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), {}, kExitConfig);
  }

  std::string section;
  for (const auto& part : named_path(argc, argv, app)) section += (section.empty() ? "" : ".") + part;
  const Command* chosen = nullptr;
  for (const auto& c : commands) {
    if (c->section == section) chosen = c.get();
  }
  if (!chosen) return report("usage", "no command named on the command line", {}, kExitConfig);

  try {
    chosen->run(*chosen);
  } catch (const ManifestError& e) {
    std::vector<std::string> lines;
    for (const auto& i : e.issues()) lines.push_back(i.text());
    return report("manifest", e.what(), lines, kExitConfig);
  } catch (const ConfigError& e) {
    return report("config", e.what(), e.problems(), kExitConfig);
  } catch (const ImageIoError& e) {
    return report("image", e.what(), {}, kExitImage);
  } catch (const CheckpointError& e) {
    return report("checkpoint", e.what(), {}, kExitCheckpoint);
  } catch (const TrainingError& e) {
    return report("training", e.what(), {}, kExitTraining);
  } catch (const AdapterError& e) {
    return report("adapter", e.what(), {"adapter: " + e.adapter()}, kExitAdapter);
  } catch (const Error& e) {
    return report("error", e.what(), {}, kExitError);
  } catch (const std::exception& e) {
    return report("internal", e.what(), {}, kExitError);
  }
  return 0;
}
