// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Pass criterion numbers as arguments to run a subset.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/test_util.hpp"
#include "../unit/toy_fixture.hpp"
#include "vixen/binary_io.hpp"
#include "vixen/bundle.hpp"
#include "vixen/captioner.hpp"
#include "vixen/dataset.hpp"
#include "vixen/embedding.hpp"
#include "vixen/evaluate.hpp"
#include "vixen/language_model.hpp"
#include "vixen/metrics.hpp"
#include "vixen/synth.hpp"
#include "vixen/trainer.hpp"
#include "vixen/transformer.hpp"

using namespace vixen;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed expectations; the first few make up the detail line.
class Expect {
 public:
  void that(bool ok, const std::string& what) {
    if (ok) return;
    ++failed_;
    if (failed_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  void close(double got, double want, double rel, const std::string& what) {
    const double scale = std::max({1.0, std::abs(got), std::abs(want)});
    std::ostringstream s;
    s.precision(12);
    s << what << " = " << got << ", expected " << want;
    that(std::abs(got - want) <= rel * scale, s.str());
  }
  Outcome done(std::string ok_detail) const {
    if (failed_ == 0) return {true, std::move(ok_detail)};
    return {false, notes_ + (failed_ > 3 ? " (+" + std::to_string(failed_ - 3) + " more)" : "")};
  }

 private:
  std::size_t failed_ = 0;
  std::string notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vixen_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

ToyBundleOptions small_bundle() {
  ToyBundleOptions o;
  o.pretrain_steps = 20;
  o.lm_width = 16;
  o.lm_heads = 2;
  return o;
}

EvalPair pair(std::string cand, std::vector<std::string> refs) {
  return EvalPair{"", std::move(cand), std::move(refs), std::nullopt};
}

// --- 1 ----------------------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  const json o = json::parse(read_file(testing::data_path("metric_oracle.json")));
  Expect e;

  const auto& b = o["bleu_clip"];
  BleuStats s;
  add_bleu_stats(metric_tokens(b["candidate"].get<std::string>()), {metric_tokens(b["reference"].get<std::string>())}, s);
  e.close(s.precision(1), b["p1"].get<double>(), 1e-9, "unigram precision");
  e.close(s.precision(1), 0.25, 1e-9, "unigram precision");

  const auto& r = o["rouge_swap"];
  e.that(lcs_length(metric_tokens(r["candidate"].get<std::string>()), metric_tokens(r["reference"].get<std::string>())) ==
             r["lcs"].get<std::size_t>(),
         "LCS length");
  const double rouge = rouge_l({pair(r["candidate"], {r["reference"]})});
  e.close(rouge, r["score"].get<double>(), 1e-9, "ROUGE-L");
  e.close(rouge, 75.0, 1e-9, "ROUGE-L");

  const auto& c = o["cider_identical"];
  std::vector<EvalPair> cp;
  std::vector<std::vector<Tokens>> docs;
  for (const auto& p : c["pairs"]) {
    cp.push_back(pair(p["candidate"], p["references"].get<std::vector<std::string>>()));
    docs.push_back({});
    for (const auto& ref : cp.back().references) docs.back().push_back(metric_tokens(ref));
  }
  const CiderD scorer(docs);
  e.close(scorer.score(metric_tokens(cp[0].candidate), docs[0]), c["raw_first"].get<double>(), 1e-9, "CIDEr-D raw");
  e.close(cider_d(cp), c["reported"].get<double>(), 1e-9, "CIDEr-D reported");
  e.close(cider_d(cp), 100.0, 1e-9, "CIDEr-D reported");

  const auto& m = o["meteor_identical"];
  const std::string text = m["text"];
  const double meteor = meteor_lite({pair(text, {text})});
  e.close(meteor, m["score"].get<double>(), 1e-9, "METEOR-lite");
  e.that(std::abs(meteor - 98.15) < 1e-2, "METEOR-lite " + fmt(meteor, 10) + " not within 1e-2 of 98.15");

  const auto& corpus = o["corpus"];
  std::vector<EvalPair> pairs;
  for (const auto& p : corpus["pairs"]) pairs.push_back(pair(p["candidate"], p["references"].get<std::vector<std::string>>()));
  e.close(bleu4(pairs), corpus["bleu4"].get<double>(), 1e-9, "corpus BLEU-4");
  e.close(rouge_l(pairs), corpus["rouge_l"].get<double>(), 1e-9, "corpus ROUGE-L");
  e.close(meteor_lite(pairs), corpus["meteor"].get<double>(), 1e-9, "corpus METEOR-lite");
  e.close(cider_d(pairs), corpus["cider_d"].get<double>(), 1e-9, "corpus CIDEr-D");

  const double t = seconds_since(t0);
  e.that(t < 5.0, "took " + fmt(t) + " s");
  return e.done("p1 0.25, ROUGE-L 75, CIDEr-D 100, METEOR " + fmt(meteor, 6) + ", " + fmt(t, 2) + " s");
}

// --- 2 ----------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  TransformerConfig cfg;
  cfg.vocab = 13;
  cfg.width = 8;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.max_positions = 16;
  cfg.mlp_ratio = 2;
  cfg.seed = 21;
  const TinyTransformer lm(cfg);
  const std::size_t k = 5, h = 7, width = cfg.width;
  Rng rng(22);
  double worst = 0.0;
  Expect e;
  for (int trial = 0; trial < 20; ++trial) {
    const FusionStrategy strategy = kAllFusionStrategies[static_cast<std::size_t>(trial) % std::size(kAllFusionStrategies)];
    ProjectionLayer layer = ProjectionLayer::initialized(h, width, rng);
    for (double& v : layer.bias) v = uniform(rng, -0.5, 0.5);
    const Matrix f1 = testing::random_matrix(k, h, rng);
    const Matrix f2 = testing::random_matrix(k, h, rng);
    std::vector<TokenId> target(3);
    for (auto& t : target) t = static_cast<TokenId>(uniform_index(rng, cfg.vocab));

    auto loss = [&] { return caption_loss(lm, fuse(project(f1, layer), project(f2, layer), strategy), target); };
    const Matrix p1 = project(f1, layer), p2 = project(f2, layer);
    const LossWithGrad lg = caption_loss_with_grad(lm, fuse(p1, p2, strategy), target);
    const FuseGrad fg = fuse_backward(p1, p2, strategy, lg.d_prompt);
    ProjectionGrad grad(h, width);
    project_backward(f1, fg.first, grad);
    project_backward(f2, fg.second, grad);

    Matrix fd_w = testing::finite_difference(layer.weight, loss);
    Matrix bias_row(1, width, layer.bias);
    Matrix fd_b = testing::finite_difference(bias_row, [&] {
      std::copy(bias_row.values().begin(), bias_row.values().end(), layer.bias.begin());
      return loss();
    });
    std::copy(bias_row.values().begin(), bias_row.values().end(), layer.bias.begin());
    auto flat = [](const Matrix& w, std::span<const double> b) {
      std::vector<double> v(w.values().begin(), w.values().end());
      v.insert(v.end(), b.begin(), b.end());
      const std::size_t n = v.size();
      return Matrix(1, n, std::move(v));
    };
    const Matrix analytic = flat(grad.weight, grad.bias);
    const Matrix numeric = flat(fd_w, fd_b.values());
    const double err = testing::relative_error(analytic, numeric);
    worst = std::max(worst, err);
    e.that(err < 1e-4, std::string(to_string(strategy)) + " instance " + std::to_string(trial) + " error " + fmt(err));
  }
  const double t = seconds_since(t0);
  e.that(t < 10.0, "took " + fmt(t) + " s");
  return e.done("20 instances, worst relative error " + fmt(worst, 3) + ", " + fmt(t, 2) + " s");
}

// --- 3 ----------------------------------------------------------------------

Outcome frozen_invariant() {
  const auto t0 = std::chrono::steady_clock::now();
  auto s = testing::toy_setup(4, 16, 6, small_bundle());
  const auto enc = s.bundle.encoder->parameter_checksum();
  const auto lm = s.bundle.lm->parameter_checksum();
  const auto proj = s.bundle.projection.checksum();
  TrainConfig c;
  c.micro_batch = 2;
  c.accumulation_steps = 1;
  c.optimizer.lr = 1e-2;
  Trainer t(s.bundle, c, s.data);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    t.train_step(sample_batch(std::span(t.data()).subspan(static_cast<std::size_t>(i) % 3, 2), 0.5, c.no_difference_pool, rng));
  }
  Expect e;
  e.that(t.optimizer().steps() == 50, "took " + std::to_string(t.optimizer().steps()) + " optimizer steps");
  e.that(s.bundle.encoder->parameter_checksum() == enc, "encoder checksum changed");
  e.that(s.bundle.lm->parameter_checksum() == lm, "LM checksum changed");
  e.that(s.bundle.projection.checksum() != proj, "projection checksum unchanged");
  const double secs = seconds_since(t0);
  e.that(secs < 30.0, "took " + fmt(secs) + " s");
  return e.done("50 steps, encoder and LM bitwise unchanged, projection moved, " + fmt(secs, 2) + " s");
}

// --- 4 ----------------------------------------------------------------------

Outcome uniform_lm_loss() {
  const auto lm = ConstantLogitLM::uniform(16, 4, 1);
  Rng rng(2);
  const Matrix prompt = testing::random_matrix(3, 4, rng);
  const std::vector<TokenId> target{5, 9, 2};
  const double loss = caption_loss(lm, prompt, target);
  Expect e;
  e.that(std::abs(loss - 3.0 * std::log(16.0)) <= 1e-9, "loss " + fmt(loss, 17));
  return e.done("loss " + fmt(loss, 15) + " = 3 ln 16");
}

// --- 5 ----------------------------------------------------------------------

Outcome distractor_statistics() {
  std::vector<PairExample> records(10000);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].id = std::to_string(i);
    records[i].source = Image(1, 1);
    records[i].edited = Image(1, 1);
    records[i].summary = "changed " + std::to_string(i);
  }
  const auto pool = default_no_difference_pool();
  Rng rng(2024);
  auto fraction = [&](double p) {
    const auto batch = sample_batch(records, p, pool, rng);
    return static_cast<double>(std::count_if(batch.begin(), batch.end(), [](const TrainingPair& t) { return t.distractor; })) /
           static_cast<double>(batch.size());
  };
  const double half = fraction(0.5);
  const double none = fraction(0.0);
  const double all = fraction(1.0);
  Expect e;
  e.that(half >= 0.485 && half <= 0.515, "p_d 0.5 gave " + fmt(half));
  e.that(none == 0.0, "p_d 0 gave " + fmt(none));
  e.that(all == 1.0, "p_d 1 gave " + fmt(all));
  return e.done("p_d 0.5 -> " + fmt(half) + ", p_d 0 -> 0, p_d 1 -> 1");
}

// --- 6 ----------------------------------------------------------------------

Outcome schedule_conformance() {
  auto s = testing::toy_setup(3, 16, 9, small_bundle());
  const TrainConfig c;  // default schedule
  Trainer t(s.bundle, c, s.data);
  const fs::path out = scratch("schedule");
  const RunResult r = t.run({out});
  const json m = json::parse(read_file(r.manifest));
  const auto executed = m["executed_pd_sequence"].get<std::vector<double>>();
  const std::vector<double> want{0.0, 0.0, 0.5, 0.5};
  Expect e;
  e.that(executed == want, "executed p_d sequence " + m["executed_pd_sequence"].dump());
  e.that(m["schedule"]["pd_sequence"].get<std::vector<double>>() == want, "declared p_d sequence differs");
  e.that(r.curve.size() == 4, std::to_string(r.curve.size()) + " epochs");
  fs::remove_all(out);
  return e.done("run manifest p_d sequence " + m["executed_pd_sequence"].dump());
}

// --- 7 ----------------------------------------------------------------------

Outcome end_to_end_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::uint64_t kSeed = 2;
  std::vector<PairExample> data;
  std::vector<std::string> corpus;
  for (auto& p : synthesize_pairs(8, 32, kSeed)) {
    corpus.push_back(p.summary);
    data.push_back({p.id, std::move(p.source), std::move(p.edited), p.summary});
  }
  ToyBundleOptions bo;
  bo.seed = kSeed;
  ModelBundle bundle = make_toy_bundle(corpus, 32, bo);
  TrainConfig c;
  c.phases = {{300, 0.0}};
  c.micro_batch = 8;
  c.accumulation_steps = 1;
  c.optimizer.lr = 1e-2;
  c.seed = kSeed;
  Trainer t(bundle, c, data);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < c.total_epochs(); ++i) {
    last = t.run_epoch().mean_loss;
    if (i == 0) first = last;
  }
  std::size_t exact = 0;
  std::string miss;
  for (const auto& d : data) {
    const std::string got = caption_pair(bundle, d.source, d.edited).text;
    if (got == d.summary) ++exact;
    else if (miss.empty()) miss = "'" + got + "' for '" + d.summary + "'";
  }
  const double secs = seconds_since(t0);
  Expect e;
  e.that(t.optimizer().steps() == 300, std::to_string(t.optimizer().steps()) + " optimizer steps");
  e.that(last < 0.05 * first, "final loss " + fmt(last) + " vs initial " + fmt(first));
  e.that(exact == data.size(), std::to_string(exact) + "/8 exact, e.g. " + miss);
  e.that(secs < 300.0, "took " + fmt(secs) + " s");
  return e.done("loss " + fmt(first) + " -> " + fmt(last) + " (" + fmt(100.0 * last / first, 3) + "%), " +
                std::to_string(exact) + "/8 exact, " + fmt(secs, 3) + " s");
}

// --- 8 ----------------------------------------------------------------------

Outcome fusion_contracts() {
  Rng rng(3);
  Expect e;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + uniform_index(rng, 20);
    const std::size_t w = 1 + uniform_index(rng, 32);
    const Matrix p = testing::random_matrix(k, w, rng);
    const Matrix q = testing::random_matrix(k, w, rng);
    e.that(fuse(p, q, FusionStrategy::Concatenation).rows() == 2 * k, "concatenation length");
    for (auto s : {FusionStrategy::Subtraction, FusionStrategy::Addition, FusionStrategy::Multiplication,
                   FusionStrategy::Mean}) {
      e.that(fuse(p, q, s).rows() == k, std::string(to_string(s)) + " length");
    }
    const Matrix zero = fuse(p, p, FusionStrategy::Subtraction);
    e.that(std::all_of(zero.values().begin(), zero.values().end(), [](double v) { return v == 0.0; }),
           "p - p not exactly zero");
    e.that(fuse(p, p, FusionStrategy::Mean) == p, "mean(p, p) != p");
  }
  return e.done("100 random shapes: 2k / k lengths, p - p = 0, mean(p, p) = p");
}

// --- 9 ----------------------------------------------------------------------

Outcome prompt_golden() {
  const auto records = load_manifest(testing::data_path("manifest_golden.jsonl"));
  const std::string prompt = build_fewshot_prompt(records.at(0));
  const std::string golden = read_file(testing::data_path("fewshot_prompt.golden"));
  Expect e;
  if (prompt != golden) {
    const auto diff = std::mismatch(prompt.begin(), prompt.end(), golden.begin(), golden.end());
    e.that(false, "first difference at byte " + std::to_string(diff.first - prompt.begin()));
  }
  for (const char* label : {"Example 1:", "Example 2:", "Example 3:"}) {
    e.that(prompt.find(label) != std::string::npos, std::string("missing ") + label);
  }
  e.that(prompt.ends_with("\nSummary:"), "does not end with Summary:");
  return e.done(std::to_string(prompt.size()) + " bytes identical to the golden file");
}

// --- 10 ---------------------------------------------------------------------

Outcome threshold_protocol() {
  Expect e;
  std::vector<EvalPair> pairs;
  for (const auto& r : parse_manifest(read_file(testing::data_path("scores20.jsonl")), {false, {}})) {
    pairs.push_back(EvalPair{r.id, "a candidate", {"a reference"}, r.correspondence_score});
  }
  const auto at3 = threshold_subset(pairs, 3.0);
  const auto at4 = threshold_subset(pairs, 4.0);
  const auto at5 = threshold_subset(pairs, 5.0);
  auto contains = [](const std::vector<std::size_t>& big, const std::vector<std::size_t>& small) {
    return std::includes(big.begin(), big.end(), small.begin(), small.end());
  };
  e.that(contains(at3, at4) && contains(at4, at5), "subsets not nested");
  e.that(at3.size() > at4.size() && at4.size() > at5.size() && !at5.empty(), "fixture does not separate the thresholds");

  const auto records = load_manifest(testing::data_path("scored4.jsonl"));
  std::vector<double> scores;
  for (const auto& r : records) scores.push_back(r.correspondence_score.value_or(-1.0));
  e.that(scores == std::vector<double>{2.0, 3.0, 4.33, 5.0}, "fixture scores changed");
  const auto kept = filter_min_score(records, 4.0);
  e.that(kept.size() == 2, "filter kept " + std::to_string(kept.size()) + " records");
  return e.done("@3 " + std::to_string(at3.size()) + " >= @4 " + std::to_string(at4.size()) + " >= @5 " +
                std::to_string(at5.size()) + "; filter 4 on [2,3,4.33,5] keeps " + std::to_string(kept.size()));
}

// --- 11 ---------------------------------------------------------------------

Outcome semantic_contract() {
  const HashedBowEmbedder emb;
  Rng rng(11);
  const std::vector<std::string> words{"red",   "square", "the",  "moved", "blue", "cat",   "soup",  "night",
                                       "sky",   "a",      "is",   "now",   "gone", "small", "large", "corner",
                                       "green", "circle", "left", "sun"};
  auto sentence = [&] {
    std::string s;
    for (std::size_t i = 0, n = 1 + uniform_index(rng, 10); i < n; ++i) s += words[uniform_index(rng, words.size())] + " ";
    return s;
  };
  Expect e;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::string a = sentence();
    const std::string b = sentence();
    worst = std::max(worst, std::abs(semantic_similarity(a, a, emb) - 1.0));
    e.that(semantic_similarity(a, b, emb) == semantic_similarity(b, a, emb), "asymmetric on '" + a + "' / '" + b + "'");
  }
  e.that(worst <= 1e-9, "self-similarity off by " + fmt(worst));
  return e.done("self-similarity within " + fmt(worst, 2) + " of 1, symmetric on 100 pairs");
}

// --- 12 ---------------------------------------------------------------------

Outcome reproducibility() {
  TrainConfig c;
  c.phases = {{1, 0.0}, {1, 0.5}};
  c.micro_batch = 2;
  c.accumulation_steps = 2;
  c.optimizer.lr = 1e-2;
  c.seed = 13;
  std::vector<std::string> files[2];
  std::vector<std::string> names;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = scratch("repro" + std::to_string(run));
    auto s = testing::toy_setup(4, 16, 13, small_bundle());
    const RunResult r = Trainer(s.bundle, c, s.data).run({out});
    names.clear();
    for (const auto& p : r.checkpoints) {
      files[run].push_back(read_file(p));
      names.push_back(p.filename().string());
    }
    files[run].push_back(read_file(out / "projection.vxpj"));
    fs::remove_all(out);
  }
  Expect e;
  e.that(!files[0].empty() && files[0] == files[1], "checkpoint bytes differ");
  return e.done(std::to_string(names.size()) + " checkpoints and the final projection byte-identical across runs");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracles", metric_oracles},
      {"projection gradient check", gradient_check},
      {"frozen encoder and LM", frozen_invariant},
      {"uniform LM loss", uniform_lm_loss},
      {"distractor statistics", distractor_statistics},
      {"training schedule", schedule_conformance},
      {"end-to-end overfit", end_to_end_overfit},
      {"fusion contracts", fusion_contracts},
      {"few-shot prompt golden", prompt_golden},
      {"threshold protocol", threshold_protocol},
      {"semantic similarity contract", semantic_contract},
      {"reproducible checkpoints", reproducibility},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::stoul(argv[i])));

  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
