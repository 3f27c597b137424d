#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "test_util.hpp"
#include "toy_fixture.hpp"
#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"

using namespace vixen;
namespace fs = std::filesystem;

namespace {

ToyBundleOptions quick() {
  ToyBundleOptions o;
  o.pretrain_steps = 20;
  o.lm_width = 16;
  o.lm_heads = 2;
  return o;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vixen_test_trainer_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<PairExample> dummy_records(std::size_t n) {
  std::vector<PairExample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].id = std::to_string(i);
    out[i].source = Image(1, 1);
    out[i].edited = Image(1, 1);
    out[i].summary = "changed " + std::to_string(i);
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.phases = {{1, 0.0}, {1, 0.5}};
  c.micro_batch = 2;
  c.accumulation_steps = 2;
  c.optimizer.lr = 1e-2;
  c.seed = 11;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("distractor fraction follows p_d") {
  const auto records = dummy_records(10000);
  const auto pool = default_no_difference_pool();
  Rng rng(2024);
  const auto half = sample_batch(records, 0.5, pool, rng);
  const auto count = std::count_if(half.begin(), half.end(), [](const TrainingPair& p) { return p.distractor; });
  const double frac = static_cast<double>(count) / 10000.0;
  CHECK(frac >= 0.485);
  CHECK(frac <= 0.515);

  const auto none = sample_batch(records, 0.0, pool, rng);
  CHECK(std::none_of(none.begin(), none.end(), [](const TrainingPair& p) { return p.distractor; }));
  for (std::size_t i = 0; i < none.size(); ++i) {
    CHECK(none[i].first == &records[i].source);
    CHECK(none[i].second == &records[i].edited);
    CHECK(none[i].target == records[i].summary);
  }

  const auto all = sample_batch(records, 1.0, pool, rng);
  for (const auto& p : all) {
    REQUIRE(p.distractor);
    CHECK(p.first == p.second);
    CHECK(p.first == &p.record->source);
    CHECK(std::find(pool.begin(), pool.end(), p.target) != pool.end());
  }
}

TEST_CASE("sample_batch is reproducible under a seed") {
  const auto records = dummy_records(200);
  const auto pool = default_no_difference_pool();
  Rng a(9), b(9);
  const auto x = sample_batch(records, 0.3, pool, a);
  const auto y = sample_batch(records, 0.3, pool, b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].distractor == y[i].distractor);
    CHECK(x[i].target == y[i].target);
  }
}

TEST_CASE("default schedule and config validation") {
  const TrainConfig c;
  CHECK(c.pd_sequence() == std::vector<double>{0.0, 0.0, 0.5, 0.5});
  CHECK(c.total_epochs() == 4);
  CHECK(c.effective_batch() == 32);
  CHECK(c.problems().empty());
  CHECK(c.no_difference_pool.size() == 8);

  TrainConfig bad;
  bad.phases = {{2, 1.5}};
  bad.micro_batch = 0;
  bad.optimizer.lr = -1.0;
  CHECK(bad.problems().size() >= 3);

  const auto j = to_json(c);
  const TrainConfig back = train_config_from_json(j);
  CHECK(to_json(back) == j);

  auto unknown = j;
  unknown["learning_rate"] = 0.1;
  CHECK_THROWS_AS(train_config_from_json(unknown), ConfigError);
}

TEST_CASE("end-to-end projection gradient matches finite differences") {
  for (auto fusion : {FusionStrategy::Concatenation, FusionStrategy::Subtraction, FusionStrategy::Addition,
                      FusionStrategy::Multiplication, FusionStrategy::Mean}) {
    auto opts = quick();
    opts.fusion = fusion;
    opts.pretrain_steps = 0;
    auto s = testing::toy_setup(2, 16, 3, opts);
    ModelBundle& b = s.bundle;
    Rng rng(4);
    b.projection = ProjectionLayer::initialized(b.projection.in_width(), b.projection.out_width(), rng);
    for (double& v : b.projection.bias) v = uniform(rng, -0.1, 0.1);
    const FeatureMap f1 = b.encoder->encode(s.data[0].source);
    const FeatureMap f2 = b.encoder->encode(s.data[0].edited);
    const std::string target = s.data[0].summary;

    ProjectionGrad grad(b.projection.in_width(), b.projection.out_width());
    pair_loss_and_grad(b, f1, f2, target, grad);
    auto loss = [&] { return caption_loss(*b.lm, build_prompt(b, f1, f2), target_ids(b, target)); };

    double worst = 0.0;
    for (int t = 0; t < 40; ++t) {
      const std::size_t i = uniform_index(rng, b.projection.weight.size());
      double& w = b.projection.weight.values()[i];
      const double saved = w;
      w = saved + 1e-5;
      const double up = loss();
      w = saved - 1e-5;
      const double down = loss();
      w = saved;
      const double fd = (up - down) / 2e-5;
      const double an = grad.weight.values()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an))));
    }
    for (std::size_t i = 0; i < b.projection.bias.size(); i += 3) {
      double& v = b.projection.bias[i];
      const double saved = v;
      v = saved + 1e-5;
      const double up = loss();
      v = saved - 1e-5;
      const double down = loss();
      v = saved;
      const double fd = (up - down) / 2e-5;
      if (fusion == FusionStrategy::Subtraction) {
        CHECK(grad.bias[i] == 0.0);
        CHECK(std::abs(fd) < 1e-6);
      } else {
        worst = std::max(worst, std::abs(fd - grad.bias[i]) / std::max(1e-6, std::abs(fd)));
      }
    }
    INFO(to_string(fusion));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("with subtraction fusion a distractor carries no visual signal") {
  auto opts = quick();
  opts.fusion = FusionStrategy::Subtraction;
  opts.pretrain_steps = 0;
  auto s = testing::toy_setup(2, 16, 5, opts);
  ModelBundle& b = s.bundle;
  const FeatureMap f = b.encoder->encode(s.data[0].source);
  ProjectionGrad grad(b.projection.in_width(), b.projection.out_width());
  const double before = pair_loss_and_grad(b, f, f, "Nothing has changed.", grad);
  CHECK(*std::max_element(grad.weight.values().begin(), grad.weight.values().end()) == 0.0);
  CHECK(*std::min_element(grad.weight.values().begin(), grad.weight.values().end()) == 0.0);
  Rng rng(8);
  b.projection = ProjectionLayer::initialized(b.projection.in_width(), b.projection.out_width(), rng);
  CHECK(caption_loss(*b.lm, build_prompt(b, f, f), target_ids(b, "Nothing has changed.")) == before);
}

TEST_CASE("frozen parts are untouched by 50 steps while the projection moves") {
  auto s = testing::toy_setup(4, 16, 6, quick());
  const auto enc = s.bundle.encoder->parameter_checksum();
  const auto lm = s.bundle.lm->parameter_checksum();
  const auto proj = s.bundle.projection.checksum();
  TrainConfig c = small_config();
  c.accumulation_steps = 1;
  Trainer t(s.bundle, c, s.data);
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto batch = sample_batch(std::span(t.data()).subspan(i % 3, 2), 0.5, c.no_difference_pool, rng);
    CHECK(t.train_step(batch).applied);
  }
  CHECK(t.optimizer().steps() == 50);
  CHECK(s.bundle.encoder->parameter_checksum() == enc);
  CHECK(s.bundle.lm->parameter_checksum() == lm);
  CHECK(s.bundle.projection.checksum() != proj);
}

TEST_CASE("gradient accumulation steps every accumulation_steps micro-batches") {
  auto s = testing::toy_setup(4, 16, 7, quick());
  TrainConfig c = small_config();
  c.accumulation_steps = 3;
  Trainer t(s.bundle, c, s.data);
  Rng rng(2);
  const auto batch = sample_batch(std::span(t.data()).subspan(0, 2), 0.0, c.no_difference_pool, rng);
  CHECK_FALSE(t.train_step(batch).applied);
  CHECK_FALSE(t.train_step(batch).applied);
  CHECK(t.train_step(batch).applied);
  CHECK_FALSE(t.train_step(batch).applied);
  CHECK(t.flush());
  CHECK_FALSE(t.flush());
  CHECK(t.optimizer().steps() == 2);
}

TEST_CASE("one record for one epoch gives a single-row curve") {
  auto s = testing::toy_setup(1, 16, 8, quick());
  TrainConfig c = small_config();
  c.phases = {{1, 0.0}};
  Trainer t(s.bundle, c, s.data);
  const auto row = t.run_epoch();
  CHECK(t.curve().size() == 1);
  CHECK(row.examples == 1);
  CHECK(row.optimizer_steps == 1);
  CHECK(std::isfinite(row.mean_loss));
  CHECK_THROWS_AS(t.run_epoch(), TrainingError);
}

TEST_CASE("run writes the default schedule into its manifest") {
  auto s = testing::toy_setup(3, 16, 9, quick());
  TrainConfig c;
  c.micro_batch = 2;
  c.accumulation_steps = 1;
  Trainer t(s.bundle, c, s.data);
  const fs::path out = scratch("schedule");
  const RunResult r = t.run({out});
  std::ifstream in(r.manifest);
  const auto m = nlohmann::json::parse(in);
  CHECK(m["executed_pd_sequence"].get<std::vector<double>>() == std::vector<double>{0.0, 0.0, 0.5, 0.5});
  CHECK(m["schedule"]["pd_sequence"].get<std::vector<double>>() == std::vector<double>{0.0, 0.0, 0.5, 0.5});
  CHECK(m["optimizer"]["name"] == "AdamW");
  CHECK(r.checkpoints.size() == 4);
  CHECK(fs::exists(out / "projection.vxpj"));
  std::ifstream csv(out / "loss_curve.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 5);
  CHECK(m["frozen_checksum_now"] == m["bundle"]["frozen_checksum"]);
  fs::remove_all(out);
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run bit for bit") {
  const fs::path full_dir = scratch("full");
  const fs::path part_dir = scratch("part");
  auto a = testing::toy_setup(5, 16, 10, quick());
  Trainer ta(a.bundle, small_config(), a.data);
  const RunResult full = ta.run({full_dir});

  auto b = testing::toy_setup(5, 16, 10, quick());
  {
    Trainer tb(b.bundle, small_config(), b.data);
    RunOptions o{part_dir};
    o.stop_after_epoch = 1;
    tb.run(o);
  }
  auto c = testing::toy_setup(5, 16, 10, quick());
  Trainer tc(c.bundle, small_config(), c.data);
  RunOptions o{part_dir};
  o.resume_from = part_dir / "checkpoints" / "epoch_0001.vxtr";
  const RunResult resumed = tc.run(o);
  CHECK(resumed.curve == full.curve);
  CHECK(c.bundle.projection == a.bundle.projection);
  CHECK(slurp(part_dir / "projection.vxpj") == slurp(full_dir / "projection.vxpj"));
  CHECK(slurp(part_dir / "checkpoints" / "epoch_0002.vxtr") == slurp(full_dir / "checkpoints" / "epoch_0002.vxtr"));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST_CASE("damaged or mismatched checkpoints are refused") {
  const fs::path dir = scratch("damaged");
  auto s = testing::toy_setup(3, 16, 12, quick());
  Trainer t(s.bundle, small_config(), s.data);
  t.run_epoch();
  const fs::path ckpt = dir / "c.vxtr";
  t.save_checkpoint(ckpt);
  t.load_checkpoint(ckpt);

  std::string bytes = read_file(ckpt);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write_file_atomic(dir / "flipped.vxtr", flipped);
  CHECK_THROWS_AS(t.load_checkpoint(dir / "flipped.vxtr"), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'Q';
  write_file_atomic(dir / "magic.vxtr", magic);
  CHECK_THROWS_AS(t.load_checkpoint(dir / "magic.vxtr"), CheckpointError);
  write_file_atomic(dir / "short.vxtr", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(t.load_checkpoint(dir / "short.vxtr"), CheckpointError);

  TrainConfig other = small_config();
  other.seed = 99;
  auto s2 = testing::toy_setup(3, 16, 12, quick());
  Trainer t2(s2.bundle, other, s2.data);
  CHECK_THROWS_AS(t2.load_checkpoint(ckpt), CheckpointError);
  t2.load_checkpoint(ckpt, true);
  CHECK(t2.epochs_done() == 1);
  fs::remove_all(dir);
}

TEST_CASE("two runs with the same seed write identical projection checkpoints") {
  const fs::path d1 = scratch("repro1");
  const fs::path d2 = scratch("repro2");
  auto a = testing::toy_setup(4, 16, 13, quick());
  auto b = testing::toy_setup(4, 16, 13, quick());
  Trainer(a.bundle, small_config(), a.data).run({d1});
  Trainer(b.bundle, small_config(), b.data).run({d2});
  CHECK(slurp(d1 / "checkpoints" / "epoch_0002.vxtr") == slurp(d2 / "checkpoints" / "epoch_0002.vxtr"));
  CHECK(slurp(d1 / "projection.vxpj") == slurp(d2 / "projection.vxpj"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

namespace {

// Language model whose logits are NaN, for the divergence path.
class NanLM final : public LanguageModel {
 public:
  NanLM(std::size_t vocab, std::size_t width) : table_(vocab, width) {}
  std::string name() const override { return "nan"; }
  std::size_t vocab_size() const override { return table_.rows(); }
  std::size_t embed_width() const override { return table_.cols(); }
  const Matrix& embedding_table() const override { return table_; }
  Matrix logits(const Matrix& inputs) const override {
    Matrix out(inputs.rows(), table_.rows());
    for (double& v : out.values()) v = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  Matrix input_gradient(const Matrix& inputs, const Matrix&) const override {
    return Matrix(inputs.rows(), inputs.cols());
  }
  std::uint64_t parameter_checksum() const override { return 1; }

 private:
  Matrix table_;
};

}  // namespace

TEST_CASE("a non-finite loss stops training with diagnostics") {
  auto s = testing::toy_setup(2, 16, 14, quick());
  s.bundle.lm = std::make_shared<NanLM>(s.bundle.tokenizer.size(), s.bundle.projection.out_width());
  Trainer t(s.bundle, small_config(), s.data);
  try {
    t.run_epoch();
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
  }
}
