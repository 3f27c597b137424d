#include <doctest.h>

#include <filesystem>

#include "test_util.hpp"
#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"
#include "vixen/fusion.hpp"

using namespace vixen;

TEST_CASE("projection of a zero feature map is the bias in every row") {
  Rng rng(1);
  ProjectionLayer layer = ProjectionLayer::initialized(6, 4, rng);
  layer.bias = {0.5, -1.0, 2.0, 0.0};
  Matrix out = project(Matrix(3, 6), layer);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(std::vector<double>(out.row(r).begin(), out.row(r).end()) == layer.bias);
  }
}

TEST_CASE("projection matches a hand-computed 2x3 case") {
  ProjectionLayer layer;
  layer.weight = Matrix{{1.0, 0.0, -1.0}, {0.5, 0.5, 0.5}};
  layer.bias = {1.0, -1.0};
  Matrix f{{1, 2, 3}, {4, 5, 6}};
  CHECK(project(f, layer) == Matrix{{-1.0, 2.0}, {-1.0, 6.5}});
  CHECK_THROWS_AS(project(Matrix(2, 4), layer), DimensionError);
}

TEST_CASE("CLIP-profile projection shape: 144x3072 into e=4096") {
  ProjectionLayer layer(3072, 4096);
  Matrix out = project(Matrix(144, 3072), layer);
  CHECK(out.rows() == 144);
  CHECK(out.cols() == 4096);
}

TEST_CASE("initialization is uniform within 1/sqrt(h) with zero bias") {
  Rng rng(2);
  auto layer = ProjectionLayer::initialized(16, 8, rng);
  for (double w : layer.weight.values()) CHECK(std::abs(w) <= 0.25);
  for (double b : layer.bias) CHECK(b == 0.0);
}

TEST_CASE("fusion strategy contracts") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + uniform_index(rng, 6);
    const std::size_t e = 1 + uniform_index(rng, 9);
    Matrix p = testing::random_matrix(k, e, rng);
    Matrix q = testing::random_matrix(k, e, rng);

    CHECK(fuse(p, q, FusionStrategy::Concatenation).rows() == 2 * k);
    for (auto s : {FusionStrategy::Subtraction, FusionStrategy::Addition, FusionStrategy::Multiplication,
                   FusionStrategy::Mean}) {
      CHECK(fuse(p, q, s).rows() == k);
      CHECK(fuse(p, q, FusionStrategy::Concatenation).rows() == 2 * fuse(p, q, s).rows());
    }
    Matrix concat = fuse(p, q, FusionStrategy::Concatenation);
    CHECK(row_slice(concat, 0, k) == p);
    CHECK(row_slice(concat, k, 2 * k) == q);

    const Matrix zero = fuse(p, p, FusionStrategy::Subtraction);
    for (double v : zero.values()) CHECK(v == 0.0);
    CHECK(fuse(p, p, FusionStrategy::Mean) == p);
    CHECK(fuse(p, Matrix(k, e, 1.0), FusionStrategy::Multiplication) == p);

    CHECK(fuse(p, q, FusionStrategy::Addition) == fuse(q, p, FusionStrategy::Addition));
    CHECK(fuse(p, q, FusionStrategy::Multiplication) == fuse(q, p, FusionStrategy::Multiplication));
    CHECK(fuse(p, q, FusionStrategy::Mean) == fuse(q, p, FusionStrategy::Mean));
    CHECK(fuse(p, q, FusionStrategy::Subtraction) == fuse(q, p, FusionStrategy::Subtraction) * -1.0);
  }
  CHECK_THROWS_AS(fuse(Matrix(2, 3), Matrix(3, 3), FusionStrategy::Addition), DimensionError);
}

TEST_CASE("projection is affine") {
  Rng rng(4);
  ProjectionLayer layer = ProjectionLayer::initialized(7, 5, rng);
  Matrix f = testing::random_matrix(4, 7, rng);
  Matrix g = testing::random_matrix(4, 7, rng);
  for (double alpha : {0.0, 0.3, 0.75, 1.0}) {
    Matrix mix = f * alpha + g * (1.0 - alpha);
    Matrix lhs = project(mix, layer);
    Matrix rhs = project(f, layer) * alpha + project(g, layer) * (1.0 - alpha);
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("parse and print fusion strategies") {
  for (auto s : kAllFusionStrategies) CHECK(parse_fusion(to_string(s)) == s);
  CHECK(parse_fusion("concatenation") == FusionStrategy::Concatenation);
  CHECK_THROWS_AS(parse_fusion("max"), ConfigError);
}

TEST_CASE("projection gradients match central finite differences for every strategy") {
  Rng rng(5);
  for (auto strategy : kAllFusionStrategies) {
    for (int trial = 0; trial < 4; ++trial) {
      const std::size_t k = 5, h = 7, e = 3;
      ProjectionLayer layer = ProjectionLayer::initialized(h, e, rng);
      for (double& b : layer.bias) b = uniform(rng, -0.5, 0.5);
      Matrix f = testing::random_matrix(k, h, rng);
      Matrix f2 = testing::random_matrix(k, h, rng);
      Matrix coeff = testing::random_matrix(fused_length(k, strategy), e, rng);

      auto loss = [&] {
        Matrix s = fuse(project(f, layer), project(f2, layer), strategy);
        double acc = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) acc += coeff.values()[i] * s.values()[i];
        return acc * acc;
      };
      // analytic: dL/ds = 2 (C.s) C
      Matrix p1 = project(f, layer), p2 = project(f2, layer);
      Matrix s = fuse(p1, p2, strategy);
      double dot = 0.0;
      for (std::size_t i = 0; i < s.size(); ++i) dot += coeff.values()[i] * s.values()[i];
      auto g = fuse_backward(p1, p2, strategy, coeff * (2.0 * dot));
      ProjectionGrad grad(h, e);
      project_backward(f, g.first, grad);
      project_backward(f2, g.second, grad);

      Matrix fd_w = testing::finite_difference(layer.weight, loss);
      Matrix fd_b(1, e);
      for (std::size_t j = 0; j < e; ++j) {
        const double saved = layer.bias[j];
        layer.bias[j] = saved + 1e-6;
        const double up = loss();
        layer.bias[j] = saved - 1e-6;
        const double down = loss();
        layer.bias[j] = saved;
        fd_b(0, j) = (up - down) / 2e-6;
      }
      CHECK(testing::relative_error(grad.weight, fd_w) < 1e-4);
      if (strategy == FusionStrategy::Subtraction) {
        // the bias cancels in p - q
        for (double b : grad.bias) CHECK(b == 0.0);
        CHECK(max_abs_diff(fd_b, Matrix(1, e)) < 1e-6);
      } else {
        CHECK(testing::relative_error(Matrix(1, e, grad.bias), fd_b) < 1e-4);
      }
    }
  }
}

TEST_CASE("assemble_prompt appends embedded prefix rows after the visual rows") {
  const auto tok = Tokenizer::from_corpus({std::string(kDifferencesPrefix)});
  Rng rng(6);
  Matrix table = testing::random_matrix(tok.size(), 4, rng);
  Matrix visual = testing::random_matrix(6, 4, rng);

  CHECK(assemble_prompt(visual, "", tok, table) == visual);

  const auto n = tok.encode(kDifferencesPrefix).size();
  Matrix full = assemble_prompt(visual, kDifferencesPrefix, tok, table);
  CHECK(full.rows() == visual.rows() + n);
  CHECK(row_slice(full, 0, 6) == visual);
  const auto first_id = static_cast<std::size_t>(tok.encode(kDifferencesPrefix)[0]);
  CHECK(std::equal(full.row(6).begin(), full.row(6).end(), table.row(first_id).begin()));

  Matrix instr = assemble_prompt(visual, prefix_text("edit-instructions"), tok, table);
  CHECK(instr.rows() == visual.rows() + tok.encode("Edit instructions:").size());

  CHECK_THROWS_AS(assemble_prompt(Matrix(2, 5), "x", tok, table), DimensionError);
}

TEST_CASE("projection file round-trips and rejects corruption") {
  Rng rng(7);
  auto layer = ProjectionLayer::initialized(5, 3, rng);
  layer.bias = {0.1, 0.2, 0.3};
  const auto path = std::filesystem::temp_directory_path() / "vixen_projection_test.bin";
  save_projection(path, layer);
  CHECK(load_projection(path) == layer);

  std::string bytes = read_file(path);
  CHECK(bytes.substr(0, 4) == "VXPJ");
  CHECK(bytes.size() == 4 + 4 + 8 + 8 + (15 + 3) * 8 + 4);

  std::string bad_magic = bytes;
  bad_magic[0] = 'Z';
  CHECK_THROWS_AS(deserialize_projection(bad_magic), CheckpointError);
  std::string flipped = bytes;
  flipped[40] ^= 0x01;
  CHECK_THROWS_AS(deserialize_projection(flipped), CheckpointError);
  CHECK_THROWS_AS(deserialize_projection(bytes.substr(0, 10)), CheckpointError);
  std::filesystem::remove(path);
}
