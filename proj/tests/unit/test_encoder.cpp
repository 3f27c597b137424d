#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "vixen/encoder.hpp"
#include "vixen/error.hpp"

using namespace vixen;

namespace {

EncoderConfig toy(std::size_t patch, std::size_t h, std::uint64_t seed, bool zero_bias = true) {
  EncoderConfig cfg;
  cfg.patch_size = patch;
  cfg.h = h;
  cfg.seed = seed;
  cfg.zero_bias = zero_bias;
  return cfg;
}

// Same formula as tests/oracles/toy_encoder_golden.py.
Image golden_image() {
  Image img(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<double>((y * 7 + x * 3 + c * 11) % 256) / 255.0;
  return img;
}

}  // namespace

TEST_CASE("all-zero image maps to all-zero features") {
  ToyPatchEncoder enc(toy(16, 8, 1));
  FeatureMap f = enc.encode(Image(48, 48, 0.0));
  CHECK(f.rows() == 9);
  CHECK(f.cols() == 8);
  for (double v : f.values()) CHECK(v == 0.0);
}

TEST_CASE("seed 7 encoder matches the independently computed golden output") {
  std::ifstream in(testing::data_path("toy_encoder_seed7.golden"));
  REQUIRE(in);
  std::size_t k = 0, h = 0;
  in >> k >> h;
  Matrix expected(k, h);
  for (double& v : expected.values()) in >> v;

  ToyPatchEncoder enc(toy(16, 8, 7));
  FeatureMap got = enc.encode(golden_image());
  REQUIRE(got.rows() == k);
  REQUIRE(got.cols() == h);
  CHECK(testing::relative_error(got, expected) < 1e-12);
}

TEST_CASE("describe reports the (k, h) contract") {
  auto c = describe(toy(16, 8, 0));
  CHECK(c.k_for(48, 48) == 9);
  CHECK(c.h == 8);
  CHECK(c.k_formula() == "(H/16)*(W/16)");

  // CLIP-style grid: 12x12 positions flattened into k rows of width 3072.
  auto clip_grid = describe(toy(1, 3072, 0));
  CHECK(clip_grid.k_for(12, 12) == 144);
  CHECK(clip_grid.h == 3072);

  CHECK_THROWS_AS(c.k_for(40, 48), DimensionError);
  CHECK_THROWS_AS(c.k_for(8, 8), DimensionError);
}

TEST_CASE("encode is deterministic and shape-conforming") {
  Rng rng(5);
  ToyPatchEncoder enc(toy(8, 6, 42, false));
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t h = 8 * (1 + uniform_index(rng, 4));
    const std::size_t w = 8 * (1 + uniform_index(rng, 4));
    Image img = testing::random_image(h, w, rng);
    FeatureMap a = enc.encode(img);
    FeatureMap b = enc.encode(img);
    CHECK(a == b);
    CHECK(a.rows() == enc.describe().k_for(h, w));
    CHECK(a.cols() == 6);
  }
  ToyPatchEncoder same(toy(8, 6, 42, false));
  CHECK(same.parameter_checksum() == enc.parameter_checksum());
}

TEST_CASE("zero-bias toy encoder is linear in pixel scale") {
  Rng rng(9);
  ToyPatchEncoder enc(toy(4, 5, 3));
  Image img = testing::random_image(16, 12, rng);
  const FeatureMap base = enc.encode(img);
  for (double a : {0.0, 0.25, 0.5, 1.0}) {
    Image scaled = img;
    for (double& v : scaled.pixels) v *= a;
    CHECK(max_abs_diff(enc.encode(scaled), base * a) < 1e-12);
  }
}

TEST_CASE("encode rejects bad images") {
  ToyPatchEncoder enc(toy(16, 8, 0));
  CHECK_THROWS_AS(enc.encode(Image(40, 48)), DimensionError);
  Image bright(16, 16, 0.5);
  bright.pixels[5] = 1.5;
  CHECK_THROWS_AS(enc.encode(bright), ImageIoError);
}

TEST_CASE("adapter encoder enforces its declared shape and names itself in errors") {
  AdapterEncoder good("fake-clip", 144, 16, [](const Image&) { return Matrix(144, 16, 0.5); });
  CHECK(good.encode(Image(4, 4)).rows() == 144);
  CHECK(good.describe().k_for(999, 7) == 144);

  AdapterEncoder bad("wrong-shape", 144, 16, [](const Image&) { return Matrix(143, 16); });
  try {
    bad.encode(Image(4, 4));
    FAIL("expected AdapterError");
  } catch (const AdapterError& e) {
    CHECK(e.adapter() == "wrong-shape");
    CHECK(std::string(e.what()).find("143x16") != std::string::npos);
  }

  AdapterEncoder throwing("remote", 1, 1, [](const Image&) -> Matrix { throw std::runtime_error("timeout"); });
  CHECK_THROWS_WITH_AS(throwing.encode(Image(1, 1)), "adapter 'remote': timeout", AdapterError);
}

TEST_CASE("PNG and JPEG ingestion normalize to [0, 1]") {
  Image png = load_image(testing::data_path("two_tone.png"));
  CHECK(png.height == 16);
  CHECK(png.width == 32);
  CHECK(png.at(0, 0, 0) == doctest::Approx(1.0));
  CHECK(png.at(0, 0, 2) == doctest::Approx(0.0));
  CHECK(png.at(0, 31, 2) == doctest::Approx(1.0));

  Image jpg = load_image(testing::data_path("two_tone.jpg"));
  CHECK(jpg.height == 16);
  CHECK(jpg.width == 32);
  CHECK(jpg.at(8, 4, 0) > 0.9);
  CHECK(jpg.at(8, 28, 2) > 0.9);
  validate(jpg);

  const auto tmp = std::filesystem::temp_directory_path() / "vixen_png_roundtrip.png";
  Rng rng(1);
  Image img = testing::random_image(8, 8, rng);
  for (double& v : img.pixels) v = std::round(v * 255.0) / 255.0;
  save_png(tmp, img);
  Image back = load_image(tmp);
  CHECK(back.pixels == img.pixels);
  std::filesystem::remove(tmp);

  CHECK_THROWS_AS(load_image(testing::data_path("toy_encoder_seed7.golden")), ImageIoError);
}
