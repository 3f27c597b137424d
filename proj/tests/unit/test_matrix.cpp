#include <doctest.h>

#include "test_util.hpp"
#include "vixen/error.hpp"
#include "vixen/matrix.hpp"

using namespace vixen;

TEST_CASE("matmul matches hand computation") {
  Matrix a{{1, 2, 3}, {4, 5, 6}};
  Matrix b{{1, 0}, {0, 1}, {1, 1}};
  CHECK(matmul(a, b) == Matrix{{4, 5}, {10, 11}});
  CHECK(matmul_nt(a, transpose(b)) == matmul(a, b));
  CHECK(matmul_tn(transpose(a), b) == matmul(a, b));
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("row results do not depend on the other rows") {
  Rng rng(3);
  Matrix a = testing::random_matrix(7, 5, rng);
  Matrix b = testing::random_matrix(5, 4, rng);
  Matrix full = matmul(a, b);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    Matrix one = matmul(row_slice(a, r, r + 1), b);
    CHECK(one == row_slice(full, r, r + 1));
  }
}

TEST_CASE("vstack and row_slice") {
  Matrix a{{1, 2}};
  Matrix b{{3, 4}, {5, 6}};
  Matrix s = vstack(a, b);
  CHECK(s.rows() == 3);
  CHECK(row_slice(s, 1, 3) == b);
  CHECK(vstack(Matrix(0, 2), b) == b);
  CHECK_THROWS_AS(vstack(a, Matrix{{1, 2, 3}}), DimensionError);
  CHECK_THROWS_AS(row_slice(s, 2, 4), DimensionError);
}

TEST_CASE("checksum tracks every bit and the shape") {
  Matrix a{{1, 2}, {3, 4}};
  Matrix b = a;
  CHECK(checksum(a) == checksum(b));
  b(1, 1) = std::nextafter(4.0, 5.0);
  CHECK(checksum(a) != checksum(b));
  CHECK(checksum(Matrix(1, 4)) != checksum(Matrix(2, 2)));
}

TEST_CASE("uniform_index stays in range and shuffle is a permutation") {
  Rng rng(11);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  shuffle(v, rng);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  for (int i = 0; i < 1000; ++i) CHECK(uniform_index(rng, 7) < 7);

  Rng copy = deserialize_rng(serialize_rng(rng));
  CHECK(copy() == rng());
}
