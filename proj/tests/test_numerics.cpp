#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "fidolab/numerics.hpp"

using namespace fidolab;

namespace {

// Independent brute-force oracle for matmul.
Matrix matmul_naive(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  }
  return c;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  return seeded_init(rng, r, c, 1.0);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("matmul scalar case") {
  Matrix a(1, 1), b(1, 1);
  a.at(0, 0) = 2.0;
  b.at(0, 0) = 3.0;
  CHECK(matmul(a, b).at(0, 0) == 6.0);
}

TEST_CASE("matmul identity leaves matrix unchanged") {
  Rng rng(7);
  Matrix m = random_matrix(rng, 3, 5);
  Matrix id(3, 3);
  for (std::size_t i = 0; i < 3; ++i) id.at(i, i) = 1.0;
  CHECK(max_abs_diff(matmul(id, m), m) == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(11);
  Matrix a = random_matrix(rng, 4, 5);
  Matrix b = random_matrix(rng, 5, 2);
  CHECK(max_abs_diff(matmul(a, b), matmul_naive(a, b)) <= 1e-12);
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  Matrix a(4, 5), b(3, 2);
  try {
    matmul(a, b);
    FAIL("expected std::invalid_argument");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("4x5") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random triples") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Matrix a = random_matrix(rng, 3, 4);
    Matrix b = random_matrix(rng, 4, 5);
    Matrix c = random_matrix(rng, 5, 2);
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-9);
  }
}

TEST_CASE("matmul is pure") {
  Rng rng(3);
  Matrix a = random_matrix(rng, 4, 4);
  Matrix b = random_matrix(rng, 4, 4);
  CHECK(max_abs_diff(matmul(a, b), matmul(a, b)) == 0.0);
}

TEST_CASE("softmax symmetric row") {
  Matrix m(1, 2);
  Matrix s = softmax_rows(m);
  CHECK(s.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax large magnitude does not overflow") {
  Matrix m(1, 2);
  m.at(0, 0) = 1000.0;
  Matrix s = softmax_rows(m);
  CHECK(std::isfinite(s.at(0, 0)));
  CHECK(s.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax matches direct exp/sum oracle") {
  Matrix m(1, 3);
  m.at(0, 0) = 1.0;
  m.at(0, 1) = 2.0;
  m.at(0, 2) = 3.0;
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  Matrix s = softmax_rows(m);
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(s.at(0, static_cast<std::size_t>(j)) - std::exp(1.0 + j) / z) <= 1e-12);
  }
}

TEST_CASE("softmax rows sum to one for random input") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Matrix m = seeded_init(rng, 1 + seed % 7, 1 + (seed * 3) % 11, 50.0);
    Matrix s = softmax_rows(m);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double sum = 0.0;
      for (double v : s.row(i)) {
        CHECK(std::isfinite(v));
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("rms_norm of ones with unit gain is identity") {
  Matrix x(1, 4);
  for (double& v : x.data()) v = 1.0;
  std::vector<double> gain(4, 1.0);
  Matrix y = rms_norm(x, gain);
  for (double v : y.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("rms_norm zero row stays zero") {
  Matrix x(1, 4);
  std::vector<double> gain(4, 1.0);
  Matrix y = rms_norm(x, gain);
  for (double v : y.data()) {
    CHECK(std::isfinite(v));
    CHECK(v == 0.0);
  }
}

TEST_CASE("rms_norm matches hand oracle on [3,4]") {
  Matrix x(1, 2);
  x.at(0, 0) = 3.0;
  x.at(0, 1) = 4.0;
  std::vector<double> gain(2, 1.0);
  Matrix y = rms_norm(x, gain);
  const double denom = std::sqrt(12.5 + 1e-6);
  CHECK(std::abs(y.at(0, 0) - 3.0 / denom) <= 1e-9);
  CHECK(std::abs(y.at(0, 1) - 4.0 / denom) <= 1e-9);
}

TEST_CASE("rms_norm rejects gain length mismatch") {
  Matrix x(1, 4);
  std::vector<double> gain(3, 1.0);
  CHECK_THROWS_AS(rms_norm(x, gain), std::invalid_argument);
}

TEST_CASE("seeded_init deterministic per seed") {
  Rng a(42), b(42);
  Matrix ma = seeded_init(a, 6, 7, 0.5);
  Matrix mb = seeded_init(b, 6, 7, 0.5);
  CHECK(ma.data() == mb.data());  // bitwise
}

TEST_CASE("seeded_init respects range bound") {
  Rng rng(9);
  Matrix m = seeded_init(rng, 50, 50, 0.02);
  for (double v : m.data()) {
    CHECK(v >= -0.02);
    CHECK(v <= 0.02);
  }
}

TEST_CASE("different seeds differ") {
  Rng a(1), b(2);
  Matrix ma = seeded_init(a, 4, 4, 1.0);
  Matrix mb = seeded_init(b, 4, 4, 1.0);
  CHECK(ma.data() != mb.data());
}

TEST_CASE("seeded_init rejects non-positive scale") {
  Rng rng(0);
  CHECK_THROWS_AS(seeded_init(rng, 2, 2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(seeded_init(rng, 2, 2, -1.0), std::invalid_argument);
}

TEST_CASE("kernels keep entries finite on random input") {
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    Rng rng(seed);
    Matrix a = random_matrix(rng, 8, 8);
    Matrix b = random_matrix(rng, 8, 8);
    const Matrix prod = matmul(a, b);
    for (double v : prod.data()) CHECK(std::isfinite(v));
    std::vector<double> gain(8, 1.0);
    const Matrix normed = rms_norm(a, gain);
    for (double v : normed.data()) CHECK(std::isfinite(v));
  }
}
