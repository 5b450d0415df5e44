#include "fidolab/numerics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fidolab {

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch (" + shape_of(a) +
                                ") * (" + shape_of(b) + ")");
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  // i-k-j order keeps the inner loop contiguous over b and c.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const double* brow = pb + kk * m;
      double* crow = pc + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i);
    auto dst = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : src) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] /= sum;
  }
  return out;
}

Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps) {
  if (gain.size() != x.cols()) {
    std::ostringstream os;
    os << "rms_norm: gain length " << gain.size() << " != cols " << x.cols();
    throw std::invalid_argument(os.str());
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto src = x.row(i);
    auto dst = out.row(i);
    double ms = 0.0;
    for (double v : src) ms += v * v;
    ms /= static_cast<double>(x.cols());
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] * inv * gain[j];
  }
  return out;
}

Matrix seeded_init(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  if (!(scale > 0.0)) {
    throw std::invalid_argument("seeded_init: scale must be > 0");
  }
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_symmetric(scale);
  return m;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t.at(j, i) = m.at(i, j);
  }
  return t;
}

void relu_inplace(Matrix& m) {
  for (double& v : m.data()) {
    if (v < 0.0) v = 0.0;
  }
}

void add_inplace(Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("add_inplace: shape mismatch (" + shape_of(a) +
                                ") += (" + shape_of(b) + ")");
  }
  for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] += b.data()[i];
}

}  // namespace fidolab
