#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fidolab {

// Row-major dense matrix of 64-bit floats. All model weights and
// activations live in this type; desk-scale sizes, no SIMD.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  std::size_t size_bytes() const { return data_.size() * sizeof(double); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// splitmix64 stream. Chosen over <random> engines because the
// uniform_real_distribution mapping is implementation-defined; this
// generator produces the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [-scale, scale].
  double next_symmetric(double scale) {
    return scale * (2.0 * next_uniform() - 1.0);
  }

 private:
  std::uint64_t state_;
};

// C = A * B. Throws std::invalid_argument naming both shapes when
// a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

// Row-wise softmax with max subtraction; rows sum to 1 for finite input.
// -inf entries are legal and map to probability 0 (used for causal masks).
Matrix softmax_rows(const Matrix& m);

// x / sqrt(mean(x^2) + eps) per row, then elementwise gain.
Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps = 1e-6);

// rows x cols matrix with i.i.d. entries uniform in [-scale, scale],
// drawn from the given stream. scale must be > 0.
Matrix seeded_init(Rng& rng, std::size_t rows, std::size_t cols, double scale);

Matrix transpose(const Matrix& m);

void relu_inplace(Matrix& m);

// a += b, shapes must match.
void add_inplace(Matrix& a, const Matrix& b);

}  // namespace fidolab
