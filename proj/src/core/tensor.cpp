#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

namespace vib {

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

std::size_t shape_product(const Shape& s) {
  std::size_t p = 1;
  for (auto d : s) p *= d;
  return p;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  if (data_.size() != shape_product(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

Tensor Tensor::from(std::initializer_list<std::size_t> shape, std::initializer_list<double> values) {
  return Tensor(Shape(shape), std::vector<double>(values));
}

std::size_t Tensor::features() const {
  if (shape_.empty()) return 0;
  return data_.size() / shape_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_product(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor slice_rows(const Tensor& t, std::size_t first, std::size_t count) {
  if (first + count > t.batch()) throw DimensionError("row slice out of range");
  Shape s = t.shape();
  s[0] = count;
  const std::size_t f = t.features();
  std::vector<double> d(t.data() + first * f, t.data() + (first + count) * f);
  return Tensor(std::move(s), std::move(d));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape s = t.shape();
  s[0] = rows.size();
  const std::size_t f = t.features();
  std::vector<double> d(rows.size() * f);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.batch()) throw DimensionError("gather index out of range");
    std::copy_n(t.data() + rows[i] * f, f, d.data() + i * f);
  }
  return Tensor(std::move(s), std::move(d));
}

namespace {

// Floating-point contraction is disabled for the library so every product is
// rounded the same way wherever it appears; the kernel fuses explicitly.
inline double madd(double a, double b, double c) {
#ifdef __FMA__
  return std::fma(a, b, c);
#else
  return c + a * b;
#endif
}

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 8;

// 4x8 register tile over a packed strip of B (k rows of 8). Accumulators start
// from C so the summation order per output is exactly c + a0*b0 + a1*b1 + ...
// Every lane is its own output, so vector and scalar paths agree bit for bit.
#if defined(__AVX2__) && defined(__FMA__)
inline void tile_4x8(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* bp, double* c) {
  __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + n), c11 = _mm256_loadu_pd(c + n + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * n), c21 = _mm256_loadu_pd(c + 2 * n + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * n), c31 = _mm256_loadu_pd(c + 3 * n + 4);
  const double *a0 = a, *a1 = a + lda, *a2 = a + 2 * lda, *a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp + p * kColBlock), b1 = _mm256_loadu_pd(bp + p * kColBlock + 4);
    __m256d v = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(v, b0, c00);
    c01 = _mm256_fmadd_pd(v, b1, c01);
    v = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(v, b0, c10);
    c11 = _mm256_fmadd_pd(v, b1, c11);
    v = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(v, b0, c20);
    c21 = _mm256_fmadd_pd(v, b1, c21);
    v = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(v, b0, c30);
    c31 = _mm256_fmadd_pd(v, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + n, c10);
  _mm256_storeu_pd(c + n + 4, c11);
  _mm256_storeu_pd(c + 2 * n, c20);
  _mm256_storeu_pd(c + 2 * n + 4, c21);
  _mm256_storeu_pd(c + 3 * n, c30);
  _mm256_storeu_pd(c + 3 * n + 4, c31);
}
#else
inline void tile_4x8(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* bp, double* c) {
  double acc[kRowBlock][kColBlock];
  for (std::size_t i = 0; i < kRowBlock; ++i)
    for (std::size_t j = 0; j < kColBlock; ++j) acc[i][j] = c[i * n + j];
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = bp + p * kColBlock;
    for (std::size_t i = 0; i < kRowBlock; ++i) {
      const double av = a[i * lda + p];
      for (std::size_t j = 0; j < kColBlock; ++j) acc[i][j] = madd(av, brow[j], acc[i][j]);
    }
  }
  for (std::size_t i = 0; i < kRowBlock; ++i)
    for (std::size_t j = 0; j < kColBlock; ++j) c[i * n + j] = acc[i][j];
}
#endif

// Same recurrence, one output at a time, reading B in place.
inline void tile_generic(std::size_t rows, std::size_t cols, std::size_t n, std::size_t k, const double* a,
                         std::size_t lda, const double* b, double* c) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double s = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) s = madd(a[i * lda + p], b[p * n + j], s);
      c[i * n + j] = s;
    }
  }
}

// Packed single-row tail: rows below the 4-row blocks still use the strip.
inline void row_packed(std::size_t k, const double* a, const double* bp, double* c) {
  for (std::size_t j = 0; j < kColBlock; ++j) {
    double s = c[j];
    for (std::size_t p = 0; p < k; ++p) s = madd(a[p], bp[p * kColBlock + j], s);
    c[j] = s;
  }
}

}  // namespace

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                     double* c) {
  const std::size_t m_full = m - m % kRowBlock;
  const std::size_t n_full = n - n % kColBlock;
  thread_local std::vector<double> strip;
  strip.resize(k * kColBlock);
  for (std::size_t j = 0; j < n_full; j += kColBlock) {
    for (std::size_t p = 0; p < k; ++p) std::copy_n(b + p * n + j, kColBlock, strip.data() + p * kColBlock);
    for (std::size_t i = 0; i < m_full; i += kRowBlock) tile_4x8(n, k, a + i * k, k, strip.data(), c + i * n + j);
    for (std::size_t i = m_full; i < m; ++i) row_packed(k, a + i * k, strip.data(), c + i * n + j);
  }
  if (n_full < n) tile_generic(m, n - n_full, n, k, a, k, b + n_full, c + n_full);
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t blk = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += blk)
    for (std::size_t j0 = 0; j0 < cols; j0 += blk)
      for (std::size_t i = i0; i < std::min(rows, i0 + blk); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + blk); ++j) dst[j * rows + i] = src[i * cols + j];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace vib
