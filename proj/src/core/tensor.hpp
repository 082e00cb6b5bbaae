#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vib {

// Error taxonomy shared by the whole core. The C API maps each class onto a
// status code, so keep this list in sync with vib_status.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};
struct IoError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  ConfigError(const std::string& what, std::string key) : Error(what), key(std::move(key)) {}
  std::string key;
};
struct DegenerateArchitecture : Error {
  using Error::Error;
};
struct Diverged : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from(std::initializer_list<std::size_t> shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // Leading dimension is the batch; everything after it is the feature block.
  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t features() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& s);

/// Rows [first, first + count) of the leading dimension.
Tensor slice_rows(const Tensor& t, std::size_t first, std::size_t count);
/// Gather rows by index along the leading dimension.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

/// C[M,N] += A[M,K] * B[K,N], all row-major. Each output accumulates its K
/// products in ascending k order with a single accumulator, so dropping a k
/// whose contribution is exactly zero leaves every output bit-identical.
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                     double* c);

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace vib
