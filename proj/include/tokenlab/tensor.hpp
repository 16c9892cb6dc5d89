#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokenlab {

// Error carrying the failing module and key, mapped to CLI exit codes.
struct TkError : std::runtime_error {
  std::string module;
  std::string key;
  int exit_code;  // 1 usage, 2 numeric failure, 3 acceptance gate
  TkError(std::string mod, std::string k, std::string msg, int code = 2)
      : std::runtime_error(mod + "/" + k + ": " + msg),
        module(std::move(mod)), key(std::move(k)), exit_code(code) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major array of 64-bit floats.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(shape_numel(shape), fill) {
    for (std::size_t d : shape)
      if (d == 0) throw TkError("tensor", "shape", "zero dimension in " + shape_str(shape));
  }
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw TkError("tensor", "shape",
                    "shape " + shape_str(shape) + " does not match data length " +
                        std::to_string(data.size()));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  // rows/cols of the trailing matrix view: [..., m, n] -> (prod(leading)*m, n)
  std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows_collapsed() const { return shape.empty() ? 1 : numel() / shape.back(); }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw TkError("tensor", "reshape",
                    "cannot view " + shape_str(shape) + " as " + shape_str(s));
    return Tensor(std::move(s), data);
  }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline double sum_sq_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s;
}

}  // namespace tokenlab
