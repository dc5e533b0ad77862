#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace graspbench {

/// Dense f64 tensor, row-major.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    data.assign(static_cast<size_t>(n), 0.0);
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  // 2-D accessors.
  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }
};

}  // namespace graspbench
