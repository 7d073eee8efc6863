// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace selftof {

double pairwise_sum(const double* x, std::size_t n) {
  if (n == 0) return 0.0;
  if (n == 1) return x[0];
  if (n == 2) return x[0] + x[1];
  if (n <= 8) {
    double s = x[0];
    for (std::size_t i = 1; i < n; ++i) s += x[i];
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

void values_mean_std(const double* vals, std::size_t n, double& mean, double& stddev) {
  mean = pairwise_sum(vals, n) / static_cast<double>(n);
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = vals[i] - mean;
    sq[i] = d * d;
  }
  stddev = std::sqrt(pairwise_sum(sq.data(), n) / static_cast<double>(n));
}

void block_mean_std(const double* img, int width, int y0, int y1, int x0, int x1,
                    double& mean, double& stddev) {
  const int bw = x1 - x0;
  const int bh = y1 - y0;
  std::vector<double> vals(static_cast<size_t>(bw) * bh);
  std::size_t k = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) vals[k++] = img[static_cast<size_t>(y) * width + x];
  values_mean_std(vals.data(), k, mean, stddev);
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median_of: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace selftof
