#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cascade/autonet.hpp"

namespace cascade::autonet {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckResult grad_check(const std::function<double(const TensorD&)>& objective, const TensorD& x,
                           const TensorD& analytic, double h, std::size_t max_coords, std::uint64_t seed) {
  if (analytic.shape() != x.shape()) throw Error(Errc::ShapeMismatch, "analytic gradient shape differs from input");
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords != 0 && max_coords < coords.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  TensorD probe = x;
  for (std::size_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = objective(probe);
    probe[i] = orig - h;
    const double fm = objective(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
    ++result.checked;
  }
  return result;
}

}  // namespace cascade::autonet
