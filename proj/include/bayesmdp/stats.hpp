#pragma once

#include <cmath>
#include <span>
#include <utility>

namespace bayesmdp {

/// Sample mean and its standard error. Sums are shifted by the first value, so a
/// constant sample gives that value and a zero standard error exactly.
inline std::pair<double, double> mean_and_std_error(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n == 0) return {0.0, 0.0};
  const double shift = xs.front();
  double sum = 0.0;
  for (double x : xs) sum += x - shift;
  const double dn = static_cast<double>(n);
  const double offset = sum / dn;
  if (n < 2) return {shift + offset, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - shift - offset) * (x - shift - offset);
  return {shift + offset, std::sqrt(ss / (dn - 1.0) / dn)};
}

}  // namespace bayesmdp
