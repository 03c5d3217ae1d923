#pragma once

#include <span>

namespace odenet {

double mean(std::span<const double> v);
/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> v);
/// Least-squares slope of log(y) against log(x). Requires ≥ 2 positive pairs.
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace odenet
