#include "vmoe/numkit/special.hpp"

#include <cmath>
#include <numbers>

namespace vmoe::numkit {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double gelu_scalar(double x) { return x * std_normal_cdf(x); }

double gelu_grad_scalar(double x) { return std_normal_cdf(x) + x * std_normal_pdf(x); }

}  // namespace vmoe::numkit
