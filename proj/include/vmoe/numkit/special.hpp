#pragma once

namespace vmoe::numkit {

// Standard normal CDF via the complementary error function.
double std_normal_cdf(double z);
double std_normal_pdf(double z);

// Exact GeLU, x * Phi(x), and its derivative.
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace vmoe::numkit
