#include "xspdc/special.hpp"

#include <cmath>
#include <complex>
#include <limits>

#include "xspdc/constants.hpp"

namespace xspdc {

double sinc(double x) {
  if (std::fabs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

double sine_integral(double x) {
  const double ax = std::fabs(x);
  if (ax == 0.0) return 0.0;
  constexpr double eps = 1e-16;
  double si = 0.0;
  if (ax < 2.0) {
    // Power series: sum (-1)^k x^(2k+1) / ((2k+1) (2k+1)!)
    double term = ax;
    si = ax;
    for (int k = 1; k < 60; ++k) {
      term *= -ax * ax / ((2.0 * k) * (2.0 * k + 1.0));
      const double add = term / (2.0 * k + 1.0);
      si += add;
      if (std::fabs(add) < eps * std::fabs(si)) break;
    }
  } else {
    // Continued fraction for E1(i x), modified Lentz.
    using cd = std::complex<double>;
    constexpr double tiny = 1e-300;
    cd b(1.0, ax);
    cd c(1.0 / tiny, 0.0);
    cd d = 1.0 / b;
    cd h = d;
    for (int i = 2; i < 100000; ++i) {
      const double a = -static_cast<double>((i - 1) * (i - 1));
      b += 2.0;
      d = 1.0 / (a * d + b);
      c = b + a / c;
      const cd del = c * d;
      h *= del;
      if (std::fabs(del.real() - 1.0) + std::fabs(del.imag()) < eps) break;
    }
    h *= cd(std::cos(ax), -std::sin(ax));
    si = 0.5 * kPi + h.imag();
  }
  return x < 0.0 ? -si : si;
}

double sinc2_antiderivative(double x) {
  if (std::fabs(x) < 1e-3) {
    const double x2 = x * x;
    return x * (1.0 - x2 / 9.0 + 2.0 * x2 * x2 / 225.0);
  }
  const double s = std::sin(x);
  return sine_integral(2.0 * x) - s * s / x;
}

double sinc2_mean(double x1, double x2) {
  const double dx = x2 - x1;
  if (std::fabs(dx) < 1e-3) {
    const double a = sinc(x1), m = sinc(0.5 * (x1 + x2)), b = sinc(x2);
    return (a * a + 4.0 * m * m + b * b) / 6.0;
  }
  return (sinc2_antiderivative(x2) - sinc2_antiderivative(x1)) / dx;
}

}  // namespace xspdc
