#pragma once

namespace xspdc {

/// sin(x)/x with sinc(0) = 1.
double sinc(double x);

/// Sine integral Si(x) = int_0^x sin(t)/t dt.
double sine_integral(double x);

/// Antiderivative of sinc^2 with F(0) = 0: Si(2x) - sin^2(x)/x.
double sinc2_antiderivative(double x);

/// Mean of sinc^2 over [x1, x2] (order-independent).
double sinc2_mean(double x1, double x2);

}  // namespace xspdc
