#pragma once

#include <functional>

// Adaptive 1-d quadrature on Gauss-Kronrod 15(7) panels with bisection.
// Default tolerances follow the project convention: absolute 1e-9.

namespace shelab::quad {

struct Result {
    double value = 0.0;
    double error = 0.0;   // estimated absolute error
    int panels = 0;
    bool converged = false;
};

struct Options {
    double abs_tol = 1e-9;
    double rel_tol = 1e-10;
    int max_panels = 4096;
};

// Integral of f over [a, b].  Returns the estimate with an error bound; does
// not throw on non-convergence (callers decide, since some only need bounds).
Result integrate(const std::function<double(double)>& f, double a, double b,
                 const Options& opt = Options{});

// Same, but throws NumericError with the residual when not converged.
double integrate_checked(const std::function<double(double)>& f, double a, double b,
                         const Options& opt = Options{});

}  // namespace shelab::quad
