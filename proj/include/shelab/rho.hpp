#pragma once

#include <memory>
#include <string>
#include <vector>

// Diffusion coefficients rho as catalogued Lipschitz functions, with the
// truncation and mollification operators applied ahead of comparison runs.

namespace shelab::rho {

class DiffusionCoefficient {
public:
    enum class Kind {
        Linear,     // rho(u) = lambda u
        Affine,     // rho(u) = a + b u   (a != 0 admitted for oracle runs only)
        Tabulated,  // grid with linear interpolation, zero outside
        Truncated,  // rho_N of an inner coefficient
        Mollified,  // phi2_eps * inner (inner must have compact support)
    };

    static DiffusionCoefficient linear(double lambda);
    static DiffusionCoefficient affine(double a, double b);
    static DiffusionCoefficient tabulated(std::vector<double> grid_x,
                                          std::vector<double> grid_f);
    static DiffusionCoefficient zero() { return linear(0.0); }

    double operator()(double u) const;
    Kind kind() const { return kind_; }
    double lip_estimate() const { return lip_estimate_; }
    bool vanishes_at_zero() const { return vanishes_at_zero_; }
    double linear_lambda() const { return b_; }
    double affine_offset() const { return a_; }
    bool compact_support() const;
    // upper end of the support when compact
    double support_bound() const;
    std::string describe() const;

    friend DiffusionCoefficient truncate_rho(const DiffusionCoefficient& rho, double N);
    friend DiffusionCoefficient mollify_rho(const DiffusionCoefficient& rho, double eps);

private:
    Kind kind_ = Kind::Linear;
    double a_ = 0.0;  // affine offset
    double b_ = 0.0;  // slope / lambda
    std::vector<double> grid_x_, grid_f_;
    std::shared_ptr<const DiffusionCoefficient> inner_;
    double trunc_n_ = 0.0;
    double moll_eps_ = 0.0;
    double lip_estimate_ = 0.0;
    bool vanishes_at_zero_ = true;
};

// rho_N(x) = rho(x) 1{|x|<=N} + rho(sgn(x) N)(2 - |x|/N) 1{N<=|x|<=2N}.
DiffusionCoefficient truncate_rho(const DiffusionCoefficient& rho, double N);

// rho_eps = phi2_eps * rho with the same even C^2 mollifier family as the
// correlation module.  Requires compact support (truncate first otherwise).
DiffusionCoefficient mollify_rho(const DiffusionCoefficient& rho, double eps);

}  // namespace shelab::rho
