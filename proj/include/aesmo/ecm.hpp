#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <optional>

#include "aesmo/eig.hpp"
#include "aesmo/errors.hpp"

namespace aesmo {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using RowVec4 = Eigen::RowVector4d;

inline bool all_finite(double v) { return std::isfinite(v); }
template <typename... T>
inline bool all_finite(double v, T... rest) {
    return std::isfinite(v) && all_finite(rest...);
}

/// Physical constants of the dual-polarization cell model. Resistances in
/// ohm, capacitances in farad, capacity in coulomb.
struct CellParams {
    double r_int = 0.0;
    double r_s = 0.0;
    double c_s = 0.0;
    double r_f = 0.0;
    double c_f = 0.0;
    double q_total = 0.0;

    double a2() const { return 1.0 / (r_s * c_s); }
    double a3() const { return 1.0 / (r_f * c_f); }
    double b1() const { return 1.0 / q_total; }
    double b2() const { return 1.0 / c_s; }
    double b3() const { return 1.0 / c_f; }
    double r_bar() const { return 1.0 / r_int; }

    void validate() const {
        if (!(r_int > 0 && r_s > 0 && c_s > 0 && r_f > 0 && c_f > 0 && q_total > 0))
            throw validation_error("CellParams: all fields must be strictly positive");
        if (!all_finite(a2(), a3(), b1(), b2(), b3(), r_bar()))
            throw validation_error("CellParams: derived constants not finite");
    }
};

inline CellParams make_cell_params(double r_int_ohm, double r_s_ohm, double c_s_farad,
                                   double r_f_ohm, double c_f_farad, double q_ah) {
    CellParams p{r_int_ohm, r_s_ohm, c_s_farad, r_f_ohm, c_f_farad, q_ah * 3600.0};
    p.validate();
    return p;
}

/// Open-circuit voltage as a degree-9 polynomial in SoC, coefficients
/// highest degree first (p1..p10).
struct OcvPolynomial {
    std::array<double, 10> coeffs{};  // p1 z^9 + ... + p9 z + p10
};

inline double ocv_eval(const OcvPolynomial& poly, double z) {
    double acc = 0.0;
    for (double c : poly.coeffs) acc = acc * z + c;  // Horner
    return acc;
}

inline double ocv_slope(const OcvPolynomial& poly, double z) {
    double acc = 0.0;
    for (int i = 0; i < 9; ++i) acc = acc * z + double(9 - i) * poly.coeffs[size_t(i)];
    return acc;
}

inline double ocv_curvature(const OcvPolynomial& poly, double z) {
    double acc = 0.0;
    for (int i = 0; i < 8; ++i)
        acc = acc * z + double(9 - i) * double(8 - i) * poly.coeffs[size_t(i)];
    return acc;
}

/// Secant slope of the OCV map between two SoC points; the linearization
/// slope used to split the dynamics into A*x and the remainder phi.
inline double ocv_secant_slope(const OcvPolynomial& poly, double z_lo = 0.1, double z_hi = 0.9) {
    if (!(z_hi > z_lo)) throw validation_error("ocv_secant_slope: need z_hi > z_lo");
    return (ocv_eval(poly, z_hi) - ocv_eval(poly, z_lo)) / (z_hi - z_lo);
}

/// State x = [V, z, V_RC1, V_RC2]. Ground-truth simulation clamps z to
/// [0,1]; observer copies may transiently leave that range.
struct EcmState {
    double v = 0.0;
    double z = 0.0;
    double v_rc1 = 0.0;
    double v_rc2 = 0.0;

    Vec4 vec() const { return Vec4(v, z, v_rc1, v_rc2); }
    static EcmState from_vec(const Vec4& x) { return {x[0], x[1], x[2], x[3]}; }
    bool finite() const { return all_finite(v, z, v_rc1, v_rc2); }
};

inline double terminal_voltage(double z, double v_rc1, double v_rc2, double current,
                               const CellParams& params, const OcvPolynomial& poly) {
    return ocv_eval(poly, z) - v_rc1 - v_rc2 - params.r_int * current;
}

/// Time derivatives of the four model states. The ż row uses the voltage
/// form -b1*R̄*(V_oc(z) - V - V_RC1 - V_RC2).
inline EcmState derivative(const EcmState& s, double current, const CellParams& params,
                           const OcvPolynomial& poly) {
    const double a2 = params.a2(), a3 = params.a3();
    const double b1 = params.b1(), b2 = params.b2(), b3 = params.b3();
    const double rbar = params.r_bar();
    const double voc = ocv_eval(poly, s.z);
    EcmState d;
    d.v = a2 * voc - a2 * s.v + (a3 - a2) * s.v_rc2 -
          (b1 * ocv_slope(poly, s.z) + b2 + b3 - a2 * params.r_int) * current;
    d.z = -b1 * rbar * (voc - s.v - s.v_rc1 - s.v_rc2);
    d.v_rc1 = -a2 * s.v_rc1 + b2 * current;
    d.v_rc2 = -a3 * s.v_rc2 + b3 * current;
    return d;
}

enum class SocClamp { ground_truth, none };

/// One classical RK4 step under constant current.
inline EcmState step(const EcmState& s, double current, double dt, const CellParams& params,
                     const OcvPolynomial& poly, SocClamp clamp = SocClamp::ground_truth) {
    if (!s.finite() || !all_finite(current, dt))
        throw validation_error("step: non-finite input");
    if (dt < 0) throw validation_error("step: dt must be >= 0");
    if (dt == 0) return s;

    auto f = [&](const EcmState& x) { return derivative(x, current, params, poly); };
    auto axpy = [](const EcmState& x, double h, const EcmState& d) {
        return EcmState{x.v + h * d.v, x.z + h * d.z, x.v_rc1 + h * d.v_rc1,
                        x.v_rc2 + h * d.v_rc2};
    };
    const EcmState k1 = f(s);
    const EcmState k2 = f(axpy(s, 0.5 * dt, k1));
    const EcmState k3 = f(axpy(s, 0.5 * dt, k2));
    const EcmState k4 = f(axpy(s, dt, k3));
    EcmState out{
        s.v + dt / 6.0 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v),
        s.z + dt / 6.0 * (k1.z + 2 * k2.z + 2 * k3.z + k4.z),
        s.v_rc1 + dt / 6.0 * (k1.v_rc1 + 2 * k2.v_rc1 + 2 * k3.v_rc1 + k4.v_rc1),
        s.v_rc2 + dt / 6.0 * (k1.v_rc2 + 2 * k2.v_rc2 + 2 * k3.v_rc2 + k4.v_rc2)};
    if (clamp == SocClamp::ground_truth) out.z = std::clamp(out.z, 0.0, 1.0);
    return out;
}

/// State-space pieces of the model about the secant linearization.
struct SystemMatrices {
    Mat4 a;
    Vec4 b;
    RowVec4 c;
    Vec4 d;
    double alpha1 = 0.0;
};

inline SystemMatrices build_matrices(const CellParams& params, double alpha1) {
    params.validate();
    const double a2 = params.a2(), a3 = params.a3();
    const double b1 = params.b1(), b2 = params.b2(), b3 = params.b3();
    const double g = params.b1() * params.r_bar();
    SystemMatrices m;
    m.a << -a2, a2 * alpha1, 0.0, a3 - a2,
           g, -alpha1 * g, g, g,
           0.0, 0.0, -a2, 0.0,
           0.0, 0.0, 0.0, -a3;
    m.b << -b2 - b3 + a2 * params.r_int, 0.0, b2, b3;
    m.c << 1.0, 0.0, 0.0, 0.0;
    m.d << 1.0, 1.0, 1.0, 1.0;
    m.alpha1 = alpha1;
    return m;
}

/// Nonlinear remainder phi(x, u); rows 3-4 are identically zero.
inline Vec4 phi(const EcmState& s, double current, const CellParams& params,
                const OcvPolynomial& poly, double alpha1) {
    const double a2 = params.a2();
    const double b1 = params.b1();
    const double g = b1 * params.r_bar();
    const double voc = ocv_eval(poly, s.z);
    Vec4 p;
    p << a2 * voc - a2 * alpha1 * s.z - b1 * ocv_slope(poly, s.z) * current,
         -g * voc + alpha1 * g * s.z, 0.0, 0.0;
    return p;
}

/// Closed interval with validation against a nominal value.
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Per-parameter uncertainty ranges for the entries of ΔA(t).
struct ParamIntervals {
    Interval a2;
    Interval a3;
    Interval r_bar;
    std::optional<Interval> r_int;

    void validate(const CellParams& nominal) const {
        auto chk = [](const Interval& iv, double nom, const char* name) {
            if (!(iv.lo <= iv.hi))
                throw validation_error(std::string("ParamIntervals: empty interval for ") + name);
            if (!(iv.lo <= nom && nom <= iv.hi))
                throw validation_error(std::string("ParamIntervals: nominal outside interval for ") +
                                       name);
        };
        chk(a2, nominal.a2(), "a2");
        chk(a3, nominal.a3(), "a3");
        chk(r_bar, nominal.r_bar(), "r_bar");
        if (r_int) chk(*r_int, nominal.r_int, "r_int");
    }
};

inline Mat4 delta_a_matrix(double da2, double da3, double drbar, double b1, double alpha1) {
    const double g = b1 * drbar;
    Mat4 m;
    m << -da2, da2 * alpha1, 0.0, da3 - da2,
         g, -alpha1 * g, g, g,
         0.0, 0.0, -da2, 0.0,
         0.0, 0.0, 0.0, -da3;
    return m;
}

/// Bound γ on ||ΔA(t)||₂ over the parameter box: the norm is convex in the
/// parameters, so the max over the box is attained at one of the 8 corners.
inline double delta_a_norm_bound(const ParamIntervals& intervals, const CellParams& nominal,
                                 double alpha1) {
    intervals.validate(nominal);
    const double b1 = nominal.b1();
    double gamma = 0.0;
    for (double da2 : {intervals.a2.lo - nominal.a2(), intervals.a2.hi - nominal.a2()})
        for (double da3 : {intervals.a3.lo - nominal.a3(), intervals.a3.hi - nominal.a3()})
            for (double drb : {intervals.r_bar.lo - nominal.r_bar(),
                               intervals.r_bar.hi - nominal.r_bar()})
                gamma = std::max(gamma, spectral_norm(delta_a_matrix(da2, da3, drb, b1, alpha1)));
    return gamma;
}

/// Lipschitz estimate for phi by dense sampling of its Jacobian over a SoC
/// range and a symmetric current range. phi depends on the state only
/// through z, so the Jacobian norm is the 2-norm of the z-column.
inline double estimate_lipschitz(const CellParams& params, const OcvPolynomial& poly,
                                 double alpha1, double z_lo, double z_hi, double current_bound,
                                 int z_samples = 3001, int i_samples = 9) {
    if (!(z_hi >= z_lo)) throw validation_error("estimate_lipschitz: invalid z range");
    if (!(current_bound > 0)) throw validation_error("estimate_lipschitz: current bound <= 0");
    const double a2 = params.a2();
    const double b1 = params.b1();
    const double g = b1 * params.r_bar();
    double best = 0.0;
    for (int zi = 0; zi < z_samples; ++zi) {
        const double z = z_samples == 1
                             ? z_lo
                             : z_lo + (z_hi - z_lo) * double(zi) / double(z_samples - 1);
        const double dv = ocv_slope(poly, z) - alpha1;
        const double d2v = ocv_curvature(poly, z);
        for (int ii = 0; ii < i_samples; ++ii) {
            const double cur = -current_bound +
                               2.0 * current_bound * double(ii) / double(i_samples - 1);
            const double g0 = a2 * dv - b1 * d2v * cur;
            const double g1 = -g * dv;
            best = std::max(best, std::hypot(g0, g1));
        }
    }
    return best;
}

}  // namespace aesmo
