#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "aesmo/ecm.hpp"
#include "aesmo/errors.hpp"
#include "aesmo/lmi.hpp"

namespace aesmo {

inline double output_error(double y, const EcmState& x_hat, const RowVec4& c_row) {
    return y - c_row.dot(x_hat.vec());
}

/// Componentwise signum with sign(0) = 0.
inline double signum(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline Eigen::VectorXd sign_vec(const Eigen::VectorXd& sigma) {
    Eigen::VectorXd s(sigma.size());
    for (Eigen::Index i = 0; i < sigma.size(); ++i) s[i] = signum(sigma[i]);
    return s;
}

/// L_s = (mu/2) P^-1 C' by linear solve.
inline Vec4 compute_ls(const Mat4& p, const RowVec4& c_row, double mu) {
    const Eigen::LLT<Mat4> llt(0.5 * (p + p.transpose()));
    if (llt.info() != Eigen::Success)
        throw validation_error("compute_ls: P is not positive definite");
    return llt.solve(0.5 * mu * c_row.transpose());
}

/// Gains of the sliding-mode observer; ls must equal (mu/2) P^-1 C' for the
/// certificate's P, verified at construction.
struct AesmoGains {
    Vec4 l = Vec4::Zero();
    Vec4 ls = Vec4::Zero();
    double mu = 0.0;
};

inline AesmoGains make_aesmo_gains(const LmiCertificate& cert, const RowVec4& c_row, double mu) {
    AesmoGains g;
    g.l = cert.l;
    g.mu = mu;
    g.ls = compute_ls(cert.p, c_row, mu);
    const Vec4 resid = cert.p * g.ls - 0.5 * mu * c_row.transpose();
    const double scale = std::max(0.5 * std::abs(mu) * c_row.norm(), 1e-300);
    if (resid.norm() > 1e-9 * scale)
        throw validation_error("make_aesmo_gains: ls does not satisfy (mu/2) P^-1 C'");
    return g;
}

namespace detail {

template <typename Correction>
inline EcmState observer_rk4(const EcmState& x_hat, double u, double dt,
                             const SystemMatrices& m, const CellParams& params,
                             const OcvPolynomial& poly, Correction corr) {
    auto f = [&](const EcmState& x) -> Vec4 {
        return m.a * x.vec() + m.b * u + phi(x, u, params, poly, m.alpha1) + corr;
    };
    const Vec4 k1 = f(x_hat);
    const Vec4 k2 = f(EcmState::from_vec(x_hat.vec() + 0.5 * dt * k1));
    const Vec4 k3 = f(EcmState::from_vec(x_hat.vec() + 0.5 * dt * k2));
    const Vec4 k4 = f(EcmState::from_vec(x_hat.vec() + dt * k3));
    return EcmState::from_vec(x_hat.vec() + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4));
}

}  // namespace detail

/// One sampled step of the sliding-mode observer: RK4 of
/// A x^ + B u + phi(x^,u) + L sigma + Ls sign(sigma), with sigma held
/// constant across the step (zero-order hold of the sampled output error).
inline EcmState aesmo_step(const EcmState& x_hat, double u, double y, double dt,
                           const AesmoGains& gains, const SystemMatrices& m,
                           const CellParams& params, const OcvPolynomial& poly) {
    if (!x_hat.finite() || !all_finite(u, y, dt))
        throw validation_error("aesmo_step: non-finite input");
    if (!(dt > 0)) throw validation_error("aesmo_step: dt must be > 0");
    const double sigma = output_error(y, x_hat, m.c);
    const Vec4 corr = gains.l * sigma + gains.ls * signum(sigma);
    return detail::observer_rk4(x_hat, u, dt, m, params, poly, corr);
}

/// Fixed-gain observer (the sliding term removed): the comparison baseline.
inline EcmState luenberger_step(const EcmState& x_hat, double u, double y, double dt,
                                const Vec4& l_fixed, const SystemMatrices& m,
                                const CellParams& params, const OcvPolynomial& poly) {
    if (!x_hat.finite() || !all_finite(u, y, dt))
        throw validation_error("luenberger_step: non-finite input");
    if (!(dt > 0)) throw validation_error("luenberger_step: dt must be > 0");
    const double sigma = output_error(y, x_hat, m.c);
    const Vec4 corr = l_fixed * sigma;
    return detail::observer_rk4(x_hat, u, dt, m, params, poly, corr);
}

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unscented filter configuration for the reduced 3-state model
/// (z, V_RC1, V_RC2) with the terminal voltage as output.
struct UkfConfig {
    Mat3 p0 = (Eigen::Vector3d(1e-12, 1e-8, 1.0)).asDiagonal();
    Mat3 q_proc = (Eigen::Vector3d(1e-8, 1e-8, 1e-6)).asDiagonal();
    double r_meas = 1e-4;
    double ut_alpha = 1.0;
    double ut_beta = 2.0;
    double ut_kappa = 0.0;

    void validate() const {
        if (!(r_meas > 0)) throw validation_error("UkfConfig: r_meas must be > 0");
        if (!is_symmetric(p0, 1e-9) || lambda_min_sym(p0) < 0)
            throw validation_error("UkfConfig: p0 must be symmetric PSD");
        if (!is_symmetric(q_proc, 1e-9) || lambda_min_sym(q_proc) < 0)
            throw validation_error("UkfConfig: q_proc must be symmetric PSD");
    }
};

struct UkfWeights {
    double lambda = 0.0;
    Eigen::Matrix<double, 7, 1> wm;
    Eigen::Matrix<double, 7, 1> wc;
};

inline UkfWeights ukf_weights(const UkfConfig& cfg) {
    constexpr double n = 3.0;
    UkfWeights w;
    w.lambda = cfg.ut_alpha * cfg.ut_alpha * (n + cfg.ut_kappa) - n;
    const double denom = n + w.lambda;
    w.wm.setConstant(0.5 / denom);
    w.wc.setConstant(0.5 / denom);
    w.wm[0] = w.lambda / denom;
    w.wc[0] = w.lambda / denom + (1.0 - cfg.ut_alpha * cfg.ut_alpha + cfg.ut_beta);
    return w;
}

namespace detail {

inline Vec3 reduced_rk4(const Vec3& s, double u, double dt, const CellParams& p) {
    auto f = [&](const Vec3& x) -> Vec3 {
        return Vec3(-p.b1() * u, -p.a2() * x[1] + p.b2() * u, -p.a3() * x[2] + p.b3() * u);
    };
    const Vec3 k1 = f(s);
    const Vec3 k2 = f(s + 0.5 * dt * k1);
    const Vec3 k3 = f(s + 0.5 * dt * k2);
    const Vec3 k4 = f(s + dt * k3);
    return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
}

inline Eigen::Matrix3d chol_with_repair(Mat3 p) {
    for (int attempt = 0; attempt < 4; ++attempt) {
        Eigen::LLT<Mat3> llt(p);
        if (llt.info() == Eigen::Success) return llt.matrixL();
        p = (0.5 * (p + p.transpose())).eval();
        p += 1e-12 * Mat3::Identity();
    }
    throw error("ukf_step: covariance lost positive definiteness");
}

}  // namespace detail

/// Standard unscented predict/update over one sample. State (z, V1, V2);
/// measurement V = V_oc(z) - V1 - V2 - Rint*I.
inline void ukf_step(Vec3& mean, Mat3& cov, double u, double y, double dt, const UkfConfig& cfg,
                     const CellParams& params, const OcvPolynomial& poly) {
    cfg.validate();
    const UkfWeights w = ukf_weights(cfg);
    const double spread = 3.0 + w.lambda;

    auto draw = [&](const Vec3& m, const Mat3& p) {
        std::array<Vec3, 7> sig;
        const Mat3 s = detail::chol_with_repair(spread * p);
        sig[0] = m;
        for (int i = 0; i < 3; ++i) {
            sig[size_t(1 + i)] = m + s.col(i);
            sig[size_t(4 + i)] = m - s.col(i);
        }
        return sig;
    };

    // predict
    auto sig = draw(mean, cov);
    for (auto& s : sig) s = detail::reduced_rk4(s, u, dt, params);
    Vec3 xm = Vec3::Zero();
    for (int i = 0; i < 7; ++i) xm += w.wm[i] * sig[size_t(i)];
    Mat3 pm = cfg.q_proc;
    for (int i = 0; i < 7; ++i)
        pm += w.wc[i] * (sig[size_t(i)] - xm) * (sig[size_t(i)] - xm).transpose();
    pm = (0.5 * (pm + pm.transpose())).eval();

    // update with sigma points redrawn about the prediction
    auto sigu = draw(xm, pm);
    Eigen::Matrix<double, 7, 1> ys;
    for (int i = 0; i < 7; ++i) {
        const Vec3& s = sigu[size_t(i)];
        ys[i] = terminal_voltage(s[0], s[1], s[2], u, params, poly);
    }
    const double ym = w.wm.dot(ys);
    double pyy = cfg.r_meas;
    Vec3 pxy = Vec3::Zero();
    for (int i = 0; i < 7; ++i) {
        pyy += w.wc[i] * (ys[i] - ym) * (ys[i] - ym);
        pxy += w.wc[i] * (sigu[size_t(i)] - xm) * (ys[i] - ym);
    }
    const Vec3 k = pxy / pyy;
    mean = xm + k * (y - ym);
    cov = pm - k * k.transpose() * pyy;
    cov = (0.5 * (cov + cov.transpose())).eval();
}

}  // namespace aesmo
