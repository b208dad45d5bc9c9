#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "aesmo/ecm.hpp"
#include "aesmo/eig.hpp"
#include "aesmo/errors.hpp"

namespace aesmo {

/// Inputs of the gain synthesis. alpha is the guaranteed decay rate, eps
/// the S-procedure multiplier, mu the switching-gain scale, l_phi the
/// Lipschitz bound on the remainder, gamma the ||ΔA|| bound, x_plus/d_plus
/// the state and disturbance bounds, delta the strictness margin for the
/// inequalities (<= 0 selects 1e-9*(1+||A||) at solve time).
/// y_bound and cond_max regularize the solver: the unconstrained trace
/// minimum sits at a vertex where P is singular to working margin and
/// L = P^-1 Y grows like 1/delta, which no sampled-data observer can run;
/// |Y_i| <= y_bound*tr(P) and P >= tr(P)/cond_max * I exclude that vertex
/// while keeping the problem convex.
struct SynthesisConfig {
    double alpha = 2e-3;
    double eps = 2.0;
    double mu = 1e-10;
    double l_phi = 0.0;
    double gamma = 0.0;
    double x_plus = 5.0;
    double d_plus = 0.0;
    double delta = 0.0;  // <= 0: scale-aware default
    double y_bound = 3e-3;
    double cond_max = 40.0;
    unsigned seed = 0;   // perturbs the phase-1 candidate order (restarts)

    void validate() const {
        if (!(alpha > 0)) throw validation_error("SynthesisConfig: alpha must be > 0");
        if (!(eps > 0)) throw validation_error("SynthesisConfig: eps must be > 0");
        if (!(mu > 0)) throw validation_error("SynthesisConfig: mu must be > 0");
        if (!(l_phi >= 0)) throw validation_error("SynthesisConfig: l_phi must be >= 0");
        if (!(gamma >= 0)) throw validation_error("SynthesisConfig: gamma must be >= 0");
        if (!(x_plus > 0)) throw validation_error("SynthesisConfig: x_plus must be > 0");
        if (!(d_plus >= 0)) throw validation_error("SynthesisConfig: d_plus must be >= 0");
        if (!(y_bound > 0)) throw validation_error("SynthesisConfig: y_bound must be > 0");
        if (!(cond_max > 4.0)) throw validation_error("SynthesisConfig: cond_max must be > 4");
    }

    double resolved_delta(const Mat4& a) const {
        return delta > 0 ? delta : 1e-9 * (1.0 + spectral_norm(a));
    }
};

/// c = eps*gamma^2*X+^2 + 4*D+^2 — the constant forcing term of the
/// Lyapunov decay inequality.
inline double compute_c(const SynthesisConfig& cfg) {
    if (!(cfg.eps >= 0) || !(cfg.gamma >= 0) || !(cfg.x_plus >= 0) || !(cfg.d_plus >= 0))
        throw validation_error("compute_c: negative input");
    return cfg.eps * cfg.gamma * cfg.gamma * cfg.x_plus * cfg.x_plus +
           4.0 * cfg.d_plus * cfg.d_plus;
}

/// Ellipsoid matrix (alpha/c) * P.
inline Mat4 p_attr(const Mat4& p, double alpha, double c) {
    if (!(c > 0)) throw validation_error("p_attr: c must be > 0");
    return (alpha / c) * p;
}

/// Bound on ||x~(t)||^2 from the decay inequality:
/// (v0*exp(-alpha t) + (c/alpha)(1 - exp(-alpha t))) / lambda_min(P).
inline double error_bound_envelope(double t, double v0, double alpha, double c,
                                   double lambda_min_p) {
    if (!(t >= 0)) throw validation_error("error_bound_envelope: t must be >= 0");
    const double e = std::exp(-alpha * t);
    return (v0 * e + (c / alpha) * (1.0 - e)) / lambda_min_p;
}

/// The 8x8 block matrix [[Xi, P], [P, -eps I]] with
/// Xi = PA - YC + A'P - C'Y' + alpha P + eps*l_phi^2 I (symmetric by
/// construction).
inline Eigen::MatrixXd assemble_w_tilde(const Mat4& p, const Vec4& y, const SystemMatrices& m,
                                        const SynthesisConfig& cfg) {
    if (!is_symmetric(p, 1e-9)) throw validation_error("assemble_w_tilde: P not symmetric");
    const Mat4 yc = y * m.c;
    const Mat4 xi = p * m.a + m.a.transpose() * p - yc - yc.transpose() + cfg.alpha * p +
                    cfg.eps * cfg.l_phi * cfg.l_phi * Mat4::Identity();
    Eigen::MatrixXd w(8, 8);
    w.topLeftCorner<4, 4>() = 0.5 * (xi + xi.transpose());
    w.topRightCorner<4, 4>() = p;
    w.bottomLeftCorner<4, 4>() = p;
    w.bottomRightCorner<4, 4>() = -cfg.eps * Mat4::Identity();
    return w;
}

struct FeasibilityReport {
    double lambda_max_w = 0.0;
    double lambda_min_p = 0.0;
    double delta = 0.0;
    bool feasible = false;
};

inline FeasibilityReport check_feasible(const Mat4& p, const Vec4& y, const SystemMatrices& m,
                                        const SynthesisConfig& cfg) {
    FeasibilityReport r;
    r.delta = cfg.resolved_delta(m.a);
    r.lambda_max_w = lambda_max_sym(assemble_w_tilde(p, y, m, cfg));
    r.lambda_min_p = lambda_min_sym(0.5 * (p + p.transpose()));
    r.feasible = r.lambda_max_w < -r.delta && r.lambda_min_p > r.delta;
    return r;
}

/// Certificate produced by synthesize_gain.
struct LmiCertificate {
    Mat4 p;
    Vec4 y;
    Vec4 l;
    double lambda_max_w = 0.0;
    double lambda_min_p = 0.0;
    double trace_p_attr = 0.0;
    double c = 0.0;
    SynthesisConfig config;
};

namespace detail {

struct LmiProblem {
    // Symmetric-matrix coordinates: 10 entries of P (upper triangle), then Y.
    static constexpr int kNumVars = 14;

    SystemMatrices m;
    SynthesisConfig cfg;
    double delta = 0.0;
    std::vector<Eigen::MatrixXd> dw;  // dW/dx_k, constant
    std::vector<Mat4> dp;             // dP/dx_k, constant

    explicit LmiProblem(const SystemMatrices& mats, const SynthesisConfig& c)
        : m(mats), cfg(c), delta(c.resolved_delta(mats.a)) {
        int k = 0;
        for (int i = 0; i < 4; ++i) {
            for (int j = i; j < 4; ++j, ++k) {
                Mat4 e = Mat4::Zero();
                e(i, j) = e(j, i) = 1.0;
                dp.push_back(e);
                Eigen::MatrixXd wd = Eigen::MatrixXd::Zero(8, 8);
                const Mat4 xi_d = e * m.a + m.a.transpose() * e + cfg.alpha * e;
                wd.topLeftCorner<4, 4>() = 0.5 * (xi_d + xi_d.transpose());
                wd.topRightCorner<4, 4>() = e;
                wd.bottomLeftCorner<4, 4>() = e;
                dw.push_back(wd);
            }
        }
        for (int r = 0; r < 4; ++r) {
            dp.push_back(Mat4::Zero());
            Vec4 e = Vec4::Zero();
            e[r] = 1.0;
            const Mat4 xi_d = -(e * m.c) - (e * m.c).transpose();
            Eigen::MatrixXd wd = Eigen::MatrixXd::Zero(8, 8);
            wd.topLeftCorner<4, 4>() = xi_d;
            dw.push_back(wd);
        }
    }

    static Mat4 p_of(const Eigen::VectorXd& x) {
        Mat4 p;
        int k = 0;
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j, ++k) p(i, j) = p(j, i) = x[k];
        return p;
    }
    static Vec4 y_of(const Eigen::VectorXd& x) { return x.segment<4>(10); }
    static Eigen::VectorXd pack(const Mat4& p, const Vec4& y) {
        Eigen::VectorXd x(kNumVars);
        int k = 0;
        for (int i = 0; i < 4; ++i)
            for (int j = i; j < 4; ++j, ++k) x[k] = p(i, j);
        x.segment<4>(10) = y;
        return x;
    }

    // Slack blocks at x; empty optionals signal the point is outside the domain.
    struct Slacks {
        Eigen::MatrixXd s1;  // -W - delta I  > 0   (8x8)
        Mat4 s2;             // P - delta I   > 0
        Mat4 s3;             // P - tr(P)/cond_max I - eps3 I > 0
        Eigen::Matrix<double, 8, 1> sy;  // y_bound*tr(P) -+ Y_i > 0
        bool ok = false;
    };

    Slacks slacks(const Eigen::VectorXd& x) const {
        Slacks s;
        const Mat4 p = p_of(x);
        const Vec4 y = y_of(x);
        s.s1 = -assemble_w_tilde(p, y, m, cfg) - delta * Eigen::MatrixXd::Identity(8, 8);
        s.s2 = p - delta * Mat4::Identity();
        s.s3 = p - (p.trace() / cfg.cond_max) * Mat4::Identity();
        const double cap = cfg.y_bound * p.trace();
        for (int i = 0; i < 4; ++i) {
            s.sy[2 * i] = cap - y[i];
            s.sy[2 * i + 1] = cap + y[i];
        }
        auto pd = [](const Eigen::MatrixXd& q) {
            Eigen::LLT<Eigen::MatrixXd> llt(q);
            return llt.info() == Eigen::Success;
        };
        s.ok = pd(s.s1) && pd(s.s2) && pd(s.s3) && (s.sy.array() > 0).all();
        return s;
    }

    double barrier_value(const Eigen::VectorXd& x, double eta, double w_obj,
                         const Slacks& s) const {
        auto logdet = [](const Eigen::MatrixXd& q) {
            const Eigen::LLT<Eigen::MatrixXd> llt(q);
            return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        };
        const double tr = p_of(x).trace();
        return w_obj * tr -
               eta * (logdet(s.s1) + logdet(s.s2) + logdet(s.s3) + s.sy.array().log().sum());
    }
};

// One centering stage: Newton minimization of the barrier at fixed eta.
inline void center(const LmiProblem& prob, Eigen::VectorXd& x, double eta, double w_obj) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    for (int it = 0; it < 50; ++it) {
        const auto s = prob.slacks(x);
        if (!s.ok) throw error("lmi barrier: iterate left the feasible domain");
        const MatrixXd s1i = s.s1.inverse();
        const Mat4 s2i = s.s2.inverse();
        const Mat4 s3i = s.s3.inverse();

        VectorXd g(LmiProblem::kNumVars);
        std::vector<MatrixXd> t1(LmiProblem::kNumVars);
        std::vector<Mat4> t2(LmiProblem::kNumVars), t3(LmiProblem::kNumVars);
        Eigen::Matrix<double, 8, LmiProblem::kNumVars> dsy;
        for (int k = 0; k < LmiProblem::kNumVars; ++k) {
            const double dtr = prob.dp[size_t(k)].trace();
            const Mat4 ds3 = prob.dp[size_t(k)] -
                             (dtr / prob.cfg.cond_max) * Mat4::Identity();
            for (int i = 0; i < 4; ++i) {
                const double dy = (k == 10 + i) ? 1.0 : 0.0;
                dsy(2 * i, k) = prob.cfg.y_bound * dtr - dy;
                dsy(2 * i + 1, k) = prob.cfg.y_bound * dtr + dy;
            }
            t1[size_t(k)] = s1i * prob.dw[size_t(k)];
            t2[size_t(k)] = s2i * prob.dp[size_t(k)];
            t3[size_t(k)] = s3i * ds3;
            g[k] = w_obj * dtr +
                   eta * (t1[size_t(k)].trace() - t2[size_t(k)].trace() - t3[size_t(k)].trace());
            for (int i = 0; i < 8; ++i) g[k] -= eta * dsy(i, k) / s.sy[i];
        }
        MatrixXd h(LmiProblem::kNumVars, LmiProblem::kNumVars);
        for (int a = 0; a < LmiProblem::kNumVars; ++a) {
            for (int b = a; b < LmiProblem::kNumVars; ++b) {
                double v = (t1[size_t(a)] * t1[size_t(b)]).trace() +
                           (t2[size_t(a)] * t2[size_t(b)]).trace() +
                           (t3[size_t(a)] * t3[size_t(b)]).trace();
                for (int i = 0; i < 8; ++i) v += dsy(i, a) * dsy(i, b) / (s.sy[i] * s.sy[i]);
                h(a, b) = h(b, a) = eta * v;
            }
        }
        h.diagonal().array() += 1e-14 * (1.0 + h.diagonal().cwiseAbs().maxCoeff());
        const VectorXd dx = h.ldlt().solve(-g);
        if (!dx.allFinite()) break;

        const double f0 = prob.barrier_value(x, eta, w_obj, s);
        double t = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            const VectorXd xn = x + t * dx;
            const auto sn = prob.slacks(xn);
            if (!sn.ok) continue;
            if (prob.barrier_value(xn, eta, w_obj, sn) < f0 - 1e-14 * std::abs(f0)) {
                x = xn;
                moved = true;
                break;
            }
        }
        if (!moved || dx.norm() * t < 1e-13 * (1.0 + x.norm())) break;
    }
}

// Lyapunov solve M'P + PM = -Q via the 16x16 Kronecker system.
inline bool lyapunov_spd(const Mat4& m, const Mat4& q, Mat4& p_out) {
    Eigen::Matrix<double, 16, 16> k = Eigen::Matrix<double, 16, 16>::Zero();
    const Mat4 mt = m.transpose();
    // vec(M'P) = (I (x) M') vec(P); vec(PM) = (M' (x) I) vec(P)  [column-major]
    for (int c = 0; c < 4; ++c)
        k.block<4, 4>(4 * c, 4 * c) += mt;
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 4; ++r)
            k.block<4, 4>(4 * r, 4 * c) += m(c, r) * Mat4::Identity();
    Eigen::Matrix<double, 16, 1> rhs;
    for (int c = 0; c < 4; ++c) rhs.segment<4>(4 * c) = -q.col(c);
    const Eigen::Matrix<double, 16, 1> v = k.fullPivLu().solve(rhs);
    Mat4 p;
    for (int c = 0; c < 4; ++c) p.col(c) = v.segment<4>(4 * c);
    p = (0.5 * (p + p.transpose())).eval();
    if (!p.allFinite()) return false;
    if (lambda_min_sym(p) <= 0) return false;
    p_out = p;
    return true;
}

// Strictly feasible start: stabilizing-gain candidates -> Lyapunov P ->
// blend toward identity and scale, maximizing the worst slack; if that
// fails, subgradient descent on lambda_max(W) along the extreme
// eigenvector's outer-product gradient.
inline Eigen::VectorXd phase1(const LmiProblem& prob, double& best_lambda_w) {
    const SystemMatrices& m = prob.m;
    best_lambda_w = std::numeric_limits<double>::infinity();

    std::vector<Vec4> candidates;
    std::vector<double> l1s{0.05, 0.1, 0.2, 0.5, 1.0};
    std::vector<double> l2s{0.0, 0.005, 0.02, 0.05, 0.1, 0.3};
    std::mt19937_64 rng(prob.cfg.seed);
    std::uniform_real_distribution<double> jitter(0.85, 1.15);
    for (double l1 : l1s)
        for (double l2 : l2s) {
            Vec4 l0(l1, l2, 0.0, 0.0);
            if (prob.cfg.seed != 0) {
                l0[0] *= jitter(rng);
                l0[1] *= jitter(rng);
            }
            candidates.push_back(l0);
        }

    Eigen::VectorXd best_x;
    double best_slack = -std::numeric_limits<double>::infinity();

    auto consider = [&](const Mat4& p, const Vec4& y) {
        const auto s = prob.slacks(LmiProblem::pack(p, y));
        const double lw = lambda_max_sym(assemble_w_tilde(p, y, m, prob.cfg));
        best_lambda_w = std::min(best_lambda_w, lw);
        if (!s.ok) return;
        const double slack =
            std::min({lambda_min_sym(s.s1), double(lambda_min_sym(s.s2)),
                      double(lambda_min_sym(s.s3)), s.sy.minCoeff()});
        if (slack > best_slack) {
            best_slack = slack;
            best_x = LmiProblem::pack(p, y);
        }
    };

    for (const Vec4& l0 : candidates) {
        const Mat4 acl = m.a - l0 * m.c + 0.5 * prob.cfg.alpha * Mat4::Identity();
        const Eigen::EigenSolver<Mat4> es(acl);
        if (es.eigenvalues().real().maxCoeff() >= -1e-12) continue;
        Mat4 p0;
        if (!lyapunov_spd(acl, Mat4::Identity(), p0)) continue;
        p0 /= p0.trace();
        for (double tau : {0.0, 0.05, 0.15, 0.3, 0.5, 0.7, 0.9}) {
            const Mat4 pb = (1.0 - tau) * p0 + tau * 0.25 * Mat4::Identity();
            Vec4 yb = pb * l0;
            const double cap = 0.95 * prob.cfg.y_bound * pb.trace();
            for (int i = 0; i < 4; ++i) yb[i] = std::clamp(yb[i], -cap, cap);
            for (int e = -24; e <= 24; ++e)
                consider(std::pow(10.0, e / 3.0) * pb, std::pow(10.0, e / 3.0) * yb);
        }
    }

    if (best_slack > 0) return best_x;

    // Subgradient fallback on the extreme eigenpair of W.
    Eigen::VectorXd x = LmiProblem::pack(0.25 * Mat4::Identity(), Vec4::Zero());
    double step = 0.1;
    for (int it = 0; it < 400; ++it) {
        const Mat4 p = LmiProblem::p_of(x);
        const Vec4 y = LmiProblem::y_of(x);
        const auto eg = eig_sym(assemble_w_tilde(p, y, m, prob.cfg));
        const double lw = eg.values.maxCoeff();
        best_lambda_w = std::min(best_lambda_w, lw);
        const Eigen::VectorXd v = eg.vectors.col(7);
        Eigen::VectorXd g(LmiProblem::kNumVars);
        for (int k = 0; k < LmiProblem::kNumVars; ++k)
            g[k] = v.dot(prob.dw[size_t(k)] * v);
        const double gn = g.norm();
        if (gn < 1e-14) break;
        Eigen::VectorXd xn = x - step * g / gn * std::max(std::abs(lw), 1e-6);
        const auto sn = prob.slacks(xn);
        if (sn.ok) return xn;
        const Mat4 pn = LmiProblem::p_of(xn);
        if (lambda_min_sym(pn) > prob.delta &&
            lambda_max_sym(assemble_w_tilde(pn, LmiProblem::y_of(xn), m, prob.cfg)) < lw) {
            x = xn;
            step = std::min(step * 1.3, 1.0);
        } else {
            step *= 0.5;
            if (step < 1e-12) break;
        }
    }
    return Eigen::VectorXd();
}

}  // namespace detail

inline bool observable(const SystemMatrices& m, double sv_tol_rel = 1e-10) {
    Eigen::MatrixXd obs(4, 4);
    RowVec4 row = m.c;
    for (int i = 0; i < 4; ++i) {
        obs.row(i) = row;
        row = row * m.a;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(obs);
    const auto& sv = svd.singularValues();
    return sv.minCoeff() > sv_tol_rel * sv.maxCoeff();
}

/// Trace-minimal certificate via a log-det barrier over the 14 free
/// variables, started from a constructive feasible point. Throws
/// infeasibility_error (with the best margin reached) when no certificate
/// exists at this (alpha, eps).
inline LmiCertificate synthesize_gain(const SystemMatrices& m, const SynthesisConfig& cfg) {
    cfg.validate();
    if (!observable(m))
        throw validation_error("synthesize_gain: (A, C) pair is not observable");

    detail::LmiProblem prob(m, cfg);
    double best_lw = 0.0;
    Eigen::VectorXd x = detail::phase1(prob, best_lw);
    if (x.size() == 0)
        throw infeasibility_error("synthesize_gain: no feasible point at this (alpha, eps)",
                                  best_lw);

    const double c = compute_c(cfg);
    const double w_obj = c > 0 ? cfg.alpha / c : 1.0;
    for (double eta = 1.0; eta > 1e-9; eta *= 0.2) detail::center(prob, x, eta, w_obj);

    LmiCertificate cert;
    cert.p = detail::LmiProblem::p_of(x);
    cert.y = detail::LmiProblem::y_of(x);
    cert.l = cert.p.llt().solve(cert.y);
    const auto rep = check_feasible(cert.p, cert.y, m, cfg);
    if (!rep.feasible)
        throw infeasibility_error("synthesize_gain: barrier failed to certify", rep.lambda_max_w);
    cert.lambda_max_w = rep.lambda_max_w;
    cert.lambda_min_p = rep.lambda_min_p;
    cert.c = c;
    cert.trace_p_attr = c > 0 ? (cfg.alpha / c) * cert.p.trace() : 0.0;
    cert.config = cfg;
    return cert;
}

}  // namespace aesmo
