#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "aesmo/ecm.hpp"
#include "aesmo/errors.hpp"
#include "aesmo/telemetry.hpp"

namespace aesmo {

/// Pulse-discharge test schedule: trickle between SoC breakpoints, then a
/// short pulse and a long rest at each breakpoint.
struct PulseSchedule {
    double trickle_current = 0.1;   // A
    double pulse_current = 2.85;    // A
    double pulse_duration = 10.0;   // s
    double rest_duration = 4410.0;  // s
    std::vector<double> soc_steps = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};

    void validate() const {
        if (!(trickle_current > 0 && pulse_current > 0))
            throw validation_error("PulseSchedule: currents must be > 0");
        if (!(pulse_duration > 0 && rest_duration > 0))
            throw validation_error("PulseSchedule: durations must be > 0");
        for (std::size_t i = 0; i < soc_steps.size(); ++i) {
            if (!(soc_steps[i] > 0.0 && soc_steps[i] <= 1.0))
                throw validation_error("PulseSchedule: breakpoints must lie in (0, 1]");
            if (i > 0 && !(soc_steps[i] < soc_steps[i - 1]))
                throw validation_error("PulseSchedule: breakpoints must strictly decrease");
        }
    }
};

/// 1 Hz current series for the schedule. Between consecutive breakpoints
/// the total charge drawn (trickle + the pulse at the earlier breakpoint)
/// equals the breakpoint SoC gap times capacity. With no breakpoints the
/// profile is trickle-only down to 10% SoC.
inline std::vector<double> generate_ident_profile(const PulseSchedule& s, double q_total,
                                                  double z0 = 1.0) {
    s.validate();
    if (!(q_total > 0)) throw validation_error("generate_ident_profile: q_total must be > 0");
    std::vector<double> out;
    auto add = [&](double amps, double seconds) {
        const long n = std::lround(seconds);
        for (long i = 0; i < n; ++i) out.push_back(amps);
    };
    if (s.soc_steps.empty()) {
        add(s.trickle_current, (z0 - 0.1) * q_total / s.trickle_current);
        return out;
    }
    const double q_pulse = s.pulse_current * s.pulse_duration;
    double z_prev = z0;
    bool first = true;
    for (double bp : s.soc_steps) {
        double q_trickle = (z_prev - bp) * q_total - (first ? 0.0 : q_pulse);
        if (q_trickle < 0)
            throw validation_error("generate_ident_profile: pulse overdraws the SoC gap");
        add(s.trickle_current, q_trickle / s.trickle_current);
        add(s.pulse_current, s.pulse_duration);
        add(0.0, s.rest_duration);
        z_prev = bp;
        first = false;
    }
    return out;
}

/// Trapezoidal coulomb counting: z(t_k) = z0 - (1/Q) * sum I dt.
inline std::vector<double> coulomb_count(const std::vector<double>& current, double dt,
                                         double q_total, double z0) {
    if (!(q_total > 0)) throw validation_error("coulomb_count: q_total must be > 0");
    if (!(z0 >= 0.0 && z0 <= 1.0)) throw validation_error("coulomb_count: z0 outside [0, 1]");
    std::vector<double> z(current.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < current.size(); ++k) {
        z[k] = z0 - acc / q_total;
        if (k + 1 < current.size()) acc += 0.5 * (current[k] + current[k + 1]) * dt;
    }
    return z;
}

/// Ohmic resistance from the instantaneous voltage jump across the largest
/// current step in the segment.
inline double fit_rint(const Telemetry& segment) {
    segment.validate();
    std::size_t edge = 0;
    double best = 0.0;
    for (std::size_t k = 1; k < segment.size(); ++k) {
        const double di = segment.current[k] - segment.current[k - 1];
        if (std::abs(di) > std::abs(best)) {
            best = di;
            edge = k;
        }
    }
    if (best == 0.0) throw fit_error("fit_rint: segment contains no current step");
    const double dv = segment.voltage[edge] - segment.voltage[edge - 1];
    return std::abs(dv) / std::abs(best);
}

namespace detail {

struct LmOptions {
    double lambda0 = 1e-3;
    double lambda_up = 10.0;
    double lambda_down = 10.0;
    int max_iterations = 200;
    double rel_tol = 1e-9;
};

struct LmOutcome {
    Eigen::VectorXd theta;
    double rms = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// Damped Gauss-Newton with diagonal (Marquardt) scaling. `residual` fills
/// r(theta) = data - model(theta); `jacobian` fills the model Jacobian
/// d model / d theta (= -d r / d theta); `admissible` rejects steps that
/// leave the parameter domain.
inline LmOutcome levenberg_marquardt(
    Eigen::VectorXd theta, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residual,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
    const std::function<bool(const Eigen::VectorXd&)>& admissible, LmOptions opt = {}) {
    Eigen::VectorXd r = residual(theta);
    double cost = r.squaredNorm();
    double lambda = opt.lambda0;
    LmOutcome out;
    for (int it = 0; it < opt.max_iterations; ++it) {
        ++out.iterations;
        const Eigen::MatrixXd j = jacobian(theta);
        const Eigen::MatrixXd h = j.transpose() * j;
        const Eigen::VectorXd g = j.transpose() * r;
        bool stepped = false;
        double rel = 0.0;
        while (lambda < 1e14) {
            Eigen::MatrixXd hd = h;
            hd.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
            const Eigen::VectorXd step = hd.ldlt().solve(g);
            const Eigen::VectorXd cand = theta + step;
            if (step.allFinite() && admissible(cand)) {
                const Eigen::VectorXd rc = residual(cand);
                const double cc = rc.squaredNorm();
                if (cc < cost) {
                    rel = (cost - cc) / std::max(cost, 1e-300);
                    theta = cand;
                    r = rc;
                    cost = cc;
                    lambda = std::max(lambda / opt.lambda_down, 1e-14);
                    stepped = true;
                    break;
                }
            }
            lambda *= opt.lambda_up;
        }
        if (!stepped) break;
        if (rel < opt.rel_tol) {
            out.converged = true;
            break;
        }
    }
    out.theta = theta;
    out.rms = std::sqrt(cost / double(std::max<Eigen::Index>(r.size(), 1)));
    out.converged = out.converged || out.iterations < opt.max_iterations;
    return out;
}

// Log-linear straight-line fit of log(r) over a sample window.
inline bool log_linear(const std::vector<double>& t, const std::vector<double>& r, double& tau,
                       double& amp) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (r[i] <= 1e-13) continue;
        const double y = std::log(r[i]);
        sx += t[i];
        sy += y;
        sxx += t[i] * t[i];
        sxy += t[i] * y;
        ++n;
    }
    if (n < 5) return false;
    const double det = n * sxx - sx * sx;
    if (std::abs(det) < 1e-12) return false;
    const double slope = (n * sxy - sx * sy) / det;
    const double icept = (sy * sxx - sx * sxy) / det;
    if (!(slope < 0)) return false;
    tau = -1.0 / slope;
    amp = std::exp(icept);
    return std::isfinite(tau) && std::isfinite(amp);
}

}  // namespace detail

/// One RC branch recovered from a relaxation fit.
struct RcBranch {
    double r = 0.0;    // ohm
    double c = 0.0;    // farad
    double tau = 0.0;  // s
    double amplitude = 0.0;  // V at the start of the relaxation
};

struct RcFit {
    RcBranch slow;  // larger time constant first
    RcBranch fast;
    double v_inf = 0.0;
    double rms_residual = 0.0;
    bool degenerate = false;  // time constants within 1%: single-branch fallback
};

/// Bi-exponential relaxation fit V(t) = Vinf - A1 e^(-t/tau1) - A2 e^(-t/tau2)
/// by Levenberg-Marquardt, seeded from log-linear fits of the late and early
/// windows. delta_i is the current step that charged the branches; branch
/// resistances follow R = A / delta_i and C = tau / R.
inline RcFit fit_rc_pairs(const Telemetry& relaxation, double delta_i) {
    relaxation.validate();
    const std::size_t n = relaxation.size();
    if (n < 50) throw validation_error("fit_rc_pairs: need at least 50 samples");
    if (!(std::abs(delta_i) > 0)) throw validation_error("fit_rc_pairs: delta_i must be nonzero");
    for (double i : relaxation.current)
        if (std::abs(i) > 1e-6 * std::abs(delta_i) + 1e-12)
            throw validation_error("fit_rc_pairs: relaxation window must have zero current");

    const double t0 = relaxation.t.front();
    std::vector<double> t(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = relaxation.t[i] - t0;
        v[i] = relaxation.voltage[i];
    }
    const double vinf0 = v.back();
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = vinf0 - v[i];
    const double swing = *std::max_element(r.begin(), r.end()) -
                         *std::min_element(r.begin(), r.end());
    if (swing < 1e-9) throw fit_error("fit_rc_pairs: flat voltage, nothing to fit");

    // Seed: slow branch from the late half, fast branch from the early part
    // after removing the slow component.
    double tau1 = t[n - 1] / 3.0, a1 = r[0] * 0.3;
    {
        std::vector<double> tl(t.begin() + long(n / 3), t.end());
        std::vector<double> rl(r.begin() + long(n / 3), r.end());
        detail::log_linear(tl, rl, tau1, a1);
    }
    double tau2 = std::max(tau1 / 10.0, 1.0), a2 = std::max(r[0] - a1, 1e-4);
    {
        const std::size_t ne = std::min<std::size_t>(n, 60);
        std::vector<double> te(t.begin(), t.begin() + long(ne));
        std::vector<double> re(ne);
        for (std::size_t i = 0; i < ne; ++i) re[i] = r[i] - a1 * std::exp(-t[i] / tau1);
        detail::log_linear(te, re, tau2, a2);
    }

    Eigen::VectorXd theta(5);
    theta << vinf0, a1, tau1, a2, tau2;
    auto residual = [&](const Eigen::VectorXd& th) {
        Eigen::VectorXd res(n);
        for (std::size_t i = 0; i < n; ++i)
            res[long(i)] = v[i] - (th[0] - th[1] * std::exp(-t[i] / th[2]) -
                                   th[3] * std::exp(-t[i] / th[4]));
        return res;
    };
    auto jacobian = [&](const Eigen::VectorXd& th) {
        Eigen::MatrixXd j(n, 5);
        for (std::size_t i = 0; i < n; ++i) {
            const double e1 = std::exp(-t[i] / th[2]);
            const double e2 = std::exp(-t[i] / th[4]);
            j(long(i), 0) = -1.0;
            j(long(i), 1) = e1;
            j(long(i), 2) = th[1] * e1 * t[i] / (th[2] * th[2]);
            j(long(i), 3) = e2;
            j(long(i), 4) = th[3] * e2 * t[i] / (th[4] * th[4]);
        }
        return Eigen::MatrixXd(-j);
    };
    auto admissible = [](const Eigen::VectorXd& th) { return th[2] > 0 && th[4] > 0; };

    const auto lm = detail::levenberg_marquardt(theta, residual, jacobian, admissible);
    if (!lm.converged)
        throw fit_error("fit_rc_pairs: no convergence, final rms " + std::to_string(lm.rms));

    RcFit fit;
    fit.v_inf = lm.theta[0];
    fit.rms_residual = lm.rms;
    double A1 = lm.theta[1], T1 = lm.theta[2], A2 = lm.theta[3], T2 = lm.theta[4];
    if (T1 < T2) {
        std::swap(A1, A2);
        std::swap(T1, T2);
    }
    if (std::abs(T1 - T2) <= 0.01 * T1) {
        // Indistinguishable branches: refit a single exponential and split it.
        fit.degenerate = true;
        Eigen::VectorXd th1(3);
        th1 << lm.theta[0], A1 + A2, 0.5 * (T1 + T2);
        auto res1 = [&](const Eigen::VectorXd& th) {
            Eigen::VectorXd res(n);
            for (std::size_t i = 0; i < n; ++i)
                res[long(i)] = v[i] - (th[0] - th[1] * std::exp(-t[i] / th[2]));
            return res;
        };
        auto jac1 = [&](const Eigen::VectorXd& th) {
            Eigen::MatrixXd j(n, 3);
            for (std::size_t i = 0; i < n; ++i) {
                const double e1 = std::exp(-t[i] / th[2]);
                j(long(i), 0) = -1.0;
                j(long(i), 1) = e1;
                j(long(i), 2) = th[1] * e1 * t[i] / (th[2] * th[2]);
            }
            return Eigen::MatrixXd(-j);
        };
        const auto lm1 = detail::levenberg_marquardt(
            th1, res1, jac1, [](const Eigen::VectorXd& th) { return th[2] > 0; });
        fit.v_inf = lm1.theta[0];
        fit.rms_residual = lm1.rms;
        A1 = A2 = 0.5 * lm1.theta[1];
        T1 = T2 = lm1.theta[2];
    }
    const double adi = std::abs(delta_i);
    fit.slow = {A1 / adi, T1 / (A1 / adi), T1, A1};
    fit.fast = {A2 / adi, T2 / (A2 / adi), T2, A2};
    return fit;
}

/// Column-scaled Vandermonde least squares; returns the coefficients padded
/// into the fixed 10-slot layout (highest degree first).
inline OcvPolynomial fit_ocv_polynomial(const std::vector<double>& soc,
                                        const std::vector<double>& ocv, int degree = 9) {
    if (degree < 0 || degree > 9)
        throw validation_error("fit_ocv_polynomial: degree must be in [0, 9]");
    if (soc.size() != ocv.size())
        throw validation_error("fit_ocv_polynomial: sample arrays differ in length");
    std::vector<double> distinct(soc);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < std::size_t(degree + 1))
        throw validation_error("fit_ocv_polynomial: need at least degree+1 distinct SoC samples");

    const Eigen::Index n = Eigen::Index(soc.size());
    const int cols = degree + 1;
    Eigen::MatrixXd vand(n, cols);
    for (Eigen::Index i = 0; i < n; ++i) {
        double p = 1.0;
        for (int j = cols - 1; j >= 0; --j) {
            vand(i, j) = p;
            p *= soc[std::size_t(i)];
        }
    }
    Eigen::VectorXd scale(cols);
    for (int j = 0; j < cols; ++j) scale[j] = std::max(vand.col(j).norm(), 1e-300);
    for (int j = 0; j < cols; ++j) vand.col(j) /= scale[j];

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(vand);
    qr.setThreshold(1e-12);
    if (qr.rank() < cols) throw fit_error("fit_ocv_polynomial: rank-deficient design matrix");
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(ocv.data(), n);
    Eigen::VectorXd coef = qr.solve(b).cwiseQuotient(scale);

    OcvPolynomial poly;
    for (int j = 0; j < cols; ++j) poly.coeffs[std::size_t(9 - degree + j)] = coef[j];
    return poly;
}

struct IdentRow {
    double soc = 0.0;
    CellParams params;
    double residual_v = 0.0;  // RMS of the polished segment fit
};

struct IdentResult {
    std::vector<IdentRow> rows;
};

namespace detail {

struct PulseWindow {
    std::size_t pulse_start = 0;  // first sample of the pulse
    std::size_t rest_start = 0;   // first zero-current sample after the pulse
    std::size_t rest_end = 0;     // one past the relaxation window
    double pulse_current = 0.0;
    double pre_current = 0.0;
};

inline std::vector<PulseWindow> find_pulses(const Telemetry& tel, double min_step) {
    std::vector<PulseWindow> out;
    const std::size_t n = tel.size();
    for (std::size_t k = 1; k < n; ++k) {
        const bool rising = tel.current[k] - tel.current[k - 1] > min_step;
        if (!rising) continue;
        PulseWindow w;
        w.pulse_start = k;
        w.pre_current = tel.current[k - 1];
        w.pulse_current = tel.current[k];
        std::size_t j = k;
        while (j < n && std::abs(tel.current[j] - w.pulse_current) < 1e-9) ++j;
        if (j >= n || std::abs(tel.current[j]) > 1e-9) continue;  // must fall to rest
        w.rest_start = j;
        std::size_t e = j;
        while (e < n && std::abs(tel.current[e]) < 1e-9) ++e;
        w.rest_end = e;
        if (w.rest_end - w.rest_start >= 50) out.push_back(w);
        k = e > k ? e - 1 : k;
    }
    return out;
}

// Exact piecewise-constant-current prediction of the terminal voltage over
// [w.pulse_start, w.rest_end) for parameter vector
// theta = (rint, r_slow, c_slow, r_fast, c_fast).
inline Eigen::VectorXd segment_prediction(const Telemetry& tel, const PulseWindow& w,
                                          const Eigen::VectorXd& th, double v_inf,
                                          double ocv_slope_local,
                                          const std::vector<double>& z_series, double z_ref) {
    const double dt = tel.dt();
    const double rint = th[0];
    const std::array<double, 2> rr{th[1], th[3]};
    const std::array<double, 2> cc{th[2], th[4]};
    std::array<double, 2> v_rc{};
    for (int b = 0; b < 2; ++b) v_rc[std::size_t(b)] = w.pre_current * rr[std::size_t(b)];

    const std::size_t n = w.rest_end - w.pulse_start;
    Eigen::VectorXd pred;
    pred.resize(Eigen::Index(n));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = w.pulse_start + i;
        const double cur = tel.current[k];
        const double voc = v_inf + ocv_slope_local * (z_series[k] - z_ref);
        pred[long(i)] = voc - v_rc[0] - v_rc[1] - rint * cur;
        for (int b = 0; b < 2; ++b) {
            const double tau = rr[std::size_t(b)] * cc[std::size_t(b)];
            const double e = std::exp(-dt / tau);
            v_rc[std::size_t(b)] =
                v_rc[std::size_t(b)] * e + cur * rr[std::size_t(b)] * (1.0 - e);
        }
    }
    return pred;
}

}  // namespace detail

/// Full identification pipeline over a pulse-discharge record: per pulse,
/// ohmic drop -> Rint, relaxation bi-exponential -> RC pairs, then an LM
/// polish of all five parameters on the pulse+rest window.
inline IdentResult identify_cell(const Telemetry& tel, double q_ah) {
    tel.validate();
    if (!(q_ah > 0)) throw validation_error("identify_cell: q_ah must be > 0");
    const double q_total = q_ah * 3600.0;
    const double peak = *std::max_element(tel.current.begin(), tel.current.end());
    const auto pulses = detail::find_pulses(tel, 0.5 * peak);
    if (pulses.empty()) throw fit_error("identify_cell: no pulse/rest windows found");

    const auto z_series = coulomb_count(tel.current, tel.dt(), q_total, 1.0);

    // First pass: plateau voltages for the local OCV slope.
    std::vector<double> v_inf(pulses.size()), z_bp(pulses.size());
    for (std::size_t i = 0; i < pulses.size(); ++i) {
        v_inf[i] = tel.voltage[pulses[i].rest_end - 1];
        z_bp[i] = z_series[pulses[i].pulse_start];
    }

    IdentResult result;
    for (std::size_t i = 0; i < pulses.size(); ++i) {
        const auto& w = pulses[i];
        // instantaneous drop across the falling edge
        Telemetry edge;
        for (std::size_t k = w.rest_start - 2; k < w.rest_start + 2; ++k) {
            edge.t.push_back(tel.t[k]);
            edge.current.push_back(tel.current[k]);
            edge.voltage.push_back(tel.voltage[k]);
        }
        const double rint0 = fit_rint(edge);

        Telemetry relax;
        for (std::size_t k = w.rest_start; k < w.rest_end; ++k) {
            relax.t.push_back(tel.t[k]);
            relax.current.push_back(tel.current[k]);
            relax.voltage.push_back(tel.voltage[k]);
        }
        const double delta_i = w.pulse_current;
        const RcFit rc = fit_rc_pairs(relax, delta_i);

        double slope = 0.0;
        if (pulses.size() > 1) {
            const std::size_t j = i + 1 < pulses.size() ? i + 1 : i - 1;
            const double dz = z_bp[i] - z_bp[j];
            if (std::abs(dz) > 1e-9) slope = (v_inf[i] - v_inf[j]) / dz;
        }

        // Polish all five parameters in log space: the raw scales span eight
        // orders of magnitude, which stalls a plain Gauss-Newton step.
        Eigen::VectorXd theta(5);
        theta << std::log(rint0), std::log(rc.slow.r), std::log(rc.slow.c),
            std::log(rc.fast.r), std::log(rc.fast.c);
        const double z_ref = z_series[w.rest_end - 1];
        auto residual = [&](const Eigen::VectorXd& th) {
            const Eigen::VectorXd pred = detail::segment_prediction(
                tel, w, th.array().exp().matrix(), rc.v_inf, slope, z_series, z_ref);
            Eigen::VectorXd res(pred.size());
            for (Eigen::Index k = 0; k < pred.size(); ++k)
                res[k] = tel.voltage[w.pulse_start + std::size_t(k)] - pred[k];
            return res;
        };
        auto jacobian = [&](const Eigen::VectorXd& th) {
            const Eigen::VectorXd r0 = residual(th);
            Eigen::MatrixXd j(r0.size(), 5);
            for (int p = 0; p < 5; ++p) {
                Eigen::VectorXd tp = th;
                const double h = 1e-6;
                tp[p] += h;
                j.col(p) = (r0 - residual(tp)) / h;  // model Jacobian
            }
            return j;
        };
        auto admissible = [](const Eigen::VectorXd& th) {
            return th.allFinite() && th.cwiseAbs().maxCoeff() < 40.0;
        };
        const auto lm = detail::levenberg_marquardt(theta, residual, jacobian, admissible);

        IdentRow row;
        row.soc = z_bp[i];
        const Eigen::VectorXd fitted = lm.theta.array().exp().matrix();
        row.params = CellParams{fitted[0], fitted[1], fitted[2], fitted[3], fitted[4], q_total};
        row.params.validate();
        row.residual_v = lm.rms;
        result.rows.push_back(row);
    }
    return result;
}

}  // namespace aesmo
