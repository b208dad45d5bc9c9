#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "aesmo/ecm.hpp"
#include "aesmo/errors.hpp"
#include "aesmo/ident.hpp"
#include "aesmo/observer.hpp"
#include "aesmo/telemetry.hpp"

namespace aesmo {

enum class DisturbanceKind { none, sinusoid, gaussian };

/// Exogenous disturbance entering every state-derivative channel. A
/// fractional amplitude is resolved against the ż-channel scale
/// b1 * max|I| of the driven cycle; an absolute amplitude is used as-is.
struct DisturbanceSpec {
    DisturbanceKind kind = DisturbanceKind::none;
    double amplitude = 0.0;
    bool amplitude_is_fraction = false;
    double frequency_hz = 0.27e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(amplitude >= 0)) throw validation_error("DisturbanceSpec: amplitude must be >= 0");
        if (kind == DisturbanceKind::sinusoid && !(frequency_hz > 0))
            throw validation_error("DisturbanceSpec: sinusoid needs frequency > 0");
    }

    double resolve_amplitude(double b1, double peak_current) const {
        return amplitude_is_fraction ? amplitude * b1 * std::abs(peak_current) : amplitude;
    }
};

struct RunReport {
    double iae = 0.0;
    double ise = 0.0;
    double max_abs_err = 0.0;
    double time_to_2pct = 0.0;  // s; 0 when always inside, duration when never settled
    double final_err = 0.0;
    std::size_t samples = 0;
    bool diverged = false;  // estimator state left the finite range mid-run
};

/// Repeated discharge pulse/rest profile spanning roughly SoC 1.0 -> 0.12.
inline std::vector<double> generate_hppc_eval(double q_total, int pulse_count = 40,
                                              std::vector<double> amplitudes = {0.57},
                                              double soc_span = 0.88,
                                              double period_s = 1000.0) {
    if (pulse_count < 1) throw validation_error("generate_hppc_eval: pulse_count must be >= 1");
    if (amplitudes.empty())
        throw validation_error("generate_hppc_eval: need at least one amplitude");
    for (double a : amplitudes)
        if (!(a > 0)) throw validation_error("generate_hppc_eval: amplitudes must be > 0");
    if (!(q_total > 0) || !(soc_span > 0) || soc_span > 1.0)
        throw validation_error("generate_hppc_eval: bad capacity or span");

    const double q_per_pulse = soc_span * q_total / pulse_count;
    std::vector<double> out;
    for (int p = 0; p < pulse_count; ++p) {
        const double amp = amplitudes[std::size_t(p) % amplitudes.size()];
        const long on = std::lround(q_per_pulse / amp);
        const long rest = std::lround(period_s) - on;
        if (rest < 0) throw validation_error("generate_hppc_eval: pulse longer than period");
        for (long i = 0; i < on; ++i) out.push_back(amp);
        for (long i = 0; i < rest; ++i) out.push_back(0.0);
    }
    return out;
}

/// Seeded piecewise-constant urban-style cycle, biased toward discharge
/// with occasional regenerative segments.
inline std::vector<double> generate_dynamic_cycle(std::uint64_t seed, double duration_s,
                                                  double peak_current) {
    if (!(duration_s > 0)) throw validation_error("generate_dynamic_cycle: duration must be > 0");
    if (!(peak_current > 0)) throw validation_error("generate_dynamic_cycle: peak must be > 0");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> seg_len(8, 45);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> out;
    const std::size_t n = std::size_t(std::lround(duration_s));
    while (out.size() < n) {
        const int len = seg_len(rng);
        const double roll = unit(rng);
        double level;
        if (roll < 0.20)
            level = 0.0;                                    // coast
        else if (roll < 0.38)
            level = -0.45 * peak_current * unit(rng);       // regenerative
        else
            level = peak_current * std::pow(unit(rng), 0.7);  // discharge-biased
        for (int i = 0; i < len && out.size() < n; ++i) out.push_back(level);
    }
    return out;
}

struct TruthRun {
    Telemetry telemetry;
    std::vector<double> v_rc1;
    std::vector<double> v_rc2;
    bool truncated = false;  // SoC exhausted mid-cycle
};

namespace detail {

inline double disturbance_at(const DisturbanceSpec& d, double amp, double t,
                             const std::vector<double>& gauss, std::size_t k) {
    switch (d.kind) {
        case DisturbanceKind::none: return 0.0;
        case DisturbanceKind::sinusoid:
            return amp * std::sin(2.0 * M_PI * d.frequency_hz * t);
        case DisturbanceKind::gaussian: return gauss.empty() ? 0.0 : gauss[k];
    }
    return 0.0;
}

}  // namespace detail

/// Ground-truth simulation of the physical cell (three dynamic states, the
/// terminal voltage algebraic). The current series is first-order held
/// between samples; the disturbance enters each state derivative.
inline TruthRun simulate_truth(const std::vector<double>& cycle, const CellParams& params,
                               const OcvPolynomial& poly, double z0,
                               const DisturbanceSpec& dist = {}, double dt = 1.0) {
    params.validate();
    dist.validate();
    if (!(z0 >= 0.0 && z0 <= 1.0)) throw validation_error("simulate_truth: z0 outside [0, 1]");
    if (cycle.empty()) throw validation_error("simulate_truth: empty cycle");

    double peak = 0.0;
    for (double c : cycle) peak = std::max(peak, std::abs(c));
    const double amp = dist.resolve_amplitude(params.b1(), peak);

    std::vector<double> gauss;
    if (dist.kind == DisturbanceKind::gaussian) {
        std::mt19937_64 rng(dist.seed);
        std::normal_distribution<double> nd(0.0, amp);
        gauss.resize(cycle.size());
        for (auto& g : gauss) g = nd(rng);
    }

    TruthRun run;
    const std::size_t n = cycle.size();
    run.telemetry.t.reserve(n);
    double z = z0, v1 = 0.0, v2 = 0.0;
    const double a2 = params.a2(), a3 = params.a3();
    const double b1 = params.b1(), b2 = params.b2(), b3 = params.b3();

    for (std::size_t k = 0; k < n; ++k) {
        const double ik = cycle[k];
        run.telemetry.t.push_back(double(k) * dt);
        run.telemetry.current.push_back(ik);
        run.telemetry.voltage.push_back(terminal_voltage(z, v1, v2, ik, params, poly));
        run.telemetry.true_soc.push_back(z);
        run.v_rc1.push_back(v1);
        run.v_rc2.push_back(v2);

        const double inext = k + 1 < n ? cycle[k + 1] : cycle[k];
        auto current_at = [&](double x) { return ik * (1.0 - x) + inext * x; };
        auto f = [&](double zz, double w1, double w2, double cur, double d) {
            return std::array<double, 3>{-b1 * cur + d, -a2 * w1 + b2 * cur + d,
                                         -a3 * w2 + b3 * cur + d};
        };
        const double t = double(k) * dt;
        const double d0 = detail::disturbance_at(dist, amp, t, gauss, k);
        const double dh = detail::disturbance_at(dist, amp, t + 0.5 * dt, gauss, k);
        const double d1 = detail::disturbance_at(dist, amp, t + dt, gauss, k);
        const auto k1 = f(z, v1, v2, current_at(0.0), d0);
        const auto k2 = f(z + 0.5 * dt * k1[0], v1 + 0.5 * dt * k1[1], v2 + 0.5 * dt * k1[2],
                          current_at(0.5), dh);
        const auto k3 = f(z + 0.5 * dt * k2[0], v1 + 0.5 * dt * k2[1], v2 + 0.5 * dt * k2[2],
                          current_at(0.5), dh);
        const auto k4 = f(z + dt * k3[0], v1 + dt * k3[1], v2 + dt * k3[2], current_at(1.0), d1);
        z += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
        v1 += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
        v2 += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]);
        if (z <= 0.0 && k + 1 < n) {
            z = 0.0;
            run.truncated = true;
            break;
        }
        z = std::clamp(z, 0.0, 1.0);
    }
    return run;
}

/// Matched-model truth: the four-state model itself integrated forward with
/// the disturbance on all four channels (D = [1 1 1 1]'). Used for bound
/// verification where truth and observer must share the same vector field.
inline TruthRun simulate_state_space(const std::vector<double>& cycle,
                                     const CellParams& params, const OcvPolynomial& poly,
                                     double z0, const DisturbanceSpec& dist = {},
                                     double dt = 1.0) {
    params.validate();
    dist.validate();
    if (cycle.empty()) throw validation_error("simulate_state_space: empty cycle");
    double peak = 0.0;
    for (double c : cycle) peak = std::max(peak, std::abs(c));
    const double amp = dist.resolve_amplitude(params.b1(), peak);
    std::vector<double> gauss;
    if (dist.kind == DisturbanceKind::gaussian) {
        std::mt19937_64 rng(dist.seed);
        std::normal_distribution<double> nd(0.0, amp);
        gauss.resize(cycle.size());
        for (auto& g : gauss) g = nd(rng);
    }

    TruthRun run;
    EcmState x{terminal_voltage(z0, 0.0, 0.0, cycle[0], params, poly), z0, 0.0, 0.0};
    for (std::size_t k = 0; k < cycle.size(); ++k) {
        const double ik = cycle[k];
        run.telemetry.t.push_back(double(k) * dt);
        run.telemetry.current.push_back(ik);
        run.telemetry.voltage.push_back(x.v);
        run.telemetry.true_soc.push_back(x.z);
        run.v_rc1.push_back(x.v_rc1);
        run.v_rc2.push_back(x.v_rc2);

        const double t = double(k) * dt;
        auto f = [&](const EcmState& s, double tt) {
            const EcmState d = derivative(s, ik, params, poly);
            const double w = detail::disturbance_at(dist, amp, tt, gauss, k);
            return Vec4(d.v + w, d.z + w, d.v_rc1 + w, d.v_rc2 + w);
        };
        const Vec4 k1 = f(x, t);
        const Vec4 k2 = f(EcmState::from_vec(x.vec() + 0.5 * dt * k1), t + 0.5 * dt);
        const Vec4 k3 = f(EcmState::from_vec(x.vec() + 0.5 * dt * k2), t + 0.5 * dt);
        const Vec4 k4 = f(EcmState::from_vec(x.vec() + dt * k3), t + dt);
        x = EcmState::from_vec(x.vec() + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4));
    }
    return run;
}

/// Zero-mean Gaussian sensor noise; std = pct/100 of full scale (max |I|
/// for current, the 3.65 V nominal for voltage).
inline Telemetry add_noise(const Telemetry& tel, double current_pct, double voltage_pct,
                           std::uint64_t seed) {
    tel.validate();
    if (!(current_pct >= 0 && voltage_pct >= 0))
        throw validation_error("add_noise: percentages must be >= 0");
    Telemetry out = tel;
    if (current_pct == 0.0 && voltage_pct == 0.0) return out;
    double peak = 0.0;
    for (double c : tel.current) peak = std::max(peak, std::abs(c));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    const double si = current_pct / 100.0 * peak;
    const double sv = voltage_pct / 100.0 * 3.65;
    for (std::size_t k = 0; k < out.size(); ++k) {
        out.current[k] += si * nd(rng);
        out.voltage[k] += sv * nd(rng);
    }
    return out;
}

enum class EstimatorKind { aesmo, luenberger, ukf };

struct EstimationSetup {
    EstimatorKind kind = EstimatorKind::aesmo;
    AesmoGains gains;        // aesmo
    Vec4 l_fixed = Vec4::Zero();  // luenberger
    UkfConfig ukf;           // ukf
    double z0_guess = 0.6;
};

struct EstimationRun {
    std::vector<double> soc_estimate;
    RunReport report;
};

namespace detail {

inline RunReport make_report(const std::vector<double>& est, const std::vector<double>& truth,
                             double dt, bool diverged) {
    RunReport r;
    r.samples = est.size();
    r.diverged = diverged;
    double last_violation = -1.0;
    for (std::size_t k = 0; k < est.size(); ++k) {
        const double e = est[k] - truth[k];
        r.iae += std::abs(e) * dt;
        r.ise += e * e * dt;
        r.max_abs_err = std::max(r.max_abs_err, std::abs(e));
        if (std::abs(e) > 0.02) last_violation = double(k) * dt;
        if (k + 1 == est.size()) r.final_err = e;
    }
    r.time_to_2pct = last_violation < 0 ? 0.0 : std::min(last_violation + dt,
                                                         double(est.size()) * dt);
    return r;
}

}  // namespace detail

/// Steps the chosen estimator over the record and scores it against
/// true_soc (or coulomb counting when the record has no truth column).
/// A diverging estimator freezes at its last finite estimate and the
/// report is flagged.
inline EstimationRun run_estimation(const Telemetry& tel, const EstimationSetup& setup,
                                    const SystemMatrices& m, const CellParams& params,
                                    const OcvPolynomial& poly, double q_total_for_truth = 0.0) {
    tel.validate();
    if (tel.size() == 0) throw validation_error("run_estimation: empty telemetry");
    std::vector<double> truth;
    if (tel.has_truth()) {
        truth = tel.true_soc;
    } else {
        if (!(q_total_for_truth > 0))
            throw validation_error(
                "run_estimation: telemetry has no truth column and no capacity was given");
        truth = coulomb_count(tel.current, tel.dt(), q_total_for_truth, setup.z0_guess);
    }

    const double dt = tel.dt();
    EstimationRun out;
    out.soc_estimate.resize(tel.size());
    bool diverged = false;

    if (setup.kind == EstimatorKind::ukf) {
        Vec3 mean(setup.z0_guess, 0.0, 0.0);
        Mat3 cov = setup.ukf.p0;
        for (std::size_t k = 0; k < tel.size(); ++k) {
            out.soc_estimate[k] = mean[0];
            if (diverged) continue;
            Vec3 mean_next = mean;
            Mat3 cov_next = cov;
            ukf_step(mean_next, cov_next, tel.current[k], tel.voltage[k], dt, setup.ukf, params,
                     poly);
            if (mean_next.allFinite() && cov_next.allFinite() && std::abs(mean_next[0]) < 50.0) {
                mean = mean_next;
                cov = cov_next;
            } else {
                diverged = true;
            }
        }
    } else {
        EcmState x{tel.voltage[0], setup.z0_guess, 0.0, 0.0};
        for (std::size_t k = 0; k < tel.size(); ++k) {
            out.soc_estimate[k] = x.z;
            if (diverged) continue;
            EcmState xn;
            try {
                xn = setup.kind == EstimatorKind::aesmo
                         ? aesmo_step(x, tel.current[k], tel.voltage[k], dt, setup.gains, m,
                                      params, poly)
                         : luenberger_step(x, tel.current[k], tel.voltage[k], dt, setup.l_fixed,
                                           m, params, poly);
            } catch (const validation_error&) {
                diverged = true;
                continue;
            }
            if (xn.finite() && std::abs(xn.z) < 50.0 && std::abs(xn.v) < 1e3)
                x = xn;
            else
                diverged = true;
        }
    }
    out.report = detail::make_report(out.soc_estimate, truth, dt, diverged);
    return out;
}

/// Aging study: truth re-simulated per trial with Rint drawn uniformly in
/// +-pct% around nominal, the observer kept at nominal. Per-trial seeds are
/// deterministic splits of the master seed.
inline std::vector<RunReport> monte_carlo_rint(const CellParams& base_params,
                                               const OcvPolynomial& poly,
                                               const EstimationSetup& setup,
                                               const SystemMatrices& m,
                                               const std::vector<double>& cycle, double z0,
                                               double pct = 20.0, int trials = 50,
                                               std::uint64_t seed = 1) {
    if (trials < 1) throw validation_error("monte_carlo_rint: trials must be >= 1");
    if (!(pct >= 0)) throw validation_error("monte_carlo_rint: pct must be >= 0");
    std::vector<RunReport> reports;
    reports.reserve(std::size_t(trials));
    for (int trial = 0; trial < trials; ++trial) {
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + std::uint64_t(trial));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        CellParams p = base_params;
        p.r_int = base_params.r_int * (1.0 + pct / 100.0 * u(rng));
        const TruthRun truth = simulate_truth(cycle, p, poly, z0);
        reports.push_back(
            run_estimation(truth.telemetry, setup, m, base_params, poly).report);
    }
    return reports;
}

}  // namespace aesmo
