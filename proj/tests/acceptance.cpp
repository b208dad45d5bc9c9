// End-to-end acceptance runs. Each case prints one PASS/FAIL line; the
// binary exits nonzero if any criterion fails.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "aesmo/harness.hpp"
#include "aesmo/ident.hpp"
#include "aesmo/lmi.hpp"
#include "aesmo/observer.hpp"
#include "aesmo/reference_cell.hpp"

using namespace aesmo;

namespace {

struct Setup {
    CellParams nominal = reference::cell_at(0.1);
    CellParams truth_cell = reference::cell_at(0.5);
    OcvPolynomial poly = reference::synthetic_ocv();
    double alpha1 = ocv_secant_slope(poly);
    SystemMatrices m = build_matrices(nominal, alpha1);

    SynthesisConfig config(double gamma_override = -1.0, double d_plus = 1.5e-6) const {
        SynthesisConfig cfg;
        cfg.alpha = 2e-3;
        cfg.eps = 2.0;
        cfg.mu = 1e-10;
        cfg.l_phi = estimate_lipschitz(nominal, poly, alpha1, 0.45, 0.90, 0.5);
        cfg.gamma = gamma_override >= 0.0
                        ? gamma_override
                        : delta_a_norm_bound(reference::table_intervals(), nominal, alpha1);
        cfg.x_plus = 5.0;
        cfg.d_plus = d_plus;
        cfg.delta = 1e-5;
        return cfg;
    }

    std::vector<double> eval_cycle() const {
        return generate_hppc_eval(nominal.q_total, 40, {0.57}, 0.88, 1000.0);
    }

    AesmoGains gains(const LmiCertificate& cert) const {
        return make_aesmo_gains(cert, m.c, cert.config.mu);
    }
};

void verdict(int criterion, bool pass, const std::string& detail) {
    std::printf("[criterion %d] %s  %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TEST_CASE("criterion 1: gain synthesis self-certifies") {
    Setup s;
    const auto t0 = std::chrono::steady_clock::now();
    const SynthesisConfig cfg = s.config();
    const LmiCertificate cert = synthesize_gain(s.m, cfg);
    const double elapsed = seconds_since(t0);

    const FeasibilityReport rep = check_feasible(cert.p, cert.y, s.m, cfg);
    const double delta = cfg.resolved_delta(s.m.a);
    const bool pass = rep.feasible && rep.lambda_max_w < -delta && rep.lambda_min_p > delta &&
                      elapsed < 5.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "alpha=%g eps=%g lambda_max_w=%.3e lambda_min_p=%.3e (delta=%.1e) in %.2fs",
                  cfg.alpha, cfg.eps, rep.lambda_max_w, rep.lambda_min_p, delta, elapsed);
    verdict(1, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 2: decay envelope and attractive-ellipsoid containment") {
    Setup s;
    const auto t0 = std::chrono::steady_clock::now();

    // Matched run: the model itself is the truth, so the certified gamma for
    // this run is zero and the bound is driven by the disturbance alone.
    const double current = 0.3;
    const int horizon = 10000;
    DisturbanceSpec dist;
    dist.kind = DisturbanceKind::sinusoid;
    dist.amplitude = 0.05;
    dist.amplitude_is_fraction = true;
    dist.frequency_hz = 0.27e-3;
    const double d_amp = dist.resolve_amplitude(s.nominal.b1(), current);

    const SynthesisConfig cfg = s.config(0.0, d_amp);
    const LmiCertificate cert = synthesize_gain(s.m, cfg);
    const AesmoGains g = s.gains(cert);
    const double c = cert.c;

    std::vector<double> cycle(std::size_t(horizon), current);
    const TruthRun truth = simulate_state_space(cycle, s.nominal, s.poly, 0.55, dist);

    EcmState xh{truth.telemetry.voltage[0], 0.50, 0.0, 0.0};
    Vec4 xt0;
    xt0 << truth.telemetry.voltage[0], truth.telemetry.true_soc[0], truth.v_rc1[0],
        truth.v_rc2[0];
    const double v0 = (xt0 - xh.vec()).transpose() * cert.p * (xt0 - xh.vec());
    const double t_transient =
        cfg.alpha * v0 / c > 1.0 ? std::log(cfg.alpha * v0 / c) / cfg.alpha : 0.0;

    const Mat4 pa = p_attr(cert.p, cfg.alpha, c);
    double worst_violation = -1e300;
    double worst_containment = 0.0;
    double z_lo = 1.0, z_hi = 0.0;
    for (int k = 0; k < horizon; ++k) {
        Vec4 xt;
        xt << truth.telemetry.voltage[std::size_t(k)], truth.telemetry.true_soc[std::size_t(k)],
            truth.v_rc1[std::size_t(k)], truth.v_rc2[std::size_t(k)];
        const Vec4 err = xt - xh.vec();
        const double v = err.transpose() * cert.p * err;
        const double env =
            error_bound_envelope(double(k), v0, cfg.alpha, c, cert.lambda_min_p) *
            cert.lambda_min_p;  // back to Lyapunov units
        worst_violation = std::max(worst_violation, v - env);
        if (double(k) >= t_transient)
            worst_containment = std::max(worst_containment, double(err.transpose() * pa * err));
        z_lo = std::min({z_lo, xt[1], xh.z});
        z_hi = std::max({z_hi, xt[1], xh.z});
        xh = aesmo_step(xh, current, truth.telemetry.voltage[std::size_t(k)], 1.0, g, s.m,
                        s.nominal, s.poly);
    }
    const double elapsed = seconds_since(t0);
    // the run must stay inside the band the Lipschitz constant was
    // estimated on, or the certificate would not speak for it
    const bool band_ok = z_lo >= 0.45 && z_hi <= 0.90;
    const bool pass = worst_violation <= 1e-9 && worst_containment <= 1.05 && band_ok &&
                      elapsed < 10.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "max envelope excess=%.3e, containment=%.4f after T=%.0fs, z in [%.2f,%.2f], "
                  "%.2fs",
                  worst_violation, worst_containment, t_transient, z_lo, z_hi, elapsed);
    verdict(2, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 3: pulse-cycle convergence under deliberate mismatch") {
    Setup s;
    const auto t0 = std::chrono::steady_clock::now();
    const LmiCertificate cert = synthesize_gain(s.m, s.config());
    const AesmoGains g = s.gains(cert);

    const auto cycle = s.eval_cycle();
    const TruthRun truth = simulate_truth(cycle, s.truth_cell, s.poly, 1.0);

    EstimationSetup setup;
    setup.kind = EstimatorKind::aesmo;
    setup.gains = g;
    setup.z0_guess = 0.6;
    const EstimationRun run = run_estimation(truth.telemetry, setup, s.m, s.nominal, s.poly);
    const double elapsed = seconds_since(t0);

    const std::size_t n = run.soc_estimate.size();
    double worst_tail = 0.0;
    for (std::size_t k = n / 5; k < n; ++k)
        worst_tail = std::max(worst_tail,
                              std::abs(run.soc_estimate[k] - truth.telemetry.true_soc[k]));
    const bool pass = worst_tail <= 0.05 && !run.report.diverged && elapsed < 10.0;
    char buf[256];
    std::snprintf(buf, sizeof buf, "max |SoC err| over final 80%% = %.4f (n=%zu) in %.2fs",
                  worst_tail, n, elapsed);
    verdict(3, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 4: measurement-noise robustness over ten seeds") {
    Setup s;
    const LmiCertificate cert = synthesize_gain(s.m, s.config());
    const AesmoGains g = s.gains(cert);

    const auto cycle = s.eval_cycle();
    const TruthRun truth = simulate_truth(cycle, s.truth_cell, s.poly, 1.0);
    EstimationSetup setup;
    setup.kind = EstimatorKind::aesmo;
    setup.gains = g;
    setup.z0_guess = 0.6;

    double worst = 0.0;
    int failures = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Telemetry noisy = add_noise(truth.telemetry, 5.0, 1.0, seed);
        const EstimationRun run = run_estimation(noisy, setup, s.m, s.nominal, s.poly);
        double steady = 0.0;
        const std::size_t n = run.soc_estimate.size();
        for (std::size_t k = n / 2; k < n; ++k)
            steady = std::max(steady,
                              std::abs(run.soc_estimate[k] - truth.telemetry.true_soc[k]));
        worst = std::max(worst, steady);
        if (steady > 0.05) ++failures;
    }
    const bool pass = failures == 0;
    char buf[256];
    std::snprintf(buf, sizeof buf, "worst steady-state |SoC err| over 10 seeds = %.4f", worst);
    verdict(4, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 5: internal-resistance Monte-Carlo") {
    Setup s;
    const auto t0 = std::chrono::steady_clock::now();
    const LmiCertificate cert = synthesize_gain(s.m, s.config());
    const AesmoGains g = s.gains(cert);
    const auto cycle = s.eval_cycle();

    EstimationSetup setup;
    setup.kind = EstimatorKind::aesmo;
    setup.gains = g;
    setup.z0_guess = 0.6;

    const int trials = 50;
    const std::uint64_t seed = 1;
    const double settle_s = 2000.0;
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + std::uint64_t(trial));
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        CellParams p = s.nominal;
        p.r_int = s.nominal.r_int * (1.0 + 0.20 * u(rng));
        const TruthRun truth = simulate_truth(cycle, p, s.poly, 1.0);
        const EstimationRun run =
            run_estimation(truth.telemetry, setup, s.m, s.nominal, s.poly);
        double post = 0.0;
        for (std::size_t k = std::size_t(settle_s); k < run.soc_estimate.size(); ++k)
            post = std::max(post,
                            std::abs(run.soc_estimate[k] - truth.telemetry.true_soc[k]));
        worst = std::max(worst, post);
    }
    const double elapsed = seconds_since(t0);
    const bool pass = worst <= 0.05 && elapsed < 60.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "worst post-transient |SoC err| over %d trials (+-20%% Rint) = %.4f in %.1fs",
                  trials, worst, elapsed);
    verdict(5, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 6: convergence ordering against the baselines") {
    Setup s;
    const LmiCertificate cert = synthesize_gain(s.m, s.config());
    const AesmoGains g = s.gains(cert);
    const auto cycle = s.eval_cycle();
    const TruthRun truth = simulate_truth(cycle, s.truth_cell, s.poly, 1.0);

    EstimationSetup sm;
    sm.kind = EstimatorKind::aesmo;
    sm.gains = g;
    sm.z0_guess = 0.6;
    const EstimationRun aesmo_run_ = run_estimation(truth.telemetry, sm, s.m, s.nominal, s.poly);

    EstimationSetup lb;
    lb.kind = EstimatorKind::luenberger;
    lb.l_fixed = reference::baseline_observer_gain();
    lb.z0_guess = 0.6;
    const EstimationRun base_run = run_estimation(truth.telemetry, lb, s.m, s.nominal, s.poly);

    EstimationSetup uk;
    uk.kind = EstimatorKind::ukf;
    uk.z0_guess = 0.6;
    const EstimationRun ukf_run_ = run_estimation(truth.telemetry, uk, s.m, s.nominal, s.poly);

    const bool faster = aesmo_run_.report.time_to_2pct < base_run.report.time_to_2pct;
    const bool ukf_worse = ukf_run_.report.iae >= aesmo_run_.report.iae;
    const bool pass = faster && ukf_worse;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "t2%%: aesmo=%.0fs baseline=%.0fs%s; IAE: ukf=%.2f aesmo=%.2f",
                  aesmo_run_.report.time_to_2pct, base_run.report.time_to_2pct,
                  base_run.report.diverged ? " (baseline diverged)" : "", ukf_run_.report.iae,
                  aesmo_run_.report.iae);
    verdict(6, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 7: identification round-trip at the mid-SoC row") {
    Setup s;
    PulseSchedule sched;
    sched.soc_steps = {0.9, 0.8};
    const auto profile = generate_ident_profile(sched, s.truth_cell.q_total);
    const TruthRun run = simulate_truth(profile, s.truth_cell, s.poly, 1.0);
    const IdentResult res = identify_cell(run.telemetry, reference::kNominalCapacityAh);

    bool pass = !res.rows.empty();
    double worst_rint = 0.0, worst_tau = 0.0;
    const double tau_lo = std::min(s.truth_cell.r_s * s.truth_cell.c_s,
                                   s.truth_cell.r_f * s.truth_cell.c_f);
    const double tau_hi = std::max(s.truth_cell.r_s * s.truth_cell.c_s,
                                   s.truth_cell.r_f * s.truth_cell.c_f);
    for (const auto& row : res.rows) {
        const double er = std::abs(row.params.r_int - s.truth_cell.r_int) / s.truth_cell.r_int;
        const double t1 = row.params.r_s * row.params.c_s;
        const double t2 = row.params.r_f * row.params.c_f;
        const double e_lo = std::abs(std::min(t1, t2) - tau_lo) / tau_lo;
        const double e_hi = std::abs(std::max(t1, t2) - tau_hi) / tau_hi;
        worst_rint = std::max(worst_rint, er);
        worst_tau = std::max({worst_tau, e_lo, e_hi});
    }
    pass = pass && worst_rint <= 0.02 && worst_tau <= 0.10;
    char buf[256];
    std::snprintf(buf, sizeof buf, "Rint err=%.3f%% (<=2%%), worst tau err=%.2f%% (<=10%%)",
                  100.0 * worst_rint, 100.0 * worst_tau);
    verdict(7, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 8: OCV polynomial fit") {
    const OcvPolynomial truth = reference::synthetic_ocv();
    std::vector<double> soc, ocv;
    for (int k = 0; k < 200; ++k) {
        const double z = double(k) / 199.0;
        soc.push_back(z);
        ocv.push_back(ocv_eval(truth, z));
    }
    const OcvPolynomial fit = fit_ocv_polynomial(soc, ocv, 9);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const double denom = std::max(std::abs(truth.coeffs[std::size_t(i)]), 1e-12);
        worst = std::max(worst,
                         std::abs(fit.coeffs[std::size_t(i)] - truth.coeffs[std::size_t(i)]) /
                             denom);
    }
    const bool anchor = ocv_eval(reference::published_ocv(), 0.0) == 3.043;
    const bool pass = worst <= 1e-6 && anchor;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "max relative coefficient error = %.2e (<=1e-6), p10 anchor exact: %s", worst,
                  anchor ? "yes" : "no");
    verdict(8, pass, buf);
    REQUIRE(pass);
}

TEST_CASE("criterion 9: numerical kernels") {
    bool eig_ok = true;
    {
        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> u(-3.0, 3.0);
        for (int k = 0; k < 500 && eig_ok; ++k) {
            const double a = u(rng), b = u(rng), c = u(rng);
            Eigen::MatrixXd m(2, 2);
            m << a, b, b, c;
            const double mean = 0.5 * (a + c);
            const double rad = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
            const auto r = eig_sym(m);
            eig_ok = std::abs(r.values[0] - (mean - rad)) < 1e-10 &&
                     std::abs(r.values[1] - (mean + rad)) < 1e-10;
        }
    }

    bool rk4_ok = true;
    {
        const CellParams prm = reference::cell_at(0.1);
        const OcvPolynomial poly = reference::synthetic_ocv();
        EcmState st{terminal_voltage(0.5, 0.0, 0.0, 2.85, prm, poly), 0.5, 0.0, 0.0};
        const double tau = prm.r_s * prm.c_s;
        for (int k = 1; k <= 100 && rk4_ok; ++k) {
            st = step(st, 2.85, 1.0, prm, poly, SocClamp::none);
            const double exact = 2.85 * prm.r_s * (1.0 - std::exp(-double(k) / tau));
            rk4_ok = std::abs(st.v_rc1 - exact) < 1e-8;
        }
    }

    bool coulomb_ok;
    {
        std::vector<double> i(3601, 2.85);
        const auto z = coulomb_count(i, 1.0, 10260.0, 1.0);
        coulomb_ok = std::abs(z.back() - 0.0) < 1e-12;
    }

    const bool pass = eig_ok && rk4_ok && coulomb_ok;
    char buf[256];
    std::snprintf(buf, sizeof buf, "eig 2x2: %s, RK4 vs RC exponential: %s, coulomb exact: %s",
                  eig_ok ? "ok" : "bad", rk4_ok ? "ok" : "bad", coulomb_ok ? "ok" : "bad");
    verdict(9, pass, buf);
    REQUIRE(pass);
}
