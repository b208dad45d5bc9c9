#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "aesmo/harness.hpp"
#include "aesmo/ident.hpp"
#include "aesmo/reference_cell.hpp"

using namespace aesmo;
using Catch::Approx;

namespace {

constexpr double kQ = 2.85 * 3600.0;

Telemetry from_series(const std::vector<double>& current, const std::vector<double>& voltage) {
    Telemetry t;
    for (std::size_t k = 0; k < current.size(); ++k) {
        t.t.push_back(double(k));
        t.current.push_back(current[k]);
        t.voltage.push_back(voltage[k]);
    }
    return t;
}

}  // namespace

TEST_CASE("generate_ident_profile defaults match the published test") {
    PulseSchedule s;
    s.soc_steps = {0.9, 0.8};
    const auto profile = generate_ident_profile(s, kQ);

    // pulse amplitude 2.85 A held for 10 s, rest 4410 s
    std::size_t k = 0;
    while (k < profile.size() && profile[k] != 2.85) ++k;
    REQUIRE(k < profile.size());
    for (std::size_t j = 0; j < 10; ++j) REQUIRE(profile[k + j] == 2.85);
    REQUIRE(profile[k + 10] == 0.0);
    for (std::size_t j = 0; j < 4410; ++j) REQUIRE(profile[k + 10 + j] == 0.0);

    SECTION("charge drawn between breakpoints equals 0.1 Q") {
        // integrate from the first pulse start to the second pulse start
        std::size_t k2 = k + 10 + 4410;
        while (k2 < profile.size() && profile[k2] != 2.85) ++k2;
        REQUIRE(k2 < profile.size());
        double q = 0.0;
        for (std::size_t j = k; j < k2; ++j) q += profile[j];
        CHECK(q == Approx(0.1 * kQ).epsilon(1e-3));
    }
}

TEST_CASE("generate_ident_profile with no breakpoints is trickle-only") {
    PulseSchedule s;
    s.soc_steps.clear();
    const auto profile = generate_ident_profile(s, kQ);
    REQUIRE_FALSE(profile.empty());
    for (double i : profile) REQUIRE(i == s.trickle_current);
}

TEST_CASE("pulse schedule validation") {
    PulseSchedule s;
    s.soc_steps = {0.5, 0.6};  // not decreasing
    CHECK_THROWS_AS(s.validate(), validation_error);
    s.soc_steps = {0.9};
    s.pulse_duration = 0.0;
    CHECK_THROWS_AS(s.validate(), validation_error);
}

TEST_CASE("coulomb_count") {
    SECTION("full discharge lands exactly at z = 0") {
        std::vector<double> i(3601, 2.85);
        const auto z = coulomb_count(i, 1.0, kQ, 1.0);
        CHECK(z.front() == 1.0);
        CHECK(z.back() == Approx(0.0).margin(1e-12));
    }
    SECTION("zero current keeps z0") {
        std::vector<double> i(100, 0.0);
        const auto z = coulomb_count(i, 1.0, kQ, 0.42);
        for (double v : z) REQUIRE(v == 0.42);
    }
    SECTION("symmetric charge/discharge returns to z0") {
        // discharge phase followed by its negated mirror image
        std::vector<double> i;
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(0.0, 2.0);
        for (int k = 0; k < 50; ++k) i.push_back(u(rng));
        for (int k = 49; k >= 0; --k) i.push_back(-i[std::size_t(k)]);
        const auto z = coulomb_count(i, 1.0, kQ, 0.5);
        CHECK(z.back() == Approx(0.5).margin(1e-12));
    }
    SECTION("linearity in the current series") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        std::vector<double> a(200), b(200), sum(200);
        for (int k = 0; k < 200; ++k) {
            a[std::size_t(k)] = u(rng);
            b[std::size_t(k)] = u(rng);
            sum[std::size_t(k)] = a[std::size_t(k)] + b[std::size_t(k)];
        }
        const auto za = coulomb_count(a, 1.0, kQ, 0.0);
        const auto zb = coulomb_count(b, 1.0, kQ, 0.0);
        const auto zs = coulomb_count(sum, 1.0, kQ, 0.0);
        for (std::size_t k = 0; k < 200; ++k)
            REQUIRE(zs[k] - 0.0 == Approx((za[k] - 0.0) + (zb[k] - 0.0)).margin(1e-15));
    }
}

TEST_CASE("fit_rint on a pure-resistor cell is exact") {
    // flat OCV, no RC branches: V = V0 - Rint * I
    const double rint = 0.0355, v0 = 3.6;
    std::vector<double> cur(40, 0.0), volt(40);
    for (std::size_t k = 20; k < 30; ++k) cur[k] = 2.85;
    for (std::size_t k = 0; k < 40; ++k) volt[k] = v0 - rint * cur[k];
    const Telemetry t = from_series(cur, volt);
    CHECK(fit_rint(t) == Approx(rint).margin(1e-15));
}

TEST_CASE("fit_rint with no current step is an error") {
    std::vector<double> cur(30, 1.0), volt(30, 3.5);
    CHECK_THROWS_AS(fit_rint(from_series(cur, volt)), fit_error);
}

TEST_CASE("fit_rint under 1% voltage noise stays within 5% over 100 seeded trials") {
    const double rint = 0.0355, v0 = 3.6;
    std::vector<double> cur(60, 0.0);
    for (std::size_t k = 30; k < 40; ++k) cur[k] = 2.85;
    int pass = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::mt19937_64 rng(std::uint64_t(trial) + 1);
        // 1% of the ~0.1 V drop, not of the absolute voltage: noise on the
        // jump itself is what limits this estimator
        std::normal_distribution<double> nd(0.0, 0.01 * rint * 2.85);
        std::vector<double> volt(60);
        for (std::size_t k = 0; k < 60; ++k) volt[k] = v0 - rint * cur[k] + nd(rng);
        const double est = fit_rint(from_series(cur, volt));
        if (std::abs(est - rint) / rint < 0.05) ++pass;
    }
    CHECK(pass == 100);
}

TEST_CASE("fit_rc_pairs recovers a synthetic bi-exponential") {
    // constructed directly from the SoC-0.5 row with full-charge amplitudes
    const CellParams p = reference::cell_at(0.5);
    const double di = 2.85;
    const double tau_s = p.r_s * p.c_s;   // 29.2 s
    const double tau_f = p.r_f * p.c_f;   // 317.1 s
    std::vector<double> cur(4000, 0.0), volt(4000);
    for (std::size_t k = 0; k < 4000; ++k) {
        const double t = double(k);
        volt[k] = 4.0 - di * p.r_s * std::exp(-t / tau_s) - di * p.r_f * std::exp(-t / tau_f);
    }
    const RcFit fit = fit_rc_pairs(from_series(cur, volt), di);
    CHECK_FALSE(fit.degenerate);
    CHECK(fit.slow.tau > fit.fast.tau);  // slow branch first
    CHECK(fit.slow.tau == Approx(tau_f).epsilon(0.10));
    CHECK(fit.fast.tau == Approx(tau_s).epsilon(0.10));
    CHECK(fit.slow.r == Approx(p.r_f).epsilon(0.05));
    CHECK(fit.fast.r == Approx(p.r_s).epsilon(0.05));
    CHECK(fit.v_inf == Approx(4.0).margin(1e-6));
}

TEST_CASE("fit_rc_pairs flags a flat line as degenerate data") {
    std::vector<double> cur(200, 0.0), volt(200, 3.8);
    CHECK_THROWS_AS(fit_rc_pairs(from_series(cur, volt), 2.85), fit_error);
}

TEST_CASE("fit_rc_pairs rejects short or active windows") {
    std::vector<double> cur(30, 0.0), volt(30, 3.8);
    CHECK_THROWS_AS(fit_rc_pairs(from_series(cur, volt), 2.85), validation_error);
    std::vector<double> cur2(100, 0.5), volt2(100, 3.8);
    CHECK_THROWS_AS(fit_rc_pairs(from_series(cur2, volt2), 2.85), validation_error);
}

TEST_CASE("fit_rc_pairs falls back to a single branch for equal time constants") {
    const double di = 2.0, tau = 80.0;
    std::vector<double> cur(2000, 0.0), volt(2000);
    for (std::size_t k = 0; k < 2000; ++k)
        volt[k] = 3.9 - 0.05 * std::exp(-double(k) / tau);
    const RcFit fit = fit_rc_pairs(from_series(cur, volt), di);
    CHECK(fit.degenerate);
    CHECK(fit.slow.tau == Approx(tau).epsilon(0.02));
    CHECK(fit.slow.amplitude == Approx(fit.fast.amplitude));
}

TEST_CASE("fit_ocv_polynomial recovers known coefficients") {
    const OcvPolynomial truth = reference::synthetic_ocv();
    std::vector<double> soc, ocv;
    for (int k = 0; k < 200; ++k) {
        const double z = double(k) / 199.0;
        soc.push_back(z);
        ocv.push_back(ocv_eval(truth, z));
    }
    const OcvPolynomial fit = fit_ocv_polynomial(soc, ocv, 9);
    for (int i = 0; i < 10; ++i)
        REQUIRE(fit.coeffs[std::size_t(i)] ==
                Approx(truth.coeffs[std::size_t(i)]).epsilon(1e-6));
}

TEST_CASE("fit_ocv_polynomial on constant data") {
    std::vector<double> soc, ocv;
    for (int k = 0; k < 40; ++k) {
        soc.push_back(double(k) / 39.0);
        ocv.push_back(3.6);
    }
    const OcvPolynomial fit = fit_ocv_polynomial(soc, ocv, 9);
    CHECK(fit.coeffs[9] == Approx(3.6).margin(1e-9));
    for (int i = 0; i < 9; ++i)
        CHECK(fit.coeffs[std::size_t(i)] == Approx(0.0).margin(1e-6));
}

TEST_CASE("fit_ocv_polynomial needs degree+1 distinct points") {
    std::vector<double> soc, ocv;
    for (int k = 0; k < 9; ++k) {
        soc.push_back(double(k) / 8.0);
        ocv.push_back(3.0 + 0.1 * k);
    }
    CHECK_THROWS_AS(fit_ocv_polynomial(soc, ocv, 9), validation_error);
}

TEST_CASE("fit residual is monotone nonincreasing in degree") {
    const OcvPolynomial truth = reference::synthetic_ocv();
    std::vector<double> soc, ocv;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.0, 1e-3);
    for (int k = 0; k < 120; ++k) {
        const double z = double(k) / 119.0;
        soc.push_back(z);
        ocv.push_back(ocv_eval(truth, z) + nd(rng));
    }
    auto rms = [&](const OcvPolynomial& p) {
        double s = 0.0;
        for (std::size_t k = 0; k < soc.size(); ++k) {
            const double e = ocv[k] - ocv_eval(p, soc[k]);
            s += e * e;
        }
        return std::sqrt(s / double(soc.size()));
    };
    double prev = std::numeric_limits<double>::infinity();
    for (int d = 1; d <= 9; ++d) {
        const double r = rms(fit_ocv_polynomial(soc, ocv, d));
        REQUIRE(r <= prev * (1.0 + 1e-12));
        prev = r;
    }
}

TEST_CASE("identification round-trip on the SoC-0.5 cell") {
    // Simulate the pulse test on the physical model, then identify.
    const CellParams truth = reference::cell_at(0.5);
    const OcvPolynomial poly = reference::synthetic_ocv();
    PulseSchedule s;
    s.soc_steps = {0.9, 0.8, 0.7};
    const auto profile = generate_ident_profile(s, truth.q_total);
    const TruthRun run = simulate_truth(profile, truth, poly, 1.0);

    const IdentResult res = identify_cell(run.telemetry, 2.85);
    REQUIRE(res.rows.size() == 3);
    const double tau_s = truth.r_s * truth.c_s;
    const double tau_f = truth.r_f * truth.c_f;
    for (const auto& row : res.rows) {
        CHECK(row.params.r_int == Approx(truth.r_int).epsilon(0.02));
        // sorted time constants within 10%
        const double t1 = row.params.r_s * row.params.c_s;
        const double t2 = row.params.r_f * row.params.c_f;
        const double lo = std::min(t1, t2), hi = std::max(t1, t2);
        CHECK(lo == Approx(std::min(tau_s, tau_f)).epsilon(0.10));
        CHECK(hi == Approx(std::max(tau_s, tau_f)).epsilon(0.10));
        CHECK(row.residual_v >= 0.0);
        CHECK(row.residual_v < 5e-3);
    }
    // breakpoints labelled by coulomb-counted SoC at pulse start
    CHECK(res.rows[0].soc == Approx(0.9).margin(5e-3));
    CHECK(res.rows[1].soc == Approx(0.8).margin(5e-3));
}

TEST_CASE("fits are deterministic for identical inputs") {
    const CellParams p = reference::cell_at(0.5);
    const double di = 2.85;
    std::vector<double> cur(1000, 0.0), volt(1000);
    for (std::size_t k = 0; k < 1000; ++k) {
        const double t = double(k);
        volt[k] = 4.0 - di * p.r_s * std::exp(-t / (p.r_s * p.c_s)) -
                  di * p.r_f * std::exp(-t / (p.r_f * p.c_f));
    }
    const RcFit f1 = fit_rc_pairs(from_series(cur, volt), di);
    const RcFit f2 = fit_rc_pairs(from_series(cur, volt), di);
    CHECK(f1.slow.r == f2.slow.r);
    CHECK(f1.fast.tau == f2.fast.tau);
    CHECK(f1.rms_residual == f2.rms_residual);
}
