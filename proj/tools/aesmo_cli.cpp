// Command-line front end: simulation, identification, gain synthesis, and
// estimator evaluation around the shared headers. Exit codes: 0 success,
// 2 validation/input error, 3 synthesis infeasibility.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "aesmo/harness.hpp"
#include "aesmo/ident.hpp"
#include "aesmo/json_io.hpp"
#include "aesmo/lmi.hpp"
#include "aesmo/observer.hpp"
#include "aesmo/reference_cell.hpp"
#include "aesmo/telemetry.hpp"

using namespace aesmo;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open " + path);
    json j;
    in >> j;
    return j;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
}

CellParams cell_from_option(const std::string& params_path, double table_soc) {
    if (!params_path.empty()) return cell_params_from_json(read_json(params_path));
    return reference::cell_at(table_soc);
}

DisturbanceSpec parse_disturbance(const std::string& spec) {
    DisturbanceSpec d;
    if (spec.empty() || spec == "none") return d;
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : spec) {
        if (ch == ':') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    parts.push_back(cur);
    if (parts[0] == "sin" || parts[0] == "sinusoid") {
        d.kind = DisturbanceKind::sinusoid;
        if (parts.size() > 1) d.amplitude = std::stod(parts[1]);
        if (parts.size() > 2) d.frequency_hz = std::stod(parts[2]);
        d.amplitude_is_fraction = d.amplitude <= 1.0;
    } else if (parts[0] == "gauss" || parts[0] == "gaussian") {
        d.kind = DisturbanceKind::gaussian;
        if (parts.size() > 1) d.amplitude = std::stod(parts[1]);
        if (parts.size() > 2) d.seed = std::stoull(parts[2]);
    } else {
        throw validation_error("unknown disturbance spec '" + spec +
                               "' (use none | sin:<amp>[:<hz>] | gauss:<amp>[:<seed>])");
    }
    d.validate();
    return d;
}

SynthesisConfig default_config(const CellParams& model_cell, const OcvPolynomial& poly,
                               double alpha1) {
    SynthesisConfig cfg;
    cfg.alpha = 2e-3;
    cfg.eps = 2.0;
    cfg.mu = 1e-10;
    cfg.l_phi = estimate_lipschitz(model_cell, poly, alpha1, 0.45, 0.90, 0.5);
    cfg.gamma = delta_a_norm_bound(reference::table_intervals(), model_cell, alpha1);
    cfg.x_plus = 5.0;
    cfg.d_plus = 1.5e-6;
    cfg.delta = 1e-5;
    return cfg;
}

struct EstimatorBundle {
    EstimationSetup setup;
    SystemMatrices m;
    CellParams model_cell;
    OcvPolynomial poly;
};

EstimatorBundle make_bundle(const std::string& observer, const std::string& gain_path,
                            double z0_guess, const std::string& params_path, double model_soc) {
    EstimatorBundle b;
    b.model_cell = cell_from_option(params_path, model_soc);
    b.poly = reference::synthetic_ocv();
    const double alpha1 = ocv_secant_slope(b.poly);
    b.m = build_matrices(b.model_cell, alpha1);
    b.setup.z0_guess = z0_guess;

    if (observer == "aesmo") {
        b.setup.kind = EstimatorKind::aesmo;
        LmiCertificate cert;
        if (!gain_path.empty()) {
            cert = certificate_from_json(read_json(gain_path));
        } else {
            cert = synthesize_gain(b.m, default_config(b.model_cell, b.poly, alpha1));
        }
        b.setup.gains = make_aesmo_gains(cert, b.m.c, cert.config.mu);
    } else if (observer == "luenberger") {
        b.setup.kind = EstimatorKind::luenberger;
        if (!gain_path.empty()) {
            const json j = read_json(gain_path);
            b.setup.l_fixed = j.contains("l") ? vec4_from_json(j.at("l")) : vec4_from_json(j);
        } else {
            b.setup.l_fixed = reference::baseline_observer_gain();
        }
    } else if (observer == "ukf") {
        b.setup.kind = EstimatorKind::ukf;
        if (!gain_path.empty()) {
            const json j = read_json(gain_path);
            if (j.contains("r_meas")) b.setup.ukf.r_meas = j.at("r_meas").get<double>();
            if (j.contains("p0_diag")) {
                const auto& d = j.at("p0_diag");
                b.setup.ukf.p0 =
                    Eigen::Vector3d(d[0].get<double>(), d[1].get<double>(), d[2].get<double>())
                        .asDiagonal();
            }
            if (j.contains("q_diag")) {
                const auto& d = j.at("q_diag");
                b.setup.ukf.q_proc =
                    Eigen::Vector3d(d[0].get<double>(), d[1].get<double>(), d[2].get<double>())
                        .asDiagonal();
            }
        }
    } else {
        throw validation_error("unknown observer '" + observer + "'");
    }
    return b;
}

void save_estimate_csv(const std::string& path, const Telemetry& tel,
                       const std::vector<double>& est) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw validation_error("cannot open " + path + " for writing");
    const bool truth = tel.has_truth();
    std::fputs(truth ? "t_s,soc_estimate,true_soc,err\n" : "t_s,soc_estimate\n", f);
    for (std::size_t k = 0; k < tel.size(); ++k) {
        if (truth)
            std::fprintf(f, "%.17g,%.17g,%.17g,%.17g\n", tel.t[k], est[k], tel.true_soc[k],
                         est[k] - tel.true_soc[k]);
        else
            std::fprintf(f, "%.17g,%.17g\n", tel.t[k], est[k]);
    }
    std::fclose(f);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attractive-ellipsoid sliding-mode SoC estimation toolkit"};
    app.require_subcommand(1);

    // ---- identify
    std::string id_input, id_out;
    double id_qah = reference::kNominalCapacityAh;
    auto* id = app.add_subcommand("identify", "fit ECM parameters from pulse-test telemetry");
    id->add_option("--input", id_input, "telemetry CSV")->required();
    id->add_option("--out", id_out, "output JSON")->required();
    id->add_option("--q-ah", id_qah, "cell capacity in Ah");

    // ---- fit-ocv
    std::string fo_input, fo_out;
    int fo_degree = 9;
    double fo_qah = reference::kNominalCapacityAh, fo_z0 = 1.0;
    auto* fo = app.add_subcommand("fit-ocv", "fit the OCV polynomial from slow-discharge data");
    fo->add_option("--input", fo_input, "telemetry CSV")->required();
    fo->add_option("--degree", fo_degree, "polynomial degree (default 9)");
    fo->add_option("--out", fo_out, "output JSON")->required();
    fo->add_option("--q-ah", fo_qah, "cell capacity in Ah");
    fo->add_option("--z0", fo_z0, "initial SoC of the record");

    // ---- synthesize
    std::string sy_params, sy_out;
    double sy_alpha = 2e-3, sy_eps = 2.0, sy_mu = 1e-10;
    double sy_lphi = -1.0, sy_gamma = -1.0, sy_xplus = 5.0, sy_dplus = 1.5e-6;
    double sy_delta = 1e-5, sy_ybound = 3e-3, sy_condmax = 40.0;
    auto* sy = app.add_subcommand("synthesize", "solve the gain-synthesis matrix inequality");
    sy->add_option("--params", sy_params, "cell parameter JSON (default: bundled 10% row)");
    sy->add_option("--alpha", sy_alpha, "decay rate");
    sy->add_option("--eps", sy_eps, "S-procedure multiplier");
    sy->add_option("--mu", sy_mu, "switching-gain scale");
    sy->add_option("--lphi", sy_lphi, "Lipschitz bound (default: plateau estimate)");
    sy->add_option("--gamma", sy_gamma, "uncertainty bound (default: table intervals)");
    sy->add_option("--xplus", sy_xplus, "state-norm bound");
    sy->add_option("--dplus", sy_dplus, "disturbance bound");
    sy->add_option("--delta", sy_delta, "strictness margin");
    sy->add_option("--ybound", sy_ybound, "solver Y cap relative to tr(P)");
    sy->add_option("--condmax", sy_condmax, "solver condition cap on P");
    sy->add_option("--out", sy_out, "certificate JSON")->required();

    // ---- simulate
    std::string si_cycle = "hppc", si_dist = "none", si_out, si_params;
    std::uint64_t si_seed = 1;
    double si_z0 = 1.0, si_soc = 0.5, si_duration = 20000.0, si_peak = 2.85;
    int si_pulses = 40;
    double si_amp = 0.57;
    auto* si = app.add_subcommand("simulate", "generate a cycle and simulate ground truth");
    si->add_option("--cycle", si_cycle, "hppc | dynamic | ident")
        ->check(CLI::IsMember({"hppc", "dynamic", "ident"}));
    si->add_option("--seed", si_seed, "seed for the dynamic cycle");
    si->add_option("--disturbance", si_dist, "none | sin:<amp>[:<hz>] | gauss:<amp>[:<seed>]");
    si->add_option("--out", si_out, "output telemetry CSV")->required();
    si->add_option("--z0", si_z0, "initial SoC");
    si->add_option("--cell-soc", si_soc, "bundled parameter row for the truth cell");
    si->add_option("--params", si_params, "truth cell parameter JSON");
    si->add_option("--duration", si_duration, "dynamic cycle duration (s)");
    si->add_option("--peak", si_peak, "dynamic cycle peak current (A)");
    si->add_option("--pulses", si_pulses, "pulse count for the hppc cycle");
    si->add_option("--amplitude", si_amp, "pulse amplitude for the hppc cycle (A)");

    // ---- estimate
    std::string es_input, es_observer = "aesmo", es_gain, es_out, es_report, es_params;
    double es_z0 = 0.6, es_model_soc = 0.1, es_qah = 0.0;
    auto* es = app.add_subcommand("estimate", "run one estimator over a telemetry file");
    es->add_option("--input", es_input, "telemetry CSV")->required();
    es->add_option("--observer", es_observer, "aesmo | luenberger | ukf")
        ->check(CLI::IsMember({"aesmo", "luenberger", "ukf"}));
    es->add_option("--gain", es_gain, "certificate/gain JSON");
    es->add_option("--z0", es_z0, "initial SoC guess");
    es->add_option("--out", es_out, "estimate CSV");
    es->add_option("--report", es_report, "report JSON");
    es->add_option("--params", es_params, "observer model cell JSON");
    es->add_option("--model-soc", es_model_soc, "bundled row for the observer model");
    es->add_option("--q-ah", es_qah, "capacity for coulomb truth when the CSV has none");

    // ---- monte-carlo
    std::string mc_report, mc_gain, mc_params;
    double mc_pct = 20.0;
    int mc_trials = 50;
    std::uint64_t mc_seed = 1;
    auto* mc = app.add_subcommand("monte-carlo", "internal-resistance robustness study");
    mc->add_option("--pct", mc_pct, "Rint variation in percent");
    mc->add_option("--trials", mc_trials, "number of trials");
    mc->add_option("--seed", mc_seed, "master seed");
    mc->add_option("--report", mc_report, "report JSON")->required();
    mc->add_option("--gain", mc_gain, "certificate JSON for the estimator");
    mc->add_option("--params", mc_params, "nominal cell JSON");

    // ---- compare
    std::string cp_input, cp_report, cp_out, cp_gain, cp_params;
    double cp_z0 = 0.6, cp_model_soc = 0.1;
    auto* cp = app.add_subcommand("compare", "run all three estimators side by side");
    cp->add_option("--input", cp_input, "telemetry CSV")->required();
    cp->add_option("--report", cp_report, "report JSON")->required();
    cp->add_option("--out", cp_out, "side-by-side series CSV");
    cp->add_option("--gain", cp_gain, "certificate JSON for the sliding-mode observer");
    cp->add_option("--z0", cp_z0, "initial SoC guess");
    cp->add_option("--params", cp_params, "observer model cell JSON");
    cp->add_option("--model-soc", cp_model_soc, "bundled row for the observer model");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*id) {
            const Telemetry tel = load_telemetry(id_input);
            const IdentResult res = identify_cell(tel, id_qah);
            write_json(id_out, to_json(res));
            std::printf("identified %zu pulse windows -> %s\n", res.rows.size(), id_out.c_str());
        } else if (*fo) {
            const Telemetry tel = load_telemetry(fo_input);
            std::vector<double> soc = tel.has_truth()
                                          ? tel.true_soc
                                          : coulomb_count(tel.current, tel.dt(),
                                                          fo_qah * 3600.0, fo_z0);
            const OcvPolynomial poly = fit_ocv_polynomial(soc, tel.voltage, fo_degree);
            write_json(fo_out, to_json(poly));
            std::printf("fit degree-%d polynomial -> %s\n", fo_degree, fo_out.c_str());
        } else if (*sy) {
            const CellParams cell = cell_from_option(sy_params, 0.1);
            const OcvPolynomial poly = reference::synthetic_ocv();
            const double alpha1 = ocv_secant_slope(poly);
            const SystemMatrices m = build_matrices(cell, alpha1);
            SynthesisConfig cfg = default_config(cell, poly, alpha1);
            cfg.alpha = sy_alpha;
            cfg.eps = sy_eps;
            cfg.mu = sy_mu;
            cfg.x_plus = sy_xplus;
            cfg.d_plus = sy_dplus;
            cfg.delta = sy_delta;
            cfg.y_bound = sy_ybound;
            cfg.cond_max = sy_condmax;
            if (sy_lphi >= 0.0) cfg.l_phi = sy_lphi;
            if (sy_gamma >= 0.0) cfg.gamma = sy_gamma;
            const LmiCertificate cert = synthesize_gain(m, cfg);
            write_json(sy_out, to_json(cert));
            std::printf("lambda_max_w = %.6e\n", cert.lambda_max_w);
            std::printf("trace_p_attr = %.6e\n", cert.trace_p_attr);
            std::printf("L = [%.6g, %.6g, %.6g, %.6g] -> %s\n", cert.l[0], cert.l[1], cert.l[2],
                        cert.l[3], sy_out.c_str());
        } else if (*si) {
            const CellParams cell = cell_from_option(si_params, si_soc);
            const OcvPolynomial poly = reference::synthetic_ocv();
            std::vector<double> cycle;
            if (si_cycle == "hppc") {
                cycle = generate_hppc_eval(cell.q_total, si_pulses, {si_amp});
            } else if (si_cycle == "ident") {
                PulseSchedule sched;
                cycle = generate_ident_profile(sched, cell.q_total, si_z0);
            } else {
                cycle = generate_dynamic_cycle(si_seed, si_duration, si_peak);
            }
            const TruthRun run =
                simulate_truth(cycle, cell, poly, si_z0, parse_disturbance(si_dist));
            save_telemetry(si_out, run.telemetry);
            std::printf("%zu samples -> %s%s\n", run.telemetry.size(), si_out.c_str(),
                        run.truncated ? " (truncated: SoC exhausted)" : "");
        } else if (*es) {
            const Telemetry tel = load_telemetry(es_input);
            const EstimatorBundle b =
                make_bundle(es_observer, es_gain, es_z0, es_params, es_model_soc);
            const EstimationRun run =
                run_estimation(tel, b.setup, b.m, b.model_cell, b.poly, es_qah * 3600.0);
            if (!es_out.empty()) save_estimate_csv(es_out, tel, run.soc_estimate);
            if (!es_report.empty()) write_json(es_report, to_json(run.report));
            std::printf("%s: iae=%.5g ise=%.5g max|e|=%.5g t2%%=%.0fs%s\n", es_observer.c_str(),
                        run.report.iae, run.report.ise, run.report.max_abs_err,
                        run.report.time_to_2pct, run.report.diverged ? " (diverged)" : "");
        } else if (*mc) {
            const CellParams cell = cell_from_option(mc_params, 0.1);
            const OcvPolynomial poly = reference::synthetic_ocv();
            const double alpha1 = ocv_secant_slope(poly);
            const SystemMatrices m = build_matrices(cell, alpha1);
            LmiCertificate cert;
            if (!mc_gain.empty())
                cert = certificate_from_json(read_json(mc_gain));
            else
                cert = synthesize_gain(m, default_config(cell, poly, alpha1));
            EstimationSetup setup;
            setup.kind = EstimatorKind::aesmo;
            setup.gains = make_aesmo_gains(cert, m.c, cert.config.mu);
            setup.z0_guess = 0.6;
            const auto cycle = generate_hppc_eval(cell.q_total, 40, {0.57});
            const auto reports =
                monte_carlo_rint(cell, poly, setup, m, cycle, 1.0, mc_pct, mc_trials, mc_seed);
            json out;
            out["trials"] = json::array();
            double worst = 0.0;
            for (const auto& r : reports) {
                out["trials"].push_back(to_json(r));
                worst = std::max(worst, r.max_abs_err);
            }
            out["worst_max_abs_err"] = worst;
            write_json(mc_report, out);
            std::printf("%d trials, worst max|e| = %.5g -> %s\n", mc_trials, worst,
                        mc_report.c_str());
        } else if (*cp) {
            const Telemetry tel = load_telemetry(cp_input);
            json report;
            std::vector<std::vector<double>> series;
            const char* names[3] = {"aesmo", "luenberger", "ukf"};
            for (const char* name : names) {
                const EstimatorBundle b =
                    make_bundle(name, std::string(name) == "aesmo" ? cp_gain : "", cp_z0,
                                cp_params, cp_model_soc);
                const EstimationRun run = run_estimation(tel, b.setup, b.m, b.model_cell, b.poly);
                report[name] = to_json(run.report);
                series.push_back(run.soc_estimate);
                std::printf("%-10s iae=%.5g max|e|=%.5g t2%%=%.0fs%s\n", name, run.report.iae,
                            run.report.max_abs_err, run.report.time_to_2pct,
                            run.report.diverged ? " (diverged)" : "");
            }
            write_json(cp_report, report);
            if (!cp_out.empty()) {
                std::FILE* f = std::fopen(cp_out.c_str(), "w");
                if (!f) throw validation_error("cannot open " + cp_out + " for writing");
                std::fputs("t_s,true_soc,aesmo,luenberger,ukf\n", f);
                for (std::size_t k = 0; k < tel.size(); ++k)
                    std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g\n", tel.t[k],
                                 tel.has_truth() ? tel.true_soc[k] : 0.0, series[0][k],
                                 series[1][k], series[2][k]);
                std::fclose(f);
            }
        }
    } catch (const infeasibility_error& e) {
        std::fprintf(stderr, "infeasible: %s (best lambda_max_w = %.6e)\n", e.what(),
                     e.best_lambda_max_w());
        return 3;
    } catch (const error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
