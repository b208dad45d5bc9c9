#pragma once

#include <json.hpp>
#include <string>

#include "aesmo/ecm.hpp"
#include "aesmo/harness.hpp"
#include "aesmo/ident.hpp"
#include "aesmo/lmi.hpp"
#include "aesmo/observer.hpp"

namespace aesmo {

using nlohmann::json;

inline json mat4_to_json(const Mat4& m) {  // row-major
    json rows = json::array();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) rows.push_back(m(i, j));
    return rows;
}

inline Mat4 mat4_from_json(const json& j) {
    if (!j.is_array() || j.size() != 16) throw parse_error("expected 16-element matrix array");
    Mat4 m;
    for (int i = 0; i < 4; ++i)
        for (int j2 = 0; j2 < 4; ++j2) m(i, j2) = j[std::size_t(4 * i + j2)].get<double>();
    return m;
}

inline json vec4_to_json(const Vec4& v) { return json{v[0], v[1], v[2], v[3]}; }

inline Vec4 vec4_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw parse_error("expected 4-element vector array");
    return Vec4(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

inline json to_json(const LmiCertificate& c) {
    return json{{"p", mat4_to_json(c.p)},
                {"y", vec4_to_json(c.y)},
                {"l", vec4_to_json(c.l)},
                {"lambda_max_w", c.lambda_max_w},
                {"lambda_min_p", c.lambda_min_p},
                {"trace_p_attr", c.trace_p_attr},
                {"c", c.c},
                {"alpha", c.config.alpha},
                {"eps", c.config.eps},
                {"mu", c.config.mu},
                {"l_phi", c.config.l_phi},
                {"gamma", c.config.gamma},
                {"x_plus", c.config.x_plus},
                {"d_plus", c.config.d_plus},
                {"delta", c.config.delta},
                {"y_bound", c.config.y_bound},
                {"cond_max", c.config.cond_max}};
}

inline LmiCertificate certificate_from_json(const json& j) {
    LmiCertificate c;
    c.p = mat4_from_json(j.at("p"));
    c.y = vec4_from_json(j.at("y"));
    c.l = vec4_from_json(j.at("l"));
    c.lambda_max_w = j.at("lambda_max_w").get<double>();
    c.lambda_min_p = j.at("lambda_min_p").get<double>();
    c.trace_p_attr = j.at("trace_p_attr").get<double>();
    c.c = j.at("c").get<double>();
    c.config.alpha = j.at("alpha").get<double>();
    c.config.eps = j.at("eps").get<double>();
    c.config.mu = j.at("mu").get<double>();
    c.config.l_phi = j.value("l_phi", 0.0);
    c.config.gamma = j.value("gamma", 0.0);
    c.config.x_plus = j.value("x_plus", 5.0);
    c.config.d_plus = j.value("d_plus", 0.0);
    c.config.delta = j.value("delta", 0.0);
    c.config.y_bound = j.value("y_bound", 3e-3);
    c.config.cond_max = j.value("cond_max", 40.0);
    return c;
}

inline json to_json(const IdentResult& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back(json{{"soc", row.soc},
                            {"r_int_ohm", row.params.r_int},
                            {"r_s_ohm", row.params.r_s},
                            {"c_s_farad", row.params.c_s},
                            {"r_f_ohm", row.params.r_f},
                            {"c_f_farad", row.params.c_f},
                            {"residual_v", row.residual_v}});
    return json{{"rows", rows}};
}

inline json to_json(const RunReport& r) {
    return json{{"iae", r.iae},
                {"ise", r.ise},
                {"max_abs_err", r.max_abs_err},
                {"time_to_2pct_s", r.time_to_2pct},
                {"final_err", r.final_err},
                {"samples", r.samples},
                {"diverged", r.diverged}};
}

inline json to_json(const OcvPolynomial& p) {
    json c = json::array();
    for (double v : p.coeffs) c.push_back(v);
    return json{{"coeffs", c}};
}

inline OcvPolynomial ocv_from_json(const json& j) {
    const auto& c = j.at("coeffs");
    if (!c.is_array() || c.size() != 10)
        throw parse_error("ocv polynomial: expected 10 coefficients");
    OcvPolynomial p;
    for (std::size_t i = 0; i < 10; ++i) p.coeffs[i] = c[i].get<double>();
    return p;
}

inline json to_json(const CellParams& p) {
    return json{{"r_int_ohm", p.r_int},     {"r_s_ohm", p.r_s},  {"c_s_farad", p.c_s},
                {"r_f_ohm", p.r_f},         {"c_f_farad", p.c_f}, {"q_coulomb", p.q_total}};
}

inline CellParams cell_params_from_json(const json& j) {
    CellParams p;
    p.r_int = j.at("r_int_ohm").get<double>();
    p.r_s = j.at("r_s_ohm").get<double>();
    p.c_s = j.at("c_s_farad").get<double>();
    p.r_f = j.at("r_f_ohm").get<double>();
    p.c_f = j.at("c_f_farad").get<double>();
    if (j.contains("q_coulomb"))
        p.q_total = j.at("q_coulomb").get<double>();
    else
        p.q_total = j.at("q_ah").get<double>() * 3600.0;
    p.validate();
    return p;
}

}  // namespace aesmo
