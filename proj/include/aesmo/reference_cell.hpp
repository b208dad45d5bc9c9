#pragma once

#include <array>
#include <cstddef>

#include "aesmo/ecm.hpp"

// Bundled data for a Samsung INR18650-29E cell (2.85 Ah nominal):
// the identified ECM parameter table, the published OCV polynomial, and a
// well-conditioned synthetic OCV polynomial used by the simulation harness.

namespace aesmo::reference {

inline constexpr double kNominalCapacityAh = 2.85;
inline constexpr double kNominalVoltage = 3.65;

struct ParamRow {
    double soc;
    double r_int_ohm;
    double r_s_ohm;
    double c_s_farad;
    double r_f_ohm;
    double c_f_farad;
};

/// Pulse-discharge identification results, one row per SoC breakpoint.
inline constexpr std::array<ParamRow, 9> kParamTable{{
    {0.9, 0.0320, 0.0153, 1935.0, 0.0320, 16780.0},
    {0.8, 0.0329, 0.0230, 1425.0, 0.0204, 14810.0},
    {0.7, 0.0302, 0.0256, 1401.0, 0.0229, 10860.0},
    {0.6, 0.0306, 0.0256, 1541.0, 0.0711, 3890.0},
    {0.5, 0.0306, 0.0144, 2031.0, 0.0193, 16430.0},
    {0.4, 0.0320, 0.0151, 2114.0, 0.0252, 11820.0},
    {0.3, 0.0308, 0.0144, 2419.0, 0.0570, 65540.0},
    {0.2, 0.0321, 0.0149, 2084.0, 0.0231, 11250.0},
    {0.1, 0.0355, 0.0182, 1601.0, 0.0690, 1360.0},
}};

inline CellParams cell_at(double soc) {
    for (const auto& r : kParamTable)
        if (r.soc == soc)
            return make_cell_params(r.r_int_ohm, r.r_s_ohm, r.c_s_farad, r.r_f_ohm, r.c_f_farad,
                                    kNominalCapacityAh);
    throw validation_error("reference::cell_at: no table row at requested SoC");
}

/// The published degree-9 OCV fit (coefficients truncated to 4 significant
/// digits in print). Only trustworthy near z = 0; the truncation makes the
/// high-degree terms cancel badly above z ~ 0.3, so it is kept for
/// reference and must not drive simulations.
inline OcvPolynomial published_ocv() {
    return OcvPolynomial{{1.937e3, -8.962e3, 1.745e4, -1.860e4, 1.177e4, -4.514e3, 1.028e3,
                          -133.501, 10.0891, 3.043}};
}

/// Synthetic-cell OCV map: monotone on [0,1], 3.0 V at z=0, 4.2 V at z=1,
/// steep knee near empty, and a long near-linear plateau (|V' - alpha1| <
/// 0.003 on z in [0.42, 0.92]) so the remainder phi has a small Lipschitz
/// bound over the plateau.
inline OcvPolynomial synthetic_ocv() {
    return OcvPolynomial{{164.36141412228434, -836.1740630712022, 1829.398674476029,
                          -2247.5837719259393, 1697.6521382682229, -810.3592548552582,
                          241.51829011270118, -42.613427427691924, 5.00000030085383, 3.0}};
}

/// Fixed-gain robust-observer baseline published for this cell model.
inline Vec4 baseline_observer_gain() {
    return Vec4(0.0288, -0.0032, 3.282e-9, -9.556e-5);
}

/// Published sliding-mode gain, retained as a magnitude-pattern regression
/// reference only (the matching P was never published).
inline Vec4 published_aesmo_gain() {
    return Vec4(0.3645, -0.2364, 2.002e-8, 0.0217);
}

/// Min/max of each uncertain parameter across the identification table,
/// around a given nominal row.
inline ParamIntervals table_intervals() {
    ParamIntervals iv;
    bool first = true;
    for (const auto& r : kParamTable) {
        const double a2 = 1.0 / (r.r_s_ohm * r.c_s_farad);
        const double a3 = 1.0 / (r.r_f_ohm * r.c_f_farad);
        const double rb = 1.0 / r.r_int_ohm;
        if (first) {
            iv.a2 = {a2, a2};
            iv.a3 = {a3, a3};
            iv.r_bar = {rb, rb};
            first = false;
        } else {
            iv.a2 = {std::min(iv.a2.lo, a2), std::max(iv.a2.hi, a2)};
            iv.a3 = {std::min(iv.a3.lo, a3), std::max(iv.a3.hi, a3)};
            iv.r_bar = {std::min(iv.r_bar.lo, rb), std::max(iv.r_bar.hi, rb)};
        }
    }
    return iv;
}

}  // namespace aesmo::reference
