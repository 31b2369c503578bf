#pragma once

// Voltage-stability diagnostics built on the load-bus equivalent: the
// diagonal-dominance margin t_i, the generalized/aggregate voltage drops,
// a sampled segment-connectedness check, and the VCPI branch index.

#include <cmath>
#include <complex>
#include <optional>
#include <utility>

#include <Eigen/Dense>

#include "vsopf/errors.hpp"
#include "vsopf/matpower.hpp"
#include "vsopf/network.hpp"
#include "vsopf/power_flow.hpp"

namespace vsopf {

struct IndexReport {
    Eigen::VectorXd t;  // t_i = |V_i| - sum_j A_ij / |V_j| over load buses
    double t_min = 0.0;
    bool holds = false;  // t_min > 0
    Eigen::VectorXd generalized_drop;  // sum_j |Z_ij I_j|
    Eigen::VectorXd aggregate_drop;    // |sum_j Z_ij I_j|
};

inline IndexReport c_index(const Eigen::VectorXcd& V_L, const CouplingMatrix& coupling) {
    const Eigen::Index n = V_L.size();
    if (n != coupling.A.rows())
        throw DimensionMismatch("V_L length does not match the coupling matrix");

    Eigen::VectorXd mag(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mag(i) = std::abs(V_L(i));
        if (mag(i) == 0.0) throw ZeroVoltage(static_cast<int>(i));
    }

    IndexReport rep;
    rep.t.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double drop = 0;
        for (Eigen::Index j = 0; j < n; ++j) drop += coupling.A(i, j) / mag(j);
        rep.t(i) = mag(i) - drop;
    }
    rep.t_min = rep.t.minCoeff();
    rep.holds = rep.t_min > 0;
    return rep;
}

// Drops seen from the equivalent source, with I_L = Y_LL (V_L - E). The
// generalized form bounds the aggregate one by the triangle inequality.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> voltage_drop_indices(
    const Eigen::VectorXcd& V_L, const EquivalentModel& model, const SparseC& Y_LL) {
    if (V_L.size() != model.E.size())
        throw DimensionMismatch("V_L length does not match the equivalent model");
    const Eigen::VectorXcd I_L = Y_LL * (V_L - model.E);
    const Eigen::Index n = V_L.size();
    Eigen::VectorXd generalized(n), aggregate(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double sum = 0;
        Complex agg = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            const Complex term = model.Z(i, j) * I_L(j);
            sum += std::abs(term);
            agg += term;
        }
        generalized(i) = sum;
        aggregate(i) = std::abs(agg);
    }
    return {generalized, aggregate};
}

struct SegmentWitness {
    double t = 0;
    int bus = -1;
};

struct SegmentReport {
    bool holds = true;
    std::optional<SegmentWitness> witness;
};

// Walks the straight segment from the zero-load point E to v1 and checks the
// dominance margin at each sample. Currents grow linearly along the segment,
// so one solve against Z fixes them for every sample.
inline SegmentReport segment_connectedness(const EquivalentModel& model,
                                           const Eigen::VectorXcd& v1, int samples = 1000) {
    if (v1.size() != model.E.size())
        throw DimensionMismatch("v1 length does not match the equivalent model");
    const Eigen::Index n = v1.size();
    const Eigen::VectorXcd dv = v1 - model.E;
    const Eigen::VectorXcd I1 = Eigen::PartialPivLU<Eigen::MatrixXcd>(model.Z).solve(dv);

    Eigen::VectorXd drop1(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double sum = 0;
        for (Eigen::Index j = 0; j < n; ++j) sum += std::abs(model.Z(i, j) * I1(j));
        drop1(i) = sum;
    }

    SegmentReport rep;
    for (int k = 0; k <= samples; ++k) {
        const double t = static_cast<double>(k) / samples;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double margin = std::abs(model.E(i) + dv(i) * t) - t * drop1(i);
            if (margin <= 0) {
                rep.holds = false;
                rep.witness = SegmentWitness{t, static_cast<int>(i)};
                return rep;
            }
        }
    }
    return rep;
}

// Collapse-proximity index of the branch seen from sending voltage V_s.
inline double vcpi(Complex V_s, Complex V_r) {
    const double vs = std::abs(V_s);
    if (vs == 0.0) throw ZeroSendingVoltage();
    const double vr = std::abs(V_r);
    const double vd = std::abs(V_s - V_r);
    const double cosd = std::cos(std::arg(V_s) - std::arg(V_r));
    return 2 * vr * vd / (vs * vs) + 2 * vr * cosd / vs - 2 * vr * vr / (vs * vs);
}

// Worst branch value; each in-service branch is tried in both directions
// since either end may act as the sending one.
inline double vcpi_max(const NetworkCase& net, const VoltageState& state) {
    double worst = 0;
    for (const auto& br : net.branches) {
        if (br.status == 0) continue;
        const Complex vf = state.at(br.from), vt = state.at(br.to);
        worst = std::max({worst, vcpi(vf, vt), vcpi(vt, vf)});
    }
    return worst;
}

}  // namespace vsopf
