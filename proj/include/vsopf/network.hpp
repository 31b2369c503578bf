#pragma once

// Nodal admittance matrix, the load/generator partition, the equivalent
// source model (Z, E) seen from the load buses, and the coupling matrix A.

#include <complex>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "vsopf/errors.hpp"
#include "vsopf/matpower.hpp"

namespace vsopf {

using Complex = std::complex<double>;
using SparseC = Eigen::SparseMatrix<Complex>;

struct AdmittanceMatrix {
    SparseC Y;

    Eigen::SparseMatrix<double> G() const { return Y.real(); }
    Eigen::SparseMatrix<double> B() const { return Y.imag(); }
};

inline AdmittanceMatrix build_admittance(const NetworkCase& net) {
    const int n = static_cast<int>(net.buses.size());
    std::vector<Eigen::Triplet<Complex>> trip;
    trip.reserve(net.branches.size() * 4 + net.buses.size());

    for (const auto& br : net.branches) {
        if (br.r == 0.0 && br.x == 0.0)
            throw ZeroImpedanceBranch(net.buses[br.from].id, net.buses[br.to].id);
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ysh(0.0, br.b_charging / 2.0);
        const Complex a = std::polar(br.tap_ratio, br.phase_shift);
        trip.emplace_back(br.from, br.from, (ys + ysh) / (a * std::conj(a)));
        trip.emplace_back(br.from, br.to, -ys / std::conj(a));
        trip.emplace_back(br.to, br.from, -ys / a);
        trip.emplace_back(br.to, br.to, ys + ysh);
    }
    for (int i = 0; i < n; ++i) {
        const auto& b = net.buses[i];
        if (b.g_shunt != 0.0 || b.b_shunt != 0.0)
            trip.emplace_back(i, i, Complex(b.g_shunt, b.b_shunt));
    }

    AdmittanceMatrix adm;
    adm.Y.resize(n, n);
    adm.Y.setFromTriplets(trip.begin(), trip.end());
    adm.Y.makeCompressed();
    return adm;
}

inline SparseC submatrix(const SparseC& Y, const std::vector<int>& rows,
                         const std::vector<int>& cols) {
    std::vector<int> rpos(Y.rows(), -1), cpos(Y.cols(), -1);
    for (size_t k = 0; k < rows.size(); ++k) rpos[static_cast<size_t>(rows[k])] = static_cast<int>(k);
    for (size_t k = 0; k < cols.size(); ++k) cpos[static_cast<size_t>(cols[k])] = static_cast<int>(k);
    std::vector<Eigen::Triplet<Complex>> trip;
    for (int o = 0; o < Y.outerSize(); ++o)
        for (SparseC::InnerIterator it(Y, o); it; ++it)
            if (rpos[static_cast<size_t>(it.row())] >= 0 && cpos[static_cast<size_t>(it.col())] >= 0)
                trip.emplace_back(rpos[static_cast<size_t>(it.row())],
                                  cpos[static_cast<size_t>(it.col())], it.value());
    SparseC S(static_cast<int>(rows.size()), static_cast<int>(cols.size()));
    S.setFromTriplets(trip.begin(), trip.end());
    S.makeCompressed();
    return S;
}

struct EquivalentModel {
    Eigen::MatrixXcd Z;   // dense inverse of Y_LL, load-bus ordering
    Eigen::VectorXcd E;   // equivalent source voltages at the load buses
    Eigen::VectorXcd V_G; // generator voltages the model was built with
};

// Core partition on explicit index sets; the NetworkCase wrapper below is the
// usual entry point, this one also serves synthetic matrices in tests.
inline EquivalentModel equivalent_from_partition(const SparseC& Y, const std::vector<int>& load_idx,
                                                 const std::vector<int>& gen_idx,
                                                 const Eigen::VectorXcd& V_G) {
    if (V_G.size() != static_cast<Eigen::Index>(gen_idx.size()))
        throw DimensionMismatch("V_G length does not match the generator index set");
    SparseC Y_LL = submatrix(Y, load_idx, load_idx);
    SparseC Y_LG = submatrix(Y, load_idx, gen_idx);

    Eigen::SparseLU<SparseC> lu;
    lu.compute(Y_LL);
    if (lu.info() != Eigen::Success) throw SingularYLL();

    const int n = static_cast<int>(load_idx.size());
    EquivalentModel m;
    m.V_G = V_G;
    m.Z = lu.solve(Eigen::MatrixXcd(Eigen::MatrixXcd::Identity(n, n)));
    m.E = lu.solve(Eigen::VectorXcd(-(Y_LG * V_G)));
    if (!m.Z.allFinite() || !m.E.allFinite()) throw SingularYLL();
    // LU can sail through an exactly singular block on a rounding-noise pivot,
    // so verify the inverse actually inverts
    Eigen::MatrixXcd resid = Y_LL * m.Z - Eigen::MatrixXcd::Identity(n, n);
    if (resid.cwiseAbs().maxCoeff() > 1e-6) throw SingularYLL();
    return m;
}

inline EquivalentModel partition_and_equivalent(const NetworkCase& net, const AdmittanceMatrix& adm,
                                                const Eigen::VectorXcd& V_G) {
    return equivalent_from_partition(adm.Y, net.load_bus_index, net.gen_bus_index, V_G);
}

// Generator voltages for index diagnostics: setpoint magnitudes at angle 0,
// except the slack which keeps its specified angle.
inline Eigen::VectorXcd default_generator_voltages(const NetworkCase& net) {
    Eigen::VectorXcd v(net.gen_bus_index.size());
    for (size_t k = 0; k < net.gen_bus_index.size(); ++k) {
        const int bus = net.gen_bus_index[k];
        double mag = net.buses[bus].v_mag;
        for (const auto& g : net.generators)
            if (g.bus == bus) {
                mag = g.v_set;
                break;
            }
        const double ang = (bus == net.slack) ? net.buses[bus].v_ang : 0.0;
        v(static_cast<Eigen::Index>(k)) = std::polar(mag, ang);
    }
    return v;
}

// Fixed load-bus injections: consumption of (P_D, Q_D) injects S = -(P_D + iQ_D).
inline Eigen::VectorXcd load_injections(const NetworkCase& net) {
    Eigen::VectorXcd s(net.load_bus_index.size());
    for (size_t k = 0; k < net.load_bus_index.size(); ++k) {
        const auto& b = net.buses[net.load_bus_index[k]];
        s(static_cast<Eigen::Index>(k)) = Complex(-b.p_load, -b.q_load);
    }
    return s;
}

struct CouplingMatrix {
    Eigen::MatrixXd A;      // A_ij = |Z_ij S_j|
    Eigen::VectorXcd S_L;   // injections the matrix was built with
};

inline CouplingMatrix coupling_matrix(const EquivalentModel& model, const Eigen::VectorXcd& S_L) {
    if (S_L.size() != model.Z.rows())
        throw DimensionMismatch("S_L length does not match the load-bus count");
    CouplingMatrix cm;
    cm.S_L = S_L;
    cm.A = model.Z.cwiseAbs();
    for (Eigen::Index j = 0; j < cm.A.cols(); ++j) cm.A.col(j) *= std::abs(S_L(j));
    return cm;
}

}  // namespace vsopf
