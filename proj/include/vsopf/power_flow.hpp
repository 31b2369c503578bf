#pragma once

// Rectangular-coordinate power flow: injection evaluation, the reduced
// load-bus Jacobian, a Newton solver, and dense minimum-singular-value.

#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "vsopf/errors.hpp"
#include "vsopf/matpower.hpp"
#include "vsopf/network.hpp"

namespace vsopf {

struct VoltageState {
    Eigen::VectorXd e, f;  // V_i = e_i + i f_i over all buses

    Complex at(int i) const { return {e(i), f(i)}; }
    double magnitude(int i) const { return std::hypot(e(i), f(i)); }
    Eigen::VectorXcd phasors() const {
        Eigen::VectorXcd v(e.size());
        for (Eigen::Index i = 0; i < e.size(); ++i) v(i) = Complex(e(i), f(i));
        return v;
    }
    Eigen::VectorXcd phasors(const std::vector<int>& idx) const {
        Eigen::VectorXcd v(idx.size());
        for (size_t k = 0; k < idx.size(); ++k) v(static_cast<Eigen::Index>(k)) = at(idx[k]);
        return v;
    }
};

// P_i + iQ_i = V_i * conj((Y V)_i), returned split into real vectors
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> injections(const VoltageState& state,
                                                              const AdmittanceMatrix& adm) {
    const Eigen::VectorXcd v = state.phasors();
    const Eigen::VectorXcd s = v.cwiseProduct((adm.Y * v).conjugate());
    return {s.real(), s.imag()};
}

// Rows (P then Q) and columns (e then f) over the load buses only.
inline Eigen::MatrixXd jacobian_LL(const VoltageState& state, const AdmittanceMatrix& adm,
                                   const std::vector<int>& load_index) {
    const int n = static_cast<int>(load_index.size());
    const Eigen::Index total = state.e.size();
    std::vector<int> pos(static_cast<size_t>(total), -1);
    for (int k = 0; k < n; ++k) pos[static_cast<size_t>(load_index[static_cast<size_t>(k)])] = k;

    const Eigen::VectorXcd v = state.phasors();
    const Eigen::VectorXcd yv = adm.Y * v;

    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    for (int o = 0; o < adm.Y.outerSize(); ++o)
        for (SparseC::InnerIterator it(adm.Y, o); it; ++it) {
            const int i = pos[static_cast<size_t>(it.row())];
            const int j = pos[static_cast<size_t>(it.col())];
            if (i < 0 || j < 0) continue;
            const double G = it.value().real(), B = it.value().imag();
            const double ei = state.e(it.row()), fi = state.f(it.row());
            J(i, j) += ei * G + fi * B;            // dP/de
            J(i, n + j) += -ei * B + fi * G;       // dP/df
            J(n + i, j) += fi * G - ei * B;        // dQ/de
            J(n + i, n + j) += -ei * G - fi * B;   // dQ/df
        }
    for (int k = 0; k < n; ++k) {
        const int bus = load_index[static_cast<size_t>(k)];
        const double a = yv(bus).real(), b = yv(bus).imag();
        J(k, k) += a;          // dP_i/de_i
        J(k, n + k) += b;      // dP_i/df_i
        J(n + k, k) += -b;     // dQ_i/de_i
        J(n + k, n + k) += a;  // dQ_i/df_i
    }
    return J;
}

inline double min_singular_value(const Eigen::MatrixXd& M) {
    if (M.rows() == 0 || M.cols() == 0) return 0.0;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues().minCoeff();
}

// Scheduled injections and voltage targets driving a power flow.
struct PFInputs {
    Eigen::VectorXd p_net;       // per bus: generation minus load, p.u.
    Eigen::VectorXd q_net;       // per bus: minus reactive load (used at PQ buses)
    Eigen::VectorXd v_target;    // per bus: magnitude held at PV buses
    int slack = 0;
    double slack_mag = 1.0, slack_ang = 0.0;
    std::vector<int> pv;         // PV bus indices (generator buses minus slack)
    std::vector<int> pq;         // PQ bus indices
};

inline PFInputs pf_inputs_from_case(const NetworkCase& net) {
    const int n = static_cast<int>(net.buses.size());
    PFInputs in;
    in.p_net = Eigen::VectorXd::Zero(n);
    in.q_net = Eigen::VectorXd::Zero(n);
    in.v_target = Eigen::VectorXd::Ones(n);
    for (int i = 0; i < n; ++i) {
        in.p_net(i) = -net.buses[i].p_load;
        in.q_net(i) = -net.buses[i].q_load;
        in.v_target(i) = net.buses[i].v_mag;
    }
    for (const auto& g : net.generators) {
        in.p_net(g.bus) += g.p_set;
        in.v_target(g.bus) = g.v_set;
    }
    in.slack = net.slack;
    in.slack_mag = in.v_target(net.slack);
    in.slack_ang = net.buses[net.slack].v_ang;
    in.pq = net.load_bus_index;
    for (int b : net.gen_bus_index)
        if (b != net.slack) in.pv.push_back(b);
    return in;
}

inline VoltageState flat_start(const PFInputs& in) {
    const Eigen::Index n = in.p_net.size();
    VoltageState st;
    st.e = Eigen::VectorXd::Ones(n);
    st.f = Eigen::VectorXd::Zero(n);
    for (int b : in.pv) st.e(b) = in.v_target(b);
    st.e(in.slack) = in.slack_mag * std::cos(in.slack_ang);
    st.f(in.slack) = in.slack_mag * std::sin(in.slack_ang);
    return st;
}

struct PFSolution {
    VoltageState state;
    int iterations = 0;
    double max_mismatch = 0;
    bool converged = false;
    bool singular = false;
};

struct PFSpec {
    double tol = 1e-8;
    int max_iter = 30;
};

namespace detail {

// Non-throwing Newton core; the public wrapper maps outcomes onto errors.
inline PFSolution newton_core(const AdmittanceMatrix& adm, const PFInputs& in,
                              const VoltageState& init, const PFSpec& spec) {
    const int n = static_cast<int>(in.p_net.size());
    // unknown layout: e then f for every non-slack bus
    std::vector<int> unk;  // bus index per unknown pair
    unk.reserve(static_cast<size_t>(n) - 1);
    for (int i = 0; i < n; ++i)
        if (i != in.slack) unk.push_back(i);
    std::vector<int> upos(static_cast<size_t>(n), -1);
    for (size_t k = 0; k < unk.size(); ++k) upos[static_cast<size_t>(unk[k])] = static_cast<int>(k);
    const int nu = static_cast<int>(unk.size());

    PFSolution out;
    out.state = init;
    out.state.e(in.slack) = in.slack_mag * std::cos(in.slack_ang);
    out.state.f(in.slack) = in.slack_mag * std::sin(in.slack_ang);

    std::vector<bool> is_pq(static_cast<size_t>(n), false);
    for (int b : in.pq) is_pq[static_cast<size_t>(b)] = true;

    // rows: P mismatch per non-slack bus, then Q or |V|^2 per non-slack bus
    for (int iter = 0; iter <= spec.max_iter; ++iter) {
        const Eigen::VectorXcd v = out.state.phasors();
        const Eigen::VectorXcd yv = adm.Y * v;
        Eigen::VectorXd mis(2 * nu);
        for (int k = 0; k < nu; ++k) {
            const int i = unk[static_cast<size_t>(k)];
            const Complex s = v(i) * std::conj(yv(i));
            mis(k) = in.p_net(i) - s.real();
            mis(nu + k) = is_pq[static_cast<size_t>(i)]
                              ? in.q_net(i) - s.imag()
                              : in.v_target(i) * in.v_target(i) - std::norm(v(i));
        }
        out.max_mismatch = mis.cwiseAbs().maxCoeff();
        out.iterations = iter;
        if (out.max_mismatch <= spec.tol) {
            out.converged = true;
            return out;
        }
        if (iter == spec.max_iter || !std::isfinite(out.max_mismatch)) return out;

        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<size_t>(adm.Y.nonZeros()) * 4);
        for (int o = 0; o < adm.Y.outerSize(); ++o)
            for (SparseC::InnerIterator it(adm.Y, o); it; ++it) {
                const int i = upos[static_cast<size_t>(it.row())];
                const int j = upos[static_cast<size_t>(it.col())];
                if (i < 0 || j < 0) continue;
                const int bi = it.row();
                const double G = it.value().real(), B = it.value().imag();
                const double ei = out.state.e(bi), fi = out.state.f(bi);
                trip.emplace_back(i, j, ei * G + fi * B);
                trip.emplace_back(i, nu + j, -ei * B + fi * G);
                if (is_pq[static_cast<size_t>(bi)]) {
                    trip.emplace_back(nu + i, j, fi * G - ei * B);
                    trip.emplace_back(nu + i, nu + j, -ei * G - fi * B);
                }
            }
        for (int k = 0; k < nu; ++k) {
            const int i = unk[static_cast<size_t>(k)];
            const double a = yv(i).real(), b = yv(i).imag();
            trip.emplace_back(k, k, a);
            trip.emplace_back(k, nu + k, b);
            if (is_pq[static_cast<size_t>(i)]) {
                trip.emplace_back(nu + k, k, -b);
                trip.emplace_back(nu + k, nu + k, a);
            } else {
                trip.emplace_back(nu + k, k, 2 * out.state.e(i));
                trip.emplace_back(nu + k, nu + k, 2 * out.state.f(i));
            }
        }
        Eigen::SparseMatrix<double> J(2 * nu, 2 * nu);
        J.setFromTriplets(trip.begin(), trip.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(J);
        if (lu.info() != Eigen::Success) {
            out.singular = true;
            return out;
        }
        Eigen::VectorXd dx = lu.solve(mis);
        if (!dx.allFinite() || dx.cwiseAbs().maxCoeff() > 1e8) {
            out.singular = true;
            return out;
        }
        for (int k = 0; k < nu; ++k) {
            const int i = unk[static_cast<size_t>(k)];
            out.state.e(i) += dx(k);
            out.state.f(i) += dx(nu + k);
        }
    }
    return out;
}

}  // namespace detail

inline PFSolution newton_pf(const AdmittanceMatrix& adm, const PFInputs& in,
                            const VoltageState& init, const PFSpec& spec = {}) {
    PFSolution sol = detail::newton_core(adm, in, init, spec);
    if (sol.singular) throw SingularJacobian();
    if (!sol.converged) throw Diverged(sol.iterations, sol.max_mismatch);
    return sol;
}

inline PFSolution newton_pf(const NetworkCase& net, const PFInputs& in, const VoltageState& init,
                            const PFSpec& spec = {}) {
    return newton_pf(build_admittance(net), in, init, spec);
}

}  // namespace vsopf
