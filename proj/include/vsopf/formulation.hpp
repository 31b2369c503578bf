#pragma once
// Assembles the conic optimization models: the stability-constrained dispatch,
// its unconstrained baseline, threshold maximization, margin-sum improvement,
// and the sparsified stability variant.
//
// Shared variable naming, all keyed by original bus ids:
//   c:<bus>            squared voltage magnitude
//   cc:<i>:<j>         e_i e_j + f_i f_j per adjacent pair, stored with i < j
//                      by internal order (names use the original ids)
//   ss:<i>:<j>         e_i f_j - e_j f_i, same orientation
//   x:<bus>, z:<bus>   load-bus magnitude proxy and its reciprocal
//   pg:<bus>, qg:<bus> dispatch per (aggregated) generator
//   margin             the scalar objective of build_threshold_max

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vsopf/conic.hpp"
#include "vsopf/matpower.hpp"
#include "vsopf/network.hpp"

namespace vsopf {

struct FormulationSpec {
    Eigen::VectorXd t_lower;            // one entry per load bus, load_bus_index order
    bool include_line_limits = false;
    double gamma = 1.0;
    double v_bar = 0.0;                 // max load-bus magnitude cap
};

inline double load_voltage_cap(const NetworkCase& net) {
    double v = 0.0;
    for (int k : net.load_bus_index) v = std::max(v, net.buses[k].v_max);
    return v;
}

// broadcast a single threshold to every load bus
inline FormulationSpec uniform_threshold(const NetworkCase& net, double t) {
    FormulationSpec s;
    s.t_lower = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(net.load_bus_index.size()), t);
    s.v_bar = load_voltage_cap(net);
    return s;
}

struct SparseApprox {
    Eigen::MatrixXd A_tilde;    // elementwise between 0 and A
    Eigen::VectorXd delta_a;    // per-row mass removed: sum(A) - sum(A_tilde)
    double gamma_used = 1.0;
};

// Keep the largest entries of each row until the kept mass reaches
// gamma times the row sum; everything else is dropped and its total
// reappears in delta_a. Ties go to the lowest column index.
inline SparseApprox sparsify(const CouplingMatrix& coupling, double gamma) {
    const Eigen::MatrixXd& A = coupling.A;
    const Eigen::Index n = A.rows();
    SparseApprox out;
    out.A_tilde = Eigen::MatrixXd::Zero(n, A.cols());
    out.delta_a = Eigen::VectorXd::Zero(n);
    out.gamma_used = gamma;

    std::vector<Eigen::Index> order(static_cast<size_t>(A.cols()));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double row_sum = A.row(i).sum();
        for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<Eigen::Index>(k);
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return A(i, a) > A(i, b);
        });
        double kept = 0.0;
        for (Eigen::Index j : order) {
            if (kept >= gamma * row_sum) break;
            out.A_tilde(i, j) = A(i, j);
            kept += A(i, j);
        }
        out.delta_a(i) = row_sum - kept;
    }
    return out;
}

namespace detail {

inline std::string bus_name(const NetworkCase& net, int k, const char* prefix) {
    return std::string(prefix) + ":" + std::to_string(net.buses[static_cast<size_t>(k)].id);
}

inline std::string pair_name(const NetworkCase& net, int i, int j, const char* prefix) {
    return std::string(prefix) + ":" + std::to_string(net.buses[static_cast<size_t>(i)].id) +
           ":" + std::to_string(net.buses[static_cast<size_t>(j)].id);
}

// unique unordered adjacent bus pairs from the in-service branches, (i, j) with i < j
inline std::vector<std::pair<int, int>> adjacent_pairs(const NetworkCase& net) {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(net.branches.size());
    for (const auto& br : net.branches) {
        if (!br.status) continue;
        pairs.emplace_back(std::min(br.from, br.to), std::max(br.from, br.to));
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    return pairs;
}

// how the load-bus margin constraints enter the program
enum class StabilityForm {
    rows,            // x_i - sum_j A_ij z_j >= rhs_i
    none,            // margins unconstrained (baseline dispatch)
    uniform_margin,  // maximize s with x_i - sum_j A_ij z_j >= s
    margin_sum,      // maximize sum_i (x_i - sum_j A_ij z_j)
};

struct StabilitySetup {
    const Eigen::MatrixXd* A = nullptr;  // n_L x n_L, required unless form == none
    Eigen::VectorXd rhs;                 // thresholds, used by form == rows
    StabilityForm form = StabilityForm::rows;
};

inline ConicProgram assemble(const NetworkCase& net, const AdmittanceMatrix& adm,
                             const StabilitySetup& stab, bool include_line_limits,
                             bool with_cost) {
    const int n = static_cast<int>(net.buses.size());
    const auto& loads = net.load_bus_index;
    const Eigen::Index n_l = static_cast<Eigen::Index>(loads.size());

    for (const auto& b : net.buses)
        if (b.v_min > b.v_max) throw InfeasibleBounds(b.id);
    if (stab.form != StabilityForm::none) {
        if (stab.A == nullptr || stab.A->rows() != n_l || stab.A->cols() != n_l)
            throw DimensionMismatch("coupling matrix does not match the load-bus count");
    }

    ConicProgram p;

    // squared magnitudes, bounded by the voltage window
    std::vector<int> c_var(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        const auto& b = net.buses[static_cast<size_t>(k)];
        c_var[static_cast<size_t>(k)] =
            p.add_variable(bus_name(net, k, "c"), b.v_min * b.v_min, b.v_max * b.v_max);
    }

    // lifted pair variables, one orientation per adjacent pair
    const auto pairs = adjacent_pairs(net);
    std::vector<int> cc_var(pairs.size()), ss_var(pairs.size());
    for (size_t k = 0; k < pairs.size(); ++k) {
        cc_var[k] = p.add_variable(pair_name(net, pairs[k].first, pairs[k].second, "cc"));
        ss_var[k] = p.add_variable(pair_name(net, pairs[k].first, pairs[k].second, "ss"));
    }
    // pair index lookup for balance assembly
    std::vector<std::vector<std::pair<int, size_t>>> nbr(static_cast<size_t>(n));
    for (size_t k = 0; k < pairs.size(); ++k) {
        nbr[static_cast<size_t>(pairs[k].first)].emplace_back(pairs[k].second, k);
        nbr[static_cast<size_t>(pairs[k].second)].emplace_back(pairs[k].first, k);
    }

    // load-bus margin variables x (>= 0) and reciprocal proxy z
    std::vector<int> x_var(static_cast<size_t>(n_l)), z_var(static_cast<size_t>(n_l));
    for (Eigen::Index i = 0; i < n_l; ++i) {
        const int bus = loads[static_cast<size_t>(i)];
        x_var[static_cast<size_t>(i)] = p.add_variable(bus_name(net, bus, "x"), 0.0);
        z_var[static_cast<size_t>(i)] = p.add_variable(bus_name(net, bus, "z"));
    }

    // dispatch variables with box limits
    std::vector<int> pg_var(net.generators.size()), qg_var(net.generators.size());
    for (size_t g = 0; g < net.generators.size(); ++g) {
        const auto& gen = net.generators[g];
        pg_var[g] = p.add_variable(bus_name(net, gen.bus, "pg"), gen.p_min, gen.p_max);
        qg_var[g] = p.add_variable(bus_name(net, gen.bus, "qg"), gen.q_min, gen.q_max);
    }

    // nodal balances in the lifted variables: injections of the pair (i, j)
    // contribute G_ij cc - B_ij ss to P and -G_ij ss - B_ij cc to Q, with ss
    // negated when the stored orientation runs the other way
    const SparseC& Y = adm.Y;
    for (int k = 0; k < n; ++k) {
        const auto& b = net.buses[static_cast<size_t>(k)];
        const Complex ykk = Y.coeff(k, k);
        LinExpr pexpr, qexpr;
        pexpr.add(c_var[static_cast<size_t>(k)], -ykk.real());
        qexpr.add(c_var[static_cast<size_t>(k)], ykk.imag());
        for (const auto& [other, pk] : nbr[static_cast<size_t>(k)]) {
            const Complex ykj = Y.coeff(k, other);
            const double sgn = k < other ? 1.0 : -1.0;  // stored ss is s(min, max)
            pexpr.add(cc_var[pk], -ykj.real());
            pexpr.add(ss_var[pk], sgn * ykj.imag());
            qexpr.add(ss_var[pk], sgn * ykj.real());
            qexpr.add(cc_var[pk], ykj.imag());
        }
        for (size_t g = 0; g < net.generators.size(); ++g) {
            if (net.generators[g].bus != k) continue;
            pexpr.add(pg_var[g], 1.0);
            qexpr.add(qg_var[g], 1.0);
        }
        p.add_equality(pexpr, b.p_load);
        p.add_equality(qexpr, b.q_load);
    }

    // per-pair relaxation cone ||(cc, ss, (c_i - c_j)/2)|| <= (c_i + c_j)/2
    for (size_t k = 0; k < pairs.size(); ++k) {
        const int ci = c_var[static_cast<size_t>(pairs[k].first)];
        const int cj = c_var[static_cast<size_t>(pairs[k].second)];
        p.add_cone({LinExpr(ci, 0.5).add(cj, 0.5), LinExpr(cc_var[k], 1.0),
                    LinExpr(ss_var[k], 1.0), LinExpr(ci, 0.5).add(cj, -0.5)});
    }

    // margin cones: x <= sqrt(c) and x z >= 1 per load bus
    for (Eigen::Index i = 0; i < n_l; ++i) {
        const int c = c_var[static_cast<size_t>(loads[static_cast<size_t>(i)])];
        const int x = x_var[static_cast<size_t>(i)];
        const int z = z_var[static_cast<size_t>(i)];
        p.add_cone({LinExpr(c, 0.5).shift(0.5), LinExpr(x, 1.0), LinExpr(c, 0.5).shift(-0.5)});
        p.add_cone({LinExpr(x, 0.5).add(z, 0.5), LinExpr(1.0),
                    LinExpr(x, 0.5).add(z, -0.5)});
    }

    // margin constraints in the requested form
    const auto margin_expr = [&](Eigen::Index i) {
        LinExpr e(x_var[static_cast<size_t>(i)], 1.0);
        for (Eigen::Index j = 0; j < n_l; ++j) {
            const double a = (*stab.A)(i, j);
            if (a != 0.0) e.add(z_var[static_cast<size_t>(j)], -a);
        }
        return e;
    };
    switch (stab.form) {
        case StabilityForm::rows:
            for (Eigen::Index i = 0; i < n_l; ++i)
                p.add_inequality(margin_expr(i), Sense::ge, stab.rhs(i));
            break;
        case StabilityForm::none:
            break;
        case StabilityForm::uniform_margin: {
            const int s = p.add_variable("margin");
            for (Eigen::Index i = 0; i < n_l; ++i)
                p.add_inequality(margin_expr(i).add(s, -1.0), Sense::ge, 0.0);
            p.add_linear_cost(s, -1.0);  // maximize
            break;
        }
        case StabilityForm::margin_sum:
            for (Eigen::Index i = 0; i < n_l; ++i) {
                p.add_linear_cost(x_var[static_cast<size_t>(i)], -1.0);  // maximize
                for (Eigen::Index j = 0; j < n_l; ++j) {
                    const double a = (*stab.A)(i, j);
                    if (a != 0.0) p.add_linear_cost(z_var[static_cast<size_t>(j)], a);
                }
            }
            break;
    }

    if (with_cost)
        for (size_t g = 0; g < net.generators.size(); ++g) {
            const auto& gen = net.generators[g];
            p.add_quadratic_cost(pg_var[g], gen.c2, gen.c1, gen.c0);
        }

    // real-power flow caps per branch end, off by default
    if (include_line_limits)
        for (const auto& br : net.branches) {
            if (!br.status || br.rate_a <= 0.0) continue;
            const Complex ys = 1.0 / Complex(br.r, br.x);
            const Complex ysh(0.0, br.b_charging / 2.0);
            const Complex a = std::polar(br.tap_ratio, br.phase_shift);
            const Complex yff = (ys + ysh) / (a * std::conj(a));
            const Complex yft = -ys / std::conj(a);
            const Complex ytf = -ys / a;
            const Complex ytt = ys + ysh;
            const auto pk_it = std::lower_bound(
                pairs.begin(), pairs.end(),
                std::make_pair(std::min(br.from, br.to), std::max(br.from, br.to)));
            const size_t pk = static_cast<size_t>(pk_it - pairs.begin());
            const double sgn_ft = br.from < br.to ? 1.0 : -1.0;
            LinExpr p_ft = LinExpr(c_var[static_cast<size_t>(br.from)], yff.real())
                               .add(cc_var[pk], yft.real())
                               .add(ss_var[pk], -sgn_ft * yft.imag());
            LinExpr p_tf = LinExpr(c_var[static_cast<size_t>(br.to)], ytt.real())
                               .add(cc_var[pk], ytf.real())
                               .add(ss_var[pk], sgn_ft * ytf.imag());
            p.add_inequality(p_ft, Sense::le, br.rate_a);
            p.add_inequality(p_ft, Sense::ge, -br.rate_a);
            p.add_inequality(p_tf, Sense::le, br.rate_a);
            p.add_inequality(p_tf, Sense::ge, -br.rate_a);
        }

    return p;
}

}  // namespace detail

inline ConicProgram build_vscopf_socp(const NetworkCase& net, const EquivalentModel& model,
                                      const CouplingMatrix& coupling,
                                      const FormulationSpec& spec) {
    if (model.Z.rows() != static_cast<Eigen::Index>(net.load_bus_index.size()))
        throw DimensionMismatch("equivalent model does not match the load-bus count");
    detail::StabilitySetup stab;
    stab.A = &coupling.A;
    stab.rhs = spec.t_lower;
    stab.form = detail::StabilityForm::rows;
    return detail::assemble(net, build_admittance(net), stab, spec.include_line_limits, true);
}

inline ConicProgram build_relaxed_opf(const NetworkCase& net, const EquivalentModel& model,
                                      const CouplingMatrix& coupling) {
    if (model.Z.rows() != static_cast<Eigen::Index>(net.load_bus_index.size()))
        throw DimensionMismatch("equivalent model does not match the load-bus count");
    detail::StabilitySetup stab;
    stab.A = &coupling.A;
    stab.form = detail::StabilityForm::none;
    return detail::assemble(net, build_admittance(net), stab, false, true);
}

inline ConicProgram build_threshold_max(const NetworkCase& net, const EquivalentModel& model,
                                        const CouplingMatrix& coupling) {
    if (model.Z.rows() != static_cast<Eigen::Index>(net.load_bus_index.size()))
        throw DimensionMismatch("equivalent model does not match the load-bus count");
    detail::StabilitySetup stab;
    stab.A = &coupling.A;
    stab.form = detail::StabilityForm::uniform_margin;
    return detail::assemble(net, build_admittance(net), stab, false, false);
}

inline ConicProgram build_stability_improvement(const NetworkCase& net,
                                                const EquivalentModel& model,
                                                const CouplingMatrix& coupling) {
    if (model.Z.rows() != static_cast<Eigen::Index>(net.load_bus_index.size()))
        throw DimensionMismatch("equivalent model does not match the load-bus count");
    detail::StabilitySetup stab;
    stab.A = &coupling.A;
    stab.form = detail::StabilityForm::margin_sum;
    return detail::assemble(net, build_admittance(net), stab, false, false);
}

inline ConicProgram build_sparse_vscopf(const NetworkCase& net, const EquivalentModel& model,
                                        const SparseApprox& approx,
                                        const FormulationSpec& spec) {
    if (model.Z.rows() != static_cast<Eigen::Index>(net.load_bus_index.size()))
        throw DimensionMismatch("equivalent model does not match the load-bus count");
    detail::StabilitySetup stab;
    stab.A = &approx.A_tilde;
    if (approx.delta_a.size() > 0 && approx.delta_a.maxCoeff() > 0.0) {
        if (spec.v_bar <= 0.0)
            throw Error("sparse threshold shift requires a positive voltage cap");
        stab.rhs = spec.t_lower + approx.delta_a / spec.v_bar;
    } else {
        stab.rhs = spec.t_lower;
    }
    stab.form = detail::StabilityForm::rows;
    return detail::assemble(net, build_admittance(net), stab, spec.include_line_limits, true);
}

}  // namespace vsopf
