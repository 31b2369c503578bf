#pragma once

// Post-solve pipeline: phasor recovery from the lifted pair variables, Newton
// refinement onto an AC-feasible point, loading-margin continuation, metric
// assembly for constrained-vs-baseline comparisons, and the sparsity sweep,
// with CSV/JSON emitters for the resulting reports.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vsopf/conic.hpp"
#include "vsopf/errors.hpp"
#include "vsopf/formulation.hpp"
#include "vsopf/matpower.hpp"
#include "vsopf/network.hpp"
#include "vsopf/power_flow.hpp"
#include "vsopf/solver.hpp"
#include "vsopf/stability.hpp"

namespace vsopf {

// Least-squares angle reconstruction. Each adjacent pair (i, j), i < j by
// internal order, contributes one incidence column (-1 at i, +1 at j) and the
// angle difference theta_j - theta_i read off the lifted pair variables.
struct AngleRecovery {
    Eigen::MatrixXd incidence;  // bus-by-pair
    Eigen::VectorXd b;          // atan2(ss, cc) per pair
    Eigen::VectorXd theta;      // minimum-norm least-squares angles, unshifted

    double residual() const {
        if (b.size() == 0) return 0.0;
        return (incidence.transpose() * theta - b).cwiseAbs().maxCoeff();
    }
};

inline AngleRecovery recover_angles(const ConicSolution& sol, const NetworkCase& net) {
    const auto pairs = detail::adjacent_pairs(net);
    const Eigen::Index n = static_cast<Eigen::Index>(net.buses.size());
    const Eigen::Index m = static_cast<Eigen::Index>(pairs.size());

    AngleRecovery rec;
    rec.incidence = Eigen::MatrixXd::Zero(n, m);
    rec.b.resize(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto [i, j] = pairs[static_cast<size_t>(k)];
        rec.incidence(i, k) = -1.0;
        rec.incidence(j, k) = 1.0;
        rec.b(k) = std::atan2(sol.value(detail::pair_name(net, i, j, "ss")),
                              sol.value(detail::pair_name(net, i, j, "cc")));
    }
    rec.theta = Eigen::MatrixXd(rec.incidence.transpose())
                    .completeOrthogonalDecomposition()
                    .solve(rec.b);
    return rec;
}

// Magnitudes from the squared-magnitude variables, angles from the pair
// system shifted so the slack bus keeps its specified angle.
inline VoltageState recover_voltages(const ConicSolution& sol, const NetworkCase& net) {
    const Eigen::Index n = static_cast<Eigen::Index>(net.buses.size());
    Eigen::VectorXd mag(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double cii = sol.value(detail::bus_name(net, static_cast<int>(k), "c"));
        if (cii <= 0.0) throw NonpositiveMagnitude(net.buses[static_cast<size_t>(k)].id);
        mag(k) = std::sqrt(cii);
    }

    const AngleRecovery rec = recover_angles(sol, net);
    const double shift = net.buses[static_cast<size_t>(net.slack)].v_ang - rec.theta(net.slack);

    VoltageState st;
    st.e.resize(n);
    st.f.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double th = rec.theta(k) + shift;
        st.e(k) = mag(k) * std::cos(th);
        st.f(k) = mag(k) * std::sin(th);
    }
    return st;
}

// Power-flow inputs that hold a solved dispatch: recovered magnitudes at the
// generator buses and the solved real output at every generator, with the
// slack bus absorbing the imbalance as usual.
inline PFInputs dispatch_inputs(const NetworkCase& net, const VoltageState& state,
                                const ConicSolution& sol) {
    const int n = static_cast<int>(net.buses.size());
    PFInputs in;
    in.p_net = Eigen::VectorXd::Zero(n);
    in.q_net = Eigen::VectorXd::Zero(n);
    in.v_target = Eigen::VectorXd::Ones(n);
    for (int i = 0; i < n; ++i) {
        in.p_net(i) = -net.buses[static_cast<size_t>(i)].p_load;
        in.q_net(i) = -net.buses[static_cast<size_t>(i)].q_load;
        in.v_target(i) = state.magnitude(i);
    }
    for (const auto& g : net.generators)
        in.p_net(g.bus) += sol.value(detail::bus_name(net, g.bus, "pg"));
    in.slack = net.slack;
    in.slack_mag = state.magnitude(net.slack);
    in.slack_ang = net.buses[static_cast<size_t>(net.slack)].v_ang;
    in.pq = net.load_bus_index;
    for (int b : net.gen_bus_index)
        if (b != net.slack) in.pv.push_back(b);
    return in;
}

struct RefinedPoint {
    PFSolution pf;
    Eigen::VectorXd p_gen, q_gen;  // realized output per generator
    double cost = 0;
    bool limits_ok = true;
};

namespace detail {

// Realized output, cost, and limit flags for a solved power flow.
inline RefinedPoint realized_point(const NetworkCase& net, const AdmittanceMatrix& adm,
                                   PFSolution pf) {
    constexpr double kLimitSlack = 1e-5;
    RefinedPoint out;
    out.pf = std::move(pf);

    const auto [p, q] = injections(out.pf.state, adm);
    out.p_gen.resize(static_cast<Eigen::Index>(net.generators.size()));
    out.q_gen.resize(static_cast<Eigen::Index>(net.generators.size()));
    for (size_t g = 0; g < net.generators.size(); ++g) {
        const auto& gen = net.generators[g];
        const double pg = p(gen.bus) + net.buses[static_cast<size_t>(gen.bus)].p_load;
        const double qg = q(gen.bus) + net.buses[static_cast<size_t>(gen.bus)].q_load;
        out.p_gen(static_cast<Eigen::Index>(g)) = pg;
        out.q_gen(static_cast<Eigen::Index>(g)) = qg;
        out.cost += gen.c2 * pg * pg + gen.c1 * pg + gen.c0;
        if (pg < gen.p_min - kLimitSlack || pg > gen.p_max + kLimitSlack ||
            qg < gen.q_min - kLimitSlack || qg > gen.q_max + kLimitSlack)
            out.limits_ok = false;
    }
    for (size_t k = 0; k < net.buses.size(); ++k) {
        const double v = out.pf.state.magnitude(static_cast<int>(k));
        if (v < net.buses[k].v_min - kLimitSlack || v > net.buses[k].v_max + kLimitSlack)
            out.limits_ok = false;
    }
    return out;
}

}  // namespace detail

// Newton refinement seeded at the recovered state; throws Diverged or
// SingularJacobian when no AC-feasible point is reached.
inline RefinedPoint refine_ac(const NetworkCase& net, const AdmittanceMatrix& adm,
                              const VoltageState& state, const ConicSolution& sol,
                              const PFSpec& spec = {}) {
    return detail::realized_point(net, adm,
                                  newton_pf(adm, dispatch_inputs(net, state, sol), state, spec));
}

// Refinement with reactive limits enforced by bus-type switching: a generator
// that cannot hold its voltage target without leaving its reactive box
// regulates at the violated limit instead, the textbook outer loop around
// Newton solves. The slack bus is never switched.
inline RefinedPoint refine_q_limited(const NetworkCase& net, const AdmittanceMatrix& adm,
                                     const VoltageState& state, const ConicSolution& sol,
                                     const PFSpec& spec = {}) {
    constexpr int kPasses = 8;
    constexpr double kQEps = 1e-7;
    PFInputs in = dispatch_inputs(net, state, sol);

    RefinedPoint out;
    VoltageState start = state;
    for (int pass = 0; pass < kPasses; ++pass) {
        out = detail::realized_point(net, adm, newton_pf(adm, in, start, spec));
        bool switched = false;
        for (size_t g = 0; g < net.generators.size(); ++g) {
            const auto& gen = net.generators[g];
            if (gen.bus == net.slack) continue;
            const auto pv_it = std::find(in.pv.begin(), in.pv.end(), gen.bus);
            if (pv_it == in.pv.end()) continue;  // already regulating at a limit
            const double qg = out.q_gen(static_cast<Eigen::Index>(g));
            double pin;
            if (qg > gen.q_max + kQEps)
                pin = gen.q_max;
            else if (qg < gen.q_min - kQEps)
                pin = gen.q_min;
            else
                continue;
            in.pv.erase(pv_it);
            in.pq.push_back(gen.bus);
            in.q_net(gen.bus) = pin - net.buses[static_cast<size_t>(gen.bus)].q_load;
            switched = true;
        }
        if (!switched) break;
        start = out.pf.state;
    }
    return out;
}

inline double optimality_gap(double lb, double ub) {
    if (!(ub > 0)) throw NonpositiveUpperBound();
    return 100.0 * (1.0 - lb / ub);
}

struct MarginSpec {
    double step = 0.1;
    double shrink = 0.5;
    double tol = 1e-3;
    double lambda_cap = 1e3;  // stops the climb on cases that never saturate
    PFSpec pf;
};

struct MarginPoint {
    double lambda = 0;
    double sigma_min = 0;  // of the reduced load-bus Jacobian; 0 when diverged
    bool converged = false;
};

struct MarginResult {
    double lambda_max = 0;
    std::vector<MarginPoint> trace;
};

// Continuation by restarts: loads and non-slack generation scale together
// with lambda at constant power factor, the step halves on every Newton
// failure, and the search stops once the step drops below tol.
inline MarginResult loading_margin(const NetworkCase& net, const AdmittanceMatrix& adm,
                                   const PFInputs& base, const MarginSpec& spec = {},
                                   const VoltageState* warm_start = nullptr) {
    const auto scaled = [&](double lam) {
        PFInputs in = base;
        in.p_net *= lam;  // the slack entry is inert, so scaling it is harmless
        in.q_net *= lam;
        return in;
    };
    const auto sigma_at = [&](const VoltageState& st) {
        return min_singular_value(jacobian_LL(st, adm, net.load_bus_index));
    };

    MarginResult out;
    VoltageState warm = warm_start ? *warm_start : flat_start(base);
    const PFSolution sol = detail::newton_core(adm, scaled(1.0), warm, spec.pf);
    if (!sol.converged) throw BaseCaseDiverged();
    out.trace.push_back({1.0, sigma_at(sol.state), true});
    warm = sol.state;

    double lam_good = 1.0;
    double step = spec.step;
    while (step >= spec.tol && lam_good < spec.lambda_cap) {
        const double lam = lam_good + step;
        const PFSolution trial = detail::newton_core(adm, scaled(lam), warm, spec.pf);
        if (trial.converged) {
            out.trace.push_back({lam, sigma_at(trial.state), true});
            lam_good = lam;
            warm = trial.state;
        } else {
            out.trace.push_back({lam, 0.0, false});
            step *= spec.shrink;
        }
    }
    out.lambda_max = lam_good;
    return out;
}

// Threshold choice for runs that do not pin one: solve for the largest
// uniformly achievable margin and back off by one percent so the rows bind.
inline double derive_threshold(const NetworkCase& net, const EquivalentModel& model,
                               const CouplingMatrix& coupling, const SolveSpec& spec = {}) {
    const ConicSolution sol = solve(build_threshold_max(net, model, coupling), spec);
    if (sol.status != SolveStatus::optimal)
        throw SolveFailed("threshold derivation", to_string(sol.status));
    return 0.99 * sol.value("margin");
}

struct PipelineSpec {
    double t_lower = -1.0;        // < 0 means derive via the 0.99 backoff policy
    double gamma = 1.0;           // < 1 sparsifies the margin rows
    bool stability_rows = true;   // false solves the unconstrained baseline
    bool include_line_limits = false;
    bool compute_margin = true;
    SolveSpec solver;
    PFSpec pf;
    MarginSpec margin;
};

struct CaseRun {
    ConicSolution sol;
    double objective = 0;            // relaxation lower bound
    double t_lower_used = 0;         // threshold in force, 0 for the baseline
    double build_solve_seconds = 0;  // formulation assembly plus solve
    bool recovered_ok = false;
    VoltageState recovered;
    double sigma_recovered = 0;  // reduced-Jacobian MSV at the recovered point
    double t_a = 0;              // minimum stability index at the recovered point
    bool refined_ok = false;
    RefinedPoint refined;
    double sigma_refined = 0;
    double t_a_refined = 0;  // minimum stability index at the refined point
    // Feasibility polish: a refined point re-derived from box-tightened
    // solves until it clears every original limit. Absent when the plain
    // refinement already complies or no compliant point was reached.
    bool feasible_ok = false;
    int polish_rounds = 0;
    RefinedPoint feasible;
    double sigma_feasible = 0;
    double t_a_feasible = 0;
    bool margin_ok = false;
    MarginResult margin;
};

// Everything downstream of the conic solve; reusable for externally supplied
// solutions (tests feed it exact lifted points).
inline void analyze_solution(CaseRun& run, const NetworkCase& net, const AdmittanceMatrix& adm,
                             const CouplingMatrix& coupling, const PipelineSpec& spec) {
    if (run.sol.status != SolveStatus::optimal) return;
    run.recovered = recover_voltages(run.sol, net);
    run.recovered_ok = true;
    run.sigma_recovered =
        min_singular_value(jacobian_LL(run.recovered, adm, net.load_bus_index));
    // The achieved margin is measured where the cone rows act: at the
    // recovered point. The refit below moves magnitudes to close the power
    // balance and would smear a binding threshold by the relaxation slack.
    if (!net.load_bus_index.empty())
        run.t_a = c_index(run.recovered.phasors(net.load_bus_index), coupling).t_min;

    try {
        run.refined = refine_ac(net, adm, run.recovered, run.sol, spec.pf);
        run.refined_ok = true;
    } catch (const Error&) {
        return;  // no AC-feasible point; downstream metrics stay absent
    }
    run.sigma_refined =
        min_singular_value(jacobian_LL(run.refined.pf.state, adm, net.load_bus_index));
    if (!net.load_bus_index.empty())
        run.t_a_refined =
            c_index(run.refined.pf.state.phasors(net.load_bus_index), coupling).t_min;

    if (spec.compute_margin) {
        try {
            run.margin = loading_margin(net, adm, dispatch_inputs(net, run.recovered, run.sol),
                                        spec.margin, &run.refined.pf.state);
            run.margin_ok = true;
        } catch (const Error&) {
            run.margin_ok = false;
        }
    }
}

// The plain refinement closes the power balance but can inherit small
// reactive, voltage, or margin excursions from the relaxation slack, and a
// bound priced at such a point is not sound. The polish steers the refinement
// back inside the limits with two kinds of lever and accepts the first fully
// compliant point. Voltage overshoot is systemic drift of the realization off
// a plan that already sits inside the band, so it is absorbed locally: the
// generator targets are biased down just past the drift and only the power
// flow repeats. Slack-machine and margin excursions need a different plan, so
// their boxes are tightened a little past the excursion and the program
// re-solved. The first solve is left untouched: it remains the reported
// lower bound.
inline void polish_feasible(CaseRun& run, const NetworkCase& net, const AdmittanceMatrix& adm,
                            const EquivalentModel& model, const CouplingMatrix& coupling,
                            const PipelineSpec& spec) {
    if (!run.refined_ok) return;
    constexpr int kRounds = 20;
    constexpr double kOver = 1.3;       // move slightly past the excursion
    constexpr double kLimitEps = 1e-6;  // excursions below solver noise pass
    constexpr double kMarginTol = 5e-3;   // realized margin counts as delivered
    constexpr double kGapBudget = 0.04;   // relative cost headroom for delivery
    const bool threshold_rows = run.t_lower_used > 0;

    // The tightened solves only generate candidate dispatches; the power flow
    // and the limit checks below are exact, so a looser tolerance is safe and
    // keeps hard near-ceiling programs from burning the iteration budget.
    SolveSpec rspec = spec.solver;
    rspec.tol = std::max(rspec.tol, 1e-7);

    const auto index_at = [&](const VoltageState& st) {
        return net.load_bus_index.empty()
                   ? std::numeric_limits<double>::infinity()
                   : c_index(st.phasors(net.load_bus_index), coupling).t_min;
    };
    const auto build = [&](const NetworkCase& data, double t) {
        if (!threshold_rows) return build_relaxed_opf(data, model, coupling);
        FormulationSpec fs = uniform_threshold(data, t);
        fs.include_line_limits = spec.include_line_limits;
        fs.gamma = spec.gamma;
        return spec.gamma < 1.0
                   ? build_sparse_vscopf(data, model, sparsify(coupling, spec.gamma), fs)
                   : build_vscopf_socp(data, model, coupling, fs);
    };
    // Candidate realization of `plan` with every generator target lowered by
    // `bias`, reactive limits enforced by switching.
    const auto candidate = [&](const VoltageState& plan, const ConicSolution& sol, double bias) {
        VoltageState st = plan;
        for (int b : net.gen_bus_index) {
            const double m = st.magnitude(b);
            const double f = std::max(m - bias, net.buses[static_cast<size_t>(b)].v_min) / m;
            st.e(b) *= f;
            st.f(b) *= f;
        }
        return refine_q_limited(net, adm, st, sol, spec.pf);
    };

    NetworkCase tight = net;
    double t_tight = run.t_lower_used;
    double t_cap = std::numeric_limits<double>::infinity();
    bool cap_checked = false;
    double bias = 0.0;       // uniform downward offset on the generator targets
    ConicSolution resolved;  // backing store once the loop re-solves
    const ConicSolution* plan_sol = &run.sol;
    VoltageState plan = run.recovered;
    RefinedPoint last;  // backing store once the loop leaves run.refined
    const RefinedPoint* cur = &run.refined;
    double cur_index = run.t_a_refined;
    bool switching_tried = false;  // the plain refinement never switches

    // The excursion-to-bound sensitivities differ wildly between cases, so a
    // fixed step either crawls or overshoots. Escalate geometrically while the
    // worst excursion refuses to shrink, and damp after a failed solve.
    double escal = 1.0;
    double prev_worst = std::numeric_limits<double>::infinity();

    for (int round = 0; round < kRounds; ++round) {
        const NetworkCase before = tight;
        const double t_before = t_tight;
        const double mult = kOver * escal;
        bool compliant = true;
        bool resolve = false;  // a planning box moved: the plan must change
        bool rebias = false;   // drift only: re-aim the same plan
        double worst = 0.0;
        const auto shift = [&resolve](double& field, double to) {
            if (field != to) resolve = true;
            field = to;
        };
        // Generation boxes. Non-slack outputs are pinned by the dispatch and
        // the reactive switching, so only the slack machine gets a lever; any
        // other excursion marks the candidate non-compliant and is left to
        // the switching on the next realization.
        for (size_t g = 0; g < net.generators.size(); ++g) {
            const auto& gen = net.generators[g];
            auto& tg = tight.generators[g];
            const bool slack_gen = gen.bus == net.slack;
            const double pg = cur->p_gen(static_cast<Eigen::Index>(g));
            const double qg = cur->q_gen(static_cast<Eigen::Index>(g));
            if (pg > gen.p_max + kLimitEps) {
                compliant = false;
                worst = std::max(worst, pg - gen.p_max);
                if (slack_gen) shift(tg.p_max, std::max(tg.p_min, tg.p_max - mult * (pg - gen.p_max)));
            }
            if (pg < gen.p_min - kLimitEps) {
                compliant = false;
                worst = std::max(worst, gen.p_min - pg);
                if (slack_gen) shift(tg.p_min, std::min(tg.p_max, tg.p_min + mult * (gen.p_min - pg)));
            }
            if (qg > gen.q_max + kLimitEps) {
                compliant = false;
                worst = std::max(worst, qg - gen.q_max);
                if (slack_gen) shift(tg.q_max, std::max(tg.q_min, tg.q_max - mult * (qg - gen.q_max)));
            }
            if (qg < gen.q_min - kLimitEps) {
                compliant = false;
                worst = std::max(worst, gen.q_min - qg);
                if (slack_gen) shift(tg.q_min, std::min(tg.q_max, tg.q_min + mult * (gen.q_min - qg)));
            }
        }
        // Voltage band. Overshoot is countered by biasing the generator
        // targets down just past the worst drift, undershoot by first
        // unwinding any overshoot bias and otherwise raising the violated
        // bus's planning floor.
        double v_over = 0.0, v_under = 0.0;
        for (size_t k = 0; k < net.buses.size(); ++k) {
            const double v = cur->pf.state.magnitude(static_cast<int>(k));
            v_over = std::max(v_over, v - net.buses[k].v_max);
            v_under = std::max(v_under, net.buses[k].v_min - v);
        }
        if (v_over > kLimitEps) {
            compliant = false;
            worst = std::max(worst, v_over);
            bias += mult * v_over;
            rebias = true;
        }
        if (v_under > kLimitEps) {
            compliant = false;
            worst = std::max(worst, v_under);
            if (bias > 0.0) {
                bias = std::max(0.0, bias - mult * v_under);
                rebias = true;
            } else {
                for (size_t k = 0; k < net.buses.size(); ++k) {
                    const double v = cur->pf.state.magnitude(static_cast<int>(k));
                    auto& tb = tight.buses[k];
                    if (v < net.buses[k].v_min - kLimitEps)
                        shift(tb.v_min, std::min(tb.v_max, tb.v_min + mult * (net.buses[k].v_min - v)));
                }
            }
        }
        // Raise the planned margin a bounded step toward its hard ceiling;
        // programs pinned exactly on the ceiling are degenerate and the cost
        // response near it is steep, so a plain proportional step overshoots
        // wildly.
        const auto push_margin = [&](double deficit) {
            if (!cap_checked) {
                cap_checked = true;
                const ConicSolution cap = solve(build_threshold_max(net, model, coupling), rspec);
                if (cap.status == SolveStatus::optimal) t_cap = cap.value("margin") - 1e-4;
            }
            const double step = std::isfinite(t_cap)
                                    ? std::min(mult * deficit,
                                               0.25 * std::max(t_cap - t_tight, 0.0))
                                    : mult * deficit;
            shift(t_tight, std::min(t_tight + step, std::max(t_cap, t_tight)));
        };
        // A margin shortfall makes the candidate unusable while it leaves the
        // point priced below the relaxation bound: under-delivering the
        // margin can undercut the planned cost, which would invert the gap.
        const double cost_slack = 1e-7 * std::max(1.0, std::abs(run.objective));
        if (threshold_rows && cur_index < run.t_lower_used - kLimitEps &&
            cur->cost < run.objective + cost_slack) {
            compliant = false;
            worst = std::max(worst, run.t_lower_used - cur_index);
            push_margin(run.t_lower_used - cur_index);
        }

        if (compliant) {
            // Keep the best compliant point. The first one anchors the bound;
            // afterwards the loop keeps chasing the remaining margin
            // shortfall, and a later point replaces the kept one only when it
            // delivers more margin inside the cost budget.
            const double gap_frac =
                cur->cost > 0 ? 1.0 - run.objective / cur->cost : 0.0;
            if (!run.feasible_ok ||
                (cur_index > run.t_a_feasible && gap_frac < kGapBudget)) {
                run.feasible = *cur;
                run.feasible_ok = true;
                run.polish_rounds = round;
                run.sigma_feasible = min_singular_value(
                    jacobian_LL(run.feasible.pf.state, adm, net.load_bus_index));
                run.t_a_feasible = net.load_bus_index.empty() ? 0.0 : cur_index;
            }
            const double deficit = run.t_lower_used - cur_index;
            if (!threshold_rows || deficit <= kMarginTol || gap_frac >= kGapBudget)
                return;
            const double t_was = t_tight;
            push_margin(deficit);
            if (t_tight <= t_was) return;  // ceiling reached: no margin left to chase
            worst = deficit;
        }
        // Every lever pinned and switching already exhausted: further rounds
        // would repeat the same candidate.
        if (!compliant && !resolve && !rebias && switching_tried) return;
        if (worst > 0.7 * prev_worst) escal = std::min(escal * 2.0, 64.0);
        prev_worst = worst;

        if (resolve) {
            ConicSolution sol;
            bool solved = false;
            for (int back = 0; back < 3; ++back) {
                sol = solve(build(tight, t_tight), rspec);
                if (sol.status == SolveStatus::optimal) {
                    solved = true;
                    break;
                }
                // overshoot: walk the latest tightening halfway back and retry
                for (size_t g = 0; g < tight.generators.size(); ++g) {
                    auto& tg = tight.generators[g];
                    const auto& bg = before.generators[g];
                    tg.p_min = 0.5 * (tg.p_min + bg.p_min);
                    tg.p_max = 0.5 * (tg.p_max + bg.p_max);
                    tg.q_min = 0.5 * (tg.q_min + bg.q_min);
                    tg.q_max = 0.5 * (tg.q_max + bg.q_max);
                }
                for (size_t k = 0; k < tight.buses.size(); ++k) {
                    tight.buses[k].v_min = 0.5 * (tight.buses[k].v_min + before.buses[k].v_min);
                    tight.buses[k].v_max = 0.5 * (tight.buses[k].v_max + before.buses[k].v_max);
                }
                t_tight = 0.5 * (t_tight + t_before);
            }
            if (!solved) {
                // Even the walked-back programs failed: revert this round's
                // tightening entirely and retry the next round with smaller
                // steps.
                tight = before;
                t_tight = t_before;
                escal = std::max(escal * 0.25, 1.0 / 16.0);
                prev_worst = std::numeric_limits<double>::infinity();
                continue;
            }
            resolved = std::move(sol);
            plan_sol = &resolved;
            plan = recover_voltages(resolved, tight);
        }
        try {
            // costs and limit checks stay against the original data
            last = candidate(plan, *plan_sol, bias);
        } catch (const Error&) {
            return;
        }
        switching_tried = true;
        cur = &last;
        cur_index = index_at(last.pf.state);
    }
}

inline CaseRun run_case(const NetworkCase& net, const PipelineSpec& spec) {
    const AdmittanceMatrix adm = build_admittance(net);
    const EquivalentModel model =
        partition_and_equivalent(net, adm, default_generator_voltages(net));
    const CouplingMatrix coupling = coupling_matrix(model, load_injections(net));

    CaseRun run;
    FormulationSpec fs;
    if (spec.stability_rows) {
        run.t_lower_used = spec.t_lower >= 0
                               ? spec.t_lower
                               : derive_threshold(net, model, coupling, spec.solver);
        fs = uniform_threshold(net, run.t_lower_used);
        fs.include_line_limits = spec.include_line_limits;
        fs.gamma = spec.gamma;
    }

    const auto start = std::chrono::steady_clock::now();
    const ConicProgram prog =
        !spec.stability_rows
            ? build_relaxed_opf(net, model, coupling)
            : (spec.gamma < 1.0
                   ? build_sparse_vscopf(net, model, sparsify(coupling, spec.gamma), fs)
                   : build_vscopf_socp(net, model, coupling, fs));
    run.sol = solve(prog, spec.solver);
    run.build_solve_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    run.objective = run.sol.objective_value;

    analyze_solution(run, net, adm, coupling, spec);
    polish_feasible(run, net, adm, model, coupling, spec);
    return run;
}

struct StabilityReport {
    double objective_lb = 0;
    std::optional<double> objective_ub;
    std::optional<double> og_percent;
    std::optional<double> t_a;
    std::optional<double> sigma_min;
    std::optional<double> delta_lambda_percent;
    std::optional<double> delta_sigma_percent;
    std::optional<double> ds_percent;
    double solve_seconds = 0;
};

// Metric table row comparing the margin-constrained run against the plain
// dispatch baseline. Fields whose inputs are missing stay absent.
inline StabilityReport compare_metrics(const CaseRun& constrained, const CaseRun& baseline) {
    StabilityReport r;
    r.objective_lb = constrained.objective;
    r.solve_seconds = constrained.build_solve_seconds;
    // Operating-point metrics are read at the polished point when the polish
    // reached one, else at the plain refinement: both bounds and stability
    // comparisons should price points that honor the limits rather than
    // artifacts of the relaxation slack.
    const auto ac_point = [](const CaseRun& run) -> const RefinedPoint* {
        if (run.feasible_ok) return &run.feasible;
        return run.refined_ok ? &run.refined : nullptr;
    };
    const auto ac_sigma = [](const CaseRun& run) {
        return run.feasible_ok ? run.sigma_feasible : run.sigma_refined;
    };
    if (const RefinedPoint* pc = ac_point(constrained)) {
        r.t_a = constrained.feasible_ok ? constrained.t_a_feasible : constrained.t_a_refined;
        r.sigma_min = ac_sigma(constrained);
        r.objective_ub = pc->cost;
        if (*r.objective_ub > 0)
            r.og_percent = optimality_gap(r.objective_lb, *r.objective_ub);
        if (*r.sigma_min > 0)
            r.ds_percent = 100.0 * std::abs(constrained.sigma_recovered / *r.sigma_min - 1.0);
        if (ac_point(baseline) != nullptr && ac_sigma(baseline) > 0)
            r.delta_sigma_percent = 100.0 * (*r.sigma_min / ac_sigma(baseline) - 1.0);
    }
    // Loading margins are compared as distance-to-collapse above the base
    // case (multiplier minus one), matching how continuation tools report the
    // margin. Comparing raw multipliers would shrink every ratio toward 1.
    if (constrained.margin_ok && baseline.margin_ok && baseline.margin.lambda_max > 1.0)
        r.delta_lambda_percent = 100.0 * ((constrained.margin.lambda_max - 1.0) /
                                              (baseline.margin.lambda_max - 1.0) -
                                          1.0);
    return r;
}

struct SweepRow {
    double gamma = 1;
    double time_s = 0;
    double objective = 0;
    double relative_error_pct = 0;
};

// Sparsity sweep against two anchors: the dense program (gamma = 1) and the
// unconstrained baseline. Per-row error is the recovered-MSV deviation from
// the dense solve, normalized by the dense-to-baseline spread.
inline std::vector<SweepRow> gamma_sweep(const NetworkCase& net, const std::vector<double>& gammas,
                                         const PipelineSpec& spec) {
    const AdmittanceMatrix adm = build_admittance(net);
    const EquivalentModel model =
        partition_and_equivalent(net, adm, default_generator_voltages(net));
    const CouplingMatrix coupling = coupling_matrix(model, load_injections(net));

    FormulationSpec fs = uniform_threshold(
        net, spec.t_lower >= 0 ? spec.t_lower : derive_threshold(net, model, coupling, spec.solver));
    fs.include_line_limits = spec.include_line_limits;

    const auto timed_solve = [&](double gamma) {
        const auto start = std::chrono::steady_clock::now();
        const ConicProgram prog =
            gamma >= 1.0 ? build_vscopf_socp(net, model, coupling, fs)
                         : build_sparse_vscopf(net, model, sparsify(coupling, gamma), fs);
        ConicSolution sol = solve(prog, spec.solver);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (sol.status != SolveStatus::optimal)
            throw SolveFailed("sweep at gamma " + std::to_string(gamma), to_string(sol.status));
        return std::make_pair(std::move(sol), secs);
    };
    const auto sigma_of = [&](const ConicSolution& sol) {
        return min_singular_value(jacobian_LL(recover_voltages(sol, net), adm, net.load_bus_index));
    };

    const auto [dense, dense_time] = timed_solve(1.0);
    const double sigma_dense = sigma_of(dense);

    ConicSolution baseline = solve(build_relaxed_opf(net, model, coupling), spec.solver);
    if (baseline.status != SolveStatus::optimal)
        throw SolveFailed("sweep baseline", to_string(baseline.status));
    const double spread = std::abs(sigma_dense - sigma_of(baseline));

    std::vector<SweepRow> rows;
    rows.reserve(gammas.size());
    for (double g : gammas) {
        SweepRow row;
        row.gamma = g;
        if (g >= 1.0) {
            row.time_s = dense_time;
            row.objective = dense.objective_value;
        } else {
            const auto [sol, secs] = timed_solve(g);
            row.time_s = secs;
            row.objective = sol.objective_value;
            const double dev = std::abs(sigma_dense - sigma_of(sol));
            row.relative_error_pct = spread > 0 ? 100.0 * dev / spread : 0.0;
        }
        rows.push_back(row);
    }
    return rows;
}

namespace detail {

inline std::string csv_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string csv_cell(const std::optional<double>& v) {
    return v ? csv_number(*v) : std::string();
}

inline nlohmann::json json_cell(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::json to_json(const StabilityReport& r) {
    return {{"objective_lb", r.objective_lb},
            {"objective_ub", detail::json_cell(r.objective_ub)},
            {"og_percent", detail::json_cell(r.og_percent)},
            {"t_a", detail::json_cell(r.t_a)},
            {"sigma_min", detail::json_cell(r.sigma_min)},
            {"delta_lambda_percent", detail::json_cell(r.delta_lambda_percent)},
            {"delta_sigma_percent", detail::json_cell(r.delta_sigma_percent)},
            {"ds_percent", detail::json_cell(r.ds_percent)},
            {"solve_time_s", r.solve_seconds}};
}

inline std::string to_csv(const StabilityReport& r) {
    std::ostringstream os;
    os << "objective_lb,objective_ub,og_percent,t_a,sigma_min,delta_lambda_percent,"
          "delta_sigma_percent,ds_percent,solve_time_s\n";
    os << detail::csv_number(r.objective_lb) << ',' << detail::csv_cell(r.objective_ub) << ','
       << detail::csv_cell(r.og_percent) << ',' << detail::csv_cell(r.t_a) << ','
       << detail::csv_cell(r.sigma_min) << ',' << detail::csv_cell(r.delta_lambda_percent) << ','
       << detail::csv_cell(r.delta_sigma_percent) << ',' << detail::csv_cell(r.ds_percent) << ','
       << detail::csv_number(r.solve_seconds) << '\n';
    return os.str();
}

inline nlohmann::json to_json(const std::vector<SweepRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& row : rows)
        arr.push_back({{"gamma", row.gamma},
                       {"time_s", row.time_s},
                       {"objective", row.objective},
                       {"relative_error_pct", row.relative_error_pct}});
    return arr;
}

inline std::string to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "gamma,time_s,relative_error_pct\n";
    for (const auto& row : rows)
        os << detail::csv_number(row.gamma) << ',' << detail::csv_number(row.time_s) << ','
           << detail::csv_number(row.relative_error_pct) << '\n';
    return os.str();
}

}  // namespace vsopf
