#include <catch2/catch_amalgamated.hpp>

// End-to-end acceptance checks against the project's stated targets. Every
// test prints one [PASS]/[FAIL] scoreboard line, so running this binary
// directly gives a one-screen summary of where the build stands; the Catch2
// assertions below each line carry the per-case detail.

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "vsopf/analysis.hpp"
#include "vsopf/formulation.hpp"
#include "vsopf/matpower.hpp"
#include "vsopf/network.hpp"
#include "vsopf/power_flow.hpp"
#include "vsopf/solver.hpp"
#include "vsopf/stability.hpp"

#include "oracles.hpp"

using namespace vsopf;

namespace {

std::string data_path(const std::string& name) {
    return std::string(VSOPF_DATA_DIR) + "/" + name;
}

NetworkCase load_case(const std::string& name) {
    return to_network(parse_matpower_file(data_path(name)));
}

void verdict(bool ok, const char* name, const char* fmt = nullptr, ...) {
    std::printf("[%s] %s", ok ? "PASS" : "FAIL", name);
    if (fmt != nullptr) {
        std::printf("  --  ");
        va_list args;
        va_start(args, fmt);
        std::vprintf(fmt, args);
        va_end(args);
    }
    std::printf("\n");
    std::fflush(stdout);
}

// Reference rows for the benchmark set: margin floor and the dispatch cost
// the relaxation is expected to reproduce within one percent.
struct BenchRow {
    const char* file;
    double t_floor;
    double objective;
};

constexpr BenchRow kBench[] = {
    {"case30.m", 0.97, 574.90},        {"case_ieee30.m", 0.88, 9220.51},
    {"case39.m", 0.83, 42552.76},      {"case57.m", 0.66, 41710.91},
    {"case118.m", 0.98, 129385.66},
};
constexpr size_t kBenchCount = sizeof(kBench) / sizeof(kBench[0]);

struct BenchRun {
    NetworkCase net;
    CaseRun constrained;
    CaseRun baseline;
    StabilityReport report;
};

// The five benchmark pipelines are shared across several tests; solve once.
const std::vector<BenchRun>& bench() {
    static const std::vector<BenchRun> runs = [] {
        std::vector<BenchRun> out;
        out.reserve(kBenchCount);
        for (const auto& row : kBench) {
            BenchRun r;
            r.net = load_case(row.file);
            PipelineSpec con;
            con.t_lower = row.t_floor;
            r.constrained = run_case(r.net, con);
            PipelineSpec base;
            base.stability_rows = false;
            r.baseline = run_case(r.net, base);
            r.report = compare_metrics(r.constrained, r.baseline);
            out.push_back(std::move(r));
        }
        return out;
    }();
    return runs;
}

struct SweepData {
    std::vector<SweepRow> rows;          // single-pass objectives and errors
    std::vector<double> best_time;       // per-gamma best of three passes
};

// Timings are the best of three sweeps to damp scheduler noise; objectives
// and error figures are deterministic, so the first pass supplies them.
const SweepData& case300_sweep() {
    static const SweepData data = [] {
        const NetworkCase net = load_case("case300.m");
        const std::vector<double> gammas = {1.0, 0.98, 0.94, 0.9};
        PipelineSpec spec;  // threshold derived from the achievable margin
        SweepData d;
        d.rows = gamma_sweep(net, gammas, spec);
        d.best_time.assign(gammas.size(), 1e300);
        for (int pass = 0; pass < 3; ++pass) {
            const auto rows = pass == 0 ? d.rows : gamma_sweep(net, gammas, spec);
            for (size_t k = 0; k < rows.size(); ++k)
                d.best_time[k] = std::min(d.best_time[k], rows[k].time_s);
        }
        return d;
    }();
    return data;
}

// x and z values of a solved program, in load-bus order.
std::pair<Eigen::VectorXd, Eigen::VectorXd> margin_variables(const NetworkCase& net,
                                                             const ConicSolution& sol) {
    const auto& loads = net.load_bus_index;
    const Eigen::Index n_l = static_cast<Eigen::Index>(loads.size());
    Eigen::VectorXd x(n_l), z(n_l);
    for (Eigen::Index i = 0; i < n_l; ++i) {
        x(i) = sol.value(detail::bus_name(net, loads[static_cast<size_t>(i)], "x"));
        z(i) = sol.value(detail::bus_name(net, loads[static_cast<size_t>(i)], "z"));
    }
    return {std::move(x), std::move(z)};
}

// three buses in a chain, one source feeding two loads
const char* kChainCase = R"(function mpc = chain3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0  0 0 1 1 0 100 1 1.1 0.9;
    2 1 30 10 0 0 1 1 0 100 1 1.1 0.9;
    3 1 20 5  0 0 1 1 0 100 1 1.1 0.9;
];
mpc.gen = [
    1 50 0 300 -300 1.02 100 1 300 0 0 0 0 0 0 0 0 0 0 0 0;
];
mpc.branch = [
    1 2 0.02 0.10 0.02 0 0 0 0 0 1 -360 360;
    2 3 0.03 0.08 0.01 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.01 10 0;
];
)";

}  // namespace

TEST_CASE("acceptance: dispatch cost reproduction") {
    double worst = 0;
    const char* worst_name = "";
    for (size_t k = 0; k < kBenchCount; ++k) {
        const auto& run = bench()[k].constrained;
        INFO(kBench[k].file);
        REQUIRE(run.sol.status == SolveStatus::optimal);
        const double dev = std::abs(run.objective - kBench[k].objective) / kBench[k].objective;
        if (dev > worst) {
            worst = dev;
            worst_name = kBench[k].file;
        }
        CHECK(dev <= 0.01);
    }
    verdict(worst <= 0.01, "dispatch cost reproduction",
            "worst objective deviation %.4f%% (cap 1%%, at %s)", 100.0 * worst, worst_name);
}

TEST_CASE("acceptance: margin floor binds at the planned point") {
    double worst = 0;
    const char* worst_name = "";
    for (size_t k = 0; k < kBenchCount; ++k) {
        const auto& run = bench()[k].constrained;
        INFO(kBench[k].file);
        REQUIRE(run.recovered_ok);
        const double dev = std::abs(run.t_a - kBench[k].t_floor);
        if (dev > worst) {
            worst = dev;
            worst_name = kBench[k].file;
        }
        CHECK(dev <= 5e-3);
    }
    verdict(worst <= 5e-3, "margin floor binds at the planned point",
            "worst |t_a - floor| %.2e (cap 5e-03, at %s)", worst, worst_name);
}

TEST_CASE("acceptance: bound soundness") {
    bool ok = true;
    double worst_gap = 0;
    for (size_t k = 0; k < kBenchCount; ++k) {
        const auto& rep = bench()[k].report;
        INFO(kBench[k].file);
        REQUIRE(rep.og_percent.has_value());
        CHECK(*rep.og_percent >= 0.0);
        CHECK(*rep.og_percent <= 5.0);
        ok = ok && *rep.og_percent >= 0.0 && *rep.og_percent <= 5.0;
        worst_gap = std::max(worst_gap, *rep.og_percent);
    }
    verdict(ok, "bound soundness", "all gaps in [0%%, 5%%], worst %.3f%%", worst_gap);
}

TEST_CASE("acceptance: stability improvement direction") {
    bool ok = true;
    double worst = 1e300;
    for (size_t k = 0; k < kBenchCount; ++k) {
        const auto& rep = bench()[k].report;
        INFO(kBench[k].file);
        REQUIRE(rep.delta_sigma_percent.has_value());
        CHECK(*rep.delta_sigma_percent >= -1e-6);
        ok = ok && *rep.delta_sigma_percent >= -1e-6;
        worst = std::min(worst, *rep.delta_sigma_percent);
        if (std::string(kBench[k].file) == "case_ieee30.m") {
            REQUIRE(rep.delta_lambda_percent.has_value());
            CHECK(*rep.delta_sigma_percent >= 2.25);
            CHECK(*rep.delta_sigma_percent <= 5.25);
            CHECK(*rep.delta_lambda_percent >= 6.4);
            CHECK(*rep.delta_lambda_percent <= 9.4);
            ok = ok && *rep.delta_sigma_percent >= 2.25 && *rep.delta_sigma_percent <= 5.25 &&
                 *rep.delta_lambda_percent >= 6.4 && *rep.delta_lambda_percent <= 9.4;
        }
    }
    verdict(ok, "stability improvement direction", "smallest sigma gain %+.3f%%", worst);
}

TEST_CASE("acceptance: two-bus analytic margin") {
    const NetworkCase net = load_case("case2.m");
    const AdmittanceMatrix adm = build_admittance(net);
    double p_base = 0;
    for (const auto& b : net.buses) p_base += b.p_load;
    const MarginResult m = loading_margin(net, adm, pf_inputs_from_case(net));
    const double deliverable = m.lambda_max * p_base;
    const bool ok = std::abs(deliverable - 5.0) <= 0.01;
    CHECK(deliverable == Catch::Approx(5.0).margin(0.01));
    verdict(ok, "two-bus analytic margin", "lambda_max * P_base = %.4f (want 5.00 +/- 0.01)",
            deliverable);
}

TEST_CASE("acceptance: row dropping is conservative") {
    bool ok = true;

    // keeping the whole row mass must reproduce the untruncated program
    double worst_rel = 0;
    for (size_t k : {size_t{0}, size_t{4}}) {  // case30, case118
        const auto& br = bench()[k];
        const AdmittanceMatrix adm = build_admittance(br.net);
        const EquivalentModel model =
            partition_and_equivalent(br.net, adm, default_generator_voltages(br.net));
        const CouplingMatrix coupling = coupling_matrix(model, load_injections(br.net));
        const FormulationSpec fs = uniform_threshold(br.net, kBench[k].t_floor);
        const ConicSolution sp =
            solve(build_sparse_vscopf(br.net, model, sparsify(coupling, 1.0), fs), SolveSpec{});
        INFO(kBench[k].file);
        REQUIRE(sp.status == SolveStatus::optimal);
        const double rel = std::abs(sp.objective_value - br.constrained.objective) /
                           std::abs(br.constrained.objective);
        CHECK(rel <= 1e-8);
        worst_rel = std::max(worst_rel, rel);
        ok = ok && rel <= 1e-8;
    }

    // any point of the untruncated program stays feasible for the truncated
    // rows once the dropped mass is charged to the right-hand side
    double worst_slack = 1e300;
    const auto implication = [&](const NetworkCase& net, const ConicSolution& sol, double t) {
        const AdmittanceMatrix adm = build_admittance(net);
        const EquivalentModel model =
            partition_and_equivalent(net, adm, default_generator_voltages(net));
        const CouplingMatrix coupling = coupling_matrix(model, load_injections(net));
        const auto [x, z] = margin_variables(net, sol);
        const double v_bar = load_voltage_cap(net);
        for (double gamma : {0.9, 0.95, 0.98}) {
            const SparseApprox approx = sparsify(coupling, gamma);
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                const double slack =
                    x(i) - approx.A_tilde.row(i).dot(z) - (t + approx.delta_a(i) / v_bar);
                worst_slack = std::min(worst_slack, slack);
                CHECK(slack >= -1e-6);
                ok = ok && slack >= -1e-6;
            }
        }
    };
    implication(bench()[4].net, bench()[4].constrained.sol, kBench[4].t_floor);
    {
        const NetworkCase net = load_case("case300.m");
        const AdmittanceMatrix adm = build_admittance(net);
        const EquivalentModel model =
            partition_and_equivalent(net, adm, default_generator_voltages(net));
        const CouplingMatrix coupling = coupling_matrix(model, load_injections(net));
        const double t = derive_threshold(net, model, coupling, SolveSpec{});
        const FormulationSpec fs = uniform_threshold(net, t);
        const ConicSolution sol =
            solve(build_vscopf_socp(net, model, coupling, fs), SolveSpec{});
        REQUIRE(sol.status == SolveStatus::optimal);
        implication(net, sol, t);
    }

    // trimming two percent of the row mass must leave the cost unchanged to
    // five hundredths of a percent on the largest case
    const auto& rows = case300_sweep().rows;
    const double diff_pct =
        100.0 * std::abs(rows[1].objective - rows[0].objective) / std::abs(rows[0].objective);
    CHECK(diff_pct <= 0.05);
    ok = ok && diff_pct <= 0.05;

    verdict(ok, "row dropping is conservative",
            "gamma=1 objective gap %.1e, worst row slack %+.1e, cost shift at 0.98 = %.5f%%",
            worst_rel, worst_slack, diff_pct);
}

TEST_CASE("acceptance: truncation trades accuracy for speed") {
    const auto& sweep = case300_sweep();
    const auto& rows = sweep.rows;  // gammas 1.0, 0.98, 0.94, 0.9
    REQUIRE(rows.size() == 4);

    const double err98 = rows[1].relative_error_pct;
    bool ok = err98 <= 10.0;
    CHECK(err98 <= 10.0);

    const bool faster = sweep.best_time[1] < sweep.best_time[0];
    CHECK(faster);
    ok = ok && faster;

    // dropping more mass must not make the approximation better, up to a
    // ten-percent jitter allowance between neighbouring sweep points
    for (size_t k = 2; k < rows.size(); ++k) {
        CHECK(rows[k].relative_error_pct >= 0.9 * rows[k - 1].relative_error_pct);
        ok = ok && rows[k].relative_error_pct >= 0.9 * rows[k - 1].relative_error_pct;
    }

    verdict(ok, "truncation trades accuracy for speed",
            "error at 0.98 = %.2f%% (cap 10%%), time %.3fs vs dense %.3fs, "
            "errors %.2f%%/%.2f%%/%.2f%%",
            err98, sweep.best_time[1], sweep.best_time[0], rows[1].relative_error_pct,
            rows[2].relative_error_pct, rows[3].relative_error_pct);
}

TEST_CASE("acceptance: numerical property suite") {
    bool ok = true;

    // analytic load-block Jacobian against central differences
    double worst_fd = 0;
    for (const char* name : {"case9.m", "case14.m", "case30.m"}) {
        const NetworkCase net = load_case(name);
        const AdmittanceMatrix adm = build_admittance(net);
        const PFSolution sol = newton_pf(adm, pf_inputs_from_case(net),
                                         flat_start(pf_inputs_from_case(net)));
        const Eigen::MatrixXd J = jacobian_LL(sol.state, adm, net.load_bus_index);
        const Eigen::MatrixXd J_fd = oracle::fd_jacobian_LL(sol.state, adm, net.load_bus_index);
        const double rel = (J - J_fd).norm() / J.norm();
        INFO(name);
        CHECK(rel <= 1e-6);
        ok = ok && rel <= 1e-6;
        worst_fd = std::max(worst_fd, rel);
    }

    // the cones behind every active margin row must be tight
    double worst_cone = 0;
    int active_rows = 0;
    {
        const auto& br = bench()[0];  // case30, floor 0.97 binds
        const AdmittanceMatrix adm = build_admittance(br.net);
        const EquivalentModel model =
            partition_and_equivalent(br.net, adm, default_generator_voltages(br.net));
        const CouplingMatrix coupling = coupling_matrix(model, load_injections(br.net));
        const auto [x, z] = margin_variables(br.net, br.constrained.sol);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            if (x(i) - coupling.A.row(i).dot(z) - kBench[0].t_floor > 1e-5) continue;
            ++active_rows;
            const int bus = br.net.load_bus_index[static_cast<size_t>(i)];
            const double c = br.constrained.sol.value(detail::bus_name(br.net, bus, "c"));
            worst_cone = std::max(worst_cone, std::abs(x(i) - std::sqrt(c)));
            worst_cone = std::max(worst_cone, std::abs(x(i) * z(i) - 1.0));
        }
        REQUIRE(active_rows >= 1);
        CHECK(worst_cone <= 1e-6);
        ok = ok && worst_cone <= 1e-6;
    }

    // stationarity and feasibility residuals on every optimal solve
    double worst_kkt = 0;
    for (const auto& br : bench()) {
        for (const CaseRun* run : {&br.constrained, &br.baseline}) {
            INFO(br.net.name);
            REQUIRE(run->sol.status == SolveStatus::optimal);
            CHECK(run->sol.residuals.worst() <= 1e-6);
            ok = ok && run->sol.residuals.worst() <= 1e-6;
            worst_kkt = std::max(worst_kkt, run->sol.residuals.worst());
        }
    }

    // randomized loading states stay connected to the zero-load point
    int segments = 0;
    for (const char* name : {"case9.m", "case14.m", "case30.m"}) {
        const NetworkCase net = load_case(name);
        const AdmittanceMatrix adm = build_admittance(net);
        const EquivalentModel model =
            partition_and_equivalent(net, adm, default_generator_voltages(net));
        std::mt19937 rng(7);
        std::uniform_real_distribution<double> scale(0.5, 1.2);
        for (int k = 0; k < 20; ++k) {
            PFInputs in = pf_inputs_from_case(net);
            const double s = scale(rng);
            in.p_net *= s;
            in.q_net *= s;
            const PFSolution sol = newton_pf(adm, in, flat_start(in));
            const SegmentReport rep =
                segment_connectedness(model, sol.state.phasors(net.load_bus_index), 1000);
            INFO(name << " sample " << k << " scale " << s);
            CHECK(rep.holds);
            ok = ok && rep.holds;
            segments += rep.holds ? 1 : 0;
        }
    }

    // a radial network pins the angle system exactly
    double tree_residual = 0;
    {
        const NetworkCase net = to_network(parse_matpower(kChainCase));
        PipelineSpec spec;
        spec.stability_rows = false;
        spec.compute_margin = false;
        const CaseRun run = run_case(net, spec);
        REQUIRE(run.sol.status == SolveStatus::optimal);
        tree_residual = recover_angles(run.sol, net).residual();
        CHECK(tree_residual <= 1e-12);
        ok = ok && tree_residual <= 1e-12;
    }

    // the singularity distance shrinks monotonically as loading climbs
    bool monotone = true;
    {
        const NetworkCase net = load_case("case9.m");
        const AdmittanceMatrix adm = build_admittance(net);
        const MarginResult m = loading_margin(net, adm, pf_inputs_from_case(net));
        double prev = 1e300;
        for (const auto& pt : m.trace) {
            if (!pt.converged) continue;
            monotone = monotone && pt.sigma_min <= prev + 1e-12;
            prev = pt.sigma_min;
        }
        CHECK(monotone);
        ok = ok && monotone;
    }

    verdict(ok, "numerical property suite",
            "fd %.1e, cones %.1e over %d active rows, kkt %.1e, %d/60 segments, "
            "tree residual %.1e, monotone=%s",
            worst_fd, worst_cone, active_rows, worst_kkt, segments,
            tree_residual, monotone ? "yes" : "no");
}

TEST_CASE("acceptance: collapse proximity index range") {
    bool ok = true;

    CHECK(vcpi(Complex(1, 0), Complex(1, 0)) == Catch::Approx(0.0).margin(1e-9));
    const double half = vcpi(Complex(1, 0), Complex(0.5, 0));
    CHECK(half == Catch::Approx(1.0).margin(1e-9));
    ok = ok && std::abs(vcpi(Complex(1, 0), Complex(1, 0))) <= 1e-9 &&
         std::abs(half - 1.0) <= 1e-9;

    double lo = 1e300, hi = -1e300;
    const auto fold = [&](const NetworkCase& net, const VoltageState& st) {
        const double v = vcpi_max(net, st);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-9);
        ok = ok && v >= 0.0 && v <= 1.0 + 1e-9;
    };
    for (const auto& br : bench()) {
        if (br.constrained.refined_ok) fold(br.net, br.constrained.refined.pf.state);
        if (br.constrained.feasible_ok) fold(br.net, br.constrained.feasible.pf.state);
        if (br.baseline.refined_ok) fold(br.net, br.baseline.refined.pf.state);
    }
    for (const char* name : {"case9.m", "case14.m", "case30.m"}) {
        const NetworkCase net = load_case(name);
        const AdmittanceMatrix adm = build_admittance(net);
        const PFInputs in = pf_inputs_from_case(net);
        fold(net, newton_pf(adm, in, flat_start(in)).state);
    }

    verdict(ok, "collapse proximity index range", "network values span [%.4f, %.4f]", lo, hi);
}
