// Command-line front end: case inspection, stability-constrained dispatch
// solves, single-run metric reports, loading margins, sparsity sweeps, and
// constrained-vs-baseline comparisons, emitted as JSON or CSV.
//
// Exit codes: 0 success, 1 case parse/IO failure, 2 solver or downstream
// numerical failure, 3 invalid configuration. Every failure also emits a
// JSON object with a single "error" field so scripted callers never have to
// scrape stderr.

#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vsopf/analysis.hpp"
#include "vsopf/matpower.hpp"
#include "vsopf/network.hpp"
#include "vsopf/power_flow.hpp"
#include "vsopf/stability.hpp"

namespace {

using nlohmann::json;

constexpr int kExitCaseError = 1;
constexpr int kExitSolveError = 2;
constexpr int kExitConfigError = 3;

struct Options {
    std::string command;
    std::string case_path;
    double t_lower = -1.0;  // negative: derive by the 0.99 backoff policy
    double gamma = 1.0;
    std::string gammas = "1.0,0.98,0.94,0.9";
    std::string format = "json";
    std::string out_path;  // empty: stdout
    double tol = 1e-8;
    int max_iter = 200;
    bool line_limits = false;
    int samples = 0;  // parse: segment-connectedness sample count, 0 skips
    bool t_given = false;
};

// Write failures on --out are IO errors, not solver errors.
struct OutputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void emit(const Options& opt, const std::string& text) {
    if (opt.out_path.empty()) {
        std::cout << text;
        if (text.empty() || text.back() != '\n') std::cout << '\n';
        return;
    }
    std::ofstream out(opt.out_path);
    if (!out) throw OutputError("cannot open output file: " + opt.out_path);
    out << text;
    if (text.empty() || text.back() != '\n') out << '\n';
    if (!out) throw OutputError("failed while writing: " + opt.out_path);
}

int fail(const Options& opt, const std::string& message, int code) {
    std::clog << "[vsopf] error: " << message << '\n';
    const json j{{"error", message}};
    try {
        emit(opt, j.dump(2));
    } catch (const std::exception&) {
        std::cerr << j.dump(2) << '\n';
    }
    return code;
}

std::string num(double v) { return vsopf::detail::csv_number(v); }

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + '"';
}

// Prepend envelope columns to a two-line header/values CSV block.
std::string splice_csv(const std::string& block, const std::string& head_prefix,
                       const std::string& value_prefix) {
    const size_t nl = block.find('\n');
    if (nl == std::string::npos) return head_prefix + ',' + block;
    return head_prefix + ',' + block.substr(0, nl + 1) + value_prefix + ',' +
           block.substr(nl + 1);
}

vsopf::NetworkCase load_network(const Options& opt) {
    vsopf::NetworkCase net = vsopf::to_network(vsopf::parse_matpower_file(opt.case_path));
    std::clog << "[vsopf] loaded " << opt.case_path << ": " << net.buses.size() << " buses, "
              << net.branches.size() << " branches, " << net.generators.size()
              << " generator buses\n";
    return net;
}

// One threshold for the whole invocation: the value given on the command
// line, or the derived backoff echoed in the report so reruns can pin it.
double resolve_threshold(const Options& opt, const vsopf::NetworkCase& net) {
    if (opt.t_lower >= 0) return opt.t_lower;
    const vsopf::AdmittanceMatrix adm = vsopf::build_admittance(net);
    const vsopf::EquivalentModel model =
        vsopf::partition_and_equivalent(net, adm, vsopf::default_generator_voltages(net));
    const vsopf::CouplingMatrix coupling =
        vsopf::coupling_matrix(model, vsopf::load_injections(net));
    const double t = vsopf::derive_threshold(net, model, coupling, {opt.tol, opt.max_iter});
    std::clog << "[vsopf] derived stability threshold t = " << t << '\n';
    return t;
}

vsopf::PipelineSpec pipeline_spec(const Options& opt, double t, bool stability_rows,
                                  bool compute_margin) {
    vsopf::PipelineSpec spec;
    spec.t_lower = t;
    spec.gamma = opt.gamma;
    spec.stability_rows = stability_rows;
    spec.include_line_limits = opt.line_limits;
    spec.compute_margin = compute_margin;
    spec.solver.tol = opt.tol;
    spec.solver.max_iter = opt.max_iter;
    return spec;
}

int cmd_parse(const Options& opt, const vsopf::NetworkCase& net) {
    double p_load = 0, q_load = 0;
    for (const auto& b : net.buses) {
        p_load += b.p_load;
        q_load += b.q_load;
    }

    json j{{"case", opt.case_path},
           {"name", net.name},
           {"base_mva", net.base_mva},
           {"buses", net.buses.size()},
           {"branches", net.branches.size()},
           {"generators", net.generators.size()},
           {"load_buses", net.load_bus_index.size()},
           {"slack_bus", net.buses[static_cast<size_t>(net.slack)].id},
           {"p_load_mw", p_load * net.base_mva},
           {"q_load_mvar", q_load * net.base_mva}};

    if (opt.samples > 0) {
        const vsopf::AdmittanceMatrix adm = vsopf::build_admittance(net);
        const vsopf::PFInputs in = vsopf::pf_inputs_from_case(net);
        const vsopf::PFSolution pf = vsopf::newton_pf(adm, in, vsopf::flat_start(in));
        const vsopf::EquivalentModel model = vsopf::partition_and_equivalent(
            net, adm, vsopf::default_generator_voltages(net));
        const vsopf::SegmentReport seg = vsopf::segment_connectedness(
            model, pf.state.phasors(net.load_bus_index), opt.samples);
        j["segment_holds"] = seg.holds;
        std::clog << "[vsopf] segment check over " << opt.samples
                  << " samples: " << (seg.holds ? "holds" : "violated") << '\n';
    }

    if (opt.format == "csv") {
        std::ostringstream os;
        os << "case,name,base_mva,buses,branches,generators,load_buses,slack_bus,"
              "p_load_mw,q_load_mvar\n"
           << csv_quote(opt.case_path) << ',' << csv_quote(net.name) << ','
           << num(net.base_mva) << ',' << net.buses.size() << ',' << net.branches.size() << ','
           << net.generators.size() << ',' << net.load_bus_index.size() << ','
           << net.buses[static_cast<size_t>(net.slack)].id << ',' << num(p_load * net.base_mva)
           << ',' << num(q_load * net.base_mva) << '\n';
        emit(opt, os.str());
    } else {
        emit(opt, j.dump(2));
    }
    return 0;
}

int cmd_solve(const Options& opt, const vsopf::NetworkCase& net) {
    const double t = resolve_threshold(opt, net);
    const vsopf::CaseRun run =
        vsopf::run_case(net, pipeline_spec(opt, t, /*stability_rows=*/true,
                                           /*compute_margin=*/false));
    std::clog << "[vsopf] solve status=" << vsopf::to_string(run.sol.status)
              << " iterations=" << run.sol.iterations << " time_s=" << run.build_solve_seconds
              << '\n';
    if (run.sol.status != vsopf::SolveStatus::optimal)
        return fail(opt, std::string("solve ended ") + vsopf::to_string(run.sol.status),
                    kExitSolveError);

    if (opt.format == "csv") {
        std::ostringstream os;
        os << "case,t_lower,gamma,objective,status,iterations,solve_time_s\n"
           << csv_quote(opt.case_path) << ',' << num(run.t_lower_used) << ',' << num(opt.gamma)
           << ',' << num(run.objective) << ",optimal," << run.sol.iterations << ','
           << num(run.build_solve_seconds) << '\n';
        emit(opt, os.str());
    } else {
        const json j{{"case", opt.case_path},
                     {"t_lower", run.t_lower_used},
                     {"gamma", opt.gamma},
                     {"objective", run.objective},
                     {"status", "optimal"},
                     {"iterations", run.sol.iterations},
                     {"solve_time_s", run.build_solve_seconds}};
        emit(opt, j.dump(2));
    }
    return 0;
}

int cmd_stability(const Options& opt, const vsopf::NetworkCase& net) {
    const double t = resolve_threshold(opt, net);
    const vsopf::CaseRun run =
        vsopf::run_case(net, pipeline_spec(opt, t, /*stability_rows=*/true,
                                           /*compute_margin=*/false));
    std::clog << "[vsopf] solve status=" << vsopf::to_string(run.sol.status)
              << " iterations=" << run.sol.iterations << " time_s=" << run.build_solve_seconds
              << '\n';
    if (run.sol.status != vsopf::SolveStatus::optimal)
        return fail(opt, std::string("solve ended ") + vsopf::to_string(run.sol.status),
                    kExitSolveError);

    // single-run report: comparison fields stay absent without a baseline
    const vsopf::StabilityReport rep = vsopf::compare_metrics(run, vsopf::CaseRun{});
    const std::string envelope_head = "case,t_lower,gamma";
    const std::string envelope_vals =
        csv_quote(opt.case_path) + ',' + num(run.t_lower_used) + ',' + num(opt.gamma);
    if (opt.format == "csv") {
        emit(opt, splice_csv(vsopf::to_csv(rep), envelope_head, envelope_vals));
    } else {
        json j = vsopf::to_json(rep);
        j["case"] = opt.case_path;
        j["t_lower"] = run.t_lower_used;
        j["gamma"] = opt.gamma;
        emit(opt, j.dump(2));
    }
    return 0;
}

int cmd_margin(const Options& opt, const vsopf::NetworkCase& net) {
    const vsopf::AdmittanceMatrix adm = vsopf::build_admittance(net);
    const vsopf::MarginResult m =
        vsopf::loading_margin(net, adm, vsopf::pf_inputs_from_case(net));
    std::clog << "[vsopf] loading margin lambda_max=" << m.lambda_max << " over "
              << m.trace.size() << " continuation points\n";

    if (opt.format == "csv") {
        std::ostringstream os;
        os << "lambda,sigma_min,converged\n";
        for (const auto& pt : m.trace)
            os << num(pt.lambda) << ',' << num(pt.sigma_min) << ',' << (pt.converged ? 1 : 0)
               << '\n';
        emit(opt, os.str());
    } else {
        json points = json::array();
        for (const auto& pt : m.trace)
            points.push_back({{"lambda", pt.lambda},
                              {"sigma_min", pt.sigma_min},
                              {"converged", pt.converged}});
        const json j{{"case", opt.case_path},
                     {"lambda_max", m.lambda_max},
                     {"points", points}};
        emit(opt, j.dump(2));
    }
    return 0;
}

int cmd_sweep(const Options& opt, const vsopf::NetworkCase& net,
              const std::vector<double>& gammas) {
    const double t = resolve_threshold(opt, net);
    vsopf::PipelineSpec spec = pipeline_spec(opt, t, /*stability_rows=*/true,
                                             /*compute_margin=*/false);
    const std::vector<vsopf::SweepRow> rows = vsopf::gamma_sweep(net, gammas, spec);
    for (const auto& row : rows)
        std::clog << "[vsopf] sweep gamma=" << row.gamma << " time_s=" << row.time_s
                  << " relative_error_pct=" << row.relative_error_pct << '\n';

    if (opt.format == "csv") {
        emit(opt, vsopf::to_csv(rows));
    } else {
        const json j{{"case", opt.case_path}, {"t_lower", t}, {"rows", vsopf::to_json(rows)}};
        emit(opt, j.dump(2));
    }
    return 0;
}

int cmd_compare(const Options& opt, const vsopf::NetworkCase& net) {
    const double t = resolve_threshold(opt, net);
    const vsopf::CaseRun constrained =
        vsopf::run_case(net, pipeline_spec(opt, t, /*stability_rows=*/true,
                                           /*compute_margin=*/true));
    if (constrained.sol.status != vsopf::SolveStatus::optimal)
        return fail(opt,
                    std::string("constrained solve ended ") +
                        vsopf::to_string(constrained.sol.status),
                    kExitSolveError);
    const vsopf::CaseRun baseline =
        vsopf::run_case(net, pipeline_spec(opt, t, /*stability_rows=*/false,
                                           /*compute_margin=*/true));
    if (baseline.sol.status != vsopf::SolveStatus::optimal)
        return fail(opt,
                    std::string("baseline solve ended ") + vsopf::to_string(baseline.sol.status),
                    kExitSolveError);
    std::clog << "[vsopf] constrained objective=" << constrained.objective
              << " baseline objective=" << baseline.objective << '\n';

    const vsopf::StabilityReport rep = vsopf::compare_metrics(constrained, baseline);
    const std::string envelope_head = "case,t_lower,gamma";
    const std::string envelope_vals =
        csv_quote(opt.case_path) + ',' + num(constrained.t_lower_used) + ',' + num(opt.gamma);
    if (opt.format == "csv") {
        emit(opt, splice_csv(vsopf::to_csv(rep), envelope_head, envelope_vals));
    } else {
        json j = vsopf::to_json(rep);
        j["case"] = opt.case_path;
        j["t_lower"] = constrained.t_lower_used;
        j["gamma"] = opt.gamma;
        emit(opt, j.dump(2));
    }
    return 0;
}

// Flag-value checks the parser cannot express; messages name the flag.
std::string validate(const Options& opt, const std::vector<double>& gammas) {
    if (opt.t_given && opt.t_lower <= 0) return "--t must be positive";
    if (opt.gamma < 0 || opt.gamma > 1) return "--gamma must lie in [0, 1]";
    if (opt.tol <= 0) return "--tol must be positive";
    if (opt.max_iter <= 0) return "--max-iter must be positive";
    if (opt.samples < 0) return "--samples must be nonnegative";
    for (double g : gammas)
        if (g < 0 || g > 1) return "--gammas entries must lie in [0, 1]";
    return {};
}

std::vector<double> parse_gammas(const std::string& text, bool& ok) {
    std::vector<double> out;
    ok = true;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t used = 0;
            const double g = std::stod(item, &used);
            while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used])))
                ++used;
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(g);
        } catch (const std::exception&) {
            ok = false;
            return {};
        }
    }
    if (out.empty()) ok = false;
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voltage-stability-constrained dispatch toolkit"};
    app.require_subcommand(1);

    Options opt;
    const auto add_common = [&](CLI::App* sub, bool with_t) {
        sub->add_option("--case", opt.case_path, "MATPOWER case file")->required();
        sub->add_option("--format", opt.format, "output format")
            ->check(CLI::IsMember({"json", "csv"}));
        sub->add_option("--out", opt.out_path, "write the report to this path");
        if (with_t) {
            sub->add_option("--t", opt.t_lower, "stability threshold (derived when omitted)");
            sub->add_option("--tol", opt.tol, "solver convergence tolerance");
            sub->add_option("--max-iter", opt.max_iter, "solver iteration cap");
            sub->add_flag("--include-line-limits", opt.line_limits,
                          "enforce branch real-power ratings");
        }
    };

    CLI::App* parse_cmd = app.add_subcommand("parse", "load and summarize a case");
    add_common(parse_cmd, false);
    parse_cmd->add_option("--samples", opt.samples,
                          "segment-connectedness samples (0 skips the check)");

    CLI::App* solve_cmd = app.add_subcommand("solve", "solve the constrained dispatch");
    add_common(solve_cmd, true);
    solve_cmd->add_option("--gamma", opt.gamma, "stability-row sparsification in [0, 1]");

    CLI::App* stability_cmd =
        app.add_subcommand("stability", "solve and report recovery metrics");
    add_common(stability_cmd, true);
    stability_cmd->add_option("--gamma", opt.gamma, "stability-row sparsification in [0, 1]");

    CLI::App* margin_cmd =
        app.add_subcommand("margin", "loading margin at the case operating point");
    add_common(margin_cmd, false);

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "sparsification sweep over gamma values");
    add_common(sweep_cmd, true);
    sweep_cmd->add_option("--gammas", opt.gammas, "comma-separated gamma grid");

    CLI::App* compare_cmd =
        app.add_subcommand("compare", "constrained versus unconstrained baseline");
    add_common(compare_cmd, true);
    compare_cmd->add_option("--gamma", opt.gamma, "stability-row sparsification in [0, 1]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::clog << "[vsopf] " << e.what() << '\n';
        std::cout << json{{"error", e.what()}}.dump(2) << '\n';
        return kExitConfigError;
    }
    opt.t_given = solve_cmd->count("--t") || stability_cmd->count("--t") ||
                  sweep_cmd->count("--t") || compare_cmd->count("--t");

    bool gammas_ok = true;
    const std::vector<double> gammas = parse_gammas(opt.gammas, gammas_ok);
    if (sweep_cmd->parsed() && !gammas_ok)
        return fail(opt, "--gammas must be a comma-separated list of numbers",
                    kExitConfigError);
    if (const std::string msg = validate(opt, sweep_cmd->parsed() ? gammas : std::vector<double>{});
        !msg.empty())
        return fail(opt, msg, kExitConfigError);

    vsopf::NetworkCase net;
    try {
        net = load_network(opt);
    } catch (const std::exception& e) {
        return fail(opt, e.what(), kExitCaseError);
    }

    try {
        if (parse_cmd->parsed()) return cmd_parse(opt, net);
        if (solve_cmd->parsed()) return cmd_solve(opt, net);
        if (stability_cmd->parsed()) return cmd_stability(opt, net);
        if (margin_cmd->parsed()) return cmd_margin(opt, net);
        if (sweep_cmd->parsed()) return cmd_sweep(opt, net, gammas);
        return cmd_compare(opt, net);
    } catch (const OutputError& e) {
        std::cerr << "[vsopf] error: " << e.what() << '\n';
        std::cerr << json{{"error", e.what()}}.dump(2) << '\n';
        return kExitCaseError;
    } catch (const std::exception& e) {
        return fail(opt, e.what(), kExitSolveError);
    }
}
