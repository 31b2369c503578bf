// End-to-end checks of the command-line tool: spawns the real binary and
// inspects exit codes plus the emitted JSON/CSV reports.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

namespace {

using nlohmann::json;

struct CliResult {
    int exit_code = -1;
    std::string out;
};

std::string data_path(const std::string& name) { return std::string(VSOPF_DATA_DIR) + "/" + name; }

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::filesystem::path tmp =
        std::filesystem::temp_directory_path() /
        ("vsopf_cli_" + std::to_string(counter++) + ".out");
    const std::string cmd =
        std::string(VSOPF_CLI_PATH) + " " + args + " > " + tmp.string() + " 2> /dev/null";
    const int raw = std::system(cmd.c_str());

    CliResult res;
    res.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(tmp);
    std::ostringstream ss;
    ss << in.rdbuf();
    res.out = ss.str();
    std::filesystem::remove(tmp);
    return res;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("solve reproduces the pinned objective over the wire") {
    const CliResult res =
        run_cli("solve --case " + data_path("case30.m") + " --t 0.97 --format json");
    REQUIRE(res.exit_code == 0);
    const json j = json::parse(res.out);
    REQUIRE(j.contains("objective"));
    CHECK(j["objective"].get<double>() == Catch::Approx(574.90).epsilon(0.01));
    CHECK(j["status"] == "optimal");
    CHECK(j["t_lower"].get<double>() == 0.97);
    CHECK_FALSE(j.contains("error"));
}

TEST_CASE("nonpositive threshold is rejected naming the flag") {
    const CliResult res = run_cli("solve --case " + data_path("case30.m") + " --t -1");
    CHECK(res.exit_code == 3);
    const json j = json::parse(res.out);
    REQUIRE(j.contains("error"));
    CHECK(j["error"].get<std::string>().find("--t") != std::string::npos);
}

TEST_CASE("gamma outside the unit interval is rejected") {
    const CliResult res =
        run_cli("solve --case " + data_path("case9.m") + " --t 0.5 --gamma 1.5");
    CHECK(res.exit_code == 3);
    const json j = json::parse(res.out);
    CHECK(j["error"].get<std::string>().find("--gamma") != std::string::npos);
}

TEST_CASE("sweep emits the fixed CSV header and one row per gamma") {
    const CliResult res = run_cli("sweep --case " + data_path("case9.m") +
                                  " --t 0.6 --gammas 0.9,0.95,1.0 --format csv");
    REQUIRE(res.exit_code == 0);
    const std::vector<std::string> lines = lines_of(res.out);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "gamma,time_s,relative_error_pct");
    for (size_t k = 1; k < lines.size(); ++k)
        CHECK(std::count(lines[k].begin(), lines[k].end(), ',') == 2);
}

TEST_CASE("parse summarizes the case structure") {
    const CliResult res = run_cli("parse --case " + data_path("case9.m") + " --samples 100");
    REQUIRE(res.exit_code == 0);
    const json j = json::parse(res.out);
    CHECK(j["buses"].get<int>() == 9);
    CHECK(j["branches"].get<int>() == 9);
    CHECK(j["generators"].get<int>() == 3);
    CHECK(j["slack_bus"].get<int>() == 1);
    CHECK(j["p_load_mw"].get<double>() == Catch::Approx(315.0));
    CHECK(j["segment_holds"].get<bool>());
}

TEST_CASE("margin finds the analytic two-bus limit over the wire") {
    const CliResult res = run_cli("margin --case " + data_path("case2.m"));
    REQUIRE(res.exit_code == 0);
    const json j = json::parse(res.out);
    CHECK(j["lambda_max"].get<double>() == Catch::Approx(5.0).margin(0.01));
    REQUIRE(j["points"].is_array());
    CHECK(j["points"].size() >= 2);
    CHECK(j["points"][0]["lambda"].get<double>() == 1.0);
    CHECK(j["points"][0]["converged"].get<bool>());
}

TEST_CASE("compare echoes the threshold and reports both objectives") {
    const CliResult res =
        run_cli("compare --case " + data_path("case9.m") + " --t 0.6 --format json");
    REQUIRE(res.exit_code == 0);
    const json j = json::parse(res.out);
    CHECK(j["t_lower"].get<double>() == 0.6);
    CHECK(j.contains("objective_lb"));
    CHECK(j.contains("objective_ub"));
    CHECK(j.contains("delta_lambda_percent"));
    CHECK(j.contains("delta_sigma_percent"));
    // the threshold is slack on this case, so both dispatches coincide
    CHECK(j["delta_lambda_percent"].get<double>() == Catch::Approx(0.0).margin(0.5));
}

TEST_CASE("missing case file exits with the IO code") {
    const CliResult res = run_cli("solve --case " + data_path("no_such_case.m") + " --t 0.9");
    CHECK(res.exit_code == 1);
    const json j = json::parse(res.out);
    CHECK(j.contains("error"));
}

TEST_CASE("unattainable threshold surfaces the solver status") {
    const CliResult res = run_cli("solve --case " + data_path("case9.m") + " --t 5.0");
    CHECK(res.exit_code == 2);
    const json j = json::parse(res.out);
    REQUIRE(j.contains("error"));
    CHECK(j["error"].get<std::string>().find("infeasible") != std::string::npos);
}

TEST_CASE("reports are identical across runs except timing") {
    const std::string args =
        "stability --case " + data_path("case9.m") + " --t 0.6 --format json";
    const CliResult a = run_cli(args);
    const CliResult b = run_cli(args);
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    json ja = json::parse(a.out);
    json jb = json::parse(b.out);
    ja.erase("solve_time_s");
    jb.erase("solve_time_s");
    CHECK(ja == jb);
}

TEST_CASE("emitted JSON round-trips through a re-parse") {
    const CliResult res =
        run_cli("stability --case " + data_path("case9.m") + " --t 0.6 --format json");
    REQUIRE(res.exit_code == 0);
    const json once = json::parse(res.out);
    const json twice = json::parse(once.dump());
    CHECK(once == twice);
}

TEST_CASE("output lands in the requested file") {
    const std::filesystem::path tmp =
        std::filesystem::temp_directory_path() / "vsopf_cli_outfile.json";
    std::filesystem::remove(tmp);
    const CliResult res = run_cli("parse --case " + data_path("case9.m") + " --out " + tmp.string());
    REQUIRE(res.exit_code == 0);
    CHECK(res.out.empty());  // nothing on stdout
    std::ifstream in(tmp);
    REQUIRE(in.good());
    const json j = json::parse(in);
    CHECK(j["buses"].get<int>() == 9);
    std::filesystem::remove(tmp);
}
