#pragma once

// MATPOWER case ingestion: text -> RawCase -> validated per-unit NetworkCase,
// plus a canonical JSON exchange format for the validated form.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vsopf/errors.hpp"

namespace vsopf {

struct RawCase {
    std::string case_name;
    double base_mva = 0.0;
    std::vector<std::vector<double>> bus_rows;
    std::vector<std::vector<double>> gen_rows;
    std::vector<std::vector<double>> branch_rows;
    std::vector<std::vector<double>> gencost_rows;  // may be empty
};

enum class BusKind { load, generator, slack };

struct Bus {
    int id = 0;  // original MATPOWER bus number
    BusKind kind = BusKind::load;
    double p_load = 0, q_load = 0;    // p.u.
    double g_shunt = 0, b_shunt = 0;  // p.u.
    double v_min = 0, v_max = 0;      // p.u.
    double v_mag = 1, v_ang = 0;      // operating point from the file (p.u., rad)
};

struct Generator {
    int bus = 0;  // internal bus index
    double p_min = 0, p_max = 0;  // p.u.
    double q_min = 0, q_max = 0;  // p.u.
    double v_set = 1;             // p.u.
    double p_set = 0;             // scheduled output from the file, p.u.
    // cost f(p) = c2 p^2 + c1 p + c0 with p in p.u., f in $/h
    double c2 = 0, c1 = 0, c0 = 0;
};

struct Branch {
    int from = 0, to = 0;  // internal bus indices
    double r = 0, x = 0, b_charging = 0;
    double tap_ratio = 1, phase_shift = 0;  // rad
    double rate_a = 0;                      // p.u., 0 = unlimited
    bool status = true;
};

struct NetworkCase {
    std::string name;
    double base_mva = 100;
    std::vector<Bus> buses;
    std::vector<Generator> generators;  // in service, aggregated one per generator bus
    std::vector<Branch> branches;       // in service
    std::vector<int> load_bus_index;    // internal indices, ascending
    std::vector<int> gen_bus_index;     // internal indices, ascending (slack included)
    int slack = -1;                     // internal index

    int index_of(int bus_id) const {
        for (size_t k = 0; k < buses.size(); ++k)
            if (buses[k].id == bus_id) return static_cast<int>(k);
        return -1;
    }
};

namespace detail {

inline bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

struct TextScanner {
    const std::string& text;
    explicit TextScanner(const std::string& t) : text(t) {}

    int line_of(size_t pos) const {
        return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
    }

    // position just past "mpc.<name>" used as an assignment target, or npos
    size_t find_assignment(const std::string& name) const {
        const std::string needle = "mpc." + name;
        size_t pos = 0;
        while ((pos = text.find(needle, pos)) != std::string::npos) {
            size_t end = pos + needle.size();
            if (end < text.size() && is_ident_char(text[end])) {  // e.g. mpc.gencost vs mpc.gen
                ++pos;
                continue;
            }
            return end;
        }
        return std::string::npos;
    }
};

// Parses the bracketed numeric matrix that follows an '=' at `pos`.
// Rows end at ';' or newline; '%' comments run to end of line.
inline std::vector<std::vector<double>> parse_matrix(const TextScanner& sc, size_t pos,
                                                     const std::string& section) {
    const std::string& t = sc.text;
    size_t i = pos;
    while (i < t.size() && t[i] != '[') {
        if (!std::isspace(static_cast<unsigned char>(t[i])) && t[i] != '=')
            throw MalformedRow(section, sc.line_of(i), "expected '[' to open the matrix");
        ++i;
    }
    if (i == t.size()) throw MalformedRow(section, sc.line_of(pos), "matrix never opens");
    ++i;

    std::vector<std::vector<double>> rows;
    std::vector<double> row;
    auto flush_row = [&]() {
        if (!row.empty()) rows.push_back(std::move(row));
        row.clear();
    };
    while (i < t.size()) {
        char c = t[i];
        if (c == ']') {
            flush_row();
            return rows;
        }
        if (c == '%') {
            while (i < t.size() && t[i] != '\n') ++i;
            continue;
        }
        if (c == ';' || c == '\n') {
            flush_row();
            ++i;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
            ++i;
            continue;
        }
        const char* start = t.c_str() + i;
        char* after = nullptr;
        double v = std::strtod(start, &after);
        if (after == start)
            throw MalformedRow(section, sc.line_of(i), std::string("unexpected token '") + c + "'");
        row.push_back(v);
        i += static_cast<size_t>(after - start);
    }
    throw MalformedRow(section, sc.line_of(pos), "matrix never closes");
}

inline void check_widths(const std::vector<std::vector<double>>& rows, size_t min_cols,
                         const std::string& section) {
    for (size_t r = 0; r < rows.size(); ++r)
        if (rows[r].size() < min_cols)
            throw MalformedRow(section, static_cast<int>(r + 1),
                               "expected at least " + std::to_string(min_cols) + " columns, got " +
                                   std::to_string(rows[r].size()));
}

}  // namespace detail

inline RawCase parse_matpower(const std::string& text) {
    detail::TextScanner sc(text);
    RawCase raw;

    // case name from the function header when present
    size_t fpos = text.find("function");
    if (fpos != std::string::npos) {
        size_t eq = text.find('=', fpos);
        if (eq != std::string::npos) {
            size_t b = eq + 1;
            while (b < text.size() && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
            size_t e = b;
            while (e < text.size() && detail::is_ident_char(text[e])) ++e;
            raw.case_name = text.substr(b, e - b);
        }
    }

    size_t pos = sc.find_assignment("baseMVA");
    if (pos == std::string::npos) throw MissingSection("baseMVA");
    {
        size_t i = pos;
        while (i < text.size() && (std::isspace(static_cast<unsigned char>(text[i])) || text[i] == '='))
            ++i;
        char* after = nullptr;
        raw.base_mva = std::strtod(text.c_str() + i, &after);
        if (after == text.c_str() + i)
            throw MalformedRow("baseMVA", sc.line_of(i), "expected a number");
    }

    auto grab = [&](const std::string& name, bool required) -> std::vector<std::vector<double>> {
        size_t p = sc.find_assignment(name);
        if (p == std::string::npos) {
            if (required) throw MissingSection(name);
            return {};
        }
        return detail::parse_matrix(sc, p, name);
    };
    raw.bus_rows = grab("bus", true);
    raw.gen_rows = grab("gen", true);
    raw.branch_rows = grab("branch", true);
    raw.gencost_rows = grab("gencost", false);

    detail::check_widths(raw.bus_rows, 13, "bus");
    detail::check_widths(raw.gen_rows, 10, "gen");
    detail::check_widths(raw.branch_rows, 13, "branch");
    detail::check_widths(raw.gencost_rows, 4, "gencost");
    return raw;
}

inline RawCase parse_matpower_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open case file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_matpower(ss.str());
}

namespace detail {

struct FittedCost {
    double c2 = 0, c1 = 0, c0 = 0;
};

// gencost row -> quadratic coefficients in MATPOWER units ($/h over MW)
inline FittedCost cost_from_row(const std::vector<double>& row, int gen_number) {
    const int model = static_cast<int>(row[0]);
    const int ncost = static_cast<int>(row[3]);
    if (model == 1)
        throw UnsupportedCost("generator " + std::to_string(gen_number) +
                              " uses a piecewise-linear cost");
    if (model != 2)
        throw UnsupportedCost("generator " + std::to_string(gen_number) +
                              " uses unknown cost model " + std::to_string(model));
    if (ncost > 3)
        throw UnsupportedCost("generator " + std::to_string(gen_number) +
                              " uses a polynomial of degree " + std::to_string(ncost - 1) +
                              "; only quadratic and below are supported");
    if (static_cast<int>(row.size()) < 4 + ncost)
        throw MalformedRow("gencost", gen_number, "fewer coefficients than NCOST announces");
    FittedCost fc;
    if (ncost == 3) {
        fc.c2 = row[4];
        fc.c1 = row[5];
        fc.c0 = row[6];
    } else if (ncost == 2) {
        fc.c1 = row[4];
        fc.c0 = row[5];
    } else if (ncost == 1) {
        fc.c0 = row[4];
    }
    if (fc.c2 < 0)
        throw UnsupportedCost("generator " + std::to_string(gen_number) +
                              " has a concave quadratic cost");
    return fc;
}

}  // namespace detail

inline NetworkCase to_network(const RawCase& raw) {
    if (raw.base_mva <= 0) throw Error("baseMVA must be positive");
    const double base = raw.base_mva;

    NetworkCase net;
    net.name = raw.case_name;
    net.base_mva = base;

    std::map<int, int> id2idx;
    net.buses.reserve(raw.bus_rows.size());
    for (size_t r = 0; r < raw.bus_rows.size(); ++r) {
        const auto& row = raw.bus_rows[r];
        Bus b;
        b.id = static_cast<int>(row[0]);
        const int type = static_cast<int>(row[1]);
        b.kind = (type == 3) ? BusKind::slack : (type == 2 ? BusKind::generator : BusKind::load);
        b.p_load = row[2] / base;
        b.q_load = row[3] / base;
        b.g_shunt = row[4] / base;
        b.b_shunt = row[5] / base;
        b.v_mag = row[7];
        b.v_ang = row[8] * M_PI / 180.0;
        b.v_max = row[11];
        b.v_min = row[12];
        if (!id2idx.emplace(b.id, static_cast<int>(net.buses.size())).second)
            throw MalformedRow("bus", static_cast<int>(r + 1),
                               "duplicate bus number " + std::to_string(b.id));
        net.buses.push_back(b);
    }

    // only the first type-3 bus keeps the reference role
    for (auto& b : net.buses) {
        if (b.kind == BusKind::slack) {
            if (net.slack < 0)
                net.slack = id2idx[b.id];
            else
                b.kind = BusKind::generator;
        }
    }
    if (net.slack < 0) throw NoSlack();

    // per-generator cost rows (MATPOWER units), defaults when the section is absent
    const size_t n_gen_rows = raw.gen_rows.size();
    std::vector<detail::FittedCost> costs(n_gen_rows);
    if (raw.gencost_rows.empty()) {
        for (auto& c : costs) c = {0.0, 1.0, 0.0};
    } else {
        size_t nc = raw.gencost_rows.size();
        if (nc != n_gen_rows && nc != 2 * n_gen_rows)
            throw MalformedRow("gencost", 1,
                               "expected one row per generator (or two, with reactive costs)");
        // with 2*ngen rows the second half prices reactive power, which the model ignores
        for (size_t g = 0; g < n_gen_rows; ++g)
            costs[g] = detail::cost_from_row(raw.gencost_rows[g], static_cast<int>(g + 1));
    }

    // collect in-service units per bus, then aggregate
    struct Unit {
        double p_min, p_max, q_min, q_max, v_set, p_set;
        detail::FittedCost cost;
    };
    std::map<int, std::vector<Unit>> units_at;  // internal bus index -> units
    for (size_t g = 0; g < n_gen_rows; ++g) {
        const auto& row = raw.gen_rows[g];
        if (row[7] <= 0) continue;  // out of service
        auto it = id2idx.find(static_cast<int>(row[0]));
        if (it == id2idx.end())
            throw MalformedRow("gen", static_cast<int>(g + 1),
                               "references unknown bus " + std::to_string(static_cast<int>(row[0])));
        Unit u;
        u.p_set = row[1] / base;
        u.q_max = row[3] / base;
        u.q_min = row[4] / base;
        u.v_set = row[5];
        u.p_max = row[8] / base;
        u.p_min = row[9] / base;
        u.cost = costs[g];
        units_at[it->second].push_back(u);
    }

    for (auto& [bus_idx, units] : units_at) {
        Generator agg;
        agg.bus = bus_idx;
        agg.v_set = units.front().v_set;
        double pmax_total = 0;
        for (const auto& u : units) {
            agg.p_min += u.p_min;
            agg.p_max += u.p_max;
            agg.q_min += u.q_min;
            agg.q_max += u.q_max;
            agg.p_set += u.p_set;
            pmax_total += u.p_max;
        }
        // cost of running all units at a common fraction of capability: weights
        // w_k = pmax_k / sum(pmax) make the aggregate quadratic exact under
        // proportional dispatch
        for (size_t k = 0; k < units.size(); ++k) {
            const double w =
                pmax_total > 0 ? units[k].p_max / pmax_total : 1.0 / static_cast<double>(units.size());
            agg.c2 += units[k].cost.c2 * w * w;
            agg.c1 += units[k].cost.c1 * w;
            agg.c0 += units[k].cost.c0;
        }
        // rescale so the quadratic takes p.u. power
        agg.c2 *= base * base;
        agg.c1 *= base;
        net.generators.push_back(agg);
    }

    // a declared generator bus with no live unit cannot hold its voltage
    for (auto& b : net.buses) {
        const int idx = id2idx[b.id];
        const bool has_gen = units_at.count(idx) > 0;
        if (b.kind == BusKind::generator && !has_gen) b.kind = BusKind::load;
        if (b.kind == BusKind::slack && !has_gen)
            throw NoSlack("slack bus " + std::to_string(b.id) + " has no in-service generator");
    }

    for (size_t r = 0; r < raw.branch_rows.size(); ++r) {
        const auto& row = raw.branch_rows[r];
        if (row[10] <= 0) continue;  // out of service
        Branch br;
        auto fit = id2idx.find(static_cast<int>(row[0]));
        auto tit = id2idx.find(static_cast<int>(row[1]));
        if (fit == id2idx.end() || tit == id2idx.end())
            throw MalformedRow("branch", static_cast<int>(r + 1), "references unknown bus");
        br.from = fit->second;
        br.to = tit->second;
        br.r = row[2];
        br.x = row[3];
        br.b_charging = row[4];
        br.rate_a = row[5] / base;
        br.tap_ratio = row[8] == 0.0 ? 1.0 : row[8];
        br.phase_shift = row[9] * M_PI / 180.0;
        br.status = true;
        net.branches.push_back(br);
    }

    // connectivity over in-service branches
    {
        const int n = static_cast<int>(net.buses.size());
        std::vector<std::vector<int>> adj(n);
        for (const auto& br : net.branches) {
            adj[br.from].push_back(br.to);
            adj[br.to].push_back(br.from);
        }
        std::vector<int> comp(n, -1);
        int ncomp = 0;
        for (int s = 0; s < n; ++s) {
            if (comp[s] >= 0) continue;
            comp[s] = ncomp;
            std::queue<int> q;
            q.push(s);
            while (!q.empty()) {
                int u = q.front();
                q.pop();
                for (int v : adj[u])
                    if (comp[v] < 0) {
                        comp[v] = ncomp;
                        q.push(v);
                    }
            }
            ++ncomp;
        }
        if (ncomp > 1) throw Disconnected(ncomp);
    }

    for (size_t k = 0; k < net.buses.size(); ++k) {
        if (net.buses[k].kind == BusKind::load)
            net.load_bus_index.push_back(static_cast<int>(k));
        else
            net.gen_bus_index.push_back(static_cast<int>(k));
    }
    return net;
}

// ---------------------------------------------------------------------------
// canonical JSON exchange format

inline bool operator==(const Bus& a, const Bus& b) {
    return a.id == b.id && a.kind == b.kind && a.p_load == b.p_load && a.q_load == b.q_load &&
           a.g_shunt == b.g_shunt && a.b_shunt == b.b_shunt && a.v_min == b.v_min &&
           a.v_max == b.v_max && a.v_mag == b.v_mag && a.v_ang == b.v_ang;
}
inline bool operator==(const Generator& a, const Generator& b) {
    return a.bus == b.bus && a.p_min == b.p_min && a.p_max == b.p_max && a.q_min == b.q_min &&
           a.q_max == b.q_max && a.v_set == b.v_set && a.p_set == b.p_set && a.c2 == b.c2 &&
           a.c1 == b.c1 && a.c0 == b.c0;
}
inline bool operator==(const Branch& a, const Branch& b) {
    return a.from == b.from && a.to == b.to && a.r == b.r && a.x == b.x &&
           a.b_charging == b.b_charging && a.tap_ratio == b.tap_ratio &&
           a.phase_shift == b.phase_shift && a.rate_a == b.rate_a && a.status == b.status;
}
inline bool operator==(const NetworkCase& a, const NetworkCase& b) {
    return a.name == b.name && a.base_mva == b.base_mva && a.buses == b.buses &&
           a.generators == b.generators && a.branches == b.branches &&
           a.load_bus_index == b.load_bus_index && a.gen_bus_index == b.gen_bus_index &&
           a.slack == b.slack;
}

inline nlohmann::json to_json(const NetworkCase& net) {
    nlohmann::json j;
    j["name"] = net.name;
    j["base_mva"] = net.base_mva;
    j["slack"] = net.slack;
    j["load_bus_index"] = net.load_bus_index;
    j["gen_bus_index"] = net.gen_bus_index;
    j["buses"] = nlohmann::json::array();
    for (const auto& b : net.buses) {
        const char* kind = b.kind == BusKind::slack ? "slack"
                           : b.kind == BusKind::generator ? "generator"
                                                          : "load";
        j["buses"].push_back({{"id", b.id},
                              {"kind", kind},
                              {"p_load", b.p_load},
                              {"q_load", b.q_load},
                              {"g_shunt", b.g_shunt},
                              {"b_shunt", b.b_shunt},
                              {"v_min", b.v_min},
                              {"v_max", b.v_max},
                              {"v_mag", b.v_mag},
                              {"v_ang", b.v_ang}});
    }
    j["generators"] = nlohmann::json::array();
    for (const auto& g : net.generators)
        j["generators"].push_back({{"bus", g.bus},
                                   {"p_min", g.p_min},
                                   {"p_max", g.p_max},
                                   {"q_min", g.q_min},
                                   {"q_max", g.q_max},
                                   {"v_set", g.v_set},
                                   {"p_set", g.p_set},
                                   {"c2", g.c2},
                                   {"c1", g.c1},
                                   {"c0", g.c0}});
    j["branches"] = nlohmann::json::array();
    for (const auto& br : net.branches)
        j["branches"].push_back({{"from", br.from},
                                 {"to", br.to},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b_charging", br.b_charging},
                                 {"tap_ratio", br.tap_ratio},
                                 {"phase_shift", br.phase_shift},
                                 {"rate_a", br.rate_a},
                                 {"status", br.status}});
    return j;
}

inline NetworkCase network_from_json(const nlohmann::json& j) {
    NetworkCase net;
    net.name = j.at("name").get<std::string>();
    net.base_mva = j.at("base_mva").get<double>();
    net.slack = j.at("slack").get<int>();
    net.load_bus_index = j.at("load_bus_index").get<std::vector<int>>();
    net.gen_bus_index = j.at("gen_bus_index").get<std::vector<int>>();
    for (const auto& jb : j.at("buses")) {
        Bus b;
        b.id = jb.at("id").get<int>();
        const std::string kind = jb.at("kind").get<std::string>();
        b.kind = kind == "slack" ? BusKind::slack
                 : kind == "generator" ? BusKind::generator
                                       : BusKind::load;
        b.p_load = jb.at("p_load").get<double>();
        b.q_load = jb.at("q_load").get<double>();
        b.g_shunt = jb.at("g_shunt").get<double>();
        b.b_shunt = jb.at("b_shunt").get<double>();
        b.v_min = jb.at("v_min").get<double>();
        b.v_max = jb.at("v_max").get<double>();
        b.v_mag = jb.at("v_mag").get<double>();
        b.v_ang = jb.at("v_ang").get<double>();
        net.buses.push_back(b);
    }
    for (const auto& jg : j.at("generators")) {
        Generator g;
        g.bus = jg.at("bus").get<int>();
        g.p_min = jg.at("p_min").get<double>();
        g.p_max = jg.at("p_max").get<double>();
        g.q_min = jg.at("q_min").get<double>();
        g.q_max = jg.at("q_max").get<double>();
        g.v_set = jg.at("v_set").get<double>();
        g.p_set = jg.at("p_set").get<double>();
        g.c2 = jg.at("c2").get<double>();
        g.c1 = jg.at("c1").get<double>();
        g.c0 = jg.at("c0").get<double>();
        net.generators.push_back(g);
    }
    for (const auto& jb : j.at("branches")) {
        Branch br;
        br.from = jb.at("from").get<int>();
        br.to = jb.at("to").get<int>();
        br.r = jb.at("r").get<double>();
        br.x = jb.at("x").get<double>();
        br.b_charging = jb.at("b_charging").get<double>();
        br.tap_ratio = jb.at("tap_ratio").get<double>();
        br.phase_shift = jb.at("phase_shift").get<double>();
        br.rate_a = jb.at("rate_a").get<double>();
        br.status = jb.at("status").get<bool>();
        net.branches.push_back(br);
    }
    return net;
}

}  // namespace vsopf
