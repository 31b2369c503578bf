#pragma once

// Conic program representation: named variables with bounds, a convex
// quadratic objective, sparse linear equality/inequality rows, and
// second-order cones over affine expressions. Quadratic cost terms are
// compiled into epigraph auxiliaries so the solved problem minimizes a
// linear functional over cones. kkt_residuals re-derives optimality
// conditions from the program data alone, so it double-checks any solver.

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "vsopf/errors.hpp"

namespace vsopf {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct LinTerm {
    int var = -1;
    double coeff = 0;
};

struct LinExpr {
    std::vector<LinTerm> terms;
    double constant = 0;

    LinExpr() = default;
    LinExpr(int var, double coeff) { terms.push_back({var, coeff}); }
    explicit LinExpr(double k) : constant(k) {}

    LinExpr& add(int var, double coeff) {
        terms.push_back({var, coeff});
        return *this;
    }
    LinExpr& shift(double k) {
        constant += k;
        return *this;
    }
};

enum class Sense { le, ge };

class ConicProgram {
public:
    int add_variable(const std::string& name, double lb = -kInfinity, double ub = kInfinity) {
        if (index_.count(name)) throw Error("duplicate variable: " + name);
        const int id = static_cast<int>(names_.size());
        index_.emplace(name, id);
        names_.push_back(name);
        lb_.push_back(lb);
        ub_.push_back(ub);
        lin_cost_.push_back(0);
        quad_cost_.push_back(0);
        return id;
    }

    int variable(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown variable: " + name);
        return it->second;
    }
    bool has_variable(const std::string& name) const { return index_.count(name) > 0; }

    void add_linear_cost(int var, double coeff) { lin_cost_.at(static_cast<size_t>(var)) += coeff; }
    void add_quadratic_cost(int var, double c2, double c1, double c0) {
        if (c2 < 0)
            throw Error("negative quadratic coefficient on " + names_.at(static_cast<size_t>(var)));
        quad_cost_.at(static_cast<size_t>(var)) += c2;
        lin_cost_.at(static_cast<size_t>(var)) += c1;
        const_cost_ += c0;
    }
    void add_constant_cost(double c0) { const_cost_ += c0; }

    void add_equality(LinExpr e, double rhs) {
        validate(e);
        equalities_.emplace_back(std::move(e), rhs);
    }
    void add_inequality(LinExpr e, Sense sense, double rhs) {
        validate(e);
        inequalities_.push_back({std::move(e), sense, rhs});
    }
    // members[0] is the cone head: ||(members[1..])||_2 <= members[0]
    void add_cone(std::vector<LinExpr> members) {
        if (members.size() < 2) throw Error("cone needs a head and at least one tail member");
        for (const auto& m : members) validate(m);
        cones_.push_back(std::move(members));
    }

    struct Inequality {
        LinExpr expr;
        Sense sense = Sense::le;
        double rhs = 0;
    };

    int n_variables() const { return static_cast<int>(names_.size()); }
    const std::string& name(int var) const { return names_.at(static_cast<size_t>(var)); }
    double lower(int var) const { return lb_.at(static_cast<size_t>(var)); }
    double upper(int var) const { return ub_.at(static_cast<size_t>(var)); }
    const std::vector<double>& linear_costs() const { return lin_cost_; }
    const std::vector<double>& quadratic_costs() const { return quad_cost_; }
    double constant_cost() const { return const_cost_; }
    const std::vector<std::pair<LinExpr, double>>& equalities() const { return equalities_; }
    const std::vector<Inequality>& inequalities() const { return inequalities_; }
    const std::vector<std::vector<LinExpr>>& cones() const { return cones_; }

private:
    void validate(const LinExpr& e) const {
        for (const auto& t : e.terms)
            if (t.var < 0 || t.var >= n_variables())
                throw Error("expression references an undeclared variable");
    }

    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
    std::vector<double> lb_, ub_, lin_cost_, quad_cost_;
    double const_cost_ = 0;
    std::vector<std::pair<LinExpr, double>> equalities_;
    std::vector<Inequality> inequalities_;
    std::vector<std::vector<LinExpr>> cones_;
};

enum class SolveStatus { optimal, infeasible, unbounded, numerical_failure };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::unbounded: return "unbounded";
        default: return "numerical_failure";
    }
}

struct Residuals {
    double primal_feas = 0;
    double dual_feas = 0;
    double gap = 0;
    double worst() const { return std::max({primal_feas, dual_feas, gap}); }
};

struct ConicSolution {
    SolveStatus status = SolveStatus::numerical_failure;
    double objective_value = 0;
    std::map<std::string, double> primal;  // named variables only
    std::map<std::string, double> dual;    // labeled multipliers
    Residuals residuals;
    int iterations = 0;
    // standard-form point; x carries epigraph auxiliaries after the named block
    Eigen::VectorXd x, y, z;

    double value(const std::string& name) const {
        auto it = primal.find(name);
        if (it == primal.end()) throw Error("no primal value for " + name);
        return it->second;
    }
};

namespace detail {

// min c'x + c0  s.t.  A x = b,  h - G x in K,
// K = nonnegative orthant rows then second-order cone blocks.
struct StandardForm {
    int n = 0;        // named variables plus epigraph auxiliaries
    int n_named = 0;
    Eigen::VectorXd c;
    double c0 = 0;
    Eigen::SparseMatrix<double> A;
    Eigen::VectorXd b;
    Eigen::SparseMatrix<double> G;
    Eigen::VectorXd h;
    int lp_rows = 0;
    std::vector<int> soc_dims;
    std::vector<std::string> lp_labels;    // one per LP row
    std::vector<std::string> cone_labels;  // one per SOC block
};

inline StandardForm compile(const ConicProgram& p) {
    StandardForm sf;
    sf.n_named = p.n_variables();

    // epigraph auxiliary per variable carrying a quadratic cost; each block
    // is normalized so the auxiliary stays O(1) at the bound-permitted peak
    // of q v^2 -- the cost scale moves into the objective coefficient, where
    // the solver's cost scaling absorbs it, instead of inflating the cone
    std::vector<int> aux_of(static_cast<size_t>(sf.n_named), -1);
    std::vector<double> aux_scale(static_cast<size_t>(sf.n_named), 1.0);
    int n = sf.n_named;
    for (int v = 0; v < sf.n_named; ++v) {
        const double q = p.quadratic_costs()[static_cast<size_t>(v)];
        if (q <= 0) continue;
        aux_of[static_cast<size_t>(v)] = n++;
        double span = 0;
        if (std::isfinite(p.lower(v))) span = std::max(span, std::abs(p.lower(v)));
        if (std::isfinite(p.upper(v))) span = std::max(span, std::abs(p.upper(v)));
        aux_scale[static_cast<size_t>(v)] = std::max(1.0, q * span * span);
    }
    sf.n = n;

    sf.c = Eigen::VectorXd::Zero(n);
    for (int v = 0; v < sf.n_named; ++v) {
        sf.c(v) = p.linear_costs()[static_cast<size_t>(v)];
        if (aux_of[static_cast<size_t>(v)] >= 0)
            sf.c(aux_of[static_cast<size_t>(v)]) = aux_scale[static_cast<size_t>(v)];
    }
    sf.c0 = p.constant_cost();

    // equalities
    std::vector<Eigen::Triplet<double>> ta;
    const auto& eqs = p.equalities();
    sf.b.resize(static_cast<Eigen::Index>(eqs.size()));
    for (size_t r = 0; r < eqs.size(); ++r) {
        for (const auto& t : eqs[r].first.terms)
            ta.emplace_back(static_cast<int>(r), t.var, t.coeff);
        sf.b(static_cast<Eigen::Index>(r)) = eqs[r].second - eqs[r].first.constant;
    }
    sf.A.resize(static_cast<int>(eqs.size()), n);
    sf.A.setFromTriplets(ta.begin(), ta.end());

    // G rows: bounds, inequalities, cones, epigraph cones
    std::vector<Eigen::Triplet<double>> tg;
    std::vector<double> h;
    int row = 0;
    for (int v = 0; v < sf.n_named; ++v) {
        if (std::isfinite(p.lower(v))) {
            tg.emplace_back(row, v, -1.0);
            h.push_back(-p.lower(v));
            sf.lp_labels.push_back("lb:" + p.name(v));
            ++row;
        }
        if (std::isfinite(p.upper(v))) {
            tg.emplace_back(row, v, 1.0);
            h.push_back(p.upper(v));
            sf.lp_labels.push_back("ub:" + p.name(v));
            ++row;
        }
    }
    const auto& ineqs = p.inequalities();
    for (size_t k = 0; k < ineqs.size(); ++k) {
        const double sgn = ineqs[k].sense == Sense::le ? 1.0 : -1.0;
        for (const auto& t : ineqs[k].expr.terms) tg.emplace_back(row, t.var, sgn * t.coeff);
        h.push_back(sgn * (ineqs[k].rhs - ineqs[k].expr.constant));
        sf.lp_labels.push_back("ineq:" + std::to_string(k));
        ++row;
    }
    sf.lp_rows = row;

    // s-block of a cone member expression e(x): s = e(x), so G = -coeffs, h = constant
    const auto& cones = p.cones();
    for (size_t k = 0; k < cones.size(); ++k) {
        for (const auto& m : cones[k]) {
            for (const auto& t : m.terms) tg.emplace_back(row, t.var, -t.coeff);
            h.push_back(m.constant);
            ++row;
        }
        sf.soc_dims.push_back(static_cast<int>(cones[k].size()));
        sf.cone_labels.push_back("cone:" + std::to_string(k));
    }
    // u >= (c2/k) v^2 as ||(2 sqrt(c2/k) v, u - 1)|| <= u + 1, the
    // objective carrying k u so the total stays exactly c2 v^2
    for (int v = 0; v < sf.n_named; ++v) {
        const int u = aux_of[static_cast<size_t>(v)];
        if (u < 0) continue;
        const double w = 2.0 * std::sqrt(p.quadratic_costs()[static_cast<size_t>(v)] /
                                         aux_scale[static_cast<size_t>(v)]);
        tg.emplace_back(row, u, -1.0);
        h.push_back(1.0);
        tg.emplace_back(row + 1, v, -w);
        h.push_back(0.0);
        tg.emplace_back(row + 2, u, -1.0);
        h.push_back(-1.0);
        row += 3;
        sf.soc_dims.push_back(3);
        sf.cone_labels.push_back("epi:" + p.name(v));
    }

    // a lone equality-only program still needs one inequality row for the
    // interior-point iteration to have a cone to walk in
    if (row == 0) {
        h.push_back(1.0);
        sf.lp_labels.push_back("aux:feasibility");
        sf.lp_rows = 1;
        row = 1;
    }

    sf.G.resize(row, n);
    sf.G.setFromTriplets(tg.begin(), tg.end());
    sf.h = Eigen::Map<Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
    return sf;
}

// Max violations of the optimality system at (x, y, z), computed from the
// program data alone. Primal and dual feasibility are normalized by the data
// magnitudes, the gap by the objective.
inline Residuals residual_triple(const StandardForm& sf, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& y, const Eigen::VectorXd& z) {
    Residuals r;
    const double bnorm = sf.b.size() ? sf.b.cwiseAbs().maxCoeff() : 0.0;
    const double hnorm = sf.h.size() ? sf.h.cwiseAbs().maxCoeff() : 0.0;
    const double cnorm = sf.c.size() ? sf.c.cwiseAbs().maxCoeff() : 0.0;

    double pviol = 0;
    if (sf.b.size()) pviol = (sf.A * x - sf.b).cwiseAbs().maxCoeff();
    const Eigen::VectorXd s = sf.h - sf.G * x;
    for (int i = 0; i < sf.lp_rows; ++i) pviol = std::max(pviol, -s(i));
    int off = sf.lp_rows;
    for (int d : sf.soc_dims) {
        pviol = std::max(pviol, s.segment(off + 1, d - 1).norm() - s(off));
        off += d;
    }
    r.primal_feas = std::max(0.0, pviol) / (1.0 + std::max(bnorm, hnorm));

    Eigen::VectorXd stat = sf.c;
    if (y.size()) stat += sf.A.transpose() * y;
    stat += sf.G.transpose() * z;
    double dviol = stat.cwiseAbs().maxCoeff();
    for (int i = 0; i < sf.lp_rows; ++i) dviol = std::max(dviol, -z(i));
    off = sf.lp_rows;
    for (int d : sf.soc_dims) {
        dviol = std::max(dviol, z.segment(off + 1, d - 1).norm() - z(off));
        off += d;
    }
    r.dual_feas = std::max(0.0, dviol) / (1.0 + cnorm);

    const double obj = sf.c.dot(x) + sf.c0;
    r.gap = std::abs(s.dot(z)) / (1.0 + std::abs(obj));
    return r;
}

}  // namespace detail

inline Residuals kkt_residuals(const ConicProgram& prog, const ConicSolution& sol) {
    detail::StandardForm sf = detail::compile(prog);
    if (sol.x.size() != sf.n || sol.y.size() != sf.A.rows() || sol.z.size() != sf.G.rows())
        throw DimensionMismatch("solution dimensions do not match the program");
    return detail::residual_triple(sf, sol.x, sol.y, sol.z);
}

inline std::string dump(const ConicProgram& p) {
    std::ostringstream os;
    os << "variables " << p.n_variables() << "\n";
    for (int v = 0; v < p.n_variables(); ++v) {
        os << "  " << p.name(v);
        if (std::isfinite(p.lower(v))) os << " >= " << p.lower(v);
        if (std::isfinite(p.upper(v))) os << " <= " << p.upper(v);
        const double q = p.quadratic_costs()[static_cast<size_t>(v)];
        const double l = p.linear_costs()[static_cast<size_t>(v)];
        if (q != 0 || l != 0) os << "  cost " << q << "*x^2 + " << l << "*x";
        os << "\n";
    }
    auto expr = [&](const LinExpr& e) {
        std::ostringstream t;
        for (const auto& term : e.terms) t << (term.coeff < 0 ? " - " : " + ")
                                           << std::abs(term.coeff) << " " << p.name(term.var);
        if (e.constant != 0) t << (e.constant < 0 ? " - " : " + ") << std::abs(e.constant);
        return t.str();
    };
    os << "equalities " << p.equalities().size() << "\n";
    for (const auto& [e, rhs] : p.equalities()) os << " " << expr(e) << " == " << rhs << "\n";
    os << "inequalities " << p.inequalities().size() << "\n";
    for (const auto& iq : p.inequalities())
        os << " " << expr(iq.expr) << (iq.sense == Sense::le ? " <= " : " >= ") << iq.rhs << "\n";
    os << "cones " << p.cones().size() << "\n";
    for (const auto& members : p.cones()) {
        os << "  ||";
        for (size_t j = 1; j < members.size(); ++j) os << (j > 1 ? ";" : "") << expr(members[j]);
        os << " || <=" << expr(members[0]) << "\n";
    }
    return os.str();
}

}  // namespace vsopf
