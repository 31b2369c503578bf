#pragma once

// Primal-dual interior-point solver for the compiled standard form
//   min c'x  s.t.  A x = b,  G x + s = h,  s in K,
// K a product of a nonnegative orthant and second-order cones. The method
// follows the homogeneous self-dual embedding: iterates (x, y, z, s, tau,
// kappa) with Nesterov-Todd scaling, a Mehrotra predictor-corrector step,
// and one quasidefinite LDLT factorization per iteration. Infeasible or
// unbounded programs surface as certificates instead of divergence.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "vsopf/conic.hpp"

namespace vsopf {

struct SolveSpec {
    double tol = 1e-8;
    int max_iter = 200;
};

namespace detail {

struct ConeLayout {
    int lp = 0;
    std::vector<int> dims;  // SOC block sizes
    std::vector<int> offs;  // SOC block offsets within the m-vector
    int m = 0;
    int degree() const { return lp + static_cast<int>(dims.size()); }
};

inline ConeLayout layout_of(const StandardForm& sf) {
    ConeLayout lay;
    lay.lp = sf.lp_rows;
    int off = sf.lp_rows;
    for (int d : sf.soc_dims) {
        lay.dims.push_back(d);
        lay.offs.push_back(off);
        off += d;
    }
    lay.m = off;
    return lay;
}

// shifts v along the cone identity until it is safely interior
inline void bring_to_cone(Eigen::VectorXd& v, const ConeLayout& lay) {
    double worst = 0;
    for (int i = 0; i < lay.lp; ++i) worst = std::max(worst, -v(i));
    for (size_t k = 0; k < lay.dims.size(); ++k) {
        const int o = lay.offs[k], d = lay.dims[k];
        worst = std::max(worst, v.segment(o + 1, d - 1).norm() - v(o));
    }
    if (worst < 0) return;  // already strictly interior
    const double a = 1.0 + worst;
    for (int i = 0; i < lay.lp; ++i) v(i) += a;
    for (size_t k = 0; k < lay.dims.size(); ++k) v(lay.offs[k]) += a;
}

// Jordan product u o v per cone
inline Eigen::VectorXd cone_product(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                                    const ConeLayout& lay) {
    Eigen::VectorXd out(lay.m);
    for (int i = 0; i < lay.lp; ++i) out(i) = u(i) * v(i);
    for (size_t k = 0; k < lay.dims.size(); ++k) {
        const int o = lay.offs[k], d = lay.dims[k];
        out(o) = u.segment(o, d).dot(v.segment(o, d));
        out.segment(o + 1, d - 1) =
            u(o) * v.segment(o + 1, d - 1) + v(o) * u.segment(o + 1, d - 1);
    }
    return out;
}

// solves lambda o x = v per cone; requires lambda strictly interior
inline bool cone_divide(const Eigen::VectorXd& lambda, const Eigen::VectorXd& v,
                        const ConeLayout& lay, Eigen::VectorXd& out) {
    out.resize(lay.m);
    for (int i = 0; i < lay.lp; ++i) {
        if (lambda(i) <= 0) return false;
        out(i) = v(i) / lambda(i);
    }
    for (size_t k = 0; k < lay.dims.size(); ++k) {
        const int o = lay.offs[k], d = lay.dims[k];
        const double a = lambda(o);
        const auto q = lambda.segment(o + 1, d - 1);
        const double rho = a * a - q.squaredNorm();
        if (rho <= 0 || a <= 0) return false;
        const double x0 = (a * v(o) - q.dot(v.segment(o + 1, d - 1))) / rho;
        out(o) = x0;
        out.segment(o + 1, d - 1) = (v.segment(o + 1, d - 1) - x0 * q) / a;
    }
    return true;
}

// identity element of the cone algebra
inline Eigen::VectorXd cone_identity(const ConeLayout& lay) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(lay.m);
    for (int i = 0; i < lay.lp; ++i) e(i) = 1.0;
    for (size_t k = 0; k < lay.dims.size(); ++k) e(lay.offs[k]) = 1.0;
    return e;
}

// largest step a with v + a dv still in the cone (capped)
inline double cone_step_limit(const Eigen::VectorXd& v, const Eigen::VectorXd& dv,
                              const ConeLayout& lay, double cap) {
    double amax = cap;
    for (int i = 0; i < lay.lp; ++i)
        if (dv(i) < 0) amax = std::min(amax, -v(i) / dv(i));
    for (size_t k = 0; k < lay.dims.size(); ++k) {
        const int o = lay.offs[k], d = lay.dims[k];
        const double s0 = v(o), ds0 = dv(o);
        const auto st = v.segment(o + 1, d - 1);
        const auto dst = dv.segment(o + 1, d - 1);
        if (ds0 < 0) amax = std::min(amax, -s0 / ds0);
        // boundary of s0^2 >= ||st||^2 along the ray
        const double qa = ds0 * ds0 - dst.squaredNorm();
        const double qb = 2.0 * (s0 * ds0 - st.dot(dst));
        const double qc = s0 * s0 - st.squaredNorm();
        if (qc < 0) return 0.0;  // already outside; caller treats as stall
        if (std::abs(qa) < 1e-300) {
            if (qb < 0) amax = std::min(amax, -qc / qb);
            continue;
        }
        const double disc = qb * qb - 4.0 * qa * qc;
        if (disc < 0) continue;  // never touches the boundary
        // q(0) >= 0, so the first positive root is where the ray leaves the cone
        const double sq = std::sqrt(disc);
        const double r1 = (-qb - sq) / (2.0 * qa);
        const double r2 = (-qb + sq) / (2.0 * qa);
        double root = kInfinity;
        if (r1 > 0) root = std::min(root, r1);
        if (r2 > 0) root = std::min(root, r2);
        if (root < kInfinity) amax = std::min(amax, root);
    }
    return amax;
}

// Nesterov-Todd scaling: W z = W^{-1} s = lambda, with dense blocks per SOC.
struct Scaling {
    Eigen::VectorXd lp_w;                       // diagonal entries
    std::vector<Eigen::MatrixXd> W, Winv, W2;   // per SOC block
    Eigen::VectorXd lambda;

    bool compute(const Eigen::VectorXd& s, const Eigen::VectorXd& z, const ConeLayout& lay) {
        lp_w.resize(lay.lp);
        lambda.resize(lay.m);
        for (int i = 0; i < lay.lp; ++i) {
            if (s(i) <= 0 || z(i) <= 0) return false;
            lp_w(i) = std::sqrt(s(i) / z(i));
            lambda(i) = std::sqrt(s(i) * z(i));
        }
        W.assign(lay.dims.size(), {});
        Winv.assign(lay.dims.size(), {});
        W2.assign(lay.dims.size(), {});
        for (size_t k = 0; k < lay.dims.size(); ++k) {
            const int o = lay.offs[k], d = lay.dims[k];
            const Eigen::VectorXd sb = s.segment(o, d), zb = z.segment(o, d);
            const double sn2 = sb(0) * sb(0) - sb.tail(d - 1).squaredNorm();
            const double zn2 = zb(0) * zb(0) - zb.tail(d - 1).squaredNorm();
            if (sn2 <= 0 || zn2 <= 0 || sb(0) <= 0 || zb(0) <= 0) return false;
            const double sn = std::sqrt(sn2), zn = std::sqrt(zn2);
            const Eigen::VectorXd sbar = sb / sn, zbar = zb / zn;
            const double gamma = std::sqrt((1.0 + sbar.dot(zbar)) / 2.0);
            Eigen::VectorXd wbar(d);
            wbar(0) = (sbar(0) + zbar(0)) / (2.0 * gamma);
            wbar.tail(d - 1) = (sbar.tail(d - 1) - zbar.tail(d - 1)) / (2.0 * gamma);
            const double eta = std::sqrt(sn / zn);

            Eigen::MatrixXd Wb(d, d), Wib(d, d);
            const Eigen::VectorXd wt = wbar.tail(d - 1);
            const Eigen::MatrixXd outer = wt * wt.transpose() / (1.0 + wbar(0));
            Wb(0, 0) = wbar(0);
            Wb.block(0, 1, 1, d - 1) = wt.transpose();
            Wb.block(1, 0, d - 1, 1) = wt;
            Wb.block(1, 1, d - 1, d - 1) =
                Eigen::MatrixXd::Identity(d - 1, d - 1) + outer;
            // W-bar is hyperbolic-orthogonal, so its inverse is J W-bar J
            Wib = Wb;
            Wib.block(0, 1, 1, d - 1) = -wt.transpose();
            Wib.block(1, 0, d - 1, 1) = -wt;
            W[k] = eta * Wb;
            Winv[k] = Wib / eta;
            // W^2 = eta^2 (2 wbar wbar' - J)
            Eigen::MatrixXd J = -Eigen::MatrixXd::Identity(d, d);
            J(0, 0) = 1.0;
            W2[k] = eta * eta * (2.0 * wbar * wbar.transpose() - J);
            lambda.segment(o, d) = W[k] * zb;
        }
        return true;
    }

    Eigen::VectorXd apply_W(const Eigen::VectorXd& v, const ConeLayout& lay) const {
        Eigen::VectorXd out(lay.m);
        for (int i = 0; i < lay.lp; ++i) out(i) = lp_w(i) * v(i);
        for (size_t k = 0; k < lay.dims.size(); ++k)
            out.segment(lay.offs[k], lay.dims[k]) =
                W[k] * v.segment(lay.offs[k], lay.dims[k]);
        return out;
    }
    Eigen::VectorXd apply_Winv(const Eigen::VectorXd& v, const ConeLayout& lay) const {
        Eigen::VectorXd out(lay.m);
        for (int i = 0; i < lay.lp; ++i) out(i) = v(i) / lp_w(i);
        for (size_t k = 0; k < lay.dims.size(); ++k)
            out.segment(lay.offs[k], lay.dims[k]) =
                Winv[k] * v.segment(lay.offs[k], lay.dims[k]);
        return out;
    }
    Eigen::VectorXd apply_W2(const Eigen::VectorXd& v, const ConeLayout& lay) const {
        Eigen::VectorXd out(lay.m);
        for (int i = 0; i < lay.lp; ++i) out(i) = lp_w(i) * lp_w(i) * v(i);
        for (size_t k = 0; k < lay.dims.size(); ++k)
            out.segment(lay.offs[k], lay.dims[k]) =
                W2[k] * v.segment(lay.offs[k], lay.dims[k]);
        return out;
    }
};

// Quasidefinite KKT system
//   [ dI   A'      G'    ]
//   [ A   -dI      0     ]
//   [ G    0   -W^2 - dI ]
// factored once per iteration; solves are refined against the
// unregularized matrix.
class KktSystem {
public:
    KktSystem(const StandardForm& sf, const ConeLayout& lay)
        : n_(sf.n), p_(static_cast<int>(sf.A.rows())), m_(lay.m), lay_(lay), A_(sf.A), G_(sf.G) {
        sign_.resize(n_ + p_ + m_);
        sign_.head(n_).setOnes();
        sign_.tail(p_ + m_).setConstant(-1.0);
    }

    bool factorize(const Scaling& sc) {
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<size_t>(A_.nonZeros() + G_.nonZeros() + n_ + p_ + m_ + 16 * static_cast<int>(lay_.dims.size())));
        for (int i = 0; i < n_; ++i) t.emplace_back(i, i, kReg);
        for (int o = 0; o < A_.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(A_, o); it; ++it)
                t.emplace_back(it.col(), n_ + static_cast<int>(it.row()), it.value());  // A' block
        for (int i = 0; i < p_; ++i) t.emplace_back(n_ + i, n_ + i, -kReg);
        for (int o = 0; o < G_.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(G_, o); it; ++it)
                t.emplace_back(it.col(), n_ + p_ + static_cast<int>(it.row()), it.value());
        const int zoff = n_ + p_;
        for (int i = 0; i < lay_.lp; ++i)
            t.emplace_back(zoff + i, zoff + i, -sc.lp_w(i) * sc.lp_w(i) - kReg);
        for (size_t k = 0; k < lay_.dims.size(); ++k) {
            const int o = zoff + lay_.offs[k], d = lay_.dims[k];
            for (int i = 0; i < d; ++i)
                for (int j = i; j < d; ++j)
                    t.emplace_back(o + i, o + j, -sc.W2[k](i, j) - (i == j ? kReg : 0.0));
        }
        K_.resize(n_ + p_ + m_, n_ + p_ + m_);
        K_.setFromTriplets(t.begin(), t.end());
        if (!analyzed_) {
            ldlt_.analyzePattern(K_);
            analyzed_ = true;
        }
        // retry with stronger shifts when the pivots collapse; the refinement
        // in solve() works against the unshifted matrix either way
        for (double shift : {0.0, 1e-9, 1e-7, 1e-5}) {
            if (shift > 0.0) {
                Eigen::SparseMatrix<double> Ks = K_;
                for (int i = 0; i < n_ + p_ + m_; ++i) Ks.coeffRef(i, i) += shift * sign_(i);
                ldlt_.factorize(Ks);
            } else {
                ldlt_.factorize(K_);
            }
            if (ldlt_.info() == Eigen::Success) return true;
        }
        return false;
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        Eigen::VectorXd u = ldlt_.solve(rhs);
        const double rn = 1.0 + rhs.cwiseAbs().maxCoeff();
        auto residual = [&](const Eigen::VectorXd& v) {
            // against the unregularized matrix
            return (rhs - (K_.selfadjointView<Eigen::Upper>() * v - kReg * sign_.cwiseProduct(v)))
                .eval();
        };
        Eigen::VectorXd best = u;
        double best_err = residual(u).cwiseAbs().maxCoeff();
        for (int round = 0; round < 8 && best_err > 1e-13 * rn; ++round) {
            u += ldlt_.solve(residual(u));
            const double err = residual(u).cwiseAbs().maxCoeff();
            if (err >= best_err) break;  // refinement stopped contracting
            best = u;
            best_err = err;
        }
        return best;
    }

    static constexpr double kReg = 1e-12;

private:
    int n_, p_, m_;
    ConeLayout lay_;
    const Eigen::SparseMatrix<double>& A_;
    const Eigen::SparseMatrix<double>& G_;
    Eigen::SparseMatrix<double> K_;
    Eigen::VectorXd sign_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Upper> ldlt_;
    bool analyzed_ = false;
};

struct Equilibration {
    Eigen::VectorXd dcol, da, dg;
    double sigma_c = 1.0;
};

// Ruiz equilibration; rows of one SOC block share a scale so the cone
// geometry survives.
inline Equilibration equilibrate(StandardForm& sf, const ConeLayout& lay) {
    Equilibration eq;
    const int n = sf.n, p = static_cast<int>(sf.A.rows()), m = lay.m;
    eq.dcol = Eigen::VectorXd::Ones(n);
    eq.da = Eigen::VectorXd::Ones(p);
    eq.dg = Eigen::VectorXd::Ones(m);

    for (int pass = 0; pass < 10; ++pass) {
        Eigen::VectorXd ra = Eigen::VectorXd::Zero(p), rg = Eigen::VectorXd::Zero(m);
        for (int o = 0; o < sf.A.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, o); it; ++it)
                ra(it.row()) = std::max(ra(it.row()), std::abs(it.value()));
        for (int o = 0; o < sf.G.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.G, o); it; ++it)
                rg(it.row()) = std::max(rg(it.row()), std::abs(it.value()));
        for (size_t k = 0; k < lay.dims.size(); ++k) {
            const int o = lay.offs[k], d = lay.dims[k];
            const double blockmax = rg.segment(o, d).maxCoeff();
            rg.segment(o, d).setConstant(blockmax);
        }
        auto fac = [](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 1.0; };
        for (int i = 0; i < p; ++i) ra(i) = fac(ra(i));
        for (int i = 0; i < m; ++i) rg(i) = fac(rg(i));

        for (int o = 0; o < sf.A.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, o); it; ++it)
                it.valueRef() *= ra(it.row());
        for (int o = 0; o < sf.G.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.G, o); it; ++it)
                it.valueRef() *= rg(it.row());
        eq.da = eq.da.cwiseProduct(ra);
        eq.dg = eq.dg.cwiseProduct(rg);

        Eigen::VectorXd cn = Eigen::VectorXd::Zero(n);
        for (int o = 0; o < sf.A.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, o); it; ++it)
                cn(it.col()) = std::max(cn(it.col()), std::abs(it.value()));
        for (int o = 0; o < sf.G.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.G, o); it; ++it)
                cn(it.col()) = std::max(cn(it.col()), std::abs(it.value()));
        for (int j = 0; j < n; ++j) cn(j) = fac(cn(j));
        for (int o = 0; o < sf.A.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.A, o); it; ++it)
                it.valueRef() *= cn(it.col());
        for (int o = 0; o < sf.G.outerSize(); ++o)
            for (Eigen::SparseMatrix<double>::InnerIterator it(sf.G, o); it; ++it)
                it.valueRef() *= cn(it.col());
        eq.dcol = eq.dcol.cwiseProduct(cn);
    }
    sf.b = eq.da.cwiseProduct(sf.b);
    sf.h = eq.dg.cwiseProduct(sf.h);
    sf.c = eq.dcol.cwiseProduct(sf.c);
    const double cmax = sf.c.size() ? sf.c.cwiseAbs().maxCoeff() : 0.0;
    eq.sigma_c = cmax > 1.0 ? 1.0 / cmax : 1.0;
    sf.c *= eq.sigma_c;
    return eq;
}

}  // namespace detail

inline ConicSolution solve(const ConicProgram& prog, const SolveSpec& spec = {}) {
    using namespace detail;

    ConicSolution sol;
    const StandardForm original = compile(prog);
    StandardForm sf = original;  // scaled working copy
    const ConeLayout lay = layout_of(sf);
    const Equilibration eq = equilibrate(sf, lay);

    const int n = sf.n, p = static_cast<int>(sf.A.rows()), m = lay.m;
    const Eigen::VectorXd e = cone_identity(lay);
    const double degree = lay.degree();

    KktSystem kkt(sf, lay);

    // starting point from two least-squares-style solves with W = I
    Eigen::VectorXd x, y, z, s;
    {
        Scaling unit;
        Eigen::VectorXd ones_s = Eigen::VectorXd::Ones(m), ones_z = Eigen::VectorXd::Ones(m);
        for (size_t k = 0; k < lay.dims.size(); ++k) {
            ones_s.segment(lay.offs[k] + 1, lay.dims[k] - 1).setZero();
            ones_z.segment(lay.offs[k] + 1, lay.dims[k] - 1).setZero();
        }
        if (!unit.compute(ones_s, ones_z, lay)) {
            sol.status = SolveStatus::numerical_failure;
            return sol;
        }
        if (!kkt.factorize(unit)) {
            sol.status = SolveStatus::numerical_failure;
            return sol;
        }
        Eigen::VectorXd r1(n + p + m);
        r1.head(n).setZero();
        r1.segment(n, p) = sf.b;
        r1.tail(m) = sf.h;
        const Eigen::VectorXd u1 = kkt.solve(r1);
        x = u1.head(n);
        s = -u1.tail(m);
        bring_to_cone(s, lay);

        Eigen::VectorXd r2(n + p + m);
        r2.head(n) = -sf.c;
        r2.segment(n, p).setZero();
        r2.tail(m).setZero();
        const Eigen::VectorXd u2 = kkt.solve(r2);
        y = u2.segment(n, p);
        z = u2.tail(m);
        bring_to_cone(z, lay);
    }
    double tau = 1.0, kappa = 1.0;

    auto unscaled_point = [&](Eigen::VectorXd& xu, Eigen::VectorXd& yu, Eigen::VectorXd& zu) {
        xu = eq.dcol.cwiseProduct(x) / tau;
        yu = eq.da.cwiseProduct(y) / (eq.sigma_c * tau);
        zu = eq.dg.cwiseProduct(z) / (eq.sigma_c * tau);
    };

    Residuals best_res;
    best_res.primal_feas = best_res.dual_feas = best_res.gap = kInfinity;
    Eigen::VectorXd best_x, best_y, best_z;
    int stall = 0;

    auto finish = [&](SolveStatus status, int iters) {
        sol.status = status;
        sol.iterations = iters;
        if (best_x.size()) {
            sol.x = best_x;
            sol.y = best_y;
            sol.z = best_z;
            sol.residuals = best_res;
        } else {
            unscaled_point(sol.x, sol.y, sol.z);
            sol.residuals = residual_triple(original, sol.x, sol.y, sol.z);
        }
        sol.objective_value = original.c.dot(sol.x) + original.c0;
        for (int v = 0; v < original.n_named; ++v) sol.primal[prog.name(v)] = sol.x(v);
        for (int r = 0; r < original.lp_rows; ++r) sol.dual[original.lp_labels[static_cast<size_t>(r)]] = sol.z(r);
        int off = original.lp_rows;
        for (size_t k = 0; k < original.soc_dims.size(); ++k) {
            for (int j = 0; j < original.soc_dims[k]; ++j)
                sol.dual[original.cone_labels[k] + ":" + std::to_string(j)] = sol.z(off + j);
            off += original.soc_dims[k];
        }
        for (size_t r = 0; r < prog.equalities().size(); ++r)
            sol.dual["eq:" + std::to_string(r)] = sol.y(static_cast<Eigen::Index>(r));
        return sol;
    };

    // a dual ray (b'y + h'z < 0 with A'y + G'z = 0, z in the dual cone) proves
    // primal infeasibility; a primal ray (c'x < 0 with Ax = 0, Gx + s = 0)
    // proves unboundedness; ratios are judged relative to the ray's own scale
    auto certificate = [&](double ratio_tol) -> SolveStatus {
        const double poff = -(sf.b.dot(y) + sf.h.dot(z));
        if (poff > 1e-10 * std::max(1.0, z.cwiseAbs().maxCoeff())) {
            const Eigen::VectorXd res = (sf.A.transpose() * y + sf.G.transpose() * z) / poff;
            Eigen::VectorXd zc = z / poff;
            double viol = res.cwiseAbs().maxCoeff();
            for (int i = 0; i < lay.lp; ++i) viol = std::max(viol, -zc(i));
            for (size_t k = 0; k < lay.dims.size(); ++k)
                viol = std::max(viol, zc.segment(lay.offs[k] + 1, lay.dims[k] - 1).norm() -
                                          zc(lay.offs[k]));
            if (viol <= ratio_tol) return SolveStatus::infeasible;
        }
        const double uoff = -sf.c.dot(x);
        if (uoff > 1e-10 * std::max(1.0, x.cwiseAbs().maxCoeff())) {
            double viol = p ? (sf.A * x).cwiseAbs().maxCoeff() / uoff : 0.0;
            viol = std::max(viol, (sf.G * x + s).cwiseAbs().maxCoeff() / uoff);
            if (viol <= ratio_tol) return SolveStatus::unbounded;
        }
        return SolveStatus::numerical_failure;
    };

    Scaling sc;
    for (int iter = 0; iter <= spec.max_iter; ++iter) {
        // residuals of the embedding
        const Eigen::VectorXd rx = sf.A.transpose() * y + sf.G.transpose() * z + sf.c * tau;
        const Eigen::VectorXd ry = sf.A * x - sf.b * tau;
        const Eigen::VectorXd rz = s + sf.G * x - sf.h * tau;
        const double rt = kappa + sf.c.dot(x) + sf.b.dot(y) + sf.h.dot(z);
        const double mu = (s.dot(z) + tau * kappa) / (degree + 1.0);

        // convergence is judged on the original, unscaled data
        Eigen::VectorXd xu, yu, zu;
        unscaled_point(xu, yu, zu);
        const Residuals res = residual_triple(original, xu, yu, zu);
        if (res.worst() < 0.99 * best_res.worst())
            stall = 0;  // still making real progress
        else
            ++stall;
        if (res.worst() < best_res.worst()) {
            best_res = res;
            best_x = xu;
            best_y = yu;
            best_z = zu;
        }
        if (res.primal_feas <= spec.tol && res.dual_feas <= spec.tol && res.gap <= spec.tol)
            return finish(SolveStatus::optimal, iter);
        // near the numerical floor the Newton directions turn into noise; once
        // progress stops, accept the best iterate if it is close enough
        if (stall >= 10 && best_res.worst() <= 100.0 * spec.tol)
            return finish(SolveStatus::optimal, iter);

        // certificates of infeasibility / unboundedness
        if (iter > 0) {
            const SolveStatus cert = certificate(spec.tol * 10);
            if (cert != SolveStatus::numerical_failure) return finish(cert, iter);
        }
        if (iter == spec.max_iter) break;
        if (!std::isfinite(mu) || tau < 1e-12) break;

        if (!sc.compute(s, z, lay)) break;
        if (!kkt.factorize(sc)) break;

        // constant part of the step equations
        Eigen::VectorXd rc(n + p + m);
        rc.head(n) = -sf.c;
        rc.segment(n, p) = sf.b;
        rc.tail(m) = sf.h;
        const Eigen::VectorXd u2 = kkt.solve(rc);
        const double den = sf.c.dot(u2.head(n)) + sf.b.dot(u2.segment(n, p)) +
                           sf.h.dot(u2.tail(m)) - kappa / tau;
        if (std::abs(den) < 1e-300) break;

        auto direction = [&](double resid_scale, const Eigen::VectorXd& d_target,
                             double dk_target, Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                             Eigen::VectorXd& dz, Eigen::VectorXd& ds, double& dtau,
                             double& dkappa) -> bool {
            Eigen::VectorXd lam_div;
            if (!cone_divide(sc.lambda, d_target, lay, lam_div)) return false;
            const Eigen::VectorXd wld = sc.apply_W(lam_div, lay);
            Eigen::VectorXd r1(n + p + m);
            r1.head(n) = -resid_scale * rx;
            r1.segment(n, p) = -resid_scale * ry;
            r1.tail(m) = -resid_scale * rz + wld;
            const Eigen::VectorXd u1 = kkt.solve(r1);
            const double num = -resid_scale * rt + dk_target / tau - sf.c.dot(u1.head(n)) -
                               sf.b.dot(u1.segment(n, p)) - sf.h.dot(u1.tail(m));
            dtau = num / den;
            dx = u1.head(n) + dtau * u2.head(n);
            dy = u1.segment(n, p) + dtau * u2.segment(n, p);
            dz = u1.tail(m) + dtau * u2.tail(m);
            ds = -wld - sc.apply_W2(dz, lay);
            dkappa = -(dk_target + kappa * dtau) / tau;
            return true;
        };

        // predictor
        Eigen::VectorXd dxa, dya, dza, dsa;
        double dta, dka;
        const Eigen::VectorXd ll = cone_product(sc.lambda, sc.lambda, lay);
        if (!direction(1.0, ll, tau * kappa, dxa, dya, dza, dsa, dta, dka)) break;

        double amax = cone_step_limit(s, dsa, lay, 10.0);
        amax = std::min(amax, cone_step_limit(z, dza, lay, 10.0));
        if (dta < 0) amax = std::min(amax, -tau / dta);
        if (dka < 0) amax = std::min(amax, -kappa / dka);
        const double alpha_aff = std::min(1.0, amax);
        const double sigma =
            std::clamp((1.0 - alpha_aff) * (1.0 - alpha_aff) * (1.0 - alpha_aff), 1e-8, 0.999);

        // corrector
        const Eigen::VectorXd corr =
            cone_product(sc.apply_Winv(dsa, lay), sc.apply_W(dza, lay), lay);
        const Eigen::VectorXd d_comb = ll + corr - sigma * mu * e;
        const double dk_comb = tau * kappa + dta * dka - sigma * mu;
        Eigen::VectorXd dx, dy, dz, ds;
        double dt, dk;
        if (!direction(1.0 - sigma, d_comb, dk_comb, dx, dy, dz, ds, dt, dk)) break;

        double step = cone_step_limit(s, ds, lay, 10.0);
        step = std::min(step, cone_step_limit(z, dz, lay, 10.0));
        if (dt < 0) step = std::min(step, -tau / dt);
        if (dk < 0) step = std::min(step, -kappa / dk);
        step = std::min(1.0, 0.98 * step);
        if (step <= 1e-14) break;

        x += step * dx;
        y += step * dy;
        z += step * dz;
        s += step * ds;
        tau += step * dt;
        kappa += step * dk;
    }

    // iteration ended without a strict exit: the best point seen may still be
    // acceptable under the reduced-accuracy criterion, and a collapsed iterate
    // may still carry a usable certificate
    if (best_res.worst() <= 100.0 * spec.tol) return finish(SolveStatus::optimal, spec.max_iter);
    const SolveStatus cert = certificate(1e-4);
    if (cert != SolveStatus::numerical_failure) return finish(cert, spec.max_iter);
    return finish(SolveStatus::numerical_failure, spec.max_iter);
}

}  // namespace vsopf
