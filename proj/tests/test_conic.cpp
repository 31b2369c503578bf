#include <catch2/catch_amalgamated.hpp>

#include "vsopf/conic.hpp"
#include "vsopf/solver.hpp"

using namespace vsopf;

namespace {

// min x  s.t.  ||(y, z)|| <= x,  y = 3,  z = 4
ConicProgram pythagorean() {
    ConicProgram p;
    const int x = p.add_variable("x");
    const int y = p.add_variable("y");
    const int z = p.add_variable("z");
    p.add_linear_cost(x, 1.0);
    p.add_equality(LinExpr(y, 1.0), 3.0);
    p.add_equality(LinExpr(z, 1.0), 4.0);
    p.add_cone({LinExpr(x, 1.0), LinExpr(y, 1.0), LinExpr(z, 1.0)});
    return p;
}

}  // namespace

TEST_CASE("hypotenuse cone program") {
    ConicProgram p = pythagorean();
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(sol.objective_value == Catch::Approx(5.0).epsilon(1e-7));
    CHECK(sol.value("x") == Catch::Approx(5.0).epsilon(1e-7));
    CHECK(sol.value("y") == Catch::Approx(3.0).margin(1e-7));

    Residuals res = kkt_residuals(p, sol);
    CHECK(res.primal_feas <= 1e-6);
    CHECK(res.dual_feas <= 1e-6);
    CHECK(res.gap <= 1e-6);
}

TEST_CASE("single linear bound") {
    ConicProgram p;
    const int x = p.add_variable("x", 1.0);
    p.add_linear_cost(x, 1.0);
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(sol.value("x") == Catch::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("contradictory inequalities are infeasible") {
    ConicProgram p;
    const int x = p.add_variable("x");
    p.add_linear_cost(x, 1.0);
    p.add_inequality(LinExpr(x, 1.0), Sense::ge, 1.0);
    p.add_inequality(LinExpr(x, 1.0), Sense::le, 0.0);
    ConicSolution sol = solve(p);
    CHECK(sol.status == SolveStatus::infeasible);
}

TEST_CASE("unbounded descent is detected") {
    ConicProgram p;
    const int x = p.add_variable("x", 0.0);
    p.add_linear_cost(x, -1.0);
    ConicSolution sol = solve(p);
    CHECK(sol.status == SolveStatus::unbounded);
}

TEST_CASE("hand-built optimal pair passes the independent check") {
    ConicProgram p = pythagorean();
    ConicSolution sol;
    sol.x = Eigen::Vector3d(5.0, 3.0, 4.0);
    sol.y = Eigen::Vector2d(-3.0 / 5.0, -4.0 / 5.0);
    sol.z = Eigen::Vector3d(1.0, -3.0 / 5.0, -4.0 / 5.0);
    Residuals res = kkt_residuals(p, sol);
    CHECK(res.primal_feas <= 1e-12);
    CHECK(res.dual_feas <= 1e-12);
    CHECK(res.gap <= 1e-12);
}

TEST_CASE("perturbed primal shows up as primal infeasibility") {
    ConicProgram p = pythagorean();
    ConicSolution sol;
    sol.x = Eigen::Vector3d(5.0, 3.0 + 1e-3, 4.0);
    sol.y = Eigen::Vector2d(-0.6, -0.8);
    sol.z = Eigen::Vector3d(1.0, -0.6, -0.8);
    Residuals res = kkt_residuals(p, sol);
    // violation 1e-3 on the y equality, normalized by 1 + max rhs magnitude
    CHECK(res.primal_feas == Catch::Approx(1e-3 / 5.0).epsilon(1e-6));
}

TEST_CASE("dimension mismatch is rejected") {
    ConicProgram p = pythagorean();
    ConicSolution sol;
    sol.x = Eigen::Vector2d(5.0, 3.0);
    sol.y = Eigen::Vector2d(-0.6, -0.8);
    sol.z = Eigen::Vector3d(1.0, -0.6, -0.8);
    CHECK_THROWS_AS(kkt_residuals(p, sol), DimensionMismatch);
}

TEST_CASE("quadratic objective through the epigraph") {
    // min x^2 - 2x + 3 on [-10, 10]: optimum 2 at x = 1
    ConicProgram p;
    const int x = p.add_variable("x", -10.0, 10.0);
    p.add_quadratic_cost(x, 1.0, -2.0, 3.0);
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(sol.value("x") == Catch::Approx(1.0).margin(1e-6));
    CHECK(sol.objective_value == Catch::Approx(2.0).margin(1e-6));
    Residuals res = kkt_residuals(p, sol);
    CHECK(res.worst() <= 1e-6);
}

TEST_CASE("quadratic cost against an active bound") {
    // min x^2 s.t. x >= 3: optimum 9 on the bound
    ConicProgram p;
    const int x = p.add_variable("x", 3.0);
    p.add_quadratic_cost(x, 1.0, 0.0, 0.0);
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(sol.value("x") == Catch::Approx(3.0).epsilon(1e-6));
    CHECK(sol.objective_value == Catch::Approx(9.0).epsilon(1e-6));
    CHECK(kkt_residuals(p, sol).worst() <= 1e-6);
}

TEST_CASE("cone with affine members") {
    // min x s.t. ||(x - 1, 2)|| <= 3: optimum x = 1 - sqrt(5)
    ConicProgram p;
    const int x = p.add_variable("x");
    p.add_linear_cost(x, 1.0);
    p.add_cone({LinExpr(3.0), LinExpr(x, 1.0).shift(-1.0), LinExpr(2.0)});
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(sol.value("x") == Catch::Approx(1.0 - std::sqrt(5.0)).epsilon(1e-6));
}

TEST_CASE("scaling the objective leaves the optimizer in place") {
    ConicProgram a = pythagorean();
    ConicProgram b = pythagorean();
    b.add_linear_cost(b.variable("x"), 6.0);  // total coefficient 7
    ConicSolution sa = solve(a);
    ConicSolution sb = solve(b);
    REQUIRE(sa.status == SolveStatus::optimal);
    REQUIRE(sb.status == SolveStatus::optimal);
    CHECK(std::abs(sa.value("x") - sb.value("x")) < 1e-6);
    CHECK(sb.objective_value == Catch::Approx(7.0 * sa.objective_value).epsilon(1e-6));
}

TEST_CASE("repeated solves are bitwise identical") {
    ConicProgram p = pythagorean();
    ConicSolution s1 = solve(p);
    ConicSolution s2 = solve(p);
    CHECK(s1.status == s2.status);
    CHECK(s1.objective_value == s2.objective_value);
    CHECK(s1.iterations == s2.iterations);
    CHECK((s1.x - s2.x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("badly scaled rows still solve cleanly") {
    ConicProgram p;
    const int x = p.add_variable("x");
    const int y = p.add_variable("y", 0.0);
    p.add_linear_cost(x, 1e4);
    p.add_inequality(LinExpr(x, 1e6), Sense::ge, 1e6);
    p.add_equality(LinExpr(y, 1.0).add(x, -1e-3), 0.0);
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(sol.value("x") == Catch::Approx(1.0).epsilon(1e-6));
    CHECK(sol.objective_value == Catch::Approx(1e4).epsilon(1e-6));
    CHECK(kkt_residuals(p, sol).worst() <= 1e-6);
}

TEST_CASE("mixed program with every row type") {
    // min u^2 + v  s.t.  u + v = 2,  v >= 0.5,  ||(u, v)|| <= 4
    ConicProgram p;
    const int u = p.add_variable("u");
    const int v = p.add_variable("v", 0.5);
    p.add_quadratic_cost(u, 1.0, 0.0, 0.0);
    p.add_linear_cost(v, 1.0);
    p.add_equality(LinExpr(u, 1.0).add(v, 1.0), 2.0);
    p.add_cone({LinExpr(4.0), LinExpr(u, 1.0), LinExpr(v, 1.0)});
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    // substituting v = 2 - u: min u^2 - u + 2, unconstrained optimum u = 1/2.
    // The objective is flat near the argmin, so a gap of 1e-8 only pins u to ~1e-4.
    CHECK(sol.value("u") == Catch::Approx(0.5).margin(1e-4));
    CHECK(sol.objective_value == Catch::Approx(1.75).epsilon(1e-6));
    CHECK(kkt_residuals(p, sol).worst() <= 1e-6);
}

TEST_CASE("duplicate variable names are rejected") {
    ConicProgram p;
    p.add_variable("x");
    CHECK_THROWS_AS(p.add_variable("x"), Error);
}

TEST_CASE("negative quadratic coefficients are rejected") {
    ConicProgram p;
    const int x = p.add_variable("x");
    CHECK_THROWS_AS(p.add_quadratic_cost(x, -1.0, 0.0, 0.0), Error);
}

TEST_CASE("program dump lists the pieces") {
    ConicProgram p = pythagorean();
    const std::string text = dump(p);
    CHECK(text.find("variables 3") != std::string::npos);
    CHECK(text.find("equalities 2") != std::string::npos);
    CHECK(text.find("cones 1") != std::string::npos);
    CHECK(text.find("x") != std::string::npos);
}

TEST_CASE("pure equality program solves through the fallback row") {
    ConicProgram p;
    const int x = p.add_variable("x");
    p.add_linear_cost(x, 1.0);
    p.add_equality(LinExpr(x, 1.0), 3.0);
    ConicSolution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(sol.value("x") == Catch::Approx(3.0).epsilon(1e-7));
}
