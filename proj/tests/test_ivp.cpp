#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "imd/ode_ivp.hpp"

using namespace imd;

TEST_CASE("scalar exponential decay hits the analytic solution") {
  IvpSpec s;
  s.rhs = [](double, const Vec& y) { return Vec(-y); };
  s.t0 = 0.0;
  s.t1 = 2.0;
  s.y0 = Vec::Constant(1, 1.0);
  s.rtol = 1e-9;
  s.atol = 1e-12;
  IvpSolution sol = integrate(s);
  CHECK(std::abs(sol.y.back()[0] - std::exp(-2.0)) < 1e-8);
  CHECK(sol.t.front() == 0.0);
  CHECK(sol.t.back() == 2.0);
  CHECK(sol.accepted == static_cast<int>(sol.t.size()) - 1);
}

TEST_CASE("dense output is accurate between accepted steps") {
  IvpSpec s;
  s.rhs = [](double, const Vec& y) {
    Vec dy(2);
    dy[0] = y[1];
    dy[1] = -y[0];
    return dy;
  };
  s.t0 = 0.0;
  s.t1 = 10.0;
  s.y0 = Vec(2);
  s.y0 << 1.0, 0.0;  // (cos t, -sin t)
  s.rtol = 1e-8;
  s.atol = 1e-11;
  IvpSolution sol = integrate(s);
  for (double t = 0.05; t < 10.0; t += 0.793) {
    Vec y = sol.eval(t);
    CHECK(std::abs(y[0] - std::cos(t)) < 1e-6);
    CHECK(std::abs(y[1] + std::sin(t)) < 1e-6);
  }
  // Dense output matches step endpoints exactly.
  for (std::size_t j = 0; j < sol.t.size(); j += 3)
    CHECK((sol.eval(sol.t[j]) - sol.y[j]).norm() == doctest::Approx(0.0));
}

TEST_CASE("backward integration works") {
  IvpSpec s;
  s.rhs = [](double, const Vec& y) { return Vec(y); };
  s.t0 = 0.0;
  s.t1 = -1.0;
  s.y0 = Vec::Constant(1, 1.0);
  s.rtol = 1e-9;
  s.atol = 1e-12;
  IvpSolution sol = integrate(s);
  CHECK(std::abs(sol.y.back()[0] - std::exp(-1.0)) < 1e-8);
  CHECK(std::abs(sol.eval(-0.5)[0] - std::exp(-0.5)) < 1e-7);
}

TEST_CASE("error scales down with the tolerance") {
  auto err_at = [](double rtol) {
    IvpSpec s;
    s.rhs = [](double t, const Vec& y) {
      return Vec(std::cos(t) * y);  // y = exp(sin t)
    };
    s.t0 = 0.0;
    s.t1 = 6.0;
    s.y0 = Vec::Constant(1, 1.0);
    s.rtol = rtol;
    s.atol = rtol * 1e-3;
    IvpSolution sol = integrate(s);
    return std::abs(sol.y.back()[0] - std::exp(std::sin(6.0)));
  };
  const double coarse = err_at(1e-4);
  const double fine = err_at(1e-9);
  CHECK(fine < coarse);
  CHECK(fine < 1e-7);
}

TEST_CASE("a hook that never rewrites is invisible") {
  IvpSpec base;
  base.rhs = [](double, const Vec& y) { return Vec(-y); };
  base.t0 = 0.0;
  base.t1 = 3.0;
  base.y0 = Vec::Constant(1, 1.0);
  base.rtol = 1e-8;
  base.atol = 1e-11;
  IvpSolution ref = integrate(base);

  IvpSpec hooked = base;
  int calls = 0;
  hooked.hook = [&calls](double, Vec&) {
    ++calls;
    return false;
  };
  IvpSolution sol = integrate(hooked);
  CHECK(calls > 0);
  CHECK(sol.events.empty());
  REQUIRE(sol.t.size() == ref.t.size());
  for (std::size_t j = 0; j < sol.t.size(); ++j)
    CHECK((sol.y[j] - ref.y[j]).norm() == doctest::Approx(0.0));
}

TEST_CASE("state rewrites are recorded and feed the next step") {
  // Clamp the decaying state from below; each accepted state at or below
  // the floor is rewritten, so the stored states never drop under it.
  const double floor_v = 0.5;
  IvpSpec s;
  s.rhs = [](double, const Vec& y) { return Vec(-y); };
  s.t0 = 0.0;
  s.t1 = 5.0;
  s.y0 = Vec::Constant(1, 1.0);
  s.rtol = 1e-8;
  s.atol = 1e-11;
  s.hook = [floor_v](double, Vec& y) {
    if (y[0] < floor_v) {
      y[0] = floor_v;
      return true;
    }
    return false;
  };
  IvpSolution sol = integrate(s);
  CHECK(!sol.events.empty());
  for (const Vec& y : sol.y) CHECK(y[0] >= floor_v - 1e-14);
  // The final stored state must be the clamped one (post-hook storage),
  // which also shows the integrator restarted from rewritten states.
  CHECK(sol.y.back()[0] == doctest::Approx(floor_v));
  for (const HookEvent& e : sol.events) {
    CHECK(e.post_norm == doctest::Approx(floor_v));
    CHECK(e.pre_norm < floor_v);
  }
}

TEST_CASE("non-finite right-hand side raises IntegrationError") {
  IvpSpec s;
  s.rhs = [](double, const Vec& y) { return Vec(y.array().square() * 1e3); };
  s.t0 = 0.0;
  s.t1 = 10.0;  // finite-time blowup
  s.y0 = Vec::Constant(1, 1.0);
  CHECK_THROWS_AS(integrate(s), IntegrationError);
}
