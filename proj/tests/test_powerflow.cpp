#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dvsim/powerflow.hpp"
#include "fixtures.hpp"

using namespace dvsim;
using namespace fixtures;

namespace {

// Brute-force two-bus oracle: nested grid refinement over (|V|, angle)
// minimizing the power mismatch at the load bus. Never touches the solver.
Complex two_bus_oracle(Complex v_slack, Complex z, double p_load, double q_load) {
  auto mismatch = [&](double vm, double va) {
    Complex v = std::polar(vm, va);
    Complex i = (v_slack - v) / z;
    Complex s = v * std::conj(i);  // power delivered into the bus
    return std::abs(s - Complex(p_load, q_load));
  };
  double best_vm = 1.0, best_va = 0.0;
  double span_vm = 0.8, span_va = 1.0;
  for (int round = 0; round < 12; ++round) {
    double lo_vm = std::max(0.05, best_vm - span_vm);
    double hi_vm = best_vm + span_vm;
    double lo_va = best_va - span_va, hi_va = best_va + span_va;
    double best = 1e18;
    double pick_vm = best_vm, pick_va = best_va;
    for (int i = 0; i <= 60; ++i) {
      for (int j = 0; j <= 60; ++j) {
        double vm = lo_vm + (hi_vm - lo_vm) * i / 60.0;
        double va = lo_va + (hi_va - lo_va) * j / 60.0;
        double m = mismatch(vm, va);
        if (m < best) {
          best = m;
          pick_vm = vm;
          pick_va = va;
        }
      }
    }
    best_vm = pick_vm;
    best_va = pick_va;
    span_vm *= 0.12;
    span_va *= 0.12;
  }
  return std::polar(best_vm, best_va);
}

}  // namespace

TEST_CASE("zero-injection load bus sits at the slack phasor") {
  grid::GridCase c = two_bus(0.0, 0.1, 0.0, 0.0);
  auto sol = pf::solve_powerflow(c);
  REQUIRE(sol.converged);
  CHECK(std::abs(sol.voltage(2) - Complex(1.0, 0.0)) < 1e-12);
}

TEST_CASE("two-bus solution matches the brute-force oracle") {
  grid::GridCase c = two_bus(0.0, 0.1, 0.5, 0.2);
  auto sol = pf::solve_powerflow(c);
  REQUIRE(sol.converged);
  Complex expect = two_bus_oracle(Complex(1.0, 0.0), Complex(0.0, 0.1), 0.5, 0.2);
  CHECK(std::abs(std::abs(sol.voltage(2)) - std::abs(expect)) < 1e-6);
  CHECK(std::abs(std::arg(sol.voltage(2)) - std::arg(expect)) < 1e-6);

  grid::GridCase r = two_bus(0.03, 0.12, 0.4, 0.15);
  auto sol_r = pf::solve_powerflow(r);
  REQUIRE(sol_r.converged);
  Complex expect_r = two_bus_oracle(Complex(1.0, 0.0), Complex(0.03, 0.12), 0.4, 0.15);
  CHECK(std::abs(std::abs(sol_r.voltage(2)) - std::abs(expect_r)) < 1e-6);
}

TEST_CASE("ieee30 base case converges fast inside the sanity band") {
  grid::GridCase c = ieee30();
  auto sol = pf::solve_powerflow(c);
  REQUIRE(sol.converged);
  CHECK(sol.iterations <= 10);
  CHECK(sol.mismatch <= 1e-8);
  for (BusId b : sol.bus_order) {
    double vm = std::abs(sol.voltage(b));
    CHECK(vm >= 0.94);
    CHECK(vm <= 1.10);
  }
  // Slack and PV buses hold their setpoints.
  CHECK(std::abs(sol.voltage(1)) == doctest::Approx(1.06).epsilon(1e-10));
  CHECK(std::abs(sol.voltage(13)) == doctest::Approx(1.071).epsilon(1e-10));
}

TEST_CASE("power conservation at the converged solution") {
  grid::GridCase c = ieee30();
  pf::SolveOptions opt;
  auto sol = pf::solve_powerflow(c, opt);
  REQUIRE(sol.converged);

  Complex total_injection(0.0, 0.0);
  for (BusId b : sol.bus_order) total_injection += sol.injection(b);

  // Series + shunt losses from the branch equations.
  Complex losses(0.0, 0.0);
  for (const auto& br : c.branches) {
    if (!br.status) continue;
    Complex vf = sol.voltage(br.from_bus), vt = sol.voltage(br.to_bus);
    Complex y = 1.0 / Complex(br.r, br.x);
    Complex ych(0.0, br.b_charging / 2.0);
    Complex if_ = (vf - vt) * y + vf * ych;
    Complex it_ = (vt - vf) * y + vt * ych;
    losses += vf * std::conj(if_) + vt * std::conj(it_);
  }
  for (const auto& b : c.buses) {
    Complex v = sol.voltage(b.id);
    losses += std::norm(v) * std::conj(Complex(b.g_shunt, b.b_shunt));
  }
  CHECK(std::abs(total_injection - losses) < 10 * opt.tolerance);
}

TEST_CASE("non-convergence is reported, not thrown") {
  grid::GridCase c = two_bus(0.0, 0.1, 9.0, 3.0);  // far beyond deliverability
  pf::SolveOptions opt;
  opt.max_iterations = 8;
  auto sol = pf::solve_powerflow(c, opt);
  CHECK_FALSE(sol.converged);
  CHECK(sol.iterations == 8);
}

TEST_CASE("non-contiguous bus ids map correctly") {
  grid::GridCase c;
  c.base_mva = 100.0;
  c.buses.push_back({10, grid::BusKind::Slack, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({205, grid::BusKind::Load, 0.2, 0.08, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({3070, grid::BusKind::Load, 0.1, 0.04, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.branches.push_back({10, 205, 0.01, 0.08, 0.0, true});
  c.branches.push_back({205, 3070, 0.02, 0.12, 0.0, true});
  c.gens.push_back({10, 0.0, 0.0, -10.0, 10.0, 1.0});
  auto sol = pf::solve_powerflow(c);
  REQUIRE(sol.converged);
  CHECK(std::abs(sol.voltage(10)) == doctest::Approx(1.0));
  CHECK(std::abs(sol.voltage(3070)) < 1.0);
  CHECK(std::abs(sol.voltage(3070)) < std::abs(sol.voltage(205)));
}

TEST_CASE("deterministic: identical inputs give bit-identical solutions") {
  grid::GridCase c = ieee30();
  auto a = pf::solve_powerflow(c);
  auto b = pf::solve_powerflow(c);
  REQUIRE(a.converged);
  for (BusId bus : a.bus_order) {
    CHECK(a.voltage(bus).real() == b.voltage(bus).real());
    CHECK(a.voltage(bus).imag() == b.voltage(bus).imag());
  }
}

TEST_CASE("scale_load multiplies only the named buses") {
  grid::GridCase c = ieee30();
  grid::GridCase same = pf::scale_load(c, {26, 29, 30}, 1.0);
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    CHECK(same.buses[i].p_demand == c.buses[i].p_demand);
    CHECK(same.buses[i].q_demand == c.buses[i].q_demand);
  }

  grid::GridCase zeroed = pf::scale_load(c, {26, 29, 30}, 0.0);
  CHECK(zeroed.find_bus(26)->p_demand == 0.0);
  CHECK(zeroed.find_bus(29)->q_demand == 0.0);
  CHECK(zeroed.find_bus(7)->p_demand == c.find_bus(7)->p_demand);

  CHECK_THROWS_AS(pf::scale_load(c, {26}, -1.0), ConfigError);
  CHECK_THROWS_AS(pf::scale_load(c, {99}, 1.0), ConfigError);
}

TEST_CASE("snapshot covers exactly the group and zero-demand loads are exact zeros") {
  grid::GridCase c = ieee30();
  auto sol = pf::solve_powerflow(c);
  REQUIRE(sol.converged);
  auto res = grid::apply_grouping(c, grouping30());
  for (const auto& g : res.groups) {
    auto flows = pf::tie_flows_for_group(c, g, sol);
    auto vg = grid::virtualize_ties(c, g, flows);
    auto snap = pf::make_snapshot(c, sol, vg, 0);
    CHECK(snap.v_phasor.size() == g.bus_ids.size());
    for (const auto& [bus, v] : snap.v_phasor) {
      CHECK(g.bus_ids.count(bus) == 1);
      CHECK(v == sol.voltage(bus));
    }
    for (const auto& [bus, s] : snap.s_load) {
      const auto* rec = c.find_bus(bus);
      if (rec->p_demand == 0.0 && rec->q_demand == 0.0) {
        CHECK(s == Complex(0.0, 0.0));
      }
    }
  }
}

TEST_CASE("full-case group snapshot equals the solution voltages") {
  grid::GridCase c = ieee30();
  auto sol = pf::solve_powerflow(c);
  std::set<BusId> all;
  for (const auto& b : c.buses) all.insert(b.id);
  auto res = grid::apply_grouping(c, {{1, all}});
  auto vg = grid::virtualize_ties(c, res.groups[0], {});
  auto snap = pf::make_snapshot(c, sol, vg, 5);
  CHECK(snap.timestamp == 5);
  for (BusId b : sol.bus_order) {
    CHECK(snap.v_phasor.at(b) == sol.voltage(b));
  }
}

TEST_CASE("tie midpoint flows are equal and opposite across the two groups") {
  grid::GridCase c = ieee30();
  auto sol = pf::solve_powerflow(c);
  auto res = grid::apply_grouping(c, grouping30());
  for (std::size_t a = 0; a < res.groups.size(); ++a) {
    for (std::size_t b = a + 1; b < res.groups.size(); ++b) {
      auto fa = pf::tie_flows_for_group(c, res.groups[a], sol);
      auto fb = pf::tie_flows_for_group(c, res.groups[b], sol);
      for (const auto& [branch, flow] : fa) {
        auto it = fb.find(branch);
        if (it == fb.end()) continue;
        CHECK(std::abs(flow.s_into_group + it->second.s_into_group) < 1e-9);
        CHECK(std::abs(flow.v_mid - it->second.v_mid) < 1e-12);
      }
    }
  }
}
