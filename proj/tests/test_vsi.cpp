#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dvsim/dvs.hpp"
#include "fixtures.hpp"

using namespace dvsim;
using namespace fixtures;

namespace {

dvs::GroupData group_data_for(const grid::GridCase& c, const grid::Group& g,
                              const pf::PowerFlowSolution& base_sol, double thr = 0.2,
                              double v_req = 0.95) {
  auto flows = pf::tie_flows_for_group(c, g, base_sol);
  auto vg = grid::virtualize_ties(c, g, flows);
  dvs::GroupData gd;
  gd.id = g.id;
  gd.group = g;
  gd.classification = vg.classification;
  gd.virtual_buses = vg.virtual_buses;
  gd.y_group = pf::build_group_admittance(c, vg);
  auto part = pf::partition_admittance(gd.y_group, gd.classification);
  Eigen::MatrixXcd z = dvs::thevenin_impedance(part);
  const auto& lo = part.class_order.at(grid::BusClass::Load);
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (g.bus_ids.count(lo[i])) gd.z_th[lo[i]] = z(i, i);
  }
  gd.vsi_threshold = thr;
  gd.v_req = v_req;
  return gd;
}

dvs::VsiReport vsi_of(const grid::GridCase& c, const dvs::GroupData& gd,
                      const pf::PowerFlowSolution& sol) {
  grid::VirtualizedGroup vg;
  vg.group = gd.group;
  vg.virtual_buses = gd.virtual_buses;
  vg.classification = gd.classification;
  auto snap = pf::make_snapshot(c, sol, vg, 0);
  return dvs::compute_vsi(snap, gd);
}

grid::Group whole_case_group(const grid::GridCase& c) {
  grid::Group g;
  g.id = 1;
  for (const auto& b : c.buses) g.bus_ids.insert(b.id);
  return g;
}

}  // namespace

TEST_CASE("all loads zero gives VSI exactly one everywhere") {
  grid::GridCase c = ieee30();
  for (auto& b : c.buses) {
    b.p_demand = 0.0;
    b.q_demand = 0.0;
  }
  auto sol = pf::solve_powerflow(c);
  REQUIRE(sol.converged);
  auto gd = group_data_for(c, whole_case_group(c), sol);
  auto report = vsi_of(c, gd, sol);
  REQUIRE_FALSE(report.entries.empty());
  for (const auto& [bus, e] : report.entries) {
    CHECK(e.vsi == 1.0);
  }
  CHECK(report.min_vsi == 1.0);
  CHECK_FALSE(report.below_threshold);
}

TEST_CASE("VSI is at most one, equal exactly when the bus carries no load") {
  grid::GridCase c = ieee30();
  auto sol = pf::solve_powerflow(c);
  REQUIRE(sol.converged);
  auto gd = group_data_for(c, whole_case_group(c), sol);
  auto report = vsi_of(c, gd, sol);
  for (const auto& [bus, e] : report.entries) {
    CHECK(e.vsi <= 1.0);
    if (e.s_load == 0.0) {
      CHECK(e.vsi == 1.0);
    } else {
      CHECK(e.vsi < 1.0);
    }
  }
}

TEST_CASE("sorted buses ascend and the weak bus achieves the minimum") {
  grid::GridCase c = ieee30();
  auto sol = pf::solve_powerflow(c);
  auto gd = group_data_for(c, whole_case_group(c), sol);
  auto report = vsi_of(c, gd, sol);
  REQUIRE(report.sorted_buses.size() == report.entries.size());
  for (std::size_t i = 1; i < report.sorted_buses.size(); ++i) {
    CHECK(report.entries.at(report.sorted_buses[i - 1]).vsi <=
          report.entries.at(report.sorted_buses[i]).vsi);
  }
  CHECK(report.weak_bus == report.sorted_buses.front());
  CHECK(report.min_vsi == report.entries.at(report.weak_bus).vsi);
}

TEST_CASE("missing stored impedance is a stale-state error") {
  grid::GridCase c = ieee30();
  auto sol = pf::solve_powerflow(c);
  auto gd = group_data_for(c, whole_case_group(c), sol);
  gd.z_th.erase(30);
  CHECK_THROWS_AS(vsi_of(c, gd, sol), ControlError);
}

TEST_CASE("margin monotonicity under load scaling on the 30-bus case") {
  grid::GridCase c = ieee30();
  auto base_sol = pf::solve_powerflow(c);
  auto gd = group_data_for(c, whole_case_group(c), base_sol);

  for (BusId bus : {26, 30, 21}) {
    double prev = 2.0;
    for (double f : {1.0, 1.5, 2.0, 2.5}) {
      auto scaled = pf::scale_load(c, {bus}, f);
      auto sol = pf::solve_powerflow(scaled);
      REQUIRE(sol.converged);
      auto report = vsi_of(scaled, gd, sol);
      double vsi = report.entries.at(bus).vsi;
      CHECK(vsi <= prev + 1e-12);
      prev = vsi;
    }
  }
}

TEST_CASE("scaling the tail buses drops the containing group's minimum") {
  grid::GridCase c = ieee30();
  auto base_sol = pf::solve_powerflow(c);
  auto res = grid::apply_grouping(c, grouping30());
  const grid::Group* g3 = nullptr;
  for (const auto& g : res.groups) {
    if (g.id == 3) g3 = &g;
  }
  REQUIRE(g3 != nullptr);
  auto gd = group_data_for(c, *g3, base_sol);

  double base_min = vsi_of(c, gd, base_sol).min_vsi;
  auto scaled = pf::scale_load(c, {26, 29, 30}, 2.5);
  auto sol = pf::solve_powerflow(scaled);
  REQUIRE(sol.converged);
  CHECK(vsi_of(scaled, gd, sol).min_vsi < base_min);
}

TEST_CASE("continuation scaling reaches min VSI below 0.05 before divergence") {
  grid::GridCase c = ieee30();
  auto base_sol = pf::solve_powerflow(c);
  REQUIRE(base_sol.converged);
  auto gd = group_data_for(c, whole_case_group(c), base_sol);

  const std::set<BusId> tail{26, 29, 30};
  double last_vsi = 1.0;
  bool diverged = false;
  for (double f = 1.0; f < 40.0; f += 0.1) {
    auto scaled = pf::scale_load(c, tail, f);
    auto sol = pf::solve_powerflow(scaled);
    if (!sol.converged) {
      diverged = true;
      break;
    }
    last_vsi = vsi_of(scaled, gd, sol).min_vsi;
  }
  CHECK(diverged);          // the collapse boundary is reachable
  CHECK(last_vsi <= 0.05);  // and the index sees it coming
}

TEST_CASE("shell sort: empty, sorted, reverse") {
  CHECK(dvs::shell_sort({}).empty());

  std::vector<std::pair<BusId, double>> sorted{{1, 0.1}, {2, 0.2}, {3, 0.3}};
  CHECK(dvs::shell_sort(sorted) == sorted);

  std::vector<std::pair<BusId, double>> reversed{{3, 0.3}, {2, 0.2}, {1, 0.1}};
  CHECK(dvs::shell_sort(reversed) == sorted);
}

TEST_CASE("shell sort ties break by ascending bus id") {
  std::vector<std::pair<BusId, double>> values{{9, 0.5}, {4, 0.5}, {7, 0.5}, {1, 0.9}};
  auto out = dvs::shell_sort(values);
  CHECK(out[0].first == 4);
  CHECK(out[1].first == 7);
  CHECK(out[2].first == 9);
  CHECK(out[3].first == 1);
}

TEST_CASE("shell sort matches a reference sort on 1000 random values") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> val(0.0, 1.0);
  std::uniform_int_distribution<int> bus(1, 200);
  std::vector<std::pair<BusId, double>> values;
  for (int i = 0; i < 1000; ++i) values.push_back({bus(rng), val(rng)});

  auto expect = values;
  std::sort(expect.begin(), expect.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  CHECK(dvs::shell_sort(values) == expect);
}

TEST_CASE("below_threshold flags against the group threshold") {
  grid::GridCase c = ieee30();
  auto base_sol = pf::solve_powerflow(c);
  auto gd = group_data_for(c, whole_case_group(c), base_sol, 0.56);
  auto scaled = pf::scale_load(c, {26}, 4.0);
  auto sol = pf::solve_powerflow(scaled);
  REQUIRE(sol.converged);
  auto report = vsi_of(scaled, gd, sol);
  CHECK(report.below_threshold);
  CHECK(report.weak_bus == 26);
}
