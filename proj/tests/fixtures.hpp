#pragma once

#include <string>

#include "dvsim/gridcase.hpp"
#include "dvsim/powerflow.hpp"

// Shared test fixtures: small hand-built networks plus the shipped 30-bus
// data. Oracles used against the implementation live next to the tests that
// use them, independent of the library code paths they check.
namespace fixtures {

using namespace dvsim;

inline std::string data_path(const std::string& name) {
  return std::string(DVSIM_DATA_DIR) + "/" + name;
}

inline grid::GridCase ieee30() {
  return grid::load_case_file(data_path("ieee30.json"));
}

inline std::map<GroupId, std::set<BusId>> grouping30() {
  return grid::load_grouping_file(data_path("grouping30.json"));
}

/// Slack -- z -- load.
inline grid::GridCase two_bus(double r, double x, double p_load, double q_load,
                              double v_slack = 1.0) {
  grid::GridCase c;
  c.base_mva = 100.0;
  c.buses.push_back({1, grid::BusKind::Slack, 0.0, 0.0, 0.0, 0.0, v_slack, 0.0, 132.0});
  c.buses.push_back({2, grid::BusKind::Load, p_load, q_load, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.branches.push_back({1, 2, r, x, 0.0, true});
  c.gens.push_back({1, 0.0, 0.0, -10.0, 10.0, v_slack});
  return c;
}

/// Slack -- b2 -- b3 -- b4 chain, uniform impedance, light loads.
inline grid::GridCase four_bus_chain(double r = 0.01, double x = 0.1) {
  grid::GridCase c;
  c.base_mva = 100.0;
  c.buses.push_back({1, grid::BusKind::Slack, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({2, grid::BusKind::Load, 0.10, 0.04, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({3, grid::BusKind::Load, 0.10, 0.04, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({4, grid::BusKind::Load, 0.15, 0.06, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.branches.push_back({1, 2, r, x, 0.0, true});
  c.branches.push_back({2, 3, r, x, 0.0, true});
  c.branches.push_back({3, 4, r, x, 0.0, true});
  c.gens.push_back({1, 0.0, 0.0, -10.0, 10.0, 1.0});
  return c;
}

/// Two three-bus areas joined by two tie lines with opposite flow
/// directions: area A holds the slack, area B holds a surplus generator.
inline grid::GridCase six_bus_two_area() {
  grid::GridCase c;
  c.base_mva = 100.0;
  c.buses.push_back({1, grid::BusKind::Slack, 0.0, 0.0, 0.0, 0.0, 1.02, 0.0, 132.0});
  c.buses.push_back({2, grid::BusKind::Load, 0.15, 0.05, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({3, grid::BusKind::Load, 0.15, 0.05, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({4, grid::BusKind::Load, 0.80, 0.30, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.buses.push_back({5, grid::BusKind::Generator, 0.0, 0.0, 0.0, 0.0, 1.02, 0.0, 132.0});
  c.buses.push_back({6, grid::BusKind::Load, 0.10, 0.03, 0.0, 0.0, 1.0, 0.0, 132.0});
  c.branches.push_back({1, 2, 0.01, 0.05, 0.0, true});
  c.branches.push_back({2, 3, 0.01, 0.05, 0.0, true});
  c.branches.push_back({1, 3, 0.01, 0.05, 0.0, true});
  c.branches.push_back({4, 5, 0.01, 0.05, 0.0, true});
  c.branches.push_back({5, 6, 0.01, 0.05, 0.0, true});
  c.branches.push_back({3, 4, 0.02, 0.10, 0.0, true});   // tie: A exports into the heavy load
  c.branches.push_back({5, 2, 0.02, 0.10, 0.0, true});   // tie: surplus gen exports into A
  c.gens.push_back({1, 0.0, 0.0, -10.0, 10.0, 1.02});
  c.gens.push_back({5, 1.0, 0.0, -10.0, 10.0, 1.02});
  return c;
}

inline std::map<GroupId, std::set<BusId>> six_bus_grouping() {
  return {{1, {1, 2, 3}}, {2, {4, 5, 6}}};
}

}  // namespace fixtures
