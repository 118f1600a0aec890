#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dvsim/types.hpp"

namespace dvsim::grid {

enum class BusKind { Slack, Generator, Load };  // slack / PV / PQ

std::string to_string(BusKind k);
BusKind bus_kind_from_string(const std::string& s);

struct BusRecord {
  BusId id = 0;
  BusKind kind = BusKind::Load;
  double p_demand = 0.0;  // p.u. on system base
  double q_demand = 0.0;
  double g_shunt = 0.0;
  double b_shunt = 0.0;
  double v_mag = 1.0;
  double v_ang = 0.0;  // radians
  double base_kv = 0.0;
};

struct BranchRecord {
  BusId from_bus = 0;
  BusId to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;  // total line charging susceptance
  bool status = true;
};

struct GenRecord {
  BusId bus = 0;
  double p_gen = 0.0;
  double q_gen = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double v_set = 1.0;
};

struct VvcRecord {
  BusId bus = 0;
  double q_available = 0.0;  // remaining injectable reactive power, p.u.
  double q_injected = 0.0;   // cumulative injection, p.u.
  bool active = true;
};

struct GridCase {
  double base_mva = 100.0;
  std::vector<BusRecord> buses;
  std::vector<BranchRecord> branches;
  std::vector<GenRecord> gens;
  std::vector<VvcRecord> vvcs;

  const BusRecord* find_bus(BusId id) const;
  const GenRecord* find_gen(BusId bus) const;
  std::map<BusId, int> bus_positions() const;  // bus id -> index into buses
};

struct Group {
  GroupId id = 0;
  std::set<BusId> bus_ids;
  std::set<BranchId> tie_branches;  // branches with exactly one endpoint inside
  std::optional<std::pair<GroupId, GroupId>> merged_from;
};

enum class BusClass { Gen, Tie, Load };  // G / T / L

std::string to_string(BusClass c);
BusClass bus_class_from_string(const std::string& s);

enum class VirtualKind { PV, PQ };

/// Midpoint bus standing in for the far half of a severed tie line.
struct VirtualBus {
  BranchId branch_id = 0;
  BusId bus_id = 0;  // synthetic id, disjoint from the case's bus ids
  VirtualKind kind = VirtualKind::PQ;
  Complex z_half;              // half the tie series impedance
  double b_quarter = 0.0;      // half-line charging, midpoint share
  Complex boundary_injection;  // measured midpoint flow, into the group
};

struct VirtualizedGroup {
  Group group;
  std::vector<VirtualBus> virtual_buses;
  std::map<BusId, BusClass> classification;  // covers real and virtual buses

  BusId interior_endpoint(const GridCase& c, BranchId b) const;
};

/// Synthetic ids for virtual buses live above every real bus id.
BusId virtual_bus_id(const GridCase& c, BranchId branch);

// ---- case ingestion ------------------------------------------------------

/// Parses the documented JSON case format. Power fields are MW/MVAr in the
/// file and converted to per-unit on base_mva here; impedances, shunts and
/// voltages are already per-unit.
GridCase parse_case(const std::string& text);

GridCase load_case_file(const std::string& path);

/// Grouping config: format_version + map of group id -> bus id list.
std::map<GroupId, std::set<BusId>> parse_grouping(const std::string& text);
std::map<GroupId, std::set<BusId>> load_grouping_file(const std::string& path);

// ---- validation ----------------------------------------------------------

struct Violation {
  std::string rule;    // e.g. "multiple slack", "disconnected component"
  std::string record;  // which record breaks it
  std::string detail;
};

std::vector<Violation> validate_case(const GridCase& c);

// ---- grouping ------------------------------------------------------------

struct GroupingResult {
  std::vector<Group> groups;
  // Minimum-content findings (missing load / source / VVC). Advisory only.
  std::vector<std::string> diagnostics;
};

GroupingResult apply_grouping(const GridCase& c,
                              const std::map<GroupId, std::set<BusId>>& grouping);

/// Per-tie measured flow at the line midpoint, oriented into the group.
struct TieFlow {
  Complex s_into_group;  // positive real part = power imported by the group
  Complex v_mid;         // midpoint voltage phasor
};

/// Splits each tie at its midpoint and attaches a virtual PV (importing) or
/// virtual PQ (exporting) bus, then classifies every bus G/T/L. Buses with a
/// generator are G, group-interior tie endpoints are T, the rest are L.
VirtualizedGroup virtualize_ties(const GridCase& c, const Group& g,
                                 const std::map<BranchId, TieFlow>& flows);

}  // namespace dvsim::grid
