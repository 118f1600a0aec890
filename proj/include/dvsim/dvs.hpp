#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dvsim/gridcase.hpp"
#include "dvsim/powerflow.hpp"
#include "dvsim/types.hpp"

namespace dvsim::dvs {

using grid::Group;
using grid::VirtualizedGroup;
using grid::VvcRecord;

/// Per-load-bus equivalent of the rest of the network: a source v_th behind
/// impedance z_th.
struct TheveninParams {
  BusId load_bus = 0;
  Complex v_th;
  Complex z_th;
};

/// Full Z_LL reduction: (Y_LL - Y_LT * Y_TT^-1 * Y_TL)^-1, ordered like the
/// partition's Load class. Generator rows/columns are dropped (sources hold
/// their voltage); tie buses are eliminated through the correction term.
Eigen::MatrixXcd thevenin_impedance(const pf::PartitionedY& partitioned);

/// Thevenin parameters for every measured load bus of the group. z_th is the
/// matching diagonal of thevenin_impedance; v_th = V_L + z_th * (S_L/V_L)*.
std::vector<TheveninParams> thevenin(const VirtualizedGroup& vg, const pf::PmuSnapshot& snap,
                                     const pf::PartitionedY& partitioned);

struct MaxTransfer {
  double p_max = 0.0;
  double q_max = 0.0;
  double s_max = 0.0;
};

/// Largest deliverable P (at the measured Q), Q (at the measured P) and |S|
/// (along the measured power factor) through the Thevenin equivalent. A load
/// P + jQ is deliverable iff
///   (2(P*R + Q*X) - |v_th|^2)^2 >= 4 (P^2 + Q^2) |z_th|^2,
/// and each maximum is the closed-form boundary of that predicate.
MaxTransfer max_transfer(const TheveninParams& th, Complex s_load);

struct VsiEntry {
  double vsi = 1.0;
  double p_load = 0.0, q_load = 0.0, s_load = 0.0;
  double p_max = 0.0, q_max = 0.0, s_max = 0.0;
};

struct VsiReport {
  GroupId group_id = 0;
  std::map<BusId, VsiEntry> entries;
  std::vector<BusId> sorted_buses;  // ascending VSI, ties by bus id
  double min_vsi = 1.0;
  BusId weak_bus = 0;
  bool below_threshold = false;
};

/// Shell sort with Knuth's (3^k - 1)/2 gap sequence; ascending by value,
/// ties by bus id. Kept explicit so the sorted output (and therefore every
/// report) is reproducible.
std::vector<std::pair<BusId, double>> shell_sort(std::vector<std::pair<BusId, double>> values);

struct PIMatrix {
  GroupId group_id = 0;
  // For each (weak) bus: every group bus ranked self first, then directly
  // connected buses, then the rest, each tier ascending by electrical
  // distance |Z_ii + Z_jj - 2 Z_ij|, ties by bus id.
  std::map<BusId, std::vector<BusId>> ranking;
  std::map<std::pair<BusId, BusId>, double> distances;
};

PIMatrix priority_index(const pf::AdmittanceMatrix& y, const VirtualizedGroup& vg);

/// Eq.-style reactive requirement: sensitivity * (v_req - v_weak), floored
/// at zero when there is no voltage deficit.
double required_reactive(double sensitivity, double v_req, double v_weak);

enum class ActionStatus { Applied, InsufficientLocalResources, NoActionNeeded };

std::string to_string(ActionStatus s);

struct ControlAction {
  GroupId group_id = 0;
  BusId weak_bus = 0;
  BusId vvc_bus = 0;   // chosen source when applied
  double q_req = 0.0;
  ActionStatus status = ActionStatus::NoActionNeeded;
};

struct PathEdge {
  BusId from = 0;
  BusId to = 0;
  double z_mag = 0.0;
};

/// Everything the monitoring/control contracts need about a group, written
/// to the ledger once at initialization.
struct GroupData {
  GroupId id = 0;
  Group group;
  std::map<BusId, grid::BusClass> classification;
  std::vector<grid::VirtualBus> virtual_buses;
  pf::AdmittanceMatrix y_group;
  std::map<BusId, Complex> z_th;     // per load bus
  PIMatrix pi;
  std::vector<PathEdge> edges;       // interior real-bus edges, for path search
  double vsi_threshold = 0.2;
  double v_req = 0.95;
  std::optional<GroupId> merged_into;
};

/// VSI per load bus from a snapshot and the group's initialization-time
/// impedance data, sorted ascending; flags the weak bus against the group
/// threshold.
VsiReport compute_vsi(const pf::PmuSnapshot& snap, const GroupData& state);

struct ControllerInputs {
  const PIMatrix* pi = nullptr;
  const pf::DqDvMatrix* dqdv = nullptr;
  const std::vector<PathEdge>* edges = nullptr;
  double v_req = 0.95;
  double v_weak = 1.0;  // measured weak-bus voltage magnitude
};

/// Weak-bus correction: try a VVC at the weak bus, then walk the priority
/// list, recomputing the (direct or chain-rule) sensitivity and q_req per
/// candidate; the first active VVC with q_available >= q_req is chosen.
ControlAction local_controller(const VsiReport& report, const std::vector<VvcRecord>& resources,
                               const ControllerInputs& inputs);

/// Path used for a candidate's chain sensitivity: fewest hops over the
/// group's interior edges, ties by smaller cumulative |z|, then by bus id.
std::vector<BusId> sensitivity_path(const std::vector<PathEdge>& edges, BusId source,
                                    BusId weak);

struct GroupStanding {
  Group group;
  double q_available_total = 0.0;
};

using GroupRegistry = std::map<GroupId, GroupStanding>;

/// Merged-group id: the sorted pair packed as min*100 + max.
GroupId merged_group_id(GroupId a, GroupId b);

/// Picks the tie-adjacent group with the most spare reactive capacity (ties
/// by ascending id) and returns the union group with merged_from set to
/// (requesting, donor).
Group global_controller(GroupId requesting, const GroupRegistry& registry);

/// Restores the two constituents once the merged report is back above the
/// threshold. `originals` must contain both merged_from groups.
std::pair<Group, Group> split_group(const Group& merged, const VsiReport& report,
                                    double vsi_threshold, const GroupRegistry& originals);

}  // namespace dvsim::dvs
