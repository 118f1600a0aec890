#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dvsim/gridcase.hpp"
#include "dvsim/types.hpp"

namespace dvsim::pf {

using grid::BusClass;
using grid::GridCase;
using grid::Group;
using grid::VirtualizedGroup;

struct AdmittanceMatrix {
  Eigen::MatrixXcd entries;       // dense, order x order
  std::map<BusId, int> bus_index; // bus id -> row/column
  std::vector<BusId> bus_order;   // row/column -> bus id

  int order() const { return static_cast<int>(entries.rows()); }
  Complex at(BusId i, BusId j) const { return entries(bus_index.at(i), bus_index.at(j)); }
};

/// Nodal admittance over the full case: series + half charging at each
/// endpoint, bus shunts on the diagonal. In-service branches only.
AdmittanceMatrix build_admittance(const std::vector<grid::BusRecord>& buses,
                                  const std::vector<grid::BranchRecord>& branches);

/// Group-local admittance over the virtualized network: interior branches in
/// full, tie branches replaced by a half line to the virtual midpoint bus
/// (half-line charging split between interior endpoint and midpoint).
AdmittanceMatrix build_group_admittance(const GridCase& c, const VirtualizedGroup& vg);

struct PartitionedY {
  // Nine blocks keyed by (row class, column class), ascending bus id inside
  // each class.
  std::map<std::pair<BusClass, BusClass>, Eigen::MatrixXcd> blocks;
  std::map<BusId, std::pair<BusClass, int>> class_index;  // bus -> (class, position)
  std::map<BusClass, std::vector<BusId>> class_order;

  const Eigen::MatrixXcd& block(BusClass row, BusClass col) const {
    return blocks.at({row, col});
  }
};

PartitionedY partition_admittance(const AdmittanceMatrix& y,
                                  const std::map<BusId, BusClass>& classes);

struct SolveOptions {
  double tolerance = 1e-8;
  int max_iterations = 30;
  bool flat_start = true;
};

struct PowerFlowSolution {
  std::vector<BusId> bus_order;
  std::map<BusId, int> bus_index;
  Eigen::VectorXcd v;            // complex bus voltages
  Eigen::VectorXcd s_injection;  // complex net injections
  double mismatch = 0.0;         // final residual infinity norm
  int iterations = 0;
  bool converged = false;

  Complex voltage(BusId b) const { return v(bus_index.at(b)); }
  Complex injection(BusId b) const { return s_injection(bus_index.at(b)); }
};

/// Newton-Raphson on the polar mismatch equations. PV buses hold voltage
/// magnitude, PQ buses hold P and Q, the slack holds its phasor.
PowerFlowSolution solve_powerflow(const GridCase& c, const SolveOptions& opt = {});

/// dQ/dV sub-block of the power-flow Jacobian at the given voltages, for
/// every bus of y. Entry (i, j) is the partial of the bus-i reactive
/// injection with respect to the bus-j voltage magnitude.
struct DqDvMatrix {
  Eigen::MatrixXd entries;
  std::map<BusId, int> bus_index;
  std::vector<BusId> bus_order;

  double at(BusId i, BusId j) const { return entries(bus_index.at(i), bus_index.at(j)); }
};

DqDvMatrix jacobian_dqdv(const PowerFlowSolution& sol, const AdmittanceMatrix& y);
DqDvMatrix jacobian_dqdv_at(const AdmittanceMatrix& y, const std::map<BusId, Complex>& voltages);

/// Effective reactive-power/voltage sensitivity between a source bus and a
/// weak bus along an electrically adjacent path. Values are oriented so that
/// a positive sensitivity means injection at the source raises the weak-bus
/// voltage; off-diagonal dQ/dV entries enter with their sign flipped
/// accordingly. An empty path (source == weak) yields the diagonal entry.
double sensitivity_chain(const DqDvMatrix& dqdv, BusId source_bus, BusId weak_bus,
                         const std::vector<BusId>& path);

/// Shortest electrical path by hop count, ties broken by smaller cumulative
/// |z|, then by bus id. Edges are the in-service branches among `buses`.
std::vector<BusId> shortest_electrical_path(const GridCase& c, const std::set<BusId>& buses,
                                            BusId from, BusId to);

struct PmuSnapshot {
  GroupId group_id = 0;
  LogicalTime timestamp = 0;
  std::map<BusId, Complex> v_phasor;       // group buses
  std::map<BusId, Complex> s_load;         // load (PQ-class) buses, consumption-positive
  std::map<BranchId, grid::TieFlow> tie_flows;
};

/// Per-tie midpoint flows for every tie of the group, oriented into it.
std::map<BranchId, grid::TieFlow> tie_flows_for_group(const GridCase& c, const Group& g,
                                                      const PowerFlowSolution& sol);

PmuSnapshot make_snapshot(const GridCase& c, const PowerFlowSolution& sol,
                          const VirtualizedGroup& vg, LogicalTime timestamp);

/// Returns a copy with p_demand and q_demand scaled on the named buses.
GridCase scale_load(const GridCase& c, const std::set<BusId>& buses, double factor);

/// Content-addressed cache for built admittance matrices; the key is the
/// hash of the canonical case content, so any topology change misses.
class AdmittanceCache {
 public:
  const AdmittanceMatrix& get(const GridCase& c);
  static std::string case_content_hash(const GridCase& c);
  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::string, AdmittanceMatrix> cache_;
};

}  // namespace dvsim::pf
