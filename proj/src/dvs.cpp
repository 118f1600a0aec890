#include "dvsim/dvs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dvsim::dvs {

namespace {

constexpr double kMarginFloor = -1e3;  // finite stand-in for a vanished margin

double margin(double maximum, double load) {
  if (std::isinf(maximum)) return 1.0;
  if (!(maximum > 0.0)) return kMarginFloor;
  double m = (maximum - load) / maximum;
  return std::max(m, kMarginFloor);
}

}  // namespace

std::string to_string(ActionStatus s) {
  switch (s) {
    case ActionStatus::Applied: return "applied";
    case ActionStatus::InsufficientLocalResources: return "insufficient-local-resources";
    case ActionStatus::NoActionNeeded: return "no-action-needed";
  }
  return "no-action-needed";
}

Eigen::MatrixXcd thevenin_impedance(const pf::PartitionedY& p) {
  using grid::BusClass;
  const Eigen::MatrixXcd& y_ll = p.block(BusClass::Load, BusClass::Load);
  const Eigen::MatrixXcd& y_lt = p.block(BusClass::Load, BusClass::Tie);
  const Eigen::MatrixXcd& y_tt = p.block(BusClass::Tie, BusClass::Tie);
  const Eigen::MatrixXcd& y_tl = p.block(BusClass::Tie, BusClass::Load);

  Eigen::MatrixXcd schur = y_ll;
  if (y_tt.rows() > 0) {
    Eigen::FullPivLU<Eigen::MatrixXcd> lu_tt(y_tt);
    if (!lu_tt.isInvertible()) throw NumericsError("thevenin: singular Y_TT block");
    schur -= y_lt * lu_tt.solve(y_tl);
  }
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(schur);
  if (!lu.isInvertible()) throw NumericsError("thevenin: singular reduced load block");
  return lu.inverse();
}

std::vector<TheveninParams> thevenin(const VirtualizedGroup& vg, const pf::PmuSnapshot& snap,
                                     const pf::PartitionedY& partitioned) {
  Eigen::MatrixXcd z = thevenin_impedance(partitioned);
  const auto& load_order = partitioned.class_order.at(grid::BusClass::Load);

  std::vector<TheveninParams> out;
  for (std::size_t i = 0; i < load_order.size(); ++i) {
    BusId bus = load_order[i];
    if (!vg.group.bus_ids.count(bus)) continue;  // virtual midpoints get no report
    auto vit = snap.v_phasor.find(bus);
    auto sit = snap.s_load.find(bus);
    if (vit == snap.v_phasor.end() || sit == snap.s_load.end()) {
      throw ControlError("thevenin: snapshot does not cover load bus " + std::to_string(bus));
    }
    TheveninParams th;
    th.load_bus = bus;
    th.z_th = z(i, i);
    if (!(std::abs(th.z_th) > 0.0)) {
      throw NumericsError("thevenin: degenerate z_th at bus " + std::to_string(bus));
    }
    const Complex v_l = vit->second;
    const Complex i_l = std::conj(sit->second / v_l);
    th.v_th = v_l + th.z_th * i_l;
    out.push_back(th);
  }
  return out;
}

MaxTransfer max_transfer(const TheveninParams& th, Complex s_load) {
  const double r = th.z_th.real();
  const double x = th.z_th.imag();
  const double zmag = std::abs(th.z_th);
  if (!(zmag > 1e-12) || !std::isfinite(zmag)) {
    throw NumericsError("max_transfer: degenerate z_th");
  }
  const double c = std::norm(th.v_th);  // |v_th|^2
  const double p = s_load.real();
  const double q = s_load.imag();

  MaxTransfer out;

  // Boundary of the deliverability predicate in P at fixed Q.
  if (std::abs(x) < 1e-12) {
    out.p_max = (c * c - 4.0 * q * q * r * r) / (4.0 * r * c);
  } else {
    double disc = c * (c - 4.0 * q * x);
    out.p_max = disc < 0.0
                    ? 0.0
                    : (r * (2.0 * q * x - c) + zmag * std::sqrt(disc)) / (2.0 * x * x);
  }
  out.p_max = std::max(out.p_max, 0.0);

  // Same boundary in Q at fixed P.
  if (std::abs(r) < 1e-12) {
    out.q_max = (c * c - 4.0 * p * p * x * x) / (4.0 * x * c);
  } else {
    double disc = c * (c - 4.0 * p * r);
    out.q_max = disc < 0.0
                    ? 0.0
                    : (x * (2.0 * p * r - c) + zmag * std::sqrt(disc)) / (2.0 * r * r);
  }
  out.q_max = std::max(out.q_max, 0.0);

  // Along the measured power factor; zero load rides the active axis.
  const double smag = std::abs(s_load);
  const double cosphi = smag > 0.0 ? p / smag : 1.0;
  const double sinphi = smag > 0.0 ? q / smag : 0.0;
  const double u = r * cosphi + x * sinphi;
  if (u + zmag <= 0.0) {
    out.s_max = std::numeric_limits<double>::infinity();
  } else {
    out.s_max = c / (2.0 * (u + zmag));
  }
  return out;
}

std::vector<std::pair<BusId, double>> shell_sort(std::vector<std::pair<BusId, double>> values) {
  const auto n = values.size();
  std::vector<std::size_t> gaps;
  for (std::size_t g = 1; g < n; g = 3 * g + 1) gaps.push_back(g);

  auto less = [](const std::pair<BusId, double>& a, const std::pair<BusId, double>& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  };

  for (auto it = gaps.rbegin(); it != gaps.rend(); ++it) {
    const std::size_t gap = *it;
    for (std::size_t i = gap; i < n; ++i) {
      auto tmp = values[i];
      std::size_t j = i;
      while (j >= gap && less(tmp, values[j - gap])) {
        values[j] = values[j - gap];
        j -= gap;
      }
      values[j] = tmp;
    }
  }
  return values;
}

PIMatrix priority_index(const pf::AdmittanceMatrix& y, const VirtualizedGroup& vg) {
  PIMatrix pi;
  pi.group_id = vg.group.id;

  // Ground a reference so the impedance matrix exists: the highest-numbered
  // generator-class bus, falling back to the highest-numbered bus.
  bool has_gen = false;
  BusId ground = 0;
  for (BusId b : y.bus_order) {
    auto it = vg.classification.find(b);
    if (it != vg.classification.end() && it->second == grid::BusClass::Gen) {
      has_gen = true;
      ground = std::max(ground, b);
    }
  }
  if (!has_gen) ground = y.bus_order.back();

  const int n = y.order();
  const int gi = y.bus_index.at(ground);
  Eigen::MatrixXcd reduced(n - 1, n - 1);
  std::vector<int> keep;
  for (int i = 0; i < n; ++i) {
    if (i != gi) keep.push_back(i);
  }
  for (std::size_t a = 0; a < keep.size(); ++a) {
    for (std::size_t b = 0; b < keep.size(); ++b) {
      reduced(a, b) = y.entries(keep[a], keep[b]);
    }
  }
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(reduced);
  if (!lu.isInvertible()) {
    throw NumericsError("priority_index: singular group admittance after grounding");
  }
  Eigen::MatrixXcd zfull = lu.inverse();

  auto zentry = [&](BusId a, BusId b) -> Complex {
    int ia = y.bus_index.at(a);
    int ib = y.bus_index.at(b);
    if (ia == gi || ib == gi) return Complex(0.0, 0.0);
    auto pos = [&](int i) {
      return static_cast<int>(std::lower_bound(keep.begin(), keep.end(), i) - keep.begin());
    };
    return zfull(pos(ia), pos(ib));
  };

  std::vector<BusId> real_buses(vg.group.bus_ids.begin(), vg.group.bus_ids.end());

  for (BusId i : real_buses) {
    for (BusId j : real_buses) {
      Complex d = zentry(i, i) + zentry(j, j) - 2.0 * zentry(i, j);
      pi.distances[{i, j}] = std::abs(d);
    }
  }

  for (BusId w : real_buses) {
    std::vector<BusId> order = real_buses;
    auto tier = [&](BusId cand) {
      if (cand == w) return 0;
      return y.at(w, cand) != Complex(0.0, 0.0) ? 1 : 2;
    };
    std::sort(order.begin(), order.end(), [&](BusId a, BusId b) {
      int ta = tier(a), tb = tier(b);
      if (ta != tb) return ta < tb;
      double da = pi.distances.at({w, a}), db = pi.distances.at({w, b});
      if (da != db) return da < db;
      return a < b;
    });
    pi.ranking[w] = std::move(order);
  }
  return pi;
}

double required_reactive(double sensitivity, double v_req, double v_weak) {
  if (!std::isfinite(sensitivity)) throw NumericsError("required_reactive: non-finite sensitivity");
  if (v_weak >= v_req) return 0.0;
  return std::max(0.0, sensitivity * (v_req - v_weak));
}

std::vector<BusId> sensitivity_path(const std::vector<PathEdge>& edges, BusId source,
                                    BusId weak) {
  if (source == weak) return {source};

  std::map<BusId, std::vector<std::pair<BusId, double>>> adj;
  for (const auto& e : edges) {
    adj[e.from].push_back({e.to, e.z_mag});
    adj[e.to].push_back({e.from, e.z_mag});
  }

  struct Key {
    int hops;
    double z;
    bool operator<(const Key& o) const {
      if (hops != o.hops) return hops < o.hops;
      return z < o.z;
    }
  };
  std::map<BusId, Key> best;
  std::map<BusId, BusId> pred;
  std::set<std::pair<std::pair<int, double>, BusId>> frontier;
  best[source] = {0, 0.0};
  frontier.insert({{0, 0.0}, source});
  while (!frontier.empty()) {
    auto [raw, u] = *frontier.begin();
    frontier.erase(frontier.begin());
    Key ku{raw.first, raw.second};
    if (best.at(u) < ku) continue;
    for (const auto& [v, zmag] : adj[u]) {
      Key cand{ku.hops + 1, ku.z + zmag};
      auto it = best.find(v);
      bool improve = it == best.end() || cand < it->second;
      bool tie = it != best.end() && !(cand < it->second) && !(it->second < cand);
      if (improve) {
        if (it != best.end()) frontier.erase({{it->second.hops, it->second.z}, v});
        best[v] = cand;
        pred[v] = u;
        frontier.insert({{cand.hops, cand.z}, v});
      } else if (tie && u < pred[v]) {
        pred[v] = u;
      }
    }
  }
  if (!pred.count(weak)) {
    throw ControlError("sensitivity_path: no path from " + std::to_string(source) + " to " +
                       std::to_string(weak));
  }
  std::vector<BusId> path;
  for (BusId b = weak; b != source; b = pred.at(b)) path.push_back(b);
  path.push_back(source);
  std::reverse(path.begin(), path.end());
  return path;
}

VsiReport compute_vsi(const pf::PmuSnapshot& snap, const GroupData& state) {
  for (BusId b : state.group.bus_ids) {
    if (!snap.v_phasor.count(b)) {
      throw ControlError("compute_vsi: snapshot does not cover group bus " + std::to_string(b));
    }
  }

  VsiReport report;
  report.group_id = state.id;

  std::vector<std::pair<BusId, double>> values;
  for (const auto& [bus, s_l] : snap.s_load) {
    auto zit = state.z_th.find(bus);
    if (zit == state.z_th.end()) {
      throw ControlError("compute_vsi: missing stored impedance for load bus " +
                         std::to_string(bus));
    }
    TheveninParams th;
    th.load_bus = bus;
    th.z_th = zit->second;
    const Complex v_l = snap.v_phasor.at(bus);
    th.v_th = v_l + th.z_th * std::conj(s_l / v_l);

    MaxTransfer mx = max_transfer(th, s_l);
    VsiEntry e;
    e.p_load = s_l.real();
    e.q_load = s_l.imag();
    e.s_load = std::abs(s_l);
    e.p_max = mx.p_max;
    e.q_max = mx.q_max;
    e.s_max = mx.s_max;
    e.vsi = std::min({margin(mx.p_max, e.p_load), margin(mx.q_max, e.q_load),
                      margin(mx.s_max, e.s_load)});
    report.entries[bus] = e;
    values.push_back({bus, e.vsi});
  }

  auto sorted = shell_sort(std::move(values));
  for (const auto& [bus, vsi] : sorted) report.sorted_buses.push_back(bus);
  if (!sorted.empty()) {
    report.min_vsi = sorted.front().second;
    report.weak_bus = sorted.front().first;
    report.below_threshold = report.min_vsi <= state.vsi_threshold;
  }
  return report;
}

ControlAction local_controller(const VsiReport& report, const std::vector<VvcRecord>& resources,
                               const ControllerInputs& inputs) {
  if (!inputs.pi || !inputs.dqdv || !inputs.edges) {
    throw ControlError("local_controller: missing PI/Jacobian group data");
  }
  if (!report.below_threshold) {
    throw ControlError("local_controller: report does not flag a weak bus");
  }
  const BusId w = report.weak_bus;

  ControlAction action;
  action.group_id = report.group_id;
  action.weak_bus = w;

  auto q_req_for = [&](BusId candidate) {
    double sens;
    if (candidate == w) {
      sens = pf::sensitivity_chain(*inputs.dqdv, w, w, {});
    } else {
      auto path = sensitivity_path(*inputs.edges, candidate, w);
      sens = pf::sensitivity_chain(*inputs.dqdv, candidate, w, path);
    }
    return required_reactive(sens, inputs.v_req, inputs.v_weak);
  };

  auto usable_vvc = [&](BusId bus, double q_req) -> const VvcRecord* {
    if (q_req <= 0.0) return nullptr;
    for (const auto& v : resources) {
      if (v.bus == bus && v.active && v.q_available >= q_req) return &v;
    }
    return nullptr;
  };

  const double q_req_weak = q_req_for(w);
  if (q_req_weak <= 0.0) {
    action.status = ActionStatus::NoActionNeeded;
    return action;
  }
  if (usable_vvc(w, q_req_weak)) {
    action.vvc_bus = w;
    action.q_req = q_req_weak;
    action.status = ActionStatus::Applied;
    return action;
  }

  auto rank_it = inputs.pi->ranking.find(w);
  if (rank_it == inputs.pi->ranking.end()) {
    throw ControlError("local_controller: weak bus missing from PI ranking");
  }
  for (BusId candidate : rank_it->second) {
    if (candidate == w) continue;  // already tried above
    double q_req = q_req_for(candidate);
    if (usable_vvc(candidate, q_req)) {
      action.vvc_bus = candidate;
      action.q_req = q_req;
      action.status = ActionStatus::Applied;
      return action;
    }
  }

  action.status = ActionStatus::InsufficientLocalResources;
  return action;
}

GroupId merged_group_id(GroupId a, GroupId b) {
  GroupId lo = std::min(a, b), hi = std::max(a, b);
  return lo * 100 + hi;
}

Group global_controller(GroupId requesting, const GroupRegistry& registry) {
  auto rit = registry.find(requesting);
  if (rit == registry.end()) {
    throw ControlError("global_controller: unknown group " + std::to_string(requesting));
  }
  const Group& req = rit->second.group;

  const GroupStanding* donor = nullptr;
  GroupId donor_id = 0;
  for (const auto& [gid, standing] : registry) {
    if (gid == requesting) continue;
    bool adjacent = false;
    for (BranchId t : req.tie_branches) {
      if (standing.group.tie_branches.count(t)) {
        adjacent = true;
        break;
      }
    }
    if (!adjacent) continue;
    if (!donor || standing.q_available_total > donor->q_available_total ||
        (standing.q_available_total == donor->q_available_total && gid < donor_id)) {
      donor = &standing;
      donor_id = gid;
    }
  }
  if (!donor) {
    throw ControlError("global_controller: no adjacent group for group " +
                       std::to_string(requesting));
  }
  if (!(donor->q_available_total > 0.0)) {
    throw ControlError("global_controller: no adjacent group with spare reactive capacity");
  }

  Group merged;
  merged.id = merged_group_id(requesting, donor_id);
  merged.bus_ids = req.bus_ids;
  merged.bus_ids.insert(donor->group.bus_ids.begin(), donor->group.bus_ids.end());
  for (BranchId t : req.tie_branches) {
    if (!donor->group.tie_branches.count(t)) merged.tie_branches.insert(t);
  }
  for (BranchId t : donor->group.tie_branches) {
    if (!req.tie_branches.count(t)) merged.tie_branches.insert(t);
  }
  merged.merged_from = {requesting, donor_id};
  return merged;
}

std::pair<Group, Group> split_group(const Group& merged, const VsiReport& report,
                                    double vsi_threshold, const GroupRegistry& originals) {
  if (!merged.merged_from) {
    throw ControlError("split_group: group was not produced by a merge");
  }
  if (report.min_vsi <= vsi_threshold) {
    throw ControlError("split_group: split requested while min VSI is at or below threshold");
  }
  auto [a, b] = *merged.merged_from;
  auto ait = originals.find(a);
  auto bit = originals.find(b);
  if (ait == originals.end() || bit == originals.end()) {
    throw ControlError("split_group: original groups not found in registry");
  }
  return {ait->second.group, bit->second.group};
}

}  // namespace dvsim::dvs
