#include "dvsim/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dvsim/sha256.hpp"

namespace dvsim::pf {

AdmittanceMatrix build_admittance(const std::vector<grid::BusRecord>& buses,
                                  const std::vector<grid::BranchRecord>& branches) {
  AdmittanceMatrix y;
  for (const auto& b : buses) y.bus_order.push_back(b.id);
  std::sort(y.bus_order.begin(), y.bus_order.end());
  for (std::size_t i = 0; i < y.bus_order.size(); ++i) {
    y.bus_index[y.bus_order[i]] = static_cast<int>(i);
  }

  const int n = static_cast<int>(y.bus_order.size());
  y.entries = Eigen::MatrixXcd::Zero(n, n);

  for (std::size_t k = 0; k < branches.size(); ++k) {
    const auto& br = branches[k];
    if (!br.status) continue;
    if (br.r == 0.0 && br.x == 0.0) {
      throw NumericsError("build_admittance: zero-impedance branch " + std::to_string(k));
    }
    auto fi = y.bus_index.find(br.from_bus);
    auto ti = y.bus_index.find(br.to_bus);
    if (fi == y.bus_index.end() || ti == y.bus_index.end()) {
      throw NumericsError("build_admittance: branch " + std::to_string(k) +
                          " endpoint not in bus set");
    }
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex half_charge(0.0, br.b_charging / 2.0);
    int i = fi->second, j = ti->second;
    y.entries(i, i) += ys + half_charge;
    y.entries(j, j) += ys + half_charge;
    y.entries(i, j) -= ys;
    y.entries(j, i) -= ys;
  }

  for (const auto& b : buses) {
    int i = y.bus_index.at(b.id);
    y.entries(i, i) += Complex(b.g_shunt, b.b_shunt);
  }
  return y;
}

AdmittanceMatrix build_group_admittance(const GridCase& c, const VirtualizedGroup& vg) {
  AdmittanceMatrix y;
  for (BusId b : vg.group.bus_ids) y.bus_order.push_back(b);
  for (const auto& vb : vg.virtual_buses) y.bus_order.push_back(vb.bus_id);
  std::sort(y.bus_order.begin(), y.bus_order.end());
  for (std::size_t i = 0; i < y.bus_order.size(); ++i) {
    y.bus_index[y.bus_order[i]] = static_cast<int>(i);
  }
  const int n = static_cast<int>(y.bus_order.size());
  y.entries = Eigen::MatrixXcd::Zero(n, n);

  for (std::size_t k = 0; k < c.branches.size(); ++k) {
    const auto& br = c.branches[k];
    if (!br.status) continue;
    bool from_in = vg.group.bus_ids.count(br.from_bus) > 0;
    bool to_in = vg.group.bus_ids.count(br.to_bus) > 0;
    if (!from_in || !to_in) continue;  // ties handled via virtual buses
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex half_charge(0.0, br.b_charging / 2.0);
    int i = y.bus_index.at(br.from_bus);
    int j = y.bus_index.at(br.to_bus);
    y.entries(i, i) += ys + half_charge;
    y.entries(j, j) += ys + half_charge;
    y.entries(i, j) -= ys;
    y.entries(j, i) -= ys;
  }

  for (const auto& vb : vg.virtual_buses) {
    BusId interior = vg.interior_endpoint(c, vb.branch_id);
    const Complex ys = 1.0 / vb.z_half;
    const Complex quarter(0.0, vb.b_quarter);
    int i = y.bus_index.at(interior);
    int j = y.bus_index.at(vb.bus_id);
    y.entries(i, i) += ys + quarter;
    y.entries(j, j) += ys + quarter;
    y.entries(i, j) -= ys;
    y.entries(j, i) -= ys;
  }

  for (BusId b : vg.group.bus_ids) {
    const auto* rec = c.find_bus(b);
    if (!rec) throw NumericsError("group bus " + std::to_string(b) + " not in case");
    int i = y.bus_index.at(b);
    y.entries(i, i) += Complex(rec->g_shunt, rec->b_shunt);
  }
  return y;
}

PartitionedY partition_admittance(const AdmittanceMatrix& y,
                                  const std::map<BusId, BusClass>& classes) {
  PartitionedY p;
  for (BusId b : y.bus_order) {
    auto it = classes.find(b);
    if (it == classes.end()) {
      throw NumericsError("partition_admittance: unclassified bus " + std::to_string(b));
    }
    p.class_order[it->second].push_back(b);
  }
  for (auto cls : {BusClass::Gen, BusClass::Tie, BusClass::Load}) {
    auto& order = p.class_order[cls];
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) {
      p.class_index[order[i]] = {cls, static_cast<int>(i)};
    }
  }
  for (auto rc : {BusClass::Gen, BusClass::Tie, BusClass::Load}) {
    for (auto cc : {BusClass::Gen, BusClass::Tie, BusClass::Load}) {
      const auto& rows = p.class_order[rc];
      const auto& cols = p.class_order[cc];
      Eigen::MatrixXcd m(rows.size(), cols.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
          m(i, j) = y.entries(y.bus_index.at(rows[i]), y.bus_index.at(cols[j]));
        }
      }
      p.blocks[{rc, cc}] = std::move(m);
    }
  }
  return p;
}

namespace {

struct BusSetup {
  std::vector<BusId> order;
  std::map<BusId, int> index;
  int slack = -1;
  std::vector<int> pv;      // indexes into order
  std::vector<int> pq;
  Eigen::VectorXd p_spec;
  Eigen::VectorXd q_spec;
  Eigen::VectorXd v_set;    // magnitude targets for slack + PV
  double slack_ang = 0.0;
};

BusSetup setup_buses(const GridCase& c) {
  BusSetup s;
  for (const auto& b : c.buses) s.order.push_back(b.id);
  std::sort(s.order.begin(), s.order.end());
  for (std::size_t i = 0; i < s.order.size(); ++i) s.index[s.order[i]] = static_cast<int>(i);

  const int n = static_cast<int>(s.order.size());
  s.p_spec = Eigen::VectorXd::Zero(n);
  s.q_spec = Eigen::VectorXd::Zero(n);
  s.v_set = Eigen::VectorXd::Ones(n);

  for (const auto& b : c.buses) {
    int i = s.index.at(b.id);
    s.p_spec(i) -= b.p_demand;
    s.q_spec(i) -= b.q_demand;
    s.v_set(i) = b.v_mag;
    const grid::GenRecord* g = c.find_gen(b.id);
    if (g) {
      s.p_spec(i) += g->p_gen;
      s.q_spec(i) += g->q_gen;
      s.v_set(i) = g->v_set;
    }
    switch (b.kind) {
      case grid::BusKind::Slack:
        if (s.slack >= 0) throw NumericsError("solve_powerflow: multiple slack buses");
        s.slack = i;
        s.slack_ang = b.v_ang;
        break;
      case grid::BusKind::Generator:
        if (g) {
          s.pv.push_back(i);
        } else {
          s.pq.push_back(i);  // generator-kind bus without a unit behaves as PQ
        }
        break;
      case grid::BusKind::Load:
        s.pq.push_back(i);
        break;
    }
  }
  if (s.slack < 0) throw NumericsError("solve_powerflow: no slack bus");
  return s;
}

}  // namespace

PowerFlowSolution solve_powerflow(const GridCase& c, const SolveOptions& opt) {
  BusSetup s = setup_buses(c);
  AdmittanceMatrix ym = build_admittance(c.buses, c.branches);
  // build_admittance sorts ascending, matching s.order.
  const Eigen::MatrixXcd& Y = ym.entries;
  const int n = static_cast<int>(s.order.size());

  Eigen::VectorXd vm(n), va(n);
  for (int i = 0; i < n; ++i) {
    bool held = (i == s.slack) || std::find(s.pv.begin(), s.pv.end(), i) != s.pv.end();
    if (opt.flat_start) {
      vm(i) = held ? s.v_set(i) : 1.0;
      va(i) = s.slack_ang;
    } else {
      const auto* rec = c.find_bus(s.order[i]);
      vm(i) = held ? s.v_set(i) : rec->v_mag;
      va(i) = rec->v_ang;
    }
  }

  // Unknown layout: angles for all non-slack buses, then magnitudes for PQ.
  std::vector<int> ang_buses, mag_buses;
  for (int i = 0; i < n; ++i) {
    if (i != s.slack) ang_buses.push_back(i);
  }
  mag_buses = s.pq;
  const int n_ang = static_cast<int>(ang_buses.size());
  const int n_mag = static_cast<int>(mag_buses.size());

  auto calc_pq = [&](Eigen::VectorXd& p, Eigen::VectorXd& q) {
    p.setZero(n);
    q.setZero(n);
    for (int i = 0; i < n; ++i) {
      double pi = 0.0, qi = 0.0;
      for (int j = 0; j < n; ++j) {
        const Complex& yij = Y(i, j);
        if (yij == Complex(0.0, 0.0)) continue;
        double th = va(i) - va(j);
        double ct = std::cos(th), st = std::sin(th);
        pi += vm(j) * (yij.real() * ct + yij.imag() * st);
        qi += vm(j) * (yij.real() * st - yij.imag() * ct);
      }
      p(i) = vm(i) * pi;
      q(i) = vm(i) * qi;
    }
  };

  PowerFlowSolution sol;
  sol.bus_order = s.order;
  sol.bus_index = s.index;

  Eigen::VectorXd p_calc(n), q_calc(n);
  int iter = 0;
  for (;; ++iter) {
    calc_pq(p_calc, q_calc);

    Eigen::VectorXd f(n_ang + n_mag);
    for (int k = 0; k < n_ang; ++k) f(k) = s.p_spec(ang_buses[k]) - p_calc(ang_buses[k]);
    for (int k = 0; k < n_mag; ++k) {
      f(n_ang + k) = s.q_spec(mag_buses[k]) - q_calc(mag_buses[k]);
    }

    sol.mismatch = (n_ang + n_mag) > 0 ? f.lpNorm<Eigen::Infinity>() : 0.0;
    sol.iterations = iter;
    if (sol.mismatch <= opt.tolerance) {
      sol.converged = true;
      break;
    }
    if (iter >= opt.max_iterations) {
      sol.converged = false;
      break;
    }

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n_ang + n_mag, n_ang + n_mag);
    for (int r = 0; r < n_ang; ++r) {
      int i = ang_buses[r];
      for (int cidx = 0; cidx < n_ang; ++cidx) {
        int j = ang_buses[cidx];
        if (i == j) {
          jac(r, cidx) = -q_calc(i) - Y(i, i).imag() * vm(i) * vm(i);
        } else if (Y(i, j) != Complex(0.0, 0.0)) {
          double th = va(i) - va(j);
          jac(r, cidx) =
              vm(i) * vm(j) * (Y(i, j).real() * std::sin(th) - Y(i, j).imag() * std::cos(th));
        }
      }
      for (int cidx = 0; cidx < n_mag; ++cidx) {
        int j = mag_buses[cidx];
        if (i == j) {
          jac(r, n_ang + cidx) = p_calc(i) / vm(i) + Y(i, i).real() * vm(i);
        } else if (Y(i, j) != Complex(0.0, 0.0)) {
          double th = va(i) - va(j);
          jac(r, n_ang + cidx) =
              vm(i) * (Y(i, j).real() * std::cos(th) + Y(i, j).imag() * std::sin(th));
        }
      }
    }
    for (int r = 0; r < n_mag; ++r) {
      int i = mag_buses[r];
      for (int cidx = 0; cidx < n_ang; ++cidx) {
        int j = ang_buses[cidx];
        if (i == j) {
          jac(n_ang + r, cidx) = p_calc(i) - Y(i, i).real() * vm(i) * vm(i);
        } else if (Y(i, j) != Complex(0.0, 0.0)) {
          double th = va(i) - va(j);
          jac(n_ang + r, cidx) =
              -vm(i) * vm(j) * (Y(i, j).real() * std::cos(th) + Y(i, j).imag() * std::sin(th));
        }
      }
      for (int cidx = 0; cidx < n_mag; ++cidx) {
        int j = mag_buses[cidx];
        if (i == j) {
          jac(n_ang + r, n_ang + cidx) = q_calc(i) / vm(i) - Y(i, i).imag() * vm(i);
        } else if (Y(i, j) != Complex(0.0, 0.0)) {
          double th = va(i) - va(j);
          jac(n_ang + r, n_ang + cidx) =
              vm(i) * (Y(i, j).real() * std::sin(th) - Y(i, j).imag() * std::cos(th));
        }
      }
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) {
      throw NumericsError("solve_powerflow: singular Jacobian at iteration " +
                          std::to_string(iter));
    }
    Eigen::VectorXd dx = lu.solve(f);
    for (int k = 0; k < n_ang; ++k) va(ang_buses[k]) += dx(k);
    for (int k = 0; k < n_mag; ++k) vm(mag_buses[k]) += dx(n_ang + k);
  }

  sol.v.resize(n);
  for (int i = 0; i < n; ++i) {
    // not std::polar: vm can pass through negative values on divergent runs
    sol.v(i) = vm(i) * Complex(std::cos(va(i)), std::sin(va(i)));
  }
  sol.s_injection.resize(n);
  Eigen::VectorXcd iy = Y * sol.v;
  for (int i = 0; i < n; ++i) sol.s_injection(i) = sol.v(i) * std::conj(iy(i));
  return sol;
}

DqDvMatrix jacobian_dqdv_at(const AdmittanceMatrix& y,
                            const std::map<BusId, Complex>& voltages) {
  DqDvMatrix m;
  m.bus_order = y.bus_order;
  m.bus_index = y.bus_index;
  const int n = y.order();
  m.entries = Eigen::MatrixXd::Zero(n, n);

  Eigen::VectorXd vm(n), va(n);
  for (int i = 0; i < n; ++i) {
    auto it = voltages.find(y.bus_order[i]);
    if (it == voltages.end()) {
      throw NumericsError("jacobian_dqdv: missing voltage for bus " +
                          std::to_string(y.bus_order[i]));
    }
    vm(i) = std::abs(it->second);
    va(i) = std::arg(it->second);
  }

  for (int i = 0; i < n; ++i) {
    double qi = 0.0;
    for (int j = 0; j < n; ++j) {
      const Complex& yij = y.entries(i, j);
      if (yij == Complex(0.0, 0.0)) continue;
      double th = va(i) - va(j);
      qi += vm(i) * vm(j) * (yij.real() * std::sin(th) - yij.imag() * std::cos(th));
    }
    for (int j = 0; j < n; ++j) {
      const Complex& yij = y.entries(i, j);
      if (i == j) {
        m.entries(i, i) = qi / vm(i) - yij.imag() * vm(i);
      } else if (yij != Complex(0.0, 0.0)) {
        double th = va(i) - va(j);
        m.entries(i, j) = vm(i) * (yij.real() * std::sin(th) - yij.imag() * std::cos(th));
      }
    }
  }
  return m;
}

DqDvMatrix jacobian_dqdv(const PowerFlowSolution& sol, const AdmittanceMatrix& y) {
  if (!sol.converged) throw NumericsError("jacobian_dqdv: solution not converged");
  std::map<BusId, Complex> v;
  for (BusId b : y.bus_order) v[b] = sol.voltage(b);
  return jacobian_dqdv_at(y, v);
}

double sensitivity_chain(const DqDvMatrix& dqdv, BusId source_bus, BusId weak_bus,
                         const std::vector<BusId>& path) {
  if (path.empty() || (path.size() == 1 && path.front() == source_bus)) {
    if (source_bus != weak_bus) {
      throw NumericsError("sensitivity_chain: empty path but source != weak bus");
    }
    return dqdv.at(weak_bus, weak_bus);
  }
  if (path.front() != source_bus || path.back() != weak_bus) {
    throw NumericsError("sensitivity_chain: path endpoints do not match source/weak bus");
  }

  auto link = [&](BusId a, BusId b) {
    double e = dqdv.at(a, b);
    if (e == 0.0) {
      throw NumericsError("sensitivity_chain: broken path, buses " + std::to_string(a) +
                          " and " + std::to_string(b) + " not electrically adjacent");
    }
    return -e;  // injection-positive orientation
  };

  double sens = link(path[0], path[1]);
  for (std::size_t k = 1; k + 1 < path.size(); ++k) {
    double diag = dqdv.at(path[k], path[k]);
    if (diag == 0.0) {
      throw NumericsError("sensitivity_chain: zero diagonal at bus " + std::to_string(path[k]));
    }
    sens *= link(path[k], path[k + 1]) / diag;
  }
  return sens;
}

std::vector<BusId> shortest_electrical_path(const GridCase& c, const std::set<BusId>& buses,
                                            BusId from, BusId to) {
  if (!buses.count(from) || !buses.count(to)) {
    throw NumericsError("shortest_electrical_path: endpoint outside bus set");
  }
  if (from == to) return {from};

  std::map<BusId, std::vector<std::pair<BusId, double>>> adj;
  for (const auto& br : c.branches) {
    if (!br.status) continue;
    if (!buses.count(br.from_bus) || !buses.count(br.to_bus)) continue;
    double zmag = std::abs(Complex(br.r, br.x));
    adj[br.from_bus].push_back({br.to_bus, zmag});
    adj[br.to_bus].push_back({br.from_bus, zmag});
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
  best[from] = {0, 0.0};
  frontier.insert({{0, 0.0}, from});

  while (!frontier.empty()) {
    auto [key, u] = *frontier.begin();
    frontier.erase(frontier.begin());
    Key ku{key.first, key.second};
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

  if (!pred.count(to)) {
    throw NumericsError("shortest_electrical_path: no path from " + std::to_string(from) +
                        " to " + std::to_string(to));
  }
  std::vector<BusId> path;
  for (BusId b = to; b != from; b = pred.at(b)) path.push_back(b);
  path.push_back(from);
  std::reverse(path.begin(), path.end());
  return path;
}

std::map<BranchId, grid::TieFlow> tie_flows_for_group(const GridCase& c, const Group& g,
                                                      const PowerFlowSolution& sol) {
  std::map<BranchId, grid::TieFlow> flows;
  for (BranchId b : g.tie_branches) {
    const auto& br = c.branches.at(static_cast<std::size_t>(b));
    Complex vf = sol.voltage(br.from_bus);
    Complex vt = sol.voltage(br.to_bus);
    Complex z(br.r, br.x);
    Complex i_series = (vf - vt) / z;  // series current, from -> to
    Complex v_mid = vf - (z / 2.0) * i_series;
    grid::TieFlow tf;
    tf.v_mid = v_mid;
    bool from_inside = g.bus_ids.count(br.from_bus) > 0;
    Complex toward_to = v_mid * std::conj(i_series);
    tf.s_into_group = from_inside ? -toward_to : toward_to;
    flows[b] = tf;
  }
  return flows;
}

PmuSnapshot make_snapshot(const GridCase& c, const PowerFlowSolution& sol,
                          const VirtualizedGroup& vg, LogicalTime timestamp) {
  PmuSnapshot snap;
  snap.group_id = vg.group.id;
  snap.timestamp = timestamp;
  for (BusId b : vg.group.bus_ids) {
    snap.v_phasor[b] = sol.voltage(b);
  }
  for (const auto& [bus, cls] : vg.classification) {
    if (cls != grid::BusClass::Load) continue;
    if (!vg.group.bus_ids.count(bus)) continue;  // virtual buses carry no load record
    const auto* rec = c.find_bus(bus);
    snap.s_load[bus] = Complex(rec->p_demand, rec->q_demand);
  }
  snap.tie_flows = tie_flows_for_group(c, vg.group, sol);
  return snap;
}

GridCase scale_load(const GridCase& c, const std::set<BusId>& buses, double factor) {
  if (factor < 0.0) throw ConfigError("scale_load: negative factor");
  GridCase out = c;
  for (BusId b : buses) {
    bool found = false;
    for (auto& rec : out.buses) {
      if (rec.id == b) {
        rec.p_demand *= factor;
        rec.q_demand *= factor;
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("scale_load: unknown bus " + std::to_string(b));
  }
  return out;
}

std::string AdmittanceCache::case_content_hash(const GridCase& c) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "base:" << c.base_mva << ";";
  for (const auto& b : c.buses) {
    ss << "bus:" << b.id << "," << static_cast<int>(b.kind) << "," << b.p_demand << ","
       << b.q_demand << "," << b.g_shunt << "," << b.b_shunt << "," << b.v_mag << ","
       << b.v_ang << ";";
  }
  for (const auto& br : c.branches) {
    ss << "br:" << br.from_bus << "," << br.to_bus << "," << br.r << "," << br.x << ","
       << br.b_charging << "," << br.status << ";";
  }
  for (const auto& g : c.gens) {
    ss << "gen:" << g.bus << "," << g.p_gen << "," << g.q_gen << "," << g.v_set << ";";
  }
  return Sha256::hash_hex(ss.str());
}

const AdmittanceMatrix& AdmittanceCache::get(const GridCase& c) {
  std::string key = case_content_hash(c);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(key, build_admittance(c.buses, c.branches)).first;
  }
  return it->second;
}

}  // namespace dvsim::pf
