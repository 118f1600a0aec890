#pragma once

#include <json.hpp>

#include "dvsim/dvs.hpp"
#include "dvsim/gridcase.hpp"
#include "dvsim/powerflow.hpp"

// JSON forms of the records exchanged with the ledger: group initialization
// data, PMU snapshots, VSI reports, control actions and VVC registries. Keys
// are stable so digests and replays are reproducible.
namespace dvsim::records {

using nlohmann::json;

json complex_json(const Complex& c);
Complex complex_from(const json& j);

json snapshot_json(const pf::PmuSnapshot& snap);
pf::PmuSnapshot snapshot_from(const json& j);

json group_json(const grid::Group& g);
grid::Group group_from(const json& j);

json group_data_json(const dvs::GroupData& gd);
dvs::GroupData group_data_from(const json& j);

// Channel state splits each group record in two: the light part is all the
// monitoring path needs every period; the detail part (admittance matrix,
// priority index, path edges) is read only when the controller runs.
json group_light_json(const dvs::GroupData& gd);
json group_detail_json(const dvs::GroupData& gd);
dvs::GroupData group_from_parts(const json& light, const json& detail);
dvs::GroupData group_light_from(const json& light);

json vvc_registry_json(const std::vector<grid::VvcRecord>& vvcs);
std::vector<grid::VvcRecord> vvc_registry_from(const json& j);

json vsi_report_json(const dvs::VsiReport& r);
dvs::VsiReport vsi_report_from(const json& j);

json control_action_json(const dvs::ControlAction& a);
dvs::ControlAction control_action_from(const json& j);

// Ledger key layout.
std::string group_key(GroupId g);
std::string group_detail_key(GroupId g);
std::string vvc_key(GroupId g);
std::string vsi_key(GroupId g);
std::string action_key(GroupId g, std::uint64_t seq);
std::string topology_group_key(GroupId g);
std::string topology_combo_key(GroupId a, GroupId b);
std::string merge_flag_key(GroupId requesting);

}  // namespace dvsim::records
