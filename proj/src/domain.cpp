#include "slicearb/domain.hpp"

#include <set>

namespace slicearb {

const char* to_string(TrafficClass c) {
  switch (c) {
    case TrafficClass::Embb:
      return "embb";
    case TrafficClass::Mmtc:
      return "mmtc";
    case TrafficClass::Urllc:
      return "urllc";
  }
  return "?";
}

TrafficClass traffic_class_from_string(const std::string& s) {
  if (s == "embb") return TrafficClass::Embb;
  if (s == "mmtc") return TrafficClass::Mmtc;
  if (s == "urllc") return TrafficClass::Urllc;
  throw Error(Errc::BadConfig, "unknown traffic class '" + s + "'");
}

const char* to_string(RewardMode m) {
  return m == RewardMode::AsWritten ? "as-written" : "satisfaction";
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "as-written") return RewardMode::AsWritten;
  if (s == "satisfaction") return RewardMode::Satisfaction;
  throw Error(Errc::BadConfig, "unknown reward mode '" + s + "'");
}

std::vector<double> default_cqi_table() {
  // 4-bit CQI efficiency table, bits per symbol.
  return {0.0,    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766,
          1.9141, 2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547};
}

int mcs_from_cqi(int cqi) {
  static constexpr int table[16] = {0, 0,  2,  4,  6,  8,  10, 12,
                                    14, 16, 18, 20, 22, 24, 26, 28};
  if (cqi < 0 || cqi > 15) throw Error(Errc::CqiOutOfRange, "cqi " + std::to_string(cqi) + " outside 0..15");
  return table[cqi];
}

ValidatedScenario::ValidatedScenario(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
  for (int i = 0; i < slice_count(); ++i) id_to_index_[cfg_.slices[i].id] = i;
}

int ValidatedScenario::index_of(int slice_id) const {
  auto it = id_to_index_.find(slice_id);
  if (it == id_to_index_.end())
    throw Error(Errc::BadConfig, "unknown slice id " + std::to_string(slice_id));
  return it->second;
}

ValidatedScenario validate_scenario(const ScenarioConfig& cfg) {
  if (cfg.total_prbs <= 0)
    throw Error(Errc::ZeroBudget, "total_prbs: must be > 0, got " + std::to_string(cfg.total_prbs));
  if (cfg.horizon <= 0)
    throw Error(Errc::BadConfig, "horizon: must be > 0, got " + std::to_string(cfg.horizon));
  if (cfg.slices.empty()) throw Error(Errc::BadConfig, "slices: at least one slice required");
  if (cfg.cqi_table.size() != 16)
    throw Error(Errc::EmptyCqiTable, "cqi_table: expected 16 entries, got " +
                                         std::to_string(cfg.cqi_table.size()));
  if (cfg.cqi_table[0] != 0.0)
    throw Error(Errc::NonMonotoneCqiTable, "cqi_table: entry 0 must be 0");
  for (std::size_t i = 1; i < cfg.cqi_table.size(); ++i) {
    if (!(cfg.cqi_table[i] >= cfg.cqi_table[i - 1]) || cfg.cqi_table[i] < 0.0)
      throw Error(Errc::NonMonotoneCqiTable,
                  "cqi_table: entries must be nonnegative and nondecreasing (index " +
                      std::to_string(i) + ")");
  }

  std::set<int> seen;
  for (const SliceSpec& s : cfg.slices) {
    if (s.id < 0) throw Error(Errc::BadConfig, "slices: id must be >= 0, got " + std::to_string(s.id));
    if (!seen.insert(s.id).second)
      throw Error(Errc::DuplicateSliceId, "slices: duplicate slice id " + std::to_string(s.id));
    if (s.priority < 1 || s.priority > 3)
      throw Error(Errc::BadPriority, "slices[" + std::to_string(s.id) + "].priority: must be in {1,2,3}, got " +
                                         std::to_string(s.priority));
    if (s.ue_count < 1)
      throw Error(Errc::BadConfig, "slices[" + std::to_string(s.id) + "].ue_count: must be >= 1");
  }
  if (cfg.throughput_scale_mbps <= 0.0)
    throw Error(Errc::BadConfig, "throughput_scale_mbps: must be > 0");
  if (cfg.penalty_scale < 0.0) throw Error(Errc::BadConfig, "penalty_scale: must be >= 0");
  return ValidatedScenario(cfg);
}

FeatureVector normalize_observation(const Observation& o, const ScenarioConfig& cfg) {
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  const double total = static_cast<double>(cfg.total_prbs);
  return {
      unit(o.available_prbs / total),
      unit(o.cqi / 15.0),
      unit(o.mcs / 28.0),
      unit(o.required_throughput / cfg.throughput_scale_mbps),
      unit((o.priority - 1) / 2.0),
      unit(o.last_alloc_prbs / total),
  };
}

}  // namespace slicearb
