#pragma once

// Core vocabulary shared by every module: traffic classes, slice specs,
// scenario configuration, per-agent observations and allocation decisions.

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace slicearb {

using Rng = std::mt19937_64;

enum class Errc {
  DuplicateSliceId,
  BadPriority,
  EmptyCqiTable,
  NonMonotoneCqiTable,
  ZeroBudget,
  CqiOutOfRange,
  UnsatisfiableAtCqiZero,
  ActionCountMismatch,
  StepAfterDone,
  KTooLarge,
  ShapeMismatch,
  EmptyGraph,
  MissingCache,
  StructureMismatch,
  BufferTooSmall,
  MissingColumn,
  NonNumericField,
  DuplicateKey,
  GapAt,
  ScenarioMismatch,
  BadConfig,
  IoError,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

enum class TrafficClass { Embb, Mmtc, Urllc };

const char* to_string(TrafficClass c);
TrafficClass traffic_class_from_string(const std::string& s);

struct SliceSpec {
  int id = 0;
  TrafficClass traffic = TrafficClass::Embb;
  int priority = 1;  // 1 low, 2 medium, 3 high
  int ue_count = 1;

  bool operator==(const SliceSpec&) const = default;
};

enum class RewardMode { AsWritten, Satisfaction };

const char* to_string(RewardMode m);
RewardMode reward_mode_from_string(const std::string& s);

// Spectral efficiency in bits per symbol for CQI indices 0..15. Index 0 is
// "out of range" and carries no rate.
std::vector<double> default_cqi_table();

// Deterministic CQI -> MCS lookup so observations never carry an
// inconsistent pair.
int mcs_from_cqi(int cqi);

struct ScenarioConfig {
  std::vector<SliceSpec> slices;
  int total_prbs = 50;
  double bandwidth_mhz = 10.0;
  int horizon = 20;
  std::vector<double> cqi_table = default_cqi_table();
  std::uint64_t seed = 0;
  double throughput_scale_mbps = 10.0;  // feature normalization scale
  double penalty_scale = 1.0;
  RewardMode reward_mode = RewardMode::AsWritten;

  bool operator==(const ScenarioConfig&) const = default;
};

struct Observation {
  int available_prbs = 0;
  int cqi = 0;
  int mcs = 0;
  double required_throughput = 0.0;  // Mbps
  int priority = 1;
  int last_alloc_prbs = 0;
};

struct AllocationDecision {
  int slice_id = 0;
  int prbs_claimed = 0;

  bool operator==(const AllocationDecision&) const = default;
};

// A ScenarioConfig whose invariants have been checked. Obtainable only via
// validate_scenario.
class ValidatedScenario {
 public:
  const ScenarioConfig& config() const { return cfg_; }
  int slice_count() const { return static_cast<int>(cfg_.slices.size()); }
  const SliceSpec& slice(int index) const { return cfg_.slices.at(index); }
  int index_of(int slice_id) const;

  bool operator==(const ValidatedScenario& o) const { return cfg_ == o.cfg_; }

 private:
  friend ValidatedScenario validate_scenario(const ScenarioConfig& cfg);
  explicit ValidatedScenario(ScenarioConfig cfg);

  ScenarioConfig cfg_;
  std::unordered_map<int, int> id_to_index_;
};

ValidatedScenario validate_scenario(const ScenarioConfig& cfg);
inline ValidatedScenario validate_scenario(const ValidatedScenario& sc) { return sc; }

inline constexpr int kFeatureCount = 6;
using FeatureVector = std::vector<double>;

// Fixed layout, every component clamped to [0,1]:
//   [ available/total, cqi/15, mcs/28, demand/scale, (priority-1)/2, last_alloc/total ]
FeatureVector normalize_observation(const Observation& o, const ScenarioConfig& cfg);

// splitmix64; used to derive independent seeds for per-slice and per-episode
// random streams.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(a ^ mix_seed(b));
}

}  // namespace slicearb
