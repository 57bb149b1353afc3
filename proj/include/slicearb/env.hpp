#pragma once

// The slicing environment: PRB-to-throughput physics, budget contention,
// reward and satisfaction metrics, and the per-timestep step function.

#include <memory>
#include <vector>

#include "slicearb/domain.hpp"
#include "slicearb/ingest.hpp"

namespace slicearb {

// Link rate for a PRB grant: prbs x 168 symbols/ms x eff bits/symbol x 1000,
// in Mbps. 168 = 12 subcarriers x 14 symbols per 1 ms slot.
double prb_to_throughput(int prbs, int cqi, const ScenarioConfig& cfg);

struct RequiredPrbs {
  int prbs = 0;
  // True when cqi carries no rate (index 0) but demand is positive; prbs is
  // then capped at the budget.
  bool unsatisfiable = false;
};

// Smallest PRB count whose throughput covers the demand, capped at the
// scenario budget.
RequiredPrbs required_prbs(double required_mbps, int cqi, const ScenarioConfig& cfg);

// Largest-remainder proportional scaling when claims exceed the budget;
// leftovers go by (descending remainder, descending priority, ascending id).
// Claims within budget pass through unchanged. Positional: claims[i] must
// belong to scenario slice i.
std::vector<AllocationDecision> resolve_contention(const std::vector<AllocationDecision>& claims,
                                                   const ValidatedScenario& scenario);

// AsWritten:    min(t_req/t_alloc, 1) * priority - penalty_scale * max(0, t_alloc - t_req)
//               (0 when t_alloc is 0: no resources, no reward, no penalty)
// Satisfaction: min(t_alloc/t_req, 1) * priority - penalty_scale * max(0, t_alloc - t_req)
//               (ratio treated as 1 when t_req is 0)
double compute_reward(double t_req, double t_alloc, int priority, RewardMode mode,
                      double penalty_scale = 1.0);

// Allocated over requested PRBs, clamped to [0,1]; 1.0 when nothing was
// requested.
double satisfaction(int alloc_prbs, int req_prbs);

struct EnvState {
  int t = 0;
  int horizon = 0;
  std::vector<int> cqi;
  std::vector<double> required_mbps;
  std::vector<int> last_alloc;
};

struct StepOutcome {
  std::vector<Observation> observations;  // for the next timestep
  std::vector<double> rewards;
  std::vector<AllocationDecision> allocations;  // post-contention grants
  std::vector<double> satisfactions;            // clamped to [0,1]
  bool done = false;
};

class Environment {
 public:
  Environment(ValidatedScenario scenario, std::shared_ptr<DemandSource> source);

  // Starts the next episode; episode seeds are derived from the scenario seed
  // and an internal episode counter, so a fresh Environment replays the same
  // episode sequence.
  std::vector<Observation> reset();
  std::vector<Observation> reset(std::uint64_t episode_seed);

  StepOutcome step(const std::vector<AllocationDecision>& actions);

  const ValidatedScenario& scenario() const { return scenario_; }
  const EnvState& state() const { return state_; }
  int slice_count() const { return scenario_.slice_count(); }
  bool done() const { return done_; }

 private:
  std::vector<Observation> observe() const;

  ValidatedScenario scenario_;
  std::shared_ptr<DemandSource> source_;
  EnvState state_;
  std::uint64_t episode_ = 0;
  bool done_ = true;  // must reset() before stepping
};

}  // namespace slicearb
