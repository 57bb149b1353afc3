#include "slicearb/env.hpp"

#include <algorithm>
#include <numeric>

namespace slicearb {

double prb_to_throughput(int prbs, int cqi, const ScenarioConfig& cfg) {
  if (cqi < 0 || cqi >= static_cast<int>(cfg.cqi_table.size()))
    throw Error(Errc::CqiOutOfRange, "cqi " + std::to_string(cqi) + " outside 0..15");
  if (prbs < 0) throw Error(Errc::BadConfig, "prbs must be >= 0");
  return prbs * 168.0 * cfg.cqi_table[cqi] * 1000.0 / 1e6;
}

RequiredPrbs required_prbs(double required_mbps, int cqi, const ScenarioConfig& cfg) {
  if (required_mbps < 0.0) throw Error(Errc::BadConfig, "demand must be >= 0");
  if (required_mbps == 0.0) return {0, false};
  if (cqi == 0) return {cfg.total_prbs, true};

  const double per_prb = prb_to_throughput(1, cqi, cfg);
  // Start from the analytic estimate, then settle on the exact boundary.
  int p = per_prb > 0.0 ? static_cast<int>(required_mbps / per_prb) : cfg.total_prbs;
  p = std::clamp(p, 0, cfg.total_prbs);
  while (p > 0 && prb_to_throughput(p - 1, cqi, cfg) >= required_mbps) --p;
  while (p < cfg.total_prbs && prb_to_throughput(p, cqi, cfg) < required_mbps) ++p;
  return {p, false};
}

std::vector<AllocationDecision> resolve_contention(const std::vector<AllocationDecision>& claims,
                                                   const ValidatedScenario& scenario) {
  const ScenarioConfig& cfg = scenario.config();
  const int n = scenario.slice_count();
  if (static_cast<int>(claims.size()) != n)
    throw Error(Errc::ActionCountMismatch, "expected " + std::to_string(n) + " claims, got " +
                                               std::to_string(claims.size()));
  long long total = 0;
  for (int i = 0; i < n; ++i) {
    if (claims[i].slice_id != scenario.slice(i).id)
      throw Error(Errc::BadConfig, "claim order does not match scenario slice order");
    if (claims[i].prbs_claimed < 0 || claims[i].prbs_claimed > cfg.total_prbs)
      throw Error(Errc::BadConfig, "claim outside 0..total_prbs");
    total += claims[i].prbs_claimed;
  }
  if (total <= cfg.total_prbs) return claims;

  // grant_i = floor(budget * claim_i / total); all arithmetic on integers so
  // remainder comparisons are exact.
  const long long budget = cfg.total_prbs;
  std::vector<AllocationDecision> grants(claims);
  std::vector<long long> remainder(n);
  long long assigned = 0;
  for (int i = 0; i < n; ++i) {
    const long long num = budget * claims[i].prbs_claimed;
    grants[i].prbs_claimed = static_cast<int>(num / total);
    remainder[i] = num % total;
    assigned += grants[i].prbs_claimed;
  }
  long long leftover = budget - assigned;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
    const int pa = scenario.slice(a).priority, pb = scenario.slice(b).priority;
    if (pa != pb) return pa > pb;
    return scenario.slice(a).id < scenario.slice(b).id;
  });
  for (int t = 0; t < n && leftover > 0; ++t, --leftover) ++grants[order[t]].prbs_claimed;
  return grants;
}

double compute_reward(double t_req, double t_alloc, int priority, RewardMode mode,
                      double penalty_scale) {
  if (priority < 1 || priority > 3) throw Error(Errc::BadPriority, "priority must be in {1,2,3}");
  if (mode == RewardMode::AsWritten) {
    if (t_alloc == 0.0) return 0.0;
    return std::min(t_req / t_alloc, 1.0) * priority - penalty_scale * std::max(0.0, t_alloc - t_req);
  }
  const double ratio = t_req == 0.0 ? 1.0 : std::min(t_alloc / t_req, 1.0);
  return ratio * priority - penalty_scale * std::max(0.0, t_alloc - t_req);
}

double satisfaction(int alloc_prbs, int req_prbs) {
  if (req_prbs < 0) throw Error(Errc::BadConfig, "requested prbs must be >= 0");
  if (req_prbs == 0) return 1.0;
  return std::clamp(static_cast<double>(alloc_prbs) / req_prbs, 0.0, 1.0);
}

Environment::Environment(ValidatedScenario scenario, std::shared_ptr<DemandSource> source)
    : scenario_(std::move(scenario)), source_(std::move(source)) {
  if (!source_) throw Error(Errc::BadConfig, "environment needs a demand source");
  if (source_->slice_count() != scenario_.slice_count())
    throw Error(Errc::BadConfig, "demand source slice count does not match scenario");
  // A full episode consumes horizon+1 timesteps (initial observation plus one
  // advance per step).
  if (source_->timesteps() >= 0 && source_->timesteps() < scenario_.config().horizon + 1)
    throw Error(Errc::BadConfig, "demand source too short for the scenario horizon");
}

std::vector<Observation> Environment::reset() {
  return reset(mix_seed(scenario_.config().seed, episode_++));
}

std::vector<Observation> Environment::reset(std::uint64_t episode_seed) {
  const int n = slice_count();
  state_.t = 0;
  state_.horizon = scenario_.config().horizon;
  state_.last_alloc.assign(n, 0);
  source_->reset(episode_seed);
  source_->advance(state_.required_mbps, state_.cqi);
  done_ = false;
  return observe();
}

std::vector<Observation> Environment::observe() const {
  const ScenarioConfig& cfg = scenario_.config();
  const int n = slice_count();
  long long granted = 0;
  for (int i = 0; i < n; ++i) granted += state_.last_alloc[i];
  std::vector<Observation> obs(n);
  for (int i = 0; i < n; ++i) {
    Observation& o = obs[i];
    // Pool not consumed by the other agents' most recent grants.
    const long long others = granted - state_.last_alloc[i];
    o.available_prbs = static_cast<int>(std::clamp<long long>(cfg.total_prbs - others, 0, cfg.total_prbs));
    o.cqi = state_.cqi[i];
    o.mcs = mcs_from_cqi(state_.cqi[i]);
    o.required_throughput = state_.required_mbps[i];
    o.priority = scenario_.slice(i).priority;
    o.last_alloc_prbs = state_.last_alloc[i];
  }
  return obs;
}

StepOutcome Environment::step(const std::vector<AllocationDecision>& actions) {
  if (done_) throw Error(Errc::StepAfterDone, "step after episode end; reset first");
  const int n = slice_count();
  if (static_cast<int>(actions.size()) != n)
    throw Error(Errc::ActionCountMismatch, "expected " + std::to_string(n) + " actions, got " +
                                               std::to_string(actions.size()));
  const ScenarioConfig& cfg = scenario_.config();

  StepOutcome out;
  out.allocations = resolve_contention(actions, scenario_);
  out.rewards.resize(n);
  out.satisfactions.resize(n);
  for (int i = 0; i < n; ++i) {
    const int grant = out.allocations[i].prbs_claimed;
    const double t_alloc = prb_to_throughput(grant, state_.cqi[i], cfg);
    out.rewards[i] = compute_reward(state_.required_mbps[i], t_alloc, scenario_.slice(i).priority,
                                    cfg.reward_mode, cfg.penalty_scale);
    out.satisfactions[i] = satisfaction(grant, required_prbs(state_.required_mbps[i], state_.cqi[i], cfg).prbs);
    state_.last_alloc[i] = grant;
  }

  state_.t += 1;
  out.done = state_.t == state_.horizon;
  done_ = out.done;
  source_->advance(state_.required_mbps, state_.cqi);
  out.observations = observe();
  return out;
}

}  // namespace slicearb
