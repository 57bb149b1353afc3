#pragma once

// Traffic demand and channel evolution. Two interchangeable sources feed the
// environment: synthetic generators (constant-rate and Poisson traffic plus a
// bounded random-walk channel) and CSV trace replay.

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "slicearb/domain.hpp"

namespace slicearb {

struct TrafficModel {
  double embb_mbps_per_ue = 4.0;
  double mmtc_packets_per_sec = 30.0;
  double urllc_packets_per_sec = 10.0;
  double packet_bytes = 125.0;
  double dt_seconds = 1.0;
};

struct ChannelModel {
  int initial_cqi = 9;
  double p_down = 0.2;
  double p_stay = 0.6;
  double p_up = 0.2;
  int min_cqi = 1;
  int max_cqi = 15;
};

// One slice's offered load for one timestep, in Mbps.
double demand_at(const TrafficModel& model, TrafficClass cls, int ue_count, Rng& rng);

// Bounded random walk over CQI indices.
int advance_cqi(int current, const ChannelModel& model, Rng& rng);

struct TraceRecord {
  int t = 0;
  int slice_id = 0;
  double required_throughput_mbps = 0.0;
  int cqi = 1;

  bool operator==(const TraceRecord&) const = default;
};

// CSV with header `t,slice_id,required_throughput_mbps,cqi`. Records are
// returned sorted by (t, slice_id); duplicates and gaps are rejected. Errors
// carry the 1-based line number.
std::vector<TraceRecord> parse_trace(std::istream& in);
std::vector<TraceRecord> parse_trace_file(const std::string& path);
void write_trace(const std::vector<TraceRecord>& records, std::ostream& out);

// Per-episode supplier of demand and channel state, one entry per slice per
// timestep. The environment depends only on this interface, so trace replay
// and synthetic generation are indistinguishable to it.
class DemandSource {
 public:
  virtual ~DemandSource() = default;
  virtual int slice_count() const = 0;
  // Timesteps available per episode, or -1 when unbounded.
  virtual long timesteps() const = 0;
  virtual void reset(std::uint64_t episode_seed) = 0;
  // Fills values for the next timestep; first call after reset is t=0.
  virtual void advance(std::vector<double>& demand_mbps, std::vector<int>& cqi) = 0;
};

class SyntheticSource final : public DemandSource {
 public:
  SyntheticSource(const ValidatedScenario& scenario, TrafficModel traffic = {},
                  ChannelModel channel = {});

  int slice_count() const override { return static_cast<int>(slices_.size()); }
  long timesteps() const override { return -1; }
  void reset(std::uint64_t episode_seed) override;
  void advance(std::vector<double>& demand_mbps, std::vector<int>& cqi) override;

 private:
  std::vector<SliceSpec> slices_;
  TrafficModel traffic_;
  ChannelModel channel_;
  std::uint64_t base_seed_;
  std::vector<Rng> streams_;  // one per slice
  std::vector<int> cqi_;
  bool first_ = true;
};

class TraceSource final : public DemandSource {
 public:
  TraceSource(std::vector<TraceRecord> records, const ValidatedScenario& scenario);

  int slice_count() const override { return n_; }
  long timesteps() const override { return steps_; }
  void reset(std::uint64_t episode_seed) override;  // rewinds; seed ignored
  void advance(std::vector<double>& demand_mbps, std::vector<int>& cqi) override;

 private:
  int n_ = 0;
  long steps_ = 0;
  long cursor_ = 0;
  // [t][slice index]
  std::vector<std::vector<double>> demand_;
  std::vector<std::vector<int>> cqi_;
};

// The 10-slice reference scenario: 4 eMBB, 3 mMTC, 3 URLLC over 50 PRBs.
ScenarioConfig build_paper_scenario();
// 20-slice variant: 8 eMBB, 6 mMTC, 6 URLLC.
ScenarioConfig build_paper_scenario_20();

}  // namespace slicearb
