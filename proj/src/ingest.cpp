#include "slicearb/ingest.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace slicearb {

double demand_at(const TrafficModel& model, TrafficClass cls, int ue_count, Rng& rng) {
  if (ue_count < 1) throw Error(Errc::BadConfig, "ue_count must be >= 1");
  double packets_per_sec = 0.0;
  switch (cls) {
    case TrafficClass::Embb:
      return model.embb_mbps_per_ue * ue_count;
    case TrafficClass::Mmtc:
      packets_per_sec = model.mmtc_packets_per_sec;
      break;
    case TrafficClass::Urllc:
      packets_per_sec = model.urllc_packets_per_sec;
      break;
  }
  std::poisson_distribution<long> packets(packets_per_sec * ue_count * model.dt_seconds);
  const long n = packets(rng);
  return static_cast<double>(n) * model.packet_bytes * 8.0 / model.dt_seconds / 1e6;
}

int advance_cqi(int current, const ChannelModel& model, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  int step = 0;
  if (u < model.p_down)
    step = -1;
  else if (u >= model.p_down + model.p_stay)
    step = +1;
  return std::clamp(current + step, model.min_cqi, model.max_cqi);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

long parse_long(const std::string& s, int line_no, const char* field) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::NonNumericField, std::string("line ") + std::to_string(line_no) + ": field '" +
                                           field + "' is not an integer: '" + s + "'");
  }
}

double parse_double(const std::string& s, int line_no, const char* field) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::NonNumericField, std::string("line ") + std::to_string(line_no) + ": field '" +
                                           field + "' is not a number: '" + s + "'");
  }
}

}  // namespace

std::vector<TraceRecord> parse_trace(std::istream& in) {
  static const char* kColumns[4] = {"t", "slice_id", "required_throughput_mbps", "cqi"};

  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::MissingColumn, "line 1: empty trace, header expected");
  const auto header = split_csv_line(line);
  for (const char* col : kColumns) {
    if (std::find(header.begin(), header.end(), col) == header.end())
      throw Error(Errc::MissingColumn, std::string("line 1: missing column '") + col + "'");
  }
  if (header.size() != 4)
    throw Error(Errc::MissingColumn, "line 1: expected exactly 4 columns");
  std::array<int, 4> pos{};
  for (int c = 0; c < 4; ++c)
    pos[c] = static_cast<int>(std::find(header.begin(), header.end(), kColumns[c]) - header.begin());

  struct Row {
    TraceRecord rec;
    int line_no;
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4)
      throw Error(Errc::NonNumericField,
                  "line " + std::to_string(line_no) + ": expected 4 fields, got " +
                      std::to_string(fields.size()));
    TraceRecord r;
    r.t = static_cast<int>(parse_long(fields[pos[0]], line_no, "t"));
    r.slice_id = static_cast<int>(parse_long(fields[pos[1]], line_no, "slice_id"));
    r.required_throughput_mbps = parse_double(fields[pos[2]], line_no, "required_throughput_mbps");
    r.cqi = static_cast<int>(parse_long(fields[pos[3]], line_no, "cqi"));
    if (r.cqi < 1 || r.cqi > 15)
      throw Error(Errc::CqiOutOfRange,
                  "line " + std::to_string(line_no) + ": cqi " + std::to_string(r.cqi) + " outside 1..15");
    if (r.required_throughput_mbps < 0.0)
      throw Error(Errc::NonNumericField,
                  "line " + std::to_string(line_no) + ": required_throughput_mbps must be >= 0");
    rows.push_back({r, line_no});
  }
  if (rows.empty()) throw Error(Errc::MissingColumn, "trace has a header but no data rows");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.rec.t != b.rec.t) return a.rec.t < b.rec.t;
    return a.rec.slice_id < b.rec.slice_id;
  });

  std::map<std::pair<int, int>, int> seen;  // (t, slice) -> line
  for (const Row& row : rows) {
    auto key = std::make_pair(row.rec.t, row.rec.slice_id);
    auto [it, inserted] = seen.emplace(key, row.line_no);
    if (!inserted)
      throw Error(Errc::DuplicateKey, "line " + std::to_string(row.line_no) + ": duplicate (t=" +
                                          std::to_string(row.rec.t) + ", slice_id=" +
                                          std::to_string(row.rec.slice_id) + ")");
  }

  // Every slice must cover every timestep in [t_min, t_max].
  std::set<int> slice_ids;
  for (const Row& row : rows) slice_ids.insert(row.rec.slice_id);
  const int t_min = rows.front().rec.t;
  const int t_max = rows.back().rec.t;
  for (int t = t_min; t <= t_max; ++t) {
    for (int sid : slice_ids) {
      if (seen.count({t, sid})) continue;
      // Report the line of the first later record of this slice, or the last
      // line of the file when the slice simply ends early.
      int report_line = rows.back().line_no;
      for (const Row& row : rows)
        if (row.rec.slice_id == sid && row.rec.t > t) {
          report_line = row.line_no;
          break;
        }
      throw Error(Errc::GapAt, "line " + std::to_string(report_line) + ": missing (t=" +
                                   std::to_string(t) + ", slice_id=" + std::to_string(sid) + ")");
    }
  }

  std::vector<TraceRecord> records;
  records.reserve(rows.size());
  for (const Row& row : rows) records.push_back(row.rec);
  return records;
}

std::vector<TraceRecord> parse_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open trace file '" + path + "'");
  return parse_trace(in);
}

void write_trace(const std::vector<TraceRecord>& records, std::ostream& out) {
  out << "t,slice_id,required_throughput_mbps,cqi\n";
  char buf[64];
  for (const TraceRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.required_throughput_mbps);
    out << r.t << ',' << r.slice_id << ',' << buf << ',' << r.cqi << '\n';
  }
}

SyntheticSource::SyntheticSource(const ValidatedScenario& scenario, TrafficModel traffic,
                                 ChannelModel channel)
    : slices_(scenario.config().slices),
      traffic_(traffic),
      channel_(channel),
      base_seed_(scenario.config().seed) {
  if (traffic_.dt_seconds <= 0.0) throw Error(Errc::BadConfig, "dt_seconds must be > 0");
  streams_.resize(slices_.size());
  cqi_.assign(slices_.size(), channel_.initial_cqi);
}

void SyntheticSource::reset(std::uint64_t episode_seed) {
  for (std::size_t i = 0; i < slices_.size(); ++i) {
    streams_[i].seed(mix_seed(mix_seed(base_seed_, episode_seed), slices_[i].id + 1));
    cqi_[i] = channel_.initial_cqi;
  }
  first_ = true;
}

void SyntheticSource::advance(std::vector<double>& demand_mbps, std::vector<int>& cqi) {
  const std::size_t n = slices_.size();
  demand_mbps.resize(n);
  cqi.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!first_) cqi_[i] = advance_cqi(cqi_[i], channel_, streams_[i]);
    demand_mbps[i] = demand_at(traffic_, slices_[i].traffic, slices_[i].ue_count, streams_[i]);
    cqi[i] = cqi_[i];
  }
  first_ = false;
}

TraceSource::TraceSource(std::vector<TraceRecord> records, const ValidatedScenario& scenario) {
  n_ = scenario.slice_count();
  std::set<int> trace_ids;
  for (const TraceRecord& r : records) trace_ids.insert(r.slice_id);
  std::set<int> scenario_ids;
  for (int i = 0; i < n_; ++i) scenario_ids.insert(scenario.slice(i).id);
  if (trace_ids != scenario_ids)
    throw Error(Errc::BadConfig, "trace slice ids do not match the scenario's slice ids");

  const int t_min = records.front().t;
  const int t_max = records.back().t;
  steps_ = t_max - t_min + 1;
  demand_.assign(steps_, std::vector<double>(n_, 0.0));
  cqi_.assign(steps_, std::vector<int>(n_, 1));
  for (const TraceRecord& r : records) {
    const int idx = scenario.index_of(r.slice_id);
    demand_[r.t - t_min][idx] = r.required_throughput_mbps;
    cqi_[r.t - t_min][idx] = r.cqi;
  }
}

void TraceSource::reset(std::uint64_t) { cursor_ = 0; }

void TraceSource::advance(std::vector<double>& demand_mbps, std::vector<int>& cqi) {
  if (cursor_ >= steps_)
    throw Error(Errc::IoError, "trace exhausted at timestep " + std::to_string(cursor_));
  demand_mbps = demand_[cursor_];
  cqi = cqi_[cursor_];
  ++cursor_;
}

namespace {

ScenarioConfig build_scenario(int embb, int mmtc, int urllc) {
  ScenarioConfig cfg;
  cfg.total_prbs = 50;
  cfg.bandwidth_mhz = 10.0;
  int id = 0;
  for (int i = 0; i < embb; ++i) cfg.slices.push_back({id++, TrafficClass::Embb, 2, 1});
  for (int i = 0; i < mmtc; ++i) cfg.slices.push_back({id++, TrafficClass::Mmtc, 1, 1});
  for (int i = 0; i < urllc; ++i) cfg.slices.push_back({id++, TrafficClass::Urllc, 3, 1});
  return cfg;
}

}  // namespace

ScenarioConfig build_paper_scenario() { return build_scenario(4, 3, 3); }

ScenarioConfig build_paper_scenario_20() { return build_scenario(8, 6, 6); }

}  // namespace slicearb
