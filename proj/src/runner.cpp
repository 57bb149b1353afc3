#include "slicearb/runner.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "slicearb/ingest.hpp"

namespace slicearb {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Json scenario_to_json(const ScenarioConfig& s) {
  Json j;
  Json slices = Json::array();
  for (const SliceSpec& sl : s.slices) {
    Json e;
    e["id"] = sl.id;
    e["traffic"] = to_string(sl.traffic);
    e["priority"] = sl.priority;
    e["ue_count"] = sl.ue_count;
    slices.push_back(e);
  }
  j["slices"] = slices;
  j["total_prbs"] = s.total_prbs;
  j["bandwidth_mhz"] = s.bandwidth_mhz;
  j["horizon"] = s.horizon;
  j["cqi_table"] = s.cqi_table;
  j["seed"] = s.seed;
  j["throughput_scale_mbps"] = s.throughput_scale_mbps;
  j["penalty_scale"] = s.penalty_scale;
  j["reward_mode"] = to_string(s.reward_mode);
  return j;
}

ScenarioConfig scenario_from_json(const Json& j) {
  ScenarioConfig s;
  if (j.contains("preset")) {
    const std::string preset = j.at("preset").get<std::string>();
    if (preset == "paper10")
      s = build_paper_scenario();
    else if (preset == "paper20")
      s = build_paper_scenario_20();
    else
      throw Error(Errc::BadConfig, "unknown scenario preset '" + preset + "'");
  }
  if (j.contains("slices")) {
    s.slices.clear();
    for (const auto& e : j.at("slices")) {
      SliceSpec sl;
      sl.id = e.at("id").get<int>();
      sl.traffic = traffic_class_from_string(e.at("traffic").get<std::string>());
      sl.priority = e.at("priority").get<int>();
      sl.ue_count = e.value("ue_count", 1);
      s.slices.push_back(sl);
    }
  }
  if (s.slices.empty())
    throw Error(Errc::BadConfig, "scenario: either a preset or a slices list is required");
  if (j.contains("total_prbs")) s.total_prbs = j.at("total_prbs").get<int>();
  if (j.contains("bandwidth_mhz")) s.bandwidth_mhz = j.at("bandwidth_mhz").get<double>();
  if (j.contains("horizon")) s.horizon = j.at("horizon").get<int>();
  if (j.contains("cqi_table")) s.cqi_table = j.at("cqi_table").get<std::vector<double>>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("throughput_scale_mbps"))
    s.throughput_scale_mbps = j.at("throughput_scale_mbps").get<double>();
  if (j.contains("penalty_scale")) s.penalty_scale = j.at("penalty_scale").get<double>();
  if (j.contains("reward_mode"))
    s.reward_mode = reward_mode_from_string(j.at("reward_mode").get<std::string>());
  return s;
}

Json train_to_json(const TrainConfig& t) {
  Json j;
  j["algo"] = to_string(t.algo);
  j["gamma"] = t.gamma;
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["epsilon_start"] = t.epsilon_start;
  j["epsilon_end"] = t.epsilon_end;
  j["epsilon_decay_steps"] = t.epsilon_decay_steps;
  j["target_update_period"] = t.target_update_period;
  j["kl_lambda"] = t.kl_lambda;
  j["episodes"] = t.episodes;
  j["hidden"] = t.hidden;
  j["heads"] = t.heads;
  j["action_granularity"] = t.action_granularity;
  j["replay_capacity"] = t.replay_capacity;
  j["warmup"] = t.warmup;
  return j;
}

TrainConfig train_from_json(const Json& j) {
  TrainConfig t;
  if (j.contains("algo")) t.algo = algo_from_string(j.at("algo").get<std::string>());
  if (j.contains("gamma")) t.gamma = j.at("gamma").get<double>();
  if (j.contains("learning_rate")) t.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<int>();
  if (j.contains("epsilon_start")) t.epsilon_start = j.at("epsilon_start").get<double>();
  if (j.contains("epsilon_end")) t.epsilon_end = j.at("epsilon_end").get<double>();
  if (j.contains("epsilon_decay_steps"))
    t.epsilon_decay_steps = j.at("epsilon_decay_steps").get<long>();
  if (j.contains("target_update_period"))
    t.target_update_period = j.at("target_update_period").get<long>();
  if (j.contains("kl_lambda")) t.kl_lambda = j.at("kl_lambda").get<double>();
  if (j.contains("episodes")) t.episodes = j.at("episodes").get<long>();
  if (j.contains("hidden")) t.hidden = j.at("hidden").get<int>();
  if (j.contains("heads")) t.heads = j.at("heads").get<int>();
  if (j.contains("action_granularity")) t.action_granularity = j.at("action_granularity").get<int>();
  if (j.contains("replay_capacity")) t.replay_capacity = j.at("replay_capacity").get<std::size_t>();
  if (j.contains("warmup")) t.warmup = j.at("warmup").get<long>();
  return t;
}

Json graph_to_json(const GraphSpec& g) {
  Json j;
  j["mode"] = g.mode == GraphMode::Full ? "full" : "knn";
  j["k"] = g.k;
  j["knn_recomputed_per_step"] = true;
  return j;
}

GraphSpec graph_from_json(const Json& j) {
  GraphSpec g;
  if (j.contains("mode")) {
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "full")
      g.mode = GraphMode::Full;
    else if (mode == "knn")
      g.mode = GraphMode::Knn;
    else
      throw Error(Errc::BadConfig, "graph.mode must be 'full' or 'knn'");
  }
  if (j.contains("k")) g.k = j.at("k").get<int>();
  return g;
}

// out_dir and threads are execution details, not experiment identity; the
// echo must be byte-stable across reruns into different directories.
Json config_echo(const ExperimentConfig& cfg) {
  Json j;
  j["scenario"] = scenario_to_json(cfg.scenario);
  j["trace"] = cfg.trace_path;
  j["train"] = train_to_json(cfg.train);
  j["graph"] = graph_to_json(cfg.graph);
  j["eval_episodes"] = cfg.eval_episodes;
  j["seeds"] = cfg.seeds;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  if (!j.contains("scenario")) throw Error(Errc::BadConfig, "config missing 'scenario'");
  cfg.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("trace")) cfg.trace_path = j.at("trace").get<std::string>();
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
  if (j.contains("graph")) cfg.graph = graph_from_json(j.at("graph"));
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("eval_episodes")) cfg.eval_episodes = j.at("eval_episodes").get<int>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  return cfg;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error(Errc::BadConfig, "config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

void validate_experiment_config(const ExperimentConfig& cfg) {
  const ValidatedScenario sc = validate_scenario(cfg.scenario);
  validate_train_config(cfg.train);
  if (cfg.seeds.empty()) throw Error(Errc::BadConfig, "at least one seed required");
  if (cfg.eval_episodes < 1) throw Error(Errc::BadConfig, "eval_episodes must be >= 1");
  if (cfg.threads < 1) throw Error(Errc::BadConfig, "threads must be >= 1");
  const int n = sc.slice_count();
  if (cfg.graph.mode == GraphMode::Knn && cfg.graph.k > n - 1)
    throw Error(Errc::KTooLarge, "graph.k=" + std::to_string(cfg.graph.k) +
                                     " exceeds n-1=" + std::to_string(n - 1));
  if (cfg.graph.k < 0) throw Error(Errc::BadConfig, "graph.k must be >= 0");
}

namespace {

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                    const std::string* checkpoint, const std::string& curve_path,
                    const std::string& checkpoint_out) {
  const auto t0 = std::chrono::steady_clock::now();

  ScenarioConfig sc = cfg.scenario;
  sc.seed = seed;
  const ValidatedScenario scenario = validate_scenario(sc);
  std::shared_ptr<DemandSource> source;
  if (cfg.trace_path.empty())
    source = std::make_shared<SyntheticSource>(scenario);
  else
    source = std::make_shared<TraceSource>(parse_trace_file(cfg.trace_path), scenario);
  Environment env(scenario, source);

  const int actions = action_count(sc.total_prbs, cfg.train.action_granularity);
  auto learner = LearnerHandle::make(cfg.train, kFeatureCount, actions, mix_seed(seed, 0xa9e17ULL));
  if (checkpoint) learner->load(*checkpoint);

  OverheadLedger ledger;
  SeedResult result;
  result.seed = seed;

  std::ofstream curve(curve_path);
  if (!curve) throw Error(Errc::IoError, "cannot write '" + curve_path + "'");
  if (!checkpoint) {
    const long report_every = std::max<long>(1, cfg.train.episodes / 10);
    for (long ep = 0; ep < cfg.train.episodes; ++ep) {
      const EpisodeStats st = run_episode(env, *learner, cfg.graph, ledger, true);
      result.reward_curve.push_back(st.cumulative_reward);
      curve << ep << ',' << seed << ',' << fmt_double(st.cumulative_reward) << '\n';
      curve.flush();
      if ((ep + 1) % report_every == 0)
        std::cerr << "[slicearb] seed " << seed << " episode " << (ep + 1) << '/'
                  << cfg.train.episodes << " reward " << st.cumulative_reward << " td "
                  << st.mean_td_loss << "\n";
    }
    learner->save(checkpoint_out);
  }

  const int n = env.slice_count();
  result.mean_satisfaction.assign(n, 0.0);
  for (int ep = 0; ep < cfg.eval_episodes; ++ep) {
    const EpisodeStats st = run_episode(env, *learner, cfg.graph, ledger, false);
    for (int i = 0; i < n; ++i) result.mean_satisfaction[i] += st.mean_satisfaction[i];
  }
  for (double& s : result.mean_satisfaction) s /= cfg.eval_episodes;

  result.messages_total = ledger.cumulative_messages;
  result.messages_per_step = messages_per_step(cfg.graph, n);
  if (n >= 2) {
    const int k = cfg.graph.mode == GraphMode::Knn ? std::min(cfg.graph.k, n - 1) : n - 1;
    result.reduction_pct = overhead_reduction(n, k);
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

Json summary_to_json(const RunSummary& summary) {
  Json j;
  j["version"] = summary.version;
  j["config"] = config_echo(summary.config);
  Json results = Json::array();
  for (const SeedResult& r : summary.seeds) {
    Json e;
    e["seed"] = r.seed;
    e["reward_curve"] = r.reward_curve;
    e["mean_satisfaction"] = r.mean_satisfaction;
    e["messages_total"] = r.messages_total;
    e["messages_per_step"] = r.messages_per_step;
    e["overhead_reduction_pct"] = r.reduction_pct;
    results.push_back(e);
  }
  j["results"] = results;
  return j;
}

class OutputSet {
 public:
  explicit OutputSet(const std::string& dir) : dir_(dir) {}

  std::string path(const std::string& name) {
    const std::string p = (fs::path(dir_) / name).string();
    created_.push_back(p);
    return p;
  }

  void remove_all() {
    std::error_code ec;
    for (const std::string& p : created_) fs::remove(p, ec);
  }

  void discard(const std::string& p) {
    std::error_code ec;
    fs::remove(p, ec);
  }

 private:
  std::string dir_;
  std::vector<std::string> created_;
};

RunSummary run_impl(const ExperimentConfig& config, const std::string* checkpoint) {
  validate_experiment_config(config);
  if (checkpoint) {
    const std::string kind = checkpoint_kind(*checkpoint);
    const std::string want = config.train.algo == Algo::GcnAttention ? "dgn" : "coop";
    if (kind != want)
      throw Error(Errc::BadConfig, "checkpoint kind '" + kind + "' does not match algo");
  }
  fs::create_directories(config.out_dir);
  OutputSet outputs(config.out_dir);

  try {
    const std::size_t n_seeds = config.seeds.size();
    std::vector<SeedResult> results(n_seeds);
    // Register all per-seed files up front; workers only write.
    std::vector<std::string> curve_paths(n_seeds), ckpt_paths(n_seeds);
    for (std::size_t s = 0; s < n_seeds; ++s) {
      curve_paths[s] = outputs.path("reward_curve.seed" + std::to_string(config.seeds[s]) + ".csv");
      ckpt_paths[s] = outputs.path("checkpoint.seed" + std::to_string(config.seeds[s]) + ".txt");
    }

    const int workers = std::min<int>(config.threads, static_cast<int>(n_seeds));
    std::vector<std::exception_ptr> errors(n_seeds);
    auto work = [&](std::size_t s) {
      try {
        results[s] = run_seed(config, config.seeds[s], checkpoint, curve_paths[s], ckpt_paths[s]);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    };
    if (workers <= 1) {
      for (std::size_t s = 0; s < n_seeds; ++s) work(s);
    } else {
      std::vector<std::thread> pool;
      std::mutex queue_mutex;
      std::size_t next = 0;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
          while (true) {
            std::size_t s;
            {
              std::lock_guard<std::mutex> lock(queue_mutex);
              if (next >= n_seeds) return;
              s = next++;
            }
            work(s);
          }
        });
      for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);

    RunSummary summary;
    summary.config = config;
    summary.seeds = std::move(results);

    // Merge per-seed reward curves into the final CSV, seeds in config order.
    {
      std::ofstream out(outputs.path("reward_curve.csv"));
      out << "episode,seed,cumulative_reward\n";
      for (std::size_t s = 0; s < n_seeds; ++s) {
        std::ifstream in(curve_paths[s]);
        std::ostringstream rows;
        rows << in.rdbuf();
        out << rows.str();
      }
      if (!out) throw Error(Errc::IoError, "failed writing reward_curve.csv");
    }
    for (const std::string& p : curve_paths) outputs.discard(p);

    {
      std::ofstream out(outputs.path("satisfaction.csv"));
      out << "seed,slice_id,class,priority,mean_satisfaction\n";
      for (const SeedResult& r : summary.seeds)
        for (std::size_t i = 0; i < r.mean_satisfaction.size(); ++i) {
          const SliceSpec& sl = config.scenario.slices[i];
          out << r.seed << ',' << sl.id << ',' << to_string(sl.traffic) << ',' << sl.priority
              << ',' << fmt_double(r.mean_satisfaction[i]) << '\n';
        }
      if (!out) throw Error(Errc::IoError, "failed writing satisfaction.csv");
    }

    {
      const int n = static_cast<int>(config.scenario.slices.size());
      std::ofstream out(outputs.path("overhead.csv"));
      out << "seed,algo,n,k,messages_per_step,reduction_pct\n";
      for (const SeedResult& r : summary.seeds) {
        const int k = config.graph.mode == GraphMode::Knn ? config.graph.k : n - 1;
        out << r.seed << ',' << to_string(config.train.algo) << ',' << n << ',' << k << ','
            << r.messages_per_step << ',' << fmt_double(r.reduction_pct) << '\n';
      }
      if (!out) throw Error(Errc::IoError, "failed writing overhead.csv");
    }

    {
      std::ofstream out(outputs.path("summary.json"));
      out << summary_to_json(summary).dump(2) << '\n';
      if (!out) throw Error(Errc::IoError, "failed writing summary.json");
    }

    {
      Json timing;
      Json per_seed = Json::array();
      double total = 0.0;
      for (const SeedResult& r : summary.seeds) {
        Json e;
        e["seed"] = r.seed;
        e["wall_seconds"] = r.wall_seconds;
        per_seed.push_back(e);
        total += r.wall_seconds;
      }
      timing["seeds"] = per_seed;
      timing["total_wall_seconds"] = total;
      std::ofstream out(outputs.path("timing.json"));
      out << timing.dump(2) << '\n';
    }

    return summary;
  } catch (...) {
    outputs.remove_all();
    throw;
  }
}

}  // namespace

RunSummary run(const ExperimentConfig& config) { return run_impl(config, nullptr); }

RunSummary run_eval_only(const ExperimentConfig& config, const std::string& checkpoint_path) {
  return run_impl(config, &checkpoint_path);
}

std::string summary_to_json_text(const RunSummary& summary) {
  return summary_to_json(summary).dump(2) + "\n";
}

RunSummary load_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open summary '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error(Errc::IoError, "summary '" + path + "': " + e.what());
  }
  RunSummary summary;
  summary.version = j.value("version", "");
  summary.config = config_from_json(j.at("config"));
  for (const auto& e : j.at("results")) {
    SeedResult r;
    r.seed = e.at("seed").get<std::uint64_t>();
    r.reward_curve = e.at("reward_curve").get<std::vector<double>>();
    r.mean_satisfaction = e.at("mean_satisfaction").get<std::vector<double>>();
    r.messages_total = e.at("messages_total").get<long long>();
    r.messages_per_step = e.at("messages_per_step").get<long long>();
    r.reduction_pct = e.at("overhead_reduction_pct").get<double>();
    summary.seeds.push_back(std::move(r));
  }
  return summary;
}

Comparison compare(const RunSummary& a, const RunSummary& b) {
  if (a.config.scenario != b.config.scenario)
    throw Error(Errc::ScenarioMismatch, "summaries come from different scenarios");
  if (a.config.seeds != b.config.seeds)
    throw Error(Errc::ScenarioMismatch, "summaries use different seeds");
  if (a.seeds.empty() || a.seeds.size() != b.seeds.size())
    throw Error(Errc::ScenarioMismatch, "summaries have different seed result counts");

  const std::size_t n = a.config.scenario.slices.size();
  Comparison c;
  c.rows.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SliceSpec& sl = a.config.scenario.slices[i];
    double sat_a = 0.0, sat_b = 0.0;
    for (const SeedResult& r : a.seeds) sat_a += r.mean_satisfaction.at(i);
    for (const SeedResult& r : b.seeds) sat_b += r.mean_satisfaction.at(i);
    sat_a /= a.seeds.size();
    sat_b /= b.seeds.size();
    c.rows[i] = {sl.id, to_string(sl.traffic), sl.priority, sat_a, sat_b};
  }

  c.min_a = c.rows[0].satisfaction_a;
  c.min_b = c.rows[0].satisfaction_b;
  for (const auto& row : c.rows) {
    if (row.satisfaction_a >= 0.8) ++c.above_80_a;
    if (row.satisfaction_b >= 0.8) ++c.above_80_b;
    c.min_a = std::min(c.min_a, row.satisfaction_a);
    c.min_b = std::min(c.min_b, row.satisfaction_b);
    c.mean_a += row.satisfaction_a;
    c.mean_b += row.satisfaction_b;
  }
  c.mean_a /= static_cast<double>(n);
  c.mean_b /= static_cast<double>(n);
  for (const SeedResult& r : a.seeds) c.messages_a += r.messages_total;
  for (const SeedResult& r : b.seeds) c.messages_b += r.messages_total;
  return c;
}

std::string format_comparison(const Comparison& c) {
  std::ostringstream out;
  char buf[160];
  out << "slice  class  prio      sat_a      sat_b      delta\n";
  for (const auto& row : c.rows) {
    std::snprintf(buf, sizeof(buf), "%5d  %-5s  %4d  %9.4f  %9.4f  %+9.4f\n", row.slice_id,
                  row.traffic.c_str(), row.priority, row.satisfaction_a, row.satisfaction_b,
                  row.satisfaction_b - row.satisfaction_a);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "slices >= 0.80: %d vs %d\nmin slice:      %.4f vs %.4f\nmean:           %.4f vs "
                "%.4f\nmessages:       %lld vs %lld\n",
                c.above_80_a, c.above_80_b, c.min_a, c.min_b, c.mean_a, c.mean_b, c.messages_a,
                c.messages_b);
  out << buf;
  return out.str();
}

}  // namespace slicearb
