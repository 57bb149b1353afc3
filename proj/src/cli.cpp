#include <iostream>

#include <CLI11.hpp>

#include "slicearb/runner.hpp"

namespace slicearb {

int main_cli(int argc, char** argv) {
  CLI::App app{"slicearb: deterministic network-slicing simulator with multi-agent Q-learning"};

  std::string config_path, out_dir, algo_s, reward_mode_s, checkpoint;
  std::vector<std::uint64_t> seeds;
  int k = -1;
  long episodes = -1;
  int threads = 0;
  bool eval_only = false;
  std::vector<std::string> compare_paths;

  app.add_option("--config", config_path, "experiment config JSON")->envname("SLICEARB_CONFIG");
  app.add_option("--algo", algo_s, "algorithm: coop|gcn")->envname("SLICEARB_ALGO");
  app.add_option("--k", k, "neighbors per agent for the knn graph")->envname("SLICEARB_K");
  app.add_option("--episodes", episodes, "training episodes")->envname("SLICEARB_EPISODES");
  app.add_option("--seed", seeds, "seed; repeat for multiple seeds")->envname("SLICEARB_SEED");
  app.add_option("--out", out_dir, "output directory")->envname("SLICEARB_OUT");
  app.add_flag("--eval-only", eval_only, "skip training, evaluate a checkpoint")
      ->envname("SLICEARB_EVAL_ONLY");
  app.add_option("--checkpoint", checkpoint, "checkpoint path for --eval-only")
      ->envname("SLICEARB_CHECKPOINT");
  app.add_option("--reward-mode", reward_mode_s, "as-written|satisfaction")
      ->envname("SLICEARB_REWARD_MODE");
  app.add_option("--threads", threads, "parallel seed workers (default 1)")
      ->envname("SLICEARB_THREADS");
  app.add_option("--compare", compare_paths, "two summary.json files to compare")->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!compare_paths.empty()) {
      const RunSummary a = load_summary(compare_paths[0]);
      const RunSummary b = load_summary(compare_paths[1]);
      std::cout << format_comparison(compare(a, b));
      return 0;
    }

    if (config_path.empty()) {
      std::cerr << "error: --config is required (or use --compare)\n";
      return 1;
    }
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!algo_s.empty()) cfg.train.algo = algo_from_string(algo_s);
    if (k >= 0) cfg.graph.k = k;
    if (episodes >= 0) cfg.train.episodes = episodes;
    if (!seeds.empty()) cfg.seeds = seeds;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!reward_mode_s.empty()) cfg.scenario.reward_mode = reward_mode_from_string(reward_mode_s);
    if (threads > 0) cfg.threads = threads;

    if (eval_only) {
      if (checkpoint.empty()) {
        std::cerr << "error: --eval-only requires --checkpoint\n";
        return 1;
      }
      run_eval_only(cfg, checkpoint);
    } else {
      run(cfg);
    }
    std::cerr << "[slicearb] outputs written to " << cfg.out_dir << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::IoError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace slicearb
