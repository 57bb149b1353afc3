#pragma once

// Deep Q-learning over the attention network plus the fully cooperative
// baseline: replay buffer, target network, epsilon-greedy control, and the
// TD loss with a next-state attention-distribution KL regularizer.

#include <memory>
#include <vector>

#include "slicearb/env.hpp"
#include "slicearb/nn.hpp"

namespace slicearb {

enum class Algo { CoopMarl, GcnAttention };

const char* to_string(Algo a);
Algo algo_from_string(const std::string& s);

struct TrainConfig {
  double gamma = 0.95;
  double learning_rate = 1e-3;
  int batch_size = 32;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  long epsilon_decay_steps = 20000;
  long target_update_period = 200;  // gradient steps between hard copies
  double kl_lambda = 0.03;
  long episodes = 5000;
  Algo algo = Algo::GcnAttention;
  int hidden = 128;
  int heads = 4;
  int action_granularity = 2;  // PRB step between adjacent actions
  std::size_t replay_capacity = 50000;
  long warmup = 500;  // effective warmup is max(batch_size, warmup)

  bool operator==(const TrainConfig&) const = default;
};

void validate_train_config(const TrainConfig& cfg);

// Number of discrete PRB claims: {0, g, 2g, ...} up to the budget.
int action_count(int total_prbs, int granularity);
int claim_for_action(int action, int total_prbs, int granularity);

struct Transition {
  std::vector<FeatureVector> features, next_features;
  AdjacencyGraph graph, next_graph;
  std::vector<int> actions;
  std::vector<double> rewards;
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;
  std::vector<std::size_t> sample(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // index of the oldest element once full
  std::vector<Transition> items_;
};

// Per agent: uniform random action with probability epsilon, otherwise
// argmax with lowest-index tie-break. epsilon <= 0 consumes no randomness.
std::vector<int> select_actions(const std::vector<Vec>& qvalues, double epsilon, Rng& rng);

// Linear decay from epsilon_start to epsilon_end over epsilon_decay_steps.
double epsilon_at(long step, const TrainConfig& cfg);

// Mean KL(target || online) over layers, agents and heads. Distributions are
// aligned on the union of their supports; missing entries are floored at
// 1e-12. Never negative.
double attention_kl(const std::array<AttentionRecord, 2>& target_record,
                    const std::array<AttentionRecord, 2>& online_record);
double attention_kl(const AttentionRecord& target_record, const AttentionRecord& online_record);

// y = r when done, else r + gamma * max_a Q_target(next state, a); the next
// state is evaluated with its own adjacency graph.
std::vector<std::vector<double>> td_targets(const std::vector<const Transition*>& batch,
                                            const DgnNetwork& target, double gamma);

struct TrainStepStats {
  double td_loss = 0.0;
  double kl_loss = 0.0;  // unweighted mean KL
};

// One SGD update of the online parameters on a sampled batch; hard-copies
// the target every cfg.target_update_period gradient steps.
TrainStepStats train_step(DgnNetwork& online, DgnNetwork& target, const ReplayBuffer& buffer,
                          const TrainConfig& cfg, long& gradient_steps, Rng& rng);

// Fully cooperative baseline: each agent's Q head reads its own encoding
// concatenated with the mean encoding of all other agents, i.e. all-to-all
// communication.
struct CoopNetwork {
  NetDims dims;  // heads unused
  MlpParams encoder;
  Matrix q_w;  // actions x 2*hidden
  Vec q_b;

  static CoopNetwork make(const NetDims& dims, std::uint64_t seed);

  bool operator==(const CoopNetwork&) const = default;
};

std::vector<TensorRef> tensor_refs(CoopNetwork& net);
CoopNetwork zeros_like(const CoopNetwork& net);

std::vector<Vec> coop_forward(const std::vector<FeatureVector>& features, const CoopNetwork& net);

std::vector<std::vector<double>> td_targets(const std::vector<const Transition*>& batch,
                                            const CoopNetwork& target, double gamma);
TrainStepStats train_step(CoopNetwork& online, CoopNetwork& target, const ReplayBuffer& buffer,
                          const TrainConfig& cfg, long& gradient_steps, Rng& rng);

void save_checkpoint(const CoopNetwork& net, const std::string& path);
CoopNetwork load_coop_checkpoint(const std::string& path);

// One learning xApp population: shared-parameter online/target networks, a
// replay buffer and the exploration schedule, behind one interface for both
// algorithms.
class LearnerHandle {
 public:
  virtual ~LearnerHandle() = default;
  virtual Algo algo() const = 0;
  virtual const TrainConfig& config() const = 0;
  virtual std::vector<Vec> qvalues(const std::vector<FeatureVector>& features,
                                   const AdjacencyGraph& g) const = 0;
  virtual std::vector<int> act(const std::vector<FeatureVector>& features, const AdjacencyGraph& g,
                               bool exploring) = 0;
  virtual void observe(Transition t) = 0;
  virtual bool ready_to_learn() const = 0;
  virtual TrainStepStats learn_step() = 0;
  virtual void save(const std::string& path) const = 0;
  virtual void load(const std::string& path) = 0;
  virtual std::size_t buffer_size() const = 0;

  static std::unique_ptr<LearnerHandle> make(const TrainConfig& cfg, int feature_dim, int actions,
                                             std::uint64_t seed);
};

struct EpisodeStats {
  double cumulative_reward = 0.0;           // summed over agents and steps
  std::vector<double> mean_satisfaction;    // per slice, mean over steps
  long long messages = 0;
  double mean_td_loss = 0.0;
  double mean_kl_loss = 0.0;
  int train_steps = 0;
};

// Plays one episode. When training, pushes transitions and performs one
// learn step per environment step once the buffer is warm; when evaluating,
// acts greedily and leaves the learner untouched.
EpisodeStats run_episode(Environment& env, LearnerHandle& learner, const GraphSpec& gspec,
                         OverheadLedger& ledger, bool training);

}  // namespace slicearb
