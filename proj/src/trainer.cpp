#include "slicearb/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace slicearb {

const char* to_string(Algo a) { return a == Algo::CoopMarl ? "coop" : "gcn"; }

Algo algo_from_string(const std::string& s) {
  if (s == "coop") return Algo::CoopMarl;
  if (s == "gcn") return Algo::GcnAttention;
  throw Error(Errc::BadConfig, "unknown algo '" + s + "' (expected coop or gcn)");
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.gamma < 0.0 || cfg.gamma > 1.0) throw Error(Errc::BadConfig, "gamma must be in [0,1]");
  if (cfg.learning_rate <= 0.0) throw Error(Errc::BadConfig, "learning_rate must be > 0");
  if (cfg.batch_size < 1) throw Error(Errc::BadConfig, "batch_size must be >= 1");
  if (cfg.epsilon_end > cfg.epsilon_start)
    throw Error(Errc::BadConfig, "epsilon_end must not exceed epsilon_start");
  if (cfg.epsilon_start < 0.0 || cfg.epsilon_start > 1.0 || cfg.epsilon_end < 0.0)
    throw Error(Errc::BadConfig, "epsilon bounds must be in [0,1]");
  if (cfg.epsilon_decay_steps < 1) throw Error(Errc::BadConfig, "epsilon_decay_steps must be >= 1");
  if (cfg.target_update_period < 1) throw Error(Errc::BadConfig, "target_update_period must be >= 1");
  if (cfg.kl_lambda < 0.0) throw Error(Errc::BadConfig, "kl_lambda must be >= 0");
  if (cfg.episodes < 0) throw Error(Errc::BadConfig, "episodes must be >= 0");
  if (cfg.hidden < 1 || cfg.heads < 1 || cfg.hidden % cfg.heads != 0)
    throw Error(Errc::BadConfig, "heads must divide hidden width");
  if (cfg.action_granularity < 1) throw Error(Errc::BadConfig, "action_granularity must be >= 1");
  if (cfg.replay_capacity < static_cast<std::size_t>(cfg.batch_size))
    throw Error(Errc::BadConfig, "replay_capacity must hold at least one batch");
}

int action_count(int total_prbs, int granularity) { return total_prbs / granularity + 1; }

int claim_for_action(int action, int total_prbs, int granularity) {
  return std::min(action * granularity, total_prbs);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw Error(Errc::BadConfig, "replay capacity must be >= 1");
  items_.reserve(std::min<std::size_t>(capacity_, 4096));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw Error(Errc::BadConfig, "replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  if (items_.size() < batch)
    throw Error(Errc::BufferTooSmall, "replay holds " + std::to_string(items_.size()) +
                                          " transitions, batch needs " + std::to_string(batch));
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

std::vector<int> select_actions(const std::vector<Vec>& qvalues, double epsilon, Rng& rng) {
  std::vector<int> actions(qvalues.size(), 0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t i = 0; i < qvalues.size(); ++i) {
    const int n_actions = static_cast<int>(qvalues[i].size());
    if (epsilon > 0.0 && u01(rng) < epsilon) {
      std::uniform_int_distribution<int> pick(0, n_actions - 1);
      actions[i] = pick(rng);
      continue;
    }
    int best = 0;
    for (int a = 1; a < n_actions; ++a)
      if (qvalues[i][a] > qvalues[i][best]) best = a;
    actions[i] = best;
  }
  return actions;
}

double epsilon_at(long step, const TrainConfig& cfg) {
  if (step < 0) throw Error(Errc::BadConfig, "step must be >= 0");
  if (step >= cfg.epsilon_decay_steps) return cfg.epsilon_end;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.epsilon_decay_steps);
  return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
}

namespace {

constexpr double kProbFloor = 1e-12;

double lookup_prob(const std::vector<int>& support, const Vec& probs, int agent_id) {
  for (std::size_t t = 0; t < support.size(); ++t)
    if (support[t] == agent_id) return std::max(probs[t], kProbFloor);
  return kProbFloor;
}

void kl_accumulate(const AttentionRecord& target, const AttentionRecord& online, double& total,
                   long& count) {
  if (target.probs.size() != online.probs.size())
    throw Error(Errc::StructureMismatch, "attention records disagree on agent count");
  for (std::size_t i = 0; i < target.probs.size(); ++i) {
    if (target.probs[i].size() != online.probs[i].size())
      throw Error(Errc::StructureMismatch, "attention records disagree on head count");
    for (std::size_t m = 0; m < target.probs[i].size(); ++m) {
      // Union of both supports; ids absent on one side contribute the floor.
      double kl = 0.0;
      for (std::size_t t = 0; t < target.support[i].size(); ++t) {
        const int id = target.support[i][t];
        const double p = std::max(target.probs[i][m][t], kProbFloor);
        const double q = lookup_prob(online.support[i], online.probs[i][m], id);
        kl += p * std::log(p / q);
      }
      for (std::size_t t = 0; t < online.support[i].size(); ++t) {
        const int id = online.support[i][t];
        bool in_target = false;
        for (int tid : target.support[i])
          if (tid == id) {
            in_target = true;
            break;
          }
        if (in_target) continue;
        const double q = std::max(online.probs[i][m][t], kProbFloor);
        kl += kProbFloor * std::log(kProbFloor / q);
      }
      total += kl;
      ++count;
    }
  }
}

}  // namespace

double attention_kl(const AttentionRecord& target_record, const AttentionRecord& online_record) {
  double total = 0.0;
  long count = 0;
  kl_accumulate(target_record, online_record, total, count);
  return std::max(0.0, total / static_cast<double>(count));
}

double attention_kl(const std::array<AttentionRecord, 2>& target_record,
                    const std::array<AttentionRecord, 2>& online_record) {
  double total = 0.0;
  long count = 0;
  kl_accumulate(target_record[0], online_record[0], total, count);
  kl_accumulate(target_record[1], online_record[1], total, count);
  return std::max(0.0, total / static_cast<double>(count));
}

namespace {

double max_q(const Vec& q) {
  double best = q[0];
  for (double v : q) best = std::max(best, v);
  return best;
}

template <class QFn>
std::vector<std::vector<double>> td_targets_impl(const std::vector<const Transition*>& batch,
                                                 double gamma, QFn&& next_q) {
  std::vector<std::vector<double>> targets(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Transition& tr = *batch[b];
    const std::size_t n = tr.rewards.size();
    targets[b].resize(n);
    if (tr.done) {
      for (std::size_t i = 0; i < n; ++i) targets[b][i] = tr.rewards[i];
      continue;
    }
    const std::vector<Vec> q = next_q(tr);
    for (std::size_t i = 0; i < n; ++i) targets[b][i] = tr.rewards[i] + gamma * max_q(q[i]);
  }
  return targets;
}

void apply_sgd(std::vector<TensorRef> params, std::vector<TensorRef> grads, double lr) {
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].size; ++i) params[t].data[i] -= lr * grads[t].data[i];
}

}  // namespace

std::vector<std::vector<double>> td_targets(const std::vector<const Transition*>& batch,
                                            const DgnNetwork& target, double gamma) {
  return td_targets_impl(batch, gamma,
                         [&](const Transition& tr) { return forward(tr.next_features, tr.next_graph, target).q; });
}

std::vector<std::vector<double>> td_targets(const std::vector<const Transition*>& batch,
                                            const CoopNetwork& target, double gamma) {
  return td_targets_impl(batch, gamma,
                         [&](const Transition& tr) { return coop_forward(tr.next_features, target); });
}

TrainStepStats train_step(DgnNetwork& online, DgnNetwork& target, const ReplayBuffer& buffer,
                          const TrainConfig& cfg, long& gradient_steps, Rng& rng) {
  const auto idx = buffer.sample(cfg.batch_size, rng);
  const double batch = static_cast<double>(idx.size());

  DgnNetwork grads = zeros_like(online);
  double td_acc = 0.0, kl_acc = 0.0;
  long td_terms = 0;

  for (const std::size_t b : idx) {
    const Transition& tr = buffer.at(b);
    const int n = static_cast<int>(tr.features.size());

    const ForwardResult tgt = forward(tr.next_features, tr.next_graph, target);
    ForwardCache cache;
    const ForwardResult onl = forward(tr.features, tr.graph, online, &cache);

    std::vector<Vec> grad_q(n);
    for (int i = 0; i < n; ++i) {
      grad_q[i].assign(onl.q[i].size(), 0.0);
      double y = tr.rewards[i];
      if (!tr.done) y += cfg.gamma * max_q(tgt.q[i]);
      const double delta = onl.q[i][tr.actions[i]] - y;
      grad_q[i][tr.actions[i]] = 2.0 * delta / (batch * n);
      td_acc += delta * delta;
      ++td_terms;
    }

    if (cfg.kl_lambda > 0.0) {
      kl_acc += attention_kl(tgt.attn, onl.attn);
      // d/dq of sum p log(p/q) is -p/q; spread the loss normalization over
      // batch, layers, agents and heads to match attention_kl's mean.
      std::array<AttentionRecord, 2> grad_attn;
      const int heads = static_cast<int>(onl.attn[0].probs[0].size());
      const double norm = cfg.kl_lambda / (batch * 2.0 * n * heads);
      for (int layer = 0; layer < 2; ++layer) {
        grad_attn[layer].support = onl.attn[layer].support;
        grad_attn[layer].probs = onl.attn[layer].probs;
        for (int i = 0; i < n; ++i) {
          for (std::size_t m = 0; m < grad_attn[layer].probs[i].size(); ++m) {
            Vec& ga = grad_attn[layer].probs[i][m];
            for (std::size_t t = 0; t < ga.size(); ++t) {
              const double q = onl.attn[layer].probs[i][m][t];
              if (q < kProbFloor) {
                ga[t] = 0.0;  // floored entries are flat
                continue;
              }
              const double p = lookup_prob(tgt.attn[layer].support[i], tgt.attn[layer].probs[i][m],
                                           onl.attn[layer].support[i][t]);
              ga[t] = norm * (-p / q);
            }
          }
        }
      }
      backward(online, cache, grad_q, &grad_attn, grads);
    } else {
      backward(online, cache, grad_q, nullptr, grads);
    }
  }

  apply_sgd(tensor_refs(online), tensor_refs(grads), cfg.learning_rate);
  ++gradient_steps;
  if (gradient_steps % cfg.target_update_period == 0) target = online;

  return {td_acc / static_cast<double>(td_terms), kl_acc / batch};
}

CoopNetwork CoopNetwork::make(const NetDims& dims, std::uint64_t seed) {
  if (dims.features < 1 || dims.hidden < 1 || dims.actions < 1)
    throw Error(Errc::BadConfig, "network dimensions must be positive");
  Rng rng(seed);
  CoopNetwork net;
  net.dims = dims;
  net.encoder.w1 = Matrix(dims.hidden, dims.features);
  net.encoder.b1.assign(dims.hidden, 0.0);
  net.encoder.w2 = Matrix(dims.hidden, dims.hidden);
  net.encoder.b2.assign(dims.hidden, 0.0);
  glorot_init(net.encoder.w1, rng);
  glorot_init(net.encoder.w2, rng);
  net.q_w = Matrix(dims.actions, 2 * dims.hidden);
  glorot_init(net.q_w, rng);
  net.q_b.assign(dims.actions, 0.0);
  return net;
}

std::vector<TensorRef> tensor_refs(CoopNetwork& net) {
  std::vector<TensorRef> refs;
  refs.push_back({"encoder.w1", net.encoder.w1.a.data(), net.encoder.w1.a.size(),
                  net.encoder.w1.rows, net.encoder.w1.cols});
  refs.push_back({"encoder.b1", net.encoder.b1.data(), net.encoder.b1.size(),
                  static_cast<int>(net.encoder.b1.size()), 1});
  refs.push_back({"encoder.w2", net.encoder.w2.a.data(), net.encoder.w2.a.size(),
                  net.encoder.w2.rows, net.encoder.w2.cols});
  refs.push_back({"encoder.b2", net.encoder.b2.data(), net.encoder.b2.size(),
                  static_cast<int>(net.encoder.b2.size()), 1});
  refs.push_back({"q_head.w", net.q_w.a.data(), net.q_w.a.size(), net.q_w.rows, net.q_w.cols});
  refs.push_back({"q_head.b", net.q_b.data(), net.q_b.size(), static_cast<int>(net.q_b.size()), 1});
  return refs;
}

CoopNetwork zeros_like(const CoopNetwork& net) {
  CoopNetwork z = net;
  for (auto& r : tensor_refs(z))
    for (std::size_t i = 0; i < r.size; ++i) r.data[i] = 0.0;
  return z;
}

namespace {

struct CoopCache {
  std::vector<Vec> x, u1, a1, u2, enc, z;
};

std::vector<Vec> coop_forward_impl(const std::vector<FeatureVector>& features,
                                   const CoopNetwork& net, CoopCache* cache) {
  const int n = static_cast<int>(features.size());
  if (n < 1) throw Error(Errc::EmptyGraph, "forward needs at least one agent");
  const int hidden = net.dims.hidden;

  std::vector<Vec> u1(n), a1(n), u2(n), enc(n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(features[i].size()) != net.dims.features)
      throw Error(Errc::ShapeMismatch, "feature length does not match network input");
    u1[i] = affine(net.encoder.w1, features[i], net.encoder.b1);
    a1[i] = rectified(u1[i]);
    u2[i] = affine(net.encoder.w2, a1[i], net.encoder.b2);
    enc[i] = rectified(u2[i]);
  }

  std::vector<Vec> q(n), z(n);
  for (int i = 0; i < n; ++i) {
    Vec mean(hidden, 0.0);
    if (n > 1) {
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        for (int d = 0; d < hidden; ++d) mean[d] += enc[j][d];
      }
      for (int d = 0; d < hidden; ++d) mean[d] /= (n - 1);
    }
    z[i].reserve(2 * hidden);
    z[i].insert(z[i].end(), enc[i].begin(), enc[i].end());
    z[i].insert(z[i].end(), mean.begin(), mean.end());
    q[i] = affine(net.q_w, z[i], net.q_b);
  }

  if (cache) {
    cache->x = features;
    cache->u1 = std::move(u1);
    cache->a1 = std::move(a1);
    cache->u2 = std::move(u2);
    cache->enc = std::move(enc);
    cache->z = std::move(z);
  }
  return q;
}

void coop_backward(const CoopNetwork& net, const CoopCache& cache, const std::vector<Vec>& grad_q,
                   CoopNetwork& grads) {
  const int n = static_cast<int>(cache.x.size());
  const int hidden = net.dims.hidden;

  std::vector<Vec> denc(n, Vec(hidden, 0.0));
  std::vector<Vec> dmean(n, Vec(hidden, 0.0));
  for (int i = 0; i < n; ++i) {
    add_outer(grads.q_w, grad_q[i], cache.z[i]);
    add_to(grads.q_b, grad_q[i]);
    const Vec dz = matvec_transposed(net.q_w, grad_q[i]);
    for (int d = 0; d < hidden; ++d) {
      denc[i][d] += dz[d];
      dmean[i][d] = dz[hidden + d];
    }
  }
  if (n > 1) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        for (int d = 0; d < hidden; ++d) denc[j][d] += dmean[i][d] / (n - 1);
      }
  }
  for (int i = 0; i < n; ++i) {
    const Vec dv = rectifier_backward(denc[i], cache.u2[i]);
    add_outer(grads.encoder.w2, dv, cache.a1[i]);
    add_to(grads.encoder.b2, dv);
    const Vec da = matvec_transposed(net.encoder.w2, dv);
    const Vec du = rectifier_backward(da, cache.u1[i]);
    add_outer(grads.encoder.w1, du, cache.x[i]);
    add_to(grads.encoder.b1, du);
  }
}

}  // namespace

std::vector<Vec> coop_forward(const std::vector<FeatureVector>& features, const CoopNetwork& net) {
  return coop_forward_impl(features, net, nullptr);
}

TrainStepStats train_step(CoopNetwork& online, CoopNetwork& target, const ReplayBuffer& buffer,
                          const TrainConfig& cfg, long& gradient_steps, Rng& rng) {
  const auto idx = buffer.sample(cfg.batch_size, rng);
  const double batch = static_cast<double>(idx.size());

  CoopNetwork grads = zeros_like(online);
  double td_acc = 0.0;
  long td_terms = 0;

  for (const std::size_t b : idx) {
    const Transition& tr = buffer.at(b);
    const int n = static_cast<int>(tr.features.size());

    std::vector<Vec> tgt_q;
    if (!tr.done) tgt_q = coop_forward(tr.next_features, target);
    CoopCache cache;
    const std::vector<Vec> onl_q = coop_forward_impl(tr.features, online, &cache);

    std::vector<Vec> grad_q(n);
    for (int i = 0; i < n; ++i) {
      grad_q[i].assign(onl_q[i].size(), 0.0);
      double y = tr.rewards[i];
      if (!tr.done) y += cfg.gamma * max_q(tgt_q[i]);
      const double delta = onl_q[i][tr.actions[i]] - y;
      grad_q[i][tr.actions[i]] = 2.0 * delta / (batch * n);
      td_acc += delta * delta;
      ++td_terms;
    }
    coop_backward(online, cache, grad_q, grads);
  }

  apply_sgd(tensor_refs(online), tensor_refs(grads), cfg.learning_rate);
  ++gradient_steps;
  if (gradient_steps % cfg.target_update_period == 0) target = online;

  return {td_acc / static_cast<double>(td_terms), 0.0};
}

void save_checkpoint(const CoopNetwork& net, const std::string& path) {
  CoopNetwork copy = net;
  write_tensor_file(path, "coop",
                    {{"features", net.dims.features},
                     {"hidden", net.dims.hidden},
                     {"heads", net.dims.heads},
                     {"actions", net.dims.actions}},
                    tensor_refs(copy));
}

CoopNetwork load_coop_checkpoint(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  if (file.kind != "coop")
    throw Error(Errc::IoError, "checkpoint '" + path + "' is not a coop network");
  NetDims dims;
  dims.features = file.meta_value("features");
  dims.hidden = file.meta_value("hidden");
  dims.heads = file.meta_value("heads");
  dims.actions = file.meta_value("actions");
  CoopNetwork net = CoopNetwork::make(dims, 0);
  auto refs = tensor_refs(net);
  if (file.tensors.size() != refs.size())
    throw Error(Errc::IoError, "checkpoint '" + path + "' has wrong tensor count");
  for (std::size_t t = 0; t < refs.size(); ++t) {
    const auto& [name, values] = file.tensors[t];
    if (name != refs[t].name || values.size() != refs[t].size)
      throw Error(Errc::IoError, "checkpoint tensor mismatch at '" + name + "'");
    std::copy(values.begin(), values.end(), refs[t].data);
  }
  return net;
}

namespace {

class DgnLearner final : public LearnerHandle {
 public:
  DgnLearner(const TrainConfig& cfg, int feature_dim, int actions, std::uint64_t seed)
      : cfg_(cfg),
        buffer_(cfg.replay_capacity),
        rng_(mix_seed(seed, 0x6c6561726eULL)),
        online_(DgnNetwork::make(NetDims{feature_dim, cfg.hidden, cfg.heads, actions},
                                 mix_seed(seed, 0x696e6974ULL))),
        target_(online_) {}

  Algo algo() const override { return Algo::GcnAttention; }
  const TrainConfig& config() const override { return cfg_; }

  std::vector<Vec> qvalues(const std::vector<FeatureVector>& features,
                           const AdjacencyGraph& g) const override {
    return forward(features, g, online_).q;
  }

  std::vector<int> act(const std::vector<FeatureVector>& features, const AdjacencyGraph& g,
                       bool exploring) override {
    const double eps = exploring ? epsilon_at(env_steps_++, cfg_) : 0.0;
    return select_actions(qvalues(features, g), eps, rng_);
  }

  void observe(Transition t) override { buffer_.push(std::move(t)); }

  bool ready_to_learn() const override {
    return buffer_.size() >= static_cast<std::size_t>(std::max<long>(cfg_.batch_size, cfg_.warmup));
  }

  TrainStepStats learn_step() override {
    return train_step(online_, target_, buffer_, cfg_, gradient_steps_, rng_);
  }

  void save(const std::string& path) const override { save_checkpoint(online_, path); }

  void load(const std::string& path) override {
    online_ = load_dgn_checkpoint(path);
    target_ = online_;
  }

  std::size_t buffer_size() const override { return buffer_.size(); }

 private:
  TrainConfig cfg_;
  ReplayBuffer buffer_;
  Rng rng_;
  DgnNetwork online_, target_;
  long env_steps_ = 0;
  long gradient_steps_ = 0;
};

class CoopLearner final : public LearnerHandle {
 public:
  CoopLearner(const TrainConfig& cfg, int feature_dim, int actions, std::uint64_t seed)
      : cfg_(cfg),
        buffer_(cfg.replay_capacity),
        rng_(mix_seed(seed, 0x6c6561726eULL)),
        online_(CoopNetwork::make(NetDims{feature_dim, cfg.hidden, cfg.heads, actions},
                                  mix_seed(seed, 0x696e6974ULL))),
        target_(online_) {}

  Algo algo() const override { return Algo::CoopMarl; }
  const TrainConfig& config() const override { return cfg_; }

  std::vector<Vec> qvalues(const std::vector<FeatureVector>& features,
                           const AdjacencyGraph&) const override {
    return coop_forward(features, online_);
  }

  std::vector<int> act(const std::vector<FeatureVector>& features, const AdjacencyGraph& g,
                       bool exploring) override {
    const double eps = exploring ? epsilon_at(env_steps_++, cfg_) : 0.0;
    return select_actions(qvalues(features, g), eps, rng_);
  }

  void observe(Transition t) override { buffer_.push(std::move(t)); }

  bool ready_to_learn() const override {
    return buffer_.size() >= static_cast<std::size_t>(std::max<long>(cfg_.batch_size, cfg_.warmup));
  }

  TrainStepStats learn_step() override {
    return train_step(online_, target_, buffer_, cfg_, gradient_steps_, rng_);
  }

  void save(const std::string& path) const override { save_checkpoint(online_, path); }

  void load(const std::string& path) override {
    online_ = load_coop_checkpoint(path);
    target_ = online_;
  }

  std::size_t buffer_size() const override { return buffer_.size(); }

 private:
  TrainConfig cfg_;
  ReplayBuffer buffer_;
  Rng rng_;
  CoopNetwork online_, target_;
  long env_steps_ = 0;
  long gradient_steps_ = 0;
};

}  // namespace

std::unique_ptr<LearnerHandle> LearnerHandle::make(const TrainConfig& cfg, int feature_dim,
                                                   int actions, std::uint64_t seed) {
  validate_train_config(cfg);
  if (cfg.algo == Algo::GcnAttention)
    return std::make_unique<DgnLearner>(cfg, feature_dim, actions, seed);
  return std::make_unique<CoopLearner>(cfg, feature_dim, actions, seed);
}

EpisodeStats run_episode(Environment& env, LearnerHandle& learner, const GraphSpec& gspec,
                         OverheadLedger& ledger, bool training) {
  const ScenarioConfig& cfg = env.scenario().config();
  const int n = env.slice_count();

  auto obs = env.reset();
  std::vector<FeatureVector> features(n);
  for (int i = 0; i < n; ++i) features[i] = normalize_observation(obs[i], cfg);
  AdjacencyGraph graph = make_graph(gspec, features);

  EpisodeStats stats;
  stats.mean_satisfaction.assign(n, 0.0);
  int steps = 0;

  while (true) {
    const std::vector<int> actions = learner.act(features, graph, training);
    std::vector<AllocationDecision> decisions(n);
    for (int i = 0; i < n; ++i)
      decisions[i] = {env.scenario().slice(i).id,
                      claim_for_action(actions[i], cfg.total_prbs, learner.config().action_granularity)};
    const StepOutcome out = env.step(decisions);

    std::vector<FeatureVector> next_features(n);
    for (int i = 0; i < n; ++i) next_features[i] = normalize_observation(out.observations[i], cfg);
    AdjacencyGraph next_graph = make_graph(gspec, next_features);

    if (training) {
      learner.observe(
          Transition{features, next_features, graph, next_graph, actions, out.rewards, out.done});
      if (learner.ready_to_learn()) {
        const TrainStepStats s = learner.learn_step();
        stats.mean_td_loss += s.td_loss;
        stats.mean_kl_loss += s.kl_loss;
        ++stats.train_steps;
      }
    }

    for (int i = 0; i < n; ++i) {
      stats.cumulative_reward += out.rewards[i];
      stats.mean_satisfaction[i] += out.satisfactions[i];
    }
    ledger.record(graph);
    stats.messages += ledger.messages_this_step;
    ++steps;

    if (out.done) break;
    features = std::move(next_features);
    graph = std::move(next_graph);
  }

  for (double& s : stats.mean_satisfaction) s /= steps;
  if (stats.train_steps > 0) {
    stats.mean_td_loss /= stats.train_steps;
    stats.mean_kl_loss /= stats.train_steps;
  }
  return stats;
}

}  // namespace slicearb
