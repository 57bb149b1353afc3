#pragma once

// Learning architecture: an MLP state encoder, two graph-convolution layers
// with multi-head scaled dot-product attention, and a Q head reading the
// concatenation of the encoder and both convolution outputs. One parameter
// set is shared by all agents. Gradients are hand-derived for this fixed
// architecture and checked against central finite differences.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "slicearb/graph.hpp"
#include "slicearb/matrix.hpp"

namespace slicearb {

struct NetDims {
  int features = kFeatureCount;
  int hidden = 128;
  int heads = 4;
  int actions = 26;

  bool operator==(const NetDims&) const = default;
};

struct MlpParams {
  Matrix w1;  // hidden x features
  Vec b1;
  Matrix w2;  // hidden x hidden
  Vec b2;

  bool operator==(const MlpParams&) const = default;
};

struct AttentionLayerParams {
  // Per head: head_dim x hidden projections.
  std::vector<Matrix> wq, wk, wv;
  Matrix wo;  // hidden x hidden output projection

  int heads() const { return static_cast<int>(wq.size()); }
  int head_dim() const { return wq.empty() ? 0 : wq[0].rows; }

  bool operator==(const AttentionLayerParams&) const = default;
};

struct DgnNetwork {
  NetDims dims;
  MlpParams encoder;
  AttentionLayerParams conv1, conv2;
  Matrix q_w;  // actions x 3*hidden
  Vec q_b;

  static DgnNetwork make(const NetDims& dims, std::uint64_t seed);

  bool operator==(const DgnNetwork&) const = default;
};

// Same shapes, all values zero. Used as a gradient accumulator.
DgnNetwork zeros_like(const DgnNetwork& net);

struct TensorRef {
  std::string name;
  double* data;
  std::size_t size;
  int rows, cols;
};

// Flat views over every parameter tensor, in a fixed order shared by the
// optimizer, the checkpoint format and finite-difference probes.
std::vector<TensorRef> tensor_refs(DgnNetwork& net);

// Attention probabilities for one layer. support[i] lists the agent ids the
// distribution of agent i runs over (self first, then neighbors in graph
// order); probs[i][m] is aligned with support[i].
struct AttentionRecord {
  std::vector<std::vector<int>> support;
  std::vector<std::vector<Vec>> probs;
};

// h = rect(w2 rect(w1 x + b1) + b2)
Vec encode(const FeatureVector& x, const MlpParams& p);

// One attention convolution: per agent and head, scaled dot-product
// attention over {self} + neighbors, heads concatenated, output-projected,
// rectified, and residual-added to the input latent.
std::pair<std::vector<Vec>, AttentionRecord> attention_conv(const std::vector<Vec>& latents,
                                                            const AdjacencyGraph& g,
                                                            const AttentionLayerParams& p);

struct ForwardResult {
  std::vector<Vec> q;                    // per agent, length = actions
  std::array<AttentionRecord, 2> attn;   // conv1, conv2
};

struct AttnLayerCache {
  std::vector<Vec> in;
  std::vector<std::vector<Vec>> qp, kp, vp;  // [head][agent]
  AttentionRecord record;
  std::vector<Vec> cat;   // concatenated heads
  std::vector<Vec> wsum;  // wo * cat, pre-rectifier
};

struct ForwardCache {
  bool valid = false;
  AdjacencyGraph graph;
  std::vector<Vec> x;
  std::vector<Vec> u1, a1, u2;  // encoder intermediates
  std::vector<Vec> h0;
  AttnLayerCache c1, c2;
  std::vector<Vec> h1, h2;
  std::vector<Vec> z;  // concat(h0, h1, h2)
};

ForwardResult forward(const std::vector<FeatureVector>& features, const AdjacencyGraph& g,
                      const DgnNetwork& net, ForwardCache* cache = nullptr);

// Accumulates dL/dtheta into grads given dL/dq and, optionally, dL/dalpha
// for both attention layers (same shape as the forward records).
void backward(const DgnNetwork& net, const ForwardCache& cache, const std::vector<Vec>& grad_q,
              const std::array<AttentionRecord, 2>* grad_attn, DgnNetwork& grads);

// Linear probe L = sum wq.q + sum wattn.alpha used by the gradient checker;
// exercises both network outputs.
struct LossProbe {
  std::vector<Vec> wq;
  std::array<AttentionRecord, 2> wattn;
};

LossProbe make_probe(const std::vector<FeatureVector>& features, const AdjacencyGraph& g,
                     const DgnNetwork& net, Rng& rng);
double probe_loss(const DgnNetwork& net, const std::vector<FeatureVector>& features,
                  const AdjacencyGraph& g, const LossProbe& probe);
DgnNetwork probe_gradients(const DgnNetwork& net, const std::vector<FeatureVector>& features,
                           const AdjacencyGraph& g, const LossProbe& probe);
// Worst relative disagreement between `grads` and central finite differences
// of the probe loss. Restores the network before returning.
double fd_max_rel_error(DgnNetwork& net, const std::vector<FeatureVector>& features,
                        const AdjacencyGraph& g, const LossProbe& probe, const DgnNetwork& grads,
                        double eps = 1e-5);

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;  // max_rel_error <= 1e-4
};

GradCheckReport grad_check(const DgnNetwork& net, const std::vector<FeatureVector>& features,
                           const AdjacencyGraph& g, Rng& rng);

// Versioned named-tensor text file; doubles are written with enough digits
// to round-trip bit-exactly.
void write_tensor_file(const std::string& path, const std::string& kind,
                       const std::vector<std::pair<std::string, int>>& meta,
                       const std::vector<TensorRef>& tensors);
struct TensorFile {
  std::string kind;
  std::vector<std::pair<std::string, int>> meta;
  int meta_value(const std::string& key) const;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;
};
TensorFile read_tensor_file(const std::string& path);
// Kind string of a checkpoint without loading tensor data.
std::string checkpoint_kind(const std::string& path);

void save_checkpoint(const DgnNetwork& net, const std::string& path);
DgnNetwork load_dgn_checkpoint(const std::string& path);

}  // namespace slicearb
