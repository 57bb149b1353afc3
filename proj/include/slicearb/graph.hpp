#pragma once

// Communication-graph construction and the message/overhead ledger.
// Full mode: every agent talks to all n-1 others. Knn mode: each agent talks
// to its k nearest neighbors in observation-feature space, recomputed per
// timestep. Neighbor lists never contain the agent itself; aggregation adds
// an implicit self-loop downstream.

#include <algorithm>
#include <vector>

#include "slicearb/domain.hpp"

namespace slicearb {

enum class GraphMode { Full, Knn };

struct AdjacencyGraph {
  int n = 0;
  GraphMode mode = GraphMode::Full;
  int k = 0;  // meaningful in Knn mode
  std::vector<std::vector<int>> neighbors;

  bool operator==(const AdjacencyGraph&) const = default;
};

AdjacencyGraph build_full(int n);

// k agents with the smallest Euclidean distance to each agent's feature
// vector; ties broken by ascending id. Directed: not necessarily symmetric.
AdjacencyGraph build_knn(const std::vector<FeatureVector>& features, int k);

long long message_count(const AdjacencyGraph& g);

// Percent reduction of per-step messages relative to full communication.
double overhead_reduction(int n, int k);

// How the per-step communication graph is built.
struct GraphSpec {
  GraphMode mode = GraphMode::Knn;
  int k = 3;

  bool operator==(const GraphSpec&) const = default;
};

inline AdjacencyGraph make_graph(const GraphSpec& spec, const std::vector<FeatureVector>& features) {
  if (spec.mode == GraphMode::Full) return build_full(static_cast<int>(features.size()));
  return build_knn(features, spec.k);
}

// Per-step message count implied by a graph spec, independent of features.
inline long long messages_per_step(const GraphSpec& spec, int n) {
  if (spec.mode == GraphMode::Full) return static_cast<long long>(n) * (n - 1);
  return static_cast<long long>(n) * std::min(spec.k, n - 1);
}

struct OverheadLedger {
  long long messages_this_step = 0;
  long long cumulative_messages = 0;

  void record(const AdjacencyGraph& g) {
    messages_this_step = message_count(g);
    cumulative_messages += messages_this_step;
  }
};

}  // namespace slicearb
