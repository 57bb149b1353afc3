#include "slicearb/graph.hpp"

#include <cmath>
#include <numeric>

namespace slicearb {

AdjacencyGraph build_full(int n) {
  if (n < 1) throw Error(Errc::EmptyGraph, "graph needs at least one agent");
  AdjacencyGraph g;
  g.n = n;
  g.mode = GraphMode::Full;
  g.k = n - 1;
  g.neighbors.resize(n);
  for (int i = 0; i < n; ++i) {
    g.neighbors[i].reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) g.neighbors[i].push_back(j);
  }
  return g;
}

AdjacencyGraph build_knn(const std::vector<FeatureVector>& features, int k) {
  const int n = static_cast<int>(features.size());
  if (n < 1) throw Error(Errc::EmptyGraph, "graph needs at least one agent");
  if (k < 0) throw Error(Errc::BadConfig, "k must be >= 0");
  if (k > n - 1)
    throw Error(Errc::KTooLarge,
                "k=" + std::to_string(k) + " exceeds n-1=" + std::to_string(n - 1));
  for (const auto& f : features)
    if (f.size() != features[0].size())
      throw Error(Errc::ShapeMismatch, "feature vectors differ in length");

  AdjacencyGraph g;
  g.n = n;
  g.mode = GraphMode::Knn;
  g.k = k;
  g.neighbors.resize(n);

  std::vector<std::pair<double, int>> dist;
  for (int i = 0; i < n; ++i) {
    dist.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < features[i].size(); ++c) {
        const double d = features[i][c] - features[j][c];
        d2 += d * d;
      }
      dist.emplace_back(d2, j);
    }
    std::sort(dist.begin(), dist.end());  // distance, then ascending id
    g.neighbors[i].reserve(k);
    for (int t = 0; t < k; ++t) g.neighbors[i].push_back(dist[t].second);
  }
  return g;
}

long long message_count(const AdjacencyGraph& g) {
  long long total = 0;
  for (const auto& nb : g.neighbors) total += static_cast<long long>(nb.size());
  return total;
}

double overhead_reduction(int n, int k) {
  if (n < 2) throw Error(Errc::BadConfig, "overhead reduction needs n >= 2");
  if (k < 0 || k > n - 1) throw Error(Errc::BadConfig, "k must be in 0..n-1");
  return 100.0 * static_cast<double>(n - 1 - k) / static_cast<double>(n - 1);
}

}  // namespace slicearb
