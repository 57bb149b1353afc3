#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "slicearb/nn.hpp"

using namespace slicearb;

namespace {

std::vector<FeatureVector> random_features(int n, int dim, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<FeatureVector> f(n, FeatureVector(dim));
  for (auto& v : f)
    for (double& x : v) x = u(rng);
  return f;
}

// Straight-line matrix arithmetic, written independently of matrix.hpp.
Vec naive_affine(const Matrix& w, const Vec& x, const Vec& b) {
  Vec y(w.rows);
  for (int r = 0; r < w.rows; ++r) {
    y[r] = b[r];
    for (int c = 0; c < w.cols; ++c) y[r] += w.a[r * w.cols + c] * x[c];
  }
  return y;
}

Vec naive_relu(Vec v) {
  for (double& x : v)
    if (x < 0.0) x = 0.0;
  return v;
}

double max_abs_diff(const Vec& a, const Vec& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("zero encoder parameters map everything to zero") {
  DgnNetwork net = zeros_like(DgnNetwork::make({4, 8, 2, 3}, 1));
  const Vec h = encode({0.3, -0.7, 0.2, 0.9}, net.encoder);
  for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("identity-like encoder reproduces a selected feature") {
  DgnNetwork net = zeros_like(DgnNetwork::make({4, 8, 2, 3}, 1));
  // First layer copies feature 2 into hidden unit 0; second layer forwards it
  // to output unit 5.
  net.encoder.w1(0, 2) = 1.0;
  net.encoder.w2(5, 0) = 1.0;
  const Vec h = encode({0.1, 0.2, 0.75, 0.4}, net.encoder);
  CHECK(h[5] == 0.75);
  for (std::size_t i = 0; i < h.size(); ++i)
    if (i != 5) CHECK(h[i] == 0.0);
}

TEST_CASE("encoder matches an independent arithmetic oracle") {
  const DgnNetwork net = DgnNetwork::make({6, 16, 4, 5}, 42);
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureVector x = random_features(1, 6, rng)[0];
    const Vec got = encode(x, net.encoder);
    const Vec expected =
        naive_relu(naive_affine(net.encoder.w2, naive_relu(naive_affine(net.encoder.w1, x, net.encoder.b1)),
                                net.encoder.b2));
    CHECK(max_abs_diff(got, expected) <= 1e-12);
  }
}

TEST_CASE("a lone agent attends only to itself") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 3);
  Rng rng(9);
  const auto latents = random_features(1, 8, rng);
  const auto [out, record] = attention_conv(latents, build_full(1), net.conv1);
  for (int m = 0; m < 2; ++m) {
    REQUIRE(record.probs[0][m].size() == 1);
    CHECK(record.probs[0][m][0] == 1.0);
  }
  CHECK(record.support[0] == std::vector<int>{0});
}

TEST_CASE("identical latents attract uniform attention") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 4, 3}, 5);
  const std::vector<Vec> latents(5, Vec{0.3, -0.2, 0.9, 0.1, 0.0, -0.5, 0.4, 0.2});
  const auto [out, record] = attention_conv(latents, build_full(5), net.conv1);
  for (int i = 0; i < 5; ++i)
    for (int m = 0; m < 4; ++m)
      for (double a : record.probs[i][m]) CHECK(a == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("attention matches a hand-computed softmax and weighted sum") {
  // 2-wide single-head layer over 3 agents; agent 0 listens to 1 and 2.
  AttentionLayerParams p;
  p.wq = {Matrix(2, 2)};
  p.wk = {Matrix(2, 2)};
  p.wv = {Matrix(2, 2)};
  p.wo = Matrix(2, 2);
  p.wq[0](0, 0) = 1.0;
  p.wq[0](1, 1) = -0.5;
  p.wk[0](0, 0) = 0.8;
  p.wk[0](0, 1) = 0.2;
  p.wk[0](1, 0) = -0.3;
  p.wk[0](1, 1) = 0.6;
  p.wv[0](0, 0) = 0.5;
  p.wv[0](1, 1) = 1.5;
  p.wo(0, 0) = 1.0;
  p.wo(0, 1) = 0.4;
  p.wo(1, 0) = -0.7;
  p.wo(1, 1) = 0.9;

  const std::vector<Vec> latents = {{0.6, -0.2}, {0.1, 0.8}, {-0.4, 0.3}};
  AdjacencyGraph g;
  g.n = 3;
  g.mode = GraphMode::Knn;
  g.k = 2;
  g.neighbors = {{1, 2}, {0}, {0}};

  const auto [out, record] = attention_conv(latents, g, p);

  // Independent recomputation for agent 0.
  auto mat2 = [](const Matrix& w, const Vec& x) {
    return Vec{w.a[0] * x[0] + w.a[1] * x[1], w.a[2] * x[0] + w.a[3] * x[1]};
  };
  const Vec q0 = mat2(p.wq[0], latents[0]);
  const double inv_sqrt = 1.0 / std::sqrt(2.0);
  double scores[3], weights[3];
  const int support[3] = {0, 1, 2};
  for (int t = 0; t < 3; ++t) {
    const Vec kj = mat2(p.wk[0], latents[support[t]]);
    scores[t] = (q0[0] * kj[0] + q0[1] * kj[1]) * inv_sqrt;
  }
  double norm = 0.0;
  const double top = std::max({scores[0], scores[1], scores[2]});
  for (int t = 0; t < 3; ++t) {
    weights[t] = std::exp(scores[t] - top);
    norm += weights[t];
  }
  for (int t = 0; t < 3; ++t) weights[t] /= norm;

  REQUIRE(record.support[0] == std::vector<int>{0, 1, 2});
  for (int t = 0; t < 3; ++t) CHECK(record.probs[0][0][t] == doctest::Approx(weights[t]).epsilon(1e-12));

  Vec head{0.0, 0.0};
  for (int t = 0; t < 3; ++t) {
    const Vec vj = mat2(p.wv[0], latents[support[t]]);
    head[0] += weights[t] * vj[0];
    head[1] += weights[t] * vj[1];
  }
  const Vec proj = mat2(p.wo, head);
  const Vec expected = {std::max(proj[0], 0.0) + latents[0][0], std::max(proj[1], 0.0) + latents[0][1]};
  CHECK(max_abs_diff(out[0], expected) <= 1e-12);
}

TEST_CASE("attention rows are probability distributions") {
  Rng rng(11);
  std::uniform_int_distribution<int> n_dist(1, 6), k_pick(0, 5);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = n_dist(rng);
    const DgnNetwork net = DgnNetwork::make({5, 12, 3, 4}, 100 + trial);
    const auto features = random_features(n, 5, rng);
    const int k = std::min(k_pick(rng), n - 1);
    const AdjacencyGraph g = k == n - 1 ? build_full(n) : build_knn(features, k);
    const ForwardResult r = forward(features, g, net);
    for (int layer = 0; layer < 2; ++layer)
      for (int i = 0; i < n; ++i)
        for (const Vec& head : r.attn[layer].probs[i]) {
          double sum = 0.0;
          for (double a : head) {
            CHECK(a >= 0.0);
            sum += a;
          }
          CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
  }
}

TEST_CASE("zero parameters give zero action values") {
  const DgnNetwork net = zeros_like(DgnNetwork::make({4, 8, 2, 3}, 2));
  Rng rng(13);
  const auto features = random_features(3, 4, rng);
  const ForwardResult r = forward(features, build_full(3), net);
  for (const Vec& q : r.q)
    for (double v : q) CHECK(v == 0.0);
}

TEST_CASE("with no neighbors, action values depend only on own features") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 17);
  Rng rng(19);
  auto features = random_features(3, 4, rng);
  const AdjacencyGraph g = build_knn(features, 0);

  const ForwardResult before = forward(features, g, net);
  features[1] = random_features(1, 4, rng)[0];
  features[2] = random_features(1, 4, rng)[0];
  const ForwardResult after = forward(features, g, net);
  for (std::size_t a = 0; a < before.q[0].size(); ++a) CHECK(before.q[0][a] == after.q[0][a]);
}

TEST_CASE("two stacked layers reach two-hop neighbors") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 23);
  Rng rng(29);
  auto features = random_features(3, 4, rng);
  // 0 hears 1, 1 hears 2; 2 is outside 0's neighbor list.
  AdjacencyGraph g;
  g.n = 3;
  g.mode = GraphMode::Knn;
  g.k = 1;
  g.neighbors = {{1}, {2}, {1}};

  const ForwardResult before = forward(features, g, net);
  features[2][0] += 0.5;
  const ForwardResult after = forward(features, g, net);
  double delta = 0.0;
  for (std::size_t a = 0; a < before.q[0].size(); ++a)
    delta = std::max(delta, std::abs(before.q[0][a] - after.q[0][a]));
  CHECK(delta > 1e-9);
}

TEST_CASE("permuting agents permutes action values") {
  const DgnNetwork net = DgnNetwork::make({5, 12, 4, 4}, 31);
  Rng rng(37);
  const int n = 5;
  const auto features = random_features(n, 5, rng);
  const AdjacencyGraph g = build_knn(features, 2);
  const ForwardResult base = forward(features, g, net);

  const std::vector<int> perm = {3, 0, 4, 1, 2};  // new index of each old agent
  std::vector<FeatureVector> pf(n);
  AdjacencyGraph pg;
  pg.n = n;
  pg.mode = g.mode;
  pg.k = g.k;
  pg.neighbors.resize(n);
  for (int i = 0; i < n; ++i) {
    pf[perm[i]] = features[i];
    for (int j : g.neighbors[i]) pg.neighbors[perm[i]].push_back(perm[j]);
  }
  const ForwardResult permuted = forward(pf, pg, net);
  for (int i = 0; i < n; ++i)
    CHECK(max_abs_diff(base.q[i], permuted.q[perm[i]]) <= 1e-12);
}

TEST_CASE("forward is bit-reproducible and shares parameters across agent counts") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 5}, 41);
  Rng rng(43);
  const auto features = random_features(4, 4, rng);
  const AdjacencyGraph g = build_knn(features, 2);
  const ForwardResult a = forward(features, g, net);
  const ForwardResult b = forward(features, g, net);
  for (int i = 0; i < 4; ++i)
    for (std::size_t x = 0; x < a.q[i].size(); ++x) CHECK(a.q[i][x] == b.q[i][x]);

  // The same parameter set serves any population size.
  const auto more = random_features(9, 4, rng);
  const ForwardResult r9 = forward(more, build_full(9), net);
  CHECK(r9.q.size() == 9);

  DgnNetwork counted = net;
  std::size_t params = 0;
  for (const auto& ref : tensor_refs(counted)) params += ref.size;
  // encoder + two conv layers + q head, independent of agent count
  const std::size_t expected = (8 * 4 + 8 + 8 * 8 + 8) + 2 * (2 * 3 * (4 * 8) + 8 * 8) + (5 * 24 + 5);
  CHECK(params == expected);
}

TEST_CASE("affine gradient machinery reproduces the textbook closed form") {
  // L = ||w x - y||^2  =>  dL/dw = 2 (w x - y) x^T
  Matrix w(2, 3);
  w(0, 0) = 0.5;
  w(0, 1) = -0.2;
  w(0, 2) = 0.8;
  w(1, 0) = 1.1;
  w(1, 1) = 0.3;
  w(1, 2) = -0.6;
  const Vec x = {0.4, -0.9, 0.7};
  const Vec y = {0.2, -0.1};
  const Vec pred = matvec(w, x);
  Vec residual(2);
  for (int r = 0; r < 2; ++r) residual[r] = 2.0 * (pred[r] - y[r]);
  Matrix grad(2, 3);
  add_outer(grad, residual, x);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      CHECK(grad(r, c) == doctest::Approx(2.0 * (pred[r] - y[r]) * x[c]).epsilon(1e-15));
}

TEST_CASE("a loss that ignores the network has exactly zero gradients") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 47);
  Rng rng(53);
  const auto features = random_features(1, 4, rng);
  const AdjacencyGraph g = build_full(1);

  // Attention over a single agent is constant 1, so a pure attention probe
  // cannot depend on any parameter.
  LossProbe probe = make_probe(features, g, net, rng);
  for (auto& w : probe.wq)
    for (double& v : w) v = 0.0;

  DgnNetwork grads = probe_gradients(net, features, g, probe);
  for (const auto& ref : tensor_refs(grads))
    for (std::size_t i = 0; i < ref.size; ++i) CHECK(ref.data[i] == 0.0);
}

TEST_CASE("analytic gradients agree with finite differences") {
  Rng rng(59);
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 61);
  const auto features = random_features(3, 4, rng);
  const AdjacencyGraph g = build_full(3);
  const GradCheckReport report = grad_check(net, features, g, rng);
  CHECK(report.pass);
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("corrupted gradients are detected by the finite-difference check") {
  Rng rng(67);
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 71);
  const auto features = random_features(2, 4, rng);
  const AdjacencyGraph g = build_full(2);
  const LossProbe probe = make_probe(features, g, net, rng);
  DgnNetwork grads = probe_gradients(net, features, g, probe);
  grads.encoder.w1(0, 0) += 0.5;
  DgnNetwork scratch = net;
  CHECK(fd_max_rel_error(scratch, features, g, probe, grads) > 1e-4);
  CHECK(scratch == net);  // perturbations restored
}

TEST_CASE("zero-parameter network passes the gradient check trivially") {
  Rng rng(73);
  const DgnNetwork net = zeros_like(DgnNetwork::make({4, 8, 2, 3}, 79));
  const auto features = random_features(2, 4, rng);
  const GradCheckReport report = grad_check(net, features, build_full(2), rng);
  CHECK(report.pass);
}

TEST_CASE("backward without a cached forward pass is rejected") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 83);
  DgnNetwork grads = zeros_like(net);
  ForwardCache cache;  // never filled
  try {
    backward(net, cache, {}, nullptr, grads);
    FAIL("expected MissingCache");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingCache);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const DgnNetwork net = DgnNetwork::make({6, 16, 4, 26}, 89);
  const std::string path = (std::filesystem::temp_directory_path() / "slicearb_ckpt_test.txt").string();
  save_checkpoint(net, path);
  const DgnNetwork loaded = load_dgn_checkpoint(path);
  CHECK(loaded == net);
  CHECK(checkpoint_kind(path) == "dgn");
  std::filesystem::remove(path);
}

TEST_CASE("mismatched shapes are rejected") {
  const DgnNetwork net = DgnNetwork::make({4, 8, 2, 3}, 97);
  Rng rng(101);
  const auto features = random_features(2, 5, rng);  // wrong width
  CHECK_THROWS_AS(forward(features, build_full(2), net), Error);
  CHECK_THROWS_AS(DgnNetwork::make({4, 9, 2, 3}, 1), Error);  // heads must divide hidden
}
