#include "slicearb/nn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace slicearb {

namespace {

MlpParams make_mlp(int features, int hidden, Rng& rng) {
  MlpParams p;
  p.w1 = Matrix(hidden, features);
  p.b1.assign(hidden, 0.0);
  p.w2 = Matrix(hidden, hidden);
  p.b2.assign(hidden, 0.0);
  glorot_init(p.w1, rng);
  glorot_init(p.w2, rng);
  return p;
}

AttentionLayerParams make_attention(int hidden, int heads, Rng& rng) {
  AttentionLayerParams p;
  const int head_dim = hidden / heads;
  p.wq.resize(heads);
  p.wk.resize(heads);
  p.wv.resize(heads);
  for (int m = 0; m < heads; ++m) {
    p.wq[m] = Matrix(head_dim, hidden);
    p.wk[m] = Matrix(head_dim, hidden);
    p.wv[m] = Matrix(head_dim, hidden);
    glorot_init(p.wq[m], rng);
    glorot_init(p.wk[m], rng);
    glorot_init(p.wv[m], rng);
  }
  p.wo = Matrix(hidden, hidden);
  glorot_init(p.wo, rng);
  return p;
}

}  // namespace

DgnNetwork DgnNetwork::make(const NetDims& dims, std::uint64_t seed) {
  if (dims.features < 1 || dims.hidden < 1 || dims.heads < 1 || dims.actions < 1)
    throw Error(Errc::BadConfig, "network dimensions must be positive");
  if (dims.hidden % dims.heads != 0)
    throw Error(Errc::BadConfig, "heads must divide hidden width");
  Rng rng(seed);
  DgnNetwork net;
  net.dims = dims;
  net.encoder = make_mlp(dims.features, dims.hidden, rng);
  net.conv1 = make_attention(dims.hidden, dims.heads, rng);
  net.conv2 = make_attention(dims.hidden, dims.heads, rng);
  net.q_w = Matrix(dims.actions, 3 * dims.hidden);
  glorot_init(net.q_w, rng);
  net.q_b.assign(dims.actions, 0.0);
  return net;
}

DgnNetwork zeros_like(const DgnNetwork& net) {
  DgnNetwork z = net;
  auto refs = tensor_refs(z);
  for (auto& r : refs)
    for (std::size_t i = 0; i < r.size; ++i) r.data[i] = 0.0;
  return z;
}

namespace {

void collect(std::vector<TensorRef>& out, const std::string& name, Matrix& m) {
  out.push_back({name, m.a.data(), m.a.size(), m.rows, m.cols});
}

void collect(std::vector<TensorRef>& out, const std::string& name, Vec& v) {
  out.push_back({name, v.data(), v.size(), static_cast<int>(v.size()), 1});
}

void collect_attention(std::vector<TensorRef>& out, const std::string& prefix,
                       AttentionLayerParams& p) {
  for (int m = 0; m < p.heads(); ++m) {
    const std::string h = prefix + ".h" + std::to_string(m);
    collect(out, h + ".wq", p.wq[m]);
    collect(out, h + ".wk", p.wk[m]);
    collect(out, h + ".wv", p.wv[m]);
  }
  collect(out, prefix + ".wo", p.wo);
}

}  // namespace

std::vector<TensorRef> tensor_refs(DgnNetwork& net) {
  std::vector<TensorRef> refs;
  collect(refs, "encoder.w1", net.encoder.w1);
  collect(refs, "encoder.b1", net.encoder.b1);
  collect(refs, "encoder.w2", net.encoder.w2);
  collect(refs, "encoder.b2", net.encoder.b2);
  collect_attention(refs, "conv1", net.conv1);
  collect_attention(refs, "conv2", net.conv2);
  collect(refs, "q_head.w", net.q_w);
  collect(refs, "q_head.b", net.q_b);
  return refs;
}

Vec encode(const FeatureVector& x, const MlpParams& p) {
  if (static_cast<int>(x.size()) != p.w1.cols)
    throw Error(Errc::ShapeMismatch, "feature length " + std::to_string(x.size()) +
                                         " does not match encoder input " + std::to_string(p.w1.cols));
  return rectified(affine(p.w2, rectified(affine(p.w1, x, p.b1)), p.b2));
}

namespace {

// Shared attention-layer forward. Fills the cache when given.
std::pair<std::vector<Vec>, AttentionRecord> attention_forward(const std::vector<Vec>& latents,
                                                               const AdjacencyGraph& g,
                                                               const AttentionLayerParams& p,
                                                               AttnLayerCache* cache) {
  const int n = g.n;
  if (n < 1) throw Error(Errc::EmptyGraph, "attention needs at least one agent");
  if (static_cast<int>(latents.size()) != n)
    throw Error(Errc::ShapeMismatch, "one latent per agent required");
  const int heads = p.heads();
  const int head_dim = p.head_dim();
  const int hidden = p.wo.rows;
  for (const Vec& h : latents)
    if (static_cast<int>(h.size()) != hidden)
      throw Error(Errc::ShapeMismatch, "latent width does not match layer width");
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<std::vector<Vec>> qp(heads), kp(heads), vp(heads);
  for (int m = 0; m < heads; ++m) {
    qp[m].resize(n);
    kp[m].resize(n);
    vp[m].resize(n);
    for (int i = 0; i < n; ++i) {
      qp[m][i] = matvec(p.wq[m], latents[i]);
      kp[m][i] = matvec(p.wk[m], latents[i]);
      vp[m][i] = matvec(p.wv[m], latents[i]);
    }
  }

  AttentionRecord record;
  record.support.resize(n);
  record.probs.assign(n, std::vector<Vec>(heads));
  std::vector<Vec> out(n);
  std::vector<Vec> cat(n), wsum(n);
  for (int i = 0; i < n; ++i) {
    auto& support = record.support[i];
    support.push_back(i);  // self-loop keeps isolated agents meaningful
    support.insert(support.end(), g.neighbors[i].begin(), g.neighbors[i].end());
    const int deg = static_cast<int>(support.size());

    cat[i].assign(static_cast<std::size_t>(heads) * head_dim, 0.0);
    for (int m = 0; m < heads; ++m) {
      Vec scores(deg);
      double best = -1e300;
      for (int t = 0; t < deg; ++t) {
        scores[t] = dot(qp[m][i], kp[m][support[t]]) * scale;
        best = std::max(best, scores[t]);
      }
      Vec& alpha = record.probs[i][m];
      alpha.resize(deg);
      double norm = 0.0;
      for (int t = 0; t < deg; ++t) {
        alpha[t] = std::exp(scores[t] - best);
        norm += alpha[t];
      }
      for (int t = 0; t < deg; ++t) alpha[t] /= norm;
      double* head_out = &cat[i][static_cast<std::size_t>(m) * head_dim];
      for (int t = 0; t < deg; ++t) {
        const Vec& v = vp[m][support[t]];
        for (int d = 0; d < head_dim; ++d) head_out[d] += alpha[t] * v[d];
      }
    }
    wsum[i] = matvec(p.wo, cat[i]);
    out[i] = rectified(wsum[i]);
    add_to(out[i], latents[i]);  // residual
  }

  if (cache) {
    cache->in = latents;
    cache->qp = std::move(qp);
    cache->kp = std::move(kp);
    cache->vp = std::move(vp);
    cache->record = record;
    cache->cat = std::move(cat);
    cache->wsum = std::move(wsum);
  }
  return {std::move(out), std::move(record)};
}

// Backward through one attention layer. grad_out is dL/d(layer output);
// grad_alpha, when non-null, injects dL/dalpha. Returns dL/d(layer input)
// and accumulates parameter gradients.
std::vector<Vec> attention_backward(const AttentionLayerParams& p, const AttnLayerCache& cache,
                                    const std::vector<Vec>& grad_out,
                                    const std::vector<std::vector<Vec>>* grad_alpha,
                                    AttentionLayerParams& grads) {
  const int n = static_cast<int>(cache.in.size());
  const int heads = p.heads();
  const int head_dim = p.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Vec> din = grad_out;  // residual path
  std::vector<std::vector<Vec>> dqp(heads), dkp(heads), dvp(heads);
  for (int m = 0; m < heads; ++m) {
    dqp[m].assign(n, Vec(head_dim, 0.0));
    dkp[m].assign(n, Vec(head_dim, 0.0));
    dvp[m].assign(n, Vec(head_dim, 0.0));
  }

  for (int i = 0; i < n; ++i) {
    const Vec dw = rectifier_backward(grad_out[i], cache.wsum[i]);
    add_outer(grads.wo, dw, cache.cat[i]);
    const Vec dcat = matvec_transposed(p.wo, dw);

    const auto& support = cache.record.support[i];
    const int deg = static_cast<int>(support.size());
    for (int m = 0; m < heads; ++m) {
      const double* dc = &dcat[static_cast<std::size_t>(m) * head_dim];
      const Vec& alpha = cache.record.probs[i][m];

      Vec dalpha(deg, 0.0);
      for (int t = 0; t < deg; ++t) {
        const Vec& v = cache.vp[m][support[t]];
        double acc = 0.0;
        for (int d = 0; d < head_dim; ++d) acc += dc[d] * v[d];
        dalpha[t] = acc;
        if (grad_alpha) dalpha[t] += (*grad_alpha)[i][m][t];
      }
      // softmax: ds_t = alpha_t (dalpha_t - sum_s alpha_s dalpha_s)
      double mixed = 0.0;
      for (int t = 0; t < deg; ++t) mixed += alpha[t] * dalpha[t];
      for (int t = 0; t < deg; ++t) {
        const int j = support[t];
        const double ds = alpha[t] * (dalpha[t] - mixed);
        for (int d = 0; d < head_dim; ++d) {
          dqp[m][i][d] += ds * cache.kp[m][j][d] * scale;
          dkp[m][j][d] += ds * cache.qp[m][i][d] * scale;
          dvp[m][j][d] += alpha[t] * dc[d];
        }
      }
    }
  }

  for (int m = 0; m < heads; ++m) {
    for (int j = 0; j < n; ++j) {
      add_outer(grads.wq[m], dqp[m][j], cache.in[j]);
      add_outer(grads.wk[m], dkp[m][j], cache.in[j]);
      add_outer(grads.wv[m], dvp[m][j], cache.in[j]);
      add_to(din[j], matvec_transposed(p.wq[m], dqp[m][j]));
      add_to(din[j], matvec_transposed(p.wk[m], dkp[m][j]));
      add_to(din[j], matvec_transposed(p.wv[m], dvp[m][j]));
    }
  }
  return din;
}

}  // namespace

std::pair<std::vector<Vec>, AttentionRecord> attention_conv(const std::vector<Vec>& latents,
                                                            const AdjacencyGraph& g,
                                                            const AttentionLayerParams& p) {
  return attention_forward(latents, g, p, nullptr);
}

ForwardResult forward(const std::vector<FeatureVector>& features, const AdjacencyGraph& g,
                      const DgnNetwork& net, ForwardCache* cache) {
  const int n = g.n;
  if (n < 1) throw Error(Errc::EmptyGraph, "forward needs at least one agent");
  if (static_cast<int>(features.size()) != n)
    throw Error(Errc::ShapeMismatch, "one feature vector per agent required");
  const int hidden = net.dims.hidden;

  std::vector<Vec> u1(n), a1(n), u2(n), h0(n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(features[i].size()) != net.dims.features)
      throw Error(Errc::ShapeMismatch, "feature length does not match network input");
    u1[i] = affine(net.encoder.w1, features[i], net.encoder.b1);
    a1[i] = rectified(u1[i]);
    u2[i] = affine(net.encoder.w2, a1[i], net.encoder.b2);
    h0[i] = rectified(u2[i]);
  }

  AttnLayerCache c1, c2;
  auto [h1, rec1] = attention_forward(h0, g, net.conv1, cache ? &c1 : nullptr);
  auto [h2, rec2] = attention_forward(h1, g, net.conv2, cache ? &c2 : nullptr);

  ForwardResult result;
  result.attn = {std::move(rec1), std::move(rec2)};
  result.q.resize(n);
  std::vector<Vec> z(n);
  for (int i = 0; i < n; ++i) {
    z[i].reserve(3 * hidden);
    z[i].insert(z[i].end(), h0[i].begin(), h0[i].end());
    z[i].insert(z[i].end(), h1[i].begin(), h1[i].end());
    z[i].insert(z[i].end(), h2[i].begin(), h2[i].end());
    result.q[i] = affine(net.q_w, z[i], net.q_b);
  }

  if (cache) {
    cache->valid = true;
    cache->graph = g;
    cache->x = features;
    cache->u1 = std::move(u1);
    cache->a1 = std::move(a1);
    cache->u2 = std::move(u2);
    cache->h0 = std::move(h0);
    cache->c1 = std::move(c1);
    cache->c2 = std::move(c2);
    cache->h1 = std::move(h1);
    cache->h2 = std::move(h2);
    cache->z = std::move(z);
  }
  return result;
}

void backward(const DgnNetwork& net, const ForwardCache& cache, const std::vector<Vec>& grad_q,
              const std::array<AttentionRecord, 2>* grad_attn, DgnNetwork& grads) {
  if (!cache.valid) throw Error(Errc::MissingCache, "backward requires a cached forward pass");
  const int n = static_cast<int>(cache.x.size());
  if (static_cast<int>(grad_q.size()) != n)
    throw Error(Errc::ShapeMismatch, "grad_q must have one entry per agent");
  const int hidden = net.dims.hidden;

  // Q head.
  std::vector<Vec> dh0(n, Vec(hidden, 0.0)), dh1(n, Vec(hidden, 0.0)), dh2(n, Vec(hidden, 0.0));
  for (int i = 0; i < n; ++i) {
    add_outer(grads.q_w, grad_q[i], cache.z[i]);
    add_to(grads.q_b, grad_q[i]);
    const Vec dz = matvec_transposed(net.q_w, grad_q[i]);
    for (int d = 0; d < hidden; ++d) {
      dh0[i][d] += dz[d];
      dh1[i][d] += dz[hidden + d];
      dh2[i][d] += dz[2 * hidden + d];
    }
  }

  const std::vector<std::vector<Vec>>* da1 = grad_attn ? &(*grad_attn)[0].probs : nullptr;
  const std::vector<std::vector<Vec>>* da2 = grad_attn ? &(*grad_attn)[1].probs : nullptr;

  const std::vector<Vec> din2 = attention_backward(net.conv2, cache.c2, dh2, da2, grads.conv2);
  for (int i = 0; i < n; ++i) add_to(dh1[i], din2[i]);
  const std::vector<Vec> din1 = attention_backward(net.conv1, cache.c1, dh1, da1, grads.conv1);
  for (int i = 0; i < n; ++i) add_to(dh0[i], din1[i]);

  for (int i = 0; i < n; ++i) {
    const Vec dv = rectifier_backward(dh0[i], cache.u2[i]);
    add_outer(grads.encoder.w2, dv, cache.a1[i]);
    add_to(grads.encoder.b2, dv);
    const Vec da = matvec_transposed(net.encoder.w2, dv);
    const Vec du = rectifier_backward(da, cache.u1[i]);
    add_outer(grads.encoder.w1, du, cache.x[i]);
    add_to(grads.encoder.b1, du);
  }
}

LossProbe make_probe(const std::vector<FeatureVector>& features, const AdjacencyGraph& g,
                     const DgnNetwork& net, Rng& rng) {
  const ForwardResult r = forward(features, g, net);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LossProbe probe;
  probe.wq.resize(r.q.size());
  for (std::size_t i = 0; i < r.q.size(); ++i) {
    probe.wq[i].resize(r.q[i].size());
    for (double& w : probe.wq[i]) w = u(rng);
  }
  for (int layer = 0; layer < 2; ++layer) {
    probe.wattn[layer].support = r.attn[layer].support;
    probe.wattn[layer].probs = r.attn[layer].probs;
    for (auto& agent : probe.wattn[layer].probs)
      for (auto& head : agent)
        for (double& w : head) w = u(rng);
  }
  return probe;
}

double probe_loss(const DgnNetwork& net, const std::vector<FeatureVector>& features,
                  const AdjacencyGraph& g, const LossProbe& probe) {
  const ForwardResult r = forward(features, g, net);
  double loss = 0.0;
  for (std::size_t i = 0; i < r.q.size(); ++i) loss += dot(probe.wq[i], r.q[i]);
  for (int layer = 0; layer < 2; ++layer)
    for (std::size_t i = 0; i < r.attn[layer].probs.size(); ++i)
      for (std::size_t m = 0; m < r.attn[layer].probs[i].size(); ++m)
        loss += dot(probe.wattn[layer].probs[i][m], r.attn[layer].probs[i][m]);
  return loss;
}

DgnNetwork probe_gradients(const DgnNetwork& net, const std::vector<FeatureVector>& features,
                           const AdjacencyGraph& g, const LossProbe& probe) {
  ForwardCache cache;
  forward(features, g, net, &cache);
  DgnNetwork grads = zeros_like(net);
  backward(net, cache, probe.wq, &probe.wattn, grads);
  return grads;
}

double fd_max_rel_error(DgnNetwork& net, const std::vector<FeatureVector>& features,
                        const AdjacencyGraph& g, const LossProbe& probe, const DgnNetwork& grads,
                        double eps) {
  DgnNetwork grads_copy = grads;  // non-const refs needed for flat views
  auto analytic = tensor_refs(grads_copy);
  auto params = tensor_refs(net);
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size; ++i) {
      const double saved = params[t].data[i];
      params[t].data[i] = saved + eps;
      const double up = probe_loss(net, features, g, probe);
      params[t].data[i] = saved - eps;
      const double down = probe_loss(net, features, g, probe);
      params[t].data[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double an = analytic[t].data[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

GradCheckReport grad_check(const DgnNetwork& net, const std::vector<FeatureVector>& features,
                           const AdjacencyGraph& g, Rng& rng) {
  const LossProbe probe = make_probe(features, g, net, rng);
  const DgnNetwork grads = probe_gradients(net, features, g, probe);
  DgnNetwork scratch = net;
  GradCheckReport report;
  report.max_rel_error = fd_max_rel_error(scratch, features, g, probe, grads);
  report.pass = report.max_rel_error <= 1e-4;
  return report;
}

void write_tensor_file(const std::string& path, const std::string& kind,
                       const std::vector<std::pair<std::string, int>>& meta,
                       const std::vector<TensorRef>& tensors) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write '" + path + "'");
  out << "slicearb-checkpoint v1 " << kind << "\n";
  for (const auto& [key, value] : meta) out << key << ' ' << value << "\n";
  char buf[64];
  for (const TensorRef& t : tensors) {
    out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << "\n";
    for (int r = 0; r < t.rows; ++r) {
      for (int c = 0; c < t.cols; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", t.data[static_cast<std::size_t>(r) * t.cols + c]);
        out << buf << (c + 1 == t.cols ? "" : " ");
      }
      out << "\n";
    }
  }
  out << "end\n";
  if (!out) throw Error(Errc::IoError, "failed writing '" + path + "'");
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::IoError, "empty checkpoint '" + path + "'");
  std::istringstream header(line);
  std::string magic, version;
  TensorFile file;
  header >> magic >> version >> file.kind;
  if (magic != "slicearb-checkpoint" || version != "v1" || file.kind.empty())
    throw Error(Errc::IoError, "unrecognized checkpoint header in '" + path + "'");

  while (std::getline(in, line)) {
    if (line == "end") return file;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "tensor") {
      std::string name;
      int rows = 0, cols = 0;
      ls >> name >> rows >> cols;
      if (name.empty() || rows < 0 || cols < 0)
        throw Error(Errc::IoError, "malformed tensor header in '" + path + "'");
      std::vector<double> values;
      values.reserve(static_cast<std::size_t>(rows) * cols);
      for (int r = 0; r < rows; ++r) {
        if (!std::getline(in, line)) throw Error(Errc::IoError, "truncated tensor in '" + path + "'");
        std::istringstream row(line);
        double v;
        for (int c = 0; c < cols; ++c) {
          if (!(row >> v)) throw Error(Errc::IoError, "malformed tensor row in '" + path + "'");
          values.push_back(v);
        }
      }
      file.tensors.emplace_back(name, std::move(values));
    } else if (!word.empty()) {
      int value = 0;
      if (!(ls >> value)) throw Error(Errc::IoError, "malformed meta line in '" + path + "'");
      file.meta.emplace_back(word, value);
    }
  }
  throw Error(Errc::IoError, "checkpoint '" + path + "' missing end marker");
}

int TensorFile::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw Error(Errc::IoError, "checkpoint missing meta key '" + key + "'");
}

std::string checkpoint_kind(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path + "'");
  std::string magic, version, kind;
  in >> magic >> version >> kind;
  if (magic != "slicearb-checkpoint" || version != "v1" || kind.empty())
    throw Error(Errc::IoError, "unrecognized checkpoint header in '" + path + "'");
  return kind;
}

namespace {

void load_tensors_into(const TensorFile& file, std::vector<TensorRef> refs, const std::string& path) {
  if (file.tensors.size() != refs.size())
    throw Error(Errc::IoError, "checkpoint '" + path + "' has wrong tensor count");
  for (std::size_t t = 0; t < refs.size(); ++t) {
    const auto& [name, values] = file.tensors[t];
    if (name != refs[t].name || values.size() != refs[t].size)
      throw Error(Errc::IoError, "checkpoint tensor mismatch at '" + name + "'");
    std::copy(values.begin(), values.end(), refs[t].data);
  }
}

}  // namespace

void save_checkpoint(const DgnNetwork& net, const std::string& path) {
  DgnNetwork copy = net;
  write_tensor_file(path, "dgn",
                    {{"features", net.dims.features},
                     {"hidden", net.dims.hidden},
                     {"heads", net.dims.heads},
                     {"actions", net.dims.actions}},
                    tensor_refs(copy));
}

DgnNetwork load_dgn_checkpoint(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  if (file.kind != "dgn") throw Error(Errc::IoError, "checkpoint '" + path + "' is not a dgn network");
  NetDims dims;
  dims.features = file.meta_value("features");
  dims.hidden = file.meta_value("hidden");
  dims.heads = file.meta_value("heads");
  dims.actions = file.meta_value("actions");
  DgnNetwork net = DgnNetwork::make(dims, 0);
  load_tensors_into(file, tensor_refs(net), path);
  return net;
}

}  // namespace slicearb
