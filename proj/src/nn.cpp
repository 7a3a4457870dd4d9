#include "georesidual/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "georesidual/errors.hpp"

namespace georesidual::nn {

namespace {

using Index = Eigen::Index;

Index ix(std::size_t v) { return static_cast<Index>(v); }

Mat gaussian(RandomStream& rng, std::size_t rows, std::size_t cols, double stddev) {
  Mat m(ix(rows), ix(cols));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
  return m;
}

}  // namespace

Parameter& ParameterSet::add(std::string name, Mat init, bool decay) {
  Parameter p;
  p.name = std::move(name);
  p.grad = Mat::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  p.decay = decay;
  params_.push_back(std::move(p));
  return params_.back();
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Parameter* ParameterSet::find(std::string_view name) noexcept {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const noexcept {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

double ParameterSet::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) s += p.grad.squaredNorm();
  return std::sqrt(s);
}

Mat to_mat(const numkit::Matrix& m) {
  Mat out(ix(m.rows()), ix(m.cols()));
  std::copy(m.data().begin(), m.data().end(), out.data());
  return out;
}

numkit::Matrix to_matrix(const Mat& m) {
  return numkit::Matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                        std::vector<double>(m.data(), m.data() + m.size()));
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Mat gelu(const Mat& x) {
  return x.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z * std::numbers::sqrt2 / 2.0)); });
}

Mat gelu_backward(const Mat& x, const Mat& grad_y) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  const Mat d = x.unaryExpr([](double z) {
    return 0.5 * (1.0 + std::erf(z * std::numbers::sqrt2 / 2.0)) +
           z * inv_sqrt_2pi * std::exp(-0.5 * z * z);
  });
  return d.cwiseProduct(grad_y);
}

Mat Linear::forward(const Mat& x) const {
  if (static_cast<std::size_t>(x.cols()) != in()) throw ShapeMismatch("linear input width");
  Mat y = x * weight->value;
  if (bias != nullptr) y.rowwise() += bias->value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& grad_y) const {
  weight->grad.noalias() += x.transpose() * grad_y;
  if (bias != nullptr) bias->grad.row(0) += grad_y.colwise().sum();
  return grad_y * weight->value.transpose();
}

Linear make_linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                   RandomStream& rng, double stddev, bool with_bias) {
  Linear l;
  l.weight = &ps.add(name + ".weight", gaussian(rng, in, out, stddev), true);
  if (with_bias) l.bias = &ps.add(name + ".bias", Mat::Zero(1, ix(out)), false);
  return l;
}

Linear make_identity_linear(ParameterSet& ps, const std::string& name, std::size_t width) {
  Linear l;
  l.weight = &ps.add(name + ".weight", Mat::Identity(ix(width), ix(width)), true);
  l.bias = &ps.add(name + ".bias", Mat::Zero(1, ix(width)), false);
  return l;
}

Linear make_constant_linear(ParameterSet& ps, const std::string& name, std::size_t in,
                            std::size_t out, double bias) {
  Linear l;
  l.weight = &ps.add(name + ".weight", Mat::Zero(ix(in), ix(out)), true);
  l.bias = &ps.add(name + ".bias", Mat::Constant(1, ix(out), bias), false);
  return l;
}

Mat LayerNorm::forward(const Mat& x, Cache& cache) const {
  if (x.cols() != scale->value.cols()) throw ShapeMismatch("layer_norm width");
  const double w = static_cast<double>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / w;
    const auto centered = x.row(r).array() - mean;
    const double var = centered.square().sum() / w;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(r) = inv;
    cache.normalized.row(r) = centered * inv;
  }
  Mat y = cache.normalized.array().rowwise() * scale->value.row(0).array();
  y.rowwise() += shift->value.row(0);
  return y;
}

Mat LayerNorm::backward(const Cache& cache, const Mat& grad_y) const {
  scale->grad.row(0) += grad_y.cwiseProduct(cache.normalized).colwise().sum();
  shift->grad.row(0) += grad_y.colwise().sum();
  const Mat g = grad_y.array().rowwise() * scale->value.row(0).array();
  const double w = static_cast<double>(g.cols());
  Mat gx(g.rows(), g.cols());
  for (Index r = 0; r < g.rows(); ++r) {
    const double mg = g.row(r).sum() / w;
    const double mgx = g.row(r).dot(cache.normalized.row(r)) / w;
    gx.row(r) = cache.inv_std(r) *
                (g.row(r).array() - mg - cache.normalized.row(r).array() * mgx).matrix();
  }
  return gx;
}

LayerNorm make_layer_norm(ParameterSet& ps, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.scale = &ps.add(name + ".scale", Mat::Ones(1, ix(width)), false);
  ln.shift = &ps.add(name + ".shift", Mat::Zero(1, ix(width)), false);
  return ln;
}

Mat Mlp::forward(const Mat& x, Cache& cache) const {
  cache.input = x;
  cache.hidden_pre = fc.forward(x);
  cache.hidden = gelu(cache.hidden_pre);
  return proj.forward(cache.hidden);
}

Mat Mlp::backward(const Cache& cache, const Mat& grad_y) const {
  const Mat gh = proj.backward(cache.hidden, grad_y);
  return fc.backward(cache.input, gelu_backward(cache.hidden_pre, gh));
}

Mlp make_mlp(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t hidden,
             std::size_t out, RandomStream& rng, double stddev) {
  Mlp m;
  m.fc = make_linear(ps, name + ".fc", in, hidden, rng, stddev);
  m.proj = make_linear(ps, name + ".proj", hidden, out, rng, stddev);
  return m;
}

Mlp make_feed_forward(ParameterSet& ps, const std::string& name, std::size_t width,
                      RandomStream& rng) {
  return make_mlp(ps, name, width, 4 * width, width, rng);
}

ActivationTensor CausalAttention::forward(const ActivationTensor& x, Cache& cache) const {
  const std::size_t d = x.width;
  if (d % heads != 0) throw ShapeMismatch("attention width not divisible by heads");
  const Index hd = ix(d / heads), t = ix(x.seq);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  cache.input = x.data;
  cache.qkv = qkv.forward(x.data);
  cache.context.resize(x.data.rows(), ix(d));
  cache.probs.assign(x.batch * heads, Mat());
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Index r0 = ix(b) * t, c0 = ix(h) * hd;
      const auto q = cache.qkv.block(r0, c0, t, hd);
      const auto k = cache.qkv.block(r0, ix(d) + c0, t, hd);
      const auto v = cache.qkv.block(r0, 2 * ix(d) + c0, t, hd);
      Mat s = (q * k.transpose()) * scale;
      for (Index i = 0; i < t; ++i) {
        const double m = s.row(i).head(i + 1).maxCoeff();
        double z = 0.0;
        for (Index j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - m);
          z += s(i, j);
        }
        for (Index j = 0; j <= i; ++j) s(i, j) /= z;
        for (Index j = i + 1; j < t; ++j) s(i, j) = 0.0;
      }
      cache.context.block(r0, c0, t, hd).noalias() = s * v;
      cache.probs[b * heads + h] = std::move(s);
    }
  }
  return ActivationTensor(x.batch, x.seq, proj.forward(cache.context));
}

ActivationTensor CausalAttention::backward(const Cache& cache, const ActivationTensor& grad_y) const {
  const std::size_t d = grad_y.width;
  const Index hd = ix(d / heads), t = ix(grad_y.seq);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Mat gctx = proj.backward(cache.context, grad_y.data);
  Mat gqkv(cache.qkv.rows(), cache.qkv.cols());
  for (std::size_t b = 0; b < grad_y.batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Index r0 = ix(b) * t, c0 = ix(h) * hd;
      const auto q = cache.qkv.block(r0, c0, t, hd);
      const auto k = cache.qkv.block(r0, ix(d) + c0, t, hd);
      const auto v = cache.qkv.block(r0, 2 * ix(d) + c0, t, hd);
      const Mat& p = cache.probs[b * heads + h];
      const auto go = gctx.block(r0, c0, t, hd);
      const Mat gp = go * v.transpose();
      gqkv.block(r0, 2 * ix(d) + c0, t, hd).noalias() = p.transpose() * go;
      Mat gs = p.cwiseProduct(gp);
      const Vec row_dot = gs.rowwise().sum();
      gs -= p.cwiseProduct(row_dot.replicate(1, t));
      gs *= scale;
      gqkv.block(r0, c0, t, hd).noalias() = gs * k;
      gqkv.block(r0, ix(d) + c0, t, hd).noalias() = gs.transpose() * q;
    }
  }
  return ActivationTensor(grad_y.batch, grad_y.seq, qkv.backward(cache.input, gqkv));
}

CausalAttention make_attention(ParameterSet& ps, const std::string& name, std::size_t width,
                               std::size_t heads, RandomStream& rng) {
  if (heads == 0 || width % heads != 0) throw ShapeMismatch("attention width not divisible by heads");
  CausalAttention a;
  a.qkv = make_linear(ps, name + ".qkv", width, 3 * width, rng);
  a.proj = make_linear(ps, name + ".proj", width, width, rng);
  a.heads = heads;
  return a;
}

Mat mean_pool(const ActivationTensor& x) {
  if (x.seq == 0) throw EmptySequence("mean_pool over an empty sequence");
  Mat out(ix(x.batch), ix(x.width));
  for (std::size_t b = 0; b < x.batch; ++b)
    out.row(ix(b)) = x.slab(b).colwise().sum() / static_cast<double>(x.seq);
  return out;
}

ActivationTensor mean_pool_backward(const Mat& grad_pooled, std::size_t seq) {
  ActivationTensor g(static_cast<std::size_t>(grad_pooled.rows()), seq,
                     static_cast<std::size_t>(grad_pooled.cols()));
  const double inv = 1.0 / static_cast<double>(seq);
  for (std::size_t b = 0; b < g.batch; ++b)
    g.slab(b).rowwise() = grad_pooled.row(ix(b)) * inv;
  return g;
}

namespace {

void check_streams(const ActivationTensor& x, std::size_t n, std::size_t n_ops) {
  if (n == 0 || x.width % n != 0) throw ShapeMismatch("width not divisible by stream count");
  if (n_ops != x.batch) throw ShapeMismatch("stream_apply needs one operator per batch element");
}

}  // namespace

ActivationTensor stream_apply(const ActivationTensor& x, const Mat& q, std::size_t n_streams) {
  std::vector<Mat> ops(x.batch, q);
  return stream_apply(x, ops, n_streams);
}

ActivationTensor stream_apply(const ActivationTensor& x, std::span<const Mat> q,
                              std::size_t n_streams) {
  check_streams(x, n_streams, q.size());
  const Index n = ix(n_streams), d = ix(x.width / n_streams);
  ActivationTensor out(x.batch, x.seq, x.width);
  for (std::size_t b = 0; b < x.batch; ++b) {
    if (q[b].rows() != n || q[b].cols() != n) throw ShapeMismatch("stream operator must be n x n");
    const auto in = x.slab(b);
    auto o = out.slab(b);
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < n; ++k) {
        const double c = q[b](i, k);
        if (c != 0.0) o.middleCols(i * d, d) += c * in.middleCols(k * d, d);
      }
  }
  return out;
}

ActivationTensor stream_apply_backward(const ActivationTensor& x, std::span<const Mat> q,
                                       std::size_t n_streams, const ActivationTensor& grad_y,
                                       std::vector<Mat>* grad_q) {
  check_streams(x, n_streams, q.size());
  const Index n = ix(n_streams), d = ix(x.width / n_streams);
  ActivationTensor gx(x.batch, x.seq, x.width);
  if (grad_q != nullptr) grad_q->assign(x.batch, Mat::Zero(n, n));
  for (std::size_t b = 0; b < x.batch; ++b) {
    const auto in = x.slab(b);
    const auto gy = grad_y.slab(b);
    auto g = gx.slab(b);
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < n; ++k) {
        const auto gyi = gy.middleCols(i * d, d);
        const double c = q[b](i, k);
        if (c != 0.0) g.middleCols(k * d, d) += c * gyi;
        if (grad_q != nullptr) (*grad_q)[b](i, k) = gyi.cwiseProduct(in.middleCols(k * d, d)).sum();
      }
  }
  return gx;
}

std::vector<GeneratorOutputs> GeneratorNet::forward(const Mat& pooled, Cache& cache) const {
  const Index rows = pooled.rows();
  cache.pooled = pooled;
  std::vector<GeneratorOutputs> out(static_cast<std::size_t>(rows));
  Mat um, vm;
  if (u) um = u->forward(pooled, cache.u);
  if (v) vm = v->forward(pooled, cache.v);
  if (k) cache.k_raw = k->forward(pooled, cache.k);
  if (beta) cache.beta_raw = beta->forward(pooled, cache.beta);
  if (gate) cache.gate_raw = gate->forward(pooled);
  for (Index r = 0; r < rows; ++r) {
    auto& o = out[static_cast<std::size_t>(r)];
    if (u) o.u.assign(um.row(r).data(), um.row(r).data() + um.cols());
    if (v) o.v.assign(vm.row(r).data(), vm.row(r).data() + vm.cols());
    if (k) {
      const auto f = cache.k_raw.row(r);
      const double len = std::max(f.norm(), std::numeric_limits<double>::min());
      o.k.resize(static_cast<std::size_t>(f.cols()));
      for (Index j = 0; j < f.cols(); ++j) o.k[static_cast<std::size_t>(j)] = f(j) / len;
    }
    if (beta) o.beta = softplus(cache.beta_raw(r, 0));
    if (gate) o.gamma = sigmoid(cache.gate_raw(r, 0));
  }
  return out;
}

Mat GeneratorNet::backward(const Cache& cache, std::span<const GeneratorGrads> grads) const {
  const Index rows = cache.pooled.rows();
  if (static_cast<Index>(grads.size()) != rows) throw ShapeMismatch("generator gradient rows");
  Mat g = Mat::Zero(rows, cache.pooled.cols());
  const auto rows_of = [&](auto field) {
    Mat m(rows, ix(n));
    for (Index r = 0; r < rows; ++r) {
      const auto& src = field(grads[static_cast<std::size_t>(r)]);
      for (Index j = 0; j < ix(n); ++j) m(r, j) = src.empty() ? 0.0 : src[static_cast<std::size_t>(j)];
    }
    return m;
  };
  if (u) g += u->backward(cache.u, rows_of([](const GeneratorGrads& x) -> const auto& { return x.u; }));
  if (v) g += v->backward(cache.v, rows_of([](const GeneratorGrads& x) -> const auto& { return x.v; }));
  if (k) {
    Mat gf(rows, ix(n));
    for (Index r = 0; r < rows; ++r) {
      const auto& gk = grads[static_cast<std::size_t>(r)].k;
      if (gk.empty()) {
        gf.row(r).setZero();
        continue;
      }
      const auto f = cache.k_raw.row(r);
      const auto df = normalize_backward(std::span<const double>(f.data(), ix(n)), gk);
      for (Index j = 0; j < ix(n); ++j) gf(r, j) = df[static_cast<std::size_t>(j)];
    }
    g += k->backward(cache.k, gf);
  }
  if (beta) {
    Mat gb(rows, 1);
    for (Index r = 0; r < rows; ++r)
      gb(r, 0) = grads[static_cast<std::size_t>(r)].beta * sigmoid(cache.beta_raw(r, 0));
    g += beta->backward(cache.beta, gb);
  }
  if (gate) {
    Mat gg(rows, 1);
    for (Index r = 0; r < rows; ++r) {
      const double s = sigmoid(cache.gate_raw(r, 0));
      gg(r, 0) = grads[static_cast<std::size_t>(r)].gamma * s * (1.0 - s);
    }
    g += gate->backward(cache.pooled, gg);
  }
  return g;
}

GeneratorNet make_generators(ParameterSet& ps, const std::string& name, const GeneratorSpec& spec,
                             RandomStream& rng) {
  GeneratorNet g;
  g.n = spec.n;
  if (spec.rotation) {
    g.u = make_mlp(ps, name + ".gen_u", spec.width, spec.hidden, spec.n, rng);
    g.v = make_mlp(ps, name + ".gen_v", spec.width, spec.hidden, spec.n, rng);
  }
  if (spec.reflection) g.k = make_mlp(ps, name + ".gen_k", spec.width, spec.hidden, spec.n, rng);
  if (spec.scale) g.beta = make_mlp(ps, name + ".gen_beta", spec.width, spec.hidden, 1, rng);
  if (spec.gate) g.gate = make_constant_linear(ps, name + ".gate", spec.width, 1, spec.gate_bias);
  return g;
}

std::vector<double> normalize_backward(std::span<const double> raw, std::span<const double> grad_k) {
  const double len = std::max(numkit::norm(raw), std::numeric_limits<double>::min());
  double proj = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) proj += raw[i] * grad_k[i];
  proj /= len;
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (grad_k[i] - raw[i] / len * proj) / len;
  return out;
}

void householder_backward(std::span<const double> k, double beta, const Mat& grad_h,
                          std::span<double> grad_k, double* grad_beta) {
  const Index n = ix(k.size());
  const Eigen::Map<const Vec> kv(k.data(), n);
  const Vec sym = (grad_h + grad_h.transpose()) * kv;
  for (Index i = 0; i < n; ++i) grad_k[static_cast<std::size_t>(i)] += -beta * sym(i);
  if (grad_beta != nullptr) *grad_beta += -kv.dot(grad_h * kv);
}

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

Mat softmax_rows_backward(const Mat& probs, const Mat& grad_p) {
  Mat g = probs.cwiseProduct(grad_p);
  const Vec dots = g.rowwise().sum();
  g -= probs.cwiseProduct(dots.replicate(1, probs.cols()));
  return g;
}

}  // namespace georesidual::nn
