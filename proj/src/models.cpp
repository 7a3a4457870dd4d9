#include "georesidual/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "georesidual/binio.hpp"
#include "georesidual/errors.hpp"
#include "georesidual/geometry.hpp"

namespace georesidual::models {

namespace {

using Index = Eigen::Index;
using numkit::RandomStream;

Index ix(std::size_t v) { return static_cast<Index>(v); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_count(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InvalidConfig("'" + std::string(key) + "' expects a count, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw InvalidConfig("'" + std::string(key) + "' expects a real, got '" + std::string(v) + "'");
  }
  return out;
}

std::string format_real(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

// Multiplies stream i of every row by s[i].
Mat scale_streams(const Mat& x, const RowVec& s) {
  const Index n = s.size(), d = x.cols() / n;
  Mat out = x;
  for (Index i = 0; i < n; ++i) out.middleCols(i * d, d) *= s(i);
  return out;
}

// ---------------------------------------------------------------------------
// F path: core(pre(LN(x))) followed by an optional post projection.

struct Sublayer {
  nn::LayerNorm ln;
  std::optional<nn::Linear> pre;
  std::optional<nn::Linear> post;
  std::optional<nn::CausalAttention> attn;
  std::optional<nn::Mlp> ffn;

  nn::LayerNorm::Cache ln_cache;
  Mat ln_out;
  Mat pre_out;
  Mat core_out;
  nn::CausalAttention::Cache attn_cache;
  nn::Mlp::Cache ffn_cache;
  std::size_t batch = 0;
  std::size_t seq = 0;

  Mat forward(const ActivationTensor& x) {
    batch = x.batch;
    seq = x.seq;
    ln_out = ln.forward(x.data, ln_cache);
    const Mat* in = &ln_out;
    if (pre) {
      pre_out = pre->forward(ln_out);
      in = &pre_out;
    }
    Mat core = attn ? attn->forward(ActivationTensor(batch, seq, *in), attn_cache).data
                    : ffn->forward(*in, ffn_cache);
    if (!post) return core;
    core_out = std::move(core);
    return post->forward(core_out);
  }

  Mat backward(const Mat& grad_y) {
    Mat g = post ? post->backward(core_out, grad_y) : grad_y;
    g = attn ? attn->backward(attn_cache, ActivationTensor(batch, seq, std::move(g))).data
             : ffn->backward(ffn_cache, g);
    if (pre) g = pre->backward(ln_out, g);
    return ln.backward(ln_cache, g);
  }
};

Sublayer make_sublayer(nn::ParameterSet& ps, const std::string& name, std::size_t width,
                       std::size_t heads, bool is_attention, bool with_maps, RandomStream& rng) {
  Sublayer s;
  s.ln = nn::make_layer_norm(ps, name + ".ln", width);
  if (with_maps) s.pre = nn::make_identity_linear(ps, name + ".pre", width);
  if (is_attention) s.attn = nn::make_attention(ps, name + ".attn", width, heads, rng);
  else s.ffn = nn::make_feed_forward(ps, name + ".ffn", width, rng);
  if (with_maps) s.post = nn::make_identity_linear(ps, name + ".post", width);
  return s;
}

// ---------------------------------------------------------------------------

class GptSite final : public Site {
 public:
  explicit GptSite(Sublayer f) : f_(std::move(f)) {}
  ActivationTensor forward(const ActivationTensor& x) override {
    ActivationTensor y(x.batch, x.seq, f_.forward(x));
    y.data += x.data;
    return y;
  }
  ActivationTensor backward(const ActivationTensor& gy, std::span<const double>) override {
    ActivationTensor gx(gy.batch, gy.seq, f_.backward(gy.data));
    gx.data += gy.data;
    return gx;
  }

 private:
  Sublayer f_;
};

// Input-dependent stream-axis H = I - beta k k^T in place of the identity shortcut.
class DdlSite final : public Site {
 public:
  DdlSite(Sublayer f, nn::GeneratorNet gen, std::size_t n)
      : f_(std::move(f)), gen_(std::move(gen)), n_(n) {}

  void set_beta_override(std::optional<double> b) { beta_override_ = b; }
  std::vector<Mat> stream_operators() const override { return h_; }

  ActivationTensor forward(const ActivationTensor& x) override {
    x_ = x;
    outs_ = gen_.forward(nn::mean_pool(x), cache_);
    h_.clear();
    for (auto& o : outs_) {
      if (beta_override_) o.beta = *beta_override_;
      h_.push_back(nn::to_mat(geometry::householder(o.k, o.beta).matrix));
    }
    ActivationTensor y = nn::stream_apply(x, h_, n_);
    y.data += f_.forward(x);
    return y;
  }

  ActivationTensor backward(const ActivationTensor& gy, std::span<const double>) override {
    std::vector<Mat> gh;
    ActivationTensor gx = nn::stream_apply_backward(x_, h_, n_, gy, &gh);
    gx.data += f_.backward(gy.data);
    std::vector<nn::GeneratorGrads> grads(outs_.size());
    for (std::size_t b = 0; b < outs_.size(); ++b) {
      grads[b].k.assign(n_, 0.0);
      double gbeta = 0.0;
      nn::householder_backward(outs_[b].k, outs_[b].beta, gh[b], grads[b].k, &gbeta);
      grads[b].beta = beta_override_ ? 0.0 : gbeta;
    }
    gx.data += nn::mean_pool_backward(gen_.backward(cache_, grads), x_.seq).data;
    return gx;
  }

 private:
  Sublayer f_;
  nn::GeneratorNet gen_;
  std::size_t n_;
  std::optional<double> beta_override_;
  ActivationTensor x_;
  nn::GeneratorNet::Cache cache_;
  std::vector<nn::GeneratorOutputs> outs_;
  std::vector<Mat> h_;
};

// Sinkhorn projection of exp(logits) with a tape of every half step.
struct SinkhornTape {
  Mat positive;
  std::vector<Mat> steps;  // outputs of each normalization
  std::vector<Vec> sums;
  std::vector<bool> by_row;
};

Mat sinkhorn_forward(const Mat& logits, std::size_t iters, SinkhornTape& tape) {
  tape.positive = logits.array().exp().matrix();
  Mat m = tape.positive.unaryExpr([](double v) { return v <= 0.0 ? numkit::kSinkhornFloor : v; });
  tape.steps.clear();
  tape.sums.clear();
  tape.by_row.clear();
  for (std::size_t it = 0; it < iters; ++it) {
    const Vec rs = m.rowwise().sum();
    for (Index r = 0; r < m.rows(); ++r) m.row(r) /= rs(r);
    tape.steps.push_back(m);
    tape.sums.push_back(rs);
    tape.by_row.push_back(true);
    const Vec cs = m.colwise().sum().transpose();
    for (Index c = 0; c < m.cols(); ++c) m.col(c) /= cs(c);
    tape.steps.push_back(m);
    tape.sums.push_back(cs);
    tape.by_row.push_back(false);
  }
  return m;
}

Mat sinkhorn_backward(const SinkhornTape& tape, Mat g) {
  for (std::size_t s = tape.steps.size(); s-- > 0;) {
    const Mat& y = tape.steps[s];
    const Vec& sum = tape.sums[s];
    if (tape.by_row[s]) {
      for (Index r = 0; r < g.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        g.row(r) = (g.row(r).array() - dot) / sum(r);
      }
    } else {
      for (Index c = 0; c < g.cols(); ++c) {
        const double dot = g.col(c).dot(y.col(c));
        g.col(c) = (g.col(c).array() - dot) / sum(c);
      }
    }
  }
  return g.cwiseProduct(tape.positive);
}

// Input-independent doubly stochastic stream mixer with per-stream pre/post scales.
class MhcSite final : public Site {
 public:
  MhcSite(Sublayer f, nn::Parameter* logits, nn::Parameter* pre, nn::Parameter* post,
          std::size_t iters)
      : f_(std::move(f)), logits_(logits), pre_(pre), post_(post), iters_(iters) {}

  std::vector<Mat> stream_operators() const override { return std::vector<Mat>(x_.batch, p_); }

  ActivationTensor forward(const ActivationTensor& x) override {
    x_ = x;
    p_ = sinkhorn_forward(logits_->value, iters_, tape_);
    xs_ = ActivationTensor(x.batch, x.seq, scale_streams(x.data, pre_->value.row(0)));
    f_out_ = f_.forward(xs_);
    std::vector<Mat> ops(x.batch, p_);
    ActivationTensor y = nn::stream_apply(x, ops, ops.front().rows());
    y.data += scale_streams(f_out_, post_->value.row(0));
    return y;
  }

  ActivationTensor backward(const ActivationTensor& gy, std::span<const double>) override {
    const Index n = p_.rows(), d = ix(x_.width) / n;
    std::vector<Mat> ops(x_.batch, p_), gp;
    ActivationTensor gx = nn::stream_apply_backward(x_, ops, static_cast<std::size_t>(n), gy, &gp);
    Mat gsum = Mat::Zero(n, n);
    for (const auto& g : gp) gsum += g;
    logits_->grad += sinkhorn_backward(tape_, gsum);

    for (Index i = 0; i < n; ++i)
      post_->grad(0, i) += gy.data.middleCols(i * d, d).cwiseProduct(f_out_.middleCols(i * d, d)).sum();
    const Mat gxs = f_.backward(scale_streams(gy.data, post_->value.row(0)));
    for (Index i = 0; i < n; ++i)
      pre_->grad(0, i) += gxs.middleCols(i * d, d).cwiseProduct(x_.data.middleCols(i * d, d)).sum();
    gx.data += scale_streams(gxs, pre_->value.row(0));
    return gx;
  }

 private:
  Sublayer f_;
  nn::Parameter* logits_;
  nn::Parameter* pre_;
  nn::Parameter* post_;
  std::size_t iters_;
  ActivationTensor x_;
  ActivationTensor xs_;
  SinkhornTape tape_;
  Mat p_;
  Mat f_out_;
};

// Wide residual of n streams; per-input skew A from pooled features drives a
// fixed-point Cayley retraction on the stream axis. F runs at stream width and
// reads / writes the streams through row- and column-softmax mixers.
class JpmhcSite final : public Site {
 public:
  JpmhcSite(Sublayer f, nn::Mlp gen, std::size_t n, double alpha, std::size_t steps)
      : f_(std::move(f)), gen_(std::move(gen)), n_(n), alpha_(alpha), steps_(steps) {
    pairs_ = n * (n - 1) / 2;
    // |a_ij| <= c keeps ||A||_F <= 1, the regime of the retraction bound.
    skew_scale_ = 1.0 / std::sqrt(static_cast<double>(n * (n - 1)));
  }

  static std::size_t output_width(std::size_t n) { return n * (n - 1) / 2 + 2 * n; }

  std::vector<Mat> stream_operators() const override { return y_; }

  ActivationTensor forward(const ActivationTensor& x) override {
    x_ = x;
    const Index n = ix(n_), w = ix(x.width / n_), t = ix(x.seq);
    raw_ = gen_.forward(nn::mean_pool(x), gen_cache_);
    a_.clear();
    y_.clear();
    pre_.clear();
    post_.clear();
    for (std::size_t b = 0; b < x.batch; ++b) {
      numkit::Matrix a(n_, n_);
      std::size_t e = 0;
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = i + 1; j < n_; ++j, ++e) {
          const double v = skew_scale_ * std::tanh(raw_(ix(b), ix(e)));
          a(i, j) = v;
          a(j, i) = -v;
        }
      y_.push_back(nn::to_mat(
          geometry::iterative_cayley_retraction(a, alpha_, steps_, numkit::Matrix::identity(n_))));
      a_.push_back(std::move(a));
      pre_.push_back(nn::softmax_rows(raw_.block(ix(b), ix(pairs_), 1, n)));
      post_.push_back(nn::softmax_rows(raw_.block(ix(b), ix(pairs_) + n, 1, n)));
    }
    h_in_ = ActivationTensor(x.batch, x.seq, Mat::Zero(x.data.rows(), w));
    for (std::size_t b = 0; b < x.batch; ++b)
      for (Index i = 0; i < n; ++i)
        h_in_.slab(b) += pre_[b](0, i) * x.slab(b).middleCols(i * w, w);
    f_out_ = f_.forward(h_in_);
    ActivationTensor y = nn::stream_apply(x, y_, n_);
    for (std::size_t b = 0; b < x.batch; ++b)
      for (Index i = 0; i < n; ++i)
        y.slab(b).middleCols(i * w, w) += post_[b](0, i) * f_out_.middleRows(ix(b) * t, t);
    return y;
  }

  ActivationTensor backward(const ActivationTensor& gy, std::span<const double>) override {
    const Index n = ix(n_), w = ix(x_.width / n_), t = ix(x_.seq);
    std::vector<Mat> gyr;
    ActivationTensor gx = nn::stream_apply_backward(x_, y_, n_, gy, &gyr);
    Mat graw = Mat::Zero(ix(x_.batch), ix(output_width(n_)));

    Mat gf = Mat::Zero(f_out_.rows(), w);
    for (std::size_t b = 0; b < x_.batch; ++b) {
      Mat gpost(1, n);
      const auto fb = f_out_.middleRows(ix(b) * t, t);
      for (Index i = 0; i < n; ++i) {
        const auto gyi = gy.slab(b).middleCols(i * w, w);
        gpost(0, i) = gyi.cwiseProduct(fb).sum();
        gf.middleRows(ix(b) * t, t) += post_[b](0, i) * gyi;
      }
      graw.block(ix(b), ix(pairs_) + n, 1, n) = nn::softmax_rows_backward(post_[b], gpost);
    }
    const Mat gh = f_.backward(gf);
    for (std::size_t b = 0; b < x_.batch; ++b) {
      Mat gpre(1, n);
      const auto ghb = gh.middleRows(ix(b) * t, t);
      for (Index i = 0; i < n; ++i) {
        gpre(0, i) = ghb.cwiseProduct(x_.slab(b).middleCols(i * w, w)).sum();
        gx.slab(b).middleCols(i * w, w) += pre_[b](0, i) * ghb;
      }
      graw.block(ix(b), ix(pairs_), 1, n) = nn::softmax_rows_backward(pre_[b], gpre);

      const numkit::Matrix ga = geometry::retraction_backward(
          a_[b], alpha_, steps_, numkit::Matrix::identity(n_), nn::to_matrix(gyr[b]));
      std::size_t e = 0;
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = i + 1; j < n_; ++j, ++e) {
          const double th = std::tanh(raw_(ix(b), ix(e)));
          graw(ix(b), ix(e)) = (ga(i, j) - ga(j, i)) * skew_scale_ * (1.0 - th * th);
        }
    }
    gx.data += nn::mean_pool_backward(gen_.backward(gen_cache_, graw), x_.seq).data;
    return gx;
  }

 private:
  Sublayer f_;
  nn::Mlp gen_;
  std::size_t n_;
  double alpha_;
  std::size_t steps_;
  std::size_t pairs_ = 0;
  double skew_scale_ = 1.0;
  ActivationTensor x_;
  ActivationTensor h_in_;
  nn::Mlp::Cache gen_cache_;
  Mat raw_;
  Mat f_out_;
  std::vector<numkit::Matrix> a_;
  std::vector<Mat> y_;
  std::vector<Mat> pre_;
  std::vector<Mat> post_;
};

// Gated hybrid of a data-dependent Cayley rotation and a fixed-strength
// Householder reflection on the stream axis, followed by the F path.
class EdeltaSite final : public Site {
 public:
  EdeltaSite(Sublayer f, nn::GeneratorNet gen, std::size_t n, double householder_beta)
      : f_(std::move(f)), gen_(std::move(gen)), n_(n), hb_(householder_beta) {}

  void set_gamma_override(std::optional<double> g) { gamma_override_ = g; }
  std::span<const double> gammas() const override { return gammas_; }
  std::vector<Mat> stream_operators() const override { return m_; }

  ActivationTensor forward(const ActivationTensor& x) override {
    x_ = x;
    outs_ = gen_.forward(nn::mean_pool(x), cache_);
    gens_.clear();
    q_.clear();
    h_.clear();
    m_.clear();
    gammas_.clear();
    for (auto& o : outs_) {
      if (gamma_override_) o.gamma = *gamma_override_;
      gens_.emplace_back(o.u, o.v);
      q_.push_back(geometry::cayley(gens_.back(), o.beta));
      const auto h = geometry::householder(o.k, hb_);
      h_.push_back(h.matrix);
      o.k = h.direction;
      m_.push_back(nn::to_mat(o.gamma * q_.back() + (1.0 - o.gamma) * h_.back()));
      gammas_.push_back(o.gamma);
    }
    geo_ = nn::stream_apply(x, m_, n_);
    ActivationTensor y = geo_;
    y.data += f_.forward(geo_);
    return y;
  }

  ActivationTensor backward(const ActivationTensor& gy, std::span<const double> grad_gamma) override {
    ActivationTensor ggeo = gy;
    ggeo.data += f_.backward(gy.data);
    std::vector<Mat> gm;
    ActivationTensor gx = nn::stream_apply_backward(x_, m_, n_, ggeo, &gm);
    std::vector<nn::GeneratorGrads> grads(outs_.size());
    for (std::size_t b = 0; b < outs_.size(); ++b) {
      const auto& o = outs_[b];
      const numkit::Matrix g = nn::to_matrix(gm[b]);
      double gg = 0.0;
      for (std::size_t i = 0; i < n_ * n_; ++i)
        gg += g.data()[i] * (q_[b].data()[i] - h_[b].data()[i]);
      if (!grad_gamma.empty()) gg += grad_gamma[b];

      const auto cg = geometry::cayley_backward(gens_[b].matrix(), o.beta, q_[b], o.gamma * g);
      grads[b].u.assign(n_, 0.0);
      grads[b].v.assign(n_, 0.0);
      geometry::skew_backward(gens_[b], cg.grad_skew, grads[b].u, grads[b].v);
      grads[b].beta = cg.grad_beta;
      grads[b].k.assign(n_, 0.0);
      nn::householder_backward(o.k, hb_, (1.0 - o.gamma) * gm[b], grads[b].k, nullptr);
      grads[b].gamma = gamma_override_ ? 0.0 : gg;
    }
    gx.data += nn::mean_pool_backward(gen_.backward(cache_, grads), x_.seq).data;
    return gx;
  }

 private:
  Sublayer f_;
  nn::GeneratorNet gen_;
  std::size_t n_;
  double hb_;
  std::optional<double> gamma_override_;
  ActivationTensor x_;
  ActivationTensor geo_;
  nn::GeneratorNet::Cache cache_;
  std::vector<nn::GeneratorOutputs> outs_;
  std::vector<geometry::SkewGenerator> gens_;
  std::vector<numkit::Matrix> q_;
  std::vector<numkit::Matrix> h_;
  std::vector<Mat> m_;
  std::vector<double> gammas_;
};

std::unique_ptr<Site> make_site(const ModelConfig& c, nn::ParameterSet& ps, const std::string& name,
                                bool is_attention, RandomStream& rng) {
  const std::size_t sw = c.sublayer_width(), n = c.streams();
  const std::size_t hidden = std::max<std::size_t>(1, sw / c.geo_hidden_ratio);
  switch (c.kind) {
    case ModelKind::gpt:
      return std::make_unique<GptSite>(make_sublayer(ps, name, sw, c.n_heads, is_attention, false, rng));
    case ModelKind::ddl: {
      auto f = make_sublayer(ps, name, sw, c.n_heads, is_attention, false, rng);
      nn::GeneratorSpec spec{.width = c.n_embd, .hidden = hidden, .n = n, .rotation = false,
                             .reflection = true, .scale = true, .gate = false};
      auto gen = nn::make_generators(ps, name, spec, rng);
      return std::make_unique<DdlSite>(std::move(f), std::move(gen), n);
    }
    case ModelKind::mhc: {
      auto f = make_sublayer(ps, name, sw, c.n_heads, is_attention, false, rng);
      auto* logits = &ps.add(name + ".mix_logits", Mat::Zero(ix(n), ix(n)), false);
      auto* pre = &ps.add(name + ".pre_scale", Mat::Ones(1, ix(n)), false);
      auto* post = &ps.add(name + ".post_scale", Mat::Ones(1, ix(n)), false);
      return std::make_unique<MhcSite>(std::move(f), logits, pre, post, c.sinkhorn_iters);
    }
    case ModelKind::jpmhc: {
      auto f = make_sublayer(ps, name, sw, c.n_heads, is_attention, false, rng);
      auto gen = nn::make_mlp(ps, name + ".gen", c.n_embd, hidden, JpmhcSite::output_width(n), rng);
      return std::make_unique<JpmhcSite>(std::move(f), std::move(gen), n, c.retraction_alpha,
                                         c.retraction_steps);
    }
    case ModelKind::edelta: {
      auto f = make_sublayer(ps, name, sw, c.n_heads, is_attention, true, rng);
      nn::GeneratorSpec spec{.width = c.n_embd, .hidden = hidden, .n = n,
                             .gate_bias = c.init_gate_bias};
      auto gen = nn::make_generators(ps, name, spec, rng);
      return std::make_unique<EdeltaSite>(std::move(f), std::move(gen), n, c.householder_beta);
    }
  }
  throw InvalidConfig("unknown model kind");
}

}  // namespace

Mat mhc_mixer(const Mat& logits, std::size_t iters) {
  SinkhornTape tape;
  return sinkhorn_forward(logits, iters, tape);
}

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::gpt: return "gpt";
    case ModelKind::ddl: return "ddl";
    case ModelKind::mhc: return "mhc";
    case ModelKind::jpmhc: return "jpmhc";
    case ModelKind::edelta: return "edelta";
  }
  return "gpt";
}

ModelKind model_kind_from_string(std::string_view name) {
  for (auto k : kAllKinds)
    if (to_string(k) == name) return k;
  throw InvalidConfig("unknown model kind '" + std::string(name) + "'");
}

std::size_t ModelConfig::sublayer_width() const noexcept {
  return kind == ModelKind::jpmhc ? n_embd / streams() : n_embd;
}

void ModelConfig::validate(bool allow_empty) const {
  if (n_layers == 0 && !allow_empty) throw InvalidConfig("n_layers must be at least 1");
  if (n_embd == 0 || task_dim == 0 || seq_len == 0) throw InvalidConfig("dimensions must be positive");
  if (n_heads == 0 || n_embd % n_heads != 0) {
    throw InvalidConfig("n_embd " + std::to_string(n_embd) + " not divisible by n_heads " +
                        std::to_string(n_heads));
  }
  if (n_streams && (*n_streams < 2 || n_embd % *n_streams != 0)) {
    throw InvalidConfig("n_embd " + std::to_string(n_embd) + " not divisible by n_streams " +
                        std::to_string(*n_streams));
  }
  const bool stream_kind = kind != ModelKind::gpt;
  if (stream_kind && n_embd % streams() != 0) throw InvalidConfig("n_embd not divisible by streams");
  if (kind == ModelKind::jpmhc && sublayer_width() % n_heads != 0) {
    throw InvalidConfig("stream width not divisible by n_heads");
  }
  if (geo_hidden_ratio == 0) throw InvalidConfig("geo_hidden_ratio must be positive");
  if (!(lambda_gate >= 0.0)) throw InvalidConfig("lambda_gate must be nonnegative");
  if (!(retraction_alpha > 0.0) || retraction_steps == 0) throw InvalidConfig("retraction settings");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "kind = " << to_string(kind) << '\n'
     << "n_layers = " << n_layers << '\n'
     << "n_embd = " << n_embd << '\n'
     << "n_heads = " << n_heads << '\n';
  if (n_streams) os << "n_streams = " << *n_streams << '\n';
  os << "task_dim = " << task_dim << '\n'
     << "seq_len = " << seq_len << '\n'
     << "init_gate_bias = " << format_real(init_gate_bias) << '\n'
     << "lambda_gate = " << format_real(lambda_gate) << '\n'
     << "householder_beta = " << format_real(householder_beta) << '\n'
     << "sinkhorn_iters = " << sinkhorn_iters << '\n'
     << "retraction_alpha = " << format_real(retraction_alpha) << '\n'
     << "retraction_steps = " << retraction_steps << '\n'
     << "geo_hidden_ratio = " << geo_hidden_ratio << '\n';
  return os.str();
}

void ModelConfig::set(std::string_view key, std::string_view value) {
  if (key == "kind") kind = model_kind_from_string(value);
  else if (key == "n_layers") n_layers = parse_count(key, value);
  else if (key == "n_embd") n_embd = parse_count(key, value);
  else if (key == "n_heads") n_heads = parse_count(key, value);
  else if (key == "n_streams") {
    if (value.empty() || value == "none") n_streams.reset();
    else n_streams = parse_count(key, value);
  } else if (key == "task_dim") task_dim = parse_count(key, value);
  else if (key == "seq_len") seq_len = parse_count(key, value);
  else if (key == "init_gate_bias") init_gate_bias = parse_real(key, value);
  else if (key == "lambda_gate") lambda_gate = parse_real(key, value);
  else if (key == "householder_beta") householder_beta = parse_real(key, value);
  else if (key == "sinkhorn_iters") sinkhorn_iters = parse_count(key, value);
  else if (key == "retraction_alpha") retraction_alpha = parse_real(key, value);
  else if (key == "retraction_steps") retraction_steps = parse_count(key, value);
  else if (key == "geo_hidden_ratio") geo_hidden_ratio = parse_count(key, value);
  else throw InvalidConfig("unknown config key '" + std::string(key) + "'");
}

ModelConfig ModelConfig::from_text(std::string_view text, ModelConfig base) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("expected key = value, got '" + line + "'");
    base.set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
  }
  return base;
}

ModelConfig ModelConfig::from_text(std::string_view text) { return from_text(text, ModelConfig{}); }

ModelConfig matched_config(ModelKind kind, std::size_t task_dim, std::size_t seq_len) {
  ModelConfig c;
  c.kind = kind;
  c.task_dim = task_dim;
  c.seq_len = seq_len;
  c.n_heads = 4;
  switch (kind) {
    case ModelKind::gpt: c.n_layers = 9; c.n_embd = 128; break;
    case ModelKind::ddl: c.n_layers = 8; c.n_embd = 128; break;
    case ModelKind::mhc: c.n_layers = 9; c.n_embd = 128; c.n_streams = 4; break;
    case ModelKind::jpmhc: c.n_layers = 7; c.n_embd = 512; c.n_streams = 4; break;
    case ModelKind::edelta: c.n_layers = 6; c.n_embd = 128; c.n_streams = 4; break;
  }
  return c;
}

BlockOutput edelta_block_forward(Block& block, const ActivationTensor& x) {
  BlockOutput out;
  ActivationTensor mid = block.attn->forward(x);
  out.x = block.mlp->forward(mid);
  for (const Site* s : {block.attn.get(), block.mlp.get()}) {
    const auto g = s->gammas();
    double m = 0.0;
    for (double v : g) m += v;
    out.gammas.push_back(g.empty() ? 0.0 : m / static_cast<double>(g.size()));
  }
  return out;
}

ActivationTensor baseline_block_forward(Block& block, const ActivationTensor& x) {
  return block.mlp->forward(block.attn->forward(x));
}

Model::Model(const ModelConfig& config, RandomStream init) : Model(config, std::move(init), Unchecked{}) {
  config_.validate();
}

Model::Model(const ModelConfig& config, RandomStream init, Unchecked) : config_(config) {
  config_.validate(true);
  const std::size_t w = config_.n_embd;
  in_proj_ = nn::make_linear(params_, "embed.in_proj", config_.task_dim, w, init);
  Mat pos(ix(config_.seq_len), ix(w));
  for (Index i = 0; i < pos.size(); ++i) pos.data()[i] = init.normal(0.0, nn::kInitStd);
  pos_ = &params_.add("embed.position", std::move(pos), true);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string name = "blocks." + std::to_string(l);
    Block b;
    b.attn = make_site(config_, params_, name + ".attn_site", true, init);
    b.mlp = make_site(config_, params_, name + ".mlp_site", false, init);
    blocks_.push_back(std::move(b));
  }
  final_ln_ = nn::make_layer_norm(params_, "final_ln", w);
  head_ = nn::make_linear(params_, "head", w, config_.task_dim, init);
}

Model::~Model() = default;

void Model::set_overrides(const Overrides& o) {
  for (auto& b : blocks_)
    for (Site* s : {b.attn.get(), b.mlp.get()}) {
      if (auto* e = dynamic_cast<EdeltaSite*>(s)) e->set_gamma_override(o.gamma);
      if (auto* d = dynamic_cast<DdlSite*>(s)) d->set_beta_override(o.ddl_beta);
    }
}

ForwardResult Model::forward(const ActivationTensor& input) {
  if (input.width != config_.task_dim) throw ShapeMismatch("input width != task_dim");
  if (input.seq > config_.seq_len) throw ShapeMismatch("sequence longer than seq_len");
  if (input.seq == 0) throw EmptySequence("model input has no positions");
  batch_ = input.batch;
  input_cache_ = input.data;
  ForwardResult r;
  ActivationTensor h(input.batch, input.seq, in_proj_.forward(input.data));
  for (std::size_t b = 0; b < input.batch; ++b)
    h.slab(b) += pos_->value.topRows(ix(input.seq));
  r.embedded = h;
  for (auto& block : blocks_) {
    if (config_.kind == ModelKind::edelta) {
      auto out = edelta_block_forward(block, h);
      h = std::move(out.x);
      r.gammas.insert(r.gammas.end(), out.gammas.begin(), out.gammas.end());
      for (const Site* s : {block.attn.get(), block.mlp.get()})
        r.gates.emplace_back(s->gammas().begin(), s->gammas().end());
    } else {
      h = baseline_block_forward(block, h);
    }
  }
  final_out_ = final_ln_.forward(h.data, final_cache_);
  r.output = ActivationTensor(input.batch, input.seq, head_.forward(final_out_));
  r.hidden = std::move(h);
  return r;
}

void Model::backward(const ActivationTensor& grad_output,
                     std::span<const std::vector<double>> grad_gates) {
  if (!grad_gates.empty() && grad_gates.size() != 2 * blocks_.size()) {
    throw ShapeMismatch("grad_gates needs one entry per site");
  }
  const std::size_t seq = grad_output.seq;
  ActivationTensor g(grad_output.batch, seq,
                     final_ln_.backward(final_cache_, head_.backward(final_out_, grad_output.data)));
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    const auto gate = [&](std::size_t site) -> std::span<const double> {
      if (grad_gates.empty()) return {};
      return grad_gates[2 * l + site];
    };
    g = blocks_[l].mlp->backward(g, gate(1));
    g = blocks_[l].attn->backward(g, gate(0));
  }
  for (std::size_t b = 0; b < g.batch; ++b) pos_->grad.topRows(ix(seq)) += g.slab(b);
  in_proj_.backward(input_cache_, g.data);
}

Model build_model(const ModelConfig& config, RandomStream init) {
  return Model(config, std::move(init));
}

std::size_t count_params(const ModelConfig& config) {
  return Model(config, RandomStream(0), Model::Unchecked{}).param_count();
}

namespace {
constexpr std::string_view kCheckpointMagic = "EDCKPT";
constexpr std::uint16_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const Model& model, std::uint64_t seed, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  w.str(model.config().to_text());
  w.u64(seed);
  w.u32(static_cast<std::uint32_t>(model.params().tensor_count()));
  for (const auto& p : model.params()) {
    w.str(p.name);
    w.u64(static_cast<std::uint64_t>(p.value.rows()));
    w.u64(static_cast<std::uint64_t>(p.value.cols()));
    w.f64s(std::span<const double>(p.value.data(), p.size()));
  }
  binio::write_file_atomic(path, w.buffer());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string data = binio::read_file(path);
  binio::Reader r(data);
  if (r.remaining() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw FormatError("not a checkpoint: " + path.string());
  }
  const auto version = r.u16();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const ModelConfig config = ModelConfig::from_text(r.str());
  const std::uint64_t seed = r.u64();
  Model model(config, RandomStream(seed));
  const std::uint32_t count = r.u32();
  if (count != model.params().tensor_count()) throw FormatError("checkpoint parameter count mismatch");
  for (auto& p : model.params()) {
    const std::string name = r.str();
    const auto rows = r.u64(), cols = r.u64();
    if (name != p.name || rows != static_cast<std::uint64_t>(p.value.rows()) ||
        cols != static_cast<std::uint64_t>(p.value.cols())) {
      throw FormatError("checkpoint parameter '" + name + "' does not match the model");
    }
    r.f64s(std::span<double>(p.value.data(), p.size()));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
  return Checkpoint{std::move(model), seed};
}

}  // namespace georesidual::models
