#include "georesidual/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "georesidual/binio.hpp"
#include "georesidual/errors.hpp"
#include "georesidual/geometry.hpp"

namespace georesidual::trainer {

using datasets::Dataset;
using models::Model;
using models::ModelConfig;
using numkit::RandomStream;
using Json = nlohmann::ordered_json;
using Eigen::Index;

namespace {

Index ix(std::size_t n) { return static_cast<Index>(n); }

// Sequential minibatches over a seeded permutation; reshuffles at each epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, RandomStream rng)
      : order_(n), batch_(std::min(batch, n)), rng_(std::move(rng)) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
  }

  std::span<const std::size_t> next() {
    if (pos_ + batch_ > order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    const auto out = std::span<const std::size_t>(order_).subspan(pos_, batch_);
    pos_ += batch_;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  RandomStream rng_;
};

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace

double lr_at(std::size_t iter, const Schedule& s) {
  if (iter < s.warmup) return s.peak_lr * static_cast<double>(iter) / static_cast<double>(s.warmup);
  if (iter >= s.decay_end) return s.min_lr;
  const double progress =
      static_cast<double>(iter - s.warmup) / static_cast<double>(s.decay_end - s.warmup);
  return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimState::OptimState(const nn::ParameterSet& ps, AdamWConfig cfg) : hyper(cfg) {
  for (const auto& p : ps) {
    m.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    v.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
  }
}

double clip_gradients(nn::ParameterSet& ps, double max_norm) {
  const double norm = ps.grad_norm();
  if (!std::isfinite(norm)) throw NonFiniteGradient("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : ps) p.grad *= scale;
  }
  return norm;
}

StepInfo adamw_step(nn::ParameterSet& ps, OptimState& state, double lr) {
  if (state.m.size() != ps.tensor_count()) throw ShapeMismatch("optimizer state does not match parameters");
  const auto& h = state.hyper;
  StepInfo info;
  info.lr = lr;
  info.grad_norm = clip_gradients(ps, h.clip);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  std::size_t i = 0;
  for (auto& p : ps) {
    Mat& m = state.m[i];
    Mat& v = state.v[i];
    ++i;
    if (p.decay && h.weight_decay != 0.0) p.value *= 1.0 - lr * h.weight_decay;
    m = h.beta1 * m + (1.0 - h.beta1) * p.grad;
    v = h.beta2 * v + (1.0 - h.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + h.eps);
  }
  return info;
}

double total_loss(double task_loss, std::span<const double> gammas, double lambda_gate) {
  double penalty = 0.0;
  for (double g : gammas) penalty += 4.0 * g * (1.0 - g);
  return task_loss + lambda_gate * penalty;
}

double mse(const ActivationTensor& pred, const ActivationTensor& target) {
  if (!pred.same_shape(target)) throw ShapeMismatch("mse shapes differ");
  if (pred.data.size() == 0) throw EmptySequence("mse of an empty tensor");
  return (pred.data - target.data).squaredNorm() / static_cast<double>(pred.data.size());
}

namespace {

// Runs the model over sequences [0, limit) in chunks; calls fn(batch, output).
template <typename Fn>
void for_each_chunk(Model& model, const Dataset& ds, std::size_t limit, std::size_t batch, Fn&& fn) {
  const std::size_t n = limit == 0 ? ds.N : std::min(limit, ds.N);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch) {
    idx.resize(std::min(batch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto b = datasets::gather(ds, idx);
    fn(b, model.forward(b.input).output);
  }
}

}  // namespace

double evaluate(Model& model, const Dataset& ds, std::size_t limit, std::size_t batch) {
  double sum = 0.0;
  std::size_t count = 0;
  for_each_chunk(model, ds, limit, batch, [&](const datasets::Batch& b, const ActivationTensor& y) {
    sum += (y.data - b.target.data).squaredNorm();
    count += static_cast<std::size_t>(y.data.size());
  });
  if (count == 0) throw EmptySequence("evaluate on an empty dataset");
  return sum / static_cast<double>(count);
}

double norm_deviation(const ActivationTensor& outputs, std::size_t positions) {
  const std::size_t last = std::min(positions, outputs.seq - 1);
  if (outputs.batch == 0 || last == 0) throw EmptySequence("norm_deviation needs positions 1..");
  double sum = 0.0;
  for (std::size_t b = 0; b < outputs.batch; ++b)
    for (std::size_t t = 1; t <= last; ++t) sum += std::abs(outputs.row(b, t).norm() - 1.0);
  return sum / static_cast<double>(outputs.batch * last);
}

double norm_deviation(Model& model, const Dataset& echo, std::size_t positions, std::size_t limit) {
  double sum = 0.0;
  std::size_t n = 0;
  for_each_chunk(model, echo, limit, 64, [&](const datasets::Batch&, const ActivationTensor& y) {
    sum += norm_deviation(y, positions) * static_cast<double>(y.batch);
    n += y.batch;
  });
  return sum / static_cast<double>(n);
}

std::vector<double> norm_profile(const ActivationTensor& outputs) {
  std::vector<double> out(outputs.seq, 0.0);
  for (std::size_t b = 0; b < outputs.batch; ++b)
    for (std::size_t t = 0; t < outputs.seq; ++t) out[t] += outputs.row(b, t).norm();
  for (double& x : out) x /= static_cast<double>(std::max<std::size_t>(outputs.batch, 1));
  return out;
}

Alignment cosine_alignment(const Mat& preds, const Mat& targets) {
  if (preds.rows() != targets.rows() || preds.cols() != targets.cols()) {
    throw ShapeMismatch("cosine_alignment shapes differ");
  }
  Alignment a;
  double sum = 0.0;
  std::size_t used = 0;
  for (Index r = 0; r < preds.rows(); ++r) {
    const double np = preds.row(r).norm(), nt = targets.row(r).norm();
    if (np == 0.0 || nt == 0.0) {
      ++a.skipped;
      continue;
    }
    sum += preds.row(r).dot(targets.row(r)) / (np * nt);
    ++used;
  }
  a.value = used == 0 ? 0.0 : sum / static_cast<double>(used);
  return a;
}

RunRecord train_run(const ModelConfig& config, const Dataset& train, const Dataset& val,
                    std::uint64_t seed, const TrainOptions& opts) {
  if (train.d != config.task_dim || val.d != config.task_dim) {
    throw ShapeMismatch("dataset dimension does not match task_dim");
  }
  if (train.T > config.seq_len || val.T > config.seq_len) {
    throw ShapeMismatch("dataset sequences longer than seq_len");
  }
  if (train.N == 0 || val.N == 0) throw EmptySequence("training needs nonempty datasets");
  const auto started = std::chrono::steady_clock::now();
  const RandomStream root(seed);
  Model model = models::build_model(config, root.substream("init"));
  OptimState state(model.params(), opts.adamw);
  BatchSampler sampler(train.N, opts.batch, root.substream("shuffle"));

  RunRecord rec;
  rec.config = config;
  rec.dataset = train.name;
  rec.seed = seed;
  rec.iters = opts.iters;
  rec.batch = std::min(opts.batch, train.N);
  rec.params = model.param_count();

  const bool gated = config.kind == models::ModelKind::edelta;
  for (std::size_t it = 0; it < opts.iters; ++it) {
    const auto b = datasets::gather(train, sampler.next());
    model.params().zero_grad();
    const auto fwd = model.forward(b.input);
    const double task = mse(fwd.output, b.target);
    ActivationTensor grad(b.target.batch, b.target.seq,
                          (fwd.output.data - b.target.data) *
                              (2.0 / static_cast<double>(fwd.output.data.size())));
    // Gate penalty per input, averaged over the batch.
    double loss = task;
    std::vector<std::vector<double>> grad_gates;
    if (gated) {
      const double scale = config.lambda_gate / static_cast<double>(b.input.batch);
      for (const auto& site : fwd.gates) {
        loss = total_loss(loss, site, scale);
        auto& g = grad_gates.emplace_back(site.size());
        for (std::size_t i = 0; i < site.size(); ++i) g[i] = scale * 4.0 * (1.0 - 2.0 * site[i]);
      }
    }
    model.backward(grad, grad_gates);
    StepInfo step;
    try {
      step = adamw_step(model.params(), state, lr_at(it, opts.schedule));
    } catch (const NonFiniteGradient&) {
      rec.status = "non_finite_gradient";
      rec.iters = it;
      break;
    }
    if (it % opts.log_every == 0 || it + 1 == opts.iters) {
      LogEntry e;
      e.iter = it;
      e.train_loss = loss;
      e.val_loss = evaluate(model, val, opts.log_val_samples);
      e.lr = step.lr;
      e.grad_norm = step.grad_norm;
      e.gammas = fwd.gammas;
      rec.log.push_back(std::move(e));
    }
  }

  rec.final.val_loss = evaluate(model, val);
  if (starts_with(val.name, "stability")) {
    rec.final.norm_deviation = norm_deviation(model, val, 100);
    std::vector<double> profile(val.T, 0.0);
    for_each_chunk(model, val, 0, 64, [&](const datasets::Batch&, const ActivationTensor& y) {
      const auto p = norm_profile(y);
      for (std::size_t t = 0; t < p.size(); ++t) profile[t] += p[t] * static_cast<double>(y.batch);
    });
    for (double& x : profile) x /= static_cast<double>(val.N);
    rec.norm_profile = std::move(profile);
  }
  if (starts_with(val.name, "reflection")) {
    Mat preds(ix(val.N), ix(val.d)), targets(ix(val.N), ix(val.d));
    Index row = 0;
    for_each_chunk(model, val, 0, 64, [&](const datasets::Batch& b, const ActivationTensor& y) {
      for (std::size_t i = 0; i < y.batch; ++i, ++row) {
        preds.row(row) = y.row(i, 0);
        targets.row(row) = b.target.row(i, 0);
      }
    });
    rec.final.cosine_alignment = cosine_alignment(preds, targets).value;
  }
  if (opts.checkpoint) models::save_checkpoint(model, seed, *opts.checkpoint);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Reflection diagnostic

std::string_view to_string(DiagnosticKind k) noexcept {
  switch (k) {
    case DiagnosticKind::ddl_toy: return "ddl_toy";
    case DiagnosticKind::hybrid_toy: return "hybrid_toy";
    case DiagnosticKind::cayley_toy: return "cayley_toy";
  }
  return "?";
}

DiagnosticKind diagnostic_kind_from_string(std::string_view name) {
  for (auto k : {DiagnosticKind::ddl_toy, DiagnosticKind::hybrid_toy, DiagnosticKind::cayley_toy})
    if (to_string(k) == name) return k;
  throw InvalidConfig("unknown diagnostic kind '" + std::string(name) + "'");
}

namespace {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Rank-2 Cayley action on one vector. M = beta/2 (u v^T - v u^T) = P K P^T with
// P = [u v]; (I + P K P^T)^-1 = I - P K (I + P^T P K)^-1 P^T.
struct CayleyVec {
  const double* u;
  const double* v;
  Index d;
  double beta;

  double dot(const double* a, const double* b) const {
    return Eigen::Map<const Vec>(a, d).dot(Eigen::Map<const Vec>(b, d));
  }
  Mat2 k(double sign) const {
    Mat2 m;
    m << 0.0, sign * beta / 2.0, -sign * beta / 2.0, 0.0;
    return m;
  }
  // (I + sign M)^-1 r
  Vec solve(const Vec& r, double sign) const {
    Eigen::Map<const Vec> um(u, d), vm(v, d);
    Mat2 g;
    g << um.dot(um), um.dot(vm), vm.dot(um), vm.dot(vm);
    const Mat2 ks = k(sign);
    const Vec2 pr(um.dot(r), vm.dot(r));
    const Vec2 c = ks * (Mat2::Identity() + g * ks).inverse() * pr;
    return r - um * c(0) - vm * c(1);
  }
  // A s = u (v.s) - v (u.s)
  Vec apply_a(const Vec& s) const {
    Eigen::Map<const Vec> um(u, d), vm(v, d);
    return um * vm.dot(s) - vm * um.dot(s);
  }
  Vec forward(const Vec& x) const { return solve(x - (beta / 2.0) * apply_a(x), +1.0); }
  // Accumulates dL/du, dL/dv; returns dL/dbeta.
  double backward(const Vec& x, const Vec& y, const Vec& gy, Eigen::Ref<RowVec> gu,
                  Eigen::Ref<RowVec> gv) const {
    Eigen::Map<const Vec> um(u, d), vm(v, d);
    const Vec lambda = solve(gy, -1.0);
    const Vec s = x + y;
    const double h = beta / 2.0;
    gu += (-h * (lambda * s.dot(vm) - s * lambda.dot(vm))).transpose();
    gv += (-h * (s * lambda.dot(um) - lambda * s.dot(um))).transpose();
    return -0.5 * lambda.dot(apply_a(s));
  }
};

CayleyVec row_cayley(const Mat& u, const Mat& v, Index r, double beta) {
  return CayleyVec{u.row(r).data(), v.row(r).data(), u.cols(), beta};
}

Mat rows_of(const Dataset& ds, std::span<const std::size_t> idx, bool targets) {
  Mat out(ix(idx.size()), ix(ds.d));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = targets ? ds.target(idx[i], 0) : ds.input(idx[i], 0);
    for (std::size_t j = 0; j < ds.d; ++j) out(ix(i), ix(j)) = src[j];
  }
  return out;
}

Mat all_rows(const Dataset& ds, bool targets) {
  std::vector<std::size_t> idx(ds.N);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return rows_of(ds, idx, targets);
}

}  // namespace

ReflectionToy::ReflectionToy(DiagnosticKind kind, std::size_t d, double gate_bias, RandomStream rng)
    : kind_(kind), d_(ix(d)) {
  if (kind != DiagnosticKind::cayley_toy) k_ = nn::make_linear(ps_, "gen_k", d, d, rng);
  if (kind == DiagnosticKind::hybrid_toy) {
    u_ = nn::make_linear(ps_, "gen_u", d, d, rng);
    v_ = nn::make_linear(ps_, "gen_v", d, d, rng);
  }
  if (kind == DiagnosticKind::cayley_toy) {
    Mat w(d_, d_);
    for (Index i = 0; i < d_; ++i)
      for (Index j = 0; j < d_; ++j) w(i, j) = rng.normal(0.0, nn::kInitStd);
    skew_ = &ps_.add("skew", std::move(w), true);
  }
  beta_ = &ps_.add("beta", Mat::Constant(1, 1, 1.0), false);
  if (kind == DiagnosticKind::hybrid_toy) gate_ = nn::make_constant_linear(ps_, "gate", d, 1, gate_bias);
}

Mat ReflectionToy::forward(const Mat& x) {
  x_ = x;
  const Index rows = x.rows();
  Mat y = Mat::Zero(rows, d_);
  if (k_) {
    kraw_ = k_->forward(x);
    kunit_.resize(rows, d_);
    h_.resize(rows, d_);
    const double hb = kind_ == DiagnosticKind::ddl_toy ? beta() : 2.0;
    for (Index r = 0; r < rows; ++r) {
      const double len = kraw_.row(r).norm();
      if (len < 1e-12) throw ZeroDirection("toy reflection direction vanished");
      kunit_.row(r) = kraw_.row(r) / len;
      h_.row(r) = x.row(r) - hb * kunit_.row(r).dot(x.row(r)) * kunit_.row(r);
    }
  }
  if (u_) {
    uraw_ = u_->forward(x);
    vraw_ = v_->forward(x);
    q_.resize(rows, d_);
    for (Index r = 0; r < rows; ++r) q_.row(r) = row_cayley(uraw_, vraw_, r, beta()).forward(x.row(r).transpose()).transpose();
  }
  if (skew_) {
    // A = W - W^T, one operator shared by every input.
    skew_a_ = nn::to_matrix(skew_->value - skew_->value.transpose());
    skew_q_ = geometry::cayley_from_skew(skew_a_, beta());
    q_ = x * nn::to_mat(skew_q_).transpose();
  }
  switch (kind_) {
    case DiagnosticKind::ddl_toy: y = h_; break;
    case DiagnosticKind::cayley_toy: y = q_; break;
    case DiagnosticKind::hybrid_toy:
      gamma_ = gate_->forward(x);
      for (Index r = 0; r < rows; ++r) {
        gamma_(r, 0) = nn::sigmoid(gamma_(r, 0));
        y.row(r) = gamma_(r, 0) * q_.row(r) + (1.0 - gamma_(r, 0)) * h_.row(r);
      }
      break;
  }
  return y;
}

void ReflectionToy::backward(const Mat& gy) {
  const Index rows = gy.rows();
  Mat gq, gh;
  if (kind_ == DiagnosticKind::hybrid_toy) {
    gq.resize(rows, d_);
    gh.resize(rows, d_);
    Mat gz(rows, 1);
    for (Index r = 0; r < rows; ++r) {
      const double g = gamma_(r, 0);
      gq.row(r) = g * gy.row(r);
      gh.row(r) = (1.0 - g) * gy.row(r);
      gz(r, 0) = gy.row(r).dot(q_.row(r) - h_.row(r)) * g * (1.0 - g);
    }
    gate_->backward(x_, gz);
  } else if (kind_ == DiagnosticKind::ddl_toy) {
    gh = gy;
  } else {
    gq = gy;
  }
  if (k_) {
    const double hb = kind_ == DiagnosticKind::ddl_toy ? beta() : 2.0;
    Mat graw(rows, d_);
    double gbeta = 0.0;
    for (Index r = 0; r < rows; ++r) {
      const RowVec k = kunit_.row(r);
      const double c = k.dot(x_.row(r)), kg = k.dot(gh.row(r));
      const RowVec gk = -hb * (c * gh.row(r) + kg * x_.row(r));
      gbeta += -c * kg;
      const auto g = nn::normalize_backward(
          std::span<const double>(kraw_.row(r).data(), static_cast<std::size_t>(d_)),
          std::span<const double>(gk.data(), static_cast<std::size_t>(d_)));
      for (Index j = 0; j < d_; ++j) graw(r, j) = g[static_cast<std::size_t>(j)];
    }
    k_->backward(x_, graw);
    if (kind_ == DiagnosticKind::ddl_toy) beta_->grad(0, 0) += gbeta;
  }
  if (skew_) {
    const Mat grad_q = gq.transpose() * x_;
    const auto g = geometry::cayley_backward(skew_a_, beta(), skew_q_, nn::to_matrix(grad_q));
    const Mat ga = nn::to_mat(g.grad_skew);
    skew_->grad += ga - ga.transpose();
    beta_->grad(0, 0) += g.grad_beta;
  }
  if (u_) {
    Mat gu = Mat::Zero(rows, d_), gv = Mat::Zero(rows, d_);
    double gbeta = 0.0;
    for (Index r = 0; r < rows; ++r) {
      gbeta += row_cayley(uraw_, vraw_, r, beta()).backward(x_.row(r).transpose(), q_.row(r).transpose(),
                                  gq.row(r).transpose(), gu.row(r), gv.row(r));
    }
    u_->backward(x_, gu);
    v_->backward(x_, gv);
    beta_->grad(0, 0) += gbeta;
  }
}

DiagnosticRecord reflection_diagnostic(DiagnosticKind kind, std::size_t n_samples,
                                       std::uint64_t seed, std::size_t iters,
                                       const DiagnosticOptions& opts) {
  if (n_samples == 0) throw InvalidInput("reflection diagnostic needs samples");
  const auto data = datasets::gen_reflection(seed, n_samples, opts.d);
  const RandomStream root(seed);
  ReflectionToy op(kind, opts.d, opts.gate_bias, root.substream("init"));
  OptimState state(op.params(), opts.adamw);
  BatchSampler sampler(n_samples, opts.batch, root.substream("shuffle"));
  const Mat val_x = all_rows(data.val, false), val_y = all_rows(data.val, true);

  DiagnosticRecord rec;
  rec.kind = kind;
  rec.samples = n_samples;
  rec.seed = seed;
  rec.iters = iters;
  const auto measure = [&](std::size_t it) {
    const Mat pred = op.forward(val_x);
    DiagnosticPoint p;
    p.iter = it;
    p.alignment = cosine_alignment(pred, val_y).value;
    p.param = kind == DiagnosticKind::hybrid_toy ? op.mean_gamma() : op.beta();
    return p;
  };
  for (std::size_t it = 0; it < iters; ++it) {
    if (it % opts.log_every == 0) rec.trajectory.push_back(measure(it));
    const auto idx = sampler.next();
    const Mat x = rows_of(data.train, idx, false), y = rows_of(data.train, idx, true);
    op.params().zero_grad();
    const Mat pred = op.forward(x);
    op.backward((pred - y) * (2.0 / static_cast<double>(pred.size())));
    adamw_step(op.params(), state, lr_at(it, opts.schedule));
  }
  const DiagnosticPoint last = measure(iters);
  rec.trajectory.push_back(last);
  rec.final_param = last.param;
  rec.final_alignment = last.alignment;
  switch (kind) {
    case DiagnosticKind::ddl_toy: rec.converged = std::abs(last.param - 2.0) <= 0.05; break;
    case DiagnosticKind::hybrid_toy: rec.converged = last.param <= 0.10; break;
    case DiagnosticKind::cayley_toy: rec.converged = last.alignment >= 0.95; break;
  }
  return rec;
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.n = values.size();
  if (a.n == 0) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.n);
  if (a.n < 2) return a;
  double ss = 0.0;
  for (double x : values) ss += (x - a.mean) * (x - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
  return a;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Json config_json(const ModelConfig& c) {
  Json j = Json::object();
  std::istringstream in(c.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

ModelConfig config_from_json(const Json& j) {
  std::string text;
  for (const auto& [k, v] : j.items()) text += k + " = " + v.get<std::string>() + "\n";
  return ModelConfig::from_text(text);
}

Json opt_real(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> real_or_null(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

// NaN and infinities are written as null.
double real_or_nan(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::vector<Json> parse_lines(std::string_view text) {
  std::vector<Json> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw FormatError(std::string("bad record line: ") + e.what());
    }
  }
  return out;
}

}  // namespace

std::string to_jsonl(const RunRecord& r) {
  std::string out;
  for (const auto& e : r.log) {
    Json j;
    j["iter"] = e.iter;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["lr"] = e.lr;
    j["grad_norm"] = e.grad_norm;
    j["gammas"] = e.gammas;
    out += j.dump() + "\n";
  }
  Json s;
  s["config"] = config_json(r.config);
  s["dataset"] = r.dataset;
  s["seed"] = r.seed;
  s["iters"] = r.iters;
  s["batch"] = r.batch;
  s["params"] = r.params;
  s["status"] = r.status;
  s["final"] = {{"val_loss", r.final.val_loss},
                {"norm_deviation", opt_real(r.final.norm_deviation)},
                {"cosine_alignment", opt_real(r.final.cosine_alignment)}};
  s["norm_profile"] = r.norm_profile;
  out += Json{{"summary", s}}.dump() + "\n";
  return out;
}

RunRecord run_record_from_jsonl(std::string_view text) {
  RunRecord r;
  bool have_summary = false;
  try {
    for (const auto& j : parse_lines(text)) {
      if (j.contains("summary")) {
        const auto& s = j.at("summary");
        r.config = config_from_json(s.at("config"));
        r.dataset = s.at("dataset").get<std::string>();
        r.seed = s.at("seed").get<std::uint64_t>();
        r.iters = s.at("iters").get<std::size_t>();
        r.batch = s.at("batch").get<std::size_t>();
        r.params = s.at("params").get<std::size_t>();
        r.status = s.at("status").get<std::string>();
        const auto& f = s.at("final");
        r.final.val_loss = real_or_nan(f.at("val_loss"));
        r.final.norm_deviation = real_or_null(f.at("norm_deviation"));
        r.final.cosine_alignment = real_or_null(f.at("cosine_alignment"));
        r.norm_profile = s.at("norm_profile").get<std::vector<double>>();
        have_summary = true;
      } else {
        LogEntry e;
        e.iter = j.at("iter").get<std::size_t>();
        e.train_loss = real_or_nan(j.at("train_loss"));
        e.val_loss = real_or_nan(j.at("val_loss"));
        e.lr = j.at("lr").get<double>();
        e.grad_norm = real_or_nan(j.at("grad_norm"));
        e.gammas = j.at("gammas").get<std::vector<double>>();
        r.log.push_back(std::move(e));
      }
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad run record: ") + e.what());
  }
  if (!have_summary) throw FormatError("run record has no summary line");
  return r;
}

std::string to_jsonl(const DiagnosticRecord& r) {
  std::string out;
  for (const auto& p : r.trajectory) {
    Json j;
    j["iter"] = p.iter;
    j["alignment"] = p.alignment;
    j["param"] = p.param;
    out += j.dump() + "\n";
  }
  Json s;
  s["kind"] = std::string(to_string(r.kind));
  s["samples"] = r.samples;
  s["seed"] = r.seed;
  s["iters"] = r.iters;
  s["final_param"] = r.final_param;
  s["final_alignment"] = r.final_alignment;
  s["converged"] = r.converged;
  out += Json{{"summary", s}}.dump() + "\n";
  return out;
}

DiagnosticRecord diagnostic_record_from_jsonl(std::string_view text) {
  DiagnosticRecord r;
  bool have_summary = false;
  try {
    for (const auto& j : parse_lines(text)) {
      if (j.contains("summary")) {
        const auto& s = j.at("summary");
        r.kind = diagnostic_kind_from_string(s.at("kind").get<std::string>());
        r.samples = s.at("samples").get<std::size_t>();
        r.seed = s.at("seed").get<std::uint64_t>();
        r.iters = s.at("iters").get<std::size_t>();
        r.final_param = s.at("final_param").get<double>();
        r.final_alignment = s.at("final_alignment").get<double>();
        r.converged = s.at("converged").get<bool>();
        have_summary = true;
      } else {
        r.trajectory.push_back({j.at("iter").get<std::size_t>(), j.at("alignment").get<double>(),
                                j.at("param").get<double>()});
      }
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad diagnostic record: ") + e.what());
  }
  if (!have_summary) throw FormatError("diagnostic record has no summary line");
  return r;
}

void write_run(const RunRecord& r, const std::filesystem::path& dir, const std::string& stem) {
  binio::write_file_atomic(dir / (stem + ".jsonl"), to_jsonl(r));
  const Json timing{{"wall_seconds", r.wall_seconds}};
  binio::write_file_atomic(dir / (stem + ".timing.json"), timing.dump() + "\n");
}

}  // namespace georesidual::trainer
