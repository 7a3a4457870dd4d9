#include "georesidual/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "georesidual/geometry.hpp"
#include "georesidual/models.hpp"
#include "georesidual/nn.hpp"

namespace georesidual::verify {

using geometry::Matrix;
using numkit::RandomStream;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Matrix random_skew(RandomStream& rng, std::size_t n, double frob) {
  Matrix a(n, n);
  double f = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      a(i, j) = rng.normal();
      a(j, i) = -a(i, j);
      f += 2.0 * a(i, j) * a(i, j);
    }
  return f == 0.0 ? a : (frob / std::sqrt(f)) * a;
}

// ---- finite differences -------------------------------------------------

constexpr double kStep = 1e-5;
constexpr double kFloor = 1e-5;

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

double central(double& x, const std::function<double()>& loss) {
  const double saved = x;
  x = saved + kStep;
  const double up = loss();
  x = saved - kStep;
  const double down = loss();
  x = saved;
  return (up - down) / (2.0 * kStep);
}

// Worst relative error over (up to `per_tensor` strided entries of) every parameter.
double check_params(nn::ParameterSet& ps, const std::function<double()>& loss,
                    std::size_t per_tensor = 1000) {
  double worst = 0.0;
  for (auto& p : ps) {
    const std::size_t n = p.size();
    const std::size_t stride = std::max<std::size_t>(1, n / per_tensor);
    for (std::size_t i = 0; i < n; i += stride)
      worst = std::max(worst, rel_err(p.grad.data()[i], central(p.value.data()[i], loss)));
  }
  return worst;
}

double check_values(std::span<double> values, std::span<const double> analytic,
                    const std::function<double()>& loss) {
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    worst = std::max(worst, rel_err(analytic[i], central(values[i], loss)));
  return worst;
}

Mat random_mat(RandomStream& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

void randomize(nn::ParameterSet& ps, RandomStream& rng, double sd) {
  for (auto& p : ps)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += rng.normal(0.0, sd);
}

double probe(const Mat& w, const Mat& y) { return w.cwiseProduct(y).sum(); }

std::span<double> span_of(Mat& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

}  // namespace

Property make_property(std::string suite, std::string name, double measured, Relation rel,
                       double bound) {
  Property p;
  p.suite = std::move(suite);
  p.name = std::move(name);
  p.measured = measured;
  p.bound = bound;
  p.relation = rel;
  switch (rel) {
    case Relation::at_most: p.passed = measured <= bound; break;
    case Relation::below: p.passed = measured < bound; break;
    case Relation::above: p.passed = measured > bound; break;
  }
  return p;
}

std::string relation_symbol(Relation r) {
  switch (r) {
    case Relation::at_most: return "<=";
    case Relation::below: return "<";
    case Relation::above: return ">";
  }
  return "?";
}

std::vector<Property> orthogonality_suite(const VerifyOptions& o) {
  const auto t0 = Clock::now();
  RandomStream rng = RandomStream(o.seed).substream("orthogonality");
  const std::size_t dims[] = {2, 4, 8};
  double gram = 0.0, det = 0.0, iso = 0.0, margin = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = dims[trial % 3];
    const geometry::SkewGenerator gen(rng.normal_vector(n), rng.normal_vector(n));
    const double beta = rng.uniform(0.0, 1000.0);
    const auto rep = geometry::orthogonality_report(geometry::cayley(gen, beta), &gen);
    gram = std::max(gram, rep.gram_deviation);
    det = std::max(det, std::abs(rep.det_value - 1.0));
    iso = std::max(iso, rep.isometry_deviation);
    margin = std::min(margin, rep.negation_margin);
  }
  const double s = seconds_since(t0);
  std::vector<Property> out = {
      make_property("orthogonality", "max ||Q^T Q - I||_max", gram, Relation::at_most, 1e-10),
      make_property("orthogonality", "max |det Q - 1|", det, Relation::at_most, 1e-8),
      make_property("orthogonality", "max isometry deviation", iso, Relation::at_most, 1e-10),
      make_property("orthogonality", "min negation margin |det(Q + I)|", margin, Relation::above, 0.0),
      make_property("orthogonality", "suite runtime seconds", s, Relation::below, 10.0)};
  for (auto& p : out) p.seconds = s;
  return out;
}

std::vector<Property> householder_suite(const VerifyOptions& o) {
  const auto t0 = Clock::now();
  RandomStream rng = RandomStream(o.seed).substream("householder");
  const double boundary_beta = o.break_householder_beta ? 1.5 : 2.0;
  double orth = 0.0, interior = std::numeric_limits<double>::infinity(), identity = 0.0, flip = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(15);
    const auto k = rng.unit_vector(m);
    for (double beta : {0.0, boundary_beta})
      orth = std::max(orth, numkit::gram_deviation(geometry::householder(k, beta).matrix));
    interior = std::min(interior, numkit::gram_deviation(geometry::householder(k, 1.0).matrix));

    // |Hx|^2 - |x|^2 = -beta (2 - beta) (k.x)^2
    const double beta = rng.uniform(-1.0, 3.0);
    const auto x = rng.normal_vector(m);
    const auto hx = geometry::householder(k, beta).matrix * std::span<const double>(x);
    const double kx = numkit::dot(k, x);
    const double lhs = numkit::dot(hx, hx) - numkit::dot(x, x);
    identity = std::max(identity, std::abs(lhs + beta * (2.0 - beta) * kx * kx) /
                                      std::max(1.0, numkit::dot(x, x)));

    const auto h2k = geometry::householder(k, 2.0).matrix * std::span<const double>(k);
    for (std::size_t i = 0; i < m; ++i) flip = std::max(flip, std::abs(h2k[i] + k[i]));
  }
  const double s = seconds_since(t0);
  std::vector<Property> out = {
      make_property("householder", "||H^T H - I||_max at beta in {0, 2}", orth, Relation::at_most, 1e-12),
      make_property("householder", "min ||H^T H - I||_max at beta = 1", interior, Relation::above, 1e-3),
      make_property("householder", "norm distortion identity residual", identity, Relation::at_most, 1e-10),
      make_property("householder", "max |H_2 k + k|", flip, Relation::at_most, 1e-12),
      make_property("householder", "suite runtime seconds", s, Relation::below, 5.0)};
  for (auto& p : out) p.seconds = s;
  return out;
}

std::vector<Property> midpoint_suite(const VerifyOptions& o) {
  const auto t0 = Clock::now();
  RandomStream rng = RandomStream(o.seed).substream("midpoint");
  double min_dev = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const Matrix q = geometry::cayley_from_skew(random_skew(rng, n, rng.uniform(0.1, 10.0)), 2.0);
    const Matrix h = geometry::householder(rng.unit_vector(n), 2.0).matrix;
    min_dev = std::min(min_dev, numkit::gram_deviation(0.5 * q + 0.5 * h));
  }
  using geometry::gate_penalty;
  using geometry::GatePenalty;
  const auto anchor = [](double got, double want) { return std::abs(got - want); };
  double exact = 0.0;
  exact = std::max(exact, anchor(gate_penalty(0.5, 1.0).value, 1.0));
  exact = std::max(exact, anchor(gate_penalty(0.5, 1.0).grad, 0.0));
  exact = std::max(exact, anchor(std::abs(gate_penalty(0.0, 1.0).grad), 4.0));
  exact = std::max(exact, anchor(std::abs(gate_penalty(1.0, 1.0).grad), 4.0));
  exact = std::max(exact, anchor(gate_penalty(0.25, 1.0).grad, 2.0));
  double table = 0.0;
  table = std::max(table, anchor(gate_penalty(0.5, 1.0, GatePenalty::product).value, 1.0));
  table = std::max(table, anchor(gate_penalty(0.5, 1.0, GatePenalty::entropy).value, 0.69));
  table = std::max(table, anchor(gate_penalty(0.5, 1.0, GatePenalty::product_sq).value, 0.0625));
  table = std::max(table, anchor(gate_penalty(0.5, 1.0, GatePenalty::min_dist).value, 0.25));
  for (auto v : {GatePenalty::product, GatePenalty::entropy, GatePenalty::product_sq})
    table = std::max(table, std::abs(gate_penalty(0.5, 1.0, v).grad));
  const double s = seconds_since(t0);
  std::vector<Property> out = {
      make_property("midpoint", "min ||B^T B - I||_max of the gamma = 0.5 blend", min_dev,
                    Relation::above, 1e-3),
      make_property("midpoint", "penalty anchor error (1 at 0.5, slope 0 at 0.5, |slope| 4 at ends, +2 at 0.25)",
                    exact, Relation::at_most, 0.0),
      make_property("midpoint", "penalty variants at 0.5 versus the comparison table", table,
                    Relation::at_most, 1e-2),
      make_property("midpoint", "suite runtime seconds", s, Relation::below, 1.0)};
  for (auto& p : out) p.seconds = s;
  return out;
}

std::vector<Property> retraction_suite(const VerifyOptions& o) {
  const auto t0 = Clock::now();
  RandomStream rng = RandomStream(o.seed).substream("retraction");
  double approx = 0.0, exact = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const Matrix a = random_skew(rng, n, rng.uniform(0.0, 1.0));
    const Matrix x = Matrix::identity(n);
    approx = std::max(approx, numkit::gram_deviation(geometry::iterative_cayley_retraction(a, 0.1, 2, x)));
    exact = std::max(exact, numkit::gram_deviation(geometry::cayley_from_skew(a, 0.1)));
  }
  const double s = seconds_since(t0);
  std::vector<Property> out = {
      make_property("retraction", "max ||Y^T Y - I||_max, alpha 0.1, s = 2", approx, Relation::below, 1e-3),
      make_property("retraction", "max ||Q^T Q - I||_max, exact Cayley on the same A", exact,
                    Relation::at_most, 1e-10),
      make_property("retraction", "suite runtime seconds", s, Relation::below, 10.0)};
  for (auto& p : out) p.seconds = s;
  return out;
}

std::vector<Property> gradient_suite(const VerifyOptions& o) {
  const auto t0 = Clock::now();
  RandomStream rng = RandomStream(o.seed).substream("gradients");
  std::vector<Property> out;
  const auto add = [&](const std::string& name, double err) {
    out.push_back(make_property("gradients", name, err, Relation::at_most, 1e-4));
  };

  {  // linear -> layer norm -> GELU MLP
    nn::ParameterSet ps;
    const auto lin = nn::make_linear(ps, "lin", 5, 6, rng);
    const auto ln = nn::make_layer_norm(ps, "ln", 6);
    const auto mlp = nn::make_mlp(ps, "mlp", 6, 8, 4, rng);
    randomize(ps, rng, 0.3);
    Mat x = random_mat(rng, 7, 5);
    const Mat w = random_mat(rng, 7, 4);
    nn::LayerNorm::Cache lc;
    nn::Mlp::Cache mc;
    const auto loss = [&] { return probe(w, mlp.forward(ln.forward(lin.forward(x), lc), mc)); };
    ps.zero_grad();
    loss();
    Mat gx = lin.backward(x, ln.backward(lc, mlp.backward(mc, w)));
    add("linear, layer norm, GELU MLP (parameters)", check_params(ps, loss));
    add("linear, layer norm, GELU MLP (input)", check_values(span_of(x), span_of(gx), loss));
  }
  {  // causal attention
    nn::ParameterSet ps;
    const auto attn = nn::make_attention(ps, "attn", 8, 2, rng);
    randomize(ps, rng, 0.3);
    ActivationTensor x(2, 5, random_mat(rng, 10, 8));
    const Mat w = random_mat(rng, 10, 8);
    nn::CausalAttention::Cache c;
    const auto loss = [&] { return probe(w, attn.forward(x, c).data); };
    ps.zero_grad();
    loss();
    ActivationTensor gx = attn.backward(c, ActivationTensor(2, 5, w));
    add("causal attention (parameters)", check_params(ps, loss));
    add("causal attention (input)", check_values(span_of(x.data), span_of(gx.data), loss));
  }
  {  // rank-2 Cayley through its generator vectors and beta
    auto u = rng.normal_vector(5), v = rng.normal_vector(5);
    double beta = 1.3;
    const Mat w = random_mat(rng, 5, 5);
    const auto loss = [&] {
      return probe(w, nn::to_mat(geometry::cayley(geometry::SkewGenerator(u, v), beta)));
    };
    const geometry::SkewGenerator gen(u, v);
    const Matrix q = geometry::cayley(gen, beta);
    const auto g = geometry::cayley_backward(gen.matrix(), beta, q, nn::to_matrix(w));
    std::vector<double> gu(5), gv(5);
    geometry::skew_backward(gen, g.grad_skew, gu, gv);
    double err = std::max(check_values(u, gu, loss), check_values(v, gv, loss));
    double gb = g.grad_beta;
    err = std::max(err, check_values(std::span<double>(&beta, 1), std::span<const double>(&gb, 1), loss));
    add("rank-2 Cayley (u, v, beta)", err);
  }
  {  // Householder through an unnormalized direction and beta
    Mat raw = random_mat(rng, 1, 6);
    double beta = 1.7;
    const Mat w = random_mat(rng, 6, 6);
    const auto loss = [&] { return probe(w, nn::to_mat(geometry::householder(span_of(raw), beta).matrix)); };
    const auto h = geometry::householder(span_of(raw), beta);
    std::vector<double> gk(6);
    double gb = 0.0;
    nn::householder_backward(h.direction, beta, w, gk, &gb);
    const auto graw = nn::normalize_backward(span_of(raw), gk);
    double err = check_values(span_of(raw), graw, loss);
    err = std::max(err, check_values(std::span<double>(&beta, 1), std::span<const double>(&gb, 1), loss));
    add("Householder (normalized k, beta)", err);
  }
  {  // row softmax
    Mat logits = random_mat(rng, 3, 4);
    const Mat w = random_mat(rng, 3, 4);
    const auto loss = [&] { return probe(w, nn::softmax_rows(logits)); };
    Mat g = nn::softmax_rows_backward(nn::softmax_rows(logits), w);
    add("row softmax", check_values(span_of(logits), span_of(g), loss));
  }
  {  // iterative retraction
    Matrix a = random_skew(rng, 4, 0.8);
    const Matrix x = nn::to_matrix(random_mat(rng, 4, 4));
    const Mat w = random_mat(rng, 4, 4);
    const auto loss = [&] { return probe(w, nn::to_mat(geometry::iterative_cayley_retraction(a, 0.1, 2, x))); };
    const Matrix g = geometry::retraction_backward(a, 0.1, 2, x, nn::to_matrix(w));
    // Perturb (i, j) and (j, i) together to stay skew.
    double err = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) {
        const double saved = a(i, j);
        const auto eval = [&](double val) {
          a(i, j) = val;
          a(j, i) = -val;
          return loss();
        };
        const double numeric = (eval(saved + kStep) - eval(saved - kStep)) / (2.0 * kStep);
        eval(saved);
        err = std::max(err, rel_err(g(i, j) - g(j, i), numeric));
      }
    add("iterative Cayley retraction", err);
  }
  {  // mean pool and per-input stream operators
    ActivationTensor x(3, 4, random_mat(rng, 12, 8));
    std::vector<Mat> q = {random_mat(rng, 4, 4), random_mat(rng, 4, 4), random_mat(rng, 4, 4)};
    const Mat w = random_mat(rng, 12, 8), wp = random_mat(rng, 3, 8);
    const auto loss = [&] {
      return probe(w, nn::stream_apply(x, q, 4).data) + probe(wp, nn::mean_pool(x));
    };
    std::vector<Mat> gq;
    ActivationTensor gx = nn::stream_apply_backward(x, q, 4, ActivationTensor(3, 4, w), &gq);
    gx.data += nn::mean_pool_backward(wp, 4).data;
    double err = check_values(span_of(x.data), span_of(gx.data), loss);
    for (std::size_t b = 0; b < 3; ++b) err = std::max(err, check_values(span_of(q[b]), span_of(gq[b]), loss));
    add("stream operators and mean pool", err);
  }
  for (auto kind : models::kAllKinds) {  // whole 1-layer models, 4-sample batch
    models::ModelConfig c;
    c.kind = kind;
    c.n_layers = 1;
    c.n_embd = kind == models::ModelKind::jpmhc ? 16 : 8;
    c.n_heads = 2;
    c.n_streams = 4;
    c.task_dim = 3;
    c.seq_len = 5;
    models::Model m = models::build_model(c, rng.substream(std::string(models::to_string(kind))));
    randomize(m.params(), rng, 0.3);
    const ActivationTensor x(4, 5, random_mat(rng, 20, 3));
    const Mat w = random_mat(rng, 20, 3);
    std::vector<std::vector<double>> gate_w;
    if (kind == models::ModelKind::edelta) gate_w = {rng.normal_vector(4), rng.normal_vector(4)};
    const auto loss = [&] {
      const auto r = m.forward(x);
      double s = probe(w, r.output.data);
      for (std::size_t i = 0; i < gate_w.size(); ++i)
        for (std::size_t b = 0; b < 4; ++b) s += gate_w[i][b] * r.gates[i][b];
      return s;
    };
    m.params().zero_grad();
    m.forward(x);
    m.backward(ActivationTensor(4, 5, w), gate_w);
    add("1-layer " + std::string(models::to_string(kind)) + " model, every parameter",
        check_params(m.params(), loss));
  }
  const double s = seconds_since(t0);
  out.push_back(make_property("gradients", "suite runtime seconds", s, Relation::below, 60.0));
  for (auto& p : out) p.seconds = s;
  return out;
}

std::vector<Property> fairness_suite() {
  const std::pair<models::ModelKind, double> refs[] = {{models::ModelKind::gpt, 1.780e6},
                                                       {models::ModelKind::ddl, 1.784e6},
                                                       {models::ModelKind::mhc, 1.838e6},
                                                       {models::ModelKind::jpmhc, 1.771e6},
                                                       {models::ModelKind::edelta, 1.788e6}};
  std::vector<Property> out;
  for (const auto& [kind, ref] : refs) {
    const auto n = static_cast<double>(models::count_params(models::matched_config(kind, 64, 127)));
    out.push_back(make_property("fairness",
                                std::string(models::to_string(kind)) + " |params / reference - 1| (" +
                                    std::to_string(static_cast<long long>(n)) + " params)",
                                std::abs(n / ref - 1.0), Relation::at_most, 0.03));
  }
  return out;
}

std::vector<Property> run_all(const VerifyOptions& o) {
  std::vector<Property> all;
  for (auto&& suite : {orthogonality_suite(o), householder_suite(o), midpoint_suite(o),
                       retraction_suite(o), gradient_suite(o), fairness_suite()})
    all.insert(all.end(), suite.begin(), suite.end());
  return all;
}

}  // namespace georesidual::verify
