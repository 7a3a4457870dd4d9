#include <doctest.h>

#include <cmath>
#include <numeric>

#include "georesidual/errors.hpp"
#include "georesidual/geometry.hpp"
#include "georesidual/nn.hpp"
#include "gradcheck.hpp"

using namespace georesidual;
using namespace georesidual::nn;
using gradcheck::probe;
using gradcheck::random_mat;

namespace {

ActivationTensor random_tensor(RandomStream& rng, std::size_t b, std::size_t t, std::size_t w) {
  return ActivationTensor(b, t, random_mat(rng, static_cast<Eigen::Index>(b * t), static_cast<Eigen::Index>(w)));
}

}  // namespace

TEST_CASE("mean_pool examples") {
  ActivationTensor ones(1, 3, 2);
  ones.data.setOnes();
  CHECK(mean_pool(ones) == Mat::Ones(1, 2));

  RandomStream rng(1);
  const auto single = random_tensor(rng, 2, 1, 5);
  CHECK(mean_pool(single) == single.data);

  const auto x = random_tensor(rng, 1, 6, 4);
  ActivationTensor perm(1, 6, 4);
  const int order[] = {3, 0, 5, 1, 4, 2};
  for (int t = 0; t < 6; ++t) perm.row(0, t) = x.row(0, order[t]);
  CHECK((mean_pool(perm) - mean_pool(x)).cwiseAbs().maxCoeff() <= 1e-15);

  CHECK_THROWS_AS(mean_pool(ActivationTensor(2, 0, 3)), EmptySequence);
}

TEST_CASE("generators_forward examples") {
  ParameterSet ps;
  RandomStream rng(2);
  GeneratorSpec spec{.width = 8, .hidden = 2, .n = 4, .gate_bias = -1.5};
  const auto gen = make_generators(ps, "g", spec, rng);
  for (auto& p : ps)
    if (p.name != "g.gate.bias") p.value.setZero();
  GeneratorNet::Cache cache;
  const auto out = gen.forward(random_mat(rng, 3, 8), cache);
  for (const auto& o : out) {
    CHECK(o.beta == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(o.gamma == doctest::Approx(0.182).epsilon(1e-3));
  }

  ParameterSet ps0;
  spec.gate_bias = 0.0;
  const auto neutral = make_generators(ps0, "g", spec, rng);
  GeneratorNet::Cache c0;
  for (const auto& o : neutral.forward(random_mat(rng, 2, 8), c0)) CHECK(o.gamma == 0.5);
}

TEST_CASE("generators_forward outputs satisfy their invariants for 10^4 inputs") {
  ParameterSet ps;
  RandomStream rng(3);
  const GeneratorSpec spec{.width = 16, .hidden = 4, .n = 4, .gate_bias = 0.0};
  const auto gen = make_generators(ps, "g", spec, rng);
  gradcheck::randomize(ps, rng, 1.0);
  GeneratorNet::Cache cache;
  for (int batch = 0; batch < 100; ++batch) {
    const auto out = gen.forward(random_mat(rng, 100, 16, 3.0), cache);
    for (const auto& o : out) {
      REQUIRE(o.beta > 0.0);
      REQUIRE(std::abs(numkit::norm(o.k) - 1.0) <= 1e-9);
      REQUIRE(o.gamma > 0.0);
      REQUIRE(o.gamma < 1.0);
    }
  }
}

TEST_CASE("stream_apply examples") {
  RandomStream rng(4);
  const auto x = random_tensor(rng, 2, 3, 8);
  CHECK(stream_apply(x, Mat::Identity(4, 4), 4).data == x.data);

  ActivationTensor pair(1, 1, 2);
  pair.data << 3.0, 5.0;
  Mat q(2, 2);
  q << 0, -1, 1, 0;
  const auto y = stream_apply(pair, q, 2);
  CHECK(y.data(0, 0) == -5.0);
  CHECK(y.data(0, 1) == 3.0);

  CHECK_THROWS_AS(stream_apply(random_tensor(rng, 1, 2, 6), Mat::Identity(4, 4), 4), ShapeMismatch);
}

TEST_CASE("stream_apply with orthogonal Q preserves norms") {
  RandomStream rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto gen = geometry::SkewGenerator(rng.normal_vector(4), rng.normal_vector(4));
    const Mat q = to_mat(geometry::cayley(gen, rng.uniform(0.0, 50.0)));
    const auto x = random_tensor(rng, 2, 5, 32);
    const auto y = stream_apply(x, q, 4);
    for (Eigen::Index r = 0; r < x.data.rows(); ++r)
      REQUIRE(std::abs(y.data.row(r).norm() - x.data.row(r).norm()) <= 1e-10);
    REQUIRE(std::abs(y.data.norm() - x.data.norm()) <= 1e-10 * x.data.norm());
  }
}

TEST_CASE("causal_attention examples") {
  RandomStream rng(6);
  ParameterSet ps;
  const auto attn = make_attention(ps, "attn", 8, 2, rng);
  gradcheck::randomize(ps, rng);
  CausalAttention::Cache cache;

  SUBCASE("length one uses only the value path") {
    const auto x = random_tensor(rng, 3, 1, 8);
    const auto y = attn.forward(x, cache);
    const Mat qkv = attn.qkv.forward(x.data);
    const Mat expect = attn.proj.forward(qkv.rightCols(8));
    CHECK((y.data - expect).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("later positions do not influence earlier ones") {
    auto x = random_tensor(rng, 1, 6, 8);
    const auto y0 = attn.forward(x, cache);
    x.row(0, 4) += RowVec::Constant(8, 10.0);
    const auto y1 = attn.forward(x, cache);
    CHECK(y1.data.topRows(4) == y0.data.topRows(4));
    CHECK(y1.data.row(4) != y0.data.row(4));
  }
  SUBCASE("output shape equals input shape") {
    ParameterSet big;
    const auto wide = make_attention(big, "a", 128, 4, rng);
    const auto y = wide.forward(random_tensor(rng, 2, 7, 128), cache);
    CHECK(y.batch == 2);
    CHECK(y.seq == 7);
    CHECK(y.width == 128);
  }
  CHECK_THROWS_AS(make_attention(ps, "bad", 10, 4, rng), ShapeMismatch);
}

TEST_CASE("layer_norm and feed_forward examples") {
  RandomStream rng(7);
  ParameterSet ps;
  const auto ln = make_layer_norm(ps, "ln", 6);
  ln.shift->value << 1, 2, 3, 4, 5, 6;
  ln.scale->value.setConstant(3.0);
  LayerNorm::Cache cache;
  const Mat y = ln.forward(Mat::Constant(2, 6, 4.2), cache);
  for (Eigen::Index r = 0; r < 2; ++r) CHECK(y.row(r) == ln.shift->value.row(0));

  const Mat x = random_mat(rng, 20, 6, 5.0);
  ln.forward(x, cache);
  for (Eigen::Index r = 0; r < 20; ++r) {
    const auto z = cache.normalized.row(r);
    const double mean = z.mean();
    const double var = (z.array() - mean).square().mean();
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-8 + kLayerNormEps);
  }

  auto ffn = make_feed_forward(ps, "ffn", 6, rng);
  ffn.fc.weight->value.setZero();
  ffn.proj.weight->value.setZero();
  ffn.proj.bias->value << -1, 0, 1, 2, 3, 4;
  Mlp::Cache mc;
  const Mat out = ffn.forward(x, mc);
  for (Eigen::Index r = 0; r < out.rows(); ++r) CHECK(out.row(r) == ffn.proj.bias->value.row(0));
}

TEST_CASE("gradient check: linear, layer_norm, mlp") {
  RandomStream rng(8);
  ParameterSet ps;
  const auto lin = make_linear(ps, "lin", 5, 4, rng);
  const auto ln = make_layer_norm(ps, "ln", 4);
  const auto mlp = make_mlp(ps, "mlp", 4, 7, 3, rng);
  gradcheck::randomize(ps, rng, 0.5);
  Mat x = random_mat(rng, 6, 5);
  const Mat w = random_mat(rng, 6, 3);

  LayerNorm::Cache lc;
  Mlp::Cache mc;
  auto loss = [&] { return probe(w, mlp.forward(ln.forward(lin.forward(x), lc), mc)); };
  ps.zero_grad();
  const Mat h = lin.forward(x);
  mlp.forward(ln.forward(h, lc), mc);
  const Mat gx = lin.backward(x, ln.backward(lc, mlp.backward(mc, w)));
  gradcheck::check_parameters(ps, loss);
  gradcheck::check_input(x, gx, loss);
}

TEST_CASE("gradient check: causal attention") {
  RandomStream rng(9);
  ParameterSet ps;
  const auto attn = make_attention(ps, "attn", 8, 2, rng);
  gradcheck::randomize(ps, rng, 0.4);
  auto x = random_tensor(rng, 2, 5, 8);
  const Mat w = random_mat(rng, 10, 8);
  CausalAttention::Cache cache;
  auto loss = [&] { return probe(w, attn.forward(x, cache).data); };
  ps.zero_grad();
  attn.forward(x, cache);
  const auto gx = attn.backward(cache, ActivationTensor(2, 5, w));
  gradcheck::check_parameters(ps, loss, 24);
  gradcheck::check_input(x.data, gx.data, loss, 80);
}

TEST_CASE("gradient check: mean_pool and stream_apply") {
  RandomStream rng(10);
  auto x = random_tensor(rng, 2, 3, 8);
  std::vector<Mat> q{random_mat(rng, 4, 4), random_mat(rng, 4, 4)};
  const Mat w = random_mat(rng, 6, 8);
  const Mat wp = random_mat(rng, 2, 8);
  auto loss = [&] { return probe(w, stream_apply(x, q, 4).data) + probe(wp, mean_pool(x)); };

  std::vector<Mat> gq;
  Mat gx = stream_apply_backward(x, q, 4, ActivationTensor(2, 3, w), &gq).data;
  gx += mean_pool_backward(wp, 3).data;
  gradcheck::check_input(x.data, gx, loss, 48);
  for (std::size_t b = 0; b < 2; ++b) gradcheck::check_input(q[b], gq[b], loss);
}

TEST_CASE("gradient check: generator heads") {
  RandomStream rng(11);
  ParameterSet ps;
  const GeneratorSpec spec{.width = 6, .hidden = 3, .n = 4, .gate_bias = 0.2};
  const auto gen = make_generators(ps, "g", spec, rng);
  gradcheck::randomize(ps, rng, 0.5);
  Mat pooled = random_mat(rng, 3, 6);
  std::vector<GeneratorGrads> up(3);
  for (auto& g : up) {
    g.u = rng.normal_vector(4);
    g.v = rng.normal_vector(4);
    g.k = rng.normal_vector(4);
    g.beta = rng.normal();
    g.gamma = rng.normal();
  }
  GeneratorNet::Cache cache;
  auto loss = [&] {
    const auto out = gen.forward(pooled, cache);
    double s = 0.0;
    for (std::size_t r = 0; r < out.size(); ++r) {
      s += numkit::dot(out[r].u, up[r].u) + numkit::dot(out[r].v, up[r].v) +
           numkit::dot(out[r].k, up[r].k) + out[r].beta * up[r].beta + out[r].gamma * up[r].gamma;
    }
    return s;
  };
  ps.zero_grad();
  gen.forward(pooled, cache);
  const Mat gp = gen.backward(cache, up);
  gradcheck::check_parameters(ps, loss);
  gradcheck::check_input(pooled, gp, loss);
}

TEST_CASE("gradient check: householder, softmax and the Cayley solve chain") {
  RandomStream rng(12);
  std::vector<double> k = rng.normal_vector(5);
  double beta = 1.7;
  const Mat w = random_mat(rng, 5, 5);
  Mat kin(1, 5);
  std::copy(k.begin(), k.end(), kin.data());
  auto hloss = [&] {
    const std::vector<double> kk(kin.data(), kin.data() + 5);
    return probe(w, to_mat(geometry::householder(kk, beta).matrix));
  };
  const auto h = geometry::householder(k, beta);
  std::vector<double> gk(5, 0.0);
  double gbeta = 0.0;
  householder_backward(h.direction, beta, w, gk, &gbeta);
  const auto gf = normalize_backward(k, gk);
  Mat gfm(1, 5);
  std::copy(gf.begin(), gf.end(), gfm.data());
  gradcheck::check_input(kin, gfm, hloss);
  CHECK(gradcheck::rel_err(gbeta, gradcheck::central(beta, hloss)) <= gradcheck::kRelTol);

  Mat logits = random_mat(rng, 4, 4);
  const Mat ws = random_mat(rng, 4, 4);
  auto sloss = [&] { return probe(ws, softmax_rows(logits)); };
  gradcheck::check_input(logits, softmax_rows_backward(softmax_rows(logits), ws), sloss);

  Mat uv = random_mat(rng, 2, 4);
  double cb = 0.8;
  const Mat wq = random_mat(rng, 4, 4);
  auto closs = [&] {
    const geometry::SkewGenerator gen({uv.data(), uv.data() + 4}, {uv.data() + 4, uv.data() + 8});
    return probe(wq, to_mat(geometry::cayley(gen, cb)));
  };
  const geometry::SkewGenerator gen({uv.data(), uv.data() + 4}, {uv.data() + 4, uv.data() + 8});
  const auto q = geometry::cayley(gen, cb);
  const auto cg = geometry::cayley_backward(gen.matrix(), cb, q, to_matrix(wq));
  Mat guv = Mat::Zero(2, 4);
  geometry::skew_backward(gen, cg.grad_skew, std::span<double>(guv.data(), 4),
                          std::span<double>(guv.data() + 4, 4));
  gradcheck::check_input(uv, guv, closs);
  CHECK(gradcheck::rel_err(cg.grad_beta, gradcheck::central(cb, closs)) <= gradcheck::kRelTol);
}
