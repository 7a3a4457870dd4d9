#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "georesidual/binio.hpp"
#include "georesidual/errors.hpp"
#include "georesidual/trainer.hpp"
#include "gradcheck.hpp"

using namespace georesidual;
using namespace georesidual::trainer;
using models::ModelConfig;
using models::ModelKind;
using numkit::RandomStream;

namespace {

ModelConfig tiny(ModelKind kind, std::size_t d, std::size_t t) {
  ModelConfig c;
  c.kind = kind;
  c.n_layers = 1;
  c.n_embd = kind == ModelKind::jpmhc ? 16 : 8;
  c.n_heads = 2;
  c.n_streams = 4;
  c.task_dim = d;
  c.seq_len = t;
  return c;
}

TrainOptions quick(std::size_t iters) {
  TrainOptions o;
  o.iters = iters;
  o.batch = 4;
  o.log_every = 2;
  o.log_val_samples = 4;
  return o;
}

nn::ParameterSet scalar_set(double value, bool decay = true) {
  nn::ParameterSet ps;
  ps.add("p", Mat::Constant(1, 1, value), decay);
  return ps;
}

}  // namespace

TEST_CASE("lr schedule anchors") {
  CHECK(lr_at(0) == 0.0);
  CHECK(lr_at(50) == doctest::Approx(5e-4).epsilon(1e-15));
  CHECK(lr_at(100) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(lr_at(1000) == doctest::Approx(0.0005871607054625496).epsilon(1e-12));
  CHECK(lr_at(2000) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(5000) == 1e-4);
}

TEST_CASE("lr schedule is continuous at the warmup peak and non-increasing after it") {
  CHECK(std::abs(lr_at(99) - lr_at(100)) < 2e-5);
  CHECK(std::abs(lr_at(101) - lr_at(100)) < 1e-8);
  for (std::size_t i = 100; i < 2500; ++i) REQUIRE(lr_at(i + 1) <= lr_at(i));
  for (std::size_t i = 0; i < 100; ++i) REQUIRE(lr_at(i + 1) > lr_at(i));
}

TEST_CASE("adamw with zero gradients and no decay leaves parameters unchanged") {
  auto ps = scalar_set(0.7);
  ps.add("m", Mat::Constant(2, 3, -1.25), true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimState st(ps, cfg);
  for (int i = 0; i < 5; ++i) {
    ps.zero_grad();
    adamw_step(ps, st, 1e-2);
  }
  CHECK(ps.at(0).value(0, 0) == 0.7);
  CHECK((ps.at(1).value.array() == -1.25).all());
  CHECK(st.step == 5);
}

TEST_CASE("adamw matches a hand-stepped scalar reference") {
  // p0 = 0.5, lr = 0.1, wd = 0.1, grads 0.3, -0.2, 0.1.
  const double expected[] = {0.3950000033333332, 0.3765275541421193, 0.344503209639069};
  auto ps = scalar_set(0.5);
  OptimState st(ps);
  const double grads[] = {0.3, -0.2, 0.1};
  for (int i = 0; i < 3; ++i) {
    ps.at(0).grad(0, 0) = grads[i];
    adamw_step(ps, st, 0.1);
    CHECK(ps.at(0).value(0, 0) == doctest::Approx(expected[i]).epsilon(1e-14));
  }
}

TEST_CASE("weight decay skips parameters not flagged for decay") {
  auto ps = scalar_set(2.0, false);
  OptimState st(ps);
  adamw_step(ps, st, 0.5);
  CHECK(ps.at(0).value(0, 0) == 2.0);
}

TEST_CASE("global clipping brings norm 2 down to 1") {
  nn::ParameterSet ps;
  auto& a = ps.add("a", Mat::Zero(1, 2), true);
  auto& b = ps.add("b", Mat::Zero(2, 1), true);
  a.grad << 1.2, 0.0;
  b.grad << 0.0, 1.6;
  CHECK(clip_gradients(ps, 1.0) == doctest::Approx(2.0));
  CHECK(std::abs(ps.grad_norm() - 1.0) <= 1e-12);
  RandomStream rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    a.grad = gradcheck::random_mat(rng, 1, 2, rng.uniform(0.0, 10.0));
    b.grad = gradcheck::random_mat(rng, 2, 1, rng.uniform(0.0, 10.0));
    clip_gradients(ps, 1.0);
    REQUIRE(ps.grad_norm() <= 1.0 + 1e-12);
  }
}

TEST_CASE("non-finite gradients abort the step") {
  auto ps = scalar_set(1.0);
  OptimState st(ps);
  ps.at(0).grad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adamw_step(ps, st, 1e-3), NonFiniteGradient);
  ps.at(0).grad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adamw_step(ps, st, 1e-3), NonFiniteGradient);
}

TEST_CASE("total loss adds the midpoint penalty") {
  const double boundary[] = {0.0, 1.0, 1.0, 0.0};
  CHECK(total_loss(0.25, boundary, 0.1) == 0.25);
  const double mid[] = {0.5};
  CHECK(total_loss(0.25, mid, 1.0) == 1.25);
  const double any[] = {0.3, 0.9};
  CHECK(total_loss(0.25, any, 0.0) == 0.25);
  CHECK(total_loss(0.0, any, 0.5) == doctest::Approx(0.5 * 4 * (0.21 + 0.09)));
}

TEST_CASE("norm deviation of exact and zero outputs") {
  ActivationTensor unit(2, 120, 4);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 120; ++t) unit.row(b, t)(static_cast<Eigen::Index>(t % 4)) = 1.0;
  CHECK(norm_deviation(unit) == 0.0);
  CHECK(norm_deviation(ActivationTensor(3, 120, 4)) == 1.0);
  const auto profile = norm_profile(unit);
  CHECK(profile.size() == 120);
  CHECK(profile[7] == 1.0);
}

TEST_CASE("cosine alignment examples") {
  RandomStream rng(3);
  const Mat x = gradcheck::random_mat(rng, 20, 8);
  CHECK(cosine_alignment(-x, -x).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_alignment(x, -x).value == doctest::Approx(-1.0).epsilon(1e-15));
  Mat z = x;
  z.row(3).setZero();
  const auto a = cosine_alignment(z, -x);
  CHECK(a.skipped == 1);
  CHECK(a.value == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_alignment(x, x.leftCols(3)), ShapeMismatch);
}

TEST_CASE("aggregate uses the sample standard deviation") {
  const double v[] = {1.0, 2.0, 3.0};
  const auto a = aggregate(v);
  CHECK(a.mean == 2.0);
  CHECK(a.std == 1.0);
  CHECK(a.n == 3);
  const double same[] = {0.125, 0.125, 0.125};
  CHECK(aggregate(same).std == 0.0);
  const double one[] = {4.0};
  CHECK(aggregate(one).std == 0.0);
}

TEST_CASE("zero iterations records only the initial validation loss") {
  const auto data = datasets::gen_gyroscope(1, 8, 4, 4, 5);
  const auto rec = train_run(tiny(ModelKind::gpt, 4, 5), data.train, data.val, 9, quick(0));
  CHECK(rec.log.empty());
  CHECK(std::isfinite(rec.final.val_loss));
  CHECK(rec.final.val_loss > 0.0);
  CHECK(rec.status == "ok");
}

TEST_CASE("identical seeds give identical run records and datasets are untouched") {
  const auto data = datasets::gen_stability(2, 12, 4, 4, 6);
  const auto before = data;
  for (ModelKind kind : models::kAllKinds) {
    CAPTURE(models::to_string(kind));
    const auto a = train_run(tiny(kind, 4, 6), data.train, data.val, 42, quick(5));
    const auto b = train_run(tiny(kind, 4, 6), data.train, data.val, 42, quick(5));
    CHECK(a == b);
    CHECK(to_jsonl(a) == to_jsonl(b));
    CHECK(a.log.size() == 3);  // iters 0, 2, 4
    CHECK(a.final.norm_deviation.has_value());
    const auto c = train_run(tiny(kind, 4, 6), data.train, data.val, 43, quick(5));
    CHECK(to_jsonl(a) != to_jsonl(c));
  }
  CHECK(data.train == before.train);
  CHECK(data.val == before.val);
}

TEST_CASE("edelta run logs gammas inside (0, 1) and training lowers the loss") {
  const auto data = datasets::gen_stability(3, 16, 8, 4, 6);
  auto opts = quick(40);
  opts.schedule.warmup = 5;
  opts.schedule.decay_end = 40;
  opts.schedule.peak_lr = 1e-2;
  opts.log_every = 10;
  const auto rec = train_run(tiny(ModelKind::edelta, 4, 6), data.train, data.val, 1, opts);
  REQUIRE(rec.log.size() == 5);
  for (const auto& e : rec.log) {
    CHECK(e.gammas.size() == 2);
    for (double g : e.gammas) CHECK((g > 0.0 && g < 1.0));
    CHECK(std::isfinite(e.train_loss));
  }
  CHECK(rec.log.back().train_loss < rec.log.front().train_loss);
}

TEST_CASE("train_run rejects mismatched datasets") {
  const auto data = datasets::gen_stability(1, 4, 2, 6, 5);
  CHECK_THROWS_AS(train_run(tiny(ModelKind::gpt, 4, 5), data.train, data.val, 1, quick(1)),
                  ShapeMismatch);
  CHECK_THROWS_AS(train_run(tiny(ModelKind::gpt, 6, 4), data.train, data.val, 1, quick(1)),
                  ShapeMismatch);
}

TEST_CASE("reflection runs report cosine alignment") {
  const auto data = datasets::gen_reflection(4, 10, 4, 6);
  const auto rec = train_run(tiny(ModelKind::ddl, 4, 1), data.train, data.val, 4, quick(3));
  REQUIRE(rec.final.cosine_alignment.has_value());
  CHECK(std::abs(*rec.final.cosine_alignment) <= 1.0);
}

TEST_CASE("run records round trip through jsonl") {
  const auto data = datasets::gen_stability(5, 8, 4, 4, 6);
  const auto rec = train_run(tiny(ModelKind::edelta, 4, 6), data.train, data.val, 7, quick(4));
  const auto back = run_record_from_jsonl(to_jsonl(rec));
  CHECK(back == rec);
  CHECK_THROWS_AS(run_record_from_jsonl("{\"iter\": 0}\n"), FormatError);
  CHECK_THROWS_AS(run_record_from_jsonl("not json\n"), FormatError);

  const auto dir = std::filesystem::temp_directory_path() / "georesidual_test_runs";
  write_run(rec, dir, "edelta_7");
  CHECK(binio::read_file(dir / "edelta_7.jsonl") == to_jsonl(rec));
  CHECK(std::filesystem::exists(dir / "edelta_7.timing.json"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint written at the end of a run reloads") {
  const auto data = datasets::gen_gyroscope(6, 4, 2, 4, 5);
  auto opts = quick(2);
  const auto path = std::filesystem::temp_directory_path() / "georesidual_test_run_ckpt.bin";
  opts.checkpoint = path;
  train_run(tiny(ModelKind::mhc, 4, 5), data.train, data.val, 11, opts);
  const auto ck = models::load_checkpoint(path);
  CHECK(ck.seed == 11);
  CHECK(ck.model.config() == tiny(ModelKind::mhc, 4, 5));
  std::filesystem::remove(path);
}

TEST_CASE("reflection toy gradients match central differences") {
  for (auto kind : {DiagnosticKind::ddl_toy, DiagnosticKind::hybrid_toy, DiagnosticKind::cayley_toy}) {
    CAPTURE(to_string(kind));
    RandomStream rng(17);
    ReflectionToy toy(kind, 6, -0.4, rng.substream("init"));
    gradcheck::randomize(toy.params(), rng, 0.4);
    const Mat x = gradcheck::random_mat(rng, 5, 6);
    const Mat w = gradcheck::random_mat(rng, 5, 6);
    toy.params().zero_grad();
    toy.forward(x);
    toy.backward(w);
    gradcheck::check_parameters(toy.params(), [&] { return gradcheck::probe(w, toy.forward(x)); }, 40);
  }
}

TEST_CASE("reflection toy operators at their targets") {
  RandomStream rng(2);
  const Mat x = gradcheck::random_mat(rng, 4, 6);
  ReflectionToy cay(DiagnosticKind::cayley_toy, 6, 0.0, rng.substream("c"));
  cay.params().find("skew")->value.setZero();
  CHECK((cay.forward(x) - x).norm() < 1e-14);
  // Cayley output stays an isometry for any skew.
  gradcheck::randomize(cay.params(), rng, 1.0);
  const Mat y = cay.forward(x);
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(y.row(r).norm() == doctest::Approx(x.row(r).norm()));
  ReflectionToy ddl(DiagnosticKind::ddl_toy, 6, 0.0, rng.substream("d"));
  ddl.params().find("beta")->value(0, 0) = 2.0;
  ddl.params().find("gen_k.weight")->value.setIdentity();
  CHECK((ddl.forward(x) + x).norm() < 1e-13);
}

TEST_CASE("reflection diagnostic is deterministic and bounded") {
  DiagnosticOptions o;
  o.d = 8;
  o.batch = 8;
  o.log_every = 10;
  for (auto kind : {DiagnosticKind::ddl_toy, DiagnosticKind::hybrid_toy, DiagnosticKind::cayley_toy}) {
    const auto a = reflection_diagnostic(kind, 20, 42, 30, o);
    const auto b = reflection_diagnostic(kind, 20, 42, 30, o);
    CHECK(a == b);
    CHECK(a.trajectory.size() == 4);
    for (const auto& p : a.trajectory) CHECK((p.alignment >= -1.0 && p.alignment <= 1.0));
    CHECK(diagnostic_record_from_jsonl(to_jsonl(a)) == a);
  }
  const auto h = reflection_diagnostic(DiagnosticKind::hybrid_toy, 20, 1, 0, o);
  CHECK(h.final_param == doctest::Approx(nn::sigmoid(-1.5)));
}
