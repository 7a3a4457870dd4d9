#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "georesidual/datasets.hpp"
#include "georesidual/models.hpp"
#include "georesidual/nn.hpp"

namespace georesidual::trainer {

struct Schedule {
  double peak_lr = 1e-3;
  double min_lr = 1e-4;
  std::size_t warmup = 100;
  std::size_t decay_end = 2000;
};

/// Linear warmup 0 -> peak, cosine peak -> min until decay_end, then min.
double lr_at(std::size_t iter, const Schedule& s = {});

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip = 1.0;  // global gradient norm; <= 0 disables
};

struct OptimState {
  AdamWConfig hyper;
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::size_t step = 0;

  OptimState() = default;
  OptimState(const nn::ParameterSet& ps, AdamWConfig cfg = {});
};

/// Scales every gradient so the global norm is at most max_norm. Returns the
/// norm before clipping. Throws NonFiniteGradient.
double clip_gradients(nn::ParameterSet& ps, double max_norm);

struct StepInfo {
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
};

/// Clips, then applies one decoupled-weight-decay Adam update with
/// bias-corrected moments. Decay only touches parameters flagged `decay`.
StepInfo adamw_step(nn::ParameterSet& ps, OptimState& state, double lr);

/// task_loss + sum_i lambda * 4 gamma_i (1 - gamma_i).
double total_loss(double task_loss, std::span<const double> gammas, double lambda_gate);

struct LogEntry {
  std::size_t iter = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::vector<double> gammas;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

struct FinalMetrics {
  double val_loss = 0.0;
  std::optional<double> norm_deviation;
  std::optional<double> cosine_alignment;

  friend bool operator==(const FinalMetrics&, const FinalMetrics&) = default;
};

struct RunRecord {
  models::ModelConfig config;
  std::string dataset;
  std::uint64_t seed = 0;
  std::size_t iters = 0;
  std::size_t batch = 0;
  std::size_t params = 0;
  std::string status = "ok";  // or "non_finite_gradient"
  std::vector<LogEntry> log;
  FinalMetrics final;
  std::vector<double> norm_profile;  // mean output norm per position, stability runs
  double wall_seconds = 0.0;         // not part of the serialized record

  friend bool operator==(const RunRecord& a, const RunRecord& b) {
    return a.config == b.config && a.dataset == b.dataset && a.seed == b.seed &&
           a.iters == b.iters && a.batch == b.batch && a.params == b.params &&
           a.status == b.status && a.log == b.log && a.final == b.final &&
           a.norm_profile == b.norm_profile;
  }
};

struct TrainOptions {
  std::size_t iters = 2000;
  std::size_t batch = 64;
  std::size_t log_every = 50;
  /// Validation sequences scored at each log step; the final score uses all.
  std::size_t log_val_samples = 64;
  Schedule schedule;
  AdamWConfig adamw;
  std::optional<std::filesystem::path> checkpoint;
};

/// Mean squared error over every position and dimension.
double mse(const ActivationTensor& pred, const ActivationTensor& target);

/// Validation MSE over the first `limit` sequences (all when 0).
double evaluate(models::Model& model, const datasets::Dataset& ds, std::size_t limit = 0,
                std::size_t batch = 64);

/// Deterministic given `seed`; never mutates the datasets. Throws ShapeMismatch
/// when dataset dims differ from the config.
RunRecord train_run(const models::ModelConfig& config, const datasets::Dataset& train,
                    const datasets::Dataset& val, std::uint64_t seed,
                    const TrainOptions& opts = {});

/// Mean over positions 1..positions and over inputs of | |y_t| - 1 |.
double norm_deviation(const ActivationTensor& outputs, std::size_t positions = 100);
double norm_deviation(models::Model& model, const datasets::Dataset& echo,
                      std::size_t positions = 100, std::size_t limit = 0);
/// Mean output norm at each position.
std::vector<double> norm_profile(const ActivationTensor& outputs);

struct Alignment {
  double value = 0.0;
  std::size_t skipped = 0;  // samples with a zero prediction or target
};
/// Mean cos(pred, target) over rows; rows with a zero vector are skipped.
Alignment cosine_alignment(const Mat& preds, const Mat& targets);

enum class DiagnosticKind { ddl_toy, hybrid_toy, cayley_toy };
std::string_view to_string(DiagnosticKind k) noexcept;
DiagnosticKind diagnostic_kind_from_string(std::string_view name);

struct DiagnosticPoint {
  std::size_t iter = 0;
  double alignment = 0.0;
  double param = 0.0;  // beta for ddl_toy and cayley_toy, mean gamma for hybrid_toy
  friend bool operator==(const DiagnosticPoint&, const DiagnosticPoint&) = default;
};

struct DiagnosticRecord {
  DiagnosticKind kind = DiagnosticKind::ddl_toy;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::size_t iters = 0;
  double final_param = 0.0;
  double final_alignment = 0.0;
  bool converged = false;
  std::vector<DiagnosticPoint> trajectory;
  friend bool operator==(const DiagnosticRecord&, const DiagnosticRecord&) = default;
};

/// Full-vector toy operator on R^d.
///   ddl_toy:    y = (I - beta k k^T) x, k = normalize(W_k x + b_k), beta trainable (init 1).
///   hybrid_toy: y = gamma Q x + (1 - gamma) (I - 2 k k^T) x with Q the rank-2 Cayley of
///               u = W_u x + b_u, v = W_v x + b_v, and gamma = sigmoid(w.x + gate_bias).
///   cayley_toy: y = cayley(W - W^T, beta) x with W a full d x d parameter.
class ReflectionToy {
 public:
  ReflectionToy(DiagnosticKind kind, std::size_t d, double gate_bias, numkit::RandomStream rng);

  nn::ParameterSet& params() noexcept { return ps_; }
  DiagnosticKind kind() const noexcept { return kind_; }
  double beta() const { return beta_->value(0, 0); }
  /// Mean gate over the last forward batch (hybrid_toy only).
  double mean_gamma() const { return gamma_.size() == 0 ? 0.0 : gamma_.mean(); }

  /// Rows of x are inputs. Caches what backward needs.
  Mat forward(const Mat& x);
  /// Accumulates parameter gradients for the last forward.
  void backward(const Mat& grad_y);

 private:
  DiagnosticKind kind_;
  Eigen::Index d_;
  nn::ParameterSet ps_;
  std::optional<nn::Linear> k_, u_, v_, gate_;
  nn::Parameter* beta_ = nullptr;
  nn::Parameter* skew_ = nullptr;
  numkit::Matrix skew_a_, skew_q_;
  Mat x_, kraw_, kunit_, h_, uraw_, vraw_, q_, gamma_;
};

struct DiagnosticOptions {
  std::size_t d = 64;
  std::size_t batch = 64;
  std::size_t log_every = 50;
  double gate_bias = -1.5;
  Schedule schedule;
  AdamWConfig adamw;
};

/// Full-vector toy operators on d-dimensional negation y = -x.
DiagnosticRecord reflection_diagnostic(DiagnosticKind kind, std::size_t n_samples,
                                       std::uint64_t seed, std::size_t iters = 2000,
                                       const DiagnosticOptions& opts = {});

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for fewer than two values
  std::size_t n = 0;
};
Aggregate aggregate(std::span<const double> values);

/// One JSON object per log step followed by a {"summary": ...} line.
std::string to_jsonl(const RunRecord& r);
RunRecord run_record_from_jsonl(std::string_view text);
std::string to_jsonl(const DiagnosticRecord& r);
DiagnosticRecord diagnostic_record_from_jsonl(std::string_view text);

/// Writes `<dir>/<stem>.jsonl` atomically and the wall clock to `<dir>/<stem>.timing.json`.
void write_run(const RunRecord& r, const std::filesystem::path& dir, const std::string& stem);

}  // namespace georesidual::trainer
