#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "georesidual/numkit.hpp"
#include "georesidual/tensor.hpp"

namespace georesidual::nn {

using numkit::RandomStream;

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

/// A trainable tensor and its gradient slot. `decay` marks tensors that take
/// decoupled weight decay (matrices); vectors and scalars do not.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool decay = true;

  std::size_t size() const noexcept { return static_cast<std::size_t>(value.size()); }
};

/// Ordered parameter registry. Element addresses are stable across `add` and
/// across moves of the set, so layers hold plain pointers into it.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Mat init, bool decay);

  std::size_t tensor_count() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept;
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }
  Parameter* find(std::string_view name) noexcept;
  const Parameter* find(std::string_view name) const noexcept;

  void zero_grad();
  double grad_norm() const;

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

 private:
  std::deque<Parameter> params_;
};

Mat to_mat(const numkit::Matrix& m);
numkit::Matrix to_matrix(const Mat& m);

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;

/// Exact (erf-based) GELU.
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& x, const Mat& grad_y);

/// y = x W + b with W stored in x out.
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  std::size_t in() const noexcept { return static_cast<std::size_t>(weight->value.rows()); }
  std::size_t out() const noexcept { return static_cast<std::size_t>(weight->value.cols()); }
  Mat forward(const Mat& x) const;
  /// Accumulates parameter gradients; returns dL/dx.
  Mat backward(const Mat& x, const Mat& grad_y) const;
};

Linear make_linear(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                   RandomStream& rng, double stddev = kInitStd, bool with_bias = true);
Linear make_identity_linear(ParameterSet& ps, const std::string& name, std::size_t width);
/// Zero weight, constant bias.
Linear make_constant_linear(ParameterSet& ps, const std::string& name, std::size_t in,
                            std::size_t out, double bias);

struct LayerNorm {
  Parameter* scale = nullptr;
  Parameter* shift = nullptr;

  struct Cache {
    Mat normalized;
    Vec inv_std;
  };
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Cache& cache, const Mat& grad_y) const;
};

LayerNorm make_layer_norm(ParameterSet& ps, const std::string& name, std::size_t width);

/// Two-layer GELU MLP: proj(gelu(fc(x))).
struct Mlp {
  Linear fc;
  Linear proj;

  struct Cache {
    Mat input;
    Mat hidden_pre;
    Mat hidden;
  };
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Cache& cache, const Mat& grad_y) const;
};

Mlp make_mlp(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t hidden,
             std::size_t out, RandomStream& rng, double stddev = kInitStd);

/// Transformer feed-forward: Mlp with hidden width 4 * width.
Mlp make_feed_forward(ParameterSet& ps, const std::string& name, std::size_t width,
                      RandomStream& rng);

/// Causal multi-head scaled dot-product self-attention, no dropout.
struct CausalAttention {
  Linear qkv;
  Linear proj;
  std::size_t heads = 1;

  struct Cache {
    Mat input;
    Mat qkv;
    Mat context;
    std::vector<Mat> probs;  // one seq x seq matrix per (batch, head)
  };
  ActivationTensor forward(const ActivationTensor& x, Cache& cache) const;
  ActivationTensor backward(const Cache& cache, const ActivationTensor& grad_y) const;
};

CausalAttention make_attention(ParameterSet& ps, const std::string& name, std::size_t width,
                               std::size_t heads, RandomStream& rng);

/// Mean over the sequence axis: batch x width. Throws EmptySequence.
Mat mean_pool(const ActivationTensor& x);
ActivationTensor mean_pool_backward(const Mat& grad_pooled, std::size_t seq);

/// Left-multiplies the length-n cross-stream vector of every (batch, position,
/// channel) by Q. Stream i owns channels [i d, (i + 1) d), d = width / n.
ActivationTensor stream_apply(const ActivationTensor& x, const Mat& q, std::size_t n_streams);
/// Per-batch operators: q[b] acts on batch element b.
ActivationTensor stream_apply(const ActivationTensor& x, std::span<const Mat> q,
                              std::size_t n_streams);
/// Returns dL/dx; when grad_q is non-null it receives dL/dQ[b] (overwritten).
ActivationTensor stream_apply_backward(const ActivationTensor& x, std::span<const Mat> q,
                                       std::size_t n_streams, const ActivationTensor& grad_y,
                                       std::vector<Mat>* grad_q);

struct GeneratorOutputs {
  std::vector<double> u;
  std::vector<double> v;
  double beta = 0.0;
  std::vector<double> k;
  double gamma = 0.0;
};

/// Upstream gradients for one batch row of GeneratorOutputs.
struct GeneratorGrads {
  std::vector<double> u;
  std::vector<double> v;
  double beta = 0.0;
  std::vector<double> k;
  double gamma = 0.0;
};

struct GeneratorSpec {
  std::size_t width = 0;   // pooled feature width D
  std::size_t hidden = 0;  // MLP hidden width
  std::size_t n = 0;       // operator size (streams)
  bool rotation = true;    // u, v heads
  bool reflection = true;  // k head
  bool scale = true;       // beta head
  bool gate = true;        // gamma head
  double gate_bias = 0.0;
};

/// The per-site generator networks: u, v, k through two-layer GELU MLPs,
/// beta = softplus(MLP), k normalized, gamma = sigmoid(w x + b).
struct GeneratorNet {
  std::optional<Mlp> u;
  std::optional<Mlp> v;
  std::optional<Mlp> k;
  std::optional<Mlp> beta;
  std::optional<Linear> gate;
  std::size_t n = 0;

  struct Cache {
    Mlp::Cache u, v, k, beta;
    Mat pooled;
    Mat k_raw;
    Mat beta_raw;
    Mat gate_raw;
  };
  std::vector<GeneratorOutputs> forward(const Mat& pooled, Cache& cache) const;
  /// Returns dL/dpooled; absent heads ignore their gradient entries.
  Mat backward(const Cache& cache, std::span<const GeneratorGrads> grads) const;
};

GeneratorNet make_generators(ParameterSet& ps, const std::string& name, const GeneratorSpec& spec,
                             RandomStream& rng);

/// dL/df for k = f / |f| given dL/dk.
std::vector<double> normalize_backward(std::span<const double> raw, std::span<const double> grad_k);

/// Gradients of H = I - beta k k^T: dL/dk = -beta (G + G^T) k, dL/dbeta = -k^T G k.
void householder_backward(std::span<const double> k, double beta, const Mat& grad_h,
                          std::span<double> grad_k, double* grad_beta);

/// Row-wise softmax of a matrix and its backward.
Mat softmax_rows(const Mat& logits);
Mat softmax_rows_backward(const Mat& probs, const Mat& grad_p);

}  // namespace georesidual::nn
