#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "georesidual/nn.hpp"

namespace georesidual::models {

enum class ModelKind { gpt, ddl, mhc, jpmhc, edelta };

std::string_view to_string(ModelKind kind) noexcept;
/// Throws InvalidConfig for unknown names.
ModelKind model_kind_from_string(std::string_view name);
inline constexpr ModelKind kAllKinds[] = {ModelKind::gpt, ModelKind::ddl, ModelKind::mhc,
                                          ModelKind::jpmhc, ModelKind::edelta};

struct ModelConfig {
  ModelKind kind = ModelKind::gpt;
  std::size_t n_layers = 9;
  std::size_t n_embd = 128;
  std::size_t n_heads = 4;
  std::optional<std::size_t> n_streams;
  std::size_t task_dim = 64;
  std::size_t seq_len = 127;
  double init_gate_bias = 0.0;
  double lambda_gate = 0.1;
  double householder_beta = 2.0;
  std::size_t sinkhorn_iters = 20;
  double retraction_alpha = 0.1;
  std::size_t retraction_steps = 2;
  std::size_t geo_hidden_ratio = 4;

  /// Streams used by stream-axis kinds; 4 when unset.
  std::size_t streams() const noexcept { return n_streams.value_or(4); }
  /// Width seen by attention / feed-forward: n_embd, or n_embd / streams for jpmhc.
  std::size_t sublayer_width() const noexcept;
  /// Throws InvalidConfig. Zero layers are rejected unless `allow_empty`.
  void validate(bool allow_empty = false) const;

  /// Flat `key = value` text, one field per line.
  std::string to_text() const;
  /// Applies `key = value` lines on top of `base`. Unknown keys throw InvalidConfig.
  static ModelConfig from_text(std::string_view text, ModelConfig base);
  static ModelConfig from_text(std::string_view text);
  void set(std::string_view key, std::string_view value);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The matched-capacity configurations (layers, width, heads, streams per kind).
ModelConfig matched_config(ModelKind kind, std::size_t task_dim, std::size_t seq_len);

/// One residual site (attention or feed-forward half of a block). Forward
/// caches what backward needs; backward accumulates parameter gradients.
class Site {
 public:
  virtual ~Site() = default;
  virtual ActivationTensor forward(const ActivationTensor& x) = 0;
  /// `grad_gamma` holds dL/dgamma per batch element, or is empty.
  virtual ActivationTensor backward(const ActivationTensor& grad_y,
                                    std::span<const double> grad_gamma) = 0;
  /// Per-input gate values from the last forward (empty for ungated sites).
  virtual std::span<const double> gammas() const { return {}; }
  /// Per-input n x n residual operators from the last forward (empty for gpt).
  virtual std::vector<Mat> stream_operators() const { return {}; }
};

/// Sinkhorn projection of exp(logits), as used by the mhc residual mixer.
Mat mhc_mixer(const Mat& logits, std::size_t iters);

struct Block {
  std::unique_ptr<Site> attn;
  std::unique_ptr<Site> mlp;
};

struct BlockOutput {
  ActivationTensor x;
  std::vector<double> gammas;  // batch-mean gate per site
};

/// Runs both sites of an edelta block; returns the two site gammas.
BlockOutput edelta_block_forward(Block& block, const ActivationTensor& x);
/// Runs both sites of a gpt/ddl/mhc/jpmhc block.
ActivationTensor baseline_block_forward(Block& block, const ActivationTensor& x);

struct ForwardResult {
  ActivationTensor output;  // batch x seq x task_dim
  ActivationTensor embedded;
  ActivationTensor hidden;  // residual stream before the final layer norm
  std::vector<double> gammas;              // batch-mean gate per site
  std::vector<std::vector<double>> gates;  // per site, per input
};

/// Test hooks that pin operator scalars.
struct Overrides {
  std::optional<double> gamma;      // edelta gate
  std::optional<double> ddl_beta;   // ddl reflection strength
};

class Model {
 public:
  Model(const ModelConfig& config, numkit::RandomStream init);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  ~Model();

  const ModelConfig& config() const noexcept { return config_; }
  nn::ParameterSet& params() noexcept { return params_; }
  const nn::ParameterSet& params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.scalar_count(); }
  std::vector<Block>& blocks() noexcept { return blocks_; }

  void set_overrides(const Overrides& o);

  /// Caches activations for a following backward call.
  ForwardResult forward(const ActivationTensor& input);
  /// Accumulates dL/dparams for the last forward. `grad_gates` is indexed
  /// [site][batch] and may be empty.
  void backward(const ActivationTensor& grad_output,
                std::span<const std::vector<double>> grad_gates = {});

 private:
  friend std::size_t count_params(const ModelConfig& config);
  struct Unchecked {};
  Model(const ModelConfig& config, numkit::RandomStream init, Unchecked);

  ModelConfig config_;
  nn::ParameterSet params_;
  nn::Linear in_proj_;
  nn::Parameter* pos_ = nullptr;
  std::vector<Block> blocks_;
  nn::LayerNorm final_ln_;
  nn::Linear head_;
  nn::LayerNorm::Cache final_cache_;
  Mat input_cache_;
  Mat final_out_;
  std::size_t batch_ = 0;
};

Model build_model(const ModelConfig& config, numkit::RandomStream init);

/// Exact trainable-scalar count, by enumerating the parameter shapes of a built model.
std::size_t count_params(const ModelConfig& config);

/// Versioned checkpoint: magic, version, config text, seed, named parameters.
void save_checkpoint(const Model& model, std::uint64_t seed, const std::filesystem::path& path);
struct Checkpoint {
  Model model;
  std::uint64_t seed;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace georesidual::models
