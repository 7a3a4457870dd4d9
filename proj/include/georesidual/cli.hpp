#pragma once

// Command surface of the geo-residual tool: dataset preparation, training,
// benchmark suites, property verification and reporting.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "georesidual/datasets.hpp"
#include "georesidual/models.hpp"
#include "georesidual/trainer.hpp"

namespace georesidual::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3 };

/// GEO_RESIDUAL_SEED when set and numeric, otherwise 42.
std::uint64_t default_seed();

/// Canonical dataset names: gyroscope, stability, reflection, near_pi_single,
/// near_pi_multi. Hyphens are accepted in place of underscores.
std::string canonical_dataset(std::string_view name);

struct DataSpec {
  std::string name;
  std::uint64_t seed = 42;
  bool fast = false;
  std::size_t samples = 500;  // reflection training size
};

/// Throws InvalidConfig for unknown names.
datasets::Split make_split(const DataSpec& spec);

struct PreparedFile {
  std::filesystem::path path;
  std::size_t n = 0, t = 0, d = 0;
  std::uint32_t crc = 0;
};
/// Writes `<out>/<name>.train.edgeo` and `<out>/<name>.val.edgeo`.
std::vector<PreparedFile> prepare_data(const DataSpec& spec, const std::filesystem::path& out);

/// Reads `<dir>/<name>.{train,val}.edgeo` when `dir` is given, otherwise generates.
datasets::Split load_or_make(const DataSpec& spec, const std::optional<std::filesystem::path>& dir);

/// Applies `key=value` overrides from a config file and then from flags.
models::ModelConfig effective_config(models::ModelConfig base,
                                     const std::optional<std::filesystem::path>& config_file,
                                     const std::vector<std::string>& overrides);

/// Training options for the full (2000 iterations) or fast (500) profile.
trainer::TrainOptions profile_options(bool fast);

enum class Suite { matched_params, reflection, near_pi };
Suite suite_from_string(std::string_view name);
std::string_view to_string(Suite s) noexcept;

struct BenchOptions {
  Suite suite = Suite::matched_params;
  std::vector<std::uint64_t> seeds = {42, 123, 456};
  std::uint64_t data_seed = 42;
  std::filesystem::path out = "runs";
  std::size_t jobs = 1;
  bool fast = false;
  std::optional<std::filesystem::path> data_dir;
  std::vector<models::ModelKind> models;       // empty: suite default
  std::vector<std::string> datasets;           // empty: suite default
  std::vector<double> init_biases = {-1.5, 0.0, 1.5};
  std::vector<std::size_t> samples = {10, 25, 50, 100, 200, 500};
  std::optional<std::size_t> iters;
  std::optional<std::size_t> batch;
  std::optional<std::filesystem::path> config_file;
  std::vector<std::string> overrides;  // applied to every model config
  bool quiet = false;
};

struct BenchResult {
  std::vector<trainer::RunRecord> runs;
  std::vector<trainer::DiagnosticRecord> diagnostics;
  std::vector<std::filesystem::path> files;
};

/// Runs every cell (up to `jobs` at once), writing each record as it finishes.
BenchResult run_bench(const BenchOptions& o, std::ostream& log);

// ---- reporting -----------------------------------------------------------

struct SummaryRow {
  std::string dataset;
  std::string model;
  double init_gate_bias = 0.0;
  std::size_t layers = 0;
  std::size_t params = 0;
  std::vector<std::uint64_t> seeds;
  trainer::Aggregate val_loss;  // runs with status ok
  std::size_t failed = 0;       // runs stopped on a non-finite gradient
  std::optional<double> vs_gpt;  // gpt mean / this mean, same dataset
  std::optional<trainer::Aggregate> norm_deviation;
  std::optional<trainer::Aggregate> cosine_alignment;
};

struct DiagnosticRow {
  std::string kind;
  std::size_t samples = 0;
  std::vector<std::uint64_t> seeds;
  trainer::Aggregate param;
  trainer::Aggregate alignment;
  std::size_t converged = 0;
};

struct BenchmarkSummary {
  std::vector<SummaryRow> runs;
  std::vector<DiagnosticRow> diagnostics;
};

BenchmarkSummary summarize(const std::vector<trainer::RunRecord>& runs,
                           const std::vector<trainer::DiagnosticRecord>& diagnostics);

struct LoadedRecords {
  std::vector<trainer::RunRecord> runs;
  std::vector<trainer::DiagnosticRecord> diagnostics;
};
/// Every *.jsonl record below `dir`, in sorted path order.
LoadedRecords load_records(const std::filesystem::path& dir);

std::string render_markdown(const BenchmarkSummary& s);
std::string render_csv(const BenchmarkSummary& s);
std::string render_json(const BenchmarkSummary& s);
/// mean +- std to three significant digits.
std::string format_mean_std(const trainer::Aggregate& a);

/// loss_curves.svg, norm_profile.svg, gamma_trajectories.svg (when data exists).
std::vector<std::filesystem::path> write_svgs(const LoadedRecords& records,
                                              const std::filesystem::path& dir);

/// Parses argv and dispatches. Returns an ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace georesidual::cli
