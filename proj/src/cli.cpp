#include "georesidual/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "georesidual/binio.hpp"
#include "georesidual/errors.hpp"
#include "georesidual/verify.hpp"

namespace georesidual::cli {

namespace fs = std::filesystem;
using models::ModelConfig;
using models::ModelKind;

namespace {

constexpr const char* kDatasetNames[] = {"gyroscope", "stability", "reflection", "near_pi_single",
                                         "near_pi_multi"};

std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(sep, start);
    const auto piece = s.substr(start, end == std::string_view::npos ? s.size() - start : end - start);
    if (!piece.empty()) out.emplace_back(piece);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, const char* what) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw InvalidConfig(std::string("bad ") + what + ": '" + std::string(s) + "'");
  }
  return v;
}

std::string bias_tag(double b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "bias%+g", b);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  binio::write_file_atomic(path, text);
}

/// Runs tasks on up to `jobs` threads. Rethrows the first failure after all finish.
void run_parallel(std::vector<std::function<void()>>& tasks, std::size_t jobs) {
  jobs = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex m;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard lock(m);
        if (!first) first = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace

std::uint64_t default_seed() {
  if (const char* env = std::getenv("GEO_RESIDUAL_SEED")) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc{} && p == s.data() + s.size() && !s.empty()) return v;
  }
  return 42;
}

std::string canonical_dataset(std::string_view name) {
  std::string s(name);
  std::replace(s.begin(), s.end(), '-', '_');
  for (const char* n : kDatasetNames) {
    if (s == n) return s;
  }
  throw InvalidConfig("unknown dataset '" + std::string(name) +
                      "' (gyroscope, stability, reflection, near-pi-single, near-pi-multi)");
}

datasets::Split make_split(const DataSpec& spec) {
  const std::string name = canonical_dataset(spec.name);
  const std::size_t div = spec.fast ? 5 : 1;
  if (name == "gyroscope") return datasets::gen_gyroscope(spec.seed, 9000 / div, 1000 / div);
  if (name == "stability") return datasets::gen_stability(spec.seed, 900 / div, 100 / div);
  if (name == "reflection") return datasets::gen_reflection(spec.seed, spec.samples);
  const auto kind = name == "near_pi_single" ? datasets::NearPiKind::single : datasets::NearPiKind::multi;
  return datasets::gen_near_pi(kind, spec.seed, 800 / div, 200 / div);
}

std::vector<PreparedFile> prepare_data(const DataSpec& spec, const fs::path& out) {
  const auto split = make_split(spec);
  ensure_dir(out);
  std::vector<PreparedFile> files;
  for (const auto* ds : {&split.train, &split.val}) {
    PreparedFile f;
    f.path = out / (ds->name + ".edgeo");
    const std::string bytes = datasets::serialize(*ds);
    binio::write_file_atomic(f.path, bytes);
    f.n = ds->N;
    f.t = ds->T;
    f.d = ds->d;
    f.crc = binio::crc32(bytes);
    files.push_back(std::move(f));
  }
  return files;
}

datasets::Split load_or_make(const DataSpec& spec, const std::optional<fs::path>& dir) {
  if (!dir) return make_split(spec);
  const std::string name = canonical_dataset(spec.name);
  return {datasets::read_dataset(*dir / (name + ".train.edgeo")),
          datasets::read_dataset(*dir / (name + ".val.edgeo"))};
}

ModelConfig effective_config(ModelConfig base, const std::optional<fs::path>& config_file,
                             const std::vector<std::string>& overrides) {
  if (config_file) base = ModelConfig::from_text(binio::read_file(*config_file), base);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw InvalidConfig("override '" + kv + "' is not key=value");
    }
    base.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  base.validate();
  return base;
}

namespace {

trainer::TrainOptions options_for(std::size_t iters) {
  trainer::TrainOptions o;
  o.iters = iters;
  o.schedule.decay_end = iters;
  o.schedule.warmup = std::min<std::size_t>(100, iters / 5);
  return o;
}

}  // namespace

trainer::TrainOptions profile_options(bool fast) { return options_for(fast ? 500 : 2000); }

Suite suite_from_string(std::string_view name) {
  std::string s(name);
  std::replace(s.begin(), s.end(), '_', '-');
  if (s == "matched-params") return Suite::matched_params;
  if (s == "reflection") return Suite::reflection;
  if (s == "near-pi") return Suite::near_pi;
  throw InvalidConfig("unknown suite '" + std::string(name) + "' (matched-params, reflection, near-pi)");
}

std::string_view to_string(Suite s) noexcept {
  switch (s) {
    case Suite::matched_params: return "matched-params";
    case Suite::reflection: return "reflection";
    case Suite::near_pi: return "near-pi";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// bench

namespace {

struct TrainCell {
  ModelConfig config;
  std::string dataset;
  std::uint64_t seed = 0;
  fs::path dir;
  std::string stem;
};

BenchResult bench_training(const BenchOptions& o, std::ostream& log) {
  std::vector<std::string> names = o.datasets;
  std::vector<ModelKind> kinds = o.models;
  std::vector<double> biases = {0.0};
  if (o.suite == Suite::matched_params) {
    if (names.empty()) names = {"gyroscope", "stability"};
    if (kinds.empty()) kinds.assign(std::begin(models::kAllKinds), std::end(models::kAllKinds));
  } else {
    if (names.empty()) names = {"near_pi_single", "near_pi_multi"};
    if (kinds.empty()) kinds = {ModelKind::edelta};
    biases = o.init_biases;
  }
  for (auto& n : names) n = canonical_dataset(n);

  std::map<std::string, datasets::Split> data;
  for (const auto& n : names) {
    data.emplace(n, load_or_make({n, o.data_seed, o.fast, 500}, o.data_dir));
  }

  trainer::TrainOptions topts = o.iters ? options_for(*o.iters) : profile_options(o.fast);
  if (o.batch) topts.batch = *o.batch;

  const fs::path root = o.out / std::string(to_string(o.suite));
  std::vector<TrainCell> cells;
  for (const auto& n : names) {
    const auto& ds = data.at(n).train;
    for (ModelKind k : kinds) {
      for (double b : biases) {
        ModelConfig cfg = models::matched_config(k, ds.d, ds.T);
        cfg = effective_config(cfg, o.config_file, o.overrides);
        std::string leaf(models::to_string(k));
        if (o.suite == Suite::near_pi) {
          cfg.init_gate_bias = b;
          leaf += "_" + bias_tag(b);
        }
        const fs::path dir = root / n / leaf;
        ensure_dir(dir);
        write_text(dir / "config.txt", cfg.to_text());
        for (auto seed : o.seeds) {
          cells.push_back({cfg, n, seed, dir, "seed" + std::to_string(seed)});
        }
      }
    }
  }

  BenchResult res;
  res.runs.resize(cells.size());
  res.files.resize(cells.size());
  std::mutex log_mutex;
  std::vector<std::function<void()>> tasks;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    tasks.emplace_back([&, i] {
      const auto& c = cells[i];
      const auto& split = data.at(c.dataset);
      auto rec = trainer::train_run(c.config, split.train, split.val, c.seed, topts);
      trainer::write_run(rec, c.dir, c.stem);
      res.files[i] = c.dir / (c.stem + ".jsonl");
      if (!o.quiet) {
        std::lock_guard lock(log_mutex);
        log << c.dataset << " " << models::to_string(c.config.kind);
        if (o.suite == Suite::near_pi) log << " " << bias_tag(c.config.init_gate_bias);
        log << " seed " << c.seed << ": val_loss " << std::setprecision(6) << rec.final.val_loss
            << " (" << rec.status << ", " << std::setprecision(3) << rec.wall_seconds << " s)\n";
      }
      res.runs[i] = std::move(rec);
    });
  }
  run_parallel(tasks, o.jobs);
  return res;
}

BenchResult bench_reflection(const BenchOptions& o, std::ostream& log) {
  const trainer::DiagnosticKind kinds[] = {trainer::DiagnosticKind::ddl_toy,
                                           trainer::DiagnosticKind::hybrid_toy,
                                           trainer::DiagnosticKind::cayley_toy};
  const std::size_t iters = o.iters.value_or(2000);
  trainer::DiagnosticOptions dopts;
  if (o.batch) dopts.batch = *o.batch;
  dopts.schedule.decay_end = iters;
  dopts.schedule.warmup = std::min<std::size_t>(100, iters / 5);

  struct Cell {
    trainer::DiagnosticKind kind;
    std::size_t n;
    std::uint64_t seed;
    fs::path dir;
  };
  const fs::path root = o.out / "reflection";
  std::vector<Cell> cells;
  for (auto k : kinds) {
    for (auto n : o.samples) {
      const fs::path dir = root / std::string(trainer::to_string(k)) / ("n" + std::to_string(n));
      ensure_dir(dir);
      for (auto seed : o.seeds) cells.push_back({k, n, seed, dir});
    }
  }

  BenchResult res;
  res.diagnostics.resize(cells.size());
  res.files.resize(cells.size());
  std::mutex log_mutex;
  std::vector<std::function<void()>> tasks;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    tasks.emplace_back([&, i] {
      const auto& c = cells[i];
      auto rec = trainer::reflection_diagnostic(c.kind, c.n, c.seed, iters, dopts);
      const fs::path file = c.dir / ("seed" + std::to_string(c.seed) + ".jsonl");
      binio::write_file_atomic(file, trainer::to_jsonl(rec));
      res.files[i] = file;
      if (!o.quiet) {
        std::lock_guard lock(log_mutex);
        log << trainer::to_string(c.kind) << " n=" << c.n << " seed " << c.seed << ": param "
            << std::setprecision(4) << rec.final_param << " alignment " << rec.final_alignment
            << (rec.converged ? " converged\n" : "\n");
      }
      res.diagnostics[i] = std::move(rec);
    });
  }
  run_parallel(tasks, o.jobs);
  return res;
}

}  // namespace

BenchResult run_bench(const BenchOptions& o, std::ostream& log) {
  if (o.seeds.empty()) throw InvalidConfig("bench needs at least one seed");
  BenchResult res = o.suite == Suite::reflection ? bench_reflection(o, log) : bench_training(o, log);
  const auto summary = summarize(res.runs, res.diagnostics);
  const fs::path root = o.out / std::string(to_string(o.suite));
  write_text(root / "summary.json", render_json(summary));
  write_text(root / "summary.md", render_markdown(summary));
  return res;
}

// ---------------------------------------------------------------------------
// command line

namespace {

struct Ctx {
  std::ostream& out;
  std::ostream& err;
};

int cmd_prepare(Ctx& c, const std::string& name, std::uint64_t seed, const fs::path& out, bool fast,
                std::size_t samples) {
  const auto files = prepare_data({name, seed, fast, samples}, out);
  for (const auto& f : files) {
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08x", f.crc);
    c.out << f.path.string() << "  N=" << f.n << " T=" << f.t << " d=" << f.d << "  crc32=" << crc
          << "\n";
  }
  return kOk;
}

struct TrainArgs {
  std::string model = "edelta";
  std::string dataset = "stability";
  std::uint64_t seed = 42;
  std::uint64_t data_seed = 42;
  std::optional<std::size_t> iters, batch;
  std::optional<fs::path> config_file, data_dir, checkpoint;
  std::vector<std::string> overrides;
  fs::path out = "runs/train";
  bool fast = false;
  std::size_t samples = 500;
};

int cmd_train(Ctx& c, const TrainArgs& a) {
  const std::string name = canonical_dataset(a.dataset);
  const auto kind = models::model_kind_from_string(a.model);
  const auto split = load_or_make({name, a.data_seed, a.fast, a.samples}, a.data_dir);
  const auto cfg = effective_config(models::matched_config(kind, split.train.d, split.train.T),
                                    a.config_file, a.overrides);
  auto opts = a.iters ? options_for(*a.iters) : profile_options(a.fast);
  if (a.batch) opts.batch = *a.batch;
  opts.checkpoint = a.checkpoint;

  ensure_dir(a.out);
  write_text(a.out / "config.txt", cfg.to_text());
  const std::string stem = std::string(models::to_string(kind)) + "_" + name + "_seed" +
                           std::to_string(a.seed);
  const auto rec = trainer::train_run(cfg, split.train, split.val, a.seed, opts);
  trainer::write_run(rec, a.out, stem);
  c.out << (a.out / (stem + ".jsonl")).string() << "\n"
        << "params " << rec.params << "  iters " << rec.iters << "  status " << rec.status
        << "\nval_loss " << std::setprecision(6) << rec.final.val_loss << "\n";
  if (rec.final.norm_deviation) c.out << "norm_deviation " << *rec.final.norm_deviation << "\n";
  if (rec.final.cosine_alignment) c.out << "cosine_alignment " << *rec.final.cosine_alignment << "\n";
  return rec.status == "ok" ? kOk : kFailure;
}

int cmd_verify(Ctx& c, bool json, const std::vector<std::string>& breaks, std::uint64_t seed) {
  verify::VerifyOptions vo;
  vo.seed = seed;
  for (const auto& b : breaks) {
    if (b == "householder-beta") {
      vo.break_householder_beta = true;
    } else {
      throw InvalidConfig("unknown fault '" + b + "' (householder-beta)");
    }
  }
  const auto props = verify::run_all(vo);
  const verify::Property* failed = nullptr;
  for (const auto& p : props) {
    if (!p.passed) {
      failed = &p;
      break;
    }
  }
  if (json) {
    nlohmann::ordered_json j;
    j["passed"] = failed == nullptr;
    j["seed"] = vo.seed;
    auto& arr = j["properties"] = nlohmann::ordered_json::array();
    for (const auto& p : props) {
      arr.push_back({{"suite", p.suite},
                     {"name", p.name},
                     {"measured", p.measured},
                     {"relation", verify::relation_symbol(p.relation)},
                     {"bound", p.bound},
                     {"passed", p.passed},
                     {"seconds", p.seconds}});
    }
    c.out << j.dump(2) << "\n";
  } else {
    std::size_t w = 0;
    for (const auto& p : props) w = std::max(w, p.suite.size() + p.name.size() + 2);
    for (const auto& p : props) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%12.4e %-2s %-9.3g %s", p.measured,
                    verify::relation_symbol(p.relation).c_str(), p.bound, p.passed ? "PASS" : "FAIL");
      c.out << std::left << std::setw(static_cast<int>(w)) << (p.suite + ": " + p.name) << "  " << buf
            << "\n";
    }
    const auto& orth = props.front();
    char line[128];
    std::snprintf(line, sizeof line, "orthogonality max deviation %.3e <= 1e-10 (%s)\n", orth.measured,
                  orth.passed ? "ok" : "violated");
    c.out << line;
  }
  if (failed) {
    c.err << "verify failed: " << failed->suite << ": " << failed->name << " (measured "
          << failed->measured << ", bound " << verify::relation_symbol(failed->relation) << " "
          << failed->bound << ")\n";
    return kFailure;
  }
  if (!json) c.out << "all " << props.size() << " properties pass\n";
  return kOk;
}

int cmd_report(Ctx& c, const fs::path& in, const std::string& format, bool svg,
               const std::optional<fs::path>& svg_dir) {
  if (!fs::is_directory(in)) throw IoError("not a directory: " + in.string());
  const auto records = load_records(in);
  if (records.runs.empty() && records.diagnostics.empty()) {
    c.err << "report: no run records under " << in.string() << "\n";
    return kUsage;
  }
  const auto summary = summarize(records.runs, records.diagnostics);
  if (format == "md") {
    c.out << render_markdown(summary);
  } else if (format == "csv") {
    c.out << render_csv(summary);
  } else {
    c.out << render_json(summary);
  }
  if (svg) {
    for (const auto& p : write_svgs(records, svg_dir.value_or(in))) c.err << "wrote " << p.string() << "\n";
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Ctx ctx{out, err};
  CLI::App app{"Geometric residual operators: data, training, benchmarks, verification"};
  app.name("geo-residual");
  app.require_subcommand(1);
  const std::uint64_t env_seed = default_seed();

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Generate a dataset and write train/val files");
  std::string prep_name;
  std::uint64_t prep_seed = env_seed;
  fs::path prep_out = "data";
  bool prep_fast = false;
  std::size_t prep_samples = 500;
  prep->add_option("name", prep_name, "gyroscope | stability | reflection | near-pi-single | near-pi-multi")
      ->required();
  prep->add_option("--seed", prep_seed, "Generator seed");
  prep->add_option("--out", prep_out, "Output directory");
  prep->add_flag("--fast", prep_fast, "Desk-scale sizes (N / 5)");
  prep->add_option("--samples", prep_samples, "Reflection training size");

  // train
  auto* train = app.add_subcommand("train", "Train one model on one dataset");
  TrainArgs ta;
  ta.seed = env_seed;
  ta.data_seed = env_seed;
  std::size_t t_iters = 0, t_batch = 0;
  std::string t_config, t_data, t_ckpt;
  train->add_option("--model", ta.model, "gpt | ddl | mhc | jpmhc | edelta");
  train->add_option("--dataset", ta.dataset, "Dataset name");
  train->add_option("--seed", ta.seed, "Run seed (initialization and shuffling)");
  train->add_option("--data-seed", ta.data_seed, "Dataset seed");
  auto* t_iters_opt = train->add_option("--iters", t_iters, "Training iterations");
  auto* t_batch_opt = train->add_option("--batch", t_batch, "Batch size");
  train->add_option("--config", t_config, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--set", ta.overrides, "Config override key=value (repeatable)");
  train->add_option("--data", t_data, "Directory of prepared datasets");
  train->add_option("--out", ta.out, "Output directory");
  train->add_flag("--fast", ta.fast, "Desk-scale profile");
  train->add_option("--checkpoint", t_ckpt, "Write a checkpoint of the final model");
  train->add_option("--samples", ta.samples, "Reflection training size");

  // bench
  auto* bench = app.add_subcommand("bench", "Run a benchmark suite");
  std::string b_suite, b_seeds, b_models, b_datasets, b_biases, b_samples, b_data, b_config;
  std::size_t b_iters = 0, b_batch = 0;
  BenchOptions bo;
  bo.data_seed = env_seed;
  bench->add_option("suite", b_suite, "matched-params | reflection | near-pi")->required();
  bench->add_option("--seeds", b_seeds, "Comma-separated run seeds (default 42,123,456)");
  bench->add_option("--data-seed", bo.data_seed, "Dataset seed");
  bench->add_option("--out", bo.out, "Output root");
  bench->add_option("--jobs", bo.jobs, "Concurrent cells")->check(CLI::PositiveNumber);
  bench->add_flag("--fast", bo.fast, "Desk-scale profile");
  bench->add_option("--models", b_models, "Comma-separated model kinds");
  bench->add_option("--datasets", b_datasets, "Comma-separated dataset names");
  bench->add_option("--init-bias", b_biases, "Comma-separated gate biases (near-pi)");
  bench->add_option("--sizes", b_samples, "Comma-separated training sizes (reflection)");
  auto* b_iters_opt = bench->add_option("--iters", b_iters, "Iterations per run");
  auto* b_batch_opt = bench->add_option("--batch", b_batch, "Batch size");
  bench->add_option("--data", b_data, "Directory of prepared datasets");
  bench->add_option("--config", b_config, "key = value config file")->check(CLI::ExistingFile);
  bench->add_option("--set", bo.overrides, "Config override key=value (repeatable)");
  bench->add_flag("--quiet", bo.quiet, "No per-cell progress");

  // verify
  auto* ver = app.add_subcommand("verify", "Run the operator property suites");
  bool v_json = false;
  std::vector<std::string> v_break;
  std::uint64_t v_seed = verify::VerifyOptions{}.seed;
  ver->add_flag("--json", v_json, "Machine-readable report");
  ver->add_option("--break", v_break, "Inject a fault (householder-beta)");
  ver->add_option("--seed", v_seed, "Property-suite seed");

  // report
  auto* rep = app.add_subcommand("report", "Summarize run records");
  fs::path r_in = "runs";
  std::string r_format = "md", r_svg_dir;
  bool r_svg = false;
  rep->add_option("--in", r_in, "Directory of run records");
  rep->add_option("--format", r_format, "md | csv | json")
      ->check(CLI::IsMember({"md", "csv", "json"}));
  rep->add_flag("--svg", r_svg, "Also write SVG plots");
  rep->add_option("--svg-dir", r_svg_dir, "Directory for SVG plots (default: --in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prep) return cmd_prepare(ctx, prep_name, prep_seed, prep_out, prep_fast, prep_samples);
    if (*train) {
      if (*t_iters_opt) ta.iters = t_iters;
      if (*t_batch_opt) ta.batch = t_batch;
      if (!t_config.empty()) ta.config_file = t_config;
      if (!t_data.empty()) ta.data_dir = t_data;
      if (!t_ckpt.empty()) ta.checkpoint = t_ckpt;
      return cmd_train(ctx, ta);
    }
    if (*bench) {
      bo.suite = suite_from_string(b_suite);
      if (!b_seeds.empty()) {
        bo.seeds.clear();
        for (const auto& s : split_list(b_seeds)) bo.seeds.push_back(parse_number<std::uint64_t>(s, "seed"));
      }
      for (const auto& m : split_list(b_models)) bo.models.push_back(models::model_kind_from_string(m));
      bo.datasets = split_list(b_datasets);
      if (!b_biases.empty()) {
        bo.init_biases.clear();
        for (const auto& s : split_list(b_biases)) bo.init_biases.push_back(parse_number<double>(s, "bias"));
      }
      if (!b_samples.empty()) {
        bo.samples.clear();
        for (const auto& s : split_list(b_samples)) bo.samples.push_back(parse_number<std::size_t>(s, "size"));
      }
      if (*b_iters_opt) bo.iters = b_iters;
      if (*b_batch_opt) bo.batch = b_batch;
      if (!b_data.empty()) bo.data_dir = b_data;
      if (!b_config.empty()) bo.config_file = b_config;
      run_bench(bo, out);
      out << "summary: " << (bo.out / std::string(to_string(bo.suite)) / "summary.md").string() << "\n";
      return kOk;
    }
    if (*ver) return cmd_verify(ctx, v_json, v_break, v_seed);
    if (*rep) {
      std::optional<fs::path> dir;
      if (!r_svg_dir.empty()) dir = r_svg_dir;
      return cmd_report(ctx, r_in, r_format, r_svg, dir);
    }
  } catch (const InvalidConfig& e) {
    err << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    err << e.what() << "\n";
    return kIo;
  } catch (const TruncatedFile& e) {
    err << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "IoError: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace georesidual::cli
