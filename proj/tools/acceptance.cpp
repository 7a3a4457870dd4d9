// Acceptance runner: one PASS/FAIL/SKIP line per criterion.
//
//   geo-residual-acceptance [--profile ci|full] [--known-failures 6] [--criteria 1,2]
//                           [--jobs N] [--out DIR]
//
// Exit 0 when every failing criterion is listed in --known-failures.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "georesidual/binio.hpp"
#include "georesidual/cli.hpp"
#include "georesidual/trainer.hpp"
#include "georesidual/verify.hpp"

using namespace georesidual;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

struct Settings {
  bool full = false;
  std::size_t jobs = 1;
  fs::path out;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome from_suite(const std::vector<verify::Property>& props) {
  Outcome o{Verdict::pass, {}};
  for (const auto& p : props) {
    if (!p.passed) {
      o.verdict = Verdict::fail;
      o.detail += "violated: " + p.name + " = " + fmt("%.3e", p.measured) + "; ";
    }
  }
  if (o.verdict == Verdict::pass) {
    std::ostringstream s;
    s << props.size() << " properties";
    for (const auto& p : props) {
      if (p.name == "suite runtime seconds") s << ", " << fmt("%.3f", p.measured) << " s";
    }
    o.detail = s.str();
  }
  return o;
}

Outcome reflection(const Settings&) {
  const std::uint64_t seeds[] = {42, 123, 456};
  std::map<trainer::DiagnosticKind, std::vector<trainer::DiagnosticRecord>> recs;
  for (auto k : {trainer::DiagnosticKind::ddl_toy, trainer::DiagnosticKind::hybrid_toy,
                 trainer::DiagnosticKind::cayley_toy}) {
    for (auto s : seeds) recs[k].push_back(trainer::reflection_diagnostic(k, 500, s, 2000));
  }
  auto mean_of = [&](trainer::DiagnosticKind k, bool param) {
    std::vector<double> v;
    for (const auto& r : recs[k]) v.push_back(param ? r.final_param : r.final_alignment);
    return trainer::aggregate(v).mean;
  };
  const double beta = mean_of(trainer::DiagnosticKind::ddl_toy, true);
  const double gamma = mean_of(trainer::DiagnosticKind::hybrid_toy, true);
  const double h_align = mean_of(trainer::DiagnosticKind::hybrid_toy, false);
  const double c_align = mean_of(trainer::DiagnosticKind::cayley_toy, false);
  const bool ok_beta = beta >= 1.98 && beta <= 2.01;
  const bool ok_gamma = gamma <= 0.10;
  const bool ok_h = h_align >= 0.95;
  const bool ok_c = c_align < 0.5;
  std::ostringstream d;
  d << "ddl beta " << fmt("%.4f", beta) << (ok_beta ? " in" : " NOT in") << " [1.98, 2.01]; "
    << "hybrid gamma " << fmt("%.4f", gamma) << (ok_gamma ? " <= " : " > ") << "0.10, alignment "
    << fmt("%.4f", h_align) << (ok_h ? " >= " : " < ") << "0.95; "
    << "cayley alignment " << fmt("%.4f", c_align) << (ok_c ? " < " : " >= ") << "0.5";
  return {ok_beta && ok_gamma && ok_h && ok_c ? Verdict::pass : Verdict::fail, d.str()};
}

cli::BenchResult bench(const Settings& st, cli::Suite suite, std::vector<std::string> datasets,
                       std::vector<models::ModelKind> kinds) {
  cli::BenchOptions o;
  o.suite = suite;
  o.seeds = {42, 123, 456};
  o.out = st.out;
  o.jobs = st.jobs;
  o.datasets = std::move(datasets);
  o.models = std::move(kinds);
  return cli::run_bench(o, std::cerr);
}

std::map<std::pair<std::string, models::ModelKind>, std::vector<const trainer::RunRecord*>> by_cell(
    const cli::BenchResult& r) {
  std::map<std::pair<std::string, models::ModelKind>, std::vector<const trainer::RunRecord*>> m;
  for (const auto& rec : r.runs) m[{rec.dataset, rec.config.kind}].push_back(&rec);
  return m;
}

double mean_loss(const std::vector<const trainer::RunRecord*>& rs) {
  std::vector<double> v;
  for (const auto* r : rs) v.push_back(r->status == "ok" ? r->final.val_loss : INFINITY);
  return trainer::aggregate(v).mean;
}

double mean_norm_dev(const std::vector<const trainer::RunRecord*>& rs) {
  std::vector<double> v;
  for (const auto* r : rs) v.push_back(r->final.norm_deviation.value_or(INFINITY));
  return trainer::aggregate(v).mean;
}

Outcome matched_params(const Settings& st) {
  if (!st.full) return {Verdict::skip, "needs --profile full (2000 iterations x 24 runs)"};
  using models::ModelKind;
  const auto res = bench(st, cli::Suite::matched_params, {"stability", "near_pi_single"},
                         {ModelKind::gpt, ModelKind::ddl, ModelKind::mhc, ModelKind::edelta});
  auto cells = by_cell(res);
  auto loss = [&](const char* ds, ModelKind k) { return mean_loss(cells[{std::string(ds) + ".train", k}]); };
  auto nd = [&](ModelKind k) { return mean_norm_dev(cells[{"stability.train", k}]); };
  const bool a = loss("stability", ModelKind::edelta) < loss("stability", ModelKind::gpt);
  const bool b = loss("stability", ModelKind::mhc) > 10.0 * loss("stability", ModelKind::gpt);
  const bool c = nd(ModelKind::edelta) < 0.01 && nd(ModelKind::gpt) > 0.1 && nd(ModelKind::ddl) > 0.1 &&
                 nd(ModelKind::mhc) > 0.1;
  const double e = loss("near_pi_single", ModelKind::edelta);
  const bool d = e < loss("near_pi_single", ModelKind::gpt) && e < loss("near_pi_single", ModelKind::ddl) &&
                 e < loss("near_pi_single", ModelKind::mhc);
  std::ostringstream s;
  s << "stability loss edelta " << fmt("%.3g", loss("stability", ModelKind::edelta)) << " gpt "
    << fmt("%.3g", loss("stability", ModelKind::gpt)) << " mhc " << fmt("%.3g", loss("stability", ModelKind::mhc))
    << "; norm dev edelta " << fmt("%.3g", nd(ModelKind::edelta)) << " gpt " << fmt("%.3g", nd(ModelKind::gpt))
    << " ddl " << fmt("%.3g", nd(ModelKind::ddl)) << " mhc " << fmt("%.3g", nd(ModelKind::mhc))
    << "; near-pi edelta " << fmt("%.3g", e) << " gpt " << fmt("%.3g", loss("near_pi_single", ModelKind::gpt))
    << " ddl " << fmt("%.3g", loss("near_pi_single", ModelKind::ddl)) << " mhc "
    << fmt("%.3g", loss("near_pi_single", ModelKind::mhc)) << " [" << (a ? "ok" : "x") << (b ? "ok" : "x")
    << (c ? "ok" : "x") << (d ? "ok" : "x") << "]";
  return {a && b && c && d ? Verdict::pass : Verdict::fail, s.str()};
}

Outcome fairness(const Settings&) { return from_suite(verify::fairness_suite()); }

Outcome init_robustness(const Settings& st) {
  if (!st.full) return {Verdict::skip, "needs --profile full (2000 iterations x 18 runs)"};
  const auto res = bench(st, cli::Suite::near_pi, {"near_pi_single", "near_pi_multi"}, {});
  std::map<std::pair<std::string, double>, std::vector<const trainer::RunRecord*>> cells;
  for (const auto& r : res.runs) cells[{r.dataset, r.config.init_gate_bias}].push_back(&r);
  double best = INFINITY, worst = 0.0, worst_gap = 0.0;
  for (const auto& [key, rs] : cells) {
    const double l = mean_loss(rs);
    best = std::min(best, l);
    worst = std::max(worst, l);
    if (key.second == 0.0) continue;
    for (const auto* r : rs) {
      if (r->log.empty()) {
        worst_gap = INFINITY;
        continue;
      }
      for (double g : r->log.back().gammas) worst_gap = std::max(worst_gap, std::min(g, 1.0 - g));
    }
  }
  const bool band = cells.size() == 6 && worst <= 10.0 * best;
  const bool polar = worst_gap <= 0.05;
  std::ostringstream s;
  s << cells.size() << " configurations, loss band " << fmt("%.3g", worst / best) << "x (<= 10x), biased gamma "
    << "max distance to boundary " << fmt("%.3g", worst_gap) << " (<= 0.05)";
  return {band && polar ? Verdict::pass : Verdict::fail, s.str()};
}

Outcome determinism(const Settings& st) {
  const fs::path root = st.out / "determinism";
  std::vector<std::string> diffs;
  auto call = [](std::vector<std::string> args) {
    args.insert(args.begin(), "geo-residual");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  };
  const std::vector<std::string> tiny = {"--set", "n_layers=1", "--set", "n_embd=16", "--set", "n_heads=2"};
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = root / ("rep" + std::to_string(rep));
    fs::remove_all(dir);
    const auto data = (dir / "data").string();
    int rc = 0;
    for (const char* name : {"gyroscope", "stability", "reflection", "near-pi-single", "near-pi-multi"}) {
      rc |= call({"prepare-data", name, "--fast", "--seed", "7", "--out", data});
    }
    std::vector<std::string> train = {"train", "--model", "edelta", "--dataset", "stability", "--data", data,
                                      "--iters", "8", "--batch", "4", "--seed", "11", "--out",
                                      (dir / "train").string()};
    train.insert(train.end(), tiny.begin(), tiny.end());
    rc |= call(train);
    rc |= call({"bench", "reflection", "--iters", "100", "--sizes", "10,50", "--seeds", "1,2", "--out",
                (dir / "bench").string(), "--quiet"});
    if (rc != 0) return {Verdict::fail, "a command exited non-zero"};
  }
  std::size_t compared = 0;
  const fs::path a = root / "rep0", b = root / "rep1";
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().string().ends_with(".timing.json")) continue;
    const auto rel = fs::relative(e.path(), a);
    ++compared;
    if (!fs::exists(b / rel) || binio::read_file(e.path()) != binio::read_file(b / rel)) {
      diffs.push_back(rel.string());
    }
  }
  if (!diffs.empty()) return {Verdict::fail, "differs: " + diffs.front()};
  return {Verdict::pass, std::to_string(compared) + " files bit-identical across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string profile = "ci", known_text, only_text;
  Settings st;
  std::string out_dir = (fs::temp_directory_path() / "georesidual_acceptance").string();
  app.add_option("--profile", profile, "ci | full")->check(CLI::IsMember({"ci", "full"}));
  app.add_option("--known-failures", known_text, "Comma-separated criteria expected to fail");
  app.add_option("--criteria", only_text, "Comma-separated subset to run");
  app.add_option("--jobs", st.jobs, "Concurrent training runs")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Working directory for records");
  CLI11_PARSE(app, argc, argv);
  st.full = profile == "full";
  st.out = out_dir;

  auto parse_set = [](const std::string& text) {
    std::set<int> s;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
      if (!item.empty()) s.insert(std::stoi(item));
    }
    return s;
  };
  const std::set<int> known = parse_set(known_text), only = parse_set(only_text);

  const verify::VerifyOptions vo;
  const std::vector<std::pair<std::string, std::function<Outcome(const Settings&)>>> criteria = {
      {"orthogonality suite", [&](const Settings&) { return from_suite(verify::orthogonality_suite(vo)); }},
      {"householder suite", [&](const Settings&) { return from_suite(verify::householder_suite(vo)); }},
      {"midpoint and gate penalty", [&](const Settings&) { return from_suite(verify::midpoint_suite(vo)); }},
      {"retraction bound", [&](const Settings&) { return from_suite(verify::retraction_suite(vo)); }},
      {"gradient checks", [&](const Settings&) { return from_suite(verify::gradient_suite(vo)); }},
      {"reflection diagnostic", reflection},
      {"matched-params ordering", matched_params},
      {"parameter fairness", fairness},
      {"initialization robustness", init_robustness},
      {"determinism", determinism},
  };

  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(st);
    } catch (const std::exception& e) {
      o = {Verdict::fail, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    if (o.verdict == Verdict::fail) failed.insert(id);
    std::printf("[%s] %2d %-27s %s (%.1f s)%s\n", tag, id, criteria[i].first.c_str(), o.detail.c_str(), secs,
                o.verdict == Verdict::fail && known.contains(id) ? " [known failure]" : "");
    std::fflush(stdout);
  }
  bool unexpected = false;
  for (int id : failed) unexpected |= !known.contains(id);
  for (int id : known) {
    if (!failed.contains(id) && (only.empty() || only.contains(id))) {
      std::printf("note: criterion %d is listed as a known failure but did not fail\n", id);
    }
  }
  std::printf("%zu failed%s\n", failed.size(), unexpected ? ", including unexpected failures" : "");
  return unexpected ? 1 : 0;
}
