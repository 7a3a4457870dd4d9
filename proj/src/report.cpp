#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "georesidual/binio.hpp"
#include "georesidual/cli.hpp"
#include "georesidual/errors.hpp"

namespace georesidual::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using trainer::Aggregate;
using trainer::DiagnosticRecord;
using trainer::RunRecord;

namespace {

std::string strip_split(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

std::string sig3(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json agg_json(const Aggregate& a) { return {{"mean", a.mean}, {"std", a.std}, {"n", a.n}}; }

Json opt_agg_json(const std::optional<Aggregate>& a) { return a ? agg_json(*a) : Json(nullptr); }

std::string seeds_text(const std::vector<std::uint64_t>& seeds, char sep) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(seeds[i]);
  }
  return s;
}

}  // namespace

std::string format_mean_std(const Aggregate& a) {
  if (a.n == 0) return "n/a";
  return sig3(a.mean) + " ± " + sig3(a.std);
}

BenchmarkSummary summarize(const std::vector<RunRecord>& runs,
                           const std::vector<DiagnosticRecord>& diagnostics) {
  BenchmarkSummary out;

  using RunKey = std::tuple<std::string, std::size_t, double>;  // dataset, kind index, bias
  std::map<RunKey, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) {
    groups[{strip_split(r.dataset), static_cast<std::size_t>(r.config.kind), r.config.init_gate_bias}]
        .push_back(&r);
  }
  for (const auto& [key, members] : groups) {
    SummaryRow row;
    row.dataset = std::get<0>(key);
    row.model = std::string(models::to_string(members.front()->config.kind));
    row.init_gate_bias = std::get<2>(key);
    row.layers = members.front()->config.n_layers;
    row.params = members.front()->params;
    std::vector<double> loss, nd, ca;
    for (const auto* r : members) {
      row.seeds.push_back(r->seed);
      if (r->status != "ok") {
        ++row.failed;
        continue;
      }
      loss.push_back(r->final.val_loss);
      if (r->final.norm_deviation) nd.push_back(*r->final.norm_deviation);
      if (r->final.cosine_alignment) ca.push_back(*r->final.cosine_alignment);
    }
    std::sort(row.seeds.begin(), row.seeds.end());
    row.val_loss = trainer::aggregate(loss);
    if (!nd.empty()) row.norm_deviation = trainer::aggregate(nd);
    if (!ca.empty()) row.cosine_alignment = trainer::aggregate(ca);
    out.runs.push_back(std::move(row));
  }
  for (auto& row : out.runs) {
    for (const auto& ref : out.runs) {
      if (ref.model == "gpt" && ref.dataset == row.dataset && ref.val_loss.n > 0 &&
          row.val_loss.n > 0 && row.val_loss.mean > 0.0) {
        row.vs_gpt = ref.val_loss.mean / row.val_loss.mean;
        break;
      }
    }
  }

  std::map<std::pair<std::string, std::size_t>, std::vector<const DiagnosticRecord*>> dgroups;
  for (const auto& d : diagnostics) {
    dgroups[{std::string(trainer::to_string(d.kind)), d.samples}].push_back(&d);
  }
  for (const auto& [key, members] : dgroups) {
    DiagnosticRow row;
    row.kind = key.first;
    row.samples = key.second;
    std::vector<double> param, align;
    for (const auto* d : members) {
      row.seeds.push_back(d->seed);
      param.push_back(d->final_param);
      align.push_back(d->final_alignment);
      row.converged += d->converged ? 1 : 0;
    }
    std::sort(row.seeds.begin(), row.seeds.end());
    row.param = trainer::aggregate(param);
    row.alignment = trainer::aggregate(align);
    out.diagnostics.push_back(std::move(row));
  }
  return out;
}

LoadedRecords load_records(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  LoadedRecords out;
  for (const auto& f : files) {
    const std::string text = binio::read_file(f);
    if (text.find("\"final_param\"") != std::string::npos) {
      out.diagnostics.push_back(trainer::diagnostic_record_from_jsonl(text));
    } else {
      out.runs.push_back(trainer::run_record_from_jsonl(text));
    }
  }
  return out;
}

std::string render_markdown(const BenchmarkSummary& s) {
  std::ostringstream o;
  if (!s.runs.empty()) {
    o << "| dataset | model | gate bias | layers | params | seeds | val loss | vs gpt | norm dev | cos align |\n"
      << "|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : s.runs) {
      o << "| " << r.dataset << " | " << r.model << " | " << sig3(r.init_gate_bias) << " | " << r.layers
        << " | " << r.params << " | " << seeds_text(r.seeds, ',') << " | " << format_mean_std(r.val_loss);
      if (r.failed) o << " (" << r.failed << " failed)";
      o << " | " << (r.vs_gpt ? sig3(*r.vs_gpt) + "x" : "-") << " | "
        << (r.norm_deviation ? format_mean_std(*r.norm_deviation) : "-") << " | "
        << (r.cosine_alignment ? format_mean_std(*r.cosine_alignment) : "-") << " |\n";
    }
  }
  if (!s.diagnostics.empty()) {
    if (!s.runs.empty()) o << "\n";
    o << "| diagnostic | samples | seeds | final param | alignment | converged |\n"
      << "|---|---|---|---|---|---|\n";
    for (const auto& d : s.diagnostics) {
      o << "| " << d.kind << " | " << d.samples << " | " << seeds_text(d.seeds, ',') << " | "
        << format_mean_std(d.param) << " | " << format_mean_std(d.alignment) << " | " << d.converged
        << "/" << d.seeds.size() << " |\n";
    }
  }
  return o.str();
}

std::string render_csv(const BenchmarkSummary& s) {
  std::ostringstream o;
  auto opt = [](const std::optional<Aggregate>& a, bool mean) {
    return a ? full(mean ? a->mean : a->std) : std::string();
  };
  if (!s.runs.empty()) {
    o << "dataset,model,init_gate_bias,layers,params,seeds,n,failed,val_loss_mean,val_loss_std,"
         "vs_gpt,norm_deviation_mean,norm_deviation_std,cosine_alignment_mean,cosine_alignment_std\n";
    for (const auto& r : s.runs) {
      o << r.dataset << "," << r.model << "," << full(r.init_gate_bias) << "," << r.layers << ","
        << r.params << "," << seeds_text(r.seeds, ';') << "," << r.val_loss.n << "," << r.failed << ","
        << full(r.val_loss.mean) << "," << full(r.val_loss.std) << ","
        << (r.vs_gpt ? full(*r.vs_gpt) : "") << "," << opt(r.norm_deviation, true) << ","
        << opt(r.norm_deviation, false) << "," << opt(r.cosine_alignment, true) << ","
        << opt(r.cosine_alignment, false) << "\n";
    }
  }
  if (!s.diagnostics.empty()) {
    if (!s.runs.empty()) o << "\n";
    o << "kind,samples,seeds,param_mean,param_std,alignment_mean,alignment_std,converged\n";
    for (const auto& d : s.diagnostics) {
      o << d.kind << "," << d.samples << "," << seeds_text(d.seeds, ';') << "," << full(d.param.mean)
        << "," << full(d.param.std) << "," << full(d.alignment.mean) << "," << full(d.alignment.std)
        << "," << d.converged << "\n";
    }
  }
  return o.str();
}

std::string render_json(const BenchmarkSummary& s) {
  Json j;
  j["runs"] = Json::array();
  for (const auto& r : s.runs) {
    j["runs"].push_back({{"dataset", r.dataset},
                         {"model", r.model},
                         {"init_gate_bias", r.init_gate_bias},
                         {"layers", r.layers},
                         {"params", r.params},
                         {"seeds", r.seeds},
                         {"failed", r.failed},
                         {"val_loss", agg_json(r.val_loss)},
                         {"vs_gpt", r.vs_gpt ? Json(*r.vs_gpt) : Json(nullptr)},
                         {"norm_deviation", opt_agg_json(r.norm_deviation)},
                         {"cosine_alignment", opt_agg_json(r.cosine_alignment)}});
  }
  j["diagnostics"] = Json::array();
  for (const auto& d : s.diagnostics) {
    j["diagnostics"].push_back({{"kind", d.kind},
                                {"samples", d.samples},
                                {"seeds", d.seeds},
                                {"param", agg_json(d.param)},
                                {"alignment", agg_json(d.alignment)},
                                {"converged", d.converged}});
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// SVG

namespace {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series, bool log_y) {
  const double W = 760, H = 440, L = 70, R = 200, T = 40, B = 50;
  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (log_y && s.y[i] <= 0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return T + ph - (ty(v) - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
    << "</text>\n"
    << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, gy = y0 + (y1 - y0) * i / 4.0;
    const double sx = L + pw * i / 4.0, sy = T + ph - ph * i / 4.0;
    o << "<text x=\"" << num(sx) << "\" y=\"" << num(T + ph + 16) << "\" text-anchor=\"middle\">"
      << sig3(fx) << "</text>\n"
      << "<text x=\"" << num(L - 6) << "\" y=\"" << num(sy + 4) << "\" text-anchor=\"end\">"
      << sig3(log_y ? std::pow(10.0, gy) : gy) << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << num(sy) << "\" x2=\"" << L + pw << "\" y2=\"" << num(sy)
      << "\" stroke=\"#ddd\"/>\n";
  }
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(xlabel)
    << "</text>\n"
    << "<text transform=\"translate(16," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(ylabel) << (log_y ? " (log)" : "") << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    const char* dash = (k / std::size(kPalette)) % 2 ? " stroke-dasharray=\"5,3\"" : "";
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"" << dash
      << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (log_y && s.y[i] <= 0)) continue;
      o << num(px(s.x[i])) << "," << num(py(s.y[i])) << " ";
    }
    o << "\"/>\n";
    const double ly = T + 10 + 14.0 * static_cast<double>(k);
    o << "<line x1=\"" << L + pw + 10 << "\" y1=\"" << num(ly) << "\" x2=\"" << L + pw + 30 << "\" y2=\""
      << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << dash << "/>\n"
      << "<text x=\"" << L + pw + 34 << "\" y=\"" << num(ly + 4) << "\">" << escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Pointwise mean of equally indexed curves.
Series mean_series(std::string label, const std::vector<Series>& curves) {
  Series out{std::move(label), {}, {}};
  if (curves.empty()) return out;
  std::size_t n = curves.front().x.size();
  for (const auto& c : curves) n = std::min(n, c.x.size());
  out.x.assign(curves.front().x.begin(), curves.front().x.begin() + static_cast<long>(n));
  out.y.assign(n, 0.0);
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < n; ++i) out.y[i] += c.y[i] / static_cast<double>(curves.size());
  }
  return out;
}

std::string group_label(const RunRecord& r) {
  std::string s(models::to_string(r.config.kind));
  if (r.config.kind == models::ModelKind::edelta) s += " b=" + sig3(r.config.init_gate_bias);
  return s;
}

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  }
  return s;
}

}  // namespace

std::vector<fs::path> write_svgs(const LoadedRecords& records, const fs::path& dir) {
  std::vector<fs::path> written;
  auto emit = [&](const std::string& file, const std::string& svg) {
    const fs::path p = dir / file;
    binio::write_file_atomic(p, svg);
    written.push_back(p);
  };

  // Loss curves: per dataset, mean validation loss over seeds for each model.
  std::map<std::string, std::map<std::string, std::vector<Series>>> loss;
  std::map<std::string, std::vector<Series>> norms;
  std::map<std::string, std::map<std::string, std::vector<std::vector<Series>>>> gammas;
  for (const auto& r : records.runs) {
    const std::string ds = strip_split(r.dataset), label = group_label(r);
    Series s{label, {}, {}};
    for (const auto& e : r.log) {
      s.x.push_back(static_cast<double>(e.iter));
      s.y.push_back(e.val_loss);
    }
    loss[ds][label].push_back(std::move(s));
    if (!r.norm_profile.empty()) {
      Series n{label, {}, {}};
      for (std::size_t t = 0; t < r.norm_profile.size() && t <= 100; ++t) {
        n.x.push_back(static_cast<double>(t));
        n.y.push_back(r.norm_profile[t]);
      }
      norms[label].push_back(std::move(n));
    }
    if (!r.log.empty() && !r.log.front().gammas.empty()) {
      const std::size_t sites = r.log.front().gammas.size();
      std::vector<Series> per_site(sites);
      for (const auto& e : r.log) {
        for (std::size_t k = 0; k < sites && k < e.gammas.size(); ++k) {
          per_site[k].x.push_back(static_cast<double>(e.iter));
          per_site[k].y.push_back(e.gammas[k]);
        }
      }
      gammas[ds][label].push_back(std::move(per_site));
    }
  }
  for (const auto& [ds, by_model] : loss) {
    std::vector<Series> series;
    for (const auto& [label, curves] : by_model) series.push_back(mean_series(label, curves));
    emit("loss_" + file_safe(ds) + ".svg",
         line_plot("Validation loss, " + ds, "iteration", "val loss", series, true));
  }
  if (!norms.empty()) {
    std::vector<Series> series;
    for (const auto& [label, curves] : norms) series.push_back(mean_series(label, curves));
    Series target{"target", {0.0, 100.0}, {1.0, 1.0}};
    series.push_back(target);
    emit("norm_profile.svg", line_plot("Output norm by position", "position", "mean ||y_t||", series, false));
  }
  for (const auto& [ds, by_model] : gammas) {
    std::vector<Series> series;
    for (const auto& [label, runs] : by_model) {
      const std::size_t sites = runs.front().size();
      for (std::size_t k = 0; k < sites; ++k) {
        std::vector<Series> curves;
        for (const auto& run : runs) {
          if (k < run.size()) curves.push_back(run[k]);
        }
        const std::string site = "L" + std::to_string(k / 2) + (k % 2 ? ".mlp" : ".attn");
        series.push_back(mean_series(label + " " + site, curves));
      }
    }
    emit("gamma_" + file_safe(ds) + ".svg",
         line_plot("Gate trajectories, " + ds, "iteration", "gamma", series, false));
  }

  // Reflection diagnostics: learned scalar per kind and sample size.
  std::map<std::string, std::map<std::size_t, std::vector<Series>>> diag;
  for (const auto& d : records.diagnostics) {
    Series s;
    for (const auto& p : d.trajectory) {
      s.x.push_back(static_cast<double>(p.iter));
      s.y.push_back(p.param);
    }
    diag[std::string(trainer::to_string(d.kind))][d.samples].push_back(std::move(s));
  }
  for (const auto& [kind, by_n] : diag) {
    std::vector<Series> series;
    for (const auto& [n, curves] : by_n) series.push_back(mean_series("n=" + std::to_string(n), curves));
    const std::string ylabel = kind == "hybrid_toy" ? "mean gamma" : "beta";
    emit("reflection_" + kind + ".svg", line_plot("Reflection diagnostic, " + kind, "iteration", ylabel,
                                                  series, false));
  }
  return written;
}

}  // namespace georesidual::cli
