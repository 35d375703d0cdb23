#include "sfn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "sfn/io.hpp"
#include "sfn/parallel.hpp"

namespace sfn {

Vector draw_initial_point(const InitDistribution& init, Index d, std::uint64_t seed) {
  if (init.kind == InitDistribution::Kind::fixed) {
    if (init.point.size() != d)
      throw std::invalid_argument("fixed initial point has dimension " +
                                  std::to_string(init.point.size()) + ", expected " +
                                  std::to_string(d));
    return init.point;
  }
  if (!(init.scale >= 0.0)) throw std::invalid_argument("init scale must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector w(d);
  for (Index i = 0; i < d; ++i) w(i) = init.scale * nd(rng);
  return w;
}

std::string default_label(const OptimizerConfig& c) {
  std::string s = to_string(c.method);
  if (c.method == Method::lrsfn) s += "_r" + std::to_string(c.rank);
  return s;
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  nlohmann::json configs = nlohmann::json::array();
  for (const auto& lc : s.configs) {
    nlohmann::json c = lc.config;
    c["label"] = lc.label;
    configs.push_back(std::move(c));
  }
  nlohmann::json init;
  if (s.init.kind == InitDistribution::Kind::fixed) {
    init["kind"] = "fixed";
    init["point"] = std::vector<double>(s.init.point.data(), s.init.point.data() + s.init.point.size());
  } else {
    init["kind"] = "near_zero_gaussian";
    init["scale"] = s.init.scale;
  }
  j = nlohmann::json{{"problem", s.problem},
                     {"configs", configs},
                     {"n_seeds", s.n_seeds},
                     {"seed", s.seed},
                     {"init", init},
                     {"record_spectrum_at", s.record_spectrum_at},
                     {"spectrum_rank", s.spectrum_rank},
                     {"out_dir", s.out_dir},
                     {"threads", s.threads}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  static const std::set<std::string> known = {"problem", "configs", "n_seeds", "seed", "init",
                                              "record_spectrum_at", "spectrum_rank", "out_dir",
                                              "threads"};
  if (!j.is_object()) throw std::invalid_argument("experiment spec must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown experiment field '" + key + "'");
  const ExperimentSpec def;
  s.problem = j.contains("problem") ? j.at("problem").get<ProblemSpec>() : def.problem;
  s.configs.clear();
  if (j.contains("configs")) {
    for (const auto& c : j.at("configs")) {
      LabeledConfig lc{"", c.get<OptimizerConfig>()};
      lc.label = c.value("label", default_label(lc.config));
      s.configs.push_back(std::move(lc));
    }
  }
  s.n_seeds = j.value("n_seeds", def.n_seeds);
  s.seed = j.value("seed", def.seed);
  s.init = def.init;
  if (j.contains("init")) {
    const auto& in = j.at("init");
    const std::string kind = in.value("kind", std::string("near_zero_gaussian"));
    if (kind == "fixed") {
      const auto p = in.at("point").get<std::vector<double>>();
      s.init = InitDistribution::fixed(
          Eigen::Map<const Vector>(p.data(), static_cast<Index>(p.size())));
    } else if (kind == "near_zero_gaussian") {
      s.init = InitDistribution::gaussian(in.value("scale", def.init.scale));
    } else {
      throw std::invalid_argument("unknown init kind '" + kind + "'");
    }
  }
  s.record_spectrum_at = j.value("record_spectrum_at", def.record_spectrum_at);
  s.spectrum_rank = j.value("spectrum_rank", def.spectrum_rank);
  s.out_dir = j.value("out_dir", def.out_dir);
  s.threads = j.value("threads", def.threads);
}

// ---------------------------------------------------------------------------

namespace {

struct Stats {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.std = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  s.min = *std::min_element(xs.begin(), xs.end());
  return s;
}

std::vector<std::string> labels_in_order(const std::vector<RunRecord>& runs) {
  std::vector<std::string> out;
  for (const auto& r : runs)
    if (std::find(out.begin(), out.end(), r.label) == out.end()) out.push_back(r.label);
  return out;
}

std::uint64_t run_seed(std::uint64_t config_seed, Index seed_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(config_seed),
                    static_cast<std::uint32_t>(config_seed >> 32),
                    static_cast<std::uint32_t>(seed_index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string safe_name(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return out;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs) {
  std::vector<SummaryRow> rows;
  for (const auto& label : labels_in_order(runs)) {
    SummaryRow row;
    row.label = label;
    std::vector<double> best, work, iters;
    for (const auto& r : runs) {
      if (r.label != label) continue;
      if (r.result.status == RunStatus::diverged) {
        ++row.diverged;
        continue;
      }
      best.push_back(r.result.best_loss);
      work.push_back(static_cast<double>(r.result.trace.back().work_units));
      iters.push_back(static_cast<double>(r.result.trace.back().k));
    }
    const Stats b = stats_of(best);
    row.mean_best = b.mean;
    row.std_best = b.std;
    row.min_best = b.min;
    row.mean_work = stats_of(work).mean;
    row.mean_iters = stats_of(iters).mean;
    row.runs = static_cast<Index>(best.size());
    row.no_data = best.empty();
    rows.push_back(std::move(row));
  }
  return rows;
}

LowRankEig spectrum_snapshot(const Objective& f, const Vector& w, Index r, std::uint64_t seed) {
  const Index d = f.dim();
  return randomized_eig(hessian_operator(f, w), d, {std::min(r, d), 10, 0, seed});
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (spec.n_seeds < 1) throw std::invalid_argument("n_seeds must be at least 1");
  if (spec.configs.empty()) throw std::invalid_argument("experiment has no optimizer configs");
  const ObjectivePtr f = make_problem(spec.problem);
  for (const auto& lc : spec.configs) validate(lc.config, *f);

  std::vector<Vector> starts;
  for (Index s = 0; s < spec.n_seeds; ++s)
    starts.push_back(draw_initial_point(spec.init, f->dim(), spec.seed + static_cast<std::uint64_t>(s)));

  const std::set<Index> snap(spec.record_spectrum_at.begin(), spec.record_spectrum_at.end());
  ExperimentResult out;
  out.runs.resize(spec.configs.size() * static_cast<std::size_t>(spec.n_seeds));

  const int saved = max_threads();
  set_max_threads(spec.threads);
  try {
    parallel_for(out.runs.size(), [&](std::size_t job) {
      const auto ci = job / static_cast<std::size_t>(spec.n_seeds);
      const auto si = static_cast<Index>(job % static_cast<std::size_t>(spec.n_seeds));
      RunRecord& rec = out.runs[job];
      rec.label = spec.configs[ci].label;
      rec.seed_index = si;
      OptimizerConfig cfg = spec.configs[ci].config;
      cfg.seed = run_seed(cfg.seed, si);
      IterationCallback cb;
      if (!snap.empty())
        cb = [&](const OptimizerState& st, const TraceRecord& tr) {
          if (snap.count(tr.k) && !tr.diverged)
            rec.spectra.emplace_back(
                tr.k, spectrum_snapshot(*f, st.w, spec.spectrum_rank, cfg.seed + static_cast<std::uint64_t>(tr.k)));
        };
      rec.result = run(*f, cfg, starts[static_cast<std::size_t>(si)], cb);
    });
  } catch (...) {
    set_max_threads(saved);
    throw;
  }
  set_max_threads(saved);

  out.summary = summarize(out.runs);
  if (!spec.out_dir.empty()) write_experiment_outputs(spec.out_dir, spec, out);
  return out;
}

std::vector<SummaryRow> work_normalized_compare(const std::vector<RunRecord>& runs, double budget) {
  std::vector<SummaryRow> rows;
  for (const auto& label : labels_in_order(runs)) {
    SummaryRow row;
    row.label = label;
    std::vector<double> best, work, iters;
    for (const auto& r : runs) {
      if (r.label != label) continue;
      double b = std::numeric_limits<double>::infinity();
      const TraceRecord* last = nullptr;
      bool diverged = false;
      for (const auto& t : r.result.trace) {
        if (t.k < 1) continue;
        if (static_cast<double>(t.work_units) > budget) break;
        if (t.diverged) {
          diverged = true;
          break;
        }
        b = std::min(b, t.loss);
        last = &t;
      }
      if (diverged) ++row.diverged;
      if (!last) continue;
      best.push_back(b);
      work.push_back(static_cast<double>(last->work_units));
      iters.push_back(static_cast<double>(last->k));
    }
    const Stats s = stats_of(best);
    row.mean_best = s.mean;
    row.std_best = s.std;
    row.min_best = s.min;
    row.mean_work = stats_of(work).mean;
    row.mean_iters = stats_of(iters).mean;
    row.runs = static_cast<Index>(best.size());
    row.no_data = best.empty();
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "method,mean_best,std_best,min_best,mean_work,diverged\n";
  for (const auto& r : rows)
    os << r.label << ',' << format_double(r.mean_best) << ',' << format_double(r.std_best) << ','
       << format_double(r.min_best) << ',' << format_double(r.mean_work) << ',' << r.diverged
       << '\n';
}

void write_compare_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "method,mean_best,std_best,min_best,mean_work,mean_iters,diverged,status\n";
  for (const auto& r : rows)
    os << r.label << ',' << format_double(r.mean_best) << ',' << format_double(r.std_best) << ','
       << format_double(r.min_best) << ',' << format_double(r.mean_work) << ','
       << format_double(r.mean_iters) << ',' << r.diverged << ',' << (r.no_data ? "no data" : "ok")
       << '\n';
}

void write_experiment_outputs(const std::string& dir, const ExperimentSpec& spec,
                              const ExperimentResult& result) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  {
    std::ostringstream os;
    write_summary_csv(os, result.summary);
    write_file_atomic(root / "summary.csv", os.str());
  }
  write_file_atomic(root / "spec.json", nlohmann::json(spec).dump(2) + "\n");
  for (const auto& r : result.runs) {
    const std::string stem = safe_name(r.label) + "_seed" + std::to_string(r.seed_index);
    std::ostringstream os;
    write_trace_jsonl(os, r.result.trace);
    write_file_atomic(root / "traces" / (stem + ".jsonl"), os.str());
    for (const auto& [k, eig] : r.spectra) {
      auto j = spectrum_json(eig);
      j["k"] = k;
      write_file_atomic(root / "spectra" / (stem + "_k" + std::to_string(k) + ".json"),
                        j.dump() + "\n");
    }
  }
}

}  // namespace sfn
