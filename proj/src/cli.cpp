#include "sfn/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <algorithm>
#include <cmath>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfn/harness.hpp"
#include "sfn/io.hpp"
#include "sfn/parallel.hpp"
#include "sfn/randeig.hpp"
#include "sfn/stability.hpp"

#ifndef SFN_VERSION
#define SFN_VERSION "unknown"
#endif
#ifndef SFN_BUILD_TYPE
#define SFN_BUILD_TYPE "unknown"
#endif

namespace sfn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad flags or configuration: exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;

  std::string problem = "rosenbrock";
  Index d = 10;
  Index n = 1;
  double noise = 0.0;
  double lambda = 1.0;
  double cond = 10.0;
  std::uint64_t seed = 0;

  std::vector<std::string> methods;
  double alpha = 1.0;
  double gamma = 1e-3;
  Index rank = 10;
  Index grad_batch = 0;
  Index hess_batch = 0;
  Index iters = 100;

  Index seeds = 10;
  double init_scale = 1.0;
  bool init_zero = false;
  std::vector<Index> spectrum_at;
  Index spectrum_rank = 20;
  double budget = 0.0;
  std::string out;
  int threads = 1;

  std::string param;
  std::vector<std::string> values;

  double zeta = 0.5;
  Index probes = 100;
  Index replicates = 50;
  std::string at = "init";
  std::vector<double> multipliers;
  std::vector<double> dts;

  std::string lemma;
  std::vector<Index> batches;
  double slack = 1.05;
};

bool given(const CLI::App* sub, const std::string& flag) {
  const auto* o = sub->get_option_no_throw(flag);
  return o && o->count() > 0;
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

std::uint64_t env_seed() {
  const char* s = std::getenv("SFN_OPT_SEED");
  if (!s || !*s) return 0;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("SFN_OPT_SEED must be a non-negative integer, got '") + s + "'");
  }
}

void add_problem_flags(CLI::App* sub, Options& o) {
  sub->add_option("--problem", o.problem, "michalewicz | rosenbrock | finite-sum | quadratic")
      ->check(CLI::IsMember({"michalewicz", "rosenbrock", "finite-sum", "quadratic"}));
  sub->add_option("--d", o.d, "dimension")->check(CLI::PositiveNumber);
  sub->add_option("--n", o.n, "number of samples (finite-sum, quadratic)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--noise", o.noise, "per-sample noise level")->check(CLI::NonNegativeNumber);
  sub->add_option("--lambda", o.lambda, "finite-sum quartic weight")->check(CLI::NonNegativeNumber);
  sub->add_option("--cond", o.cond, "quadratic condition number")->check(CLI::Range(1.0, 1e300));
  sub->add_option("--seed", o.seed, "base seed (falls back to SFN_OPT_SEED)");
  sub->add_option("--threads", o.threads, "worker thread cap")->check(CLI::Range(1, 1024));
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--config", o.config, "JSON config file; flags override it");
}

void add_optimizer_flags(CLI::App* sub, Options& o, bool many_methods) {
  auto* m = sub->add_option("--method", o.methods,
                            many_methods ? "comma list of gd, csgd, newton, full_sfn, lrsfn[:rank]"
                                         : "gd | newton | lrsfn");
  m->delimiter(',');
  sub->add_option("--alpha", o.alpha, "step length")->check(CLI::PositiveNumber);
  sub->add_option("--gamma", o.gamma, "LRSFN damping")->check(CLI::PositiveNumber);
  sub->add_option("--rank", o.rank, "LRSFN rank")->check(CLI::PositiveNumber);
  sub->add_option("--grad-batch", o.grad_batch, "gradient batch size, 0 = all samples")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--hess-batch", o.hess_batch, "Hessian batch size, 0 = all samples")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--iters", o.iters, "iterations")->check(CLI::NonNegativeNumber);
}

void add_init_flags(CLI::App* sub, Options& o) {
  sub->add_option("--init-scale", o.init_scale, "std of the Gaussian initial guess")
      ->check(CLI::NonNegativeNumber);
  sub->add_flag("--init-zero", o.init_zero, "start every run at w = 0");
}

ProblemSpec problem_from(const CLI::App* sub, const Options& o, ProblemSpec p) {
  if (given(sub, "--problem")) p.name = o.problem;
  if (given(sub, "--d")) p.d = o.d;
  if (given(sub, "--n")) p.n = o.n;
  if (given(sub, "--noise")) p.noise = o.noise;
  if (given(sub, "--lambda")) p.lambda = o.lambda;
  if (given(sub, "--cond")) p.cond = o.cond;
  return p;
}

std::uint64_t resolve_seed(const CLI::App* sub, const Options& o, bool config_has_seed,
                           std::uint64_t config_seed) {
  if (given(sub, "--seed")) return o.seed;
  if (config_has_seed) return config_seed;
  return env_seed();
}

void apply_optimizer_flags(const CLI::App* sub, const Options& o, OptimizerConfig& c) {
  if (given(sub, "--alpha")) c.alpha = o.alpha;
  if (given(sub, "--gamma")) c.gamma = o.gamma;
  if (given(sub, "--rank")) c.rank = o.rank;
  if (given(sub, "--grad-batch")) c.grad_batch = o.grad_batch;
  if (given(sub, "--hess-batch")) c.hess_batch = o.hess_batch;
  if (given(sub, "--iters")) c.max_iters = o.iters;
}

LabeledConfig parse_method(const std::string& token, const CLI::App* sub, const Options& o) {
  OptimizerConfig c;
  apply_optimizer_flags(sub, o, c);
  std::string name = token;
  const auto colon = token.find(':');
  if (colon != std::string::npos) {
    name = token.substr(0, colon);
    const std::string r = token.substr(colon + 1);
    try {
      std::size_t pos = 0;
      c.rank = std::stol(r, &pos);
      if (pos != r.size()) throw std::invalid_argument(r);
    } catch (const std::exception&) {
      throw UsageError("--method: bad rank in '" + token + "'");
    }
  }
  try {
    c.method = method_from_string(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--method: ") + e.what());
  }
  if (colon != std::string::npos && c.method != Method::lrsfn)
    throw UsageError("--method: only lrsfn takes a rank suffix ('" + token + "')");
  return {default_label(c), c};
}

void check_experiment(const ExperimentSpec& spec) {
  if (spec.n_seeds < 1) throw UsageError("--seeds must be at least 1");
  if (spec.configs.empty()) throw UsageError("no optimizer given (use --method or a config file)");
  std::set<std::string> labels;
  for (const auto& lc : spec.configs)
    if (!labels.insert(lc.label).second) throw UsageError("duplicate config label '" + lc.label + "'");
  ObjectivePtr f;
  try {
    f = make_problem(spec.problem);
    for (const auto& lc : spec.configs) validate(lc.config, *f);
    draw_initial_point(spec.init, f->dim(), 0);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

// ExperimentSpec from --config (if any) with flag overrides.
ExperimentSpec experiment_from(const CLI::App* sub, const Options& o) {
  ExperimentSpec spec;
  json cfg;
  if (!o.config.empty()) {
    cfg = load_json(o.config);
    try {
      spec = cfg.get<ExperimentSpec>();
    } catch (const std::exception& e) {
      throw UsageError("config " + o.config + ": " + e.what());
    }
  }
  spec.problem = problem_from(sub, o, spec.problem);
  spec.seed = resolve_seed(sub, o, cfg.is_object() && cfg.contains("seed"), spec.seed);
  if (given(sub, "--seed") || !(cfg.is_object() && cfg.contains("problem") &&
                                cfg["problem"].contains("seed")))
    spec.problem.seed = spec.seed;
  if (given(sub, "--seeds")) spec.n_seeds = o.seeds;
  if (given(sub, "--init-zero") && o.init_zero)
    spec.init = InitDistribution::fixed(Vector::Zero(spec.problem.d));
  else if (given(sub, "--init-scale"))
    spec.init = InitDistribution::gaussian(o.init_scale);
  if (given(sub, "--spectrum-at")) spec.record_spectrum_at = o.spectrum_at;
  if (given(sub, "--spectrum-rank")) spec.spectrum_rank = o.spectrum_rank;
  if (given(sub, "--threads")) spec.threads = o.threads;
  if (given(sub, "--out")) spec.out_dir = o.out;

  if (given(sub, "--method")) {
    spec.configs.clear();
    for (const auto& t : o.methods) spec.configs.push_back(parse_method(t, sub, o));
  } else {
    for (auto& lc : spec.configs) apply_optimizer_flags(sub, o, lc.config);
  }
  return spec;
}

void emit_compare(const ExperimentResult& r, const ExperimentSpec& spec, double budget,
                  std::ostream& out) {
  std::ostringstream os;
  write_compare_csv(os, work_normalized_compare(r.runs, budget));
  out << "# work budget " << format_double(budget) << "\n" << os.str();
  if (!spec.out_dir.empty()) write_file_atomic(fs::path(spec.out_dir) / "compare.csv", os.str());
}

int cmd_run(const CLI::App* sub, const Options& o, std::ostream& out) {
  const ExperimentSpec spec = experiment_from(sub, o);
  check_experiment(spec);
  const auto r = run_experiment(spec);
  write_summary_csv(out, r.summary);
  if (given(sub, "--budget")) emit_compare(r, spec, o.budget, out);
  return 0;
}

int cmd_sweep(const CLI::App* sub, const Options& o, std::ostream& out) {
  ExperimentSpec spec = experiment_from(sub, o);
  if (o.values.empty()) throw UsageError("--values is required");
  std::vector<LabeledConfig> grid;
  for (const auto& base : spec.configs) {
    for (const auto& v : o.values) {
      LabeledConfig lc = base;
      try {
        std::size_t pos = 0;
        if (o.param == "alpha") lc.config.alpha = std::stod(v, &pos);
        else if (o.param == "gamma") lc.config.gamma = std::stod(v, &pos);
        else if (o.param == "rank") lc.config.rank = std::stol(v, &pos);
        else if (o.param == "grad-batch") lc.config.grad_batch = std::stol(v, &pos);
        else lc.config.hess_batch = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw UsageError("--values: '" + v + "' is not valid for --param " + o.param);
      }
      lc.label = base.label + "_" + o.param + v;
      grid.push_back(std::move(lc));
    }
  }
  spec.configs = std::move(grid);
  check_experiment(spec);
  const auto r = run_experiment(spec);
  write_summary_csv(out, r.summary);
  if (given(sub, "--budget")) emit_compare(r, spec, o.budget, out);
  return 0;
}

// Shared by the point-based subcommands.
struct PointSetup {
  ProblemSpec problem;
  ObjectivePtr f;
  Vector w;
  std::string where;
};

PointSetup point_setup(const CLI::App* sub, const Options& o, ProblemSpec defaults) {
  PointSetup s;
  s.problem = problem_from(sub, o, defaults);
  s.problem.seed = resolve_seed(sub, o, false, 0);
  try {
    s.f = make_problem(s.problem);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Index d = s.f->dim();
  if (o.at == "minimizer") {
    const auto* q = dynamic_cast<const QuadraticFiniteSum*>(s.f.get());
    if (!q) throw UsageError("--at minimizer needs --problem quadratic");
    s.w = q->minimizer();
  } else if (o.at == "zero" || o.init_zero) {
    s.w = Vector::Zero(d);
  } else if (o.at == "unit") {
    s.w = Vector::Ones(d) / std::sqrt(static_cast<double>(d));
  } else {
    s.w = draw_initial_point(InitDistribution::gaussian(o.init_scale), d, s.problem.seed);
  }
  s.where = o.init_zero ? "zero" : o.at;
  return s;
}

void write_out(const Options& o, const std::string& name, const std::string& text) {
  if (!o.out.empty()) write_file_atomic(fs::path(o.out) / name, text);
}

int cmd_spectrum(const CLI::App* sub, const Options& o, std::ostream& out) {
  const auto s = point_setup(sub, o, ProblemSpec{});
  if (o.rank > s.f->dim()) throw UsageError("--rank exceeds the problem dimension");
  const auto eig = spectrum_snapshot(*s.f, s.w, o.rank, s.problem.seed);
  json j = spectrum_json(eig);
  j["problem"] = s.problem;
  j["at"] = s.where;
  const std::string text = j.dump(2) + "\n";
  write_out(o, "spectrum.json", text);
  out << text;
  return 0;
}

OptimizerConfig single_method(const CLI::App* sub, const Options& o, const std::string& fallback) {
  if (o.methods.size() > 1) throw UsageError("--method takes a single method here");
  const auto lc = parse_method(o.methods.empty() ? fallback : o.methods.front(), sub, o);
  return lc.config;
}

int cmd_stability(const CLI::App* sub, const Options& o, std::ostream& out) {
  const auto s = point_setup(sub, o, ProblemSpec{});
  OptimizerConfig cfg = single_method(sub, o, "gd");
  if (!given(sub, "--iters")) cfg.max_iters = 200;
  try {
    validate(cfg, *s.f);
    if (s.f->dim() > kMaxStabilityDim)
      throw std::invalid_argument("stability diagnostics need d <= " +
                                  std::to_string(kMaxStabilityDim));
    if (cfg.method != Method::gd && cfg.method != Method::newton && cfg.method != Method::lrsfn)
      throw std::invalid_argument("--method must be gd, newton or lrsfn for stability");
    if (!(o.zeta > 0.0 && o.zeta < 1.0)) throw std::invalid_argument("--zeta must lie in (0, 1)");
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  set_max_threads(o.threads);

  const auto rep = stability_report(*s.f, s.w, cfg, o.zeta, o.probes, s.problem.seed);
  json j;
  j["problem"] = s.problem;
  j["at"] = s.where;
  j["config"] = cfg;
  j["report"] = rep;
  write_out(o, "report.json", j.dump(2) + "\n");

  json sims = json::array();
  std::vector<double> dts = o.dts;
  for (double m : o.multipliers) {
    OptimizerConfig c = cfg;
    c.alpha = m * rep.dt_bound;
    json row = {{"multiplier", m}, {"dt", c.alpha}};
    if (!(c.alpha > 0.0) || !std::isfinite(c.alpha)) {
      row["error"] = "bound is not a usable step";
    } else {
      try {
        const auto t = simulate_perturbation(*s.f, c, s.w, o.replicates, s.problem.seed + 1);
        row["stable"] = t.stable;
        row["exceed_fraction"] = t.exceed_fraction;
        row["first_exceed"] = t.first_exceed;
        row["max_mean_norm"] = std::isfinite(t.max_mean_norm) ? json(t.max_mean_norm) : json();
      } catch (const NumericalError& e) {
        row["error"] = e.what();
      }
    }
    sims.push_back(row);
  }
  j["simulations"] = sims;
  const std::string text = j.dump(2) + "\n";
  write_out(o, "stability.json", text);
  out << text;

  if (!dts.empty()) {
    std::ostringstream os;
    write_sweep_csv(os, stability_sweep(*s.f, cfg, s.w, dts, o.replicates, s.problem.seed + 1));
    write_out(o, "sweep.csv", os.str());
    out << os.str();
  }
  return 0;
}

int cmd_verify(const CLI::App* sub, const Options& o, std::ostream& out) {
  ProblemSpec defaults;
  defaults.name = "finite-sum";
  defaults.d = 10;
  defaults.n = 50;
  defaults.noise = 0.5;
  Options oo = o;
  if (!given(sub, "--at")) oo.at = "unit";
  const auto s = point_setup(sub, oo, defaults);
  if (s.f->num_samples() < 2) throw UsageError("no sampling dimension: choose a finite-sum problem");
  if (s.f->dim() > kMaxStabilityDim)
    throw UsageError("verify-bounds needs d <= " + std::to_string(kMaxStabilityDim));

  std::vector<Index> batches = o.batches;
  if (batches.empty()) {
    const std::vector<Index> def = o.lemma == "A1"   ? std::vector<Index>{2, 8, 32}
                                   : o.lemma == "A2" ? std::vector<Index>{2, 5, 10, 25}
                                                     : std::vector<Index>{2, 5, 10, 20};
    for (Index b : def)
      if (b <= s.f->num_samples()) batches.push_back(b);
  }
  for (Index b : batches)
    if (b < 1 || b > s.f->num_samples())
      throw UsageError("--batches: " + std::to_string(b) + " outside [1, n]");
  set_max_threads(o.threads);

  LemmaCheck chk;
  if (o.lemma == "A1") {
    chk = check_lemma_a1(*s.f, s.w, batches, o.probes, s.problem.seed, o.slack);
  } else if (o.lemma == "A2") {
    chk = check_lemma_a2(*s.f, s.w, batches, o.probes, s.problem.seed, o.slack);
  } else {
    OptimizerConfig cfg = single_method(sub, o, "newton");
    if (cfg.method != Method::newton && cfg.method != Method::lrsfn)
      throw UsageError("--method must be newton or lrsfn for lemma A4");
    try {
      OptimizerConfig probe = cfg;
      probe.grad_batch = probe.hess_batch = 0;
      validate(probe, *s.f);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    chk = check_lemma_a4(*s.f, s.w, cfg, batches, o.probes, s.problem.seed, o.slack);
  }
  json j = chk;
  j["problem"] = s.problem;
  j["at"] = s.where;
  const std::string text = j.dump(2) + "\n";
  write_out(o, "verify_" + o.lemma + ".json", text);
  out << text;
  return 0;
}

// Flat JSON configs for the point-based subcommands become leading flag
// tokens; flags given on the command line are left alone and so win.
std::vector<std::string> expand_flat_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  const std::string& subname = args[1];
  if (subname != "spectrum" && subname != "stability" && subname != "verify-bounds") return args;
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  const json cfg = load_json(path);
  if (!cfg.is_object()) throw UsageError("config " + path + ": top level must be an object");

  auto on_command_line = [&](const std::string& flag) {
    for (std::size_t i = 2; i < args.size(); ++i)
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  std::vector<std::string> injected;
  for (const auto& [key, value] : cfg.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    const std::string flag = "--" + name;
    if (name == "config") throw UsageError("config " + path + ": nested 'config' field");
    if (on_command_line(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back(flag);
      continue;
    }
    std::string text;
    if (value.is_array()) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        if (i) text += ",";
        text += value[i].is_string() ? value[i].get<std::string>() : value[i].dump();
      }
    } else if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_number()) {
      text = value.dump();
    } else {
      throw UsageError("config " + path + ": field '" + key + "' has an unsupported type");
    }
    injected.push_back(flag + "=" + text);
  }
  std::vector<std::string> outv{args[0], args[1]};
  outv.insert(outv.end(), injected.begin(), injected.end());
  outv.insert(outv.end(), args.begin() + 2, args.end());
  return outv;
}

}  // namespace

std::string version_string() {
  std::ostringstream os;
  os << "sfn_opt " << SFN_VERSION << " (" << SFN_BUILD_TYPE << ", "
#if defined(__clang__)
     << "clang " << __clang_major__ << "." << __clang_minor__
#elif defined(__GNUC__)
     << "gcc " << __GNUC__ << "." << __GNUC_MINOR__
#else
     << "unknown compiler"
#endif
     << ", eigen " << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "."
     << EIGEN_MINOR_VERSION << ")";
  return os.str();
}

int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Low rank saddle free Newton: benchmarks, spectra and stability diagnostics",
               "sfn_opt"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.\n"
             "SFN_OPT_SEED supplies the seed when neither --seed nor the config sets one.");

  auto* run = app.add_subcommand("run", "run optimizers over several seeds and summarize");
  auto* sweep = app.add_subcommand("sweep", "run a hyperparameter grid");
  auto* spectrum = app.add_subcommand("spectrum", "randomized Hessian spectrum at a point");
  auto* stability = app.add_subcommand("stability", "step-length bounds and perturbation runs");
  auto* verify = app.add_subcommand("verify-bounds", "Monte Carlo check of a variance lemma");

  for (auto* sub : {run, sweep}) {
    add_problem_flags(sub, o);
    add_optimizer_flags(sub, o, true);
    add_init_flags(sub, o);
    sub->add_option("--seeds", o.seeds, "number of initial guesses")->check(CLI::PositiveNumber);
    sub->add_option("--spectrum-at", o.spectrum_at, "iterations to record spectra at")
        ->delimiter(',');
    sub->add_option("--spectrum-rank", o.spectrum_rank, "rank of recorded spectra")
        ->check(CLI::PositiveNumber);
    sub->add_option("--budget", o.budget, "also compare methods at this work budget")
        ->check(CLI::NonNegativeNumber);
  }
  sweep->add_option("--param", o.param, "swept hyperparameter")
      ->required()
      ->check(CLI::IsMember({"alpha", "gamma", "rank", "grad-batch", "hess-batch"}));
  sweep->add_option("--values", o.values, "comma list of values")->required()->delimiter(',');

  for (auto* sub : {spectrum, stability, verify}) {
    add_problem_flags(sub, o);
    add_init_flags(sub, o);
    sub->add_option("--at", o.at, "evaluation point: init, zero, unit or minimizer")
        ->check(CLI::IsMember({"init", "zero", "unit", "minimizer"}));
  }
  spectrum->add_option("--rank", o.rank, "number of eigenpairs")->check(CLI::PositiveNumber);

  add_optimizer_flags(stability, o, false);
  stability->add_option("--zeta", o.zeta, "stability margin in (0, 1)");
  stability->add_option("--probes", o.probes, "Monte Carlo draws for the constants")
      ->check(CLI::PositiveNumber);
  stability->add_option("--replicates", o.replicates, "perturbation replicates")
      ->check(CLI::PositiveNumber);
  stability->add_option("--multipliers", o.multipliers, "simulate at these multiples of the bound")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  stability->add_option("--dts", o.dts, "step lengths for a phase sweep (CSV)")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);

  verify->add_option("--lemma", o.lemma, "A1, A2 or A4")
      ->required()
      ->check(CLI::IsMember({"A1", "A2", "A4"}));
  verify->add_option("--probes", o.probes, "Monte Carlo draws per batch size")
      ->check(CLI::PositiveNumber);
  verify->add_option("--batches", o.batches, "batch sizes")->delimiter(',');
  verify->add_option("--slack", o.slack, "allowed ratio of error to bound")
      ->check(CLI::PositiveNumber);
  add_optimizer_flags(verify, o, false);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_flat_config(args);
    // CLI11 consumes arguments in reverse order.
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);

    if (run->parsed()) return cmd_run(run, o, out);
    if (sweep->parsed()) return cmd_sweep(sweep, o, out);
    if (spectrum->parsed()) return cmd_spectrum(spectrum, o, out);
    if (stability->parsed()) return cmd_stability(stability, o, out);
    return cmd_verify(verify, o, out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

int parse_and_dispatch(int argc, const char* const* argv) {
  return parse_and_dispatch(argc, argv, std::cout, std::cerr);
}

}  // namespace sfn
