#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "sfn/harness.hpp"
#include "sfn/parallel.hpp"

using namespace sfn;
namespace fs = std::filesystem;

namespace {

LabeledConfig labeled(Method m, double alpha, Index iters, Index rank = 10) {
  OptimizerConfig c;
  c.method = m;
  c.alpha = alpha;
  c.max_iters = iters;
  c.rank = rank;
  return {default_label(c), c};
}

ExperimentSpec rosenbrock_spec() {
  ExperimentSpec s;
  s.problem.name = "rosenbrock";
  s.problem.d = 6;
  s.n_seeds = 4;
  s.seed = 21;
  s.init = InitDistribution::gaussian(0.5);
  s.configs = {labeled(Method::gd, 1e-3, 40), labeled(Method::newton, 1.0, 20),
               labeled(Method::lrsfn, 1.0, 20, 3), labeled(Method::gd, 0.05, 40)};
  s.configs.back().label = "gd_big";
  return s;
}

std::string summary_text(const ExperimentResult& r) {
  std::ostringstream os;
  write_summary_csv(os, r.summary);
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Harness, ZeroIterationsBestIsInitialLoss) {
  ExperimentSpec s;
  s.problem.name = "rosenbrock";
  s.problem.d = 5;
  s.n_seeds = 1;
  s.seed = 3;
  for (Method m : {Method::gd, Method::csgd, Method::newton, Method::full_sfn, Method::lrsfn})
    s.configs.push_back(labeled(m, 1.0, 0, 2));
  const auto r = run_experiment(s);
  const Vector w0 = draw_initial_point(s.init, 5, 3);
  const double f0 = rosenbrock_value(w0);
  ASSERT_EQ(r.summary.size(), 5u);
  for (const auto& row : r.summary) {
    EXPECT_DOUBLE_EQ(row.mean_best, f0) << row.label;
    EXPECT_EQ(row.mean_work, 0.0);
    EXPECT_EQ(row.std_best, 0.0);
  }
}

TEST(Harness, SharedInitialPointPerSeed) {
  const auto r = run_experiment(rosenbrock_spec());
  const Index n_seeds = 4;
  for (const auto& run : r.runs) {
    const Vector w0 = draw_initial_point(InitDistribution::gaussian(0.5), 6,
                                         21 + static_cast<std::uint64_t>(run.seed_index));
    EXPECT_DOUBLE_EQ(run.result.trace.front().loss, rosenbrock_value(w0));
  }
  EXPECT_EQ(r.runs.size(), 4u * static_cast<std::size_t>(n_seeds));
}

TEST(Harness, SummaryIsByteIdenticalAcrossRepeatsAndThreads) {
  auto s = rosenbrock_spec();
  const std::string a = summary_text(run_experiment(s));
  const std::string b = summary_text(run_experiment(s));
  s.threads = 3;
  const std::string c = summary_text(run_experiment(s));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  s.seed = 22;
  EXPECT_NE(a, summary_text(run_experiment(s)));
}

TEST(Harness, StatisticsMatchRecomputationFromTraces) {
  auto s = rosenbrock_spec();
  s.configs.push_back(labeled(Method::gd, 4e-3, 200));  // diverges from these starts
  s.configs.back().label = "gd_unstable";
  const auto r = run_experiment(s);
  for (const auto& row : r.summary) {
    std::vector<double> best;
    Index diverged = 0;
    double work = 0.0;
    for (const auto& run : r.runs) {
      if (run.label != row.label) continue;
      bool div = false;
      double b = std::numeric_limits<double>::infinity();
      for (const auto& t : run.result.trace) {
        if (t.diverged) div = true;
        else b = std::min(b, t.loss);
      }
      if (div) {
        ++diverged;
        continue;
      }
      best.push_back(b);
      work += static_cast<double>(run.result.trace.back().work_units);
    }
    EXPECT_EQ(row.diverged, diverged) << row.label;
    EXPECT_EQ(row.runs, static_cast<Index>(best.size()));
    if (best.empty()) {
      EXPECT_TRUE(row.no_data);
      continue;
    }
    double mean = 0.0;
    for (double x : best) mean += x / static_cast<double>(best.size());
    double ss = 0.0;
    for (double x : best) ss += (x - mean) * (x - mean);
    const double sd = best.size() > 1 ? std::sqrt(ss / static_cast<double>(best.size() - 1)) : 0.0;
    EXPECT_NEAR(row.mean_best, mean, 1e-12 * (1.0 + std::abs(mean))) << row.label;
    EXPECT_NEAR(row.std_best, sd, 1e-12 * (1.0 + sd)) << row.label;
    EXPECT_DOUBLE_EQ(row.min_best, *std::min_element(best.begin(), best.end()));
    EXPECT_NEAR(row.mean_work, work / static_cast<double>(best.size()), 1e-9);
  }
  const auto& last = r.summary.back();
  EXPECT_EQ(last.label, "gd_unstable");
  EXPECT_GT(last.diverged, 0);
}

TEST(Harness, RosenbrockProtocol) {
  ExperimentSpec s;
  s.problem.name = "rosenbrock";
  s.problem.d = 10;
  s.n_seeds = 1;
  s.init = InitDistribution::fixed(Vector::Zero(10));
  s.configs = {labeled(Method::gd, 4e-3, 200), labeled(Method::gd, 1e-3, 100),
               labeled(Method::newton, 1.0, 100), labeled(Method::full_sfn, 1.0, 100)};
  s.configs[0].label = "gd_4e-3";
  s.configs[1].label = "gd_1e-3";
  const auto r = run_experiment(s);
  EXPECT_EQ(r.summary[0].diverged, 1);
  EXPECT_GT(r.runs[1].result.trace.back().loss, 1e-2);
  EXPECT_LT(r.summary[2].mean_best, 1e-8);
  EXPECT_LT(r.summary[3].mean_best, 1e-8);
}

TEST(Harness, Validation) {
  auto s = rosenbrock_spec();
  s.n_seeds = 0;
  EXPECT_THROW(run_experiment(s), std::invalid_argument);
  s = rosenbrock_spec();
  s.configs.clear();
  EXPECT_THROW(run_experiment(s), std::invalid_argument);
  s = rosenbrock_spec();
  s.configs[2].config.rank = 7;  // exceeds d
  EXPECT_THROW(run_experiment(s), std::invalid_argument);
  s = rosenbrock_spec();
  s.init = InitDistribution::fixed(Vector::Zero(3));
  EXPECT_THROW(run_experiment(s), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(WorkCompare, IdenticalRunsGiveIdenticalRows) {
  auto s = rosenbrock_spec();
  s.configs = {labeled(Method::gd, 1e-3, 30), labeled(Method::gd, 1e-3, 30)};
  s.configs[1].label = "gd_copy";
  const auto r = run_experiment(s);
  const auto rows = work_normalized_compare(r.runs, 15.0);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].mean_best, rows[1].mean_best);
  EXPECT_EQ(rows[0].std_best, rows[1].std_best);
  EXPECT_EQ(rows[0].mean_iters, 15.0);
}

TEST(WorkCompare, LrsfnAgainstSgdAtSharedBudget) {
  ExperimentSpec s;
  s.problem.name = "finite-sum";
  s.problem.d = 50;
  s.problem.n = 64;
  s.problem.noise = 0.3;
  s.n_seeds = 2;
  s.init = InitDistribution::gaussian(0.1);
  OptimizerConfig lr;
  lr.method = Method::lrsfn;
  lr.rank = 40;
  lr.grad_batch = 32;
  lr.hess_batch = 8;
  lr.alpha = 0.1;
  lr.gamma = 1.0;
  lr.max_iters = 5;
  OptimizerConfig sgd;
  sgd.method = Method::gd;
  sgd.grad_batch = 32;
  sgd.alpha = 0.01;
  sgd.max_iters = 200;
  s.configs = {{"lrsfn", lr}, {"sgd", sgd}};
  const auto r = run_experiment(s);
  const Index K = 3;
  const auto rows = work_normalized_compare(r.runs, 672.0 * K);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].mean_iters, static_cast<double>(K));
  EXPECT_EQ(rows[1].mean_iters, static_cast<double>(21 * K));
  EXPECT_EQ(rows[0].mean_work, 672.0 * K);
  EXPECT_EQ(rows[1].mean_work, 672.0 * K);
  EXPECT_FALSE(rows[0].no_data);
  EXPECT_FALSE(rows[1].no_data);
  EXPECT_TRUE(std::isfinite(rows[0].mean_best));
  EXPECT_TRUE(std::isfinite(rows[1].mean_best));

  const auto starved = work_normalized_compare(r.runs, 100.0);
  EXPECT_TRUE(starved[0].no_data);
  EXPECT_FALSE(starved[1].no_data);
  std::ostringstream os;
  write_compare_csv(os, starved);
  EXPECT_NE(os.str().find("lrsfn,nan,nan,nan,nan,nan,0,no data"), std::string::npos) << os.str();
}

// ---------------------------------------------------------------------------

TEST(Spectrum, QuadraticWithKnownSpectrum) {
  const Index d = 60;
  Vector lam(d);
  for (Index i = 0; i < d; ++i) lam(i) = (i % 2 ? -1.0 : 1.0) * std::pow(0.6, static_cast<double>(i));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N;
  Matrix G(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) G(i, j) = N(rng);
  const Matrix Q = Eigen::HouseholderQR<Matrix>(G).householderQ();
  Quadratic f(Q * lam.asDiagonal() * Q.transpose(), Vector::Zero(d));
  const auto eig = spectrum_snapshot(f, Vector::Zero(d), 8, 1);
  ASSERT_EQ(eig.rank(), 8);
  for (Index j = 0; j < 8; ++j) EXPECT_NEAR(eig.lambdas(j), lam(j), 1e-6) << j;
}

TEST(Spectrum, MichalewiczIsIndefiniteNearOrigin) {
  Michalewicz f(100);
  const Vector w0 = draw_initial_point(InitDistribution{}, 100, 0);
  const auto eig = spectrum_snapshot(f, w0, 20, 3);
  EXPECT_LT(eig.lambdas.minCoeff(), 0.0);
  EXPECT_GT(eig.lambdas.maxCoeff(), 0.0);
}

TEST(Spectrum, ZeroFunction) {
  FunctionObjective f("zero", 12, [](const Vector&) { return 0.0; },
                      [](const Vector& w) { return Vector::Zero(w.size()); });
  const auto eig = spectrum_snapshot(f, Vector::Ones(12), 5, 2);
  for (Index j = 0; j < eig.rank(); ++j) EXPECT_LE(std::abs(eig.lambdas(j)), 1e-10);
}

// ---------------------------------------------------------------------------

TEST(HarnessIo, SpecJsonRoundTrip) {
  auto s = rosenbrock_spec();
  s.record_spectrum_at = {0, 5};
  s.out_dir = "somewhere";
  const nlohmann::json j = s;
  const auto back = j.get<ExperimentSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
  ASSERT_EQ(back.configs.size(), s.configs.size());
  EXPECT_EQ(back.configs[3].label, "gd_big");
  EXPECT_EQ(back.configs[2].config, s.configs[2].config);

  auto bad = j;
  bad["n_seed"] = 3;
  EXPECT_THROW(bad.get<ExperimentSpec>(), std::invalid_argument);
}

TEST(HarnessIo, OutputsWritten) {
  const fs::path dir = fs::temp_directory_path() / ("sfn_harness_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  auto s = rosenbrock_spec();
  s.n_seeds = 2;
  s.configs.resize(2);
  s.record_spectrum_at = {0, 3};
  s.spectrum_rank = 3;
  s.out_dir = dir.string();
  const auto r = run_experiment(s);
  EXPECT_EQ(slurp(dir / "summary.csv"), summary_text(r));
  EXPECT_TRUE(fs::exists(dir / "spec.json"));
  EXPECT_TRUE(fs::exists(dir / "traces" / "gd_seed1.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "traces" / "newton_seed0.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "spectra" / "newton_seed0_k3.json"));
  const auto spec_back = nlohmann::json::parse(slurp(dir / "spec.json")).get<ExperimentSpec>();
  EXPECT_EQ(nlohmann::json(spec_back), nlohmann::json(s));

  std::ifstream tr(dir / "traces" / "gd_seed0.jsonl");
  std::string line;
  Index lines = 0;
  while (std::getline(tr, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("k").get<Index>(), lines);
    ++lines;
  }
  EXPECT_EQ(lines, 41);
  for (const auto& e : fs::directory_iterator(dir))
    EXPECT_EQ(e.path().filename().string().find(".tmp"), std::string::npos);
  fs::remove_all(dir);
}
