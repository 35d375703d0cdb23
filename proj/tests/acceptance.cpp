// End-to-end acceptance checks. One PASS/FAIL line per criterion; exit code
// is the number of failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sfn/harness.hpp"
#include "sfn/optim.hpp"
#include "sfn/randeig.hpp"
#include "sfn/stability.hpp"

using namespace sfn;

namespace {

struct Verdict {
  bool ok;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

Vector randn(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> N;
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = N(rng);
  return v;
}

Matrix random_orthonormal(Index d, Index r, std::mt19937_64& rng) {
  Matrix G(d, r);
  for (Index j = 0; j < r; ++j) G.col(j) = randn(d, rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  return qr.householderQ() * Matrix::Identity(d, r);
}

Vector geometric_spectrum(Index d, double cond) {
  Vector s(d);
  for (Index j = 0; j < d; ++j)
    s(j) = std::pow(cond, -static_cast<double>(j) / static_cast<double>(d - 1));
  return s;
}

OptimizerConfig config(Method m, double alpha, Index iters, Index rank = 10, double gamma = 1e-3) {
  OptimizerConfig c;
  c.method = m;
  c.alpha = alpha;
  c.max_iters = iters;
  c.rank = rank;
  c.gamma = gamma;
  return c;
}

// 1. Sherman-Morrison-Woodbury solve is exact.
Verdict smw_exactness() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<Index> dd(2, 2000);
  std::uniform_real_distribution<double> lg(-6.0, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 300; ++t) {
    const Index d = t < 5 ? 2000 : dd(rng);
    const Index r = std::uniform_int_distribution<Index>(1, std::min<Index>(d, 50))(rng);
    const double gamma = std::pow(10.0, lg(rng));
    LowRankEig e;
    e.U = random_orthonormal(d, r, rng);
    e.lambdas = randn(r, rng) * 10.0;
    const Vector g = randn(d, rng);
    const Vector p = direction_lrsfn(e, g, gamma);
    const Vector lhs =
        e.U * (e.lambdas.cwiseAbs().asDiagonal() * (e.U.transpose() * p)) + gamma * p;
    worst = std::max(worst, (lhs + g).norm() / g.norm());
  }
  return {worst <= 1e-8, fmt("worst relative residual %.2e over 300 instances", worst)};
}

// 2. Randomized eigendecomposition error is controlled by the trailing eigenvalue.
Verdict randeig_quality() {
  const Index d = 500, r = 20;
  std::vector<double> ratios;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(100 + s);
    Vector spec(d);
    const double decay = 0.80 + 0.01 * static_cast<double>(s % 10);
    for (Index j = 0; j < d; ++j) spec(j) = std::pow(decay, static_cast<double>(j));
    for (Index j = 1; j < d; j += 2 + static_cast<Index>(s % 3)) spec(j) = -spec(j);
    const Matrix Q = random_orthonormal(d, d, rng);
    Matrix H = Q * spec.asDiagonal() * Q.transpose();
    H = 0.5 * (H + H.transpose());
    const auto e = randomized_eig(dense_operator(H), d, {r, 10, 0, s});
    const Matrix R = H - e.U * e.lambdas.asDiagonal() * e.U.transpose();
    const double err = Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (R + R.transpose()),
                                                              Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .cwiseAbs()
                           .maxCoeff();
    ratios.push_back(err / std::abs(spec(r)));
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = 0.5 * (ratios[9] + ratios[10]);
  return {median <= 10.0, fmt("median ||H - U L U^T|| / |lambda_{r+1}| = %.3f (max %.3f)", median,
                              ratios.back())};
}

// 3. Rosenbrock from the origin.
Verdict rosenbrock_protocol() {
  Rosenbrock f(10);
  const Vector w0 = Vector::Zero(10);
  const double F0 = f.value(w0);

  auto first_below = [](const RunResult& r, double tol) -> Index {
    for (const auto& t : r.trace)
      if (t.loss < tol) return t.k;
    return -1;
  };
  const auto newton = run(f, config(Method::newton, 1.0, 25), w0);
  const auto sfn = run(f, config(Method::full_sfn, 1.0, 25), w0);
  double sfn_peak = F0;
  for (const auto& t : sfn.trace) sfn_peak = std::max(sfn_peak, t.loss);
  const auto gd_big = run(f, config(Method::gd, 4e-3, 200), w0);
  const auto gd_small = run(f, config(Method::gd, 1e-3, 100), w0);
  const auto csgd = run(f, config(Method::csgd, 1.0, 100), w0);

  const Index kn = first_below(newton, 1e-8), ks = first_below(sfn, 1e-8);
  const bool ok = kn >= 0 && ks >= 0 && sfn_peak > F0 && gd_big.status == RunStatus::diverged &&
                  gd_small.trace.back().loss > 1e-2 && csgd.trace.back().loss > 1e-2;
  return {ok, fmt("newton < 1e-8 at k=%ld, full_sfn at k=%ld (peak %.3g > F0 %.3g); gd 4e-3 %s; "
                  "gd 1e-3 final %.3g; csgd final %.3g",
                  static_cast<long>(kn), static_cast<long>(ks), sfn_peak, F0,
                  to_string(gd_big.status).c_str(), gd_small.trace.back().loss,
                  csgd.trace.back().loss)};
}

// 4. Michalewicz benchmark ordering.
Verdict michalewicz_ordering() {
  ExperimentSpec s;
  s.problem.name = "michalewicz";
  s.problem.d = 100;
  s.n_seeds = 10;
  s.seed = 0;
  s.init = InitDistribution::gaussian(1.0);
  auto add = [&](Method m, Index r, const std::string& label) {
    auto c = config(m, 1.0, 100, r, 5e-5);
    c.newton_singular_rtol = 0.0;
    s.configs.push_back({label, c});
  };
  add(Method::gd, 10, "gd");
  add(Method::csgd, 10, "csgd");
  add(Method::newton, 10, "newton");
  add(Method::full_sfn, 10, "full_sfn");
  for (Index r : {80, 50, 60}) add(Method::lrsfn, r, "lrsfn" + std::to_string(r));
  const auto res = run_experiment(s);
  auto mean = [&](const std::string& l) -> double {
    for (const auto& row : res.summary)
      if (row.label == l) return row.mean_best;
    return NAN;
  };
  const double full = mean("full_sfn"), csgd = mean("csgd"), gd = mean("gd"),
               newton = mean("newton");
  const std::vector<std::pair<std::string, double>> target = {
      {"lrsfn80", mean("lrsfn80")}, {"lrsfn50", mean("lrsfn50")}, {"lrsfn60", mean("lrsfn60")}};
  int inversions = 0;
  for (std::size_t i = 0; i < target.size(); ++i)
    for (std::size_t j = i + 1; j < target.size(); ++j)
      if (target[i].second > target[j].second) ++inversions;
  double lr_min = INFINITY, lr_max = -INFINITY;
  for (const auto& [_, v] : target) {
    lr_min = std::min(lr_min, v);
    lr_max = std::max(lr_max, v);
  }
  const bool ok = inversions <= 1 && full < lr_min && lr_max < csgd && csgd < gd && gd < newton &&
                  full <= -15.0 && newton >= -5.0;
  return {ok, fmt("full_sfn %.2f, lrsfn80 %.2f, lrsfn50 %.2f, lrsfn60 %.2f, csgd %.2f, gd %.2f, "
                  "newton %.2f; lrsfn inversions %d",
                  full, target[0].second, target[1].second, target[2].second, csgd, gd, newton,
                  inversions)};
}

// 5. LRSFN on Rosenbrock stalls for every damping.
Verdict lrsfn_heavy_tail() {
  Rosenbrock f(10);
  const Vector w0 = Vector::Zero(10);
  double best = INFINITY;
  std::ostringstream os;
  for (double gamma : {1e-3, 1e-1, 1.0, 10.0}) {
    const auto r = run(f, config(Method::lrsfn, 1.0, 100, 9, gamma), w0);
    const double final_loss = r.trace.back().loss;
    best = std::min(best, final_loss);
    os << fmt("gamma %g: %.3g (%s); ", gamma, final_loss, to_string(r.status).c_str());
  }
  const auto newton = run(f, config(Method::newton, 1.0, 100), w0);
  const double nf = newton.trace.back().loss;
  return {best >= 1e-2 && nf < 1e-8,
          os.str() + fmt("best lrsfn %.3g vs newton %.3g", best, nf)};
}

// 6. Variance lemmas on the finite-sum surrogate.
Verdict lemma_checks() {
  FiniteSumSurrogate f10(10, 50, 0.5, 7);
  const Vector w10 = Vector::Ones(10) / std::sqrt(10.0);
  FiniteSumSurrogate f5(5, 40, 0.5, 7);
  const Vector w5 = Vector::Ones(5) / std::sqrt(5.0);
  const auto a1 = check_lemma_a1(f10, w10, {2, 8, 32}, 200, 1);
  const auto a2 = check_lemma_a2(f10, w10, {2, 5, 10, 25}, 200, 1);
  OptimizerConfig nc;
  nc.method = Method::newton;
  const auto a4n = check_lemma_a4(f5, w5, nc, {2, 5, 10, 20}, 200, 1);
  OptimizerConfig lc = config(Method::lrsfn, 1.0, 1, 3, 0.1);
  const auto a4l = check_lemma_a4(f5, w5, lc, {2, 5, 10, 20}, 200, 1);

  auto worst = [](const LemmaCheck& c) {
    double m = 0.0;
    for (const auto& b : c.checks) m = std::max(m, b.ratio);
    return m;
  };
  const bool ok = a1.passed && a2.passed && a4n.passed && a4l.passed;
  return {ok, fmt("worst error/bound: A1 %.3f, A2 %.3f, A4 newton %.3f, A4 lrsfn %.3f (slack 1.05)",
                  worst(a1), worst(a2), worst(a4n), worst(a4l))};
}

// 7. Perturbation growth below and far above the step-length bound.
Verdict stability_phase() {
  QuadraticFiniteSum f(geometric_spectrum(10, 10.0), 50, 1.0, 4.0, 3);
  const Vector ws = f.minimizer();
  std::ostringstream os;
  bool ok = true;
  for (Method m : {Method::gd, Method::lrsfn}) {
    OptimizerConfig cfg = config(m, 1.0, 200, 5, 0.1);
    cfg.grad_batch = cfg.hess_batch = 1;
    const auto rep = stability_report(f, ws, cfg, 0.5, 100, 11);
    cfg.alpha = 0.1 * rep.dt_bound;
    const auto lo = simulate_perturbation(f, cfg, ws, 50, 5);
    cfg.alpha = 50.0 * rep.dt_bound;
    const auto hi = simulate_perturbation(f, cfg, ws, 50, 5);
    const bool pass = lo.stable && hi.exceed_fraction >= 0.8;
    ok = ok && pass;
    os << fmt("%s bound %.3g: 0.1x max mean %.3g, 50x exceed %.0f%%; ", to_string(m).c_str(),
              rep.dt_bound, lo.max_mean_norm, 100.0 * hi.exceed_fraction);
  }
  return {ok, os.str()};
}

// 8. Newton C0 follows ||H^-1||; LRSFN C0 is pinned by the damping.
Verdict c0_contrast() {
  const double gamma = 0.1;
  std::vector<double> x, y;
  double worst_lr = 0.0;
  for (double cond : {10.0, 1e2, 1e3, 1e4}) {
    QuadraticFiniteSum f(geometric_spectrum(10, cond), 50, 0.5, 0.5, 3);
    OptimizerConfig cfg;
    cfg.method = Method::newton;
    cfg.grad_batch = cfg.hess_batch = 4;
    const auto kn = estimate_newton_constants(f, Vector::Zero(10), cfg, 100, 1);
    cfg = config(Method::lrsfn, 1.0, 1, 5, gamma);
    cfg.grad_batch = cfg.hess_batch = 4;
    const auto kl = estimate_newton_constants(f, Vector::Zero(10), cfg, 100, 1);
    x.push_back(kn.inverse_norm);
    y.push_back(kn.C0);
    worst_lr = std::max(worst_lr, std::abs(kl.C0 / (kl.v / gamma) - 1.0));
  }
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 0.0;
  return {r2 >= 0.99 && worst_lr <= 0.05,
          fmt("newton C0 vs ||H^-1|| R^2 = %.6f; lrsfn C0 max deviation from v/gamma %.2f%%", r2,
              100.0 * worst_lr)};
}

// 9. LRSFN work per iteration.
Verdict work_accounting() {
  FiniteSumSurrogate f(50, 64, 0.3, 1);
  OptimizerConfig cfg = config(Method::lrsfn, 0.1, 3, 40, 1.0);
  cfg.grad_batch = 32;
  cfg.hess_batch = 8;
  const auto res = run(f, cfg, Vector::Constant(50, 0.1));
  bool ok = res.trace.size() == 4;
  Index last = 0;
  for (std::size_t k = 1; k < res.trace.size(); ++k) {
    last = res.trace[k].work_units - res.trace[k - 1].work_units;
    ok = ok && last == 672;
  }
  return {ok && work_per_iteration(cfg, f) == 672,
          fmt("%ld work units per iteration", static_cast<long>(last))};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    double limit_s;
    std::function<Verdict()> fn;
  };
  const std::vector<Criterion> all = {
      {1, 60, smw_exactness},       {2, 60, randeig_quality},   {3, 10, rosenbrock_protocol},
      {4, 300, michalewicz_ordering}, {5, 30, lrsfn_heavy_tail}, {6, 120, lemma_checks},
      {7, 180, stability_phase},    {8, 60, c0_contrast},       {9, 1, work_accounting},
  };
  int failures = 0;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = v.ok && in_time;
    failures += !pass;
    std::printf("criterion %d: %s  %s [%.2f s, limit %.0f s%s]\n", c.id, pass ? "PASS" : "FAIL",
                v.detail.c_str(), secs, c.limit_s, in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  return failures;
}
