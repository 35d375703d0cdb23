#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "sfn/optim.hpp"

using namespace sfn;

namespace {

Vector randn(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = nd(rng);
  return v;
}

Matrix random_symmetric(Index d, std::mt19937_64& rng) {
  Matrix G(d, d);
  for (Index j = 0; j < d; ++j) G.col(j) = randn(d, rng);
  return 0.5 * (G + G.transpose());
}

LowRankEig random_eig(Index d, Index r, std::mt19937_64& rng) {
  Matrix G(d, r);
  for (Index j = 0; j < r; ++j) G.col(j) = randn(d, rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  LowRankEig e;
  e.U = qr.householderQ() * Matrix::Identity(d, r);
  e.lambdas = randn(r, rng) * 10;
  return e;
}

double smw_residual(const LowRankEig& e, const Vector& g, double gamma) {
  const Vector p = direction_lrsfn(e, g, gamma);
  const Vector lhs = e.U * (e.lambdas.cwiseAbs().asDiagonal() * (e.U.transpose() * p)) + gamma * p;
  return (lhs + g).norm() / g.norm();
}

}  // namespace

TEST(Directions, GradientDescent) {
  EXPECT_EQ(direction_gd(Vector::Zero(3)), Vector::Zero(3));
  Vector g(2);
  g << 1, 2;
  EXPECT_EQ(direction_gd(g), -g);
  EXPECT_LT(direction_gd(g).dot(g), 0.0);
}

TEST(Directions, CurvatureScaled) {
  Vector g(2);
  g << 2, 0;
  const auto s = direction_csgd(g, 4.0);
  EXPECT_EQ(s.alpha * s.direction, Vector(Vector::Unit(2, 0) * -0.5));
  EXPECT_THROW(direction_csgd(g, 1e-13), NumericalError);
  EXPECT_THROW(direction_csgd(g, 0.0), NumericalError);

  // 1-d quadratic 1/2 lambda w^2: one step lands on 0.
  Matrix A(1, 1);
  A << 3.0;
  Quadratic q(A, Vector::Zero(1));
  OptimizerConfig cfg;
  cfg.method = Method::csgd;
  cfg.max_iters = 1;
  const auto res = run(q, cfg, Vector::Constant(1, 5.0));
  EXPECT_NEAR(res.final_w(0), 0.0, 1e-15);
}

TEST(Directions, NewtonSolvesQuadraticInOneStep) {
  std::mt19937_64 rng(1);
  Matrix A = random_symmetric(6, rng);
  A += 8 * Matrix::Identity(6, 6);
  const Vector b = randn(6, rng);
  Quadratic q(A, b);
  OptimizerConfig cfg;
  cfg.method = Method::newton;
  cfg.max_iters = 1;
  const auto res = run(q, cfg, randn(6, rng));
  EXPECT_LE((res.final_w - A.ldlt().solve(b)).norm(), 1e-10);
}

TEST(Directions, NewtonSingularAndAscent) {
  Matrix H = Matrix::Zero(2, 2);
  H(0, 0) = 1.0;
  EXPECT_THROW(direction_newton(H, Vector::Ones(2)), NumericalError);
  H(1, 1) = 1e-13;
  EXPECT_THROW(direction_newton(H, Vector::Ones(2)), NumericalError);
  EXPECT_NO_THROW(direction_newton(H, Vector::Ones(2), 0.0));

  Matrix Hi(2, 2);
  Hi << 2, 0, 0, -1;
  const Vector g = Vector::Unit(2, 1);
  EXPECT_GT(direction_newton(Hi, g).dot(g), 0.0);
}

TEST(AbsHessian, MatchesSquareRootOfSquare) {
  Matrix D(2, 2);
  D << 3, 0, 0, -2;
  Matrix expect(2, 2);
  expect << 3, 0, 0, 2;
  EXPECT_LE((abs_hessian(D) - expect).norm(), 1e-14);

  std::mt19937_64 rng(2);
  Matrix P = random_symmetric(5, rng);
  P = P * P.transpose();
  EXPECT_LE((abs_hessian(P) - P).norm(), 1e-10 * P.norm());

  const Matrix H = random_symmetric(20, rng);
  // sqrt(H^2) from an independent decomposition of the PSD matrix H^2.
  Eigen::SelfAdjointEigenSolver<Matrix> es(H * H);
  const Matrix root = es.operatorSqrt();
  EXPECT_LE((abs_hessian(H) - root).norm(), 1e-10 * root.norm());

  LowRankEig e;
  e.U = Matrix::Identity(3, 2);
  e.lambdas = Vector(2);
  e.lambdas << -4, 1;
  EXPECT_EQ(abs_hessian(e).lambdas, Vector(Vector::LinSpaced(2, 4, 1)));
}

TEST(Directions, FullSfn) {
  Matrix H(2, 2);
  H << 2, 0, 0, -2;
  const Vector p = direction_full_sfn(H, Vector::Ones(2), 0.0);
  EXPECT_NEAR(p(0), -0.5, 1e-15);
  EXPECT_NEAR(p(1), -0.5, 1e-15);

  std::mt19937_64 rng(3);
  Matrix P = random_symmetric(5, rng);
  P = P * P.transpose() + Matrix::Identity(5, 5);
  const Vector g = randn(5, rng);
  const Vector newton = direction_newton(P, g);
  EXPECT_LE((direction_full_sfn(P, g, 1e-12) - newton).norm(), 1e-9 * newton.norm());
}

TEST(Directions, LrsfnSmallCases) {
  const Vector g = Vector::LinSpaced(4, 1, 4);
  EXPECT_EQ(direction_lrsfn(LowRankEig::empty(4), g, 0.5), Vector(-g / 0.5));

  LowRankEig e;
  e.U = Vector::Unit(3, 0);
  e.lambdas = Vector::Constant(1, 2.0);
  Vector g3(3);
  g3 << 3, 1, 0;
  const Vector p = direction_lrsfn(e, g3, 1.0);
  // Dense solve of diag(3, 1, 1) p = -g.
  Vector diag(3);
  diag << 3, 1, 1;
  const Vector dense = -g3.cwiseQuotient(diag);
  EXPECT_LE((p - dense).norm(), 1e-12);
  EXPECT_LE(smw_residual(e, g3, 1.0), 1e-12);

  EXPECT_THROW(direction_lrsfn(e, g3, 0.0), std::invalid_argument);
}

TEST(Directions, LrsfnMatchesDenseSolve) {
  std::mt19937_64 rng(4);
  const auto e = random_eig(200, 20, rng);
  const Vector g = randn(200, rng);
  const double gamma = 1e-3;
  const Matrix M = e.U * e.lambdas.cwiseAbs().asDiagonal() * e.U.transpose() +
                   gamma * Matrix::Identity(200, 200);
  const Vector dense = M.ldlt().solve(-g);
  EXPECT_LE((direction_lrsfn(e, g, gamma) - dense).norm(), 1e-8 * dense.norm());
}

TEST(Directions, LrsfnNearZeroModeIsDropped) {
  LowRankEig e;
  e.U = Matrix::Identity(3, 2);
  e.lambdas = Vector(2);
  e.lambdas << 5.0, 1e-20;
  const Vector g = Vector::Ones(3);
  const Vector p = direction_lrsfn(e, g, 0.1);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p(1), -10.0, 1e-12);
}

TEST(Properties, SmwExactnessGrid) {
  std::mt19937_64 rng(5);
  for (Index d : {10, 200, 2000})
    for (Index r : {1, 5, 40}) {
      if (r > d) continue;
      const auto e = random_eig(d, r, rng);
      for (double gamma : {1e-4, 1e-1, 1.0})
        EXPECT_LE(smw_residual(e, randn(d, rng), gamma), 1e-8) << d << " " << r << " " << gamma;
    }
}

TEST(Properties, LrsfnDescentAndLimits) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const Index d = 5 + t % 20;
    const auto e = random_eig(d, 1 + t % 5, rng);
    const Vector g = randn(d, rng);
    EXPECT_LT(direction_lrsfn(e, g, 1e-3 + 0.01 * t).dot(g), 0.0);
  }
  // r = d with the dense eig equals full SFN.
  const Matrix H = random_symmetric(12, rng);
  const Vector g = randn(12, rng);
  const Vector full = direction_full_sfn(H, g, 0.3);
  const Vector low = direction_lrsfn(dense_top_eig(H, 12), g, 0.3);
  EXPECT_LE((full - low).norm(), 1e-8 * full.norm());
}

TEST(Properties, ZeroGradientIsFixedPoint) {
  Rosenbrock f(4);
  const Vector w = Vector::Ones(4);
  for (Method m : {Method::gd, Method::csgd, Method::newton, Method::full_sfn, Method::lrsfn}) {
    OptimizerConfig cfg;
    cfg.method = m;
    cfg.rank = 2;
    cfg.max_iters = 3;
    const auto res = run(f, cfg, w);
    EXPECT_EQ(res.final_w, w) << to_string(m);
  }
}

TEST(Step, GdContractsAndDivergesOnQuadratic) {
  Vector spec(3);
  spec << 4, 1, 0.5;
  QuadraticFiniteSum q(spec, 1, 0.0, 0.0, 3);
  const Vector ws = q.minimizer();
  OptimizerConfig cfg;
  cfg.alpha = 0.4;  // below 2/4
  cfg.max_iters = 50;
  double prev = 1e300;
  run(q, cfg, Vector::Ones(3), [&](const OptimizerState& s, const TraceRecord&) {
    const double e = (s.w - ws).norm();
    EXPECT_LT(e, prev);
    prev = e;
  });
  cfg.alpha = 0.6;  // above 2/4
  cfg.max_iters = 200;
  const auto res = run(q, cfg, Vector::Ones(3));
  EXPECT_EQ(res.status, RunStatus::diverged);
  EXPECT_TRUE(res.trace.back().diverged);
}

TEST(Step, WorkAccounting) {
  FiniteSumSurrogate f(50, 64, 0.3, 1);
  OptimizerConfig cfg;
  cfg.method = Method::lrsfn;
  cfg.rank = 40;
  cfg.grad_batch = 32;
  cfg.hess_batch = 8;
  cfg.max_iters = 3;
  const auto res = run(f, cfg, Vector::Constant(50, 0.1));
  for (std::size_t k = 1; k < res.trace.size(); ++k) {
    EXPECT_EQ(res.trace[k].work_units - res.trace[k - 1].work_units, 672);
    EXPECT_EQ(res.trace[k].grad_batch.size(), 32u);
    EXPECT_EQ(res.trace[k].hess_batch.size(), 8u);
  }

  cfg.method = Method::gd;
  cfg.alpha = 0.01;
  cfg.max_iters = 17;
  const auto gd = run(f, cfg, Vector::Zero(50));
  EXPECT_EQ(gd.trace.back().work_units, 17 * 32);

  Rosenbrock r(10);
  OptimizerConfig nc;
  nc.method = Method::newton;
  EXPECT_EQ(work_per_iteration(nc, r), 1 + 10);
}

TEST(Run, ZeroIterationsAndDeterminism) {
  FiniteSumSurrogate f(8, 20, 0.5, 3);
  OptimizerConfig cfg;
  cfg.method = Method::lrsfn;
  cfg.rank = 3;
  cfg.grad_batch = 10;
  cfg.hess_batch = 4;
  cfg.alpha = 0.5;
  cfg.max_iters = 0;
  const Vector w0 = Vector::Constant(8, 0.2);
  const auto none = run(f, cfg, w0);
  ASSERT_EQ(none.trace.size(), 1u);
  EXPECT_EQ(none.trace[0].loss, f.value(w0));

  cfg.max_iters = 15;
  const auto a = run(f, cfg, w0);
  const auto b = run(f, cfg, w0);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    EXPECT_EQ(a.trace[k].loss, b.trace[k].loss);
    EXPECT_EQ(a.trace[k].grad_batch, b.trace[k].grad_batch);
    EXPECT_EQ(a.trace[k].hess_batch, b.trace[k].hess_batch);
  }
  EXPECT_EQ(a.final_w, b.final_w);
  // S_k is drawn inside X_k.
  for (const auto& rec : a.trace)
    for (Index i : rec.hess_batch)
      EXPECT_NE(std::find(rec.grad_batch.begin(), rec.grad_batch.end(), i), rec.grad_batch.end());
}

TEST(Run, BestIterateIsTracked) {
  Rosenbrock f(10);
  OptimizerConfig cfg;
  cfg.method = Method::full_sfn;
  cfg.max_iters = 25;
  const auto res = run(f, cfg, Vector::Zero(10));
  double best = 1e300;
  for (const auto& r : res.trace) best = std::min(best, r.loss);
  EXPECT_EQ(res.best_loss, best);
  EXPECT_EQ(f.value(res.best_w), best);
  double peak = 0;
  for (const auto& r : res.trace) peak = std::max(peak, r.loss);
  EXPECT_GT(peak, res.trace[0].loss);
  EXPECT_LT(res.trace.back().loss, 1e-8);
}

TEST(Run, RosenbrockNewtonConverges) {
  Rosenbrock f(10);
  OptimizerConfig cfg;
  cfg.method = Method::newton;
  cfg.max_iters = 25;
  const auto res = run(f, cfg, Vector::Zero(10));
  EXPECT_EQ(res.status, RunStatus::completed);
  EXPECT_LT(res.trace.back().loss, 1e-8);
}

TEST(Run, SingularNewtonFailsWithPartialTrace) {
  Matrix A = Matrix::Zero(2, 2);
  A(0, 0) = 1;
  Quadratic q(A, Vector::Ones(2));
  OptimizerConfig cfg;
  cfg.method = Method::newton;
  cfg.max_iters = 5;
  const auto res = run(q, cfg, Vector::Zero(2));
  EXPECT_EQ(res.status, RunStatus::failed);
  EXPECT_EQ(res.message, "Hessian singular");
  EXPECT_EQ(res.trace.size(), 1u);
}

TEST(Config, ValidationAndJson) {
  Rosenbrock f(5);
  OptimizerConfig cfg;
  cfg.alpha = -1;
  EXPECT_THROW(validate(cfg, f), std::invalid_argument);
  cfg = {};
  cfg.method = Method::lrsfn;
  cfg.rank = 6;
  EXPECT_THROW(validate(cfg, f), std::invalid_argument);
  cfg.rank = 2;
  cfg.gamma = 0;
  EXPECT_THROW(validate(cfg, f), std::invalid_argument);

  FiniteSumSurrogate fs(3, 10, 0.1, 0);
  OptimizerConfig b;
  b.grad_batch = 4;
  b.hess_batch = 5;
  EXPECT_NO_THROW(validate(b, fs));  // gd never draws a Hessian batch
  b.method = Method::newton;
  EXPECT_THROW(validate(b, fs), std::invalid_argument);
  b.grad_batch = 11;
  EXPECT_THROW(validate(b, fs), std::invalid_argument);

  OptimizerConfig c;
  c.method = Method::lrsfn;
  c.alpha = 0.25;
  c.gamma = 0.01;
  c.rank = 7;
  c.grad_batch = 32;
  c.seed = 99;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<OptimizerConfig>(), c);
  j["bogus"] = 1;
  EXPECT_THROW(j.get<OptimizerConfig>(), std::invalid_argument);
  EXPECT_THROW(method_from_string("adam"), std::invalid_argument);
}

TEST(Trace, JsonLines) {
  Rosenbrock f(3);
  OptimizerConfig cfg;
  cfg.alpha = 1e-3;
  cfg.max_iters = 2;
  const auto res = run(f, cfg, Vector::Zero(3));
  std::ostringstream os;
  write_trace_jsonl(os, res.trace);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["k"], n);
    for (const char* key : {"loss", "grad_norm", "step_norm", "work_units", "wall_ns", "diverged"})
      EXPECT_TRUE(j.contains(key)) << key;
    ++n;
  }
  EXPECT_EQ(n, 3);
}
