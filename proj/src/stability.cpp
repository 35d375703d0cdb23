#include "sfn/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "sfn/io.hpp"
#include "sfn/parallel.hpp"
#include "sfn/randeig.hpp"

namespace sfn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

Index resolve_batch(Index requested, Index n) { return requested == 0 ? n : requested; }

double sym_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

void require_sampling(const Objective& f) {
  if (f.num_samples() < 2) throw std::invalid_argument("no sampling dimension");
}

void require_small(const Objective& f, const char* what) {
  if (f.dim() > kMaxStabilityDim)
    throw std::invalid_argument(std::string(what) + ": dimension exceeds " +
                                std::to_string(kMaxStabilityDim));
}

void require_batches(const std::vector<Index>& batches, Index n) {
  for (Index b : batches)
    if (b < 1 || b > n)
      throw std::invalid_argument("batch size " + std::to_string(b) + " outside [1, " +
                                  std::to_string(n) + "]");
}

// Samples entering per-sample statistics: all of them when affordable.
std::vector<Index> statistic_samples(Index n, Index n_probes, std::uint64_t seed) {
  std::vector<Index> idx;
  if (n <= kExhaustiveSampleLimit) {
    idx.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
  }
  if (n_probes < 1) throw std::invalid_argument("n_probes must be positive");
  auto rng = stream(seed, 0x5a5a);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (Index k = 0; k < n_probes; ++k) idx.push_back(pick(rng));
  return idx;
}

BoundCheck make_check(Index nx, Index ns, double mean_error, double bound, double scale) {
  BoundCheck c;
  c.grad_batch = nx;
  c.hess_batch = ns;
  c.mean_error = mean_error;
  c.bound = bound;
  if (bound > 0.0) c.ratio = mean_error / bound;
  else c.ratio = mean_error <= 1e-12 * scale ? 0.0 : kInf;
  c.passed = c.ratio <= 1.0;
  return c;
}

bool check_method(Method m) {
  return m == Method::gd || m == Method::newton || m == Method::lrsfn;
}

Matrix lowrank_abs(const Matrix& H, Index r) {
  const LowRankEig e = dense_top_eig(H, r);
  return e.U * e.lambdas.cwiseAbs().asDiagonal() * e.U.transpose();
}

// ||M^{-1}||, or +inf when M is numerically singular.
double inverse_norm(const Matrix& M) {
  Eigen::JacobiSVD<Matrix> svd(M);
  const auto& s = svd.singularValues();
  const double smax = s(0), smin = s(s.size() - 1);
  if (!(smin > 1e-12 * smax)) return kInf;
  return 1.0 / smin;
}

nlohmann::json jnum(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

void draw_batches(Index n, Index nx, Index ns, std::mt19937_64& rng, SampleSet& X, SampleSet& S) {
  X = SampleSet();
  S = SampleSet();
  if (nx < n) {
    X = draw_without_replacement(n, nx, rng);
    const auto idx = X.indices();
    S = ns < nx ? SampleSet(std::vector<Index>(idx.begin(), idx.begin() + ns)) : X;
  } else if (ns < n) {
    S = draw_without_replacement(n, ns, rng);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

GradVarianceEstimate estimate_grad_variance(const Objective& f, const Vector& w,
                                            const std::vector<Index>& batch_sizes,
                                            Index n_probes, std::uint64_t seed) {
  require_sampling(f);
  const Index n = f.num_samples();
  require_batches(batch_sizes, n);
  if (!batch_sizes.empty() && n_probes < 1) throw std::invalid_argument("n_probes must be positive");

  const Vector g = f.gradient(w);
  const auto idx = statistic_samples(n, n_probes, seed);
  double tr = 0.0;
  for (Index i : idx) tr += (f.gradient(w, SampleSet::single(i)) - g).squaredNorm();
  GradVarianceEstimate out;
  out.v = std::sqrt(tr / static_cast<double>(idx.size()));

  for (Index N : batch_sizes) {
    auto rng = stream(seed, static_cast<std::uint64_t>(N));
    double sum = 0.0;
    for (Index p = 0; p < n_probes; ++p)
      sum += (f.gradient(w, draw_without_replacement(n, N, rng)) - g).norm();
    out.checks.push_back(make_check(N, 0, sum / static_cast<double>(n_probes),
                                    out.v / std::sqrt(static_cast<double>(N)), 1.0 + g.norm()));
  }
  return out;
}

HessVarianceEstimate estimate_hess_variance(const Objective& f, const Vector& w,
                                            const std::vector<Index>& batch_sizes,
                                            Index n_probes, std::uint64_t seed) {
  require_sampling(f);
  require_small(f, "estimate_hess_variance");
  const Index n = f.num_samples();
  const Index d = f.dim();
  require_batches(batch_sizes, n);
  if (!batch_sizes.empty() && n_probes < 1) throw std::invalid_argument("n_probes must be positive");

  const Matrix H = f.dense_hessian(w);
  const Matrix Habs = abs_hessian(H);
  const auto idx = statistic_samples(n, n_probes, seed);
  Matrix M = Matrix::Zero(d, d), Mabs = Matrix::Zero(d, d);
  double fro = 0.0, fro_abs = 0.0;
  for (Index i : idx) {
    const Matrix Hi = f.dense_hessian(w, SampleSet::single(i));
    const Matrix D = Hi - H;
    const Matrix Dabs = abs_hessian(Hi) - Habs;
    M.noalias() += D * D;
    Mabs.noalias() += Dabs * Dabs;
    fro += D.squaredNorm();
    fro_abs += Dabs.squaredNorm();
  }
  const double m = static_cast<double>(idx.size());
  HessVarianceEstimate out;
  out.sigma = std::sqrt(sym_norm(M / m));
  out.sigma_abs = std::sqrt(sym_norm(Mabs / m));
  out.sigma_fro = std::sqrt(fro / m);
  out.sigma_abs_fro = std::sqrt(fro_abs / m);

  const double scale = 1.0 + sym_norm(H);
  for (Index N : batch_sizes) {
    auto rng = stream(seed, static_cast<std::uint64_t>(N));
    double sum = 0.0, sum_abs = 0.0;
    for (Index p = 0; p < n_probes; ++p) {
      const Matrix HS = f.dense_hessian(w, draw_without_replacement(n, N, rng));
      sum += sym_norm(HS - H);
      sum_abs += sym_norm(abs_hessian(HS) - Habs);
    }
    const double root = std::sqrt(static_cast<double>(N));
    out.checks.push_back(
        make_check(0, N, sum / static_cast<double>(n_probes), out.sigma / root, scale));
    out.abs_checks.push_back(
        make_check(0, N, sum_abs / static_cast<double>(n_probes), out.sigma_abs / root, scale));
  }
  return out;
}

MCConstants estimate_mc_constants(const Objective& f, const Vector& w, Index n_probes,
                                  std::uint64_t seed) {
  MCConstants c;
  c.v = estimate_grad_variance(f, w, {}, n_probes, seed).v;
  const auto h = estimate_hess_variance(f, w, {}, n_probes, seed);
  c.sigma = h.sigma;
  c.sigma_abs = h.sigma_abs;
  c.estimated_at = w;
  c.n_probes = n_probes;
  return c;
}

// ---------------------------------------------------------------------------

Vector direction_at(const Objective& f, const Vector& w, const OptimizerConfig& cfg,
                    const SampleSet& grad_batch, const SampleSet& hess_batch) {
  const Vector g = f.gradient(w, grad_batch);
  switch (cfg.method) {
    case Method::gd:
      return direction_gd(g);
    case Method::newton:
      return direction_newton(f.dense_hessian(w, hess_batch), g, cfg.newton_singular_rtol);
    case Method::lrsfn:
      return direction_lrsfn(dense_top_eig(f.dense_hessian(w, hess_batch), cfg.rank), g,
                             cfg.gamma);
    default:
      throw std::invalid_argument("stability diagnostics support gd, newton and lrsfn, not " +
                                  to_string(cfg.method));
  }
}

DirectionJacobian jacobian_of_direction(const Objective& f, const Vector& w,
                                        const OptimizerConfig& cfg) {
  require_small(f, "jacobian_of_direction");
  if (!check_method(cfg.method))
    throw std::invalid_argument("jacobian_of_direction: unsupported method " +
                                to_string(cfg.method));
  const Index d = f.dim();
  DirectionJacobian out;
  if (cfg.method == Method::gd) {
    out.J = -f.dense_hessian(w);
    return out;
  }

  const Matrix H = f.dense_hessian(w);
  Vector lam;
  if (cfg.method == Method::newton) {
    lam = Eigen::SelfAdjointEigenSolver<Matrix>(H, Eigen::EigenvaluesOnly).eigenvalues();
  } else {
    lam = dense_top_eig(H, cfg.rank).lambdas;
  }
  const Vector mag = lam.cwiseAbs();
  out.near_sign_crossing = mag.size() > 0 && (mag.array() < 1e-6 * mag.maxCoeff()).any();

  const double eps = 1e-5 * (1.0 + w.norm());
  out.J.resize(d, d);
  Vector wp = w, wm = w;
  for (Index i = 0; i < d; ++i) {
    wp(i) = w(i) + eps;
    wm(i) = w(i) - eps;
    out.J.col(i) = (direction_at(f, wp, cfg, {}, {}) - direction_at(f, wm, cfg, {}, {})) /
                   (2.0 * eps);
    wp(i) = wm(i) = w(i);
  }
  return out;
}

double hessian_lambda1(const Objective& f, const Vector& w) {
  return sym_norm(f.dense_hessian(w));
}

// ---------------------------------------------------------------------------

namespace {

void require_zeta(double zeta) {
  if (!(zeta > 0.0 && zeta < 1.0)) throw std::invalid_argument("zeta must lie in (0, 1)");
}

}  // namespace

StabilityReport dt_bound_gd(double lambda1, double v, Index grad_batch, double zeta) {
  require_zeta(zeta);
  if (!(lambda1 > 0.0) || !std::isfinite(lambda1))
    throw std::invalid_argument("lambda1 must be positive and finite");
  if (!(v >= 0.0)) throw std::invalid_argument("v must be non-negative");
  if (grad_batch < 1) throw std::invalid_argument("grad_batch must be positive");
  StabilityReport r;
  r.method = "gd";
  r.zeta = zeta;
  r.lambda1_jacobian = lambda1;
  r.C0 = v;
  r.grad_batch = grad_batch;
  r.dt_geometry = (1.0 + zeta) / lambda1;
  r.dt_stochastic = v == 0.0 ? kInf : (1.0 - zeta) * std::sqrt(static_cast<double>(grad_batch)) / v;
  r.dt_bound = std::min(r.dt_geometry, r.dt_stochastic);
  r.unbounded_risk = !std::isfinite(v);
  return r;
}

StabilityReport dt_bound_newton(double lambda1_jac, double C0, double C1, double C2,
                                Index grad_batch, Index hess_batch, double grad_norm_expect,
                                double zeta) {
  require_zeta(zeta);
  if (!(lambda1_jac >= 0.0)) throw std::invalid_argument("lambda1_jac must be non-negative");
  if (!(C0 >= 0.0) || !(C1 >= 0.0) || !(C2 >= 0.0))
    throw std::invalid_argument("C0, C1, C2 must be non-negative");
  if (grad_batch < 1 || hess_batch < 1)
    throw std::invalid_argument("batch sizes must be positive");
  if (!(grad_norm_expect >= 0.0)) throw std::invalid_argument("grad_norm_expect must be non-negative");

  // 0 * inf is taken as 0: a constant only matters when its factor is present.
  auto term = [](double c, double x) { return (c == 0.0 || x == 0.0) ? 0.0 : c * x; };
  StabilityReport r;
  r.zeta = zeta;
  r.lambda1_jacobian = lambda1_jac;
  r.C0 = C0;
  r.C1 = C1;
  r.C2 = C2;
  r.grad_batch = grad_batch;
  r.hess_batch = hess_batch;
  r.grad_norm_expect = grad_norm_expect;
  r.dt_geometry = lambda1_jac > 0.0 ? (1.0 + zeta) / lambda1_jac : kInf;
  const double nx = static_cast<double>(grad_batch), ns = static_cast<double>(hess_batch);
  const double denom = term(C0, 1.0 / std::sqrt(nx)) + term(C1, grad_norm_expect / std::sqrt(ns)) +
                       term(C2, grad_norm_expect / ns);
  r.dt_stochastic = denom > 0.0 ? (1.0 - zeta) / denom : kInf;
  r.dt_bound = std::min(r.dt_geometry, r.dt_stochastic);
  r.unbounded_risk = !std::isfinite(C0) || !std::isfinite(C1) || !std::isfinite(C2);
  return r;
}

NewtonConstants estimate_newton_constants(const Objective& f, const Vector& w,
                                          const OptimizerConfig& cfg, Index n_probes,
                                          std::uint64_t seed) {
  if (cfg.method != Method::newton && cfg.method != Method::lrsfn)
    throw std::invalid_argument("estimate_newton_constants: method must be newton or lrsfn");
  require_sampling(f);
  require_small(f, "estimate_newton_constants");
  if (n_probes < 1) throw std::invalid_argument("n_probes must be positive");
  validate(cfg, f);
  const Index n = f.num_samples();
  const Index d = f.dim();
  const Index nx = resolve_batch(cfg.grad_batch, n);
  const Index ns = resolve_batch(cfg.hess_batch, n);
  const bool lr = cfg.method == Method::lrsfn;

  NewtonConstants c;
  c.n_probes = n_probes;
  c.v = estimate_grad_variance(f, w, {}, n_probes, seed).v;
  const auto hv = estimate_hess_variance(f, w, {}, n_probes, seed);
  c.sigma = lr ? hv.sigma_abs : hv.sigma;

  const Matrix H = f.dense_hessian(w);
  Matrix Ainv;
  Matrix base;  // the operator E is measured against
  if (lr) {
    base = lowrank_abs(H, cfg.rank);
    Matrix A = base;
    A.diagonal().array() += cfg.gamma;
    Ainv = A.inverse();
    c.inverse_norm = 1.0 / cfg.gamma;
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(H);
    const Vector mag = es.eigenvalues().cwiseAbs();
    if (!(mag.minCoeff() > cfg.newton_singular_rtol * mag.maxCoeff()) || mag.maxCoeff() == 0.0) {
      c.inverse_norm = c.C0 = c.C1 = c.C2 = kInf;
      c.e_full = c.e_half = kInf;
      c.unbounded_draws = n_probes;
      return c;
    }
    c.inverse_norm = 1.0 / mag.minCoeff();
    Ainv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
    base = H;
  }

  auto rng = stream(seed, 0xa4);
  const Matrix I = Matrix::Identity(d, d);
  double sum_full = 0.0, sum_half = 0.0, sum_g = 0.0;
  Index bounded = 0;
  for (Index p = 0; p < n_probes; ++p) {
    const SampleSet S = ns < n ? draw_without_replacement(n, ns, rng) : SampleSet();
    const SampleSet X = nx < n ? draw_without_replacement(n, nx, rng) : SampleSet();
    sum_g += f.gradient(w, X).norm();
    const Matrix HS = f.dense_hessian(w, S);
    const Matrix E = (lr ? lowrank_abs(HS, cfg.rank) : HS) - base;
    const double a = inverse_norm(I + E * Ainv);
    const double b = inverse_norm(I + 0.5 * E * Ainv);
    if (!std::isfinite(a) || !std::isfinite(b)) {
      ++c.unbounded_draws;
      continue;
    }
    sum_full += a;
    sum_half += b;
    ++bounded;
  }
  c.grad_norm_expect = sum_g / static_cast<double>(n_probes);
  c.e_full = bounded > 0 ? sum_full / static_cast<double>(bounded) : kInf;
  c.e_half = bounded > 0 ? sum_half / static_cast<double>(bounded) : kInf;

  const double s = c.sigma, q = c.inverse_norm;
  if (lr) {
    const double g = cfg.gamma;
    c.C0 = c.v / g;
    c.C1 = s / (2.0 * g * g) * (1.0 + c.e_full);
    c.C2 = s * s / (4.0 * g * g * g) * c.e_half;
  } else {
    c.C0 = c.v * q;
    c.C1 = 0.5 * s * q * q * (1.0 + c.e_full);
    c.C2 = 0.25 * s * s * q * q * q * c.e_half;
  }
  // Zero noise: constants vanish regardless of the expectation terms.
  if (s == 0.0) c.C1 = c.C2 = 0.0;
  return c;
}

StabilityReport stability_report(const Objective& f, const Vector& w, const OptimizerConfig& cfg,
                                 double zeta, Index n_probes, std::uint64_t seed) {
  if (!check_method(cfg.method))
    throw std::invalid_argument("stability: unsupported method " + to_string(cfg.method));
  validate(cfg, f);
  const Index n = f.num_samples();
  const Index nx = resolve_batch(cfg.grad_batch, n);
  const Index ns = resolve_batch(cfg.hess_batch, n);
  const bool sampled = n > 1;

  if (cfg.method == Method::gd) {
    const double v = sampled ? estimate_grad_variance(f, w, {}, n_probes, seed).v : 0.0;
    return dt_bound_gd(hessian_lambda1(f, w), v, nx, zeta);
  }

  const auto jac = jacobian_of_direction(f, w, cfg);
  const double lam =
      jac.J.size() == 0 ? 0.0
                        : Eigen::EigenSolver<Matrix>(jac.J, false).eigenvalues().cwiseAbs().maxCoeff();
  StabilityReport r;
  if (sampled) {
    const auto c = estimate_newton_constants(f, w, cfg, n_probes, seed);
    r = dt_bound_newton(lam, c.C0, c.C1, c.C2, nx, ns, c.grad_norm_expect, zeta);
    r.unbounded_fraction = c.unbounded_fraction();
    r.unbounded_risk = r.unbounded_risk || c.unbounded_draws > 0;
  } else {
    r = dt_bound_newton(lam, 0.0, 0.0, 0.0, nx, ns, f.gradient(w).norm(), zeta);
  }
  r.method = to_string(cfg.method);
  return r;
}

// ---------------------------------------------------------------------------

Vector propagate_perturbation(const Vector& eta, const Matrix& J, double dt, const Vector& xi) {
  if (J.rows() != eta.size() || J.cols() != eta.size() || xi.size() != eta.size())
    throw std::invalid_argument("propagate_perturbation: size mismatch");
  return eta + dt * (J * eta) + dt * xi;
}

PerturbationTrace simulate_perturbation(const Objective& f, const OptimizerConfig& cfg,
                                        const Vector& w0, Index n_replicates, std::uint64_t seed) {
  require_small(f, "simulate_perturbation");
  if (!check_method(cfg.method))
    throw std::invalid_argument("simulate_perturbation: unsupported method " +
                                to_string(cfg.method));
  if (n_replicates < 1) throw std::invalid_argument("n_replicates must be positive");
  if (w0.size() != f.dim()) throw std::invalid_argument("w0 has the wrong dimension");
  validate(cfg, f);

  const Index n = f.num_samples();
  const Index nx = resolve_batch(cfg.grad_batch, n);
  const Index ns = resolve_batch(cfg.hess_batch, n);
  const Index steps = cfg.max_iters;
  const double dt = cfg.alpha;

  std::vector<Vector> ws{w0};
  std::vector<Matrix> Js;
  try {
    for (Index k = 0; k < steps; ++k) {
      const Vector& w = ws.back();
      if (k > 0 && w == ws[ws.size() - 2]) Js.push_back(Js.back());
      else Js.push_back(jacobian_of_direction(f, w, cfg).J);
      Vector next = w + dt * direction_at(f, w, cfg, {}, {});
      if (!all_finite(next) || !(std::abs(f.value(next)) <= kDivergenceLoss))
        throw NumericalError("diverged at step " + std::to_string(k + 1));
      ws.push_back(std::move(next));
    }
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("reference unstable: ") + e.what());
  }

  PerturbationTrace t;
  t.dt = dt;
  t.steps = steps;
  t.replicate_norms.assign(static_cast<std::size_t>(n_replicates),
                           std::vector<double>(static_cast<std::size_t>(steps + 1), 0.0));

  parallel_for(static_cast<std::size_t>(n_replicates), [&](std::size_t r) {
    auto rng = stream(seed, r);
    auto& norms = t.replicate_norms[r];
    Vector eta = Vector::Zero(f.dim());
    SampleSet X, S;
    for (Index k = 0; k < steps; ++k) {
      const std::size_t kk = static_cast<std::size_t>(k);
      draw_batches(n, nx, ns, rng, X, S);
      const Vector x = ws[kk] + eta;
      bool ok = all_finite(x);
      if (ok) {
        try {
          const Vector xi = direction_at(f, x, cfg, X, S) - direction_at(f, x, cfg, {}, {});
          eta = propagate_perturbation(eta, Js[kk], dt, xi);
          ok = all_finite(eta) && eta.norm() < 1e150;
        } catch (const NumericalError&) {
          ok = false;
        }
      }
      if (!ok) {
        std::fill(norms.begin() + static_cast<std::ptrdiff_t>(k + 1), norms.end(), kInf);
        return;
      }
      norms[kk + 1] = eta.norm();
    }
  });

  t.mean_norm.assign(static_cast<std::size_t>(steps + 1), 0.0);
  Index exceeded = 0;
  for (const auto& seq : t.replicate_norms) {
    for (std::size_t k = 0; k < seq.size(); ++k) t.mean_norm[k] += seq[k];
    if (*std::max_element(seq.begin(), seq.end()) >= 1.0) ++exceeded;
  }
  for (std::size_t k = 0; k < t.mean_norm.size(); ++k) {
    t.mean_norm[k] /= static_cast<double>(n_replicates);
    if (t.mean_norm[k] >= 1.0 && t.first_exceed < 0) t.first_exceed = static_cast<Index>(k);
  }
  t.stable = t.first_exceed < 0;
  t.exceed_fraction = static_cast<double>(exceeded) / static_cast<double>(n_replicates);
  t.max_mean_norm = *std::max_element(t.mean_norm.begin(), t.mean_norm.end());
  return t;
}

std::vector<SweepRow> stability_sweep(const Objective& f, const OptimizerConfig& cfg,
                                      const Vector& w0, const std::vector<double>& dts,
                                      Index n_replicates, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  const Index n = f.num_samples();
  for (double dt : dts) {
    OptimizerConfig c = cfg;
    c.alpha = dt;
    SweepRow row;
    row.dt = dt;
    row.grad_batch = resolve_batch(cfg.grad_batch, n);
    row.hess_batch = resolve_batch(cfg.hess_batch, n);
    try {
      const auto t = simulate_perturbation(f, c, w0, n_replicates, seed);
      row.stable = t.stable;
      row.max_mean_norm = t.max_mean_norm;
      row.exceed_fraction = t.exceed_fraction;
    } catch (const NumericalError&) {
      // the reference itself blew up at this step length
      row.stable = false;
      row.max_mean_norm = kInf;
      row.exceed_fraction = 1.0;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "dt,grad_batch,hess_batch,stable,max_mean_eta,exceed_fraction\n";
  for (const auto& r : rows)
    os << format_double(r.dt) << ',' << r.grad_batch << ',' << r.hess_batch << ','
       << (r.stable ? "true" : "false") << ',' << format_double(r.max_mean_norm) << ','
       << format_double(r.exceed_fraction) << '\n';
}

// ---------------------------------------------------------------------------

namespace {

bool apply_slack(std::vector<BoundCheck>& checks, double slack) {
  bool all = true;
  for (auto& c : checks) {
    c.passed = c.ratio <= slack;
    all = all && c.passed;
  }
  return all;
}

}  // namespace

LemmaCheck check_lemma_a1(const Objective& f, const Vector& w, const std::vector<Index>& batches,
                          Index n_probes, std::uint64_t seed, double slack) {
  auto est = estimate_grad_variance(f, w, batches, n_probes, seed);
  LemmaCheck out;
  out.lemma = "A1";
  out.slack = slack;
  out.checks = std::move(est.checks);
  out.passed = apply_slack(out.checks, slack);
  out.details = {{"v", est.v}, {"n_probes", n_probes}};
  return out;
}

LemmaCheck check_lemma_a2(const Objective& f, const Vector& w, const std::vector<Index>& batches,
                          Index n_probes, std::uint64_t seed, double slack) {
  auto est = estimate_hess_variance(f, w, batches, n_probes, seed);
  LemmaCheck out;
  out.lemma = "A2";
  out.slack = slack;
  out.checks = std::move(est.checks);
  out.abs_checks = std::move(est.abs_checks);
  const bool a = apply_slack(out.checks, slack);
  const bool b = apply_slack(out.abs_checks, slack);
  out.passed = a && b;
  // Ratios against the Frobenius-norm variance, which always dominates.
  nlohmann::json fro = nlohmann::json::array();
  for (std::size_t i = 0; i < out.checks.size(); ++i) {
    const double root = std::sqrt(static_cast<double>(out.checks[i].hess_batch));
    fro.push_back({{"hess_batch", out.checks[i].hess_batch},
                   {"ratio", jnum(est.sigma_fro > 0 ? out.checks[i].mean_error * root / est.sigma_fro : 0.0)},
                   {"abs_ratio", jnum(est.sigma_abs_fro > 0
                                          ? out.abs_checks[i].mean_error * root / est.sigma_abs_fro
                                          : 0.0)}});
  }
  out.details = {{"sigma", est.sigma},         {"sigma_abs", est.sigma_abs},
                 {"sigma_fro", est.sigma_fro}, {"sigma_abs_fro", est.sigma_abs_fro},
                 {"frobenius", fro},           {"n_probes", n_probes}};
  return out;
}

LemmaCheck check_lemma_a4(const Objective& f, const Vector& w, const OptimizerConfig& cfg,
                          const std::vector<Index>& batches, Index n_probes, std::uint64_t seed,
                          double slack) {
  if (cfg.method != Method::newton && cfg.method != Method::lrsfn)
    throw std::invalid_argument("lemma A4 needs method newton or lrsfn");
  require_sampling(f);
  const Index n = f.num_samples();
  require_batches(batches, n);
  if (n_probes < 1) throw std::invalid_argument("n_probes must be positive");

  LemmaCheck out;
  out.lemma = "A4";
  out.slack = slack;
  out.details = {{"method", to_string(cfg.method)}, {"n_probes", n_probes},
                 {"constants", nlohmann::json::array()}};
  const Vector p_full = direction_at(f, w, cfg, {}, {});
  for (Index N : batches) {
    OptimizerConfig c = cfg;
    c.grad_batch = c.hess_batch = N;
    const auto k = estimate_newton_constants(f, w, c, n_probes, seed + static_cast<std::uint64_t>(N));
    auto rng = stream(seed, static_cast<std::uint64_t>(N));
    double sum = 0.0;
    for (Index p = 0; p < n_probes; ++p) {
      const SampleSet X = draw_without_replacement(n, N, rng);
      const SampleSet S = draw_without_replacement(n, N, rng);
      try {
        sum += (direction_at(f, w, cfg, X, S) - p_full).norm();
      } catch (const NumericalError&) {
        sum = kInf;
      }
    }
    const double root = std::sqrt(static_cast<double>(N));
    auto term = [](double a, double x) { return (a == 0.0 || x == 0.0) ? 0.0 : a * x; };
    const double bound = term(k.C0, 1.0 / root) +
                         term(k.C1 / root + k.C2 / static_cast<double>(N), k.grad_norm_expect);
    out.checks.push_back(make_check(N, N, sum / static_cast<double>(n_probes), bound,
                                    1.0 + p_full.norm()));
    nlohmann::json kj;
    to_json(kj, k);
    kj["batch"] = N;
    out.details["constants"].push_back(kj);
  }
  out.passed = apply_slack(out.checks, slack);
  return out;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const BoundCheck& c) {
  j = {{"grad_batch", c.grad_batch}, {"hess_batch", c.hess_batch},
       {"mean_error", jnum(c.mean_error)}, {"bound", jnum(c.bound)},
       {"ratio", jnum(c.ratio)},           {"passed", c.passed}};
}

void to_json(nlohmann::json& j, const MCConstants& c) {
  j = {{"v", jnum(c.v)},
       {"sigma", jnum(c.sigma)},
       {"sigma_abs", jnum(c.sigma_abs)},
       {"estimated_at", std::vector<double>(c.estimated_at.data(),
                                            c.estimated_at.data() + c.estimated_at.size())},
       {"n_probes", c.n_probes}};
}

void to_json(nlohmann::json& j, const NewtonConstants& c) {
  j = {{"C0", jnum(c.C0)},
       {"C1", jnum(c.C1)},
       {"C2", jnum(c.C2)},
       {"v", jnum(c.v)},
       {"sigma", jnum(c.sigma)},
       {"inverse_norm", jnum(c.inverse_norm)},
       {"e_full", jnum(c.e_full)},
       {"e_half", jnum(c.e_half)},
       {"grad_norm_expect", jnum(c.grad_norm_expect)},
       {"unbounded_draws", c.unbounded_draws},
       {"unbounded_fraction", c.unbounded_fraction()},
       {"n_probes", c.n_probes}};
}

// Infinite values are written as null.
void to_json(nlohmann::json& j, const StabilityReport& r) {
  j = {{"method", r.method},
       {"zeta", r.zeta},
       {"lambda1_jacobian", jnum(r.lambda1_jacobian)},
       {"C0", jnum(r.C0)},
       {"C1", jnum(r.C1)},
       {"C2", jnum(r.C2)},
       {"grad_batch", r.grad_batch},
       {"hess_batch", r.hess_batch},
       {"grad_norm_expect", jnum(r.grad_norm_expect)},
       {"dt_geometry", jnum(r.dt_geometry)},
       {"dt_stochastic", jnum(r.dt_stochastic)},
       {"dt_bound", jnum(r.dt_bound)},
       {"unbounded_risk", r.unbounded_risk},
       {"unbounded_fraction", r.unbounded_fraction}};
}

void to_json(nlohmann::json& j, const PerturbationTrace& t) {
  auto arr = [](const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(jnum(x));
    return a;
  };
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& s : t.replicate_norms) reps.push_back(arr(s));
  j = {{"dt", t.dt},
       {"steps", t.steps},
       {"stable", t.stable},
       {"first_exceed", t.first_exceed},
       {"exceed_fraction", t.exceed_fraction},
       {"max_mean_norm", jnum(t.max_mean_norm)},
       {"mean_norm", arr(t.mean_norm)},
       {"replicate_norms", reps}};
}

void to_json(nlohmann::json& j, const LemmaCheck& c) {
  j = {{"lemma", c.lemma}, {"slack", c.slack}, {"passed", c.passed}, {"checks", c.checks}};
  if (!c.abs_checks.empty()) j["abs_checks"] = c.abs_checks;
  if (!c.details.is_null()) j["details"] = c.details;
}

}  // namespace sfn
