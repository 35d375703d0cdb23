#include "sfn/optim.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <set>

namespace sfn {

std::string to_string(Method m) {
  switch (m) {
    case Method::gd: return "gd";
    case Method::csgd: return "csgd";
    case Method::newton: return "newton";
    case Method::full_sfn: return "full_sfn";
    case Method::lrsfn: return "lrsfn";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "gd" || s == "sgd") return Method::gd;
  if (s == "csgd") return Method::csgd;
  if (s == "newton") return Method::newton;
  if (s == "full_sfn" || s == "full-sfn" || s == "sfn") return Method::full_sfn;
  if (s == "lrsfn") return Method::lrsfn;
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected gd, csgd, newton, full_sfn or lrsfn)");
}

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::diverged: return "diverged";
    case RunStatus::failed: return "failed";
  }
  return "?";
}

namespace {

Index resolve_batch(Index requested, Index n) { return requested == 0 ? n : requested; }

bool dense_method(Method m) {
  return m == Method::newton || m == Method::full_sfn;
}

}  // namespace

void validate(const OptimizerConfig& c, const Objective& f) {
  const Index n = f.num_samples();
  const Index d = f.dim();
  if (!(c.alpha > 0.0) || !std::isfinite(c.alpha))
    throw std::invalid_argument("alpha must be a positive finite number");
  if (c.method == Method::lrsfn) {
    if (!(c.gamma > 0.0) || !std::isfinite(c.gamma))
      throw std::invalid_argument("gamma must be positive for lrsfn");
    if (c.rank < 1 || c.rank > d)
      throw std::invalid_argument("rank must lie in [1, d] for lrsfn");
  }
  if (c.grad_batch < 0 || c.hess_batch < 0)
    throw std::invalid_argument("batch sizes must be non-negative (0 means full data)");
  const Index nx = resolve_batch(c.grad_batch, n);
  const Index ns = resolve_batch(c.hess_batch, n);
  if (nx > n) throw std::invalid_argument("grad-batch exceeds the number of samples");
  if (c.method != Method::gd && ns > nx)
    throw std::invalid_argument("hess-batch must not exceed grad-batch");
  if (c.max_iters < 0) throw std::invalid_argument("iters must be non-negative");
  if (c.oversample < 0) throw std::invalid_argument("oversample must be non-negative");
  if (c.power_iters < 0) throw std::invalid_argument("power_iters must be non-negative");
  if (!(c.newton_singular_rtol >= 0.0))
    throw std::invalid_argument("newton_singular_rtol must be non-negative");
  if (dense_method(c.method) && !f.has_dense_hessian())
    throw std::invalid_argument(to_string(c.method) + " needs a dense Hessian; d is too large");
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = nlohmann::json{{"method", to_string(c.method)},
                     {"alpha", c.alpha},
                     {"gamma", c.gamma},
                     {"rank", c.rank},
                     {"grad_batch", c.grad_batch},
                     {"hess_batch", c.hess_batch},
                     {"max_iters", c.max_iters},
                     {"seed", c.seed},
                     {"oversample", c.oversample},
                     {"power_iters", c.power_iters},
                     {"newton_singular_rtol", c.newton_singular_rtol}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  static const std::set<std::string> known = {
      "method", "alpha", "gamma", "rank", "grad_batch", "hess_batch", "max_iters",
      "seed", "oversample", "power_iters", "newton_singular_rtol", "label"};
  if (!j.is_object()) throw std::invalid_argument("optimizer config must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown optimizer field '" + key + "'");
  const OptimizerConfig def;
  c.method = method_from_string(j.value("method", to_string(def.method)));
  c.alpha = j.value("alpha", def.alpha);
  c.gamma = j.value("gamma", def.gamma);
  c.rank = j.value("rank", def.rank);
  c.grad_batch = j.value("grad_batch", def.grad_batch);
  c.hess_batch = j.value("hess_batch", def.hess_batch);
  c.max_iters = j.value("max_iters", def.max_iters);
  c.seed = j.value("seed", def.seed);
  c.oversample = j.value("oversample", def.oversample);
  c.power_iters = j.value("power_iters", def.power_iters);
  c.newton_singular_rtol = j.value("newton_singular_rtol", def.newton_singular_rtol);
}

// ---------------------------------------------------------------------------

Vector direction_gd(const Vector& g) { return -g; }

CsgdStep direction_csgd(const Vector& g, double lambda1_abs) {
  if (!(std::abs(lambda1_abs) >= 1e-12)) throw NumericalError("curvature vanishes");
  return {-g, 1.0 / std::abs(lambda1_abs)};
}

Vector direction_newton(const Matrix& H, const Vector& g, double singular_rtol) {
  if (H.rows() != g.size() || H.cols() != g.size())
    throw std::invalid_argument("newton: Hessian/gradient size mismatch");
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  if (es.info() != Eigen::Success) throw NumericalError("newton: eigendecomposition failed");
  const Vector mag = es.eigenvalues().cwiseAbs();
  const double top = mag.maxCoeff();
  if (top == 0.0 || mag.minCoeff() <= singular_rtol * top) throw NumericalError("Hessian singular");
  const Matrix& V = es.eigenvectors();
  return -(V * (V.transpose() * g).cwiseQuotient(es.eigenvalues()));
}

Matrix abs_hessian(const Matrix& H) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  const Matrix& V = es.eigenvectors();
  return V * es.eigenvalues().cwiseAbs().asDiagonal() * V.transpose();
}

LowRankEig abs_hessian(const LowRankEig& eig) {
  LowRankEig out = eig;
  out.lambdas = eig.lambdas.cwiseAbs();
  return out;
}

Vector direction_full_sfn(const Matrix& H, const Vector& g, double gamma) {
  if (H.rows() != g.size() || H.cols() != g.size())
    throw std::invalid_argument("full_sfn: Hessian/gradient size mismatch");
  if (!(gamma >= 0.0)) throw std::invalid_argument("full_sfn: gamma must be non-negative");
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  if (es.info() != Eigen::Success) throw NumericalError("full_sfn: eigendecomposition failed");
  const Matrix& V = es.eigenvectors();
  Vector c = V.transpose() * g;
  for (Index j = 0; j < c.size(); ++j) {
    const double denom = std::abs(es.eigenvalues()(j)) + gamma;
    c(j) = denom > 0.0 ? c(j) / denom : 0.0;
  }
  return -(V * c);
}

Vector direction_lrsfn(const LowRankEig& eig, const Vector& g, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("lrsfn: gamma must be positive");
  if (eig.rank() > 0 && eig.U.rows() != g.size())
    throw std::invalid_argument("lrsfn: eigenbasis/gradient size mismatch");
  if (eig.rank() == 0) return -g / gamma;
  const Vector mag = eig.lambdas.cwiseAbs();
  const double floor = 1e-14 * mag.maxCoeff();
  Vector c = eig.U.transpose() * g;
  for (Index j = 0; j < c.size(); ++j)
    c(j) = (mag(j) > floor && mag(j) > 0.0) ? c(j) * mag(j) / (mag(j) + gamma) : 0.0;
  return -(g - eig.U * c) / gamma;
}

// ---------------------------------------------------------------------------

OptimizerState make_state(const Vector& w0, const OptimizerConfig& cfg) {
  OptimizerState s;
  s.w = w0;
  s.rng.seed(cfg.seed);
  return s;
}

Index work_per_iteration(const OptimizerConfig& cfg, const Objective& f) {
  const Index n = f.num_samples();
  const Index nx = resolve_batch(cfg.grad_batch, n);
  const Index ns = resolve_batch(cfg.hess_batch, n);
  switch (cfg.method) {
    case Method::gd: return nx;
    case Method::lrsfn: return nx + 2 * cfg.rank * ns;
    case Method::csgd:
      return f.has_dense_hessian() ? nx + f.dim() * ns : nx + 2 * ns;
    case Method::newton:
    case Method::full_sfn: return nx + f.dim() * ns;
  }
  return nx;
}

StepInfo step(OptimizerState& state, const Objective& f, const OptimizerConfig& cfg) {
  const Index n = f.num_samples();
  const Index d = f.dim();
  const Index nx = resolve_batch(cfg.grad_batch, n);
  const Index ns = resolve_batch(cfg.hess_batch, n);

  StepInfo info;
  // S_k is the leading part of the shuffled X_k, hence a uniform subset of it.
  if (nx < n) {
    info.grad_batch = draw_without_replacement(n, nx, state.rng);
    const auto idx = info.grad_batch.indices();
    if (ns < nx) info.hess_batch = SampleSet(std::vector<Index>(idx.begin(), idx.begin() + ns));
    else info.hess_batch = info.grad_batch;
  } else if (ns < n) {
    info.hess_batch = draw_without_replacement(n, ns, state.rng);
  }
  const std::uint64_t sketch_seed = state.rng();

  const Vector g = f.gradient(state.w, info.grad_batch);
  Vector p;
  double alpha = cfg.alpha;
  switch (cfg.method) {
    case Method::gd:
      p = direction_gd(g);
      break;
    case Method::csgd: {
      double lambda1;
      if (f.has_dense_hessian()) {
        const Matrix H = f.dense_hessian(state.w, info.hess_batch);
        lambda1 = Eigen::SelfAdjointEigenSolver<Matrix>(H, Eigen::EigenvaluesOnly)
                      .eigenvalues()
                      .cwiseAbs()
                      .maxCoeff();
      } else {
        const auto eig = randomized_eig(hessian_operator(f, state.w, info.hess_batch), d,
                                        {1, cfg.oversample, cfg.power_iters, sketch_seed});
        lambda1 = eig.rank() ? std::abs(eig.lambdas(0)) : 0.0;
      }
      auto cs = direction_csgd(g, lambda1);
      p = std::move(cs.direction);
      alpha = cs.alpha;
      break;
    }
    case Method::newton:
      p = direction_newton(f.dense_hessian(state.w, info.hess_batch), g,
                           cfg.newton_singular_rtol);
      break;
    case Method::full_sfn:
      p = direction_full_sfn(f.dense_hessian(state.w, info.hess_batch), g, 0.0);
      break;
    case Method::lrsfn: {
      auto eig = randomized_eig(hessian_operator(f, state.w, info.hess_batch), d,
                                {cfg.rank, cfg.oversample, cfg.power_iters, sketch_seed});
      p = direction_lrsfn(eig, g, cfg.gamma);
      state.last_eig = std::move(eig);
      break;
    }
  }

  state.w += alpha * p;
  state.k += 1;
  info.work = work_per_iteration(cfg, f);
  state.work_units += info.work;
  info.alpha = alpha;
  info.step_norm = alpha * p.norm();
  return info;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const TraceRecord& r) {
  j = nlohmann::json{{"k", r.k},
                     {"loss", r.loss},
                     {"grad_norm", r.grad_norm},
                     {"step_norm", r.step_norm},
                     {"work_units", r.work_units},
                     {"wall_ns", r.wall_ns},
                     {"diverged", r.diverged}};
  // Non-finite numbers have no JSON form; they are written as null.
  for (const char* key : {"loss", "grad_norm", "step_norm"})
    if (!std::isfinite(j[key].get<double>())) j[key] = nullptr;
  if (!r.grad_batch.empty()) j["grad_batch"] = r.grad_batch;
  if (!r.hess_batch.empty()) j["hess_batch"] = r.hess_batch;
}

void write_trace_jsonl(std::ostream& os, const std::vector<TraceRecord>& trace) {
  for (const auto& r : trace) os << nlohmann::json(r).dump() << '\n';
}

namespace {

bool is_diverged(double loss, const Vector& w) {
  return !std::isfinite(loss) || loss > kDivergenceLoss || !w.allFinite();
}

TraceRecord observe(const Objective& f, const OptimizerState& s) {
  TraceRecord r;
  r.k = s.k;
  r.work_units = s.work_units;
  if (!s.w.allFinite()) {
    r.loss = std::numeric_limits<double>::quiet_NaN();
    r.grad_norm = std::numeric_limits<double>::quiet_NaN();
    r.diverged = true;
    return r;
  }
  r.loss = f.value(s.w);
  r.grad_norm = f.gradient(s.w).norm();
  r.diverged = is_diverged(r.loss, s.w);
  return r;
}

}  // namespace

RunResult run(const Objective& f, const OptimizerConfig& cfg, const Vector& w0,
              const IterationCallback& on_iteration) {
  if (w0.size() != f.dim())
    throw std::invalid_argument("initial point has dimension " + std::to_string(w0.size()) +
                                ", expected " + std::to_string(f.dim()));
  validate(cfg, f);
  using clock = std::chrono::steady_clock;

  RunResult out;
  OptimizerState state = make_state(w0, cfg);
  out.best_w = w0;
  out.best_loss = std::numeric_limits<double>::infinity();

  auto accept = [&](TraceRecord rec) {
    if (!rec.diverged && rec.loss < out.best_loss) {
      out.best_loss = rec.loss;
      out.best_w = state.w;
      out.best_k = rec.k;
    }
    out.trace.push_back(std::move(rec));
    if (on_iteration) on_iteration(state, out.trace.back());
  };

  {
    const auto t0 = clock::now();
    TraceRecord rec = observe(f, state);
    rec.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
    const bool bad = rec.diverged;
    accept(std::move(rec));
    if (bad) {
      out.status = RunStatus::diverged;
      out.message = "initial point is non-finite or has loss above the divergence threshold";
      out.final_w = state.w;
      return out;
    }
  }

  for (Index it = 0; it < cfg.max_iters; ++it) {
    const auto t0 = clock::now();
    StepInfo info;
    try {
      info = step(state, f, cfg);
    } catch (const NumericalError& e) {
      out.status = RunStatus::failed;
      out.message = e.what();
      break;
    }
    TraceRecord rec = observe(f, state);
    rec.step_norm = info.step_norm;
    rec.grad_batch.assign(info.grad_batch.indices().begin(), info.grad_batch.indices().end());
    rec.hess_batch.assign(info.hess_batch.indices().begin(), info.hess_batch.indices().end());
    rec.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
    const bool bad = rec.diverged;
    accept(std::move(rec));
    if (bad) {
      out.status = RunStatus::diverged;
      out.message = "diverged at iteration " + std::to_string(state.k);
      break;
    }
  }
  out.final_w = state.w;
  return out;
}

}  // namespace sfn
