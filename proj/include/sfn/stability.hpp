#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfn/optim.hpp"
#include "sfn/oracle.hpp"
#include "sfn/types.hpp"

namespace sfn {

// Dense Jacobians and reference solves limit the diagnostics to small d.
inline constexpr Index kMaxStabilityDim = 50;

// Per-sample statistics are exhaustive up to this many samples, sampled above.
inline constexpr Index kExhaustiveSampleLimit = 4096;

// One row of an empirical bound check: mean_error is the Monte Carlo mean of
// the left-hand side over n_probes draws, bound the right-hand side.
struct BoundCheck {
  Index grad_batch = 0;
  Index hess_batch = 0;
  double mean_error = 0.0;
  double bound = 0.0;
  double ratio = 0.0;  // mean_error / bound; 0 when both vanish, inf when only bound does
  bool passed = false;
};

struct GradVarianceEstimate {
  double v = 0.0;  // sqrt(trace of the per-sample gradient covariance)
  std::vector<BoundCheck> checks;  // E||g_X - g|| against v / sqrt(N_X)
};

// Throws std::invalid_argument("no sampling dimension") for single-sample oracles.
GradVarianceEstimate estimate_grad_variance(const Objective& f, const Vector& w,
                                            const std::vector<Index>& batch_sizes,
                                            Index n_probes, std::uint64_t seed);

struct HessVarianceEstimate {
  double sigma = 0.0;      // sqrt ||E[(H_i - H)^2]||_2
  double sigma_abs = 0.0;  // same with |H_i| - |H|
  double sigma_fro = 0.0;  // sqrt E||H_i - H||_F^2, diagnostic
  double sigma_abs_fro = 0.0;
  std::vector<BoundCheck> checks;      // E||H_S - H|| against sigma / sqrt(N_S)
  std::vector<BoundCheck> abs_checks;  // E|| |H_S| - |H| || against sigma_abs / sqrt(N_S)
};

HessVarianceEstimate estimate_hess_variance(const Objective& f, const Vector& w,
                                            const std::vector<Index>& batch_sizes,
                                            Index n_probes, std::uint64_t seed);

struct MCConstants {
  double v = 0.0;
  double sigma = 0.0;
  double sigma_abs = 0.0;
  Vector estimated_at;
  Index n_probes = 0;
};

MCConstants estimate_mc_constants(const Objective& f, const Vector& w, Index n_probes,
                                  std::uint64_t seed);

// Search direction at w from the given batches (empty = full data), as the
// optimizer would compute it with an exact dense top-r eigendecomposition.
// method is gd, newton or lrsfn.
Vector direction_at(const Objective& f, const Vector& w, const OptimizerConfig& cfg,
                    const SampleSet& grad_batch, const SampleSet& hess_batch);

struct DirectionJacobian {
  Matrix J;
  // Some retained |lambda_j| < 1e-6 |lambda_1|: |.| is not smooth here and
  // the finite differences may straddle a sign change.
  bool near_sign_crossing = false;
};

// Full-data Jacobian of the direction map. Exact -H for gd, central
// differences with step 1e-5 (1 + ||w||) for newton and lrsfn.
DirectionJacobian jacobian_of_direction(const Objective& f, const Vector& w,
                                        const OptimizerConfig& cfg);

// Largest |lambda| of the full-data Hessian.
double hessian_lambda1(const Objective& f, const Vector& w);

struct StabilityReport {
  std::string method;
  double zeta = 0.5;
  double lambda1_jacobian = 0.0;
  double C0 = 0.0, C1 = 0.0, C2 = 0.0;
  Index grad_batch = 0, hess_batch = 0;
  double grad_norm_expect = 0.0;
  double dt_geometry = 0.0;    // +inf when the Jacobian vanishes
  double dt_stochastic = 0.0;  // +inf without Monte Carlo error
  double dt_bound = 0.0;
  bool unbounded_risk = false;  // some constant is infinite, or some draw was singular
  double unbounded_fraction = 0.0;
};

StabilityReport dt_bound_gd(double lambda1, double v, Index grad_batch, double zeta);

StabilityReport dt_bound_newton(double lambda1_jac, double C0, double C1, double C2,
                                Index grad_batch, Index hess_batch, double grad_norm_expect,
                                double zeta);

struct NewtonConstants {
  double C0 = 0.0, C1 = 0.0, C2 = 0.0;
  double v = 0.0;
  double sigma = 0.0;         // sigma for newton, sigma_abs for lrsfn
  double inverse_norm = 0.0;  // ||A^{-1}||
  double e_full = 1.0;        // mean ||(I + E A^{-1})^{-1}||
  double e_half = 1.0;        // mean ||(I + E A^{-1} / 2)^{-1}||
  double grad_norm_expect = 0.0;  // mean ||g_X|| over the same draws
  Index unbounded_draws = 0;
  Index n_probes = 0;
  double unbounded_fraction() const {
    return n_probes > 0 ? static_cast<double>(unbounded_draws) / static_cast<double>(n_probes)
                        : 0.0;
  }
};

// A = H for newton, |H^(r)| + gamma I for lrsfn; E is the batch deviation
// H_S - H, respectively |H_S^(r)| - |H^(r)|, with |S| = cfg.hess_batch.
// A singular H makes every constant infinite.
NewtonConstants estimate_newton_constants(const Objective& f, const Vector& w,
                                          const OptimizerConfig& cfg, Index n_probes,
                                          std::uint64_t seed);

// Estimates constants and the Jacobian at w and returns the bound for cfg.
StabilityReport stability_report(const Objective& f, const Vector& w, const OptimizerConfig& cfg,
                                 double zeta, Index n_probes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Perturbation propagation.

// eta + dt J eta + dt xi
Vector propagate_perturbation(const Vector& eta, const Matrix& J, double dt, const Vector& xi);

struct PerturbationTrace {
  double dt = 0.0;
  Index steps = 0;
  std::vector<std::vector<double>> replicate_norms;  // steps + 1 entries each, first 0
  std::vector<double> mean_norm;
  bool stable = true;            // mean_norm < 1 throughout
  Index first_exceed = -1;       // first k with mean_norm >= 1
  double exceed_fraction = 0.0;  // replicates with some ||eta_k|| >= 1
  double max_mean_norm = 0.0;
};

// Integrates the reference run w_{k+1} = w_k + dt p(w_k) and n_replicates
// perturbations driven by real batch draws, with dt = cfg.alpha, batches
// from cfg and cfg.max_iters steps. Throws NumericalError("reference
// unstable") if the reference diverges. A replicate whose batch direction
// fails is carried as +inf.
PerturbationTrace simulate_perturbation(const Objective& f, const OptimizerConfig& cfg,
                                        const Vector& w0, Index n_replicates, std::uint64_t seed);

struct SweepRow {
  double dt = 0.0;
  Index grad_batch = 0;
  Index hess_batch = 0;
  bool stable = false;
  double max_mean_norm = 0.0;
  double exceed_fraction = 0.0;
};

std::vector<SweepRow> stability_sweep(const Objective& f, const OptimizerConfig& cfg,
                                      const Vector& w0, const std::vector<double>& dts,
                                      Index n_replicates, std::uint64_t seed);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

// ---------------------------------------------------------------------------
// Empirical checks of the Monte Carlo lemmas.

struct LemmaCheck {
  std::string lemma;
  double slack = 1.05;
  std::vector<BoundCheck> checks;
  std::vector<BoundCheck> abs_checks;  // A2 only
  nlohmann::json details;
  bool passed = false;
};

LemmaCheck check_lemma_a1(const Objective& f, const Vector& w, const std::vector<Index>& batches,
                          Index n_probes, std::uint64_t seed, double slack = 1.05);
LemmaCheck check_lemma_a2(const Objective& f, const Vector& w, const std::vector<Index>& batches,
                          Index n_probes, std::uint64_t seed, double slack = 1.05);
// Newton or lrsfn direction error with independent gradient and Hessian
// batches of equal size N for each N in batches.
LemmaCheck check_lemma_a4(const Objective& f, const Vector& w, const OptimizerConfig& cfg,
                          const std::vector<Index>& batches, Index n_probes, std::uint64_t seed,
                          double slack = 1.05);

void to_json(nlohmann::json& j, const BoundCheck& c);
void to_json(nlohmann::json& j, const MCConstants& c);
void to_json(nlohmann::json& j, const NewtonConstants& c);
void to_json(nlohmann::json& j, const StabilityReport& r);
void to_json(nlohmann::json& j, const PerturbationTrace& t);
void to_json(nlohmann::json& j, const LemmaCheck& c);

}  // namespace sfn
