#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfn/oracle.hpp"
#include "sfn/randeig.hpp"
#include "sfn/types.hpp"

namespace sfn {

enum class Method { gd, csgd, newton, full_sfn, lrsfn };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct OptimizerConfig {
  Method method = Method::gd;
  double alpha = 1.0;
  double gamma = 1e-3;  // lrsfn only
  Index rank = 10;      // lrsfn only
  Index grad_batch = 0;  // 0 means the full data set
  Index hess_batch = 0;
  Index max_iters = 100;
  std::uint64_t seed = 0;
  Index oversample = 10;
  Index power_iters = 0;
  // Newton rejects H when min |lambda| <= rtol * max |lambda|.
  double newton_singular_rtol = 1e-12;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// Throws std::invalid_argument naming the offending field.
void validate(const OptimizerConfig& cfg, const Objective& f);

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

// ---------------------------------------------------------------------------
// Search directions. All return p with the update w += alpha * p.

Vector direction_gd(const Vector& g);

struct CsgdStep {
  Vector direction;
  double alpha;
};
// -g with step 1/|lambda_1|. Throws NumericalError below 1e-12.
CsgdStep direction_csgd(const Vector& g, double lambda1_abs);

// Solves H p = -g through a symmetric eigendecomposition.
Vector direction_newton(const Matrix& H, const Vector& g, double singular_rtol = 1e-12);

// Spectral absolute value.
Matrix abs_hessian(const Matrix& H);
LowRankEig abs_hessian(const LowRankEig& eig);

// Solves (|H| + gamma I) p = -g in the eigenbasis of H. gamma may be 0;
// modes with |lambda| + gamma == 0 are dropped.
Vector direction_full_sfn(const Matrix& H, const Vector& g, double gamma);

// p = -[(1/gamma) I - (1/gamma^2) U (|Lambda|^{-1} + (1/gamma) I)^{-1} U^T] g,
// evaluated as -(g - U (|lambda|/(|lambda|+gamma) * U^T g)) / gamma. Modes
// with |lambda_j| < 1e-14 |lambda_1| are treated as absent.
Vector direction_lrsfn(const LowRankEig& eig, const Vector& g, double gamma);

// ---------------------------------------------------------------------------
// Iteration.

struct OptimizerState {
  Vector w;
  Index k = 0;
  Index work_units = 0;
  std::mt19937_64 rng;
  std::optional<LowRankEig> last_eig;
};

OptimizerState make_state(const Vector& w0, const OptimizerConfig& cfg);

struct StepInfo {
  SampleSet grad_batch;  // empty when the full data set was used
  SampleSet hess_batch;
  double alpha = 0.0;
  double step_norm = 0.0;
  Index work = 0;
};

// Work charged for one iteration: grad_batch for gd; grad_batch + 2 r
// hess_batch for lrsfn; grad_batch + d hess_batch for the dense methods.
Index work_per_iteration(const OptimizerConfig& cfg, const Objective& f);

// One update w += alpha p. Throws NumericalError for singular Newton systems
// or vanishing curvature.
StepInfo step(OptimizerState& state, const Objective& f, const OptimizerConfig& cfg);

struct TraceRecord {
  Index k = 0;
  double loss = 0.0;       // full-data objective at the iterate
  double grad_norm = 0.0;  // full-data gradient norm
  double step_norm = 0.0;
  Index work_units = 0;
  std::int64_t wall_ns = 0;
  bool diverged = false;
  std::vector<Index> grad_batch;
  std::vector<Index> hess_batch;
};

void to_json(nlohmann::json& j, const TraceRecord& r);
void write_trace_jsonl(std::ostream& os, const std::vector<TraceRecord>& trace);

enum class RunStatus { completed, diverged, failed };
std::string to_string(RunStatus s);

struct RunResult {
  std::vector<TraceRecord> trace;
  Vector best_w;
  double best_loss = 0.0;
  Index best_k = 0;
  Vector final_w;
  RunStatus status = RunStatus::completed;
  std::string message;
};

using IterationCallback = std::function<void(const OptimizerState&, const TraceRecord&)>;

// Loss above this (or any non-finite loss or iterate) marks a run diverged.
inline constexpr double kDivergenceLoss = 1e12;

// Runs max_iters steps from w0. The callback sees the initial record and
// every subsequent one. Step errors end the run with status failed.
RunResult run(const Objective& f, const OptimizerConfig& cfg, const Vector& w0,
              const IterationCallback& on_iteration = {});

}  // namespace sfn
