#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfn/types.hpp"

namespace sfn {

/// List of 0-based sample indices into a finite-sum objective. A
/// default-constructed (empty) set stands for the full data set.
class SampleSet {
 public:
  SampleSet() = default;
  explicit SampleSet(std::vector<Index> indices) : indices_(std::move(indices)) {}

  static SampleSet all(Index n);
  static SampleSet single(Index i) { return SampleSet(std::vector<Index>{i}); }

  std::span<const Index> indices() const { return indices_; }
  Index size() const { return static_cast<Index>(indices_.size()); }
  bool empty() const { return indices_.empty(); }
  Index operator[](Index k) const { return indices_[static_cast<std::size_t>(k)]; }

  friend bool operator==(const SampleSet&, const SampleSet&) = default;

 private:
  std::vector<Index> indices_;
};

/// Gradient batch X_k and Hessian batch S_k for one iteration.
struct BatchSpec {
  SampleSet grad;
  SampleSet hess;

  static BatchSpec full(Index n) { return {SampleSet::all(n), SampleSet::all(n)}; }
};

/// Draws `count` distinct indices uniformly from {0..n-1}. count == n returns
/// the full set in order.
SampleSet draw_without_replacement(Index n, Index count, std::mt19937_64& rng);

/// Objective F(w) = mean over samples of l_i(w). Deterministic problems have a
/// single sample. Implementations are immutable after construction and safe
/// to evaluate concurrently.
///
/// The public entry points check dimensions and sample indices (throwing
/// std::invalid_argument / std::out_of_range) and then dispatch to the
/// protected *_impl hooks with a resolved, non-empty sample set.
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::string name() const = 0;
  virtual Index dim() const = 0;
  virtual Index num_samples() const { return 1; }
  virtual bool has_dense_hessian() const { return dim() <= kDenseHessianLimit; }

  double value(const Vector& w, const SampleSet& s = {}) const;
  Vector gradient(const Vector& w, const SampleSet& s = {}) const;
  Vector hess_vec(const Vector& w, const Vector& v, const SampleSet& s = {}) const;
  // Column i equals hess_vec(w, V.col(i), s). Columns are spread over the
  // worker pool; the result does not depend on the partitioning.
  Matrix hess_mat(const Vector& w, const Matrix& V, const SampleSet& s = {}) const;
  Matrix dense_hessian(const Vector& w, const SampleSet& s = {}) const;

  SampleSet all_samples() const { return SampleSet::all(num_samples()); }

  static constexpr Index kDenseHessianLimit = 2000;

 protected:
  virtual double value_impl(const Vector& w, const SampleSet& s) const = 0;
  virtual Vector gradient_impl(const Vector& w, const SampleSet& s) const = 0;
  // Default: central difference of the gradient along v/||v|| with step
  // sqrt(eps) * (1 + ||w||).
  virtual Vector hess_vec_impl(const Vector& w, const Vector& v, const SampleSet& s) const;
  virtual Matrix hess_mat_impl(const Vector& w, const Matrix& V, const SampleSet& s) const;
  virtual Matrix dense_hessian_impl(const Vector& w, const SampleSet& s) const;

 private:
  SampleSet resolve(const SampleSet& s) const;
  void check_point(const Vector& w) const;
};

using ObjectivePtr = std::shared_ptr<const Objective>;

// ---------------------------------------------------------------------------
// Analytic test problems.

double michalewicz_value(const Vector& w);
double rosenbrock_value(const Vector& w);

/// F(w) = -sum_j sin(w_j) sin^20(j w_j^2 / pi), j = 1..d. Separable, so the
/// Hessian is diagonal.
class Michalewicz final : public Objective {
 public:
  explicit Michalewicz(Index d);
  std::string name() const override { return "michalewicz"; }
  Index dim() const override { return d_; }

  Vector hessian_diagonal(const Vector& w) const;

 protected:
  double value_impl(const Vector& w, const SampleSet& s) const override;
  Vector gradient_impl(const Vector& w, const SampleSet& s) const override;
  Vector hess_vec_impl(const Vector& w, const Vector& v, const SampleSet& s) const override;
  Matrix dense_hessian_impl(const Vector& w, const SampleSet& s) const override;

 private:
  Index d_;
};

/// F(w) = sum_{j<d} 100 (w_{j+1} - w_j^2)^2 + (1 - w_j)^2. Tridiagonal Hessian.
class Rosenbrock final : public Objective {
 public:
  explicit Rosenbrock(Index d);
  std::string name() const override { return "rosenbrock"; }
  Index dim() const override { return d_; }

 protected:
  double value_impl(const Vector& w, const SampleSet& s) const override;
  Vector gradient_impl(const Vector& w, const SampleSet& s) const override;
  Vector hess_vec_impl(const Vector& w, const Vector& v, const SampleSet& s) const override;
  Matrix dense_hessian_impl(const Vector& w, const SampleSet& s) const override;

 private:
  Index d_;
};

/// Deterministic quadratic 1/2 w^T A w - b^T w with symmetric A.
class Quadratic final : public Objective {
 public:
  Quadratic(Matrix A, Vector b);
  std::string name() const override { return "quadratic"; }
  Index dim() const override { return b_.size(); }

  const Matrix& A() const { return A_; }
  const Vector& b() const { return b_; }

 protected:
  double value_impl(const Vector& w, const SampleSet& s) const override;
  Vector gradient_impl(const Vector& w, const SampleSet& s) const override;
  Vector hess_vec_impl(const Vector& w, const Vector& v, const SampleSet& s) const override;
  Matrix dense_hessian_impl(const Vector& w, const SampleSet& s) const override;

 private:
  Matrix A_;
  Vector b_;
};

/// User objective given by value and gradient callbacks; Hessian products
/// use the finite-difference fallback.
class FunctionObjective final : public Objective {
 public:
  using ValueFn = std::function<double(const Vector&)>;
  using GradFn = std::function<Vector(const Vector&)>;
  FunctionObjective(std::string name, Index d, ValueFn value, GradFn grad);
  std::string name() const override { return name_; }
  Index dim() const override { return d_; }

 protected:
  double value_impl(const Vector& w, const SampleSet& s) const override;
  Vector gradient_impl(const Vector& w, const SampleSet& s) const override;

 private:
  std::string name_;
  Index d_;
  ValueFn value_;
  GradFn grad_;
};

// ---------------------------------------------------------------------------
// Finite-sum problems.

/// Base for objectives that are a mean of per-sample terms. Subclasses
/// implement the per-sample pieces; batch versions average over the set.
class FiniteSumObjective : public Objective {
 public:
  virtual double sample_value(const Vector& w, Index i) const = 0;
  virtual Vector sample_gradient(const Vector& w, Index i) const = 0;
  virtual Vector sample_hess_vec(const Vector& w, const Vector& v, Index i) const = 0;
  virtual Matrix sample_hessian(const Vector& w, Index i) const = 0;

 protected:
  double value_impl(const Vector& w, const SampleSet& s) const override;
  Vector gradient_impl(const Vector& w, const SampleSet& s) const override;
  Vector hess_vec_impl(const Vector& w, const Vector& v, const SampleSet& s) const override;
  Matrix dense_hessian_impl(const Vector& w, const SampleSet& s) const override;
};

/// Per-sample loss l_i(w) = 1/2 ||A_i w - b_i||^2 + lambda/4 (||w||^2 - 1)^2,
/// with A_i = A_0 + noise * G_i / sqrt(d) and b_i = b_0 + noise * h_i drawn
/// from a seeded Gaussian stream. The quartic double well makes the problem
/// nonconvex around the origin once lambda exceeds sigma_min(A_0)^2.
class FiniteSumSurrogate final : public FiniteSumObjective {
 public:
  FiniteSumSurrogate(Index d, Index n, double noise, std::uint64_t seed, double lambda = 1.0);

  std::string name() const override { return "finite-sum"; }
  Index dim() const override { return d_; }
  Index num_samples() const override { return n_; }

  double sample_value(const Vector& w, Index i) const override;
  Vector sample_gradient(const Vector& w, Index i) const override;
  Vector sample_hess_vec(const Vector& w, const Vector& v, Index i) const override;
  Matrix sample_hessian(const Vector& w, Index i) const override;

  double noise() const { return noise_; }
  std::uint64_t seed() const { return seed_; }
  double lambda() const { return lambda_; }

 private:
  Index d_;
  Index n_;
  double noise_;
  std::uint64_t seed_;
  double lambda_;
  std::vector<Matrix> A_;
  Matrix b_;  // d x n, column i is b_i
};

/// Stochastic quadratic l_i(w) = 1/2 w^T A_i w - b_i^T w where the A_i and
/// b_i are centered perturbations of A and b, so the full-data Hessian is A
/// and the minimizer is A^{-1} b. A = Q diag(spectrum) Q^T with a seeded
/// random orthogonal Q.
class QuadraticFiniteSum final : public FiniteSumObjective {
 public:
  QuadraticFiniteSum(const Vector& spectrum, Index n, double hess_noise, double grad_noise,
                     std::uint64_t seed);

  std::string name() const override { return "quadratic"; }
  Index dim() const override { return b_.size(); }
  Index num_samples() const override { return n_; }

  double sample_value(const Vector& w, Index i) const override;
  Vector sample_gradient(const Vector& w, Index i) const override;
  Vector sample_hess_vec(const Vector& w, const Vector& v, Index i) const override;
  Matrix sample_hessian(const Vector& w, Index i) const override;

  const Matrix& A() const { return A_; }
  const Vector& b() const { return b_; }
  const Vector& spectrum() const { return spectrum_; }
  Vector minimizer() const;

 private:
  Index n_;
  Vector spectrum_;
  Matrix A_;
  Vector b_;
  std::vector<Matrix> Ai_;
  Matrix bi_;
};

ObjectivePtr make_finite_sum_problem(Index d, Index n, double noise, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Problem selection by name.

struct ProblemSpec {
  std::string name = "rosenbrock";  // michalewicz | rosenbrock | finite-sum | quadratic
  Index d = 10;
  Index n = 1;
  double noise = 0.0;
  std::uint64_t seed = 0;
  double lambda = 1.0;  // finite-sum quartic weight
  double cond = 10.0;   // quadratic condition number, spectrum geometric in [1/cond, 1]

  friend bool operator==(const ProblemSpec&, const ProblemSpec&) = default;
};

ObjectivePtr make_problem(const ProblemSpec& spec);

void to_json(nlohmann::json& j, const ProblemSpec& p);
void from_json(const nlohmann::json& j, ProblemSpec& p);

}  // namespace sfn
