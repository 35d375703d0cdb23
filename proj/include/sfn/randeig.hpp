#pragma once

#include <cstdint>
#include <functional>

#include <json.hpp>

#include "sfn/oracle.hpp"
#include "sfn/types.hpp"

namespace sfn {

// Symmetric operator seen only through block products X -> H X.
using BlockOperator = std::function<Matrix(const Matrix&)>;

BlockOperator hessian_operator(const Objective& f, const Vector& w, const SampleSet& s = {});
BlockOperator dense_operator(const Matrix& H);

// Rank-r eigenpairs H ~ U diag(lambdas) U^T, sorted by descending |lambda|.
struct LowRankEig {
  Matrix U;
  Vector lambdas;
  // Operator columns consumed while building this (sketch + projection + power passes).
  Index columns_used = 0;
  // False when adaptive_rank hit max_rank before reaching its tolerance.
  bool tolerance_met = true;

  Index rank() const { return lambdas.size(); }
  Index dim() const { return U.rows(); }
  static LowRankEig empty(Index d) { return {Matrix(d, 0), Vector(0), 0, true}; }
};

struct RangeFinderConfig {
  Index r = 1;
  Index oversample = 10;  // clamped so r + oversample <= d
  Index power_iters = 0;
  std::uint64_t seed = 0;
};

// d x k matrix of independent standard normals, filled column by column.
Matrix gaussian_sketch(Index d, Index k, std::uint64_t seed);

// Gram-Schmidt with one reorthogonalization pass. Columns whose norm after
// projection falls below rtol times their original norm (or are exactly
// zero) are dropped, so the result may be narrower than Y.
Matrix orthonormalize(const Matrix& Y, double rtol = 1e-10);

// Q spanning the dominant range of the operator. columns_used (optional)
// receives the number of operator columns consumed.
Matrix randomized_range(const BlockOperator& op, Index d, const RangeFinderConfig& cfg,
                        Index* columns_used = nullptr);

// T = Q^T (H Q), symmetrized, dense eig, top r by |lambda|, U = Q V.
LowRankEig eig_from_range(const BlockOperator& op, const Matrix& Q, Index r);
LowRankEig eig_from_range(const Matrix& Q, const Matrix& HQ, Index r);

// randomized_range followed by eig_from_range.
LowRankEig randomized_eig(const BlockOperator& op, Index d, const RangeFinderConfig& cfg);

// Exact top-r eigenpairs of a dense symmetric matrix, same ordering contract.
LowRankEig dense_top_eig(const Matrix& H, Index r);

// Grows the range in blocks of `block` Gaussian columns until the largest
// column norm of (I - QQ^T) H Omega_new is at most tol * ||H||_est, where
// ||H||_est = max |eig(Q^T H Q)|. Stops at max_rank with tolerance_met = false.
LowRankEig adaptive_rank(const BlockOperator& op, Index d, double tol, Index block,
                         Index max_rank, std::uint64_t seed);

// Block subspace iteration on R = H - U diag(lambdas) U^T with `probes`
// starting vectors; returns max ||R x_i|| over the final orthonormal block.
double lowrank_residual_norm(const BlockOperator& op, const LowRankEig& eig, Index probes,
                             std::uint64_t seed, int iterations = 30);

// {d, r, lambdas[, U]} with U stored column-major as a list of columns.
nlohmann::json spectrum_json(const LowRankEig& eig, bool include_U = false);
LowRankEig spectrum_from_json(const nlohmann::json& j);

}  // namespace sfn
