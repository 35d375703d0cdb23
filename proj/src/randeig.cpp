#include "sfn/randeig.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace sfn {

BlockOperator hessian_operator(const Objective& f, const Vector& w, const SampleSet& s) {
  return [&f, w, s](const Matrix& X) { return f.hess_mat(w, X, s); };
}

BlockOperator dense_operator(const Matrix& H) {
  return [H](const Matrix& X) -> Matrix { return H * X; };
}

Matrix gaussian_sketch(Index d, Index k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix M(d, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < d; ++i) M(i, j) = nd(rng);
  return M;
}

Matrix orthonormalize(const Matrix& Y, double rtol) {
  const Index d = Y.rows();
  Matrix Q(d, Y.cols());
  Index kept = 0;
  for (Index j = 0; j < Y.cols(); ++j) {
    Vector v = Y.col(j);
    const double n0 = v.norm();
    if (n0 == 0.0 || !std::isfinite(n0)) continue;
    for (int pass = 0; pass < 2; ++pass) {
      if (kept == 0) break;
      const auto Qk = Q.leftCols(kept);
      v -= Qk * (Qk.transpose() * v);
    }
    const double n1 = v.norm();
    if (n1 <= rtol * n0) continue;
    Q.col(kept++) = v / n1;
  }
  return Q.leftCols(kept);
}

namespace {

Index sketch_width(Index d, const RangeFinderConfig& cfg) {
  if (d < 1) throw std::invalid_argument("randeig: dimension must be positive");
  if (cfg.r < 1) throw std::invalid_argument("randeig: rank must be at least 1");
  if (cfg.r > d) throw std::invalid_argument("randeig: rank exceeds dimension");
  if (cfg.oversample < 0) throw std::invalid_argument("randeig: oversample must be >= 0");
  if (cfg.power_iters < 0) throw std::invalid_argument("randeig: power_iters must be >= 0");
  return std::min(d, cfg.r + cfg.oversample);
}

Matrix apply(const BlockOperator& op, const Matrix& X, Index* counter) {
  if (X.cols() == 0) return Matrix(X.rows(), 0);
  Matrix Y = op(X);
  if (Y.rows() != X.rows() || Y.cols() != X.cols())
    throw std::invalid_argument("randeig: operator returned a block of the wrong shape");
  if (counter) *counter += X.cols();
  return Y;
}

}  // namespace

Matrix randomized_range(const BlockOperator& op, Index d, const RangeFinderConfig& cfg,
                        Index* columns_used) {
  const Index k = sketch_width(d, cfg);
  Index used = 0;
  Matrix Q = orthonormalize(apply(op, gaussian_sketch(d, k, cfg.seed), &used));
  for (Index q = 0; q < cfg.power_iters; ++q) Q = orthonormalize(apply(op, Q, &used));
  if (columns_used) *columns_used = used;
  return Q;
}

LowRankEig eig_from_range(const Matrix& Q, const Matrix& HQ, Index r) {
  const Index d = Q.rows();
  if (Q.cols() == 0) return LowRankEig::empty(d);
  Matrix T = Q.transpose() * HQ;
  T = 0.5 * (T + T.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(T);
  if (es.info() != Eigen::Success) throw NumericalError("randeig: small eigenproblem failed");
  const Vector& ev = es.eigenvalues();
  std::vector<Index> order(static_cast<std::size_t>(ev.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double fa = std::abs(ev(a)), fb = std::abs(ev(b));
    return fa != fb ? fa > fb : ev(a) > ev(b);
  });
  const Index keep = std::min<Index>(r, ev.size());
  Matrix V(ev.size(), keep);
  LowRankEig out;
  out.lambdas.resize(keep);
  for (Index j = 0; j < keep; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.lambdas(j) = ev(src);
    V.col(j) = es.eigenvectors().col(src);
  }
  out.U = Q * V;
  return out;
}

LowRankEig eig_from_range(const BlockOperator& op, const Matrix& Q, Index r) {
  Index used = 0;
  const Matrix HQ = apply(op, Q, &used);
  LowRankEig out = eig_from_range(Q, HQ, r);
  out.columns_used = used;
  return out;
}

LowRankEig randomized_eig(const BlockOperator& op, Index d, const RangeFinderConfig& cfg) {
  Index used = 0;
  const Matrix Q = randomized_range(op, d, cfg, &used);
  LowRankEig out = eig_from_range(op, Q, cfg.r);
  out.columns_used += used;
  return out;
}

LowRankEig dense_top_eig(const Matrix& H, Index r) {
  if (H.rows() != H.cols()) throw std::invalid_argument("dense_top_eig: matrix must be square");
  const Index d = H.rows();
  const Matrix I = Matrix::Identity(d, d);
  return eig_from_range(I, H, std::min(r, d));
}

LowRankEig adaptive_rank(const BlockOperator& op, Index d, double tol, Index block,
                         Index max_rank, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("adaptive_rank: dimension must be positive");
  if (!(tol > 0.0)) throw std::invalid_argument("adaptive_rank: tol must be positive");
  if (block < 1) throw std::invalid_argument("adaptive_rank: block must be at least 1");
  if (max_rank < 1) throw std::invalid_argument("adaptive_rank: max_rank must be at least 1");
  max_rank = std::min(max_rank, d);

  Matrix Q(d, 0), HQ(d, 0);
  Index used = 0;
  double norm_est = 0.0;
  bool met = false;
  for (std::uint64_t round = 0;; ++round) {
    const Index b = std::min(block, d - Q.cols());
    if (b <= 0) {
      met = true;  // Q spans everything
      break;
    }
    Matrix Y = apply(op, gaussian_sketch(d, b, seed + round), &used);
    for (int pass = 0; pass < 2 && Q.cols() > 0; ++pass) Y -= Q * (Q.transpose() * Y);
    const double resid = Y.colwise().norm().maxCoeff();
    if (Q.cols() == 0 && resid == 0.0) {
      met = true;  // zero operator
      break;
    }
    if (Q.cols() > 0 && resid <= tol * norm_est) {
      met = true;
      break;
    }
    if (Q.cols() >= max_rank) break;

    Matrix Qn = orthonormalize(Y);
    if (Q.cols() > 0) {
      Qn -= Q * (Q.transpose() * Qn);
      Qn = orthonormalize(Qn);
    }
    const Index room = max_rank - Q.cols();
    if (Qn.cols() > room) Qn = Qn.leftCols(room).eval();
    if (Qn.cols() == 0) {
      met = true;
      break;
    }
    const Matrix HQn = apply(op, Qn, &used);
    Q.conservativeResize(Eigen::NoChange, Q.cols() + Qn.cols());
    Q.rightCols(Qn.cols()) = Qn;
    HQ.conservativeResize(Eigen::NoChange, HQ.cols() + HQn.cols());
    HQ.rightCols(HQn.cols()) = HQn;

    Matrix T = Q.transpose() * HQ;
    T = 0.5 * (T + T.transpose()).eval();
    norm_est = Eigen::SelfAdjointEigenSolver<Matrix>(T, Eigen::EigenvaluesOnly)
                   .eigenvalues()
                   .cwiseAbs()
                   .maxCoeff();
  }

  LowRankEig out = eig_from_range(Q, HQ, Q.cols());
  out.columns_used = used;
  out.tolerance_met = met;
  return out;
}

double lowrank_residual_norm(const BlockOperator& op, const LowRankEig& eig, Index probes,
                             std::uint64_t seed, int iterations) {
  if (probes < 1) throw std::invalid_argument("lowrank_residual_norm: probes must be >= 1");
  const Index d = eig.dim();
  const auto residual = [&](const Matrix& X) -> Matrix {
    Matrix Y = op(X);
    if (eig.rank() > 0) Y -= eig.U * (eig.lambdas.asDiagonal() * (eig.U.transpose() * X));
    return Y;
  };
  Matrix X = orthonormalize(gaussian_sketch(d, std::min(probes, d), seed));
  double est = 0.0;
  for (int it = 0; it <= iterations; ++it) {
    const Matrix Y = residual(X);
    est = Y.cols() ? Y.colwise().norm().maxCoeff() : 0.0;
    if (est == 0.0 || it == iterations) break;
    X = orthonormalize(Y);
    if (X.cols() == 0) break;
  }
  return est;
}

nlohmann::json spectrum_json(const LowRankEig& eig, bool include_U) {
  nlohmann::json j;
  j["d"] = eig.dim();
  j["r"] = eig.rank();
  j["lambdas"] = std::vector<double>(eig.lambdas.data(), eig.lambdas.data() + eig.rank());
  if (include_U) {
    nlohmann::json cols = nlohmann::json::array();
    for (Index c = 0; c < eig.U.cols(); ++c)
      cols.push_back(std::vector<double>(eig.U.col(c).data(), eig.U.col(c).data() + eig.dim()));
    j["U"] = std::move(cols);
  }
  return j;
}

LowRankEig spectrum_from_json(const nlohmann::json& j) {
  const Index d = j.at("d").get<Index>();
  const auto lam = j.at("lambdas").get<std::vector<double>>();
  LowRankEig out;
  out.lambdas = Eigen::Map<const Vector>(lam.data(), static_cast<Index>(lam.size()));
  out.U = Matrix::Zero(d, static_cast<Index>(lam.size()));
  if (j.contains("U")) {
    const auto& cols = j.at("U");
    if (cols.size() != lam.size()) throw std::invalid_argument("spectrum: U/lambdas mismatch");
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto col = cols[c].get<std::vector<double>>();
      if (static_cast<Index>(col.size()) != d) throw std::invalid_argument("spectrum: bad U column");
      out.U.col(static_cast<Index>(c)) = Eigen::Map<const Vector>(col.data(), d);
    }
  }
  return out;
}

}  // namespace sfn
