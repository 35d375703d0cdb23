#include "sfn/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "sfn/parallel.hpp"

namespace sfn {

namespace {

constexpr double kPi = 3.14159265358979323846;

Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix M(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) M(i, j) = nd(rng);
  return M;
}

Matrix random_orthogonal(Index d, std::mt19937_64& rng) {
  Matrix G = gaussian_matrix(d, d, rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ() * Matrix::Identity(d, d);
  // Fix column signs so Q is Haar distributed.
  const Matrix R = qr.matrixQR();
  for (Index j = 0; j < d; ++j)
    if (R(j, j) < 0) Q.col(j) = -Q.col(j);
  return Q;
}

// Per-coordinate Michalewicz term f(x) = sin(x) sin^20(j x^2 / pi) and its
// first two derivatives.
struct MichTerm {
  double f, df, d2f;
};

MichTerm michalewicz_term(double x, Index j) {
  const double a = static_cast<double>(j) / kPi;
  const double u = a * x * x;
  const double s = std::sin(u);
  const double c = std::cos(u);
  const double du = 2.0 * a * x;
  const double d2u = 2.0 * a;
  const double s18 = std::pow(s, 18);
  const double h = s18 * s * s;
  const double dh = 20.0 * s18 * s * c * du;
  const double d2h = 20.0 * s18 * (19.0 * c * c * du * du - s * s * du * du + s * c * d2u);
  const double sx = std::sin(x);
  const double cx = std::cos(x);
  return {sx * h, cx * h + sx * dh, -sx * h + 2.0 * cx * dh + sx * d2h};
}

}  // namespace

// ---------------------------------------------------------------------------

SampleSet SampleSet::all(Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(std::max<Index>(n, 0)));
  std::iota(idx.begin(), idx.end(), Index{0});
  return SampleSet(std::move(idx));
}

SampleSet draw_without_replacement(Index n, Index count, std::mt19937_64& rng) {
  if (n <= 0) throw std::invalid_argument("draw_without_replacement: n must be positive");
  if (count <= 0 || count > n)
    throw std::invalid_argument("draw_without_replacement: count must be in [1, n]");
  if (count == n) return SampleSet::all(n);
  // Partial Fisher-Yates.
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index k = 0; k < count; ++k) {
    std::uniform_int_distribution<Index> pick(k, n - 1);
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return SampleSet(std::move(pool));
}

// ---------------------------------------------------------------------------

SampleSet Objective::resolve(const SampleSet& s) const {
  const Index n = num_samples();
  if (s.empty()) return SampleSet::all(n);
  for (Index i : s.indices())
    if (i < 0 || i >= n) {
      std::ostringstream msg;
      msg << name() << ": sample index " << i << " out of range [0, " << n << ")";
      throw std::out_of_range(msg.str());
    }
  return s;
}

void Objective::check_point(const Vector& w) const {
  if (w.size() != dim()) {
    std::ostringstream msg;
    msg << name() << ": point has dimension " << w.size() << ", expected " << dim();
    throw std::invalid_argument(msg.str());
  }
}

double Objective::value(const Vector& w, const SampleSet& s) const {
  check_point(w);
  return value_impl(w, resolve(s));
}

Vector Objective::gradient(const Vector& w, const SampleSet& s) const {
  check_point(w);
  return gradient_impl(w, resolve(s));
}

Vector Objective::hess_vec(const Vector& w, const Vector& v, const SampleSet& s) const {
  check_point(w);
  if (v.size() != dim()) throw std::invalid_argument(name() + ": direction has wrong dimension");
  return hess_vec_impl(w, v, resolve(s));
}

Matrix Objective::hess_mat(const Vector& w, const Matrix& V, const SampleSet& s) const {
  check_point(w);
  if (V.rows() != dim()) throw std::invalid_argument(name() + ": block has wrong row count");
  return hess_mat_impl(w, V, resolve(s));
}

Matrix Objective::dense_hessian(const Vector& w, const SampleSet& s) const {
  check_point(w);
  if (!has_dense_hessian())
    throw std::invalid_argument(name() + ": dense Hessian unavailable at this dimension");
  Matrix H = dense_hessian_impl(w, resolve(s));
  return 0.5 * (H + H.transpose());
}

Vector Objective::hess_vec_impl(const Vector& w, const Vector& v, const SampleSet& s) const {
  const double vn = v.norm();
  if (vn == 0.0) return Vector::Zero(dim());
  const double h = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + w.norm());
  const Vector u = v / vn;
  const Vector gp = gradient_impl(w + h * u, s);
  const Vector gm = gradient_impl(w - h * u, s);
  return (gp - gm) * (vn / (2.0 * h));
}

Matrix Objective::hess_mat_impl(const Vector& w, const Matrix& V, const SampleSet& s) const {
  Matrix out(dim(), V.cols());
  parallel_for(static_cast<std::size_t>(V.cols()), [&](std::size_t c) {
    const auto j = static_cast<Index>(c);
    out.col(j) = hess_vec_impl(w, V.col(j), s);
  });
  return out;
}

Matrix Objective::dense_hessian_impl(const Vector& w, const SampleSet& s) const {
  return hess_mat_impl(w, Matrix::Identity(dim(), dim()), s);
}

// ---------------------------------------------------------------------------

double michalewicz_value(const Vector& w) {
  double f = 0.0;
  for (Index j = 0; j < w.size(); ++j) f -= michalewicz_term(w(j), j + 1).f;
  return f;
}

double rosenbrock_value(const Vector& w) {
  if (w.size() < 2) throw std::invalid_argument("rosenbrock: dimension must be at least 2");
  double f = 0.0;
  for (Index j = 0; j + 1 < w.size(); ++j) {
    const double t = w(j + 1) - w(j) * w(j);
    const double u = 1.0 - w(j);
    f += 100.0 * t * t + u * u;
  }
  return f;
}

Michalewicz::Michalewicz(Index d) : d_(d) {
  if (d < 1) throw std::invalid_argument("michalewicz: dimension must be positive");
}

double Michalewicz::value_impl(const Vector& w, const SampleSet&) const {
  return michalewicz_value(w);
}

Vector Michalewicz::gradient_impl(const Vector& w, const SampleSet&) const {
  Vector g(d_);
  for (Index j = 0; j < d_; ++j) g(j) = -michalewicz_term(w(j), j + 1).df;
  return g;
}

Vector Michalewicz::hessian_diagonal(const Vector& w) const {
  if (w.size() != d_) throw std::invalid_argument("michalewicz: point has wrong dimension");
  Vector h(d_);
  for (Index j = 0; j < d_; ++j) h(j) = -michalewicz_term(w(j), j + 1).d2f;
  return h;
}

Vector Michalewicz::hess_vec_impl(const Vector& w, const Vector& v, const SampleSet&) const {
  return hessian_diagonal(w).cwiseProduct(v);
}

Matrix Michalewicz::dense_hessian_impl(const Vector& w, const SampleSet&) const {
  return hessian_diagonal(w).asDiagonal();
}

Rosenbrock::Rosenbrock(Index d) : d_(d) {
  if (d < 2) throw std::invalid_argument("rosenbrock: dimension must be at least 2");
}

double Rosenbrock::value_impl(const Vector& w, const SampleSet&) const {
  return rosenbrock_value(w);
}

Vector Rosenbrock::gradient_impl(const Vector& w, const SampleSet&) const {
  Vector g = Vector::Zero(d_);
  for (Index j = 0; j + 1 < d_; ++j) {
    const double t = w(j + 1) - w(j) * w(j);
    g(j) += -400.0 * w(j) * t - 2.0 * (1.0 - w(j));
    g(j + 1) += 200.0 * t;
  }
  return g;
}

Vector Rosenbrock::hess_vec_impl(const Vector& w, const Vector& v, const SampleSet&) const {
  Vector out = Vector::Zero(d_);
  for (Index j = 0; j + 1 < d_; ++j) {
    const double hjj = 1200.0 * w(j) * w(j) - 400.0 * w(j + 1) + 2.0;
    const double off = -400.0 * w(j);
    out(j) += hjj * v(j) + off * v(j + 1);
    out(j + 1) += off * v(j) + 200.0 * v(j + 1);
  }
  return out;
}

Matrix Rosenbrock::dense_hessian_impl(const Vector& w, const SampleSet&) const {
  Matrix H = Matrix::Zero(d_, d_);
  for (Index j = 0; j + 1 < d_; ++j) {
    H(j, j) += 1200.0 * w(j) * w(j) - 400.0 * w(j + 1) + 2.0;
    H(j, j + 1) = H(j + 1, j) = -400.0 * w(j);
    H(j + 1, j + 1) += 200.0;
  }
  return H;
}

Quadratic::Quadratic(Matrix A, Vector b) : A_(std::move(A)), b_(std::move(b)) {
  if (A_.rows() != A_.cols() || A_.rows() != b_.size())
    throw std::invalid_argument("quadratic: A must be square and match b");
  if (b_.size() < 1) throw std::invalid_argument("quadratic: empty problem");
  A_ = 0.5 * (A_ + A_.transpose()).eval();
}

double Quadratic::value_impl(const Vector& w, const SampleSet&) const {
  return 0.5 * w.dot(A_ * w) - b_.dot(w);
}

Vector Quadratic::gradient_impl(const Vector& w, const SampleSet&) const { return A_ * w - b_; }

Vector Quadratic::hess_vec_impl(const Vector&, const Vector& v, const SampleSet&) const {
  return A_ * v;
}

Matrix Quadratic::dense_hessian_impl(const Vector&, const SampleSet&) const { return A_; }

FunctionObjective::FunctionObjective(std::string name, Index d, ValueFn value, GradFn grad)
    : name_(std::move(name)), d_(d), value_(std::move(value)), grad_(std::move(grad)) {
  if (d < 1) throw std::invalid_argument("function objective: dimension must be positive");
  if (!value_ || !grad_) throw std::invalid_argument("function objective: missing callback");
}

double FunctionObjective::value_impl(const Vector& w, const SampleSet&) const { return value_(w); }

Vector FunctionObjective::gradient_impl(const Vector& w, const SampleSet&) const {
  Vector g = grad_(w);
  if (g.size() != d_) throw std::invalid_argument(name_ + ": gradient callback has wrong size");
  return g;
}

// ---------------------------------------------------------------------------

double FiniteSumObjective::value_impl(const Vector& w, const SampleSet& s) const {
  double acc = 0.0;
  for (Index i : s.indices()) acc += sample_value(w, i);
  return acc / static_cast<double>(s.size());
}

Vector FiniteSumObjective::gradient_impl(const Vector& w, const SampleSet& s) const {
  Vector acc = Vector::Zero(dim());
  for (Index i : s.indices()) acc += sample_gradient(w, i);
  return acc / static_cast<double>(s.size());
}

Vector FiniteSumObjective::hess_vec_impl(const Vector& w, const Vector& v,
                                         const SampleSet& s) const {
  Vector acc = Vector::Zero(dim());
  for (Index i : s.indices()) acc += sample_hess_vec(w, v, i);
  return acc / static_cast<double>(s.size());
}

Matrix FiniteSumObjective::dense_hessian_impl(const Vector& w, const SampleSet& s) const {
  Matrix acc = Matrix::Zero(dim(), dim());
  for (Index i : s.indices()) acc += sample_hessian(w, i);
  return acc / static_cast<double>(s.size());
}

FiniteSumSurrogate::FiniteSumSurrogate(Index d, Index n, double noise, std::uint64_t seed,
                                       double lambda)
    : d_(d), n_(n), noise_(noise), seed_(seed), lambda_(lambda) {
  if (d < 1) throw std::invalid_argument("finite-sum: dimension must be positive");
  if (n < 1) throw std::invalid_argument("finite-sum: sample count must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise))
    throw std::invalid_argument("finite-sum: noise must be finite and non-negative");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("finite-sum: lambda must be finite and non-negative");

  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Matrix A0 = Matrix::Identity(d, d) + 0.5 * scale * gaussian_matrix(d, d, rng);
  const Vector b0 = gaussian_matrix(d, 1, rng);
  A_.reserve(static_cast<std::size_t>(n));
  b_.resize(d, n);
  for (Index i = 0; i < n; ++i) {
    A_.push_back(A0 + noise * scale * gaussian_matrix(d, d, rng));
    b_.col(i) = b0 + noise * gaussian_matrix(d, 1, rng);
  }
}

double FiniteSumSurrogate::sample_value(const Vector& w, Index i) const {
  const Vector r = A_[static_cast<std::size_t>(i)] * w - b_.col(i);
  const double q = w.squaredNorm() - 1.0;
  return 0.5 * r.squaredNorm() + 0.25 * lambda_ * q * q;
}

Vector FiniteSumSurrogate::sample_gradient(const Vector& w, Index i) const {
  const Matrix& A = A_[static_cast<std::size_t>(i)];
  const double q = w.squaredNorm() - 1.0;
  return A.transpose() * (A * w - b_.col(i)) + lambda_ * q * w;
}

Vector FiniteSumSurrogate::sample_hess_vec(const Vector& w, const Vector& v, Index i) const {
  const Matrix& A = A_[static_cast<std::size_t>(i)];
  const double q = w.squaredNorm() - 1.0;
  return A.transpose() * (A * v) + lambda_ * (q * v + 2.0 * w * w.dot(v));
}

Matrix FiniteSumSurrogate::sample_hessian(const Vector& w, Index i) const {
  const Matrix& A = A_[static_cast<std::size_t>(i)];
  const double q = w.squaredNorm() - 1.0;
  Matrix H = A.transpose() * A;
  H.diagonal().array() += lambda_ * q;
  H.noalias() += 2.0 * lambda_ * w * w.transpose();
  return H;
}

QuadraticFiniteSum::QuadraticFiniteSum(const Vector& spectrum, Index n, double hess_noise,
                                       double grad_noise, std::uint64_t seed)
    : n_(n), spectrum_(spectrum) {
  const Index d = spectrum.size();
  if (d < 1) throw std::invalid_argument("quadratic: empty spectrum");
  if (n < 1) throw std::invalid_argument("quadratic: sample count must be positive");
  if (!spectrum.allFinite()) throw std::invalid_argument("quadratic: spectrum must be finite");
  if (!(hess_noise >= 0.0) || !(grad_noise >= 0.0))
    throw std::invalid_argument("quadratic: noise levels must be non-negative");

  std::mt19937_64 rng(seed);
  const Matrix Q = random_orthogonal(d, rng);
  A_ = Q * spectrum.asDiagonal() * Q.transpose();
  A_ = 0.5 * (A_ + A_.transpose()).eval();
  b_ = gaussian_matrix(d, 1, rng);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Matrix> E(static_cast<std::size_t>(n));
  Matrix Emean = Matrix::Zero(d, d);
  bi_.resize(d, n);
  for (Index i = 0; i < n; ++i) {
    const Matrix G = gaussian_matrix(d, d, rng);
    E[static_cast<std::size_t>(i)] = 0.5 * scale * (G + G.transpose());
    Emean += E[static_cast<std::size_t>(i)];
    bi_.col(i) = gaussian_matrix(d, 1, rng);
  }
  Emean /= static_cast<double>(n);
  const Vector emean = bi_.rowwise().mean();
  Ai_.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Ai_.push_back(A_ + hess_noise * (E[static_cast<std::size_t>(i)] - Emean));
    bi_.col(i) = b_ + grad_noise * (bi_.col(i) - emean);
  }
}

double QuadraticFiniteSum::sample_value(const Vector& w, Index i) const {
  return 0.5 * w.dot(Ai_[static_cast<std::size_t>(i)] * w) - bi_.col(i).dot(w);
}

Vector QuadraticFiniteSum::sample_gradient(const Vector& w, Index i) const {
  return Ai_[static_cast<std::size_t>(i)] * w - bi_.col(i);
}

Vector QuadraticFiniteSum::sample_hess_vec(const Vector&, const Vector& v, Index i) const {
  return Ai_[static_cast<std::size_t>(i)] * v;
}

Matrix QuadraticFiniteSum::sample_hessian(const Vector&, Index i) const {
  return Ai_[static_cast<std::size_t>(i)];
}

Vector QuadraticFiniteSum::minimizer() const { return A_.ldlt().solve(b_); }

ObjectivePtr make_finite_sum_problem(Index d, Index n, double noise, std::uint64_t seed) {
  return std::make_shared<FiniteSumSurrogate>(d, n, noise, seed);
}

// ---------------------------------------------------------------------------

ObjectivePtr make_problem(const ProblemSpec& spec) {
  if (spec.name == "michalewicz") return std::make_shared<Michalewicz>(spec.d);
  if (spec.name == "rosenbrock") return std::make_shared<Rosenbrock>(spec.d);
  if (spec.name == "finite-sum")
    return std::make_shared<FiniteSumSurrogate>(spec.d, spec.n, spec.noise, spec.seed,
                                                spec.lambda);
  if (spec.name == "quadratic") {
    if (!(spec.cond >= 1.0)) throw std::invalid_argument("quadratic: cond must be >= 1");
    Vector spectrum(spec.d);
    for (Index j = 0; j < spec.d; ++j) {
      const double t = spec.d > 1 ? static_cast<double>(j) / static_cast<double>(spec.d - 1) : 0.0;
      spectrum(j) = std::pow(spec.cond, -t);
    }
    return std::make_shared<QuadraticFiniteSum>(spectrum, spec.n, spec.noise, spec.noise,
                                                spec.seed);
  }
  throw std::invalid_argument("unknown problem '" + spec.name +
                              "' (expected michalewicz, rosenbrock, finite-sum or quadratic)");
}

void to_json(nlohmann::json& j, const ProblemSpec& p) {
  j = nlohmann::json{{"name", p.name},   {"d", p.d},           {"n", p.n},
                     {"noise", p.noise}, {"seed", p.seed},     {"lambda", p.lambda},
                     {"cond", p.cond}};
}

void from_json(const nlohmann::json& j, ProblemSpec& p) {
  static const std::set<std::string> known = {"name", "d", "n", "noise", "seed", "lambda", "cond"};
  if (!j.is_object()) throw std::invalid_argument("problem must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw std::invalid_argument("unknown problem field '" + key + "'");
  ProblemSpec def;
  p.name = j.value("name", def.name);
  p.d = j.value("d", def.d);
  p.n = j.value("n", def.n);
  p.noise = j.value("noise", def.noise);
  p.seed = j.value("seed", def.seed);
  p.lambda = j.value("lambda", def.lambda);
  p.cond = j.value("cond", def.cond);
}

}  // namespace sfn
