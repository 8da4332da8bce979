#include "gridcharge/conic.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <Eigen/QR>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>

#include "gridcharge/format.hpp"

namespace gridcharge::conic {

LinearExpr& LinearExpr::add(Index var, double coef) {
  terms.push_back({var, coef});
  return *this;
}

LinearExpr& LinearExpr::add(const LinearExpr& other, double scale) {
  for (const auto& t : other.terms) terms.push_back({t.var, t.coef * scale});
  constant += other.constant * scale;
  return *this;
}

void LinearExpr::compress() {
  std::sort(terms.begin(), terms.end(),
            [](const LinearTerm& a, const LinearTerm& b) { return a.var < b.var; });
  std::vector<LinearTerm> merged;
  for (const auto& t : terms) {
    if (!merged.empty() && merged.back().var == t.var)
      merged.back().coef += t.coef;
    else
      merged.push_back(t);
  }
  std::erase_if(merged, [](const LinearTerm& t) { return t.coef == 0.0; });
  terms = std::move(merged);
}

double LinearExpr::evaluate(const Eigen::VectorXd& x) const {
  double v = constant;
  for (const auto& t : terms) v += t.coef * x[static_cast<Eigen::Index>(t.var)];
  return v;
}

Index ConicProblem::add_variable(double lo, double hi, std::string name) {
  objective.push_back(0.0);
  lower.push_back(lo);
  upper.push_back(hi);
  names.push_back(std::move(name));
  return objective.size() - 1;
}

void ConicProblem::add_equality(LinearExpr expr, double rhs) {
  expr.compress();
  equalities.push_back({std::move(expr.terms), rhs - expr.constant});
}

double ConicProblem::evaluate_objective(const Eigen::VectorXd& x) const {
  double v = 0.0;
  for (Index i = 0; i < num_vars(); ++i) v += objective[i] * x[static_cast<Eigen::Index>(i)];
  for (const auto& lt : log_terms) {
    const double xv = x[static_cast<Eigen::Index>(lt.var)];
    if (!(xv > 0)) return -kInfinity;
    v += lt.weight * std::log(xv);
  }
  return v;
}

void ConicProblem::validate() const {
  const Index n = num_vars();
  if (lower.size() != n || upper.size() != n || names.size() != n)
    throw std::invalid_argument("conic: bound/name vectors do not match variable count");
  for (Index i = 0; i < n; ++i) {
    if (std::isnan(lower[i]) || std::isnan(upper[i]) || !std::isfinite(objective[i]))
      throw std::invalid_argument("conic: NaN in bounds or objective of variable " +
                                  std::to_string(i));
  }
  for (const auto& lt : log_terms) {
    if (lt.var >= n) throw std::invalid_argument("conic: log term index out of range");
    if (!(lt.weight > 0) || !std::isfinite(lt.weight))
      throw std::invalid_argument("conic: log term weights must be positive");
    if (!(upper[lt.var] > 0))
      throw std::invalid_argument("conic: log term variable " + std::to_string(lt.var) +
                                  " cannot be positive");
  }
  for (const auto& row : equalities) {
    if (!std::isfinite(row.rhs)) throw std::invalid_argument("conic: non-finite rhs");
    for (const auto& t : row.terms)
      if (t.var >= n || !std::isfinite(t.coef))
        throw std::invalid_argument("conic: bad equality term");
  }
  for (const auto& c : cones) {
    if (c.u >= n || c.v >= n || c.z >= n)
      throw std::invalid_argument("conic: cone index out of range");
    if (c.u == c.v || c.u == c.z || c.v == c.z)
      throw std::invalid_argument("conic: cone indices must be distinct");
  }
}

const char* to_string(Status status) {
  switch (status) {
    case Status::optimal:
      return "optimal";
    case Status::infeasible:
      return "infeasible";
    case Status::numerical_failure:
      return "numerical-failure";
  }
  return "unknown";
}

void SolverConfig::validate() const {
  if (!(tolerance > 0)) throw std::invalid_argument("solver tolerance must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("max iterations must be >= 1");
  if (!(barrier_reduction > 0 && barrier_reduction < 1))
    throw std::invalid_argument("barrier reduction factor must be in (0, 1)");
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using EIndex = Eigen::Index;

EIndex ix(Index i) { return static_cast<EIndex>(i); }

struct Bound {
  EIndex var;
  double value;
};

/// Problem in the solver's internal form: minimize f0(x) = -c'x - sum w log x
/// subject to A x = b, bounds and cones.
struct Model {
  EIndex n = 0;
  VectorXd c;
  MatrixXd A;
  VectorXd b;
  std::vector<Bound> lower;
  std::vector<Bound> upper;
  std::vector<LogTerm> logs;
  std::vector<RotatedCone> cones;
};

struct PresolveResult {
  Model model;
  bool infeasible = false;
  std::string message;
};

PresolveResult presolve(const ConicProblem& p, bool drop_redundant) {
  PresolveResult out;
  Model& m = out.model;
  m.n = ix(p.num_vars());
  m.c = Eigen::Map<const VectorXd>(p.objective.data(), m.n);
  m.logs = p.log_terms;
  m.cones = p.cones;

  std::vector<EqualityRow> rows = p.equalities;
  for (Index i = 0; i < p.num_vars(); ++i) {
    const double lo = p.lower[i];
    const double hi = p.upper[i];
    if (lo > hi) {
      out.infeasible = true;
      out.message = "variable " + std::to_string(i) + " has lower > upper";
      return out;
    }
    if (lo == hi) {
      // No interior: pin through an equality instead of a barrier.
      rows.push_back({{{i, 1.0}}, lo});
      continue;
    }
    if (std::isfinite(lo)) m.lower.push_back({ix(i), lo});
    if (std::isfinite(hi)) m.upper.push_back({ix(i), hi});
  }

  MatrixXd A = MatrixXd::Zero(ix(rows.size()), m.n);
  VectorXd b(ix(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (const auto& t : rows[r].terms) A(ix(r), ix(t.var)) += t.coef;
    b[ix(r)] = rows[r].rhs;
  }

  if (drop_redundant && A.rows() > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(A.transpose());
    qr.setThreshold(1e-10);
    const EIndex rank = qr.rank();
    if (rank < A.rows()) {
      std::vector<EIndex> keep;
      for (EIndex k = 0; k < rank; ++k) keep.push_back(qr.colsPermutation().indices()[k]);
      std::sort(keep.begin(), keep.end());
      MatrixXd Ak(ix(keep.size()), m.n);
      VectorXd bk(ix(keep.size()));
      for (std::size_t k = 0; k < keep.size(); ++k) {
        Ak.row(ix(k)) = A.row(keep[k]);
        bk[ix(k)] = b[keep[k]];
      }
      // Dropped rows must be implied by the kept ones.
      const VectorXd xls = Ak.completeOrthogonalDecomposition().solve(bk);
      const double scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
      if ((A * xls - b).lpNorm<Eigen::Infinity>() > 1e-8 * scale) {
        out.infeasible = true;
        out.message = "equality constraints are inconsistent";
        return out;
      }
      A = std::move(Ak);
      b = std::move(bk);
    }
  }
  m.A = std::move(A);
  m.b = std::move(b);
  return out;
}

bool in_domain(const Model& m, const VectorXd& x) {
  for (const auto& bd : m.lower)
    if (!(x[bd.var] - bd.value > 0)) return false;
  for (const auto& bd : m.upper)
    if (!(bd.value - x[bd.var] > 0)) return false;
  for (const auto& lt : m.logs)
    if (!(x[ix(lt.var)] > 0)) return false;
  for (const auto& k : m.cones) {
    const double u = x[ix(k.u)], v = x[ix(k.v)], z = x[ix(k.z)];
    if (!(u > 0) || !(v > 0) || !(u * v - z * z > 0)) return false;
  }
  return true;
}

/// f0(x) = -c'x - sum w log x.
double base_value(const Model& m, const VectorXd& x) {
  double v = -m.c.dot(x);
  for (const auto& lt : m.logs) v -= lt.weight * std::log(x[ix(lt.var)]);
  return v;
}

/// Gradient of f0.
void base_gradient(const Model& m, const VectorXd& x, VectorXd& g) {
  g = -m.c;
  for (const auto& lt : m.logs) g[ix(lt.var)] -= lt.weight / x[ix(lt.var)];
}

/// Default start: box centres, one-sided bounds offset by their scale, then
/// cone triples pushed strictly inside.
std::optional<VectorXd> default_start(const ConicProblem& p, const Model& m) {
  VectorXd x(m.n);
  for (Index i = 0; i < p.num_vars(); ++i) {
    const double lo = p.lower[i], hi = p.upper[i];
    double v = 0.0;
    if (std::isfinite(lo) && std::isfinite(hi))
      v = 0.5 * (lo + hi);
    else if (std::isfinite(lo))
      v = lo + std::max(1.0, std::abs(lo));
    else if (std::isfinite(hi))
      v = hi - std::max(1.0, std::abs(hi));
    x[ix(i)] = v;
  }
  for (const auto& lt : m.logs) {
    auto& v = x[ix(lt.var)];
    if (!(v > 0)) v = std::min(1.0, 0.5 * p.upper[lt.var]);
  }
  auto clamp_inside = [&](Index i, double v) {
    const double lo = p.lower[i], hi = p.upper[i];
    if (lo == hi) return lo;
    const double margin = std::isfinite(hi - lo) ? 1e-3 * (hi - lo) : 1e-3;
    return std::clamp(v, lo + margin, hi - margin);
  };
  for (const auto& k : m.cones) {
    double& u = x[ix(k.u)];
    double& v = x[ix(k.v)];
    double& z = x[ix(k.z)];
    if (!(u > 0)) u = clamp_inside(k.u, std::max(1.0, 2 * std::abs(u)));
    if (!(v > 0)) v = clamp_inside(k.v, std::max(1.0, 2 * std::abs(v)));
    if (u * v - z * z <= 0) z = clamp_inside(k.z, 0.0);
  }
  if (!in_domain(m, x)) return std::nullopt;
  return x;
}

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

}  // namespace

namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

/// Slack space K: one scalar per finite bound, then one 3-vector per rotated
/// cone. Slacks are s = L x - l; a bound gives s = sign * (x - value) and a
/// cone (u, v, z) gives ((u + v) / 2, (u - v) / 2, z), which lies in the
/// standard second-order cone exactly when u v >= z^2, u, v >= 0.
struct Space {
  std::vector<EIndex> var;
  std::vector<double> sign;
  std::vector<double> offset;
  std::vector<std::array<EIndex, 3>> cone;
  EIndex nb = 0;
  EIndex nc = 0;

  explicit Space(const Model& m) {
    for (const auto& bd : m.lower) add_bound(bd.var, 1.0, bd.value);
    for (const auto& bd : m.upper) add_bound(bd.var, -1.0, bd.value);
    for (const auto& k : m.cones) cone.push_back({ix(k.u), ix(k.v), ix(k.z)});
    nb = static_cast<EIndex>(var.size());
    nc = static_cast<EIndex>(cone.size());
  }
  void add_bound(EIndex v, double sg, double value) {
    var.push_back(v);
    sign.push_back(sg);
    offset.push_back(value);
  }
  EIndex dim() const { return nb + 3 * nc; }
  double degree() const { return static_cast<double>(nb + nc); }

  /// L x - l.
  VectorXd slack(const VectorXd& x) const {
    VectorXd s(dim());
    for (EIndex k = 0; k < nb; ++k) s[k] = sign[k] * (x[var[k]] - offset[k]);
    for (EIndex c = 0; c < nc; ++c) s.segment<3>(nb + 3 * c) = lin_cone(c, x);
    return s;
  }
  /// L dx (no offset).
  VectorXd apply(const VectorXd& dx) const {
    VectorXd s(dim());
    for (EIndex k = 0; k < nb; ++k) s[k] = sign[k] * dx[var[k]];
    for (EIndex c = 0; c < nc; ++c) s.segment<3>(nb + 3 * c) = lin_cone(c, dx);
    return s;
  }
  /// L' z.
  VectorXd apply_t(const VectorXd& z, EIndex n) const {
    VectorXd g = VectorXd::Zero(n);
    for (EIndex k = 0; k < nb; ++k) g[var[k]] += sign[k] * z[k];
    for (EIndex c = 0; c < nc; ++c) {
      const auto& id = cone[static_cast<std::size_t>(c)];
      const Vector3d w = z.segment<3>(nb + 3 * c);
      g[id[0]] += 0.5 * (w[0] + w[1]);
      g[id[1]] += 0.5 * (w[0] - w[1]);
      g[id[2]] += w[2];
    }
    return g;
  }

 private:
  Vector3d lin_cone(EIndex c, const VectorXd& x) const {
    const auto& id = cone[static_cast<std::size_t>(c)];
    const double u = x[id[0]], v = x[id[1]];
    return {0.5 * (u + v), 0.5 * (u - v), x[id[2]]};
  }
};

/// Maps (u, v, z) coordinates to second-order cone coordinates.
const Matrix3d& cone_map() {
  static const Matrix3d M = (Matrix3d() << 0.5, 0.5, 0, 0.5, -0.5, 0, 0, 0, 1).finished();
  return M;
}

// Factored form avoids cancellation near the cone boundary.
double soc_det(const Vector3d& a) {
  const double r = a.tail<2>().norm();
  return (a[0] - r) * (a[0] + r);
}

VectorXd identity_element(const Space& K) {
  VectorXd e = VectorXd::Zero(K.dim());
  e.head(K.nb).setOnes();
  for (EIndex c = 0; c < K.nc; ++c) e[K.nb + 3 * c] = 1.0;
  return e;
}

/// Jordan product a o b.
VectorXd jprod(const Space& K, const VectorXd& a, const VectorXd& b) {
  VectorXd r(K.dim());
  r.head(K.nb) = a.head(K.nb).cwiseProduct(b.head(K.nb));
  for (EIndex c = 0; c < K.nc; ++c) {
    const EIndex o = K.nb + 3 * c;
    r[o] = a.segment<3>(o).dot(b.segment<3>(o));
    r.segment<2>(o + 1) = a[o] * b.segment<2>(o + 1) + b[o] * a.segment<2>(o + 1);
  }
  return r;
}

/// Solves lambda o x = w for x.
VectorXd jdiv(const Space& K, const VectorXd& lambda, const VectorXd& w) {
  VectorXd r(K.dim());
  r.head(K.nb) = w.head(K.nb).cwiseQuotient(lambda.head(K.nb));
  for (EIndex c = 0; c < K.nc; ++c) {
    const EIndex o = K.nb + 3 * c;
    const Vector3d l = lambda.segment<3>(o), ww = w.segment<3>(o);
    const double x0 = (l[0] * ww[0] - l.tail<2>().dot(ww.tail<2>())) / soc_det(l);
    r[o] = x0;
    r.segment<2>(o + 1) = (ww.tail<2>() - x0 * l.tail<2>()) / l[0];
  }
  return r;
}

/// Largest a with s + a ds in K (may be +inf).
double cone_step(const Space& K, const VectorXd& s, const VectorXd& ds) {
  double amax = kInfinity;
  for (EIndex k = 0; k < K.nb; ++k)
    if (ds[k] < 0) amax = std::min(amax, -s[k] / ds[k]);
  for (EIndex c = 0; c < K.nc; ++c) {
    const EIndex o = K.nb + 3 * c;
    const Vector3d a = s.segment<3>(o), d = ds.segment<3>(o);
    if (d[0] < 0) amax = std::min(amax, -a[0] / d[0]);
    // q(t) = det(a + t d) = qa t^2 + qb t + qc, qc > 0: first positive root.
    const double qa = soc_det(d);
    const double qb = 2 * (a[0] * d[0] - a.tail<2>().dot(d.tail<2>()));
    const double qc = soc_det(a);
    if (std::abs(qa) < 1e-300) {
      if (qb < 0) amax = std::min(amax, -qc / qb);
      continue;
    }
    const double disc = qb * qb - 4 * qa * qc;
    if (disc < 0) continue;
    const double sq = std::sqrt(disc);
    const double qq = -0.5 * (qb + (qb >= 0 ? sq : -sq));
    for (double r : {qq / qa, qq != 0 ? qc / qq : kInfinity})
      if (r > 0) amax = std::min(amax, r);
  }
  return amax;
}

/// Nesterov-Todd scaling W with W z = W^{-1} s = lambda.
struct Scaling {
  VectorXd d;  // orthant part: sqrt(s / z)
  std::vector<Matrix3d> W, Winv;
  VectorXd lambda;

  Scaling(const Space& K, const VectorXd& s, const VectorXd& z) {
    d = (s.head(K.nb).array() / z.head(K.nb).array()).sqrt();
    lambda.resize(K.dim());
    lambda.head(K.nb) = (s.head(K.nb).array() * z.head(K.nb).array()).sqrt();
    const Matrix3d J = Eigen::Vector3d(1, -1, -1).asDiagonal();
    for (EIndex c = 0; c < K.nc; ++c) {
      const EIndex o = K.nb + 3 * c;
      const Vector3d sc = s.segment<3>(o), zc = z.segment<3>(o);
      const double sn = std::sqrt(soc_det(sc)), zn = std::sqrt(soc_det(zc));
      const Vector3d sb = sc / sn, zb = zc / zn;
      // sb'zb >= 1 in exact arithmetic; rounding can break it on the boundary.
      const double gamma = std::sqrt(0.5 * (1 + std::max(1.0, sb.dot(zb))));
      const Vector3d w = (sb + J * zb) / (2 * gamma);
      const double beta = std::sqrt(sn / zn);
      Matrix3d Wb;
      Wb(0, 0) = w[0];
      Wb.block<1, 2>(0, 1) = w.tail<2>().transpose();
      Wb.block<2, 1>(1, 0) = w.tail<2>();
      Wb.block<2, 2>(1, 1) =
          Eigen::Matrix2d::Identity() + w.tail<2>() * w.tail<2>().transpose() / (1 + w[0]);
      W.push_back(beta * Wb);
      Winv.push_back(J * Wb * J / beta);
      lambda.segment<3>(o) = W.back() * zc;
    }
  }

  VectorXd apply(const Space& K, const VectorXd& u, bool inverse) const {
    VectorXd r(K.dim());
    if (inverse)
      r.head(K.nb) = u.head(K.nb).cwiseQuotient(d);
    else
      r.head(K.nb) = u.head(K.nb).cwiseProduct(d);
    for (EIndex c = 0; c < K.nc; ++c) {
      const EIndex o = K.nb + 3 * c;
      const auto& M = inverse ? Winv[static_cast<std::size_t>(c)] : W[static_cast<std::size_t>(c)];
      r.segment<3>(o) = M * u.segment<3>(o);
    }
    return r;
  }
};

struct Iterate {
  VectorXd x, y, z, s;
};

/// Primal-dual Newton direction for a given complementarity target `bs`
/// (lambda o (W dz + W^{-1} ds) = bs), reusing one factorization.
struct Direction {
  VectorXd dx, dy, dz, ds;
};

/// Sparse LDL' for quasi-definite matrices: up-looking factorization in a
/// fill-reducing (AMD) order. A pivot that is tiny or has the wrong sign
/// for its block is replaced by +-kDynamicPivot, so the factorization never
/// breaks down; callers refine against the exact matrix.
class QuasiDefiniteLdl {
 public:
  using Sparse = Eigen::SparseMatrix<double>;
  static constexpr double kPivotFloor = 1e-13;
  static constexpr double kDynamicPivot = 1e-8;

  /// lower: lower triangle of the pattern; sign: expected pivot sign per row.
  void analyze(const Sparse& lower, const std::vector<int>& sign) {
    const int size = static_cast<int>(lower.rows());
    {
      Sparse full;
      full = lower.selfadjointView<Eigen::Lower>();
      Eigen::AMDOrdering<int> amd;
      amd(full, pinv_);
    }
    perm_ = pinv_.inverse();
    sign_.assign(static_cast<std::size_t>(size), 1);
    for (int i = 0; i < size; ++i) sign_[static_cast<std::size_t>(perm_.indices()[i])] = sign[static_cast<std::size_t>(i)];
    permute(lower);

    // Elimination tree and column counts of L.
    parent_.assign(static_cast<std::size_t>(size), -1);
    std::vector<int> count(static_cast<std::size_t>(size), 0), tag(static_cast<std::size_t>(size));
    for (int k = 0; k < size; ++k) {
      tag[k] = k;
      for (Sparse::InnerIterator it(ap_, k); it; ++it) {
        for (int i = static_cast<int>(it.index()); i < k && tag[i] != k; i = parent_[i]) {
          if (parent_[i] == -1) parent_[i] = k;
          ++count[i];
          tag[i] = k;
        }
      }
    }
    lp_.assign(static_cast<std::size_t>(size) + 1, 0);
    for (int k = 0; k < size; ++k) lp_[k + 1] = lp_[k] + count[k];
    li_.assign(static_cast<std::size_t>(lp_[size]), 0);
    lx_.assign(static_cast<std::size_t>(lp_[size]), 0.0);
    diag_.resize(size);
  }

  void factorize(const Sparse& lower) {
    permute(lower);
    const int size = static_cast<int>(ap_.rows());
    std::vector<double> y(static_cast<std::size_t>(size), 0.0);
    std::vector<int> pattern(static_cast<std::size_t>(size)), tag(static_cast<std::size_t>(size));
    std::vector<int> filled(static_cast<std::size_t>(size), 0);
    regularized_ = 0;
    for (int k = 0; k < size; ++k) {
      // Nonzero pattern of row k of L, in topological order.
      int top = size;
      tag[k] = k;
      for (Sparse::InnerIterator it(ap_, k); it; ++it) {
        int i = static_cast<int>(it.index());
        if (i > k) continue;
        y[i] += it.value();
        int len = 0;
        for (; tag[i] != k; i = parent_[i]) {
          pattern[len++] = i;
          tag[i] = k;
        }
        while (len > 0) pattern[--top] = pattern[--len];
      }
      double d = y[k];
      y[k] = 0.0;
      for (; top < size; ++top) {
        const int i = pattern[top];
        const double yi = y[i];
        y[i] = 0.0;
        const double l_ki = yi / diag_[i];
        int p = lp_[i];
        for (; p < lp_[i] + filled[i]; ++p) y[li_[p]] -= lx_[p] * yi;
        d -= l_ki * yi;
        li_[p] = k;
        lx_[p] = l_ki;
        ++filled[i];
      }
      if (sign_[k] * d <= kPivotFloor) {
        d = sign_[k] * kDynamicPivot;
        ++regularized_;
      }
      diag_[k] = d;
    }
  }

  VectorXd solve(const VectorXd& b) const {
    VectorXd x = perm_ * b;
    const int size = static_cast<int>(x.size());
    for (int j = 0; j < size; ++j)
      for (int p = lp_[j]; p < lp_[j + 1]; ++p) x[li_[p]] -= lx_[p] * x[j];
    x.array() /= diag_.array();
    for (int j = size; j-- > 0;)
      for (int p = lp_[j]; p < lp_[j + 1]; ++p) x[j] -= lx_[p] * x[li_[p]];
    return pinv_ * x;
  }

  int regularized() const { return regularized_; }

 private:
  void permute(const Sparse& lower) {
    ap_.resize(lower.rows(), lower.cols());
    ap_.selfadjointView<Eigen::Upper>() = lower.selfadjointView<Eigen::Lower>().twistedBy(perm_);
  }

  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm_, pinv_;
  Sparse ap_;  // permuted upper triangle
  std::vector<int> sign_, parent_, lp_, li_;
  std::vector<double> lx_;
  VectorXd diag_;
  int regularized_ = 0;
};

/// Newton system in expanded form,
///   [ H + L'0   A'   L'  ] [dx ]
///   [ A         0    0   ] [dy ]
///   [ L         0   -W^2 ] [-dz]
/// which stays well conditioned when the scaling W becomes extreme. The
/// factorization carries a small static regularization; refinement against
/// the exact matrix removes it.
class NewtonSystem {
 public:
  static constexpr double kRegularization = 1e-8;
  static constexpr int kMaxRefinement = 10;

  NewtonSystem(const Model& m, const Space& K) : m_(m), K_(K) {
    const EIndex n = m.n, rows = m.A.rows();
    size_ = n + rows + K.dim();
    std::vector<Eigen::Triplet<double>> t;
    for (EIndex i = 0; i < n; ++i) t.emplace_back(i, i, 0.0);
    for (EIndex r = 0; r < rows; ++r) {
      for (EIndex j = 0; j < n; ++j)
        if (m.A(r, j) != 0) t.emplace_back(n + r, j, m.A(r, j));
      t.emplace_back(n + r, n + r, 0.0);
    }
    const EIndex o = n + rows;
    for (EIndex k = 0; k < K.nb; ++k) {
      t.emplace_back(o + k, K.var[k], K.sign[k]);
      t.emplace_back(o + k, o + k, 0.0);
    }
    const Matrix3d& M = cone_map();
    for (EIndex c = 0; c < K.nc; ++c) {
      const EIndex b = o + K.nb + 3 * c;
      const auto& id = K.cone[static_cast<std::size_t>(c)];
      for (int a = 0; a < 3; ++a) {
        for (int j = 0; j < 3; ++j) {
          if (M(a, j) != 0) t.emplace_back(b + a, id[j], M(a, j));
          if (j <= a) t.emplace_back(b + a, b + j, 0.0);
        }
      }
    }
    // Lower triangle only; duplicates are summed.
    exact_.resize(size_, size_);
    exact_.setFromTriplets(t.begin(), t.end());
    exact_.makeCompressed();
    std::vector<int> sign(static_cast<std::size_t>(size_), -1);
    std::fill(sign.begin(), sign.begin() + n, 1);
    ldl_.analyze(exact_, sign);
  }

  /// hdiag: Hessian of f (diagonal). Returns false if the factorization fails.
  bool factor(const VectorXd& hdiag, const Scaling& sc) {
    hdiag_ = hdiag;
    std::vector<Matrix3d> blocks;
    for (const auto& W : sc.W) blocks.push_back(W * W);
    return assemble(hdiag, sc.d.cwiseAbs2(), blocks);
  }

  /// H = 0 and W = I: the x part then minimizes ||L x - r||^2 style
  /// problems. Used for the start.
  bool factor_plain() {
    hdiag_ = VectorXd::Zero(m_.n);
    return assemble(hdiag_, VectorXd::Ones(K_.nb),
                    std::vector<Matrix3d>(static_cast<std::size_t>(K_.nc), Matrix3d::Identity()));
  }

  /// Solves [H + L'W^{-2}L, A'; A, 0][x; y] = [r1; r2] through the expanded
  /// matrix.
  std::pair<VectorXd, VectorXd> solve_raw(const VectorXd& r1, const VectorXd& r2) const {
    const EIndex n = m_.n, rows = m_.A.rows();
    VectorXd rhs = VectorXd::Zero(size_);
    rhs.head(n) = r1;
    rhs.segment(n, rows) = r2;
    const VectorXd sol = refined(rhs);
    return {sol.head(n), sol.segment(n, rows)};
  }

  /// Direction plus two rounds of refinement on the full linearized system.
  Direction solve(const Scaling& sc, const VectorXd& rx, const VectorXd& ry, const VectorXd& rz,
                  const VectorXd& bs) const {
    Direction d = solve_once(sc, rx, ry, rz, bs);
    const EIndex n = m_.n;
    for (int pass = 0; pass < 2; ++pass) {
      const VectorXd e1 = -rx - (hdiag_.cwiseProduct(d.dx) + m_.A.transpose() * d.dy -
                                 K_.apply_t(d.dz, n));
      const VectorXd e2 = -ry - m_.A * d.dx;
      const VectorXd e3 = -rz - (d.ds - K_.apply(d.dx));
      const VectorXd e4 = bs - jprod(K_, sc.lambda,
                                     sc.apply(K_, d.dz, false) + sc.apply(K_, d.ds, true));
      const Direction c = solve_once(sc, -e1, -e2, -e3, e4);
      d.dx += c.dx;
      d.dy += c.dy;
      d.dz += c.dz;
      d.ds += c.ds;
    }
    return d;
  }

 private:
  // lambda o (W dz + W^{-1} ds) = bs with ds = L dx - rz gives
  // L dx + W^2 dz = W (lambda \ bs) + rz.
  Direction solve_once(const Scaling& sc, const VectorXd& rx, const VectorXd& ry,
                       const VectorXd& rz, const VectorXd& bs) const {
    const EIndex n = m_.n, rows = m_.A.rows();
    VectorXd rhs(size_);
    rhs.head(n) = -rx;
    rhs.segment(n, rows) = -ry;
    rhs.tail(K_.dim()) = sc.apply(K_, jdiv(K_, sc.lambda, bs), false) + rz;
    const VectorXd sol = refined(rhs);
    Direction d;
    d.dx = sol.head(n);
    d.dy = sol.segment(n, rows);
    d.dz = -sol.tail(K_.dim());
    d.ds = K_.apply(d.dx) - rz;
    return d;
  }

  /// Refines until the residual stops shrinking.
  VectorXd refined(const VectorXd& rhs) const {
    VectorXd sol = ldl_.solve(rhs);
    VectorXd res = rhs - exact_.selfadjointView<Eigen::Lower>() * sol;
    double err = inf_norm(res);
    const double floor = 1e-15 * std::max(1.0, inf_norm(rhs));
    for (int pass = 0; pass < kMaxRefinement && err > floor; ++pass) {
      const VectorXd next = sol + ldl_.solve(res);
      VectorXd next_res = rhs - exact_.selfadjointView<Eigen::Lower>() * next;
      const double next_err = inf_norm(next_res);
      if (!(next_err < err)) break;
      sol = next;
      res = std::move(next_res);
      const bool slow = next_err > 0.5 * err;
      err = next_err;
      if (slow) break;
    }
    return sol;
  }

  bool assemble(const VectorXd& hdiag, const VectorXd& d2, const std::vector<Matrix3d>& blocks) {
    const EIndex n = m_.n, rows = m_.A.rows(), o = n + rows;
    // Diagonal and cone-block entries are rewritten in place; the pattern
    // never changes.
    auto set = [&](EIndex r, EIndex c, double v) { exact_.coeffRef(r, c) = v; };
    for (EIndex i = 0; i < n; ++i) set(i, i, hdiag[i]);
    for (EIndex r = 0; r < rows; ++r) set(n + r, n + r, 0.0);
    for (EIndex k = 0; k < K_.nb; ++k) set(o + k, o + k, -d2[k]);
    for (EIndex c = 0; c < K_.nc; ++c) {
      const EIndex b = o + K_.nb + 3 * c;
      const Matrix3d& B = blocks[static_cast<std::size_t>(c)];
      for (int a = 0; a < 3; ++a)
        for (int j = 0; j <= a; ++j) set(b + a, b + j, -B(a, j));
    }
    if (!exact_.coeffs().allFinite()) return false;
    SparseMatrix reg = exact_;
    for (EIndex i = 0; i < size_; ++i)
      reg.coeffRef(i, i) += i < n ? kRegularization : -kRegularization;
    ldl_.factorize(reg);
    return true;
  }

  using SparseMatrix = Eigen::SparseMatrix<double>;
  const Model& m_;
  const Space& K_;
  EIndex size_ = 0;
  VectorXd hdiag_;
  SparseMatrix exact_;
  QuasiDefiniteLdl ldl_;
};

/// Largest step keeping slacks, duals and log arguments strictly feasible.
double step_limit(const Model& m, const Space& K, const Iterate& it, const Direction& d) {
  double a = std::min(cone_step(K, it.s, d.ds), cone_step(K, it.z, d.dz));
  for (const auto& lt : m.logs) {
    const EIndex i = ix(lt.var);
    if (d.dx[i] < 0) a = std::min(a, -it.x[i] / d.dx[i]);
  }
  return a;
}

/// Wide-neighbourhood test: every block of lambda = W z keeps its smallest
/// eigenvalue above sqrt(gamma mu). gamma = 0 tests strict interiority.
constexpr double kBoundaryFraction = 0.9;
constexpr int kStallLimit = 15;

bool centred(const Space& K, const VectorXd& s, const VectorXd& z, double theta,
             double gamma = 1e-2) {
  const double floor = gamma * s.dot(z) / theta;
  for (EIndex k = 0; k < K.nb; ++k)
    if (!(s[k] > 0 && z[k] > 0 && s[k] * z[k] > floor)) return false;
  for (EIndex c = 0; c < K.nc; ++c) {
    const EIndex o = K.nb + 3 * c;
    const double ds = soc_det(s.segment<3>(o)), dz = soc_det(z.segment<3>(o));
    if (!(s[o] > 0 && z[o] > 0 && ds > 0 && dz > 0)) return false;
    // det(lambda) = sqrt(det s det z) and |lambda|^2 = s'z give both
    // eigenvalues of lambda without forming the scaling.
    const double det = std::sqrt(ds) * std::sqrt(dz);
    const double sum = s.segment<3>(o).dot(z.segment<3>(o));
    const double l0 = std::sqrt(0.5 * (sum + det));
    const double lmin = det / (l0 + std::sqrt(std::max(0.0, l0 * l0 - det)));
    if (!(lmin > 0 && lmin * lmin > floor)) return false;
  }
  return true;
}

}  // namespace

Solution InteriorPointSolver::solve(const ConicProblem& problem,
                                    const SolverConfig& config) const {
  problem.validate();
  config.validate();

  Solution sol;
  PresolveResult pre = presolve(problem, config.presolve);
  if (pre.infeasible) {
    sol.status = Status::infeasible;
    sol.message = pre.message;
    sol.x = VectorXd::Zero(ix(problem.num_vars()));
    return sol;
  }
  const Model& m = pre.model;
  const EIndex n = m.n;
  const Space K(m);

  const double theta = std::max(1.0, K.degree());
  const VectorXd e = identity_element(K);
  const VectorXd l_off = -K.slack(VectorXd::Zero(n));  // s = L x - l
  const double pscale = std::max({1.0, inf_norm(m.b), inf_norm(l_off)});
  NewtonSystem kkt(m, K);

  // Moves v into the interior of K along e when it is not already inside.
  auto shift_into = [&](VectorXd& v) {
    double worst = -kInfinity;
    for (EIndex k = 0; k < K.nb; ++k) worst = std::max(worst, -v[k]);
    for (EIndex c = 0; c < K.nc; ++c) {
      const EIndex o = K.nb + 3 * c;
      worst = std::max(worst, v.segment<2>(o + 1).norm() - v[o]);
    }
    if (worst >= 0) v += (1 + worst) * e;
  };

  Iterate it;
  if (config.initial_point) {
    it.x = *config.initial_point;
    if (it.x.size() != n || !in_domain(m, it.x))
      throw std::invalid_argument("initial point is not strictly interior");
    // Centred duals (mu = 1) for the given slacks.
    it.s = K.slack(it.x);
    it.z.resize(K.dim());
    it.z.head(K.nb) = it.s.head(K.nb).cwiseInverse();
    for (EIndex c = 0; c < K.nc; ++c) {
      const EIndex o = K.nb + 3 * c;
      const Vector3d a = it.s.segment<3>(o);
      it.z.segment<3>(o) = Vector3d(a[0], -a[1], -a[2]) / soc_det(a);
    }
    it.y = VectorXd::Zero(m.A.rows());
  } else {
    // Primal start at the box centres (cones pushed inside); if that fails,
    // the x minimizing ||L x - l|| subject to A x = b. Duals are the
    // least-norm z with grad f + A'y - L'z = 0. Both are shifted into K.
    if (!kkt.factor_plain()) {
      sol.status = Status::numerical_failure;
      sol.message = "singular start-up system";
      sol.x = VectorXd::Zero(n);
      return sol;
    }
    auto start = default_start(problem, m);
    it.x = start ? std::move(*start) : kkt.solve_raw(K.apply_t(l_off, n), m.b).first;
    it.s = K.slack(it.x);
    shift_into(it.s);
    for (const auto& lt : m.logs)
      if (!(it.x[ix(lt.var)] > 0)) it.x[ix(lt.var)] = 1.0;
    VectorXd grad;
    base_gradient(m, it.x, grad);
    auto [xt, y0] = kkt.solve_raw(-grad, VectorXd::Zero(m.A.rows()));
    it.y = std::move(y0);
    it.z = -K.apply(xt);
    shift_into(it.z);
  }

  // Failures report the iterate with the smallest worst-case residual.
  Iterate best = it;
  Solution best_metrics;
  double best_merit = kInfinity;
  int stalled = 0;

  auto finish = [&](Status status, std::string message) {
    if (status == Status::numerical_failure && best_merit < kInfinity) {
      it = best;
      sol.primal_residual = best_metrics.primal_residual;
      sol.dual_residual = best_metrics.dual_residual;
      sol.complementarity = best_metrics.complementarity;
    }
    sol.status = status;
    sol.message = std::move(message);
    sol.x = it.x;
    sol.objective = problem.evaluate_objective(it.x);
    return sol;
  };

  for (int iter = 0;; ++iter) {
    // Residuals of  grad f + A'y - L'z = 0,  A x = b,  s = L x - l.
    VectorXd grad;
    base_gradient(m, it.x, grad);
    const VectorXd rx = grad + m.A.transpose() * it.y - K.apply_t(it.z, n);
    const VectorXd ry = m.A * it.x - m.b;
    const VectorXd rz = it.s - K.slack(it.x);
    const double gap = it.s.dot(it.z);
    const double fval = base_value(m, it.x);

    sol.iterations = iter;
    sol.primal_residual = std::max(inf_norm(ry), inf_norm(rz)) / pscale;
    sol.dual_residual = inf_norm(rx) / std::max(1.0, inf_norm(grad));
    sol.complementarity = gap / std::max(1.0, std::abs(fval));
    if (sol.primal_residual <= config.tolerance && sol.dual_residual <= config.tolerance &&
        sol.complementarity <= config.tolerance)
      return finish(Status::optimal, {});
    const double merit = std::max({sol.primal_residual, sol.dual_residual, sol.complementarity});
    stalled = merit < 0.9 * best_merit ? 0 : stalled + 1;
    if (merit < best_merit) {
      best_merit = merit;
      best = it;
      best_metrics = sol;
    }
    // Only the end game can stall on rounding; earlier plateaus are left to
    // the infeasibility test and the iteration limit.
    if (stalled >= kStallLimit && best_merit <= std::sqrt(config.tolerance))
      return finish(Status::numerical_failure,
                    "no progress in " + std::to_string(kStallLimit) + " iterations");

    // Farkas ray: A'y - L'z ~ 0 with b'y - l'z < 0 certifies that no x
    // satisfies the constraints.
    const double ray = l_off.dot(it.z) - m.b.dot(it.y);
    if (sol.primal_residual > config.tolerance && ray > 0 &&
        inf_norm(m.A.transpose() * it.y - K.apply_t(it.z, n)) <= 1e-9 * ray)
      return finish(Status::infeasible, "dual iterates approach a certificate of infeasibility");

    if (iter >= config.max_iterations)
      return finish(Status::numerical_failure,
                    "iteration limit reached (" + std::to_string(iter) + ")");

    VectorXd hdiag = VectorXd::Zero(n);
    for (const auto& lt : m.logs) {
      const double xv = it.x[ix(lt.var)];
      hdiag[ix(lt.var)] += lt.weight / (xv * xv);
    }
    const Scaling sc(K, it.s, it.z);
    if (!kkt.factor(hdiag, sc)) return finish(Status::numerical_failure, "non-finite KKT system");

    // Predictor (affine scaling) direction.
    const VectorXd ll = jprod(K, sc.lambda, sc.lambda);
    const Direction aff = kkt.solve(sc, rx, ry, rz, -ll);
    const double a_aff = std::min(1.0, step_limit(m, K, it, aff));
    const double mu = gap / theta;
    const double gap_aff = (it.s + a_aff * aff.ds).dot(it.z + a_aff * aff.dz);
    const double sigma =
        std::clamp(std::pow(std::max(0.0, gap_aff) / gap, 3), config.barrier_reduction, 1.0);

    // Combined predictor-corrector direction.
    const VectorXd cross =
        jprod(K, sc.apply(K, aff.ds, true), sc.apply(K, aff.dz, false));
    const Direction dir = kkt.solve(sc, rx, ry, rz, -ll - cross + sigma * mu * e);
    if (!dir.dx.allFinite() || !dir.dz.allFinite())
      return finish(Status::numerical_failure, "non-finite Newton direction");
    // Fraction to the boundary, then backtrack until every cone stays in a
    // wide neighbourhood of the central path; without this a single cone
    // can collapse onto its boundary far ahead of mu and stall the method.
    // The neighbourhood is best effort: if it would cut the step by more
    // than 10x, the plain step is kept (it stays strictly interior).
    const double a_max = std::min(1.0, kBoundaryFraction * step_limit(m, K, it, dir));
    double a = a_max;
    while (a > 0.1 * a_max && !centred(K, it.s + a * dir.ds, it.z + a * dir.dz, theta)) a *= 0.8;
    if (a <= 0.1 * a_max) {
      a = a_max;
      while (a > 1e-12 && !centred(K, it.s + a * dir.ds, it.z + a * dir.dz, theta, 0.0)) a *= 0.5;
    }
    it.x += a * dir.dx;
    it.y += a * dir.dy;
    it.z += a * dir.dz;
    it.s += a * dir.ds;
  }
}

Solution solve(const ConicProblem& problem, const SolverConfig& config) {
  return InteriorPointSolver{}.solve(problem, config);
}

double FeasibilityReport::worst() const { return std::max({equality, bound, cone}); }

FeasibilityReport check_feasible(const ConicProblem& problem, const Eigen::VectorXd& x,
                                 double tol) {
  if (static_cast<Index>(x.size()) != problem.num_vars())
    throw std::invalid_argument("check_feasible: point has wrong length");
  FeasibilityReport rep;
  rep.tolerance = tol;
  for (const auto& row : problem.equalities) {
    double lhs = 0.0;
    for (const auto& t : row.terms) lhs += t.coef * x[ix(t.var)];
    rep.equality = std::max(rep.equality, std::abs(lhs - row.rhs));
  }
  for (Index i = 0; i < problem.num_vars(); ++i) {
    const double v = x[ix(i)];
    rep.bound = std::max({rep.bound, problem.lower[i] - v, v - problem.upper[i]});
  }
  for (const auto& k : problem.cones) {
    const double u = x[ix(k.u)], v = x[ix(k.v)], z = x[ix(k.z)];
    rep.cone = std::max({rep.cone, z * z - u * v, -u, -v});
  }
  return rep;
}

void write_problem(std::ostream& out, const ConicProblem& p) {
  out << "conic-problem 1\n";
  out << "vars " << p.num_vars() << "\n";
  for (Index i = 0; i < p.num_vars(); ++i) {
    out << "var " << i << ' ' << format_double(p.lower[i]) << ' '
        << format_double(p.upper[i]) << ' ' << format_double(p.objective[i]);
    if (!p.names[i].empty()) out << ' ' << p.names[i];
    out << '\n';
  }
  for (const auto& lt : p.log_terms)
    out << "log " << lt.var << ' ' << format_double(lt.weight) << '\n';
  for (const auto& row : p.equalities) {
    out << "eq " << format_double(row.rhs) << ' ' << row.terms.size();
    for (const auto& t : row.terms) out << ' ' << t.var << ':' << format_double(t.coef);
    out << '\n';
  }
  for (const auto& k : p.cones) out << "cone " << k.u << ' ' << k.v << ' ' << k.z << '\n';
  out << "end\n";
}

namespace {

double read_double(const std::string& s) {
  if (s == "inf") return kInfinity;
  if (s == "-inf") return -kInfinity;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

}  // namespace

ConicProblem read_problem(std::istream& in) {
  ConicProblem p;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  bool ended = false;
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("conic dump line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    try {
      if (!header) {
        int version = 0;
        if (tag != "conic-problem" || !(ls >> version) || version != 1)
          fail("expected 'conic-problem 1'");
        header = true;
      } else if (tag == "vars") {
        Index n = 0;
        ls >> n;
        p.objective.assign(n, 0.0);
        p.lower.assign(n, -kInfinity);
        p.upper.assign(n, kInfinity);
        p.names.assign(n, {});
      } else if (tag == "var") {
        Index i = 0;
        std::string lo, hi, c, name;
        ls >> i >> lo >> hi >> c;
        if (i >= p.num_vars()) fail("variable index out of range");
        p.lower[i] = read_double(lo);
        p.upper[i] = read_double(hi);
        p.objective[i] = read_double(c);
        if (ls >> name) p.names[i] = name;
      } else if (tag == "log") {
        LogTerm lt;
        std::string w;
        ls >> lt.var >> w;
        lt.weight = read_double(w);
        p.log_terms.push_back(lt);
      } else if (tag == "eq") {
        std::string rhs;
        std::size_t nnz = 0;
        ls >> rhs >> nnz;
        EqualityRow row;
        row.rhs = read_double(rhs);
        for (std::size_t k = 0; k < nnz; ++k) {
          std::string tok;
          if (!(ls >> tok)) fail("missing equality term");
          const auto colon = tok.find(':');
          if (colon == std::string::npos) fail("equality term needs var:coef");
          row.terms.push_back({static_cast<Index>(std::stoul(tok.substr(0, colon))),
                               read_double(tok.substr(colon + 1))});
        }
        p.equalities.push_back(std::move(row));
      } else if (tag == "cone") {
        RotatedCone k;
        ls >> k.u >> k.v >> k.z;
        p.cones.push_back(k);
      } else if (tag == "end") {
        ended = true;
        break;
      } else {
        fail("unknown record '" + tag + "'");
      }
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const std::invalid_argument*>(&e) &&
          std::string(e.what()).rfind("conic dump", 0) == 0)
        throw;
      fail(e.what());
    }
    if (ls.fail() && !ls.eof()) fail("malformed record");
  }
  if (!ended) throw std::invalid_argument("conic dump: missing 'end'");
  p.validate();
  return p;
}

}  // namespace gridcharge::conic
