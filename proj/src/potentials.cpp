#include "pmdlab/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace pmdlab {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kLogEps = 1e-3;  // offset inside the log activation

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// NegEntropy

double NegEntropyPotential::phi(double x) const { return std::exp(x); }

double NegEntropyPotential::phi_inv(double p) const {
  return p > 0.0 ? std::log(p) : -kInf;
}

double NegEntropyPotential::phi_inv_at_zero() const { return -kInf; }

std::optional<double> NegEntropyPotential::closed_form_mirror_value(
    const Eigen::VectorXd& p) const {
  // int_1^p log = p log p - p + 1 per coordinate.
  double h = 0.0;
  for (int a = 0; a < p.size(); ++a) h += xlogx(p[a]) - p[a] + 1.0;
  return h;
}

std::unique_ptr<OmegaPotential> NegEntropyPotential::clone() const {
  return std::make_unique<NegEntropyPotential>();
}

// ---------------------------------------------------------------------------
// L2

double L2Potential::phi(double x) const { return x; }

double L2Potential::phi_inv(double p) const { return p; }

double L2Potential::phi_inv_at_zero() const { return 0.0; }

std::optional<double> L2Potential::closed_form_mirror_value(const Eigen::VectorXd& p) const {
  // int_1^p x dx = (p^2 - 1)/2 per coordinate.
  return 0.5 * p.squaredNorm() - 0.5 * static_cast<double>(p.size());
}

std::unique_ptr<OmegaPotential> L2Potential::clone() const {
  return std::make_unique<L2Potential>();
}

// ---------------------------------------------------------------------------
// Piecewise

PiecewisePotential::PiecewisePotential(Eigen::VectorXd psi) : psi_(std::move(psi)) {
  const int n = static_cast<int>(psi_.size());
  require(n >= 1, "piecewise potential needs at least one knot width");
  for (int i = 0; i < n; ++i)
    require(std::isfinite(psi_[i]) && psi_[i] > 0.0,
            "piecewise knot widths must be finite and positive");
  knots_.resize(n + 1);
  prefix_int_.resize(n + 1);
  knots_[0] = 0.0;
  prefix_int_[0] = 0.0;
  for (int j = 0; j < n; ++j) {
    knots_[j + 1] = knots_[j] + psi_[j];
    // phi_inv is linear from knots_[j] to knots_[j+1] over a probability step
    // of width 1/n, so the segment integral is the trapezoid below.
    prefix_int_[j + 1] = prefix_int_[j] + 0.5 * (knots_[j] + knots_[j + 1]) / n;
  }
}

Eigen::VectorXd PiecewisePotential::psi_from_raw(const Eigen::VectorXd& raw) {
  return raw.array().exp() + 1e-12;
}

double PiecewisePotential::phi_core(double x) const {
  const int n = knot_count();
  const double* begin = knots_.data();
  const double* end = begin + n + 1;
  int j = static_cast<int>(std::upper_bound(begin, end, x) - begin) - 1;
  if (j >= n) return 1.0;
  if (j < 0) j = 0;
  return (j + (x - knots_[j]) / psi_[j]) / n;
}

double PiecewisePotential::phi(double x) const {
  if (x <= 0.0) return 0.0;
  if (x >= knots_[knot_count()]) return 1.0;
  return phi_core(x);
}

double PiecewisePotential::phi_inv(double p) const {
  const int n = knot_count();
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return knots_[n];
  const double scaled = p * n;
  const int j = std::min(static_cast<int>(scaled), n - 1);
  return knots_[j] + (scaled - j) * psi_[j];
}

double PiecewisePotential::mirror_value_core(const Eigen::VectorXd& p) const {
  // F(q) = int_0^q phi_inv; h = sum_a (F(p_a) - F(1)).
  const int n = knot_count();
  const double f_one = prefix_int_[n];
  double h = 0.0;
  for (int a = 0; a < p.size(); ++a) {
    const double q = p[a];
    double f = 0.0;
    if (q >= 1.0) {
      f = f_one;
    } else if (q > 0.0) {
      const int j = std::min(static_cast<int>(q * n), n - 1);
      const double t = q - static_cast<double>(j) / n;
      f = prefix_int_[j] + knots_[j] * t + 0.5 * n * psi_[j] * t * t;
    }
    h += f - f_one;
  }
  return h;
}

std::optional<double> PiecewisePotential::closed_form_mirror_value(
    const Eigen::VectorXd& p) const {
  return mirror_value_core(p);
}

std::vector<double> PiecewisePotential::phi_inv_breakpoints() const {
  const int n = knot_count();
  std::vector<double> pts;
  pts.reserve(n - 1);
  for (int j = 1; j < n; ++j) pts.push_back(static_cast<double>(j) / n);
  return pts;
}

std::unique_ptr<OmegaPotential> PiecewisePotential::clone() const {
  return std::make_unique<PiecewisePotential>(psi_);
}

// ---------------------------------------------------------------------------
// Augmented piecewise

AugmentedPiecewisePotential::AugmentedPiecewisePotential(Eigen::VectorXd psi)
    : PiecewisePotential(std::move(psi)) {}

double AugmentedPiecewisePotential::phi(double x) const {
  if (x <= 0.0) return std::expm1(x);
  const double span = knots_[knot_count()];
  if (x >= span) return 1.0 + (x - span);
  return phi_core(x);
}

double AugmentedPiecewisePotential::phi_inv(double p) const {
  if (p > 1.0) return knots_[knot_count()] + (p - 1.0);
  if (p < 0.0) return p > -1.0 ? std::log1p(p) : -kInf;
  return PiecewisePotential::phi_inv(p);
}

std::unique_ptr<OmegaPotential> AugmentedPiecewisePotential::clone() const {
  return std::make_unique<AugmentedPiecewisePotential>(psi_);
}

// ---------------------------------------------------------------------------
// Monotone net

namespace {

double net_activation(int group, double u) {
  switch (group) {
    case 0: return u * u * u;
    case 1: { const double r = u > 0.0 ? u : 0.0; return r * r; }
    case 2: return u > 0.0 ? std::sqrt(u) : 0.0;
    case 3: return u > 0.0 ? std::cbrt(u) : 0.0;
    case 4: return std::log((u > 0.0 ? u : 0.0) + kLogEps);
    case 5: return std::exp(u);
    default: throw std::logic_error("bad activation group");
  }
}

// Antiderivative of net_activation(group, .), continuous, zero-anchored only
// up to a constant (callers always take differences).
double net_antiderivative(int group, double u) {
  switch (group) {
    case 0: return 0.25 * u * u * u * u;
    case 1: return u > 0.0 ? u * u * u / 3.0 : 0.0;
    case 2: return u > 0.0 ? (2.0 / 3.0) * u * std::sqrt(u) : 0.0;
    case 3: return u > 0.0 ? 0.75 * u * std::cbrt(u) : 0.0;
    case 4:
      if (u <= 0.0) return u * std::log(kLogEps);
      return (u + kLogEps) * std::log(u + kLogEps) - u - kLogEps * std::log(kLogEps);
    case 5: return std::exp(u);
    default: throw std::logic_error("bad activation group");
  }
}

}  // namespace

MonotoneNetPotentialInv::MonotoneNetPotentialInv(Eigen::VectorXd raw) : raw_(std::move(raw)) {
  require(static_cast<int>(raw_.size()) == parameter_count(),
          "monotone net expects " + std::to_string(parameter_count()) + " parameters");
  for (int i = 0; i < raw_.size(); ++i)
    require(std::isfinite(raw_[i]), "monotone net parameters must be finite");
}

Eigen::VectorXd MonotoneNetPotentialInv::near_negentropy_raw() {
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(parameter_count());
  raw[parameter_count() - 1] = 1.0;  // b = 1: phi_inv(p) = log p
  return raw;
}

double MonotoneNetPotentialInv::phi_inv(double p) const {
  if (p <= 0.0) return phi_inv_at_zero();
  const double a = std::abs(raw_[3 * kHidden]);
  const double b = std::abs(raw_[3 * kHidden + 1]);
  double out = a * p + (b > 0.0 ? b * std::log(p) : 0.0);
  for (int k = 0; k < kHidden; ++k) {
    const double v = std::abs(raw_[2 * kHidden + k]);
    if (v == 0.0) continue;
    const double w = std::abs(raw_[k]);
    const double c = raw_[kHidden + k];
    out += v * net_activation(k / kUnitsPerActivation, w * p + c);
  }
  return out;
}

double MonotoneNetPotentialInv::phi_inv_at_zero() const {
  const double b = std::abs(raw_[3 * kHidden + 1]);
  if (b > 0.0) return -kInf;
  double out = 0.0;
  for (int k = 0; k < kHidden; ++k) {
    const double v = std::abs(raw_[2 * kHidden + k]);
    if (v == 0.0) continue;
    out += v * net_activation(k / kUnitsPerActivation, raw_[kHidden + k]);
  }
  return out;
}

double MonotoneNetPotentialInv::phi(double x) const {
  // Infimum of {p : phi_inv(p) >= x}, located by bisection in t = log p.
  // Plateaus (all-zero parameters) resolve downward, which normalization then
  // treats as zero mass; this path is diagnostic plus score normalization.
  if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  double t_hi = 0.0;
  double step = 1.0;
  while (phi_inv(std::exp(t_hi)) < x) {
    t_hi += step;
    step *= 2.0;
    if (t_hi > 700.0) return std::exp(700.0);
  }
  double t_lo = t_hi - 1.0;
  step = 1.0;
  while (phi_inv(std::exp(t_lo)) >= x) {
    t_lo -= step;
    step *= 2.0;
    if (t_lo < -745.0) return 0.0;
  }
  while (t_hi - t_lo > 1e-13 * std::max(1.0, std::abs(t_hi))) {
    const double mid = 0.5 * (t_lo + t_hi);
    if (phi_inv(std::exp(mid)) >= x) {
      t_hi = mid;
    } else {
      t_lo = mid;
    }
  }
  return std::exp(0.5 * (t_lo + t_hi));
}

std::vector<double> MonotoneNetPotentialInv::phi_inv_breakpoints() const {
  std::vector<double> pts;
  for (int k = 0; k < kHidden; ++k) {
    const int group = k / kUnitsPerActivation;
    if (group == 0 || group == 5) continue;  // x^3 and e^x are smooth
    if (std::abs(raw_[2 * kHidden + k]) == 0.0) continue;
    const double w = std::abs(raw_[k]);
    if (w == 0.0) continue;
    const double p = -raw_[kHidden + k] / w;
    if (p > 0.0 && p < 1.0) pts.push_back(p);
  }
  return pts;
}

std::optional<double> MonotoneNetPotentialInv::closed_form_mirror_value(
    const Eigen::VectorXd& p) const {
  // F(q) = int_0^q phi_inv, assembled from unit antiderivatives; the log
  // residual integrates to q log q - q, which extends continuously to q = 0.
  const double a = std::abs(raw_[3 * kHidden]);
  const double b = std::abs(raw_[3 * kHidden + 1]);
  auto f = [&](double q) {
    double out = 0.5 * a * q * q + b * (xlogx(q) - q);
    for (int k = 0; k < kHidden; ++k) {
      const double v = std::abs(raw_[2 * kHidden + k]);
      if (v == 0.0) continue;
      const double w = std::abs(raw_[k]);
      const double c = raw_[kHidden + k];
      const int group = k / kUnitsPerActivation;
      if (w > 0.0) {
        out += v * (net_antiderivative(group, w * q + c) - net_antiderivative(group, c)) / w;
      } else {
        out += v * net_activation(group, c) * q;
      }
    }
    return out;
  };
  const double f_one = f(1.0);
  double h = 0.0;
  for (int i = 0; i < p.size(); ++i) h += f(p[i]) - f_one;
  return h;
}

std::unique_ptr<OmegaPotential> MonotoneNetPotentialInv::clone() const {
  return std::make_unique<MonotoneNetPotentialInv>(raw_);
}

// ---------------------------------------------------------------------------
// Mirror map values, Bregman divergence

double mirror_map_value(const OmegaPotential& pot, const Eigen::VectorXd& p) {
  if (auto v = pot.closed_form_mirror_value(p)) return *v;
  return mirror_map_value_quadrature(pot, p);
}

namespace {

struct SimpsonCtx {
  const OmegaPotential* pot;
  double tol_per_length;
};

double simpson_segment(double a, double fa, double m, double fm, double b, double fb) {
  (void)m;
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson(const SimpsonCtx& ctx, double a, double fa, double m, double fm,
                        double b, double fb, double whole, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  if (lm <= a || rm >= b || lm >= m || rm <= m) return whole;  // double resolution limit
  const double flm = ctx.pot->phi_inv(lm);
  const double frm = ctx.pot->phi_inv(rm);
  const double left = simpson_segment(a, fa, lm, flm, m, fm);
  const double right = simpson_segment(m, fm, rm, frm, b, fb);
  const double err = left + right - whole;
  if (std::abs(err) <= 15.0 * ctx.tol_per_length * (b - a)) {
    return left + right + err / 15.0;
  }
  if (depth <= 0) throw std::runtime_error("mirror map quadrature failed to converge");
  return adaptive_simpson(ctx, a, fa, lm, flm, m, fm, left, depth - 1) +
         adaptive_simpson(ctx, m, fm, rm, frm, b, fb, right, depth - 1);
}

double integrate_panel(const SimpsonCtx& ctx, double lo, double hi) {
  const double m = 0.5 * (lo + hi);
  const double fa = ctx.pot->phi_inv(lo);
  const double fm = ctx.pot->phi_inv(m);
  const double fb = ctx.pot->phi_inv(hi);
  if (!std::isfinite(fa) || !std::isfinite(fm) || !std::isfinite(fb))
    throw std::runtime_error("mirror map quadrature hit a non-finite integrand value");
  const double whole = simpson_segment(lo, fa, m, fm, hi, fb);
  return adaptive_simpson(ctx, lo, fa, m, fm, hi, fb, whole, 64);
}

// int_lo^1 phi_inv, split at the family's non-smoothness points: the adaptive
// error estimate is only sound on smooth panels.
double integrate_to_one(const SimpsonCtx& ctx, double lo) {
  std::vector<double> cuts = ctx.pot->phi_inv_breakpoints();
  std::sort(cuts.begin(), cuts.end());
  double sum = 0.0;
  double left = lo;
  for (double c : cuts) {
    if (c <= left || c >= 1.0) continue;
    sum += integrate_panel(ctx, left, c);
    left = c;
  }
  return sum + integrate_panel(ctx, left, 1.0);
}

}  // namespace

double mirror_map_value_quadrature(const OmegaPotential& pot, const Eigen::VectorXd& p,
                                   double tol) {
  // Coordinates at exactly zero are integrated from a floor of 1e-15; every
  // supported family has an integrable singularity there (log-type at worst),
  // so the truncation error is below 1e-13.
  constexpr double kFloor = 1e-15;
  double h = 0.0;
  for (int a = 0; a < p.size(); ++a) {
    const double q = p[a];
    if (q >= 1.0) continue;  // int_1^1 = 0
    SimpsonCtx ctx{&pot, tol / (1.0 - std::max(q, kFloor))};
    h -= integrate_to_one(ctx, std::max(q, kFloor));  // int_1^q = -int_q^1
  }
  return h;
}

double bregman(const OmegaPotential& pot, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  require(x.size() == y.size(), "bregman arguments must have equal sizes");
  double grad_term = 0.0;
  for (int a = 0; a < y.size(); ++a) {
    double g;
    if (y[a] > 0.0) {
      g = pot.phi_inv(y[a]);
    } else {
      g = pot.phi_inv_at_zero();
      if (g == -kInf)
        throw std::domain_error("bregman: second argument touches zero where phi_inv is -inf");
    }
    grad_term += g * (x[a] - y[a]);
  }
  return mirror_map_value(pot, x) - mirror_map_value(pot, y) - grad_term;
}

std::pair<double, double> bregman_local_quadratic_check(const OmegaPotential& pot,
                                                        const Eigen::VectorXd& y,
                                                        const Eigen::VectorXd& dir, double eps) {
  const Eigen::VectorXd x = y + eps * dir;
  const double d = bregman(pot, x, y);
  double quad = 0.0;
  for (int a = 0; a < y.size(); ++a) {
    const double p = y[a];
    require(p > 0.0, "local quadratic check needs an interior base point");
    const double step = 1e-6 * p;
    double deriv;
    if (p + step <= 1.0) {
      deriv = (pot.phi_inv(p + step) - pot.phi_inv(p - step)) / (2.0 * step);
    } else {
      deriv = (pot.phi_inv(p) - pot.phi_inv(p - step)) / step;
    }
    quad += 0.5 * eps * eps * dir[a] * dir[a] * deriv;
  }
  return {d, quad};
}

// ---------------------------------------------------------------------------
// Near-negentropy knot initialization

Eigen::VectorXd negentropy_init_psi(int n, double span) {
  require(n >= 1, "negentropy_init_psi needs n >= 1");
  require(span > 0.0, "negentropy_init_psi needs a positive span");
  const double c = span / (3.0 * std::log(10.0) + std::log(static_cast<double>(n)));
  Eigen::VectorXd psi(n);
  psi[0] = c * 3.0 * std::log(10.0);
  for (int i = 1; i < n; ++i)
    psi[i] = c * std::log(static_cast<double>(i + 1) / static_cast<double>(i));
  return psi;
}

// ---------------------------------------------------------------------------
// Serialization

std::string serialize_potential(const OmegaPotential& pot) {
  std::ostringstream out;
  out << "pmdlab-potential v1\n";
  out << "family " << pot.name() << "\n";
  const Eigen::VectorXd* values = nullptr;
  Eigen::VectorXd storage;
  if (auto* pw = dynamic_cast<const PiecewisePotential*>(&pot)) {
    storage = pw->psi();
    values = &storage;
  } else if (auto* net = dynamic_cast<const MonotoneNetPotentialInv*>(&pot)) {
    storage = net->raw();
    values = &storage;
  }
  out << "count " << (values ? values->size() : 0) << "\n";
  if (values)
    for (int i = 0; i < values->size(); ++i) out << fmt17((*values)[i]) << "\n";
  return out.str();
}

std::unique_ptr<OmegaPotential> deserialize_potential(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version;
  in >> magic >> version;
  require(magic == "pmdlab-potential" && version == "v1",
          "unrecognized potential file header");
  std::string key, family;
  in >> key >> family;
  require(key == "family", "potential file: expected 'family'");
  long count = 0;
  in >> key >> count;
  require(bool(in) && key == "count" && count >= 0, "potential file: expected 'count'");
  Eigen::VectorXd values(count);
  for (long i = 0; i < count; ++i) {
    in >> values[i];
    require(bool(in), "potential file: truncated value list");
  }
  if (family == "negentropy") {
    require(count == 0, "negentropy takes no parameters");
    return std::make_unique<NegEntropyPotential>();
  }
  if (family == "l2") {
    require(count == 0, "l2 takes no parameters");
    return std::make_unique<L2Potential>();
  }
  if (family == "piecewise") return std::make_unique<PiecewisePotential>(values);
  if (family == "augmented_piecewise")
    return std::make_unique<AugmentedPiecewisePotential>(values);
  if (family == "monotone_net") return std::make_unique<MonotoneNetPotentialInv>(values);
  throw std::invalid_argument("unknown potential family: " + family);
}

std::unique_ptr<OmegaPotential> make_builtin_potential(const std::string& name) {
  if (name == "negentropy") return std::make_unique<NegEntropyPotential>();
  if (name == "l2") return std::make_unique<L2Potential>();
  if (name == "monotone_net")
    return std::make_unique<MonotoneNetPotentialInv>(
        MonotoneNetPotentialInv::near_negentropy_raw());
  const auto parse_knots = [](const std::string& s, const std::string& prefix) -> int {
    if (s == prefix) return 100;
    if (s.size() > prefix.size() + 1 && s.compare(0, prefix.size(), prefix) == 0 &&
        s[prefix.size()] == ':') {
      size_t pos = 0;
      const std::string tail = s.substr(prefix.size() + 1);
      const int n = std::stoi(tail, &pos);
      require(pos == tail.size() && n >= 1, "bad knot count in potential name");
      return n;
    }
    return -1;
  };
  if (int n = parse_knots(name, "piecewise"); n > 0)
    return std::make_unique<PiecewisePotential>(negentropy_init_psi(n));
  if (int n = parse_knots(name, "augmented_piecewise"); n > 0)
    return std::make_unique<AugmentedPiecewisePotential>(negentropy_init_psi(n));
  throw std::invalid_argument("unknown potential name: " + name);
}

}  // namespace pmdlab
