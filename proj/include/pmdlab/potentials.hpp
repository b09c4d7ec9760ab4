#pragma once

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pmdlab {

// An omega-potential: an increasing scalar map phi whose inverse on (0,1]
// defines the mirror map h(p) = sum_a int_1^{p_a} phi_inv(x) dx.
//
// phi is extended to the whole real line so that normalization constants can
// always be bracketed: families that clip at zero return 0 left of their
// support, and every family continues monotonically above phi_inv(1) (values
// larger than 1 never survive normalization, only the bracketing uses them).
class OmegaPotential {
 public:
  virtual ~OmegaPotential() = default;

  virtual std::string name() const = 0;
  virtual double phi(double x) const = 0;
  // Defined for p in (0,1]; may return -inf as p -> 0 limits do.
  virtual double phi_inv(double p) const = 0;
  // Extended-real value at 0: the infimum of phi_inv on (0,1], or for families
  // that are flat at zero, the supremum of {x : phi(x) = 0}.
  virtual double phi_inv_at_zero() const = 0;
  // Exact h for families that admit one; generic callers fall back to
  // adaptive quadrature of phi_inv.
  virtual std::optional<double> closed_form_mirror_value(const Eigen::VectorXd& p) const {
    (void)p;
    return std::nullopt;
  }
  // Probabilities in (0,1) where phi_inv is not smooth.  Quadrature splits its
  // panels here: the Richardson error estimate assumes a smooth integrand and
  // can accept aliased values across kinks otherwise.
  virtual std::vector<double> phi_inv_breakpoints() const { return {}; }
  virtual std::unique_ptr<OmegaPotential> clone() const = 0;
};

// phi(x) = e^x, phi_inv(p) = log p; h(p) = |A| - 1 + sum p log p.
class NegEntropyPotential final : public OmegaPotential {
 public:
  std::string name() const override { return "negentropy"; }
  double phi(double x) const override;
  double phi_inv(double p) const override;
  double phi_inv_at_zero() const override;
  std::optional<double> closed_form_mirror_value(const Eigen::VectorXd& p) const override;
  std::unique_ptr<OmegaPotential> clone() const override;
};

// phi(x) = x; h(p) = 0.5*sum p^2 - |A|/2.
class L2Potential final : public OmegaPotential {
 public:
  std::string name() const override { return "l2"; }
  double phi(double x) const override;
  double phi_inv(double p) const override;
  double phi_inv_at_zero() const override;
  std::optional<double> closed_form_mirror_value(const Eigen::VectorXd& p) const override;
  std::unique_ptr<OmegaPotential> clone() const override;
};

// Piecewise-linear potential with n positive knot widths psi: phi(0) = 0,
// phi(sum_{i<=j} psi_i) = j/n, linear between knots, 0 below the support and
// 1 beyond the last knot.
class PiecewisePotential : public OmegaPotential {
 public:
  explicit PiecewisePotential(Eigen::VectorXd psi);
  // Evolution-facing encoding: psi = exp(raw) + 1e-12.  Searching log widths
  // keeps one step size meaningful across widths spanning decades and makes a
  // uniform shrink of all knot gaps a straight line in parameter space.
  static Eigen::VectorXd psi_from_raw(const Eigen::VectorXd& raw);

  const Eigen::VectorXd& psi() const { return psi_; }
  int knot_count() const { return static_cast<int>(psi_.size()); }
  double knot_span() const { return knots_[knots_.size() - 1]; }

  std::string name() const override { return "piecewise"; }
  double phi(double x) const override;
  double phi_inv(double p) const override;
  double phi_inv_at_zero() const override { return 0.0; }
  std::optional<double> closed_form_mirror_value(const Eigen::VectorXd& p) const override;
  // phi_inv is linear between the probability gridpoints j/n.
  std::vector<double> phi_inv_breakpoints() const override;
  std::unique_ptr<OmegaPotential> clone() const override;

 protected:
  // phi on [0, knot_span] only; tails are supplied by the subclasses.
  double phi_core(double x) const;
  double mirror_value_core(const Eigen::VectorXd& p) const;

  Eigen::VectorXd psi_;
  Eigen::VectorXd knots_;       // prefix sums, knots_[j] = sum_{i<=j} psi_i, knots_[0] = 0
  Eigen::VectorXd prefix_int_;  // prefix_int_[j] = int_0^{j/n} phi_inv
};

// The same knots with strictly increasing tails: e^x - 1 below 0 and a unit
// slope above the last knot (identical to "x for x > 1" when the knots span
// 1).  Coincides with PiecewisePotential on (0,1] probabilities, so both
// induce the same mirror map.
class AugmentedPiecewisePotential final : public PiecewisePotential {
 public:
  explicit AugmentedPiecewisePotential(Eigen::VectorXd psi);
  std::string name() const override { return "augmented_piecewise"; }
  double phi(double x) const override;
  double phi_inv(double p) const override;
  double phi_inv_at_zero() const override { return 0.0; }
  std::unique_ptr<OmegaPotential> clone() const override;
};

// Monotone one-hidden-layer parameterization of phi_inv: 126 hidden units, 21
// per activation in {x^3, relu(x)^2, relu(x)^(1/2), relu(x)^(1/3),
// log(relu(x)+1e-3), e^x}, plus a residual a*x + b*log(x).  Kernels and the
// residual coefficients are made nonnegative with absolute values at
// evaluation time, so the raw parameter vector is unconstrained.  phi is the
// numeric inverse (bisection in log p), a diagnostic path only.
class MonotoneNetPotentialInv final : public OmegaPotential {
 public:
  static constexpr int kUnitsPerActivation = 21;
  static constexpr int kActivations = 6;
  static constexpr int kHidden = kUnitsPerActivation * kActivations;  // 126
  // Layout: [w (126), c (126), v (126), a, b].
  static int parameter_count() { return 3 * kHidden + 2; }

  explicit MonotoneNetPotentialInv(Eigen::VectorXd raw);
  // Raw vector that reproduces phi_inv(p) = log p exactly (v = 0, a = 0, b = 1).
  static Eigen::VectorXd near_negentropy_raw();

  const Eigen::VectorXd& raw() const { return raw_; }

  std::string name() const override { return "monotone_net"; }
  double phi(double x) const override;
  double phi_inv(double p) const override;
  double phi_inv_at_zero() const override;
  std::optional<double> closed_form_mirror_value(const Eigen::VectorXd& p) const override;
  // Rectified activations kink at w*p + c = 0.
  std::vector<double> phi_inv_breakpoints() const override;
  std::unique_ptr<OmegaPotential> clone() const override;

 private:
  Eigen::VectorXd raw_;
};

// h(p) via the family closed form when available, else adaptive quadrature.
double mirror_map_value(const OmegaPotential& pot, const Eigen::VectorXd& p);
// Always integrates numerically (adaptive Simpson, absolute tolerance tol per
// coordinate).  Throws std::runtime_error if the quadrature fails to converge.
double mirror_map_value_quadrature(const OmegaPotential& pot, const Eigen::VectorXd& p,
                                   double tol = 1e-8);

// D_h(x, y) = h(x) - h(y) - <grad h(y), x - y> with grad h(y)_a = phi_inv(y_a).
// Throws std::domain_error if some y_a is 0 while phi_inv(0) = -inf.
double bregman(const OmegaPotential& pot, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// Returns (D_h(y + eps*dir, y), 0.5*eps^2 * sum_a dir_a^2 * d/dp phi_inv(y_a))
// with the diagonal Hessian entries taken by central differences.
std::pair<double, double> bregman_local_quadratic_check(const OmegaPotential& pot,
                                                        const Eigen::VectorXd& y,
                                                        const Eigen::VectorXd& dir, double eps);

// Knot widths psi_1 = c*3*log(10), psi_i = c*log(i/(i-1)) with c chosen so the
// knots sum to span; the induced piecewise potential interpolates
// exp((x - span)/c) exactly at every knot.
Eigen::VectorXd negentropy_init_psi(int n, double span = 1.0);

// Key-value text round trip at full precision (17 significant digits).
std::string serialize_potential(const OmegaPotential& pot);
std::unique_ptr<OmegaPotential> deserialize_potential(const std::string& text);

// Builtin selector for the CLI: "negentropy", "l2", "piecewise[:n]",
// "augmented_piecewise[:n]", "monotone_net".  Throws std::invalid_argument on
// unknown names.
std::unique_ptr<OmegaPotential> make_builtin_potential(const std::string& name);

}  // namespace pmdlab
