#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "pmdlab/potentials.hpp"
#include "pmdlab/rng.hpp"
#include "test_util.hpp"

using namespace pmdlab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::unique_ptr<OmegaPotential>> all_families() {
  std::vector<std::unique_ptr<OmegaPotential>> out;
  out.push_back(std::make_unique<NegEntropyPotential>());
  out.push_back(std::make_unique<L2Potential>());
  out.push_back(std::make_unique<PiecewisePotential>(negentropy_init_psi(32)));
  out.push_back(std::make_unique<AugmentedPiecewisePotential>(negentropy_init_psi(32)));
  out.push_back(std::make_unique<MonotoneNetPotentialInv>(
      MonotoneNetPotentialInv::near_negentropy_raw()));
  return out;
}

}  // namespace

TEST_CASE("negentropy potential basics") {
  NegEntropyPotential pot;
  CHECK(pot.phi(0.0) == doctest::Approx(1.0));
  CHECK(pot.phi(-1.0) == doctest::Approx(std::exp(-1.0)));
  CHECK(pot.phi_inv(1.0) == doctest::Approx(0.0));
  CHECK(pot.phi_inv(std::exp(-2.0)) == doctest::Approx(-2.0));
  CHECK(pot.phi_inv_at_zero() == -kInf);

  // h(uniform over n) = n - 1 - log n.
  Eigen::VectorXd u = Eigen::VectorXd::Constant(4, 0.25);
  const double expect = 3.0 - std::log(4.0);
  CHECK(*pot.closed_form_mirror_value(u) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(mirror_map_value(pot, u) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("l2 potential basics") {
  L2Potential pot;
  CHECK(pot.phi(0.3) == 0.3);
  CHECK(pot.phi(-2.0) == -2.0);  // clipping happens at normalization, not here
  CHECK(pot.phi_inv(0.7) == 0.7);
  CHECK(pot.phi_inv_at_zero() == 0.0);
  Eigen::VectorXd p(2);
  p << 0.25, 0.75;
  CHECK(*pot.closed_form_mirror_value(p) == doctest::Approx(-0.6875).epsilon(1e-15));
}

TEST_CASE("negentropy bregman equals kl divergence") {
  NegEntropyPotential pot;
  Eigen::VectorXd x(2), y(2);
  x << 0.5, 0.5;
  y << 0.25, 0.75;
  // KL((.5,.5) || (.25,.75)) = 0.5*log(4/3).
  CHECK(bregman(pot, x, y) == doctest::Approx(0.5 * std::log(4.0 / 3.0)).epsilon(1e-13));

  Philox rng(11, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd a = random_simplex_row(rng, 4);
    Eigen::VectorXd b = random_simplex_row(rng, 4);
    double kl = 0.0;
    for (int i = 0; i < 4; ++i) kl += a[i] * std::log(a[i] / b[i]);
    CHECK(bregman(pot, a, b) == doctest::Approx(kl).epsilon(1e-10));
  }
}

TEST_CASE("l2 bregman is half squared distance") {
  L2Potential pot;
  Philox rng(12, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd a = random_simplex_row(rng, 5);
    Eigen::VectorXd b = random_simplex_row(rng, 5);
    CHECK(bregman(pot, a, b) ==
          doctest::Approx(0.5 * (a - b).squaredNorm()).epsilon(1e-12));
  }
}

TEST_CASE("bregman nonnegativity and identity of indiscernibles") {
  Philox rng(13, 0);
  for (const auto& pot : all_families()) {
    CAPTURE(pot->name());
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd a = random_simplex_row(rng, 3);
      Eigen::VectorXd b = random_simplex_row(rng, 3);
      CHECK(bregman(*pot, a, b) >= -1e-12);
      CHECK(std::abs(bregman(*pot, a, a)) <= 1e-12);
    }
  }
}

TEST_CASE("bregman rejects zero-mass anchors without finite gradients") {
  NegEntropyPotential ne;
  Eigen::VectorXd x(2), y(2);
  x << 0.5, 0.5;
  y << 0.0, 1.0;
  CHECK_THROWS_AS(bregman(ne, x, y), std::domain_error);
  // L2 has a finite gradient at zero, so the same anchor is fine.
  L2Potential l2;
  CHECK(bregman(l2, x, y) == doctest::Approx(0.25));
}

TEST_CASE("bregman is locally quadratic in the hessian metric") {
  NegEntropyPotential pot;
  Eigen::VectorXd y(2), dir(2);
  y << 0.3, 0.7;
  dir << 1.0, -1.0;
  const auto [actual, predicted] = bregman_local_quadratic_check(pot, y, dir, 1e-4);
  CHECK(predicted > 0.0);
  CHECK(std::abs(actual - predicted) <= 1e-3 * predicted);
}

TEST_CASE("quadrature agrees with closed forms") {
  Philox rng(14, 0);
  for (const auto& pot : all_families()) {
    CAPTURE(pot->name());
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd p = random_simplex_row(rng, 4);
      const double closed = mirror_map_value(*pot, p);
      const double quad = mirror_map_value_quadrature(*pot, p, 1e-8);
      CHECK(std::abs(closed - quad) <= 1e-7);
    }
  }
}

TEST_CASE("quadrature handles near-zero coordinates") {
  NegEntropyPotential pot;
  Eigen::VectorXd p(3);
  p << 1e-6, 0.4, 0.599999;
  CHECK(std::abs(mirror_map_value(pot, p) - mirror_map_value_quadrature(pot, p, 1e-8)) <= 1e-6);
}

TEST_CASE("piecewise with a single unit knot matches l2 on probabilities") {
  Eigen::VectorXd psi(1);
  psi << 1.0;
  PiecewisePotential pw(std::move(psi));
  L2Potential l2;
  CHECK(pw.knot_span() == 1.0);
  for (double p : {1e-9, 0.1, 0.25, 0.5, 0.999, 1.0}) {
    CHECK(pw.phi_inv(p) == doctest::Approx(l2.phi_inv(p)).epsilon(1e-15));
  }
  Philox rng(15, 0);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::VectorXd p = random_simplex_row(rng, 3);
    CHECK(*pw.closed_form_mirror_value(p) ==
          doctest::Approx(*l2.closed_form_mirror_value(p)).epsilon(1e-14));
  }
}

TEST_CASE("augmented piecewise coincides with plain piecewise on (0, 1]") {
  const Eigen::VectorXd psi = negentropy_init_psi(25);
  PiecewisePotential plain{psi};
  AugmentedPiecewisePotential aug{psi};
  for (double p : {1e-12, 1e-3, 0.2, 0.5, 0.77, 1.0}) {
    CHECK(plain.phi_inv(p) == aug.phi_inv(p));
  }
  for (double x = 0.0; x <= plain.knot_span(); x += plain.knot_span() / 97.0) {
    CHECK(plain.phi(x) == aug.phi(x));
  }
  // Below the support the tails differ but clip to the same zero mass.
  CHECK(plain.phi(-0.5) == 0.0);
  CHECK(aug.phi(-0.5) == doctest::Approx(std::expm1(-0.5)));
  CHECK(std::max(aug.phi(-0.5), 0.0) == 0.0);
  // Above the span one plateaus while the other keeps increasing.
  CHECK(plain.phi(plain.knot_span() + 2.0) == 1.0);
  CHECK(aug.phi(aug.knot_span() + 2.0) == doctest::Approx(3.0));
  // Identical mirror maps either way.
  Philox rng(16, 0);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::VectorXd p = random_simplex_row(rng, 4);
    CHECK(*plain.closed_form_mirror_value(p) == *aug.closed_form_mirror_value(p));
  }
}

TEST_CASE("phi is nondecreasing for every family") {
  for (const auto& pot : all_families()) {
    CAPTURE(pot->name());
    double prev = -kInf;
    for (double x = -4.0; x <= 4.0; x += 0.03125) {
      const double v = pot->phi(x);
      CHECK(std::isfinite(v));
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("phi_inv inverts phi on the interior") {
  for (const auto& pot : all_families()) {
    CAPTURE(pot->name());
    for (double p : {0.05, 0.2, 0.5, 0.9, 1.0}) {
      const double x = pot->phi_inv(p);
      CHECK(pot->phi(x) == doctest::Approx(p).epsilon(1e-9));
    }
  }
}

TEST_CASE("negentropy knot initialization interpolates the exponential") {
  const int n = 100;
  const double span = 1.0;
  const Eigen::VectorXd psi = negentropy_init_psi(n, span);
  REQUIRE(psi.size() == n);
  CHECK(psi.minCoeff() > 0.0);
  CHECK(psi.sum() == doctest::Approx(span).epsilon(1e-12));

  const double c = span / (3.0 * std::log(10.0) + std::log(static_cast<double>(n)));
  CHECK(psi[0] == doctest::Approx(3.0 * c * std::log(10.0)).epsilon(1e-12));

  PiecewisePotential pot{psi};
  for (int j = 1; j <= n; ++j) {
    const double p = static_cast<double>(j) / n;
    // Knots sit exactly on the negentropy inverse: exp((x - span)/c) = j/n.
    const double x = pot.phi_inv(p);
    CHECK(std::exp((x - span) / c) == doctest::Approx(p).epsilon(1e-10));
  }
  // Between knots the linear interpolation stays close to c*log(p) + span.
  double worst = 0.0;
  for (double p = 0.01; p <= 1.0; p += 1e-3) {
    worst = std::max(worst, std::abs(pot.phi_inv(p) - (span + c * std::log(p))));
  }
  CHECK(worst <= 6e-3);
}

TEST_CASE("monotone net reproduces negentropy at its initialization") {
  MonotoneNetPotentialInv net(MonotoneNetPotentialInv::near_negentropy_raw());
  NegEntropyPotential ne;
  for (double p : {1e-8, 1e-3, 0.1, 0.5, 1.0}) {
    CHECK(net.phi_inv(p) == doctest::Approx(std::log(p)).epsilon(1e-14));
  }
  CHECK(net.phi_inv_at_zero() == -kInf);
  for (double x : {-3.0, -1.0, 0.0, 0.2}) {
    CHECK(net.phi(x) == doctest::Approx(std::exp(x)).epsilon(1e-10));
  }
  Philox rng(17, 0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd p = random_simplex_row(rng, 4);
    CHECK(*net.closed_form_mirror_value(p) ==
          doctest::Approx(*ne.closed_form_mirror_value(p)).epsilon(1e-12));
  }
}

TEST_CASE("perturbed monotone net stays a valid potential") {
  Eigen::VectorXd raw = MonotoneNetPotentialInv::near_negentropy_raw();
  Philox rng(18, 0);
  for (int i = 0; i < raw.size(); ++i) raw[i] += 0.05 * rng.next_gaussian();
  MonotoneNetPotentialInv net(std::move(raw));

  double prev = -kInf;
  for (double p = 1e-6; p <= 1.0; p *= 1.9) {
    const double v = net.phi_inv(p);
    CHECK(std::isfinite(v));
    CHECK(v > prev);
    prev = v;
  }
  Eigen::VectorXd p(3);
  p << 0.2, 0.3, 0.5;
  const double closed = mirror_map_value(net, p);
  const double quad = mirror_map_value_quadrature(net, p, 1e-8);
  CHECK(std::abs(closed - quad) <= 1e-6);
}

TEST_CASE("potential serialization round trips exactly") {
  const Eigen::VectorXd psi = negentropy_init_psi(7);
  PiecewisePotential pw{psi};
  auto pw2 = deserialize_potential(serialize_potential(pw));
  auto* back = dynamic_cast<PiecewisePotential*>(pw2.get());
  REQUIRE(back != nullptr);
  REQUIRE(back->psi().size() == psi.size());
  for (int i = 0; i < psi.size(); ++i) CHECK(back->psi()[i] == psi[i]);

  Eigen::VectorXd raw = MonotoneNetPotentialInv::near_negentropy_raw();
  Philox rng(19, 0);
  for (int i = 0; i < raw.size(); ++i) raw[i] += 0.1 * rng.next_gaussian();
  MonotoneNetPotentialInv net(raw);
  auto net2 = deserialize_potential(serialize_potential(net));
  auto* nb = dynamic_cast<MonotoneNetPotentialInv*>(net2.get());
  REQUIRE(nb != nullptr);
  for (int i = 0; i < raw.size(); ++i) CHECK(nb->raw()[i] == raw[i]);

  for (const char* name : {"negentropy", "l2", "augmented_piecewise"}) {
    auto pot = make_builtin_potential(name);
    CHECK(deserialize_potential(serialize_potential(*pot))->name() == pot->name());
  }
  CHECK_THROWS(deserialize_potential("not a potential file"));
}

TEST_CASE("builtin potential selector") {
  CHECK(make_builtin_potential("negentropy")->name() == "negentropy");
  CHECK(make_builtin_potential("l2")->name() == "l2");
  CHECK(make_builtin_potential("monotone_net")->name() == "monotone_net");
  auto pw = make_builtin_potential("piecewise:13");
  auto* p = dynamic_cast<PiecewisePotential*>(pw.get());
  REQUIRE(p != nullptr);
  CHECK(p->knot_count() == 13);
  auto pw100 = make_builtin_potential("piecewise");
  CHECK(dynamic_cast<PiecewisePotential*>(pw100.get())->knot_count() == 100);
  CHECK(make_builtin_potential("augmented_piecewise:9")->name() == "augmented_piecewise");
  CHECK_THROWS_AS(make_builtin_potential("frobnicate"), std::invalid_argument);
}

TEST_CASE("psi_from_raw maps log widths to positive gaps") {
  Eigen::VectorXd raw(3);
  raw << -0.5, 0.0, 2.0;
  const Eigen::VectorXd psi = PiecewisePotential::psi_from_raw(raw);
  CHECK(psi[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(psi[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(psi[2] == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
  // Arbitrarily negative raws stay strictly positive via the floor.
  Eigen::VectorXd deep(1);
  deep << -1e4;
  CHECK(PiecewisePotential::psi_from_raw(deep)[0] > 0.0);
}
