#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pmdlab/gridworld.hpp"
#include "pmdlab/pmd.hpp"
#include "pmdlab/potentials.hpp"
#include "test_util.hpp"

using namespace pmdlab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Euclidean projection onto the simplex (sort-and-threshold), the classical
// oracle for the l2 normalization.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, tau = 0.0;
  int rho = 0;
  for (size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double candidate = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) {
      rho = static_cast<int>(j + 1);
      tau = candidate;
    }
  }
  (void)rho;
  return (v.array() - tau).cwiseMax(0.0);
}

}  // namespace

TEST_CASE("negentropy normalization is the softmax") {
  NegEntropyPotential pot;
  Philox rng(21, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd g(4);
    for (int a = 0; a < 4; ++a) g[a] = 4.0 * rng.next_double() - 2.0;
    const NormalizedRow row = normalize_scores(pot, g);
    CHECK(row.used_augmented_fallback == false);
    const Eigen::ArrayXd e = (g.array() - g.maxCoeff()).exp();
    const Eigen::VectorXd soft = (e / e.sum()).matrix();
    CHECK((row.probs - soft).cwiseAbs().maxCoeff() <= 1e-10);
    // mass(lambda) = e^lambda * sum e^g, so lambda = -log sum e^g.
    const double expect = -std::log(g.array().exp().sum());
    CHECK(row.lambda == doctest::Approx(expect).epsilon(1e-9));
    CHECK(row.probs.sum() == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("l2 normalization is the euclidean simplex projection") {
  L2Potential pot;
  Philox rng(22, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd g(5);
    for (int a = 0; a < 5; ++a) g[a] = 3.0 * rng.next_double() - 1.5;
    const NormalizedRow row = normalize_scores(pot, g);
    const Eigen::VectorXd oracle = project_simplex(g);
    CHECK((row.probs - oracle).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("minus-infinity scores are excluded from the support") {
  NegEntropyPotential pot;
  Eigen::VectorXd g(3);
  g << 0.0, -kInf, 1.0;
  const NormalizedRow row = normalize_scores(pot, g);
  CHECK(row.probs[1] == 0.0);
  const double z = std::exp(0.0) + std::exp(1.0);
  CHECK(row.probs[0] == doctest::Approx(1.0 / z).epsilon(1e-10));
  CHECK(row.probs[2] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-10));

  Eigen::VectorXd all_dead(2);
  all_dead << -kInf, -kInf;
  CHECK_THROWS_AS(normalize_scores(pot, all_dead), std::runtime_error);
  Eigen::VectorXd has_nan(2);
  has_nan << 0.0, std::nan("");
  CHECK_THROWS_AS(normalize_scores(pot, has_nan), std::invalid_argument);
}

TEST_CASE("unit-knot piecewise and l2 normalize bit-identically") {
  Eigen::VectorXd psi(1);
  psi << 1.0;
  PiecewisePotential pw{psi};
  L2Potential l2;
  Philox rng(23, 0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd g(4);
    for (int a = 0; a < 4; ++a) g[a] = 6.0 * rng.next_double() - 3.0;
    const NormalizedRow a = normalize_scores(pw, g);
    const NormalizedRow b = normalize_scores(l2, g);
    CHECK(a.lambda == b.lambda);
    for (int i = 0; i < 4; ++i) CHECK(a.probs[i] == b.probs[i]);
  }
}

TEST_CASE("augmented tails do not change the normalized row") {
  const Eigen::VectorXd psi = negentropy_init_psi(40);
  PiecewisePotential plain{psi};
  AugmentedPiecewisePotential aug{psi};
  Philox rng(24, 0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd g(5);
    for (int a = 0; a < 5; ++a) g[a] = 8.0 * rng.next_double() - 4.0;
    const NormalizedRow a = normalize_scores(plain, g);
    const NormalizedRow b = normalize_scores(aug, g);
    CHECK(a.lambda == b.lambda);
    for (int i = 0; i < 5; ++i) CHECK(a.probs[i] == b.probs[i]);
  }
}

TEST_CASE("negentropy closed-form update is the multiplicative-weights rule") {
  NegEntropyPotential pot;
  Philox rng(25, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const TabularPolicy policy = random_policy(3, 4, 1000 + trial);
    Eigen::MatrixXd q(3, 4);
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 4; ++a) q(s, a) = rng.next_double();
    const double eta = 0.05 + rng.next_double();
    const TabularPolicy next = pmd_update_closed_form(policy, q, pot, eta);
    for (int s = 0; s < 3; ++s) {
      Eigen::ArrayXd w = policy.probs.row(s).array() * (eta * q.row(s).array()).exp();
      const Eigen::VectorXd oracle = (w / w.sum()).matrix();
      CHECK((next.probs.row(s).transpose() - oracle).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("l2 closed-form update projects the shifted scores") {
  L2Potential pot;
  Philox rng(26, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const TabularPolicy policy = random_policy(2, 5, 2000 + trial);
    Eigen::MatrixXd q(2, 5);
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 5; ++a) q(s, a) = rng.next_double();
    const double eta = 0.5;
    const TabularPolicy next = pmd_update_closed_form(policy, q, pot, eta);
    for (int s = 0; s < 2; ++s) {
      const Eigen::VectorXd oracle =
          project_simplex(policy.probs.row(s).transpose() + eta * q.row(s).transpose());
      CHECK((next.probs.row(s).transpose() - oracle).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("closed-form update maximizes the per-state surrogate") {
  std::vector<std::unique_ptr<OmegaPotential>> pots;
  pots.push_back(std::make_unique<NegEntropyPotential>());
  pots.push_back(std::make_unique<L2Potential>());
  pots.push_back(std::make_unique<PiecewisePotential>(negentropy_init_psi(16)));
  pots.push_back(std::make_unique<MonotoneNetPotentialInv>(
      MonotoneNetPotentialInv::near_negentropy_raw()));

  Philox rng(27, 0);
  for (const auto& pot : pots) {
    CAPTURE(pot->name());
    for (int trial = 0; trial < 10; ++trial) {
      const TabularPolicy policy = random_policy(1, 3, 3000 + trial);
      Eigen::MatrixXd q(1, 3);
      for (int a = 0; a < 3; ++a) q(0, a) = rng.next_double();
      const double eta = 0.3;
      const TabularPolicy next = pmd_update_closed_form(policy, q, *pot, eta);
      const Eigen::VectorXd prev = policy.probs.row(0).transpose();
      const Eigen::VectorXd star = next.probs.row(0).transpose();
      const auto objective = [&](const Eigen::VectorXd& p) {
        return eta * q.row(0).dot(p) - bregman(*pot, p, prev);
      };
      const double best = objective(star);
      for (int k = 0; k < 100; ++k) {
        Eigen::VectorXd cand = random_simplex_row(rng, 3);
        CHECK(objective(cand) <= best + 1e-8);
        // Also probe near the claimed argmax.
        CHECK(objective(0.9 * star + 0.1 * cand) <= best + 1e-8);
      }
    }
  }
}

TEST_CASE("exact closed-form updates never decrease the value") {
  std::vector<std::unique_ptr<OmegaPotential>> pots;
  pots.push_back(std::make_unique<NegEntropyPotential>());
  pots.push_back(std::make_unique<L2Potential>());
  pots.push_back(std::make_unique<PiecewisePotential>(negentropy_init_psi(32)));
  const TabularMdp mdp = random_mdp(4, 3, 0.9, 77);
  for (const auto& pot : pots) {
    CAPTURE(pot->name());
    TabularPolicy policy = TabularPolicy::uniform(4, 3);
    double prev_value = value_of(mdp, policy, mdp.start);
    for (int t = 0; t < 30; ++t) {
      policy = pmd_update_closed_form(policy, exact_q(mdp, policy), *pot, 0.2);
      const double value = value_of(mdp, policy, mdp.start);
      CHECK(value >= prev_value - 1e-10);
      prev_value = value;
    }
  }
}

TEST_CASE("inner solver ascends its objective and approaches the closed form") {
  const TabularMdp mdp = random_mdp(3, 3, 0.9, 91);
  NegEntropyPotential pot;
  const TabularPolicy policy = TabularPolicy::uniform(3, 3);
  const Eigen::MatrixXd q = exact_q(mdp, policy);
  const double eta = 0.1;
  const Eigen::VectorXd weights = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  const Eigen::MatrixXd logits0 = Eigen::MatrixXd::Zero(3, 3);

  // Full-batch ascent needs lr * weight below the curvature threshold of the
  // softmax surrogate; 4.0 * (1/3) is comfortably stable.
  const double obj0 = inner_objective(logits0, q, policy, pot, eta, weights);
  const Eigen::MatrixXd logits =
      pmd_update_inner_sgd(logits0, q, pot, eta, /*epochs=*/2000, /*lr=*/4.0, weights);
  const double obj1 = inner_objective(logits, q, policy, pot, eta, weights);
  CHECK(obj1 >= obj0);

  const TabularPolicy closed = pmd_update_closed_form(policy, q, pot, eta);
  const Eigen::MatrixXd reached = softmax_rows(logits);
  for (int s = 0; s < 3; ++s) {
    const double tv = 0.5 * (reached.row(s) - closed.probs.row(s)).cwiseAbs().sum();
    CHECK(tv <= 0.01);
  }
}

TEST_CASE("gae matches the hand-computed fixture") {
  Trajectory traj;
  traj.states = {0, 1};
  traj.actions = {0, 0};
  traj.rewards = {1.0, 0.5};
  traj.reset_after = {0, 0};
  traj.bootstrap_state = 0;
  Eigen::VectorXd critic(2);
  critic << 0.25, 0.5;

  // gamma 0.5, lambda 0.8: delta_1 = 0.5 + 0.5*0.25 - 0.5 = 0.125;
  // delta_0 = 1 + 0.5*0.5 - 0.25 = 1.0; carry_0 = 1 + 0.4*0.125 = 1.05.
  const GaeResult out = estimate_q_gae({traj}, critic, 2, 0.5, 0.8, 0.5);
  CHECK(out.q_hat(0, 0) == doctest::Approx(1.3).epsilon(1e-15));
  CHECK(out.q_hat(1, 0) == doctest::Approx(0.625).epsilon(1e-15));
  // Unvisited pairs fall back to the critic.
  CHECK(out.q_hat(0, 1) == 0.25);
  CHECK(out.q_hat(1, 1) == 0.5);
  // critic_lr 0.5 moves the critic halfway to the lambda-return targets.
  CHECK(out.critic[0] == doctest::Approx(0.775).epsilon(1e-15));
  CHECK(out.critic[1] == doctest::Approx(0.5625).epsilon(1e-15));

  // A reset cuts both the bootstrap and the accumulator.
  Trajectory cut = traj;
  cut.reset_after = {1, 0};
  const GaeResult cut_out = estimate_q_gae({cut}, critic, 2, 0.5, 0.8, 0.5);
  CHECK(cut_out.q_hat(0, 0) == doctest::Approx(1.0).epsilon(1e-15));  // 0.25 + (1 - 0.25)

  // lambda = 0 reduces to one-step td errors.
  const GaeResult td = estimate_q_gae({traj}, critic, 2, 0.5, 0.0, 1.0);
  CHECK(td.q_hat(0, 0) == doctest::Approx(0.25 + 1.0).epsilon(1e-15));

  CHECK_THROWS_AS(estimate_q_gae({}, critic, 2, 0.5, 0.8), std::invalid_argument);
}

TEST_CASE("gae is exact on deterministic on-policy streams") {
  // Deterministic chain + deterministic policy + critic = V implies all
  // td errors vanish, so q_hat equals V at every visited pair.
  GridSpec spec;
  spec.width = 2;
  spec.height = 1;
  spec.wall = {0, 0};
  spec.start_cells = {0};
  spec.objects = {{1, 0, 1.0, true}};
  spec.gamma = 0.5;
  const TabularMdp mdp = compile(spec);
  TabularPolicy right;
  right.probs = Eigen::MatrixXd::Zero(2, 5);
  right.probs(0, 3) = 1.0;
  right.probs(1, 3) = 1.0;
  const Eigen::VectorXd v = exact_v(mdp, right);
  const auto batch = sample_rollouts(mdp, right, 2, 30, 13);
  const GaeResult out = estimate_q_gae(batch, v, 5, mdp.gamma, 0.7);
  for (const Trajectory& traj : batch)
    for (size_t t = 0; t < traj.states.size(); ++t)
      CHECK(out.q_hat(traj.states[t], traj.actions[t]) ==
            doctest::Approx(v[traj.states[t]]).epsilon(1e-12));
}

TEST_CASE("mode strings round trip and configs validate") {
  CHECK(q_mode_from_string(to_string(QMode::kExact)) == QMode::kExact);
  CHECK(q_mode_from_string(to_string(QMode::kGae)) == QMode::kGae);
  CHECK(update_mode_from_string(to_string(UpdateMode::kClosedForm)) == UpdateMode::kClosedForm);
  CHECK(update_mode_from_string(to_string(UpdateMode::kInnerSgd)) == UpdateMode::kInnerSgd);
  CHECK_THROWS_AS(q_mode_from_string("nope"), std::invalid_argument);
  CHECK_THROWS_AS(update_mode_from_string("nope"), std::invalid_argument);

  PmdConfig config;
  CHECK_NOTHROW(config.validate());
  config.eta = 0.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = PmdConfig{};
  config.gae_lambda = 1.5;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}
