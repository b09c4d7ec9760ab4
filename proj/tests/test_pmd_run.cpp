#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "pmdlab/gridworld.hpp"
#include "pmdlab/pmd.hpp"
#include "pmdlab/potentials.hpp"
#include "test_util.hpp"

using namespace pmdlab;

namespace {

const TabularMdp& corridor_mdp() {
  static const TabularMdp mdp = [] {
    for (const auto& [name, spec] : held_out_configs())
      if (name == "long_corridor") return compile(spec);
    throw std::logic_error("missing layout");
  }();
  return mdp;
}

PmdConfig exact_config(int iterations) {
  PmdConfig config;
  config.q_mode = QMode::kExact;
  config.iterations = iterations;
  return config;
}

}  // namespace

TEST_CASE("exact negentropy run converges on the corridor") {
  NegEntropyPotential pot;
  const PmdRunRecord record = run_pmd(corridor_mdp(), pot, exact_config(400));

  REQUIRE(record.value.size() == 400);
  REQUIRE(record.q_error.size() == 400);
  REQUIRE(record.update_l1.size() == 400);
  REQUIRE(record.eq3_lhs.size() == 400);
  CHECK(record.env_steps_per_iteration == 0);
  CHECK(record.potential_name == "negentropy");

  // Exact q has no estimation error, hence a zero eq2 floor.
  for (double e : record.q_error) CHECK(e <= 1e-9);
  for (size_t t = 0; t + 1 < record.value.size(); ++t)
    CHECK(record.value[t + 1] >= record.value[t] - 1e-10);
  CHECK(record.final_value >= record.value.back() - 1e-10);

  CHECK(record.v_star_mu > record.value.front());
  CHECK(record.v_star_mu - record.final_value <= 1e-3);
  CHECK(record.dstar0 > 0.0);

  const Theorem1Report report = theorem1_check(record, corridor_mdp(), pot);
  CHECK(report.ok());
  CHECK(!report.eq3_vacuous);
  // Zero error floor leaves only linear-solve roundoff, amplified by the
  // 1/(1-gamma) = 100 conditioning of the value computation.
  CHECK(report.eq2_worst_slack >= -1e-10);
  CHECK(report.summary().find("0 violations") != std::string::npos);
}

TEST_CASE("exact runs are monotone for all closed-form families") {
  const TabularMdp mdp = random_mdp(5, 4, 0.9, 313);
  std::vector<std::unique_ptr<OmegaPotential>> pots;
  pots.push_back(std::make_unique<L2Potential>());
  pots.push_back(std::make_unique<PiecewisePotential>(negentropy_init_psi(48)));
  pots.push_back(std::make_unique<AugmentedPiecewisePotential>(negentropy_init_psi(48)));
  for (const auto& pot : pots) {
    CAPTURE(pot->name());
    const PmdRunRecord record = run_pmd(mdp, *pot, exact_config(60));
    for (size_t t = 0; t + 1 < record.value.size(); ++t)
      CHECK(record.value[t + 1] >= record.value[t] - 1e-10);
    CHECK(record.final_value > record.value.front());
    const Theorem1Report report = theorem1_check(record, mdp, *pot);
    CHECK(report.eq2_violations == 0);
  }
}

TEST_CASE("sampled runs fill the diagnostics and respect the bounds") {
  NegEntropyPotential pot;
  PmdConfig config;
  config.q_mode = QMode::kGae;
  config.iterations = 40;
  config.num_envs = 16;
  config.unroll_length = 16;
  config.seed = 5;
  const PmdRunRecord record = run_pmd(corridor_mdp(), pot, config);

  CHECK(record.env_steps_per_iteration == 256);
  REQUIRE(record.value.size() == 40);
  double max_err = 0.0;
  for (double e : record.q_error) {
    CHECK(e >= 0.0);
    max_err = std::max(max_err, e);
  }
  CHECK(max_err > 1e-6);  // sampling really is noisy
  for (size_t t = 0; t < record.update_l1.size(); ++t) {
    CHECK(record.update_l1[t] >= 0.0);
    CHECK(record.update_l1[t] <= 2.0 + 1e-12);
    CHECK(record.eq2_lower_bound[t] <= 0.0);
  }
  const Theorem1Report report = theorem1_check(record, corridor_mdp(), pot);
  CHECK(report.ok());

  // The error floor genuinely engages: the estimation error times the update
  // distance produces a strictly negative admissible-dip budget somewhere.
  const double tightest_bound =
      *std::min_element(record.eq2_lower_bound.begin(), record.eq2_lower_bound.end());
  CHECK(tightest_bound < -1e-8);
}

TEST_CASE("runs are deterministic in the seed") {
  NegEntropyPotential pot;
  PmdConfig config;
  config.q_mode = QMode::kGae;
  config.iterations = 12;
  config.num_envs = 8;
  config.unroll_length = 16;
  config.seed = 99;
  const PmdRunRecord a = run_pmd(corridor_mdp(), pot, config);
  const PmdRunRecord b = run_pmd(corridor_mdp(), pot, config);
  REQUIRE(a.value.size() == b.value.size());
  for (size_t t = 0; t < a.value.size(); ++t) {
    CHECK(a.value[t] == b.value[t]);
    CHECK(a.q_error[t] == b.q_error[t]);
    CHECK(a.update_l1[t] == b.update_l1[t]);
  }
  CHECK((a.final_policy.probs - b.final_policy.probs).cwiseAbs().maxCoeff() == 0.0);

  config.seed = 100;
  const PmdRunRecord c = run_pmd(corridor_mdp(), pot, config);
  bool differs = false;
  for (size_t t = 0; t < a.value.size() && !differs; ++t)
    differs = a.value[t] != c.value[t];
  CHECK(differs);
}

TEST_CASE("bound terms can be skipped") {
  NegEntropyPotential pot;
  PmdConfig config = exact_config(10);
  config.compute_bound_terms = false;
  const PmdRunRecord record = run_pmd(corridor_mdp(), pot, config);
  CHECK(record.eq3_lhs.empty());
  CHECK(record.eq3_rate_term.empty());
  CHECK(record.dstar0 == 0.0);
  CHECK(record.v_star_mu == 0.0);
  REQUIRE(record.value.size() == 10);
  CHECK(record.eq2_lower_bound.size() == 10);
}

TEST_CASE("inner-sgd runs improve the policy") {
  NegEntropyPotential pot;
  PmdConfig config = exact_config(15);
  config.update_mode = UpdateMode::kInnerSgd;
  config.inner_epochs = 64;
  config.inner_lr = 40.0;
  const PmdRunRecord record = run_pmd(corridor_mdp(), pot, config);
  CHECK(record.final_value > record.value.front());
  record.final_policy.validate();

  // Sampled state weights follow the empirical visitation.
  PmdConfig sampled = config;
  sampled.q_mode = QMode::kGae;
  sampled.num_envs = 8;
  sampled.unroll_length = 16;
  const PmdRunRecord record2 = run_pmd(corridor_mdp(), pot, sampled);
  CHECK(std::isfinite(record2.final_value));
  record2.final_policy.validate();
}

TEST_CASE("piecewise potentials drive exact runs to the optimum") {
  PiecewisePotential pot{negentropy_init_psi(100)};
  const PmdRunRecord record = run_pmd(corridor_mdp(), pot, exact_config(400));
  CHECK(record.v_star_mu - record.final_value <= 1e-3);
  const Theorem1Report report = theorem1_check(record, corridor_mdp(), pot);
  CHECK(report.ok());
}

TEST_CASE("theorem checker recomputes the oracle terms") {
  NegEntropyPotential pot;
  const PmdRunRecord record = run_pmd(corridor_mdp(), pot, exact_config(30));
  const Theorem1Report report = theorem1_check(record, corridor_mdp(), pot);
  CHECK(report.v_star_mu == doctest::Approx(record.v_star_mu).epsilon(1e-9));
  CHECK(report.dstar0 == doctest::Approx(record.dstar0).epsilon(1e-9));

  // Corrupting the series must be caught rather than absorbed.  At gamma 0.99
  // the discount term dwarfs any realistic corruption, so flagging is checked
  // on a short-horizon mdp where the bound has teeth.
  const TabularMdp small = random_mdp(4, 3, 0.5, 515);
  const PmdRunRecord base = run_pmd(small, pot, exact_config(30));
  CHECK(theorem1_check(base, small, pot).ok());

  PmdRunRecord broken = base;
  for (double& v : broken.value) v -= 20.0;  // pretend we did much worse
  broken.final_value -= 20.0;
  const Theorem1Report flagged = theorem1_check(broken, small, pot);
  CHECK(flagged.eq3_violations > 0);

  PmdRunRecord dipped = base;
  dipped.value[10] += 0.5;  // manufactured non-monotone step
  const Theorem1Report dip_report = theorem1_check(dipped, small, pot);
  CHECK(dip_report.eq2_violations > 0);
}
