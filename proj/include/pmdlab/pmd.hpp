#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "pmdlab/mdp.hpp"
#include "pmdlab/potentials.hpp"

namespace pmdlab {

enum class QMode { kExact, kGae };
enum class UpdateMode { kClosedForm, kInnerSgd };

std::string to_string(QMode m);
std::string to_string(UpdateMode m);
QMode q_mode_from_string(const std::string& s);
UpdateMode update_mode_from_string(const std::string& s);

struct PmdConfig {
  double eta = 0.1;
  int iterations = 128;
  QMode q_mode = QMode::kGae;
  UpdateMode update_mode = UpdateMode::kClosedForm;
  // Sampling (QMode::kGae): 64 envs x unroll 32 over 128 iterations = 2^18 steps.
  int num_envs = 64;
  int unroll_length = 32;
  double gae_lambda = 0.95;
  double critic_lr = 1.0;
  double reset_prob = 0.0;
  // Inner solver (UpdateMode::kInnerSgd): full-batch steps on the logits.
  int inner_epochs = 32;
  double inner_lr = 40.0;
  uint64_t seed = 0;
  // Fill the Eq. (3) series (runs the optimal-policy oracle once).
  bool compute_bound_terms = true;

  void validate() const;
};

// Per-iteration series all have length iterations; value[t] is the value of
// the policy entering iteration t and final_value the value of the policy
// after the last update.
struct PmdRunRecord {
  std::vector<double> value;             // V^t(mu)
  std::vector<double> q_error;           // max_s ||qhat^t_s - Q^t_s||_inf
  std::vector<double> update_l1;         // max_s ||pi^{t+1}_s - pi^t_s||_1
  std::vector<double> eq2_lower_bound;   // -q_error*update_l1/(1-gamma)
  std::vector<double> eq3_lhs;           // V*(mu) - mean of value[0..t]
  std::vector<double> eq3_rate_term;     // D*_0/(eta*(1-gamma)*(t+1))
  std::vector<double> eq3_discount_term; // 1/((1-gamma)^2*(t+1))
  std::vector<double> eq3_floor_term;    // 4*max_{k<=t} q_error[k]/(1-gamma)^2
  double dstar0 = 0.0;
  double v_star_mu = 0.0;
  double final_value = 0.0;
  int64_t env_steps_per_iteration = 0;
  TabularPolicy final_policy;
  std::string potential_name;
  PmdConfig config;
};

// Solution of sum_a max(phi(scores_a + lambda), 0) = 1.  lambda is the
// infimum of the solution set (well-defined even where phi plateaus), found
// by predicate bisection; rows are exactly renormalized afterwards.
struct NormalizedRow {
  Eigen::VectorXd probs;
  double lambda = 0.0;
  bool used_augmented_fallback = false;
};

// scores may contain -inf entries (excluded from the support and assigned
// probability 0).  Throws std::runtime_error if no bracket can be found.
NormalizedRow normalize_scores(const OmegaPotential& pot, const Eigen::VectorXd& scores);

// pi^{t+1}(a|s) = max(phi(phi_inv(pi^t(a|s)) + eta*qhat(s,a) + lambda_s), 0),
// the exact per-state argmax of eta<qhat_s, p> - D_h(p, pi^t_s).
TabularPolicy pmd_update_closed_form(const TabularPolicy& policy, const Eigen::MatrixXd& q_hat,
                                     const OmegaPotential& pot, double eta);

// Full-batch gradient ascent on softmax logits for the weighted surrogate
// sum_s w(s) * (eta<qhat_s, pi_s> - D_h(pi_s, pi^t_s)) where pi^t = softmax of
// the incoming logits.  Probabilities are clamped to >= 1e-8 before phi_inv
// so the Bregman gradient stays finite.
Eigen::MatrixXd pmd_update_inner_sgd(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& q_hat,
                                     const OmegaPotential& pot, double eta, int epochs, double lr,
                                     const Eigen::VectorXd& state_weights);

// The surrogate objective the inner solver ascends (for diagnostics/tests).
double inner_objective(const Eigen::MatrixXd& logits_policy, const Eigen::MatrixXd& q_hat,
                       const TabularPolicy& prev, const OmegaPotential& pot, double eta,
                       const Eigen::VectorXd& state_weights);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct GaeResult {
  Eigen::MatrixXd q_hat;
  Eigen::VectorXd critic;  // critic moved toward per-state mean lambda-returns
};

// GAE(lambda) advantages per stream, truncation bootstrapped with the critic;
// Q_hat(s,a) = critic(s) + mean advantage over visits of (s,a), critic(s) for
// unvisited pairs.  Throws std::invalid_argument on an empty batch.
GaeResult estimate_q_gae(const std::vector<Trajectory>& batch, const Eigen::VectorXd& critic,
                         int num_actions, double gamma, double lambda, double critic_lr = 1.0);

PmdRunRecord run_pmd(const TabularMdp& mdp, const OmegaPotential& pot, const PmdConfig& config);

struct Theorem1Report {
  int eq2_violations = 0;
  int eq3_violations = 0;
  // min over t of (lhs - bound); negative values beyond tolerance are
  // violations.  Eq. (3) slack is bound - lhs.
  double eq2_worst_slack = 0.0;
  double eq3_worst_slack = 0.0;
  bool eq3_vacuous = false;  // D*_0 not finite: the bound is trivially true
  double dstar0 = 0.0;
  double v_star_mu = 0.0;
  std::string summary() const;
  bool ok() const { return eq2_violations == 0 && eq3_violations == 0; }
};

// Recomputes V*, d* and D*_0 from scratch (uniform initial policy) and checks
// the quasi-monotonicity inequality at every iteration and the mean-regret
// bound at every prefix length.
Theorem1Report theorem1_check(const PmdRunRecord& record, const TabularMdp& mdp,
                              const OmegaPotential& pot, double tol = 1e-8);

}  // namespace pmdlab
