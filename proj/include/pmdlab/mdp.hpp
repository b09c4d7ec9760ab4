#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "pmdlab/rng.hpp"

namespace pmdlab {

// Finite discounted MDP.  transition is (S*A) x S row-stochastic with row
// s*A + a holding P(.|s,a); reward is S x A with entries in [0,1]; start is a
// distribution over states; gamma in [0,1).
struct TabularMdp {
  Eigen::MatrixXd transition;
  Eigen::MatrixXd reward;
  Eigen::VectorXd start;
  double gamma = 0.99;

  int num_states() const { return static_cast<int>(reward.rows()); }
  int num_actions() const { return static_cast<int>(reward.cols()); }
  // Throws std::invalid_argument on any shape or stochasticity violation.
  void validate() const;
};

// Row-stochastic S x A matrix: probs(s, a) = pi(a|s).
struct TabularPolicy {
  Eigen::MatrixXd probs;

  int num_states() const { return static_cast<int>(probs.rows()); }
  int num_actions() const { return static_cast<int>(probs.cols()); }
  void validate() const;
  static TabularPolicy uniform(int num_states, int num_actions);
};

// One environment stream segment.  states/actions/rewards are aligned;
// reset_after[t] marks a draw from the start distribution after step t, and
// bootstrap_state is the state following the final step (used for truncation
// bootstrapping when reset_after.back() is false).
struct Trajectory {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<uint8_t> reset_after;
  int bootstrap_state = 0;
};

// State-action transition matrix M[(s,a),(s',a')] = pi(a'|s') P(s'|s,a).
Eigen::MatrixXd policy_transition_matrix(const TabularMdp& mdp, const TabularPolicy& policy);

// Exact action values: solves (I - gamma P^pi) q = r over state-action space.
// Throws std::runtime_error if the solve residual exceeds 1e-9.
Eigen::MatrixXd exact_q(const TabularMdp& mdp, const TabularPolicy& policy);

// V(s) = sum_a pi(a|s) Q(s,a).
Eigen::VectorXd exact_v(const TabularMdp& mdp, const TabularPolicy& policy);
Eigen::VectorXd v_from_q(const TabularPolicy& policy, const Eigen::MatrixXd& q);

// V^pi(dist) = dist . V^pi for a state distribution dist.
double value_of(const TabularMdp& mdp, const TabularPolicy& policy,
                const Eigen::VectorXd& dist);

// Discounted state visitation d(s) = (1-gamma) sum_t gamma^t P(s_t = s | start).
Eigen::VectorXd visitation_distribution(const TabularMdp& mdp, const TabularPolicy& policy,
                                        const Eigen::VectorXd& start);

struct OptimalPolicyResult {
  TabularPolicy policy;  // deterministic greedy policy
  Eigen::VectorXd v_star;
  int iterations = 0;
};

// Value iteration until the sup-norm Bellman residual is at most
// tol*(1-gamma)/gamma, which guarantees ||v_star - V*||_inf <= tol.
OptimalPolicyResult optimal_policy_oracle(const TabularMdp& mdp, double tol);

// Persistent batch of environment streams.  collect() continues every stream
// from where the previous call stopped.  Stream e draws from the counter-based
// stream (seed, kRolloutEnv:e), so results do not depend on evaluation order.
class RolloutSampler {
 public:
  RolloutSampler(const TabularMdp& mdp, uint64_t seed, int num_envs,
                 double reset_prob = 0.0);
  std::vector<Trajectory> collect(const TabularPolicy& policy, int unroll_length);
  int64_t total_steps() const { return total_steps_; }

 private:
  const TabularMdp* mdp_;
  double reset_prob_;
  std::vector<int> env_state_;
  std::vector<Philox> env_rng_;
  int64_t total_steps_ = 0;
};

// One-shot convenience wrapper around RolloutSampler.
std::vector<Trajectory> sample_rollouts(const TabularMdp& mdp, const TabularPolicy& policy,
                                        int num_envs, int unroll_length, uint64_t seed,
                                        double reset_prob = 0.0);

}  // namespace pmdlab
