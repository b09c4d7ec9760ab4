#include "pmdlab/mdp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pmdlab {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// Samples an index from a probability row using a single uniform draw.
int sample_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, double u) {
  double acc = 0.0;
  int last = static_cast<int>(row.size()) - 1;
  for (int i = 0; i <= last; ++i) {
    acc += row(i);
    if (u < acc) return i;
  }
  return last;
}

}  // namespace

void TabularMdp::validate() const {
  int s = num_states();
  int a = num_actions();
  require(s > 0 && a > 0, "mdp must have at least one state and action");
  require(transition.rows() == static_cast<Eigen::Index>(s) * a && transition.cols() == s,
          "transition must be (S*A) x S");
  require(start.size() == s, "start distribution size mismatch");
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  for (Eigen::Index i = 0; i < transition.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < transition.cols(); ++j) {
      double p = transition(i, j);
      require(p >= 0.0 && std::isfinite(p), "transition entries must be nonnegative");
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-12, "transition row " + std::to_string(i) +
                                              " sums to " + std::to_string(sum));
  }
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < a; ++j)
      require(reward(i, j) >= 0.0 && reward(i, j) <= 1.0, "rewards must lie in [0, 1]");
  double mu_sum = 0.0;
  for (int i = 0; i < s; ++i) {
    require(start(i) >= 0.0, "start distribution entries must be nonnegative");
    mu_sum += start(i);
  }
  require(std::abs(mu_sum - 1.0) <= 1e-12, "start distribution must sum to 1");
}

void TabularPolicy::validate() const {
  require(probs.rows() > 0 && probs.cols() > 0, "policy must be nonempty");
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    double sum = 0.0;
    for (Eigen::Index a = 0; a < probs.cols(); ++a) {
      require(probs(s, a) >= 0.0 && std::isfinite(probs(s, a)),
              "policy entries must be nonnegative");
      sum += probs(s, a);
    }
    require(std::abs(sum - 1.0) <= 1e-10,
            "policy row " + std::to_string(s) + " sums to " + std::to_string(sum));
  }
}

TabularPolicy TabularPolicy::uniform(int num_states, int num_actions) {
  TabularPolicy p;
  p.probs = Eigen::MatrixXd::Constant(num_states, num_actions, 1.0 / num_actions);
  return p;
}

Eigen::MatrixXd policy_transition_matrix(const TabularMdp& mdp, const TabularPolicy& policy) {
  int s_count = mdp.num_states();
  int a_count = mdp.num_actions();
  require(policy.num_states() == s_count && policy.num_actions() == a_count,
          "policy shape does not match mdp");
  Eigen::MatrixXd m(s_count * a_count, s_count * a_count);
  for (int s = 0; s < s_count; ++s) {
    for (int a = 0; a < a_count; ++a) {
      int row = s * a_count + a;
      for (int sp = 0; sp < s_count; ++sp) {
        double p = mdp.transition(row, sp);
        for (int ap = 0; ap < a_count; ++ap) {
          m(row, sp * a_count + ap) = p * policy.probs(sp, ap);
        }
      }
    }
  }
  return m;
}

Eigen::MatrixXd exact_q(const TabularMdp& mdp, const TabularPolicy& policy) {
  int s_count = mdp.num_states();
  int a_count = mdp.num_actions();
  int n = s_count * a_count;
  Eigen::MatrixXd p_pi = policy_transition_matrix(mdp, policy);
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - mdp.gamma * p_pi;
  Eigen::VectorXd r(n);
  for (int s = 0; s < s_count; ++s)
    for (int a = 0; a < a_count; ++a) r(s * a_count + a) = mdp.reward(s, a);
  Eigen::VectorXd q_flat = system.partialPivLu().solve(r);
  double residual = (system * q_flat - r).lpNorm<Eigen::Infinity>();
  if (!(residual <= 1e-9)) {
    throw std::runtime_error("exact_q solve residual " + std::to_string(residual));
  }
  Eigen::MatrixXd q(s_count, a_count);
  for (int s = 0; s < s_count; ++s)
    for (int a = 0; a < a_count; ++a) q(s, a) = q_flat(s * a_count + a);
  return q;
}

Eigen::VectorXd v_from_q(const TabularPolicy& policy, const Eigen::MatrixXd& q) {
  return (policy.probs.array() * q.array()).rowwise().sum();
}

Eigen::VectorXd exact_v(const TabularMdp& mdp, const TabularPolicy& policy) {
  return v_from_q(policy, exact_q(mdp, policy));
}

double value_of(const TabularMdp& mdp, const TabularPolicy& policy,
                const Eigen::VectorXd& dist) {
  require(dist.size() == mdp.num_states(), "distribution size mismatch");
  return dist.dot(exact_v(mdp, policy));
}

namespace {

// State-to-state chain P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
Eigen::MatrixXd state_chain(const TabularMdp& mdp, const TabularPolicy& policy) {
  int s_count = mdp.num_states();
  int a_count = mdp.num_actions();
  Eigen::MatrixXd p(s_count, s_count);
  p.setZero();
  for (int s = 0; s < s_count; ++s)
    for (int a = 0; a < a_count; ++a)
      p.row(s) += policy.probs(s, a) * mdp.transition.row(s * a_count + a);
  return p;
}

}  // namespace

Eigen::VectorXd visitation_distribution(const TabularMdp& mdp, const TabularPolicy& policy,
                                        const Eigen::VectorXd& start) {
  require(start.size() == mdp.num_states(), "start distribution size mismatch");
  int s_count = mdp.num_states();
  Eigen::MatrixXd chain = state_chain(mdp, policy);
  // d^T = (1-gamma) start^T (I - gamma P_pi)^{-1}
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(s_count, s_count) - mdp.gamma * chain.transpose();
  Eigen::VectorXd d = system.partialPivLu().solve((1.0 - mdp.gamma) * start);
  double sum = d.sum();
  if (!(std::abs(sum - 1.0) <= 1e-10)) {
    throw std::runtime_error("visitation distribution sums to " + std::to_string(sum));
  }
  return d;
}

OptimalPolicyResult optimal_policy_oracle(const TabularMdp& mdp, double tol) {
  require(tol > 0.0, "tol must be positive");
  int s_count = mdp.num_states();
  int a_count = mdp.num_actions();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(s_count);
  // Residual target tol*(1-gamma)/gamma makes the final iterate tol-accurate
  // by the standard contraction argument; gamma = 0 needs a single sweep.
  double target = mdp.gamma > 0.0 ? tol * (1.0 - mdp.gamma) / mdp.gamma : 0.0;
  int iterations = 0;
  const int max_iterations = 1000000;
  while (true) {
    Eigen::VectorXd next(s_count);
    for (int s = 0; s < s_count; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < a_count; ++a) {
        double qa = mdp.reward(s, a) + mdp.gamma * mdp.transition.row(s * a_count + a).dot(v);
        best = std::max(best, qa);
      }
      next(s) = best;
    }
    double residual = (next - v).lpNorm<Eigen::Infinity>();
    v = next;
    ++iterations;
    if (residual <= target || mdp.gamma == 0.0) break;
    if (iterations >= max_iterations) {
      throw std::runtime_error("value iteration failed to converge");
    }
  }
  TabularPolicy greedy;
  greedy.probs = Eigen::MatrixXd::Zero(s_count, a_count);
  for (int s = 0; s < s_count; ++s) {
    int best_a = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < a_count; ++a) {
      double qa = mdp.reward(s, a) + mdp.gamma * mdp.transition.row(s * a_count + a).dot(v);
      if (qa > best) {
        best = qa;
        best_a = a;
      }
    }
    greedy.probs(s, best_a) = 1.0;
  }
  return OptimalPolicyResult{greedy, v, iterations};
}

RolloutSampler::RolloutSampler(const TabularMdp& mdp, uint64_t seed, int num_envs,
                               double reset_prob)
    : mdp_(&mdp), reset_prob_(reset_prob) {
  require(num_envs > 0, "num_envs must be positive");
  require(reset_prob >= 0.0 && reset_prob < 1.0, "reset_prob must lie in [0, 1)");
  env_state_.resize(num_envs);
  env_rng_.reserve(num_envs);
  for (int e = 0; e < num_envs; ++e) {
    env_rng_.emplace_back(seed, stream_id(streams::kRolloutEnv, 0, e));
    env_state_[e] = sample_row(mdp.start.transpose(), env_rng_[e].next_double());
  }
}

std::vector<Trajectory> RolloutSampler::collect(const TabularPolicy& policy, int unroll_length) {
  require(unroll_length > 0, "unroll_length must be positive");
  require(policy.num_states() == mdp_->num_states() &&
              policy.num_actions() == mdp_->num_actions(),
          "policy shape does not match mdp");
  int a_count = mdp_->num_actions();
  std::vector<Trajectory> out(env_state_.size());
  for (size_t e = 0; e < env_state_.size(); ++e) {
    Philox& rng = env_rng_[e];
    Trajectory& tr = out[e];
    tr.states.resize(unroll_length);
    tr.actions.resize(unroll_length);
    tr.rewards.resize(unroll_length);
    tr.reset_after.assign(unroll_length, 0);
    int s = env_state_[e];
    for (int t = 0; t < unroll_length; ++t) {
      int a = sample_row(policy.probs.row(s), rng.next_double());
      tr.states[t] = s;
      tr.actions[t] = a;
      tr.rewards[t] = mdp_->reward(s, a);
      int sp = sample_row(mdp_->transition.row(s * a_count + a), rng.next_double());
      if (reset_prob_ > 0.0 && rng.next_double() < reset_prob_) {
        sp = sample_row(mdp_->start.transpose(), rng.next_double());
        tr.reset_after[t] = 1;
      }
      s = sp;
    }
    tr.bootstrap_state = s;
    env_state_[e] = s;
  }
  total_steps_ += static_cast<int64_t>(env_state_.size()) * unroll_length;
  return out;
}

std::vector<Trajectory> sample_rollouts(const TabularMdp& mdp, const TabularPolicy& policy,
                                        int num_envs, int unroll_length, uint64_t seed,
                                        double reset_prob) {
  RolloutSampler sampler(mdp, seed, num_envs, reset_prob);
  return sampler.collect(policy, unroll_length);
}

}  // namespace pmdlab
