#include "pmdlab/ampo.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace pmdlab {

AmpoPolicy ampo_policy_from_scores(const Eigen::MatrixXd& scores, const OmegaPotential& pot,
                                   double eta) {
  const int num_states = static_cast<int>(scores.rows());
  const int num_actions = static_cast<int>(scores.cols());
  AmpoPolicy out;
  out.policy.probs.resize(num_states, num_actions);
  out.lambda.resize(num_states);
  for (int s = 0; s < num_states; ++s) {
    const NormalizedRow row = normalize_scores(pot, eta * scores.row(s).transpose());
    out.policy.probs.row(s) = row.probs.transpose();
    out.lambda[s] = row.lambda;
  }
  return out;
}

Eigen::MatrixXd ampo_score_update(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& q,
                                  const Eigen::VectorXd& lambda, const OmegaPotential& pot,
                                  double eta) {
  if (q.rows() != scores.rows() || q.cols() != scores.cols())
    throw std::invalid_argument("ampo_score_update: q shape mismatch");
  if (lambda.size() != scores.rows())
    throw std::invalid_argument("ampo_score_update: lambda size mismatch");
  const double floor = pot.phi_inv_at_zero();
  Eigen::MatrixXd next(scores.rows(), scores.cols());
  for (int s = 0; s < scores.rows(); ++s)
    for (int a = 0; a < scores.cols(); ++a)
      next(s, a) =
          q(s, a) + std::max(eta * scores(s, a) + lambda[s], floor) / eta;
  return next;
}

AmpoRunResult run_ampo(const TabularMdp& mdp, const OmegaPotential& pot,
                       const PmdConfig& config) {
  config.validate();
  mdp.validate();
  const int num_states = mdp.num_states();
  const int num_actions = mdp.num_actions();
  const double gamma = mdp.gamma;

  AmpoRunResult out;
  PmdRunRecord& record = out.record;
  record.config = config;
  record.potential_name = pot.name();
  record.env_steps_per_iteration =
      config.q_mode == QMode::kGae
          ? static_cast<int64_t>(config.num_envs) * config.unroll_length
          : 0;

  if (config.compute_bound_terms) {
    const OptimalPolicyResult opt = optimal_policy_oracle(mdp, 1e-10);
    record.v_star_mu = mdp.start.dot(opt.v_star);
    const Eigen::VectorXd d_star = visitation_distribution(mdp, opt.policy, mdp.start);
    const TabularPolicy init = TabularPolicy::uniform(num_states, num_actions);
    double dstar0 = 0.0;
    for (int s = 0; s < num_states; ++s)
      dstar0 += d_star[s] * bregman(pot, opt.policy.probs.row(s).transpose(),
                                    init.probs.row(s).transpose());
    record.dstar0 = dstar0;
  }

  RolloutSampler sampler(mdp, config.seed, config.num_envs, config.reset_prob);
  Eigen::VectorXd critic = Eigen::VectorXd::Zero(num_states);

  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(num_states, num_actions);
  AmpoPolicy current = ampo_policy_from_scores(scores, pot, config.eta);

  double value_sum = 0.0;
  double max_q_error = 0.0;
  for (int t = 0; t < config.iterations; ++t) {
    const Eigen::MatrixXd q_exact = exact_q(mdp, current.policy);
    record.value.push_back(mdp.start.dot(v_from_q(current.policy, q_exact)));

    Eigen::MatrixXd q_hat;
    if (config.q_mode == QMode::kExact) {
      q_hat = q_exact;
    } else {
      const std::vector<Trajectory> batch = sampler.collect(current.policy, config.unroll_length);
      GaeResult gae = estimate_q_gae(batch, critic, num_actions, gamma, config.gae_lambda,
                                     config.critic_lr);
      critic = gae.critic;
      q_hat = std::move(gae.q_hat);
    }
    record.q_error.push_back((q_hat - q_exact).cwiseAbs().maxCoeff());

    scores = ampo_score_update(scores, q_hat, current.lambda, pot, config.eta);
    AmpoPolicy next = ampo_policy_from_scores(scores, pot, config.eta);

    double l1 = 0.0;
    for (int s = 0; s < num_states; ++s)
      l1 = std::max(l1, (next.policy.probs.row(s) - current.policy.probs.row(s)).cwiseAbs().sum());
    record.update_l1.push_back(l1);
    record.eq2_lower_bound.push_back(-record.q_error.back() * l1 / (1.0 - gamma));

    if (config.compute_bound_terms) {
      value_sum += record.value.back();
      max_q_error = std::max(max_q_error, record.q_error.back());
      const double horizon = static_cast<double>(t + 1);
      record.eq3_lhs.push_back(record.v_star_mu - value_sum / horizon);
      record.eq3_rate_term.push_back(record.dstar0 / (config.eta * (1.0 - gamma) * horizon));
      record.eq3_discount_term.push_back(1.0 / ((1.0 - gamma) * (1.0 - gamma) * horizon));
      record.eq3_floor_term.push_back(4.0 * max_q_error / ((1.0 - gamma) * (1.0 - gamma)));
    }
    current = std::move(next);
  }
  record.final_value = value_of(mdp, current.policy, mdp.start);
  record.final_policy = current.policy;
  out.final_scores = scores;
  return out;
}

}  // namespace pmdlab
