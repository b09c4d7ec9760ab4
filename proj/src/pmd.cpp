#include "pmdlab/pmd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pmdlab {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInnerClamp = 1e-8;  // probability floor inside the inner solver only

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

double clamped_phi_inv(const OmegaPotential& pot, double p) {
  return pot.phi_inv(std::max(p, kInnerClamp));
}

}  // namespace

std::string to_string(QMode m) { return m == QMode::kExact ? "exact" : "gae"; }

std::string to_string(UpdateMode m) {
  return m == UpdateMode::kClosedForm ? "closed_form" : "inner_sgd";
}

QMode q_mode_from_string(const std::string& s) {
  if (s == "exact") return QMode::kExact;
  if (s == "gae") return QMode::kGae;
  throw std::invalid_argument("unknown q mode: " + s);
}

UpdateMode update_mode_from_string(const std::string& s) {
  if (s == "closed_form") return UpdateMode::kClosedForm;
  if (s == "inner_sgd") return UpdateMode::kInnerSgd;
  throw std::invalid_argument("unknown update mode: " + s);
}

void PmdConfig::validate() const {
  require(eta > 0.0 && std::isfinite(eta), "eta must be positive");
  require(iterations >= 1, "iterations must be positive");
  require(num_envs >= 1, "num_envs must be positive");
  require(unroll_length >= 1, "unroll_length must be positive");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "gae_lambda must lie in [0, 1]");
  require(critic_lr > 0.0 && critic_lr <= 1.0, "critic_lr must lie in (0, 1]");
  require(reset_prob >= 0.0 && reset_prob < 1.0, "reset_prob must lie in [0, 1)");
  require(inner_epochs >= 1, "inner_epochs must be positive");
  require(inner_lr > 0.0 && std::isfinite(inner_lr), "inner_lr must be positive");
}

NormalizedRow normalize_scores(const OmegaPotential& pot, const Eigen::VectorXd& scores) {
  const int n = static_cast<int>(scores.size());
  require(n >= 1, "normalize_scores needs at least one action");
  double max_score = -kInf, min_score = kInf;
  int support = 0;
  for (int a = 0; a < n; ++a) {
    if (scores[a] == -kInf) continue;
    require(std::isfinite(scores[a]), "scores must be finite or -inf");
    ++support;
    max_score = std::max(max_score, scores[a]);
    min_score = std::min(min_score, scores[a]);
  }
  if (support == 0) throw std::runtime_error("normalize_scores: empty support");

  const auto mass = [&](double lambda) {
    double total = 0.0;
    for (int a = 0; a < n; ++a) {
      if (scores[a] == -kInf) continue;
      total += std::max(pot.phi(scores[a] + lambda), 0.0);
      if (total >= 1.0) return total;  // short-circuit keeps overflow away
    }
    return total;
  };

  NormalizedRow out;
  double lo = pot.phi_inv(1.0 / support) - max_score - 1.0;
  double hi = pot.phi_inv(1.0) - min_score + 1.0;
  // The analytic bracket can fail on plateaued potentials; widen geometrically.
  double step = 1.0;
  for (int it = 0; mass(lo) >= 1.0; ++it) {
    if (it >= 128) throw std::runtime_error("normalize_scores: no lower bracket");
    lo -= step;
    step *= 2.0;
    out.used_augmented_fallback = true;
  }
  step = 1.0;
  for (int it = 0; mass(hi) < 1.0; ++it) {
    if (it >= 128) throw std::runtime_error("normalize_scores: no upper bracket");
    hi += step;
    step *= 2.0;
    out.used_augmented_fallback = true;
  }
  // Infimum of {lambda : mass(lambda) >= 1}: hi stays inside the set, so the
  // limit is plateau-invariant and identical across potentials that agree
  // after clipping at zero.
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  out.lambda = hi;
  out.probs = Eigen::VectorXd::Zero(n);
  double total = 0.0;
  for (int a = 0; a < n; ++a) {
    if (scores[a] == -kInf) continue;
    out.probs[a] = std::max(pot.phi(scores[a] + out.lambda), 0.0);
    total += out.probs[a];
  }
  if (!(total > 0.0) || !std::isfinite(total))
    throw std::runtime_error("normalize_scores: degenerate mass at the solution");
  out.probs /= total;
  return out;
}

TabularPolicy pmd_update_closed_form(const TabularPolicy& policy, const Eigen::MatrixXd& q_hat,
                                     const OmegaPotential& pot, double eta) {
  const int num_states = policy.num_states();
  const int num_actions = policy.num_actions();
  require(q_hat.rows() == num_states && q_hat.cols() == num_actions,
          "q_hat shape does not match the policy");
  TabularPolicy next;
  next.probs.resize(num_states, num_actions);
  Eigen::VectorXd scores(num_actions);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      const double p = policy.probs(s, a);
      const double g = p > 0.0 ? pot.phi_inv(p) : pot.phi_inv_at_zero();
      scores[a] = g == -kInf ? -kInf : g + eta * q_hat(s, a);
    }
    next.probs.row(s) = normalize_scores(pot, scores).probs.transpose();
  }
  return next;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (int s = 0; s < logits.rows(); ++s) {
    const double m = logits.row(s).maxCoeff();
    Eigen::ArrayXd e = (logits.row(s).array() - m).exp();
    out.row(s) = (e / e.sum()).matrix();
  }
  return out;
}

Eigen::MatrixXd pmd_update_inner_sgd(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& q_hat,
                                     const OmegaPotential& pot, double eta, int epochs, double lr,
                                     const Eigen::VectorXd& state_weights) {
  const int num_states = static_cast<int>(logits.rows());
  const int num_actions = static_cast<int>(logits.cols());
  require(q_hat.rows() == num_states && q_hat.cols() == num_actions, "q_hat shape mismatch");
  require(state_weights.size() == num_states, "state weight size mismatch");
  const Eigen::MatrixXd prev = softmax_rows(logits);
  Eigen::MatrixXd prev_grad(num_states, num_actions);  // phi_inv of the clamped anchor
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a)
      prev_grad(s, a) = clamped_phi_inv(pot, prev(s, a));

  Eigen::MatrixXd z = logits;
  Eigen::VectorXd u(num_actions);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const Eigen::MatrixXd pi = softmax_rows(z);
    for (int s = 0; s < num_states; ++s) {
      for (int a = 0; a < num_actions; ++a)
        u[a] = eta * q_hat(s, a) - clamped_phi_inv(pot, pi(s, a)) + prev_grad(s, a);
      const double mean_u = pi.row(s).dot(u);
      for (int a = 0; a < num_actions; ++a)
        z(s, a) += lr * state_weights[s] * pi(s, a) * (u[a] - mean_u);
    }
  }
  return z;
}

double inner_objective(const Eigen::MatrixXd& logits_policy, const Eigen::MatrixXd& q_hat,
                       const TabularPolicy& prev, const OmegaPotential& pot, double eta,
                       const Eigen::VectorXd& state_weights) {
  const Eigen::MatrixXd pi = softmax_rows(logits_policy);
  const int num_states = static_cast<int>(pi.rows());
  const int num_actions = static_cast<int>(pi.cols());
  // Mirror value with the clamped gradient: below the clamp h continues
  // linearly, so the objective is exactly the function the solver ascends.
  const auto clamped_h = [&](const Eigen::VectorXd& p) {
    Eigen::VectorXd clipped = p.cwiseMax(kInnerClamp);
    double h = mirror_map_value(pot, clipped);
    for (int a = 0; a < p.size(); ++a)
      if (p[a] < kInnerClamp) h += pot.phi_inv(kInnerClamp) * (p[a] - clipped[a]);
    return h;
  };
  double obj = 0.0;
  for (int s = 0; s < num_states; ++s) {
    const Eigen::VectorXd p = pi.row(s).transpose();
    const Eigen::VectorXd q = prev.probs.row(s).transpose();
    double bregman_term = clamped_h(p) - clamped_h(q);
    for (int a = 0; a < num_actions; ++a)
      bregman_term -= clamped_phi_inv(pot, q[a]) * (p[a] - q[a]);
    obj += state_weights[s] * (eta * q_hat.row(s).dot(pi.row(s)) - bregman_term);
  }
  return obj;
}

GaeResult estimate_q_gae(const std::vector<Trajectory>& batch, const Eigen::VectorXd& critic,
                         int num_actions, double gamma, double lambda, double critic_lr) {
  const int num_states = static_cast<int>(critic.size());
  size_t total = 0;
  for (const Trajectory& traj : batch) total += traj.states.size();
  require(total > 0, "estimate_q_gae: empty batch");

  Eigen::MatrixXd adv_sum = Eigen::MatrixXd::Zero(num_states, num_actions);
  Eigen::MatrixXd adv_count = Eigen::MatrixXd::Zero(num_states, num_actions);
  Eigen::VectorXd ret_sum = Eigen::VectorXd::Zero(num_states);
  Eigen::VectorXd ret_count = Eigen::VectorXd::Zero(num_states);

  for (const Trajectory& traj : batch) {
    const int steps = static_cast<int>(traj.states.size());
    double carry = 0.0;  // gae accumulator flowing backward
    for (int t = steps - 1; t >= 0; --t) {
      const int s = traj.states[t];
      const bool reset = traj.reset_after[t] != 0;
      const int s_next = t + 1 < steps ? traj.states[t + 1] : traj.bootstrap_state;
      const double v_next = reset ? 0.0 : critic[s_next];
      const double delta = traj.rewards[t] + gamma * v_next - critic[s];
      carry = delta + gamma * lambda * (reset ? 0.0 : carry);
      adv_sum(s, traj.actions[t]) += carry;
      adv_count(s, traj.actions[t]) += 1.0;
      ret_sum[s] += carry + critic[s];  // lambda-return target
      ret_count[s] += 1.0;
    }
  }

  GaeResult out;
  out.q_hat.resize(num_states, num_actions);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a)
      out.q_hat(s, a) =
          critic[s] + (adv_count(s, a) > 0.0 ? adv_sum(s, a) / adv_count(s, a) : 0.0);
  out.critic = critic;
  for (int s = 0; s < num_states; ++s)
    if (ret_count[s] > 0.0)
      out.critic[s] += critic_lr * (ret_sum[s] / ret_count[s] - critic[s]);
  return out;
}

PmdRunRecord run_pmd(const TabularMdp& mdp, const OmegaPotential& pot, const PmdConfig& config) {
  config.validate();
  mdp.validate();
  const int num_states = mdp.num_states();
  const int num_actions = mdp.num_actions();
  const double gamma = mdp.gamma;

  PmdRunRecord record;
  record.config = config;
  record.potential_name = pot.name();
  record.env_steps_per_iteration =
      config.q_mode == QMode::kGae
          ? static_cast<int64_t>(config.num_envs) * config.unroll_length
          : 0;

  TabularPolicy policy = TabularPolicy::uniform(num_states, num_actions);
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(num_states, num_actions);

  if (config.compute_bound_terms) {
    const OptimalPolicyResult opt = optimal_policy_oracle(mdp, 1e-10);
    record.v_star_mu = mdp.start.dot(opt.v_star);
    const Eigen::VectorXd d_star = visitation_distribution(mdp, opt.policy, mdp.start);
    double dstar0 = 0.0;
    for (int s = 0; s < num_states; ++s)
      dstar0 += d_star[s] * bregman(pot, opt.policy.probs.row(s).transpose(),
                                    policy.probs.row(s).transpose());
    record.dstar0 = dstar0;
  }

  RolloutSampler sampler(mdp, config.seed, config.num_envs, config.reset_prob);
  Eigen::VectorXd critic = Eigen::VectorXd::Zero(num_states);

  double value_sum = 0.0;
  double max_q_error = 0.0;
  for (int t = 0; t < config.iterations; ++t) {
    const Eigen::MatrixXd q_exact = exact_q(mdp, policy);
    record.value.push_back(mdp.start.dot(v_from_q(policy, q_exact)));

    Eigen::MatrixXd q_hat;
    std::vector<Trajectory> batch;
    if (config.q_mode == QMode::kExact) {
      q_hat = q_exact;
    } else {
      batch = sampler.collect(policy, config.unroll_length);
      GaeResult gae = estimate_q_gae(batch, critic, num_actions, gamma, config.gae_lambda,
                                     config.critic_lr);
      critic = gae.critic;
      q_hat = std::move(gae.q_hat);
    }
    record.q_error.push_back((q_hat - q_exact).cwiseAbs().maxCoeff());

    TabularPolicy next;
    if (config.update_mode == UpdateMode::kClosedForm) {
      next = pmd_update_closed_form(policy, q_hat, pot, config.eta);
    } else {
      Eigen::VectorXd weights;
      if (config.q_mode == QMode::kExact) {
        weights = visitation_distribution(mdp, policy, mdp.start);
      } else {
        weights = Eigen::VectorXd::Zero(num_states);
        double steps = 0.0;
        for (const Trajectory& traj : batch)
          for (int s : traj.states) {
            weights[s] += 1.0;
            steps += 1.0;
          }
        weights /= steps;
      }
      logits = pmd_update_inner_sgd(logits, q_hat, pot, config.eta, config.inner_epochs,
                                    config.inner_lr, weights);
      next.probs = softmax_rows(logits);
    }

    double l1 = 0.0;
    for (int s = 0; s < num_states; ++s)
      l1 = std::max(l1, (next.probs.row(s) - policy.probs.row(s)).cwiseAbs().sum());
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
    policy = next;
  }
  record.final_value = value_of(mdp, policy, mdp.start);
  record.final_policy = policy;
  return record;
}

std::string Theorem1Report::summary() const {
  std::ostringstream out;
  out << "eq2: " << eq2_violations << " violations (worst slack " << eq2_worst_slack << "); ";
  if (eq3_vacuous) {
    out << "eq3: vacuous (initial divergence not finite)";
  } else {
    out << "eq3: " << eq3_violations << " violations (worst slack " << eq3_worst_slack << ")";
  }
  return out.str();
}

Theorem1Report theorem1_check(const PmdRunRecord& record, const TabularMdp& mdp,
                              const OmegaPotential& pot, double tol) {
  const size_t iters = record.value.size();
  require(iters > 0 && record.q_error.size() == iters && record.update_l1.size() == iters,
          "theorem1_check: incomplete record");
  const double gamma = mdp.gamma;

  Theorem1Report report;
  const OptimalPolicyResult opt = optimal_policy_oracle(mdp, 1e-10);
  report.v_star_mu = mdp.start.dot(opt.v_star);
  const Eigen::VectorXd d_star = visitation_distribution(mdp, opt.policy, mdp.start);
  const TabularPolicy init = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
  double dstar0 = 0.0;
  for (int s = 0; s < mdp.num_states(); ++s)
    dstar0 += d_star[s] * bregman(pot, opt.policy.probs.row(s).transpose(),
                                  init.probs.row(s).transpose());
  report.dstar0 = dstar0;
  report.eq3_vacuous = !std::isfinite(dstar0);

  report.eq2_worst_slack = kInf;
  for (size_t t = 0; t < iters; ++t) {
    const double v_next = t + 1 < iters ? record.value[t + 1] : record.final_value;
    const double lower = -record.q_error[t] * record.update_l1[t] / (1.0 - gamma);
    const double slack = (v_next - record.value[t]) - lower;
    report.eq2_worst_slack = std::min(report.eq2_worst_slack, slack);
    if (slack < -tol) ++report.eq2_violations;
  }

  if (!report.eq3_vacuous) {
    report.eq3_worst_slack = kInf;
    double value_sum = 0.0;
    double max_err = 0.0;
    for (size_t t = 0; t < iters; ++t) {
      value_sum += record.value[t];
      max_err = std::max(max_err, record.q_error[t]);
      const double horizon = static_cast<double>(t + 1);
      const double lhs = report.v_star_mu - value_sum / horizon;
      const double rhs = dstar0 / (record.config.eta * (1.0 - gamma) * horizon) +
                         1.0 / ((1.0 - gamma) * (1.0 - gamma) * horizon) +
                         4.0 * max_err / ((1.0 - gamma) * (1.0 - gamma));
      const double slack = rhs - lhs;
      report.eq3_worst_slack = std::min(report.eq3_worst_slack, slack);
      if (slack < -tol) ++report.eq3_violations;
    }
  }
  return report;
}

}  // namespace pmdlab
