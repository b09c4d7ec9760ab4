#pragma once

#include <Eigen/Dense>

#include "pmdlab/mdp.hpp"
#include "pmdlab/pmd.hpp"
#include "pmdlab/potentials.hpp"

namespace pmdlab {

struct AmpoPolicy {
  TabularPolicy policy;
  Eigen::VectorXd lambda;  // per-state normalization constants
};

// pi(a|s) = max(phi(eta*f(s,a) + lambda_s), 0) with lambda_s normalizing the row.
AmpoPolicy ampo_policy_from_scores(const Eigen::MatrixXd& scores, const OmegaPotential& pot,
                                   double eta);

// Tabular minimizer of the approximation step:
// f'(s,a) = q(s,a) + (1/eta) * max(eta*f(s,a) + lambda_s, phi_inv(0)).
Eigen::MatrixXd ampo_score_update(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& q,
                                  const Eigen::VectorXd& lambda, const OmegaPotential& pot,
                                  double eta);

struct AmpoRunResult {
  PmdRunRecord record;  // same diagnostics as run_pmd
  Eigen::MatrixXd final_scores;
};

// Score-space mirror descent; config.update_mode is ignored (the score update
// is exact in the tabular case).
AmpoRunResult run_ampo(const TabularMdp& mdp, const OmegaPotential& pot, const PmdConfig& config);

}  // namespace pmdlab
