#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pmdlab/gridworld.hpp"
#include "pmdlab/pmd.hpp"
#include "pmdlab/potentials.hpp"

namespace pmdlab {

// Fitness of a raw parameter vector on one task; task_seed selects the task,
// eval_seed drives any inner stochasticity.  Non-finite returns are treated
// as failed evaluations (never propagated into the search state).
using EsFitness =
    std::function<double(const Eigen::VectorXd& params, uint64_t task_seed, uint64_t eval_seed)>;

struct OpenAiEsConfig {
  int population = 512;  // must be even; population/2 antithetic pairs
  double sigma0 = 0.5;
  double sigma_decay = 0.995;
  double lr = 0.01;
  int num_threads = 0;  // 0: hardware concurrency
};

struct OpenAiEsState {
  Eigen::VectorXd mean;
  double sigma = 0.5;
  int generation = 0;
  uint64_t seed = 0;
};

struct EsStepInfo {
  int non_finite_pairs = 0;
  int tied_pairs = 0;
};

// One generation: population/2 antithetic pairs, one task per pair shared by
// both members (with a shared eval seed), pairwise {1,0} rank transform,
// g_hat = mean of eps*(rank+ - rank-)/(2 sigma); mean += lr*g_hat and sigma
// decays.  Depends only on fitness comparisons, so any monotone fitness
// rescaling yields a bit-identical step.
OpenAiEsState openai_es_step(const OpenAiEsState& state, const OpenAiEsConfig& config,
                             const EsFitness& fitness, EsStepInfo* info = nullptr);

struct SepCmaConfig {
  int population = 128;
  int num_threads = 0;
};

struct SepCmaState {
  Eigen::VectorXd mean;
  Eigen::VectorXd diag_c;   // diagonal covariance
  Eigen::VectorXd p_sigma;  // conjugate evolution path
  Eigen::VectorXd p_c;      // covariance evolution path
  double sigma = 2.0;
  int generation = 0;
  uint64_t seed = 0;
};

SepCmaState sep_cma_init(Eigen::VectorXd mean, double sigma, uint64_t seed);

struct SepCmaStepInfo {
  double best_fitness = 0.0;
  int non_finite = 0;
  int floored_coordinates = 0;
};

// One generation of separable CMA-ES (maximization): sample
// x_i = mean + sigma*sqrt(diag_c).*z_i, stable-sort by fitness, recombine the
// best m = population/2 with log-linear weights, update the evolution paths,
// the diagonal covariance (floored at 1e-20) and the step size.  Constants
// follow Ros & Hansen (2008), including the (d+2)/3 separable speedup.
// All candidates share (task_seed, eval_seed) drawn per generation.
SepCmaState sep_cma_step(const SepCmaState& state, const SepCmaConfig& config,
                         const EsFitness& fitness, SepCmaStepInfo* info = nullptr);

// Recombination weights w_i prop. log(m+1) - log(i), i = 1..m, normalized.
Eigen::VectorXd sep_cma_weights(int m);

enum class MapFamily { kPiecewise, kMonotoneNet };
enum class EvoStrategy { kOpenAiEs, kSepCma };

std::string to_string(MapFamily f);
std::string to_string(EvoStrategy s);
MapFamily map_family_from_string(const std::string& s);
EvoStrategy evo_strategy_from_string(const std::string& s);

// Build the potential a raw parameter vector encodes.
std::unique_ptr<OmegaPotential> potential_from_raw(MapFamily family, const Eigen::VectorXd& raw);
// Family starting point: footnote-style knots for piecewise, the exact
// negentropy embedding for the monotone net.
Eigen::VectorXd family_init_raw(MapFamily family, int piecewise_knots);

struct FitnessSpec {
  GridDistribution tasks;
  PmdConfig inner;          // iterations = inner PMD horizon T
  int eval_episodes = 8;    // tasks per mean evaluation / per sep-CMA batch
  int tasks_per_fitness = 1;  // tasks averaged inside one OpenAI-ES evaluation
  bool use_ampo = false;    // evaluate with run_ampo instead of run_pmd
};

struct EvolveConfig {
  MapFamily family = MapFamily::kPiecewise;
  EvoStrategy strategy = EvoStrategy::kSepCma;
  int generations = 50;
  int piecewise_knots = 100;
  uint64_t seed = 0;
  double cma_sigma0 = 2.0;
  OpenAiEsConfig es;
  SepCmaConfig cma;
  std::string checkpoint_dir;  // empty: no checkpoints
};

struct EvolveResult {
  Eigen::VectorXd best_params;
  double best_fitness = 0.0;
  int best_generation = 0;
  Eigen::VectorXd final_mean;
  // Fitness of the strategy mean on the fixed eval-task batch; entry 0 is the
  // initial mean, entry g the mean after generation g.
  std::vector<double> mean_fitness_history;
  int non_finite_evaluations = 0;
};

// Meta-optimization of the mirror map: fitness of a candidate is the final
// value V^T(mu) of the inner run under the induced potential, averaged over
// sampled tasks.  Failed inner runs count as -inf fitness and are logged.
EvolveResult evolve_mirror_map(const EvolveConfig& config, const FitnessSpec& spec);

// Restore an evolve run from its checkpoint directory and continue to
// config.generations total generations (bit-identical to an uninterrupted
// run, since all streams are counter-derived from (seed, generation)).
EvolveResult resume_evolve_mirror_map(const std::string& checkpoint_dir, int generations);

}  // namespace pmdlab
