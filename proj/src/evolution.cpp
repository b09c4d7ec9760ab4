#include "pmdlab/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <mutex>
#include <thread>
#include <utility>

#include "pmdlab/ampo.hpp"
#include "pmdlab/record_io.hpp"
#include "pmdlab/rng.hpp"

namespace pmdlab {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, count) across a fixed-size thread pool.  Work is
// striped by index, so the result layout never depends on the thread count.
void parallel_for(int count, int num_threads, const std::function<void(int)>& fn) {
  const int threads = std::min(std::max(num_threads, 1), std::max(count, 1));
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < count; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

OpenAiEsState openai_es_step(const OpenAiEsState& state, const OpenAiEsConfig& config,
                             const EsFitness& fitness, EsStepInfo* info) {
  require(config.population >= 2 && config.population % 2 == 0,
          "openai-es population must be even and at least 2");
  require(state.sigma > 0.0, "openai-es sigma must be positive");
  const int d = static_cast<int>(state.mean.size());
  const int pairs = config.population / 2;
  const uint64_t gen = static_cast<uint64_t>(state.generation);

  std::vector<Eigen::VectorXd> eps(pairs);
  std::vector<double> f_plus(pairs), f_minus(pairs);
  parallel_for(pairs, resolve_threads(config.num_threads), [&](int i) {
    Philox noise(state.seed, stream_id(streams::kEsNoise, gen, static_cast<uint64_t>(i)));
    Eigen::VectorXd e(d);
    for (int j = 0; j < d; ++j) e[j] = noise.next_gaussian();
    Philox task_rng(state.seed, stream_id(streams::kEsTask, gen, static_cast<uint64_t>(i)));
    const uint64_t task_seed = task_rng.next_u64();
    Philox eval_rng(state.seed, stream_id(streams::kEsEval, gen, static_cast<uint64_t>(i)));
    const uint64_t eval_seed = eval_rng.next_u64();
    f_plus[i] = fitness(state.mean + state.sigma * e, task_seed, eval_seed);
    f_minus[i] = fitness(state.mean - state.sigma * e, task_seed, eval_seed);
    eps[i] = std::move(e);
  });

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
  int non_finite = 0, tied = 0;
  for (int i = 0; i < pairs; ++i) {
    double direction = 0.0;  // rank(+) - rank(-) in {1, 0, -1}
    if (!std::isfinite(f_plus[i]) || !std::isfinite(f_minus[i])) {
      ++non_finite;
    } else if (f_plus[i] > f_minus[i]) {
      direction = 1.0;
    } else if (f_minus[i] > f_plus[i]) {
      direction = -1.0;
    } else {
      ++tied;
    }
    if (direction != 0.0) grad += direction / (2.0 * state.sigma) * eps[i];
  }
  grad /= static_cast<double>(pairs);

  if (info) {
    info->non_finite_pairs = non_finite;
    info->tied_pairs = tied;
  }
  OpenAiEsState next = state;
  next.mean = state.mean + config.lr * grad;
  next.sigma = state.sigma * config.sigma_decay;
  next.generation = state.generation + 1;
  return next;
}

Eigen::VectorXd sep_cma_weights(int m) {
  require(m >= 1, "sep_cma_weights needs m >= 1");
  Eigen::VectorXd w(m);
  for (int i = 0; i < m; ++i)
    w[i] = std::log(static_cast<double>(m) + 1.0) - std::log(static_cast<double>(i) + 1.0);
  return w / w.sum();
}

SepCmaState sep_cma_init(Eigen::VectorXd mean, double sigma, uint64_t seed) {
  SepCmaState state;
  const int d = static_cast<int>(mean.size());
  state.mean = std::move(mean);
  state.diag_c = Eigen::VectorXd::Ones(d);
  state.p_sigma = Eigen::VectorXd::Zero(d);
  state.p_c = Eigen::VectorXd::Zero(d);
  state.sigma = sigma;
  state.seed = seed;
  return state;
}

SepCmaState sep_cma_step(const SepCmaState& state, const SepCmaConfig& config,
                         const EsFitness& fitness, SepCmaStepInfo* info) {
  require(config.population >= 4, "sep-cma population must be at least 4");
  require(state.sigma > 0.0, "sep-cma sigma must be positive");
  const int d = static_cast<int>(state.mean.size());
  const int lambda = config.population;
  const int mu = lambda / 2;
  const uint64_t gen = static_cast<uint64_t>(state.generation);

  const Eigen::VectorXd weights = sep_cma_weights(mu);
  const double mu_eff = 1.0 / weights.squaredNorm();
  const double dd = static_cast<double>(d);
  const double c_sigma = (mu_eff + 2.0) / (dd + mu_eff + 5.0);
  const double d_sigma =
      1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (dd + 1.0)) - 1.0) + c_sigma;
  const double c_c = (4.0 + mu_eff / dd) / (dd + 4.0 + 2.0 * mu_eff / dd);
  const double c_1 = 2.0 / ((dd + 1.3) * (dd + 1.3) + mu_eff);
  const double c_mu_base = std::min(
      1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((dd + 2.0) * (dd + 2.0) + mu_eff));
  // Separable update learns d parameters instead of d^2: Ros & Hansen scale
  // c_mu by (d+2)/3, still capped so the decay factor stays nonnegative.
  const double c_mu = std::min(1.0 - c_1, c_mu_base * (dd + 2.0) / 3.0);
  const double chi_n = std::sqrt(dd) * (1.0 - 1.0 / (4.0 * dd) + 1.0 / (21.0 * dd * dd));

  const Eigen::VectorXd sqrt_c = state.diag_c.cwiseSqrt();
  Philox shared(state.seed, stream_id(streams::kCmaTask, gen, 0));
  const uint64_t task_seed = shared.next_u64();
  const uint64_t eval_seed = shared.next_u64();

  std::vector<Eigen::VectorXd> z(lambda);
  std::vector<double> value(lambda);
  parallel_for(lambda, resolve_threads(config.num_threads), [&](int i) {
    Philox noise(state.seed, stream_id(streams::kCmaNoise, gen, static_cast<uint64_t>(i)));
    Eigen::VectorXd zi(d);
    for (int j = 0; j < d; ++j) zi[j] = noise.next_gaussian();
    value[i] = fitness(state.mean + state.sigma * sqrt_c.cwiseProduct(zi), task_seed, eval_seed);
    z[i] = std::move(zi);
  });

  std::vector<int> order(lambda);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double fa = std::isfinite(value[a]) ? value[a] : -kInf;
    const double fb = std::isfinite(value[b]) ? value[b] : -kInf;
    return fa > fb;
  });

  int non_finite = 0;
  double best = -kInf;
  for (int i = 0; i < lambda; ++i) {
    if (!std::isfinite(value[i]))
      ++non_finite;
    else
      best = std::max(best, value[i]);
  }

  Eigen::VectorXd z_w = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < mu; ++i) z_w += weights[i] * z[order[i]];
  const Eigen::VectorXd y_w = sqrt_c.cwiseProduct(z_w);

  SepCmaState next = state;
  next.mean = state.mean + state.sigma * y_w;
  next.p_sigma =
      (1.0 - c_sigma) * state.p_sigma + std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * z_w;
  const double expected_decay =
      std::sqrt(1.0 - std::pow(1.0 - c_sigma, 2.0 * (static_cast<double>(state.generation) + 1.0)));
  const bool h_sigma =
      next.p_sigma.norm() / expected_decay < (1.4 + 2.0 / (dd + 1.0)) * chi_n;
  next.p_c = (1.0 - c_c) * state.p_c +
             (h_sigma ? std::sqrt(c_c * (2.0 - c_c) * mu_eff) : 0.0) * y_w;

  Eigen::VectorXd rank_mu = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < mu; ++i) {
    const Eigen::VectorXd y = sqrt_c.cwiseProduct(z[order[i]]);
    rank_mu += weights[i] * y.cwiseProduct(y);
  }
  const double hsig_correction = h_sigma ? 0.0 : c_c * (2.0 - c_c);
  int floored = 0;
  for (int j = 0; j < d; ++j) {
    double c_j = (1.0 - c_1 - c_mu) * state.diag_c[j] +
                 c_1 * (next.p_c[j] * next.p_c[j] + hsig_correction * state.diag_c[j]) +
                 c_mu * rank_mu[j];
    if (c_j < 1e-20) {
      c_j = 1e-20;
      ++floored;
    }
    next.diag_c[j] = c_j;
  }
  next.sigma = state.sigma * std::exp((c_sigma / d_sigma) * (next.p_sigma.norm() / chi_n - 1.0));
  next.generation = state.generation + 1;

  if (info) {
    info->best_fitness = best;
    info->non_finite = non_finite;
    info->floored_coordinates = floored;
  }
  return next;
}

// ---------------------------------------------------------------------------
// Mirror-map meta-optimization

std::string to_string(MapFamily f) {
  return f == MapFamily::kPiecewise ? "piecewise" : "monotone_net";
}

std::string to_string(EvoStrategy s) {
  return s == EvoStrategy::kOpenAiEs ? "openai_es" : "sep_cma";
}

MapFamily map_family_from_string(const std::string& s) {
  if (s == "piecewise") return MapFamily::kPiecewise;
  if (s == "monotone_net") return MapFamily::kMonotoneNet;
  throw std::invalid_argument("unknown map family: " + s);
}

EvoStrategy evo_strategy_from_string(const std::string& s) {
  if (s == "openai_es") return EvoStrategy::kOpenAiEs;
  if (s == "sep_cma") return EvoStrategy::kSepCma;
  throw std::invalid_argument("unknown evolution strategy: " + s);
}

std::unique_ptr<OmegaPotential> potential_from_raw(MapFamily family, const Eigen::VectorXd& raw) {
  if (family == MapFamily::kPiecewise)
    return std::make_unique<PiecewisePotential>(PiecewisePotential::psi_from_raw(raw));
  return std::make_unique<MonotoneNetPotentialInv>(raw);
}

Eigen::VectorXd family_init_raw(MapFamily family, int piecewise_knots) {
  if (family == MapFamily::kPiecewise) {
    // Invert the log-width encoding; psi_from_raw adds the floor back.
    return (negentropy_init_psi(piecewise_knots).array() - 1e-12).log();
  }
  return MonotoneNetPotentialInv::near_negentropy_raw();
}

namespace {

struct EvolveDriver {
  EvolveConfig config;
  FitnessSpec spec;
  std::atomic<int> failed_evaluations{0};

  // Mean fitness over n tasks derived from (task_seed, eval_seed); failed or
  // non-finite inner runs poison the evaluation to -inf.
  double evaluate(const Eigen::VectorXd& params, uint64_t task_seed, uint64_t eval_seed,
                  int n) {
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      double value;
      try {
        const std::unique_ptr<OmegaPotential> pot = potential_from_raw(config.family, params);
        const GridSpec task =
            sample_task(spec.tasks, mix_seed(task_seed, static_cast<uint64_t>(j)));
        const TabularMdp mdp = compile(task);
        PmdConfig inner = spec.inner;
        inner.seed = mix_seed(eval_seed, static_cast<uint64_t>(j));
        inner.compute_bound_terms = false;
        value = spec.use_ampo ? run_ampo(mdp, *pot, inner).record.final_value
                              : run_pmd(mdp, *pot, inner).final_value;
      } catch (const std::exception&) {
        value = -kInf;
      }
      if (!std::isfinite(value)) {
        failed_evaluations.fetch_add(1, std::memory_order_relaxed);
        return -kInf;
      }
      total += value;
    }
    return total / static_cast<double>(n);
  }

  EvolveResult run(OpenAiEsState es, SepCmaState cma, EvolveResult result, int start_generation) {
    Philox eval_stream(config.seed, stream_id(streams::kEvalTasks, 0, 0));
    const uint64_t eval_task_seed = eval_stream.next_u64();
    const uint64_t eval_eval_seed = eval_stream.next_u64();
    const auto eval_mean = [&](const Eigen::VectorXd& mean) {
      return evaluate(mean, eval_task_seed, eval_eval_seed, spec.eval_episodes);
    };
    const auto note_mean = [&](const Eigen::VectorXd& mean, int generation) {
      const double fitness = eval_mean(mean);
      result.mean_fitness_history.push_back(fitness);
      if (std::isfinite(fitness) && fitness > result.best_fitness) {
        result.best_fitness = fitness;
        result.best_params = mean;
        result.best_generation = generation;
      }
    };

    const bool use_es = config.strategy == EvoStrategy::kOpenAiEs;
    if (start_generation == 0) {
      result.best_fitness = -kInf;
      result.best_params = use_es ? es.mean : cma.mean;
      note_mean(result.best_params, 0);
    }

    const EsFitness es_fitness = [&](const Eigen::VectorXd& p, uint64_t ts, uint64_t vs) {
      return evaluate(p, ts, vs, std::max(1, spec.tasks_per_fitness));
    };
    const EsFitness cma_fitness = [&](const Eigen::VectorXd& p, uint64_t ts, uint64_t vs) {
      return evaluate(p, ts, vs, std::max(1, spec.eval_episodes));
    };

    for (int g = start_generation; g < config.generations; ++g) {
      if (use_es) {
        es = openai_es_step(es, config.es, es_fitness);
      } else {
        cma = sep_cma_step(cma, config.cma, cma_fitness);
      }
      note_mean(use_es ? es.mean : cma.mean, g + 1);
      result.non_finite_evaluations = failed_evaluations.load(std::memory_order_relaxed);
      if (!config.checkpoint_dir.empty()) {
        EvolveCheckpoint cp;
        cp.config = config;
        cp.spec = spec;
        cp.generation = g + 1;
        cp.es_state = es;
        cp.cma_state = cma;
        cp.best_params = result.best_params;
        cp.best_fitness = result.best_fitness;
        cp.best_generation = result.best_generation;
        cp.mean_fitness_history = result.mean_fitness_history;
        cp.non_finite_evaluations = result.non_finite_evaluations;
        write_checkpoint(config.checkpoint_dir, cp);
      }
    }
    result.final_mean = use_es ? es.mean : cma.mean;
    result.non_finite_evaluations = failed_evaluations.load(std::memory_order_relaxed);
    return result;
  }
};

}  // namespace

EvolveResult evolve_mirror_map(const EvolveConfig& config, const FitnessSpec& spec) {
  require(config.generations >= 0, "generations must be nonnegative");
  require(spec.eval_episodes >= 1, "eval_episodes must be positive");
  EvolveDriver driver;
  driver.config = config;
  driver.spec = spec;

  const Eigen::VectorXd init = family_init_raw(config.family, config.piecewise_knots);
  OpenAiEsState es;
  es.mean = init;
  es.sigma = config.es.sigma0;
  es.generation = 0;
  es.seed = config.seed;
  SepCmaState cma = sep_cma_init(init, config.cma_sigma0, config.seed);
  return driver.run(std::move(es), std::move(cma), EvolveResult{}, 0);
}

EvolveResult resume_evolve_mirror_map(const std::string& checkpoint_dir, int generations) {
  EvolveCheckpoint cp = load_latest_checkpoint(checkpoint_dir);
  EvolveDriver driver;
  driver.config = cp.config;
  driver.config.generations = generations;
  driver.config.checkpoint_dir = checkpoint_dir;
  driver.spec = cp.spec;
  driver.failed_evaluations.store(cp.non_finite_evaluations);

  EvolveResult result;
  result.best_params = cp.best_params;
  result.best_fitness = cp.best_fitness;
  result.best_generation = cp.best_generation;
  result.mean_fitness_history = cp.mean_fitness_history;
  result.non_finite_evaluations = cp.non_finite_evaluations;
  return driver.run(cp.es_state, cp.cma_state, std::move(result), cp.generation);
}

}  // namespace pmdlab
