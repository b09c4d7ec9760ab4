#include "pmdlab/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pmdlab/ampo.hpp"
#include "pmdlab/evolution.hpp"
#include "pmdlab/figures.hpp"
#include "pmdlab/gridworld.hpp"
#include "pmdlab/pmd.hpp"
#include "pmdlab/potentials.hpp"
#include "pmdlab/record_io.hpp"
#include "pmdlab/rng.hpp"

namespace pmdlab {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

bool has_prefix(const std::string& s, const std::string& prefix) {
  return s.size() > prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

GridSpec resolve_env(const std::string& selector) {
  if (has_prefix(selector, "random:")) {
    const uint64_t seed = std::stoull(selector.substr(7));
    return sample_task(GridDistribution{}, seed);
  }
  if (has_prefix(selector, "file:"))
    return GridSpec::from_text(read_text_file(selector.substr(5)));
  for (const auto& [name, spec] : held_out_configs())
    if (name == selector) return spec;
  std::string names;
  for (const auto& [name, spec] : held_out_configs()) names += " " + name;
  throw std::invalid_argument("unknown environment '" + selector +
                              "'; expected one of" + names +
                              ", random:<seed> or file:<path>");
}

std::unique_ptr<OmegaPotential> resolve_potential(const std::string& selector) {
  if (has_prefix(selector, "file:"))
    return deserialize_potential(read_text_file(selector.substr(5)));
  return make_builtin_potential(selector);
}

std::string resolve_out_dir(const std::string& flag_value) {
  std::string dir = flag_value;
  if (dir.empty()) {
    if (const char* env = std::getenv("PMDLAB_OUT"); env && *env) dir = env;
  }
  if (dir.empty()) dir = ".";
  fs::create_directories(dir);
  return dir;
}

// PMD options shared by run-pmd, run-ampo, check-bounds and compare.
// Precedence: explicit flag > --config file > built-in default.
struct PmdFlagSet {
  PmdConfig bound;
  std::string q_mode_str = "gae";
  std::string update_mode_str = "closed_form";
  std::string config_file;
  CLI::Option* opt_eta = nullptr;
  CLI::Option* opt_iterations = nullptr;
  CLI::Option* opt_q_mode = nullptr;
  CLI::Option* opt_update_mode = nullptr;
  CLI::Option* opt_num_envs = nullptr;
  CLI::Option* opt_unroll = nullptr;
  CLI::Option* opt_gae_lambda = nullptr;
  CLI::Option* opt_critic_lr = nullptr;
  CLI::Option* opt_reset_prob = nullptr;
  CLI::Option* opt_inner_epochs = nullptr;
  CLI::Option* opt_inner_lr = nullptr;
  CLI::Option* opt_seed = nullptr;
  CLI::Option* opt_no_bounds = nullptr;
  bool no_bounds = false;

  void attach(CLI::App& cmd) {
    opt_eta = cmd.add_option("--eta", bound.eta, "Mirror descent step size");
    opt_iterations = cmd.add_option("--iterations", bound.iterations, "Outer iterations");
    opt_q_mode = cmd.add_option("--q-mode", q_mode_str, "Q estimation: exact or gae");
    opt_update_mode =
        cmd.add_option("--update-mode", update_mode_str, "Update: closed_form or inner_sgd");
    opt_num_envs = cmd.add_option("--num-envs", bound.num_envs, "Parallel environment streams");
    opt_unroll = cmd.add_option("--unroll", bound.unroll_length, "Steps per stream per iteration");
    opt_gae_lambda = cmd.add_option("--gae-lambda", bound.gae_lambda, "GAE lambda");
    opt_critic_lr = cmd.add_option("--critic-lr", bound.critic_lr, "Critic step size");
    opt_reset_prob = cmd.add_option("--reset-prob", bound.reset_prob, "Per-step reset probability");
    opt_inner_epochs = cmd.add_option("--inner-epochs", bound.inner_epochs, "Inner solver epochs");
    opt_inner_lr = cmd.add_option("--inner-lr", bound.inner_lr, "Inner solver step size");
    opt_seed = cmd.add_option("--seed", bound.seed, "Sampling seed");
    opt_no_bounds =
        cmd.add_flag("--no-bounds", no_bounds, "Skip the optimal-policy oracle and bound series");
    cmd.add_option("--config", config_file, "JSON file with PmdConfig fields");
  }

  PmdConfig resolve() const {
    PmdConfig cfg;  // defaults
    if (!config_file.empty()) {
      const json j = json::parse(read_text_file(config_file));
      if (j.contains("eta")) cfg.eta = j.at("eta").get<double>();
      if (j.contains("iterations")) cfg.iterations = j.at("iterations").get<int>();
      if (j.contains("q_mode")) cfg.q_mode = q_mode_from_string(j.at("q_mode").get<std::string>());
      if (j.contains("update_mode"))
        cfg.update_mode = update_mode_from_string(j.at("update_mode").get<std::string>());
      if (j.contains("num_envs")) cfg.num_envs = j.at("num_envs").get<int>();
      if (j.contains("unroll_length")) cfg.unroll_length = j.at("unroll_length").get<int>();
      if (j.contains("gae_lambda")) cfg.gae_lambda = j.at("gae_lambda").get<double>();
      if (j.contains("critic_lr")) cfg.critic_lr = j.at("critic_lr").get<double>();
      if (j.contains("reset_prob")) cfg.reset_prob = j.at("reset_prob").get<double>();
      if (j.contains("inner_epochs")) cfg.inner_epochs = j.at("inner_epochs").get<int>();
      if (j.contains("inner_lr")) cfg.inner_lr = j.at("inner_lr").get<double>();
      if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
      if (j.contains("compute_bound_terms"))
        cfg.compute_bound_terms = j.at("compute_bound_terms").get<bool>();
    }
    if (opt_eta->count()) cfg.eta = bound.eta;
    if (opt_iterations->count()) cfg.iterations = bound.iterations;
    if (opt_q_mode->count()) cfg.q_mode = q_mode_from_string(q_mode_str);
    if (opt_update_mode->count()) cfg.update_mode = update_mode_from_string(update_mode_str);
    if (opt_num_envs->count()) cfg.num_envs = bound.num_envs;
    if (opt_unroll->count()) cfg.unroll_length = bound.unroll_length;
    if (opt_gae_lambda->count()) cfg.gae_lambda = bound.gae_lambda;
    if (opt_critic_lr->count()) cfg.critic_lr = bound.critic_lr;
    if (opt_reset_prob->count()) cfg.reset_prob = bound.reset_prob;
    if (opt_inner_epochs->count()) cfg.inner_epochs = bound.inner_epochs;
    if (opt_inner_lr->count()) cfg.inner_lr = bound.inner_lr;
    if (opt_seed->count()) cfg.seed = bound.seed;
    if (opt_no_bounds->count()) cfg.compute_bound_terms = !no_bounds;
    return cfg;
  }
};

void write_record_files(const std::string& out_dir, const std::string& tag,
                        const PmdRunRecord& record) {
  write_text_file((fs::path(out_dir) / (tag + ".csv")).string(), pmd_record_csv(record));
  write_text_file((fs::path(out_dir) / (tag + ".json")).string(), pmd_record_to_json(record));
}

int run_pmd_command(const std::string& env, const std::string& potential,
                    const PmdFlagSet& flags, const std::string& out_dir_flag,
                    const std::string& tag, bool use_ampo) {
  const GridSpec spec = resolve_env(env);
  const std::unique_ptr<OmegaPotential> pot = resolve_potential(potential);
  const TabularMdp mdp = compile(spec);
  const PmdConfig config = flags.resolve();
  const PmdRunRecord record =
      use_ampo ? run_ampo(mdp, *pot, config).record : run_pmd(mdp, *pot, config);
  const std::string out_dir = resolve_out_dir(out_dir_flag);
  write_record_files(out_dir, tag, record);
  std::cout << (use_ampo ? "ampo" : "pmd") << " env=" << env << " potential=" << pot->name()
            << " iterations=" << config.iterations
            << " initial_value=" << format_double(record.value.front())
            << " final_value=" << format_double(record.final_value);
  if (config.compute_bound_terms)
    std::cout << " v_star=" << format_double(record.v_star_mu);
  std::cout << "\n  wrote " << out_dir << "/" << tag << ".{csv,json}\n";
  return 0;
}

int check_bounds_command(const std::string& env, const std::string& potential,
                         const PmdFlagSet& flags, const std::string& out_dir_flag,
                         const std::string& tag, double tol) {
  const GridSpec spec = resolve_env(env);
  const std::unique_ptr<OmegaPotential> pot = resolve_potential(potential);
  const TabularMdp mdp = compile(spec);
  PmdConfig config = flags.resolve();
  config.compute_bound_terms = true;
  const PmdRunRecord record = run_pmd(mdp, *pot, config);
  const Theorem1Report report = theorem1_check(record, mdp, *pot, tol);
  const std::string out_dir = resolve_out_dir(out_dir_flag);
  write_record_files(out_dir, tag, record);
  std::cout << "bounds env=" << env << " potential=" << pot->name() << " tol="
            << format_double(tol) << "\n  " << report.summary() << "\n  wrote " << out_dir << "/"
            << tag << ".{csv,json}\n";
  return report.ok() ? 0 : 1;
}

int compare_command(const std::string& env, const std::vector<std::string>& maps, int num_seeds,
                    uint64_t base_seed, const PmdFlagSet& flags, const std::string& out_dir_flag,
                    const std::string& tag) {
  if (maps.empty()) throw std::invalid_argument("compare needs at least one map");
  if (num_seeds < 1) throw std::invalid_argument("compare needs at least one seed");
  const GridSpec spec = resolve_env(env);
  const TabularMdp mdp = compile(spec);
  ComparisonReport report;
  report.env_name = env;
  report.num_seeds = num_seeds;
  std::vector<FigureSeries> series;
  for (const std::string& map : maps) {
    const std::unique_ptr<OmegaPotential> pot = resolve_potential(map);
    std::vector<PmdRunRecord> runs;
    for (int i = 0; i < num_seeds; ++i) {
      PmdConfig config = flags.resolve();
      config.seed = base_seed + static_cast<uint64_t>(i);
      runs.push_back(run_pmd(mdp, *pot, config));
    }
    ComparisonCurve curve = aggregate_runs(map, runs);
    FigureSeries fig;
    fig.label = map;
    fig.x = curve.x;
    fig.mean = curve.value_mean;
    fig.stderr_half_width = curve.value_stderr;
    series.push_back(std::move(fig));
    report.curves.push_back(std::move(curve));
  }
  const std::string out_dir = resolve_out_dir(out_dir_flag);
  write_text_file((fs::path(out_dir) / (tag + ".json")).string(), comparison_to_json(report));
  write_text_file((fs::path(out_dir) / (tag + ".csv")).string(), comparison_csv(report));
  FigureOptions options;
  options.title = "Policy value on " + env;
  options.x_label = report.curves[0].x.size() > 1 && report.curves[0].x.back() > 0 &&
                            flags.resolve().q_mode == QMode::kGae
                        ? "environment steps"
                        : "iterations";
  options.y_label = "V(mu)";
  write_text_file((fs::path(out_dir) / (tag + ".svg")).string(),
                  render_line_svg(series, options));
  std::cout << "compare env=" << env << " seeds=" << num_seeds << " maps=";
  for (size_t i = 0; i < maps.size(); ++i) std::cout << (i ? "," : "") << maps[i];
  std::cout << "\n";
  for (const ComparisonCurve& curve : report.curves) {
    double mean_final = 0.0;
    for (double v : curve.final_values) mean_final += v;
    mean_final /= static_cast<double>(curve.final_values.size());
    std::cout << "  " << curve.map_name << ": mean final value "
              << format_double(mean_final) << "\n";
  }
  std::cout << "  wrote " << out_dir << "/" << tag << ".{csv,json,svg}\n";
  return 0;
}

struct EvolveCli {
  std::string family = "piecewise";
  std::string strategy = "sep_cma";
  int generations = 50;
  int knots = 100;
  uint64_t seed = 0;
  double cma_sigma0 = 2.0;
  int es_population = 512;
  double es_sigma0 = 0.5;
  double es_sigma_decay = 0.995;
  double es_lr = 0.01;
  int cma_population = 128;
  int threads = 0;
  int eval_episodes = 8;
  int tasks_per_fitness = 1;
  bool use_ampo = false;
  int inner_iterations = 64;
  double inner_eta = 0.1;
  std::string inner_q_mode = "exact";
  std::string checkpoint_dir;
  bool resume = false;
  std::string out_dir;
  std::string tag = "evolve";
};

int evolve_command(const EvolveCli& cli) {
  EvolveResult result;
  EvolveConfig config;
  if (cli.resume) {
    if (cli.checkpoint_dir.empty())
      throw std::invalid_argument("--resume requires --checkpoint-dir");
    result = resume_evolve_mirror_map(cli.checkpoint_dir, cli.generations);
    config = load_latest_checkpoint(cli.checkpoint_dir).config;
  } else {
    config.family = map_family_from_string(cli.family);
    config.strategy = evo_strategy_from_string(cli.strategy);
    config.generations = cli.generations;
    config.piecewise_knots = cli.knots;
    config.seed = cli.seed;
    config.cma_sigma0 = cli.cma_sigma0;
    config.es.population = cli.es_population;
    config.es.sigma0 = cli.es_sigma0;
    config.es.sigma_decay = cli.es_sigma_decay;
    config.es.lr = cli.es_lr;
    config.es.num_threads = cli.threads;
    config.cma.population = cli.cma_population;
    config.cma.num_threads = cli.threads;
    config.checkpoint_dir = cli.checkpoint_dir;

    FitnessSpec spec;
    spec.tasks.min_width = 3;
    spec.tasks.max_width = 4;
    spec.tasks.min_height = 3;
    spec.tasks.max_height = 4;
    spec.tasks.max_wall_density = 0.15;
    spec.tasks.max_objects = 1;
    spec.tasks.gamma = 0.95;
    spec.eval_episodes = cli.eval_episodes;
    spec.tasks_per_fitness = cli.tasks_per_fitness;
    spec.use_ampo = cli.use_ampo;
    spec.inner.eta = cli.inner_eta;
    spec.inner.iterations = cli.inner_iterations;
    spec.inner.q_mode = q_mode_from_string(cli.inner_q_mode);
    spec.inner.update_mode = UpdateMode::kClosedForm;
    spec.inner.compute_bound_terms = false;
    result = evolve_mirror_map(config, spec);
  }

  const std::string out_dir = resolve_out_dir(cli.out_dir);
  if (result.best_params.size() > 0) {
    const std::unique_ptr<OmegaPotential> best =
        potential_from_raw(config.family, result.best_params);
    write_text_file((fs::path(out_dir) / (cli.tag + "_best_potential.txt")).string(),
                    serialize_potential(*best));
  }
  std::ostringstream history_csv;
  history_csv << "generation,mean_fitness\n";
  for (size_t g = 0; g < result.mean_fitness_history.size(); ++g)
    history_csv << g << ',' << format_double(result.mean_fitness_history[g]) << "\n";
  write_text_file((fs::path(out_dir) / (cli.tag + "_history.csv")).string(), history_csv.str());

  FigureSeries fig;
  fig.label = to_string(config.family) + " / " + to_string(config.strategy);
  for (size_t g = 0; g < result.mean_fitness_history.size(); ++g) {
    if (!std::isfinite(result.mean_fitness_history[g])) continue;
    fig.x.push_back(static_cast<double>(g));
    fig.mean.push_back(result.mean_fitness_history[g]);
  }
  FigureOptions options;
  options.title = "Mean fitness by generation";
  options.x_label = "generation";
  options.y_label = "mean final value";
  write_text_file((fs::path(out_dir) / (cli.tag + "_history.svg")).string(),
                  render_line_svg({fig}, options));

  json summary{{"schema_version", kSchemaVersion},
               {"family", to_string(config.family)},
               {"strategy", to_string(config.strategy)},
               {"generations", static_cast<int>(result.mean_fitness_history.size()) - 1},
               {"best_fitness", result.best_fitness},
               {"best_generation", result.best_generation},
               {"initial_mean_fitness", result.mean_fitness_history.front()},
               {"final_mean_fitness", result.mean_fitness_history.back()},
               {"non_finite_evaluations", result.non_finite_evaluations}};
  write_text_file((fs::path(out_dir) / (cli.tag + "_result.json")).string(),
                  summary.dump(2) + "\n");

  std::cout << "evolve family=" << to_string(config.family)
            << " strategy=" << to_string(config.strategy)
            << " generations=" << result.mean_fitness_history.size() - 1
            << " initial_mean_fitness=" << format_double(result.mean_fitness_history.front())
            << " final_mean_fitness=" << format_double(result.mean_fitness_history.back())
            << " best=" << format_double(result.best_fitness) << " at generation "
            << result.best_generation << "\n  wrote " << out_dir << "/" << cli.tag
            << "_{best_potential.txt,history.csv,history.svg,result.json}\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Tabular policy mirror descent with learnable mirror maps"};
  app.require_subcommand(1);

  std::string env = "open_room";
  std::string potential = "negentropy";
  std::string out_dir;
  std::string tag;
  double tol = 1e-8;
  int num_seeds = 3;
  std::vector<std::string> maps;

  const auto add_common = [&](CLI::App* cmd, PmdFlagSet& flags) {
    cmd->add_option("--env", env,
                    "Environment: a held-out name, random:<seed> or file:<path>");
    cmd->add_option("--potential", potential,
                    "Mirror map: negentropy, l2, piecewise[:n], augmented_piecewise[:n], "
                    "monotone_net or file:<path>");
    cmd->add_option("--out-dir", out_dir, "Output directory (default: $PMDLAB_OUT or .)");
    cmd->add_option("--tag", tag, "Basename for output files (default: the subcommand name)");
    flags.attach(*cmd);
  };

  PmdFlagSet pmd_flags, ampo_flags, bounds_flags, compare_flags;
  CLI::App* cmd_pmd = app.add_subcommand("run-pmd", "Run policy mirror descent on one task");
  add_common(cmd_pmd, pmd_flags);
  CLI::App* cmd_ampo = app.add_subcommand("run-ampo", "Run the score-space variant on one task");
  add_common(cmd_ampo, ampo_flags);
  CLI::App* cmd_bounds =
      app.add_subcommand("check-bounds", "Run and verify the convergence guarantees");
  add_common(cmd_bounds, bounds_flags);
  cmd_bounds->add_option("--tol", tol, "Per-inequality slack tolerance");
  CLI::App* cmd_compare =
      app.add_subcommand("compare", "Aggregate runs for several mirror maps across seeds");
  add_common(cmd_compare, compare_flags);
  cmd_compare->add_option("--maps", maps, "Mirror maps to compare")->delimiter(',');
  cmd_compare->add_option("--seeds", num_seeds, "Number of seeds per map");

  EvolveCli evolve_cli;
  CLI::App* cmd_evolve = app.add_subcommand("evolve", "Meta-learn a mirror map");
  cmd_evolve->add_option("--family", evolve_cli.family, "piecewise or monotone_net");
  cmd_evolve->add_option("--strategy", evolve_cli.strategy, "openai_es or sep_cma");
  cmd_evolve->add_option("--generations", evolve_cli.generations, "Generations to run");
  cmd_evolve->add_option("--knots", evolve_cli.knots, "Piecewise knot count");
  cmd_evolve->add_option("--seed", evolve_cli.seed, "Evolution seed");
  cmd_evolve->add_option("--cma-sigma0", evolve_cli.cma_sigma0, "sep-CMA initial step size");
  cmd_evolve->add_option("--cma-population", evolve_cli.cma_population, "sep-CMA population");
  cmd_evolve->add_option("--es-population", evolve_cli.es_population, "OpenAI-ES population");
  cmd_evolve->add_option("--es-sigma0", evolve_cli.es_sigma0, "OpenAI-ES noise scale");
  cmd_evolve->add_option("--es-sigma-decay", evolve_cli.es_sigma_decay, "OpenAI-ES noise decay");
  cmd_evolve->add_option("--es-lr", evolve_cli.es_lr, "OpenAI-ES learning rate");
  cmd_evolve->add_option("--threads", evolve_cli.threads, "Worker threads (0: all cores)");
  cmd_evolve->add_option("--eval-episodes", evolve_cli.eval_episodes,
                         "Tasks per mean evaluation and per sep-CMA batch");
  cmd_evolve->add_option("--tasks-per-fitness", evolve_cli.tasks_per_fitness,
                         "Tasks averaged inside one OpenAI-ES evaluation");
  cmd_evolve->add_flag("--use-ampo", evolve_cli.use_ampo,
                       "Evaluate with the score-space variant");
  cmd_evolve->add_option("--inner-iterations", evolve_cli.inner_iterations,
                         "Inner run horizon T");
  cmd_evolve->add_option("--inner-eta", evolve_cli.inner_eta, "Inner step size");
  cmd_evolve->add_option("--inner-q-mode", evolve_cli.inner_q_mode, "exact or gae");
  cmd_evolve->add_option("--checkpoint-dir", evolve_cli.checkpoint_dir,
                         "Write per-generation checkpoints here");
  cmd_evolve->add_flag("--resume", evolve_cli.resume, "Continue from --checkpoint-dir");
  cmd_evolve->add_option("--out-dir", evolve_cli.out_dir,
                         "Output directory (default: $PMDLAB_OUT or .)");
  cmd_evolve->add_option("--tag", evolve_cli.tag, "Basename for output files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(cmd_pmd))
      return run_pmd_command(env, potential, pmd_flags, out_dir,
                             tag.empty() ? "run_pmd" : tag, false);
    if (app.got_subcommand(cmd_ampo))
      return run_pmd_command(env, potential, ampo_flags, out_dir,
                             tag.empty() ? "run_ampo" : tag, true);
    if (app.got_subcommand(cmd_bounds))
      return check_bounds_command(env, potential, bounds_flags, out_dir,
                                  tag.empty() ? "check_bounds" : tag, tol);
    if (app.got_subcommand(cmd_compare)) {
      if (maps.empty()) maps = {"negentropy", "l2"};
      return compare_command(env, maps, num_seeds, compare_flags.resolve().seed, compare_flags,
                             out_dir, tag.empty() ? "compare" : tag);
    }
    if (app.got_subcommand(cmd_evolve)) return evolve_command(evolve_cli);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pmdlab
