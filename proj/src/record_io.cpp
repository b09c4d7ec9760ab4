#include "pmdlab/record_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pmdlab {
namespace {

using nlohmann::json;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::runtime_error(what);
}

std::string fmt_hex(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

json series_to_json(const std::vector<double>& v) {
  json arr = json::array();
  for (double x : v) arr.push_back(x);
  return arr;
}

std::vector<double> series_from_json(const json& arr) {
  std::vector<double> v;
  v.reserve(arr.size());
  for (const auto& x : arr) v.push_back(x.get<double>());
  return v;
}

json pmd_config_to_json(const PmdConfig& c) {
  return json{{"eta", c.eta},
              {"iterations", c.iterations},
              {"q_mode", to_string(c.q_mode)},
              {"update_mode", to_string(c.update_mode)},
              {"num_envs", c.num_envs},
              {"unroll_length", c.unroll_length},
              {"gae_lambda", c.gae_lambda},
              {"critic_lr", c.critic_lr},
              {"reset_prob", c.reset_prob},
              {"inner_epochs", c.inner_epochs},
              {"inner_lr", c.inner_lr},
              {"seed", c.seed},
              {"compute_bound_terms", c.compute_bound_terms}};
}

PmdConfig pmd_config_from_json(const json& j) {
  PmdConfig c;
  c.eta = j.at("eta").get<double>();
  c.iterations = j.at("iterations").get<int>();
  c.q_mode = q_mode_from_string(j.at("q_mode").get<std::string>());
  c.update_mode = update_mode_from_string(j.at("update_mode").get<std::string>());
  c.num_envs = j.at("num_envs").get<int>();
  c.unroll_length = j.at("unroll_length").get<int>();
  c.gae_lambda = j.at("gae_lambda").get<double>();
  c.critic_lr = j.at("critic_lr").get<double>();
  c.reset_prob = j.at("reset_prob").get<double>();
  c.inner_epochs = j.at("inner_epochs").get<int>();
  c.inner_lr = j.at("inner_lr").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.compute_bound_terms = j.at("compute_bound_terms").get<bool>();
  return c;
}

json grid_distribution_to_json(const GridDistribution& d) {
  return json{{"min_width", d.min_width},
              {"max_width", d.max_width},
              {"min_height", d.min_height},
              {"max_height", d.max_height},
              {"min_wall_density", d.min_wall_density},
              {"max_wall_density", d.max_wall_density},
              {"min_objects", d.min_objects},
              {"max_objects", d.max_objects},
              {"reward_values", d.reward_values},
              {"num_starts", d.num_starts},
              {"slip_prob", d.slip_prob},
              {"gamma", d.gamma},
              {"seed", d.seed}};
}

GridDistribution grid_distribution_from_json(const json& j) {
  GridDistribution d;
  d.min_width = j.at("min_width").get<int>();
  d.max_width = j.at("max_width").get<int>();
  d.min_height = j.at("min_height").get<int>();
  d.max_height = j.at("max_height").get<int>();
  d.min_wall_density = j.at("min_wall_density").get<double>();
  d.max_wall_density = j.at("max_wall_density").get<double>();
  d.min_objects = j.at("min_objects").get<int>();
  d.max_objects = j.at("max_objects").get<int>();
  d.reward_values = j.at("reward_values").get<std::vector<double>>();
  d.num_starts = j.at("num_starts").get<int>();
  d.slip_prob = j.at("slip_prob").get<double>();
  d.gamma = j.at("gamma").get<double>();
  d.seed = j.at("seed").get<uint64_t>();
  return d;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // e.what() carries the byte offset nlohmann reports.
    throw std::runtime_error(std::string("json parse error: ") + e.what());
  }
}

void check_schema(const json& j) {
  require(j.contains("schema_version"), "missing schema_version");
  const int version = j.at("schema_version").get<int>();
  require(version == kSchemaVersion,
          "schema_version mismatch: file has " + std::to_string(version) + ", expected " +
              std::to_string(kSchemaVersion));
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string pmd_record_csv(const PmdRunRecord& record) {
  std::ostringstream out;
  out << "iteration,value,q_error_linf,update_l1,eq2_lower_bound,eq3_lhs,eq3_rate_term,"
         "eq3_discount_term,eq3_floor_term,env_steps\n";
  const size_t iters = record.value.size();
  const auto cell = [&](const std::vector<double>& v, size_t t) {
    return t < v.size() ? format_double(v[t]) : std::string();
  };
  for (size_t t = 0; t < iters; ++t) {
    out << t << ',' << cell(record.value, t) << ',' << cell(record.q_error, t) << ','
        << cell(record.update_l1, t) << ',' << cell(record.eq2_lower_bound, t) << ','
        << cell(record.eq3_lhs, t) << ',' << cell(record.eq3_rate_term, t) << ','
        << cell(record.eq3_discount_term, t) << ',' << cell(record.eq3_floor_term, t) << ','
        << static_cast<int64_t>(t) * record.env_steps_per_iteration << "\n";
  }
  return out.str();
}

std::string pmd_record_to_json(const PmdRunRecord& record) {
  json policy = json::array();
  for (int s = 0; s < record.final_policy.num_states(); ++s)
    policy.push_back(vector_to_json(record.final_policy.probs.row(s).transpose()));
  json j{{"schema_version", kSchemaVersion},
         {"potential_name", record.potential_name},
         {"config", pmd_config_to_json(record.config)},
         {"dstar0", record.dstar0},
         {"v_star_mu", record.v_star_mu},
         {"final_value", record.final_value},
         {"env_steps_per_iteration", record.env_steps_per_iteration},
         {"series",
          json{{"value", series_to_json(record.value)},
               {"q_error", series_to_json(record.q_error)},
               {"update_l1", series_to_json(record.update_l1)},
               {"eq2_lower_bound", series_to_json(record.eq2_lower_bound)},
               {"eq3_lhs", series_to_json(record.eq3_lhs)},
               {"eq3_rate_term", series_to_json(record.eq3_rate_term)},
               {"eq3_discount_term", series_to_json(record.eq3_discount_term)},
               {"eq3_floor_term", series_to_json(record.eq3_floor_term)}}},
         {"final_policy", policy}};
  return j.dump(2) + "\n";
}

PmdRunRecord pmd_record_from_json(const std::string& text) {
  const json j = parse_json(text);
  try {
    check_schema(j);
    PmdRunRecord record;
    record.potential_name = j.at("potential_name").get<std::string>();
    record.config = pmd_config_from_json(j.at("config"));
    record.dstar0 = j.at("dstar0").get<double>();
    record.v_star_mu = j.at("v_star_mu").get<double>();
    record.final_value = j.at("final_value").get<double>();
    record.env_steps_per_iteration = j.at("env_steps_per_iteration").get<int64_t>();
    const json& series = j.at("series");
    record.value = series_from_json(series.at("value"));
    record.q_error = series_from_json(series.at("q_error"));
    record.update_l1 = series_from_json(series.at("update_l1"));
    record.eq2_lower_bound = series_from_json(series.at("eq2_lower_bound"));
    record.eq3_lhs = series_from_json(series.at("eq3_lhs"));
    record.eq3_rate_term = series_from_json(series.at("eq3_rate_term"));
    record.eq3_discount_term = series_from_json(series.at("eq3_discount_term"));
    record.eq3_floor_term = series_from_json(series.at("eq3_floor_term"));
    const json& policy = j.at("final_policy");
    const int num_states = static_cast<int>(policy.size());
    if (num_states > 0) {
      const int num_actions = static_cast<int>(policy[0].size());
      record.final_policy.probs.resize(num_states, num_actions);
      for (int s = 0; s < num_states; ++s) {
        require(static_cast<int>(policy[s].size()) == num_actions,
                "final_policy rows have inconsistent lengths");
        for (int a = 0; a < num_actions; ++a)
          record.final_policy.probs(s, a) = policy[s][a].get<double>();
      }
    }
    return record;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed run record: ") + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ComparisonCurve aggregate_runs(const std::string& map_name,
                               const std::vector<PmdRunRecord>& runs) {
  require(!runs.empty(), "aggregate_runs: no runs");
  const size_t iters = runs[0].value.size();
  for (const PmdRunRecord& r : runs) {
    require(r.value.size() == iters, "aggregate_runs: run lengths differ");
    require(r.env_steps_per_iteration == runs[0].env_steps_per_iteration,
            "aggregate_runs: env step schedules differ");
  }
  const double n = static_cast<double>(runs.size());
  const auto stats = [&](auto getter, std::vector<double>& mean_out,
                         std::vector<double>& stderr_out) {
    mean_out.resize(iters);
    stderr_out.resize(iters);
    for (size_t t = 0; t < iters; ++t) {
      double mean = 0.0;
      for (const PmdRunRecord& r : runs) mean += getter(r)[t];
      mean /= n;
      double var = 0.0;
      for (const PmdRunRecord& r : runs) {
        const double d = getter(r)[t] - mean;
        var += d * d;
      }
      mean_out[t] = mean;
      stderr_out[t] = runs.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
    }
  };
  ComparisonCurve curve;
  curve.map_name = map_name;
  curve.x.resize(iters);
  for (size_t t = 0; t < iters; ++t)
    curve.x[t] = runs[0].env_steps_per_iteration > 0
                     ? static_cast<double>(t) * runs[0].env_steps_per_iteration
                     : static_cast<double>(t);
  stats([](const PmdRunRecord& r) -> const std::vector<double>& { return r.value; },
        curve.value_mean, curve.value_stderr);
  stats([](const PmdRunRecord& r) -> const std::vector<double>& { return r.q_error; },
        curve.q_error_mean, curve.q_error_stderr);
  stats([](const PmdRunRecord& r) -> const std::vector<double>& { return r.update_l1; },
        curve.update_l1_mean, curve.update_l1_stderr);
  curve.final_values.reserve(runs.size());
  for (const PmdRunRecord& r : runs) curve.final_values.push_back(r.final_value);
  return curve;
}

std::string comparison_to_json(const ComparisonReport& report) {
  json curves = json::array();
  for (const ComparisonCurve& c : report.curves) {
    curves.push_back(json{{"map_name", c.map_name},
                          {"x", series_to_json(c.x)},
                          {"value_mean", series_to_json(c.value_mean)},
                          {"value_stderr", series_to_json(c.value_stderr)},
                          {"q_error_mean", series_to_json(c.q_error_mean)},
                          {"q_error_stderr", series_to_json(c.q_error_stderr)},
                          {"update_l1_mean", series_to_json(c.update_l1_mean)},
                          {"update_l1_stderr", series_to_json(c.update_l1_stderr)},
                          {"final_values", series_to_json(c.final_values)}});
  }
  json j{{"schema_version", kSchemaVersion},
         {"env_name", report.env_name},
         {"num_seeds", report.num_seeds},
         {"curves", curves}};
  return j.dump(2) + "\n";
}

std::string comparison_csv(const ComparisonReport& report) {
  std::ostringstream out;
  out << "map_name,x,value_mean,value_stderr,q_error_mean,q_error_stderr,update_l1_mean,"
         "update_l1_stderr\n";
  for (const ComparisonCurve& c : report.curves)
    for (size_t t = 0; t < c.x.size(); ++t)
      out << c.map_name << ',' << format_double(c.x[t]) << ',' << format_double(c.value_mean[t])
          << ',' << format_double(c.value_stderr[t]) << ',' << format_double(c.q_error_mean[t])
          << ',' << format_double(c.q_error_stderr[t]) << ','
          << format_double(c.update_l1_mean[t]) << ',' << format_double(c.update_l1_stderr[t])
          << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Evolve checkpoints

namespace {

json evolve_config_to_json(const EvolveConfig& c) {
  return json{{"family", to_string(c.family)},
              {"strategy", to_string(c.strategy)},
              {"generations", c.generations},
              {"piecewise_knots", c.piecewise_knots},
              {"seed", c.seed},
              {"cma_sigma0", c.cma_sigma0},
              {"es",
               json{{"population", c.es.population},
                    {"sigma0", c.es.sigma0},
                    {"sigma_decay", c.es.sigma_decay},
                    {"lr", c.es.lr},
                    {"num_threads", c.es.num_threads}}},
              {"cma", json{{"population", c.cma.population}, {"num_threads", c.cma.num_threads}}},
              {"checkpoint_dir", c.checkpoint_dir}};
}

EvolveConfig evolve_config_from_json(const json& j) {
  EvolveConfig c;
  c.family = map_family_from_string(j.at("family").get<std::string>());
  c.strategy = evo_strategy_from_string(j.at("strategy").get<std::string>());
  c.generations = j.at("generations").get<int>();
  c.piecewise_knots = j.at("piecewise_knots").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.cma_sigma0 = j.at("cma_sigma0").get<double>();
  const json& es = j.at("es");
  c.es.population = es.at("population").get<int>();
  c.es.sigma0 = es.at("sigma0").get<double>();
  c.es.sigma_decay = es.at("sigma_decay").get<double>();
  c.es.lr = es.at("lr").get<double>();
  c.es.num_threads = es.at("num_threads").get<int>();
  c.cma.population = j.at("cma").at("population").get<int>();
  c.cma.num_threads = j.at("cma").at("num_threads").get<int>();
  c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  return c;
}

json fitness_spec_to_json(const FitnessSpec& s) {
  return json{{"tasks", grid_distribution_to_json(s.tasks)},
              {"inner", pmd_config_to_json(s.inner)},
              {"eval_episodes", s.eval_episodes},
              {"tasks_per_fitness", s.tasks_per_fitness},
              {"use_ampo", s.use_ampo}};
}

FitnessSpec fitness_spec_from_json(const json& j) {
  FitnessSpec s;
  s.tasks = grid_distribution_from_json(j.at("tasks"));
  s.inner = pmd_config_from_json(j.at("inner"));
  s.eval_episodes = j.at("eval_episodes").get<int>();
  s.tasks_per_fitness = j.at("tasks_per_fitness").get<int>();
  s.use_ampo = j.at("use_ampo").get<bool>();
  return s;
}

void write_vector_line(std::ostream& out, const std::string& key, const Eigen::VectorXd& v) {
  out << key << ' ' << v.size();
  for (int i = 0; i < v.size(); ++i) out << ' ' << fmt_hex(v[i]);
  out << "\n";
}

Eigen::VectorXd read_vector_line(std::istream& in, const std::string& expected_key) {
  std::string key;
  long size = 0;
  in >> key >> size;
  require(bool(in) && key == expected_key && size >= 0,
          "checkpoint: expected vector '" + expected_key + "'");
  Eigen::VectorXd v(size);
  std::string token;
  for (long i = 0; i < size; ++i) {
    in >> token;
    require(bool(in), "checkpoint: truncated vector '" + expected_key + "'");
    v[i] = std::strtod(token.c_str(), nullptr);
  }
  return v;
}

double read_scalar_line(std::istream& in, const std::string& expected_key) {
  std::string key, token;
  in >> key >> token;
  require(bool(in) && key == expected_key, "checkpoint: expected key '" + expected_key + "'");
  return std::strtod(token.c_str(), nullptr);
}

uint64_t read_u64_line(std::istream& in, const std::string& expected_key) {
  std::string key;
  uint64_t value = 0;
  in >> key >> value;
  require(bool(in) && key == expected_key, "checkpoint: expected key '" + expected_key + "'");
  return value;
}

}  // namespace

void write_checkpoint(const std::string& dir, const EvolveCheckpoint& cp) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest{{"schema_version", kSchemaVersion},
                {"config", evolve_config_to_json(cp.config)},
                {"spec", fitness_spec_to_json(cp.spec)}};
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  std::ostringstream out;
  out << "pmdlab-checkpoint v1\n";
  out << "generation " << cp.generation << "\n";
  out << "best_fitness " << fmt_hex(cp.best_fitness) << "\n";
  out << "best_generation " << cp.best_generation << "\n";
  out << "non_finite_evaluations " << cp.non_finite_evaluations << "\n";
  out << "es_sigma " << fmt_hex(cp.es_state.sigma) << "\n";
  out << "es_generation " << cp.es_state.generation << "\n";
  out << "es_seed " << cp.es_state.seed << "\n";
  write_vector_line(out, "es_mean", cp.es_state.mean);
  out << "cma_sigma " << fmt_hex(cp.cma_state.sigma) << "\n";
  out << "cma_generation " << cp.cma_state.generation << "\n";
  out << "cma_seed " << cp.cma_state.seed << "\n";
  write_vector_line(out, "cma_mean", cp.cma_state.mean);
  write_vector_line(out, "cma_diag_c", cp.cma_state.diag_c);
  write_vector_line(out, "cma_p_sigma", cp.cma_state.p_sigma);
  write_vector_line(out, "cma_p_c", cp.cma_state.p_c);
  write_vector_line(out, "best_params", cp.best_params);
  out << "mean_fitness_history " << cp.mean_fitness_history.size();
  for (double v : cp.mean_fitness_history) out << ' ' << fmt_hex(v);
  out << "\n";

  char name[32];
  std::snprintf(name, sizeof(name), "gen_%06d.txt", cp.generation);
  write_text_file((fs::path(dir) / name).string(), out.str());
}

EvolveCheckpoint load_latest_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), "checkpoint directory not found: " + dir);
  int latest = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int gen = 0;
    if (std::sscanf(name.c_str(), "gen_%d.txt", &gen) == 1) latest = std::max(latest, gen);
  }
  require(latest >= 0, "no checkpoint state files in: " + dir);

  EvolveCheckpoint cp;
  const json manifest = parse_json(read_text_file((fs::path(dir) / "manifest.json").string()));
  check_schema(manifest);
  cp.config = evolve_config_from_json(manifest.at("config"));
  cp.spec = fitness_spec_from_json(manifest.at("spec"));

  char name[32];
  std::snprintf(name, sizeof(name), "gen_%06d.txt", latest);
  std::istringstream in(read_text_file((fs::path(dir) / name).string()));
  std::string magic, version;
  in >> magic >> version;
  require(magic == "pmdlab-checkpoint" && version == "v1", "unrecognized checkpoint header");
  cp.generation = static_cast<int>(read_scalar_line(in, "generation"));
  cp.best_fitness = read_scalar_line(in, "best_fitness");
  cp.best_generation = static_cast<int>(read_scalar_line(in, "best_generation"));
  cp.non_finite_evaluations = static_cast<int>(read_scalar_line(in, "non_finite_evaluations"));
  cp.es_state.sigma = read_scalar_line(in, "es_sigma");
  cp.es_state.generation = static_cast<int>(read_scalar_line(in, "es_generation"));
  cp.es_state.seed = read_u64_line(in, "es_seed");
  cp.es_state.mean = read_vector_line(in, "es_mean");
  cp.cma_state.sigma = read_scalar_line(in, "cma_sigma");
  cp.cma_state.generation = static_cast<int>(read_scalar_line(in, "cma_generation"));
  cp.cma_state.seed = read_u64_line(in, "cma_seed");
  cp.cma_state.mean = read_vector_line(in, "cma_mean");
  cp.cma_state.diag_c = read_vector_line(in, "cma_diag_c");
  cp.cma_state.p_sigma = read_vector_line(in, "cma_p_sigma");
  cp.cma_state.p_c = read_vector_line(in, "cma_p_c");
  cp.best_params = read_vector_line(in, "best_params");
  std::string key;
  long count = 0;
  in >> key >> count;
  require(bool(in) && key == "mean_fitness_history" && count >= 0,
          "checkpoint: expected mean_fitness_history");
  cp.mean_fitness_history.resize(count);
  std::string token;
  for (long i = 0; i < count; ++i) {
    in >> token;
    require(bool(in), "checkpoint: truncated mean_fitness_history");
    cp.mean_fitness_history[i] = std::strtod(token.c_str(), nullptr);
  }
  return cp;
}

}  // namespace pmdlab
