#include "adcm/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace adcm {

NoiseSchedule TrainConfig::noise_schedule() const {
  NoiseSchedule s = make_schedule(schedule == "fm" ? ScheduleKind::flow_matching : ScheduleKind::ve);
  if (t_min >= 0.0) s.t_min = t_min;
  if (t_max >= 0.0) s.t_max = t_max;
  return s;
}

Preconditioner TrainConfig::preconditioner() const {
  return {precond == "rf" ? PrecondKind::rectified_flow : PrecondKind::edm, sigma_data};
}

TimeSampler TrainConfig::sampler() const {
  return {time_sampler == "uniform" ? TimeSamplerKind::uniform_grid : TimeSamplerKind::lognormal_snr,
          p_mean, p_std};
}

DistanceMetric TrainConfig::distance_metric() const {
  MetricKind kind = MetricKind::pseudo_huber;
  if (metric == "l2") kind = MetricKind::l2;
  if (metric == "squared_l2") kind = MetricKind::squared_l2;
  return {kind, metric_c};
}

WeightingConfig TrainConfig::weighting_config() const {
  WeightingMode mode = WeightingMode::adaptive;
  if (weighting == "constant") mode = WeightingMode::constant;
  if (weighting == "inv_gap") mode = WeightingMode::inv_gap;
  if (weighting == "inv_time") mode = WeightingMode::inv_time;
  return {mode, weight_floor};
}

SolverConfig TrainConfig::solver_config(double lambda_value) const {
  SolverConfig cfg;
  cfg.lambda = lambda_value;
  cfg.dt_min_frac = dt_min_frac;
  cfg.dt_max_frac = dt_max_frac;
  cfg.batch_size = grid_batch;
  cfg.n_max = n_max;
  return cfg;
}

DatasetSpec TrainConfig::dataset_spec() const {
  DatasetSpec spec;
  if (dataset == "gauss1") {
    spec.components = 1;
    spec.mixture_scale = 0.5;
  } else if (dataset == "gauss2") {
    spec.components = 2;
  } else if (dataset == "gauss8") {
    spec.components = 8;
  } else if (dataset == "ring") {
    spec.kind = DatasetKind::ring;
  } else if (dataset == "checkerboard") {
    spec.kind = DatasetKind::checkerboard;
  } else {
    throw ConfigError("unknown dataset: " + dataset);
  }
  return spec;
}

Activation TrainConfig::activation_kind() const {
  if (activation == "tanh") return Activation::tanh;
  if (activation == "silu") return Activation::silu;
  throw ConfigError("unknown activation: " + activation);
}

std::vector<int> TrainConfig::hidden_dims() const {
  return std::vector<int>(static_cast<size_t>(hidden_layers), hidden_width);
}

BaselineSchedule TrainConfig::baseline_schedule() const {
  if (baseline == "uniform") return {BaselineKind::uniform, exp_rho};
  if (baseline == "exp") return {BaselineKind::exponential, exp_rho};
  if (baseline == "continuous") return {BaselineKind::continuous_limit, exp_rho};
  throw ConfigError("no baseline configured");
}

double TrainConfig::resolved_t_mid() const {
  if (t_mid >= 0.0) return t_mid;
  if (schedule == "fm") {
    // match the ve default's snr: snr_ve(0.420) = 0.420
    return snr_to_time(noise_schedule(), 0.420);
  }
  return 0.420;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t at = 0;
    double d = std::stod(v, &at);
    if (at != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    size_t at = 0;
    long n = std::stol(v, &at);
    if (at != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": '" + v + "'");
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_one_of(const std::string& key, const std::string& v,
                    std::initializer_list<const char*> options) {
  for (const char* o : options)
    if (v == o) return;
  std::string msg = "bad value for " + key + ": '" + v + "' (expected one of";
  for (const char* o : options) msg += std::string(" ") + o;
  throw ConfigError(msg + ")");
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "hidden_layers") hidden_layers = static_cast<int>(to_long(key, v));
  else if (key == "hidden_width") hidden_width = static_cast<int>(to_long(key, v));
  else if (key == "activation") { require_one_of(key, v, {"tanh", "silu"}); activation = v; }
  else if (key == "dataset") {
    require_one_of(key, v, {"gauss1", "gauss2", "gauss8", "ring", "checkerboard"});
    dataset = v;
  }
  else if (key == "schedule") { require_one_of(key, v, {"ve", "fm"}); schedule = v; }
  else if (key == "precond") { require_one_of(key, v, {"edm", "rf"}); precond = v; }
  else if (key == "sigma_data") sigma_data = to_double(key, v);
  else if (key == "t_min") t_min = to_double(key, v);
  else if (key == "t_max") t_max = to_double(key, v);
  else if (key == "time_sampler") { require_one_of(key, v, {"lognormal", "uniform"}); time_sampler = v; }
  else if (key == "p_mean") p_mean = to_double(key, v);
  else if (key == "p_std") p_std = to_double(key, v);
  else if (key == "metric") { require_one_of(key, v, {"pseudo_huber", "l2", "squared_l2"}); metric = v; }
  else if (key == "metric_c") metric_c = to_double(key, v);
  else if (key == "weighting") {
    require_one_of(key, v, {"adaptive", "constant", "inv_gap", "inv_time"});
    weighting = v;
  }
  else if (key == "weight_floor") weight_floor = to_double(key, v);
  else if (key == "lambda") lambda = to_double(key, v);
  else if (key == "dt_min_frac") dt_min_frac = to_double(key, v);
  else if (key == "dt_max_frac") dt_max_frac = to_double(key, v);
  else if (key == "grid_batch") grid_batch = static_cast<int>(to_long(key, v));
  else if (key == "n_max") n_max = static_cast<int>(to_long(key, v));
  else if (key == "baseline") {
    require_one_of(key, v, {"none", "uniform", "exp", "continuous"});
    baseline = v;
  }
  else if (key == "baseline_n") baseline_n = static_cast<int>(to_long(key, v));
  else if (key == "exp_rho") exp_rho = to_double(key, v);
  else if (key == "total_steps") total_steps = to_long(key, v);
  else if (key == "grid_update_every") grid_update_every = to_long(key, v);
  else if (key == "batch_size") batch_size = static_cast<int>(to_long(key, v));
  else if (key == "learning_rate") learning_rate = to_double(key, v);
  else if (key == "ema_decay") ema_decay = to_double(key, v);
  else if (key == "lambda_start") lambda_start = to_double(key, v);
  else if (key == "lambda_end") lambda_end = to_double(key, v);
  else if (key == "lambda_warmup_steps") lambda_warmup_steps = to_long(key, v);
  else if (key == "seed") seed = static_cast<std::uint64_t>(to_long(key, v));
  else if (key == "checkpoint_every") checkpoint_every = to_long(key, v);
  else if (key == "resume") resume = v;
  else if (key == "warm_start") warm_start = v;
  else if (key == "checkpoint") checkpoint = v;
  else if (key == "n_samples") n_samples = static_cast<int>(to_long(key, v));
  else if (key == "gen_steps") gen_steps = static_cast<int>(to_long(key, v));
  else if (key == "t_mid") t_mid = to_double(key, v);
  else if (key == "eval_batch") eval_batch = static_cast<int>(to_long(key, v));
  else if (key == "sliced_projections") sliced_projections = static_cast<int>(to_long(key, v));
  else if (key == "t") t = to_double(key, v);
  else if (key == "mesh") mesh = static_cast<int>(to_long(key, v));
  else if (key == "threads") threads = static_cast<int>(to_long(key, v));
  else throw ConfigError("unknown config key: " + key);
}

void TrainConfig::validate() const {
  if (hidden_layers < 0 || hidden_width < 1) throw ConfigError("bad network dimensions");
  if (sigma_data <= 0.0) throw ConfigError("sigma_data must be > 0");
  if (total_steps < grid_update_every || grid_update_every < 1)
    throw ConfigError("need total_steps >= grid_update_every >= 1");
  if (batch_size < 1 || grid_batch < 1) throw ConfigError("batch sizes must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must be in [0, 1]");
  if (!(lambda_start >= lambda_end && lambda_end >= 0.0))
    throw ConfigError("need lambda_start >= lambda_end >= 0");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (!(dt_min_frac > 0.0 && dt_min_frac <= dt_max_frac && dt_max_frac <= 1.0))
    throw ConfigError("need 0 < dt_min_frac <= dt_max_frac <= 1");
  if (p_std <= 0.0 && time_sampler == "lognormal") throw ConfigError("p_std must be > 0");
  if (metric_c < 0.0) throw ConfigError("metric_c must be >= 0");
  if (weight_floor <= 0.0) throw ConfigError("weight_floor must be > 0");
  if (lambda_warmup_steps < 0) throw ConfigError("lambda_warmup_steps must be >= 0");
  if (n_max < 2) throw ConfigError("n_max must be >= 2");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (gen_steps != 1 && gen_steps != 2) throw ConfigError("gen_steps must be 1 or 2");
  NoiseSchedule s = noise_schedule();
  if (!(s.t_max > s.t_min)) throw ConfigError("need t_max > t_min");
  if (schedule == "ve" && s.t_min <= 0.0) throw ConfigError("ve needs t_min > 0");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::resolved_entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  auto s = [&](const char* k, const std::string& v) { out.emplace_back(k, v); };
  auto d = [&](const char* k, double v) { out.emplace_back(k, fmt_double(v)); };
  auto i = [&](const char* k, long v) { out.emplace_back(k, std::to_string(v)); };
  i("hidden_layers", hidden_layers);
  i("hidden_width", hidden_width);
  s("activation", activation);
  s("dataset", dataset);
  s("schedule", schedule);
  s("precond", precond);
  d("sigma_data", sigma_data);
  d("t_min", noise_schedule().t_min);
  d("t_max", noise_schedule().t_max);
  s("time_sampler", time_sampler);
  d("p_mean", p_mean);
  d("p_std", p_std);
  s("metric", metric);
  d("metric_c", metric_c);
  s("weighting", weighting);
  d("weight_floor", weight_floor);
  d("lambda", lambda);
  d("dt_min_frac", dt_min_frac);
  d("dt_max_frac", dt_max_frac);
  i("grid_batch", grid_batch);
  i("n_max", n_max);
  s("baseline", baseline);
  i("baseline_n", baseline_n);
  d("exp_rho", exp_rho);
  i("total_steps", total_steps);
  i("grid_update_every", grid_update_every);
  i("batch_size", batch_size);
  d("learning_rate", learning_rate);
  d("ema_decay", ema_decay);
  d("lambda_start", lambda_start);
  d("lambda_end", lambda_end);
  i("lambda_warmup_steps", lambda_warmup_steps);
  i("seed", static_cast<long>(seed));
  i("checkpoint_every", checkpoint_every);
  s("resume", resume);
  s("warm_start", warm_start);
  s("checkpoint", checkpoint);
  i("n_samples", n_samples);
  i("gen_steps", gen_steps);
  d("t_mid", resolved_t_mid());
  i("eval_batch", eval_batch);
  i("sliced_projections", sliced_projections);
  d("t", t);
  i("mesh", mesh);
  i("threads", threads);
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    entries.emplace_back(key, value);
  }
  return entries;
}

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

TrainConfig load_config(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  TrainConfig cfg;
  if (!path.empty())
    for (const auto& [key, value] : parse_config_file(path)) cfg.set(key, value);
  for (const auto& [key, value] : overrides) cfg.set(key, value);
  cfg.validate();
  return cfg;
}

}  // namespace adcm
