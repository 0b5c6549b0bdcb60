#pragma once

#include "adcm/consistency.hpp"
#include "adcm/discretizer.hpp"
#include "adcm/evalgen.hpp"
#include "adcm/schedule.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace adcm {

// Every run option, flat. String fields hold the externally visible spelling;
// typed accessors below construct the module configs.
struct TrainConfig {
  // network
  int hidden_layers = 3;
  int hidden_width = 128;
  std::string activation = "tanh";  // tanh | silu

  // data
  std::string dataset = "gauss8";  // gauss1 | gauss2 | gauss8 | ring | checkerboard

  // diffusion process
  std::string schedule = "ve";  // ve | fm
  std::string precond = "edm";  // edm | rf
  double sigma_data = 0.5;
  double t_min = -1.0;  // negative = schedule default
  double t_max = -1.0;

  // time sampling over the grid
  std::string time_sampler = "lognormal";  // lognormal | uniform
  double p_mean = -1.1;
  double p_std = 2.0;

  // metric and weighting
  std::string metric = "pseudo_huber";  // pseudo_huber | l2 | squared_l2
  double metric_c = 0.03;
  std::string weighting = "adaptive";  // adaptive | constant | inv_gap | inv_time
  double weight_floor = 1e-8;

  // discretization solver
  double lambda = 0.01;
  double dt_min_frac = 1.0 / 256.0;
  double dt_max_frac = 0.25;
  int grid_batch = 256;
  int n_max = 1024;

  // baseline grids
  std::string baseline = "none";  // none | uniform | exp | continuous
  int baseline_n = 16;
  double exp_rho = 7.0;

  // training loop
  long total_steps = 20000;
  long grid_update_every = 1000;
  int batch_size = 256;
  double learning_rate = 3e-4;
  double ema_decay = 0.999;
  double lambda_start = 0.64;
  double lambda_end = 0.01;
  long lambda_warmup_steps = 5000;
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0 = final checkpoint only
  std::string resume;
  std::string warm_start;

  // generation and evaluation
  std::string checkpoint;  // input checkpoint for schedule/sample/eval/oracle
  int n_samples = 1024;
  int gen_steps = 1;
  double t_mid = -1.0;  // negative = schedule default
  int eval_batch = 1024;
  int sliced_projections = 128;

  // oracle verb
  double t = -1.0;  // negative = t_max
  int mesh = 10000;

  // misc
  int threads = 1;

  // typed views
  NoiseSchedule noise_schedule() const;
  Preconditioner preconditioner() const;
  TimeSampler sampler() const;
  DistanceMetric distance_metric() const;
  WeightingConfig weighting_config() const;
  SolverConfig solver_config(double lambda_value) const;
  DatasetSpec dataset_spec() const;
  Activation activation_kind() const;
  std::vector<int> hidden_dims() const;
  BaselineSchedule baseline_schedule() const;
  double resolved_t_mid() const;  // ve default 0.420; fm matches that snr

  void set(const std::string& key, const std::string& value);  // ConfigError on unknown key
  void validate() const;

  // all keys with their current values, in declaration order
  std::vector<std::pair<std::string, std::string>> resolved_entries() const;
};

// UTF-8 `key = value` lines, '#' comments, blank lines ignored.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path);

TrainConfig load_config(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace adcm
