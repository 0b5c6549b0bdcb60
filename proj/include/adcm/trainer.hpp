#pragma once

#include "adcm/config.hpp"
#include "adcm/consistency.hpp"
#include "adcm/discretizer.hpp"
#include "adcm/evalgen.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace adcm {

// Lambda warm-up: log-linear from lambda_start to lambda_end over
// lambda_warmup_steps, constant afterwards.
double lambda_at(const TrainConfig& cfg, long step);

struct TrainerState {
  ConsistencyModel model;
  OptimizerState opt;
  EmaState ema;
  SegmentationGrid grid;
  Rng rng{0};
  long step = 0;
  int grid_id = 0;
  int consecutive_aborts = 0;
};

// Fresh state from the config seed; the grid starts empty and is built by
// the loop (or by the caller for single-grid commands).
TrainerState init_trainer(const TrainConfig& cfg);

using DataSampler = std::function<Matrix(int, Rng&)>;

struct StepResult {
  double loss = 0.0;
  bool aborted = false;
};

// One parameter update: fresh batch, adjacent grid times with shared (x0, z),
// weighted consistency loss, adam update, ema update. A non-finite loss
// aborts the step without touching parameters; three consecutive aborts halt.
StepResult train_step(TrainerState& state, const TrainConfig& cfg, const DataSampler& draw);

// Append-only plain-text run record. The header is written before any
// compute; grid rebuilds and completion are appended as they happen.
class RunManifest {
 public:
  RunManifest() = default;
  explicit RunManifest(const std::string& path);
  void kv(const std::string& key, const std::string& value);
  void event(const std::string& line);
  bool open() const { return !path_.empty(); }

 private:
  std::string path_;
};

struct TrainOutcome {
  TrainerState state;
  std::vector<LossRecord> history;
  std::vector<SegmentationGrid> grids;
};

using StepCallback = std::function<void(const TrainerState&, const LossRecord&)>;

// Alternating loop: (re)build the grid every grid_update_every steps with the
// warmed-up lambda, then update parameters. Baseline mode pins a fixed grid.
// Checkpoints land in checkpoint_dir when non-empty.
TrainOutcome train_loop(const TrainConfig& cfg, const DataSampler& draw, RunManifest* manifest,
                        const std::string& checkpoint_dir, const StepCallback& on_step = {});

// Binary little-endian checkpoint; see README for the exact layout.
void checkpoint_save(const std::string& path, const TrainerState& state);
TrainerState checkpoint_load(const std::string& path);

struct CheckpointError : IoError {
  enum class Kind { bad_magic, bad_version, bad_header, truncated };
  Kind kind;
  CheckpointError(Kind k, const std::string& msg) : IoError(msg), kind(k) {}
};

}  // namespace adcm
