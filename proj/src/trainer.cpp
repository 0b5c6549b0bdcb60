#include "adcm/trainer.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace adcm {

double lambda_at(const TrainConfig& cfg, long step) {
  if (step < 0) throw DomainError("lambda_at: step must be >= 0");
  const double a = cfg.lambda_start, b = cfg.lambda_end;
  if (a == b || cfg.lambda_warmup_steps == 0 || step >= cfg.lambda_warmup_steps) return b;
  if (step == 0) return a;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.lambda_warmup_steps);
  if (a > 0.0 && b > 0.0) return std::exp(std::log(a) + frac * (std::log(b) - std::log(a)));
  return a + frac * (b - a);  // linear when an endpoint sits at zero
}

TrainerState init_trainer(const TrainConfig& cfg) {
  TrainerState state;
  state.rng = Rng(cfg.seed);
  state.model.schedule = cfg.noise_schedule();
  state.model.precond = cfg.preconditioner();
  state.model.params = make_mlp(3, cfg.hidden_dims(), 2, cfg.activation_kind(), state.rng);
  state.opt = make_optimizer(param_count(state.model.params), cfg.learning_rate);
  state.ema = {state.model.params, cfg.ema_decay};
  return state;
}

StepResult train_step(TrainerState& state, const TrainConfig& cfg, const DataSampler& draw) {
  if (state.grid.times.size() < 2) throw DomainError("train_step: no grid built");

  Matrix x0 = draw(cfg.batch_size, state.rng);
  require_finite(x0, "train batch");
  Matrix z = normal_matrix(state.rng, x0.rows(), x0.cols());
  TimePair pair =
      sample_time_pair(cfg.sampler(), state.grid.times, state.model.schedule, state.rng);

  LossResult loss = adcm_loss(state.model, state.model, cfg.distance_metric(),
                              cfg.weighting_config(), x0, z, pair.t_hi, pair.t_lo);

  StepResult result;
  result.loss = loss.loss;
  if (!std::isfinite(loss.loss) || !flatten(loss.grads).allFinite()) {
    result.aborted = true;
    state.consecutive_aborts += 1;
    state.step += 1;
    if (state.consecutive_aborts >= 3)
      throw NumericError("training halted: three consecutive non-finite steps");
    return result;
  }
  state.consecutive_aborts = 0;
  adam_step(state.opt, state.model.params, loss.grads);
  ema_update(state.ema, state.model.params);
  state.step += 1;
  return result;
}

RunManifest::RunManifest(const std::string& path) : path_(path) {
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest for writing: " + path_);
}

void RunManifest::kv(const std::string& key, const std::string& value) {
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << key << " = " << value << "\n";
  if (!out) throw IoError("manifest write failed: " + path_);
}

void RunManifest::event(const std::string& line) {
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << line << "\n";
  if (!out) throw IoError("manifest write failed: " + path_);
}

namespace {

void rebuild_grid(TrainerState& state, const TrainConfig& cfg, const DataSampler& draw,
                  RunManifest* manifest, std::vector<SegmentationGrid>* grids) {
  const double lam = lambda_at(cfg, state.step);
  if (cfg.baseline != "none") {
    state.grid = baseline_grid(cfg.baseline_schedule(),
                               cfg.baseline == "continuous" ? cfg.n_max : cfg.baseline_n,
                               state.model.schedule);
    state.grid.built_at_step = state.step;
    state.grid.lambda_used = lam;
  } else {
    BatchSource source = [&](int n) { return draw(n, state.rng); };
    state.grid = build_grid(state.model, cfg.solver_config(lam), source, state.rng, state.step);
  }
  state.grid_id += 1;
  if (grids) grids->push_back(state.grid);
  if (manifest)
    manifest->event("grid_rebuild step=" + std::to_string(state.step) +
                    " length=" + std::to_string(state.grid.times.size()) +
                    " lambda=" + std::to_string(lam) +
                    " clamp_low=" + std::to_string(state.grid.stats.clamped_low) +
                    " clamp_high=" + std::to_string(state.grid.stats.clamped_high) +
                    " negative_raw=" + std::to_string(state.grid.stats.negative_raw));
}

}  // namespace

TrainOutcome train_loop(const TrainConfig& cfg, const DataSampler& draw, RunManifest* manifest,
                        const std::string& checkpoint_dir, const StepCallback& on_step) {
  namespace fs = std::filesystem;
  TrainOutcome out;

  if (!cfg.resume.empty()) {
    out.state = checkpoint_load(cfg.resume);
    out.state.opt.learning_rate = cfg.learning_rate;
    out.state.ema.decay = cfg.ema_decay;
  } else {
    out.state = init_trainer(cfg);
    if (!cfg.warm_start.empty()) {
      TrainerState warm = checkpoint_load(cfg.warm_start);
      if (param_count(warm.model.params) != param_count(out.state.model.params))
        throw ConfigError("warm_start checkpoint does not match the configured network");
      out.state.model.params = warm.model.params;
      out.state.ema.shadow = warm.ema.shadow;
    }
  }
  TrainerState& state = out.state;

  if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);

  const bool fixed_grid = cfg.baseline != "none";
  while (state.step < cfg.total_steps) {
    const bool rebuild_due = state.step % cfg.grid_update_every == 0 || state.grid.times.size() < 2;
    if (rebuild_due && (!fixed_grid || state.grid.times.size() < 2))
      rebuild_grid(state, cfg, draw, manifest, &out.grids);

    const long step_before = state.step;
    StepResult step = train_step(state, cfg, draw);
    out.history.push_back({step_before, step.loss, lambda_at(cfg, step_before), state.grid_id});
    if (on_step) on_step(state, out.history.back());
    if (step.aborted && manifest)
      manifest->event("step_aborted step=" + std::to_string(step_before));

    if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        state.step % cfg.checkpoint_every == 0 && state.step < cfg.total_steps) {
      checkpoint_save((fs::path(checkpoint_dir) / ("ckpt_step" + std::to_string(state.step) +
                                                   ".adcm")).string(),
                      state);
    }
  }

  if (!checkpoint_dir.empty())
    checkpoint_save((fs::path(checkpoint_dir) / "ckpt_final.adcm").string(), state);
  if (manifest) manifest->kv("final_step", std::to_string(state.step));
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint format v1 (little-endian):
//   "ADCM" | u32 version
//   u32 schedule_kind | u32 precond_kind | f64 t_min | f64 t_max | f64 sigma_data
//   u32 n_layers | n_layers x { u32 out, u32 in, u32 activation }
//   u32 grid_len | u64 step | u64 grid_built_at | f64 grid_lambda
//   u32 grid_id | u32 consecutive_aborts
//   f64 ema_decay | f64 lr | f64 beta1 | f64 beta2 | f64 eps | u64 opt_step
//   u64 rng_state
//   f64 params[P] | f64 grid[grid_len] | f64 m[P] | f64 v[P] | f64 ema[P]
// ---------------------------------------------------------------------------

namespace {

using CkErr = CheckpointError;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary | std::ios::trunc) {
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  }
  void u32(std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
  void u64(std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  void f64(double v) { out.write(reinterpret_cast<const char*>(&v), 8); }
  void doubles(const double* p, size_t n) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
  }
};

struct Reader {
  std::ifstream in;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {
    if (!in) throw IoError("cannot open checkpoint: " + path);
  }
  void raw(void* p, size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
      throw CkErr(CkErr::Kind::truncated, std::string("checkpoint truncated reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    raw(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    raw(&v, 8, what);
    return v;
  }
  double f64(const char* what) {
    double v;
    raw(&v, 8, what);
    return v;
  }
  void expect_eof() {
    char c;
    in.read(&c, 1);
    if (!in.eof()) throw CkErr(CkErr::Kind::bad_header, "checkpoint has trailing bytes");
  }
};

constexpr std::uint32_t kVersion = 1;
const char kMagic[4] = {'A', 'D', 'C', 'M'};

}  // namespace

void checkpoint_save(const std::string& path, const TrainerState& state) {
  Writer w(path);
  w.out.write(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(state.model.schedule.kind));
  w.u32(static_cast<std::uint32_t>(state.model.precond.kind));
  w.f64(state.model.schedule.t_min);
  w.f64(state.model.schedule.t_max);
  w.f64(state.model.precond.sigma_data);

  const auto& layers = state.model.params.layers;
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const Layer& layer : layers) {
    w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    w.u32(static_cast<std::uint32_t>(layer.act));
  }
  w.u32(static_cast<std::uint32_t>(state.grid.times.size()));
  w.u64(static_cast<std::uint64_t>(state.step));
  w.u64(static_cast<std::uint64_t>(state.grid.built_at_step));
  w.f64(state.grid.lambda_used);
  w.u32(static_cast<std::uint32_t>(state.grid_id));
  w.u32(static_cast<std::uint32_t>(state.consecutive_aborts));
  w.f64(state.ema.decay);
  w.f64(state.opt.learning_rate);
  w.f64(state.opt.beta1);
  w.f64(state.opt.beta2);
  w.f64(state.opt.eps_stability);
  w.u64(static_cast<std::uint64_t>(state.opt.step_count));
  w.u64(state.rng.state());

  Vector params = flatten(state.model.params);
  Vector ema = flatten(state.ema.shadow);
  w.doubles(params.data(), params.size());
  w.doubles(state.grid.times.data(), state.grid.times.size());
  w.doubles(state.opt.first_moment.data(), state.opt.first_moment.size());
  w.doubles(state.opt.second_moment.data(), state.opt.second_moment.size());
  w.doubles(ema.data(), ema.size());
  w.out.flush();
  if (!w.out) throw IoError("checkpoint write failed: " + path);
}

TrainerState checkpoint_load(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CkErr(CkErr::Kind::bad_magic, "not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw CkErr(CkErr::Kind::bad_version,
                "unsupported checkpoint version " + std::to_string(version));

  TrainerState state;
  const std::uint32_t schedule_kind = r.u32("schedule kind");
  const std::uint32_t precond_kind = r.u32("precond kind");
  if (schedule_kind > 1 || precond_kind > 2)
    throw CkErr(CkErr::Kind::bad_header, "invalid schedule/preconditioner tag");
  state.model.schedule.kind = static_cast<ScheduleKind>(schedule_kind);
  state.model.precond.kind = static_cast<PrecondKind>(precond_kind);
  state.model.schedule.t_min = r.f64("t_min");
  state.model.schedule.t_max = r.f64("t_max");
  state.model.precond.sigma_data = r.f64("sigma_data");
  if (!(state.model.schedule.t_max > state.model.schedule.t_min) ||
      !std::isfinite(state.model.schedule.t_min) || !(state.model.precond.sigma_data > 0.0))
    throw CkErr(CkErr::Kind::bad_header, "invalid time range or sigma_data");

  const std::uint32_t n_layers = r.u32("layer count");
  if (n_layers == 0 || n_layers > 64) throw CkErr(CkErr::Kind::bad_header, "bad layer count");
  std::uint32_t prev_out = 0;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const std::uint32_t rows = r.u32("layer rows");
    const std::uint32_t cols = r.u32("layer cols");
    const std::uint32_t act = r.u32("layer activation");
    if (rows == 0 || cols == 0 || rows > 65536 || cols > 65536 || act > 2)
      throw CkErr(CkErr::Kind::bad_header, "bad layer dimensions");
    if (l > 0 && cols != prev_out)
      throw CkErr(CkErr::Kind::bad_header, "layer dimension table does not chain");
    prev_out = rows;
    Layer layer;
    layer.weight = Matrix::Zero(rows, cols);
    layer.bias = Vector::Zero(rows);
    layer.act = static_cast<Activation>(act);
    state.model.params.layers.push_back(std::move(layer));
  }

  const std::uint32_t grid_len = r.u32("grid length");
  if (grid_len == 1 || grid_len > (1u << 20)) throw CkErr(CkErr::Kind::bad_header, "bad grid length");
  state.step = static_cast<long>(r.u64("step"));
  state.grid.built_at_step = static_cast<long>(r.u64("grid built_at"));
  state.grid.lambda_used = r.f64("grid lambda");
  state.grid_id = static_cast<int>(r.u32("grid id"));
  state.consecutive_aborts = static_cast<int>(r.u32("abort count"));
  state.ema.decay = r.f64("ema decay");

  const long n_params = param_count(state.model.params);
  state.opt = make_optimizer(n_params, r.f64("learning rate"));
  state.opt.beta1 = r.f64("beta1");
  state.opt.beta2 = r.f64("beta2");
  state.opt.eps_stability = r.f64("eps");
  state.opt.step_count = static_cast<long>(r.u64("optimizer step"));
  state.rng.set_state(r.u64("rng state"));

  Vector params(n_params);
  r.raw(params.data(), static_cast<size_t>(n_params) * 8, "parameters");
  assign_from_flat(state.model.params, params);
  state.grid.times.resize(grid_len);
  if (grid_len > 0) r.raw(state.grid.times.data(), grid_len * 8, "grid times");
  for (size_t i = 1; i < state.grid.times.size(); ++i)
    if (!(state.grid.times[i] > state.grid.times[i - 1]))
      throw CkErr(CkErr::Kind::bad_header, "grid times not strictly increasing");
  r.raw(state.opt.first_moment.data(), static_cast<size_t>(n_params) * 8, "first moment");
  r.raw(state.opt.second_moment.data(), static_cast<size_t>(n_params) * 8, "second moment");
  Vector ema(n_params);
  r.raw(ema.data(), static_cast<size_t>(n_params) * 8, "ema shadow");
  state.ema.shadow = state.model.params;
  assign_from_flat(state.ema.shadow, ema);
  r.expect_eof();
  return state;
}

}  // namespace adcm
