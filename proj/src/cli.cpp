#include "adcm/cli.hpp"

#include "adcm/evalgen.hpp"
#include "adcm/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace adcm {

namespace fs = std::filesystem;

namespace {

const char* kVersionString = "adcm 1.0.0";

Verb parse_verb(const std::string& word) {
  if (word == "train") return Verb::train;
  if (word == "schedule") return Verb::schedule;
  if (word == "sample") return Verb::sample;
  if (word == "eval") return Verb::eval;
  if (word == "oracle") return Verb::oracle;
  if (word == "export-plot") return Verb::export_plot;
  throw UsageError("unknown verb: '" + word + "'");
}

const char* verb_name(Verb verb) {
  switch (verb) {
    case Verb::train: return "train";
    case Verb::schedule: return "schedule";
    case Verb::sample: return "sample";
    case Verb::eval: return "eval";
    case Verb::oracle: return "oracle";
    case Verb::export_plot: return "export-plot";
  }
  return "?";
}

}  // namespace

Command parse_invocation(const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError("no command given");

  Command cmd;
  size_t at = 0;
  if (args[0] == "--help" || args[0] == "-h") {
    cmd.help = true;
    return cmd;
  }
  cmd.verb = parse_verb(args[at++]);

  auto need_value = [&](const std::string& flag) -> const std::string& {
    if (at >= args.size()) throw UsageError("missing value after " + flag);
    return args[at++];
  };

  while (at < args.size()) {
    const std::string& arg = args[at++];
    if (arg == "--help" || arg == "-h") {
      cmd.help = true;
    } else if (arg == "--config") {
      cmd.config_path = need_value(arg);
    } else if (arg == "--set") {
      const std::string& kv = need_value(arg);
      const size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw UsageError("--set expects key=value, got '" + kv + "'");
      cmd.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    } else if (arg == "--seed") {
      cmd.overrides.emplace_back("seed", need_value(arg));
    } else if (arg == "--out") {
      cmd.out_dir = need_value(arg);
    } else {
      throw UsageError("unknown flag: '" + arg + "'");
    }
  }
  return cmd;
}

std::string usage_text() {
  return "usage: adcm <verb> [--config PATH] [--set KEY=VALUE]... [--seed N] [--out DIR] [--help]\n"
         "verbs:\n"
         "  train        run the alternating grid/parameter training loop\n"
         "  schedule     build one adaptive grid from a checkpoint (or fresh init)\n"
         "  sample       generate points from a checkpoint's ema weights\n"
         "  eval         distribution metrics and the chain-bound check\n"
         "  oracle       closed-form step vs brute-force minimization table\n"
         "  export-plot  render svg plots from existing csv outputs\n";
}

std::string help_text() {
  std::ostringstream out;
  out << usage_text() << "\nconfig keys (defaults shown; set via file or --set):\n";
  for (const auto& [key, value] : TrainConfig{}.resolved_entries())
    out << "  " << key << " = " << (value.empty() ? "(empty)" : value) << "\n";
  out << "\nenvironment: ADCM_THREADS overrides the threads key\n";
  return out.str();
}

namespace {

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  return buf;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TrainConfig resolve_config(const Command& cmd) {
  TrainConfig cfg = load_config(cmd.config_path, cmd.overrides);
  if (const char* env = std::getenv("ADCM_THREADS")) {
    try {
      cfg.threads = std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      throw ConfigError("ADCM_THREADS is not an integer");
    }
  }
  return cfg;
}

RunManifest start_manifest(const Command& cmd, const TrainConfig& cfg) {
  fs::create_directories(cmd.out_dir);
  RunManifest manifest((fs::path(cmd.out_dir) / "manifest.txt").string());
  manifest.kv("code_version", kVersionString);
  manifest.kv("verb", verb_name(cmd.verb));
  manifest.kv("started_at", timestamp());
  for (const auto& [key, value] : cfg.resolved_entries()) manifest.kv(key, value);
  return manifest;
}

// Sampler over the configured toy dataset. The normalization substream is
// forked from the seed so it does not perturb the training stream.
DataSampler dataset_sampler(const TrainConfig& cfg) {
  Rng probe(cfg.seed);
  ToyDataset ds = make_dataset(cfg.dataset_spec(), cfg.sigma_data, probe);
  return [ds](int n, Rng& rng) { return ds.sample(n, rng); };
}

TrainerState state_from_checkpoint_or_fresh(const TrainConfig& cfg) {
  if (!cfg.checkpoint.empty()) return checkpoint_load(cfg.checkpoint);
  return init_trainer(cfg);
}

ConsistencyModel ema_view(const TrainerState& state) {
  return {state.ema.shadow, state.model.precond, state.model.schedule};
}

int run_train(const Command& cmd, const TrainConfig& cfg) {
  RunManifest manifest = start_manifest(cmd, cfg);
  DataSampler draw = dataset_sampler(cfg);

  StepCallback log = [&](const TrainerState& state, const LossRecord& rec) {
    if (rec.step % 500 == 0 || rec.step + 1 == cfg.total_steps)
      std::fprintf(stderr, "step=%ld loss=%.6g lambda=%.6g grid_len=%zu\n", rec.step, rec.loss,
                   rec.lambda, state.grid.times.size());
  };
  TrainOutcome out = train_loop(cfg, draw, &manifest, cmd.out_dir, log);

  write_loss_csv((fs::path(cmd.out_dir) / "loss.csv").string(), out.history);
  write_schedule_csv((fs::path(cmd.out_dir) / "schedule.csv").string(), out.state.grid);
  manifest.kv("finished_at", timestamp());
  return ExitStatus::ok;
}

int run_schedule(const Command& cmd, const TrainConfig& cfg) {
  RunManifest manifest = start_manifest(cmd, cfg);
  TrainerState state = state_from_checkpoint_or_fresh(cfg);
  DataSampler draw = dataset_sampler(cfg);

  SegmentationGrid grid;
  if (cfg.baseline != "none") {
    grid = baseline_grid(cfg.baseline_schedule(),
                         cfg.baseline == "continuous" ? cfg.n_max : cfg.baseline_n,
                         state.model.schedule);
  } else {
    BatchSource source = [&](int n) { return draw(n, state.rng); };
    grid = build_grid(state.model, cfg.solver_config(cfg.lambda), source, state.rng, state.step);
  }
  write_schedule_csv((fs::path(cmd.out_dir) / "schedule.csv").string(), grid);
  std::fprintf(stderr, "grid_len=%zu lambda=%.6g clamp_low=%d clamp_high=%d negative_raw=%d\n",
               grid.times.size(), grid.lambda_used, grid.stats.clamped_low,
               grid.stats.clamped_high, grid.stats.negative_raw);
  manifest.kv("finished_at", timestamp());
  return ExitStatus::ok;
}

int run_sample(const Command& cmd, const TrainConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("sample needs checkpoint = <path>");
  RunManifest manifest = start_manifest(cmd, cfg);
  TrainerState state = checkpoint_load(cfg.checkpoint);
  Rng rng = Rng(cfg.seed).fork(0x73616d70);  // sampling substream
  GenerateResult gen = generate(ema_view(state), cfg.n_samples, cfg.gen_steps,
                                cfg.resolved_t_mid(), rng);
  write_samples_csv((fs::path(cmd.out_dir) / "samples.csv").string(), gen.samples, cfg.gen_steps);
  std::fprintf(stderr, "n_samples=%d nfe=%d model_evals=%llu\n", cfg.n_samples, cfg.gen_steps,
               static_cast<unsigned long long>(gen.model_evals));
  manifest.kv("finished_at", timestamp());
  return ExitStatus::ok;
}

int run_eval(const Command& cmd, const TrainConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval needs checkpoint = <path>");
  RunManifest manifest = start_manifest(cmd, cfg);
  TrainerState state = checkpoint_load(cfg.checkpoint);
  if (state.grid.times.size() < 2)
    throw ConfigError("checkpoint contains no grid; run train or schedule first");
  ConsistencyModel model = ema_view(state);

  Rng probe(cfg.seed);
  ToyDataset ds = make_dataset(cfg.dataset_spec(), cfg.sigma_data, probe);
  Rng rng = Rng(cfg.seed).fork(0x6576616c);  // eval substream

  GenerateResult gen = generate(model, cfg.n_samples, cfg.gen_steps, cfg.resolved_t_mid(), rng);
  Matrix reference = ds.sample(cfg.n_samples, rng);

  SampleReport report;
  report.n_samples = cfg.n_samples;
  report.nfe = cfg.gen_steps;
  report.seed = cfg.seed;
  report.w2_exact_value =
      cfg.n_samples <= 1024 ? w2_exact(gen.samples, reference)
                            : w2_sliced(gen.samples, reference, cfg.sliced_projections, rng);
  report.w2_sliced_value = w2_sliced(gen.samples, reference, cfg.sliced_projections, rng);

  Matrix x0 = ds.sample(cfg.eval_batch, rng);
  Matrix z = normal_matrix(rng, cfg.eval_batch, 2);
  ChainBoundReport chain = chain_bound_check(model, state.grid, x0, z);
  report.chain_bound_slack = chain.slack;

  std::ostringstream lines;
  lines << "n_samples=" << report.n_samples << "\n"
        << "nfe=" << report.nfe << "\n"
        << "w2_exact=" << fmt(report.w2_exact_value) << "\n"
        << "w2_sliced=" << fmt(report.w2_sliced_value) << "\n"
        << "chain_lhs=" << fmt(chain.lhs) << "\n"
        << "chain_rhs=" << fmt(chain.rhs) << "\n"
        << "chain_boundary_residual=" << fmt(chain.boundary_residual) << "\n"
        << "chain_slack=" << fmt(chain.slack) << "\n"
        << "chain_holds=" << (chain.holds ? 1 : 0) << "\n"
        << "seed=" << report.seed << "\n";
  std::fputs(lines.str().c_str(), stdout);

  std::ofstream csv((fs::path(cmd.out_dir) / "eval.csv").string());
  if (!csv) throw IoError("cannot write eval.csv");
  csv << "n_samples,nfe,w2_exact,w2_sliced,chain_lhs,chain_rhs,chain_boundary_residual,"
         "chain_slack,chain_holds,seed\n"
      << report.n_samples << "," << report.nfe << "," << fmt(report.w2_exact_value) << ","
      << fmt(report.w2_sliced_value) << "," << fmt(chain.lhs) << "," << fmt(chain.rhs) << ","
      << fmt(chain.boundary_residual) << "," << fmt(chain.slack) << "," << (chain.holds ? 1 : 0)
      << "," << report.seed << "\n";
  manifest.kv("finished_at", timestamp());
  return ExitStatus::ok;
}

int run_oracle(const Command& cmd, const TrainConfig& cfg) {
  RunManifest manifest = start_manifest(cmd, cfg);
  TrainerState state = state_from_checkpoint_or_fresh(cfg);
  const ConsistencyModel& model = state.model;
  DataSampler draw = dataset_sampler(cfg);
  Rng rng = Rng(cfg.seed).fork(0x6f72636c);

  std::vector<double> times;
  if (cfg.t >= 0.0) {
    times.push_back(cfg.t);
  } else {
    const double lo = 4.0 * model.schedule.t_min, hi = model.schedule.t_max;
    for (int i = 0; i < 8; ++i)
      times.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / 7.0));
  }

  std::ofstream csv((fs::path(cmd.out_dir) / "oracle.csv").string());
  if (!csv) throw IoError("cannot write oracle.csv");
  csv << "t,dt_gauss_newton,dt_oracle,abs_diff\n";
  std::printf("%14s %20s %20s %14s\n", "t", "dt_gauss_newton", "dt_oracle", "abs_diff");
  for (double t : times) {
    Matrix x0 = draw(cfg.grid_batch, rng);
    Matrix z = normal_matrix(rng, x0.rows(), x0.cols());
    const Matrix x_t = perturb(model.schedule, x0, z, t);
    const Matrix v = cm_tangent(model, x0, z, t);
    const Matrix r = cm_apply(model, x_t, t) - x0;
    const double raw = gauss_newton_raw_step(v, r, cfg.lambda);
    const double projected = std::clamp(raw, 0.0, t - model.schedule.t_min);
    const double reference = oracle_delta_t(model, x0, z, t, cfg.lambda, cfg.mesh);
    csv << fmt(t) << "," << fmt(projected) << "," << fmt(reference) << ","
        << fmt(std::abs(projected - reference)) << "\n";
    std::printf("%14.6g %20.10g %20.10g %14.6g\n", t, projected, reference,
                std::abs(projected - reference));
  }
  manifest.kv("finished_at", timestamp());
  return ExitStatus::ok;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw IoError("empty csv: " + path);
  return rows;
}

int run_export_plot(const Command& cmd, const TrainConfig&) {
  const fs::path dir(cmd.out_dir);
  bool any = false;
  if (fs::exists(dir / "schedule.csv")) {
    auto rows = read_csv((dir / "schedule.csv").string());
    std::vector<double> ts, dts;
    for (size_t i = 1; i < rows.size(); ++i) {
      ts.push_back(std::stod(rows[i][1]));
      dts.push_back(std::stod(rows[i][2]));
    }
    write_line_svg((dir / "schedule.svg").string(), ts, dts, "segment width over time", "t", "dt");
    any = true;
  }
  if (fs::exists(dir / "loss.csv")) {
    auto rows = read_csv((dir / "loss.csv").string());
    std::vector<double> steps, losses;
    for (size_t i = 1; i < rows.size(); ++i) {
      steps.push_back(std::stod(rows[i][0]));
      losses.push_back(std::stod(rows[i][1]));
    }
    write_line_svg((dir / "loss.svg").string(), steps, losses, "training loss", "step", "loss");
    any = true;
  }
  if (fs::exists(dir / "samples.csv")) {
    auto rows = read_csv((dir / "samples.csv").string());
    Matrix pts(static_cast<Eigen::Index>(rows.size()) - 1, 2);
    for (size_t i = 1; i < rows.size(); ++i) {
      pts(static_cast<Eigen::Index>(i) - 1, 0) = std::stod(rows[i][0]);
      pts(static_cast<Eigen::Index>(i) - 1, 1) = std::stod(rows[i][1]);
    }
    write_scatter_svg((dir / "samples.svg").string(), pts, "generated samples");
    any = true;
  }
  if (!any) throw IoError("no csv files found in " + cmd.out_dir);
  return ExitStatus::ok;
}

std::set<std::string> snapshot_dir(const std::string& dir) {
  std::set<std::string> names;
  if (!fs::exists(dir)) return names;
  for (const auto& entry : fs::directory_iterator(dir)) names.insert(entry.path().string());
  return names;
}

// Remove outputs created by a failed run; the manifest stays for forensics.
void remove_new_outputs(const std::string& dir, const std::set<std::string>& before) {
  if (!fs::exists(dir)) return;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string path = entry.path().string();
    if (before.count(path)) continue;
    if (entry.path().filename() == "manifest.txt") continue;
    std::error_code ec;
    fs::remove_all(entry.path(), ec);
  }
}

}  // namespace

int run_command(const Command& cmd) {
  const std::set<std::string> before = snapshot_dir(cmd.out_dir);
  try {
    const TrainConfig cfg = resolve_config(cmd);
    switch (cmd.verb) {
      case Verb::train: return run_train(cmd, cfg);
      case Verb::schedule: return run_schedule(cmd, cfg);
      case Verb::sample: return run_sample(cmd, cfg);
      case Verb::eval: return run_eval(cmd, cfg);
      case Verb::oracle: return run_oracle(cmd, cfg);
      case Verb::export_plot: return run_export_plot(cmd, cfg);
    }
    return ExitStatus::runtime;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    remove_new_outputs(cmd.out_dir, before);
    return ExitStatus::config;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    remove_new_outputs(cmd.out_dir, before);
    return ExitStatus::io;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    remove_new_outputs(cmd.out_dir, before);
    return ExitStatus::runtime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    remove_new_outputs(cmd.out_dir, before);
    return ExitStatus::runtime;
  }
}

}  // namespace adcm
