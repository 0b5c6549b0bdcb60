#pragma once

#include "adcm/consistency.hpp"
#include "adcm/rng.hpp"
#include "adcm/types.hpp"

#include <functional>
#include <vector>

namespace adcm {

// Time segmentation produced by the adaptive solver, stored ascending with
// exact endpoints t_min and t_max.
struct SegmentationGrid {
  std::vector<double> times;
  long built_at_step = 0;
  double lambda_used = 0.0;

  struct BuildStats {
    int clamped_low = 0;
    int clamped_high = 0;
    int negative_raw = 0;
  } stats;

  int segments() const { return static_cast<int>(times.size()) - 1; }
};

struct SolverConfig {
  double lambda = 0.01;
  // Each step is clamped to [dt_min_frac, dt_max_frac] * (t_max - t_min),
  // which bounds the grid length and guarantees termination.
  double dt_min_frac = 1.0 / 256.0;
  double dt_max_frac = 0.25;
  int batch_size = 256;
  int n_max = 1024;
};

// Unclamped closed-form step lambda/(1+lambda) * mean(v.r) / mean(v.v) from
// per-sample rows of the trajectory tangent v and the residual r.
// Throws NumericError when mean(v.v) vanishes (degenerate model).
double gauss_newton_raw_step(const Matrix& v, const Matrix& r, double lambda);

struct StepInfo {
  double raw;      // closed-form value before clamping
  double clamped;  // value actually used by the simulation loop
  bool at_floor = false;
  bool at_ceiling = false;
};

// One adaptive step at time t for a fresh batch (x0, z).
StepInfo delta_t_star(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t,
                      const SolverConfig& cfg);

// Brute-force reference: evaluates the relaxed objective
//   mean |f(x_t) - f(x_{t-dt})|^2 + lambda * mean |f(x_{t-dt}) - x0|^2
// with the exact (non-linearized) model on a uniform mesh over [0, t - t_min]
// and returns the argmin. Independent of the Gauss-Newton path.
double oracle_delta_t(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t,
                      double lambda, int mesh_size);

// Objective value at one candidate step, shared by the oracle and diagnostics.
double relaxed_objective(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t,
                         double dt, double lambda);

using BatchSource = std::function<Matrix(int)>;  // n -> x0 batch [n x dim]

// Simulation loop from t_max down to t_min, one fresh mini-batch per step.
SegmentationGrid build_grid(const ConsistencyModel& m, const SolverConfig& cfg,
                            const BatchSource& data, Rng& rng, long built_at_step = 0);

enum class BaselineKind { uniform, exponential, continuous_limit };

struct BaselineSchedule {
  BaselineKind kind = BaselineKind::uniform;
  double rho = 7.0;  // exponential only
};

// Fixed reference grids with n segments. continuous_limit is a uniform grid
// whose n the caller sets to the configured n_max.
SegmentationGrid baseline_grid(const BaselineSchedule& kind, int n, const NoiseSchedule& s);

}  // namespace adcm
