#include "adcm/discretizer.hpp"

#include <algorithm>
#include <cmath>

namespace adcm {

double gauss_newton_raw_step(const Matrix& v, const Matrix& r, double lambda) {
  require_same_shape(v, r, "gauss_newton_raw_step");
  if (lambda < 0.0) throw DomainError("lambda must be >= 0");
  const double mean_vv = v.array().square().rowwise().sum().mean();
  if (mean_vv <= 0.0) throw NumericError("degenerate model: mean(v.v) = 0");
  const double mean_vr = (v.array() * r.array()).rowwise().sum().mean();
  return lambda / (1.0 + lambda) * mean_vr / mean_vv;
}

StepInfo delta_t_star(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t,
                      const SolverConfig& cfg) {
  if (x0.rows() == 0) throw DomainError("delta_t_star: empty batch");
  const double t_min = m.schedule.t_min, t_max = m.schedule.t_max;
  if (!(t > t_min && t <= t_max)) throw DomainError("delta_t_star: t outside (t_min, t_max]");

  const Matrix x_t = perturb(m.schedule, x0, z, t);
  const Matrix v = cm_tangent(m, x0, z, t);
  const Matrix r = cm_apply(m, x_t, t) - x0;

  StepInfo info;
  info.raw = gauss_newton_raw_step(v, r, cfg.lambda);

  const double span = t_max - t_min;
  const double lo = cfg.dt_min_frac * span;
  const double hi = std::min(cfg.dt_max_frac * span, t - t_min);
  info.clamped = info.raw;
  if (info.clamped < lo) {
    info.clamped = lo;
    info.at_floor = true;
  } else if (info.clamped > hi) {
    info.clamped = hi;
    info.at_ceiling = true;
  }
  return info;
}

namespace {

double objective_at(const ConsistencyModel& m, const Matrix& f_t, const Matrix& x0,
                    const Matrix& z, double t_lo, double lambda) {
  const Matrix f_lo = cm_apply(m, perturb(m.schedule, x0, z, t_lo), t_lo);
  const double local = (f_t - f_lo).array().square().rowwise().sum().mean();
  const double global = (f_lo - x0).array().square().rowwise().sum().mean();
  return local + lambda * global;
}

}  // namespace

double relaxed_objective(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t,
                         double dt, double lambda) {
  const Matrix f_t = cm_apply(m, perturb(m.schedule, x0, z, t), t);
  // guard the lower endpoint against rounding of t - dt
  const double t_lo = std::max(t - dt, m.schedule.t_min);
  return objective_at(m, f_t, x0, z, t_lo, lambda);
}

double oracle_delta_t(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t,
                      double lambda, int mesh_size) {
  if (mesh_size < 2) throw DomainError("oracle_delta_t: mesh_size must be >= 2");
  const double t_min = m.schedule.t_min;
  const Matrix f_t = cm_apply(m, perturb(m.schedule, x0, z, t), t);
  // Uniform mesh in dt over [0, t - t_min], walked in t_lo space so both
  // endpoints are hit exactly.
  double best_dt = 0.0;
  double best_obj = std::numeric_limits<double>::infinity();
  for (int j = 0; j < mesh_size; ++j) {
    const double frac = static_cast<double>(j) / (mesh_size - 1);
    const double t_lo = (j == mesh_size - 1) ? t_min : t + (t_min - t) * frac;
    const double obj = objective_at(m, f_t, x0, z, t_lo, lambda);
    if (obj < best_obj) {
      best_obj = obj;
      best_dt = t - t_lo;
    }
  }
  return best_dt;
}

SegmentationGrid build_grid(const ConsistencyModel& m, const SolverConfig& cfg,
                            const BatchSource& data, Rng& rng, long built_at_step) {
  if (cfg.dt_min_frac <= 0.0 || cfg.dt_min_frac > cfg.dt_max_frac || cfg.dt_max_frac > 1.0)
    throw ConfigError("build_grid: need 0 < dt_min_frac <= dt_max_frac <= 1");
  if (cfg.batch_size < 1) throw ConfigError("build_grid: batch_size must be >= 1");

  const double t_min = m.schedule.t_min, t_max = m.schedule.t_max;
  // Anything this close to t_min is the endpoint; keeps the final segment
  // from degenerating to rounding noise.
  const double eps_snap = 1e-12 * (t_max - t_min);

  SegmentationGrid grid;
  grid.built_at_step = built_at_step;
  grid.lambda_used = cfg.lambda;

  std::vector<double> descending;
  double t = t_max;
  while (t > t_min + eps_snap) {
    descending.push_back(t);
    if (static_cast<int>(descending.size()) + 1 > cfg.n_max)
      throw ConfigError("build_grid: grid would exceed n_max = " + std::to_string(cfg.n_max));
    Matrix x0 = data(cfg.batch_size);
    Matrix z = normal_matrix(rng, x0.rows(), x0.cols());
    StepInfo step = delta_t_star(m, x0, z, t, cfg);
    if (step.raw < 0.0) grid.stats.negative_raw++;
    if (step.at_floor) grid.stats.clamped_low++;
    if (step.at_ceiling) grid.stats.clamped_high++;
    t -= step.clamped;
  }
  descending.push_back(t_min);

  grid.times.assign(descending.rbegin(), descending.rend());
  return grid;
}

SegmentationGrid baseline_grid(const BaselineSchedule& kind, int n, const NoiseSchedule& s) {
  if (n < 1) throw ConfigError("baseline_grid: n must be >= 1");
  if (kind.kind == BaselineKind::exponential && kind.rho <= 0.0)
    throw ConfigError("baseline_grid: rho must be > 0");

  SegmentationGrid grid;
  grid.times.resize(n + 1);
  const double lo = s.t_min, hi = s.t_max;
  switch (kind.kind) {
    case BaselineKind::uniform:
    case BaselineKind::continuous_limit:
      for (int i = 0; i <= n; ++i) grid.times[i] = lo + (hi - lo) * i / n;
      break;
    case BaselineKind::exponential: {
      const double inv = 1.0 / kind.rho;
      const double a = std::pow(lo, inv), b = std::pow(hi, inv);
      for (int i = 0; i <= n; ++i)
        grid.times[i] = std::pow(a + (b - a) * static_cast<double>(i) / n, kind.rho);
      break;
    }
  }
  // pin the endpoints exactly
  grid.times.front() = lo;
  grid.times.back() = hi;
  return grid;
}

}  // namespace adcm
