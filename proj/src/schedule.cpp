#include "adcm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace adcm {

NoiseSchedule make_schedule(ScheduleKind kind) {
  NoiseSchedule s;
  s.kind = kind;
  if (kind == ScheduleKind::ve) {
    s.t_min = 0.002;
    s.t_max = 80.0;
  } else {
    // keep alpha > 0 so snr stays finite inside the training range
    s.t_min = 1e-3;
    s.t_max = 1.0 - 1e-3;
  }
  return s;
}

namespace {

void check_time(const NoiseSchedule& s, double t) {
  if (!(t >= s.t_min && t <= s.t_max))
    throw DomainError("time " + std::to_string(t) + " outside [" + std::to_string(s.t_min) + ", " +
                      std::to_string(s.t_max) + "]");
}

}  // namespace

ScheduleValues schedule_eval(const NoiseSchedule& s, double t) {
  check_time(s, t);
  switch (s.kind) {
    case ScheduleKind::ve:
      return {1.0, t, 0.0, 1.0};
    case ScheduleKind::flow_matching:
      return {1.0 - t, t, -1.0, 1.0};
  }
  throw Error("unknown schedule kind");
}

double snr(const NoiseSchedule& s, double t) {
  ScheduleValues v = schedule_eval(s, t);
  if (v.alpha == 0.0) throw DomainError("snr undefined at alpha = 0");
  return v.beta / v.alpha;
}

double snr_to_time(const NoiseSchedule& s, double snr_value) {
  switch (s.kind) {
    case ScheduleKind::ve:
      return snr_value;  // beta / alpha = t
    case ScheduleKind::flow_matching:
      return snr_value / (1.0 + snr_value);  // t / (1 - t) = s
  }
  throw Error("unknown schedule kind");
}

Matrix perturb(const NoiseSchedule& s, const Matrix& x0, const Matrix& z, double t) {
  require_same_shape(x0, z, "perturb");
  ScheduleValues v = schedule_eval(s, t);
  return v.alpha * x0 + v.beta * z;
}

Matrix time_tangent(const NoiseSchedule& s, const Matrix& x0, const Matrix& z, double t) {
  require_same_shape(x0, z, "time_tangent");
  ScheduleValues v = schedule_eval(s, t);
  return v.dalpha * x0 + v.dbeta * z;
}

PrecondCoeffs precond_coeffs(const Preconditioner& p, double t) {
  switch (p.kind) {
    case PrecondKind::edm: {
      if (t <= 0.0) throw DomainError("edm preconditioner needs t > 0");
      const double s2 = p.sigma_data * p.sigma_data;
      const double denom = s2 + t * t;
      return {s2 / denom, p.sigma_data * t / std::sqrt(denom), 1.0 / std::sqrt(denom),
              0.25 * std::log(t)};
    }
    case PrecondKind::rectified_flow:
      return {1.0, -t, 1.0, t};
    case PrecondKind::identity:
      return {0.0, 1.0, 1.0, t};
  }
  throw Error("unknown preconditioner kind");
}

PrecondCoeffs precond_coeffs_dot(const Preconditioner& p, double t) {
  switch (p.kind) {
    case PrecondKind::edm: {
      if (t <= 0.0) throw DomainError("edm preconditioner needs t > 0");
      const double s2 = p.sigma_data * p.sigma_data;
      const double denom = s2 + t * t;
      const double denom32 = denom * std::sqrt(denom);
      return {-2.0 * s2 * t / (denom * denom), p.sigma_data * s2 / denom32, -t / denom32,
              0.25 / t};
    }
    case PrecondKind::rectified_flow:
      return {0.0, -1.0, 0.0, 1.0};
    case PrecondKind::identity:
      return {0.0, 0.0, 0.0, 1.0};
  }
  throw Error("unknown preconditioner kind");
}

namespace {

// Nearest grid index to time t, restricted to {1, ..., N}.
int snap_index(std::span<const double> times, double t) {
  const int n = static_cast<int>(times.size());
  auto it = std::lower_bound(times.begin(), times.end(), t);
  int hi = static_cast<int>(it - times.begin());
  int best;
  if (hi <= 0)
    best = 0;
  else if (hi >= n)
    best = n - 1;
  else
    best = (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
  return std::max(best, 1);
}

}  // namespace

TimePair sample_time_pair(const TimeSampler& sampler, std::span<const double> grid_times,
                          const NoiseSchedule& s, Rng& rng) {
  if (grid_times.size() < 2) throw DomainError("sample_time_pair: grid needs at least 2 points");
  int idx;
  if (sampler.kind == TimeSamplerKind::uniform_grid) {
    idx = 1 + static_cast<int>(rng.uniform_int(grid_times.size() - 1));
  } else {
    if (sampler.p_std <= 0.0) throw DomainError("lognormal sampler needs p_std > 0");
    const double log_snr = sampler.p_mean + sampler.p_std * rng.normal();
    const double t = snr_to_time(s, std::exp(log_snr));
    idx = snap_index(grid_times, t);
  }
  return {grid_times[idx], grid_times[idx - 1], idx};
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

std::vector<double> lognormal_cell_masses(const TimeSampler& sampler,
                                          std::span<const double> grid_times,
                                          const NoiseSchedule& s) {
  if (grid_times.size() < 2) throw DomainError("lognormal_cell_masses: grid needs >= 2 points");
  const int n = static_cast<int>(grid_times.size());
  std::vector<double> masses(n - 1, 0.0);
  auto log_snr_at = [&](double t) { return std::log(snr(s, t)); };
  // Snap cell of index i (>= 1) spans the midpoints towards its neighbours;
  // index 1 also absorbs everything below (the index-0 clamp), index N
  // everything above.
  for (int i = 1; i < n; ++i) {
    double lo_t = (i == 1) ? -1.0 : 0.5 * (grid_times[i - 1] + grid_times[i]);
    double hi_t = (i == n - 1) ? -1.0 : 0.5 * (grid_times[i] + grid_times[i + 1]);
    double zlo = (lo_t < 0.0) ? -1e30 : (log_snr_at(lo_t) - sampler.p_mean) / sampler.p_std;
    double zhi = (hi_t < 0.0) ? 1e30 : (log_snr_at(hi_t) - sampler.p_mean) / sampler.p_std;
    masses[i - 1] = normal_cdf(zhi) - normal_cdf(zlo);
  }
  return masses;
}

}  // namespace adcm
