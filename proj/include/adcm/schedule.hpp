#pragma once

#include "adcm/rng.hpp"
#include "adcm/types.hpp"

#include <span>

namespace adcm {

// Two diffusion processes x_t = alpha_t x0 + beta_t z:
//   ve:   alpha = 1,     beta = t   on [t_min, t_max], t_min > 0
//   fm:   alpha = 1 - t, beta = t   on [t_min, t_max] within [0, 1]
enum class ScheduleKind { ve, flow_matching };

struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::ve;
  double t_min = 0.002;
  double t_max = 80.0;
};

NoiseSchedule make_schedule(ScheduleKind kind);

struct ScheduleValues {
  double alpha, beta, dalpha, dbeta;
};

ScheduleValues schedule_eval(const NoiseSchedule& s, double t);

// beta_t / alpha_t.
double snr(const NoiseSchedule& s, double t);
// Inverse of snr (closed form for both schedules).
double snr_to_time(const NoiseSchedule& s, double snr_value);

Matrix perturb(const NoiseSchedule& s, const Matrix& x0, const Matrix& z, double t);
// d x_t / dt at fixed (x0, z).
Matrix time_tangent(const NoiseSchedule& s, const Matrix& x0, const Matrix& z, double t);

// Preconditioning f(x, t) = c_skip x + c_out F(c_in x, c_noise).
// `identity` (c_skip=0, c_out=1, c_in=1, c_noise=t) exposes the raw network;
// it exists for solver oracles built on affine models.
enum class PrecondKind { edm, rectified_flow, identity };

struct Preconditioner {
  PrecondKind kind = PrecondKind::edm;
  double sigma_data = 0.5;
};

struct PrecondCoeffs {
  double c_skip, c_out, c_in, c_noise;
};

PrecondCoeffs precond_coeffs(const Preconditioner& p, double t);
// Time derivatives of the four coefficients, needed for trajectory tangents.
PrecondCoeffs precond_coeffs_dot(const Preconditioner& p, double t);

enum class TimeSamplerKind { lognormal_snr, uniform_grid };

struct TimeSampler {
  TimeSamplerKind kind = TimeSamplerKind::lognormal_snr;
  double p_mean = -1.1;
  double p_std = 2.0;
};

struct TimePair {
  double t_hi, t_lo;
  int index;  // position of t_hi in the grid, always >= 1
};

// Draws an adjacent pair from an ascending grid. Lognormal mode draws
// log snr ~ N(p_mean, p_std^2), inverts to a time and snaps to the nearest
// grid index >= 1; uniform mode draws the index uniformly from {1, ..., N}.
TimePair sample_time_pair(const TimeSampler& sampler, std::span<const double> grid_times,
                          const NoiseSchedule& s, Rng& rng);

// Probability that the lognormal draw snaps to each grid index (1..N).
// This is the analytic law behind sample_time_pair's lognormal mode.
std::vector<double> lognormal_cell_masses(const TimeSampler& sampler,
                                          std::span<const double> grid_times,
                                          const NoiseSchedule& s);

}  // namespace adcm
