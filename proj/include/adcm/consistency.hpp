#pragma once

#include "adcm/numerics.hpp"
#include "adcm/schedule.hpp"
#include "adcm/types.hpp"

namespace adcm {

// f(x_t, t) = c_skip(t) x_t + c_out(t) F(c_in(t) x_t, c_noise(t)), batched
// over rows. The network input is the data coordinates with the scalar
// c_noise value appended as one extra channel.
struct ConsistencyModel {
  MlpParams params;
  Preconditioner precond;
  NoiseSchedule schedule;

  Eigen::Index data_dim() const { return params.input_width() - 1; }
};

Matrix cm_apply(const ConsistencyModel& m, const Matrix& x_t, double t);

// Total time derivative of t -> f(x_t(t), t) along the fixed-(x0, z)
// trajectory, in one forward-mode pass: the joint tangent (dx_t/dt, 1) runs
// through the data and time channels, and the preconditioner coefficients
// contribute their own time derivatives.
Matrix cm_tangent(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t);

enum class MetricKind { pseudo_huber, l2, squared_l2 };

struct DistanceMetric {
  MetricKind kind = MetricKind::pseudo_huber;
  double c = 0.03;  // pseudo_huber only; c = 0 coincides with l2
};

// Per-sample distances for batched inputs.
Vector distance(const DistanceMetric& d, const Matrix& x, const Matrix& y);

enum class WeightingMode { adaptive, constant, inv_gap, inv_time };

struct WeightingConfig {
  WeightingMode mode = WeightingMode::adaptive;
  double floor = 1e-8;
};

// Per-sample loss weights. Adaptive mode is 1 / max(d(teacher_out, x0), floor);
// the other modes ignore the sample values.
Vector sample_weights(const WeightingConfig& w, const DistanceMetric& d, const Matrix& teacher_out,
                      const Matrix& x0, double t_hi, double t_lo);

// Single-sample convenience over sample_weights.
double adaptive_weight(const WeightingConfig& w, const DistanceMetric& d, const Vector& teacher_out,
                       const Vector& x0, double t_hi, double t_lo);

struct LossResult {
  double loss;
  MlpGrads grads;  // gradients w.r.t. the student parameters only
};

// Weighted consistency loss between adjacent trajectory points t_hi > t_lo,
// sharing (x0, z) across both times. The teacher branch is a constant
// (stop-gradient); per-sample ratios are averaged over the batch.
LossResult adcm_loss(const ConsistencyModel& student, const ConsistencyModel& teacher,
                     const DistanceMetric& d, const WeightingConfig& w, const Matrix& x0,
                     const Matrix& z, double t_hi, double t_lo);

// Loss value only, used by finite-difference oracles.
double adcm_loss_value(const ConsistencyModel& student, const ConsistencyModel& teacher,
                       const DistanceMetric& d, const WeightingConfig& w, const Matrix& x0,
                       const Matrix& z, double t_hi, double t_lo);

}  // namespace adcm
