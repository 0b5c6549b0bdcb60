#include "adcm/consistency.hpp"

#include <cmath>

namespace adcm {

namespace {

Matrix with_time_channel(const Matrix& x, double time_value) {
  Matrix input(x.rows(), x.cols() + 1);
  input.leftCols(x.cols()) = x;
  input.col(x.cols()).setConstant(time_value);
  return input;
}

void check_data_width(const ConsistencyModel& m, const Matrix& x) {
  if (x.cols() != m.data_dim())
    throw DimensionError("consistency model expects " + std::to_string(m.data_dim()) +
                         " data columns, got " + std::to_string(x.cols()));
}

}  // namespace

Matrix cm_apply(const ConsistencyModel& m, const Matrix& x_t, double t) {
  check_data_width(m, x_t);
  PrecondCoeffs c = precond_coeffs(m.precond, t);
  Matrix f = mlp_forward(m.params, with_time_channel(c.c_in * x_t, c.c_noise));
  return c.c_skip * x_t + c.c_out * f;
}

Matrix cm_tangent(const ConsistencyModel& m, const Matrix& x0, const Matrix& z, double t) {
  check_data_width(m, x0);
  require_same_shape(x0, z, "cm_tangent");
  const Matrix x_t = perturb(m.schedule, x0, z, t);
  const Matrix dx_t = time_tangent(m.schedule, x0, z, t);
  const PrecondCoeffs c = precond_coeffs(m.precond, t);
  const PrecondCoeffs dc = precond_coeffs_dot(m.precond, t);

  DualMatrix input;
  input.primal = with_time_channel(c.c_in * x_t, c.c_noise);
  input.tangent = with_time_channel(dc.c_in * x_t + c.c_in * dx_t, dc.c_noise);
  DualMatrix f = mlp_jvp(m.params, input);

  return dc.c_skip * x_t + c.c_skip * dx_t + dc.c_out * f.primal + c.c_out * f.tangent;
}

namespace {

Vector gap_norms(const Matrix& x, const Matrix& y) {
  require_same_shape(x, y, "distance");
  return (x - y).rowwise().norm();
}

}  // namespace

Vector distance(const DistanceMetric& d, const Matrix& x, const Matrix& y) {
  if (d.c < 0.0) throw DomainError("distance: c must be >= 0");
  Vector g = gap_norms(x, y);
  switch (d.kind) {
    case MetricKind::l2:
      return g;
    case MetricKind::squared_l2:
      return g.array().square().matrix();
    case MetricKind::pseudo_huber: {
      if (d.c == 0.0) return g;  // coincides with l2
      // sqrt(g^2 + c^2) - c in the cancellation-free form; exact zero at g = 0
      // and full precision in the g << c regime the adaptive denominator hits.
      auto ga = g.array();
      return (ga.square() / ((ga.square() + d.c * d.c).sqrt() + d.c)).matrix();
    }
  }
  throw Error("unknown metric kind");
}

Vector sample_weights(const WeightingConfig& w, const DistanceMetric& d, const Matrix& teacher_out,
                      const Matrix& x0, double t_hi, double t_lo) {
  require_same_shape(teacher_out, x0, "sample_weights");
  const Eigen::Index n = teacher_out.rows();
  switch (w.mode) {
    case WeightingMode::constant:
      return Vector::Ones(n);
    case WeightingMode::inv_gap:
      if (t_hi == t_lo) throw DomainError("inv_gap weighting: t_hi == t_lo");
      return Vector::Constant(n, 1.0 / (t_hi - t_lo));
    case WeightingMode::inv_time:
      return Vector::Constant(n, 1.0 / t_hi);
    case WeightingMode::adaptive: {
      if (w.floor <= 0.0) throw DomainError("adaptive weighting needs floor > 0");
      Vector den = distance(d, teacher_out, x0);
      return (1.0 / den.array().max(w.floor)).matrix();
    }
  }
  throw Error("unknown weighting mode");
}

double adaptive_weight(const WeightingConfig& w, const DistanceMetric& d, const Vector& teacher_out,
                       const Vector& x0, double t_hi, double t_lo) {
  return sample_weights(w, d, teacher_out.transpose(), x0.transpose(), t_hi, t_lo)(0);
}

namespace {

// d/dx of the per-sample metric d(x, y), as a batch of row gradients.
Matrix metric_grad_x(const DistanceMetric& d, const Matrix& x, const Matrix& y) {
  Matrix diff = x - y;
  Vector g = diff.rowwise().norm();
  switch (d.kind) {
    case MetricKind::squared_l2:
      return 2.0 * diff;
    case MetricKind::l2: {
      Vector denom = g.array().max(1e-300).matrix();
      return diff.array().colwise() / denom.array();
    }
    case MetricKind::pseudo_huber: {
      Vector denom = (g.array().square() + d.c * d.c).sqrt().max(1e-300).matrix();
      return diff.array().colwise() / denom.array();
    }
  }
  throw Error("unknown metric kind");
}

struct LossForward {
  double loss;
  Matrix cot_f_student;  // d loss / d f_student, per sample row
  double t_hi;
};

LossForward loss_forward(const ConsistencyModel& student, const ConsistencyModel& teacher,
                         const DistanceMetric& d, const WeightingConfig& w, const Matrix& x0,
                         const Matrix& z, double t_hi, double t_lo) {
  if (t_hi < t_lo) throw DomainError("adcm_loss: t_hi < t_lo");
  const Matrix x_hi = perturb(student.schedule, x0, z, t_hi);
  const Matrix x_lo = perturb(teacher.schedule, x0, z, t_lo);
  const Matrix f_student = cm_apply(student, x_hi, t_hi);
  const Matrix f_teacher = cm_apply(teacher, x_lo, t_lo);

  const Vector weights = sample_weights(w, d, f_teacher, x0, t_hi, t_lo);
  const Vector num = distance(d, f_student, f_teacher);
  const double n = static_cast<double>(x0.rows());

  LossForward out;
  out.loss = (weights.array() * num.array()).sum() / n;
  Matrix dnum = metric_grad_x(d, f_student, f_teacher);
  out.cot_f_student = (dnum.array().colwise() * (weights.array() / n)).matrix();
  out.t_hi = t_hi;
  return out;
}

}  // namespace

LossResult adcm_loss(const ConsistencyModel& student, const ConsistencyModel& teacher,
                     const DistanceMetric& d, const WeightingConfig& w, const Matrix& x0,
                     const Matrix& z, double t_hi, double t_lo) {
  LossForward fwd = loss_forward(student, teacher, d, w, x0, z, t_hi, t_lo);

  // Backprop through f = c_skip x + c_out F(...): only the network term
  // carries parameters.
  const PrecondCoeffs c = precond_coeffs(student.precond, t_hi);
  const Matrix x_hi = perturb(student.schedule, x0, z, t_hi);
  Matrix net_input(x_hi.rows(), x_hi.cols() + 1);
  net_input.leftCols(x_hi.cols()) = c.c_in * x_hi;
  net_input.col(x_hi.cols()).setConstant(c.c_noise);
  MlpBackward back = mlp_grad(student.params, net_input, c.c_out * fwd.cot_f_student);

  return {fwd.loss, std::move(back.grads)};
}

double adcm_loss_value(const ConsistencyModel& student, const ConsistencyModel& teacher,
                       const DistanceMetric& d, const WeightingConfig& w, const Matrix& x0,
                       const Matrix& z, double t_hi, double t_lo) {
  return loss_forward(student, teacher, d, w, x0, z, t_hi, t_lo).loss;
}

}  // namespace adcm
