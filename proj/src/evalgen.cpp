#include "adcm/evalgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

namespace adcm {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

Eigen::Vector2d raw_draw(const DatasetSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case DatasetKind::gauss_mixture: {
      const int k = static_cast<int>(rng.uniform_int(spec.components));
      const double angle = kTwoPi * k / spec.components;
      const double cx = spec.components == 1 ? 0.0 : spec.mixture_radius * std::cos(angle);
      const double cy = spec.components == 1 ? 0.0 : spec.mixture_radius * std::sin(angle);
      return {cx + spec.mixture_scale * rng.normal(), cy + spec.mixture_scale * rng.normal()};
    }
    case DatasetKind::ring: {
      const double angle = kTwoPi * rng.uniform();
      const double radius = spec.ring_radius + spec.ring_scale * rng.normal();
      return {radius * std::cos(angle), radius * std::sin(angle)};
    }
    case DatasetKind::checkerboard: {
      // alternating unit cells on [-2, 2]^2
      while (true) {
        const double x = -2.0 + 4.0 * rng.uniform();
        const double y = -2.0 + 4.0 * rng.uniform();
        const long cx = static_cast<long>(std::floor(x));
        const long cy = static_cast<long>(std::floor(y));
        if (((cx + cy) & 1L) == 0) return {x, y};
      }
    }
  }
  throw Error("unknown dataset kind");
}

}  // namespace

Matrix ToyDataset::sample_raw(int n, Rng& rng) const {
  Matrix out(n, 2);
  for (int i = 0; i < n; ++i) out.row(i) = raw_draw(spec, rng).transpose();
  return out;
}

Matrix ToyDataset::sample(int n, Rng& rng) const {
  Matrix out = sample_raw(n, rng);
  out.rowwise() -= shift.transpose();
  return scale * out;
}

ToyDataset make_dataset(const DatasetSpec& spec, double sigma_data, Rng& rng) {
  if (spec.kind == DatasetKind::gauss_mixture && spec.components < 1)
    throw ConfigError("make_dataset: components must be >= 1");
  if (sigma_data <= 0.0) throw ConfigError("make_dataset: sigma_data must be > 0");

  ToyDataset ds;
  ds.spec = spec;
  ds.sigma_data = sigma_data;

  Rng norm_rng = rng.fork(0x6e6f726d);  // dedicated normalization substream
  const int n = 65536;
  Matrix probe = ds.sample_raw(n, norm_rng);
  ds.shift = probe.colwise().mean().transpose();
  Matrix centered = probe.rowwise() - ds.shift.transpose();
  const double pooled_var = centered.array().square().sum() / (2.0 * n);
  ds.scale = sigma_data / std::sqrt(pooled_var);
  return ds;
}

GenerateResult generate(const ConsistencyModel& m, int n, int steps, double t_mid, Rng& rng) {
  if (steps != 1 && steps != 2) throw DomainError("generate: steps must be 1 or 2");
  const NoiseSchedule& s = m.schedule;
  if (steps == 2 && !(t_mid > s.t_min && t_mid < s.t_max))
    throw DomainError("generate: t_mid must lie strictly inside (t_min, t_max)");

  GenerateResult out;
  const Eigen::Index d = m.data_dim();
  const ScheduleValues top = schedule_eval(s, s.t_max);
  Matrix x = top.beta * normal_matrix(rng, n, d);  // zero prior mean
  Matrix y = cm_apply(m, x, s.t_max);
  out.model_evals += n;

  if (steps == 2) {
    const ScheduleValues mid = schedule_eval(s, t_mid);
    Matrix z2 = normal_matrix(rng, n, d);
    Matrix x2 = mid.alpha * y + mid.beta * z2;
    y = cm_apply(m, x2, t_mid);
    out.model_evals += n;
  }
  out.samples = std::move(y);
  return out;
}

double w2_exact(const Matrix& a, const Matrix& b) {
  const int n = static_cast<int>(a.rows());
  if (b.rows() != n) throw DimensionError("w2_exact: point sets must have equal size");
  if (n == 0) throw DimensionError("w2_exact: empty point sets");
  if (n > 1024) throw DomainError("w2_exact: capped at 1024 points, use w2_sliced");
  if (a.cols() != b.cols()) throw DimensionError("w2_exact: dimension mismatch");

  // cost(i, j) = |a_i - b_j|^2
  Matrix cost(n, n);
  for (int i = 0; i < n; ++i)
    cost.row(i) = (b.rowwise() - a.row(i)).rowwise().squaredNorm().transpose();

  // Hungarian algorithm with potentials, O(n^3).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0);  // match[j]: row assigned to column j (1-based)
  std::vector<int> way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(match[j] - 1, j - 1);
  return std::sqrt(total / n);
}

namespace {

double w2_1d_sorted(std::vector<double>& pa, std::vector<double>& pb) {
  std::sort(pa.begin(), pa.end());
  std::sort(pb.begin(), pb.end());
  double acc = 0.0;
  for (size_t i = 0; i < pa.size(); ++i) {
    const double d = pa[i] - pb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pa.size());
}

}  // namespace

double w2_projected(const Matrix& a, const Matrix& b, const Vector& dir) {
  if (a.rows() != b.rows()) throw DimensionError("w2_projected: sizes differ");
  Vector pa_v = a * dir, pb_v = b * dir;
  std::vector<double> pa(pa_v.data(), pa_v.data() + pa_v.size());
  std::vector<double> pb(pb_v.data(), pb_v.data() + pb_v.size());
  return std::sqrt(w2_1d_sorted(pa, pb));
}

double w2_sliced(const Matrix& a, const Matrix& b, int n_projections, Rng& rng) {
  if (a.rows() == 0 || b.rows() == 0) throw DimensionError("w2_sliced: empty point sets");
  if (a.rows() != b.rows()) throw DimensionError("w2_sliced: sizes differ");
  if (n_projections < 1) throw DomainError("w2_sliced: need at least one projection");
  const Eigen::Index d = a.cols();
  double acc = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    Vector dir = normal_vector(rng, d);
    dir /= dir.norm();
    Vector pa_v = a * dir, pb_v = b * dir;
    std::vector<double> pa(pa_v.data(), pa_v.data() + pa_v.size());
    std::vector<double> pb(pb_v.data(), pb_v.data() + pb_v.size());
    acc += w2_1d_sorted(pa, pb);
  }
  return std::sqrt(static_cast<double>(d) * acc / n_projections);
}

ChainBoundReport chain_bound_check(const ConsistencyModel& m, const SegmentationGrid& grid,
                                   const Matrix& x0, const Matrix& z) {
  if (grid.times.size() < 2) throw DomainError("chain_bound_check: grid needs >= 2 points");
  require_same_shape(x0, z, "chain_bound_check");

  auto rms = [](const Matrix& g) {
    return std::sqrt(g.array().square().rowwise().sum().mean());
  };
  auto f_at = [&](double t) { return cm_apply(m, perturb(m.schedule, x0, z, t), t); };

  ChainBoundReport report;
  Matrix prev = f_at(grid.times.front());
  report.boundary_residual = rms(prev - x0);
  for (size_t k = 1; k < grid.times.size(); ++k) {
    Matrix cur = f_at(grid.times[k]);
    report.rhs += rms(cur - prev);
    prev = std::move(cur);
  }
  report.lhs = rms(prev - x0);  // prev now holds f at the top time

  const double tol = 1e-9 * (1.0 + report.rhs + report.boundary_residual);
  report.slack = report.rhs + report.boundary_residual - report.lhs;
  report.holds = report.lhs <= report.rhs + report.boundary_residual + tol;
  return report;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const size_t n = xs.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return xs[i] < xs[j]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw DimensionError("spearman: need matched n >= 2");
  std::vector<double> rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("spearman: constant ranks");
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_schedule_csv(const std::string& path, const SegmentationGrid& grid) {
  std::ofstream out = open_out(path);
  out << "index,t,dt\n";
  for (size_t i = 1; i < grid.times.size(); ++i)
    out << i << "," << fmt(grid.times[i]) << "," << fmt(grid.times[i] - grid.times[i - 1]) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& records) {
  std::ofstream out = open_out(path);
  out << "step,loss,lambda,grid_id\n";
  for (const LossRecord& r : records)
    out << r.step << "," << fmt(r.loss) << "," << fmt(r.lambda) << "," << r.grid_id << "\n";
  if (!out) throw IoError("write failed: " + path);
}

void write_samples_csv(const std::string& path, const Matrix& samples, int step_count) {
  if (samples.cols() != 2 && samples.rows() > 0)
    throw DimensionError("write_samples_csv expects 2-D samples");
  std::ofstream out = open_out(path);
  out << "x,y,step_count\n";
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    out << fmt(samples(i, 0)) << "," << fmt(samples(i, 1)) << "," << step_count << "\n";
  if (!out) throw IoError("write failed: " + path);
}

namespace {

struct PlotFrame {
  double x_lo, x_hi, y_lo, y_hi;
  static constexpr int width = 640, height = 480;
  static constexpr int margin = 56;

  double px(double x) const {
    const double span = x_hi > x_lo ? x_hi - x_lo : 1.0;
    return margin + (x - x_lo) / span * (width - 2 * margin);
  }
  double py(double y) const {
    const double span = y_hi > y_lo ? y_hi - y_lo : 1.0;
    return height - margin - (y - y_lo) / span * (height - 2 * margin);
  }
};

void svg_header(std::ofstream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << PlotFrame::width
      << "\" height=\"" << PlotFrame::height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << PlotFrame::width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
}

void svg_axes(std::ofstream& out, const PlotFrame& f, const std::string& x_label,
              const std::string& y_label) {
  const int m = PlotFrame::margin, w = PlotFrame::width, h = PlotFrame::height;
  out << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m
      << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = f.x_lo + (f.x_hi - f.x_lo) * k / 4.0;
    const double fy = f.y_lo + (f.y_hi - f.y_lo) * k / 4.0;
    char xb[32], yb[32];
    std::snprintf(xb, sizeof xb, "%.3g", fx);
    std::snprintf(yb, sizeof yb, "%.3g", fy);
    out << "<text x=\"" << f.px(fx) << "\" y=\"" << h - m + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xb
        << "</text>\n"
        << "<text x=\"" << m - 6 << "\" y=\"" << f.py(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << yb
        << "</text>\n";
  }
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << x_label
      << "</text>\n"
      << "<text x=\"16\" y=\"" << h / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
      << "transform=\"rotate(-90 16 " << h / 2 << ")\">" << y_label << "</text>\n";
}

}  // namespace

void write_scatter_svg(const std::string& path, const Matrix& points, const std::string& title) {
  std::ofstream out = open_out(path);
  PlotFrame f{-1.0, 1.0, -1.0, 1.0};
  if (points.rows() > 0) {
    f.x_lo = points.col(0).minCoeff();
    f.x_hi = points.col(0).maxCoeff();
    f.y_lo = points.col(1).minCoeff();
    f.y_hi = points.col(1).maxCoeff();
  }
  svg_header(out, title);
  svg_axes(out, f, "x", "y");
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out << "<circle cx=\"" << f.px(points(i, 0)) << "\" cy=\"" << f.py(points(i, 1))
        << "\" r=\"2\" fill=\"steelblue\" fill-opacity=\"0.6\"/>\n";
  out << "</svg>\n";
  if (!out) throw IoError("write failed: " + path);
}

void write_line_svg(const std::string& path, const std::vector<double>& xs,
                    const std::vector<double>& ys, const std::string& title,
                    const std::string& x_label, const std::string& y_label) {
  if (xs.size() != ys.size()) throw DimensionError("write_line_svg: size mismatch");
  std::ofstream out = open_out(path);
  PlotFrame f{0.0, 1.0, 0.0, 1.0};
  if (!xs.empty()) {
    f.x_lo = *std::min_element(xs.begin(), xs.end());
    f.x_hi = *std::max_element(xs.begin(), xs.end());
    f.y_lo = *std::min_element(ys.begin(), ys.end());
    f.y_hi = *std::max_element(ys.begin(), ys.end());
  }
  svg_header(out, title);
  svg_axes(out, f, x_label, y_label);
  if (!xs.empty()) {
    out << "<polyline fill=\"none\" stroke=\"firebrick\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i) out << f.px(xs[i]) << "," << f.py(ys[i]) << " ";
    out << "\"/>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("write failed: " + path);
}

void export_diagnostics(const SegmentationGrid& grid, const std::vector<LossRecord>& history,
                        const Matrix& samples, const std::string& dir, bool with_svg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_schedule_csv((fs::path(dir) / "schedule.csv").string(), grid);
  write_loss_csv((fs::path(dir) / "loss.csv").string(), history);
  write_samples_csv((fs::path(dir) / "samples.csv").string(), samples, 1);
  if (with_svg) {
    std::vector<double> mids, widths;
    for (size_t i = 1; i < grid.times.size(); ++i) {
      mids.push_back(0.5 * (grid.times[i] + grid.times[i - 1]));
      widths.push_back(grid.times[i] - grid.times[i - 1]);
    }
    write_line_svg((fs::path(dir) / "schedule.svg").string(), mids, widths,
                   "segment width over time", "t", "dt");
    std::vector<double> steps, losses;
    for (const LossRecord& r : history) {
      steps.push_back(static_cast<double>(r.step));
      losses.push_back(r.loss);
    }
    write_line_svg((fs::path(dir) / "loss.svg").string(), steps, losses, "training loss", "step",
                   "loss");
    write_scatter_svg((fs::path(dir) / "samples.svg").string(), samples, "generated samples");
  }
}

}  // namespace adcm
