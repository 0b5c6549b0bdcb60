#pragma once

#include "adcm/discretizer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace adcm {

enum class DatasetKind { gauss_mixture, ring, checkerboard };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gauss_mixture;
  int components = 8;        // gauss_mixture: centers evenly on a circle
  double mixture_radius = 1.0;
  double mixture_scale = 0.1;
  double ring_radius = 1.0;
  double ring_scale = 0.05;
};

// 2-D toy distribution, normalized so the pooled empirical standard
// deviation equals sigma_data. Normalization parameters are estimated once
// at construction from a dedicated substream and stored.
struct ToyDataset {
  DatasetSpec spec;
  double sigma_data = 0.5;
  Eigen::Vector2d shift = Eigen::Vector2d::Zero();
  double scale = 1.0;

  Matrix sample(int n, Rng& rng) const;      // normalized draws [n x 2]
  Matrix sample_raw(int n, Rng& rng) const;  // before normalization
};

ToyDataset make_dataset(const DatasetSpec& spec, double sigma_data, Rng& rng);

struct GenerateResult {
  Matrix samples;
  std::uint64_t model_evals = 0;  // one per sample per consistency-function call
};

// One- or two-step generation from the prior x_T = beta_T z (zero prior
// mean). Two-step re-noises the first prediction at t_mid with fresh noise.
GenerateResult generate(const ConsistencyModel& m, int n, int steps, double t_mid, Rng& rng);

// Exact Wasserstein-2 between equal-size point multisets (minimum-cost
// perfect matching under squared Euclidean cost). Capped at 1024 points.
double w2_exact(const Matrix& a, const Matrix& b);

// 1-D Wasserstein-2 of the projections onto a fixed unit direction.
double w2_projected(const Matrix& a, const Matrix& b, const Vector& dir);

// Monte-Carlo sliced estimator: sqrt(d * mean over random unit directions of
// the squared 1-D distance). The dimension factor makes it agree with
// w2_exact on Gaussian-family inputs.
double w2_sliced(const Matrix& a, const Matrix& b, int n_projections, Rng& rng);

struct ChainBoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double boundary_residual = 0.0;
  double slack = 0.0;  // rhs + boundary_residual - lhs
  bool holds = false;
};

// Accumulated-error chain over a grid with shared (x0, z): the denoising
// error at the top time is bounded by the sum of per-segment gaps plus the
// residual of the approximate boundary condition at t_min.
ChainBoundReport chain_bound_check(const ConsistencyModel& m, const SegmentationGrid& grid,
                                   const Matrix& x0, const Matrix& z);

struct SampleReport {
  int n_samples = 0;
  int nfe = 1;
  double w2_exact_value = 0.0;
  double w2_sliced_value = 0.0;
  double chain_bound_slack = 0.0;
  std::uint64_t seed = 0;
};

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct LossRecord {
  long step = 0;
  double loss = 0.0;
  double lambda = 0.0;
  int grid_id = 0;
};

void write_schedule_csv(const std::string& path, const SegmentationGrid& grid);
void write_loss_csv(const std::string& path, const std::vector<LossRecord>& records);
void write_samples_csv(const std::string& path, const Matrix& samples, int step_count);

// Self-contained SVG plots (no external assets).
void write_scatter_svg(const std::string& path, const Matrix& points, const std::string& title);
void write_line_svg(const std::string& path, const std::vector<double>& xs,
                    const std::vector<double>& ys, const std::string& title,
                    const std::string& x_label, const std::string& y_label);

// Writes schedule.csv, loss.csv, samples.csv and, when with_svg is set,
// matching plots into dir.
void export_diagnostics(const SegmentationGrid& grid, const std::vector<LossRecord>& history,
                        const Matrix& samples, const std::string& dir, bool with_svg);

}  // namespace adcm
