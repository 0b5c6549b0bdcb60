#pragma once

#include "adcm/rng.hpp"
#include "adcm/types.hpp"

#include <vector>

namespace adcm {

enum class Activation { identity, tanh, silu };

// One dense layer. Batches are row-major: input [n x in] -> output [n x out],
// y = x * W^T + b with weight [out x in].
struct Layer {
  Matrix weight;
  Vector bias;
  Activation act = Activation::identity;
};

struct MlpParams {
  std::vector<Layer> layers;

  Eigen::Index input_width() const { return layers.front().weight.cols(); }
  Eigen::Index output_width() const { return layers.back().weight.rows(); }
};

// Hidden layers use `hidden_act`; the final layer is always identity.
MlpParams make_mlp(int in_width, const std::vector<int>& hidden, int out_width,
                   Activation hidden_act, Rng& rng);

Matrix mlp_forward(const MlpParams& params, const Matrix& input);

// Forward-mode pair: tangent rides along the primal through every layer.
struct DualMatrix {
  Matrix primal;
  Matrix tangent;
};

DualMatrix mlp_jvp(const MlpParams& params, const DualMatrix& input);

struct LayerGrads {
  Matrix weight;
  Vector bias;
};

struct MlpGrads {
  std::vector<LayerGrads> layers;
};

struct MlpBackward {
  MlpGrads grads;    // d(sum(cotangent . output))/d params
  Matrix input_grad; // J^T cotangent, for adjoint checks and input-side chains
};

MlpBackward mlp_grad(const MlpParams& params, const Matrix& input, const Matrix& output_cotangent);

long param_count(const MlpParams& params);
Vector flatten(const MlpParams& params);
Vector flatten(const MlpGrads& grads);
void assign_from_flat(MlpParams& params, const Vector& flat);

// Adam with standard bias correction; moments are stored flat in layer order.
struct OptimizerState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_stability = 1e-8;
};

OptimizerState make_optimizer(long n_params, double learning_rate);

// Throws NumericError on non-finite gradients before touching any state.
void adam_step(OptimizerState& state, MlpParams& params, const MlpGrads& grads);

struct EmaState {
  MlpParams shadow;
  double decay = 0.999;
};

// shadow <- decay * shadow + (1 - decay) * params, elementwise.
void ema_update(EmaState& state, const MlpParams& params);

}  // namespace adcm
