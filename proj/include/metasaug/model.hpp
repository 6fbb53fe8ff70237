// Feature extractor (small rectifier MLP with hand-derived backprop) and the
// last-layer linear classifier, plus SGD-with-momentum and checkpoint IO.
#pragma once

#include <string>
#include <vector>

#include "metasaug/numerics.hpp"

namespace metasaug {

// Weight matrix W is C x d with row c holding w_c, so logits come out as
// z = W a + b per sample.
struct ClassifierParams {
  std::vector<Matrix> hidden_w;  // layer l: (out x in)
  std::vector<Vector> hidden_b;
  Matrix w;  // num_classes x feature_dim
  Vector b;  // num_classes

  int input_dim = 0;
  int feature_dim = 0;  // == input_dim when there are no hidden layers
  int num_classes = 0;

  // Weights drawn uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
  static ClassifierParams init(int input_dim, const std::vector<int>& hidden_dims,
                               int num_classes, Rng& rng);

  int num_hidden() const { return static_cast<int>(hidden_w.size()); }
  bool all_finite() const;
};

bool operator==(const ClassifierParams& a, const ClassifierParams& b);

struct ForwardTrace {
  Matrix input;                     // n x input_dim
  std::vector<Matrix> pre_act;      // per hidden layer, n x out
  std::vector<Matrix> activations;  // rectified, n x out
  Matrix features;                  // n x feature_dim (== input when no hidden layers)
  Matrix logits;                    // n x num_classes
};

// Shapes mirror ClassifierParams; hidden entries are empty when the
// extractor is excluded from the backward pass.
struct ParamGradients {
  std::vector<Matrix> hidden_w;
  std::vector<Vector> hidden_b;
  Matrix w;
  Vector b;
};

ForwardTrace forward(const ClassifierParams& params, const Matrix& x);

// Exact reverse-mode gradients from dL/dlogits (n x C). Per-sample
// contributions are reduced in batch order so results are bit-stable.
// When through_hidden is false only {w, b} are populated.
ParamGradients backward(const ClassifierParams& params, const ForwardTrace& trace,
                        const Matrix& dlogits, bool through_hidden = true);

// dL/dinput for the recorded trace (needed when stacking, exposed for
// gradient checks).
Matrix input_gradient(const ClassifierParams& params, const ForwardTrace& trace,
                      const Matrix& dlogits);

// Hidden-layer gradients from dL/dfeatures (n x feature_dim); {w, b} stay
// empty. Lets losses that bypass the logit path feed the extractor.
ParamGradients hidden_backward(const ClassifierParams& params, const ForwardTrace& trace,
                               const Matrix& dfeatures);

struct SgdState {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Velocity buffers mirror parameter shapes; allocated on first use.
  std::vector<Matrix> vel_hidden_w;
  std::vector<Vector> vel_hidden_b;
  Matrix vel_w;
  Vector vel_b;
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Empty gradient entries leave the matching parameters untouched.
void sgd_step(ClassifierParams& params, const ParamGradients& grads, SgdState& state);

// Flat binary of 64-bit reals at <prefix>.bin with a JSON sidecar
// <prefix>.json listing tensor names, shapes and offsets.
void save_params(const ClassifierParams& params, const std::string& prefix);
ClassifierParams load_params(const std::string& prefix);

}  // namespace metasaug
