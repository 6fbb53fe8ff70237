// One-step bilevel training: lookahead parameter step, hypergradient of the
// balanced-validation loss with respect to the covariance bank, bank
// update, final optimizer step, and the two-phase training loop.
#pragma once

#include <vector>

#include "metasaug/config.hpp"
#include "metasaug/covariance.hpp"
#include "metasaug/datagen.hpp"
#include "metasaug/losses.hpp"
#include "metasaug/model.hpp"

namespace metasaug {

struct Batch {
  Matrix features;
  std::vector<int> labels;
};

struct MetaStepConfig {
  double alpha = 0.1;  // classifier step size (lookahead and final step)
  double gamma = 0.1;  // covariance step size
  HypergradMethod method = HypergradMethod::kAnalyticLastLayer;
  double fd_h = 1e-5;
  Reduction reduction = Reduction::kMean;  // train loss; validation always averages
  bool plain_final_step = false;  // final step without momentum/weight decay
  bool strict_psd = false;
};

// Theta - alpha * grad of the weighted augmented loss; a single plain
// gradient step (no momentum, no weight decay), the input left untouched.
ClassifierParams lookahead(const ClassifierParams& params, const Batch& batch,
                           const CovarianceBank& bank, const Vector& class_eps,
                           double alpha, const BaseLoss& base, Reduction reduction,
                           bool strict_psd = false);

// Mean cross-entropy of the (balanced) validation batch.
double validation_ce(const ClassifierParams& params, const Batch& val);

// Gradient of the validation cross-entropy after the lookahead step with
// respect to each class covariance. Analytic mode assembles the closed-form
// mixed second derivative (linear model only; throws ConfigError
// otherwise); FD mode drives symmetric central differences through the full
// lookahead + validation pipeline. Classes absent from the train batch get
// zero matrices.
std::vector<Matrix> hypergradient(const ClassifierParams& params, const Batch& batch,
                                  const Batch& val, const CovarianceBank& bank,
                                  const Vector& class_eps, const BaseLoss& base,
                                  const MetaStepConfig& cfg);

struct MetaTrace {
  double train_loss = 0.0;          // weighted loss before any update
  double val_loss = 0.0;            // validation loss at the lookahead point
  double updated_train_loss = 0.0;  // weighted loss recomputed with the new bank
  ClassifierParams lookahead_params;
  std::vector<Matrix> sigma_grad;
  int negative_delta_count = 0;
};

// One full bilevel step, in order: weighted loss, lookahead, validation
// loss, bank update, loss recomputation, final optimizer step. Momentum
// state advances only in the final step.
MetaTrace meta_step(ClassifierParams& params, const Batch& batch, const Batch& val,
                    CovarianceBank& bank, const Vector& class_eps, const BaseLoss& base,
                    const MetaStepConfig& cfg, SgdState& state);

struct HistoryRecord {
  int step = 0;
  int phase = 1;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN outside meta steps
  double lr = 0.0;
  Vector sigma_trace;  // per-class trace of the bank, empty before it exists
};

struct TrainResult {
  ClassifierParams params;
  CovarianceBank bank;
  ClassStats stats;
  std::vector<HistoryRecord> history;
};

// Two-phase loop. Steps [0, t1) train with the plain base loss (a zero
// covariance bank) while feature statistics stream; at t1 the learnable
// bank is created; steps [t1, t2) run meta_step per batch with a fresh
// stratified validation batch, or plain augmented steps for the no-meta
// ablation. Identical seeds give identical histories, and the first phase
// consumes the same random streams no matter how the second is configured.
TrainResult train(const SplitBundle& split, const TrainConfig& cfg);

}  // namespace metasaug
