#include "metasaug/meta.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace metasaug {

namespace {
struct FullGrads {
  ParamGradients pg;
  double loss = 0.0;
  int negative_delta = 0;
};

// Weighted augmented-loss gradients through the whole model.
FullGrads batch_gradients(const ClassifierParams& params, const Batch& batch,
                          const CovarianceBank& bank, const Vector& class_eps,
                          const BaseLoss& base, Reduction reduction, bool strict_psd) {
  ForwardTrace trace = forward(params, batch.features);
  BatchLoss bl = weighted_batch_loss(trace.features, batch.labels, params.w, params.b, bank,
                                     class_eps, base, reduction, strict_psd);
  FullGrads out;
  out.loss = bl.value;
  out.negative_delta = bl.negative_delta_count;
  if (params.num_hidden() > 0) out.pg = hidden_backward(params, trace, bl.grads.features);
  out.pg.w = std::move(bl.grads.w);
  out.pg.b = std::move(bl.grads.b);
  return out;
}

// params <- params - alpha * grads, nothing else.
void plain_step(ClassifierParams& params, const ParamGradients& grads, double alpha) {
  axpy(params.w, -alpha, grads.w);
  axpy(params.b, -alpha, grads.b);
  for (size_t l = 0; l < grads.hidden_w.size(); ++l) {
    if (grads.hidden_w[l].data.empty()) continue;
    axpy(params.hidden_w[l], -alpha, grads.hidden_w[l]);
    axpy(params.hidden_b[l], -alpha, grads.hidden_b[l]);
  }
}

Vector expand_weights(const Vector& class_eps, const std::vector<int>& labels,
                      Reduction reduction) {
  const double scale =
      reduction == Reduction::kMean ? 1.0 / static_cast<double>(labels.size()) : 1.0;
  Vector w(labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    w[i] = scale * (class_eps.empty() ? 1.0 : class_eps[static_cast<size_t>(labels[i])]);
  return w;
}
}  // namespace

ClassifierParams lookahead(const ClassifierParams& params, const Batch& batch,
                           const CovarianceBank& bank, const Vector& class_eps,
                           double alpha, const BaseLoss& base, Reduction reduction,
                           bool strict_psd) {
  FullGrads g = batch_gradients(params, batch, bank, class_eps, base, reduction, strict_psd);
  ClassifierParams ahead = params;
  plain_step(ahead, g.pg, alpha);
  return ahead;
}

double validation_ce(const ClassifierParams& params, const Batch& val) {
  if (val.features.rows == 0) throw InsufficientDataError("validation_ce: empty batch");
  ForwardTrace trace = forward(params, val.features);
  double sum = 0.0;
  for (int i = 0; i < trace.logits.rows; ++i)
    sum += ce_loss(trace.logits.row(i), val.labels[static_cast<size_t>(i)]).loss;
  return sum / trace.logits.rows;
}

namespace {
std::vector<Matrix> analytic_hypergradient(const ClassifierParams& params, const Batch& batch,
                                           const Batch& val, const CovarianceBank& bank,
                                           const Vector& class_eps, const BaseLoss& base,
                                           const MetaStepConfig& cfg) {
  const int c_total = params.num_classes;
  const int d = params.feature_dim;
  const Matrix& features = batch.features;  // linear model: features are the inputs
  const Vector weights = expand_weights(class_eps, batch.labels, cfg.reduction);

  // Lookahead point.
  IsdaGradients ig = isda_gradients(features, batch.labels, params.w, params.b, bank, base,
                                    weights, cfg.strict_psd);
  Matrix w_ahead = params.w;
  axpy(w_ahead, -cfg.alpha, ig.w);
  Vector b_ahead = params.b;
  axpy(b_ahead, -cfg.alpha, ig.b);

  // Validation cross-entropy gradient at the lookahead point (mean form).
  Matrix gw(c_total, d);
  Vector gb(static_cast<size_t>(c_total), 0.0);
  {
    const double inv_m = 1.0 / static_cast<double>(val.features.rows);
    Vector z(static_cast<size_t>(c_total));
    for (int v = 0; v < val.features.rows; ++v) {
      const double* x = val.features.row_ptr(v);
      for (int c = 0; c < c_total; ++c) {
        const double* wc = w_ahead.row_ptr(c);
        double s = b_ahead[static_cast<size_t>(c)];
        for (int j = 0; j < d; ++j) s += wc[j] * x[j];
        z[static_cast<size_t>(c)] = s;
      }
      LossEval le = ce_loss(z, val.labels[static_cast<size_t>(v)]);
      for (int c = 0; c < c_total; ++c) {
        const double coeff = inv_m * le.dlogits[static_cast<size_t>(c)];
        gb[static_cast<size_t>(c)] += coeff;
        double* grow = gw.row_ptr(c);
        for (int j = 0; j < d; ++j) grow[j] += coeff * x[j];
      }
    }
  }

  // The chain rule contracts the validation gradient with the mixed second
  // derivative of the train loss. Per train sample this reduces to a
  // directional derivative of the train gradient along (gw, gb): with
  // rho the base-loss gradient at the adjusted logits, rhodot its Hessian
  // applied to the logit velocity, dw_c = w_c - w_y and dg_c the matching
  // rows of gw, the class-y gradient accumulates
  //   (lambda/2) [ rhodot_c dw_c dw_c^T + rho_c (dg_c dw_c^T + dw_c dg_c^T) ]
  // scaled by the sample weight, and the whole sum by -alpha.
  IsdaEval eval = isda_linf(features, batch.labels, params.w, params.b, bank, base,
                            cfg.strict_psd);
  std::vector<Matrix> out(static_cast<size_t>(c_total), Matrix(d, d));

  // Per-class caches of dw rows and Sigma_y dw rows.
  std::vector<std::unique_ptr<std::pair<Matrix, Matrix>>> cache(static_cast<size_t>(c_total));
  Vector zdot(static_cast<size_t>(c_total));
  Vector ztilde(static_cast<size_t>(c_total));
  Vector dwv(static_cast<size_t>(d));
  Vector dgv(static_cast<size_t>(d));
  for (int i = 0; i < features.rows; ++i) {
    const int y = batch.labels[static_cast<size_t>(i)];
    auto& slot = cache[static_cast<size_t>(y)];
    if (!slot) {
      Matrix dw(c_total, d), s(c_total, d);
      const Matrix& sig = bank.sigma[static_cast<size_t>(y)];
      for (int c = 0; c < c_total; ++c) {
        if (c == y) continue;
        double* dw_row = dw.row_ptr(c);
        const double* wc = params.w.row_ptr(c);
        const double* wy = params.w.row_ptr(y);
        for (int j = 0; j < d; ++j) dw_row[j] = wc[j] - wy[j];
        Vector sv = matvec(sig, dw.row(c));
        std::copy(sv.begin(), sv.end(), s.row_ptr(c));
      }
      slot = std::make_unique<std::pair<Matrix, Matrix>>(std::move(dw), std::move(s));
    }
    const Matrix& dw = slot->first;
    const Matrix& s = slot->second;

    // Logit velocity along the validation-gradient direction.
    const double* a = features.row_ptr(i);
    for (int c = 0; c < c_total; ++c) {
      const double* gwc = gw.row_ptr(c);
      const double* gwy = gw.row_ptr(y);
      double t = gb[static_cast<size_t>(c)];
      for (int j = 0; j < d; ++j) t += gwc[j] * a[j];
      if (c != y) {
        const double* sc = s.row_ptr(c);
        double q = 0.0;
        for (int j = 0; j < d; ++j) q += (gwc[j] - gwy[j]) * sc[j];
        t += bank.lambda * q;
      }
      zdot[static_cast<size_t>(c)] = t;
    }

    const double* zrow = eval.adjusted.row_ptr(i);
    std::copy(zrow, zrow + c_total, ztilde.begin());
    Vector rhodot = base_loss_hessian_dir(base, ztilde, y, zdot);
    const double* rho = eval.rho.row_ptr(i);

    const double wt = weights[static_cast<size_t>(i)];
    Matrix& gy = out[static_cast<size_t>(y)];
    for (int c = 0; c < c_total; ++c) {
      if (c == y) continue;
      const double* dwc = dw.row_ptr(c);
      std::copy(dwc, dwc + d, dwv.begin());
      add_sym_outer(gy, wt * 0.5 * bank.lambda * rhodot[static_cast<size_t>(c)], dwv, dwv);

      const double* gwc = gw.row_ptr(c);
      const double* gwy = gw.row_ptr(y);
      for (int j = 0; j < d; ++j) dgv[static_cast<size_t>(j)] = gwc[j] - gwy[j];
      add_sym_outer(gy, wt * bank.lambda * rho[c], dgv, dwv);
    }
  }
  for (Matrix& m : out)
    for (double& v : m.data) v *= -cfg.alpha;
  return out;
}

std::vector<Matrix> fd_hypergradient(const ClassifierParams& params, const Batch& batch,
                                     const Batch& val, const CovarianceBank& bank,
                                     const Vector& class_eps, const BaseLoss& base,
                                     const MetaStepConfig& cfg) {
  const int c_total = bank.num_classes();
  const int d = bank.feature_dim();
  const double h = cfg.fd_h;

  std::vector<char> present(static_cast<size_t>(c_total), 0);
  for (int y : batch.labels) present[static_cast<size_t>(y)] = 1;

  auto pipeline = [&](const CovarianceBank& b) {
    ClassifierParams ahead = lookahead(params, batch, b, class_eps, cfg.alpha, base,
                                       cfg.reduction, cfg.strict_psd);
    return validation_ce(ahead, val);
  };

  std::vector<Matrix> out(static_cast<size_t>(c_total), Matrix(d, d));
  CovarianceBank probe = bank;
  for (int k = 0; k < c_total; ++k) {
    // Only covariances of classes in the batch reach the lookahead.
    if (!present[static_cast<size_t>(k)]) continue;
    Matrix& sig = probe.sigma[static_cast<size_t>(k)];
    for (int p = 0; p < d; ++p) {
      for (int q = p; q < d; ++q) {
        const double saved_pq = sig(p, q);
        const double saved_qp = sig(q, p);
        sig(p, q) = saved_pq + h;
        sig(q, p) = saved_qp + h;
        const double plus = pipeline(probe);
        sig(p, q) = saved_pq - h;
        sig(q, p) = saved_qp - h;
        const double minus = pipeline(probe);
        sig(p, q) = saved_pq;
        sig(q, p) = saved_qp;

        const double g = (plus - minus) / ((p == q ? 2.0 : 4.0) * h);
        out[static_cast<size_t>(k)](p, q) = g;
        out[static_cast<size_t>(k)](q, p) = g;
      }
    }
  }
  return out;
}
}  // namespace

std::vector<Matrix> hypergradient(const ClassifierParams& params, const Batch& batch,
                                  const Batch& val, const CovarianceBank& bank,
                                  const Vector& class_eps, const BaseLoss& base,
                                  const MetaStepConfig& cfg) {
  if (cfg.method == HypergradMethod::kAnalyticLastLayer) {
    if (params.num_hidden() > 0)
      throw ConfigError(
          "hypergradient: analytic mode supports the linear model only; use the "
          "finite-difference method with hidden layers");
    return analytic_hypergradient(params, batch, val, bank, class_eps, base, cfg);
  }
  return fd_hypergradient(params, batch, val, bank, class_eps, base, cfg);
}

MetaTrace meta_step(ClassifierParams& params, const Batch& batch, const Batch& val,
                    CovarianceBank& bank, const Vector& class_eps, const BaseLoss& base,
                    const MetaStepConfig& cfg, SgdState& state) {
  if (bank.mode != BankMode::kLearnable)
    throw ModeError("meta_step: covariance bank must be learnable");

  MetaTrace trace;
  FullGrads g0 =
      batch_gradients(params, batch, bank, class_eps, base, cfg.reduction, cfg.strict_psd);
  trace.train_loss = g0.loss;
  trace.negative_delta_count = g0.negative_delta;

  trace.lookahead_params = params;
  plain_step(trace.lookahead_params, g0.pg, cfg.alpha);
  trace.val_loss = validation_ce(trace.lookahead_params, val);

  trace.sigma_grad = hypergradient(params, batch, val, bank, class_eps, base, cfg);
  apply_sigma_gradient(bank, trace.sigma_grad, cfg.gamma);

  FullGrads g1 =
      batch_gradients(params, batch, bank, class_eps, base, cfg.reduction, cfg.strict_psd);
  trace.updated_train_loss = g1.loss;
  trace.negative_delta_count += g1.negative_delta;
  if (cfg.plain_final_step) {
    plain_step(params, g1.pg, cfg.alpha);
  } else {
    state.lr = cfg.alpha;
    sgd_step(params, g1.pg, state);
  }
  return trace;
}

namespace {
Batch make_batch(const Dataset& data, const std::vector<int>& indices) {
  Batch b;
  b.features = Matrix(static_cast<int>(indices.size()), data.dim());
  b.labels.resize(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    const int r = indices[i];
    std::copy(data.features.row_ptr(r), data.features.row_ptr(r) + data.dim(),
              b.features.row_ptr(static_cast<int>(i)));
    b.labels[i] = data.labels[static_cast<size_t>(r)];
  }
  return b;
}

Vector bank_traces(const CovarianceBank& bank) {
  Vector t(static_cast<size_t>(bank.num_classes()));
  for (int c = 0; c < bank.num_classes(); ++c)
    t[static_cast<size_t>(c)] = trace(bank.sigma[static_cast<size_t>(c)]);
  return t;
}
}  // namespace

TrainResult train(const SplitBundle& split, const TrainConfig& cfg) {
  validate_config(cfg);
  const Dataset& tr = split.train;
  if (tr.size() == 0) throw InsufficientDataError("train: empty training split");
  if (cfg.batch_size > tr.size())
    throw ConfigError("train: batch_size exceeds the training set size");

  const std::vector<int> hidden = parsed_hidden_dims(cfg);
  const Reduction reduction = parsed_reduction(cfg);
  const PsdPolicy policy = parsed_psd_policy(cfg);
  const BaseLoss base = parsed_base_loss(cfg, tr.class_counts);
  const bool meta_run = cfg.ablation != "no-meta";
  const int num_classes = tr.num_classes;

  if (cfg.t1 < cfg.t2 && meta_run && split.meta_val.size() == 0)
    throw InsufficientDataError("train: the meta phase needs a meta-validation split");

  const double beta = resolve_beta(cfg, tr.size());
  const ClassWeights weights =
      effective_number_weights(tr.class_counts, beta, cfg.normalize_weights);
  const bool reweight_on = cfg.reweight && cfg.ablation != "no-reweight";
  const int drw_start = resolve_drw_start(cfg);

  // Fixed derivation order; the first phase only ever draws from the batch
  // stream, so its results cannot depend on second-phase configuration.
  Rng root(cfg.seed);
  Rng rng_init = root.child();
  Rng rng_batch = root.child();
  Rng rng_val = root.child();

  TrainResult out;
  out.params = ClassifierParams::init(tr.dim(), hidden, num_classes, rng_init);
  const int feature_dim = out.params.feature_dim;
  out.stats = ClassStats::create(num_classes, feature_dim, cfg.bessel);

  const CovarianceBank zero_bank =
      snapshot_bank(ClassStats::create(num_classes, feature_dim), cfg.lambda);

  SgdState state;
  state.momentum = cfg.momentum;
  state.weight_decay = cfg.weight_decay;
  double lr = cfg.lr;
  const auto schedule = parsed_lr_schedule(cfg);

  std::vector<std::vector<int>> val_by_class;
  int val_quota = 0;
  if (split.meta_val.size() > 0) {
    val_by_class = split.meta_val.indices_by_class();
    int per_class = cfg.val_batch_size == 0
                        ? 10
                        : std::max(1, cfg.val_batch_size / num_classes);
    for (const auto& ids : val_by_class)
      if (!ids.empty()) per_class = std::min(per_class, static_cast<int>(ids.size()));
    val_quota = per_class;
  }

  MetaStepConfig mcfg;
  mcfg.gamma = cfg.sigma_lr;
  mcfg.method = parsed_hypergrad(cfg);
  mcfg.fd_h = cfg.fd_h;
  mcfg.reduction = reduction;
  mcfg.plain_final_step = cfg.plain_final_step;
  mcfg.strict_psd = cfg.strict_psd;

  bool bank_live = false;
  out.history.reserve(static_cast<size_t>(cfg.t2));
  for (int t = 0; t < cfg.t2; ++t) {
    for (const auto& [at, factor] : schedule)
      if (at == t) lr *= factor;

    const bool phase2 = t >= cfg.t1;
    if (phase2 && meta_run && !bank_live) {
      out.bank = cfg.zero_init_bank
                     ? learnable_bank_zero(num_classes, feature_dim, cfg.lambda, policy)
                     : learnable_bank_from_stats(out.stats, cfg.lambda, policy);
      bank_live = true;
    }

    const Batch batch =
        make_batch(tr, rng_batch.sample_without_replacement(tr.size(), cfg.batch_size));
    const Vector eps = (reweight_on && t >= drw_start) ? weights.eps : Vector{};

    HistoryRecord rec;
    rec.step = t;
    rec.phase = phase2 ? 2 : 1;
    rec.lr = lr;
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();

    if (!phase2 || !meta_run) {
      ForwardTrace ftrace = forward(out.params, batch.features);
      out.stats.update(ftrace.features, batch.labels);
      const CovarianceBank* step_bank = &zero_bank;
      if (phase2) {
        out.bank = snapshot_bank(out.stats, cfg.lambda);
        step_bank = &out.bank;
      }
      BatchLoss bl = weighted_batch_loss(ftrace.features, batch.labels, out.params.w,
                                         out.params.b, *step_bank, eps, base, reduction,
                                         cfg.strict_psd);
      ParamGradients pg;
      if (out.params.num_hidden() > 0)
        pg = hidden_backward(out.params, ftrace, bl.grads.features);
      pg.w = std::move(bl.grads.w);
      pg.b = std::move(bl.grads.b);
      state.lr = lr;
      sgd_step(out.params, pg, state);
      rec.train_loss = bl.value;
      if (phase2) rec.sigma_trace = bank_traces(out.bank);
    } else {
      ForwardTrace ftrace = forward(out.params, batch.features);
      out.stats.update(ftrace.features, batch.labels);

      std::vector<int> val_ids;
      for (size_t c = 0; c < val_by_class.size(); ++c) {
        const auto& ids = val_by_class[c];
        if (ids.empty()) continue;
        for (int pick : rng_val.sample_without_replacement(static_cast<int>(ids.size()),
                                                           val_quota))
          val_ids.push_back(ids[static_cast<size_t>(pick)]);
      }
      const Batch val = make_batch(split.meta_val, val_ids);

      mcfg.alpha = lr;
      MetaTrace mt = meta_step(out.params, batch, val, out.bank, eps, base, mcfg, state);
      rec.train_loss = mt.train_loss;
      rec.val_loss = mt.val_loss;
      rec.sigma_trace = bank_traces(out.bank);
    }
    out.history.push_back(std::move(rec));
  }

  if (!bank_live && cfg.t1 >= cfg.t2)
    out.bank = snapshot_bank(out.stats, cfg.lambda);
  return out;
}

}  // namespace metasaug
