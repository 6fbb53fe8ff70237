#include "metasaug/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "metasaug/tensor_io.hpp"

namespace metasaug {

ClassifierParams ClassifierParams::init(int input_dim, const std::vector<int>& hidden_dims,
                                        int num_classes, Rng& rng) {
  if (input_dim < 1 || num_classes < 1)
    throw ConfigError("ClassifierParams: input_dim and num_classes must be positive");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("ClassifierParams: hidden layer sizes must be positive");

  ClassifierParams p;
  p.input_dim = input_dim;
  p.num_classes = num_classes;

  auto glorot = [&rng](int fan_out, int fan_in) {
    Matrix m(fan_out, fan_in);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : m.data) v = bound * (2.0 * rng.uniform() - 1.0);
    return m;
  };

  int in = input_dim;
  for (int h : hidden_dims) {
    p.hidden_w.push_back(glorot(h, in));
    p.hidden_b.emplace_back(static_cast<size_t>(h), 0.0);
    in = h;
  }
  p.feature_dim = in;
  p.w = glorot(num_classes, in);
  p.b.assign(static_cast<size_t>(num_classes), 0.0);
  return p;
}

bool ClassifierParams::all_finite() const {
  for (const Matrix& m : hidden_w)
    if (!m.all_finite()) return false;
  for (const Vector& v : hidden_b)
    for (double x : v)
      if (!std::isfinite(x)) return false;
  if (!w.all_finite()) return false;
  for (double x : b)
    if (!std::isfinite(x)) return false;
  return true;
}

bool operator==(const ClassifierParams& a, const ClassifierParams& b) {
  return a.input_dim == b.input_dim && a.feature_dim == b.feature_dim &&
         a.num_classes == b.num_classes && a.hidden_w == b.hidden_w &&
         a.hidden_b == b.hidden_b && a.w == b.w && a.b == b.b;
}

ForwardTrace forward(const ClassifierParams& params, const Matrix& x) {
  if (x.cols != params.input_dim)
    throw DimensionError("forward: input has " + std::to_string(x.cols) +
                         " columns, model expects " + std::to_string(params.input_dim));

  ForwardTrace trace;
  trace.input = x;
  const Matrix* current = &trace.input;
  for (int l = 0; l < params.num_hidden(); ++l) {
    const Matrix& wl = params.hidden_w[static_cast<size_t>(l)];
    const Vector& bl = params.hidden_b[static_cast<size_t>(l)];
    Matrix pre = matmul(*current, transpose(wl));
    for (int i = 0; i < pre.rows; ++i) {
      double* row = pre.row_ptr(i);
      for (int j = 0; j < pre.cols; ++j) row[j] += bl[static_cast<size_t>(j)];
    }
    Matrix act = pre;
    for (double& v : act.data) v = std::max(v, 0.0);
    trace.pre_act.push_back(std::move(pre));
    trace.activations.push_back(std::move(act));
    current = &trace.activations.back();
  }
  trace.features = *current;

  trace.logits = matmul(trace.features, transpose(params.w));
  for (int i = 0; i < trace.logits.rows; ++i) {
    double* row = trace.logits.row_ptr(i);
    for (int j = 0; j < trace.logits.cols; ++j) row[j] += params.b[static_cast<size_t>(j)];
  }
  return trace;
}

ParamGradients backward(const ClassifierParams& params, const ForwardTrace& trace,
                        const Matrix& dlogits, bool through_hidden) {
  if (dlogits.rows != trace.logits.rows || dlogits.cols != params.num_classes)
    throw DimensionError("backward: dlogits shape mismatch");

  ParamGradients g;
  g.w = matmul(transpose(dlogits), trace.features);
  g.b.assign(static_cast<size_t>(params.num_classes), 0.0);
  for (int i = 0; i < dlogits.rows; ++i) {
    const double* row = dlogits.row_ptr(i);
    for (int j = 0; j < dlogits.cols; ++j) g.b[static_cast<size_t>(j)] += row[j];
  }
  if (!through_hidden || params.num_hidden() == 0) return g;

  ParamGradients hidden = hidden_backward(params, trace, matmul(dlogits, params.w));
  g.hidden_w = std::move(hidden.hidden_w);
  g.hidden_b = std::move(hidden.hidden_b);
  return g;
}

ParamGradients hidden_backward(const ClassifierParams& params, const ForwardTrace& trace,
                               const Matrix& dfeatures) {
  ParamGradients g;
  if (params.num_hidden() == 0) return g;
  if (dfeatures.rows != trace.features.rows || dfeatures.cols != params.feature_dim)
    throw DimensionError("hidden_backward: dfeatures shape mismatch");

  g.hidden_w.resize(static_cast<size_t>(params.num_hidden()));
  g.hidden_b.resize(static_cast<size_t>(params.num_hidden()));
  Matrix dact = dfeatures;
  for (int l = params.num_hidden() - 1; l >= 0; --l) {
    const Matrix& pre = trace.pre_act[static_cast<size_t>(l)];
    Matrix dpre = dact;
    for (size_t i = 0; i < dpre.data.size(); ++i)
      if (pre.data[i] <= 0.0) dpre.data[i] = 0.0;  // rectifier gate, zero at the kink

    const Matrix& below =
        (l == 0) ? trace.input : trace.activations[static_cast<size_t>(l - 1)];
    g.hidden_w[static_cast<size_t>(l)] = matmul(transpose(dpre), below);
    Vector& gb = g.hidden_b[static_cast<size_t>(l)];
    gb.assign(static_cast<size_t>(dpre.cols), 0.0);
    for (int i = 0; i < dpre.rows; ++i) {
      const double* row = dpre.row_ptr(i);
      for (int j = 0; j < dpre.cols; ++j) gb[static_cast<size_t>(j)] += row[j];
    }
    if (l > 0) dact = matmul(dpre, params.hidden_w[static_cast<size_t>(l)]);
  }
  return g;
}

Matrix input_gradient(const ClassifierParams& params, const ForwardTrace& trace,
                      const Matrix& dlogits) {
  Matrix dact = matmul(dlogits, params.w);
  for (int l = params.num_hidden() - 1; l >= 0; --l) {
    const Matrix& pre = trace.pre_act[static_cast<size_t>(l)];
    for (size_t i = 0; i < dact.data.size(); ++i)
      if (pre.data[i] <= 0.0) dact.data[i] = 0.0;
    dact = matmul(dact, params.hidden_w[static_cast<size_t>(l)]);
  }
  return dact;
}

namespace {
void momentum_update(Matrix& param, const Matrix& grad, Matrix& vel, const SgdState& s) {
  if (vel.data.empty()) vel = Matrix(param.rows, param.cols);
  for (size_t i = 0; i < param.data.size(); ++i) {
    vel.data[i] = s.momentum * vel.data[i] + grad.data[i] + s.weight_decay * param.data[i];
    param.data[i] -= s.lr * vel.data[i];
  }
}

void momentum_update(Vector& param, const Vector& grad, Vector& vel, const SgdState& s) {
  if (vel.empty()) vel.assign(param.size(), 0.0);
  for (size_t i = 0; i < param.size(); ++i) {
    vel[i] = s.momentum * vel[i] + grad[i] + s.weight_decay * param[i];
    param[i] -= s.lr * vel[i];
  }
}
}  // namespace

void sgd_step(ClassifierParams& params, const ParamGradients& grads, SgdState& state) {
  if (!grads.w.data.empty()) {
    if (!grads.w.same_shape(params.w)) throw DimensionError("sgd_step: w gradient shape mismatch");
    momentum_update(params.w, grads.w, state.vel_w, state);
  }
  if (!grads.b.empty()) {
    if (grads.b.size() != params.b.size()) throw DimensionError("sgd_step: b gradient shape mismatch");
    momentum_update(params.b, grads.b, state.vel_b, state);
  }
  state.vel_hidden_w.resize(params.hidden_w.size());
  state.vel_hidden_b.resize(params.hidden_b.size());
  for (size_t l = 0; l < grads.hidden_w.size(); ++l) {
    if (grads.hidden_w[l].data.empty()) continue;
    momentum_update(params.hidden_w[l], grads.hidden_w[l], state.vel_hidden_w[l], state);
    momentum_update(params.hidden_b[l], grads.hidden_b[l], state.vel_hidden_b[l], state);
  }
}

void save_params(const ClassifierParams& params, const std::string& prefix) {
  std::vector<NamedTensor> tensors;
  for (int l = 0; l < params.num_hidden(); ++l) {
    tensors.push_back({"hidden" + std::to_string(l) + ".w", params.hidden_w[static_cast<size_t>(l)]});
    Matrix bm(1, static_cast<int>(params.hidden_b[static_cast<size_t>(l)].size()));
    bm.data = params.hidden_b[static_cast<size_t>(l)];
    tensors.push_back({"hidden" + std::to_string(l) + ".b", std::move(bm)});
  }
  tensors.push_back({"out.w", params.w});
  Matrix bm(1, static_cast<int>(params.b.size()));
  bm.data = params.b;
  tensors.push_back({"out.b", std::move(bm)});

  nlohmann::json meta;
  meta["kind"] = "classifier";
  meta["input_dim"] = params.input_dim;
  meta["feature_dim"] = params.feature_dim;
  meta["num_classes"] = params.num_classes;
  meta["num_hidden"] = params.num_hidden();
  save_tensors(tensors, prefix, meta);
}

ClassifierParams load_params(const std::string& prefix) {
  auto [tensors, meta] = load_tensors(prefix);
  if (meta.value("kind", "") != "classifier")
    throw ParseError("load_params: " + prefix + ".json is not a classifier checkpoint");

  ClassifierParams p;
  p.input_dim = meta.at("input_dim").get<int>();
  p.feature_dim = meta.at("feature_dim").get<int>();
  p.num_classes = meta.at("num_classes").get<int>();
  const int num_hidden = meta.at("num_hidden").get<int>();

  auto find = [&tensors, &prefix](const std::string& name) -> Matrix& {
    for (auto& t : tensors)
      if (t.name == name) return t.data;
    throw ParseError("load_params: " + prefix + " is missing tensor " + name);
  };
  for (int l = 0; l < num_hidden; ++l) {
    p.hidden_w.push_back(find("hidden" + std::to_string(l) + ".w"));
    p.hidden_b.push_back(find("hidden" + std::to_string(l) + ".b").data);
  }
  p.w = find("out.w");
  p.b = find("out.b").data;
  if (p.w.rows != p.num_classes || p.w.cols != p.feature_dim ||
      static_cast<int>(p.b.size()) != p.num_classes)
    throw ParseError("load_params: " + prefix + " tensor shapes disagree with metadata");
  if (!p.all_finite()) throw ParseError("load_params: " + prefix + " contains non-finite values");
  return p;
}

}  // namespace metasaug
