#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "metasaug/losses.hpp"
#include "metasaug/model.hpp"

using namespace metasaug;

namespace {

std::string temp_prefix(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Mean cross-entropy of the network on a batch; the scalar objective for
// finite-difference checks of the hand-written backward pass.
double batch_ce(const ClassifierParams& params, const Matrix& x, const std::vector<int>& y) {
  const ForwardTrace t = forward(params, x);
  double total = 0.0;
  for (int i = 0; i < x.rows; ++i)
    total += ce_loss(t.logits.row(i), y[static_cast<size_t>(i)]).loss;
  return total / x.rows;
}

Matrix ce_dlogits(const ClassifierParams& params, const Matrix& x, const std::vector<int>& y) {
  const ForwardTrace t = forward(params, x);
  Matrix d(x.rows, params.num_classes);
  for (int i = 0; i < x.rows; ++i) {
    const Vector g = ce_loss(t.logits.row(i), y[static_cast<size_t>(i)]).dlogits;
    for (int c = 0; c < params.num_classes; ++c) d(i, c) = g[static_cast<size_t>(c)] / x.rows;
  }
  return d;
}

}  // namespace

TEST_CASE("init shapes, bounds and determinism") {
  Rng a(3), b(3);
  const ClassifierParams p = ClassifierParams::init(5, {8, 6}, 4, a);
  const ClassifierParams q = ClassifierParams::init(5, {8, 6}, 4, b);
  CHECK(p == q);
  CHECK(p.input_dim == 5);
  CHECK(p.feature_dim == 6);
  CHECK(p.num_classes == 4);
  REQUIRE(p.num_hidden() == 2);
  CHECK(p.hidden_w[0].rows == 8);
  CHECK(p.hidden_w[0].cols == 5);
  CHECK(p.w.rows == 4);
  CHECK(p.w.cols == 6);

  for (double v : p.hidden_b[0]) CHECK(v == 0.0);
  for (double v : p.b) CHECK(v == 0.0);
  const double bound0 = std::sqrt(6.0 / (5 + 8));
  for (double v : p.hidden_w[0].data) CHECK(std::abs(v) <= bound0);
}

TEST_CASE("linear forward is W x + b") {
  Rng rng(4);
  ClassifierParams p = ClassifierParams::init(2, {}, 3, rng);
  p.w = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
  p.b = {0.5, -0.5, 0.0};
  Matrix x(1, 2);
  x(0, 0) = 2.0;
  x(0, 1) = 3.0;
  const ForwardTrace t = forward(p, x);
  CHECK(t.features == x);
  CHECK(t.logits(0, 0) == 2.5);
  CHECK(t.logits(0, 1) == 2.5);
  CHECK(t.logits(0, 2) == 5.0);
}

TEST_CASE("relu gates the forward trace") {
  Rng rng(5);
  ClassifierParams p = ClassifierParams::init(1, {2}, 2, rng);
  p.hidden_w[0] = Matrix::from_rows({{1.0}, {-1.0}});
  p.hidden_b[0] = {0.0, 0.0};
  Matrix x(1, 1);
  x(0, 0) = 3.0;
  const ForwardTrace t = forward(p, x);
  CHECK(t.pre_act[0](0, 0) == 3.0);
  CHECK(t.pre_act[0](0, 1) == -3.0);
  CHECK(t.activations[0](0, 0) == 3.0);
  CHECK(t.activations[0](0, 1) == 0.0);
}

TEST_CASE("backward matches finite differences through hidden layers") {
  Rng rng(6);
  ClassifierParams p = ClassifierParams::init(4, {5, 3}, 3, rng);
  Matrix x(6, 4);
  for (double& v : x.data) v = rng.normal();
  std::vector<int> y(6);
  for (int& c : y) c = rng.uniform_int(3);

  const ForwardTrace t = forward(p, x);
  const ParamGradients g = backward(p, t, ce_dlogits(p, x, y), true);

  const double h = 1e-6;
  auto fd_entry = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double up = batch_ce(p, x, y);
    slot = saved - h;
    const double dn = batch_ce(p, x, y);
    slot = saved;
    return (up - dn) / (2.0 * h);
  };

  for (int l = 0; l < 2; ++l) {
    for (size_t k = 0; k < p.hidden_w[static_cast<size_t>(l)].data.size(); ++k) {
      const double fd = fd_entry(p.hidden_w[static_cast<size_t>(l)].data[k]);
      CHECK(g.hidden_w[static_cast<size_t>(l)].data[k] == doctest::Approx(fd).epsilon(1e-5));
    }
    for (size_t k = 0; k < p.hidden_b[static_cast<size_t>(l)].size(); ++k) {
      const double fd = fd_entry(p.hidden_b[static_cast<size_t>(l)][k]);
      CHECK(g.hidden_b[static_cast<size_t>(l)][k] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
  for (size_t k = 0; k < p.w.data.size(); ++k)
    CHECK(g.w.data[k] == doctest::Approx(fd_entry(p.w.data[k])).epsilon(1e-5));
  for (size_t k = 0; k < p.b.size(); ++k)
    CHECK(g.b[k] == doctest::Approx(fd_entry(p.b[k])).epsilon(1e-5));
}

TEST_CASE("input gradient matches finite differences") {
  Rng rng(7);
  ClassifierParams p = ClassifierParams::init(3, {4}, 2, rng);
  Matrix x(2, 3);
  for (double& v : x.data) v = rng.normal();
  std::vector<int> y = {0, 1};

  const ForwardTrace t = forward(p, x);
  const Matrix gx = input_gradient(p, t, ce_dlogits(p, x, y));

  const double h = 1e-6;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      const double saved = x(i, j);
      x(i, j) = saved + h;
      const double up = batch_ce(p, x, y);
      x(i, j) = saved - h;
      const double dn = batch_ce(p, x, y);
      x(i, j) = saved;
      CHECK(gx(i, j) == doctest::Approx((up - dn) / (2.0 * h)).epsilon(1e-5));
    }
}

TEST_CASE("hidden_backward agrees with the full backward pass") {
  Rng rng(8);
  ClassifierParams p = ClassifierParams::init(4, {6, 5}, 3, rng);
  Matrix x(5, 4);
  for (double& v : x.data) v = rng.normal();
  std::vector<int> y(5);
  for (int& c : y) c = rng.uniform_int(3);

  const ForwardTrace t = forward(p, x);
  const Matrix dlogits = ce_dlogits(p, x, y);
  const ParamGradients full = backward(p, t, dlogits, true);
  const ParamGradients hidden = hidden_backward(p, t, matmul(dlogits, p.w));
  for (int l = 0; l < 2; ++l) {
    CHECK(hidden.hidden_w[static_cast<size_t>(l)] == full.hidden_w[static_cast<size_t>(l)]);
    CHECK(hidden.hidden_b[static_cast<size_t>(l)] == full.hidden_b[static_cast<size_t>(l)]);
  }
  CHECK(hidden.w.rows == 0);

  const ParamGradients last_only = backward(p, t, dlogits, false);
  CHECK(last_only.hidden_w.empty());
  CHECK(last_only.w == full.w);
  CHECK(last_only.b == full.b);
}

TEST_CASE("sgd momentum recurrence, hand iterated") {
  Rng rng(9);
  ClassifierParams p = ClassifierParams::init(1, {}, 1, rng);
  p.w(0, 0) = 1.0;
  p.b[0] = 0.0;

  SgdState st;
  st.lr = 0.1;
  st.momentum = 0.9;
  st.weight_decay = 0.01;

  // Constant gradient 0.5 on w; replicate v <- m v + g + wd p, p <- p - lr v.
  double pw = 1.0, v = 0.0;
  for (int k = 0; k < 5; ++k) {
    ParamGradients g;
    g.w = Matrix(1, 1);
    g.w(0, 0) = 0.5;
    g.b = {0.0};
    sgd_step(p, g, st);

    v = 0.9 * v + 0.5 + 0.01 * pw;
    pw = pw - 0.1 * v;
    CHECK(p.w(0, 0) == pw);
  }
}

TEST_CASE("sgd with zero momentum and decay is a plain step") {
  Rng rng(10);
  ClassifierParams p = ClassifierParams::init(2, {}, 2, rng);
  const Matrix w0 = p.w;
  SgdState st;
  st.lr = 0.5;
  st.momentum = 0.0;
  st.weight_decay = 0.0;
  ParamGradients g;
  g.w = Matrix(2, 2, 1.0);
  g.b = {0.0, 0.0};
  sgd_step(p, g, st);
  for (size_t k = 0; k < p.w.data.size(); ++k) CHECK(p.w.data[k] == w0.data[k] - 0.5);
}

TEST_CASE("empty gradient blocks are skipped") {
  Rng rng(11);
  ClassifierParams p = ClassifierParams::init(2, {3}, 2, rng);
  const ClassifierParams before = p;
  SgdState st;
  ParamGradients g;  // nothing populated
  sgd_step(p, g, st);
  CHECK(p == before);
}

TEST_CASE("checkpoint round-trip is bitwise") {
  Rng rng(12);
  const ClassifierParams p = ClassifierParams::init(3, {4, 2}, 5, rng);
  const std::string prefix = temp_prefix("metasaug_model_ckpt");
  save_params(p, prefix);
  const ClassifierParams q = load_params(prefix);
  CHECK(p == q);
  std::remove((prefix + ".bin").c_str());
  std::remove((prefix + ".json").c_str());
}

TEST_CASE("loading a missing checkpoint raises IoError") {
  CHECK_THROWS_AS(load_params(temp_prefix("metasaug_missing_ckpt")), IoError);
}
