#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "laneseq/autodiff.hpp"
#include "laneseq/rng.hpp"

using namespace laneseq;
using ad::Graph;
using ad::Mat;
using ad::ParameterStore;
using ad::Value;

namespace {

void fill_random(Mat& m, Rng& rng, double scale = 1.0) {
  for (double& v : m.data) v = rng.uniform(-scale, scale);
}

// Central finite differences over every element of every tensor in the
// store, against the analytic gradient accumulated into tensor grads by
// `backward_fn`. `forward_fn` recomputes the scalar loss from the store's
// current values.
double max_rel_grad_error(ParameterStore& store,
                          const std::function<double()>& forward_fn,
                          const std::function<void()>& backward_fn,
                          double h = 1e-5) {
  store.zero_grads();
  backward_fn();
  double worst = 0.0;
  for (size_t t = 0; t < store.count(); ++t) {
    auto& tensor = store.at(t);
    for (size_t i = 0; i < tensor.value().size(); ++i) {
      const double saved = tensor.value().data[i];
      tensor.value().data[i] = saved + h;
      const double up = forward_fn();
      tensor.value().data[i] = saved - h;
      const double down = forward_fn();
      tensor.value().data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double adg = tensor.grad().data[i];
      const double rel =
          std::fabs(adg - fd) / std::max({1e-6, std::fabs(adg), std::fabs(fd)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Reduces an arbitrary matrix output to a scalar with fixed mixing vectors so
// every output element influences the loss.
Value mix_to_scalar(Graph& g, Value x, Rng& rng) {
  const Mat& m = g.value(x);
  Mat left(1, m.rows), right(m.cols, 1);
  fill_random(left, rng);
  fill_random(right, rng);
  return g.matmul(g.matmul(g.constant(left), x), g.constant(right));
}

void accumulate_store_grads(Graph& g, ParameterStore& store) {
  for (size_t t = 0; t < store.count(); ++t) {
    auto& tensor = store.at(t);
    if (const Mat* grad = g.param_grad(tensor))
      for (size_t i = 0; i < grad->size(); ++i)
        tensor.grad().data[i] += grad->data[i];
  }
}

}  // namespace

TEST_CASE("product rule on scalars: d(x*y)/dx = y") {
  ParameterStore store;
  auto& x = store.create("x", 1, 1);
  auto& y = store.create("y", 1, 1);
  x.value().at(0, 0) = 3.0;
  y.value().at(0, 0) = -7.5;

  Graph g;
  const Value loss = g.matmul(g.param(x), g.param(y));
  g.backward(loss);
  CHECK(g.param_grad(x)->at(0, 0) == doctest::Approx(-7.5));
  CHECK(g.param_grad(y)->at(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("matmul / matmul_nt / transpose gradients match finite differences") {
  Rng rng(101);
  ParameterStore store;
  auto& a = store.create("a", 3, 4);
  auto& b = store.create("b", 4, 5);
  auto& c = store.create("c", 6, 5);
  fill_random(a.value(), rng);
  fill_random(b.value(), rng);
  fill_random(c.value(), rng);

  const auto build = [&](Graph& g) {
    Rng mix(5);
    const Value ab = g.matmul(g.param(a), g.param(b));  // 3x5
    const Value abc = g.matmul_nt(ab, g.param(c));      // 3x6
    return mix_to_scalar(g, g.transpose(abc), mix);
  };
  const auto forward = [&]() {
    Graph g(false);
    return g.value(build(g)).at(0, 0);
  };
  const auto backward = [&]() {
    Graph g;
    g.backward(build(g));
    accumulate_store_grads(g, store);
  };
  CHECK(max_rel_grad_error(store, forward, backward) < 1e-6);
}

TEST_CASE("elementwise and structural op gradients match finite differences") {
  Rng rng(202);
  ParameterStore store;
  auto& w = store.create("w", 4, 6);
  auto& bias = store.create("bias", 1, 6);
  auto& gamma = store.create("gamma", 1, 3);
  auto& beta = store.create("beta", 1, 3);
  fill_random(w.value(), rng);
  fill_random(bias.value(), rng, 0.5);
  fill_random(gamma.value(), rng, 0.5);
  for (double& v : gamma.value().data) v += 1.0;
  fill_random(beta.value(), rng, 0.5);

  const auto build = [&](Graph& g) {
    Rng mix(9);
    Value x = g.add_rowvec(g.param(w), g.param(bias));  // 4x6
    Value gl = g.gelu(g.slice_cols(x, 0, 3));           // 4x3
    Value rl = g.relu(g.slice_cols(x, 3, 6));           // 4x3
    const std::vector<Value> parts{gl, rl};
    Value cat = g.concat_cols(parts);                   // 4x6
    Value resh = g.reshape(cat, 8, 3);                  // 8x3
    Value ln = g.layer_norm(resh, g.param(gamma), g.param(beta));
    Value sm = g.softmax_rows(g.scale(ln, 1.7));
    return mix_to_scalar(g, sm, mix);
  };
  const auto forward = [&]() {
    Graph g(false);
    return g.value(build(g)).at(0, 0);
  };
  const auto backward = [&]() {
    Graph g;
    g.backward(build(g));
    accumulate_store_grads(g, store);
  };
  CHECK(max_rel_grad_error(store, forward, backward) < 1e-6);
}

TEST_CASE("gather_rows and weighted cross-entropy gradients") {
  Rng rng(303);
  ParameterStore store;
  auto& table = store.create("table", 7, 5);
  auto& proj = store.create("proj", 5, 9);
  fill_random(table.value(), rng);
  fill_random(proj.value(), rng);
  const std::vector<int> ids{2, 0, 6, 2};
  const std::vector<int> targets{1, 8, 0, 4};
  const std::vector<double> weights{1.0, 0.0, 1.0, 1.0};

  for (bool normalize : {true, false}) {
    const auto forward = [&]() {
      Graph g(false);
      Value emb = g.gather_rows(g.param(table), ids);
      Value logits = g.matmul(emb, g.param(proj));
      return g
          .value(g.weighted_cross_entropy(logits, targets, weights, normalize))
          .at(0, 0);
    };
    const auto backward = [&]() {
      Graph g;
      Value emb = g.gather_rows(g.param(table), ids);
      Value logits = g.matmul(emb, g.param(proj));
      g.backward(
          g.weighted_cross_entropy(logits, targets, weights, normalize));
      accumulate_store_grads(g, store);
    };
    CHECK(max_rel_grad_error(store, forward, backward) < 1e-6);
  }
}

TEST_CASE("weighted cross-entropy: uniform logits and zero-weight targets") {
  Graph g;
  ParameterStore store;
  auto& logits = store.create("logits", 3, 10);
  const Value l = g.param(logits);
  const std::vector<int> targets{4, 2, 9};

  // Uniform logits: loss is ln(V) per weighted position.
  const Value loss =
      g.weighted_cross_entropy(l, targets, {1.0, 1.0, 1.0}, true);
  CHECK(g.value(loss).at(0, 0) == doctest::Approx(std::log(10.0)));

  // Zero-weight positions contribute nothing even with extreme logits.
  Graph g2;
  Mat crazy(3, 10);
  crazy.at(1, 2) = 1e6;
  const Value loss2 = g2.weighted_cross_entropy(g2.constant(crazy), targets,
                                                {1.0, 0.0, 1.0}, true);
  CHECK(g2.value(loss2).at(0, 0) == doctest::Approx(std::log(10.0)));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(404);
  Graph g;
  Mat x(5, 8);
  fill_random(x, rng, 30.0);
  const Value sm = g.softmax_rows(g.constant(x));
  for (int r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 8; ++c) sum += g.value(sm).at(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("graph reuse after release throws") {
  ParameterStore store;
  auto& x = store.create("x", 2, 2);
  Graph g;
  const Value v = g.param(x);
  g.release();
  CHECK(g.released());
  CHECK_THROWS_AS((void)g.value(v), std::logic_error);
  CHECK_THROWS_AS((void)g.param(x), std::logic_error);
  CHECK_THROWS_AS((void)g.param_grad(x), std::logic_error);
}

TEST_CASE("double backward and forward-only backward throw") {
  ParameterStore store;
  auto& x = store.create("x", 1, 1);
  x.value().at(0, 0) = 2.0;

  Graph g;
  const Value v = g.matmul(g.param(x), g.param(x));
  g.backward(v);
  CHECK_THROWS_AS(g.backward(v), std::logic_error);

  Graph fwd(false);
  const Value v2 = fwd.matmul(fwd.param(x), fwd.param(x));
  CHECK(fwd.value(v2).at(0, 0) == doctest::Approx(4.0));
  CHECK_THROWS_AS(fwd.backward(v2), std::logic_error);
}

TEST_CASE("gradcheck harness detects an injected sign error") {
  // Mutation sanity for the finite-difference checker itself: flipping the
  // sign of one analytic gradient entry must trip the tolerance.
  Rng rng(55);
  ParameterStore store;
  auto& a = store.create("a", 2, 3);
  fill_random(a.value(), rng);

  const auto forward = [&]() {
    Graph g(false);
    Rng mix(3);
    const Value v = mix_to_scalar(g, g.gelu(g.param(a)), mix);
    return g.value(v).at(0, 0);
  };
  const auto backward_flipped = [&]() {
    Graph g;
    Rng mix(3);
    const Value v = mix_to_scalar(g, g.gelu(g.param(a)), mix);
    g.backward(v);
    const Mat* grad = g.param_grad(a);
    for (size_t i = 0; i < grad->size(); ++i)
      a.grad().data[i] += (i == 2 ? -1.0 : 1.0) * grad->data[i];
  };
  CHECK(max_rel_grad_error(store, forward, backward_flipped) > 1e-3);
}

TEST_CASE("parameter store bookkeeping") {
  ParameterStore store;
  store.create("first", 2, 3);
  store.create("second", 1, 4);
  CHECK(store.total_elements() == 10);
  CHECK(store.contains("first"));
  CHECK(!store.contains("third"));
  CHECK_THROWS_AS((void)store.create("first", 1, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)store.get("missing"), std::invalid_argument);
  CHECK(store.at(0).name() == "first");
  CHECK(store.at(1).name() == "second");

  auto flat = store.flat_values();
  REQUIRE(flat.size() == 10);
  flat[3] = 42.0;
  store.set_flat_values(flat);
  CHECK(store.get("first").value().data[3] == 42.0);
}
