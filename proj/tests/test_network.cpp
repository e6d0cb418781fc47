#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "helpers.hpp"
#include "tbn/network.hpp"

using namespace tbn;

namespace {

Dataset toy_regression(std::size_t n, std::size_t d, std::uint64_t seed,
                       double (*fn)(std::span<const double>)) {
  Dataset ds;
  ds.n_rows = n;
  ds.n_features = d;
  ds.X.resize(n * d);
  Rng rng = make_rng(seed);
  for (double& v : ds.X) v = uniform_real(rng, -1.0, 1.0);
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.y[i] = fn(ds.row(i));
  return ds;
}

double sum_squares(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

// Whole-model finite differences through the flat parameter vector.
void check_model_gradients(Model& m, const Dataset& ds,
                           std::span<const std::size_t> rows,
                           TrainConfig::Loss loss, double tol = 1e-4) {
  ModelGrads grads = make_grads_shape(m);
  batch_backward(m, ds, rows, loss, grads);
  std::vector<double> analytic = flatten_grads(m, grads);
  std::vector<double> params = flatten_params(m);
  REQUIRE(analytic.size() == params.size());
  REQUIRE(params.size() == m.param_count);
  const double h = 1e-5;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> pp = params;
    pp[i] += h;
    unflatten_params(m, pp);
    ModelGrads dummy = make_grads_shape(m);
    double fp = batch_backward(m, ds, rows, loss, dummy);
    pp[i] -= 2 * h;
    unflatten_params(m, pp);
    ModelGrads dummy2 = make_grads_shape(m);
    double fm = batch_backward(m, ds, rows, loss, dummy2);
    unflatten_params(m, params);
    double fd = (fp - fm) / (2 * h);
    REQUIRE(test::close_rel(analytic[i], fd, tol));
  }
}

}  // namespace

TEST_CASE("structure strings parse and print") {
  CHECK(parse_structure("5-3-1") == std::vector<int>{5, 3, 1});
  CHECK(structure_string({12, 8, 5, 3, 1}) == "12-8-5-3-1");
  CHECK_THROWS_AS(parse_structure(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_structure("a-b"), std::invalid_argument);

  NetworkSpec bad;
  bad.layer_widths = {0, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter counts: linear baselines") {
  NetworkSpec ln;
  ln.layer_widths = {2, 1};
  ln.neuron_kind = NeuronKind::Linear;
  // The published 2-1 (25) pairing implies ten input features.
  CHECK(analytic_param_count(ln, 10, {}) == 25);

  NetworkSpec deep;
  deep.layer_widths = {5, 3, 1};
  deep.neuron_kind = NeuronKind::Linear;
  CHECK(analytic_param_count(deep, 8, {}) == 67);

  NetworkSpec five;
  five.layer_widths = {5, 1};
  five.neuron_kind = NeuronKind::Linear;
  CHECK(analytic_param_count(five, 10, {}) == 61);
}

TEST_CASE("parameter counts: task networks") {
  PolyTemplate two_one{{{2, 6.0}, {1, 5.0}}, 10};
  NetworkSpec tn1;
  tn1.layer_widths = {1};
  tn1.neuron_kind = NeuronKind::TaskPoly;
  // Single neuron over d=10 with degrees {2,1}: the published 1 (21).
  CHECK(analytic_param_count(tn1, 10, two_one) == 21);

  NetworkSpec tn21;
  tn21.layer_widths = {2, 1};
  tn21.neuron_kind = NeuronKind::TaskPoly;
  CHECK(analytic_param_count(tn21, 10, two_one) == 47);  // 2*21 + 5

  NetworkSpec tn531;
  tn531.layer_widths = {5, 3, 1};
  tn531.neuron_kind = NeuronKind::TaskPoly;
  CHECK(analytic_param_count(tn531, 10, two_one) == 145);

  // Our analytic count for the single-neuron p1 parameterization at d=4.
  PolyTemplate p1_tpl{{{2, 6.0}, {0, 1.0}}, 10};
  NetworkSpec single;
  single.layer_widths = {1};
  single.neuron_kind = NeuronKind::TaskPoly;
  CHECK(analytic_param_count(single, 4, p1_tpl) == 5);
}

TEST_CASE("build_network records and audits the parameter count") {
  Rng rng = make_rng(3);
  PolyTemplate tpl{{{2, 1.0}, {1, 1.0}}, 10};
  NetworkSpec spec;
  spec.layer_widths = {2, 1};
  spec.neuron_kind = NeuronKind::TaskPoly;
  spec.activation = Activation::Sigmoid;
  Model m = build_network(spec, 10, rng, tpl);
  CHECK(m.param_count == 47);
  CHECK(m.layers.size() == 2);
  CHECK(m.layers[0].size() == 2);
  CHECK(m.layers[1][0].input_dim == 2);

  NetworkSpec ln;
  ln.layer_widths = {3, 1};
  ln.neuron_kind = NeuronKind::Linear;
  Model lm = build_network(ln, 4, rng);
  CHECK(lm.param_count == 3 * 5 + 4);

  // Task networks demand a usable template.
  NetworkSpec tn;
  tn.layer_widths = {1};
  tn.neuron_kind = NeuronKind::TaskPoly;
  CHECK_THROWS_AS(build_network(tn, 4, rng, PolyTemplate{}),
                  std::invalid_argument);
}

TEST_CASE("forward: constant readout and sigmoid midpoint") {
  NetworkSpec spec;
  spec.layer_widths = {1};
  spec.neuron_kind = NeuronKind::Linear;
  Rng rng = make_rng(1);
  Model m = build_network(spec, 3, rng, {}, nullptr, InitRule::zeros());
  m.layers[0][0].bias = 4.25;
  ForwardCache cache;
  std::vector<double> x = {0.1, -0.5, 2.0};
  CHECK(forward_sample(m, x, cache)[0] == Catch::Approx(4.25));

  // A zero-weight task neuron under sigmoid outputs exactly 0.5.
  PolyTemplate sq{{{2, 1.0}}, 10};
  NetworkSpec ts;
  ts.layer_widths = {1};
  ts.neuron_kind = NeuronKind::TaskPoly;
  ts.activation = Activation::Sigmoid;
  ts.activate_output = true;
  Model tm = build_network(ts, 2, rng, sq, nullptr, InitRule::zeros());
  std::vector<double> x2 = {0.7, -0.3};
  CHECK(forward_sample(tm, x2, cache)[0] == Catch::Approx(0.5));
}

TEST_CASE("forward matches a straightforward per-sample loop oracle") {
  Rng rng = make_rng(9);
  NetworkSpec spec;
  spec.layer_widths = {3, 1};
  spec.neuron_kind = NeuronKind::Linear;
  spec.activation = Activation::Relu;
  Model m = build_network(spec, 4, rng);

  ForwardCache cache;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x(4);
    for (double& v : x) v = uniform_real(rng, -2.0, 2.0);
    // Independent loop: hidden relu(w.x + b), then output w.h + b.
    std::vector<double> h(3);
    for (int j = 0; j < 3; ++j) {
      double z = m.layers[0][static_cast<std::size_t>(j)].bias;
      for (int k = 0; k < 4; ++k)
        z += m.layers[0][static_cast<std::size_t>(j)].weights[0][static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(k)];
      h[static_cast<std::size_t>(j)] = z > 0 ? z : 0;
    }
    double out = m.layers[1][0].bias;
    for (int j = 0; j < 3; ++j)
      out += m.layers[1][0].weights[0][static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j)];
    double got = forward_sample(m, x, cache)[0];
    REQUIRE(test::close_rel(got, out, 1e-10));
  }
}

TEST_CASE("backward: zero loss gives zero gradients") {
  // Fit y = 2*x0 - x1 + 0.5 exactly with a single linear neuron.
  NetworkSpec spec;
  spec.layer_widths = {1};
  spec.neuron_kind = NeuronKind::Linear;
  Rng rng = make_rng(2);
  Model m = build_network(spec, 2, rng, {}, nullptr, InitRule::zeros());
  m.layers[0][0].weights[0] = {2.0, -1.0};
  m.layers[0][0].bias = 0.5;

  Dataset ds = toy_regression(20, 2, 3, [](std::span<const double> x) {
    return 2.0 * x[0] - x[1] + 0.5;
  });
  std::vector<std::size_t> rows(20);
  std::iota(rows.begin(), rows.end(), 0);
  ModelGrads grads = make_grads_shape(m);
  double loss = batch_backward(m, ds, rows, TrainConfig::Loss::Mse, grads);
  CHECK(loss == Catch::Approx(0.0).margin(1e-20));
  for (double g : flatten_grads(m, grads))
    CHECK(g == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("cross-entropy gradient equals softmax minus one-hot") {
  std::vector<double> logits = {0.2, -1.0, 1.5};
  std::vector<double> dout(3);
  double loss = loss_and_grad(TrainConfig::Loss::CrossEntropy, logits, 2.0, dout);
  double z = std::exp(0.2) + std::exp(-1.0) + std::exp(1.5);
  for (int c = 0; c < 3; ++c) {
    double p = std::exp(logits[static_cast<std::size_t>(c)]) / z;
    double want = p - (c == 2 ? 1.0 : 0.0);
    CHECK(dout[static_cast<std::size_t>(c)] == Catch::Approx(want));
  }
  CHECK(loss == Catch::Approx(-std::log(std::exp(1.5) / z)));
}

TEST_CASE("whole-model gradients match finite differences") {
  Rng rng = make_rng(31);
  const NeuronKind kinds[] = {
      NeuronKind::TaskPoly, NeuronKind::TaskTrig, NeuronKind::Linear,
      NeuronKind::QuadFan,  NeuronKind::QuadXu,   NeuronKind::QuadBu,
      NeuronKind::QuadGoyal};
  Dataset ds = toy_regression(6, 3, 8, sum_squares);
  std::vector<std::size_t> rows = {0, 1, 2, 3, 4, 5};

  PolyTemplate tpl{{{2, 1.0}, {1, 1.0}}, 10};
  TrigTemplate trig = make_trig_template(
      combine(NodeKind::Cos,
              combine(NodeKind::Sub, leaf_var(), leaf_const(0.4))),
      true);

  for (NeuronKind kind : kinds) {
    NetworkSpec spec;
    spec.layer_widths = {2, 1};
    spec.neuron_kind = kind;
    spec.activation = Activation::Sigmoid;
    Model m = build_network(spec, 3, rng, tpl, &trig);
    REQUIRE(m.param_count <= 100);
    check_model_gradients(m, ds, rows, TrainConfig::Loss::Mse);
  }

  // Classification head with cross-entropy.
  Dataset cls = toy_regression(6, 3, 12, [](std::span<const double> x) {
    return x[0] > 0 ? 1.0 : 0.0;
  });
  cls.task = Task::Classification;
  cls.class_labels = {"a", "b"};
  NetworkSpec spec;
  spec.layer_widths = {3, 2};
  spec.neuron_kind = NeuronKind::Linear;
  spec.activation = Activation::Sigmoid;
  spec.task = Task::Classification;
  Model m = build_network(spec, 3, rng);
  check_model_gradients(m, cls, rows, TrainConfig::Loss::CrossEntropy);

  // ReLU path, away from the kinks.
  NetworkSpec rspec;
  rspec.layer_widths = {2, 1};
  rspec.neuron_kind = NeuronKind::Linear;
  rspec.activation = Activation::Relu;
  Model rm = build_network(rspec, 3, rng);
  ForwardCache cache;
  bool safe = true;
  for (std::size_t r : rows) {
    forward_sample(rm, ds.row(r), cache);
    for (double z : cache.preacts[0])
      if (std::abs(z) < 1e-3) safe = false;
  }
  if (safe) check_model_gradients(rm, ds, rows, TrainConfig::Loss::Mse);
}

TEST_CASE("optimizer closed forms") {
  OptimizerState st;
  st.reset(TrainConfig::Optimizer::RmsProp, 1);
  std::vector<double> p = {1.0};
  std::vector<double> zero = {0.0};
  rmsprop_step(p, zero, st, 0.1);
  CHECK(p[0] == 1.0);

  // First RMSProp step: delta = -lr * g / (sqrt(0.1 g^2) + eps)
  st.reset(TrainConfig::Optimizer::RmsProp, 1);
  p = {1.0};
  std::vector<double> g = {0.3};
  rmsprop_step(p, g, st, 0.01);
  double want = 1.0 - 0.01 * 0.3 / (std::sqrt(0.1 * 0.09) + 1e-8);
  CHECK(p[0] == Catch::Approx(want).epsilon(1e-12));

  // Adam with constant gradient approaches steps of lr * sign(g).
  OptimizerState adam;
  adam.reset(TrainConfig::Optimizer::Adam, 1);
  std::vector<double> q = {0.0};
  std::vector<double> cg = {0.7};
  double prev = q[0];
  double step = 0.0;
  for (int i = 0; i < 2000; ++i) {
    adam_step(q, cg, adam, 0.01);
    step = prev - q[0];
    prev = q[0];
  }
  CHECK(step == Catch::Approx(0.01).epsilon(0.01));

  OptimizerState zeroadam;
  zeroadam.reset(TrainConfig::Optimizer::Adam, 1);
  std::vector<double> r = {2.0};
  adam_step(r, zero, zeroadam, 0.1);
  CHECK(r[0] == 2.0);
}

TEST_CASE("zero-epoch training leaves the model untouched") {
  Rng rng = make_rng(4);
  NetworkSpec spec;
  spec.layer_widths = {2, 1};
  spec.neuron_kind = NeuronKind::Linear;
  Model m = build_network(spec, 3, rng);
  std::vector<double> before = flatten_params(m);
  Dataset ds = toy_regression(10, 3, 5, sum_squares);
  TrainConfig cfg;
  cfg.epochs = 0;
  TrainReport rep = train(m, ds, cfg);
  CHECK(flatten_params(m) == before);
  CHECK(rep.history.empty());
}

TEST_CASE("full-batch descent on a convex problem decreases the loss") {
  Rng rng = make_rng(6);
  NetworkSpec spec;
  spec.layer_widths = {1};
  spec.neuron_kind = NeuronKind::Linear;
  Model m = build_network(spec, 2, rng);
  Dataset ds = toy_regression(30, 2, 7, [](std::span<const double> x) {
    return 3.0 * x[0] - 0.5 * x[1] + 1.0;
  });
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::Sgd;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 30;  // full batch
  cfg.epochs = 60;
  TrainReport rep = train(m, ds, cfg);
  for (std::size_t i = 1; i < rep.history.size(); ++i)
    REQUIRE(rep.history[i].train_loss <= rep.history[i - 1].train_loss + 1e-12);
}

TEST_CASE("training is deterministic under a fixed seed") {
  Dataset ds = toy_regression(50, 3, 11, sum_squares);
  split_dataset(ds, {0.8, 0.2}, 2);
  auto run = [&] {
    Rng rng = make_rng(5);
    PolyTemplate tpl{{{2, 1.0}}, 10};
    NetworkSpec spec;
    spec.layer_widths = {1};
    spec.neuron_kind = NeuronKind::TaskPoly;
    Model m = build_network(spec, 3, rng, tpl);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.seed = 17;
    train(m, ds, cfg);
    return flatten_params(m);
  };
  CHECK(run() == run());
}

TEST_CASE("divergence aborts with history attached") {
  Rng rng = make_rng(8);
  NetworkSpec spec;
  spec.layer_widths = {2, 1};
  spec.neuron_kind = NeuronKind::QuadBu;
  Model m = build_network(spec, 3, rng);
  Dataset ds = toy_regression(40, 3, 9, sum_squares);
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::Sgd;
  cfg.learning_rate = 1e12;
  cfg.epochs = 50;
  try {
    train(m, ds, cfg);
    FAIL("expected divergence");
  } catch (const TrainDivergence& e) {
    SUCCEED();
  }
}

TEST_CASE("a single task neuron realizes its own generator") {
  // Normalized p1-style data lies inside the model class of a {2} neuron.
  SyntheticSpec sspec;
  sspec.poly = synthetic_poly(1);
  sspec.d = 4;
  sspec.n_points = 300;
  sspec.seed = 21;
  Dataset ds = gen_synthetic(sspec);
  split_dataset(ds, {0.8, 0.2}, 3);
  normalize_minmax(ds);
  normalize_target_minmax(ds);

  PolyTemplate tpl{{{2, 6.0}, {0, 1.0}}, 10};
  NetworkSpec spec;
  spec.layer_widths = {1};
  spec.neuron_kind = NeuronKind::TaskPoly;
  Rng rng = make_rng(2);
  Model m = build_network(spec, 4, rng, tpl);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 5e-3;
  cfg.seed = 4;
  TrainReport rep = train(m, ds, cfg);
  CHECK(rep.final_test_metric < 1e-3);
}

TEST_CASE("classification accuracy and tie-breaking") {
  // Linearly separable two-class toy problem.
  const std::size_t n = 200;
  Dataset ds;
  ds.n_rows = n;
  ds.n_features = 2;
  ds.X.resize(2 * n);
  ds.y.resize(n);
  ds.task = Task::Classification;
  ds.class_labels = {"neg", "pos"};
  Rng rng = make_rng(10);
  for (std::size_t i = 0; i < n; ++i) {
    double a = uniform_real(rng, -1.0, 1.0);
    double b = uniform_real(rng, -1.0, 1.0);
    ds.X[2 * i] = a;
    ds.X[2 * i + 1] = b;
    ds.y[i] = a + b > 0 ? 1.0 : 0.0;
  }
  split_dataset(ds, {0.8, 0.2}, 4);

  NetworkSpec spec;
  spec.layer_widths = {4, 2};
  spec.neuron_kind = NeuronKind::Linear;
  spec.activation = Activation::Relu;
  spec.task = Task::Classification;
  Rng mrng = make_rng(3);
  Model m = build_network(spec, 2, mrng);
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::Adam;
  cfg.loss = TrainConfig::Loss::CrossEntropy;
  cfg.epochs = 250;
  cfg.learning_rate = 5e-3;
  TrainReport rep = train(m, ds, cfg);
  CHECK(rep.final_test_metric >= 0.9);

  // All-zero logits: argmax ties resolve to the lowest class index.
  Model zero = build_network(spec, 2, mrng, {}, nullptr, InitRule::zeros());
  std::vector<std::size_t> rows(ds.n_rows);
  std::iota(rows.begin(), rows.end(), 0);
  double acc = evaluate(zero, ds, rows);
  std::size_t zeros_count = 0;
  for (double v : ds.y)
    if (v == 0.0) ++zeros_count;
  CHECK(acc == Catch::Approx(static_cast<double>(zeros_count) /
                             static_cast<double>(ds.n_rows)));
}

TEST_CASE("checkpoint resume reproduces uninterrupted training exactly") {
  Dataset ds = toy_regression(40, 3, 13, sum_squares);
  split_dataset(ds, {0.8, 0.2}, 5);
  PolyTemplate tpl{{{2, 1.0}, {1, 1.0}}, 10};
  NetworkSpec spec;
  spec.layer_widths = {2, 1};
  spec.neuron_kind = NeuronKind::TaskPoly;
  spec.activation = Activation::Sigmoid;

  TrainConfig full;
  full.epochs = 12;
  full.seed = 30;

  Rng r1 = make_rng(7);
  Model straight = build_network(spec, 3, r1, tpl);
  train(straight, ds, full);

  Rng r2 = make_rng(7);
  Model resumed = build_network(spec, 3, r2, tpl);
  TrainState st;
  TrainConfig half = full;
  half.epochs = 6;
  train(resumed, ds, half, &st);

  auto ckpt = std::filesystem::temp_directory_path() / "tbn_ckpt_test.json";
  save_checkpoint(ckpt.string(), resumed, &st);
  Model loaded;
  TrainState st2;
  load_checkpoint(ckpt.string(), loaded, st2);
  CHECK(st2.epoch == 6);
  train(loaded, ds, full, &st2);  // continues to epoch 12

  CHECK(flatten_params(loaded) == flatten_params(straight));
}

TEST_CASE("model JSON round trip preserves behavior") {
  Rng rng = make_rng(15);
  PolyTemplate tpl{{{3, 1.0}, {1, 1.0}}, 10};
  NetworkSpec spec;
  spec.layer_widths = {2, 1};
  spec.neuron_kind = NeuronKind::TaskPoly;
  spec.activation = Activation::Sigmoid;
  Model m = build_network(spec, 4, rng, tpl);
  Model back = model_from_json(to_json(m));
  CHECK(back.param_count == m.param_count);
  ForwardCache c1, c2;
  std::vector<double> x = {0.1, -0.2, 0.3, 0.9};
  CHECK(forward_sample(back, x, c1)[0] == forward_sample(m, x, c2)[0]);
}

TEST_CASE("history CSV is written") {
  std::vector<EpochStats> h = {{1, 0.5, 0.4}, {2, 0.25, 0.2}};
  auto path = std::filesystem::temp_directory_path() / "tbn_hist_test.csv";
  write_history_csv(path.string(), h);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,test_metric");
  std::getline(in, line);
  CHECK(line == "1,0.5,0.4");
}
