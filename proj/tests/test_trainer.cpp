#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace bingear;

namespace {

struct GradCase {
  Dataset ds;
  NormalizedAdjacency adj;
  std::size_t L;
  LayerWeights w;
  BasicMatrix<double> base;
  TeacherCache cache;
};

GradCase grad_case(std::uint64_t inst) {
  StreamRng rng(31, "grad-case", {inst});
  const Id M = 2 + static_cast<Id>(rng() % 3), N = 3 + static_cast<Id>(rng() % 3);
  std::vector<IdList> tr(M), te(M);
  for (Id u = 0; u < M; ++u) {
    for (Id i = 0; i < N; ++i)
      if (rng.uniform01() < 0.5f) tr[u].push_back(i);
    if (tr[u].empty()) tr[u].push_back(static_cast<Id>(rng() % N));
    if (tr[u].size() == N) tr[u].pop_back();
  }
  GradCase g{Dataset::from_lists(M, N, tr, te), {}, 1 + rng() % 2, {}, {}, {}};
  g.adj = build_normalized_adjacency(g.ds);
  g.w = layer_weights(g.L);
  g.base = testing_util::random_matrix<double>(g.ds.num_nodes(), 2 + rng() % 7, inst, 0.5);
  g.cache = build_teacher_cache(propagate(g.base.cast<float>(), g.adj, g.L), g.ds, 2, g.w);
  return g;
}

double max_rel_grad_error(const GradCase& g, const ObjectiveOptions& o) {
  const auto edges = g.ds.train_edges();
  BasicMatrix<double> grad;
  objective<double>(g.base, g.adj, g.ds, g.L, g.w, &g.cache, edges, o, {1, 2}, &grad);
  double worst = 0;
  const double h = 1e-5;
  for (std::size_t k = 0; k < g.base.flat().size(); ++k) {
    auto bp = g.base, bm = g.base;
    bp.flat()[k] += h;
    bm.flat()[k] -= h;
    const double fp = objective<double>(bp, g.adj, g.ds, g.L, g.w, &g.cache, edges, o, {1, 2}, nullptr).total;
    const double fm = objective<double>(bm, g.adj, g.ds, g.L, g.w, &g.cache, edges, o, {1, 2}, nullptr).total;
    const double num = (fp - fm) / (2 * h), an = grad.flat()[k];
    worst = std::max(worst, std::fabs(num - an) / std::max({std::fabs(num), std::fabs(an), 1e-6}));
  }
  return worst;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.dim = 8;
  cfg.layers = 2;
  cfg.batch_size = 64;
  cfg.lr = 5e-3;
  cfg.epochs = 4;
  cfg.student_epochs = 2;
  cfg.eval_every = 2;
  cfg.R = 5;
  cfg.J = 4;
  cfg.val_fraction = 0.1;
  return cfg;
}

}  // namespace

TEST(Trainer, BprPartials) {
  const auto t = bpr_pair_loss(1.0, 0.25);
  EXPECT_NEAR(t.value, -std::log(sigmoid(0.75)), 1e-12);
  const double h = 1e-6;
  EXPECT_NEAR(t.d_pos, (bpr_pair_loss(1.0 + h, 0.25).value - bpr_pair_loss(1.0 - h, 0.25).value) / (2 * h), 1e-8);
  EXPECT_NEAR(t.d_neg, (bpr_pair_loss(1.0, 0.25 + h).value - bpr_pair_loss(1.0, 0.25 - h).value) / (2 * h), 1e-8);
  EXPECT_TRUE(std::isfinite(bpr_pair_loss(-1e9, 1e9).value));
}

TEST(Trainer, SignGradIsErfDerivative) {
  for (double gamma : {0.5, 1.0, 2.0})
    for (int k = -300; k <= 300; ++k) {
      const double phi = k / 100.0, h = 1e-5;
      const double fd = (std::erf(gamma * (phi + h)) - std::erf(gamma * (phi - h))) / (2 * h);
      ASSERT_NEAR(sign_grad(phi, gamma), fd, 1e-6);
    }
  EXPECT_NEAR(sign_grad(0.0, 1.0), 2.0 / std::sqrt(std::numbers::pi), 1e-15);
}

TEST(Trainer, AdamFirstStepMovesByLearningRate) {
  Adam<double> adam(3, 0.01);
  std::vector<double> p{1.0, 1.0, 1.0};
  const std::vector<double> g{0.5, -2.0, 0.0};
  adam.step(p, g);
  EXPECT_NEAR(p[0], 0.99, 1e-9);
  EXPECT_NEAR(p[1], 1.01, 1e-9);
  EXPECT_EQ(p[2], 1.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Trainer, SignForwardIsScaledSigns) {
  const Dataset ds = testing_util::random_dataset(6, 5, 0.4, 3);
  const auto adj = build_normalized_adjacency(ds);
  const auto base = testing_util::random_matrix<float>(ds.num_nodes(), 7, 3);
  const auto f = student_forward(base, adj, 2, Binarizer::sign, 1.0);
  const auto table = build_binarized_tables(f.v);
  std::vector<float> rec(7);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t x = 0; x < ds.num_nodes(); ++x) {
      table.reconstruct(x, l, rec);
      for (std::size_t j = 0; j < 7; ++j) EXPECT_FLOAT_EQ(f.b.at(l, x)[j], rec[j]);
    }
  const auto none = student_forward(base, adj, 2, Binarizer::none, 1.0);
  EXPECT_EQ(none.b.layers[2].flat()[0], none.v.layers[2].flat()[0]);
}

TEST(Trainer, ObjectiveGradientMatchesFiniteDifferences) {
  ObjectiveOptions o;
  o.binarizer = Binarizer::erf;
  o.reg = 0.01;
  o.synth = {3, 1.0f, 5};
  for (std::uint64_t inst = 0; inst < 6; ++inst) EXPECT_LT(max_rel_grad_error(grad_case(inst), o), 1e-3) << inst;
}

TEST(Trainer, FullPrecisionGradientMatchesFiniteDifferences) {
  ObjectiveOptions o;
  o.binarizer = Binarizer::none;
  o.include_id1 = o.include_id2 = false;
  o.reg = 0.01;
  o.synth = {3, 1.0f, 6};
  for (std::uint64_t inst = 10; inst < 13; ++inst) EXPECT_LT(max_rel_grad_error(grad_case(inst), o), 1e-3) << inst;
  o.synthesize = false;
  EXPECT_LT(max_rel_grad_error(grad_case(20), o), 1e-3);
}

TEST(Trainer, ObjectiveTermScaling) {
  // One pair, no distillation, zero reg: value is -ln sigma(y_pos - y_neg).
  const Dataset ds = Dataset::from_lists(1, 2, {{0}}, {{}});
  const auto adj = build_normalized_adjacency(ds);
  const auto base = testing_util::random_matrix<double>(3, 4, 2);
  ObjectiveOptions o;
  o.binarizer = Binarizer::none;
  o.include_id1 = o.include_id2 = false;
  o.synthesize = false;
  o.reg = 0.0;
  const std::vector<Edge> batch{{0, 0}};
  const auto w = layer_weights(1);
  const auto t = objective<double>(base, adj, ds, 1, w, nullptr, batch, o, {}, nullptr);
  const auto le = propagate(base, adj, 1);
  double yp = 0, yn = 0;
  for (std::size_t l = 0; l < 2; ++l) {
    yp += w.squared(l) * dot(le.at(l, 0), le.at(l, 1));
    yn += w.squared(l) * dot(le.at(l, 0), le.at(l, 2));
  }
  EXPECT_NEAR(t.bpr, -std::log(sigmoid(yp - yn)), 1e-12);
  o.reg = 0.5;
  const auto r = objective<double>(base, adj, ds, 1, w, nullptr, batch, o, {}, nullptr);
  double sq = 0;
  for (double x : base.flat()) sq += x * x;
  EXPECT_NEAR(r.reg, 0.5 * sq, 1e-12);
}

TEST(Trainer, DistillationNeedsCache) {
  const Dataset ds = testing_util::random_dataset(3, 4, 0.5, 1);
  const auto adj = build_normalized_adjacency(ds);
  const auto base = testing_util::random_matrix<float>(ds.num_nodes(), 4, 1);
  const auto edges = ds.train_edges();
  EXPECT_THROW(objective<float>(base, adj, ds, 1, layer_weights(1), nullptr, edges, ObjectiveOptions{}, {}, nullptr),
               Error);
}

TEST(Trainer, ValidationSplitKeepsEveryUser) {
  const Dataset ds = testing_util::random_dataset(200, 50, 0.1, 7);
  const auto s = make_training_split(ds, 0.3, 1);
  std::size_t held = 0;
  for (Id u = 0; u < ds.num_users; ++u) {
    EXPECT_FALSE(s.train.train[u].empty());
    IdList merged = s.train.train[u];
    merged.insert(merged.end(), s.train.test[u].begin(), s.train.test[u].end());
    std::sort(merged.begin(), merged.end());
    EXPECT_EQ(merged, ds.train[u]);
    held += s.train.test[u].size();
  }
  const double frac = static_cast<double>(held) / static_cast<double>(ds.train_count());
  EXPECT_NEAR(frac, 0.3, 0.05);
  const auto again = make_training_split(ds, 0.3, 1);
  EXPECT_EQ(again.train, s.train);
  const auto none = make_training_split(ds, 0.0, 1);
  EXPECT_EQ(none.train.test_count(), 0u);
}

TEST(Trainer, AblationLabels) {
  Ablation a;
  EXPECT_EQ(a.label(), "full");
  a.disable_id2 = true;
  EXPECT_EQ(a.label(), "w/o ID2");
  a.disable_synth_student = true;
  EXPECT_EQ(a.label(), "w/o ID2, SS-B");
  Ablation b;
  b.disable_id1 = true;
  b.disable_synth_teacher = true;
  EXPECT_EQ(b.label(), "w/o ID1, SS-FP");
}

TEST(Trainer, ConfigValidation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  auto expect_usage = [](TrainConfig c) {
    try {
      c.validate();
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::usage);
    }
  };
  auto c = cfg;
  c.layers = 0;
  expect_usage(c);
  c = cfg;
  c.c = 0;
  expect_usage(c);
  c = cfg;
  c.J = 0;
  expect_usage(c);
  c = cfg;
  c.lr = -1;
  expect_usage(c);
}

TEST(Trainer, TeacherCheckpointRoundTrip) {
  TeacherCheckpoint c{3, 4, 2, 0x1234, 9, testing_util::random_matrix<float>(7, 5, 1)};
  const auto back = decode_teacher(io::Reader(encode_teacher(c)));
  EXPECT_EQ(back, c);
  auto bytes = encode_teacher(c);
  bytes.pop_back();
  EXPECT_THROW(decode_teacher(io::Reader(bytes)), Error);
}

TEST(Trainer, TrainingIsDeterministicAndLearns) {
  const Dataset ds = testing_util::random_dataset(60, 40, 0.15, 12, 0.05);
  const TrainConfig cfg = tiny_config();
  const auto split = make_training_split(ds, cfg.val_fraction, cfg.seed);
  std::vector<std::string> lines;
  TrainHooks hooks;
  hooks.on_record = [&](const MetricsRecord& r) { lines.push_back(metrics_json(r, 77, cfg.seed)); };
  const auto t1 = train_teacher(split, cfg, hooks);
  const auto t2 = train_teacher(split, cfg);
  EXPECT_EQ(t1.base.flat().size(), t2.base.flat().size());
  EXPECT_TRUE(std::equal(t1.base.flat().begin(), t1.base.flat().end(), t2.base.flat().begin()));
  ASSERT_EQ(t1.log.size(), cfg.epochs + 1);
  EXPECT_TRUE(t1.log[0].evaluated);
  EXPECT_GT(t1.log[1].terms.bpr, 0.0);
  EXPECT_LT(t1.log.back().terms.bpr, t1.log[1].terms.bpr);
  ASSERT_EQ(lines.size(), t1.log.size());
  const auto j = nlohmann::json::parse(lines[2]);
  EXPECT_EQ(j["phase"], "teacher");
  EXPECT_EQ(j["variant"], "full");
  EXPECT_EQ(j["config_hash"], 77u);
  EXPECT_TRUE(j.contains("recall@20"));
  EXPECT_FALSE(nlohmann::json::parse(lines[1]).contains("recall@20"));

  const auto s1 = train_student(split, t1.base, cfg);
  const auto s2 = train_student(split, t1.base, cfg);
  EXPECT_TRUE(std::equal(s1.base.flat().begin(), s1.base.flat().end(), s2.base.flat().begin()));
  EXPECT_EQ(s1.log.front().phase, "student");
  EXPECT_GT(s1.log[1].terms.id1, 0.0);
  EXPECT_GT(s1.log[1].terms.id2, 0.0);
  const auto model = make_student_model(split, s1.base, cfg, 5);
  EXPECT_EQ(model.num_layers(), 2u);
  EXPECT_EQ(model.config_hash, 5u);
}

TEST(Trainer, AblationsSwitchTermsOff) {
  const Dataset ds = testing_util::random_dataset(30, 20, 0.2, 5, 0.05);
  TrainConfig cfg = tiny_config();
  cfg.student_epochs = 1;
  const auto split = make_training_split(ds, cfg.val_fraction, cfg.seed);
  const auto teacher = init_base(ds.num_nodes(), cfg.dim, 1.0, 3);
  cfg.ablation.disable_id1 = true;
  cfg.ablation.disable_id2 = true;
  const auto s = train_student(split, teacher, cfg);
  EXPECT_EQ(s.log[1].terms.id1, 0.0);
  EXPECT_EQ(s.log[1].terms.id2, 0.0);
  EXPECT_EQ(s.log[1].variant, "w/o ID1, ID2");
}

TEST(Trainer, StudentRejectsMismatchedTeacher) {
  const Dataset ds = testing_util::random_dataset(10, 10, 0.3, 5, 0.1);
  const TrainConfig cfg = tiny_config();
  const auto split = make_training_split(ds, cfg.val_fraction, cfg.seed);
  EXPECT_THROW(train_student(split, Matrix(3, 8), cfg), Error);
}
