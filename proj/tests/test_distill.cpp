#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace bingear;

TEST(Distill, RankingWeightsDecayExponentially) {
  const RankingWeightParams p{1.0, 0.1};
  EXPECT_NEAR(ranking_weight(1, p), std::exp(-0.1), 1e-15);
  EXPECT_NEAR(ranking_weight(10, p), std::exp(-1.0), 1e-15);
  for (std::size_t k = 1; k < 50; ++k) EXPECT_GT(ranking_weight(k, p), ranking_weight(k + 1, p));
  EXPECT_NEAR(ranking_weight(3, {2.0, 0.5}), 2.0 * std::exp(-1.5), 1e-15);
  EXPECT_THROW(ranking_weight(0, p), Error);
}

TEST(Distill, NegLogSigmoidIsStable) {
  EXPECT_NEAR(neg_log_sigmoid(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(neg_log_sigmoid(3.0), -std::log(sigmoid(3.0)), 1e-12);
  EXPECT_NEAR(neg_log_sigmoid(-3.0), -std::log(sigmoid(-3.0)), 1e-12);
  EXPECT_TRUE(std::isfinite(neg_log_sigmoid(-1e6)));
  EXPECT_NEAR(neg_log_sigmoid(-1e6), 40.0, 1e-9);
  EXPECT_GE(neg_log_sigmoid(1e6), 0.0);
}

TEST(Distill, RankedLossMatchesDirectSum) {
  const std::vector<double> y{0.5, -1.0, 2.0, 0.0};
  const RankingWeightParams p{1.5, 0.3};
  double want = 0;
  for (std::size_t k = 0; k < y.size(); ++k) want += ranking_weight(k + 1, p) * -std::log(sigmoid(y[k])) / 7.0;
  std::vector<double> g(y.size());
  EXPECT_NEAR(ranked_distill_loss<double>(y, 7.0, p, g), want, 1e-12);
  for (std::size_t k = 0; k < y.size(); ++k) {
    auto yp = y, ym = y;
    yp[k] += 1e-6;
    ym[k] -= 1e-6;
    const double fd = (ranked_distill_loss<double>(yp, 7.0, p, {}) - ranked_distill_loss<double>(ym, 7.0, p, {})) / 2e-6;
    EXPECT_NEAR(g[k], fd, 1e-7);
  }
}

TEST(Distill, Id1FollowsTeacherOrderAndNormalizesByDegree) {
  LayerScoreSet s{{4, 9, 2}, {0.1f, 0.7f, -0.3f}, {0.0f, 5.0f, 1.0f}};
  const RankingWeightParams p{1.0, 0.1};
  // Teacher order: 9, 2, 4.
  const double want = (ranking_weight(1, p) * neg_log_sigmoid(0.7) + ranking_weight(2, p) * neg_log_sigmoid(-0.3) +
                       ranking_weight(3, p) * neg_log_sigmoid(0.1)) /
                      3.0;
  std::vector<std::vector<float>> grads;
  const auto t = loss_id1(std::span<const LayerScoreSet>(&s, 1), p, &grads);
  EXPECT_FALSE(t.flagged);
  EXPECT_NEAR(t.value, want, 1e-6);
  ASSERT_EQ(grads.size(), 1u);
  EXPECT_NEAR(grads[0][1], -ranking_weight(1, p) * (1 - sigmoid(0.7)) / 3.0, 1e-6);
  EXPECT_NEAR(grads[0][0], -ranking_weight(3, p) * (1 - sigmoid(0.1)) / 3.0, 1e-6);
}

TEST(Distill, Id1TiesBreakByItemId) {
  LayerScoreSet s{{7, 3}, {1.0f, -1.0f}, {2.0f, 2.0f}};
  const RankingWeightParams p{1.0, 1.0};
  const double want = (ranking_weight(1, p) * neg_log_sigmoid(-1.0) + ranking_weight(2, p) * neg_log_sigmoid(1.0)) / 2;
  EXPECT_NEAR(loss_id1(std::span<const LayerScoreSet>(&s, 1), p).value, want, 1e-6);
}

TEST(Distill, EmptyInputsAreFlaggedZero) {
  LayerScoreSet s;
  const auto t = loss_id1(std::span<const LayerScoreSet>(&s, 1), {});
  EXPECT_TRUE(t.flagged);
  EXPECT_EQ(t.value, 0.0);
  std::vector<std::vector<float>> none(3);
  const auto t2 = loss_id2(none, {}, 50);
  EXPECT_TRUE(t2.flagged);
  EXPECT_EQ(t2.value, 0.0);
}

TEST(Distill, Id2NormalizesByR) {
  std::vector<std::vector<float>> ranked{{0.2f, 0.1f}, {-0.5f}};
  const RankingWeightParams p{1.0, 0.1};
  const double want =
      (ranking_weight(1, p) * neg_log_sigmoid(0.2f) + ranking_weight(2, p) * neg_log_sigmoid(0.1f) +
       ranking_weight(1, p) * neg_log_sigmoid(-0.5f)) /
      50.0;
  EXPECT_NEAR(loss_id2(ranked, p, 50).value, want, 1e-7);
  EXPECT_THROW(loss_id2(ranked, p, 0), Error);
}

TEST(Distill, PseudoPositivesMatchBruteForce) {
  const Dataset ds = testing_util::random_dataset(15, 25, 0.3, 4);
  const auto adj = build_normalized_adjacency(ds);
  const auto le = propagate(testing_util::random_matrix<float>(ds.num_nodes(), 8, 4), adj, 2);
  const auto w = layer_weights(2);
  const std::size_t R = 5;
  const auto pp = extract_pseudo_positives(le, ds, R, w);
  for (Id u = 0; u < ds.num_users; ++u)
    for (std::size_t l = 0; l < 3; ++l) {
      std::vector<std::pair<float, Id>> all;
      for (Id i = 0; i < ds.num_items; ++i) {
        if (ds.interacted(u, i)) continue;
        all.push_back({w.squared(l) * dot(le.at(l, u), le.at(l, ds.item_node(i))), i});
      }
      std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first > b.first; });
      IdList want;
      for (std::size_t k = 0; k < std::min(R, all.size()); ++k) want.push_back(all[k].second);
      EXPECT_EQ(pp.items.at(u, l), want);
    }
}

TEST(Distill, InteractedRankingIsDescending) {
  const Dataset ds = testing_util::random_dataset(10, 12, 0.4, 6);
  const auto adj = build_normalized_adjacency(ds);
  const auto le = propagate(testing_util::random_matrix<float>(ds.num_nodes(), 8, 6), adj, 1);
  const auto w = layer_weights(1);
  const auto ranked = rank_interacted(le, ds, w);
  for (Id u = 0; u < ds.num_users; ++u)
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& list = ranked.at(u, l);
      ASSERT_EQ(list.size(), ds.train[u].size());
      const auto s = teacher_layer_scores(le, ds.num_users, u, list, w, l);
      for (std::size_t k = 1; k < s.size(); ++k) EXPECT_GE(s[k - 1], s[k]);
    }
}

TEST(Distill, PseudoPositivesTruncateSmallComplement) {
  const Dataset ds = Dataset::from_lists(2, 4, {{0, 1, 2}, {0}}, {{}, {}});
  const auto adj = build_normalized_adjacency(ds);
  const auto le = propagate(testing_util::random_matrix<float>(ds.num_nodes(), 4, 1), adj, 1);
  const auto pp = extract_pseudo_positives(le, ds, 2, layer_weights(1));
  EXPECT_EQ(pp.truncated_users, 1u);
  EXPECT_EQ(pp.items.at(0, 0), IdList({3}));
  EXPECT_EQ(pp.items.at(1, 1).size(), 2u);
}

TEST(Distill, PseudoPositiveSidecarRoundTrip) {
  const Dataset ds = testing_util::random_dataset(9, 11, 0.3, 8);
  const auto adj = build_normalized_adjacency(ds);
  const auto le = propagate(testing_util::random_matrix<float>(ds.num_nodes(), 4, 2), adj, 2);
  const auto pp = extract_pseudo_positives(le, ds, 4, layer_weights(2));
  const auto bytes = encode_pseudo_positives(pp);
  const auto back = decode_pseudo_positives(io::Reader(bytes));
  EXPECT_EQ(back, pp);
  auto bad = bytes;
  bad[0] = 'Q';
  EXPECT_THROW(decode_pseudo_positives(io::Reader(bad)), Error);
}
