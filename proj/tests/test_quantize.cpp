#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace bingear;

TEST(Quantize, SignOfZeroIsPlusOne) {
  const std::vector<float> v{0.0f, -0.0f, -1.5f, 2.0f, -1e-30f};
  const auto q = sign_quantize(v);
  EXPECT_EQ(q.unpack(), std::vector<int>({1, 1, -1, 1, -1}));
}

TEST(Quantize, PadBitsStayZero) {
  for (std::size_t d : {1u, 63u, 64u, 65u, 100u, 128u, 130u}) {
    std::vector<float> v(d, 1.0f);
    const auto q = sign_quantize(v);
    ASSERT_EQ(q.words.size(), words_for(d));
    const std::size_t pad = q.words.size() * 64 - d;
    if (pad > 0) {
      EXPECT_EQ(q.words.back() >> (64 - pad), 0u) << "d=" << d;
    }
    for (std::size_t j = 0; j < d; ++j) EXPECT_TRUE(q.bit(j));
  }
}

TEST(Quantize, PackUnpackRoundTrip) {
  bingear::StreamRng rng(5, "pm1", {});
  for (std::size_t d : {3u, 64u, 77u, 256u}) {
    std::vector<int> pm(d);
    for (int& x : pm) x = (rng() & 1) ? 1 : -1;
    EXPECT_EQ(PackedBits::pack(pm).unpack(), pm);
  }
}

TEST(Quantize, ScalerIsMeanAbsolute) {
  const std::vector<float> v{1.0f, -2.0f, 3.0f, -4.0f};
  EXPECT_FLOAT_EQ(embedding_scaler(v), 2.5f);
  EXPECT_EQ(embedding_scaler(std::vector<float>{}), 0.0f);
  const std::vector<float> zeros(10, 0.0f);
  EXPECT_EQ(embedding_scaler(zeros), 0.0f);
}

TEST(Quantize, ScalerMinimizesReconstructionError) {
  // For a fixed sign pattern alpha = mean |v| minimizes ||v - alpha q||^2.
  const auto m = testing_util::random_matrix<float>(1, 40, 3);
  const auto v = m.row(0);
  const float a = embedding_scaler(v);
  const auto q = sign_quantize(v).unpack();
  auto err = [&](float alpha) {
    double e = 0;
    for (std::size_t j = 0; j < v.size(); ++j) e += std::pow(v[j] - alpha * q[j], 2);
    return e;
  };
  EXPECT_LE(err(a), err(a * 1.01f));
  EXPECT_LE(err(a), err(a * 0.99f));
}

TEST(Quantize, RejectsNaN) {
  const std::vector<float> v{1.0f, std::numeric_limits<float>::quiet_NaN()};
  try {
    sign_quantize(v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
}

TEST(Quantize, TableMatchesPerLayerQuantization) {
  const Dataset ds = testing_util::random_dataset(10, 8, 0.3, 2);
  const auto adj = build_normalized_adjacency(ds);
  const auto le = propagate(testing_util::random_matrix<float>(ds.num_nodes(), 70, 4), adj, 2);
  const auto t = build_binarized_tables(le);
  ASSERT_EQ(t.segments(), 3u);
  ASSERT_EQ(t.words_per_row(), 2u);
  std::vector<float> rec(70);
  for (std::size_t x = 0; x < t.nodes(); ++x)
    for (std::size_t l = 0; l < 3; ++l) {
      const auto q = sign_quantize(le.at(l, x));
      EXPECT_EQ(t.scaler(x, l), embedding_scaler(le.at(l, x)));
      const auto b = t.bits(x, l);
      EXPECT_TRUE(std::equal(b.words.begin(), b.words.end(), q.words.begin()));
      t.reconstruct(x, l, rec);
      for (std::size_t j = 0; j < 70; ++j) EXPECT_EQ(rec[j], q.bit(j) ? t.scaler(x, l) : -t.scaler(x, l));
    }
}

TEST(Quantize, ModelRoundTripIsBitExact) {
  testing_util::TempDir dir("quantize_model");
  const Dataset ds = testing_util::random_dataset(9, 7, 0.4, 6);
  const auto adj = build_normalized_adjacency(ds);
  BinarizedModel m;
  m.num_users = ds.num_users;
  m.num_items = ds.num_items;
  m.weights = layer_weights(2);
  m.table = build_binarized_tables(propagate(testing_util::random_matrix<float>(ds.num_nodes(), 65, 8), adj, 2));
  m.config_hash = 0xabcdef0123456789ULL;
  m.seed = 42;
  save_model(m, dir.file("m.bger"));
  const auto back = load_model(dir.file("m.bger"));
  EXPECT_EQ(back, m);
  const auto bytes = encode_model(m);
  EXPECT_EQ(encode_model(back), bytes);
  EXPECT_EQ(bytes.size(), model_file_bytes(ds.num_nodes(), 2, 65));
  EXPECT_EQ(std::string(bytes.data(), 4), "BGER");
}

TEST(Quantize, ModelRejectsCorruption) {
  BinarizedModel m;
  m.num_users = 1;
  m.num_items = 1;
  m.weights = layer_weights(1);
  m.table = BinarizedTable(2, 2, 8);
  auto bytes = encode_model(m);
  auto check = [](std::vector<char> b) {
    try {
      decode_model(io::Reader(std::move(b)));
      ADD_FAILURE() << "decoded corrupt model";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::format);
    }
  };
  auto magic = bytes;
  magic[1] = 'Z';
  check(magic);
  auto version = bytes;
  version[4] = 2;
  check(version);
  auto cut = bytes;
  cut.pop_back();
  check(cut);
  auto extra = bytes;
  extra.push_back('x');
  check(extra);
}

TEST(Quantize, ScalerBeatsRandomProbes) {
  const auto m = testing_util::random_matrix<float>(3, 64, 11);
  StreamRng rng(4, "probe", {});
  for (std::size_t r = 0; r < 3; ++r) {
    const auto v = m.row(r);
    const float a = embedding_scaler(v);
    const auto q = sign_quantize(v).unpack();
    auto err = [&](double c) {
      double e = 0;
      for (std::size_t j = 0; j < v.size(); ++j) e += std::pow(v[j] - c * q[j], 2);
      return e;
    };
    for (int t = 0; t < 20; ++t) EXPECT_LE(err(a), err(0.01 + 3.0 * rng.uniform01()) + 1e-9);
  }
}
