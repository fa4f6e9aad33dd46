#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "depthgrow/model.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

using namespace depthgrow;

namespace {

ModelConfig tiny_config(int n_bottom = 1, int n_top = 1) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.n_heads = 2;
  cfg.n_bottom_blocks = n_bottom;
  cfg.n_top_blocks = n_top;
  cfg.vocab_size = 13;
  cfg.dropout = 0.0;
  cfg.max_len = 16;
  return cfg;
}

std::vector<int> random_ids(int len, int vocab, Rng& rng) {
  std::vector<int> ids(len);
  for (auto& id : ids) id = rng.uniform_int(4, vocab - 1);
  return ids;
}

template <typename T>
struct GrownForward {
  typename TransformerModel<T>::EncodeOut enc;
  typename TransformerModel<T>::ShallowOut shallow;
  typename TransformerModel<T>::DeepOut deep;
};

template <typename T>
GrownForward<T> run_grown(const TransformerModel<T>& model, const PaddedBatch& b) {
  Graph<T> g(false);
  GrownForward<T> out;
  out.enc = model.encode(g, b, RunMode::kEval);
  out.shallow = model.decode_shallow(g, b, out.enc, RunMode::kEval);
  out.deep = model.decode_deep(g, b, out.enc, out.shallow, RunMode::kEval);
  return out;
}

template <typename T>
void expect_matches_reference(double tol) {
  ModelConfig cfg = tiny_config(1, 1);
  cfg.precision = sizeof(T) == 4 ? 32 : 64;
  TransformerModel<T> model(cfg);
  model.init_parameters(2024);
  Rng rng(31);
  auto src = random_ids(4, cfg.vocab_size, rng);
  auto tgt = random_ids(3, cfg.vocab_size, rng);
  auto batch = single_pair_batch(src, tgt);  // tgt_in length 4

  auto got = run_grown(model, batch);
  auto want = test::ref_grown_forward(model, src, batch.tgt_in);

  EXPECT_LT(test::max_abs_diff(want.h1, test::to_double_vec(got.enc.h1)), tol);
  EXPECT_LT(test::max_abs_diff(want.h2, test::to_double_vec(got.enc.h2)), tol);
  EXPECT_LT(test::max_abs_diff(want.s1, test::to_double_vec(got.shallow.s1)), tol);
  EXPECT_LT(test::max_abs_diff(want.s2, test::to_double_vec(got.deep.s2)), tol);
  EXPECT_LT(test::max_abs_diff(want.logits_s, test::to_double_vec(got.shallow.logits)), tol);
  EXPECT_LT(test::max_abs_diff(want.logits_d, test::to_double_vec(got.deep.logits)), tol);
}

TEST(EquationOracle, GrownForwardMatchesLoopReference64) {
  expect_matches_reference<double>(1e-10);
}

TEST(EquationOracle, GrownForwardMatchesLoopReference32) {
  expect_matches_reference<float>(1e-5);
}

TEST(Encode, SingleTokenSourceShapes) {
  auto cfg = tiny_config(1, 1);
  TransformerModel<double> model(cfg);
  model.init_parameters(7);
  auto b = single_pair_batch({5}, {6});
  Graph<double> g(false);
  auto enc = model.encode(g, b, RunMode::kEval);
  EXPECT_EQ(enc.h1.shape(), (Shape{1, cfg.d_model}));
  EXPECT_EQ(enc.h2.shape(), (Shape{1, cfg.d_model}));
}

TEST(Encode, TopIdentityInitKeepsResidualVisible) {
  // With zeroed top projections every top block is the identity, so
  // h2 == top_enc_norm(x + h1) exactly.
  auto shallow_cfg = tiny_config(1, 0);
  TransformerModel<double> shallow(shallow_cfg);
  shallow.init_parameters(99);
  auto grown = grow(shallow, 1, 1234);

  auto b = single_pair_batch({4, 5, 6}, {7});
  Graph<double> g(false);
  auto x = grown.embed_packed(g, b.src, 1, b.src_len, false);
  auto enc = grown.encode(g, b, RunMode::kEval);
  auto expected = grown.top_enc_norm.forward(g, g.add(x, enc.h1));
  EXPECT_EQ(expected.vec(), enc.h2.vec());
}

TEST(DecodeDeep, TopIdentityInitMatchesResidual) {
  auto shallow_cfg = tiny_config(1, 0);
  TransformerModel<double> shallow(shallow_cfg);
  shallow.init_parameters(98);
  auto grown = grow(shallow, 1, 4321);

  auto b = single_pair_batch({4, 5, 6}, {7, 8});
  Graph<double> g(false);
  auto enc = grown.encode(g, b, RunMode::kEval);
  auto sh = grown.decode_shallow(g, b, enc, RunMode::kEval);
  auto deep = grown.decode_deep(g, b, enc, sh, RunMode::kEval);
  auto expected = grown.top_dec_norm.forward(g, g.add(sh.y_embed, sh.s1));
  EXPECT_EQ(expected.vec(), deep.s2.vec());
  EXPECT_EQ(deep.logits.shape(), (Shape{b.tgt_len, grown.cfg.vocab_size}));
}

TEST(DecodeDeep, CausalProbeOnNetDIsExact) {
  for (int n : {1, 2}) {
    for (int m : {1, 2}) {
      auto cfg = tiny_config(n, m);
      TransformerModel<float> model(cfg);
      model.init_parameters(500 + 10 * n + m);
      Rng rng(40);
      auto src = random_ids(5, cfg.vocab_size, rng);
      auto tgt = random_ids(6, cfg.vocab_size, rng);
      auto batch = single_pair_batch(src, tgt);
      Graph<float> g(false);
      auto base = model.forward_net_d(g, batch, RunMode::kEval);

      auto perturbed = batch;
      int t = 2;
      perturbed.tgt_in[static_cast<size_t>(t) + 1] ^= 1;
      if (perturbed.tgt_in[static_cast<size_t>(t) + 1] < 4) perturbed.tgt_in[static_cast<size_t>(t) + 1] = 4;
      Graph<float> g2(false);
      auto changed = model.forward_net_d(g2, perturbed, RunMode::kEval);
      for (int pos = 0; pos <= t; ++pos)
        for (int v = 0; v < cfg.vocab_size; ++v)
          ASSERT_EQ(base.at(pos, v), changed.at(pos, v)) << "N=" << n << " M=" << m;
    }
  }
}

TEST(DecodeDeep, ContractErrors) {
  auto cfg = tiny_config(1, 0);
  TransformerModel<double> shallow(cfg);
  shallow.init_parameters(1);
  auto b = single_pair_batch({4, 5}, {6});
  Graph<double> g(false);
  auto enc = shallow.encode(g, b, RunMode::kEval);
  auto sh = shallow.decode_shallow(g, b, enc, RunMode::kEval);
  EXPECT_THROW(shallow.decode_deep(g, b, enc, sh, RunMode::kEval), ContractError);

  auto grown = grow(shallow, 1, 2);
  Graph<double> g2(false);
  auto enc2 = grown.encode(g2, b, RunMode::kEval, /*with_top=*/false);
  auto sh2 = grown.decode_shallow(g2, b, enc2, RunMode::kEval);
  EXPECT_THROW(grown.decode_deep(g2, b, enc2, sh2, RunMode::kEval), ContractError);
}

int64_t linear_params(int in, int out) { return static_cast<int64_t>(in) * out + out; }

TEST(Grow, ParameterCountMatchesShapeFormula) {
  auto cfg = tiny_config(2, 0);
  TransformerModel<double> shallow(cfg);
  shallow.init_parameters(3);
  int m = 2;
  auto grown = grow(shallow, m, 4);

  int d = cfg.d_model, ff = cfg.d_ff;
  int64_t norm = 2 * d;                          // gain + bias
  int64_t attn = 4 * linear_params(d, d);
  int64_t enc_block = 2 * norm + attn + linear_params(d, ff) + linear_params(ff, d);
  int64_t dec_block = 3 * norm + 2 * attn + linear_params(d, ff) + linear_params(ff, d);
  int64_t expected = shallow.parameter_count() + m * (enc_block + dec_block) + 2 * norm;
  EXPECT_EQ(grown.parameter_count(), expected);
}

TEST(Grow, NetSLogitsBitIdenticalToShallow) {
  auto cfg = tiny_config(2, 0);
  TransformerModel<float> shallow(cfg);
  shallow.init_parameters(5);
  auto grown = grow(shallow, 1, 6);

  Rng rng(41);
  for (int i = 0; i < 10; ++i) {
    auto src = random_ids(rng.uniform_int(1, 6), cfg.vocab_size, rng);
    auto tgt = random_ids(rng.uniform_int(1, 6), cfg.vocab_size, rng);
    auto b = single_pair_batch(src, tgt);
    Graph<float> g1(false), g2(false);
    auto a = shallow.forward_net_s(g1, b, RunMode::kEval);
    auto c = grown.forward_net_s(g2, b, RunMode::kEval);
    ASSERT_EQ(a.vec(), c.vec());
  }
}

TEST(Grow, RejectsDoubleGrowAndBadM) {
  auto cfg = tiny_config(1, 0);
  TransformerModel<double> shallow(cfg);
  shallow.init_parameters(8);
  EXPECT_THROW(grow(shallow, 0, 1), ConfigError);
  auto grown = grow(shallow, 1, 1);
  EXPECT_THROW(grow(grown, 1, 1), ConfigError);
}

TEST(FreezeAudit, FreshGrowIsCleanAndNamesPartition) {
  auto cfg = tiny_config(1, 0);
  TransformerModel<double> shallow(cfg);
  shallow.init_parameters(9);
  std::vector<std::string> shallow_names;
  for (auto* p : shallow.parameters()) shallow_names.push_back(p->name);

  auto grown = grow(shallow, 1, 10);
  auto baseline = frozen_parameter_hashes(grown);
  auto report = freeze_audit(grown, baseline);
  EXPECT_TRUE(report.clean());
  EXPECT_EQ(report.frozen.size(), shallow_names.size());
  for (const auto& name : shallow_names)
    EXPECT_NE(std::find(report.frozen.begin(), report.frozen.end(), name), report.frozen.end());
  for (const auto& name : report.trainable) EXPECT_EQ(name.rfind("top.", 0), 0u) << name;
  // bottom and top parameter names are disjoint by construction
  for (const auto& f : report.frozen)
    EXPECT_EQ(std::find(report.trainable.begin(), report.trainable.end(), f),
              report.trainable.end());
}

TEST(FreezeAudit, CorruptedTensorIsNamed) {
  auto cfg = tiny_config(1, 0);
  TransformerModel<double> shallow(cfg);
  shallow.init_parameters(11);
  auto grown = grow(shallow, 1, 12);
  auto baseline = frozen_parameter_hashes(grown);

  auto* victim = grown.find_parameter("bottom.enc.0.self_attn.q.w");
  ASSERT_NE(victim, nullptr);
  victim->tensor.data()[0] += 1.0;

  auto report = freeze_audit(grown, baseline);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0], victim->name);
}

TEST(HierarchicalAttention, TopPerturbationNeverTouchesNetS) {
  auto cfg = tiny_config(1, 0);
  TransformerModel<float> shallow(cfg);
  shallow.init_parameters(13);
  auto grown = grow(shallow, 1, 14);

  auto b = single_pair_batch({4, 5, 6, 7}, {8, 9});
  auto before = run_grown(grown, b);

  // kick every top parameter
  Rng rng(15);
  for (auto* p : grown.parameters())
    if (p->trainable)
      for (int64_t i = 0; i < p->tensor.numel(); ++i)
        p->tensor.data()[i] += static_cast<float>(rng.uniform(0.01, 0.05));

  auto after = run_grown(grown, b);
  EXPECT_EQ(before.shallow.logits.vec(), after.shallow.logits.vec());
  EXPECT_NE(before.deep.logits.vec(), after.deep.logits.vec());
}

TEST(GradientFlow, TopGetsGradientsFrozenDoesNot) {
  auto cfg = tiny_config(1, 0);
  TransformerModel<double> shallow(cfg);
  shallow.init_parameters(16);
  auto grown = grow(shallow, 1, 17);
  // gradient flow is probed away from the zero-projection point
  Rng reinit(18);
  grown.init_top(reinit, /*zero_output_projections=*/false);

  auto b = single_pair_batch({4, 5, 6, 7, 8}, {9, 10, 11});
  Graph<double> g;
  auto logits = grown.forward_net_d(g, b, RunMode::kTrainStage2);
  auto loss = g.cross_entropy(logits, b.tgt_out, 0.0, kPadId);
  g.backward(loss);

  for (auto* p : grown.parameters()) {
    if (!p->trainable) {
      EXPECT_EQ(p->tensor.grad(), nullptr) << p->name;
      continue;
    }
    double norm = 0;
    for (int64_t i = 0; i < p->tensor.numel(); ++i)
      norm += std::fabs(static_cast<double>(p->tensor.grad()[i]));
    EXPECT_GT(norm, 0.0) << p->name;
  }
}

TEST(ResidualReachability, ReportKlAtIdentityInit) {
  auto cfg = tiny_config(2, 0);
  TransformerModel<double> shallow(cfg);
  shallow.init_parameters(19);
  auto grown = grow(shallow, 1, 20);

  Rng rng(21);
  auto src = random_ids(6, cfg.vocab_size, rng);
  auto tgt = random_ids(5, cfg.vocab_size, rng);
  auto out = run_grown(grown, single_pair_batch(src, tgt));

  // mean over positions of KL(P_D || P_S)
  int rows = out.deep.logits.dim(0), v = out.deep.logits.dim(1);
  double kl_total = 0;
  for (int i = 0; i < rows; ++i) {
    std::vector<double> d_row(v), s_row(v);
    for (int j = 0; j < v; ++j) {
      d_row[static_cast<size_t>(j)] = out.deep.logits.at(i, j);
      s_row[static_cast<size_t>(j)] = out.shallow.logits.at(i, j);
    }
    auto pd = test::ref_softmax(d_row);
    auto ps = test::ref_softmax(s_row);
    for (int j = 0; j < v; ++j) kl_total += pd[static_cast<size_t>(j)] * std::log(pd[static_cast<size_t>(j)] / ps[static_cast<size_t>(j)]);
  }
  double kl = kl_total / rows;
  std::printf("[ INFO     ] KL(net_D || net_S) at identity-init top: %.6f nats\n", kl);
  EXPECT_TRUE(std::isfinite(kl));
}

}  // namespace
