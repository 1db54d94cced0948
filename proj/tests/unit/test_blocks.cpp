#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "parformer/blocks.hpp"
#include "parformer/rng.hpp"
#include "parformer/tensor.hpp"
#include "test_util.hpp"

using namespace parformer;
using testutil::bits_equal;
using testutil::fill_tensor;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

// Fresh storage throughout, with the output projections (and their biases)
// multiplied by eps.
BlockParams clone_scaled_outputs(const BlockParams& p, double eps) {
  auto clone = [](const Tensor& t, double f) {
    std::vector<double> d = t.data();
    for (double& v : d) v *= f;
    return Tensor::from_data(t.shape(), std::move(d));
  };
  BlockParams q;
  q.attn.heads = p.attn.heads;
  for (size_t h = 0; h < p.attn.wq.size(); ++h) {
    q.attn.wq.push_back(clone(p.attn.wq[h], 1.0));
    q.attn.bq.push_back(clone(p.attn.bq[h], 1.0));
    q.attn.wk.push_back(clone(p.attn.wk[h], 1.0));
    q.attn.bk.push_back(clone(p.attn.bk[h], 1.0));
    q.attn.wv.push_back(clone(p.attn.wv[h], 1.0));
    q.attn.bv.push_back(clone(p.attn.bv[h], 1.0));
  }
  q.attn.wo = clone(p.attn.wo, eps);
  q.attn.bo = clone(p.attn.bo, eps);
  q.mlp.w1 = clone(p.mlp.w1, 1.0);
  q.mlp.b1 = clone(p.mlp.b1, 1.0);
  q.mlp.w2 = clone(p.mlp.w2, eps);
  q.mlp.b2 = clone(p.mlp.b2, eps);
  if (p.norm1) q.norm1 = NormParams{clone(p.norm1->gamma, 1.0), clone(p.norm1->beta, 1.0)};
  if (p.norm2) q.norm2 = NormParams{clone(p.norm2->gamma, 1.0), clone(p.norm2->beta, 1.0)};
  return q;
}

void zero_output_projections(BlockParams& p) {
  fill_tensor(p.attn.wo, 0.0);
  fill_tensor(p.attn.bo, 0.0);
  fill_tensor(p.mlp.w2, 0.0);
  fill_tensor(p.mlp.b2, 0.0);
}

Tensor permute_rows(const Tensor& x, const std::vector<int64_t>& perm) {
  const int64_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(static_cast<size_t>(n * d));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out[static_cast<size_t>(i * d + j)] = x.at({perm[static_cast<size_t>(i)], j});
  return Tensor::from_data({n, d}, std::move(out));
}

BlockConfig eval_cfg(BlockVariant variant, NormVariant norm) {
  BlockConfig cfg;
  cfg.variant = variant;
  cfg.norm_variant = norm;
  return cfg;
}

}  // namespace

TEST_SUITE("blocks") {

TEST_CASE("attention with a zero output projection is zero") {
  std::mt19937_64 rng(20);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng);
  fill_tensor(p.attn.wo, 0.0);
  fill_tensor(p.attn.bo, 0.0);
  Tensor x = rand_tensor({3, 4}, rng);
  CHECK(bits_equal(attention(x, p.attn, false), Tensor::zeros({3, 4})));
}

TEST_CASE("single-token attention reduces to the value path, hand computed") {
  // One position: the lone softmax logit becomes probability 1, so the output
  // is (x Wv + bv) Wo + bo whatever Wq/Wk hold.
  AttentionParams p;
  p.heads = 1;
  p.wq = {Tensor::from_data({2, 2}, {1, 0, 0, 1})};
  p.bq = {Tensor::zeros({2})};
  p.wk = {Tensor::from_data({2, 2}, {1, 0, 0, 1})};
  p.bk = {Tensor::zeros({2})};
  p.wv = {Tensor::from_data({2, 2}, {1, 0, 2, 1})};
  p.bv = {Tensor::from_data({2}, {1, -1})};
  p.wo = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  p.bo = Tensor::from_data({2}, {2, 2});
  Tensor x = Tensor::from_data({1, 2}, {1, 2});
  // v = [1*1+2*2, 1*0+2*1] + [1,-1] = [6, 1]; out = [6*1+1*3, 6*2+1*4] + [2,2].
  Tensor out = attention(x, p, false);
  CHECK(out.at({0, 0}) == 11.0);
  CHECK(out.at({0, 1}) == 18.0);
}

TEST_CASE("non-causal attention is permutation-equivariant") {
  std::mt19937_64 rng(21);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng);
  Tensor x = rand_tensor({5, 4}, rng);
  const std::vector<int64_t> perm{3, 0, 4, 1, 2};
  Tensor lhs = attention(permute_rows(x, perm), p.attn, false);
  Tensor rhs = permute_rows(attention(x, p.attn, false), perm);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("attention rejects a head count that does not divide the model dim") {
  std::mt19937_64 rng(22);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng);
  p.attn.heads = 3;
  Tensor x = rand_tensor({2, 4}, rng);
  CHECK_THROWS_WITH_AS(attention(x, p.attn, false), doctest::Contains("must divide"),
                       std::invalid_argument);
}

TEST_CASE("mlp zero second projection, scalar gelu oracle, position independence") {
  std::mt19937_64 rng(23);
  BlockParams p = random_block_params(4, 1, 8, false, false, rng);
  fill_tensor(p.mlp.w2, 0.0);
  fill_tensor(p.mlp.b2, 0.0);
  Tensor x = rand_tensor({3, 4}, rng);
  CHECK(bits_equal(mlp(x, p.mlp), Tensor::zeros({3, 4})));

  MlpParams unit;
  unit.w1 = Tensor::from_data({1, 1}, {1});
  unit.b1 = Tensor::zeros({1});
  unit.w2 = Tensor::from_data({1, 1}, {1});
  unit.b2 = Tensor::zeros({1});
  const double want = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(mlp(Tensor::from_data({1, 1}, {1}), unit).value() ==
        doctest::Approx(want).epsilon(1e-12));

  Tensor full = mlp(x, p.mlp);
  for (int64_t i = 0; i < 3; ++i) {
    std::vector<double> row(x.data().begin() + i * 4, x.data().begin() + (i + 1) * 4);
    Tensor one = mlp(Tensor::from_data({1, 4}, std::move(row)), p.mlp);
    for (int64_t j = 0; j < 4; ++j) CHECK(one.at({0, j}) == full.at({i, j}));
  }
}

TEST_CASE("zero-weight blocks are the identity map") {
  std::mt19937_64 rng(24);
  Tensor x = rand_tensor({4, 4}, rng);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng);
  for (Tensor t : {p.attn.wo, p.attn.bo, p.mlp.w1, p.mlp.b1, p.mlp.w2, p.mlp.b2})
    fill_tensor(t, 0.0);
  for (size_t h = 0; h < 2; ++h)
    for (Tensor t : {p.attn.wq[h], p.attn.bq[h], p.attn.wk[h], p.attn.bk[h], p.attn.wv[h],
                     p.attn.bv[h]})
      fill_tensor(t, 0.0);
  CHECK(bits_equal(sequential_block(x, p, eval_cfg(BlockVariant::sequential, NormVariant::none)), x));
  CHECK(bits_equal(parallel_block(x, p, eval_cfg(BlockVariant::parallel, NormVariant::none)), x));
}

TEST_CASE("sequential block equals the two-stage reference composition") {
  std::mt19937_64 rng(25);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng);
  Tensor x = rand_tensor({3, 4}, rng);
  BlockConfig cfg = eval_cfg(BlockVariant::sequential, NormVariant::none);
  Tensor x1 = add(x, attention(x, p.attn, false));
  Tensor ref = add(x1, mlp(x1, p.mlp));
  CHECK(bits_equal(sequential_block(x, p, cfg), ref));
}

TEST_CASE("parallel block equals the three-term branch sum") {
  std::mt19937_64 rng(26);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng);
  Tensor x = rand_tensor({3, 4}, rng);
  BlockConfig cfg = eval_cfg(BlockVariant::parallel, NormVariant::none);
  Tensor ref = add(x, add(attention(x, p.attn, false), mlp(x, p.mlp)));
  CHECK(bits_equal(parallel_block(x, p, cfg), ref));

  BlockParams ablated = clone_scaled_outputs(p, 1.0);
  fill_tensor(ablated.mlp.w2, 0.0);
  fill_tensor(ablated.mlp.b2, 0.0);
  Tensor attn_only = add(x, add(attention(x, ablated.attn, false), Tensor::zeros({3, 4})));
  CHECK(bits_equal(parallel_block(x, ablated, cfg), attn_only));
}

TEST_CASE("sequential minus parallel is exactly the MLP second-order term") {
  std::mt19937_64 rng(27);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng, 0.2);
  Tensor x = rand_tensor({3, 4}, rng);
  Tensor seq = sequential_block(x, p, eval_cfg(BlockVariant::sequential, NormVariant::none));
  Tensor par = parallel_block(x, p, eval_cfg(BlockVariant::parallel, NormVariant::none));
  Tensor x1 = add(x, attention(x, p.attn, false));
  Tensor want = sub(mlp(x1, p.mlp), mlp(x, p.mlp));
  CHECK(max_abs_diff(sub(seq, par), want) < 1e-12);
}

TEST_CASE("residual identity holds bit-exactly when norms sit inside the branch") {
  std::mt19937_64 rng(28);
  Tensor x = rand_tensor({4, 8}, rng);
  for (NormVariant nv : {NormVariant::A, NormVariant::B, NormVariant::none}) {
    for (BlockVariant bv : {BlockVariant::sequential, BlockVariant::parallel}) {
      BlockParams p = random_block_params(8, 2, 16, true, true, rng);
      zero_output_projections(p);
      CHECK(bits_equal(apply_block(x, p, eval_cfg(bv, nv)), x));
    }
  }
}

TEST_CASE("first-order gap between sequential and parallel shrinks as eps^2") {
  std::mt19937_64 rng(29);
  BlockParams base = random_block_params(8, 2, 16, false, false, rng);
  Tensor x = rand_tensor({4, 8}, rng);
  auto gap = [&](double eps) {
    BlockParams p = clone_scaled_outputs(base, eps);
    Tensor seq = sequential_block(x, p, eval_cfg(BlockVariant::sequential, NormVariant::none));
    Tensor par = parallel_block(x, p, eval_cfg(BlockVariant::parallel, NormVariant::none));
    return max_abs_diff(seq, par);
  };
  const double ratio = gap(1e-2) / gap(5e-3);
  CHECK(ratio > 3.2);
  CHECK(ratio < 4.8);
}

TEST_CASE("blocks are permutation-equivariant without positional input") {
  std::mt19937_64 rng(30);
  BlockParams p = random_block_params(4, 2, 8, true, true, rng);
  Tensor x = rand_tensor({5, 4}, rng);
  const std::vector<int64_t> perm{4, 2, 0, 3, 1};
  for (BlockVariant bv : {BlockVariant::sequential, BlockVariant::parallel}) {
    BlockConfig cfg = eval_cfg(bv, NormVariant::A);
    CHECK(max_abs_diff(apply_block(permute_rows(x, perm), p, cfg),
                       permute_rows(apply_block(x, p, cfg), perm)) < 1e-12);
  }
}

TEST_CASE("evaluation mode ignores dropout and stochastic depth rates") {
  std::mt19937_64 rng(31);
  BlockParams p = random_block_params(4, 2, 8, true, false, rng);
  Tensor x = rand_tensor({3, 4}, rng);
  BlockConfig plain = eval_cfg(BlockVariant::parallel, NormVariant::A);
  BlockConfig rated = plain;
  rated.dropout_p = 0.4;
  rated.stoch_depth_p = 0.3;
  CHECK(bits_equal(apply_block(x, p, rated), apply_block(x, p, plain)));
}

TEST_CASE("stochastic depth gate endpoints and survival scaling") {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 1000; ++i) {
    StochDepthGate g = stochastic_depth_gate(0, 12, 0.9, rng, true);
    CHECK(g.keep);
    CHECK(g.scale == 1.0);
  }
  for (int i = 0; i < 100; ++i) {
    StochDepthGate g = stochastic_depth_gate(5, 12, 0.0, rng, true);
    CHECK(g.keep);
    CHECK(g.scale == 1.0);
  }
  StochDepthGate kept{false, 0.0};
  while (!kept.keep) kept = stochastic_depth_gate(11, 12, 0.1, rng, true);
  CHECK(kept.scale == 1.0 / 0.9);
}

TEST_CASE("stochastic depth drop frequency matches the linear-decay schedule") {
  std::mt19937_64 rng(33);
  int drops = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    if (!stochastic_depth_gate(11, 12, 0.1, rng, true).keep) ++drops;
  const double freq = static_cast<double>(drops) / n;
  CHECK(std::abs(freq - 0.1) < 0.01);
}

TEST_CASE("a dropped layer is exactly the identity") {
  std::mt19937_64 rng(34);
  BlockParams p = random_block_params(4, 2, 8, true, false, rng);
  Tensor x = rand_tensor({3, 4}, rng);
  BlockConfig cfg = eval_cfg(BlockVariant::parallel, NormVariant::A);
  cfg.training = true;
  cfg.stoch_depth_p = 0.5;
  cfg.layer_index = 3;
  cfg.depth = 4;
  bool saw_drop = false;
  for (uint64_t seed = 0; seed < 64 && !saw_drop; ++seed) {
    std::mt19937_64 probe(seed);
    if (stochastic_depth_gate(3, 4, 0.5, probe, true).keep) continue;
    std::mt19937_64 gate_rng(seed);
    cfg.rng = &gate_rng;
    CHECK(bits_equal(apply_block(x, p, cfg), x));
    saw_drop = true;
  }
  CHECK(saw_drop);
}

TEST_CASE("training with nonzero rates requires an rng") {
  BlockConfig cfg = eval_cfg(BlockVariant::parallel, NormVariant::A);
  cfg.training = true;
  cfg.dropout_p = 0.1;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("rng"), std::invalid_argument);
}

TEST_CASE("lie-trotter sub-stepping with h=1 reproduces the sequential block") {
  std::mt19937_64 rng(35);
  BlockParams p = random_block_params(4, 2, 8, false, false, rng);
  Tensor x = rand_tensor({3, 4}, rng);
  BlockConfig cfg = eval_cfg(BlockVariant::sequential, NormVariant::none);
  CHECK(bits_equal(lie_trotter_step(x, p, cfg, 1.0), sequential_block(x, p, cfg)));
}

}  // TEST_SUITE
