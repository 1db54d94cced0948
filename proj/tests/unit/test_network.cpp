#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <vector>

#include "parformer/checkpoint.hpp"
#include "parformer/network.hpp"
#include "parformer/tensor.hpp"
#include "test_util.hpp"

using namespace parformer;
using testutil::bits_equal;
using testutil::rand_tensor;

namespace {

NetworkConfig tiny_classify(int depth, int k) {
  NetworkConfig cfg;
  cfg.task = Task::classify;
  cfg.variant = BlockVariant::parallel;
  cfg.norm_variant = NormVariant::A;
  cfg.depth = depth;
  cfg.independent_layers = k;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 1;
  cfg.num_classes = 3;
  return cfg;
}

NetworkConfig tiny_lm(int depth, int k) {
  NetworkConfig cfg = tiny_classify(depth, k);
  cfg.task = Task::lm;
  cfg.vocab_size = 11;
  cfg.context = 6;
  return cfg;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/parformer_test_") + name;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("share_map groups consecutive layers and rejects non-divisors") {
  CHECK(share_map(12, 12) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  CHECK(share_map(12, 6) == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5});
  CHECK(share_map(12, 1) == std::vector<int>(12, 0));
  CHECK_THROWS_WITH_AS(share_map(12, 5), doctest::Contains("divide"), std::invalid_argument);

  const std::vector<int> m = share_map(12, 3);
  CHECK(m.size() == 12);
  for (int set = 0; set < 3; ++set)
    CHECK(std::count(m.begin(), m.end(), set) == 4);
  for (size_t i = 1; i < m.size(); ++i) CHECK(m[i] >= m[i - 1]);
}

TEST_CASE("config validation names the divisibility and scheme constraints") {
  NetworkConfig bad = tiny_classify(4, 3);
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("divide"), std::invalid_argument);

  NetworkConfig rk4_seq = tiny_classify(4, 4);
  rk4_seq.scheme = Scheme::rk4;
  rk4_seq.variant = BlockVariant::sequential;
  CHECK_THROWS_WITH_AS(rk4_seq.validate(), doctest::Contains("parallel"), std::invalid_argument);
}

TEST_CASE("presets carry the published shapes") {
  NetworkConfig ti = preset("deit_ti");
  CHECK(ti.task == Task::classify);
  CHECK(ti.depth == 12);
  CHECK(ti.dim == 192);
  CHECK(ti.heads == 3);
  CHECK(ti.mlp_ratio == 4);
  CHECK(ti.image_size == 224);
  CHECK(ti.patch_size == 16);
  CHECK(ti.num_classes == 100);

  NetworkConfig lm = preset("nlp_small");
  CHECK(lm.task == Task::lm);
  CHECK(lm.dim == 128);
  CHECK(lm.d_ff() == 512);
  CHECK(lm.heads == 2);

  CHECK_THROWS_AS(preset("deit_base"), std::invalid_argument);
}

TEST_CASE("building twice from one seed gives bit-identical parameters") {
  Network a = build_network(tiny_classify(4, 2), 7);
  Network b = build_network(tiny_classify(4, 2), 7);
  const auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(bits_equal(pa[i].tensor, pb[i].tensor));
  }
  Network c = build_network(tiny_classify(4, 2), 8);
  CHECK_FALSE(bits_equal(a.parameters()[0].tensor, c.parameters()[0].tensor));
}

TEST_CASE("k=1 layers alias one parameter set") {
  Network net = build_network(tiny_classify(2, 1), 3);
  CHECK(net.sets.size() == 1);
  CHECK(net.layer_map == std::vector<int>{0, 0});
  std::mt19937_64 rng(50);
  Tensor x = rand_tensor({5, 8}, rng);
  Tensor before = net.run_layers(x);
  net.sets[0].mlp.b2.data()[0] += 1.0;
  Tensor after = net.run_layers(x);
  CHECK_FALSE(bits_equal(before, after));
}

TEST_CASE("deit_ti at desk geometry forward-propagates an image batch") {
  NetworkConfig cfg = preset("deit_ti");
  cfg.image_size = 32;
  cfg.patch_size = 4;
  Network net = build_network(cfg, 0);
  std::mt19937_64 rng(51);
  Tensor images = rand_tensor({2, 3, 32, 32}, rng, 0.5);
  Tensor logits = net.forward_classify(images);
  REQUIRE(logits.shape() == Shape{2, 100});
  for (double v : logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("parameter counts hit the published table and are affine in k") {
  NetworkConfig ti = preset("deit_ti");
  ti.independent_layers = 12;
  CHECK(build_network(ti, 0).param_count() == 5543716);
  ti.independent_layers = 1;
  CHECK(build_network(ti, 0).param_count() == 650212);

  std::vector<int64_t> counts;
  for (int k : {1, 2, 3, 6}) {
    NetworkConfig cfg = tiny_classify(6, k);
    counts.push_back(build_network(cfg, 0).param_count());
  }
  const int64_t per_set = counts[1] - counts[0];
  const int64_t extras = counts[0] - per_set;
  CHECK(counts[2] == extras + 3 * per_set);
  CHECK(counts[3] == extras + 6 * per_set);
}

TEST_CASE("patchify flattens patches in scan order and channels first") {
  NetworkConfig cfg = tiny_classify(1, 1);
  cfg.image_size = 4;
  cfg.patch_size = 2;
  cfg.channels = 1;
  std::vector<double> img(16);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  Tensor patches = patchify(Tensor::from_data({1, 1, 4, 4}, std::move(img)), 0, cfg);
  Tensor want = Tensor::from_data(
      {4, 4}, {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15});
  CHECK(bits_equal(patches, want));

  NetworkConfig two = tiny_classify(1, 1);
  two.image_size = 2;
  two.patch_size = 1;
  two.channels = 2;
  Tensor img2 = Tensor::from_data({1, 2, 2, 2}, {0, 1, 2, 3, 10, 11, 12, 13});
  Tensor want2 = Tensor::from_data({4, 2}, {0, 10, 1, 11, 2, 12, 3, 13});
  CHECK(bits_equal(patchify(img2, 0, two), want2));
}

TEST_CASE("identical images in one batch produce identical logit rows") {
  Network net = build_network(tiny_classify(2, 2), 4);
  std::mt19937_64 rng(52);
  std::vector<double> one(64);
  for (double& v : one) v = parformer::uniform01(rng);
  std::vector<double> both = one;
  both.insert(both.end(), one.begin(), one.end());
  Tensor logits = net.forward_classify(Tensor::from_data({2, 1, 8, 8}, std::move(both)));
  for (int64_t j = 0; j < 3; ++j) CHECK(logits.at({0, j}) == logits.at({1, j}));
}

TEST_CASE("forward_lm handles length-1 inputs and rejects bad ids") {
  Network net = build_network(tiny_lm(2, 2), 5);
  Tensor out = net.forward_lm({{3}});
  REQUIRE(out.shape() == Shape{1, 1, 11});
  for (double v : out.data()) CHECK(std::isfinite(v));

  CHECK_THROWS_WITH_AS(net.forward_lm({{11}}), doctest::Contains("out of range"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(net.forward_lm({{1, 2}, {1}}), doctest::Contains("ragged"),
                       std::invalid_argument);
}

TEST_CASE("perturbing a later token never changes earlier logits") {
  Network net = build_network(tiny_lm(2, 2), 6);
  std::vector<int> base{1, 4, 2, 0, 7};
  Tensor ref = net.forward_lm({base});
  std::vector<int> poked = base;
  poked[3] = 9;
  Tensor out = net.forward_lm({poked});
  const int64_t v = 11;
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t j = 0; j < v; ++j)
      CHECK(out.at({0, t, j}) == ref.at({0, t, j}));
}

TEST_CASE("rk4 trunk equals hand-chained rk4 steps") {
  NetworkConfig cfg = tiny_classify(2, 1);
  cfg.scheme = Scheme::rk4;
  Network net = build_network(cfg, 9);
  std::mt19937_64 rng(53);
  Tensor x = rand_tensor({5, 8}, rng);

  Tensor manual = x;
  for (int m = 0; m < 2; ++m) {
    VectorField f = vector_field_of_block(net.sets[0], net.block_config(m, false, nullptr));
    manual = rk4_step(f, static_cast<double>(m), manual, 1.0);
  }
  CHECK(bits_equal(net.run_layers(x), manual));
}

TEST_CASE("one backward pass reaches every independent parameter set") {
  Network net = build_network(tiny_classify(4, 2), 10);
  std::mt19937_64 rng(54);
  Tensor images = rand_tensor({2, 1, 8, 8}, rng, 0.5);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor logits = net.forward_classify(images);
    tape.backward(cross_entropy_mean(logits, {0, 2}));
  }
  auto touched = [](const Tensor& t) {
    if (!t.has_grad()) return false;
    for (double g : t.grad())
      if (g != 0.0) return true;
    return false;
  };
  for (size_t s = 0; s < net.sets.size(); ++s) {
    bool any = false;
    for (const Tensor& t : {net.sets[s].attn.wo, net.sets[s].mlp.w1, net.sets[s].mlp.w2})
      any = any || touched(t);
    CHECK_MESSAGE(any, "set ", s, " received no gradient");
  }
  CHECK(touched(net.patch_w));
  CHECK(touched(net.pos_embed));
  CHECK(touched(net.head_w));
}

TEST_CASE("shared gradients equal the summed gradients of an unshared twin") {
  NetworkConfig shared_cfg = tiny_classify(2, 1);
  NetworkConfig twin_cfg = tiny_classify(2, 2);
  Network shared = build_network(shared_cfg, 11);
  Network twin = build_network(twin_cfg, 11);
  // Same weights in both layer slots of the twin.
  auto copy_set = [](const BlockParams& from, BlockParams& to) {
    auto assign = [](const Tensor& src, Tensor dst) { dst.data() = src.data(); };
    for (size_t h = 0; h < from.attn.wq.size(); ++h) {
      assign(from.attn.wq[h], to.attn.wq[h]);
      assign(from.attn.bq[h], to.attn.bq[h]);
      assign(from.attn.wk[h], to.attn.wk[h]);
      assign(from.attn.bk[h], to.attn.bk[h]);
      assign(from.attn.wv[h], to.attn.wv[h]);
      assign(from.attn.bv[h], to.attn.bv[h]);
    }
    assign(from.attn.wo, to.attn.wo);
    assign(from.attn.bo, to.attn.bo);
    assign(from.mlp.w1, to.mlp.w1);
    assign(from.mlp.b1, to.mlp.b1);
    assign(from.mlp.w2, to.mlp.w2);
    assign(from.mlp.b2, to.mlp.b2);
    if (from.norm1) {
      assign(from.norm1->gamma, to.norm1->gamma);
      assign(from.norm1->beta, to.norm1->beta);
    }
    if (from.norm2) {
      assign(from.norm2->gamma, to.norm2->gamma);
      assign(from.norm2->beta, to.norm2->beta);
    }
  };
  copy_set(shared.sets[0], twin.sets[0]);
  copy_set(shared.sets[0], twin.sets[1]);

  std::mt19937_64 rng(55);
  Tensor x = rand_tensor({5, 8}, rng);
  auto backward_sum = [&x](const Network& net) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(net.run_layers(x)));
  };
  backward_sum(shared);
  backward_sum(twin);

  auto check_pair = [](const Tensor& s, const Tensor& a, const Tensor& b) {
    REQUIRE(s.has_grad());
    REQUIRE(a.has_grad());
    REQUIRE(b.has_grad());
    for (size_t i = 0; i < s.grad().size(); ++i) {
      const double want = a.grad()[i] + b.grad()[i];
      const double got = s.grad()[i];
      CHECK(std::abs(got - want) / (std::abs(got) + std::abs(want) + 1e-300) < 1e-10);
    }
  };
  check_pair(shared.sets[0].attn.wo, twin.sets[0].attn.wo, twin.sets[1].attn.wo);
  check_pair(shared.sets[0].mlp.w1, twin.sets[0].mlp.w1, twin.sets[1].mlp.w1);
  check_pair(shared.sets[0].norm1->gamma, twin.sets[0].norm1->gamma, twin.sets[1].norm1->gamma);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject damage") {
  Network net = build_network(tiny_lm(2, 2), 12);
  const std::string path = temp_path("ckpt.bin");
  save_checkpoint(path, net);
  Network loaded = load_checkpoint(path);

  CHECK(loaded.cfg.task == net.cfg.task);
  CHECK(loaded.cfg.depth == net.cfg.depth);
  CHECK(loaded.cfg.vocab_size == net.cfg.vocab_size);
  const auto pa = net.parameters(), pb = loaded.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(bits_equal(pa[i].tensor, pb[i].tensor));
  }

  // Same forward behavior, not just same bytes.
  Tensor a = net.forward_lm({{1, 2, 3}});
  Tensor b = loaded.forward_lm({{1, 2, 3}});
  CHECK(bits_equal(a, b));

  std::FILE* in = std::fopen(path.c_str(), "rb");
  REQUIRE(in);
  std::fseek(in, 0, SEEK_END);
  const long size = std::ftell(in);
  std::fseek(in, 0, SEEK_SET);
  std::vector<char> bytes(static_cast<size_t>(size));
  REQUIRE(std::fread(bytes.data(), 1, bytes.size(), in) == bytes.size());
  std::fclose(in);

  const std::string cut = temp_path("ckpt_cut.bin");
  std::FILE* out = std::fopen(cut.c_str(), "wb");
  REQUIRE(out);
  std::fwrite(bytes.data(), 1, bytes.size() * 3 / 5, out);
  std::fclose(out);
  CHECK_THROWS_AS(load_checkpoint(cut), std::runtime_error);

  const std::string junk = temp_path("ckpt_junk.bin");
  out = std::fopen(junk.c_str(), "wb");
  REQUIRE(out);
  std::fwrite("not a checkpoint at all, just text", 1, 34, out);
  std::fclose(out);
  CHECK_THROWS_WITH_AS(load_checkpoint(junk), doctest::Contains("not a checkpoint"),
                       std::runtime_error);
}

TEST_CASE("config JSON round-trips every field") {
  NetworkConfig cfg = tiny_lm(4, 2);
  cfg.scheme = Scheme::rk4;
  cfg.variant = BlockVariant::parallel;
  cfg.norm_variant = NormVariant::B;
  cfg.dropout_p = 0.1;
  cfg.stoch_depth_p = 0.05;
  NetworkConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.task == cfg.task);
  CHECK(back.variant == cfg.variant);
  CHECK(back.norm_variant == cfg.norm_variant);
  CHECK(back.scheme == cfg.scheme);
  CHECK(back.depth == cfg.depth);
  CHECK(back.independent_layers == cfg.independent_layers);
  CHECK(back.dim == cfg.dim);
  CHECK(back.heads == cfg.heads);
  CHECK(back.mlp_ratio == cfg.mlp_ratio);
  CHECK(back.ln_eps == cfg.ln_eps);
  CHECK(back.dropout_p == cfg.dropout_p);
  CHECK(back.stoch_depth_p == cfg.stoch_depth_p);
  CHECK(back.vocab_size == cfg.vocab_size);
  CHECK(back.context == cfg.context);
}

}  // TEST_SUITE
