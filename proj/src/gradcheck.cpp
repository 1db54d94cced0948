#include "parformer/gradcheck.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "parformer/blocks.hpp"
#include "parformer/integrators.hpp"
#include "parformer/rng.hpp"

namespace parformer {

GradCheckReport gradcheck(const std::string& name, const std::function<Tensor()>& loss_fn,
                          const std::vector<NamedParam>& params, double tol, double fd_h) {
  for (const NamedParam& p : params) p.tensor.node()->grad.clear();

  Tape tape;
  {
    TapeScope recording(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const NamedParam& p : params) {
    analytic.push_back(p.tensor.has_grad()
                           ? p.tensor.grad()
                           : std::vector<double>(static_cast<size_t>(p.tensor.numel()), 0.0));
    p.tensor.node()->grad.clear();
  }

  GradCheckReport rep;
  rep.name = name;
  NoGradScope fd_only;
  // FD noise grows with |loss| (cancellation), so the denominator floor must
  // too; otherwise structurally-zero gradients (e.g. attention key biases,
  // which shift a softmax row uniformly) read as relative error. Observed FD
  // noise is a few 1e-10 per unit loss at this step size; 3e-5 leaves two
  // orders of margin below while staying far under real gradient scales.
  const double floor = 3e-5 * std::max(1.0, std::abs(loss_fn().value()));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor handle = params[pi].tensor;  // non-const view of the shared storage
    auto& data = handle.data();
    for (size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + fd_h;
      const double fp = loss_fn().value();
      data[j] = saved - fd_h;
      const double fm = loss_fn().value();
      data[j] = saved;
      const double fd = (fp - fm) / (2.0 * fd_h);
      const double ad = analytic[pi][j];
      const double rel = std::abs(ad - fd) / (std::abs(ad) + std::abs(fd) + floor);
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = params[pi].name;
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

void SuiteReport::add(GradCheckReport r) {
  pass = pass && r.pass;
  reports.push_back(std::move(r));
}

void SuiteReport::merge(const SuiteReport& other) {
  pass = pass && other.pass;
  reports.insert(reports.end(), other.reports.begin(), other.reports.end());
}

std::string SuiteReport::summary() const {
  std::ostringstream os;
  for (const GradCheckReport& r : reports) {
    os << (r.pass ? "pass" : "FAIL") << "  " << r.name << "  max_rel_err=" << r.max_rel_err;
    if (!r.worst_param.empty()) os << "  worst=" << r.worst_param;
    os << "\n";
  }
  return os.str();
}

namespace {

Tensor rand_param(Shape shape, std::mt19937_64& rng, double scl = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = scl * normal01(rng);
  return Tensor::param(std::move(shape), std::move(v));
}

Tensor rand_const(Shape shape, std::mt19937_64& rng, double scl = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = scl * normal01(rng);
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Fixed random cotangent so a check exercises more than an all-ones seed.
Tensor probe_loss(const Tensor& out, const Tensor& probe) { return sum(mul(out, probe)); }

std::string tag(const std::string& base, int seed) {
  return base + "[seed " + std::to_string(seed) + "]";
}

std::vector<NamedParam> block_param_list(const BlockParams& p) {
  std::vector<NamedParam> out;
  for (int h = 0; h < p.attn.heads; ++h) {
    const std::string hb = "attn.h" + std::to_string(h);
    out.push_back({hb + ".wq", p.attn.wq[static_cast<size_t>(h)]});
    out.push_back({hb + ".bq", p.attn.bq[static_cast<size_t>(h)]});
    out.push_back({hb + ".wk", p.attn.wk[static_cast<size_t>(h)]});
    out.push_back({hb + ".bk", p.attn.bk[static_cast<size_t>(h)]});
    out.push_back({hb + ".wv", p.attn.wv[static_cast<size_t>(h)]});
    out.push_back({hb + ".bv", p.attn.bv[static_cast<size_t>(h)]});
  }
  out.push_back({"attn.wo", p.attn.wo});
  out.push_back({"attn.bo", p.attn.bo});
  out.push_back({"mlp.w1", p.mlp.w1});
  out.push_back({"mlp.b1", p.mlp.b1});
  out.push_back({"mlp.w2", p.mlp.w2});
  out.push_back({"mlp.b2", p.mlp.b2});
  if (p.norm1) {
    out.push_back({"norm1.gamma", p.norm1->gamma});
    out.push_back({"norm1.beta", p.norm1->beta});
  }
  if (p.norm2) {
    out.push_back({"norm2.gamma", p.norm2->gamma});
    out.push_back({"norm2.beta", p.norm2->beta});
  }
  return out;
}

}  // namespace

SuiteReport gradcheck_ops(int seeds) {
  SuiteReport suite;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(mix_seed(0x6f7073, 0, static_cast<uint64_t>(s)));

    {
      Tensor a = rand_param({3, 4}, rng), b = rand_param({3, 4}, rng);
      Tensor pr = rand_const({3, 4}, rng);
      suite.add(gradcheck(tag("add", s), [&] { return probe_loss(add(a, b), pr); }, {{"a", a}, {"b", b}}));
      suite.add(gradcheck(tag("sub", s), [&] { return probe_loss(sub(a, b), pr); }, {{"a", a}, {"b", b}}));
      suite.add(gradcheck(tag("mul", s), [&] { return probe_loss(mul(a, b), pr); }, {{"a", a}, {"b", b}}));
      suite.add(gradcheck(tag("scale", s), [&] { return probe_loss(scale(a, -1.7), pr); }, {{"a", a}}));
      suite.add(gradcheck(tag("add_scaled", s), [&] { return probe_loss(add_scaled(a, b, 0.37), pr); },
                          {{"a", a}, {"b", b}}));
    }
    {
      Tensor a = rand_param({3, 4}, rng), b = rand_param({4}, rng);
      Tensor pr = rand_const({3, 4}, rng);
      suite.add(gradcheck(tag("add_rowvec", s), [&] { return probe_loss(add_rowvec(a, b), pr); },
                          {{"a", a}, {"b", b}}));
    }
    {
      Tensor a = rand_param({3, 4}, rng), b = rand_param({4, 2}, rng);
      Tensor pr = rand_const({3, 2}, rng);
      suite.add(gradcheck(tag("matmul", s), [&] { return probe_loss(matmul(a, b), pr); },
                          {{"a", a}, {"b", b}}));
      Tensor prt = rand_const({4, 3}, rng);
      suite.add(gradcheck(tag("transpose", s), [&] { return probe_loss(transpose(a), prt); }, {{"a", a}}));
    }
    {
      Tensor x = rand_param({3, 5}, rng), pr = rand_const({3, 5}, rng);
      suite.add(gradcheck(tag("softmax_rows", s), [&] { return probe_loss(softmax_rows(x), pr); },
                          {{"x", x}}));
    }
    {
      Tensor x = rand_param({4, 4}, rng), pr = rand_const({4, 4}, rng);
      suite.add(gradcheck(tag("causal_mask+softmax", s),
                          [&] { return probe_loss(softmax_rows(causal_mask(x)), pr); }, {{"x", x}}));
    }
    {
      Tensor x = rand_param({3, 6}, rng);
      Tensor gamma = rand_param({6}, rng, 0.5), beta = rand_param({6}, rng, 0.2);
      Tensor pr = rand_const({3, 6}, rng);
      suite.add(gradcheck(tag("layer_norm", s),
                          [&] { return probe_loss(layer_norm(x, gamma, beta, 1e-5), pr); },
                          {{"x", x}, {"gamma", gamma}, {"beta", beta}}));
    }
    {
      Tensor x = rand_param({3, 4}, rng), pr = rand_const({3, 4}, rng);
      suite.add(gradcheck(tag("gelu", s), [&] { return probe_loss(gelu(x), pr); }, {{"x", x}}));
      suite.add(gradcheck(tag("sum", s), [&] { return sum(x); }, {{"x", x}}));
      Tensor pr2 = rand_const({2, 6}, rng);
      suite.add(gradcheck(tag("reshape", s), [&] { return probe_loss(reshape(x, {2, 6}), pr2); },
                          {{"x", x}}));
    }
    {
      Tensor a = rand_param({2, 3}, rng), b = rand_param({1, 3}, rng);
      Tensor pr = rand_const({3, 3}, rng);
      suite.add(gradcheck(tag("concat_rows", s),
                          [&] { return probe_loss(concat_rows({a, b}), pr); }, {{"a", a}, {"b", b}}));
      Tensor c = rand_param({2, 2}, rng);
      Tensor prc = rand_const({2, 5}, rng);
      suite.add(gradcheck(tag("concat_cols", s),
                          [&] { return probe_loss(concat_cols({a, c}), prc); }, {{"a", a}, {"c", c}}));
      Tensor prs = rand_const({1, 3}, rng);
      suite.add(gradcheck(tag("slice_rows", s),
                          [&] { return probe_loss(slice_rows(a, 1, 2), prs); }, {{"a", a}}));
    }
    {
      Tensor table = rand_param({5, 3}, rng);
      const std::vector<int> ids{0, 2, 2, 4};
      Tensor pr = rand_const({4, 3}, rng);
      suite.add(gradcheck(tag("embedding_rows", s),
                          [&] { return probe_loss(embedding_rows(table, ids), pr); },
                          {{"table", table}}));
    }
    {
      Tensor logits = rand_param({3, 5}, rng);
      const std::vector<int> labels{1, 0, 4};
      suite.add(gradcheck(tag("cross_entropy_mean", s),
                          [&] { return cross_entropy_mean(logits, labels); }, {{"logits", logits}}));
    }
    {
      Tensor x = rand_param({4, 5}, rng), pr = rand_const({4, 5}, rng);
      // Reseeding inside the closure pins the mask, so FD sees the same
      // function the tape differentiated.
      suite.add(gradcheck(tag("dropout", s),
                          [&] {
                            std::mt19937_64 mask_rng(mix_seed(77, 0, static_cast<uint64_t>(s)));
                            return probe_loss(dropout(x, 0.3, mask_rng), pr);
                          },
                          {{"x", x}}));
    }
  }
  return suite;
}

SuiteReport gradcheck_blocks(int seeds) {
  SuiteReport suite;
  const int64_t d = 8, dff = 16, L = 4;
  const int heads = 2;
  struct Case {
    BlockVariant variant;
    NormVariant norm;
  };
  const Case cases[] = {
      {BlockVariant::parallel, NormVariant::A},   {BlockVariant::parallel, NormVariant::B},
      {BlockVariant::parallel, NormVariant::C},   {BlockVariant::parallel, NormVariant::none},
      {BlockVariant::sequential, NormVariant::A}, {BlockVariant::sequential, NormVariant::C},
      {BlockVariant::sequential, NormVariant::none},
  };
  for (int s = 0; s < seeds; ++s) {
    for (const Case& c : cases) {
      std::mt19937_64 rng(mix_seed(0x626c6b, static_cast<uint64_t>(c.variant) * 8 +
                                                 static_cast<uint64_t>(c.norm),
                                   static_cast<uint64_t>(s)));
      const bool n2 = c.norm != NormVariant::none &&
                      (c.variant == BlockVariant::sequential || c.norm == NormVariant::B);
      BlockParams p =
          random_block_params(d, heads, dff, c.norm != NormVariant::none, n2, rng);
      Tensor x = rand_param({L, d}, rng, 0.5);
      Tensor pr = rand_const({L, d}, rng);
      BlockConfig cfg;
      cfg.variant = c.variant;
      cfg.norm_variant = c.norm;
      auto params = block_param_list(p);
      params.push_back({"x", x});
      const std::string name =
          std::string(to_string(c.variant)) + "_block(norm " + to_string(c.norm) + ")";
      suite.add(gradcheck(tag(name, s), [&] { return probe_loss(apply_block(x, p, cfg), pr); },
                          params));
    }
  }
  return suite;
}

SuiteReport gradcheck_rk4(int seeds) {
  SuiteReport suite;
  const int64_t d = 6, dff = 12, L = 3;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(mix_seed(0x726b34, 0, static_cast<uint64_t>(s)));
    BlockParams p = random_block_params(d, 2, dff, true, false, rng);
    Tensor x = rand_param({L, d}, rng, 0.5);
    Tensor pr = rand_const({L, d}, rng);
    BlockConfig cfg;
    cfg.variant = BlockVariant::parallel;
    cfg.norm_variant = NormVariant::A;
    VectorField f = vector_field_of_block(p, cfg);
    auto params = block_param_list(p);
    params.push_back({"x", x});
    suite.add(gradcheck(tag("rk4_2step_unroll", s),
                        [&] { return probe_loss(integrate(f, x, 0.0, 2.0, 2, Scheme::rk4), pr); },
                        params));
  }
  return suite;
}

SuiteReport gradcheck_network(int seeds) {
  SuiteReport suite;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(mix_seed(0x6e6574, 0, static_cast<uint64_t>(s)));
    {
      NetworkConfig cfg;
      cfg.task = Task::classify;
      cfg.variant = BlockVariant::parallel;
      cfg.norm_variant = NormVariant::A;
      cfg.depth = 2;
      cfg.independent_layers = 2;
      cfg.dim = 4;
      cfg.heads = 2;
      cfg.mlp_ratio = 2;
      cfg.image_size = 4;
      cfg.patch_size = 2;
      cfg.channels = 1;
      cfg.num_classes = 2;
      Network net = build_network(cfg, mix_seed(11, 0, static_cast<uint64_t>(s)));
      Tensor images = rand_const({2, 1, 4, 4}, rng, 0.5);
      const std::vector<int> labels{0, 1};
      suite.add(gradcheck(tag("network_classify", s),
                          [&] { return cross_entropy_mean(net.forward_classify(images), labels); },
                          net.parameters()));
    }
    {
      NetworkConfig cfg;
      cfg.task = Task::lm;
      cfg.variant = BlockVariant::sequential;
      cfg.norm_variant = NormVariant::A;
      cfg.depth = 2;
      cfg.independent_layers = 1;
      cfg.dim = 4;
      cfg.heads = 2;
      cfg.mlp_ratio = 2;
      cfg.vocab_size = 7;
      cfg.context = 5;
      Network net = build_network(cfg, mix_seed(13, 0, static_cast<uint64_t>(s)));
      const std::vector<std::vector<int>> tokens{{1, 4, 2, 0}, {6, 6, 3, 5}};
      const std::vector<int> targets{4, 2, 0, 3, 6, 3, 5, 1};
      suite.add(gradcheck(tag("network_lm", s),
                          [&] {
                            Tensor out = net.forward_lm(tokens);
                            return cross_entropy_mean(reshape(out, {8, 7}), targets);
                          },
                          net.parameters()));
    }
  }
  return suite;
}

SuiteReport run_gradcheck(const std::string& scope, int seeds) {
  if (seeds < 1) throw std::invalid_argument("gradcheck needs at least one seed");
  SuiteReport suite;
  if (scope == "ops") return gradcheck_ops(seeds);
  if (scope == "block") return gradcheck_blocks(seeds);
  if (scope == "network") return gradcheck_network(seeds);
  if (scope == "rk4") return gradcheck_rk4(seeds);
  if (scope == "all") {
    suite.merge(gradcheck_ops(seeds));
    suite.merge(gradcheck_blocks(seeds));
    suite.merge(gradcheck_network(seeds));
    suite.merge(gradcheck_rk4(seeds));
    return suite;
  }
  throw std::invalid_argument("unknown gradcheck scope '" + scope + "' (ops|block|network|rk4|all)");
}

}  // namespace parformer
