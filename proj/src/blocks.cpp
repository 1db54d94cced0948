#include "parformer/blocks.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "parformer/rng.hpp"

namespace parformer {

std::string to_string(BlockVariant v) {
  return v == BlockVariant::sequential ? "sequential" : "parallel";
}

std::string to_string(NormVariant v) {
  switch (v) {
    case NormVariant::A: return "A";
    case NormVariant::B: return "B";
    case NormVariant::C: return "C";
    default: return "none";
  }
}

BlockVariant block_variant_from_string(const std::string& s) {
  if (s == "sequential") return BlockVariant::sequential;
  if (s == "parallel") return BlockVariant::parallel;
  throw std::invalid_argument("unknown block variant '" + s + "' (sequential|parallel)");
}

NormVariant norm_variant_from_string(const std::string& s) {
  if (s == "A") return NormVariant::A;
  if (s == "B") return NormVariant::B;
  if (s == "C") return NormVariant::C;
  if (s == "none") return NormVariant::none;
  throw std::invalid_argument("unknown norm variant '" + s + "' (A|B|C|none)");
}

void BlockConfig::validate() const {
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw std::invalid_argument("dropout rate must be in [0,1)");
  if (stoch_depth_p < 0.0 || stoch_depth_p >= 1.0)
    throw std::invalid_argument("stochastic depth rate must be in [0,1)");
  if (depth < 1 || layer_index < 0 || layer_index >= depth)
    throw std::invalid_argument("layer_index/depth out of range");
  if (training && (dropout_p > 0.0 || stoch_depth_p > 0.0) && rng == nullptr)
    throw std::invalid_argument("training with nonzero rates requires an rng");
}

namespace {

Tensor maybe_dropout(const Tensor& x, double p, bool training, std::mt19937_64* rng) {
  if (!training || p == 0.0) return x;
  return dropout(x, p, *rng);
}

const NormParams& need_norm1(const BlockParams& p, const char* what) {
  if (!p.norm1) throw std::invalid_argument(std::string("block params missing norm1 for ") + what);
  return *p.norm1;
}

const NormParams& need_norm2(const BlockParams& p, const char* what) {
  if (!p.norm2) throw std::invalid_argument(std::string("block params missing norm2 for ") + what);
  return *p.norm2;
}

// Sequential composition with both residual updates scaled by `s` (s=1 is the
// plain block; a splitting integrator passes s=h; stochastic depth passes
// 1/survival).
Tensor seq_compose(const Tensor& x, const BlockParams& p, const BlockConfig& cfg, double s) {
  switch (cfg.norm_variant) {
    case NormVariant::none: {
      Tensor x1 = add_scaled(x, attention(x, p.attn, cfg.causal, cfg.dropout_p, cfg.training, cfg.rng), s);
      return add_scaled(x1, mlp(x1, p.mlp, cfg.dropout_p, cfg.training, cfg.rng), s);
    }
    case NormVariant::A:
    case NormVariant::B: {
      // Pre-LN, one norm per sublayer (DeiT/ViT convention).
      const NormParams& n1 = need_norm1(p, "pre-LN attention");
      const NormParams& n2 = need_norm2(p, "pre-LN mlp");
      Tensor g = attention(layer_norm(x, n1.gamma, n1.beta, cfg.ln_eps), p.attn, cfg.causal,
                           cfg.dropout_p, cfg.training, cfg.rng);
      Tensor x1 = add_scaled(x, g, s);
      Tensor f = mlp(layer_norm(x1, n2.gamma, n2.beta, cfg.ln_eps), p.mlp, cfg.dropout_p,
                     cfg.training, cfg.rng);
      return add_scaled(x1, f, s);
    }
    case NormVariant::C: {
      // Post-LN (original transformer layer).
      const NormParams& n1 = need_norm1(p, "post-LN attention");
      const NormParams& n2 = need_norm2(p, "post-LN mlp");
      Tensor x1 = add_scaled(x, attention(x, p.attn, cfg.causal, cfg.dropout_p, cfg.training, cfg.rng), s);
      x1 = layer_norm(x1, n1.gamma, n1.beta, cfg.ln_eps);
      Tensor x2 = add_scaled(x1, mlp(x1, p.mlp, cfg.dropout_p, cfg.training, cfg.rng), s);
      return layer_norm(x2, n2.gamma, n2.beta, cfg.ln_eps);
    }
  }
  throw std::logic_error("unreachable norm variant");
}

}  // namespace

Tensor attention(const Tensor& x, const AttentionParams& p, bool causal, double dropout_p,
                 bool training, std::mt19937_64* rng) {
  if (x.rank() != 2) throw std::invalid_argument("attention: input must be [L x d], got " + shape_str(x.shape()));
  const int64_t d = x.dim(1);
  if (p.heads < 1 || d % p.heads != 0) {
    std::ostringstream os;
    os << "attention: heads H=" << p.heads << " must divide model dim d=" << d;
    throw std::invalid_argument(os.str());
  }
  if (static_cast<int>(p.wq.size()) != p.heads || static_cast<int>(p.wk.size()) != p.heads ||
      static_cast<int>(p.wv.size()) != p.heads) {
    throw std::invalid_argument("attention: per-head projection count does not match heads");
  }
  const int64_t dh = d / p.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    Tensor q = add_rowvec(matmul(x, p.wq[static_cast<size_t>(h)]), p.bq[static_cast<size_t>(h)]);
    Tensor k = add_rowvec(matmul(x, p.wk[static_cast<size_t>(h)]), p.bk[static_cast<size_t>(h)]);
    Tensor v = add_rowvec(matmul(x, p.wv[static_cast<size_t>(h)]), p.bv[static_cast<size_t>(h)]);
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dh);
    if (causal) scores = causal_mask(scores);
    Tensor probs = softmax_rows(scores);
    probs = maybe_dropout(probs, dropout_p, training, rng);
    head_outs.push_back(matmul(probs, v));
  }
  Tensor merged = p.heads == 1 ? head_outs[0] : concat_cols(head_outs);
  Tensor out = add_rowvec(matmul(merged, p.wo), p.bo);
  return maybe_dropout(out, dropout_p, training, rng);
}

Tensor mlp(const Tensor& x, const MlpParams& p, double dropout_p, bool training,
           std::mt19937_64* rng) {
  Tensor h = gelu(add_rowvec(matmul(x, p.w1), p.b1));
  Tensor out = add_rowvec(matmul(h, p.w2), p.b2);
  return maybe_dropout(out, dropout_p, training, rng);
}

Tensor attention_update(const Tensor& x, const BlockParams& p, const BlockConfig& cfg) {
  switch (cfg.norm_variant) {
    case NormVariant::none:
    case NormVariant::C:
      return attention(x, p.attn, cfg.causal, cfg.dropout_p, cfg.training, cfg.rng);
    case NormVariant::A:
    case NormVariant::B: {
      const NormParams& n = need_norm1(p, "attention pre-norm");
      return attention(layer_norm(x, n.gamma, n.beta, cfg.ln_eps), p.attn, cfg.causal,
                       cfg.dropout_p, cfg.training, cfg.rng);
    }
  }
  throw std::logic_error("unreachable norm variant");
}

Tensor mlp_update(const Tensor& x, const BlockParams& p, const BlockConfig& cfg) {
  switch (cfg.norm_variant) {
    case NormVariant::none:
    case NormVariant::C:
      return mlp(x, p.mlp, cfg.dropout_p, cfg.training, cfg.rng);
    case NormVariant::A:
    case NormVariant::B: {
      const NormParams& n = cfg.norm_variant == NormVariant::A ? need_norm1(p, "shared pre-norm")
                                                               : need_norm2(p, "mlp pre-norm");
      return mlp(layer_norm(x, n.gamma, n.beta, cfg.ln_eps), p.mlp, cfg.dropout_p, cfg.training,
                 cfg.rng);
    }
  }
  throw std::logic_error("unreachable norm variant");
}

Tensor parallel_update(const Tensor& x, const BlockParams& p, const BlockConfig& cfg) {
  switch (cfg.norm_variant) {
    case NormVariant::none: {
      Tensor g = attention(x, p.attn, cfg.causal, cfg.dropout_p, cfg.training, cfg.rng);
      Tensor f = mlp(x, p.mlp, cfg.dropout_p, cfg.training, cfg.rng);
      return add(g, f);
    }
    case NormVariant::A: {
      // One shared pre-norm; the attention context is the normalized sequence.
      const NormParams& n = need_norm1(p, "shared pre-norm");
      Tensor y = layer_norm(x, n.gamma, n.beta, cfg.ln_eps);
      Tensor g = attention(y, p.attn, cfg.causal, cfg.dropout_p, cfg.training, cfg.rng);
      Tensor f = mlp(y, p.mlp, cfg.dropout_p, cfg.training, cfg.rng);
      return add(g, f);
    }
    case NormVariant::B: {
      const NormParams& n1 = need_norm1(p, "attention pre-norm");
      const NormParams& n2 = need_norm2(p, "mlp pre-norm");
      Tensor g = attention(layer_norm(x, n1.gamma, n1.beta, cfg.ln_eps), p.attn, cfg.causal,
                           cfg.dropout_p, cfg.training, cfg.rng);
      Tensor f = mlp(layer_norm(x, n2.gamma, n2.beta, cfg.ln_eps), p.mlp, cfg.dropout_p,
                     cfg.training, cfg.rng);
      return add(g, f);
    }
    case NormVariant::C: {
      // Post-norm. The residual update is defined as norm(x + F + G) - x so
      // that the block stays one Euler step of its own vector field.
      const NormParams& n = need_norm1(p, "post-norm");
      Tensor g = attention(x, p.attn, cfg.causal, cfg.dropout_p, cfg.training, cfg.rng);
      Tensor f = mlp(x, p.mlp, cfg.dropout_p, cfg.training, cfg.rng);
      Tensor normed = layer_norm(add(x, add(g, f)), n.gamma, n.beta, cfg.ln_eps);
      return sub(normed, x);
    }
  }
  throw std::logic_error("unreachable norm variant");
}

Tensor sequential_block(const Tensor& x, const BlockParams& p, const BlockConfig& cfg) {
  cfg.validate();
  return seq_compose(x, p, cfg, 1.0);
}

Tensor parallel_block(const Tensor& x, const BlockParams& p, const BlockConfig& cfg) {
  cfg.validate();
  return add(x, parallel_update(x, p, cfg));
}

StochDepthGate stochastic_depth_gate(int layer_index, int depth, double p, std::mt19937_64& rng,
                                     bool training) {
  if (!training || p == 0.0) return {true, 1.0};
  const double survival =
      depth > 1 ? 1.0 - p * static_cast<double>(layer_index) / static_cast<double>(depth - 1) : 1.0;
  const double u = uniform01(rng);
  if (u >= survival) return {false, 0.0};
  return {true, 1.0 / survival};
}

Tensor apply_block(const Tensor& x, const BlockParams& p, const BlockConfig& cfg) {
  cfg.validate();
  StochDepthGate gate{true, 1.0};
  if (cfg.training && cfg.stoch_depth_p > 0.0) {
    gate = stochastic_depth_gate(cfg.layer_index, cfg.depth, cfg.stoch_depth_p, *cfg.rng,
                                 cfg.training);
  }
  if (!gate.keep) return x;
  if (cfg.variant == BlockVariant::parallel) {
    return add_scaled(x, parallel_update(x, p, cfg), gate.scale);
  }
  return seq_compose(x, p, cfg, gate.scale);
}

Tensor lie_trotter_step(const Tensor& x, const BlockParams& p, const BlockConfig& cfg, double h) {
  cfg.validate();
  Tensor x1 = add_scaled(x, attention_update(x, p, cfg), h);
  return add_scaled(x1, mlp_update(x1, p, cfg), h);
}

namespace {

Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double scl) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = scl * normal01(rng);
  return Tensor::param(std::move(shape), std::move(v));
}

}  // namespace

BlockParams random_block_params(int64_t d, int heads, int64_t d_ff, bool with_norm1,
                                bool with_norm2, std::mt19937_64& rng, double weight_scale) {
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("heads must divide d");
  const double bias_scale = weight_scale / 4.0;
  BlockParams p;
  p.attn.heads = heads;
  const int64_t dh = d / heads;
  for (int h = 0; h < heads; ++h) {
    p.attn.wq.push_back(rand_tensor({d, dh}, rng, weight_scale));
    p.attn.bq.push_back(rand_tensor({dh}, rng, bias_scale));
    p.attn.wk.push_back(rand_tensor({d, dh}, rng, weight_scale));
    p.attn.bk.push_back(rand_tensor({dh}, rng, bias_scale));
    p.attn.wv.push_back(rand_tensor({d, dh}, rng, weight_scale));
    p.attn.bv.push_back(rand_tensor({dh}, rng, bias_scale));
  }
  p.attn.wo = rand_tensor({d, d}, rng, weight_scale);
  p.attn.bo = rand_tensor({d}, rng, bias_scale);
  p.mlp.w1 = rand_tensor({d, d_ff}, rng, weight_scale);
  p.mlp.b1 = rand_tensor({d_ff}, rng, bias_scale);
  p.mlp.w2 = rand_tensor({d_ff, d}, rng, weight_scale);
  p.mlp.b2 = rand_tensor({d}, rng, bias_scale);
  auto norm = [&] {
    Tensor gamma = rand_tensor({d}, rng, 0.2);
    for (double& g : gamma.data()) g += 1.0;
    return NormParams{gamma, rand_tensor({d}, rng, 0.2)};
  };
  if (with_norm1) p.norm1 = norm();
  if (with_norm2) p.norm2 = norm();
  return p;
}

}  // namespace parformer
