#include "parformer/network.hpp"

#include <sstream>
#include <stdexcept>

#include "parformer/rng.hpp"

namespace parformer {

std::string to_string(Task t) { return t == Task::classify ? "classify" : "lm"; }

Task task_from_string(const std::string& s) {
  if (s == "classify") return Task::classify;
  if (s == "lm") return Task::lm;
  throw std::invalid_argument("unknown task '" + s + "' (classify|lm)");
}

void NetworkConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (independent_layers < 1 || independent_layers > depth)
    throw std::invalid_argument("independent layer count must satisfy 1 <= k <= depth");
  if (depth % independent_layers != 0) {
    std::ostringstream os;
    os << "independent layer count k=" << independent_layers << " must divide depth D=" << depth;
    throw std::invalid_argument(os.str());
  }
  if (dim < 1 || heads < 1 || dim % heads != 0)
    throw std::invalid_argument("heads must divide model dim");
  if (mlp_ratio < 1) throw std::invalid_argument("mlp_ratio must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0 || stoch_depth_p < 0.0 || stoch_depth_p >= 1.0)
    throw std::invalid_argument("dropout/stochastic depth rates must be in [0,1)");
  if (scheme == Scheme::rk4 && variant == BlockVariant::sequential)
    throw std::invalid_argument(
        "rk4 integrates the parallel layer field; combine it with --variant parallel");
  if (task == Task::classify) {
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
      throw std::invalid_argument("patch size must divide image size");
    if (channels < 1) throw std::invalid_argument("channels must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  } else {
    if (vocab_size < 2) throw std::invalid_argument("vocabulary must have >= 2 symbols");
    if (context < 1) throw std::invalid_argument("context must be >= 1");
  }
}

NetworkConfig preset(const std::string& name) {
  NetworkConfig cfg;
  if (name == "deit_ti") {
    cfg.task = Task::classify;
    cfg.depth = 12;
    cfg.independent_layers = 12;
    cfg.dim = 192;
    cfg.heads = 3;
    cfg.mlp_ratio = 4;
    cfg.image_size = 224;
    cfg.patch_size = 16;
    cfg.channels = 3;
    cfg.num_classes = 100;
    return cfg;
  }
  if (name == "nlp_small") {
    cfg.task = Task::lm;
    cfg.depth = 4;
    cfg.independent_layers = 4;
    cfg.dim = 128;
    cfg.heads = 2;
    cfg.mlp_ratio = 4;  // d_ff = 512
    cfg.vocab_size = 256;
    cfg.context = 64;
    return cfg;
  }
  throw std::invalid_argument("unknown preset '" + name + "' (deit_ti|nlp_small)");
}

std::vector<int> share_map(int depth, int k) {
  if (depth < 1 || k < 1 || k > depth || depth % k != 0) {
    std::ostringstream os;
    os << "share_map: k=" << k << " must divide depth D=" << depth;
    throw std::invalid_argument(os.str());
  }
  std::vector<int> m(static_cast<size_t>(depth));
  for (int i = 0; i < depth; ++i)
    m[static_cast<size_t>(i)] = static_cast<int>((static_cast<int64_t>(i) * k) / depth);
  return m;
}

namespace {

Tensor init_weight(Shape shape, std::mt19937_64& rng) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = trunc_normal(rng, 0.02);
  return Tensor::param(std::move(shape), std::move(v));
}

Tensor init_zeros(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Tensor init_ones(Shape shape) {
  Tensor t = Tensor::full(std::move(shape), 1.0);
  t.set_requires_grad(true);
  return t;
}

NormParams init_norm(int64_t d) { return NormParams{init_ones({d}), init_zeros({d})}; }

bool has_norm1(BlockVariant, NormVariant n) { return n != NormVariant::none; }

bool has_norm2(BlockVariant v, NormVariant n) {
  if (n == NormVariant::none) return false;
  if (v == BlockVariant::sequential) return true;  // pre-LN and post-LN both use two
  return n == NormVariant::B;                      // parallel A and C share one norm
}

void append_norm(std::vector<NamedParam>& out, const std::string& prefix, const NormParams& n) {
  out.push_back({prefix + ".gamma", n.gamma});
  out.push_back({prefix + ".beta", n.beta});
}

}  // namespace

Network build_network(const NetworkConfig& cfg, uint64_t seed) {
  cfg.validate();
  Network net;
  net.cfg = cfg;
  net.layer_map = share_map(cfg.depth, cfg.independent_layers);

  std::mt19937_64 rng(mix_seed(seed, 0x7061726d, 0));  // parameter stream
  const int64_t d = cfg.dim;
  const int64_t dh = d / cfg.heads;
  const int64_t dff = cfg.d_ff();

  net.sets.reserve(static_cast<size_t>(cfg.independent_layers));
  for (int s = 0; s < cfg.independent_layers; ++s) {
    BlockParams p;
    p.attn.heads = cfg.heads;
    for (int h = 0; h < cfg.heads; ++h) {
      p.attn.wq.push_back(init_weight({d, dh}, rng));
      p.attn.bq.push_back(init_zeros({dh}));
      p.attn.wk.push_back(init_weight({d, dh}, rng));
      p.attn.bk.push_back(init_zeros({dh}));
      p.attn.wv.push_back(init_weight({d, dh}, rng));
      p.attn.bv.push_back(init_zeros({dh}));
    }
    p.attn.wo = init_weight({d, d}, rng);
    p.attn.bo = init_zeros({d});
    p.mlp.w1 = init_weight({d, dff}, rng);
    p.mlp.b1 = init_zeros({dff});
    p.mlp.w2 = init_weight({dff, d}, rng);
    p.mlp.b2 = init_zeros({d});
    if (has_norm1(cfg.variant, cfg.norm_variant)) p.norm1 = init_norm(d);
    if (has_norm2(cfg.variant, cfg.norm_variant)) p.norm2 = init_norm(d);
    net.sets.push_back(std::move(p));
  }

  if (cfg.task == Task::classify) {
    const int64_t f = static_cast<int64_t>(cfg.channels) * cfg.patch_size * cfg.patch_size;
    net.patch_w = init_weight({f, d}, rng);
    net.patch_b = init_zeros({d});
    net.cls_token = init_weight({1, d}, rng);
  } else {
    net.tok_embed = init_weight({cfg.vocab_size, d}, rng);
  }
  net.pos_embed = init_weight({cfg.seq_len(), d}, rng);
  net.final_norm = init_norm(d);
  const int64_t out_dim = cfg.task == Task::classify ? cfg.num_classes : cfg.vocab_size;
  net.head_w = init_weight({d, out_dim}, rng);
  net.head_b = init_zeros({out_dim});
  return net;
}

std::vector<NamedParam> Network::parameters() const {
  std::vector<NamedParam> out;
  for (size_t s = 0; s < sets.size(); ++s) {
    const BlockParams& p = sets[s];
    const std::string base = "layers." + std::to_string(s);
    for (int h = 0; h < p.attn.heads; ++h) {
      const std::string hb = base + ".attn.h" + std::to_string(h);
      out.push_back({hb + ".wq", p.attn.wq[static_cast<size_t>(h)]});
      out.push_back({hb + ".bq", p.attn.bq[static_cast<size_t>(h)]});
      out.push_back({hb + ".wk", p.attn.wk[static_cast<size_t>(h)]});
      out.push_back({hb + ".bk", p.attn.bk[static_cast<size_t>(h)]});
      out.push_back({hb + ".wv", p.attn.wv[static_cast<size_t>(h)]});
      out.push_back({hb + ".bv", p.attn.bv[static_cast<size_t>(h)]});
    }
    out.push_back({base + ".attn.wo", p.attn.wo});
    out.push_back({base + ".attn.bo", p.attn.bo});
    out.push_back({base + ".mlp.w1", p.mlp.w1});
    out.push_back({base + ".mlp.b1", p.mlp.b1});
    out.push_back({base + ".mlp.w2", p.mlp.w2});
    out.push_back({base + ".mlp.b2", p.mlp.b2});
    if (p.norm1) append_norm(out, base + ".norm1", *p.norm1);
    if (p.norm2) append_norm(out, base + ".norm2", *p.norm2);
  }
  if (cfg.task == Task::classify) {
    out.push_back({"patch.w", patch_w});
    out.push_back({"patch.b", patch_b});
    out.push_back({"cls_token", cls_token});
  } else {
    out.push_back({"tok_embed", tok_embed});
  }
  out.push_back({"pos_embed", pos_embed});
  append_norm(out, "final_norm", final_norm);
  out.push_back({"head.w", head_w});
  out.push_back({"head.b", head_b});
  return out;
}

int64_t Network::param_count() const {
  int64_t n = 0;
  for (const NamedParam& p : parameters()) n += p.tensor.numel();
  return n;
}

BlockConfig Network::block_config(int layer_index, bool training, std::mt19937_64* rng) const {
  BlockConfig bc;
  bc.variant = cfg.variant;
  bc.norm_variant = cfg.norm_variant;
  bc.dropout_p = cfg.dropout_p;
  bc.stoch_depth_p = cfg.stoch_depth_p;
  bc.training = training;
  bc.causal = cfg.task == Task::lm;
  bc.layer_index = layer_index;
  bc.depth = cfg.depth;
  bc.ln_eps = cfg.ln_eps;
  bc.rng = rng;
  return bc;
}

Tensor Network::run_layers(Tensor x, bool training, std::mt19937_64* rng) const {
  for (int m = 0; m < cfg.depth; ++m) {
    const BlockParams& set = sets[static_cast<size_t>(layer_map[static_cast<size_t>(m)])];
    BlockConfig bc = block_config(m, training, rng);
    if (cfg.scheme == Scheme::euler) {
      x = apply_block(x, set, bc);
      continue;
    }
    // One RK4 step per layer over [m, m+1]; the whole update shares one
    // stochastic depth gate, mirroring the Euler path.
    StochDepthGate gate{true, 1.0};
    if (training && cfg.stoch_depth_p > 0.0) {
      gate = stochastic_depth_gate(m, cfg.depth, cfg.stoch_depth_p, *rng, training);
    }
    if (!gate.keep) continue;
    VectorField f = vector_field_of_block(set, bc);
    x = add_scaled(x, rk4_combination(f, static_cast<double>(m), x, 1.0), gate.scale / 6.0);
  }
  return x;
}

Tensor patchify(const Tensor& images, int64_t b, const NetworkConfig& cfg) {
  const int64_t c_n = cfg.channels, s = cfg.image_size, p = cfg.patch_size;
  const int64_t side = cfg.patches_per_side();
  const int64_t feat = c_n * p * p;
  std::vector<double> out(static_cast<size_t>(side * side * feat));
  const auto& img = images.data();
  const int64_t img_base = b * c_n * s * s;
  for (int64_t gy = 0; gy < side; ++gy)
    for (int64_t gx = 0; gx < side; ++gx)
      for (int64_t c = 0; c < c_n; ++c)
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px) {
            const int64_t y = gy * p + py, x = gx * p + px;
            out[static_cast<size_t>((gy * side + gx) * feat + (c * p + py) * p + px)] =
                img[static_cast<size_t>(img_base + (c * s + y) * s + x)];
          }
  return Tensor::from_data({side * side, feat}, std::move(out));
}

Tensor Network::forward_classify(const Tensor& images, bool training,
                                 std::mt19937_64* rng) const {
  if (cfg.task != Task::classify)
    throw std::logic_error("forward_classify on a network built for lm");
  if (images.rank() != 4 || images.dim(1) != cfg.channels || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.image_size) {
    throw std::invalid_argument("forward_classify: expected [B x " +
                                std::to_string(cfg.channels) + " x " +
                                std::to_string(cfg.image_size) + " x " +
                                std::to_string(cfg.image_size) + "], got " +
                                shape_str(images.shape()));
  }
  const int64_t batch = images.dim(0);
  std::vector<Tensor> logit_rows;
  logit_rows.reserve(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    Tensor x = add_rowvec(matmul(patchify(images, b, cfg), patch_w), patch_b);
    x = concat_rows({cls_token, x});
    x = add(x, pos_embed);
    x = run_layers(x, training, rng);
    x = layer_norm(x, final_norm.gamma, final_norm.beta, cfg.ln_eps);
    Tensor cls = slice_rows(x, 0, 1);
    logit_rows.push_back(add_rowvec(matmul(cls, head_w), head_b));
  }
  return batch == 1 ? logit_rows[0] : concat_rows(logit_rows);
}

Tensor Network::forward_lm(const std::vector<std::vector<int>>& tokens, bool training,
                           std::mt19937_64* rng) const {
  if (cfg.task != Task::lm) throw std::logic_error("forward_lm on a network built for classify");
  if (tokens.empty()) throw std::invalid_argument("forward_lm: empty batch");
  const int64_t len = static_cast<int64_t>(tokens.front().size());
  if (len < 1 || len > cfg.context)
    throw std::invalid_argument("forward_lm: sequence length must be in [1, context]");
  for (const auto& row : tokens) {
    if (static_cast<int64_t>(row.size()) != len)
      throw std::invalid_argument("forward_lm: ragged batch");
    for (int id : row)
      if (id < 0 || id >= cfg.vocab_size)
        throw std::invalid_argument("forward_lm: token id out of range");
  }
  Tensor pos = len == cfg.context ? pos_embed : slice_rows(pos_embed, 0, len);
  std::vector<Tensor> rows;
  rows.reserve(tokens.size());
  for (const auto& ids : tokens) {
    Tensor x = add(embedding_rows(tok_embed, ids), pos);
    x = run_layers(x, training, rng);
    x = layer_norm(x, final_norm.gamma, final_norm.beta, cfg.ln_eps);
    rows.push_back(add_rowvec(matmul(x, head_w), head_b));
  }
  Tensor flat = rows.size() == 1 ? rows[0] : concat_rows(rows);
  return reshape(flat, {static_cast<int64_t>(tokens.size()), len, cfg.vocab_size});
}

}  // namespace parformer
