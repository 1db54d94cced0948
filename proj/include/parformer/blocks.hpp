#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "parformer/tensor.hpp"

namespace parformer {

enum class BlockVariant { sequential, parallel };
enum class NormVariant { A, B, C, none };

std::string to_string(BlockVariant v);
std::string to_string(NormVariant v);
BlockVariant block_variant_from_string(const std::string& s);
NormVariant norm_variant_from_string(const std::string& s);

struct NormParams {
  Tensor gamma;  // [d]
  Tensor beta;   // [d]
};

/// Per-head projections. wq/wk/wv[h] are [d x d/H]; wo is [d x d].
struct AttentionParams {
  int heads = 1;
  std::vector<Tensor> wq, wk, wv;
  std::vector<Tensor> bq, bk, bv;
  Tensor wo, bo;
};

struct MlpParams {
  Tensor w1, b1;  // [d x d_ff], [d_ff]
  Tensor w2, b2;  // [d_ff x d], [d]
};

/// One layer's weights. Which norm slots exist depends on the block/norm
/// variant; norm1 doubles as the single norm of parallel variants A and C.
struct BlockParams {
  AttentionParams attn;
  MlpParams mlp;
  std::optional<NormParams> norm1;
  std::optional<NormParams> norm2;
};

struct BlockConfig {
  BlockVariant variant = BlockVariant::parallel;
  NormVariant norm_variant = NormVariant::A;
  double dropout_p = 0.0;
  double stoch_depth_p = 0.0;
  bool training = false;
  bool causal = false;
  int layer_index = 0;  // m, for the stochastic depth schedule
  int depth = 1;        // D
  double ln_eps = 1e-5;
  std::mt19937_64* rng = nullptr;  // required when training with nonzero rates

  void validate() const;
};

/// Multi-head dot-product attention over the full sequence; no residual.
/// causal=true masks attention to future positions.
Tensor attention(const Tensor& x, const AttentionParams& p, bool causal,
                 double dropout_p = 0.0, bool training = false,
                 std::mt19937_64* rng = nullptr);

/// Position-wise two-layer GELU MLP; no residual.
Tensor mlp(const Tensor& x, const MlpParams& p, double dropout_p = 0.0,
           bool training = false, std::mt19937_64* rng = nullptr);

/// Attention sublayer's residual update (norm applied per cfg), without the
/// residual add. For norm variant A the MLP update reads the shared norm1.
Tensor attention_update(const Tensor& x, const BlockParams& p, const BlockConfig& cfg);
Tensor mlp_update(const Tensor& x, const BlockParams& p, const BlockConfig& cfg);

/// The parallel block's residual update F + G (norm variant folded in). The
/// block output is x + update; an Euler step is x + h * update.
Tensor parallel_update(const Tensor& x, const BlockParams& p, const BlockConfig& cfg);

/// x + G, then + F on the result (two residual sublayers in sequence).
Tensor sequential_block(const Tensor& x, const BlockParams& p, const BlockConfig& cfg);
/// x + [F(x) + G(x)], both branches fed the same input.
Tensor parallel_block(const Tensor& x, const BlockParams& p, const BlockConfig& cfg);

struct StochDepthGate {
  bool keep = true;
  double scale = 1.0;
};

/// Linear-decay survival 1 - p*m/(D-1); kept updates are scaled by 1/survival
/// during training. Evaluation keeps everything unscaled.
StochDepthGate stochastic_depth_gate(int layer_index, int depth, double p,
                                     std::mt19937_64& rng, bool training);

/// Full layer: dispatches on cfg.variant, applies the stochastic depth gate.
Tensor apply_block(const Tensor& x, const BlockParams& p, const BlockConfig& cfg);

/// Random parameters for tests and frozen-field construction (not training
/// init): weights N(0, weight_scale), biases N(0, weight_scale/4), norm gains
/// near 1. Grad-enabled.
BlockParams random_block_params(int64_t d, int heads, int64_t d_ff, bool with_norm1,
                                bool with_norm2, std::mt19937_64& rng,
                                double weight_scale = 0.4);

/// Attention sub-step then MLP sub-step, each a single Euler update of size h.
/// With h=1 and norm variant none this is the sequential block, bit for bit.
Tensor lie_trotter_step(const Tensor& x, const BlockParams& p, const BlockConfig& cfg,
                        double h);

}  // namespace parformer
