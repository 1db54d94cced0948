#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "parformer/blocks.hpp"
#include "parformer/integrators.hpp"
#include "parformer/tensor.hpp"

namespace parformer {

enum class Task { classify, lm };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct NetworkConfig {
  Task task = Task::classify;
  BlockVariant variant = BlockVariant::sequential;
  NormVariant norm_variant = NormVariant::A;
  Scheme scheme = Scheme::euler;

  int depth = 12;              // D, layer slots
  int independent_layers = 12; // k, distinct parameter sets; must divide depth
  int dim = 192;               // d
  int heads = 3;
  int mlp_ratio = 4;           // d_ff = mlp_ratio * dim
  double ln_eps = 1e-5;
  double dropout_p = 0.0;
  double stoch_depth_p = 0.0;

  // classify geometry (desk default: 32x32 RGB, 4x4 patches, 10 classes)
  int image_size = 32;
  int patch_size = 4;
  int channels = 3;
  int num_classes = 10;

  // lm geometry (byte-level vocabulary)
  int vocab_size = 256;
  int context = 64;

  int d_ff() const { return mlp_ratio * dim; }
  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  /// Token count the positional embedding covers: patches + class token for
  /// classify, context for lm.
  int seq_len() const { return task == Task::classify ? num_patches() + 1 : context; }

  void validate() const;
};

/// deit_ti: DeiT-Ti shape (D=12, d=192, H=3, ratio 4) at 224/16 geometry with
/// a 100-class head. nlp_small: byte-level decoder LM, d=128, d_ff=512, H=2.
NetworkConfig preset(const std::string& name);

/// Layer m uses parameter set floor(m*k/D): k consecutive groups of D/k
/// layers. Requires k to divide D.
std::vector<int> share_map(int depth, int k);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

class Network {
 public:
  NetworkConfig cfg;
  std::vector<BlockParams> sets;  // k entries; layers alias into these
  std::vector<int> layer_map;     // depth entries, values in [0, k)

  // classify head
  Tensor patch_w, patch_b;  // [C*p*p x d], [d]
  Tensor cls_token;         // [1 x d]
  // lm head
  Tensor tok_embed;         // [V x d]

  Tensor pos_embed;         // [seq_len x d]
  NormParams final_norm;
  Tensor head_w, head_b;    // [d x num_classes] or [d x V]

  /// Every trainable tensor exactly once (shared sets appear once), in a
  /// fixed order with stable names. Checkpoints and the optimizer key off
  /// these names.
  std::vector<NamedParam> parameters() const;
  int64_t param_count() const;

  /// images: [B x C x S x S] pixel tensor. Returns [B x num_classes] logits.
  Tensor forward_classify(const Tensor& images, bool training = false,
                          std::mt19937_64* rng = nullptr) const;

  /// tokens: B rows of equal length L <= context, ids in [0, V). Returns
  /// [B x L x V] logits; causal masking throughout.
  Tensor forward_lm(const std::vector<std::vector<int>>& tokens, bool training = false,
                    std::mt19937_64* rng = nullptr) const;

  /// The D-layer trunk on one [L x d] sequence (embeddings already applied,
  /// final norm not). Exposed for equivalence and order tests.
  Tensor run_layers(Tensor x, bool training = false, std::mt19937_64* rng = nullptr) const;

  BlockConfig block_config(int layer_index, bool training, std::mt19937_64* rng) const;
};

/// Image b of a [B x C x S x S] batch as an [num_patches x C*p*p] matrix.
/// Patches scan the grid row-major; within a patch, features are flattened
/// channel-major, then pixel row, then pixel column.
Tensor patchify(const Tensor& images, int64_t b, const NetworkConfig& cfg);

/// Truncated-normal(0.02) weights and embeddings, zero biases, unit norm
/// gains. Deterministic for a given seed.
Network build_network(const NetworkConfig& cfg, uint64_t seed);

}  // namespace parformer
