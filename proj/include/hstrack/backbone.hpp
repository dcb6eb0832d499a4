#pragma once

#include <optional>
#include <vector>

#include "hstrack/nn.hpp"
#include "hstrack/objectives.hpp"
#include "hstrack/tensor.hpp"

namespace hstrack {

struct BackboneConfig {
  int template_size = 32;
  int search_size = 64;
  int patch = 8;
  int dim = 64;
  int heads = 4;
  int blocks = 12;
  int mlp_ratio = 2;
  int in_channels = 3;  // false-color default; 6 for the material-input variant

  int template_tokens() const {
    int g = template_size / patch;
    return g * g;
  }
  int search_tokens() const {
    int g = search_size / patch;
    return g * g;
  }
  int total_tokens() const { return template_tokens() + search_tokens(); }
  int search_grid() const { return search_size / patch; }
  int template_grid() const { return template_size / patch; }
};

/// Token sequence at some layer (template tokens first), plus the final
/// block's attention record once it has run.
struct TokenState {
  Tensor tokens;      // [B, total_tokens, dim]
  Tensor final_attn;  // [B, heads, T, T], detached; empty before last block
};

/// Small ViT-style tracking backbone: shared patch embedding with learned
/// per-region positional offsets, pre-norm transformer blocks over the
/// joint template+search token sequence.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, Rng rng);

  /// template [.., C, 32, 32] and search [.., C, 64, 64] -> layer-0 tokens.
  Tensor embed_pair(Tape* tape, const Tensor& templ, const Tensor& search);

  /// One pre-norm block; `layer` in 1..blocks. The final block writes its
  /// softmaxed attention weights into state.final_attn.
  Tensor block_forward(Tape* tape, const Tensor& tokens, int layer,
                       TokenState* state);

  /// Candidate relevance mask over the search grid: V=0 marks the
  /// ceil(rho*tokens) highest-scoring search tokens (score = mean attention
  /// received from template tokens in the final block, averaged over heads;
  /// ties broken by lower row-major index). With gt_box set (warm-up), V=0
  /// exactly on cells whose centers fall inside the box.
  Tensor relevance_mask(const TokenState& state, double rho,
                        const BBox* gt_box = nullptr, int sample = 0) const;

  const BackboneConfig& config() const { return cfg_; }
  Params& params() { return params_; }
  void set_trainable(bool trainable);

 private:
  struct Block {
    LayerNorm norm1, norm2;
    Linear qkv, proj, fc1, fc2;
  };

  BackboneConfig cfg_;
  Conv2d patch_embed_;
  Var* pos_template_ = nullptr;
  Var* pos_search_ = nullptr;
  std::vector<Block> blocks_;
  Params params_;
};

/// Nearest-neighbor upsampling of a [1,g,g] cell mask to [1,g*cell,g*cell].
Tensor upsample_mask(const Tensor& grid_mask, int cell);

}  // namespace hstrack
