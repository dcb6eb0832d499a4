#pragma once

#include <vector>

#include "hstrack/nn.hpp"
#include "hstrack/tensor.hpp"

namespace hstrack {

enum class BranchOp { kCrossAttention, kConv };
enum class FusionKind { kBottleneck, kAddition, kConv, kAttention };

struct PromptConfig {
  int dim = 64;
  int branch_channels = 3;  // material channels per frequency branch
  int patch = 8;
  int template_grid = 4;    // token grid sides, must match the backbone
  int search_grid = 8;
  int hf_hidden = 32;       // channel width between the 1x1 projections
  int hf_groups = 4;
  int fusion_hidden = 32;   // bottleneck latent width
  BranchOp low_op = BranchOp::kCrossAttention;   // operator-assignment axis
  BranchOp high_op = BranchOp::kConv;
  FusionKind fusion = FusionKind::kBottleneck;
  bool identity_fusion = false;  // test hook: subband fusion becomes identity
};

/// Per-branch, per-region prompt grids carried between injection layers.
struct PromptGrids {
  Tensor low_t, high_t;  // template region, [B, dim, tg, tg]
  Tensor low_s, high_s;  // search region, [B, dim, sg, sg]
};

/// Wavelet-domain prompt refinement: 2D Haar analysis of prompt and backbone
/// grids, cross-attention fusion of the LL subbands (prompt tokens as
/// queries, residual + layer norm), group-convolution fusion of each HF
/// subband on the channel concat [H_i || P_i], inverse Haar synthesis.
/// The operator assignment per frequency is configurable for ablations.
class WmpBlock {
 public:
  WmpBlock() = default;
  WmpBlock(const std::string& name, const PromptConfig& cfg, Rng& rng,
           Params& ps);

  /// prompt, backbone: [B, dim, g, g] with even g; applied per region.
  Tensor forward(Tape* tape, const Tensor& prompt, const Tensor& backbone,
                 bool training);

 private:
  struct AttnFusion {
    Linear wq, wk, wv, wo;
    LayerNorm norm;
  };
  struct ConvFusion {
    Conv2d in_proj;   // 1x1, 2*dim -> hf_hidden
    Conv2d gconv;     // 3x3 group conv
    BatchNorm2d bn;
    Conv2d out_proj;  // 1x1, hf_hidden -> dim
  };
  Tensor fuse_attn(Tape* tape, AttnFusion& f, const Tensor& prompt_sb,
                   const Tensor& backbone_sb);
  Tensor fuse_conv(Tape* tape, ConvFusion& f, const Tensor& prompt_sb,
                   const Tensor& backbone_sb, bool training);

  PromptConfig cfg_;
  // low-frequency operator (one of the two is populated per config)
  AttnFusion low_attn_;
  ConvFusion low_conv_;
  // high-frequency operator, one instance per subband (HL, LH, HH)
  std::vector<AttnFusion> high_attn_;
  std::vector<ConvFusion> high_conv_;
};

/// Fuses the two branch prompts into the injected token prompt. The default
/// bottleneck path is concat -> down-projection -> residual middle layer ->
/// zero-initialized up-projection, so injection starts as an exact no-op.
class PromptFusion {
 public:
  PromptFusion() = default;
  PromptFusion(const std::string& name, const PromptConfig& cfg, Rng& rng,
               Params& ps);

  /// low, high: [B, dim, g, g] -> fused tokens [B, g*g, dim]
  Tensor forward(Tape* tape, const Tensor& low, const Tensor& high);

  // bottleneck up-projection access (zero-initialized by construction)
  Var* up_weight() { return up_.weight; }
  Var* up_bias() { return up_.bias; }

 private:
  PromptConfig cfg_;
  Linear down_, middle_, up_;          // bottleneck path
  std::vector<Conv2d> conv_stack_;     // convolution-fusion variant
  Linear aq_, ak_, av_, ao_;           // attention-fusion variant
};

/// The complete prompt stack: per-branch material patch embeddings plus one
/// (low WMP, high WMP, fusion) triple per injection layer. Branch prompts
/// propagate between consecutive injection layers; fusion outputs never feed
/// back into branch state.
class PromptStack {
 public:
  PromptStack(const PromptConfig& cfg, int num_injections, Rng rng);

  /// Branch maps [.., c, H, W] per region -> layer-0 prompt grids.
  PromptGrids embed(Tape* tape, const Tensor& low_t, const Tensor& high_t,
                    const Tensor& low_s, const Tensor& high_s);

  /// Refine grids against the backbone tokens at one injection layer and
  /// return the fused prompt tokens [B, total_tokens, dim].
  Tensor apply(Tape* tape, int injection_index, PromptGrids& grids,
               const Tensor& backbone_tokens, bool training);

  const PromptConfig& config() const { return cfg_; }
  Params& params() { return params_; }

 private:
  PromptConfig cfg_;
  Conv2d embed_low_, embed_high_;
  struct LayerModules {
    WmpBlock low, high;
    PromptFusion fusion;
  };
  std::vector<LayerModules> layers_;
  Params params_;
};

/// Residual prompt injection: tokens + prompt, shapes must match.
Tensor inject(const Tensor& tokens, const Tensor& prompt);

}  // namespace hstrack
