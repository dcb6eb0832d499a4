#include "hstrack/prompts.hpp"

#include <cmath>
#include <stdexcept>

#include "hstrack/wavelets.hpp"

namespace hstrack {

namespace {

// [B, C, g, g] -> [B, g*g, C]
Tensor grid_to_tokens(const Tensor& grid) {
  int B = grid.dim(0), C = grid.dim(1), g = grid.dim(2);
  return permute(reshape(grid, {B, C, g * g}), {0, 2, 1});
}

// [B, T, C] -> [B, C, g, g]
Tensor tokens_to_grid(const Tensor& tokens, int g) {
  int B = tokens.dim(0), C = tokens.dim(2);
  return reshape(permute(tokens, {0, 2, 1}), {B, C, g, g});
}

Tensor ensure_batched3(const Tensor& t) {
  if (t.rank() == 4) return t;
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return reshape(t, s);
}

}  // namespace

// ---- WmpBlock ---------------------------------------------------------------

WmpBlock::WmpBlock(const std::string& name, const PromptConfig& cfg, Rng& rng,
                   Params& ps)
    : cfg_(cfg) {
  auto make_attn = [&](const std::string& base) {
    AttnFusion f;
    f.wq = Linear(base + ".wq", cfg.dim, cfg.dim, rng, ps);
    f.wk = Linear(base + ".wk", cfg.dim, cfg.dim, rng, ps);
    f.wv = Linear(base + ".wv", cfg.dim, cfg.dim, rng, ps);
    f.wo = Linear(base + ".wo", cfg.dim, cfg.dim, rng, ps);
    f.norm = LayerNorm(base + ".norm", cfg.dim, ps);
    return f;
  };
  auto make_conv = [&](const std::string& base) {
    ConvFusion f;
    f.in_proj = Conv2d(base + ".in", 2 * cfg.dim, cfg.hf_hidden, 1, 1, 0, 1, rng, ps);
    f.gconv = Conv2d(base + ".gconv", cfg.hf_hidden, cfg.hf_hidden, 3, 1, 1,
                     cfg.hf_groups, rng, ps);
    f.bn = BatchNorm2d(base + ".bn", cfg.hf_hidden, ps);
    f.out_proj = Conv2d(base + ".out", cfg.hf_hidden, cfg.dim, 1, 1, 0, 1, rng, ps);
    return f;
  };

  if (cfg.low_op == BranchOp::kCrossAttention)
    low_attn_ = make_attn(name + ".ll");
  else
    low_conv_ = make_conv(name + ".ll");
  const char* sub[3] = {"hl", "lh", "hh"};
  for (int i = 0; i < 3; ++i) {
    if (cfg.high_op == BranchOp::kConv)
      high_conv_.push_back(make_conv(name + "." + sub[i]));
    else
      high_attn_.push_back(make_attn(name + "." + sub[i]));
  }
}

Tensor WmpBlock::fuse_attn(Tape* tape, AttnFusion& f, const Tensor& prompt_sb,
                           const Tensor& backbone_sb) {
  int g = prompt_sb.dim(2);
  Tensor pq = grid_to_tokens(prompt_sb);
  Tensor bk = grid_to_tokens(backbone_sb);
  Tensor q = f.wq.forward(tape, pq);
  Tensor k = f.wk.forward(tape, bk);
  Tensor v = f.wv.forward(tape, bk);
  Tensor ctx = f.wo.forward(tape, attention(q, k, v));
  Tensor out = f.norm.forward(tape, add(ctx, pq));  // residual then norm
  return tokens_to_grid(out, g);
}

Tensor WmpBlock::fuse_conv(Tape* tape, ConvFusion& f, const Tensor& prompt_sb,
                           const Tensor& backbone_sb, bool training) {
  Tensor x = concat({backbone_sb, prompt_sb}, 1);  // [H_i || P_i]
  x = f.in_proj.forward(tape, x);
  x = f.gconv.forward(tape, x);
  x = training ? f.bn.forward_train(tape, x) : f.bn.forward(tape, x, false);
  x = leaky_relu(x);
  return f.out_proj.forward(tape, x);
}

Tensor WmpBlock::forward(Tape* tape, const Tensor& prompt,
                         const Tensor& backbone, bool training) {
  if (prompt.shape() != backbone.shape())
    throw std::invalid_argument("wmp: prompt " + shape_str(prompt.shape()) +
                                " and backbone " + shape_str(backbone.shape()) +
                                " grids must match");
  Subbands2D ps = haar2d(prompt);
  Subbands2D hs = haar2d(backbone);

  Subbands2D fused;
  if (cfg_.identity_fusion) {
    fused = ps;
  } else {
    fused.ll = cfg_.low_op == BranchOp::kCrossAttention
                   ? fuse_attn(tape, low_attn_, ps.ll, hs.ll)
                   : fuse_conv(tape, low_conv_, ps.ll, hs.ll, training);
    const Tensor* psub[3] = {&ps.hl, &ps.lh, &ps.hh};
    const Tensor* hsub[3] = {&hs.hl, &hs.lh, &hs.hh};
    Tensor* out[3] = {&fused.hl, &fused.lh, &fused.hh};
    for (int i = 0; i < 3; ++i) {
      *out[i] = cfg_.high_op == BranchOp::kConv
                    ? fuse_conv(tape, high_conv_[static_cast<size_t>(i)], *psub[i],
                                *hsub[i], training)
                    : fuse_attn(tape, high_attn_[static_cast<size_t>(i)], *psub[i],
                                *hsub[i]);
    }
  }
  return ihaar2d(fused);
}

// ---- PromptFusion -------------------------------------------------------------

PromptFusion::PromptFusion(const std::string& name, const PromptConfig& cfg,
                           Rng& rng, Params& ps)
    : cfg_(cfg) {
  switch (cfg.fusion) {
    case FusionKind::kBottleneck:
      down_ = Linear(name + ".down", 2 * cfg.dim, cfg.fusion_hidden, rng, ps);
      middle_ = Linear(name + ".middle", cfg.fusion_hidden, cfg.fusion_hidden, rng, ps);
      up_ = Linear(name + ".up", cfg.fusion_hidden, cfg.dim, rng, ps);
      up_.weight->assign(Tensor::zeros(up_.weight->value.shape()));
      up_.bias->assign(Tensor::zeros(up_.bias->value.shape()));
      break;
    case FusionKind::kAddition:
      break;
    case FusionKind::kConv: {
      conv_stack_.emplace_back(name + ".conv0", 2 * cfg.dim, cfg.dim, 3, 1, 1, 1, rng, ps);
      conv_stack_.emplace_back(name + ".conv1", cfg.dim, cfg.dim, 3, 1, 1, 1, rng, ps);
      conv_stack_.emplace_back(name + ".conv2", cfg.dim, cfg.dim, 3, 1, 1, 1, rng, ps);
      Conv2d& last = conv_stack_.back();
      last.weight->assign(Tensor::zeros(last.weight->value.shape()));
      last.bias->assign(Tensor::zeros(last.bias->value.shape()));
      break;
    }
    case FusionKind::kAttention:
      aq_ = Linear(name + ".aq", cfg.dim, cfg.dim, rng, ps);
      ak_ = Linear(name + ".ak", cfg.dim, cfg.dim, rng, ps);
      av_ = Linear(name + ".av", cfg.dim, cfg.dim, rng, ps);
      ao_ = Linear(name + ".ao", cfg.dim, cfg.dim, rng, ps);
      ao_.weight->assign(Tensor::zeros(ao_.weight->value.shape()));
      ao_.bias->assign(Tensor::zeros(ao_.bias->value.shape()));
      break;
  }
}

Tensor PromptFusion::forward(Tape* tape, const Tensor& low, const Tensor& high) {
  if (low.shape() != high.shape())
    throw std::invalid_argument("fusion: branch shapes differ: " +
                                shape_str(low.shape()) + " vs " +
                                shape_str(high.shape()));
  switch (cfg_.fusion) {
    case FusionKind::kBottleneck: {
      Tensor cat = grid_to_tokens(concat({low, high}, 1));  // [B, T, 2*dim]
      Tensor z0 = leaky_relu(down_.forward(tape, cat));
      Tensor z1 = add(middle_.forward(tape, z0), z0);
      return up_.forward(tape, leaky_relu(z1));
    }
    case FusionKind::kAddition:
      return grid_to_tokens(add(low, high));
    case FusionKind::kConv: {
      Tensor x = concat({low, high}, 1);
      x = relu(conv_stack_[0].forward(tape, x));
      x = relu(conv_stack_[1].forward(tape, x));
      return grid_to_tokens(conv_stack_[2].forward(tape, x));
    }
    case FusionKind::kAttention: {
      Tensor lt = grid_to_tokens(low);
      Tensor ht = grid_to_tokens(high);
      Tensor ctx = attention(aq_.forward(tape, lt), ak_.forward(tape, ht),
                             av_.forward(tape, ht));
      return ao_.forward(tape, ctx);
    }
  }
  throw std::logic_error("fusion: unknown kind");
}

// ---- PromptStack ---------------------------------------------------------------

PromptStack::PromptStack(const PromptConfig& cfg, int num_injections, Rng rng)
    : cfg_(cfg) {
  embed_low_ = Conv2d("prompt.embed_low", cfg.branch_channels, cfg.dim,
                      cfg.patch, cfg.patch, 0, 1, rng, params_);
  embed_high_ = Conv2d("prompt.embed_high", cfg.branch_channels, cfg.dim,
                       cfg.patch, cfg.patch, 0, 1, rng, params_);
  for (int i = 0; i < num_injections; ++i) {
    std::string base = "prompt.layer" + std::to_string(i);
    LayerModules lm;
    lm.low = WmpBlock(base + ".low", cfg, rng, params_);
    lm.high = WmpBlock(base + ".high", cfg, rng, params_);
    lm.fusion = PromptFusion(base + ".fusion", cfg, rng, params_);
    layers_.push_back(std::move(lm));
  }
}

PromptGrids PromptStack::embed(Tape* tape, const Tensor& low_t,
                               const Tensor& high_t, const Tensor& low_s,
                               const Tensor& high_s) {
  auto one = [&](Conv2d& pe, const Tensor& m, int grid, const char* who) {
    Tensor x = ensure_batched3(m);
    if (x.dim(1) != cfg_.branch_channels)
      throw std::invalid_argument(std::string("prompt embed: ") + who + " has " +
                                  std::to_string(x.dim(1)) + " channels, expected " +
                                  std::to_string(cfg_.branch_channels));
    Tensor g = pe.forward(tape, x);
    if (g.dim(2) != grid)
      throw std::invalid_argument(std::string("prompt embed: ") + who +
                                  " grid mismatch: got " + shape_str(g.shape()));
    return g;
  };
  PromptGrids grids;
  grids.low_t = one(embed_low_, low_t, cfg_.template_grid, "template low");
  grids.high_t = one(embed_high_, high_t, cfg_.template_grid, "template high");
  grids.low_s = one(embed_low_, low_s, cfg_.search_grid, "search low");
  grids.high_s = one(embed_high_, high_s, cfg_.search_grid, "search high");
  return grids;
}

Tensor PromptStack::apply(Tape* tape, int injection_index, PromptGrids& grids,
                          const Tensor& backbone_tokens, bool training) {
  if (injection_index < 0 || injection_index >= static_cast<int>(layers_.size()))
    throw std::invalid_argument("prompt apply: injection index out of range");
  LayerModules& lm = layers_[static_cast<size_t>(injection_index)];
  int tg = cfg_.template_grid, sg = cfg_.search_grid;
  int nt = tg * tg, ns = sg * sg;
  if (backbone_tokens.rank() != 3 || backbone_tokens.dim(1) != nt + ns)
    throw std::invalid_argument("prompt apply: backbone tokens must be [B, " +
                                std::to_string(nt + ns) + ", dim], got " +
                                shape_str(backbone_tokens.shape()));

  Tensor h_t = tokens_to_grid(slice(backbone_tokens, 1, 0, nt), tg);
  Tensor h_s = tokens_to_grid(slice(backbone_tokens, 1, nt, ns), sg);

  grids.low_t = lm.low.forward(tape, grids.low_t, h_t, training);
  grids.low_s = lm.low.forward(tape, grids.low_s, h_s, training);
  grids.high_t = lm.high.forward(tape, grids.high_t, h_t, training);
  grids.high_s = lm.high.forward(tape, grids.high_s, h_s, training);

  Tensor fused_t = lm.fusion.forward(tape, grids.low_t, grids.high_t);
  Tensor fused_s = lm.fusion.forward(tape, grids.low_s, grids.high_s);
  return concat({fused_t, fused_s}, 1);
}

Tensor inject(const Tensor& tokens, const Tensor& prompt) {
  if (tokens.shape() != prompt.shape())
    throw std::invalid_argument("inject: shape mismatch " +
                                shape_str(tokens.shape()) + " vs " +
                                shape_str(prompt.shape()));
  return add(tokens, prompt);
}

}  // namespace hstrack
