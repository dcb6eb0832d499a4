#include "hstrack/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hstrack {

Backbone::Backbone(const BackboneConfig& cfg, Rng rng) : cfg_(cfg) {
  if (cfg.template_size % cfg.patch != 0 || cfg.search_size % cfg.patch != 0)
    throw std::invalid_argument("backbone: patch size must divide region sizes");
  patch_embed_ = Conv2d("backbone.patch", cfg.in_channels, cfg.dim, cfg.patch,
                        cfg.patch, 0, 1, rng, params_);
  pos_template_ = params_.var("backbone.pos_template",
                              init_normal(rng, {cfg.template_tokens(), cfg.dim}, 0.02));
  pos_search_ = params_.var("backbone.pos_search",
                            init_normal(rng, {cfg.search_tokens(), cfg.dim}, 0.02));
  for (int l = 0; l < cfg.blocks; ++l) {
    std::string base = "backbone.block" + std::to_string(l);
    Block b;
    b.norm1 = LayerNorm(base + ".norm1", cfg.dim, params_);
    b.norm2 = LayerNorm(base + ".norm2", cfg.dim, params_);
    b.qkv = Linear(base + ".qkv", cfg.dim, 3 * cfg.dim, rng, params_);
    b.proj = Linear(base + ".proj", cfg.dim, cfg.dim, rng, params_);
    b.fc1 = Linear(base + ".fc1", cfg.dim, cfg.mlp_ratio * cfg.dim, rng, params_);
    b.fc2 = Linear(base + ".fc2", cfg.mlp_ratio * cfg.dim, cfg.dim, rng, params_);
    blocks_.push_back(std::move(b));
  }
}

void Backbone::set_trainable(bool trainable) {
  for (Var* v : params_.vars()) v->trainable = trainable;
}

namespace {

Tensor ensure_batched(const Tensor& t) {
  if (t.rank() == 4) return t;
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return reshape(t, s);
}

}  // namespace

Tensor Backbone::embed_pair(Tape* tape, const Tensor& templ, const Tensor& search) {
  Tensor tt = ensure_batched(templ);
  Tensor ss = ensure_batched(search);
  auto check = [&](const Tensor& x, int size, const char* who) {
    if (x.dim(1) != cfg_.in_channels || x.dim(2) != size || x.dim(3) != size)
      throw std::invalid_argument(std::string("embed_pair: ") + who + " must be [.., " +
                                  std::to_string(cfg_.in_channels) + ", " +
                                  std::to_string(size) + ", " + std::to_string(size) +
                                  "], got " + shape_str(x.shape()));
  };
  check(tt, cfg_.template_size, "template");
  check(ss, cfg_.search_size, "search");
  if (tt.dim(0) != ss.dim(0))
    throw std::invalid_argument("embed_pair: batch size mismatch");
  int B = tt.dim(0);

  auto tokens_of = [&](const Tensor& img, int count) {
    Tensor f = patch_embed_.forward(tape, img);       // [B, dim, g, g]
    f = reshape(f, {B, cfg_.dim, count});
    return permute(f, {0, 2, 1});                      // [B, count, dim]
  };
  Tensor t_tok = tokens_of(tt, cfg_.template_tokens());
  Tensor s_tok = tokens_of(ss, cfg_.search_tokens());

  Tensor pt = tape ? tape->watch(*pos_template_) : pos_template_->value;
  Tensor ps = tape ? tape->watch(*pos_search_) : pos_search_->value;
  t_tok = add(t_tok, reshape(pt, {1, cfg_.template_tokens(), cfg_.dim}));
  s_tok = add(s_tok, reshape(ps, {1, cfg_.search_tokens(), cfg_.dim}));
  return concat({t_tok, s_tok}, 1);
}

Tensor Backbone::block_forward(Tape* tape, const Tensor& tokens, int layer,
                               TokenState* state) {
  if (layer < 1 || layer > cfg_.blocks)
    throw std::invalid_argument("block_forward: layer " + std::to_string(layer) +
                                " outside 1.." + std::to_string(cfg_.blocks));
  if (tokens.rank() != 3 || tokens.dim(1) != cfg_.total_tokens() ||
      tokens.dim(2) != cfg_.dim)
    throw std::invalid_argument("block_forward: tokens must be [B, " +
                                std::to_string(cfg_.total_tokens()) + ", " +
                                std::to_string(cfg_.dim) + "], got " +
                                shape_str(tokens.shape()));
  Block& blk = blocks_[static_cast<size_t>(layer - 1)];
  int B = tokens.dim(0), T = tokens.dim(1), D = cfg_.dim;
  int H = cfg_.heads, dh = D / H;

  Tensor normed = blk.norm1.forward(tape, tokens);
  Tensor qkv = blk.qkv.forward(tape, normed);          // [B, T, 3D]
  Tensor q = slice(qkv, 2, 0, D);
  Tensor k = slice(qkv, 2, D, D);
  Tensor v = slice(qkv, 2, 2 * D, D);
  auto heads = [&](const Tensor& x) {
    return reshape(permute(reshape(x, {B, T, H, dh}), {0, 2, 1, 3}), {B * H, T, dh});
  };
  Tensor qh = heads(q), kh = heads(k), vh = heads(v);
  Tensor scores = mul_scalar(bmm(qh, permute(kh, {0, 2, 1})),
                             1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax(scores, 2);                    // [B*H, T, T]
  if (state != nullptr && layer == cfg_.blocks)
    state->final_attn = reshape(attn.detach(), {B, H, T, T});
  Tensor ctx = bmm(attn, vh);                          // [B*H, T, dh]
  ctx = reshape(permute(reshape(ctx, {B, H, T, dh}), {0, 2, 1, 3}), {B, T, D});
  Tensor x = add(tokens, blk.proj.forward(tape, ctx));

  Tensor mlp = blk.fc2.forward(tape, relu(blk.fc1.forward(tape, blk.norm2.forward(tape, x))));
  return add(x, mlp);
}

Tensor Backbone::relevance_mask(const TokenState& state, double rho,
                                const BBox* gt_box, int sample) const {
  int g = cfg_.search_grid();
  int n_search = cfg_.search_tokens();
  std::vector<double> mask(static_cast<size_t>(n_search), 1.0);

  if (gt_box != nullptr) {
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j) {
        double cx = (j + 0.5) * cfg_.patch;
        double cy = (i + 0.5) * cfg_.patch;
        bool in = cx >= gt_box->x && cx <= gt_box->x + gt_box->w &&
                  cy >= gt_box->y && cy <= gt_box->y + gt_box->h;
        if (in) mask[static_cast<size_t>(i * g + j)] = 0.0;
      }
    return Tensor::from({1, g, g}, std::move(mask));
  }

  if (rho <= 0.0 || rho > 1.0)
    throw std::invalid_argument("relevance_mask: rho must be in (0,1]");
  if (state.final_attn.numel() == 0)
    throw std::invalid_argument("relevance_mask: final-block attention was not recorded");
  const Tensor& attn = state.final_attn;  // [B, H, T, T]
  int H = attn.dim(1), T = attn.dim(2);
  int n_template = cfg_.template_tokens();
  if (sample < 0 || sample >= attn.dim(0))
    throw std::invalid_argument("relevance_mask: sample index out of range");

  // score(j) = mean over heads and template queries of attn[q -> search j]
  std::vector<double> score(static_cast<size_t>(n_search), 0.0);
  for (int h = 0; h < H; ++h)
    for (int q = 0; q < n_template; ++q)
      for (int j = 0; j < n_search; ++j)
        score[static_cast<size_t>(j)] +=
            attn.at({sample, h, q, n_template + j});
  for (double& s : score) s /= static_cast<double>(H * n_template);
  (void)T;

  int keep = static_cast<int>(std::ceil(rho * n_search));
  std::vector<int> order(static_cast<size_t>(n_search));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (score[static_cast<size_t>(a)] != score[static_cast<size_t>(b)])
      return score[static_cast<size_t>(a)] > score[static_cast<size_t>(b)];
    return a < b;
  });
  for (int i = 0; i < keep; ++i) mask[static_cast<size_t>(order[static_cast<size_t>(i)])] = 0.0;
  return Tensor::from({1, g, g}, std::move(mask));
}

Tensor upsample_mask(const Tensor& grid_mask, int cell) {
  if (grid_mask.rank() != 3 || grid_mask.dim(0) != 1)
    throw std::invalid_argument("upsample_mask: expects [1,g,g], got " +
                                shape_str(grid_mask.shape()));
  int g = grid_mask.dim(1);
  int out = g * cell;
  std::vector<double> v(static_cast<size_t>(out) * out);
  for (int y = 0; y < out; ++y)
    for (int x = 0; x < out; ++x)
      v[static_cast<size_t>(y) * out + x] = grid_mask.at({0, y / cell, x / cell});
  return Tensor::from({1, out, out}, std::move(v));
}

}  // namespace hstrack
