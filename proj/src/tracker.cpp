#include "hstrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hstrack/synthdata.hpp"
#include "hstrack/wavelets.hpp"

namespace hstrack {

namespace {

Tensor ensure_batched(const Tensor& t) {
  if (t.rank() == 4) return t;
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return reshape(t, s);
}

// Orthonormal real-DFT basis of R^d, rows ordered low to high frequency.
Tensor dft_basis(int d) {
  const double pi = 3.14159265358979323846;
  std::vector<double> rows;
  auto push_row = [&](std::vector<double> r) {
    double norm = 0.0;
    for (double v : r) norm += v * v;
    norm = std::sqrt(norm);
    for (double v : r) rows.push_back(v / norm);
  };
  std::vector<double> row(static_cast<size_t>(d));
  for (int b = 0; b < d; ++b) row[static_cast<size_t>(b)] = 1.0;
  push_row(row);
  for (int k = 1; k <= d / 2; ++k) {
    for (int b = 0; b < d; ++b) row[static_cast<size_t>(b)] = std::cos(2 * pi * k * b / d);
    push_row(row);
    if (2 * k < d) {
      for (int b = 0; b < d; ++b) row[static_cast<size_t>(b)] = std::sin(2 * pi * k * b / d);
      push_row(row);
    }
  }
  return Tensor::from({d, d}, std::move(rows));
}

// apply a constant [C,C] channel basis to [.., C, h, w]
Tensor channel_transform(const Tensor& x, const Tensor& basis) {
  int c = basis.dim(0);
  Tensor kernel = reshape(basis, {c, c, 1, 1});
  return conv2d(x, kernel, nullptr, 1, 0, 1);
}

Rng sub_rng(uint64_t seed, uint64_t key) { return Rng::split(seed, key); }

}  // namespace

Tracker::Tracker(const TrackerConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      unmix_(cfg.unmix, sub_rng(seed, 1)),
      backbone_(cfg.backbone, sub_rng(seed, 2)),
      prompts_(cfg.prompt, static_cast<int>(cfg.inject_layers.size()), sub_rng(seed, 3)),
      head_(cfg.head, sub_rng(seed, 4)) {
  for (int l : cfg.inject_layers)
    if (l < 1 || l > cfg.backbone.blocks)
      throw std::invalid_argument("tracker: injection layer " + std::to_string(l) +
                                  " outside 1.." + std::to_string(cfg.backbone.blocks));
  int c2 = 2 * cfg.prompt.branch_channels;
  if (!cfg.mrdm_enabled) {
    Rng r = sub_rng(seed, 5);
    raw_adaptor_ = Conv2d("tracker.raw_adaptor", cfg.unmix.bands, c2, 1, 1, 0, 1,
                          r, extra_params_);
  }
  if (cfg.amd == AmdVariant::kSplitRandom) {
    split_perm_.resize(static_cast<size_t>(cfg.unmix.endmembers));
    std::iota(split_perm_.begin(), split_perm_.end(), 0);
    Rng r = sub_rng(seed, 6);
    for (int i = static_cast<int>(split_perm_.size()) - 1; i > 0; --i)
      std::swap(split_perm_[static_cast<size_t>(i)],
                split_perm_[static_cast<size_t>(r.uniform_int(0, i))]);
  }
  if (cfg.amd == AmdVariant::kAdaptorFft) fft_basis_ = dft_basis(c2);
  if (cfg.material_input && cfg.backbone.in_channels != c2)
    throw std::invalid_argument("tracker: material input needs a 2c-channel backbone");
}

std::pair<Tensor, Tensor> Tracker::material_branches(Tape* tape,
                                                     const Tensor& source) {
  int c = cfg_.prompt.branch_channels;
  if (!cfg_.mrdm_enabled)
    return haar1d_channels(raw_adaptor_.forward(tape, source));

  const Tensor& a = source;  // abundances from the shared encode
  switch (cfg_.amd) {
    case AmdVariant::kAdaptorHaar:
      return haar1d_channels(unmix_.adapt(tape, a));
    case AmdVariant::kAdaptorSplit: {
      Tensor ap = unmix_.adapt(tape, a);
      int caxis = ap.rank() - 3;
      return {slice(ap, caxis, 0, c), slice(ap, caxis, c, c)};
    }
    case AmdVariant::kAdaptorFft: {
      Tensor ap = channel_transform(unmix_.adapt(tape, a), fft_basis_);
      int caxis = ap.rank() - 3;
      return {slice(ap, caxis, 0, c), slice(ap, caxis, c, c)};
    }
    case AmdVariant::kSplitRandom: {
      int caxis = a.rank() - 3;
      if (a.dim(caxis) != 2 * c)
        throw std::invalid_argument("amd split_random needs r == 2c");
      std::vector<Tensor> chans;
      for (int k : split_perm_) chans.push_back(slice(a, caxis, k, 1));
      Tensor shuffled = concat(chans, caxis);
      return {slice(shuffled, caxis, 0, c), slice(shuffled, caxis, c, c)};
    }
    case AmdVariant::kHaarOnly: {
      int caxis = a.rank() - 3;
      if (a.dim(caxis) != 2 * c)
        throw std::invalid_argument("amd haar_only needs r == 2c");
      return haar1d_channels(a);
    }
  }
  throw std::logic_error("unknown AMD variant");
}

Tracker::Forward Tracker::forward(Tape* tape, const Tensor& templ,
                                  const Tensor& search, bool training) {
  Tensor t_cube = ensure_batched(templ);
  Tensor s_cube = ensure_batched(search);

  Forward out;
  Tensor low_t, high_t, low_s, high_s;
  bool need_material = cfg_.prompts_enabled || cfg_.material_input;

  if (cfg_.mrdm_enabled) {
    out.a_template = unmix_.encode(tape, t_cube);
    out.a_search = unmix_.encode(tape, s_cube);
    out.xhat_template = unmix_.decode(tape, out.a_template);
    out.xhat_search = unmix_.decode(tape, out.a_search);
    out.has_reconstruction = true;
    if (need_material) {
      std::tie(low_t, high_t) = material_branches(tape, out.a_template);
      std::tie(low_s, high_s) = material_branches(tape, out.a_search);
    }
  } else if (need_material) {
    std::tie(low_t, high_t) = material_branches(tape, t_cube);
    std::tie(low_s, high_s) = material_branches(tape, s_cube);
  }

  Tensor in_t = cfg_.material_input ? concat({low_t, high_t}, low_t.rank() - 3)
                                    : false_color(t_cube);
  Tensor in_s = cfg_.material_input ? concat({low_s, high_s}, low_s.rank() - 3)
                                    : false_color(s_cube);

  Tensor tokens = backbone_.embed_pair(tape, in_t, in_s);
  PromptGrids grids;
  if (cfg_.prompts_enabled)
    grids = prompts_.embed(tape, low_t, high_t, low_s, high_s);

  int inj = 0;
  for (int layer = 1; layer <= cfg_.backbone.blocks; ++layer) {
    bool inject_here =
        cfg_.prompts_enabled &&
        std::find(cfg_.inject_layers.begin(), cfg_.inject_layers.end(), layer) !=
            cfg_.inject_layers.end();
    if (inject_here) {
      Tensor pf = prompts_.apply(tape, inj, grids, tokens, training);
      tokens = inject(tokens, pf);
      ++inj;
    }
    tokens = backbone_.block_forward(tape, tokens, layer, &out.state);
  }
  out.state.tokens = tokens;

  int nt = cfg_.backbone.template_tokens();
  int ns = cfg_.backbone.search_tokens();
  int g = cfg_.backbone.search_grid();
  Tensor search_tokens = slice(tokens, 1, nt, ns);
  Tensor head_in = reshape(permute(search_tokens, {0, 2, 1}),
                           {tokens.dim(0), cfg_.backbone.dim, g, g});
  out.head = head_.forward(tape, head_in, training);
  return out;
}

Tensor Tracker::relevance_mask(const Forward& f, int sample,
                               const BBox* gt_box) const {
  return backbone_.relevance_mask(f.state, cfg_.rho, gt_box, sample);
}

std::vector<Var*> Tracker::all_vars() {
  std::vector<Var*> out;
  auto add = [&](Params& ps) {
    out.insert(out.end(), ps.vars().begin(), ps.vars().end());
  };
  add(unmix_.params());
  add(extra_params_);
  add(backbone_.params());
  add(prompts_.params());
  add(head_.params());
  return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> Tracker::all_buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  auto add = [&](Params& ps) {
    out.insert(out.end(), ps.buffers().begin(), ps.buffers().end());
  };
  add(unmix_.params());
  add(extra_params_);
  add(backbone_.params());
  add(prompts_.params());
  add(head_.params());
  return out;
}

std::vector<Var*> Tracker::trainable_vars(bool frozen_backbone) {
  std::vector<Var*> out;
  auto add = [&](Params& ps) {
    out.insert(out.end(), ps.vars().begin(), ps.vars().end());
  };
  if (cfg_.mrdm_enabled)
    add(unmix_.params());
  else
    add(extra_params_);
  if (!frozen_backbone) add(backbone_.params());
  if (cfg_.prompts_enabled) add(prompts_.params());
  add(head_.params());
  return out;
}

}  // namespace hstrack
