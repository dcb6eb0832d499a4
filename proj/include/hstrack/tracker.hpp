#pragma once

#include <cstdint>
#include <vector>

#include "hstrack/backbone.hpp"
#include "hstrack/nn.hpp"
#include "hstrack/objectives.hpp"
#include "hstrack/prompts.hpp"
#include "hstrack/unmixing.hpp"

namespace hstrack {

enum class AmdVariant {
  kAdaptorHaar,   // default: 1x1 adaptor then channel-wise Haar
  kAdaptorSplit,  // adaptor then plain first/last channel split
  kAdaptorFft,    // adaptor then orthonormal DFT basis split
  kSplitRandom,   // seeded random channel partition, no adaptor (needs r == 2c)
  kHaarOnly,      // channel-wise Haar on raw abundances (needs r == 2c)
};

struct TrackerConfig {
  UnmixConfig unmix;
  BackboneConfig backbone;
  PromptConfig prompt;
  HeadConfig head;
  std::vector<int> inject_layers = {1, 2, 4, 6, 8, 10, 12};
  bool prompts_enabled = true;
  bool mrdm_enabled = true;   // abundance pipeline; off = raw-cube projection
  bool material_input = false;  // feed M_L || M_H to the backbone (6 channels)
  AmdVariant amd = AmdVariant::kAdaptorHaar;
  double rho = 0.25;
};

/// Joint unmixing + tracking model. One forward covers a batched
/// template/search pair: unmix both crops, decompose the abundances into
/// frequency branches, run the token backbone with per-layer prompt
/// injection, and decode head maps from the final search tokens.
class Tracker {
 public:
  Tracker(const TrackerConfig& cfg, uint64_t seed);
  Tracker(const Tracker&) = delete;
  Tracker& operator=(const Tracker&) = delete;

  struct Forward {
    HeadOutputs head;                   // batched maps
    Tensor xhat_template, xhat_search;  // reconstructions (MRDM only)
    Tensor a_template, a_search;        // abundances (MRDM only)
    TokenState state;                   // final tokens + attention record
    bool has_reconstruction = false;
  };

  /// templ: [.., bands, 32, 32]; search: [.., bands, 64, 64].
  Forward forward(Tape* tape, const Tensor& templ, const Tensor& search,
                  bool training);

  /// Relevance mask for one batch sample on the search grid.
  Tensor relevance_mask(const Forward& f, int sample,
                        const BBox* gt_box = nullptr) const;

  const TrackerConfig& config() const { return cfg_; }
  Backbone& backbone() { return backbone_; }
  UnmixNet& unmixer() { return unmix_; }
  PredictionHead& head() { return head_; }
  PromptStack& prompts() { return prompts_; }
  void set_prompts_enabled(bool on) { cfg_.prompts_enabled = on; }

  /// Every named parameter / buffer, for checkpoints and optimizers.
  std::vector<Var*> all_vars();
  std::vector<std::pair<std::string, std::vector<double>*>> all_buffers();

  /// Parameters the optimizer updates; frozen mode excludes the backbone,
  /// disabled prompts exclude the prompt stack.
  std::vector<Var*> trainable_vars(bool frozen_backbone);

 private:
  std::pair<Tensor, Tensor> material_branches(Tape* tape, const Tensor& source);

  TrackerConfig cfg_;
  UnmixNet unmix_;
  Params extra_params_;
  Conv2d raw_adaptor_;  // cube -> 2c channels when MRDM is disabled
  Backbone backbone_;
  PromptStack prompts_;
  PredictionHead head_;
  std::vector<int> split_perm_;  // channel order for kSplitRandom
  Tensor fft_basis_;             // [2c, 2c] orthonormal DFT rows
};

}  // namespace hstrack
