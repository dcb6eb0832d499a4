#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hstrack/nn.hpp"
#include "hstrack/tensor.hpp"

namespace hstrack {

enum class EncoderKind { kPixelMlp, kConv };

struct UnmixConfig {
  int bands = 16;
  int endmembers = 6;     // r
  int branch_channels = 3;  // c; the adaptor emits 2c channels
  int hidden1 = 32;
  int hidden2 = 16;
  EncoderKind encoder = EncoderKind::kPixelMlp;
};

/// Autoencoder unmixer. The encoder maps cubes to simplex-constrained
/// abundances (softmax head gives non-negativity and sum-to-one in one
/// stroke); the decoder is a bias-free linear map whose softplus-activated
/// weight matrix is the endmember estimate. The channel adaptor plus
/// channel-wise Haar split produce the low/high-frequency material branches.
class UnmixNet {
 public:
  UnmixNet(const UnmixConfig& cfg, Rng rng);

  /// cube: [bands,h,w] or [N,bands,h,w] -> abundances [.., r, h, w]
  Tensor encode(Tape* tape, const Tensor& cube) const;
  /// abundances [.., r, h, w] -> reconstruction [.., bands, h, w]
  Tensor decode(Tape* tape, const Tensor& abundances) const;
  /// softplus-activated endmember matrix [bands, r]
  Tensor endmembers(Tape* tape) const;

  /// 1x1 channel adaptor: [.., r, h, w] -> [.., 2c, h, w]
  Tensor adapt(Tape* tape, const Tensor& abundances) const;
  /// channel-wise Haar split of the adapted map -> (low, high), each c ch.
  std::pair<Tensor, Tensor> decompose(const Tensor& adapted) const;

  const UnmixConfig& config() const { return cfg_; }
  Params& params() { return params_; }
  Var* decoder_raw() const { return decoder_raw_; }

 private:
  UnmixConfig cfg_;
  Conv2d enc1_, enc2_, enc3_;
  Var* decoder_raw_ = nullptr;  // [bands, r], softplus-parameterized
  Conv2d adaptor_;
  Params params_;
};

/// Mean spectral angle in radians over mask-selected pixels:
/// arccos(clamp(<a,b> / (|a||b| + 1e-12), -1, 1)). A zero-norm pixel
/// contributes 0; an empty selection yields 0. mask, when given, holds
/// per-pixel weights in {0,1} with shape broadcastable to [.., 1, h, w].
Tensor sad_loss(const Tensor& xhat, const Tensor& x,
                const Tensor* mask = nullptr);

/// Mean squared difference over mask-selected entries; empty selection -> 0.
Tensor mse_loss(const Tensor& xhat, const Tensor& x,
                const Tensor* mask = nullptr);

/// SAD between two spectra (plain doubles, evaluation-side).
double spectral_angle(const std::vector<double>& a, const std::vector<double>& b);

/// Exhaustive minimum-mean-SAD column assignment between two endmember
/// matrices [bands, r] (exact for the small r used here). Returns the
/// permutation est -> true and the achieved mean SAD.
struct EndmemberMatch {
  std::vector<int> perm;
  double mean_sad = 0.0;
};
EndmemberMatch match_endmembers(const Tensor& est, const Tensor& truth);

/// RMSE between abundance maps [r,h,w] after applying `perm` to est channels.
double abundance_rmse(const Tensor& est, const Tensor& truth,
                      const std::vector<int>& perm);

}  // namespace hstrack
