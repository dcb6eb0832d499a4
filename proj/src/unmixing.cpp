#include "hstrack/unmixing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hstrack/wavelets.hpp"

namespace hstrack {

namespace {

// softplus(x) = log(1 + e^x), composed from catalogue ops
Tensor softplus(const Tensor& x) { return log(add_scalar(exp(x), 1.0)); }

int channel_axis(const Tensor& t) { return t.rank() - 3; }

void check_rank(const Tensor& t, const char* who) {
  if (t.rank() != 3 && t.rank() != 4)
    throw std::invalid_argument(std::string(who) +
                                ": expects [C,h,w] or [N,C,h,w], got " +
                                shape_str(t.shape()));
}

}  // namespace

UnmixNet::UnmixNet(const UnmixConfig& cfg, Rng rng) : cfg_(cfg) {
  int k = cfg.encoder == EncoderKind::kConv ? 3 : 1;
  int pad = cfg.encoder == EncoderKind::kConv ? 1 : 0;
  enc1_ = Conv2d("unmix.enc1", cfg.bands, cfg.hidden1, k, 1, pad, 1, rng, params_);
  enc2_ = Conv2d("unmix.enc2", cfg.hidden1, cfg.hidden2, k, 1, pad, 1, rng, params_);
  enc3_ = Conv2d("unmix.enc3", cfg.hidden2, cfg.endmembers, 1, 1, 0, 1, rng, params_);
  // softplus(-0.4 + noise) starts endmembers near mid-reflectance
  decoder_raw_ = params_.var(
      "unmix.decoder",
      add_scalar(init_normal(rng, {cfg.bands, cfg.endmembers}, 0.5), -0.4));
  adaptor_ = Conv2d("unmix.adaptor", cfg.endmembers, 2 * cfg.branch_channels, 1,
                    1, 0, 1, rng, params_);
}

Tensor UnmixNet::encode(Tape* tape, const Tensor& cube) const {
  check_rank(cube, "encode");
  int c = cube.dim(channel_axis(cube));
  if (c != cfg_.bands)
    throw std::invalid_argument("encode: cube has " + std::to_string(c) +
                                " bands, encoder expects " +
                                std::to_string(cfg_.bands));
  Tensor h = leaky_relu(enc1_.forward(tape, cube));
  h = leaky_relu(enc2_.forward(tape, h));
  h = enc3_.forward(tape, h);
  return softmax(h, channel_axis(h));
}

Tensor UnmixNet::endmembers(Tape* tape) const {
  Tensor raw = tape ? tape->watch(*decoder_raw_) : decoder_raw_->value;
  return softplus(raw);
}

Tensor UnmixNet::decode(Tape* tape, const Tensor& abundances) const {
  check_rank(abundances, "decode");
  int c = abundances.dim(channel_axis(abundances));
  if (c != cfg_.endmembers)
    throw std::invalid_argument("decode: abundance has " + std::to_string(c) +
                                " channels, decoder expects " +
                                std::to_string(cfg_.endmembers));
  Tensor m = endmembers(tape);  // [bands, r]
  Tensor kernel = reshape(m, {cfg_.bands, cfg_.endmembers, 1, 1});
  return conv2d(abundances, kernel, nullptr, 1, 0, 1);
}

Tensor UnmixNet::adapt(Tape* tape, const Tensor& abundances) const {
  check_rank(abundances, "adapt");
  int c = abundances.dim(channel_axis(abundances));
  if (c != cfg_.endmembers)
    throw std::invalid_argument("adapt: abundance has " + std::to_string(c) +
                                " channels, adaptor expects " +
                                std::to_string(cfg_.endmembers));
  return adaptor_.forward(tape, abundances);
}

std::pair<Tensor, Tensor> UnmixNet::decompose(const Tensor& adapted) const {
  return haar1d_channels(adapted);
}

// ---- losses -------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

// number of selected pixels = sum of mask entries, scaled up when the mask
// broadcasts over leading axes; nullptr selects all
double selected_count(const Tensor* mask, int all_pixels) {
  if (mask == nullptr) return static_cast<double>(all_pixels);
  double s = 0.0;
  for (double v : mask->values()) s += v;
  return s * (static_cast<double>(all_pixels) / mask->numel());
}

}  // namespace

Tensor sad_loss(const Tensor& xhat, const Tensor& x, const Tensor* mask) {
  check_same_shape(xhat, x, "sad_loss");
  check_rank(x, "sad_loss");
  int caxis = channel_axis(x);
  int pixels = x.numel() / x.dim(caxis);

  Tensor dot = sum_axis(mul(xhat, x), caxis);
  Tensor nx = sqrt(sum_axis(mul(x, x), caxis));
  Tensor nxh = sqrt(sum_axis(mul(xhat, xhat), caxis));
  Tensor denom = add_scalar(mul(nx, nxh), 1e-12);
  Tensor ang = acos(div(dot, denom));

  // zero-norm pixels contribute 0 rather than acos(0)
  std::vector<double> valid(nx.values().size(), 1.0);
  for (size_t i = 0; i < valid.size(); ++i)
    if (nx.values()[i] * nxh.values()[i] == 0.0) valid[i] = 0.0;
  ang = mul(ang, Tensor::from(nx.shape(), std::move(valid)));

  if (mask != nullptr) ang = mul(ang, *mask);
  double count = selected_count(mask, pixels);
  return mul_scalar(sum_all(ang), 1.0 / std::max(1.0, count));
}

Tensor mse_loss(const Tensor& xhat, const Tensor& x, const Tensor* mask) {
  check_same_shape(xhat, x, "mse_loss");
  Tensor diff = sub(xhat, x);
  Tensor sq = mul(diff, diff);
  if (mask == nullptr) return mean_all(sq);
  check_rank(x, "mse_loss");
  int caxis = channel_axis(x);
  int bands = x.dim(caxis);
  int pixels = x.numel() / bands;
  sq = mul(sq, *mask);
  double entries = selected_count(mask, pixels) * bands;
  return mul_scalar(sum_all(sq), 1.0 / std::max(1.0, entries));
}

double spectral_angle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double d = std::sqrt(na) * std::sqrt(nb) + 1e-12;
  return std::acos(std::clamp(dot / d, -1.0, 1.0));
}

EndmemberMatch match_endmembers(const Tensor& est, const Tensor& truth) {
  if (est.shape() != truth.shape() || est.rank() != 2)
    throw std::invalid_argument("match_endmembers: need equal [bands,r] shapes, got " +
                                shape_str(est.shape()) + " vs " +
                                shape_str(truth.shape()));
  int bands = est.dim(0), r = est.dim(1);
  if (r > 8) throw std::invalid_argument("match_endmembers: r > 8 unsupported");

  auto column = [bands, r](const Tensor& m, int j) {
    std::vector<double> col(static_cast<size_t>(bands));
    for (int i = 0; i < bands; ++i)
      col[static_cast<size_t>(i)] = m.values()[static_cast<size_t>(i) * r + j];
    return col;
  };
  std::vector<std::vector<double>> cost(static_cast<size_t>(r),
                                        std::vector<double>(static_cast<size_t>(r)));
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j)
      cost[static_cast<size_t>(i)][static_cast<size_t>(j)] =
          spectral_angle(column(est, i), column(truth, j));

  std::vector<int> perm(static_cast<size_t>(r));
  std::iota(perm.begin(), perm.end(), 0);
  EndmemberMatch best;
  best.mean_sad = 1e300;
  do {
    double total = 0.0;
    for (int i = 0; i < r; ++i)
      total += cost[static_cast<size_t>(i)][static_cast<size_t>(perm[static_cast<size_t>(i)])];
    if (total < best.mean_sad * r) {
      best.mean_sad = total / r;
      best.perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double abundance_rmse(const Tensor& est, const Tensor& truth,
                      const std::vector<int>& perm) {
  if (est.rank() != 3 || truth.rank() != 3 || est.shape() != truth.shape())
    throw std::invalid_argument("abundance_rmse: need equal [r,h,w] shapes");
  int r = est.dim(0);
  long long plane = static_cast<long long>(est.dim(1)) * est.dim(2);
  double se = 0.0;
  for (int k = 0; k < r; ++k) {
    const double* pe = est.values().data() + k * plane;
    const double* pt = truth.values().data() + perm[static_cast<size_t>(k)] * plane;
    for (long long i = 0; i < plane; ++i) {
      double d = pe[i] - pt[i];
      se += d * d;
    }
  }
  return std::sqrt(se / static_cast<double>(est.numel()));
}

}  // namespace hstrack
