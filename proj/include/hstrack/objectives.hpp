#pragma once

#include <vector>

#include "hstrack/nn.hpp"
#include "hstrack/tensor.hpp"

namespace hstrack {

/// Axis-aligned box, top-left corner plus extent, in search-region pixels.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
};

double iou(const BBox& a, const BBox& b);
double center_distance(const BBox& a, const BBox& b);

/// Classification, offset and size maps over the search grid, all sigmoid
/// activated. Shapes [1,g,g], [2,g,g], [2,g,g], optionally batch-leading.
struct HeadOutputs {
  Tensor cls;
  Tensor offset;
  Tensor size;
};

struct LossWeights {
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;
  double lambda_u = 0.5;
  double lambda_ce = 0.2;
};

struct HeadConfig {
  int channels = 64;
  int grid = 8;        // search grid side
  int cell = 8;        // pixels per cell
  int conv_layers = 5;
};

/// Prediction head: three parallel stacks of conv3x3-BN-ReLU layers at a
/// fixed width followed by a 1x1 projection and sigmoid.
class PredictionHead {
 public:
  PredictionHead(const HeadConfig& cfg, Rng rng);

  /// x: [.., channels, grid, grid]
  HeadOutputs forward(Tape* tape, const Tensor& x, bool training);

  const HeadConfig& config() const { return cfg_; }
  Params& params() { return params_; }

 private:
  struct Branch {
    std::vector<Conv2d> convs;
    std::vector<BatchNorm2d> bns;
    Conv2d proj;
  };
  Branch make_branch(const std::string& name, int out_channels, Rng& rng);
  Tensor run_branch(Branch& b, Tape* tape, const Tensor& x, bool training);

  HeadConfig cfg_;
  Branch cls_, offset_, size_;
  Params params_;
};

/// Argmax decode (row-major tie-break on the classification map):
/// center = ((j+dx)*cell, (i+dy)*cell), extent = (w,h)*grid*cell.
BBox decode_box(const HeadOutputs& out, const HeadConfig& cfg = {});

/// Differentiable decode of the box regressed at a fixed cell. Returns a
/// [4] tensor (x, y, w, h) in search pixels.
Tensor decode_box_at(const HeadOutputs& out, int i, int j,
                     const HeadConfig& cfg = {});

/// Gaussian supervision map peaking at exactly 1 on the gt-center cell,
/// sigma = max(1, (w/cell + h/cell)/6) in cell units.
Tensor gaussian_target(const BBox& gt, const HeadConfig& cfg = {});

/// Focal loss over the classification map: -(1-p)^2 log p at peak cells,
/// -(1-y)^4 p^2 log(1-p) elsewhere, normalized by the peak-cell count.
Tensor focal_loss(const Tensor& pred, const Tensor& target);

/// 1 - GIoU of two (x, y, w, h) boxes; pred is a differentiable [4] tensor.
Tensor giou_loss(const Tensor& pred, const BBox& gt);
double giou_loss(const BBox& pred, const BBox& gt);

/// Mean absolute difference of (cx, cy, w, h) normalized by the search size.
Tensor l1_loss(const Tensor& pred, const BBox& gt, const HeadConfig& cfg = {});
double l1_loss(const BBox& pred, const BBox& gt, const HeadConfig& cfg = {});

/// L_cls + lambda_IoU * L_IoU + lambda_L1 * L_L1 for one sample, with the
/// regression losses taken from the box decoded at the gt-center cell.
Tensor tracking_loss(const HeadOutputs& out, const BBox& gt,
                     const LossWeights& w, const HeadConfig& cfg = {});

/// Target-oriented unmixing loss. V holds per-pixel values in {0,1} on the
/// search pixel grid (broadcastable to [.., 1, h, w]); V=0 marks
/// target-relevant pixels. Each reconstruction term is SAD + MSE over its
/// mask-selected pixels.
Tensor target_unmixing_loss(const Tensor& xhat_t, const Tensor& x_t,
                            const Tensor& xhat_s, const Tensor& x_s,
                            const Tensor& v, double lambda_ce);

/// (1 - lambda_u) * tracking + lambda_u * unmixing.
Tensor total_loss(const Tensor& tracking, const Tensor& unmixing,
                  double lambda_u);

}  // namespace hstrack
