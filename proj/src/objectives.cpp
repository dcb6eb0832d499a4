#include "hstrack/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hstrack/unmixing.hpp"

namespace hstrack {

double iou(const BBox& a, const BBox& b) {
  double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  double inter = ix * iy;
  double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double center_distance(const BBox& a, const BBox& b) {
  double dx = a.cx() - b.cx();
  double dy = a.cy() - b.cy();
  return std::sqrt(dx * dx + dy * dy);
}

// ---- prediction head ------------------------------------------------------

PredictionHead::PredictionHead(const HeadConfig& cfg, Rng rng) : cfg_(cfg) {
  cls_ = make_branch("head.cls", 1, rng);
  offset_ = make_branch("head.offset", 2, rng);
  size_ = make_branch("head.size", 2, rng);
}

PredictionHead::Branch PredictionHead::make_branch(const std::string& name,
                                                   int out_channels, Rng& rng) {
  Branch b;
  for (int i = 0; i < cfg_.conv_layers; ++i) {
    b.convs.emplace_back(name + ".conv" + std::to_string(i), cfg_.channels,
                         cfg_.channels, 3, 1, 1, 1, rng, params_);
    b.bns.emplace_back(name + ".bn" + std::to_string(i), cfg_.channels, params_);
  }
  b.proj = Conv2d(name + ".proj", cfg_.channels, out_channels, 1, 1, 0, 1, rng,
                  params_);
  return b;
}

Tensor PredictionHead::run_branch(Branch& b, Tape* tape, const Tensor& x,
                                  bool training) {
  Tensor h = x;
  for (size_t i = 0; i < b.convs.size(); ++i) {
    h = b.convs[i].forward(tape, h);
    h = training ? b.bns[i].forward_train(tape, h) : b.bns[i].forward(tape, h, false);
    h = relu(h);
  }
  return sigmoid(b.proj.forward(tape, h));
}

HeadOutputs PredictionHead::forward(Tape* tape, const Tensor& x, bool training) {
  int caxis = x.rank() - 3;
  if ((x.rank() != 3 && x.rank() != 4) || x.dim(caxis) != cfg_.channels ||
      x.dim(caxis + 1) != cfg_.grid || x.dim(caxis + 2) != cfg_.grid)
    throw std::invalid_argument("head: expected [.., " +
                                std::to_string(cfg_.channels) + ", " +
                                std::to_string(cfg_.grid) + ", " +
                                std::to_string(cfg_.grid) + "], got " +
                                shape_str(x.shape()));
  HeadOutputs out;
  out.cls = run_branch(cls_, tape, x, training);
  out.offset = run_branch(offset_, tape, x, training);
  out.size = run_branch(size_, tape, x, training);
  return out;
}

// ---- box decode -------------------------------------------------------------

namespace {

void check_single(const HeadOutputs& out, const HeadConfig& cfg) {
  if (out.cls.rank() != 3 || out.cls.dim(0) != 1 || out.cls.dim(1) != cfg.grid)
    throw std::invalid_argument("decode: expected single-sample maps, got cls " +
                                shape_str(out.cls.shape()));
}

}  // namespace

BBox decode_box(const HeadOutputs& out, const HeadConfig& cfg) {
  check_single(out, cfg);
  const std::vector<double>& cls = out.cls.values();
  int g = cfg.grid;
  int best = 0;
  for (int i = 1; i < g * g; ++i)
    if (cls[static_cast<size_t>(i)] > cls[static_cast<size_t>(best)]) best = i;
  int ci = best / g, cj = best % g;
  double dx = out.offset.at({0, ci, cj});
  double dy = out.offset.at({1, ci, cj});
  double ww = out.size.at({0, ci, cj});
  double hh = out.size.at({1, ci, cj});
  double cx = (cj + dx) * cfg.cell;
  double cy = (ci + dy) * cfg.cell;
  double w = ww * cfg.grid * cfg.cell;
  double h = hh * cfg.grid * cfg.cell;
  return BBox{cx - w / 2.0, cy - h / 2.0, w, h};
}

Tensor decode_box_at(const HeadOutputs& out, int i, int j, const HeadConfig& cfg) {
  check_single(out, cfg);
  if (i < 0 || i >= cfg.grid || j < 0 || j >= cfg.grid)
    throw std::invalid_argument("decode_box_at: cell out of range");
  auto pick = [&](const Tensor& map, int ch) {
    return reshape(slice(slice(slice(map, 0, ch, 1), 1, i, 1), 2, j, 1), {1});
  };
  Tensor cx = mul_scalar(add_scalar(pick(out.offset, 0), static_cast<double>(j)),
                         static_cast<double>(cfg.cell));
  Tensor cy = mul_scalar(add_scalar(pick(out.offset, 1), static_cast<double>(i)),
                         static_cast<double>(cfg.cell));
  Tensor w = mul_scalar(pick(out.size, 0), static_cast<double>(cfg.grid * cfg.cell));
  Tensor h = mul_scalar(pick(out.size, 1), static_cast<double>(cfg.grid * cfg.cell));
  Tensor x = sub(cx, mul_scalar(w, 0.5));
  Tensor y = sub(cy, mul_scalar(h, 0.5));
  return concat({x, y, w, h}, 0);
}

Tensor gaussian_target(const BBox& gt, const HeadConfig& cfg) {
  if (gt.w <= 0 || gt.h <= 0)
    throw std::invalid_argument("gaussian_target: degenerate box extent " +
                                std::to_string(gt.w) + "x" + std::to_string(gt.h));
  int g = cfg.grid;
  int ic = std::clamp(static_cast<int>(gt.cy() / cfg.cell), 0, g - 1);
  int jc = std::clamp(static_cast<int>(gt.cx() / cfg.cell), 0, g - 1);
  double sigma = std::max(1.0, (gt.w / cfg.cell + gt.h / cfg.cell) / 6.0);
  std::vector<double> m(static_cast<size_t>(g) * g);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      double d2 = static_cast<double>((i - ic) * (i - ic) + (j - jc) * (j - jc));
      m[static_cast<size_t>(i) * g + j] = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  m[static_cast<size_t>(ic) * g + jc] = 1.0;
  return Tensor::from({1, g, g}, std::move(m));
}

Tensor focal_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("focal_loss: shape mismatch " +
                                shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  int peaks = 0;
  std::vector<double> peak_mask(target.values().size(), 0.0);
  for (size_t i = 0; i < target.values().size(); ++i)
    if (target.values()[i] == 1.0) {
      peak_mask[i] = 1.0;
      ++peaks;
    }
  if (peaks == 0)
    throw std::invalid_argument("focal_loss: target map has no peak cell");

  Tensor pm = Tensor::from(target.shape(), std::move(peak_mask));
  Tensor p = minimum(maximum(pred, Tensor::scalar(1e-6)), Tensor::scalar(1.0 - 1e-6));
  Tensor one = Tensor::full(target.shape(), 1.0);
  Tensor y = target.detach();

  Tensor omp = sub(one, p);                          // 1 - p
  Tensor pos = neg(mul(mul(omp, omp), log(p)));      // -(1-p)^2 log p
  Tensor omy = sub(one, y);
  Tensor omy2 = mul(omy, omy);
  Tensor neg_term = neg(mul(mul(mul(omy2, omy2), mul(p, p)), log(sub(one, p))));
  Tensor loss = add(mul(pm, pos), mul(sub(one, pm), neg_term));
  return mul_scalar(sum_all(loss), 1.0 / peaks);
}

namespace {

Tensor pick1(const Tensor& v4, int idx) { return slice(v4, 0, idx, 1); }

// differentiable GIoU between a [4] (x,y,w,h) tensor and a constant box
Tensor giou_tensor(const Tensor& pred, const BBox& gt) {
  Tensor px = pick1(pred, 0), py = pick1(pred, 1), pw = pick1(pred, 2),
         ph = pick1(pred, 3);
  Tensor pr = add(px, pw), pb = add(py, ph);
  Tensor gx = Tensor::scalar(gt.x), gy = Tensor::scalar(gt.y);
  Tensor gr = Tensor::scalar(gt.x + gt.w), gb = Tensor::scalar(gt.y + gt.h);

  Tensor iw = relu(sub(minimum(pr, gr), maximum(px, gx)));
  Tensor ih = relu(sub(minimum(pb, gb), maximum(py, gy)));
  Tensor inter = mul(iw, ih);
  Tensor uni = sub(add(mul(pw, ph), Tensor::scalar(gt.w * gt.h)), inter);
  Tensor cw = sub(maximum(pr, gr), minimum(px, gx));
  Tensor ch = sub(maximum(pb, gb), minimum(py, gy));
  Tensor enc = mul(cw, ch);
  Tensor iou_t = div(inter, uni);
  return sub(iou_t, div(sub(enc, uni), enc));
}

}  // namespace

Tensor giou_loss(const Tensor& pred, const BBox& gt) {
  if (pred.rank() != 1 || pred.dim(0) != 4)
    throw std::invalid_argument("giou_loss: pred must be a [4] box tensor, got " +
                                shape_str(pred.shape()));
  if (pred.values()[2] <= 0 || pred.values()[3] <= 0 || gt.w <= 0 || gt.h <= 0)
    throw std::invalid_argument("giou_loss: non-positive box extent");
  return sub(Tensor::scalar(1.0), giou_tensor(pred, gt));
}

double giou_loss(const BBox& pred, const BBox& gt) {
  return giou_loss(Tensor::from({4}, {pred.x, pred.y, pred.w, pred.h}), gt).value();
}

Tensor l1_loss(const Tensor& pred, const BBox& gt, const HeadConfig& cfg) {
  if (pred.rank() != 1 || pred.dim(0) != 4)
    throw std::invalid_argument("l1_loss: pred must be a [4] box tensor, got " +
                                shape_str(pred.shape()));
  double s = static_cast<double>(cfg.grid * cfg.cell);
  Tensor pw = pick1(pred, 2), ph = pick1(pred, 3);
  Tensor pcx = add(pick1(pred, 0), mul_scalar(pw, 0.5));
  Tensor pcy = add(pick1(pred, 1), mul_scalar(ph, 0.5));
  Tensor d = concat({sub(pcx, Tensor::scalar(gt.cx())),
                     sub(pcy, Tensor::scalar(gt.cy())),
                     sub(pw, Tensor::scalar(gt.w)),
                     sub(ph, Tensor::scalar(gt.h))},
                    0);
  return mul_scalar(mean_all(abs(d)), 1.0 / s);
}

double l1_loss(const BBox& pred, const BBox& gt, const HeadConfig& cfg) {
  return l1_loss(Tensor::from({4}, {pred.x, pred.y, pred.w, pred.h}), gt, cfg).value();
}

Tensor tracking_loss(const HeadOutputs& out, const BBox& gt,
                     const LossWeights& w, const HeadConfig& cfg) {
  Tensor target = gaussian_target(gt, cfg);
  Tensor cls = focal_loss(out.cls, target);
  int ic = std::clamp(static_cast<int>(gt.cy() / cfg.cell), 0, cfg.grid - 1);
  int jc = std::clamp(static_cast<int>(gt.cx() / cfg.cell), 0, cfg.grid - 1);
  Tensor box = decode_box_at(out, ic, jc, cfg);
  Tensor reg = add(mul_scalar(giou_loss(box, gt), w.lambda_iou),
                   mul_scalar(l1_loss(box, gt, cfg), w.lambda_l1));
  return add(cls, reg);
}

Tensor target_unmixing_loss(const Tensor& xhat_t, const Tensor& x_t,
                            const Tensor& xhat_s, const Tensor& x_s,
                            const Tensor& v, double lambda_ce) {
  if (lambda_ce <= 0.0 || lambda_ce >= 1.0)
    throw std::invalid_argument("target_unmixing_loss: lambda_ce must be in (0,1)");
  Tensor rec_t = add(sad_loss(xhat_t, x_t), mse_loss(xhat_t, x_t));

  std::vector<double> inv(v.values().size());
  for (size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - v.values()[i];
  Tensor target_mask = Tensor::from(v.shape(), std::move(inv));  // 1 - V

  Tensor rec_target = add(sad_loss(xhat_s, x_s, &target_mask),
                          mse_loss(xhat_s, x_s, &target_mask));
  Tensor rec_bg = add(sad_loss(xhat_s, x_s, &v), mse_loss(xhat_s, x_s, &v));
  return add(rec_t, add(mul_scalar(rec_target, 1.0 - lambda_ce),
                        mul_scalar(rec_bg, lambda_ce)));
}

Tensor total_loss(const Tensor& tracking, const Tensor& unmixing,
                  double lambda_u) {
  if (lambda_u < 0.0 || lambda_u > 1.0)
    throw std::invalid_argument("total_loss: lambda_u must be in [0,1]");
  return add(mul_scalar(tracking, 1.0 - lambda_u),
             mul_scalar(unmixing, lambda_u));
}

}  // namespace hstrack
