#include "hstrack/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace hstrack {

Tensor crop_resize(const Tensor& cube, double cx, double cy, double side,
                   int out_px) {
  if (cube.rank() != 3)
    throw std::invalid_argument("crop_resize: expects [bands,h,w], got " +
                                shape_str(cube.shape()));
  int n = cube.dim(0), h = cube.dim(1), w = cube.dim(2);
  std::vector<double> out(static_cast<size_t>(n) * out_px * out_px);
  double x0 = cx - side / 2.0;
  double y0 = cy - side / 2.0;
  long long plane = static_cast<long long>(h) * w;
  for (int oy = 0; oy < out_px; ++oy) {
    int iy = std::clamp(static_cast<int>(std::floor(y0 + (oy + 0.5) * side / out_px)), 0, h - 1);
    for (int ox = 0; ox < out_px; ++ox) {
      int ix = std::clamp(static_cast<int>(std::floor(x0 + (ox + 0.5) * side / out_px)), 0, w - 1);
      for (int b = 0; b < n; ++b)
        out[(static_cast<size_t>(b) * out_px + oy) * out_px + ox] =
            cube.values()[static_cast<size_t>(b * plane + iy * w + ix)];
    }
  }
  return Tensor::from({n, out_px, out_px}, std::move(out));
}

TrackSample sample_pair(Rng& rng, const SequenceRecord& seq,
                        const BackboneConfig& bb) {
  if (seq.cubes.empty()) throw std::invalid_argument("sample_pair: empty sequence");
  const BBox& b0 = seq.boxes[0];
  double t_side = 2.0 * std::sqrt(std::max(1.0, b0.w * b0.h));
  TrackSample s;
  s.templ = crop_resize(seq.cubes[0], b0.cx(), b0.cy(), t_side, bb.template_size);

  int frame = rng.uniform_int(0, static_cast<int>(seq.cubes.size()) - 1);
  const BBox& gt = seq.boxes[static_cast<size_t>(frame)];
  double s_side = 4.0 * std::sqrt(std::max(1.0, gt.w * gt.h));
  double jx = rng.uniform(-0.15, 0.15) * s_side;
  double jy = rng.uniform(-0.15, 0.15) * s_side;
  double cx = gt.cx() + jx, cy = gt.cy() + jy;
  s.search = crop_resize(seq.cubes[static_cast<size_t>(frame)], cx, cy, s_side,
                         bb.search_size);
  double scale = bb.search_size / s_side;
  s.gt = BBox{(gt.x - (cx - s_side / 2)) * scale, (gt.y - (cy - s_side / 2)) * scale,
              gt.w * scale, gt.h * scale};
  return s;
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack: no tensors");
  std::vector<Tensor> lifted;
  Shape s = parts[0].shape();
  s.insert(s.begin(), 1);
  for (const Tensor& p : parts) {
    if (p.shape() != parts[0].shape())
      throw std::invalid_argument("stack: mismatched shapes " +
                                  shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, 0);
}

std::vector<SequenceRecord> load_dataset(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".hsvc")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("load_dataset: no .hsvc files under " + dir);
  std::vector<SequenceRecord> out;
  for (const std::string& f : files) out.push_back(read_hsvc(f));
  return out;
}

namespace {

HeadOutputs slice_sample(const HeadOutputs& batched, int b, int grid) {
  auto one = [&](const Tensor& m, int ch) {
    return reshape(slice(m, 0, b, 1), {ch, grid, grid});
  };
  return HeadOutputs{one(batched.cls, 1), one(batched.offset, 2), one(batched.size, 2)};
}

}  // namespace

TrainResult train(Tracker& tracker, const TrainConfig& cfg,
                  const std::vector<SequenceRecord>& data,
                  const std::function<void(const StepLog&)>& on_step) {
  if (data.empty()) throw std::invalid_argument("train: no sequences");
  const BackboneConfig& bb = tracker.config().backbone;
  const HeadConfig& hc = tracker.config().head;

  int total_steps = cfg.max_steps > 0
                        ? cfg.max_steps
                        : cfg.epochs * std::max(1, cfg.pairs_per_epoch / cfg.batch_size);
  int drop_step = static_cast<int>(std::floor(cfg.lr_drop_frac * total_steps));

  std::vector<Var*> train_vars = tracker.trainable_vars(cfg.frozen_backbone);
  if (cfg.weights.lambda_u == 0.0) {
    // the decoder appears only in the unmixing objective; at lambda_u = 0 it
    // gets no gradient and must not drift under decoupled weight decay
    std::erase_if(train_vars, [](Var* v) { return v->name == "unmix.decoder"; });
  }
  AdamW opt(train_vars, cfg.lr, cfg.weight_decay);
  Rng sampler = Rng::split(cfg.seed, 0x5A3);

  TrainResult result;
  for (int step = 0; step < total_steps; ++step) {
    if (step == drop_step && drop_step > 0 && drop_step < total_steps)
      opt.set_lr(cfg.lr * 0.1);

    std::vector<Tensor> templs, searches;
    std::vector<BBox> gts;
    for (int b = 0; b < cfg.batch_size; ++b) {
      int si = sampler.uniform_int(0, static_cast<int>(data.size()) - 1);
      TrackSample smp = sample_pair(sampler, data[static_cast<size_t>(si)], bb);
      templs.push_back(smp.templ);
      searches.push_back(smp.search);
      gts.push_back(smp.gt);
    }
    Tensor t_batch = stack(templs);
    Tensor s_batch = stack(searches);

    Tape tape;
    Tracker::Forward fwd = tracker.forward(&tape, t_batch, s_batch, true);

    // tracking loss, averaged over the batch
    Tensor l_track = Tensor::scalar(0.0);
    bool first = true;
    for (int b = 0; b < cfg.batch_size; ++b) {
      HeadOutputs one = slice_sample(fwd.head, b, hc.grid);
      Tensor lb = tracking_loss(one, gts[static_cast<size_t>(b)], cfg.weights, hc);
      l_track = first ? lb : add(l_track, lb);
      first = false;
    }
    l_track = mul_scalar(l_track, 1.0 / cfg.batch_size);

    // target-oriented unmixing loss with the per-sample relevance masks
    Tensor l_unmix = Tensor::scalar(0.0);
    if (fwd.has_reconstruction) {
      std::vector<Tensor> masks;
      for (int b = 0; b < cfg.batch_size; ++b) {
        Tensor grid_mask =
            step < cfg.warmup_steps
                ? tracker.relevance_mask(fwd, b, &gts[static_cast<size_t>(b)])
                : tracker.relevance_mask(fwd, b);
        masks.push_back(upsample_mask(grid_mask, hc.cell));
      }
      Tensor v = stack(masks);  // [B,1,64,64]
      l_unmix = target_unmixing_loss(fwd.xhat_template, t_batch, fwd.xhat_search,
                                     s_batch, v, cfg.weights.lambda_ce);
    }

    Tensor total = total_loss(l_track, l_unmix, fwd.has_reconstruction
                                                    ? cfg.weights.lambda_u
                                                    : 0.0);

    StepLog log;
    log.step = step;
    log.total = total.value();
    log.tracking = l_track.value();
    log.unmixing = l_unmix.value();
    log.lr = opt.lr();
    if (!std::isfinite(log.total))
      throw std::runtime_error(
          "train: non-finite loss at step " + std::to_string(step) +
          " (tracking=" + std::to_string(log.tracking) +
          ", unmixing=" + std::to_string(log.unmixing) + ")");

    for (Var* v : train_vars) v->zero_grad();
    tape.backward(total);
    tape.collect();
    opt.step();

    result.steps.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

// ---- OPE ---------------------------------------------------------------------

OpeResult ope_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("ope_metrics: length mismatch: " +
                                std::to_string(pred.size()) + " vs " +
                                std::to_string(gt.size()));
  if (pred.empty()) throw std::invalid_argument("ope_metrics: no frames");

  OpeResult r;
  for (size_t i = 0; i < pred.size(); ++i) {
    r.center_errors.push_back(center_distance(pred[i], gt[i]));
    r.ious.push_back(iou(pred[i], gt[i]));
  }
  int within = 0;
  for (double e : r.center_errors)
    if (e <= 20.0) ++within;
  r.dp20 = static_cast<double>(within) / static_cast<double>(pred.size());

  double auc = 0.0;
  for (int k = 0; k <= 20; ++k) {
    double tau = k / 20.0;
    int ok = 0;
    for (double v : r.ious)
      if (v >= tau) ++ok;
    double frac = static_cast<double>(ok) / static_cast<double>(pred.size());
    r.success_curve.push_back(frac);
    auc += frac;
  }
  r.auc = auc / 21.0;
  return r;
}

OpeResult run_ope(const std::vector<SequenceRecord>& seqs,
                  const TrackStepFn& step_fn) {
  std::vector<BBox> all_pred, all_gt;
  for (const SequenceRecord& seq : seqs) {
    if (seq.cubes.empty()) continue;
    BBox prev = seq.boxes[0];
    all_pred.push_back(prev);
    all_gt.push_back(seq.boxes[0]);
    for (int f = 1; f < static_cast<int>(seq.cubes.size()); ++f) {
      BBox box = step_fn(seq, f, prev);
      // clip to the frame, keep tracking
      box.w = std::clamp(box.w, 1.0, static_cast<double>(seq.width));
      box.h = std::clamp(box.h, 1.0, static_cast<double>(seq.height));
      box.x = std::clamp(box.x, 0.0, seq.width - box.w);
      box.y = std::clamp(box.y, 0.0, seq.height - box.h);
      all_pred.push_back(box);
      all_gt.push_back(seq.boxes[static_cast<size_t>(f)]);
      prev = box;
    }
  }
  return ope_metrics(all_pred, all_gt);
}

OpeResult evaluate(Tracker& tracker, const std::vector<SequenceRecord>& seqs) {
  const BackboneConfig& bb = tracker.config().backbone;
  const HeadConfig& hc = tracker.config().head;

  // template crops are fixed per sequence; cache by sequence address
  const SequenceRecord* cached_seq = nullptr;
  Tensor cached_templ;

  auto step_fn = [&](const SequenceRecord& seq, int frame, const BBox& prev) {
    if (cached_seq != &seq) {
      const BBox& b0 = seq.boxes[0];
      double t_side = 2.0 * std::sqrt(std::max(1.0, b0.w * b0.h));
      cached_templ = crop_resize(seq.cubes[0], b0.cx(), b0.cy(), t_side, bb.template_size);
      cached_seq = &seq;
    }
    double side = 4.0 * std::sqrt(std::max(1.0, prev.w * prev.h));
    Tensor search = crop_resize(seq.cubes[static_cast<size_t>(frame)], prev.cx(),
                                prev.cy(), side, bb.search_size);
    Tracker::Forward fwd = tracker.forward(nullptr, cached_templ, search, false);
    HeadOutputs one = slice_sample(fwd.head, 0, hc.grid);
    BBox in_crop = decode_box(one, hc);
    double scale = side / bb.search_size;
    return BBox{prev.cx() - side / 2 + in_crop.x * scale,
                prev.cy() - side / 2 + in_crop.y * scale, in_crop.w * scale,
                in_crop.h * scale};
  };
  return run_ope(seqs, step_fn);
}

void write_metrics_json(const std::string& path, const OpeResult& r) {
  nlohmann::json j;
  j["dp20"] = r.dp20;
  j["auc"] = r.auc;
  j["success_curve"] = r.success_curve;
  j["center_errors"] = r.center_errors;
  j["ious"] = r.ious;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

void write_metrics_csv(const std::string& path, const OpeResult& r) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "frame,center_error,iou\n";
  for (size_t i = 0; i < r.center_errors.size(); ++i)
    out << i << "," << r.center_errors[i] << "," << r.ious[i] << "\n";
  out << "# dp20," << r.dp20 << "\n# auc," << r.auc << "\n";
}

void save_tracker(const std::string& path, Tracker& tracker,
                  const TrainConfig& cfg) {
  std::map<std::string, std::string> meta;
  meta["config"] = serialize_train_config(cfg);
  save_checkpoint(path, tracker.all_vars(), tracker.all_buffers(), meta);
}

std::unique_ptr<Tracker> load_tracker(const std::string& path, TrainConfig* cfg_out) {
  Checkpoint ck = load_checkpoint(path);
  auto it = ck.meta.find("config");
  if (it == ck.meta.end())
    throw std::runtime_error("checkpoint " + path + " carries no config entry");
  TrainConfig cfg = train_config_from(KeyValues::parse_text(it->second));
  auto tracker = std::make_unique<Tracker>(cfg.model, cfg.seed);
  apply_checkpoint(ck, tracker->all_vars(), tracker->all_buffers());
  if (cfg_out != nullptr) *cfg_out = cfg;
  return tracker;
}

}  // namespace hstrack
