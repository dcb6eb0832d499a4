#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hstrack/checkpoint.hpp"
#include "hstrack/config.hpp"
#include "hstrack/synthdata.hpp"
#include "hstrack/tracker.hpp"

namespace hstrack {

/// One training sample: template/search cube crops with the ground-truth box
/// mapped into search-crop pixels.
struct TrackSample {
  Tensor templ;   // [bands, 32, 32]
  Tensor search;  // [bands, 64, 64]
  BBox gt;        // in search-crop coordinates
};

/// Nearest-neighbor crop-and-resize with border replication; preserves
/// spectra exactly.
Tensor crop_resize(const Tensor& cube, double cx, double cy, double side,
                   int out_px);

TrackSample sample_pair(Rng& rng, const SequenceRecord& seq,
                        const BackboneConfig& bb);

/// Stack [C,..] tensors into one [N,C,..] batch.
Tensor stack(const std::vector<Tensor>& parts);

std::vector<SequenceRecord> load_dataset(const std::string& dir);

struct StepLog {
  int step = 0;
  double total = 0, tracking = 0, unmixing = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<StepLog> steps;
};

TrainResult train(Tracker& tracker, const TrainConfig& cfg,
                  const std::vector<SequenceRecord>& data,
                  const std::function<void(const StepLog&)>& on_step = {});

struct OpeResult {
  double dp20 = 0;
  double auc = 0;
  std::vector<double> center_errors;  // per frame, all sequences concatenated
  std::vector<double> ious;
  std::vector<double> success_curve;  // 21 thresholds, 0.00 to 1.00
};

/// DP@20 and success AUC over 21 IoU thresholds (inclusive comparisons).
OpeResult ope_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt);

/// One-pass evaluation driver: per sequence, frame 0 initializes from the
/// ground-truth box and `step_fn` produces each subsequent prediction from
/// the previous one. Boxes that leave the frame are clipped.
using TrackStepFn =
    std::function<BBox(const SequenceRecord& seq, int frame, const BBox& prev)>;
OpeResult run_ope(const std::vector<SequenceRecord>& seqs, const TrackStepFn& step_fn);

OpeResult evaluate(Tracker& tracker, const std::vector<SequenceRecord>& seqs);

void write_metrics_json(const std::string& path, const OpeResult& r);
void write_metrics_csv(const std::string& path, const OpeResult& r);

void save_tracker(const std::string& path, Tracker& tracker,
                  const TrainConfig& cfg);
/// Rebuilds the model from the checkpoint's embedded configuration.
std::unique_ptr<Tracker> load_tracker(const std::string& path, TrainConfig* cfg_out = nullptr);

}  // namespace hstrack
