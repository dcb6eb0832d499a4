#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hstrack/objectives.hpp"
#include "hstrack/tensor.hpp"

namespace hstrack {

/// Scene description for the synthetic hyperspectral video generator.
/// (spec, seed) fully determines every emitted byte.
struct SceneSpec {
  int bands = 16;
  int height = 128;
  int width = 128;
  int frames = 24;
  int r_true = 5;
  double target_min = 12;    // smallest target side, px
  double target_max = 20;
  double vel_max = 1.0;      // linear velocity bound, px/frame
  double jitter_sigma = 0.3; // per-frame center jitter, px
  double snr_db = 30.0;      // infinity disables noise
  bool camouflage = false;   // FC-invisible but spectrally distinct target
  bool with_target = true;   // false: pure unmixing scene, no moving object
  double softmax_temp = 3.0; // sharpness of the background abundance fields
  double min_endmember_sad = 0.2;   // pairwise spectral separation floor
  double reflectance_floor = 0.15;  // baseline added to every spectrum
  uint64_t seed = 0;
};

/// One generated sequence with full ground truth. Cubes and abundances are
/// f64 in memory; the container stores f32.
struct SequenceRecord {
  int bands = 0, height = 0, width = 0, r_true = 0;
  std::vector<Tensor> cubes;       // T x [bands, h, w]
  std::vector<BBox> boxes;         // T
  Tensor endmembers;               // [bands, r_true]
  std::vector<Tensor> abundances;  // T x [r_true, h, w]
};

/// Endmember spectra as sums of 1-3 Gaussian bumps over the band index,
/// peak-normalized to 1 with a 0.15 reflectance floor, pairwise SAD
/// >= 0.2 rad (resampled on violation, bounded retries).
Tensor gen_endmembers(int r_true, int bands, uint64_t seed);
Tensor gen_endmembers(int r_true, int bands, uint64_t seed, double min_sad,
                      double reflectance_floor);

SequenceRecord gen_sequence(const SceneSpec& spec);

/// 3-channel false-color rendering: band means over three contiguous groups.
Tensor false_color(const Tensor& cube);

struct CamouflageStats {
  double fc_gap = 0.0;    // mean abs FC difference, target vs background
  double mean_sad = 0.0;  // mean SAD of target pixels vs mean bg spectrum
};
CamouflageStats camouflage_stats(const SequenceRecord& rec, int frame);

/// Fraction of pixels whose dominant abundance is >= `threshold`.
double pure_pixel_fraction(const Tensor& abundance, double threshold = 0.95);

// --- HSVC v1 container ------------------------------------------------------
// magic "HSVCUBE1"; u32 LE version, bands, h, w, T, r_true; T frames of
// bands*h*w f32 LE (band-major, row-major); M as bands*r_true f32;
// A as T*r_true*h*w f32; T boxes of 4 f32; trailing u64 sum-of-bytes checksum.

void write_hsvc(const std::string& path, const SequenceRecord& rec);
SequenceRecord read_hsvc(const std::string& path);

/// JSON sidecar mapping frame index -> [x, y, w, h].
void write_annotations(const std::string& path, const SequenceRecord& rec);

}  // namespace hstrack
