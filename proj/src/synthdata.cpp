#include "hstrack/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "hstrack/nn.hpp"
#include "hstrack/unmixing.hpp"
#include "json.hpp"

namespace hstrack {

namespace {

std::vector<double> gaussian_bump_spectrum(Rng& rng, int bands, double floor) {
  int bumps = rng.uniform_int(1, 3);
  std::vector<double> s(static_cast<size_t>(bands), 0.0);
  for (int k = 0; k < bumps; ++k) {
    double amp = rng.uniform(0.5, 1.0);
    double mu = rng.uniform(0.0, bands - 1.0);
    double sigma = rng.uniform(bands / 12.0, bands / 4.0);
    for (int b = 0; b < bands; ++b)
      s[static_cast<size_t>(b)] += amp * std::exp(-(b - mu) * (b - mu) / (2 * sigma * sigma));
  }
  double peak = *std::max_element(s.begin(), s.end());
  // the floor keeps spectra away from zero norm and inside [0,1]
  for (double& v : s) v = floor + (1.0 - floor) * v / peak;
  return s;
}

// Separable Gaussian blur with reflected borders.
void blur_field(std::vector<double>& f, int h, int w, double sigma) {
  int radius = std::max(1, static_cast<int>(3 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = std::exp(-i * i / (2 * sigma * sigma));
    sum += kernel[static_cast<size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
  };
  std::vector<double> tmp(f.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[static_cast<size_t>(i + radius)] *
             f[static_cast<size_t>(y) * w + reflect(x + i, w)];
      tmp[static_cast<size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[static_cast<size_t>(i + radius)] *
             tmp[static_cast<size_t>(reflect(y + i, h)) * w + x];
      f[static_cast<size_t>(y) * w + x] = s;
    }
}

std::vector<int> band_groups(int bands) {
  // group boundaries for the 3-channel false-color mapping
  std::vector<int> edges = {0, bands / 3, 2 * (bands / 3), bands};
  return edges;
}

// Target spectrum whose per-group means equal those of `mu_bg` while the
// within-group shape alternates; delta controls spectral contrast.
std::vector<double> camouflage_spectrum(const std::vector<double>& mu_bg,
                                        double delta) {
  int bands = static_cast<int>(mu_bg.size());
  std::vector<int> edges = band_groups(bands);
  std::vector<double> t(mu_bg.size(), 0.0);
  for (int g = 0; g < 3; ++g) {
    int lo = edges[static_cast<size_t>(g)], hi = edges[static_cast<size_t>(g) + 1];
    double mean = 0.0;
    for (int b = lo; b < hi; ++b) mean += mu_bg[static_cast<size_t>(b)];
    mean /= std::max(1, hi - lo);
    std::vector<double> pat(static_cast<size_t>(hi - lo));
    double psum = 0.0;
    for (int i = 0; i < hi - lo; ++i) {
      pat[static_cast<size_t>(i)] = (i % 2 == 0) ? 1.0 : -1.0;
      psum += pat[static_cast<size_t>(i)];
    }
    for (double& p : pat) p -= psum / std::max(1, hi - lo);  // zero group mean
    for (int i = 0; i < hi - lo; ++i)
      t[static_cast<size_t>(lo + i)] = mean + delta * pat[static_cast<size_t>(i)];
  }
  for (double& v : t) v = std::clamp(v, 0.01, 1.0);
  return t;
}

void set_column(std::vector<double>& m, int bands, int r, int col,
                const std::vector<double>& spectrum) {
  for (int b = 0; b < bands; ++b)
    m[static_cast<size_t>(b) * r + col] = spectrum[static_cast<size_t>(b)];
}

std::vector<double> get_column(const std::vector<double>& m, int bands, int r,
                               int col) {
  std::vector<double> s(static_cast<size_t>(bands));
  for (int b = 0; b < bands; ++b)
    s[static_cast<size_t>(b)] = m[static_cast<size_t>(b) * r + col];
  return s;
}

}  // namespace

Tensor gen_endmembers(int r_true, int bands, uint64_t seed) {
  return gen_endmembers(r_true, bands, seed, 0.2, 0.15);
}

Tensor gen_endmembers(int r_true, int bands, uint64_t seed, double min_sad,
                      double reflectance_floor) {
  if (r_true < 2 || bands < r_true)
    throw std::invalid_argument("gen_endmembers: need 2 <= r_true <= bands, got r=" +
                                std::to_string(r_true) + " n=" + std::to_string(bands));
  Rng rng = Rng::split(seed, 0xE17D);
  std::vector<std::vector<double>> cols;
  for (int k = 0; k < r_true; ++k) {
    int retries = 0;
    for (;;) {
      std::vector<double> cand = gaussian_bump_spectrum(rng, bands, reflectance_floor);
      double worst = 1e9;
      for (const auto& c : cols) worst = std::min(worst, spectral_angle(cand, c));
      if (cols.empty() || worst >= min_sad) {
        cols.push_back(std::move(cand));
        break;
      }
      if (++retries > 100)
        throw std::runtime_error(
            "gen_endmembers: could not separate endmember " + std::to_string(k) +
            " after 100 retries (best pairwise SAD " + std::to_string(worst) + ")");
    }
  }
  std::vector<double> m(static_cast<size_t>(bands) * r_true);
  for (int k = 0; k < r_true; ++k) set_column(m, bands, r_true, k, cols[static_cast<size_t>(k)]);
  return Tensor::from({bands, r_true}, std::move(m));
}

Tensor false_color(const Tensor& cube) {
  bool batched = cube.rank() == 4;
  if (!batched && cube.rank() != 3)
    throw std::invalid_argument("false_color: expects [bands,h,w] or [N,bands,h,w]");
  int caxis = cube.rank() - 3;
  int bands = cube.dim(caxis);
  std::vector<int> edges = band_groups(bands);
  std::vector<Tensor> chans;
  for (int g = 0; g < 3; ++g) {
    Tensor grp = slice(cube, caxis, edges[static_cast<size_t>(g)],
                       edges[static_cast<size_t>(g) + 1] - edges[static_cast<size_t>(g)]);
    chans.push_back(mean_axis(grp, caxis));
  }
  return concat(chans, caxis);
}

double pure_pixel_fraction(const Tensor& abundance, double threshold) {
  int r = abundance.dim(0);
  long long plane = static_cast<long long>(abundance.dim(1)) * abundance.dim(2);
  long long pure = 0;
  for (long long p = 0; p < plane; ++p) {
    double best = 0.0;
    for (int k = 0; k < r; ++k)
      best = std::max(best, abundance.values()[static_cast<size_t>(k * plane + p)]);
    if (best >= threshold) ++pure;
  }
  return static_cast<double>(pure) / static_cast<double>(plane);
}

SequenceRecord gen_sequence(const SceneSpec& spec) {
  if (spec.r_true < 2 || spec.bands < spec.r_true)
    throw std::invalid_argument("gen_sequence: need 2 <= r_true <= bands");
  if (spec.frames < 0 || spec.height <= 0 || spec.width <= 0)
    throw std::invalid_argument("gen_sequence: bad frame geometry");
  if (spec.with_target &&
      (spec.target_max >= std::min(spec.height, spec.width) ||
       spec.target_min <= 0 || spec.target_min > spec.target_max))
    throw std::invalid_argument("gen_sequence: target size range does not fit the frame");

  int n = spec.bands, h = spec.height, w = spec.width, r = spec.r_true;
  SequenceRecord rec;
  rec.bands = n;
  rec.height = h;
  rec.width = w;
  rec.r_true = r;

  // --- endmembers; last column is reserved for the target ---
  Tensor m = gen_endmembers(r, n, spec.seed, spec.min_endmember_sad,
                            spec.reflectance_floor);
  std::vector<double> mvals = m.values();

  // --- static background abundance fields (softmax over r smoothed fields) ---
  Rng field_rng = Rng::split(spec.seed, 0xF1E1D);
  std::vector<std::vector<double>> fields(static_cast<size_t>(r));
  for (int k = 0; k < r; ++k) {
    fields[static_cast<size_t>(k)].resize(static_cast<size_t>(h) * w);
    // the reserved endmember is suppressed in the background so the target
    // material stays distinctive
    double mean = (spec.with_target && k == r - 1) ? -2.5 : 0.0;
    for (double& v : fields[static_cast<size_t>(k)]) v = field_rng.normal();
    blur_field(fields[static_cast<size_t>(k)], h, w, std::min(h, w) / 8.0);
    // standardize so softmax_temp has a consistent meaning
    double s = 0.0, s2 = 0.0;
    for (double v : fields[static_cast<size_t>(k)]) {
      s += v;
      s2 += v * v;
    }
    double fmean = s / static_cast<double>(h * w);
    double fstd = std::sqrt(std::max(1e-12, s2 / static_cast<double>(h * w) - fmean * fmean));
    for (double& v : fields[static_cast<size_t>(k)]) v = mean + (v - fmean) / fstd;
  }
  std::vector<double> bg_a(static_cast<size_t>(r) * h * w);
  for (long long p = 0; p < static_cast<long long>(h) * w; ++p) {
    double mx = -1e300;
    for (int k = 0; k < r; ++k)
      mx = std::max(mx, spec.softmax_temp * fields[static_cast<size_t>(k)][static_cast<size_t>(p)]);
    double sum = 0.0;
    for (int k = 0; k < r; ++k) {
      double e = std::exp(spec.softmax_temp * fields[static_cast<size_t>(k)][static_cast<size_t>(p)] - mx);
      bg_a[static_cast<size_t>(k * h * w + p)] = e;
      sum += e;
    }
    for (int k = 0; k < r; ++k) bg_a[static_cast<size_t>(k * h * w + p)] /= sum;
  }

  // --- target spectrum ---
  std::vector<double> mu_bg(static_cast<size_t>(n), 0.0);
  {
    // expected background spectrum from mean abundances
    std::vector<double> abar(static_cast<size_t>(r), 0.0);
    long long plane = static_cast<long long>(h) * w;
    for (int k = 0; k < r; ++k) {
      for (long long p = 0; p < plane; ++p)
        abar[static_cast<size_t>(k)] += bg_a[static_cast<size_t>(k * plane + p)];
      abar[static_cast<size_t>(k)] /= static_cast<double>(plane);
    }
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < r; ++k)
        mu_bg[static_cast<size_t>(b)] += mvals[static_cast<size_t>(b) * r + k] * abar[static_cast<size_t>(k)];
  }

  if (spec.with_target && spec.camouflage) {
    double norm_mu = 0.0;
    for (double v : mu_bg) norm_mu += v * v;
    // the target keeps 15% background mixture, so overshoot the pure angle
    double delta = 0.4 * std::sqrt(norm_mu / n);
    std::vector<double> t;
    for (int iter = 0; iter < 100; ++iter) {
      t = camouflage_spectrum(mu_bg, delta);
      if (spectral_angle(t, mu_bg) >= 0.5) break;
      delta *= 1.25;
    }
    double worst = 1e9;
    for (int k = 0; k < r - 1; ++k)
      worst = std::min(worst, spectral_angle(t, get_column(mvals, n, r, k)));
    if (worst < 0.2)
      throw std::runtime_error("gen_sequence: camouflage spectrum too close to a background endmember");
    set_column(mvals, n, r, r - 1, t);
  } else if (spec.with_target) {
    // distinct target: single narrow bump in the middle band group
    std::vector<int> edges = band_groups(n);
    double mu = 0.5 * (edges[1] + edges[2]);
    std::vector<double> t(static_cast<size_t>(n));
    for (int b = 0; b < n; ++b)
      t[static_cast<size_t>(b)] =
          0.05 + 0.95 * std::exp(-(b - mu) * (b - mu) / (2.0 * std::pow(n / 10.0, 2)));
    set_column(mvals, n, r, r - 1, t);
  }
  rec.endmembers = Tensor::from({n, r}, mvals);

  // --- trajectory ---
  int frames = spec.frames;
  std::vector<BBox> boxes;
  if (spec.with_target && frames > 0) {
    Rng traj = Rng::split(spec.seed, 0x7247);
    double bw = traj.uniform(spec.target_min, spec.target_max);
    double bh = traj.uniform(spec.target_min, spec.target_max);
    double margin = 2.0;
    double cx = traj.uniform(bw / 2 + margin, w - bw / 2 - margin);
    double cy = traj.uniform(bh / 2 + margin, h - bh / 2 - margin);
    double vx = traj.uniform(-spec.vel_max, spec.vel_max);
    double vy = traj.uniform(-spec.vel_max, spec.vel_max);
    for (int f = 0; f < frames; ++f) {
      boxes.push_back(BBox{cx - bw / 2, cy - bh / 2, bw, bh});
      cx += vx + spec.jitter_sigma * traj.normal();
      cy += vy + spec.jitter_sigma * traj.normal();
      double lox = bw / 2, hix = w - bw / 2;
      double loy = bh / 2, hiy = h - bh / 2;
      if (cx < lox) { cx = lox; vx = std::fabs(vx); }
      if (cx > hix) { cx = hix; vx = -std::fabs(vx); }
      if (cy < loy) { cy = loy; vy = std::fabs(vy); }
      if (cy > hiy) { cy = hiy; vy = -std::fabs(vy); }
    }
  }

  // --- frames ---
  long long plane = static_cast<long long>(h) * w;
  bool noisy = std::isfinite(spec.snr_db);
  for (int f = 0; f < frames; ++f) {
    std::vector<double> a = bg_a;
    if (spec.with_target) {
      const BBox& b = boxes[static_cast<size_t>(f)];
      int x0 = std::max(0, static_cast<int>(std::floor(b.x)));
      int y0 = std::max(0, static_cast<int>(std::floor(b.y)));
      int x1 = std::min(w, static_cast<int>(std::ceil(b.x + b.w)));
      int y1 = std::min(h, static_cast<int>(std::ceil(b.y + b.h)));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          long long p = static_cast<long long>(y) * w + x;
          for (int k = 0; k < r; ++k) {
            double bg = bg_a[static_cast<size_t>(k * plane + p)];
            a[static_cast<size_t>(k * plane + p)] =
                0.15 * bg + (k == r - 1 ? 0.85 : 0.0);
          }
        }
    }

    std::vector<double> cube(static_cast<size_t>(n) * plane, 0.0);
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < r; ++k) {
        double mk = mvals[static_cast<size_t>(b) * r + k];
        const double* ap = a.data() + k * plane;
        double* cp = cube.data() + b * plane;
        for (long long p = 0; p < plane; ++p) cp[p] += mk * ap[p];
      }

    if (noisy) {
      double power = 0.0;
      for (double v : cube) power += v * v;
      power /= static_cast<double>(cube.size());
      double nsigma = std::sqrt(power / std::pow(10.0, spec.snr_db / 10.0));
      Rng noise = Rng::split(spec.seed, 0x4015E + static_cast<uint64_t>(f));
      for (double& v : cube) v += nsigma * noise.normal();
    }

    rec.cubes.push_back(Tensor::from({n, h, w}, std::move(cube)));
    rec.abundances.push_back(Tensor::from({r, h, w}, std::move(a)));
  }
  rec.boxes = std::move(boxes);
  if (!spec.with_target) rec.boxes.assign(static_cast<size_t>(frames), BBox{0, 0, 0, 0});
  return rec;
}

CamouflageStats camouflage_stats(const SequenceRecord& rec, int frame) {
  if (frame < 0 || frame >= static_cast<int>(rec.cubes.size()))
    throw std::invalid_argument("camouflage_stats: frame out of range");
  const Tensor& cube = rec.cubes[static_cast<size_t>(frame)];
  const BBox& b = rec.boxes[static_cast<size_t>(frame)];
  int n = rec.bands, h = rec.height, w = rec.width;
  long long plane = static_cast<long long>(h) * w;

  auto inside = [&](int x, int y) {
    return x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
  };
  std::vector<double> mean_t(static_cast<size_t>(n), 0.0), mean_b(static_cast<size_t>(n), 0.0);
  long long ct = 0, cb = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      long long p = static_cast<long long>(y) * w + x;
      bool in = inside(x, y);
      for (int band = 0; band < n; ++band) {
        double v = cube.values()[static_cast<size_t>(band * plane + p)];
        if (in)
          mean_t[static_cast<size_t>(band)] += v;
        else
          mean_b[static_cast<size_t>(band)] += v;
      }
      (in ? ct : cb) += 1;
    }
  for (int band = 0; band < n; ++band) {
    mean_t[static_cast<size_t>(band)] /= std::max<long long>(1, ct);
    mean_b[static_cast<size_t>(band)] /= std::max<long long>(1, cb);
  }

  CamouflageStats st;
  std::vector<int> edges = band_groups(n);
  for (int g = 0; g < 3; ++g) {
    double ft = 0.0, fb = 0.0;
    int lo = edges[static_cast<size_t>(g)], hi = edges[static_cast<size_t>(g) + 1];
    for (int band = lo; band < hi; ++band) {
      ft += mean_t[static_cast<size_t>(band)];
      fb += mean_b[static_cast<size_t>(band)];
    }
    st.fc_gap += std::fabs(ft - fb) / (hi - lo);
  }
  st.fc_gap /= 3.0;

  // mean over target pixels of the angle to the mean background spectrum
  double sum_sad = 0.0;
  long long cnt = 0;
  std::vector<double> px(static_cast<size_t>(n));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!inside(x, y)) continue;
      long long p = static_cast<long long>(y) * w + x;
      for (int band = 0; band < n; ++band)
        px[static_cast<size_t>(band)] = cube.values()[static_cast<size_t>(band * plane + p)];
      sum_sad += spectral_angle(px, mean_b);
      ++cnt;
    }
  st.mean_sad = cnt > 0 ? sum_sad / static_cast<double>(cnt) : 0.0;
  return st;
}

// ---- HSVC v1 ---------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'H', 'S', 'V', 'C', 'U', 'B', 'E', '1'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

void put_f32_tensor(std::vector<uint8_t>& buf, const Tensor& t) {
  for (double v : t.values()) put_f32(buf, static_cast<float>(v));
}

struct Reader {
  std::vector<uint8_t> data;
  size_t pos = 0;
  std::string path;

  [[noreturn]] void fail(const std::string& what, size_t offset) const {
    throw std::runtime_error("HSVC " + path + ": " + what + " at byte offset " +
                             std::to_string(offset));
  }
  void need(size_t n) {
    if (pos + n > data.size()) fail("truncated file (need " + std::to_string(n) + " bytes)", pos);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

uint64_t byte_sum(const uint8_t* p, size_t n) {
  uint64_t s = 0;
  for (size_t i = 0; i < n; ++i) s += p[i];
  return s;
}

}  // namespace

void write_hsvc(const std::string& path, const SequenceRecord& rec) {
  int t_count = static_cast<int>(rec.cubes.size());
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 8);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<uint32_t>(rec.bands));
  put_u32(buf, static_cast<uint32_t>(rec.height));
  put_u32(buf, static_cast<uint32_t>(rec.width));
  put_u32(buf, static_cast<uint32_t>(t_count));
  put_u32(buf, static_cast<uint32_t>(rec.r_true));
  for (const Tensor& c : rec.cubes) put_f32_tensor(buf, c);
  if (rec.endmembers.numel() > 0)
    put_f32_tensor(buf, rec.endmembers);
  else
    for (int i = 0; i < rec.bands * rec.r_true; ++i) put_f32(buf, 0.0f);
  for (const Tensor& a : rec.abundances) put_f32_tensor(buf, a);
  for (const BBox& b : rec.boxes) {
    put_f32(buf, static_cast<float>(b.x));
    put_f32(buf, static_cast<float>(b.y));
    put_f32(buf, static_cast<float>(b.w));
    put_f32(buf, static_cast<float>(b.h));
  }
  uint64_t sum = byte_sum(buf.data(), buf.size());
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(sum >> (8 * i)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("HSVC: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("HSVC: short write to " + path);
}

SequenceRecord read_hsvc(const std::string& path) {
  Reader r;
  r.path = path;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("HSVC: cannot open " + path);
    r.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  r.need(8);
  if (std::memcmp(r.data.data(), kMagic, 8) != 0) r.fail("bad magic", 0);
  r.pos = 8;
  size_t version_off = r.pos;
  uint32_t version = r.u32();
  if (version != kVersion)
    r.fail("unsupported version " + std::to_string(version), version_off);

  SequenceRecord rec;
  rec.bands = static_cast<int>(r.u32());
  rec.height = static_cast<int>(r.u32());
  rec.width = static_cast<int>(r.u32());
  int t_count = static_cast<int>(r.u32());
  rec.r_true = static_cast<int>(r.u32());

  auto read_tensor = [&](Shape shape) {
    int n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = static_cast<double>(r.f32());
    return Tensor::from(std::move(shape), std::move(v));
  };

  for (int f = 0; f < t_count; ++f)
    rec.cubes.push_back(read_tensor({rec.bands, rec.height, rec.width}));
  rec.endmembers = read_tensor({rec.bands, rec.r_true});
  for (int f = 0; f < t_count; ++f)
    rec.abundances.push_back(read_tensor({rec.r_true, rec.height, rec.width}));
  for (int f = 0; f < t_count; ++f) {
    BBox b;
    b.x = static_cast<double>(r.f32());
    b.y = static_cast<double>(r.f32());
    b.w = static_cast<double>(r.f32());
    b.h = static_cast<double>(r.f32());
    rec.boxes.push_back(b);
  }
  size_t checksum_off = r.pos;
  uint64_t stored = r.u64();
  uint64_t actual = byte_sum(r.data.data(), checksum_off);
  if (stored != actual)
    r.fail("checksum mismatch (stored " + std::to_string(stored) + ", computed " +
               std::to_string(actual) + ")",
           checksum_off);
  if (r.pos != r.data.size())
    r.fail("trailing bytes after checksum", r.pos);
  return rec;
}

void write_annotations(const std::string& path, const SequenceRecord& rec) {
  nlohmann::json j = nlohmann::json::object();
  for (size_t f = 0; f < rec.boxes.size(); ++f) {
    const BBox& b = rec.boxes[f];
    j[std::to_string(f)] = {b.x, b.y, b.w, b.h};
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace hstrack
