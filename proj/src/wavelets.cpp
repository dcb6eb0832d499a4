#include "hstrack/wavelets.hpp"

#include <cmath>
#include <stdexcept>

namespace hstrack {

namespace {

const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

void check_spatial_rank(const Tensor& x, const char* op) {
  if (x.rank() != 3 && x.rank() != 4)
    throw std::invalid_argument(std::string(op) + ": expects [C,h,w] or [N,C,h,w], got " +
                                shape_str(x.shape()));
}

}  // namespace

std::pair<Tensor, Tensor> haar1d_channels(const Tensor& x) {
  check_spatial_rank(x, "haar1d_channels");
  int caxis = x.rank() - 3;
  int C = x.dim(caxis);
  if (C % 2 != 0)
    throw std::invalid_argument("haar1d_channels: odd channel count " +
                                std::to_string(C) + " in " + shape_str(x.shape()));
  // group channel pairs: [.., 2c, h, w] -> [.., c, 2, h, w]
  Shape grouped = x.shape();
  grouped[static_cast<size_t>(caxis)] = C / 2;
  grouped.insert(grouped.begin() + caxis + 1, 2);
  Tensor g = reshape(x, grouped);
  Shape half = x.shape();
  half[static_cast<size_t>(caxis)] = C / 2;
  Tensor even = reshape(slice(g, caxis + 1, 0, 1), half);
  Tensor odd = reshape(slice(g, caxis + 1, 1, 1), half);
  Tensor low = mul_scalar(add(even, odd), kInvSqrt2);
  Tensor high = mul_scalar(sub(even, odd), kInvSqrt2);
  return {low, high};
}

Tensor ihaar1d_channels(const Tensor& low, const Tensor& high) {
  if (low.shape() != high.shape())
    throw std::invalid_argument("ihaar1d_channels: branch shapes differ: " +
                                shape_str(low.shape()) + " vs " +
                                shape_str(high.shape()));
  check_spatial_rank(low, "ihaar1d_channels");
  int caxis = low.rank() - 3;
  Tensor even = mul_scalar(add(low, high), kInvSqrt2);
  Tensor odd = mul_scalar(sub(low, high), kInvSqrt2);
  Shape lifted = low.shape();
  lifted.insert(lifted.begin() + caxis + 1, 1);
  Tensor inter = concat({reshape(even, lifted), reshape(odd, lifted)}, caxis + 1);
  Shape out = low.shape();
  out[static_cast<size_t>(caxis)] *= 2;
  return reshape(inter, out);
}

Subbands2D haar2d(const Tensor& x) {
  check_spatial_rank(x, "haar2d");
  int caxis = x.rank() - 3;
  int h = x.dim(caxis + 1), w = x.dim(caxis + 2);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("haar2d: odd spatial extent in " +
                                shape_str(x.shape()));

  // [.., C, h, w] -> [.., C, h/2, 2, w/2, 2], then pick the 2x2 corners
  Shape blocked = x.shape();
  blocked[static_cast<size_t>(caxis + 1)] = h / 2;
  blocked[static_cast<size_t>(caxis + 2)] = w / 2;
  blocked.insert(blocked.begin() + caxis + 2, 2);
  blocked.push_back(2);
  Tensor g = reshape(x, blocked);

  Shape half = x.shape();
  half[static_cast<size_t>(caxis + 1)] = h / 2;
  half[static_cast<size_t>(caxis + 2)] = w / 2;
  int ry_axis = caxis + 2;
  int rx_axis = x.rank() + 1;  // appended axis in `blocked`
  auto corner = [&](int ry, int rx) {
    return reshape(slice(slice(g, ry_axis, ry, 1), rx_axis, rx, 1), half);
  };
  Tensor a = corner(0, 0), b = corner(0, 1), c = corner(1, 0), d = corner(1, 1);

  Subbands2D s;
  s.ll = mul_scalar(add(add(a, b), add(c, d)), 0.5);
  s.hl = mul_scalar(add(sub(a, b), sub(c, d)), 0.5);
  s.lh = mul_scalar(sub(add(a, b), add(c, d)), 0.5);
  s.hh = mul_scalar(add(sub(a, b), sub(d, c)), 0.5);
  return s;
}

Tensor ihaar2d(const Subbands2D& s) {
  if (s.ll.shape() != s.hl.shape() || s.ll.shape() != s.lh.shape() ||
      s.ll.shape() != s.hh.shape())
    throw std::invalid_argument(
        "ihaar2d: mismatched subband shapes " + shape_str(s.ll.shape()) + ", " +
        shape_str(s.hl.shape()) + ", " + shape_str(s.lh.shape()) + ", " +
        shape_str(s.hh.shape()));
  check_spatial_rank(s.ll, "ihaar2d");
  int caxis = s.ll.rank() - 3;
  int hh = s.ll.dim(caxis + 1), hw = s.ll.dim(caxis + 2);

  Tensor a = mul_scalar(add(add(s.ll, s.hl), add(s.lh, s.hh)), 0.5);
  Tensor b = mul_scalar(add(sub(s.ll, s.hl), sub(s.lh, s.hh)), 0.5);
  Tensor c = mul_scalar(sub(add(s.ll, s.hl), add(s.lh, s.hh)), 0.5);
  Tensor d = mul_scalar(add(sub(s.ll, s.hl), sub(s.hh, s.lh)), 0.5);

  // reassemble [.., C, h/2, 2, w/2, 2] -> [.., C, h, w]
  Shape lifted = s.ll.shape();
  lifted.push_back(1);
  auto lift = [&](const Tensor& t) { return reshape(t, lifted); };
  Tensor top = concat({lift(a), lift(b)}, s.ll.rank());     // [.., h/2, w/2, 2]
  Tensor bottom = concat({lift(c), lift(d)}, s.ll.rank());
  Shape rowed = s.ll.shape();
  rowed.insert(rowed.begin() + caxis + 2, 1);
  rowed.push_back(2);
  Tensor rows =
      concat({reshape(top, rowed), reshape(bottom, rowed)}, caxis + 2);
  Shape out = s.ll.shape();
  out[static_cast<size_t>(caxis + 1)] = hh * 2;
  out[static_cast<size_t>(caxis + 2)] = hw * 2;
  return reshape(rows, out);
}

}  // namespace hstrack
