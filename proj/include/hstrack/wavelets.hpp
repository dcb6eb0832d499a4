#pragma once

#include "hstrack/tensor.hpp"

namespace hstrack {

/// Four orthonormal 2D Haar subbands, each channels x h/2 x w/2 (with an
/// optional leading batch axis). Subband letters name (vertical, horizontal)
/// filters: LL average, HL horizontal detail, LH vertical detail, HH diagonal.
struct Subbands2D {
  Tensor ll, hl, lh, hh;
};

/// Channel-wise 1D Haar over consecutive channel pairs of a 2c-channel map:
/// low[k] = (x[2k] + x[2k+1])/sqrt(2), high[k] = (x[2k] - x[2k+1])/sqrt(2).
/// Accepts [2c,h,w] or [N,2c,h,w]; rejects odd channel counts.
std::pair<Tensor, Tensor> haar1d_channels(const Tensor& x);

/// Inverse of haar1d_channels (exact: the pair transform is orthonormal).
Tensor ihaar1d_channels(const Tensor& low, const Tensor& high);

/// Orthonormal 2D Haar over non-overlapping 2x2 blocks [[a,b],[c,d]]:
/// LL=(a+b+c+d)/2, HL=(a-b+c-d)/2, LH=(a+b-c-d)/2, HH=(a-b-c+d)/2.
/// Accepts [C,h,w] or [N,C,h,w] with even h and w.
Subbands2D haar2d(const Tensor& x);

/// Exact left inverse: ihaar2d(haar2d(x)) == x.
Tensor ihaar2d(const Subbands2D& s);

}  // namespace hstrack
