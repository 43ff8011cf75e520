#pragma once

#include <cmath>
#include <vector>

#include "scan2num/rng.hpp"
#include "scan2num/tensor.hpp"
#include "scan2num/volume.hpp"

// Axial slice sampling and augmentation. A scan is reduced to n slices taken
// at a fixed z stride; the fractional offset shifts the whole comb, which is
// the training-time jitter (inference pins it to 0.5, the window centers).
// Each selected plane is resampled to the network's input size first and
// normalized after, so the HU window applies to interpolated values.

namespace scan2num {

struct SliceStack {
  int n = 0;
  int size = 0;  // square slices, size x size
  std::vector<float> data;
  std::vector<int> source_indices;  // z index of each slice within the cropped volume

  float* slice(int i) { return data.data() + static_cast<int64_t>(i) * size * size; }
  const float* slice(int i) const { return data.data() + static_cast<int64_t>(i) * size * size; }
};

// Bilinear with half-pixel centers: output pixel o samples input coordinate
// (o + 0.5) * in/out - 0.5, clamped to the valid range.
inline void resample_bilinear(const float* src, int in_h, int in_w, float* dst, int out_h,
                              int out_w) {
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::min(static_cast<double>(in_h - 1), std::max(0.0, fy));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::min(static_cast<double>(in_w - 1), std::max(0.0, fx));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const float wx = static_cast<float>(fx - x0);
      const float top = src[y0 * in_w + x0] * (1.0f - wx) + src[y0 * in_w + x1] * wx;
      const float bot = src[y1 * in_w + x0] * (1.0f - wx) + src[y1 * in_w + x1] * wx;
      dst[oy * out_w + ox] = top * (1.0f - wy) + bot * wy;
    }
  }
}

// cropped: volume already cut to the lung bounding box. offset in [0,1).
inline SliceStack sample_slices(const Volume& cropped, int n, double offset, int input_size) {
  if (n < 1) throw DataError("sample_slices: need at least one slice");
  if (input_size < 1) throw DataError("sample_slices: input_size must be positive");
  if (!(offset >= 0.0 && offset < 1.0)) throw DataError("sample_slices: offset must be in [0,1)");
  const int z_extent = cropped.dims[0];
  if (z_extent < 1) throw DataError("sample_slices: empty volume");
  const double stride = static_cast<double>(z_extent) / n;
  SliceStack st;
  st.n = n;
  st.size = input_size;
  st.data.resize(static_cast<size_t>(n) * input_size * input_size);
  st.source_indices.resize(static_cast<size_t>(n));
  const int h = cropped.dims[1], w = cropped.dims[2];
  std::vector<float> plane(static_cast<size_t>(h) * w);
  std::vector<float> resized(static_cast<size_t>(input_size) * input_size);
  for (int i = 0; i < n; ++i) {
    int z = static_cast<int>(std::floor((i + offset) * stride));
    z = std::min(z_extent - 1, std::max(0, z));
    st.source_indices[static_cast<size_t>(i)] = z;
    const int16_t* src = cropped.voxels.data() + cropped.index(z, 0, 0);
    for (size_t p = 0; p < plane.size(); ++p) plane[p] = static_cast<float>(src[p]);
    resample_bilinear(plane.data(), h, w, resized.data(), input_size, input_size);
    float* dst = st.slice(i);
    for (size_t p = 0; p < resized.size(); ++p) dst[p] = normalize_hu(resized[p]);
  }
  return st;
}

// Rotation about the slice center by angle radians, bilinear, out-of-bounds
// fills with -1 (air after normalization).
inline void rotate_slice(float* slice, int size, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double center = (size - 1) / 2.0;
  std::vector<float> out(static_cast<size_t>(size) * size);
  for (int oy = 0; oy < size; ++oy) {
    for (int ox = 0; ox < size; ++ox) {
      // inverse map: rotate the output grid back into the source
      const double dy = oy - center, dx = ox - center;
      double sy = center + dy * c - dx * s;
      double sx = center + dy * s + dx * c;
      // samples a rounding error past the border are on the border
      const double edge = 1e-9;
      if (sy > -edge && sy < 0.0) sy = 0.0;
      if (sx > -edge && sx < 0.0) sx = 0.0;
      if (sy > size - 1 && sy < size - 1 + edge) sy = size - 1;
      if (sx > size - 1 && sx < size - 1 + edge) sx = size - 1;
      float v = -1.0f;
      if (sy >= 0.0 && sy <= size - 1 && sx >= 0.0 && sx <= size - 1) {
        const int y0 = static_cast<int>(sy);
        const int x0 = static_cast<int>(sx);
        const int y1 = std::min(y0 + 1, size - 1);
        const int x1 = std::min(x0 + 1, size - 1);
        const float wy = static_cast<float>(sy - y0);
        const float wx = static_cast<float>(sx - x0);
        const float top = slice[y0 * size + x0] * (1.0f - wx) + slice[y0 * size + x1] * wx;
        const float bot = slice[y1 * size + x0] * (1.0f - wx) + slice[y1 * size + x1] * wx;
        v = top * (1.0f - wy) + bot * wy;
      }
      out[static_cast<size_t>(oy) * size + ox] = v;
    }
  }
  std::copy(out.begin(), out.end(), slice);
}

inline void mirror_slice(float* slice, int size) {
  for (int y = 0; y < size; ++y) {
    float* row = slice + static_cast<int64_t>(y) * size;
    for (int x = 0; x < size / 2; ++x) std::swap(row[x], row[size - 1 - x]);
  }
}

// Draw order is part of the contract: one mirror coin for the whole stack,
// then one rotation angle (+-45 degrees, uniform) per slice in order.
inline void augment_stack(SliceStack& st, Rng& rng) {
  const bool mirror = rng.coin();
  if (mirror)
    for (int i = 0; i < st.n; ++i) mirror_slice(st.slice(i), st.size);
  const double max_angle = 45.0 * std::numbers::pi / 180.0;
  for (int i = 0; i < st.n; ++i) {
    const double angle = rng.uniform(-max_angle, max_angle);
    rotate_slice(st.slice(i), st.size, angle);
  }
}

inline Tensor<float> to_tensor(const SliceStack& st) {
  Tensor<float> t({st.n, 1, st.size, st.size});
  t.data = st.data;
  return t;
}

}  // namespace scan2num
