#pragma once

#include <span>
#include <vector>

#include "semdiff/tensor.hpp"

namespace semdiff {

// Reported PSNR for identical images.
inline constexpr double kPsnrCap = 100.0;

// 10 log10(max_val^2 / MSE) over all elements; kPsnrCap when MSE == 0.
double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Mean windowed SSIM with an 11x11 Gaussian window (sigma 1.5) over valid
// window positions, averaged over channels. Accepts (H, W), (C, H, W) or
// (1, C, H, W). Throws ShapeError if the image is smaller than the window.
double ssim(const Tensor& a, const Tensor& b, double max_val = 1.0);

// Maps [-1, 1] images to [0, 1].
Tensor to_unit_range(const Tensor& x);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};
MeanStd mean_std(std::span<const double> values);

struct MetricReport {
  std::vector<double> psnr_db;
  std::vector<double> ssim;

  MeanStd psnr_summary() const { return mean_std(psnr_db); }
  MeanStd ssim_summary() const { return mean_std(ssim); }
  std::size_t samples() const noexcept { return psnr_db.size(); }
  void append(const MetricReport& other);
};

// Per-sample PSNR/SSIM of (N, C, H, W) batches given in [-1, 1]; metrics are
// computed after mapping to [0, 1] with max_val = 1.
MetricReport evaluate_batch(const Tensor& reference, const Tensor& reconstruction);

}  // namespace semdiff
