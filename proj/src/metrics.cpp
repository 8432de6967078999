#include "semdiff/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_1d() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering of an (h, w) plane.
std::vector<double> filter_valid(const double* src, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
  const std::size_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * src[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double max_val) {
  require_same_shape(a, b, "psnr");
  if (!(max_val > 0.0)) throw InvalidArgument("psnr: max_val must be positive");
  if (a.numel() == 0) throw ShapeError("psnr: empty tensors");
  double se = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

double ssim(const Tensor& a, const Tensor& b, double max_val) {
  require_same_shape(a, b, "ssim");
  const Shape& s = a.shape();
  std::size_t c = 1, h = 0, w = 0;
  if (s.size() == 2) {
    h = s[0], w = s[1];
  } else if (s.size() == 3) {
    c = s[0], h = s[1], w = s[2];
  } else if (s.size() == 4 && s[0] == 1) {
    c = s[1], h = s[2], w = s[3];
  } else {
    throw ShapeError("ssim expects (H, W), (C, H, W) or (1, C, H, W), got " + shape_str(s));
  }
  if (h < kWindow || w < kWindow) {
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " is smaller than the 11x11 window");
  }
  const double c1 = (0.01 * max_val) * (0.01 * max_val);
  const double c2 = (0.03 * max_val) * (0.03 * max_val);
  const auto g = gaussian_1d();
  const std::size_t plane = h * w;
  std::vector<double> aa(plane), bb(plane), ab(plane);
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* pa = a.data().data() + ch * plane;
    const double* pb = b.data().data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, g);
    const auto mu_b = filter_valid(pb, h, w, g);
    const auto e_aa = filter_valid(aa.data(), h, w, g);
    const auto e_bb = filter_valid(bb.data(), h, w, g);
    const auto e_ab = filter_valid(ab.data(), h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2));
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(c);
}

Tensor to_unit_range(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::clamp((x[i] + 1.0) * 0.5, 0.0, 1.0);
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - m) * (v - m);
  return {m, std::sqrt(var / static_cast<double>(values.size()))};
}

void MetricReport::append(const MetricReport& other) {
  psnr_db.insert(psnr_db.end(), other.psnr_db.begin(), other.psnr_db.end());
  ssim.insert(ssim.end(), other.ssim.begin(), other.ssim.end());
}

MetricReport evaluate_batch(const Tensor& reference, const Tensor& reconstruction) {
  require_same_shape(reference, reconstruction, "evaluate_batch");
  if (reference.rank() != 4) throw ShapeError("evaluate_batch expects (N, C, H, W)");
  MetricReport report;
  const Tensor ref = to_unit_range(reference);
  const Tensor rec = to_unit_range(reconstruction);
  const Shape single{reference.dim(1), reference.dim(2), reference.dim(3)};
  for (std::size_t n = 0; n < reference.dim(0); ++n) {
    const Tensor a = ref.slice_rows(n, n + 1).reshaped(single);
    const Tensor b = rec.slice_rows(n, n + 1).reshaped(single);
    report.psnr_db.push_back(psnr(a, b, 1.0));
    report.ssim.push_back(ssim(a, b, 1.0));
  }
  return report;
}

}  // namespace semdiff
