#include "semdiff/encoder.hpp"

#include <cmath>
#include <sstream>

#include "semdiff/errors.hpp"

namespace semdiff {

namespace {
constexpr double kCbrMatchTolerance = 1e-9;
}

EncoderConfig EncoderConfig::mnist(std::vector<double> cbr_list) {
  EncoderConfig c;
  c.input_channels = 1;
  c.conv_channels = {8, 16, 32};
  c.batch_norm = false;
  c.cbr_list = std::move(cbr_list);
  return c;
}

EncoderConfig EncoderConfig::cifar10(std::vector<double> cbr_list) {
  EncoderConfig c;
  c.input_channels = 3;
  c.conv_channels = {64, 128, 256, 256};
  c.batch_norm = true;
  c.cbr_list = std::move(cbr_list);
  return c;
}

std::size_t latent_dim(std::size_t input_dim, double cbr) {
  if (!(cbr > 0.0 && cbr < 1.0)) throw InvalidArgument("CBR must lie in (0, 1)");
  return 2 * static_cast<std::size_t>(std::floor(static_cast<double>(input_dim) * cbr));
}

ConvTrunk::ConvTrunk(const EncoderConfig& cfg, Rng& rng) {
  if (cfg.conv_channels.empty()) throw InvalidArgument("encoder needs at least one conv layer");
  const std::size_t layers = cfg.conv_channels.size();
  const std::size_t downsampling = std::min<std::size_t>(layers, 3);
  std::size_t in = cfg.input_channels;
  std::size_t size = cfg.image_size;
  for (std::size_t i = 0; i < layers; ++i) {
    const int stride = i + downsampling >= layers ? 2 : 1;
    convs_.emplace_back(in, cfg.conv_channels[i], 3, stride, 1, rng);
    if (cfg.batch_norm) norms_.emplace_back(cfg.conv_channels[i]);
    strides_.push_back(stride);
    size = (size + 2 - 3) / static_cast<std::size_t>(stride) + 1;
    in = cfg.conv_channels[i];
  }
  out_channels_ = in;
  out_size_ = size;
  feature_dim_ = in * size * size;
}

ag::Var ConvTrunk::operator()(const ag::Var& x, bool training) {
  ag::Var h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = convs_[i](h);
    if (!norms_.empty()) h = norms_[i](h, training);
    h = ag::relu(h);
  }
  return ag::reshape(h, {h.shape()[0], feature_dim_});
}

void ConvTrunk::collect(const std::string& prefix, nn::StateRefs& refs) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(prefix + ".conv" + std::to_string(i), refs);
    if (!norms_.empty()) norms_[i].collect(prefix + ".bn" + std::to_string(i), refs);
  }
}

SemanticEncoder::SemanticEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg), trunk_(cfg, rng) {
  if (cfg.cbr_list.empty()) throw InvalidArgument("encoder needs at least one CBR head");
  for (double cbr : cfg.cbr_list) {
    const std::size_t dim = latent_dim(cfg.input_dim(), cbr);
    if (dim == 0) throw InvalidArgument("CBR " + std::to_string(cbr) + " yields an empty latent");
    if (dim > cfg.input_dim()) {
      throw InvalidArgument("CBR " + std::to_string(cbr) + " latent does not fit the image");
    }
    if (has_head(cbr)) throw InvalidArgument("duplicate CBR head " + std::to_string(cbr));
    heads_.emplace_back(cbr, nn::Linear(trunk_.feature_dim(), dim, rng, 1.0));
  }
}

bool SemanticEncoder::has_head(double cbr) const {
  for (const auto& [c, head] : heads_) {
    if (std::abs(c - cbr) < kCbrMatchTolerance) return true;
  }
  return false;
}

std::size_t SemanticEncoder::head_index(double cbr) const {
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    if (std::abs(heads_[i].first - cbr) < kCbrMatchTolerance) return i;
  }
  std::ostringstream os;
  os << "no encoder head for CBR " << cbr << "; available:";
  for (const auto& [c, head] : heads_) os << ' ' << c;
  throw InvalidArgument(os.str());
}

std::vector<double> SemanticEncoder::heads() const {
  std::vector<double> out;
  for (const auto& [c, head] : heads_) out.push_back(c);
  return out;
}

ag::Var SemanticEncoder::encode(const ag::Var& x, double cbr, bool training) {
  const std::size_t idx = head_index(cbr);
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != cfg_.input_channels || s[2] != cfg_.image_size ||
      s[3] != cfg_.image_size) {
    throw ShapeError("encoder input " + shape_str(s) + " does not match configured image shape");
  }
  return ag::power_normalize(heads_[idx].second(trunk_(x, training)), cfg_.power);
}

std::vector<SemanticLatent> SemanticEncoder::encode(const Tensor& x, double cbr) {
  const ag::Var z = encode(ag::Var::constant(x), cbr, false);
  const std::size_t n = z.shape()[0], len = z.shape()[1];
  std::vector<SemanticLatent> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].values.assign(z.value().data().begin() + i * len,
                         z.value().data().begin() + (i + 1) * len);
    out[i].cbr = cbr;
    out[i].power = cfg_.power;
  }
  return out;
}

void SemanticEncoder::collect(const std::string& prefix, nn::StateRefs& refs) {
  trunk_.collect(prefix + ".trunk", refs);
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    heads_[i].second.collect(prefix + ".head" + std::to_string(i), refs);
  }
}

ConditionTensor pad_and_reshape(const SemanticLatent& latent, const Shape& target_shape) {
  return pad_and_reshape(std::span<const SemanticLatent>(&latent, 1), target_shape);
}

ConditionTensor pad_and_reshape(std::span<const SemanticLatent> latents, const Shape& target_shape) {
  if (target_shape.size() != 3) throw ShapeError("target shape must be (C, H, W)");
  if (latents.empty()) throw ShapeError("pad_and_reshape of an empty batch");
  const std::size_t per = shape_numel(target_shape);
  const std::size_t len = latents.front().values.size();
  if (len > per) {
    throw ShapeError("latent length " + std::to_string(len) + " exceeds target size " +
                     std::to_string(per));
  }
  ConditionTensor c;
  c.data = Tensor({latents.size(), target_shape[0], target_shape[1], target_shape[2]});
  c.mask = Tensor(target_shape);
  c.source_len = len;
  for (std::size_t j = 0; j < len; ++j) c.mask[j] = 1.0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    if (latents[i].values.size() != len) throw ShapeError("latents in a batch differ in length");
    std::copy(latents[i].values.begin(), latents[i].values.end(), c.data.data().begin() + i * per);
  }
  return c;
}

std::vector<double> extract_latent(const ConditionTensor& cond, std::size_t row) {
  const std::size_t per = cond.data.row_size();
  if (row >= cond.data.dim(0)) throw ShapeError("extract_latent row out of range");
  const auto begin = cond.data.data().begin() + row * per;
  return std::vector<double>(begin, begin + cond.source_len);
}

double adaptive_head_select(std::span<const double> cbr_list, Rng& epoch_rng) {
  if (cbr_list.empty()) throw InvalidArgument("adaptive CBR list is empty");
  const auto i = epoch_rng.uniform_int(0, static_cast<std::int64_t>(cbr_list.size()) - 1);
  return cbr_list[static_cast<std::size_t>(i)];
}

}  // namespace semdiff
