#include "semdiff/denoiser.hpp"

#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff {

void DenoiserConfig::validate() const {
  if (image_channels == 0 || base_dim == 0) throw InvalidArgument("denoiser widths must be positive");
  if (base_dim % 2 != 0) throw InvalidArgument("denoiser base_dim must be even");
  if (dim_mults.empty()) throw InvalidArgument("denoiser needs at least one stage");
  if (blocks_per_stage == 0) throw InvalidArgument("denoiser needs at least one block per stage");
  const std::size_t factor = std::size_t{1} << (dim_mults.size() - 1);
  if (image_size % factor != 0) {
    throw InvalidArgument("image size " + std::to_string(image_size) +
                          " not divisible by 2^(stages-1) = " + std::to_string(factor));
  }
  for (auto m : dim_mults) {
    if (m == 0 || (base_dim * m) % static_cast<std::size_t>(groups) != 0) {
      throw InvalidArgument("stage width incompatible with group count");
    }
  }
}

std::vector<double> sinusoidal_time_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw InvalidArgument("time embedding width must be even");
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    const double freq = std::exp(-std::log(10000.0) * exponent);
    out[2 * i] = std::sin(t * freq);
    out[2 * i + 1] = std::cos(t * freq);
  }
  return out;
}

ResBlock::ResBlock(std::size_t in, std::size_t out, std::size_t time_dim, int groups, Rng& rng)
    : conv1_(in, out, 3, 1, 1, rng),
      conv2_(out, out, 3, 1, 1, rng),
      norm1_(out, groups),
      norm2_(out, groups),
      time_proj_(time_dim, out, rng, 1.0),
      has_skip_(in != out) {
  if (has_skip_) skip_ = nn::Conv2d(in, out, 1, 1, 0, rng, 1.0);
}

ag::Var ResBlock::operator()(const ag::Var& x, const ag::Var& time_act) const {
  ag::Var h = ag::gelu(norm1_(conv1_(x)));
  h = ag::add_channel_bias(h, time_proj_(time_act));
  h = ag::gelu(norm2_(conv2_(h)));
  return ag::add(h, has_skip_ ? skip_(x) : x);
}

void ResBlock::collect(const std::string& prefix, nn::StateRefs& refs) const {
  conv1_.collect(prefix + ".conv1", refs);
  norm1_.collect(prefix + ".norm1", refs);
  time_proj_.collect(prefix + ".time", refs);
  conv2_.collect(prefix + ".conv2", refs);
  norm2_.collect(prefix + ".norm2", refs);
  if (has_skip_) skip_.collect(prefix + ".skip", refs);
}

LinearAttentionBlock::LinearAttentionBlock(std::size_t channels, int groups, Rng& rng)
    : norm_(channels, groups),
      to_q_(channels, channels, 1, 1, 0, rng, 1.0),
      to_k_(channels, channels, 1, 1, 0, rng, 1.0),
      to_v_(channels, channels, 1, 1, 0, rng, 1.0),
      to_out_(channels, channels, 1, 1, 0, rng, 1.0) {}

ag::Var LinearAttentionBlock::operator()(const ag::Var& x) const {
  const Shape s = x.shape();
  const Shape flat{s[0], s[1], s[2] * s[3]};
  const ag::Var h = norm_(x);
  const ag::Var a = ag::linear_attention(ag::reshape(to_q_(h), flat), ag::reshape(to_k_(h), flat),
                                         ag::reshape(to_v_(h), flat));
  return ag::add(x, to_out_(ag::reshape(a, s)));
}

void LinearAttentionBlock::collect(const std::string& prefix, nn::StateRefs& refs) const {
  norm_.collect(prefix + ".norm", refs);
  to_q_.collect(prefix + ".q", refs);
  to_k_.collect(prefix + ".k", refs);
  to_v_.collect(prefix + ".v", refs);
  to_out_.collect(prefix + ".out", refs);
}

UNetDenoiser::UNetDenoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t base = cfg_.base_dim, tdim = cfg_.time_dim();
  const std::size_t stages = cfg_.dim_mults.size();
  const int groups = cfg_.groups;

  init_conv_ = nn::Conv2d(cfg_.in_channels(), base, 3, 1, 1, rng, 1.0);
  time_fc1_ = nn::Linear(base, tdim, rng, 1.0);
  time_fc2_ = nn::Linear(tdim, tdim, rng, 1.0);

  std::vector<std::size_t> widths;
  for (auto m : cfg_.dim_mults) widths.push_back(base * m);

  std::size_t cur = base;
  for (std::size_t i = 0; i < stages; ++i) {
    Stage st;
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      st.blocks.emplace_back(cur, widths[i], tdim, groups, rng);
      cur = widths[i];
    }
    if (cfg_.attention) st.attention.emplace_back(cur, groups, rng);
    if (i + 1 < stages) {
      st.resample = nn::Conv2d(cur, cur, 4, 2, 1, rng);
      st.has_resample = true;
    }
    down_.push_back(std::move(st));
  }

  mid1_ = ResBlock(cur, cur, tdim, groups, rng);
  if (cfg_.attention) mid_attention_.emplace_back(cur, groups, rng);
  mid2_ = ResBlock(cur, cur, tdim, groups, rng);

  for (std::size_t k = 0; k < stages; ++k) {
    const std::size_t i = stages - 1 - k;
    Stage st;
    for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
      const std::size_t in = b == 0 ? cur + widths[i] : widths[i];
      st.blocks.emplace_back(in, widths[i], tdim, groups, rng);
    }
    cur = widths[i];
    if (cfg_.attention) st.attention.emplace_back(cur, groups, rng);
    if (i > 0) {
      st.resample = nn::Conv2d(cur, widths[i - 1], 3, 1, 1, rng);
      st.has_resample = true;
      cur = widths[i - 1];
    }
    up_.push_back(std::move(st));
  }

  final_block_ = ResBlock(cur, base, tdim, groups, rng);
  final_conv_ = nn::Conv2d(base, cfg_.out_channels(), 1, 1, 0, rng);
  final_conv_.weight.mutable_value().fill(0.0);
}

ag::Var UNetDenoiser::forward(const ag::Var& x_t, const ag::Var& cond,
                              std::span<const std::size_t> steps) const {
  const auto& s = x_t.shape();
  if (s.size() != 4 || s[1] != cfg_.image_channels || s[2] != cfg_.image_size ||
      s[3] != cfg_.image_size) {
    throw ShapeError("denoiser input " + shape_str(s) + " does not match configuration");
  }
  if (cond.shape() != s) throw ShapeError("condition shape " + shape_str(cond.shape()) + " != " + shape_str(s));
  if (steps.size() != s[0]) throw ShapeError("need one timestep per sample");

  Tensor emb({s[0], cfg_.base_dim});
  for (std::size_t i = 0; i < s[0]; ++i) {
    const auto e = sinusoidal_time_embedding(static_cast<double>(steps[i]), cfg_.base_dim);
    std::copy(e.begin(), e.end(), emb.data().begin() + i * cfg_.base_dim);
  }
  const ag::Var time = time_fc2_(ag::gelu(time_fc1_(ag::Var::constant(std::move(emb)))));
  const ag::Var time_act = ag::gelu(time);

  ag::Var h = init_conv_(ag::concat_channels(x_t, cond));
  std::vector<ag::Var> skips;
  for (const auto& st : down_) {
    for (const auto& b : st.blocks) h = b(h, time_act);
    for (const auto& a : st.attention) h = a(h);
    skips.push_back(h);
    if (st.has_resample) h = st.resample(h);
  }
  h = mid1_(h, time_act);
  for (const auto& a : mid_attention_) h = a(h);
  h = mid2_(h, time_act);
  for (const auto& st : up_) {
    h = ag::concat_channels(h, skips.back());
    skips.pop_back();
    for (const auto& b : st.blocks) h = b(h, time_act);
    for (const auto& a : st.attention) h = a(h);
    if (st.has_resample) h = st.resample(ag::upsample_nearest2x(h));
  }
  return final_conv_(final_block_(h, time_act));
}

Tensor UNetDenoiser::predict_x0(const Tensor& x_t, const Tensor& cond, std::size_t t) const {
  const std::vector<std::size_t> steps(x_t.dim(0), t);
  return forward(ag::Var::constant(x_t), ag::Var::constant(cond), steps).value();
}

void UNetDenoiser::collect(const std::string& prefix, nn::StateRefs& refs) const {
  init_conv_.collect(prefix + ".init", refs);
  time_fc1_.collect(prefix + ".time1", refs);
  time_fc2_.collect(prefix + ".time2", refs);
  for (std::size_t i = 0; i < down_.size(); ++i) {
    const std::string p = prefix + ".down" + std::to_string(i);
    for (std::size_t b = 0; b < down_[i].blocks.size(); ++b) down_[i].blocks[b].collect(p + ".block" + std::to_string(b), refs);
    for (const auto& a : down_[i].attention) a.collect(p + ".attn", refs);
    if (down_[i].has_resample) down_[i].resample.collect(p + ".downsample", refs);
  }
  mid1_.collect(prefix + ".mid1", refs);
  for (const auto& a : mid_attention_) a.collect(prefix + ".mid_attn", refs);
  mid2_.collect(prefix + ".mid2", refs);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const std::string p = prefix + ".up" + std::to_string(i);
    for (std::size_t b = 0; b < up_[i].blocks.size(); ++b) up_[i].blocks[b].collect(p + ".block" + std::to_string(b), refs);
    for (const auto& a : up_[i].attention) a.collect(p + ".attn", refs);
    if (up_[i].has_resample) up_[i].resample.collect(p + ".upsample", refs);
  }
  final_block_.collect(prefix + ".final_block", refs);
  final_conv_.collect(prefix + ".final_conv", refs);
}

}  // namespace semdiff
