#include "semdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "semdiff/dataset.hpp"
#include "semdiff/errors.hpp"

namespace semdiff {

using nlohmann::json;

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, const json& meta) {
  const nn::StateRefs refs = model.state();
  json tensors = json::array();
  std::size_t offset = 0;
  std::vector<const Tensor*> values;
  auto add = [&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
    values.push_back(&t);
  };
  for (const auto& [name, v] : refs.params) add(name, v.value());
  for (const auto& [name, t] : refs.buffers) add(name, *t);

  const json header{{"version", 1},
                    {"weights", to_string(model.weights_tag())},
                    {"config", to_json(model.config())},
                    {"meta", meta},
                    {"tensors", tensors}};
  const std::string text = header.dump();
  std::string blob(kCheckpointMagic, 8);
  put_u64(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + 8 * offset);
  for (const Tensor* t : values) {
    for (double d : t->data()) put_f64(blob, d);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write checkpoint " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError(DataError::Kind::kIo, "failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 16) throw DataError(DataError::Kind::kTruncated, "checkpoint is truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw DataError(DataError::Kind::kBadMagic, path.string() + " is not a checkpoint");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw DataError(DataError::Kind::kTruncated, "checkpoint header is truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::kFormat, std::string("checkpoint header: ") + e.what());
  }
  const std::uint8_t* payload = bytes.data() + 16 + header_len;
  const std::size_t payload_values = (bytes.size() - 16 - header_len) / 8;

  LoadedCheckpoint out;
  const ExperimentConfig cfg = from_json(header.at("config"));
  out.model = std::make_unique<Model>(cfg, cfg.seed);
  out.meta = header.value("meta", json::object());
  out.model->set_weights_tag(header.value("weights", "live") == "ema" ? WeightsTag::kEma : WeightsTag::kLive);

  nn::StateRefs refs = out.model->state();
  std::vector<std::pair<std::string, Tensor*>> slots;
  for (auto& [name, v] : refs.params) {
    auto var = v;
    slots.emplace_back(name, &var.mutable_value());
  }
  for (auto& [name, t] : refs.buffers) slots.emplace_back(name, t);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != slots.size()) {
    throw DataError(DataError::Kind::kFormat, "checkpoint holds " + std::to_string(tensors.size()) +
                                                  " tensors, model expects " + std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& entry = tensors[i];
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    Tensor& dst = *slots[i].second;
    if (name != slots[i].first || shape != dst.shape()) {
      throw DataError(DataError::Kind::kFormat, "checkpoint tensor " + name + " " + shape_str(shape) +
                                                    " does not match model tensor " + slots[i].first + " " +
                                                    shape_str(dst.shape()));
    }
    if (offset + dst.numel() > payload_values) {
      throw DataError(DataError::Kind::kTruncated, "checkpoint payload is truncated at " + name);
    }
    for (std::size_t k = 0; k < dst.numel(); ++k) dst[k] = get_f64(payload + 8 * (offset + k));
  }
  return out;
}

}  // namespace semdiff
