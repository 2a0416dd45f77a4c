#include "affect/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <utility>
#include <vector>

#include "affect/errors.hpp"
#include "affect/json_io.hpp"
#include "affect/sha256.hpp"

namespace affect {

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"input_size", cfg.input_size},
                     {"in_channels", cfg.in_channels},
                     {"channels", cfg.channels},
                     {"attention_heads", cfg.attention_heads}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  cfg.input_size = j.at("input_size").get<std::size_t>();
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.channels = j.at("channels").get<std::vector<std::size_t>>();
  cfg.attention_heads = j.at("attention_heads").get<std::size_t>();
}

namespace {

constexpr char kMagic[4] = {'A', 'F', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) {
  out.push_back(v);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name,
                const Tensor& t) {
  put_string(out, name);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.values()) put_f64(out, v);
}

struct Cursor {
  const std::vector<std::uint8_t>& data;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (pos + n > data.size()) {
      throw DataError("truncated checkpoint " + path);
    }
  }
  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s(data.begin() + static_cast<std::ptrdiff_t>(pos),
                  data.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, Model& model) {
  std::vector<std::uint8_t> blob;
  blob.insert(blob.end(), kMagic, kMagic + 4);
  put_u32(blob, kVersion);
  nlohmann::json meta = model.config();
  put_string(blob, meta.dump());

  // Buffer names are marked so a reader can tell them apart without
  // rebuilding a model; loading does not depend on the flag.
  std::vector<std::pair<std::string, const Tensor*>> params;
  for (Parameter* p : model.parameters()) {
    params.emplace_back(p->name, &p->value);
  }
  std::vector<std::pair<std::string, const Tensor*>> buffers;
  for (Buffer* b : model.buffers()) {
    buffers.emplace_back(b->name, &b->value);
  }
  std::vector<std::pair<std::string, const Tensor*>> entries = params;
  entries.insert(entries.end(), buffers.begin(), buffers.end());
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  auto is_buffer = [&buffers](const std::string& name) {
    for (const auto& [bname, tensor] : buffers) {
      if (bname == name) return true;
    }
    return false;
  };

  put_u32(blob, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    put_u8(blob, is_buffer(name) ? 1 : 0);
    put_tensor(blob, name, *tensor);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint " + path + " for writing");
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("short write to checkpoint " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> blob(
      (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Cursor cur{blob, 0, path};

  cur.need(4);
  if (std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw DataError(path + " is not a checkpoint file");
  }
  cur.pos = 4;
  const std::uint32_t version = cur.u32();
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version) + " in " + path);
  }
  CheckpointData data;
  const std::string meta = cur.str();
  try {
    data.config = nlohmann::json::parse(meta).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint metadata in " + path + ": " + e.what());
  }
  const std::uint32_t count = cur.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    cur.u8();  // param/buffer marker, not needed to restore
    const std::string name = cur.str();
    const std::uint32_t rank = cur.u32();
    if (rank > 8) throw DataError("implausible tensor rank in " + path);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = cur.u64();
      if (dim == 0 || dim > (1u << 24)) {
        throw DataError("implausible tensor dimension in " + path);
      }
      shape[d] = static_cast<std::size_t>(dim);
      numel *= shape[d];
      if (numel > (1u << 28)) {
        throw DataError("implausible tensor size in " + path);
      }
    }
    cur.need(numel * 8);
    std::vector<double> values(numel);
    for (std::size_t v = 0; v < numel; ++v) values[v] = cur.f64();
    if (!data.state.emplace(name, Tensor(std::move(shape), std::move(values)))
             .second) {
      throw DataError("duplicate entry '" + name + "' in " + path);
    }
  }
  if (cur.pos != blob.size()) {
    throw DataError("trailing bytes in checkpoint " + path);
  }
  return data;
}

Model load_checkpoint(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  Model model(data.config, /*seed=*/0);  // state overwrites every init draw
  model.load_state(data.state);
  return model;
}

std::string hash_params(const ParamList& params) {
  std::vector<std::pair<std::string, const Tensor*>> entries;
  entries.reserve(params.size());
  for (const Parameter* p : params) entries.emplace_back(p->name, &p->value);
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::uint8_t> blob;
  for (const auto& [name, tensor] : entries) {
    put_tensor(blob, name, *tensor);
  }
  return sha256_hex(blob);
}

}  // namespace affect
