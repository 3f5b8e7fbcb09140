#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "nbscreen/set_transformer.hpp"

namespace nbscreen::tf {

namespace {

constexpr char kMagic[4] = {'N', 'B', 'T', 'F'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void save_weights(const TransformerWeights& w, const std::string& path) {
  nlohmann::ordered_json header;
  header["config"] = {{"d", w.config.d},
                      {"h", w.config.h},
                      {"L", w.config.L},
                      {"dropout", w.config.dropout},
                      {"ff_mult", w.config.ff_mult},
                      {"cross_blocks", w.config.cross_blocks}};
  header["tensors"] = nlohmann::ordered_json::array();

  std::string payload;
  w.visit([&](const std::string& name, const Tensor& t) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t.shape;
    entry["dtype"] = "f32";
    entry["offset"] = payload.size();
    header["tensors"].push_back(entry);
    for (double x : t.v) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(x));
      put_u32(payload, bits);
    }
  });

  const std::string header_text = header.dump();
  std::string blob;
  blob.append(kMagic, 4);
  put_u32(blob, kFormatVersion);
  put_u32(blob, static_cast<std::uint32_t>(header_text.size()));
  blob += header_text;
  blob += payload;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("weights: cannot open " + path + " for writing");
  }
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) {
    throw std::runtime_error("weights: short write to " + path);
  }
}

TransformerWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("weights: cannot open " + path);
  }
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (blob.size() < 12) {
    throw std::runtime_error("weights: file truncated (no header)");
  }
  if (std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw std::runtime_error("weights: bad magic, not an NBTF file");
  }
  const std::uint32_t version = get_u32(blob.data() + 4);
  if (version != kFormatVersion) {
    throw std::runtime_error("weights: unsupported format version " +
                             std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(blob.data() + 8);
  if (blob.size() < 12 + static_cast<std::size_t>(header_len)) {
    throw std::runtime_error("weights: file truncated (header)");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.begin() + 12,
                                   blob.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("weights: bad header JSON: ") + e.what());
  }

  ModelConfig cfg;
  const auto& jc = header.at("config");
  cfg.d = jc.at("d").get<int>();
  cfg.h = jc.at("h").get<int>();
  cfg.L = jc.at("L").get<int>();
  cfg.dropout = jc.at("dropout").get<double>();
  cfg.ff_mult = jc.at("ff_mult").get<int>();
  cfg.cross_blocks = jc.at("cross_blocks").get<int>();
  cfg.validate();

  TransformerWeights w = zeros_like(TransformerWeights{.config = cfg});
  const unsigned char* payload = blob.data() + 12 + header_len;
  const std::size_t payload_size = blob.size() - 12 - header_len;

  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  w.visit([&](const std::string& name, Tensor& t) {
    if (index >= tensors.size()) {
      throw std::runtime_error("weights: tensor index shorter than expected");
    }
    const auto& entry = tensors.at(index++);
    if (entry.at("name").get<std::string>() != name) {
      throw std::runtime_error("weights: unexpected tensor order at " + name);
    }
    if (entry.at("dtype").get<std::string>() != "f32") {
      throw std::runtime_error("weights: unsupported dtype for " + name);
    }
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != t.shape) {
      throw std::runtime_error("weights: shape mismatch for " + name);
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * 4;
    if (offset + bytes > payload_size) {
      throw std::runtime_error("weights: payload truncated at " + name);
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const std::uint32_t bits = get_u32(payload + offset + 4 * i);
      t.v[static_cast<std::size_t>(i)] =
          static_cast<double>(std::bit_cast<float>(bits));
    }
  });
  if (index != tensors.size()) {
    throw std::runtime_error("weights: tensor index longer than expected");
  }
  return w;
}

}  // namespace nbscreen::tf
