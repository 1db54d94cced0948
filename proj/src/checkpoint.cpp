#include "parformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as host doubles and declared little-endian");

namespace parformer {

namespace {

constexpr char kMagic[] = "parformer-ckpt-v1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

std::string config_to_json(const NetworkConfig& cfg) {
  nlohmann::json j;
  j["task"] = to_string(cfg.task);
  j["variant"] = to_string(cfg.variant);
  j["norm_variant"] = to_string(cfg.norm_variant);
  j["scheme"] = to_string(cfg.scheme);
  j["depth"] = cfg.depth;
  j["independent_layers"] = cfg.independent_layers;
  j["dim"] = cfg.dim;
  j["heads"] = cfg.heads;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["ln_eps"] = cfg.ln_eps;
  j["dropout_p"] = cfg.dropout_p;
  j["stoch_depth_p"] = cfg.stoch_depth_p;
  j["image_size"] = cfg.image_size;
  j["patch_size"] = cfg.patch_size;
  j["channels"] = cfg.channels;
  j["num_classes"] = cfg.num_classes;
  j["vocab_size"] = cfg.vocab_size;
  j["context"] = cfg.context;
  return j.dump();
}

NetworkConfig config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  NetworkConfig cfg;
  cfg.task = task_from_string(j.at("task").get<std::string>());
  cfg.variant = block_variant_from_string(j.at("variant").get<std::string>());
  cfg.norm_variant = norm_variant_from_string(j.at("norm_variant").get<std::string>());
  cfg.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  cfg.depth = j.at("depth").get<int>();
  cfg.independent_layers = j.at("independent_layers").get<int>();
  cfg.dim = j.at("dim").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
  cfg.ln_eps = j.at("ln_eps").get<double>();
  cfg.dropout_p = j.at("dropout_p").get<double>();
  cfg.stoch_depth_p = j.at("stoch_depth_p").get<double>();
  cfg.image_size = j.at("image_size").get<int>();
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.channels = j.at("channels").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.context = j.at("context").get<int>();
  return cfg;
}

void save_checkpoint(const std::string& path, const Network& net) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, static_cast<std::streamsize>(kMagicLen));

  const std::string cfg_json = config_to_json(net.cfg);
  write_u32(os, static_cast<uint32_t>(cfg_json.size()));
  os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));

  const auto params = net.parameters();
  write_u32(os, static_cast<uint32_t>(params.size()));
  for (const NamedParam& p : params) {
    write_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(os, static_cast<uint32_t>(p.tensor.rank()));
    for (int i = 0; i < p.tensor.rank(); ++i) write_u64(os, static_cast<uint64_t>(p.tensor.dim(i)));
    const auto& data = p.tensor.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[kMagicLen];
  is.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);

  const uint32_t cfg_len = read_u32(is);
  std::string cfg_json(cfg_len, '\0');
  is.read(cfg_json.data(), cfg_len);
  if (!is) throw std::runtime_error("checkpoint truncated");
  const NetworkConfig cfg = config_from_json(cfg_json);

  Network net = build_network(cfg, 0);
  std::unordered_map<std::string, Tensor> by_name;
  for (const NamedParam& p : net.parameters()) by_name.emplace(p.name, p.tensor);

  const uint32_t count = read_u32(is);
  if (count != by_name.size())
    throw std::runtime_error("checkpoint parameter count does not match its config");
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(read_u64(is));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint has unknown tensor: " + name);
    if (it->second.shape() != shape)
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": stored " +
                               shape_str(shape) + ", built " + shape_str(it->second.shape()));
    auto& data = it->second.data();
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint truncated in tensor " + name);
  }
  return net;
}

}  // namespace parformer
