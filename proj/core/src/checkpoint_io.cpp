#include "mtplab/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mtplab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace mtplab {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'P', 'L'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated container: " + path);
  return v;
}

}  // namespace

void write_container(const std::string& path, const nlohmann::json& header,
                     const std::map<std::string, Tensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  write_pod<uint32_t>(out, kContainerVersion);
  const std::string hdr = header.dump();  // object keys are sorted (std::map)
  write_pod<uint64_t>(out, hdr.size());
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  write_pod<uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {  // std::map iterates name-sorted
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (int64_t e : t.shape()) write_pod<int64_t>(out, e);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.data().size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a MTPL container: " + path);
  }
  const uint32_t version = read_pod<uint32_t>(in, path);
  if (version != kContainerVersion) {
    throw IoError("unsupported container version " + std::to_string(version));
  }
  const uint64_t hdr_len = read_pod<uint64_t>(in, path);
  std::string hdr(hdr_len, '\0');
  in.read(hdr.data(), static_cast<std::streamsize>(hdr_len));
  if (!in) throw IoError("truncated header: " + path);
  Container c;
  c.header = nlohmann::json::parse(hdr);
  const uint64_t n = read_pod<uint64_t>(in, path);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t ndim = read_pod<uint32_t>(in, path);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_pod<int64_t>(in, path);
    std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw IoError("truncated tensor " + name + " in " + path);
    c.tensors.emplace(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return c;
}

std::vector<std::string> expected_param_names(const ModelConfig& config) {
  std::vector<std::string> names = {"embed.tok", "embed.pos", "unembed.norm.g",
                                    "unembed.norm.b", "unembed.w"};
  for (int64_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (const std::string& n : block_param_names(prefix)) names.push_back(n);
    if (config.adapter_rank > 0) {
      for (const char* p : {"q", "k", "v"}) {
        names.push_back(prefix + "attn." + p + ".lora_a");
        names.push_back(prefix + "attn." + p + ".lora_b");
      }
    }
  }
  return names;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header;
  header["kind"] = "base";
  header["config"] = ckpt.config;
  header["frozen"] = std::vector<std::string>(ckpt.params.frozen.begin(),
                                              ckpt.params.frozen.end());
  header["meta"] = ckpt.meta;
  write_container(path, header, ckpt.params.tensors);
}

Checkpoint load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "base") {
    throw IoError("not a base checkpoint: " + path);
  }
  Checkpoint ckpt;
  ckpt.config = c.header.at("config").get<ModelConfig>();
  ckpt.config.validate();
  ckpt.meta = c.header.value("meta", nlohmann::json::object());
  for (auto& [name, t] : c.tensors) {
    t.set_requires_grad(true);
    ckpt.params.tensors.emplace(name, std::move(t));
  }
  for (const auto& n : c.header.value("frozen", std::vector<std::string>{})) {
    ckpt.params.frozen.insert(n);
  }
  // Presence check: every config-implied parameter exactly once.
  const auto expected = expected_param_names(ckpt.config);
  if (expected.size() != ckpt.params.tensors.size()) {
    throw IoError("checkpoint parameter count mismatch in " + path);
  }
  for (const std::string& n : expected) {
    if (!ckpt.params.tensors.count(n)) {
      throw IoError("checkpoint missing parameter " + n + " in " + path);
    }
  }
  return ckpt;
}

}  // namespace mtplab
