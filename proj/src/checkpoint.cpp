#include "specfuse/checkpoint.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace specfuse {

namespace {

constexpr char kMagic[] = "SPECFUSE1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

using json = nlohmann::json;

json manifest_to_json(const PromptManifest& m) {
  json classes = json::array();
  for (const auto& pc : m.classes) {
    classes.push_back({{"name", pc.name},
                       {"self_categorical", pc.self_categorical},
                       {"differentiated", pc.differentiated}});
  }
  return json{{"classes", classes}};
}

PromptManifest manifest_from_json(const json& j) {
  PromptManifest m;
  for (const auto& c : j.at("classes")) {
    PromptClass pc;
    pc.name = c.at("name").get<std::string>();
    pc.self_categorical = c.at("self_categorical").get<std::string>();
    auto d = c.at("differentiated");
    for (size_t i = 0; i < 3; ++i) pc.differentiated[i] = d.at(i).get<std::string>();
    m.classes.push_back(std::move(pc));
  }
  validate_manifest(m);
  return m;
}

}  // namespace

void save_checkpoint(const FusModel& model, const std::string& path) {
  const ParamStore& ps = model.params();
  json header;
  header["format"] = 1;
  header["config"] = model.config().to_map();
  header["manifest"] = manifest_to_json(model.manifest());

  json params = json::array();
  int64_t total = 0;
  for (const auto& [name, p] : ps.params()) {
    params.push_back({{"name", name}, {"shape", p->shape}});
    total += p->size();
  }
  header["params"] = params;

  json buffers = json::array();
  for (const auto& [name, b] : ps.buffers()) {
    buffers.push_back({{"name", name}, {"size", (int64_t)b.size()}});
    total += b.size();
  }
  header["buffers"] = buffers;

  std::string hdr = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, (std::streamsize)kMagicLen);
  uint64_t hlen = hdr.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hdr.data(), (std::streamsize)hdr.size());
  for (const auto& [name, p] : ps.params()) {
    (void)name;
    out.write(reinterpret_cast<const char*>(p->val.data()),
              (std::streamsize)(p->size() * sizeof(double)));
  }
  for (const auto& [name, b] : ps.buffers()) {
    (void)name;
    out.write(reinterpret_cast<const char*>(b.data()),
              (std::streamsize)(b.size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

void load_checkpoint(FusModel& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[kMagicLen];
  in.read(magic, (std::streamsize)kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || hlen == 0 || hlen > (1u << 26))
    throw DataError("corrupt checkpoint header: " + path);
  std::string hdr((size_t)hlen, '\0');
  in.read(hdr.data(), (std::streamsize)hlen);
  if (!in) throw DataError("truncated checkpoint header: " + path);

  json header;
  try {
    header = json::parse(hdr);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  RunConfig cfg = RunConfig::from_map(header.at("config").get<KvMap>());
  PromptManifest manifest = manifest_from_json(header.at("manifest"));
  Rng rng(cfg.seed);
  model.init(cfg, manifest, rng);

  ParamStore& ps = model.params();
  for (const auto& e : header.at("params")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    if (!ps.has(name)) throw DataError("checkpoint has unknown parameter: " + name);
    Var p = ps.get(name);
    if (p->shape != shape) throw DataError("checkpoint shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(p->val.data()),
            (std::streamsize)(p->size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint payload at " + name);
  }
  for (const auto& e : header.at("buffers")) {
    std::string name = e.at("name").get<std::string>();
    int64_t size = e.at("size").get<int64_t>();
    auto it = ps.buffers().find(name);
    if (it == ps.buffers().end())
      throw DataError("checkpoint has unknown buffer: " + name);
    if ((int64_t)it->second.size() != size)
      throw DataError("checkpoint size mismatch for buffer " + name);
    in.read(reinterpret_cast<char*>(it->second.data()),
            (std::streamsize)(size * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint payload at " + name);
  }
}

}  // namespace specfuse
