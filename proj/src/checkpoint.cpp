#include "dfkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dfkd/config.hpp"
#include "dfkd/data.hpp"

namespace dfkd::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

const Section* Checkpoint::find(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

void write(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["meta"] = ckpt.meta;
  header["sections"] = json::array();
  for (const auto& s : ckpt.sections) header["sections"].push_back({{"name", s.name}, {"count", s.values.size()}});
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& s : ckpt.sections) {
      out.write(reinterpret_cast<const char*>(s.values.data()),
                static_cast<std::streamsize>(s.values.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data::DataError(path.string() + ": cannot open checkpoint");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw data::DataError(path.string() + ": not a checkpoint (bad magic)");
  }
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || version != kVersion) throw data::DataError(path.string() + ": unsupported checkpoint version");
  if (len > (1ULL << 30)) throw data::DataError(path.string() + ": implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw data::DataError(path.string() + ": truncated header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception&) {
    throw data::DataError(path.string() + ": corrupt checkpoint header");
  }
  Checkpoint ckpt;
  ckpt.meta = header.at("meta");
  for (const auto& s : header.at("sections")) {
    Section sec;
    sec.name = s.at("name").get<std::string>();
    sec.values.resize(s.at("count").get<std::size_t>());
    if (!in.read(reinterpret_cast<char*>(sec.values.data()),
                 static_cast<std::streamsize>(sec.values.size() * sizeof(double)))) {
      throw data::DataError(path.string() + ": truncated section " + sec.name);
    }
    ckpt.sections.push_back(std::move(sec));
  }
  return ckpt;
}

namespace {

json layout_json(const ParamLayout& layout) {
  json a = json::array();
  for (const auto& s : layout.slots()) a.push_back({{"name", s.name}, {"shape", s.shape}});
  return a;
}

}  // namespace

void add_network(Checkpoint& ckpt, const std::string& prefix, const nn::Network& net) {
  ckpt.meta[prefix] = {{"spec", to_json(net.spec())}, {"layout", layout_json(net.params().layout())}};
  ckpt.add(prefix + ".params", net.params().flatten());
  for (const auto& b : net.buffers()) ckpt.add(prefix + ".buffer." + b.name, b.values);
}

void load_network(const Checkpoint& ckpt, const std::string& prefix, nn::Network& net) {
  if (!ckpt.meta.contains(prefix)) throw std::invalid_argument("checkpoint has no network '" + prefix + "'");
  const json& m = ckpt.meta.at(prefix);
  if (m.at("spec") != to_json(net.spec())) {
    throw std::invalid_argument("checkpoint spec for '" + prefix + "' does not match: stored " + m.at("spec").dump() +
                                ", expected " + to_json(net.spec()).dump());
  }
  if (m.at("layout") != layout_json(net.params().layout())) {
    throw std::invalid_argument("checkpoint layout for '" + prefix + "' does not match the network");
  }
  const Section* p = ckpt.find(prefix + ".params");
  if (!p || p->values.size() != net.params().numel()) {
    throw std::invalid_argument("checkpoint parameters for '" + prefix + "' missing or wrong size");
  }
  net.params().assign(p->values);
  std::vector<nn::NamedBuffer> buffers = net.buffers();
  for (auto& b : buffers) {
    const Section* s = ckpt.find(prefix + ".buffer." + b.name);
    if (!s) throw std::invalid_argument("checkpoint missing buffer " + prefix + "." + b.name);
    b.values = s->values;
  }
  net.load_buffers(buffers);
}

}  // namespace dfkd::checkpoint
