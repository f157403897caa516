#include "smrnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "smrnet/common.hpp"

namespace smrnet {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'R', 'N'};
constexpr uint32_t kVersion = 1;

template <class I>
void put_le(std::string& out, I v) {
  for (size_t i = 0; i < sizeof(I); ++i)
    out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class I>
I get_le(const std::string& in, size_t& pos) {
  if (pos + sizeof(I) > in.size()) throw CheckpointError("checkpoint: truncated file");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(I); ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(I);
  return static_cast<I>(v);
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, Model& model) {
  std::string payload;
  const std::string cfg_text = cfg.to_text();
  put_le<uint64_t>(payload, cfg_text.size());
  payload.append(cfg_text);

  uint64_t count = 0;
  model.visit([&](const std::string&, Tensor&, ParamKind) { ++count; });
  put_le<uint64_t>(payload, count);

  model.visit([&](const std::string& name, Tensor& t, ParamKind kind) {
    put_le<uint16_t>(payload, static_cast<uint16_t>(name.size()));
    payload.append(name);
    payload.push_back(kind == ParamKind::trainable ? '\0' : '\1');
    payload.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_le<int64_t>(payload, t.dim(i));
    const size_t bytes = t.data().size() * sizeof(float);
    const size_t at = payload.size();
    payload.resize(at + bytes);
    std::memcpy(payload.data() + at, t.data().data(), bytes);
  });

  std::string out;
  out.append(kMagic, 4);
  put_le<uint32_t>(out, kVersion);
  out.append(payload);
  put_le<uint64_t>(out, fnv1a64(payload.data(), payload.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: short write to " + path);
}

LoadedModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  size_t pos = 4;
  const uint32_t version = get_le<uint32_t>(bytes, pos);
  if (version != kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));

  const size_t payload_start = pos;
  if (bytes.size() < payload_start + 8) throw CheckpointError("checkpoint: truncated file");
  const size_t payload_len = bytes.size() - payload_start - 8;
  size_t tail = payload_start + payload_len;
  const uint64_t stored = get_le<uint64_t>(bytes, tail);
  const uint64_t computed = fnv1a64(bytes.data() + payload_start, payload_len);
  if (stored != computed)
    throw CheckpointError("checkpoint: checksum mismatch (corrupted payload) in " + path);

  const uint64_t cfg_len = get_le<uint64_t>(bytes, pos);
  if (pos + cfg_len > bytes.size()) throw CheckpointError("checkpoint: truncated config");
  const std::string cfg_text = bytes.substr(pos, cfg_len);
  pos += cfg_len;

  RunConfig cfg;
  try {
    cfg = RunConfig::from_text(cfg_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: embedded config invalid: ") + e.what());
  }

  struct Entry {
    Shape shape;
    std::vector<float> data;
  };
  std::map<std::string, Entry> table;
  const uint64_t count = get_le<uint64_t>(bytes, pos);
  for (uint64_t i = 0; i < count; ++i) {
    const uint16_t name_len = get_le<uint16_t>(bytes, pos);
    if (pos + name_len > bytes.size()) throw CheckpointError("checkpoint: truncated name");
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    if (pos + 2 > bytes.size()) throw CheckpointError("checkpoint: truncated entry");
    ++pos;  // kind byte, informational
    const int ndim = static_cast<unsigned char>(bytes[pos++]);
    Entry e;
    int64_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      e.shape.push_back(get_le<int64_t>(bytes, pos));
      numel *= e.shape.back();
    }
    if (numel < 1 || pos + static_cast<size_t>(numel) * 4 > bytes.size())
      throw CheckpointError("checkpoint: truncated tensor data");
    e.data.resize(static_cast<size_t>(numel));
    std::memcpy(e.data.data(), bytes.data() + pos, static_cast<size_t>(numel) * 4);
    pos += static_cast<size_t>(numel) * 4;
    table.emplace(std::move(name), std::move(e));
  }

  LoadedModel out{cfg, Model(cfg.model)};
  size_t restored = 0;
  out.model.visit([&](const std::string& name, Tensor& t, ParamKind) {
    auto it = table.find(name);
    if (it == table.end())
      throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape != t.shape())
      throw CheckpointError("checkpoint: shape mismatch for '" + name + "'");
    t.data() = it->second.data;
    ++restored;
  });
  if (restored != table.size())
    throw CheckpointError("checkpoint: table has " + std::to_string(table.size()) +
                          " tensors, model expects " + std::to_string(restored));
  return out;
}

}  // namespace smrnet
