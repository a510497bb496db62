#include "last/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "last/hash.hpp"
#include "last/network.hpp"

namespace fs = std::filesystem;

namespace last {
namespace {

constexpr char kMagic[8] = {'L', 'A', 'S', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  void bytes(void* out, std::size_t n) {
    if (pos_ + n > n_) throw std::runtime_error("checkpoint truncated");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto len = pod<std::uint32_t>();
    if (pos_ + len > n_) throw std::runtime_error("checkpoint truncated");
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const Tensor<float>& t) {
  w.str(std::string(group_name(t.group)));
  w.str(t.name);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) w.pod<std::int32_t>(d);
  w.pod<std::uint64_t>(t.data.size());
  w.bytes(t.data.data(), t.data.size() * sizeof(float));
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize_payload() const {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kVersion);
  std::ostringstream header;
  header << "phase=" << phase_name(phase) << "\n";
  header << "parent=" << parent_hash << "\n";
  for (const auto& [k, v] : config.to_pairs()) header << k << "=" << v << "\n";
  for (const auto& [k, v] : metadata) header << "meta." << k << "=" << v << "\n";
  w.str(header.str());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params) write_tensor(w, t);
  return std::move(w.buffer());
}

std::string Checkpoint::content_hash() const { return sha256_hex(serialize_payload()); }

std::string Checkpoint::groups_hash(const std::vector<Group>& groups) const {
  Writer w;
  for (const auto& t : params)
    for (Group g : groups)
      if (t.group == g) write_tensor(w, t);
  return sha256_hex(w.buffer());
}

std::string Checkpoint::backbone_hash() const { return groups_hash(trainable_groups(Phase::pretrain)); }
std::string Checkpoint::heads_hash() const { return groups_hash(trainable_groups(Phase::adapt)); }

bool Checkpoint::operator==(const Checkpoint& other) const {
  return serialize_payload() == other.serialize_payload();
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  std::vector<std::uint8_t> bytes = checkpoint.serialize_payload();
  Sha256 h;
  h.update(bytes);
  const auto digest = h.digest();
  bytes.insert(bytes.end(), digest.begin(), digest.end());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 4 + 32 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  const std::size_t payload = bytes.size() - 32;
  Sha256 h;
  h.update(std::span(bytes.data(), payload));
  const auto digest = h.digest();
  if (std::memcmp(digest.data(), bytes.data() + payload, 32) != 0)
    throw std::runtime_error("checkpoint hash mismatch: " + path.string());

  Reader r(bytes.data(), payload);
  char magic[8];
  r.bytes(magic, 8);
  if (r.pod<std::uint32_t>() != kVersion) throw std::runtime_error("unsupported checkpoint version");
  Checkpoint c;
  std::vector<std::pair<std::string, std::string>> model_pairs;
  std::istringstream header(r.str());
  std::string line;
  while (std::getline(header, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "phase") c.phase = parse_phase(value);
    else if (key == "parent") c.parent_hash = value;
    else if (key.starts_with("model.")) model_pairs.emplace_back(key, value);
    else if (key.starts_with("meta.")) c.metadata.emplace_back(key.substr(5), value);
  }
  c.config = ModelConfig::from_pairs(model_pairs);
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const Group g = parse_group(r.str());
    std::string name = r.str();
    std::vector<int> shape(r.pod<std::uint32_t>());
    for (int& d : shape) d = r.pod<std::int32_t>();
    const std::size_t idx = c.params.add(g, name, shape);
    const auto n = r.pod<std::uint64_t>();
    if (n != c.params[idx].data.size()) throw std::runtime_error("checkpoint tensor " + name + " has inconsistent size");
    r.bytes(c.params[idx].data.data(), n * sizeof(float));
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in checkpoint " + path.string());

  if (expected) {
    const ParameterStore<float> layout = Network<float>::make_store(*expected);
    for (const auto& want : layout) {
      auto got = c.params.find(want.group, want.name);
      if (!got)
        throw std::runtime_error("checkpoint group '" + std::string(group_name(want.group)) + "' is missing tensor " +
                                 want.name);
      if (c.params[*got].shape != want.shape)
        throw std::runtime_error("checkpoint group '" + std::string(group_name(want.group)) + "' does not match the model config: tensor " +
                                 want.name + " has shape " + shape_string(c.params[*got].shape) + ", expected " +
                                 shape_string(want.shape));
    }
    if (layout.size() != c.params.size())
      throw std::runtime_error("checkpoint has tensors the model config does not define");
  }
  return c;
}

}  // namespace last
