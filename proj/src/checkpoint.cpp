#include "hstrack/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hstrack {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;
const std::string kMetaPrefix = "__meta.";

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

void put_entry(std::vector<uint8_t>& buf, const std::string& name,
               const Shape& shape, const std::vector<double>& data) {
  put_u32(buf, static_cast<uint32_t>(name.size()));
  buf.insert(buf.end(), name.begin(), name.end());
  put_u32(buf, static_cast<uint32_t>(shape.size()));
  for (int d : shape) put_u32(buf, static_cast<uint32_t>(d));
  for (double v : data) put_f64(buf, v);
}

struct Reader {
  std::vector<uint8_t> data;
  size_t pos = 0;
  std::string path;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("checkpoint " + path + ": " + what +
                             " at byte offset " + std::to_string(pos));
  }
  void need(size_t n) {
    if (pos + n > data.size()) fail("truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(data[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(data[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data.data() + pos), n);
    pos += n;
    return s;
  }
};

uint64_t byte_sum(const uint8_t* p, size_t n) {
  uint64_t s = 0;
  for (size_t i = 0; i < n; ++i) s += p[i];
  return s;
}

}  // namespace

void save_checkpoint(
    const std::string& path, const std::vector<Var*>& vars,
    const std::vector<std::pair<std::string, std::vector<double>*>>& buffers,
    const std::map<std::string, std::string>& meta) {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 8);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<uint32_t>(vars.size() + buffers.size() + meta.size()));
  for (const Var* v : vars) put_entry(buf, v->name, v->value.shape(), v->value.values());
  for (const auto& [name, b] : buffers)
    put_entry(buf, name, {static_cast<int>(b->size())}, *b);
  for (const auto& [key, text] : meta) {
    std::vector<double> bytes(text.size());
    for (size_t i = 0; i < text.size(); ++i)
      bytes[i] = static_cast<double>(static_cast<unsigned char>(text[i]));
    put_entry(buf, kMetaPrefix + key, {static_cast<int>(text.size())}, bytes);
  }
  uint64_t sum = byte_sum(buf.data(), buf.size());
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(sum >> (8 * i)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r;
  r.path = path;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    r.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  r.need(8);
  if (std::memcmp(r.data.data(), kMagic, 8) != 0) {
    r.pos = 0;
    r.fail("bad magic");
  }
  r.pos = 8;
  uint32_t version = r.u32();
  if (version != kVersion) {
    r.pos = 8;
    r.fail("unsupported version " + std::to_string(version));
  }
  uint32_t count = r.u32();

  Checkpoint ck;
  for (uint32_t e = 0; e < count; ++e) {
    uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    uint32_t rank = r.u32();
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32()));
    int n = shape_numel(shape);
    std::vector<double> data(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) data[static_cast<size_t>(i)] = r.f64();
    if (name.rfind(kMetaPrefix, 0) == 0) {
      std::string text;
      for (double v : data) text.push_back(static_cast<char>(static_cast<int>(v)));
      ck.meta[name.substr(kMetaPrefix.size())] = text;
    } else {
      ck.tensors.emplace(name, Tensor::from(std::move(shape), std::move(data)));
    }
  }
  size_t checksum_off = r.pos;
  uint64_t stored = r.u64();
  uint64_t actual = byte_sum(r.data.data(), checksum_off);
  if (stored != actual) {
    r.pos = checksum_off;
    r.fail("checksum mismatch");
  }
  if (r.pos != r.data.size()) r.fail("trailing bytes");
  return ck;
}

void apply_checkpoint(
    const Checkpoint& ckpt, const std::vector<Var*>& vars,
    const std::vector<std::pair<std::string, std::vector<double>*>>& buffers) {
  for (Var* v : vars) {
    auto it = ckpt.tensors.find(v->name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint: missing tensor " + v->name);
    v->assign(it->second);
  }
  for (const auto& [name, b] : buffers) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint: missing buffer " + name);
    if (it->second.values().size() != b->size())
      throw std::runtime_error("checkpoint: buffer " + name + " has length " +
                               std::to_string(it->second.values().size()) +
                               ", expected " + std::to_string(b->size()));
    *b = it->second.values();
  }
}

}  // namespace hstrack
