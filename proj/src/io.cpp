#include "adsf/io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adsf {

uint32_t crc32(const unsigned char* data, size_t len, uint32_t seed) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t c = seed ^ 0xffffffffu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

namespace {

constexpr char kMagic[4] = {'A', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void append_u32(std::vector<unsigned char>& buf, uint32_t x) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xff));
}

void append_u64(std::vector<unsigned char>& buf, uint64_t x) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>((x >> (8 * i)) & 0xff));
}

void append_f64(std::vector<unsigned char>& buf, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  append_u64(buf, bits);
}

struct Reader {
  const std::vector<unsigned char>& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n, const char* what) {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint truncated reading " + std::string(what) +
                               " at offset " + std::to_string(pos) + ": " + path);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return x;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return x;
  }
  double f64(const char* what) {
    uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const ParamSet& params, const std::string& path) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  append_u32(buf, kVersion);
  auto all = params.all();
  append_u64(buf, all.size());
  for (const Param* p : all) {
    append_u32(buf, static_cast<uint32_t>(p->name.size()));
    buf.insert(buf.end(), p->name.begin(), p->name.end());
    append_u32(buf, static_cast<uint32_t>(p->value.shape.size()));
    for (int64_t d : p->value.shape) append_u64(buf, static_cast<uint64_t>(d));
    for (double v : p->value.v) append_f64(buf, v);
  }
  append_u32(buf, crc32(buf.data(), buf.size()));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void load_checkpoint(ParamSet& params, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw std::runtime_error("checkpoint too small: " + path);
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<uint32_t>(buf[buf.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
  if (crc32(buf.data(), buf.size() - 4) != stored)
    throw std::runtime_error("checkpoint checksum mismatch: " + path);
  buf.resize(buf.size() - 4);

  Reader r{buf, 0, path};
  if (r.str(4, "magic") != std::string(kMagic, 4))
    throw std::runtime_error("bad checkpoint magic: " + path);
  if (r.u32("version") != kVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);
  uint64_t count = r.u64("tensor count");
  if (count != params.size())
    throw std::runtime_error("checkpoint has " + std::to_string(count) +
                             " tensors, model expects " + std::to_string(params.size()));
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nlen = r.u32("name length");
    std::string name = r.str(nlen, "name");
    uint32_t ndim = r.u32("rank");
    std::vector<int64_t> shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int64_t>(r.u64("dim")));
    Param* p = params.find(name);
    if (!p) throw std::runtime_error("checkpoint tensor '" + name + "' not in model");
    if (p->value.shape != shape)
      throw std::runtime_error("checkpoint tensor '" + name + "' shape mismatch");
    for (double& v : p->value.v) v = r.f64("data");
  }
}

}  // namespace adsf
