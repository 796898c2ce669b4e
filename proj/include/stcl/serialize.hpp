#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stcl/optim.hpp"
#include "stcl/tensor.hpp"

namespace stcl {

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// All integers and f64 payloads are little-endian for cross-platform
// bit-exactness.
namespace wire {

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}
inline void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > buf.size()) throw FormatError("truncated file");
  }
  uint32_t get_u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t get_u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double get_f64() {
    uint64_t bits = get_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string get_str() {
    uint32_t n = get_u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw FormatError("write failed: " + path);
}

}  // namespace wire

// ---- STCB cube format ------------------------------------------------------
// magic "STCB", version u32, rank u32, dims u64[], payload f64 row-major.

inline void save_cube(const std::string& path, const Tensor& cube) {
  std::string buf;
  buf.append("STCB");
  wire::put_u32(buf, 1);
  wire::put_u32(buf, static_cast<uint32_t>(cube.rank()));
  for (size_t d : cube.shape()) wire::put_u64(buf, d);
  for (double v : cube.data()) wire::put_f64(buf, v);
  wire::write_file(path, buf);
}

inline Tensor load_cube(const std::string& path) {
  std::string buf = wire::read_file(path);
  wire::Reader r{buf};
  r.need(4);
  if (buf.compare(0, 4, "STCB") != 0) throw FormatError(path + ": bad magic, expected STCB");
  r.pos = 4;
  uint32_t version = r.get_u32();
  if (version != 1) throw FormatError(path + ": unsupported STCB version");
  uint32_t rank = r.get_u32();
  Shape shape(rank);
  for (auto& d : shape) d = r.get_u64();
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.mutable_data()) v = r.get_f64();
  if (r.pos != buf.size()) throw FormatError(path + ": trailing bytes");
  return t;
}

// ---- STCL checkpoint format ------------------------------------------------
// magic "STCL", version u32, config text, param count u32, per-param records,
// trailing CRC32 of everything before it.

inline void save_checkpoint(const std::string& path, const std::string& config_text,
                            const ParamStore& params) {
  std::string buf;
  buf.append("STCL");
  wire::put_u32(buf, 1);
  wire::put_str(buf, config_text);
  wire::put_u32(buf, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    wire::put_str(buf, name);
    wire::put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (size_t d : t.shape()) wire::put_u64(buf, d);
    for (double v : t.data()) wire::put_f64(buf, v);
  }
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  wire::put_u32(buf, crc);
  wire::write_file(path, buf);
}

struct Checkpoint {
  std::string config_text;
  ParamStore params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::string buf = wire::read_file(path);
  if (buf.size() < 8) throw FormatError(path + ": truncated checkpoint");
  std::string body = buf.substr(0, buf.size() - 4);
  wire::Reader tail{buf};
  tail.pos = buf.size() - 4;
  uint32_t stored_crc = tail.get_u32();
  uint32_t actual_crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  if (stored_crc != actual_crc)
    throw FormatError(path + ": CRC mismatch, refusing to load corrupt checkpoint");

  wire::Reader r{body};
  r.need(4);
  if (body.compare(0, 4, "STCL") != 0) throw FormatError(path + ": bad magic, expected STCL");
  r.pos = 4;
  uint32_t version = r.get_u32();
  if (version != 1) throw FormatError(path + ": unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.config_text = r.get_str();
  uint32_t count = r.get_u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_str();
    uint32_t rank = r.get_u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.get_u64();
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.mutable_data()) v = r.get_f64();
    ckpt.params.add(name, std::move(t));
  }
  if (r.pos != body.size()) throw FormatError(path + ": trailing bytes");
  return ckpt;
}

}  // namespace stcl
