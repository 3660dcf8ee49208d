#include "ght/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>

// File layout (all integers little-endian):
//   magic   8 bytes  "GHTCKPT\0"
//   u32     version
//   u64 len + bytes       config text (output dir omitted)
//   u32 count              parameter blobs
//     per blob: u32 name len, name bytes, u8 dtype (1=f32, 2=f64),
//               u32 ndim, u64 dims..., u64 byte len, raw values
//   u8 has_mask [ u32 layers, per layer: u32 k, k bytes of 0/1 ]
//   u8 has_optimizer [ u64 step, u32 count, blobs m..., blobs v... ]
//   u8 has_trainer_state [ u64 len + bytes ]

namespace ght {
namespace {

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const uint8_t* p;
  size_t n, at = 0;

  void need(size_t k) const {
    if (at + k > n) throw IoError("checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return p[at++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[at++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[at++]) << (8 * i);
    return v;
  }
  std::string bytes(size_t k) {
    need(k);
    std::string s(reinterpret_cast<const char*>(p + at), k);
    at += k;
    return s;
  }
};

void put_blob(std::string& out, const CheckpointData::Blob& b) {
  put_u32(out, static_cast<uint32_t>(b.name.size()));
  out.append(b.name);
  out.push_back(static_cast<char>(b.dtype));
  put_u32(out, static_cast<uint32_t>(b.shape.size()));
  for (int64_t d : b.shape) put_u64(out, static_cast<uint64_t>(d));
  put_u64(out, static_cast<uint64_t>(b.raw.size()));
  out.append(reinterpret_cast<const char*>(b.raw.data()), b.raw.size());
}

CheckpointData::Blob read_blob(Reader& r) {
  CheckpointData::Blob b;
  b.name = r.bytes(r.u32());
  b.dtype = r.u8();
  uint32_t ndim = r.u32();
  for (uint32_t i = 0; i < ndim; ++i) b.shape.push_back(static_cast<int64_t>(r.u64()));
  uint64_t len = r.u64();
  std::string raw = r.bytes(len);
  b.raw.assign(raw.begin(), raw.end());
  return b;
}

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
  std::string out;
  out.append("GHTCKPT", 8);  // includes the trailing NUL
  put_u32(out, CheckpointData::kVersion);
  put_u64(out, data.config_text.size());
  out.append(data.config_text);
  put_u32(out, static_cast<uint32_t>(data.params.size()));
  for (const auto& b : data.params) put_blob(out, b);
  out.push_back(data.has_mask ? 1 : 0);
  if (data.has_mask) {
    put_u32(out, static_cast<uint32_t>(data.mask.layers.size()));
    for (const auto& l : data.mask.layers) {
      put_u32(out, static_cast<uint32_t>(l.size()));
      out.append(reinterpret_cast<const char*>(l.data()), l.size());
    }
  }
  out.push_back(data.has_optimizer ? 1 : 0);
  if (data.has_optimizer) {
    put_u64(out, static_cast<uint64_t>(data.optimizer_step));
    put_u32(out, static_cast<uint32_t>(data.opt_m.size()));
    for (const auto& b : data.opt_m) put_blob(out, b);
    for (const auto& b : data.opt_v) put_blob(out, b);
  }
  out.push_back(data.has_trainer_state ? 1 : 0);
  if (data.has_trainer_state) {
    put_u64(out, data.trainer_state.size());
    out.append(data.trainer_state);
  }

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(strprintf("checkpoint: cannot write '%s'", tmp.c_str()));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError(strprintf("checkpoint: short write to '%s'", tmp.c_str()));
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError(strprintf("checkpoint: cannot move '%s' into place", tmp.c_str()));
}

CheckpointData read_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(strprintf("checkpoint: cannot open '%s'", path.c_str()));
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size()};
  if (r.bytes(8) != std::string("GHTCKPT\0", 8))
    throw IoError(strprintf("checkpoint: '%s' is not a checkpoint file", path.c_str()));
  uint32_t version = r.u32();
  if (version != CheckpointData::kVersion)
    throw IoError(strprintf("checkpoint: unsupported version %u", version));
  CheckpointData ck;
  ck.config_text = r.bytes(r.u64());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) ck.params.push_back(read_blob(r));
  ck.has_mask = r.u8() != 0;
  if (ck.has_mask) {
    uint32_t layers = r.u32();
    for (uint32_t i = 0; i < layers; ++i) {
      uint32_t k = r.u32();
      std::string raw = r.bytes(k);
      ck.mask.layers.emplace_back(raw.begin(), raw.end());
    }
  }
  ck.has_optimizer = r.u8() != 0;
  if (ck.has_optimizer) {
    ck.optimizer_step = static_cast<int64_t>(r.u64());
    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) ck.opt_m.push_back(read_blob(r));
    for (uint32_t i = 0; i < count; ++i) ck.opt_v.push_back(read_blob(r));
  }
  ck.has_trainer_state = r.u8() != 0;
  if (ck.has_trainer_state) ck.trainer_state = r.bytes(r.u64());
  return ck;
}

std::string sha256_hex(const uint8_t* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int dlen = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("sha256: cannot allocate digest context");
  bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
            EVP_DigestUpdate(ctx, data, len) == 1 &&
            EVP_DigestFinal_ex(ctx, digest, &dlen) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(dlen * 2);
  for (unsigned int i = 0; i < dlen; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

}  // namespace ght
