#include "f3va/nn/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "f3va/textio.hpp"

namespace f3va::nn {
namespace {

constexpr char kMagic[8] = {'F', '3', 'V', 'A', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint: truncated container");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<Tensor>& tensors) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw RejectedInput("checkpoint: tensor " + t.name + " data does not match dims");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

std::vector<Tensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic");
  Reader r(bytes);
  r.str(sizeof(kMagic));
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto n = r.u32();
  std::vector<Tensor> tensors;
  tensors.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    Tensor t;
    t.name = r.str(r.u32());
    const auto rank = r.u32();
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.dims.push_back(r.u32());
      count *= t.dims.back();
    }
    t.data.resize(count);
    for (auto& f : t.data) f = std::bit_cast<float>(r.u32());
    tensors.push_back(std::move(t));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return tensors;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  write_file(path, encode_checkpoint(tensors));
}

std::vector<Tensor> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

const Tensor& find_tensor(const std::vector<Tensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw DataError("checkpoint: missing tensor " + name);
}

Tensor int_tensor(const std::string& name, const std::vector<int>& values) {
  Tensor t{name, {static_cast<std::uint32_t>(values.size())}, {}};
  for (int v : values) t.data.push_back(static_cast<float>(v));
  return t;
}

std::vector<int> tensor_ints(const Tensor& t) {
  std::vector<int> out;
  for (float f : t.data) out.push_back(static_cast<int>(std::lround(f)));
  return out;
}

}  // namespace f3va::nn
