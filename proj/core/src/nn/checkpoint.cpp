#include "tsdf/nn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace tsdf::nn {
namespace {

constexpr char kMagic[4] = {'T', 'S', 'D', 'F'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IngestionError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), uInt(bytes.size()));
  return std::uint32_t(crc);
}

std::string encode_checkpoint(const TensorList& tensors) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, std::uint32_t(t.name.size()));
    out += t.name;
    put_u32(out, std::uint32_t(t.value.rank()));
    for (std::size_t d : t.value.shape()) put_u32(out, std::uint32_t(d));
    for (float f : t.value.values()) put_f32(out, f);
  }
  put_u32(out, crc32_of(out));
  return out;
}

TensorList decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IngestionError("checkpoint: bad magic");
  }
  Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.u32() != crc32_of(bytes.substr(0, bytes.size() - 4))) {
    throw IngestionError("checkpoint: CRC mismatch");
  }
  Reader in(bytes.substr(0, bytes.size() - 4));
  in.take(4);
  if (auto version = in.u32(); version != kCheckpointVersion) {
    throw IngestionError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  TensorList out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = std::string(in.take(in.u32()));
    const std::uint32_t rank = in.u32();
    if (rank == 0) throw IngestionError("checkpoint: tensor '" + t.name + "' has rank 0");
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    std::vector<float> values(shape_size(shape));
    for (auto& v : values) v = in.f32();
    t.value = Tensor<float>(std::move(shape), std::move(values));
    out.push_back(std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorList& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IngestionError("checkpoint: cannot open '" + path.string() + "' for writing");
  const std::string bytes = encode_checkpoint(tensors);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw IngestionError("checkpoint: write failed for '" + path.string() + "'");
}

TensorList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestionError("checkpoint: cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <class T>
TensorList export_parameters(const ParameterStore<T>& store, std::string_view prefix) {
  TensorList out;
  for (const auto& p : store) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    out.push_back({p.name, p.value.template cast<float>()});
  }
  return out;
}

template <class T>
std::size_t import_parameters(ParameterStore<T>& store, const TensorList& tensors) {
  for (const auto& t : tensors) {
    const auto* p = store.find(t.name);
    if (p == nullptr) throw ContractError("checkpoint tensor '" + t.name + "' has no matching parameter");
    if (p->value.shape() != t.value.shape()) {
      throw ContractError("checkpoint tensor '" + t.name + "' has shape " + shape_string(t.value.shape()) +
                          ", parameter expects " + shape_string(p->value.shape()));
    }
  }
  for (const auto& t : tensors) store.at(t.name).value = t.value.template cast<T>();
  return tensors.size();
}

const NamedTensor* find_tensor(const TensorList& tensors, std::string_view name) {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template TensorList export_parameters(const ParameterStore<float>&, std::string_view);
template TensorList export_parameters(const ParameterStore<double>&, std::string_view);
template std::size_t import_parameters(ParameterStore<float>&, const TensorList&);
template std::size_t import_parameters(ParameterStore<double>&, const TensorList&);

}  // namespace tsdf::nn
