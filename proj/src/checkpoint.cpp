#include "lipvox/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "lipvox/error.hpp"

namespace lipvox::ckpt {

static_assert(std::endian::native == std::endian::little, "blob layout assumes little-endian");

namespace {

constexpr char kMagic[8] = {'L', 'V', 'X', 'C', 'K', 'P', 'T', '\1'};

enum class DType : uint8_t { kFloat32 = 1, kFloat64 = 2, kInt64 = 3, kUInt8 = 4 };

DType tag_for(torch::ScalarType s) {
  switch (s) {
    case torch::kFloat32: return DType::kFloat32;
    case torch::kFloat64: return DType::kFloat64;
    case torch::kInt64: return DType::kInt64;
    case torch::kUInt8: return DType::kUInt8;
    default: throw InvalidArgument("unsupported tensor dtype for checkpoint");
  }
}

torch::ScalarType scalar_for(uint8_t tag) {
  switch (static_cast<DType>(tag)) {
    case DType::kFloat32: return torch::kFloat32;
    case DType::kFloat64: return torch::kFloat64;
    case DType::kInt64: return torch::kInt64;
    case DType::kUInt8: return torch::kUInt8;
  }
  throw CorruptData("unknown dtype tag in checkpoint");
}

template <typename T>
void put_pod(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(size_t n) {
    if (n > bytes_.size() - pos_) throw CorruptData("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  size_t pos_ = 0;
};

uint32_t crc(const void* data, size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(c);
}

int major_of(const std::string& version) {
  try {
    return std::stoi(version.substr(0, version.find('.')));
  } catch (const std::exception&) {
    throw CorruptData("malformed format_version '" + version + "'");
  }
}

}  // namespace

const torch::Tensor* Container::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void Container::put(const std::string& name, const torch::Tensor& t) {
  for (auto& [n, existing] : tensors) {
    if (n == name) {
      existing = t;
      return;
    }
  }
  tensors.emplace_back(name, t);
}

void write_container(const std::filesystem::path& path, Container c) {
  c.header["format_version"] = kFormatVersion;
  const std::string header = c.header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_pod<uint64_t>(out, header.size());
  out += header;
  put_pod<uint32_t>(out, static_cast<uint32_t>(c.tensors.size()));
  for (const auto& [name, tensor] : c.tensors) {
    auto t = tensor.detach().cpu().contiguous();
    put_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_pod<uint8_t>(out, static_cast<uint8_t>(tag_for(t.scalar_type())));
    put_pod<uint32_t>(out, static_cast<uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) put_pod<int64_t>(out, d);
    const size_t nbytes = t.nbytes();
    put_pod<uint64_t>(out, nbytes);
    out.append(static_cast<const char*>(t.data_ptr()), nbytes);
    put_pod<uint32_t>(out, crc(t.data_ptr(), nbytes));
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();

  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw CorruptData(path.string() + " is not a lipvox checkpoint");
  }
  Container c;
  const auto header_len = r.pod<uint64_t>();
  const char* hp = r.take(header_len);
  try {
    c.header = nlohmann::json::parse(hp, hp + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptData(std::string("checkpoint header: ") + e.what());
  }
  const std::string version = c.header.value("format_version", "");
  if (version.empty()) throw CorruptData("checkpoint has no format_version");
  if (major_of(version) != major_of(kFormatVersion)) {
    throw VersionMismatch("checkpoint format " + version + " is not readable by format " +
                          kFormatVersion);
  }

  const auto count = r.pod<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<uint32_t>();
    std::string name(r.take(name_len), name_len);
    const auto dtype = scalar_for(r.pod<uint8_t>());
    const auto ndim = r.pod<uint32_t>();
    if (ndim > 16) throw CorruptData("blob '" + name + "' has implausible rank");
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = r.pod<int64_t>();
    const auto nbytes = r.pod<uint64_t>();
    const char* data = r.take(nbytes);
    const auto stored = r.pod<uint32_t>();
    if (crc(data, nbytes) != stored) throw CorruptData("checksum mismatch in blob '" + name + "'");
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (t.nbytes() != nbytes) throw CorruptData("blob '" + name + "' size disagrees with shape");
    std::memcpy(t.data_ptr(), data, nbytes);
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CorruptData("trailing bytes after last blob");
  return c;
}

void put_module(Container& c, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters()) c.put(prefix + "." + p.key(), p.value());
  for (const auto& b : m.named_buffers()) c.put(prefix + "." + b.key(), b.value());
}

void get_module(const Container& c, const std::string& prefix, torch::nn::Module& m) {
  torch::NoGradGuard guard;
  auto copy = [&](const std::string& key, torch::Tensor& dst) {
    const std::string name = prefix + "." + key;
    const torch::Tensor* src = c.find(name);
    if (src == nullptr) throw CorruptData("checkpoint lacks '" + name + "'");
    if (src->sizes() != dst.sizes()) throw CorruptData("shape mismatch for '" + name + "'");
    dst.copy_(*src);
  };
  for (auto& p : m.named_parameters()) copy(p.key(), p.value());
  for (auto& b : m.named_buffers()) copy(b.key(), b.value());
}

bool has_prefix(const Container& c, const std::string& prefix) {
  const std::string head = prefix + ".";
  for (const auto& [n, t] : c.tensors) {
    if (n.rfind(head, 0) == 0) return true;
  }
  return false;
}

}  // namespace lipvox::ckpt
