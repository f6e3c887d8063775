#include "starchnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <zlib.h>

#include "starchnet/error.hpp"

namespace starchnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'V', 'C', 'K'};

class Writer {
 public:
  template <class T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t offset) : bytes_(bytes), pos_(offset) {}

  template <class T>
  T get(const char* what) {
    T value;
    std::memcpy(&value, take(sizeof(T), what), sizeof(T));
    return value;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw CheckpointError(std::string("checkpoint truncated reading ") + what + " at byte offset " +
                            std::to_string(pos_));
    }
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [key, tensor] : tensors) {
    if (key == name) return &tensor;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string meta = checkpoint.metadata.dump();
  w.put<std::uint64_t>(meta.size());
  w.put_bytes(meta.data(), meta.size());
  w.put<std::uint64_t>(checkpoint.tensors.size());
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw CheckpointError("tensor name too long: " + name.substr(0, 64) + "...");
    }
    if (tensor.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw CheckpointError("tensor rank too large: " + name);
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(tensor.dtype()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(tensor.rank()));
    for (auto d : tensor.shape()) w.put<std::uint64_t>(d);
    std::visit([&](const auto& v) { w.put_bytes(v.data(), v.size() * sizeof(v[0])); }, tensor.buffer());
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc32_of(bytes.data() + 4, bytes.size() - 4);
  w.put<std::uint32_t>(crc);
  return std::move(bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint: bad magic at byte offset 0");
  }
  Reader header(bytes, 4);
  const auto version = header.get<std::uint32_t>("format version");
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) +
                                 " at byte offset 4 (supported: " + std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 12) {
    throw CheckpointError("checkpoint truncated: " + std::to_string(bytes.size()) +
                          " bytes, no room for the CRC trailer");
  }
  const std::size_t crc_offset = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + crc_offset, 4);
  const std::uint32_t actual = crc32_of(bytes.data() + 4, crc_offset - 4);
  if (stored != actual) {
    throw CheckpointError("checkpoint integrity check failed: CRC mismatch at byte offset " +
                          std::to_string(crc_offset));
  }

  Reader r(bytes.first(crc_offset), 8);
  Checkpoint ck;
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  const std::size_t meta_at = r.pos();
  const auto* meta = r.take(static_cast<std::size_t>(meta_len), "metadata");
  try {
    ck.metadata = nlohmann::json::parse(meta, meta + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint metadata at byte offset " + std::to_string(meta_at) +
                          " is not valid JSON: " + e.what());
  }
  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::size_t entry_at = r.pos();
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    const auto* name_bytes = r.take(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const auto code = r.get<std::uint8_t>("dtype code");
    if (code > 1) {
      throw CheckpointError("unknown dtype code " + std::to_string(code) + " for tensor " + name +
                            " (entry at byte offset " + std::to_string(entry_at) + ")");
    }
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>("dimension"));
    const std::size_t n = shape_numel(shape);
    const auto dtype = static_cast<DType>(code);
    const std::size_t width = dtype == DType::F32 ? 4 : 8;
    if (n > (bytes.size() / width)) {
      throw CheckpointError("tensor " + name + " declares " + std::to_string(n) +
                            " values, more than the file holds (entry at byte offset " +
                            std::to_string(entry_at) + ")");
    }
    const auto* raw = r.take(n * width, "tensor values");
    Buffer values = make_buffer(dtype, n);
    std::visit([&](auto& v) { std::memcpy(v.data(), raw, n * width); }, values);
    try {
      ck.tensors.emplace_back(std::move(name), Tensor::from_buffer(std::move(shape), std::move(values)));
    } catch (const ShapeError& e) {
      throw CheckpointError("invalid tensor entry at byte offset " + std::to_string(entry_at) + ": " +
                            e.what());
    }
  }
  if (r.pos() != crc_offset) {
    throw CheckpointError("unexpected trailing data at byte offset " + std::to_string(r.pos()));
  }
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointVersionError& e) {
    throw CheckpointVersionError(path.string() + ": " + e.what());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace starchnet
