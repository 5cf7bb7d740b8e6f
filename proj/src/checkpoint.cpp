#include "mutatt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <spdlog/spdlog.h>
#include <zlib.h>

#include "mutatt/error.hpp"

namespace mutatt {

namespace {

constexpr char kMagic[8] = {'M', 'U', 'T', 'A', 'T', 'T', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(std::begin(bytes), std::end(bytes));
    }
    buffer_.insert(buffer_.end(), std::begin(bytes), std::end(bytes));
  }

  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    buffer_.insert(buffer_.end(), s.begin(), s.end());
  }

  void put_raw(const char* data, std::size_t n) { buffer_.insert(buffer_.end(), data, data + n); }

  void put_tensor(const std::string& name, const Tensor& t) {
    put_string(name);
    put<std::uint64_t>(t.rank());
    for (std::size_t dim : t.shape()) put<std::uint64_t>(dim);
    for (double x : t.data()) put(x);
  }

  std::string& buffer() { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    char bytes[sizeof(T)];
    std::memcpy(bytes, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(std::begin(bytes), std::end(bytes));
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  void get_tensor(const std::string& expected_name, Tensor& into) {
    const std::string name = get_string();
    if (name != expected_name) {
      throw ConfigError("checkpoint tensor '" + name + "' found where '" + expected_name +
                        "' was expected");
    }
    const auto rank = get<std::uint64_t>();
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(get<std::uint64_t>());
    if (shape != into.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) +
                       ", model expects " + shape_string(into.shape()));
    }
    for (double& x : into.storage()) x = get<double>();
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ChecksumError("checkpoint is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_params(Writer& w, const ModelParams& params) {
  const auto named = params.named();
  w.put<std::uint64_t>(named.size());
  for (const auto& [name, t] : named) w.put_tensor(name, *t);
}

void get_params(Reader& r, ModelParams& params) {
  auto named = params.named();
  const auto count = r.get<std::uint64_t>();
  if (count != named.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                      std::to_string(named.size()));
  }
  for (auto& [name, t] : named) r.get_tensor(name, *t);
}

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(checkpoint.config_hash);
  w.put_string(checkpoint.config_text);

  const auto& tokens = checkpoint.model.vocab.tokens();
  w.put<std::uint64_t>(tokens.size());
  for (const auto& t : tokens) w.put_string(t);

  const ModelDims& dims = checkpoint.model.params.dims;
  for (std::size_t v : {dims.vocab_size, dims.embed_dim, dims.hidden_dim, dims.visual_dim}) {
    w.put<std::uint64_t>(v);
  }
  put_params(w, checkpoint.model.params);
  w.put<std::uint64_t>(checkpoint.optimizer.step);
  put_params(w, checkpoint.optimizer.first_moment);
  put_params(w, checkpoint.optimizer.second_moment);
  w.put<std::uint32_t>(crc32_of(w.buffer()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw ConfigError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint32_t> expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ChecksumError(path.string() + " is not a checkpoint file");
  }
  const std::string_view body(bytes.data(), bytes.size() - 4);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 4));
  const auto stored = tail.get<std::uint32_t>();
  if (crc32_of(body) != stored) {
    throw ChecksumError("checkpoint " + path.string() + " failed its checksum");
  }

  Reader r(body.substr(sizeof(kMagic)));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint version " + std::to_string(version) + " unsupported");
  }
  Checkpoint ck;
  ck.config_hash = r.get<std::uint32_t>();
  ck.config_text = r.get_string();
  std::vector<std::string> tokens(r.get<std::uint64_t>());
  for (auto& t : tokens) t = r.get_string();
  ck.model.vocab = Vocabulary(std::move(tokens));

  ModelDims dims;
  dims.vocab_size = r.get<std::uint64_t>();
  dims.embed_dim = r.get<std::uint64_t>();
  dims.hidden_dim = r.get<std::uint64_t>();
  dims.visual_dim = r.get<std::uint64_t>();
  ck.model.params = ModelParams::zeros(dims);
  get_params(r, ck.model.params);
  ck.optimizer = AdamState::zeros_like(ck.model.params);
  ck.optimizer.step = r.get<std::uint64_t>();
  get_params(r, ck.optimizer.first_moment);
  get_params(r, ck.optimizer.second_moment);

  if (expected_config_hash && *expected_config_hash != ck.config_hash) {
    spdlog::warn("checkpoint {} was written with config hash {:08x}, current config hashes to {:08x}",
                 path.string(), ck.config_hash, *expected_config_hash);
  }
  return ck;
}

}  // namespace mutatt
