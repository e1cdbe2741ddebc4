#include "samdetr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace samdetr {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out(kCheckpointMagic, kMagicSize);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::set<std::string> seen;
  for (const auto& t : tensors) {
    if (!seen.insert(t.name).second) throw CheckpointError("duplicate tensor name '" + t.name + "'");
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw CheckpointError("tensor name too long");
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw CheckpointError("tensor rank too large");
    if (shape_numel(t.shape) != t.values.size()) {
      throw CheckpointError("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                            " values for shape " + shape_str(t.shape));
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.values) put<float>(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kCheckpointMagic) != 0) {
    throw CheckpointError("bad checkpoint magic");
  }
  Reader in(bytes);
  in.take(kMagicSize, "magic");
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> tensors;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = in.get<std::uint16_t>("name length");
    t.name = in.take(len, "name");
    if (!seen.insert(t.name).second) throw CheckpointError("duplicate tensor name '" + t.name + "'");
    const auto rank = in.get<std::uint8_t>("rank");
    for (std::uint8_t r = 0; r < rank; ++r) t.shape.push_back(in.get<std::uint32_t>("dims"));
    const std::size_t n = shape_numel(t.shape);
    t.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.values[k] = in.get<float>("values");
    tensors.push_back(std::move(t));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after last tensor");
  return tensors;
}

std::vector<NamedTensor> snapshot(const ParameterSet& params) {
  std::vector<NamedTensor> out;
  for (const auto& p : params.entries()) {
    NamedTensor t{p.name, p.value.shape(), {}};
    const auto data = p.value.data();
    t.values.assign(data.begin(), data.end());
    out.push_back(std::move(t));
  }
  return out;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(snapshot(params));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_into(ParameterSet& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> stored;
  for (const auto& t : tensors) stored[t.name] = &t;
  std::vector<std::string> missing, extra;
  for (const auto& p : params.entries()) {
    if (!stored.count(p.name)) missing.push_back(p.name);
  }
  for (const auto& t : tensors) {
    if (!params.find(t.name)) extra.push_back(t.name);
  }
  if (!missing.empty() || !extra.empty()) {
    std::ostringstream msg;
    msg << "checkpoint does not match model:";
    msg << " missing [";
    for (std::size_t i = 0; i < missing.size(); ++i) msg << (i ? ", " : "") << missing[i];
    msg << "] extra [";
    for (std::size_t i = 0; i < extra.size(); ++i) msg << (i ? ", " : "") << extra[i];
    msg << "]";
    throw CheckpointError(msg.str());
  }
  for (auto& p : params.entries()) {
    const NamedTensor& t = *stored[p.name];
    if (t.shape != p.value.shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + shape_str(t.shape) + ", model expects " +
                            shape_str(p.value.shape()));
    }
  }
  for (auto& p : params.entries()) {
    const NamedTensor& t = *stored[p.name];
    auto dst = p.value.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(t.values[i]);
  }
}

void load_checkpoint(ParameterSet& params, const std::filesystem::path& path) {
  load_into(params, read_checkpoint(path));
}

}  // namespace samdetr
