#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "retain/errors.hpp"
#include "retain/model.hpp"

namespace retain {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'R', 'T', 'N', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) bytes_.push_back(std::uint8_t(bits >> (8 * i)));
  }
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void tensor(const Tensor& t) {
    u32(std::uint32_t(t.rank()));
    for (std::size_t d : t.shape()) u32(std::uint32_t(d));
    for (double v : t.data()) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  /// Reads a tensor and checks it against the shape the header implies.
  void tensor(Tensor& out, const Shape& expected, std::size_t index) {
    const std::uint32_t rank = u32();
    Shape shape(rank);
    for (auto& d : shape) d = u32();
    if (shape != expected) {
      throw FormatError("weight file tensor #" + std::to_string(index) + " has shape " +
                        to_string(shape) + ", header implies " + to_string(expected));
    }
    std::vector<double> data(element_count(shape));
    for (double& v : data) v = f64();
    out = Tensor(std::move(shape), std::move(data));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("weight file truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Number of doubles a payload with these header values carries.
std::uint64_t payload_values(std::uint32_t kind, const ModelDimensions& d, std::uint64_t layers) {
  const std::uint64_t r = d.inputs, m = d.embedding, p = d.hidden;
  const auto lstm = [](std::uint64_t in, std::uint64_t h) { return 4 * h * in + 4 * h * h + 4 * h; };
  if (kind == 0) return m * r + 2 * lstm(m, p) + p + 1 + m * p + m + m + 1;
  return m * r + lstm(m, p) + (layers - 1) * lstm(p, p) + p + 1;
}

std::uint32_t checked_u32(std::size_t v) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension too large");
  return std::uint32_t(v);
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  const ModelDimensions& dims = dimensions(model);
  Writer w;
  w.raw(kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(kind_of(model)));
  for (std::size_t d : {dims.inputs, dims.history, dims.horizon, dims.embedding, dims.hidden}) {
    w.u32(checked_u32(d));
  }
  std::vector<const Tensor*> tensors;
  std::size_t layers = 1;
  const auto collect = [&tensors](const Tensor& t) { tensors.push_back(&t); };
  if (const auto* r = std::get_if<RetainModel>(&model)) {
    validate(r->params, dims);
    for_each_tensor(collect, r->params);
  } else {
    const auto& b = std::get<BaselineModel>(model);
    validate(b.params, dims);
    layers = b.params.layers.size();
    for_each_tensor(collect, b.params);
  }
  w.u32(checked_u32(layers));
  w.u32(checked_u32(tensors.size()));
  for (const Tensor* t : tensors) w.tensor(*t);
  return w.take();
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw FormatError("not a weight file (bad magic bytes)");
  }
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw FormatError("unsupported weight file version " + std::to_string(version));
  }
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw FormatError("unknown model kind " + std::to_string(kind));
  ModelDimensions dims;
  dims.inputs = r.u32();
  dims.history = r.u32();
  dims.horizon = r.u32();
  dims.embedding = r.u32();
  dims.hidden = r.u32();
  const std::uint32_t layers = r.u32();
  const std::uint32_t count = r.u32();
  try {
    dims.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("weight file header: ") + e.what());
  }
  if (layers == 0 || layers > 64) throw FormatError("bad layer count in weight file header");
  for (std::size_t d : {dims.inputs, dims.history, dims.horizon, dims.embedding, dims.hidden}) {
    if (d > (1u << 20)) throw FormatError("implausible dimension in weight file header");
  }
  if (payload_values(kind, dims, layers) * 8 > bytes.size()) {
    throw FormatError("weight file too short for the dimensions in its header");
  }

  // A template with the right shapes tells the reader what to expect.
  Model model = static_cast<ModelKind>(kind) == ModelKind::retain
                    ? Model{RetainModel{dims, init_retain(dims, 0)}}
                    : Model{BaselineModel{dims, init_baseline(dims, layers, 0)}};
  if (kind == 0 && layers != 1) throw FormatError("RETAIN weight file with layer count != 1");
  std::size_t index = 0;
  const auto read = [&r, &index](Tensor& t) {
    const Shape expected = t.shape();
    r.tensor(t, expected, index++);
  };
  std::size_t expected_count = 0;
  const auto count_tensors = [&expected_count](const Tensor&) { ++expected_count; };
  std::visit([&](auto& m) { for_each_tensor(count_tensors, m.params); }, model);
  if (count != expected_count) {
    throw FormatError("weight file declares " + std::to_string(count) + " tensors, expected " +
                      std::to_string(expected_count));
  }
  std::visit([&](auto& m) { for_each_tensor(read, m.params); }, model);
  if (!r.done()) throw FormatError("trailing bytes after weight payload");
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  const std::vector<std::uint8_t> bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace retain
