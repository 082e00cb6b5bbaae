#include "data.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

namespace vib {

void Dataset::validate() const {
  if (images.batch() != labels.size())
    throw InputError("dataset has " + std::to_string(images.batch()) + " images but " + std::to_string(labels.size()) +
                     " labels");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw InputError("label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset d;
  d.images = gather_rows(images, rows);
  for (auto r : rows) d.labels.push_back(labels.at(r));
  d.num_classes = num_classes;
  d.split = split;
  d.normalization = normalization;
  return d;
}

void Dataset::apply_normalization(Normalization n) {
  remove_normalization();
  for (auto& v : images.values()) v = n.apply(v);
  normalization = n;
}

void Dataset::remove_normalization() {
  for (auto& v : images.values()) v = normalization.invert(v);
  normalization = {};
}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size()) throw ParseError("truncated IDX header", off);
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  IdxArray a;
  a.magic = read_be32(bytes, 0);
  // Only unsigned-byte payloads (type code 0x08) with 1..3 dims are used here.
  if ((a.magic >> 8) != 0x08 || (a.magic & 0xff) == 0 || (a.magic & 0xff) > 3)
    throw ParseError("bad IDX magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", a.magic);
      return std::string(buf);
    }(), 0);
  const std::size_t ndim = a.magic & 0xff;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = read_be32(bytes, 4 + 4 * i);
    if (d == 0) throw ParseError("zero IDX dimension", 4 + 4 * i);
    if (count > std::numeric_limits<std::size_t>::max() / d) throw ParseError("IDX dimension overflow", 4 + 4 * i);
    count *= d;
    a.dims.push_back(d);
  }
  const std::size_t header = 4 + 4 * ndim;
  if (bytes.size() - header < count)
    throw ParseError("truncated IDX payload: need " + std::to_string(count) + " bytes, have " +
                         std::to_string(bytes.size() - header),
                     bytes.size());
  if (bytes.size() - header > count) throw ParseError("trailing bytes after IDX payload", header + count);
  a.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& a) {
  std::vector<std::uint8_t> out;
  write_be32(out, a.magic);
  for (auto d : a.dims) write_be32(out, d);
  out.insert(out.end(), a.values.begin(), a.values.end());
  return out;
}

Tensor parse_idx_images(std::span<const std::uint8_t> bytes) {
  IdxArray a = parse_idx(bytes);
  if (a.magic != kIdxImagesMagic) throw ParseError("expected IDX image magic 0x00000803", 0);
  Shape s(a.dims.begin(), a.dims.end());
  std::vector<double> v(a.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(a.values[i]) / 255.0;
  return Tensor(std::move(s), std::move(v));
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  IdxArray a = parse_idx(bytes);
  if (a.magic != kIdxLabelsMagic) throw ParseError("expected IDX label magic 0x00000801", 0);
  return std::vector<int>(a.values.begin(), a.values.end());
}

std::vector<std::uint8_t> images_to_idx(const Tensor& images) {
  if (images.rank() != 3) throw DimensionError("IDX images must be (count, rows, cols)");
  IdxArray a;
  a.magic = kIdxImagesMagic;
  for (auto d : images.shape()) a.dims.push_back(static_cast<std::uint32_t>(d));
  a.values.resize(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double px = std::round(images[i] * 255.0);
    if (px < 0.0 || px > 255.0) throw DomainError("pixel value outside [0,1]");
    a.values[i] = static_cast<std::uint8_t>(px);
  }
  return serialize_idx(a);
}

std::vector<std::uint8_t> labels_to_idx(std::span<const int> labels) {
  IdxArray a;
  a.magic = kIdxLabelsMagic;
  a.dims = {static_cast<std::uint32_t>(labels.size())};
  for (int y : labels) {
    if (y < 0 || y > 255) throw DomainError("label does not fit in a byte");
    a.values.push_back(static_cast<std::uint8_t>(y));
  }
  return serialize_idx(a);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::pair<std::filesystem::path, std::filesystem::path> mnist_files(const std::filesystem::path& dir, Split split) {
  const std::string p = split == Split::train ? "train" : "t10k";
  return {dir / (p + "-images-idx3-ubyte"), dir / (p + "-labels-idx1-ubyte")};
}

}  // namespace

bool mnist_available(const std::filesystem::path& dir) {
  for (auto s : {Split::train, Split::test}) {
    auto [img, lab] = mnist_files(dir, s);
    if (!std::filesystem::exists(img) || !std::filesystem::exists(lab)) return false;
  }
  return true;
}

Dataset load_mnist(const std::filesystem::path& dir, Split split) {
  auto [img, lab] = mnist_files(dir, split);
  Dataset d;
  const Tensor images = parse_idx_images(read_file(img));
  d.images = images.reshaped({images.dim(0), images.dim(1) * images.dim(2)});
  d.labels = parse_idx_labels(read_file(lab));
  d.num_classes = 10;
  d.split = split;
  d.validate();
  return d;
}

std::filesystem::path data_dir_from_env(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("DATA_DIR"); env && *env) return env;
  return fallback;
}

Dataset synthetic_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation, std::uint64_t seed) {
  if (classes == 0 || dim == 0) throw InputError("blobs need at least one class and one dimension");
  if (n < classes) throw InputError("blobs need n >= classes");
  RandomSource rng(seed);
  Dataset d;
  d.images = Tensor({n, dim}, 0.0);
  d.labels.resize(n);
  d.num_classes = classes;
  const auto order = rng.permutation(n);
  const bool orthogonal = classes <= dim;
  const double axis_offset = separation / std::sqrt(2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = order[i] % classes;
    d.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < dim; ++j) d.images.at(i, j) = rng.standard_normal();
    if (orthogonal)
      d.images.at(i, c) += axis_offset;
    else
      d.images.at(i, 0) += separation * static_cast<double>(c);
  }
  return d;
}

}  // namespace vib
