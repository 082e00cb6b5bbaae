#include "checkpoint.hpp"

#include <cstring>
#include <map>
#include <sstream>

#include "data.hpp"

namespace vib {

namespace {

// ---- little-endian primitives ----------------------------------------------

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t offset() const { return off_; }
  bool done() const { return off_ == b_.size(); }
  void need(std::size_t n, const char* what) {
    if (b_.size() - off_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, off_);
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[off_ + i]) << (8 * i));
    off_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
    off_ += n;
    return s;
  }
  float f32() {
    const std::uint32_t bits = le<std::uint32_t>("array payload");
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

// ---- topology text ---------------------------------------------------------

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string broadcast_name(GateBroadcast b) { return b == GateBroadcast::per_channel ? "per_channel" : "per_neuron"; }

GateBroadcast parse_broadcast(const std::string& s) {
  if (s == "per_neuron") return GateBroadcast::per_neuron;
  if (s == "per_channel") return GateBroadcast::per_channel;
  throw InputError("unknown gate broadcast '" + s + "'");
}

std::string layer_token(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::affine: return "affine";
    case LayerKind::conv2d:
      return "conv2d:" + std::to_string(l.geometry.kernel) + ":" + std::to_string(l.geometry.stride) + ":" +
             std::to_string(l.geometry.padding);
    case LayerKind::batch_norm: return "batch_norm:" + fmt(l.bn.momentum) + ":" + fmt(l.bn.epsilon);
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool2d: return "max_pool2d:" + std::to_string(l.geometry.kernel);
  }
  return "relu";
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

std::size_t to_size(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw InputError("expected an unsigned integer in checkpoint topology, got '" + s + "'");
  return std::stoull(s);
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw InputError("expected a number in checkpoint topology, got '" + s + "'");
  return v;
}

LayerSpec parse_layer(const std::string& tok) {
  const auto p = split(tok, ':');
  LayerSpec l;
  if (p[0] == "affine" && p.size() == 1) {
    l.kind = LayerKind::affine;
  } else if (p[0] == "conv2d" && p.size() == 4) {
    l.kind = LayerKind::conv2d;
    l.geometry = {to_size(p[1]), to_size(p[2]), to_size(p[3])};
  } else if (p[0] == "batch_norm" && p.size() == 3) {
    l.kind = LayerKind::batch_norm;
    l.bn.momentum = to_double(p[1]);
    l.bn.epsilon = to_double(p[2]);
  } else if (p[0] == "relu" && p.size() == 1) {
    l.kind = LayerKind::relu;
  } else if (p[0] == "max_pool2d" && p.size() == 2) {
    l.kind = LayerKind::max_pool2d;
    const std::size_t k = to_size(p[1]);
    l.geometry = {k, k, 0};
  } else {
    throw InputError("unknown layer token '" + tok + "'");
  }
  return l;
}

// Every array of the network in file order, with pointers for loading.
struct Slot {
  std::string name;
  Tensor* tensor = nullptr;               // tensors keep their own shape
  std::vector<double>* vector = nullptr;  // gate parameters
};

std::vector<Slot> slots(Network& net, std::vector<double>& index_buffer) {
  std::vector<Slot> s;
  if (!net.input_index.empty()) s.push_back({"input_index", nullptr, &index_buffer});
  if (net.input_gate) {
    s.push_back({"input_gate.mu", nullptr, &net.input_gate->mu});
    s.push_back({"input_gate.log_sigma2", nullptr, &net.input_gate->log_sigma2});
  }
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const std::string b = "block" + std::to_string(i);
    for (std::size_t j = 0; j < net.blocks[i].layers.size(); ++j) {
      LayerSpec& l = net.blocks[i].layers[j];
      if (!l.has_parameters()) continue;
      const std::string p = b + ".layer" + std::to_string(j);
      s.push_back({p + ".weight", &l.weight, nullptr});
      s.push_back({p + ".bias", &l.bias, nullptr});
      if (l.kind == LayerKind::batch_norm) {
        s.push_back({p + ".running_mean", &l.bn.running_mean, nullptr});
        s.push_back({p + ".running_var", &l.bn.running_var, nullptr});
      }
    }
    s.push_back({b + ".gate.mu", nullptr, &net.blocks[i].gate.mu});
    s.push_back({b + ".gate.log_sigma2", nullptr, &net.blocks[i].gate.log_sigma2});
  }
  s.push_back({"head.weight", &net.head.weight, nullptr});
  s.push_back({"head.bias", &net.head.bias, nullptr});
  return s;
}

}  // namespace

std::string describe_topology(const Network& net, const CheckpointMeta& meta) {
  std::ostringstream os;
  os << "name " << net.name << '\n';
  os << "input ";
  for (std::size_t i = 0; i < net.input_shape.size(); ++i) os << (i ? "x" : "") << net.input_shape[i];
  os << '\n';
  os << "likelihood " << (net.likelihood == Likelihood::gaussian ? "gaussian" : "softmax") << '\n';
  os << "count_input_gate_in_depth " << (net.count_input_gate_in_depth ? 1 : 0) << '\n';
  if (net.input_gate)
    os << "input_gate " << broadcast_name(net.input_gate->broadcast) << ' ' << fmt(net.input_gate->gamma) << '\n';
  for (const auto& b : net.blocks) {
    os << "block " << broadcast_name(b.gate.broadcast) << ' ' << fmt(b.gate.gamma);
    for (const auto& l : b.layers) os << ' ' << layer_token(l);
    os << '\n';
  }
  os << "head affine\n";
  os << "original " << net.original.serialize() << '\n';
  os << "data " << meta.data << '\n';
  return os.str();
}

std::vector<std::uint8_t> encode_checkpoint(const Network& net_in, const CheckpointMeta& meta) {
  net_in.validate();
  Network net = net_in;
  std::vector<double> index(net.input_index.begin(), net.input_index.end());
  for (auto v : net.input_index)
    if (v >= (1u << 24)) throw InputError("input index too large for f32 storage");
  const std::string topo = describe_topology(net, meta);
  const auto s = slots(net, index);

  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint32_t>(topo.size()));
  w.bytes(topo.data(), topo.size());
  w.le(meta.seed);
  w.le(meta.epoch);
  w.le(static_cast<std::uint32_t>(s.size()));
  for (const auto& slot : s) {
    w.le(static_cast<std::uint16_t>(slot.name.size()));
    w.bytes(slot.name.data(), slot.name.size());
    w.le(kDtypeF32);
    const Shape shape = slot.tensor ? slot.tensor->shape() : Shape{slot.vector->size()};
    w.le(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.le(static_cast<std::uint32_t>(d));
    const std::span<const double> values =
        slot.tensor ? std::span<const double>(slot.tensor->values()) : std::span<const double>(*slot.vector);
    for (double v : values) w.f32(static_cast<float>(v));
  }
  return w.take();
}

namespace {

struct Header {
  std::string topology;
  CheckpointMeta meta;
  std::vector<NamedArray> arrays;
};

Header read_all(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw ParseError("not a VIBN checkpoint", 0);
  const auto version = r.le<std::uint16_t>("version");
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  Header h;
  const auto tlen = r.le<std::uint32_t>("descriptor length");
  h.topology = r.str(tlen, "descriptor");
  h.meta.seed = r.le<std::uint64_t>("seed");
  h.meta.epoch = r.le<std::uint32_t>("epoch");
  const auto count = r.le<std::uint32_t>("array count");
  for (std::uint32_t a = 0; a < count; ++a) {
    NamedArray arr;
    const auto nlen = r.le<std::uint16_t>("array name length");
    arr.name = r.str(nlen, "array name");
    const std::size_t tag_at = r.offset();
    if (r.le<std::uint8_t>("dtype") != kDtypeF32) throw ParseError("unsupported dtype in '" + arr.name + "'", tag_at);
    const auto rank = r.le<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::size_t at = r.offset();
      const auto dim = r.le<std::uint32_t>("dimension");
      if (dim == 0) throw ParseError("zero dimension in '" + arr.name + "'", at);
      if (n > (std::size_t{1} << 40) / dim) throw ParseError("array '" + arr.name + "' too large", at);
      n *= dim;
      arr.shape.push_back(dim);
    }
    r.need(4 * n, "array payload");
    arr.values.resize(n);
    for (auto& v : arr.values) v = r.f32();
    h.arrays.push_back(std::move(arr));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint arrays", r.offset());
  return h;
}

Network skeleton(const std::string& topology, CheckpointMeta& meta) {
  Network net;
  std::istringstream is(topology);
  std::string line;
  bool have_head = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    const auto words = split(rest, ' ');
    if (key == "name") {
      net.name = rest;
    } else if (key == "input") {
      for (const auto& d : split(rest, 'x')) net.input_shape.push_back(to_size(d));
    } else if (key == "likelihood") {
      if (rest == "softmax")
        net.likelihood = Likelihood::categorical_softmax;
      else if (rest == "gaussian")
        net.likelihood = Likelihood::gaussian;
      else
        throw InputError("unknown likelihood '" + rest + "'");
    } else if (key == "count_input_gate_in_depth") {
      net.count_input_gate_in_depth = rest == "1";
    } else if (key == "input_gate") {
      if (words.size() != 2) throw InputError("malformed input_gate line");
      VibGate g;
      g.broadcast = parse_broadcast(words[0]);
      g.gamma = to_double(words[1]);
      net.input_gate = g;
    } else if (key == "block") {
      if (words.size() < 3) throw InputError("malformed block line");
      Block b;
      b.gate.broadcast = parse_broadcast(words[0]);
      b.gate.gamma = to_double(words[1]);
      for (std::size_t i = 2; i < words.size(); ++i) b.layers.push_back(parse_layer(words[i]));
      net.blocks.push_back(std::move(b));
    } else if (key == "head") {
      if (rest != "affine") throw InputError("head must be affine");
      net.head.kind = LayerKind::affine;
      have_head = true;
    } else if (key == "original") {
      net.original = ArchSummary::parse(rest);
    } else if (key == "data") {
      meta.data = rest;
    } else {
      throw InputError("unknown checkpoint directive '" + key + "'");
    }
  }
  if (!have_head || net.input_shape.empty()) throw InputError("checkpoint topology lacks input or head");
  return net;
}

}  // namespace

std::vector<NamedArray> checkpoint_arrays(std::span<const std::uint8_t> bytes) { return read_all(bytes).arrays; }

Network decode_checkpoint(std::span<const std::uint8_t> bytes, CheckpointMeta* meta_out) {
  Header h = read_all(bytes);
  Network net;
  try {
    net = skeleton(h.topology, h.meta);
  } catch (const InputError& e) {
    throw ParseError(std::string("bad checkpoint descriptor: ") + e.what(), 10);
  }
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : h.arrays)
    if (!by_name.emplace(a.name, &a).second) throw ParseError("duplicate array '" + a.name + "'", 0);
  if (by_name.count("input_index")) net.input_index.resize(1);  // placeholder so the slot is listed
  std::vector<double> index;
  const auto s = slots(net, index);
  if (s.size() != h.arrays.size())
    throw ParseError("checkpoint has " + std::to_string(h.arrays.size()) + " arrays, topology expects " +
                         std::to_string(s.size()),
                     0);
  for (const auto& slot : s) {
    const auto it = by_name.find(slot.name);
    if (it == by_name.end()) throw ParseError("checkpoint lacks array '" + slot.name + "'", 0);
    const NamedArray& a = *it->second;
    std::vector<double> v(a.values.begin(), a.values.end());
    if (slot.tensor) {
      *slot.tensor = Tensor(a.shape, std::move(v));
    } else {
      if (a.shape.size() != 1) throw ParseError("array '" + slot.name + "' must be a vector", 0);
      *slot.vector = std::move(v);
    }
  }
  net.input_index.clear();
  for (double v : index) net.input_index.push_back(static_cast<std::size_t>(v));
  try {
    net.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("checkpoint arrays are inconsistent: ") + e.what(), 0);
  }
  if (meta_out) *meta_out = h.meta;
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const CheckpointMeta& meta) {
  write_file(path, encode_checkpoint(net, meta));
}

Network load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return decode_checkpoint(read_file(path), meta);
}

}  // namespace vib
