#include "metrics.hpp"

#include <numeric>
#include <sstream>

#include "tensor.hpp"

namespace vib {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::size_t to_size(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw InputError("expected an unsigned integer, got '" + s + "'");
  return std::stoull(s);
}

std::string join(const std::vector<std::size_t>& v, char sep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? std::string(1, sep) : "") << v[i];
  return os.str();
}

std::vector<std::size_t> parse_list(const std::string& s, char sep) {
  std::vector<std::size_t> v;
  if (s.empty()) return v;
  for (const auto& t : split(s, sep)) v.push_back(to_size(t));
  return v;
}

}  // namespace

std::string ArchSummary::serialize() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (i) os << ',';
    if (l.kind == LayerCost::Kind::dense)
      os << 'd' << l.in << 'x' << l.out;
    else
      os << 'c' << l.in << 'x' << l.out << 'k' << l.kernel << 'o' << l.out_h << 'x' << l.out_w;
  }
  os << '|' << join(feature_sizes, ',') << '|' << join(gated_widths, ',');
  return os.str();
}

ArchSummary ArchSummary::parse(const std::string& text) {
  const auto parts = split(text, '|');
  if (parts.size() != 3) throw InputError("malformed architecture summary '" + text + "'");
  ArchSummary a;
  if (!parts[0].empty()) {
    for (const auto& tok : split(parts[0], ',')) {
      if (tok.size() < 4) throw InputError("malformed layer token '" + tok + "'");
      LayerCost l;
      const std::string body = tok.substr(1);
      if (tok[0] == 'd') {
        const auto io = split(body, 'x');
        if (io.size() != 2) throw InputError("malformed dense token '" + tok + "'");
        l.in = to_size(io[0]);
        l.out = to_size(io[1]);
      } else if (tok[0] == 'c') {
        const auto ko = body.find('k');
        const auto oo = body.find('o');
        if (ko == std::string::npos || oo == std::string::npos || oo < ko)
          throw InputError("malformed conv token '" + tok + "'");
        const auto io = split(body.substr(0, ko), 'x');
        const auto hw = split(body.substr(oo + 1), 'x');
        if (io.size() != 2 || hw.size() != 2) throw InputError("malformed conv token '" + tok + "'");
        l.kind = LayerCost::Kind::conv;
        l.in = to_size(io[0]);
        l.out = to_size(io[1]);
        l.kernel = to_size(body.substr(ko + 1, oo - ko - 1));
        l.out_h = to_size(hw[0]);
        l.out_w = to_size(hw[1]);
      } else {
        throw InputError("unknown layer token '" + tok + "'");
      }
      a.layers.push_back(l);
    }
  }
  a.feature_sizes = parse_list(parts[1], ',');
  a.gated_widths = parse_list(parts[2], ',');
  return a;
}

std::string ArchSummary::width_string() const { return join(gated_widths, '-'); }

std::size_t ArchSummary::total_weights() const {
  std::size_t s = 0;
  for (const auto& l : layers) s += l.weights();
  return s;
}

ArchSummary dense_arch(std::span<const std::size_t> widths, bool input_gated) {
  if (widths.size() < 2) throw InputError("a dense architecture needs at least input and output widths");
  ArchSummary a;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    LayerCost l;
    l.in = widths[i];
    l.out = widths[i + 1];
    a.layers.push_back(l);
  }
  for (std::size_t i = input_gated ? 0 : 1; i + 1 < widths.size(); ++i) {
    a.feature_sizes.push_back(widths[i]);
    a.gated_widths.push_back(widths[i]);
  }
  return a;
}

ArchSummary dense_arch(const std::string& widths, bool input_gated) {
  const auto v = parse_list(widths, '-');
  return dense_arch(std::span<const std::size_t>(v), input_gated);
}

double compute_r_w(const ArchSummary& original, const ArchSummary& pruned) {
  if (original.layers.size() != pruned.layers.size())
    throw InputError("r_W needs matching layer counts, got " + std::to_string(original.layers.size()) + " and " +
                     std::to_string(pruned.layers.size()));
  const double denom = static_cast<double>(original.total_weights());
  if (denom <= 0.0) throw InputError("original architecture has no weights");
  return 100.0 * static_cast<double>(pruned.total_weights()) / denom;
}

std::size_t compute_flops(const ArchSummary& arch) {
  std::size_t f = 0;
  for (const auto& l : arch.layers) f += l.flops();
  return f;
}

double compute_r_n(const ArchSummary& original, const ArchSummary& pruned) {
  if (original.feature_sizes.size() != pruned.feature_sizes.size())
    throw InputError("r_N needs matching gated-layer counts");
  const auto so = std::accumulate(original.feature_sizes.begin(), original.feature_sizes.end(), std::size_t{0});
  const auto sp = std::accumulate(pruned.feature_sizes.begin(), pruned.feature_sizes.end(), std::size_t{0});
  if (so == 0) throw InputError("original architecture has no gated feature maps");
  return 100.0 * static_cast<double>(sp) / static_cast<double>(so);
}

}  // namespace vib
