#include "deblora/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "deblora/errors.hpp"

namespace deblora {

FeatureSet::FeatureSet(std::vector<float> features, std::size_t dim,
                       std::vector<std::uint32_t> labels, std::vector<std::string> class_names)
    : features_(std::move(features)),
      dim_(dim),
      labels_(std::move(labels)),
      class_names_(std::move(class_names)) {
  if (dim_ == 0) throw ValidationError("feature dimension must be >= 1");
  if (labels_.empty()) throw ValidationError("feature set must contain at least one sample");
  if (class_names_.empty()) throw ValidationError("feature set must declare at least one class");
  if (features_.size() != labels_.size() * dim_)
    throw ValidationError("feature buffer size " + std::to_string(features_.size()) +
                          " does not match N*d = " + std::to_string(labels_.size() * dim_));
  std::unordered_set<std::string> seen;
  for (const auto& name : class_names_)
    if (!seen.insert(name).second) throw ValidationError("duplicate class name '" + name + "'");
  const std::size_t num_classes = class_names_.size();
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= num_classes)
      throw ValidationError("label " + std::to_string(labels_[i]) + " >= class count " +
                                std::to_string(num_classes),
                            i);
    for (float v : row(i))
      if (!std::isfinite(v)) throw ValidationError("non-finite feature value", i);
  }
}

Matrix FeatureSet::to_matrix() const {
  Matrix m(size(), dim_);
  std::copy(features_.begin(), features_.end(), m.data().begin());
  return m;
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> rows) const {
  std::vector<float> features;
  std::vector<std::uint32_t> labels;
  features.reserve(rows.size() * dim_);
  labels.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= size()) throw ValidationError("subset row out of range", r);
    auto src = row(r);
    features.insert(features.end(), src.begin(), src.end());
    labels.push_back(labels_[r]);
  }
  return FeatureSet(std::move(features), dim_, std::move(labels), class_names_);
}

FeatureSet FeatureSet::with_features(const Matrix& values) const {
  if (values.rows() != size() || values.cols() != dim_)
    throw ValidationError("replacement features have the wrong shape");
  std::vector<float> features(values.data().size());
  std::transform(values.data().begin(), values.data().end(), features.begin(),
                 [](double v) { return static_cast<float>(v); });
  return FeatureSet(std::move(features), dim_, labels_, class_names_);
}

FileFormat parse_format(std::string_view name) {
  if (name == "csv") return FileFormat::Csv;
  if (name == "binary" || name == "bin") return FileFormat::Binary;
  throw ValidationError("unknown feature format '" + std::string(name) + "'");
}

std::string_view format_name(FileFormat format) {
  return format == FileFormat::Csv ? "csv" : "binary";
}

std::string_view format_extension(FileFormat format) {
  return format == FileFormat::Csv ? ".csv" : ".bin";
}

// ---------------------------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_index(std::string_view s, std::uint32_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

FeatureSet parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(trim(text.substr(start, end - start)));
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw FormatError("CSV: missing header");

  const auto header = split_fields(lines.front());
  if (header.size() < 2 || trim(header[0]) != "label")
    throw FormatError("CSV: header must be 'label,f0,...,f{d-1}'");
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j)
    if (trim(header[j + 1]) != "f" + std::to_string(j))
      throw FormatError("CSV: header column " + std::to_string(j + 1) + " must be 'f" +
                        std::to_string(j) + "'");

  const std::size_t n = lines.size() - 1;
  std::vector<std::string_view> label_tokens(n);
  std::vector<float> features(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto fields = split_fields(lines[i + 1]);
    if (fields.size() != dim + 1)
      throw FormatError("CSV: row " + std::to_string(i) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(dim + 1));
    label_tokens[i] = trim(fields[0]);
    if (label_tokens[i].empty()) throw FormatError("CSV: empty label in row " + std::to_string(i));
    for (std::size_t j = 0; j < dim; ++j) {
      const auto tok = trim(fields[j + 1]);
      float value = 0.0f;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
      if (ec == std::errc::result_out_of_range)
        throw ValidationError("feature value out of float range", i);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw FormatError("CSV: cannot parse '" + std::string(tok) + "' in row " +
                          std::to_string(i));
      if (!std::isfinite(value)) throw ValidationError("non-finite feature value", i);
      features[i * dim + j] = value;
    }
  }

  std::vector<std::uint32_t> labels(n);
  std::vector<std::string> names;
  const bool integer_labels = std::all_of(label_tokens.begin(), label_tokens.end(), [](auto tok) {
    std::uint32_t v = 0;
    return parse_index(tok, v);
  });
  if (integer_labels) {
    std::uint32_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
      parse_index(label_tokens[i], labels[i]);
      max_label = std::max(max_label, labels[i]);
    }
    if (n > 0) {
      if (max_label == std::numeric_limits<std::uint32_t>::max())
        throw ValidationError("integer label too large");
      for (std::uint32_t c = 0; c <= max_label; ++c) names.push_back(std::to_string(c));
    }
  } else {
    std::unordered_map<std::string_view, std::uint32_t> interned;
    for (std::size_t i = 0; i < n; ++i) {
      auto [it, inserted] =
          interned.emplace(label_tokens[i], static_cast<std::uint32_t>(names.size()));
      if (inserted) names.emplace_back(label_tokens[i]);
      labels[i] = it->second;
    }
  }
  return FeatureSet(std::move(features), dim, std::move(labels), std::move(names));
}

std::string to_csv(const FeatureSet& set) {
  for (const auto& name : set.class_names())
    if (name.empty() || name.find_first_of(",\r\n") != std::string::npos)
      throw ValidationError("class name '" + name + "' cannot be written to CSV");
  std::string out = "label";
  for (std::size_t j = 0; j < set.dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  char buf[64];
  for (std::size_t i = 0; i < set.size(); ++i) {
    out += set.class_names()[set.label(i)];
    for (float v : set.row(i)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out += ',';
      out.append(buf, ptr);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Binary "FSET1": magic, u32 N, u32 d, u32 C, C x (u16 len, utf-8 bytes), N x u32 label,
// N*d x f32 row-major. All integers and floats little-endian.

namespace {

constexpr std::string_view kMagic = "FSET1";

class ByteWriter {
 public:
  void raw(const void* src, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(src);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void little(T value) {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
    U bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i)
      out_.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xFFu));
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::span<const std::byte> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw FormatError(std::string("FSET1: truncated while reading ") + what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T little(const char* what) {
    using U = std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint32_t>;
    auto s = take(sizeof(U), what);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<U>(std::to_integer<U>(s[i]) << (8 * i));
    return std::bit_cast<T>(bits);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> encode_binary(const FeatureSet& set) {
  if (set.size() > std::numeric_limits<std::uint32_t>::max() ||
      set.dim() > std::numeric_limits<std::uint32_t>::max())
    throw ValidationError("feature set too large for FSET1");
  ByteWriter w;
  w.raw(kMagic.data(), kMagic.size());
  w.little(static_cast<std::uint32_t>(set.size()));
  w.little(static_cast<std::uint32_t>(set.dim()));
  w.little(static_cast<std::uint32_t>(set.num_classes()));
  for (const auto& name : set.class_names()) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ValidationError("class name longer than 65535 bytes");
    w.little(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
  }
  for (std::uint32_t label : set.labels()) w.little(label);
  for (float v : set.features()) w.little(v);
  return w.take();
}

FeatureSet decode_binary(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(kMagic.size(), "magic");
  if (std::memcmp(magic.data(), kMagic.data(), kMagic.size()) != 0)
    throw FormatError("FSET1: bad magic");
  const auto n = r.little<std::uint32_t>("N");
  const auto dim = r.little<std::uint32_t>("d");
  const auto num_classes = r.little<std::uint32_t>("C");

  std::vector<std::string> names;
  names.reserve(std::min<std::size_t>(num_classes, r.remaining()));
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    const auto len = r.little<std::uint16_t>("class name length");
    auto s = r.take(len, "class name");
    names.emplace_back(reinterpret_cast<const char*>(s.data()), s.size());
  }
  const std::size_t payload = static_cast<std::size_t>(n) * 4 + static_cast<std::size_t>(n) * dim * 4;
  if (r.remaining() < payload) throw FormatError("FSET1: truncated payload");
  if (r.remaining() > payload) throw FormatError("FSET1: trailing bytes after payload");

  std::vector<std::uint32_t> labels(n);
  for (auto& label : labels) label = r.little<std::uint32_t>("labels");
  std::vector<float> features(static_cast<std::size_t>(n) * dim);
  for (auto& v : features) v = r.little<float>("features");
  return FeatureSet(std::move(features), dim, std::move(labels), std::move(names));
}

// ---------------------------------------------------------------------------------------------
// Files

FeatureSet load_features(const std::filesystem::path& path, FileFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  if (format == FileFormat::Csv) return parse_csv(content);
  return decode_binary(std::as_bytes(std::span(content.data(), content.size())));
}

void save_features(const FeatureSet& set, const std::filesystem::path& path, FileFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (format == FileFormat::Csv) {
    const std::string text = to_csv(set);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
  } else {
    const auto bytes = encode_binary(set);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------------------------
// Class statistics

std::string_view group_name(FrequencyGroup group) {
  switch (group) {
    case FrequencyGroup::Head: return "head";
    case FrequencyGroup::Middle: return "middle";
    case FrequencyGroup::Tail: return "tail";
  }
  return "?";
}

void SplitThresholds::validate() const {
  if (!(tail_max_freq > 0.0 && tail_max_freq < head_min_freq && head_min_freq < 1.0))
    throw ValidationError("split thresholds must satisfy 0 < tail_max_freq < head_min_freq < 1");
}

std::vector<std::uint32_t> ClassStats::classes_in(FrequencyGroup g) const {
  std::vector<std::uint32_t> out;
  for (std::size_t c = 0; c < group.size(); ++c)
    if (group[c] == g) out.push_back(static_cast<std::uint32_t>(c));
  return out;
}

ClassStats compute_class_stats(const FeatureSet& set, const SplitThresholds& thresholds) {
  thresholds.validate();
  const std::size_t num_classes = set.num_classes();
  ClassStats stats;
  stats.total = set.size();
  stats.counts.assign(num_classes, 0);
  for (std::uint32_t label : set.labels()) ++stats.counts[label];
  for (std::size_t c = 0; c < num_classes; ++c)
    if (stats.counts[c] == 0)
      throw ValidationError("class '" + set.class_names()[c] + "' has no samples");

  const std::size_t largest = *std::max_element(stats.counts.begin(), stats.counts.end());
  const double n = static_cast<double>(set.size());
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double freq = static_cast<double>(stats.counts[c]) / n;
    stats.frequencies.push_back(freq);
    if (freq < thresholds.tail_max_freq)
      stats.group.push_back(FrequencyGroup::Tail);
    else if (freq > thresholds.head_min_freq)
      stats.group.push_back(FrequencyGroup::Head);
    else
      stats.group.push_back(FrequencyGroup::Middle);
    stats.gamma.push_back(static_cast<double>(largest) / static_cast<double>(stats.counts[c]));
  }
  stats.dataset_gamma = *std::max_element(stats.gamma.begin(), stats.gamma.end());
  return stats;
}

}  // namespace deblora
