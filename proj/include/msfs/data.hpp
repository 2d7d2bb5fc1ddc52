#pragma once

#include "msfs/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace msfs {

/// A multi-label dataset: features X (n x p) and binary labels Y (n x m).
struct Dataset {
  Matrix features;
  Matrix labels;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  Index label_count() const { return labels.cols(); }

  /// Throws UsageError if any structural invariant is broken.
  void validate() const {
    if (features.rows() < 1 || features.cols() < 1 || labels.cols() < 1) {
      throw UsageError("dataset needs n >= 1, p >= 1, m >= 1");
    }
    if (labels.rows() != features.rows()) {
      throw UsageError("feature and label row counts differ");
    }
    if (!features.allFinite()) throw UsageError("features contain NaN or Inf");
    for (Index i = 0; i < labels.rows(); ++i) {
      for (Index j = 0; j < labels.cols(); ++j) {
        const double v = labels(i, j);
        if (v != 0.0 && v != 1.0) {
          throw UsageError("label entry outside {0,1} at row " + std::to_string(i) +
                           ", column " + std::to_string(j));
        }
      }
    }
    if (static_cast<Index>(feature_names.size()) != features.cols() ||
        static_cast<Index>(label_names.size()) != labels.cols()) {
      throw UsageError("name lists do not match matrix widths");
    }
  }

  /// Copy of the dataset keeping only the given rows, in the given order.
  Dataset rows(const std::vector<Index>& idx) const {
    Dataset out;
    out.features.resize(static_cast<Index>(idx.size()), features.cols());
    out.labels.resize(static_cast<Index>(idx.size()), labels.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.features.row(static_cast<Index>(r)) = features.row(idx[r]);
      out.labels.row(static_cast<Index>(r)) = labels.row(idx[r]);
    }
    out.feature_names = feature_names;
    out.label_names = label_names;
    return out;
  }

  /// Copy keeping only the given feature columns, in the given order.
  Dataset select_features(const std::vector<Index>& cols) const {
    Dataset out;
    out.features.resize(features.rows(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (cols[c] < 0 || cols[c] >= features.cols()) {
        throw UsageError("feature index " + std::to_string(cols[c]) + " out of range [0, " +
                         std::to_string(features.cols()) + ")");
      }
      out.features.col(static_cast<Index>(c)) = features.col(cols[c]);
      out.feature_names.push_back(feature_names[static_cast<std::size_t>(cols[c])]);
    }
    out.labels = labels;
    out.label_names = label_names;
    return out;
  }
};

struct DatasetStats {
  Index dim = 0;
  Index label_count = 0;
  Index size = 0;
  double pmc = 0.0;
  double anl = 0.0;
  double dens = 0.0;
};

inline nlohmann::ordered_json to_json(const DatasetStats& s) {
  return {{"dim", s.dim}, {"labels", s.label_count}, {"size", s.size},
          {"pmc", s.pmc}, {"anl", s.anl},            {"dens", s.dens}};
}

enum class SplitMode { first_n, shuffled };

struct SplitSpec {
  Index train_count = 0;
  Index test_count = 0;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::first_n;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_double(std::string_view s) {
  std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  const char* first = t.data();
  if (*first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  char quote = 0;
  for (char c : line) {
    if (quote) {
      if (c == quote) {
        quote = 0;
      } else {
        cur += c;
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
    } else if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  return in;
}

inline double parse_label_value(std::string_view raw, std::size_t row, std::size_t col) {
  const std::string s = trim(raw);
  if (s == "TRUE" || s == "true") return 1.0;
  if (s == "FALSE" || s == "false") return 0.0;
  auto v = parse_double(s);
  if (!v) throw ParseError("cannot parse label value '" + s + "'", row, col);
  if (*v != 0.0 && *v != 1.0) {
    throw ParseError("label value '" + s + "' outside {0,1}", row, col);
  }
  return *v;
}

}  // namespace detail

/// Loads a comma-separated file whose trailing `label_count` columns are the
/// binary labels. Row and column numbers in errors are 1-based file positions.
inline Dataset load_csv(const std::string& path, Index label_count, bool has_header = false) {
  auto in = detail::open_or_throw(path);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line, ',');
    if (width == 0) {
      width = fields.size();
      if (label_count < 1 || static_cast<std::size_t>(label_count) >= width) {
        throw UsageError("label_count " + std::to_string(label_count) +
                         " must be in [1, columns) with " + std::to_string(width) +
                         " columns");
      }
    } else if (fields.size() != width) {
      throw ParseError("expected " + std::to_string(width) + " columns, found " +
                           std::to_string(fields.size()),
                       line_no, fields.size());
    }
    if (has_header && header.empty()) {
      header = std::move(fields);
      continue;
    }
    const std::size_t p = width - static_cast<std::size_t>(label_count);
    std::vector<double> values(width);
    for (std::size_t c = 0; c < width; ++c) {
      if (c < p) {
        auto v = detail::parse_double(fields[c]);
        if (!v || !std::isfinite(*v)) {
          throw ParseError("cannot parse feature value '" + fields[c] + "'", line_no, c + 1);
        }
        values[c] = *v;
      } else {
        values[c] = detail::parse_label_value(fields[c], line_no, c + 1);
      }
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw IoError("no data rows in " + path);

  const std::size_t p = width - static_cast<std::size_t>(label_count);
  Dataset ds;
  ds.features.resize(static_cast<Index>(rows.size()), static_cast<Index>(p));
  ds.labels.resize(static_cast<Index>(rows.size()), label_count);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      if (c < p) {
        ds.features(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
      } else {
        ds.labels(static_cast<Index>(r), static_cast<Index>(c - p)) = rows[r][c];
      }
    }
  }
  for (std::size_t c = 0; c < width; ++c) {
    std::string name = header.empty() ? "" : header[c];
    if (c < p) {
      ds.feature_names.push_back(name.empty() ? "f" + std::to_string(c) : name);
    } else {
      ds.label_names.push_back(name.empty() ? "l" + std::to_string(c - p) : name);
    }
  }
  ds.validate();
  return ds;
}

/// Reads label attribute names, in document order, from a Mulan label XML file.
inline std::vector<std::string> load_label_spec(const std::string& path) {
  auto in = detail::open_or_throw(path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  static const std::regex label_re(R"(<label\s+name\s*=\s*(["'])(.*?)\1)");
  std::vector<std::string> names;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), label_re);
       it != std::sregex_iterator(); ++it) {
    std::string name = (*it)[2].str();
    for (auto [ent, rep] : {std::pair{"&amp;", "&"}, {"&lt;", "<"}, {"&gt;", ">"},
                            {"&quot;", "\""}, {"&apos;", "'"}}) {
      for (auto pos = name.find(ent); pos != std::string::npos; pos = name.find(ent, pos)) {
        name.replace(pos, std::string_view(ent).size(), rep);
        pos += std::string_view(rep).size();
      }
    }
    names.push_back(std::move(name));
  }
  if (names.empty()) throw IoError("no <label name=...> entries in " + path);
  return names;
}

namespace detail {

struct ArffAttribute {
  std::string name;
  bool numeric = false;
  // Two-valued nominal attribute whose values map onto {0,1}.
  bool binary = false;
  std::string zero_token, one_token;
};

inline ArffAttribute parse_arff_attribute(const std::string& rest, std::size_t line_no) {
  ArffAttribute attr;
  std::size_t pos = 0;
  if (rest.empty()) throw ParseError("empty @attribute declaration", line_no, 1);
  if (rest[0] == '\'' || rest[0] == '"') {
    const char q = rest[0];
    const auto end = rest.find(q, 1);
    if (end == std::string::npos) throw ParseError("unterminated attribute name", line_no, 1);
    attr.name = rest.substr(1, end - 1);
    pos = end + 1;
  } else {
    pos = rest.find_first_of(" \t");
    if (pos == std::string::npos) throw ParseError("attribute without type", line_no, 1);
    attr.name = rest.substr(0, pos);
  }
  const std::string type = trim(rest.substr(pos));
  std::string lower = type;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "numeric" || lower == "real" || lower == "integer") {
    attr.numeric = true;
    return attr;
  }
  if (!type.empty() && type.front() == '{' && type.back() == '}') {
    auto values = split_fields(type.substr(1, type.size() - 2), ',');
    if (values.size() == 2) {
      auto is_zero = [](const std::string& v) { return v == "0" || v == "FALSE" || v == "false"; };
      auto is_one = [](const std::string& v) { return v == "1" || v == "TRUE" || v == "true"; };
      if (is_zero(values[0]) && is_one(values[1])) {
        attr.binary = true;
        attr.zero_token = values[0];
        attr.one_token = values[1];
      } else if (is_one(values[0]) && is_zero(values[1])) {
        attr.binary = true;
        attr.zero_token = values[1];
        attr.one_token = values[0];
      }
    }
  }
  return attr;
}

}  // namespace detail

/// Loads a dense Mulan-style ARFF file. Attributes named in the label spec
/// become label columns in spec order; every other attribute is a feature in
/// header order.
inline Dataset load_arff(const std::string& data_path, const std::vector<std::string>& label_spec) {
  auto in = detail::open_or_throw(data_path);
  std::vector<detail::ArffAttribute> attrs;
  std::string line;
  std::size_t line_no = 0;
  bool in_data = false;
  std::vector<std::vector<double>> rows;

  std::vector<Index> label_cols;
  std::vector<Index> feature_cols;
  auto resolve_columns = [&] {
    for (const auto& name : label_spec) {
      auto it = std::find_if(attrs.begin(), attrs.end(),
                             [&](const auto& a) { return a.name == name; });
      if (it == attrs.end()) throw IoError("label '" + name + "' not declared in " + data_path);
      if (!it->numeric && !it->binary) {
        throw IoError("label attribute '" + name + "' is not binary");
      }
      label_cols.push_back(static_cast<Index>(it - attrs.begin()));
    }
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      if (std::find(label_cols.begin(), label_cols.end(), static_cast<Index>(a)) !=
          label_cols.end()) {
        continue;
      }
      if (!attrs[a].numeric && !attrs[a].binary) {
        throw IoError("feature attribute '" + attrs[a].name + "' is not numeric");
      }
      feature_cols.push_back(static_cast<Index>(a));
    }
    if (feature_cols.empty()) throw IoError("no feature attributes in " + data_path);
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '%') continue;
    if (!in_data) {
      if (t[0] != '@') throw ParseError("unexpected text in ARFF header", line_no, 1);
      const auto sp = t.find_first_of(" \t");
      std::string keyword = t.substr(0, sp);
      std::transform(keyword.begin(), keyword.end(), keyword.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (keyword == "@relation") continue;
      if (keyword == "@attribute") {
        if (sp == std::string::npos) throw ParseError("bare @attribute", line_no, 1);
        attrs.push_back(detail::parse_arff_attribute(detail::trim(t.substr(sp)), line_no));
      } else if (keyword == "@data") {
        if (attrs.empty()) throw ParseError("@data before any @attribute", line_no, 1);
        resolve_columns();
        in_data = true;
      } else {
        throw ParseError("unknown ARFF keyword '" + keyword + "'", line_no, 1);
      }
      continue;
    }
    if (t[0] == '{') {
      throw ParseError("sparse ARFF instances are not supported", line_no, 1);
    }
    auto fields = detail::split_fields(t, ',');
    if (fields.size() != attrs.size()) {
      throw ParseError("expected " + std::to_string(attrs.size()) + " values, found " +
                           std::to_string(fields.size()),
                       line_no, fields.size());
    }
    std::vector<double> values(attrs.size());
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      const auto& f = fields[a];
      if (f == "?") throw ParseError("missing value", line_no, a + 1);
      if (attrs[a].binary) {
        if (f == attrs[a].zero_token) {
          values[a] = 0.0;
        } else if (f == attrs[a].one_token) {
          values[a] = 1.0;
        } else {
          throw ParseError("value '" + f + "' not in nominal domain", line_no, a + 1);
        }
      } else {
        auto v = detail::parse_double(f);
        if (!v || !std::isfinite(*v)) {
          throw ParseError("cannot parse numeric value '" + f + "'", line_no, a + 1);
        }
        values[a] = *v;
      }
    }
    for (Index c : label_cols) {
      const double v = values[static_cast<std::size_t>(c)];
      if (v != 0.0 && v != 1.0) {
        throw ParseError("label value outside {0,1}", line_no, static_cast<std::size_t>(c) + 1);
      }
    }
    rows.push_back(std::move(values));
  }
  if (!in_data) throw IoError("missing @data section in " + data_path);
  if (rows.empty()) throw IoError("no instances in " + data_path);

  Dataset ds;
  const auto n = static_cast<Index>(rows.size());
  ds.features.resize(n, static_cast<Index>(feature_cols.size()));
  ds.labels.resize(n, static_cast<Index>(label_cols.size()));
  for (Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < feature_cols.size(); ++c) {
      ds.features(r, static_cast<Index>(c)) = row[static_cast<std::size_t>(feature_cols[c])];
    }
    for (std::size_t c = 0; c < label_cols.size(); ++c) {
      ds.labels(r, static_cast<Index>(c)) = row[static_cast<std::size_t>(label_cols[c])];
    }
  }
  for (Index c : feature_cols) ds.feature_names.push_back(attrs[static_cast<std::size_t>(c)].name);
  for (Index c : label_cols) ds.label_names.push_back(attrs[static_cast<std::size_t>(c)].name);
  ds.validate();
  return ds;
}

inline Dataset load_arff(const std::string& data_path, const std::string& label_spec_path) {
  return load_arff(data_path, load_label_spec(label_spec_path));
}

/// Fisher-Yates permutation of [0, n) driven by `seed`.
inline std::vector<Index> shuffled_indices(Index n, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, const SplitSpec& spec) {
  if (spec.train_count < 0 || spec.test_count < 0 ||
      spec.train_count + spec.test_count > ds.size()) {
    throw UsageError("split counts " + std::to_string(spec.train_count) + "+" +
                     std::to_string(spec.test_count) + " exceed n=" + std::to_string(ds.size()));
  }
  std::vector<Index> order;
  if (spec.mode == SplitMode::shuffled) {
    order = shuffled_indices(ds.size(), spec.seed);
  } else {
    order.resize(static_cast<std::size_t>(ds.size()));
    std::iota(order.begin(), order.end(), Index{0});
  }
  const auto tr = static_cast<std::ptrdiff_t>(spec.train_count);
  const auto te = static_cast<std::ptrdiff_t>(spec.test_count);
  std::vector<Index> train_idx(order.begin(), order.begin() + tr);
  std::vector<Index> test_idx(order.begin() + tr, order.begin() + tr + te);
  return {ds.rows(train_idx), ds.rows(test_idx)};
}

/// Sample standard deviation (n-1 denominator) of every feature column.
inline Vector column_std(const Matrix& x) {
  Vector out = Vector::Zero(x.cols());
  if (x.rows() < 2) return out;
  for (Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    out(j) = std::sqrt((x.col(j).array() - mean).square().sum() /
                       static_cast<double>(x.rows() - 1));
  }
  return out;
}

/// Adds N(0, (ratio * sigma_j)^2) to every entry of feature column j.
/// Constant columns and the labels are left untouched.
inline Dataset add_gaussian_noise(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0)) throw UsageError("noise ratio must be >= 0");
  Dataset out = ds;
  if (ratio == 0.0) return out;
  const Vector sigma = column_std(ds.features);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index j = 0; j < ds.dim(); ++j) {
    if (sigma(j) == 0.0) continue;
    const double scale = ratio * sigma(j);
    for (Index i = 0; i < ds.size(); ++i) out.features(i, j) += scale * normal(rng);
  }
  return out;
}

inline DatasetStats stats(const Dataset& ds) {
  DatasetStats s;
  s.dim = ds.dim();
  s.label_count = ds.label_count();
  s.size = ds.size();
  const Vector per_row = ds.labels.rowwise().sum();
  const auto n = static_cast<double>(ds.size());
  s.pmc = static_cast<double>((per_row.array() >= 2.0).count()) / n;
  s.anl = per_row.sum() / n;
  s.dens = s.anl / static_cast<double>(ds.label_count());
  return s;
}

}  // namespace msfs
