#include "nlab/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>
#include <string>

#include "nlab/io.hpp"

namespace nlab {

namespace {

void check_labels(const Labels& labels, int k, const char* what) {
  for (Label y : labels)
    require(y >= 0 && y < k, ErrorKind::invalid_input,
            std::string(what) + " value " + std::to_string(y) + " outside [0, K)");
}

}  // namespace

void LabeledDataset::validate() const {
  require(num_classes >= 2, ErrorKind::invalid_input, "dataset needs at least two classes");
  require(features.rows() == labels.size(), ErrorKind::invalid_input,
          "feature rows and label count differ");
  check_labels(labels, num_classes, "label");
  if (true_labels) {
    require(true_labels->size() == labels.size(), ErrorKind::invalid_input,
            "true_labels length differs from labels");
    check_labels(*true_labels, num_classes, "true label");
  }
  if (annotator_labels) {
    require(annotator_labels->size() == labels.size(), ErrorKind::invalid_input,
            "annotator_labels row count differs from labels");
    const std::size_t a = num_annotators();
    require(a >= 1, ErrorKind::invalid_input, "annotator_labels needs at least one annotator");
    for (const Labels& row : *annotator_labels) {
      require(row.size() == a, ErrorKind::invalid_input, "ragged annotator_labels");
      check_labels(row, num_classes, "annotator label");
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> idx) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.features = Matrix(idx.size(), dims());
  out.labels.reserve(idx.size());
  if (true_labels) out.true_labels.emplace().reserve(idx.size());
  if (annotator_labels) out.annotator_labels.emplace().reserve(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const std::size_t i = idx[r];
    require(i < size(), ErrorKind::shape, "subset index out of range");
    std::copy(features.row(i).begin(), features.row(i).end(), out.features.row(r).begin());
    out.labels.push_back(labels[i]);
    if (true_labels) out.true_labels->push_back((*true_labels)[i]);
    if (annotator_labels) out.annotator_labels->push_back((*annotator_labels)[i]);
  }
  return out;
}

LabeledDataset LabeledDataset::training_view() const {
  LabeledDataset out = *this;
  out.true_labels.reset();
  return out;
}

Matrix blob_centers(int num_classes, std::size_t dims, double separation) {
  const auto k = static_cast<std::size_t>(num_classes);
  Matrix centers(k, dims);
  if (dims == 1) {
    for (std::size_t c = 0; c < k; ++c)
      centers(c, 0) = (static_cast<double>(c) - 0.5 * static_cast<double>(k - 1)) * separation;
    return centers;
  }
  // Regular k-gon: adjacent vertices are the closest pair, chord = 2 r sin(pi / k).
  const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(k)));
  for (std::size_t c = 0; c < k; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
    centers(c, 0) = radius * std::cos(angle);
    centers(c, 1) = radius * std::sin(angle);
  }
  return centers;
}

LabeledDataset gen_blobs(const BlobsParams& p) {
  require(p.num_classes >= 2, ErrorKind::invalid_parameter, "gen_blobs: K must be >= 2");
  require(p.dims >= 1, ErrorKind::invalid_parameter, "gen_blobs: d must be >= 1");
  require(p.n_per_class >= 1, ErrorKind::invalid_parameter, "gen_blobs: n_per_class must be >= 1");
  require(p.separation > 0.0 && std::isfinite(p.separation), ErrorKind::invalid_parameter,
          "gen_blobs: separation must be positive");
  const Matrix centers = blob_centers(p.num_classes, p.dims, p.separation);
  Rng rng(p.seed);
  LabeledDataset ds;
  ds.num_classes = p.num_classes;
  const std::size_t n = p.n_per_class * static_cast<std::size_t>(p.num_classes);
  ds.features = Matrix(n, p.dims);
  ds.labels.reserve(n);
  std::size_t r = 0;
  for (int c = 0; c < p.num_classes; ++c) {
    for (std::size_t i = 0; i < p.n_per_class; ++i, ++r) {
      for (std::size_t j = 0; j < p.dims; ++j)
        ds.features(r, j) = centers(static_cast<std::size_t>(c), j) + rng.normal();
      ds.labels.push_back(c);
    }
  }
  ds.true_labels = ds.labels;
  return ds;
}

LabeledDataset gen_rings(const RingsParams& p) {
  require(p.num_classes >= 2, ErrorKind::invalid_parameter, "gen_rings: K must be >= 2");
  require(p.n_per_class >= 1, ErrorKind::invalid_parameter, "gen_rings: n_per_class must be >= 1");
  require(p.noise_std >= 0.0 && std::isfinite(p.noise_std), ErrorKind::invalid_parameter,
          "gen_rings: noise_std must be >= 0");
  Rng rng(p.seed);
  LabeledDataset ds;
  ds.num_classes = p.num_classes;
  const std::size_t n = p.n_per_class * static_cast<std::size_t>(p.num_classes);
  ds.features = Matrix(n, 2);
  ds.labels.reserve(n);
  std::size_t r = 0;
  for (int c = 0; c < p.num_classes; ++c) {
    for (std::size_t i = 0; i < p.n_per_class; ++i, ++r) {
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      const double jitter = rng.normal();
      const double radius = static_cast<double>(c + 1) + p.noise_std * jitter;
      ds.features(r, 0) = radius * std::cos(angle);
      ds.features(r, 1) = radius * std::sin(angle);
      ds.labels.push_back(c);
    }
  }
  ds.true_labels = ds.labels;
  return ds;
}

SplitIndices split_indices(const LabeledDataset& ds, double test_fraction, std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorKind::invalid_parameter,
          "split: test_fraction must lie in (0, 1)");
  require(ds.size() >= 2, ErrorKind::invalid_parameter, "split: need at least two samples");
  const Labels& strata = ds.true_labels ? *ds.true_labels : ds.labels;
  std::map<Label, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < strata.size(); ++i) by_class[strata[i]].push_back(i);

  Rng rng(seed);
  SplitIndices out;
  for (auto& [label, members] : by_class) {
    Rng stream = rng.split(static_cast<std::uint64_t>(label));
    shuffle(std::span<std::size_t>(members), stream);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    out.test.insert(out.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double test_fraction,
                                                std::uint64_t seed) {
  const SplitIndices idx = split_indices(ds, test_fraction, seed);
  return {ds.subset(idx.train), ds.subset(idx.test)};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

[[noreturn]] void parse_error(std::size_t line, std::size_t col, const std::string& what) {
  fail(ErrorKind::parse, "csv line " + std::to_string(line) + ", column " + std::to_string(col) +
                             ": " + what);
}

double parse_real(std::string_view s, std::size_t line, std::size_t col) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
    parse_error(line, col, "non-numeric cell '" + std::string(s) + "'");
  return v;
}

Label parse_label(std::string_view s, std::size_t line, std::size_t col) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0)
    parse_error(line, col, "invalid class label '" + std::string(s) + "'");
  return v;
}

void append_real(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

void save_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::string out;
  const std::size_t d = ds.dims();
  const std::size_t a = ds.num_annotators();
  for (std::size_t j = 0; j < d; ++j) out += "f" + std::to_string(j) + ",";
  out += "label";
  if (ds.true_labels) out += ",true";
  for (std::size_t k = 0; k < a; ++k) out += ",ann" + std::to_string(k);
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      append_real(out, ds.features(i, j));
      out += ',';
    }
    out += std::to_string(ds.labels[i]);
    if (ds.true_labels) out += "," + std::to_string((*ds.true_labels)[i]);
    for (std::size_t k = 0; k < a; ++k) out += "," + std::to_string((*ds.annotator_labels)[i][k]);
    out += '\n';
  }
  write_file_atomic(path, out);
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) parse_error(1, 1, "missing header");
  const auto header = split_fields(line);

  std::size_t d = 0;
  while (d < header.size() && header[d] == "f" + std::to_string(d)) ++d;
  if (d == 0) parse_error(1, 1, "header must start with f0");
  if (d >= header.size() || header[d] != "label")
    parse_error(1, d + 1, "expected 'label' column after feature columns");
  std::size_t col = d + 1;
  const bool has_true = col < header.size() && header[col] == "true";
  if (has_true) ++col;
  std::size_t annotators = 0;
  while (col < header.size() && header[col] == "ann" + std::to_string(annotators)) {
    ++annotators;
    ++col;
  }
  if (col != header.size())
    parse_error(1, col + 1, "unexpected header field '" + std::string(header[col]) + "'");

  std::vector<double> values;
  LabeledDataset ds;
  if (has_true) ds.true_labels.emplace();
  if (annotators > 0) ds.annotator_labels.emplace();
  int max_label = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      parse_error(line_no, std::min(fields.size(), header.size()) + 1,
                  "expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(fields.size()));
    for (std::size_t j = 0; j < d; ++j) values.push_back(parse_real(fields[j], line_no, j + 1));
    std::size_t c = d;
    const Label y = parse_label(fields[c], line_no, c + 1);
    ds.labels.push_back(y);
    max_label = std::max(max_label, y);
    ++c;
    if (has_true) {
      const Label t = parse_label(fields[c], line_no, c + 1);
      ds.true_labels->push_back(t);
      max_label = std::max(max_label, t);
      ++c;
    }
    if (annotators > 0) {
      Labels row;
      row.reserve(annotators);
      for (std::size_t k = 0; k < annotators; ++k, ++c) {
        row.push_back(parse_label(fields[c], line_no, c + 1));
        max_label = std::max(max_label, row.back());
      }
      ds.annotator_labels->push_back(std::move(row));
    }
  }
  ds.features = Matrix(ds.labels.size(), d, std::move(values));
  ds.num_classes = std::max(2, max_label + 1);
  ds.validate();
  return ds;
}

}  // namespace nlab
