#include "cdu/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cdu/errors.hpp"

namespace cdu {

namespace {

std::uint64_t hash_dataset(const std::vector<double>& features, std::size_t dim,
                           const std::vector<int>& labels, int num_classes,
                           const std::vector<double>& targets, std::size_t target_dim) {
  Fnv1a h;
  h.u64(labels.size()).u64(dim).i64(num_classes).u64(target_dim);
  for (double x : features) h.f64(x);
  for (int y : labels) h.i64(y);
  for (double t : targets) h.f64(t);
  return h.digest();
}

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("IDX file truncated in header: " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    cells.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || cell.empty() || !std::isfinite(v)) {
    throw FormatError("CSV line " + std::to_string(line_no) + ": non-numeric cell '" +
                      cell + "'");
  }
  return v;
}

}  // namespace

Dataset::Dataset(std::vector<double> features, std::size_t dim, std::vector<int> labels,
                 int num_classes, std::string source, std::vector<double> targets,
                 std::size_t target_dim)
    : features_(std::move(features)),
      dim_(dim),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      source_(std::move(source)),
      targets_(std::move(targets)),
      target_dim_(target_dim) {
  require(dim_ >= 1, "Dataset: feature dimension must be >= 1");
  require(labels_.size() >= 1, "Dataset: at least one sample required");
  require(features_.size() == labels_.size() * dim_,
          "Dataset: feature matrix does not match labels");
  require(num_classes_ >= 1, "Dataset: num_classes must be >= 1");
  for (int y : labels_) {
    require(y >= 0 && y < num_classes_, "Dataset: label out of range");
  }
  require(targets_.size() == labels_.size() * target_dim_,
          "Dataset: target matrix does not match labels");
  for (double x : features_) require(std::isfinite(x), "Dataset: nonfinite feature");
  hash_ = hash_dataset(features_, dim_, labels_, num_classes_, targets_, target_dim_);
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows, std::string source) const {
  std::vector<double> f;
  std::vector<int> y;
  std::vector<double> t;
  f.reserve(rows.size() * dim_);
  y.reserve(rows.size());
  for (std::size_t r : rows) {
    require(r < size(), "Dataset::subset: row index out of range");
    f.insert(f.end(), row(r), row(r) + dim_);
    y.push_back(labels_[r]);
    if (has_targets()) t.insert(t.end(), target(r), target(r) + target_dim_);
  }
  return Dataset(std::move(f), dim_, std::move(y), num_classes_, std::move(source),
                 std::move(t), target_dim_);
}

Dataset load_mnist_idx(const std::filesystem::path& images,
                       const std::filesystem::path& labels,
                       std::optional<std::size_t> limit) {
  if (limit && *limit == 0) throw InvalidArgument("load_mnist_idx: limit must be positive");
  std::ifstream img(images, std::ios::binary);
  std::ifstream lab(labels, std::ios::binary);
  if (!img) throw FormatError("cannot open IDX images: " + images.string());
  if (!lab) throw FormatError("cannot open IDX labels: " + labels.string());

  if (read_be32(img, images) != 0x00000803) {
    throw FormatError("bad IDX image magic in " + images.string());
  }
  const std::size_t n_img = read_be32(img, images);
  const std::size_t rows = read_be32(img, images);
  const std::size_t cols = read_be32(img, images);
  if (read_be32(lab, labels) != 0x00000801) {
    throw FormatError("bad IDX label magic in " + labels.string());
  }
  const std::size_t n_lab = read_be32(lab, labels);
  if (n_img != n_lab) {
    throw FormatError("IDX image/label count mismatch (" + std::to_string(n_img) + " vs " +
                      std::to_string(n_lab) + ")");
  }
  const std::size_t n = limit ? std::min(*limit, n_img) : n_img;
  const std::size_t dim = rows * cols;
  if (n == 0 || dim == 0) throw FormatError("IDX files contain no samples");

  std::vector<unsigned char> pix(n * dim);
  if (!img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()))) {
    throw FormatError("IDX image payload shorter than header claims: " + images.string());
  }
  std::vector<unsigned char> lb(n);
  if (!lab.read(reinterpret_cast<char*>(lb.data()), static_cast<std::streamsize>(n))) {
    throw FormatError("IDX label payload shorter than header claims: " + labels.string());
  }
  std::vector<double> features(pix.size());
  for (std::size_t i = 0; i < pix.size(); ++i) features[i] = pix[i] / 255.0;
  std::vector<int> ys(lb.begin(), lb.end());
  int classes = 10;
  for (int y : ys) classes = std::max(classes, y + 1);
  return Dataset(std::move(features), dim, std::move(ys), classes, "mnist:" + images.string());
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CSV: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("CSV has no header: " + path.string());
  const auto header = split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end()) {
    throw FormatError("CSV " + path.string() + " has no label column '" + label_column + "'");
  }
  const std::size_t label_idx = static_cast<std::size_t>(it - header.begin());
  const std::size_t dim = header.size() - 1;
  if (dim == 0) throw FormatError("CSV has no feature columns: " + path.string());

  std::vector<double> features;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError("CSV line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const double v = parse_cell(cells[c], line_no);
      if (c == label_idx) {
        if (v < 0 || v != std::floor(v)) {
          throw FormatError("CSV line " + std::to_string(line_no) +
                            ": label must be a nonnegative integer");
        }
        labels.push_back(static_cast<int>(v));
      } else {
        features.push_back(v);
      }
    }
  }
  if (labels.empty()) throw FormatError("CSV has no data rows: " + path.string());
  int classes = 1;
  for (int y : labels) classes = std::max(classes, y + 1);
  return Dataset(std::move(features), dim, std::move(labels), classes, "csv:" + path.string());
}

void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write CSV: " + path.string());
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'x' << j << ',';
  out << label_column << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.dim(); ++j) {
      // shortest round-trip representation
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, data.row(i)[j]);
      out.write(buf, p - buf);
      out << ',';
    }
    out << data.label(i) << '\n';
  }
}

Dataset synth_blobs(std::size_t n, std::size_t dim, int classes, double separation,
                    std::uint64_t seed) {
  require(dim >= 1, "synth_blobs: dim must be >= 1");
  require(classes >= 2, "synth_blobs: need at least 2 classes");
  require(n >= static_cast<std::size_t>(classes), "synth_blobs: need n >= classes");
  require(separation >= 0.0 && std::isfinite(separation),
          "synth_blobs: separation must be finite and nonnegative");

  // Class c sits at +/- separation * e_{c mod dim}; the sign flips every `dim`
  // classes so up to 2*dim classes get distinct vertices.
  SeededRng rng(seed, "synth_blobs");
  std::vector<double> features(n * dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    labels[i] = c;
    const std::size_t axis = static_cast<std::size_t>(c) % dim;
    const double sign = ((static_cast<std::size_t>(c) / dim) % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t j = 0; j < dim; ++j) {
      features[i * dim + j] = rng.normal() + (j == axis ? sign * separation : 0.0);
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    double lo = features[j], hi = features[j];
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, features[i * dim + j]);
      hi = std::max(hi, features[i * dim + j]);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      features[i * dim + j] = (features[i * dim + j] - lo) / span;
    }
  }
  return Dataset(std::move(features), dim, std::move(labels), classes,
                 "blobs:n=" + std::to_string(n) + ",dim=" + std::to_string(dim) +
                     ",k=" + std::to_string(classes) + ",sep=" + std::to_string(separation) +
                     ",seed=" + std::to_string(seed));
}

TrainTest split_train_test(const Dataset& data, std::size_t n_test) {
  require(n_test >= 1 && n_test < data.size(), "split_train_test: n_test out of range");
  const std::size_t n_train = data.size() - n_test;
  std::vector<std::size_t> tr(n_train), te(n_test);
  for (std::size_t i = 0; i < n_train; ++i) tr[i] = i;
  for (std::size_t i = 0; i < n_test; ++i) te[i] = n_train + i;
  return {data.subset(tr, data.source() + "#train"), data.subset(te, data.source() + "#test")};
}

std::uint64_t SplitPlan::hash() const {
  Fnv1a h;
  h.u64(unlearn.size());
  for (auto i : unlearn) h.u64(i);
  h.u64(retained.size());
  for (auto i : retained) h.u64(i);
  return h.digest();
}

SplitPlan make_split(std::size_t n, std::size_t n_u, std::uint64_t seed) {
  if (n_u < 1 || n_u >= n) {
    throw InvalidArgument("make_split: need 1 <= n_u < n (n_u=" + std::to_string(n_u) +
                          ", n=" + std::to_string(n) + ")");
  }
  SeededRng rng(seed, "split");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = 0; i < n_u; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(perm[i], perm[j]);
  }
  SplitPlan plan;
  plan.seed = seed;
  plan.unlearn.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_u));
  std::sort(plan.unlearn.begin(), plan.unlearn.end());
  plan.retained.reserve(n - n_u);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k < plan.unlearn.size() && plan.unlearn[k] == i) {
      ++k;
    } else {
      plan.retained.push_back(i);
    }
  }
  return plan;
}

SplitPlan make_split(const Dataset& data, std::size_t n_u, std::uint64_t seed) {
  return make_split(data.size(), n_u, seed);
}

SplitPlan split_from_indices(std::size_t n, std::vector<std::size_t> unlearn,
                             std::uint64_t seed) {
  std::sort(unlearn.begin(), unlearn.end());
  require(std::adjacent_find(unlearn.begin(), unlearn.end()) == unlearn.end(),
          "split: duplicate unlearn index");
  require(!unlearn.empty(), "split: unlearn set must be nonempty");
  require(unlearn.back() < n, "split: unlearn index out of range");
  require(unlearn.size() < n, "split: retained set must be nonempty");
  SplitPlan plan;
  plan.seed = seed;
  plan.unlearn = std::move(unlearn);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k < plan.unlearn.size() && plan.unlearn[k] == i) {
      ++k;
    } else {
      plan.retained.push_back(i);
    }
  }
  return plan;
}

std::vector<std::vector<std::size_t>> hessian_batch_stream(
    const std::vector<std::size_t>& retained, std::size_t batch_size, std::size_t s,
    SeededRng& rng) {
  require(batch_size >= 1, "hessian_batch_stream: batch_size must be >= 1");
  require(s >= 1, "hessian_batch_stream: s must be >= 1");
  require(!retained.empty(), "hessian_batch_stream: retained set is empty");
  const std::size_t m = retained.size();
  std::vector<std::vector<std::size_t>> out(s);
  if (batch_size >= m) {
    for (auto& b : out) b = retained;
    return out;
  }
  // Partial Fisher-Yates on a persistent pool: each batch is a uniform subset
  // regardless of the pool's current order, and batches are independent.
  std::vector<std::size_t> pool = retained;
  for (auto& b : out) {
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(m - i));
      std::swap(pool[i], pool[j]);
    }
    b.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch_size));
    std::sort(b.begin(), b.end());
  }
  return out;
}

std::vector<std::vector<std::size_t>> hessian_batch_stream(const SplitPlan& plan,
                                                           std::size_t batch_size,
                                                           std::size_t s, SeededRng& rng) {
  return hessian_batch_stream(plan.retained, batch_size, s, rng);
}

}  // namespace cdu
