#include "jepamatch/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "jepamatch/errors.hpp"
#include "jepamatch/rng.hpp"

namespace jepamatch {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::size_t Dataset::num_labeled() const {
  return static_cast<std::size_t>(std::count(labeled.begin(), labeled.end(), 1));
}

std::vector<std::size_t> Dataset::unlabeled_class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!labeled[i])
      ++counts[static_cast<std::size_t>(labels[i])];
  return counts;
}

double Dataset::imbalance_factor() const {
  auto counts = unlabeled_class_counts();
  auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (counts.empty() || *lo == 0)
    return 0.0;
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

std::vector<std::size_t> long_tail_counts(std::size_t num_classes, double n_max,
                                          double gamma) {
  std::vector<std::size_t> counts(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double frac =
        num_classes > 1 ? static_cast<double>(c) / static_cast<double>(num_classes - 1)
                        : 0.0;
    counts[c] = static_cast<std::size_t>(std::llround(n_max * std::pow(gamma, -frac)));
  }
  return counts;
}

std::vector<std::size_t> long_tail_counts_for_total(std::size_t num_classes,
                                                    std::size_t total,
                                                    double gamma) {
  double mass = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c)
    mass += std::pow(gamma, -static_cast<double>(c) /
                                static_cast<double>(num_classes - 1));
  return long_tail_counts(num_classes, static_cast<double>(total) / mass, gamma);
}

namespace {

void validate_common(std::size_t num_classes, std::size_t dim, double gamma) {
  if (num_classes < 2)
    throw ConfigError("dataset.num_classes", "need at least 2 classes");
  if (dim < 2)
    throw ConfigError("dataset.dim", "need at least 2 dimensions");
  if (!(gamma >= 1.0) || !std::isfinite(gamma))
    throw ConfigError("dataset.gamma", "imbalance factor must be >= 1");
}

std::vector<std::size_t> checked_counts(std::size_t num_classes,
                                        std::size_t unlabeled_total, double gamma) {
  if (unlabeled_total == 0)
    return std::vector<std::size_t>(num_classes, 0);
  auto counts = long_tail_counts_for_total(num_classes, unlabeled_total, gamma);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] == 0)
      throw ConfigError("dataset.unlabeled_total",
                        "class " + std::to_string(c) +
                            " rounds to zero unlabeled samples");
  return counts;
}

// Row layout shared by both generators: labeled block (class-balanced), then
// the unlabeled block with the long-tail counts. `sample(c, row)` fills one row.
template <typename SampleFn>
Dataset assemble(std::size_t num_classes, std::size_t dim,
                 std::size_t labels_per_class,
                 const std::vector<std::size_t> &unlabeled_counts,
                 SampleFn &&sample) {
  const std::size_t n = labels_per_class * num_classes;
  const std::size_t u =
      std::accumulate(unlabeled_counts.begin(), unlabeled_counts.end(), std::size_t{0});
  Dataset ds;
  ds.num_classes = num_classes;
  ds.features = Tensor({n + u, dim});
  ds.labels.reserve(n + u);
  ds.labeled.reserve(n + u);
  std::size_t row = 0;
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t k = 0; k < labels_per_class; ++k, ++row) {
      sample(c, ds.features.row(row));
      ds.labels.push_back(static_cast<int>(c));
      ds.labeled.push_back(1);
    }
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t k = 0; k < unlabeled_counts[c]; ++k, ++row) {
      sample(c, ds.features.row(row));
      ds.labels.push_back(static_cast<int>(c));
      ds.labeled.push_back(0);
    }
  return ds;
}

} // namespace

Dataset gen_gaussian_mixture(std::size_t num_classes, std::size_t dim,
                             std::size_t labels_per_class,
                             std::size_t unlabeled_total, double separation,
                             double gamma, std::uint64_t seed) {
  validate_common(num_classes, dim, gamma);
  if (dim < num_classes)
    throw ConfigError("dataset.dim", "gaussian mixture needs dim >= num_classes (" +
                                         std::to_string(dim) + " < " +
                                         std::to_string(num_classes) + ")");
  if (!(separation > 0.0))
    throw ConfigError("dataset.separation", "must be positive");
  auto counts = checked_counts(num_classes, unlabeled_total, gamma);
  Rng rng = substream(seed, "dataset.gaussian_mixture");
  std::normal_distribution<double> normal(0.0, 1.0);
  return assemble(num_classes, dim, labels_per_class, counts,
                  [&](std::size_t c, std::span<double> row) {
                    for (auto &v : row)
                      v = normal(rng);
                    row[c] += separation;
                  });
}

Dataset gen_rings(std::size_t num_classes, std::size_t dim,
                  std::size_t labels_per_class, std::size_t unlabeled_total,
                  double inner_radius, double radius_step, double noise,
                  double gamma, std::uint64_t seed) {
  validate_common(num_classes, dim, gamma);
  if (!(inner_radius > 0.0))
    throw ConfigError("dataset.inner_radius", "must be positive");
  if (!(radius_step > 0.0))
    throw ConfigError("dataset.radius_step", "must be positive");
  if (!(noise >= 0.0))
    throw ConfigError("dataset.noise", "must be non-negative");
  auto counts = checked_counts(num_classes, unlabeled_total, gamma);
  Rng rng = substream(seed, "dataset.rings");
  std::normal_distribution<double> normal(0.0, 1.0);
  return assemble(num_classes, dim, labels_per_class, counts,
                  [&](std::size_t c, std::span<double> row) {
                    double norm = 0.0;
                    do {
                      norm = 0.0;
                      for (auto &v : row) {
                        v = normal(rng);
                        norm += v * v;
                      }
                    } while (norm == 0.0);
                    const double radius =
                        inner_radius + radius_step * static_cast<double>(c);
                    const double s = radius / std::sqrt(norm);
                    for (auto &v : row)
                      v = v * s + (noise > 0.0 ? noise * normal(rng) : 0.0);
                  });
}

Dataset generate(const DatasetConfig &cfg) {
  switch (cfg.generator) {
  case Generator::gaussian_mixture:
    return gen_gaussian_mixture(cfg.num_classes, cfg.dim, cfg.labels_per_class,
                                cfg.unlabeled_total, cfg.separation, cfg.gamma,
                                cfg.seed);
  case Generator::rings:
    return gen_rings(cfg.num_classes, cfg.dim, cfg.labels_per_class,
                     cfg.unlabeled_total, cfg.inner_radius, cfg.radius_step,
                     cfg.noise, cfg.gamma, cfg.seed);
  }
  throw ConfigError("dataset.generator", "unknown generator");
}

Dataset generate_test_split(const DatasetConfig &cfg) {
  DatasetConfig test = cfg;
  test.labels_per_class = 0;
  test.unlabeled_total = cfg.test_per_class * cfg.num_classes;
  test.gamma = 1.0;
  test.seed = substream_seed(cfg.seed, "dataset.test");
  if (test.unlabeled_total == 0)
    throw ConfigError("dataset.test_per_class", "must be positive");
  return generate(test);
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

constexpr char kMagic[4] = {'J', 'M', 'D', 'S'};

template <typename T> void put(std::vector<std::uint8_t> &out, T v) {
  const auto *p = reinterpret_cast<const std::uint8_t *>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T> T get(const char *what) {
    if (bytes_.size() - pos_ < sizeof(T))
      throw FormatError(pos_, std::string("truncated payload reading ") + what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void require(std::uint64_t count, std::uint64_t width, const char *what) const {
    const std::uint64_t left = bytes_.size() - pos_;
    if (width != 0 && count > left / width)
      throw FormatError(pos_, std::string("truncated payload: ") + what +
                                  " needs " + std::to_string(count * width) +
                                  " bytes, " + std::to_string(left) + " remain");
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_raw(const Dataset &ds) {
  std::vector<std::uint8_t> out;
  const std::uint64_t n = ds.num_labeled(), total = ds.size();
  out.reserve(48 + total * (ds.dim() * 8 + 5));
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(out, kDatasetFormatVersion);
  put<std::uint64_t>(out, n);
  put<std::uint64_t>(out, total - n);
  put<std::uint64_t>(out, ds.dim());
  put<std::uint64_t>(out, ds.num_classes);
  for (double v : ds.features.values())
    put<double>(out, v);
  for (int l : ds.labels)
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l));
  for (auto f : ds.labeled)
    put<std::uint8_t>(out, f);
  return out;
}

Dataset decode_raw(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  for (int i = 0; i < 4; ++i)
    if (r.get<char>("magic") != kMagic[i])
      throw FormatError(0, "bad magic, expected JMDS");
  const auto version_at = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kDatasetFormatVersion)
    throw FormatError(version_at, "unsupported version " + std::to_string(version));
  const auto n = r.get<std::uint64_t>("n");
  const auto u = r.get<std::uint64_t>("u");
  const auto d_at = r.pos();
  const auto d = r.get<std::uint64_t>("d");
  const auto c_at = r.pos();
  const auto C = r.get<std::uint64_t>("C");
  if (d == 0)
    throw FormatError(d_at, "dimension must be positive");
  if (C == 0)
    throw FormatError(c_at, "class count must be positive");
  const std::uint64_t rows = n + u;
  if (rows < n || rows == 0)
    throw FormatError(r.pos(), "row count overflow or empty dataset");
  if (d > std::uint64_t(-1) / rows)
    throw FormatError(d_at, "feature count overflow");
  r.require(rows * d, 8, "features");

  Dataset ds;
  ds.num_classes = C;
  std::vector<double> values(rows * d);
  for (auto &v : values)
    v = r.get<double>("features");
  ds.features = Tensor({rows, d}, std::move(values));
  r.require(rows, 4, "labels");
  ds.labels.resize(rows);
  for (auto &l : ds.labels) {
    const auto at = r.pos();
    const auto raw = r.get<std::uint32_t>("labels");
    if (raw >= C)
      throw FormatError(at, "label " + std::to_string(raw) + " out of range [0, " +
                                std::to_string(C) + ")");
    l = static_cast<int>(raw);
  }
  r.require(rows, 1, "labeled flags");
  ds.labeled.resize(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto at = r.pos();
    const auto f = r.get<std::uint8_t>("labeled flags");
    if (f > 1)
      throw FormatError(at, "labeled flag must be 0 or 1");
    if ((f == 1) != (i < n))
      throw FormatError(at, "labeled rows must be exactly the first n rows");
    ds.labeled[i] = f;
  }
  if (r.remaining() != 0)
    throw FormatError(r.pos(), "trailing bytes after payload");
  return ds;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path &path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("write failed for " + path.string());
}

void save_raw(const std::filesystem::path &path, const Dataset &ds) {
  write_file_bytes(path, encode_raw(ds));
}

Dataset load_raw(const std::filesystem::path &path) {
  return decode_raw(read_file_bytes(path));
}

// ---------------------------------------------------------------------------

TrainingView::TrainingView(const Dataset &ds)
    : features_(&ds.features), num_classes_(ds.num_classes) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labeled[i]) {
      labeled_rows_.push_back(i);
      labeled_labels_.push_back(ds.labels[i]);
    } else {
      unlabeled_rows_.push_back(i);
    }
  }
}

} // namespace jepamatch
