#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "jepamatch/tensor.hpp"

namespace jepamatch {

// Labeled rows come first, then unlabeled rows. `labels` carries ground truth
// for every row; training code never sees it directly (see TrainingView).
struct Dataset {
  Tensor features; // (n + u) x d
  std::vector<int> labels;
  std::vector<std::uint8_t> labeled; // 1 for the first n rows
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_labeled() const;
  std::size_t num_unlabeled() const { return size() - num_labeled(); }
  // Per-class row counts over the unlabeled part.
  std::vector<std::size_t> unlabeled_class_counts() const;
  // Ratio of the most to the least populated unlabeled class.
  double imbalance_factor() const;

  friend bool operator==(const Dataset &, const Dataset &) = default;
};

enum class Generator { gaussian_mixture, rings };

struct DatasetConfig {
  Generator generator = Generator::gaussian_mixture;
  std::size_t num_classes = 4;
  std::size_t dim = 32;
  std::size_t labels_per_class = 4;
  std::size_t unlabeled_total = 4000;
  double separation = 3.0; // mixture: distance of each center from the origin
  double gamma = 1.0;      // unlabeled head-to-tail ratio
  double noise = 0.1;      // rings: isotropic noise std
  double inner_radius = 1.0;
  double radius_step = 2.0;
  std::size_t test_per_class = 250;
  std::uint64_t seed = 0;
};

// n_c = round(n_max * gamma^(-c/(C-1))), c = 0..C-1.
std::vector<std::size_t> long_tail_counts(std::size_t num_classes, double n_max,
                                          double gamma);
// Long-tail counts whose sum is within num_classes of `total`.
std::vector<std::size_t> long_tail_counts_for_total(std::size_t num_classes,
                                                    std::size_t total,
                                                    double gamma);

// Class c centered at separation * e_c with identity covariance.
Dataset gen_gaussian_mixture(std::size_t num_classes, std::size_t dim,
                             std::size_t labels_per_class,
                             std::size_t unlabeled_total, double separation,
                             double gamma, std::uint64_t seed);

// Class c on the sphere of radius inner + c * step, plus N(0, noise^2 I).
Dataset gen_rings(std::size_t num_classes, std::size_t dim,
                  std::size_t labels_per_class, std::size_t unlabeled_total,
                  double inner_radius, double radius_step, double noise,
                  double gamma, std::uint64_t seed);

// Dispatches on cfg.generator.
Dataset generate(const DatasetConfig &cfg);
// Balanced held-out split from the same distribution, all rows unlabeled.
Dataset generate_test_split(const DatasetConfig &cfg);

// Binary "JMDS" format, little endian:
//   magic | version u32 | n u64 | u u64 | d u64 | C u64 |
//   features f64[(n+u)*d] | labels u32[n+u] | labeled flags u8[n+u]
inline constexpr std::uint32_t kDatasetFormatVersion = 1;
std::vector<std::uint8_t> encode_raw(const Dataset &ds);
Dataset decode_raw(std::span<const std::uint8_t> bytes);
void save_raw(const std::filesystem::path &path, const Dataset &ds);
Dataset load_raw(const std::filesystem::path &path);

// What the training loop may see: features of every row, labels of labeled
// rows only. Unlabeled ground truth is not reachable through this type.
class TrainingView {
public:
  explicit TrainingView(const Dataset &ds);

  const Tensor &features() const { return *features_; }
  std::size_t dim() const { return features_->cols(); }
  std::size_t num_classes() const { return num_classes_; }
  std::span<const std::size_t> labeled_rows() const { return labeled_rows_; }
  std::span<const int> labeled_labels() const { return labeled_labels_; }
  std::span<const std::size_t> unlabeled_rows() const { return unlabeled_rows_; }

private:
  const Tensor *features_;
  std::size_t num_classes_;
  std::vector<std::size_t> labeled_rows_;
  std::vector<int> labeled_labels_;
  std::vector<std::size_t> unlabeled_rows_;
};

// Reads file bytes; throws IoError when the file cannot be opened.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path);
void write_file_bytes(const std::filesystem::path &path,
                      std::span<const std::uint8_t> bytes);

} // namespace jepamatch
