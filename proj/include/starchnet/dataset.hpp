#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "starchnet/image.hpp"
#include "starchnet/tensor.hpp"

namespace starchnet {

enum class Split { Train, Test, Val };

inline constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Test, Split::Val};

const char* split_name(Split split);
Split parse_split(const std::string& text);

struct ManifestRecord {
  /// Relative to the dataset root, '/'-separated.
  std::string path;
  std::size_t label = 0;
  std::optional<Split> split;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestRecord> records;

  std::vector<std::size_t> indices_of(Split split) const;
  /// counts[class][split] for the three splits.
  std::vector<std::array<std::size_t, 3>> split_counts() const;
};

/// {seed, class_names: [...], records: [{path, class, split}]}; `class` is the
/// class index and `split` is null while unassigned.
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct ScanResult {
  DatasetManifest manifest;
  /// One line per skipped file.
  std::vector<std::string> warnings;
};

/// Lists root/<class>/<image>. Class names are the sorted subdirectory names;
/// records are sorted by path. Files that are not decodable JPEG/PNG images
/// are skipped with a warning. Raises DatasetError when no image is found.
ScanResult scan_dataset(const std::filesystem::path& root);

struct SplitRatios {
  double train = 0.5;
  double test = 0.2;
  double val = 0.3;

  void validate() const;
};

/// Per-class split counts: floor of count * ratio, with the leftover records
/// going to the largest fractional parts (ties in train, test, val order).
std::array<std::size_t, 3> split_sizes(std::size_t count, const SplitRatios& ratios);

/// Shuffles each class with a generator derived from (seed, class index) and
/// tags records per split_sizes(). Record order is preserved; the manifest
/// seed is set to `seed`.
DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios,
                                 std::uint64_t seed);

/// Decode -> resize to size x size -> [augment] -> normalize.
Tensor preprocess(const ImageBuffer& image, std::size_t size, Rng* augment_rng);

struct Batch {
  Tensor images;  // B x 3 x size x size
  std::vector<std::size_t> labels;
  /// Manifest record index of each sample.
  std::vector<std::size_t> records;
  /// Samples dropped because they failed to decode.
  std::vector<std::string> warnings;

  std::size_t size() const { return labels.size(); }
};

/// Source of batches for one split, re-plannable per epoch.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t num_batches(std::size_t epoch) const = 0;
  virtual Batch batch(std::size_t epoch, std::size_t index) const = 0;
};

/// Record indices per batch. With shuffle the split order is permuted by a
/// generator derived from (seed, epoch); otherwise manifest order is kept.
/// The last partial batch is kept.
std::vector<std::vector<std::size_t>> plan_batches(const DatasetManifest& manifest, Split split,
                                                   std::size_t batch_size, bool shuffle, std::uint64_t seed,
                                                   std::size_t epoch);

struct BatchOptions {
  std::size_t batch_size = 8;
  bool shuffle = false;
  bool augment = false;
  std::uint64_t seed = 0;
  std::size_t image_size = 224;
  /// Decode threads per batch. Results do not depend on this value.
  std::size_t workers = 1;
};

/// Loads batches from disk for one split of a manifest. Each sample's
/// augmentation draws from a generator derived from (seed, epoch, record), so
/// batch contents are a pure function of (seed, epoch).
class ManifestBatches final : public BatchSource {
 public:
  ManifestBatches(DatasetManifest manifest, std::filesystem::path root, Split split, BatchOptions options);

  std::size_t num_batches(std::size_t epoch) const override;
  Batch batch(std::size_t epoch, std::size_t index) const override;
  std::size_t size() const { return split_size_; }

 private:
  DatasetManifest manifest_;
  std::filesystem::path root_;
  Split split_;
  BatchOptions options_;
  std::size_t split_size_;
};

/// Convenience: every batch of one epoch in order.
std::vector<Batch> make_batches(const DatasetManifest& manifest, const std::filesystem::path& root, Split split,
                                const BatchOptions& options, std::size_t epoch = 0);

/// Pre-built batches, identical every epoch.
class InMemoryBatches final : public BatchSource {
 public:
  explicit InMemoryBatches(std::vector<Batch> batches) : batches_(std::move(batches)) {}
  std::size_t num_batches(std::size_t) const override { return batches_.size(); }
  Batch batch(std::size_t, std::size_t index) const override { return batches_.at(index); }

 private:
  std::vector<Batch> batches_;
};

}  // namespace starchnet
