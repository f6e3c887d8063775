#include "starchnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "starchnet/error.hpp"
#include "starchnet/rng.hpp"

namespace starchnet {

const char* split_name(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Test:
      return "test";
    case Split::Val:
      return "val";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  if (text == "val") return Split::Val;
  throw ArgumentError("unknown split '" + text + "' (expected train, test or val)");
}

std::vector<std::size_t> DatasetManifest::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::array<std::size_t, 3>> DatasetManifest::split_counts() const {
  std::vector<std::array<std::size_t, 3>> counts(class_names.size(), {0, 0, 0});
  for (const auto& r : records) {
    if (r.split && r.label < counts.size()) ++counts[r.label][static_cast<std::size_t>(*r.split)];
  }
  return counts;
}

nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : manifest.records) {
    records.push_back({{"path", r.path},
                       {"class", r.label},
                       {"split", r.split ? nlohmann::json(split_name(*r.split)) : nlohmann::json(nullptr)}});
  }
  return {{"seed", manifest.seed}, {"class_names", manifest.class_names}, {"records", std::move(records)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.path = r.at("path").get<std::string>();
      rec.label = r.at("class").get<std::size_t>();
      if (rec.label >= m.class_names.size()) {
        throw DatasetError("manifest record " + rec.path + " has class " + std::to_string(rec.label) +
                           " but only " + std::to_string(m.class_names.size()) + " classes exist");
      }
      const auto& s = r.at("split");
      if (!s.is_null()) rec.split = parse_split(s.get<std::string>());
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  } catch (const ArgumentError& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write manifest " + path.string());
  out << manifest_to_json(manifest).dump(2) << '\n';
  if (!out) throw DatasetError("failed writing manifest " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open manifest " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
}

ScanResult scan_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
  ScanResult result;
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());

  std::vector<std::string> kept_classes;
  for (const auto& name : classes) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / name)) {
      if (entry.is_regular_file()) files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::string> good;
    for (const auto& file : files) {
      const std::string rel = name + "/" + file;
      try {
        decode_image(root / name / file);
        good.push_back(rel);
      } catch (const DecodeError& e) {
        result.warnings.push_back("skipped " + rel + ": " + e.what());
      }
    }
    if (good.empty()) {
      result.warnings.push_back("class directory " + name + " has no decodable images; ignored");
      continue;
    }
    const std::size_t label = kept_classes.size();
    kept_classes.push_back(name);
    for (auto& rel : good) result.manifest.records.push_back({std::move(rel), label, std::nullopt});
  }
  if (result.manifest.records.empty()) {
    throw DatasetError("no decodable images under " + root.string() + " (expected root/<class>/<image>)");
  }
  result.manifest.class_names = std::move(kept_classes);
  std::stable_sort(result.manifest.records.begin(), result.manifest.records.end(),
                   [](const auto& a, const auto& b) { return a.path < b.path; });
  return result;
}

void SplitRatios::validate() const {
  if (!(train > 0.0 && test > 0.0 && val > 0.0)) {
    throw ArgumentError("split ratios must all be positive");
  }
  if (std::abs(train + test + val - 1.0) > 1e-9) {
    throw ArgumentError("split ratios must sum to 1, got " + std::to_string(train + test + val));
  }
}

std::array<std::size_t, 3> split_sizes(std::size_t count, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.test, ratios.val};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(count) * r[i];
    // Guard against products like 110 * 0.2 = 21.999999999999996.
    double whole = std::floor(exact + 1e-9);
    sizes[i] = static_cast<std::size_t>(whole);
    remainder[i] = std::max(0.0, exact - whole);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < count; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  DatasetManifest out = manifest;
  out.seed = seed;
  std::vector<std::vector<std::size_t>> by_class(manifest.class_names.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) by_class.at(manifest.records[i].label).push_back(i);

  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < 3) {
      throw DatasetError("class " + manifest.class_names[c] + " has " + std::to_string(members.size()) +
                         " records, fewer than the 3 splits");
    }
    Rng rng(derive_seed(seed, "split", c));
    rng.shuffle(members.begin(), members.end());
    const auto sizes = split_sizes(members.size(), ratios);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < sizes[s]; ++k) out.records[members[pos++]].split = kAllSplits[s];
    }
  }
  return out;
}

Tensor preprocess(const ImageBuffer& image, std::size_t size, Rng* augment_rng) {
  ImageBuffer resized = resize_bilinear(image, size, size);
  if (augment_rng) resized = augment(resized, *augment_rng);
  return normalize(resized);
}

std::vector<std::vector<std::size_t>> plan_batches(const DatasetManifest& manifest, Split split,
                                                   std::size_t batch_size, bool shuffle, std::uint64_t seed,
                                                   std::size_t epoch) {
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  auto order = manifest.indices_of(split);
  if (shuffle) {
    Rng rng(derive_seed(seed, "shuffle", epoch));
    rng.shuffle(order.begin(), order.end());
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

ManifestBatches::ManifestBatches(DatasetManifest manifest, std::filesystem::path root, Split split,
                                 BatchOptions options)
    : manifest_(std::move(manifest)), root_(std::move(root)), split_(split), options_(options) {
  split_size_ = manifest_.indices_of(split_).size();
  if (split_size_ == 0) throw DatasetError(std::string("split ") + split_name(split_) + " is empty");
  if (options_.batch_size == 0) throw ArgumentError("batch size must be positive");
}

std::size_t ManifestBatches::num_batches(std::size_t) const {
  return (split_size_ + options_.batch_size - 1) / options_.batch_size;
}

Batch ManifestBatches::batch(std::size_t epoch, std::size_t index) const {
  const auto plan = plan_batches(manifest_, split_, options_.batch_size, options_.shuffle, options_.seed, epoch);
  const auto& members = plan.at(index);
  const std::size_t size = options_.image_size;

  std::vector<Tensor> samples(members.size());
  std::vector<std::string> errors(members.size());
  auto work = [&](std::size_t slot) {
    const std::size_t rec = members[slot];
    try {
      ImageBuffer img = decode_image(root_ / manifest_.records[rec].path);
      if (options_.augment) {
        Rng rng(derive_seed(options_.seed, "augment", epoch, rec));
        samples[slot] = preprocess(img, size, &rng);
      } else {
        samples[slot] = preprocess(img, size, nullptr);
      }
    } catch (const std::exception& e) {
      errors[slot] = e.what();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options_.workers, members.size()));
  if (workers == 1) {
    for (std::size_t s = 0; s < members.size(); ++s) work(s);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < members.size(); s += workers) work(s);
      });
    }
  }

  Batch batch;
  std::vector<float> pixels;
  for (std::size_t s = 0; s < members.size(); ++s) {
    if (!samples[s].defined()) {
      batch.warnings.push_back("skipped " + manifest_.records[members[s]].path + ": " + errors[s]);
      continue;
    }
    auto v = samples[s].data<float>();
    pixels.insert(pixels.end(), v.begin(), v.end());
    batch.labels.push_back(manifest_.records[members[s]].label);
    batch.records.push_back(members[s]);
  }
  if (!batch.labels.empty()) {
    batch.images = Tensor::from_vector({batch.labels.size(), 3, size, size}, std::move(pixels));
  }
  return batch;
}

std::vector<Batch> make_batches(const DatasetManifest& manifest, const std::filesystem::path& root, Split split,
                                const BatchOptions& options, std::size_t epoch) {
  ManifestBatches source(manifest, root, split, options);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < source.num_batches(epoch); ++i) out.push_back(source.batch(epoch, i));
  return out;
}

}  // namespace starchnet
