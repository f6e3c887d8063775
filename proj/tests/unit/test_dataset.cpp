#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "starchnet/dataset.hpp"
#include "starchnet/error.hpp"
#include "starchnet/rng.hpp"
#include "support.hpp"

using namespace starchnet;

namespace {

DatasetManifest synthetic(std::size_t per_class, std::size_t classes) {
  DatasetManifest m;
  for (std::size_t c = 0; c < classes; ++c) m.class_names.push_back("c" + std::to_string(c));
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) m.records.push_back({"c" + std::to_string(c) + "/" + std::to_string(i), c, {}});
  return m;
}

}  // namespace

TEST(Scan, StarchTreeHasAllRecords) {
  support::TempDir dir;
  const std::vector<std::string> classes(support::kStarchClasses.begin(), support::kStarchClasses.end());
  const std::vector<std::size_t> counts_in(support::kImageCounts.begin(), support::kImageCounts.end());
  support::make_class_tree(dir.path(), classes, counts_in);
  const ScanResult scan = scan_dataset(dir.path());
  EXPECT_TRUE(scan.warnings.empty());
  std::size_t expected = 0;
  for (std::size_t n : support::kImageCounts) expected += n;
  EXPECT_EQ(scan.manifest.records.size(), expected);
  EXPECT_EQ(scan.manifest.class_names, classes);
  EXPECT_TRUE(std::is_sorted(scan.manifest.records.begin(), scan.manifest.records.end(),
                             [](const auto& a, const auto& b) { return a.path < b.path; }));
  for (const auto& r : scan.manifest.records) EXPECT_FALSE(r.split.has_value());

  const DatasetManifest split = stratified_split(scan.manifest, SplitRatios{}, 7);
  const auto counts = split.split_counts();
  ASSERT_EQ(counts.size(), 9u);
  EXPECT_EQ(counts[0], (std::array<std::size_t, 3>{55, 22, 33}));  // Cassava, 110 images
  for (std::size_t c = 0; c < 9; ++c) {
    const double n = static_cast<double>(support::kImageCounts[c]);
    EXPECT_EQ(counts[c][0] + counts[c][1] + counts[c][2], support::kImageCounts[c]);
    EXPECT_LE(std::abs(static_cast<double>(counts[c][0]) - 0.5 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(counts[c][1]) - 0.2 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(counts[c][2]) - 0.3 * n), 1.0);
  }
}

TEST(Scan, SkipsNonImagesAndUndecodableFiles) {
  support::TempDir dir;
  support::make_class_tree(dir.path(), {"a"}, {1});
  std::ofstream(dir / "a/readme.txt") << "hello";
  std::ofstream(dir / "a/broken.png") << "garbage";
  const ScanResult scan = scan_dataset(dir.path());
  EXPECT_EQ(scan.manifest.records.size(), 1u);
  ASSERT_EQ(scan.warnings.size(), 2u);
  EXPECT_NE(scan.warnings[0].find("broken.png"), std::string::npos);
  EXPECT_NE(scan.warnings[1].find(".txt"), std::string::npos);
}

TEST(Scan, EmptyRootIsDatasetError) {
  support::TempDir dir;
  EXPECT_THROW(scan_dataset(dir.path()), DatasetError);
  EXPECT_THROW(scan_dataset(dir / "nope"), DatasetError);
}

TEST(Split, SizesUseLargestRemainder) {
  EXPECT_EQ(split_sizes(10, {}), (std::array<std::size_t, 3>{5, 2, 3}));
  EXPECT_EQ(split_sizes(110, {}), (std::array<std::size_t, 3>{55, 22, 33}));
  // Independent oracle: floors first, then hand out the leftovers by remainder.
  for (std::size_t n = 3; n < 200; ++n) {
    const auto got = split_sizes(n, {});
    EXPECT_EQ(got[0] + got[1] + got[2], n);
    const double exact[3] = {0.5 * n, 0.2 * n, 0.3 * n};
    for (int k = 0; k < 3; ++k) EXPECT_LT(std::abs(static_cast<double>(got[k]) - exact[k]), 1.0) << n;
  }
  EXPECT_THROW((SplitRatios{0.5, 0.5, 0.1}.validate()), ArgumentError);
  EXPECT_THROW((SplitRatios{0.0, 0.5, 0.5}.validate()), ArgumentError);
}

TEST(Split, DeterministicPartitionAndSeedSensitive) {
  const DatasetManifest m = synthetic(20, 3);
  const DatasetManifest a = stratified_split(m, {}, 1);
  const DatasetManifest b = stratified_split(m, {}, 1);
  const DatasetManifest c = stratified_split(m, {}, 2);
  bool differs = false;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    ASSERT_TRUE(a.records[i].split.has_value());
    EXPECT_EQ(a.records[i].split, b.records[i].split);
    differs |= a.records[i].split != c.records[i].split;
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.split_counts(), c.split_counts());
  std::size_t total = 0;
  for (Split s : kAllSplits) total += a.indices_of(s).size();
  EXPECT_EQ(total, m.records.size());
}

TEST(Split, TooSmallClassIsNamed) {
  DatasetManifest m = synthetic(5, 1);
  m.class_names.push_back("tiny");
  m.records.push_back({"tiny/0", 1, {}});
  try {
    stratified_split(m, {}, 0);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("tiny"), std::string::npos);
  }
}

TEST(Manifest, JsonRoundTrip) {
  const DatasetManifest m = stratified_split(synthetic(4, 2), {}, 9);
  support::TempDir dir;
  save_manifest(m, dir / "m.json");
  const DatasetManifest back = load_manifest(dir / "m.json");
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_EQ(back.class_names, m.class_names);
  ASSERT_EQ(back.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(back.records[i].path, m.records[i].path);
    EXPECT_EQ(back.records[i].label, m.records[i].label);
    EXPECT_EQ(back.records[i].split, m.records[i].split);
  }
  const auto j = manifest_to_json(m);
  EXPECT_TRUE(j.at("records").at(0).contains("class"));
  auto bad = j;
  bad["records"][0]["class"] = 5;
  EXPECT_THROW(manifest_from_json(bad), DatasetError);
  EXPECT_THROW(parse_split("holdout"), ArgumentError);
}

TEST(Batches, SeventeenRecordsMakeEightEightOne) {
  DatasetManifest m = synthetic(17, 1);
  for (auto& r : m.records) r.split = Split::Train;
  const auto plan = plan_batches(m, Split::Train, 8, false, 0, 0);
  ASSERT_EQ(plan.size(), 3u);
  EXPECT_EQ(plan[0].size(), 8u);
  EXPECT_EQ(plan[1].size(), 8u);
  EXPECT_EQ(plan[2].size(), 1u);
  for (std::size_t i = 0; i < 17; ++i) EXPECT_EQ(plan[i / 8][i % 8], i);

  EXPECT_EQ(plan_batches(m, Split::Train, 8, true, 3, 1), plan_batches(m, Split::Train, 8, true, 3, 1));
  EXPECT_NE(plan_batches(m, Split::Train, 8, true, 3, 1), plan_batches(m, Split::Train, 8, true, 3, 2));
  auto flat = plan_batches(m, Split::Train, 8, true, 3, 1);
  std::multiset<std::size_t> seen;
  for (const auto& b : flat) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 17u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 17u);
}

TEST(Batches, WorkerCountDoesNotChangeTensors) {
  support::TempDir dir;
  support::make_black_white_set(dir.path(), 6, 12, 4);
  DatasetManifest m = stratified_split(scan_dataset(dir.path()).manifest, {}, 5);
  BatchOptions one{4, true, true, 11, 16, 1};
  BatchOptions four = one;
  four.workers = 4;
  const auto a = make_batches(m, dir.path(), Split::Train, one, 2);
  const auto b = make_batches(m, dir.path(), Split::Train, four, 2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].records, b[i].records);
    EXPECT_EQ(a[i].labels, b[i].labels);
    EXPECT_TRUE(bit_equal(a[i].images, b[i].images));
    EXPECT_EQ(a[i].images.shape(), (Shape{a[i].size(), 3, 16, 16}));
    for (double v : a[i].images.to_vector()) {
      ASSERT_GE(v, -1.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Batches, EvalSplitsAreUnaugmentedAndStable) {
  support::TempDir dir;
  support::make_black_white_set(dir.path(), 6, 8, 4);
  DatasetManifest m = stratified_split(scan_dataset(dir.path()).manifest, {}, 5);
  const auto a = make_batches(m, dir.path(), Split::Val, {8, false, false, 1, 8, 1}, 0);
  const auto b = make_batches(m, dir.path(), Split::Val, {8, false, false, 2, 8, 1}, 3);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_TRUE(bit_equal(a[0].images, b[0].images));
  const auto val = m.indices_of(Split::Val);
  EXPECT_EQ(a[0].records, val);
}

TEST(Batches, UnreadableRecordIsSkippedWithWarning) {
  support::TempDir dir;
  support::make_black_white_set(dir.path(), 4, 8, 1);
  DatasetManifest m = scan_dataset(dir.path()).manifest;
  for (auto& r : m.records) r.split = Split::Test;
  std::filesystem::remove(dir.path() / m.records[1].path);
  const auto batches = make_batches(m, dir.path(), Split::Test, {8, false, false, 0, 8, 1}, 0);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].size(), 7u);
  ASSERT_EQ(batches[0].warnings.size(), 1u);
  EXPECT_NE(batches[0].warnings[0].find(m.records[1].path), std::string::npos);
}

TEST(Batches, EmptySplitIsDatasetError) {
  DatasetManifest m = synthetic(3, 1);
  for (auto& r : m.records) r.split = Split::Train;
  EXPECT_THROW(ManifestBatches(m, "/tmp", Split::Val, {}), DatasetError);
}

TEST(Preprocess, DeterministicChain) {
  ImageBuffer img(30, 20, 0.25f);
  img.at(3, 4, 1) = 0.9f;
  EXPECT_TRUE(bit_equal(preprocess(img, 24, nullptr), preprocess(img, 24, nullptr)));
  Rng r1(2), r2(2);
  EXPECT_TRUE(bit_equal(preprocess(img, 24, &r1), preprocess(img, 24, &r2)));
  EXPECT_EQ(preprocess(img, 24, nullptr).shape(), (Shape{3, 24, 24}));
}
