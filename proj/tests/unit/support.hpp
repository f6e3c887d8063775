#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace support {

// Reference tables from the starch study.
inline const std::vector<std::string> kStarchClasses{"Cassava", "Green peas", "Irish potato", "Maize",  "Millet",
                                                     "Oat",     "Rice",       "Tigernut",     "Wheat"};

// Images per class, in the order of kStarchClasses. These add up to 899 while
// the stated dataset total is 889; nothing in the source says which is wrong.
inline constexpr std::array<std::size_t, 9> kImageCounts{110, 119, 100, 100, 103, 81, 91, 83, 112};
inline constexpr std::size_t kStatedImageTotal = 889;

// MicroNet-pretrained model; rows actual, columns predicted.
inline const std::vector<std::vector<std::uint64_t>> kMicronetConfusion{
    {4, 6, 0, 3, 0, 0, 0, 2, 0},   {0, 12, 0, 0, 6, 0, 0, 8, 0}, {0, 0, 21, 1, 0, 0, 0, 0, 0},
    {0, 3, 0, 22, 0, 1, 0, 0, 0},  {0, 1, 0, 0, 1, 0, 0, 14, 0}, {0, 1, 0, 13, 0, 2, 0, 0, 0},
    {0, 0, 0, 0, 0, 0, 11, 0, 4},  {0, 1, 0, 0, 1, 0, 0, 20, 0}, {0, 0, 0, 0, 0, 4, 0, 0, 15}};

struct ReportRow {
  double precision, recall, f1;
  std::uint64_t support;
};

// MicroNet-pretrained per-class report.
inline const std::vector<ReportRow> kMicronetReport{
    {1.000000, 0.266667, 0.421053, 15}, {0.500000, 0.461538, 0.480000, 26}, {1.000000, 0.954545, 0.976744, 22},
    {0.564103, 0.846154, 0.676923, 26}, {0.125000, 0.062500, 0.083333, 16}, {0.285714, 0.125000, 0.173913, 16},
    {1.000000, 0.733333, 0.846154, 15}, {0.454545, 0.909091, 0.606061, 22}, {0.789474, 0.789474, 0.789474, 19}};

// ImageNet-pretrained per-class report.
inline const std::vector<ReportRow> kImagenetReport{
    {0.411765, 0.933333, 0.571429, 15}, {1.000000, 1.000000, 1.000000, 26}, {0.916667, 1.000000, 0.956522, 22},
    {0.857143, 0.230769, 0.363636, 26}, {0.833333, 0.312500, 0.454545, 16}, {1.000000, 0.937500, 0.967742, 16},
    {0.928571, 0.866667, 0.896552, 15}, {0.700000, 0.954545, 0.807692, 22}, {0.904762, 1.000000, 0.950000, 19}};

// Reported aggregates: accuracy, weighted precision, weighted recall, weighted f1.
inline constexpr std::array<double, 4> kImagenetAggregates{0.81, 0.86, 0.81, 0.77};
inline constexpr std::array<double, 4> kMicronetAggregates{0.60, 0.62, 0.60, 0.58};

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "starchnet");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Solid-colour RGB PNG.
void write_solid_png(const std::filesystem::path& path, std::size_t height, std::size_t width, float value);

// root/<class>/<class>_NNN.png with counts[i] images of `side` pixels each.
void make_class_tree(const std::filesystem::path& root, const std::vector<std::string>& classes,
                     const std::vector<std::size_t>& counts, std::size_t side = 2);

// Two classes, "black" and "white", n images each, solid colour with a little
// per-image noise so no two files are identical.
void make_black_white_set(const std::filesystem::path& root, std::size_t per_class, std::size_t side,
                          std::uint64_t seed);

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs `args` through /bin/sh with stdout and stderr captured.
CommandResult run(const std::vector<std::string>& args);

std::string cli_path();
std::string read_file(const std::filesystem::path& path);

}  // namespace support
