#include "support.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "starchnet/image.hpp"
#include "starchnet/rng.hpp"

namespace fs = std::filesystem;

namespace support {

TempDir::TempDir(const std::string& tag) {
  std::string pattern = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
  if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_solid_png(const fs::path& path, std::size_t height, std::size_t width, float value) {
  starchnet::ImageBuffer img(height, width, value);
  starchnet::write_png(img, path);
}

void make_class_tree(const fs::path& root, const std::vector<std::string>& classes,
                     const std::vector<std::size_t>& counts, std::size_t side) {
  for (std::size_t c = 0; c < classes.size(); ++c) {
    fs::create_directories(root / classes[c]);
    for (std::size_t i = 0; i < counts.at(c); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "img_%04zu.png", i);
      write_solid_png(root / classes[c] / name, side, side, static_cast<float>((c * 7 + i) % 256) / 255.0f);
    }
  }
}

void make_black_white_set(const fs::path& root, std::size_t per_class, std::size_t side, std::uint64_t seed) {
  starchnet::Rng rng(seed);
  const std::array<std::pair<const char*, float>, 2> classes{{{"black", 0.0f}, {"white", 1.0f}}};
  for (const auto& [name, base] : classes) {
    fs::create_directories(root / name);
    for (std::size_t i = 0; i < per_class; ++i) {
      starchnet::ImageBuffer img(side, side, base);
      for (auto& v : img.values) {
        const float noise = static_cast<float>(rng.uniform(0.0, 0.08));
        v = base > 0.5f ? base - noise : base + noise;
      }
      char file[64];
      std::snprintf(file, sizeof file, "%s_%02zu.png", name, i);
      starchnet::write_png(img, root / name / file);
    }
  }
}

namespace {

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') {
      q += "'\\''";
    } else {
      q += c;
    }
  }
  return q + "'";
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CommandResult run(const std::vector<std::string>& args) {
  TempDir tmp("starchnet-run");
  std::string cmd;
  for (const auto& a : args) cmd += quote(a) + " ";
  cmd += "> " + quote((tmp / "out").string()) + " 2> " + quote((tmp / "err").string());
  const int status = std::system(cmd.c_str());
  CommandResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(tmp / "out");
  r.err = read_file(tmp / "err");
  return r;
}

std::string cli_path() { return STARCHNET_CLI; }

}  // namespace support
