#pragma once

#include "xri/model.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

namespace xri::test {

// Seeded generator for the property tests.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
  }
  bool coin() { return integer(0, 1) == 1; }
  template <typename C>
  const auto& pick(const C& c) {
    return c[static_cast<std::size_t>(integer(0, static_cast<std::int64_t>(c.size()) - 1))];
  }
  ColorRGB color() { return {uniform(0, 1), uniform(0, 1), uniform(0, 1)}; }
  Vector3 vec(double r) { return {uniform(-r, r), uniform(-r, r), uniform(-r, r)}; }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path golden(const std::string& name) {
  return std::filesystem::path(XRI_SOURCE_DIR) / "tests" / "golden" / name;
}

inline std::filesystem::path scenario_file(const std::string& name) {
  return std::filesystem::path(XRI_SOURCE_DIR) / "scenarios" / name;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("xri-test-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace xri::test
