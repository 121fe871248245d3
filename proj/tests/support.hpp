#pragma once

#include "rar/catalog.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace rar::test {

inline std::filesystem::path catalog_path() { return std::filesystem::path(RAR_DATA_DIR) / "objects.json"; }

inline const Catalog& catalog() {
  static const Catalog c = load_catalog(catalog_path());
  return c;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("rar-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace rar::test
