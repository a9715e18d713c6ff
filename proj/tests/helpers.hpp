#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>
#include <algorithm>

#include "cofair/data.hpp"
#include "cofair/tensor.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cofair_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Plain central difference on a scalar function of one coordinate.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Handwritten per-user lists, already split: `train`, `val`, `test` give
// item ids per user.
inline cofair::InteractionDataset toy_dataset(std::size_t items, const std::vector<std::vector<std::size_t>>& train,
                                              const std::vector<std::vector<std::size_t>>& val,
                                              const std::vector<std::vector<std::size_t>>& test) {
  cofair::InteractionDataset ds;
  ds.user_count = train.size();
  ds.item_count = items;
  for (std::size_t u = 0; u < ds.user_count; ++u) ds.user_ids.intern("u" + std::to_string(u));
  for (std::size_t i = 0; i < items; ++i) ds.item_ids.intern("i" + std::to_string(i));
  ds.train = train;
  ds.validation = val;
  ds.test = test;
  ds.positives.resize(ds.user_count);
  for (std::size_t u = 0; u < ds.user_count; ++u) {
    for (const auto* list : {&train[u], &val[u], &test[u]}) ds.positives[u].insert(ds.positives[u].end(), list->begin(), list->end());
    std::sort(ds.positives[u].begin(), ds.positives[u].end());
  }
  ds.is_split = true;
  return ds;
}

}  // namespace testing
