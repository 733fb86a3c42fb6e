#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fustal/core.hpp"
#include "fustal/tensor.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("fustal_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
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

template <class Real = float>
fustal::diffnum::BasicTensor<Real> random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                                                 double lo = -1.0, double hi = 1.0) {
  fustal::diffnum::BasicTensor<Real> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(u(rng));
  return t;
}

inline fustal::Proposal proposal(const std::string& video, double s, double e, int cls, double conf) {
  return fustal::make_proposal(video, fustal::Interval(s, e), cls, conf);
}

inline fustal::GroundTruthSegment segment(const std::string& video, double s, double e, int cls) {
  return fustal::GroundTruthSegment{video, fustal::Interval(s, e), cls};
}

}  // namespace testing
