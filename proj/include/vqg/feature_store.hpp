#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "vqg/tensor.hpp"

namespace vqg {

/// image_id -> fixed-width feature vector (precomputed features, or flattened
/// 3xHxW pixels in synthetic mode).
///
/// File layout: "VQGF", u32 version, u32 count, u32 width, then `count`
/// records of (u64 image_id, width x f64), all little-endian.
class FeatureStore {
 public:
  static constexpr std::uint32_t kVersion = 1;

  explicit FeatureStore(std::size_t width = 512);

  void add(std::uint64_t image_id, std::vector<double> features);
  bool contains(std::uint64_t image_id) const { return index_.count(image_id) != 0; }
  std::span<const double> get(std::uint64_t image_id) const;
  std::size_t width() const { return width_; }
  std::size_t size() const { return ids_.size(); }
  /// Insertion order.
  const std::vector<std::uint64_t>& ids() const { return ids_; }

  /// Stacked [B, width] tensor (no gradient).
  Tensor gather(std::span<const std::uint64_t> image_ids) const;

  void save(const std::filesystem::path& path) const;
  static FeatureStore load(const std::filesystem::path& path);

  bool operator==(const FeatureStore& other) const {
    return width_ == other.width_ && ids_ == other.ids_ && data_ == other.data_;
  }

 private:
  std::size_t width_;
  std::vector<std::uint64_t> ids_;
  std::vector<double> data_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

}  // namespace vqg
