#include "vqg/feature_store.hpp"

#include <fstream>

#include "vqg/binary_io.hpp"
#include "vqg/errors.hpp"

namespace vqg {

FeatureStore::FeatureStore(std::size_t width) : width_(width) {
  if (width == 0) throw DimensionError("feature store width must be positive");
}

void FeatureStore::add(std::uint64_t image_id, std::vector<double> features) {
  if (features.size() != width_) {
    throw DimensionError("image " + std::to_string(image_id) + " has " +
                         std::to_string(features.size()) + " features, store width is " +
                         std::to_string(width_));
  }
  if (!index_.emplace(image_id, ids_.size()).second) {
    throw Error("duplicate image id " + std::to_string(image_id) + " in feature store");
  }
  ids_.push_back(image_id);
  data_.insert(data_.end(), features.begin(), features.end());
}

std::span<const double> FeatureStore::get(std::uint64_t image_id) const {
  auto it = index_.find(image_id);
  if (it == index_.end()) throw Error("image id " + std::to_string(image_id) + " not in feature store");
  return std::span<const double>(data_).subspan(it->second * width_, width_);
}

Tensor FeatureStore::gather(std::span<const std::uint64_t> image_ids) const {
  if (image_ids.empty()) throw DimensionError("gather: empty id list");
  std::vector<double> out;
  out.reserve(image_ids.size() * width_);
  for (auto id : image_ids) {
    auto row = get(id);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor({image_ids.size(), width_}, std::move(out));
}

void FeatureStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write feature store " + path.string());
  binary::write_magic(out, "VQGF");
  binary::write_le<std::uint32_t>(out, kVersion);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ids_.size()));
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(width_));
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    binary::write_le<std::uint64_t>(out, ids_[i]);
    binary::write_doubles(out, data_.data() + i * width_, width_);
  }
  if (!out) throw Error("failed writing feature store " + path.string());
}

FeatureStore FeatureStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read feature store " + path.string());
  const std::string file = path.string();
  binary::expect_magic(in, "VQGF", file);
  const auto version = binary::read_le<std::uint32_t>(in, file + " version");
  if (version != kVersion) throw ParseError(file + ": unsupported version " + std::to_string(version));
  const auto count = binary::read_le<std::uint32_t>(in, file + " count");
  const auto width = binary::read_le<std::uint32_t>(in, file + " width");
  if (width == 0) throw ParseError(file + ": zero feature width");
  FeatureStore store(width);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string rec = file + " record " + std::to_string(i);
    const auto id = binary::read_le<std::uint64_t>(in, rec);
    store.add(id, binary::read_doubles(in, width, rec));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(file + ": trailing bytes after records");
  return store;
}

}  // namespace vqg
