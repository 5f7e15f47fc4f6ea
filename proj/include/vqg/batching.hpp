#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqg/dataset.hpp"
#include "vqg/feature_store.hpp"
#include "vqg/tensor.hpp"
#include "vqg/text.hpp"

namespace vqg {

struct Batch {
  std::size_t size = 0;
  std::vector<std::size_t> indices;  // positions in the sample list
  std::vector<std::uint64_t> image_ids;
  std::vector<std::uint64_t> question_ids;
  std::vector<int> questions;  // [B, question_len]
  std::vector<int> answers;    // [B, answer_len]
  std::vector<int> categories;
  std::size_t question_len = 0;
  std::size_t answer_len = 0;
  Tensor images;  // [B, F]; undefined when no store was given
  PadMask question_mask;
  PadMask answer_mask;
};

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 const FeatureStore* store);

/// Sample order for one epoch: identity when `shuffle` is false, otherwise a
/// permutation drawn from a stream derived from (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle);

/// All batches of one epoch; the final short batch is kept.
std::vector<Batch> batches(std::span<const Sample> samples, std::size_t batch_size, std::uint64_t seed,
                           bool shuffle, const FeatureStore* store = nullptr, std::size_t epoch = 0);

/// Endless single-consumer batch iterator that crosses epoch boundaries.
/// Its position is two integers, so a checkpoint can restore it exactly.
class BatchStream {
 public:
  struct Position {
    std::size_t epoch = 0;
    std::size_t cursor = 0;  // next offset into the epoch order
    bool operator==(const Position&) const = default;
  };

  BatchStream(std::span<const Sample> samples, std::size_t batch_size, std::uint64_t seed, bool shuffle,
              const FeatureStore* store);

  Batch next();
  Position position() const { return pos_; }
  void set_position(Position pos);

 private:
  std::span<const Sample> samples_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  const FeatureStore* store_;
  Position pos_;
  std::vector<std::size_t> order_;
};

}  // namespace vqg
