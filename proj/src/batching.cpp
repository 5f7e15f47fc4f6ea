#include "vqg/batching.hpp"

#include <numeric>

#include "vqg/errors.hpp"
#include "vqg/rng.hpp"

namespace vqg {

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 const FeatureStore* store) {
  if (indices.empty()) throw Error("make_batch: no indices");
  Batch b;
  b.size = indices.size();
  b.indices.assign(indices.begin(), indices.end());
  b.question_len = samples[indices[0]].question.ids.size();
  b.answer_len = samples[indices[0]].answer.ids.size();
  for (std::size_t i : indices) {
    if (i >= samples.size()) throw Error("make_batch: index " + std::to_string(i) + " out of range");
    const Sample& s = samples[i];
    if (s.question.ids.size() != b.question_len || s.answer.ids.size() != b.answer_len) {
      throw Error("make_batch: samples have different sequence lengths");
    }
    b.image_ids.push_back(s.image_id);
    b.question_ids.push_back(s.question_id);
    b.questions.insert(b.questions.end(), s.question.ids.begin(), s.question.ids.end());
    b.answers.insert(b.answers.end(), s.answer.ids.begin(), s.answer.ids.end());
    b.categories.push_back(s.category_id);
  }
  b.question_mask = make_pad_mask(b.questions, b.size, b.question_len);
  b.answer_mask = make_pad_mask(b.answers, b.size, b.answer_len);
  if (store) b.images = store->gather(b.image_ids);
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch, bool shuffle) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng = Rng::derive(seed, "epoch/" + std::to_string(epoch));
    rng.shuffle(std::span<std::size_t>(order));
  }
  return order;
}

std::vector<Batch> batches(std::span<const Sample> samples, std::size_t batch_size, std::uint64_t seed,
                           bool shuffle, const FeatureStore* store, std::size_t epoch) {
  if (batch_size == 0) throw Error("batch_size must be at least 1");
  const auto order = epoch_order(samples.size(), seed, epoch, shuffle);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    out.push_back(make_batch(samples, std::span<const std::size_t>(order).subspan(start, len), store));
  }
  return out;
}

BatchStream::BatchStream(std::span<const Sample> samples, std::size_t batch_size, std::uint64_t seed,
                         bool shuffle, const FeatureStore* store)
    : samples_(samples), batch_size_(batch_size), seed_(seed), shuffle_(shuffle), store_(store) {
  if (batch_size == 0) throw Error("batch_size must be at least 1");
  if (samples.empty()) throw Error("batch stream over an empty sample list");
  order_ = epoch_order(samples_.size(), seed_, 0, shuffle_);
}

void BatchStream::set_position(Position pos) {
  if (pos.cursor >= samples_.size()) throw Error("batch stream cursor out of range");
  pos_ = pos;
  order_ = epoch_order(samples_.size(), seed_, pos_.epoch, shuffle_);
}

Batch BatchStream::next() {
  const std::size_t len = std::min(batch_size_, order_.size() - pos_.cursor);
  Batch b = make_batch(samples_, std::span<const std::size_t>(order_).subspan(pos_.cursor, len), store_);
  pos_.cursor += len;
  if (pos_.cursor == order_.size()) {
    pos_.cursor = 0;
    ++pos_.epoch;
    order_ = epoch_order(samples_.size(), seed_, pos_.epoch, shuffle_);
  }
  return b;
}

}  // namespace vqg
