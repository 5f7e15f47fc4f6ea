#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqg/batching.hpp"
#include "vqg/dataset.hpp"
#include "vqg/ops.hpp"
#include "vqg/rng.hpp"
#include "vqg/tensor.hpp"
#include "vqg/vectors.hpp"

namespace vqg {

enum class Variant { ImageOnly, ImageCat, ImageAnsCat, TextOnly };

const std::array<std::string, 4>& variant_names();
std::string variant_name(Variant v);
/// Throws ConfigError listing the valid names.
Variant parse_variant(std::string_view name);

/// Precomputed feature vectors, or raw 3x32x32 pixels run through a small
/// convolutional stack that produces 64 features.
enum class ImageInput { Features, Pixels };

inline constexpr std::size_t kConvFeatureWidth = 64;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 300;
  std::size_t d_ff = 300;
  std::size_t question_len = kQuestionLen;
  std::size_t answer_len = kAnswerLen;
  Variant variant = Variant::ImageCat;
  bool reconstruct_image = true;
  double lambda_recon = 1.0;
  std::size_t vocab_size = 0;
  std::size_t feature_width = 512;  // F; 64 in pixel mode
  ImageInput image_input = ImageInput::Features;
  bool position_encoding = true;
  bool freeze_embeddings = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  bool uses_text() const { return variant != Variant::ImageOnly; }
  bool uses_image() const { return variant != Variant::TextOnly; }
  bool has_recon() const { return uses_image() && reconstruct_image; }
  /// Width of one input row fed to the model (pixels or features).
  std::size_t input_width() const;
  /// Number of guiding-context positions T.
  std::size_t context_len() const;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Guiding text for one batch: [B, T] ids plus the key mask.
struct Context {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
};

/// image-cat: [category]; image-ans-cat: [answer (answer_len slots); category].
/// `answers` is [B, answer_len]; pads in it are masked out.
Context build_context(Variant variant, std::span<const int> answers, std::span<const int> category_tokens,
                      std::size_t batch, std::size_t answer_len);

/// Token id of each category name in `vocab`; throws if one is missing.
std::array<int, kNumCategories> category_token_ids(const Vocabulary& vocab);

struct Fused {
  Tensor x;                        // [B, T+1, d] (T = 0 for image-only, no image slot for text-only)
  std::vector<std::uint8_t> mask;  // [B, T+1]
  std::size_t length = 0;
};

struct ModelInputs {
  std::size_t batch = 0;
  Tensor images;                // [B, input_width]; unused by text-only
  std::vector<int> answers;     // [B, answer_len]; used by image-ans-cat
  std::vector<int> categories;  // category ids, [B]
};

struct ForwardResult {
  Tensor logits;    // [B, question_len, V]
  Tensor features;  // f, [B, F] (undefined for text-only)
  Tensor image;     // i, [B, d]
  Fused fused;
  Tensor recon;     // i_r, [B, F] when reconstruction is enabled
};

struct LossResult {
  Tensor total;
  double l_q = 0.0;
  std::optional<double> l_i;
  double total_value = 0.0;
};

struct ParamInfo {
  std::string name;
  Shape shape;
  bool trainable = true;
};

class Model {
 public:
  Model(ModelConfig config, std::array<int, kNumCategories> category_tokens,
        const EmbeddingTable* embeddings = nullptr);
  // Copies would alias the parameter storage.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const std::array<int, kNumCategories>& category_tokens() const { return category_tokens_; }

  /// f: pixels through the conv stack, or the features themselves.
  Tensor image_features(const Tensor& images) const;
  /// i = BatchNorm(FC(f)), [B, d]. Train mode updates running statistics.
  Tensor encode_image(const Tensor& features, NormMode mode);
  /// S = encoder(context ids, mask), [B, T, d].
  Tensor encode_text(std::span<const int> ids, std::span<const std::uint8_t> mask, std::size_t batch,
                     std::size_t length, NormMode mode);
  /// X = [S; i] with a mask extended by one attended position.
  Fused fuse(const Tensor& s, std::span<const std::uint8_t> mask, const Tensor& image) const;
  /// Teacher-forced logits [B, question_len, V] for targets [B, question_len].
  Tensor decode(const Fused& x, std::span<const int> targets, const Tensor& image, NormMode mode);
  /// Logits for an explicit decoder input [B, L] that starts with <start>.
  Tensor decode_inputs(const Fused& x, std::span<const int> inputs, std::size_t length, const Tensor& image,
                       NormMode mode);
  /// i_r = MLP(masked mean of X), [B, F].
  Tensor reconstruct(const Fused& x) const;

  /// Image, context and fusion for a batch; shared by training and generation.
  Fused encode(const ModelInputs& in, NormMode mode, Tensor* features_out = nullptr, Tensor* image_out = nullptr);
  ForwardResult forward(const ModelInputs& in, std::span<const int> targets, NormMode mode);
  /// L = L_q + lambda * L_i; L_i is computed whenever reconstruction is on,
  /// and added only when lambda is nonzero.
  LossResult loss(const ModelInputs& in, std::span<const int> targets, NormMode mode);

  /// Every parameter in registration order (the order is fixed by the config).
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<NamedTensor> trainable_parameters() const;
  std::vector<ParamInfo> manifest() const;
  std::size_t parameter_count() const;
  Tensor parameter(std::string_view name) const;

  /// Non-trainable state (batch-norm running statistics).
  std::vector<std::pair<std::string, std::vector<double>*>> buffers();
  Rng& dropout_rng() { return dropout_rng_; }

 private:
  struct Linear {
    Tensor w, b;  // b is undefined for bias-free projections
    Tensor operator()(const Tensor& x) const { return b.defined() ? add_bias(matmul(x, w), b) : matmul(x, w); }
  };
  struct Norm {
    Tensor gain, bias;
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct FeedForward {
    Linear fc1, fc2;
  };
  struct EncoderLayer {
    Norm ln1, ln2;
    Attention self;
    FeedForward ffn;
  };
  struct DecoderLayer {
    Norm ln1, ln2, ln3;
    Attention self, cross;
    FeedForward ffn;
  };

  Tensor add_param(const std::string& name, Shape shape, std::vector<double> values);
  Tensor xavier(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out);
  Linear linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true);
  Norm norm(const std::string& name, std::size_t width);
  Attention attention(const std::string& name);
  FeedForward feed_forward(const std::string& name);

  Tensor attend(const Attention& a, const Tensor& query, const Tensor& memory, const AttentionMask& mask) const;
  Tensor ffn(const FeedForward& f, const Tensor& x) const;
  Tensor dropout(const Tensor& x, NormMode mode);
  Tensor embed_tokens(std::span<const int> ids, std::size_t batch, std::size_t length) const;

  ModelConfig config_;
  std::array<int, kNumCategories> category_tokens_;
  std::vector<NamedTensor> params_;
  Rng dropout_rng_;

  Tensor embed_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  Linear image_fc_;
  Tensor bn_gain_, bn_bias_;
  BatchNormState bn_state_;
  std::vector<EncoderLayer> encoder_;
  Norm encoder_norm_;
  std::vector<DecoderLayer> decoder_;
  Norm decoder_norm_;
  Linear out_;
  Linear recon1_, recon2_;
};

/// Model inputs for a batch of samples (images may be undefined for text-only).
ModelInputs make_inputs(const Batch& batch);

/// Sinusoidal encoding row for position `pos`, width `d`.
std::vector<double> sinusoid(std::size_t pos, std::size_t d);

}  // namespace vqg
