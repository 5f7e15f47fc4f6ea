#include "vqg/model.hpp"

#include <cmath>

#include "vqg/errors.hpp"

namespace vqg {

const std::array<std::string, 4>& variant_names() {
  static const std::array<std::string, 4> names{"image-only", "image-cat", "image-ans-cat", "text-only"};
  return names;
}

std::string variant_name(Variant v) { return variant_names()[static_cast<std::size_t>(v)]; }

Variant parse_variant(std::string_view name) {
  const auto& names = variant_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<Variant>(i);
  }
  throw ConfigError("variant: unknown value '" + std::string(name) +
                    "' (expected one of image-only, image-cat, image-ans-cat, text-only)");
}

// ---------------------------------------------------------------------------

std::size_t ModelConfig::input_width() const {
  return image_input == ImageInput::Pixels ? 3 * 32 * 32 : feature_width;
}

std::size_t ModelConfig::context_len() const {
  switch (variant) {
    case Variant::ImageOnly:
      return 0;
    case Variant::ImageAnsCat:
      return answer_len + 1;
    default:
      return 1;
  }
}

void ModelConfig::validate() const {
  const auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string(key) + ": must be positive");
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(question_len, "question_len");
  positive(answer_len, "answer_len");
  positive(feature_width, "feature_width");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model: " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (vocab_size <= Vocabulary::kNumSpecials) throw ConfigError("vocab_size: must exceed the 4 special tokens");
  if (variant == Variant::TextOnly && reconstruct_image) {
    throw ConfigError("reconstruct_image: text-only has no image to reconstruct");
  }
  if (!std::isfinite(lambda_recon) || lambda_recon < 0.0) throw ConfigError("lambda_recon: must be finite and >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout: must be in [0, 1)");
  if (image_input == ImageInput::Pixels && feature_width != kConvFeatureWidth) {
    throw ConfigError("feature_width: pixel input produces " + std::to_string(kConvFeatureWidth) + " features");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"n_layers", n_layers},
          {"n_heads", n_heads},
          {"d_model", d_model},
          {"d_ff", d_ff},
          {"question_len", question_len},
          {"answer_len", answer_len},
          {"variant", variant_name(variant)},
          {"reconstruct_image", reconstruct_image},
          {"lambda_recon", lambda_recon},
          {"vocab_size", vocab_size},
          {"feature_width", feature_width},
          {"image_input", image_input == ImageInput::Pixels ? "pixels" : "features"},
          {"position_encoding", position_encoding},
          {"freeze_embeddings", freeze_embeddings},
          {"dropout", dropout},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config: expected an object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "n_layers") c.n_layers = value.get<std::size_t>();
      else if (key == "n_heads") c.n_heads = value.get<std::size_t>();
      else if (key == "d_model") c.d_model = value.get<std::size_t>();
      else if (key == "d_ff") c.d_ff = value.get<std::size_t>();
      else if (key == "question_len") c.question_len = value.get<std::size_t>();
      else if (key == "answer_len") c.answer_len = value.get<std::size_t>();
      else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
      else if (key == "reconstruct_image") c.reconstruct_image = value.get<bool>();
      else if (key == "lambda_recon") c.lambda_recon = value.get<double>();
      else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "feature_width") c.feature_width = value.get<std::size_t>();
      else if (key == "image_input") {
        const auto s = value.get<std::string>();
        if (s == "pixels") c.image_input = ImageInput::Pixels;
        else if (s == "features") c.image_input = ImageInput::Features;
        else throw ConfigError("image_input: expected 'features' or 'pixels', got '" + s + "'");
      } else if (key == "position_encoding") c.position_encoding = value.get<bool>();
      else if (key == "freeze_embeddings") c.freeze_embeddings = value.get<bool>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError("model config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key + ": wrong type in model config");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

Context build_context(Variant variant, std::span<const int> answers, std::span<const int> category_tokens,
                      std::size_t batch, std::size_t answer_len) {
  if (variant == Variant::ImageOnly) throw Error("build_context: image-only uses no guiding text");
  if (category_tokens.size() != batch) throw DimensionError("build_context: one category per row expected");
  Context c;
  c.batch = batch;
  if (variant == Variant::ImageAnsCat) {
    if (answers.size() != batch * answer_len) throw DimensionError("build_context: answers must be [B, answer_len]");
    c.length = answer_len + 1;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < answer_len; ++t) {
        const int id = answers[b * answer_len + t];
        c.ids.push_back(id);
        c.mask.push_back(id == Vocabulary::kPad ? 0 : 1);
      }
      c.ids.push_back(category_tokens[b]);
      c.mask.push_back(1);
    }
  } else {
    c.length = 1;
    c.ids.assign(category_tokens.begin(), category_tokens.end());
    c.mask.assign(batch, 1);
  }
  return c;
}

std::array<int, kNumCategories> category_token_ids(const Vocabulary& vocab) {
  std::array<int, kNumCategories> ids{};
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    const auto id = vocab.find(category_names()[c]);
    if (!id) throw Error("vocabulary lacks the category token '" + category_names()[c] + "'");
    ids[c] = *id;
  }
  return ids;
}

std::vector<double> sinusoid(std::size_t pos, std::size_t d) {
  std::vector<double> row(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double rate = std::pow(10000.0, -static_cast<double>(k - k % 2) / static_cast<double>(d));
    const double angle = static_cast<double>(pos) * rate;
    row[k] = k % 2 == 0 ? std::sin(angle) : std::cos(angle);
  }
  return row;
}

// ---------------------------------------------------------------------------

Tensor Model::add_param(const std::string& name, Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

Tensor Model::xavier(const std::string& name, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng = Rng::derive(config_.seed, name);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-limit, limit);
  return add_param(name, std::move(shape), std::move(v));
}

Model::Linear Model::linear(const std::string& name, std::size_t in, std::size_t out, bool bias) {
  Linear l;
  l.w = xavier(name + ".w", {in, out}, in, out);
  if (bias) l.b = add_param(name + ".b", {out}, std::vector<double>(out, 0.0));
  return l;
}

Model::Norm Model::norm(const std::string& name, std::size_t width) {
  Norm n;
  n.gain = add_param(name + ".gain", {width}, std::vector<double>(width, 1.0));
  n.bias = add_param(name + ".bias", {width}, std::vector<double>(width, 0.0));
  return n;
}

Model::Attention Model::attention(const std::string& name) {
  const std::size_t d = config_.d_model;
  // A key bias shifts every score of a query by the same amount, so softmax
  // cancels it; it is left out rather than trained on rounding noise.
  return {linear(name + ".q", d, d), linear(name + ".k", d, d, false), linear(name + ".v", d, d),
          linear(name + ".o", d, d)};
}

Model::FeedForward Model::feed_forward(const std::string& name) {
  return {linear(name + ".fc1", config_.d_model, config_.d_ff), linear(name + ".fc2", config_.d_ff, config_.d_model)};
}

Model::Model(ModelConfig config, std::array<int, kNumCategories> category_tokens, const EmbeddingTable* embeddings)
    : config_(std::move(config)),
      category_tokens_(category_tokens),
      dropout_rng_(Rng::derive(config_.seed, "dropout")) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t V = config_.vocab_size;
  for (int id : category_tokens_) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) throw ConfigError("category token id outside the vocabulary");
  }

  std::vector<double> table(V * d);
  if (embeddings) {
    if (embeddings->rows != V || embeddings->width != d) {
      throw DimensionError("embedding table is " + std::to_string(embeddings->rows) + "x" +
                           std::to_string(embeddings->width) + ", model needs " + std::to_string(V) + "x" +
                           std::to_string(d));
    }
    table = embeddings->matrix;
  } else {
    Rng rng = Rng::derive(config_.seed, "embed");
    for (double& x : table) x = rng.normal(0.0, kEmbeddingFallbackStd);
  }
  embed_ = add_param("embed", {V, d}, std::move(table));

  if (config_.uses_image()) {
    if (config_.image_input == ImageInput::Pixels) {
      conv1_w_ = xavier("image.conv1.w", {8, 3, 3, 3}, 3 * 9, 8 * 9);
      conv1_b_ = add_param("image.conv1.b", {8}, std::vector<double>(8, 0.0));
      conv2_w_ = xavier("image.conv2.w", {16, 8, 3, 3}, 8 * 9, 16 * 9);
      conv2_b_ = add_param("image.conv2.b", {16}, std::vector<double>(16, 0.0));
    }
    image_fc_ = linear("image.fc", config_.feature_width, d, false);  // batch-norm bias takes its place
    bn_gain_ = add_param("image.bn.gain", {d}, std::vector<double>(d, 1.0));
    bn_bias_ = add_param("image.bn.bias", {d}, std::vector<double>(d, 0.0));
    bn_state_ = BatchNormState(d);
  }
  if (config_.uses_text()) {
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = "encoder." + std::to_string(l);
      EncoderLayer layer;
      layer.ln1 = norm(p + ".ln1", d);
      layer.self = attention(p + ".self");
      layer.ln2 = norm(p + ".ln2", d);
      layer.ffn = feed_forward(p + ".ffn");
      encoder_.push_back(std::move(layer));
    }
    encoder_norm_ = norm("encoder.norm", d);
  }
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = norm(p + ".ln1", d);
    layer.self = attention(p + ".self");
    layer.ln2 = norm(p + ".ln2", d);
    layer.cross = attention(p + ".cross");
    layer.ln3 = norm(p + ".ln3", d);
    layer.ffn = feed_forward(p + ".ffn");
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = norm("decoder.norm", d);
  out_ = linear("out", d, V);
  if (config_.has_recon()) {
    recon1_ = linear("recon.fc1", d, d);
    recon2_ = linear("recon.fc2", d, config_.feature_width);
  }
  if (config_.freeze_embeddings) embed_.set_requires_grad(false);
}

std::vector<NamedTensor> Model::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

std::vector<ParamInfo> Model::manifest() const {
  std::vector<ParamInfo> out;
  for (const auto& p : params_) out.push_back({p.name, p.tensor.shape(), p.tensor.requires_grad()});
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

Tensor Model::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw Error("no parameter named '" + std::string(name) + "'");
}

std::vector<std::pair<std::string, std::vector<double>*>> Model::buffers() {
  if (!config_.uses_image()) return {};
  return {{"image.bn.running_mean", &bn_state_.running_mean}, {"image.bn.running_var", &bn_state_.running_var}};
}

// ---------------------------------------------------------------------------

Tensor Model::attend(const Attention& a, const Tensor& query, const Tensor& memory, const AttentionMask& mask) const {
  const std::size_t h = config_.n_heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(config_.d_model / h));
  const Tensor q = split_heads(a.q(query), h);
  const Tensor k = split_heads(a.k(memory), h);
  const Tensor v = split_heads(a.v(memory), h);
  const Tensor weights = masked_softmax(scale(bmm(q, k, true), inv), mask, h);
  return a.o(merge_heads(bmm(weights, v), h));
}

Tensor Model::ffn(const FeedForward& f, const Tensor& x) const { return f.fc2(relu(f.fc1(x))); }

Tensor Model::dropout(const Tensor& x, NormMode mode) {
  if (mode == NormMode::Eval || config_.dropout == 0.0) return x;
  const double keep = 1.0 - config_.dropout;
  std::vector<double> m(x.numel());
  for (double& v : m) v = dropout_rng_.uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor(x.shape(), std::move(m)));
}

Tensor Model::embed_tokens(std::span<const int> ids, std::size_t batch, std::size_t length) const {
  const std::size_t d = config_.d_model;
  Tensor e = scale(embedding(embed_, ids, {batch, length}), std::sqrt(static_cast<double>(d)));
  if (!config_.position_encoding) return e;
  std::vector<double> pe;
  pe.reserve(batch * length * d);
  std::vector<std::vector<double>> rows;
  for (std::size_t t = 0; t < length; ++t) rows.push_back(sinusoid(t, d));
  for (std::size_t b = 0; b < batch; ++b) {
    for (const auto& r : rows) pe.insert(pe.end(), r.begin(), r.end());
  }
  return add(e, Tensor({batch, length, d}, std::move(pe)));
}

Tensor Model::image_features(const Tensor& images) const {
  if (!config_.uses_image()) throw Error("text-only model has no image path");
  if (images.rank() != 2 || images.dim(1) != config_.input_width()) {
    throw DimensionError("image input " + shape_str(images.shape()) + " does not match width " +
                         std::to_string(config_.input_width()));
  }
  if (config_.image_input == ImageInput::Features) return images;
  const std::size_t b = images.dim(0);
  Tensor x = reshape(images, {b, 3, 32, 32});
  x = avg_pool2d(relu(conv2d(x, conv1_w_, conv1_b_, 1)), 4);
  x = avg_pool2d(relu(conv2d(x, conv2_w_, conv2_b_, 1)), 4);
  return reshape(x, {b, kConvFeatureWidth});
}

Tensor Model::encode_image(const Tensor& features, NormMode mode) {
  if (!config_.uses_image()) throw Error("text-only model has no image head");
  if (features.rank() != 2 || features.dim(1) != config_.feature_width) {
    throw DimensionError("image features " + shape_str(features.shape()) + " do not match width " +
                         std::to_string(config_.feature_width));
  }
  return batch_norm_1d(image_fc_(features), bn_gain_, bn_bias_, bn_state_, mode);
}

Tensor Model::encode_text(std::span<const int> ids, std::span<const std::uint8_t> mask, std::size_t batch,
                          std::size_t length, NormMode mode) {
  if (!config_.uses_text()) throw Error("image-only model has no text encoder");
  if (ids.size() != batch * length || mask.size() != batch * length) {
    throw DimensionError("context ids/mask do not match [B, T]");
  }
  Tensor h = embed_tokens(ids, batch, length);
  const AttentionMask m = AttentionMask::from_keys(mask, batch, length, length);
  for (const auto& layer : encoder_) {
    const Tensor n1 = layer.ln1(h);
    h = add(h, dropout(attend(layer.self, n1, n1, m), mode));
    h = add(h, dropout(ffn(layer.ffn, layer.ln2(h)), mode));
  }
  return encoder_norm_(h);
}

Fused Model::fuse(const Tensor& s, std::span<const std::uint8_t> mask, const Tensor& image) const {
  Fused f;
  if (!config_.uses_image()) {
    f.x = s;
    f.length = s.dim(1);
    f.mask.assign(mask.begin(), mask.end());
    return f;
  }
  const std::size_t d = config_.d_model;
  if (image.rank() != 2 || image.dim(1) != d) {
    throw DimensionError("fuse: image vector " + shape_str(image.shape()) + " is not [B, " + std::to_string(d) + "]");
  }
  const std::size_t b = image.dim(0);
  const Tensor slot = reshape(image, {b, 1, d});
  if (!config_.uses_text()) {
    f.x = slot;
    f.length = 1;
    f.mask.assign(b, 1);
    return f;
  }
  if (s.rank() != 3 || s.dim(0) != b || s.dim(2) != d) {
    throw DimensionError("fuse: text states " + shape_str(s.shape()) + " do not match image " +
                         shape_str(image.shape()));
  }
  const std::size_t t = s.dim(1);
  f.x = concat({s, slot}, 1);
  f.length = t + 1;
  for (std::size_t r = 0; r < b; ++r) {
    f.mask.insert(f.mask.end(), mask.begin() + static_cast<long>(r * t), mask.begin() + static_cast<long>((r + 1) * t));
    f.mask.push_back(1);
  }
  return f;
}

Tensor Model::decode(const Fused& x, std::span<const int> targets, const Tensor& image, NormMode mode) {
  const std::size_t len = config_.question_len;
  if (targets.size() % len != 0) throw DimensionError("decode: targets must be [B, question_len]");
  const std::size_t b = targets.size() / len;
  std::vector<int> inputs(b * len);
  for (std::size_t r = 0; r < b; ++r) {
    inputs[r * len] = Vocabulary::kStart;
    for (std::size_t t = 1; t < len; ++t) inputs[r * len + t] = targets[r * len + t - 1];
  }
  return decode_inputs(x, inputs, len, image, mode);
}

Tensor Model::decode_inputs(const Fused& x, std::span<const int> inputs, std::size_t length, const Tensor& image,
                            NormMode mode) {
  if (length == 0 || inputs.size() % length != 0) throw DimensionError("decode: inputs must be [B, L]");
  const std::size_t b = inputs.size() / length;
  if (x.x.dim(0) != b) throw DimensionError("decode: memory and inputs disagree on batch size");
  const std::size_t d = config_.d_model;
  const std::size_t lead = config_.uses_image() ? 1 : 0;
  const std::size_t total = length + lead;

  Tensor h = embed_tokens(inputs, b, length);
  std::vector<std::uint8_t> keys;
  keys.reserve(b * total);
  for (std::size_t r = 0; r < b; ++r) {
    if (lead) keys.push_back(1);
    for (std::size_t t = 0; t < length; ++t) keys.push_back(inputs[r * length + t] == Vocabulary::kPad ? 0 : 1);
  }
  if (lead) h = concat({reshape(image, {b, 1, d}), h}, 1);

  const AttentionMask self_mask = AttentionMask::causal(keys, b, total);
  const AttentionMask cross_mask = AttentionMask::from_keys(x.mask, b, total, x.length);
  for (const auto& layer : decoder_) {
    const Tensor n1 = layer.ln1(h);
    h = add(h, dropout(attend(layer.self, n1, n1, self_mask), mode));
    h = add(h, dropout(attend(layer.cross, layer.ln2(h), x.x, cross_mask), mode));
    h = add(h, dropout(ffn(layer.ffn, layer.ln3(h)), mode));
  }
  h = decoder_norm_(h);
  if (lead) h = slice(h, 1, 1, length);
  return out_(h);
}

Tensor Model::reconstruct(const Fused& x) const {
  if (!config_.has_recon()) throw Error("reconstruct: reconstruction is disabled for this model");
  return recon2_(relu(recon1_(masked_mean_pool(x.x, x.mask))));
}

Fused Model::encode(const ModelInputs& in, NormMode mode, Tensor* features_out, Tensor* image_out) {
  Tensor features, image, s;
  if (config_.uses_image()) {
    if (!in.images.defined()) throw Error("model needs image inputs");
    features = image_features(in.images);
    image = encode_image(features, mode);
  }
  std::vector<std::uint8_t> mask;
  if (config_.uses_text()) {
    std::vector<int> cats;
    cats.reserve(in.categories.size());
    for (int c : in.categories) cats.push_back(category_tokens_.at(static_cast<std::size_t>(c)));
    const Context ctx = build_context(config_.variant, in.answers, cats, in.batch, config_.answer_len);
    s = encode_text(ctx.ids, ctx.mask, ctx.batch, ctx.length, mode);
    mask = ctx.mask;
  }
  if (features_out) *features_out = features;
  if (image_out) *image_out = image;
  return fuse(s, mask, image);
}

ForwardResult Model::forward(const ModelInputs& in, std::span<const int> targets, NormMode mode) {
  ForwardResult r;
  r.fused = encode(in, mode, &r.features, &r.image);
  r.logits = decode(r.fused, targets, r.image, mode);
  if (config_.has_recon()) r.recon = reconstruct(r.fused);
  return r;
}

LossResult Model::loss(const ModelInputs& in, std::span<const int> targets, NormMode mode) {
  const ForwardResult r = forward(in, targets, mode);
  LossResult out;
  const Tensor lq = cross_entropy(r.logits, targets, Vocabulary::kPad);
  out.l_q = lq.item();
  out.total = lq;
  if (config_.has_recon()) {
    // The target is the input feature vector, held fixed.
    const Tensor li = mse_l2(r.recon, r.features.detach());
    out.l_i = li.item();
    if (config_.lambda_recon != 0.0) out.total = add(lq, scale(li, config_.lambda_recon));
  }
  out.total_value = out.total.item();
  return out;
}

ModelInputs make_inputs(const Batch& batch) {
  ModelInputs in;
  in.batch = batch.size;
  in.images = batch.images;
  in.answers = batch.answers;
  in.categories = batch.categories;
  return in;
}

}  // namespace vqg
