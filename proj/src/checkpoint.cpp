#include "vqg/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "vqg/binary_io.hpp"
#include "vqg/errors.hpp"

namespace vqg {

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

namespace {

void write_vector(std::ostream& out, const std::vector<double>& v) {
  binary::write_le<std::uint64_t>(out, v.size());
  binary::write_doubles(out, v.data(), v.size());
}

std::vector<double> read_vector(std::istream& in, const std::string& what) {
  const auto n = binary::read_le<std::uint64_t>(in, what);
  if (n > (std::uint64_t{1} << 40)) throw ParseError(what + ": implausible length");
  return binary::read_doubles(in, static_cast<std::size_t>(n), what);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const Vocabulary& vocab,
                     Model& model, const TrainingState* training) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  binary::write_magic(out, "VQGM");
  binary::write_le<std::uint32_t>(out, Checkpoint::kVersion);
  binary::write_string(out, config.dump());

  const auto& tokens = vocab.tokens();
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tokens.size() - Vocabulary::kNumSpecials));
  for (std::size_t i = Vocabulary::kNumSpecials; i < tokens.size(); ++i) binary::write_string(out, tokens[i]);

  const auto& params = model.parameters();
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    binary::write_string(out, p.name);
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) binary::write_le<std::uint64_t>(out, d);
    binary::write_doubles(out, p.tensor.data().data(), p.tensor.numel());
  }
  const auto buffers = model.buffers();
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(buffers.size()));
  for (const auto& [name, values] : buffers) {
    binary::write_string(out, name);
    write_vector(out, *values);
  }

  binary::write_le<std::uint8_t>(out, training ? 1 : 0);
  if (training) {
    binary::write_le<std::int64_t>(out, training->step);
    binary::write_le<std::int64_t>(out, training->optimizer_steps);
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(training->moments.size()));
    for (std::size_t i = 0; i < training->moments.size(); ++i) {
      binary::write_string(out, training->moment_names.at(i));
      write_vector(out, training->moments[i].first);
      write_vector(out, training->moments[i].second);
    }
    for (std::uint64_t s : training->rng) binary::write_le<std::uint64_t>(out, s);
    binary::write_le<std::uint64_t>(out, training->loader.epoch);
    binary::write_le<std::uint64_t>(out, training->loader.cursor);
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  const std::string file = path.string();
  binary::expect_magic(in, "VQGM", file);
  const auto version = binary::read_le<std::uint32_t>(in, file + " version");
  if (version != Checkpoint::kVersion) throw ParseError(file + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint c;
  try {
    c.config = nlohmann::json::parse(binary::read_string(in, file + " config"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(file + ": config blob: " + e.what());
  }
  const auto n_tokens = binary::read_le<std::uint32_t>(in, file + " vocabulary size");
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(binary::read_string(in, file + " vocabulary"));
  c.vocab = Vocabulary(tokens);

  const auto n_params = binary::read_le<std::uint32_t>(in, file + " parameter count");
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = binary::read_string(in, file + " parameter name");
    const auto rank = binary::read_le<std::uint32_t>(in, file + " " + name);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(binary::read_le<std::uint64_t>(in, file + " " + name));
    auto values = binary::read_doubles(in, shape_numel(shape), file + " " + name);
    c.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const auto n_buffers = binary::read_le<std::uint32_t>(in, file + " buffer count");
  for (std::uint32_t i = 0; i < n_buffers; ++i) {
    std::string name = binary::read_string(in, file + " buffer name");
    c.buffers.emplace_back(name, read_vector(in, file + " " + name));
  }

  if (binary::read_le<std::uint8_t>(in, file + " training flag")) {
    TrainingState t;
    t.step = binary::read_le<std::int64_t>(in, file + " step");
    t.optimizer_steps = binary::read_le<std::int64_t>(in, file + " optimizer steps");
    const auto n = binary::read_le<std::uint32_t>(in, file + " moment count");
    for (std::uint32_t i = 0; i < n; ++i) {
      t.moment_names.push_back(binary::read_string(in, file + " moment name"));
      Adam::Moments m;
      m.first = read_vector(in, file + " first moments");
      m.second = read_vector(in, file + " second moments");
      t.moments.push_back(std::move(m));
    }
    for (auto& s : t.rng) s = binary::read_le<std::uint64_t>(in, file + " rng state");
    t.loader.epoch = binary::read_le<std::uint64_t>(in, file + " loader epoch");
    t.loader.cursor = binary::read_le<std::uint64_t>(in, file + " loader cursor");
    c.training = std::move(t);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(file + ": trailing bytes");
  return c;
}

std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint) {
  if (!checkpoint.config.contains("model")) throw ParseError("checkpoint config has no 'model' section");
  const ModelConfig mc = ModelConfig::from_json(checkpoint.config.at("model"));
  if (mc.vocab_size != checkpoint.vocab.size()) {
    throw Error("checkpoint vocabulary has " + std::to_string(checkpoint.vocab.size()) +
                " tokens but the model expects " + std::to_string(mc.vocab_size));
  }
  auto model = std::make_unique<Model>(mc, category_token_ids(checkpoint.vocab));
  const auto& params = model->parameters();
  if (params.size() != checkpoint.params.size()) throw Error("checkpoint parameter set does not match its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, saved] = checkpoint.params[i];
    if (params[i].name != name || params[i].tensor.shape() != saved.shape()) {
      throw Error("checkpoint parameter '" + name + "' does not match the model (expected '" + params[i].name +
                  "' " + shape_str(params[i].tensor.shape()) + ")");
    }
    Tensor target = params[i].tensor;
    const bool trainable = target.requires_grad();
    auto dst = target.data_mut();
    std::copy(saved.data().begin(), saved.data().end(), dst.begin());
    target.set_requires_grad(trainable);
  }
  auto buffers = model->buffers();
  if (buffers.size() != checkpoint.buffers.size()) throw Error("checkpoint buffer set does not match its config");
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (buffers[i].first != checkpoint.buffers[i].first || buffers[i].second->size() != checkpoint.buffers[i].second.size()) {
      throw Error("checkpoint buffer '" + checkpoint.buffers[i].first + "' does not match the model");
    }
    *buffers[i].second = checkpoint.buffers[i].second;
  }
  if (checkpoint.training) model->dropout_rng().set_state(checkpoint.training->rng);
  return model;
}

}  // namespace vqg
