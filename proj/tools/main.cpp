#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "vqg/check_suite.hpp"
#include "vqg/errors.hpp"
#include "vqg/pipeline.hpp"

using namespace vqg;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigFailure = 2;

struct Options {
  RunConfig run;
  std::string variant = "image-cat";
  std::string image_input = "features";
  bool no_recon = false;
  bool no_position_encoding = false;
  std::string resume;

  CheckpointRequest checkpoint;
  GenRequest gen;
  EvaluateOptions eval;
  std::size_t beam = 0;  // 0: greedy
  std::string out;

  std::size_t n_images = 250, n_categories = 4, check_seeds = 10;
};

void emit(const nlohmann::json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + out);
}

RunConfig resolve(const Options& o) {
  RunConfig rc = o.run;
  rc.model.variant = parse_variant(o.variant);
  rc.model.image_input = o.image_input == "pixels" ? ImageInput::Pixels : ImageInput::Features;
  rc.model.reconstruct_image = !o.no_recon && rc.model.variant != Variant::TextOnly;
  rc.model.position_encoding = !o.no_position_encoding;
  return rc;
}

void progress(const std::string& row, const StepRecord& r, std::size_t total) {
  if (r.step % 100 != 0 && r.step != static_cast<std::int64_t>(total)) return;
  std::fprintf(stderr, "%s%sstep %lld  L_q %.6f  total %.6f\n", row.c_str(), row.empty() ? "" : " ",
               static_cast<long long>(r.step), r.l_q, r.total);
}

int cmd_check(std::size_t seeds) {
  const auto results = run_check_suite(seeds);
  bool ok = true;
  std::printf("%-34s %14s %12s  %s\n", "op", "max_rel_err", "coords", "status");
  for (const auto& r : results) {
    std::printf("%-34s %14.3e %12zu  %s\n", r.name.c_str(), r.max_rel_error, r.coordinates,
                r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  std::printf("%s: %zu checks, tolerance 1e-4\n", ok ? "all passed" : "FAILED", results.size());
  return ok ? 0 : kRuntimeFailure;
}

// ----------------------------------------------------------------------------

void add_data_options(CLI::App* s, DataPaths& d) {
  s->add_option("--questions", d.questions, "Questions JSON file");
  s->add_option("--annotations", d.annotations, "Annotations JSON file");
  s->add_option("--category-map", d.category_map, "Answer-to-category TSV");
}

void add_model_options(CLI::App* s, Options& o) {
  ModelConfig& m = o.run.model;
  s->add_option("--variant", o.variant, "Model variant")
      ->check(CLI::IsMember({"image-only", "image-cat", "image-ans-cat", "text-only"}))
      ->capture_default_str();
  s->add_option("--layers", m.n_layers)->capture_default_str();
  s->add_option("--heads", m.n_heads)->capture_default_str();
  s->add_option("--d-model", m.d_model)->capture_default_str();
  s->add_option("--d-ff", m.d_ff)->capture_default_str();
  s->add_option("--question-len", m.question_len)->capture_default_str();
  s->add_option("--answer-len", m.answer_len)->capture_default_str();
  s->add_option("--lambda-recon", m.lambda_recon)->capture_default_str();
  s->add_flag("--no-recon", o.no_recon, "Do not train the reconstruction head");
  s->add_flag("--no-position-encoding", o.no_position_encoding);
  s->add_flag("--freeze-embeddings", m.freeze_embeddings);
  s->add_option("--dropout", m.dropout)->capture_default_str();
  s->add_option("--image-input", o.image_input, "features (precomputed rows) or pixels (3x32x32)")
      ->check(CLI::IsMember({"features", "pixels"}))
      ->capture_default_str();
  s->add_option("--features", o.run.data.features, "Feature store (.vqgf)");
  s->add_option("--vectors", o.run.data.vectors, "Pretrained word vectors (text format)");
}

void add_train_options(CLI::App* s, Options& o) {
  TrainConfig& t = o.run.train;
  s->add_option("--steps", t.steps)->capture_default_str();
  s->add_option("--batch-size", t.batch_size)->capture_default_str();
  s->add_option("--lr", t.lr)->capture_default_str();
  s->add_option("--checkpoint-every", t.checkpoint_every)->capture_default_str();
  s->add_option("--eval-every", t.eval_every)->capture_default_str();
  s->add_option("--clip-norm", t.clip_norm)->capture_default_str();
  s->add_option("--test-fraction", o.run.data.test_fraction, "Share of image ids held out (highest ids)")
      ->capture_default_str();
  s->add_option("--output-dir", o.run.output_dir)->required();
}

void add_checkpoint_options(CLI::App* s, Options& o) {
  s->add_option("--checkpoint", o.checkpoint.checkpoint)->required();
  s->add_option("--vocab", o.checkpoint.vocab, "Refuse to run unless this vocabulary matches the checkpoint");
  s->add_option("--features", o.checkpoint.data.features, "Feature store (defaults to the training store)");
  s->add_option("--beam", o.beam, "Beam width (0: greedy)")->check(CLI::Range(0, 5));
  s->add_option("--out", o.out, "Write JSON here instead of standard output");
}

int run(int argc, char** argv) {
  Options o;
  CLI::App app{"Category-guided visual question generation"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);
  app.add_option("--seed", o.run.seed, "Seed for every random stream")->capture_default_str();

  CLI::App* stats = app.add_subcommand("data-stats", "Ingest a dataset and print its statistics");
  add_data_options(stats, o.run.data);
  stats->add_option("--out", o.out, "Write JSON here instead of standard output");

  CLI::App* vocab = app.add_subcommand("build-vocab", "Build the vocabulary of the training split");
  add_data_options(vocab, o.run.data);
  vocab->add_option("--test-fraction", o.run.data.test_fraction)->capture_default_str();
  vocab->add_option("--out", o.out, "Vocabulary file")->required();

  CLI::App* synth = app.add_subcommand("make-synthetic", "Write a synthetic blob corpus");
  synth->add_option("--output-dir", o.run.output_dir)->required();
  synth->add_option("--n-images", o.n_images)->capture_default_str();
  synth->add_option("--n-categories", o.n_categories)->check(CLI::Range(1, 16))->capture_default_str();

  CLI::App* train_cmd = app.add_subcommand("train", "Train one model");
  add_data_options(train_cmd, o.run.data);
  add_model_options(train_cmd, o);
  add_train_options(train_cmd, o);
  train_cmd->add_option("--resume", o.resume, "Continue from this checkpoint");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and evaluate the five-row ablation matrix");
  add_data_options(ablate, o.run.data);
  add_model_options(ablate, o);
  add_train_options(ablate, o);
  ablate->add_option("--beam", o.beam, "Beam width (0: greedy)")->check(CLI::Range(0, 5));

  CLI::App* gen = app.add_subcommand("generate", "Generate a question for an image and a category");
  add_checkpoint_options(gen, o);
  gen->add_option("--image-id", o.gen.image_id);
  gen->add_option("--category", o.gen.category)->required();
  gen->add_option("--max-len", o.gen.max_len)->capture_default_str();

  CLI::App* eval = app.add_subcommand("evaluate", "Score generated questions against references");
  add_checkpoint_options(eval, o);
  add_data_options(eval, o.checkpoint.data);
  eval->add_option("--split", o.eval.split)->check(CLI::IsMember({"test", "train", "all"}))->capture_default_str();
  eval->add_option("--test-fraction", o.eval.test_fraction, "Defaults to the value used in training");

  CLI::App* check = app.add_subcommand("check", "Finite-difference gradient verification");
  check->alias("check-grads");
  check->add_option("--seeds", o.check_seeds)->check(CLI::Range(1, 100))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigFailure;
  }

  const DecodeMode mode = o.beam > 0 ? DecodeMode::Beam : DecodeMode::Greedy;
  const std::size_t width = std::max<std::size_t>(o.beam, 1);
  try {
    if (*stats) {
      emit(dataset_stats(o.run.data), o.out);
    } else if (*vocab) {
      emit(build_vocab_file(o.run.data, o.out), "");
    } else if (*synth) {
      emit(make_synthetic_files(o.run.output_dir, o.n_images, o.n_categories, o.run.seed), "");
    } else if (*train_cmd) {
      const RunConfig rc = resolve(o);
      emit(run_training(rc, o.resume, [&](const StepRecord& r) { progress("", r, rc.train.steps); }), "");
    } else if (*ablate) {
      const RunConfig rc = resolve(o);
      const AblationResult res =
          run_ablation(rc, mode, width, [&](const std::string& row, const StepRecord& r) { progress(row, r, rc.train.steps); });
      emit(res.to_json(), "");
      for (const auto& row : res.rows) {
        if (row.error) {
          std::fprintf(stderr, "row %s failed: %s\n", row.name.c_str(), row.error->c_str());
          return kRuntimeFailure;
        }
      }
    } else if (*gen) {
      o.gen.mode = mode;
      o.gen.beam_width = width;
      emit(generate_from_checkpoint(o.checkpoint, o.gen), o.out);
    } else if (*eval) {
      o.eval.mode = mode;
      o.eval.beam = width;
      emit(evaluate_checkpoint(o.checkpoint, o.eval), o.out);
    } else if (*check) {
      return cmd_check(o.check_seeds);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigFailure;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
