#include "vqg/ablation.hpp"

#include <fstream>

#include "vqg/errors.hpp"

namespace vqg {

std::vector<std::pair<std::string, ModelConfig>> ablation_rows(const ModelConfig& base) {
  const auto with = [&](Variant v, bool recon) {
    ModelConfig c = base;
    c.variant = v;
    c.reconstruct_image = recon && v != Variant::TextOnly;
    return c;
  };
  return {{"image-only", with(Variant::ImageOnly, true)},
          {"text-only", with(Variant::TextOnly, false)},
          {"without-image-recon", with(Variant::ImageCat, false)},
          {"image-cat", with(Variant::ImageCat, true)},
          {"image-ans-cat", with(Variant::ImageAnsCat, true)}};
}

nlohmann::json AblationResult::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& row : rows) {
    if (row.error) {
      j[row.name] = {{"error", *row.error}};
      continue;
    }
    const EvalReport& r = row.report;
    j[row.name] = {{"bleu1", r.bleu1},
                   {"bleu2", r.bleu2},
                   {"bleu3", r.bleu3},
                   {"cider", r.cider},
                   {"meteor", r.meteor},
                   {"rouge_l", r.rouge_l},
                   {"bleu_monotone", r.bleu_monotone()},
                   {"parameter_count", row.parameter_count},
                   {"l_i_logged", row.logged_l_i}};
  }
  return j;
}

AblationResult run_ablation_matrix(const AblationRequest& request) {
  if (!request.vocab) throw Error("ablation: a vocabulary is required");
  AblationResult result;
  for (auto& [name, config] : ablation_rows(request.base)) {
    AblationRow row;
    row.name = name;
    row.config = config;
    try {
      config.validate();
      Model model(config, category_token_ids(*request.vocab), request.embeddings);
      row.parameter_count = model.parameter_count();

      TrainRequest tr;
      tr.config = request.train;
      tr.run_config = request.run_config;
      tr.run_config["model"] = config.to_json();
      tr.run_config["ablation_row"] = name;
      tr.output_dir = request.output_dir / name;
      tr.samples = request.train_samples;
      tr.store = config.uses_image() ? request.store : nullptr;
      tr.vocab = request.vocab;
      if (request.on_step) tr.on_step = [&](const StepRecord& r) { request.on_step(name, r); };
      const TrainOutputs out = train(model, tr);
      for (const auto& r : out.records) row.logged_l_i = row.logged_l_i || r.l_i.has_value();
      if (!out.records.empty()) row.final_l_q = out.records.back().l_q;

      EvaluationRun eval = evaluate(model, *request.vocab, request.test_samples, tr.store, request.mode,
                                    request.beam_width);
      row.report = std::move(eval.report);
      row.report.metadata["config_hash"] = config_hash(tr.run_config);
      std::ofstream(tr.output_dir / "report.json", std::ios::binary) << row.report.to_json().dump(2) << '\n';
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace vqg
