// SPDX-License-Identifier: Apache-2.0

#include "vmolora/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vmolora/checkpoint.hpp"
#include "vmolora/data.hpp"

namespace vmolora {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

fs::path prepare_out(const RunConfig& config) {
  fs::path out(config.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ContractError("cannot create output directory '" + config.out + "': " + ec.message());
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw ContractError("cannot write '" + path.string() + "'");
}

Corpus domain_corpus(const RunConfig& config, const Vocab& vocab) {
  return gen_corpus(standard_domain(config.domain, config.seed), vocab, config.n_train,
                    config.n_val, config.seed);
}

}  // namespace

ParamBudget cmd_budget(const RunConfig& config, std::ostream& log) {
  const ParamBudget budget = param_count(config.model.fused_dim(), config.model.d_model,
                                         config.lora_ranks, config.mora_ranks);
  const double backbone = static_cast<double>(backbone_param_count(config.model));
  std::ostringstream csv;
  csv << "layer,lora_rank,mora_rank,lora_params,mora_params,total,fraction_of_backbone\n";
  log << "block  r_l  r_m   lora   mora   total\n";
  std::size_t lora_total = 0;
  std::size_t mora_total = 0;
  for (const auto& l : budget.layers) {
    csv << l.layer << ',' << l.lora_rank << ',' << l.mora_rank << ',' << l.lora_params << ','
        << l.mora_params << ',' << l.total() << ',' << fixed(l.total() / backbone) << '\n';
    char row[96];
    std::snprintf(row, sizeof row, "%5zu %4d %4d %6zu %6zu %7zu\n", l.layer, l.lora_rank,
                  l.mora_rank, l.lora_params, l.mora_params, l.total());
    log << row;
    lora_total += l.lora_params;
    mora_total += l.mora_params;
  }
  csv << "total,,," << lora_total << ',' << mora_total << ',' << budget.total << ','
      << fixed(budget.total / backbone) << '\n';
  log << "total " << budget.total << " adapter parameters, " << fixed(100.0 * budget.total / backbone, 3)
      << "% of " << static_cast<std::size_t>(backbone) << " backbone parameters\n";
  write_file(prepare_out(config) / "budget.csv", csv.str());
  return budget;
}

TrainResult cmd_train(const RunConfig& config, std::ostream& log) {
  const TrainMode mode = parse_train_mode(config.train_mode);
  const fs::path out = prepare_out(config);
  const Vocab vocab = standard_vocab(config.model.vocab);
  const Corpus corpus = domain_corpus(config, vocab);
  TinyDecoder model = build_model(config.model, config.lora_ranks, config.mora_ranks, config.seed);
  const TrainResult result = train(model, corpus.train, corpus.val, mode, config.train,
                                   derive_seed(config.seed, "train"));

  std::ostringstream csv;
  csv << "epoch,loss,val_bleu4\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    csv << e + 1 << ',' << fixed(result.epoch_loss[e]) << ','
        << (e < result.val_bleu4.size() ? fixed(result.val_bleu4[e]) : "") << '\n';
    log << "epoch " << e + 1 << " loss " << fixed(result.epoch_loss[e]) << '\n';
  }
  write_file(out / "loss.csv", csv.str());
  save_checkpoint((out / "checkpoint.bin").string(), model, config);
  if (result.best_epoch > 0) log << "kept epoch " << result.best_epoch << '\n';
  log << "wrote " << (out / "checkpoint.bin").string() << '\n';
  return result;
}

std::string forgetting_csv(const std::vector<RetentionPair>& pairs) {
  std::ostringstream csv;
  csv << "seed,strategy,train_rougeL,train_meteor,train_tokacc,pre_rougeL,pre_meteor,pre_tokacc\n";
  for (const auto& pair : pairs) {
    for (const RetentionReport* r : {&pair.fft, &pair.adapter}) {
      csv << r->seed << ',' << r->strategy << ',' << fixed(100.0 * r->training_domain.rouge_l)
          << ',' << fixed(100.0 * r->training_domain.meteor) << ','
          << fixed(100.0 * r->training_domain.token_accuracy) << ','
          << fixed(100.0 * r->pretrained_domain.rouge_l) << ','
          << fixed(100.0 * r->pretrained_domain.meteor) << ','
          << fixed(100.0 * r->pretrained_domain.token_accuracy) << '\n';
    }
  }
  return csv.str();
}

std::vector<RetentionPair> cmd_forget(const RunConfig& config, std::ostream& log) {
  const fs::path out = prepare_out(config);
  const auto pairs = forgetting_experiment(forgetting_config(config), config.seeds);
  const std::string csv = forgetting_csv(pairs);
  write_file(out / "forgetting.csv", csv);
  log << csv;
  return pairs;
}

std::string riskcov_csv(const std::vector<RiskCoveragePoint>& rouge,
                        const std::vector<RiskCoveragePoint>& accuracy) {
  if (rouge.size() != accuracy.size()) throw ContractError("riskcov: curve length mismatch");
  std::ostringstream csv;
  csv << "coverage,threshold,retained,rougeL,tokacc\n";
  for (std::size_t i = 0; i < rouge.size(); ++i) {
    csv << fixed(rouge[i].coverage) << ',' << fixed(rouge[i].threshold) << ','
        << rouge[i].retained << ',' << fixed(100.0 * rouge[i].value) << ','
        << fixed(100.0 * accuracy[i].value) << '\n';
  }
  return csv.str();
}

std::vector<RiskCoveragePoint> cmd_riskcov(const RunConfig& config, const std::string& checkpoint,
                                           const std::vector<double>& grid, std::ostream& log) {
  const TinyDecoder model = load_checkpoint(checkpoint, config);
  const fs::path out = prepare_out(config);
  const Vocab vocab = standard_vocab(config.model.vocab);
  const Corpus corpus = domain_corpus(config, vocab);
  const Evaluation ev = evaluate(model, corpus.val, vocab, config.train.max_new);
  const auto rouge = risk_coverage(ev.samples, grid, CurveMetric::RougeL);
  const auto accuracy = risk_coverage(ev.samples, grid, CurveMetric::TokenAccuracy);
  const std::string csv = riskcov_csv(rouge, accuracy);
  write_file(out / "riskcov.csv", csv);
  log << csv;
  return rouge;
}

CheckReport cmd_check(const RunConfig& config, Fault fault, std::ostream& log) {
  CheckReport report = run_checks(config, fault);
  print_report(log, report);
  return report;
}

void cmd_gen_data(const RunConfig& config, std::ostream& log) {
  const fs::path out = prepare_out(config);
  const Vocab vocab = standard_vocab(config.model.vocab);
  std::vector<Corpus> corpora;
  for (const char* name : {"pituitary", "nephrectomy"}) {
    const Corpus corpus = gen_corpus(standard_domain(name, config.seed), vocab, config.n_train,
                                     config.n_val, config.seed);
    std::ostringstream text;
    write_corpus_jsonl(text, corpus);
    write_file(out / (std::string(name) + ".jsonl"), text.str());
    log << name << ": " << corpus.train.size() << " train, " << corpus.val.size() << " val\n";
    corpora.push_back(corpus);
  }
  log << "answer vocabulary overlap " << fixed(100.0 * corpus_answer_overlap(corpora[0], corpora[1]), 2)
      << "%\n";
}

}  // namespace vmolora
