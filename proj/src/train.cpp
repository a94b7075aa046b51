// SPDX-License-Identifier: Apache-2.0

#include "vmolora/train.hpp"

#include <numeric>

#include "vmolora/ops.hpp"
#include "vmolora/rng.hpp"

namespace vmolora {

Example make_example(const QaPair& qa) {
  if (qa.answer_ids.empty()) throw ContractError("example: empty answer");
  Example ex;
  ex.scene = qa.scene_id;
  ex.inputs = qa.question_ids;
  ex.inputs.insert(ex.inputs.end(), qa.answer_ids.begin(), qa.answer_ids.end());
  // Row i predicts inputs[i]; the final row predicts the stop token.
  ex.targets.assign(ex.inputs.size() + 1, ops::kIgnore);
  for (std::size_t i = qa.question_ids.size(); i < ex.inputs.size(); ++i) {
    ex.targets[i] = ex.inputs[i];
  }
  ex.targets.back() = Vocab::kStop;
  return ex;
}

Var example_loss(const TinyDecoder& model, Tape& tape, const Example& ex, TrainMode mode,
                 Var* logits_out) {
  Var logits = forward(model, tape, ex.scene, ex.inputs, mode);
  if (logits_out != nullptr) *logits_out = logits;
  return ops::cross_entropy(logits, ex.targets);
}

double mean_loss(const TinyDecoder& model, std::span<const QaPair> samples) {
  if (samples.empty()) throw ContractError("mean_loss: no samples");
  double total = 0.0;
  for (const auto& qa : samples) {
    Tape tape(false);
    total += example_loss(model, tape, make_example(qa), TrainMode::FrozenBackbone).value()(0, 0);
  }
  return total / static_cast<double>(samples.size());
}

namespace {

bool is_trainable(const NamedParam& p, TrainMode mode) {
  return mode == TrainMode::FrozenBackbone ? p.adapter : !p.adapter;
}

std::vector<NamedParam> trainable_params(TinyDecoder& model, TrainMode mode) {
  std::vector<NamedParam> out;
  for (auto& p : model.parameters()) {
    if (is_trainable(p, mode)) out.push_back(p);
  }
  return out;
}

}  // namespace

TrainResult train(TinyDecoder& model, std::span<const QaPair> samples,
                  std::span<const QaPair> val, TrainMode mode, const TrainConfig& config,
                  std::uint64_t seed) {
  if (samples.empty()) throw ContractError("train: empty corpus");
  if (config.batch == 0) throw ContractError("train: batch size must be positive");
  const bool selecting = config.select_best && !val.empty();

  std::vector<Example> examples;
  examples.reserve(samples.size());
  for (const auto& qa : samples) examples.push_back(make_example(qa));

  const auto params = trainable_params(model, mode);
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.value->rows(), p.value->cols());

  Adam adam(config.adam);
  TrainResult result;
  double best_bleu = -1.0;
  std::vector<Matrix> best_values;

  // Evaluation needs a vocabulary only for detokenization; ids suffice here.
  Vocab id_vocab;
  for (std::size_t i = id_vocab.size(); i < model.config.vocab; ++i) {
    id_vocab.add("w" + std::to_string(i));
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed, "epoch/" + std::to_string(epoch));
    rng.shuffle(order);

    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch);
      for (auto& g : grads) g.fill(0.0);
      for (std::size_t i = start; i < stop; ++i) {
        Tape tape;
        Var loss = example_loss(model, tape, examples[order[i]], mode);
        epoch_total += loss.value()(0, 0);
        tape.backward(loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
          axpy(1.0, tape.gradient(params[p].name), grads[p]);
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      std::vector<ParamGrad> update;
      update.reserve(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        for (double& v : grads[p].data()) v *= inv;
        update.push_back({params[p].name, params[p].value, &grads[p]});
      }
      adam.step(update);
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(examples.size()));

    if (selecting) {
      const double b4 = evaluate(model, val, id_vocab, config.max_new).report.bleu[3];
      result.val_bleu4.push_back(b4);
      if (b4 > best_bleu) {
        best_bleu = b4;
        result.best_epoch = epoch + 1;
        best_values.clear();
        for (const auto& p : params) best_values.push_back(*p.value);
      }
    } else {
      result.best_epoch = epoch + 1;
    }
  }
  if (selecting && !best_values.empty()) {
    for (std::size_t p = 0; p < params.size(); ++p) *params[p].value = best_values[p];
  }
  return result;
}

Evaluation evaluate(const TinyDecoder& model, std::span<const QaPair> samples,
                    const Vocab& vocab, std::size_t max_new) {
  if (samples.empty()) throw ContractError("evaluate: no samples");
  Evaluation ev;
  std::vector<Words> candidates;
  std::vector<Words> references;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const QaPair& qa = samples[i];
    GenerationTrace trace =
        generate_greedy(model, qa.scene_id, qa.question_ids, max_new, Vocab::kStop);
    trace.text = vocab.decode(trace.tokens);
    const std::string reference = vocab.decode(qa.answer_ids);
    Words cand = split_words(trace.text);
    Words ref = split_words(reference);
    ScoredSample s;
    s.id = i;
    s.reference = reference;
    s.generated = trace.text;
    s.uncertainty = answer_uncertainty(trace);
    s.rouge_l = rouge_l(cand, ref);
    s.token_accuracy = token_accuracy(cand, ref);
    ev.samples.push_back(std::move(s));
    candidates.push_back(std::move(cand));
    references.push_back(std::move(ref));
  }
  ev.report = score_corpus(candidates, references);
  return ev;
}

namespace {

RetentionMetrics retention(const MetricReport& r) {
  return {r.rougeL, r.meteor, r.token_accuracy};
}

}  // namespace

std::vector<RetentionPair> forgetting_experiment(const ForgettingConfig& config,
                                                 std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ContractError("forgetting_experiment: no seeds");
  config.model.validate();
  const Vocab vocab = standard_vocab(config.model.vocab);
  std::vector<RetentionPair> out;
  for (std::uint64_t seed : seeds) {
    const SyntheticDomain pre_domain = standard_domain("pituitary", seed);
    const SyntheticDomain new_domain = standard_domain("nephrectomy", seed);
    const Corpus pre = gen_corpus(pre_domain, vocab, config.n_train, config.n_val, seed);
    const Corpus next = gen_corpus(new_domain, vocab, config.n_train, config.n_val, seed);

    TinyDecoder base = build_model(config.model, config.lora_ranks, config.mora_ranks, seed);
    TrainConfig stage1 = config.train;
    stage1.epochs = config.stage1_epochs;
    train(base, pre.train, pre.val, TrainMode::Full, stage1, derive_seed(seed, "stage1"));

    TrainConfig stage2 = config.train;
    stage2.epochs = config.stage2_epochs;
    RetentionPair pair;
    const std::pair<TrainMode, const char*> branches[] = {{TrainMode::Full, "fft"},
                                                          {TrainMode::FrozenBackbone, "adapter"}};
    for (const auto& [mode, name] : branches) {
      TinyDecoder model = base;
      train(model, next.train, next.val, mode, stage2, derive_seed(seed, "stage2"));
      RetentionReport rep;
      rep.strategy = name;
      rep.seed = seed;
      rep.training_domain = retention(evaluate(model, next.val, vocab, config.train.max_new).report);
      rep.pretrained_domain = retention(evaluate(model, pre.val, vocab, config.train.max_new).report);
      (mode == TrainMode::Full ? pair.fft : pair.adapter) = rep;
    }
    out.push_back(pair);
  }
  return out;
}

}  // namespace vmolora
