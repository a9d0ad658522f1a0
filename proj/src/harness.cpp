#include "lgran/harness.hpp"

#include "lgran/errors.hpp"
#include "lgran/matching.hpp"
#include "lgran/synthworld.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace lgran {

std::size_t PreparedDataset::expression_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : scenes) n += s.expressions.size();
  return n;
}

PreparedDataset prepare(const std::vector<DatasetScene>& data, const Vocabulary& vocab, std::size_t k,
                        VocabularyPolicy policy, const FeatureProvider* features) {
  PreparedDataset out;
  out.scenes.reserve(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Scene& scene = data[s].scene;
    PreparedScene p{scene, features ? build_graph(scene, k, *features) : build_graph(scene, k), {}};
    for (const auto& e : data[s].expressions) {
      if (policy == VocabularyPolicy::kStrict) {
        for (const auto& w : e.tokens) {
          if (!vocab.contains(w)) {
            throw IncompatibleError("scene " + std::to_string(s) + ": word \"" + w +
                                    "\" is not in the model vocabulary");
          }
        }
      }
      const auto& regions = scene.regions;
      const auto it = std::find_if(regions.begin(), regions.end(), [&](const Region& r) { return r.id == e.referent_id; });
      if (it == regions.end()) throw SchemaError("scene " + std::to_string(s) + ": referent not among regions");
      PreparedExpression pe;
      pe.expr = to_expression(e.tokens, vocab);
      pe.words = e.tokens;
      pe.label = static_cast<std::size_t>(it - regions.begin());
      pe.tag = e.tag;
      pe.duplicates = std::any_of(regions.begin(), regions.end(), [&](const Region& r) {
        return r.id != it->id && r.category == it->category && r.attrs == it->attrs;
      });
      p.expressions.push_back(std::move(pe));
    }
    out.scenes.push_back(std::move(p));
  }
  return out;
}

Split validation_split(std::size_t scene_count, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error(ErrorKind::kUsage, "validation fraction must be in [0, 1)");
  constexpr std::uint64_t kSplitSeed = 0x5eed5eedULL;
  Split split;
  for (std::size_t i = 0; i < scene_count; ++i) {
    const double u = static_cast<double>(substream_seed(kSplitSeed, i) >> 11) * 0x1.0p-53;
    (u < fraction ? split.validation : split.train).push_back(i);
  }
  return split;
}

PreparedDataset subset(const PreparedDataset& data, const std::vector<std::size_t>& scene_indices) {
  PreparedDataset out;
  out.scenes.reserve(scene_indices.size());
  for (std::size_t i : scene_indices) out.scenes.push_back(data.scenes.at(i));
  return out;
}

// ---- evaluation ----

EvalReport evaluate(const PreparedDataset& data, const Predictor& predictor) {
  EvalReport report;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) {
    const PreparedScene& scene = data.scenes[s];
    for (std::size_t e = 0; e < scene.expressions.size(); ++e) {
      const PreparedExpression& pe = scene.expressions[e];
      const std::size_t guess = predictor(scene, pe);
      if (guess >= scene.scene.regions.size()) throw Error(ErrorKind::kGeneric, "predictor returned an invalid index");
      const Region& predicted = scene.scene.regions[guess];
      const Region& referent = scene.scene.regions[pe.label];
      SampleRecord r{s, e, predicted.id, referent.id, iou(predicted.box, referent.box), false, pe.tag, pe.duplicates};
      r.correct = r.iou > kCorrectIou;
      report.overall.add(r.correct);
      if (pe.tag == SampleTag::kRelational) {
        report.relational.add(r.correct);
        if (pe.duplicates) report.relational_duplicates.add(r.correct);
      } else {
        report.attribute.add(r.correct);
      }
      report.records.push_back(r);
    }
  }
  return report;
}

EvalReport evaluate(const Model& model, const PreparedDataset& data) {
  return evaluate(data, [&](const PreparedScene& scene, const PreparedExpression& pe) {
    return predict(model, scene.graph, pe.expr).index;
  });
}

// ---- training ----

std::vector<double> MetricsLog::losses() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.loss);
  return out;
}

Json MetricsLog::to_json(const MetricsRecord& r) {
  Json j{{"iteration", r.iteration}, {"loss", r.loss}, {"lr", r.lr}, {"seconds", r.seconds}};
  if (r.train_accuracy) j["train_accuracy"] = *r.train_accuracy;
  if (r.validation_accuracy) j["validation_accuracy"] = *r.validation_accuracy;
  return j;
}

void MetricsLog::write_jsonl(std::ostream& out) const {
  out << Json{{"format_version", 1}, {"kind", "lgran-metrics"}, {"config_hash", config_hash}, {"config", config}}.dump()
      << '\n';
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

ad::Var batch_loss(ad::Tape& tape, const Model& model, const PreparedDataset& data,
                   const std::vector<std::size_t>& scenes, Mode mode, std::mt19937_64& rng) {
  ad::Var total;
  std::size_t count = 0;
  for (std::size_t s : scenes) {
    const PreparedScene& scene = data.scenes.at(s);
    for (const auto& pe : scene.expressions) {
      const ForwardPass fp = forward(tape, model, scene.graph, pe.expr, mode, rng);
      const ad::Var loss = cross_entropy(fp.scores, pe.label);
      total = total.valid() ? ad::add(total, loss) : loss;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::kGeneric, "batch has no expressions");
  return ad::scale(total, 1.0 / static_cast<double>(count));
}

namespace {

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

double parameter_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

[[noreturn]] void numeric_abort(const NumericError& e, std::size_t iteration, const std::vector<std::size_t>& batch,
                                const Model& model, const MetricsLog& log, const TrainHooks& hooks) {
  Json params = Json::array();
  for (std::size_t i = 0; i < model.store().size(); ++i) {
    const Tensor& t = model.store().value(model.store().at(i));
    const bool finite = std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); });
    params.push_back({{"name", model.store().name(model.store().at(i))},
                      {"norm", finite ? Json(parameter_norm(t)) : Json(nullptr)},
                      {"finite", finite}});
  }
  Json recent = Json::array();
  const std::size_t from = log.records.size() > 20 ? log.records.size() - 20 : 0;
  for (std::size_t i = from; i < log.records.size(); ++i) recent.push_back(MetricsLog::to_json(log.records[i]));
  const Json dump{{"kind", "lgran-numeric-failure"},
                  {"error", e.what()},
                  {"iteration", iteration},
                  {"batch_scenes", batch},
                  {"config", log.config},
                  {"recent", recent},
                  {"parameters", params}};
  const std::filesystem::path path =
      (hooks.diagnostics_dir.empty() ? std::filesystem::path(".") : hooks.diagnostics_dir) / "numeric_failure.json";
  std::string where = path.string();
  try {
    write_text_file(path, dump.dump(2) + "\n");
  } catch (const IoError&) {
    where = "(diagnostics could not be written)";
  }
  throw NumericError("non-finite value at iteration " + std::to_string(iteration + 1) + ": " + e.what() +
                     "; state dumped to " + where);
}

}  // namespace

TrainResult train(const PreparedDataset& data, const TrainConfig& config, std::size_t vocab_size,
                  const PreparedDataset* validation, const TrainHooks& hooks) {
  validate(config);
  if (data.expression_count() == 0) throw Error(ErrorKind::kUsage, "training data has no expressions");

  Model model(config.model, vocab_size);
  AdamState adam(model.store(), AdamHyper{config.base_lr});
  MetricsLog log{config_hash(config), to_json(config), {}};
  std::mt19937_64 rng(config.seed);

  // Scenes without expressions contribute nothing, so they are never drawn.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    if (!data.scenes[i].expressions.empty()) order.push_back(i);
  }
  std::size_t cursor = order.size();
  const std::size_t batch_size = std::min(config.batch_images, order.size());

  const auto start = std::chrono::steady_clock::now();
  double best_validation = -1.0;
  std::size_t stale = 0;
  bool stopped_early = false;
  std::size_t it = 0;
  for (; it < config.iterations; ++it) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    MetricsRecord record;
    record.iteration = it + 1;
    record.lr = learning_rate(config, it);
    try {
      ad::Tape tape(&model.store());
      const ad::Var loss = batch_loss(tape, model, data, batch, Mode::kTrain, rng);
      Gradients grads(model.store());
      tape.backward(loss, grads);
      record.loss = loss.value()[0];
      adam_step(model.store(), grads, adam, record.lr);
      for (std::size_t i = 0; i < model.store().size(); ++i) {
        for (double v : model.store().value(model.store().at(i)).data()) {
          if (!std::isfinite(v)) throw NumericError("parameter " + model.store().name(model.store().at(i)) + " is not finite");
        }
      }
    } catch (const NumericError& e) {
      numeric_abort(e, it, batch, model, log, hooks);
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const bool last = it + 1 == config.iterations;
    if (config.eval_every > 0 && ((it + 1) % config.eval_every == 0 || last)) {
      record.train_accuracy = evaluate(model, data).overall.value();
      if (validation && validation->expression_count() > 0) {
        const double v = evaluate(model, *validation).overall.value();
        record.validation_accuracy = v;
        if (v > best_validation) {
          best_validation = v;
          stale = 0;
        } else if (config.patience > 0 && ++stale >= config.patience) {
          stopped_early = true;
        }
      }
    }
    log.records.push_back(record);
    if (hooks.on_record) hooks.on_record(record);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 && !last) {
      hooks.on_checkpoint(it + 1, model, adam, rng_text(rng));
    }
    if (stopped_early) {
      ++it;
      break;
    }
  }
  std::string state = rng_text(rng);
  if (hooks.on_checkpoint) hooks.on_checkpoint(it, model, adam, state);
  return TrainResult{std::move(model), std::move(adam), std::move(log), it, stopped_early, std::move(state)};
}

// ---- ablation ----

std::vector<AblationRow> ablation_run(const PreparedDataset& train_data, const PreparedDataset& test_data,
                                      const TrainConfig& base, std::size_t vocab_size,
                                      const std::vector<Variant>& variants,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    TrainConfig config = base;
    config.model.variant = v;
    const auto start = std::chrono::steady_clock::now();
    TrainResult result = train(train_data, config, vocab_size);
    AblationRow row;
    row.variant = v;
    row.final_loss = result.log.records.empty() ? 0.0 : result.log.records.back().loss;
    row.train = evaluate(result.model, train_data);
    row.test = evaluate(result.model, test_data);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string percent(const Accuracy& a) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * a.value();
  return s.str();
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << "variant,overall,relational,attribute,relational_duplicates,train_overall,test_count,relational_count,"
       "final_loss,seconds\n";
  for (const auto& r : rows) {
    s << variant_name(r.variant) << ',' << percent(r.test.overall) << ',' << percent(r.test.relational) << ','
      << percent(r.test.attribute) << ',' << percent(r.test.relational_duplicates) << ','
      << percent(r.train.overall) << ',' << r.test.overall.total << ',' << r.test.relational.total << ','
      << std::setprecision(6) << r.final_loss << ',' << std::fixed << std::setprecision(1) << r.seconds
      << std::defaultfloat << '\n';
  }
  return s.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(10) << "variant" << std::right << std::setw(10) << "overall" << std::setw(12)
    << "relational" << std::setw(11) << "attribute" << std::setw(12) << "rel+dups" << std::setw(8) << "train"
    << std::setw(10) << "seconds" << '\n';
  for (const auto& r : rows) {
    std::ostringstream secs;
    secs << std::fixed << std::setprecision(1) << r.seconds;
    s << std::left << std::setw(10) << variant_name(r.variant) << std::right << std::setw(10)
      << percent(r.test.overall) << std::setw(12) << percent(r.test.relational) << std::setw(11)
      << percent(r.test.attribute) << std::setw(12) << percent(r.test.relational_duplicates) << std::setw(8)
      << percent(r.train.overall) << std::setw(10) << secs.str() << '\n';
  }
  return s.str();
}

// ---- gradient checks ----

GradCheckReport grad_check(ParamStore& store, const std::function<ad::Var(ad::Tape&)>& loss,
                           const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw Error(ErrorKind::kUsage, "finite-difference step must be positive");
  Gradients analytic(store);
  {
    ad::Tape tape(&store);
    const ad::Var root = loss(tape);
    tape.backward(root, analytic);
  }
  auto eval = [&]() {
    ad::Tape tape(&store);
    return loss(tape).value()[0];
  };

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t p = 0; p < store.size(); ++p) {
    const ParamId id = store.at(p);
    Tensor& value = store.value(id);
    const Tensor& grad = analytic.get(id);
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_group > 0 && coords.size() > options.coords_per_group) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_group);
      std::sort(coords.begin(), coords.end());
    }
    GroupError group{store.name(id), coords.size(), value.size(), 0.0, 0.0};
    for (std::size_t c : coords) {
      const double keep = value[c];
      value[c] = keep + options.h;
      const double up = eval();
      value[c] = keep - options.h;
      const double down = eval();
      value[c] = keep;
      const double numeric = (up - down) / (2.0 * options.h);
      const double diff = std::abs(grad[c] - numeric);
      const double denom = std::max({std::abs(grad[c]), std::abs(numeric), options.floor});
      group.max_absolute = std::max(group.max_absolute, diff);
      group.max_relative = std::max(group.max_relative, diff / denom);
    }
    if (group.max_relative >= report.max_relative) {
      report.max_relative = group.max_relative;
      report.worst_group = group.name;
    }
    report.groups.push_back(std::move(group));
  }
  return report;
}

GradCheckReport grad_check(Model& model, const ObjectGraph& graph, const Expression& expr, std::size_t label,
                           Mode mode, const GradCheckOptions& options) {
  if (mode == Mode::kTrain && model.config().dropout > 0.0) {
    throw Error(ErrorKind::kUsage,
                "gradient check refused: dropout makes the loss random; use eval mode or set dropout to 0");
  }
  if (label >= graph.node_count) throw Error(ErrorKind::kUsage, "label is not a node of the graph");
  return grad_check(model.store(), [&](ad::Tape& tape) {
    std::mt19937_64 rng(0);
    return cross_entropy(forward(tape, model, graph, expr, mode, rng).scores, label);
  }, options);
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream s;
  s << std::left << std::setw(28) << "parameter" << std::right << std::setw(10) << "checked" << std::setw(10)
    << "total" << std::setw(14) << "max rel" << std::setw(14) << "max abs" << '\n';
  s << std::scientific << std::setprecision(3);
  for (const auto& g : report.groups) {
    s << std::left << std::setw(28) << g.name << std::right << std::setw(10) << g.checked << std::setw(10) << g.total
      << std::setw(14) << g.max_relative << std::setw(14) << g.max_absolute << '\n';
  }
  s << "max relative error " << report.max_relative << " (" << report.worst_group << ")\n";
  return s.str();
}

}  // namespace lgran
