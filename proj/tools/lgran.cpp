// Command-line front end. Every failure prints one line
//   lgran: error[<kind>]: <reason>
// on stderr and exits with the code of its error class.

#include "lgran/errors.hpp"
#include "lgran/harness.hpp"
#include "lgran/io.hpp"
#include "lgran/synthworld.hpp"

#include "CLI11.hpp"

#include <cctype>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace {

using namespace lgran;

std::string_view kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kGeneric: return "generic";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kSchema: return "schema";
    case ErrorKind::kIncompatible: return "incompatible";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kGradCheck: return "gradcheck";
    case ErrorKind::kGeneration: return "generation";
  }
  return "generic";
}

int report(ErrorKind kind, const std::string& message) {
  std::string line = message;
  for (char& c : line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "lgran: error[" << kind_name(kind) << "]: " << line << '\n';
  return static_cast<int>(kind);
}

// Relative paths resolve against LGRAN_DATA_DIR when it is set.
std::filesystem::path resolve(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  if (const char* dir = std::getenv("LGRAN_DATA_DIR"); dir && *dir) return std::filesystem::path(dir) / p;
  return p;
}

Vocabulary vocabulary_of(const std::vector<DatasetScene>& data) {
  std::set<std::string> words;
  for (const auto& s : data) {
    for (const auto& e : s.expressions) words.insert(e.tokens.begin(), e.tokens.end());
  }
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

std::vector<DatasetScene> load_data(const std::string& path, const std::string& features) {
  auto data = read_dataset_file(resolve(path));
  if (!features.empty()) apply_feature_file(data, resolve(features));
  if (data.empty()) throw Error(ErrorKind::kUsage, path + " holds no scenes");
  return data;
}

// Flags for every training knob. Each only overrides the config file when it
// was given on the command line.
struct TrainFlags {
  std::string config_file;
  std::size_t iterations = 0, batch = 0, decay_every = 0, eval_every = 0, checkpoint_every = 0, patience = 0;
  std::size_t dims = 0, k = 0;
  double lr = 0, dropout = 0;
  std::uint64_t seed = 0, init_seed = 0;
  std::string variant, norm;
  std::vector<CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "TrainConfig JSON file")->check(CLI::ExistingFile);
    options = {
        app->add_option("--iterations", iterations, "optimizer steps"),
        app->add_option("--batch", batch, "images per batch"),
        app->add_option("--lr", lr, "base learning rate"),
        app->add_option("--decay-every", decay_every, "iterations per tenfold learning-rate decay"),
        app->add_option("--eval-every", eval_every, "iterations between accuracy evaluations (0: never)"),
        app->add_option("--checkpoint-every", checkpoint_every, "iterations between checkpoints (0: final only)"),
        app->add_option("--patience", patience, "evaluations without improvement before stopping (0: off)"),
        app->add_option("--dims", dims, "set embed, encoder, attention and match widths at once"),
        app->add_option("-k,--neighbors", k, "neighbors per node and relation kind"),
        app->add_option("--dropout", dropout, "dropout rate"),
        app->add_option("--seed", seed, "training seed"),
        app->add_option("--init-seed", init_seed, "parameter initialization seed"),
        app->add_option("--variant", variant, "NodeRep | GraphRep | NodeAttn | EdgeAttn | LGRANs"),
        app->add_option("--norm", norm, "none | batch | layer"),
    };
  }

  bool given(std::size_t i) const { return options[i]->count() > 0; }

  TrainConfig resolve_config() const {
    TrainConfig c;
    if (!config_file.empty()) c = train_config_from_json(read_json_file(config_file));
    if (given(0)) c.iterations = iterations;
    if (given(1)) c.batch_images = batch;
    if (given(2)) c.base_lr = lr;
    if (given(3)) c.decay_every = decay_every;
    if (given(4)) c.eval_every = eval_every;
    if (given(5)) c.checkpoint_every = checkpoint_every;
    if (given(6)) c.patience = patience;
    if (given(7)) c.model.dims = {dims, dims, dims, dims};
    if (given(8)) c.model.k = k;
    if (given(9)) c.model.dropout = dropout;
    if (given(10)) c.seed = seed;
    if (given(11)) c.model.init_seed = init_seed;
    if (given(12)) c.model.variant = parse_variant(variant);
    if (given(13)) c.model.norm = parse_norm_mode(norm);
    return c;
  }
};

void print_report(const EvalReport& r) {
  auto line = [](const char* name, const Accuracy& a) {
    std::cout << std::left << std::setw(24) << name << std::right << std::fixed << std::setprecision(4)
              << a.value() << "  (" << a.correct << "/" << a.total << ")\n";
  };
  line("overall", r.overall);
  line("relational", r.relational);
  line("attribute-only", r.attribute);
  line("relational, duplicates", r.relational_duplicates);
}

Json report_json(const EvalReport& r) {
  auto acc = [](const Accuracy& a) { return Json{{"accuracy", a.value()}, {"correct", a.correct}, {"total", a.total}}; };
  return Json{{"overall", acc(r.overall)},
              {"relational", acc(r.relational)},
              {"attribute", acc(r.attribute)},
              {"relational_duplicates", acc(r.relational_duplicates)}};
}

int run(int argc, char** argv) {
  CLI::App app{"Language-guided graph attention for referring expressions"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string spec_file, policy_file, gen_out;
  std::size_t count = 5000;
  std::uint64_t gen_seed = 7;
  gen->add_option("--spec", spec_file, "SceneSpec JSON file (defaults when omitted)")->check(CLI::ExistingFile);
  gen->add_option("--policy", policy_file, "ExpressionPolicy JSON file")->check(CLI::ExistingFile);
  gen->add_option("--count", count, "number of samples")->capture_default_str();
  gen->add_option("--seed", gen_seed, "generation seed")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "dataset path (JSON lines)")->required();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a model");
  TrainFlags train_flags;
  train_flags.attach(tr);
  std::string train_data, train_features, train_out, metrics_out;
  double val_fraction = 0.1;
  tr->add_option("--data", train_data, "training dataset")->required();
  tr->add_option("--features", train_features, "per-region appearance vectors (JSON lines)");
  tr->add_option("--val-fraction", val_fraction, "share of scenes held out for validation")->capture_default_str();
  tr->add_option("-o,--out", train_out, "checkpoint path")->required();
  tr->add_option("--metrics", metrics_out, "metrics log path (default: <out>.metrics.jsonl)");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_features, eval_json, eval_records;
  bool allow_unknown = false;
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint")->required();
  ev->add_option("--data", eval_data, "dataset")->required();
  ev->add_option("--features", eval_features, "per-region appearance vectors (JSON lines)");
  ev->add_flag("--allow-unknown", allow_unknown, "map words outside the vocabulary to <unk>");
  ev->add_option("--json", eval_json, "write the summary as JSON");
  ev->add_option("--records", eval_records, "write per-expression results as JSON lines");

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "train and compare the five variants");
  TrainFlags ablate_flags;
  ablate_flags.attach(ab);
  std::string ab_train, ab_test, ab_features, ab_csv, ab_table;
  std::vector<std::string> ab_variants;
  ab->add_option("--train", ab_train, "training dataset")->required();
  ab->add_option("--test", ab_test, "test dataset")->required();
  ab->add_option("--features", ab_features, "per-region appearance vectors for both sets");
  ab->add_option("--variants", ab_variants, "subset of variants to run");
  ab->add_option("--csv", ab_csv, "write the table as CSV");
  ab->add_option("--table", ab_table, "write the aligned text table");

  // ---- explain ----
  auto* ex = app.add_subcommand("explain", "dump attention for one expression");
  std::string ex_ckpt, ex_data, ex_features, ex_text, ex_json, ex_svg;
  std::size_t ex_scene = 0, ex_expr = 0;
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint")->required();
  ex->add_option("--data", ex_data, "dataset")->required();
  ex->add_option("--features", ex_features, "per-region appearance vectors (JSON lines)");
  ex->add_option("--scene", ex_scene, "scene index (line number minus one)")->capture_default_str();
  ex->add_option("--expression", ex_expr, "expression index within the scene")->capture_default_str();
  ex->add_option("--text", ex_text, "use this expression instead of the stored one");
  ex->add_option("--json", ex_json, "attention dump path")->required();
  ex->add_option("--svg", ex_svg, "SVG overlay path");

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  TrainFlags gc_flags;
  gc_flags.attach(gc);
  std::string gc_ckpt, gc_data, gc_mode = "eval";
  std::size_t gc_scene = 0, gc_coords = 0;
  double gc_h = 1e-5, gc_tol = 1e-4;
  gc->add_option("--checkpoint", gc_ckpt, "check this checkpoint instead of a fresh model");
  gc->add_option("--data", gc_data, "dataset holding the sample (a generated one when omitted)");
  gc->add_option("--scene", gc_scene, "scene index")->capture_default_str();
  gc->add_option("--step", gc_h, "finite-difference step")->capture_default_str();
  gc->add_option("--coords", gc_coords, "coordinates per parameter tensor (0: all)")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "maximum relative error")->capture_default_str();
  gc->add_option("--mode", gc_mode, "eval | train")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(ErrorKind::kUsage, e.what());
  }

  if (*gen) {
    const SceneSpec spec = spec_file.empty() ? SceneSpec{} : scene_spec_from_json(read_json_file(spec_file));
    const ExpressionPolicy policy =
        policy_file.empty() ? ExpressionPolicy{} : policy_from_json(read_json_file(policy_file));
    const auto samples = generate_dataset(spec, policy, count, gen_seed);
    write_dataset_file(resolve(gen_out), to_dataset(samples));
    std::cout << "wrote " << samples.size() << " samples to " << resolve(gen_out).string() << '\n';
    return 0;
  }

  if (*tr) {
    const TrainConfig config = train_flags.resolve_config();
    validate(config);
    const auto raw = load_data(train_data, train_features);
    const Vocabulary vocab = vocabulary_of(raw);
    const PreparedDataset all = prepare(raw, vocab, config.model.k);
    const Split split = validation_split(all.scenes.size(), val_fraction);
    const PreparedDataset train_set = subset(all, split.train);
    const PreparedDataset val_set = subset(all, split.validation);
    const std::filesystem::path out = resolve(train_out);
    TrainHooks hooks;
    hooks.diagnostics_dir = out.parent_path();
    hooks.on_record = [&](const MetricsRecord& r) {
      if (r.validation_accuracy || r.iteration % 100 == 0 || r.iteration == config.iterations) {
        std::cout << MetricsLog::to_json(r).dump() << '\n';
      }
    };
    hooks.on_checkpoint = [&](std::size_t it, const Model& m, const AdamState& adam, const std::string& rng) {
      std::filesystem::path path = out;
      if (it != config.iterations) path += ".iter" + std::to_string(it);
      save_checkpoint_file(path, m, vocab, {it, adam, rng});
    };
    const TrainResult result = train(train_set, config, vocab.size(), val_set.scenes.empty() ? nullptr : &val_set, hooks);
    if (result.stopped_early) save_checkpoint_file(out, result.model, vocab, {result.iterations_run, result.adam, result.rng_state});
    std::ostringstream log;
    result.log.write_jsonl(log);
    write_text_file(metrics_out.empty() ? std::filesystem::path(out.string() + ".metrics.jsonl") : resolve(metrics_out),
                    log.str());
    auto summary = [](const Accuracy& a) {
      return std::to_string(a.value()) + " (" + std::to_string(a.correct) + "/" + std::to_string(a.total) + ")";
    };
    std::cout << "train accuracy " << summary(evaluate(result.model, train_set).overall);
    if (!val_set.scenes.empty()) std::cout << ", validation accuracy " << summary(evaluate(result.model, val_set).overall);
    std::cout << "\ncheckpoint " << out.string() << '\n';
    return 0;
  }

  if (*ev) {
    const LoadedCheckpoint ckpt = load_checkpoint_file(resolve(eval_ckpt));
    const auto raw = load_data(eval_data, eval_features);
    const PreparedDataset data = prepare(raw, ckpt.vocab, ckpt.model.config().k,
                                         allow_unknown ? VocabularyPolicy::kMapUnknown : VocabularyPolicy::kStrict);
    const EvalReport r = evaluate(ckpt.model, data);
    print_report(r);
    if (!eval_json.empty()) {
      Json j = report_json(r);
      j["format_version"] = 1;
      j["config"] = to_json(ckpt.model.config());
      write_text_file(resolve(eval_json), j.dump(2) + "\n");
    }
    if (!eval_records.empty()) {
      std::ostringstream out;
      for (const auto& rec : r.records) {
        out << Json{{"scene", rec.scene}, {"expression", rec.expression}, {"predicted_id", rec.predicted_id},
                    {"referent_id", rec.referent_id}, {"iou", rec.iou}, {"correct", rec.correct},
                    {"tag", tag_name(rec.tag)}, {"duplicates", rec.duplicates}}
                   .dump()
            << '\n';
      }
      write_text_file(resolve(eval_records), out.str());
    }
    return 0;
  }

  if (*ab) {
    const TrainConfig config = ablate_flags.resolve_config();
    validate(config);
    const auto train_raw = load_data(ab_train, ab_features);
    const auto test_raw = load_data(ab_test, ab_features);
    const Vocabulary vocab = vocabulary_of(train_raw);
    const PreparedDataset train_set = prepare(train_raw, vocab, config.model.k);
    const PreparedDataset test_set = prepare(test_raw, vocab, config.model.k);
    std::vector<Variant> variants;
    for (const auto& v : ab_variants) variants.push_back(parse_variant(v));
    if (variants.empty()) variants = {Variant::kNodeRep, Variant::kGraphRep, Variant::kNodeAttn, Variant::kEdgeAttn, Variant::kLgrans};
    const auto rows = ablation_run(train_set, test_set, config, vocab.size(), variants, [](const AblationRow& r) {
      std::cerr << variant_name(r.variant) << ": test " << r.test.overall.value() << ", relational "
                << r.test.relational.value() << " (" << r.seconds << " s)\n";
    });
    const std::string table = ablation_table(rows);
    std::cout << table;
    if (!ab_csv.empty()) write_text_file(resolve(ab_csv), ablation_csv(rows));
    if (!ab_table.empty()) write_text_file(resolve(ab_table), table);
    return 0;
  }

  if (*ex) {
    const LoadedCheckpoint ckpt = load_checkpoint_file(resolve(ex_ckpt));
    const auto raw = load_data(ex_data, ex_features);
    if (ex_scene >= raw.size()) throw Error(ErrorKind::kUsage, "scene index out of range");
    const DatasetScene& d = raw[ex_scene];
    std::vector<std::string> words;
    std::optional<int> referent;
    if (!ex_text.empty()) {
      std::istringstream in(ex_text);
      for (std::string w; in >> w;) {
        for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        words.push_back(w);
      }
    } else {
      if (ex_expr >= d.expressions.size()) throw Error(ErrorKind::kUsage, "expression index out of range");
      words = d.expressions[ex_expr].tokens;
      referent = d.expressions[ex_expr].referent_id;
    }
    const ObjectGraph graph = build_graph(d.scene, ckpt.model.config().k);
    const Prediction p = predict(ckpt.model, graph, to_expression(words, ckpt.vocab));
    write_text_file(resolve(ex_json),
                    attention_dump(d.scene, graph, words, p, ckpt.model.config().variant, referent).dump(2) + "\n");
    if (!ex_svg.empty()) write_text_file(resolve(ex_svg), attention_svg(d.scene, graph, words, p, referent));
    std::cout << "predicted region " << p.region_id;
    if (referent) std::cout << (p.region_id == *referent ? " (correct)" : " (referent " + std::to_string(*referent) + ")");
    std::cout << '\n';
    return 0;
  }

  if (*gc) {
    if (gc_mode != "eval" && gc_mode != "train") throw Error(ErrorKind::kUsage, "--mode must be eval or train");
    std::vector<DatasetScene> raw;
    if (!gc_data.empty()) {
      raw = load_data(gc_data, "");
    } else {
      // A small generated sample keeps full finite differences tractable.
      SceneSpec spec;
      spec.min_regions = spec.max_regions = 4;
      std::mt19937_64 rng(gc_scene + 1);
      const Scene scene = generate_scene(spec, rng);
      raw.push_back({scene, {{{"the", "cat", "left", "of", "the", "dog"}, scene.regions[0].id, std::nullopt,
                              SampleTag::kRelational}}});
      gc_scene = 0;
    }
    if (gc_scene >= raw.size()) throw Error(ErrorKind::kUsage, "scene index out of range");
    std::optional<LoadedCheckpoint> ckpt;
    if (!gc_ckpt.empty()) ckpt.emplace(load_checkpoint_file(resolve(gc_ckpt)));
    const TrainConfig config = gc_flags.resolve_config();
    const Vocabulary vocab = ckpt ? ckpt->vocab : vocabulary_of(raw);
    Model model = ckpt ? ckpt->model : Model(config.model, vocab.size());
    const PreparedDataset data = prepare({raw[gc_scene]}, vocab, model.config().k);
    const auto& scene = data.scenes[0];
    if (scene.expressions.empty()) throw Error(ErrorKind::kUsage, "scene has no expression");
    GradCheckOptions options;
    options.h = gc_h;
    options.coords_per_group = gc_coords;
    const GradCheckReport r = grad_check(model, scene.graph, scene.expressions[0].expr, scene.expressions[0].label,
                                         gc_mode == "train" ? Mode::kTrain : Mode::kEval, options);
    std::cout << format_report(r);
    if (!(r.max_relative < gc_tol)) {
      std::ostringstream msg;
      msg << "max relative error " << r.max_relative << " in " << r.worst_group << " exceeds " << gc_tol;
      return report(ErrorKind::kGradCheck, msg.str());
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const lgran::Error& e) {
    return report(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report(lgran::ErrorKind::kGeneric, e.what());
  }
}
