// Command-line front end: reproducible, manifest-stamped experiment runs.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "olab/align.hpp"
#include "olab/config.hpp"
#include "olab/data.hpp"
#include "olab/engine.hpp"
#include "olab/errors.hpp"
#include "olab/eval.hpp"
#include "olab/imaging.hpp"
#include "olab/manifest.hpp"
#include "olab/probe.hpp"
#include "olab/train.hpp"

namespace fs = std::filesystem;
using namespace olab;

namespace {

struct RunContext {
  config::ExperimentConfig cfg;
  std::string config_path;   // may be empty (defaults / manifest)
  std::string manifest_path; // non-empty when re-running from a manifest
  bool force = false;
  fs::path out;
  manifest::Manifest mani;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
};

void apply_environment(config::ExperimentConfig& cfg, manifest::Manifest& mani) {
  if (const char* root = std::getenv("OLAB_OUTPUT_ROOT")) {
    cfg.output_dir = (fs::path(root) / cfg.output_dir).string();
    mani.environment["OLAB_OUTPUT_ROOT"] = root;
  }
  if (const char* seed = std::getenv("OLAB_SEED")) {
    cfg.seed = std::stoull(seed);
    mani.environment["OLAB_SEED"] = seed;
  }
}

RunContext open_run(const std::string& command, const std::string& config_path,
                    const std::string& manifest_path, bool force) {
  RunContext ctx;
  ctx.config_path = config_path;
  ctx.manifest_path = manifest_path;
  ctx.force = force;
  if (!manifest_path.empty()) {
    manifest::Manifest prior = manifest::read_manifest(manifest_path);
    ctx.cfg = config::parse_config(prior.resolved_config);
    ctx.mani.environment = prior.environment;
  } else if (!config_path.empty()) {
    ctx.cfg = config::load_config(config_path);
    ctx.mani.inputs[config_path] = manifest::hash_string(manifest::fnv1a_file(config_path));
  }
  ctx.mani.command = command;
  apply_environment(ctx.cfg, ctx.mani);
  ctx.mani.seed = ctx.cfg.seed;

  ctx.out = ctx.cfg.output_dir;
  if (fs::exists(ctx.out) && !fs::is_empty(ctx.out) && !force)
    throw ConfigError("output directory " + ctx.out.string() +
                      " already has results; use --force or a new directory");
  fs::create_directories(ctx.out);
  return ctx;
}

void close_run(RunContext& ctx) {
  ctx.mani.resolved_config = ctx.cfg.serialize();
  ctx.mani.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.t0).count();
  std::ofstream(ctx.out / "resolved.ini") << ctx.mani.resolved_config;
  manifest::write_manifest((ctx.out / "manifest.json").string(), ctx.mani);
}

void note_input(RunContext& ctx, const std::string& path) {
  if (!path.empty() && fs::exists(path))
    ctx.mani.inputs[path] = manifest::hash_string(manifest::fnv1a_file(path));
}

data::Corpus load_corpus(RunContext& ctx) {
  std::vector<engine::GameRecord> games;
  if (ctx.cfg.corpus_source.empty()) {
    games.reserve(ctx.cfg.corpus_games);
    for (int i = 0; i < ctx.cfg.corpus_games; ++i)
      games.push_back(engine::generate_random_game(ctx.cfg.corpus_seed + i));
  } else {
    note_input(ctx, ctx.cfg.corpus_source);
    std::ifstream in(ctx.cfg.corpus_source);
    if (!in) throw DataError("cannot open corpus source " + ctx.cfg.corpus_source);
    engine::TranscriptImport import = engine::import_transcripts(in, false);
    for (const auto& issue : import.issues)
      std::cerr << "transcript line " << issue.line_number << ": " << issue.message << "\n";
    if (import.games.empty()) throw DataError("corpus source has no valid games");
    games = std::move(import.games);
  }
  return data::build_corpus(std::move(games), ctx.cfg.corpus_seed ^ 0x5851f42d4c957f2dull,
                            ctx.cfg.scale);
}

const std::vector<int>& split_ids(const data::Corpus& corpus, const std::string& split) {
  if (split == "train") return corpus.train_ids;
  if (split == "validation") return corpus.validation_ids;
  return corpus.test_ids;
}

train::BoardFeaturizer make_featurizer(RunContext& ctx, const models::ModelConfig& model_cfg) {
  if (ctx.cfg.featurizer == "pooling") return train::pooling_featurizer();
  if (ctx.cfg.featurizer == "area") return train::area_featurizer();
  std::shared_ptr<models::ResidualConvEncoder> encoder;
  if (!ctx.cfg.encoder_checkpoint.empty()) {
    note_input(ctx, ctx.cfg.encoder_checkpoint);
    train::AnyModel loaded = train::AnyModel::load(ctx.cfg.encoder_checkpoint);
    if (loaded.kind != train::ModelKind::Vision)
      throw ConfigError("encoder_checkpoint is not a vision checkpoint");
    encoder = loaded.vision;
  } else {
    models::ModelConfig cfg = model_cfg;
    cfg.d_visual_in = 0;
    std::mt19937_64 rng(cfg.seed);
    encoder = std::make_shared<models::ResidualConvEncoder>(cfg, rng);
  }
  return train::conv_featurizer(encoder);
}

int cmd_gen_data(int n, uint64_t seed, const std::string& out_path) {
  std::vector<engine::GameRecord> games;
  games.reserve(n);
  for (int i = 0; i < n; ++i) games.push_back(engine::generate_random_game(seed + i));
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot open " + out_path);
  engine::export_transcripts(out, games);
  std::cout << "wrote " << n << " games to " << out_path << "\n";
  return 0;
}

int cmd_import(const std::string& in_path, const std::string& out_path, bool mirror_rows) {
  std::ifstream in(in_path);
  if (!in) throw DataError("cannot open " + in_path);
  engine::TranscriptImport import = engine::import_transcripts(in, mirror_rows);
  for (const auto& issue : import.issues)
    std::cout << "line " << issue.line_number << ": " << issue.message << "\n";
  std::cout << import.games.size() << " valid games, " << import.issues.size()
            << " rejected lines\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot open " + out_path);
    engine::export_transcripts(out, import.games);
  }
  return 0;
}

int cmd_render(RunContext& ctx, int limit) {
  data::Corpus corpus = load_corpus(ctx);
  imaging::RenderSpec spec;
  spec.image_side = ctx.cfg.model.image_side;
  spec.validate();
  fs::path dir = ctx.out / "images";
  fs::create_directories(dir);
  const auto& ids = split_ids(corpus, ctx.cfg.eval_split);
  int written = 0;
  for (int id : ids) {
    if (limit > 0 && written >= limit) break;
    const auto boards = engine::replay(corpus.games[id]);
    for (size_t t = 0; t < boards.size(); ++t) {
      std::ostringstream name;
      name << "g" << id << "_t" << t + 1 << ".png";
      imaging::write_png((dir / name.str()).string(), imaging::render(boards[t], spec));
    }
    ++written;
  }
  std::cout << "rendered " << written << " games into " << dir << "\n";
  close_run(ctx);
  return 0;
}

int run_training(RunContext& ctx, train::ModelKind kind) {
  data::Corpus corpus = load_corpus(ctx);
  models::ModelConfig model_cfg = ctx.cfg.model;
  if (kind == train::ModelKind::Multimodal && ctx.cfg.featurizer != "conv")
    model_cfg.d_visual_in = 1200;
  train::AnyModel model = train::AnyModel::create(kind, model_cfg);

  std::unique_ptr<train::FeatureCache> cache;
  if (kind == train::ModelKind::Multimodal)
    cache = std::make_unique<train::FeatureCache>(make_featurizer(ctx, model_cfg), &corpus);

  train::TrainResult result =
      train::train_model(model, corpus, ctx.cfg.schedule, ctx.cfg.seed, cache.get());
  model.save((ctx.out / "checkpoint.olab").string(), result.meta);
  data::write_metrics_csv((ctx.out / "metrics.csv").string(), result.history);
  std::cout << train::kind_name(kind) << ": best validation legal-move accuracy "
            << result.meta.best_metric << "% at epoch " << result.meta.epoch
            << (result.converged ? " (early stop)" : "") << "\n";
  close_run(ctx);
  return 0;
}

int cmd_eval(RunContext& ctx, const std::string& checkpoint, bool rotate_flag) {
  note_input(ctx, checkpoint);
  train::AnyModel model = train::AnyModel::load(checkpoint);
  data::Corpus corpus = load_corpus(ctx);
  const bool rotate = rotate_flag || ctx.cfg.rotate;

  std::unique_ptr<train::FeatureCache> cache;
  if (model.kind == train::ModelKind::Multimodal)
    cache = std::make_unique<train::FeatureCache>(make_featurizer(ctx, model.config()), &corpus);

  eval::EvalReport report =
      eval::legal_move_accuracy(model, corpus, split_ids(corpus, ctx.cfg.eval_split), rotate,
                                cache.get(), 64, ctx.cfg.eval_split);
  std::ofstream(ctx.out / (rotate ? "eval_rotated.json" : "eval.json")) << report.to_json();
  std::cout << report.model_id << " " << report.condition << " legal-move accuracy: "
            << report.accuracy << "% over " << report.n_positions << " positions (floor "
            << eval::random_predictor_floor(corpus, split_ids(corpus, ctx.cfg.eval_split))
            << "%)\n";
  close_run(ctx);
  return 0;
}

int cmd_ablate(RunContext& ctx, const std::string& variant) {
  if (variant == "no_future_masking") {
    ctx.cfg.schedule.p_future_mask = 0.0;
  } else if (variant == "pooling_features") {
    ctx.cfg.featurizer = "pooling";
  } else if (variant == "area_features") {
    ctx.cfg.featurizer = "area";
  } else if (variant == "unfinetuned_conv") {
    ctx.cfg.featurizer = "conv";
    ctx.cfg.encoder_checkpoint.clear();
  } else if (variant != "full") {
    throw ConfigError("unknown ablation variant " + variant);
  }
  return run_training(ctx, train::ModelKind::Multimodal);
}

int cmd_probe(RunContext& ctx, const std::string& checkpoint) {
  note_input(ctx, checkpoint);
  train::AnyModel model = train::AnyModel::load(checkpoint);
  data::Corpus corpus = load_corpus(ctx);
  std::unique_ptr<train::FeatureCache> cache;
  if (model.kind == train::ModelKind::Multimodal)
    cache = std::make_unique<train::FeatureCache>(make_featurizer(ctx, model.config()), &corpus);
  probe::ProbeOptions opts;
  opts.max_epochs = ctx.cfg.probe_epochs;
  opts.seed = ctx.cfg.seed;
  auto sweep = probe::probe_sweep(model, corpus, ctx.cfg.probe_samples_per_game, ctx.cfg.seed,
                                  cache.get(), opts);
  probe::write_sweep_csv((ctx.out / "probe_sweep.csv").string(), sweep);
  std::ofstream json(ctx.out / "probe_sweep.json");
  json << "[";
  for (size_t i = 0; i < sweep.size(); ++i) json << (i ? ",\n " : "\n ") << sweep[i].to_json();
  json << "\n]\n";
  for (const auto& r : sweep)
    std::cout << "layer " << r.layer << ": macro-F1 " << r.macro_f1 << "\n";
  close_run(ctx);
  return 0;
}

align::FeatureSet features_for(RunContext& ctx, const std::string& path,
                               const data::Corpus& corpus, const std::vector<int>& ids) {
  note_input(ctx, path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".feat")
    return align::load_feature_set(path);
  train::AnyModel model = train::AnyModel::load(path);
  std::unique_ptr<train::FeatureCache> cache;
  if (model.kind == train::ModelKind::Multimodal)
    cache = std::make_unique<train::FeatureCache>(make_featurizer(ctx, model.config()), &corpus);
  return align::extract_features(model, corpus, ids, ctx.cfg.seed, cache.get());
}

int cmd_align(RunContext& ctx) {
  if (ctx.cfg.align_source.empty() || ctx.cfg.align_target.empty())
    throw ConfigError("align needs [alignment] source and target");
  data::Corpus corpus = load_corpus(ctx);
  std::vector<int> ids = corpus.test_ids;
  for (int id : corpus.validation_ids) ids.push_back(id);
  if (ctx.cfg.align_features > 0 && static_cast<int>(ids.size()) > ctx.cfg.align_features)
    ids.resize(ctx.cfg.align_features);

  align::FeatureSet src = features_for(ctx, ctx.cfg.align_source, corpus, ids);
  align::FeatureSet tgt = features_for(ctx, ctx.cfg.align_target, corpus, ids);
  if (src.matrix.rows() != tgt.matrix.rows())
    throw DataError("align: feature sets have different row counts");
  align::save_feature_set((ctx.out / "source.feat").string(), src);
  align::save_feature_set((ctx.out / "target.feat").string(), tgt);

  const Eigen::Index n = src.matrix.rows();
  const Eigen::Index n_train = static_cast<Eigen::Index>(std::llround(n * 0.8));
  align::SharedProjection proj =
      align::project_to_shared(src.matrix.topRows(n_train), tgt.matrix.topRows(n_train));
  Eigen::MatrixXd a = proj.a.transform(src.matrix);
  Eigen::MatrixXd b = proj.b.transform(tgt.matrix);

  align::AlignmentMap map =
      ctx.cfg.align_mode == "supervised"
          ? align::align_supervised(a.topRows(n_train), b.topRows(n_train))
          : align::align_unsupervised(a.topRows(n_train), b.topRows(n_train), ctx.cfg.seed);

  align::AlignmentReport report;
  report.source_id = src.model_id;
  report.target_id = tgt.model_id;
  report.mode = map.mode;
  report.shared_dim = proj.dim;
  report.n_train = static_cast<int>(n_train);
  report.n_test = static_cast<int>(n - n_train);
  report.mean_cosine = align::eval_alignment(map, a.bottomRows(n - n_train),
                                             b.bottomRows(n - n_train));
  report.orthogonality_error = map.orthogonality_error();
  std::ofstream(ctx.out / "alignment.json") << report.to_json() << "\n";
  std::cout << report.mode << " " << report.source_id << "->" << report.target_id
            << " mean test cosine " << report.mean_cosine << "\n";
  close_run(ctx);
  return 0;
}

int cmd_report(const std::string& dir, const std::string& out_path) {
  std::ofstream out(out_path);
  if (!out) throw DataError("cannot open " + out_path);
  out << "source,kind,key,value\n";
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "eval.json" || name == "eval_rotated.json") {
      std::ifstream in(entry.path());
      std::ostringstream buf;
      buf << in.rdbuf();
      const std::string text = buf.str();
      auto grab = [&](const std::string& key) {
        const size_t p = text.find("\"" + key + "\":");
        if (p == std::string::npos) return std::string();
        size_t b = text.find_first_not_of(" \"", p + key.size() + 3);
        size_t e = text.find_first_of(",\"\n", b);
        return text.substr(b, e - b);
      };
      out << entry.path().string() << ",eval," << grab("condition") << ","
          << grab("accuracy") << "\n";
    } else if (name == "probe_sweep.csv" || name == "metrics.csv") {
      std::ifstream in(entry.path());
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line))
        out << entry.path().string() << "," << name.substr(0, name.size() - 4) << ",\"" << line
            << "\",\n";
    }
  }
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Othello sequence/vision/multimodal training and analysis"};
  app.require_subcommand(1);

  std::string config_path, manifest_path, checkpoint, variant = "full";
  std::string in_path, out_path = "games.txt", report_dir, kind_name = "multimodal";
  bool force = false, mirror_rows = false, rotate = false;
  int n = 100, limit = 0;
  uint64_t seed = 7;

  auto add_run_opts = [&](CLI::App* cmd, bool with_manifest = true) {
    cmd->add_option("--config", config_path, "experiment config file");
    if (with_manifest)
      cmd->add_option("--from-manifest", manifest_path, "re-run from a prior manifest");
    cmd->add_flag("--force", force, "overwrite an existing output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "generate seeded random games");
  gen->add_option("--n", n);
  gen->add_option("--seed", seed);
  gen->add_option("--out", out_path);

  auto* imp = app.add_subcommand("import", "validate external transcripts");
  imp->add_option("--in", in_path)->required();
  imp->add_option("--out", out_path);
  imp->add_flag("--mirror-rows", mirror_rows, "flip row order while parsing");

  auto* ren = app.add_subcommand("render", "materialize the image cache for a split");
  add_run_opts(ren);
  ren->add_option("--limit", limit, "max games to render (0 = all)");

  auto* pre = app.add_subcommand("pretrain-vision", "train the conv encoder on next-move prediction");
  add_run_opts(pre);

  auto* trn = app.add_subcommand("train", "train a model per config");
  add_run_opts(trn);
  trn->add_option("--kind", kind_name, "override [model] kind");

  auto* evl = app.add_subcommand("eval", "legal-move accuracy for a checkpoint");
  add_run_opts(evl);
  evl->add_option("--checkpoint", checkpoint)->required();
  evl->add_flag("--rotate", rotate, "evaluate the 180-degree-rotated condition");

  auto* abl = app.add_subcommand("ablate", "run a named ablation variant");
  add_run_opts(abl);
  abl->add_option("--variant", variant,
                  "full|no_future_masking|pooling_features|area_features|unfinetuned_conv");

  auto* prb = app.add_subcommand("probe", "per-layer linear probe sweep");
  add_run_opts(prb);
  prb->add_option("--checkpoint", checkpoint)->required();

  auto* aln = app.add_subcommand("align", "fit a cross-model alignment map");
  add_run_opts(aln);

  auto* rep = app.add_subcommand("report", "merge run outputs into one table");
  rep->add_option("--dir", report_dir)->required();
  rep->add_option("--out", out_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(n, seed, out_path);
    if (imp->parsed()) return cmd_import(in_path, out_path == "games.txt" ? "" : out_path,
                                         mirror_rows);
    if (rep->parsed()) return cmd_report(report_dir, out_path);

    const std::string command = app.get_subcommands().front()->get_name();
    RunContext ctx = open_run(command, config_path, manifest_path, force);
    if (ren->parsed()) return cmd_render(ctx, limit);
    if (pre->parsed()) return run_training(ctx, train::ModelKind::Vision);
    if (trn->parsed()) {
      if (trn->count("--kind")) ctx.cfg.model_kind = kind_name;
      return run_training(ctx, train::kind_from_name(ctx.cfg.model_kind));
    }
    if (evl->parsed()) return cmd_eval(ctx, checkpoint, rotate);
    if (abl->parsed()) return cmd_ablate(ctx, variant);
    if (prb->parsed()) return cmd_probe(ctx, checkpoint);
    if (aln->parsed()) return cmd_align(ctx);
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config-error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "data-error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical-error: " << e.what() << "\n";
    return 4;
  } catch (const AlignmentError& e) {
    std::cerr << "numerical-error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "data-error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
