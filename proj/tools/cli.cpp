#include "cli.hpp"

#include "dysurv/checkpoint.hpp"
#include "dysurv/csv.hpp"
#include "dysurv/error.hpp"
#include "dysurv/gradcheck.hpp"
#include "dysurv/metrics.hpp"
#include "dysurv/pipeline.hpp"
#include "dysurv/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>

namespace dysurv::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Options {
  std::string command;
  std::string manifest;
  std::string synth;
  std::string out = ".";
  std::string checkpoint;
  std::string grid;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t split_seed = 0;
  int seeds = 1;
  double lr = 1e-3;
  Index batch = 256;
  double alpha = 0.5;
  double keep = 0.9;
  int max_epochs = 200;
  int patience = 10;
  double clip_norm = 0.0;
  Index hidden = 64;
  Index z_dim = 16;
  int k_bins = 10;
  bool baseline = false;
  std::optional<double> horizon;
  int repeats = 5;
  bool whole = false;
};

struct SynthSpec {
  std::size_t n = 0;
  Index m = 0;
  double censor_frac = 0.0;
};

SynthSpec parse_synth(const std::string& text) {
  std::stringstream ss(text);
  std::string part;
  std::vector<double> v;
  while (std::getline(ss, part, ',')) {
    const auto d = csv::parse_double(part);
    if (!d) throw Error(ErrorCode::usage, "--synth expects n,m,censor_frac; got '" + text + "'");
    v.push_back(*d);
  }
  if (v.size() != 3 || v[0] < 1 || v[1] < 1) {
    throw Error(ErrorCode::usage, "--synth expects n,m,censor_frac; got '" + text + "'");
  }
  return {static_cast<std::size_t>(v[0]), static_cast<Index>(v[1]), v[2]};
}

SurvivalDataset load_source(const Options& o, const FeatureSchema* reference = nullptr) {
  if (o.manifest.empty() == o.synth.empty()) {
    throw Error(ErrorCode::usage, "give exactly one of --manifest and --synth");
  }
  if (!o.synth.empty()) {
    const auto s = parse_synth(o.synth);
    return generate_synthetic(s.n, s.m, s.censor_frac, o.data_seed).data;
  }
  if (!reference) return load_csv(fs::path(o.manifest));
  return load_csv(read_manifest(o.manifest), reference);
}

TrainConfig train_config(const Options& o) {
  TrainConfig c;
  c.learning_rate = o.lr;
  c.batch_size = o.batch;
  c.alpha = o.alpha;
  c.dropout_keep = o.keep;
  c.max_epochs = o.max_epochs;
  c.patience = o.patience;
  c.seed = o.seed;
  c.clip_norm = o.clip_norm;
  c.model.hidden = o.hidden;
  c.model.decoder_hidden = o.hidden;
  c.model.survival_hidden = o.hidden;
  c.model.z_dim = o.z_dim;
  if (o.baseline) {
    c.alpha = 1.0;
    c.latent = LatentMode::deterministic;
  }
  return c;
}

class Run {
 public:
  Run(const Options& o, std::vector<std::string> argv) : o_(o), argv_(std::move(argv)), dir_(o.out) {
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(path(name), std::ios::binary);
    if (!f) throw Error(ErrorCode::io, "cannot write " + path(name).string());
    f << text << '\n';
    artifact(name);
  }

  void artifact(const std::string& name) { artifacts_.push_back(name); }

  void finish() {
    ordered_json meta;
    meta["command"] = o_.command;
    meta["argv"] = argv_;
    meta["seeds"] = {{"data", o_.data_seed}, {"split", o_.split_seed}, {"train", o_.seed}};
    ordered_json arts = ordered_json::object();
    for (const auto& a : artifacts_) arts[a] = file_hash(path(a));
    meta["artifacts"] = arts;
    std::ofstream f(path("run_metadata.json"), std::ios::binary);
    f << meta.dump(2) << '\n';
  }

 private:
  static std::string file_hash(const fs::path& p) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::uint64_t h = fnv1a(nullptr, 0);
      for (const auto& f : files) {
        const auto rel = fs::relative(f, p).generic_string();
        h = fnv1a(rel.data(), rel.size(), h);
        const auto bytes = read_bytes(f);
        h = fnv1a(bytes.data(), bytes.size(), h);
      }
      return hex(h);
    }
    const auto bytes = read_bytes(p);
    return hex(fnv1a(bytes.data(), bytes.size()));
  }
  static std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  static std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << v;
    return s.str();
  }

  const Options& o_;
  std::vector<std::string> argv_;
  fs::path dir_;
  std::vector<std::string> artifacts_;
};

ordered_json grid_json(const TimeGrid& g) {
  return {{"k_bins", g.k_bins},
          {"t_max", g.t_max},
          {"boundaries", std::vector<double>(g.boundaries.data(), g.boundaries.data() + g.boundaries.size())}};
}

ModelBundle load_bundle(const Options& o) {
  const fs::path ck = o.checkpoint.empty() ? fs::path(o.out) / "model.ckpt" : fs::path(o.checkpoint);
  return load_checkpoint(ck);
}

// Test split of the source, or all of it with --whole.
SurvivalDataset evaluation_data(const Options& o, const ModelBundle& b) {
  auto ds = load_source(o, &b.pre.schema);
  if (o.whole) return ds;
  return split_dataset(ds, o.split_seed).test;
}

void cmd_synth(const Options& o, Run& run, std::ostream& out) {
  if (o.synth.empty()) throw Error(ErrorCode::usage, "synth needs --synth n,m,censor_frac");
  const auto s = parse_synth(o.synth);
  const auto syn = generate_synthetic(s.n, s.m, s.censor_frac, o.data_seed);
  save_csv(syn.data, o.out);
  for (const char* f : {"static.csv", "manifest.json"}) run.artifact(f);
  ordered_json truth;
  truth["periods"] = syn.truth.periods;
  truth["weights"] = std::vector<double>(syn.truth.weights.data(), syn.truth.weights.data() + syn.truth.weights.size());
  truth["baseline_logits"] = std::vector<double>(syn.truth.baseline_logits.data(),
                                                 syn.truth.baseline_logits.data() + syn.truth.baseline_logits.size());
  truth["censor_upper"] = syn.truth.censor_upper;
  run.write_text("truth.json", truth.dump(2));
  out << "wrote " << syn.data.size() << " subjects to " << o.out << '\n';
}

void cmd_prepare(const Options& o, Run& run, std::ostream& out) {
  const auto ds = load_source(o);
  const auto split = split_dataset(ds, o.split_seed);
  const auto pre = fit_preprocessor(split.train, o.k_bins);
  const std::pair<const char*, const SurvivalDataset*> parts[] = {
      {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
  for (const auto& [name, part] : parts) {
    save_csv(*part, run.path(name));
    run.artifact(name);
    const std::string tname = std::string("transformed/") + name;
    save_csv(preprocess(pre, *part), run.path(tname));
    run.artifact(tname);
  }
  ordered_json info;
  info["grid"] = grid_json(pre.grid);
  info["stratified"] = split.stratified;
  info["warning"] = split.warning;
  info["sizes"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  run.write_text("time_grid.json", info.dump(2));
  if (!split.warning.empty()) out << "warning: " << split.warning << '\n';
  out << "split " << split.train.size() << "/" << split.val.size() << "/" << split.test.size() << '\n';
}

void cmd_train(const Options& o, Run& run, std::ostream& out) {
  const auto ds = load_source(o);
  const auto prep = prepare_splits(ds, o.split_seed, o.k_bins);
  const TrainConfig base = train_config(o);
  ModelBundle bundle{prep.pre, {}, base};
  TrainHistory history;
  if (!o.grid.empty()) {
    const auto space = o.grid == "default" ? GridSearchSpace{} : parse_grid(o.grid);
    auto gs = grid_search(prep.train, prep.val, o.k_bins, space, base);
    run.write_text("leaderboard.json", gs.leaderboard_json());
    bundle.config = gs.best;
    bundle.params = std::move(gs.best_fit.params);
    history = std::move(gs.best_fit.history);
  } else {
    auto f = fit(prep.train, prep.val, o.k_bins, base);
    bundle.params = std::move(f.params);
    history = std::move(f.history);
  }
  history.write_csv(run.path("history.csv"));
  run.artifact("history.csv");
  save_checkpoint(bundle, run.path("model.ckpt"));
  run.artifact("model.ckpt");
  if (o.seeds > 1) {
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < o.seeds; ++k) seeds.push_back(bundle.config.seed + static_cast<std::uint64_t>(k));
    const auto rep = multi_seed_report(prep.train, prep.val, prep.test, prep.pre.grid, bundle.config, seeds);
    run.write_text("multi_seed.json", rep.to_json());
  }
  out << "best epoch " << history.best_epoch << ", validation loss " << csv::format(history.best_val_total) << '\n';
}

void cmd_evaluate(const Options& o, Run& run, std::ostream& out) {
  const auto b = load_bundle(o);
  const auto data = prepare_model_data(b.pre, evaluation_data(o, b));
  const GridCurves curves(b.pre.grid, predict_risk(b.params, data));
  const auto report = evaluate(curves, data.durations, data.events);
  run.write_text("eval_report.json", to_json(report));
  out << to_json(report) << '\n';
  if (o.horizon) {
    std::vector<double> risk(static_cast<std::size_t>(data.size()));
    for (Index i = 0; i < data.size(); ++i) risk[static_cast<std::size_t>(i)] = 1.0 - curves(i, *o.horizon);
    const auto labels = horizon_labels(data.durations, data.events, *o.horizon);
    const auto h = horizon_binary_metrics(risk, labels, *o.horizon);
    run.write_text("horizon_report.json", to_json(h));
    out << to_json(h) << '\n';
  }
}

void cmd_predict(const Options& o, Run& run, std::ostream& out) {
  const auto b = load_bundle(o);
  const auto data = prepare_model_data(b.pre, load_source(o, &b.pre.schema));
  const auto est = predict_risk(b.params, data);
  std::ofstream f(run.path("predictions.csv"), std::ios::binary);
  if (!f) throw Error(ErrorCode::io, "cannot write predictions.csv");
  csv::write_row(f, {"id", "time", "survival"});
  const auto& g = b.pre.grid;
  for (std::size_t i = 0; i < est.size(); ++i) {
    for (int k = 0; k <= g.k_bins; ++k) {
      const double s = k == 0 ? 1.0 : est[i].survival[k - 1];
      csv::write_row(f, {data.ids[i], csv::format(g.boundaries[k]), csv::format(s)});
    }
  }
  f.close();
  run.artifact("predictions.csv");
  out << "wrote curves for " << est.size() << " subjects\n";
}

void cmd_gradcheck(const Options& o, Run& run, std::ostream& out) {
  ModelCheckConfig c;
  c.seed = o.seed;
  const auto r = check_model_gradients(c);
  constexpr double tolerance = 1e-5;
  ordered_json j;
  j["max_rel_error"] = r.max_rel_error;
  j["worst_param"] = r.worst_param;
  j["worst_index"] = r.worst_index;
  j["coordinates"] = r.coordinates;
  j["tolerance"] = tolerance;
  run.write_text("gradcheck.json", j.dump(2));
  out << "max relative error " << r.max_rel_error << " over " << r.coordinates << " coordinates\n";
  if (!(r.max_rel_error < tolerance)) {
    throw Error(ErrorCode::numerical, "gradient check failed at " + r.worst_param + "[" +
                                          std::to_string(r.worst_index) + "]");
  }
}

void cmd_importance(const Options& o, Run& run, std::ostream& out) {
  const auto b = load_bundle(o);
  const auto data = prepare_model_data(b.pre, evaluation_data(o, b));
  const auto groups = b.pre.schema.feature_groups();
  const auto ranked = permutation_importance(b.params, data, b.pre.grid, groups, o.repeats, o.seed);
  ordered_json arr = ordered_json::array();
  for (const auto& f : ranked) {
    arr.push_back({{"feature", f.name}, {"mean_drop", f.mean_drop}, {"drops", f.drops}});
    out << f.name << ' ' << f.mean_drop << '\n';
  }
  run.write_text("importance.json", arr.dump(2));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Conditional VAE survival models: data, training, evaluation"};
  app.require_subcommand(1);

  auto data_opts = [&](CLI::App* c) {
    c->add_option("--manifest", o.manifest, "Dataset manifest JSON");
    c->add_option("--synth", o.synth, "Synthetic data n,m,censor_frac");
    c->add_option("--data-seed", o.data_seed, "Seed of the synthetic generator");
    c->add_option("--split-seed", o.split_seed, "Seed of the train/val/test split");
  };
  auto common = [&](CLI::App* c) {
    c->add_option("--out", o.out, "Output directory");
    c->add_option("--seed", o.seed, "Training / shuffling seed");
  };
  auto ckpt = [&](CLI::App* c) {
    c->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default OUT/model.ckpt)");
    c->add_flag("--whole", o.whole, "Use the whole dataset instead of its test split");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  common(synth);
  data_opts(synth);
  auto* prepare = app.add_subcommand("prepare", "Split and transform a dataset");
  common(prepare);
  data_opts(prepare);
  prepare->add_option("--bins", o.k_bins, "Number of time bins");
  auto* train = app.add_subcommand("train", "Train a model");
  common(train);
  data_opts(train);
  train->add_option("--lr", o.lr, "Learning rate");
  train->add_option("--batch", o.batch, "Batch size");
  train->add_option("--alpha", o.alpha, "Weight of the survival loss");
  train->add_option("--dropout-keep", o.keep, "Dropout keep probability");
  train->add_option("--max-epochs", o.max_epochs, "Epoch limit");
  train->add_option("--patience", o.patience, "Early-stopping patience");
  train->add_option("--clip-norm", o.clip_norm, "Gradient-norm clipping (0 = off)");
  train->add_option("--hidden", o.hidden, "Hidden width of encoder, decoder and survival head");
  train->add_option("--z-dim", o.z_dim, "Latent dimension");
  train->add_option("--bins", o.k_bins, "Number of time bins");
  train->add_option("--grid", o.grid, "Grid search: 'default' or e.g. lr=1e-3,1e-4;batch=64;alpha=0.5;keep=0.9");
  train->add_option("--seeds", o.seeds, "Number of seeds for the multi-seed test report");
  train->add_flag("--baseline", o.baseline, "Non-variational baseline (alpha = 1, z = mu)");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  common(evaluate_cmd);
  data_opts(evaluate_cmd);
  ckpt(evaluate_cmd);
  evaluate_cmd->add_option("--horizon", o.horizon, "Horizon for binary metrics");
  auto* predict = app.add_subcommand("predict", "Export survival curves");
  common(predict);
  data_opts(predict);
  predict->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default OUT/model.ckpt)");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the model gradients");
  common(gradcheck);
  auto* importance = app.add_subcommand("importance", "Permutation feature importance");
  common(importance);
  data_opts(importance);
  ckpt(importance);
  importance->add_option("--repeats", o.repeats, "Shuffles per feature");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << code_name(ErrorCode::usage) << ": " << e.what() << '\n';
    return 2;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    o.command = sub->get_name();
    Run run(o, args);
    if (o.command == "synth") cmd_synth(o, run, out);
    else if (o.command == "prepare") cmd_prepare(o, run, out);
    else if (o.command == "train") cmd_train(o, run, out);
    else if (o.command == "evaluate") cmd_evaluate(o, run, out);
    else if (o.command == "predict") cmd_predict(o, run, out);
    else if (o.command == "gradcheck") cmd_gradcheck(o, run, out);
    else if (o.command == "importance") cmd_importance(o, run, out);
    run.finish();
  } catch (const Error& e) {
    err << "error: " << code_name(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << code_name(ErrorCode::io) << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dysurv::cli
