// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exit status is
// nonzero when any criterion fails.

#include "cli.hpp"

#include "dysurv/checkpoint.hpp"
#include "dysurv/csv.hpp"
#include "dysurv/gradcheck.hpp"
#include "dysurv/metrics.hpp"
#include "dysurv/pipeline.hpp"
#include "dysurv/training.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

using namespace dysurv;
namespace fs = std::filesystem;

namespace {

int failures = 0;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void report(int id, const char* status, const std::string& name, const std::string& detail) {
  std::cout << "[" << status << "] " << id << " " << name << ": " << detail << std::endl;
  if (std::string(status) == "FAIL") ++failures;
}

void verdict(int id, bool ok, const std::string& name, const std::string& detail) {
  report(id, ok ? "PASS" : "FAIL", name, detail);
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

struct InstanceQuery {
  const oracle::Instance* x;
  Index size() const { return static_cast<Index>(x->durations.size()); }
  double operator()(Index i, double t) const { return x->survival(static_cast<std::size_t>(i), t); }
};

struct ConstQuery {
  Index n;
  double v;
  Index size() const { return n; }
  double operator()(Index, double) const { return v; }
};

void gradient_fidelity() {
  Timer t;
  ModelCheckConfig c;
  const auto r = check_model_gradients(c);
  const double s = t.seconds();
  verdict(1, r.max_rel_error < 1e-5 && s < 10.0, "gradient fidelity",
          "max rel error " + fmt(r.max_rel_error, 3) + " over " + std::to_string(r.coordinates) +
              " coordinates (< 1e-5), " + fmt(s, 3) + " s (< 10 s)");
}

void metric_oracles() {
  Timer t;
  int km_bad = 0, ctd_bad = 0;
  double ibs_worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto x = oracle::random_instance(1000 + seed, 200);
    const auto s = km_estimator(x.durations, x.events);
    for (double q = 0.0; q <= 10.5; q += 0.125) {
      if (s.value(q) != oracle::km(x.durations, x.events, q)) ++km_bad;
    }
    const InstanceQuery iq{&x};
    const auto curve = [&](std::size_t i, double u) { return x.survival(i, u); };
    if (concordance_td(iq, x.durations, x.events) != oracle::ctd(curve, x.durations, x.events)) ++ctd_bad;
    const double ibs = integrated_brier(iq, x.durations, x.events);
    ibs_worst = std::max(ibs_worst, std::abs(ibs - oracle::ibs_fine(curve, x.durations, x.events, 10000)));
  }
  const double sec = t.seconds();
  verdict(2, km_bad == 0 && ctd_bad == 0 && ibs_worst <= 1e-3 && sec < 60.0, "metric oracles",
          "KM mismatches " + std::to_string(km_bad) + ", c_td mismatches " + std::to_string(ctd_bad) +
              ", max |IBS - fine grid| " + fmt(ibs_worst, 3) + " (<= 1e-3), " + fmt(sec, 3) + " s (< 60 s)");
}

void metric_anchors() {
  std::vector<double> d(200);
  std::iota(d.begin(), d.end(), 1.0);
  const std::vector<int> all(200, 1);
  const ConstQuery half{200, 0.5};
  const double ibs = integrated_brier(half, d, all);
  const double nbll = integrated_nbll(half, d, all);
  const auto x = oracle::random_instance(7);
  const double c = concordance_td(ConstQuery{static_cast<Index>(x.durations.size()), 0.3}, x.durations, x.events);
  verdict(3, std::abs(ibs - 0.25) <= 1e-6 && std::abs(nbll - std::log(2.0)) <= 1e-6 && c == 0.5,
          "analytic metric anchors",
          "IBS " + fmt(ibs, 12) + ", NBLL " + fmt(nbll, 12) + " (ln 2 = " + fmt(std::log(2.0), 12) + "), c_td " +
              fmt(c, 12));
}

// True survival on the generator's period grid for the test subjects.
struct TruthQuery {
  GridCurves curves;
  Index size() const { return curves.size(); }
  double operator()(Index i, double t) const { return curves(i, t); }
};

TruthQuery bayes_curves(const SyntheticDataset& syn, const ModelData& test) {
  std::map<std::string, Index> row;
  for (std::size_t i = 0; i < syn.data.records.size(); ++i) row[syn.data.records[i].id] = static_cast<Index>(i);
  const int k = syn.truth.periods;
  Matrix s(test.size(), k);
  for (Index i = 0; i < test.size(); ++i) {
    const Index r = row.at(test.ids[static_cast<std::size_t>(i)]);
    double alive = 1.0;
    for (int b = 0; b < k; ++b) {
      alive -= syn.truth.event_probabilities(r, b);
      s(i, b) = alive;
    }
  }
  return {GridCurves(make_time_grid(k, static_cast<double>(k)), s)};
}

void synthetic_recovery() {
  Timer t;
  const auto syn = generate_synthetic(50000, 5, 0.37, 1);
  const double censored =
      1.0 - static_cast<double>(syn.data.event_count()) / static_cast<double>(syn.data.size());
  const auto p = prepare_splits(syn.data, 2);
  TrainConfig base;
  const auto gs = grid_search(p.train, p.val, p.pre.grid.k_bins, GridSearchSpace{}, base);
  const double grid_s = t.seconds();
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto vae = multi_seed_report(p.train, p.val, p.test, p.pre.grid, gs.best, seeds);
  TrainConfig bc = gs.best;
  bc.alpha = 1.0;
  bc.latent = LatentMode::deterministic;
  const auto baseline = multi_seed_report(p.train, p.val, p.test, p.pre.grid, bc, seeds);
  const double total_s = t.seconds();

  const auto bayes = bayes_curves(syn, p.test);
  const double bayes_c = concordance_td(bayes, p.test.durations, p.test.events);
  double vae_max = 0.0;
  for (const auto& r : vae.runs) vae_max = std::max(vae_max, r.report.c_td);

  std::cout << "    chosen config: lr " << gs.best.learning_rate << ", batch " << gs.best.batch_size << ", alpha "
            << gs.best.alpha << ", keep " << gs.best.dropout_keep << "; censored fraction " << fmt(censored, 4)
            << "; grid " << fmt(grid_s, 4) << " s" << std::endl;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    std::cout << "    seed " << seeds[i] << ": dysurv c_td " << fmt(vae.runs[i].report.c_td, 5) << " val nll "
              << fmt(vae.runs[i].val_nll, 6) << " | baseline c_td " << fmt(baseline.runs[i].report.c_td, 5)
              << " val nll " << fmt(baseline.runs[i].val_nll, 6) << std::endl;
  }

  const bool c4 = !vae.incomplete && !baseline.incomplete && vae.mean.c_td >= 0.75 &&
                  vae.mean.c_td >= baseline.mean.c_td - 0.01 && bayes_c >= vae_max && total_s <= 1800.0;
  verdict(4, c4, "synthetic recovery",
          "dysurv mean c_td " + fmt(vae.mean.c_td, 5) + " (>= 0.75), baseline " + fmt(baseline.mean.c_td, 5) +
              " (dysurv >= baseline - 0.01), Bayes oracle " + fmt(bayes_c, 5) + " (>= best seed " +
              fmt(vae_max, 5) + "), IBS " + fmt(vae.mean.ibs, 4) + ", INBLL " + fmt(vae.mean.inbll, 4) + ", " +
              fmt(total_s, 4) + " s (<= 1800 s)");

  const bool c5 = gs.best.alpha < 1.0 && !vae.incomplete && !baseline.incomplete &&
                  vae.mean_val_nll <= baseline.mean_val_nll + 1e-3;
  verdict(5, c5, "ablation direction",
          "dysurv (alpha " + fmt(gs.best.alpha, 2) + ") mean validation NLL " + fmt(vae.mean_val_nll, 7) +
              " vs baseline " + fmt(baseline.mean_val_nll, 7) + " + 1e-3 (difference " +
              fmt(vae.mean_val_nll - baseline.mean_val_nll, 3) + ")");
}

void support_reproduction() {
  const char* manifest = std::getenv("DYSURV_SUPPORT_MANIFEST");
  if (!manifest || !fs::exists(manifest)) {
    report(6, "SKIP", "SUPPORT reproduction", "set DYSURV_SUPPORT_MANIFEST to a SUPPORT manifest to run");
    return;
  }
  Timer t;
  const auto ds = load_csv(fs::path(manifest));
  const auto p = prepare_splits(ds, 0);
  const auto gs = grid_search(p.train, p.val, p.pre.grid.k_bins, GridSearchSpace{}, TrainConfig{});
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto r = multi_seed_report(p.train, p.val, p.test, p.pre.grid, gs.best, seeds);
  const double s = t.seconds();
  const auto& m = r.mean;
  const bool ok = std::abs(m.c_td - 0.647) <= 0.030 && std::abs(m.ibs - 0.190) <= 0.02 &&
                  std::abs(m.inbll - 0.561) <= 0.05 && s <= 900.0 && !r.incomplete;
  verdict(6, ok, "SUPPORT reproduction",
          std::to_string(ds.size()) + " records; c_td " + fmt(m.c_td, 4) + " (0.647 +- 0.030), IBS " +
              fmt(m.ibs, 4) + " (0.190 +- 0.02), INBLL " + fmt(m.inbll, 4) + " (0.561 +- 0.05), " + fmt(s, 4) +
              " s (<= 900 s)");
}

fs::path end_to_end(const fs::path& dir) {
  fs::remove_all(dir);
  const std::string out = dir.string();
  const std::vector<std::string> data{"--synth", "3000,4,0.37", "--data-seed", "5", "--split-seed", "6"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), data.begin(), data.end());
    a.insert(a.end(), {"--out", out});
    return a;
  };
  if (cli(with({"train", "--seed", "7", "--max-epochs", "8", "--hidden", "16", "--z-dim", "4"})) != 0) return {};
  if (cli(with({"evaluate", "--horizon", "5"})) != 0) return {};
  if (cli(with({"predict"})) != 0) return {};
  return dir;
}

void determinism_and_curves() {
  const auto root = fs::temp_directory_path() / "dysurv_acceptance";
  const auto a = end_to_end(root / "a");
  const auto b = end_to_end(root / "b");
  if (a.empty() || b.empty()) {
    verdict(7, false, "determinism", "end-to-end CLI run failed");
    verdict(8, false, "survival-curve sanity", "end-to-end CLI run failed");
    return;
  }
  const auto ra = read_all(a / "eval_report.json");
  const auto rb = read_all(b / "eval_report.json");
  const bool same = !ra.empty() && ra == rb && read_all(a / "horizon_report.json") == read_all(b / "horizon_report.json") &&
                    read_all(a / "model.ckpt") == read_all(b / "model.ckpt");
  verdict(7, same, "determinism",
          same ? "eval_report.json, horizon_report.json and model.ckpt byte-identical across two runs"
               : "outputs differ between identical runs");

  const auto table = csv::read(a / "predictions.csv");
  std::map<std::string, std::vector<double>> curves;
  for (const auto& row : table.rows) curves[row[0]].push_back(*csv::parse_double(row[2]));
  int bad_anchor = 0, bad_monotone = 0;
  for (const auto& [id, c] : curves) {
    if (c.front() != 1.0) ++bad_anchor;
    for (std::size_t k = 1; k < c.size(); ++k)
      if (c[k] > c[k - 1]) ++bad_monotone;
  }
  const auto bundle = load_checkpoint(a / "model.ckpt");
  const auto syn = generate_synthetic(3000, 4, 0.37, 5);
  const auto est = predict_risk(bundle.params, prepare_model_data(bundle.pre, syn.data));
  double worst_sum = 0.0;
  for (const auto& e : est) worst_sum = std::max(worst_sum, std::abs(e.a_hat.sum() - 1.0));
  verdict(8, bad_anchor == 0 && bad_monotone == 0 && worst_sum <= 1e-12 && curves.size() == est.size(),
          "survival-curve sanity",
          std::to_string(curves.size()) + " exported curves; S(0) != 1: " + std::to_string(bad_anchor) +
              ", increases: " + std::to_string(bad_monotone) + ", max |sum a_hat - 1| " + fmt(worst_sum, 3));
}

}  // namespace

int main(int argc, char** argv) {
  // Optional argument: comma-separated criterion numbers to run.
  std::string only = argc > 1 ? argv[1] : "1,2,3,4,5,6,7,8";
  auto wants = [&](int id) { return ("," + only + ",").find("," + std::to_string(id) + ",") != std::string::npos; };
  try {
    if (wants(1)) gradient_fidelity();
    if (wants(2)) metric_oracles();
    if (wants(3)) metric_anchors();
    if (wants(7) || wants(8)) determinism_and_curves();
    if (wants(6)) support_reproduction();
    if (wants(4) || wants(5)) synthetic_recovery();
  } catch (const Error& e) {
    std::cout << "[FAIL] aborted: " << code_name(e.code()) << ": " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria met" : std::to_string(failures) + " criterion(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
