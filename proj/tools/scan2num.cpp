// scan2num: CT volume -> scalar severity pipeline.
//   gen-phantoms      synthesize a labeled phantom dataset + manifest
//   train             fit the slice-column regressor on a manifest split
//   eval              inference + statistics over a split
//   attribute         per-slice response profile for one volume
//   densitometry      share of lung voxels below an HU threshold
//   slice-experiment  train/eval sweep over slice counts
// Exit codes: 0 ok, 1 usage, 2 i/o, 3 numeric failure, 4 data/label mismatch.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "scan2num/checkpoint.hpp"
#include "scan2num/config.hpp"
#include "scan2num/eval.hpp"
#include "scan2num/metrics.hpp"
#include "scan2num/phantom.hpp"
#include "scan2num/train.hpp"

namespace {

using namespace scan2num;

int thread_count_from_env() {
  const char* env = std::getenv("S2N_THREADS");
  if (!env || !*env) return 1;
  try {
    const int n = static_cast<int>(parse_int(env, "S2N_THREADS"));
    if (n < 1) throw DataError("");
    return n;
  } catch (const std::exception&) {
    throw UsageError("S2N_THREADS must be a positive integer, got '" + std::string(env) + "'");
  }
}

struct CommonFlags {
  std::string config_path;
  int threads = 0;  // 0: take S2N_THREADS, default 1
  bool deterministic = false;

  int resolve_threads() const {
    if (deterministic) return 1;
    return threads > 0 ? threads : thread_count_from_env();
  }

  RunConfig load() const {
    return config_path.empty() ? default_run_config() : load_run_config(config_path);
  }
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_config = true) {
  if (with_config)
    cmd->add_option("--config", flags.config_path, "run configuration file");
  cmd->add_option("--threads", flags.threads, "worker threads (default: S2N_THREADS or 1)");
  cmd->add_flag("--deterministic", flags.deterministic,
                "force single-threaded execution (results are identical either way)");
}

int run_cli(int argc, char** argv) {
  CLI::App app{"volumetric CT to scalar lung-function scores"};
  app.require_subcommand(1);

  // gen-phantoms
  CommonFlags gen_flags;
  std::string gen_out;
  int gen_count = 0;
  uint64_t gen_seed = 0;
  bool gen_seed_set = false, gen_count_set = false;
  auto* gen = app.add_subcommand("gen-phantoms", "synthesize a phantom dataset with manifest");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of cases")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "master seed");
  add_common(gen, gen_flags);
  gen->callback([&]() {
    RunConfig rc = gen_flags.load();
    if (gen_count > 0) gen_count_set = true;
    if (gen->count("--seed")) gen_seed_set = true;
    const int count = gen_count_set ? gen_count : rc.phantom_count;
    const uint64_t seed = gen_seed_set ? gen_seed : rc.train.seed;
    const auto entries =
        generate_dataset(gen_out, count, seed, rc.phantom, rc.split_fractions);
    size_t split_counts[3] = {0, 0, 0};
    for (const auto& e : entries)
      ++split_counts[e.split == "train" ? 0 : e.split == "valid" ? 1 : 2];
    std::cout << "wrote " << entries.size() << " cases to " << gen_out << " (train "
              << split_counts[0] << ", valid " << split_counts[1] << ", test " << split_counts[2]
              << ")\n";
  });

  // train
  CommonFlags train_flags;
  std::string train_manifest, train_target, train_out, train_resume;
  uint64_t train_seed = 0;
  auto* tr = app.add_subcommand("train", "fit the regressor on the manifest's train split");
  tr->add_option("--manifest", train_manifest, "dataset manifest CSV")->required();
  tr->add_option("--target", train_target, "ve | fev1_fvc | fev1pct")
      ->check(CLI::IsMember({"ve", "fev1_fvc", "fev1pct"}));
  tr->add_option("--out", train_out, "output directory for checkpoints and log")->required();
  tr->add_option("--seed", train_seed, "override the config seed");
  tr->add_option("--resume", train_resume, "continue from a last.ckpt");
  add_common(tr, train_flags);
  tr->callback([&]() {
    RunConfig rc = train_flags.load();
    if (!train_target.empty()) rc.train.target = parse_target(train_target);
    if (tr->count("--seed")) rc.train.seed = train_seed;
    const auto manifest = read_manifest(train_manifest);
    TrainOptions opt;
    opt.threads = train_flags.resolve_threads();
    opt.out_dir = train_out;
    opt.info = &std::cout;
    TrainState st;
    if (!train_resume.empty()) {
      TrainState resume = load_train_state(train_resume, rc.train);
      st = train(manifest, rc.train, opt, &resume);
    } else {
      st = train(manifest, rc.train, opt);
    }
    std::cout << "finished at iteration " << st.iter;
    if (st.best_iter >= 0)
      std::cout << ", best validation loss " << format_double(st.best_val_loss) << " at iteration "
                << st.best_iter;
    std::cout << "\n";
  });

  // eval
  CommonFlags eval_flags;
  std::string eval_ckpt, eval_manifest, eval_split, eval_target, eval_out;
  int eval_resamples = 0;
  uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval", "inference + statistics over a manifest split");
  ev->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  ev->add_option("--manifest", eval_manifest, "dataset manifest CSV")->required();
  ev->add_option("--split", eval_split, "train | valid | test (default test)");
  ev->add_option("--target", eval_target,
                 "expected target; must match what the checkpoint was trained for")
      ->check(CLI::IsMember({"ve", "fev1_fvc", "fev1pct"}));
  ev->add_option("--out", eval_out, "output directory for the report")->required();
  ev->add_option("--resamples", eval_resamples, "bootstrap resamples")
      ->check(CLI::PositiveNumber);
  ev->add_option("--seed", eval_seed, "bootstrap seed");
  add_common(ev, eval_flags);
  ev->callback([&]() {
    RunConfig rc = eval_flags.load();
    const ModelCheckpoint mc = load_model_checkpoint(eval_ckpt);
    const auto target_it = mc.extra.find("target");
    if (target_it == mc.extra.end())
      throw DataError("eval: checkpoint does not record its training target");
    const Target target = parse_target(target_it->second);
    if (!eval_target.empty() && parse_target(eval_target) != target)
      throw DataError("eval: checkpoint was trained for " + target_it->second +
                      ", not " + eval_target);
    const auto manifest = read_manifest(eval_manifest);
    const std::string split = eval_split.empty() ? rc.eval_split : eval_split;
    if (!valid_split_tag(split)) throw UsageError("eval: bad split '" + split + "'");
    const int resamples = eval_resamples > 0 ? eval_resamples : rc.eval_resamples;
    const uint64_t seed = ev->count("--seed") ? eval_seed : rc.train.seed;
    const EvalReport r =
        evaluate(manifest, split, mc.config, mc.params, target, resamples, seed);
    write_report(r, eval_out);
    std::cout << "cases " << r.ids.size() << " rho " << format_double(r.rho) << " ci ["
              << format_double(r.rho_ci.lo) << ", " << format_double(r.rho_ci.hi) << "]";
    if (r.roc) std::cout << " auc " << format_double(r.roc->auc);
    if (r.kappa) std::cout << " kappa " << format_double(*r.kappa);
    std::cout << "\nreport written to " << eval_out << "\n";
  });

  // attribute
  std::string attr_ckpt, attr_volume, attr_out;
  auto* at = app.add_subcommand("attribute", "per-slice response profile for one volume");
  at->add_option("--checkpoint", attr_ckpt, "model checkpoint")->required();
  at->add_option("--volume", attr_volume, "volume header JSON")->required();
  at->add_option("--out", attr_out, "output CSV")->required();
  at->callback([&]() {
    const ModelCheckpoint mc = load_model_checkpoint(attr_ckpt);
    const Volume raw = load_volume(attr_volume);
    Bbox bbox;
    const Volume cropped = crop_to_mask_bbox(raw, &bbox);
    const SliceStack st =
        sample_slices(cropped, mc.config.num_slices, 0.5, mc.config.input_size);
    const ScanPrediction pred = predict(to_tensor(st), mc.config, mc.params);
    std::ofstream os(attr_out, std::ios::trunc);
    if (!os) throw IoError("attribute: cannot open " + attr_out);
    os << "slice_index,z_position,response\n";
    for (int i = 0; i < st.n; ++i)
      os << i << "," << bbox.lo[0] + st.source_indices[static_cast<size_t>(i)] << ","
         << format_double(pred.per_slice[static_cast<size_t>(i)]) << "\n";
    os << "scan,," << format_double(pred.score) << "\n";
    os.flush();
    if (!os) throw IoError("attribute: write failed for " + attr_out);
    std::cout << "scan score " << format_double(pred.score) << ", profile written to " << attr_out
              << "\n";
  });

  // densitometry
  std::string dens_volume;
  double dens_threshold = -950.0;
  auto* de = app.add_subcommand("densitometry", "share of lung voxels below an HU threshold");
  de->add_option("--volume", dens_volume, "volume header JSON")->required();
  de->add_option("--threshold", dens_threshold, "HU threshold (default -950)");
  de->callback([&]() {
    const Volume v = load_volume(dens_volume);
    double score = 0.0;
    try {
      score = densitometric_score(v, dens_threshold);
    } catch (const DataError& e) {
      // an unusable mask is an input-file problem for this command
      throw IoError(e.what());
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", score);
    std::cout << buf << "\n";
  });

  // slice-experiment
  CommonFlags exp_flags;
  std::string exp_manifest, exp_out;
  std::vector<int> exp_counts;
  auto* ex = app.add_subcommand("slice-experiment",
                                "train/eval sweep over slice counts, CSV of rho per count");
  ex->add_option("--manifest", exp_manifest, "dataset manifest CSV")->required();
  ex->add_option("--counts", exp_counts, "slice counts, e.g. 8,12,16,24")
      ->required()
      ->delimiter(',');
  ex->add_option("--out", exp_out, "output CSV")->required();
  add_common(ex, exp_flags);
  ex->callback([&]() {
    RunConfig rc = exp_flags.load();
    for (int c : exp_counts)
      if (c < 1) throw UsageError("slice-experiment: counts must be positive");
    const auto manifest = read_manifest(exp_manifest);
    slice_count_experiment(manifest, rc.train, exp_counts, exp_flags.resolve_threads(),
                           rc.eval_resamples, exp_out, &std::cout);
    std::cout << "full-scale study reference rho by slice count: 8: 0.78, 12: 0.79, 16: 0.82, "
                 "24: 0.81\n";
    std::cout << "results written to " << exp_out << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const scan2num::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const scan2num::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const scan2num::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const scan2num::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
