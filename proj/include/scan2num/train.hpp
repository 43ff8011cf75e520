#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "scan2num/checkpoint.hpp"
#include "scan2num/eval.hpp"
#include "scan2num/manifest.hpp"
#include "scan2num/model.hpp"
#include "scan2num/optim.hpp"
#include "scan2num/slices.hpp"

// SGD training over manifest cases. Every random decision of an iteration
// (case pick, slice offset, augmentation, dropout) comes from a stream seeded
// by (seed, iteration, batch slot), so runs are reproducible bit-for-bit,
// resumable from a checkpoint without replaying, and independent of the
// thread count: batch cases run forward in parallel, but gradients reduce
// sequentially in slot order.

namespace scan2num {

struct TrainConfig {
  Target target = Target::Ve;
  NetworkConfig network;
  int batch_size = 16;
  double base_lr = 0.005;
  int64_t max_iter = 100000;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double dropout = 0.5;
  int64_t val_every = 500;
  uint64_t seed = 0;

  std::string echo() const {
    return "batch_size=" + std::to_string(batch_size) + " base_lr=" + format_double(base_lr) +
           " max_iter=" + std::to_string(max_iter) + " momentum=" + format_double(momentum) +
           " weight_decay=" + format_double(weight_decay) + " dropout=" + format_double(dropout) +
           " val_every=" + std::to_string(val_every);
  }

  void validate() const {
    if (batch_size < 1) throw DataError("train: batch_size must be >= 1");
    if (max_iter < 0) throw DataError("train: max_iter must be >= 0");
    if (val_every < 1) throw DataError("train: val_every must be >= 1");
    if (!(base_lr > 0.0)) throw DataError("train: base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("train: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw DataError("train: weight_decay must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("train: dropout must be in [0,1)");
  }
};

// The network trains with the dropout rate configured here, whatever the
// layout struct carried.
inline NetworkConfig effective_network(const TrainConfig& cfg) {
  NetworkConfig net = cfg.network;
  net.dropout_rate = cfg.dropout;
  return net;
}

struct LossRecord {
  int64_t iter = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainState {
  int64_t iter = 0;
  NetworkParams<float> params;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int64_t best_iter = -1;
  NetworkParams<float> best_params;  // populated once best_iter >= 0
  std::vector<LossRecord> history;
};

struct TrainOptions {
  int threads = 1;
  std::filesystem::path out_dir;  // empty: no checkpoints or log files
  std::ostream* info = nullptr;
  // > 0: pause once this many total iterations are done, leaving a resumable
  // last.ckpt. The schedule still spans max_iter, so a paused-and-resumed run
  // retraces the uninterrupted one exactly.
  int64_t stop_after = 0;
};

namespace detail {

inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  pool.reserve(static_cast<size_t>(workers));
  for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct TrainCase {
  Volume cropped;
  double target = 0.0;
};

inline std::vector<TrainCase> load_cases(const std::vector<ManifestEntry>& manifest,
                                         const std::string& split, Target target, int threads) {
  const auto entries = filter_split(manifest, split);
  if (entries.empty()) throw DataError("train: no cases in split '" + split + "'");
  std::vector<TrainCase> cases(entries.size());
  parallel_for(static_cast<int>(entries.size()), threads, [&](int i) {
    const auto& e = entries[static_cast<size_t>(i)];
    const double label = label_for(e.labels, target);
    if (!std::isfinite(label))
      throw DataError("train: non-finite " + target_name(target) + " label for " + e.volume_path);
    cases[static_cast<size_t>(i)].cropped = crop_to_mask_bbox(load_volume(e.volume_path));
    cases[static_cast<size_t>(i)].target = label;
  });
  return cases;
}

inline double validation_loss(const std::vector<TrainCase>& cases, const NetworkConfig& net,
                              const NetworkParams<float>& params, int threads) {
  std::vector<float> preds(cases.size());
  parallel_for(static_cast<int>(cases.size()), threads, [&](int i) {
    const auto& c = cases[static_cast<size_t>(i)];
    const SliceStack st = sample_slices(c.cropped, net.num_slices, 0.5, net.input_size);
    preds[static_cast<size_t>(i)] = static_cast<float>(predict(to_tensor(st), net, params).score);
  });
  double acc = 0.0;
  for (size_t i = 0; i < cases.size(); ++i) {
    const float diff = preds[i] - static_cast<float>(cases[i].target);
    acc += static_cast<double>(diff) * static_cast<double>(diff);
  }
  return acc / (2.0 * static_cast<double>(cases.size()));
}

struct BatchSlot {
  SliceStack slices;
  Tensor<float> stack;
  ForwardCache<float> cache;
  float pred = 0.0f;
  float target = 0.0f;
};

inline std::map<std::string, std::string> run_extra(const TrainConfig& cfg, int64_t iter,
                                                    const TrainState& st) {
  std::map<std::string, std::string> extra;
  extra["target"] = target_name(cfg.target);
  extra["iter"] = std::to_string(iter);
  extra["seed"] = std::to_string(cfg.seed);
  extra["best_iter"] = std::to_string(st.best_iter);
  extra["best_val_loss"] = format_double(st.best_val_loss);
  return extra;
}

}  // namespace detail

// Mean L2 loss of offset-0.5 inference over one split.
inline double validate(const std::vector<ManifestEntry>& manifest, const std::string& split,
                       Target target, const NetworkConfig& net, const NetworkParams<float>& params,
                       int threads = 1) {
  const auto cases = detail::load_cases(manifest, split, target, threads);
  return detail::validation_loss(cases, net, params, threads);
}

inline TrainState train(const std::vector<ManifestEntry>& manifest, const TrainConfig& cfg,
                        const TrainOptions& options = {}, const TrainState* resume = nullptr) {
  cfg.validate();
  const NetworkConfig net = effective_network(cfg);
  net.validate();
  const int threads = std::max(1, options.threads);
  const auto train_cases = detail::load_cases(manifest, "train", cfg.target, threads);
  const auto valid_cases = detail::load_cases(manifest, "valid", cfg.target, threads);

  TrainState state;
  if (resume) {
    if (resume->iter > cfg.max_iter)
      throw DataError("train: resume state is past max_iter");
    state = *resume;
  } else {
    state.params = NetworkParams<float>::init(net, cfg.seed);
  }
  int64_t stop = cfg.max_iter;
  if (options.stop_after > 0) {
    if (options.stop_after < state.iter)
      throw DataError("train: stop_after precedes the resume iteration");
    stop = std::min<int64_t>(options.stop_after, cfg.max_iter);
  }

  const bool writing = !options.out_dir.empty();
  std::ofstream log;
  if (writing) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "train_log.csv";
    const bool append = resume && state.iter > 0 && std::filesystem::exists(log_path);
    log.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("train: cannot open " + log_path.string());
    if (!append) log << "iter,lr,train_loss,val_loss\n";
  }
  if (options.info) {
    *options.info << cfg.echo() << "\n";
    *options.info << "cases: train=" << train_cases.size() << " valid=" << valid_cases.size()
                  << " parameters=" << state.params.parameter_count() << "\n";
  }

  auto named = state.params.named();
  std::vector<detail::BatchSlot> slots(static_cast<size_t>(cfg.batch_size));
  const auto flush_log = [&](const LossRecord& rec) {
    if (!writing) return;
    log << rec.iter << "," << format_double(rec.lr) << "," << format_double(rec.train_loss) << ",";
    if (rec.val_loss) log << format_double(*rec.val_loss);
    log << "\n";
    if (!log) throw IoError("train: log write failed");
  };

  for (int64_t t = state.iter; t < stop; ++t) {
    const double lr = lr_schedule(t, cfg.base_lr, cfg.max_iter);
    detail::parallel_for(cfg.batch_size, threads, [&](int s) {
      auto& slot = slots[static_cast<size_t>(s)];
      Rng rng(derive_seed(cfg.seed, "batch", static_cast<uint64_t>(t), static_cast<uint64_t>(s)));
      const auto& tc = train_cases[static_cast<size_t>(rng.below(train_cases.size()))];
      const double offset = rng.uniform();
      slot.slices = sample_slices(tc.cropped, net.num_slices, offset, net.input_size);
      augment_stack(slot.slices, rng);
      ensure_shape(slot.stack, {net.num_slices, 1, net.input_size, net.input_size});
      slot.stack.data = slot.slices.data;
      const ScanPrediction p = model_forward(slot.stack, net, state.params, true, &rng, slot.cache);
      slot.pred = static_cast<float>(p.score);
      slot.target = static_cast<float>(tc.target);
    });

    double loss_acc = 0.0;
    for (const auto& slot : slots) {
      const float diff = slot.pred - slot.target;
      loss_acc += static_cast<double>(diff) * static_cast<double>(diff);
    }
    const double train_loss = loss_acc / (2.0 * static_cast<double>(cfg.batch_size));
    if (!std::isfinite(train_loss)) {
      if (writing) {
        auto extra = detail::run_extra(cfg, t, state);
        extra["diverged"] = "1";
        save_model_checkpoint(options.out_dir / "diverged.ckpt", net, state.params, extra);
      }
      throw NumericError("train: non-finite loss at iteration " + std::to_string(t + 1) +
                         " (lr=" + format_double(lr) + ")");
    }
    for (auto& slot : slots) {
      const float dscore = (slot.pred - slot.target) / static_cast<float>(cfg.batch_size);
      model_backward(dscore, net, state.params, slot.cache);
    }
    sgd_step(named, lr, cfg.momentum, cfg.weight_decay);

    const int64_t completed = t + 1;
    LossRecord rec{completed, lr, train_loss, std::nullopt};
    if (completed % cfg.val_every == 0 || completed == cfg.max_iter) {
      rec.val_loss = detail::validation_loss(valid_cases, net, state.params, threads);
      if (*rec.val_loss < state.best_val_loss) {
        state.best_val_loss = *rec.val_loss;
        state.best_iter = completed;
        state.best_params = state.params;
        if (writing)
          save_model_checkpoint(options.out_dir / "best.ckpt", net, state.best_params,
                                detail::run_extra(cfg, completed, state));
      }
      if (options.info)
        *options.info << "iter " << completed << " lr " << format_double(lr) << " train "
                      << format_double(train_loss) << " val " << format_double(*rec.val_loss)
                      << (state.best_iter == completed ? " (best)" : "") << "\n";
    }
    state.history.push_back(rec);
    flush_log(rec);
  }
  state.iter = stop;
  if (writing) {
    save_model_checkpoint(options.out_dir / "last.ckpt", net, state.params,
                          detail::run_extra(cfg, state.iter, state));
    log.flush();
    if (!log) throw IoError("train: log flush failed");
  }
  return state;
}

// Rebuilds a resumable state from last.ckpt, verifying it belongs to cfg.
inline TrainState load_train_state(const std::filesystem::path& ckpt_path,
                                   const TrainConfig& cfg) {
  ModelCheckpoint mc = load_model_checkpoint(ckpt_path);
  const auto expect = effective_network(cfg).to_kv();
  if (mc.config.to_kv() != expect)
    throw DataError("train: checkpoint network layout does not match config");
  auto need = [&mc, &ckpt_path](const std::string& key) {
    auto it = mc.extra.find(key);
    if (it == mc.extra.end())
      throw DataError("train: checkpoint " + ckpt_path.string() + " lacks " + key);
    return it->second;
  };
  if (static_cast<uint64_t>(parse_int(need("seed"), "seed")) != cfg.seed)
    throw DataError("train: checkpoint was trained with a different seed");
  if (need("target") != target_name(cfg.target))
    throw DataError("train: checkpoint was trained for target " + need("target"));
  TrainState st;
  st.iter = parse_int(need("iter"), "iter");
  st.best_iter = parse_int(need("best_iter"), "best_iter");
  st.best_val_loss = parse_double(need("best_val_loss"), "best_val_loss");
  st.params = std::move(mc.params);
  if (st.best_iter >= 0) {
    // last.ckpt only tracks which iteration won; the weights live next door
    ModelCheckpoint bc = load_model_checkpoint(ckpt_path.parent_path() / "best.ckpt");
    const auto it = bc.extra.find("iter");
    if (it == bc.extra.end() || parse_int(it->second, "iter") != st.best_iter)
      throw DataError("train: best.ckpt does not match the resume state");
    st.best_params = std::move(bc.params);
  }
  return st;
}

struct SliceCountResult {
  int num_slices = 0;
  double rho = 0.0;
  BootstrapCi ci;
};

// Trains one model per slice count (fresh derived seed each) and reports test
// split Spearman rho with its CI. Writes a CSV with header
// num_slices,rho,ci_lo,ci_hi when out_csv is non-empty.
inline std::vector<SliceCountResult> slice_count_experiment(
    const std::vector<ManifestEntry>& manifest, const TrainConfig& base,
    const std::vector<int>& counts, int threads, int resamples,
    const std::filesystem::path& out_csv, std::ostream* info = nullptr) {
  if (counts.empty()) throw DataError("slice experiment: no slice counts given");
  std::vector<SliceCountResult> results;
  for (int count : counts) {
    TrainConfig cfg = base;
    cfg.network.num_slices = count;
    cfg.seed = derive_seed(base.seed, "slice-exp", static_cast<uint64_t>(count));
    if (info) *info << "slice count " << count << ":\n";
    TrainOptions opt;
    opt.threads = threads;
    opt.info = info;
    TrainState st = train(manifest, cfg, opt);
    const NetworkParams<float>& params = st.best_iter >= 0 ? st.best_params : st.params;
    const EvalReport r = evaluate(manifest, "test", effective_network(cfg), params, cfg.target,
                                  resamples, derive_seed(cfg.seed, "eval"));
    results.push_back({count, r.rho, r.rho_ci});
    if (info)
      *info << "slice count " << count << " rho " << format_double(r.rho) << " ci ["
            << format_double(r.rho_ci.lo) << ", " << format_double(r.rho_ci.hi) << "]\n";
  }
  if (!out_csv.empty()) {
    std::ofstream os(out_csv, std::ios::trunc);
    if (!os) throw IoError("slice experiment: cannot open " + out_csv.string());
    os << "num_slices,rho,ci_lo,ci_hi\n";
    for (const auto& r : results)
      os << r.num_slices << "," << format_double(r.rho) << "," << format_double(r.ci.lo) << ","
         << format_double(r.ci.hi) << "\n";
    os.flush();
    if (!os) throw IoError("slice experiment: write failed");
  }
  return results;
}

}  // namespace scan2num
