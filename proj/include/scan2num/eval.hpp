#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scan2num/manifest.hpp"
#include "scan2num/metrics.hpp"
#include "scan2num/model.hpp"
#include "scan2num/slices.hpp"
#include "scan2num/volume.hpp"

// Evaluation: run inference over a manifest split, then the statistics that
// make sense for the chosen target. Spearman rho with a bootstrap CI is
// always reported; ve adds a 0-5 confusion matrix with linear weighted kappa,
// fev1_fvc adds COPD classification (ratio < 0.7) with a ROC over the
// negated prediction, fev1pct adds a GOLD stage confusion gated by the
// measured ratio on both sides.

namespace scan2num {

enum class Target { Ve, FevRatio, FevPct };

inline Target parse_target(const std::string& s) {
  if (s == "ve") return Target::Ve;
  if (s == "fev1_fvc") return Target::FevRatio;
  if (s == "fev1pct") return Target::FevPct;
  throw DataError("unknown target '" + s + "' (expected ve, fev1_fvc, or fev1pct)");
}

inline std::string target_name(Target t) {
  switch (t) {
    case Target::Ve: return "ve";
    case Target::FevRatio: return "fev1_fvc";
    case Target::FevPct: return "fev1pct";
  }
  throw DataError("bad target enum");
}

inline double label_for(const ScanLabels& l, Target t) {
  switch (t) {
    case Target::Ve: return l.ve;
    case Target::FevRatio: return l.fev1_fvc;
    case Target::FevPct: return l.fev1pct;
  }
  throw DataError("bad target enum");
}

struct EvalReport {
  Target target = Target::Ve;
  std::string split;
  std::vector<std::string> ids;
  std::vector<double> targets;
  std::vector<double> predictions;
  double rho = 0.0;
  BootstrapCi rho_ci;
  std::optional<ConfusionMatrix> confusion_matrix;
  std::optional<double> kappa;
  std::optional<RocCurve> roc;
  std::optional<BootstrapCi> auc_ci;
};

// Statistics over already-computed predictions; the inference-driving
// evaluate() below delegates here, and tests can feed fabricated vectors.
// gate_ratios carries the measured fev1_fvc per case and is only consulted
// for GOLD staging of the fev1pct target.
inline EvalReport evaluate_core(std::vector<std::string> ids, std::vector<double> targets,
                                std::vector<double> predictions, Target target, int resamples,
                                uint64_t seed,
                                const std::vector<double>& gate_ratios = {}) {
  if (ids.size() != targets.size() || targets.size() != predictions.size())
    throw DataError("evaluate: ids/targets/predictions length mismatch");
  for (size_t i = 0; i < targets.size(); ++i)
    if (!std::isfinite(targets[i]))
      throw DataError("evaluate: non-finite label for case " + ids[i]);
  EvalReport r;
  r.target = target;
  r.ids = std::move(ids);
  r.targets = std::move(targets);
  r.predictions = std::move(predictions);
  const auto rho = spearman(r.targets, r.predictions);
  if (!rho)
    throw DataError("evaluate: rank correlation undefined (constant targets or predictions)");
  r.rho = *rho;
  {
    Rng rng(derive_seed(seed, "rho_ci"));
    r.rho_ci = bootstrap_ci(
        r.targets, r.predictions,
        [](std::span<const double> a, std::span<const double> b) { return spearman(a, b); },
        resamples, rng);
  }
  const size_t n = r.targets.size();
  if (target == Target::Ve) {
    std::vector<int> actual(n), predicted(n);
    for (size_t i = 0; i < n; ++i) {
      actual[i] = round_and_clamp(r.targets[i], 0, 5);
      predicted[i] = round_and_clamp(r.predictions[i], 0, 5);
    }
    r.confusion_matrix = confusion(actual, predicted, 0, 5);
    r.kappa = weighted_kappa_linear(actual, predicted, 0, 5);
  } else if (target == Target::FevRatio) {
    std::vector<int> actual(n), predicted(n);
    std::vector<uint8_t> labels(n);
    std::vector<double> scores(n), labels_d(n);
    for (size_t i = 0; i < n; ++i) {
      actual[i] = copd_diagnose(r.targets[i]) ? 1 : 0;
      predicted[i] = copd_diagnose(r.predictions[i]) ? 1 : 0;
      labels[i] = static_cast<uint8_t>(actual[i]);
      labels_d[i] = static_cast<double>(actual[i]);
      scores[i] = -r.predictions[i];  // lower predicted ratio = stronger COPD call
    }
    r.confusion_matrix = confusion(actual, predicted, 0, 1);
    r.roc = roc_auc(scores, labels);
    Rng rng(derive_seed(seed, "auc_ci"));
    r.auc_ci = bootstrap_ci(
        scores, labels_d,
        [](std::span<const double> s, std::span<const double> l) -> std::optional<double> {
          std::vector<uint8_t> lab(l.size());
          bool pos = false, neg = false;
          for (size_t i = 0; i < l.size(); ++i) {
            lab[i] = l[i] > 0.5 ? 1 : 0;
            (lab[i] ? pos : neg) = true;
          }
          if (!pos || !neg) return std::nullopt;
          return roc_auc(s, lab).auc;
        },
        resamples, rng);
  } else {
    if (gate_ratios.size() != n)
      throw DataError("evaluate: fev1pct staging needs a measured fev1_fvc per case");
    std::vector<int> actual(n), predicted(n);
    for (size_t i = 0; i < n; ++i) {
      actual[i] = gold_stage(gate_ratios[i], r.targets[i]);
      predicted[i] = gold_stage(gate_ratios[i], r.predictions[i]);
    }
    r.confusion_matrix = confusion(actual, predicted, 0, 4);
    r.kappa = weighted_kappa_linear(actual, predicted, 0, 4);
  }
  return r;
}

inline ScanPrediction predict_volume(const Volume& raw, const NetworkConfig& cfg,
                                     const NetworkParams<float>& params) {
  const Volume cropped = crop_to_mask_bbox(raw);
  const SliceStack st = sample_slices(cropped, cfg.num_slices, 0.5, cfg.input_size);
  const Tensor<float> stack = to_tensor(st);
  return predict(stack, cfg, params);
}

inline std::string case_id(const ManifestEntry& e) {
  return std::filesystem::path(e.volume_path).stem().string();
}

inline EvalReport evaluate(const std::vector<ManifestEntry>& manifest, const std::string& split,
                           const NetworkConfig& cfg, const NetworkParams<float>& params,
                           Target target, int resamples, uint64_t seed) {
  const auto entries = filter_split(manifest, split);
  if (entries.empty()) throw DataError("evaluate: no cases in split '" + split + "'");
  std::vector<std::string> ids;
  std::vector<double> targets, predictions, gates;
  ids.reserve(entries.size());
  for (const auto& e : entries) {
    const Volume v = load_volume(e.volume_path);
    const ScanPrediction p = predict_volume(v, cfg, params);
    ids.push_back(case_id(e));
    targets.push_back(label_for(e.labels, target));
    predictions.push_back(p.score);
    gates.push_back(e.labels.fev1_fvc);
  }
  EvalReport r = evaluate_core(std::move(ids), std::move(targets), std::move(predictions), target,
                               resamples, seed, gates);
  r.split = split;
  return r;
}

// report.json + predictions.csv (+ confusion.csv, roc.csv when present),
// byte-stable for fixed inputs.
inline void write_report(const EvalReport& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw IoError("report: cannot open " + p.string() + " for writing");
    return os;
  };
  {
    nlohmann::ordered_json j;
    j["target"] = target_name(r.target);
    if (!r.split.empty()) j["split"] = r.split;
    j["cases"] = r.ids.size();
    j["rho"] = r.rho;
    j["rho_ci"] = {r.rho_ci.lo, r.rho_ci.hi};
    if (r.roc) j["auc"] = r.roc->auc;
    if (r.auc_ci) j["auc_ci"] = {r.auc_ci->lo, r.auc_ci->hi};
    if (r.kappa) j["weighted_kappa"] = *r.kappa;
    if (r.confusion_matrix) {
      const auto& m = *r.confusion_matrix;
      nlohmann::ordered_json grid = nlohmann::ordered_json::array();
      for (int a = m.lo; a <= m.hi; ++a) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (int p = m.lo; p <= m.hi; ++p) row.push_back(m.at(a, p));
        grid.push_back(row);
      }
      j["confusion"] = {{"first_class", m.lo}, {"counts", grid}};
    }
    auto os = open(out_dir / "report.json");
    os << j.dump(2) << "\n";
  }
  {
    auto os = open(out_dir / "predictions.csv");
    os << "id,target,prediction\n";
    for (size_t i = 0; i < r.ids.size(); ++i)
      os << r.ids[i] << "," << format_double(r.targets[i]) << ","
         << format_double(r.predictions[i]) << "\n";
  }
  if (r.confusion_matrix) {
    const auto& m = *r.confusion_matrix;
    auto os = open(out_dir / "confusion.csv");
    os << "actual\\predicted";
    for (int p = m.lo; p <= m.hi; ++p) os << "," << p;
    os << "\n";
    for (int a = m.lo; a <= m.hi; ++a) {
      os << a;
      for (int p = m.lo; p <= m.hi; ++p) os << "," << m.at(a, p);
      os << "\n";
    }
  }
  if (r.roc) {
    auto os = open(out_dir / "roc.csv");
    os << "threshold,fpr,tpr\n";
    for (const auto& pt : r.roc->points)
      os << (std::isinf(pt.threshold) ? "inf" : format_double(pt.threshold)) << ","
         << format_double(pt.fpr) << "," << format_double(pt.tpr) << "\n";
  }
}

}  // namespace scan2num
