#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "koofu/classify.hpp"
#include "koofu/dataset.hpp"
#include "koofu/errors.hpp"
#include "koofu/metrics.hpp"
#include "koofu/stats.hpp"
#include "koofu/transform.hpp"
#include "koofu/types.hpp"

namespace koofu {

enum class Classifier { nvp, knn };

inline std::string to_string(Classifier c) { return c == Classifier::nvp ? "nvp" : "knn"; }

inline Classifier classifier_from_string(const std::string& s) {
  if (s == "nvp") return Classifier::nvp;
  if (s == "knn") return Classifier::knn;
  throw validation_error("unknown classifier '" + s + "' (expected nvp|knn)");
}

/// One protocol run: a space tag and λ/L provenance, the classifier and its
/// depth, exact-fraction metrics, and optional resource measurements.
struct EvalReport {
  std::string space_tag;
  Classifier classifier = Classifier::nvp;
  Metric metric = Metric::cosine;
  double lambda = std::numeric_limits<double>::quiet_NaN();  // NaN = no transform
  std::uint32_t out_dim = 0;  // dimensionality of the evaluated space
  std::int64_t k = 0;         // neighbors (knn) or ranking depth (nvp)
  std::string class_set_tag = "all";
  std::string dataset_id;
  std::string transform_id = "none";

  Fraction top1, top5;
  std::vector<Fraction> per_k;  // per_k[j] = accuracy at depth j+1
  std::optional<Fraction> real;

  double search_seconds = -1;     // median over reps; negative = unmeasured
  std::int64_t index_bytes = -1;  // N * d * 4; negative = not applicable
  std::int64_t zero_rows = 0;     // rows renormalization passed through

  double axis_value = std::numeric_limits<double>::quiet_NaN();  // sweep points
  std::string error;  // per-point sweep failure; empty = success
};

/// In-memory artifacts a protocol runs over. Queries carry their labels;
/// train supplies bank/index construction unless a prebuilt bank is given.
struct EvalInputs {
  EmbeddingDataset queries;
  const MultiLabelGroundTruth* multilabel = nullptr;
  std::vector<std::uint32_t> class_set;  // empty = no restriction
  EmbeddingDataset train;
  const PrototypeBank* bank = nullptr;  // already in the evaluated space
};

struct EvalConfig {
  std::string space_tag = "raw";
  Classifier classifier = Classifier::nvp;
  Metric metric = Metric::cosine;
  std::int64_t top_k = 5;  // ranking depth for nvp and the metrics
  std::int64_t k = 15;     // knn neighbor count
  bool renormalize = true;
  MeanMode mean_mode = MeanMode::mean_then_normalize;
  int timing_reps = 0;  // 0 = untimed; >= 3 = median of that many search runs
  SearchOptions search;
  std::int64_t query_block = 8192;  // outer query batching of the search phase
  std::string class_set_tag = "all";
  std::string dataset_id;
  std::string transform_id = "none";
  double lambda = std::numeric_limits<double>::quiet_NaN();  // provenance echo
};

inline PrototypeBank restrict_bank(const PrototypeBank& bank,
                                   std::span<const std::uint32_t> class_set) {
  std::unordered_set<std::uint32_t> keep(class_set.begin(), class_set.end());
  PrototypeBank out;
  out.dim = bank.dim;
  out.metric = bank.metric;
  out.modality = bank.modality;
  std::vector<std::int64_t> rows;
  for (std::int64_t i = 0; i < bank.count(); ++i)
    if (keep.count(bank.labels[i])) rows.push_back(i);
  if (rows.empty())
    throw validation_error("class set: no bank prototype matches the class set");
  out.prototypes.resize(static_cast<std::int64_t>(rows.size()), bank.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.prototypes.row(static_cast<std::int64_t>(i)) = bank.prototypes.row(rows[i]);
    out.labels.push_back(bank.labels[rows[i]]);
  }
  return out;
}

inline NeighborIndex restrict_index(const NeighborIndex& index,
                                    std::span<const std::uint32_t> class_set) {
  std::unordered_set<std::uint32_t> keep(class_set.begin(), class_set.end());
  NeighborIndex out;
  out.dim = index.dim;
  out.metric = index.metric;
  std::vector<std::int64_t> rows;
  for (std::int64_t i = 0; i < index.count(); ++i)
    if (keep.count(index.labels[i])) rows.push_back(i);
  if (rows.empty())
    throw validation_error("class set: no index row matches the class set");
  out.vectors.resize(static_cast<std::int64_t>(rows.size()), index.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.vectors.row(static_cast<std::int64_t>(i)) = index.vectors.row(rows[i]);
    out.labels.push_back(index.labels[rows[i]]);
  }
  return out;
}

namespace detail {

// Rethrows any pipeline error with the failing stage named, preserving the
// error's type (and a numeric error's suggested lambda).
template <typename Fn>
auto with_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  const auto prefix = [&](const char* what) {
    return std::string("[") + stage + "] " + what;
  };
  try {
    return fn();
  } catch (const numeric_error& e) {
    throw numeric_error(prefix(e.what()), e.suggested_lambda());
  } catch (const io_error& e) {
    throw io_error(prefix(e.what()));
  } catch (const validation_error& e) {
    throw validation_error(prefix(e.what()));
  }
}

// Unit-normalizes rows in f64 (zero rows pass through), mirroring apply()'s
// renormalize convention for the no-transform path.
inline std::int64_t renormalize_rows(Mat32& m) {
  std::int64_t zero_rows = 0;
  for (std::int64_t i = 0; i < m.rows(); ++i) {
    const Vec64 row = m.row(i).cast<double>().transpose();
    const double norm = row.norm();
    if (norm > 0)
      m.row(i) = (row / norm).cast<float>().transpose();
    else
      ++zero_rows;
  }
  return zero_rows;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// End-to-end protocol: prepare queries (transform and/or renormalize), put
/// the training set into the same space, build the bank or index, restrict it
/// to the class set, classify, and report exact-fraction metrics plus
/// resources. Deterministic: two runs yield identical metrics bit for bit.
inline EvalReport run_protocol(const EvalInputs& inputs, const EvalConfig& cfg,
                               const KooFuTransform* transform) {
  EvalReport report;
  report.space_tag = cfg.space_tag;
  report.classifier = cfg.classifier;
  report.metric = cfg.metric;
  report.lambda = transform ? transform->lambda : cfg.lambda;
  report.k = cfg.classifier == Classifier::knn ? cfg.k : cfg.top_k;
  report.class_set_tag = inputs.class_set.empty() ? "all" : cfg.class_set_tag;
  report.dataset_id = cfg.dataset_id;
  report.transform_id = cfg.transform_id;
  if (cfg.timing_reps != 0 && cfg.timing_reps < 3)
    throw validation_error("eval: timing reps must be 0 or >= 3");
  if (cfg.query_block < 1)
    throw validation_error("eval: query block must be positive");

  // Queries into the evaluated space.
  const auto prepare = [&](const Eigen::Ref<const Mat32>& vectors) {
    std::pair<Mat32, std::int64_t> out;
    if (transform) {
      ApplyResult applied = apply(*transform, vectors, cfg.renormalize);
      out.first = std::move(applied.projected);
      out.second = applied.zero_rows;
    } else {
      out.first = vectors;
      if (cfg.renormalize) out.second = detail::renormalize_rows(out.first);
    }
    return out;
  };

  Mat32 queries = detail::with_stage("prepare-queries", [&] {
    inputs.queries.validate();
    if (inputs.queries.labels.empty() && inputs.multilabel == nullptr)
      throw validation_error("queries carry neither labels nor multi-label truth");
    auto [prepared, zeros] = prepare(inputs.queries.vectors);
    report.zero_rows += zeros;
    return prepared;
  });
  report.out_dim = static_cast<std::uint32_t>(queries.cols());

  // The searched structure, in the same space.
  PrototypeBank bank;
  NeighborIndex index;
  if (cfg.classifier == Classifier::nvp) {
    bank = detail::with_stage("build-bank", [&] {
      PrototypeBank built;
      if (inputs.bank != nullptr) {
        inputs.bank->validate();
        built = *inputs.bank;
      } else {
        EmbeddingDataset space;
        space.dim = inputs.train.dim;
        space.labels = inputs.train.labels;
        space.class_table = inputs.train.class_table;
        auto [prepared, zeros] = prepare(inputs.train.vectors);
        space.vectors = std::move(prepared);
        space.dim = static_cast<std::uint32_t>(space.vectors.cols());
        report.zero_rows += zeros;
        built = build_prototypes(space, nullptr, cfg.metric, cfg.mean_mode).bank;
      }
      if (!inputs.class_set.empty()) built = restrict_bank(built, inputs.class_set);
      if (built.dim != static_cast<std::uint32_t>(queries.cols()))
        throw validation_error("bank dim " + std::to_string(built.dim) +
                               " does not match evaluated query dim " +
                               std::to_string(queries.cols()));
      return built;
    });
    report.index_bytes = bank.count() * static_cast<std::int64_t>(bank.dim) * 4;
  } else {
    index = detail::with_stage("build-index", [&] {
      inputs.train.validate();
      if (inputs.train.labels.empty())
        throw validation_error("training set carries no labels");
      auto [prepared, zeros] = prepare(inputs.train.vectors);
      report.zero_rows += zeros;
      NeighborIndex built = make_index(prepared, inputs.train.labels, cfg.metric);
      if (!inputs.class_set.empty()) built = restrict_index(built, inputs.class_set);
      if (built.dim != static_cast<std::uint32_t>(queries.cols()))
        throw validation_error("index dim " + std::to_string(built.dim) +
                               " does not match evaluated query dim " +
                               std::to_string(queries.cols()));
      return built;
    });
    report.index_bytes = index.count() * static_cast<std::int64_t>(index.dim) * 4;
  }

  // Search phase: the only timed region. Outer query blocks bound memory;
  // exactness makes the result independent of the blocking.
  RankedIds ranked;
  const auto search = [&] {
    const std::int64_t n = queries.rows();
    const std::int64_t width = cfg.classifier == Classifier::nvp
                                   ? std::min<std::int64_t>(cfg.top_k, bank.count())
                                   : cfg.k;
    RankedIds out(n, width);
    for (std::int64_t q0 = 0; q0 < n; q0 += cfg.query_block) {
      const std::int64_t qn = std::min(cfg.query_block, n - q0);
      const auto block = queries.middleRows(q0, qn);
      if (cfg.classifier == Classifier::nvp)
        out.middleRows(q0, qn) = nvp_classify(block, bank, width, cfg.search);
      else
        out.middleRows(q0, qn) =
            knn_classify(block, index, width, cfg.search).label_ranking;
    }
    return out;
  };
  detail::with_stage("classify", [&] {
    if (cfg.classifier == Classifier::knn && cfg.k > index.count())
      throw validation_error("k " + std::to_string(cfg.k) +
                             " exceeds index size " + std::to_string(index.count()));
    ranked = search();
    if (cfg.timing_reps >= 3) {
      std::vector<double> seconds;
      for (int rep = 0; rep < cfg.timing_reps; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        RankedIds again = search();
        const auto t1 = std::chrono::steady_clock::now();
        seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        if ((again.array() != ranked.array()).any())
          throw numeric_error("classification is not deterministic across reruns");
      }
      report.search_seconds = detail::median(std::move(seconds));
    }
  });

  detail::with_stage("metrics", [&] {
    const std::int64_t width = ranked.cols();
    const std::int64_t depth = std::min<std::int64_t>(cfg.top_k, width);
    if (!inputs.queries.labels.empty()) {
      for (std::int64_t d = 1; d <= depth; ++d)
        report.per_k.push_back(topk_accuracy(ranked, inputs.queries.labels, d));
      report.top1 = report.per_k.front();
      report.top5 = report.per_k[static_cast<std::size_t>(std::min<std::int64_t>(5, depth)) - 1];
    }
    if (inputs.multilabel != nullptr)
      report.real = real_accuracy(ranked, depth, *inputs.multilabel);
  });

  return report;
}

// ---------------------------------------------------------------------------
// Sweeps: one report per axis value. out_dim points reuse one full-dimension
// fit and truncate it (the eigendecomposition is never recomputed); per-point
// failures land in the report's error field without aborting later points.

enum class SweepAxis { lambda, out_dim, k };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::out_dim: return "out_dim";
    case SweepAxis::k: return "k";
  }
  return "";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "lambda") return SweepAxis::lambda;
  if (s == "out_dim") return SweepAxis::out_dim;
  if (s == "k") return SweepAxis::k;
  throw validation_error("unknown sweep axis '" + s + "' (expected lambda|out_dim|k)");
}

/// Fitting context for sweeps that refit or truncate per point. For the k
/// axis stats may be null (raw-space sweep); lambda/out_dim axes require it.
struct SweepFit {
  const ScatterStats* stats = nullptr;
  double lambda = 0;  // fit lambda for out_dim/k axes
  BetweenWeighting weighting = BetweenWeighting::by_count;
};

inline std::vector<EvalReport> sweep(SweepAxis axis, const std::vector<double>& values,
                                     const EvalInputs& inputs, const EvalConfig& cfg,
                                     const SweepFit& fit) {
  if (values.empty()) throw validation_error("sweep: no axis values given");
  const auto integral = [](double v) {
    return std::isfinite(v) && v == std::floor(v) && v >= 1;
  };

  std::optional<KooFuTransform> base;  // shared fit for out_dim/k axes
  if (axis == SweepAxis::lambda) {
    if (fit.stats == nullptr)
      throw validation_error("sweep: lambda axis needs scatter statistics to refit");
  } else if (axis == SweepAxis::out_dim) {
    if (fit.stats == nullptr)
      throw validation_error("sweep: out_dim axis needs scatter statistics");
    base = fit_koofu(*fit.stats, fit.lambda, std::nullopt, fit.weighting);
    for (double v : values)
      if (!integral(v) || v > base->dim)
        throw validation_error("sweep: out_dim value " + std::to_string(v) +
                               " is not an integer in [1, " +
                               std::to_string(base->dim) + "]");
  } else {
    if (fit.stats != nullptr)
      base = fit_koofu(*fit.stats, fit.lambda, std::nullopt, fit.weighting);
    for (double v : values)
      if (!integral(v))
        throw validation_error("sweep: k value " + std::to_string(v) +
                               " is not a positive integer");
  }

  std::vector<EvalReport> reports;
  for (double value : values) {
    EvalConfig point_cfg = cfg;
    try {
      std::optional<KooFuTransform> point;
      const KooFuTransform* t = nullptr;
      switch (axis) {
        case SweepAxis::lambda:
          point = fit_koofu(*fit.stats, value, std::nullopt, fit.weighting);
          t = &*point;
          break;
        case SweepAxis::out_dim:
          point = truncate(*base, static_cast<std::uint32_t>(value));
          t = &*point;
          break;
        case SweepAxis::k: {
          const auto iv = static_cast<std::int64_t>(value);
          if (cfg.classifier == Classifier::knn)
            point_cfg.k = iv;
          else
            point_cfg.top_k = iv;
          t = base ? &*base : nullptr;
          break;
        }
      }
      EvalReport report = run_protocol(inputs, point_cfg, t);
      report.axis_value = value;
      reports.push_back(std::move(report));
    } catch (const std::exception& e) {
      EvalReport failed;
      failed.space_tag = cfg.space_tag;
      failed.classifier = cfg.classifier;
      failed.metric = cfg.metric;
      failed.class_set_tag = cfg.class_set_tag;
      failed.dataset_id = cfg.dataset_id;
      failed.axis_value = value;
      failed.error = e.what();
      reports.push_back(std::move(failed));
    }
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Report rendering: newline-delimited JSON for machines, an aligned table
// for reading.

inline nlohmann::json fraction_to_json(const Fraction& f) {
  return {{"num", f.num}, {"den", f.den}, {"value", f.value()}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["space"] = r.space_tag;
  j["classifier"] = to_string(r.classifier);
  j["metric"] = to_string(r.metric);
  j["lambda"] = std::isnan(r.lambda) ? nlohmann::json() : nlohmann::json(r.lambda);
  j["out_dim"] = r.out_dim;
  j["k"] = r.k;
  j["class_set"] = r.class_set_tag;
  j["dataset"] = r.dataset_id;
  j["transform"] = r.transform_id;
  j["top1"] = fraction_to_json(r.top1);
  j["top5"] = fraction_to_json(r.top5);
  nlohmann::json per_k = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_k.size(); ++i) {
    nlohmann::json entry = fraction_to_json(r.per_k[i]);
    entry["k"] = i + 1;
    per_k.push_back(std::move(entry));
  }
  j["per_k"] = std::move(per_k);
  j["real"] = r.real ? fraction_to_json(*r.real) : nlohmann::json();
  j["search_seconds"] =
      r.search_seconds < 0 ? nlohmann::json() : nlohmann::json(r.search_seconds);
  j["index_bytes"] = r.index_bytes < 0 ? nlohmann::json() : nlohmann::json(r.index_bytes);
  j["zero_rows"] = r.zero_rows;
  j["axis_value"] =
      std::isnan(r.axis_value) ? nlohmann::json() : nlohmann::json(r.axis_value);
  j["error"] = r.error.empty() ? nlohmann::json() : nlohmann::json(r.error);
  return j;
}

inline std::string reports_ndjson(const std::vector<EvalReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    out += report_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::string reports_table(const std::vector<EvalReport>& reports) {
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-14s %-4s %-9s %10s %7s %5s %8s %8s %8s %10s %10s\n",
                "space", "clf", "metric", "lambda", "out_dim", "k", "top1%", "top5%",
                "real%", "search_s", "index_mb");
  out += line;
  const auto pct = [](const Fraction& f) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * f.value());
    return std::string(buf);
  };
  for (const auto& r : reports) {
    if (!r.error.empty()) {
      std::snprintf(line, sizeof(line), "%-14s failed at axis=%g: %s\n",
                    r.space_tag.c_str(), r.axis_value, r.error.c_str());
      out += line;
      continue;
    }
    char lambda_buf[24];
    if (std::isnan(r.lambda))
      std::snprintf(lambda_buf, sizeof(lambda_buf), "-");
    else
      std::snprintf(lambda_buf, sizeof(lambda_buf), "%.6g", r.lambda);
    char time_buf[24];
    if (r.search_seconds < 0)
      std::snprintf(time_buf, sizeof(time_buf), "-");
    else
      std::snprintf(time_buf, sizeof(time_buf), "%.4f", r.search_seconds);
    char mem_buf[24];
    if (r.index_bytes < 0)
      std::snprintf(mem_buf, sizeof(mem_buf), "-");
    else
      std::snprintf(mem_buf, sizeof(mem_buf), "%.1f",
                    static_cast<double>(r.index_bytes) / (1024.0 * 1024.0));
    std::snprintf(line, sizeof(line), "%-14s %-4s %-9s %10s %7u %5lld %8s %8s %8s %10s %10s\n",
                  r.space_tag.c_str(), to_string(r.classifier).c_str(),
                  to_string(r.metric).c_str(), lambda_buf, r.out_dim,
                  static_cast<long long>(r.k), pct(r.top1).c_str(), pct(r.top5).c_str(),
                  r.real ? pct(*r.real).c_str() : "-", time_buf, mem_buf);
    out += line;
  }
  return out;
}

}  // namespace koofu
