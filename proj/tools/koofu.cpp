// koofu: fit, apply, and evaluate discriminative whitening transforms over
// embedding datasets. Exit codes: 0 success, 2 validation error, 3 numeric
// error (a suggested lambda is printed when one exists), 4 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "koofu/koofu.hpp"

namespace {

using namespace koofu;

int g_threads = 0;

void apply_thread_cap() {
  if (g_threads > 0) set_thread_cap(g_threads);
}

EmbeddingDataset load_dataset(const std::string& embeddings_path,
                              const std::string& labels_path,
                              const std::string& table_path = "") {
  EmbeddingDataset ds = read_embeddings(embeddings_path);
  if (!labels_path.empty()) ds.labels = read_labels(labels_path);
  if (!table_path.empty()) ds.class_table = read_class_table(table_path);
  ds.validate();
  if (!ds.labels.empty() && static_cast<std::int64_t>(ds.labels.size()) != ds.count())
    throw validation_error("label count " + std::to_string(ds.labels.size()) +
                           " does not match vector rows " + std::to_string(ds.count()));
  return ds;
}

// Projects (and/or renormalizes) vectors into the evaluated space, the same
// preparation run_protocol applies.
std::pair<Mat32, std::int64_t> prepare_space(const Eigen::Ref<const Mat32>& vectors,
                                             const KooFuTransform* transform,
                                             bool renormalize) {
  if (transform != nullptr) {
    ApplyResult res = apply(*transform, vectors, renormalize);
    return {std::move(res.projected), res.zero_rows};
  }
  Mat32 out = vectors;
  std::int64_t zeros = renormalize ? detail::renormalize_rows(out) : 0;
  return {std::move(out), zeros};
}

void warn_zero_rows(std::int64_t zeros) {
  if (zeros > 0)
    std::fprintf(stderr, "warning: %lld zero rows passed through renormalization\n",
                 static_cast<long long>(zeros));
}

std::string class_set_tag(const std::string& path) {
  return path.empty() ? "all" : std::filesystem::path(path).stem().string();
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  std::vector<std::string> embeddings, labels, stats, shards;
  std::string class_table, out, save_stats;
  double lambda = 0;
  std::uint32_t out_dim = 0;     // 0 = full
  std::uint32_t num_classes = 0;  // 0 = infer from labels / table / checkpoint
  std::string weighting = "by_count";
  std::int64_t block_rows = 65536;
};

ScatterStats accumulate_inputs(FitOptions opt) {
  for (const auto& shard : opt.shards) {
    const auto comma = shard.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == shard.size())
      throw validation_error("fit: --shard expects EMBEDDINGS,LABELS, got '" + shard + "'");
    opt.embeddings.push_back(shard.substr(0, comma));
    opt.labels.push_back(shard.substr(comma + 1));
  }
  if (opt.embeddings.size() != opt.labels.size())
    throw validation_error("fit: each --embeddings shard needs a matching --labels shard");
  if (opt.embeddings.empty() && opt.stats.empty())
    throw validation_error("fit: no inputs; give --embeddings/--labels shards or --stats checkpoints");
  if (opt.block_rows < 1) throw validation_error("fit: --block-rows must be positive");

  std::vector<std::vector<std::uint32_t>> shard_labels;
  std::uint32_t num_classes = opt.num_classes;
  if (num_classes == 0 && !opt.class_table.empty())
    num_classes = static_cast<std::uint32_t>(read_class_table(opt.class_table).size());
  std::uint32_t seen_classes = 0;
  for (const auto& path : opt.labels) {
    shard_labels.push_back(read_labels(path));
    for (std::uint32_t y : shard_labels.back())
      seen_classes = std::max(seen_classes, y + 1);
  }

  ScatterStats stats;
  bool have = false;
  for (const auto& path : opt.stats) {
    ScatterStats shard = read_stats(path);
    if (!have) {
      stats = std::move(shard);
      have = true;
    } else {
      stats.merge(shard);
    }
  }
  if (num_classes == 0) num_classes = have ? stats.num_classes() : seen_classes;

  for (std::size_t s = 0; s < opt.embeddings.size(); ++s) {
    EmbeddingReader reader(opt.embeddings[s]);
    if (!have) {
      stats = ScatterStats(reader.dim(), num_classes);
      have = true;
    }
    if (reader.count() != shard_labels[s].size())
      throw validation_error("fit: shard " + opt.embeddings[s] + " has " +
                             std::to_string(reader.count()) + " rows but " +
                             opt.labels[s] + " has " +
                             std::to_string(shard_labels[s].size()) + " labels");
    std::size_t offset = 0;
    while (true) {
      const Mat32 block = reader.next_block(opt.block_rows);
      if (block.rows() == 0) break;
      stats.accumulate_rows(
          block, std::span(shard_labels[s].data() + offset,
                           static_cast<std::size_t>(block.rows())));
      offset += static_cast<std::size_t>(block.rows());
    }
  }
  return stats;
}

void run_fit(const FitOptions& opt) {
  apply_thread_cap();
  if (!(opt.lambda > 0)) throw validation_error("fit: --lambda must be positive");
  ScatterStats stats = accumulate_inputs(opt);
  if (!opt.save_stats.empty()) {
    write_stats(stats, opt.save_stats);
    std::printf("stats: %lld samples, dim %u, %u classes -> %s\n",
                static_cast<long long>(stats.total()), stats.dim(),
                stats.num_classes(), opt.save_stats.c_str());
  }
  std::optional<std::uint32_t> out_dim;
  if (opt.out_dim > 0) out_dim = opt.out_dim;
  const KooFuTransform t =
      fit_koofu(stats, opt.lambda, out_dim, weighting_from_string(opt.weighting));
  write_transform(t, opt.out);
  std::printf("fit: %lld samples, dim %u, %u classes (%u populated)\n",
              static_cast<long long>(stats.total()), stats.dim(), stats.num_classes(),
              stats.num_populated_classes());
  std::printf("transform: out_dim %u, lambda %.6g, gamma[1] %.6g, gamma[%u] %.6g -> %s\n",
              t.out_dim, t.lambda, t.gammas[0], t.out_dim, t.gammas[t.out_dim - 1],
              opt.out.c_str());
}

// ---------------------------------------------------------------------------
// apply

struct ApplyOptions {
  std::string transform, embeddings, out;
  std::uint32_t out_dim = 0;  // 0 = fitted out_dim
  bool renormalize = false;
  std::int64_t block_rows = 65536;
};

void run_apply(const ApplyOptions& opt) {
  apply_thread_cap();
  if (opt.block_rows < 1) throw validation_error("apply: --block-rows must be positive");
  KooFuTransform t = read_transform(opt.transform);
  if (opt.out_dim > 0) t = truncate(t, opt.out_dim);
  EmbeddingReader reader(opt.embeddings);
  if (reader.dim() != t.dim)
    throw validation_error("apply: embedding dim " + std::to_string(reader.dim()) +
                           " does not match transform dim " + std::to_string(t.dim));
  EmbeddingWriter writer(opt.out, t.out_dim, reader.count());
  std::int64_t zeros = 0;
  while (true) {
    const Mat32 block = reader.next_block(opt.block_rows);
    if (block.rows() == 0) break;
    ApplyResult res = apply(t, block, opt.renormalize);
    writer.write_block(res.projected);
    zeros += res.zero_rows;
  }
  writer.finish();
  std::printf("apply: projected %llu rows from %u to %u dims -> %s\n",
              static_cast<unsigned long long>(reader.count()), t.dim, t.out_dim,
              opt.out.c_str());
  warn_zero_rows(zeros);
}

// ---------------------------------------------------------------------------
// prototypes

struct PrototypesOptions {
  std::string embeddings, labels, transform, out;
  std::string metric = "cosine";
  std::string mean_mode = "mean_then_normalize";
  bool textual = false;
  bool renormalize = true;
};

void run_prototypes(const PrototypesOptions& opt) {
  apply_thread_cap();
  EmbeddingDataset ds = load_dataset(opt.embeddings, opt.labels);
  if (ds.labels.empty()) throw validation_error("prototypes: --labels is required");
  const Metric metric = metric_from_string(opt.metric);

  std::optional<KooFuTransform> t;
  std::string transform_id = "none";
  if (!opt.transform.empty()) {
    t = read_transform(opt.transform);
    transform_id = file_content_id(opt.transform);
  }
  auto [prepared, zeros] = prepare_space(ds.vectors, t ? &*t : nullptr, opt.renormalize);
  warn_zero_rows(zeros);

  PrototypeBank bank;
  if (opt.textual) {
    if (metric != Metric::cosine)
      throw validation_error("prototypes: textual prototypes are cosine-mode");
    std::map<std::uint32_t, std::vector<std::int64_t>> groups;
    for (std::int64_t i = 0; i < prepared.rows(); ++i) groups[ds.labels[i]].push_back(i);
    std::vector<Mat32> per_class;
    std::vector<std::uint32_t> ids;
    for (const auto& [label, rows] : groups) {
      Mat32 m(static_cast<std::int64_t>(rows.size()), prepared.cols());
      for (std::size_t r = 0; r < rows.size(); ++r)
        m.row(static_cast<std::int64_t>(r)) = prepared.row(rows[r]);
      per_class.push_back(std::move(m));
      ids.push_back(label);
    }
    bank = aggregate_text_prototypes(per_class, ids);
  } else {
    EmbeddingDataset space;
    space.dim = static_cast<std::uint32_t>(prepared.cols());
    space.vectors = std::move(prepared);
    space.labels = ds.labels;
    PrototypeBuildResult res = build_prototypes(space, nullptr, metric,
                                                mean_mode_from_string(opt.mean_mode));
    if (!res.degenerate_classes.empty()) {
      std::fprintf(stderr, "warning: %zu degenerate zero-mean prototypes excluded:",
                   res.degenerate_classes.size());
      for (std::uint32_t c : res.degenerate_classes) std::fprintf(stderr, " %u", c);
      std::fprintf(stderr, "\n");
    }
    bank = std::move(res.bank);
  }
  write_bank(bank, opt.out, transform_id);
  std::printf("prototypes: %lld classes, dim %u, metric %s, modality %s -> %s{.kfeb,.kflb,.json}\n",
              static_cast<long long>(bank.count()), bank.dim,
              to_string(bank.metric).c_str(), to_string(bank.modality).c_str(),
              opt.out.c_str());
}

// ---------------------------------------------------------------------------
// classify

struct ClassifyOptions {
  std::string queries, transform, out;
  std::string bank;                            // nearest-prototype mode
  std::string index_embeddings, index_labels;  // k-NN mode
  std::string metric = "cosine";
  std::int64_t top_k = 5;
  std::int64_t k = 15;
  bool renormalize = true;
  std::int64_t query_block = 8192;
};

std::vector<std::uint32_t> ranked_row(const RankedIds& ranked, std::int64_t i) {
  std::vector<std::uint32_t> row;
  for (std::int64_t j = 0; j < ranked.cols(); ++j) {
    if (ranked(i, j) == kNoClass) break;
    row.push_back(ranked(i, j));
  }
  return row;
}

void run_classify(const ClassifyOptions& opt) {
  apply_thread_cap();
  const bool use_bank = !opt.bank.empty();
  const bool use_index = !opt.index_embeddings.empty() || !opt.index_labels.empty();
  if (use_bank == use_index)
    throw validation_error(
        "classify: give exactly one of --bank or --index/--index-labels");
  if (opt.query_block < 1)
    throw validation_error("classify: --query-block must be positive");

  const EmbeddingDataset q = read_embeddings(opt.queries);
  std::optional<KooFuTransform> t;
  if (!opt.transform.empty()) t = read_transform(opt.transform);
  auto [queries, zeros] = prepare_space(q.vectors, t ? &*t : nullptr, opt.renormalize);
  warn_zero_rows(zeros);

  std::ofstream file;
  if (!opt.out.empty()) {
    file.open(opt.out, std::ios::trunc);
    if (!file) throw io_error("classify: cannot open " + opt.out + " for writing");
  }
  std::ostream& out = opt.out.empty() ? std::cout : file;

  if (use_bank) {
    const BankFile bf = read_bank(opt.bank);
    for (std::int64_t q0 = 0; q0 < queries.rows(); q0 += opt.query_block) {
      const std::int64_t qn = std::min(opt.query_block, queries.rows() - q0);
      const RankedIds ranked =
          nvp_classify(queries.middleRows(q0, qn), bf.bank, opt.top_k);
      for (std::int64_t i = 0; i < qn; ++i) {
        nlohmann::json rec;
        rec["index"] = q0 + i;
        rec["ranked"] = ranked_row(ranked, i);
        out << rec.dump() << '\n';
      }
    }
  } else {
    if (opt.index_embeddings.empty() || opt.index_labels.empty())
      throw validation_error("classify: --index and --index-labels go together");
    const EmbeddingDataset train = load_dataset(opt.index_embeddings, opt.index_labels);
    if (train.labels.empty())
      throw validation_error("classify: index labels are required");
    auto [base, base_zeros] =
        prepare_space(train.vectors, t ? &*t : nullptr, opt.renormalize);
    warn_zero_rows(base_zeros);
    const NeighborIndex index =
        make_index(base, train.labels, metric_from_string(opt.metric));
    for (std::int64_t q0 = 0; q0 < queries.rows(); q0 += opt.query_block) {
      const std::int64_t qn = std::min(opt.query_block, queries.rows() - q0);
      const KnnResult res = knn_classify(queries.middleRows(q0, qn), index, opt.k);
      for (std::int64_t i = 0; i < qn; ++i) {
        nlohmann::json rec;
        rec["index"] = q0 + i;
        rec["label"] = res.labels[static_cast<std::size_t>(i)];
        rec["ranked"] = ranked_row(res.label_ranking, i);
        std::vector<std::uint32_t> neighbors;
        for (std::int64_t j = 0; j < res.neighbors.cols(); ++j)
          neighbors.push_back(res.neighbors(i, j));
        rec["neighbors"] = neighbors;
        out << rec.dump() << '\n';
      }
    }
  }
  out.flush();
  if (!opt.out.empty() && !file)
    throw io_error("classify: write failed for " + opt.out);
  if (!opt.out.empty())
    std::printf("classify: %lld queries -> %s\n",
                static_cast<long long>(queries.rows()), opt.out.c_str());
}

// ---------------------------------------------------------------------------
// eval / sweep

struct EvalOptions {
  std::string queries, query_labels, multilabel, class_set;
  std::string transform, bank, train_embeddings, train_labels;
  std::string classifier = "nvp";
  std::string metric = "cosine";
  std::string mean_mode = "mean_then_normalize";
  std::string space_tag, json_out;
  std::int64_t top_k = 5;
  std::int64_t k = 15;
  bool renormalize = true;
  int timing_reps = 0;
  std::int64_t query_block = 8192;
  // sweep extras
  std::string axis;
  std::vector<double> values;
  std::string stats_path;
  double fit_lambda = 0;
  std::string weighting = "by_count";
};

struct LoadedEval {
  EvalInputs inputs;
  EvalConfig cfg;
  std::optional<KooFuTransform> transform;
  MultiLabelGroundTruth multilabel;
  PrototypeBank bank;
};

LoadedEval load_eval(const EvalOptions& opt) {
  LoadedEval loaded;
  loaded.inputs.queries = read_embeddings(opt.queries);
  if (!opt.query_labels.empty())
    loaded.inputs.queries.labels = read_labels(opt.query_labels);
  loaded.inputs.queries.validate();
  if (!opt.multilabel.empty()) {
    loaded.multilabel = read_multilabel(opt.multilabel);
    loaded.inputs.multilabel = &loaded.multilabel;
  }
  if (!opt.class_set.empty()) loaded.inputs.class_set = read_class_set(opt.class_set);

  EvalConfig& cfg = loaded.cfg;
  cfg.classifier = classifier_from_string(opt.classifier);
  cfg.metric = metric_from_string(opt.metric);
  cfg.mean_mode = mean_mode_from_string(opt.mean_mode);
  cfg.top_k = opt.top_k;
  cfg.k = opt.k;
  cfg.renormalize = opt.renormalize;
  cfg.timing_reps = opt.timing_reps;
  cfg.query_block = opt.query_block;
  cfg.class_set_tag = class_set_tag(opt.class_set);
  cfg.dataset_id = opt.queries;

  if (!opt.transform.empty()) {
    loaded.transform = read_transform(opt.transform);
    cfg.transform_id = file_content_id(opt.transform);
  }
  if (!opt.bank.empty()) {
    if (cfg.classifier != Classifier::nvp)
      throw validation_error("eval: --bank applies to the nvp classifier");
    BankFile bf = read_bank(opt.bank);
    loaded.bank = std::move(bf.bank);
    loaded.inputs.bank = &loaded.bank;
    if (loaded.transform == std::nullopt) cfg.transform_id = bf.transform_id;
  } else {
    if (opt.train_embeddings.empty() || opt.train_labels.empty())
      throw validation_error(
          "eval: give --bank or a --train-embeddings/--train-labels pair");
    loaded.inputs.train = load_dataset(opt.train_embeddings, opt.train_labels);
  }
  cfg.space_tag = !opt.space_tag.empty() ? opt.space_tag
                  : loaded.transform     ? "adapted"
                                         : "raw";
  return loaded;
}

void emit_reports(const std::vector<EvalReport>& reports, const std::string& json_out) {
  std::fputs(reports_table(reports).c_str(), stdout);
  if (!json_out.empty()) {
    std::ofstream out(json_out, std::ios::trunc);
    if (!out) throw io_error("eval: cannot open " + json_out + " for writing");
    out << reports_ndjson(reports);
    out.flush();
    if (!out) throw io_error("eval: write failed for " + json_out);
  }
}

void run_eval(const EvalOptions& opt) {
  apply_thread_cap();
  LoadedEval loaded = load_eval(opt);
  const EvalReport report = run_protocol(
      loaded.inputs, loaded.cfg, loaded.transform ? &*loaded.transform : nullptr);
  emit_reports({report}, opt.json_out);
}

void run_sweep(const EvalOptions& opt) {
  apply_thread_cap();
  if (!opt.bank.empty())
    throw validation_error("sweep: banks are rebuilt per point; give a train pair");
  LoadedEval loaded = load_eval(opt);
  const SweepAxis axis = sweep_axis_from_string(opt.axis);

  SweepFit fit;
  fit.weighting = weighting_from_string(opt.weighting);
  fit.lambda = opt.fit_lambda;
  ScatterStats stats;
  bool have_stats = false;
  if (!opt.stats_path.empty()) {
    stats = read_stats(opt.stats_path);
    have_stats = true;
  } else if (axis != SweepAxis::k || opt.fit_lambda > 0) {
    // lambda and out_dim sweeps refit; a k sweep refits only when a base
    // lambda asks for a transformed space.
    stats = ScatterStats(loaded.inputs.train.dim, loaded.inputs.train.num_classes());
    stats.accumulate(loaded.inputs.train);
    have_stats = true;
  }
  if (have_stats) fit.stats = &stats;
  if (axis != SweepAxis::lambda && have_stats && !(fit.lambda > 0))
    throw validation_error("sweep: --fit-lambda must be positive for this axis");
  if (opt.space_tag.empty() && have_stats) loaded.cfg.space_tag = "adapted";

  std::vector<EvalReport> reports = sweep(axis, opt.values, loaded.inputs, loaded.cfg, fit);
  emit_reports(reports, opt.json_out);
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  SynthConfig cfg;
  std::string out;
};

void run_synth(const SynthOptions& opt) {
  apply_thread_cap();
  const SynthData data = make_synthetic(opt.cfg);
  write_embeddings(data.train, opt.out + "_train.kfeb");
  write_labels(data.train.labels, opt.out + "_train.kflb");
  write_class_table(data.train.class_table, opt.out + "_classes.tsv");
  std::printf("synth: %lld train rows -> %s_train{.kfeb,.kflb}\n",
              static_cast<long long>(data.train.count()), opt.out.c_str());
  if (data.test.count() > 0) {
    write_embeddings(data.test, opt.out + "_test.kfeb");
    write_labels(data.test.labels, opt.out + "_test.kflb");
    std::printf("synth: %lld test rows -> %s_test{.kfeb,.kflb}\n",
                static_cast<long long>(data.test.count()), opt.out.c_str());
  }
  std::printf("synth: %u classes, dim %u, cond %.6g, mean_scale %.6g, seed %llu\n",
              opt.cfg.classes, opt.cfg.dim, opt.cfg.cond, opt.cfg.mean_scale,
              static_cast<unsigned long long>(opt.cfg.seed));
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
  std::vector<std::string> embeddings, labels, transforms, stats, banks;
  std::vector<std::string> class_tables, multilabels, class_sets;
};

void run_verify(const VerifyOptions& opt) {
  apply_thread_cap();
  int checked = 0;
  for (const auto& path : opt.embeddings) {
    const EmbeddingDataset ds = read_embeddings(path);
    std::printf("ok embeddings: %s (%lld rows, dim %u)\n", path.c_str(),
                static_cast<long long>(ds.count()), ds.dim);
    ++checked;
  }
  for (const auto& path : opt.labels) {
    const auto ids = read_labels(path);
    std::printf("ok labels: %s (%zu entries)\n", path.c_str(), ids.size());
    ++checked;
  }
  for (const auto& path : opt.transforms) {
    const KooFuTransform t = read_transform(path);
    t.validate();
    std::printf("ok transform: %s (dim %u, out_dim %u, lambda %.6g)\n", path.c_str(),
                t.dim, t.out_dim, t.lambda);
    ++checked;
  }
  for (const auto& path : opt.stats) {
    const ScatterStats stats = read_stats(path);
    const Mat64 sw = stats.within_scatter();
    const auto eig = detail::symmetric_eig_desc(sw);
    const double floor = -1e-6 * sw.trace() - 1e-12;
    if (eig.values[eig.values.size() - 1] < floor)
      throw validation_error("stats: " + path +
                             " yields a within-class scatter with eigenvalue " +
                             std::to_string(eig.values[eig.values.size() - 1]) +
                             " below the accumulation tolerance");
    std::printf("ok stats: %s (%lld samples, dim %u, %u classes)\n", path.c_str(),
                static_cast<long long>(stats.total()), stats.dim(), stats.num_classes());
    ++checked;
  }
  for (const auto& prefix : opt.banks) {
    const BankFile bf = read_bank(prefix);
    std::printf("ok bank: %s (%lld prototypes, dim %u, %s, %s)\n", prefix.c_str(),
                static_cast<long long>(bf.bank.count()), bf.bank.dim,
                to_string(bf.bank.metric).c_str(), to_string(bf.bank.modality).c_str());
    ++checked;
  }
  for (const auto& path : opt.class_tables) {
    const auto table = read_class_table(path);
    std::printf("ok class-table: %s (%zu classes)\n", path.c_str(), table.size());
    ++checked;
  }
  for (const auto& path : opt.multilabels) {
    const MultiLabelGroundTruth gt = read_multilabel(path);
    std::printf("ok multilabel: %s (%zu entries)\n", path.c_str(), gt.entries.size());
    ++checked;
  }
  for (const auto& path : opt.class_sets) {
    const auto ids = read_class_set(path);
    std::printf("ok class-set: %s (%zu ids)\n", path.c_str(), ids.size());
    ++checked;
  }
  if (checked == 0) throw validation_error("verify: no artifacts given");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"koofu: discriminative whitening for embedding classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "koofu 0.1.0");
  app.add_option("--threads", g_threads, "cap worker threads (default: all cores)");

  auto fit_opt = std::make_shared<FitOptions>();
  CLI::App* fit = app.add_subcommand("fit", "accumulate scatter statistics and fit a transform");
  fit->add_option("--embeddings", fit_opt->embeddings, "embedding shard(s)");
  fit->add_option("--labels", fit_opt->labels, "label shard(s), paired with --embeddings");
  fit->add_option("--shard", fit_opt->shards,
                  "EMBEDDINGS,LABELS pair, repeatable (same as a paired --embeddings/--labels)");
  fit->add_option("--stats", fit_opt->stats, "stats checkpoint(s) to merge in");
  fit->add_option("--class-table", fit_opt->class_table, "class table (sets the class count)");
  fit->add_option("--num-classes", fit_opt->num_classes, "class count override");
  fit->add_option("--lambda", fit_opt->lambda, "shrinkage regularization")->required();
  fit->add_option("--out-dim", fit_opt->out_dim, "projection rank L (default: full)");
  fit->add_option("--between-weighting", fit_opt->weighting, "by_count|uniform");
  fit->add_option("--block-rows", fit_opt->block_rows, "streaming block size");
  fit->add_option("--save-stats", fit_opt->save_stats, "write merged stats checkpoint");
  fit->add_option("--out", fit_opt->out, "output transform file")->required();
  fit->callback([fit_opt] { run_fit(*fit_opt); });

  auto apply_opt = std::make_shared<ApplyOptions>();
  CLI::App* apply_cmd = app.add_subcommand("apply", "project embeddings through a transform");
  apply_cmd->add_option("--transform", apply_opt->transform, "transform file")->required();
  apply_cmd->add_option("--embeddings", apply_opt->embeddings, "input embeddings")->required();
  apply_cmd->add_option("--out-dim", apply_opt->out_dim, "truncate to L before applying");
  apply_cmd->add_flag("--renormalize,!--no-renormalize", apply_opt->renormalize,
                      "unit-normalize output rows (default: off)");
  apply_cmd->add_option("--block-rows", apply_opt->block_rows, "streaming block size");
  apply_cmd->add_option("--out", apply_opt->out, "output embeddings")->required();
  apply_cmd->callback([apply_opt] { run_apply(*apply_opt); });

  auto proto_opt = std::make_shared<PrototypesOptions>();
  CLI::App* proto = app.add_subcommand("prototypes", "build a class prototype bank");
  proto->add_option("--embeddings", proto_opt->embeddings, "training embeddings")->required();
  proto->add_option("--labels", proto_opt->labels, "training labels")->required();
  proto->add_option("--transform", proto_opt->transform, "optional transform");
  proto->add_option("--metric", proto_opt->metric, "cosine|euclidean");
  proto->add_option("--mean-mode", proto_opt->mean_mode,
                    "mean_then_normalize|normalize_then_mean");
  proto->add_flag("--textual", proto_opt->textual,
                  "aggregate text-prompt embeddings instead of visual means");
  proto->add_flag("--renormalize,!--no-renormalize", proto_opt->renormalize,
                  "unit-normalize inputs in the evaluated space (default: on)");
  proto->add_option("--out", proto_opt->out, "bank path prefix")->required();
  proto->callback([proto_opt] { run_prototypes(*proto_opt); });

  auto cls_opt = std::make_shared<ClassifyOptions>();
  CLI::App* cls = app.add_subcommand("classify", "rank classes or vote neighbors per query");
  cls->add_option("--queries", cls_opt->queries, "query embeddings")->required();
  cls->add_option("--transform", cls_opt->transform, "optional transform");
  cls->add_option("--bank", cls_opt->bank, "prototype bank prefix (nearest-prototype mode)");
  cls->add_option("--index", cls_opt->index_embeddings, "index embeddings (k-NN mode)");
  cls->add_option("--index-labels", cls_opt->index_labels, "index labels (k-NN mode)");
  cls->add_option("--metric", cls_opt->metric, "cosine|euclidean (k-NN mode)");
  cls->add_option("--top-k", cls_opt->top_k, "ranking depth (nearest-prototype mode)");
  cls->add_option("--k", cls_opt->k, "neighbor count (k-NN mode)");
  cls->add_flag("--renormalize,!--no-renormalize", cls_opt->renormalize,
                "unit-normalize queries in the evaluated space (default: on)");
  cls->add_option("--query-block", cls_opt->query_block, "queries per search block");
  cls->add_option("--out", cls_opt->out, "output NDJSON (default: stdout)");
  cls->callback([cls_opt] { run_classify(*cls_opt); });

  const auto add_eval_options = [](CLI::App* cmd, EvalOptions& opt) {
    cmd->add_option("--queries", opt.queries, "query embeddings")->required();
    cmd->add_option("--query-labels", opt.query_labels, "query ground-truth labels");
    cmd->add_option("--multilabel", opt.multilabel, "multi-label ground truth (NDJSON)");
    cmd->add_option("--class-set", opt.class_set, "class-id list restricting the bank/index");
    cmd->add_option("--transform", opt.transform, "optional transform");
    cmd->add_option("--train-embeddings", opt.train_embeddings, "training embeddings");
    cmd->add_option("--train-labels", opt.train_labels, "training labels");
    cmd->add_option("--classifier", opt.classifier, "nvp|knn");
    cmd->add_option("--metric", opt.metric, "cosine|euclidean");
    cmd->add_option("--mean-mode", opt.mean_mode,
                    "mean_then_normalize|normalize_then_mean");
    cmd->add_option("--top-k", opt.top_k, "ranking depth for metrics");
    cmd->add_option("--k", opt.k, "k-NN neighbor count");
    cmd->add_flag("--renormalize,!--no-renormalize", opt.renormalize,
                  "unit-normalize vectors in the evaluated space (default: on)");
    cmd->add_option("--timing-reps", opt.timing_reps,
                    "search timing repetitions (0 = untimed, else >= 3)");
    cmd->add_option("--query-block", opt.query_block, "queries per search block");
    cmd->add_option("--space-tag", opt.space_tag, "report label for this space");
    cmd->add_option("--json", opt.json_out, "write the report(s) as NDJSON");
  };

  auto eval_opt = std::make_shared<EvalOptions>();
  CLI::App* eval_cmd = app.add_subcommand("eval", "run a classification protocol and report metrics");
  add_eval_options(eval_cmd, *eval_opt);
  eval_cmd->add_option("--bank", eval_opt->bank, "prebuilt prototype bank prefix");
  eval_cmd->callback([eval_opt] { run_eval(*eval_opt); });

  auto sweep_opt = std::make_shared<EvalOptions>();
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a protocol across an axis of values");
  add_eval_options(sweep_cmd, *sweep_opt);
  sweep_cmd->add_option("--axis", sweep_opt->axis, "lambda|out_dim|k")->required();
  sweep_cmd->add_option("--values", sweep_opt->values, "axis values")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--stats", sweep_opt->stats_path, "stats checkpoint for refits");
  sweep_cmd->add_option("--fit-lambda", sweep_opt->fit_lambda,
                        "base lambda for out_dim/k sweeps");
  sweep_cmd->add_option("--between-weighting", sweep_opt->weighting, "by_count|uniform");
  sweep_cmd->callback([sweep_opt] { run_sweep(*sweep_opt); });

  auto synth_opt = std::make_shared<SynthOptions>();
  CLI::App* synth = app.add_subcommand("synth", "generate the deterministic Gaussian benchmark");
  synth->add_option("--seed", synth_opt->cfg.seed, "generator seed");
  synth->add_option("--classes", synth_opt->cfg.classes, "class count");
  synth->add_option("--dim", synth_opt->cfg.dim, "embedding dimension");
  synth->add_option("--train-per-class", synth_opt->cfg.train_per_class, "train rows per class");
  synth->add_option("--test-per-class", synth_opt->cfg.test_per_class, "test rows per class");
  synth->add_option("--cond", synth_opt->cfg.cond, "within-class covariance condition number");
  synth->add_option("--mean-scale", synth_opt->cfg.mean_scale, "class-mean draw scale");
  synth->add_option("--out", synth_opt->out, "output path prefix")->required();
  synth->callback([synth_opt] { run_synth(*synth_opt); });

  auto verify_opt = std::make_shared<VerifyOptions>();
  CLI::App* verify = app.add_subcommand("verify", "check serialized artifacts' invariants");
  verify->add_option("--embeddings", verify_opt->embeddings, "embedding file(s)");
  verify->add_option("--labels", verify_opt->labels, "label file(s)");
  verify->add_option("--transform", verify_opt->transforms, "transform file(s)");
  verify->add_option("--stats", verify_opt->stats, "stats checkpoint(s)");
  verify->add_option("--bank", verify_opt->banks, "bank prefix(es)");
  verify->add_option("--class-table", verify_opt->class_tables, "class table(s)");
  verify->add_option("--multilabel", verify_opt->multilabels, "multi-label file(s)");
  verify->add_option("--class-set", verify_opt->class_sets, "class-set file(s)");
  verify->callback([verify_opt] { run_verify(*verify_opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const validation_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (e.has_suggested_lambda())
      std::fprintf(stderr, "suggested lambda: %.10g\n", e.suggested_lambda());
    return 3;
  } catch (const io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
