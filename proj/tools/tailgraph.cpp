// tailgraph: data generation, TU ingestion, training, evaluation, ablation
// and gradient checks from the command line.

#include "tailgraph/ablation.hpp"
#include "tailgraph/gradcheck.hpp"
#include "tailgraph/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace tailgraph;
using nlohmann::json;

namespace {

constexpr int kExitNotConverged = 1;
constexpr int kExitError = 2;

struct SplitFiles {
  fs::path dir;
  fs::path train() const { return dir / "train.jsonl"; }
  fs::path val() const { return dir / "val.jsonl"; }
  fs::path test() const { return dir / "test.jsonl"; }
};

void write_splits(const fs::path& dir, const train::Splits& s) {
  fs::create_directories(dir);
  const SplitFiles f{dir};
  data::write_jsonl(f.train(), s.train);
  data::write_jsonl(f.val(), s.val);
  data::write_jsonl(f.test(), s.test);
}

int num_classes_of(const train::Splits& s) {
  int m = 0;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& g : *part) m = std::max(m, g.label + 1);
  return m;
}

train::Splits read_splits(const fs::path& dir) {
  const SplitFiles f{dir};
  train::Splits s;
  s.train = data::read_jsonl(f.train());
  s.val = data::read_jsonl(f.val());
  if (fs::exists(f.test())) s.test = data::read_jsonl(f.test());
  s.num_classes = num_classes_of(s);
  return s;
}

void print_stats(const char* name, std::span<const data::Graph> graphs, int m) {
  const auto st = data::compute_stats(graphs, m);
  std::printf("%-6s %5ld graphs, class sizes [", name, st.total);
  for (std::size_t j = 0; j < st.class_sizes.size(); ++j) std::printf("%s%ld", j ? ", " : "", st.class_sizes[j]);
  std::printf("], IF %.2f\n", st.imbalance_factor);
}

train::TrainConfig build_config(const std::string& config_file, const std::vector<std::string>& sets) {
  train::TrainConfig c = config_file.empty() ? train::TrainConfig{} : train::load_config(config_file);
  train::apply_seed_env(c);
  for (const auto& s : sets) train::apply_override(c, s);
  c.validate();
  return c;
}

std::string checkpoint_meta(const train::TrainConfig& c, const train::TrainResult& r) {
  json meta;
  meta["config"] = json::parse(train::config_to_json(c));
  meta["train_counts"] = r.train_counts;
  meta["best_epoch"] = r.best_epoch;
  return meta.dump();
}

void print_metrics(const std::string& label, const train::Metrics& m) {
  auto group = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("n/a"); };
  std::printf("%s: accuracy %.4f  head %s  medium %s  tail %s  nll %.4f (%zu graphs)\n", label.c_str(), m.accuracy,
              group(m.group[0]).c_str(), group(m.group[1]).c_str(), group(m.group[2]).c_str(), m.nll, m.samples);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed graph classification with a gated, distilled expert ensemble"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic motif corpus and its long-tailed splits");
  train::MotifSplitSpec motif;
  std::string gen_out;
  std::string preset;
  gen->add_option("--out", gen_out, "Output directory for train/val/test .jsonl")->required();
  gen->add_option("--preset", preset, "motif-3, motif-5 or motif-10 (sets classes, head count, IF)");
  gen->add_option("--classes", motif.corpus.num_classes, "Number of classes")->capture_default_str();
  gen->add_option("--per-class", motif.corpus.per_class, "Graphs per class before long-tailing")->capture_default_str();
  gen->add_option("--noise", motif.corpus.noise, "Fraction of edges rewired")->capture_default_str();
  gen->add_option("--seed", motif.corpus.seed, "Generator seed")->capture_default_str();
  gen->add_option("--head", motif.head_count, "Training size of the largest class")->capture_default_str();
  gen->add_option("--imbalance", motif.imbalance_factor, "Imbalance factor N_1 / N_M")->capture_default_str();
  gen->add_option("--val", motif.per_class_val, "Validation graphs per class")->capture_default_str();
  gen->add_option("--test", motif.per_class_test, "Test graphs per class")->capture_default_str();

  // ingest
  auto* ing = app.add_subcommand("ingest", "Convert a TU-format dataset directory to .jsonl");
  std::string tu_dir, ingest_out;
  data::TuOptions tu_opts;
  double ingest_if = 0;
  int ingest_val = 0, ingest_test = 0;
  std::uint64_t ingest_seed = 0;
  ing->add_option("--tu", tu_dir, "Directory holding <name>_A.txt and friends")->required();
  ing->add_option("--out", ingest_out, "Output directory")->required();
  ing->add_option("--max-degree", tu_opts.max_degree, "Degree cap for one-hot features")->capture_default_str();
  ing->add_option("--imbalance", ingest_if, "Also write long-tailed train/val/test splits with this IF");
  ing->add_option("--val", ingest_val, "Validation graphs per class for --imbalance");
  ing->add_option("--test", ingest_test, "Test graphs per class for --imbalance");
  ing->add_option("--seed", ingest_seed, "Split seed");

  // train
  auto* tr = app.add_subcommand("train", "Train on a split directory");
  std::string train_data, train_config, train_out;
  std::vector<std::string> train_sets;
  tr->add_option("--data", train_data, "Directory with train/val/test .jsonl")->required();
  tr->add_option("--config", train_config, "Config file (JSON with comments)");
  tr->add_option("--set", train_sets, "Override a config key: key=value (repeatable)");
  tr->add_option("--out", train_out, "Run directory for metrics.jsonl, summary.csv and checkpoint.json")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string eval_ckpt, eval_data, eval_split = "test";
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", eval_data, "Directory with the split files")->required();
  ev->add_option("--split", eval_split, "train, val or test")->capture_default_str();

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run the component ablation matrix");
  std::string ab_data, ab_config, ab_out, ab_table = "components";
  std::vector<std::string> ab_sets, ab_variants;
  int ab_seeds = 5;
  ab->add_option("--data", ab_data, "Split directory; default regenerates the motif corpus for every seed");
  ab->add_option("--config", ab_config, "Config file");
  ab->add_option("--set", ab_sets, "Override a config key: key=value");
  ab->add_option("--table", ab_table, "components, contrast or distill")->capture_default_str();
  ab->add_option("--variant", ab_variants, "Custom row name:switch=value,...; replaces --table");
  ab->add_option("--seeds", ab_seeds, "Number of seeds")->capture_default_str();
  ab->add_option("--out", ab_out, "CSV output file");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Compare tape gradients with central finite differences");
  int gc_instances = 50;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  bool gc_ops = false;
  gc->add_option("--instances", gc_instances, "Random instances per case")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Largest accepted relative error")->capture_default_str();
  gc->add_flag("--ops", gc_ops, "Also check every tape op and the expert forward pass");

  // config template
  auto* cfg = app.add_subcommand("print-config", "Print the documented default config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (!preset.empty()) {
        bool found = false;
        for (const auto& p : data::motif_presets())
          if (p.name == preset) {
            motif.corpus.num_classes = p.num_classes;
            motif.head_count = p.head_count;
            motif.imbalance_factor = p.imbalance_factor;
            found = true;
          }
        if (!found) throw ConfigError("unknown preset '" + preset + "'");
      }
      const train::Splits s = train::motif_splits(motif);
      write_splits(gen_out, s);
      print_stats("train", s.train, s.num_classes);
      print_stats("val", s.val, s.num_classes);
      print_stats("test", s.test, s.num_classes);
      return 0;
    }
    if (*ing) {
      const data::TuDataset ds = data::ingest_tu(tu_dir, tu_opts);
      fs::create_directories(ingest_out);
      data::write_jsonl(fs::path(ingest_out) / (ds.name + ".jsonl"), ds.graphs);
      std::printf("%s: %zu graphs, %d classes, IF %.2f\n", ds.name.c_str(), ds.graphs.size(), ds.stats.num_classes,
                  ds.stats.imbalance_factor);
      json labels = ds.original_labels;
      std::ofstream(fs::path(ingest_out) / "label_map.json") << labels.dump() << '\n';
      if (ingest_if > 0) {
        auto split = data::split_balanced(ds.graphs, ingest_val, ingest_test, hash_seed(ingest_seed, 0x511));
        data::LongTailSpec lt;
        lt.imbalance_factor = ingest_if;
        lt.seed = hash_seed(ingest_seed, 0x17);
        train::Splits s;
        s.train = data::make_long_tailed(split.remainder, lt).train;
        s.val = std::move(split.val);
        s.test = std::move(split.test);
        s.num_classes = ds.stats.num_classes;
        write_splits(ingest_out, s);
        print_stats("train", s.train, s.num_classes);
      }
      return 0;
    }
    if (*tr) {
      const train::TrainConfig c = build_config(train_config, train_sets);
      const train::Splits s = read_splits(train_data);
      fs::create_directories(train_out);
      std::ofstream metrics(fs::path(train_out) / "metrics.jsonl");
      train::TrainHooks hooks;
      hooks.on_epoch = [&](const train::EpochRecord& r) {
        metrics << train::epoch_json(r) << '\n';
        metrics.flush();
      };
      const train::TrainResult r = train::train(c, s, hooks);
      if (!r.converged) {
        std::fprintf(stderr, "training failed: %s\n", r.failure.c_str());
        return kExitNotConverged;
      }
      nn::save_checkpoint(fs::path(train_out) / "checkpoint.json", r.bank, checkpoint_meta(c, r));
      std::vector<std::string> names{"val"};
      std::vector<train::Metrics> rows{r.best_val};
      print_metrics("val (epoch " + std::to_string(r.best_epoch) + ")", r.best_val);
      if (r.test) {
        names.push_back("test");
        rows.push_back(*r.test);
        print_metrics("test", *r.test);
      }
      train::write_summary_csv(fs::path(train_out) / "summary.csv", names, rows);
      return 0;
    }
    if (*ev) {
      std::string meta_text;
      const nn::ExpertBank bank = nn::load_checkpoint(eval_ckpt, &meta_text);
      const json meta = json::parse(meta_text);
      const auto counts = meta.at("train_counts").get<std::vector<long>>();
      const SplitFiles f{eval_data};
      const fs::path file = eval_split == "train" ? f.train() : eval_split == "val" ? f.val() : f.test();
      const auto graphs = data::read_jsonl(file);
      const train::Metrics m = train::evaluate(bank, graphs, counts);
      print_metrics(eval_split, m);
      std::printf("%s\n", train::metrics_json(m).c_str());
      return 0;
    }
    if (*ab) {
      const train::TrainConfig c = build_config(ab_config, ab_sets);
      std::vector<train::Variant> variants;
      if (!ab_variants.empty()) {
        for (const auto& v : ab_variants) variants.push_back(train::parse_variant(v));
      } else if (ab_table == "components") {
        variants = train::table_variants();
      } else if (ab_table == "contrast") {
        variants = train::contrast_variants();
      } else if (ab_table == "distill") {
        variants = train::distill_variants();
      } else {
        throw ConfigError("unknown table '" + ab_table + "' (components, contrast, distill)");
      }
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < ab_seeds; ++i) seeds.push_back(c.seed + static_cast<std::uint64_t>(i));
      train::SplitProvider provider;
      if (!ab_data.empty()) {
        const train::Splits fixed = read_splits(ab_data);
        provider = [fixed](std::uint64_t) { return fixed; };
      } else {
        provider = [](std::uint64_t seed) {
          train::MotifSplitSpec spec;
          spec.corpus.noise = 0.1;
          spec.corpus.seed = seed;
          return train::motif_splits(spec);
        };
      }
      const auto rows = train::run_ablation(c, variants, seeds, provider,
                                            [](const train::Variant& v, std::uint64_t seed, const train::TrainResult& r) {
                                              std::fprintf(stderr, "%s seed %llu: test accuracy %.4f\n", v.name.c_str(),
                                                           static_cast<unsigned long long>(seed),
                                                           r.test ? r.test->accuracy : 0.0);
                                            });
      const std::string csv = train::ablation_csv(rows);
      if (ab_out.empty()) std::fputs(csv.c_str(), stdout);
      else std::ofstream(ab_out) << csv;
      return 0;
    }
    if (*gc) {
      auto cases = gradcheck::loss_cases();
      if (gc_ops) {
        auto ops = gradcheck::op_cases();
        cases.insert(cases.end(), ops.begin(), ops.end());
      }
      int failed = 0;
      for (const auto& c : cases) {
        const auto rep = gradcheck::run_case(c, gc_instances, gc_seed, gc_tol);
        std::printf("%-18s %3d instances  max rel error %.3e  %s (%.2fs)\n", rep.name.c_str(), rep.instances,
                    rep.max_rel_error, rep.failures ? "FAIL" : "ok", rep.seconds);
        failed += rep.failures ? 1 : 0;
      }
      return failed ? kExitNotConverged : 0;
    }
    if (*cfg) {
      std::fputs(train::default_config_text().c_str(), stdout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return 0;
}
