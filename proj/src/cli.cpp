#include "xda/cli.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "xda/error.hpp"
#include "xda/image_io.hpp"
#include "xda/seed.hpp"

namespace xda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("unknown config key '" + key + "' in " + where);
  }
}

DistanceMode parse_distance(const std::string& s) {
  if (s == "euclidean") return DistanceMode::Euclidean;
  if (s == "squared") return DistanceMode::SquaredEuclidean;
  throw ConfigError("distance must be 'euclidean' or 'squared', got '" + s +
                    "'");
}

Method parse_method(const std::string& s) {
  if (s == "ours") return Method::Ours;
  if (s == "source-only") return Method::SourceOnly;
  throw ConfigError("method must be 'ours' or 'source-only', got '" + s + "'");
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }

  check_keys(root, "config root",
             {"seed", "out", "gen", "data", "model", "train", "protocol"});
  if (!root.contains("seed"))
    throw ConfigError("config must set a seed; wall-clock seeding is not "
                      "supported");

  ExperimentConfig cfg;
  cfg.seed = root.at("seed").get<uint64_t>();
  if (root.contains("out")) cfg.out_dir = root.at("out").get<std::string>();

  if (root.contains("gen")) {
    const json& g = root.at("gen");
    check_keys(g, "gen",
               {"image_size", "counts", "gain", "offset", "rotation_deg",
                "noise_sigma"});
    if (g.contains("image_size"))
      cfg.shift.image_size = g.at("image_size").get<int>();
    if (g.contains("gain")) cfg.shift.gain = g.at("gain").get<double>();
    if (g.contains("offset")) cfg.shift.offset = g.at("offset").get<double>();
    if (g.contains("rotation_deg"))
      cfg.shift.rotation_deg = g.at("rotation_deg").get<double>();
    if (g.contains("noise_sigma"))
      cfg.shift.noise_sigma = g.at("noise_sigma").get<double>();
    if (g.contains("counts")) {
      const auto counts = g.at("counts").get<std::vector<int>>();
      if (counts.size() != 3)
        throw ConfigError("gen.counts must be [source, target_train, "
                          "target_test]");
      cfg.gen_source = counts[0];
      cfg.gen_target_train = counts[1];
      cfg.gen_target_test = counts[2];
    }
  }

  if (root.contains("data")) {
    const json& d = root.at("data");
    check_keys(d, "data", {"source", "target_train", "target_test"});
    if (d.contains("source"))
      cfg.source_dir = d.at("source").get<std::string>();
    if (d.contains("target_train"))
      cfg.target_train_dir = d.at("target_train").get<std::string>();
    if (d.contains("target_test"))
      cfg.target_test_dir = d.at("target_test").get<std::string>();
  }

  if (root.contains("model")) {
    const json& m = root.at("model");
    check_keys(m, "model",
               {"extractor", "extractor_hidden", "embed_dim", "head_hidden",
                "conv_filters", "conv_kernel"});
    if (m.contains("extractor")) {
      const std::string e = m.at("extractor").get<std::string>();
      if (e == "mlp")
        cfg.model.extractor = ModelConfig::Extractor::Mlp;
      else if (e == "conv")
        cfg.model.extractor = ModelConfig::Extractor::Conv;
      else
        throw ConfigError("model.extractor must be 'mlp' or 'conv'");
    }
    if (m.contains("extractor_hidden"))
      cfg.model.extractor_hidden =
          m.at("extractor_hidden").get<std::vector<int64_t>>();
    if (m.contains("embed_dim"))
      cfg.model.embed_dim = m.at("embed_dim").get<int64_t>();
    if (m.contains("head_hidden")) {
      const auto h = m.at("head_hidden").get<std::vector<int64_t>>();
      if (h.size() != 2)
        throw ConfigError("model.head_hidden must have exactly two widths");
      cfg.model.head_hidden = {h[0], h[1]};
    }
    if (m.contains("conv_filters"))
      cfg.model.conv_filters = m.at("conv_filters").get<int64_t>();
    if (m.contains("conv_kernel"))
      cfg.model.conv_kernel = m.at("conv_kernel").get<int64_t>();
  }

  if (root.contains("train")) {
    const json& t = root.at("train");
    check_keys(t, "train",
               {"lr", "lr_decay", "decay_per_step", "alpha", "momentum",
                "epochs", "batch_size", "use_cp", "use_cd", "distance",
                "detach_margin"});
    if (t.contains("lr")) cfg.train.lr = t.at("lr").get<double>();
    if (t.contains("lr_decay"))
      cfg.train.lr_decay = t.at("lr_decay").get<double>();
    if (t.contains("decay_per_step"))
      cfg.train.decay_per_step = t.at("decay_per_step").get<bool>();
    if (t.contains("alpha")) cfg.train.alpha = t.at("alpha").get<double>();
    if (t.contains("momentum"))
      cfg.train.momentum = t.at("momentum").get<double>();
    if (t.contains("epochs")) cfg.train.epochs = t.at("epochs").get<int>();
    if (t.contains("batch_size"))
      cfg.train.batch_size = t.at("batch_size").get<int>();
    if (t.contains("use_cp"))
      cfg.train.mask.use_cp = t.at("use_cp").get<bool>();
    if (t.contains("use_cd"))
      cfg.train.mask.use_cd = t.at("use_cd").get<bool>();
    if (t.contains("distance"))
      cfg.train.distance =
          parse_distance(t.at("distance").get<std::string>());
    if (t.contains("detach_margin"))
      cfg.train.detach_margin = t.at("detach_margin").get<double>();
  }

  if (root.contains("protocol")) {
    const json& p = root.at("protocol");
    check_keys(p, "protocol", {"method", "n", "k", "source_group", "ns"});
    if (p.contains("method"))
      cfg.protocol.method = parse_method(p.at("method").get<std::string>());
    if (p.contains("n")) cfg.protocol.n = p.at("n").get<int>();
    if (p.contains("k")) cfg.protocol.k = p.at("k").get<int>();
    if (p.contains("source_group"))
      cfg.protocol.source_group_size = p.at("source_group").get<int>();
    if (p.contains("ns")) cfg.ns = p.at("ns").get<std::vector<int>>();
  }

  cfg.train.validate();
  cfg.shift.validate();
  cfg.protocol.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.model.seed = cfg.seed;
  return cfg;
}

// ---------------------------------------------------------------------------
// output staging

namespace {

/// Collects output files in memory, then lands them all at once. On failure
/// the partial set moves to `<out>/quarantine/` and previous results stay
/// untouched.
class OutputStage {
 public:
  explicit OutputStage(std::string out_dir) : out_(std::move(out_dir)) {}

  void add(const std::string& name, std::string contents) {
    files_.emplace_back(name, std::move(contents));
  }

  void add_binary(const std::string& name,
                  std::function<void(const std::string&)> writer) {
    binary_writers_.emplace_back(name, std::move(writer));
  }

  void commit() { land(out_); }

  void quarantine() {
    const fs::path q = fs::path(out_) / "quarantine";
    fs::remove_all(q);
    land(q.string());
  }

 private:
  void land(const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& [name, contents] : files_) {
      const fs::path p = fs::path(dir) / name;
      std::ofstream f(p, std::ios::binary);
      if (!f) throw IoError("cannot write " + p.string());
      f << contents;
      if (!f) throw IoError("write failed: " + p.string());
    }
    for (const auto& [name, writer] : binary_writers_)
      writer((fs::path(dir) / name).string());
  }

  std::string out_;
  std::vector<std::pair<std::string, std::string>> files_;
  std::vector<std::pair<std::string, std::function<void(const std::string&)>>>
      binary_writers_;
};

std::string resolve_out(const ExperimentConfig& cfg,
                        const CliOptions& options) {
  const std::string out =
      options.out_dir.empty() ? cfg.out_dir : options.out_dir;
  if (out.empty())
    throw ConfigError("no output directory: set 'out' in the config or pass "
                      "--out");
  return out;
}

DomainShiftData load_benchmark(const ExperimentConfig& cfg) {
  if (cfg.source_dir.empty() || cfg.target_train_dir.empty() ||
      cfg.target_test_dir.empty())
    throw ConfigError("config must name data.source, data.target_train and "
                      "data.target_test directories");
  for (const std::string& dir :
       {cfg.source_dir, cfg.target_train_dir, cfg.target_test_dir})
    if (!fs::is_directory(dir))
      throw DataError("dataset directory does not exist: " + dir);

  DomainShiftData data;
  data.source = load_dataset(cfg.source_dir);
  data.target_train = load_dataset(cfg.target_train_dir);
  data.target_test = load_dataset(cfg.target_test_dir);
  return data;
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string summary_csv(const FoldReport& r) {
  std::string out = "metric,mean,ci95,formatted\n";
  out += "accuracy," + csv_double(r.mean_accuracy) + "," +
         csv_double(r.ci95_accuracy) + "," +
         format_mean_ci(r.mean_accuracy, r.ci95_accuracy) + "\n";
  out += "f1," + csv_double(r.mean_f1) + "," + csv_double(r.ci95_f1) + "," +
         format_mean_ci(r.mean_f1, r.ci95_f1) + "\n";
  return out;
}

std::string folds_csv(const FoldReport& r) {
  std::string out = "fold,accuracy,f1\n";
  for (size_t i = 0; i < r.per_fold.size(); ++i)
    out += std::to_string(i) + "," + csv_double(r.per_fold[i].accuracy) +
           "," + csv_double(r.per_fold[i].f1) + "\n";
  return out;
}

int run_command(const CliOptions& options,
                const std::function<void(const ExperimentConfig&,
                                         OutputStage&)>& body) {
  try {
    ExperimentConfig cfg = load_config(options.config_path);
    cfg.protocol.jobs = std::max(1, options.jobs);
    OutputStage stage(resolve_out(cfg, options));
    try {
      body(cfg, stage);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      stage.quarantine();
      std::cerr << "partial outputs quarantined\n";
      return 1;
    }
    stage.commit();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int cmd_gen_data(const CliOptions& options) {
  try {
    ExperimentConfig cfg = load_config(options.config_path);
    const std::string out = resolve_out(cfg, options);

    int n_source = cfg.gen_source;
    int n_tt = cfg.gen_target_train;
    int n_te = cfg.gen_target_test;
    if (options.smoke) {
      n_source = 600;
      n_tt = 20;
      n_te = 100;
    }

    if (fs::exists(out) && !fs::is_empty(out) && !options.force)
      throw DataError("output directory " + out +
                      " is not empty; pass --force to overwrite");

    const DomainShiftData data =
        synth_domain_shift(cfg.shift, n_source, n_tt, n_te, cfg.seed);
    save_dataset((fs::path(out) / "source").string(), data.source);
    save_dataset((fs::path(out) / "target_train").string(),
                 data.target_train);
    save_dataset((fs::path(out) / "target_test").string(), data.target_test);

    std::printf("source: %zu samples\ntarget_train: %zu samples\n"
                "target_test: %zu samples\n",
                data.source.samples.size(), data.target_train.samples.size(),
                data.target_test.samples.size());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_run(const CliOptions& options) {
  return run_command(options, [&](const ExperimentConfig& cfg,
                                  OutputStage& stage) {
    ExperimentConfig c = cfg;
    if (options.smoke) {
      c.protocol.k = 3;
      c.train.epochs = std::min(c.train.epochs, 5);
    }
    const DomainShiftData data = load_benchmark(c);

    std::vector<FoldRun> runs;
    const FoldReport report =
        k_fold_protocol(data, c.protocol, c.train, c.model, &runs);

    const std::string run_id =
        c.protocol.method == Method::Ours ? "ours" : "source-only";
    stage.add("summary.csv", summary_csv(report));
    stage.add("folds.csv", folds_csv(report));

    std::string history;
    for (size_t fold = 0; fold < runs.size(); ++fold)
      append_history(&history, run_id, static_cast<int>(fold),
                     runs[fold].history, runs[fold].metrics, c.train.epochs);
    stage.add("history.tsv", history);

    // checkpoint the best-accuracy fold (ties break to the lowest index)
    size_t best = 0;
    for (size_t i = 1; i < runs.size(); ++i)
      if (runs[i].metrics.accuracy > runs[best].metrics.accuracy) best = i;
    SiameseModel best_model = std::move(runs[best].model);
    stage.add_binary("model.ckpt",
                     [m = std::move(best_model)](const std::string& path) {
                       save_checkpoint(path, m);
                     });

    std::printf("%s accuracy %s f1 %s\n", run_id.c_str(),
                format_mean_ci(report.mean_accuracy, report.ci95_accuracy)
                    .c_str(),
                format_mean_ci(report.mean_f1, report.ci95_f1).c_str());
  });
}

int cmd_ablate(const CliOptions& options) {
  return run_command(options, [&](const ExperimentConfig& cfg,
                                  OutputStage& stage) {
    ExperimentConfig c = cfg;
    if (options.smoke) {
      c.protocol.k = 3;
      c.train.epochs = std::min(c.train.epochs, 5);
    }
    const DomainShiftData data = load_benchmark(c);
    const std::vector<AblationRow> rows =
        ablation_run(data, c.protocol, c.train, c.model);

    std::string csv = "mask,mean_acc,ci_acc,mean_f1,ci_f1\n";
    for (const AblationRow& row : rows) {
      csv += row.name + "," + csv_double(row.report.mean_accuracy) + "," +
             csv_double(row.report.ci95_accuracy) + "," +
             csv_double(row.report.mean_f1) + "," +
             csv_double(row.report.ci95_f1) + "\n";
      std::printf("%-8s accuracy %s\n", row.name.c_str(),
                  format_mean_ci(row.report.mean_accuracy,
                                 row.report.ci95_accuracy)
                      .c_str());
    }
    stage.add("ablation.csv", csv);
  });
}

int cmd_sweep(const CliOptions& options) {
  return run_command(options, [&](const ExperimentConfig& cfg,
                                  OutputStage& stage) {
    ExperimentConfig c = cfg;
    if (options.smoke) {
      c.protocol.k = 3;
      c.train.epochs = std::min(c.train.epochs, 5);
    }
    const DomainShiftData data = load_benchmark(c);
    const std::vector<SweepRow> rows =
        n_shot_sweep(data, c.ns, c.protocol, c.train, c.model);

    std::string csv = "n,mean_acc,ci_acc,mean_f1,ci_f1\n";
    for (const SweepRow& row : rows) {
      csv += std::to_string(row.n) + "," +
             csv_double(row.report.mean_accuracy) + "," +
             csv_double(row.report.ci95_accuracy) + "," +
             csv_double(row.report.mean_f1) + "," +
             csv_double(row.report.ci95_f1) + "\n";
      std::printf("n=%d accuracy %s\n", row.n,
                  format_mean_ci(row.report.mean_accuracy,
                                 row.report.ci95_accuracy)
                      .c_str());
    }
    stage.add("sweep.csv", csv);
  });
}

}  // namespace xda
