// styledl command-line front end.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "styledl/knn.hpp"
#include "styledl/rank.hpp"
#include "styledl/trainer.hpp"

namespace fs = std::filesystem;
using namespace styledl;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void print_distribution(const std::vector<std::string>& labels, std::span<const double> p) {
  std::cout << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < labels.size(); ++i) std::cout << labels[i] << "\t" << p[i] << "\n";
}

Tensor adjacency_for(const Manifest& m, double tau, double threshold) {
  std::vector<std::string> warnings;
  Tensor a = cooccurrence_adjacency(m, {tau, threshold}, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"StyleEDL emotion distribution learning"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t n = 16, labels = 8, size = 64, k = 5;
  double tau = 0.1, threshold = 0.3, concentration = 0.5;
  std::string out, manifest, config, checkpoint, json, image, train_path, test_path, method;
  std::vector<std::string> reports;

  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic distribution-labelled PPM corpus");
  gen->add_option("--seed", seed, "RNG seed")->required();
  gen->add_option("--n", n, "number of images")->required();
  gen->add_option("--labels", labels, "number of emotion labels")->required();
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--size", size, "image side in pixels")->capture_default_str();
  gen->add_option("--concentration", concentration, "Dirichlet concentration")->capture_default_str();

  auto* adj = app.add_subcommand("build-adj", "Print the static label co-occurrence adjacency");
  adj->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  adj->add_option("--tau", tau, "presence threshold")->capture_default_str();
  adj->add_option("--threshold", threshold, "binarization threshold")->capture_default_str();
  adj->add_option("--json", json, "also write the matrix as JSON");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--config", config, "key=value config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "checkpoint path")->required();

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a manifest");
  ev->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  ev->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  ev->add_option("--json", json, "report path")->required();
  ev->add_option("--method", method, "method name stored in the report")->default_val("Ours");

  auto* pr = app.add_subcommand("predict", "Predict the emotion distribution of one image");
  pr->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  pr->add_option("--image", image)->required()->check(CLI::ExistingFile);

  auto* rk = app.add_subcommand("rank", "Average-rank table over metric reports");
  rk->add_option("--reports", reports, "JSON reports, one per method")->required()->check(CLI::ExistingFile);

  auto* kn = app.add_subcommand("baseline-knn", "AA-kNN baseline on 8x8 grayscale features");
  kn->add_option("--train", train_path, "training manifest")->required()->check(CLI::ExistingFile);
  kn->add_option("--test", test_path, "test manifest")->required()->check(CLI::ExistingFile);
  kn->add_option("--k", k, "neighbours")->capture_default_str();
  kn->add_option("--json", json, "report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      Manifest m = synth_generate(seed, n, labels, size, out, concentration);
      std::cout << "wrote " << m.records.size() << " images and " << (fs::path(out) / "manifest.txt").string() << "\n";
    } else if (*adj) {
      Manifest m = load_manifest(manifest);
      Tensor a = adjacency_for(m, tau, threshold);
      std::size_t c = m.label_count();
      std::cout << std::fixed << std::setprecision(4);
      for (std::size_t i = 0; i < c; ++i) {
        std::cout << std::left << std::setw(14) << m.label_names[i];
        for (std::size_t j = 0; j < c; ++j) std::cout << " " << a.data()[i * c + j];
        std::cout << "\n";
      }
      if (!json.empty()) {
        nlohmann::json j;
        j["labels"] = m.label_names;
        j["adjacency"] = std::vector<double>(a.data().begin(), a.data().end());
        write_json(json, j);
      }
    } else if (*tr) {
      TrainConfig cfg = load_config(config);
      Manifest m = load_manifest(manifest);
      Dataset data = load_dataset(m, cfg.input_size);
      TrainResult res = train(cfg, data, adjacency_for(m, cfg.tau, cfg.threshold), m.label_names,
                              [](const EpochLog& l) { std::cout << l.to_text() << std::endl; });
      save_checkpoint(out, *res.state.model, res.state.optimizer.get(), res.state.epoch);
      if (res.aborted) {
        std::cerr << "error: training aborted (" << res.abort_reason << "); last good checkpoint written to " << out
                  << "\n";
        return 3;
      }
      std::cout << "checkpoint " << out << "\n";
    } else if (*ev) {
      TrainState st = load_checkpoint(checkpoint);
      Manifest m = load_manifest(manifest);
      if (m.label_count() != st.model->label_count())
        throw ConfigError("manifest has " + std::to_string(m.label_count()) + " labels, checkpoint has " +
                          std::to_string(st.model->label_count()));
      MetricReport report = evaluate(*st.model, load_dataset(m, st.model->config().input_size));
      write_json(json, report.to_json(method));
      std::cout << report.to_text();
    } else if (*pr) {
      TrainState st = load_checkpoint(checkpoint);
      print_distribution(st.model->labels(), predict_image(*st.model, image));
    } else if (*rk) {
      std::vector<MethodScores> columns;
      for (const auto& path : reports) {
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
          throw FormatError(path + ": " + e.what());
        }
        columns.push_back(method_scores_from_json(j, fs::path(path).stem().string()));
      }
      RankResult res;
      std::cout << rank_table(columns, &res);
      for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
    } else if (*kn) {
      Manifest train_m = load_manifest(train_path), test_m = load_manifest(test_path);
      if (train_m.label_count() != test_m.label_count()) throw ConfigError("train and test label counts differ");
      KnnBaseline knn = knn_fit(train_m);
      std::vector<std::string> warnings;
      MetricReport report;
      for (const auto& r : test_m.records) {
        auto pred = knn.predict(knn_feature(decode_ppm(read_file(test_m.resolve(r)))), k, &warnings);
        report.add(evaluate_metrics(r.distribution, pred));
      }
      if (!warnings.empty()) std::cerr << "warning: " << warnings.front() << "\n";
      if (!json.empty()) write_json(json, report.to_json("AA-kNN"));
      std::cout << report.to_text();
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
