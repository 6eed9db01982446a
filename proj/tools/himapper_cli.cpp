// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Every RunConfig field is a flag (underscores become
// dashes); values are layered defaults < --config file < flags.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad configuration or usage,
// 3 numeric failure, 4 I/O failure.

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "himapper/checkpoint.hpp"
#include "himapper/errors.hpp"
#include "himapper/runtime.hpp"
#include "himapper/trainer.hpp"
#include "himapper/tree_export.hpp"

namespace fs = std::filesystem;
using namespace himapper;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::stringstream text;
  text << in.rdbuf();
  return text.str();
}

// Flag storage for one subcommand. Values stay strings until resolve() so
// the config file can sit between the defaults and the flags.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_file, "key=value config file (as written next to metrics logs)");
    RunConfig defaults;
    visit_fields(defaults, [&](const char* name, auto&) {
      std::string flag = std::string("--") + name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd.add_option(flag, values[name])->group("Run config");
    });
  }

  bool given(const CLI::App& cmd, const std::string& name) const {
    std::string flag = "--" + name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    return cmd.count(flag) > 0;
  }

  RunConfig resolve(const CLI::App& cmd, const std::string& mode) const {
    std::string text = config_file.empty() ? std::string() : read_file(config_file) + "\n";
    for (const auto& [name, value] : values)
      if (given(cmd, name)) text += name + "=" + value + "\n";
    RunConfig config = RunConfig::from_text(text);
    config.mode = mode;
    config.validate();
    return config;
  }
};

SyntheticSpec synthetic_spec(const RunConfig& c, std::size_t per_class) {
  SyntheticSpec spec;
  spec.num_classes = c.num_classes;
  spec.per_class = per_class;
  spec.image_size = c.image_size;
  spec.channels = c.channels;
  spec.pixel_noise = c.pixel_noise;
  return spec;
}

// A split comes from <dir>/<split>.hmd, or from <dir>/<split>/<class>/*.ppm
// image folders; without --data it is rendered from the config (the same
// seeds gen-data uses).
Dataset load_split(const std::string& data_dir, const std::string& split, const RunConfig& c) {
  Dataset data;
  if (data_dir.empty()) {
    const bool train = split == "train";
    data = generate_dataset(synthetic_spec(c, train ? c.train_per_class : c.eval_per_class), c.seed + (train ? 0 : 1));
  } else if (fs::exists(fs::path(data_dir) / (split + ".hmd"))) {
    data = load_dataset((fs::path(data_dir) / (split + ".hmd")).string());
  } else if (fs::is_directory(fs::path(data_dir) / split)) {
    data = load_image_directory((fs::path(data_dir) / split).string(), c.image_size, c.channels);
  } else {
    throw IoError("no '" + split + "' split under '" + data_dir + "' (expected " + split + ".hmd or " + split + "/)");
  }
  if (data.num_classes != c.num_classes || data.image_size != c.image_size || data.channels != c.channels) {
    std::ostringstream os;
    os << split << " data has " << data.num_classes << " classes of " << data.channels << "x" << data.image_size << "x"
       << data.image_size << " images but the config expects " << c.num_classes << " of " << c.channels << "x"
       << c.image_size << "x" << c.image_size;
    throw ConfigError(os.str());
  }
  return data;
}

std::unique_ptr<MetricsLog> open_log(const std::string& path, const RunConfig& config) {
  if (path.empty()) return nullptr;
  if (const fs::path dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  return std::make_unique<MetricsLog>(path, config);
}

void print_eval(const std::string& prefix, const EvalResult& r) {
  std::cout << prefix << "accuracy=" << shortest(r.accuracy) << '\n'
            << prefix << "loss_total=" << shortest(r.loss_total) << '\n'
            << prefix << "loss_ce=" << shortest(r.loss_ce) << '\n'
            << prefix << "loss_cont=" << shortest(r.loss_cont) << '\n'
            << prefix << "loss_kl=" << shortest(r.loss_kl) << '\n'
            << prefix << "triple_score=" << shortest(r.triple_score) << '\n'
            << prefix << "count=" << r.count << '\n';
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::size_t> size_list(const std::string& text, const char* flag) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError(std::string(flag) + ": '" + item + "' is not a non-negative integer");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string(flag) + " needs at least one value");
  return out;
}

// Pretrains in-process unless a pretrained checkpoint is given.
void prepare_backbone(Model& model, const std::string& backbone_path, const Dataset& train, const Dataset& eval,
                      MetricsLog* log) {
  if (!backbone_path.empty()) {
    load_backbone(backbone_path, model);
    std::cout << "backbone=" << backbone_path << '\n';
  } else if (model.config.pretrain_epochs > 0) {
    auto r = pretrain_backbone(model, train, &eval, log);
    std::cout << "pretrain_loss=" << shortest(r.last_loss) << '\n'
              << "pretrain_eval_accuracy=" << shortest(r.eval_accuracy.value_or(0.0)) << '\n';
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Hierarchy mapper: synthetic data, training, evaluation and tree export"};
  app.require_subcommand(1);

  struct Command {
    CLI::App* app = nullptr;
    ConfigFlags flags;
  };
  std::map<std::string, Command> commands;
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.flags.attach(*c.app);
    return c;
  };

  std::string data_dir, out, metrics, backbone, checkpoint, split = "eval", format = "json";
  std::string leaves_list, levels_list, variants_list = "full,cosine";
  std::size_t index = 0;

  auto& gen = add("gen-data", "render the synthetic dataset to <out>/train.hmd and <out>/eval.hmd");
  gen.app->add_option("--out", out, "output directory")->required();

  auto& pre = add("pretrain", "train the backbone and its linear head");
  pre.app->add_option("--data", data_dir, "dataset directory (default: render from the config)");
  pre.app->add_option("--out", out, "checkpoint to write")->required();
  pre.app->add_option("--metrics", metrics, "CSV metrics log to append to");

  auto& train = add("train", "fine-tune the hierarchy mapper on a frozen (or trainable) backbone");
  train.app->add_option("--data", data_dir, "dataset directory (default: render from the config)");
  train.app->add_option("--backbone", backbone, "pretrained checkpoint (default: pretrain first)");
  train.app->add_option("--out", out, "checkpoint to write")->required();
  train.app->add_option("--metrics", metrics, "CSV metrics log to append to");

  auto& ev = add("eval", "evaluate a checkpoint");
  ev.app->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  ev.app->add_option("--data", data_dir, "dataset directory (default: render from the checkpoint config)");
  ev.app->add_option("--split", split, "train or eval")->check(CLI::IsMember({"train", "eval"}));

  auto& ex = add("export-tree", "write the hierarchy of one image as JSON or DOT");
  ex.app->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  ex.app->add_option("--data", data_dir, "dataset directory (default: render from the checkpoint config)");
  ex.app->add_option("--split", split, "train or eval")->check(CLI::IsMember({"train", "eval"}));
  ex.app->add_option("--index", index, "image index within the split");
  ex.app->add_option("--format", format, "json or dot");
  ex.app->add_option("--out", out, "output file")->required();

  auto& ab = add("ablate", "fine-tune one mapper per (N, L, variant) and tabulate the results");
  ab.app->add_option("--data", data_dir, "dataset directory (default: render from the config)");
  ab.app->add_option("--backbone", backbone, "pretrained checkpoint (default: pretrain first)");
  ab.app->add_option("--leaves-list", leaves_list, "comma-separated N values (default: --leaves)");
  ab.app->add_option("--levels-list", levels_list, "comma-separated L values (default: --levels)");
  ab.app->add_option("--variants", variants_list, "full, cosine, no-cont, no-kl, ce-only, deterministic");
  ab.app->add_option("--out", out, "CSV to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  for (const char* name : {"gen-data", "train"}) {
    const Command& c = commands.at(name);
    if (c.app->parsed() && !c.flags.given(*c.app, "seed")) throw ConfigError(std::string(name) + " requires --seed");
  }

  if (gen.app->parsed()) {
    const RunConfig c = gen.flags.resolve(*gen.app, "pretrain");
    fs::create_directories(out);
    for (const char* s : {"train", "eval"}) {
      const fs::path path = fs::path(out) / (std::string(s) + ".hmd");
      const Dataset d = load_split("", s, c);
      save_dataset(d, path.string());
      std::cout << path.string() << ": " << d.size() << " images\n";
    }
    return 0;
  }

  if (pre.app->parsed()) {
    const RunConfig c = pre.flags.resolve(*pre.app, "pretrain");
    const Dataset tr = load_split(data_dir, "train", c), evd = load_split(data_dir, "eval", c);
    auto log = open_log(metrics, c);
    Model model = Model::create(c);
    auto r = pretrain_backbone(model, tr, &evd, log.get());
    const double eval_acc = r.eval_accuracy.value_or(0.0);
    save_checkpoint(out, model,
                    {"pretrain", {{"loss", r.last_loss}, {"train_acc", r.train_accuracy}, {"eval_acc", eval_acc}}});
    std::cout << "loss=" << shortest(r.last_loss) << "\ntrain_accuracy=" << shortest(r.train_accuracy)
              << "\neval_accuracy=" << shortest(eval_acc) << "\ncheckpoint=" << out << '\n';
    return 0;
  }

  if (train.app->parsed()) {
    const RunConfig c = train.flags.resolve(*train.app, "finetune");
    const Dataset tr = load_split(data_dir, "train", c), evd = load_split(data_dir, "eval", c);
    auto log = open_log(metrics, c);
    Model model = Model::create(c);
    prepare_backbone(model, backbone, tr, evd, log.get());
    const auto eval_cache = compute_features(model, evd, c.batch_size);
    const EvalResult base = evaluate_baseline(model, eval_cache);
    FinetuneResult r = c.train_backbone ? finetune(model, tr, evd, log.get())
                                        : finetune(model, compute_features(model, tr, c.batch_size), eval_cache,
                                                   log.get());
    save_checkpoint(out, model,
                    {"finetune",
                     {{"loss", r.final_loss},
                      {"eval_acc", r.final_eval.accuracy},
                      {"baseline_acc", base.accuracy},
                      {"triple_score", r.final_eval.triple_score}}});
    std::cout << "baseline_accuracy=" << shortest(base.accuracy) << "\nsteps=" << r.steps
              << "\nfinal_loss=" << shortest(r.final_loss) << '\n';
    print_eval("eval_", r.final_eval);
    std::cout << "checkpoint=" << out << '\n';
    return 0;
  }

  if (ev.app->parsed()) {
    const Model model = load_checkpoint(checkpoint).model;
    const Dataset d = load_split(data_dir, split, model.config);
    const auto cache = compute_features(model, d, model.config.batch_size);
    std::cout << "baseline_accuracy=" << shortest(evaluate_baseline(model, cache).accuracy) << '\n';
    print_eval("", evaluate(model, cache));
    return 0;
  }

  if (ex.app->parsed()) {
    if (format != "json" && format != "dot") {
      throw ConfigError("unsupported tree export format '" + format + "' (expected json or dot)");
    }
    const Model model = load_checkpoint(checkpoint).model;
    const Dataset d = load_split(data_dir, split, model.config);
    if (index >= d.size()) {
      throw ConfigError("--index " + std::to_string(index) + " is out of range for " + std::to_string(d.size()) +
                        " images");
    }
    FeatureBundle features;
    {
      NoGradGuard no_grad;
      features = extract_features(d.image(index), model.backbone);
    }
    write_tree_export(export_tree(model, features), format, out);
    std::cout << out << '\n';
    return 0;
  }

  if (ab.app->parsed()) {
    const RunConfig c = ab.flags.resolve(*ab.app, "ablate");
    const auto leaves = leaves_list.empty() ? std::vector<std::size_t>{c.leaves} : size_list(leaves_list, "--leaves-list");
    const auto levels = levels_list.empty() ? std::vector<std::size_t>{c.levels} : size_list(levels_list, "--levels-list");
    std::vector<AblationVariant> variants;
    for (const auto& name : split_list(variants_list)) variants.push_back(ablation_variant(name));
    if (variants.empty()) throw ConfigError("--variants needs at least one value");

    const Dataset tr = load_split(data_dir, "train", c), evd = load_split(data_dir, "eval", c);
    Model pretrained = Model::create(c);
    prepare_backbone(pretrained, backbone, tr, evd, nullptr);
    const auto train_cache = compute_features(pretrained, tr, c.batch_size);
    const auto eval_cache = compute_features(pretrained, evd, c.batch_size);
    std::cout << "baseline_accuracy=" << shortest(evaluate_baseline(pretrained, eval_cache).accuracy) << '\n';
    auto rows = ablate(pretrained, train_cache, eval_cache, leaves, levels, variants, &std::cerr);
    write_ablation_csv(rows, out);
    for (const auto& r : rows) {
      std::cout << "N=" << r.leaves << " L=" << r.levels << " " << r.variant.name
                << " accuracy=" << shortest(r.accuracy) << " triple_score=" << shortest(r.triple_score) << '\n';
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TrainingDiverged& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NonFiniteError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const NumericDomainError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
