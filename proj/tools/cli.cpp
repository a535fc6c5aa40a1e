#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "protonc/collapse.hpp"
#include "protonc/errors.hpp"
#include "protonc/plot.hpp"
#include "protonc/trainer.hpp"

namespace protonc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised while resolving arguments; reported as a usage error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw FormatError("write failed for " + path.string());
}

struct TrainFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string backbone;
  std::string distance;
  std::string nc2;
  std::optional<std::size_t> epochs;
  std::optional<double> decay_factor;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "sets init, sampler and split seeds to seed, seed+1, seed+2");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--dataset", f.dataset, "dataset file (FSDS)");
  cmd->add_option("--backbone", f.backbone, "convnet4[:C] | resnet18 | mlp[:W1,W2,...]");
  cmd->add_option("--distance", f.distance, "squared | plain")
      ->check(CLI::IsMember({"squared", "plain"}));
  cmd->add_option("--nc2", f.nc2, "paper | centered")->check(CLI::IsMember({"paper", "centered"}));
  cmd->add_option("--epochs", f.epochs, "number of epochs");
  cmd->add_option("--decay-factor", f.decay_factor, "learning-rate decay factor in (0, 1]");
}

// Config file first, then flags on top.
TrainConfig resolve(const TrainFlags& f) {
  TrainConfig c;
  try {
    if (!f.config.empty()) c = config_from_json(read_text(f.config));
    if (f.seed) {
      c.init_seed = *f.seed;
      c.sampler_seed = *f.seed + 1;
      c.split_seed = *f.seed + 2;
    }
    if (!f.out.empty()) c.output_dir = f.out;
    if (!f.dataset.empty()) c.dataset = f.dataset;
    if (!f.backbone.empty()) {
      BackboneConfig::parse(f.backbone);
      c.backbone = f.backbone;
    }
    if (!f.distance.empty()) c.distance = parse_distance_mode(f.distance);
    if (!f.nc2.empty()) c.nc2_centering = parse_centering(f.nc2);
    if (f.epochs) c.epochs = *f.epochs;
    if (f.decay_factor) c.decay_factor = *f.decay_factor;
    BackboneConfig::parse(c.backbone);
    c.validate_fields();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (c.dataset.empty()) throw UsageError("no dataset given (--dataset or \"dataset\" in the config)");
  return c;
}

std::string summary_json(const std::vector<EpochReport>& history) {
  json j = json::array();
  for (const auto& r : history) {
    j.push_back({{"epoch", r.epoch},
                 {"split", to_string(r.split)},
                 {"loss", r.loss},
                 {"error", r.error},
                 {"nc1_support", r.nc1_support},
                 {"nc1_query", r.nc1_query},
                 {"nc2_support", r.nc2_support},
                 {"nc2_query", r.nc2_query}});
  }
  return j.dump();
}

int cmd_convert(const std::string& src, const std::string& dst, bool no_invert, bool rotate,
                std::size_t size, std::ostream& out, std::ostream& err) {
  ConvertOptions opt;
  opt.invert = !no_invert;
  opt.rotate = rotate;
  opt.size = size;
  const ConvertSummary s = convert_image_dir(src, dst, opt);
  for (const auto& w : s.warnings) err << "warning: " << w << '\n';
  const json resolved = {{"command", "convert"}, {"src", src},       {"dst", dst},
                         {"invert", opt.invert}, {"rotate", rotate}, {"size", size}};
  write_text(dst + ".json", resolved.dump(2) + "\n");
  out << json{{"classes", s.classes}, {"samples", s.samples}, {"warnings", s.warnings.size()}}.dump()
      << '\n';
  return ok;
}

int cmd_synth(const SynthParams& p, const std::string& dst, std::ostream& out) {
  const Dataset ds = synth_gaussian(p);
  if (fs::path(dst).has_parent_path()) fs::create_directories(fs::path(dst).parent_path());
  save_dataset(ds, dst);
  const json resolved = {{"command", "synth"},
                         {"classes", p.n_classes},
                         {"channels", p.spec.channels},
                         {"height", p.spec.height},
                         {"width", p.spec.width},
                         {"sigma", p.sigma},
                         {"separation", p.separation},
                         {"samples_per_class", p.samples_per_class},
                         {"seed", p.seed},
                         {"out", dst}};
  write_text(dst + ".json", resolved.dump(2) + "\n");
  out << json{{"classes", ds.num_classes()}, {"samples", ds.num_samples()}}.dump() << '\n';
  return ok;
}

int cmd_train(const TrainConfig& c, std::ostream& out) {
  const Dataset ds = load_dataset(c.dataset);
  const DatasetSplits splits = split_classes(ds, c.split, c.split_seed);
  const Dataset* val = splits.val.num_classes() > 0 ? &splits.val : nullptr;
  const TrainResult r = train(c, splits.train, val, [&out](const EpochReport& e) {
    out << "epoch " << e.epoch << " " << to_string(e.split) << " loss " << e.loss << " error "
        << e.error << " nc1 " << e.nc1_support << "/" << e.nc1_query << " nc2 " << e.nc2_support
        << "/" << e.nc2_query << '\n';
  });
  out << "run directory: " << r.run_dir.string() << '\n';
  return ok;
}

int cmd_eval(TrainConfig c, const std::string& checkpoint, const std::string& split,
             std::size_t epochs, const std::string& dump, std::ostream& out) {
  Backbone net = load_checkpoint(checkpoint);
  c.backbone = net.config().descriptor();
  const Dataset ds = load_dataset(c.dataset);
  const Dataset* target = &ds;
  DatasetSplits splits;
  if (split != "all") {
    splits = split_classes(ds, c.split, c.split_seed);
    target = split == "train" ? &splits.train : split == "val" ? &splits.val : &splits.test;
  }
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  json resolved = json::parse(config_to_json(c));
  resolved["command"] = "eval";
  resolved["checkpoint"] = checkpoint;
  resolved["eval_split"] = split;
  resolved["eval_epochs"] = epochs;
  write_text(dir / "config.json", resolved.dump(2) + "\n");
  const auto reports = evaluate(net, *target, c, epochs, dir);
  if (!dump.empty()) {
    auto rng = episode_rng(c.sampler_seed, 0, 0);
    const Episode ep = sample_episode(*target, c.eval_spec, rng);
    const EpisodeFeatures f = embed_episode(net, ep, false);
    save_feature_dump({c.eval_spec.ways, c.eval_spec.support_shots, f.support}, dump);
  }
  out << summary_json(reports) << '\n';
  return ok;
}

int cmd_nc(const std::string& file, double rcond, std::ostream& out) {
  const FeatureDump dump = load_feature_dump(file);
  const auto labels = dump.labels();
  const ClassStats st = class_statistics(dump.features, labels);
  const double effective = rcond < 0.0 ? default_rcond(dump.features.cols) : rcond;
  json j;
  j["file"] = file;
  j["num_classes"] = dump.num_classes;
  j["shots"] = dump.shots;
  j["dim"] = dump.features.cols;
  j["rcond"] = effective;
  j["nc1"] = nc1(st, effective);
  j["nc2"] = {{"paper", nc2(st.class_means, Nc2Centering::paper_literal, st.global_mean)},
              {"centered", nc2(st.class_means, Nc2Centering::centered, st.global_mean)}};
  j["sigma_b_zero"] = std::all_of(st.sigma_b.values.begin(), st.sigma_b.values.end(),
                                  [](double v) { return v == 0.0; });
  out << j.dump(2) << '\n';
  return ok;
}

int cmd_plot(const std::string& csv, const std::string& dir, std::ostream& out) {
  const auto rows = read_epoch_csv(csv);
  const auto paths = write_training_plots(rows, dir);
  write_text(fs::path(dir) / "plot.json",
             json{{"command", "plot"}, {"csv", csv}, {"out", dir}}.dump(2) + "\n");
  for (const auto& p : paths) out << p.string() << '\n';
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prototypical networks with neural-collapse metrics", "protonc"};
  app.require_subcommand(1);

  auto* convert = app.add_subcommand("convert", "PNG class directories to a dataset file");
  std::string conv_src, conv_dst;
  bool no_invert = false, rotate = false;
  std::size_t conv_size = 28;
  convert->add_option("src", conv_src, "directory of class subdirectories")->required();
  convert->add_option("dst", conv_dst, "output dataset file")->required();
  convert->add_flag("--no-invert", no_invert, "keep white = 1");
  convert->add_flag("--rotate", rotate, "add 90/180/270 degree rotations as new classes");
  convert->add_option("--size", conv_size, "output side length")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "write a synthetic Gaussian dataset");
  SynthParams sp;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output dataset file")->required();
  synth->add_option("--classes", sp.n_classes, "number of classes");
  synth->add_option("--channels", sp.spec.channels);
  synth->add_option("--height", sp.spec.height);
  synth->add_option("--width", sp.spec.width, "image width (flat vectors: height 1)");
  synth->add_option("--sigma", sp.sigma, "noise standard deviation");
  synth->add_option("--separation", sp.separation, "minimum distance between class means");
  synth->add_option("--samples", sp.samples_per_class, "samples per class");
  synth->add_option("--seed", sp.seed);

  auto* train_cmd = app.add_subcommand("train", "episodic training with per-episode metrics");
  TrainFlags tf;
  add_train_flags(train_cmd, tf);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on episodes");
  TrainFlags ef;
  std::string checkpoint, eval_split = "test", dump_path;
  std::size_t eval_epochs = 1;
  add_train_flags(eval_cmd, ef);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (PCKP)")->required();
  eval_cmd->add_option("--split", eval_split, "train | val | test | all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval_cmd->add_option("--eval-epochs", eval_epochs, "number of evaluation epochs")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--dump-features", dump_path, "write the first episode's support features (FEAT)");

  auto* nc_cmd = app.add_subcommand("nc", "NC1/NC2 of a feature dump, as JSON");
  std::string nc_file;
  double nc_rcond = -1.0;
  nc_cmd->add_option("file", nc_file, "feature dump (FEAT)")->required();
  nc_cmd->add_option("--rcond", nc_rcond, "relative pseudoinverse cutoff (default d * eps)");

  auto* plot_cmd = app.add_subcommand("plot", "SVG charts from an epochs.csv");
  std::string plot_csv, plot_out = ".";
  plot_cmd->add_option("csv", plot_csv, "per-epoch CSV")->required();
  plot_cmd->add_option("--out", plot_out, "output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return usage;
  }

  try {
    if (*convert) return cmd_convert(conv_src, conv_dst, no_invert, rotate, conv_size, out, err);
    if (*synth) return cmd_synth(sp, synth_out, out);
    if (*train_cmd) return cmd_train(resolve(tf), out);
    if (*eval_cmd) {
      TrainFlags f = ef;
      if (f.out.empty() && f.config.empty()) f.out = "eval";
      return cmd_eval(resolve(f), checkpoint, eval_split, eval_epochs, dump_path, out);
    }
    if (*nc_cmd) return cmd_nc(nc_file, nc_rcond, out);
    if (*plot_cmd) return cmd_plot(plot_csv, plot_out, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return usage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return numerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return data;
  }
  return usage;
}

}  // namespace protonc::cli
