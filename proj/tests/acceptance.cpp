// Acceptance run: one PASS / FAIL / SKIP line per criterion, exit status 1
// if anything failed. Artifacts (run logs, plots) go to argv[1], default
// $TMPDIR/protonc_acceptance.

#include <png.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "collapse_oracle.hpp"
#include "grad_suite.hpp"
#include "json.hpp"
#include "nc_instances.hpp"
#include "oracles.hpp"
#include "protonc/collapse.hpp"
#include "protonc/episodes.hpp"
#include "protonc/nn.hpp"
#include "protonc/plot.hpp"
#include "protonc/protonet.hpp"
#include "protonc/trainer.hpp"

using namespace protonc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

double max_rel(const Matrix& m, const Eigen::MatrixXd& e) {
  double worst = 0;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      worst = std::max(worst, rel(m(i, j), e(static_cast<long>(i), static_cast<long>(j))));
  return worst;
}

int run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = protonc::cli::run(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

// ---- 1 ------------------------------------------------------------------------------

Outcome parameter_counts() {
  const double conv = static_cast<double>(count_parameters(Backbone(BackboneConfig::parse("convnet4"))));
  const double res = static_cast<double>(count_parameters(Backbone(BackboneConfig::parse("resnet18"))));
  const double conv_dev = std::abs(conv - 111.2e3) / 111.2e3;
  const double res_dev = std::abs(res - 11.17e6) / 11.17e6;
  return verdict(conv_dev <= 0.02 && res_dev <= 0.02,
                 "convnet4 " + fmt(conv) + " (" + fmt(100 * conv_dev) + "% off 111.2k), resnet18 " +
                     fmt(res) + " (" + fmt(100 * res_dev) + "% off 11.17M)");
}

// ---- 2 ------------------------------------------------------------------------------

Outcome gradients() {
  std::vector<gradsuite::GradOp> ops = gradsuite::tensor_ops();
  for (auto& op : gradsuite::layer_ops()) ops.push_back(op);
  for (auto& op : gradsuite::backbone_ops()) ops.push_back(op);
  double worst = 0.0;
  std::string worst_name, failed;
  std::uint64_t seed = 1000;
  for (const auto& op : ops) {
    const double e = gradsuite::worst_error(op, 20, ++seed);
    if (e > worst) {
      worst = e;
      worst_name = op.name;
    }
    if (!(e <= 1e-5)) failed += " " + op.name + "=" + fmt(e);
  }
  return verdict(failed.empty(), std::to_string(ops.size()) + " ops x 20 trials, worst rel error " +
                                     fmt(worst) + " (" + worst_name + ")" +
                                     (failed.empty() ? "" : "; over 1e-5:" + failed));
}

// ---- 3 ------------------------------------------------------------------------------

Outcome metric_oracle() {
  std::mt19937_64 rng(31);
  double worst = 0.0;
  const int instances = 200;
  for (int t = 0; t < instances; ++t) {
    const auto in = oracle::random_instance(rng, t % 2 == 1);
    const long rank = static_cast<long>(std::min(in.n - 1, in.d));
    const auto o = oracle::nc_oracle(in.features.values, in.labels, in.n, in.d, rank);
    const ClassStats st = class_statistics(in.features, in.labels);
    for (std::size_t j = 0; j < in.d; ++j)
      worst = std::max(worst, rel(st.global_mean[j], o.global_mean(static_cast<long>(j))));
    worst = std::max({worst, max_rel(st.class_means, o.class_means), max_rel(st.sigma_w, o.sigma_w),
                      max_rel(st.sigma_b, o.sigma_b), rel(nc1(st), o.nc1),
                      rel(nc2(st.class_means, Nc2Centering::paper_literal, st.global_mean), o.nc2_paper),
                      rel(nc2(st.class_means, Nc2Centering::centered, st.global_mean), o.nc2_centered)});
  }
  // pinv on random PSD matrices of known rank
  double worst_pinv = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + rng() % 31;
    const std::size_t r = 1 + rng() % d;
    const auto b = oracle::random_values(d * r, rng);
    Matrix m(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0;
        for (std::size_t p = 0; p < r; ++p) s += b[i * r + p] * b[j * r + p];
        m(i, j) = m(j, i) = s;
      }
    Eigen::MatrixXd e(static_cast<long>(d), static_cast<long>(d));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) e(static_cast<long>(i), static_cast<long>(j)) = m(i, j);
    const auto expect = oracle::pinv_rank(e, static_cast<long>(r));
    worst_pinv = std::max(worst_pinv, max_rel(pinv_symmetric(m), expect) /
                                          std::max(1.0, expect.cwiseAbs().maxCoeff()));
  }
  const ClassStats hand = class_statistics(Matrix(4, 1, {-1, 1, 3, 5}), std::vector<std::size_t>{0, 0, 1, 1});
  const double hand_nc1 = nc1(hand);
  return verdict(worst <= 1e-10 && worst_pinv <= 1e-10 && hand_nc1 == 0.125,
                 std::to_string(instances) + " instances, worst rel diff " + fmt(worst) +
                     "; pinv 100 instances " + fmt(worst_pinv) + "; hand case NC1 = " + fmt(hand_nc1));
}

// ---- 4 ------------------------------------------------------------------------------

Outcome analytic_etf() {
  double worst_etf = 0.0;
  for (std::size_t n : {2u, 3u, 5u, 10u}) {
    for (std::size_t d : {n, n + 4}) {
      const Matrix h(n, d, oracle::etf_means(n, d));
      const std::vector<double> zero(d, 0.0);
      worst_etf = std::max({worst_etf, nc2(h, Nc2Centering::paper_literal, zero),
                            nc2(h, Nc2Centering::centered, zero)});
    }
  }
  const double ortho = nc2(Matrix::identity(2), Nc2Centering::paper_literal, std::vector<double>{0.5, 0.5});
  std::mt19937_64 rng(41);
  double worst_nc1 = 0.0;
  for (int t = 0; t < 50; ++t) {
    auto in = oracle::random_instance(rng);
    const auto labels = in.labels;
    for (std::size_t i = 0; i < in.features.rows; ++i)
      for (std::size_t j = 0; j < in.d; ++j) in.features(i, j) = in.features(labels[i] * in.k, j);
    worst_nc1 = std::max(worst_nc1, std::abs(nc1(class_statistics(in.features, labels))));
  }
  return verdict(worst_etf <= 1e-9 && std::abs(ortho - 0.7654) <= 1e-3 && worst_nc1 == 0.0,
                 "ETF nc2 worst " + fmt(worst_etf) + " (N in 2,3,5,10); orthonormal pair nc2 " +
                     fmt(ortho) + "; collapsed nc1 worst " + fmt(worst_nc1));
}

// ---- 5 ------------------------------------------------------------------------------

Outcome loss_analytics() {
  double uniform_err = 0.0;
  for (std::size_t n : {2u, 3u, 5u, 20u, 60u}) {
    const EpisodeLoss u = episode_loss(Tensor::full({4, n}, 3.5), std::vector<std::size_t>{0, 1, 1, 0});
    uniform_err = std::max(uniform_err, std::abs(u.loss.item() - std::log(static_cast<double>(n))));
  }
  const EpisodeLoss sep = episode_loss(Tensor({1, 2}, {0, 10}), std::vector<std::size_t>{0});
  const double sep_err = std::abs(sep.loss.item() - std::log1p(std::exp(-10.0)));

  std::mt19937_64 rng(51);
  double worst_dist = 0.0, worst_loss = 0.0;
  bool same_labels = true;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng() % 5, k = 1 + rng() % 4, m = n * 3, d = 2 + rng() % 8;
    const auto s = oracle::random_values(n * k * d, rng, -2, 2);
    const auto q = oracle::random_values(m * d, rng, -2, 2);
    const auto rot = oracle::random_orthogonal(d, rng);
    const auto shift = oracle::random_values(d, rng, -5, 5);
    std::vector<std::size_t> sl(n * k), ql(m);
    for (std::size_t i = 0; i < sl.size(); ++i) sl[i] = i / k;
    for (std::size_t i = 0; i < m; ++i) ql[i] = i / 3;
    for (auto mode : {DistanceMode::squared, DistanceMode::plain}) {
      const Tensor d0 = distance_matrix(Tensor({m, d}, q), prototypes(Tensor({n * k, d}, s), sl), mode);
      const Tensor d1 = distance_matrix(Tensor({m, d}, oracle::rigid(q, m, d, rot, shift)),
                                        prototypes(Tensor({n * k, d}, oracle::rigid(s, n * k, d, rot, shift)), sl),
                                        mode);
      worst_dist = std::max(worst_dist, oracle::max_abs_diff(d0.data(), d1.data()));
      worst_loss = std::max(worst_loss, std::abs(episode_loss(d0, ql).loss.item() - episode_loss(d1, ql).loss.item()));
      same_labels = same_labels && classify(d0) == classify(d1);
    }
  }
  return verdict(uniform_err <= 1e-12 && sep_err <= 1e-12 && worst_loss <= 1e-9 && worst_dist <= 1e-9 && same_labels,
                 "uniform |loss - ln N| " + fmt(uniform_err) + "; separated " + fmt(sep_err) +
                     "; rigid motions: loss " + fmt(worst_loss) + ", distances " + fmt(worst_dist) +
                     ", decisions " + (same_labels ? "identical" : "DIFFER"));
}

// ---- 6, 8, 9 ------------------------------------------------------------------------

// Criterion 6's run: 20 synthetic classes (16-dim flat, sigma 0.5, separation
// 4), split 10/5/5, MLP 64-64, 5-way 5-shot with 15 queries, 20 episodes per
// epoch, 30 epochs, plain Euclidean distance.
json desk_config(const fs::path& dataset, const std::string& backbone, const std::string& distance) {
  return {{"backbone", backbone},
          {"dataset", dataset.string()},
          {"distance", distance},
          {"epochs", 30},
          {"episodes_per_epoch", 20},
          {"eval_episodes_per_epoch", 20},
          {"train_spec", {{"ways", 5}, {"support_shots", 5}, {"query_shots", 15}}},
          {"eval_spec", {{"ways", 5}, {"support_shots", 5}, {"query_shots", 15}}},
          {"split", {{"train", 0.5}, {"val", 0.25}, {"test", 0.25}}},
          {"init_seed", 0},
          {"sampler_seed", 1},
          {"split_seed", 2}};
}

struct DeskRun {
  std::vector<EpochReport> train, val;
};

DeskRun run_desk(const json& config, const fs::path& out, const std::vector<std::string>& extra = {}) {
  fs::create_directories(out);
  std::ofstream(out / "input_config.json") << config.dump(2);
  std::vector<std::string> args{"train", "--config", (out / "input_config.json").string(), "--out",
                                (out / "run").string()};
  args.insert(args.end(), extra.begin(), extra.end());
  if (run_cli(args) != 0) throw std::runtime_error("training run in " + out.string() + " failed");
  DeskRun r;
  for (const auto& e : read_epoch_csv(out / "run" / "epochs.csv"))
    (e.split == RunMode::train ? r.train : r.val).push_back(e);
  if (r.train.empty() || r.val.empty()) throw std::runtime_error("empty epoch log in " + out.string());
  return r;
}

Outcome desk_learning(const DeskRun& r, const DeskRun& squared) {
  const auto& first = r.train.front();
  const auto& last = r.train.back();
  const double err = r.val.back().error;
  const double ratio = last.nc1_support / first.nc1_support;
  const double gap = std::abs(last.nc1_support - last.nc1_query);
  const double bound = 0.5 * std::max(last.nc1_support, last.nc1_query);
  const bool ok = err < 0.05 && ratio < 0.5 && gap <= bound;
  return verdict(ok, "plain distance: final val query error " + fmt(err) + " (< 0.05); NC1(S) " +
                         fmt(first.nc1_support) + " -> " + fmt(last.nc1_support) + ", ratio " + fmt(ratio) +
                         " (< 0.5); |NC1(S)-NC1(Q)| " + fmt(gap) + " <= " + fmt(bound) +
                         ". [squared distance, same setup: error " + fmt(squared.val.back().error) +
                         ", NC1 ratio " + fmt(squared.train.back().nc1_support / squared.train.front().nc1_support) +
                         "]");
}

Outcome non_collapse_floor(const DeskRun& r) {
  const double v = r.train.back().nc1_support;
  return verdict(v > 1e-3, "final NC1(support) " + fmt(v) + " (> 1e-3)");
}

Outcome determinism(const fs::path& a, const fs::path& b, const fs::path& work) {
  std::string detail;
  bool ok = true;
  const bool same_epochs = slurp(a / "run" / "epochs.csv") == slurp(b / "run" / "epochs.csv");
  const bool same_episodes = slurp(a / "run" / "episodes.csv") == slurp(b / "run" / "episodes.csv");
  ok = ok && same_epochs && same_episodes && !slurp(a / "run" / "epochs.csv").empty();
  detail += std::string("epoch CSVs ") + (same_epochs ? "identical" : "DIFFER") + ", episode CSVs " +
            (same_episodes ? "identical" : "DIFFER");

  // Conversion: PNG -> dataset -> reload -> save reproduces the bytes, and
  // pixels equal the inverted grey levels (28x28 sources need no resize).
  const fs::path src = work / "png";
  fs::remove_all(src);
  std::mt19937_64 rng(91);
  std::vector<std::vector<png_byte>> raw;
  for (int c = 0; c < 2; ++c) {
    fs::create_directories(src / ("c" + std::to_string(c)));
    for (int i = 0; i < 3; ++i) {
      std::vector<png_byte> px(28 * 28);
      for (auto& v : px) v = static_cast<png_byte>(rng() % 256);
      png_image image{};
      image.version = PNG_IMAGE_VERSION;
      image.width = 28;
      image.height = 28;
      image.format = PNG_FORMAT_GRAY;
      const auto path = src / ("c" + std::to_string(c)) / ("i" + std::to_string(i) + ".png");
      if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr))
        throw std::runtime_error("png write failed");
      raw.push_back(px);
    }
  }
  if (run_cli({"convert", src.string(), (work / "conv.fsds").string()}) != 0) throw std::runtime_error("convert failed");
  const Dataset conv = load_dataset(work / "conv.fsds");
  save_dataset(conv, work / "conv_again.fsds");
  const bool bytes_same = slurp(work / "conv.fsds") == slurp(work / "conv_again.fsds");
  double pixel_err = 0.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t p = 0; p < 28 * 28; ++p)
        pixel_err = std::max(pixel_err, std::abs(conv.classes[c].pixels[i * 784 + p] -
                                                 (1.0 - raw[c * 3 + i][p] / 255.0)));
  ok = ok && bytes_same && pixel_err <= 1e-12;
  detail += std::string("; conversion round trip ") + (bytes_same ? "bit exact" : "DIFFERS") +
            ", pixel error " + fmt(pixel_err);

  // FEAT: save -> load is bit exact and `nc` reports the library's values.
  FeatureDump dump{5, 4, Matrix(20, 9)};
  for (auto& v : dump.features.values) v = oracle::random_values(1, rng, -3, 3)[0];
  save_feature_dump(dump, work / "f.feat");
  const FeatureDump back = load_feature_dump(work / "f.feat");
  const bool feat_same = back.features.values == dump.features.values && back.num_classes == 5 && back.shots == 4;
  std::ostringstream out, err;
  const int code = protonc::cli::run({"nc", (work / "f.feat").string()}, out, err);
  const ClassStats st = class_statistics(dump.features, dump.labels());
  const json j = code == 0 ? json::parse(out.str()) : json{};
  const bool nc_same = code == 0 && j["nc1"].get<double>() == nc1(st) &&
                       j["nc2"]["paper"].get<double>() ==
                           nc2(st.class_means, Nc2Centering::paper_literal, st.global_mean) &&
                       j["nc2"]["centered"].get<double>() ==
                           nc2(st.class_means, Nc2Centering::centered, st.global_mean);
  ok = ok && feat_same && nc_same;
  detail += std::string("; FEAT round trip ") + (feat_same ? "bit exact" : "DIFFERS") + ", nc output " +
            (nc_same ? "equals library" : "DIFFERS");
  return verdict(ok, detail);
}

// ---- 7 ------------------------------------------------------------------------------

Outcome overparameterization(const fs::path& dataset, const fs::path& work) {
  const auto median3 = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
  };
  std::vector<double> small, large;
  for (int seed = 0; seed < 3; ++seed) {
    const std::vector<std::string> seed_flag{"--seed", std::to_string(seed)};
    small.push_back(run_desk(desk_config(dataset, "mlp:32", "plain"), work / ("small_" + std::to_string(seed)), seed_flag)
                        .train.back()
                        .nc1_support);
    large.push_back(run_desk(desk_config(dataset, "mlp:256,256", "plain"), work / ("large_" + std::to_string(seed)), seed_flag)
                        .train.back()
                        .nc1_support);
  }
  const double ms = median3(small), ml = median3(large);
  return verdict(ml <= ms, "median final NC1(support): mlp:256,256 " + fmt(ml) + " [" + fmt(large[0]) + ", " +
                               fmt(large[1]) + ", " + fmt(large[2]) + "] vs mlp:32 " + fmt(ms) + " [" +
                               fmt(small[0]) + ", " + fmt(small[1]) + ", " + fmt(small[2]) + "]");
}

// ---- 10 -----------------------------------------------------------------------------

// PROTONC_OMNIGLOT names a dataset file produced by `protonc convert` on the
// Omniglot background set (optionally with --rotate).
Outcome omniglot(const fs::path& work) {
  const char* path = std::getenv("PROTONC_OMNIGLOT");
  if (path == nullptr || *path == '\0') {
    return {Status::skip, "PROTONC_OMNIGLOT not set (no Omniglot data or network in this environment)"};
  }
  Dataset full = load_dataset(path);
  if (full.num_classes() < 200) return verdict(false, "dataset has only " + std::to_string(full.num_classes()) + " classes");
  full.classes.resize(200);
  const fs::path subset = work / "omniglot200.fsds";
  save_dataset(full, subset);
  json c = {{"backbone", "convnet4"},
            {"dataset", subset.string()},
            {"epochs", 20},
            {"episodes_per_epoch", 100},
            {"eval_episodes_per_epoch", 100},
            {"train_spec", {{"ways", 20}, {"support_shots", 5}, {"query_shots", 5}}},
            {"eval_spec", {{"ways", 20}, {"support_shots", 5}, {"query_shots", 5}}},
            {"split", {{"train", 0.7}, {"val", 0.15}, {"test", 0.15}}}};
  const DeskRun r = run_desk(c, work / "omniglot");
  const auto& f = r.train.front();
  const auto& l = r.train.back();
  const bool ok = r.val.back().error < 0.15 && l.nc1_support < f.nc1_support && l.nc2_support < f.nc2_support;
  return verdict(ok, "val error " + fmt(r.val.back().error) + "; NC1(S) " + fmt(f.nc1_support) + " -> " +
                         fmt(l.nc1_support) + "; NC2(S) " + fmt(f.nc2_support) + " -> " + fmt(l.nc2_support));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "protonc_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  int failures = 0;
  const auto report = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    if (o.status == Status::fail) ++failures;
    std::cout << tag << "  " << id << ". " << name << ": " << o.detail << " [" << fmt(secs) << " s]"
              << std::endl;
  };

  report(1, "parameter counts", parameter_counts);
  report(2, "gradient correctness", gradients);
  report(3, "metric oracle equivalence", metric_oracle);
  report(4, "analytic ETF cases", analytic_etf);
  report(5, "loss analytics", loss_analytics);

  // Shared desk-scale data: default synthetic parameters, seed 0.
  const fs::path dataset = work / "synth.fsds";
  const bool have_data = run_cli({"synth", "--out", dataset.string(), "--seed", "0"}) == 0;
  DeskRun desk, desk_squared;
  std::string desk_error;
  const auto desk_start = std::chrono::steady_clock::now();
  if (have_data) {
    try {
      desk = run_desk(desk_config(dataset, "mlp:64,64", "plain"), work / "desk_a");
      desk_squared = run_desk(desk_config(dataset, "mlp:64,64", "squared"), work / "desk_squared");
      write_training_plots(read_epoch_csv(work / "desk_a" / "run" / "epochs.csv"), work / "desk_a" / "plots");
    } catch (const std::exception& e) {
      desk_error = e.what();
    }
  } else {
    desk_error = "synthetic dataset could not be written";
  }
  const double desk_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - desk_start).count();
  const auto needs_desk = [&](std::function<Outcome()> f) {
    return [&, f] { return desk_error.empty() ? f() : Outcome{Status::fail, desk_error}; };
  };
  report(6, "desk-scale learning and collapse trend", needs_desk([&] {
           Outcome o = desk_learning(desk, desk_squared);
           o.detail += " (both training runs: " + fmt(desk_secs) + " s)";
           return o;
         }));
  report(7, "overparameterization trend", needs_desk([&] { return overparameterization(dataset, work / "width"); }));
  report(8, "non-collapse floor", needs_desk([&] { return non_collapse_floor(desk); }));
  report(9, "determinism and format round trips", needs_desk([&] {
           run_desk(desk_config(dataset, "mlp:64,64", "plain"), work / "desk_b");
           return determinism(work / "desk_a", work / "desk_b", work);
         }));
  report(10, "reduced-scale Omniglot smoke", [&] { return omniglot(work); });

  std::cout << (failures == 0 ? "all criteria passed or skipped" : std::to_string(failures) + " criteria failed")
            << " (artifacts in " << work.string() << ")" << std::endl;
  return failures == 0 ? 0 : 1;
}
