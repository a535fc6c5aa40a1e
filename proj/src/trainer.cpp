#include "protonc/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "protonc/errors.hpp"

namespace protonc {

using nlohmann::json;

// ---- config ----------------------------------------------------------------------

void TrainConfig::validate_fields() const {
  train_spec.validate();
  eval_spec.validate();
  if (episodes_per_epoch == 0 || eval_episodes_per_epoch == 0) {
    throw ContractError("config: episodes per epoch must be positive");
  }
  if (decay_every == 0) throw ContractError("config: decay_every must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ContractError("config: decay_factor must lie in (0, 1]");
  }
  if (!(base_lr > 0.0)) throw ContractError("config: base_lr must be positive");
}

namespace {

json spec_json(const EpisodeSpec& s) {
  return {{"ways", s.ways}, {"support_shots", s.support_shots}, {"query_shots", s.query_shots}};
}

EpisodeSpec spec_from(const json& j, EpisodeSpec base) {
  for (const auto& [key, value] : j.items()) {
    if (key == "ways") {
      base.ways = value.get<std::size_t>();
    } else if (key == "support_shots") {
      base.support_shots = value.get<std::size_t>();
    } else if (key == "query_shots") {
      base.query_shots = value.get<std::size_t>();
    } else {
      throw ContractError("config: unknown episode spec key \"" + key + "\"");
    }
  }
  return base;
}

}  // namespace

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["backbone"] = c.backbone;
  j["train_spec"] = spec_json(c.train_spec);
  j["eval_spec"] = spec_json(c.eval_spec);
  j["episodes_per_epoch"] = c.episodes_per_epoch;
  j["eval_episodes_per_epoch"] = c.eval_episodes_per_epoch;
  j["epochs"] = c.epochs;
  j["base_lr"] = c.base_lr;
  j["decay_every"] = c.decay_every;
  j["decay_factor"] = c.decay_factor;
  j["distance"] = to_string(c.distance);
  j["nc2_centering"] = to_string(c.nc2_centering);
  j["rcond"] = c.rcond;
  j["validate"] = c.validate;
  j["init_seed"] = c.init_seed;
  j["sampler_seed"] = c.sampler_seed;
  j["split_seed"] = c.split_seed;
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["dataset"] = c.dataset;
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text, TrainConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config: top level must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "backbone") c.backbone = v.get<std::string>();
      else if (key == "train_spec") c.train_spec = spec_from(v, c.train_spec);
      else if (key == "eval_spec") c.eval_spec = spec_from(v, c.eval_spec);
      else if (key == "episodes_per_epoch") c.episodes_per_epoch = v.get<std::size_t>();
      else if (key == "eval_episodes_per_epoch") c.eval_episodes_per_epoch = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "base_lr") c.base_lr = v.get<double>();
      else if (key == "decay_every") c.decay_every = v.get<std::size_t>();
      else if (key == "decay_factor") c.decay_factor = v.get<double>();
      else if (key == "distance") c.distance = parse_distance_mode(v.get<std::string>());
      else if (key == "nc2_centering") c.nc2_centering = parse_centering(v.get<std::string>());
      else if (key == "rcond") c.rcond = v.get<double>();
      else if (key == "validate") c.validate = v.get<bool>();
      else if (key == "init_seed") c.init_seed = v.get<std::uint64_t>();
      else if (key == "sampler_seed") c.sampler_seed = v.get<std::uint64_t>();
      else if (key == "split_seed") c.split_seed = v.get<std::uint64_t>();
      else if (key == "split") {
        c.split.train = v.value("train", c.split.train);
        c.split.val = v.value("val", c.split.val);
        c.split.test = v.value("test", c.split.test);
      } else if (key == "dataset") c.dataset = v.get<std::string>();
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else throw ContractError("config: unknown key \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

// ---- optimizer -----------------------------------------------------------------------

void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads,
               AdamState& state, double lr) {
  if (grads.size() != params.size()) {
    throw ContractError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: optimizer state belongs to a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel()) {
      throw ContractError("adam_step: missing gradient for parameter " + std::to_string(i) + " " +
                          shape_string(params[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto g = grads[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      values[k] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state, lr);
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  const auto decays = static_cast<double>(epoch / config.decay_every);
  return config.base_lr * std::pow(config.decay_factor, decays);
}

std::string to_string(RunMode mode) { return mode == RunMode::train ? "train" : "val"; }

// ---- epochs ----------------------------------------------------------------------------

namespace {

// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

std::uint64_t sampler_stream(std::uint64_t seed, RunMode mode) {
  return mode == RunMode::train ? seed : seed ^ 0x9e3779b97f4a7c15ULL;
}

}  // namespace

EpisodeFeatures embed_episode(Backbone& backbone, const Episode& episode, bool training) {
  const std::size_t ns = episode.support.dim(0);
  const std::size_t nq = episode.query.dim(0);
  NoGradGuard no_grad;
  Tensor emb = backbone.embed(concat({episode.support, episode.query}, 0), training);
  return {Matrix::from_tensor(slice_rows(emb, 0, ns)), Matrix::from_tensor(slice_rows(emb, ns, nq)),
          episode.support_labels, episode.query_labels};
}

EpochReport run_epoch(Backbone& backbone, AdamState* state, const Dataset& dataset,
                      const TrainConfig& config, std::size_t epoch, RunMode mode,
                      std::vector<EpisodeRecord>* episodes) {
  const bool training = mode == RunMode::train;
  if (training && state == nullptr) throw ContractError("run_epoch: train mode needs optimizer state");
  const EpisodeSpec& spec = training ? config.train_spec : config.eval_spec;
  const std::size_t count = training ? config.episodes_per_epoch : config.eval_episodes_per_epoch;
  const double lr = lr_schedule(epoch, config);
  const CollapseConfig collapse_config{config.nc2_centering, config.rcond};
  const std::uint64_t stream = sampler_stream(config.sampler_seed, mode);

  CompensatedSum loss_sum, err_sum, nc1s_sum, nc1q_sum, nc2s_sum, nc2q_sum;
  for (std::size_t e = 0; e < count; ++e) {
    auto rng = episode_rng(stream, epoch, e);
    const Episode ep = sample_episode(dataset, spec, rng);
    const std::size_t ns = ep.support.dim(0);
    const std::size_t nq = ep.query.dim(0);

    std::optional<NoGradGuard> no_grad;
    if (!training) no_grad.emplace();
    Tensor emb = backbone.embed(concat({ep.support, ep.query}, 0), training);
    Tensor support = slice_rows(emb, 0, ns);
    Tensor query = slice_rows(emb, ns, nq);
    const PrototypeSet protos = prototypes(support, ep.support_labels);
    const EpisodeLoss result =
        episode_loss(distance_matrix(query, protos, config.distance), ep.query_labels);
    const double loss = result.loss.item();
    if (!std::isfinite(loss)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", " +
                           to_string(mode) + " episode " + std::to_string(e));
    }
    const CollapseReport nc =
        episode_collapse(Matrix::from_tensor(support.detach()), ep.support_labels,
                         Matrix::from_tensor(query.detach()), ep.query_labels, collapse_config, e);

    if (training) {
      result.loss.backward();
      auto params = backbone.parameters();
      adam_step(params, *state, lr);
      backbone.zero_grad();
    }

    EpisodeRecord rec{epoch, mode, e, loss, result.error_rate, nc.nc1_support, nc.nc1_query,
                      nc.nc2_support, nc.nc2_query, lr};
    loss_sum.add(rec.loss);
    err_sum.add(rec.error);
    nc1s_sum.add(rec.nc1_support);
    nc1q_sum.add(rec.nc1_query);
    nc2s_sum.add(rec.nc2_support);
    nc2q_sum.add(rec.nc2_query);
    if (episodes) episodes->push_back(rec);
  }
  const double n = static_cast<double>(count);
  return EpochReport{epoch,
                     mode,
                     loss_sum.value() / n,
                     err_sum.value() / n,
                     nc1s_sum.value() / n,
                     nc1q_sum.value() / n,
                     nc2s_sum.value() / n,
                     nc2q_sum.value() / n,
                     lr};
}

// ---- CSV -------------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string epoch_csv_header() {
  return "epoch,split,loss,error,nc1_support,nc1_query,nc2_support,nc2_query,lr";
}

std::string episode_csv_header() {
  return "epoch,split,episode,loss,error,nc1_support,nc1_query,nc2_support,nc2_query,lr";
}

std::string to_csv_row(const EpochReport& r) {
  return std::to_string(r.epoch) + "," + to_string(r.split) + "," + fmt(r.loss) + "," +
         fmt(r.error) + "," + fmt(r.nc1_support) + "," + fmt(r.nc1_query) + "," +
         fmt(r.nc2_support) + "," + fmt(r.nc2_query) + "," + fmt(r.lr);
}

std::string to_csv_row(const EpisodeRecord& r) {
  return std::to_string(r.epoch) + "," + to_string(r.split) + "," + std::to_string(r.episode) +
         "," + fmt(r.loss) + "," + fmt(r.error) + "," + fmt(r.nc1_support) + "," +
         fmt(r.nc1_query) + "," + fmt(r.nc2_support) + "," + fmt(r.nc2_query) + "," + fmt(r.lr);
}

std::vector<EpochReport> read_epoch_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != epoch_csv_header()) {
    throw FormatError(path.string() + ": missing or unexpected CSV header");
  }
  std::vector<EpochReport> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 9 columns");
    }
    EpochReport r;
    try {
      r.epoch = std::stoul(cells[0]);
      if (cells[1] == "train") {
        r.split = RunMode::train;
      } else if (cells[1] == "val") {
        r.split = RunMode::eval;
      } else {
        throw FormatError("split");
      }
      r.loss = std::stod(cells[2]);
      r.error = std::stod(cells[3]);
      r.nc1_support = std::stod(cells[4]);
      r.nc1_query = std::stod(cells[5]);
      r.nc2_support = std::stod(cells[6]);
      r.nc2_query = std::stod(cells[7]);
      r.lr = std::stod(cells[8]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    rows.push_back(r);
  }
  return rows;
}

// ---- runs -------------------------------------------------------------------------------

namespace {

std::ofstream open_log(const std::filesystem::path& path, const std::string& header) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << header << '\n';
  out.flush();
  return out;
}

void check_stream(std::ostream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string epoch_tag(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04zu.pckp", epoch);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset* val,
                  const EpochCallback& on_epoch) {
  namespace fs = std::filesystem;
  config.validate_fields();
  const fs::path run_dir = config.output_dir;
  fs::create_directories(run_dir / "checkpoints");
  {
    std::ofstream cfg(run_dir / "config.json", std::ios::trunc);
    cfg << config_to_json(config);
    check_stream(cfg, run_dir / "config.json");
  }

  Backbone backbone(BackboneConfig::parse(config.backbone, train_set.spec), config.init_seed);
  AdamState state;
  const fs::path epochs_path = run_dir / "epochs.csv";
  const fs::path episodes_path = run_dir / "episodes.csv";
  std::ofstream epochs_log = open_log(epochs_path, epoch_csv_header());
  std::ofstream episodes_log = open_log(episodes_path, episode_csv_header());
  save_checkpoint(backbone, run_dir / "checkpoints" / "init.pckp");

  const bool do_val = config.validate && val != nullptr;
  TrainResult result;
  result.run_dir = run_dir;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<EpisodeRecord> records;
    std::vector<EpochReport> reports;
    reports.push_back(run_epoch(backbone, &state, train_set, config, epoch, RunMode::train, &records));
    if (do_val) {
      reports.push_back(run_epoch(backbone, nullptr, *val, config, epoch, RunMode::eval, &records));
    }
    for (const auto& rec : records) episodes_log << to_csv_row(rec) << '\n';
    for (const auto& rep : reports) {
      epochs_log << to_csv_row(rep) << '\n';
      result.history.push_back(rep);
      if (on_epoch) on_epoch(rep);
    }
    check_stream(episodes_log, episodes_path);
    check_stream(epochs_log, epochs_path);
    if ((epoch + 1) % config.decay_every == 0) {
      save_checkpoint(backbone, run_dir / "checkpoints" / epoch_tag(epoch + 1));
    }
  }
  save_checkpoint(backbone, run_dir / "checkpoints" / "final.pckp");
  return result;
}

std::vector<EpochReport> evaluate(Backbone& backbone, const Dataset& dataset,
                                  const TrainConfig& config, std::size_t epochs,
                                  const std::filesystem::path& out_dir) {
  config.validate_fields();
  std::vector<EpochReport> reports;
  std::vector<EpisodeRecord> records;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    reports.push_back(run_epoch(backbone, nullptr, dataset, config, epoch, RunMode::eval, &records));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto epochs_path = out_dir / "eval_epochs.csv";
    const auto episodes_path = out_dir / "eval_episodes.csv";
    std::ofstream e = open_log(epochs_path, epoch_csv_header());
    for (const auto& r : reports) e << to_csv_row(r) << '\n';
    check_stream(e, epochs_path);
    std::ofstream p = open_log(episodes_path, episode_csv_header());
    for (const auto& r : records) p << to_csv_row(r) << '\n';
    check_stream(p, episodes_path);
  }
  return reports;
}

}  // namespace protonc
