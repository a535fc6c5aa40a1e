#include "protonc/episodes.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "protonc/binary_io.hpp"
#include "protonc/errors.hpp"

namespace protonc {

std::size_t Dataset::num_samples() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.count;
  return n;
}

std::span<const double> Dataset::sample(std::size_t cls, std::size_t index) const {
  const std::size_t sz = spec.size();
  return std::span<const double>(classes.at(cls).pixels).subspan(index * sz, sz);
}

void EpisodeSpec::validate() const {
  if (ways < 2) throw ContractError("episode spec: need at least 2 ways, got " + std::to_string(ways));
  if (support_shots < 1 || query_shots < 1) {
    throw ContractError("episode spec: support and query shots must be >= 1");
  }
}

std::mt19937_64 episode_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t episode) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                    static_cast<std::uint32_t>(episode), static_cast<std::uint32_t>(episode >> 32)};
  return std::mt19937_64(seq);
}

namespace {

// First `k` entries of a uniformly random permutation of 0..n-1.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k,
                                                  std::mt19937_64& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  if (dataset.num_classes() < spec.ways) {
    throw ContractError("sample_episode: " + std::to_string(spec.ways) + "-way episode needs " +
                        std::to_string(spec.ways) + " classes, dataset has " +
                        std::to_string(dataset.num_classes()) + " (short by " +
                        std::to_string(spec.ways - dataset.num_classes()) + ")");
  }
  const std::size_t per_class = spec.support_shots + spec.query_shots;
  for (std::size_t c = 0; c < dataset.num_classes(); ++c) {
    if (dataset.classes[c].count < per_class) {
      throw ContractError("sample_episode: class " + std::to_string(c) + " (" +
                          dataset.classes[c].name + ") has " +
                          std::to_string(dataset.classes[c].count) + " samples, episode needs " +
                          std::to_string(per_class) + " (short by " +
                          std::to_string(per_class - dataset.classes[c].count) + ")");
    }
  }

  const ImageSpec& is = dataset.spec;
  const std::size_t sz = is.size();
  Episode ep;
  ep.class_ids = draw_without_replacement(dataset.num_classes(), spec.ways, rng);
  std::vector<double> support(spec.ways * spec.support_shots * sz);
  std::vector<double> query(spec.ways * spec.query_shots * sz);
  for (std::size_t local = 0; local < spec.ways; ++local) {
    const std::size_t cls = ep.class_ids[local];
    const auto picks = draw_without_replacement(dataset.classes[cls].count, per_class, rng);
    for (std::size_t j = 0; j < per_class; ++j) {
      const auto src = dataset.sample(cls, picks[j]);
      if (j < spec.support_shots) {
        const std::size_t row = local * spec.support_shots + j;
        std::copy(src.begin(), src.end(), support.begin() + static_cast<std::ptrdiff_t>(row * sz));
        ep.support_labels.push_back(local);
        ep.support_refs.push_back({cls, picks[j]});
      } else {
        const std::size_t row = local * spec.query_shots + (j - spec.support_shots);
        std::copy(src.begin(), src.end(), query.begin() + static_cast<std::ptrdiff_t>(row * sz));
        ep.query_labels.push_back(local);
        ep.query_refs.push_back({cls, picks[j]});
      }
    }
  }
  ep.support = Tensor({spec.ways * spec.support_shots, is.channels, is.height, is.width},
                      std::move(support));
  ep.query =
      Tensor({spec.ways * spec.query_shots, is.channels, is.height, is.width}, std::move(query));
  return ep;
}

// ---- synthetic data ---------------------------------------------------------------

std::vector<std::vector<double>> synth_class_means(const SynthParams& p) {
  if (p.n_classes < 2) throw ContractError("synth_gaussian: need at least 2 classes");
  if (p.sigma < 0.0) throw ContractError("synth_gaussian: sigma must be >= 0");
  const std::size_t dim = p.spec.size();
  if (dim == 0) throw ContractError("synth_gaussian: empty image spec");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Coordinate scale puts the typical pairwise distance at 1.5x separation;
  // rejection then enforces the minimum.
  double coord_scale = 1.5 * p.separation / std::sqrt(2.0 * static_cast<double>(dim));
  std::vector<std::vector<double>> means;
  std::size_t failures = 0;
  while (means.size() < p.n_classes) {
    std::vector<double> mu(dim);
    for (auto& v : mu) v = coord_scale * normal(rng);
    const bool ok = std::all_of(means.begin(), means.end(), [&](const std::vector<double>& other) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d2 += (mu[i] - other[i]) * (mu[i] - other[i]);
      return std::sqrt(d2) >= p.separation;
    });
    if (ok) {
      means.push_back(std::move(mu));
    } else if (++failures % 1000 == 0) {
      coord_scale *= 1.05;
    }
  }
  return means;
}

Dataset synth_gaussian(const SynthParams& p) {
  const auto means = synth_class_means(p);
  const std::size_t dim = p.spec.size();
  Dataset ds;
  ds.spec = p.spec;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t n = 0; n < p.n_classes; ++n) {
    std::mt19937_64 rng = episode_rng(p.seed, 0x5eed, n);
    ClassSamples cs;
    cs.name = "class_" + std::to_string(n);
    cs.count = p.samples_per_class;
    cs.pixels.resize(cs.count * dim);
    for (std::size_t s = 0; s < cs.count; ++s)
      for (std::size_t i = 0; i < dim; ++i)
        cs.pixels[s * dim + i] = means[n][i] + p.sigma * normal(rng);
    ds.classes.push_back(std::move(cs));
  }
  return ds;
}

// ---- splits -------------------------------------------------------------------------

DatasetSplits split_classes(const Dataset& dataset, const SplitFractions& f, std::uint64_t seed) {
  if (f.train < 0.0 || f.val < 0.0 || f.test < 0.0 ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ContractError("split_classes: fractions must be non-negative and sum to 1");
  }
  const std::size_t total = dataset.num_classes();
  const auto portion = [total](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(total) + 1e-9));
  };
  const std::size_t n_val = portion(f.val);
  const std::size_t n_test = portion(f.test);
  if (n_val + n_test > total) throw ContractError("split_classes: fractions exceed class count");
  const std::size_t n_train = total - n_val - n_test;
  const auto check = [](double frac, std::size_t n, const char* name) {
    if (frac > 0.0 && n == 0) {
      throw ContractError(std::string("split_classes: ") + name + " split would receive no classes");
    }
  };
  check(f.train, n_train, "train");
  check(f.val, n_val, "val");
  check(f.test, n_test, "test");

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < total; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(order[i], order[pick(rng)]);
  }

  DatasetSplits out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) d->spec = dataset.spec;
  for (std::size_t i = 0; i < total; ++i) {
    Dataset& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.classes.push_back(dataset.classes[order[i]]);
  }
  return out;
}

// ---- FSDS file format ----------------------------------------------------------------

namespace {
constexpr std::uint32_t kDatasetVersion = 1;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  binary::write_magic(out, "FSDS");
  binary::write_u32(out, kDatasetVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(dataset.num_classes()));
  binary::write_u32(out, static_cast<std::uint32_t>(dataset.spec.channels));
  binary::write_u32(out, static_cast<std::uint32_t>(dataset.spec.height));
  binary::write_u32(out, static_cast<std::uint32_t>(dataset.spec.width));
  for (const auto& c : dataset.classes) {
    binary::write_string(out, c.name);
    binary::write_u32(out, static_cast<std::uint32_t>(c.count));
    binary::write_f64s(out, c.pixels);
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open dataset " + path.string());
  binary::Reader in(file, "dataset " + path.string());
  in.expect_magic("FSDS");
  const auto version = in.u32();
  if (version != kDatasetVersion) {
    throw FormatError(in.what() + ": unsupported version " + std::to_string(version));
  }
  Dataset ds;
  const auto n_classes = in.u32();
  ds.spec.channels = in.u32();
  ds.spec.height = in.u32();
  ds.spec.width = in.u32();
  if (ds.spec.size() == 0) throw FormatError(in.what() + ": empty image spec");
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    ClassSamples cs;
    cs.name = in.string();
    cs.count = in.u32();
    cs.pixels.resize(cs.count * ds.spec.size());
    in.f64s(cs.pixels);
    ds.classes.push_back(std::move(cs));
  }
  in.expect_end();
  return ds;
}

// ---- PNG conversion -----------------------------------------------------------------

std::vector<double> area_resize(std::span<const double> src, std::size_t src_h, std::size_t src_w,
                                std::size_t dst_h, std::size_t dst_w) {
  if (src.size() != src_h * src_w || dst_h == 0 || dst_w == 0) {
    throw DimensionError("area_resize: bad extents");
  }
  // weights[o][s] = overlap of output cell o with source cell s, in source units.
  const auto axis_weights = [](std::size_t n_src, std::size_t n_dst) {
    std::vector<std::vector<std::pair<std::size_t, double>>> w(n_dst);
    const double ratio = static_cast<double>(n_src) / static_cast<double>(n_dst);
    for (std::size_t o = 0; o < n_dst; ++o) {
      const double lo = static_cast<double>(o) * ratio;
      const double hi = static_cast<double>(o + 1) * ratio;
      for (auto s = static_cast<std::size_t>(std::floor(lo)); s < n_src && static_cast<double>(s) < hi;
           ++s) {
        const double overlap =
            std::min(hi, static_cast<double>(s + 1)) - std::max(lo, static_cast<double>(s));
        if (overlap > 0.0) w[o].emplace_back(s, overlap);
      }
    }
    return w;
  };
  const auto wy = axis_weights(src_h, dst_h);
  const auto wx = axis_weights(src_w, dst_w);
  // Normalising by the summed weights keeps constant images exactly constant.
  std::vector<double> out(dst_h * dst_w, 0.0);
  for (std::size_t oy = 0; oy < dst_h; ++oy)
    for (std::size_t ox = 0; ox < dst_w; ++ox) {
      double acc = 0.0;
      double total = 0.0;
      for (const auto& [sy, fy] : wy[oy])
        for (const auto& [sx, fx] : wx[ox]) {
          const double w = fy * fx;
          acc += w * src[sy * src_w + sx];
          total += w;
        }
      out[oy * dst_w + ox] = acc / total;
    }
  return out;
}

namespace {

bool read_gray_png(const std::filesystem::path& path, std::vector<double>& pixels,
                   std::size_t& height, std::size_t& width, std::string& error) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    error = image.message;
    return false;
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    error = image.message;
    png_image_free(&image);
    return false;
  }
  height = image.height;
  width = image.width;
  pixels.resize(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) pixels[i] = static_cast<double>(buffer[i]) / 255.0;
  return true;
}

std::vector<double> rotate90(std::span<const double> img, std::size_t n) {
  // counter-clockwise quarter turn of an n x n image
  std::vector<double> out(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) out[(n - 1 - x) * n + y] = img[y * n + x];
  return out;
}

bool is_png(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

}  // namespace

ConvertSummary convert_image_dir(const std::filesystem::path& src_dir,
                                 const std::filesystem::path& dst_file,
                                 const ConvertOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(src_dir)) throw FormatError("not a directory: " + src_dir.string());
  if (options.size == 0) throw ContractError("convert: target size must be positive");

  // Leaf directories are classes; their files are samples.
  std::map<std::string, std::vector<fs::path>> class_files;
  for (const auto& entry : fs::recursive_directory_iterator(src_dir)) {
    if (!entry.is_directory()) continue;
    bool has_subdir = false;
    std::vector<fs::path> files;
    for (const auto& child : fs::directory_iterator(entry.path())) {
      if (child.is_directory()) {
        has_subdir = true;
      } else if (is_png(child.path())) {
        files.push_back(child.path());
      }
    }
    if (has_subdir && files.empty()) continue;
    std::sort(files.begin(), files.end());
    class_files[fs::relative(entry.path(), src_dir).generic_string()] = std::move(files);
  }
  if (class_files.empty()) throw FormatError("no class directories under " + src_dir.string());

  const std::size_t n = options.size;
  ConvertSummary summary;
  Dataset ds;
  ds.spec = ImageSpec{1, n, n};
  for (const auto& [name, files] : class_files) {
    if (files.empty()) throw FormatError("empty class directory: " + (src_dir / name).string());
    std::vector<std::vector<double>> images;
    for (const auto& file : files) {
      std::vector<double> raw;
      std::size_t h = 0;
      std::size_t w = 0;
      std::string error;
      if (!read_gray_png(file, raw, h, w, error)) {
        summary.warnings.push_back("skipped " + file.string() + ": " + error);
        continue;
      }
      auto img = area_resize(raw, h, w, n, n);
      if (options.invert) {
        for (auto& v : img) v = 1.0 - v;
      }
      images.push_back(std::move(img));
    }
    if (images.empty()) {
      throw FormatError("class directory has no readable images: " + (src_dir / name).string());
    }
    const int turns = options.rotate ? 4 : 1;
    for (int t = 0; t < turns; ++t) {
      ClassSamples cs;
      cs.name = t == 0 ? name : name + "/rot" + std::to_string(90 * t);
      for (auto& img : images) {
        cs.pixels.insert(cs.pixels.end(), img.begin(), img.end());
        ++cs.count;
        if (options.rotate) img = rotate90(img, n);
      }
      summary.samples += cs.count;
      ds.classes.push_back(std::move(cs));
    }
  }
  summary.classes = ds.num_classes();
  save_dataset(ds, dst_file);
  return summary;
}

}  // namespace protonc
