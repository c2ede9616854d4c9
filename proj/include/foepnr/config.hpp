#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/foe.hpp"
#include "foepnr/io.hpp"
#include "foepnr/noise.hpp"
#include "foepnr/trainer.hpp"

namespace foepnr {

// How training samples and the initial model are built from a corpus.
struct TrainRecipe {
  int num_samples = 20;
  int crop_size = 64;
  double peak = 40.0;
  std::uint64_t seed = 0;
  int num_filters = 24;
  int filter_size = 5;
  double init_norm = 0.1;
  double init_weight = 1.0;
  std::string basis = "dct";
  BoundaryRule boundary = BoundaryRule::symmetric;

  void validate() const {
    require(num_samples >= 1, "recipe: num_samples must be >= 1");
    require(crop_size >= 3, "recipe: crop_size must be >= 3");
    require(peak > 0.0, "recipe: peak must be positive");
    require(filter_size >= 3 && filter_size % 2 == 1, "recipe: filter_size must be odd and >= 3");
    require(crop_size >= filter_size, "recipe: crop_size must be >= filter_size");
    require(num_filters >= 1 && num_filters <= filter_size * filter_size - 1,
            "recipe: num_filters must lie in [1, filter_size^2 - 1]");
    require(init_norm > 0.0 && init_weight > 0.0, "recipe: init_norm and init_weight must be positive");
  }
};

// The paper-scale recipe: 200 crops of 128x128 at peak 40, 48 filters 7x7.
inline TrainRecipe paper_scale_recipe() {
  TrainRecipe r;
  r.num_samples = 200;
  r.crop_size = 128;
  r.num_filters = 48;
  r.filter_size = 7;
  return r;
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw DataError("config: '" + key + "' expects a number, got '" + v + "'");
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw DataError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw DataError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline void apply_solver_key(SolverConfig& s, const std::string& key, const std::string& v) {
  if (key == "gamma") s.gamma = parse_double(key, v);
  else if (key == "lipschitz_init") s.lipschitz_init = parse_double(key, v);
  else if (key == "backtrack_factor") s.backtrack_factor = parse_double(key, v);
  else if (key == "lipschitz_relax") s.lipschitz_relax = parse_double(key, v);
  else if (key == "step_scale") s.step_scale = parse_double(key, v);
  else if (key == "max_iters") s.max_iters = static_cast<int>(parse_int(key, v));
  else if (key == "rel_tol") s.rel_tol = parse_double(key, v);
  else if (key == "max_backtracks") s.max_backtracks = static_cast<int>(parse_int(key, v));
  else throw DataError("config: unknown solver key '" + key + "'");
}

}  // namespace detail

// Applies key=value pairs. Solver fields of the lower-level problem use the
// prefix "lower_solver.", CG fields "hessian_cg.".
inline void apply_train_config(const io::KeyValues& kv, TrainRecipe& recipe, TrainConfig& cfg) {
  using namespace detail;
  for (const auto& [key, v] : kv) {
    if (key.rfind("lower_solver.", 0) == 0) {
      apply_solver_key(cfg.lower_solver, key.substr(13), v);
    } else if (key == "hessian_cg.tol") {
      cfg.hessian_cg.tol = parse_double(key, v);
    } else if (key == "hessian_cg.max_iters") {
      cfg.hessian_cg.max_iters = static_cast<int>(parse_int(key, v));
    } else if (key == "objective") {
      try {
        cfg.objective = objective_from_string(v);
      } catch (const InvalidInput& e) {
        throw DataError(std::string("config: ") + e.what());
      }
    } else if (key == "lbfgs_memory") {
      cfg.lbfgs_memory = static_cast<int>(parse_int(key, v));
    } else if (key == "max_outer_iters") {
      cfg.max_outer_iters = static_cast<int>(parse_int(key, v));
    } else if (key == "rel_loss_tol") {
      cfg.rel_loss_tol = parse_double(key, v);
    } else if (key == "data_lambda") {
      cfg.data_lambda = parse_double(key, v);
    } else if (key == "zero_offset_c") {
      cfg.zero_offset_c = parse_double(key, v);
    } else if (key == "stationarity_tol") {
      cfg.stationarity_tol = parse_double(key, v);
    } else if (key == "initial_step") {
      cfg.initial_step = parse_double(key, v);
    } else if (key == "armijo_c1") {
      cfg.armijo_c1 = parse_double(key, v);
    } else if (key == "max_line_search") {
      cfg.max_line_search = static_cast<int>(parse_int(key, v));
    } else if (key == "warm_start") {
      cfg.warm_start = parse_bool(key, v);
    } else if (key == "threads") {
      cfg.threads = static_cast<int>(parse_int(key, v));
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = static_cast<int>(parse_int(key, v));
    } else if (key == "checkpoint_path") {
      cfg.checkpoint_path = v;
    } else if (key == "num_samples") {
      recipe.num_samples = static_cast<int>(parse_int(key, v));
    } else if (key == "crop_size") {
      recipe.crop_size = static_cast<int>(parse_int(key, v));
    } else if (key == "peak") {
      recipe.peak = parse_double(key, v);
    } else if (key == "seed") {
      const long long s = parse_int(key, v);
      if (s < 0) throw DataError("config: seed must be non-negative");
      recipe.seed = static_cast<std::uint64_t>(s);
    } else if (key == "num_filters") {
      recipe.num_filters = static_cast<int>(parse_int(key, v));
    } else if (key == "filter_size") {
      recipe.filter_size = static_cast<int>(parse_int(key, v));
    } else if (key == "init_norm") {
      recipe.init_norm = parse_double(key, v);
    } else if (key == "init_weight") {
      recipe.init_weight = parse_double(key, v);
    } else if (key == "basis") {
      recipe.basis = v;
    } else if (key == "boundary") {
      try {
        recipe.boundary = boundary_from_string(v);
      } catch (const InvalidInput& e) {
        throw DataError(std::string("config: ") + e.what());
      }
    } else {
      throw DataError("config: unknown key '" + key + "'");
    }
  }
  try {
    recipe.validate();
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

// Every readable .pgm/.png/.f32 under dir, sorted by path.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = io::detail::lower_extension(e.path().string());
    if (ext == ".pgm" || ext == ".png" || ext == ".f32" || ext == ".pnm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
  require(x0 >= 0 && y0 >= 0 && x0 + w <= img.width() && y0 + h <= img.height(), "crop: window outside the image");
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
  return out;
}

// Sample s takes image s mod n, a pseudo-random crop position, is scaled to
// the recipe peak and corrupted with noise seeded by (seed, s).
inline std::vector<TrainingSample> build_training_samples(const std::vector<Image>& corpus, const TrainRecipe& recipe) {
  require(!corpus.empty(), "train: empty corpus");
  recipe.validate();
  std::vector<TrainingSample> out;
  out.reserve(recipe.num_samples);
  int attempts = 0;
  for (int s = 0; static_cast<int>(out.size()) < recipe.num_samples; ++s) {
    require(++attempts <= 100 * recipe.num_samples, "train: could not find non-blank crops in the corpus");
    const Image& img = corpus[static_cast<std::size_t>(s) % corpus.size()];
    require(img.width() >= recipe.crop_size && img.height() >= recipe.crop_size,
            "train: corpus image smaller than the crop size");
    PixelStream rng(recipe.seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(s));
    const int x0 = static_cast<int>(rng.uniform() * (img.width() - recipe.crop_size + 1));
    const int y0 = static_cast<int>(rng.uniform() * (img.height() - recipe.crop_size + 1));
    Image c = crop(img, x0, y0, recipe.crop_size, recipe.crop_size);
    if (!(max_value(c) > 0.0)) continue;
    const std::uint64_t noise_seed = recipe.seed * 1000003ULL + static_cast<std::uint64_t>(s);
    out.push_back(make_training_sample(scale_to_peak(c, recipe.peak), noise_seed));
  }
  return out;
}

inline FoEModel initial_model_for(const TrainRecipe& recipe, Objective objective) {
  FoEModel m = make_initial_model(recipe.filter_size, recipe.num_filters, domain_for(objective), recipe.init_norm,
                                  recipe.init_weight, recipe.boundary);
  if (recipe.basis != m.basis_id) {
    m.basis_id = recipe.basis;
    m.basis = make_basis(recipe.basis, recipe.filter_size);
  }
  return m;
}

}  // namespace foepnr
