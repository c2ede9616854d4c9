#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "foepnr/foepnr.hpp"

namespace fs = std::filesystem;
using namespace foepnr;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

void note(const std::string& msg) { std::cerr << "foepnr: " << msg << '\n'; }

std::string fmtd(double v, const char* f = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string sidecar_path(const std::string& image_path) { return image_path + ".meta"; }

std::optional<double> sidecar_peak(const std::string& image_path) {
  const auto p = sidecar_path(image_path);
  if (!fs::exists(p)) return std::nullopt;
  const auto kv = io::read_key_values(p);
  auto it = kv.find("peak");
  if (it == kv.end()) return std::nullopt;
  double peak = std::stod(it->second);
  if (auto b = kv.find("bin"); b != kv.end() && b->second == "3") peak *= 9.0;
  return peak;
}

// models/x.model -> models/x.lambda when present.
std::optional<std::string> default_lambda_table(const std::string& model_path) {
  fs::path p(model_path);
  p.replace_extension(".lambda");
  if (fs::exists(p)) return p.string();
  return std::nullopt;
}

LambdaTable load_lambda_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open lambda table '" + path + "'");
  return LambdaTable::read(is);
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw InvalidInput("bad number '" + tok + "' in list '" + s + "'");
    }
  }
  return out;
}

// ---- noise ----------------------------------------------------------------

struct NoiseArgs {
  std::string in, out;
  double peak = 0.0;
  std::uint64_t seed = 0;
  bool bin = false;
};

int cmd_noise(const NoiseArgs& a) {
  NoiseSpec spec;
  spec.peak = a.peak;
  spec.seed = a.seed;
  spec.bin_factor = a.bin ? 3 : 1;
  spec.validate();
  const Image clean = io::read_image(a.in);
  Image noisy = sample_poisson(scale_to_peak(clean, spec.peak), spec.seed);
  if (a.bin) noisy = bin3(noisy);
  io::write_image(a.out, noisy);
  io::write_key_values(sidecar_path(a.out), {{"peak", fmtd(spec.peak)},
                                             {"seed", std::to_string(spec.seed)},
                                             {"bin", std::to_string(spec.bin_factor)},
                                             {"source", fs::path(a.in).filename().string()}});
  note("wrote " + a.out + " (peak " + fmtd(spec.peak, "%g") + ", seed " + std::to_string(spec.seed) + ")");
  return kOk;
}

// ---- denoise --------------------------------------------------------------

struct DenoiseArgs {
  std::string in, out, model, variant = "transform", trace, lambda_table, dump_prefix, data_term;
  std::optional<double> peak, lambda;
  double c = 0.1;
  std::optional<int> max_iters;
};

int cmd_denoise(const DenoiseArgs& a) {
  const FoEModel model = io::load_model(a.model);
  DenoiseRequest req;
  req.noisy = io::read_image(a.in);
  req.variant = variant_from_string(a.variant);
  req.zero_offset_c = a.c;
  req.lambda = a.lambda;
  req.max_iters = a.max_iters;
  if (!a.data_term.empty()) req.force_data_term = data_term_from_string(a.data_term);
  req.peak = a.peak ? a.peak : sidecar_peak(a.in);
  if (!req.peak) note("no peak given; estimating it from the data (3x3 median maximum)");

  LambdaTable table;
  std::string table_src = "built-in default (1)";
  const auto table_path = !a.lambda_table.empty() ? std::optional<std::string>(a.lambda_table) : default_lambda_table(a.model);
  if (table_path) {
    table = load_lambda_table(*table_path);
    table_src = *table_path;
  }

  const auto res = denoise(model, req, table);
  if (res.variant == Variant::direct) {
    note("variant direct: I-divergence data term on raw counts, c = " + fmtd(req.zero_offset_c, "%g"));
  } else {
    const std::string peak_desc = res.variant == Variant::transform_binned ? "binned peak " : "peak ";
    note("variant " + std::string(to_string(res.variant)) + ": " + peak_desc + fmtd(res.peak, "%g") + " -> " +
         std::string(to_string(res.data_term)) + " branch" + (req.force_data_term ? " (forced)" : ""));
  }
  note("lambda = " + fmtd(res.lambda, "%.6g") + (a.lambda ? " (from --lambda)" : " (from " + table_src + ")"));
  note(std::to_string(res.trace.size()) + " iPiano iterations" + (res.converged ? ", converged" : ""));
  if (res.clamped > 0) note(std::to_string(res.clamped) + " pixels clamped by the unbiased inverse");

  io::write_image(a.out, res.estimate);
  if (!a.trace.empty()) {
    std::ofstream os(a.trace);
    if (!os) throw DataError("cannot write trace '" + a.trace + "'");
    write_trace_csv(os, res.trace);
  }
  if (!a.dump_prefix.empty()) {
    io::write_float_image(a.dump_prefix + "_v.f32", res.transformed);
    io::write_float_image(a.dump_prefix + "_u.f32", res.solution);
  }
  return kOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string corpus, out, config, resume, loss_csv, checkpoint;
  int checkpoint_every = -1;
  int threads = 0;
  std::optional<int> max_outer_iters;
};

int cmd_train(const TrainArgs& a) {
  TrainRecipe recipe;
  TrainConfig cfg;
  if (!a.config.empty()) apply_train_config(io::read_key_values(a.config), recipe, cfg);
  cfg.threads = a.threads > 0 ? a.threads : (cfg.threads > 1 ? cfg.threads : thread_count_from_env());
  if (a.max_outer_iters) cfg.max_outer_iters = *a.max_outer_iters;
  if (!a.checkpoint.empty()) cfg.checkpoint_path = a.checkpoint;
  if (a.checkpoint_every >= 0) cfg.checkpoint_every = a.checkpoint_every;
  if (cfg.checkpoint_every > 0 && cfg.checkpoint_path.empty()) cfg.checkpoint_path = a.out + ".ckpt";

  const auto paths = list_images(a.corpus);
  if (paths.empty()) throw DataError("corpus '" + a.corpus + "' contains no images");
  std::vector<Image> corpus;
  for (const auto& p : paths) corpus.push_back(io::read_image(p.string()));
  auto samples = build_training_samples(corpus, recipe);
  const FoEModel init = initial_model_for(recipe, cfg.objective);
  note("training " + std::to_string(init.num_filters()) + " filters " + std::to_string(init.filter_size()) + "x" +
       std::to_string(init.filter_size()) + " on " + std::to_string(samples.size()) + " samples of " +
       std::to_string(recipe.crop_size) + "x" + std::to_string(recipe.crop_size) + " (" +
       std::string(to_string(cfg.objective)) + ", peak " + fmtd(recipe.peak, "%g") + ")");

  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(std::move(samples), init, cfg, [&](const std::string& m) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    note("[" + fmtd(s, "%.1f") + "s] " + m);
  });
  TrainResult res = a.resume.empty() ? trainer.run() : trainer.resume(read_checkpoint(a.resume));
  note("stopped after " + std::to_string(res.iterations) + " iterations: " + res.stop_reason);

  io::save_model(a.out, res.model);
  const std::string loss_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  std::ofstream os(loss_path);
  if (!os) throw DataError("cannot write '" + loss_path + "'");
  os << "iteration,loss\n";
  for (std::size_t i = 0; i < res.loss_history.size(); ++i) os << i << ',' << fmtd(res.loss_history[i]) << '\n';
  if (res.loss_history.size() >= 2)
    note("loss " + fmtd(res.loss_history.front(), "%.6g") + " -> " + fmtd(res.loss_history.back(), "%.6g"));
  return kOk;
}

// ---- calibrate ------------------------------------------------------------

struct CalibrateArgs {
  std::string model, val, out, peaks;
  int crop = 96;
  std::uint64_t seed = 7;
  bool no_refine = false;
  std::optional<int> max_iters;
};

int cmd_calibrate(const CalibrateArgs& a) {
  const FoEModel model = io::load_model(a.model);
  CalibrationSpec spec;
  spec.seed = a.seed;
  spec.refine = !a.no_refine;
  spec.threads = thread_count_from_env();
  spec.max_iters = a.max_iters;
  spec.targets = default_calibration_targets(model.domain);
  if (!a.peaks.empty()) {
    const std::string key = model.domain == Domain::original ? "direct" : "";
    spec.targets.clear();
    for (double p : parse_list(a.peaks)) {
      if (!key.empty()) {
        spec.targets.push_back({key, p});
      } else {
        spec.targets.push_back({"idiv", p});
        spec.targets.push_back({"quadratic", p});
      }
    }
  }
  // Center crop of every validation image.
  std::string names;
  for (const auto& p : list_images(a.val)) {
    const Image img = io::read_image(p.string());
    const int w = std::min(a.crop, img.width()), h = std::min(a.crop, img.height());
    spec.images.push_back(crop(img, (img.width() - w) / 2, (img.height() - h) / 2, w, h));
    names += (names.empty() ? "" : " ") + p.filename().string();
  }
  if (spec.images.empty()) throw DataError("no validation images in '" + a.val + "'");
  const auto entries = calibrate_lambdas(model, spec, note);
  std::string prov = "lambda grid search, maximising mean PSNR\n";
  prov += "model: " + fs::path(a.model).filename().string() + "\n";
  prov += "validation: " + names + " (center crops " + std::to_string(a.crop) + ", seed " + std::to_string(a.seed) + ")\n";
  prov += "grid: 2^-4..2^4" + std::string(spec.refine ? " refined by 2^(+-1/2)" : "");
  const LambdaTable table = to_lambda_table(entries, prov);
  std::ofstream os(a.out);
  if (!os) throw DataError("cannot write '" + a.out + "'");
  table.write(os);
  note("wrote " + a.out);
  return kOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string model, images, lambda_table, reference, csv, md, peaks, variants;
  std::uint64_t seed = 0;
  std::optional<int> max_iters;
  std::string data_term;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::exists(a.model)) throw DataError("model '" + a.model + "' not found");
  const FoEModel model = io::load_model(a.model);
  BenchmarkSpec spec;
  spec.seed = a.seed;
  spec.max_iters = a.max_iters;
  if (!a.data_term.empty()) spec.force_data_term = data_term_from_string(a.data_term);
  if (!a.peaks.empty()) spec.peaks = parse_list(a.peaks);
  if (!a.variants.empty()) {
    spec.variants.clear();
    std::stringstream ss(a.variants);
    for (std::string tok; std::getline(ss, tok, ',');) spec.variants.push_back(variant_from_method(tok));
  }
  const auto paths = list_images(a.images);
  spec.images = load_benchmark_images(paths);

  LambdaTable table;
  const auto table_path = !a.lambda_table.empty() ? std::optional<std::string>(a.lambda_table) : default_lambda_table(a.model);
  if (table_path) table = load_lambda_table(*table_path);
  std::optional<ReferenceTable> ref;
  if (!a.reference.empty()) ref = ReferenceTable::load(a.reference);

  const int threads = thread_count_from_env();
  note("evaluating " + std::to_string(spec.images.size()) + " images x " + std::to_string(spec.peaks.size()) +
       " peaks x " + std::to_string(spec.variants.size()) + " variants on " + std::to_string(threads) + " thread(s)");
  const auto records = run_benchmark(spec, model, table, threads);

  auto emit = [&](const std::string& path, auto writer) {
    if (path.empty()) return;
    if (path == "-") {
      writer(std::cout);
      return;
    }
    std::ofstream os(path);
    if (!os) throw DataError("cannot write '" + path + "'");
    writer(os);
  };
  const ReferenceTable* rp = ref ? &*ref : nullptr;
  emit(a.csv.empty() && a.md.empty() ? std::string("-") : a.csv, [&](std::ostream& os) { write_report_csv(os, records, rp); });
  emit(a.md, [&](std::ostream& os) { write_report_markdown(os, records, rp); });
  return kOk;
}

// ---- score ----------------------------------------------------------------

int cmd_score(const std::string& estimate, const std::string& clean_path, double peak) {
  const Image x = io::read_image(estimate);
  const Image g = scale_to_peak(io::read_image(clean_path), peak);
  const auto r = score_peak_scaled(x, g, peak);
  std::cout << "psnr_db=" << fmtd(r.psnr_db, "%.4f") << " mssim=" << fmtd(r.mssim, "%.4f") << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisson image denoising with a Fields-of-Experts prior"};
  app.require_subcommand(1);

  NoiseArgs na;
  auto* noise = app.add_subcommand("noise", "scale a clean image to a peak and add Poisson noise");
  noise->add_option("input", na.in, "clean image")->required()->check(CLI::ExistingFile);
  noise->add_option("output", na.out, "noisy image (.pgm/.png/.f32)")->required();
  noise->add_option("--peak", na.peak, "peak photon count")->required()->check(CLI::PositiveNumber);
  noise->add_option("--seed", na.seed, "noise seed")->required();
  noise->add_flag("--bin", na.bin, "write the 3x3-binned counts");

  DenoiseArgs da;
  auto* den = app.add_subcommand("denoise", "denoise a Poisson-count image");
  den->add_option("input", da.in, "noisy counts")->required()->check(CLI::ExistingFile);
  den->add_option("output", da.out, "estimate (.f32 keeps full precision)")->required();
  den->add_option("--model", da.model, "FoE model file")->required()->check(CLI::ExistingFile);
  den->add_option("--peak", da.peak, "peak of the clean image (default: sidecar, else estimate)")->check(CLI::PositiveNumber);
  den->add_option("--variant", da.variant, "direct | transform | transform_binned")
      ->check(CLI::IsMember({"direct", "transform", "transform_binned", "binned"}));
  den->add_option("--lambda", da.lambda, "trade-off parameter (overrides the table)")->check(CLI::PositiveNumber);
  den->add_option("--lambda-table", da.lambda_table, "lambda table (default: <model>.lambda)")->check(CLI::ExistingFile);
  den->add_option("--c", da.c, "zero-count offset for the direct variant")->check(CLI::NonNegativeNumber);
  den->add_option("--data-term", da.data_term, "force quadratic | idiv")->check(CLI::IsMember({"quadratic", "idiv"}));
  den->add_option("--max-iters", da.max_iters, "iPiano iteration budget")->check(CLI::NonNegativeNumber);
  den->add_option("--trace", da.trace, "write the solver trace CSV");
  den->add_option("--dump", da.dump_prefix, "write <prefix>_v.f32 and <prefix>_u.f32");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "bilevel training of an FoE model");
  tr->add_option("corpus", ta.corpus, "directory of clean grayscale images")->required();
  tr->add_option("output", ta.out, "model file to write")->required();
  tr->add_option("--config", ta.config, "key=value config")->check(CLI::ExistingFile);
  tr->add_option("--resume", ta.resume, "resume from a checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--loss-csv", ta.loss_csv, "loss history (default: <output>.loss.csv)");
  tr->add_option("--checkpoint", ta.checkpoint, "checkpoint path");
  tr->add_option("--checkpoint-every", ta.checkpoint_every, "checkpoint period in outer iterations")
      ->check(CLI::NonNegativeNumber);
  tr->add_option("--threads", ta.threads, "worker threads (default: FOEPNR_THREADS)")->check(CLI::NonNegativeNumber);
  tr->add_option("--max-outer-iters", ta.max_outer_iters, "override max_outer_iters")->check(CLI::NonNegativeNumber);

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "grid-search lambda per data term and peak");
  cal->add_option("--model", ca.model, "FoE model file")->required()->check(CLI::ExistingFile);
  cal->add_option("--val", ca.val, "validation image directory")->required();
  cal->add_option("--out", ca.out, "lambda table to write")->required();
  cal->add_option("--peaks", ca.peaks, "comma-separated peaks (default: built-in list)");
  cal->add_option("--crop", ca.crop, "center crop size")->check(CLI::PositiveNumber);
  cal->add_option("--seed", ca.seed, "noise seed");
  cal->add_option("--max-iters", ca.max_iters, "iPiano iteration budget")->check(CLI::NonNegativeNumber);
  cal->add_flag("--no-refine", ca.no_refine, "skip the half-octave refinement");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "benchmark: noise, denoise and score every (image, peak, variant)");
  ev->add_option("--model", ea.model, "FoE model file")->required();
  ev->add_option("--images", ea.images, "test image directory")->required();
  ev->add_option("--lambda-table", ea.lambda_table, "lambda table (default: <model>.lambda)")->check(CLI::ExistingFile);
  ev->add_option("--reference", ea.reference, "published reference CSV")->check(CLI::ExistingFile);
  ev->add_option("--peaks", ea.peaks, "comma-separated peaks (default 0.1,0.2,0.5,1,2,4,40)");
  ev->add_option("--variants", ea.variants, "comma-separated: FoEPNR,FoEPNRbin,FoEdirect");
  ev->add_option("--seed", ea.seed, "base noise seed");
  ev->add_option("--max-iters", ea.max_iters, "iPiano iteration budget")->check(CLI::NonNegativeNumber);
  ev->add_option("--data-term", ea.data_term, "force quadratic | idiv")->check(CLI::IsMember({"quadratic", "idiv"}));
  ev->add_option("--csv", ea.csv, "CSV report ('-' for stdout)");
  ev->add_option("--md", ea.md, "Markdown report");

  std::string sc_est, sc_clean;
  double sc_peak = 0.0;
  auto* sc = app.add_subcommand("score", "PSNR/MSSIM of an estimate against a clean image");
  sc->add_option("estimate", sc_est)->required()->check(CLI::ExistingFile);
  sc->add_option("clean", sc_clean)->required()->check(CLI::ExistingFile);
  sc->add_option("--peak", sc_peak)->required()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*noise) return cmd_noise(na);
    if (*den) return cmd_denoise(da);
    if (*tr) return cmd_train(ta);
    if (*cal) return cmd_calibrate(ca);
    if (*ev) return cmd_eval(ea);
    if (*sc) return cmd_score(sc_est, sc_clean, sc_peak);
  } catch (const InvalidInput& e) {
    note(std::string("error: ") + e.what());
    return kUsage;
  } catch (const NumericalError& e) {
    note(std::string("numerical failure: ") + e.what());
    return kNumerical;
  } catch (const DataError& e) {
    note(std::string("error: ") + e.what());
    return kData;
  } catch (const std::exception& e) {
    note(std::string("error: ") + e.what());
    return kData;
  }
  return kUsage;
}
