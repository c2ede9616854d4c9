#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "foepnr/errors.hpp"
#include "foepnr/foe.hpp"
#include "foepnr/io.hpp"
#include "foepnr/metrics.hpp"
#include "foepnr/noise.hpp"
#include "foepnr/parallel.hpp"
#include "foepnr/pipeline.hpp"

namespace foepnr {

inline std::string method_id(Variant v) {
  switch (v) {
    case Variant::direct:
      return "FoEdirect";
    case Variant::transform:
      return "FoEPNR";
    case Variant::transform_binned:
      return "FoEPNRbin";
  }
  return "?";
}

inline Variant variant_from_method(std::string_view m) {
  if (m == "FoEdirect") return Variant::direct;
  if (m == "FoEPNR") return Variant::transform;
  if (m == "FoEPNRbin") return Variant::transform_binned;
  return variant_from_string(m);
}

// "0_cameraman.pgm" -> "cameraman"
inline std::string image_id_from_path(const std::filesystem::path& p) {
  std::string stem = p.stem().string();
  std::size_t i = 0;
  while (i < stem.size() && std::isdigit(static_cast<unsigned char>(stem[i]))) ++i;
  if (i > 0 && i < stem.size() && stem[i] == '_') stem.erase(0, i + 1);
  return stem;
}

// Seed of the single noise realisation for (image, peak); independent of
// the variant so all methods see the same noisy image.
inline std::uint64_t noise_seed_for(std::uint64_t base, const std::string& image_id, double peak) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : image_id) h = (h ^ c) * 0x100000001b3ULL;
  std::uint64_t bits = 0;
  std::memcpy(&bits, &peak, sizeof bits);
  return PixelStream::mix(base ^ PixelStream::mix(h ^ PixelStream::mix(bits)));
}

struct BenchmarkImage {
  std::string id;
  Image clean;
};

struct BenchmarkSpec {
  std::vector<BenchmarkImage> images;
  std::vector<double> peaks = {0.1, 0.2, 0.5, 1.0, 2.0, 4.0, 40.0};
  std::vector<Variant> variants = {Variant::transform, Variant::transform_binned};
  std::uint64_t seed = 0;
  std::optional<DataTerm> force_data_term;
  std::optional<int> max_iters;

  void validate() const {
    require(!images.empty(), "benchmark: image list is empty");
    require(!peaks.empty(), "benchmark: peak list is empty");
    require(!variants.empty(), "benchmark: variant list is empty");
    for (double p : peaks) require(p > 0.0, "benchmark: peaks must be positive");
  }
};

inline std::vector<BenchmarkImage> load_benchmark_images(const std::vector<std::filesystem::path>& paths) {
  std::vector<BenchmarkImage> out;
  for (const auto& p : paths) out.push_back({image_id_from_path(p), io::read_image(p.string())});
  return out;
}

struct EvalRecord {
  std::string image;
  double peak = 0.0;
  std::string method;
  std::string data_term;
  double lambda = 0.0;
  int iterations = 0;
  double psnr_db = 0.0;
  double mssim = 0.0;
};

// Published numbers keyed by (method, peak, image).
class ReferenceTable {
 public:
  std::string provenance;

  static ReferenceTable read(std::istream& is) {
    ReferenceTable t;
    std::string line;
    bool header = false;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        t.provenance += line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1) + '\n';
        continue;
      }
      if (!header) {
        header = true;
        if (line.rfind("method,", 0) == 0) continue;
      }
      std::istringstream ls(line);
      std::string method, peak, image, psnr, ssim;
      if (!std::getline(ls, method, ',') || !std::getline(ls, peak, ',') || !std::getline(ls, image, ',') ||
          !std::getline(ls, psnr, ',') || !std::getline(ls, ssim))
        throw DataError("reference table: malformed line '" + line + "'");
      try {
        t.rows_[{method, std::stod(peak), image}] = {std::stod(psnr), std::stod(ssim)};
      } catch (const std::exception&) {
        throw DataError("reference table: malformed number in '" + line + "'");
      }
    }
    return t;
  }

  static ReferenceTable load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open reference table '" + path + "'");
    return read(is);
  }

  std::optional<std::pair<double, double>> find(const std::string& method, double peak, const std::string& image) const {
    auto it = rows_.find({method, peak, image});
    if (it == rows_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return rows_.size(); }

 private:
  std::map<std::tuple<std::string, double, std::string>, std::pair<double, double>> rows_;
};

// noise -> denoise -> score for every (image, peak, variant). Jobs are
// (image, peak) pairs spread over `threads` workers; records come back
// ordered by peak, variant, image regardless of scheduling.
inline std::vector<EvalRecord> run_benchmark(const BenchmarkSpec& spec, const FoEModel& model,
                                             const LambdaTable& table, int threads = 1) {
  spec.validate();
  const std::size_t ni = spec.images.size();
  const std::size_t np = spec.peaks.size();
  const std::size_t nv = spec.variants.size();
  std::vector<EvalRecord> slots(ni * np * nv);
  parallel_for(ni * np, threads, [&](std::size_t job) {
    const std::size_t ii = job % ni;
    const std::size_t pi = job / ni;
    const auto& bi = spec.images[ii];
    const double peak = spec.peaks[pi];
    const Image clean = scale_to_peak(bi.clean, peak);
    const Image noisy = sample_poisson(clean, noise_seed_for(spec.seed, bi.id, peak));
    for (std::size_t vi = 0; vi < nv; ++vi) {
      DenoiseRequest req;
      req.noisy = noisy;
      req.peak = peak;
      req.variant = spec.variants[vi];
      req.force_data_term = spec.force_data_term;
      req.max_iters = spec.max_iters;
      const auto res = denoise(model, req, table);
      const auto score = score_peak_scaled(res.estimate, clean, peak);
      EvalRecord& r = slots[(pi * nv + vi) * ni + ii];
      r.image = bi.id;
      r.peak = peak;
      r.method = method_id(spec.variants[vi]);
      r.data_term = res.variant == Variant::direct ? "idiv" : std::string(to_string(res.data_term));
      r.lambda = res.lambda;
      r.iterations = static_cast<int>(res.trace.size());
      r.psnr_db = score.psnr_db;
      r.mssim = score.mssim;
    }
  });
  return slots;
}

struct AverageRecord {
  double peak = 0.0;
  std::string method;
  double psnr_db = 0.0;
  double mssim = 0.0;
  std::size_t count = 0;
};

// Per (peak, method) means, in first-appearance order.
inline std::vector<AverageRecord> average_records(const std::vector<EvalRecord>& records) {
  std::vector<AverageRecord> out;
  for (const auto& r : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& a) { return a.peak == r.peak && a.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.peak, r.method, 0.0, 0.0, 0});
      it = std::prev(out.end());
    }
    it->psnr_db += r.psnr_db;
    it->mssim += r.mssim;
    ++it->count;
  }
  for (auto& a : out) {
    a.psnr_db /= static_cast<double>(a.count);
    a.mssim /= static_cast<double>(a.count);
  }
  return out;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

// CSV columns:
//   image,peak,method,data_term,lambda,iterations,psnr_db,mssim,
//   ref_psnr_db,ref_mssim,delta_psnr_db,delta_mssim
// Reference columns are empty when the table has no matching entry. Rows
// with image "average" hold per (peak, method) means.
inline void write_report_csv(std::ostream& os, const std::vector<EvalRecord>& records, const ReferenceTable* ref) {
  using detail::fmt;
  os << "image,peak,method,data_term,lambda,iterations,psnr_db,mssim,ref_psnr_db,ref_mssim,delta_psnr_db,delta_mssim\n";
  auto tail = [&](const std::string& method, double peak, const std::string& image, double psnr, double ssim) {
    const auto r = ref ? ref->find(method, peak, image) : std::nullopt;
    if (!r) return std::string(",,,");
    return fmt("%.2f", r->first) + ',' + fmt("%.2f", r->second) + ',' + fmt("%.4f", psnr - r->first) + ',' +
           fmt("%.4f", ssim - r->second);
  };
  for (const auto& r : records) {
    os << r.image << ',' << fmt("%g", r.peak) << ',' << r.method << ',' << r.data_term << ',' << fmt("%.6g", r.lambda)
       << ',' << r.iterations << ',' << fmt("%.4f", r.psnr_db) << ',' << fmt("%.4f", r.mssim) << ','
       << tail(r.method, r.peak, r.image, r.psnr_db, r.mssim) << '\n';
  }
  for (const auto& a : average_records(records)) {
    os << "average," << fmt("%g", a.peak) << ',' << a.method << ",,,," << fmt("%.4f", a.psnr_db) << ','
       << fmt("%.4f", a.mssim) << ',' << tail(a.method, a.peak, "average", a.psnr_db, a.mssim) << '\n';
  }
}

// One block per peak, one row per method, "PSNR/MSSIM" cells with the
// published PSNR delta in parentheses where available.
inline void write_report_markdown(std::ostream& os, const std::vector<EvalRecord>& records, const ReferenceTable* ref) {
  using detail::fmt;
  std::vector<std::string> images;
  std::vector<double> peaks;
  std::vector<std::string> methods;
  for (const auto& r : records) {
    if (std::find(images.begin(), images.end(), r.image) == images.end()) images.push_back(r.image);
    if (std::find(peaks.begin(), peaks.end(), r.peak) == peaks.end()) peaks.push_back(r.peak);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  const auto avgs = average_records(records);
  auto cell = [&](const std::string& method, double peak, const std::string& image, double psnr, double ssim) {
    std::string s = fmt("%.2f", psnr) + '/' + fmt("%.2f", ssim);
    if (ref)
      if (auto r = ref->find(method, peak, image)) s += " (" + fmt("%+.2f", psnr - r->first) + ')';
    return s;
  };
  os << "| Method | Peak |";
  for (const auto& im : images) os << ' ' << im << " |";
  os << " Average |\n|---|---|";
  for (std::size_t i = 0; i <= images.size(); ++i) os << "---|";
  os << '\n';
  for (double p : peaks) {
    for (const auto& m : methods) {
      os << "| " << m << " | " << fmt("%g", p) << " |";
      for (const auto& im : images) {
        auto it = std::find_if(records.begin(), records.end(),
                               [&](const auto& r) { return r.peak == p && r.method == m && r.image == im; });
        os << ' ' << (it == records.end() ? std::string("-") : cell(m, p, im, it->psnr_db, it->mssim)) << " |";
      }
      auto a = std::find_if(avgs.begin(), avgs.end(), [&](const auto& x) { return x.peak == p && x.method == m; });
      os << ' ' << (a == avgs.end() ? std::string("-") : cell(m, p, "average", a->psnr_db, a->mssim)) << " |\n";
    }
  }
}

}  // namespace foepnr
