#include "nodect/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <json.hpp>

#include "nodect/errors.hpp"

namespace nodect {

namespace {

void check_pair(const Volume& a, const Volume& b, const Volume* mask) {
  if (!a.same_shape(b)) throw InvalidArgument("metric inputs have different shapes");
  if (mask != nullptr && !mask->same_shape(a)) throw InvalidArgument("metric mask shape does not match the volumes");
}

std::size_t mask_count(const Volume& a, const Volume* mask) {
  if (mask == nullptr) return a.size();
  std::size_t n = 0;
  for (double m : mask->values()) n += m != 0.0 ? 1 : 0;
  if (n == 0) throw InvalidArgument("metric mask is empty");
  return n;
}

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;

std::array<double, 2 * kRadius + 1> gaussian_taps() {
  std::array<double, 2 * kRadius + 1> w{};
  double sum = 0.0;
  for (int k = -kRadius; k <= kRadius; ++k) {
    w[k + kRadius] = std::exp(-0.5 * k * k / (kSigma * kSigma));
    sum += w[k + kRadius];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable truncated Gaussian filtering along every active axis.
std::vector<double> blur(const std::vector<double>& in, const VolumeGrid& g) {
  static const auto w = gaussian_taps();
  std::vector<double> cur = in, next(in.size());
  const std::array<std::size_t, 3> stride{1, g.shape[0], g.shape[0] * g.shape[1]};
  for (int axis = 0; axis < g.dims; ++axis) {
    const auto n = static_cast<long>(g.shape[axis]);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const long pos = static_cast<long>((i / stride[axis]) % g.shape[axis]);
      double acc = 0.0;
      for (int k = -kRadius; k <= kRadius; ++k) {
        const long q = pos + k;
        if (q < 0 || q >= n) continue;
        acc += w[k + kRadius] * cur[static_cast<std::size_t>(static_cast<long>(i) + k * static_cast<long>(stride[axis]))];
      }
      next[i] = acc;
    }
    std::swap(cur, next);
  }
  return cur;
}

}  // namespace

double rmse(const Volume& a, const Volume& b, const Volume* mask) {
  check_pair(a, b, mask);
  const std::size_t n = mask_count(a, mask);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0.0) continue;
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

double psnr(const Volume& a, const Volume& b, const Volume* mask, double data_range) {
  if (!(data_range > 0.0)) throw InvalidArgument("data_range must be > 0");
  const double e = rmse(a, b, mask);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(data_range / e);
}

double ssim(const Volume& a, const Volume& b, const Volume* mask, double data_range) {
  if (!(data_range > 0.0)) throw InvalidArgument("data_range must be > 0");
  check_pair(a, b, mask);
  const std::size_t n = mask_count(a, mask);
  const VolumeGrid& g = a.grid();
  const std::size_t size = a.size();
  std::vector<double> aa(size), bb(size), ab(size), ones(size, 1.0);
  for (std::size_t i = 0; i < size; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto norm = blur(ones, g);
  const auto mu_a = blur(a.storage(), g), mu_b = blur(b.storage(), g);
  const auto e_aa = blur(aa, g), e_bb = blur(bb, g), e_ab = blur(ab, g);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double acc = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    if (mask != nullptr && (*mask)[i] == 0.0) continue;
    const double ma = mu_a[i] / norm[i], mb = mu_b[i] / norm[i];
    const double va = e_aa[i] / norm[i] - ma * ma;
    const double vb = e_bb[i] / norm[i] - mb * mb;
    const double cov = e_ab[i] / norm[i] - ma * mb;
    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(n);
}

MetricsReport evaluate_metrics(const std::string& method, const Volume& recon, const Volume& reference,
                               const Volume* mask) {
  const auto vals = reference.values();
  const double range = vals.empty() ? 0.0 : *std::max_element(vals.begin(), vals.end());
  if (!(range > 0.0)) throw InvalidArgument("reference volume has no positive values; data range undefined");
  MetricsReport r;
  r.method = method;
  r.rmse = rmse(recon, reference, mask);
  r.psnr = psnr(recon, reference, mask, range);
  r.ssim = ssim(recon, reference, mask, range);
  return r;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["method"] = report.method;
  j["rmse"] = report.rmse;
  if (std::isinf(report.psnr)) {
    j["psnr"] = "inf";
  } else {
    j["psnr"] = report.psnr;
  }
  j["ssim"] = report.ssim;
  j["runtime_seconds"] = report.runtime_seconds;
  return j.dump(2) + "\n";
}

MetricsReport metrics_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MetricsReport r;
  r.method = j.at("method").get<std::string>();
  r.rmse = j.at("rmse").get<double>();
  if (j.at("psnr").is_string()) {
    r.psnr = std::numeric_limits<double>::infinity();
  } else {
    r.psnr = j.at("psnr").get<double>();
  }
  r.ssim = j.at("ssim").get<double>();
  r.runtime_seconds = j.value("runtime_seconds", 0.0);
  return r;
}

}  // namespace nodect
