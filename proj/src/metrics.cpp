#include "neomlp/metrics.hpp"

#include "neomlp/error.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace neomlp {

namespace {

void check_same_shape(const Mat<float>& a, const Mat<float>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

double psnr_from_mse(double mse, double peak) {
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Mat<float>& pred, const Mat<float>& target, double peak) {
  check_same_shape(pred, target, "psnr");
  if (pred.size() == 0) throw ConfigError("psnr: empty input");
  const double mse = (pred.cast<double>() - target.cast<double>()).squaredNorm() / static_cast<double>(pred.size());
  return psnr_from_mse(mse, peak);
}

double masked_psnr(const Mat<float>& pred, const Mat<float>& target, const Mat<float>& mask, double peak) {
  check_same_shape(pred, target, "psnr");
  check_same_shape(pred, mask, "psnr");
  const double count = mask.cast<double>().sum();
  if (count <= 0.0) throw ConfigError("psnr: every entry is masked");
  const Mat<double> diff = (pred.cast<double>() - target.cast<double>()).cwiseProduct(mask.cast<double>());
  return psnr_from_mse(diff.squaredNorm() / count, peak);
}

std::string format_db(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", db);
  return buf;
}

double iou(const Mat<float>& pred, const Mat<float>& target, float threshold) {
  check_same_shape(pred, target, "iou");
  long inter = 0, uni = 0;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool a = pred.data()[i] >= threshold, b = target.data()[i] >= threshold;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& target) {
  if (pred.size() != target.size()) throw ConfigError("iou: shape mismatch");
  long inter = 0, uni = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = target[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace neomlp
