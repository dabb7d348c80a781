#pragma once

#include "neomlp/tensor.hpp"

#include <string>
#include <vector>

namespace neomlp {

/// 10 log10(peak^2 / MSE) in dB; +infinity when MSE is zero. Throws
/// ConfigError on a shape mismatch or a non-positive peak.
double psnr(const Mat<float>& pred, const Mat<float>& target, double peak);
double psnr_from_mse(double mse, double peak);
/// Only the entries where mask is nonzero contribute.
double masked_psnr(const Mat<float>& pred, const Mat<float>& target, const Mat<float>& mask, double peak);

/// Fixed-point dB with two decimals, or "inf".
std::string format_db(double db);

/// |A and B| / |A or B| after thresholding both at `threshold`; 1.0 when both
/// are empty.
double iou(const Mat<float>& pred, const Mat<float>& target, float threshold = 0.5f);
double iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& target);

}  // namespace neomlp
