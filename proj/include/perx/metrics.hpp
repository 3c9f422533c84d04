#pragma once

#include "perx/volume.hpp"

namespace perx {

// 10*log10(range^2 / MSE); returns +infinity when the images are identical.
double psnr(const Image2D& a, const Image2D& b, double data_range = 1.0);

// Wang04 SSIM: 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03,
// mean over valid window positions.
double ssim(const Image2D& a, const Image2D& b, double data_range = 1.0);

double mse(const Image2D& a, const Image2D& b);

}  // namespace perx
