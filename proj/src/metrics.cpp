#include "perx/metrics.hpp"

#include <cmath>
#include <limits>

namespace perx {

namespace {

void check_pair(const Image2D& a, const Image2D& b) {
    if (a.h != b.h || a.w != b.w) throw ParameterError("image shape mismatch");
    if (a.h < 1 || a.w < 1) throw ParameterError("empty image");
}

}  // namespace

double mse(const Image2D& a, const Image2D& b) {
    check_pair(a, b);
    double s = 0;
    for (size_t i = 0; i < a.pix.size(); ++i) {
        double d = a.pix[i] - b.pix[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pix.size());
}

double psnr(const Image2D& a, const Image2D& b, double data_range) {
    double e = mse(a, b);
    if (e == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / e);
}

double ssim(const Image2D& a, const Image2D& b, double data_range) {
    check_pair(a, b);
    constexpr int win = 11;
    constexpr double sigma = 1.5;
    if (a.h < win || a.w < win) throw ParameterError("image smaller than the 11x11 SSIM window");

    double kernel[win];
    double ksum = 0;
    for (int i = 0; i < win; ++i) {
        double d = i - (win - 1) / 2.0;
        kernel[i] = std::exp(-d * d / (2 * sigma * sigma));
        ksum += kernel[i];
    }
    for (double& k : kernel) k /= ksum;

    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);

    double total = 0;
    std::int64_t count = 0;
    for (int r = 0; r + win <= a.h; ++r)
        for (int c = 0; c + win <= a.w; ++c) {
            double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double wgt = kernel[i] * kernel[j];
                    double pa = a.at(r + i, c + j);
                    double pb = b.at(r + i, c + j);
                    ma += wgt * pa;
                    mb += wgt * pb;
                    va += wgt * pa * pa;
                    vb += wgt * pb * pb;
                    cov += wgt * pa * pb;
                }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            double num = (2 * ma * mb + c1) * (2 * cov + c2);
            double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            ++count;
        }
    return total / static_cast<double>(count);
}

}  // namespace perx
