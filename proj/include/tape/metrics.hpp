#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "tape/errors.hpp"
#include "tape/tensor.hpp"

namespace tape {

// 10 * log10(MAX^2 / MSE) with MAX = 1 on the [0,1] domain.
// Identical images return +infinity.
inline double psnr(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw dim_error("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

// Mean SSIM over non-overlapping `window` x `window` tiles, averaged over
// channels. Uses the standard constants C1=K1^2, C2=K2^2 on the [0,1] range.
// Deliberately simpler than the 11x11 Gaussian-window variant.
inline double ssim(const Tensor& a, const Tensor& b, int window = 8, double K1 = 0.01,
                   double K2 = 0.03) {
    if (a.shape() != b.shape()) throw dim_error("ssim: shape mismatch");
    if (a.rank() != 3) throw dim_error("ssim: expected [C,H,W] tensors");
    int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    if (H < window || W < window) throw dim_error("ssim: image smaller than window");
    double c1 = K1 * K1, c2 = K2 * K2;
    std::size_t hw = static_cast<std::size_t>(H) * W;
    double total = 0.0;
    long count = 0;
    for (int c = 0; c < C; ++c)
        for (int wy = 0; wy + window <= H; wy += window)
            for (int wx = 0; wx + window <= W; wx += window) {
                double ma = 0.0, mb = 0.0;
                int n = window * window;
                for (int y = 0; y < window; ++y)
                    for (int x = 0; x < window; ++x) {
                        std::size_t p = c * hw + static_cast<std::size_t>(wy + y) * W + wx + x;
                        ma += a.data()[p];
                        mb += b.data()[p];
                    }
                ma /= n;
                mb /= n;
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (int y = 0; y < window; ++y)
                    for (int x = 0; x < window; ++x) {
                        std::size_t p = c * hw + static_cast<std::size_t>(wy + y) * W + wx + x;
                        double da = a.data()[p] - ma, db = b.data()[p] - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n - 1;
                vb /= n - 1;
                cov /= n - 1;
                double s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
                total += s;
                ++count;
            }
    return total / static_cast<double>(count);
}

struct EvalReport {
    std::string task_id;
    std::vector<double> psnr_values;
    std::vector<double> ssim_values;

    std::size_t image_count() const { return psnr_values.size(); }
    double mean_psnr() const {
        double s = 0.0;
        for (double v : psnr_values) s += v;
        return s / static_cast<double>(psnr_values.size());
    }
    double mean_ssim() const {
        double s = 0.0;
        for (double v : ssim_values) s += v;
        return s / static_cast<double>(ssim_values.size());
    }

    void to_csv(std::ostream& os) const {
        os << "index,psnr_db,ssim\n";
        char buf[64];
        for (std::size_t i = 0; i < psnr_values.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", i, psnr_values[i], ssim_values[i]);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f\n", mean_psnr(), mean_ssim());
        os << buf;
    }
};

}  // namespace tape
