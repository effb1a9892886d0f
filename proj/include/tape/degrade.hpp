#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "tape/ppm.hpp"
#include "tape/rng.hpp"
#include "tape/tensor.hpp"

namespace tape {

enum class DegradationKind {
    gaussian_noise,
    rain_streaks,
    raindrops,
    moire,
    snow,
    shadow,
};

inline std::string kind_name(DegradationKind k) {
    switch (k) {
        case DegradationKind::gaussian_noise: return "gaussian_noise";
        case DegradationKind::rain_streaks: return "rain_streaks";
        case DegradationKind::raindrops: return "raindrops";
        case DegradationKind::moire: return "moire";
        case DegradationKind::snow: return "snow";
        case DegradationKind::shadow: return "shadow";
    }
    throw config_error("unknown degradation kind");
}

inline DegradationKind kind_from_name(const std::string& s) {
    if (s == "gaussian_noise") return DegradationKind::gaussian_noise;
    if (s == "rain_streaks") return DegradationKind::rain_streaks;
    if (s == "raindrops") return DegradationKind::raindrops;
    if (s == "moire") return DegradationKind::moire;
    if (s == "snow") return DegradationKind::snow;
    if (s == "shadow") return DegradationKind::shadow;
    throw config_error("unknown degradation kind: " + s);
}

// Declarative description of one synthetic degradation. Unset params fall
// back to the documented defaults below.
struct DegradationSpec {
    std::string name;  // task id
    DegradationKind kind = DegradationKind::gaussian_noise;
    std::map<std::string, double> params;
    std::uint64_t seed = 0;
    bool held_out = false;

    double param(const std::string& key, double fallback) const {
        auto it = params.find(key);
        return it == params.end() ? fallback : it->second;
    }
};

// Documented parameter defaults per kind:
//   gaussian_noise: sigma_min=1, sigma_max=50            (on the 0..255 scale)
//   rain_streaks:   count=12, length=8, intensity=0.25, angle_deg=30
//   raindrops:      count=4, radius_min=2, radius_max=4, blur=2, brightness=0.06
//   moire:          amplitude=0.3, wavelength_min=4, wavelength_max=12
//   snow:           count=15, sigma_min=0.8, sigma_max=1.6, brightness_min=0.7, brightness_max=1.0
//   shadow:         factor_min=0.4, factor_max=0.7

struct TaskSet {
    std::vector<DegradationSpec> tasks;

    std::vector<std::size_t> pretrain_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < tasks.size(); ++i)
            if (!tasks[i].held_out) out.push_back(i);
        return out;
    }
    const DegradationSpec& find(const std::string& name) const {
        for (const auto& t : tasks)
            if (t.name == name) return t;
        throw config_error("task not in TaskSet: " + name);
    }
    void validate() const {
        if (pretrain_indices().empty())
            throw config_error("TaskSet: at least one pretrain-known task required");
    }
};

// ---- synthetic clean images -------------------------------------------------

// Procedural stand-in for natural images: a smooth color gradient plus
// band-limited sinusoids plus a few anti-aliased triangles, clipped to [0,1].
inline Tensor gen_clean_patch(int H, int W, Rng& rng) {
    if (H < 8 || W < 8) throw dim_error("gen_clean_patch: size must be at least 8x8");
    std::size_t hw = static_cast<std::size_t>(H) * W;
    std::vector<double> data(3 * hw);

    // base gradient between two random colors along a random direction
    double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double gx = std::cos(ang), gy = std::sin(ang);
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.1, 0.9);
        c1[c] = rng.uniform(0.1, 0.9);
    }
    double diag = std::sqrt(static_cast<double>(H * H + W * W));
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double t = 0.5 + (gx * x + gy * y) / diag;
            t = std::clamp(t, 0.0, 1.0);
            for (int c = 0; c < 3; ++c)
                data[static_cast<std::size_t>(c) * hw + y * W + x] = c0[c] + t * (c1[c] - c0[c]);
        }

    // band-limited sinusoids (wavelength between 4 px and the image size)
    int n_waves = 2 + static_cast<int>(rng.uniform_index(2));
    for (int wI = 0; wI < n_waves; ++wI) {
        double lam = rng.uniform(4.0, std::max(4.0, static_cast<double>(std::min(H, W))));
        double om = 2.0 * std::numbers::pi / lam;
        double th = rng.uniform(0.0, std::numbers::pi);
        double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        double amp = rng.uniform(0.05, 0.15);
        double cth = std::cos(th), sth = std::sin(th);
        double w3[3] = {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0)};
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = amp * std::sin(om * (x * cth + y * sth) + ph);
                for (int c = 0; c < 3; ++c)
                    data[static_cast<std::size_t>(c) * hw + y * W + x] += w3[c] * s;
            }
    }

    // anti-aliased filled triangles
    int n_poly = 1 + static_cast<int>(rng.uniform_index(3));
    for (int pI = 0; pI < n_poly; ++pI) {
        double px[3], py[3];
        for (int v = 0; v < 3; ++v) {
            px[v] = rng.uniform(0.0, static_cast<double>(W));
            py[v] = rng.uniform(0.0, static_cast<double>(H));
        }
        double col[3] = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};
        double alpha = rng.uniform(0.3, 0.8);
        auto edge = [](double ax, double ay, double bx, double by, double x, double y) {
            return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
        };
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                // signed-distance-ish coverage from the three edges, 2x2 supersample
                double cov = 0.0;
                for (int sy = 0; sy < 2; ++sy)
                    for (int sx = 0; sx < 2; ++sx) {
                        double fx = x + 0.25 + 0.5 * sx, fy = y + 0.25 + 0.5 * sy;
                        double e0 = edge(px[0], py[0], px[1], py[1], fx, fy);
                        double e1 = edge(px[1], py[1], px[2], py[2], fx, fy);
                        double e2 = edge(px[2], py[2], px[0], py[0], fx, fy);
                        bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) ||
                                      (e0 <= 0 && e1 <= 0 && e2 <= 0);
                        if (inside) cov += 0.25;
                    }
                if (cov == 0.0) continue;
                for (int c = 0; c < 3; ++c) {
                    double& px_v = data[static_cast<std::size_t>(c) * hw + y * W + x];
                    px_v = px_v + cov * alpha * (col[c] - px_v);
                }
            }
    }

    for (double& v : data) v = std::clamp(v, 0.0, 1.0);
    return Tensor({3, H, W}, std::move(data));
}

// Random crop from a P6 PPM file, values in [0,1].
inline Tensor load_clean_patch(const std::string& path, int crop_h, int crop_w, Rng& rng) {
    Tensor img = read_ppm(path);
    int H = img.dim(1), W = img.dim(2);
    if (H < crop_h || W < crop_w)
        throw dim_error("load_clean_patch: image smaller than requested crop");
    int oy = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(H - crop_h) + 1));
    int ox = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(W - crop_w) + 1));
    std::vector<double> out(static_cast<std::size_t>(3) * crop_h * crop_w);
    std::size_t hw_in = static_cast<std::size_t>(H) * W;
    std::size_t hw_out = static_cast<std::size_t>(crop_h) * crop_w;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < crop_h; ++y)
            for (int x = 0; x < crop_w; ++x)
                out[c * hw_out + static_cast<std::size_t>(y) * crop_w + x] =
                    img.data()[c * hw_in + static_cast<std::size_t>(oy + y) * W + ox + x];
    return Tensor({3, crop_h, crop_w}, std::move(out));
}

// ---- degradation operators --------------------------------------------------

namespace detail {

inline double& px(std::vector<double>& d, int c, int y, int x, int H, int W) {
    return d[(static_cast<std::size_t>(c) * H + y) * W + x];
}

inline void add_line_segment(std::vector<double>& d, int H, int W, double x0, double y0,
                             double x1, double y1, double intensity) {
    // anti-aliased additive bright segment, ~1 px wide
    double dx = x1 - x0, dy = y1 - y0;
    double len2 = dx * dx + dy * dy;
    int minx = std::max(0, static_cast<int>(std::floor(std::min(x0, x1))) - 1);
    int maxx = std::min(W - 1, static_cast<int>(std::ceil(std::max(x0, x1))) + 1);
    int miny = std::max(0, static_cast<int>(std::floor(std::min(y0, y1))) - 1);
    int maxy = std::min(H - 1, static_cast<int>(std::ceil(std::max(y0, y1))) + 1);
    for (int y = miny; y <= maxy; ++y)
        for (int x = minx; x <= maxx; ++x) {
            double t = len2 > 0.0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            double cx = x0 + t * dx, cy = y0 + t * dy;
            double dist = std::hypot(x - cx, y - cy);
            double w = std::max(0.0, 1.0 - dist);  // linear falloff over 1 px
            if (w <= 0.0) continue;
            for (int c = 0; c < 3; ++c) px(d, c, y, x, H, W) += intensity * w;
        }
}

inline void box_blur_region(const std::vector<double>& src, std::vector<double>& dst, int H,
                            int W, int radius) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double s = 0.0;
                int n = 0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx) {
                        int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        s += src[(static_cast<std::size_t>(c) * H + yy) * W + xx];
                        ++n;
                    }
                dst[(static_cast<std::size_t>(c) * H + y) * W + x] = s / n;
            }
}

}  // namespace detail

// Kind-specific corruption, deterministic given (spec, rng state), clipped to [0,1].
inline Tensor apply_degradation(const Tensor& clean, const DegradationSpec& spec, Rng& rng) {
    if (clean.rank() != 3 || clean.dim(0) != 3)
        throw dim_error("apply_degradation: expected [3,H,W] tensor");
    int H = clean.dim(1), W = clean.dim(2);
    std::size_t hw = static_cast<std::size_t>(H) * W;
    // mix the spec's own seed into a local stream so (spec, rng) pins the output
    Rng local(derive_seed(rng.next_u64() ^ splitmix64(spec.seed), kind_name(spec.kind)));
    std::vector<double> d = clean.data();

    switch (spec.kind) {
        case DegradationKind::gaussian_noise: {
            double smin = spec.param("sigma_min", 1.0);
            double smax = spec.param("sigma_max", 50.0);
            if (smin < 0.0 || smax < smin)
                throw config_error("gaussian_noise: need 0 <= sigma_min <= sigma_max");
            double sigma = local.uniform(smin, smax) / 255.0;
            if (sigma > 0.0)
                for (double& v : d) v += local.normal(0.0, sigma);
            break;
        }
        case DegradationKind::rain_streaks: {
            int count = static_cast<int>(spec.param("count", 12.0));
            double length = spec.param("length", 8.0);
            double intensity = spec.param("intensity", 0.25);
            double angle_deg = spec.param("angle_deg", 30.0);
            for (int i = 0; i < count; ++i) {
                double x0 = local.uniform(0.0, static_cast<double>(W));
                double y0 = local.uniform(0.0, static_cast<double>(H));
                double a = local.uniform(-angle_deg, angle_deg) * std::numbers::pi / 180.0;
                double x1 = x0 + length * std::sin(a);
                double y1 = y0 + length * std::cos(a);  // mostly vertical fall
                detail::add_line_segment(d, H, W, x0, y0, x1, y1,
                                         intensity * local.uniform(0.6, 1.0));
            }
            break;
        }
        case DegradationKind::raindrops: {
            int count = static_cast<int>(spec.param("count", 4.0));
            double rmin = spec.param("radius_min", 2.0);
            double rmax = spec.param("radius_max", 4.0);
            int blur = static_cast<int>(spec.param("blur", 2.0));
            double bright = spec.param("brightness", 0.06);
            std::vector<double> blurred(d.size());
            detail::box_blur_region(d, blurred, H, W, blur);
            for (int i = 0; i < count; ++i) {
                double cx = local.uniform(0.0, static_cast<double>(W));
                double cy = local.uniform(0.0, static_cast<double>(H));
                double rx = local.uniform(rmin, rmax);
                double ry = local.uniform(rmin, rmax);
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        double u = (x - cx) / rx, v = (y - cy) / ry;
                        double r2 = u * u + v * v;
                        if (r2 >= 1.0) continue;
                        double a = 1.0 - r2;  // soft edge
                        for (int c = 0; c < 3; ++c) {
                            double& pv = detail::px(d, c, y, x, H, W);
                            double bv = blurred[(static_cast<std::size_t>(c) * H + y) * W + x];
                            pv = pv + a * (bv + bright - pv);
                        }
                    }
            }
            break;
        }
        case DegradationKind::moire: {
            double amp = spec.param("amplitude", 0.3);
            double lmin = spec.param("wavelength_min", 4.0);
            double lmax = spec.param("wavelength_max", 12.0);
            double lam = local.uniform(lmin, lmax);
            double om = 2.0 * std::numbers::pi / lam;
            double th = local.uniform(0.0, std::numbers::pi);
            double ph = local.uniform(0.0, 2.0 * std::numbers::pi);
            double cth = std::cos(th), sth = std::sin(th);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double f = 1.0 + amp * std::sin(om * (x * cth + y * sth) + ph);
                    for (int c = 0; c < 3; ++c) detail::px(d, c, y, x, H, W) *= f;
                }
            break;
        }
        case DegradationKind::snow: {
            int count = static_cast<int>(spec.param("count", 15.0));
            double smin = spec.param("sigma_min", 0.8);
            double smax = spec.param("sigma_max", 1.6);
            double bmin = spec.param("brightness_min", 0.7);
            double bmax = spec.param("brightness_max", 1.0);
            for (int i = 0; i < count; ++i) {
                double cx = local.uniform(0.0, static_cast<double>(W));
                double cy = local.uniform(0.0, static_cast<double>(H));
                double sg = local.uniform(smin, smax);
                double b = local.uniform(bmin, bmax);
                int r = static_cast<int>(std::ceil(3.0 * sg));
                int x0 = std::max(0, static_cast<int>(cx) - r),
                    x1 = std::min(W - 1, static_cast<int>(cx) + r);
                int y0 = std::max(0, static_cast<int>(cy) - r),
                    y1 = std::min(H - 1, static_cast<int>(cy) + r);
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        double g = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) /
                                            (2.0 * sg * sg));
                        for (int c = 0; c < 3; ++c) {
                            double& pv = detail::px(d, c, y, x, H, W);
                            pv = pv + g * (b - pv) * (b > pv ? 1.0 : 0.0);
                        }
                    }
            }
            break;
        }
        case DegradationKind::shadow: {
            double fmin = spec.param("factor_min", 0.4);
            double fmax = spec.param("factor_max", 0.7);
            double factor = local.uniform(fmin, fmax);
            // random convex quad: four points around a random center, sorted by angle
            double cx = local.uniform(0.25 * W, 0.75 * W);
            double cy = local.uniform(0.25 * H, 0.75 * H);
            double vx[4], vy[4], va[4];
            for (int v = 0; v < 4; ++v) {
                va[v] = local.uniform(0.0, 2.0 * std::numbers::pi);
                double r = local.uniform(0.3, 0.7) * std::min(H, W);
                vx[v] = cx + r * std::cos(va[v]);
                vy[v] = cy + r * std::sin(va[v]);
            }
            // sort vertices by angle -> convex polygon
            int order[4] = {0, 1, 2, 3};
            std::sort(order, order + 4, [&](int a, int b) { return va[a] < va[b]; });
            auto inside = [&](double x, double y) {
                for (int v = 0; v < 4; ++v) {
                    int a = order[v], b = order[(v + 1) % 4];
                    double cr = (vx[b] - vx[a]) * (y - vy[a]) - (vy[b] - vy[a]) * (x - vx[a]);
                    if (cr < 0.0) return false;
                }
                return true;
            };
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (inside(x + 0.5, y + 0.5))
                        for (int c = 0; c < 3; ++c) detail::px(d, c, y, x, H, W) *= factor;
            break;
        }
    }

    for (double& v : d) v = std::clamp(v, 0.0, 1.0);
    (void)hw;
    return Tensor({3, H, W}, std::move(d));
}

// ---- pair sampling ----------------------------------------------------------

struct TrainingPair {
    Tensor corrupted;
    Tensor clean;
    std::string task_id;
};

enum class Phase { pretrain, finetune };

// pretrain: uniform over pretrain-known tasks; finetune: the named task only.
inline TrainingPair sample_pair(const TaskSet& tasks, Phase phase, const std::string& finetune_task,
                                int H, int W, Rng& rng) {
    tasks.validate();
    const DegradationSpec* spec = nullptr;
    if (phase == Phase::pretrain) {
        auto idx = tasks.pretrain_indices();
        spec = &tasks.tasks[idx[rng.uniform_index(idx.size())]];
    } else {
        spec = &tasks.find(finetune_task);
    }
    Tensor clean = gen_clean_patch(H, W, rng);
    Tensor corrupted = apply_degradation(clean, *spec, rng);
    return TrainingPair{std::move(corrupted), std::move(clean), spec->name};
}

}  // namespace tape
