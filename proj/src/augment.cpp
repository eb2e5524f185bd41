#include "prostlab/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prostlab {
namespace {

constexpr double kPi = 3.14159265358979323846;

inline std::size_t clamp_index(long v, std::size_t n) {
    if (v < 0) return 0;
    if (v >= static_cast<long>(n)) return n - 1;
    return static_cast<std::size_t>(v);
}

inline float sample_nearest(const TensorF& src, double r, double c) {
    return src.at2(clamp_index(std::lround(r), src.dim(0)), clamp_index(std::lround(c), src.dim(1)));
}

inline float sample_bilinear(const TensorF& src, double r, double c) {
    const double rf = std::floor(r), cf = std::floor(c);
    const std::size_t r0 = clamp_index(static_cast<long>(rf), src.dim(0));
    const std::size_t r1 = clamp_index(static_cast<long>(rf) + 1, src.dim(0));
    const std::size_t c0 = clamp_index(static_cast<long>(cf), src.dim(1));
    const std::size_t c1 = clamp_index(static_cast<long>(cf) + 1, src.dim(1));
    const double dr = r - rf, dc = c - cf;
    const double top = src.at2(r0, c0) * (1.0 - dc) + src.at2(r0, c1) * dc;
    const double bot = src.at2(r1, c0) * (1.0 - dc) + src.at2(r1, c1) * dc;
    return static_cast<float>(top * (1.0 - dr) + bot * dr);
}

// Catmull-Rom weights; reproduces the sample exactly at integer coordinates.
inline double cubic_w(double t, int i) {
    switch (i) {
        case 0: return ((-0.5 * t + 1.0) * t - 0.5) * t;
        case 1: return (1.5 * t - 2.5) * t * t + 1.0;
        case 2: return ((-1.5 * t + 2.0) * t + 0.5) * t;
        default: return (0.5 * t - 0.5) * t * t;
    }
}

inline float sample_bicubic(const TensorF& src, double r, double c) {
    const double rf = std::floor(r), cf = std::floor(c);
    const double tr = r - rf, tc = c - cf;
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
        const std::size_t rr = clamp_index(static_cast<long>(rf) + i - 1, src.dim(0));
        double row = 0.0;
        for (int j = 0; j < 4; ++j) {
            const std::size_t cc = clamp_index(static_cast<long>(cf) + j - 1, src.dim(1));
            row += cubic_w(tc, j) * src.at2(rr, cc);
        }
        acc += cubic_w(tr, i) * row;
    }
    return static_cast<float>(acc);
}

// Separable Gaussian blur of a rank-2 field, kernel normalized to sum 1.
void gaussian_blur2d(TensorF& field, double sigma) {
    if (sigma <= 0.0) return;
    const std::size_t h = field.dim(0), w = field.dim(1);
    const long radius = std::min<long>(static_cast<long>(std::ceil(3.0 * sigma)),
                                       static_cast<long>(std::max(h, w)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (static_cast<double>(i) / sigma) * (static_cast<double>(i) / sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : kernel) v /= sum;

    TensorF tmp({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (long i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       field.at2(r, clamp_index(static_cast<long>(c) + i, w));
            tmp.at2(r, c) = static_cast<float>(acc);
        }
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (long i = -radius; i <= radius; ++i)
                acc += kernel[static_cast<std::size_t>(i + radius)] *
                       tmp.at2(clamp_index(static_cast<long>(r) + i, h), c);
            field.at2(r, c) = static_cast<float>(acc);
        }
}

struct Affine2D {
    // Maps output pixel (r, c) to source coordinates.
    double m00, m01, m10, m11, tr, tc;

    void apply(double r, double c, double& sr, double& sc) const {
        sr = m00 * r + m01 * c + tr;
        sc = m10 * r + m11 * c + tc;
    }
};

// Inverse map of "scale, shear, rotate about the centre, then translate".
Affine2D make_inverse_affine(double rot_deg, double scale, double shear_deg, double t_rows,
                             double t_cols, double center_r, double center_c) {
    const double th = rot_deg * kPi / 180.0;
    const double sh = std::tan(shear_deg * kPi / 180.0);
    // Forward: p' = R * K * S * (p - c) + c + t, with S = scale*I and
    // K = [[1, sh], [0, 1]] shearing columns.
    const double a = std::cos(th) * scale, b = (std::cos(th) * sh - std::sin(th)) * scale;
    const double d = std::sin(th) * scale, e = (std::sin(th) * sh + std::cos(th)) * scale;
    const double det = a * e - b * d;
    if (std::abs(det) < 1e-12) throw std::invalid_argument("augment2d: degenerate affine");
    const double ia = e / det, ib = -b / det, id = -d / det, ie = a / det;
    Affine2D inv{};
    inv.m00 = ia;
    inv.m01 = ib;
    inv.m10 = id;
    inv.m11 = ie;
    // src = A^-1 * (dst - c - t) + c
    inv.tr = center_r - ia * (center_r + t_rows) - ib * (center_c + t_cols);
    inv.tc = center_c - id * (center_r + t_rows) - ie * (center_c + t_cols);
    return inv;
}

bool is_identity(const Affine2D& a) {
    return a.m00 == 1.0 && a.m01 == 0.0 && a.m10 == 0.0 && a.m11 == 1.0 && a.tr == 0.0 &&
           a.tc == 0.0;
}

}  // namespace

TensorF warp_slice(const TensorF& src, const TensorF& src_rows, const TensorF& src_cols,
                   WarpInterp interp) {
    const std::size_t h = src_rows.dim(0), w = src_rows.dim(1);
    TensorF out({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double sr = src_rows.at2(r, c), sc = src_cols.at2(r, c);
            switch (interp) {
                case WarpInterp::Nearest: out.at2(r, c) = sample_nearest(src, sr, sc); break;
                case WarpInterp::Bilinear: out.at2(r, c) = sample_bilinear(src, sr, sc); break;
                case WarpInterp::Bicubic: out.at2(r, c) = sample_bicubic(src, sr, sc); break;
            }
        }
    return out;
}

TensorF center_crop(const TensorF& crop, std::size_t input_size) {
    const std::size_t h = crop.dim(0), w = crop.dim(1);
    if (input_size > h || input_size > w)
        throw std::invalid_argument("center_crop: input size exceeds source");
    const std::size_t r0 = (h - input_size) / 2, c0 = (w - input_size) / 2;
    TensorF out({input_size, input_size});
    for (std::size_t r = 0; r < input_size; ++r)
        for (std::size_t c = 0; c < input_size; ++c) out.at2(r, c) = crop.at2(r0 + r, c0 + c);
    return out;
}

std::vector<TensorF> augment2d(const std::vector<TensorF>& crop, const Augment2DParams& params,
                               RandomStream& rng) {
    if (crop.empty()) throw std::invalid_argument("augment2d: no channels");
    const std::size_t h = crop[0].dim(0), w = crop[0].dim(1);
    for (const auto& ch : crop)
        if (ch.dim(0) != h || ch.dim(1) != w)
            throw std::invalid_argument("augment2d: channels must share geometry");
    if (params.crop_to > h || params.crop_to > w)
        throw std::invalid_argument("augment2d: crop_to exceeds source size");
    const std::size_t n = params.crop_to;

    // One draw sequence for all channels, in a fixed order.
    const std::size_t r0 = static_cast<std::size_t>(rng.uniform_index(h - n + 1));
    const std::size_t c0 = static_cast<std::size_t>(rng.uniform_index(w - n + 1));
    const bool flip_h = rng.bernoulli(params.p_flip_h);
    const bool flip_v = rng.bernoulli(params.p_flip_v);
    const double rot = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg);
    const double scale = rng.uniform(params.scale_min, params.scale_max);
    const double shear = rng.uniform(-params.max_shear_deg, params.max_shear_deg);
    const double t_rows = rng.uniform(-params.max_translate_frac, params.max_translate_frac) *
                          static_cast<double>(n);
    const double t_cols = rng.uniform(-params.max_translate_frac, params.max_translate_frac) *
                          static_cast<double>(n);

    const double center = (static_cast<double>(n) - 1.0) / 2.0;
    const Affine2D inv = make_inverse_affine(rot, scale, shear, t_rows, t_cols, center, center);

    std::vector<TensorF> out;
    out.reserve(crop.size());
    for (const auto& ch : crop) {
        TensorF window({n, n});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                const std::size_t rr = flip_v ? n - 1 - r : r;
                const std::size_t cc = flip_h ? n - 1 - c : c;
                window.at2(r, c) = ch.at2(r0 + rr, c0 + cc);
            }
        if (is_identity(inv)) {
            out.push_back(std::move(window));
            continue;
        }
        TensorF rows({n, n}), cols({n, n});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) {
                double sr, sc;
                inv.apply(static_cast<double>(r), static_cast<double>(c), sr, sc);
                rows.at2(r, c) = static_cast<float>(sr);
                cols.at2(r, c) = static_cast<float>(sc);
            }
        out.push_back(warp_slice(window, rows, cols, WarpInterp::Bilinear));
    }
    return out;
}

void elastic_deform3d(Volume3D& vol, std::vector<MaskVolume*> masks, const ElasticParams& params,
                      RandomStream& rng) {
    const std::size_t s = vol.slices(), h = vol.height(), w = vol.width();
    for (MaskVolume* m : masks)
        if (m->slices() != s || m->height() != h || m->width() != w)
            throw std::invalid_argument("elastic_deform3d: extent mismatch");

    // One in-plane displacement field, shared by every slice.
    TensorF dr({h, w}), dc({h, w});
    for (std::size_t i = 0; i < dr.size(); ++i) dr[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (std::size_t i = 0; i < dc.size(); ++i) dc[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    gaussian_blur2d(dr, params.sigma);
    gaussian_blur2d(dc, params.sigma);

    TensorF rows({h, w}), cols({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            rows.at2(r, c) = static_cast<float>(static_cast<double>(r) + params.alpha * dr.at2(r, c));
            cols.at2(r, c) = static_cast<float>(static_cast<double>(c) + params.alpha * dc.at2(r, c));
        }

    const WarpInterp interp = params.spline_order >= 3 ? WarpInterp::Bicubic : WarpInterp::Bilinear;
    for (std::size_t z = 0; z < s; ++z) {
        TensorF slice({h, w});
        std::copy_n(vol.voxels.data() + z * h * w, h * w, slice.data());
        TensorF warped = warp_slice(slice, rows, cols, interp);
        std::copy_n(warped.data(), warped.size(), vol.voxels.data() + z * h * w);
    }
    for (MaskVolume* m : masks) {
        for (std::size_t z = 0; z < s; ++z) {
            TensorF slice({h, w});
            for (std::size_t i = 0; i < h * w; ++i)
                slice[i] = static_cast<float>(m->voxels.data()[z * h * w + i]);
            TensorF warped = warp_slice(slice, rows, cols, WarpInterp::Nearest);
            for (std::size_t i = 0; i < h * w; ++i)
                m->voxels.data()[z * h * w + i] = warped[i] > 0.5f ? 1 : 0;
        }
    }
}

void intensity_augment3d(Volume3D& vol, const Augment3DParams& params, RandomStream& rng) {
    auto& vox = vol.voxels.raw();

    if (rng.bernoulli(params.probability)) {
        const double gamma = rng.uniform(params.contrast_gamma_min, params.contrast_gamma_max);
        float lo = vox[0], hi = vox[0];
        for (float v : vox) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double range = static_cast<double>(hi) - static_cast<double>(lo);
        if (range > 0.0 && gamma != 1.0) {
            for (auto& v : vox)
                v = static_cast<float>(std::pow((v - lo) / range, gamma) * range + lo);
        }
    }

    if (rng.bernoulli(params.probability) && params.gaussian_sigma_frac > 0.0) {
        double mean = 0.0;
        for (float v : vox) mean += v;
        mean /= static_cast<double>(vox.size());
        double var = 0.0;
        for (float v : vox) var += (v - mean) * (v - mean);
        var /= static_cast<double>(vox.size());
        const double sigma = params.gaussian_sigma_frac * std::sqrt(var);
        for (auto& v : vox) v = static_cast<float>(v + sigma * rng.normal());
    }

    if (params.poisson_enabled && rng.bernoulli(params.probability)) {
        float lo = 0.0f;
        for (float v : vox) lo = std::min(lo, v);
        const double shift = lo < 0.0f ? -static_cast<double>(lo) : 0.0;
        for (auto& v : vox) {
            const double lambda = (static_cast<double>(v) + shift) * params.poisson_scale;
            double counts;
            if (lambda < 30.0) {
                // Knuth sampling for small rates.
                const double limit = std::exp(-lambda);
                double prod = rng.uniform01();
                long k = 0;
                while (prod > limit) {
                    prod *= rng.uniform01();
                    ++k;
                }
                counts = static_cast<double>(k);
            } else {
                counts = std::max(0.0, std::round(lambda + std::sqrt(lambda) * rng.normal()));
            }
            v = static_cast<float>(counts / params.poisson_scale - shift);
        }
    }
}

void rotate3d(Volume3D& vol, std::vector<MaskVolume*> masks, const Augment3DParams& params,
              RandomStream& rng) {
    const std::size_t s = vol.slices(), h = vol.height(), w = vol.width();
    for (MaskVolume* m : masks)
        if (m->slices() != s || m->height() != h || m->width() != w)
            throw std::invalid_argument("rotate3d: extent mismatch");

    const double angle = rng.uniform(params.rotation_deg_min, params.rotation_deg_max);
    if (angle == 0.0) return;
    const double cr = (static_cast<double>(h) - 1.0) / 2.0;
    const double cc = (static_cast<double>(w) - 1.0) / 2.0;
    const Affine2D inv = make_inverse_affine(angle, 1.0, 0.0, 0.0, 0.0, cr, cc);

    TensorF rows({h, w}), cols({h, w});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            double sr, sc;
            inv.apply(static_cast<double>(r), static_cast<double>(c), sr, sc);
            rows.at2(r, c) = static_cast<float>(sr);
            cols.at2(r, c) = static_cast<float>(sc);
        }

    for (std::size_t z = 0; z < s; ++z) {
        TensorF slice({h, w});
        std::copy_n(vol.voxels.data() + z * h * w, h * w, slice.data());
        TensorF warped = warp_slice(slice, rows, cols, WarpInterp::Bilinear);
        std::copy_n(warped.data(), warped.size(), vol.voxels.data() + z * h * w);
    }
    for (MaskVolume* m : masks)
        for (std::size_t z = 0; z < s; ++z) {
            TensorF slice({h, w});
            for (std::size_t i = 0; i < h * w; ++i)
                slice[i] = static_cast<float>(m->voxels.data()[z * h * w + i]);
            TensorF warped = warp_slice(slice, rows, cols, WarpInterp::Nearest);
            for (std::size_t i = 0; i < h * w; ++i)
                m->voxels.data()[z * h * w + i] = warped[i] > 0.5f ? 1 : 0;
        }
}

void augment3d(Volume3D& vol, std::vector<MaskVolume*> masks, const Augment3DParams& params,
               RandomStream& rng) {
    if (rng.bernoulli(params.probability)) rotate3d(vol, masks, params, rng);
    if (rng.bernoulli(params.elastic.probability)) elastic_deform3d(vol, masks, params.elastic, rng);
    intensity_augment3d(vol, params, rng);
}

}  // namespace prostlab
