#include "prostlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prostlab {
namespace {

// Half-pixel mapping: destination index i samples source coordinate
// (i + 0.5) * (src / dst) - 0.5. Equal sizes give the identity exactly.
inline double src_coord(std::size_t i, std::size_t src, std::size_t dst) {
    return (static_cast<double>(i) + 0.5) * (static_cast<double>(src) / static_cast<double>(dst)) - 0.5;
}

inline std::size_t clamp_index(long v, std::size_t n) {
    if (v < 0) return 0;
    if (v >= static_cast<long>(n)) return n - 1;
    return static_cast<std::size_t>(v);
}

}  // namespace

int conv_output_size(const ConvSpec& spec) {
    if (spec.kernel < 1 || spec.stride < 1 || spec.padding < 0 || spec.dilation < 1)
        throw std::invalid_argument("conv_output_size: invalid spec");
    const int numerator =
        spec.input_dim + 2 * spec.padding - spec.dilation * (spec.kernel - 1) - 1;
    if (numerator < 0) throw std::invalid_argument("conv_output_size: non-positive output");
    return numerator / spec.stride + 1;
}

std::optional<BBox2D> slice_bbox(const TensorU8& mask_slice) {
    if (mask_slice.rank() != 2) throw std::invalid_argument("slice_bbox: rank-2 input expected");
    const std::size_t h = mask_slice.dim(0), w = mask_slice.dim(1);
    int rmin = -1, rmax = -1, cmin = static_cast<int>(w), cmax = -1;
    for (std::size_t r = 0; r < h; ++r) {
        const std::uint8_t* row = mask_slice.data() + r * w;
        int first = -1, last = -1;
        for (std::size_t c = 0; c < w; ++c) {
            if (row[c]) {
                if (first < 0) first = static_cast<int>(c);
                last = static_cast<int>(c);
            }
        }
        if (first >= 0) {
            if (rmin < 0) rmin = static_cast<int>(r);
            rmax = static_cast<int>(r);
            cmin = std::min(cmin, first);
            cmax = std::max(cmax, last);
        }
    }
    if (rmin < 0) return std::nullopt;
    return BBox2D{rmin, rmax, cmin, cmax};
}

LesionLocation max_area_slice(const MaskVolume& mask) {
    const std::size_t s = mask.slices(), h = mask.height(), w = mask.width();
    int best_slice = -1;
    BBox2D best_box;
    int best_area = 0;
    for (std::size_t z = 0; z < s; ++z) {
        TensorU8 slice({h, w});
        std::copy_n(mask.voxels.data() + z * h * w, h * w, slice.data());
        const auto box = slice_bbox(slice);
        if (!box) continue;
        if (box->area() > best_area) {
            best_area = box->area();
            best_box = *box;
            best_slice = static_cast<int>(z);
        }
    }
    if (best_slice < 0) throw std::invalid_argument("max_area_slice: empty mask");
    LesionLocation loc;
    loc.slice_index = best_slice;
    loc.bbox = best_box;
    loc.center_row = (best_box.row_min + best_box.row_max) / 2;
    loc.center_col = (best_box.col_min + best_box.col_max) / 2;
    loc.width = best_box.width();
    loc.height = best_box.height();
    loc.area = best_area;
    return loc;
}

float bilinear_at(const TensorF& image, double row, double col) {
    const std::size_t h = image.dim(0), w = image.dim(1);
    const double rf = std::floor(row), cf = std::floor(col);
    const std::size_t r0 = clamp_index(static_cast<long>(rf), h);
    const std::size_t r1 = clamp_index(static_cast<long>(rf) + 1, h);
    const std::size_t c0 = clamp_index(static_cast<long>(cf), w);
    const std::size_t c1 = clamp_index(static_cast<long>(cf) + 1, w);
    const double dr = row - rf, dc = col - cf;
    const double top = image.at2(r0, c0) * (1.0 - dc) + image.at2(r0, c1) * dc;
    const double bot = image.at2(r1, c0) * (1.0 - dc) + image.at2(r1, c1) * dc;
    return static_cast<float>(top * (1.0 - dr) + bot * dr);
}

namespace {

TensorF resize_slice(const TensorF& src, std::size_t out_h, std::size_t out_w) {
    TensorF out({out_h, out_w});
    const std::size_t in_h = src.dim(0), in_w = src.dim(1);
    for (std::size_t r = 0; r < out_h; ++r) {
        const double sr = src_coord(r, in_h, out_h);
        for (std::size_t c = 0; c < out_w; ++c)
            out.at2(r, c) = bilinear_at(src, sr, src_coord(c, in_w, out_w));
    }
    return out;
}

TensorU8 resize_slice_nearest(const TensorU8& src, std::size_t out_h, std::size_t out_w) {
    TensorU8 out({out_h, out_w});
    const std::size_t in_h = src.dim(0), in_w = src.dim(1);
    for (std::size_t r = 0; r < out_h; ++r) {
        const std::size_t sr = clamp_index(std::lround(src_coord(r, in_h, out_h)), in_h);
        for (std::size_t c = 0; c < out_w; ++c) {
            const std::size_t sc = clamp_index(std::lround(src_coord(c, in_w, out_w)), in_w);
            out.at2(r, c) = src.at2(sr, sc) ? 1 : 0;
        }
    }
    return out;
}

}  // namespace

Volume3D resample_volume(const Volume3D& vol, std::size_t target_hw) {
    if (target_hw < 1) throw std::invalid_argument("resample_volume: target must be >= 1");
    Volume3D out;
    out.sequence = vol.sequence;
    out.spacing = vol.spacing;
    const std::size_t s = vol.slices();
    out.voxels = TensorF({s, target_hw, target_hw});
    for (std::size_t z = 0; z < s; ++z) {
        TensorF slice = extract_slice(vol, z);
        TensorF resized = resize_slice(slice, target_hw, target_hw);
        std::copy_n(resized.data(), resized.size(), out.voxels.data() + z * target_hw * target_hw);
    }
    return out;
}

MaskVolume resample_mask(const MaskVolume& mask, std::size_t target_hw) {
    if (target_hw < 1) throw std::invalid_argument("resample_mask: target must be >= 1");
    MaskVolume out;
    out.kind = mask.kind;
    const std::size_t s = mask.slices();
    out.voxels = TensorU8({s, target_hw, target_hw});
    for (std::size_t z = 0; z < s; ++z) {
        TensorU8 slice = extract_mask_slice(mask, z);
        TensorU8 resized = resize_slice_nearest(slice, target_hw, target_hw);
        std::copy_n(resized.data(), resized.size(), out.voxels.data() + z * target_hw * target_hw);
    }
    return out;
}

Volume3D resize_volume(const Volume3D& vol, const std::array<std::size_t, 3>& extents) {
    Volume3D out;
    out.sequence = vol.sequence;
    out.spacing = vol.spacing;
    out.voxels = TensorF({extents[0], extents[1], extents[2]});
    const std::size_t in_s = vol.slices(), in_h = vol.height(), in_w = vol.width();
    for (std::size_t z = 0; z < extents[0]; ++z) {
        const double sz = src_coord(z, in_s, extents[0]);
        const long z0l = static_cast<long>(std::floor(sz));
        const std::size_t z0 = clamp_index(z0l, in_s), z1 = clamp_index(z0l + 1, in_s);
        const double dz = sz - std::floor(sz);
        TensorF s0 = extract_slice(vol, z0), s1 = extract_slice(vol, z1);
        for (std::size_t r = 0; r < extents[1]; ++r) {
            const double sr = src_coord(r, in_h, extents[1]);
            for (std::size_t c = 0; c < extents[2]; ++c) {
                const double sc = src_coord(c, in_w, extents[2]);
                const double v0 = bilinear_at(s0, sr, sc);
                const double v1 = bilinear_at(s1, sr, sc);
                out.voxels.at3(z, r, c) = static_cast<float>(v0 * (1.0 - dz) + v1 * dz);
            }
        }
    }
    return out;
}

MaskVolume resize_mask(const MaskVolume& mask, const std::array<std::size_t, 3>& extents) {
    MaskVolume out;
    out.kind = mask.kind;
    out.voxels = TensorU8({extents[0], extents[1], extents[2]});
    const std::size_t in_s = mask.slices(), in_h = mask.height(), in_w = mask.width();
    for (std::size_t z = 0; z < extents[0]; ++z) {
        const std::size_t sz = clamp_index(std::lround(src_coord(z, in_s, extents[0])), in_s);
        for (std::size_t r = 0; r < extents[1]; ++r) {
            const std::size_t sr = clamp_index(std::lround(src_coord(r, in_h, extents[1])), in_h);
            for (std::size_t c = 0; c < extents[2]; ++c) {
                const std::size_t sc = clamp_index(std::lround(src_coord(c, in_w, extents[2])), in_w);
                out.voxels.at3(z, r, c) = mask.voxels.at3(sz, sr, sc) ? 1 : 0;
            }
        }
    }
    return out;
}

TensorF crop_adjusted(const TensorF& image_slice, const BBox2D& bbox, std::size_t crop_size) {
    const std::size_t h = image_slice.dim(0), w = image_slice.dim(1);
    if (bbox.row_min < 0 || bbox.col_min < 0 || bbox.row_max >= static_cast<int>(h) ||
        bbox.col_max >= static_cast<int>(w) || bbox.row_min > bbox.row_max ||
        bbox.col_min > bbox.col_max)
        throw std::invalid_argument("crop_adjusted: bbox outside slice");
    TensorF region({static_cast<std::size_t>(bbox.height()), static_cast<std::size_t>(bbox.width())});
    for (int r = 0; r < bbox.height(); ++r)
        for (int c = 0; c < bbox.width(); ++c)
            region.at2(r, c) = image_slice.at2(bbox.row_min + r, bbox.col_min + c);
    return resize_slice(region, crop_size, crop_size);
}

TensorF crop_fixed(const TensorF& image_slice, int center_row, int center_col,
                   std::size_t crop_size) {
    const std::size_t h = image_slice.dim(0), w = image_slice.dim(1);
    if (h < crop_size || w < crop_size)
        throw std::invalid_argument("crop_fixed: slice smaller than crop");
    const long half = static_cast<long>(crop_size) / 2;
    long r0 = static_cast<long>(center_row) - half;
    long c0 = static_cast<long>(center_col) - half;
    r0 = std::clamp(r0, 0L, static_cast<long>(h - crop_size));
    c0 = std::clamp(c0, 0L, static_cast<long>(w - crop_size));
    TensorF out({crop_size, crop_size});
    for (std::size_t r = 0; r < crop_size; ++r)
        for (std::size_t c = 0; c < crop_size; ++c)
            out.at2(r, c) = image_slice.at2(static_cast<std::size_t>(r0) + r,
                                            static_cast<std::size_t>(c0) + c);
    return out;
}

TensorF extract_slice(const Volume3D& vol, std::size_t index) {
    const std::size_t h = vol.height(), w = vol.width();
    TensorF out({h, w});
    std::copy_n(vol.voxels.data() + index * h * w, h * w, out.data());
    return out;
}

TensorU8 extract_mask_slice(const MaskVolume& mask, std::size_t index) {
    const std::size_t h = mask.height(), w = mask.width();
    TensorU8 out({h, w});
    std::copy_n(mask.voxels.data() + index * h * w, h * w, out.data());
    return out;
}

}  // namespace prostlab
