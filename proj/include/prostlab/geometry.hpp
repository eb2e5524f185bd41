#pragma once

#include <cstdint>
#include <optional>

#include "prostlab/volume.hpp"

namespace prostlab {

// Inclusive 2D bounding box in (row, col) slice coordinates.
struct BBox2D {
    int row_min = 0;
    int row_max = 0;
    int col_min = 0;
    int col_max = 0;

    int height() const { return row_max - row_min + 1; }
    int width() const { return col_max - col_min + 1; }
    int area() const { return height() * width(); }
};

// Where a lesion lives: the slice whose bbox area is largest, the box
// itself and its floor midpoint.
struct LesionLocation {
    int slice_index = 0;
    BBox2D bbox;
    int center_row = 0;
    int center_col = 0;
    int width = 0;
    int height = 0;
    int area = 0;
};

// One convolution/pooling axis: output = floor((X + 2P - D(K-1) - 1)/S) + 1.
struct ConvSpec {
    int input_dim = 1;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

int conv_output_size(const ConvSpec& spec);

// Tight bbox of the positive pixels of one binary slice; nullopt when empty.
std::optional<BBox2D> slice_bbox(const TensorU8& mask_slice);

// Slice maximizing bbox width*height; ties resolved to the lowest index.
LesionLocation max_area_slice(const MaskVolume& mask);

// Per-slice bilinear resize to target_hw x target_hw; slice count unchanged.
Volume3D resample_volume(const Volume3D& vol, std::size_t target_hw);
// Nearest-neighbour variant for masks, re-binarized.
MaskVolume resample_mask(const MaskVolume& mask, std::size_t target_hw);

// Full 3D resize (slices included): trilinear for images, nearest for masks.
// Used to bring volumes to a segmentation input extent.
Volume3D resize_volume(const Volume3D& vol, const std::array<std::size_t, 3>& extents);
MaskVolume resize_mask(const MaskVolume& mask, const std::array<std::size_t, 3>& extents);

// Extract exactly the bbox region of a slice, then bilinearly resize it to
// crop_size x crop_size ("adjusted box").
TensorF crop_adjusted(const TensorF& image_slice, const BBox2D& bbox, std::size_t crop_size);

// Fixed-size window centred on (row, col); windows that would cross a
// border are shifted inward so the crop always lies inside the slice.
TensorF crop_fixed(const TensorF& image_slice, int center_row, int center_col,
                   std::size_t crop_size);

// Slice `index` of a volume as a rank-2 tensor (copy).
TensorF extract_slice(const Volume3D& vol, std::size_t index);
TensorU8 extract_mask_slice(const MaskVolume& mask, std::size_t index);

// Shared bilinear sampler (half-pixel centres, edge clamp). Exposed so crops
// and resamplers agree on one convention.
float bilinear_at(const TensorF& image, double row, double col);

}  // namespace prostlab
