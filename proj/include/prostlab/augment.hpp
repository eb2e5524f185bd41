#pragma once

#include <array>
#include <vector>

#include "prostlab/rng.hpp"
#include "prostlab/volume.hpp"

namespace prostlab {

// Per-sample 2D augmentation for lesion crops: random crop to the model
// input size, independent flips, then one affine draw (rotation, scale,
// shear, translation) applied identically to every channel.
struct Augment2DParams {
    std::size_t crop_to = 28;
    double p_flip_h = 0.5;
    double p_flip_v = 0.5;
    double max_rotation_deg = 15.0;
    double scale_min = 0.50;
    double scale_max = 1.50;
    double max_shear_deg = 15.0;
    double max_translate_frac = 0.07;
};

struct ElasticParams {
    int spline_order = 3;  // 1 = bilinear, 3 = bicubic
    double alpha = 1000.0;
    double sigma = 40.0;
    double probability = 0.5;
};

// Volume-level augmentations. Magnitudes beyond the elastic ones are
// conservative defaults; each op fires independently with `probability`.
struct Augment3DParams {
    ElasticParams elastic;
    double contrast_gamma_min = 0.8;
    double contrast_gamma_max = 1.2;
    double gaussian_sigma_frac = 0.05;
    bool poisson_enabled = false;
    double poisson_scale = 255.0;
    double rotation_deg_min = -10.0;
    double rotation_deg_max = 10.0;
    double probability = 0.5;
};

// crop: one rank-2 tensor per channel, all with identical extents.
std::vector<TensorF> augment2d(const std::vector<TensorF>& crop, const Augment2DParams& params,
                               RandomStream& rng);

TensorF center_crop(const TensorF& crop, std::size_t input_size);

// One smoothed random displacement field per in-plane axis, applied
// slice-consistently to the volume (spline interpolation) and to the masks
// (nearest neighbour, so they stay binary).
void elastic_deform3d(Volume3D& vol, std::vector<MaskVolume*> masks, const ElasticParams& params,
                      RandomStream& rng);

// Gamma contrast, additive Gaussian noise scaled by the volume std, and
// optional Poisson resampling. Masks are never touched by intensity ops.
void intensity_augment3d(Volume3D& vol, const Augment3DParams& params, RandomStream& rng);

// In-plane rotation by one drawn angle, same for every slice.
void rotate3d(Volume3D& vol, std::vector<MaskVolume*> masks, const Augment3DParams& params,
              RandomStream& rng);

// Applies the full 3D policy (rotate, elastic, intensity) with the
// configured probabilities. Used by the segmentation trainer.
void augment3d(Volume3D& vol, std::vector<MaskVolume*> masks, const Augment3DParams& params,
               RandomStream& rng);

// Warp primitives shared by the geometric ops; exposed for the
// image/mask-consistency tests. Coordinates map output (r,c) to source
// (src_r, src_c); border handling is edge clamp.
enum class WarpInterp { Nearest, Bilinear, Bicubic };
TensorF warp_slice(const TensorF& src, const TensorF& src_rows, const TensorF& src_cols,
                   WarpInterp interp);

}  // namespace prostlab
