#include "prostlab/models.hpp"

#include <stdexcept>

namespace prostlab {
namespace {

template <typename T>
TensorND<T> concat_channels(const TensorND<T>& a, const TensorND<T>& b) {
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const std::size_t vox = a.size() / (n * ca);
    TensorND<T> out({n, ca + cb, a.dim(2), a.dim(3), a.dim(4)});
    for (std::size_t ni = 0; ni < n; ++ni) {
        std::copy_n(a.data() + ni * ca * vox, ca * vox, out.data() + ni * (ca + cb) * vox);
        std::copy_n(b.data() + ni * cb * vox, cb * vox,
                    out.data() + (ni * (ca + cb) + ca) * vox);
    }
    return out;
}

template <typename T>
void split_channels(const TensorND<T>& g, std::size_t ca, TensorND<T>& da, TensorND<T>& db) {
    const std::size_t n = g.dim(0), c = g.dim(1), cb = c - ca;
    const std::size_t vox = g.size() / (n * c);
    da = TensorND<T>({n, ca, g.dim(2), g.dim(3), g.dim(4)});
    db = TensorND<T>({n, cb, g.dim(2), g.dim(3), g.dim(4)});
    for (std::size_t ni = 0; ni < n; ++ni) {
        std::copy_n(g.data() + ni * c * vox, ca * vox, da.data() + ni * ca * vox);
        std::copy_n(g.data() + (ni * c + ca) * vox, cb * vox, db.data() + ni * cb * vox);
    }
}

template <typename T>
void add_into(TensorND<T>& acc, const TensorND<T>& other) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += other[i];
}

constexpr std::array<int, 3> k111{1, 1, 1};
constexpr std::array<int, 3> k333{3, 3, 3};
constexpr std::array<int, 3> s111{1, 1, 1};
constexpr std::array<int, 3> p000{0, 0, 0};
constexpr std::array<int, 3> p111{1, 1, 1};

}  // namespace

const char* model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::XmasNetBinary: return "xmasnet_binary";
        case ModelKind::XmasNetPirads: return "xmasnet_pirads";
        case ModelKind::UNet3D: return "unet3d";
        case ModelKind::ResNet18_3D: return "resnet18_3d";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// XmasNet
// ---------------------------------------------------------------------------

template <typename T>
XmasNet<T>::XmasNet(const ModelSpec& spec) : spec_(spec) {
    const std::size_t h = spec.input_extent[1], w = spec.input_extent[2];
    if (h % 4 != 0 || w % 4 != 0)
        throw std::invalid_argument("xmasnet: input height/width must be divisible by 4");
    if (spec.in_channels < 1 || spec.in_channels > 2)
        throw std::invalid_argument("xmasnet: in_channels must be 1 or 2");

    RandomStream rng(spec.init_seed);
    const std::size_t cin = static_cast<std::size_t>(spec.in_channels);
    const std::array<int, 3> k2d{1, 3, 3}, p2d{0, 1, 1};
    const std::array<int, 3> pool_k{1, 2, 2}, pool_s{1, 2, 2};
    const double g = std::sqrt(2.0);

    this->add("conv1", std::make_unique<nn::Conv3d<T>>("conv1", cin, 32, k2d, s111, p2d, rng, g));
    this->add("bn1", std::make_unique<nn::BatchNorm<T>>("bn1", 32));
    this->add("relu1", std::make_unique<nn::ReLU<T>>());
    this->add("conv2", std::make_unique<nn::Conv3d<T>>("conv2", 32, 32, k2d, s111, p2d, rng, g));
    this->add("bn2", std::make_unique<nn::BatchNorm<T>>("bn2", 32));
    this->add("relu2", std::make_unique<nn::ReLU<T>>());
    this->add("pool1", std::make_unique<nn::MaxPool3d<T>>(pool_k, pool_s));
    this->add("conv3", std::make_unique<nn::Conv3d<T>>("conv3", 32, 64, k2d, s111, p2d, rng, g));
    this->add("bn3", std::make_unique<nn::BatchNorm<T>>("bn3", 64));
    this->add("relu3", std::make_unique<nn::ReLU<T>>());
    this->add("conv4", std::make_unique<nn::Conv3d<T>>("conv4", 64, 64, k2d, s111, p2d, rng, g));
    this->add("bn4", std::make_unique<nn::BatchNorm<T>>("bn4", 64));
    this->add("relu4", std::make_unique<nn::ReLU<T>>());
    this->add("pool2", std::make_unique<nn::MaxPool3d<T>>(pool_k, pool_s));
    this->add("flatten", std::make_unique<nn::Flatten<T>>());

    flatten_length_ = (h / 4) * (w / 4) * 64;
    this->add("fc1", std::make_unique<nn::Dense<T>>("fc1", flatten_length_, 1024, rng, g));
    this->add("relu_fc1", std::make_unique<nn::ReLU<T>>());
    this->add("fc2", std::make_unique<nn::Dense<T>>("fc2", 1024, 256, rng, g));
    this->add("relu_fc2", std::make_unique<nn::ReLU<T>>());
    const std::size_t out = spec.kind == ModelKind::XmasNetBinary ? 1 : 5;
    this->add("fc3", std::make_unique<nn::Dense<T>>("fc3", 256, out, rng, 1.0));
    this->finalize_records();
}

template <typename T>
TensorND<T> XmasNet<T>::forward_logits(const TensorND<T>& x, bool training) {
    TensorND<T> h = x;
    if (h.rank() == 4)  // (N, C, H, W) -> (N, C, 1, H, W)
        h = h.reshaped({h.dim(0), h.dim(1), 1, h.dim(2), h.dim(3)});
    if (h.rank() != 5) throw std::invalid_argument("xmasnet: expected (N,C,H,W) input");
    for (std::size_t i = 0; i < this->layers_.size(); ++i) h = this->run(i, h, training);
    return h;
}

template <typename T>
TensorND<T> XmasNet<T>::backward_from_logits(const TensorND<T>& dlogits) {
    TensorND<T> g = dlogits;
    for (std::size_t i = this->layers_.size(); i-- > 0;) g = this->layers_[i]->backward(g);
    return g;
}

// ---------------------------------------------------------------------------
// 3D U-Net
// ---------------------------------------------------------------------------

template <typename T>
struct UNet3D<T>::Wiring {
    struct Block {
        std::array<std::size_t, 6> layers;  // conv,bn,relu,conv,bn,relu
    };
    std::array<Block, 3> enc;
    std::array<std::size_t, 3> pool;
    Block bottom;
    std::array<std::size_t, 3> up;  // indexed by level (2,1,0 used in that order)
    std::array<Block, 3> dec;
    std::size_t final_conv = 0;
    std::array<std::size_t, 3> skip_channels{};
};

template <typename T>
UNet3D<T>::UNet3D(const ModelSpec& spec) : spec_(spec), wiring_(std::make_unique<Wiring>()) {
    for (int a = 0; a < 3; ++a)
        if (spec.input_extent[static_cast<std::size_t>(a)] % 8 != 0)
            throw std::invalid_argument("unet3d: extents must be divisible by 8");
    if (spec.unet_base_width < 2 || spec.unet_base_width % 2 != 0)
        throw std::invalid_argument("unet3d: base width must be even and >= 2");

    RandomStream rng(spec.init_seed);
    const double g = std::sqrt(2.0);
    const std::size_t B = static_cast<std::size_t>(spec.unet_base_width);
    const std::array<int, 3> pool2{2, 2, 2};

    auto conv_block = [&](const std::string& prefix, std::size_t cin, std::size_t cmid,
                          std::size_t cout) {
        typename Wiring::Block blk{};
        std::size_t i = this->layers_.size();
        this->add(prefix + ".conv_a", std::make_unique<nn::Conv3d<T>>(prefix + ".conv_a", cin, cmid,
                                                                      k333, s111, p111, rng, g));
        this->add(prefix + ".bn_a", std::make_unique<nn::BatchNorm<T>>(prefix + ".bn_a", cmid));
        this->add(prefix + ".relu_a", std::make_unique<nn::ReLU<T>>());
        this->add(prefix + ".conv_b", std::make_unique<nn::Conv3d<T>>(prefix + ".conv_b", cmid, cout,
                                                                      k333, s111, p111, rng, g));
        this->add(prefix + ".bn_b", std::make_unique<nn::BatchNorm<T>>(prefix + ".bn_b", cout));
        this->add(prefix + ".relu_b", std::make_unique<nn::ReLU<T>>());
        for (std::size_t j = 0; j < 6; ++j) blk.layers[j] = i + j;
        return blk;
    };

    const std::size_t cin = static_cast<std::size_t>(spec.in_channels);
    // Analysis path: (in->B->2B), (2B->2B->4B), (4B->4B->8B).
    std::array<std::size_t, 3> skip_c{2 * B, 4 * B, 8 * B};
    wiring_->skip_channels = skip_c;
    wiring_->enc[0] = conv_block("enc1", cin, B, 2 * B);
    wiring_->pool[0] = this->layers_.size();
    this->add("pool1", std::make_unique<nn::MaxPool3d<T>>(pool2, pool2));
    wiring_->enc[1] = conv_block("enc2", 2 * B, 2 * B, 4 * B);
    wiring_->pool[1] = this->layers_.size();
    this->add("pool2", std::make_unique<nn::MaxPool3d<T>>(pool2, pool2));
    wiring_->enc[2] = conv_block("enc3", 4 * B, 4 * B, 8 * B);
    wiring_->pool[2] = this->layers_.size();
    this->add("pool3", std::make_unique<nn::MaxPool3d<T>>(pool2, pool2));

    wiring_->bottom = conv_block("bottom", 8 * B, 8 * B, 16 * B);

    // Synthesis path; the first conv of each level reduces the channels.
    const std::array<std::size_t, 3> up_in{16 * B, 8 * B, 4 * B};
    for (int level = 2; level >= 0; --level) {
        const std::size_t l = static_cast<std::size_t>(level);
        const std::string uname = "up" + std::to_string(3 - level);
        wiring_->up[l] = this->layers_.size();
        this->add(uname, std::make_unique<nn::ConvTranspose3d<T>>(uname, up_in[2 - l], up_in[2 - l],
                                                                  {2, 2, 2}, {2, 2, 2}, p000, rng, g));
        const std::size_t cat = up_in[2 - l] + skip_c[l];
        wiring_->dec[l] = conv_block("dec" + std::to_string(3 - level), cat, skip_c[l], skip_c[l]);
    }
    wiring_->final_conv = this->layers_.size();
    this->add("final", std::make_unique<nn::Conv3d<T>>("final", 2 * B, 1, k111, s111, p000, rng, 1.0));
    this->finalize_records();
}

template <typename T>
TensorND<T> UNet3D<T>::forward_logits(const TensorND<T>& x, bool training) {
    if (x.rank() != 5) throw std::invalid_argument("unet3d: expected (N,C,S,H,W) input");
    skips_.assign(3, TensorND<T>{});
    TensorND<T> h = x;
    for (std::size_t l = 0; l < 3; ++l) {
        for (std::size_t i : wiring_->enc[l].layers) h = this->run(i, h, training);
        skips_[l] = h;
        h = this->run(wiring_->pool[l], h, training);
    }
    for (std::size_t i : wiring_->bottom.layers) h = this->run(i, h, training);
    for (int level = 2; level >= 0; --level) {
        const std::size_t l = static_cast<std::size_t>(level);
        h = this->run(wiring_->up[l], h, training);
        h = concat_channels(h, skips_[l]);
        for (std::size_t i : wiring_->dec[l].layers) h = this->run(i, h, training);
    }
    return this->run(wiring_->final_conv, h, training);
}

template <typename T>
TensorND<T> UNet3D<T>::backward_from_logits(const TensorND<T>& dlogits) {
    auto block_backward = [&](const typename Wiring::Block& blk, TensorND<T> g) {
        for (std::size_t j = 6; j-- > 0;) g = this->layers_[blk.layers[j]]->backward(g);
        return g;
    };

    TensorND<T> g = this->layers_[wiring_->final_conv]->backward(dlogits);
    std::array<TensorND<T>, 3> dskip;
    for (std::size_t l = 0; l < 3; ++l) {  // reverse of the forward level order 2,1,0
        g = block_backward(wiring_->dec[l], g);
        const std::size_t up_channels = g.dim(1) - wiring_->skip_channels[l];
        TensorND<T> dup, ds;
        split_channels(g, up_channels, dup, ds);
        dskip[l] = std::move(ds);
        g = this->layers_[wiring_->up[l]]->backward(dup);
    }
    g = block_backward(wiring_->bottom, g);
    for (std::size_t l = 3; l-- > 0;) {
        g = this->layers_[wiring_->pool[l]]->backward(g);
        add_into(g, dskip[l]);
        g = block_backward(wiring_->enc[l], g);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Adapted 3D ResNet-18
// ---------------------------------------------------------------------------

template <typename T>
struct ResNet18_3D<T>::Wiring {
    std::array<std::size_t, 3> stem;  // conv, bn, relu
    std::size_t pool = 0;
    struct Block {
        std::array<std::size_t, 3> conv1;  // conv, bn, relu
        std::array<std::size_t, 5> tail;   // conv2, bn2, relu2, conv3, bn3
        std::size_t relu_out = 0;
    };
    std::array<Block, 4> blocks;
    std::array<std::size_t, 3> up;    // upconv, bn, relu
    std::array<std::size_t, 3> head;  // conv, bn, relu
    std::size_t final_conv = 0;
};

template <typename T>
ResNet18_3D<T>::ResNet18_3D(const ModelSpec& spec)
    : spec_(spec), wiring_(std::make_unique<Wiring>()) {
    for (int a = 0; a < 3; ++a)
        if (spec.input_extent[static_cast<std::size_t>(a)] % 2 != 0)
            throw std::invalid_argument("resnet18_3d: extents must be divisible by 2");

    RandomStream rng(spec.init_seed);
    const double g = std::sqrt(2.0);
    const std::size_t cin = static_cast<std::size_t>(spec.in_channels);

    wiring_->stem = {0, 1, 2};
    this->add("stem.conv", std::make_unique<nn::Conv3d<T>>("stem.conv", cin, 64, {7, 7, 7}, s111,
                                                           {3, 3, 3}, rng, g));
    this->add("stem.bn", std::make_unique<nn::BatchNorm<T>>("stem.bn", 64));
    this->add("stem.relu", std::make_unique<nn::ReLU<T>>());
    wiring_->pool = this->layers_.size();
    this->add("pool", std::make_unique<nn::MaxPool3d<T>>({2, 2, 2}, {2, 2, 2}));

    // Block A keeps 64 channels; the B blocks double in their first conv.
    const std::array<std::size_t, 4> cins{64, 64, 128, 256};
    const std::array<std::size_t, 4> couts{64, 128, 256, 512};
    for (std::size_t b = 0; b < 4; ++b) {
        const std::string prefix = "block" + std::to_string(b + 1);
        auto& blk = wiring_->blocks[b];
        blk.conv1 = {this->layers_.size(), this->layers_.size() + 1, this->layers_.size() + 2};
        this->add(prefix + ".conv1", std::make_unique<nn::Conv3d<T>>(prefix + ".conv1", cins[b],
                                                                     couts[b], k333, s111, p111, rng, g));
        this->add(prefix + ".bn1", std::make_unique<nn::BatchNorm<T>>(prefix + ".bn1", couts[b]));
        this->add(prefix + ".relu1", std::make_unique<nn::ReLU<T>>());
        blk.tail = {this->layers_.size(), this->layers_.size() + 1, this->layers_.size() + 2,
                    this->layers_.size() + 3, this->layers_.size() + 4};
        this->add(prefix + ".conv2", std::make_unique<nn::Conv3d<T>>(prefix + ".conv2", couts[b],
                                                                     couts[b], k333, s111, p111, rng, g));
        this->add(prefix + ".bn2", std::make_unique<nn::BatchNorm<T>>(prefix + ".bn2", couts[b]));
        this->add(prefix + ".relu2", std::make_unique<nn::ReLU<T>>());
        this->add(prefix + ".conv3", std::make_unique<nn::Conv3d<T>>(prefix + ".conv3", couts[b],
                                                                     couts[b], k333, s111, p111, rng, g));
        this->add(prefix + ".bn3", std::make_unique<nn::BatchNorm<T>>(prefix + ".bn3", couts[b]));
        blk.relu_out = this->layers_.size();
        this->add(prefix + ".relu_out", std::make_unique<nn::ReLU<T>>());
    }

    // Head restores the original extent with one 4/2/1 up-convolution and
    // maps 512 -> 256 -> 32 -> 1. Channel choices documented in the README
    // architecture notes.
    wiring_->up = {this->layers_.size(), this->layers_.size() + 1, this->layers_.size() + 2};
    this->add("up.conv", std::make_unique<nn::ConvTranspose3d<T>>("up.conv", 512, 256, {4, 4, 4},
                                                                  {2, 2, 2}, p111, rng, g));
    this->add("up.bn", std::make_unique<nn::BatchNorm<T>>("up.bn", 256));
    this->add("up.relu", std::make_unique<nn::ReLU<T>>());
    wiring_->head = {this->layers_.size(), this->layers_.size() + 1, this->layers_.size() + 2};
    this->add("head.conv", std::make_unique<nn::Conv3d<T>>("head.conv", 256, 32, k333, s111, p111,
                                                           rng, g));
    this->add("head.bn", std::make_unique<nn::BatchNorm<T>>("head.bn", 32));
    this->add("head.relu", std::make_unique<nn::ReLU<T>>());
    wiring_->final_conv = this->layers_.size();
    this->add("final", std::make_unique<nn::Conv3d<T>>("final", 32, 1, k111, s111, p000, rng, 1.0));
    this->finalize_records();
}

template <typename T>
TensorND<T> ResNet18_3D<T>::forward_logits(const TensorND<T>& x, bool training) {
    if (x.rank() != 5) throw std::invalid_argument("resnet18_3d: expected (N,C,S,H,W) input");
    residuals_.assign(4, TensorND<T>{});
    TensorND<T> h = x;
    for (std::size_t i : wiring_->stem) h = this->run(i, h, training);
    h = this->run(wiring_->pool, h, training);
    for (std::size_t b = 0; b < 4; ++b) {
        auto& blk = wiring_->blocks[b];
        for (std::size_t i : blk.conv1) h = this->run(i, h, training);
        residuals_[b] = h;
        for (std::size_t i : blk.tail) h = this->run(i, h, training);
        add_into(h, residuals_[b]);
        h = this->run(blk.relu_out, h, training);
    }
    for (std::size_t i : wiring_->up) h = this->run(i, h, training);
    for (std::size_t i : wiring_->head) h = this->run(i, h, training);
    return this->run(wiring_->final_conv, h, training);
}

template <typename T>
TensorND<T> ResNet18_3D<T>::backward_from_logits(const TensorND<T>& dlogits) {
    TensorND<T> g = this->layers_[wiring_->final_conv]->backward(dlogits);
    for (std::size_t j = 3; j-- > 0;) g = this->layers_[wiring_->head[j]]->backward(g);
    for (std::size_t j = 3; j-- > 0;) g = this->layers_[wiring_->up[j]]->backward(g);
    for (std::size_t b = 4; b-- > 0;) {
        auto& blk = wiring_->blocks[b];
        g = this->layers_[blk.relu_out]->backward(g);
        TensorND<T> g_res = g;  // shortcut branch
        for (std::size_t j = 5; j-- > 0;) g = this->layers_[blk.tail[j]]->backward(g);
        add_into(g, g_res);
        for (std::size_t j = 3; j-- > 0;) g = this->layers_[blk.conv1[j]]->backward(g);
    }
    g = this->layers_[wiring_->pool]->backward(g);
    for (std::size_t j = 3; j-- > 0;) g = this->layers_[wiring_->stem[j]]->backward(g);
    return g;
}

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<Network<T>> build_model(const ModelSpec& spec) {
    switch (spec.kind) {
        case ModelKind::XmasNetBinary:
        case ModelKind::XmasNetPirads: return std::make_unique<XmasNet<T>>(spec);
        case ModelKind::UNet3D: return std::make_unique<UNet3D<T>>(spec);
        case ModelKind::ResNet18_3D: return std::make_unique<ResNet18_3D<T>>(spec);
    }
    throw std::invalid_argument("build_model: unknown kind");
}

template class XmasNet<float>;
template class XmasNet<double>;
template class UNet3D<float>;
template class UNet3D<double>;
template class ResNet18_3D<float>;
template class ResNet18_3D<double>;
template std::unique_ptr<Network<float>> build_model<float>(const ModelSpec&);
template std::unique_ptr<Network<double>> build_model<double>(const ModelSpec&);

}  // namespace prostlab
