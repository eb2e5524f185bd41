#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "prostlab/rng.hpp"
#include "prostlab/tensor.hpp"

namespace prostlab::nn {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
struct Param {
    std::string name;
    TensorND<T> value;
    TensorND<T> grad;

    void zero_grad() { grad.fill(T{0}); }
};

// Per-axis spatial transform of a conv/pool layer; consumed by the shape
// oracle which chains the output-size formula across the model.
struct SpatialSpec {
    std::array<int, 3> kernel{1, 1, 1};
    std::array<int, 3> stride{1, 1, 1};
    std::array<int, 3> padding{0, 0, 0};
    bool transposed = false;
};

inline int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}
inline int thread_id() {
#ifdef _OPENMP
    return omp_get_thread_num();
#else
    return 0;
#endif
}

// ---------------------------------------------------------------------------
// Convolution cores: direct (N, C, D, H, W) <-> (N, C', OD, OH, OW) with
// per-axis kernel/stride/padding, dilation 1, via chunked im2col + GEMM.
// ---------------------------------------------------------------------------

struct ConvGeom {
    std::size_t n, cin, d, h, w;
    std::size_t cout, od, oh, ow;
    std::array<int, 3> k, s, p;

    std::size_t rows() const { return cin * k[0] * k[1] * k[2]; }
    std::size_t out_vox() const { return od * oh * ow; }
    std::size_t in_vox() const { return d * h * w; }
};

inline std::size_t conv_axis_out(std::size_t in, int k, int s, int p) {
    const long num = static_cast<long>(in) + 2 * p - k;
    if (num < 0) throw std::invalid_argument("conv: kernel larger than padded input");
    return static_cast<std::size_t>(num / s + 1);
}

inline std::size_t conv_chunk_cols(const ConvGeom& g) {
    constexpr std::size_t kMaxColElems = std::size_t{1} << 24;
    const std::size_t by_mem = std::max<std::size_t>(kMaxColElems / std::max<std::size_t>(g.rows(), 1), 256);
    return std::min(g.out_vox(), by_mem);
}

// Fills a rows() x len column block for output voxels [o0, o0+len).
template <typename T>
void im2col_chunk(const T* x, const ConvGeom& g, std::size_t o0, std::size_t len, T* col) {
    const std::size_t plane = g.oh * g.ow;
    std::vector<long> sd0(len), sh0(len), sw0(len);
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t o = o0 + i;
        const std::size_t od = o / plane, rem = o % plane;
        sd0[i] = static_cast<long>(od) * g.s[0] - g.p[0];
        sh0[i] = static_cast<long>(rem / g.ow) * g.s[1] - g.p[1];
        sw0[i] = static_cast<long>(rem % g.ow) * g.s[2] - g.p[2];
    }
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* src_c = x + ci * g.in_vox();
        for (int kz = 0; kz < g.k[0]; ++kz)
            for (int ky = 0; ky < g.k[1]; ++ky)
                for (int kx = 0; kx < g.k[2]; ++kx, ++row) {
                    T* dst = col + row * len;
                    for (std::size_t i = 0; i < len; ++i) {
                        const long sd = sd0[i] + kz, sh = sh0[i] + ky, sw = sw0[i] + kx;
                        const bool ok = static_cast<unsigned long>(sd) < g.d &&
                                        static_cast<unsigned long>(sh) < g.h &&
                                        static_cast<unsigned long>(sw) < g.w;
                        dst[i] = ok ? src_c[(static_cast<std::size_t>(sd) * g.h +
                                             static_cast<std::size_t>(sh)) *
                                                g.w +
                                            static_cast<std::size_t>(sw)]
                                    : T{0};
                    }
                }
    }
}

// Scatter-adds a column block back into the (cin, d, h, w) gradient. Not
// thread safe across chunks of one sample; callers parallelize over samples.
template <typename T>
void col2im_chunk(const T* col, const ConvGeom& g, std::size_t o0, std::size_t len, T* dx) {
    const std::size_t plane = g.oh * g.ow;
    std::vector<long> sd0(len), sh0(len), sw0(len);
    for (std::size_t i = 0; i < len; ++i) {
        const std::size_t o = o0 + i;
        const std::size_t od = o / plane, rem = o % plane;
        sd0[i] = static_cast<long>(od) * g.s[0] - g.p[0];
        sh0[i] = static_cast<long>(rem / g.ow) * g.s[1] - g.p[1];
        sw0[i] = static_cast<long>(rem % g.ow) * g.s[2] - g.p[2];
    }
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
        T* dst_c = dx + ci * g.in_vox();
        for (int kz = 0; kz < g.k[0]; ++kz)
            for (int ky = 0; ky < g.k[1]; ++ky)
                for (int kx = 0; kx < g.k[2]; ++kx, ++row) {
                    const T* src = col + row * len;
                    for (std::size_t i = 0; i < len; ++i) {
                        const long sd = sd0[i] + kz, sh = sh0[i] + ky, sw = sw0[i] + kx;
                        if (static_cast<unsigned long>(sd) < g.d &&
                            static_cast<unsigned long>(sh) < g.h &&
                            static_cast<unsigned long>(sw) < g.w)
                            dst_c[(static_cast<std::size_t>(sd) * g.h +
                                   static_cast<std::size_t>(sh)) *
                                      g.w +
                                  static_cast<std::size_t>(sw)] += src[i];
                    }
                }
    }
}

// y[n] = W * col(x[n]) + b
template <typename T>
void conv_forward(const T* x, const T* weight, const T* bias, const ConvGeom& g, T* y) {
    const std::size_t rows = g.rows(), chunk = conv_chunk_cols(g);
    const std::size_t nchunks = (g.out_vox() + chunk - 1) / chunk;
    std::vector<std::vector<T>> bufs(static_cast<std::size_t>(num_threads()));

#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t ch = 0; ch < nchunks; ++ch) {
            auto& buf = bufs[static_cast<std::size_t>(thread_id())];
            const std::size_t o0 = ch * chunk;
            const std::size_t len = std::min(chunk, g.out_vox() - o0);
            buf.resize(rows * len);
            im2col_chunk(x + n * g.cin * g.in_vox(), g, o0, len, buf.data());
            ConstMapRM<T> wmat(weight, static_cast<Eigen::Index>(g.cout),
                               static_cast<Eigen::Index>(rows));
            ConstMapRM<T> cmat(buf.data(), static_cast<Eigen::Index>(rows),
                               static_cast<Eigen::Index>(len));
            MatrixRM<T> out = wmat * cmat;
            T* ybase = y + n * g.cout * g.out_vox();
            for (std::size_t co = 0; co < g.cout; ++co) {
                T* dst = ybase + co * g.out_vox() + o0;
                const T add = bias ? bias[co] : T{0};
                const T* src = out.data() + co * len;
                for (std::size_t i = 0; i < len; ++i) dst[i] = src[i] + add;
            }
        }
}

// dx[n] = col2im(W^T * dy[n])
template <typename T>
void conv_backward_data(const T* dy, const T* weight, const ConvGeom& g, T* dx) {
    const std::size_t rows = g.rows(), chunk = conv_chunk_cols(g);
    const std::size_t nchunks = (g.out_vox() + chunk - 1) / chunk;
    std::memset(dx, 0, sizeof(T) * g.n * g.cin * g.in_vox());

#pragma omp parallel for schedule(static)
    for (std::size_t n = 0; n < g.n; ++n) {
        std::vector<T> buf;
        for (std::size_t ch = 0; ch < nchunks; ++ch) {
            const std::size_t o0 = ch * chunk;
            const std::size_t len = std::min(chunk, g.out_vox() - o0);
            buf.resize(rows * len);
            ConstMapRM<T> wmat(weight, static_cast<Eigen::Index>(g.cout),
                               static_cast<Eigen::Index>(rows));
            MatrixRM<T> dymat(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(len));
            const T* dybase = dy + n * g.cout * g.out_vox();
            for (std::size_t co = 0; co < g.cout; ++co)
                std::memcpy(dymat.data() + co * len, dybase + co * g.out_vox() + o0,
                            sizeof(T) * len);
            MapRM<T> cmat(buf.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(len));
            cmat.noalias() = wmat.transpose() * dymat;
            col2im_chunk(buf.data(), g, o0, len, dx + n * g.cin * g.in_vox());
        }
    }
}

// dW += sum_n dy[n] * col(x[n])^T ; db += sum dy
template <typename T>
void conv_backward_weight(const T* x, const T* dy, const ConvGeom& g, T* dweight, T* dbias) {
    const std::size_t rows = g.rows(), chunk = conv_chunk_cols(g);
    const std::size_t nchunks = (g.out_vox() + chunk - 1) / chunk;
    const int nt = num_threads();
    std::vector<MatrixRM<T>> partial(static_cast<std::size_t>(nt));
    for (auto& m : partial)
        m = MatrixRM<T>::Zero(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(rows));
    std::vector<std::vector<T>> bufs(static_cast<std::size_t>(nt));

    for (std::size_t n = 0; n < g.n; ++n) {
#pragma omp parallel for schedule(static)
        for (std::size_t ch = 0; ch < nchunks; ++ch) {
            const int tid = thread_id();
            auto& buf = bufs[static_cast<std::size_t>(tid)];
            const std::size_t o0 = ch * chunk;
            const std::size_t len = std::min(chunk, g.out_vox() - o0);
            buf.resize(rows * len);
            im2col_chunk(x + n * g.cin * g.in_vox(), g, o0, len, buf.data());
            MatrixRM<T> dymat(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(len));
            const T* dybase = dy + n * g.cout * g.out_vox();
            for (std::size_t co = 0; co < g.cout; ++co)
                std::memcpy(dymat.data() + co * len, dybase + co * g.out_vox() + o0,
                            sizeof(T) * len);
            ConstMapRM<T> cmat(buf.data(), static_cast<Eigen::Index>(rows),
                               static_cast<Eigen::Index>(len));
            partial[static_cast<std::size_t>(tid)].noalias() += dymat * cmat.transpose();
        }
    }
    MapRM<T> dw(dweight, static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(rows));
    for (int t = 0; t < nt; ++t) dw += partial[static_cast<std::size_t>(t)];

    if (dbias) {
        for (std::size_t n = 0; n < g.n; ++n) {
            const T* dybase = dy + n * g.cout * g.out_vox();
            for (std::size_t co = 0; co < g.cout; ++co) {
                T acc{0};
                const T* src = dybase + co * g.out_vox();
                for (std::size_t i = 0; i < g.out_vox(); ++i) acc += src[i];
                dbias[co] += acc;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual TensorND<T> forward(const TensorND<T>& x, bool training) = 0;
    virtual TensorND<T> backward(const TensorND<T>& dy) = 0;
    virtual void collect_params(std::vector<Param<T>*>&) {}
    virtual const char* kind() const = 0;
    virtual std::optional<SpatialSpec> spatial_spec() const { return std::nullopt; }
};

template <typename T>
void kaiming_init(TensorND<T>& w, std::size_t fan_in, double gain, RandomStream& rng) {
    const double stddev = gain * std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : w.raw()) v = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
class Conv3d final : public Layer<T> {
public:
    Conv3d(std::string name, std::size_t cin, std::size_t cout, std::array<int, 3> k,
           std::array<int, 3> s, std::array<int, 3> p, RandomStream& rng, double gain)
        : cin_(cin), cout_(cout), k_(k), s_(s), p_(p) {
        weight_.name = name + ".weight";
        weight_.value = TensorND<T>({cout, cin, static_cast<std::size_t>(k[0]),
                                     static_cast<std::size_t>(k[1]), static_cast<std::size_t>(k[2])});
        weight_.grad = weight_.value;
        bias_.name = name + ".bias";
        bias_.value = TensorND<T>({cout});
        bias_.grad = bias_.value;
        kaiming_init(weight_.value, cin * static_cast<std::size_t>(k[0] * k[1] * k[2]), gain, rng);
    }

    TensorND<T> forward(const TensorND<T>& x, bool) override {
        if (x.rank() != 5 || x.dim(1) != cin_)
            throw std::invalid_argument("Conv3d: expected (N," + std::to_string(cin_) + ",D,H,W), got " +
                                        TensorND<T>::dims_str(x.dims()));
        x_ = x;
        geom_ = make_geom(x);
        TensorND<T> y({geom_.n, cout_, geom_.od, geom_.oh, geom_.ow});
        conv_forward(x.data(), weight_.value.data(), bias_.value.data(), geom_, y.data());
        return y;
    }

    TensorND<T> backward(const TensorND<T>& dy) override {
        TensorND<T> dx(x_.dims());
        conv_backward_data(dy.data(), weight_.value.data(), geom_, dx.data());
        conv_backward_weight(x_.data(), dy.data(), geom_, weight_.grad.data(), bias_.grad.data());
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    const char* kind() const override { return "conv3d"; }
    std::optional<SpatialSpec> spatial_spec() const override { return SpatialSpec{k_, s_, p_, false}; }

private:
    ConvGeom make_geom(const TensorND<T>& x) const {
        ConvGeom g;
        g.n = x.dim(0);
        g.cin = cin_;
        g.d = x.dim(2);
        g.h = x.dim(3);
        g.w = x.dim(4);
        g.cout = cout_;
        g.k = k_;
        g.s = s_;
        g.p = p_;
        g.od = conv_axis_out(g.d, k_[0], s_[0], p_[0]);
        g.oh = conv_axis_out(g.h, k_[1], s_[1], p_[1]);
        g.ow = conv_axis_out(g.w, k_[2], s_[2], p_[2]);
        return g;
    }

    std::size_t cin_, cout_;
    std::array<int, 3> k_, s_, p_;
    Param<T> weight_, bias_;
    TensorND<T> x_;
    ConvGeom geom_{};
};

// Transposed convolution: the forward pass is the data-gradient of a
// matching convolution, so the three conv cores are reused with the roles
// of input and output swapped.
template <typename T>
class ConvTranspose3d final : public Layer<T> {
public:
    ConvTranspose3d(std::string name, std::size_t cin, std::size_t cout, std::array<int, 3> k,
                    std::array<int, 3> s, std::array<int, 3> p, RandomStream& rng, double gain)
        : cin_(cin), cout_(cout), k_(k), s_(s), p_(p) {
        weight_.name = name + ".weight";
        weight_.value = TensorND<T>({cin, cout, static_cast<std::size_t>(k[0]),
                                     static_cast<std::size_t>(k[1]), static_cast<std::size_t>(k[2])});
        weight_.grad = weight_.value;
        bias_.name = name + ".bias";
        bias_.value = TensorND<T>({cout});
        bias_.grad = bias_.value;
        kaiming_init(weight_.value, cin * static_cast<std::size_t>(k[0] * k[1] * k[2]), gain, rng);
    }

    TensorND<T> forward(const TensorND<T>& x, bool) override {
        if (x.rank() != 5 || x.dim(1) != cin_)
            throw std::invalid_argument("ConvTranspose3d: bad input " +
                                        TensorND<T>::dims_str(x.dims()));
        x_ = x;
        geom_ = make_geom(x);
        TensorND<T> y({geom_.n, cout_, geom_.d, geom_.h, geom_.w});
        conv_backward_data(x.data(), weight_.value.data(), geom_, y.data());
        T* ydata = y.data();
        for (std::size_t n = 0; n < geom_.n; ++n)
            for (std::size_t co = 0; co < cout_; ++co) {
                T* dst = ydata + (n * cout_ + co) * geom_.in_vox();
                const T add = bias_.value[co];
                for (std::size_t i = 0; i < geom_.in_vox(); ++i) dst[i] += add;
            }
        return y;
    }

    TensorND<T> backward(const TensorND<T>& dy) override {
        TensorND<T> dx(x_.dims());
        conv_forward(dy.data(), weight_.value.data(), static_cast<const T*>(nullptr), geom_,
                     dx.data());
        conv_backward_weight(dy.data(), x_.data(), geom_, weight_.grad.data(),
                             static_cast<T*>(nullptr));
        for (std::size_t n = 0; n < geom_.n; ++n)
            for (std::size_t co = 0; co < cout_; ++co) {
                const T* src = dy.data() + (n * cout_ + co) * geom_.in_vox();
                T acc{0};
                for (std::size_t i = 0; i < geom_.in_vox(); ++i) acc += src[i];
                bias_.grad[co] += acc;
            }
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    const char* kind() const override { return "conv_transpose3d"; }
    std::optional<SpatialSpec> spatial_spec() const override { return SpatialSpec{k_, s_, p_, true}; }

private:
    // The "underlying" convolution maps our output (cout, D, H, W) to our
    // input (cin, od, oh, ow).
    ConvGeom make_geom(const TensorND<T>& x) const {
        ConvGeom g;
        g.n = x.dim(0);
        g.cin = cout_;
        g.cout = cin_;
        g.k = k_;
        g.s = s_;
        g.p = p_;
        g.od = x.dim(2);
        g.oh = x.dim(3);
        g.ow = x.dim(4);
        g.d = (g.od - 1) * static_cast<std::size_t>(s_[0]) - 2 * static_cast<std::size_t>(p_[0]) +
              static_cast<std::size_t>(k_[0]);
        g.h = (g.oh - 1) * static_cast<std::size_t>(s_[1]) - 2 * static_cast<std::size_t>(p_[1]) +
              static_cast<std::size_t>(k_[1]);
        g.w = (g.ow - 1) * static_cast<std::size_t>(s_[2]) - 2 * static_cast<std::size_t>(p_[2]) +
              static_cast<std::size_t>(k_[2]);
        return g;
    }

    std::size_t cin_, cout_;
    std::array<int, 3> k_, s_, p_;
    Param<T> weight_, bias_;
    TensorND<T> x_;
    ConvGeom geom_{};
};

template <typename T>
class MaxPool3d final : public Layer<T> {
public:
    MaxPool3d(std::array<int, 3> k, std::array<int, 3> s) : k_(k), s_(s) {}

    TensorND<T> forward(const TensorND<T>& x, bool) override {
        const std::size_t n = x.dim(0), c = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
        const std::size_t od = conv_axis_out(d, k_[0], s_[0], 0);
        const std::size_t oh = conv_axis_out(h, k_[1], s_[1], 0);
        const std::size_t ow = conv_axis_out(w, k_[2], s_[2], 0);
        in_dims_ = x.dims();
        TensorND<T> y({n, c, od, oh, ow});
        argmax_.assign(y.size(), 0);
        const std::size_t in_vox = d * h * w;

#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* src = x.data() + (ni * c + ci) * in_vox;
                T* dst = y.data() + (ni * c + ci) * od * oh * ow;
                std::size_t* amax = argmax_.data() + (ni * c + ci) * od * oh * ow;
                std::size_t o = 0;
                for (std::size_t zd = 0; zd < od; ++zd)
                    for (std::size_t zh = 0; zh < oh; ++zh)
                        for (std::size_t zw = 0; zw < ow; ++zw, ++o) {
                            T best{};
                            std::size_t best_idx = 0;
                            bool first = true;
                            for (int a = 0; a < k_[0]; ++a)
                                for (int b = 0; b < k_[1]; ++b)
                                    for (int e = 0; e < k_[2]; ++e) {
                                        const std::size_t sd = zd * s_[0] + static_cast<std::size_t>(a);
                                        const std::size_t sh = zh * s_[1] + static_cast<std::size_t>(b);
                                        const std::size_t sw = zw * s_[2] + static_cast<std::size_t>(e);
                                        if (sd >= d || sh >= h || sw >= w) continue;
                                        const std::size_t idx = (sd * h + sh) * w + sw;
                                        if (first || src[idx] > best) {
                                            best = src[idx];
                                            best_idx = idx;
                                            first = false;
                                        }
                                    }
                            dst[o] = best;
                            amax[o] = best_idx;
                        }
            }
        return y;
    }

    TensorND<T> backward(const TensorND<T>& dy) override {
        TensorND<T> dx(in_dims_);
        const std::size_t n = in_dims_[0], c = in_dims_[1];
        const std::size_t in_vox = in_dims_[2] * in_dims_[3] * in_dims_[4];
        const std::size_t out_vox = dy.size() / (n * c);
#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* src = dy.data() + (ni * c + ci) * out_vox;
                T* dst = dx.data() + (ni * c + ci) * in_vox;
                const std::size_t* amax = argmax_.data() + (ni * c + ci) * out_vox;
                for (std::size_t o = 0; o < out_vox; ++o) dst[amax[o]] += src[o];
            }
        return dx;
    }

    const char* kind() const override { return "maxpool3d"; }
    std::optional<SpatialSpec> spatial_spec() const override {
        return SpatialSpec{k_, s_, {0, 0, 0}, false};
    }

private:
    std::array<int, 3> k_, s_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> in_dims_;
};

template <typename T>
class BatchNorm final : public Layer<T> {
public:
    BatchNorm(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
        : c_(channels), momentum_(momentum), eps_(eps) {
        gamma_.name = name + ".gamma";
        gamma_.value = TensorND<T>({channels}, T{1});
        gamma_.grad = TensorND<T>({channels});
        beta_.name = name + ".beta";
        beta_.value = TensorND<T>({channels});
        beta_.grad = TensorND<T>({channels});
        running_mean_.assign(channels, 0.0);
        running_var_.assign(channels, 1.0);
    }

    TensorND<T> forward(const TensorND<T>& x, bool training) override {
        if (x.rank() < 2 || x.dim(1) != c_) throw std::invalid_argument("BatchNorm: bad input");
        const std::size_t n = x.dim(0);
        std::size_t m = 1;
        for (std::size_t i = 2; i < x.rank(); ++i) m *= x.dim(i);
        n_ = n;
        m_ = m;
        dims_ = x.dims();
        TensorND<T> y(x.dims());
        xhat_ = TensorND<T>(x.dims());
        invstd_.assign(c_, 0.0);

        for (std::size_t ci = 0; ci < c_; ++ci) {
            double mean, var;
            if (training) {
                double sum = 0.0, sq = 0.0;
                for (std::size_t ni = 0; ni < n; ++ni) {
                    const T* src = x.data() + (ni * c_ + ci) * m;
                    for (std::size_t i = 0; i < m; ++i) {
                        sum += src[i];
                        sq += static_cast<double>(src[i]) * src[i];
                    }
                }
                const double cnt = static_cast<double>(n * m);
                mean = sum / cnt;
                var = std::max(sq / cnt - mean * mean, 0.0);
                const double unbiased = cnt > 1.0 ? var * cnt / (cnt - 1.0) : var;
                running_mean_[ci] = (1.0 - momentum_) * running_mean_[ci] + momentum_ * mean;
                running_var_[ci] = (1.0 - momentum_) * running_var_[ci] + momentum_ * unbiased;
            } else {
                mean = running_mean_[ci];
                var = running_var_[ci];
            }
            const double istd = 1.0 / std::sqrt(var + eps_);
            invstd_[ci] = istd;
            const double g = static_cast<double>(gamma_.value[ci]);
            const double b = static_cast<double>(beta_.value[ci]);
            for (std::size_t ni = 0; ni < n; ++ni) {
                const T* src = x.data() + (ni * c_ + ci) * m;
                T* xh = xhat_.data() + (ni * c_ + ci) * m;
                T* dst = y.data() + (ni * c_ + ci) * m;
                for (std::size_t i = 0; i < m; ++i) {
                    const double h = (static_cast<double>(src[i]) - mean) * istd;
                    xh[i] = static_cast<T>(h);
                    dst[i] = static_cast<T>(g * h + b);
                }
            }
        }
        training_fwd_ = training;
        return y;
    }

    TensorND<T> backward(const TensorND<T>& dy) override {
        TensorND<T> dx(dims_);
        const double cnt = static_cast<double>(n_ * m_);
        for (std::size_t ci = 0; ci < c_; ++ci) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t ni = 0; ni < n_; ++ni) {
                const T* dsrc = dy.data() + (ni * c_ + ci) * m_;
                const T* xh = xhat_.data() + (ni * c_ + ci) * m_;
                for (std::size_t i = 0; i < m_; ++i) {
                    sum_dy += dsrc[i];
                    sum_dy_xhat += static_cast<double>(dsrc[i]) * xh[i];
                }
            }
            gamma_.grad[ci] += static_cast<T>(sum_dy_xhat);
            beta_.grad[ci] += static_cast<T>(sum_dy);
            const double g = static_cast<double>(gamma_.value[ci]);
            const double istd = invstd_[ci];
            for (std::size_t ni = 0; ni < n_; ++ni) {
                const T* dsrc = dy.data() + (ni * c_ + ci) * m_;
                const T* xh = xhat_.data() + (ni * c_ + ci) * m_;
                T* dst = dx.data() + (ni * c_ + ci) * m_;
                if (training_fwd_) {
                    for (std::size_t i = 0; i < m_; ++i)
                        dst[i] = static_cast<T>(g * istd / cnt *
                                                (cnt * dsrc[i] - sum_dy - xh[i] * sum_dy_xhat));
                } else {
                    for (std::size_t i = 0; i < m_; ++i)
                        dst[i] = static_cast<T>(g * istd * dsrc[i]);
                }
            }
        }
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    const char* kind() const override { return "batchnorm"; }

    std::vector<double>& running_mean() { return running_mean_; }
    std::vector<double>& running_var() { return running_var_; }

private:
    std::size_t c_;
    double momentum_, eps_;
    Param<T> gamma_, beta_;
    std::vector<double> running_mean_, running_var_, invstd_;
    TensorND<T> xhat_;
    std::vector<std::size_t> dims_;
    std::size_t n_ = 0, m_ = 0;
    bool training_fwd_ = false;
};

template <typename T>
class ReLU final : public Layer<T> {
public:
    TensorND<T> forward(const TensorND<T>& x, bool) override {
        mask_.assign(x.size(), 0);
        TensorND<T> y(x.dims());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const bool pos = x[i] > T{0};
            mask_[i] = pos;
            y[i] = pos ? x[i] : T{0};
        }
        return y;
    }
    TensorND<T> backward(const TensorND<T>& dy) override {
        TensorND<T> dx(dy.dims());
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = mask_[i] ? dy[i] : T{0};
        return dx;
    }
    const char* kind() const override { return "relu"; }

private:
    std::vector<char> mask_;
};

template <typename T>
class Dense final : public Layer<T> {
public:
    Dense(std::string name, std::size_t in_features, std::size_t out_features, RandomStream& rng,
          double gain)
        : in_(in_features), out_(out_features) {
        weight_.name = name + ".weight";
        weight_.value = TensorND<T>({out_features, in_features});
        weight_.grad = weight_.value;
        bias_.name = name + ".bias";
        bias_.value = TensorND<T>({out_features});
        bias_.grad = bias_.value;
        kaiming_init(weight_.value, in_features, gain, rng);
    }

    TensorND<T> forward(const TensorND<T>& x, bool) override {
        if (x.rank() != 2 || x.dim(1) != in_)
            throw std::invalid_argument("Dense: expected (N," + std::to_string(in_) + "), got " +
                                        TensorND<T>::dims_str(x.dims()));
        x_ = x;
        const std::size_t n = x.dim(0);
        TensorND<T> y({n, out_});
        ConstMapRM<T> xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
        ConstMapRM<T> wm(weight_.value.data(), static_cast<Eigen::Index>(out_),
                         static_cast<Eigen::Index>(in_));
        MapRM<T> ym(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_));
        ym.noalias() = xm * wm.transpose();
        for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t o = 0; o < out_; ++o) y.data()[ni * out_ + o] += bias_.value[o];
        return y;
    }

    TensorND<T> backward(const TensorND<T>& dy) override {
        const std::size_t n = x_.dim(0);
        TensorND<T> dx({n, in_});
        ConstMapRM<T> dym(dy.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_));
        ConstMapRM<T> xm(x_.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
        ConstMapRM<T> wm(weight_.value.data(), static_cast<Eigen::Index>(out_),
                         static_cast<Eigen::Index>(in_));
        MapRM<T> dwm(weight_.grad.data(), static_cast<Eigen::Index>(out_),
                     static_cast<Eigen::Index>(in_));
        dwm.noalias() += dym.transpose() * xm;
        for (std::size_t ni = 0; ni < n; ++ni)
            for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dy.data()[ni * out_ + o];
        MapRM<T> dxm(dx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
        dxm.noalias() = dym * wm;
        return dx;
    }

    void collect_params(std::vector<Param<T>*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    const char* kind() const override { return "dense"; }
    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

private:
    std::size_t in_, out_;
    Param<T> weight_, bias_;
    TensorND<T> x_;
};

template <typename T>
class Flatten final : public Layer<T> {
public:
    TensorND<T> forward(const TensorND<T>& x, bool) override {
        in_dims_ = x.dims();
        return x.reshaped({x.dim(0), x.size() / x.dim(0)});
    }
    TensorND<T> backward(const TensorND<T>& dy) override { return dy.reshaped(in_dims_); }
    const char* kind() const override { return "flatten"; }

private:
    std::vector<std::size_t> in_dims_;
};

// Elementwise activations used outside the training path (the trainers fuse
// the terminal activation into the loss gradient).
template <typename T>
TensorND<T> sigmoid(const TensorND<T>& x) {
    TensorND<T> y(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
    return y;
}

// Row softmax for (N, K) with max subtraction.
template <typename T>
TensorND<T> softmax_rows(const TensorND<T>& x) {
    const std::size_t n = x.dim(0), k = x.dim(1);
    TensorND<T> y(x.dims());
    for (std::size_t i = 0; i < n; ++i) {
        const T* src = x.data() + i * k;
        T* dst = y.data() + i * k;
        double mx = src[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(src[j]));
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(src[j]) - mx);
        for (std::size_t j = 0; j < k; ++j)
            dst[j] = static_cast<T>(std::exp(static_cast<double>(src[j]) - mx) / denom);
    }
    return y;
}

}  // namespace prostlab::nn
