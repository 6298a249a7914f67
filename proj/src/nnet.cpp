#include "cxr/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include <Eigen/Core>

#include "cxr/error.hpp"
#include "cxr/metrics.hpp"
#include "cxr/random.hpp"

namespace cxr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

struct ConvCache {
    std::vector<double> col;     // im2col path: [in*k*k][out_h*out_w]
    std::vector<double> padded;  // direct 3x3 path: input with a one-pixel zero border
    std::vector<double> scratch; // backward temporaries, kept to avoid reallocating per sample
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

/// Sets the shape, reusing the existing allocation. Contents are unspecified.
void reshape(Tensor& t, int c, int h, int w) {
    t.channels = c, t.height = h, t.width = w;
    t.values.resize(std::size_t(c) * h * w);
}

bool is_direct3x3(const Conv2d& conv) { return conv.kernel == 3 && conv.stride == 1 && conv.pad == 1; }

constexpr int kLanes = 8;
using Lanes = double __attribute__((vector_size(kLanes * sizeof(double))));

inline Lanes load_lanes(const double* p) {
    Lanes v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

/// Row pitch of a padded plane: one-pixel border plus room for a full final lane block.
int padded_pitch(int w) { return (w + kLanes - 1) / kLanes * kLanes + 2; }

void pad_planes(const double* src, int channels, int h, int w, std::vector<double>& dst) {
    const int pw = padded_pitch(w), ph = h + 2;
    dst.assign(std::size_t(channels) * ph * pw, 0.0);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            std::copy_n(src + (std::size_t(c) * h + y) * w, w, dst.data() + (std::size_t(c) * ph + y + 1) * pw + 1);
}

template <int NB>
void conv3x3_block(const double* in, int cin, int h, int w, const double* kb, const double* bias, double* out,
                   bool accumulate) {
    const int pw = padded_pitch(w);
    const std::size_t pplane = std::size_t(h + 2) * pw;
    const std::size_t plane = std::size_t(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int x0 = 0; x0 < w; x0 += kLanes) {
            Lanes acc[NB] = {};
            const double* kp = kb;
            for (int ci = 0; ci < cin; ++ci) {
                const double* base = in + ci * pplane + std::size_t(y) * pw + x0;
                for (int t = 0; t < 9; ++t, kp += NB) {
                    const Lanes r = load_lanes(base + (t / 3) * pw + t % 3);
                    for (int b = 0; b < NB; ++b) acc[b] += kp[b] * r;
                }
            }
            const int nx = std::min(kLanes, w - x0);
            for (int b = 0; b < NB; ++b) {
                double* o = out + b * plane + std::size_t(y) * w + x0;
                const double bv = bias ? bias[b] : 0.0;
                for (int j = 0; j < nx; ++j) o[j] = (accumulate ? o[j] : 0.0) + bv + acc[b][j];
            }
        }
    }
}

/// out[co] (+)= bias[co] + sum_ci k[co][ci] (x) in[ci] over same-size 3x3 windows.
/// `in` is padded with pad_planes; output channels are processed eight at a time.
void conv3x3_same(const double* in, int cin, int h, int w, const double* k, const double* bias, int cout,
                  double* out, bool accumulate) {
    constexpr int kBlock = 8;
    const std::size_t plane = std::size_t(h) * w;
    std::vector<double> kb(std::size_t(cin) * 9 * kBlock);
    for (int c0 = 0; c0 < cout; c0 += kBlock) {
        const int nb = std::min(kBlock, cout - c0);
        // repack as [ci][tap][b] so the inner loop reads weights contiguously
        for (int ci = 0; ci < cin; ++ci)
            for (int t = 0; t < 9; ++t)
                for (int b = 0; b < nb; ++b)
                    kb[(std::size_t(ci) * 9 + t) * nb + b] = k[((std::size_t(c0) + b) * cin + ci) * 9 + t];
        const double* bb = bias ? bias + c0 : nullptr;
        double* o = out + c0 * plane;
        switch (nb) {
            case 8: conv3x3_block<8>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
            case 7: conv3x3_block<7>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
            case 6: conv3x3_block<6>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
            case 5: conv3x3_block<5>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
            case 4: conv3x3_block<4>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
            case 3: conv3x3_block<3>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
            case 2: conv3x3_block<2>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
            default: conv3x3_block<1>(in, cin, h, w, kb.data(), bb, o, accumulate); break;
        }
    }
}

void direct_forward(const Conv2d& conv, const Tensor& x, ConvCache& cache, Tensor& z) {
    cache.in_h = cache.out_h = x.height;
    cache.in_w = cache.out_w = x.width;
    pad_planes(x.values.data(), x.channels, x.height, x.width, cache.padded);
    reshape(z, conv.out_channels, x.height, x.width);
    conv3x3_same(cache.padded.data(), conv.in_channels, x.height, x.width, conv.weight.data(), conv.bias.data(),
                 conv.out_channels, z.values.data(), false);
}

void direct_backward(const Conv2d& conv, ConvCache& cache, const Tensor& dz, Conv2d& grad, Tensor* dx) {
    const int h = cache.out_h, w = cache.out_w, pw = padded_pitch(w);
    const std::size_t plane = dz.plane();
    const std::size_t pplane = std::size_t(h + 2) * pw;
    std::vector<double>& pdz = cache.scratch;
    pad_planes(dz.values.data(), conv.out_channels, h, w, pdz);
    for (int co = 0; co < conv.out_channels; ++co) {
        const double* g = dz.values.data() + std::size_t(co) * plane;
        grad.bias[std::size_t(co)] += std::accumulate(g, g + plane, 0.0);
        // zero lanes past w in the padded copy keep the tail block out of the sums
        const double* gp = pdz.data() + co * pplane + pw + 1;
        for (int ci = 0; ci < conv.in_channels; ++ci) {
            const double* p = cache.padded.data() + ci * pplane;
            Lanes acc[9] = {};
            for (int y = 0; y < h; ++y) {
                for (int x0 = 0; x0 < w; x0 += kLanes) {
                    const Lanes gr = load_lanes(gp + std::size_t(y) * pw + x0);
                    for (int t = 0; t < 9; ++t)
                        acc[t] += gr * load_lanes(p + std::size_t(y + t / 3) * pw + x0 + t % 3);
                }
            }
            double* dw = grad.weight.data() + (std::size_t(co) * conv.in_channels + ci) * 9;
            for (int t = 0; t < 9; ++t) {
                double sum = 0.0;
                for (int j = 0; j < kLanes; ++j) sum += acc[t][j];
                dw[t] += sum;
            }
        }
    }
    if (!dx) return;
    // dL/dx is the same-size correlation of dz with the spatially flipped, channel-transposed kernel
    std::vector<double> wt(conv.weight.size());
    for (int co = 0; co < conv.out_channels; ++co)
        for (int ci = 0; ci < conv.in_channels; ++ci)
            for (int t = 0; t < 9; ++t)
                wt[(std::size_t(ci) * conv.out_channels + co) * 9 + t] =
                    conv.weight[(std::size_t(co) * conv.in_channels + ci) * 9 + 8 - t];
    conv3x3_same(pdz.data(), conv.out_channels, h, w, wt.data(), nullptr, conv.in_channels, dx->values.data(), true);
}

void im2col(const Conv2d& conv, const Tensor& x, ConvCache& cache) {
    cache.in_h = x.height;
    cache.in_w = x.width;
    cache.out_h = conv.out_size(x.height);
    cache.out_w = conv.out_size(x.width);
    const int k = conv.kernel;
    const std::size_t n = std::size_t(cache.out_h) * cache.out_w;
    cache.col.assign(conv.fan_in() * n, 0.0);
    for (int c = 0; c < x.channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cache.col.data() + (std::size_t(c) * k * k + std::size_t(ky) * k + kx) * n;
                for (int oy = 0; oy < cache.out_h; ++oy) {
                    const int iy = oy * conv.stride - conv.pad + ky;
                    if (iy < 0 || iy >= x.height) continue;
                    const double* src = x.values.data() + (std::size_t(c) * x.height + iy) * x.width;
                    double* dst = row + std::size_t(oy) * cache.out_w;
                    for (int ox = 0; ox < cache.out_w; ++ox) {
                        const int ix = ox * conv.stride - conv.pad + kx;
                        if (ix >= 0 && ix < x.width) dst[ox] = src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const Conv2d& conv, const std::vector<double>& dcol, const ConvCache& cache, Tensor& dx) {
    const int k = conv.kernel;
    const std::size_t n = std::size_t(cache.out_h) * cache.out_w;
    for (int c = 0; c < conv.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = dcol.data() + (std::size_t(c) * k * k + std::size_t(ky) * k + kx) * n;
                for (int oy = 0; oy < cache.out_h; ++oy) {
                    const int iy = oy * conv.stride - conv.pad + ky;
                    if (iy < 0 || iy >= dx.height) continue;
                    double* dst = dx.values.data() + (std::size_t(c) * dx.height + iy) * dx.width;
                    const double* src = row + std::size_t(oy) * cache.out_w;
                    for (int ox = 0; ox < cache.out_w; ++ox) {
                        const int ix = ox * conv.stride - conv.pad + kx;
                        if (ix >= 0 && ix < dx.width) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void conv_forward(const Conv2d& conv, const Tensor& x, ConvCache& cache, Tensor& z) {
    if (is_direct3x3(conv)) return direct_forward(conv, x, cache, z);
    im2col(conv, x, cache);
    reshape(z, conv.out_channels, cache.out_h, cache.out_w);
    const auto n = Eigen::Index(z.plane());
    const auto kdim = Eigen::Index(conv.fan_in());
    ConstMapMat w(conv.weight.data(), conv.out_channels, kdim);
    ConstMapMat col(cache.col.data(), kdim, n);
    MapMat out(z.values.data(), conv.out_channels, n);
    out.noalias() = w * col;
    out.colwise() += ConstMapVec(conv.bias.data(), conv.out_channels);
}

/// Accumulates weight/bias gradients into `grad`; returns dL/dx when asked.
void conv_backward(const Conv2d& conv, ConvCache& cache, const Tensor& dz, Conv2d& grad, Tensor* dx) {
    if (is_direct3x3(conv)) return direct_backward(conv, cache, dz, grad, dx);
    const auto n = Eigen::Index(dz.plane());
    const auto kdim = Eigen::Index(conv.fan_in());
    ConstMapMat dout(dz.values.data(), conv.out_channels, n);
    ConstMapMat col(cache.col.data(), kdim, n);
    MapMat dw(grad.weight.data(), conv.out_channels, kdim);
    dw.noalias() += dout * col.transpose();
    MapVec(grad.bias.data(), conv.out_channels) += dout.rowwise().sum();
    if (dx) {
        std::vector<double>& dcol = cache.scratch;
        dcol.resize(std::size_t(kdim * n));
        ConstMapMat w(conv.weight.data(), conv.out_channels, kdim);
        MapMat(dcol.data(), kdim, n).noalias() = w.transpose() * dout;
        col2im_add(conv, dcol, cache, *dx);
    }
}

void relu(const Tensor& z, Tensor& a) {
    reshape(a, z.channels, z.height, z.width);
    for (std::size_t i = 0; i < z.values.size(); ++i) a.values[i] = z.values[i] > 0.0 ? z.values[i] : 0.0;
}

/// dz = da where the pre-activation was positive.
void relu_backward_inplace(Tensor& grad, const Tensor& pre) {
    for (std::size_t i = 0; i < grad.values.size(); ++i)
        if (!(pre.values[i] > 0.0)) grad.values[i] = 0.0;
}

void add(const Tensor& a, const Tensor& b, Tensor& s) {
    reshape(s, a.channels, a.height, a.width);
    for (std::size_t i = 0; i < a.values.size(); ++i) s.values[i] = a.values[i] + b.values[i];
}

/// Zero-filled tensor of the given shape, reusing the allocation.
void zeros(Tensor& t, int c, int h, int w) {
    reshape(t, c, h, w);
    std::fill(t.values.begin(), t.values.end(), 0.0);
}

struct Trace {
    ConvCache c_stem, c_b1a, c_b1b, c_b2a, c_b2b, c_proj;
    Tensor z_stem, a_stem;
    Tensor z_b1a, a_b1a, z_b1b, s_b1, a_b1;
    Tensor z_b2a, a_b2a, z_b2b, z_proj, s_b2, a_b2;
    std::vector<double> pooled;
    Logits logits{};
    // backward temporaries
    Tensor ds_b2, da_b1, da_b2a, da_stem, da_b1a;
};

/// Per-thread activations; inference stays safe under concurrent callers.
Trace& scratch_trace() {
    thread_local Trace t;
    return t;
}

void check_input(const TinyResNet& net, const Tensor& x) {
    if (x.channels != net.in_channels || x.height < 1 || x.width < 1 ||
        x.values.size() != std::size_t(x.channels) * x.height * x.width)
        throw Error(ErrorCode::Shape, "input tensor " + std::to_string(x.channels) + "x" + std::to_string(x.height) +
                                          "x" + std::to_string(x.width) + " does not match a network with " +
                                          std::to_string(net.in_channels) + " input channel(s)");
}

void run_forward(const TinyResNet& net, const Tensor& x, Trace& t) {
    check_input(net, x);
    conv_forward(net.stem, x, t.c_stem, t.z_stem);
    relu(t.z_stem, t.a_stem);

    conv_forward(net.block1_conv1, t.a_stem, t.c_b1a, t.z_b1a);
    relu(t.z_b1a, t.a_b1a);
    conv_forward(net.block1_conv2, t.a_b1a, t.c_b1b, t.z_b1b);
    add(t.z_b1b, t.a_stem, t.s_b1);
    relu(t.s_b1, t.a_b1);

    conv_forward(net.block2_conv1, t.a_b1, t.c_b2a, t.z_b2a);
    relu(t.z_b2a, t.a_b2a);
    conv_forward(net.block2_conv2, t.a_b2a, t.c_b2b, t.z_b2b);
    conv_forward(net.block2_proj, t.a_b1, t.c_proj, t.z_proj);
    add(t.z_b2b, t.z_proj, t.s_b2);
    relu(t.s_b2, t.a_b2);

    const int channels = t.a_b2.channels;
    const std::size_t plane = t.a_b2.plane();
    t.pooled.assign(std::size_t(channels), 0.0);
    for (int c = 0; c < channels; ++c) {
        const double* p = t.a_b2.values.data() + std::size_t(c) * plane;
        t.pooled[std::size_t(c)] = std::accumulate(p, p + plane, 0.0) / double(plane);
    }
    for (int o = 0; o < 2; ++o) {
        double z = net.head_bias[std::size_t(o)];
        for (int c = 0; c < channels; ++c) z += net.head_weight[std::size_t(o * channels + c)] * t.pooled[std::size_t(c)];
        t.logits[std::size_t(o)] = z;
    }
}

double log_sum_exp(const Logits& z) {
    const double m = std::max(z[0], z[1]);
    return m + std::log1p(std::exp(-std::abs(z[0] - z[1])));
}

/// -log softmax(z)[y] as softplus(z_other - z_y).
double nll(const Logits& z, int y) {
    const double d = z[std::size_t(1 - y)] - z[std::size_t(y)];
    return d > 0.0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
}

/// Backpropagates dL/dlogits through one traced sample, accumulating into g.
void run_backward(const TinyResNet& net, Trace& t, const std::array<double, 2>& dlogits, TinyResNet& g) {
    const int channels = t.a_b2.channels;
    const std::size_t plane = t.a_b2.plane();

    std::vector<double> dpooled(std::size_t(channels), 0.0);
    for (int o = 0; o < 2; ++o) {
        g.head_bias[std::size_t(o)] += dlogits[std::size_t(o)];
        for (int c = 0; c < channels; ++c) {
            g.head_weight[std::size_t(o * channels + c)] += dlogits[std::size_t(o)] * t.pooled[std::size_t(c)];
            dpooled[std::size_t(c)] += net.head_weight[std::size_t(o * channels + c)] * dlogits[std::size_t(o)];
        }
    }

    Tensor& ds_b2 = t.ds_b2;
    reshape(ds_b2, t.a_b2.channels, t.a_b2.height, t.a_b2.width);
    for (int c = 0; c < channels; ++c)
        std::fill_n(ds_b2.values.begin() + std::ptrdiff_t(c * plane), plane, dpooled[std::size_t(c)] / double(plane));
    relu_backward_inplace(ds_b2, t.s_b2);

    Tensor& da_b1 = t.da_b1;
    Tensor& da_b2a = t.da_b2a;
    zeros(da_b1, t.a_b1.channels, t.a_b1.height, t.a_b1.width);
    zeros(da_b2a, t.a_b2a.channels, t.a_b2a.height, t.a_b2a.width);
    conv_backward(net.block2_conv2, t.c_b2b, ds_b2, g.block2_conv2, &da_b2a);
    conv_backward(net.block2_proj, t.c_proj, ds_b2, g.block2_proj, &da_b1);
    relu_backward_inplace(da_b2a, t.z_b2a);
    conv_backward(net.block2_conv1, t.c_b2a, da_b2a, g.block2_conv1, &da_b1);

    relu_backward_inplace(da_b1, t.s_b1);  // now dL/ds_b1
    Tensor& da_stem = t.da_stem;
    da_stem.channels = da_b1.channels, da_stem.height = da_b1.height, da_stem.width = da_b1.width;
    da_stem.values.assign(da_b1.values.begin(), da_b1.values.end());  // identity shortcut
    Tensor& da_b1a = t.da_b1a;
    zeros(da_b1a, t.a_b1a.channels, t.a_b1a.height, t.a_b1a.width);
    conv_backward(net.block1_conv2, t.c_b1b, da_b1, g.block1_conv2, &da_b1a);
    relu_backward_inplace(da_b1a, t.z_b1a);
    conv_backward(net.block1_conv1, t.c_b1a, da_b1a, g.block1_conv1, &da_stem);

    relu_backward_inplace(da_stem, t.z_stem);
    conv_backward(net.stem, t.c_stem, da_stem, g.stem, nullptr);
}

void axpy(TinyResNet& dst, double alpha, TinyResNet& src) {
    auto d = dst.parameters();
    auto s = src.parameters();
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t k = 0; k < d[i].values.size(); ++k) d[i].values[k] += alpha * s[i].values[k];
}

}  // namespace

Conv2d::Conv2d(int in, int out, int k, int s, int p)
    : in_channels(in), out_channels(out), kernel(k), stride(s), pad(p),
      weight(std::size_t(out) * in * k * k, 0.0), bias(std::size_t(out), 0.0) {}

TinyResNet::TinyResNet(int in_c, int base)
    : in_channels(in_c), base_channels(base), stem(in_c, base, 3, 1, 1), block1_conv1(base, base, 3, 1, 1),
      block1_conv2(base, base, 3, 1, 1), block2_conv1(base, 2 * base, 3, 2, 1),
      block2_conv2(2 * base, 2 * base, 3, 1, 1), block2_proj(base, 2 * base, 1, 2, 0),
      head_weight(std::size_t(2) * 2 * base, 0.0), head_bias(2, 0.0) {
    if (in_c < 1 || base < 1) throw Error(ErrorCode::InvalidConfig, "network needs positive channel counts");
}

TinyResNet TinyResNet::initialized(int in_c, int base, std::uint64_t seed) {
    TinyResNet net(in_c, base);
    Rng rng(seed);
    for (Conv2d* conv : {&net.stem, &net.block1_conv1, &net.block1_conv2, &net.block2_conv1, &net.block2_conv2,
                         &net.block2_proj}) {
        const double sd = std::sqrt(2.0 / double(conv->fan_in()));
        for (auto& w : conv->weight) w = sd * rng.normal();
    }
    const double head_sd = 1.0 / std::sqrt(double(net.feature_channels()));
    for (auto& w : net.head_weight) w = head_sd * rng.normal();
    return net;
}

std::vector<TinyResNet::Param> TinyResNet::parameters() {
    std::vector<Param> out;
    auto add_conv = [&](const std::string& name, Conv2d& c) {
        out.push_back({name + ".weight", {c.out_channels, c.in_channels, c.kernel, c.kernel}, c.weight});
        out.push_back({name + ".bias", {c.out_channels}, c.bias});
    };
    add_conv("stem", stem);
    add_conv("block1.conv1", block1_conv1);
    add_conv("block1.conv2", block1_conv2);
    add_conv("block2.conv1", block2_conv1);
    add_conv("block2.conv2", block2_conv2);
    add_conv("block2.proj", block2_proj);
    out.push_back({"head.weight", {2, feature_channels()}, head_weight});
    out.push_back({"head.bias", {2}, head_bias});
    return out;
}

std::size_t TinyResNet::parameter_count() const {
    std::size_t n = head_weight.size() + head_bias.size();
    for (const Conv2d* c : {&stem, &block1_conv1, &block1_conv2, &block2_conv1, &block2_conv2, &block2_proj})
        n += c->weight.size() + c->bias.size();
    return n;
}

ForwardResult forward(const TinyResNet& net, const Tensor& x) {
    Trace& t = scratch_trace();
    run_forward(net, x, t);
    return {t.logits, t.a_b2};
}

std::array<double, 2> softmax(const Logits& z) {
    const double lse = log_sum_exp(z);
    return {std::exp(z[0] - lse), std::exp(z[1] - lse)};
}

double weighted_ce_loss(std::span<const Logits> logits, std::span<const int> targets, ClassWeights weights) {
    if (logits.size() != targets.size()) throw Error(ErrorCode::Shape, "logits and targets differ in length");
    if (logits.empty()) throw Error(ErrorCode::InvalidInput, "loss of an empty batch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const int y = targets[i];
        if (y != 0 && y != 1) throw Error(ErrorCode::InvalidInput, "class id must be 0 or 1");
        const double w = weights[y];
        num += w * nll(logits[i], y);
        den += w;
    }
    return den > 0.0 ? num / den : 0.0;
}

Gradients backward(const TinyResNet& net, std::span<const Tensor> batch, std::span<const int> targets,
                   ClassWeights weights) {
    if (batch.size() != targets.size()) throw Error(ErrorCode::Shape, "batch and targets differ in length");
    if (batch.empty()) throw Error(ErrorCode::InvalidInput, "gradient of an empty batch");
    double den = 0.0;
    for (int y : targets) {
        if (y != 0 && y != 1) throw Error(ErrorCode::InvalidInput, "class id must be 0 or 1");
        den += weights[y];
    }
    Gradients out{net.zeros_like(), 0.0};
    if (!(den > 0.0)) return out;

    Trace& t = scratch_trace();
    double num = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const int y = targets[i];
        const double scale = weights[y] / den;
        if (scale == 0.0) continue;
        run_forward(net, batch[i], t);
        num += weights[y] * nll(t.logits, y);
        const auto p = softmax(t.logits);
        const std::array<double, 2> dlogits{scale * (p[0] - (y == 0 ? 1.0 : 0.0)),
                                            scale * (p[1] - (y == 1 ? 1.0 : 0.0))};
        run_backward(net, t, dlogits, out.grad);
    }
    out.loss = num / den;
    return out;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (!(base_lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "base_lr must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= total_epochs)
        throw Error(ErrorCode::InvalidConfig, "need 0 <= warmup_epochs < total_epochs");
    if (!(eta_min >= 0.0 && eta_min <= base_lr)) throw Error(ErrorCode::InvalidConfig, "need 0 <= eta_min <= base_lr");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::InvalidConfig, "threshold must lie in (0, 1)");
    if (class_weights && !(class_weights->negative > 0.0 && class_weights->positive > 0.0))
        throw Error(ErrorCode::InvalidConfig, "class weights must be positive");
}

double lr_at(const TrainConfig& cfg, int epoch) {
    if (epoch < 0 || epoch > cfg.total_epochs)
        throw Error(ErrorCode::InvalidInput, "epoch " + std::to_string(epoch) + " outside [0, " +
                                                 std::to_string(cfg.total_epochs) + "]");
    if (epoch < cfg.warmup_epochs) return cfg.base_lr;
    const double progress = double(epoch - cfg.warmup_epochs) / double(cfg.total_epochs - cfg.warmup_epochs);
    return cfg.eta_min + 0.5 * (cfg.base_lr - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

ClassWeights inverse_frequency_weights(std::span<const int> targets) {
    std::size_t pos = 0;
    for (int y : targets) pos += (y == 1);
    const std::size_t neg = targets.size() - pos;
    if (pos == 0 || neg == 0) throw Error(ErrorCode::DegenerateData, "training data must contain both classes");
    const double n = double(targets.size());
    return {n / (2.0 * double(neg)), n / (2.0 * double(pos))};
}

namespace {

std::vector<ScoredItem> score_dataset(const TinyResNet& net, const Dataset& data) {
    std::vector<ScoredItem> items;
    items.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto fr = forward(net, data.inputs[i]);
        items.push_back({softmax(fr.logits)[1], data.targets[i] == 1, {}, int(i), false});
    }
    return items;
}

}  // namespace

TrainResult train(TinyResNet net, const Dataset& train_set, const Dataset& val, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (train_set.inputs.size() != train_set.targets.size() || val.inputs.size() != val.targets.size())
        throw Error(ErrorCode::Shape, "dataset inputs and targets differ in length");
    const ClassWeights inverse = inverse_frequency_weights(train_set.targets);  // also rejects single-class data
    const ClassWeights weights = cfg.class_weights.value_or(inverse);

    TrainResult result{std::move(net), weights, {}};
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<Tensor> batch;
    std::vector<int> targets;
    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        rng.shuffle(std::span<std::size_t>(order));
        double loss_num = 0.0, loss_den = 0.0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            batch.clear();
            targets.clear();
            double batch_weight = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(train_set.inputs[order[k]]);
                targets.push_back(train_set.targets[order[k]]);
                batch_weight += weights[targets.back()];
            }
            auto g = backward(result.net, batch, targets, weights);
            axpy(result.net, -lr, g.grad);
            loss_num += g.loss * batch_weight;
            loss_den += batch_weight;
        }
        EpochRecord rec{epoch, lr, loss_den > 0 ? loss_num / loss_den : 0.0, std::nullopt, std::nullopt};
        const bool val_pos = std::count(val.targets.begin(), val.targets.end(), 1) > 0;
        const bool val_neg = std::count(val.targets.begin(), val.targets.end(), 0) > 0;
        if (val_pos && val_neg) {
            const auto items = score_dataset(result.net, val);
            rec.val_auroc = auroc(items);
            rec.val_aupr = aupr(items);
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

Prediction prediction_from_logits(const Logits& z, double threshold) {
    const double p = softmax(z)[1];
    return {p, p > threshold};
}

Prediction predict(const TinyResNet& net, const Tensor& patch, double threshold) {
    return prediction_from_logits(forward(net, patch).logits, threshold);
}

std::pair<int, int> Heatmap::argmax() const {
    const auto it = std::max_element(values.begin(), values.end());
    const auto idx = int(std::distance(values.begin(), it));
    return {idx % width, idx / width};
}

Heatmap class_activation_map(const Tensor& features, std::span<const double> weights, int out_w, int out_h) {
    if (weights.size() != std::size_t(features.channels))
        throw Error(ErrorCode::Shape, "CAM weights do not match feature channels");
    if (out_w < 1 || out_h < 1) throw Error(ErrorCode::Shape, "CAM output must be non-empty");
    const int fw = features.width, fh = features.height;
    std::vector<double> raw(features.plane(), 0.0);
    for (int c = 0; c < features.channels; ++c) {
        const double w = weights[std::size_t(c)];
        const double* f = features.values.data() + std::size_t(c) * features.plane();
        for (std::size_t i = 0; i < raw.size(); ++i) raw[i] += w * f[i];
    }

    Heatmap h{out_w, out_h, std::vector<double>(std::size_t(out_w) * out_h)};
    const double rx = double(fw) / out_w, ry = double(fh) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, double(fh - 1));
        const int y0 = int(sy), y1 = std::min(y0 + 1, fh - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, double(fw - 1));
            const int x0 = int(sx), x1 = std::min(x0 + 1, fw - 1);
            const double fx = sx - x0;
            auto v = [&](int xx, int yy) { return raw[std::size_t(yy) * fw + xx]; };
            const double top = v(x0, y0) * (1 - fx) + v(x1, y0) * fx;
            const double bot = v(x0, y1) * (1 - fx) + v(x1, y1) * fx;
            h.values[std::size_t(y) * out_w + x] = top * (1 - fy) + bot * fy;
        }
    }
    const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
    const double mn = *lo, mx = *hi;
    if (mx - mn > 0.0) {
        for (auto& v : h.values) v = (v - mn) / (mx - mn);
    } else {
        std::fill(h.values.begin(), h.values.end(), 0.0);
    }
    return h;
}

Heatmap cam(const TinyResNet& net, const Tensor& patch, int cls) {
    if (cls != 0 && cls != 1) throw Error(ErrorCode::InvalidInput, "class id must be 0 or 1");
    const auto fr = forward(net, patch);
    const std::size_t c = std::size_t(net.feature_channels());
    return class_activation_map(fr.features, std::span<const double>(net.head_weight).subspan(std::size_t(cls) * c, c),
                                patch.width, patch.height);
}

nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::json j = {{"batch_size", cfg.batch_size},       {"base_lr", cfg.base_lr},
                        {"warmup_epochs", cfg.warmup_epochs}, {"total_epochs", cfg.total_epochs},
                        {"eta_min", cfg.eta_min},             {"seed", cfg.seed},
                        {"threshold", cfg.threshold}};
    j["class_weights"] = cfg.class_weights
                             ? nlohmann::json::array({cfg.class_weights->negative, cfg.class_weights->positive})
                             : nlohmann::json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.base_lr = j.at("base_lr").get<double>();
    cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
    cfg.total_epochs = j.at("total_epochs").get<int>();
    cfg.eta_min = j.at("eta_min").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.threshold = j.at("threshold").get<double>();
    if (j.contains("class_weights") && !j["class_weights"].is_null())
        cfg.class_weights = ClassWeights{j["class_weights"].at(0).get<double>(), j["class_weights"].at(1).get<double>()};
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const Checkpoint& ckpt) {
    auto net = ckpt.net;  // parameters() hands out mutable spans
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : net.parameters())
        params.push_back({{"name", p.name}, {"shape", p.shape}, {"values", std::vector<double>(p.values.begin(), p.values.end())}});
    nlohmann::json j = {{"format", "cxrpatch-checkpoint"},
                        {"version", kCheckpointVersion},
                        {"arch",
                         {{"type", "tiny-resnet"},
                          {"in_channels", ckpt.net.in_channels},
                          {"base_channels", ckpt.net.base_channels}}},
                        {"train_config", to_json(ckpt.config)},
                        {"preprocess", ckpt.preprocess},
                        {"params", std::move(params)}};
    j["class_weights_used"] = ckpt.weights_used ? nlohmann::json::array({ckpt.weights_used->negative, ckpt.weights_used->positive})
                                                : nlohmann::json(nullptr);
    return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string()) != "cxrpatch-checkpoint")
            throw Error(ErrorCode::InvalidInput, "not a cxrpatch checkpoint");
        if (!j.contains("version")) throw Error(ErrorCode::InvalidInput, "checkpoint lacks a version field");
        if (j["version"].get<int>() != kCheckpointVersion)
            throw Error(ErrorCode::InvalidInput, "unsupported checkpoint version " + j["version"].dump());
        const auto& arch = j.at("arch");
        if (arch.at("type").get<std::string>() != "tiny-resnet")
            throw Error(ErrorCode::InvalidInput, "unknown architecture " + arch["type"].dump());
        Checkpoint ck;
        ck.net = TinyResNet(arch.at("in_channels").get<int>(), arch.at("base_channels").get<int>());
        ck.config = train_config_from_json(j.at("train_config"));
        ck.preprocess = j.value("preprocess", nlohmann::json::object());
        if (j.contains("class_weights_used") && !j["class_weights_used"].is_null())
            ck.weights_used = ClassWeights{j["class_weights_used"].at(0).get<double>(),
                                           j["class_weights_used"].at(1).get<double>()};
        auto params = ck.net.parameters();
        const auto& stored = j.at("params");
        if (stored.size() != params.size()) throw Error(ErrorCode::InvalidInput, "checkpoint parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& sp = stored[i];
            if (sp.at("name").get<std::string>() != params[i].name ||
                sp.at("shape").get<std::vector<int>>() != params[i].shape)
                throw Error(ErrorCode::InvalidInput, "checkpoint parameter " + std::to_string(i) + " does not match " +
                                                         params[i].name);
            const auto values = sp.at("values").get<std::vector<double>>();
            if (values.size() != params[i].values.size())
                throw Error(ErrorCode::InvalidInput, "wrong value count for " + params[i].name);
            for (double v : values)
                if (!std::isfinite(v)) throw Error(ErrorCode::InvalidInput, "non-finite value in " + params[i].name);
            std::copy(values.begin(), values.end(), params[i].values.begin());
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidInput, std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << to_json(ckpt).dump() << '\n';
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidInput, "malformed checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

nlohmann::json to_json(const EpochRecord& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}, {"val_auroc", opt(r.val_auroc)},
            {"val_aupr", opt(r.val_aupr)}};
}

}  // namespace cxr
