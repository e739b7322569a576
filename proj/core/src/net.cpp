#include "dla/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "dla/error.hpp"
#include "dla/rng.hpp"

namespace dla {

namespace {

// forward/backward work on fixed-size sample groups so buffer sizes stay
// bounded for any batch size; group boundaries are independent of thread or
// worker counts, keeping accumulation order reproducible
constexpr int kChunk = 16;
constexpr double kInputScale = 1.0 / 1000.0;

int pad_lo(const ConvShape& s) {
    int total = std::max(0, (s.h_out - 1) * s.stride + s.kernel - s.h_in);
    return total / 2;
}

// col rows are (c, ky, kx), columns are (g, oy, ox) with g-major layout so
// each sample's output occupies a contiguous column range
template <class T>
void im2col(const T* in, const ConvShape& s, int g, T* col) {
    const int k = s.kernel, H = s.h_in, Ho = s.h_out, stride = s.stride;
    const int plo = pad_lo(s);
    const std::size_t in_plane = std::size_t(H) * H;
    const std::size_t in_sample = in_plane * s.in_ch;
    const std::size_t out_plane = std::size_t(Ho) * Ho;
    const std::size_t cols = std::size_t(g) * out_plane;
    for (int c = 0; c < s.in_ch; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* row = col + (std::size_t(c) * k * k + std::size_t(ky) * k + kx) * cols;
                for (int gi = 0; gi < g; ++gi) {
                    const T* src = in + gi * in_sample + c * in_plane;
                    T* dst = row + gi * out_plane;
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride + ky - plo;
                        T* d = dst + std::size_t(oy) * Ho;
                        if (iy < 0 || iy >= H) {
                            std::fill(d, d + Ho, T(0));
                            continue;
                        }
                        const T* srow = src + std::size_t(iy) * H;
                        if (stride == 1) {
                            int ix0 = kx - plo;
                            int ox_lo = std::max(0, -ix0);
                            int ox_hi = std::min(Ho, H - ix0);
                            for (int ox = 0; ox < ox_lo; ++ox) d[ox] = T(0);
                            if (ox_hi > ox_lo)
                                std::memcpy(d + ox_lo, srow + ix0 + ox_lo,
                                            std::size_t(ox_hi - ox_lo) * sizeof(T));
                            for (int ox = std::max(ox_hi, ox_lo); ox < Ho; ++ox) d[ox] = T(0);
                        } else {
                            for (int ox = 0; ox < Ho; ++ox) {
                                int ix = ox * stride + kx - plo;
                                d[ox] = (ix >= 0 && ix < H) ? srow[ix] : T(0);
                            }
                        }
                    }
                }
            }
}

void col2im_acc(const double* col, const ConvShape& s, int g, double* din) {
    const int k = s.kernel, H = s.h_in, Ho = s.h_out, stride = s.stride;
    const int plo = pad_lo(s);
    const std::size_t in_plane = std::size_t(H) * H;
    const std::size_t in_sample = in_plane * s.in_ch;
    const std::size_t out_plane = std::size_t(Ho) * Ho;
    const std::size_t cols = std::size_t(g) * out_plane;
    for (int c = 0; c < s.in_ch; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col + (std::size_t(c) * k * k + std::size_t(ky) * k + kx) * cols;
                for (int gi = 0; gi < g; ++gi) {
                    double* dst = din + gi * in_sample + c * in_plane;
                    const double* srcrow = row + gi * out_plane;
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride + ky - plo;
                        if (iy < 0 || iy >= H) continue;
                        double* drow = dst + std::size_t(iy) * H;
                        const double* srow = srcrow + std::size_t(oy) * Ho;
                        for (int ox = 0; ox < Ho; ++ox) {
                            int ix = ox * stride + kx - plo;
                            if (ix >= 0 && ix < H) drow[ix] += srow[ox];
                        }
                    }
                }
            }
}

struct BlockBufs {
    Tensor a, h, h2, y;   // forward cache
    Tensor dh, da, dtmp;  // backward scratch
};

struct Workspace {
    Architecture arch;  // what the buffers were sized for
    bool valid = false;

    NetPlan plan;
    Tensor x0, c0out;
    std::vector<BlockBufs> blocks;
    std::vector<Tensor> dx;  // dx[i] = grad at block i input; dx[n] = grad at head input
    Tensor feat, logits, dfeat, dlogits;
    std::vector<double> col, dcol, ybuf, dybuf;

    void prepare(const Architecture& a);
};

void Workspace::prepare(const Architecture& a) {
    if (valid && arch == a) return;
    arch = a;
    plan = plan_network(a);
    int g = kChunk;

    auto vol = [g](int ch, int h) { return std::vector<int>{g, ch, h, h}; };
    x0 = Tensor(vol(plan.input.in_ch, plan.input.h_in));
    c0out = Tensor(vol(plan.input.out_ch, plan.input.h_out));

    blocks.assign(plan.blocks.size(), {});
    dx.assign(plan.blocks.size() + 1, Tensor());
    std::size_t col_elems = 0, y_elems = 0;
    auto grow = [&](const ConvShape& cs) {
        std::size_t cols = std::size_t(g) * cs.h_out * cs.h_out;
        col_elems = std::max(col_elems, std::size_t(cs.in_ch) * cs.kernel * cs.kernel * cols);
        y_elems = std::max(y_elems, std::size_t(cs.out_ch) * cols);
    };
    grow(plan.input);
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        const auto& bp = plan.blocks[i];
        auto& bb = blocks[i];
        bb.a = Tensor(vol(bp.c1.in_ch, bp.c1.h_in));
        bb.h = Tensor(vol(bp.c1.out_ch, bp.c1.h_out));
        bb.h2 = Tensor(vol(bp.c2.in_ch, bp.c2.h_in));
        bb.y = Tensor(vol(bp.c2.out_ch, bp.c2.h_out));
        bb.dh = Tensor(vol(bp.c1.out_ch, bp.c1.h_out));
        bb.da = Tensor(vol(bp.c1.in_ch, bp.c1.h_in));
        bb.dtmp = Tensor(vol(bp.c1.in_ch, bp.c1.h_in));
        dx[i] = Tensor(vol(bp.c1.in_ch, bp.c1.h_in));
        grow(bp.c1);
        grow(bp.c2);
        if (bp.has_proj) grow(bp.proj);
    }
    dx[plan.blocks.size()] = Tensor(vol(plan.features, plan.gap_dim));
    feat = Tensor({g, plan.features});
    logits = Tensor({g, arch.n_classes});
    dfeat = Tensor({g, plan.features});
    dlogits = Tensor({g, arch.n_classes});
    col.assign(col_elems, 0.0);
    dcol.assign(col_elems, 0.0);
    ybuf.assign(y_elems, 0.0);
    dybuf.assign(y_elems, 0.0);
    valid = true;
}

thread_local Workspace tls_ws;

void conv_forward(const ConvShape& s, const ModelParams::Conv& p, const double* in, double* out,
                  int g, Workspace& ws) {
    const std::size_t rows = std::size_t(s.in_ch) * s.kernel * s.kernel;
    const std::size_t plane = std::size_t(s.h_out) * s.h_out;
    const std::size_t cols = std::size_t(g) * plane;
    im2col(in, s, g, ws.col.data());
    gemm(false, false, s.out_ch, static_cast<int>(cols), static_cast<int>(rows), 1.0,
         p.w.data(), static_cast<int>(rows), ws.col.data(), static_cast<int>(cols), 0.0,
         ws.ybuf.data(), static_cast<int>(cols));
    for (int gi = 0; gi < g; ++gi)
        for (int oc = 0; oc < s.out_ch; ++oc) {
            const double* src = ws.ybuf.data() + oc * cols + gi * plane;
            double bias = p.b.v[oc];
            double* dst = out + (std::size_t(gi) * s.out_ch + oc) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
        }
}

// accumulates dW/db; writes din (overwriting) when non-null
void conv_backward(const ConvShape& s, const ModelParams::Conv& p, const double* in,
                   const double* dout, ModelParams::Conv& grad, double* din, int g,
                   Workspace& ws) {
    const std::size_t rows = std::size_t(s.in_ch) * s.kernel * s.kernel;
    const std::size_t plane = std::size_t(s.h_out) * s.h_out;
    const std::size_t cols = std::size_t(g) * plane;
    for (int gi = 0; gi < g; ++gi)
        for (int oc = 0; oc < s.out_ch; ++oc)
            std::memcpy(ws.dybuf.data() + oc * cols + gi * plane,
                        dout + (std::size_t(gi) * s.out_ch + oc) * plane, plane * sizeof(double));
    im2col(in, s, g, ws.col.data());
    gemm(false, true, s.out_ch, static_cast<int>(rows), static_cast<int>(cols), 1.0,
         ws.dybuf.data(), static_cast<int>(cols), ws.col.data(), static_cast<int>(cols), 1.0,
         grad.w.data(), static_cast<int>(rows));
    for (int oc = 0; oc < s.out_ch; ++oc) {
        const double* r = ws.dybuf.data() + oc * cols;
        double acc = 0.0;
        for (std::size_t i = 0; i < cols; ++i) acc += r[i];
        grad.b.v[oc] += acc;
    }
    if (din) {
        gemm(true, false, static_cast<int>(rows), static_cast<int>(cols), s.out_ch, 1.0,
             p.w.data(), static_cast<int>(rows), ws.dybuf.data(), static_cast<int>(cols), 0.0,
             ws.dcol.data(), static_cast<int>(cols));
        std::fill(din, din + std::size_t(g) * s.in_ch * s.h_in * s.h_in, 0.0);
        col2im_acc(ws.dcol.data(), s, g, din);
    }
}

void relu(const double* in, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

// runs the network on one sample group, leaving activations in ws
void forward_chunk(const Architecture& arch, const ModelParams& params, const double* batch,
                   int g, Workspace& ws) {
    const NetPlan& plan = ws.plan;
    const std::size_t sample = std::size_t(plan.input.in_ch) * plan.input.h_in * plan.input.h_in;
    for (std::size_t i = 0; i < std::size_t(g) * sample; ++i)
        ws.x0.v[i] = batch[i] * kInputScale;

    conv_forward(plan.input, params.input, ws.x0.data(), ws.c0out.data(), g, ws);

    const double* x = ws.c0out.data();
    for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
        const auto& bp = plan.blocks[bi];
        auto& bb = ws.blocks[bi];
        const std::size_t in_len = std::size_t(g) * bp.c1.in_ch * bp.c1.h_in * bp.c1.h_in;
        const std::size_t out_len = std::size_t(g) * bp.c2.out_ch * bp.c2.h_out * bp.c2.h_out;
        relu(x, bb.a.data(), in_len);
        conv_forward(bp.c1, params.blocks[bi].c1, bb.a.data(), bb.h.data(), g, ws);
        relu(bb.h.data(), bb.h2.data(), bb.h.size());
        conv_forward(bp.c2, params.blocks[bi].c2, bb.h2.data(), bb.y.data(), g, ws);
        if (bp.has_proj) {
            // strided projection shares the pre-activation input; dh doubles as
            // scratch here since it has the output dims
            conv_forward(bp.proj, params.blocks[bi].proj, bb.a.data(), bb.dh.data(), g, ws);
            for (std::size_t i = 0; i < out_len; ++i) bb.y.v[i] += bb.dh.v[i];
        } else {
            for (std::size_t i = 0; i < out_len; ++i) bb.y.v[i] += x[i];
        }
        x = bb.y.data();
    }

    const double inv_plane = 1.0 / (std::size_t(plan.gap_dim) * plan.gap_dim);
    const std::size_t plane = std::size_t(plan.gap_dim) * plan.gap_dim;
    for (int gi = 0; gi < g; ++gi)
        for (int c = 0; c < plan.features; ++c) {
            const double* src = x + (std::size_t(gi) * plan.features + c) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            ws.feat.v[std::size_t(gi) * plan.features + c] = acc * inv_plane;
        }

    gemm(false, true, g, arch.n_classes, plan.features, 1.0, ws.feat.data(), plan.features,
         params.fc_w.data(), plan.features, 0.0, ws.logits.data(), arch.n_classes);
    for (int gi = 0; gi < g; ++gi)
        for (int c = 0; c < arch.n_classes; ++c) ws.logits.v[std::size_t(gi) * arch.n_classes + c] += params.fc_b.v[c];
}

}  // namespace

std::vector<int> Architecture::boundaries() const {
    if (!stage_boundaries.empty()) return stage_boundaries;
    std::vector<int> out;
    for (int third : {conv_layers / 3, 2 * conv_layers / 3}) {
        int b = third & ~1;
        if (b > 0 && (out.empty() || b != out.back())) out.push_back(b);
    }
    return out;
}

void Architecture::validate() const {
    if (conv_layers < 2 || conv_layers % 2 != 0)
        throw ConfigError("conv_layers must be even and at least 2");
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
    if (patch_p < 1 || patch_p % 2 == 0 || patch_s < 1 || patch_s % 2 == 0)
        throw ConfigError("patch dims must be odd and positive");
    if (n_classes < 2) throw ConfigError("need at least two classes");
    if (input_kernel < 1 || input_kernel % 2 == 0)
        throw ConfigError("input kernel must be odd and positive");
    int prev = -1;
    for (int b : stage_boundaries) {
        if (b < 0 || b >= conv_layers) throw ConfigError("stage boundary out of range");
        if (b % 2 != 0) throw ConfigError("stage boundaries must align to block starts");
        if (b <= prev) throw ConfigError("stage boundaries must be strictly increasing");
        prev = b;
    }
}

NetPlan plan_network(const Architecture& arch) {
    arch.validate();
    auto bounds = arch.boundaries();
    NetPlan plan;
    int h = arch.patch_p;
    plan.input = {arch.patch_s, arch.base_channels, arch.input_kernel, 1, h, h};
    int ch = arch.base_channels;
    for (int conv = 0; conv < arch.conv_layers; conv += 2) {
        bool bound = std::find(bounds.begin(), bounds.end(), conv) != bounds.end();
        int out_ch = bound ? ch * 2 : ch;
        int stride = bound ? 2 : 1;
        int ho = (h + stride - 1) / stride;
        NetPlan::Block blk;
        blk.c1 = {ch, out_ch, 3, stride, h, ho};
        blk.c2 = {out_ch, out_ch, 3, 1, ho, ho};
        blk.has_proj = bound;
        if (bound) blk.proj = {ch, out_ch, 1, 2, h, ho};
        plan.blocks.push_back(blk);
        ch = out_ch;
        h = ho;
    }
    plan.gap_dim = h;
    plan.features = ch;
    return plan;
}

std::size_t ModelParams::count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Tensor& t) { n += t.size(); });
    return n;
}

ModelParams zeros_like(const Architecture& arch) {
    NetPlan plan = plan_network(arch);
    ModelParams p;
    auto make_conv = [](const ConvShape& s) {
        ModelParams::Conv c;
        c.w = Tensor({s.out_ch, s.in_ch, s.kernel, s.kernel});
        c.b = Tensor({s.out_ch});
        return c;
    };
    p.input = make_conv(plan.input);
    for (const auto& bp : plan.blocks) {
        ModelParams::Block blk;
        blk.c1 = make_conv(bp.c1);
        blk.c2 = make_conv(bp.c2);
        blk.has_proj = bp.has_proj;
        if (bp.has_proj) blk.proj = make_conv(bp.proj);
        p.blocks.push_back(std::move(blk));
    }
    p.fc_w = Tensor({arch.n_classes, plan.features});
    p.fc_b = Tensor({arch.n_classes});
    return p;
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
    ModelParams p = zeros_like(arch);
    Rng rng(seed);
    p.for_each_tensor([&](Tensor& t) {
        if (t.shape.size() < 2) return;  // biases stay zero
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= static_cast<std::size_t>(t.shape[d]);
        double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& w : t.v) w = rng.normal(0.0, sd);
    });
    return p;
}

void softmax_row(const double* logits, int n, double* probs) {
    double m = logits[0];
    for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        probs[i] = std::exp(logits[i] - m);
        sum += probs[i];
    }
    for (int i = 0; i < n; ++i) probs[i] /= sum;
}

int argmax_class(const double* probs, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (probs[i] > probs[best]) best = i;
    return best + 1;
}

void forward(const Architecture& arch, const ModelParams& params, const double* batch, int b,
             double* logits) {
    if (b < 1) throw ShapeError("forward: empty batch");
    Workspace& ws = tls_ws;
    ws.prepare(arch);
    const std::size_t sample = std::size_t(arch.patch_s) * arch.patch_p * arch.patch_p;
    for (int start = 0; start < b; start += kChunk) {
        int g = std::min(kChunk, b - start);
        forward_chunk(arch, params, batch + std::size_t(start) * sample, g, ws);
        std::memcpy(logits + std::size_t(start) * arch.n_classes, ws.logits.data(),
                    std::size_t(g) * arch.n_classes * sizeof(double));
    }
}

double loss_and_grad(const Architecture& arch, const ModelParams& params, const double* batch,
                     const std::uint8_t* labels, int b, Gradients& grads) {
    if (b < 1) throw ShapeError("loss_and_grad: empty batch");
    Workspace& ws = tls_ws;
    ws.prepare(arch);
    const NetPlan& plan = ws.plan;
    const std::size_t sample = std::size_t(arch.patch_s) * arch.patch_p * arch.patch_p;

    grads.for_each_tensor([](Tensor& t) { t.zero(); });
    double loss_sum = 0.0;

    for (int start = 0; start < b; start += kChunk) {
        int g = std::min(kChunk, b - start);
        forward_chunk(arch, params, batch + std::size_t(start) * sample, g, ws);

        // softmax cross-entropy on this group
        for (int gi = 0; gi < g; ++gi) {
            int label = labels[start + gi];
            if (label < 1 || label > arch.n_classes)
                throw DataError("loss_and_grad: label out of range");
            const double* z = ws.logits.data() + std::size_t(gi) * arch.n_classes;
            double* dz = ws.dlogits.data() + std::size_t(gi) * arch.n_classes;
            double m = z[0];
            for (int c = 1; c < arch.n_classes; ++c) m = std::max(m, z[c]);
            double sum = 0.0;
            for (int c = 0; c < arch.n_classes; ++c) sum += std::exp(z[c] - m);
            loss_sum += m + std::log(sum) - z[label - 1];
            for (int c = 0; c < arch.n_classes; ++c) {
                double p = std::exp(z[c] - m) / sum;
                dz[c] = p - (c == label - 1 ? 1.0 : 0.0);
            }
        }

        // head
        gemm(true, false, arch.n_classes, plan.features, g, 1.0, ws.dlogits.data(),
             arch.n_classes, ws.feat.data(), plan.features, 1.0, grads.fc_w.data(),
             plan.features);
        for (int c = 0; c < arch.n_classes; ++c) {
            double acc = 0.0;
            for (int gi = 0; gi < g; ++gi) acc += ws.dlogits.v[std::size_t(gi) * arch.n_classes + c];
            grads.fc_b.v[c] += acc;
        }
        gemm(false, false, g, plan.features, arch.n_classes, 1.0, ws.dlogits.data(),
             arch.n_classes, params.fc_w.data(), plan.features, 0.0, ws.dfeat.data(),
             plan.features);

        const std::size_t plane = std::size_t(plan.gap_dim) * plan.gap_dim;
        const double inv_plane = 1.0 / static_cast<double>(plane);
        Tensor& dhead = ws.dx[plan.blocks.size()];
        for (int gi = 0; gi < g; ++gi)
            for (int c = 0; c < plan.features; ++c) {
                double v = ws.dfeat.v[std::size_t(gi) * plan.features + c] * inv_plane;
                double* dst = dhead.data() + (std::size_t(gi) * plan.features + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] = v;
            }

        // blocks, last to first
        const double* dy = dhead.data();
        for (std::size_t bi = plan.blocks.size(); bi-- > 0;) {
            const auto& bp = plan.blocks[bi];
            auto& bb = ws.blocks[bi];
            auto& gblk = grads.blocks[bi];
            const double* x = bi == 0 ? ws.c0out.data() : ws.blocks[bi - 1].y.data();
            const std::size_t in_len = std::size_t(g) * bp.c1.in_ch * bp.c1.h_in * bp.c1.h_in;

            conv_backward(bp.c2, params.blocks[bi].c2, bb.h2.data(), dy, gblk.c2, bb.dh.data(), g,
                          ws);
            for (std::size_t i = 0; i < bb.h.size(); ++i)
                bb.dh.v[i] = bb.h.v[i] > 0.0 ? bb.dh.v[i] : 0.0;
            conv_backward(bp.c1, params.blocks[bi].c1, bb.a.data(), bb.dh.data(), gblk.c1,
                          bb.da.data(), g, ws);
            if (bp.has_proj) {
                conv_backward(bp.proj, params.blocks[bi].proj, bb.a.data(), dy, gblk.proj,
                              bb.dtmp.data(), g, ws);
                for (std::size_t i = 0; i < in_len; ++i) bb.da.v[i] += bb.dtmp.v[i];
                for (std::size_t i = 0; i < in_len; ++i)
                    ws.dx[bi].v[i] = x[i] > 0.0 ? bb.da.v[i] : 0.0;
            } else {
                for (std::size_t i = 0; i < in_len; ++i)
                    ws.dx[bi].v[i] = (x[i] > 0.0 ? bb.da.v[i] : 0.0) + dy[i];
            }
            dy = ws.dx[bi].data();
        }

        conv_backward(plan.input, params.input, ws.x0.data(), dy, grads.input, nullptr, g, ws);
    }

    const double inv_b = 1.0 / static_cast<double>(b);
    grads.for_each_tensor([&](Tensor& t) {
        for (auto& v : t.v) v *= inv_b;
    });
    return loss_sum * inv_b;
}

namespace {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw FormatError("truncated checkpoint: " + path.string());
    return v;
}

}  // namespace

void save_checkpoint(const Architecture& arch, const ModelParams& params,
                     const std::filesystem::path& path) {
    arch.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("DLAM", 4);
    put(os, std::uint16_t{1});
    put(os, std::int32_t(arch.conv_layers));
    put(os, std::int32_t(arch.base_channels));
    put(os, std::int32_t(arch.patch_p));
    put(os, std::int32_t(arch.patch_s));
    put(os, std::int32_t(arch.n_classes));
    put(os, std::int32_t(arch.input_kernel));
    put(os, std::uint32_t(arch.stage_boundaries.size()));
    for (int b : arch.stage_boundaries) put(os, std::int32_t(b));
    put(os, std::uint64_t(params.count()));
    params.for_each_tensor([&](const Tensor& t) {
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!os) throw IoError("write failed: " + path.string());
}

std::pair<Architecture, ModelParams> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DLAM", 4) != 0)
        throw FormatError("bad magic, expected DLAM: " + path.string());
    if (get<std::uint16_t>(is, path) != 1)
        throw FormatError("unsupported checkpoint version: " + path.string());
    Architecture arch;
    arch.conv_layers = get<std::int32_t>(is, path);
    arch.base_channels = get<std::int32_t>(is, path);
    arch.patch_p = get<std::int32_t>(is, path);
    arch.patch_s = get<std::int32_t>(is, path);
    arch.n_classes = get<std::int32_t>(is, path);
    arch.input_kernel = get<std::int32_t>(is, path);
    auto nb = get<std::uint32_t>(is, path);
    arch.stage_boundaries.resize(nb);
    for (auto& b : arch.stage_boundaries) b = get<std::int32_t>(is, path);
    try {
        arch.validate();
    } catch (const ConfigError& e) {
        throw FormatError("checkpoint holds an invalid architecture: " + std::string(e.what()));
    }
    auto n = get<std::uint64_t>(is, path);
    ModelParams params = zeros_like(arch);
    if (n != params.count()) throw FormatError("checkpoint parameter count mismatch: " + path.string());
    params.for_each_tensor([&](Tensor& t) {
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!is) throw FormatError("truncated checkpoint: " + path.string());
    if (is.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after payload: " + path.string());
    bool bad = false;
    params.for_each_tensor([&](const Tensor& t) {
        for (double v : t.v)
            if (!std::isfinite(v)) bad = true;
    });
    if (bad) throw FormatError("non-finite parameter value: " + path.string());
    return {arch, std::move(params)};
}

namespace {

struct F32Conv {
    std::vector<float> w, b;
};

F32Conv to_f32(const ModelParams::Conv& c) {
    F32Conv out;
    out.w.assign(c.w.v.begin(), c.w.v.end());
    out.b.assign(c.b.v.begin(), c.b.v.end());
    return out;
}

// forward-only float workspace; no backward buffers
struct F32Ws {
    bool valid = false;
    Architecture arch;
    std::vector<float> x0, c0out;
    struct Bufs {
        std::vector<float> a, h, h2, y;
    };
    std::vector<Bufs> blocks;
    std::vector<float> feat, logits, col, ybuf;

    void prepare(const Architecture& a, const NetPlan& plan) {
        if (valid && arch == a) return;
        arch = a;
        const int g = kChunk;
        auto len = [g](int ch, int h) { return std::size_t(g) * ch * h * h; };
        x0.assign(len(plan.input.in_ch, plan.input.h_in), 0.0f);
        c0out.assign(len(plan.input.out_ch, plan.input.h_out), 0.0f);
        blocks.assign(plan.blocks.size(), {});
        std::size_t col_elems = 0, y_elems = 0;
        auto grow = [&](const ConvShape& cs) {
            std::size_t cols = std::size_t(g) * cs.h_out * cs.h_out;
            col_elems = std::max(col_elems, std::size_t(cs.in_ch) * cs.kernel * cs.kernel * cols);
            y_elems = std::max(y_elems, std::size_t(cs.out_ch) * cols);
        };
        grow(plan.input);
        for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
            const auto& bp = plan.blocks[i];
            auto& bb = blocks[i];
            bb.a.assign(len(bp.c1.in_ch, bp.c1.h_in), 0.0f);
            bb.h.assign(len(bp.c1.out_ch, bp.c1.h_out), 0.0f);
            bb.h2.assign(len(bp.c2.in_ch, bp.c2.h_in), 0.0f);
            bb.y.assign(len(bp.c2.out_ch, bp.c2.h_out), 0.0f);
            grow(bp.c1);
            grow(bp.c2);
            if (bp.has_proj) grow(bp.proj);
        }
        feat.assign(std::size_t(g) * plan.features, 0.0f);
        logits.assign(std::size_t(g) * arch.n_classes, 0.0f);
        col.assign(col_elems, 0.0f);
        ybuf.assign(y_elems, 0.0f);
        valid = true;
    }
};

thread_local F32Ws tls_f32;

void conv_forward_f32(const ConvShape& s, const F32Conv& p, const float* in, float* out, int g,
                      F32Ws& ws) {
    const std::size_t rows = std::size_t(s.in_ch) * s.kernel * s.kernel;
    const std::size_t plane = std::size_t(s.h_out) * s.h_out;
    const std::size_t cols = std::size_t(g) * plane;
    im2col(in, s, g, ws.col.data());
    gemm_f32(false, false, s.out_ch, static_cast<int>(cols), static_cast<int>(rows), 1.0f,
             p.w.data(), static_cast<int>(rows), ws.col.data(), static_cast<int>(cols), 0.0f,
             ws.ybuf.data(), static_cast<int>(cols));
    for (int gi = 0; gi < g; ++gi)
        for (int oc = 0; oc < s.out_ch; ++oc) {
            const float* src = ws.ybuf.data() + oc * cols + gi * plane;
            float bias = p.b[oc];
            float* dst = out + (std::size_t(gi) * s.out_ch + oc) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
        }
}

}  // namespace

struct InferenceEngine::Impl {
    Architecture ar;
    NetPlan plan;
    F32Conv input;
    struct Blk {
        F32Conv c1, c2;
        bool has_proj = false;
        F32Conv proj;
    };
    std::vector<Blk> blocks;
    std::vector<float> fc_w, fc_b;
};

InferenceEngine::InferenceEngine(const Architecture& arch, const ModelParams& params)
    : impl_(std::make_unique<Impl>()) {
    arch.validate();
    // shape check against a freshly planned parameter set
    ModelParams expect = zeros_like(arch);
    std::vector<const Tensor*> have, want;
    params.for_each_tensor([&](const Tensor& t) { have.push_back(&t); });
    expect.for_each_tensor([&](const Tensor& t) { want.push_back(&t); });
    bool ok = have.size() == want.size();
    for (std::size_t i = 0; ok && i < have.size(); ++i) ok = have[i]->shape == want[i]->shape;
    if (!ok) throw ShapeError("inference: parameters do not fit the architecture");

    impl_->ar = arch;
    impl_->plan = plan_network(arch);
    impl_->input = to_f32(params.input);
    for (const auto& blk : params.blocks) {
        Impl::Blk b;
        b.c1 = to_f32(blk.c1);
        b.c2 = to_f32(blk.c2);
        b.has_proj = blk.has_proj;
        if (blk.has_proj) b.proj = to_f32(blk.proj);
        impl_->blocks.push_back(std::move(b));
    }
    impl_->fc_w.assign(params.fc_w.v.begin(), params.fc_w.v.end());
    impl_->fc_b.assign(params.fc_b.v.begin(), params.fc_b.v.end());
}

InferenceEngine::~InferenceEngine() = default;

const Architecture& InferenceEngine::arch() const { return impl_->ar; }

void InferenceEngine::predict(const float* batch, int b, float* probs) const {
    if (b < 1) throw ShapeError("predict: empty batch");
    const Impl& im = *impl_;
    F32Ws& ws = tls_f32;
    ws.prepare(im.ar, im.plan);
    const NetPlan& plan = im.plan;
    const std::size_t sample = std::size_t(plan.input.in_ch) * plan.input.h_in * plan.input.h_in;
    constexpr float kScale = float(kInputScale);

    for (int start = 0; start < b; start += kChunk) {
        const int g = std::min(kChunk, b - start);
        const float* src = batch + std::size_t(start) * sample;
        for (std::size_t i = 0; i < std::size_t(g) * sample; ++i) ws.x0[i] = src[i] * kScale;

        conv_forward_f32(plan.input, im.input, ws.x0.data(), ws.c0out.data(), g, ws);
        const float* x = ws.c0out.data();
        for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
            const auto& bp = plan.blocks[bi];
            auto& bb = ws.blocks[bi];
            const std::size_t in_len = std::size_t(g) * bp.c1.in_ch * bp.c1.h_in * bp.c1.h_in;
            const std::size_t out_len = std::size_t(g) * bp.c2.out_ch * bp.c2.h_out * bp.c2.h_out;
            for (std::size_t i = 0; i < in_len; ++i) bb.a[i] = x[i] > 0.0f ? x[i] : 0.0f;
            conv_forward_f32(bp.c1, im.blocks[bi].c1, bb.a.data(), bb.h.data(), g, ws);
            for (std::size_t i = 0; i < bb.h.size(); ++i)
                bb.h2[i] = bb.h[i] > 0.0f ? bb.h[i] : 0.0f;
            conv_forward_f32(bp.c2, im.blocks[bi].c2, bb.h2.data(), bb.y.data(), g, ws);
            if (bp.has_proj) {
                // h buffer doubles as projection scratch; conv1 output is done with it
                conv_forward_f32(bp.proj, im.blocks[bi].proj, bb.a.data(), bb.h.data(), g, ws);
                for (std::size_t i = 0; i < out_len; ++i) bb.y[i] += bb.h[i];
            } else {
                for (std::size_t i = 0; i < out_len; ++i) bb.y[i] += x[i];
            }
            x = bb.y.data();
        }

        const std::size_t plane = std::size_t(plan.gap_dim) * plan.gap_dim;
        const float inv_plane = 1.0f / static_cast<float>(plane);
        for (int gi = 0; gi < g; ++gi)
            for (int c = 0; c < plan.features; ++c) {
                const float* s = x + (std::size_t(gi) * plan.features + c) * plane;
                float acc = 0.0f;
                for (std::size_t i = 0; i < plane; ++i) acc += s[i];
                ws.feat[std::size_t(gi) * plan.features + c] = acc * inv_plane;
            }

        gemm_f32(false, true, g, im.ar.n_classes, plan.features, 1.0f, ws.feat.data(),
                 plan.features, im.fc_w.data(), plan.features, 0.0f, ws.logits.data(),
                 im.ar.n_classes);
        for (int gi = 0; gi < g; ++gi) {
            float* z = ws.logits.data() + std::size_t(gi) * im.ar.n_classes;
            float* p = probs + std::size_t(start + gi) * im.ar.n_classes;
            float m = z[0] + im.fc_b[0];
            for (int c = 0; c < im.ar.n_classes; ++c) {
                z[c] += im.fc_b[c];
                m = std::max(m, z[c]);
            }
            float sum = 0.0f;
            for (int c = 0; c < im.ar.n_classes; ++c) {
                p[c] = std::exp(z[c] - m);
                sum += p[c];
            }
            for (int c = 0; c < im.ar.n_classes; ++c) p[c] /= sum;
        }
    }
}

}  // namespace dla
