#ifndef ANCHOR_NET_HPP
#define ANCHOR_NET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "anchor/rng.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

// Flat view over all trainable parameters, in the documented order:
// trunk layer 0 (weights row-major, then bias), trunk layer 1, ..., then one
// head per task in task order (weights, then bias).
using ParamVector = std::vector<double>;

enum class ParamKind { weight, bias };

struct LayerSegment {
    std::size_t begin = 0;
    std::size_t end = 0;
    int layer_id = 0;
    ParamKind kind = ParamKind::weight;
};

// Maps every parameter index to its (layer id, kind). Layer ids are ordered
// shallow to deep: trunk layers first, then heads in task order.
struct LayerMap {
    std::vector<LayerSegment> segments;
    std::size_t param_count = 0;
    int layer_count = 0;

    [[nodiscard]] int layer_of(std::size_t index) const {
        for (const auto& seg : segments) {
            if (index >= seg.begin && index < seg.end) return seg.layer_id;
        }
        throw std::invalid_argument("LayerMap: parameter index not covered");
    }
};

struct NetConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;        // trunk widths; may be empty
    std::vector<std::size_t> head_classes;  // classes per task head
    std::uint64_t seed = 0;
};

// Post-activation matrices for one batch: one entry per trunk layer followed
// by the head logits.
struct ForwardTrace {
    std::vector<Tensor> activations;
};

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

// Dense multi-head classifier: shared ReLU trunk plus one linear head per
// task. All parameters live in a single flat vector so importance scores,
// snapshots, and update rules align by index.
class MultiHeadNet {
public:
    explicit MultiHeadNet(NetConfig config) : config_(std::move(config)) {
        detail::check(config_.input_dim > 0, "MultiHeadNet: input_dim must be positive");
        detail::check(!config_.head_classes.empty(), "MultiHeadNet: at least one head required");
        std::size_t offset = 0;
        std::size_t width = config_.input_dim;
        int id = 0;
        for (std::size_t h : config_.hidden) {
            detail::check(h > 0, "MultiHeadNet: hidden width must be positive");
            layers_.push_back(LayerDesc{id++, false, width, h, offset, offset + width * h});
            offset += width * h + h;
            width = h;
        }
        trunk_depth_ = layers_.size();
        trunk_out_ = width;
        for (std::size_t c : config_.head_classes) {
            detail::check(c > 0, "MultiHeadNet: head must have at least one class");
            layers_.push_back(LayerDesc{id++, true, trunk_out_, c, offset, offset + trunk_out_ * c});
            offset += trunk_out_ * c + c;
        }
        params_.assign(offset, 0.0);
        Rng rng(config_.seed);
        for (const auto& layer : layers_) init_layer(layer, rng);
    }

    [[nodiscard]] std::size_t param_count() const { return params_.size(); }
    [[nodiscard]] std::size_t input_dim() const { return config_.input_dim; }
    [[nodiscard]] std::size_t trunk_depth() const { return trunk_depth_; }
    [[nodiscard]] std::size_t head_count() const { return config_.head_classes.size(); }
    [[nodiscard]] std::size_t classes_in_head(int head) const { return head_desc(head).out; }
    [[nodiscard]] const NetConfig& config() const { return config_; }

    [[nodiscard]] ParamVector params() const { return params_; }

    void set_params(const ParamVector& values) {
        detail::check(values.size() == params_.size(), "MultiHeadNet: parameter length mismatch");
        params_ = values;
    }

    [[nodiscard]] std::span<double> raw_params() { return params_; }
    [[nodiscard]] std::span<const double> raw_params() const { return params_; }

    [[nodiscard]] LayerMap layer_map() const {
        LayerMap map;
        map.param_count = params_.size();
        map.layer_count = static_cast<int>(layers_.size());
        for (const auto& layer : layers_) {
            map.segments.push_back({layer.w_off, layer.b_off, layer.id, ParamKind::weight});
            map.segments.push_back({layer.b_off, layer.b_off + layer.out, layer.id, ParamKind::bias});
        }
        return map;
    }

    // Re-draws one head from its task-specific stream; trunk untouched.
    void reinit_head(int head, std::uint64_t seed) {
        Rng rng(seed);
        init_layer(head_desc(head), rng);
    }

    [[nodiscard]] Tensor forward(const Tensor& batch, int head) const {
        Tensor a = trunk_forward(batch, nullptr);
        return affine(a, head_desc(head));
    }

    [[nodiscard]] std::pair<Tensor, ForwardTrace> forward_traced(const Tensor& batch, int head) const {
        ForwardTrace trace;
        Tensor a = trunk_forward(batch, &trace);
        Tensor logits = affine(a, head_desc(head));
        trace.activations.push_back(logits);
        return {std::move(logits), std::move(trace)};
    }

    // Mean softmax cross-entropy over the batch plus its gradient, aligned
    // with the flat parameter order (entries of inactive heads are zero).
    [[nodiscard]] LossGrad loss_and_grad(const Tensor& batch, const std::vector<int>& labels, int head) const {
        const LayerDesc& hd = head_desc(head);
        detail::check(labels.size() == batch.rows(), "loss_and_grad: one label per row required");
        for (int y : labels) {
            detail::check(y >= 0 && static_cast<std::size_t>(y) < hd.out, "loss_and_grad: label out of range");
        }
        const std::size_t n = batch.rows();

        std::vector<Tensor> acts;  // acts[0] = input, acts[l+1] = relu output of trunk layer l
        acts.reserve(trunk_depth_ + 1);
        acts.push_back(batch);
        check_input(batch);
        for (std::size_t l = 0; l < trunk_depth_; ++l) {
            Tensor z = affine(acts.back(), layers_[l]);
            relu_inplace(z);
            acts.push_back(std::move(z));
        }
        Tensor logits = affine(acts.back(), hd);

        // Row-wise softmax with max subtraction; d = (softmax - onehot)/n.
        double loss = 0.0;
        Tensor dlogits(n, hd.out);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = logits.row(i);
            const double m = *std::max_element(row.begin(), row.end());
            double z = 0.0;
            for (double v : row) z += std::exp(v - m);
            const double log_z = std::log(z);
            loss += (log_z + m) - row[static_cast<std::size_t>(labels[i])];
            for (std::size_t c = 0; c < hd.out; ++c) {
                const double p = std::exp(row[c] - m) / z;
                dlogits(i, c) = (p - (static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0)) / static_cast<double>(n);
            }
        }
        loss /= static_cast<double>(n);

        LossGrad out;
        out.loss = loss;
        out.grad.assign(params_.size(), 0.0);
        backprop_from_output(dlogits, hd, acts, out.grad);
        return out;
    }

    // Gradient of the mean over the batch of half the squared L2 norm of the
    // active head's logits; the sensitivity measure behind MAS scores.
    [[nodiscard]] ParamVector output_norm_grad(const Tensor& batch, int head) const {
        const LayerDesc& hd = head_desc(head);
        const std::size_t n = batch.rows();
        std::vector<Tensor> acts;
        acts.reserve(trunk_depth_ + 1);
        acts.push_back(batch);
        check_input(batch);
        for (std::size_t l = 0; l < trunk_depth_; ++l) {
            Tensor z = affine(acts.back(), layers_[l]);
            relu_inplace(z);
            acts.push_back(std::move(z));
        }
        Tensor logits = affine(acts.back(), hd);
        Tensor dlogits(n, hd.out);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < hd.out; ++c) {
                dlogits(i, c) = logits(i, c) / static_cast<double>(n);
            }
        }
        ParamVector grad(params_.size(), 0.0);
        backprop_from_output(dlogits, hd, acts, grad);
        return grad;
    }

    // theta <- theta - eta * grad. Returns false when the gradient or the
    // updated parameters contain a non-finite entry (divergence).
    bool apply_sgd(const ParamVector& grad, double eta) {
        detail::check(grad.size() == params_.size(), "apply_sgd: gradient length mismatch");
        bool ok = all_finite(grad);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            params_[k] -= eta * grad[k];
        }
        return ok && all_finite(params_);
    }

private:
    struct LayerDesc {
        int id;
        bool is_head;
        std::size_t in;
        std::size_t out;
        std::size_t w_off;
        std::size_t b_off;  // bias block starts here; layer ends at b_off + out
    };

    void init_layer(const LayerDesc& layer, Rng& rng) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
        for (std::size_t k = 0; k < layer.in * layer.out; ++k) {
            params_[layer.w_off + k] = rng.uniform(-bound, bound);
        }
        for (std::size_t k = 0; k < layer.out; ++k) {
            params_[layer.b_off + k] = 0.0;
        }
    }

    [[nodiscard]] const LayerDesc& head_desc(int head) const {
        detail::check(head >= 0 && static_cast<std::size_t>(head) < config_.head_classes.size(),
                      "MultiHeadNet: unknown head id");
        return layers_[trunk_depth_ + static_cast<std::size_t>(head)];
    }

    void check_input(const Tensor& batch) const {
        detail::check(batch.shape().size() == 2, "MultiHeadNet: batch must be rank 2");
        detail::check(batch.cols() == config_.input_dim, "MultiHeadNet: batch feature width mismatch");
    }

    // y = x W^T + b with W stored row-major as (out, in).
    [[nodiscard]] Tensor affine(const Tensor& x, const LayerDesc& layer) const {
        const std::size_t n = x.rows();
        Tensor y(n, layer.out);
        const double* w = params_.data() + layer.w_off;
        const double* b = params_.data() + layer.b_off;
        for (std::size_t i = 0; i < n; ++i) {
            auto xi = x.row(i);
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double* wo = w + o * layer.in;
                double acc = b[o];
                for (std::size_t j = 0; j < layer.in; ++j) acc += xi[j] * wo[j];
                y(i, o) = acc;
            }
        }
        return y;
    }

    static void relu_inplace(Tensor& t) {
        for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
    }

    [[nodiscard]] Tensor trunk_forward(const Tensor& batch, ForwardTrace* trace) const {
        check_input(batch);
        Tensor a = batch;
        for (std::size_t l = 0; l < trunk_depth_; ++l) {
            a = affine(a, layers_[l]);
            relu_inplace(a);
            if (trace != nullptr) trace->activations.push_back(a);
        }
        return a;
    }

    // Shared backward pass: given d(loss)/d(logits) of one head, accumulates
    // gradients for that head and the trunk into `grad`. Because trunk
    // activations are post-ReLU, the mask a > 0 equals the pre-activation
    // mask z > 0 (with derivative 0 at the kink).
    void backprop_from_output(const Tensor& dlogits, const LayerDesc& hd,
                              const std::vector<Tensor>& acts, ParamVector& grad) const {
        const std::size_t n = dlogits.rows();
        accumulate_affine_grad(dlogits, acts.back(), hd, grad);
        Tensor da = backprop_input(dlogits, hd);
        for (std::size_t l = trunk_depth_; l-- > 0;) {
            const Tensor& a = acts[l + 1];
            Tensor dz(n, layers_[l].out);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t o = 0; o < layers_[l].out; ++o) {
                    dz(i, o) = a(i, o) > 0.0 ? da(i, o) : 0.0;
                }
            }
            accumulate_affine_grad(dz, acts[l], layers_[l], grad);
            if (l > 0) da = backprop_input(dz, layers_[l]);
        }
    }

    // dW[o][j] += sum_i dy[i][o] * x[i][j];  db[o] += sum_i dy[i][o]
    void accumulate_affine_grad(const Tensor& dy, const Tensor& x, const LayerDesc& layer,
                                ParamVector& grad) const {
        const std::size_t n = dy.rows();
        double* gw = grad.data() + layer.w_off;
        double* gb = grad.data() + layer.b_off;
        for (std::size_t i = 0; i < n; ++i) {
            auto xi = x.row(i);
            auto di = dy.row(i);
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double d = di[o];
                double* gwo = gw + o * layer.in;
                for (std::size_t j = 0; j < layer.in; ++j) gwo[j] += d * xi[j];
                gb[o] += d;
            }
        }
    }

    // dx[i][j] = sum_o dy[i][o] * W[o][j]
    [[nodiscard]] Tensor backprop_input(const Tensor& dy, const LayerDesc& layer) const {
        const std::size_t n = dy.rows();
        Tensor dx(n, layer.in);
        const double* w = params_.data() + layer.w_off;
        for (std::size_t i = 0; i < n; ++i) {
            auto di = dy.row(i);
            auto dxi = dx.row(i);
            for (std::size_t o = 0; o < layer.out; ++o) {
                const double d = di[o];
                const double* wo = w + o * layer.in;
                for (std::size_t j = 0; j < layer.in; ++j) dxi[j] += d * wo[j];
            }
        }
        return dx;
    }

    NetConfig config_;
    std::vector<LayerDesc> layers_;  // trunk layers then heads
    std::size_t trunk_depth_ = 0;
    std::size_t trunk_out_ = 0;
    ParamVector params_;
};

// ---------------------------------------------------------------------------
// ParamVector serialization: little-endian u64 length header followed by the
// values as little-endian IEEE doubles, in the documented layer order.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline std::uint64_t read_u64_le(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("param io: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void save_params(std::ostream& out, const ParamVector& values) {
    detail::write_u64_le(out, values.size());
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::write_u64_le(out, bits);
    }
}

inline void save_params(const std::filesystem::path& path, const ParamVector& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("param io: cannot open " + path.string());
    save_params(out, values);
}

[[nodiscard]] inline ParamVector load_params(std::istream& in) {
    const std::uint64_t n = detail::read_u64_le(in);
    ParamVector values(n);
    for (std::uint64_t k = 0; k < n; ++k) {
        const std::uint64_t bits = detail::read_u64_le(in);
        std::memcpy(&values[k], &bits, 8);
    }
    return values;
}

[[nodiscard]] inline ParamVector load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("param io: cannot open " + path.string());
    return load_params(in);
}

}  // namespace anchor

#endif  // ANCHOR_NET_HPP
