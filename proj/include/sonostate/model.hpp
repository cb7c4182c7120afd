#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sonostate/nn.hpp"
#include "sonostate/protocol.hpp"
#include "sonostate/rng.hpp"
#include "sonostate/tensor.hpp"

namespace sono::model {

using protocol::StateLabel;

// signal order used everywhere: 0=EMG-GM, 1=EMG-SO, 2=moment, 3=angle
constexpr std::size_t kSignals = 4;
inline const char* signal_name(std::size_t i) {
    static const char* names[4] = {"emg_gm", "emg_so", "moment", "angle"};
    return names[i];
}

struct ConvStage {
    std::size_t out_channels = 0;
    std::size_t kernel_h = 3, kernel_w = 3;
    std::size_t stride = 1, pad = 0;
    std::size_t pool_h = 2, pool_w = 2, pool_stride = 2;  // 1/1/1 disables pooling
    double dropout = 0.0;
};

// Architecture of one trunk (both muscle branches run the same one).
struct NetworkSpec {
    std::size_t in_channels = 2;  // reference + test image
    std::size_t in_h = 128, in_w = 256;
    std::vector<ConvStage> stages;
    std::size_t fc_width = 256;
    double fc_dropout = 0.4;

    static NetworkSpec defaults();

    void validate() const;
    std::size_t trunk_output_size() const;  // flattened size entering the FC layer

    std::string to_text() const;
    static NetworkSpec from_text(const std::string& text);
};

inline NetworkSpec NetworkSpec::defaults() {
    NetworkSpec s;
    s.stages = {
        {16, 5, 5, 1, 0, 2, 2, 2, 0.05},
        {32, 3, 3, 1, 0, 2, 2, 2, 0.10},
        {48, 3, 3, 1, 0, 2, 2, 2, 0.15},
        {64, 3, 3, 1, 0, 2, 2, 2, 0.20},
    };
    s.fc_width = 256;
    s.fc_dropout = 0.4;
    return s;
}

inline void NetworkSpec::validate() const {
    if (in_channels == 0 || in_h == 0 || in_w == 0 || stages.empty() || fc_width == 0)
        throw std::invalid_argument("network spec: empty trunk or zero extents");
    std::size_t h = in_h, w = in_w;
    double prev_rate = 0.0;
    for (const auto& st : stages) {
        if (st.out_channels == 0 || st.stride == 0 || st.pool_stride == 0)
            throw std::invalid_argument("network spec: zero extent in stage");
        const std::size_t ph = h + 2 * st.pad, pw = w + 2 * st.pad;
        if (st.kernel_h > ph || st.kernel_w > pw)
            throw std::invalid_argument("network spec: conv kernel larger than its input");
        h = (ph - st.kernel_h) / st.stride + 1;
        w = (pw - st.kernel_w) / st.stride + 1;
        if (st.pool_h > h || st.pool_w > w)
            throw std::invalid_argument("network spec: pool window larger than its input");
        h = (h - st.pool_h) / st.pool_stride + 1;
        w = (w - st.pool_w) / st.pool_stride + 1;
        if (st.dropout < 0 || st.dropout >= 1 || st.dropout + 1e-12 < prev_rate)
            throw std::invalid_argument(
                "network spec: dropout rates must be in [0,1) and non-decreasing toward the "
                "output");
        prev_rate = st.dropout;
    }
    if (fc_dropout < 0 || fc_dropout >= 1 || fc_dropout + 1e-12 < prev_rate)
        throw std::invalid_argument("network spec: fc dropout breaks the non-decreasing rule");
}

inline std::size_t NetworkSpec::trunk_output_size() const {
    std::size_t h = in_h, w = in_w, c = in_channels;
    for (const auto& st : stages) {
        h = (h + 2 * st.pad - st.kernel_h) / st.stride + 1;
        w = (w + 2 * st.pad - st.kernel_w) / st.stride + 1;
        h = (h - st.pool_h) / st.pool_stride + 1;
        w = (w - st.pool_w) / st.pool_stride + 1;
        c = st.out_channels;
    }
    return c * h * w;
}

inline std::string NetworkSpec::to_text() const {
    std::ostringstream os;
    os << "input " << in_channels << ' ' << in_h << ' ' << in_w << '\n';
    for (const auto& st : stages)
        os << "stage " << st.out_channels << ' ' << st.kernel_h << ' ' << st.kernel_w << ' '
           << st.stride << ' ' << st.pad << ' ' << st.pool_h << ' ' << st.pool_w << ' '
           << st.pool_stride << ' ' << st.dropout << '\n';
    os << "fc " << fc_width << ' ' << fc_dropout << '\n';
    return os.str();
}

inline NetworkSpec NetworkSpec::from_text(const std::string& text) {
    NetworkSpec s;
    s.stages.clear();
    std::istringstream is(text);
    std::string line;
    bool have_input = false, have_fc = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "input") {
            ls >> s.in_channels >> s.in_h >> s.in_w;
            have_input = true;
        } else if (tag == "stage") {
            ConvStage st;
            ls >> st.out_channels >> st.kernel_h >> st.kernel_w >> st.stride >> st.pad >>
                st.pool_h >> st.pool_w >> st.pool_stride >> st.dropout;
            s.stages.push_back(st);
        } else if (tag == "fc") {
            ls >> s.fc_width >> s.fc_dropout;
            have_fc = true;
        } else {
            throw std::invalid_argument("network spec text: unknown tag '" + tag + "'");
        }
        if (ls.fail()) throw std::invalid_argument("network spec text: malformed line '" + line + "'");
    }
    if (!have_input || !have_fc) throw std::invalid_argument("network spec text: incomplete");
    s.validate();
    return s;
}

// Binary connectivity of the 4 output units onto the concatenated FC features
// [GM block | SO block]. EMG units see only their own muscle's block; moment
// and angle see both.
struct GatingMask {
    std::size_t fc_width = 0;
    Tensor<std::uint8_t> m;  // 4 x 2F

    static GatingMask standard(std::size_t fc_width) {
        GatingMask g;
        g.fc_width = fc_width;
        g.m = Tensor<std::uint8_t>(Shape{kSignals, 2 * fc_width});
        for (std::size_t col = 0; col < 2 * fc_width; ++col) {
            const bool gm_block = col < fc_width;
            g.m.at2(0, col) = gm_block ? 1 : 0;
            g.m.at2(1, col) = gm_block ? 0 : 1;
            g.m.at2(2, col) = 1;
            g.m.at2(3, col) = 1;
        }
        return g;
    }
};

template <typename T>
struct ModelParams {
    NetworkSpec spec;
    std::vector<nn::LayerParams<T>> trunk;  // conv layers; single storage shared by both branches
    nn::LayerParams<T> fc;
    nn::LayerParams<T> head;  // 4 x 2F, zero wherever the mask is zero
    GatingMask mask;
    std::array<double, kSignals> label_std{};  // per-signal std of difference labels
    bool has_norm = false;

    // every parameter tensor in a fixed order (trunk..., fc, head)
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (auto& l : trunk) {
            fn(l.weights);
            fn(l.biases);
        }
        fn(fc.weights);
        fn(fc.biases);
        fn(head.weights);
        fn(head.biases);
    }
};

// Per-layer gradients in the same layout as the parameters.
template <typename T>
struct ModelGrads {
    std::vector<nn::LayerParams<T>> trunk;
    nn::LayerParams<T> fc;
    nn::LayerParams<T> head;

    void add(const ModelGrads& o) {
        auto acc = [](Tensor<T>& a, const Tensor<T>& b) {
            for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        };
        for (std::size_t l = 0; l < trunk.size(); ++l) {
            acc(trunk[l].weights, o.trunk[l].weights);
            acc(trunk[l].biases, o.trunk[l].biases);
        }
        acc(fc.weights, o.fc.weights);
        acc(fc.biases, o.fc.biases);
        acc(head.weights, o.head.weights);
        acc(head.biases, o.head.biases);
    }

    void scale(T s) {
        auto mul = [s](Tensor<T>& a) {
            for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
        };
        for (auto& l : trunk) {
            mul(l.weights);
            mul(l.biases);
        }
        mul(fc.weights);
        mul(fc.biases);
        mul(head.weights);
        mul(head.biases);
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (auto& l : trunk) {
            fn(l.weights);
            fn(l.biases);
        }
        fn(fc.weights);
        fn(fc.biases);
        fn(head.weights);
        fn(head.biases);
    }
};

template <typename T>
ModelGrads<T> zero_grads(const ModelParams<T>& p) {
    ModelGrads<T> g;
    for (const auto& l : p.trunk)
        g.trunk.push_back({l.kind, Tensor<T>(l.weights.shape()), Tensor<T>(l.biases.shape())});
    g.fc = {nn::LayerKind::dense, Tensor<T>(p.fc.weights.shape()), Tensor<T>(p.fc.biases.shape())};
    g.head = {nn::LayerKind::dense, Tensor<T>(p.head.weights.shape()),
              Tensor<T>(p.head.biases.shape())};
    return g;
}

// He-initialized weights, zero biases, head gated by the mask. Weight draws
// happen in a fixed order (trunk stages, fc, head) so a seed pins the model.
template <typename T>
ModelParams<T> build_network(const NetworkSpec& spec, Rng& rng) {
    spec.validate();
    ModelParams<T> p;
    p.spec = spec;
    std::size_t c = spec.in_channels;
    for (const auto& st : spec.stages) {
        const std::size_t fan_in = c * st.kernel_h * st.kernel_w;
        nn::LayerParams<T> l;
        l.kind = nn::LayerKind::conv2d;
        l.weights = nn::he_init<T>(fan_in, st.out_channels * fan_in, rng)
                        .reshaped(Shape{st.out_channels, c, st.kernel_h, st.kernel_w});
        l.biases = Tensor<T>(Shape{st.out_channels});
        p.trunk.push_back(std::move(l));
        c = st.out_channels;
    }
    const std::size_t trunk_out = spec.trunk_output_size();
    p.fc = {nn::LayerKind::dense,
            nn::he_init<T>(trunk_out, spec.fc_width * trunk_out, rng)
                .reshaped(Shape{spec.fc_width, trunk_out}),
            Tensor<T>(Shape{spec.fc_width})};
    const std::size_t head_in = 2 * spec.fc_width;
    p.head = {nn::LayerKind::dense,
              nn::he_init<T>(head_in, kSignals * head_in, rng).reshaped(Shape{kSignals, head_in}),
              Tensor<T>(Shape{kSignals})};
    p.mask = GatingMask::standard(spec.fc_width);
    for (std::size_t i = 0; i < p.head.weights.size(); ++i)
        if (!p.mask.m[i]) p.head.weights[i] = T(0);
    return p;
}

template <typename T>
struct BranchCache {
    std::vector<Tensor<T>> conv_in;   // input to each conv stage
    std::vector<Tensor<T>> elu_out;   // post-ELU activation per stage
    std::vector<nn::PoolResult<T>> pool;
    std::vector<Tensor<T>> drop_mask;  // post-pool dropout masks
    Tensor<T> fc_in;
    Tensor<T> fc_elu;
    Tensor<T> fc_drop_mask;
    Tensor<T> features;
};

template <typename T>
struct ForwardCache {
    bool valid = false;
    BranchCache<T> gm, so;
    Tensor<T> concat;
};

namespace detail {

template <typename T>
Tensor<T> branch_forward(const Tensor<T>& pair, const ModelParams<T>& p, nn::Mode mode, Rng* rng,
                         BranchCache<T>* cache) {
    const auto& spec = p.spec;
    if (pair.shape() != Shape{spec.in_channels, spec.in_h, spec.in_w})
        throw std::invalid_argument("model forward: input must be " +
                                    shape_str(Shape{spec.in_channels, spec.in_h, spec.in_w}) +
                                    ", got " + shape_str(pair.shape()));
    Tensor<T> x = pair;
    for (std::size_t s = 0; s < spec.stages.size(); ++s) {
        const auto& st = spec.stages[s];
        if (cache) cache->conv_in.push_back(x);
        x = nn::conv2d(x, p.trunk[s], st.stride, st.pad);
        x = nn::elu(x);
        if (cache) cache->elu_out.push_back(x);
        auto pooled = nn::maxpool2d(x, st.pool_h, st.pool_w, st.pool_stride);
        if (mode == nn::Mode::train) {
            auto d = nn::dropout(pooled.output, st.dropout, mode, *rng);
            x = std::move(d.output);
            if (cache) cache->drop_mask.push_back(std::move(d.mask));
        } else {
            x = pooled.output;
            if (cache) cache->drop_mask.push_back(Tensor<T>(pooled.output.shape(), T(1)));
        }
        if (cache) cache->pool.push_back(std::move(pooled));
    }
    x = x.reshaped(Shape{x.size()});
    if (cache) cache->fc_in = x;
    x = nn::dense(x, p.fc);
    x = nn::elu(x);
    if (cache) cache->fc_elu = x;
    if (mode == nn::Mode::train) {
        auto d = nn::dropout(x, spec.fc_dropout, mode, *rng);
        x = std::move(d.output);
        if (cache) cache->fc_drop_mask = std::move(d.mask);
    } else if (cache) {
        cache->fc_drop_mask = Tensor<T>(x.shape(), T(1));
    }
    if (cache) cache->features = x;
    return x;
}

template <typename T>
void branch_backward(const BranchCache<T>& c, const ModelParams<T>& p, const Tensor<T>& dfeat,
                     ModelGrads<T>& g) {
    const auto& spec = p.spec;
    Tensor<T> d = nn::dropout_backward(dfeat, c.fc_drop_mask);
    d = nn::elu_backward(c.fc_elu, d);
    d = nn::dense_backward_acc(c.fc_in, p.fc, d, g.fc.weights, g.fc.biases);
    for (std::size_t s = spec.stages.size(); s-- > 0;) {
        d = d.reshaped(c.pool[s].output.shape());
        d = nn::dropout_backward(d, c.drop_mask[s]);
        d = nn::maxpool2d_backward(c.elu_out[s].shape(), c.pool[s].argmax, d);
        d = nn::elu_backward(c.elu_out[s], d);
        d = nn::conv2d_backward_acc(c.conv_in[s], p.trunk[s], d, spec.stages[s].stride,
                                    spec.stages[s].pad, /*need_input_grad=*/s > 0,
                                    g.trunk[s].weights, g.trunk[s].biases);
    }
}

}  // namespace detail

// Runs both pairs through the single shared trunk, concatenates the FC
// features (GM first) and applies the masked linear head. The returned
// 4-vector is in normalized difference units.
template <typename T>
Tensor<T> forward(const Tensor<T>& gm_pair, const Tensor<T>& so_pair, const ModelParams<T>& p,
                  nn::Mode mode, Rng* rng = nullptr, ForwardCache<T>* cache = nullptr) {
    if (mode == nn::Mode::train && !rng)
        throw std::invalid_argument("model forward: train mode needs an rng");
    auto gm_feat =
        detail::branch_forward(gm_pair, p, mode, rng, cache ? &cache->gm : nullptr);
    auto so_feat =
        detail::branch_forward(so_pair, p, mode, rng, cache ? &cache->so : nullptr);
    Tensor<T> concat(Shape{2 * p.spec.fc_width});
    for (std::size_t i = 0; i < p.spec.fc_width; ++i) {
        concat[i] = gm_feat[i];
        concat[p.spec.fc_width + i] = so_feat[i];
    }
    if (cache) {
        cache->concat = concat;
        cache->valid = true;
    }
    // masked linear map: gated-off entries are not parameters of the model,
    // whatever value the weight tensor holds there
    Tensor<T> y(Shape{kSignals});
    const std::size_t head_in = 2 * p.spec.fc_width;
    for (std::size_t o = 0; o < kSignals; ++o) {
        T s = p.head.biases[o];
        const T* w = p.head.weights.data() + o * head_in;
        const std::uint8_t* m = p.mask.m.data() + o * head_in;
        for (std::size_t i = 0; i < head_in; ++i)
            if (m[i]) s += w[i] * concat[i];
        y[o] = s;
    }
    return y;
}

// MAE over the four signals plus its subgradient (sign(0) = 0).
template <typename T>
std::pair<double, Tensor<T>> loss_mae(const Tensor<T>& output, const Tensor<T>& label) {
    if (output.size() != kSignals || label.size() != kSignals)
        throw std::invalid_argument("loss_mae: expected 4-vectors");
    double loss = 0;
    Tensor<T> grad(Shape{kSignals});
    for (std::size_t i = 0; i < kSignals; ++i) {
        const double d = double(output[i]) - double(label[i]);
        loss += std::fabs(d);
        grad[i] = d > 0 ? T(0.25) : (d < 0 ? T(-0.25) : T(0));
    }
    return {loss / double(kSignals), grad};
}

// Exact gradients, accumulated into g. Head weight gradients are gated by
// the mask; trunk and FC gradients sum the contributions of both branches
// (shared storage).
template <typename T>
void backward_gated_acc(const ForwardCache<T>& cache, const Tensor<T>& output_grad,
                        const ModelParams<T>& p, ModelGrads<T>& g) {
    if (!cache.valid)
        throw std::logic_error("backward_gated: forward cache missing (run forward in train mode)");
    if (output_grad.size() != kSignals)
        throw std::invalid_argument("backward_gated: output grad must have 4 entries");

    const std::size_t head_in = 2 * p.spec.fc_width;
    Tensor<T> dconcat(Shape{head_in});
    for (std::size_t o = 0; o < kSignals; ++o) {
        g.head.biases[o] += output_grad[o];
        const T u = output_grad[o];
        for (std::size_t i = 0; i < head_in; ++i) {
            if (p.mask.m[o * head_in + i]) {
                g.head.weights[o * head_in + i] += u * cache.concat[i];
                dconcat[i] += u * p.head.weights[o * head_in + i];
            }
        }
    }
    Tensor<T> dgm(Shape{p.spec.fc_width}), dso(Shape{p.spec.fc_width});
    for (std::size_t i = 0; i < p.spec.fc_width; ++i) {
        dgm[i] = dconcat[i];
        dso[i] = dconcat[p.spec.fc_width + i];
    }
    detail::branch_backward(cache.gm, p, dgm, g);
    detail::branch_backward(cache.so, p, dso, g);
}

template <typename T>
ModelGrads<T> backward_gated(const ForwardCache<T>& cache, const Tensor<T>& output_grad,
                             const ModelParams<T>& p) {
    ModelGrads<T> g = zero_grads(p);
    backward_gated_acc(cache, output_grad, p, g);
    return g;
}

// normalized difference -> physical difference -> absolute state
template <typename T>
StateLabel predict_denormalized(const Tensor<T>& normalized, const ModelParams<T>& p,
                                const StateLabel& reference) {
    if (!p.has_norm)
        throw std::logic_error("predict_denormalized: normalization constants missing");
    if (normalized.size() != kSignals)
        throw std::invalid_argument("predict_denormalized: expected a 4-vector");
    StateLabel out;
    out.emg_gm = reference.emg_gm + double(normalized[0]) * p.label_std[0];
    out.emg_so = reference.emg_so + double(normalized[1]) * p.label_std[1];
    out.moment = reference.moment + double(normalized[2]) * p.label_std[2];
    out.angle = reference.angle + double(normalized[3]) * p.label_std[3];
    return out;
}

inline std::array<double, kSignals> label_diff(const StateLabel& test, const StateLabel& ref) {
    return {test.emg_gm - ref.emg_gm, test.emg_so - ref.emg_so, test.moment - ref.moment,
            test.angle - ref.angle};
}

}  // namespace sono::model
