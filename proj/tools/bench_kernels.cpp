// Rough single-sample throughput probe for the default architecture.
// Not part of the test suite; run by hand when tuning.

#include <chrono>
#include <cstdio>

#include "sonostate/model.hpp"

using namespace sono;
using Clock = std::chrono::steady_clock;

int main(int argc, char** argv) {
    const int iters = argc > 1 ? std::atoi(argv[1]) : 8;
    auto spec = model::NetworkSpec::defaults();
    Rng rng(1);
    auto params = model::build_network<float>(spec, rng);

    Tensor<float> gm(Shape{spec.in_channels, spec.in_h, spec.in_w});
    Tensor<float> so(gm.shape());
    for (std::size_t i = 0; i < gm.size(); ++i) {
        gm[i] = float(rng.uniform(-1, 1));
        so[i] = float(rng.uniform(-1, 1));
    }
    Tensor<float> label(Shape{4}, {0.3f, -0.2f, 0.8f, -0.5f});

    // forward only
    auto t0 = Clock::now();
    for (int i = 0; i < iters; ++i) {
        auto y = model::forward(gm, so, params, nn::Mode::infer);
        if (!y.all_finite()) return 1;
    }
    auto t1 = Clock::now();
    const double fwd_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;

    // forward + backward
    Rng drng(2);
    auto t2 = Clock::now();
    for (int i = 0; i < iters; ++i) {
        model::ForwardCache<float> cache;
        auto y = model::forward(gm, so, params, nn::Mode::train, &drng, &cache);
        auto [loss, og] = model::loss_mae(y, label);
        auto g = model::backward_gated(cache, og, params);
        if (!g.fc.weights.all_finite()) return 1;
    }
    auto t3 = Clock::now();
    const double step_ms =
        std::chrono::duration<double, std::milli>(t3 - t2).count() / iters;

    std::printf("forward: %.1f ms/sample\n", fwd_ms);
    std::printf("forward+backward: %.1f ms/sample (%.2f s per 32-batch)\n", step_ms,
                step_ms * 32 / 1000.0);
    return 0;
}
