#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "genqc/denoiser_unet.hpp"
#include "genqc/nn.hpp"
#include "genqc/rng.hpp"

using namespace genqc;
using namespace genqc::testing;
namespace ad = genqc::ad;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.in_channels = 3;
    cfg.widths = {4, 6};
    cfg.f = 3;
    cfg.heads = 2;
    cfg.groups = 2;
    cfg.cond_dim = 4;
    cfg.time_dim = 8;
    return cfg;
}

Tensor forward_once(const DenoiserUNet& net, const nn::ParamStore& store, const Tensor& x,
                    double t, const Tensor& cond) {
    return net.predict(store, x, t, cond);
}

}  // namespace

TEST_CASE("denoiser config validation") {
    Rng rng(71);
    nn::ParamStore store;

    SUBCASE("even filter sizes are rejected") {
        DenoiserConfig cfg = tiny_config();
        cfg.f = 2;
        CHECK_THROWS_AS(DenoiserUNet(store, cfg, rng), std::invalid_argument);
    }
    SUBCASE("widths must divide by groups") {
        DenoiserConfig cfg = tiny_config();
        cfg.widths = {6, 8};
        cfg.groups = 4;
        CHECK_THROWS_AS(DenoiserUNet(store, cfg, rng), std::invalid_argument);
    }
    SUBCASE("widths must divide by heads") {
        DenoiserConfig cfg = tiny_config();
        cfg.heads = 4;
        CHECK_THROWS_AS(DenoiserUNet(store, cfg, rng), std::invalid_argument);
    }
    SUBCASE("odd top width breaks the 2-d encoding split") {
        DenoiserConfig cfg = tiny_config();
        cfg.widths = {5, 6};
        cfg.groups = 1;
        cfg.heads = 1;
        CHECK_THROWS_AS(DenoiserUNet(store, cfg, rng), std::invalid_argument);
    }
    SUBCASE("default skip scale is 1/sqrt(2)") {
        CHECK(DenoiserConfig{}.skip_scale == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    }
    SUBCASE("desk-scale defaults") {
        DenoiserConfig cfg;
        CHECK(cfg.widths == std::vector<int64_t>{64, 128});
        CHECK(cfg.f == 3);
        CHECK(cfg.heads == 4);
    }
}

TEST_CASE("denoiser forward: shape identity across sizes") {
    Rng rng(72);
    nn::ParamStore store;
    DenoiserUNet net(store, tiny_config(), rng);
    Tensor cond = Tensor::randn({3, 4}, rng);

    for (int64_t q : {1, 2, 5}) {
        for (int64_t T : {4, 8, 12}) {
            Tensor x = Tensor::randn({q, T, 3}, rng);
            Tensor y = forward_once(net, store, x, 5.0, cond);
            CHECK(y.shape() == x.shape());
        }
    }
}

TEST_CASE("denoiser forward: input validation") {
    Rng rng(73);
    nn::ParamStore store;
    DenoiserUNet net(store, tiny_config(), rng);
    Tensor cond = Tensor::randn({3, 4}, rng);
    Tensor x = Tensor::randn({2, 4, 3}, rng);

    CHECK(net.time_multiple() == 4);
    // Lengths that are not positive multiples of 4.
    CHECK_THROWS_AS(forward_once(net, store, Tensor::randn({2, 6, 3}, rng), 1.0, cond),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward_once(net, store, Tensor::randn({2, 0, 3}, rng), 1.0, cond),
                    std::invalid_argument);
    // Wrong channel count, wrong rank, wrong condition width, bad timestep.
    CHECK_THROWS_AS(forward_once(net, store, Tensor::randn({2, 4, 5}, rng), 1.0, cond),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward_once(net, store, Tensor::randn({2, 4}, rng), 1.0, cond),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward_once(net, store, x, 1.0, Tensor::randn({3, 5}, rng)),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward_once(net, store, x, -1.0, cond), std::invalid_argument);
}

TEST_CASE("denoiser at initialization predicts zero noise") {
    Rng rng(78);
    nn::ParamStore store;
    DenoiserUNet net(store, tiny_config(), rng);
    Tensor x = Tensor::randn({2, 8, 3}, rng);
    Tensor cond = Tensor::randn({3, 4}, rng);
    Tensor y = forward_once(net, store, x, 5.0, cond);
    CHECK(y.vec().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("denoiser forward: determinism and sensitivity") {
    // Parameters are randomized: at initialization the zeroed output
    // projection hides every dependency.
    Rng rng(74);
    nn::ParamStore store;
    DenoiserUNet net(store, tiny_config(), rng);
    randomize_store(store, 741);
    Tensor x = Tensor::randn({2, 8, 3}, rng);
    Tensor cond = Tensor::randn({3, 4}, rng);

    Tensor a = forward_once(net, store, x, 5.0, cond);
    SUBCASE("same inputs give identical outputs") {
        Tensor b = forward_once(net, store, x, 5.0, cond);
        CHECK(a.vec() == b.vec());
    }
    SUBCASE("the timestep reaches the output") {
        Tensor b = forward_once(net, store, x, 6.0, cond);
        CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() > 1e-10);
    }
    SUBCASE("the condition reaches the output") {
        Tensor cond2 = cond.clone();
        cond2[0] += 1.0;
        Tensor b = forward_once(net, store, x, 5.0, cond2);
        CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() > 1e-10);
    }
    SUBCASE("the skip scale is live in the forward pass") {
        DenoiserConfig cfg = tiny_config();
        cfg.skip_scale = 0.0;
        nn::ParamStore store2;
        Rng rng2(74);
        DenoiserUNet net2(store2, cfg, rng2);
        randomize_store(store2, 741);
        REQUIRE(store2.size() == store.size());
        for (int i = 0; i < store.size(); ++i)
            REQUIRE(store2.value(i).vec() == store.value(i).vec());
        Tensor b = forward_once(net2, store2, x, 5.0, cond);
        CHECK((a.vec() - b.vec()).cwiseAbs().maxCoeff() > 1e-10);
    }
}

TEST_CASE("denoiser equivariance under qubit permutation when the encoding is bypassed") {
    Rng rng(75);
    DenoiserConfig cfg = tiny_config();
    cfg.use_positional_encoding = false;
    nn::ParamStore store;
    DenoiserUNet net(store, cfg, rng);
    randomize_store(store, 751);

    int64_t q = 3, T = 4, d = 3;
    Tensor x = Tensor::randn({q, T, d}, rng);
    Tensor cond = Tensor::randn({2, 4}, rng);
    std::vector<int64_t> perm = {2, 0, 1};

    Tensor xp({q, T, d});
    for (int64_t i = 0; i < q; ++i)
        for (int64_t ti = 0; ti < T; ++ti)
            for (int64_t c = 0; c < d; ++c) xp.at(i, ti, c) = x.at(perm[i], ti, c);

    Tensor y = forward_once(net, store, x, 3.0, cond);
    Tensor yp = forward_once(net, store, xp, 3.0, cond);

    SUBCASE("permuted input gives identically permuted output") {
        double worst = 0.0;
        for (int64_t i = 0; i < q; ++i)
            for (int64_t ti = 0; ti < T; ++ti)
                for (int64_t c = 0; c < d; ++c)
                    worst = std::max(worst, std::abs(yp.at(i, ti, c) - y.at(perm[i], ti, c)));
        CHECK(worst < 1e-10);
    }
    SUBCASE("the positional encoding deliberately breaks the symmetry") {
        DenoiserConfig cfg_pe = tiny_config();
        nn::ParamStore store_pe;
        Rng rng_pe(75);
        DenoiserUNet net_pe(store_pe, cfg_pe, rng_pe);
        randomize_store(store_pe, 751);
        Tensor z = forward_once(net_pe, store_pe, x, 3.0, cond);
        Tensor zp = forward_once(net_pe, store_pe, xp, 3.0, cond);
        double worst = 0.0;
        for (int64_t i = 0; i < q; ++i)
            for (int64_t ti = 0; ti < T; ++ti)
                for (int64_t c = 0; c < d; ++c)
                    worst = std::max(worst, std::abs(zp.at(i, ti, c) - z.at(perm[i], ti, c)));
        CHECK(worst > 1e-8);
    }
}

TEST_CASE("denoiser gradients match finite differences on a tiny configuration") {
    Rng rng(76);
    nn::ParamStore store;
    DenoiserUNet net(store, tiny_config(), rng);
    randomize_store(store, 761);
    Tensor x = Tensor::randn({2, 4, 3}, rng);
    Tensor cond = Tensor::randn({2, 4}, rng);
    Tensor target = Tensor::randn({2, 4, 3}, rng);

    check_param_gradients(
        store,
        [&](ad::Tape& t, const nn::Bound& p) {
            ad::Val out = net.forward(t, p, t.leaf(x), 3.0, t.leaf(cond));
            return ad::mse_loss(t, out, target);
        },
        1e-4, 1e-3);
}

TEST_CASE("denoiser predict matches the tape forward") {
    Rng rng(77);
    nn::ParamStore store;
    DenoiserUNet net(store, tiny_config(), rng);
    Tensor x = Tensor::randn({2, 4, 3}, rng);
    Tensor cond = Tensor::randn({2, 4}, rng);

    Tensor via_predict = net.predict(store, x, 2.0, cond);
    ad::Tape t;
    nn::Bound p = nn::bind(t, store, true);
    ad::Val out = net.forward(t, p, t.leaf(x), 2.0, t.leaf(cond));
    CHECK(via_predict.vec() == t.val(out).vec());
}
