#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <set>

#include "tape/degrade.hpp"
#include "tape/metrics.hpp"

using namespace tape;

namespace {
DegradationSpec spec_of(DegradationKind k, std::uint64_t seed = 5) {
    DegradationSpec s;
    s.name = kind_name(k);
    s.kind = k;
    s.seed = seed;
    return s;
}

constexpr DegradationKind kAllKinds[] = {
    DegradationKind::gaussian_noise, DegradationKind::rain_streaks, DegradationKind::raindrops,
    DegradationKind::moire,          DegradationKind::snow,         DegradationKind::shadow,
};
}  // namespace

TEST_CASE("kind names round-trip") {
    for (auto k : kAllKinds) REQUIRE(kind_from_name(kind_name(k)) == k);
    REQUIRE_THROWS_AS(kind_from_name("fog"), config_error);
}

TEST_CASE("gen_clean_patch stays in range and varies with the stream") {
    Rng rng(31);
    Tensor a = gen_clean_patch(16, 16, rng);
    REQUIRE(a.shape() == std::vector<int>{3, 16, 16});
    for (double v : a.data()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    Tensor b = gen_clean_patch(16, 16, rng);
    REQUIRE(a.data() != b.data());

    Rng replay(31);
    REQUIRE(gen_clean_patch(16, 16, replay).data() == a.data());
    REQUIRE_THROWS_AS(gen_clean_patch(4, 4, rng), dim_error);
}

TEST_CASE("every degradation stays in range, differs from clean, is deterministic") {
    Rng src(32);
    Tensor clean = gen_clean_patch(16, 16, src);
    for (auto k : kAllKinds) {
        DegradationSpec s = spec_of(k);
        Rng r1(40), r2(40);
        Tensor d1 = apply_degradation(clean, s, r1);
        Tensor d2 = apply_degradation(clean, s, r2);
        INFO(kind_name(k));
        REQUIRE(d1.shape() == clean.shape());
        for (double v : d1.data()) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
        REQUIRE(d1.data() == d2.data());     // same spec + stream -> identical
        REQUIRE(d1.data() != clean.data());  // actually corrupts
    }
}

TEST_CASE("degradation output depends on the spec seed") {
    Rng src(33);
    Tensor clean = gen_clean_patch(16, 16, src);
    for (auto k : kAllKinds) {
        Rng r1(41), r2(41);
        Tensor a = apply_degradation(clean, spec_of(k, 1), r1);
        Tensor b = apply_degradation(clean, spec_of(k, 2), r2);
        INFO(kind_name(k));
        REQUIRE(a.data() != b.data());
    }
}

TEST_CASE("gaussian noise sigma bounds are enforced and honored") {
    Rng src(34);
    Tensor clean = gen_clean_patch(16, 16, src);
    DegradationSpec s = spec_of(DegradationKind::gaussian_noise);
    s.params["sigma_min"] = 60.0;
    s.params["sigma_max"] = 50.0;
    Rng r(42);
    REQUIRE_THROWS_AS(apply_degradation(clean, s, r), config_error);

    // heavy noise must hurt PSNR more than light noise (averaged over draws)
    auto mean_psnr = [&](double smin, double smax) {
        DegradationSpec sp = spec_of(DegradationKind::gaussian_noise);
        sp.params["sigma_min"] = smin;
        sp.params["sigma_max"] = smax;
        Rng rr(43);
        double acc = 0.0;
        for (int i = 0; i < 8; ++i) acc += psnr(apply_degradation(clean, sp, rr), clean);
        return acc / 8.0;
    };
    REQUIRE(mean_psnr(5.0, 10.0) > mean_psnr(60.0, 90.0));
}

TEST_CASE("shadow only darkens and snow only brightens") {
    Rng src(35);
    Tensor clean = gen_clean_patch(16, 16, src);
    Rng r1(44);
    Tensor sh = apply_degradation(clean, spec_of(DegradationKind::shadow), r1);
    for (std::size_t i = 0; i < sh.numel(); ++i) REQUIRE(sh.data()[i] <= clean.data()[i] + 1e-12);
    Rng r2(44);
    Tensor sn = apply_degradation(clean, spec_of(DegradationKind::snow), r2);
    for (std::size_t i = 0; i < sn.numel(); ++i) REQUIRE(sn.data()[i] >= clean.data()[i] - 1e-12);
}

TEST_CASE("TaskSet split and lookup") {
    TaskSet ts;
    ts.tasks.push_back(spec_of(DegradationKind::gaussian_noise));
    ts.tasks.push_back(spec_of(DegradationKind::snow));
    ts.tasks[1].held_out = true;
    REQUIRE(ts.pretrain_indices() == std::vector<std::size_t>{0});
    REQUIRE(ts.find("snow").held_out);
    REQUIRE_THROWS_AS(ts.find("fog"), config_error);

    TaskSet empty;
    empty.tasks.push_back(spec_of(DegradationKind::snow));
    empty.tasks[0].held_out = true;
    REQUIRE_THROWS_AS(empty.validate(), config_error);
}

TEST_CASE("sample_pair draws pretrain tasks only from the known pool") {
    TaskSet ts;
    ts.tasks.push_back(spec_of(DegradationKind::gaussian_noise));
    ts.tasks.push_back(spec_of(DegradationKind::moire));
    ts.tasks.push_back(spec_of(DegradationKind::snow));
    ts.tasks[2].held_out = true;
    Rng rng(36);
    std::set<std::string> seen;
    for (int i = 0; i < 40; ++i) {
        auto pair = sample_pair(ts, Phase::pretrain, "", 16, 16, rng);
        REQUIRE(pair.task_id != "snow");
        REQUIRE(pair.corrupted.shape() == std::vector<int>{3, 16, 16});
        seen.insert(pair.task_id);
    }
    REQUIRE(seen.size() == 2);  // both known tasks appear

    auto ft = sample_pair(ts, Phase::finetune, "snow", 16, 16, rng);
    REQUIRE(ft.task_id == "snow");
}

TEST_CASE("load_clean_patch crops from a PPM") {
    Rng src(37);
    Tensor img = gen_clean_patch(16, 24, src);
    std::string path = "test_degrade_crop.ppm";
    write_ppm(path, img);
    Rng rng(38);
    Tensor crop = load_clean_patch(path, 8, 8, rng);
    REQUIRE(crop.shape() == std::vector<int>{3, 8, 8});
    for (double v : crop.data()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    REQUIRE_THROWS_AS(load_clean_patch(path, 32, 32, rng), dim_error);
    std::remove(path.c_str());
}
