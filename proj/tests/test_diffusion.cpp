// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "distill3d/diffusion.hpp"
#include "distill3d/errors.hpp"
#include "oracles.hpp"

using namespace distill3d;

TEST_CASE("linear schedule") {
    const NoiseSchedule s = linear_schedule();
    CHECK(s.num_steps() == 1000);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-15));
    for (int t = 2; t <= s.num_steps(); ++t) {
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
        CHECK(s.alpha_bar(t) > 0.0);
    }
    CHECK_THROWS_AS(linear_schedule(1), InvalidArgument);
    CHECK_THROWS_AS(linear_schedule(10, 0.02, 0.01), InvalidArgument);
    CHECK_THROWS_AS(NoiseSchedule({0.1, 1.5}), InvalidArgument);
}

TEST_CASE("timestep range and weights") {
    const NoiseSchedule s = linear_schedule();
    TimestepConfig tc;
    CHECK(tc.t_min(s) == 20);
    CHECK(tc.t_max(s) == 980);
    Rng rng(1);
    const Tensor shape(3, 2, 2);
    for (int i = 0; i < 500; ++i) {
        const TimestepSample ts = sample_timestep(rng, s, tc, shape);
        CHECK(ts.t >= 20);
        CHECK(ts.t <= 980);
        CHECK(ts.weight == doctest::Approx(1.0 - s.alpha_bar(ts.t)));
        CHECK(ts.eps.same_shape(shape));
    }
    CHECK(weight_at(Weighting::Unit, 0.3) == 1.0);
    CHECK(weight_at(Weighting::OneMinusAlphaBarOverSqrtAlphaBar, 0.64) == doctest::Approx(0.36 / 0.8));
    for (auto w : {Weighting::Unit, Weighting::OneMinusAlphaBar, Weighting::OneMinusAlphaBarOverSqrtAlphaBar})
        CHECK(parse_weighting(weighting_name(w)) == w);
    CHECK_THROWS_AS(parse_weighting("cosine"), InvalidArgument);
}

TEST_CASE("add_noise trivial cases and shape check") {
    const NoiseSchedule s = linear_schedule();
    TimestepSample ts{500, Tensor(3, 2, 2), 1.0};
    CHECK(add_noise(Tensor(3, 2, 2), ts, s) == Tensor(3, 2, 2));
    CHECK_THROWS_AS(add_noise(Tensor(3, 2, 3), ts, s), InvalidArgument);
}

TEST_CASE("add_noise mean and variance within 3 sigma") {
    const NoiseSchedule s = linear_schedule();
    Rng rng(12);
    const int t = 400;
    const double ab = s.alpha_bar(t);
    const double z = 0.7;
    const int n = 10000;
    double sum = 0.0, sum0 = 0.0, sq0 = 0.0;
    const Tensor clean(1, 1, 1, z), zero(1, 1, 1, 0.0);
    for (int i = 0; i < n; ++i) {
        TimestepSample ts{t, Tensor(1, 1, 1), 1.0};
        rng.fill_normal(ts.eps.data);
        sum += add_noise(clean, ts, s).data[0];
        const double v = add_noise(zero, ts, s).data[0];
        sum0 += v;
        sq0 += v * v;
    }
    const double sigma = std::sqrt(1.0 - ab);
    CHECK(std::abs(sum / n - std::sqrt(ab) * z) < 3.0 * sigma / std::sqrt(double(n)));
    const double var = sq0 / n - (sum0 / n) * (sum0 / n);
    // Var of the sample variance of a normal is 2σ⁴/n.
    CHECK(std::abs(var - (1.0 - ab)) < 3.0 * std::sqrt(2.0 / n) * (1.0 - ab));
}

TEST_CASE("codec") {
    Rng rng(3);
    const Image x = oracle::random_image(rng, 8, 8);
    const Codec id = Codec::identity();
    CHECK(id.decode(id.encode(x)) == x);
    CHECK(id.encode(x).at(1, 2, 3) == x.at(3, 2, 1));

    const Codec pool = Codec::avgpool(2);
    const Tensor c = pool.encode(Image(8, 8, 0.37));
    CHECK(c.channels == 3);
    CHECK(c.height == 4);
    for (double v : c.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
    CHECK(pool.encode(pool.decode(c)) == c);
    CHECK_THROWS_AS(pool.encode(Image(7, 8)), InvalidArgument);

    for (const Codec& codec : {id, pool}) {
        Tensor u = codec.latent_shape(8, 8);
        rng.fill_normal(u.data);
        const Tensor ex = codec.encode(x);
        const Image au = codec.encode_adjoint(u);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < u.data.size(); ++i) lhs += ex.data[i] * u.data[i];
        for (std::size_t i = 0; i < x.pixels.size(); ++i) rhs += x.pixels[i] * au.pixels[i];
        CHECK(std::abs(lhs - rhs) < 1e-5);
    }
    CHECK(Codec::parse("avgpool-4") == Codec::avgpool(4));
    CHECK(Codec::parse(pool.name()) == pool);
    CHECK_THROWS_AS(Codec::parse("vae"), InvalidArgument);
}

TEST_CASE("delta-target denoiser") {
    const NoiseSchedule s = linear_schedule();
    Rng rng(4);
    Tensor target(3, 4, 4);
    rng.fill_normal(target.data);
    const DeltaTargetDenoiser d(s, target);

    const int t = 300;
    Tensor at_target = target;
    for (double& v : at_target.data) v *= std::sqrt(s.alpha_bar(t));
    for (double v : d.predict(at_target, t, {}).data) CHECK(v == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

    const DeltaTargetDenoiser zero(s, Tensor(3, 4, 4));
    for (double v : zero.predict(Tensor(3, 4, 4), t, {}).data) CHECK(v == 0.0);

    // Text and guidance are ignored.
    DenoiserCondition cond;
    cond.text_embedding = {1.0, 2.0};
    cond.guidance_scale = 7.5;
    Tensor noisy(3, 4, 4);
    rng.fill_normal(noisy.data);
    CHECK(d.predict(noisy, t, cond) == d.predict(noisy, t, {}));
    CHECK_THROWS_AS(d.predict(Tensor(3, 4, 5), t, {}), InvalidArgument);
}

TEST_CASE("delta-oracle closed form example") {
    // Schedule with a step where alpha_bar = 0.64.
    const NoiseSchedule s({0.2, 0.2});
    CHECK(s.alpha_bar(1) == doctest::Approx(0.8));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.64));
    const Tensor target(3, 2, 2, 0.0), z(3, 2, 2, 0.3);
    Rng rng(5);
    TimestepSample ts{2, Tensor(3, 2, 2), 1.0};
    rng.fill_normal(ts.eps.data);
    const Tensor eps_hat = DeltaTargetDenoiser(s, target).predict(add_noise(z, ts, s), 2, {});
    for (std::size_t i = 0; i < eps_hat.data.size(); ++i)
        CHECK(eps_hat.data[i] - ts.eps.data[i] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("zero123 oracle") {
    const NoiseSchedule s = linear_schedule();
    const CameraPose def = look_at_origin(0, 0, 2.2, 50, 16, 16);
    const auto scene = AnalyticScene::two_hemisphere_sphere();
    const Rgb bg{1, 1, 1};
    const Zero123Oracle z(s, scene, def, Codec::identity(), bg);

    CHECK(z.target_for(RelativePose::identity()) == Codec::identity().encode(render_analytic(scene, def, bg)));

    const CameraPose back = look_at_origin(180, 0, 2.2, 50, 16, 16);
    const Tensor opposite = z.target_for(solve_relative(def, back));
    // Center pixel: red from the front, blue from behind.
    CHECK(z.target_for(RelativePose::identity()).at(0, 8, 8) == doctest::Approx(1.0));
    CHECK(opposite.at(0, 8, 8) == doctest::Approx(0.0));
    CHECK(opposite.at(2, 8, 8) == doctest::Approx(1.0));

    Tensor noisy(3, 16, 16);
    Rng rng(6);
    rng.fill_normal(noisy.data);
    DenoiserCondition cond;
    cond.relative_pose = solve_relative(def, look_at_origin(70, 20, 2.2, 50, 16, 16));
    CHECK(z.predict(noisy, 400, cond) == z.predict(noisy, 400, cond));
    CHECK_THROWS_AS(z.predict(noisy, 400, {}), InvalidArgument);
}

TEST_CASE("image prompt oracle") {
    const NoiseSchedule s = linear_schedule();
    const Tensor shape(3, 16, 16);
    const auto gray = embed_image(Image(16, 16, 0.5), 4);
    for (double v : ImagePromptOracle::decode_target(gray, shape).data) CHECK(v == doctest::Approx(0.5));

    Rng rng(7);
    const Image a = oracle::random_image(rng, 16, 16, 0, 1);
    const Image b = oracle::random_image(rng, 16, 16, 0, 1);
    const Image c = oracle::random_image(rng, 16, 16, 0, 1);
    const auto ya = embed_image(a, 4);
    const auto delta = geometry_prompt_difference(embed_image(b, 4), embed_image(c, 4));
    const Tensor combined = ImagePromptOracle::decode_target(compensate(ya, delta), shape);
    const Tensor ta = ImagePromptOracle::decode_target(ya, shape);
    ImagePromptEmbedding dy{delta.patches, delta.vector};
    const Tensor td = ImagePromptOracle::decode_target(dy, shape);
    for (std::size_t i = 0; i < combined.data.size(); ++i)
        CHECK(std::abs(combined.data[i] - ta.data[i] - td.data[i]) <= 1e-6);

    const ImagePromptOracle ip(s);
    Tensor noisy = shape;
    rng.fill_normal(noisy.data);
    DenoiserCondition cond;
    cond.image_prompt = ya;
    DenoiserCondition zero_delta = cond;
    zero_delta.image_prompt = compensate(ya, geometry_prompt_difference(ya, ya));
    CHECK(ip.predict(noisy, 250, cond) == ip.predict(noisy, 250, zero_delta));
    cond.text_embedding = {3.0};
    CHECK(ip.predict(noisy, 250, cond) == ip.predict(noisy, 250, zero_delta));
    CHECK_THROWS_AS(ip.predict(noisy, 250, {}), InvalidArgument);
}

TEST_CASE("residual score model") {
    const NoiseSchedule s = linear_schedule();
    Tensor target(3, 4, 4, 0.2);
    auto base = std::make_shared<DeltaTargetDenoiser>(s, target);
    Rng rng(8);
    Tensor render(3, 4, 4);
    rng.fill_normal(render.data);
    DenoiserCondition cond;
    cond.camera = look_at_origin(40, 10, 2.2, 50, 4, 4);

    SUBCASE("matches the base model bit-exactly at init") {
        ResidualScoreModel phi(base, target, {32, 8, 1e-3, 1});
        for (int i = 0; i < 10; ++i) {
            Tensor noisy(3, 4, 4);
            rng.fill_normal(noisy.data);
            const int t = rng.uniform_int(1, 1000);
            CHECK(phi.predict(noisy, t, cond) == base->predict(noisy, t, cond));
            for (double v : phi.residual(noisy, t, cond).data) CHECK(v == 0.0);
        }
    }
    SUBCASE("loss at init equals the base-model loss") {
        ResidualScoreModel phi(base, target, {32, 8, 1e-3, 1});
        Rng a(11), b(11);
        const double loss = phi.train_step(render, cond, s, {}, a);
        const TimestepSample ts = sample_timestep(b, s, {}, render);
        const Tensor eps_hat = base->predict(add_noise(render, ts, s), ts.t, cond);
        double expect = 0.0;
        for (std::size_t i = 0; i < eps_hat.data.size(); ++i)
            expect += (eps_hat.data[i] - ts.eps.data[i]) * (eps_hat.data[i] - ts.eps.data[i]);
        CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("learning rate zero leaves parameters unchanged") {
        ResidualScoreModel phi(base, target, {32, 8, 0.0, 1});
        const std::vector<double> before(phi.parameters().begin(), phi.parameters().end());
        const auto hash = phi.state_hash();
        for (int i = 0; i < 20; ++i) phi.train_step(render, cond, s, {}, rng);
        CHECK(std::equal(before.begin(), before.end(), phi.parameters().begin()));
        CHECK(phi.state_hash() == hash);
    }
    SUBCASE("training changes the state hash") {
        ResidualScoreModel phi(base, target, {32, 8, 1e-3, 1});
        const auto hash = phi.state_hash();
        phi.train_step(render, cond, s, {}, rng);
        CHECK(phi.state_hash() != hash);
    }
    SUBCASE("noise-level inputs keep the exact init and reject bad timesteps") {
        ResidualScoreModel phi(base, target, {32, 8, 1e-3, 1}, s);
        Tensor noisy(3, 4, 4);
        rng.fill_normal(noisy.data);
        CHECK(phi.predict(noisy, 17, cond) == base->predict(noisy, 17, cond));
        CHECK_THROWS_AS(phi.residual(noisy, 0, cond), InvalidArgument);
        CHECK_THROWS_AS(phi.residual(noisy, 1001, cond), InvalidArgument);
    }
    SUBCASE("batched loss at init is the mean over stratified timesteps") {
        ResidualModelConfig rc{32, 8, 1e-3, 1};
        rc.batch = 4;
        ResidualScoreModel phi(base, target, rc);
        Rng a(21), b(21);
        const double loss = phi.train_step(render, cond, s, {}, a);
        const TimestepConfig tc;
        const int lo = tc.t_min(s), hi = tc.t_max(s);
        const double u = b.uniform(0.0, 1.0);
        double expect = 0.0;
        std::vector<int> ts_seen;
        for (int k = 0; k < 4; ++k) {
            TimestepSample ts;
            ts.t = std::min(hi, lo + int(std::fmod(u + k / 4.0, 1.0) * (hi - lo + 1)));
            ts.eps = Tensor(3, 4, 4);
            b.fill_normal(ts.eps.data);
            ts_seen.push_back(ts.t);
            const Tensor eps_hat = base->predict(add_noise(render, ts, s), ts.t, cond);
            for (std::size_t i = 0; i < eps_hat.data.size(); ++i)
                expect += (eps_hat.data[i] - ts.eps.data[i]) * (eps_hat.data[i] - ts.eps.data[i]) / 4;
        }
        CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
        std::sort(ts_seen.begin(), ts_seen.end());
        for (int k = 1; k < 4; ++k) CHECK(ts_seen[k] - ts_seen[k - 1] >= (hi - lo) / 4 - 1);
    }
    SUBCASE("pooled input accepts latents smaller than the pooling grid") {
        ResidualModelConfig rc{32, 8, 1e-3, 1};
        rc.input_grid = 16;
        ResidualScoreModel phi(base, target, rc);
        CHECK_NOTHROW(phi.train_step(render, cond, s, {}, rng));
        rc.batch = 0;
        CHECK_THROWS_AS(ResidualScoreModel(base, target, rc), InvalidArgument);
    }
}

TEST_CASE("timestep embedding") {
    const auto e = timestep_embedding(10, 8);
    CHECK(e.size() == 8);
    for (double v : e) CHECK(std::abs(v) <= 1.0);
    CHECK(timestep_embedding(10, 8) != timestep_embedding(11, 8));
}
