#include <gtest/gtest.h>

#include <random>

#include "csmf/meanfield.hpp"

using namespace csmf;

namespace {

InitialDensitySpec box1(double vlo = -1, double vhi = 1) { return InitialDensitySpec::uniform_box({0.0}, {1.0}, {vlo}, {vhi}); }

InteractionKernel cs(double c, std::size_t d = 1) { return InteractionKernel::cucker_smale(CommunicationRate::constant(c), d); }

InteractionKernel cs_quarter(std::size_t d = 1) {
    return InteractionKernel::cucker_smale(CommunicationRate::inverse_power(1.0, 0.25), d);
}

InitialDensitySpec gaussian2() {
    return InitialDensitySpec::from_json(json::parse(R"({"family":"gaussian","x_mean":[0,0],"v_mean":[0.5,0],
        "x_cov":[[1,0.3],[0.3,1]],"v_cov":0.25,"x_radius":2,"v_radius":1})"));
}

InitialDensitySpec mixture1() {
    return InitialDensitySpec::from_json(json::parse(R"({"family":"mixture","components":[
        {"weight":1,"family":"uniform_box","x_lo":0,"x_hi":1,"v_lo":-1,"v_hi":-0.5},
        {"weight":3,"family":"uniform_box","x_lo":2,"x_hi":3,"v_lo":0.5,"v_hi":1}]})"));
}

IntegratorOptions every(std::size_t stride) {
    IntegratorOptions o;
    o.frame_stride = stride;
    return o;
}

} // namespace

TEST(SampleInitial, PointVelocityBox) {
    const auto spec = InitialDensitySpec::uniform_box({0, 0}, {1, 1}, {0, 0}, {0, 0});
    const auto e = sample_initial(spec, 500, 3);
    for (double v : e.velocities) EXPECT_EQ(v, 0.0);
}

TEST(SampleInitial, DeterministicPerSeed) {
    for (const auto& spec : {box1(), gaussian2(), mixture1()}) {
        EXPECT_EQ(sample_initial(spec, 100, 9), sample_initial(spec, 100, 9));
        EXPECT_NE(sample_initial(spec, 100, 9), sample_initial(spec, 100, 10));
    }
}

TEST(SampleInitial, DrawsStayInSupport) {
    for (const auto& spec : {box1(), gaussian2(), mixture1()}) {
        const auto e = sample_initial(spec, 5000, 4);
        for (std::size_t i = 0; i < e.count; ++i) EXPECT_TRUE(spec.contains(e.x(i), e.v(i)));
        const auto sd = spec.support_data();
        for (std::size_t i = 0; i < e.count; ++i) EXPECT_LE(norm(e.v(i)), sd.v_sup + 1e-12);
    }
}

TEST(SampleInitial, UniformMeanWithinClt) {
    const std::size_t M = 100000;
    const auto e = sample_initial(box1(0.2, 1.0), M, 5);
    double s = 0;
    for (double v : e.velocities) s += v;
    const double sigma = 0.8 / std::sqrt(12.0);
    EXPECT_NEAR(s / M, 0.6, 4 * sigma / std::sqrt(double(M)));
}

TEST(SampleInitial, MixtureWeightsAndMoments) {
    const auto spec = mixture1();
    const std::size_t M = 40000;
    const auto e = sample_initial(spec, M, 6);
    double s = 0;
    for (double v : e.velocities) s += v;
    const double mean = spec.velocity_mean()[0];
    EXPECT_DOUBLE_EQ(mean, 0.25 * -0.75 + 0.75 * 0.75);
    EXPECT_NEAR(s / M, mean, 4 * std::sqrt(spec.velocity_variance()[0] / M));
}

TEST(SampleInitial, RejectsMalformedSpec) {
    EXPECT_THROW(InitialDensitySpec::uniform_box({0.0}, {-1.0}, {0.0}, {1.0}), InputError);
    EXPECT_THROW(InitialDensitySpec::uniform_box({0.0, 0.0}, {1.0}, {0.0}, {1.0}), InputError);
    EXPECT_THROW(InitialDensitySpec::from_json(json::parse(R"({"family":"blob"})")), InputError);
    EXPECT_THROW(sample_initial(box1(), 0, 1), InputError);
}

TEST(SupportData, UnitBoxClosedForms) {
    const auto sd = box1().support_data();
    EXPECT_EQ(sd.v_sup, 1.0);
    EXPECT_EQ(sd.vbar, (std::vector<double>{0.0}));
    EXPECT_DOUBLE_EQ(sd.supp_size, std::sqrt(5.0));
    EXPECT_DOUBLE_EQ(sd.v_l1, 0.5);
}

TEST(SpecJson, RoundTrip) {
    for (const auto& spec : {box1(), gaussian2(), mixture1()}) {
        const auto back = InitialDensitySpec::from_json(spec.to_json());
        EXPECT_EQ(back.to_json(), spec.to_json());
        EXPECT_EQ(sample_initial(back, 50, 2), sample_initial(spec, 50, 2));
    }
}

TEST(SolveVlasov, BitIdenticalToParticleIntegrator) {
    const auto spec = box1();
    const auto k = cs_quarter();
    const auto a = solve_vlasov(spec, k, 300, 1.0, 0.01, 17);
    const auto b = integrate(sample_initial(spec, 300, 17), k, 1.0, 0.01);
    ASSERT_EQ(a.frames(), b.frames());
    for (std::size_t f = 0; f < a.frames(); ++f) EXPECT_EQ(a.states[f], b.states[f]);
}

TEST(SolveVlasov, RigidTranslationForPointVelocity) {
    const auto spec = InitialDensitySpec::uniform_box({0, 0}, {1, 1}, {0.3, -0.2}, {0.3, -0.2});
    const auto traj = solve_vlasov(spec, cs_quarter(2), 200, 1.0, 0.01, 2);
    const auto& s0 = traj.initial();
    for (std::size_t f = 0; f < traj.frames(); ++f) {
        const auto& s = traj.states[f];
        const double t = traj.times[f];
        for (std::size_t i = 0; i < s.count; ++i) {
            EXPECT_EQ(s.v(i)[0], 0.3);
            EXPECT_NEAR(s.x(i)[0], s0.x(i)[0] + 0.3 * t, 1e-13);
            EXPECT_NEAR(s.x(i)[1], s0.x(i)[1] - 0.2 * t, 1e-13);
        }
    }
}

TEST(SolveVlasov, TwoSampleCloudIsTheAnalyticPair) {
    const auto traj = solve_vlasov(box1(), cs(1.0), 2, 1.0, 1e-3, 8);
    const auto& s0 = traj.initial();
    const double w0 = s0.velocities[0] - s0.velocities[1];
    EXPECT_NEAR(traj.final().velocities[0] - traj.final().velocities[1], w0 * std::exp(-1.0), 1e-12);
}

TEST(SolveVlasov, MeanVelocityConstantForConstantRate) {
    const auto traj = solve_vlasov(box1(0.0, 1.0), cs(1.0), 2000, 1.0, 0.01, 21);
    const auto m0 = detail::mean_rows(traj.initial().velocities, 2000, 1)[0];
    for (const auto& s : traj.states) EXPECT_NEAR(detail::mean_rows(s.velocities, 2000, 1)[0], m0, 1e-6);
}

TEST(SolveVlasov, VelocityDiameterNonincreasing) {
    const auto traj = solve_vlasov(gaussian2(), cs_quarter(2), 1000, 2.0, 0.01, 3);
    double prev = diagnostics(traj.initial()).velocity_diameter;
    for (const auto& s : traj.states) {
        const double dv = diagnostics(s).velocity_diameter;
        EXPECT_LE(dv, prev + 1e-8 * diagnostics(traj.initial()).velocity_diameter);
        prev = dv;
    }
}

TEST(MarginalSamples, TimeZeroIsInitialLaw) {
    const auto ms = marginal_samples(box1(), cs_quarter(), 8, 1, 0.0, 4000, 0.01, 100);
    ASSERT_EQ(ms.rows(), 4000u);
    double sx = 0, sv = 0;
    for (std::size_t k = 0; k < ms.rows(); ++k) {
        sx += ms.row(k)[0];
        sv += ms.row(k)[1];
    }
    const double band = 4 / std::sqrt(12.0 * 4000);
    EXPECT_NEAR(sx / 4000, 0.5, band);
    EXPECT_NEAR(sv / 4000, 0.0, 2 * band);
}

TEST(MarginalSamples, SingleParticleFreeStreams) {
    const auto ms = marginal_samples(box1(), cs_quarter(), 1, 1, 0.7, 50, 0.01, 300);
    for (std::size_t k = 0; k < ms.rows(); ++k) {
        const auto e = sample_initial(box1(), 1, 300 + k);
        EXPECT_NEAR(ms.row(k)[0], e.positions[0] + 0.7 * e.velocities[0], 1e-13);
        EXPECT_EQ(ms.row(k)[1], e.velocities[0]);
    }
}

TEST(MarginalSamples, PairVelocityContracts) {
    // N = 2, psi = 1, v in {-1, 1} (mixture of two point boxes): v_1(t) = vbar + (v_1 - vbar) e^{-t}
    const auto spec = InitialDensitySpec::from_json(json::parse(R"({"family":"mixture","components":[
        {"family":"uniform_box","x_lo":0,"x_hi":1,"v_lo":-1,"v_hi":-1},
        {"family":"uniform_box","x_lo":0,"x_hi":1,"v_lo":1,"v_hi":1}]})"));
    const auto ms = marginal_samples(spec, cs(1.0), 2, 1, 1.0, 4000, 0.01, 7);
    double s2 = 0;
    for (std::size_t k = 0; k < ms.rows(); ++k) s2 += ms.row(k)[1] * ms.row(k)[1];
    // E v_1(t)^2 = 1/2 + e^{-2t}/2 exactly in law
    EXPECT_NEAR(s2 / 4000, 0.5 + 0.5 * std::exp(-2.0), 0.03);
}

TEST(MarginalSamples, SeedPermutationPermutesRows) {
    std::vector<std::uint64_t> seeds{5, 6, 7, 8, 9}, perm{8, 5, 9, 7, 6};
    const auto a = marginal_samples_for_seeds(box1(), cs_quarter(), 6, 2, {0.5}, 0.01, seeds).front();
    const auto b = marginal_samples_for_seeds(box1(), cs_quarter(), 6, 2, {0.5}, 0.01, perm, 2).front();
    for (std::size_t k = 0; k < perm.size(); ++k) {
        const auto src = static_cast<std::size_t>(std::find(seeds.begin(), seeds.end(), perm[k]) - seeds.begin());
        EXPECT_TRUE(std::equal(b.row(k).begin(), b.row(k).end(), a.row(src).begin()));
    }
}

TEST(MarginalSamples, MultipleTimesMatchSingleRuns) {
    const auto both = marginal_samples_for_seeds(box1(), cs_quarter(), 8, 1, {0.5, 1.0}, 0.01, {1, 2, 3});
    const auto half = marginal_samples(box1(), cs_quarter(), 8, 1, 0.5, 3, 0.01, 1);
    const auto one = marginal_samples(box1(), cs_quarter(), 8, 1, 1.0, 3, 0.01, 1);
    EXPECT_EQ(both[0].samples, half.samples);
    EXPECT_EQ(both[1].samples, one.samples);
}

TEST(MarginalSamples, PooledModeIsLabeled) {
    const auto ms = marginal_samples_pooled(box1(), cs_quarter(), 10, 2, 0.5, 3, 0.01, 1);
    EXPECT_TRUE(ms.pooled);
    EXPECT_EQ(ms.rows(), 15u);
    EXPECT_THROW(marginal_samples(box1(), cs_quarter(), 4, 5, 0.5, 10, 0.01, 1), InputError);
    EXPECT_THROW(marginal_samples(box1(), cs_quarter(), 4, 1, 0.5, 1, 0.01, 1), InputError);
}

TEST(KineticBounds, ZeroVelocityPasses) {
    const auto spec = InitialDensitySpec::uniform_box({0.0}, {1.0}, {0.0}, {0.0});
    const auto traj = solve_vlasov(spec, cs(1.0), 100, 1.0, 0.05, 1);
    EXPECT_TRUE(check_kinetic_bounds(traj, cs(1.0), spec).ok());
}

TEST(KineticBounds, ConstantRateRunHasPositiveMargin) {
    const auto spec = box1();
    const auto traj = solve_vlasov(spec, cs(1.0), 10000, 1.0, 0.01, 2, every(10));
    const auto rep = check_kinetic_bounds(traj, cs(1.0), spec);
    EXPECT_TRUE(rep.ok());
    const auto& mean = rep.check("mean_speed");
    for (std::size_t f = 1; f < mean.times.size(); ++f) EXPECT_GT(mean.margin[f], 0.0);
}

TEST(KineticBounds, UnderstatedGammaIsFlagged) {
    // tabulated response with psi = 1 acts like a velocity repeller when turned by pi
    const auto k = InteractionKernel::rotation(CommunicationRate::constant(1.0), 2, std::acos(-1.0));
    const auto spec = InitialDensitySpec::uniform_box({0, 0}, {1, 1}, {-1, -1}, {1, 1});
    const auto traj = solve_vlasov(spec, k, 500, 2.0, 0.01, 4, every(20));
    EXPECT_TRUE(check_kinetic_bounds(traj, k, spec).ok());
    EXPECT_FALSE(check_kinetic_bounds(traj, 0.1 * k.gamma0(), spec).ok());
}

TEST(FlockingFit, RigidTranslation) {
    const auto spec = InitialDensitySpec::uniform_box({-1.0}, {1.0}, {0.5}, {0.5});
    const auto traj = solve_vlasov(spec, cs(1.0), 200, 1.0, 0.01, 3, every(10));
    const auto fit = fit_flocking_support(traj);
    EXPECT_LE(fit.V, 1e-10);
    EXPECT_EQ(fit.residual, 0.0);
    EXPECT_EQ(fit.vbar, (std::vector<double>{0.5}));
    EXPECT_NEAR(fit.X, detail::max_radius(traj.initial().positions, 200, 1, fit.xbar), 1e-12);
}

TEST(FlockingFit, ConstantRateDecaysAtUnitRate) {
    const auto traj = solve_vlasov(box1(), cs(1.0), 1000, 4.0, 0.01, 5, every(10));
    const auto fit = fit_flocking_support(traj);
    EXPECT_NEAR(fit.alpha, 1.0, 0.05);
}

TEST(FlockingFit, NullKernelDoesNotFlock) {
    const auto traj = solve_vlasov(box1(), InteractionKernel(NullForm{}, 1), 1000, 4.0, 0.01, 5, every(10));
    const auto fit = fit_flocking_support(traj);
    EXPECT_NEAR(fit.alpha, 0.0, 1e-12);
    EXPECT_EQ(fit.residual, 0.0);
}

TEST(FlockingFit, NeedsThreeFrames) {
    const auto traj = solve_vlasov(box1(), cs(1.0), 10, 0.01, 0.01, 5);
    EXPECT_THROW(fit_flocking_support(traj), InputError);
}
