#include <advsde/sde.hpp>

#include <gtest/gtest.h>

using namespace advsde;

namespace {

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

TrainConfig cfg_of(double eta, std::size_t B, unsigned K, double lambda = 2.0, double T = 1.0)
{
    TrainConfig c;
    c.eta = eta;
    c.B = B;
    c.K = K;
    c.lambda = lambda;
    c.T = T;
    return c;
}

LossModel random_linreg(RngStream& rng, Eigen::Index d, Eigen::Index dt)
{
    Matrix A(d, dt);
    rng.fill_normal(A.data(), A.size());
    return LinearRegressionModel(A, rng.normal_vector(d), spd_random(d, 0.5, 1.5, rng));
}

// 1-d fixture: λ = 1, θ₀ = 1, K = 5, η = 0.1, B = 20 (β = 400).
OuSolution fixture_ou() { return OuSolution(SpdMatrix::diagonal(vec({1.0})), 5, 0.1, 400.0); }

double max_abs(const Vector& v) { return v.cwiseAbs().maxCoeff(); }

} // namespace

TEST(Coefficients, QuadraticHandExample)
{
    const LossModel m = QuadraticModel(SpdMatrix::diagonal(vec({1.0, 2.0})));
    const SdeCoefficients c = coefficients_adversarial(m, cfg_of(0.1, 20, 5));
    const Vector d = c.drift(vec({1.0, 1.0}));
    EXPECT_NEAR(d[0], -1.55, 1e-14);
    EXPECT_NEAR(d[1], -4.2, 1e-14);
}

TEST(Coefficients, QuadraticEigenConsistency)
{
    RngStream rng(1, 0);
    const SpdMatrix H = spd_random(6, 0.3, 3.0, rng);
    const LossModel m = QuadraticModel(H);
    const TrainConfig cfg = cfg_of(0.07, 20, 4);
    const SdeCoefficients c = coefficients_adversarial(m, cfg);
    const Matrix Hhat = H.matrix() + (4 + 0.5) * 0.07 * H.matrix() * H.matrix();
    for (int i = 0; i < 20; ++i) {
        const Vector th = rng.normal_vector(6);
        EXPECT_LE(max_abs(c.drift(th) + Hhat * th), 1e-12);
        EXPECT_LE(max_abs(c.b0(th) + H.matrix() * th), 1e-12);
    }
    EXPECT_LT((c.sigma(Vector::Zero(6)) - std::sqrt(2.0 / cfg.beta()) * H.matrix()).norm(), 1e-12);
}

TEST(Coefficients, OriginIsDriftFixedPoint)
{
    const LossModel m = QuadraticModel(SpdMatrix::diagonal(vec({1.0, 2.0})));
    const SdeCoefficients c = coefficients_adversarial(m, cfg_of(0.1, 20, 5));
    EXPECT_EQ(c.b0(Vector::Zero(2)).norm(), 0.0);
    EXPECT_EQ(c.b1(Vector::Zero(2)).norm(), 0.0);
    const SdeCoefficients s = coefficients_sgd(m, cfg_of(0.1, 20, 5));
    EXPECT_EQ(s.drift(Vector::Zero(2)).norm(), 0.0);
}

TEST(Coefficients, KZeroReducesToSgd)
{
    RngStream rng(2, 0);
    const std::vector<LossModel> models{QuadraticModel(spd_random(4, 0.5, 2.0, rng)), random_linreg(rng, 5, 3)};
    for (const LossModel& m : models) {
        const TrainConfig cfg = cfg_of(0.05, 10, 0);
        const SdeCoefficients a = coefficients_adversarial(m, cfg);
        const SdeCoefficients s = coefficients_sgd(m, cfg);
        for (int i = 0; i < 100; ++i) {
            const Vector th = rng.normal_vector(param_dim(m));
            EXPECT_LE(max_abs(a.b0(th) - s.b0(th)), 1e-14);
            EXPECT_LE(max_abs(a.b1(th) - s.b1(th)), 1e-14);
        }
        EXPECT_EQ(a.sigma(Vector::Zero(param_dim(m))), s.sigma(Vector::Zero(param_dim(m))));
    }
}

TEST(Coefficients, SgdQuadraticDrift)
{
    RngStream rng(3, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    const LossModel m = QuadraticModel(H);
    const SdeCoefficients s = coefficients_sgd(m, cfg_of(0.1, 4, 3));
    const Vector th = rng.normal_vector(3);
    EXPECT_LE(max_abs(s.drift(th) + (H.matrix() + 0.05 * H.matrix() * H.matrix()) * th), 1e-14);
    EXPECT_EQ(s.sigma(th), coefficients_adversarial(m, cfg_of(0.1, 4, 3)).sigma(th));
}

TEST(Coefficients, LinearRegressionMatchesFiniteDifferences)
{
    // b0 = −∇G and b1 = −(K/2)∇‖D‖² − ¼∇‖∇G‖², with the gradients taken numerically on the closed forms.
    RngStream rng(4, 0);
    const LossModel m = random_linreg(rng, 4, 3);
    const TrainConfig cfg = cfg_of(0.05, 10, 3);
    const SdeCoefficients c = coefficients_adversarial(m, cfg);
    const Vector th = rng.normal_vector(3);
    auto G = [&](const Vector& t) { return statistics(m, t, cfg.K, cfg.beta()).G; };
    auto D2 = [&](const Vector& t) { return statistics(m, t, cfg.K, cfg.beta()).D.squaredNorm(); };
    auto grad = [](auto f, const Vector& t) {
        Vector g(t.size());
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            Vector a = t, b = t;
            a[i] += 1e-5;
            b[i] -= 1e-5;
            g[i] = (f(a) - f(b)) / 2e-5;
        }
        return g;
    };
    const Vector gG = grad(G, th);
    auto gradG_sq = [&](const Vector& t) { return grad(G, t).squaredNorm(); };
    const Vector b1 = -0.5 * cfg.K * grad(D2, th) - 0.25 * grad(gradG_sq, th);
    EXPECT_LT((c.b0(th) + gG).norm() / gG.norm(), 1e-6);
    EXPECT_LT((c.b1(th) - b1).norm() / b1.norm(), 1e-4);
}

TEST(Coefficients, RejectLogistic)
{
    const LossModel m = LogisticModel(0.5, Vector::Zero(1), Vector::Zero(1), SpdMatrix::identity(1), SpdMatrix::identity(1), 0.0);
    EXPECT_THROW(coefficients_adversarial(m, cfg_of(0.1, 1, 1)), std::invalid_argument);
    EXPECT_THROW(coefficients_sgd(m, cfg_of(0.1, 1, 1)), std::invalid_argument);
}

TEST(Controlled, UnitFactorEqualsAdversarial)
{
    RngStream rng(5, 0);
    const std::vector<LossModel> models{QuadraticModel(spd_random(3, 0.5, 2.0, rng)), random_linreg(rng, 4, 2)};
    for (const LossModel& m : models) {
        const TrainConfig cfg = cfg_of(0.05, 10, 4);
        const SdeCoefficients a = coefficients_adversarial(m, cfg);
        const SdeCoefficients c = coefficients_controlled(m, cfg, 1.0, Convention::general_formula);
        for (int i = 0; i < 10; ++i) {
            const Vector th = rng.normal_vector(param_dim(m));
            EXPECT_LE(max_abs(a.b0(th) - c.b0(th)), 1e-13);
            EXPECT_LE(max_abs(a.b1(th) - c.b1(th)), 1e-12);
        }
    }
}

TEST(Controlled, ZeroFactorFreezes)
{
    RngStream rng(6, 0);
    const LossModel m = random_linreg(rng, 4, 2);
    for (Convention conv : {Convention::general_formula, Convention::paper_printed}) {
        const SdeCoefficients c = coefficients_controlled(m, cfg_of(0.05, 10, 4), 0.0, conv);
        const Vector th = rng.normal_vector(2);
        EXPECT_EQ(c.drift(th).norm(), 0.0);
        EXPECT_EQ(c.sigma(th).norm(), 0.0);
    }
}

TEST(Controlled, PrintedConventionKZero)
{
    RngStream rng(7, 0);
    const LossModel m = random_linreg(rng, 5, 3);
    const auto& l = std::get<LinearRegressionModel>(m);
    const double eta = 0.02;
    const SdeCoefficients c = coefficients_controlled(m, cfg_of(eta, 10, 0), 1.0, Convention::paper_printed);
    const Vector th = rng.normal_vector(3);
    const Vector v = l.A.transpose() * (l.A * th - l.mu);
    const Matrix ata = l.A.transpose() * l.A;
    const Vector expect = -(2.0 * Matrix::Identity(3, 3) + eta * ata) * v;
    EXPECT_LE(max_abs(c.drift(th) - expect), 1e-12);
}

TEST(Controlled, PrintedConventionGeneralDrift)
{
    RngStream rng(8, 0);
    const LossModel m = random_linreg(rng, 4, 2);
    const auto& l = std::get<LinearRegressionModel>(m);
    const double eta = 0.01, u = 0.37;
    const unsigned K = 5;
    const SdeCoefficients c = coefficients_controlled(m, cfg_of(eta, 10, K), u);
    const Vector th = rng.normal_vector(2);
    const Vector v = l.A.transpose() * (l.A * th - l.mu);
    const Matrix ata = l.A.transpose() * l.A;
    const Vector expect = -(u * (2.0 + 4.0 * K * eta) * Matrix::Identity(2, 2) + u * u * eta * ata) * v;
    EXPECT_LE(max_abs(c.drift(th) - expect), 1e-12);
    EXPECT_EQ(c.kind, CoefficientKind::linear_paper_printed);
}

TEST(Controlled, DiffusionScalesWithFactor)
{
    RngStream rng(9, 0);
    const LossModel m = random_linreg(rng, 4, 2);
    const TrainConfig cfg = cfg_of(0.01, 10, 5);
    const auto& l = std::get<LinearRegressionModel>(m);
    // Var(∇_θL) = 4AᵀΣA, so σ = u·2√(2/β)(AᵀΣA)^{1/2}.
    const Matrix ref = 0.4 * 2.0 * std::sqrt(2.0 / cfg.beta()) *
                       matrix_sqrt_spd(SpdMatrix(l.A.transpose() * l.Sigma.matrix() * l.A)).matrix();
    const SdeCoefficients c = coefficients_controlled(m, cfg, 0.4);
    EXPECT_LT((c.sigma(Vector::Zero(2)) - ref).norm(), 1e-12);
}

TEST(Controlled, RejectsOutOfRangeFactorAndWrongModel)
{
    RngStream rng(10, 0);
    const LossModel m = random_linreg(rng, 3, 1);
    EXPECT_THROW(coefficients_controlled(m, cfg_of(0.01, 10, 5), 1.5), std::invalid_argument);
    EXPECT_THROW(coefficients_controlled(m, cfg_of(0.01, 10, 5), -0.1), std::invalid_argument);
    const LossModel q = QuadraticModel(SpdMatrix::identity(2));
    EXPECT_THROW(coefficients_controlled(q, cfg_of(0.01, 10, 5), 0.5, Convention::paper_printed), std::invalid_argument);
}

TEST(EulerMaruyama, DeterministicOneStep)
{
    const LossModel m = QuadraticModel(SpdMatrix::diagonal(vec({1.0, 2.0})));
    SdeCoefficients c = coefficients_adversarial(m, cfg_of(0.1, 20, 5));
    c.sigma = [](const Vector&) { return Matrix(Matrix::Zero(2, 2)); };
    NoiseStream noise(RngStream(1, 0));
    const Vector th0 = vec({1.0, 1.0});
    const SdePath p = euler_maruyama(c, th0, 0.01, 0.01, noise);
    ASSERT_EQ(p.states.size(), 2u);
    EXPECT_LE(max_abs(p.states[1] - (th0 + c.drift(th0) * 0.01)), 1e-16);
}

TEST(EulerMaruyama, ZeroCoefficientsConstantPath)
{
    SdeCoefficients c;
    c.b0 = [](const Vector& t) { return Vector(Vector::Zero(t.size())); };
    c.b1 = c.b0;
    c.sigma = [](const Vector& t) { return Matrix(Matrix::Zero(t.size(), t.size())); };
    NoiseStream noise(RngStream(2, 0));
    const SdePath p = euler_maruyama(c, vec({0.3, -1.0}), 1.0, 0.1, noise);
    ASSERT_EQ(p.states.size(), 11u);
    for (const Vector& s : p.states) EXPECT_EQ(s, vec({0.3, -1.0}));
    EXPECT_DOUBLE_EQ(p.times.back(), 1.0);
}

TEST(EulerMaruyama, DivergenceReportsStep)
{
    SdeCoefficients c;
    c.b0 = [](const Vector& t) { return Vector(1e200 * t.cwiseAbs2()); };
    c.b1 = [](const Vector& t) { return Vector(Vector::Zero(t.size())); };
    c.sigma = [](const Vector& t) { return Matrix(Matrix::Zero(t.size(), t.size())); };
    NoiseStream noise(RngStream(3, 0));
    try {
        euler_maruyama(c, vec({1.0}), 1.0, 0.1, noise);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 1u);
        EXPECT_LE(e.step(), 10u);
    }
}

TEST(EulerMaruyama, MatchesExactExpectedLoss)
{
    const OuSolution ou = fixture_ou();
    const LossModel m = QuadraticModel(SpdMatrix::diagonal(vec({1.0})));
    const TrainConfig cfg = cfg_of(0.1, 20, 5);
    const SdeCoefficients c = coefficients_adversarial(m, cfg);
    const double dt = 0.1 / 50.0;
    std::vector<double> g(10000);
    parallel_for_replications(g.size(), [&](std::size_t i) {
        NoiseStream noise(rng_substream(44, i));
        const SdePath p = euler_maruyama(c, vec({1.0}), 1.0, dt, noise, {}, 1000000);
        g[i] = 0.5 * p.states.back().squaredNorm();
    });
    RunningStats rs;
    for (double v : g) rs.push(v);
    // EM's O(dt) weak bias on the deterministic part: ≈ ½e^{−2λ̂t}·λ̂²·dt·t.
    const double lh = ou.eigenvalues_hat()[0];
    const double bias = 0.5 * std::exp(-2.0 * lh) * lh * lh * dt;
    EXPECT_NEAR(rs.mean(), quad_expected_loss(ou, vec({1.0}), 1.0), 3.0 * rs.stderr_mean() + bias);
}

TEST(EulerMaruyama, WeakBiasHalvesWithStep)
{
    // Noise-free: the deterministic residual of E g is first order in dt.
    const LossModel m = QuadraticModel(SpdMatrix::diagonal(vec({1.0, 2.5})));
    const TrainConfig cfg = cfg_of(0.1, 20, 5);
    SdeCoefficients c = coefficients_adversarial(m, cfg);
    c.sigma = [](const Vector&) { return Matrix(Matrix::Zero(2, 2)); };
    const OuSolution ou(SpdMatrix::diagonal(vec({1.0, 2.5})), 5, 0.1, 1e300);
    const Vector th0 = vec({1.0, -0.5});
    auto residual = [&](double dt) {
        NoiseStream noise(RngStream(5, 0));
        const Vector end = euler_maruyama(c, th0, 1.0, dt, noise, {}, 1000000).states.back();
        return std::abs(0.5 * (end[0] * end[0] + 2.5 * end[1] * end[1]) - quad_expected_loss(ou, th0, 1.0));
    };
    const double r1 = residual(0.002), r2 = residual(0.001);
    EXPECT_NEAR(r1 / r2, 2.0, 0.05);
}

TEST(EulerMaruyama, ScheduleNeedsControlledCoefficients)
{
    const LossModel m = QuadraticModel(SpdMatrix::identity(1));
    const SdeCoefficients c = coefficients_adversarial(m, cfg_of(0.1, 20, 5));
    NoiseStream noise(RngStream(6, 0));
    EXPECT_THROW(euler_maruyama(c, vec({1.0}), 1.0, 0.01, noise, [](double, const Vector&) { return 0.5; }),
                 std::invalid_argument);
}

TEST(EulerMaruyama, ScheduleSelectsFactor)
{
    RngStream rng(7, 0);
    const LossModel m = random_linreg(rng, 3, 2);
    const SdeCoefficients c = coefficients_controlled(m, cfg_of(0.01, 10, 5), 1.0);
    NoiseStream a(RngStream(7, 1)), b(RngStream(7, 1));
    const Vector th0 = vec({1.0, -1.0});
    const SdePath pa = euler_maruyama(c, th0, 0.1, 0.01, a, [](double, const Vector&) { return 0.3; });
    const SdePath pb = euler_maruyama(c.with_u(0.3), th0, 0.1, 0.01, b);
    EXPECT_EQ(pa.states.back(), pb.states.back());
}

TEST(OuExact, TimeZeroReturnsStart)
{
    const OuSolution ou = fixture_ou();
    NoiseStream noise(RngStream(8, 0));
    EXPECT_EQ(ou_exact_sample(ou, vec({1.0}), 0.0, noise)[0], 1.0);
    EXPECT_THROW(ou_exact_sample(ou, vec({1.0}), -1.0, noise), std::invalid_argument);
}

TEST(OuExact, NoNoiseIsDeterministic)
{
    RngStream rng(9, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    const OuSolution ou(H, 2, 0.05, std::numeric_limits<double>::infinity());
    NoiseStream noise(RngStream(9, 1));
    const Vector th0 = rng.normal_vector(3);
    const Matrix Hhat = H.matrix() + 2.5 * 0.05 * H.matrix() * H.matrix();
    Eigen::SelfAdjointEigenSolver<Matrix> es(Hhat);
    const Vector expect = es.eigenvectors() * (-0.8 * es.eigenvalues()).array().exp().matrix().asDiagonal() *
                          es.eigenvectors().transpose() * th0;
    EXPECT_LT((ou_exact_sample(ou, th0, 0.8, noise) - expect).norm(), 1e-12);
}

TEST(OuExact, HhatSharesEigenvectors)
{
    RngStream rng(10, 0);
    const SpdMatrix H = spd_random(4, 0.5, 2.0, rng);
    const OuSolution ou(H, 3, 0.1, 10.0);
    const Matrix expect = H.matrix() + 3.5 * 0.1 * H.matrix() * H.matrix();
    EXPECT_LT((ou.Hhat().matrix() - expect).norm(), 1e-12);
    for (Eigen::Index i = 0; i < 4; ++i) {
        const double l = ou.eigenvalues()[i];
        EXPECT_NEAR(ou.eigenvalues_hat()[i], l + 0.35 * l * l, 1e-12);
    }
    EXPECT_LT((H.matrix() * ou.Hhat().matrix() - ou.Hhat().matrix() * H.matrix()).norm(), 1e-12);
}

TEST(OuExact, EmpiricalCovarianceMatchesClosedForm)
{
    RngStream rng(11, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    const OuSolution ou(H, 2, 0.05, 40.0);
    const Vector th0 = rng.normal_vector(3);
    const double t = 0.7;
    const int n = 100000;
    Matrix x(3, n);
    NoiseStream noise(RngStream(11, 1));
    for (int i = 0; i < n; ++i) x.col(i) = ou_exact_sample(ou, th0, t, noise);
    const Vector mean = x.rowwise().mean();
    const Matrix c = x.colwise() - mean;
    const Matrix emp = c * c.transpose() / (n - 1.0);
    const Matrix exact = ou.covariance(t);
    // Per eigenmode variance: (λ²/β)(1 − e^{−2λ̂t})/λ̂.
    const Matrix q = ou.eigenvectors();
    const Vector modes = (q.transpose() * emp * q).diagonal();
    for (Eigen::Index i = 0; i < 3; ++i) {
        const double l = ou.eigenvalues()[i], lh = ou.eigenvalues_hat()[i];
        const double v = l * l / 40.0 * (1.0 - std::exp(-2.0 * lh * t)) / lh;
        EXPECT_NEAR(modes[i], v, 0.05 * v);
    }
    EXPECT_LT((emp - exact).norm() / exact.norm(), 0.05);
    EXPECT_LT((mean - ou.mean(th0, t)).norm(), 0.02);
}

TEST(OuExact, LongTimeVarianceLimit)
{
    const OuSolution ou = fixture_ou();
    const double lh = 1.0 + 5.5 * 0.1;
    EXPECT_NEAR(ou.mode_variance(1e6)[0], 1.0 / 400.0 / lh, 1e-15);
}

TEST(QuadLoss, FixtureValues)
{
    const OuSolution ou = fixture_ou();
    const Vector th0 = vec({1.0});
    const double adv = quad_expected_loss(ou, th0, 1.0);
    const double first = 0.5 * std::exp(-2.0 * 1.55);
    const double noise = (1.0 - std::exp(-3.1)) / (400.0 * 3.1);
    EXPECT_NEAR(first, 0.022525, 5e-7);
    EXPECT_NEAR(noise, 0.000770, 5e-7);
    EXPECT_NEAR(adv, first + noise, 1e-15);
    EXPECT_NEAR(adv, 0.023295, 5e-7);
    const double sgd = quad_expected_loss_sgd(SpdMatrix::diagonal(vec({1.0})), 400.0, th0, 1.0);
    EXPECT_NEAR(sgd, 0.068748, 5e-7);
    EXPECT_LT(adv, sgd);
}

TEST(QuadLoss, TimeZero)
{
    RngStream rng(12, 0);
    const SpdMatrix H = spd_random(4, 0.5, 2.0, rng);
    const Vector th0 = rng.normal_vector(4);
    const double g0 = 0.5 * th0.dot(H.matrix() * th0);
    EXPECT_NEAR(quad_expected_loss(OuSolution(H, 5, 0.1, 40.0), th0, 0.0), g0, 1e-14);
    EXPECT_NEAR(quad_expected_loss_sgd(H, 40.0, th0, 0.0), g0, 1e-14);
    EXPECT_THROW(quad_expected_loss(OuSolution(H, 5, 0.1, 40.0), th0, -0.1), std::invalid_argument);
    EXPECT_THROW(quad_expected_loss_sgd(H, 40.0, th0, -0.1), std::invalid_argument);
}

TEST(QuadLoss, MatchesEigenmodeIntegral)
{
    // Independent oracle: ½E[ΘᵀHΘ] = ½ m(t)ᵀ H m(t) + ½ Tr(H·Cov(t)).
    RngStream rng(13, 0);
    const SpdMatrix H = spd_random(5, 0.3, 3.0, rng);
    const OuSolution ou(H, 4, 0.08, 30.0);
    const Vector th0 = rng.normal_vector(5);
    for (double t : {0.1, 0.5, 2.0}) {
        const Vector m = ou.mean(th0, t);
        const double oracle = 0.5 * m.dot(H.matrix() * m) + 0.5 * (H.matrix() * ou.covariance(t)).trace();
        EXPECT_NEAR(quad_expected_loss(ou, th0, t), oracle, 1e-13);
    }
}

TEST(QuadLoss, SgdLimitAndKZeroCoincide)
{
    RngStream rng(14, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    const Vector th0 = rng.normal_vector(3);
    Eigen::SelfAdjointEigenSolver<Matrix> es(H.matrix());
    const double floor = 0.5 * es.eigenvalues().squaredNorm() / 50.0;
    EXPECT_NEAR(quad_expected_loss_sgd(H, 50.0, th0, 1e4), floor, 1e-14);
    const OuSolution tiny(H, 0, 1e-14, 50.0);
    for (double t : {0.0, 0.3, 1.0, 3.0})
        EXPECT_NEAR(quad_expected_loss(tiny, th0, t), quad_expected_loss_sgd(H, 50.0, th0, t), 1e-10);
}

TEST(Stationary, FixtureAndLimits)
{
    EXPECT_NEAR(quad_stationary_loss(fixture_ou()), 0.0025 / 3.1, 1e-15);
    EXPECT_NEAR(quad_stationary_loss(fixture_ou()), 8.0645e-4, 5e-8);
    RngStream rng(15, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    Eigen::SelfAdjointEigenSolver<Matrix> es(H.matrix());
    EXPECT_NEAR(quad_stationary_loss(OuSolution(H, 0, 1e-14, 50.0)), 0.5 * es.eigenvalues().squaredNorm() / 50.0, 1e-12);
    EXPECT_EQ(quad_stationary_loss(OuSolution(H, 3, 0.1, std::numeric_limits<double>::infinity())), 0.0);
    EXPECT_NEAR(quad_expected_loss(fixture_ou(), vec({3.0}), 200.0), quad_stationary_loss(fixture_ou()), 1e-15);
}

TEST(Stationary, ExactSamplesAtLongTime)
{
    const OuSolution ou = fixture_ou();
    RunningStats rs;
    NoiseStream noise(RngStream(16, 0));
    for (int i = 0; i < 100000; ++i) rs.push(0.5 * ou_exact_sample(ou, vec({5.0}), 20.0, noise).squaredNorm());
    EXPECT_NEAR(rs.mean(), quad_stationary_loss(ou), 3.0 * rs.stderr_mean());
}

TEST(SdeMoments, ExactFirstMoment)
{
    RngStream rng(17, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    const OuSolution ou(H, 2, 0.05, 40.0);
    const Vector th0 = rng.normal_vector(3);
    const MomentPair m = sde_one_step_moments(ou, th0, 0.05);
    const Vector lam_hat = ou.eigenvalues_hat();
    const Matrix q = ou.eigenvectors();
    const Vector expect = q * ((-0.05 * lam_hat).array().exp() - 1.0).matrix().asDiagonal() * q.transpose() * th0;
    EXPECT_LT((m.first - expect).norm(), 1e-14);
    EXPECT_EQ(m.provenance, MomentSource::sde_exact);
    EXPECT_LT((m.second - m.second.transpose()).norm(), 1e-15);
}

TEST(SdeMoments, SmallStepFirstMomentDirection)
{
    RngStream rng(18, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    const TrainConfig cfg = cfg_of(1e-4, 10, 2);
    const OuSolution ou(H, cfg);
    const Vector th0 = rng.normal_vector(3);
    const Vector rate = sde_one_step_moments(ou, th0, cfg.eta).first / cfg.eta;
    const Vector drift = coefficients_adversarial(QuadraticModel(H), cfg).drift(th0);
    EXPECT_LT((rate - drift).norm() / drift.norm(), 1e-3);
}

TEST(SdeMoments, MonteCarloAgreesWithExact)
{
    const OuSolution ou = fixture_ou();
    const LossModel m = QuadraticModel(SpdMatrix::diagonal(vec({1.0})));
    const SdeCoefficients c = coefficients_adversarial(m, cfg_of(0.1, 20, 5));
    RngStream rng(19, 0);
    const MomentPair mc = sde_one_step_moments(c, vec({1.0}), 0.1, 0.002, 20000, rng);
    const MomentPair ex = sde_one_step_moments(ou, vec({1.0}), 0.1);
    EXPECT_EQ(mc.provenance, MomentSource::sde_mc);
    EXPECT_NEAR(mc.first[0], ex.first[0], 3.0 * (*mc.first_stderr)[0] + 1e-3);
    EXPECT_NEAR(mc.second(0, 0), ex.second(0, 0), 3.0 * (*mc.second_stderr)(0, 0) + 1e-3);
}

TEST(SdeMoments, MatchDiscreteAnalyticToThirdOrder)
{
    RngStream rng(20, 0);
    const SpdMatrix H = spd_random(3, 0.5, 2.0, rng);
    const LossModel m = QuadraticModel(H);
    const Vector th0 = rng.normal_vector(3);
    std::vector<std::pair<double, double>> p1, p2;
    for (double eta : {0.1, 0.05, 0.025, 0.0125}) {
        const TrainConfig cfg = cfg_of(eta, 4, 2);
        const MomentPair an = one_step_moments_analytic(m, th0, cfg);
        const MomentPair ex = sde_one_step_moments(OuSolution(H, cfg), th0, eta);
        p1.emplace_back(eta, (an.first - ex.first).cwiseAbs().maxCoeff());
        p2.emplace_back(eta, (an.second - ex.second).cwiseAbs().maxCoeff());
    }
    EXPECT_GE(loglog_fit(p1).slope, 2.7);
    EXPECT_GE(loglog_fit(p2).slope, 2.7);
}

TEST(LossOde, ZeroControlIsConstant)
{
    const LossOdeState st{0.7, 2.0, 1.0, 5, 0.01, 2000.0, false};
    const auto path = loss_ode_integrate(st, [](double, double) { return 0.0; }, 1.0, 0.01);
    for (double s : path) EXPECT_EQ(s, 0.7);
}

TEST(LossOde, InitialSlopeHandExample)
{
    const LossOdeState st{1.0, 1.0, 1.0, 0, 0.0, 100.0, false};
    EXPECT_NEAR(st.rhs(1.0, 1.0), -3.92, 1e-15);
}

TEST(LossOde, Rk4MatchesLinearClosedForm)
{
    // Fixed u: ds/dt = −a s + c, s(t) = c/a + (s₀ − c/a)e^{−at}.
    const LossOdeState st{1.0, 3.0, 0.8, 5, 0.01, 2000.0, false};
    const double u = 0.6;
    const double a = 2.0 * ((2.0 + 4.0 * 5 * 0.01) * 3.0 * u + 0.01 * 9.0 * u * u);
    const double c = 8.0 * 9.0 * 0.8 / 2000.0 * u * u;
    const auto path = loss_ode_integrate(st, [u](double, double) { return u; }, 2.0, 1e-3);
    const double exact = c / a + (1.0 - c / a) * std::exp(-a * 2.0);
    EXPECT_NEAR(path.back(), exact, 1e-8 * exact);
    EXPECT_EQ(path.size(), 2001u);
}

TEST(LossOde, CenteredVariant)
{
    const LossOdeState st{2.0, 1.0, 0.5, 0, 0.0, 100.0, true};
    EXPECT_NEAR(st.rhs(2.0, 1.0), -2.0 * 1.5 * 2.0 + 8.0 * 0.5 / 100.0, 1e-15);
}

TEST(LossOde, RejectsBadStep)
{
    const LossOdeState st{1.0, 1.0, 1.0, 0, 0.0, 100.0, false};
    EXPECT_THROW(loss_ode_integrate(st, [](double, double) { return 1.0; }, 1.0, 0.0), std::invalid_argument);
}
