#ifndef ADVSDE_EXPERIMENTS_HPP
#define ADVSDE_EXPERIMENTS_HPP

#include "config.hpp"
#include "lr_controller.hpp"
#include "report.hpp"

#include <chrono>

namespace advsde {

// Substream layout: one block of 2^32 indices per purpose.
namespace streams {
constexpr std::uint64_t block = 1ULL << 32;
constexpr std::uint64_t model = 0;
constexpr std::uint64_t theta0 = 1;
inline std::uint64_t at(std::uint64_t purpose, std::uint64_t i) { return purpose * block + i; }
} // namespace streams

// Builds the model and θ₀ described by the [model] section.
struct ModelInstance {
    LossModel model;
    Vector theta0;
};

namespace detail {

inline Vector theta0_from(const ConfigTree& t, Eigen::Index dim, RngStream& rng)
{
    const std::string value = t.get_string("model", "theta0", "random");
    if (value == "random") {
        const double scale = t.get_double("model", "theta0_scale", 1.0);
        return scale * rng.normal_vector(dim);
    }
    const std::vector<double> v = t.get_doubles("model", "theta0");
    if (v.size() == 1) return Vector::Constant(dim, v[0]);
    if (static_cast<Eigen::Index>(v.size()) != dim)
        throw ConfigError(ConfigError::Kind::bad_value, "model.theta0 has the wrong length", t.line_of("model", "theta0"));
    return Eigen::Map<const Vector>(v.data(), dim);
}

inline LossModel quadratic_from(const ConfigTree& t, RngStream& rng)
{
    if (t.has("model", "eigenvalues")) {
        const std::vector<double> ev = t.get_doubles("model", "eigenvalues");
        return QuadraticModel(SpdMatrix::diagonal(Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()))));
    }
    const auto dim = t.get_int("model", "dim", 10);
    return QuadraticModel(spd_random(dim, t.get_double("model", "eig_low", 0.5), t.get_double("model", "eig_high", 3.0), rng));
}

inline LossModel linreg_from(const ConfigTree& t, RngStream& rng)
{
    const Eigen::Index d = t.get_int("model", "data_dim", 20);
    const std::string design = t.get_string("model", "design", "column");
    Matrix A;
    if (design == "column") {
        A.resize(d, 1);
        rng.fill_normal(A.data(), d);
    } else if (design == "isotropic") {
        // A = √α Qᵀ with Q (d_θ × d) having orthonormal columns, so AAᵀ = αI.
        const Eigen::Index dt = t.get_int("model", "param_dim", 40);
        if (dt < d)
            throw ConfigError(ConfigError::Kind::bad_value, "isotropic design needs param_dim >= data_dim",
                              t.line_of("model", "param_dim"));
        const double alpha = t.get_double("model", "alpha", 40.0);
        Matrix g(dt, d);
        rng.fill_normal(g.data(), g.size());
        Eigen::HouseholderQR<Matrix> qr(g);
        const Matrix q = qr.householderQ() * Matrix::Identity(dt, d);
        A = std::sqrt(alpha) * q.transpose();
    } else {
        throw ConfigError(ConfigError::Kind::bad_value, "model.design must be column or isotropic", t.line_of("model", "design"));
    }
    const Vector mu = t.get_double("model", "mu_scale", 1.0) * rng.normal_vector(d);
    const SpdMatrix sigma = spd_random(d, t.get_double("model", "sigma_eig_low", 0.5),
                                       t.get_double("model", "sigma_eig_high", 1.5), rng);
    return LinearRegressionModel(A, mu, sigma);
}

// Class means share a common offset m ~ N(0, offset²/d I) and differ by N(0, spread²/d I);
// class covariances have log-uniform spectra in [cov_eig_low, cov_eig_high].
inline LossModel logistic_from(const ConfigTree& t, RngStream& rng)
{
    const Eigen::Index d = t.get_int("model", "dim", 5);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double p = t.get_double("model", "p_low", 0.1) +
                     (t.get_double("model", "p_high", 0.5) - t.get_double("model", "p_low", 0.1)) * rng.uniform();
    const Vector m = t.get_double("model", "offset_scale", 5.0) * sd * rng.normal_vector(d);
    const double spread = t.get_double("model", "spread", 0.4) * sd;
    const Vector mu0 = m + spread * rng.normal_vector(d);
    const Vector mu1 = m + spread * rng.normal_vector(d);
    const double lo = std::log(t.get_double("model", "cov_eig_low", 0.004));
    const double hi = std::log(t.get_double("model", "cov_eig_high", 0.04));
    auto cov = [&] {
        Vector ev(d);
        for (Eigen::Index i = 0; i < d; ++i) ev[i] = std::exp(lo + (hi - lo) * rng.uniform());
        const Matrix q = random_orthogonal(d, rng);
        return SpdMatrix(q * ev.asDiagonal() * q.transpose());
    };
    const SpdMatrix s0 = cov();
    const SpdMatrix s1 = cov();
    return LogisticModel(p, mu0, mu1, s0, s1, t.get_double("model", "bias", 0.0));
}

} // namespace detail

inline ModelInstance build_model(const ConfigTree& t, RngStream& rng)
{
    const std::string variant = t.get_string("model", "variant");
    LossModel m = [&]() -> LossModel {
        if (variant == "quadratic") return detail::quadratic_from(t, rng);
        if (variant == "linear_regression") return detail::linreg_from(t, rng);
        if (variant == "logistic") return detail::logistic_from(t, rng);
        throw ConfigError(ConfigError::Kind::bad_value, "unknown model.variant '" + variant + "'", t.line_of("model", "variant"));
    }();
    if (variant == "logistic" && t.get_string("model", "theta0", "random") == "random") {
        const Eigen::Index d = param_dim(m);
        Vector th0 = t.get_double("model", "theta0_scale", 1.0) / std::sqrt(static_cast<double>(d)) * rng.normal_vector(d);
        return {std::move(m), std::move(th0)};
    }
    Vector th0 = detail::theta0_from(t, param_dim(m), rng);
    return {std::move(m), std::move(th0)};
}

inline ModelInstance build_model(const ExperimentConfig& c)
{
    RngStream rng = rng_substream(c.seed, streams::at(streams::model, 0));
    return build_model(c.tree, rng);
}

namespace detail {

inline const QuadraticModel& require_quadratic(const LossModel& m, const std::string& experiment)
{
    const auto* q = std::get_if<QuadraticModel>(&m);
    if (!q) throw ConfigError(ConfigError::Kind::bad_value, experiment + " needs model.variant = quadratic");
    return *q;
}

inline std::string fmt(double v) { return format_number(v); }

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void finish(ExperimentReport& r, const ExperimentConfig& c, const Stopwatch& sw)
{
    r.experiment = c.experiment;
    nlohmann::ordered_json echo = c.tree.to_json();
    echo["experiment"] = c.experiment;
    echo["seed"] = c.seed;
    echo["mc_runs"] = c.mc_runs;
    echo["profile"] = c.profile;
    if (c.tree.has_section("train")) {
        echo["train"]["eta"] = c.train.eta;
        echo["train"]["B"] = c.train.B;
        echo["train"]["K"] = c.train.K;
        echo["train"]["T"] = c.train.T;
        echo["train"]["lambda"] = c.train.lambda;
        echo["train"]["dt"] = c.dt;
        echo["train"]["beta"] = c.train.beta();
    }
    r.config_echo = echo;
    r.wall_time_s = sw.seconds();
}

// Fitted decay rate: −slope of log(y) against t over points with y > 0.
inline double exp_rate(const std::vector<double>& t, const std::vector<double>& y)
{
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (y[i] > 0.0) pts.emplace_back(t[i], std::log(y[i]));
    if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double mt = 0, my = 0;
    for (auto& [a, b] : pts) { mt += a; my += b; }
    mt /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double stt = 0, sty = 0;
    for (auto& [a, b] : pts) {
        stt += (a - mt) * (a - mt);
        sty += (a - mt) * (b - my);
    }
    return -sty / stt;
}

} // namespace detail

// Weak-error order: |E f(θ_n) − E f(Θ_{nη})| against η, f = ½θᵀHθ.
inline ExperimentReport run_order_check(const ExperimentConfig& c)
{
    detail::Stopwatch sw;
    if (c.eta_grid.size() < 4)
        throw ConfigError(ConfigError::Kind::bad_value, "order-check needs at least 4 values in grid.eta", c.tree.line_of("grid", "eta"));
    const ModelInstance inst = build_model(c);
    const QuadraticModel& q = detail::require_quadratic(inst.model, "order-check");
    const bool synthetic = c.tree.has("grid", "synthetic_c");
    const double synth_c = c.tree.get_double("grid", "synthetic_c", 0.0);
    const double snr_min = c.tree.get_double("grid", "min_snr", 2.0);

    ExperimentReport r;
    CsvTable tab("order_check", {"eta", "n_steps", "t_final", "discrete_mean", "discrete_stderr", "sde_expected",
                                 "abs_diff", "snr"});
    std::vector<std::pair<double, double>> pts;
    double min_snr = std::numeric_limits<double>::infinity();
    for (std::size_t gi = 0; gi < c.eta_grid.size(); ++gi) {
        TrainConfig cfg = c.train;
        cfg.eta = c.eta_grid[gi];
        const std::size_t n = cfg.n_steps();
        const double t_final = static_cast<double>(n) * cfg.eta;
        const OuSolution ou(q.H, cfg);
        const double sde = quad_expected_loss(ou, inst.theta0, t_final);
        double mean = 0.0, se = 0.0;
        if (synthetic) {
            mean = sde + synth_c * cfg.eta * cfg.eta;
        } else {
            std::vector<double> f(c.mc_runs);
            parallel_for_replications(
                c.mc_runs,
                [&](std::size_t i) {
                    RngStream rng = rng_substream(c.seed, streams::at(2 + gi, i));
                    const Vector th = train_final(inst.model, inst.theta0, cfg, Algorithm::adversarial, rng);
                    f[i] = expected_loss(inst.model, th);
                },
                c.threads);
            RunningStats rs;
            for (double v : f) rs.push(v);
            mean = rs.mean();
            se = rs.stderr_mean();
        }
        const double diff = std::abs(mean - sde);
        const double snr = se > 0.0 ? diff / se : std::numeric_limits<double>::infinity();
        min_snr = std::min(min_snr, snr);
        tab.add_row({cfg.eta, static_cast<long long>(n), t_final, mean, se, sde, diff, snr});
        pts.emplace_back(cfg.eta, std::max(diff, std::numeric_limits<double>::min()));
    }
    const LogLogFit fit = loglog_fit(pts);
    const bool reliable = min_snr >= snr_min;
    r.tables.push_back(std::move(tab));
    r.metric("slope", fit.slope);
    r.metric("intercept", fit.intercept);
    r.metric("residual_norm", fit.residual_norm);
    r.metric("min_snr", std::isfinite(min_snr) ? min_snr : 1e300);
    r.metric("fit_reliable", reliable ? 1.0 : 0.0);
    const double lo = c.tree.get_double("accept", "slope_low", 1.7);
    const double hi = c.tree.get_double("accept", "slope_high", 2.4);
    r.check("slope_in_band", fit.slope >= lo && fit.slope <= hi,
            "slope " + detail::fmt(fit.slope) + " band [" + detail::fmt(lo) + ", " + detail::fmt(hi) + "]");
    r.check("fit_reliable", reliable, "min |diff|/stderr " + detail::fmt(min_snr) + " (need >= " + detail::fmt(snr_min) + ")");
    detail::finish(r, c, sw);
    return r;
}

// One-step moments: discrete analytic vs SDE exact vs discrete Monte Carlo.
inline ExperimentReport run_moment_check(const ExperimentConfig& c)
{
    detail::Stopwatch sw;
    if (c.eta_grid.size() < 2)
        throw ConfigError(ConfigError::Kind::bad_value, "moment-check needs at least 2 values in grid.eta", c.tree.line_of("grid", "eta"));
    const ModelInstance inst = build_model(c);
    if (!has_closed_form(inst.model)) throw ConfigError(ConfigError::Kind::bad_value, "moment-check needs a closed-form model");
    const auto* q = std::get_if<QuadraticModel>(&inst.model);

    ExperimentReport r;
    CsvTable moments("moment_check_moments", {"eta", "source", "moment", "i", "j", "value", "stderr"});
    CsvTable resid("moment_check_residuals", {"eta", "first_analytic_vs_sde", "second_analytic_vs_sde", "first_mc_vs_analytic",
                                              "second_mc_vs_analytic", "first_mc_stderr", "second_mc_stderr"});
    std::vector<std::pair<double, double>> p1, p2;
    struct McRow {
        double eta, r, se;
    };
    std::vector<McRow> mc_rows;
    auto emit = [&](double eta, const char* src, const MomentPair& m) {
        for (Eigen::Index i = 0; i < m.first.size(); ++i)
            moments.add_row({eta, std::string(src), std::string("first"), static_cast<long long>(i), 0LL, m.first[i],
                             m.first_stderr ? (*m.first_stderr)[i] : 0.0});
        for (Eigen::Index i = 0; i < m.second.rows(); ++i)
            for (Eigen::Index j = 0; j < m.second.cols(); ++j)
                moments.add_row({eta, std::string(src), std::string("second"), static_cast<long long>(i),
                                 static_cast<long long>(j), m.second(i, j), m.second_stderr ? (*m.second_stderr)(i, j) : 0.0});
    };
    double first_at_max = 0.0;
    for (std::size_t gi = 0; gi < c.eta_grid.size(); ++gi) {
        TrainConfig cfg = c.train;
        cfg.eta = c.eta_grid[gi];
        const MomentPair an = one_step_moments_analytic(inst.model, inst.theta0, cfg);
        RngStream rng = rng_substream(c.seed, streams::at(2 + gi, 0));
        const MomentPair mc = one_step_moments_discrete(inst.model, inst.theta0, cfg, c.mc_runs, rng);
        emit(cfg.eta, "discrete_analytic", an);
        emit(cfg.eta, "discrete_mc", mc);
        double r1 = std::numeric_limits<double>::quiet_NaN(), r2 = r1;
        if (q) {
            const OuSolution ou(q->H, cfg);
            const MomentPair ex = sde_one_step_moments(ou, inst.theta0, cfg.eta);
            emit(cfg.eta, "sde_exact", ex);
            r1 = (an.first - ex.first).cwiseAbs().maxCoeff();
            r2 = (an.second - ex.second).cwiseAbs().maxCoeff();
            p1.emplace_back(cfg.eta, std::max(r1, std::numeric_limits<double>::min()));
            p2.emplace_back(cfg.eta, std::max(r2, std::numeric_limits<double>::min()));
        }
        const Vector d1 = (mc.first - an.first).cwiseAbs();
        const Matrix d2 = (mc.second - an.second).cwiseAbs();
        // Worst component relative to the 3-stderr band.
        double worst_r = 0.0, worst_se = 0.0, worst_excess = -std::numeric_limits<double>::infinity();
        auto consider = [&](double rr, double se) {
            if (rr - 3.0 * se > worst_excess) {
                worst_excess = rr - 3.0 * se;
                worst_r = rr;
                worst_se = se;
            }
        };
        for (Eigen::Index i = 0; i < d1.size(); ++i) consider(d1[i], (*mc.first_stderr)[i]);
        for (Eigen::Index i = 0; i < d2.size(); ++i) consider(d2.data()[i], mc.second_stderr->data()[i]);
        mc_rows.push_back({cfg.eta, worst_r, worst_se});
        resid.add_row({cfg.eta, r1, r2, d1.maxCoeff(), d2.maxCoeff(), mc.first_stderr->maxCoeff(), mc.second_stderr->maxCoeff()});
        if (gi == 0 || cfg.eta > c.eta_grid[0]) first_at_max = an.first[0];
    }
    r.tables.push_back(std::move(moments));

    // Envelope c·η³ with c read off the coarsest step; every other step must fit under it.
    std::size_t imax = 0;
    for (std::size_t i = 1; i < mc_rows.size(); ++i)
        if (mc_rows[i].eta > mc_rows[imax].eta) imax = i;
    const double env_c = std::max(0.0, mc_rows[imax].r - 3.0 * mc_rows[imax].se) / std::pow(mc_rows[imax].eta, 3);
    CsvTable env("moment_check_envelope", {"eta", "mc_residual", "mc_stderr", "envelope", "excess"});
    double max_excess = -std::numeric_limits<double>::infinity();
    for (const auto& row : mc_rows) {
        const double e = env_c * std::pow(row.eta, 3);
        const double excess = row.r - 3.0 * row.se - e;
        max_excess = std::max(max_excess, excess);
        env.add_row({row.eta, row.r, row.se, e, excess});
    }
    r.tables.push_back(std::move(resid));
    r.tables.push_back(std::move(env));

    r.metric("analytic_first_at_max_eta", first_at_max);
    r.metric("mc_envelope_c", env_c);
    r.metric("mc_max_excess", max_excess);
    r.check("mc_within_envelope", max_excess <= 0.0,
            "max(|mc - analytic| - 3 stderr - c eta^3) = " + detail::fmt(max_excess));
    if (q) {
        const LogLogFit f1 = loglog_fit(p1);
        const LogLogFit f2 = loglog_fit(p2);
        const double need = c.tree.get_double("accept", "slope_min", 2.7);
        r.metric("slope_first_analytic_vs_sde", f1.slope);
        r.metric("slope_second_analytic_vs_sde", f2.slope);
        r.check("residual_slope_first", f1.slope >= need, "slope " + detail::fmt(f1.slope) + " >= " + detail::fmt(need));
        r.check("residual_slope_second", f2.slope >= need, "slope " + detail::fmt(f2.slope) + " >= " + detail::fmt(need));
    }
    detail::finish(r, c, sw);
    return r;
}

// Closed-form E g trajectories for adversarial training and SGD, discrete and EM overlays.
inline ExperimentReport run_quad_decay(const ExperimentConfig& c)
{
    detail::Stopwatch sw;
    const ModelInstance inst = build_model(c);
    const QuadraticModel& q = detail::require_quadratic(inst.model, "quad-decay");
    const TrainConfig& cfg = c.train;
    const OuSolution ou(q.H, cfg);
    const double beta = cfg.beta();
    const double g_adv = quad_stationary_loss(ou);
    double g_sgd = 0.0;
    for (double l : ou.eigenvalues()) g_sgd += 0.5 * l * l / beta;

    ExperimentReport r;
    const auto points = static_cast<std::size_t>(c.tree.get_int("decay", "points", 201));
    CsvTable an("quad_decay_analytic", {"t", "adversarial_expected", "sgd_expected"});
    std::vector<double> ts, ya, ys;
    bool strictly_below = true;
    for (std::size_t i = 0; i < points; ++i) {
        const double t = cfg.T * static_cast<double>(i) / static_cast<double>(points - 1);
        const double a = quad_expected_loss(ou, inst.theta0, t);
        const double s = quad_expected_loss_sgd(q.H, beta, inst.theta0, t);
        an.add_row({t, a, s});
        ts.push_back(t);
        ya.push_back(a - g_adv);
        ys.push_back(s - g_sgd);
        if (t > 0.0 && !(a < s)) strictly_below = false;
    }
    r.tables.push_back(std::move(an));

    // Discrete Monte Carlo overlay on the iteration grid.
    const std::size_t n = cfg.n_steps();
    const std::size_t runs = static_cast<std::size_t>(c.tree.get_int("decay", "discrete_runs", static_cast<long long>(c.mc_runs)));
    std::vector<std::vector<double>> adv(runs), sgd(runs);
    TrainConfig sgd_cfg = cfg;
    sgd_cfg.K = 0;
    Monitors mon;
    mon.record_thetas = false;
    parallel_for_replications(
        runs,
        [&](std::size_t i) {
            RngStream ra = rng_substream(c.seed, streams::at(2, i));
            RngStream rs = ra;
            adv[i] = train(inst.model, inst.theta0, cfg, Algorithm::adversarial, ra, mon).losses;
            sgd[i] = train(inst.model, inst.theta0, sgd_cfg, Algorithm::sgd, rs, mon).losses;
        },
        c.threads);
    CsvTable disc("quad_decay_discrete", {"iteration", "t", "adversarial_mean", "adversarial_stderr", "sgd_mean", "sgd_stderr",
                                          "adversarial_expected", "sgd_expected"});
    for (std::size_t k = 0; k <= n; ++k) {
        RunningStats a, s;
        for (std::size_t i = 0; i < runs; ++i) {
            a.push(adv[i][k]);
            s.push(sgd[i][k]);
        }
        const double t = static_cast<double>(k) * cfg.eta;
        disc.add_row({static_cast<long long>(k), t, a.mean(), a.stderr_mean(), s.mean(), s.stderr_mean(),
                      quad_expected_loss(ou, inst.theta0, t), quad_expected_loss_sgd(q.H, beta, inst.theta0, t)});
    }
    r.tables.push_back(std::move(disc));

    // Euler-Maruyama paths of the adversarial SDE.
    const std::size_t em_paths = static_cast<std::size_t>(c.tree.get_int("decay", "em_paths", 10000));
    const SdeCoefficients coeffs = coefficients_adversarial(inst.model, cfg);
    std::vector<double> em(em_paths);
    parallel_for_replications(
        em_paths,
        [&](std::size_t i) {
            NoiseStream noise(rng_substream(c.seed, streams::at(3, i)));
            const SdePath p = euler_maruyama(coeffs, inst.theta0, cfg.T, c.dt, noise, {}, std::numeric_limits<std::size_t>::max());
            em[i] = expected_loss(inst.model, p.states.back());
        },
        c.threads);
    RunningStats ems;
    for (double v : em) ems.push(v);
    const double exact_T = quad_expected_loss(ou, inst.theta0, cfg.T);
    CsvTable emt("quad_decay_em", {"t", "dt", "paths", "em_mean", "em_stderr", "exact"});
    emt.add_row({cfg.T, c.dt, static_cast<long long>(em_paths), ems.mean(), ems.stderr_mean(), exact_T});
    r.tables.push_back(std::move(emt));

    const double lmin = ou.eigenvalues().minCoeff();
    const double k2 = 2.0 * cfg.K + 1.0;
    r.metric("expected_loss_adversarial_T", exact_T);
    r.metric("expected_loss_sgd_T", quad_expected_loss_sgd(q.H, beta, inst.theta0, cfg.T));
    r.metric("em_mean_T", ems.mean());
    r.metric("em_stderr_T", ems.stderr_mean());
    r.metric("rate_adversarial_fitted", detail::exp_rate(ts, ya));
    r.metric("rate_sgd_fitted", detail::exp_rate(ts, ys));
    r.metric("rate_adversarial_predicted", 2.0 * lmin + k2 * cfg.eta * lmin * lmin);
    r.metric("rate_sgd_predicted", 2.0 * lmin);
    r.metric("adversarial_strictly_below_sgd", strictly_below ? 1.0 : 0.0);
    const double em_gap = std::abs(ems.mean() - exact_T);
    r.check("em_matches_exact", em_gap <= 3.0 * ems.stderr_mean(),
            "|EM - exact| = " + detail::fmt(em_gap) + " vs 3 stderr = " + detail::fmt(3.0 * ems.stderr_mean()));
    r.check("adversarial_below_sgd", strictly_below, "adversarial E g(t) < SGD E g(t) for all t in (0, T]");
    detail::finish(r, c, sw);
    return r;
}

// Exact OU sampling from two initial points; convergence to the stationary loss.
inline ExperimentReport run_stationary_check(const ExperimentConfig& c)
{
    detail::Stopwatch sw;
    const ModelInstance inst = build_model(c);
    const QuadraticModel& q = detail::require_quadratic(inst.model, "stationary-check");
    const TrainConfig& cfg = c.train;
    const OuSolution ou(q.H, cfg);
    const double g_inf = quad_stationary_loss(ou);
    const double lmin = ou.eigenvalues().minCoeff();
    const double t_end = c.tree.get_double("stationary", "t_end_factor", 20.0) / lmin;
    const double t_min = c.tree.get_double("stationary", "t_min", 0.01);
    const auto points = static_cast<std::size_t>(c.tree.get_int("stationary", "points", 30));
    const double scale_b = c.tree.get_double("stationary", "theta0_b", 10.0);
    const std::size_t n = c.mc_runs;
    const Eigen::Index d = q.H.dim();
    const std::vector<std::pair<std::string, Vector>> inits{{"zero", Vector::Zero(d)}, {"far", Vector::Constant(d, scale_b)}};

    ExperimentReport r;
    CsvTable tab("stationary_check", {"init", "t", "mean_g", "stderr", "expected", "stationary"});
    std::vector<double> fit_t, fit_y;
    std::vector<RunningStats> terminal(inits.size());
    for (std::size_t ii = 0; ii < inits.size(); ++ii) {
        for (std::size_t k = 0; k < points; ++k) {
            const double t = t_min * std::pow(t_end / t_min, static_cast<double>(k) / static_cast<double>(points - 1));
            std::vector<double> g(n);
            parallel_for_replications(
                n,
                [&](std::size_t i) {
                    NoiseStream noise(rng_substream(c.seed, streams::at(2 + ii * points + k, i)));
                    g[i] = expected_loss(inst.model, ou_exact_sample(ou, inits[ii].second, t, noise));
                },
                c.threads);
            RunningStats rs;
            for (double v : g) rs.push(v);
            tab.add_row({inits[ii].first, t, rs.mean(), rs.stderr_mean(), quad_expected_loss(ou, inits[ii].second, t), g_inf});
            if (ii == 1 && rs.mean() - g_inf > 10.0 * rs.stderr_mean()) {
                fit_t.push_back(t);
                fit_y.push_back(rs.mean() - g_inf);
            }
            if (k + 1 == points) terminal[ii] = rs;
        }
    }
    r.tables.push_back(std::move(tab));
    const double rate = detail::exp_rate(fit_t, fit_y);
    const double pred = 2.0 * lmin + (2.0 * cfg.K + 1.0) * cfg.eta * lmin * lmin;
    const double ma = terminal[0].mean(), mb = terminal[1].mean();
    const double sa = terminal[0].stderr_mean(), sb = terminal[1].stderr_mean();
    r.metric("stationary_loss", g_inf);
    r.metric("terminal_mean_zero", ma);
    r.metric("terminal_stderr_zero", sa);
    r.metric("terminal_mean_far", mb);
    r.metric("terminal_stderr_far", sb);
    r.metric("rate_fitted", rate);
    r.metric("rate_predicted", pred);
    r.metric("rate_fit_points", static_cast<double>(fit_t.size()));
    const double joint = 3.0 * std::sqrt(sa * sa + sb * sb);
    r.check("inits_agree", std::abs(ma - mb) <= joint, "|zero - far| = " + detail::fmt(std::abs(ma - mb)) + " vs " + detail::fmt(joint));
    r.check("zero_reaches_stationary", std::abs(ma - g_inf) <= 3.0 * sa,
            "|mean - stationary| = " + detail::fmt(std::abs(ma - g_inf)) + " vs 3 stderr " + detail::fmt(3.0 * sa));
    r.check("far_reaches_stationary", std::abs(mb - g_inf) <= 3.0 * sb,
            "|mean - stationary| = " + detail::fmt(std::abs(mb - g_inf)) + " vs 3 stderr " + detail::fmt(3.0 * sb));
    const double tol = c.tree.get_double("accept", "rate_rel_tol", 0.15);
    r.check("rate_matches", std::abs(rate - pred) <= tol * pred,
            "fitted " + detail::fmt(rate) + " vs predicted " + detail::fmt(pred));
    detail::finish(r, c, sw);
    return r;
}

// Feedback law vs brute-force argmin, threshold sweep, and ODE-level optimality.
inline ExperimentReport run_policy_check(const ExperimentConfig& c)
{
    detail::Stopwatch sw;
    const ConfigTree& t = c.tree;
    const auto tuples = static_cast<std::size_t>(t.get_int("policy", "tuples", 100));
    const double step = t.get_double("policy", "grid_step", 1e-3);
    RngStream rng = rng_substream(c.seed, streams::at(2, 0));

    ExperimentReport r;
    CsvTable tab("policy_tuples", {"s", "alpha", "sigma", "B", "K", "eta", "u_star", "u_grid", "abs_diff"});
    double max_diff = 0.0;
    for (std::size_t i = 0; i < tuples; ++i) {
        FeedbackPolicy p;
        p.sigma_tr = 0.1 + 9.9 * rng.uniform();
        p.alpha = 0.1 + 9.9 * rng.uniform();
        p.B = 1 + rng.index_below(64);
        p.K = static_cast<unsigned>(rng.index_below(11));
        p.eta = 1e-3 + (0.1 - 1e-3) * rng.uniform();
        const double s = 4.0 * p.sigma_tr / static_cast<double>(p.B) * rng.uniform();
        const double us = optimal_u(s, p);
        const double ug = grid_oracle_u(s, p, step);
        max_diff = std::max(max_diff, std::abs(us - ug));
        tab.add_row({s, p.alpha, p.sigma_tr, static_cast<long long>(p.B), static_cast<long long>(p.K), p.eta, us, ug, std::abs(us - ug)});
    }
    r.tables.push_back(std::move(tab));

    FeedbackPolicy sweep;
    sweep.sigma_tr = t.get_double("sweep", "sigma", 1.0);
    sweep.B = static_cast<std::size_t>(t.get_int("sweep", "B", 10));
    sweep.alpha = t.get_double("sweep", "alpha", 1000.0);
    sweep.K = static_cast<unsigned>(t.get_int("sweep", "K", 5));
    sweep.eta = t.get_double("sweep", "eta", 0.01);
    const double thresh = 2.0 * sweep.sigma_tr / static_cast<double>(sweep.B);
    CsvTable sw_tab("policy_sweep", {"s", "u_star", "u_grid"});
    double min_above = 1.0;
    const auto sweep_points = static_cast<std::size_t>(t.get_int("sweep", "points", 401));
    for (std::size_t i = 0; i < sweep_points; ++i) {
        const double s = 4.0 * thresh * static_cast<double>(i) / static_cast<double>(sweep_points - 1);
        const double us = optimal_u(s, sweep);
        sw_tab.add_row({s, us, grid_oracle_u(s, sweep, step)});
        if (s >= thresh) min_above = std::min(min_above, us);
    }
    r.tables.push_back(std::move(sw_tab));

    FeedbackPolicy ode;
    ode.sigma_tr = t.get_double("ode", "sigma", 1.0);
    ode.B = static_cast<std::size_t>(t.get_int("ode", "B", 10));
    ode.alpha = t.get_double("ode", "alpha", 1.0);
    ode.K = static_cast<unsigned>(t.get_int("ode", "K", 5));
    ode.eta = t.get_double("ode", "eta", 0.01);
    const LossOdeState st{t.get_double("ode", "s0", 1.0), ode.alpha, ode.sigma_tr, ode.K, ode.eta, ode.beta(), false};
    const double T = t.get_double("ode", "T", 3.0);
    const double dt = t.get_double("ode", "dt", 1e-3);
    CsvTable ode_tab("policy_ode", {"policy", "u", "terminal_s"});
    const double s_fb = loss_ode_integrate(st, [&](double, double s) { return optimal_u(std::max(s, 0.0), ode); }, T, dt).back();
    ode_tab.add_row({std::string("feedback"), std::numeric_limits<double>::quiet_NaN(), s_fb});
    double best_const = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 10; ++k) {
        const double u = 0.1 * k;
        const double s_c = loss_ode_integrate(st, [u](double, double) { return u; }, T, dt).back();
        ode_tab.add_row({std::string("constant"), u, s_c});
        best_const = std::min(best_const, s_c);
    }
    r.tables.push_back(std::move(ode_tab));

    r.metric("max_abs_diff", max_diff);
    r.metric("sweep_min_u_above_threshold", min_above);
    r.metric("ode_terminal_feedback", s_fb);
    r.metric("ode_terminal_best_constant", best_const);
    const double tol = t.get_double("accept", "oracle_tol", 1e-3);
    r.check("oracle_match", max_diff <= tol, "max |u* - grid| = " + detail::fmt(max_diff) + " <= " + detail::fmt(tol));
    r.check("sweep_saturates", min_above == 1.0, "min u* for s >= 2 sigma / B = " + detail::fmt(min_above));
    r.check("ode_feedback_optimal", s_fb <= best_const + 1e-10,
            "feedback " + detail::fmt(s_fb) + " vs best constant " + detail::fmt(best_const));
    detail::finish(r, c, sw);
    return r;
}

// Three schemes per seed: adversarial with feedback u, adversarial with u = 1, SGD.
inline ExperimentReport run_linreg_control(const ExperimentConfig& c)
{
    detail::Stopwatch sw;
    const auto seeds = static_cast<std::size_t>(c.tree.get_int("linreg", "seeds", 20));
    const double frac = c.tree.get_double("linreg", "terminal_fraction", 0.25);
    const TrainConfig& cfg = c.train;
    const std::size_t n = cfg.n_steps();
    const std::size_t q0 = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - frac)));
    ControllerOptions opt;
    if (c.tree.get_string("linreg", "s_reference", "excess") == "raw") opt.reference = LossReference::raw;

    struct SeedResult {
        std::array<std::vector<double>, 3> curves;
        std::vector<double> u;
        std::array<double, 3> mean{}, var{};
    };
    std::vector<SeedResult> res(seeds);
    parallel_for_replications(
        seeds,
        [&](std::size_t i) {
            RngStream irng = rng_substream(c.seed, streams::at(2, i));
            const ModelInstance inst = build_model(c.tree, irng);
            const FeedbackPolicy fb = feedback_policy_for(inst.model, cfg);
            Monitors mon;
            mon.record_thetas = false;
            const RngStream batches = rng_substream(c.seed, streams::at(3, i));
            RngStream r0 = batches, r1 = batches, r2 = batches;
            const TrajectoryRecord a = controlled_train(inst.model, inst.theta0, cfg, fb, r0, mon, opt);
            const TrajectoryRecord b = train(inst.model, inst.theta0, cfg, Algorithm::adversarial, r1, mon);
            const TrajectoryRecord s = train(inst.model, inst.theta0, cfg, Algorithm::sgd, r2, mon);
            SeedResult& out = res[i];
            out.curves = {a.losses, b.losses, s.losses};
            out.u = a.u_factors;
            for (int k = 0; k < 3; ++k) {
                RunningStats rs;
                for (std::size_t j = q0; j <= n; ++j) rs.push(out.curves[k][j]);
                out.mean[k] = rs.mean();
                // Population variance over the window.
                out.var[k] = rs.variance() * static_cast<double>(rs.count() - 1) / static_cast<double>(rs.count());
            }
        },
        c.threads);

    const std::array<std::string, 3> names{"adaptive", "adversarial", "sgd"};
    ExperimentReport r;
    CsvTable curves("linreg_curves", {"iteration", "t", "adaptive_mean", "adaptive_std", "adversarial_mean", "adversarial_std",
                                      "sgd_mean", "sgd_std", "u_mean"});
    for (std::size_t j = 0; j <= n; ++j) {
        std::array<RunningStats, 3> st;
        RunningStats us;
        for (const auto& sr : res) {
            for (int k = 0; k < 3; ++k) st[k].push(sr.curves[k][j]);
            us.push(sr.u[j]);
        }
        curves.add_row({static_cast<long long>(j), static_cast<double>(j) * cfg.eta, st[0].mean(), st[0].stddev(), st[1].mean(),
                        st[1].stddev(), st[2].mean(), st[2].stddev(), us.mean()});
    }
    r.tables.push_back(std::move(curves));
    CsvTable per_seed("linreg_seeds", {"seed_index", "scheme", "terminal_mean", "terminal_var"});
    std::size_t wins = 0;
    std::array<double, 3> avg{};
    for (std::size_t i = 0; i < seeds; ++i) {
        for (int k = 0; k < 3; ++k) {
            per_seed.add_row({static_cast<long long>(i), names[k], res[i].mean[k], res[i].var[k]});
            avg[k] += res[i].mean[k] / static_cast<double>(seeds);
        }
        if (res[i].var[0] < res[i].var[1] && res[i].var[0] < res[i].var[2]) ++wins;
    }
    r.tables.push_back(std::move(per_seed));
    const double win_frac = static_cast<double>(wins) / static_cast<double>(seeds);
    r.metric("seeds", static_cast<double>(seeds));
    r.metric("fraction_adaptive_var_smallest", win_frac);
    r.metric("terminal_mean_adaptive", avg[0]);
    r.metric("terminal_mean_adversarial", avg[1]);
    r.metric("terminal_mean_sgd", avg[2]);
    const double need = c.tree.get_double("accept", "win_fraction", 0.8);
    r.check("adaptive_most_stable", win_frac >= need, "fraction " + detail::fmt(win_frac) + " >= " + detail::fmt(need));
    r.check("adaptive_mean_not_worse", avg[0] <= avg[1],
            "adaptive " + detail::fmt(avg[0]) + " <= adversarial " + detail::fmt(avg[1]));
    detail::finish(r, c, sw);
    return r;
}

// Robustness criterion E‖∇ₓL‖² along SGD and adversarial training over many seeds.
inline ExperimentReport run_logistic_robustness(const ExperimentConfig& c)
{
    detail::Stopwatch sw;
    const ConfigTree& t = c.tree;
    const auto seeds = static_cast<std::size_t>(t.get_int("logistic", "seeds", 50));
    const auto every = static_cast<std::size_t>(t.get_int("logistic", "record_every", 50));
    const auto n_eval = static_cast<std::size_t>(t.get_int("logistic", "n_eval", 3000));
    const auto n_test = static_cast<std::size_t>(t.get_int("logistic", "n_test", 10000));
    const TrainConfig& cfg = c.train;

    struct SeedResult {
        std::array<std::vector<double>, 2> crit;
        std::array<double, 2> acc{};
    };
    std::vector<SeedResult> res(seeds);
    parallel_for_replications(
        seeds,
        [&](std::size_t i) {
            RngStream irng = rng_substream(c.seed, streams::at(2, i));
            const ModelInstance inst = build_model(t, irng);
            const auto& lm = std::get<LogisticModel>(inst.model);
            // Fixed evaluation sample per seed: the criterion is estimated on the same points every time.
            RngStream erng = rng_substream(c.seed, streams::at(4, i));
            const Batch eval = sample_batch(inst.model, n_eval, erng);
            auto criterion = [&](const Vector& th) {
                double acc = 0.0;
                const double t2 = th.squaredNorm();
                for (Eigen::Index j = 0; j < eval.x.cols(); ++j) {
                    const double cc = detail::sigmoid(lm.bias + th.dot(eval.x.col(j))) - eval.y[j];
                    acc += cc * cc * t2;
                }
                return acc / static_cast<double>(eval.x.cols());
            };
            RngStream trng = rng_substream(c.seed, streams::at(5, i));
            const Batch test = sample_batch(inst.model, n_test, trng);
            auto accuracy = [&](const Vector& th) {
                std::size_t ok = 0;
                for (Eigen::Index j = 0; j < test.x.cols(); ++j) {
                    const bool pred = detail::sigmoid(lm.bias + th.dot(test.x.col(j))) > 0.5;
                    ok += pred == (test.y[j] == 1.0);
                }
                return static_cast<double>(ok) / static_cast<double>(test.x.cols());
            };
            Monitors mon;
            mon.record_thetas = true;
            mon.stride = every;
            mon.loss = criterion;
            const RngStream batches = rng_substream(c.seed, streams::at(3, i));
            RngStream rs = batches, ra = batches;
            const TrajectoryRecord s = train(inst.model, inst.theta0, cfg, Algorithm::sgd, rs, mon);
            const TrajectoryRecord a = train(inst.model, inst.theta0, cfg, Algorithm::adversarial, ra, mon);
            res[i].crit = {s.losses, a.losses};
            res[i].acc = {accuracy(s.thetas.back()), accuracy(a.thetas.back())};
        },
        c.threads);

    ExperimentReport r;
    const std::size_t npts = res.front().crit[0].size();
    CsvTable curves("logistic_curves", {"iteration", "t", "sgd_mean", "sgd_std", "adversarial_mean", "adversarial_std"});
    std::vector<double> ms(npts), ma(npts), pooled(npts);
    const std::size_t n = cfg.n_steps();
    for (std::size_t j = 0; j < npts; ++j) {
        RunningStats s, a;
        for (const auto& sr : res) {
            s.push(sr.crit[0][j]);
            a.push(sr.crit[1][j]);
        }
        ms[j] = s.mean();
        ma[j] = a.mean();
        pooled[j] = std::sqrt(0.5 * (s.variance() + a.variance()));
        const std::size_t it = std::min(j * every, n);
        curves.add_row({static_cast<long long>(it), static_cast<double>(it) * cfg.eta, s.mean(), s.stddev(), a.mean(), a.stddev()});
    }
    r.tables.push_back(std::move(curves));
    CsvTable acc_tab("logistic_accuracy", {"seed_index", "sgd_accuracy", "adversarial_accuracy"});
    RunningStats acc_s, acc_a;
    for (std::size_t i = 0; i < seeds; ++i) {
        acc_tab.add_row({static_cast<long long>(i), res[i].acc[0], res[i].acc[1]});
        acc_s.push(res[i].acc[0]);
        acc_a.push(res[i].acc[1]);
    }
    r.tables.push_back(std::move(acc_tab));

    double first_half_min = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < npts / 2; ++j) first_half_min = std::min(first_half_min, ms[j]);
    // Largest rise of the adversarial mean above its running minimum.
    double rise = 0.0, run_min = ma[0];
    for (double v : ma) {
        run_min = std::min(run_min, v);
        rise = std::max(rise, v - run_min);
    }
    double pooled_avg = 0.0;
    for (double v : pooled) pooled_avg += v / static_cast<double>(npts);

    r.metric("terminal_criterion_sgd", ms.back());
    r.metric("terminal_criterion_adversarial", ma.back());
    r.metric("sgd_first_half_min", first_half_min);
    r.metric("adversarial_max_rise", rise);
    r.metric("pooled_std", pooled_avg);
    r.metric("accuracy_sgd", acc_s.mean());
    r.metric("accuracy_adversarial", acc_a.mean());
    const double tol = t.get_double("accept", "accuracy_tol", 0.08);
    const double tgt_s = t.get_double("accept", "accuracy_sgd", 0.84);
    const double tgt_a = t.get_double("accept", "accuracy_adversarial", 0.78);
    r.check("adversarial_more_robust", ma.back() < ms.back(),
            "terminal adversarial " + detail::fmt(ma.back()) + " < SGD " + detail::fmt(ms.back()));
    r.check("sgd_non_monotone", first_half_min < ms.back(),
            "SGD first-half min " + detail::fmt(first_half_min) + " < terminal " + detail::fmt(ms.back()));
    r.check("adversarial_non_increasing", rise <= pooled_avg,
            "max rise " + detail::fmt(rise) + " <= pooled std " + detail::fmt(pooled_avg));
    r.check("accuracy_sgd_band", std::abs(acc_s.mean() - tgt_s) <= tol, "SGD accuracy " + detail::fmt(acc_s.mean()));
    r.check("accuracy_adversarial_band", std::abs(acc_a.mean() - tgt_a) <= tol,
            "adversarial accuracy " + detail::fmt(acc_a.mean()));
    r.check("accuracy_order", acc_s.mean() >= acc_a.mean(),
            "SGD " + detail::fmt(acc_s.mean()) + " >= adversarial " + detail::fmt(acc_a.mean()));
    detail::finish(r, c, sw);
    return r;
}

inline ExperimentReport run_experiment(const ExperimentConfig& c)
{
    if (c.experiment == "order-check") return run_order_check(c);
    if (c.experiment == "moment-check") return run_moment_check(c);
    if (c.experiment == "quad-decay") return run_quad_decay(c);
    if (c.experiment == "stationary-check") return run_stationary_check(c);
    if (c.experiment == "policy-check") return run_policy_check(c);
    if (c.experiment == "linreg-control") return run_linreg_control(c);
    if (c.experiment == "logistic-robustness") return run_logistic_robustness(c);
    throw ConfigError(ConfigError::Kind::unknown_experiment, "unknown experiment '" + c.experiment + "'");
}

} // namespace advsde

#endif // ADVSDE_EXPERIMENTS_HPP
