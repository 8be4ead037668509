#ifndef ADVSDE_ADVERSARIAL_HPP
#define ADVSDE_ADVERSARIAL_HPP

#include "loss_models.hpp"

#include <functional>

namespace advsde {

struct TrainConfig {
    double eta = 0.1;
    std::size_t B = 1;
    unsigned K = 0;
    double T = 1.0;
    double lambda = 0.0;
    // Distinct inner rate; outside the analysed regime when set.
    std::optional<double> eta_inner;

    double beta() const { return 2.0 * static_cast<double>(B) / eta; }
    double inner_rate() const { return eta_inner.value_or(eta); }
    std::size_t n_steps() const
    {
        // Guard against T/η landing just below an integer.
        return static_cast<std::size_t>(std::floor(T / eta * (1.0 + 1e-12)));
    }
    void validate() const
    {
        if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("TrainConfig: eta must be positive");
        if (B == 0) throw std::invalid_argument("TrainConfig: B must be positive");
        if (!(T > 0.0)) throw std::invalid_argument("TrainConfig: T must be positive");
        if (!(lambda >= 0.0)) throw std::invalid_argument("TrainConfig: lambda must be non-negative");
        if (eta_inner && !(*eta_inner > 0.0)) throw std::invalid_argument("TrainConfig: eta_inner must be positive");
    }
    // Regime where the SDE approximation is valid: η < min(1, T), equal inner and outer rates.
    bool in_approximation_regime() const { return eta < std::min(1.0, T) && !eta_inner; }
};

enum class Norm { l2, linf };

struct ProjectionSet {
    Norm norm = Norm::l2;
    double epsilon = 1.0;
};

inline Vector project(const Vector& delta, const ProjectionSet& set)
{
    if (!(set.epsilon > 0.0)) throw std::invalid_argument("project: epsilon must be positive");
    if (set.norm == Norm::linf) return delta.cwiseMax(-set.epsilon).cwiseMin(set.epsilon);
    // Rescaling can land a few ulp outside the sphere; treat that band as inside so projection is idempotent.
    const double n = delta.norm();
    if (n <= set.epsilon * (1.0 + 8.0 * std::numeric_limits<double>::epsilon())) return delta;
    return delta * (set.epsilon / n);
}

namespace detail {

inline void check_batch(const Batch& batch, const TrainConfig& cfg)
{
    if (batch.size() != cfg.B) throw std::invalid_argument("batch size does not match cfg.B");
}

} // namespace detail

// K ascent steps on J = L(θ, x̂+δ) − λ‖δ‖² from δ = 0 with learning rate u·η.
// With a projection set: projected ascent on L only (no λ term).
inline Vector inner_ascent(const LossModel& m, const Vector& theta, const Batch& batch, const TrainConfig& cfg,
                           const std::optional<ProjectionSet>& projection = std::nullopt, double u = 1.0,
                           std::vector<Vector>* trace = nullptr)
{
    detail::check_batch(batch, cfg);
    const double rate = u * cfg.inner_rate();
    Vector delta = Vector::Zero(data_dim(m));
    for (unsigned k = 0; k < cfg.K; ++k) {
        Vector g = batch_grad_x(m, theta, batch, delta);
        if (projection) {
            delta = project(delta + rate * g, *projection);
        } else {
            g -= 2.0 * cfg.lambda * delta;
            delta += rate * g;
        }
        if (trace) trace->push_back(delta);
    }
    return delta;
}

// (Kη/B) Σ ∇ₓL(θ, x̂_j).
inline Vector delta_first_order(const LossModel& m, const Vector& theta, const Batch& batch, const TrainConfig& cfg)
{
    detail::check_batch(batch, cfg);
    const Vector zero = Vector::Zero(data_dim(m));
    return (static_cast<double>(cfg.K) * cfg.inner_rate()) * batch_grad_x(m, theta, batch, zero);
}

inline Vector adversarial_step(const LossModel& m, const Vector& theta, const Batch& batch, const TrainConfig& cfg,
                               const std::optional<ProjectionSet>& projection = std::nullopt, double u = 1.0)
{
    const Vector delta = inner_ascent(m, theta, batch, cfg, projection, u);
    return theta - (u * cfg.eta) * batch_grad_theta(m, theta, batch, delta);
}

inline Vector sgd_step(const LossModel& m, const Vector& theta, const Batch& batch, const TrainConfig& cfg,
                       double u = 1.0)
{
    detail::check_batch(batch, cfg);
    const Vector zero = Vector::Zero(data_dim(m));
    return theta - (u * cfg.eta) * batch_grad_theta(m, theta, batch, zero);
}

enum class Algorithm { adversarial, sgd };

struct TrajectoryRecord {
    std::vector<std::size_t> times;
    std::vector<Vector> thetas;
    std::vector<double> losses;
    std::vector<double> robustness;
    std::vector<double> u_factors;
};

struct Monitors {
    // Defaults to the closed-form g when empty; NaN for models without one.
    std::function<double(const Vector&)> loss;
    std::function<double(const Vector&)> robustness;
    bool record_thetas = true;
    std::size_t stride = 1;
    std::optional<ProjectionSet> projection;
    // Fixed-dataset mode: batches resampled with replacement from these points.
    const Batch* dataset = nullptr;
};

namespace detail {

inline std::function<double(const Vector&)> default_loss_monitor(const LossModel& m)
{
    if (has_closed_form(m)) return [&m](const Vector& th) { return expected_loss(m, th); };
    return [](const Vector&) { return std::numeric_limits<double>::quiet_NaN(); };
}

class Recorder {
public:
    Recorder(const LossModel& m, const Monitors& mon)
        : mon_(mon), loss_(mon.loss ? mon.loss : default_loss_monitor(m))
    {
        if (mon_.stride == 0) throw std::invalid_argument("Monitors: stride must be positive");
    }

    void record(TrajectoryRecord& rec, std::size_t it, std::size_t last, const Vector& theta,
                std::optional<double> u) const
    {
        if (it % mon_.stride != 0 && it != last) return;
        rec.times.push_back(it);
        if (mon_.record_thetas) rec.thetas.push_back(theta);
        rec.losses.push_back(loss_(theta));
        if (mon_.robustness) rec.robustness.push_back(mon_.robustness(theta));
        if (u) rec.u_factors.push_back(*u);
    }

private:
    const Monitors& mon_;
    std::function<double(const Vector&)> loss_;
};

inline Batch next_batch(const LossModel& m, const TrainConfig& cfg, const Monitors& mon, RngStream& rng)
{
    return mon.dataset ? resample_batch(*mon.dataset, cfg.B, rng) : sample_batch(m, cfg.B, rng);
}

} // namespace detail

// Runs floor(T/η) outer iterations with a fresh batch each step.
// The recorded u factor at iteration t is the one applied in step t → t+1.
template <class UFn>
TrajectoryRecord train_with_factor(const LossModel& m, const Vector& theta0, const TrainConfig& cfg, Algorithm alg,
                                   RngStream& rng, const Monitors& mon, UFn&& u_of)
{
    cfg.validate();
    if (theta0.size() != param_dim(m)) throw std::invalid_argument("train: theta0 dimension mismatch");
    const detail::Recorder rec_fn(m, mon);
    TrajectoryRecord rec;
    Vector theta = theta0;
    const std::size_t n = cfg.n_steps();
    for (std::size_t it = 0; it < n; ++it) {
        const std::optional<double> u = u_of(theta);
        const double uf = u.value_or(1.0);
        rec_fn.record(rec, it, n, theta, u);
        const Batch batch = detail::next_batch(m, cfg, mon, rng);
        theta = alg == Algorithm::adversarial ? adversarial_step(m, theta, batch, cfg, mon.projection, uf)
                                              : sgd_step(m, theta, batch, cfg, uf);
        if (!theta.allFinite())
            throw std::runtime_error("train: non-finite parameters at iteration " + std::to_string(it + 1));
    }
    const std::optional<double> u_last = u_of(theta);
    rec_fn.record(rec, n, n, theta, u_last);
    return rec;
}

inline TrajectoryRecord train(const LossModel& m, const Vector& theta0, const TrainConfig& cfg, Algorithm alg,
                              RngStream& rng, const Monitors& mon = {})
{
    return train_with_factor(m, theta0, cfg, alg, rng, mon, [](const Vector&) { return std::optional<double>{}; });
}

// Final iterate only, no monitoring.
inline Vector train_final(const LossModel& m, const Vector& theta0, const TrainConfig& cfg, Algorithm alg,
                          RngStream& rng)
{
    Vector theta = theta0;
    const std::size_t n = cfg.n_steps();
    for (std::size_t it = 0; it < n; ++it) {
        const Batch batch = sample_batch(m, cfg.B, rng);
        theta = alg == Algorithm::adversarial ? adversarial_step(m, theta, batch, cfg) : sgd_step(m, theta, batch, cfg);
    }
    return theta;
}

enum class MomentSource { discrete_mc, discrete_analytic, sde_exact, sde_mc };

struct MomentPair {
    Vector first;
    Matrix second;
    MomentSource provenance = MomentSource::discrete_analytic;
    std::optional<Vector> first_stderr;
    std::optional<Matrix> second_stderr;
};

namespace detail {

// Welford accumulation of D and DDᵀ over independent samples.
class MomentAccumulator {
public:
    explicit MomentAccumulator(Eigen::Index d)
        : mean1_(Vector::Zero(d)), m2_1_(Vector::Zero(d)), mean2_(Matrix::Zero(d, d)), m2_2_(Matrix::Zero(d, d))
    {
    }

    void push(const Vector& first, const Matrix& second)
    {
        ++n_;
        const double inv = 1.0 / static_cast<double>(n_);
        const Vector d1 = first - mean1_;
        mean1_ += d1 * inv;
        m2_1_ += d1.cwiseProduct(first - mean1_);
        const Matrix d2 = second - mean2_;
        mean2_ += d2 * inv;
        m2_2_ += d2.cwiseProduct(second - mean2_);
    }

    MomentPair result(MomentSource src) const
    {
        const double n = static_cast<double>(n_);
        MomentPair out;
        out.first = mean1_;
        out.second = 0.5 * (mean2_ + mean2_.transpose());
        out.provenance = src;
        out.first_stderr = (m2_1_ / ((n - 1.0) * n)).cwiseSqrt();
        out.second_stderr = (m2_2_ / ((n - 1.0) * n)).cwiseSqrt();
        return out;
    }

private:
    std::size_t n_ = 0;
    Vector mean1_, m2_1_;
    Matrix mean2_, m2_2_;
};

inline std::optional<Vector> gaussian_center(const LossModel& m)
{
    if (std::holds_alternative<QuadraticModel>(m)) return Vector::Zero(data_dim(m));
    if (const auto* l = std::get_if<LinearRegressionModel>(&m)) return l->mu;
    return std::nullopt;
}

} // namespace detail

// Monte Carlo moments of D = θ₁ − θ₀. Gaussian models use antithetic batch pairs
// (x̂ and its reflection through the mean); one sample = one pair average.
inline MomentPair one_step_moments_discrete(const LossModel& m, const Vector& theta0, const TrainConfig& cfg,
                                            std::size_t n_mc, RngStream& rng)
{
    if (n_mc < 2) throw std::invalid_argument("one_step_moments_discrete: n_mc must be at least 2");
    cfg.validate();
    detail::MomentAccumulator acc(theta0.size());
    const auto center = detail::gaussian_center(m);
    if (center) {
        const std::size_t pairs = std::max<std::size_t>(2, n_mc / 2);
        for (std::size_t i = 0; i < pairs; ++i) {
            Batch a = sample_batch(m, cfg.B, rng);
            Batch b = a;
            b.x = (-a.x).colwise() + 2.0 * *center;
            const Vector da = adversarial_step(m, theta0, a, cfg) - theta0;
            const Vector db = adversarial_step(m, theta0, b, cfg) - theta0;
            acc.push(0.5 * (da + db), 0.5 * (da * da.transpose() + db * db.transpose()));
        }
    } else {
        for (std::size_t i = 0; i < n_mc; ++i) {
            const Batch a = sample_batch(m, cfg.B, rng);
            const Vector da = adversarial_step(m, theta0, a, cfg) - theta0;
            acc.push(da, da * da.transpose());
        }
    }
    return acc.result(MomentSource::discrete_mc);
}

// Leading-order one-step moments without the O(η³) remainder:
//   E[D]   = −η∇g − (Kη²/2)∇‖D‖² − (Kη²/2B)(∇Hstat − ∇‖D‖²)
//   E[DDᵀ] = η²∇g∇gᵀ + (η²/B) Var(∇_θL)
inline MomentPair one_step_moments_analytic(const LossModel& m, const Vector& theta0, const TrainConfig& cfg)
{
    if (!has_closed_form(m))
        throw std::invalid_argument("one_step_moments_analytic: model has no closed-form statistics");
    cfg.validate();
    const PotentialDerivatives pd = potential_derivatives(m, theta0);
    const double eta = cfg.eta;
    const double K = static_cast<double>(cfg.K);
    const double B = static_cast<double>(cfg.B);
    MomentPair out;
    out.first = -eta * pd.grad_g - 0.5 * K * eta * eta * pd.grad_D2 - 0.5 * K * eta * eta / B * pd.grad_gap;
    out.second = eta * eta * pd.grad_g * pd.grad_g.transpose() + eta * eta / B * sigma_theta_closed_form(m);
    out.provenance = MomentSource::discrete_analytic;
    return out;
}

} // namespace advsde

#endif // ADVSDE_ADVERSARIAL_HPP
