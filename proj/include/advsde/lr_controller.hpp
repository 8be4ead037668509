#ifndef ADVSDE_LR_CONTROLLER_HPP
#define ADVSDE_LR_CONTROLLER_HPP

#include "sde.hpp"

namespace advsde {

struct ConstantPolicy {
    double u = 1.0;
};

struct FeedbackPolicy {
    double alpha = 1.0;
    double sigma_tr = 1.0;
    std::size_t B = 1;
    unsigned K = 0;
    double eta = 0.01;

    double beta() const { return 2.0 * static_cast<double>(B) / eta; }
    void validate() const
    {
        if (!(alpha > 0.0) || !(sigma_tr > 0.0) || B == 0 || !(eta > 0.0))
            throw std::invalid_argument("FeedbackPolicy: need alpha > 0, sigma_tr > 0, B >= 1, eta > 0");
    }
};

using LrPolicy = std::variant<ConstantPolicy, FeedbackPolicy>;

// u*(s) = min{1, (1+2Kη)sB / ((2σ − sB)αη)} for s < 2σ/B, else 1.
inline double optimal_u(double s, const FeedbackPolicy& p)
{
    if (!(s >= 0.0)) throw std::invalid_argument("optimal_u: s must be non-negative");
    const double sb = s * static_cast<double>(p.B);
    if (sb >= 2.0 * p.sigma_tr) return 1.0;
    const double u = (1.0 + 2.0 * p.K * p.eta) * sb / ((2.0 * p.sigma_tr - sb) * p.alpha * p.eta);
    return std::clamp(u, 0.0, 1.0);
}

// Instantaneous drift of s under control u.
inline double control_objective(double s, double u, const FeedbackPolicy& p)
{
    LossOdeState st{s, p.alpha, p.sigma_tr, p.K, p.eta, p.beta(), false};
    return st.rhs(s, u);
}

// argmin of the drift over {0, step, 2·step, ..., 1}.
inline double grid_oracle_u(double s, const FeedbackPolicy& p, double grid_step = 1e-3)
{
    if (!(grid_step > 0.0 && grid_step <= 0.5)) throw std::invalid_argument("grid_oracle_u: grid_step must lie in (0, 0.5]");
    const auto n = static_cast<std::size_t>(std::floor(1.0 / grid_step + 1e-9));
    double best_u = 0.0;
    double best = control_objective(s, 0.0, p);
    for (std::size_t i = 1; i <= n + 1; ++i) {
        const double u = std::min(1.0, static_cast<double>(i) * grid_step);
        const double v = control_objective(s, u, p);
        if (v < best) {
            best = v;
            best_u = u;
        }
        if (u >= 1.0) break;
    }
    return best_u;
}

enum class LossSource { analytic, minibatch_mc };

struct LossState {
    double s = 0.0;
    LossSource source = LossSource::analytic;
    double stderr_ = 0.0;
};

struct EstimateMode {
    LossSource source = LossSource::analytic;
    std::size_t B = 10;
};

// Minibatch mode averages L(θ, x̂) shifted by the θ-independent offset g − E L
// (½Tr H for the quadratic loss, 0 for linear regression), so both modes target g.
inline LossState estimate_s(const LossModel& m, const Vector& theta, const EstimateMode& mode, RngStream& rng)
{
    if (mode.source == LossSource::analytic) return {expected_loss(m, theta), LossSource::analytic, 0.0};
    if (mode.B < 2) throw std::invalid_argument("estimate_s: minibatch mode needs B >= 2");
    double offset = 0.0;
    if (const auto* q = std::get_if<QuadraticModel>(&m)) offset = 0.5 * q->H.trace();
    const Batch b = sample_batch(m, mode.B, rng);
    RunningStats rs;
    for (std::size_t j = 0; j < b.size(); ++j) rs.push(loss(m, theta, b.point(j)) + offset);
    return {rs.mean(), LossSource::minibatch_mc, rs.stderr_mean()};
}

// σ entering the feedback law: Tr(AᵀΣA·AᵀA)/α², which is Tr Σ when AAᵀ = αI.
inline double controller_sigma(const LinearRegressionModel& l)
{
    if (!l.isotropic_alpha) throw std::invalid_argument("controller_sigma: model has no isotropic_alpha");
    const double a = *l.isotropic_alpha;
    const Matrix ata = l.A.transpose() * l.A;
    return (l.A.transpose() * l.Sigma.matrix() * l.A * ata).trace() / (a * a);
}

inline FeedbackPolicy feedback_policy_for(const LossModel& m, const TrainConfig& cfg)
{
    const auto* l = std::get_if<LinearRegressionModel>(&m);
    if (!l || !l->isotropic_alpha)
        throw std::invalid_argument("feedback policy needs a linear-regression model with AAᵀ = αI or d_θ = 1");
    return FeedbackPolicy{*l->isotropic_alpha, controller_sigma(*l), cfg.B, cfg.K, cfg.eta};
}

// excess: s = g(θ) − min g, the quantity whose dynamics the feedback law optimises.
// raw: s = g(θ).
enum class LossReference { excess, raw };

struct ControllerOptions {
    LossReference reference = LossReference::excess;
    EstimateMode estimate;
};

// Adversarial training with inner and outer rates scaled by u_t.
inline TrajectoryRecord controlled_train(const LossModel& m, const Vector& theta0, const TrainConfig& cfg,
                                         const LrPolicy& policy, RngStream& rng, const Monitors& mon = {},
                                         const ControllerOptions& opt = {})
{
    if (const auto* c = std::get_if<ConstantPolicy>(&policy)) {
        if (!(c->u >= 0.0 && c->u <= 1.0)) throw std::invalid_argument("ConstantPolicy: u must lie in [0, 1]");
        const double u = c->u;
        return train_with_factor(m, theta0, cfg, Algorithm::adversarial, rng, mon,
                                 [u](const Vector&) { return std::optional<double>(u); });
    }
    const auto* l = std::get_if<LinearRegressionModel>(&m);
    if (!l || !l->isotropic_alpha)
        throw std::invalid_argument("controlled_train: feedback policy needs isotropic_alpha (AAᵀ = αI or d_θ = 1)");
    const FeedbackPolicy fb = std::get<FeedbackPolicy>(policy);
    fb.validate();
    const double ref = opt.reference == LossReference::excess ? minimum_expected_loss(m) : 0.0;
    RngStream est_rng(rng.master_seed(), rng.stream_index() ^ 0x5bd1e995ULL << 32);
    return train_with_factor(m, theta0, cfg, Algorithm::adversarial, rng, mon, [&](const Vector& th) {
        const double s = std::max(0.0, estimate_s(m, th, opt.estimate, est_rng).s - ref);
        return std::optional<double>(optimal_u(s, fb));
    });
}

} // namespace advsde

#endif // ADVSDE_LR_CONTROLLER_HPP
