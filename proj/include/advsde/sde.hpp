#ifndef ADVSDE_SDE_HPP
#define ADVSDE_SDE_HPP

#include "adversarial.hpp"

#include <memory>

namespace advsde {

enum class CoefficientKind { adversarial, sgd, controlled, linear_paper_printed };
enum class Convention { general_formula, paper_printed };

// dΘ = (b0 + η b1) dt + σ dW.
struct SdeCoefficients {
    std::function<Vector(const Vector&)> b0;
    std::function<Vector(const Vector&)> b1;
    std::function<Matrix(const Vector&)> sigma;
    CoefficientKind kind = CoefficientKind::adversarial;
    double eta = 0.0;
    double u = 1.0;
    // Set for controlled coefficients: same family at another u.
    std::function<SdeCoefficients(double)> with_u;

    Vector drift(const Vector& theta) const { return b0(theta) + eta * b1(theta); }
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

namespace detail {

inline std::shared_ptr<const LossModel> require_closed_form(const LossModel& m, const char* what)
{
    if (!has_closed_form(m)) throw std::invalid_argument(std::string(what) + ": model has no closed-form statistics");
    return std::make_shared<const LossModel>(m);
}

// Σ_θ is θ-independent for both closed-form models, so √(2/β)Σ_θ^{1/2} is computed once.
inline Matrix unit_diffusion(const LossModel& m, const TrainConfig& cfg)
{
    return std::sqrt(2.0 / cfg.beta()) * psd_sqrt(sigma_theta_closed_form(m));
}

inline std::function<Matrix(const Vector&)> constant_matrix(Matrix s)
{
    return [s = std::move(s)](const Vector&) { return s; };
}

} // namespace detail

// b0 = −∇G, b1 = −(K/2)∇‖D‖² − ¼∇‖∇G‖², σ = √(2/β) Var(∇_θL)^{1/2}.
inline SdeCoefficients coefficients_adversarial(const LossModel& m, const TrainConfig& cfg)
{
    const auto mp = detail::require_closed_form(m, "coefficients_adversarial");
    cfg.validate();
    const double kb = static_cast<double>(cfg.K) / cfg.beta();
    const double half_k = 0.5 * static_cast<double>(cfg.K);
    SdeCoefficients c;
    c.kind = cfg.K == 0 ? CoefficientKind::sgd : CoefficientKind::adversarial;
    c.eta = cfg.eta;
    c.b0 = [mp, kb](const Vector& th) -> Vector {
        const PotentialDerivatives pd = potential_derivatives(*mp, th);
        return -(pd.grad_g + kb * pd.grad_gap);
    };
    c.b1 = [mp, kb, half_k](const Vector& th) -> Vector {
        const PotentialDerivatives pd = potential_derivatives(*mp, th);
        const Vector grad_G = pd.grad_g + kb * pd.grad_gap;
        const Matrix hess_G = pd.hess_g + kb * pd.hess_gap;
        return -half_k * pd.grad_D2 - 0.5 * (hess_G * grad_G);
    };
    c.sigma = detail::constant_matrix(detail::unit_diffusion(m, cfg));
    return c;
}

// b0 = −∇g, b1 = −¼∇‖∇g‖².
inline SdeCoefficients coefficients_sgd(const LossModel& m, const TrainConfig& cfg)
{
    const auto mp = detail::require_closed_form(m, "coefficients_sgd");
    cfg.validate();
    SdeCoefficients c;
    c.kind = CoefficientKind::sgd;
    c.eta = cfg.eta;
    c.b0 = [mp](const Vector& th) -> Vector { return -potential_derivatives(*mp, th).grad_g; };
    c.b1 = [mp](const Vector& th) -> Vector {
        const PotentialDerivatives pd = potential_derivatives(*mp, th);
        return -0.5 * (pd.hess_g * pd.grad_g);
    };
    c.sigma = detail::constant_matrix(detail::unit_diffusion(m, cfg));
    return c;
}

namespace detail {

inline SdeCoefficients controlled_member(std::shared_ptr<const LossModel> mp, const TrainConfig& cfg,
                                         std::shared_ptr<const Matrix> unit_sigma, double u, Convention conv)
{
    if (!(u >= 0.0 && u <= 1.0)) throw std::invalid_argument("coefficients_controlled: u must lie in [0, 1]");
    SdeCoefficients c;
    c.eta = cfg.eta;
    c.u = u;
    c.sigma = constant_matrix(u * *unit_sigma);
    c.with_u = [mp, cfg, unit_sigma, conv](double v) { return controlled_member(mp, cfg, unit_sigma, v, conv); };
    const double K = static_cast<double>(cfg.K);
    if (conv == Convention::paper_printed) {
        const auto* l = std::get_if<LinearRegressionModel>(mp.get());
        if (!l) throw std::invalid_argument("coefficients_controlled: paper_printed convention needs linear regression");
        c.kind = CoefficientKind::linear_paper_printed;
        c.b0 = [mp, l, u](const Vector& th) -> Vector { return -2.0 * u * (l->A.transpose() * (l->A * th - l->mu)); };
        c.b1 = [mp, l, u, K](const Vector& th) -> Vector {
            const Vector v = l->A.transpose() * (l->A * th - l->mu);
            return -(u * u * (l->A.transpose() * (l->A * v)) + 4.0 * K * u * v);
        };
        return c;
    }
    c.kind = CoefficientKind::controlled;
    const double kb = K / cfg.beta();
    c.b0 = [mp, u, kb](const Vector& th) -> Vector {
        const PotentialDerivatives pd = potential_derivatives(*mp, th);
        return -(u * pd.grad_g + kb * u * u * pd.grad_gap);
    };
    c.b1 = [mp, u, kb, K](const Vector& th) -> Vector {
        const PotentialDerivatives pd = potential_derivatives(*mp, th);
        const Vector b0 = -(u * pd.grad_g + kb * u * u * pd.grad_gap);
        const Matrix hess = u * pd.hess_g + kb * u * u * pd.hess_gap;
        // ∇‖b0‖² = −2·hess·b0
        return -0.5 * K * u * u * pd.grad_D2 + 0.5 * (hess * b0);
    };
    return c;
}

} // namespace detail

// Coefficients for the loss scaled by u.
// general_formula: b0 = −∇[ug + Kβ⁻¹u²·gap], b1 = −(K/2)u²∇‖D‖² − ¼∇‖b0‖², σ scaled by u.
// paper_printed (linear regression): b0 + ηb1 = −(u(2+4Kη)I + u²ηAᵀA)Aᵀ(Aθ−μ), σ scaled by u.
inline SdeCoefficients coefficients_controlled(const LossModel& m, const TrainConfig& cfg, double u,
                                               Convention conv = Convention::paper_printed)
{
    auto mp = detail::require_closed_form(m, "coefficients_controlled");
    cfg.validate();
    auto unit = std::make_shared<const Matrix>(detail::unit_diffusion(m, cfg));
    return detail::controlled_member(std::move(mp), cfg, std::move(unit), u, conv);
}

// Brownian increments N(0, dt·I).
class NoiseStream {
public:
    explicit NoiseStream(RngStream rng) : rng_(std::move(rng)) {}
    Vector increment(Eigen::Index dim, double dt) { return std::sqrt(dt) * rng_.normal_vector(dim); }
    RngStream& rng() { return rng_; }

private:
    RngStream rng_;
};

struct SdePath {
    std::vector<double> times;
    std::vector<Vector> states;
};

// Θ_{k+1} = Θ_k + drift(Θ_k)·dt + σ(Θ_k)·ΔW_k. Records every `stride` steps and the end point.
// With a u_schedule (t, Θ) → u, controlled coefficients are re-selected each step.
inline SdePath euler_maruyama(const SdeCoefficients& coeffs, const Vector& theta0, double T, double dt,
                              NoiseStream& noise, const std::function<double(double, const Vector&)>& u_schedule = {},
                              std::size_t stride = 1)
{
    if (!(dt > 0.0)) throw std::invalid_argument("euler_maruyama: dt must be positive");
    if (!(T >= 0.0)) throw std::invalid_argument("euler_maruyama: T must be non-negative");
    if (stride == 0) throw std::invalid_argument("euler_maruyama: stride must be positive");
    if (u_schedule && !coeffs.with_u)
        throw std::invalid_argument("euler_maruyama: u_schedule needs controlled coefficients");
    const auto n = static_cast<std::size_t>(std::llround(std::ceil(T / dt * (1.0 - 1e-12))));
    SdePath path;
    Vector th = theta0;
    path.times.push_back(0.0);
    path.states.push_back(th);
    double t = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double h = std::min(dt, T - t);
        const Vector dw = noise.increment(th.size(), h);
        if (u_schedule) {
            const SdeCoefficients c = coeffs.with_u(u_schedule(t, th));
            th = th + c.drift(th) * h + c.sigma(th) * dw;
        } else {
            th = th + coeffs.drift(th) * h + coeffs.sigma(th) * dw;
        }
        t = (k + 1 == n) ? T : t + h;
        if (!th.allFinite())
            throw DivergenceError("euler_maruyama: state diverged at step " + std::to_string(k + 1), k + 1);
        if ((k + 1) % stride == 0 || k + 1 == n) {
            path.times.push_back(t);
            path.states.push_back(th);
        }
    }
    return path;
}

// Exact OU solution for the quadratic model: dΘ = −ĤΘ dt + √(2/β) H dW, Ĥ = H + (K+½)ηH².
class OuSolution {
public:
    OuSolution(const SpdMatrix& H, unsigned K, double eta, double beta)
        : H_(H), K_(K), eta_(eta), beta_(beta)
    {
        if (!(beta > 0.0)) throw std::invalid_argument("OuSolution: beta must be positive");
        if (!(eta >= 0.0)) throw std::invalid_argument("OuSolution: eta must be non-negative");
        Eigen::SelfAdjointEigenSolver<Matrix> es(H.matrix());
        Q_ = es.eigenvectors();
        lambda_ = es.eigenvalues();
        lambda_hat_ = lambda_ + (static_cast<double>(K) + 0.5) * eta * lambda_.cwiseProduct(lambda_);
        Hhat_ = SpdMatrix(Q_ * lambda_hat_.asDiagonal() * Q_.transpose());
    }

    OuSolution(const SpdMatrix& H, const TrainConfig& cfg) : OuSolution(H, cfg.K, cfg.eta, cfg.beta()) {}

    const SpdMatrix& H() const { return H_; }
    const SpdMatrix& Hhat() const { return Hhat_; }
    const Matrix& eigenvectors() const { return Q_; }
    const Vector& eigenvalues() const { return lambda_; }
    const Vector& eigenvalues_hat() const { return lambda_hat_; }
    double beta() const { return beta_; }
    double eta() const { return eta_; }
    unsigned K() const { return K_; }

    Vector mean(const Vector& theta0, double t) const
    {
        check_t(t);
        const Vector c = Q_.transpose() * theta0;
        return Q_ * (-lambda_hat_ * t).array().exp().matrix().cwiseProduct(c);
    }

    // Per-eigenmode variance (λ²/β)(1 − e^{−2λ̂t})/λ̂; the β = ∞ limit is zero.
    Vector mode_variance(double t) const
    {
        check_t(t);
        Vector v(lambda_.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double lh = lambda_hat_[i];
            v[i] = lambda_[i] * lambda_[i] / beta_ * (-std::expm1(-2.0 * lh * t)) / lh;
        }
        return v;
    }

    Matrix covariance(double t) const { return Q_ * mode_variance(t).asDiagonal() * Q_.transpose(); }

private:
    static void check_t(double t)
    {
        if (!(t >= 0.0)) throw std::invalid_argument("OuSolution: t must be non-negative");
    }

    SpdMatrix H_;
    SpdMatrix Hhat_;
    unsigned K_;
    double eta_;
    double beta_;
    Matrix Q_;
    Vector lambda_;
    Vector lambda_hat_;
};

inline Vector ou_exact_sample(const OuSolution& ou, const Vector& theta0, double t, NoiseStream& noise)
{
    const Vector mean = ou.mean(theta0, t);
    const Vector sd = ou.mode_variance(t).cwiseSqrt();
    const Vector z = noise.rng().normal_vector(theta0.size());
    return mean + ou.eigenvectors() * sd.cwiseProduct(z);
}

// E g(Θ_t) = ½θ₀ᵀHe^{−2Ĥt}θ₀ + β⁻¹Σ λ²(1 − e^{−(2λ+(2K+1)ηλ²)t})/(2 + (2K+1)ηλ).
inline double quad_expected_loss(const OuSolution& ou, const Vector& theta0, double t)
{
    if (!(t >= 0.0)) throw std::invalid_argument("quad_expected_loss: t must be non-negative");
    const Vector c = ou.eigenvectors().transpose() * theta0;
    const Vector& lam = ou.eigenvalues();
    const double k = 2.0 * ou.K() + 1.0;
    double det = 0.0, noise = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        const double l = lam[i];
        det += 0.5 * l * c[i] * c[i] * std::exp(-2.0 * ou.eigenvalues_hat()[i] * t);
        noise += l * l * (-std::expm1(-(2.0 * l + k * ou.eta() * l * l) * t)) / (2.0 + k * ou.eta() * l);
    }
    return det + noise / ou.beta();
}

// ½θ₀ᵀHe^{−2Ht}θ₀ + β⁻¹Σ (λ²/2)(1 − e^{−2λt}).
inline double quad_expected_loss_sgd(const SpdMatrix& H, double beta, const Vector& theta0, double t)
{
    if (!(t >= 0.0)) throw std::invalid_argument("quad_expected_loss_sgd: t must be non-negative");
    if (!(beta > 0.0)) throw std::invalid_argument("quad_expected_loss_sgd: beta must be positive");
    Eigen::SelfAdjointEigenSolver<Matrix> es(H.matrix());
    const Vector c = es.eigenvectors().transpose() * theta0;
    const Vector& lam = es.eigenvalues();
    double det = 0.0, noise = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        det += 0.5 * lam[i] * c[i] * c[i] * std::exp(-2.0 * lam[i] * t);
        noise += 0.5 * lam[i] * lam[i] * (-std::expm1(-2.0 * lam[i] * t));
    }
    return det + noise / beta;
}

// β⁻¹Σ λ²/(2 + (2K+1)ηλ).
inline double quad_stationary_loss(const OuSolution& ou)
{
    const double k = 2.0 * ou.K() + 1.0;
    double s = 0.0;
    for (double l : ou.eigenvalues()) s += l * l / (2.0 + k * ou.eta() * l);
    return s / ou.beta();
}

// Exact one-step OU moments of D̃ = Θ_η − Θ₀.
inline MomentPair sde_one_step_moments(const OuSolution& ou, const Vector& theta0, double eta)
{
    MomentPair out;
    out.first = ou.mean(theta0, eta) - theta0;
    out.second = out.first * out.first.transpose() + ou.covariance(eta);
    out.provenance = MomentSource::sde_exact;
    return out;
}

// Monte Carlo one-step moments via Euler-Maruyama at step dt.
inline MomentPair sde_one_step_moments(const SdeCoefficients& coeffs, const Vector& theta0, double eta, double dt,
                                       std::size_t n_mc, RngStream& rng)
{
    if (n_mc < 2) throw std::invalid_argument("sde_one_step_moments: n_mc must be at least 2");
    detail::MomentAccumulator acc(theta0.size());
    NoiseStream noise(std::move(rng));
    for (std::size_t i = 0; i < n_mc; ++i) {
        const SdePath p = euler_maruyama(coeffs, theta0, eta, dt, noise, {}, std::numeric_limits<std::size_t>::max());
        const Vector d = p.states.back() - theta0;
        acc.push(d, d * d.transpose());
    }
    rng = std::move(noise.rng());
    return acc.result(MomentSource::sde_mc);
}

// Scalar expected-loss ODE under control u:
//   ds/dt = −2s((2+4Kη)αu + ηα²u²) + (8α²σ/β)u².
// With `centered`, s in the decay term is replaced by s − σ.
struct LossOdeState {
    double s = 0.0;
    double alpha = 1.0;
    double sigma_tr = 1.0;
    unsigned K = 0;
    double eta = 0.0;
    double beta = 1.0;
    bool centered = false;

    double rhs(double s_val, double u) const
    {
        const double decay = (2.0 + 4.0 * K * eta) * alpha * u + eta * alpha * alpha * u * u;
        const double base = centered ? s_val - sigma_tr : s_val;
        return -2.0 * base * decay + 8.0 * alpha * alpha * sigma_tr / beta * u * u;
    }
};

// RK4 with the control re-evaluated at each stage: u_schedule(t, s).
inline std::vector<double> loss_ode_integrate(const LossOdeState& state0,
                                              const std::function<double(double, double)>& u_schedule, double T,
                                              double dt)
{
    if (!(dt > 0.0)) throw std::invalid_argument("loss_ode_integrate: dt must be positive");
    if (!(T >= 0.0)) throw std::invalid_argument("loss_ode_integrate: T must be non-negative");
    const auto n = static_cast<std::size_t>(std::llround(std::ceil(T / dt * (1.0 - 1e-12))));
    std::vector<double> path{state0.s};
    double s = state0.s;
    double t = 0.0;
    auto f = [&](double tt, double ss) { return state0.rhs(ss, u_schedule(tt, ss)); };
    for (std::size_t k = 0; k < n; ++k) {
        const double h = std::min(dt, T - t);
        const double k1 = f(t, s);
        const double k2 = f(t + 0.5 * h, s + 0.5 * h * k1);
        const double k3 = f(t + 0.5 * h, s + 0.5 * h * k2);
        const double k4 = f(t + h, s + h * k3);
        s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        if (!std::isfinite(s)) throw DivergenceError("loss_ode_integrate: non-finite state", k + 1);
        path.push_back(s);
    }
    return path;
}

} // namespace advsde

#endif // ADVSDE_SDE_HPP
