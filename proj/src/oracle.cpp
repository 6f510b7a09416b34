#include "concrete/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace concrete::oracle {
namespace {

double lse(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double logistic_sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

struct Triangle {
    std::array<double, 2> a, b, c;
};

double integrate_triangle(const SimplexDensity& density, const QuadratureRule& rule, const Triangle& t) {
    const double area2 = std::abs((t.b[0] - t.a[0]) * (t.c[1] - t.a[1]) - (t.c[0] - t.a[0]) * (t.b[1] - t.a[1]));
    double acc = 0.0;
    std::array<double, 3> x{};
    for (std::size_t i = 0; i < rule.weights.size(); ++i) {
        const double u = rule.nodes[i][0], v = rule.nodes[i][1];
        x[0] = t.a[0] + u * (t.b[0] - t.a[0]) + v * (t.c[0] - t.a[0]);
        x[1] = t.a[1] + u * (t.b[1] - t.a[1]) + v * (t.c[1] - t.a[1]);
        x[2] = 1.0 - x[0] - x[1];
        acc += rule.weights[i] * density(x);
    }
    return acc * area2;  // reference triangle has area 1/2; weights already sum to 1/2
}

double adaptive_triangle(const SimplexDensity& density, const QuadratureRule& rule, const Triangle& t,
                         double whole, double tol, std::size_t depth) {
    const std::array<double, 2> ab{(t.a[0] + t.b[0]) / 2, (t.a[1] + t.b[1]) / 2};
    const std::array<double, 2> bc{(t.b[0] + t.c[0]) / 2, (t.b[1] + t.c[1]) / 2};
    const std::array<double, 2> ca{(t.c[0] + t.a[0]) / 2, (t.c[1] + t.a[1]) / 2};
    const Triangle kids[4] = {{t.a, ab, ca}, {ab, t.b, bc}, {ca, bc, t.c}, {ab, bc, ca}};
    double parts[4];
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
        parts[k] = integrate_triangle(density, rule, kids[k]);
        total += parts[k];
    }
    if (depth == 0 || std::abs(total - whole) <= tol) return total;
    double refined = 0.0;
    for (int k = 0; k < 4; ++k) refined += adaptive_triangle(density, rule, kids[k], parts[k], tol / 2, depth - 1);
    return refined;
}

}  // namespace

QuadratureRule gauss_legendre(std::size_t order) {
    if (order == 0) throw std::invalid_argument("gauss_legendre: order must be positive");
    QuadratureRule rule;
    rule.domain = QuadratureRule::Domain::Interval;
    rule.order = order;
    rule.nodes.resize(order);
    rule.weights.resize(order);
    const double n = static_cast<double>(order);
    for (std::size_t i = 0; i < (order + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (std::size_t k = 2; k <= order; ++k) {
                const double kk = static_cast<double>(k);
                const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
                p0 = p1;
                p1 = p2;
            }
            if (order == 1) {
                p1 = x;
                p0 = 1.0;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        // Recompute derivative at the converged root.
        double p0 = 1.0, p1 = x;
        for (std::size_t k = 2; k <= order; ++k) {
            const double kk = static_cast<double>(k);
            const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
            p0 = p1;
            p1 = p2;
        }
        dp = order == 1 ? 1.0 : n * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = {-x, 0.0};
        rule.nodes[order - 1 - i] = {x, 0.0};
        rule.weights[i] = w;
        rule.weights[order - 1 - i] = w;
    }
    if (order % 2 == 1) rule.nodes[order / 2] = {0.0, 0.0};
    if (order == 1) rule.weights[0] = 2.0;
    return rule;
}

QuadratureRule triangle_rule(std::size_t order) {
    const QuadratureRule gl = gauss_legendre(order);
    QuadratureRule rule;
    rule.domain = QuadratureRule::Domain::Triangle;
    rule.order = order;
    for (std::size_t i = 0; i < order; ++i) {
        const double u = 0.5 * (gl.nodes[i][0] + 1.0);
        const double wu = 0.5 * gl.weights[i];
        for (std::size_t j = 0; j < order; ++j) {
            const double s = 0.5 * (gl.nodes[j][0] + 1.0);
            const double ws = 0.5 * gl.weights[j];
            // Collapsed map (u, s) -> (u, s (1 - u)) with Jacobian (1 - u).
            const std::array<double, 3> bary{u, s * (1.0 - u), (1.0 - u) * (1.0 - s)};
            const double w = wu * ws * (1.0 - u) / 6.0;
            static constexpr std::array<std::array<int, 3>, 6> perms{
                {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
            for (const auto& p : perms) {
                rule.nodes.push_back({bary[p[0]], bary[p[1]]});
                rule.weights.push_back(w);
            }
        }
    }
    return rule;
}

double integrate_interval(const Function1D& f, double a, double b, const QuadratureRule& rule, std::size_t panels) {
    if (rule.domain != QuadratureRule::Domain::Interval) {
        throw std::invalid_argument("integrate_interval: needs an interval rule");
    }
    if (panels == 0) throw std::invalid_argument("integrate_interval: panels must be positive");
    const double h = (b - a) / static_cast<double>(panels);
    double total = 0.0;
    for (std::size_t p = 0; p < panels; ++p) {
        const double lo = a + h * static_cast<double>(p);
        double acc = 0.0;
        for (std::size_t i = 0; i < rule.weights.size(); ++i) {
            acc += rule.weights[i] * f(lo + 0.5 * h * (rule.nodes[i][0] + 1.0));
        }
        total += 0.5 * h * acc;
    }
    return total;
}

double integrate_density(const SimplexDensity& density, std::size_t n, const QuadratureRule& rule,
                         const IntegrationOptions& options) {
    if (n == 2) {
        if (rule.domain != QuadratureRule::Domain::Interval) {
            throw std::invalid_argument("integrate_density: n = 2 needs an interval rule");
        }
        std::array<double, 2> x{};
        const auto integrand = [&](double t) {
            const double s = logistic_sigmoid(t);
            const double c = logistic_sigmoid(-t);
            x = {s, c};
            return density(x) * s * c;
        };
        return integrate_interval(integrand, -options.logit_cutoff, options.logit_cutoff, rule, options.panels);
    }
    if (n == 3) {
        if (rule.domain != QuadratureRule::Domain::Triangle) {
            throw std::invalid_argument("integrate_density: n = 3 needs a triangle rule");
        }
        const Triangle whole{{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
        const double first = integrate_triangle(density, rule, whole);
        return adaptive_triangle(density, rule, whole, first, options.tolerance, options.max_depth);
    }
    throw std::invalid_argument("integrate_density: only n in {2, 3} is supported");
}

std::vector<double> cumulative_first_coordinate(const SimplexDensity& density, std::span<const double> sorted_x,
                                                const IntegrationOptions& options) {
    const QuadratureRule rule = gauss_legendre(10);
    std::array<double, 2> x{};
    const auto integrand = [&](double t) {
        const double s = logistic_sigmoid(t);
        const double c = logistic_sigmoid(-t);
        x = {s, c};
        return density(x) * s * c;
    };
    std::vector<double> out(sorted_x.size());
    double t_prev = -options.logit_cutoff;
    double acc = 0.0;
    for (std::size_t i = 0; i < sorted_x.size(); ++i) {
        const double xi = sorted_x[i];
        const double t = std::log(xi) - std::log1p(-xi);
        if (t > t_prev) {
            // Long gaps (e.g. the tail before the first sample) get several panels.
            const std::size_t panels = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(t - t_prev)));
            acc += integrate_interval(integrand, t_prev, t, rule, panels);
            t_prev = t;
        }
        out[i] = acc;
    }
    return out;
}

// Enumeration ----------------------------------------------------------------------

void EnumeratedModel::check_states(std::size_t n) {
    if (n == 0) throw std::invalid_argument("EnumeratedModel: empty table");
    if (n > kMaxEnumeratedStates) throw std::length_error("EnumeratedModel: state space exceeds 2^12");
    if (num_states_ != 0 && n != num_states_) throw std::invalid_argument("EnumeratedModel: table size mismatch");
    num_states_ = n;
}

void EnumeratedModel::add_logits(const std::string& key, std::span<const double> logits) {
    check_states(logits.size());
    const double z = lse(logits);
    std::vector<double> lm(logits.begin(), logits.end());
    for (auto& v : lm) v -= z;
    logits_[key].assign(logits.begin(), logits.end());
    log_mass_[key] = std::move(lm);
}

void EnumeratedModel::add_log_mass(const std::string& key, std::vector<double> log_mass) {
    check_states(log_mass.size());
    double total = 0.0;
    for (double v : log_mass) total += std::exp(v);
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("EnumeratedModel: table not normalized");
    logits_[key] = log_mass;
    log_mass_[key] = std::move(log_mass);
}

const std::vector<double>& EnumeratedModel::log_mass(const std::string& key) const {
    const auto it = log_mass_.find(key);
    if (it == log_mass_.end()) throw std::out_of_range("EnumeratedModel: no table named " + key);
    return it->second;
}

const std::vector<double>& EnumeratedModel::logits(const std::string& key) const {
    const auto it = logits_.find(key);
    if (it == logits_.end()) throw std::out_of_range("EnumeratedModel: no table named " + key);
    return it->second;
}

double exact_expectation(const EnumeratedModel& model, const std::string& key, std::span<const double> f) {
    const auto& lm = model.log_mass(key);
    if (f.size() != lm.size()) throw std::invalid_argument("exact_expectation: f has wrong size");
    double e = 0.0;
    for (std::size_t k = 0; k < lm.size(); ++k) e += std::exp(lm[k]) * f[k];
    return e;
}

std::vector<double> exact_gradient(const EnumeratedModel& model, const std::string& key, std::span<const double> f) {
    const auto& lm = model.log_mass(key);
    const double e = exact_expectation(model, key, f);
    std::vector<double> g(lm.size());
    for (std::size_t k = 0; k < lm.size(); ++k) g[k] = std::exp(lm[k]) * (f[k] - e);
    return g;
}

double exact_log_marginal(const EnumeratedModel& model, const std::string& prior_key,
                          std::span<const double> log_likelihood) {
    const auto& lp = model.log_mass(prior_key);
    if (log_likelihood.size() != lp.size()) throw std::invalid_argument("exact_log_marginal: size mismatch");
    std::vector<double> joint(lp.size());
    for (std::size_t k = 0; k < lp.size(); ++k) joint[k] = lp[k] + log_likelihood[k];
    return lse(joint);
}

double exact_elbo(const EnumeratedModel& model, const std::string& prior_key, const std::string& posterior_key,
                  std::span<const double> log_likelihood) {
    const auto& lp = model.log_mass(prior_key);
    const auto& lq = model.log_mass(posterior_key);
    if (log_likelihood.size() != lp.size()) throw std::invalid_argument("exact_elbo: size mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k) {
        const double q = std::exp(lq[k]);
        if (q > 0.0) total += q * (lp[k] + log_likelihood[k] - lq[k]);
    }
    return total;
}

// Finite differences -----------------------------------------------------------------

std::vector<double> finite_difference(const ScalarFunction& f, std::span<const double> point, double h) {
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double relative_error(double a, double b, double floor) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw std::invalid_argument("max_relative_error: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
    return worst;
}

// Statistics -------------------------------------------------------------------------

MeanSe mean_and_se(std::span<const double> v) {
    if (v.empty()) return {};
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double var = v.size() > 1 ? ss / (n - 1.0) : 0.0;
    return {m, std::sqrt(var / n), var};
}

double ks_statistic(std::span<const double> cdf_at_sorted) {
    const double n = static_cast<double>(cdf_at_sorted.size());
    double d = 0.0;
    for (std::size_t i = 0; i < cdf_at_sorted.size(); ++i) {
        const double f = cdf_at_sorted[i];
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double kolmogorov_pvalue(double d, double n_effective) {
    const double sn = std::sqrt(n_effective);
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-16) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace concrete::oracle
