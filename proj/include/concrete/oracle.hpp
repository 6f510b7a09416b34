#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

// Independent verification machinery: quadrature over the simplex, exact
// enumeration of small discrete models, central finite differences and
// Kolmogorov-Smirnov statistics. Nothing here depends on the relaxations or
// autodiff code it is used to check.
namespace concrete::oracle {

struct QuadratureRule {
    enum class Domain {
        Interval,  // [-1, 1], measure 2
        Triangle,  // {(u, v) : u, v >= 0, u + v <= 1}, measure 1/2
    };
    Domain domain = Domain::Interval;
    std::size_t order = 0;
    std::vector<std::array<double, 2>> nodes;  // second coordinate unused on the interval
    std::vector<double> weights;
};

/// Gauss-Legendre rule with `order` points on [-1, 1].
QuadratureRule gauss_legendre(std::size_t order);

/// Symmetric rule on the reference triangle: a collapsed (Duffy) tensor
/// Gauss-Legendre rule averaged over the six vertex permutations. Exact for
/// polynomials of degree 2*order - 1; all weights positive.
QuadratureRule triangle_rule(std::size_t order);

using Function1D = std::function<double(double)>;

/// Composite rule: [a, b] split into `panels` equal panels.
double integrate_interval(const Function1D& f, double a, double b, const QuadratureRule& rule,
                          std::size_t panels = 1);

/// Density on the simplex, evaluated at a point with n barycentric coordinates.
using SimplexDensity = std::function<double(std::span<const double>)>;

struct IntegrationOptions {
    /// n = 2: panels over the logit line t in [-cutoff, cutoff].
    std::size_t panels = 160;
    double logit_cutoff = 40.0;
    /// n = 3: adaptive subdivision tolerance and depth limit.
    double tolerance = 1e-10;
    std::size_t max_depth = 18;
};

/// Integral of `density` over the simplex with n in {2, 3} vertices.
///
/// n = 2 uses the substitution x_1 = sigmoid(t), which turns the
/// x^(-lambda-1) edge behaviour of Concrete densities into exponentially
/// decaying tails, and truncates at |t| = cutoff. `rule` must be an interval
/// rule. n = 3 integrates over the (x_1, x_2) chart with adaptive subdivision
/// of the triangle; `rule` must be a triangle rule.
double integrate_density(const SimplexDensity& density, std::size_t n, const QuadratureRule& rule,
                         const IntegrationOptions& options = {});

/// Cumulative distribution of the first coordinate (n = 2) evaluated at each of
/// the sorted points, by integrating between consecutive points in logit space.
std::vector<double> cumulative_first_coordinate(const SimplexDensity& density, std::span<const double> sorted_x,
                                                const IntegrationOptions& options = {});

// Enumeration ----------------------------------------------------------------------

inline constexpr std::size_t kMaxEnumeratedStates = std::size_t{1} << 12;

/// Explicit normalized log-mass tables over one finite state space.
class EnumeratedModel {
public:
    EnumeratedModel() = default;

    /// Adds a table given by logits (normalized internally).
    void add_logits(const std::string& key, std::span<const double> logits);
    /// Adds an already-normalized log-mass table; rejects tables off by more than 1e-12.
    void add_log_mass(const std::string& key, std::vector<double> log_mass);

    std::size_t num_states() const noexcept { return num_states_; }
    const std::vector<double>& log_mass(const std::string& key) const;
    const std::vector<double>& logits(const std::string& key) const;

private:
    void check_states(std::size_t n);
    std::size_t num_states_ = 0;
    std::map<std::string, std::vector<double>> log_mass_;
    std::map<std::string, std::vector<double>> logits_;
};

/// E[f(Z)] for Z distributed by table `key`.
double exact_expectation(const EnumeratedModel& model, const std::string& key, std::span<const double> f);

/// Gradient of E[f(Z)] with respect to the logits of table `key`:
/// p_k (f_k - E[f]).
std::vector<double> exact_gradient(const EnumeratedModel& model, const std::string& key, std::span<const double> f);

/// log sum_z p(z) p(x | z) with p(z) from table `prior_key`.
double exact_log_marginal(const EnumeratedModel& model, const std::string& prior_key,
                          std::span<const double> log_likelihood);

/// sum_z q(z) [log p(z) + log p(x | z) - log q(z)].
double exact_elbo(const EnumeratedModel& model, const std::string& prior_key, const std::string& posterior_key,
                  std::span<const double> log_likelihood);

// Finite differences ---------------------------------------------------------------

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
std::vector<double> finite_difference(const ScalarFunction& f, std::span<const double> point, double h = 1e-5);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-8);
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

// Statistics -----------------------------------------------------------------------

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    double variance = 0.0;
};
MeanSe mean_and_se(std::span<const double> v);

/// sup_x |F_n(x) - F(x)| given the sorted sample and F at each sample point.
double ks_statistic(std::span<const double> cdf_at_sorted);
/// Two-sample statistic sup_x |F_a(x) - F_b(x)|.
double ks_two_sample(std::vector<double> a, std::vector<double> b);
/// Asymptotic Kolmogorov p-value for statistic d with effective size n.
double kolmogorov_pvalue(double d, double n_effective);

}  // namespace concrete::oracle
