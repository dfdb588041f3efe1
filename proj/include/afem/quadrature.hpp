#pragma once

#include <boost/math/quadrature/gauss.hpp>

#include <array>
#include <cmath>
#include <vector>

namespace afem {

/// Quadrature on the reference triangle {(0,0),(1,0),(0,1)}: barycentric
/// points and weights summing to the reference area 1/2.
struct QuadratureRule
{
    std::vector<std::array<double, 3>> points;
    std::vector<double> weights;
    int degree = 0;

    std::size_t size() const noexcept { return weights.size(); }
};

namespace detail {

inline QuadratureRule make_radon7()
{
    const double r = std::sqrt(15.0);
    const double a1 = (6.0 - r) / 21.0, b1 = (9.0 + 2.0 * r) / 21.0;
    const double a2 = (6.0 + r) / 21.0, b2 = (9.0 - 2.0 * r) / 21.0;
    const double w0 = 9.0 / 80.0;
    const double w1 = (155.0 - r) / 2400.0;
    const double w2 = (155.0 + r) / 2400.0;
    QuadratureRule q;
    q.degree = 5;
    q.points = {{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, {a1, a1, b1}, {a1, b1, a1}, {b1, a1, a1},
                {a2, a2, b2}, {a2, b2, a2}, {b2, a2, a2}};
    q.weights = {w0, w1, w1, w1, w2, w2, w2};
    return q;
}

/// Gauss-Legendre nodes and weights mapped to [0,1].
template <unsigned N>
std::pair<std::vector<double>, std::vector<double>> gauss_legendre_unit()
{
    using rule = boost::math::quadrature::gauss<double, N>;
    const auto& x = rule::abscissa();
    const auto& w = rule::weights();
    std::vector<double> nodes, weights;
    for (std::size_t i = 0; i < x.size(); ++i) {
        nodes.push_back(0.5 * (1.0 + x[i]));
        weights.push_back(0.5 * w[i]);
        if (x[i] != 0.0) {
            nodes.push_back(0.5 * (1.0 - x[i]));
            weights.push_back(0.5 * w[i]);
        }
    }
    return {nodes, weights};
}

/// Collapsed (Duffy) tensor Gauss rule; N points per direction is exact up to degree 2N - 2.
template <unsigned N>
QuadratureRule make_collapsed_gauss()
{
    const auto [x, w] = gauss_legendre_unit<N>();
    QuadratureRule q;
    q.degree = 2 * static_cast<int>(N) - 2;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double xi = x[i];
            const double eta = x[j] * (1.0 - xi);
            q.points.push_back({1.0 - xi - eta, xi, eta});
            q.weights.push_back(w[i] * w[j] * (1.0 - xi));
        }
    }
    return q;
}

} // namespace detail

/// Seven-point degree-5 rule; exact for b(u) y^3 phi with P1 factors.
inline const QuadratureRule& triangle_rule_degree5()
{
    static const QuadratureRule rule = detail::make_radon7();
    return rule;
}

/// 25-point rule exact to degree 8, used for squared residual norms.
inline const QuadratureRule& triangle_rule_degree8()
{
    static const QuadratureRule rule = detail::make_collapsed_gauss<5>();
    return rule;
}

} // namespace afem
