#pragma once

#include <shapemorph/params.hpp>

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace shapemorph {

struct FdParamReport {
    std::string param;
    double max_rel_err = 0.0;
    int checked = 0;
    int skipped_kinks = 0;  // entries excluded as non-differentiable points
};

struct FdReport {
    std::vector<FdParamReport> params;
    double max_rel_err = 0.0;
    bool pass(double tolerance) const { return max_rel_err < tolerance; }
};

/// Compares the reverse-mode gradient of a scalar graph against central
/// finite differences for every parameter entry (a seeded sample when the
/// store holds more than max_entries scalars). The builder must be a pure
/// function of the store: FdBuilder(Graph&, Bound&) -> scalar Value.
template <typename S, typename FdBuilder>
FdReport finite_difference_check(ParamStore<S>& store, FdBuilder build, double h,
                                 std::uint64_t sample_seed = 99, std::size_t max_entries = 1000) {
    // Analytic pass.
    std::vector<std::pair<std::string, Matrix<S>>> analytic;
    {
        Graph<S> g;
        Bound<S> bind(g, store);
        Value<S> root = build(g, bind);
        if (root.rows() != 1 || root.cols() != 1)
            throw std::invalid_argument("finite_difference_check: graph output must be scalar");
        g.backward(root);
        for (const auto& [name, v] : bind.nodes()) analytic.emplace_back(name, g.grad_of(v.id));
    }

    auto eval = [&](double* min_relu_abs) {
        Graph<S> g;
        Bound<S> bind(g, store);
        const double f = static_cast<double>(build(g, bind).scalar());
        if (min_relu_abs) *min_relu_abs = g.min_relu_abs();
        return f;
    };

    const std::size_t total = store.total_size();
    const bool sample = total > max_entries;
    std::mt19937_64 rng(sample_seed);

    FdReport report;
    for (auto& [name, grad] : analytic) {
        auto& entry = store.at(name);
        FdParamReport pr;
        pr.param = name;

        std::vector<Eigen::Index> picks;
        const Eigen::Index sz = entry.value.size();
        if (!sample) {
            picks.resize(static_cast<std::size_t>(sz));
            for (Eigen::Index i = 0; i < sz; ++i) picks[static_cast<std::size_t>(i)] = i;
        } else {
            // Proportional share of the sampling budget, at least one entry.
            const std::size_t want = std::max<std::size_t>(
                1, max_entries * static_cast<std::size_t>(sz) / total);
            for (std::size_t k = 0; k < want; ++k)
                picks.push_back(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(sz))));
        }

        for (Eigen::Index i : picks) {
            const S saved = entry.value.data()[i];
            double kink_plus = 0, kink_minus = 0;
            entry.value.data()[i] = saved + static_cast<S>(h);
            const double fp = eval(&kink_plus);
            entry.value.data()[i] = saved - static_cast<S>(h);
            const double fm = eval(&kink_minus);
            entry.value.data()[i] = saved;

            // A relu input inside the probe interval means the difference
            // quotient straddles a non-differentiable point.
            if (std::min(kink_plus, kink_minus) <= h) {
                ++pr.skipped_kinks;
                continue;
            }
            const double fd = (fp - fm) / (2.0 * h);
            const double an = static_cast<double>(grad.data()[i]);
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            pr.max_rel_err = std::max(pr.max_rel_err, rel);
            ++pr.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, pr.max_rel_err);
        report.params.push_back(std::move(pr));
    }
    return report;
}

}  // namespace shapemorph
