#include <multisem/errors.hpp>
#include <multisem/gradcheck.hpp>

#include <algorithm>
#include <cmath>

namespace multisem {

double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult finite_diff_check(const LossFunction& f, std::vector<NamedTensor> params, double eps)
{
    if (!(eps > 0.0))
        throw Error("finite_diff_check: step must be positive");

    for (auto& [name, t] : params)
        t.zero_grad();
    {
        Graph graph;
        Tensor loss = f(graph);
        graph.backward(loss);
    }

    auto evaluate = [&f] {
        Graph graph(false);
        return f(graph).item();
    };

    GradCheckResult result;
    for (auto& [name, t] : params) {
        ParamGradError entry { name };
        auto values = t.mutable_data();
        const bool has_grad = t.has_grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = evaluate();
            values[i] = saved - eps;
            const double down = evaluate();
            values[i] = saved;

            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = has_grad ? t.grad()[i] : 0.0;
            const double err = relative_error(analytic, numeric);
            if (i == 0 || err > entry.max_relative_error)
                entry = { name, err, i, analytic, numeric };
        }
        if (result.worst_param.empty() || entry.max_relative_error > result.max_relative_error) {
            result.max_relative_error = entry.max_relative_error;
            result.worst_param = name;
        }
        result.per_param.push_back(std::move(entry));
    }
    return result;
}

} // namespace multisem
