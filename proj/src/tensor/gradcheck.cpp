#include "diffood/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace diffood {

template <typename T>
double finite_diff_check_params(const std::function<BasicTensor<T>()>& loss, std::span<BasicTensor<T>> params,
                                double h, double floor) {
    if (!(h > 0.0)) throw NumericError("finite_diff_check: step must be positive");
    for (auto& p : params) {
        if (!p.is_leaf()) throw std::logic_error("finite_diff_check: parameters must be leaves");
        if (!p.requires_grad()) p.set_requires_grad(true);
        p.zero_grad();
    }
    loss().backward();

    double worst = 0.0;
    NoGradGuard no_grad;
    for (auto& p : params) {
        const std::vector<T> analytic(p.grad().begin(), p.grad().end());
        auto values = p.data_mut();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T original = values[i];
            values[i] = static_cast<T>(original + h);
            const double up = loss().item();
            values[i] = static_cast<T>(original - h);
            const double down = loss().item();
            values[i] = original;
            const double numeric = (up - down) / (2.0 * h);
            if (!std::isfinite(numeric)) throw NumericError("finite_diff_check: non-finite difference");
            const double a = analytic[i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

template <typename T>
double finite_diff_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f, BasicTensor<T> x, double h,
                         double floor) {
    BasicTensor<T> params[] = {x};
    return finite_diff_check_params<T>([&] { return f(params[0]); }, params, h, floor);
}

template double finite_diff_check_params<float>(const std::function<Tensor()>&, std::span<Tensor>, double, double);
template double finite_diff_check_params<double>(const std::function<Tensor64()>&, std::span<Tensor64>, double, double);
template double finite_diff_check<float>(const std::function<Tensor(const Tensor&)>&, Tensor, double, double);
template double finite_diff_check<double>(const std::function<Tensor64(const Tensor64&)>&, Tensor64, double, double);

}  // namespace diffood
