#pragma once

// Finite-difference gradient oracle shared by the unit and acceptance suites.
// Central differences with h = 1e-3, evaluated in double precision; the
// analytic gradient under test comes from the reverse-mode sweep.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dnact/tensor.hpp"

namespace dnact::testing {

struct FdReport {
    double max_rel_err = 0;
    double norm_rel_err = 0;  // ||g_ad - g_fd|| / max(||g_fd||, tiny)
    int checked = 0;
};

/// Checks d(loss)/d(param) for one tensor against central differences.
/// `loss_fn` must rebuild the graph from current parameter values.
/// When `max_coords` > 0, only a random subset of coordinates is probed.
template <typename T, typename Rng>
FdReport fd_check_tensor(TensorT<T>& param, const std::function<TensorT<T>()>& loss_fn,
                         Rng& rng, double h = 1e-3, int max_coords = 0) {
    auto loss = loss_fn();
    param.zero_grad();
    loss = loss_fn();
    loss.backward();
    std::vector<T> analytic = param.grad();

    std::vector<int> coords;
    for (std::int64_t i = 0; i < param.numel(); ++i) coords.push_back(static_cast<int>(i));
    if (max_coords > 0 && static_cast<int>(coords.size()) > max_coords) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<size_t>(max_coords));
    }

    FdReport rep;
    double diff2 = 0, ref2 = 0;
    for (int i : coords) {
        const T saved = param.data()[i];
        param.data()[i] = saved + static_cast<T>(h);
        const double fp = static_cast<double>(loss_fn().item());
        param.data()[i] = saved - static_cast<T>(h);
        const double fm = static_cast<double>(loss_fn().item());
        param.data()[i] = saved;
        const double fd = (fp - fm) / (2 * h);
        const double ad = static_cast<double>(analytic[static_cast<size_t>(i)]);
        const double denom = std::max({std::abs(fd), std::abs(ad), 1e-4});
        rep.max_rel_err = std::max(rep.max_rel_err, std::abs(ad - fd) / denom);
        diff2 += (ad - fd) * (ad - fd);
        ref2 += fd * fd;
        ++rep.checked;
    }
    rep.norm_rel_err = std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-8);
    return rep;
}

}  // namespace dnact::testing
