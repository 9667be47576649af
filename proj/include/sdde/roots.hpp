#pragma once

#include "sdde/model.hpp"

#include <complex>
#include <functional>
#include <optional>

namespace sdde::roots {

using CharacteristicFn = std::function<std::complex<double>(std::complex<double>)>;

/// h(lambda) whose zeros are the eigenvalues of the deterministic delay equation.
CharacteristicFn characteristic_function(const DelayModelSpec& model);

/// Upper bound on |lambda| for every zero with Re(lambda) >= shift.
double root_modulus_bound(const DelayModelSpec& model, double shift);

/// Number of zeros of h inside the closed rectangle, by the argument principle.
/// Empty when |h| is too small on the contour to track the argument reliably.
std::optional<int> count_zeros(const CharacteristicFn& h, double re_lo, double re_hi,
                               double im_lo, double im_hi, double samples_per_unit = 8.0);

/// Number of characteristic roots with real part greater than `shift`.
std::optional<int> count_roots_right_of(const DelayModelSpec& model, double shift);

/// Largest real part among the characteristic roots, to `tol`. Empty when the
/// abscissa lies below `floor` or the contour test is unstable.
std::optional<double> spectral_abscissa(const DelayModelSpec& model, double tol = 1e-9,
                                        double floor = -40.0);

}  // namespace sdde::roots
