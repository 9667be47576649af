#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sdde {

/// dX = [a X(t) + b X(t - r)] dt + sigma dW.
struct TwoDelay {
  double a = 0.0;
  double b = 0.0;
  double r = 1.0;
  double sigma = 1.0;
};

/// dX = sum_k alphas[k] X(t - delays[k]) dt + sigma dW, delays strictly increasing.
struct MultiDelay {
  std::vector<double> alphas;
  std::vector<double> delays;
  double sigma = 1.0;
};

/// dX = -b (int_{-r}^0 X(t+s) e^{a s} ds) dt + sigma dW. r may be +infinity.
struct ExpKernel {
  double a = 0.0;
  double b = 1.0;
  double r = 1.0;
  double sigma = 1.0;
};

using DelayModelSpec = std::variant<TwoDelay, MultiDelay, ExpKernel>;

/// Throws std::invalid_argument when a field violates the family invariants.
void validate(const DelayModelSpec& model);

MultiDelay to_multi_delay(const TwoDelay& model);
/// Inverse of to_multi_delay; empty unless N = 2 and the first delay is 0.
std::optional<TwoDelay> to_two_delay(const MultiDelay& model);

double sigma_of(const DelayModelSpec& model);
/// Largest delay of the measure (infinity for an untruncated exponential kernel).
double max_delay(const DelayModelSpec& model);
std::string family_name(const DelayModelSpec& model);

// ---------------------------------------------------------------------------
// Stationarity

enum class Verdict { Stationary, NotStationary, Indeterminate };

struct StationarityVerdict {
  Verdict verdict = Verdict::Indeterminate;
  /// Signed distance to the binding constraint; positive iff stationary.
  /// TwoDelay: in units of b. MultiDelay: minus the spectral abscissa.
  double margin = 0.0;
  /// True when the verdict rests on a sufficient (not necessary) condition.
  bool sufficient_only = false;
  std::string detail;

  bool stationary() const { return verdict == Verdict::Stationary; }
};

struct RootTestOptions {
  /// Half-width of the strip around the imaginary axis treated as undecidable.
  double strip = 1e-7;
  /// Compute the spectral abscissa (margin) by bisection on the contour shift.
  bool compute_margin = true;
};

StationarityVerdict is_stationary(const DelayModelSpec& model,
                                  const RootTestOptions& options = {});

/// Root in (0, pi) of xi = u tan(xi); xi(0) = pi/2. Defined for u < 1.
double xi(double u);

/// sqrt(|a^2 - b^2|).
double lambda_ab(double a, double b);

/// Lower stationarity boundary in b for the two-delay model at fixed (a, r).
double two_delay_lower_b(double a, double r);

// ---------------------------------------------------------------------------
// Parameter binding

/// One addressable field of a DelayModelSpec. Paths: "a", "b", "r", "sigma",
/// "sigma2", "alpha[i]", "delay[i]".
struct ParameterSlot {
  std::string path;
  bool free = true;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

double get_field(const DelayModelSpec& model, std::string_view path);
void set_field(DelayModelSpec& model, std::string_view path, double value);

class ParameterBinding {
 public:
  ParameterBinding() = default;
  explicit ParameterBinding(std::vector<ParameterSlot> slots);
  /// All listed paths free and unbounded.
  static ParameterBinding free_fields(const std::vector<std::string>& paths);

  int size() const { return static_cast<int>(free_index_.size()); }
  const std::vector<ParameterSlot>& slots() const { return slots_; }
  std::vector<std::string> names() const;
  const ParameterSlot& free_slot(int i) const { return slots_[free_index_[i]]; }

  Eigen::VectorXd theta(const DelayModelSpec& model) const;
  DelayModelSpec apply(const DelayModelSpec& model, const Eigen::VectorXd& theta) const;
  bool within_bounds(const Eigen::VectorXd& theta) const;
  /// Throws std::invalid_argument if p < 1, a path is unknown for the model,
  /// or a free field lies outside its bounds.
  void check(const DelayModelSpec& model) const;

 private:
  std::vector<ParameterSlot> slots_;
  std::vector<int> free_index_;
};

/// theta is admissible: bounds hold, the model validates, and it is stationary
/// with margin above `margin`.
bool feasible(const DelayModelSpec& model, const ParameterBinding& binding,
              const Eigen::VectorXd& theta, double margin = 0.0);

}  // namespace sdde
