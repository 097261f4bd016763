#pragma once

#include <stdexcept>
#include <string>

namespace cdcm {

/// Bad arguments or malformed data handed to an operation.
struct invalid_input : std::invalid_argument {
  explicit invalid_input(const std::string& what) : std::invalid_argument(what) {}
};

/// A matrix has no unique real logarithm (complex, repeated, or
/// non-positive eigenvalues). Downstream this signals a violated A3.
struct not_real_log_identifiable : std::domain_error {
  explicit not_real_log_identifiable(const std::string& what) : std::domain_error(what) {}
};

struct a2_violation : std::domain_error {
  explicit a2_violation(const std::string& what) : std::domain_error(what) {}
};

struct a3_violation : not_real_log_identifiable {
  explicit a3_violation(const std::string& what) : not_real_log_identifiable(what) {}
};

struct a4_violation : std::domain_error {
  explicit a4_violation(const std::string& what) : std::domain_error(what) {}
};

/// Noiseless signal has zero variance, so an SNR-targeted noise scale
/// cannot be formed.
struct degenerate_signal : std::domain_error {
  explicit degenerate_signal(const std::string& what) : std::domain_error(what) {}
};

/// Draw matrix is rank-deficient (e.g. a constant column).
struct degenerate_draws : std::domain_error {
  explicit degenerate_draws(const std::string& what) : std::domain_error(what) {}
};

/// hrf kernel vanishes at the TR, so the observation map is not injective.
struct non_injective_observation : std::domain_error {
  explicit non_injective_observation(const std::string& what) : std::domain_error(what) {}
};

struct degenerate_covariance : std::domain_error {
  explicit degenerate_covariance(const std::string& what) : std::domain_error(what) {}
};

struct zero_variance_covariate : std::domain_error {
  explicit zero_variance_covariate(const std::string& what) : std::domain_error(what) {}
};

struct initialization_error : std::runtime_error {
  explicit initialization_error(const std::string& what) : std::runtime_error(what) {}
};

/// Strict file-format failure; message carries the offending line.
struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cdcm
