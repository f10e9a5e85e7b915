#pragma once

#include <stdexcept>
#include <string>

namespace opca {

// Thrown for tool-level failures: bad input files, unknown labels, exceeded
// windows, dimension caps. Analysis outcomes ("check failed") are report
// values, never exceptions.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Central tolerance table. Every floating comparison in the library uses one
// of these named constants.
namespace tol {
inline constexpr double support = 1e-9;        // minimal-support factorization, max-entry
inline constexpr double psd_eigenvalue = -1e-10;  // least eigenvalue allowed for positivity
inline constexpr double trace_preserve = 1e-12;   // probability/trace conservation
inline constexpr double norm_check = 1e-9;        // norm identities and inequalities
inline constexpr double translation = 1e-10;      // translation-invariance residual
inline constexpr double involution = 1e-10;       // block involution and W inverse identity
inline constexpr double evolve_agree = 1e-9;      // blockwise vs direct conjugation
inline constexpr double signalling = 1e-10;       // marginal-variation detection
inline constexpr double wrap_match = 1e-9;        // wrapped-evolution comparison
inline constexpr double fermionic_unitary = 1e-10;  // one-particle unitarity gate
}  // namespace tol

// Dense global operators (configuration tables, Hilbert-space matrices) are
// materialized only up to this joint dimension.
inline constexpr long kGlobalDimensionCap = 1 << 14;

inline constexpr const char* kSchemaVersion = "1";

}  // namespace opca
