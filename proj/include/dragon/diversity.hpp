#pragma once

#include "dragon/matrix.hpp"

namespace dragon::diversity {

/// Vendi diversity score of an embedding set: rows are L2-normalized, the
/// linear-kernel Gram eigenvalues are divided by the row count so they sum
/// to one, and the score is the exponentiated entropy of that spectrum.
/// Lives in [1, rows]. Rows with norm below 1e-12 throw InvalidInput.
double vendi_score(const EmbeddingMatrix& x);

/// Single-threaded reference (naive Gram assembly) for tests and benchmarks.
double vendi_score_serial(const EmbeddingMatrix& x);

}  // namespace dragon::diversity
