#pragma once

#include <multisem/ingest.hpp>

#include <cstdint>
#include <vector>

namespace multisem {

/// Generates small C patches in unified-diff form.
///
/// Security-like patches (label 1) insert a bounds or length check in front
/// of an existing memory access; the others rename, log or retune code.
/// Records alternate labels, security first, while both kinds remain.
/// Deterministic in `seed`.
std::vector<PatchRecord> synthetic_corpus(std::size_t security, std::size_t other, std::uint64_t seed);

} // namespace multisem
