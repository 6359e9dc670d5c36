#pragma once

#include <multisem/ingest.hpp>
#include <multisem/model.hpp>
#include <multisem/run_config.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace multisem {

/// A trained model together with everything needed to score new patches.
///
/// Binary layout (all integers and doubles little-endian):
///
///     "MSEMCKPT"                      magic, 8 bytes
///     u32 version                     currently 1
///     u64 n, n bytes                  run configuration text (RunConfig::to_text)
///     3 x vocabulary                  token, line, description:
///         u64 count, count x (u64 n, n bytes)   tokens in id order
///     u64 tensor count, then per tensor:
///         u64 n, n bytes              parameter name
///         u32 rank, rank x u64        shape
///         f64 x size                  row-major values
///     u32 crc32                       over every preceding byte
struct Checkpoint {
    static constexpr std::uint32_t format_version = 1;

    RunConfig config;
    Vocabularies vocabs;
    ModelParams params;

    /// Model configuration with vocabulary sizes filled in from `vocabs`.
    ModelConfig model_config() const;
};

/// Model configuration for a run config and the vocabularies built for it.
ModelConfig resolve_model_config(const RunConfig& config, const Vocabularies& vocabs);

std::string serialize_checkpoint(const Checkpoint& checkpoint);

/// Checks magic and checksum (ChecksumMismatch), version (VersionUnsupported),
/// then parameter names and shapes against the embedded config (ConfigMismatch).
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace multisem
