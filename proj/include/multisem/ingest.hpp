#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace multisem {

/// One raw patch as stored in a dataset file.
struct PatchRecord {
    std::string id;
    std::string diff_text;
    std::string description;
    int label = 0; ///< 1 = security patch, 0 = other
};

/// Changed and unchanged lines of a unified diff, markers stripped, in file order.
struct DiffHunks {
    std::vector<std::string> added_lines;
    std::vector<std::string> removed_lines;
    std::vector<std::string> context_lines;
};

/// Classifies the body lines of every hunk by their leading marker.
///
/// File headers (`diff`, `index`, `---`, `+++`) and hunk markers never reach
/// the output. When `@@` markers carry line counts, a hunk ends once both
/// counts are consumed, so `---`/`+++` content lines inside a hunk are still
/// classified correctly. Text without any `@@` marker is classified line by
/// line on its prefix alone. Throws MalformedDiff when the text has neither a
/// hunk marker nor a single `+`/`-` line.
DiffHunks parse_unified_diff(std::string_view diff_text);

/// Splits one code line into lowercase tokens: whitespace separates, each
/// punctuation character is a token of its own, identifiers are split at
/// snake_case underscores and camelCase boundaries.
std::vector<std::string> tokenize_code(std::string_view line);

/// Trims and collapses runs of whitespace to a single space.
std::string normalize_line(std::string_view line);

class Vocab {
public:
    static constexpr std::int32_t pad_id = 0;
    static constexpr std::int32_t unk_id = 1;
    static constexpr std::string_view pad_token = "<pad>";
    static constexpr std::string_view unk_token = "<unk>";

    Vocab();

    /// Ids by descending frequency, ties broken lexicographically. Tokens seen
    /// fewer than `min_freq` times are left out (they encode as UNK).
    static Vocab build(std::span<const std::vector<std::string>> corpus, int min_freq);

    /// Restores a vocabulary from its id-ordered token list (checkpoint loading).
    static Vocab from_tokens(std::vector<std::string> id_to_token);

    std::int32_t id(std::string_view token) const;
    const std::string& token(std::int32_t id) const { return m_id_to_token.at(static_cast<std::size_t>(id)); }
    bool contains(std::string_view token) const;
    std::size_t size() const { return m_id_to_token.size(); }
    const std::vector<std::string>& tokens() const { return m_id_to_token; }
    int min_freq() const { return m_min_freq; }

    bool operator==(const Vocab& other) const { return m_id_to_token == other.m_id_to_token; }

private:
    std::map<std::string, std::int32_t, std::less<>> m_token_to_id;
    std::vector<std::string> m_id_to_token;
    int m_min_freq = 1;
};

struct SequenceLimits {
    std::size_t nw = 256; ///< token-level length
    std::size_t ns = 64;  ///< line-level length
    std::size_t nd = 64;  ///< description length

    bool operator==(const SequenceLimits&) const = default;
};

struct EncodedPatch {
    std::vector<std::int32_t> token_ids;
    std::vector<std::int32_t> line_ids;
    std::vector<std::int32_t> desc_ids;
    std::vector<bool> token_mask;
    std::vector<bool> line_mask;
    std::vector<bool> desc_mask;
    int label = 0;

    bool operator==(const EncodedPatch&) const = default;
};

/// Token stream of a patch: removed lines first, then added lines.
std::vector<std::string> patch_tokens(const DiffHunks& hunks);
/// Normalised line keys of a patch, removed lines first.
std::vector<std::string> patch_lines(const DiffHunks& hunks);
std::vector<std::string> description_tokens(std::string_view description);

EncodedPatch encode_patch(const PatchRecord& rec, const DiffHunks& hunks, const Vocab& token_vocab,
    const Vocab& line_vocab, const Vocab& desc_vocab, const SequenceLimits& limits);

/// Reads a JSON Lines dataset: one object per line with `id` (string),
/// `diff` (string), `message` (string) and `label` (0 or 1). Blank lines are
/// skipped; unknown fields are ignored.
std::vector<PatchRecord> load_dataset(const std::filesystem::path& path);
std::vector<PatchRecord> parse_dataset(std::string_view jsonl);

/// Writes records in the format load_dataset reads.
void save_dataset(const std::filesystem::path& path, std::span<const PatchRecord> records);

/// The three vocabularies a model is trained against.
struct Vocabularies {
    Vocab token;
    Vocab line;
    Vocab desc;
};

Vocabularies build_vocabularies(std::span<const PatchRecord> records, int min_freq);

} // namespace multisem
