#include <multisem/errors.hpp>
#include <multisem/ingest.hpp>

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace multisem {

namespace {

std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

bool is_file_header(std::string_view line)
{
    auto marker = [&](std::string_view m) {
        return line.starts_with(m) && (line.size() == m.size() || line[m.size()] == ' ' || line[m.size()] == '\t');
    };
    return marker("---") || marker("+++") || line.starts_with("diff ") || line.starts_with("index ");
}

// Parses "start[,count]" and returns the count (1 when omitted).
bool parse_range_count(std::string_view range, long& count)
{
    auto comma = range.find(',');
    if (comma == std::string_view::npos) {
        long start = 0;
        auto [p, ec] = std::from_chars(range.data(), range.data() + range.size(), start);
        count = 1;
        return ec == std::errc() && p == range.data() + range.size();
    }
    auto tail = range.substr(comma + 1);
    auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), count);
    return ec == std::errc() && p == tail.data() + tail.size();
}

// "@@ -a,b +c,d @@ optional section" -> old/new line counts.
bool parse_hunk_marker(std::string_view line, long& old_count, long& new_count)
{
    std::istringstream in { std::string(line) };
    std::string at, old_range, new_range;
    in >> at >> old_range >> new_range;
    if (at != "@@" || old_range.size() < 2 || new_range.size() < 2 || old_range[0] != '-' || new_range[0] != '+')
        return false;
    return parse_range_count(std::string_view(old_range).substr(1), old_count)
        && parse_range_count(std::string_view(new_range).substr(1), new_count);
}

bool is_upper(unsigned char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(unsigned char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }
bool is_word_char(unsigned char c) { return is_upper(c) || is_lower(c) || is_digit(c) || c == '_' || c >= 0x80; }

char ascii_lower(char c) { return is_upper(static_cast<unsigned char>(c)) ? static_cast<char>(c - 'A' + 'a') : c; }

void emit_identifier(std::string_view word, std::vector<std::string>& out)
{
    std::string current;
    auto flush = [&] {
        if (!current.empty())
            out.push_back(std::move(current));
        current.clear();
    };
    for (std::size_t i = 0; i < word.size(); ++i) {
        const auto c = static_cast<unsigned char>(word[i]);
        if (c == '_') {
            flush();
            continue;
        }
        if (is_upper(c) && !current.empty()) {
            const auto prev = static_cast<unsigned char>(word[i - 1]);
            const bool next_lower = i + 1 < word.size() && is_lower(static_cast<unsigned char>(word[i + 1]));
            if (is_lower(prev) || is_digit(prev) || (is_upper(prev) && next_lower))
                flush();
        }
        current.push_back(ascii_lower(word[i]));
    }
    flush();
}

} // namespace

// ---------------------------------------------------------------- diff parsing

DiffHunks parse_unified_diff(std::string_view diff_text)
{
    const auto lines = split_lines(diff_text);
    DiffHunks hunks;

    const bool has_marker = std::any_of(lines.begin(), lines.end(), [](auto l) { return l.starts_with("@@"); });
    if (!has_marker) {
        const bool has_change = std::any_of(lines.begin(), lines.end(), [](auto l) { return l.starts_with('+') || l.starts_with('-'); });
        if (!has_change)
            throw MalformedDiff("no hunk marker and no +/- line");
        for (auto line : lines) {
            if (line.empty() || is_file_header(line))
                continue;
            switch (line[0]) {
            case '+':
                hunks.added_lines.emplace_back(line.substr(1));
                break;
            case '-':
                hunks.removed_lines.emplace_back(line.substr(1));
                break;
            case ' ':
                hunks.context_lines.emplace_back(line.substr(1));
                break;
            default:
                break;
            }
        }
        return hunks;
    }

    bool in_hunk = false;
    bool counted = false;
    long old_left = 0, new_left = 0;
    for (auto line : lines) {
        if (in_hunk && counted && old_left <= 0 && new_left <= 0)
            in_hunk = false;
        if (in_hunk && !counted && (line.empty() || is_file_header(line)))
            in_hunk = false;

        if (line.starts_with("@@")) {
            in_hunk = true;
            counted = parse_hunk_marker(line, old_left, new_left);
            continue;
        }
        if (!in_hunk)
            continue;

        if (line.empty()) {
            // Some tools strip the single space off empty context lines.
            hunks.context_lines.emplace_back();
            --old_left;
            --new_left;
            continue;
        }
        switch (line[0]) {
        case '+':
            hunks.added_lines.emplace_back(line.substr(1));
            --new_left;
            break;
        case '-':
            hunks.removed_lines.emplace_back(line.substr(1));
            --old_left;
            break;
        case ' ':
            hunks.context_lines.emplace_back(line.substr(1));
            --old_left;
            --new_left;
            break;
        case '\\':
            break; // "\ No newline at end of file"
        default:
            in_hunk = false;
            break;
        }
    }
    return hunks;
}

// ---------------------------------------------------------------- tokenization

std::vector<std::string> tokenize_code(std::string_view line)
{
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        const auto c = static_cast<unsigned char>(line[i]);
        if (is_space(c)) {
            ++i;
        } else if (is_word_char(c)) {
            std::size_t end = i;
            while (end < line.size() && is_word_char(static_cast<unsigned char>(line[end])))
                ++end;
            emit_identifier(line.substr(i, end - i), tokens);
            i = end;
        } else {
            tokens.emplace_back(1, line[i]);
            ++i;
        }
    }
    return tokens;
}

std::string normalize_line(std::string_view line)
{
    std::string out;
    bool pending_space = false;
    for (char ch : line) {
        if (is_space(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space)
            out.push_back(' ');
        pending_space = false;
        out.push_back(ch);
    }
    return out;
}

// ---------------------------------------------------------------- vocabulary

Vocab::Vocab()
    : m_id_to_token { std::string(pad_token), std::string(unk_token) }
{
}

Vocab Vocab::build(std::span<const std::vector<std::string>> corpus, int min_freq)
{
    if (min_freq < 1)
        throw InvalidConfig("min_freq must be >= 1, got " + std::to_string(min_freq));
    std::map<std::string, long, std::less<>> counts;
    for (const auto& doc : corpus)
        for (const auto& tok : doc)
            ++counts[tok];

    std::vector<std::pair<std::string, long>> kept;
    for (auto& [tok, n] : counts)
        if (n >= min_freq)
            kept.emplace_back(tok, n);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second)
            return a.second > b.second;
        return a.first < b.first;
    });

    Vocab vocab;
    vocab.m_min_freq = min_freq;
    for (auto& [tok, n] : kept) {
        vocab.m_token_to_id.emplace(tok, static_cast<std::int32_t>(vocab.m_id_to_token.size()));
        vocab.m_id_to_token.push_back(std::move(tok));
    }
    return vocab;
}

Vocab Vocab::from_tokens(std::vector<std::string> id_to_token)
{
    if (id_to_token.size() < 2 || id_to_token[0] != pad_token || id_to_token[1] != unk_token)
        throw Error("vocabulary must start with the PAD and UNK entries");
    Vocab vocab;
    vocab.m_id_to_token = std::move(id_to_token);
    for (std::size_t i = 2; i < vocab.m_id_to_token.size(); ++i) {
        if (!vocab.m_token_to_id.emplace(vocab.m_id_to_token[i], static_cast<std::int32_t>(i)).second)
            throw Error("duplicate vocabulary entry '" + vocab.m_id_to_token[i] + "'");
    }
    return vocab;
}

std::int32_t Vocab::id(std::string_view token) const
{
    auto it = m_token_to_id.find(token);
    return it == m_token_to_id.end() ? unk_id : it->second;
}

bool Vocab::contains(std::string_view token) const
{
    return m_token_to_id.find(token) != m_token_to_id.end();
}

// ---------------------------------------------------------------- encoding

std::vector<std::string> patch_tokens(const DiffHunks& hunks)
{
    std::vector<std::string> tokens;
    for (const auto* group : { &hunks.removed_lines, &hunks.added_lines })
        for (const auto& line : *group)
            for (auto& tok : tokenize_code(line))
                tokens.push_back(std::move(tok));
    return tokens;
}

std::vector<std::string> patch_lines(const DiffHunks& hunks)
{
    std::vector<std::string> lines;
    lines.reserve(hunks.removed_lines.size() + hunks.added_lines.size());
    for (const auto* group : { &hunks.removed_lines, &hunks.added_lines })
        for (const auto& line : *group)
            lines.push_back(normalize_line(line));
    return lines;
}

std::vector<std::string> description_tokens(std::string_view description)
{
    return tokenize_code(description);
}

namespace {

void encode_sequence(const std::vector<std::string>& items, const Vocab& vocab, std::size_t limit,
    std::vector<std::int32_t>& ids, std::vector<bool>& mask)
{
    ids.assign(limit, Vocab::pad_id);
    mask.assign(limit, false);
    const std::size_t n = std::min(limit, items.size());
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = vocab.id(items[i]);
        mask[i] = true;
    }
}

} // namespace

EncodedPatch encode_patch(const PatchRecord& rec, const DiffHunks& hunks, const Vocab& token_vocab,
    const Vocab& line_vocab, const Vocab& desc_vocab, const SequenceLimits& limits)
{
    if (limits.nw == 0 || limits.ns == 0 || limits.nd == 0)
        throw InvalidConfig("sequence limits must be positive");
    EncodedPatch enc;
    encode_sequence(patch_tokens(hunks), token_vocab, limits.nw, enc.token_ids, enc.token_mask);
    encode_sequence(patch_lines(hunks), line_vocab, limits.ns, enc.line_ids, enc.line_mask);
    encode_sequence(description_tokens(rec.description), desc_vocab, limits.nd, enc.desc_ids, enc.desc_mask);
    enc.label = rec.label;
    return enc;
}

// ---------------------------------------------------------------- datasets

std::vector<PatchRecord> parse_dataset(std::string_view jsonl)
{
    std::vector<PatchRecord> records;
    std::size_t line_no = 0;
    for (auto line : split_lines(jsonl)) {
        ++line_no;
        if (normalize_line(line).empty())
            continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw SchemaError(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object())
            throw SchemaError(line_no, "record is not a JSON object");

        auto string_field = [&](const char* key) {
            auto it = obj.find(key);
            if (it == obj.end())
                throw SchemaError(line_no, std::string("missing field '") + key + "'");
            if (!it->is_string())
                throw SchemaError(line_no, std::string("field '") + key + "' is not a string");
            return it->get<std::string>();
        };

        PatchRecord rec;
        rec.id = string_field("id");
        rec.diff_text = string_field("diff");
        rec.description = string_field("message");
        auto label = obj.find("label");
        if (label == obj.end())
            throw SchemaError(line_no, "missing field 'label'");
        if (!label->is_number_integer())
            throw SchemaError(line_no, "field 'label' is not an integer");
        const auto value = label->get<long long>();
        if (value != 0 && value != 1)
            throw SchemaError(line_no, "label must be 0 or 1, got " + std::to_string(value));
        rec.label = static_cast<int>(value);
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<PatchRecord> load_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open dataset '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad())
        throw IoError("failed reading dataset '" + path.string() + "'");
    return parse_dataset(buffer.str());
}

void save_dataset(const std::filesystem::path& path, std::span<const PatchRecord> records)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write dataset '" + path.string() + "'");
    for (const auto& rec : records) {
        nlohmann::ordered_json obj;
        obj["id"] = rec.id;
        obj["diff"] = rec.diff_text;
        obj["message"] = rec.description;
        obj["label"] = rec.label;
        out << obj.dump() << '\n';
    }
    if (!out)
        throw IoError("failed writing dataset '" + path.string() + "'");
}

Vocabularies build_vocabularies(std::span<const PatchRecord> records, int min_freq)
{
    std::vector<std::vector<std::string>> tokens, lines, descs;
    for (const auto& rec : records) {
        const auto hunks = parse_unified_diff(rec.diff_text);
        tokens.push_back(patch_tokens(hunks));
        lines.push_back(patch_lines(hunks));
        descs.push_back(description_tokens(rec.description));
    }
    return { Vocab::build(tokens, min_freq), Vocab::build(lines, min_freq), Vocab::build(descs, min_freq) };
}

} // namespace multisem
