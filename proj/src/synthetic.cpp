#include <multisem/synthetic.hpp>

#include <array>
#include <random>
#include <sstream>
#include <string>

namespace multisem {

namespace {

constexpr std::array functions { "parse_header", "read_packet", "copy_frame", "decode_entry", "load_table", "handle_request",
    "fill_buffer", "scan_record" };
constexpr std::array files { "net/packet.c", "fs/table.c", "media/frame.c", "lib/decode.c", "drivers/io.c" };
constexpr std::array buffers { "buf", "data", "dst", "out" };
constexpr std::array lengths { "len", "size", "count", "nbytes" };

template <class Array>
const char* pick(const Array& options, std::mt19937_64& rng)
{
    return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

struct Change {
    std::vector<std::string> context_before;
    std::vector<std::string> removed;
    std::vector<std::string> added;
    std::vector<std::string> context_after;
};

Change security_change(std::mt19937_64& rng)
{
    const std::string buf = pick(buffers, rng);
    const std::string len = pick(lengths, rng);
    const std::string access = "\tmemcpy(" + buf + ", src, " + len + ");";
    Change c;
    c.context_before = { "\tint ret = 0;", "" };
    c.context_after = { "\treturn ret;" };
    switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
        c.removed = { access };
        c.added = { "\tif (" + len + " > sizeof(" + buf + "))", "\t\treturn -EINVAL;", access };
        break;
    case 1:
        c.removed = { "\t" + buf + "[idx] = value;" };
        c.added = { "\tif (idx >= " + len + ")", "\t\treturn -EINVAL;", "\t" + buf + "[idx] = value;" };
        break;
    case 2:
        c.removed = { access };
        c.added = { "\tif (offset + " + len + " > " + buf + "_len)", "\t\tgoto out;", access };
        break;
    default:
        c.removed = { "\tfor (i = 0; i <= " + len + "; i++)" };
        c.added = { "\tif (" + len + " >= MAX_ENTRIES)", "\t\treturn -EINVAL;", "\tfor (i = 0; i < " + len + "; i++)" };
        break;
    }
    return c;
}

Change other_change(std::mt19937_64& rng)
{
    const std::string buf = pick(buffers, rng);
    const std::string len = pick(lengths, rng);
    Change c;
    c.context_before = { "\tint ret = 0;", "" };
    c.context_after = { "\treturn ret;" };
    switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
        c.removed = { "\tret = process(" + buf + ");" };
        c.added = { "\tret = process_items(" + buf + ");" };
        break;
    case 1:
        c.removed = { "\tret = submit(" + buf + ", " + len + ");" };
        c.added = { "\tpr_debug(\"submitting %zu items\\n\", " + len + ");", "\tret = submit(" + buf + ", " + len + ");" };
        break;
    case 2:
        c.removed = { "\tcfg.timeout = 30;" };
        c.added = { "\tcfg.timeout = 60;", "\tcfg.retries = 3;" };
        break;
    default:
        c.removed = { "\tstats_update(" + buf + ");" };
        c.added = { "\tstats_update(" + buf + ", STATS_FULL);", "\ttrace_event(\"update\");" };
        break;
    }
    return c;
}

std::string render(const Change& c, const std::string& file, const std::string& function, std::mt19937_64& rng)
{
    const int start = std::uniform_int_distribution<int>(10, 400)(rng);
    const auto ctx = c.context_before.size() + c.context_after.size();
    std::ostringstream out;
    out << "diff --git a/" << file << " b/" << file << '\n';
    out << "--- a/" << file << '\n';
    out << "+++ b/" << file << '\n';
    out << "@@ -" << start << ',' << ctx + c.removed.size() << " +" << start << ',' << ctx + c.added.size() << " @@ static int "
        << function << "(void)\n";
    for (const auto& l : c.context_before)
        out << ' ' << l << '\n';
    for (const auto& l : c.removed)
        out << '-' << l << '\n';
    for (const auto& l : c.added)
        out << '+' << l << '\n';
    for (const auto& l : c.context_after)
        out << ' ' << l << '\n';
    return out.str();
}

} // namespace

std::vector<PatchRecord> synthetic_corpus(std::size_t security, std::size_t other, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::vector<PatchRecord> records;
    std::size_t made_security = 0, made_other = 0;
    while (made_security < security || made_other < other) {
        const bool is_security = made_security < security && (made_other >= other || records.size() % 2 == 0);
        const std::string function = pick(functions, rng);
        const std::string file = pick(files, rng);
        PatchRecord rec;
        rec.label = is_security ? 1 : 0;
        rec.id = (is_security ? "sec-" : "gen-") + std::to_string(is_security ? made_security : made_other);
        const Change change = is_security ? security_change(rng) : other_change(rng);
        rec.diff_text = render(change, file, function, rng);
        rec.description = is_security ? "check input length in " + function
                                      : "update " + function + " in " + file;
        records.push_back(std::move(rec));
        (is_security ? made_security : made_other) += 1;
    }
    return records;
}

} // namespace multisem
