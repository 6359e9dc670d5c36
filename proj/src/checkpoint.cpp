#include <multisem/checkpoint.hpp>
#include <multisem/errors.hpp>

#include <zlib.h>

#include <bit>
#include <fstream>
#include <sstream>

namespace multisem {

namespace {

constexpr std::string_view magic = "MSEMCKPT";

class Writer {
public:
    void bytes(std::string_view s) { m_out.append(s); }

    template <class T>
    void integer(T v)
    {
        for (std::size_t i = 0; i < sizeof(T); ++i)
            m_out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }

    void real(double v) { integer(std::bit_cast<std::uint64_t>(v)); }

    void string(std::string_view s)
    {
        integer<std::uint64_t>(s.size());
        bytes(s);
    }

    std::string take() { return std::move(m_out); }
    const std::string& buffer() const { return m_out; }

private:
    std::string m_out;
};

class Reader {
public:
    explicit Reader(std::string_view in) : m_in(in) {}

    std::string_view bytes(std::size_t n)
    {
        if (n > m_in.size() - m_pos)
            throw CheckpointFormatError("checkpoint truncated");
        auto out = m_in.substr(m_pos, n);
        m_pos += n;
        return out;
    }

    template <class T>
    T integer()
    {
        auto raw = bytes(sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
        return static_cast<T>(v);
    }

    double real() { return std::bit_cast<double>(integer<std::uint64_t>()); }

    std::string string() { return std::string(bytes(integer<std::uint64_t>())); }

    bool done() const { return m_pos == m_in.size(); }
    std::size_t remaining() const { return m_in.size() - m_pos; }

private:
    std::string_view m_in;
    std::size_t m_pos = 0;
};

std::uint32_t checksum(std::string_view data)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    constexpr std::size_t chunk = 1u << 30;
    for (std::size_t pos = 0; pos < data.size(); pos += chunk) {
        const auto n = std::min(chunk, data.size() - pos);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + pos), static_cast<uInt>(n));
    }
    return static_cast<std::uint32_t>(crc);
}

void write_vocab(Writer& w, const Vocab& vocab)
{
    w.integer<std::uint64_t>(vocab.size());
    for (const auto& tok : vocab.tokens())
        w.string(tok);
}

Vocab read_vocab(Reader& r)
{
    const auto n = r.integer<std::uint64_t>();
    std::vector<std::string> tokens;
    for (std::uint64_t i = 0; i < n; ++i)
        tokens.push_back(r.string());
    try {
        return Vocab::from_tokens(std::move(tokens));
    } catch (const Error& e) {
        throw CheckpointFormatError(std::string("bad vocabulary: ") + e.what());
    }
}

} // namespace

ModelConfig resolve_model_config(const RunConfig& config, const Vocabularies& vocabs)
{
    ModelConfig m = config.model;
    m.token_vocab = vocabs.token.size();
    m.line_vocab = vocabs.line.size();
    m.desc_vocab = vocabs.desc.size();
    return m;
}

ModelConfig Checkpoint::model_config() const
{
    return resolve_model_config(config, vocabs);
}

std::string serialize_checkpoint(const Checkpoint& checkpoint)
{
    Writer w;
    w.bytes(magic);
    w.integer<std::uint32_t>(Checkpoint::format_version);
    w.string(checkpoint.config.to_text());
    write_vocab(w, checkpoint.vocabs.token);
    write_vocab(w, checkpoint.vocabs.line);
    write_vocab(w, checkpoint.vocabs.desc);
    const auto named = checkpoint.params.named();
    w.integer<std::uint64_t>(named.size());
    for (const auto& [name, t] : named) {
        w.string(name);
        w.integer<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape())
            w.integer<std::uint64_t>(d);
        for (double v : t.data())
            w.real(v);
    }
    w.integer<std::uint32_t>(checksum(w.buffer()));
    return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes)
{
    if (bytes.size() < magic.size() + 8 || bytes.substr(0, magic.size()) != magic)
        throw ChecksumMismatch("not a checkpoint file (bad magic)");
    const auto body = bytes.substr(0, bytes.size() - 4);
    Reader tail(bytes.substr(bytes.size() - 4));
    if (tail.integer<std::uint32_t>() != checksum(body))
        throw ChecksumMismatch("checkpoint checksum mismatch");

    Reader r(body);
    r.bytes(magic.size());
    const auto version = r.integer<std::uint32_t>();
    if (version != Checkpoint::format_version)
        throw VersionUnsupported("checkpoint format version " + std::to_string(version) + " is not supported");

    Checkpoint checkpoint;
    checkpoint.config = RunConfig::from_text(r.string());
    checkpoint.vocabs.token = read_vocab(r);
    checkpoint.vocabs.line = read_vocab(r);
    checkpoint.vocabs.desc = read_vocab(r);

    const auto count = r.integer<std::uint64_t>();
    std::vector<NamedTensor> named;
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name = r.string();
        const auto rank = r.integer<std::uint32_t>();
        if (rank == 0 || rank > 3)
            throw CheckpointFormatError("parameter '" + name + "' has rank " + std::to_string(rank));
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(r.integer<std::uint64_t>());
        if (shape_size(shape) > r.remaining() / sizeof(double))
            throw CheckpointFormatError("checkpoint truncated in parameter '" + name + "'");
        std::vector<double> values(shape_size(shape));
        for (double& v : values)
            v = r.real();
        named.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
    }
    if (!r.done())
        throw CheckpointFormatError("trailing bytes after parameters");
    checkpoint.params = params_from_named(checkpoint.model_config(), named);
    return checkpoint;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint)
{
    const auto bytes = serialize_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize_checkpoint(buffer.str());
}

} // namespace multisem
