#include <multisem/errors.hpp>
#include <multisem/run_config.hpp>

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace multisem {

namespace {

std::string format_double(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, end);
    // Keep the value a float in YAML's eyes.
    if (s.find_first_of(".eEn") == std::string::npos)
        s += ".0";
    return s;
}

const std::map<std::string, std::set<std::string>>& schema()
{
    static const std::map<std::string, std::set<std::string>> keys {
        { "model", { "embed_dim", "kernel_sizes", "conv_out", "residual_blocks", "residual_out", "pool_window", "pool_score", "refine_dim", "attn_dim" } },
        { "levels", { "token", "sentence", "description" } },
        { "ingest", { "nw", "ns", "nd", "min_freq" } },
        { "train", { "optimizer", "learning_rate", "beta1", "beta2", "epsilon", "batch_size", "max_epochs", "patience", "seed", "threshold" } },
    };
    return keys;
}

template <class T>
T scalar(const YAML::Node& node, const std::string& key)
{
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw InvalidConfig("config key '" + key + "' has an invalid value");
    }
}

std::size_t count(const YAML::Node& node, const std::string& key)
{
    const auto v = scalar<long long>(node, key);
    if (v < 0)
        throw InvalidConfig("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

void check_schema(const YAML::Node& root)
{
    if (!root || root.IsNull())
        return;
    if (!root.IsMap())
        throw InvalidConfig("config must be a mapping of sections");
    for (const auto& section : root) {
        const auto name = section.first.as<std::string>();
        auto it = schema().find(name);
        if (it == schema().end())
            throw InvalidConfig("unknown config section '" + name + "'");
        if (section.second.IsNull())
            continue;
        if (!section.second.IsMap())
            throw InvalidConfig("config section '" + name + "' must be a mapping");
        for (const auto& entry : section.second) {
            const auto key = entry.first.as<std::string>();
            if (!it->second.contains(key))
                throw InvalidConfig("unknown config key '" + name + "." + key + "'");
        }
    }
}

RunConfig from_node(const YAML::Node& root, RunConfig c)
{
    check_schema(root);
    if (!root || root.IsNull())
        return c;

    auto each = [&](const char* section, auto&& fn) {
        const auto node = root[section];
        if (!node || node.IsNull())
            return;
        for (const auto& entry : node)
            fn(entry.first.as<std::string>(), entry.second, std::string(section) + "." + entry.first.as<std::string>());
    };

    each("model", [&](const std::string& key, const YAML::Node& v, const std::string& path) {
        auto& m = c.model;
        if (key == "embed_dim") m.embed_dim = count(v, path);
        else if (key == "kernel_sizes") {
            if (!v.IsSequence())
                throw InvalidConfig("config key '" + path + "' must be a list");
            m.kernel_sizes.clear();
            for (const auto& k : v)
                m.kernel_sizes.push_back(count(k, path));
        }
        else if (key == "conv_out") m.conv_out = count(v, path);
        else if (key == "residual_blocks") m.residual_blocks = count(v, path);
        else if (key == "residual_out") m.residual_out = count(v, path);
        else if (key == "pool_window") m.pool_window = count(v, path);
        else if (key == "pool_score") m.pool_score = pool_score_from_string(scalar<std::string>(v, path));
        else if (key == "refine_dim") m.refine_dim = count(v, path);
        else if (key == "attn_dim") m.attn_dim = count(v, path);
    });
    each("levels", [&](const std::string& key, const YAML::Node& v, const std::string& path) {
        auto& l = c.model.levels;
        (key == "token" ? l.token : key == "sentence" ? l.sentence : l.description) = scalar<bool>(v, path);
    });
    each("ingest", [&](const std::string& key, const YAML::Node& v, const std::string& path) {
        if (key == "nw") c.model.limits.nw = count(v, path);
        else if (key == "ns") c.model.limits.ns = count(v, path);
        else if (key == "nd") c.model.limits.nd = count(v, path);
        else if (key == "min_freq") c.min_freq = scalar<int>(v, path);
    });
    each("train", [&](const std::string& key, const YAML::Node& v, const std::string& path) {
        auto& t = c.train;
        if (key == "optimizer") t.optimizer = optimizer_from_string(scalar<std::string>(v, path));
        else if (key == "learning_rate") t.learning_rate = scalar<double>(v, path);
        else if (key == "beta1") t.beta1 = scalar<double>(v, path);
        else if (key == "beta2") t.beta2 = scalar<double>(v, path);
        else if (key == "epsilon") t.epsilon = scalar<double>(v, path);
        else if (key == "batch_size") t.batch_size = count(v, path);
        else if (key == "max_epochs") t.max_epochs = count(v, path);
        else if (key == "patience") t.patience = count(v, path);
        else if (key == "seed") t.seed = scalar<std::uint64_t>(v, path);
        else if (key == "threshold") t.threshold = scalar<double>(v, path);
    });
    return c;
}

YAML::Node parse_yaml(std::string_view text)
{
    try {
        return YAML::Load(std::string(text));
    } catch (const YAML::Exception& e) {
        throw InvalidConfig(std::string("config is not valid YAML: ") + e.what());
    }
}

} // namespace

std::string RunConfig::to_text() const
{
    std::ostringstream out;
    const auto& m = model;
    out << "model:\n";
    out << "  embed_dim: " << m.embed_dim << '\n';
    out << "  kernel_sizes: [";
    for (std::size_t i = 0; i < m.kernel_sizes.size(); ++i)
        out << (i ? ", " : "") << m.kernel_sizes[i];
    out << "]\n";
    out << "  conv_out: " << m.conv_out << '\n';
    out << "  residual_blocks: " << m.residual_blocks << '\n';
    out << "  residual_out: " << m.residual_out << '\n';
    out << "  pool_window: " << m.pool_window << '\n';
    out << "  pool_score: " << to_string(m.pool_score) << '\n';
    out << "  refine_dim: " << m.refine_dim << '\n';
    out << "  attn_dim: " << m.attn_dim << '\n';
    auto flag = [](bool b) { return b ? "true" : "false"; };
    out << "levels:\n";
    out << "  token: " << flag(m.levels.token) << '\n';
    out << "  sentence: " << flag(m.levels.sentence) << '\n';
    out << "  description: " << flag(m.levels.description) << '\n';
    out << "ingest:\n";
    out << "  nw: " << m.limits.nw << '\n';
    out << "  ns: " << m.limits.ns << '\n';
    out << "  nd: " << m.limits.nd << '\n';
    out << "  min_freq: " << min_freq << '\n';
    const auto& t = train;
    out << "train:\n";
    out << "  optimizer: " << to_string(t.optimizer) << '\n';
    out << "  learning_rate: " << format_double(t.learning_rate) << '\n';
    out << "  beta1: " << format_double(t.beta1) << '\n';
    out << "  beta2: " << format_double(t.beta2) << '\n';
    out << "  epsilon: " << format_double(t.epsilon) << '\n';
    out << "  batch_size: " << t.batch_size << '\n';
    out << "  max_epochs: " << t.max_epochs << '\n';
    out << "  patience: " << t.patience << '\n';
    out << "  seed: " << t.seed << '\n';
    out << "  threshold: " << format_double(t.threshold) << '\n';
    return out.str();
}

RunConfig RunConfig::from_text(std::string_view text)
{
    return from_text(text, RunConfig {});
}

RunConfig RunConfig::from_text(std::string_view text, const RunConfig& base)
{
    return from_node(parse_yaml(text), base);
}

RunConfig RunConfig::from_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open config '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return from_text(buffer.str());
}

void RunConfig::apply_overrides(const std::vector<std::string>& assignments)
{
    for (const auto& assignment : assignments) {
        const auto eq = assignment.find('=');
        const auto dot = assignment.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw InvalidConfig("override '" + assignment + "' is not of the form section.key=value");
        YAML::Node root;
        root[assignment.substr(0, dot)][assignment.substr(dot + 1, eq - dot - 1)] = parse_yaml(assignment.substr(eq + 1));
        *this = from_node(root, *this);
    }
}

void RunConfig::validate() const
{
    ModelConfig m = model;
    m.token_vocab = m.line_vocab = m.desc_vocab = 2;
    m.validate();
    train.validate();
    if (min_freq < 1)
        throw InvalidConfig("ingest.min_freq must be >= 1");
}

RunConfig toy_run_config()
{
    RunConfig c;
    c.model = toy_model_config();
    c.min_freq = 1;
    return c;
}

} // namespace multisem
