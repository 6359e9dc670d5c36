#include <multisem/checkpoint.hpp>
#include <multisem/cli.hpp>
#include <multisem/errors.hpp>
#include <multisem/gradcheck.hpp>
#include <multisem/synthetic.hpp>
#include <multisem/train.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace multisem::cli {

namespace {

constexpr double gradcheck_tolerance = 1e-4;

std::string format_score(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string read_text(const std::string& path, const char* what)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(std::string("cannot open ") + what + " '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::vector<EncodedPatch> encode_all(const std::vector<PatchRecord>& records, const Vocabularies& vocabs, const SequenceLimits& limits)
{
    std::vector<EncodedPatch> out;
    out.reserve(records.size());
    for (const auto& rec : records)
        out.push_back(encode_patch(rec, parse_unified_diff(rec.diff_text), vocabs.token, vocabs.line, vocabs.desc, limits));
    return out;
}

nlohmann::ordered_json report_json(const MetricsReport& r)
{
    return nlohmann::ordered_json::parse(r.to_json());
}

// ---------------------------------------------------------------- train

struct TrainOptions {
    std::string data;
    std::string valid;
    std::string config;
    std::string out;
    std::string history;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> max_epochs;
    std::vector<std::string> overrides;
    bool quiet = false;
};

int cmd_train(const TrainOptions& opt, std::ostream& out)
{
    RunConfig cfg = opt.config.empty() ? RunConfig {} : RunConfig::from_file(opt.config);
    cfg.apply_overrides(opt.overrides);
    if (opt.seed)
        cfg.train.seed = *opt.seed;
    if (opt.max_epochs)
        cfg.train.max_epochs = *opt.max_epochs;
    cfg.validate();

    const auto train_records = load_dataset(opt.data);
    const auto valid_records = opt.valid.empty() ? std::vector<PatchRecord> {} : load_dataset(opt.valid);

    // Vocabularies come from the training split only; unseen validation tokens map to UNK.
    Vocabularies vocabs = build_vocabularies(train_records, cfg.min_freq);
    const ModelConfig model_config = resolve_model_config(cfg, vocabs);
    const auto train_set = encode_all(train_records, vocabs, model_config.limits);
    const auto valid_set = encode_all(valid_records, vocabs, model_config.limits);

    const std::string history_path = opt.history.empty() ? opt.out + ".history.jsonl" : opt.history;
    std::ofstream history(history_path, std::ios::trunc);
    if (!history)
        throw IoError("cannot write history '" + history_path + "'");
    {
        nlohmann::ordered_json header;
        header["type"] = "config";
        header["config"] = cfg.to_text();
        header["parameters"] = init_params(model_config, cfg.train.seed).parameter_count();
        history << header.dump() << '\n';
    }

    double best_loss = std::numeric_limits<double>::infinity();
    auto on_epoch = [&](const EpochRecord& rec) {
        best_loss = std::min(best_loss, rec.train_loss);
        nlohmann::ordered_json line;
        line["type"] = "epoch";
        line["epoch"] = rec.epoch;
        line["train_loss"] = rec.train_loss;
        line["best_loss_so_far"] = best_loss;
        line["validation"] = rec.validation ? report_json(*rec.validation) : nlohmann::ordered_json(nullptr);
        line["seconds"] = rec.seconds;
        history << line.dump() << '\n' << std::flush;
        if (!opt.quiet) {
            out << "epoch " << rec.epoch << " loss " << rec.train_loss;
            if (rec.validation)
                out << " valid_f1 " << rec.validation->f1;
            out << '\n';
        }
    };

    TrainResult result = train(train_set, valid_set, model_config, cfg.train, on_epoch);
    save_checkpoint(opt.out, Checkpoint { cfg, vocabs, result.params });

    const bool validating = !valid_set.empty();
    const auto final_report = evaluate(validating ? valid_set : train_set, result.params, model_config, cfg.train.threshold);
    {
        nlohmann::ordered_json summary;
        summary["type"] = "summary";
        summary["epochs"] = result.history.epochs.size();
        summary["best_epoch"] = result.history.best_epoch ? nlohmann::ordered_json(*result.history.best_epoch) : nlohmann::ordered_json(nullptr);
        summary["report_split"] = validating ? "valid" : "train";
        summary["report"] = report_json(final_report);
        history << summary.dump() << '\n';
    }
    out << final_report.to_json() << '\n';
    return ok;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
    std::string model;
    std::string data;
    std::string out;
    std::string scores;
    std::optional<double> threshold;
};

int cmd_eval(const EvalOptions& opt, std::ostream& out)
{
    const Checkpoint ckpt = load_checkpoint(opt.model);
    const ModelConfig model_config = ckpt.model_config();
    const auto records = load_dataset(opt.data);
    const auto encoded = encode_all(records, ckpt.vocabs, model_config.limits);
    const double threshold = opt.threshold.value_or(ckpt.config.train.threshold);

    const auto scores = score_all(encoded, ckpt.params, model_config);
    std::vector<int> labels;
    for (const auto& rec : records)
        labels.push_back(rec.label);
    const MetricsReport rep = report(scores, labels, threshold);
    out << rep.to_json() << '\n';

    if (!opt.out.empty()) {
        std::ofstream file(opt.out, std::ios::trunc);
        if (!file)
            throw IoError("cannot write report '" + opt.out + "'");
        nlohmann::ordered_json doc;
        doc["report"] = report_json(rep);
        doc["config"] = ckpt.config.to_text();
        file << doc.dump() << '\n';
    }
    if (!opt.scores.empty()) {
        std::ofstream file(opt.scores, std::ios::trunc);
        if (!file)
            throw IoError("cannot write scores '" + opt.scores + "'");
        for (std::size_t i = 0; i < records.size(); ++i) {
            nlohmann::ordered_json line;
            line["id"] = records[i].id;
            line["label"] = records[i].label;
            line["score"] = scores[i];
            file << line.dump() << '\n';
        }
    }
    return ok;
}

// ---------------------------------------------------------------- predict

struct PredictOptions {
    std::string model;
    std::string patch;
    std::string message;
};

int cmd_predict(const PredictOptions& opt, std::ostream& out)
{
    const Checkpoint ckpt = load_checkpoint(opt.model);
    const ModelConfig model_config = ckpt.model_config();
    PatchRecord rec;
    rec.id = opt.patch;
    rec.diff_text = read_text(opt.patch, "patch");
    if (!opt.message.empty())
        rec.description = read_text(opt.message, "message");
    const auto hunks = parse_unified_diff(rec.diff_text);
    const auto enc = encode_patch(rec, hunks, ckpt.vocabs.token, ckpt.vocabs.line, ckpt.vocabs.desc, model_config.limits);
    const double p = score(enc, ckpt.params, model_config);
    const bool security = p >= ckpt.config.train.threshold;
    out << "score " << format_score(p) << '\n';
    out << "verdict " << (security ? "SECURITY" : "NON-SECURITY") << '\n';
    return ok;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOptions {
    std::string config;
    std::uint64_t seed = 0;
    double eps = 1e-5;
    std::vector<std::string> overrides;
};

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out)
{
    RunConfig cfg = opt.config.empty() ? toy_run_config() : RunConfig::from_text(read_text(opt.config, "config"), toy_run_config());
    cfg.apply_overrides(opt.overrides);
    cfg.validate();

    const auto records = synthetic_corpus(1, 1, opt.seed);
    const Vocabularies vocabs = build_vocabularies(records, cfg.min_freq);
    const ModelConfig model_config = resolve_model_config(cfg, vocabs);
    const auto batch = encode_all(records, vocabs, model_config.limits);
    const ModelParams params = probe_params(model_config, opt.seed);

    const auto result = finite_diff_check(
        [&](Graph& g) { return batch_loss(g, batch, params, model_config); }, params.named(), opt.eps);

    for (const auto& entry : result.per_param) {
        char line[256];
        std::snprintf(line, sizeof(line), "%-36s %.3e  (analytic %+.6e, numeric %+.6e)\n", entry.name.c_str(),
            entry.max_relative_error, entry.analytic, entry.numeric);
        out << line;
    }
    char summary[160];
    std::snprintf(summary, sizeof(summary), "max relative error %.3e in %s over %zu parameters\n", result.max_relative_error,
        result.worst_param.c_str(), params.parameter_count());
    out << summary;
    if (!(result.max_relative_error < gradcheck_tolerance)) {
        out << "FAILED: " << result.worst_param << '\n';
        return verification_failure;
    }
    out << "OK\n";
    return ok;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app { "Multilevel semantic embedding classifier for security patches" };
    app.require_subcommand(1);

    TrainOptions train_opt;
    auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint plus history log");
    train_cmd->add_option("--data", train_opt.data, "Training dataset (JSONL)")->required();
    train_cmd->add_option("--valid", train_opt.valid, "Validation dataset (JSONL); enables best-F1 selection");
    train_cmd->add_option("--config", train_opt.config, "Configuration file (YAML)");
    train_cmd->add_option("--out", train_opt.out, "Checkpoint path")->required();
    train_cmd->add_option("--history", train_opt.history, "History log path (default: <out>.history.jsonl)");
    train_cmd->add_option("--seed", train_opt.seed, "Overrides train.seed");
    train_cmd->add_option("--max-epochs", train_opt.max_epochs, "Overrides train.max_epochs");
    train_cmd->add_option("--set", train_opt.overrides, "Config override section.key=value (repeatable)");
    train_cmd->add_flag("--quiet", train_opt.quiet, "Do not print per-epoch progress");

    EvalOptions eval_opt;
    auto* eval_cmd = app.add_subcommand("eval", "Score a dataset with a trained model");
    eval_cmd->add_option("--model", eval_opt.model, "Checkpoint path")->required();
    eval_cmd->add_option("--data", eval_opt.data, "Dataset (JSONL)")->required();
    eval_cmd->add_option("--out", eval_opt.out, "Also write the report (with config) to this file");
    eval_cmd->add_option("--scores", eval_opt.scores, "Write per-record scores (JSONL) to this file");
    eval_cmd->add_option("--threshold", eval_opt.threshold, "Overrides the checkpoint's decision threshold");

    PredictOptions predict_opt;
    auto* predict_cmd = app.add_subcommand("predict", "Score a single diff file");
    predict_cmd->add_option("--model", predict_opt.model, "Checkpoint path")->required();
    predict_cmd->add_option("--patch", predict_opt.patch, "Unified diff file")->required();
    predict_cmd->add_option("--message", predict_opt.message, "Commit message file");

    GradcheckOptions grad_opt;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Compare model gradients with central finite differences");
    grad_cmd->add_option("--config", grad_opt.config, "Configuration file (YAML) on top of the toy defaults");
    grad_cmd->add_option("--seed", grad_opt.seed, "Seed for the generated batch and the parameters");
    grad_cmd->add_option("--eps", grad_opt.eps, "Finite-difference step");
    grad_cmd->add_option("--set", grad_opt.overrides, "Config override section.key=value (repeatable)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : input_error;
    }

    try {
        if (train_cmd->parsed())
            return cmd_train(train_opt, out);
        if (eval_cmd->parsed())
            return cmd_eval(eval_opt, out);
        if (predict_cmd->parsed())
            return cmd_predict(predict_opt, out);
        if (grad_cmd->parsed())
            return cmd_gradcheck(grad_opt, out);
    } catch (const SchemaError& e) {
        err << "error: dataset schema: " << e.what() << '\n';
        return input_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return input_error;
    }
    return input_error;
}

} // namespace multisem::cli
