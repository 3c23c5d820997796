// Command-line front end: dataset generation, training, explanation and
// fidelity/sparsity evaluation over the JSONL event format.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctlrp/eval.hpp"
#include "ctlrp/explain.hpp"
#include "ctlrp/graphdata.hpp"
#include "ctlrp/html_report.hpp"
#include "ctlrp/io.hpp"
#include "ctlrp/model.hpp"
#include "ctlrp/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Binds config-file keys to CLI options with precedence flag > file > default.
class ConfigBinder {
public:
    void bind(const std::string& key, CLI::Option* opt, std::function<void(const json&)> apply) {
        entries_.push_back({key, opt, std::move(apply)});
    }

    void apply_file(const std::string& path) {
        if (path.empty()) return;
        json cfg = json::parse(ctlrp::read_file(path));
        if (!cfg.is_object()) throw ctlrp::ConfigError("config file must hold a JSON object");
        for (auto it = cfg.begin(); it != cfg.end(); ++it) {
            bool known = false;
            for (auto& e : entries_) {
                if (e.key != it.key()) continue;
                known = true;
                if (e.opt->count() == 0) e.apply(it.value());
                break;
            }
            if (!known) throw ctlrp::ConfigError("unknown config key '" + it.key() + "'");
        }
    }

private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const json&)> apply;
    };
    std::vector<Entry> entries_;
};

template <class T>
void bind_value(ConfigBinder& b, const std::string& key, CLI::Option* opt, T& target) {
    b.bind(key, opt, [&target](const json& v) { target = v.get<T>(); });
}

ctlrp::BiGcnModel load_checkpoint(const std::string& path) {
    return ctlrp::checkpoint_from_json(json::parse(ctlrp::read_file(path)));
}

void check_compatible(const ctlrp::BiGcnModel& model, const std::vector<ctlrp::PropagationEvent>& events) {
    for (const auto& ev : events) {
        if (ev.label >= model.num_classes)
            throw ctlrp::ConfigError("dataset label " + std::to_string(ev.label) +
                                     " exceeds checkpoint class count " + std::to_string(model.num_classes));
        for (const auto& p : ev.posts)
            for (int t : p.tokens)
                if (t >= model.vocab_size)
                    throw ctlrp::ConfigError("dataset token " + std::to_string(t) +
                                             " exceeds checkpoint vocabulary " + std::to_string(model.vocab_size));
    }
}

int run(int argc, char** argv) {
    CLI::App app{"CT-LRP rumour-classifier explanation toolkit"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic planted-token dataset");
    ctlrp::SyntheticConfig gen_cfg;
    std::string gen_config_path, gen_out = ".";
    ConfigBinder gen_bind;
    bind_value(gen_bind, "events", gen->add_option("--events", gen_cfg.num_events, "Number of events"), gen_cfg.num_events);
    bind_value(gen_bind, "classes", gen->add_option("--classes", gen_cfg.num_classes, "Number of classes"), gen_cfg.num_classes);
    bind_value(gen_bind, "vocab", gen->add_option("--vocab", gen_cfg.vocab_size, "Vocabulary size"), gen_cfg.vocab_size);
    bind_value(gen_bind, "planted", gen->add_option("--planted", gen_cfg.planted_tokens_per_class, "Planted tokens per class"), gen_cfg.planted_tokens_per_class);
    bind_value(gen_bind, "noise", gen->add_option("--noise", gen_cfg.noise_rate, "Noise rate in [0,1]"), gen_cfg.noise_rate);
    bind_value(gen_bind, "tree-min", gen->add_option("--tree-min", gen_cfg.tree_size_min, "Min nodes per event"), gen_cfg.tree_size_min);
    bind_value(gen_bind, "tree-max", gen->add_option("--tree-max", gen_cfg.tree_size_max, "Max nodes per event"), gen_cfg.tree_size_max);
    bind_value(gen_bind, "tokens-min", gen->add_option("--tokens-min", gen_cfg.tokens_per_post_min, "Min tokens per post"), gen_cfg.tokens_per_post_min);
    bind_value(gen_bind, "tokens-max", gen->add_option("--tokens-max", gen_cfg.tokens_per_post_max, "Max tokens per post"), gen_cfg.tokens_per_post_max);
    bind_value(gen_bind, "seed", gen->add_option("--seed", gen_cfg.seed, "RNG seed"), gen_cfg.seed);
    bind_value(gen_bind, "out", gen->add_option("--out", gen_out, "Output directory"), gen_out);
    gen->add_option("--config", gen_config_path, "JSON config file");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "Train the two-branch graph classifier");
    ctlrp::TrainConfig train_cfg;
    std::string tr_data, tr_config_path, tr_out = ".", tr_pooling = "mean";
    int tr_classes = 0, tr_embed_dim = 32, tr_hidden_dim = 64;
    ConfigBinder tr_bind;
    auto* tr_data_opt = tr->add_option("--data", tr_data, "Dataset JSONL path");
    bind_value(tr_bind, "data", tr_data_opt, tr_data);
    bind_value(tr_bind, "classes", tr->add_option("--classes", tr_classes, "Class count (default: inferred)"), tr_classes);
    bind_value(tr_bind, "epochs", tr->add_option("--epochs", train_cfg.epochs, "Training epochs"), train_cfg.epochs);
    bind_value(tr_bind, "patience", tr->add_option("--patience", train_cfg.patience, "Early-stop patience"), train_cfg.patience);
    bind_value(tr_bind, "lr", tr->add_option("--lr", train_cfg.learning_rate, "Learning rate"), train_cfg.learning_rate);
    bind_value(tr_bind, "batch", tr->add_option("--batch", train_cfg.batch_size, "Batch size"), train_cfg.batch_size);
    bind_value(tr_bind, "val-fraction", tr->add_option("--val-fraction", train_cfg.val_fraction, "Validation fraction"), train_cfg.val_fraction);
    bind_value(tr_bind, "pooling", tr->add_option("--pooling", tr_pooling, "mean|max|mlp"), tr_pooling);
    bind_value(tr_bind, "embed-dim", tr->add_option("--embed-dim", tr_embed_dim, "Embedding dimension"), tr_embed_dim);
    bind_value(tr_bind, "hidden-dim", tr->add_option("--hidden-dim", tr_hidden_dim, "Conv hidden dimension"), tr_hidden_dim);
    bind_value(tr_bind, "seed", tr->add_option("--seed", train_cfg.seed, "RNG seed"), train_cfg.seed);
    bind_value(tr_bind, "out", tr->add_option("--out", tr_out, "Output directory"), tr_out);
    tr->add_option("--config", tr_config_path, "JSON config file");

    // ---- explain ----
    auto* ex = app.add_subcommand("explain", "Explain predictions for events");
    std::string ex_checkpoint, ex_data, ex_method = "ct-lrp", ex_config_path, ex_out = ".", ex_mode = "conserving", ex_vocab;
    std::vector<std::string> ex_events;
    double ex_eps = 1e-6;
    bool ex_html = false;
    int ex_jobs = 1;
    std::uint64_t ex_seed = 0;
    ConfigBinder ex_bind;
    bind_value(ex_bind, "checkpoint", ex->add_option("--checkpoint", ex_checkpoint, "Checkpoint path"), ex_checkpoint);
    bind_value(ex_bind, "data", ex->add_option("--data", ex_data, "Dataset JSONL path"), ex_data);
    bind_value(ex_bind, "method", ex->add_option("--method", ex_method, "ct-lrp|token-lrp|node-lrp|grad-cam|c-eb"), ex_method);
    bind_value(ex_bind, "event", ex->add_option("--event", ex_events, "Event ids (default: all)"), ex_events);
    bind_value(ex_bind, "eps", ex->add_option("--eps", ex_eps, "LRP epsilon"), ex_eps);
    bind_value(ex_bind, "mode", ex->add_option("--mode", ex_mode, "conserving|paper-literal"), ex_mode);
    bind_value(ex_bind, "html", ex->add_flag("--html", ex_html, "Also write token-highlight HTML"), ex_html);
    bind_value(ex_bind, "vocab", ex->add_option("--vocab", ex_vocab, "Vocabulary JSON for HTML token text"), ex_vocab);
    bind_value(ex_bind, "jobs", ex->add_option("--jobs", ex_jobs, "Parallel worker threads"), ex_jobs);
    bind_value(ex_bind, "seed", ex->add_option("--seed", ex_seed, "RNG seed (unused, accepted for uniformity)"), ex_seed);
    bind_value(ex_bind, "out", ex->add_option("--out", ex_out, "Output directory"), ex_out);
    ex->add_option("--config", ex_config_path, "JSON config file");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "Fidelity/sparsity sweep over methods");
    std::string ev_checkpoint, ev_data, ev_config_path, ev_out = ".", ev_mode = "conserving", ev_dataset_name = "dataset";
    std::vector<std::string> ev_methods;
    ctlrp::EvalConfig eval_cfg;
    double ev_eps = 1e-6;
    int ev_jobs = 1;
    ConfigBinder ev_bind;
    bind_value(ev_bind, "checkpoint", ev->add_option("--checkpoint", ev_checkpoint, "Checkpoint path"), ev_checkpoint);
    bind_value(ev_bind, "data", ev->add_option("--data", ev_data, "Dataset JSONL path"), ev_data);
    bind_value(ev_bind, "method", ev->add_option("--method", ev_methods, "Methods (default: all)"), ev_methods);
    bind_value(ev_bind, "grid", ev->add_option("--grid", eval_cfg.sparsity_grid, "Sparsity levels"), eval_cfg.sparsity_grid);
    bind_value(ev_bind, "threshold", ev->add_option("--threshold", eval_cfg.threshold, "Attribution threshold"), eval_cfg.threshold);
    bind_value(ev_bind, "folds", ev->add_option("--folds", eval_cfg.folds, "Split count"), eval_cfg.folds);
    bind_value(ev_bind, "eps", ev->add_option("--eps", ev_eps, "LRP epsilon"), ev_eps);
    bind_value(ev_bind, "mode", ev->add_option("--mode", ev_mode, "conserving|paper-literal"), ev_mode);
    bind_value(ev_bind, "dataset-name", ev->add_option("--dataset-name", ev_dataset_name, "Name written into reports"), ev_dataset_name);
    bind_value(ev_bind, "jobs", ev->add_option("--jobs", ev_jobs, "Parallel worker threads"), ev_jobs);
    bind_value(ev_bind, "seed", ev->add_option("--seed", eval_cfg.seed, "Split seed"), eval_cfg.seed);
    bind_value(ev_bind, "out", ev->add_option("--out", ev_out, "Output directory"), ev_out);
    ev->add_option("--config", ev_config_path, "JSON config file");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        gen_bind.apply_file(gen_config_path);
        ctlrp::SyntheticDataset ds = ctlrp::generate_synthetic(gen_cfg);
        fs::path out(gen_out);
        ctlrp::atomic_write(out / "dataset.jsonl", ctlrp::serialize_events(ds.events));
        ctlrp::atomic_write(out / "vocab.json", ds.vocab.to_json().dump(2) + "\n");
        ctlrp::atomic_write(out / "planted.json", ctlrp::registry_to_json(ds.planted).dump(2) + "\n");
        std::size_t tokens = 0;
        for (const auto& e : ds.events) tokens += e.total_tokens();
        std::cout << "wrote " << ds.events.size() << " events, " << tokens << " tokens, "
                  << gen_cfg.num_classes << " classes to " << out.string() << "\n";
        return 0;
    }

    if (tr->parsed()) {
        tr_bind.apply_file(tr_config_path);
        if (tr_data.empty()) throw ctlrp::ConfigError("train: --data is required");
        auto events = ctlrp::load_events(tr_data);
        if (events.empty()) throw ctlrp::ConfigError("train: dataset is empty");
        int classes = tr_classes;
        int max_token = 0;
        for (const auto& e : events) {
            classes = std::max(classes, e.label + 1);
            for (const auto& p : e.posts)
                for (int t : p.tokens) max_token = std::max(max_token, t);
        }
        ctlrp::BiGcnModel model = ctlrp::BiGcnModel::init(
            max_token + 1, classes, train_cfg.seed, ctlrp::pooling_from_string(tr_pooling),
            tr_embed_dim, tr_hidden_dim);
        ctlrp::TrainLog log = ctlrp::train(model, events, train_cfg);

        fs::path out(tr_out);
        ctlrp::atomic_write(out / "checkpoint.json", ctlrp::checkpoint_to_json(model).dump() + "\n");
        json jlog = json::array();
        for (const auto& e : log.epochs)
            jlog.push_back({{"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"train_accuracy", e.train_accuracy},
                            {"val_loss", e.val_loss},
                            {"val_accuracy", e.val_accuracy}});
        ctlrp::atomic_write(out / "train_log.json",
                            json{{"epochs", jlog}, {"stopped_epoch", log.stopped_epoch}}.dump(2) + "\n");
        const auto& last = log.epochs.back();
        std::cout << "stopped at epoch " << log.stopped_epoch << ", val accuracy "
                  << last.val_accuracy << ", checkpoint in " << out.string() << "\n";
        return 0;
    }

    if (ex->parsed()) {
        ex_bind.apply_file(ex_config_path);
        bool known = false;
        for (const auto& m : ctlrp::known_methods()) known = known || m == ex_method;
        if (!known) {
            std::string names;
            for (const auto& m : ctlrp::known_methods()) names += (names.empty() ? "" : ", ") + m;
            throw ctlrp::ConfigError("unknown method '" + ex_method + "' (valid: " + names + ")");
        }
        ctlrp::BiGcnModel model = load_checkpoint(ex_checkpoint);
        auto all_events = ctlrp::load_events(ex_data);
        check_compatible(model, all_events);
        std::vector<ctlrp::PropagationEvent> events;
        if (ex_events.empty()) {
            events = std::move(all_events);
        } else {
            for (const auto& id : ex_events) {
                auto it = std::find_if(all_events.begin(), all_events.end(),
                                       [&](const auto& e) { return e.event_id == id; });
                if (it == all_events.end()) throw ctlrp::InputError("event '" + id + "' not found");
                events.push_back(*it);
            }
        }
        ctlrp::Epsilon eps(ex_eps);
        ctlrp::PoolBackwardMode mode = ctlrp::pool_mode_from_string(ex_mode);
        std::optional<ctlrp::Vocabulary> vocab;
        if (!ex_vocab.empty())
            vocab = ctlrp::Vocabulary::from_json(json::parse(ctlrp::read_file(ex_vocab)));

        std::vector<ctlrp::Explanation> results(events.size());
        ctlrp::detail::parallel_for(events.size(), ex_jobs, [&](std::size_t i) {
            results[i] = ctlrp::explain_with_method(model, events[i], ex_method, eps, mode);
        });

        fs::path out(ex_out);
        for (std::size_t i = 0; i < events.size(); ++i) {
            ctlrp::atomic_write(out / ("explain_" + events[i].event_id + ".json"),
                                ctlrp::explanation_to_json(results[i]).dump(2) + "\n");
            if (ex_html && results[i].token_level())
                ctlrp::atomic_write(out / ("explain_" + events[i].event_id + ".html"),
                                    ctlrp::render_explanation_html(results[i], events[i],
                                                                   vocab ? &*vocab : nullptr));
        }
        std::cout << "wrote " << events.size() << " explanation(s) to " << out.string() << "\n";
        return 0;
    }

    if (ev->parsed()) {
        ev_bind.apply_file(ev_config_path);
        if (ev_methods.empty()) ev_methods = ctlrp::known_methods();
        for (const auto& m : ev_methods) {
            bool known = false;
            for (const auto& k : ctlrp::known_methods()) known = known || k == m;
            if (!known) {
                std::string names;
                for (const auto& k : ctlrp::known_methods()) names += (names.empty() ? "" : ", ") + k;
                throw ctlrp::ConfigError("unknown method '" + m + "' (valid: " + names + ")");
            }
        }
        ctlrp::BiGcnModel model = load_checkpoint(ev_checkpoint);
        auto events = ctlrp::load_events(ev_data);
        check_compatible(model, events);
        ctlrp::EvalReport report =
            ctlrp::sweep(model, events, ev_methods, eval_cfg, ev_jobs, ctlrp::Epsilon(ev_eps),
                         ctlrp::pool_mode_from_string(ev_mode));
        fs::path out(ev_out);
        ctlrp::atomic_write(out / "eval.csv", ctlrp::report_to_csv(report, ev_dataset_name));
        ctlrp::atomic_write(out / "eval.json",
                            ctlrp::report_to_json(report, ev_dataset_name).dump(2) + "\n");
        std::cout << "wrote eval report (" << report.rows.size() << " rows) to " << out.string() << "\n";
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
