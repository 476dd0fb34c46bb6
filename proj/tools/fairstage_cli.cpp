// fairstage: artifact-chained command line front end.
//
//   ingest -> dataset.txt -> train -> model.txt + split.csv -> simulate -> log.csv
//   -> select -> policy.txt + bounds.csv -> evaluate -> results.csv
//   experiment -> rows.csv + aggregate.csv + plot_<sweep>.py ; report -> report.md

#include "fairstage/clicklog.hpp"
#include "fairstage/config.hpp"
#include "fairstage/corpus.hpp"
#include "fairstage/error.hpp"
#include "fairstage/estimator.hpp"
#include "fairstage/eval.hpp"
#include "fairstage/relevance.hpp"
#include "fairstage/selector.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace fairstage;

namespace {

struct Flags {
    std::optional<std::string> config_file;
    std::map<std::string, std::string> values;  // qualified key -> flag value
    std::vector<std::string> overrides;          // --set key=value
};

struct Paths {
    std::string data, model, split, log, policy, aggregate;
};

std::string in_out(const RunConfig& config, const std::string& given, const char* name) {
    return given.empty() ? (fs::path(config.out) / name).string() : given;
}

void require_file(const std::string& path, const char* what, const char* producer) {
    if (!fs::exists(path)) {
        throw std::runtime_error(std::string("missing ") + what + " '" + path + "'; run `fairstage " + producer +
                                 "` first or pass its path explicitly");
    }
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunConfig resolve(const Flags& flags) {
    ConfigMap layer;
    for (const auto& [k, v] : flags.values) layer.set(k, v);
    for (const auto& kv : flags.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        layer.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return resolve_config(flags.config_file, layer);
}

Dataset load_data_artifact(const RunConfig& config, const std::string& path) {
    require_file(path, "dataset", "ingest");
    RunConfig c = config;
    c.dataset = path;
    auto dataset = load_dataset(c);
    if (dataset.groups.empty()) throw std::runtime_error("dataset '" + path + "' has no groups");
    return dataset;
}

RelevanceModel load_model(const std::string& path) {
    require_file(path, "model", "train");
    return RelevanceModel::deserialize(read_text(path));
}

SplitResult load_split(const Dataset& dataset, const std::string& path) {
    require_file(path, "split", "train");
    std::ifstream in(path);
    std::map<std::string, std::string> part;
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("malformed split line '" + line + "'");
        part[line.substr(0, comma)] = line.substr(comma + 1);
    }
    SplitResult out;
    for (auto* d : {&out.train, &out.sim, &out.test}) {
        d->groups = dataset.groups;
        d->feature_count = dataset.feature_count;
    }
    for (const auto& q : dataset.queries) {
        auto it = part.find(q.query_id);
        if (it == part.end()) {
            throw std::runtime_error("query " + q.query_id + " missing from split '" + path +
                                     "'; the split belongs to another dataset, rerun `fairstage train`");
        }
        if (it->second == "train") out.train.queries.push_back(q);
        else if (it->second == "sim") out.sim.queries.push_back(q);
        else out.test.queries.push_back(q);
    }
    return out;
}

int cmd_ingest(const RunConfig& config) {
    const auto dataset = load_dataset(config);
    const auto path = (fs::path(config.out) / "dataset.txt").string();
    write_atomic(path, [&](std::ostream& out) {
        out << config.snapshot();
        write_letor(out, dataset);
    });
    std::cout << "wrote " << path << ": " << dataset.queries.size() << " queries, " << dataset.item_count()
              << " items\n";
    for (std::size_t g = 0; g < dataset.groups.size(); ++g) {
        std::printf("  AR_%s = %.4f\n", dataset.groups[g].c_str(), average_relevant(dataset, g));
    }
    return 0;
}

int cmd_train(const RunConfig& config, const Paths& paths) {
    const auto dataset = load_data_artifact(config, in_out(config, paths.data, "dataset.txt"));
    SplitSpec spec = config.pipeline.split;
    spec.seed = config.seed;
    const auto parts = split(dataset, spec);
    auto model = train_logistic(parts.train, config.pipeline.train);
    if (config.pipeline.epsilon > 0.0) {
        CorruptionSpec c;
        c.epsilon = config.pipeline.epsilon;
        c.beta_a = config.pipeline.beta_a;
        c.beta_b = config.pipeline.beta_b;
        c.target_group = dataset.group_index(config.pipeline.corrupt_group);
        c.seed = config.seed;
        model = corrupt_scores(model, c);
    }
    const auto model_path = (fs::path(config.out) / "model.txt").string();
    const auto split_path = (fs::path(config.out) / "split.csv").string();
    write_atomic(split_path, [&](std::ostream& out) {
        out << config.snapshot() << "query_id,part\n";
        for (const auto& [d, name] : {std::pair{&parts.train, "train"}, {&parts.sim, "sim"}, {&parts.test, "test"}}) {
            for (const auto& q : d->queries) out << q.query_id << ',' << name << '\n';
        }
    });
    write_atomic(model_path, [&](std::ostream& out) { out << config.snapshot() << model.serialize(); });
    std::cout << "wrote " << model_path << " (fingerprint " << model.fingerprint() << ") and " << split_path
              << ": " << parts.train.queries.size() << "/" << parts.sim.queries.size() << "/"
              << parts.test.queries.size() << " queries\n";
    return 0;
}

int cmd_simulate(const RunConfig& config, const Paths& paths) {
    const auto dataset = load_data_artifact(config, in_out(config, paths.data, "dataset.txt"));
    const auto parts = load_split(dataset, in_out(config, paths.split, "split.csv"));
    const auto model = load_model(in_out(config, paths.model, "model.txt"));
    const auto t_max = config.pipeline.resolved_t_max(dataset.groups.size());
    const auto log = simulate_log(parts.sim, model, t_max, config.pipeline.m, config.seed);
    const auto path = (fs::path(config.out) / "log.csv").string();
    write_atomic(path, [&](std::ostream& out) {
        out << config.snapshot();
        log.write_csv(out);
    });
    std::cout << "wrote " << path << ": " << log.size() << " requests\n";
    return 0;
}

int cmd_select(const RunConfig& config, const Paths& paths) {
    const auto dataset = load_data_artifact(config, in_out(config, paths.data, "dataset.txt"));
    const auto model = load_model(in_out(config, paths.model, "model.txt"));
    const auto log_path = in_out(config, paths.log, "log.csv");
    require_file(log_path, "log", "simulate");
    std::ifstream in(log_path);
    const auto log = InteractionLog::read_csv(in);

    SelectionConfig sc{resolve_targets(config, dataset), config.pipeline.resolved_t_max(dataset.groups.size()),
                       config.pipeline.alpha, config.rule, config.pipeline.lambda};
    const auto selection = algorithm1(log, model, sc);
    const auto table = BoundTable::build(log, model, config.pipeline.lambda);

    const auto policy_path = (fs::path(config.out) / "policy.txt").string();
    const auto bounds_path = (fs::path(config.out) / "bounds.csv").string();
    write_atomic(policy_path, [&](std::ostream& out) {
        out << config.snapshot();
        write_selection(out, selection);
    });
    write_atomic(bounds_path, [&](std::ostream& out) {
        out << config.snapshot();
        table.write_csv(out, config.pipeline.alpha, true);
    });
    std::cout << "wrote " << policy_path << " and " << bounds_path << "\n";
    for (std::size_t g = 0; g < selection.groups.size(); ++g) {
        const auto& p = selection.per_group[g];
        std::printf("  %s: t_hat = %zu (target %.4f, t_max %zu, gap %.4f)\n", selection.groups[g].c_str(),
                    p.threshold, p.target, p.t_max, p.gap.gap);
    }
    return 0;
}

int cmd_evaluate(const RunConfig& config, const Paths& paths) {
    const auto dataset = load_data_artifact(config, in_out(config, paths.data, "dataset.txt"));
    const auto parts = load_split(dataset, in_out(config, paths.split, "split.csv"));
    const auto model = load_model(in_out(config, paths.model, "model.txt"));
    const auto policy_path = in_out(config, paths.policy, "policy.txt");
    require_file(policy_path, "policy", "select");
    std::ifstream in(policy_path);
    const auto selection = read_selection(in);
    if (!selection.model_fingerprint.empty() && selection.model_fingerprint != model.fingerprint()) {
        throw FingerprintMismatch("policy was selected for model " + selection.model_fingerprint + " but model " +
                                  model.fingerprint() + " is loaded; rerun `fairstage select` with this model");
    }
    if (selection.groups != dataset.groups) throw std::runtime_error("policy groups differ from the dataset's");
    const auto metrics = evaluate_policy(selection.policy(), model, parts.test);
    const auto path = (fs::path(config.out) / "results.csv").string();
    write_atomic(path, [&](std::ostream& out) {
        out << config.snapshot() << "method,group,target,t_hat,er,css,gap\n";
        for (std::size_t g = 0; g < metrics.size(); ++g) {
            const auto& p = selection.per_group[g];
            const int er = metrics[g].relevant >= p.target ? 1 : 0;
            char buf[160];
            std::snprintf(buf, sizeof buf, "cipw-lb-%s,%s,%.10g,%zu,%d,%.10g,%.10g\n",
                          selection.rule == Rule::monotone ? "mono" : "union", dataset.groups[g].c_str(),
                          p.target, p.threshold, er, metrics[g].selected, p.gap.gap);
            out << buf;
            std::printf("  %s: ER = %d (relevant %.4f vs target %.4f), CSS = %.4f\n", dataset.groups[g].c_str(),
                        er, metrics[g].relevant, p.target, metrics[g].selected);
        }
    });
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_experiment(const RunConfig& config, const Paths& paths) {
    const auto dataset = paths.data.empty() ? load_dataset(config) : load_data_artifact(config, paths.data);
    ExperimentSpec spec;
    spec.param = parse_sweep(config.sweep);
    spec.values = config.sweep_values;
    if (spec.values.empty()) {
        switch (spec.param) {
            case SweepParam::m: spec.values = {1000, 10000, 100000}; break;
            case SweepParam::epsilon: spec.values = {0, 0.5, 0.9}; break;
            case SweepParam::lambda: spec.values = {1, 10, 100, 1000}; break;
            case SweepParam::t_max: spec.values = {10, 25, 50}; break;
        }
    }
    spec.replications = config.replications;
    spec.base = config.pipeline;
    spec.base.targets = resolve_targets(config, dataset);
    spec.base_seed = config.seed;
    spec.threads = config.threads;

    const auto result = run_replications(dataset, spec);
    const auto dir = fs::path(config.out);
    const auto snapshot = config.snapshot();
    write_atomic((dir / "rows.csv").string(), [&](std::ostream& out) {
        out << snapshot;
        write_rows_csv(out, result.rows);
    });
    write_atomic((dir / "aggregate.csv").string(), [&](std::ostream& out) {
        out << snapshot;
        write_aggregate_csv(out, result.aggregate);
    });
    const auto script = "plot_" + std::string(sweep_name(spec.param)) + ".py";
    write_atomic((dir / script).string(), [&](std::ostream& out) {
        write_plot_script(out, "aggregate.csv", spec.param, "fig_" + std::string(sweep_name(spec.param)) + ".png");
    });

    std::set<std::string> warnings(result.warnings.begin(), result.warnings.end());
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    std::size_t failed = 0;
    for (const auto& row : result.rows) failed += !row.error.empty();
    std::cout << "wrote rows.csv, aggregate.csv and " << script << " to " << dir.string() << "\n";
    if (failed > 0) {
        std::cerr << failed << " method runs failed; see the error column of rows.csv\n";
        return 1;
    }
    return 0;
}

int cmd_report(const RunConfig& config, const Paths& paths) {
    const auto path = in_out(config, paths.aggregate, "aggregate.csv");
    require_file(path, "aggregate table", "experiment");
    std::ifstream in(path);
    std::ostringstream md;
    md << "| sweep | value | method | group | runs | ER % | ER SE | CSS mean | CSS std |\n"
       << "|---|---|---|---|---|---|---|---|---|\n";
    std::string line;
    bool header = false;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            header = true;
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        md << '|';
        while (std::getline(ss, cell, ',')) md << ' ' << cell << " |";
        md << '\n';
        ++rows;
    }
    const auto out_path = (fs::path(config.out) / "report.md").string();
    write_atomic(out_path, [&](std::ostream& out) { out << md.str(); });
    std::cout << md.str() << "wrote " << out_path << " (" << rows << " rows)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fair first-stage threshold-policy selection from click logs"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    Flags flags;
    Paths paths;
    bool show_config = false;
    app.add_option("--config", flags.config_file, "INI file with [stage] sections of key = value");
    app.add_option("--set", flags.overrides, "Override any config key, e.g. --set simulate.m=5000");
    app.add_flag("--show-config", show_config, "Print the resolved configuration and exit");
    struct KeyFlag {
        const char* flag;
        const char* key;
        const char* help;
    };
    const KeyFlag key_flags[] = {
        {"--seed", "run.seed", "Base seed for every stochastic stage"},
        {"--out", "run.out", "Output directory"},
        {"--threads", "run.threads", "Worker threads for replications"},
        {"--dataset", "data.dataset", "LETOR file to ingest, or 'synthetic'"},
        {"--m", "simulate.m", "Logged requests"},
        {"--t-max", "simulate.t_max", "Maximum threshold, one value or one per group"},
        {"--epsilon", "corrupt.epsilon", "Score corruption rate for the corrupted group"},
        {"--lambda", "select.lambda", "Clipping level"},
        {"--alpha", "select.alpha", "Failure probability"},
        {"--rule", "select.rule", "union or monotone"},
        {"--target-total", "select.target_total", "Sum of equal-opportunity targets"},
        {"--targets", "select.targets", "Explicit per-group targets (sets target_mode=explicit)"},
        {"--methods", "experiment.methods", "Comma-separated method names"},
        {"--replications", "experiment.replications", "Replications per sweep value"},
        {"--sweep", "experiment.sweep", "m, epsilon, lambda or t_max"},
        {"--values", "experiment.values", "Comma-separated sweep values"},
    };
    std::vector<std::string> raw(std::size(key_flags));
    for (std::size_t i = 0; i < std::size(key_flags); ++i) app.add_option(key_flags[i].flag, raw[i], key_flags[i].help);

    auto* ingest = app.add_subcommand("ingest", "Parse a LETOR file or build the synthetic instance");
    auto* train = app.add_subcommand("train", "Split the dataset and fit the logistic relevance model");
    auto* simulate = app.add_subcommand("simulate", "Simulate a position-based click log");
    auto* select = app.add_subcommand("select", "Pick per-group thresholds from the log");
    auto* evaluate = app.add_subcommand("evaluate", "Score a selected policy on the test split");
    auto* experiment = app.add_subcommand("experiment", "Run a replicated parameter sweep");
    auto* report = app.add_subcommand("report", "Render an aggregate table as markdown");
    for (auto* sub : {train, simulate, select, evaluate, experiment}) {
        sub->add_option("--data", paths.data, "Dataset artifact (default <out>/dataset.txt)");
    }
    for (auto* sub : {simulate, select, evaluate}) sub->add_option("--model", paths.model, "Model artifact");
    for (auto* sub : {simulate, evaluate}) sub->add_option("--split", paths.split, "Split artifact");
    select->add_option("--log", paths.log, "Click log artifact");
    evaluate->add_option("--policy", paths.policy, "Policy artifact");
    report->add_option("--aggregate", paths.aggregate, "Aggregate CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        for (std::size_t i = 0; i < std::size(key_flags); ++i) {
            if (app.count(key_flags[i].flag) > 0) flags.values[key_flags[i].key] = raw[i];
        }
        if (flags.values.count("select.targets")) flags.values["select.target_mode"] = "explicit";
        const auto config = resolve(flags);
        if (show_config || app.get_subcommands().empty()) {
            std::cout << config.snapshot();
            if (!show_config) std::cout << "\n" << app.help();
            return 0;
        }
        if (ingest->parsed()) return cmd_ingest(config);
        if (train->parsed()) return cmd_train(config, paths);
        if (simulate->parsed()) return cmd_simulate(config, paths);
        if (select->parsed()) return cmd_select(config, paths);
        if (evaluate->parsed()) return cmd_evaluate(config, paths);
        if (experiment->parsed()) return cmd_experiment(config, paths);
        if (report->parsed()) return cmd_report(config, paths);
    } catch (const FingerprintMismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const ParseError& e) {
        std::cerr << "error: parse failure at " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
