#include "qtart/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "qtart/attacks.hpp"
#include "qtart/checkpoint.hpp"
#include "qtart/config.hpp"
#include "qtart/evaluate.hpp"
#include "qtart/report.hpp"
#include "qtart/scoring.hpp"
#include "qtart/trainer.hpp"

namespace qtart {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "config file (section.key = value)");
    app->add_option("--set", c.overrides, "override key=value (repeatable)")->allow_extra_args(false);
    app->add_option("--out", c.out, "output directory (default $QTART_OUT or ./qtart-out)");
    app->add_option("--seed", c.seed, "override every seed in the config");
    app->add_flag("--quiet", c.quiet, "suppress progress output");
}

ConfigMap build_config(const Common& c) {
    ConfigMap m = ConfigMap::defaults();
    if (!c.config.empty()) {
        m.merge_file(c.config);
    }
    if (c.seed) {
        m.set_all_seeds(*c.seed);
    }
    for (const std::string& o : c.overrides) {
        m.set(o);
    }
    return m;
}

fs::path out_dir(const Common& c) {
    if (!c.out.empty()) {
        return c.out;
    }
    if (const char* env = std::getenv("QTART_OUT"); env && *env) {
        return env;
    }
    return "qtart-out";
}

Model build_model(const RunConfig& rc, const Dataset& train) {
    ConvNetSpec spec = rc.net;
    spec.input = train.input_spec();
    spec.classes = train.classes;
    Model model = make_conv_net(spec, rc.weight_seed);
    model.set_normalization(compute_stats(train));
    return model;
}

Model load_model(const std::string& path) {
    if (path.empty()) {
        throw std::invalid_argument("--checkpoint is required");
    }
    return load_checkpoint(path).model;
}

std::string artifact_fp(const ConfigMap& m, const std::string& extra) {
    return fingerprint_hex(m.canonical() + extra);
}

void require_test(const DataPair& data) {
    if (data.test.size() == 0) {
        throw std::invalid_argument("no test set; set data.test or use synthetic data");
    }
}

int run_synth(const Common& c, std::ostream& out) {
    const ConfigMap m = build_config(c);
    const RunConfig rc = decode_config(m);
    const DataPair data = load_data(rc);
    const fs::path dir = out_dir(c);
    const std::string fp = artifact_fp(m, "synth");
    const fs::path train = dir / ("synth-" + fp + "-train.qtds");
    const fs::path test = dir / ("synth-" + fp + "-test.qtds");
    save_dataset(train, data.train);
    save_dataset(test, data.test);
    load_dataset(train).validate();
    load_dataset(test).validate();
    if (!c.quiet) {
        out << "train " << train.string() << " (" << data.train.size() << " samples, "
            << data.train.planted_outliers.size() << " planted outliers)\n"
            << "test  " << test.string() << " (" << data.test.size() << " samples)\n";
    }
    return 0;
}

int run_train(const Common& c, const std::string& resume, std::ostream& out) {
    const ConfigMap m = build_config(c);
    const RunConfig rc = decode_config(m);
    const DataPair data = load_data(rc);
    const fs::path dir = out_dir(c);
    const std::string fp = rc.fingerprint;
    Model model = build_model(rc, data.train);

    std::optional<Checkpoint> ck;
    RunOptions opts;
    if (data.test.size() > 0) {
        opts.test = &data.test;
    }
    opts.checkpoint_path = dir / ("model-" + fp + ".qtck");
    if (!resume.empty()) {
        ck = load_checkpoint(resume);
        opts.resume = &*ck;
    }
    if (!c.quiet) {
        opts.on_epoch = [&out](const EpochRecord& e) {
            out << "epoch " << e.epoch << " loss " << e.train_loss << " samples " << e.samples;
            if (e.test_accuracy >= 0.0) {
                out << " test " << e.test_accuracy << "%";
            }
            out << '\n';
        };
    }
    const TrainReport report = run_experiment(rc.experiment, model, data.train, opts);

    const fs::path record = dir / ("train-" + fp + ".json");
    write_record(record, train_record(report, rc.experiment));
    load_checkpoint(*opts.checkpoint_path);
    if (report.mask) {
        const fs::path mask = dir / ("mask-" + fp + ".txt");
        write_mask_file(mask, *report.mask);
        read_mask_file(mask).validate();
    }
    if (report.instability) {
        write_instability_dump(dir / ("instability-" + fp + ".txt"), *report.instability);
    }
    if (!c.quiet) {
        out << "final accuracy " << report.final_accuracy << "%  iterations " << report.iterations_executed
            << "  saved " << report.iterations_saved << "  wall " << report.wall_seconds << "s\n"
            << "checkpoint " << opts.checkpoint_path->string() << '\n';
    }
    return 0;
}

int run_score(const Common& c, const std::string& checkpoint, std::ostream& out) {
    const ConfigMap m = build_config(c);
    const RunConfig rc = decode_config(m);
    const Model model = load_model(checkpoint);
    const DataPair data = load_data(rc);
    const fs::path dir = out_dir(c);
    const std::string fp = artifact_fp(m, "score:" + checkpoint);
    const ScoringConfig& sc = rc.experiment.scoring;
    Mask mask;
    if (rc.experiment.label_budget > 0) {
        mask = two_phase_score(model, data.train, rc.experiment.label_budget, rc.experiment.gamma, sc);
    } else {
        const InstabilityMatrix scores = score_dataset(model, data.train, sc);
        write_instability_dump(dir / ("instability-" + fp + ".txt"), scores);
        mask = compute_mask(scores.aggregated, rc.experiment.gamma, "qtart:" + scores.fingerprint, sc.noise.seed);
    }
    const fs::path mask_path = dir / ("mask-" + fp + ".txt");
    write_mask_file(mask_path, mask);
    read_mask_file(mask_path).validate();
    if (!c.quiet) {
        out << "removed " << mask.gamma << " of " << mask.size() << " samples\nmask " << mask_path.string() << '\n';
    }
    return 0;
}

int run_attack(const Common& c, const std::string& checkpoint, const std::string& method, std::ostream& out) {
    const ConfigMap m = build_config(c);
    const RunConfig rc = decode_config(m);
    const Model model = load_model(checkpoint);
    const DataPair data = load_data(rc);
    require_test(data);
    const std::string label = method.empty() ? m.get("run.mode") : method;
    const std::string fp = artifact_fp(m, "attack:" + checkpoint + ":" + label);
    std::vector<AttackResult> results;
    for (const AttackSpec& spec : rc.attacks) {
        results.push_back({spec, evaluate_robustness(model, data.test, spec)});
    }
    const Json rec = attack_record(fp, label, evaluate(model, data.test), results);
    const fs::path path = out_dir(c) / ("attack-" + fp + ".json");
    write_record(path, rec);
    if (!c.quiet) {
        out << attack_table(rec) << "record " << path.string() << '\n';
    }
    return 0;
}

int run_transfer(const Common& c, const std::string& checkpoint, std::vector<std::string> sources,
                 const std::string& attack_name, const std::string& method, std::ostream& out) {
    const ConfigMap m = build_config(c);
    const RunConfig rc = decode_config(m);
    const Model target = load_model(checkpoint);
    const DataPair data = load_data(rc);
    require_test(data);
    if (sources.empty()) {
        for (const auto& p : rc.transfer_sources) {
            sources.push_back(p.string());
        }
    }
    if (sources.empty()) {
        throw std::invalid_argument("no source models; pass --source or set transfer.sources");
    }
    std::vector<Model> models;
    for (const std::string& s : sources) {
        models.push_back(load_model(s));
    }
    std::vector<const Model*> ptrs;
    for (const Model& mdl : models) {
        ptrs.push_back(&mdl);
    }
    if (rc.attacks.empty()) {
        throw std::invalid_argument("attack.suite is empty");
    }
    AttackSpec spec = rc.attacks.front();
    if (!attack_name.empty()) {
        const AttackKind kind = parse_attack_kind(attack_name);
        const auto it = std::find_if(rc.attacks.begin(), rc.attacks.end(),
                                     [&](const AttackSpec& a) { return a.kind == kind; });
        if (it == rc.attacks.end()) {
            throw std::invalid_argument("attack '" + attack_name + "' is not in attack.suite");
        }
        spec = *it;
    }
    TransferMatrix tm = transfer_eval(target, ptrs, sources, data.test, spec, checkpoint);
    const std::string label = method.empty() ? m.get("run.mode") : method;
    std::string extra = "transfer:" + checkpoint + ":" + label + ":" + spec.name();
    for (const auto& s : sources) {
        extra += ":" + s;
    }
    const std::string fp = artifact_fp(m, extra);
    const fs::path path = out_dir(c) / ("transfer-" + fp + ".json");
    write_record(path, transfer_record(fp, label, spec, tm));
    if (!c.quiet) {
        for (std::size_t k = 0; k < tm.sources.size(); ++k) {
            out << tm.sources[k] << '\t' << tm.accuracy[k] << "%\n";
        }
        out << "mean " << tm.mean << "%  std " << tm.stddev << "\nrecord " << path.string() << '\n';
    }
    return 0;
}

int run_report(const Common& c, const std::string& dir, std::ostream& out, std::ostream& err) {
    const fs::path results = dir.empty() ? out_dir(c) : fs::path(dir);
    const fs::path target = c.out.empty() ? results : fs::path(c.out);
    const ReportSummary s = emit_report(results, target);
    for (const std::string& w : s.warnings) {
        err << "warning: " << w << '\n';
    }
    if (!c.quiet) {
        out << s.text;
    }
    return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Q-TART training-data pruning and robustness lab", "qtart"};
    app.require_subcommand(1);

    Common c;
    std::string checkpoint, resume, method, attack_name, dir;
    std::vector<std::string> sources;

    CLI::App* synth = app.add_subcommand("synth-gen", "generate a synthetic train/test pair");
    CLI::App* train = app.add_subcommand("train", "run an experiment and save model, mask and report");
    CLI::App* score = app.add_subcommand("score", "score a trained checkpoint and write a removal mask");
    CLI::App* attack = app.add_subcommand("attack", "evaluate the attack suite on a checkpoint");
    CLI::App* transfer = app.add_subcommand("transfer", "cross-model attack evaluation");
    CLI::App* report = app.add_subcommand("report", "summarize result records");
    for (CLI::App* sub : {synth, train, score, attack, transfer, report}) {
        add_common(sub, c);
    }
    train->add_option("--resume", resume, "continue from a checkpoint with training state");
    for (CLI::App* sub : {score, attack, transfer}) {
        sub->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    }
    for (CLI::App* sub : {attack, transfer}) {
        sub->add_option("--method", method, "label used in result records (default run.mode)");
    }
    transfer->add_option("--source", sources, "source checkpoint (repeatable)")->allow_extra_args(false);
    transfer->add_option("--attack", attack_name, "attack kind from attack.suite (default first)");
    report->add_option("--dir", dir, "directory of result records (default the output directory)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
    }

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        if (verb == "synth-gen") {
            return run_synth(c, out);
        }
        if (verb == "train") {
            return run_train(c, resume, out);
        }
        if (verb == "score") {
            return run_score(c, checkpoint, out);
        }
        if (verb == "attack") {
            return run_attack(c, checkpoint, method, out);
        }
        if (verb == "transfer") {
            return run_transfer(c, checkpoint, sources, attack_name, method, out);
        }
        return run_report(c, dir, out, err);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& ch : msg) {
            if (ch == '\n') {
                ch = ' ';
            }
        }
        err << "error: " << verb << ": " << msg << '\n';
        return 1;
    }
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace qtart
