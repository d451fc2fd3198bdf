// mlse: corpus generation, training, enrollment, verification and evaluation.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mlse/checkpoint.hpp"
#include "mlse/container.hpp"
#include "mlse/corpus.hpp"
#include "mlse/experiment.hpp"
#include "mlse/metrics.hpp"
#include "mlse/run_config.hpp"
#include "mlse/verification.hpp"

namespace fs = std::filesystem;
using namespace mlse;

namespace {

struct Options {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::string corpus;
    std::string snapshots;
    std::string models;
    std::string image;
    std::string combiner;
    std::size_t user = 0;
    std::size_t runs = 0;
};

void add_common(CLI::App* cmd, Options& o, const std::string& out_help) {
    cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
    cmd->add_option("--out", o.out, out_help);
}

RunConfig resolve(const Options& o, const CLI::App* cmd) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (cmd->get_option("--seed")->count() > 0) cfg.seed = o.seed;
    if (!o.corpus.empty()) cfg.corpus_dir = o.corpus;
    if (!o.combiner.empty()) cfg.combiner = o.combiner;
    if (const auto* runs = cmd->get_option_no_throw("--runs"); runs != nullptr && runs->count() > 0) {
        (cmd->get_name() == "eval-wd" ? cfg.wd_runs : cfg.wi_repetitions) = o.runs;
    }
    cfg.validate();
    return cfg;
}

fs::path out_dir(const Options& o, const std::string& fallback) { return o.out.empty() ? fs::path(fallback) : fs::path(o.out); }

void write_run_manifest(const fs::path& dir, const std::string& command, const nlohmann::ordered_json& inputs,
                        const RunConfig& cfg) {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["inputs"] = inputs;
    m["config"] = to_json(cfg);
    io::write_text_atomic(dir / "run-manifest.json", m.dump(2) + "\n");
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

std::vector<NetworkState<float>> load_snapshots(const fs::path& dir) {
    std::vector<NetworkState<float>> out;
    while (fs::exists(snapshot_path(dir, out.size()))) out.push_back(load_snapshot(snapshot_path(dir, out.size())));
    if (out.empty()) {
        throw IoError("no snapshots found in " + dir.string());
    }
    return out;
}

fs::path model_path(const fs::path& dir, std::size_t user) {
    char name[32];
    std::snprintf(name, sizeof name, "user_%03zu.mlsv", user);
    return dir / name;
}

fs::path features_path(const fs::path& dir, std::size_t snapshot) {
    char name[32];
    std::snprintf(name, sizeof name, "features_%02zu.mlsf", snapshot);
    return dir / name;
}

constexpr const char* kTrialsHeader = "trial,dominant,lambda_ce,lambda_hinge,lambda_csd,epochs,accuracy\n";

void trial_rows(std::ostream& os, const std::vector<TrialRecord>& trials, const std::string& prefix) {
    for (const auto& t : trials) {
        os << prefix << t.trial_index << ',' << loss_name(t.dominant()) << ',' << format_number(t.weights.lambda[0]) << ','
           << format_number(t.weights.lambda[1]) << ',' << format_number(t.weights.lambda[2]) << ',' << t.epochs_run
           << ',' << format_number(t.accuracy) << '\n';
    }
}

std::string trials_csv(const std::vector<TrialRecord>& trials) {
    std::ostringstream os;
    os << kTrialsHeader;
    trial_rows(os, trials, "");
    return os.str();
}

int cmd_gen_data(const Options& o, const RunConfig& cfg) {
    const fs::path dir = out_dir(o, cfg.corpus_dir);
    const Corpus c = generate_corpus(cfg.corpus, cfg.seed, dir);
    write_run_manifest(dir, "gen-data", {{"out", dir.string()}}, cfg);
    std::cout << "wrote " << c.records.size() << " signatures of " << c.users().size() << " users to " << dir.string()
              << '\n';
    return 0;
}

int cmd_train(const Options& o, const RunConfig& cfg) {
    const fs::path dir = out_dir(o, "mlse_out");
    const Corpus corpus = load_corpus(cfg.corpus_dir);
    const std::uint64_t run_seed = wd_run_seed(cfg.seed, 0);
    const ProtocolSplit split = split_wd(corpus.records, cfg.wd, run_seed);
    const SnapshotSet set = train_split(preprocess_corpus(corpus, cfg), split, cfg, run_seed, log_line, dir);
    io::write_text_atomic(dir / "trials.csv", trials_csv(set.records));
    write_run_manifest(dir, "train", {{"corpus", cfg.corpus_dir}, {"out", dir.string()}}, cfg);
    std::cout << "wrote " << set.size() << " snapshots to " << dir.string() << '\n';
    return 0;
}

int cmd_extract(const Options& o, const RunConfig& cfg) {
    const fs::path dir = out_dir(o, "mlse_out");
    const auto states = load_snapshots(o.snapshots);
    const Corpus corpus = load_corpus(cfg.corpus_dir);
    const auto features = snapshot_features(states, preprocess_corpus(corpus, cfg));
    for (std::size_t s = 0; s < features.size(); ++s) save_feature_matrix(features_path(dir, s), features[s]);
    io::write_text_atomic(dir / "features.tsv", format_manifest(corpus.records));
    write_run_manifest(dir, "extract",
                       {{"corpus", cfg.corpus_dir}, {"snapshots", o.snapshots}, {"out", dir.string()}}, cfg);
    std::cout << "wrote " << features.size() << " feature matrices of " << corpus.records.size() << " rows to "
              << dir.string() << '\n';
    return 0;
}

int cmd_enroll(const Options& o, const RunConfig& cfg) {
    const fs::path dir = out_dir(o, "mlse_out");
    const auto states = load_snapshots(o.snapshots);
    const Corpus corpus = load_corpus(cfg.corpus_dir);
    const std::uint64_t run_seed = wd_run_seed(cfg.seed, 0);
    const ProtocolSplit split = split_wd(corpus.records, cfg.wd, run_seed);
    const auto features = snapshot_features(states, preprocess_corpus(corpus, cfg));
    const auto models = enroll_split(features, split, cfg, run_seed);
    for (const auto& [u, m] : models) save_user_model(m, model_path(dir, u));
    write_run_manifest(dir, "enroll",
                       {{"corpus", cfg.corpus_dir}, {"snapshots", o.snapshots}, {"out", dir.string()}}, cfg);
    std::cout << "enrolled " << models.size() << " users into " << dir.string() << '\n';
    return 0;
}

int cmd_verify(const Options& o, const RunConfig& cfg) {
    const fs::path dir = out_dir(o, "mlse_out");
    const auto states = load_snapshots(o.snapshots);
    const UserModel model = load_user_model(model_path(o.models, o.user));
    const Verdict v = verify_query(model, read_pgm(o.image), states, parse_combiner(cfg.combiner));
    write_run_manifest(dir, "verify",
                       {{"snapshots", o.snapshots},
                        {"models", o.models},
                        {"user", o.user},
                        {"image", o.image},
                        {"out", dir.string()}},
                       cfg);
    std::cout << "score " << format_number(v.score) << " decision " << (v.genuine ? "genuine" : "forgery") << '\n';
    return 0;
}

void write_reports(const fs::path& dir, const ExperimentResult& r) {
    io::write_text_atomic(dir / "report.csv", r.usmg.to_csv());
    io::write_text_atomic(dir / "report_mv.csv", r.mv.to_csv());
    for (std::size_t s = 0; s < r.single.size(); ++s) {
        char name[40];
        std::snprintf(name, sizeof name, "report_single_%02zu.csv", s);
        io::write_text_atomic(dir / name, r.single[s].to_csv());
    }
    io::write_text_atomic(dir / "sweep.csv", sweep_csv(r.last_usmg_scores));
    std::ostringstream trials;
    trials << "run," << kTrialsHeader;
    for (std::size_t run = 0; run < r.trials.size(); ++run) trial_rows(trials, r.trials[run], std::to_string(run) + ",");
    io::write_text_atomic(dir / "trials.csv", trials.str());
    std::ostringstream sel;
    sel << "run,user,selected\n";
    for (std::size_t run = 0; run < r.selected.size(); ++run) {
        for (const auto& [u, s] : r.selected[run]) sel << run << ',' << u << ',' << s << '\n';
    }
    io::write_text_atomic(dir / "selected.csv", sel.str());
}

void print_summary(const ExperimentResult& r) {
    auto line = [](const std::string& name, const EvalReport& rep) {
        const RunMetrics m = rep.mean();
        std::cout << name << " eer " << format_number(m.eer_sf) << " frr " << format_number(m.frr_sf) << " far_sf "
                  << format_number(m.far_sf) << " far_rf " << format_number(m.far_rf) << '\n';
    };
    line("usmg", r.usmg);
    line("mv", r.mv);
    const std::size_t best = r.best_single();
    line("single_" + std::to_string(best), r.single[best]);
}

int cmd_eval(const Options& o, const RunConfig& cfg, bool wd) {
    const fs::path dir = out_dir(o, "mlse_out");
    const Corpus corpus = load_corpus(cfg.corpus_dir);
    const ExperimentResult r = wd ? evaluate_wd(corpus, cfg, cfg.wd_runs, cfg.seed, log_line)
                                  : evaluate_wi(corpus, cfg, cfg.wi_repetitions, cfg.seed, log_line);
    write_reports(dir, r);
    write_run_manifest(dir, wd ? "eval-wd" : "eval-wi", {{"corpus", cfg.corpus_dir}, {"out", dir.string()}}, cfg);
    print_summary(r);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-loss snapshot ensemble signature verification"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic signature corpus");
    add_common(gen, o, "corpus directory (default: corpus.dir of the config)");

    auto* train = app.add_subcommand("train", "train the snapshot ensemble on writer-dependent run 0");
    add_common(train, o, "snapshot directory (default: mlse_out)");
    train->add_option("--corpus", o.corpus, "corpus directory");

    auto* extract = app.add_subcommand("extract", "write per-snapshot feature matrices of a corpus");
    add_common(extract, o, "output directory (default: mlse_out)");
    extract->add_option("--corpus", o.corpus, "corpus directory");
    extract->add_option("--snapshots", o.snapshots, "snapshot directory")->required();

    auto* enroll = app.add_subcommand("enroll", "train and select per-user SVMs on writer-dependent run 0");
    add_common(enroll, o, "model directory (default: mlse_out)");
    enroll->add_option("--corpus", o.corpus, "corpus directory");
    enroll->add_option("--snapshots", o.snapshots, "snapshot directory")->required();

    auto* verify = app.add_subcommand("verify", "verify one questioned signature");
    add_common(verify, o, "directory for the run manifest (default: mlse_out)");
    verify->add_option("--snapshots", o.snapshots, "snapshot directory")->required();
    verify->add_option("--models", o.models, "user model directory")->required();
    verify->add_option("--user", o.user, "claimed user id")->required();
    verify->add_option("--image", o.image, "questioned signature (PGM)")->required();
    verify->add_option("--combiner", o.combiner, "usmg or mv");

    auto* eval_wd = app.add_subcommand("eval-wd", "writer-dependent evaluation");
    add_common(eval_wd, o, "report directory (default: mlse_out)");
    eval_wd->add_option("--corpus", o.corpus, "corpus directory");
    eval_wd->add_option("--runs", o.runs, "number of random splits")->check(CLI::PositiveNumber);

    auto* eval_wi = app.add_subcommand("eval-wi", "writer-independent evaluation");
    add_common(eval_wi, o, "report directory (default: mlse_out)");
    eval_wi->add_option("--corpus", o.corpus, "corpus directory");
    eval_wi->add_option("--runs", o.runs, "number of repetitions")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    CLI::App* cmd = app.get_subcommands().front();
    try {
        const RunConfig cfg = resolve(o, cmd);
        const std::string name = cmd->get_name();
        if (name == "gen-data") return cmd_gen_data(o, cfg);
        if (name == "train") return cmd_train(o, cfg);
        if (name == "extract") return cmd_extract(o, cfg);
        if (name == "enroll") return cmd_enroll(o, cfg);
        if (name == "verify") return cmd_verify(o, cfg);
        if (name == "eval-wd") return cmd_eval(o, cfg, true);
        return cmd_eval(o, cfg, false);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
