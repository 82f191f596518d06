// advloop: corpus generation, adversarial training, cross-evaluation,
// numeric verification of the tabular analysis, and CSV export for plots.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 numeric failure
// (training halted on non-finite parameters, or a verification check
// failed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "advloop/checkpoint.hpp"
#include "advloop/config.hpp"
#include "advloop/game.hpp"
#include "advloop/generator.hpp"
#include "advloop/policy.hpp"
#include "advloop/rng.hpp"
#include "advloop/scenario_gen.hpp"
#include "advloop/scenario_io.hpp"
#include "advloop/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advloop;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

bool dir_nonempty(const fs::path& p) {
    return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p);
}

/// Shared overwrite policy: never clobber silently, always allow --force.
void require_fresh_or_force(const fs::path& out, bool force,
                            const std::string& what) {
    if (!force && dir_nonempty(out))
        throw config::ConfigError(what + " directory " + out.string() +
                                  " is not empty (pass --force to replace "
                                  "its contents)");
}

/// Options shared by every subcommand that reads configuration.
struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file,
                    "JSON configuration file merged over the defaults");
    cmd->add_option("--set", opts.sets,
                    "Override one key, e.g. --set train.max_steps=50000 "
                    "(repeatable; applied after the file and environment)");
    cmd->add_flag("--force", opts.force,
                  "Replace existing output instead of refusing");
}

json resolve(const CommonOpts& opts,
             const std::vector<std::string>& sugar = {}) {
    std::vector<std::string> assignments = opts.sets;
    assignments.insert(assignments.end(), sugar.begin(), sugar.end());
    std::optional<fs::path> file;
    if (!opts.config_file.empty()) file = opts.config_file;
    return config::resolve_config(file, assignments);
}

/// --jobs semantics: an explicit flag always wins; 0 means all hardware
/// threads. Without the flag, a value configured via file/env/--set stands;
/// otherwise the pool defaults to available parallelism. Worker count never
/// affects results (outputs are positional), so this is purely a speed knob.
int final_jobs(const json& resolved_jobs, int flag_value, bool flag_given) {
    const int hw = std::max(1u, std::thread::hardware_concurrency());
    if (flag_given) return flag_value > 0 ? flag_value : hw;
    const int configured = resolved_jobs.get<int>();
    return configured > 1 ? configured : hw;
}

// ---------------------------------------------------------------------------
// gen-corpus

struct GenCorpusOpts {
    CommonOpts common;
    std::string out;
    int count = -1;
    std::int64_t seed = -1;
    std::vector<std::string> templates;
};

int cmd_gen_corpus(const GenCorpusOpts& o) {
    std::vector<std::string> sugar;
    if (o.count >= 0) sugar.push_back("corpus.count=" + std::to_string(o.count));
    if (o.seed >= 0) sugar.push_back("corpus.seed=" + std::to_string(o.seed));
    if (!o.templates.empty())
        sugar.push_back("corpus.templates=" + json(o.templates).dump());
    const json resolved = resolve(o.common, sugar);
    const sim::CorpusConfig cfg = config::corpus_from_json(resolved["corpus"]);

    for (const std::string& name : cfg.templates)
        if (std::find(sim::kScenarioTemplates.begin(),
                      sim::kScenarioTemplates.end(),
                      name) == sim::kScenarioTemplates.end())
            throw config::ConfigError(
                "unknown scenario template: " + name + " (known: " +
                json(sim::kScenarioTemplates).dump() + ")");

    const fs::path out(o.out);
    require_fresh_or_force(out, o.common.force, "corpus");
    if (o.common.force) {
        fs::remove_all(out / "scenarios");
        fs::remove(out / "manifest.json");
    }

    const std::vector<sim::Scenario> scenarios =
        sim::make_synthetic_scenarios(cfg);
    sim::write_corpus(out, scenarios, o.common.force);

    std::map<std::string, int> per_template;
    for (std::size_t i = 0; i < scenarios.size(); ++i)
        ++per_template[cfg.templates[i % cfg.templates.size()]];
    std::ofstream manifest(out / "manifest.json", std::ios::trunc);
    manifest << json{{"format", sim::kScenarioFormat},
                     {"count", cfg.count},
                     {"seed", cfg.seed},
                     {"templates", cfg.templates},
                     {"per_template", per_template},
                     {"config_hash", config::config_hash(resolved)}}
                    .dump(2)
             << '\n';
    config::write_resolved(out, resolved);

    std::cout << "wrote " << scenarios.size() << " scenarios to "
              << (out / "scenarios").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    CommonOpts common;
    std::string corpus;
    std::string out;
    std::string algo;
    std::string ipl;
    std::int64_t seed = -1;
    std::int64_t steps = -1;
    int jobs = 0;
    bool jobs_given = false;
    bool resume = false;
};

int cmd_train(const TrainOpts& o) {
    std::vector<std::string> sugar;
    if (!o.algo.empty()) sugar.push_back("train.algorithm=" + o.algo);
    if (!o.ipl.empty()) {
        if (o.ipl != "on" && o.ipl != "off")
            throw config::ConfigError("--ipl takes 'on' or 'off', got " +
                                      o.ipl);
        sugar.push_back(std::string("train.ipl_enabled=") +
                        (o.ipl == "on" ? "true" : "false"));
    }
    if (o.seed >= 0) sugar.push_back("train.seed=" + std::to_string(o.seed));
    if (o.steps >= 0)
        sugar.push_back("train.max_steps=" + std::to_string(o.steps));
    const json resolved = resolve(o.common, sugar);

    game::TrainConfig cfg = config::train_from_json(resolved["train"]);
    cfg.config_hash = config::config_hash(resolved);
    cfg.jobs = final_jobs(resolved["train"]["jobs"], o.jobs, o.jobs_given);

    const fs::path run(o.out);
    if (!o.resume) {
        require_fresh_or_force(
            run, o.common.force,
            "run (pass --resume to continue an interrupted run)");
        if (o.common.force) fs::remove_all(run);
    } else if (!game::checkpoint_exists(run)) {
        throw config::ConfigError("--resume given but " + run.string() +
                                  " holds no checkpoint");
    }
    fs::create_directories(run);
    if (o.resume) {
        // Refuse before touching the run directory's config record.
        const json meta =
            ckpt::read_versioned(run / "meta.json", "train-meta");
        const std::string held = meta.at("config_hash").get<std::string>();
        if (!held.empty() && held != cfg.config_hash)
            throw config::ConfigError(
                "checkpoint in " + run.string() +
                " was written under a different configuration (its hash " +
                held + ", resolved " + cfg.config_hash + ")");
    }

    const std::vector<sim::Scenario> corpus = sim::read_corpus(o.corpus);
    config::write_resolved(run, resolved);
    if (!o.resume || !fs::exists(run / "corpus_ids.json")) {
        json ids = json::array();
        for (const sim::Scenario& s : corpus) ids.push_back(s.id);
        ckpt::write_versioned(run / "corpus_ids.json", "corpus-ids",
                              json{{"corpus_dir", o.corpus}, {"ids", ids}});
    }

    const game::TrainResult result = game::train(cfg, corpus, run, o.resume);
    if (result.nan_halt) {
        std::cerr << "training halted on a numeric failure: "
                  << result.halt_reason
                  << "\nthe last finite checkpoint remains in " << run.string()
                  << "\n";
        return 2;
    }
    std::cout << "trained " << game::to_string(cfg.algorithm) << " for "
              << result.env_steps << " env steps (" << result.ego_updates
              << " updates, " << result.ipl_rounds
              << " preference rounds) in " << run.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
    CommonOpts common;
    std::string run;
    std::string corpus;
    std::string out;
    std::string label;
    std::string checkpoint;
    std::int64_t episodes = -1;
    std::int64_t seed = -1;
    int jobs = 0;
    bool jobs_given = false;
};

int cmd_eval(const EvalOpts& o) {
    std::vector<std::string> sugar;
    if (o.episodes >= 0)
        sugar.push_back("eval.episodes_per_cell=" + std::to_string(o.episodes));
    if (o.seed >= 0) sugar.push_back("eval.seed=" + std::to_string(o.seed));
    const json resolved = resolve(o.common, sugar);

    game::EvalConfig cfg = config::eval_from_json(resolved["eval"]);
    cfg.jobs = final_jobs(resolved["eval"]["jobs"], o.jobs, o.jobs_given);
    const std::vector<game::AdversaryMode> modes =
        config::eval_modes_from_json(resolved["eval"]);
    const int bound_episodes = resolved["bound"]["episodes"].get<int>();

    const fs::path run(o.run);
    const fs::path ids_file = run / "corpus_ids.json";
    if (!fs::exists(ids_file))
        throw config::ConfigError(
            run.string() +
            " has no corpus_ids.json; cannot verify that the evaluation "
            "scenarios are disjoint from the training scenarios");

    const std::vector<sim::Scenario> corpus = sim::read_corpus(o.corpus);
    {
        const json ids =
            ckpt::read_versioned(ids_file, "corpus-ids").at("ids");
        std::vector<std::string> train_ids =
            ids.get<std::vector<std::string>>();
        std::sort(train_ids.begin(), train_ids.end());
        std::vector<std::string> overlap;
        for (const sim::Scenario& s : corpus)
            if (std::binary_search(train_ids.begin(), train_ids.end(), s.id))
                overlap.push_back(s.id);
        if (!overlap.empty()) {
            std::string shown;
            for (std::size_t i = 0; i < overlap.size() && i < 3; ++i)
                shown += (i ? ", " : "") + overlap[i];
            throw config::ConfigError(
                "evaluation corpus shares " + std::to_string(overlap.size()) +
                " scenario ids with the training corpus (" + shown +
                (overlap.size() > 3 ? ", ..." : "") +
                "); evaluate on held-out scenarios");
        }
    }

    fs::path ckpt_dir = run;
    std::string ckpt_name = "latest";
    if (!o.checkpoint.empty()) {
        ckpt_dir = run / "checkpoints" / o.checkpoint;
        ckpt_name = o.checkpoint;
        if (!fs::exists(ckpt_dir / "policy.json"))
            throw config::ConfigError("no checkpoint named " + o.checkpoint +
                                      " under " +
                                      (run / "checkpoints").string());
    } else if (!game::checkpoint_exists(run)) {
        throw config::ConfigError(run.string() + " holds no checkpoint");
    }

    const json meta = ckpt::read_versioned(ckpt_dir / "meta.json", "train-meta");
    const auto [net, adam] = policy::load_policy(ckpt_dir / "policy.json");
    const auto [gen_tuned, gen_ref] =
        generator::load_generator(ckpt_dir / "generator.json");

    fs::path out;
    if (!o.out.empty()) {
        out = o.out;
    } else {
        std::string label = o.label;
        if (label.empty()) {
            fs::path c(o.corpus);
            if (c.filename().empty()) c = c.parent_path();
            label = c.filename().string();
        }
        out = run / "eval" / label;
    }
    require_fresh_or_force(out, o.common.force, "evaluation output");
    fs::create_directories(out);

    const std::vector<game::EvalPolicy> policies = {
        game::replay_eval_policy(cfg.bicycle),
        game::net_eval_policy(meta.at("algorithm").get<std::string>(), net)};
    const std::vector<game::EvalCell> cells =
        game::evaluate_cross(policies, modes, corpus, gen_tuned, gen_ref, cfg);
    game::write_eval_csv(out / "matrix.csv", cells);

    const game::BoundReport bound = game::bound_report(
        net, gen_tuned, gen_ref, corpus, bound_episodes, cfg);
    {
        json b = game::bound_report_to_json(bound);
        b["config_hash"] = config::config_hash(resolved);
        std::ofstream f(out / "bound.json", std::ios::trunc);
        f << b.dump(2) << '\n';
    }
    ckpt::write_versioned(
        out / "eval_meta.json", "eval-meta",
        json{{"checkpoint", ckpt_name},
             {"env_steps", meta.at("env_steps")},
             {"ego_updates", meta.at("ego_updates")},
             {"algorithm", meta.at("algorithm")},
             {"train_config_hash", meta.at("config_hash")},
             {"eval_corpus", o.corpus}});
    config::write_resolved(out, resolved);

    std::cout << "evaluated " << policies.size() << " policies x "
              << modes.size() << " adversary modes (" << cells.size()
              << " cells) into " << out.string() << "\n"
              << "certified bound " << fmt_double(bound.certified_bound)
              << ", replay return " << fmt_double(bound.replay_return) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify-theory

struct VerifyOpts {
    CommonOpts common;
    std::string out = "theory_report.json";
    std::int64_t seed = -1;
    bool inject_fault = false;
};

int cmd_verify_theory(const VerifyOpts& o) {
    std::vector<std::string> sugar;
    if (o.seed >= 0) sugar.push_back("theory.seed=" + std::to_string(o.seed));
    const json resolved = resolve(o.common, sugar);
    const std::uint64_t seed = resolved["theory"]["seed"].get<std::uint64_t>();

    const fs::path out(o.out);
    if (fs::exists(out) && !o.common.force)
        throw config::ConfigError("report file " + out.string() +
                                  " exists (pass --force to replace it)");

    json report = theory::theory_report(seed);

    if (o.inject_fault) {
        // Failure-path exercise: run the non-expansiveness sweep against a
        // deliberately broken soft-min (inputs doubled, so its Lipschitz
        // modulus is 2). The sweep must catch it and fail the report.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/injected-fault");
        double worst = -std::numeric_limits<double>::infinity();
        bool ok = true;
        const std::size_t n = 1000;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t m = 2 + rng::uniform_index(rng, 7);
            const std::vector<double> prior = theory::random_simplex(rng, m);
            std::vector<double> q1(m), q2(m);
            double delta = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                q1[k] = rng::uniform_in(rng, -5.0, 5.0);
                q2[k] = rng::uniform_in(rng, -5.0, 5.0);
                delta = std::max(delta, std::abs(q1[k] - q2[k]));
                q1[k] *= 2.0;
                q2[k] *= 2.0;
            }
            const double gap =
                std::abs(theory::softmin_omega(q1, prior, 0.5) -
                         theory::softmin_omega(q2, prior, 0.5));
            const double margin = gap - delta;
            worst = std::max(worst, margin);
            ok = ok && margin <= 1e-9;
        }
        report["checks"]["injected_faulty_operator"] = {
            {"pairs", n}, {"worst_gap_minus_delta", worst}, {"pass", ok}};
        report["pass"] = report["pass"].get<bool>() && ok;
    }

    report["config_hash"] = config::config_hash(resolved);
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f)
            throw std::runtime_error("cannot write report to " + out.string());
        f << report.dump(2) << '\n';
    }

    for (const auto& [name, body] : report["checks"].items())
        std::cout << (body.at("pass").get<bool>() ? "[PASS] " : "[FAIL] ")
                  << name << "\n";
    const bool pass = report["pass"].get<bool>();
    std::cout << (pass ? "all checks passed" : "some checks FAILED")
              << "; report written to " << out.string() << "\n";
    return pass ? 0 : 2;
}

// ---------------------------------------------------------------------------
// plot-data

struct PlotOpts {
    CommonOpts common;
    std::string run;
    std::string out;
};

std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    std::vector<json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(json::parse(line));
    }
    return records;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream f(path, std::ios::trunc);
    for (std::size_t i = 0; i < header.size(); ++i)
        f << (i ? "," : "") << header[i];
    f << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            f << (i ? "," : "") << row[i];
        f << '\n';
    }
}

/// Histogram rows ({step_bucket, value, weight}) from attack decisions.
/// Steps split into ten equal buckets; within a bucket the weights sum to 1,
/// so each bucket reads as a distribution over the sampled values.
std::vector<std::vector<std::string>> histogram_rows(
    const std::vector<json>& decisions, const std::string& field) {
    std::int64_t last_step = 0;
    for (const json& d : decisions)
        if (d.value("mode", "") == "attack")
            last_step = std::max(last_step, d.at("step").get<std::int64_t>());
    const std::int64_t width = std::max<std::int64_t>(1, (last_step + 10) / 10);
    std::map<std::int64_t, int> counts;
    for (const json& d : decisions)
        if (d.value("mode", "") == "attack")
            ++counts[d.at("step").get<std::int64_t>() / width * width];
    std::vector<std::vector<std::string>> rows;
    for (const json& d : decisions) {
        if (d.value("mode", "") != "attack") continue;
        const std::int64_t bucket =
            d.at("step").get<std::int64_t>() / width * width;
        rows.push_back({std::to_string(bucket),
                        fmt_double(d.at(field).get<double>()),
                        fmt_double(1.0 / counts[bucket])});
    }
    return rows;
}

int cmd_plot_data(const PlotOpts& o) {
    const fs::path run(o.run);
    const fs::path metrics_path = run / "metrics.jsonl";
    if (!fs::exists(metrics_path))
        throw config::ConfigError("missing metrics: " + metrics_path.string() +
                                  " not found (is this a run directory?)");
    const fs::path out = o.out.empty() ? run / "plots" : fs::path(o.out);
    require_fresh_or_force(out, o.common.force, "plot-data output");
    fs::create_directories(out);

    const std::vector<json> metrics = read_jsonl(metrics_path);
    std::vector<std::vector<std::string>> curve, ipl_curve;
    for (const json& m : metrics) {
        const std::string type = m.value("type", "");
        if (type == "ego_update") {
            curve.push_back({std::to_string(m.at("step").get<std::int64_t>()),
                             std::to_string(m.at("update").get<int>()),
                             fmt_double(m.at("mean_return").get<double>()),
                             fmt_double(m.at("mean_discounted").get<double>()),
                             fmt_double(m.at("crash_rate").get<double>()),
                             fmt_double(m.at("route_completion").get<double>()),
                             fmt_double(m.at("mean_cost").get<double>()),
                             fmt_double(m.at("replay_fraction").get<double>()),
                             fmt_double(m.at("kl").get<double>()),
                             fmt_double(m.at("entropy").get<double>())});
        } else if (type == "ipl_round") {
            ipl_curve.push_back(
                {std::to_string(m.at("round").get<int>()),
                 std::to_string(m.at("step").get<std::int64_t>()),
                 fmt_double(m.at("mean_loss").get<double>()),
                 std::to_string(m.at("pairs").get<int>()),
                 fmt_double(m.at("grad_norm").get<double>()),
                 fmt_double(m.at("kl_to_ref").get<double>()),
                 fmt_double(
                     m.at("expected_negative_return").get<double>())});
        }
    }
    write_csv(out / "training_curve.csv",
              {"step", "update", "mean_return", "mean_discounted",
               "crash_rate", "route_completion", "mean_cost",
               "replay_fraction", "kl", "entropy"},
              curve);
    write_csv(out / "ipl_curve.csv",
              {"round", "step", "mean_loss", "pairs", "grad_norm", "kl_to_ref",
               "expected_negative_return"},
              ipl_curve);

    const std::vector<json> decisions = read_jsonl(run / "decisions.jsonl");
    write_csv(out / "loglik_hist.csv", {"step_bucket", "loglik", "weight"},
              histogram_rows(decisions, "loglik"));
    write_csv(out / "jhat_hist.csv", {"step_bucket", "jhat", "weight"},
              histogram_rows(decisions, "jhat"));

    // Gap series: training return at each evaluated budget minus the
    // trained policy's held-out return (its replay-adversary row).
    std::vector<std::pair<std::int64_t, double>> eval_points;
    const fs::path eval_root = run / "eval";
    if (fs::exists(eval_root)) {
        std::vector<fs::path> dirs;
        for (const auto& entry : fs::directory_iterator(eval_root))
            if (entry.is_directory()) dirs.push_back(entry.path());
        std::sort(dirs.begin(), dirs.end());
        for (const fs::path& dir : dirs) {
            if (!fs::exists(dir / "eval_meta.json") ||
                !fs::exists(dir / "matrix.csv"))
                continue;
            const json meta =
                ckpt::read_versioned(dir / "eval_meta.json", "eval-meta");
            std::ifstream csv(dir / "matrix.csv");
            std::string line;
            std::getline(csv, line); // header
            std::optional<double> reward;
            while (std::getline(csv, line)) {
                std::vector<std::string> cols;
                std::stringstream ss(line);
                std::string col;
                while (std::getline(ss, col, ',')) cols.push_back(col);
                if (cols.size() < 5 || cols[0] == "replay") continue;
                if (cols[1] == "replay" || !reward)
                    reward = std::stod(cols[4]);
                if (cols[1] == "replay") break;
            }
            if (reward)
                eval_points.emplace_back(
                    meta.at("env_steps").get<std::int64_t>(), *reward);
        }
    }
    std::sort(eval_points.begin(), eval_points.end());
    std::vector<std::vector<std::string>> gap_rows;
    for (const auto& [step, eval_return] : eval_points) {
        double train_return = 0.0;
        bool seen = false;
        for (const json& m : metrics) {
            if (m.value("type", "") != "ego_update") continue;
            if (!seen || m.at("step").get<std::int64_t>() <= step) {
                train_return = m.at("mean_return").get<double>();
                seen = true;
            }
            if (m.at("step").get<std::int64_t>() > step) break;
        }
        if (!seen) continue;
        gap_rows.push_back({std::to_string(step), fmt_double(train_return),
                            fmt_double(eval_return),
                            fmt_double(train_return - eval_return)});
    }
    write_csv(out / "gap.csv", {"step", "train_return", "eval_return", "gap"},
              gap_rows);

    std::cout << "wrote training_curve.csv, ipl_curve.csv, loglik_hist.csv, "
                 "jhat_hist.csv, gap.csv to "
              << out.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop adversarial training for driving policies"};
    app.require_subcommand(1);

    GenCorpusOpts gen;
    CLI::App* gen_cmd = app.add_subcommand(
        "gen-corpus", "Synthesize a scenario corpus with a manifest");
    gen_cmd->add_option("--out", gen.out, "Corpus directory")->required();
    gen_cmd->add_option("--count", gen.count, "Number of scenarios");
    gen_cmd->add_option("--seed", gen.seed, "Corpus seed");
    gen_cmd->add_option("--template", gen.templates,
                        "Template name (repeatable; default all)");
    add_common(gen_cmd, gen.common);

    TrainOpts train;
    CLI::App* train_cmd = app.add_subcommand(
        "train", "Run the closed-loop min-max training loop");
    train_cmd->add_option("--corpus", train.corpus, "Training corpus directory")
        ->required();
    train_cmd->add_option("--out", train.out, "Run directory")->required();
    train_cmd->add_option("--algo", train.algo, "Learner: grpo or ppo");
    train_cmd->add_option("--ipl", train.ipl,
                          "Preference fine-tuning: on or off");
    train_cmd->add_option("--seed", train.seed, "Training seed");
    train_cmd->add_option("--steps", train.steps, "Environment-step budget");
    train_cmd->add_option("--jobs", train.jobs,
                          "Worker threads (0 = all hardware threads)");
    train_cmd->add_flag("--resume", train.resume,
                        "Continue from the checkpoint in the run directory");
    add_common(train_cmd, train.common);

    EvalOpts eval;
    CLI::App* eval_cmd = app.add_subcommand(
        "eval", "Cross-evaluate policies against adversary modes");
    eval_cmd->add_option("--run", eval.run, "Trained run directory")
        ->required();
    eval_cmd->add_option("--corpus", eval.corpus,
                         "Held-out evaluation corpus directory")
        ->required();
    eval_cmd->add_option("--out", eval.out,
                         "Output directory (default <run>/eval/<label>)");
    eval_cmd->add_option("--label", eval.label,
                         "Label under <run>/eval/ (default: corpus name)");
    eval_cmd->add_option("--checkpoint", eval.checkpoint,
                         "Milestone under <run>/checkpoints/ (default: "
                         "latest state)");
    eval_cmd->add_option("--episodes", eval.episodes, "Episodes per cell");
    eval_cmd->add_option("--seed", eval.seed, "Evaluation seed");
    eval_cmd->add_option("--jobs", eval.jobs,
                         "Worker threads (0 = all hardware threads)");
    add_common(eval_cmd, eval.common);

    VerifyOpts verify;
    CLI::App* verify_cmd = app.add_subcommand(
        "verify-theory",
        "Run the tabular verification sweeps and write a JSON report");
    verify_cmd->add_option("--out", verify.out,
                           "Report file (default theory_report.json)");
    verify_cmd->add_option("--seed", verify.seed, "Sweep seed");
    verify_cmd
        ->add_flag("--inject-fault", verify.inject_fault,
                   "Also sweep a deliberately broken operator; the report "
                   "must fail (failure-path exercise)")
        ->group(""); // hidden from --help
    add_common(verify_cmd, verify.common);

    PlotOpts plot;
    CLI::App* plot_cmd = app.add_subcommand(
        "plot-data", "Export training/evaluation CSVs for external plotting");
    plot_cmd->add_option("--run", plot.run, "Run directory")->required();
    plot_cmd->add_option("--out", plot.out,
                         "Output directory (default <run>/plots)");
    add_common(plot_cmd, plot.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    train.jobs_given = train_cmd->count("--jobs") > 0;
    eval.jobs_given = eval_cmd->count("--jobs") > 0;

    try {
        if (app.got_subcommand(gen_cmd)) return cmd_gen_corpus(gen);
        if (app.got_subcommand(train_cmd)) return cmd_train(train);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(eval);
        if (app.got_subcommand(verify_cmd)) return cmd_verify_theory(verify);
        if (app.got_subcommand(plot_cmd)) return cmd_plot_data(plot);
    } catch (const config::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
