#include "ssda/config.hpp"
#include "ssda/data.hpp"
#include "ssda/errors.hpp"
#include "ssda/gradcheck.hpp"
#include "ssda/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "TOML-style key = value config file");
    cmd->add_option("--set", flags.overrides, "Override a config key, e.g. --set pseudo.tau2=0.3")
        ->take_all();
    cmd->add_option("--seed", flags.seed, "Run seed (overrides the config)");
    cmd->add_option("--out", flags.out_dir, "Output directory (overrides the config)");
}

ssda::RunConfig resolve_config(const CommonFlags& flags) {
    ssda::RunConfig cfg;
    if (!flags.config_path.empty()) cfg = ssda::load_config(flags.config_path);
    for (const std::string& kv : flags.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ssda::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        ssda::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (flags.seed.has_value()) cfg.seed = *flags.seed;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    ssda::validate(cfg);
    return cfg;
}

ssda::SsdaSplit resolve_split(const ssda::RunConfig& cfg) {
    if (!cfg.csv_path.empty()) return ssda::load_csv(cfg.csv_path);
    ssda::DomainScenario scenario = cfg.scenario;
    scenario.seed = ssda::derive_seed({cfg.seed, 0xda7a});
    return ssda::generate(scenario);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

void print_metrics(const ssda::MetricsRecord& m) {
    std::cout << "step=" << m.step << " total=" << format_double(m.total)
              << " base=" << format_double(m.base) << " intra=" << format_double(m.intra)
              << " inter=" << format_double(m.inter) << " batch=" << format_double(m.batch)
              << " overall_acc=" << format_double(m.overall_accuracy)
              << " mca=" << format_double(m.mean_class_accuracy) << "\n";
}

int run_generate(const CommonFlags& flags, const std::string& out_file) {
    const ssda::RunConfig cfg = resolve_config(flags);
    ssda::DomainScenario scenario = cfg.scenario;
    scenario.seed = ssda::derive_seed({cfg.seed, 0xda7a});
    const ssda::SsdaSplit split = ssda::generate(scenario);
    std::filesystem::path path = out_file.empty()
                                     ? std::filesystem::path(cfg.out_dir) / "data.csv"
                                     : std::filesystem::path(out_file);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    ssda::write_csv(path.string(), split);
    std::cout << "wrote " << path.string() << " (" << split.source.features.rows() << " source, "
              << split.target_labeled.features.rows() << " labeled target, "
              << split.target_unlabeled.rows() << " unlabeled target)\n";
    return 0;
}

int run_train(const CommonFlags& flags) {
    const ssda::RunConfig cfg = resolve_config(flags);
    const ssda::TrainResult result = ssda::train(cfg);
    print_metrics(result.final_metrics);
    std::cout << "checkpoint: " << result.checkpoint_path << "\n"
              << "metrics:    " << result.metrics_path << "\n"
              << "summary:    " << result.summary_path << "\n";
    return 0;
}

int run_eval(const CommonFlags& flags, const std::string& checkpoint) {
    const ssda::RunConfig cfg = resolve_config(flags);
    const ssda::SsdaSplit split = resolve_split(cfg);
    const ssda::MetricsRecord record =
        ssda::evaluate(checkpoint, split.target_unlabeled, split.target_eval);
    std::cout << "overall_acc=" << format_double(record.overall_accuracy)
              << " mca=" << format_double(record.mean_class_accuracy) << "\n";
    return 0;
}

int run_ablate(const CommonFlags& flags, std::size_t seed_count) {
    ssda::RunConfig cfg = resolve_config(flags);
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < seed_count; ++s) seeds.push_back(s);
    const std::vector<ssda::SuiteRow> rows = ssda::ablation_suite(cfg, seeds);

    std::filesystem::create_directories(cfg.out_dir);
    const std::string table_path = cfg.out_dir + "/ablation.csv";
    std::ofstream out(table_path, std::ios::trunc);
    if (!out) throw ssda::IoError("ablate: cannot open " + table_path);
    out << "label,intra,inter,batch,prototype_ema,prototype_branch,linear_branch,"
           "mean_mca,std_mca,mean_overall,std_overall,config_hash\n";
    for (const auto& row : rows) {
        out << row.label << ',' << row.mask.intra << ',' << row.mask.inter << ',' << row.mask.batch
            << ',' << row.mask.prototype_ema << ',' << row.mask.prototype_branch << ','
            << row.mask.linear_branch << ',' << row.mean_mca << ',' << row.std_mca << ','
            << row.mean_overall << ',' << row.std_overall << ',' << row.config_hash << '\n';
        std::cout << row.label << ": mca=" << format_double(row.mean_mca) << " +- "
                  << format_double(row.std_mca) << " (hash " << row.config_hash << ")\n";
    }
    std::cout << "wrote " << table_path << "\n";
    return 0;
}

int run_sweep_tau2(const CommonFlags& flags, std::vector<double> values, std::size_t seed_count) {
    ssda::RunConfig cfg = resolve_config(flags);
    if (values.empty()) values = {0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < seed_count; ++s) seeds.push_back(s);
    const auto points = ssda::tau2_sweep(cfg, values, seeds);

    std::filesystem::create_directories(cfg.out_dir);
    const std::string table_path = cfg.out_dir + "/tau2_sweep.csv";
    std::ofstream out(table_path, std::ios::trunc);
    if (!out) throw ssda::IoError("sweep-tau2: cannot open " + table_path);
    out << "tau2,control,seed,mca,overall\n";
    for (const auto& p : points) {
        out << p.tau2 << ',' << (p.control ? 1 : 0) << ',' << p.seed << ',' << p.mca << ','
            << p.overall << '\n';
    }
    std::cout << "wrote " << table_path << " (" << points.size() << " rows)\n";
    return 0;
}

int run_sweep_shots(const CommonFlags& flags, std::vector<std::size_t> shots, std::size_t seed_count) {
    ssda::RunConfig cfg = resolve_config(flags);
    if (shots.empty()) shots = {1, 3, 5, 10};
    std::vector<std::uint64_t> seeds;
    for (std::size_t s = 0; s < seed_count; ++s) seeds.push_back(s);
    const auto result = ssda::shots_sweep(cfg, shots, seeds);

    std::filesystem::create_directories(cfg.out_dir);
    const std::string table_path = cfg.out_dir + "/shots_sweep.csv";
    std::ofstream out(table_path, std::ios::trunc);
    if (!out) throw ssda::IoError("sweep-shots: cannot open " + table_path);
    out << "shots,seed,mca,overall\n";
    for (const auto& p : result.points) {
        out << p.shots << ',' << p.seed << ',' << p.mca << ',' << p.overall << '\n';
    }
    std::cout << "wrote " << table_path << "\nspearman_rho=" << format_double(result.spearman_rho)
              << "\n";
    return 0;
}

int run_gradcheck(const CommonFlags& flags, std::size_t seed_count, double tolerance) {
    const ssda::RunConfig cfg = resolve_config(flags);
    const ssda::GradCheckReport report = ssda::run_gradient_checks(cfg.seed, seed_count);
    // One line per distinct check name with its worst error across seeds.
    std::map<std::string, double> worst_by_name;
    for (const auto& entry : report.entries) {
        auto [it, inserted] = worst_by_name.try_emplace(entry.name, entry.max_rel_err);
        if (!inserted) it->second = std::max(it->second, entry.max_rel_err);
    }
    for (const auto& [name, err] : worst_by_name) {
        std::cout << (err <= tolerance ? "[ok]   " : "[FAIL] ") << name << " max_rel_err=" << err
                  << "\n";
    }
    std::cout << "worst=" << report.worst << " tolerance=" << tolerance << "\n";
    if (!report.passed(tolerance)) {
        throw ssda::NumericError("gradient check failed (worst error above tolerance)");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prototype-based semi-supervised domain adaptation workbench"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string generate_out;
    std::string eval_checkpoint;
    std::size_t seed_count = 5;
    std::vector<double> tau2_values;
    std::vector<std::size_t> shot_values;
    double gradcheck_tolerance = 1e-4;

    CLI::App* cmd_generate = app.add_subcommand("generate", "Write a synthetic scenario to CSV");
    add_common(cmd_generate, flags);
    cmd_generate->add_option("--file", generate_out, "Output CSV path (default <out>/data.csv)");

    CLI::App* cmd_train = app.add_subcommand("train", "Run the full training protocol");
    add_common(cmd_train, flags);

    CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on the unlabeled split");
    add_common(cmd_eval, flags);
    cmd_eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();

    CLI::App* cmd_ablate = app.add_subcommand("ablate", "Loss-term and prototype ablation table");
    add_common(cmd_ablate, flags);
    cmd_ablate->add_option("--seeds", seed_count, "Number of seeds (0..n-1)");

    CLI::App* cmd_tau2 = app.add_subcommand("sweep-tau2", "MCA as a function of tau2");
    add_common(cmd_tau2, flags);
    cmd_tau2->add_option("--values", tau2_values, "tau2 values")->take_all();
    cmd_tau2->add_option("--seeds", seed_count, "Number of seeds (0..n-1)");

    CLI::App* cmd_shots = app.add_subcommand("sweep-shots", "Accuracy as a function of shots per class");
    add_common(cmd_shots, flags);
    cmd_shots->add_option("--shots", shot_values, "Shot counts")->take_all();
    cmd_shots->add_option("--seeds", seed_count, "Number of seeds (0..n-1)");

    CLI::App* cmd_gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
    add_common(cmd_gradcheck, flags);
    cmd_gradcheck->add_option("--seeds", seed_count, "Random instances per check");
    cmd_gradcheck->add_option("--tolerance", gradcheck_tolerance, "Max relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (cmd_generate->parsed()) return run_generate(flags, generate_out);
        if (cmd_train->parsed()) return run_train(flags);
        if (cmd_eval->parsed()) return run_eval(flags, eval_checkpoint);
        if (cmd_ablate->parsed()) return run_ablate(flags, seed_count);
        if (cmd_tau2->parsed()) return run_sweep_tau2(flags, tau2_values, seed_count);
        if (cmd_shots->parsed()) return run_sweep_shots(flags, shot_values, seed_count);
        if (cmd_gradcheck->parsed()) return run_gradcheck(flags, seed_count, gradcheck_tolerance);
    } catch (const ssda::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ssda::NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 2;
    } catch (const ssda::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
