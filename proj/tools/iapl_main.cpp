#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "iapl/iapl.hpp"

namespace {

std::map<iapl::Family, int> parse_counts(const std::string& spec) {
    std::map<iapl::Family, int> counts;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        size_t eq = tok.find('=');
        if (eq == std::string::npos)
            throw iapl::ConfigError("--counts wants family=N pairs, got '" + tok + "'");
        iapl::Family fam = iapl::family_from_name(tok.substr(0, eq));
        int n = std::stoi(tok.substr(eq + 1));
        if (n < 0) throw iapl::ConfigError("--counts: negative count");
        counts[fam] = n;
    }
    if (counts.empty()) throw iapl::ConfigError("--counts: empty spec");
    return counts;
}

bool parse_switch(const std::string& v, const std::string& flag) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw iapl::ConfigError(flag + " wants on|off, got '" + v + "'");
}

int cmd_gen_data(const std::string& out_dir, const std::string& counts_spec, int size,
                 uint64_t seed) {
    iapl::DatasetSpec spec;
    spec.kind = iapl::DatasetSpec::Kind::Synthetic;
    spec.counts = parse_counts(counts_spec);
    spec.size = size;
    spec.seed = seed;
    std::vector<iapl::Sample> samples = iapl::build_dataset(spec);
    iapl::write_dataset(samples, out_dir);
    std::cout << "wrote " << samples.size() << " images under " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& log_path) {
    iapl::ConfigView cfg(config_path.empty() ? std::map<std::string, std::string>{}
                                             : iapl::load_config_file(config_path));
    iapl::ExperimentSetup setup = iapl::setup_from_config(cfg);
    cfg.finish();

    iapl::DatasetSpec spec;
    spec.kind = iapl::DatasetSpec::Kind::Directory;
    spec.root = data_dir;
    std::vector<iapl::Sample> train_set = iapl::build_dataset(spec);

    iapl::ModelParams<float> params =
        iapl::init_params<float>(setup.enc, setup.cil, setup.flags, setup.train.seed);
    std::vector<iapl::TrainLogRow> log = iapl::train(train_set, params, setup.train);
    iapl::save_checkpoint(params, out_ckpt);
    std::string lp = log_path.empty() ? out_ckpt + ".log.csv" : log_path;
    iapl::write_train_log(log, lp);
    std::cout << "trained on " << train_set.size() << " samples, " << log.size()
              << " steps; checkpoint " << out_ckpt << ", log " << lp << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& config_path,
             const std::string& tta_sw, const std::string& ovs_sw, const std::string& loss_kind,
             const std::string& report_path, const std::string& format, uint64_t seed) {
    iapl::ConfigView cfg(config_path.empty() ? std::map<std::string, std::string>{}
                                             : iapl::load_config_file(config_path));
    iapl::ExperimentSetup setup = iapl::setup_from_config(cfg);
    cfg.finish();
    iapl::TtaConfig tta = setup.tta;
    if (!tta_sw.empty()) tta.enabled = parse_switch(tta_sw, "--tta");
    if (!ovs_sw.empty()) tta.ovs = parse_switch(ovs_sw, "--ovs");
    if (!loss_kind.empty()) tta.loss_kind = iapl::entropy_kind_from_string(loss_kind);

    iapl::ModelParams<float> params = iapl::load_checkpoint<float>(ckpt);
    iapl::DatasetSpec spec;
    spec.kind = iapl::DatasetSpec::Kind::Directory;
    spec.root = data_dir;
    std::vector<iapl::Sample> test_set = iapl::build_dataset(spec);

    auto t0 = std::chrono::steady_clock::now();
    std::vector<iapl::Prediction> preds = iapl::evaluate_model(params, test_set, tta, seed);
    iapl::MetricsReport report = iapl::report_from_predictions<float>(preds, test_set, seed);
    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.config_echo["tta.enabled"] = tta.enabled ? "on" : "off";
    report.config_echo["tta.ovs"] = tta.ovs ? "on" : "off";
    report.config_echo["tta.loss"] =
        tta.loss_kind == iapl::EntropyKind::Averaged ? "averaged" : "pointwise";
    report.config_echo["data"] = data_dir;
    report.config_echo["ckpt"] = ckpt;

    std::printf("acc %.4f  ap %.4f  macro_acc %.4f  macro_ap %.4f  (%d samples, %.1fs)\n",
                report.acc, report.ap, report.macro_acc, report.macro_ap, report.n_samples,
                report.wall_time_sec);
    for (const auto& [fam, m] : report.per_family)
        std::printf("  %-10s acc %.4f  ap %.4f  n=%d\n", fam.c_str(), m.acc, m.ap, m.count);
    if (!report_path.empty()) {
        iapl::emit_report(report, report_path, format);
        std::cout << "report written to " << report_path << " (" << format << ")\n";
    }
    return 0;
}

int cmd_grad_check(uint64_t seed) {
    iapl::EncoderConfig enc;
    enc.depth = 2;
    enc.dim = 8;
    enc.heads = 2;
    enc.patch = 8;
    enc.view_size = 16;
    enc.adapter_dim = 4;
    enc.adapter_blocks = 1;
    enc.token_blocks = 2;
    enc.tokens_per_block = 2;
    iapl::CilConfig cil;
    cil.cond_patch = 16;
    cil.channels = {4, 4, 8, 8};
    iapl::GradCheckReport rep = iapl::grad_check(enc, cil, iapl::ModelFlags{}, seed, 1e-4);
    for (const auto& row : rep.rows)
        std::printf("%-28s max_rel_err %.3e\n", row.name.c_str(), row.max_rel_err);
    std::printf("overall max_rel_err %.3e (%s)\n", rep.max_rel_err,
                rep.max_rel_err < 1e-4 ? "PASS" : "FAIL");
    return rep.max_rel_err < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"image-adaptive prompt learning toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "write a synthetic PNG dataset");
    std::string gen_out, gen_counts = "real=100,fakeA=100";
    int gen_size = 64;
    uint64_t gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--counts", gen_counts, "family=N, comma separated");
    gen->add_option("--size", gen_size, "image side in pixels");
    gen->add_option("--seed", gen_seed, "generator seed");

    auto* tr = app.add_subcommand("train", "train a detector");
    std::string tr_cfg, tr_data, tr_out, tr_log;
    tr->add_option("--config", tr_cfg, "key = value config file");
    tr->add_option("--data", tr_data, "dataset directory (real/ and fake/)")->required();
    tr->add_option("--out", tr_out, "output checkpoint path")->required();
    tr->add_option("--log", tr_log, "training log CSV (default <out>.log.csv)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_cfg, ev_tta, ev_ovs, ev_loss, ev_report, ev_format = "json";
    uint64_t ev_seed = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--config", ev_cfg, "config file for tta overrides");
    ev->add_option("--tta", ev_tta, "on|off");
    ev->add_option("--ovs", ev_ovs, "on|off");
    ev->add_option("--loss", ev_loss, "averaged|pointwise");
    ev->add_option("--report", ev_report, "report output path");
    ev->add_option("--format", ev_format, "csv|json|svg");
    ev->add_option("--seed", ev_seed, "evaluation seed");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
    uint64_t gc_seed = 0;
    gc->add_option("--seed", gc_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(gen)) return cmd_gen_data(gen_out, gen_counts, gen_size, gen_seed);
        if (app.got_subcommand(tr)) return cmd_train(tr_cfg, tr_data, tr_out, tr_log);
        if (app.got_subcommand(ev))
            return cmd_eval(ev_ckpt, ev_data, ev_cfg, ev_tta, ev_ovs, ev_loss, ev_report,
                            ev_format, ev_seed);
        if (app.got_subcommand(gc)) return cmd_grad_check(gc_seed);
    } catch (const iapl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const iapl::ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const iapl::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const iapl::IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const iapl::FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
