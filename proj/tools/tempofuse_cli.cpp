// SPDX-License-Identifier: Apache-2.0
//
// tempofuse command-line harness: `synth` generates a labeled synthetic
// corpus, `train` fits the model and writes a checkpoint plus a per-step loss
// log, `eval` calibrates a decision threshold on the validation split and
// reports test metrics. Exit codes: 0 success, 2 validation error, 3
// numerical abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tempofuse/checkpoint.hpp"
#include "tempofuse/config.hpp"
#include "tempofuse/data.hpp"
#include "tempofuse/metrics.hpp"
#include "tempofuse/train.hpp"

namespace {

using namespace tempofuse;

struct CommonArgs {
    std::string config_path;
    std::string data_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string split_name = "test";
};

HyperParams resolve_config(const CommonArgs& args) {
    HyperParams hp = args.config_path.empty() ? HyperParams{} : load_config(args.config_path);
    if (args.seed) hp.seed = *args.seed;
    hp.validate();
    return hp;
}

void check_dataset_dims(const Dataset& ds, const HyperParams& hp) {
    if (ds.header.L != hp.L || ds.header.d_xlmr != hp.d_xlmr || ds.header.d_clip != hp.d_clip)
        throw std::runtime_error(
            "config/dataset dimension mismatch: dataset has L=" + std::to_string(ds.header.L) +
            ", d_xlmr=" + std::to_string(ds.header.d_xlmr) + ", d_clip=" + std::to_string(ds.header.d_clip) +
            "; config expects L=" + std::to_string(hp.L) + ", d_xlmr=" + std::to_string(hp.d_xlmr) +
            ", d_clip=" + std::to_string(hp.d_clip));
    for (const PostRecord& r : ds.records)
        if (r.domain_id >= hp.n_domains)
            throw std::runtime_error("config/dataset dimension mismatch: post '" + r.id + "' has domain_id " +
                                     std::to_string(r.domain_id) + " but config n_domains=" +
                                     std::to_string(hp.n_domains));
}

SplitResult make_split(const Dataset& ds, const HyperParams& hp) {
    return split(ds.records, {hp.split_train, hp.split_val, hp.split_test}, hp.seed);
}

const std::vector<PostRecord>& pick_split(const SplitResult& sp, const std::string& name) {
    if (name == "train") return sp.train;
    if (name == "val") return sp.val;
    if (name == "test") return sp.test;
    throw std::runtime_error("unknown split '" + name + "' (expected train, val, or test)");
}

nlohmann::ordered_json report_to_json(const MetricReport& r, const std::string& split_name,
                                      std::size_t n_posts) {
    nlohmann::ordered_json j;
    j["accuracy"] = r.accuracy;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["macro_f1"] = r.macro_f1;
    j["specificity"] = r.specificity;
    if (r.auc)
        j["auc"] = *r.auc;
    else
        j["auc"] = nullptr;
    if (r.mcc)
        j["mcc"] = *r.mcc;
    else
        j["mcc"] = nullptr;
    j["threshold"] = r.threshold;
    nlohmann::ordered_json counts;
    counts["tp"] = r.counts.tp;
    counts["fp"] = r.counts.fp;
    counts["fn"] = r.counts.fn;
    counts["tn"] = r.counts.tn;
    j["counts"] = std::move(counts);
    j["split"] = split_name;
    j["n_posts"] = n_posts;
    return j;
}

nlohmann::ordered_json matrix_row(const std::string& dataset, const std::vector<int>& labels,
                                  const std::vector<double>& scores, double threshold) {
    const MetricReport r = evaluate_scores(labels, scores, threshold);
    nlohmann::ordered_json row;
    row["dataset"] = dataset;
    row["n_posts"] = labels.size();
    row["accuracy"] = r.accuracy;
    row["f1"] = r.f1;
    row["macro_f1"] = r.macro_f1;
    if (r.auc)
        row["auc"] = *r.auc;
    else
        row["auc"] = nullptr;
    if (r.mcc)
        row["mcc"] = *r.mcc;
    else
        row["mcc"] = nullptr;
    return row;
}

int run_synth(const SynthesisConfig& cfg, const std::string& out_path, const std::string& manifest_path) {
    SynthResult res = synth_generate(cfg);
    save_dataset(res.dataset, out_path);
    std::cout << "wrote " << res.dataset.records.size() << " posts to " << out_path << "\n";
    if (!manifest_path.empty()) {
        save_manifest(res.manifest, manifest_path);
        std::cout << "wrote ground-truth manifest to " << manifest_path << "\n";
    }
    return 0;
}

int run_train(const CommonArgs& args) {
    const HyperParams hp = resolve_config(args);
    const Dataset ds = load_dataset(args.data_path);
    check_dataset_dims(ds, hp);
    const SplitResult sp = make_split(ds, hp);

    std::filesystem::create_directories(args.out_dir);
    const std::string log_path = args.out_dir + "/train_log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open '" + log_path + "' for writing");

    TrainResult result = train_model(hp, sp.train, sp.val, &log, &std::cout);
    const std::string ck_path = args.out_dir + "/checkpoint.bin";
    save_checkpoint(ck_path, result.model, result.bank, result.gen);
    std::cout << "best epoch " << result.best_epoch << " (val macro-F1 " << result.best_val_macro_f1
              << "); checkpoint written to " << ck_path << "\n";
    return 0;
}

int run_eval(const CommonArgs& args, const std::string& checkpoint_path) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    HyperParams hp = ck.model.hp;
    if (!args.config_path.empty()) {
        const HyperParams given = load_config(args.config_path);
        if (config_hash(given) != config_hash(hp))
            throw std::runtime_error("--config does not match the checkpoint's embedded configuration");
    }
    if (args.seed) hp.seed = *args.seed;

    const Dataset ds = load_dataset(args.data_path);
    check_dataset_dims(ds, hp);
    const SplitResult sp = make_split(ds, hp);

    // Threshold calibration on validation only; test labels are never seen
    // before the threshold is fixed.
    const SplitScores val = score_posts(ck.model, sp.val);
    const ThresholdResult thr = calibrate_threshold(val.labels, val.scores);
    if (thr.degenerate)
        std::cerr << "warning: all validation scores identical; threshold defaulted to 0.5\n";

    const std::vector<PostRecord>& eval_posts = pick_split(sp, args.split_name);
    if (eval_posts.empty()) throw std::runtime_error("missing split '" + args.split_name + "'");
    const SplitScores scored = score_posts(ck.model, eval_posts, thr.threshold);
    const MetricReport report = evaluate_scores(scored.labels, scored.scores, thr.threshold);

    std::filesystem::create_directories(args.out_dir);
    {
        std::ofstream out(args.out_dir + "/report.json", std::ios::trunc);
        out << report_to_json(report, args.split_name, scored.labels.size()).dump(2) << "\n";
    }
    {
        std::ofstream out(args.out_dir + "/scores.tsv", std::ios::trunc);
        out << "id\tlabel\tdomain\tscore\tpred\tvote\n";
        char buf[64];
        for (std::size_t i = 0; i < scored.ids.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", scored.scores[i]);
            out << scored.ids[i] << "\t" << scored.labels[i] << "\t" << scored.domains[i] << "\t" << buf
                << "\t" << (scored.scores[i] >= thr.threshold ? 1 : 0) << "\t" << scored.vote_classes[i]
                << "\n";
        }
    }
    {
        nlohmann::ordered_json matrix;
        matrix["split"] = args.split_name;
        matrix["threshold"] = thr.threshold;
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        rows.push_back(matrix_row("overall", scored.labels, scored.scores, thr.threshold));
        for (int dom = 0; dom < hp.n_domains; ++dom) {
            std::vector<int> labels;
            std::vector<double> scores;
            for (std::size_t i = 0; i < scored.labels.size(); ++i) {
                if (scored.domains[i] != dom) continue;
                labels.push_back(scored.labels[i]);
                scores.push_back(scored.scores[i]);
            }
            if (labels.empty()) continue;
            rows.push_back(matrix_row("domain_" + std::to_string(dom), labels, scores, thr.threshold));
        }
        matrix["rows"] = std::move(rows);
        std::ofstream out(args.out_dir + "/metric_matrix.json", std::ios::trunc);
        out << matrix.dump(2) << "\n";
    }

    std::cout << "split=" << args.split_name << " n=" << scored.labels.size()
              << " threshold=" << report.threshold << " accuracy=" << report.accuracy
              << " macro_f1=" << report.macro_f1;
    if (report.auc) std::cout << " auc=" << *report.auc;
    std::cout << "\nreports written to " << args.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tempofuse: multimodal misinformation pipeline on synthetic fixture corpora"};
    app.require_subcommand(1);

    SynthesisConfig synth_cfg;
    std::string synth_out = "dataset.jsonl";
    std::string synth_manifest;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    synth->add_option("--out", synth_out, "output dataset path (JSONL)");
    synth->add_option("--manifest", synth_manifest, "optional ground-truth manifest path");
    synth->add_option("--n-posts", synth_cfg.n_posts, "number of posts");
    synth->add_option("--domains", synth_cfg.n_domains, "number of domains");
    synth->add_option("--balance", synth_cfg.balance, "positive-class fraction");
    synth->add_option("--length", synth_cfg.L, "token sequence length L");
    synth->add_option("--d-xlmr", synth_cfg.d_xlmr, "text embedding width");
    synth->add_option("--d-clip", synth_cfg.d_clip, "image embedding width");
    synth->add_option("--strength", synth_cfg.inconsistency_strength,
                      "planted signal strength in [0,1]");
    synth->add_option("--narratives", synth_cfg.narrative_count, "number of narratives");
    synth->add_option("--span-days", synth_cfg.time_span_days, "corpus time span in days");
    synth->add_option("--seed", synth_cfg.seed, "generator seed");

    CommonArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
    train->add_option("--config", train_args.config_path, "config file (JSON); defaults when absent");
    train->add_option("--data", train_args.data_path, "dataset path")->required();
    train->add_option("--out", train_args.out_dir, "output directory")->required();
    std::uint64_t train_seed = 0;
    CLI::Option* train_seed_opt = train->add_option("--seed", train_seed, "override the config seed");

    CommonArgs eval_args;
    std::string eval_checkpoint;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with calibrated threshold");
    eval->add_option("--config", eval_args.config_path, "config file; must match the checkpoint");
    eval->add_option("--data", eval_args.data_path, "dataset path")->required();
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
    eval->add_option("--out", eval_args.out_dir, "output directory")->required();
    std::uint64_t eval_seed = 0;
    CLI::Option* eval_seed_opt = eval->add_option("--seed", eval_seed, "override the config seed");
    eval->add_option("--split", eval_args.split_name, "split to evaluate: train, val, or test");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return run_synth(synth_cfg, synth_out, synth_manifest);
        if (train->parsed()) {
            if (train_seed_opt->count() > 0) train_args.seed = train_seed;
            return run_train(train_args);
        }
        if (eval->parsed()) {
            if (eval_seed_opt->count() > 0) eval_args.seed = eval_seed;
            return run_eval(eval_args, eval_checkpoint);
        }
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const tempofuse::NumericalAbort& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
