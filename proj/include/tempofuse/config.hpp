// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "objective.hpp"

namespace tempofuse {

// Full run configuration. Every field has a default so an empty config file
// is valid; any key not listed here is an error (silent typos are worse than
// loud ones).
struct HyperParams {
    // Model dimensions
    int d = 64;        // shared representation width
    int d_xlmr = 32;   // raw text embedding width
    int d_clip = 48;   // raw image embedding width
    int L = 12;        // token/patch sequence length
    int K = 4;         // experts per modality
    int expansion = 2; // expert hidden-width multiplier
    int heads = 4;     // intra-modal attention heads

    // Temporal module
    int T = 8;           // window length
    int S = 4;           // window stride
    double kappa = 0.5;  // time-decay rate (per day)
    double beta = 0.9;   // momentum smoothing

    // Timestamp-aware transformer variant
    bool transformer_enabled = false;
    int transformer_layers = 2;
    int transformer_heads = 4;
    int transformer_freqs = 8;

    // Prototype memory
    double proto_momentum = 0.99;

    // Loss weights / shape constants
    LossWeights loss;

    // Optimizer & loop
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;
    double dropout = 0.1;
    int epochs = 30;
    int batch_size = 32;
    int patience = 5;
    std::uint64_t seed = 1;

    // Data
    int n_domains = 2;
    // 15% validation keeps threshold calibration stable; 15% test keeps the
    // reported metrics fine-grained at the reference corpus size.
    double split_train = 0.7;
    double split_val = 0.15;
    double split_test = 0.15;

    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v < 1) throw std::runtime_error(std::string("config: ") + name + " must be >= 1");
        };
        positive(d, "d");
        positive(d_xlmr, "d_xlmr");
        positive(d_clip, "d_clip");
        positive(L, "L");
        positive(K, "K");
        positive(expansion, "expansion");
        positive(heads, "heads");
        positive(T, "T");
        positive(S, "S");
        positive(transformer_layers, "transformer_layers");
        positive(transformer_heads, "transformer_heads");
        positive(transformer_freqs, "transformer_freqs");
        positive(epochs, "epochs");
        positive(batch_size, "batch_size");
        positive(patience, "patience");
        positive(n_domains, "n_domains");
        if (S > T) throw std::runtime_error("config: stride S must not exceed window length T");
        if (d % heads != 0) throw std::runtime_error("config: d must be divisible by heads");
        if (d % transformer_heads != 0)
            throw std::runtime_error("config: d must be divisible by transformer_heads");
        if (kappa < 0) throw std::runtime_error("config: kappa must be nonnegative");
        if (beta < 0 || beta >= 1) throw std::runtime_error("config: beta must lie in [0,1)");
        if (proto_momentum <= 0 || proto_momentum >= 1)
            throw std::runtime_error("config: proto_momentum must lie in (0,1)");
        if (lr <= 0) throw std::runtime_error("config: lr must be positive");
        if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
            throw std::runtime_error("config: adam betas must lie in [0,1)");
        if (adam_eps <= 0) throw std::runtime_error("config: adam_eps must be positive");
        if (clip_norm <= 0) throw std::runtime_error("config: clip_norm must be positive");
        if (dropout < 0 || dropout >= 1) throw std::runtime_error("config: dropout must lie in [0,1)");
        if (split_train <= 0 || split_val <= 0 || split_test <= 0)
            throw std::runtime_error("config: split fractions must be positive");
        if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
            throw std::runtime_error("config: split fractions must sum to 1");
        loss.validate();
    }
};

namespace detail {

inline void check_known_keys(const nlohmann::ordered_json& j, const std::vector<std::string>& known,
                             const std::string& scope) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw std::runtime_error("config: unknown key '" + scope + it.key() + "'");
    }
}

template <typename T>
inline void read_field(const nlohmann::ordered_json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw std::runtime_error(std::string("config: key '") + key + "' has the wrong type");
    }
}

} // namespace detail

inline LossWeights loss_weights_from_json(const nlohmann::ordered_json& j) {
    detail::check_known_keys(j,
                             {"align", "tc", "match", "contrast", "domain", "proto", "proto_mem", "rdrop",
                              "tc_seq", "reg", "tau", "rho", "gamma_foc", "epsilon", "margin"},
                             "loss_weights.");
    LossWeights w;
    detail::read_field(j, "align", w.align);
    detail::read_field(j, "tc", w.tc);
    detail::read_field(j, "match", w.match);
    detail::read_field(j, "contrast", w.contrast);
    detail::read_field(j, "domain", w.domain);
    detail::read_field(j, "proto", w.proto);
    detail::read_field(j, "proto_mem", w.proto_mem);
    detail::read_field(j, "rdrop", w.rdrop);
    detail::read_field(j, "tc_seq", w.tc_seq);
    detail::read_field(j, "reg", w.reg);
    detail::read_field(j, "tau", w.tau);
    detail::read_field(j, "rho", w.rho);
    detail::read_field(j, "gamma_foc", w.gamma_foc);
    detail::read_field(j, "epsilon", w.epsilon);
    detail::read_field(j, "margin", w.margin);
    return w;
}

inline HyperParams hyperparams_from_json(const nlohmann::ordered_json& j) {
    detail::check_known_keys(
        j, {"d",          "d_xlmr",        "d_clip",          "L",
            "K",          "expansion",     "heads",           "T",
            "S",          "kappa",         "beta",            "transformer_enabled",
            "transformer_layers",          "transformer_heads",
            "transformer_freqs",           "proto_momentum",  "loss_weights",
            "lr",         "adam_beta1",    "adam_beta2",      "adam_eps",
            "clip_norm",  "dropout",       "epochs",          "batch_size",
            "patience",   "seed",          "n_domains",       "split_train",
            "split_val",  "split_test"},
        "");
    HyperParams hp;
    detail::read_field(j, "d", hp.d);
    detail::read_field(j, "d_xlmr", hp.d_xlmr);
    detail::read_field(j, "d_clip", hp.d_clip);
    detail::read_field(j, "L", hp.L);
    detail::read_field(j, "K", hp.K);
    detail::read_field(j, "expansion", hp.expansion);
    detail::read_field(j, "heads", hp.heads);
    detail::read_field(j, "T", hp.T);
    detail::read_field(j, "S", hp.S);
    detail::read_field(j, "kappa", hp.kappa);
    detail::read_field(j, "beta", hp.beta);
    detail::read_field(j, "transformer_enabled", hp.transformer_enabled);
    detail::read_field(j, "transformer_layers", hp.transformer_layers);
    detail::read_field(j, "transformer_heads", hp.transformer_heads);
    detail::read_field(j, "transformer_freqs", hp.transformer_freqs);
    detail::read_field(j, "proto_momentum", hp.proto_momentum);
    if (j.contains("loss_weights")) {
        if (!j.at("loss_weights").is_object())
            throw std::runtime_error("config: key 'loss_weights' must be an object");
        hp.loss = loss_weights_from_json(j.at("loss_weights"));
    }
    detail::read_field(j, "lr", hp.lr);
    detail::read_field(j, "adam_beta1", hp.adam_beta1);
    detail::read_field(j, "adam_beta2", hp.adam_beta2);
    detail::read_field(j, "adam_eps", hp.adam_eps);
    detail::read_field(j, "clip_norm", hp.clip_norm);
    detail::read_field(j, "dropout", hp.dropout);
    detail::read_field(j, "epochs", hp.epochs);
    detail::read_field(j, "batch_size", hp.batch_size);
    detail::read_field(j, "patience", hp.patience);
    detail::read_field(j, "seed", hp.seed);
    detail::read_field(j, "n_domains", hp.n_domains);
    detail::read_field(j, "split_train", hp.split_train);
    detail::read_field(j, "split_val", hp.split_val);
    detail::read_field(j, "split_test", hp.split_test);
    hp.validate();
    return hp;
}

inline HyperParams load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: " + path + ": " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config: " + path + ": top level must be an object");
    try {
        return hyperparams_from_json(j);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

// Canonical serialization: fixed field order, every field present. Two equal
// HyperParams always produce byte-identical dumps, so the dump's hash
// identifies the configuration.
inline nlohmann::ordered_json hyperparams_to_json(const HyperParams& hp) {
    nlohmann::ordered_json j;
    j["d"] = hp.d;
    j["d_xlmr"] = hp.d_xlmr;
    j["d_clip"] = hp.d_clip;
    j["L"] = hp.L;
    j["K"] = hp.K;
    j["expansion"] = hp.expansion;
    j["heads"] = hp.heads;
    j["T"] = hp.T;
    j["S"] = hp.S;
    j["kappa"] = hp.kappa;
    j["beta"] = hp.beta;
    j["transformer_enabled"] = hp.transformer_enabled;
    j["transformer_layers"] = hp.transformer_layers;
    j["transformer_heads"] = hp.transformer_heads;
    j["transformer_freqs"] = hp.transformer_freqs;
    j["proto_momentum"] = hp.proto_momentum;
    nlohmann::ordered_json lw;
    lw["align"] = hp.loss.align;
    lw["tc"] = hp.loss.tc;
    lw["match"] = hp.loss.match;
    lw["contrast"] = hp.loss.contrast;
    lw["domain"] = hp.loss.domain;
    lw["proto"] = hp.loss.proto;
    lw["proto_mem"] = hp.loss.proto_mem;
    lw["rdrop"] = hp.loss.rdrop;
    lw["tc_seq"] = hp.loss.tc_seq;
    lw["reg"] = hp.loss.reg;
    lw["tau"] = hp.loss.tau;
    lw["rho"] = hp.loss.rho;
    lw["gamma_foc"] = hp.loss.gamma_foc;
    lw["epsilon"] = hp.loss.epsilon;
    lw["margin"] = hp.loss.margin;
    j["loss_weights"] = std::move(lw);
    j["lr"] = hp.lr;
    j["adam_beta1"] = hp.adam_beta1;
    j["adam_beta2"] = hp.adam_beta2;
    j["adam_eps"] = hp.adam_eps;
    j["clip_norm"] = hp.clip_norm;
    j["dropout"] = hp.dropout;
    j["epochs"] = hp.epochs;
    j["batch_size"] = hp.batch_size;
    j["patience"] = hp.patience;
    j["seed"] = hp.seed;
    j["n_domains"] = hp.n_domains;
    j["split_train"] = hp.split_train;
    j["split_val"] = hp.split_val;
    j["split_test"] = hp.split_test;
    return j;
}

inline std::string canonical_config_dump(const HyperParams& hp) { return hyperparams_to_json(hp).dump(); }

// FNV-1a over the canonical dump; stable across platforms for identical
// configurations.
inline std::uint64_t config_hash(const HyperParams& hp) {
    const std::string s = canonical_config_dump(hp);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace tempofuse
