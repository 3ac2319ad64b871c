// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"
#include "prototypes.hpp"

namespace tempofuse {

// Binary checkpoint: versioned header, canonical config, generator state,
// ordered parameter blob, prototype bank. All integers and IEEE doubles are
// little-endian (the build targets little-endian hosts; guarded below).
static_assert(std::endian::native == std::endian::little,
              "checkpoint format requires a little-endian host");

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'T', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
inline void write_pod(std::ostream& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
inline T read_pod(std::istream& in, const std::string& path) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: " + path + ": truncated file");
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const std::string& path) {
    const std::uint32_t n = read_pod<std::uint32_t>(in, path);
    if (n > (1u << 24)) throw std::runtime_error("checkpoint: " + path + ": implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("checkpoint: " + path + ": truncated file");
    return s;
}

} // namespace detail

struct GeneratorState {
    std::uint64_t seed = 0;  // the run's master seed
    std::uint32_t epochs_completed = 0;
    std::uint64_t global_step = 0;
};

inline void save_checkpoint(const std::string& path, const Model& m, const PrototypeBank& bank,
                            const GeneratorState& gen) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    out.write(detail::kCheckpointMagic, 4);
    detail::write_pod<std::uint32_t>(out, detail::kCheckpointVersion);
    detail::write_pod<std::uint64_t>(out, config_hash(m.hp));
    detail::write_string(out, canonical_config_dump(m.hp));

    detail::write_pod<std::uint64_t>(out, gen.seed);
    detail::write_pod<std::uint32_t>(out, gen.epochs_completed);
    detail::write_pod<std::uint64_t>(out, gen.global_step);

    detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.params.size()));
    for (const auto& [name, t] : m.params) {
        detail::write_string(out, name);
        detail::write_pod<std::int32_t>(out, t.shape()[0]);
        detail::write_pod<std::int32_t>(out, t.shape()[1]);
        for (double v : t.values()) detail::write_pod<double>(out, v);
    }

    detail::write_pod<std::int32_t>(out, bank.n_datasets);
    detail::write_pod<std::int32_t>(out, bank.d);
    detail::write_pod<double>(out, bank.m);
    for (std::size_t cell = 0; cell < bank.proto.size(); ++cell) {
        detail::write_pod<std::uint8_t>(out, bank.initialized[cell] ? 1 : 0);
        for (double v : bank.proto[cell]) detail::write_pod<double>(out, v);
    }
    out.flush();
    if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

struct Checkpoint {
    Model model;
    PrototypeBank bank;
    GeneratorState gen;
    std::uint64_t stored_config_hash = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw std::runtime_error("checkpoint: " + path + ": bad magic");
    const auto version = detail::read_pod<std::uint32_t>(in, path);
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error("checkpoint: " + path + ": unsupported version " + std::to_string(version));

    Checkpoint ck;
    ck.stored_config_hash = detail::read_pod<std::uint64_t>(in, path);
    const std::string config_json = detail::read_string(in, path);
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: " + path + ": embedded config unreadable: " + e.what());
    }
    HyperParams hp = hyperparams_from_json(j);
    if (config_hash(hp) != ck.stored_config_hash)
        throw std::runtime_error("checkpoint: " + path + ": config hash mismatch");

    ck.gen.seed = detail::read_pod<std::uint64_t>(in, path);
    ck.gen.epochs_completed = detail::read_pod<std::uint32_t>(in, path);
    ck.gen.global_step = detail::read_pod<std::uint64_t>(in, path);

    // Rebuild the registry structure from the config, then overwrite values.
    ck.model = build_model(hp, Rng(hp.seed));
    const auto count = detail::read_pod<std::uint64_t>(in, path);
    if (count != ck.model.params.size())
        throw std::runtime_error("checkpoint: " + path + ": parameter count mismatch");
    for (auto& [name, t] : ck.model.params) {
        const std::string stored = detail::read_string(in, path);
        if (stored != name)
            throw std::runtime_error("checkpoint: " + path + ": parameter order mismatch at '" + stored +
                                     "' (expected '" + name + "')");
        const auto rows = detail::read_pod<std::int32_t>(in, path);
        const auto cols = detail::read_pod<std::int32_t>(in, path);
        if (rows != t.shape()[0] || cols != t.shape()[1])
            throw std::runtime_error("checkpoint: " + path + ": shape mismatch for '" + name + "'");
        Tensor handle = t;
        for (double& v : handle.values()) v = detail::read_pod<double>(in, path);
    }

    const auto n_datasets = detail::read_pod<std::int32_t>(in, path);
    const auto bank_d = detail::read_pod<std::int32_t>(in, path);
    const double bank_m = detail::read_pod<double>(in, path);
    ck.bank = PrototypeBank(n_datasets, bank_d, bank_m);
    for (std::size_t cell = 0; cell < ck.bank.proto.size(); ++cell) {
        ck.bank.initialized[cell] = detail::read_pod<std::uint8_t>(in, path) != 0;
        for (double& v : ck.bank.proto[cell]) v = detail::read_pod<double>(in, path);
    }
    return ck;
}

} // namespace tempofuse
