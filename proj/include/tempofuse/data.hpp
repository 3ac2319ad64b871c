// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rng.hpp"

namespace tempofuse {

using ordered_json = nlohmann::ordered_json;

// One social-media item with fixture embeddings standing in for the text and
// image encoder outputs.
struct PostRecord {
    std::string id;
    std::int64_t timestamp = 0;       // Unix seconds
    int label = 0;                    // 0 genuine, 1 misleading
    int match_label = 1;              // 0 inconsistent, 1 consistent
    int domain_id = 0;
    std::vector<double> text_emb;     // row-major [L x d_xlmr]
    std::vector<double> img_emb;      // [d_clip]
};

struct DatasetHeader {
    int L = 0;
    int d_xlmr = 0;
    int d_clip = 0;
};

struct Dataset {
    DatasetHeader header;
    std::vector<PostRecord> records;
};

// Chronological sort key shared across the pipeline.
inline bool post_before(const PostRecord& a, const PostRecord& b) {
    return std::tie(a.timestamp, a.id) < std::tie(b.timestamp, b.id);
}

struct SynthesisConfig {
    int n_posts = 2000;
    int n_domains = 2;
    double balance = 0.5;             // target misleading fraction at full strength
    int L = 12;
    int d_xlmr = 32;
    int d_clip = 48;
    double inconsistency_strength = 1.0;  // 0 = labels independent of embeddings
    // Few long narratives keep time windows narrative-coherent: windows mix
    // labels only where adjacent narratives meet, so boundary posts stay a
    // small fraction of the corpus at the default window length.
    int narrative_count = 6;
    double time_span_days = 30.0;
    std::uint64_t seed = 1;
};

// Per-post generation provenance, written alongside the dataset.
struct ManifestEntry {
    std::string id;
    int narrative = 0;
    int narrative_label = 0;
    bool topic_matched = true;
};

namespace detail {

inline ordered_json parse_line(const std::string& line, const std::string& path, std::size_t line_no) {
    ordered_json j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        std::ostringstream os;
        os << path << ":" << line_no << ": malformed record (not a JSON object)";
        throw std::runtime_error(os.str());
    }
    return j;
}

[[noreturn]] inline void field_error(const std::string& path, std::size_t line_no, const std::string& field,
                                     const std::string& what) {
    std::ostringstream os;
    os << path << ":" << line_no << ": field '" << field << "' " << what;
    throw std::runtime_error(os.str());
}

inline std::vector<double> read_doubles(const ordered_json& j, const char* field, std::size_t expect,
                                        const std::string& path, std::size_t line_no) {
    if (!j.contains(field) || !j[field].is_array()) field_error(path, line_no, field, "missing or not an array");
    std::vector<double> out;
    out.reserve(j[field].size());
    for (const auto& v : j[field]) {
        if (!v.is_number()) field_error(path, line_no, field, "contains a non-numeric entry");
        out.push_back(v.get<double>());
        if (!std::isfinite(out.back())) field_error(path, line_no, field, "contains a non-finite entry");
    }
    if (out.size() != expect) {
        std::ostringstream os;
        os << "has length " << out.size() << ", expected " << expect;
        field_error(path, line_no, field, os.str());
    }
    return out;
}

} // namespace detail

inline constexpr const char* kDatasetFormatName = "tempofuse-posts";
inline constexpr int kDatasetFormatVersion = 1;

// Serializes one record in the canonical key order used by save_dataset.
inline ordered_json record_to_json(const PostRecord& r) {
    ordered_json j;
    j["id"] = r.id;
    j["timestamp"] = r.timestamp;
    j["label"] = r.label;
    j["match_label"] = r.match_label;
    j["domain_id"] = r.domain_id;
    j["text_emb"] = r.text_emb;
    j["img_emb"] = r.img_emb;
    return j;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    ordered_json header;
    header["format"] = kDatasetFormatName;
    header["version"] = kDatasetFormatVersion;
    header["L"] = ds.header.L;
    header["d_xlmr"] = ds.header.d_xlmr;
    header["d_clip"] = ds.header.d_clip;
    f << header.dump() << "\n";
    for (const PostRecord& r : ds.records) f << record_to_json(r).dump() << "\n";
    if (!f) throw std::runtime_error("write failed: " + path);
}

// Loads a line-delimited dataset, validating every record against the header
// dimensions. Errors name the offending line and field. An empty file yields
// an empty dataset.
inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open dataset: " + path);
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j = detail::parse_line(line, path, line_no);
        if (!have_header) {
            for (auto it = j.begin(); it != j.end(); ++it) {
                const std::string& k = it.key();
                if (k != "format" && k != "version" && k != "L" && k != "d_xlmr" && k != "d_clip")
                    detail::field_error(path, line_no, k, "is not a recognized header field");
            }
            if (!j.contains("format") || j["format"] != kDatasetFormatName)
                detail::field_error(path, line_no, "format", "missing or unrecognized");
            if (!j.contains("version") || !j["version"].is_number_integer() ||
                j["version"].get<int>() != kDatasetFormatVersion)
                detail::field_error(path, line_no, "version", "missing or unsupported");
            for (const char* k : {"L", "d_xlmr", "d_clip"}) {
                if (!j.contains(k) || !j[k].is_number_integer() || j[k].get<int>() < 1)
                    detail::field_error(path, line_no, k, "must be a positive integer");
            }
            ds.header.L = j["L"].get<int>();
            ds.header.d_xlmr = j["d_xlmr"].get<int>();
            ds.header.d_clip = j["d_clip"].get<int>();
            have_header = true;
            continue;
        }
        PostRecord r;
        if (!j.contains("id") || !j["id"].is_string()) detail::field_error(path, line_no, "id", "missing or not a string");
        r.id = j["id"].get<std::string>();
        if (!j.contains("timestamp") || !j["timestamp"].is_number_integer())
            detail::field_error(path, line_no, "timestamp", "missing or not an integer");
        r.timestamp = j["timestamp"].get<std::int64_t>();
        for (const char* k : {"label", "match_label", "domain_id"}) {
            if (!j.contains(k) || !j[k].is_number_integer())
                detail::field_error(path, line_no, k, "missing or not an integer");
        }
        r.label = j["label"].get<int>();
        r.match_label = j["match_label"].get<int>();
        r.domain_id = j["domain_id"].get<int>();
        if (r.label != 0 && r.label != 1) detail::field_error(path, line_no, "label", "must be 0 or 1");
        if (r.match_label != 0 && r.match_label != 1)
            detail::field_error(path, line_no, "match_label", "must be 0 or 1");
        if (r.domain_id < 0) detail::field_error(path, line_no, "domain_id", "must be nonnegative");
        r.text_emb = detail::read_doubles(j, "text_emb",
                                          static_cast<std::size_t>(ds.header.L) * ds.header.d_xlmr, path, line_no);
        r.img_emb = detail::read_doubles(j, "img_emb", static_cast<std::size_t>(ds.header.d_clip), path, line_no);
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k != "id" && k != "timestamp" && k != "label" && k != "match_label" && k != "domain_id" &&
                k != "text_emb" && k != "img_emb")
                detail::field_error(path, line_no, k, "is not a recognized record field");
        }
        ds.records.push_back(std::move(r));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

namespace detail {

constexpr int kTopicDim = 16;
constexpr double kTokenNoise = 0.3;
constexpr double kImageNoise = 0.3;
constexpr double kDistortScale = 0.05;
constexpr double kDriftScale = 0.6;

// Places a topic-dimensional vector in the leading coordinates of a wider
// embedding; the remaining coordinates are left at zero (noise is added by the
// caller). Keeping the topic in the shared leading coordinates of both
// modalities is what makes cross-modal discrepancy separable after learned
// projections.
inline std::vector<double> embed_topic(const std::vector<double>& topic, int width) {
    std::vector<double> out(static_cast<std::size_t>(width), 0.0);
    for (int i = 0; i < kTopicDim && i < width; ++i) out[static_cast<std::size_t>(i)] = topic[static_cast<std::size_t>(i)];
    return out;
}

inline std::vector<double> gaussian_vec(Rng& rng, int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.gaussian();
    return v;
}

struct DomainDistortion {
    std::vector<double> a_text, b_text;  // [d_xlmr x d_xlmr], [d_xlmr]
    std::vector<double> a_img, b_img;    // [d_clip x d_clip], [d_clip]
};

inline DomainDistortion make_distortion(Rng rng, int d_xlmr, int d_clip) {
    DomainDistortion d;
    auto make_affine = [](Rng r, int n, std::vector<double>& a, std::vector<double>& b) {
        a.assign(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                a[static_cast<std::size_t>(i) * n + j] = (i == j ? 1.0 : 0.0) + kDistortScale * r.gaussian();
        b.resize(static_cast<std::size_t>(n));
        for (auto& x : b) x = kDistortScale * r.gaussian();
    };
    make_affine(rng.fork("text"), d_xlmr, d.a_text, d.b_text);
    make_affine(rng.fork("img"), d_clip, d.a_img, d.b_img);
    return d;
}

inline void apply_affine(std::vector<double>& x, const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> y(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = b[static_cast<std::size_t>(i)];
        for (int j = 0; j < n; ++j) s += a[static_cast<std::size_t>(i) * n + j] * x[static_cast<std::size_t>(j)];
        y[static_cast<std::size_t>(i)] = s;
    }
    x = std::move(y);
}

} // namespace detail

struct SynthResult {
    Dataset dataset;
    std::vector<ManifestEntry> manifest;  // aligned with dataset.records
};

// Generates a corpus of narrative bursts. Each narrative owns a random
// disjoint time slot (random cut points over the span) and a latent topic
// shared by the text and image embeddings; misleading posts swap the image
// topic for a drifting off-narrative topic with probability
// inconsistency_strength. At strength 0 the labels are independent fair
// coins, so no embedding or timestamp statistic carries label signal.
inline SynthResult synth_generate(const SynthesisConfig& cfg) {
    if (cfg.n_posts < 2) throw std::runtime_error("synth: n_posts must be at least 2");
    if (cfg.n_domains < 1) throw std::runtime_error("synth: n_domains must be at least 1");
    if (cfg.narrative_count < 1) throw std::runtime_error("synth: narrative_count must be at least 1");
    if (cfg.L < 1 || cfg.d_xlmr < 1 || cfg.d_clip < 1) throw std::runtime_error("synth: dimensions must be positive");
    if (cfg.inconsistency_strength < 0.0 || cfg.inconsistency_strength > 1.0)
        throw std::runtime_error("synth: inconsistency_strength must lie in [0,1]");
    if (cfg.balance <= 0.0 || cfg.balance >= 1.0) throw std::runtime_error("synth: balance must lie in (0,1)");
    if (cfg.time_span_days <= 0.0) throw std::runtime_error("synth: time_span_days must be positive");

    Rng root(cfg.seed);
    const int N = cfg.narrative_count;
    const double span_seconds = cfg.time_span_days * 86400.0;

    // Disjoint random time slots: cut the span at N-1 sorted uniform points,
    // then shuffle cell ownership so slot order is independent of narrative id.
    std::vector<double> cuts;
    {
        Rng r = root.fork("cuts");
        for (int i = 0; i + 1 < N; ++i) cuts.push_back(r.uniform(0.0, span_seconds));
        std::sort(cuts.begin(), cuts.end());
    }
    std::vector<std::pair<double, double>> slots;
    {
        double prev = 0.0;
        for (double c : cuts) {
            slots.emplace_back(prev, c);
            prev = c;
        }
        slots.emplace_back(prev, span_seconds);
        Rng r = root.fork("slot-shuffle");
        r.shuffle(slots);
    }

    struct Narrative {
        int label;
        std::vector<double> topic;
        std::vector<double> mismatch_base;
        std::vector<double> drift_dir;
        double t0, t1;
    };
    std::vector<Narrative> narratives;
    narratives.reserve(static_cast<std::size_t>(N));
    for (int n = 0; n < N; ++n) {
        Rng rn = root.fork("narrative", static_cast<std::uint64_t>(n));
        Narrative nar;
        nar.label = rn.fork("label").bernoulli(cfg.balance) ? 1 : 0;
        Rng rt = rn.fork("topic");
        nar.topic = detail::gaussian_vec(rt, detail::kTopicDim);
        Rng rm = rn.fork("mismatch");
        nar.mismatch_base = detail::gaussian_vec(rm, detail::kTopicDim);
        Rng rd = rn.fork("drift");
        nar.drift_dir = detail::gaussian_vec(rd, detail::kTopicDim);
        nar.t0 = slots[static_cast<std::size_t>(n)].first;
        nar.t1 = slots[static_cast<std::size_t>(n)].second;
        narratives.push_back(std::move(nar));
    }

    std::vector<detail::DomainDistortion> distortions;
    distortions.reserve(static_cast<std::size_t>(cfg.n_domains));
    for (int dom = 0; dom < cfg.n_domains; ++dom)
        distortions.push_back(detail::make_distortion(root.fork("domain-distort", static_cast<std::uint64_t>(dom)),
                                                      cfg.d_xlmr, cfg.d_clip));

    struct Draft {
        PostRecord rec;
        ManifestEntry man;
    };
    std::vector<Draft> drafts;
    drafts.reserve(static_cast<std::size_t>(cfg.n_posts));

    const int base_count = cfg.n_posts / N;
    for (int n = 0; n < N; ++n) {
        const int count = base_count + (n < cfg.n_posts % N ? 1 : 0);
        const Narrative& nar = narratives[static_cast<std::size_t>(n)];
        for (int i = 0; i < count; ++i) {
            Rng rp = root.fork("narrative", static_cast<std::uint64_t>(n)).fork("post", static_cast<std::uint64_t>(i));
            Draft d;
            d.man.narrative = n;
            d.man.narrative_label = nar.label;

            const double t = rp.fork("time").uniform(nar.t0, nar.t1);
            d.rec.timestamp = static_cast<std::int64_t>(t);

            // Label coherence scales with the planted signal: at strength s the
            // post inherits the narrative label with probability s, otherwise
            // it is an independent fair coin. At s=0 labels carry no
            // information about topics, timestamps, or domains.
            const bool inherit = rp.fork("inherit").bernoulli(cfg.inconsistency_strength);
            d.rec.label = inherit ? nar.label : (rp.fork("coin").bernoulli(0.5) ? 1 : 0);

            bool matched = true;
            if (d.rec.label == 1 && rp.fork("swap").bernoulli(cfg.inconsistency_strength)) matched = false;
            d.rec.match_label = matched ? 1 : 0;
            d.man.topic_matched = matched;

            d.rec.domain_id = static_cast<int>(rp.fork("domain").below(static_cast<std::uint64_t>(cfg.n_domains)));

            // Image topic: shared narrative topic when matched; otherwise an
            // off-narrative topic that drifts across the narrative's slot.
            std::vector<double> img_topic;
            if (matched) {
                img_topic = nar.topic;
            } else {
                img_topic = nar.mismatch_base;
                const double frac = nar.t1 > nar.t0 ? (t - nar.t0) / (nar.t1 - nar.t0) : 0.0;
                Rng rj = rp.fork("jitter");
                for (int k = 0; k < detail::kTopicDim; ++k)
                    img_topic[static_cast<std::size_t>(k)] +=
                        detail::kDriftScale * frac * nar.drift_dir[static_cast<std::size_t>(k)] +
                        0.3 * rj.gaussian();
            }

            Rng rtx = rp.fork("text-noise");
            d.rec.text_emb.resize(static_cast<std::size_t>(cfg.L) * cfg.d_xlmr);
            const std::vector<double> text_base = detail::embed_topic(nar.topic, cfg.d_xlmr);
            for (int r = 0; r < cfg.L; ++r)
                for (int c = 0; c < cfg.d_xlmr; ++c)
                    d.rec.text_emb[static_cast<std::size_t>(r) * cfg.d_xlmr + c] =
                        text_base[static_cast<std::size_t>(c)] + detail::kTokenNoise * rtx.gaussian();

            Rng rim = rp.fork("img-noise");
            d.rec.img_emb = detail::embed_topic(img_topic, cfg.d_clip);
            for (int c = 0; c < cfg.d_clip; ++c)
                d.rec.img_emb[static_cast<std::size_t>(c)] += detail::kImageNoise * rim.gaussian();

            const detail::DomainDistortion& dist = distortions[static_cast<std::size_t>(d.rec.domain_id)];
            for (int r = 0; r < cfg.L; ++r) {
                std::vector<double> rowv(d.rec.text_emb.begin() + static_cast<std::size_t>(r) * cfg.d_xlmr,
                                         d.rec.text_emb.begin() + static_cast<std::size_t>(r + 1) * cfg.d_xlmr);
                detail::apply_affine(rowv, dist.a_text, dist.b_text, cfg.d_xlmr);
                std::copy(rowv.begin(), rowv.end(), d.rec.text_emb.begin() + static_cast<std::size_t>(r) * cfg.d_xlmr);
            }
            detail::apply_affine(d.rec.img_emb, dist.a_img, dist.b_img, cfg.d_clip);

            drafts.push_back(std::move(d));
        }
    }

    // Ids are assigned after the chronological sort so (timestamp, id) order
    // coincides with file order.
    std::stable_sort(drafts.begin(), drafts.end(), [](const Draft& a, const Draft& b) {
        return std::tie(a.rec.timestamp, a.man.narrative) < std::tie(b.rec.timestamp, b.man.narrative);
    });
    SynthResult out;
    out.dataset.header = {cfg.L, cfg.d_xlmr, cfg.d_clip};
    out.dataset.records.reserve(drafts.size());
    out.manifest.reserve(drafts.size());
    char idbuf[32];
    for (std::size_t i = 0; i < drafts.size(); ++i) {
        std::snprintf(idbuf, sizeof(idbuf), "p%06zu", i);
        drafts[i].rec.id = idbuf;
        drafts[i].man.id = idbuf;
        out.dataset.records.push_back(std::move(drafts[i].rec));
        out.manifest.push_back(std::move(drafts[i].man));
    }
    return out;
}

inline void save_manifest(const std::vector<ManifestEntry>& manifest, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    for (const ManifestEntry& m : manifest) {
        ordered_json j;
        j["id"] = m.id;
        j["narrative"] = m.narrative;
        j["narrative_label"] = m.narrative_label;
        j["topic_matched"] = m.topic_matched;
        f << j.dump() << "\n";
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

struct SplitResult {
    std::vector<PostRecord> train, val, test;
};

// Stratifies by (label, domain_id), shuffles each stratum with a stream forked
// from the seed, and allocates by largest remainder (ties resolved in
// train, val, test order).
inline SplitResult split(const std::vector<PostRecord>& records, const std::array<double, 3>& ratios,
                         std::uint64_t seed) {
    for (double r : ratios)
        if (r < 0.0) throw std::runtime_error("split: ratios must be nonnegative");
    const double rsum = ratios[0] + ratios[1] + ratios[2];
    if (std::fabs(rsum - 1.0) > 1e-9) throw std::runtime_error("split: ratios must sum to 1");

    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < records.size(); ++i)
        strata[{records[i].label, records[i].domain_id}].push_back(i);

    Rng root(seed);
    SplitResult out;
    for (auto& [key, idx] : strata) {
        if (idx.size() < 3) {
            std::ostringstream os;
            os << "split: stratum (label=" << key.first << ", domain=" << key.second << ") has "
               << idx.size() << " records; at least 3 required";
            throw std::runtime_error(os.str());
        }
        Rng r = root.fork("stratum", (static_cast<std::uint64_t>(key.first) << 32) ^
                                         static_cast<std::uint64_t>(key.second));
        r.shuffle(idx);
        const double n = static_cast<double>(idx.size());
        std::array<std::size_t, 3> counts;
        std::array<double, 3> frac;
        std::size_t assigned = 0;
        for (int k = 0; k < 3; ++k) {
            const double exact = ratios[static_cast<std::size_t>(k)] * n;
            counts[static_cast<std::size_t>(k)] = static_cast<std::size_t>(std::floor(exact));
            frac[static_cast<std::size_t>(k)] = exact - std::floor(exact);
            assigned += counts[static_cast<std::size_t>(k)];
        }
        while (assigned < idx.size()) {
            int best = 0;
            for (int k = 1; k < 3; ++k)
                if (frac[static_cast<std::size_t>(k)] > frac[static_cast<std::size_t>(best)]) best = k;
            counts[static_cast<std::size_t>(best)] += 1;
            frac[static_cast<std::size_t>(best)] = -1.0;
            ++assigned;
        }
        std::size_t pos = 0;
        for (std::size_t k = 0; k < counts[0]; ++k) out.train.push_back(records[idx[pos++]]);
        for (std::size_t k = 0; k < counts[1]; ++k) out.val.push_back(records[idx[pos++]]);
        for (std::size_t k = 0; k < counts[2]; ++k) out.test.push_back(records[idx[pos++]]);
    }
    return out;
}

} // namespace tempofuse
