// Synthetic dataset generation, line-delimited persistence, and stratified
// splitting.
#include <catch2/catch_amalgamated.hpp>

#include <tempofuse/data.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace tempofuse;

namespace {

std::string temp_path(const std::string& stem) {
    return std::string("/tmp/tempofuse_test_") + stem;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    REQUIRE(f.good());
    f << content;
}

const char* kHeader = R"({"format":"tempofuse-posts","version":1,"L":2,"d_xlmr":3,"d_clip":4})";

std::string record_line(const std::string& id, int n_text = 6, int n_img = 4) {
    std::ostringstream os;
    os << R"({"id":")" << id << R"(","timestamp":100,"label":0,"match_label":1,"domain_id":0,"text_emb":[)";
    for (int i = 0; i < n_text; ++i) os << (i ? "," : "") << "0.5";
    os << R"(],"img_emb":[)";
    for (int i = 0; i < n_img; ++i) os << (i ? "," : "") << "1.5";
    os << "]}";
    return os.str();
}

} // namespace

TEST_CASE("empty file loads as an empty dataset", "[datagen]") {
    const std::string p = temp_path("empty.posts");
    spit(p, "");
    Dataset ds = load_dataset(p);
    CHECK(ds.records.empty());
}

TEST_CASE("generate-save-load round trip preserves every field", "[datagen]") {
    SynthesisConfig cfg;
    cfg.n_posts = 50;
    cfg.n_domains = 2;
    cfg.L = 3;
    cfg.d_xlmr = 5;
    cfg.d_clip = 7;
    cfg.narrative_count = 4;
    cfg.seed = 12;
    SynthResult r = synth_generate(cfg);
    REQUIRE(r.dataset.records.size() == 50);

    const std::string p = temp_path("roundtrip.posts");
    save_dataset(r.dataset, p);
    Dataset back = load_dataset(p);
    REQUIRE(back.records.size() == r.dataset.records.size());
    CHECK(back.header.L == cfg.L);
    CHECK(back.header.d_xlmr == cfg.d_xlmr);
    CHECK(back.header.d_clip == cfg.d_clip);
    for (std::size_t i = 0; i < back.records.size(); ++i) {
        const PostRecord& a = r.dataset.records[i];
        const PostRecord& b = back.records[i];
        CHECK(a.id == b.id);
        CHECK(a.timestamp == b.timestamp);
        CHECK(a.label == b.label);
        CHECK(a.match_label == b.match_label);
        CHECK(a.domain_id == b.domain_id);
        CHECK(a.text_emb == b.text_emb);
        CHECK(a.img_emb == b.img_emb);
    }

    // Canonical files survive a write(load(f)) cycle byte-for-byte.
    const std::string p2 = temp_path("roundtrip2.posts");
    save_dataset(back, p2);
    CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("same seed produces byte-identical datasets", "[datagen]") {
    SynthesisConfig cfg;
    cfg.n_posts = 40;
    cfg.seed = 99;
    cfg.L = 2;
    cfg.d_xlmr = 4;
    cfg.d_clip = 4;
    cfg.narrative_count = 3;
    const std::string pa = temp_path("det_a.posts");
    const std::string pb = temp_path("det_b.posts");
    save_dataset(synth_generate(cfg).dataset, pa);
    save_dataset(synth_generate(cfg).dataset, pb);
    CHECK(slurp(pa) == slurp(pb));
}

TEST_CASE("loader rejects malformed input naming line and field", "[datagen]") {
    const std::string p = temp_path("bad.posts");

    SECTION("wrong-length text_emb") {
        spit(p, std::string(kHeader) + "\n" + record_line("p0", 0) + "\n");
        try {
            load_dataset(p);
            FAIL("expected rejection");
        } catch (const std::exception& e) {
            const std::string msg = e.what();
            CHECK(msg.find("text_emb") != std::string::npos);
            CHECK(msg.find(":2:") != std::string::npos);
        }
    }
    SECTION("missing img_emb") {
        std::string rec = record_line("p0");
        rec.replace(rec.find("\"img_emb\""), 9, "\"img_other\"");
        spit(p, std::string(kHeader) + "\n" + rec + "\n");
        try {
            load_dataset(p);
            FAIL("expected rejection");
        } catch (const std::exception& e) {
            CHECK(std::string(e.what()).find("img_emb") != std::string::npos);
        }
    }
    SECTION("unknown record field") {
        std::string rec = record_line("p0");
        rec.insert(rec.size() - 1, R"(,"mystery":1)");
        spit(p, std::string(kHeader) + "\n" + rec + "\n");
        try {
            load_dataset(p);
            FAIL("expected rejection");
        } catch (const std::exception& e) {
            CHECK(std::string(e.what()).find("mystery") != std::string::npos);
        }
    }
    SECTION("label outside {0,1}") {
        std::string rec = record_line("p0");
        rec.replace(rec.find("\"label\":0"), 9, "\"label\":7");
        spit(p, std::string(kHeader) + "\n" + rec + "\n");
        CHECK_THROWS_WITH(load_dataset(p), Catch::Matchers::ContainsSubstring("label"));
    }
    SECTION("unparseable line") {
        spit(p, std::string(kHeader) + "\nnot json\n");
        CHECK_THROWS_WITH(load_dataset(p), Catch::Matchers::ContainsSubstring(":2:"));
    }
    SECTION("bad header") {
        spit(p, R"({"format":"something-else","version":1,"L":2,"d_xlmr":3,"d_clip":4})");
        CHECK_THROWS_WITH(load_dataset(p), Catch::Matchers::ContainsSubstring("format"));
    }
}

TEST_CASE("generator rejects invalid configurations", "[datagen]") {
    SynthesisConfig cfg;
    cfg.n_posts = 1;
    CHECK_THROWS_WITH(synth_generate(cfg), Catch::Matchers::ContainsSubstring("n_posts"));
    cfg.n_posts = 10;
    cfg.inconsistency_strength = 1.5;
    CHECK_THROWS_AS(synth_generate(cfg), std::runtime_error);
}

TEST_CASE("generated records are chronologically ordered with aligned manifest", "[datagen]") {
    SynthesisConfig cfg;
    cfg.n_posts = 200;
    cfg.n_domains = 3;
    cfg.narrative_count = 6;
    cfg.seed = 5;
    SynthResult r = synth_generate(cfg);
    REQUIRE(r.manifest.size() == r.dataset.records.size());
    for (std::size_t i = 1; i < r.dataset.records.size(); ++i)
        CHECK(post_before(r.dataset.records[i - 1], r.dataset.records[i]));
    for (std::size_t i = 0; i < r.dataset.records.size(); ++i) {
        const PostRecord& rec = r.dataset.records[i];
        const ManifestEntry& man = r.manifest[i];
        CHECK(rec.id == man.id);
        // match_label is 1 exactly when the generator drew both modalities
        // from the same latent topic.
        CHECK((rec.match_label == 1) == man.topic_matched);
        CHECK(rec.domain_id >= 0);
        CHECK(rec.domain_id < cfg.n_domains);
    }
}

TEST_CASE("zero strength leaves labels uncorrelated with the embeddings", "[datagen]") {
    SynthesisConfig cfg;
    cfg.n_posts = 2000;
    cfg.inconsistency_strength = 0.0;
    cfg.seed = 31;
    SynthResult r = synth_generate(cfg);

    // Pearson correlation between the label and a cross-modal discrepancy
    // statistic (leading-coordinate |text_mean - img| norm).
    const int k = 16;
    std::vector<double> stat(r.dataset.records.size());
    std::vector<double> lab(r.dataset.records.size());
    for (std::size_t i = 0; i < r.dataset.records.size(); ++i) {
        const PostRecord& rec = r.dataset.records[i];
        double s = 0.0;
        for (int c = 0; c < k; ++c) {
            double tmean = 0.0;
            for (int row = 0; row < cfg.L; ++row)
                tmean += rec.text_emb[static_cast<std::size_t>(row) * cfg.d_xlmr + c];
            tmean /= cfg.L;
            const double d = tmean - rec.img_emb[static_cast<std::size_t>(c)];
            s += d * d;
        }
        stat[i] = std::sqrt(s);
        lab[i] = rec.label;
    }
    const std::size_t n = stat.size();
    double ms = 0, ml = 0;
    for (std::size_t i = 0; i < n; ++i) { ms += stat[i]; ml += lab[i]; }
    ms /= static_cast<double>(n);
    ml /= static_cast<double>(n);
    double cov = 0, vs = 0, vl = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (stat[i] - ms) * (lab[i] - ml);
        vs += (stat[i] - ms) * (stat[i] - ms);
        vl += (lab[i] - ml) * (lab[i] - ml);
    }
    const double rho = cov / std::sqrt(vs * vl);
    CHECK(std::abs(rho) < 0.1);
    // Labels stay roughly balanced (independent fair coin).
    CHECK(std::abs(ml - 0.5) < 0.05);
}

TEST_CASE("full strength plants a signal a nearest-centroid oracle recovers", "[datagen]") {
    SynthesisConfig cfg;
    cfg.n_posts = 2000;
    cfg.inconsistency_strength = 1.0;
    cfg.seed = 7;
    SynthResult r = synth_generate(cfg);

    // Brute-force oracle: project both modalities with the fixed
    // leading-coordinate truncation, take |T - I| feature vectors, fit class
    // centroids on even indices, classify odd indices by nearest centroid.
    const int k = 16;
    auto feature = [&](const PostRecord& rec) {
        std::vector<double> f(static_cast<std::size_t>(k));
        for (int c = 0; c < k; ++c) {
            double tmean = 0.0;
            for (int row = 0; row < cfg.L; ++row)
                tmean += rec.text_emb[static_cast<std::size_t>(row) * cfg.d_xlmr + c];
            tmean /= cfg.L;
            f[static_cast<std::size_t>(c)] = std::abs(tmean - rec.img_emb[static_cast<std::size_t>(c)]);
        }
        return f;
    };
    std::vector<double> cent0(static_cast<std::size_t>(k), 0.0), cent1(static_cast<std::size_t>(k), 0.0);
    int n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < r.dataset.records.size(); i += 2) {
        auto f = feature(r.dataset.records[i]);
        auto& cent = r.dataset.records[i].label == 1 ? cent1 : cent0;
        (r.dataset.records[i].label == 1 ? n1 : n0) += 1;
        for (int c = 0; c < k; ++c) cent[static_cast<std::size_t>(c)] += f[static_cast<std::size_t>(c)];
    }
    REQUIRE(n0 > 0);
    REQUIRE(n1 > 0);
    for (int c = 0; c < k; ++c) {
        cent0[static_cast<std::size_t>(c)] /= n0;
        cent1[static_cast<std::size_t>(c)] /= n1;
    }
    int correct = 0, total = 0;
    for (std::size_t i = 1; i < r.dataset.records.size(); i += 2) {
        auto f = feature(r.dataset.records[i]);
        double d0 = 0, d1 = 0;
        for (int c = 0; c < k; ++c) {
            d0 += (f[static_cast<std::size_t>(c)] - cent0[static_cast<std::size_t>(c)]) *
                  (f[static_cast<std::size_t>(c)] - cent0[static_cast<std::size_t>(c)]);
            d1 += (f[static_cast<std::size_t>(c)] - cent1[static_cast<std::size_t>(c)]) *
                  (f[static_cast<std::size_t>(c)] - cent1[static_cast<std::size_t>(c)]);
        }
        const int pred = d1 < d0 ? 1 : 0;
        correct += pred == r.dataset.records[i].label ? 1 : 0;
        ++total;
    }
    const double acc = static_cast<double>(correct) / total;
    INFO("nearest-centroid accuracy " << acc);
    CHECK(acc > 0.9);
}

TEST_CASE("split covers the ratio examples", "[datagen]") {
    // 100 balanced hand-built records in one domain.
    std::vector<PostRecord> recs(100);
    for (int i = 0; i < 100; ++i) {
        recs[static_cast<std::size_t>(i)].id = "r" + std::to_string(i);
        recs[static_cast<std::size_t>(i)].timestamp = i;
        recs[static_cast<std::size_t>(i)].label = i % 2;
        recs[static_cast<std::size_t>(i)].domain_id = 0;
        recs[static_cast<std::size_t>(i)].text_emb = {0.0};
        recs[static_cast<std::size_t>(i)].img_emb = {0.0};
    }

    SECTION("(1,0,0) sends everything to train") {
        SplitResult s = split(recs, {1.0, 0.0, 0.0}, 4);
        CHECK(s.train.size() == 100);
        CHECK(s.val.empty());
        CHECK(s.test.empty());
    }
    SECTION("80/10/10 with label balance within one") {
        SplitResult s = split(recs, {0.8, 0.1, 0.1}, 4);
        CHECK(s.train.size() == 80);
        CHECK(s.val.size() == 10);
        CHECK(s.test.size() == 10);
        auto count1 = [](const std::vector<PostRecord>& v) {
            int c = 0;
            for (const auto& r : v) c += r.label;
            return c;
        };
        CHECK(std::abs(count1(s.train) - 40) <= 1);
        CHECK(std::abs(count1(s.val) - 5) <= 1);
        CHECK(std::abs(count1(s.test) - 5) <= 1);
    }
    SECTION("deterministic and a partition") {
        SplitResult s1 = split(recs, {0.6, 0.2, 0.2}, 9);
        SplitResult s2 = split(recs, {0.6, 0.2, 0.2}, 9);
        auto ids = [](const SplitResult& s) {
            std::vector<std::string> v;
            for (const auto& r : s.train) v.push_back(r.id);
            for (const auto& r : s.val) v.push_back(r.id);
            for (const auto& r : s.test) v.push_back(r.id);
            return v;
        };
        CHECK(ids(s1) == ids(s2));
        auto all = ids(s1);
        std::set<std::string> uniq(all.begin(), all.end());
        CHECK(all.size() == 100);
        CHECK(uniq.size() == 100);
    }
    SECTION("stratum below three rejected") {
        std::vector<PostRecord> tiny(recs.begin(), recs.begin() + 5);
        // Labels alternate, so one stratum has 2 members.
        CHECK_THROWS_WITH(split(tiny, {0.8, 0.1, 0.1}, 1),
                          Catch::Matchers::ContainsSubstring("stratum"));
    }
}
