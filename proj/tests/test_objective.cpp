// Every loss term of the training objective and their weighted composition.
#include <catch2/catch_amalgamated.hpp>

#include <tempofuse/objective.hpp>
#include <tempofuse/rng.hpp>

#include <cmath>
#include <vector>

using namespace tempofuse;

namespace {

Tensor vec(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor::from_values({1, n}, std::move(v));
}

Tensor rnd_vec(Rng& rng, int d) {
    std::vector<double> v(static_cast<std::size_t>(d));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return vec(std::move(v));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace

TEST_CASE("class weights are inverse-frequency normalized to mean one", "[objective]") {
    auto w = compute_class_weights({0, 0, 0, 1});
    CHECK(w[0] == Catch::Approx(4.0 / 6.0).margin(1e-12)); // n/(2*3)
    CHECK(w[1] == Catch::Approx(4.0 / 2.0).margin(1e-12)); // n/(2*1)
    // Weighted instance mean is 1.
    CHECK((3 * w[0] + 1 * w[1]) / 4.0 == Catch::Approx(1.0).margin(1e-12));
    // A missing class falls back to weight 1; the present class keeps its
    // inverse-frequency weight n/(2*c1) = 2/(2*2).
    auto w2 = compute_class_weights({1, 1});
    CHECK(w2[0] == 1.0);
    CHECK(w2[1] == 0.5);
}

TEST_CASE("focal loss reduces to summed BCE at gamma=0, eps=0", "[objective]") {
    Rng rng(50);
    std::vector<Tensor> p;
    std::vector<int> y;
    double want = 0;
    for (int i = 0; i < 6; ++i) {
        const double pi = rng.uniform(0.05, 0.95);
        const int yi = rng.bernoulli(0.5) ? 1 : 0;
        p.push_back(Tensor::scalar(pi));
        y.push_back(yi);
        want += yi == 1 ? -std::log(pi) : -std::log(1 - pi);
    }
    Tensor loss = focal_ce(p, y, {1.0, 1.0}, 0.0, 0.0);
    CHECK(loss.item() == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("focal loss closed-form examples", "[objective]") {
    SECTION("plain BCE case") {
        Tensor loss = focal_ce({Tensor::scalar(0.5)}, {1}, {1.0, 1.0}, 0.0, 0.0);
        CHECK(loss.item() == Catch::Approx(std::log(2.0)).margin(1e-12));
    }
    SECTION("confident true positive is down-weighted by (1-p)^gamma") {
        Tensor loss = focal_ce({Tensor::scalar(0.9)}, {1}, {1.0, 1.0}, 2.5, 0.0);
        const double want = std::pow(0.1, 2.5) * (-std::log(0.9));
        CHECK(loss.item() == Catch::Approx(want).epsilon(1e-12));
    }
    SECTION("label smoothing blends both log branches") {
        const double p = 0.999, eps = 0.05;
        Tensor loss = focal_ce({Tensor::scalar(p)}, {1}, {1.0, 1.0}, 2.5, eps);
        const double bce = -((1 - eps / 2) * std::log(p) + (eps / 2) * std::log(1 - p));
        const double want = std::pow(1 - p, 2.5) * bce;
        CHECK(loss.item() == Catch::Approx(want).epsilon(1e-9));
    }
    SECTION("true-class convention vs literal flag differ on negatives") {
        // y=0, p=0.1: an easy true negative. The p_t convention weighs it by
        // p^gamma (tiny); the literal formula weighs it by (1-p)^gamma (big).
        Tensor conv = focal_ce({Tensor::scalar(0.1)}, {0}, {1.0, 1.0}, 2.0, 0.0);
        Tensor lit = focal_ce({Tensor::scalar(0.1)}, {0}, {1.0, 1.0}, 2.0, 0.0, true);
        const double bce = -std::log(0.9);
        CHECK(conv.item() == Catch::Approx(0.01 * bce).epsilon(1e-9));
        CHECK(lit.item() == Catch::Approx(0.81 * bce).epsilon(1e-9));
    }
    SECTION("class weights scale per-window terms") {
        Tensor a = focal_ce({Tensor::scalar(0.5)}, {0}, {2.0, 1.0}, 0.0, 0.0);
        CHECK(a.item() == Catch::Approx(2.0 * std::log(2.0)).margin(1e-12));
    }
    SECTION("empty window set rejected") {
        CHECK_THROWS_AS(focal_ce({}, {}, {1.0, 1.0}, 0.0, 0.0), std::invalid_argument);
    }
}

TEST_CASE("alignment loss sums one minus cosine", "[objective]") {
    CHECK(align_loss({Tensor::scalar(1.0), Tensor::scalar(1.0)}).item() == 0.0);
    CHECK(align_loss({Tensor::scalar(0.0), Tensor::scalar(0.0)}).item() == 2.0);
    CHECK(align_loss({Tensor::scalar(-1.0)}).item() == 2.0);
}

TEST_CASE("temporal consistency discounts transitions by rho^w", "[objective]") {
    const Tensor L0 = vec({0.0, 0.0});
    SECTION("constant sequence") {
        CHECK(tc_loss({L0, L0, L0}, 0.9).item() == 0.0);
    }
    SECTION("single window is an empty sum") {
        CHECK(tc_loss({L0}, 0.9).item() == 0.0);
    }
    SECTION("first transition is discounted by rho itself") {
        Tensor L1 = vec({2.0, 0.0}); // squared distance 4
        CHECK(tc_loss({L0, L1}, 0.9).item() == Catch::Approx(3.6).margin(1e-12));
    }
    SECTION("random sequence matches the plug-in oracle") {
        Rng rng(51);
        std::vector<Tensor> L;
        for (int w = 0; w < 5; ++w) L.push_back(rnd_vec(rng, 3));
        const double rho = 0.8;
        double want = 0;
        for (int w = 1; w < 5; ++w) {
            double ss = 0;
            for (int j = 0; j < 3; ++j) {
                const double d = L[static_cast<std::size_t>(w)].values()[static_cast<std::size_t>(j)] -
                                 L[static_cast<std::size_t>(w - 1)].values()[static_cast<std::size_t>(j)];
                ss += d * d;
            }
            want += std::pow(rho, w) * ss;
        }
        CHECK(tc_loss(L, rho).item() == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("match loss is summed binary cross-entropy", "[objective]") {
    CHECK(match_loss({Tensor::scalar(0.5)}, {1}).item() ==
          Catch::Approx(std::log(2.0)).margin(1e-12));
    // Perfect predictions vanish up to the clamp.
    CHECK(match_loss({Tensor::scalar(1.0)}, {1}).item() == Catch::Approx(0.0).margin(1e-6));
    CHECK(match_loss({Tensor::scalar(0.0)}, {0}).item() == Catch::Approx(0.0).margin(1e-6));
    Rng rng(52);
    std::vector<Tensor> p;
    std::vector<int> y;
    double want = 0;
    for (int i = 0; i < 5; ++i) {
        const double pi = rng.uniform(0.1, 0.9);
        const int yi = rng.bernoulli(0.5) ? 1 : 0;
        p.push_back(Tensor::scalar(pi));
        y.push_back(yi);
        want += yi == 1 ? -std::log(pi) : -std::log(1 - pi);
    }
    CHECK(match_loss(p, y).item() == Catch::Approx(want).margin(1e-12));
}

TEST_CASE("contrastive loss closed forms", "[objective]") {
    SECTION("single pair has a single candidate") {
        Rng rng(53);
        CHECK(contrastive_loss({rnd_vec(rng, 4)}, {rnd_vec(rng, 4)}, 0.2).item() ==
              Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("all-equal similarities give 2 B ln B") {
        // Identical vectors: every pairwise cosine is 1.
        Tensor u = vec({1.0, 2.0, -0.5});
        std::vector<Tensor> T(4, u), I(4, u);
        CHECK(contrastive_loss(T, I, 0.2).item() ==
              Catch::Approx(2.0 * 4.0 * std::log(4.0)).margin(1e-9));
    }
    SECTION("orthogonal basis at tau 0.2 matches the e^5 closed form") {
        std::vector<Tensor> T = {vec({1, 0, 0}), vec({0, 1, 0}), vec({0, 0, 1})};
        std::vector<Tensor> I = T; // matched cosine 1, mismatched 0
        const double per = -std::log(std::exp(5.0) / (std::exp(5.0) + 2.0));
        CHECK(contrastive_loss(T, I, 0.2).item() == Catch::Approx(6.0 * per).epsilon(1e-9));
    }
    SECTION("symmetric under swapping the two collections") {
        Rng rng(54);
        std::vector<Tensor> T, I;
        for (int i = 0; i < 4; ++i) {
            T.push_back(rnd_vec(rng, 5));
            I.push_back(rnd_vec(rng, 5));
        }
        CHECK(contrastive_loss(T, I, 0.3).item() ==
              Catch::Approx(contrastive_loss(I, T, 0.3).item()).margin(1e-9));
    }
    SECTION("matches a dense oracle on random batches") {
        Rng rng(55);
        const int B = 4, d = 6;
        std::vector<Tensor> T, I;
        for (int i = 0; i < B; ++i) {
            T.push_back(rnd_vec(rng, d));
            I.push_back(rnd_vec(rng, d));
        }
        const double tau = 0.2;
        double want = 0;
        std::vector<std::vector<double>> s(B, std::vector<double>(B));
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < B; ++j)
                s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    cosine(T[static_cast<std::size_t>(i)].values(), I[static_cast<std::size_t>(j)].values()) / tau;
        for (int i = 0; i < B; ++i) { // text -> image
            double z = 0;
            for (int j = 0; j < B; ++j) z += std::exp(s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            want += -(s[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] - std::log(z));
        }
        for (int j = 0; j < B; ++j) { // image -> text
            double z = 0;
            for (int i = 0; i < B; ++i) z += std::exp(s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            want += -(s[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)] - std::log(z));
        }
        CHECK(contrastive_loss(T, I, tau).item() == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("rdrop loss is the symmetric Bernoulli KL", "[objective]") {
    SECTION("identical passes cost nothing") {
        CHECK(rdrop_loss({Tensor::scalar(0.3)}, {Tensor::scalar(0.3)}).item() == 0.0);
    }
    SECTION("0.8 vs 0.2 is the textbook value") {
        const double kl = 0.8 * std::log(0.8 / 0.2) + 0.2 * std::log(0.2 / 0.8);
        CHECK(rdrop_loss({Tensor::scalar(0.8)}, {Tensor::scalar(0.2)}).item() ==
              Catch::Approx(kl).margin(1e-12));
        CHECK(kl == Catch::Approx(0.8318).margin(5e-5));
    }
    SECTION("nonnegative on random pairs and symmetric") {
        Rng rng(56);
        for (int t = 0; t < 50; ++t) {
            Tensor a = Tensor::scalar(rng.uniform(0.01, 0.99));
            Tensor b = Tensor::scalar(rng.uniform(0.01, 0.99));
            const double ab = rdrop_loss({a}, {b}).item();
            CHECK(ab >= 0.0);
            CHECK(ab == Catch::Approx(rdrop_loss({b}, {a}).item()).margin(1e-12));
        }
    }
}

TEST_CASE("domain loss is mean cross-entropy", "[objective]") {
    SECTION("uniform logits cost ln D") {
        Tensor logits = vec({0.7, 0.7, 0.7});
        CHECK(domain_loss({logits, logits}, {0, 2}).item() ==
              Catch::Approx(std::log(3.0)).margin(1e-12));
    }
    SECTION("confident correct logits cost nearly zero") {
        Tensor logits = vec({30.0, 0.0});
        CHECK(domain_loss({logits}, {0}).item() == Catch::Approx(0.0).margin(1e-6));
    }
    SECTION("random case matches the oracle and averages") {
        Rng rng(57);
        std::vector<Tensor> logits;
        std::vector<int> ids;
        double want = 0;
        const int B = 5, D = 3;
        for (int i = 0; i < B; ++i) {
            Tensor l = rnd_vec(rng, D);
            const int id = static_cast<int>(rng.below(D));
            logits.push_back(l);
            ids.push_back(id);
            double mx = -1e300;
            for (double v : l.values()) mx = std::max(mx, v);
            double z = 0;
            for (double v : l.values()) z += std::exp(v - mx);
            want += -(l.values()[static_cast<std::size_t>(id)] - mx - std::log(z));
        }
        want /= B;
        CHECK(domain_loss(logits, ids).item() == Catch::Approx(want).margin(1e-9));
    }
    SECTION("out-of-range id rejected") {
        CHECK_THROWS_AS(domain_loss({vec({0.0, 0.0})}, {5}), std::invalid_argument);
    }
}

TEST_CASE("sequence-smoothness loss gates on directional similarity", "[objective]") {
    SECTION("constant rows") {
        Tensor H = Tensor::from_values({3, 2}, {1, 2, 1, 2, 1, 2});
        CHECK(tc_seq_loss(H).item() == 0.0);
    }
    SECTION("opposed rows are rectified away") {
        Tensor H = Tensor::from_values({2, 2}, {1, 0, -1, 0});
        CHECK(tc_seq_loss(H).item() == 0.0);
        Tensor Ho = Tensor::from_values({2, 2}, {1, 0, 0, 1});
        CHECK(tc_seq_loss(Ho).item() == 0.0); // orthogonal: cos = 0
    }
    SECTION("hand example [1,0] -> [2,0]") {
        Tensor H = Tensor::from_values({2, 2}, {1, 0, 2, 0});
        CHECK(tc_seq_loss(H).item() == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("single row is defined as zero") {
        Tensor H = Tensor::from_values({1, 2}, {3, 4});
        CHECK(tc_seq_loss(H).item() == 0.0);
    }
    SECTION("averages over transitions") {
        // Transitions: [1,0]->[2,0] contributes 1, [2,0]->[2,0] contributes 0.
        Tensor H = Tensor::from_values({3, 2}, {1, 0, 2, 0, 2, 0});
        CHECK(tc_seq_loss(H).item() == Catch::Approx(0.5).margin(1e-12));
    }
}

TEST_CASE("total loss composes parts with the published weights", "[objective]") {
    LossWeights w;
    REQUIRE_NOTHROW(w.validate());
    auto parts_all = [](double v) {
        LossParts p;
        p.ce = Tensor::scalar(v);
        p.align = Tensor::scalar(v);
        p.tc = Tensor::scalar(v);
        p.match = Tensor::scalar(v);
        p.contrast = Tensor::scalar(v);
        p.rdrop = Tensor::scalar(v);
        p.domain = Tensor::scalar(v);
        p.proto = Tensor::scalar(v);
        p.proto_mem = Tensor::scalar(v);
        p.tc_seq = Tensor::scalar(v);
        p.l2 = Tensor::scalar(0.0);
        return p;
    };

    SECTION("zero auxiliaries leave the cross-entropy") {
        LossParts p = parts_all(0.0);
        p.ce = Tensor::scalar(1.234);
        TotalLoss t = total_loss(p, w);
        CHECK(t.total.item() == Catch::Approx(1.234).margin(1e-15));
        CHECK(t.breakdown.ce == 1.234);
    }
    SECTION("unit parts sum to 1.90 under the published weights") {
        LossParts p = parts_all(1.0);
        LossWeights w0 = w;
        w0.reg = 0.0;
        TotalLoss t = total_loss(p, w0);
        CHECK(t.total.item() == Catch::Approx(1.90).margin(1e-12));
    }
    SECTION("total responds linearly to a weight change") {
        LossParts p = parts_all(1.0);
        LossParts p2 = parts_all(1.0);
        p.align = Tensor::scalar(3.0);
        p2.align = Tensor::scalar(3.0);
        LossWeights wa = w, wb = w;
        wb.align  = 2 * wa.align;
        const double da = total_loss(p2, wb).total.item() - total_loss(p, wa).total.item();
        CHECK(da == Catch::Approx(0.05 * 3.0).margin(1e-12));
    }
    SECTION("independent recomputation of the breakdown agrees") {
        Rng rng(58);
        LossParts p = parts_all(0.0);
        std::vector<Tensor*> slots = {&p.ce,     &p.align, &p.tc,    &p.match,
                                      &p.contrast, &p.rdrop, &p.domain, &p.proto,
                                      &p.proto_mem, &p.tc_seq, &p.l2};
        for (Tensor* t : slots) *t = Tensor::scalar(rng.uniform(0.0, 2.0));
        TotalLoss t = total_loss(p, w);
        const LossBreakdown& b = t.breakdown;
        const double recomputed = b.ce + w.align * b.align + w.tc * b.tc + w.match * b.match +
                                  w.contrast * b.contrast + w.rdrop * b.rdrop +
                                  w.domain * b.domain + w.proto * b.proto +
                                  w.proto_mem * b.proto_mem + w.tc_seq * b.tc_seq + w.reg * b.l2;
        CHECK(t.total.item() == Catch::Approx(recomputed).margin(1e-9));
        CHECK(t.breakdown.total == t.total.item());
    }
    SECTION("a NaN part aborts naming the term") {
        LossParts p = parts_all(1.0);
        p.contrast = Tensor::scalar(std::nan(""));
        try {
            total_loss(p, w);
            FAIL("expected abort");
        } catch (const NumericalAbort& e) {
            CHECK(std::string(e.what()).find("contrast") != std::string::npos);
        }
    }
    SECTION("weight validation rejects bad ranges") {
        LossWeights bad = w;
        bad.tau = 0.0;
        CHECK_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("tau"));
        bad = w;
        bad.rho = 1.0;
        CHECK_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("rho"));
        bad = w;
        bad.epsilon = 0.5;
        CHECK_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("epsilon"));
        bad = w;
        bad.align = -0.1;
        CHECK_THROWS_WITH(bad.validate(), Catch::Matchers::ContainsSubstring("nonnegative"));
    }
}
