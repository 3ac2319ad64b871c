// Shared-space projection and intra-modal multi-head self-attention.
#include <catch2/catch_amalgamated.hpp>

#include <tempofuse/encoder.hpp>
#include <tempofuse/grad_check.hpp>
#include <tempofuse/rng.hpp>

#include <cmath>
#include <vector>

using namespace tempofuse;

namespace {

Tensor rnd(Rng& rng, int r, int c, bool grad = false) {
    std::vector<double> v(static_cast<std::size_t>(r) * c);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from_values({r, c}, std::move(v), grad);
}

LayerNormParams unit_ln(int n) {
    return {Tensor::from_values({1, n}, std::vector<double>(static_cast<std::size_t>(n), 1.0)),
            Tensor::zeros({1, n})};
}

MhsaParams random_mhsa(Rng& rng, int d) {
    return {rnd(rng, d, d), rnd(rng, d, d), rnd(rng, d, d), rnd(rng, d, d)};
}

MhsaParams zero_mhsa(int d) {
    return {Tensor::zeros({d, d}), Tensor::zeros({d, d}), Tensor::zeros({d, d}),
            Tensor::zeros({d, d})};
}

std::vector<double> ln_vec(const std::vector<double>& x) {
    const double eps = 1e-5;
    double mu = 0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    double var = 0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / std::sqrt(var + eps);
    return out;
}

} // namespace

TEST_CASE("project_text matches a multiply-then-normalize oracle", "[encoder]") {
    Rng rng(101);
    Tensor x = rnd(rng, 2, 3);    // L=2, d_xlmr=3
    Tensor w = rnd(rng, 4, 3);    // d=4
    auto [S, T] = project_text(x, w, unit_ln(4));
    REQUIRE(S.shape() == std::vector<int>{2, 4});
    REQUIRE(T.shape() == std::vector<int>{1, 4});

    for (int i = 0; i < 2; ++i) {
        std::vector<double> raw(4);
        for (int j = 0; j < 4; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k)
                s += x.values()[static_cast<std::size_t>(i) * 3 + k] *
                     w.values()[static_cast<std::size_t>(j) * 3 + k];
            raw[static_cast<std::size_t>(j)] = s;
        }
        std::vector<double> want = ln_vec(raw);
        for (int j = 0; j < 4; ++j)
            CHECK(S.values()[static_cast<std::size_t>(i) * 4 + j] ==
                  Catch::Approx(want[static_cast<std::size_t>(j)]).margin(1e-9));
    }
    // T is row 0 of S exactly.
    for (int j = 0; j < 4; ++j) CHECK(T.values()[static_cast<std::size_t>(j)] == S.values()[static_cast<std::size_t>(j)]);
}

TEST_CASE("zero projections collapse to the layer-norm bias", "[encoder]") {
    Tensor x = Tensor::from_values({1, 3}, {0.4, -1.0, 2.0});
    Tensor w0 = Tensor::zeros({4, 3});
    auto [S, T] = project_text(x, w0, unit_ln(4));
    (void)T;
    for (double v : S.values()) CHECK(std::abs(v) < 1e-12);

    Tensor img = Tensor::from_values({1, 5}, {1, 2, 3, 4, 5});
    Tensor wi0 = Tensor::zeros({4, 5});
    Tensor I = project_image(img, wi0, unit_ln(4));
    for (double v : I.values()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("identity projection of a pre-normalized input is preserved", "[encoder]") {
    // Input row already has zero mean and unit (biased) variance.
    std::vector<double> base = ln_vec({0.3, -1.2, 0.8, 2.0});
    Tensor x = Tensor::from_values({1, 4}, base);
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[static_cast<std::size_t>(i) * 4 + i] = 1.0;
    Tensor w = Tensor::from_values({4, 4}, eye);
    auto [S, T] = project_text(x, w, unit_ln(4));
    (void)T;
    for (int j = 0; j < 4; ++j)
        CHECK(S.values()[static_cast<std::size_t>(j)] ==
              Catch::Approx(base[static_cast<std::size_t>(j)]).margin(1e-4));

    Tensor I = project_image(x, w, unit_ln(4));
    for (int j = 0; j < 4; ++j)
        CHECK(I.values()[static_cast<std::size_t>(j)] ==
              Catch::Approx(base[static_cast<std::size_t>(j)]).margin(1e-4));
}

TEST_CASE("projection rejects mismatched shapes", "[encoder]") {
    Tensor x = Tensor::from_values({1, 3}, {1, 2, 3});
    Tensor w = Tensor::zeros({4, 5});
    CHECK_THROWS_AS(project_text(x, w, unit_ln(4)), std::invalid_argument);
    CHECK_THROWS_AS(project_image(x, w, unit_ln(4)), std::invalid_argument);
}

TEST_CASE("zero attention weights reduce to residual layer norm", "[encoder]") {
    Rng rng(7);
    Tensor S = rnd(rng, 3, 4);
    auto [S_hat, T_tilde] = intra_text_attention(S, zero_mhsa(4), unit_ln(4), 2);
    (void)T_tilde;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> rowv(S.values().begin() + static_cast<std::size_t>(i) * 4,
                                 S.values().begin() + static_cast<std::size_t>(i + 1) * 4);
        std::vector<double> want = ln_vec(rowv);
        for (int j = 0; j < 4; ++j)
            CHECK(S_hat.values()[static_cast<std::size_t>(i) * 4 + j] ==
                  Catch::Approx(want[static_cast<std::size_t>(j)]).margin(1e-12));
    }
}

TEST_CASE("singleton sequences attend to themselves with weight exactly one", "[encoder]") {
    Rng rng(8);
    Tensor x = rnd(rng, 1, 4);
    MhsaParams p = random_mhsa(rng, 4);
    MhsaResult res = mhsa(x, p, 2);
    for (const Tensor& attn : res.head_attn) {
        REQUIRE(attn.numel() == 1);
        CHECK(attn.values()[0] == 1.0); // bitwise: softmax of a 1-vector
    }

    // The singleton context is exactly the value-and-output projection.
    Tensor want = matmul(matmul(x, p.W_v), p.W_o);
    for (std::size_t i = 0; i < want.numel(); ++i)
        CHECK(res.context.values()[i] == Catch::Approx(want.values()[i]).margin(1e-12));

    // Image path: zero value/output projections leave layer_norm(I).
    Tensor I_tilde = intra_image_attention(x, zero_mhsa(4), unit_ln(4), 2);
    std::vector<double> want_ln = ln_vec(x.values());
    for (int j = 0; j < 4; ++j)
        CHECK(I_tilde.values()[static_cast<std::size_t>(j)] ==
              Catch::Approx(want_ln[static_cast<std::size_t>(j)]).margin(1e-12));
}

TEST_CASE("single-head attention matches a hand-rolled oracle", "[encoder]") {
    Rng rng(9);
    const int L = 3, d = 4;
    Tensor x = rnd(rng, L, d);
    MhsaParams p = random_mhsa(rng, d);
    MhsaResult res = mhsa(x, p, 1);

    // Oracle: dense double loops, no library ops.
    auto mm = [&](const std::vector<double>& a, const std::vector<double>& b, int m, int k, int n) {
        std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                for (int t = 0; t < k; ++t)
                    c[static_cast<std::size_t>(i) * n + j] +=
                        a[static_cast<std::size_t>(i) * k + t] * b[static_cast<std::size_t>(t) * n + j];
        return c;
    };
    auto q = mm(x.values(), p.W_q.values(), L, d, d);
    auto k = mm(x.values(), p.W_k.values(), L, d, d);
    auto v = mm(x.values(), p.W_v.values(), L, d, d);
    std::vector<double> attn(static_cast<std::size_t>(L) * L);
    for (int i = 0; i < L; ++i) {
        std::vector<double> sc(static_cast<std::size_t>(L));
        double mx = -1e300;
        for (int j = 0; j < L; ++j) {
            double s = 0;
            for (int t = 0; t < d; ++t)
                s += q[static_cast<std::size_t>(i) * d + t] * k[static_cast<std::size_t>(j) * d + t];
            sc[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, sc[static_cast<std::size_t>(j)]);
        }
        double sum = 0;
        for (int j = 0; j < L; ++j) {
            attn[static_cast<std::size_t>(i) * L + j] = std::exp(sc[static_cast<std::size_t>(j)] - mx);
            sum += attn[static_cast<std::size_t>(i) * L + j];
        }
        for (int j = 0; j < L; ++j) attn[static_cast<std::size_t>(i) * L + j] /= sum;
    }
    auto ctx = mm(mm(attn, v, L, L, d), p.W_o.values(), L, d, d);
    for (std::size_t i = 0; i < ctx.size(); ++i)
        CHECK(res.context.values()[i] == Catch::Approx(ctx[i]).margin(1e-8));
}

TEST_CASE("attention rows are probability vectors", "[encoder]") {
    Rng rng(10);
    Tensor x = rnd(rng, 5, 8);
    MhsaParams p = random_mhsa(rng, 8);
    MhsaResult res = mhsa(x, p, 4);
    REQUIRE(res.head_attn.size() == 4);
    for (const Tensor& attn : res.head_attn)
        for (int i = 0; i < 5; ++i) {
            double s = 0;
            for (int j = 0; j < 5; ++j) {
                double w = attn.values()[static_cast<std::size_t>(i) * 5 + j];
                CHECK(w >= 0.0);
                s += w;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
}

TEST_CASE("self-attention is permutation-equivariant over non-leading rows", "[encoder]") {
    // With one head, swapping rows 1 and 2 of the input swaps rows 1 and 2 of
    // the context and leaves row 0 (the sentence slot) unchanged.
    Rng rng(11);
    const int d = 4;
    Tensor x = rnd(rng, 3, d);
    MhsaParams p = random_mhsa(rng, d);

    std::vector<double> perm = x.values();
    for (int j = 0; j < d; ++j)
        std::swap(perm[static_cast<std::size_t>(d) + j], perm[static_cast<std::size_t>(2 * d) + j]);
    Tensor xp = Tensor::from_values({3, d}, perm);

    MhsaResult a = mhsa(x, p, 1);
    MhsaResult b = mhsa(xp, p, 1);
    for (int j = 0; j < d; ++j) {
        CHECK(b.context.values()[static_cast<std::size_t>(j)] ==
              Catch::Approx(a.context.values()[static_cast<std::size_t>(j)]).margin(1e-12));
        CHECK(b.context.values()[static_cast<std::size_t>(d) + j] ==
              Catch::Approx(a.context.values()[static_cast<std::size_t>(2 * d) + j]).margin(1e-12));
        CHECK(b.context.values()[static_cast<std::size_t>(2 * d) + j] ==
              Catch::Approx(a.context.values()[static_cast<std::size_t>(d) + j]).margin(1e-12));
    }
}

TEST_CASE("mhsa rejects a head count that does not divide d", "[encoder]") {
    Rng rng(12);
    Tensor x = rnd(rng, 2, 6);
    CHECK_THROWS_AS(mhsa(x, random_mhsa(rng, 6), 4), std::invalid_argument);
}

TEST_CASE("encoder stages pass finite differences", "[encoder]") {
    Rng rng(13);
    const int L = 3, d_xlmr = 5, d_clip = 4, d = 4;
    Tensor text = rnd(rng, L, d_xlmr, true);
    Tensor img = rnd(rng, 1, d_clip, true);
    EncoderParams p;
    p.W_text = rnd(rng, d, d_xlmr, true);
    p.W_img = rnd(rng, d, d_clip, true);
    p.ln_text_proj = unit_ln(d);
    p.ln_img_proj = unit_ln(d);
    p.attn_text = random_mhsa(rng, d);
    p.attn_img = random_mhsa(rng, d);
    p.ln_text_attn = unit_ln(d);
    p.ln_img_attn = unit_ln(d);
    p.heads = 2;
    for (Tensor* t : {&p.attn_text.W_q, &p.attn_text.W_k, &p.attn_text.W_v, &p.attn_text.W_o,
                      &p.attn_img.W_v, &p.attn_img.W_o})
        *t = Tensor::from_values(t->shape(), t->values(), true);

    auto loss = [&] {
        ProjectedPost out = encode_post(text, img, p);
        return add(sum_squares(out.T_tilde), add(sum_squares(out.I_tilde), sum_squares(out.S_hat)));
    };
    auto report = check_gradients(loss,
                                  {{"text", text},
                                   {"img", img},
                                   {"W_text", p.W_text},
                                   {"W_img", p.W_img},
                                   {"attn_text.W_q", p.attn_text.W_q},
                                   {"attn_text.W_v", p.attn_text.W_v},
                                   {"attn_text.W_o", p.attn_text.W_o},
                                   {"attn_img.W_v", p.attn_img.W_v}},
                                  5, 1e-5, rng);
    INFO("worst " << report.worst_parameter << " analytic=" << report.worst_analytic
                  << " numeric=" << report.worst_numeric);
    REQUIRE(report.loss_finite);
    CHECK(report.max_relative_error < 1e-6);
}
