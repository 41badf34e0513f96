// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "oracles.hpp"
#include "test_util.hpp"
#include "slvid/analysis.hpp"
#include "slvid/cli.hpp"
#include "slvid/contrastive.hpp"
#include "slvid/dataset.hpp"
#include "slvid/encoder.hpp"
#include "slvid/evaluation.hpp"
#include "slvid/optimizer.hpp"
#include "slvid/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using slv::ContrastiveParams;
using slv::LossKind;
using slv::Matrix;
using slv::RegimeKind;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (pass) detail.clear();
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- helpers

double ms_mining_margin(const Matrix& z, const std::vector<int>& y, double eps) {
    double margin = std::numeric_limits<double>::infinity();
    const std::size_t m = z.rows();
    for (std::size_t i = 0; i < m; ++i) {
        double max_neg = -1e300, min_pos = 1e300;
        bool hp = false, hn = false;
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const double s = oracle::dotp(z, i, j);
            if (y[j] == y[i]) { hp = true; min_pos = std::min(min_pos, s); }
            else { hn = true; max_neg = std::max(max_neg, s); }
        }
        if (!hp || !hn) continue;
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            const double s = oracle::dotp(z, i, j);
            margin = std::min(margin, y[j] == y[i] ? std::abs(s - (max_neg + eps)) : std::abs(s - (min_pos - eps)));
        }
    }
    return margin;
}

double tm_kink_margin(const Matrix& z, const std::vector<int>& y, double mu) {
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& t : oracle::triplets_brute(y)) {
        const double dp = oracle::dist(z, t.a, t.p), dn = oracle::dist(z, t.a, t.n);
        margin = std::min({margin, std::abs(dp - dn + mu), dp, dn});
    }
    return margin;
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

std::vector<double> flat_params(const slv::EncoderParams& p) {
    std::vector<double> out;
    for (auto t : p.tensors()) out.insert(out.end(), t.begin(), t.end());
    return out;
}

// ---------------------------------------------------------------- 1

Verdict gradient_suite() {
    Verdict v;
    std::mt19937_64 rng(101);
    const ContrastiveParams p;
    double worst = 0.0;
    auto record = [&](const char* name, double err) {
        worst = std::max(worst, err);
        v.require(err < 1e-6, std::string(name) + " rel err " + fmt("%.2e", err));
    };

    for (int n = 0; n < 20;) {
        const std::size_t m = 3 + rng() % 6;
        const auto z = oracle::random_unit_rows(rng, m, 4);
        const auto y = oracle::random_labels(rng, m, 3);
        const auto pairs = slv::mine(y);
        const auto out = slv::sc_loss(z, pairs, p);
        if (out.n_active == 0) continue;
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) { return slv::sc_loss(oracle::unflatten(x, m, 4), pairs, p).value; },
            oracle::flatten(z));
        record("sc_loss", oracle::rel_error(oracle::flatten(out.grad), fd));
        ++n;
    }
    for (int n = 0; n < 20;) {
        const std::size_t m = 3 + rng() % 6;
        const auto z = oracle::random_matrix(rng, m, 4, 0.1);
        const auto y = oracle::random_labels(rng, m, 3);
        if (tm_kink_margin(z, y, p.margin) < 1e-4) continue;
        const auto pairs = slv::mine(y);
        const auto out = slv::tm_loss(z, pairs, p);
        if (out.n_active == 0) continue;
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) { return slv::tm_loss(oracle::unflatten(x, m, 4), pairs, p).value; },
            oracle::flatten(z));
        record("tm_loss", oracle::rel_error(oracle::flatten(out.grad), fd));
        ++n;
    }
    for (int n = 0; n < 20;) {
        const std::size_t m = 3 + rng() % 6;
        const auto z = oracle::random_unit_rows(rng, m, 4);
        const auto y = oracle::random_labels(rng, m, 3);
        if (ms_mining_margin(z, y, p.epsilon) < 1e-3) continue;
        const auto out = slv::ms_loss(z, y, p);
        if (out.n_active == 0) continue;
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) { return slv::ms_loss(oracle::unflatten(x, m, 4), y, p).value; },
            oracle::flatten(z));
        record("ms_loss", oracle::rel_error(oracle::flatten(out.grad), fd));
        ++n;
    }
    for (int n = 0; n < 20; ++n) {
        const std::size_t r = 2 + rng() % 16;
        const auto logits = oracle::flatten(oracle::random_matrix(rng, 1, r, 2.0));
        const std::size_t label = rng() % r;
        const auto ce = slv::cross_entropy(logits, label);
        const auto fd =
            oracle::fd_gradient([&](const std::vector<double>& x) { return slv::cross_entropy(x, label).loss; }, logits);
        record("cross_entropy", oracle::rel_error(ce.grad_logits, fd));
    }
    for (int n = 0; n < 20; ++n) {
        const auto x = oracle::flatten(oracle::random_matrix(rng, 1, 6));
        const auto g = oracle::flatten(oracle::random_matrix(rng, 1, 6));
        const auto nn = slv::l2_normalize(x);
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& xx) {
                const auto k = slv::l2_normalize(xx);
                return std::inner_product(g.begin(), g.end(), k.unit.begin(), 0.0);
            },
            x);
        record("l2_normalize", oracle::rel_error(slv::l2_normalize_backward(nn, g), fd));
    }
    for (int n = 0; n < 20;) {
        const std::size_t f = 4, h = 5, r = 3;
        auto params = slv::EncoderParams::glorot(f, h, r, rng());
        std::normal_distribution<double> nd(0.0, 0.1);
        for (auto t : params.tensors())
            for (double& x : t) x += nd(rng);
        const Matrix frames = oracle::random_matrix(rng, 1 + rng() % 6, f);
        const auto fr = slv::forward(params, frames);
        double kink = 1e300;
        for (double a : fr.cache.pre1.data()) kink = std::min(kink, std::abs(a));
        for (double a : fr.cache.pre2.data()) kink = std::min(kink, std::abs(a));
        if (kink < 1e-4) continue;
        const auto gp = oracle::flatten(oracle::random_matrix(rng, 1, h));
        const auto gl = oracle::flatten(oracle::random_matrix(rng, 1, r));
        const auto grads = slv::backward(params, fr.cache, gp, gl);
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) {
                auto q = params;
                std::size_t k = 0;
                for (auto t : q.tensors())
                    for (double& e : t) e = x[k++];
                const auto o = slv::forward(q, frames);
                return std::inner_product(gp.begin(), gp.end(), o.pooled.begin(), 0.0) +
                       std::inner_product(gl.begin(), gl.end(), o.logits.begin(), 0.0);
            },
            flat_params(params));
        record("encoder backward", oracle::rel_error(flat_params(grads), fd));
        ++n;
    }
    if (v.pass) v.detail = "6 x 20 instances, worst rel err " + fmt("%.2e", worst);
    return v;
}

// ---------------------------------------------------------------- 2

Verdict loss_oracles() {
    Verdict v;
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int n = 0; n < 200; ++n) {
        const std::size_t m = 2 + rng() % 7;
        const auto y = oracle::random_labels(rng, m, 1 + static_cast<int>(rng() % 3));
        const auto z = oracle::random_unit_rows(rng, m, 4);
        ContrastiveParams p;
        p.tau = 0.05 + std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const double a = slv::sc_loss(z, slv::mine(y), p).value, b = oracle::sc_naive(z, y, p.tau);
        worst = std::max(worst, std::abs(a - b));
        v.require(close(a, b, 1e-10), "sc_loss differs from oracle");
    }
    for (int n = 0; n < 200; ++n) {
        const std::size_t m = 2 + rng() % 7;
        const auto y = oracle::random_labels(rng, m, 1 + static_cast<int>(rng() % 3));
        const auto z = oracle::random_matrix(rng, m, 4, 0.2);
        ContrastiveParams p;
        p.margin = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
        const double a = slv::tm_loss(z, slv::mine(y), p).value, b = oracle::tm_naive(z, y, p.margin);
        worst = std::max(worst, std::abs(a - b));
        v.require(close(a, b, 1e-10), "tm_loss differs from oracle");
    }
    for (int n = 0; n < 200; ++n) {
        const std::size_t m = 2 + rng() % 7;
        const auto y = oracle::random_labels(rng, m, 1 + static_cast<int>(rng() % 3));
        const auto z = oracle::random_unit_rows(rng, m, 4);
        const ContrastiveParams p;
        const double a = slv::ms_loss(z, y, p).value, b = oracle::ms_naive(z, y, p.alpha, p.beta, p.lambda, p.epsilon);
        worst = std::max(worst, std::abs(a - b));
        v.require(close(a, b, 1e-10), "ms_loss differs from oracle");
    }
    ContrastiveParams unit_tau;
    unit_tau.tau = 1.0;
    Matrix z(3, 2);
    z(0, 0) = z(1, 0) = 1.0;
    z(2, 0) = -1.0;
    const std::vector<int> y{0, 0, 1};
    const double neg = slv::sc_loss(z, slv::mine(y), unit_tau).value;
    v.require(close(neg, -4.0, 1e-12), "sc worked example gives " + fmt("%.6f", neg));
    const std::vector<double> pos_s{0.5}, neg_s{0.2};
    const double ms = slv::ms_anchor_term(pos_s, neg_s, ContrastiveParams{});
    v.require(std::round(ms * 1e4) / 1e4 == 0.6566, "ms worked example gives " + fmt("%.6f", ms));
    if (v.pass)
        v.detail = "3 x 200 batches, max |diff| " + fmt("%.1e", worst) + "; sc example " + fmt("%.4f", neg) +
                   ", ms example " + fmt("%.4f", ms);
    return v;
}

// ---------------------------------------------------------------- 3

Verdict mining_soundness() {
    Verdict v;
    std::mt19937_64 rng(303);
    std::size_t kept = 0, dropped = 0;
    for (int n = 0; n < 200; ++n) {
        const std::size_t m = 2 + rng() % 7;
        const auto y = oracle::random_labels(rng, m, 3);
        const auto z = oracle::random_unit_rows(rng, m, 3);
        const auto pairs = slv::mine(y);
        const auto ref_t = oracle::triplets_brute(y);
        bool same = pairs.triplets.size() == ref_t.size();
        for (std::size_t k = 0; same && k < ref_t.size(); ++k)
            same = pairs.triplets[k] == slv::Triplet{ref_t[k].a, ref_t[k].p, ref_t[k].n};
        v.require(same, "triplet enumeration mismatch");
        std::size_t expected_count = 0;
        for (std::size_t i = 0; i < m; ++i) expected_count += pairs.positives[i].size() * pairs.negatives[i].size();
        v.require(expected_count == pairs.triplets.size(), "triplet count != sum |P||N|");

        const auto sel = slv::ms_mine(slv::similarity_matrix(z), pairs, 0.1);
        const auto ref = oracle::ms_mine_brute(z, y, 0.1);
        for (std::size_t i = 0; i < m; ++i) {
            std::set<std::size_t> kp(sel.kept_positives[i].begin(), sel.kept_positives[i].end());
            std::set<std::size_t> kn(sel.kept_negatives[i].begin(), sel.kept_negatives[i].end());
            for (std::size_t j = 0; j < m; ++j) {
                v.require(kp.contains(j) == ref.pos[i][j], "MS positive selection mismatch");
                v.require(kn.contains(j) == ref.neg[i][j], "MS negative selection mismatch");
                if (j == i) continue;
                (kp.contains(j) || kn.contains(j) ? kept : dropped)++;
            }
        }
    }
    if (v.pass) v.detail = "200 batches; " + std::to_string(kept) + " kept and " + std::to_string(dropped) + " dropped pairs agree";
    return v;
}

// ---------------------------------------------------------------- 4

Verdict invariance_suite() {
    Verdict v;
    std::mt19937_64 rng(404);
    const ContrastiveParams p;
    double worst_rot = 0.0;
    for (int n = 0; n < 50; ++n) {
        const std::size_t m = 3 + rng() % 6, h = 5;
        const auto y = oracle::random_labels(rng, m, 3);
        const auto z = oracle::random_unit_rows(rng, m, h);
        const auto zt = oracle::random_matrix(rng, m, h, 0.3);
        const auto q = oracle::random_orthogonal(rng, h);
        const auto pairs = slv::mine(y);
        const double sc = slv::sc_loss(z, pairs, p).value, ms = slv::ms_loss(z, y, p).value;
        const double tm = slv::tm_loss(zt, pairs, p).value;
        const double d1 = std::abs(slv::sc_loss(oracle::matmul(z, q), pairs, p).value - sc);
        const double d2 = std::abs(slv::ms_loss(oracle::matmul(z, q), y, p).value - ms);
        const double d3 = std::abs(slv::tm_loss(oracle::matmul(zt, q), pairs, p).value - tm);
        worst_rot = std::max({worst_rot, d1, d2, d3});
        v.require(d1 < 1e-8 && d2 < 1e-8 && d3 < 1e-8, "rotation changed a loss");

        Matrix shifted = zt;
        std::normal_distribution<double> nd(0.0, 2.0);
        std::vector<double> c(h);
        for (double& x : c) x = nd(rng);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t k = 0; k < h; ++k) shifted(i, k) += c[k];
        v.require(std::abs(slv::tm_loss(shifted, pairs, p).value - tm) < 1e-8, "translation changed tm_loss");

        std::vector<int> relabel{0, 1, 2};
        std::shuffle(relabel.begin(), relabel.end(), rng);
        std::vector<int> y2(m);
        for (std::size_t i = 0; i < m; ++i) y2[i] = relabel[y[i]] + 7;
        const auto pairs2 = slv::mine(y2);
        v.require(slv::sc_loss(z, pairs2, p).value == sc, "relabeling changed sc_loss");
        v.require(slv::ms_loss(z, y2, p).value == ms, "relabeling changed ms_loss");
        v.require(slv::tm_loss(zt, pairs2, p).value == tm, "relabeling changed tm_loss");
        v.require(tm >= 0.0, "tm_loss negative");
    }
    double worst_pool = 0.0;
    for (int n = 0; n < 50; ++n) {
        const auto params = slv::EncoderParams::glorot(4, 6, 3, rng());
        const std::size_t t = 2 + rng() % 10;
        const Matrix x = oracle::random_matrix(rng, t, 4);
        std::vector<std::size_t> order(t);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        Matrix xp(t, 4);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < 4; ++c) xp(i, c) = x(order[i], c);
        const auto a = slv::forward(params, x), b = slv::forward(params, xp);
        const auto gp = oracle::flatten(oracle::random_matrix(rng, 1, 6));
        const auto gl = oracle::flatten(oracle::random_matrix(rng, 1, 3));
        const auto ga = flat_params(slv::backward(params, a.cache, gp, gl));
        const auto gb = flat_params(slv::backward(params, b.cache, gp, gl));
        double d = 0.0;
        for (std::size_t i = 0; i < a.pooled.size(); ++i) d = std::max(d, std::abs(a.pooled[i] - b.pooled[i]));
        for (std::size_t i = 0; i < a.logits.size(); ++i) d = std::max(d, std::abs(a.logits[i] - b.logits[i]));
        for (std::size_t i = 0; i < ga.size(); ++i) d = std::max(d, std::abs(ga[i] - gb[i]));
        worst_pool = std::max(worst_pool, d);
        v.require(d < 1e-6, "frame permutation changed pooling");
    }
    if (v.pass)
        v.detail = "50 instances each; max rotation diff " + fmt("%.1e", worst_rot) + ", max frame-permutation diff " +
                   fmt("%.1e", worst_pool);
    return v;
}

// ---------------------------------------------------------------- 5

Verdict split_constraints() {
    Verdict v;
    std::mt19937_64 rng(505);
    std::size_t excluded_regions = 0;
    for (int n = 0; n < 100; ++n) {
        slv::SyntheticConfig c;
        c.n_regions = 2 + rng() % 10;
        c.cities_per_region = 3 + rng() % 5;
        c.sentences = 1 + rng() % 3;
        c.repeats = 1 + rng() % 3;
        c.frames_mean = 2;
        c.frames_jitter = 1;
        c.feature_dim = 2;
        c.latent_dim = 2;
        c.seed = rng();
        auto manifest = slv::synthesize_corpus(c).manifest;
        // thin some regions below three cities so the exclusion rule is exercised
        std::set<std::string> removed;
        for (const auto& r : manifest.regions()) {
            if (r == manifest.regions().front() || rng() % 3 != 0) continue;
            const auto cities = manifest.cities_of(r);
            const std::size_t keep = 1 + rng() % 2;
            for (std::size_t k = keep; k < cities.size(); ++k) removed.insert(cities[k]);
        }
        std::erase_if(manifest.entries, [&](const slv::ManifestEntry& e) { return removed.contains(e.city); });

        std::map<std::string, std::set<std::string>> in_cities;
        for (const auto& e : manifest.entries) in_cities[e.region].insert(e.city);
        const auto out = slv::build_splits(manifest, {0.8, 0.1, 0.1}, rng());

        std::set<std::string> expected, got;
        for (const auto& [r, cs] : in_cities) {
            if (cs.size() >= 3) expected.insert(cs.begin(), cs.end());
            else ++excluded_regions;
        }
        for (const auto& [city, s] : out.city_split) got.insert(city);
        v.require(got == expected, "split cities are not a partition of the surviving cities");
        std::set<std::string> out_entry_cities;
        for (const auto& e : out.entries) out_entry_cities.insert(e.city);
        v.require(out_entry_cities == expected, "entries of excluded regions survived");
        for (const auto& r : out.regions()) {
            v.require(in_cities[r].size() >= 3, "region with < 3 cities present");
            std::map<slv::Split, std::size_t> per;
            for (const auto& city : out.cities_of(r)) ++per[out.city_split.at(city)];
            v.require(per[slv::Split::train] >= 1 && per[slv::Split::val] >= 1 && per[slv::Split::test] >= 1,
                      "region " + r + " missing from a split");
        }
        v.require(!out.entries_in(slv::Split::train).empty() && !out.entries_in(slv::Split::val).empty() &&
                      !out.entries_in(slv::Split::test).empty(),
                  "empty split");
    }
    if (v.pass) v.detail = "100 corpora, " + std::to_string(excluded_regions) + " thinned regions excluded";
    return v;
}

// ---------------------------------------------------------------- 6

Verdict metric_correctness() {
    Verdict v;
    auto r4 = [](double x) { return std::round(x * 1e4) / 1e4; };
    slv::ConfusionMatrix cm({"a", "b"});
    cm.counts = {1, 1, 0, 2};
    const auto r = slv::report_from_confusion(cm);
    v.require(r4(r.accuracy.mean) == 0.75, "accuracy " + fmt("%.4f", r.accuracy.mean));
    v.require(r4(r.per_class[0].f1.mean) == 0.6667, "class-0 F1");
    v.require(r4(r.per_class[1].f1.mean) == 0.8, "class-1 F1");
    v.require(r4(r.macro_f1.mean) == 0.7333, "macro-F1 " + fmt("%.4f", r.macro_f1.mean));

    slv::ConfusionMatrix constant({"a", "b"});
    constant.counts = {5, 0, 5, 0};
    const auto rc = slv::report_from_confusion(constant);
    v.require(r4(rc.accuracy.mean) == 0.5 && r4(rc.macro_f1.mean) == 0.3333, "constant predictor");

    slv::ConfusionMatrix a({"a", "b"}), b({"a", "b"});
    a.counts = {1, 1, 0, 0};  // 0.5
    b.counts = {4, 1, 2, 3};  // 0.7
    const slv::EvalReport runs[] = {slv::report_from_confusion(a), slv::report_from_confusion(b)};
    const auto agg = slv::aggregate(runs);
    v.require(r4(agg.accuracy.mean) == 0.6 && r4(agg.accuracy.std) == 0.1,
              "aggregate " + fmt("%.4f", agg.accuracy.mean) + "±" + fmt("%.4f", agg.accuracy.std));
    const slv::EvalReport same[] = {slv::report_from_confusion(b), slv::report_from_confusion(b),
                                    slv::report_from_confusion(b)};
    v.require(r4(slv::aggregate(same).accuracy.std) == 0.0, "constant runs std");
    if (v.pass)
        v.detail = "macro-F1 " + fmt("%.4f", r.macro_f1.mean) + ", aggregate " + fmt("%.4f", agg.accuracy.mean) + "±" +
                   fmt("%.4f", agg.accuracy.std);
    return v;
}

// ---------------------------------------------------------------- 7

Verdict optimizer_schedule() {
    Verdict v;
    const auto s = slv::LrSchedule::warmup_linear(1e-4, 100);
    v.require(close(s.lr_at(5), 5e-5, 1e-12) && close(s.lr_at(10), 1e-4, 1e-12) && close(s.lr_at(55), 5e-5, 1e-12),
              "schedule values");
    v.require(std::abs(s.lr_at(100)) <= 1e-4 * std::numeric_limits<double>::epsilon(), "lr at total_steps not 0");

    slv::AdamWConfig cfg;
    const auto sched = slv::LrSchedule::warmup_linear(1e-2, 40);
    std::vector<double> theta{1.25, -0.5, 3.0}, expect = theta;
    const std::size_t sizes[] = {3};
    slv::OptimizerState st(cfg, sched, sizes);
    const std::vector<double> zero(3, 0.0);
    for (int k = 1; k <= 10; ++k) {
        const slv::ParamSlot slots[] = {{"theta", theta, true, true}};
        const std::span<const double> g[] = {zero};
        const double lr = slv::adamw_step(slots, g, st);
        for (double& e : expect) e *= 1.0 - lr * cfg.weight_decay;
    }
    v.require(theta == expect, "decoupled decay differs from closed form");

    std::vector<double> bowl{1.0, 1.0};
    slv::OptimizerState sb(cfg, slv::LrSchedule::constant(1e-2), std::vector<std::size_t>{2});
    int reached = -1;
    for (int k = 1; k <= 2000 && reached < 0; ++k) {
        const std::vector<double> g{2.0 * bowl[0], 2.0 * bowl[1]};
        const slv::ParamSlot slots[] = {{"theta", bowl, true, true}};
        const std::span<const double> gs[] = {g};
        slv::adamw_step(slots, gs, sb);
        if (std::hypot(bowl[0], bowl[1]) < 1e-3) reached = k;
    }
    v.require(reached > 0, "quadratic bowl not reached within 2000 steps");
    if (v.pass) v.detail = "lr(5)=lr(55)=5e-5, 10-step decay exact, bowl |theta|<1e-3 at step " + std::to_string(reached);
    return v;
}

// ---------------------------------------------------------------- training helpers

slv::CorpusSplits make_splits(const slv::SyntheticConfig& c) {
    const auto corpus = slv::synthesize_corpus(c);
    return slv::assemble_splits(slv::build_splits(corpus.manifest, {0.8, 0.1, 0.1}, c.seed), corpus.utterances);
}

struct RegimeSummary {
    double macro_f1 = 0.0;   // mean over seeds
    double purity = 0.0;     // mean test-embedding 10-NN purity over seeds
};

RegimeSummary run_seeds(const slv::CorpusSplits& data, const slv::RunConfig& cfg) {
    RegimeSummary s;
    for (auto seed : cfg.seeds) {
        const auto r = slv::run_regime(data, cfg, seed);
        s.macro_f1 += r.test_report.macro_f1.mean;
        s.purity += slv::knn_purity(r.test_embeddings, data.test.labels);
    }
    s.macro_f1 /= static_cast<double>(cfg.seeds.size());
    s.purity /= static_cast<double>(cfg.seeds.size());
    return s;
}

// ---------------------------------------------------------------- 8

Verdict end_to_end() {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    slv::SyntheticConfig c;  // 17 regions x 3 cities x 10 sentences x 5 repeats = 2550 utterances
    c.seed = 8;
    slv::RunConfig cfg;
    cfg.regime.kind = RegimeKind::clf_only;
    cfg.optimizer.peak_lr = 1e-3;
    cfg.seeds = {1, 2, 3};

    const auto data = make_splits(c);
    const std::size_t total = data.train.size() + data.val.size() + data.test.size();
    const double f1 = run_seeds(data, cfg).macro_f1;

    c.sigma_region = 0.0;
    const auto control_data = make_splits(c);
    const double control = run_seeds(control_data, cfg).macro_f1;
    const double chance = 1.0 / static_cast<double>(data.regions.size());
    const double secs = seconds_since(t0);

    v.require(data.regions.size() == 17, "expected 17 regions");
    v.require(f1 >= 0.90, "macro-F1 " + fmt("%.4f", f1) + " < 0.90");
    v.require(std::abs(control - chance) <= 0.05,
              "control macro-F1 " + fmt("%.4f", control) + " not within 0.05 of chance " + fmt("%.4f", chance));
    v.require(secs < 600.0, "runtime " + fmt("%.0f", secs) + " s");
    if (v.pass)
        v.detail = std::to_string(total) + " utterances; macro-F1 " + fmt("%.4f", f1) + "; sigma_region=0 control " +
                   fmt("%.4f", control) + " vs chance " + fmt("%.4f", chance) + "; " + fmt("%.0f", secs) + " s";
    return v;
}

// ---------------------------------------------------------------- 9

Verdict directional() {
    Verdict v;
    slv::SyntheticConfig c;
    c.sigma_region = 0.35;
    c.seed = 9;
    const auto data = make_splits(c);

    slv::RunConfig base;
    base.optimizer.peak_lr = 1e-3;
    base.seeds = {1, 2, 3};

    double untrained = 0.0;
    for (auto seed : base.seeds) {
        const auto p = slv::initial_params(data, base, seed);
        Matrix e(data.test.size(), base.hidden_dim);
        for (std::size_t i = 0; i < data.test.size(); ++i) {
            const auto fr = slv::forward(p, data.test.frames[i]);
            std::copy(fr.pooled.begin(), fr.pooled.end(), e.row(i).begin());
        }
        untrained += slv::knn_purity(e, data.test.labels) / static_cast<double>(base.seeds.size());
    }

    slv::RunConfig clf = base;
    clf.regime.kind = RegimeKind::clf_only;
    const auto clf_sum = run_seeds(data, clf);

    std::ostringstream line;
    line << "untrained purity " << fmt("%.3f", untrained) << "; clf F1 " << fmt("%.4f", clf_sum.macro_f1);
    double ms_ft_f1 = 0.0;
    for (auto kind : {RegimeKind::ctr_pt_only, RegimeKind::ctr_ft, RegimeKind::ctr_pt_then_ctr_ft, RegimeKind::ctr_pt_then_clf}) {
        for (auto loss : {LossKind::sc, LossKind::tm, LossKind::ms}) {
            slv::RunConfig cfg = base;
            cfg.regime.kind = kind;
            cfg.regime.loss = loss;
            const auto s = run_seeds(data, cfg);
            const std::string name = slv::regime_name(kind) + "/" + slv::loss_name(loss);
            v.require(s.purity >= untrained,
                      name + " purity " + fmt("%.3f", s.purity) + " < untrained " + fmt("%.3f", untrained));
            if (kind == RegimeKind::ctr_ft && loss == LossKind::ms) ms_ft_f1 = s.macro_f1;
            line << "; " << name << " purity " << fmt("%.3f", s.purity);
            if (kind != RegimeKind::ctr_pt_only) line << " F1 " << fmt("%.4f", s.macro_f1);
        }
    }
    v.require(ms_ft_f1 >= clf_sum.macro_f1 - 0.005,
              "ctr-ft/ms F1 " + fmt("%.4f", ms_ft_f1) + " < clf " + fmt("%.4f", clf_sum.macro_f1) + " - 0.005");
    if (v.pass) v.detail = line.str();
    else v.detail += " [" + line.str() + "]";
    return v;
}

// ---------------------------------------------------------------- 10

Verdict tsne_checks() {
    Verdict v;
    std::mt19937_64 rng(1010);
    std::vector<std::pair<Matrix, std::vector<int>>> inputs;
    {
        std::vector<int> labels;
        Matrix x = oracle::random_matrix(rng, 60, 5);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 20; ++i) {
                x(c * 20 + i, c) += 10.0;
                labels.push_back(static_cast<int>(c));
            }
        inputs.emplace_back(x, labels);
    }
    inputs.emplace_back(oracle::random_matrix(rng, 50, 8), oracle::random_labels(rng, 50, 4));
    {
        Matrix x = oracle::random_matrix(rng, 40, 3, 0.1);
        for (std::size_t i = 0; i < 40; ++i) x(i, 0) += static_cast<double>(i) * 0.5;  // a noisy line
        inputs.emplace_back(x, oracle::random_labels(rng, 40, 2));
    }

    double worst_sum = 0.0, worst_sym = 0.0, purity = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& [x, labels] = inputs[k];
        const auto aff = slv::compute_affinities(x, 15.0);
        double sum = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.rows(); ++j) {
                sum += aff.joint(i, j);
                worst_sym = std::max(worst_sym, std::abs(aff.joint(i, j) - aff.joint(j, i)));
                v.require(aff.joint(i, j) >= 0.0, "negative affinity");
            }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        std::vector<std::string> names;
        for (int l : labels) names.push_back("r" + std::to_string(l));
        slv::TsneConfig cfg;
        cfg.perplexity = 15.0;
        const auto proj = slv::tsne(x, names, cfg);
        v.require(proj.kl_trace.back() < proj.kl_trace.front(), "final KL not below initial on input " + std::to_string(k));
        for (double kl : proj.kl_trace) v.require(kl >= 0.0, "negative KL");
        if (k == 0) {
            purity = slv::knn_purity(proj.y, labels);
            const auto svg = slv::render_scatter(proj);
            const auto again = slv::render_scatter(slv::tsne(x, names, cfg));
            v.require(svg == again, "SVG differs on rerun");
        }
    }
    v.require(worst_sum <= 1e-8 && worst_sym <= 1e-8, "P normalization/symmetry");
    v.require(purity >= 0.9, "3-cluster purity " + fmt("%.3f", purity));
    if (v.pass)
        v.detail = "|sum P - 1| " + fmt("%.1e", worst_sum) + ", asym " + fmt("%.1e", worst_sym) + ", 3-cluster purity " +
                   fmt("%.3f", purity) + ", KL decreased on 3/3 inputs, SVG byte-identical";
    return v;
}

// ---------------------------------------------------------------- 11

int cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = slv::cli::run(args, out, err);
    if (code != 0) std::cerr << err.str();
    return code;
}

Verdict determinism() {
    Verdict v;
    testutil::TempDir a("acc_det_a"), b("acc_det_b");
    for (const auto* root : {&a, &b}) {
        const std::string r = root->path().string();
        v.require(cli({"gen", "--out", r + "/corpus", "--regions", "5", "--cities-per-region", "3", "--sentences", "4",
                       "--repeats", "3", "--seed", "11"}) == 0,
                  "gen failed");
        v.require(cli({"train", "--corpus", r + "/corpus", "--regime", "ctr-pt+ctr-ft", "--loss", "ms", "--seeds", "1,2,3",
                       "--max-epochs", "3", "--batch-size", "16", "--hidden-dim", "16", "--lr", "1e-3", "--out",
                       r + "/runs/ms"}) == 0,
                  "train failed");
        v.require(cli({"train", "--corpus", r + "/corpus", "--regime", "clf", "--seeds", "1,2", "--max-epochs", "3",
                       "--batch-size", "16", "--hidden-dim", "16", "--lr", "1e-3", "--out", r + "/runs/clf"}) == 0,
                  "train failed");
        v.require(cli({"report", "--runs", r + "/runs/ms", r + "/runs/clf", "--tsne", "--confusion", "--perplexity", "10",
                       "--out", r + "/report"}) == 0,
                  "report failed");
    }
    std::size_t files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) files += e.is_regular_file();
    // config.used records the corpus path; compare per tree so the roots may differ
    for (const char* sub : {"corpus", "report"})
        v.require(testutil::same_tree(a / sub, b / sub), std::string(sub) + " differs between reruns");
    for (const char* sub : {"runs/ms", "runs/clf"}) {
        namespace fs = std::filesystem;
        for (const auto& e : fs::recursive_directory_iterator(a / sub)) {
            if (!e.is_regular_file()) continue;
            const auto rel = fs::relative(e.path(), a.path());
            std::string ta = testutil::slurp(e.path()), tb = testutil::slurp(b.path() / rel);
            if (e.path().filename() == "config.used") {
                const auto strip = [](std::string s, const std::string& root) {
                    for (auto p = s.find(root); p != std::string::npos; p = s.find(root)) s.replace(p, root.size(), "<root>");
                    return s;
                };
                ta = strip(ta, a.path().string());
                tb = strip(tb, b.path().string());
            }
            v.require(ta == tb, rel.string() + " differs between reruns");
        }
    }
    if (v.pass) v.detail = "gen/train/report rerun: " + std::to_string(files) + " artifacts byte-identical";
    return v;
}

} // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Verdict()> run;
    };
    const std::vector<Criterion> all{
        {1, "gradient suite", gradient_suite},
        {2, "loss oracle suite", loss_oracles},
        {3, "mining soundness", mining_soundness},
        {4, "invariance suite", invariance_suite},
        {5, "split constraints", split_constraints},
        {6, "metric correctness", metric_correctness},
        {7, "optimizer and schedule", optimizer_schedule},
        {8, "end-to-end separable run", end_to_end},
        {9, "directional regime ordering", directional},
        {10, "t-SNE", tsne_checks},
        {11, "determinism", determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.contains(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail = std::string("exception: ") + e.what();
        }
        failures += !v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << v.detail << " ["
                  << fmt("%.1f", seconds_since(t0)) << " s]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
