#include <doctest.h>

#include "ctlrp/eval.hpp"

using namespace ctlrp;

namespace {

PropagationEvent make_event(const std::string& id, std::vector<std::vector<int>> node_tokens) {
    PropagationEvent ev;
    ev.event_id = id;
    for (std::size_t i = 0; i < node_tokens.size(); ++i) {
        Post p;
        p.post_id = "n" + std::to_string(i);
        if (i > 0) p.parent_id = "n" + std::to_string(i - 1);
        p.tokens = std::move(node_tokens[i]);
        ev.posts.push_back(std::move(p));
    }
    return ev;
}

// Hand-built classifier whose prediction is class 1 exactly when token 7
// contributes to some node feature, class 0 (the argmax of all-zero logits)
// otherwise. Lets fidelity fixtures be computed by inspection.
BiGcnModel decision_model() {
    BiGcnModel m = BiGcnModel::init(10, 2, 1, PoolingKind::Mean, 1, 1);
    m.params.at("embed") = Matrix(10, 1);
    m.params.at("embed")(7, 0) = 1.0;
    for (const char* n : {"td_w1", "td_w2", "bu_w1", "bu_w2"})
        m.params.at(n) = Matrix::from_rows({{1.0}});
    m.params.at("cls_w") = Matrix::from_rows({{-1.0, 1.0}, {-1.0, 1.0}});
    m.zero_biases();
    return m;
}

// Explanation listing only the marked tokens, each kept with the given score
// at the explained class.
Explanation manual_tokens(const std::string& event_id, int predicted,
                          const std::vector<std::tuple<std::size_t, std::size_t, double>>& marks) {
    Explanation ex;
    ex.method = "manual";
    ex.event_id = event_id;
    ex.predicted = predicted;
    ex.explained_class = predicted;
    for (const auto& [node, pos, score] : marks) {
        TokenRecord rec;
        rec.node = node;
        rec.position = pos;
        rec.z = Vector(2, 0.0);
        rec.z[static_cast<std::size_t>(predicted)] = score;
        rec.kept = true;
        ex.tokens.push_back(std::move(rec));
    }
    return ex;
}

}  // namespace

TEST_CASE("decision model behaves as constructed") {
    BiGcnModel m = decision_model();
    PropagationEvent with7 = make_event("w", {{7, 3}, {1, 2}});
    PropagationEvent without = make_event("wo", {{3, 4}, {1, 2}});
    CHECK(forward(m, with7).predicted == 1);
    CHECK(forward(m, without).predicted == 0);
    // dropping the decision token flips the prediction, dropping filler does not
    Vector y_dec = perturbed_forward(m, with7, 0, 0);
    CHECK(static_cast<int>(std::max_element(y_dec.begin(), y_dec.end()) - y_dec.begin()) == 0);
    Vector y_fill = perturbed_forward(m, with7, 1, 0);
    CHECK(static_cast<int>(std::max_element(y_fill.begin(), y_fill.end()) - y_fill.begin()) == 1);
}

TEST_CASE("fidelity: 2 of 3 predictions change gives 2/3") {
    BiGcnModel m = decision_model();
    std::vector<PropagationEvent> events = {
        make_event("a", {{7, 3}, {1, 2}}),
        make_event("b", {{7}, {2, 4}}),
        make_event("c", {{3, 4}, {1, 2}}),
    };
    std::vector<Explanation> ex = {
        manual_tokens("a", 1, {{0, 0, 1.0}}),   // removes the decision token
        manual_tokens("b", 1, {{0, 0, 1.0}}),   // removes the decision token
        manual_tokens("c", 0, {{1, 0, 1.0}}),   // removes a filler token, no change
    };
    CHECK(fidelity(m, events, ex, 0.01) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("fidelity: empty identified set counts as unchanged") {
    BiGcnModel m = decision_model();
    std::vector<PropagationEvent> events = {make_event("a", {{7, 3}})};
    std::vector<Explanation> ex = {manual_tokens("a", 1, {})};
    CHECK(fidelity(m, events, ex, 0.01) == 0.0);
}

TEST_CASE("fidelity: attribution at or below the threshold is not identified") {
    BiGcnModel m = decision_model();
    std::vector<PropagationEvent> events = {make_event("a", {{7, 3}})};
    std::vector<Explanation> ex = {manual_tokens("a", 1, {{0, 0, 0.01}})};  // == threshold
    CHECK(fidelity(m, events, ex, 0.01) == 0.0);
    ex = {manual_tokens("a", 1, {{0, 0, 0.011}})};
    CHECK(fidelity(m, events, ex, 0.01) == 1.0);
}

TEST_CASE("fidelity: node-level explanation removes every token of the node") {
    BiGcnModel m = decision_model();
    PropagationEvent ev = make_event("a", {{7, 3}, {1, 2}});
    Explanation ex;
    ex.method = "manual-node";
    ex.event_id = "a";
    ex.predicted = 1;
    ex.explained_class = 1;
    ex.node_scores = {1.0, 0.0};
    CHECK(fidelity(m, {ev}, {ex}, 0.01) == 1.0);
}

TEST_CASE("fidelity: mismatched list sizes and empty event list rejected") {
    BiGcnModel m = decision_model();
    std::vector<PropagationEvent> events = {make_event("a", {{7}})};
    CHECK_THROWS_AS(fidelity(m, events, {}, 0.01), ConfigError);
    CHECK_THROWS_AS(fidelity(m, {}, {}, 0.01), ConfigError);
}

TEST_CASE("sparsity arithmetic: 0, all, and 5 of 20") {
    PropagationEvent ev = make_event("a", {{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5},
                                           {1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}});
    REQUIRE(ev.total_tokens() == 20);
    CHECK(sparsity(manual_tokens("a", 0, {}), ev) == doctest::Approx(1.0));

    std::vector<std::tuple<std::size_t, std::size_t, double>> all;
    for (std::size_t v = 0; v < 4; ++v)
        for (std::size_t t = 0; t < 5; ++t) all.push_back({v, t, 1.0});
    CHECK(sparsity(manual_tokens("a", 0, all), ev) == doctest::Approx(0.0));

    std::vector<std::tuple<std::size_t, std::size_t, double>> five(all.begin(), all.begin() + 5);
    CHECK(sparsity(manual_tokens("a", 0, five), ev) == doctest::Approx(0.75));
}

TEST_CASE("sparsity: node-level explanations count nodes") {
    PropagationEvent ev = make_event("a", {{1, 2}, {3}, {4}, {5}});
    Explanation ex;
    ex.node_scores = {1.0, 0.0, 0.5, 0.0};
    CHECK(sparsity(ex, ev) == doctest::Approx(0.5));
}

TEST_CASE("fidelity_at_sparsity: level outside [0,1) rejected") {
    BiGcnModel m = decision_model();
    std::vector<PropagationEvent> events = {make_event("a", {{7}})};
    std::vector<Explanation> ex = {manual_tokens("a", 1, {{0, 0, 1.0}})};
    CHECK_THROWS_AS(fidelity_at_sparsity(m, events, ex, 1.0, 0.01), ConfigError);
    CHECK_THROWS_AS(fidelity_at_sparsity(m, events, ex, -0.1, 0.01), ConfigError);
}

TEST_CASE("fidelity_at_sparsity: removal cap is ceil((1-level)*total)") {
    BiGcnModel m = decision_model();
    // 10 filler tokens, 8 marked; at level 0.35 the cap is ceil(6.5)=7
    PropagationEvent ev = make_event("a", {{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}});
    std::vector<std::tuple<std::size_t, std::size_t, double>> marks;
    for (std::size_t t = 0; t < 4; ++t) marks.push_back({0, t, 1.0});
    for (std::size_t t = 0; t < 4; ++t) marks.push_back({1, t, 1.0});
    std::vector<Explanation> ex = {manual_tokens("a", 0, marks)};
    SparsityRunResult r = fidelity_at_sparsity(m, {ev}, ex, 0.35, 0.01);
    CHECK(r.achieved_sparsity == doctest::Approx(0.3));  // removed 7 of 10
    CHECK(r.fidelity == 0.0);                            // filler only, no flip

    // cap larger than the identified set removes everything identified
    r = fidelity_at_sparsity(m, {ev}, ex, 0.0, 0.01);
    CHECK(r.achieved_sparsity == doctest::Approx(0.2));  // removed all 8 of 10
}

TEST_CASE("fidelity_at_sparsity: low-scored decision token survives high sparsity") {
    BiGcnModel m = decision_model();
    PropagationEvent ev = make_event("a", {{7}, {1, 2, 3}});
    std::vector<Explanation> ex = {manual_tokens(
        "a", 1, {{1, 0, 5.0}, {1, 1, 4.0}, {1, 2, 3.0}, {0, 0, 1.0}})};
    // 4 tokens total; level 0.7 caps removal at ceil(1.2)=2 top decoys
    SparsityRunResult high = fidelity_at_sparsity(m, {ev}, ex, 0.7, 0.01);
    CHECK(high.fidelity == 0.0);
    // level 0 removes all 4, including the decision token
    SparsityRunResult low = fidelity_at_sparsity(m, {ev}, ex, 0.0, 0.01);
    CHECK(low.fidelity == 1.0);
    CHECK(low.fidelity >= high.fidelity);
}

TEST_CASE("fidelity_at_sparsity: equal scores break ties by (node, position) deterministically") {
    BiGcnModel m = decision_model();
    PropagationEvent ev = make_event("a", {{7, 1}, {2, 3}});
    std::vector<Explanation> ex = {manual_tokens(
        "a", 1, {{1, 1, 1.0}, {0, 0, 1.0}, {1, 0, 1.0}, {0, 1, 1.0}})};
    // cap 1 at level 0.75; the tie-break picks (0,0), the decision token
    SparsityRunResult a = fidelity_at_sparsity(m, {ev}, ex, 0.75, 0.01);
    SparsityRunResult b = fidelity_at_sparsity(m, {ev}, ex, 0.75, 0.01);
    CHECK(a.fidelity == 1.0);
    CHECK(a.fidelity == b.fidelity);
    CHECK(a.achieved_sparsity == b.achieved_sparsity);
}

TEST_CASE("eval config validation") {
    EvalConfig cfg;
    cfg.sparsity_grid = {0.0, 1.0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = EvalConfig{};
    cfg.threshold = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = EvalConfig{};
    cfg.folds = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(EvalConfig{}.validate());
}

TEST_CASE("explain_with_method: unknown method rejected, known list complete") {
    CHECK(known_methods().size() == 5);
    BiGcnModel m = decision_model();
    PropagationEvent ev = make_event("a", {{7, 3}});
    CHECK_THROWS_AS(explain_with_method(m, ev, "saliency"), ConfigError);
    for (const std::string& name : known_methods())
        CHECK(explain_with_method(m, ev, name).method == name);
}

TEST_CASE("sweep: deterministic, parallel-invariant, composed of fidelity_at_sparsity") {
    BiGcnModel m = decision_model();
    std::vector<PropagationEvent> events = {
        make_event("a", {{7, 3}, {1, 2}}), make_event("b", {{7}, {2, 4, 5}}),
        make_event("c", {{3, 4}, {1, 2}}), make_event("d", {{7, 1}, {3}}),
        make_event("e", {{2, 3}, {4}}),    make_event("f", {{7, 2, 3}}),
    };
    EvalConfig cfg;
    cfg.sparsity_grid = {0.0, 0.5};
    cfg.folds = 1;
    cfg.seed = 3;
    const std::vector<std::string> methods = {"ct-lrp", "node-lrp"};

    EvalReport r1 = sweep(m, events, methods, cfg);
    EvalReport r2 = sweep(m, events, methods, cfg);
    EvalReport r4 = sweep(m, events, methods, cfg, 4);
    REQUIRE(r1.rows.size() == methods.size() * cfg.sparsity_grid.size());
    for (std::size_t i = 0; i < r1.rows.size(); ++i) {
        CHECK(r1.rows[i].fidelity_mean == r2.rows[i].fidelity_mean);
        CHECK(r1.rows[i].fidelity_mean == r4.rows[i].fidelity_mean);
        CHECK(r1.rows[i].fidelity_std == r2.rows[i].fidelity_std);
        // single fold: zero variance across folds
        CHECK(r1.rows[i].fidelity_std == 0.0);
        // exact product identity
        CHECK(r1.rows[i].fidelity_sparsity ==
              r1.rows[i].fidelity_mean * r1.rows[i].sparsity_achieved);
    }

    // with one fold each row reduces to a direct fidelity_at_sparsity call
    for (const std::string& method : methods) {
        std::vector<Explanation> ex;
        for (const auto& ev : events) ex.push_back(explain_with_method(m, ev, method));
        for (double level : cfg.sparsity_grid) {
            SparsityRunResult direct = fidelity_at_sparsity(m, events, ex, level, cfg.threshold);
            bool found = false;
            for (const auto& row : r1.rows)
                if (row.method == method && row.sparsity_level == level) {
                    CHECK(row.fidelity_mean == doctest::Approx(direct.fidelity).epsilon(1e-12));
                    found = true;
                }
            CHECK(found);
        }
    }
}

TEST_CASE("report output: csv header and json curves") {
    EvalReport report;
    EvalRow row;
    row.method = "ct-lrp";
    row.sparsity_level = 0.5;
    row.fidelity_mean = 0.75;
    row.fidelity_std = 0.1;
    row.sparsity_achieved = 0.6;
    row.fidelity_sparsity = 0.45;
    report.rows.push_back(row);

    const std::string csv = report_to_csv(report, "synthetic");
    CHECK(csv.rfind("method,dataset,sparsity,fidelity_mean,fidelity_std,fid_sparsity\n", 0) == 0);
    CHECK(csv.find("ct-lrp,synthetic,0.5") != std::string::npos);

    nlohmann::json j = report_to_json(report, "synthetic");
    CHECK(j["dataset"] == "synthetic");
    CHECK(j["curves"]["ct-lrp"]["fidelity_mean"][0] == 0.75);
}
