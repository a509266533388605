use wgrank_demo::{graph_of_word_json, propagation_json, rank_json};

#[test]
fn graph_matches_hand_count() {
    // "a b c a" with window 2: pairs ab, bc, ca.
    let g = graph_of_word_json("alpha beta gamma alpha", 2).unwrap();
    assert_eq!(g["nodes"], serde_json::json!(["alpha", "beta", "gamma"]));
    assert_eq!(g["edges"], serde_json::json!([[0, 1, 1], [0, 2, 1], [1, 2, 1]]));
    let norm = g["normalized"].as_array().unwrap();
    assert!((norm[0][1].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn stopwords_are_not_nodes() {
    let g = graph_of_word_json("the cat and the hat", 3).unwrap();
    assert_eq!(g["nodes"], serde_json::json!(["cat", "hat"]));
}

#[test]
fn propagation_reaches_neighbours_only_through_edges() {
    let text = "river bank flood river delta";
    let p = propagation_json(text, "flood", 2, "graph", 2).unwrap();
    let states = p["states"].as_array().unwrap();
    assert_eq!(states.len(), 3);
    let nodes: Vec<&str> = p["nodes"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let at = |step: usize, term: &str| states[step][nodes.iter().position(|n| *n == term).unwrap()][0].as_f64().unwrap();
    assert_eq!(at(0, "flood"), 1.0);
    assert_eq!(at(0, "bank"), 0.0);
    assert!(at(1, "bank") > 0.0);
    assert_eq!(at(1, "delta"), 0.0);
    assert!(at(2, "delta") > 0.0);

    let z = propagation_json(text, "flood", 2, "zero", 2).unwrap();
    let zs = z["states"].as_array().unwrap();
    assert!(zs[1].as_array().unwrap().iter().all(|r| r[0].as_f64().unwrap() == 0.0));
}

#[test]
fn propagation_rejects_bad_input() {
    assert!(propagation_json("a b c", "x", 2, "tree", 1).is_err());
    assert!(propagation_json("river bank", "the", 2, "graph", 1).is_err());
    assert!(propagation_json("river bank", "bank", 2, "graph", 50).is_err());
}

#[test]
fn ranking_orders_by_score() {
    let coll = "d1 storm surge harbour\nd2 harbour master\nd3 recipes\n";
    for scorer in ["bm25", "ql"] {
        let r = rank_json(coll, "storm harbour", scorer).unwrap();
        let rows = r.as_array().unwrap();
        assert_eq!(rows[0]["doc"], "d1");
        let scores: Vec<f64> = rows.iter().map(|d| d["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn ranking_rejects_duplicates_and_unknown_scorer() {
    assert!(rank_json("d1 a\nd1 b", "a", "bm25").is_err());
    assert!(rank_json("d1 storm", "storm", "tfidf").is_err());
    assert!(rank_json("", "storm", "bm25").is_err());
}
