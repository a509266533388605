use wgrank::pipeline::{prepare_queries, Collection, Experiment, IndexOptions, ModelConfig};
use wgrank::synth::{overfit_corpus, OverfitSpec};
use wgrank::train::{train, TrainConfig};

fn losses(seed: u64, epochs: usize) -> (Vec<f64>, bool) {
    let c = overfit_corpus(&OverfitSpec::default(), seed);
    let opts = IndexOptions {
        min_freq: 1,
        ..Default::default()
    };
    let col = Collection::build(&c.docs, &opts).unwrap();
    let emb = c.embeddings(&col.vocab).unwrap();
    let queries = prepare_queries(&col, &c.queries, 8).unwrap();
    let exp = Experiment::new(&col, &emb, queries, &c.qrels, 100);
    let cfg = ModelConfig {
        train: TrainConfig {
            epochs,
            seed,
            ..Default::default()
        },
        ..Default::default()
    };
    let graphs = exp.graphs(cfg.features).unwrap();
    let data = exp.training_set(&exp.query_ids(), false, &graphs).unwrap();
    let init = cfg.initial_params();
    let out = train(init.clone(), &data, None, &cfg.train).unwrap();
    (out.log.iter().map(|r| r.mean_loss).collect(), out.params == init)
}

#[test]
fn loss_trends_down_over_first_fifty_epochs() {
    let seeds = 5;
    let mut mean = vec![0.0; 50];
    for seed in 0..seeds {
        let (l, _) = losses(seed, 50);
        for (m, v) in mean.iter_mut().zip(l) {
            *m += v / seeds as f64;
        }
    }
    // Ten-epoch blocks of the seed-averaged curve.
    let blocks: Vec<f64> = mean.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "block means increase: {blocks:?}");
    }
    assert!(blocks[4] < blocks[0] * 0.5, "{blocks:?}");
}

#[test]
fn zero_epochs_keeps_initialization() {
    let (log, unchanged) = losses(3, 0);
    assert!(log.is_empty());
    assert!(unchanged);
}
