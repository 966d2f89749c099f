//! Slow trainer checks that need a real corpus and a few hundred optimizer
//! steps; fast loss/optimizer properties live next to their modules.

use sedr::encoder::{BiEncoder, EncoderConfig, InteractionPattern};
use sedr::eval::{generate, SyntheticCorpusConfig};
use sedr::training::{TrainConfig, Trainer, TrainingInstance};

/// Window-10 smoothed training loss must strictly decrease across the first
/// 200 steps on the bundled synthetic task at the desk scale: the mean of
/// the last ten losses has to land below the mean of the first ten.
#[test]
fn smoothed_loss_decreases_over_first_200_steps() {
    let data = generate(&SyntheticCorpusConfig::desk(7)).unwrap();
    let mut cfg = EncoderConfig::desk();
    cfg.vocab_size = 256;
    cfg.interaction_pattern = InteractionPattern::SegmentInteraction;
    cfg.tied_encoders = true;
    let mut model = BiEncoder::new(&cfg, 7).unwrap();

    let instances: Vec<TrainingInstance> = data
        .train_triples
        .iter()
        .map(|&(qid, pos, neg)| {
            let query = data.train_queries.get(qid).unwrap().clone();
            TrainingInstance::new(query, pos, neg).unwrap()
        })
        .collect();

    // 400 instances at batch 4 → 100 steps per epoch; two epochs cover the
    // first 200 steps the invariant speaks about.
    let tc = TrainConfig {
        batch_size: 4,
        cache_size: 4,
        hardness: 20,
        learning_rate: 1e-4,
        epochs: 2,
        seed: 7,
    };
    let mut trainer = Trainer::new(&mut model, &data.documents, tc).unwrap();
    let records = trainer.run(&instances, None).unwrap();
    assert!(records.len() >= 200, "need at least 200 steps, got {}", records.len());

    let window = |range: std::ops::Range<usize>| -> f64 {
        records[range.clone()].iter().map(|r| r.loss).sum::<f64>() / range.len() as f64
    };
    let first = window(0..10);
    let last = window(190..200);
    assert!(
        last < first,
        "smoothed loss rose over the first 200 steps: first window {first:.4}, last {last:.4}"
    );
}
