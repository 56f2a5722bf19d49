//! Generates a small synthetic dataset, trains on it, and evaluates retrieval.

use imram::dataset::synth_dataset;
use imram::{evaluate, Imram, MatchConfig, ModelConfig, RetrievalSet, SynthConfig, TrainConfig, Trainer};

fn main() -> imram::Result<()> {
    let data = synth_dataset(&SynthConfig {
        pairs: 48,
        regions: 4,
        words: 4,
        raw_dim: 16,
        vocab_size: 41,
        seed: 1,
        signal: 0.9,
    })?;
    let tokens = data
        .captions
        .iter()
        .map(|c| data.vocab.tokenize(c))
        .collect::<imram::Result<Vec<_>>>()?;
    let (train, val) = data.pairs.split_at(40);
    let train_set = RetrievalSet::from_pairs(&data.features, &tokens, train)?;
    let val_set = RetrievalSet::from_pairs(&data.features, &tokens, val)?;

    let model = Imram::new(
        ModelConfig {
            raw_dim: 16,
            dim: 32,
            word_dim: 16,
            vocab_size: data.vocab.len(),
            matching: MatchConfig { steps: 2, ..MatchConfig::default() },
        },
        0,
    )?;
    let mut trainer = Trainer::new(model, TrainConfig::default())?;
    for _ in 0..60 {
        let report = trainer.run_epoch(&data.features, &tokens, train, Some(&val_set))?;
        if report.epoch % 10 == 0 {
            println!("{}", report.log_line());
        }
    }
    println!("training pairs:\n{}", evaluate(&trainer.model, &train_set)?);
    println!("held-out pairs:\n{}", evaluate(&trainer.model, &val_set)?);
    Ok(())
}
