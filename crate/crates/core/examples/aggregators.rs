//! Steps each memory update policy needs to fit 32 clean pairs.

use imram::dataset::synth_dataset;
use imram::{Aggregator, Imram, MatchConfig, ModelConfig, RetrievalSet, SynthConfig, TrainConfig, Trainer};

fn main() -> imram::Result<()> {
    let data = synth_dataset(&SynthConfig {
        pairs: 32,
        regions: 4,
        words: 4,
        raw_dim: 16,
        vocab_size: 41,
        seed: 0,
        signal: 1.0,
    })?;
    let tokens = data
        .captions
        .iter()
        .map(|c| data.vocab.tokenize(c))
        .collect::<imram::Result<Vec<_>>>()?;
    let set = RetrievalSet::from_pairs(&data.features, &tokens, &data.pairs)?;

    for aggregator in Aggregator::ALL {
        let matching = MatchConfig { steps: 2, aggregator, ..MatchConfig::default() };
        let model = Imram::new(
            ModelConfig { raw_dim: 16, dim: 32, word_dim: 16, vocab_size: data.vocab.len(), matching },
            0,
        )?;
        let params = model.params.scalar_count();
        let mut trainer = Trainer::new(model, TrainConfig::default())?;
        let mut steps = 0;
        let mut reached = None;
        while steps < 1000 && reached.is_none() {
            let report = trainer.run_epoch(&data.features, &tokens, &data.pairs, Some(&set))?;
            steps += report.steps;
            let v = report.validation.expect("validation set given");
            if v.text_retrieval[0] == 100.0 && v.image_retrieval[0] == 100.0 {
                reached = Some(steps);
            }
        }
        match reached {
            Some(s) => println!("{aggregator:>5} params={params} perfect R@1 after {s} steps"),
            None => println!("{aggregator:>5} params={params} not perfect after {steps} steps"),
        }
    }
    Ok(())
}
