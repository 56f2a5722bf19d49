//! Words scoring above the per-step mean, before and after training.

use imram::dataset::synth_dataset;
use imram::evaluator::salient_concepts;
use imram::{Imram, MatchConfig, ModelConfig, SynthConfig, TrainConfig, Trainer};

fn main() -> imram::Result<()> {
    let data = synth_dataset(&SynthConfig {
        pairs: 24,
        regions: 4,
        words: 6,
        raw_dim: 16,
        vocab_size: 41,
        seed: 5,
        signal: 0.7,
    })?;
    let tokens = data
        .captions
        .iter()
        .map(|c| data.vocab.tokenize(c))
        .collect::<imram::Result<Vec<_>>>()?;
    let model = Imram::new(
        ModelConfig {
            raw_dim: 16,
            dim: 32,
            word_dim: 16,
            vocab_size: data.vocab.len(),
            matching: MatchConfig::default(),
        },
        2,
    )?;
    let mut trainer = Trainer::new(model, TrainConfig::default())?;
    report(&trainer.model, &data, &tokens, "untrained")?;
    for _ in 0..60 {
        trainer.run_epoch(&data.features, &tokens, &data.pairs, None)?;
    }
    report(&trainer.model, &data, &tokens, "trained")
}

fn report(model: &Imram, data: &imram::dataset::SynthData, tokens: &[Vec<usize>], label: &str) -> imram::Result<()> {
    println!("{label}:");
    for pair in 0..3 {
        let image = model.encode_image(data.features.item(pair)?, pair)?;
        let text = model.encode_text(&tokens[pair], pair)?;
        println!("  caption {pair}: {}", data.captions[pair]);
        for step in 1..=model.config.matching.steps {
            let words: Vec<&str> = salient_concepts(model, &image, &text, step)?
                .into_iter()
                .map(|j| data.vocab.token(tokens[pair][j]).unwrap_or("?"))
                .collect();
            println!("    step {step}: {}", words.join(" "));
        }
    }
    Ok(())
}
