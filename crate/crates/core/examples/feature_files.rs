//! Writes and reads back a feature file and a checkpoint.

use imram::checkpoint;
use imram::dataset::{load_features, synth_dataset, write_features};
use imram::{Imram, MatchConfig, ModelConfig, SynthConfig};

fn main() -> imram::Result<()> {
    let dir = std::env::temp_dir().join(format!("imram-formats-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let data = synth_dataset(&SynthConfig {
        pairs: 3,
        regions: 2,
        words: 3,
        raw_dim: 4,
        vocab_size: 9,
        seed: 0,
        signal: 1.0,
    })?;

    let features = dir.join("features.imft");
    write_features(&features, &data.features)?;
    let bytes = std::fs::read(&features)?;
    println!("{}: {} bytes, header {:02x?}", features.display(), bytes.len(), &bytes[..20]);
    let back = load_features(&features)?;
    println!("  {} items of {}x{}, equal={}", back.len(), back.regions(), back.raw_dim(), back == data.features);

    let model = Imram::new(
        ModelConfig { raw_dim: 4, dim: 6, word_dim: 3, vocab_size: data.vocab.len(), matching: MatchConfig::default() },
        0,
    )?;
    let path = dir.join("model.imrm");
    model.save(&path)?;
    let entries = checkpoint::read(&path)?;
    println!("{}: {} bytes, {} tensors", path.display(), std::fs::metadata(&path)?.len(), entries.len());
    for (name, t) in entries.iter().take(4) {
        println!("  {name} {}x{}", t.rows(), t.cols());
    }
    let reloaded = Imram::load(&path, MatchConfig::default())?;
    println!("  reloaded parameters equal={}", reloaded.params.iter().eq(model.params.iter()));

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
