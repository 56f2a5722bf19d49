//! One attention step and memory update between four regions and five words.

use imram::params::{seeded_rng, uniform, Bound, ParamStore};
use imram::ram::RamBlock;
use imram::{Aggregator, Tape};

fn main() -> imram::Result<()> {
    let mut rng = seeded_rng(11);
    let mut store = ParamStore::new();
    let block = RamBlock::new(&mut store, "demo", 6, Aggregator::Ours, 9.0, &mut rng)?;
    let regions = uniform(4, 6, 1.0, &mut rng);
    let words = uniform(5, 6, 1.0, &mut rng);

    let mut tape = Tape::new();
    let bound = Bound::all(&mut tape, &store, false);
    let x = tape.constant(regions);
    let y = tape.constant(words);
    let (attention, updated) = block.step(&mut tape, &bound, x, y)?;
    let r = attention.read(&tape);

    println!("cosine similarities (region x word):");
    print_rows(r.raw_sims.data(), r.raw_sims.cols());
    println!("relu, unit columns:");
    print_rows(r.normalized_sims.data(), r.normalized_sims.cols());
    println!("attention weights, lambda = {}:", block.lambda);
    print_rows(r.weights.data(), r.weights.cols());
    println!("updated regions:");
    let u = tape.value(updated);
    print_rows(u.data(), u.cols());
    Ok(())
}

fn print_rows(values: &[f64], cols: usize) {
    for row in values.chunks(cols) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.3}")).collect();
        println!("  {}", cells.join(" "));
    }
}
