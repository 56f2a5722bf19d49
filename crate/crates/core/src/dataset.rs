//! Region feature files, captions, vocabularies, manifests and the
//! synthetic matched-pair generator.
//!
//! Feature file layout, all little-endian:
//!
//! ```text
//! "IMFT" | version u32 = 1 | items u32 | regions u32 | raw_dim u32
//! items × regions × raw_dim f32 values, row-major per item
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::seeded_rng;
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"IMFT";
pub const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER: usize = 20;

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// In-memory region features, one `regions × raw_dim` matrix per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    regions: usize,
    raw_dim: usize,
    items: Vec<Tensor>,
}

impl FeatureStore {
    pub fn new(regions: usize, raw_dim: usize, items: Vec<Tensor>) -> Result<Self> {
        if regions == 0 || raw_dim == 0 {
            return Err(Error::Input("feature store needs regions ≥ 1 and raw_dim ≥ 1".into()));
        }
        for t in &items {
            if t.shape() != (regions, raw_dim) {
                return Err(Error::shape("FeatureStore::new", (regions, raw_dim), t.shape()));
            }
        }
        Ok(Self { regions, raw_dim, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn raw_dim(&self) -> usize {
        self.raw_dim
    }

    pub fn item(&self, id: usize) -> Result<&Tensor> {
        self.items
            .get(id)
            .ok_or_else(|| Error::Input(format!("image id {id} not in feature store of {} items", self.len())))
    }

    pub fn items(&self) -> &[Tensor] {
        &self.items
    }
}

/// Serializes a store. Values are narrowed to f32.
pub fn encode_features(store: &FeatureStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER + 4 * store.len() * store.regions * store.raw_dim);
    out.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, store.len() as u32, store.regions as u32, store.raw_dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in &store.items {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureStore> {
    if bytes.len() < FEATURE_HEADER {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated header: expected {FEATURE_HEADER} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}, expected \"IMFT\"", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if word(0) != FEATURE_VERSION as usize {
        return Err(Error::format(4, format!("unsupported feature version {}", word(0))));
    }
    let (items, regions, raw_dim) = (word(1), word(2), word(3));
    if regions == 0 || raw_dim == 0 {
        return Err(Error::format(12, format!("regions ({regions}) and raw_dim ({raw_dim}) must be positive")));
    }
    let per_item = regions * raw_dim;
    let expected = items
        .checked_mul(per_item)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(FEATURE_HEADER))
        .ok_or_else(|| Error::format(8, "header sizes overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes from header, found {}", bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes[FEATURE_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let tensors = values
        .chunks_exact(per_item)
        .map(|c| Tensor::from_vec(regions, raw_dim, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    FeatureStore::new(regions, raw_dim, tensors)
}

pub fn write_features(path: &Path, store: &FeatureStore) -> Result<()> {
    fs::write(path, encode_features(store))?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureStore> {
    decode_features(&fs::read(path)?)
}

/// Token list where the line number is the id; id 0 is the unknown token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate().skip(1) {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Unknown token first, then lowercase words in order of first use.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
        let mut seen = HashSet::new();
        for line in captions {
            for word in line.split_whitespace() {
                let w = word.to_lowercase();
                if w != UNKNOWN_TOKEN && seen.insert(w.clone()) {
                    tokens.push(w);
                }
            }
        }
        Self::from_tokens(tokens).expect("tokens are unique")
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn render(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Whitespace split, lowercase, unknown words map to 0.
    pub fn tokenize(&self, caption: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = caption.split_whitespace().map(|w| self.id(&w.to_lowercase())).collect();
        if ids.is_empty() {
            return Err(Error::Input(format!("empty caption {caption:?}")));
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Input(format!("unknown split {s:?}"))),
        }
    }
}

/// Plain-text manifest: `key=value` lines, then `[pairs]` followed by
/// one `image_id<TAB>text_id` line per matched pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub split: Split,
    pub features: PathBuf,
    pub captions: PathBuf,
    pub vocab: PathBuf,
    pub pairs: Vec<(usize, usize)>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: HashMap<&str, &str> = HashMap::new();
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        let mut in_pairs = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Input(format!("manifest line {}: {msg}", n + 1));
            if line == "[pairs]" {
                in_pairs = true;
                continue;
            }
            if in_pairs {
                let (a, b) = line
                    .split_once('\t')
                    .ok_or_else(|| bad(format!("expected image_id<TAB>text_id, got {line:?}")))?;
                let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
                let pair = (parse(a)?, parse(b)?);
                if !seen.insert(pair) {
                    return Err(bad(format!("duplicate pair {pair:?}")));
                }
                pairs.push(pair);
            } else {
                let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
                let k = k.trim();
                if !matches!(k, "name" | "split" | "features" | "captions" | "vocab") {
                    return Err(bad(format!("unknown key {k:?}")));
                }
                if fields.insert(k, v.trim()).is_some() {
                    return Err(bad(format!("repeated key {k:?}")));
                }
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Input(format!("manifest is missing {k}=")))
        };
        Ok(Self {
            name: get("name")?.to_string(),
            split: get("split")?.parse()?,
            features: get("features")?.into(),
            captions: get("captions")?.into(),
            vocab: get("vocab")?.into(),
            pairs,
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "name={}\nsplit={}\nfeatures={}\ncaptions={}\nvocab={}\n[pairs]\n",
            self.name,
            self.split,
            self.features.display(),
            self.captions.display(),
            self.vocab.display()
        );
        for (i, t) in &self.pairs {
            s.push_str(&format!("{i}\t{t}\n"));
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    /// Checks every pair references an existing image and caption.
    pub fn check_ids(&self, images: usize, captions: usize) -> Result<()> {
        for &(i, t) in &self.pairs {
            if i >= images || t >= captions {
                return Err(Error::Input(format!(
                    "pair ({i}, {t}) outside {images} images / {captions} captions"
                )));
            }
        }
        Ok(())
    }
}

/// A dataset directory loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureStore,
    pub captions: Vec<String>,
    pub tokens: Vec<Vec<usize>>,
    pub vocab: Vocabulary,
    pub train: Manifest,
    pub val: Option<Manifest>,
}

pub const TRAIN_MANIFEST: &str = "train.manifest";
pub const VAL_MANIFEST: &str = "val.manifest";

impl Dataset {
    /// Loads `train.manifest` (and `val.manifest` when present) from `dir`.
    /// File paths inside a manifest are relative to `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let train = Manifest::load(&dir.join(TRAIN_MANIFEST))?;
        let val_path = dir.join(VAL_MANIFEST);
        let val = if val_path.exists() {
            Some(Manifest::load(&val_path)?)
        } else {
            None
        };
        let features = load_features(&dir.join(&train.features))?;
        let vocab = Vocabulary::load(&dir.join(&train.vocab))?;
        let captions: Vec<String> = fs::read_to_string(dir.join(&train.captions))?
            .lines()
            .map(str::to_string)
            .collect();
        let tokens = captions
            .iter()
            .enumerate()
            .map(|(i, c)| {
                vocab
                    .tokenize(c)
                    .map_err(|e| Error::Input(format!("caption {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for m in std::iter::once(&train).chain(val.as_ref()) {
            m.check_ids(features.len(), captions.len())?;
        }
        Ok(Self {
            features,
            captions,
            tokens,
            vocab,
            train,
            val,
        })
    }

    /// Validation pairs, falling back to the training pairs.
    pub fn eval_pairs(&self) -> &[(usize, usize)] {
        match &self.val {
            Some(m) if !m.pairs.is_empty() => &m.pairs,
            _ => &self.train.pairs,
        }
    }
}

/// Images and texts of a retrieval gallery with their gold links.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    pub image_ids: Vec<usize>,
    pub text_ids: Vec<usize>,
    pub images: Vec<Tensor>,
    pub texts: Vec<Vec<usize>>,
    /// Positions (into `texts`) of the gold texts of each image.
    pub image_gold: Vec<Vec<usize>>,
    /// Positions (into `images`) of the gold images of each text.
    pub text_gold: Vec<Vec<usize>>,
}

impl RetrievalSet {
    /// Collects distinct images and texts in order of first appearance.
    pub fn from_pairs(features: &FeatureStore, tokens: &[Vec<usize>], pairs: &[(usize, usize)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Input("retrieval set needs at least one pair".into()));
        }
        let mut set = Self {
            image_ids: Vec::new(),
            text_ids: Vec::new(),
            images: Vec::new(),
            texts: Vec::new(),
            image_gold: Vec::new(),
            text_gold: Vec::new(),
        };
        let mut image_pos = HashMap::new();
        let mut text_pos = HashMap::new();
        for &(i, t) in pairs {
            let ip = *image_pos.entry(i).or_insert(set.image_ids.len());
            if ip == set.image_ids.len() {
                set.image_ids.push(i);
                set.images.push(features.item(i)?.clone());
                set.image_gold.push(Vec::new());
            }
            let tp = *text_pos.entry(t).or_insert(set.text_ids.len());
            if tp == set.text_ids.len() {
                set.text_ids.push(t);
                let ids = tokens
                    .get(t)
                    .ok_or_else(|| Error::Input(format!("text id {t} has no caption")))?;
                set.texts.push(ids.clone());
                set.text_gold.push(Vec::new());
            }
            set.image_gold[ip].push(tp);
            set.text_gold[tp].push(ip);
        }
        Ok(set)
    }
}

/// Settings of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub pairs: usize,
    pub regions: usize,
    pub words: usize,
    pub raw_dim: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// 1 gives exact region/token alignment with the latent concepts, 0 pure noise.
    pub signal: f64,
}

/// Generated features, captions and pairs; image `p` and text `p` form pair `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub features: FeatureStore,
    pub captions: Vec<String>,
    pub vocab: Vocabulary,
    pub pairs: Vec<(usize, usize)>,
    /// Latent concepts behind each pair, in word order.
    pub concepts: Vec<Vec<usize>>,
}

const BAND: usize = 2;

fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Builds a matched-pair dataset around latent concepts.
///
/// The vocabulary holds `<unk>` then `(vocab_size - 1) / 2` concept bands of
/// two tokens each. Every pair draws a distinct set of `words` concepts.
/// Region `i` mixes the prototype of concept `i mod words` with Gaussian
/// noise; word `j` comes from the band of concept `j` with probability
/// `signal`, otherwise uniformly from the whole vocabulary.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    let SynthConfig {
        pairs,
        regions,
        words,
        raw_dim,
        vocab_size,
        seed,
        signal,
    } = *cfg;
    if pairs == 0 || regions == 0 || words == 0 || raw_dim == 0 {
        return Err(Error::Parameter(format!("all counts must be at least 1: {cfg:?}")));
    }
    if !(0.0..=1.0).contains(&signal) {
        return Err(Error::Parameter(format!("signal strength must lie in [0, 1], got {signal}")));
    }
    let concepts = vocab_size.saturating_sub(1) / BAND;
    if concepts < words || choose(concepts, words) < pairs as f64 {
        return Err(Error::Parameter(format!(
            "vocabulary of {vocab_size} gives {concepts} concepts, too few for {pairs} distinct sets of {words}"
        )));
    }

    let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
    for c in 0..concepts {
        for w in 0..BAND {
            tokens.push(format!("c{c}w{w}"));
        }
    }
    while tokens.len() < vocab_size {
        tokens.push(format!("filler{}", tokens.len()));
    }
    let vocab = Vocabulary::from_tokens(tokens)?;

    let mut rng = seeded_rng(seed);
    let prototypes: Vec<Vec<f32>> = (0..concepts)
        .map(|_| (0..raw_dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
        .collect();

    let all: Vec<usize> = (0..concepts).collect();
    let mut used = HashSet::new();
    let mut concept_lists = Vec::with_capacity(pairs);
    let mut items = Vec::with_capacity(pairs);
    let mut captions = Vec::with_capacity(pairs);
    let s = signal as f32;
    for _ in 0..pairs {
        let list = loop {
            let list: Vec<usize> = all.choose_multiple(&mut rng, words).copied().collect();
            if used.insert(list.iter().copied().collect::<BTreeSet<_>>()) {
                break list;
            }
        };
        let mut data = Vec::with_capacity(regions * raw_dim);
        for i in 0..regions {
            let proto = &prototypes[list[i % words]];
            for &p in proto {
                let noise: f32 = rng.sample(StandardNormal);
                data.push((s * p + (1.0 - s) * noise) as f64);
            }
        }
        items.push(Tensor::from_vec(regions, raw_dim, data)?);
        let caption: Vec<&str> = list
            .iter()
            .map(|&c| {
                let id = if rng.random::<f64>() < signal {
                    1 + c * BAND + rng.random_range(0..BAND)
                } else {
                    rng.random_range(1..vocab_size)
                };
                vocab.token(id).expect("id in range")
            })
            .collect();
        captions.push(caption.join(" "));
        concept_lists.push(list);
    }
    Ok(SynthData {
        features: FeatureStore::new(regions, raw_dim, items)?,
        captions,
        vocab,
        pairs: (0..pairs).map(|p| (p, p)).collect(),
        concepts: concept_lists,
    })
}

/// Writes `features.imft`, `captions.txt`, `vocab.txt` and the manifests.
/// The last `val_pairs` pairs go to `val.manifest`, the rest to `train.manifest`.
pub fn write_dataset(dir: &Path, name: &str, data: &SynthData, val_pairs: usize) -> Result<()> {
    if val_pairs >= data.pairs.len() {
        return Err(Error::Parameter(format!(
            "{val_pairs} validation pairs leave no training pairs out of {}",
            data.pairs.len()
        )));
    }
    fs::create_dir_all(dir)?;
    write_features(&dir.join("features.imft"), &data.features)?;
    let mut captions = data.captions.join("\n");
    captions.push('\n');
    fs::write(dir.join("captions.txt"), captions)?;
    data.vocab.write(&dir.join("vocab.txt"))?;
    let cut = data.pairs.len() - val_pairs;
    let manifest = |split, pairs: &[(usize, usize)]| Manifest {
        name: name.to_string(),
        split,
        features: "features.imft".into(),
        captions: "captions.txt".into(),
        vocab: "vocab.txt".into(),
        pairs: pairs.to_vec(),
    };
    manifest(Split::Train, &data.pairs[..cut]).write(&dir.join(TRAIN_MANIFEST))?;
    if val_pairs > 0 {
        manifest(Split::Val, &data.pairs[cut..]).write(&dir.join(VAL_MANIFEST))?;
    } else if dir.join(VAL_MANIFEST).exists() {
        fs::remove_file(dir.join(VAL_MANIFEST))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_store() -> FeatureStore {
        let items = (0..2)
            .map(|k| Tensor::from_vec(3, 4, (0..12).map(|i| (i as f64 + 0.5 * k as f64) / 8.0).collect()).unwrap())
            .collect();
        FeatureStore::new(3, 4, items).unwrap()
    }

    /// Writes the layout by hand, independently of `encode_features`.
    fn hand_written(values: &[f32], items: u32, regions: u32, raw: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"IMFT");
        for w in [1u32, items, regions, raw] {
            b.extend_from_slice(&w.to_le_bytes());
        }
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn feature_round_trip() {
        let s = small_store();
        assert_eq!(decode_features(&encode_features(&s)).unwrap(), s);
    }

    #[test]
    fn feature_cross_writer() {
        let values: Vec<f32> = (0..24).map(|i| i as f32 * 0.25 - 3.0).collect();
        let s = decode_features(&hand_written(&values, 2, 3, 4)).unwrap();
        assert_eq!((s.len(), s.regions(), s.raw_dim()), (2, 3, 4));
        assert_eq!(s.item(1).unwrap().get(2, 3), values[23] as f64);
        assert_eq!(s.item(0).unwrap().get(1, 0), values[4] as f64);
    }

    #[test]
    fn feature_errors() {
        let good = encode_features(&small_store());
        let err = decode_features(&good[..good.len() - 4]).unwrap_err();
        assert!(err.to_string().contains("expected 116 bytes"), "{err}");
        let mut bad = good.clone();
        bad[1] = b'Z';
        assert!(matches!(decode_features(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_features(&bad), Err(Error::Format { offset: 4, .. })));
        assert!(decode_features(&good[..10]).is_err());
        let mut long = good;
        long.push(0);
        assert!(decode_features(&long).is_err());
    }

    #[test]
    fn tokenize_cases() {
        let v = Vocabulary::from_tokens(vec!["<unk>".into(), "a".into(), "dog".into()]).unwrap();
        assert_eq!(v.tokenize("A dog").unwrap(), vec![1, 2]);
        assert_eq!(v.tokenize("zebra").unwrap(), vec![0]);
        assert!(matches!(v.tokenize("   "), Err(Error::Input(_))));
    }

    #[test]
    fn built_vocabulary_covers_corpus() {
        let corpus = ["A man rides a horse", "two dogs play", "The man smiles"];
        let v = Vocabulary::build(corpus);
        for line in corpus {
            assert!(v.tokenize(line).unwrap().iter().all(|&id| id != 0));
        }
        assert_eq!(Vocabulary::parse(&v.render()).unwrap(), v);
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let m = Manifest {
            name: "demo".into(),
            split: Split::Val,
            features: "f.imft".into(),
            captions: "c.txt".into(),
            vocab: "v.txt".into(),
            pairs: vec![(0, 0), (0, 1), (1, 2)],
        };
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
        let dup = m.render() + "0\t1\n";
        assert!(Manifest::parse(&dup).is_err());
        assert!(Manifest::parse("name=x\ncolour=red\n").is_err());
        assert!(m.check_ids(2, 3).is_ok());
        assert!(m.check_ids(1, 3).is_err());
    }

    fn synth(signal: f64, seed: u64) -> SynthData {
        synth_dataset(&SynthConfig {
            pairs: 12,
            regions: 4,
            words: 3,
            raw_dim: 6,
            vocab_size: 21,
            seed,
            signal,
        })
        .unwrap()
    }

    #[test]
    fn synth_is_deterministic() {
        assert_eq!(synth(0.5, 4), synth(0.5, 4));
        assert_ne!(synth(0.5, 4), synth(0.5, 5));
        let d = synth(0.5, 4);
        assert_eq!(encode_features(&d.features), encode_features(&synth(0.5, 4).features));
    }

    #[test]
    fn full_signal_aligns_tokens_and_regions() {
        let d = synth(1.0, 9);
        let mut sets = HashSet::new();
        for (p, caption) in d.captions.iter().enumerate() {
            let ids = d.vocab.tokenize(caption).unwrap();
            for (j, id) in ids.iter().enumerate() {
                assert_eq!((id - 1) / BAND, d.concepts[p][j]);
            }
            assert!(sets.insert(d.concepts[p].iter().copied().collect::<BTreeSet<_>>()));
            let img = d.features.item(p).unwrap();
            // regions 0 and 3 share concept 0 when words = 3
            assert_eq!(img.row(0), img.row(3));
        }
    }

    #[test]
    fn synth_rejects_bad_settings() {
        let base = SynthConfig {
            pairs: 4,
            regions: 2,
            words: 2,
            raw_dim: 3,
            vocab_size: 9,
            seed: 0,
            signal: 1.0,
        };
        assert!(synth_dataset(&SynthConfig { pairs: 0, ..base }).is_err());
        assert!(synth_dataset(&SynthConfig { signal: 1.5, ..base }).is_err());
        assert!(synth_dataset(&SynthConfig { pairs: 7, ..base }).is_err());
        assert!(synth_dataset(&SynthConfig { pairs: 6, ..base }).is_ok());
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth(1.0, 1);
        write_dataset(dir.path(), "demo", &d, 4).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.features, d.features);
        assert_eq!(loaded.train.pairs.len(), 8);
        assert_eq!(loaded.eval_pairs(), &d.pairs[8..]);
        assert_eq!(loaded.captions, d.captions);
    }

    #[test]
    fn retrieval_set_links() {
        let s = small_store();
        let tokens = vec![vec![1], vec![2], vec![3]];
        let r = RetrievalSet::from_pairs(&s, &tokens, &[(1, 0), (1, 2), (0, 1)]).unwrap();
        assert_eq!(r.image_ids, vec![1, 0]);
        assert_eq!(r.text_ids, vec![0, 2, 1]);
        assert_eq!(r.image_gold, vec![vec![0, 1], vec![2]]);
        assert_eq!(r.text_gold, vec![vec![0], vec![0], vec![1]]);
        assert!(RetrievalSet::from_pairs(&s, &tokens, &[]).is_err());
    }
}
