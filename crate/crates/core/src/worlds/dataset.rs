use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{annotate, AnnotatorWorld, LabelingMode, WorldParams, MAX_SAMPLER_TRIES};
use crate::autodiff::SeededRng;
use crate::error::{Error, Result};
use crate::types::{PreferenceTriple, Record};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    ContextOnly,
    All,
}

impl NoiseScope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "context_only" => Ok(NoiseScope::ContextOnly),
            "all" => Ok(NoiseScope::All),
            other => Err(Error::config(format!("unknown noise scope {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub world: WorldParams,
    pub seed: u64,
    /// Context size.
    pub n: usize,
    /// Per-user pool size.
    pub k: usize,
    /// Copies of each target, each with its own context.
    pub m: usize,
    pub labeling_mode: Option<LabelingMode>,
    pub noise_rate: f64,
    pub noise_scope: Option<NoiseScope>,
    pub n_records: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceDataset {
    pub metadata: DatasetMeta,
    pub records: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: DatasetMeta,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Header {
            metadata: self.metadata.clone(),
        })?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_lines(f.lines().map(|l| l.map_err(Error::from)))
    }

    fn read_lines(mut lines: impl Iterator<Item = Result<String>>) -> Result<Self> {
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::config("dataset file is empty")),
        };
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(PreferenceDataset {
            metadata: header.metadata,
            records,
        })
    }
}

fn same_pair(a: &PreferenceTriple, sa: &[f64], sb: &[f64]) -> bool {
    (a.sa == sa && a.sb == sb) || (a.sa == sb && a.sb == sa)
}

/// Context-augmented dataset.
///
/// Records come in groups of `m` that share one user and one target; each
/// copy draws `n` context triples from the user's pool of `k`, which never
/// contains the target pair. Group `g` uses the stream `rng.fork(g)`.
pub fn build_dataset(
    world: &AnnotatorWorld,
    n_records: usize,
    n: usize,
    k: usize,
    m: usize,
    labeling_mode: Option<LabelingMode>,
    rng: &SeededRng,
) -> Result<PreferenceDataset> {
    if n == 0 || n > k {
        return Err(Error::config(format!("context size must satisfy 1 <= N <= K, got N={n} K={k}")));
    }
    if m == 0 {
        return Err(Error::config("M must be at least 1"));
    }
    let mut records = Vec::with_capacity(n_records);
    let mut group = 0u64;
    while records.len() < n_records {
        let mut g = rng.fork(group);
        group += 1;
        let user = world.sample_user(&mut g);
        let mut ann = world.annotator(user)?.clone();
        if let Some(mode) = labeling_mode {
            ann = ann.with_mode(mode);
        }
        let (ta, tb) = world.sample_pair(&mut g)?;
        let label = annotate(&ann, &ta, &tb, &mut g)?;
        let target = PreferenceTriple::new(ta, tb, label);

        let mut pool = Vec::with_capacity(k);
        let mut tries = 0;
        while pool.len() < k {
            tries += 1;
            if tries > MAX_SAMPLER_TRIES * k.max(1) {
                return Err(Error::config("world state sampler exhausted while filling a context pool"));
            }
            let (a, b) = world.sample_context_pair(&mut g)?;
            if same_pair(&target, &a, &b) {
                continue;
            }
            let y = annotate(&ann, &a, &b, &mut g)?;
            pool.push(PreferenceTriple::new(a, b, y));
        }

        for _ in 0..m {
            if records.len() == n_records {
                break;
            }
            let ctx = g.sample_indices(k, n).into_iter().map(|i| pool[i].clone()).collect();
            records.push(Record {
                user_id: user,
                ctx,
                target: target.clone(),
            });
        }
    }
    Ok(PreferenceDataset {
        metadata: DatasetMeta {
            world: world.params().clone(),
            seed: rng.seed(),
            n,
            k,
            m,
            labeling_mode,
            noise_rate: 0.0,
            noise_scope: None,
            n_records,
        },
        records,
    })
}

/// Flips each in-scope label independently with probability `rate`.
/// Record `i` uses the stream `rng.fork(i)`.
pub fn inject_label_noise(
    ds: &PreferenceDataset,
    rate: f64,
    scope: NoiseScope,
    rng: &SeededRng,
) -> Result<PreferenceDataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!("noise rate must lie in [0, 1], got {rate}")));
    }
    let mut out = ds.clone();
    for (i, r) in out.records.iter_mut().enumerate() {
        let mut g = rng.fork(i as u64);
        for t in r.ctx.iter_mut() {
            if g.bernoulli(rate) {
                t.label = !t.label;
            }
        }
        if scope == NoiseScope::All && g.bernoulli(rate) {
            r.target.label = !r.target.label;
        }
    }
    out.metadata.noise_rate = rate;
    out.metadata.noise_scope = Some(scope);
    Ok(out)
}
