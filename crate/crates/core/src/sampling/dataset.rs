use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::triplets::NA;

use super::Bag;

/// Version tag written on every dataset record.
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeKind {
    Type1,
    Type2,
    Mix,
}

impl NegativeKind {
    pub const ALL: [NegativeKind; 3] = [NegativeKind::Type1, NegativeKind::Type2, NegativeKind::Mix];

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeKind::Type1 => "type1",
            NegativeKind::Type2 => "type2",
            NegativeKind::Mix => "mix",
        }
    }
}

impl std::fmt::Display for NegativeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NegativeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type1" => Ok(NegativeKind::Type1),
            "type2" => Ok(NegativeKind::Type2),
            "mix" => Ok(NegativeKind::Mix),
            other => Err(Error::config("kind", format!("unknown negative kind `{other}`"))),
        }
    }
}

/// Labeled bags with a pair-level train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    pub splits: Vec<Split>,
    pub negative_kind: NegativeKind,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Meta {
        format_version: u32,
        negative_kind: NegativeKind,
        seed: u64,
        bags: usize,
    },
    Bag {
        format_version: u32,
        split: Split,
        #[serde(flatten)]
        bag: Bag,
    },
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Bag> {
        self.bags
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(b, _)| b)
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }

    /// (head, label, tail) keys of the positive bags.
    pub fn positive_keys(&self) -> BTreeSet<(String, String, String)> {
        self.bags
            .iter()
            .filter(|b| !b.is_negative())
            .map(Bag::key)
            .collect()
    }

    /// Unordered entity pairs present in a split.
    pub fn pairs(&self, split: Split) -> BTreeSet<(String, String)> {
        self.split(split).map(Bag::pair_key).collect()
    }

    /// JSONL: a `meta` record followed by one `bag` record per bag.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        serde_json::to_writer(
            &mut buf,
            &Record::Meta {
                format_version: DATASET_FORMAT_VERSION,
                negative_kind: self.negative_kind,
                seed: self.seed,
                bags: self.bags.len(),
            },
        )?;
        buf.push(b'\n');
        for (bag, split) in self.bags.iter().zip(&self.splits) {
            serde_json::to_writer(
                &mut buf,
                &Record::Bag {
                    format_version: DATASET_FORMAT_VERSION,
                    split: *split,
                    bag: bag.clone(),
                },
            )?;
            buf.push(b'\n');
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_jsonl()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut meta = None;
        let mut bags = Vec::new();
        let mut splits = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            let version = match &rec {
                Record::Meta { format_version, .. } | Record::Bag { format_version, .. } => *format_version,
            };
            if version != DATASET_FORMAT_VERSION {
                return Err(Error::parse(path, i + 1, format!("unsupported format_version {version}")));
            }
            match rec {
                Record::Meta {
                    negative_kind, seed, ..
                } => meta = Some((negative_kind, seed)),
                Record::Bag { split, bag, .. } => {
                    splits.push(split);
                    bags.push(bag);
                }
            }
        }
        let (negative_kind, seed) = meta.ok_or_else(|| Error::parse(path, 1, "missing meta record"))?;
        Ok(Dataset {
            bags,
            splits,
            negative_kind,
            seed,
        })
    }
}

fn draw(pool: &[Bag], n: usize, rng: &mut ChaCha8Rng) -> Vec<Bag> {
    let mut idx = sample(rng, pool.len(), n.min(pool.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// Smallest negative count keeping positive:negative within 1.1.
fn min_negatives(n_pos: usize) -> usize {
    (n_pos as f64 / 1.1).ceil() as usize
}

/// Draws negatives to match the positives roughly 1:1 and splits at the
/// entity-pair level so no pair lands in both splits.
///
/// Positive pairs are split first using only the seed and the positive set,
/// so datasets built from the same positives and seed share their positive
/// split whatever the negatives are.
pub fn assemble_datasets(
    positives: &[Bag],
    type1: &[Bag],
    type2: &[Bag],
    kind: NegativeKind,
    split_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&split_fraction) {
        return Err(Error::config("split_fraction", "must lie in [0, 1]"));
    }
    let n_pos = positives.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_6761_7469_7665);
    let check = |available: usize, needed: usize| {
        if available < needed {
            Err(Error::InsufficientNegatives { needed, available })
        } else {
            Ok(())
        }
    };
    let negatives = match kind {
        NegativeKind::Type1 => {
            check(type1.len(), min_negatives(n_pos))?;
            draw(type1, n_pos, &mut rng)
        }
        NegativeKind::Type2 => {
            check(type2.len(), min_negatives(n_pos))?;
            draw(type2, n_pos, &mut rng)
        }
        NegativeKind::Mix => {
            let half1 = n_pos / 2;
            let half2 = n_pos - half1;
            check(type1.len(), half1)?;
            check(type2.len(), half2)?;
            let mut v = draw(type1, half1, &mut rng);
            v.extend(draw(type2, half2, &mut rng));
            v
        }
    };

    let mut bags: Vec<Bag> = positives.to_vec();
    bags.extend(negatives);
    let splits = split_by_pair(&bags, split_fraction, seed);
    Ok(Dataset {
        bags,
        splits,
        negative_kind: kind,
        seed,
    })
}

fn split_by_pair(bags: &[Bag], train_fraction: f64, seed: u64) -> Vec<Split> {
    let mut class_totals: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, b) in bags.iter().enumerate() {
        *class_totals.entry(b.label.as_str()).or_default() += 1;
        groups.entry(b.pair_key()).or_default().push(i);
    }
    let targets: BTreeMap<&str, usize> = class_totals
        .iter()
        .map(|(&c, &n)| (c, (n as f64 * (1.0 - train_fraction)).round() as usize))
        .collect();

    let (mut positive_groups, mut negative_groups): (Vec<_>, Vec<_>) = groups
        .into_values()
        .partition(|g| g.iter().any(|&i| bags[i].label != NA));

    let mut splits = vec![Split::Train; bags.len()];
    let mut test_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut assign = |groups: &mut Vec<Vec<usize>>, rng: &mut ChaCha8Rng, only_positive: bool| {
        groups.shuffle(rng);
        for g in groups.iter() {
            let mut need: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in g {
                let label = bags[i].label.as_str();
                if only_positive && label == NA {
                    continue;
                }
                *need.entry(label).or_default() += 1;
            }
            let fits = need
                .iter()
                .all(|(c, n)| test_counts.get(c).copied().unwrap_or(0) + n <= targets[c]);
            if fits {
                for &i in g {
                    splits[i] = Split::Test;
                    *test_counts.entry(bags[i].label.as_str()).or_default() += 1;
                }
            }
        }
    };
    assign(&mut positive_groups, &mut ChaCha8Rng::seed_from_u64(seed), true);
    assign(
        &mut negative_groups,
        &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        false,
    );
    splits
}
