//! Fixed, seeded verification pair sets and the pair-list file.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FaceSample;
use crate::error::{Error, Result};

/// Two dataset entries (indices into the sample list) and whether they
/// show the same subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerificationPair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

impl VerificationPair {
    pub fn new(samples: &[FaceSample], a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::domain("verification_pair", "a pair needs two distinct entries"));
        }
        let (sa, sb) = match (samples.get(a), samples.get(b)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::domain("verification_pair", format!("index {a} or {b} out of range"))),
        };
        Ok(Self {
            a,
            b,
            same: sa.subject_id == sb.subject_id,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            a: self.b,
            b: self.a,
            same: self.same,
        }
    }

    fn key(&self) -> (usize, usize) {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

fn by_subject(samples: &[FaceSample]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        m.entry(s.subject_id).or_default().push(i);
    }
    m
}

/// Draws `count` distinct pairs with `draw`, falling back to enumerating the
/// whole population when it is small relative to the request.
fn draw_distinct(
    rng: &mut ChaCha8Rng,
    count: usize,
    capacity: usize,
    seen: &mut HashSet<(usize, usize)>,
    enumerate: impl Fn() -> Vec<(usize, usize)>,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> (usize, usize),
) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(count);
    if capacity <= 4 * count {
        let mut all = enumerate();
        all.shuffle(rng);
        out.extend(all.into_iter().take(count));
        seen.extend(out.iter().copied());
        return out;
    }
    while out.len() < count {
        let (a, b) = draw(rng);
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            out.push((a, b));
        }
    }
    out
}

/// Seeded list of `n_pairs` distinct pairs of which exactly
/// `round(n_pairs · balance)` show the same subject.
pub fn build_pair_set(
    samples: &[FaceSample],
    n_pairs: usize,
    balance: f64,
    seed: u64,
) -> Result<Vec<VerificationPair>> {
    if !(0.0..=1.0).contains(&balance) {
        return Err(Error::domain("build_pair_set", format!("balance {balance} outside [0, 1]")));
    }
    let groups = by_subject(samples);
    if groups.len() < 2 {
        return Err(Error::domain(
            "build_pair_set",
            format!("need at least 2 subjects, found {}", groups.len()),
        ));
    }
    let n_pos = (n_pairs as f64 * balance).round() as usize;
    let n_neg = n_pairs - n_pos;

    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let pos_capacity: usize = sizes.iter().map(|k| k * k.saturating_sub(1) / 2).sum();
    let total = samples.len();
    let neg_capacity = (total * total - sizes.iter().map(|k| k * k).sum::<usize>()) / 2;
    if n_pos > pos_capacity || n_neg > neg_capacity {
        return Err(Error::domain(
            "build_pair_set",
            format!(
                "{n_pos} same-subject / {n_neg} cross-subject pairs requested, only {pos_capacity} / {neg_capacity} exist"
            ),
        ));
    }

    let lists: Vec<&Vec<usize>> = groups.values().collect();
    let multi: Vec<&Vec<usize>> = lists.iter().copied().filter(|l| l.len() >= 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();

    let pos = draw_distinct(
        &mut rng,
        n_pos,
        pos_capacity,
        &mut seen,
        || {
            let mut v = Vec::new();
            for l in &multi {
                for i in 0..l.len() {
                    for j in i + 1..l.len() {
                        v.push((l[i], l[j]));
                    }
                }
            }
            v
        },
        |rng| {
            // weight subjects by their number of pairs to sample pairs uniformly
            let mut t = rng.random_range(0..pos_capacity);
            let l = multi
                .iter()
                .find(|l| {
                    let c = l.len() * (l.len() - 1) / 2;
                    if t < c {
                        true
                    } else {
                        t -= c;
                        false
                    }
                })
                .expect("t < capacity");
            let i = rng.random_range(0..l.len());
            let mut j = rng.random_range(0..l.len() - 1);
            if j >= i {
                j += 1;
            }
            (l[i], l[j])
        },
    );
    let neg = draw_distinct(
        &mut rng,
        n_neg,
        neg_capacity,
        &mut seen,
        || {
            let mut v = Vec::new();
            for (x, la) in lists.iter().enumerate() {
                for lb in &lists[x + 1..] {
                    for &a in la.iter() {
                        for &b in lb.iter() {
                            v.push((a, b));
                        }
                    }
                }
            }
            v
        },
        |rng| loop {
            let a = rng.random_range(0..total);
            let b = rng.random_range(0..total);
            if samples[a].subject_id != samples[b].subject_id {
                break (a, b);
            }
        },
    );

    let mut pairs: Vec<VerificationPair> = pos
        .into_iter()
        .map(|(a, b)| VerificationPair { a, b, same: true })
        .chain(neg.into_iter().map(|(a, b)| VerificationPair { a, b, same: false }))
        .collect();
    pairs.shuffle(&mut rng);
    for p in &mut pairs {
        if rng.random::<bool>() {
            *p = p.swapped();
        }
    }
    debug_assert_eq!(pairs.iter().map(|p| p.key()).collect::<HashSet<_>>().len(), pairs.len());
    Ok(pairs)
}

/// One row of a pair-list file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub path_a: String,
    pub path_b: String,
    #[serde(with = "bit")]
    pub label: bool,
}

mod bit {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

pub fn write_pair_list(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pair_list(path: &Path) -> Result<Vec<PairRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<Result<Vec<PairRecord>, _>>()?;
    if records.is_empty() {
        return Err(Error::format(path, "pair list is empty"));
    }
    Ok(records)
}
