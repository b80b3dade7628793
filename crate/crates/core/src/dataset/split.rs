//! Seeded, label-stratified train / val / test split.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetEntry, Split};
use crate::prompts::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// `splits.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub counts: SplitCounts,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn split_of(&self) -> BTreeMap<&str, Split> {
        let mut out = BTreeMap::new();
        for (ids, s) in [
            (&self.train, Split::Train),
            (&self.val, Split::Val),
            (&self.test, Split::Test),
        ] {
            for id in ids {
                out.insert(id.as_str(), s);
            }
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("{0} entries are too few: every split needs at least one")]
    TooFew(usize),
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
}

/// Train 64 %, val 16 % (each rounded half up), test takes the rest.
pub fn split_sizes(n: usize) -> SplitCounts {
    let train = (64 * n + 50) / 100;
    let val = (16 * n + 50) / 100;
    SplitCounts {
        train,
        val,
        test: n - train - val,
    }
}

/// Entries are ordered by id, each label class is shuffled with the seed,
/// and the classes are interleaved in proportion before cutting, so every
/// split has nearly the corpus label ratio.
pub fn split(entries: &[DatasetEntry], seed: u64) -> Result<SplitManifest, SplitError> {
    let n = entries.len();
    let counts = split_sizes(n);
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(SplitError::TooFew(n));
    }
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.id.as_str()) {
            return Err(SplitError::DuplicateId(e.id.clone()));
        }
    }

    let mut sorted: Vec<&DatasetEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vulnerable: Vec<&str> = sorted
        .iter()
        .filter(|e| e.label == Label::Vulnerable)
        .map(|e| e.id.as_str())
        .collect();
    let mut safe: Vec<&str> = sorted
        .iter()
        .filter(|e| e.label == Label::Safe)
        .map(|e| e.id.as_str())
        .collect();
    vulnerable.shuffle(&mut rng);
    safe.shuffle(&mut rng);

    // after i+1 picks, floor((i+1)·nv/n) of them are vulnerable
    let nv = vulnerable.len();
    let (mut vi, mut si) = (0, 0);
    let mut order = Vec::with_capacity(n);
    for i in 0..n {
        if vi < (i + 1) * nv / n {
            order.push(vulnerable[vi]);
            vi += 1;
        } else {
            order.push(safe[si]);
            si += 1;
        }
    }

    let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let (train, rest) = order.split_at(counts.train);
    let (val, test) = rest.split_at(counts.val);
    Ok(SplitManifest {
        seed,
        counts,
        train: own(train),
        val: own(val),
        test: own(test),
    })
}

/// Writes each entry's assigned split.
pub fn apply_split(entries: &mut [DatasetEntry], manifest: &SplitManifest) {
    let by_id = manifest.split_of();
    for e in entries {
        e.split = by_id.get(e.id.as_str()).copied().unwrap_or(Split::Unassigned);
    }
}

/// Expected bookkeeping of a corpus, checked before and after splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub name: String,
    pub positives: usize,
    pub negatives: usize,
    pub total: usize,
    pub seed: u64,
    pub splits: SplitCounts,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("manifest is inconsistent: {0}")]
    Inconsistent(String),
    #[error("dataset does not match manifest: {0}")]
    Mismatch(String),
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        let bad = |m: String| Err(ManifestError::Inconsistent(m));
        if self.positives + self.negatives != self.total {
            return bad(format!("{} + {} != {}", self.positives, self.negatives, self.total));
        }
        if self.splits.total() != self.total {
            return bad(format!(
                "split sizes sum to {}, not {}",
                self.splits.total(),
                self.total
            ));
        }
        if self.splits != split_sizes(self.total) {
            return bad(format!("split sizes {:?} disagree with the ratio rule", self.splits));
        }
        Ok(())
    }

    pub fn check_entries(&self, entries: &[DatasetEntry]) -> Result<(), ManifestError> {
        self.validate()?;
        let pos = entries.iter().filter(|e| e.label == Label::Vulnerable).count();
        let neg = entries.len() - pos;
        if (pos, neg) != (self.positives, self.negatives) {
            return Err(ManifestError::Mismatch(format!(
                "expected {} positives / {} negatives, found {pos} / {neg}",
                self.positives, self.negatives
            )));
        }
        Ok(())
    }

    pub fn check_split(&self, manifest: &SplitManifest) -> Result<(), ManifestError> {
        if manifest.counts != self.splits {
            return Err(ManifestError::Mismatch(format!(
                "split sizes {:?}, expected {:?}",
                manifest.counts, self.splits
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::EntryProvenance;
    use super::*;

    fn corpus(pos: usize, neg: usize) -> Vec<DatasetEntry> {
        (0..pos + neg)
            .map(|i| DatasetEntry {
                id: format!("e{i:05}"),
                code: format!("function f{i}() public {{}}"),
                context: None,
                label: if i < pos { Label::Vulnerable } else { Label::Safe },
                reason: if i < pos { "r".into() } else { String::new() },
                provenance: if i < pos {
                    EntryProvenance::AuditReport
                } else {
                    EntryProvenance::DerivedNegative
                },
                source_ref: "s".into(),
                split: Split::Unassigned,
                enhancement: None,
            })
            .collect()
    }

    #[test]
    fn ratio_rule() {
        assert_eq!(
            split_sizes(3544),
            SplitCounts {
                train: 2268,
                val: 567,
                test: 709
            }
        );
        assert_eq!(
            split_sizes(10),
            SplitCounts {
                train: 6,
                val: 2,
                test: 2
            }
        );
        assert_eq!(split(&corpus(1, 1), 1), Err(SplitError::TooFew(2)));
    }

    #[test]
    fn deterministic_partition() {
        let c = corpus(6, 4);
        let a = split(&c, 7).unwrap();
        assert_eq!(a, split(&c, 7).unwrap());
        let mut reversed = c.clone();
        reversed.reverse();
        assert_eq!(a, split(&reversed, 7).unwrap());
        let mut all: Vec<&String> = a.train.iter().chain(&a.val).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn apply_marks_entries() {
        let mut c = corpus(6, 4);
        let m = split(&c, 3).unwrap();
        apply_split(&mut c, &m);
        assert_eq!(c.iter().filter(|e| e.split == Split::Val).count(), 2);
        assert!(c.iter().all(|e| e.split != Split::Unassigned));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut c = corpus(6, 4);
        c[1].id = c[0].id.clone();
        assert!(matches!(split(&c, 1), Err(SplitError::DuplicateId(_))));
    }

    #[test]
    fn manifest_checks() {
        let m = CorpusManifest {
            name: "toy".into(),
            positives: 6,
            negatives: 4,
            total: 10,
            seed: 1,
            splits: SplitCounts {
                train: 6,
                val: 2,
                test: 2,
            },
        };
        m.check_entries(&corpus(6, 4)).unwrap();
        assert!(matches!(
            m.check_entries(&corpus(5, 5)),
            Err(ManifestError::Mismatch(_))
        ));
        let broken = CorpusManifest { total: 11, ..m.clone() };
        assert!(matches!(broken.validate(), Err(ManifestError::Inconsistent(_))));
    }
}
