//! Dataset ingestion: svmlight/libsvm text format (plain or gzip), label
//! normalization to {−1, +1}, seeded shuffling and train/test splitting.
//!
//! All stochastic behavior flows from one root seed through ChaCha8; epoch
//! numbers select independent RNG streams, permutations use Fisher–Yates
//! (`rand`'s `shuffle`).

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::SparseVector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid split fraction {fraction} for {n} points: both parts must be nonempty")]
    InvalidFraction { fraction: f64, n: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, reason: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        reason: reason.into(),
    }
}

/// A labeled binary-classification dataset. Labels are exactly −1 or +1.
#[derive(Debug, Clone)]
pub struct Dataset {
    points: Vec<SparseVector>,
    labels: Vec<i8>,
    max_feature_index: u32,
}

impl Dataset {
    pub fn new(points: Vec<SparseVector>, labels: Vec<i8>) -> Self {
        assert_eq!(points.len(), labels.len());
        assert!(!points.is_empty(), "dataset must hold at least one point");
        assert!(labels.iter().all(|&y| y == -1 || y == 1));
        let max_feature_index = points
            .iter()
            .filter_map(|p| p.max_index())
            .max()
            .unwrap_or(0);
        Dataset {
            points,
            labels,
            max_feature_index,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &SparseVector {
        &self.points[i]
    }

    pub fn label(&self, i: usize) -> i8 {
        self.labels[i]
    }

    pub fn points(&self) -> &[SparseVector] {
        &self.points
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn max_feature_index(&self) -> u32 {
        self.max_feature_index
    }

    /// Writes the dataset back out in svmlight format (`<label> <i>:<v> ...`).
    pub fn write_svmlight<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (p, &y) in self.points.iter().zip(&self.labels) {
            write!(w, "{}", if y > 0 { "+1" } else { "-1" })?;
            for &(i, v) in p.entries() {
                write!(w, " {}:{}", i, v)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Per-feature [lo, hi] ranges for optional min-max scaling, with
    /// `lo = min(0, min v)` and `hi = max(0, max v)` over stored entries
    /// (the implicit zeros of absent entries count as observed zeros).
    pub fn min_max_ranges(&self) -> FeatureRanges {
        let dim = self.max_feature_index as usize + 1;
        let mut lo = vec![0.0f64; dim];
        let mut hi = vec![0.0f64; dim];
        for p in &self.points {
            for &(i, v) in p.entries() {
                lo[i as usize] = lo[i as usize].min(v);
                hi[i as usize] = hi[i as usize].max(v);
            }
        }
        FeatureRanges { lo, hi }
    }

    /// Optional [0,1] min-max scaling of stored feature values (off by
    /// default in the CLI): `v ↦ (v − lo)/(hi − lo)`. Applied to stored
    /// entries only, so it is exact whenever feature minima are 0 (the
    /// common case for these benchmark sets); features unseen in `ranges`
    /// are left unchanged.
    pub fn apply_min_max(&mut self, ranges: &FeatureRanges) {
        for p in &mut self.points {
            let scaled = p
                .entries()
                .iter()
                .map(|&(i, v)| {
                    let Some((&l, &h)) = ranges.lo.get(i as usize).zip(ranges.hi.get(i as usize))
                    else {
                        return (i, v);
                    };
                    let range = h - l;
                    if range > 0.0 {
                        (i, (v - l) / range)
                    } else {
                        (i, v)
                    }
                })
                .collect();
            *p = SparseVector::from_sorted_pairs(scaled);
        }
    }
}

/// Per-feature value ranges computed on a training set.
#[derive(Debug, Clone)]
pub struct FeatureRanges {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Parses an svmlight/libsvm byte stream. Gzip input is detected by its
/// magic bytes and decompressed transparently.
///
/// Each nonempty, non-comment line is `<label> <idx>:<value> ...` with
/// strictly increasing positive indices. Raw labels are mapped to ±1: kept
/// when already ±1, otherwise the numerically larger of two distinct raw
/// labels becomes +1. More than two distinct raw labels is an error.
pub fn parse_svmlight<R: Read>(mut reader: R) -> Result<Dataset, DataError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..]).read_to_end(&mut out)?;
        bytes = out;
    }
    let text = String::from_utf8(bytes)
        .map_err(|e| parse_err(0, format!("input is not valid UTF-8: {e}")))?;

    let mut points = Vec::new();
    let mut raw_labels = Vec::new();
    // distinct raw labels with the line that introduced them
    let mut distinct: Vec<(f64, usize)> = Vec::new();

    for (lineno, raw_line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let mut tokens = line.split_whitespace();
        let label_tok = match tokens.next() {
            Some(t) => t,
            None => continue, // blank or comment-only line
        };
        let raw_label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno, format!("unmappable label '{label_tok}'")))?;
        if raw_label.is_nan() {
            return Err(parse_err(lineno, "label is NaN"));
        }

        let mut pairs: Vec<(u32, f64)> = Vec::new();
        let mut last_idx = 0u32;
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("malformed token '{tok}'")))?;
            let idx: u32 = idx_s
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed feature index '{idx_s}'")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "feature indices start at 1"));
            }
            if idx <= last_idx {
                return Err(parse_err(
                    lineno,
                    format!("feature index {idx} not strictly increasing"),
                ));
            }
            let val: f64 = val_s
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed feature value '{val_s}'")))?;
            if !val.is_finite() {
                return Err(parse_err(
                    lineno,
                    format!("non-finite feature value '{val_s}'"),
                ));
            }
            last_idx = idx;
            pairs.push((idx, val));
        }

        if !distinct.iter().any(|&(v, _)| v == raw_label) {
            distinct.push((raw_label, lineno));
            if distinct.len() > 2 {
                return Err(parse_err(
                    lineno,
                    format!("more than two distinct labels (saw {} here)", raw_label),
                ));
            }
        }
        raw_labels.push(raw_label);
        points.push(SparseVector::from_sorted_pairs(pairs));
    }

    if points.is_empty() {
        return Err(parse_err(0, "empty input: no data lines"));
    }

    let already_signed = distinct.iter().all(|&(v, _)| v == 1.0 || v == -1.0);
    let positive_raw = if already_signed {
        1.0
    } else if distinct.len() == 2 {
        distinct[0].0.max(distinct[1].0)
    } else {
        // single distinct non-±1 label: map it to +1
        distinct[0].0
    };
    let labels = raw_labels
        .into_iter()
        .map(|v| if v == positive_raw { 1 } else { -1 })
        .collect();

    Ok(Dataset::new(points, labels))
}

/// Opens and parses a dataset file (plain or gzip svmlight).
pub fn load_svmlight(path: &Path) -> Result<Dataset, DataError> {
    parse_svmlight(File::open(path)?)
}

/// A uniformly distributed permutation of `0..n`, deterministic given
/// `(seed, epoch)`: ChaCha8 seeded with `seed`, stream `epoch`.
pub fn shuffled_indices(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Deterministic disjoint split; the train part takes `floor(fraction·n)`
/// points of a seeded shuffle, the test part the rest.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let n = dataset.len();
    let invalid = DataError::InvalidFraction { fraction, n };
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid);
    }
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(invalid);
    }
    let order = shuffled_indices(n, 0, seed);
    let take = |range: &[usize]| {
        Dataset::new(
            range.iter().map(|&i| dataset.point(i).clone()).collect(),
            range.iter().map(|&i| dataset.label(i)).collect(),
        )
    };
    Ok((take(&order[..n_train]), take(&order[n_train..])))
}
