//! Histogram relative entropy between two sets of latent encodings.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::CodecError;

/// Histogram range after per-feature rescaling.
pub const RESCALE_RANGE: (f64, f64) = (-2.0, 2.0);
/// Floor applied to empty `Q` bins under `P` support.
pub const Q_FLOOR: f64 = 1e-9;

/// `n x dim` matrix of latent means.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingDataset {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EncodingDataset {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CodecError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CodecError::Config("ragged encoding rows".into()));
        }
        Ok(Self {
            dim,
            values: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|j| format!("z{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.values.chunks(self.dim) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, CodecError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let dim = lines.next().map_or(0, |h| h.split(',').count());
        let mut values = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| CodecError::Format(format!("row {}: {e}", i + 1)))?;
            if row.len() != dim {
                return Err(CodecError::Format(format!("row {} has {} columns", i + 1, row.len())));
            }
            values.extend(row);
        }
        Ok(Self { dim, values })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReResult {
    pub per_feature: Vec<f64>,
    pub mean: f64,
    pub bin_count: usize,
    pub range: (f64, f64),
}

/// Linear map of the column's min/max onto the histogram range. Constant columns map to 0.
fn rescale(col: &[f64]) -> Vec<f64> {
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = RESCALE_RANGE;
    if hi - lo <= 0.0 {
        return vec![(a + b) / 2.0; col.len()];
    }
    col.iter().map(|&v| a + (v - lo) / (hi - lo) * (b - a)).collect()
}

fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let (a, b) = RESCALE_RANGE;
    let mut counts = vec![0.0; bins];
    for &v in values {
        let k = (((v - a) / (b - a)) * bins as f64).floor();
        let k = (k.max(0.0) as usize).min(bins - 1);
        counts[k] += 1.0;
    }
    let n = values.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// `sum_{P > 0} P ln(P / max(Q, eps))`.
pub fn discrete_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(Q_FLOOR)).ln())
        .sum()
}

/// Relative entropy with `ceil(sqrt(N_P))` bins.
pub fn relative_entropy(p: &EncodingDataset, q: &EncodingDataset) -> Result<ReResult, CodecError> {
    let bins = (p.len() as f64).sqrt().ceil() as usize;
    relative_entropy_with_bins(p, q, bins)
}

pub fn relative_entropy_with_bins(
    p: &EncodingDataset,
    q: &EncodingDataset,
    bins: usize,
) -> Result<ReResult, CodecError> {
    if p.dim != q.dim {
        return Err(CodecError::DimMismatch {
            left: p.dim,
            right: q.dim,
        });
    }
    for n in [p.len(), q.len()] {
        if n < 4 {
            return Err(CodecError::TooFewSamples(n));
        }
    }
    if bins == 0 {
        return Err(CodecError::Config("bin count must be positive".into()));
    }
    let per_feature: Vec<f64> = (0..p.dim)
        .map(|j| {
            let hp = histogram(&rescale(&p.column(j)), bins);
            let hq = histogram(&rescale(&q.column(j)), bins);
            discrete_kl(&hp, &hq)
        })
        .collect();
    let mean = per_feature.iter().sum::<f64>() / per_feature.len().max(1) as f64;
    Ok(ReResult {
        per_feature,
        mean,
        bin_count: bins,
        range: RESCALE_RANGE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(col: &[f64]) -> EncodingDataset {
        EncodingDataset {
            dim: 1,
            values: col.to_vec(),
        }
    }

    #[test]
    fn two_bin_hand_case() {
        let p = single(&[0., 0., 0., 0., 0., 0., 0., 0., 1., 1.]);
        let q = single(&[0., 0., 0., 0., 0., 1., 1., 1., 1., 1.]);
        let r = relative_entropy_with_bins(&p, &q, 2).unwrap();
        let want = 0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln();
        assert!((r.mean - want).abs() < 1e-12);
        assert!((r.mean - 0.1927).abs() < 1e-4);
    }

    #[test]
    fn default_bins_follow_sample_count() {
        let p = EncodingDataset {
            dim: 2,
            values: (0..4000).map(|i| (i as f64 * 0.37).sin()).collect(),
        };
        assert_eq!(relative_entropy(&p, &p).unwrap().bin_count, 45);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = single(&[0.0, 1.0, 2.0]);
        assert!(matches!(relative_entropy(&a, &a), Err(CodecError::TooFewSamples(3))));
        let b = EncodingDataset {
            dim: 2,
            values: vec![0.0; 10],
        };
        let c = single(&[0.0; 10]);
        assert!(matches!(relative_entropy(&b, &c), Err(CodecError::DimMismatch { .. })));
    }

    #[test]
    fn csv_roundtrip() {
        let e = EncodingDataset {
            dim: 3,
            values: vec![0.1, -2.5, 3.0e-7, 1.0, 2.0, 3.0],
        };
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert_eq!(EncodingDataset::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), e);
    }

    fn dataset(dim: usize) -> impl Strategy<Value = EncodingDataset> {
        (4usize..60).prop_flat_map(move |n| {
            prop::collection::vec(-50.0f64..50.0, n * dim).prop_map(move |values| EncodingDataset { dim, values })
        })
    }

    proptest! {
        #[test]
        fn identity_is_zero(p in dataset(3)) {
            prop_assert!(relative_entropy(&p, &p).unwrap().mean.abs() <= 1e-12);
        }

        #[test]
        fn nonnegative(p in dataset(2), q in dataset(2)) {
            let r = relative_entropy(&p, &q).unwrap();
            prop_assert!(r.mean >= -1e-12);
            prop_assert!(r.per_feature.iter().all(|&v| v >= -1e-12));
        }

        #[test]
        fn positive_affine_invariance(p in dataset(1), q in dataset(1), a in 0.01f64..100.0, b in -10.0f64..10.0) {
            let moved = EncodingDataset { dim: 1, values: p.values.iter().map(|v| a * v + b).collect() };
            let r0 = relative_entropy(&p, &q).unwrap().mean;
            let r1 = relative_entropy(&moved, &q).unwrap().mean;
            prop_assert!((r0 - r1).abs() < 1e-9, "{} vs {}", r0, r1);
        }
    }
}
