//! Token classification error, micro-averaged ROC, and evaluation reports.

use std::cmp::Ordering;

use thiserror::Error;

use crate::dataset::Example;
use crate::decode::{sample_beam, sample_greedy, ImageConditioned, NextToken};
use crate::dsl::Vocabulary;
use crate::model::{Model, ModelError};
use crate::tensor::Real;
use crate::train::{build_windows, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("expected sequence is empty")]
    EmptyExpected,
    #[error("ROC needs both positive and negative labels")]
    DegenerateLabels,
    #[error("no predictions to score")]
    NoPredictions,
    #[error("target {target} outside a distribution of {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Positionwise mismatches over the common prefix plus the length
/// difference, normalized by the expected length.
pub fn token_error<T: PartialEq>(generated: &[T], expected: &[T]) -> Result<f64, EvalError> {
    if expected.is_empty() {
        return Err(EvalError::EmptyExpected);
    }
    let mismatches = generated
        .iter()
        .zip(expected)
        .filter(|(g, e)| g != e)
        .count();
    let diff = generated.len().abs_diff(expected.len());
    Ok((mismatches + diff) as f64 / expected.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub area: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }
}

/// Micro-averaged ROC: every (prediction, class) pair is one scored
/// example, positive iff the class is the target. Tied scores move the
/// curve diagonally; area is by the trapezoid rule.
pub fn roc_micro_average(
    distributions: &[Vec<f64>],
    targets: &[usize],
) -> Result<RocCurve, EvalError> {
    if distributions.is_empty() || distributions.len() != targets.len() {
        return Err(EvalError::NoPredictions);
    }
    let mut scored = Vec::new();
    for (y, &t) in distributions.iter().zip(targets) {
        if t >= y.len() {
            return Err(EvalError::BadTarget {
                target: t,
                classes: y.len(),
            });
        }
        scored.extend(y.iter().enumerate().map(|(c, &s)| (s, c == t)));
    }
    let pos = scored.iter().filter(|s| s.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("seeded");
        let p = RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        };
        area += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, area })
}

/// Per-file outcome of free-running decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct FileResult {
    pub id: usize,
    pub expected_len: usize,
    pub generated_len: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub files: Vec<FileResult>,
    pub mean_error: f64,
}

impl EvalReport {
    pub fn from_files(files: Vec<FileResult>) -> Self {
        let mean_error = if files.is_empty() {
            0.0
        } else {
            files.iter().map(|f| f.error).sum::<f64>() / files.len() as f64
        };
        Self { files, mean_error }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("file_id,expected_len,generated_len,error\n");
        for f in &self.files {
            out.push_str(&format!(
                "{:04},{},{},{}\n",
                f.id, f.expected_len, f.generated_len, f.error
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "files={} mean_token_error={:.6}",
            self.files.len(),
            self.mean_error
        )
    }
}

/// Decodes every example (greedy when `beam` is `None` or 1) and scores it
/// against its `START`-free, `END`-terminated token sequence.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    examples: &[Example],
    vocab: &Vocabulary,
    beam: Option<usize>,
    max_len: usize,
) -> Result<EvalReport, EvalError> {
    use rayon::prelude::*;
    let files = examples
        .par_iter()
        .map(|ex| {
            let src = ImageConditioned::new(model, &ex.image, vocab)?;
            let generated = match beam {
                Some(k) if k > 1 => sample_beam(&src, k, max_len)?.tokens,
                _ => sample_greedy(&src, max_len)?,
            };
            let mut expected = crate::train::framed_indices(&ex.tokens, vocab)?;
            expected.remove(0);
            Ok(FileResult {
                id: ex.id,
                expected_len: expected.len(),
                generated_len: generated.len(),
                error: token_error(&generated, &expected)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport::from_files(files))
}

/// Teacher-forced next-token distributions and targets over every window.
pub fn teacher_forced<T: Real>(
    model: &Model<T>,
    examples: &[Example],
    vocab: &Vocabulary,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), EvalError> {
    use rayon::prelude::*;
    let per_file = examples
        .par_iter()
        .map(|ex| {
            let src = ImageConditioned::new(model, &ex.image, vocab)?;
            let mut out = Vec::new();
            for s in build_windows(&ex.tokens, vocab, ex.id, model.config().window)? {
                out.push((src.distribution(&s.context)?, s.target));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(per_file.into_iter().flatten().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn token_error_reference_cases() {
        let e: Vec<u8> = (0..10).collect();
        assert_eq!(token_error(&e, &e).unwrap(), 0.0);
        let mut flipped = e.clone();
        flipped[2] = 99;
        flipped[7] = 98;
        assert_eq!(token_error(&flipped, &e).unwrap(), 0.2);
        assert_eq!(token_error(&e[..8], &e).unwrap(), 0.2);
        let longer: Vec<u8> = (0..13).collect();
        assert_eq!(token_error(&longer, &e).unwrap(), 0.3);
        assert!(matches!(
            token_error(&e, &[]),
            Err(EvalError::EmptyExpected)
        ));
    }

    #[test]
    fn perfect_predictions_have_unit_area() {
        let d = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let r = roc_micro_average(&d, &[0, 2]).unwrap();
        assert_eq!(r.area, 1.0);
        assert_eq!(r.points.last().unwrap().fpr, 1.0);
    }

    #[test]
    fn uniform_predictions_have_half_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = vec![vec![1.0 / 18.0; 18]; 10_000];
        let t: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..18)).collect();
        assert!((roc_micro_average(&d, &t).unwrap().area - 0.5).abs() < 1e-12);
    }

    #[test]
    fn area_is_rank_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let t: Vec<usize> = (0..200).map(|_| rng.gen_range(0..5)).collect();
        let a = roc_micro_average(&d, &t).unwrap().area;
        let warped: Vec<Vec<f64>> = d
            .iter()
            .map(|r| r.iter().map(|v| (3.0 * v).exp() - 7.0).collect())
            .collect();
        assert!((roc_micro_average(&warped, &t).unwrap().area - a).abs() < 1e-12);
    }

    #[test]
    fn area_matches_pairwise_ranking_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect())
            .collect();
        let t: Vec<usize> = (0..40).map(|_| rng.gen_range(0..4)).collect();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (y, &tt) in d.iter().zip(&t) {
            for (c, &s) in y.iter().enumerate() {
                if c == tt {
                    pos.push(s)
                } else {
                    neg.push(s)
                }
            }
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let oracle = wins / (pos.len() * neg.len()) as f64;
        assert!((roc_micro_average(&d, &t).unwrap().area - oracle).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            roc_micro_average(&[vec![1.0]], &[0]),
            Err(EvalError::DegenerateLabels)
        ));
        assert!(matches!(
            roc_micro_average(&[], &[]),
            Err(EvalError::NoPredictions)
        ));
        assert!(matches!(
            roc_micro_average(&[vec![0.5, 0.5]], &[2]),
            Err(EvalError::BadTarget { .. })
        ));
    }

    #[test]
    fn dataset_error_is_order_independent() {
        let files: Vec<FileResult> = (0..7)
            .map(|i| FileResult {
                id: i,
                expected_len: 10,
                generated_len: 10,
                error: i as f64 / 10.0,
            })
            .collect();
        let mut rev = files.clone();
        rev.reverse();
        let (a, b) = (EvalReport::from_files(files), EvalReport::from_files(rev));
        assert!((a.mean_error - b.mean_error).abs() < 1e-15);
        assert!((a.mean_error - 0.3).abs() < 1e-12);
        assert!(a
            .to_csv()
            .starts_with("file_id,expected_len,generated_len,error\n0000,10,10,0\n"));
    }
}
