//! Reconstruction-threshold denoising: events whose F3TN reconstruction
//! value falls below a threshold are treated as noise.

use std::io::Write;

use crate::error::{Error, Result};
use crate::event::{EventStream, EventTensor, NOISE_LABEL};
use crate::tensor::FactorTriple;

/// Default score quantile used as threshold (keeps the top 80%).
pub const DEFAULT_QUANTILE: f64 = 0.2;

/// Reconstruction value `ê_ijn` at every event's tensor coordinate.
pub fn score_events(
    stream: &EventStream,
    tensor: &EventTensor,
    factors: &FactorTriple,
) -> Result<Vec<f64>> {
    if factors.dims() != tensor.dims() {
        return Err(Error::Consistency(format!(
            "factors reconstruct {:?} but the event tensor is {:?}",
            factors.dims(),
            tensor.dims()
        )));
    }
    stream
        .events()
        .iter()
        .map(|e| {
            let (i, j, n) = tensor.locate(e).ok_or_else(|| {
                Error::Consistency(format!(
                    "event ({}, {}, t={}) falls outside the factor range",
                    e.i, e.j, e.t
                ))
            })?;
            Ok(factors.entry(i, j, n))
        })
        .collect()
}

/// Linear-interpolation quantile of `scores` (`q` in `[0, 1]`).
pub fn quantile(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Argument("quantile of an empty score list".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Argument(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Retention quality against ground-truth labels. Object events are
/// positives, noise events negatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetentionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of signal events in the unfiltered stream.
    pub base_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseReport {
    pub threshold: f64,
    pub scores: Vec<f64>,
    pub kept: Vec<bool>,
    pub kept_count: usize,
    pub removed_count: usize,
    /// Set when nothing was kept; precision is then reported as 0.
    pub empty_kept: bool,
    pub metrics: Option<RetentionMetrics>,
}

impl DenoiseReport {
    /// Per-event CSV: `t,i,j,label,score,kept`.
    pub fn write_csv<W: Write>(&self, stream: &EventStream, mut w: W) -> Result<()> {
        writeln!(w, "t,i,j,label,score,kept")?;
        for ((e, s), k) in stream.events().iter().zip(&self.scores).zip(&self.kept) {
            let label = e.label.map(|l| l.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.t,
                e.i,
                e.j,
                label,
                s,
                u8::from(*k)
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "threshold {}\nkept {} removed {} total {}\n",
            self.threshold,
            self.kept_count,
            self.removed_count,
            self.kept_count + self.removed_count
        );
        if self.empty_kept {
            out.push_str("nothing kept\n");
        }
        if let Some(m) = self.metrics {
            out.push_str(&format!(
                "precision {:.4} recall {:.4} f1 {:.4} base_rate {:.4}\n",
                m.precision, m.recall, m.f1, m.base_rate
            ));
        }
        out
    }
}

/// Keeps events scoring at least `threshold`.
pub fn filter(
    stream: &EventStream,
    scores: &[f64],
    threshold: f64,
) -> Result<(EventStream, DenoiseReport)> {
    if scores.len() != stream.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} events",
            scores.len(),
            stream.len()
        )));
    }
    let kept: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let kept_events: Vec<_> = stream
        .events()
        .iter()
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|(e, _)| *e)
        .collect();
    let kept_count = kept_events.len();
    let removed_count = stream.len() - kept_count;

    let metrics = stream.is_labeled().then(|| {
        let is_signal = |l: Option<i64>| l != Some(NOISE_LABEL);
        let signal_total = stream
            .events()
            .iter()
            .filter(|e| is_signal(e.label))
            .count();
        let kept_signal = kept_events.iter().filter(|e| is_signal(e.label)).count();
        let precision = if kept_count == 0 {
            0.0
        } else {
            kept_signal as f64 / kept_count as f64
        };
        let recall = if signal_total == 0 {
            0.0
        } else {
            kept_signal as f64 / signal_total as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RetentionMetrics {
            precision,
            recall,
            f1,
            base_rate: signal_total as f64 / stream.len() as f64,
        }
    });

    let filtered = EventStream::with_range(
        kept_events,
        stream.geometry(),
        stream.t_min(),
        stream.t_max(),
    )?;
    let report = DenoiseReport {
        threshold,
        scores: scores.to_vec(),
        kept,
        kept_count,
        removed_count,
        empty_kept: kept_count == 0,
        metrics,
    };
    Ok((filtered, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{bin_to_tensor, Event, Geometry};
    use crate::tensor::f3tn_contract;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labeled_stream() -> EventStream {
        let g = Geometry::new(3, 3);
        EventStream::new(
            vec![
                Event::labeled(0, 0, 0, 0),
                Event::labeled(1, 1, 5, 0),
                Event::labeled(2, 2, 9, NOISE_LABEL),
                Event::labeled(1, 1, 5, 0),
            ],
            g,
        )
        .unwrap()
    }

    #[test]
    fn infinite_thresholds() {
        let s = labeled_stream();
        let scores = [0.1, 0.2, 0.3, 0.4];
        let (kept, r) = filter(&s, &scores, f64::NEG_INFINITY).unwrap();
        assert_eq!(kept.len(), 4);
        assert_eq!(r.metrics.unwrap().recall, 1.0);
        assert_eq!(r.metrics.unwrap().precision, 0.75);

        let (kept, r) = filter(&s, &scores, f64::INFINITY).unwrap();
        assert!(kept.is_empty());
        assert!(r.empty_kept);
        assert_eq!(r.metrics.unwrap().precision, 0.0);
        assert_eq!(r.kept_count + r.removed_count, 4);
    }

    #[test]
    fn scores_match_full_contraction() {
        let s = labeled_stream();
        let e = bin_to_tensor(&s, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = FactorTriple::random(e.dims(), 2, 1.0, &mut rng);
        let full = f3tn_contract(&f);
        let scores = score_events(&s, &e, &f).unwrap();
        for (ev, sc) in s.events().iter().zip(&scores) {
            let (i, j, n) = e.locate(ev).unwrap();
            assert!((full[(i, j, n)] - sc).abs() <= 1e-12 * full[(i, j, n)].abs().max(1.0));
        }
        // events 1 and 3 share coordinates
        assert_eq!(scores[1], scores[2]);
    }

    #[test]
    fn rank_one_score_is_product() {
        let s = labeled_stream();
        let e = bin_to_tensor(&s, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FactorTriple::random(e.dims(), 1, 1.0, &mut rng);
        let scores = score_events(&s, &e, &f).unwrap();
        let ev = s.events()[0];
        let (i, j, n) = e.locate(&ev).unwrap();
        let expected = f.gi()[(i, 0, 0)] * f.gj()[(0, j, 0)] * f.gn()[(0, 0, n)];
        assert_eq!(scores[0], expected);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 5.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 3.0);
        assert!((quantile(&v, 0.2).unwrap() - 1.8).abs() < 1e-12);
        assert!(quantile(&[], 0.2).is_err());
    }

    #[test]
    fn mismatched_factors_rejected() {
        let s = labeled_stream();
        let e = bin_to_tensor(&s, 2).unwrap();
        let f = FactorTriple::zeros([3, 3, 5], 1);
        assert!(matches!(
            score_events(&s, &e, &f),
            Err(Error::Consistency(_))
        ));
    }
}
