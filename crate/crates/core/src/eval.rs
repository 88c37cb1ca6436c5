//! Classification-based evaluation of learned factors.
//!
//! Every labeled event `(i, j, n)` becomes the feature vector
//! `[vec G_i(i,·,·), vec G_j(·,j,·), vec G_n(·,·,n)]` of length `3f²`. The
//! first 60% of time frames train a linear SVM, the rest are scored and
//! summarized by ROC AUC.

use std::io::{BufRead, Write};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventStream, EventTensor, NOISE_LABEL};
use crate::solver::{solve, SolverConfig};
use crate::tensor::FactorTriple;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.6;

/// Which binary problem to pose on a labeled stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Events of object `positive` against events of object `negative`;
    /// everything else is dropped.
    Objects { positive: i64, negative: i64 },
    /// Any object event against noise.
    SignalVsNoise,
}

impl Default for Task {
    fn default() -> Self {
        Task::Objects {
            positive: 0,
            negative: 1,
        }
    }
}

impl Task {
    /// `Some(true)` for the positive class, `Some(false)` for the negative
    /// class, `None` when the label takes no part in the task.
    pub fn class_of(&self, label: i64) -> Option<bool> {
        match *self {
            Task::Objects { positive, negative } => {
                if label == positive {
                    Some(true)
                } else if label == negative {
                    Some(false)
                } else {
                    None
                }
            }
            Task::SignalVsNoise => Some(label != NOISE_LABEL),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub i: usize,
    pub j: usize,
    pub n: usize,
    pub label: i64,
    pub features: Vec<f64>,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureRow>,
    /// Feature length `3f²`.
    pub width: usize,
    /// Number of time frames `N` of the underlying tensor.
    pub frames: usize,
}

/// Concatenated latent slices for entry `(i, j, n)`.
pub fn slice_features(factors: &FactorTriple, i: usize, j: usize, n: usize) -> Vec<f64> {
    let f = factors.rank();
    let mut out = Vec::with_capacity(3 * f * f);
    let (gi, gj, gn) = (factors.gi(), factors.gj(), factors.gn());
    for y in 0..f {
        for x in 0..f {
            out.push(gi[(i, x, y)]);
        }
    }
    for z in 0..f {
        for x in 0..f {
            out.push(gj[(x, j, z)]);
        }
    }
    for z in 0..f {
        for y in 0..f {
            out.push(gn[(y, z, n)]);
        }
    }
    out
}

/// One feature row per labeled event.
pub fn extract_features(
    stream: &EventStream,
    tensor: &EventTensor,
    factors: &FactorTriple,
) -> Result<FeatureMatrix> {
    if factors.dims() != tensor.dims() {
        return Err(Error::Consistency(format!(
            "factors reconstruct {:?} but the event tensor is {:?}",
            factors.dims(),
            tensor.dims()
        )));
    }
    let mut rows = Vec::with_capacity(stream.len());
    for (k, e) in stream.events().iter().enumerate() {
        let label = e.label.ok_or_else(|| {
            Error::Protocol(format!(
                "event {} has no label; classification needs labels",
                k + 1
            ))
        })?;
        let (i, j, n) = tensor.locate(e).ok_or_else(|| {
            Error::Consistency(format!(
                "event ({}, {}, t={}) falls outside the factor range",
                e.i, e.j, e.t
            ))
        })?;
        rows.push(FeatureRow {
            i,
            j,
            n,
            label,
            features: slice_features(factors, i, j, n),
            split: None,
        });
    }
    Ok(FeatureMatrix {
        rows,
        width: 3 * factors.rank() * factors.rank(),
        frames: tensor.dims()[2],
    })
}

/// Number of leading frames used for training: `ceil(fraction * frames)`.
pub fn train_frames(frames: usize, fraction: f64) -> usize {
    // guard against 0.6 * 100 = 60.000000000000007
    let raw = fraction * frames as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(frames)
}

/// Tags rows by time frame: `n < ceil(fraction * N)` trains, the rest test.
pub fn temporal_split(mut features: FeatureMatrix, train_fraction: f64) -> Result<FeatureMatrix> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Argument(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let cutoff = train_frames(features.frames, train_fraction);
    let mut n_train = 0;
    for row in &mut features.rows {
        let split = if row.n < cutoff {
            n_train += 1;
            Split::Train
        } else {
            Split::Test
        };
        row.split = Some(split);
    }
    let n_test = features.rows.len() - n_train;
    if n_train == 0 {
        return Err(Error::Protocol(format!(
            "no events in training frames 0..{cutoff}"
        )));
    }
    if n_test == 0 {
        return Err(Error::Protocol(format!(
            "no events in test frames {cutoff}..{}",
            features.frames
        )));
    }
    Ok(features)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    /// Box constraint on the dual variables (inverse regularization).
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 50,
            seed: 0,
        }
    }
}

/// Linear SVM on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub config: SvmConfig,
}

impl SvmModel {
    /// Signed margin `w · standardize(x) + b`.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for (k, &v) in x.iter().enumerate() {
            acc += self.weights[k] * (v - self.mean[k]) / self.scale[k];
        }
        acc
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(w, "c {}", self.config.c)?;
        writeln!(w, "epochs {}", self.config.epochs)?;
        writeln!(w, "seed {}", self.config.seed)?;
        writeln!(w, "bias {}", self.bias)?;
        writeln!(w, "weights {}", join(&self.weights))?;
        writeln!(w, "mean {}", join(&self.mean))?;
        writeln!(w, "scale {}", join(&self.scale))?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut model = SvmModel {
            weights: Vec::new(),
            bias: 0.0,
            mean: Vec::new(),
            scale: Vec::new(),
            config: SvmConfig::default(),
        };
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let err = |msg: String| Error::Parse { line: k + 1, msg };
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            let nums = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
                parts
                    .map(|p| p.parse::<f64>().map_err(|e| err(format!("{key}: {e}"))))
                    .collect()
            };
            match key {
                "c" => model.config.c = nums(parts)?.first().copied().unwrap_or(1.0),
                "epochs" => {
                    model.config.epochs = parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| err("bad epochs".into()))?
                }
                "seed" => {
                    model.config.seed = parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| err("bad seed".into()))?
                }
                "bias" => model.bias = nums(parts)?.first().copied().unwrap_or(0.0),
                "weights" => model.weights = nums(parts)?,
                "mean" => model.mean = nums(parts)?,
                "scale" => model.scale = nums(parts)?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        if model.weights.len() != model.mean.len() || model.mean.len() != model.scale.len() {
            return Err(Error::Shape("model vectors differ in length".into()));
        }
        Ok(model)
    }
}

/// Trains an L2-regularized hinge-loss linear SVM by dual coordinate
/// descent. The bias is learned as the weight of a constant feature.
/// Features are standardized with the training mean and standard deviation.
pub fn train_svm(x: &[Vec<f64>], y: &[bool], cfg: &SvmConfig) -> Result<SvmModel> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    let n_pos = y.iter().filter(|&&v| v).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::Protocol(
            "training set needs examples of both classes".into(),
        ));
    }
    if cfg.c.is_nan() || cfg.c <= 0.0 {
        return Err(Error::Argument(format!(
            "SVM C must be positive, got {}",
            cfg.c
        )));
    }
    let width = x[0].len();
    if x.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    let m = x.len() as f64;
    let mut mean = vec![0.0; width];
    for r in x {
        for (k, v) in r.iter().enumerate() {
            mean[k] += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut scale = vec![0.0; width];
    for r in x {
        for (k, v) in r.iter().enumerate() {
            scale[k] += (v - mean[k]) * (v - mean[k]);
        }
    }
    for s in &mut scale {
        *s = (*s / m).sqrt();
        if s.is_nan() || *s <= 1e-12 {
            *s = 1.0;
        }
    }

    // standardized rows with a trailing constant for the bias
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            let mut v: Vec<f64> = r
                .iter()
                .enumerate()
                .map(|(k, &val)| (val - mean[k]) / scale[k])
                .collect();
            v.push(1.0);
            v
        })
        .collect();
    let sign: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let qdiag: Vec<f64> = z.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();

    let mut w = vec![0.0; width + 1];
    let mut alpha = vec![0.0; z.len()];
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut max_pg: f64 = 0.0;
        for &k in &order {
            let row = &z[k];
            let g = sign[k] * dot(&w, row) - 1.0;
            let pg = if alpha[k] <= 0.0 {
                g.min(0.0)
            } else if alpha[k] >= cfg.c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[k];
                alpha[k] = (old - g / qdiag[k]).clamp(0.0, cfg.c);
                let delta = (alpha[k] - old) * sign[k];
                for (wv, rv) in w.iter_mut().zip(row) {
                    *wv += delta * rv;
                }
            }
        }
        if max_pg < 1e-6 {
            break;
        }
    }
    let bias = w.pop().expect("bias slot");
    if !w.iter().all(|v| v.is_finite()) || !bias.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            msg: "SVM weights are not finite".into(),
        });
    }
    Ok(SvmModel {
        weights: w,
        bias,
        mean,
        scale,
        config: cfg.clone(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Twice the Mann–Whitney U statistic: `2·wins + ties` over all
/// positive/negative pairs, plus the positive and negative counts.
fn doubled_u(scores: &[f64], labels: &[bool]) -> Result<(u64, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("AUC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Protocol("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum over positives of doubled average rank (ranks are 1-based)
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let group = (end - start) as u64;
        let pos_in_group = idx[start..end].iter().filter(|&&k| labels[k]).count() as u64;
        // ranks start+1 ..= end, average (2*start + group + 1) / 2
        doubled_rank_sum += pos_in_group * (2 * start as u64 + group + 1);
        start = end;
    }
    let doubled = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok((doubled, n_pos, n_neg))
}

/// ROC AUC: probability that a random positive outscores a random negative,
/// ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (u2, p, n) = doubled_u(scores, labels)?;
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// `100 · (max − min) / max`, zero for fewer than two values.
pub fn auc_gap(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return 0.0;
    }
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        return 0.0;
    }
    100.0 * (max - min) / max
}

/// Result of training and testing a classifier on one set of factors.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub auc: f64,
    pub model: SvmModel,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_positive: usize,
    pub test_positive: usize,
}

/// Features, temporal split, SVM training and test AUC for a labeled
/// stream and factors learned on its tensor.
pub fn evaluate_factors(
    stream: &EventStream,
    tensor: &EventTensor,
    factors: &FactorTriple,
    task: Task,
    svm: &SvmConfig,
    train_fraction: f64,
) -> Result<Evaluation> {
    let features = extract_features(stream, tensor, factors)?;
    let features = temporal_split(features, train_fraction)?;
    let mut train_x = Vec::new();
    let mut train_y = Vec::new();
    let mut test_x = Vec::new();
    let mut test_y = Vec::new();
    for row in features.rows {
        let Some(class) = task.class_of(row.label) else {
            continue;
        };
        match row.split {
            Some(Split::Train) => {
                train_x.push(row.features);
                train_y.push(class);
            }
            _ => {
                test_x.push(row.features);
                test_y.push(class);
            }
        }
    }
    if train_x.is_empty() || test_x.is_empty() {
        return Err(Error::Protocol(format!(
            "task {task:?} leaves {} training and {} test events",
            train_x.len(),
            test_x.len()
        )));
    }
    let model = train_svm(&train_x, &train_y, svm)?;
    let scores: Vec<f64> = test_x.iter().map(|x| model.decision(x)).collect();
    let auc = auc(&scores, &test_y)?;
    Ok(Evaluation {
        auc,
        train_rows: train_x.len(),
        test_rows: test_x.len(),
        train_positive: train_y.iter().filter(|&&p| p).count(),
        test_positive: test_y.iter().filter(|&&p| p).count(),
        model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub solver: SolverConfig,
    pub svm: SvmConfig,
    pub task: Task,
    pub train_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            svm: SvmConfig::default(),
            task: Task::default(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub auc: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_rank: usize,
    pub seconds: f64,
}

/// Decomposes the tensor and evaluates the resulting factors.
pub fn run_pipeline(
    stream: &EventStream,
    tensor: &EventTensor,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome> {
    let start = Instant::now();
    let (factors, state) = solve(&tensor.to_tensor(), &cfg.solver)?;
    let eval = evaluate_factors(
        stream,
        tensor,
        &factors,
        cfg.task,
        &cfg.svm,
        cfg.train_fraction,
    )?;
    Ok(PipelineOutcome {
        auc: eval.auc,
        converged: state.converged(),
        iterations: state.iterations(),
        final_rank: state.rank(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.lambda1
            .iter()
            .flat_map(|&l1| self.lambda2.iter().map(move |&l2| (l1, l2)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub outcome: std::result::Result<PipelineOutcome, String>,
}

impl SweepCell {
    pub fn auc(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|o| o.auc)
    }
}

/// Gap along one axis with the other parameter held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisGap {
    /// `"lambda1"` or `"lambda2"`: the swept parameter.
    pub axis: &'static str,
    /// Value of the parameter held fixed.
    pub fixed: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// Gap over every successful cell.
    pub fn overall_gap(&self) -> f64 {
        let aucs: Vec<f64> = self.cells.iter().filter_map(SweepCell::auc).collect();
        auc_gap(&aucs)
    }

    /// Gaps along each axis, one per value of the other parameter, in
    /// first-seen order.
    pub fn axis_gaps(&self) -> Vec<AxisGap> {
        let mut out = Vec::new();
        let mut fixed_l2: Vec<f64> = Vec::new();
        let mut fixed_l1: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !fixed_l2.contains(&c.lambda2) {
                fixed_l2.push(c.lambda2);
            }
            if !fixed_l1.contains(&c.lambda1) {
                fixed_l1.push(c.lambda1);
            }
        }
        for &l2 in &fixed_l2 {
            let aucs: Vec<f64> = self
                .cells
                .iter()
                .filter(|c| c.lambda2 == l2)
                .filter_map(SweepCell::auc)
                .collect();
            out.push(AxisGap {
                axis: "lambda1",
                fixed: l2,
                gap: auc_gap(&aucs),
            });
        }
        for &l1 in &fixed_l1 {
            let aucs: Vec<f64> = self
                .cells
                .iter()
                .filter(|c| c.lambda1 == l1)
                .filter_map(SweepCell::auc)
                .collect();
            out.push(AxisGap {
                axis: "lambda2",
                fixed: l1,
                gap: auc_gap(&aucs),
            });
        }
        out
    }

    /// Best successful cell by AUC (first one on ties).
    pub fn best(&self) -> Option<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.auc().is_some())
            .fold(None, |best: Option<&SweepCell>, c| match best {
                Some(b) if b.auc() >= c.auc() => Some(b),
                _ => Some(c),
            })
    }

    /// `lambda1,lambda2,auc,converged,iters,seconds`, then `#` gap lines.
    /// Failed cells report `NaN` AUC and the error in a trailing comment.
    pub fn write_csv<W: Write>(&self, mut w: W, with_timing: bool) -> Result<()> {
        writeln!(w, "lambda1,lambda2,auc,converged,iters,seconds")?;
        for c in &self.cells {
            match &c.outcome {
                Ok(o) => {
                    let secs = if with_timing {
                        format!("{:.3}", o.seconds)
                    } else {
                        "0".into()
                    };
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        c.lambda1, c.lambda2, o.auc, o.converged, o.iterations, secs
                    )?;
                }
                Err(_) => writeln!(w, "{},{},NaN,false,0,0", c.lambda1, c.lambda2)?,
            }
        }
        for c in &self.cells {
            if let Err(e) = &c.outcome {
                writeln!(
                    w,
                    "# failed lambda1={} lambda2={}: {}",
                    c.lambda1, c.lambda2, e
                )?;
            }
        }
        writeln!(w, "# gap all={}", self.overall_gap())?;
        for g in self.axis_gaps() {
            let other = if g.axis == "lambda1" {
                "lambda2"
            } else {
                "lambda1"
            };
            writeln!(w, "# gap {} ({}={})={}", g.axis, other, g.fixed, g.gap)?;
        }
        Ok(())
    }
}

/// Runs the full pipeline for every `(λ₁, λ₂)` cell with identical seeds.
/// Cell failures are recorded and do not stop the sweep.
pub fn sweep_lambdas(
    stream: &EventStream,
    tensor: &EventTensor,
    grid: &SweepGrid,
    base: &PipelineConfig,
) -> Result<SweepReport> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Argument("sweep grid is empty".into()));
    }
    let results: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(lambda1, lambda2)| {
            let mut cfg = base.clone();
            cfg.solver.lambda1 = lambda1;
            cfg.solver.lambda2 = lambda2;
            let outcome = run_pipeline(stream, tensor, &cfg).map_err(|e| e.to_string());
            match &outcome {
                Ok(o) => info!("lambda1={lambda1} lambda2={lambda2}: AUC {:.4}", o.auc),
                Err(e) => warn!("lambda1={lambda1} lambda2={lambda2} failed: {e}"),
            }
            SweepCell {
                lambda1,
                lambda2,
                outcome,
            }
        })
        .collect();
    Ok(SweepReport { cells: results })
}
