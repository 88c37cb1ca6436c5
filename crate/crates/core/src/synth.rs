//! Labeled synthetic DVS-like scenes: objects moving along parameterized
//! trajectories over uniform background noise.
//!
//! Each frame draws from its own random substream keyed by `(seed, frame)`,
//! so the output does not depend on generation order.

use std::f64::consts::TAU;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Geometry, NOISE_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trajectory {
    /// `start + velocity · u`
    Linear,
    /// `start + radius · (cos θ, sin θ)` with `θ = 2π · frequency · u + phase`
    Circular,
    /// `start + velocity · u + (radius · sin θ, 0)`
    Sinusoidal,
}

/// One moving object. Positions are `(row, column)` in pixels; `u ∈ (0, 1)`
/// is the frame midpoint as a fraction of the recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub trajectory: Trajectory,
    pub start: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub radius: f64,
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    /// L∞ radius of the square footprint.
    #[serde(default)]
    pub footprint: usize,
    /// Per-frame emission probability of each footprint pixel.
    pub probability: f64,
    /// Label of this object's events; defaults to its index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
}

fn default_frequency() -> f64 {
    1.0
}

fn default_duration() -> u64 {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    #[serde(default = "default_duration")]
    pub duration_us: u64,
    /// Expected background events per frame (Poisson).
    #[serde(default)]
    pub noise_per_frame: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, rename = "object")]
    pub objects: Vec<ObjectSpec>,
}

impl SceneSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.rows, self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!(
                "rows/cols must be positive, got {}x{}",
                self.rows, self.cols
            ));
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if self.duration_us < self.frames as u64 {
            return bad(format!(
                "duration_us ({}) must be at least frames ({})",
                self.duration_us, self.frames
            ));
        }
        if !(self.noise_per_frame >= 0.0 && self.noise_per_frame.is_finite()) {
            return bad(format!(
                "noise_per_frame must be >= 0, got {}",
                self.noise_per_frame
            ));
        }
        for (k, o) in self.objects.iter().enumerate() {
            if !(0.0..=1.0).contains(&o.probability) {
                return bad(format!(
                    "object[{k}].probability must lie in [0, 1], got {}",
                    o.probability
                ));
            }
            let side = 2 * o.footprint + 1;
            if side > self.rows || side > self.cols {
                return bad(format!(
                    "object[{k}].footprint {} does not fit a {}x{} sensor",
                    o.footprint, self.rows, self.cols
                ));
            }
            let finite = o.start.iter().chain(&o.velocity).all(|v| v.is_finite())
                && o.radius.is_finite()
                && o.frequency.is_finite()
                && o.phase.is_finite();
            if !finite {
                return bad(format!("object[{k}] has non-finite trajectory parameters"));
            }
            if o.label == Some(NOISE_LABEL) {
                return bad(format!("object[{k}].label collides with the noise label"));
            }
        }
        Ok(())
    }

    /// Start time and width of frame `n`.
    pub fn frame_window(&self, n: usize) -> (u64, u64) {
        let d = self.duration_us as u128;
        let nf = self.frames as u128;
        let start = (n as u128 * d / nf) as u64;
        let end = ((n as u128 + 1) * d / nf) as u64;
        (start, end - start)
    }

    pub fn object_label(&self, k: usize) -> i64 {
        self.objects[k].label.unwrap_or(k as i64)
    }

    /// Two-object desk-scale scene (64x48, 60 frames) with background noise
    /// making up `noise_fraction` of the expected events and an overall
    /// tensor density near 0.62%.
    pub fn desk_replica(noise_fraction: f64, seed: u64) -> Self {
        let (rows, cols, frames) = (64usize, 48usize, 60usize);
        let target_per_frame = 0.0062 * (rows * cols) as f64;
        let object_per_frame = target_per_frame * (1.0 - noise_fraction);
        let footprint = 1;
        let pixels = ((2 * footprint + 1) * (2 * footprint + 1)) as f64;
        let probability = (object_per_frame / (2.0 * pixels)).min(1.0);
        SceneSpec {
            rows,
            cols,
            frames,
            duration_us: 6_000_000,
            noise_per_frame: target_per_frame * noise_fraction,
            seed,
            objects: vec![
                ObjectSpec {
                    trajectory: Trajectory::Circular,
                    start: [20.0, 14.0],
                    velocity: [0.0, 0.0],
                    radius: 9.0,
                    frequency: 3.0,
                    phase: 0.0,
                    footprint,
                    probability,
                    label: Some(0),
                },
                ObjectSpec {
                    trajectory: Trajectory::Sinusoidal,
                    start: [40.0, 36.0],
                    velocity: [0.0, 0.0],
                    radius: 14.0,
                    frequency: 2.5,
                    phase: 0.0,
                    footprint,
                    probability,
                    label: Some(1),
                },
            ],
        }
    }
}

/// Footprint center of `obj` in frame `n`, clamped so the footprint stays
/// on the sensor. The flag reports whether clamping was needed.
pub fn object_center(spec: &SceneSpec, obj: &ObjectSpec, n: usize) -> (usize, usize, bool) {
    let u = (n as f64 + 0.5) / spec.frames as f64;
    let theta = TAU * obj.frequency * u + obj.phase;
    let (ci, cj) = match obj.trajectory {
        Trajectory::Linear => (
            obj.start[0] + obj.velocity[0] * u,
            obj.start[1] + obj.velocity[1] * u,
        ),
        Trajectory::Circular => (
            obj.start[0] + obj.radius * theta.cos(),
            obj.start[1] + obj.radius * theta.sin(),
        ),
        Trajectory::Sinusoidal => (
            obj.start[0] + obj.velocity[0] * u + obj.radius * theta.sin(),
            obj.start[1] + obj.velocity[1] * u,
        ),
    };
    let r = obj.footprint as f64;
    let clamp = |c: f64, len: usize| {
        let lo = r;
        let hi = (len - 1) as f64 - r;
        let rounded = c.round();
        if rounded < lo {
            (lo, true)
        } else if rounded > hi {
            (hi, true)
        } else {
            (rounded, false)
        }
    };
    let (i, ci_clip) = clamp(ci, spec.rows);
    let (j, cj_clip) = clamp(cj, spec.cols);
    (i as usize, j as usize, ci_clip || cj_clip)
}

fn footprint_pixels(center: (usize, usize), r: usize) -> impl Iterator<Item = (usize, usize)> {
    let (ci, cj) = center;
    (ci - r..=ci + r).flat_map(move |i| (cj - r..=cj + r).map(move |j| (i, j)))
}

/// Generates the labeled event stream for a scene.
pub fn generate(spec: &SceneSpec) -> Result<EventStream> {
    spec.validate()?;
    if spec.objects.is_empty() && spec.noise_per_frame == 0.0 {
        return Err(Error::EmptyStream);
    }
    let noise = if spec.noise_per_frame > 0.0 {
        Some(Poisson::new(spec.noise_per_frame).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let mut clipped = vec![false; spec.objects.len()];
    let mut events = Vec::new();
    for n in 0..spec.frames {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(n as u64);
        let (t0, width) = spec.frame_window(n);
        for (k, obj) in spec.objects.iter().enumerate() {
            let (ci, cj, clip) = object_center(spec, obj, n);
            clipped[k] |= clip;
            let label = spec.object_label(k);
            for (i, j) in footprint_pixels((ci, cj), obj.footprint) {
                if rng.random_bool(obj.probability) {
                    let t = t0 + rng.random_range(0..width);
                    events.push(Event::labeled(i, j, t, label));
                }
            }
        }
        if let Some(dist) = &noise {
            let count = dist.sample(&mut rng) as usize;
            for _ in 0..count {
                let i = rng.random_range(0..spec.rows);
                let j = rng.random_range(0..spec.cols);
                let t = t0 + rng.random_range(0..width);
                events.push(Event::labeled(i, j, t, NOISE_LABEL));
            }
        }
    }
    for (k, c) in clipped.iter().enumerate() {
        if *c {
            warn!("object[{k}] trajectory leaves the sensor; positions were clipped");
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyStream);
    }
    events.sort_unstable();
    EventStream::with_range(events, spec.geometry(), 0, spec.duration_us - 1)
}

/// Closed-form expectations for a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSummary {
    pub expected_object_events: f64,
    pub expected_noise_events: f64,
    pub expected_events: f64,
    /// Standard deviation of the total event count.
    pub event_std: f64,
    /// Expected fraction of active `(i, j, frame)` cells.
    pub expected_density: f64,
    /// Objects whose trajectory had to be clipped.
    pub clipped_objects: Vec<usize>,
}

pub fn describe(spec: &SceneSpec) -> SceneSummary {
    let pixels = (spec.rows * spec.cols) as f64;
    let frames = spec.frames as f64;
    let mut obj_mean = 0.0;
    let mut obj_var = 0.0;
    let mut active = 0.0;
    let mut clipped_objects = Vec::new();
    let quiet = (-spec.noise_per_frame / pixels).exp();
    let mut silent = vec![1.0f64; spec.rows * spec.cols];
    for n in 0..spec.frames {
        silent.iter_mut().for_each(|v| *v = 1.0);
        for (k, obj) in spec.objects.iter().enumerate() {
            let (ci, cj, clip) = object_center(spec, obj, n);
            if clip && !clipped_objects.contains(&k) {
                clipped_objects.push(k);
            }
            for (i, j) in footprint_pixels((ci, cj), obj.footprint) {
                obj_mean += obj.probability;
                obj_var += obj.probability * (1.0 - obj.probability);
                silent[i * spec.cols + j] *= 1.0 - obj.probability;
            }
        }
        active += silent.iter().map(|s| 1.0 - s * quiet).sum::<f64>();
    }
    let noise_mean = spec.noise_per_frame * frames;
    SceneSummary {
        expected_object_events: obj_mean,
        expected_noise_events: noise_mean,
        expected_events: obj_mean + noise_mean,
        event_std: (obj_var + noise_mean).sqrt(),
        expected_density: active / (pixels * frames),
        clipped_objects,
    }
}
