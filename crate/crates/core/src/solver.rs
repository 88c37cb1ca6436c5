//! Elastic-Net fully-connected tensor network (ENTN) solver.
//!
//! Proximal alternating minimization over `G_i`, `G_j`, `G_n` and the target
//! tensor `X`, with adaptive rank growth. Each factor block solves
//!
//! ```text
//! G (H Hᵀ + λ₂ Id) = X_m Hᵀ + λ₂ G_old + λ₁ 𝟏
//! ```
//!
//! where `𝟏` is the rectangular quasi-identity, and the target update is the
//! blend `X ← (F3TN(G) + λ₂ X) / (1 + λ₂)`.

use log::{debug, trace};
use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    f3tn_contract, fold, frob_dist, frob_norm, unfold, FactorTriple, Mode, Tensor3,
};

/// Scale of entries added by rank growth, relative to `init_scale`.
pub const GROW_FILL_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Maximal F3TN rank.
    pub f_max: usize,
    /// L1 coefficient.
    pub lambda1: f64,
    /// L2 / proximal coefficient.
    pub lambda2: f64,
    pub s_max: usize,
    pub grow_tol: f64,
    pub conv_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
    /// Reset observed (nonzero) target entries after every `X` update.
    pub clamp_x: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            f_max: 6,
            lambda1: 0.1,
            lambda2: 0.1,
            s_max: 1000,
            grow_tol: 1e-2,
            conv_tol: 1e-3,
            seed: 0,
            init_scale: 0.1,
            clamp_x: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.f_max == 0 {
            return bad("f_max must be at least 1".into());
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad(format!("lambda1 must be >= 0, got {}", self.lambda1));
        }
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return bad(format!("lambda2 must be > 0, got {}", self.lambda2));
        }
        if !(self.grow_tol > 0.0 && self.conv_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.grow_tol <= self.conv_tol {
            return bad(format!(
                "grow_tol ({}) must exceed conv_tol ({})",
                self.grow_tol, self.conv_tol
            ));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be > 0, got {}", self.init_scale));
        }
        Ok(())
    }

    pub fn initial_rank(&self) -> usize {
        initial_rank(self.f_max)
    }
}

/// Starting rank `max(1, f_max - 5)`.
pub fn initial_rank(f_max: usize) -> usize {
    f_max.saturating_sub(5).max(1)
}

/// One completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// Iteration count after this step (1-based).
    pub s: usize,
    /// Rank after this step, including any growth.
    pub f: usize,
    /// `½‖X − F3TN(G)‖²` at the end of the step.
    pub objective: f64,
    /// The same objective right after the factor and `X` updates, before
    /// any rank growth perturbs the factors.
    pub sweep_objective: f64,
    /// `‖X⁺ − X‖ / ‖X‖`.
    pub rel_change: f64,
    pub grew: bool,
    /// Largest `‖G A − B‖ / (1 + ‖B‖)` over the three factor solves.
    pub max_residual: f64,
}

/// Outcome of one factor block solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorUpdate {
    pub residual: f64,
    pub rhs_norm: f64,
}

impl FactorUpdate {
    pub fn relative_residual(&self) -> f64 {
        self.residual / (1.0 + self.rhs_norm)
    }
}

#[derive(Clone, Debug)]
pub struct SolverState {
    x: Tensor3,
    factors: FactorTriple,
    observed: Vec<(usize, f64)>,
    s: usize,
    trace: Vec<TraceRecord>,
    converged: bool,
    rng: ChaCha8Rng,
}

impl SolverState {
    pub fn x(&self) -> &Tensor3 {
        &self.x
    }

    pub fn factors(&self) -> &FactorTriple {
        &self.factors
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn iterations(&self) -> usize {
        self.s
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Overrides the factors, e.g. to start from a known point. Ranks and
    /// dimensions must match the current ones.
    pub fn set_factors(&mut self, factors: FactorTriple) -> Result<()> {
        if factors.dims() != self.factors.dims() || factors.rank() != self.factors.rank() {
            return Err(Error::Shape(format!(
                "factors of dims {:?} rank {} do not match state dims {:?} rank {}",
                factors.dims(),
                factors.rank(),
                self.factors.dims(),
                self.factors.rank()
            )));
        }
        self.factors = factors;
        Ok(())
    }

    pub fn into_factors(self) -> FactorTriple {
        self.factors
    }
}

/// `X = target`, rank `max(1, f_max - 5)`, factors uniform on
/// `[0, init_scale)` from the seeded generator.
pub fn init_state(target: &Tensor3, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::Shape("target tensor has a zero dimension".into()));
    }
    if !target.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            msg: "target tensor has non-finite entries".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factors = FactorTriple::random(target.dims(), cfg.initial_rank(), cfg.init_scale, &mut rng);
    let observed = target
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(k, &v)| (k, v))
        .collect();
    Ok(SolverState {
        x: target.clone(),
        factors,
        observed,
        s: 0,
        trace: Vec::new(),
        converged: false,
        rng,
    })
}

/// Adds `scale` on the diagonal positions `(k, k)` of a possibly
/// rectangular matrix.
pub fn add_quasi_identity(m: &mut DMatrix<f64>, scale: f64) {
    let k = m.nrows().min(m.ncols());
    for d in 0..k {
        m[(d, d)] += scale;
    }
}

/// Solves one factor block of the proximal update and returns the new
/// factor in tensor form.
pub fn solve_factor_block(
    x: &Tensor3,
    factors: &FactorTriple,
    mode: Mode,
    lambda1: f64,
    lambda2: f64,
    iteration: usize,
) -> Result<(Tensor3, FactorUpdate)> {
    let h = factors.partial_contract(mode);
    let ht = h.transpose();
    let xm = unfold(x, mode);
    let old = factors.factor(mode);
    let g_old = unfold(old, mode);

    let mut gram = &h * &ht;
    for d in 0..gram.nrows() {
        gram[(d, d)] += lambda2;
    }
    let mut rhs = xm * &ht;
    rhs += &g_old * lambda2;
    add_quasi_identity(&mut rhs, lambda1);

    if !gram.iter().all(|v| v.is_finite()) || !rhs.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical {
            iteration,
            msg: format!("non-finite normal equations for G_{mode}"),
        });
    }

    let chol = match Cholesky::new(gram.clone()) {
        Some(c) => c,
        None => {
            let dim = gram.nrows() as f64;
            let jitter = 1e-12 * gram.trace() / dim;
            debug!("iteration {iteration}: jittering G_{mode} system by {jitter:e}");
            let mut jittered = gram.clone();
            for d in 0..jittered.nrows() {
                jittered[(d, d)] += jitter;
            }
            Cholesky::new(jittered).ok_or_else(|| Error::Numerical {
                iteration,
                msg: format!("G_{mode} system is not positive definite"),
            })?
        }
    };
    let g = chol.solve(&rhs.transpose()).transpose();
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical {
            iteration,
            msg: format!("G_{mode} solve produced non-finite values"),
        });
    }
    let residual = (&g * &gram - &rhs).norm();
    let update = FactorUpdate {
        residual,
        rhs_norm: rhs.norm(),
    };
    let tensor = fold(&g, old.dims(), mode)?;
    Ok((tensor, update))
}

/// Updates one factor in place using the current `X` and the newest other
/// factors.
pub fn update_factor(
    state: &mut SolverState,
    mode: Mode,
    cfg: &SolverConfig,
) -> Result<FactorUpdate> {
    let (g, update) = solve_factor_block(
        &state.x,
        &state.factors,
        mode,
        cfg.lambda1,
        cfg.lambda2,
        state.s + 1,
    )?;
    state.factors.set_factor(mode, g)?;
    Ok(update)
}

/// `(recon + λ₂ x) / (1 + λ₂)` entrywise.
pub fn blend_target(recon: &Tensor3, x_old: &Tensor3, lambda2: f64) -> Result<Tensor3> {
    if recon.dims() != x_old.dims() {
        return Err(Error::Shape(format!(
            "blend of {:?} and {:?}",
            recon.dims(),
            x_old.dims()
        )));
    }
    let denom = 1.0 + lambda2;
    let values = recon
        .values()
        .iter()
        .zip(x_old.values())
        .map(|(r, x)| (r + lambda2 * x) / denom)
        .collect();
    Tensor3::from_vec(recon.dims(), values)
}

/// Replaces `X` by the blend of the current reconstruction and the previous
/// `X`, optionally re-imposing observed entries. Returns the new `X`.
pub fn update_x(state: &mut SolverState, cfg: &SolverConfig) -> Result<Tensor3> {
    let recon = f3tn_contract(&state.factors);
    apply_x_update(state, &recon, cfg)?;
    Ok(state.x.clone())
}

fn apply_x_update(state: &mut SolverState, recon: &Tensor3, cfg: &SolverConfig) -> Result<()> {
    let mut next = blend_target(recon, &state.x, cfg.lambda2)?;
    if cfg.clamp_x {
        let vals = next.values_mut();
        for &(k, v) in &state.observed {
            vals[k] = v;
        }
    }
    state.x = next;
    Ok(())
}

/// Expands every factor by one slice along each latent dimension. Existing
/// entries are kept; new entries are tiny seeded noise. No-op at `f_max`.
pub fn grow_rank(state: &mut SolverState, cfg: &SolverConfig) -> bool {
    let f = state.factors.rank();
    if f >= cfg.f_max {
        return false;
    }
    let scale = cfg.init_scale * GROW_FILL_SCALE;
    let rng = &mut state.rng;
    let g = f + 1;
    let [id, jd, nd] = state.factors.dims();
    let (gi, gj, gn) = (state.factors.gi(), state.factors.gj(), state.factors.gn());
    let new_gi = Tensor3::from_fn([id, g, g], |i, x, y| {
        if x < f && y < f {
            gi[(i, x, y)]
        } else {
            rng.random::<f64>() * scale
        }
    });
    let new_gj = Tensor3::from_fn([g, jd, g], |x, j, z| {
        if x < f && z < f {
            gj[(x, j, z)]
        } else {
            rng.random::<f64>() * scale
        }
    });
    let new_gn = Tensor3::from_fn([g, g, nd], |y, z, n| {
        if y < f && z < f {
            gn[(y, z, n)]
        } else {
            rng.random::<f64>() * scale
        }
    });
    state.factors = FactorTriple::new(new_gi, new_gj, new_gn).expect("grown shapes agree");
    true
}

/// `½‖X − F3TN(G)‖²`.
pub fn objective(state: &SolverState) -> f64 {
    let recon = f3tn_contract(&state.factors);
    let d = frob_dist(&state.x, &recon).expect("state dims agree");
    0.5 * d * d
}

/// `‖next − prev‖ / ‖prev‖`; infinite when `prev` is zero and `next` is not.
pub fn relative_change(next: &Tensor3, prev: &Tensor3) -> f64 {
    let diff = frob_dist(next, prev).expect("dims agree");
    let base = frob_norm(prev);
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Runs one full iteration: factor sweep `i → j → n`, target update, growth
/// check, then convergence check.
pub fn step(state: &mut SolverState, cfg: &SolverConfig) -> Result<TraceRecord> {
    let mut max_residual = 0.0f64;
    for mode in Mode::ALL {
        let up = update_factor(state, mode, cfg)?;
        max_residual = max_residual.max(up.relative_residual());
    }
    let prev = state.x.clone();
    let recon = f3tn_contract(&state.factors);
    apply_x_update(state, &recon, cfg)?;
    let rel_change = relative_change(&state.x, &prev);
    let d = frob_dist(&state.x, &recon)?;
    let sweep_objective = 0.5 * d * d;
    let grew = rel_change < cfg.grow_tol && grow_rank(state, cfg);
    if !grew && rel_change < cfg.conv_tol {
        state.converged = true;
    }
    let objective = if grew {
        objective(state)
    } else {
        sweep_objective
    };
    state.s += 1;
    let record = TraceRecord {
        s: state.s,
        f: state.factors.rank(),
        objective,
        sweep_objective,
        rel_change,
        grew,
        max_residual,
    };
    trace!(
        "s={} f={} obj={:.6e} rel={:.3e}{}",
        record.s,
        record.f,
        record.objective,
        record.rel_change,
        if grew { " (grew)" } else { "" }
    );
    state.trace.push(record.clone());
    Ok(record)
}

/// Runs the full loop until convergence or `s_max` iterations.
pub fn solve(target: &Tensor3, cfg: &SolverConfig) -> Result<(FactorTriple, SolverState)> {
    let mut state = init_state(target, cfg)?;
    run(&mut state, cfg)?;
    Ok((state.factors.clone(), state))
}

/// Continues iterating an existing state.
pub fn run(state: &mut SolverState, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    while !state.converged && state.s < cfg.s_max {
        step(state, cfg)?;
    }
    debug!(
        "solver stopped after {} iterations at rank {} (converged: {})",
        state.s,
        state.factors.rank(),
        state.converged
    );
    Ok(())
}
