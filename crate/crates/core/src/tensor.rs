//! Dense 3rd-order tensors and the fully-connected 3rd-order tensor network
//! (F3TN) contraction.
//!
//! Storage is first-index-fastest: element `(a, b, c)` lives at
//! `a + d1 * (b + d2 * c)`. With this layout the mode-`i` unfolding is the
//! raw buffer viewed as a column-major `d1 x (d2 * d3)` matrix.
//!
//! Unfolding layouts (columns):
//! - mode `i`: `I x (J*N)`, column `j + J*n`
//! - mode `j`: `J x (I*N)`, column `i + I*n`
//! - mode `n`: `N x (I*J)`, column `i + I*j`
//!
//! Applied to the factors these give the latent-pair flattening used
//! everywhere else: `(x, y)` for `G_i`, `(x, z)` for `G_j`, `(y, z)` for `G_n`,
//! always with the first latent index fastest.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

/// One of the three tensor modes: pixel row, pixel column, time frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    I,
    J,
    N,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::I, Mode::J, Mode::N];

    pub fn axis(self) -> usize {
        match self {
            Mode::I => 0,
            Mode::J => 1,
            Mode::N => 2,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::I => "i",
            Mode::J => "j",
            Mode::N => "n",
        };
        f.write_str(s)
    }
}

/// Dense real 3rd-order tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if values.len() != len {
            return Err(Error::Shape(format!(
                "{} values for dims {:?} (expected {})",
                values.len(),
                dims,
                len
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.iter().product());
        for c in 0..dims[2] {
            for b in 0..dims[1] {
                for a in 0..dims[0] {
                    values.push(f(a, b, c));
                }
            }
        }
        Self { dims, values }
    }

    /// Entries i.i.d. uniform on `[0, scale)`, drawn in storage order.
    pub fn random_uniform<R: Rng + ?Sized>(dims: [usize; 3], scale: f64, rng: &mut R) -> Self {
        let len = dims.iter().product();
        let values = (0..len).map(|_| rng.random::<f64>() * scale).collect();
        Self { dims, values }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn offset(&self, a: usize, b: usize, c: usize) -> usize {
        debug_assert!(a < self.dims[0] && b < self.dims[1] && c < self.dims[2]);
        a + self.dims[0] * (b + self.dims[1] * c)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Writes the dump format: a `d1 d2 d3` header line, then all values
    /// space-separated with the third index outermost, the first index in
    /// the middle and the second index innermost.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let [d1, d2, d3] = self.dims;
        writeln!(w, "{d1} {d2} {d3}")?;
        let mut first = true;
        for c in 0..d3 {
            for a in 0..d1 {
                for b in 0..d2 {
                    if !first {
                        w.write_all(b" ")?;
                    }
                    first = false;
                    write!(w, "{}", self[(a, b, c)])?;
                }
            }
        }
        writeln!(w)?;
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut header: Option<[usize; 3]> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if header.is_none() {
                if line.trim().is_empty() {
                    continue;
                }
                let parts: Vec<usize> = line
                    .split_whitespace()
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line: lineno + 1,
                        msg: format!("bad dump header: {e}"),
                    })?;
                if parts.len() != 3 {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "dump header must be `d1 d2 d3`".into(),
                    });
                }
                header = Some([parts[0], parts[1], parts[2]]);
                continue;
            }
            for tok in line.split_whitespace() {
                let v = tok.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad value {tok:?}: {e}"),
                })?;
                tokens.push(v);
            }
        }
        let dims = header.ok_or(Error::Parse {
            line: 0,
            msg: "missing dump header".into(),
        })?;
        let len: usize = dims.iter().product();
        if tokens.len() != len {
            return Err(Error::Shape(format!(
                "dump has {} values, header {:?} needs {}",
                tokens.len(),
                dims,
                len
            )));
        }
        let mut out = Tensor3::zeros(dims);
        let mut it = tokens.into_iter();
        for c in 0..dims[2] {
            for a in 0..dims[0] {
                for b in 0..dims[1] {
                    out[(a, b, c)] = it.next().unwrap_or_default();
                }
            }
        }
        Ok(out)
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;

    #[inline]
    fn index(&self, (a, b, c): (usize, usize, usize)) -> &f64 {
        &self.values[self.offset(a, b, c)]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    #[inline]
    fn index_mut(&mut self, (a, b, c): (usize, usize, usize)) -> &mut f64 {
        let k = self.offset(a, b, c);
        &mut self.values[k]
    }
}

/// Generalized unfolding of `t` along `mode`.
pub fn unfold(t: &Tensor3, mode: Mode) -> DMatrix<f64> {
    let [d1, d2, d3] = t.dims;
    match mode {
        Mode::I => DMatrix::from_column_slice(d1, d2 * d3, &t.values),
        Mode::J => {
            let mut m = DMatrix::zeros(d2, d1 * d3);
            for c in 0..d3 {
                for b in 0..d2 {
                    for a in 0..d1 {
                        m[(b, a + d1 * c)] = t[(a, b, c)];
                    }
                }
            }
            m
        }
        Mode::N => DMatrix::from_row_slice(d3, d1 * d2, &t.values),
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: &DMatrix<f64>, dims: [usize; 3], mode: Mode) -> Result<Tensor3> {
    let [d1, d2, d3] = dims;
    let expected = match mode {
        Mode::I => (d1, d2 * d3),
        Mode::J => (d2, d1 * d3),
        Mode::N => (d3, d1 * d2),
    };
    if m.shape() != expected {
        return Err(Error::Shape(format!(
            "cannot fold {:?} matrix into {:?} along mode {}",
            m.shape(),
            dims,
            mode
        )));
    }
    let t = match mode {
        Mode::I => Tensor3 {
            dims,
            values: m.as_slice().to_vec(),
        },
        Mode::J => Tensor3::from_fn(dims, |a, b, c| m[(b, a + d1 * c)]),
        Mode::N => Tensor3::from_fn(dims, |a, b, c| m[(c, a + d1 * b)]),
    };
    Ok(t)
}

pub fn frob_norm(t: &Tensor3) -> f64 {
    t.values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frob_dist(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "frob_dist of {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// The three latent factors `G_i (I,f,f)`, `G_j (f,J,f)`, `G_n (f,f,N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTriple {
    gi: Tensor3,
    gj: Tensor3,
    gn: Tensor3,
    rank: usize,
}

impl FactorTriple {
    pub fn new(gi: Tensor3, gj: Tensor3, gn: Tensor3) -> Result<Self> {
        let f = gi.dims[1];
        let ok = f >= 1
            && gi.dims[2] == f
            && gj.dims[0] == f
            && gj.dims[2] == f
            && gn.dims[0] == f
            && gn.dims[1] == f;
        if !ok {
            return Err(Error::Shape(format!(
                "inconsistent factor ranks: G_i {:?}, G_j {:?}, G_n {:?}",
                gi.dims, gj.dims, gn.dims
            )));
        }
        Ok(Self {
            gi,
            gj,
            gn,
            rank: f,
        })
    }

    pub fn zeros(dims: [usize; 3], f: usize) -> Self {
        let [i, j, n] = dims;
        Self {
            gi: Tensor3::zeros([i, f, f]),
            gj: Tensor3::zeros([f, j, f]),
            gn: Tensor3::zeros([f, f, n]),
            rank: f,
        }
    }

    /// Uniform `[0, scale)` entries, filled `G_i`, then `G_j`, then `G_n`.
    pub fn random<R: Rng + ?Sized>(dims: [usize; 3], f: usize, scale: f64, rng: &mut R) -> Self {
        let [i, j, n] = dims;
        let gi = Tensor3::random_uniform([i, f, f], scale, rng);
        let gj = Tensor3::random_uniform([f, j, f], scale, rng);
        let gn = Tensor3::random_uniform([f, f, n], scale, rng);
        Self {
            gi,
            gj,
            gn,
            rank: f,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Dimensions `(I, J, N)` of the reconstructed tensor.
    pub fn dims(&self) -> [usize; 3] {
        [self.gi.dims[0], self.gj.dims[1], self.gn.dims[2]]
    }

    pub fn gi(&self) -> &Tensor3 {
        &self.gi
    }

    pub fn gj(&self) -> &Tensor3 {
        &self.gj
    }

    pub fn gn(&self) -> &Tensor3 {
        &self.gn
    }

    pub fn factor(&self, mode: Mode) -> &Tensor3 {
        match mode {
            Mode::I => &self.gi,
            Mode::J => &self.gj,
            Mode::N => &self.gn,
        }
    }

    /// Replaces one factor; its shape must match the one it replaces.
    pub fn set_factor(&mut self, mode: Mode, value: Tensor3) -> Result<()> {
        let slot = match mode {
            Mode::I => &mut self.gi,
            Mode::J => &mut self.gj,
            Mode::N => &mut self.gn,
        };
        if slot.dims != value.dims {
            return Err(Error::Shape(format!(
                "replacing G_{mode} {:?} with {:?}",
                slot.dims, value.dims
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn into_parts(self) -> (Tensor3, Tensor3, Tensor3) {
        (self.gi, self.gj, self.gn)
    }

    pub fn is_finite(&self) -> bool {
        self.gi.is_finite() && self.gj.is_finite() && self.gn.is_finite()
    }

    /// Single reconstructed entry `ê_ijn`, evaluated directly.
    pub fn entry(&self, i: usize, j: usize, n: usize) -> f64 {
        let f = self.rank;
        let mut acc = 0.0;
        for z in 0..f {
            for y in 0..f {
                let gn = self.gn[(y, z, n)];
                if gn == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for x in 0..f {
                    inner += self.gi[(i, x, y)] * self.gj[(x, j, z)];
                }
                acc += inner * gn;
            }
        }
        acc
    }

    /// Latent matricization `H_mode` built from the two factors other than
    /// `mode`.
    pub fn partial_contract(&self, mode: Mode) -> DMatrix<f64> {
        let (a, b) = match mode {
            Mode::I => (&self.gj, &self.gn),
            Mode::J => (&self.gi, &self.gn),
            Mode::N => (&self.gi, &self.gj),
        };
        // shapes are guaranteed by construction
        partial_contract_pair(a, b, mode).expect("factor triple shapes are consistent")
    }
}

/// Contracts the two factors that remain when `mode` is omitted over their
/// shared latent index, returning the `f^2 x (product of remaining dims)`
/// matrix `H` such that `unfold(Ê, mode) = unfold(G_mode, mode) * H`.
///
/// Argument order follows the triple: for `Mode::I` pass `(G_j, G_n)`, for
/// `Mode::J` pass `(G_i, G_n)`, for `Mode::N` pass `(G_i, G_j)`.
pub fn partial_contract_pair(a: &Tensor3, b: &Tensor3, mode: Mode) -> Result<DMatrix<f64>> {
    let shape_err = || {
        Error::Shape(format!(
            "cannot contract {:?} with {:?} for mode {}",
            a.dims, b.dims, mode
        ))
    };
    match mode {
        Mode::I => {
            // a = G_j (f, J, f), b = G_n (f, f, N)
            let [f, jd, f2] = a.dims;
            let [f3, f4, nd] = b.dims;
            if f == 0 || f2 != f || f3 != f || f4 != f {
                return Err(shape_err());
            }
            let ff = f * f;
            let mut h = DMatrix::zeros(ff, jd * nd);
            let hs = h.as_mut_slice();
            for n in 0..nd {
                for j in 0..jd {
                    let col = &mut hs[(j + jd * n) * ff..(j + jd * n + 1) * ff];
                    for z in 0..f {
                        for y in 0..f {
                            let bv = b[(y, z, n)];
                            let base = f * y;
                            for x in 0..f {
                                col[x + base] += a[(x, j, z)] * bv;
                            }
                        }
                    }
                }
            }
            Ok(h)
        }
        Mode::J => {
            // a = G_i (I, f, f), b = G_n (f, f, N)
            let [id, f, f2] = a.dims;
            let [f3, f4, nd] = b.dims;
            if f == 0 || f2 != f || f3 != f || f4 != f {
                return Err(shape_err());
            }
            let ff = f * f;
            let mut h = DMatrix::zeros(ff, id * nd);
            let hs = h.as_mut_slice();
            for n in 0..nd {
                for i in 0..id {
                    let col = &mut hs[(i + id * n) * ff..(i + id * n + 1) * ff];
                    for z in 0..f {
                        for y in 0..f {
                            let bv = b[(y, z, n)];
                            let base = f * z;
                            for x in 0..f {
                                col[x + base] += a[(i, x, y)] * bv;
                            }
                        }
                    }
                }
            }
            Ok(h)
        }
        Mode::N => {
            // a = G_i (I, f, f), b = G_j (f, J, f)
            let [id, f, f2] = a.dims;
            let [f3, jd, f4] = b.dims;
            if f == 0 || f2 != f || f3 != f || f4 != f {
                return Err(shape_err());
            }
            let ff = f * f;
            let mut h = DMatrix::zeros(ff, id * jd);
            let hs = h.as_mut_slice();
            for j in 0..jd {
                for i in 0..id {
                    let col = &mut hs[(i + id * j) * ff..(i + id * j + 1) * ff];
                    for z in 0..f {
                        for y in 0..f {
                            let mut acc = 0.0;
                            for x in 0..f {
                                acc += a[(i, x, y)] * b[(x, j, z)];
                            }
                            col[y + f * z] = acc;
                        }
                    }
                }
            }
            Ok(h)
        }
    }
}

/// Full F3TN reconstruction `Ê`.
///
/// `G_j` and `G_n` are contracted over `z` first, then the result is
/// multiplied against the mode-`i` unfolding of `G_i`.
pub fn f3tn_contract(factors: &FactorTriple) -> Tensor3 {
    let h = factors.partial_contract(Mode::I);
    let g = unfold(&factors.gi, Mode::I);
    let recon = g * h;
    Tensor3 {
        dims: factors.dims(),
        values: recon.as_slice().to_vec(),
    }
}
