//! Factor checkpoints and solver trace export.
//!
//! Checkpoints store `I J N f` followed by `G_i`, `G_j`, `G_n` in storage
//! order (first index fastest, which is the latent-pair flattening with the
//! first latent index fastest). The text variant writes one factor per line
//! using shortest round-trip float formatting; the binary variant is
//!
//! ```text
//! b"ENTNCKPT" | I J N f as u64 LE | per factor: len u64 LE, len f64 LE values
//! ```

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::solver::TraceRecord;
use crate::tensor::{FactorTriple, Tensor3};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ENTNCKPT";

pub fn write_checkpoint_text<W: Write>(factors: &FactorTriple, mut w: W) -> Result<()> {
    let [i, j, n] = factors.dims();
    writeln!(w, "{} {} {} {}", i, j, n, factors.rank())?;
    for g in [factors.gi(), factors.gj(), factors.gn()] {
        let mut first = true;
        for v in g.values() {
            if !first {
                w.write_all(b" ")?;
            }
            first = false;
            write!(w, "{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_checkpoint_binary<W: Write>(factors: &FactorTriple, mut w: W) -> Result<()> {
    let [i, j, n] = factors.dims();
    w.write_all(CHECKPOINT_MAGIC)?;
    for d in [i, j, n, factors.rank()] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for g in [factors.gi(), factors.gj(), factors.gn()] {
        w.write_all(&(g.len() as u64).to_le_bytes())?;
        for v in g.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads either checkpoint variant, detected by the magic prefix.
pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<FactorTriple> {
    let head = r.fill_buf()?;
    if head.starts_with(CHECKPOINT_MAGIC) {
        read_binary(r)
    } else {
        read_text(r)
    }
}

fn factor_dims(i: usize, j: usize, n: usize, f: usize) -> [[usize; 3]; 3] {
    [[i, f, f], [f, j, f], [f, f, n]]
}

fn read_text<R: BufRead>(r: R) -> Result<FactorTriple> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty checkpoint".into(),
    })?;
    let header = header?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: format!("bad checkpoint header: {e}"),
        })?;
    let &[i, j, n, f] = dims.as_slice() else {
        return Err(Error::Parse {
            line: 1,
            msg: "checkpoint header must be `I J N f`".into(),
        });
    };
    let mut factors = Vec::with_capacity(3);
    for fd in factor_dims(i, j, n, f) {
        let (k, line) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "checkpoint is missing a factor".into(),
        })?;
        let line = line?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: k + 1,
                msg: format!("bad factor value: {e}"),
            })?;
        factors.push(Tensor3::from_vec(fd, values)?);
    }
    let gn = factors.pop().expect("three factors");
    let gj = factors.pop().expect("three factors");
    let gi = factors.pop().expect("three factors");
    FactorTriple::new(gi, gj, gn)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_binary<R: Read>(mut r: R) -> Result<FactorTriple> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = read_u64(&mut r)? as usize;
    }
    let [i, j, n, f] = dims;
    let mut factors = Vec::with_capacity(3);
    for fd in factor_dims(i, j, n, f) {
        let len = read_u64(&mut r)? as usize;
        let expected: usize = fd.iter().product();
        if len != expected {
            return Err(Error::Shape(format!(
                "binary checkpoint factor has {len} values, expected {expected}"
            )));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_bits(read_u64(&mut r)?));
        }
        factors.push(Tensor3::from_vec(fd, values)?);
    }
    let gn = factors.pop().expect("three factors");
    let gj = factors.pop().expect("three factors");
    let gi = factors.pop().expect("three factors");
    FactorTriple::new(gi, gj, gn)
}

/// Writes `s,f,objective,rel_change`, preceded by `# key=value` metadata
/// lines.
pub fn write_trace_csv<W: Write>(
    trace: &[TraceRecord],
    metadata: &[(&str, String)],
    mut w: W,
) -> Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "s,f,objective,rel_change")?;
    for r in trace {
        writeln!(w, "{},{},{},{}", r.s, r.f, r.objective, r.rel_change)?;
    }
    Ok(())
}

/// One parsed trace row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub s: usize,
    pub f: usize,
    pub objective: f64,
    pub rel_change: f64,
}

pub type TraceMetadata = Vec<(String, String)>;

/// Reads a trace CSV back, returning metadata pairs and rows.
pub fn read_trace_csv<R: BufRead>(r: R) -> Result<(TraceMetadata, Vec<TraceRow>)> {
    let mut meta = Vec::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((key, value)) = rest.trim().split_once('=') {
                meta.push((key.to_string(), value.to_string()));
            }
            continue;
        }
        if !seen_header {
            seen_header = true;
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: k + 1, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 fields, found {}",
                fields.len()
            )));
        }
        rows.push(TraceRow {
            s: fields[0].parse().map_err(|e| parse_err(format!("{e}")))?,
            f: fields[1].parse().map_err(|e| parse_err(format!("{e}")))?,
            objective: fields[2].parse().map_err(|e| parse_err(format!("{e}")))?,
            rel_change: fields[3].parse().map_err(|e| parse_err(format!("{e}")))?,
        });
    }
    Ok((meta, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> FactorTriple {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = FactorTriple::random([3, 4, 5], 2, 1.0, &mut rng);
        let mut gi = f.gi().clone();
        gi[(0, 0, 0)] = -1.0 / 3.0;
        gi[(1, 1, 1)] = 1e-300;
        f.set_factor(crate::tensor::Mode::I, gi).unwrap();
        f
    }

    #[test]
    fn text_checkpoint_roundtrips_exactly() {
        let f = sample();
        let mut buf = Vec::new();
        write_checkpoint_text(&f, &mut buf).unwrap();
        assert!(buf.starts_with(b"3 4 5 2\n"));
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), f);
    }

    #[test]
    fn binary_checkpoint_roundtrips_exactly() {
        let f = sample();
        let mut buf = Vec::new();
        write_checkpoint_binary(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 32 + 3 * 8 + 8 * (12 + 16 + 20));
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), f);
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let f = sample();
        let mut buf = Vec::new();
        write_checkpoint_text(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(read_checkpoint(cut.as_bytes()).is_err());
        assert!(read_checkpoint(&b"1 2 3\n"[..]).is_err());
    }

    #[test]
    fn trace_csv_roundtrip() {
        let trace = vec![
            TraceRecord {
                s: 1,
                f: 1,
                objective: 0.5,
                sweep_objective: 0.5,
                rel_change: f64::INFINITY,
                grew: false,
                max_residual: 0.0,
            },
            TraceRecord {
                s: 2,
                f: 2,
                objective: 0.25,
                sweep_objective: 0.2,
                rel_change: 0.004,
                grew: true,
                max_residual: 0.0,
            },
        ];
        let mut buf = Vec::new();
        write_trace_csv(&trace, &[("model", "ENTN".into())], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "# model=ENTN\ns,f,objective,rel_change\n1,1,0.5,inf\n2,2,0.25,0.004\n"
        );
        let (meta, rows) = read_trace_csv(&buf[..]).unwrap();
        assert_eq!(meta, vec![("model".to_string(), "ENTN".to_string())]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].f, 2);
        assert!(rows[0].rel_change.is_infinite());
    }
}
