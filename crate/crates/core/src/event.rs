//! Event streams and their binarized tensor representation.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Label carried by background-noise events in labeled streams.
pub const NOISE_LABEL: i64 = -1;

/// Sensor geometry: `rows` (I) by `cols` (J) pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub rows: usize,
    pub cols: usize,
}

impl Geometry {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.rows && j < self.cols
    }
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    /// Parses `ROWSxCOLS`, e.g. `346x260`.
    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Argument(format!("geometry {s:?} is not ROWSxCOLS")))?;
        let rows = r
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("bad row count in {s:?}")))?;
        let cols = c
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("bad column count in {s:?}")))?;
        if rows == 0 || cols == 0 {
            return Err(Error::Argument(format!("geometry {s:?} has a zero side")));
        }
        Ok(Self { rows, cols })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    pub i: usize,
    pub j: usize,
    pub label: Option<i64>,
}

impl Event {
    pub fn new(i: usize, j: usize, t: u64) -> Self {
        Self {
            t,
            i,
            j,
            label: None,
        }
    }

    pub fn labeled(i: usize, j: usize, t: u64, label: i64) -> Self {
        Self {
            t,
            i,
            j,
            label: Some(label),
        }
    }
}

/// Time-sorted events over a fixed sensor geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    geometry: Geometry,
    t_min: u64,
    t_max: u64,
}

impl EventStream {
    /// Validates coordinates and sorts by timestamp (stable). The time range
    /// is taken from the data; an empty stream gets `[0, 0]`.
    pub fn new(events: Vec<Event>, geometry: Geometry) -> Result<Self> {
        let t_min = events.iter().map(|e| e.t).min().unwrap_or(0);
        let t_max = events.iter().map(|e| e.t).max().unwrap_or(0);
        Self::with_range(events, geometry, t_min, t_max)
    }

    /// Like [`EventStream::new`] but with an explicit recording window that
    /// must cover every event.
    pub fn with_range(
        mut events: Vec<Event>,
        geometry: Geometry,
        t_min: u64,
        t_max: u64,
    ) -> Result<Self> {
        if t_min > t_max {
            return Err(Error::Argument(format!(
                "time range [{t_min}, {t_max}] is reversed"
            )));
        }
        for (k, e) in events.iter().enumerate() {
            if !geometry.contains(e.i, e.j) {
                return Err(Error::Validation {
                    line: k + 1,
                    msg: format!(
                        "pixel ({}, {}) outside {}x{} sensor",
                        e.i, e.j, geometry.rows, geometry.cols
                    ),
                });
            }
            if e.t < t_min || e.t > t_max {
                return Err(Error::Validation {
                    line: k + 1,
                    msg: format!("timestamp {} outside [{t_min}, {t_max}]", e.t),
                });
            }
        }
        events.sort_by_key(|e| e.t);
        Ok(Self {
            events,
            geometry,
            t_min,
            t_max,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn t_min(&self) -> u64 {
        self.t_min
    }

    pub fn t_max(&self) -> u64 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.events.is_empty() && self.events.iter().all(|e| e.label.is_some())
    }

    /// Writes the canonical CSV. The label column is emitted when every
    /// event carries a label. A recording window wider than the event span
    /// is preserved as a leading `# range T_MIN T_MAX` line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let labeled = self.is_labeled();
        let data_min = self.events.first().map_or(self.t_min, |e| e.t);
        let data_max = self.events.last().map_or(self.t_max, |e| e.t);
        if data_min != self.t_min || data_max != self.t_max {
            writeln!(w, "# range {} {}", self.t_min, self.t_max)?;
        }
        if labeled {
            writeln!(w, "t,i,j,label")?;
        } else {
            writeln!(w, "t,i,j")?;
        }
        for e in &self.events {
            match (labeled, e.label) {
                (true, Some(l)) => writeln!(w, "{},{},{},{}", e.t, e.i, e.j, l)?,
                _ => writeln!(w, "{},{},{}", e.t, e.i, e.j)?,
            }
        }
        Ok(())
    }
}

/// Supported on-disk event formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EventFormat {
    /// Header `t,i,j[,label][,polarity]`, one event per line.
    #[default]
    Csv,
}

#[derive(Clone, Copy, Debug)]
struct CsvColumns {
    t: usize,
    i: usize,
    j: usize,
    label: Option<usize>,
    width: usize,
}

fn parse_header(line: &str) -> Result<CsvColumns> {
    let mut t = None;
    let mut i = None;
    let mut j = None;
    let mut label = None;
    let names: Vec<&str> = line.split(',').map(str::trim).collect();
    for (k, name) in names.iter().enumerate() {
        let slot = match name.to_ascii_lowercase().as_str() {
            "t" => &mut t,
            "i" => &mut i,
            "j" => &mut j,
            "label" => &mut label,
            "polarity" | "p" => continue,
            other => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("unknown column {other:?}"),
                })
            }
        };
        if slot.replace(k).is_some() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("duplicate column {name:?}"),
            });
        }
    }
    match (t, i, j) {
        (Some(t), Some(i), Some(j)) => Ok(CsvColumns {
            t,
            i,
            j,
            label,
            width: names.len(),
        }),
        _ => Err(Error::Parse {
            line: 1,
            msg: "header must name columns t, i and j".into(),
        }),
    }
}

/// Reads and validates an event stream.
pub fn parse_events<R: BufRead>(
    source: R,
    format: EventFormat,
    geometry: Geometry,
) -> Result<EventStream> {
    match format {
        EventFormat::Csv => parse_csv(source, geometry),
    }
}

fn parse_csv<R: BufRead>(source: R, geometry: Geometry) -> Result<EventStream> {
    let mut cols: Option<CsvColumns> = None;
    let mut range: Option<(u64, u64)> = None;
    let mut events = Vec::new();
    for (k, line) in source.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# range") {
            let bounds: Vec<u64> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad range directive {line:?}"),
                })?;
            let &[lo, hi] = bounds.as_slice() else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "range directive needs `T_MIN T_MAX`".into(),
                });
            };
            range = Some((lo, hi));
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some(c) = cols else {
            cols = Some(parse_header(line).map_err(|e| match e {
                Error::Parse { msg, .. } => Error::Parse { line: lineno, msg },
                other => other,
            })?);
            continue;
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != c.width {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} fields, found {}", c.width, fields.len()),
            });
        }
        let field = |idx: usize, name: &str| -> Result<u64> {
            fields[idx].parse::<u64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("{name} {:?} is not a non-negative integer", fields[idx]),
            })
        };
        let t = field(c.t, "t")?;
        let i = field(c.i, "i")? as usize;
        let j = field(c.j, "j")? as usize;
        let label = match c.label {
            Some(idx) => Some(fields[idx].parse::<i64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("label {:?} is not an integer", fields[idx]),
            })?),
            None => None,
        };
        if !geometry.contains(i, j) {
            return Err(Error::Validation {
                line: lineno,
                msg: format!(
                    "pixel ({i}, {j}) outside {}x{} sensor",
                    geometry.rows, geometry.cols
                ),
            });
        }
        events.push(Event { t, i, j, label });
    }
    if events.is_empty() {
        return Err(Error::EmptyStream);
    }
    match range {
        Some((lo, hi)) => EventStream::with_range(events, geometry, lo, hi),
        None => EventStream::new(events, geometry),
    }
}

/// Equal-width integer time bins over a recording window.
///
/// Widths differ by at most one microsecond: the remainder of the division
/// goes to the leading bins. Bins are half-open except the last, which is
/// closed. A window shorter than the bin count is widened to one microsecond
/// per bin so edges stay strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeBins {
    edges: Vec<u64>,
    base: u64,
    rem: u64,
}

impl TimeBins {
    pub fn new(t_min: u64, t_max: u64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Argument("segment count must be at least 1".into()));
        }
        if t_max < t_min {
            return Err(Error::Argument(format!(
                "time range [{t_min}, {t_max}] is reversed"
            )));
        }
        let n = count as u64;
        let span = (t_max - t_min).max(n);
        let base = span / n;
        let rem = span % n;
        let mut edges = Vec::with_capacity(count + 1);
        let mut edge = t_min;
        edges.push(edge);
        for k in 0..n {
            edge += base + u64::from(k < rem);
            edges.push(edge);
        }
        Ok(Self { edges, base, rem })
    }

    pub fn count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[u64] {
        &self.edges
    }

    /// Bin holding timestamp `t`, or `None` outside the window.
    pub fn bin_of(&self, t: u64) -> Option<usize> {
        let start = self.edges[0];
        let end = *self.edges.last().expect("at least two edges");
        if t < start || t > end {
            return None;
        }
        let off = t - start;
        let wide = self.base + 1;
        let boundary = self.rem * wide;
        let k = if off < boundary {
            off / wide
        } else {
            self.rem + (off - boundary) / self.base
        };
        Some((k as usize).min(self.count() - 1))
    }
}

/// Binary `I x J x N` event tensor plus its time binning.
#[derive(Clone, Debug, PartialEq)]
pub struct EventTensor {
    dims: [usize; 3],
    /// 0/1 entries, first-index-fastest like [`Tensor3`].
    data: Vec<u8>,
    bins: TimeBins,
}

impl EventTensor {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bins(&self) -> &TimeBins {
        &self.bins
    }

    pub fn bin_edges(&self) -> &[u64] {
        self.bins.edges()
    }

    pub fn get(&self, i: usize, j: usize, n: usize) -> u8 {
        let [d1, d2, _] = self.dims;
        self.data[i + d1 * (j + d2 * n)]
    }

    pub fn ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Coordinates `(i, j, n)` of an event, if it falls in the window.
    pub fn locate(&self, e: &Event) -> Option<(usize, usize, usize)> {
        if e.i >= self.dims[0] || e.j >= self.dims[1] {
            return None;
        }
        self.bins.bin_of(e.t).map(|n| (e.i, e.j, n))
    }

    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::from_vec(self.dims, self.data.iter().map(|&v| f64::from(v)).collect())
            .expect("dims match data length")
    }

    pub fn write_dump<W: Write>(&self, w: W) -> Result<()> {
        self.to_tensor().write_dump(w)
    }
}

/// Binarizes `stream` into `segments` equal-width time bins over the
/// stream's recording window.
pub fn bin_to_tensor(stream: &EventStream, segments: usize) -> Result<EventTensor> {
    if segments == 0 {
        return Err(Error::Argument("segment count must be at least 1".into()));
    }
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let bins = TimeBins::new(stream.t_min, stream.t_max, segments)?;
    let Geometry { rows, cols } = stream.geometry;
    let mut data = vec![0u8; rows * cols * segments];
    for e in &stream.events {
        let n = bins
            .bin_of(e.t)
            .expect("stream invariant keeps events inside the window");
        data[e.i + rows * (e.j + cols * n)] = 1;
    }
    Ok(EventTensor {
        dims: [rows, cols, segments],
        data,
        bins,
    })
}

/// Fraction of entries equal to one.
pub fn tensor_density(tensor: &EventTensor) -> f64 {
    let total = tensor.data.len();
    if total == 0 {
        return 0.0;
    }
    tensor.ones() as f64 / total as f64
}
