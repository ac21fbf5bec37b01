//! Collocation, boundary, initial and observation point sets over
//! hyperrectangular space-time domains.
//!
//! Point rows are laid out as `[t, x1, …, xd]` for time-dependent problems
//! and `[x1, …, xd]` otherwise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Grid,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    /// `(lo, hi)` per spatial axis, at most three.
    pub space: Vec<(f64, f64)>,
    /// `(t0, T)` when the problem is time-dependent.
    #[serde(default)]
    pub time: Option<(f64, f64)>,
}

impl Domain {
    pub fn new(space: Vec<(f64, f64)>, time: Option<(f64, f64)>) -> Result<Self> {
        let d = Self { space, time };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.space.len() > 3 {
            return Err(Error::InvalidDomain("at most three spatial axes".into()));
        }
        if self.space.is_empty() && self.time.is_none() {
            return Err(Error::InvalidDomain("domain has no axes".into()));
        }
        for (i, &(lo, hi)) in self.space.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidDomain(format!("axis {i}: need lo < hi, got ({lo}, {hi})")));
            }
        }
        if let Some((t0, t1)) = self.time {
            if !(t0 < t1) {
                return Err(Error::InvalidDomain(format!("time: need t0 < T, got ({t0}, {t1})")));
            }
        }
        Ok(())
    }

    pub fn has_time(&self) -> bool {
        self.time.is_some()
    }

    pub fn space_dim(&self) -> usize {
        self.space.len()
    }

    /// All axes in column order: time first when present.
    pub fn axes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.space.len() + 1);
        out.extend(self.time);
        out.extend(self.space.iter().copied());
        out
    }

    pub fn ncols(&self) -> usize {
        self.space.len() + usize::from(self.has_time())
    }

    /// Column index of spatial axis `i`.
    pub fn space_col(&self, i: usize) -> usize {
        i + usize::from(self.has_time())
    }

    pub fn contains(&self, row: &[f64]) -> bool {
        self.axes()
            .iter()
            .zip(row)
            .all(|(&(lo, hi), &v)| lo <= v && v <= hi)
    }
}

/// `k` evenly spaced points including both endpoints; one point is the midpoint.
pub fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (k - 1) as f64;
            let mut v: Vec<f64> = (0..k).map(|i| lo + i as f64 * step).collect();
            v[k - 1] = hi;
            v
        }
    }
}

/// Exact integer `axes`-th root of `n`, if any.
fn integer_root(n: usize, axes: u32) -> Option<usize> {
    if axes == 0 {
        return (n == 1).then_some(1);
    }
    let guess = (n as f64).powf(1.0 / axes as f64).round() as usize;
    (guess.saturating_sub(1)..=guess + 1).find(|&k| k.checked_pow(axes) == Some(n))
}

/// Cartesian product of per-axis coordinates, last axis fastest.
fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut rows = vec![Vec::with_capacity(axes.len())];
    for coords in axes {
        let mut next = Vec::with_capacity(rows.len() * coords.len());
        for r in &rows {
            for &c in coords {
                let mut row = r.clone();
                row.push(c);
                next.push(row);
            }
        }
        rows = next;
    }
    rows
}

fn sample_box(bounds: &[(f64, f64)], n: usize, scheme: Scheme, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    match scheme {
        Scheme::Grid => {
            let k = integer_root(n, bounds.len() as u32).ok_or_else(|| {
                Error::GridSize(format!("{n} points is not a perfect power for {} axes", bounds.len()))
            })?;
            let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| linspace(lo, hi, k)).collect();
            Ok(cartesian(&axes))
        }
        Scheme::Uniform => Ok((0..n)
            .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
            .collect()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>, width: usize) -> Tensor {
    let n = rows.len();
    Tensor::new(&[n, width], rows.into_iter().flatten().collect()).expect("rectangular rows")
}

pub fn sample_interior(dom: &Domain, n: usize, scheme: Scheme, seed: u64) -> Result<Tensor> {
    sample_interior_at(dom, n, scheme, seed, 0)
}

/// Interior draw number `ordinal` of a stream; draws with different ordinals
/// are independent, equal ordinals replay.
pub fn sample_interior_at(dom: &Domain, n: usize, scheme: Scheme, seed: u64, ordinal: u64) -> Result<Tensor> {
    dom.validate()?;
    if n == 0 {
        return Err(Error::GridSize("need at least one interior point".into()));
    }
    let mut rng = rng::stream_at(seed, streams::INTERIOR, ordinal);
    let rows = sample_box(&dom.axes(), n, scheme, &mut rng)?;
    Ok(to_matrix(rows, dom.ncols()))
}

/// Interior grid with an explicit point count per axis (column order).
pub fn sample_interior_grid(dom: &Domain, counts: &[usize]) -> Result<Tensor> {
    dom.validate()?;
    let axes = dom.axes();
    if counts.len() != axes.len() || counts.contains(&0) {
        return Err(Error::GridSize(format!(
            "need one positive count per axis ({}), got {counts:?}",
            axes.len()
        )));
    }
    let coords: Vec<Vec<f64>> = axes
        .iter()
        .zip(counts)
        .map(|(&(lo, hi), &k)| linspace(lo, hi, k))
        .collect();
    Ok(to_matrix(cartesian(&coords), dom.ncols()))
}

/// Axis-aligned facet of the spatial box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facet {
    pub axis: usize,
    /// `false` for the `lo` face (outward normal `-e_axis`), `true` for `hi`.
    pub upper: bool,
}

impl Facet {
    pub fn id(self) -> usize {
        2 * self.axis + usize::from(self.upper)
    }

    pub fn outward_sign(self) -> f64 {
        if self.upper {
            1.0
        } else {
            -1.0
        }
    }
}

/// Boundary points with the facet each lies on.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySet {
    pub points: Tensor,
    pub facets: Vec<Facet>,
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.facets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    /// Row indices on each facet, by facet id.
    pub fn rows_by_facet(&self) -> Vec<(Facet, Vec<usize>)> {
        let mut groups: Vec<(Facet, Vec<usize>)> = Vec::new();
        for (i, f) in self.facets.iter().enumerate() {
            match groups.iter_mut().find(|(g, _)| g == f) {
                Some((_, rows)) => rows.push(i),
                None => groups.push((*f, vec![i])),
            }
        }
        groups.sort_by_key(|(f, _)| f.id());
        groups
    }
}

/// `2d` facets with `n_per_facet` points each. Coordinates other than the
/// facet's own (including time) are sampled with `scheme`; a facet without
/// free coordinates (the ends of a 1D interval) carries a single point.
pub fn sample_boundary(dom: &Domain, n_per_facet: usize, scheme: Scheme, seed: u64) -> Result<BoundarySet> {
    dom.validate()?;
    if dom.space.is_empty() {
        return Err(Error::InvalidDomain("boundary needs a spatial axis".into()));
    }
    let mut rng = rng::stream(seed, streams::BOUNDARY);
    let axes = dom.axes();
    let mut rows = Vec::new();
    let mut facets = Vec::new();
    for axis in 0..dom.space_dim() {
        let col = dom.space_col(axis);
        let free: Vec<(f64, f64)> = axes
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != col)
            .map(|(_, &b)| b)
            .collect();
        for upper in [false, true] {
            let fixed = if upper { dom.space[axis].1 } else { dom.space[axis].0 };
            let free_rows = if free.is_empty() {
                vec![Vec::new()]
            } else {
                sample_box(&free, n_per_facet, scheme, &mut rng)?
            };
            for fr in free_rows {
                let mut row = fr;
                row.insert(col, fixed);
                rows.push(row);
                facets.push(Facet { axis, upper });
            }
        }
    }
    Ok(BoundarySet {
        points: to_matrix(rows, dom.ncols()),
        facets,
    })
}

/// Spatial points on the initial slice. Rows include the time column, fixed
/// to `t0`, so they feed the surrogate directly.
pub fn sample_initial(dom: &Domain, m: usize, scheme: Scheme, seed: u64) -> Result<Tensor> {
    dom.validate()?;
    let (t0, _) = dom.time.ok_or(Error::StationaryProblem)?;
    if m == 0 {
        return Err(Error::GridSize("need at least one initial point".into()));
    }
    let mut rng = rng::stream(seed, streams::INITIAL);
    let rows = if dom.space.is_empty() {
        vec![Vec::new(); m]
    } else {
        sample_box(&dom.space, m, scheme, &mut rng)?
    };
    let rows = rows
        .into_iter()
        .map(|mut r| {
            r.insert(0, t0);
            r
        })
        .collect();
    Ok(to_matrix(rows, dom.ncols()))
}

/// Epoch-seeded permutation cut into contiguous slices; the last partial
/// batch is kept.
pub fn minibatch(points: &Tensor, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Tensor>> {
    let n = points.nrows();
    if batch_size == 0 || batch_size > n {
        return Err(Error::BatchSize(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream_at(seed, streams::MINIBATCH, epoch));
    Ok(order.chunks(batch_size).map(|rows| points.select_rows(rows)).collect())
}

/// Observed solution values at known points.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub points: Tensor,
    pub values: Tensor,
    pub source: String,
}

impl ObservationSet {
    pub fn new(points: Tensor, values: Tensor, source: impl Into<String>) -> Result<Self> {
        if points.rank() != 2 || values.rank() != 2 || points.nrows() != values.nrows() {
            return Err(Error::Observations("points and values must be row-aligned matrices".into()));
        }
        if points.nrows() == 0 {
            return Err(Error::Observations("at least one observation is required".into()));
        }
        if !points.all_finite() || !values.all_finite() {
            return Err(Error::Observations("non-finite observation".into()));
        }
        Ok(Self {
            points,
            values,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Expected CSV header for a layout.
    pub fn header(has_time: bool, space_dim: usize, out_dim: usize) -> Vec<String> {
        let mut h = Vec::new();
        if has_time {
            h.push("t".to_string());
        }
        h.extend((1..=space_dim).map(|i| format!("x{i}")));
        h.extend((1..=out_dim).map(|i| format!("u{i}")));
        h
    }

    /// Reads `t?,x1..xd,u1..um` CSV (f64 text, comma separated, `#` comment
    /// lines allowed) and checks the header against the layout.
    pub fn read_csv(path: &Path, has_time: bool, space_dim: usize, out_dim: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Observations(format!("{}: {e}", path.display())))?;
        Self::parse_csv(file, &path.display().to_string(), has_time, space_dim, out_dim)
    }

    pub fn parse_csv(
        input: impl std::io::Read,
        source: &str,
        has_time: bool,
        space_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(input);
        let expected = Self::header(has_time, space_dim, out_dim);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Observations(format!("{source}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != expected {
            return Err(Error::Observations(format!(
                "{source}: header {header:?}, expected {expected:?}"
            )));
        }
        let in_cols = expected.len() - out_dim;
        let mut points = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Observations(format!("{source}: {e}")))?;
            let row: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Observations(format!("{source}: record {}: bad number `{s}`", line + 1)))
                })
                .collect::<Result<_>>()?;
            if row.len() != expected.len() {
                return Err(Error::Observations(format!("{source}: record {}: wrong column count", line + 1)));
            }
            points.extend_from_slice(&row[..in_cols]);
            values.extend_from_slice(&row[in_cols..]);
        }
        let k = points.len() / in_cols.max(1);
        Self::new(
            Tensor::new(&[k, in_cols], points)?,
            Tensor::new(&[k, out_dim], values)?,
            source,
        )
    }

    pub fn write_csv(&self, path: &Path, has_time: bool, space_dim: usize) -> Result<()> {
        let out_dim = self.values.ncols();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Observations(e.to_string()))?;
        w.write_record(Self::header(has_time, space_dim, out_dim))
            .map_err(|e| Error::Observations(e.to_string()))?;
        for (p, v) in self.points.rows().zip(self.values.rows()) {
            let rec: Vec<String> = p.iter().chain(v).map(|x| format!("{x:?}")).collect();
            w.write_record(rec).map_err(|e| Error::Observations(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Point sets for one optimization step.
#[derive(Clone, Debug)]
pub struct CollocationBatch {
    pub interior: Tensor,
    pub boundary: Option<BoundarySet>,
    pub initial: Option<Tensor>,
    pub observations: Option<ObservationSet>,
}
