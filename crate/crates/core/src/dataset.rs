//! Distribution-valued regression data.
//!
//! Each input location `x_n` carries an output distribution, stored as a
//! block of samples, as a density tabulated on a one-dimensional grid, or
//! both. Two CSV layouts are supported:
//!
//! * samples: `input_id,x1,..,xd,y1,..,yp`, one row per observation;
//! * gridded: `input_id,x1,..,xd,y,density`, one row per grid node.
//!
//! Lines starting with `#` are comments.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stats::trapezoid_weights;

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct InputPoint {
    pub id: String,
    pub x: Vec<f64>,
}

/// Samples observed at one input, stored row-major with `dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBlock {
    pub input_id: String,
    dim: usize,
    values: Vec<f64>,
}

impl SampleBlock {
    pub fn new(input_id: impl Into<String>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("output dimension must be >= 1".into()));
        }
        if values.is_empty() || values.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form rows of length {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite sample value".into()));
        }
        Ok(Self {
            input_id: input_id.into(),
            dim,
            values,
        })
    }

    /// Univariate block.
    pub fn scalar(input_id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(input_id, 1, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    /// Values of output coordinate `j` across all samples.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }
}

/// A density tabulated on a strictly increasing grid with trapezoidal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedDensity {
    pub input_id: String,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub quad_weights: Vec<f64>,
}

impl GriddedDensity {
    /// Builds a gridded density, renormalizing so that `Σ density·Δy = 1`.
    pub fn new(input_id: impl Into<String>, grid: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid of length {} with {} density values",
                grid.len(),
                density.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        if density.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument("density must be finite and nonnegative".into()));
        }
        let quad_weights = trapezoid_weights(&grid);
        Self::with_weights(input_id, grid, density, quad_weights)
    }

    /// Builds a gridded density with caller-supplied positive quadrature weights.
    pub fn with_weights(
        input_id: impl Into<String>,
        grid: Vec<f64>,
        mut density: Vec<f64>,
        quad_weights: Vec<f64>,
    ) -> Result<Self> {
        if quad_weights.len() != grid.len() || quad_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("quadrature weights must be positive".into()));
        }
        let mass: f64 = density.iter().zip(&quad_weights).map(|(p, w)| p * w).sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidArgument("density has zero mass on its grid".into()));
        }
        density.iter_mut().for_each(|p| *p /= mass);
        Ok(Self {
            input_id: input_id.into(),
            grid,
            density,
            quad_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `Σ density·Δy`.
    pub fn mass(&self) -> f64 {
        self.density.iter().zip(&self.quad_weights).map(|(p, w)| p * w).sum()
    }

    /// Probability mass attached to each node, `p_ℓ Δy_ℓ`.
    pub fn node_masses(&self) -> Vec<f64> {
        self.density.iter().zip(&self.quad_weights).map(|(p, w)| p * w).collect()
    }
}

/// One input location with its observed distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DataEntry {
    pub input: InputPoint,
    pub samples: Option<SampleBlock>,
    pub grid: Option<GriddedDensity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionValuedDataset {
    entries: Vec<DataEntry>,
    input_dim: usize,
    output_dim: usize,
}

impl DistributionValuedDataset {
    pub fn new(entries: Vec<DataEntry>) -> Result<Self> {
        let first = entries.first().ok_or(Error::NoRecords)?;
        let input_dim = first.input.x.len();
        if input_dim == 0 {
            return Err(Error::DimensionMismatch("input dimension must be >= 1".into()));
        }
        let mut output_dim = None;
        for e in &entries {
            if e.input.x.len() != input_dim {
                return Err(Error::DimensionMismatch(format!(
                    "input '{}' has d={} but dataset has d={input_dim}",
                    e.input.id,
                    e.input.x.len()
                )));
            }
            if e.input.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "input '{}' has non-finite coordinates",
                    e.input.id
                )));
            }
            if e.samples.is_none() && e.grid.is_none() {
                return Err(Error::InvalidArgument(format!(
                    "input '{}' has no observations",
                    e.input.id
                )));
            }
            let p = match (&e.samples, &e.grid) {
                (Some(s), _) => s.dim(),
                (None, Some(_)) => 1,
                (None, None) => unreachable!(),
            };
            if e.grid.is_some() && p != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "gridded density at '{}' requires p = 1",
                    e.input.id
                )));
            }
            match output_dim {
                None => output_dim = Some(p),
                Some(q) if q != p => {
                    return Err(Error::DimensionMismatch(format!(
                        "input '{}' has p={p} but dataset has p={q}",
                        e.input.id
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            entries,
            input_dim,
            output_dim: output_dim.unwrap_or(1),
        })
    }

    pub fn entries(&self) -> &[DataEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.input.id.as_str()).collect()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.input.x.clone()).collect()
    }

    /// Restricts the dataset to the given input ids, in dataset order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        let entries: Vec<DataEntry> = self
            .entries
            .iter()
            .filter(|e| keep.contains(e.input.id.as_str()))
            .cloned()
            .collect();
        Self::new(entries)
    }

    /// Attaches gridded densities from `other` to matching input ids.
    pub fn merge_grids(&mut self, other: &DistributionValuedDataset) {
        let lookup: std::collections::HashMap<&str, &GriddedDensity> = other
            .entries
            .iter()
            .filter_map(|e| e.grid.as_ref().map(|g| (e.input.id.as_str(), g)))
            .collect();
        for e in &mut self.entries {
            if let Some(g) = lookup.get(e.input.id.as_str()) {
                e.grid = Some((*g).clone());
            }
        }
    }
}

/// Column layout of a CSV file, parsed from its header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub input_dim: usize,
    pub output_dim: usize,
}

fn parse_header(header: &csv::StringRecord) -> Result<(ColumnSpec, bool)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.first() != Some(&"input_id") {
        return Err(Error::Parse {
            line: 1,
            message: "first column must be 'input_id'".into(),
        });
    }
    let xs = names[1..].iter().take_while(|n| is_indexed(n, 'x')).count();
    let rest = &names[1 + xs..];
    if xs == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "header declares no x columns".into(),
        });
    }
    for (i, n) in names[1..1 + xs].iter().enumerate() {
        if *n != format!("x{}", i + 1) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column 'x{}', found '{n}'", i + 1),
            });
        }
    }
    if rest == ["y", "density"] {
        return Ok((
            ColumnSpec {
                input_dim: xs,
                output_dim: 1,
            },
            true,
        ));
    }
    if rest.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "header declares no y columns".into(),
        });
    }
    for (i, n) in rest.iter().enumerate() {
        if *n != format!("y{}", i + 1) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column 'y{}', found '{n}'", i + 1),
            });
        }
    }
    Ok((
        ColumnSpec {
            input_dim: xs,
            output_dim: rest.len(),
        },
        false,
    ))
}

fn is_indexed(name: &str, prefix: char) -> bool {
    name.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader)
}

fn parse_field(record: &csv::StringRecord, idx: usize, line: u64) -> Result<f64> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing column {}", idx + 1),
    })?;
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {} is not numeric: '{raw}'", idx + 1),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {} is not finite: '{raw}'", idx + 1),
        });
    }
    Ok(v)
}

struct Group {
    x: Vec<f64>,
    values: Vec<f64>,
    first_line: u64,
}

/// Reads a CSV in either the sample or the gridded layout (detected from the header).
pub fn read_csv<R: Read>(reader: R) -> Result<DistributionValuedDataset> {
    let mut rdr = csv_reader(reader);
    let header = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(Error::NoRecords),
        Err(e) => return Err(csv_error(e)),
    };
    let (spec, gridded) = parse_header(&header)?;
    let width = 1 + spec.input_dim + if gridded { 2 } else { spec.output_dim };

    let mut groups: IndexMap<String, Group> = IndexMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let id = rec[0].to_string();
        let x = (1..=spec.input_dim)
            .map(|i| parse_field(&rec, i, line))
            .collect::<Result<Vec<_>>>()?;
        let vals = (1 + spec.input_dim..width)
            .map(|i| parse_field(&rec, i, line))
            .collect::<Result<Vec<_>>>()?;
        let g = groups.entry(id.clone()).or_insert_with(|| Group {
            x: x.clone(),
            values: Vec::new(),
            first_line: line,
        });
        if g.x != x {
            return Err(Error::Parse {
                line,
                message: format!(
                    "input '{id}' has coordinates differing from line {}",
                    g.first_line
                ),
            });
        }
        g.values.extend(vals);
    }
    if groups.is_empty() {
        return Err(Error::NoRecords);
    }

    let entries = groups
        .into_iter()
        .map(|(id, g)| {
            let input = InputPoint { id: id.clone(), x: g.x };
            if gridded {
                let (grid, density): (Vec<f64>, Vec<f64>) =
                    g.values.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
                let grid = GriddedDensity::new(id, grid, density).map_err(|e| Error::Parse {
                    line: g.first_line,
                    message: e.to_string(),
                })?;
                Ok(DataEntry {
                    input,
                    samples: None,
                    grid: Some(grid),
                })
            } else {
                Ok(DataEntry {
                    input,
                    samples: Some(SampleBlock::new(id, spec.output_dim, g.values)?),
                    grid: None,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DistributionValuedDataset::new(entries)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Loads a sample or gridded CSV from disk.
pub fn load_csv(path: impl AsRef<Path>) -> Result<DistributionValuedDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

/// Loads a sample CSV, rejecting the gridded layout.
pub fn load_samples(path: impl AsRef<Path>) -> Result<DistributionValuedDataset> {
    let ds = load_csv(path)?;
    if ds.entries().iter().any(|e| e.samples.is_none()) {
        return Err(Error::InvalidArgument(
            "expected sample layout 'input_id,x1..xd,y1..yp'".into(),
        ));
    }
    Ok(ds)
}

fn write_header<W: Write>(out: &mut W, d: usize, tail: &[String]) -> std::io::Result<()> {
    let mut cols = vec!["input_id".to_string()];
    cols.extend((1..=d).map(|i| format!("x{i}")));
    cols.extend(tail.iter().cloned());
    writeln!(out, "{}", cols.join(","))
}

fn fmt_row(id: &str, x: &[f64], vals: &[f64]) -> String {
    let mut s = String::with_capacity(16 * (1 + x.len() + vals.len()));
    s.push_str(id);
    for v in x.iter().chain(vals) {
        s.push(',');
        s.push_str(&v.to_string());
    }
    s
}

/// Writes all sample blocks in the sample layout.
pub fn write_samples<W: Write>(ds: &DistributionValuedDataset, mut out: W) -> Result<()> {
    let p = ds.output_dim();
    let tail: Vec<String> = (1..=p).map(|j| format!("y{j}")).collect();
    write_header(&mut out, ds.input_dim(), &tail)?;
    for e in ds.entries() {
        if let Some(s) = &e.samples {
            for row in s.rows() {
                writeln!(out, "{}", fmt_row(&e.input.id, &e.input.x, row))?;
            }
        }
    }
    Ok(())
}

/// Writes all gridded densities in the gridded layout.
pub fn write_grids<W: Write>(ds: &DistributionValuedDataset, mut out: W) -> Result<()> {
    write_header(&mut out, ds.input_dim(), &["y".into(), "density".into()])?;
    for e in ds.entries() {
        if let Some(g) = &e.grid {
            for (y, p) in g.grid.iter().zip(&g.density) {
                writeln!(out, "{}", fmt_row(&e.input.id, &e.input.x, &[*y, *p]))?;
            }
        }
    }
    Ok(())
}

/// Fixed-bin histogram over the block's own range `[min, max]`, reported
/// at bin centers with constant bin width as the quadrature weight.
pub fn to_histogram(block: &SampleBlock, bins: usize) -> Result<GriddedDensity> {
    if block.dim() != 1 {
        return Err(Error::DimensionMismatch("histograms require p = 1".into()));
    }
    if bins < 2 {
        return Err(Error::InvalidArgument("histogram needs at least 2 bins".into()));
    }
    let v = block.values();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !(hi > lo) {
        return Err(Error::DegenerateSupport);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &y in v {
        let idx = (((y - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let t = v.len() as f64;
    let grid: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let density: Vec<f64> = counts.iter().map(|&c| c as f64 / (t * width)).collect();
    GriddedDensity::with_weights(block.input_id.clone(), grid, density, vec![width; bins])
}

/// Splits whole inputs into train and test sets; the train set gets
/// `ceil(N (1 - f))` inputs, but at least one input always goes to test.
pub fn split_train_test(
    ds: &DistributionValuedDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(DistributionValuedDataset, DistributionValuedDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument("test fraction must lie in (0, 1)".into()));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 inputs to split".into()));
    }
    let n_train = ((n as f64 * (1.0 - test_fraction) - 1e-9).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = ds
        .entries()
        .iter()
        .cloned()
        .zip(is_train)
        .partition(|(_, t)| *t);
    Ok((
        DistributionValuedDataset::new(train.into_iter().map(|(e, _)| e).collect())?,
        DistributionValuedDataset::new(test.into_iter().map(|(e, _)| e).collect())?,
    ))
}
