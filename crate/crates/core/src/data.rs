//! Dataset ingestion, splitting and seeded synthetic generators.
//!
//! Formats:
//! - IDX image files (`0x00000803`, unsigned bytes, `[count, rows, cols]`),
//!   scaled to `[0, 1]`.
//! - Ratings text files, `user<d>item<d>rating[<d>timestamp]` per line with a
//!   configurable delimiter (`,`, `\t`, `::`, ...).
//! - Dense CSV, one sample per row.
//!
//! Ratings map onto matrix completion as items = rows and users = columns,
//! so splitting over users splits over columns.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifold::{gaussian_matrix, Manifold};
use crate::problems::{LrmcInstance, ObservedColumn, PcaInstance};

pub const IDX_UBYTE_3D: u32 = 0x0000_0803;

/// `N × n` real samples, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDataset {
    pub samples: DMatrix<f64>,
    pub provenance: String,
}

impl DenseDataset {
    pub fn new(samples: DMatrix<f64>, provenance: impl Into<String>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::Contract("dataset must be non-empty".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(DenseDataset {
            samples,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> DenseDataset {
        DenseDataset {
            samples: self.samples.select_rows(rows),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_pca(&self, p: usize) -> Result<PcaInstance> {
        PcaInstance::new(self.samples.transpose(), p)
    }
}

/// Observed entries of an `n_rows × n_cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    /// `(row, col, value)`, unique `(row, col)`.
    pub triplets: Vec<(usize, usize, f64)>,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Repeated `(row, col)` pairs dropped on ingestion.
    pub duplicates: usize,
}

impl SparseRatings {
    pub fn observed_fraction(&self) -> f64 {
        self.triplets.len() as f64 / (self.n_rows * self.n_cols) as f64
    }

    /// Keeps the given columns, renumbered in the order given.
    pub fn select_columns(&self, cols: &[usize]) -> SparseRatings {
        let remap: HashMap<usize, usize> = cols.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let triplets = self
            .triplets
            .iter()
            .filter_map(|&(r, c, v)| remap.get(&c).map(|&nc| (r, nc, v)))
            .collect();
        SparseRatings {
            triplets,
            n_rows: self.n_rows,
            n_cols: cols.len(),
            duplicates: 0,
        }
    }

    /// Per-column observations. Columns without any entry are dropped.
    pub fn columns(&self) -> Vec<ObservedColumn> {
        let mut cols: Vec<ObservedColumn> = vec![Vec::new(); self.n_cols];
        for &(r, c, v) in &self.triplets {
            cols[c].push((r, v));
        }
        for col in &mut cols {
            col.sort_by_key(|&(r, _)| r);
        }
        cols.retain(|c| !c.is_empty());
        cols
    }

    pub fn to_lrmc(&self, p: usize) -> Result<LrmcInstance> {
        LrmcInstance::new(self.n_rows, p, self.columns())
    }

    /// Applies `v ↦ scale·v + shift` to every observed value.
    pub fn rescale(&mut self, scale: f64, shift: f64) {
        for t in &mut self.triplets {
            t.2 = scale * t.2 + shift;
        }
    }
}

/// Reads an IDX `ubyte` image file into one flattened, `[0,1]`-scaled sample
/// per image (row-major pixels).
pub fn read_idx(path: impl AsRef<Path>) -> Result<DenseDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_idx(&bytes)?;
    ds.provenance = path.display().to_string();
    Ok(ds)
}

pub fn parse_idx(bytes: &[u8]) -> Result<DenseDataset> {
    let word = |i: usize| -> Result<u32> {
        let b = bytes.get(4 * i..4 * i + 4).ok_or(Error::Length {
            needed: 4 * i + 4,
            found: bytes.len(),
        })?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    };
    let magic = word(0)?;
    if magic != IDX_UBYTE_3D {
        return Err(Error::Format(format!(
            "expected IDX magic {IDX_UBYTE_3D:#010x}, found {magic:#010x}"
        )));
    }
    let (count, rows, cols) = (word(1)? as usize, word(2)? as usize, word(3)? as usize);
    let n = rows * cols;
    let needed = 16 + count * n;
    if bytes.len() < needed {
        return Err(Error::Length {
            needed,
            found: bytes.len(),
        });
    }
    let pixels = &bytes[16..needed];
    let samples = DMatrix::from_row_iterator(count, n, pixels.iter().map(|&b| b as f64 / 255.0));
    DenseDataset::new(samples, "idx")
}

/// Writes unsigned-byte images in IDX format; pixels are given in `[0, 255]`.
pub fn write_idx(path: impl AsRef<Path>, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for w in [IDX_UBYTE_3D, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Dimension {
                expected: (rows, cols),
                got: (img.len(), 1),
            });
        }
        out.extend_from_slice(img);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `user<d>item<d>rating[<d>...]` lines.
///
/// Ids are renumbered contiguously in order of first appearance; items
/// become rows and users become columns. A repeated `(user, item)` keeps the
/// last rating and is counted in [`SparseRatings::duplicates`]. Blank lines
/// and lines starting with `#` are skipped, as is a first line whose id
/// fields are not numeric (a header).
pub fn read_ratings_csv(path: impl AsRef<Path>, delimiter: &str) -> Result<SparseRatings> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text, delimiter)
}

pub fn parse_ratings(text: &str, delimiter: &str) -> Result<SparseRatings> {
    if delimiter.is_empty() {
        return Err(Error::Contract("delimiter must not be empty".into()));
    }
    let mut users: HashMap<String, usize> = HashMap::new();
    let mut items: HashMap<String, usize> = HashMap::new();
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut triplets = Vec::new();
    let mut duplicates = 0;
    let mut first = true;

    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        let is_first = std::mem::replace(&mut first, false);
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least 3 fields, found {}", fields.len()),
            });
        }
        if is_first && fields[0].parse::<f64>().is_err() && fields[2].parse::<f64>().is_err() {
            continue;
        }
        let rating: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("rating `{}` is not a number", fields[2]),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: "rating is not finite".into(),
            });
        }
        let next_u = users.len();
        let col = *users.entry(fields[0].to_string()).or_insert(next_u);
        let next_i = items.len();
        let row = *items.entry(fields[1].to_string()).or_insert(next_i);
        match index.get(&(row, col)) {
            Some(&at) => {
                triplets[at] = (row, col, rating);
                duplicates += 1;
            }
            None => {
                index.insert((row, col), triplets.len());
                triplets.push((row, col, rating));
            }
        }
    }
    if duplicates > 0 {
        warn!("{duplicates} duplicate ratings replaced by their last occurrence");
    }
    Ok(SparseRatings {
        triplets,
        n_rows: items.len(),
        n_cols: users.len(),
        duplicates,
    })
}

/// Writes `col<d>row<d>value` lines (user, item, rating order), readable by
/// [`read_ratings_csv`].
pub fn write_ratings_csv(path: impl AsRef<Path>, ratings: &SparseRatings, delimiter: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for &(r, c, v) in &ratings.triplets {
        // `{}` on f64 prints the shortest representation that round-trips.
        writeln!(out, "{c}{delimiter}{r}{delimiter}{v}").expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a dense CSV with one sample per row. Blank lines and `#` comments
/// are skipped; every row must have the same number of fields.
pub fn read_dense_csv(path: impl AsRef<Path>) -> Result<DenseDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("`{}` is not a number", field.trim()),
            })?;
            values.push(v);
        }
        let w = values.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} fields, found {w}", width.unwrap_or(0)),
            });
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Contract("dense CSV has no rows".into()))?;
    let mut ds = DenseDataset::new(DMatrix::from_row_slice(rows, width, &values), "csv")?;
    ds.provenance = path.display().to_string();
    Ok(ds)
}

/// Seeded random partition of `0..n` into `(train, test)` index lists.
///
/// The training part gets `round(fraction · n)` elements, kept within
/// `[1, n − 1]`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Contract("need at least two samples to split".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(k);
    Ok((idx, test))
}

pub fn split_dense(ds: &DenseDataset, fraction: f64, seed: u64) -> Result<(DenseDataset, DenseDataset)> {
    let (train, test) = split_indices(ds.len(), fraction, seed)?;
    Ok((ds.select(&train), ds.select(&test)))
}

pub fn split_ratings(r: &SparseRatings, fraction: f64, seed: u64) -> Result<(SparseRatings, SparseRatings)> {
    let (train, test) = split_indices(r.n_cols, fraction, seed)?;
    Ok((r.select_columns(&train), r.select_columns(&test)))
}

/// Synthetic PCA data together with the planted basis.
/// Generators draw from their own stream so a generator seed never
/// reproduces the initial point of the trial with the same seed.
const GENERATOR_STREAM: u64 = 2;

fn generator_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GENERATOR_STREAM);
    rng
}

#[derive(Debug, Clone)]
pub struct SynthPca {
    pub dataset: DenseDataset,
    /// `n × p_true`, orthonormal columns.
    pub planted: DMatrix<f64>,
}

/// `x_i = U* z_i + noise · w_i` with `z_i ~ N(0, I_p)`, `w_i ~ N(0, I_n)`.
pub fn synth_pca(n: usize, p_true: usize, count: usize, noise: f64, seed: u64) -> Result<SynthPca> {
    let manifold = Manifold::stiefel(n, p_true)?;
    let mut rng = generator_rng(seed);
    let planted = manifold.random_point_with(&mut rng).into_inner();
    let z = gaussian_matrix(p_true, count, &mut rng);
    let mut x = &planted * z;
    if noise != 0.0 {
        x += gaussian_matrix(n, count, &mut rng) * noise;
    }
    let dataset = DenseDataset::new(
        x.transpose(),
        format!("synth:pca:n={n},p={p_true},N={count},noise={noise},seed={seed}"),
    )?;
    Ok(SynthPca { dataset, planted })
}

#[derive(Debug, Clone)]
pub struct SynthLrmc {
    pub ratings: SparseRatings,
    /// `n × p_true`, orthonormal columns spanning the clean matrix.
    pub planted: DMatrix<f64>,
}

/// Entries of `U* V*ᵀ + noise · W` (`n × N`), each kept with probability
/// `obs_frac`. Every column keeps at least one entry.
pub fn synth_lrmc(n: usize, count: usize, p_true: usize, obs_frac: f64, noise: f64, seed: u64) -> Result<SynthLrmc> {
    if !(obs_frac > 0.0 && obs_frac <= 1.0) {
        return Err(Error::Contract(format!(
            "observed fraction must be in (0, 1], got {obs_frac}"
        )));
    }
    let manifold = Manifold::stiefel(n, p_true)?;
    let mut rng = generator_rng(seed);
    let planted = manifold.random_point_with(&mut rng).into_inner();
    let v = gaussian_matrix(count, p_true, &mut rng);
    let mut x = &planted * v.transpose();
    if noise != 0.0 {
        x += gaussian_matrix(n, count, &mut rng) * noise;
    }
    let mut triplets = Vec::new();
    for c in 0..count {
        let start = triplets.len();
        for r in 0..n {
            if obs_frac >= 1.0 || rng.random_bool(obs_frac) {
                triplets.push((r, c, x[(r, c)]));
            }
        }
        if triplets.len() == start {
            let r = rng.random_range(0..n);
            triplets.push((r, c, x[(r, c)]));
        }
    }
    Ok(SynthLrmc {
        ratings: SparseRatings {
            triplets,
            n_rows: n,
            n_cols: count,
            duplicates: 0,
        },
        planted,
    })
}
