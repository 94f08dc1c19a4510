//! Regression data, synthetic designs and CSV ingestion.
//!
//! The design matrix is stored column-major so that `X_j^T v` is a contiguous
//! dot product. Rows of `X^T X` are computed lazily and cached.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on `p * p` below which the whole Gram matrix is computed up front.
pub const DEFAULT_GRAM_BUDGET: usize = 20_000;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Design matrix, response and the sufficient statistics the samplers need.
pub struct RegressionData {
    n: usize,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    xty: Vec<f64>,
    col_norms2: Vec<f64>,
    yty: f64,
    gram: Vec<OnceLock<Box<[f64]>>>,
}

impl std::fmt::Debug for RegressionData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegressionData")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("yty", &self.yty)
            .finish()
    }
}

impl Clone for RegressionData {
    fn clone(&self) -> Self {
        let gram = self
            .gram
            .iter()
            .map(|cell| {
                let out = OnceLock::new();
                if let Some(row) = cell.get() {
                    let _ = out.set(row.clone());
                }
                out
            })
            .collect();
        RegressionData {
            n: self.n,
            p: self.p,
            x: self.x.clone(),
            y: self.y.clone(),
            xty: self.xty.clone(),
            col_norms2: self.col_norms2.clone(),
            yty: self.yty,
            gram,
        }
    }
}

impl RegressionData {
    /// Builds from a column-major `n x p` matrix.
    pub fn from_columns(n: usize, p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != n * p {
            return Err(Error::DimensionMismatch(format!(
                "x has {} entries, expected {n} x {p}",
                x.len()
            )));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries, x has {n} rows",
                y.len()
            )));
        }
        let mut data = RegressionData {
            n,
            p,
            x,
            y,
            xty: Vec::new(),
            col_norms2: Vec::new(),
            yty: 0.0,
            gram: Vec::new(),
        };
        data.refresh();
        data.with_gram_budget(DEFAULT_GRAM_BUDGET);
        Ok(data)
    }

    /// Builds from row vectors (observations).
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut x = vec![0.0; n * p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {p}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                x[j * n + i] = *v;
            }
        }
        Self::from_columns(n, p, x, y)
    }

    fn refresh(&mut self) {
        let (n, p) = (self.n, self.p);
        self.xty = (0..p).map(|j| dot(&self.x[j * n..(j + 1) * n], &self.y)).collect();
        self.col_norms2 = (0..p)
            .map(|j| {
                let c = &self.x[j * n..(j + 1) * n];
                dot(c, c)
            })
            .collect();
        self.yty = dot(&self.y, &self.y);
        self.gram = (0..p).map(|_| OnceLock::new()).collect();
    }

    /// Precomputes the full Gram matrix when `p * p <= budget`.
    pub fn with_gram_budget(&mut self, budget: usize) -> &mut Self {
        if self.p.saturating_mul(self.p) <= budget {
            for j in 0..self.p {
                self.gram_row(j);
            }
        }
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn col_norms2(&self) -> &[f64] {
        &self.col_norms2
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    /// Column-major storage of `X`.
    pub fn x_col_major(&self) -> &[f64] {
        &self.x
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[j * self.n + i]
    }

    /// Row `j` of `X^T X`, computed on first use.
    pub fn gram_row(&self, j: usize) -> &[f64] {
        self.gram[j].get_or_init(|| {
            let cj = self.column(j);
            (0..self.p).map(|l| dot(self.column(l), cj)).collect()
        })
    }

    pub fn gram_cached(&self, j: usize) -> bool {
        self.gram[j].get().is_some()
    }

    /// `X_j^T X_k`, read from the cache when either row is present.
    pub fn gram_entry(&self, j: usize, k: usize) -> f64 {
        if let Some(r) = self.gram[j].get() {
            r[k]
        } else if let Some(r) = self.gram[k].get() {
            r[j]
        } else {
            dot(self.column(j), self.column(k))
        }
    }

    /// `X_S^T X_j` for an ordered list of columns `S`.
    pub fn cross(&self, cols: &[usize], j: usize) -> Vec<f64> {
        if let Some(r) = self.gram[j].get() {
            return cols.iter().map(|&k| r[k]).collect();
        }
        cols.iter().map(|&k| self.gram_entry(k, j)).collect()
    }

    /// `X v` for a coefficient vector supported on `cols`.
    pub fn x_times(&self, cols: &[usize], coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (&j, &b) in cols.iter().zip(coef) {
            for (o, x) in out.iter_mut().zip(self.column(j)) {
                *o += b * x;
            }
        }
        out
    }

    /// Centers every column and `y`, then scales columns to `X_j^T X_j = n`.
    pub fn standardize(&mut self) -> Result<()> {
        let n = self.n;
        let nf = n as f64;
        for j in 0..self.p {
            let c = &mut self.x[j * n..(j + 1) * n];
            let mean = c.iter().sum::<f64>() / nf;
            c.iter_mut().for_each(|v| *v -= mean);
            let norm2 = dot(c, c);
            if !(norm2 > 1e-24 * nf) {
                return Err(Error::ZeroVarianceColumn { column: j });
            }
            let s = (nf / norm2).sqrt();
            c.iter_mut().for_each(|v| *v *= s);
        }
        let mean = self.y.iter().sum::<f64>() / nf;
        self.y.iter_mut().for_each(|v| *v -= mean);
        self.refresh();
        self.with_gram_budget(DEFAULT_GRAM_BUDGET);
        Ok(())
    }
}

/// Row distribution of a synthetic design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Design {
    Independent,
    /// Correlation `exp(-|j - k|)`.
    Ar1,
    /// Independent blocks of size `d` with within-block correlation `exp(-|j - k| / 3)`.
    Block { d: usize },
}

/// How the true coefficient vector is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum BetaMode {
    /// `snr * sqrt(log p / n) * (2,-3,2,2,-3,3,-2,3,-2,3)` on the first ten covariates.
    Fixed10,
    /// `s_star` covariates chosen uniformly, coefficients `N(0, sigma_beta^2)`.
    Random { s_star: usize, sigma_beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub snr: f64,
    pub beta_mode: BetaMode,
    pub seed: u64,
}

/// Ground truth written next to generated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub gamma_star: Vec<usize>,
    pub beta_star: Vec<f64>,
    pub spec: Option<SyntheticSpec>,
}

const FIXED10: [f64; 10] = [2.0, -3.0, 2.0, 2.0, -3.0, 3.0, -2.0, 3.0, -2.0, 3.0];
const NOISE_STREAM: u64 = u64::MAX;
const BETA_STREAM: u64 = u64::MAX - 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidSpec("n and p must be positive".into()));
        }
        if let Design::Block { d } = self.design {
            if d == 0 || self.p % d != 0 {
                return Err(Error::InvalidSpec(format!(
                    "block size {d} does not divide p = {}",
                    self.p
                )));
            }
        }
        if let BetaMode::Random { s_star, sigma_beta } = self.beta_mode {
            if s_star > self.p || !(sigma_beta >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "random beta needs s_star <= p and sigma_beta >= 0 (got {s_star}, {sigma_beta})"
                )));
            }
        }
        Ok(())
    }
}

/// Lower Cholesky factor of a dense symmetric matrix (row-major).
pub(crate) fn dense_cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Draws the design; each row uses its own ChaCha8 stream so rows can be generated in any order.
pub fn gen_design(spec: &SyntheticSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut x = vec![0.0; n * p];
    let block_factor = match spec.design {
        Design::Block { d } => {
            let mut s = vec![0.0; d * d];
            for j in 0..d {
                for k in 0..d {
                    s[j * d + k] = (-((j as f64 - k as f64).abs()) / 3.0).exp();
                }
            }
            Some(dense_cholesky(&s, d).ok_or(Error::GramNotPD)?)
        }
        _ => None,
    };
    let rho = (-1.0f64).exp();
    let innov = (1.0 - rho * rho).sqrt();
    let mut row = vec![0.0; p];
    let mut z = vec![0.0; p];
    for i in 0..n {
        let mut rng = stream_rng(spec.seed, i as u64);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        match spec.design {
            Design::Independent => row.copy_from_slice(&z),
            Design::Ar1 => {
                row[0] = z[0];
                for j in 1..p {
                    row[j] = rho * row[j - 1] + innov * z[j];
                }
            }
            Design::Block { d } => {
                let l = block_factor.as_ref().unwrap();
                for b in 0..p / d {
                    let off = b * d;
                    for r in 0..d {
                        let mut s = 0.0;
                        for c in 0..=r {
                            s += l[r * d + c] * z[off + c];
                        }
                        row[off + r] = s;
                    }
                }
            }
        }
        for j in 0..p {
            x[j * n + i] = row[j];
        }
    }
    Ok(x)
}

/// Draws `beta*` and `y = X beta* + z` with unit-variance noise.
pub fn gen_response(x: &[f64], spec: &SyntheticSpec) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    if x.len() != n * p {
        return Err(Error::DimensionMismatch("design size does not match spec".into()));
    }
    let mut beta = vec![0.0; p];
    match spec.beta_mode {
        BetaMode::Fixed10 => {
            let scale = spec.snr * ((p as f64).ln() / n as f64).sqrt();
            for (j, c) in FIXED10.iter().enumerate().take(p) {
                beta[j] = scale * c;
            }
        }
        BetaMode::Random { s_star, sigma_beta } => {
            let mut rng = stream_rng(spec.seed, BETA_STREAM);
            let mut idx = rand::seq::index::sample(&mut rng, p, s_star).into_vec();
            idx.sort_unstable();
            for j in idx {
                let z: f64 = rng.sample(StandardNormal);
                beta[j] = sigma_beta * z;
            }
        }
    }
    let gamma: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
    let mut rng = stream_rng(spec.seed, NOISE_STREAM);
    let mut y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for &j in &gamma {
        let b = beta[j];
        for (yi, xi) in y.iter_mut().zip(&x[j * n..(j + 1) * n]) {
            *yi += b * xi;
        }
    }
    Ok((y, beta, gamma))
}

/// Generates a full synthetic data set with its ground truth.
pub fn generate(spec: &SyntheticSpec) -> Result<(RegressionData, Truth)> {
    let x = gen_design(spec)?;
    let (y, beta_star, gamma_star) = gen_response(&x, spec)?;
    let data = RegressionData::from_columns(spec.n, spec.p, x, y)?;
    Ok((
        data,
        Truth {
            gamma_star,
            beta_star,
            spec: Some(spec.clone()),
        },
    ))
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn comment_lines<W: Write>(w: &mut W, comment: Option<&str>) -> Result<()> {
    for line in comment.iter().flat_map(|c| c.lines()) {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

/// Writes `X` as headerless CSV (one observation per row), after optional `#` lines.
pub fn save_x_csv(path: &Path, data: &RegressionData, comment: Option<&str>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    comment_lines(&mut w, comment)?;
    for i in 0..data.n() {
        let line: Vec<String> = (0..data.p()).map(|j| fmt17(data.get(i, j))).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `y` as a single-column headerless CSV.
pub fn save_y_csv(path: &Path, data: &RegressionData, comment: Option<&str>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    comment_lines(&mut w, comment)?;
    for v in data.y() {
        writeln!(w, "{}", fmt17(*v))?;
    }
    w.flush()?;
    Ok(())
}

fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::ParseError {
            path: name.clone(),
            row: 0,
            col: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ParseError {
            path: name.clone(),
            row: r + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::ParseError {
                path: name.clone(),
                row: r + 1,
                col: c + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads `X` and `y` from headerless numeric CSV files.
pub fn load_csv(path_x: &Path, path_y: &Path, standardize: bool) -> Result<RegressionData> {
    let rows = read_numeric_csv(path_x)?;
    let yrows = read_numeric_csv(path_y)?;
    if rows.len() != yrows.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows, y has {}",
            rows.len(),
            yrows.len()
        )));
    }
    let mut y = Vec::with_capacity(yrows.len());
    for (i, r) in yrows.iter().enumerate() {
        if r.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "y row {} has {} columns",
                i + 1,
                r.len()
            )));
        }
        y.push(r[0]);
    }
    if let Some(first) = rows.first() {
        let p = first.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::ParseError {
                path: path_x.display().to_string(),
                row: i + 1,
                col: r.len().min(p) + 1,
                msg: format!("expected {p} columns, found {}", r.len()),
            });
        }
    }
    let mut data = RegressionData::from_rows(&rows, y)?;
    if standardize {
        data.standardize()?;
    }
    Ok(data)
}

/// Screening rule for the addition neighborhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScreenRule {
    Budget(usize),
    Threshold(f64),
}

/// Ranks covariates by `|X_j^T y| / ||X_j||` and keeps the top ones; returned sorted ascending.
pub fn marginal_screen(data: &RegressionData, rule: ScreenRule) -> Vec<usize> {
    let score: Vec<f64> = (0..data.p())
        .map(|j| data.xty()[j].abs() / data.col_norms2()[j].sqrt())
        .collect();
    let mut out: Vec<usize> = match rule {
        ScreenRule::Budget(k) => {
            let mut idx: Vec<usize> = (0..data.p()).collect();
            idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
            idx.truncate(k.min(data.p()));
            idx
        }
        ScreenRule::Threshold(t) => (0..data.p()).filter(|&j| score[j] >= t).collect(),
    };
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(design: Design, n: usize, p: usize) -> SyntheticSpec {
        SyntheticSpec {
            n,
            p,
            design,
            snr: 3.0,
            beta_mode: BetaMode::Fixed10,
            seed: 7,
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn sufficient_statistics_match_recomputation() {
        let (d, _) = generate(&spec(Design::Independent, 50, 12)).unwrap();
        for j in 0..12 {
            let c = d.column(j);
            let xty: f64 = c.iter().zip(d.y()).map(|(a, b)| a * b).sum();
            let nn: f64 = c.iter().map(|a| a * a).sum();
            assert!((xty - d.xty()[j]).abs() <= 1e-12 * xty.abs().max(1.0));
            assert!((nn - d.col_norms2()[j]).abs() <= 1e-12 * nn);
            assert!((d.gram_entry(j, j) - nn).abs() <= 1e-12 * nn);
        }
    }

    #[test]
    fn independent_columns_are_uncorrelated() {
        let n = 4000;
        let s = spec(Design::Independent, n, 5);
        let x = gen_design(&s).unwrap();
        let band = 3.0 / (n as f64).sqrt();
        assert!(corr(&x[0..n], &x[n..2 * n]).abs() < band);
        assert!(corr(&x[2 * n..3 * n], &x[4 * n..5 * n]).abs() < band);
    }

    #[test]
    fn ar1_lag_one_correlation() {
        let n = 4000;
        let x = gen_design(&spec(Design::Ar1, n, 6)).unwrap();
        let band = 3.0 / (n as f64).sqrt();
        for j in 0..5 {
            let c = corr(&x[j * n..(j + 1) * n], &x[(j + 1) * n..(j + 2) * n]);
            assert!((c - (-1.0f64).exp()).abs() < band, "lag-1 corr {c}");
        }
    }

    #[test]
    fn block_design_structure() {
        let n = 4000;
        let x = gen_design(&spec(Design::Block { d: 20 }, n, 40)).unwrap();
        let band = 3.0 / (n as f64).sqrt();
        let c_cross = corr(&x[19 * n..20 * n], &x[20 * n..21 * n]);
        assert!(c_cross.abs() < band);
        let c_in = corr(&x[3 * n..4 * n], &x[4 * n..5 * n]);
        assert!((c_in - (-1.0f64 / 3.0).exp()).abs() < band);
        assert!(gen_design(&spec(Design::Block { d: 7 }, 10, 50)).is_err());
    }

    #[test]
    fn responses() {
        let (_, t) = generate(&spec(Design::Independent, 100, 50)).unwrap();
        assert_eq!(t.gamma_star, (0..10).collect::<Vec<_>>());
        let mut s = spec(Design::Independent, 2000, 20);
        s.snr = 0.0;
        let (d, t) = generate(&s).unwrap();
        assert!(t.gamma_star.is_empty());
        let m = d.yty() / 2000.0;
        assert!((m - 1.0).abs() < 3.0 * (2.0f64 / 2000.0).sqrt());
        s.p = 300;
        s.n = 50;
        s.beta_mode = BetaMode::Random {
            s_star: 100,
            sigma_beta: 0.3,
        };
        let (_, t) = generate(&s).unwrap();
        assert_eq!(t.gamma_star.len(), 100);
        for j in 0..300 {
            assert_eq!(t.beta_star[j] != 0.0, t.gamma_star.contains(&j));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(Design::Ar1, 30, 15);
        let (a, _) = generate(&s).unwrap();
        let (b, _) = generate(&s).unwrap();
        assert_eq!(a.x_col_major(), b.x_col_major());
        assert_eq!(a.y(), b.y());
    }

    #[test]
    fn identity_design_xty() {
        let d = RegressionData::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0]).unwrap();
        assert_eq!(d.xty(), &[1.0, 0.0]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (d, _) = generate(&spec(Design::Independent, 20, 7)).unwrap();
        let px = dir.path().join("X.csv");
        let py = dir.path().join("y.csv");
        save_x_csv(&px, &d, Some("spec: test")).unwrap();
        save_y_csv(&py, &d, None).unwrap();
        let e = load_csv(&px, &py, false).unwrap();
        assert_eq!(d.x_col_major(), e.x_col_major());
        assert_eq!(d.y(), e.y());
    }

    #[test]
    fn csv_errors_locate_problem() {
        let dir = tempfile::tempdir().unwrap();
        let px = dir.path().join("X.csv");
        let py = dir.path().join("y.csv");
        std::fs::write(&px, "1,2\n3,abc\n").unwrap();
        std::fs::write(&py, "1\n2\n").unwrap();
        match load_csv(&px, &py, false) {
            Err(Error::ParseError { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&px, "1,2\n3,4\n").unwrap();
        std::fs::write(&py, "1\n").unwrap();
        assert!(matches!(load_csv(&px, &py, false), Err(Error::DimensionMismatch(_))));
        std::fs::write(&px, "1,2\n1,4\n").unwrap();
        std::fs::write(&py, "1\n2\n").unwrap();
        assert!(matches!(
            load_csv(&px, &py, true),
            Err(Error::ZeroVarianceColumn { column: 0 })
        ));
    }

    #[test]
    fn standardization_is_idempotent() {
        let (mut d, _) = generate(&spec(Design::Ar1, 40, 6)).unwrap();
        d.standardize().unwrap();
        for &v in d.col_norms2() {
            assert!((v - 40.0).abs() < 1e-9);
        }
        let before = d.x_col_major().to_vec();
        d.standardize().unwrap();
        for (a, b) in before.iter().zip(d.x_col_major()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn screening() {
        let (d, _) = generate(&spec(Design::Independent, 100, 30)).unwrap();
        assert_eq!(marginal_screen(&d, ScreenRule::Budget(30)), (0..30).collect::<Vec<_>>());
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let d = RegressionData::from_rows(&rows, vec![0.1, 0.2, 5.0, 0.0]).unwrap();
        assert_eq!(marginal_screen(&d, ScreenRule::Budget(1)), vec![2]);
        assert_eq!(marginal_screen(&d, ScreenRule::Threshold(0.15)), vec![1, 2]);
    }
}
