//! Incremental Cholesky fits of `X_γ^T X_γ`.
//!
//! A [`ModelFit`] keeps the lower factor `L` in insertion order together with
//! `z = L^{-1} X_γ^T y`, so that `rss = y^T y - ||z||^2`. Adding a column appends
//! one row to `L`; removing one deletes a row and re-triangularizes the trailing
//! block with plane rotations.
//!
//! [`CrossFactor`] stores `W = L^{-1} X_γ^T X_U` for a universe `U` of candidate
//! columns. It turns the residual statistics of every single-column addition into
//! one pass over `W`.

use std::sync::Arc;

use crate::data::{dot, RegressionData};
use crate::error::{Error, Result};

/// Relative pivot tolerance for collinearity.
pub const PIVOT_TOL: f64 = 1e-10;

#[inline]
fn tri(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Cholesky fit of a model in insertion order.
#[derive(Clone, Debug)]
pub struct ModelFit {
    columns: Vec<usize>,
    factor: Vec<f64>,
    xty: Vec<f64>,
    z: Vec<f64>,
    rss: f64,
    yty: f64,
}

/// Plane rotation `(cos, sin)` applied to rows `(c, c + 1)` of `z`-like vectors.
pub type Rotation = (f64, f64);

impl ModelFit {
    pub fn empty(data: &RegressionData) -> Self {
        ModelFit {
            columns: Vec::new(),
            factor: Vec::new(),
            xty: Vec::new(),
            z: Vec::new(),
            rss: data.yty(),
            yty: data.yty(),
        }
    }

    /// Dense fit of `cols` (kept in the given order).
    pub fn from_scratch(data: &RegressionData, cols: &[usize]) -> Result<Self> {
        let m = cols.len();
        for (a, &c) in cols.iter().enumerate() {
            if c >= data.p() {
                return Err(Error::IllegalMove(format!("column {c} out of range")));
            }
            if cols[..a].contains(&c) {
                return Err(Error::IllegalMove(format!("column {c} repeated")));
            }
        }
        let mut factor = vec![0.0; tri(m)];
        for i in 0..m {
            for j in 0..=i {
                let mut s = data.gram_entry(cols[i], cols[j]);
                for k in 0..j {
                    s -= factor[tri(i) + k] * factor[tri(j) + k];
                }
                if i == j {
                    let norm2 = data.col_norms2()[cols[i]];
                    if !(s > PIVOT_TOL * norm2) {
                        return Err(Error::RankDeficient { column: cols[i] });
                    }
                    factor[tri(i) + i] = s.sqrt();
                } else {
                    factor[tri(i) + j] = s / factor[tri(j) + j];
                }
            }
        }
        let xty: Vec<f64> = cols.iter().map(|&c| data.xty()[c]).collect();
        let mut fit = ModelFit {
            columns: cols.to_vec(),
            factor,
            xty,
            z: Vec::new(),
            rss: 0.0,
            yty: data.yty(),
        };
        fit.z = fit.forward_solve(&fit.xty);
        let zz = dot(&fit.z, &fit.z);
        fit.rss = (fit.yty - zz).clamp(0.0, fit.yty);
        Ok(fit)
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn size(&self) -> usize {
        self.columns.len()
    }

    pub fn rss(&self) -> f64 {
        self.rss
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    /// `X_γ^T y` in insertion order.
    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    /// `L^{-1} X_γ^T y` in insertion order.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Entry `(i, j)` of the lower factor, `j <= i`.
    pub fn factor_entry(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i);
        self.factor[tri(i) + j]
    }

    pub fn position(&self, j: usize) -> Option<usize> {
        self.columns.iter().position(|&c| c == j)
    }

    /// Solves `L x = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.size();
        let mut x = b.to_vec();
        for i in 0..m {
            let row = &self.factor[tri(i)..tri(i) + i + 1];
            let s = dot(&row[..i], &x[..i]);
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `L^T x = b`.
    pub fn back_solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.size();
        let mut x = b.to_vec();
        for i in (0..m).rev() {
            x[i] /= self.factor[tri(i) + i];
            let xi = x[i];
            for k in 0..i {
                x[k] -= self.factor[tri(i) + k] * xi;
            }
        }
        x
    }

    /// Least-squares coefficients `(X_γ^T X_γ)^{-1} X_γ^T y` in insertion order.
    pub fn ols(&self) -> Vec<f64> {
        self.back_solve(&self.z)
    }

    /// `||L^T v||^2 = v^T X_γ^T X_γ v` for `v` in insertion order.
    pub fn gram_quadratic(&self, v: &[f64]) -> f64 {
        let m = self.size();
        let mut s = 0.0;
        for k in 0..m {
            let mut t = 0.0;
            for i in k..m {
                t += self.factor[tri(i) + k] * v[i];
            }
            s += t * t;
        }
        s
    }

    /// Diagonal of `(X_γ^T X_γ)^{-1}` in insertion order.
    pub fn inverse_diag(&self) -> Vec<f64> {
        let m = self.size();
        let mut diag = vec![0.0; m];
        let mut col = vec![0.0; m];
        for k in 0..m {
            col.iter_mut().for_each(|v| *v = 0.0);
            col[k] = 1.0 / self.factor[tri(k) + k];
            diag[k] += col[k] * col[k];
            for i in k + 1..m {
                let row = &self.factor[tri(i)..tri(i) + i + 1];
                let s = dot(&row[k..i], &col[k..i]);
                col[i] = -s / row[i];
                diag[k] += col[i] * col[i];
            }
        }
        diag
    }

    /// Residual sum of squares after removing each position in turn.
    pub fn drop_rss_all(&self) -> Vec<f64> {
        let b = self.ols();
        let v = self.inverse_diag();
        b.iter()
            .zip(&v)
            .map(|(bk, vk)| (self.rss + bk * bk / vk).min(self.yty))
            .collect()
    }

    /// Residual statistics for adding column `j` given `u = L^{-1} X_γ^T X_j`.
    /// Returns `(d^2, t)` with `t = X_j^T Π⊥ y`.
    pub fn add_stats(&self, data: &RegressionData, j: usize, u: &[f64]) -> (f64, f64) {
        let d2 = data.col_norms2()[j] - dot(u, u);
        let t = data.xty()[j] - dot(u, &self.z);
        (d2, t)
    }

    /// Extends by column `j`; also returns `u = L^{-1} X_γ^T X_j` and the new pivot.
    pub fn extend_parts(&self, data: &RegressionData, j: usize) -> Result<(ModelFit, Vec<f64>, f64)> {
        if j >= data.p() || self.columns.contains(&j) {
            return Err(Error::IllegalMove(format!("cannot add column {j}")));
        }
        if !data.gram_cached(j) {
            for &c in &self.columns {
                data.gram_row(c);
            }
        }
        let cross = data.cross(&self.columns, j);
        let u = self.forward_solve(&cross);
        let (d2, t) = self.add_stats(data, j, &u);
        if !(d2 > PIVOT_TOL * data.col_norms2()[j]) {
            return Err(Error::CollinearColumn { column: j });
        }
        let d = d2.sqrt();
        let znew = t / d;
        let mut fit = self.clone();
        fit.factor.extend_from_slice(&u);
        fit.factor.push(d);
        fit.columns.push(j);
        fit.xty.push(data.xty()[j]);
        fit.z.push(znew);
        fit.rss = (self.rss - znew * znew).clamp(0.0, self.yty);
        Ok((fit, u, d))
    }

    pub fn extend(&self, data: &RegressionData, j: usize) -> Result<ModelFit> {
        self.extend_parts(data, j).map(|(f, _, _)| f)
    }

    /// Removes the column at `position`; returns the rotations used.
    pub fn drop_with_rotations(&self, position: usize) -> (ModelFit, Vec<Rotation>) {
        let m = self.size();
        assert!(position < m, "drop position {position} out of range for size {m}");
        let mut a = vec![0.0; (m - 1) * m];
        for r in 0..m - 1 {
            let src = if r < position { r } else { r + 1 };
            let row = &self.factor[tri(src)..tri(src) + src + 1];
            a[r * m..r * m + src + 1].copy_from_slice(row);
        }
        let mut z = self.z.clone();
        let mut rots = Vec::with_capacity(m - 1 - position);
        for c in position..m - 1 {
            let x = a[c * m + c];
            let y = a[c * m + c + 1];
            let r = x.hypot(y);
            let (cs, sn) = if r == 0.0 { (1.0, 0.0) } else { (x / r, y / r) };
            for row in c..m - 1 {
                let u = a[row * m + c];
                let v = a[row * m + c + 1];
                a[row * m + c] = cs * u + sn * v;
                a[row * m + c + 1] = -sn * u + cs * v;
            }
            a[c * m + c] = r;
            a[c * m + c + 1] = 0.0;
            let (zu, zv) = (z[c], z[c + 1]);
            z[c] = cs * zu + sn * zv;
            z[c + 1] = -sn * zu + cs * zv;
            rots.push((cs, sn));
        }
        let last = z.pop().unwrap_or(0.0);
        let mut factor = Vec::with_capacity(tri(m - 1));
        for r in 0..m - 1 {
            factor.extend_from_slice(&a[r * m..r * m + r + 1]);
        }
        let mut columns = self.columns.clone();
        columns.remove(position);
        let mut xty = self.xty.clone();
        xty.remove(position);
        let fit = ModelFit {
            columns,
            factor,
            xty,
            z,
            rss: (self.rss + last * last).clamp(0.0, self.yty),
            yty: self.yty,
        };
        (fit, rots)
    }

    pub fn drop_position(&self, position: usize) -> ModelFit {
        self.drop_with_rotations(position).0
    }
}

/// `W = L^{-1} X_γ^T X_U`, rows in the fit's insertion order.
#[derive(Clone, Debug)]
pub struct CrossFactor {
    universe: Option<Arc<[usize]>>,
    width: usize,
    rows: Vec<f64>,
}

impl CrossFactor {
    fn gram_slice(data: &RegressionData, universe: &Option<Arc<[usize]>>, c: usize) -> Vec<f64> {
        let g = data.gram_row(c);
        match universe {
            None => g.to_vec(),
            Some(u) => u.iter().map(|&k| g[k]).collect(),
        }
    }

    /// Builds `W` by forward substitution over Gram rows.
    pub fn from_fit(fit: &ModelFit, data: &RegressionData, universe: Option<Arc<[usize]>>) -> Self {
        let width = universe.as_ref().map_or(data.p(), |u| u.len());
        let m = fit.size();
        let mut rows = vec![0.0; m * width];
        for i in 0..m {
            let g = Self::gram_slice(data, &universe, fit.columns[i]);
            let (done, rest) = rows.split_at_mut(i * width);
            let row = &mut rest[..width];
            row.copy_from_slice(&g);
            for k in 0..i {
                let l = fit.factor_entry(i, k);
                if l != 0.0 {
                    let prev = &done[k * width..(k + 1) * width];
                    for (r, w) in row.iter_mut().zip(prev) {
                        *r -= l * w;
                    }
                }
            }
            let d = fit.factor_entry(i, i);
            row.iter_mut().for_each(|v| *v /= d);
        }
        CrossFactor {
            universe,
            width,
            rows,
        }
    }

    pub fn universe(&self) -> Option<&Arc<[usize]>> {
        self.universe.as_ref()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.rows.len() / self.width
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.width..(i + 1) * self.width]
    }

    /// Appends the row for a new column `j` with `u`, `d` from [`ModelFit::extend_parts`].
    pub fn extended(&self, data: &RegressionData, j: usize, u: &[f64], d: f64) -> Self {
        let mut row = Self::gram_slice(data, &self.universe, j);
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                for (r, w) in row.iter_mut().zip(self.row(i)) {
                    *r -= ui * w;
                }
            }
        }
        row.iter_mut().for_each(|v| *v /= d);
        let mut rows = Vec::with_capacity(self.rows.len() + self.width);
        rows.extend_from_slice(&self.rows);
        rows.extend_from_slice(&row);
        CrossFactor {
            universe: self.universe.clone(),
            width: self.width,
            rows,
        }
    }

    /// Applies the rotations of [`ModelFit::drop_with_rotations`] and removes the last row.
    pub fn dropped(&self, position: usize, rots: &[Rotation]) -> Self {
        let w = self.width;
        let m = self.height();
        let mut rows = self.rows.clone();
        for (step, &(cs, sn)) in rots.iter().enumerate() {
            let c = position + step;
            let (head, tail) = rows.split_at_mut((c + 1) * w);
            let a = &mut head[c * w..];
            let b = &mut tail[..w];
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = cs * u + sn * v;
                *y = -sn * u + cs * v;
            }
        }
        rows.truncate((m - 1) * w);
        CrossFactor {
            universe: self.universe.clone(),
            width: w,
            rows,
        }
    }

    /// Column sums `(Σ_i W_ij^2, Σ_i W_ij z_i)` over the universe.
    pub fn column_stats(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut sq = vec![0.0; self.width];
        let mut wz = vec![0.0; self.width];
        for (i, &zi) in z.iter().enumerate() {
            let row = self.row(i);
            for ((s, t), &w) in sq.iter_mut().zip(wz.iter_mut()).zip(row) {
                *s += w * w;
                *t += w * zi;
            }
        }
        (sq, wz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, BetaMode, Design, SyntheticSpec};

    fn data(n: usize, p: usize, seed: u64) -> RegressionData {
        generate(&SyntheticSpec {
            n,
            p,
            design: Design::Ar1,
            snr: 2.0,
            beta_mode: BetaMode::Fixed10,
            seed,
        })
        .unwrap()
        .0
    }

    /// Residual of the normal equations solved densely with nalgebra.
    pub(crate) fn dense_rss(d: &RegressionData, cols: &[usize]) -> f64 {
        let n = d.n();
        let m = cols.len();
        if m == 0 {
            return d.yty();
        }
        let x = nalgebra::DMatrix::from_fn(n, m, |i, k| d.get(i, cols[k]));
        let y = nalgebra::DVector::from_column_slice(d.y());
        let g = x.transpose() * &x;
        let b = g.lu().solve(&(x.transpose() * &y)).unwrap();
        let r = y - x * b;
        r.dot(&r)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn empty_and_perfect_fits() {
        let d = data(20, 5, 1);
        assert_eq!(ModelFit::from_scratch(&d, &[]).unwrap().rss(), d.yty());
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let e = RegressionData::from_rows(&rows, vec![1.0, -2.0, 0.5]).unwrap();
        let f = ModelFit::from_scratch(&e, &[2, 0, 1]).unwrap();
        assert!(f.rss().abs() < 1e-14);
    }

    #[test]
    fn scratch_matches_normal_equations() {
        let d = data(20, 5, 2);
        let f = ModelFit::from_scratch(&d, &[4, 1, 3]).unwrap();
        assert!(rel(f.rss(), dense_rss(&d, &[1, 3, 4])) < 1e-10);
    }

    #[test]
    fn one_column_extension() {
        let d = data(30, 6, 3);
        let e = ModelFit::empty(&d);
        let f = e.extend(&d, 2).unwrap();
        let c = d.xty()[2];
        let drop = c * c / d.col_norms2()[2];
        assert!(rel(d.yty() - f.rss(), drop) < 1e-12);
        let back = f.drop_position(0);
        assert!((back.rss() - d.yty()).abs() <= 1e-10 * d.yty());
    }

    #[test]
    fn drop_middle_matches_scratch() {
        let d = data(40, 12, 4);
        let cols = [7, 2, 9, 0, 11, 5];
        let f = ModelFit::from_scratch(&d, &cols).unwrap();
        let g = f.drop_position(3);
        assert_eq!(g.columns(), &[7, 2, 9, 11, 5]);
        assert!(rel(g.rss(), dense_rss(&d, &[7, 2, 9, 11, 5])) < 1e-8);
        let s = ModelFit::from_scratch(&d, g.columns()).unwrap();
        for i in 0..5 {
            for j in 0..=i {
                assert!((s.factor_entry(i, j) - g.factor_entry(i, j)).abs() < 1e-9);
            }
            assert!(g.factor_entry(i, i) > 0.0);
        }
        let h = ModelFit::from_scratch(&d, &[3]).unwrap().drop_position(0);
        assert_eq!(h.size(), 0);
        assert!((h.rss() - d.yty()).abs() < 1e-9 * d.yty());
    }

    #[test]
    fn collinear_column_is_rejected() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
        let d = RegressionData::from_rows(&rows, (0..6).map(|i| i as f64).collect()).unwrap();
        let f = ModelFit::from_scratch(&d, &[0]).unwrap();
        assert!(matches!(f.extend(&d, 1), Err(Error::CollinearColumn { column: 1 })));
        assert!(matches!(
            ModelFit::from_scratch(&d, &[0, 1]),
            Err(Error::RankDeficient { column: 1 })
        ));
    }

    #[test]
    fn drop_rss_all_matches_refits() {
        let d = data(40, 10, 5);
        let f = ModelFit::from_scratch(&d, &[1, 6, 3, 8]).unwrap();
        let all = f.drop_rss_all();
        for k in 0..4 {
            assert!(rel(all[k], f.drop_position(k).rss()) < 1e-9);
        }
    }

    #[test]
    fn cross_factor_tracks_updates() {
        let d = data(40, 15, 6);
        let f = ModelFit::from_scratch(&d, &[3, 10, 1]).unwrap();
        let w = CrossFactor::from_fit(&f, &d, None);
        let (g, u, dd) = f.extend_parts(&d, 7).unwrap();
        let w2 = w.extended(&d, 7, &u, dd);
        let fresh = CrossFactor::from_fit(&g, &d, None);
        for (a, b) in w2.rows.iter().zip(&fresh.rows) {
            assert!((a - b).abs() < 1e-9);
        }
        let (h, rots) = g.drop_with_rotations(1);
        let w3 = w2.dropped(1, &rots);
        let fresh = CrossFactor::from_fit(&h, &d, None);
        for (a, b) in w3.rows.iter().zip(&fresh.rows) {
            assert!((a - b).abs() < 1e-9);
        }
        let uni: Arc<[usize]> = Arc::from(vec![0usize, 2, 7, 14]);
        let wu = CrossFactor::from_fit(&h, &d, Some(uni.clone()));
        for i in 0..wu.height() {
            for (a, &k) in uni.iter().enumerate() {
                assert!((wu.row(i)[a] - fresh.row(i)[k]).abs() < 1e-12);
            }
        }
    }
}
