//! Conditional coefficient estimates, Rao-Blackwellized accumulators and
//! conjugate draws of the coefficients given a model.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::RegressionData;
use crate::error::Result;
use crate::posterior::{Hyperparams, ModelState};

/// `E[β | γ, y] = g/(1+g) (X_γ^T X_γ)^{-1} X_γ^T y`, embedded in `R^p`.
pub fn beta_hat(state: &ModelState, data: &RegressionData, hp: &Hyperparams) -> Vec<f64> {
    let mut out = vec![0.0; data.p()];
    let fit = state.fit();
    let shrink = hp.shrink();
    for (c, b) in fit.columns().iter().zip(fit.ols()) {
        out[*c] = shrink * b;
    }
    out
}

/// Draw of `β` from its conditional posterior given `γ`.
#[derive(Clone, Debug)]
pub struct BetaDraw {
    pub beta: Vec<f64>,
    pub phi: f64,
    /// `||X β||^2`.
    pub t2: f64,
}

fn draw<R: Rng + ?Sized>(state: &ModelState, data: &RegressionData, hp: &Hyperparams, rng: &mut R) -> (Vec<f64>, f64, f64) {
    let fit = state.fit();
    let m = fit.size();
    let shrink = hp.shrink();
    let explained = data.yty() - fit.rss();
    let rate = 0.5 * (fit.rss() + explained / (1.0 + hp.g));
    let shape = data.n() as f64 / 2.0;
    let phi = Gamma::new(shape, 1.0 / rate.max(f64::MIN_POSITIVE))
        .expect("valid gamma parameters")
        .sample(rng);
    if m == 0 {
        return (Vec::new(), phi, 0.0);
    }
    let eps: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    let noise = fit.back_solve(&eps);
    let scale = (shrink / phi).sqrt();
    let coef: Vec<f64> = fit
        .ols()
        .iter()
        .zip(&noise)
        .map(|(b, e)| shrink * b + scale * e)
        .collect();
    let t2 = fit.gram_quadratic(&coef);
    (coef, phi, t2)
}

/// Samples the precision `φ` and then `β_γ`; coordinates outside `γ` are zero.
pub fn sample_beta<R: Rng + ?Sized>(state: &ModelState, data: &RegressionData, hp: &Hyperparams, rng: &mut R) -> BetaDraw {
    let (coef, phi, t2) = draw(state, data, hp, rng);
    let mut beta = vec![0.0; data.p()];
    for (c, b) in state.fit().columns().iter().zip(&coef) {
        beta[*c] = *b;
    }
    BetaDraw { beta, phi, t2 }
}

/// `||X β||^2` for a draw of `β`; consumes the generator exactly like [`sample_beta`].
pub fn sample_t2<R: Rng + ?Sized>(state: &ModelState, data: &RegressionData, hp: &Hyperparams, rng: &mut R) -> f64 {
    draw(state, data, hp, rng).2
}

fn sigmoid_log(r: f64) -> f64 {
    if r == f64::INFINITY {
        return 1.0;
    }
    if r == f64::NEG_INFINITY {
        return 0.0;
    }
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

/// Conditional inclusion probability `π(γ ∪ {j}) / (π(γ ∪ {j}) + π(γ \ {j}))`
/// given `log(π(γ ∪ {j}) / π(γ \ {j}))`.
pub fn conditional_pip(log_ratio: f64) -> f64 {
    sigmoid_log(log_ratio)
}

/// Running means of `E[β_j | γ_{-j}, y]` and `P(γ_j = 1 | γ_{-j}, y)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RbEstimate {
    beta_sum: Vec<f64>,
    pip_sum: Vec<f64>,
    count: u64,
}

impl RbEstimate {
    pub fn new(p: usize) -> Self {
        RbEstimate {
            beta_sum: vec![0.0; p],
            pip_sum: vec![0.0; p],
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn beta_rb(&self) -> Vec<f64> {
        let c = self.count.max(1) as f64;
        self.beta_sum.iter().map(|v| v / c).collect()
    }

    pub fn pip_rb(&self) -> Vec<f64> {
        let c = self.count.max(1) as f64;
        self.pip_sum.iter().map(|v| (v / c).clamp(0.0, 1.0)).collect()
    }

    /// Accumulates the conditionals at `state`, reusing its cached neighborhood
    /// scans. With a screening universe, non-members outside it contribute zero.
    pub fn update(&mut self, state: &mut ModelState, data: &RegressionData, hp: &Hyperparams, universe: Option<&Arc<[usize]>>) {
        let del = state.del_scan(data, hp);
        for (i, &k) in del.members.iter().enumerate() {
            let pip = sigmoid_log(-del.log_b[i]);
            self.pip_sum[k] += pip;
            self.beta_sum[k] += pip * del.beta[i];
        }
        if state.size() < hp.s0 {
            let add = state.add_scan(data, hp, universe);
            for j in 0..data.p() {
                if !add.evaluated(j) {
                    continue;
                }
                let pip = sigmoid_log(add.log_b[j]);
                self.pip_sum[j] += pip;
                self.beta_sum[j] += pip * add.beta[j];
            }
        }
        self.count += 1;
    }

    /// Pools accumulators from independent chains.
    pub fn merge(&mut self, other: &RbEstimate) {
        if self.beta_sum.is_empty() {
            *self = other.clone();
            return;
        }
        for (a, b) in self.beta_sum.iter_mut().zip(&other.beta_sum) {
            *a += b;
        }
        for (a, b) in self.pip_sum.iter_mut().zip(&other.pip_sum) {
            *a += b;
        }
        self.count += other.count;
    }

    /// `p^{-1} ||β_RB - β*||^2`.
    pub fn mse(&self, beta_star: &[f64]) -> f64 {
        let b = self.beta_rb();
        b.iter().zip(beta_star).map(|(a, t)| (a - t).powi(2)).sum::<f64>() / b.len().max(1) as f64
    }

    /// CSV with columns `j,pip_rb,beta_rb`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "j,pip_rb,beta_rb")?;
        for (j, (pip, beta)) in self.pip_rb().iter().zip(self.beta_rb()).enumerate() {
            writeln!(w, "{j},{pip:.12e},{beta:.12e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::log_post_unnorm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_covariate() -> (RegressionData, Hyperparams) {
        let x = [0.3, -1.2, 0.8, 1.9, -0.4, 0.1, 1.1, -0.7, 0.5, -1.5];
        let y = [0.9, -1.0, 1.5, 2.2, 0.3, -0.2, 1.4, -1.3, 0.2, -2.0];
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let d = RegressionData::from_rows(&rows, y.to_vec()).unwrap();
        let hp = Hyperparams {
            kappa0: 0.5,
            kappa1: 0.5,
            g: 4.0,
            s0: 1,
        };
        (d, hp)
    }

    // Marginal posterior density of β_0 (up to a constant) with φ integrated out.
    fn beta_density(d: &RegressionData, hp: &Hyperparams, b: f64) -> f64 {
        let xx = d.col_norms2()[0];
        let resid = d.yty() - 2.0 * b * d.xty()[0] + b * b * xx;
        (resid + xx * b * b / hp.g).powf(-(d.n() as f64 + 1.0) / 2.0)
    }

    fn grid(d: &RegressionData, hp: &Hyperparams) -> (Vec<f64>, Vec<f64>) {
        let m = 40_001;
        let (lo, hi) = (-6.0, 6.0);
        let h = (hi - lo) / (m - 1) as f64;
        let xs: Vec<f64> = (0..m).map(|i| lo + h * i as f64).collect();
        let ws: Vec<f64> = xs.iter().map(|&b| beta_density(d, hp, b)).collect();
        (xs, ws)
    }

    #[test]
    fn beta_hat_cases() {
        let (d, hp) = one_covariate();
        let e = ModelState::empty(&d, &hp);
        assert!(beta_hat(&e, &d, &hp).iter().all(|v| *v == 0.0));
        let s = ModelState::new(&d, &hp, &[0]).unwrap();
        let b = beta_hat(&s, &d, &hp)[0];
        assert!((b - hp.shrink() * d.xty()[0] / d.col_norms2()[0]).abs() < 1e-14);
        let (xs, ws) = grid(&d, &hp);
        let z: f64 = ws.iter().sum();
        let mean: f64 = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / z;
        assert!((mean - b).abs() < 1e-6, "{mean} vs {b}");
    }

    #[test]
    fn draws_match_quadrature_marginal() {
        let (d, hp) = one_covariate();
        let s = ModelState::new(&d, &hp, &[0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_beta(&s, &d, &hp, &mut rng).beta[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let b = beta_hat(&s, &d, &hp)[0];
        assert!((mean - b).abs() < 3.0 * (var / n as f64).sqrt());
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (xs, ws) = grid(&d, &hp);
        let z: f64 = ws.iter().sum();
        let mut cdf = 0.0;
        let mut k = 0;
        let mut ks: f64 = 0.0;
        for (x, w) in xs.iter().zip(&ws) {
            cdf += w / z;
            while k < n && draws[k] <= *x {
                k += 1;
            }
            ks = ks.max((k as f64 / n as f64 - cdf).abs());
        }
        assert!(ks < 0.02, "KS = {ks}");
    }

    #[test]
    fn empty_draw_is_zero() {
        let (d, hp) = one_covariate();
        let s = ModelState::empty(&d, &hp);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dr = sample_beta(&s, &d, &hp, &mut rng);
        assert_eq!(dr.t2, 0.0);
        assert!(dr.beta.iter().all(|v| *v == 0.0) && dr.phi > 0.0);
    }

    #[test]
    fn t2_is_fitted_norm() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), 0.1 * i as f64]).collect();
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin()).collect();
        let d = RegressionData::from_rows(&rows, y).unwrap();
        let hp = Hyperparams::new(0.5, 0.5, 3, 3).unwrap();
        let s = ModelState::new(&d, &hp, &[2, 0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dr = sample_beta(&s, &d, &hp, &mut rng);
        let fitted = d.x_times(&[0, 1, 2], &dr.beta);
        let direct: f64 = fitted.iter().map(|v| v * v).sum();
        assert!((direct - dr.t2).abs() < 1e-10 * direct.max(1.0));
    }

    #[test]
    fn conditional_pip_limits() {
        assert_eq!(conditional_pip(0.0), 0.5);
        let lp = 50f64.ln();
        assert!(1.0 - conditional_pip(100.0 * lp) < 1e-10);
        assert!(conditional_pip(-100.0 * lp) < 1e-10);
    }

    #[test]
    fn rb_update_matches_enumeration() {
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|i| (0..4).map(|j| ((i * 7 + j * 3) as f64 * 0.37).sin()).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 1.5 * r[0] - r[2] + 0.3 * ((r[1] * 9.0).sin())).collect();
        let d = RegressionData::from_rows(&rows, y).unwrap();
        let hp = Hyperparams::new(0.5, 0.5, 2, 4).unwrap();
        let g = vec![0, 3];
        let mut s = ModelState::new(&d, &hp, &g).unwrap();
        let mut rb = RbEstimate::new(4);
        assert!(rb.pip_rb().iter().all(|v| *v == 0.0));
        rb.update(&mut s, &d, &hp, None);
        let pip = rb.pip_rb();
        let beta = rb.beta_rb();
        for j in 0..4 {
            let without: Vec<usize> = g.iter().copied().filter(|&c| c != j).collect();
            let mut with = without.clone();
            with.push(j);
            with.sort();
            let expect = if with.len() > hp.s0 {
                0.0
            } else {
                let a = log_post_unnorm(&d, &hp, &with).unwrap();
                let b = log_post_unnorm(&d, &hp, &without).unwrap();
                1.0 / (1.0 + (b - a).exp())
            };
            assert!((pip[j] - expect).abs() < 1e-10, "j = {j}");
            if with.len() <= hp.s0 {
                let w = ModelState::new(&d, &hp, &with).unwrap();
                assert!((beta[j] - expect * beta_hat(&w, &d, &hp)[j]).abs() < 1e-10);
            }
        }
    }
}
