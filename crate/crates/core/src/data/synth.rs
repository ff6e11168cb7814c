//! Synthetic coarse model fields and fine-grid rainfall drawn from a
//! conditional-continuous law: a point mass at zero with probability
//! `1 - r(s)`, otherwise a unit-variance Gaussian around a latent-modulated
//! mean, truncated at zero.
//!
//! A smooth latent `l` evolves on the coarse grid as an AR(1) process in
//! six-hourly steps. Each day's four steps are averaged and rescaled to unit
//! variance; that daily latent is bilinearly interpolated to the fine grid
//! and drives both occurrence (through a Gaussian copula, so the marginal
//! wet probability stays exactly `r(s)`) and intensity.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::layers::mix_seed;
use crate::scalar::Scalar;
use crate::tensor::{bilinear_source, Tensor};

pub const FIELD_CHANNELS: usize = 6;
pub const STEPS_PER_DAY: usize = 4;

/// A per-cell map on the fine grid.
#[derive(Clone, Debug, PartialEq)]
pub enum SpatialField {
    Constant(f64),
    /// Linear west-to-east ramp.
    Ramp { west: f64, east: f64 },
    /// Explicit `[H, W]` map.
    Map(Tensor<f64>),
}

impl SpatialField {
    pub fn at(&self, row: usize, col: usize, width: usize) -> f64 {
        match self {
            SpatialField::Constant(v) => *v,
            SpatialField::Ramp { west, east } => {
                let f = if width > 1 { col as f64 / (width - 1) as f64 } else { 0.0 };
                west + (east - west) * f
            }
            SpatialField::Map(t) => t.get(&[row, col]),
        }
    }

    fn values(&self, (h, w): (usize, usize)) -> Result<Vec<f64>> {
        if let SpatialField::Map(t) = self {
            if t.shape() != [h, w] {
                return Err(Error::Config(format!("spatial map {:?} does not match fine grid {h}x{w}", t.shape())));
            }
        }
        Ok((0..h * w).map(|i| self.at(i / w, i % w, w)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub coarse: (usize, usize),
    pub fine: (usize, usize),
    /// Wet probability `r(s)`.
    pub rain_prob: SpatialField,
    /// Wet-intensity mean `mu(s)` in mm/day.
    pub wet_mean: SpatialField,
    /// AR(1) coefficient per six-hourly step.
    pub rho: f64,
    /// Gaussian smoothing length in coarse cells.
    pub length_scale: f64,
    /// Copula loading of the fine latent on occurrence, in [0, 1].
    pub occurrence_coupling: f64,
    /// Log-intensity loading of the fine latent.
    pub intensity_gain: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl SyntheticConfig {
    /// 20x21 coarse cells onto a 100x140 fine grid.
    pub fn paper_scale(seed: u64) -> Self {
        SyntheticConfig {
            coarse: (20, 21),
            fine: (100, 140),
            rain_prob: SpatialField::Ramp { west: 0.25, east: 0.45 },
            wet_mean: SpatialField::Ramp { west: 4.0, east: 8.0 },
            rho: 0.9,
            length_scale: 2.0,
            occurrence_coupling: 0.9,
            intensity_gain: 0.6,
            start: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            seed,
        }
    }

    /// 5x5 coarse cells onto a 20x20 fine grid.
    pub fn micro(seed: u64) -> Self {
        SyntheticConfig { coarse: (5, 5), fine: (20, 20), length_scale: 1.0, ..Self::paper_scale(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let (ch, cw) = self.coarse;
        let (fh, fw) = self.fine;
        if ch == 0 || cw == 0 || fh < ch || fw < cw {
            return Err(Error::Config(format!("fine grid {fh}x{fw} must cover coarse grid {ch}x{cw}")));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!("rho = {} must satisfy |rho| < 1", self.rho)));
        }
        if !(self.length_scale > 0.0) {
            return Err(Error::Config("length scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.occurrence_coupling) || !self.intensity_gain.is_finite() {
            return Err(Error::Config("coupling must lie in [0, 1] and gain must be finite".into()));
        }
        let r = self.rain_prob.values(self.fine)?;
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("rain probability must lie in [0, 1]".into()));
        }
        let mu = self.wet_mean.values(self.fine)?;
        if mu.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("wet mean must be positive".into()));
        }
        Ok(())
    }
}

/// Coarse fields and fine rainfall over consecutive days.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSeries<T> {
    /// `[4 T, Hc, Wc, 6]` six-hourly model fields.
    pub coarse: Tensor<T>,
    /// `[T, Hf, Wf]` daily rainfall, mm/day.
    pub fine_rain: Tensor<T>,
    pub start: NaiveDate,
}

impl<T: Scalar> GridSeries<T> {
    pub fn days(&self) -> usize {
        self.fine_rain.shape()[0]
    }

    pub fn coarse_shape(&self) -> (usize, usize) {
        (self.coarse.shape()[1], self.coarse.shape()[2])
    }

    pub fn fine_shape(&self) -> (usize, usize) {
        (self.fine_rain.shape()[1], self.fine_rain.shape()[2])
    }

    pub fn check(&self) -> Result<()> {
        let c = self.coarse.shape();
        let f = self.fine_rain.shape();
        if c.len() != 4 || f.len() != 3 || c[0] != STEPS_PER_DAY * f[0] || c[3] != FIELD_CHANNELS {
            return Err(Error::Data(format!("inconsistent series shapes {c:?} / {f:?}")));
        }
        if self.fine_rain.data().iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::Data("rainfall must be non-negative".into()));
        }
        Ok(())
    }
}

/// Row-normalized Gaussian smoothing operator on the coarse grid, so each
/// smoothed cell has unit variance under white-noise input.
fn smoothing_kernel((h, w): (usize, usize), length: f64) -> Vec<f64> {
    let n = h * w;
    let mut k = vec![0.0; n * n];
    for a in 0..n {
        let (ay, ax) = ((a / w) as f64, (a % w) as f64);
        let row = &mut k[a * n..(a + 1) * n];
        for (b, v) in row.iter_mut().enumerate() {
            let (by, bx) = ((b / w) as f64, (b % w) as f64);
            let d2 = (ay - by).powi(2) + (ax - bx).powi(2);
            *v = (-d2 / (2.0 * length * length)).exp();
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    k
}

/// Spatial covariance `K K^T` of the smoothed field.
fn covariance(k: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v: f64 = (0..n).map(|j| k[a * n + j] * k[b * n + j]).sum();
            c[a * n + b] = v;
            c[b * n + a] = v;
        }
    }
    c
}

/// Variance of a four-step mean of a unit-variance AR(1) series.
pub fn daily_mean_variance(rho: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..STEPS_PER_DAY {
        for j in 0..STEPS_PER_DAY {
            s += rho.powi((i as i32 - j as i32).abs());
        }
    }
    s / (STEPS_PER_DAY * STEPS_PER_DAY) as f64
}

/// Bilinear stencil of a fine cell: four `(coarse index, weight)` pairs.
fn fine_weights(coarse: (usize, usize), fine: (usize, usize), row: usize, col: usize) -> [(usize, f64); 4] {
    let (y0, y1, fy) = bilinear_source(coarse.0, fine.0, row);
    let (x0, x1, fx) = bilinear_source(coarse.1, fine.1, col);
    let w = coarse.1;
    [
        (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
        (y0 * w + x1, (1.0 - fy) * fx),
        (y1 * w + x0, fy * (1.0 - fx)),
        (y1 * w + x1, fy * fx),
    ]
}

/// Draws from `N(mean, 1)` conditioned on being positive.
pub fn truncated_normal(mean: f64, rng: &mut impl Rng) -> f64 {
    if mean < -3.0 {
        // Exponential-proposal rejection for the far tail.
        let a = -mean;
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let e: f64 = -rng.random::<f64>().max(f64::MIN_POSITIVE).ln() / lambda;
            let z = a + e;
            if rng.random::<f64>() <= (-0.5 * (z - lambda).powi(2)).exp() {
                return z + mean;
            }
        }
    }
    loop {
        let v = mean + rng.sample::<f64, _>(StandardNormal);
        if v > 0.0 {
            return v;
        }
    }
}

/// Six coarse channels at one step: the latent, its previous step, x and y
/// gradients, a one-cell eastward shift, and a centred square.
fn push_fields(cur: &[f64], prev: &[f64], (h, w): (usize, usize), out: &mut Vec<f64>) {
    let at = |f: &[f64], y: usize, x: usize| f[y * w + x];
    for y in 0..h {
        for x in 0..w {
            let l = at(cur, y, x);
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let dx = if xr > xl { (at(cur, y, xr) - at(cur, y, xl)) / (xr - xl) as f64 } else { 0.0 };
            let dy = if yd > yu { (at(cur, yd, x) - at(cur, yu, x)) / (yd - yu) as f64 } else { 0.0 };
            out.extend_from_slice(&[l, at(prev, y, x), dx, dy, at(cur, y, xr), 0.5 * l * l - 0.5]);
        }
    }
}

pub fn synth_generate<T: Scalar>(config: &SyntheticConfig, days: usize) -> Result<GridSeries<T>> {
    config.validate()?;
    if days < 28 {
        return Err(Error::Config(format!("need at least 28 days, got {days}")));
    }
    let (ch, cw) = config.coarse;
    let (fh, fw) = config.fine;
    let n = ch * cw;
    let kernel = smoothing_kernel(config.coarse, config.length_scale);
    let cov = covariance(&kernel, n);
    let steps = days * STEPS_PER_DAY;

    let mut latent_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0));
    let smooth_noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n).map(|a| kernel[a * n..(a + 1) * n].iter().zip(&e).map(|(k, v)| k * v).sum()).collect()
    };
    let innovation = (1.0 - config.rho * config.rho).sqrt();
    let daily_scale = 1.0 / daily_mean_variance(config.rho).sqrt();
    let mut coarse = Vec::with_capacity(steps * n * FIELD_CHANNELS);
    let mut daily = vec![vec![0.0; n]; days];
    let mut cur = smooth_noise(&mut latent_rng);
    let mut prev = cur.clone();
    for t in 0..steps {
        if t > 0 {
            let e = smooth_noise(&mut latent_rng);
            prev = std::mem::replace(&mut cur, vec![0.0; n]);
            for i in 0..n {
                cur[i] = config.rho * prev[i] + innovation * e[i];
            }
        }
        push_fields(&cur, &prev, config.coarse, &mut coarse);
        let d = &mut daily[t / STEPS_PER_DAY];
        for i in 0..n {
            d[i] += cur[i] * daily_scale / STEPS_PER_DAY as f64;
        }
    }

    let r = config.rain_prob.values(config.fine)?;
    let mu = config.wet_mean.values(config.fine)?;
    let weights: Vec<[(usize, f64); 4]> = (0..fh * fw).map(|i| fine_weights(config.coarse, config.fine, i / fw, i % fw)).collect();
    let kappa = config.occurrence_coupling;
    let idio: Vec<f64> = weights
        .iter()
        .map(|ws| {
            let v: f64 = ws.iter().flat_map(|&(a, wa)| ws.iter().map(move |&(b, wb)| (a, b, wa * wb))).map(|(a, b, x)| x * cov[a * n + b]).sum();
            (1.0 - kappa * kappa * v).max(0.0).sqrt()
        })
        .collect();
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let gamma = config.intensity_gain;
    let mut rain_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    let mut rain = Vec::with_capacity(days * fh * fw);
    for d in &daily {
        for (i, ws) in weights.iter().enumerate() {
            let l: f64 = ws.iter().map(|&(a, w)| w * d[a]).sum();
            let eps: f64 = rain_rng.sample(StandardNormal);
            let z = kappa * l + idio[i] * eps;
            let wet = std_normal.cdf(z) > 1.0 - r[i];
            rain.push(if wet {
                let mean = mu[i] * (gamma * l - 0.5 * gamma * gamma).exp();
                truncated_normal(mean, &mut rain_rng)
            } else {
                0.0
            });
        }
    }
    let coarse = Tensor::new(vec![steps, ch, cw, FIELD_CHANNELS], coarse)?.cast();
    let fine_rain = Tensor::new(vec![days, fh, fw], rain)?.cast();
    Ok(GridSeries { coarse, fine_rain, start: config.start })
}
