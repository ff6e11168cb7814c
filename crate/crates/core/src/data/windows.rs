//! Stencil windows cut from a [`GridSeries`] on the fine grid, input
//! normalization, and date-based splits.

use chrono::NaiveDate;

use super::calendar::day;
use super::manifest::{fmt_f64, Manifest};
use super::synth::{GridSeries, FIELD_CHANNELS, STEPS_PER_DAY};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_source, bilinear_upsample, index0, stack, Tensor};

/// Window geometry: `days` daily targets over a `stencil` square of fine
/// cells, `crop` central cells of which are targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub days: usize,
    pub stencil: usize,
    pub crop: usize,
}

impl WindowSpec {
    pub const PAPER: WindowSpec = WindowSpec { days: 28, stencil: 16, crop: 4 };

    pub fn steps(&self) -> usize {
        self.days * STEPS_PER_DAY
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.crop == 0 || self.crop > self.stencil || (self.stencil - self.crop) % 2 != 0 {
            return Err(Error::Config(format!("invalid window geometry {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeatherWindow<T> {
    /// `[steps, stencil, stencil, 6]` six-hourly inputs.
    pub x: Tensor<T>,
    /// `[days, crop, crop]` rainfall targets, mm/day.
    pub y: Tensor<T>,
    pub location: usize,
    /// Index of the first day within the source series.
    pub start_day: usize,
    pub start: NaiveDate,
}

impl<T: Scalar> WeatherWindow<T> {
    pub fn days(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn last_date(&self) -> NaiveDate {
        day(self.start, self.days() - 1)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.days()).map(|d| day(self.start, d))
    }
}

/// Bilinear upsampling of every step of `[T, Hc, Wc, C]` onto the fine grid.
pub fn upsample_series<T: Scalar>(coarse: &Tensor<T>, fine: (usize, usize)) -> Result<Tensor<T>> {
    if coarse.rank() != 4 {
        return Err(Error::shape("upsample_series", format!("need [T,H,W,C], got {:?}", coarse.shape())));
    }
    let steps: Vec<Tensor<T>> = (0..coarse.shape()[0])
        .map(|t| bilinear_upsample(&index0(coarse, t)?, fine))
        .collect::<Result<_>>()?;
    stack(&steps.iter().collect::<Vec<_>>())
}

/// Evenly spread stencil centres: a `per_side x per_side` lattice of fine
/// cells whose stencils fit inside the grid.
pub fn lattice_locations(fine: (usize, usize), stencil: usize, per_side: usize) -> Result<Vec<(usize, usize)>> {
    let half = stencil / 2;
    let axis = |n: usize| -> Result<Vec<usize>> {
        if n < stencil || per_side == 0 {
            return Err(Error::Config(format!("stencil {stencil} does not fit extent {n}")));
        }
        let (lo, hi) = (half, n - (stencil - half));
        Ok((0..per_side)
            .map(|i| if per_side == 1 { (lo + hi) / 2 } else { lo + i * (hi - lo) / (per_side - 1) })
            .collect())
    };
    let (rows, cols) = (axis(fine.0)?, axis(fine.1)?);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// Cuts one window per location and per start day `0, stride, 2 stride, ...`.
///
/// A location `(r, c)` is the fine cell at stencil offset `stencil / 2`; its
/// stencil spans rows `r - stencil/2 .. r + stencil/2` and the targets are
/// the central `crop` cells of that span. Inputs are interpolated from the
/// coarse fields at exactly the stencil cells.
pub fn extract_windows<T: Scalar>(
    series: &GridSeries<T>,
    locations: &[(usize, usize)],
    stride: usize,
    spec: WindowSpec,
) -> Result<Vec<WeatherWindow<T>>> {
    spec.validate()?;
    series.check()?;
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let total = series.days();
    if total < spec.days {
        return Err(Error::Data(format!("series has {total} days, windows need {}", spec.days)));
    }
    let (fh, fw) = series.fine_shape();
    let (ch, cw) = series.coarse_shape();
    let s = spec.stencil;
    let half = s / 2;
    let bad: Vec<_> = locations.iter().copied().filter(|&(r, c)| r < half || c < half || r + s - half > fh || c + s - half > fw).collect();
    if !bad.is_empty() {
        return Err(Error::Placement(bad));
    }
    let coarse = series.coarse.data();
    let rain = series.fine_rain.data();
    let off = (s - spec.crop) / 2;
    let mut out = Vec::new();
    for (li, &(r, c)) in locations.iter().enumerate() {
        let (top, left) = (r - half, c - half);
        let rows: Vec<_> = (top..top + s).map(|i| bilinear_source(ch, fh, i)).collect();
        let cols: Vec<_> = (left..left + s).map(|j| bilinear_source(cw, fw, j)).collect();
        let mut start_day = 0;
        while start_day + spec.days <= total {
            let mut x = Vec::with_capacity(spec.steps() * s * s * FIELD_CHANNELS);
            for t in start_day * STEPS_PER_DAY..(start_day + spec.days) * STEPS_PER_DAY {
                let base = t * ch * cw * FIELD_CHANNELS;
                for &(y0, y1, fy) in &rows {
                    let fy = T::lit(fy);
                    for &(x0, x1, fx) in &cols {
                        let fx = T::lit(fx);
                        for k in 0..FIELD_CHANNELS {
                            let at = |yy: usize, xx: usize| coarse[base + (yy * cw + xx) * FIELD_CHANNELS + k];
                            let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                            let bot = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                            x.push(top + (bot - top) * fy);
                        }
                    }
                }
            }
            let mut y = Vec::with_capacity(spec.days * spec.crop * spec.crop);
            for d in start_day..start_day + spec.days {
                for i in top + off..top + off + spec.crop {
                    let row = (d * fh + i) * fw;
                    y.extend_from_slice(&rain[row + left + off..row + left + off + spec.crop]);
                }
            }
            out.push(WeatherWindow {
                x: Tensor::new(vec![spec.steps(), s, s, FIELD_CHANNELS], x)?,
                y: Tensor::new(vec![spec.days, spec.crop, spec.crop], y)?,
                location: li,
                start_day,
                start: day(series.start, start_day),
            });
            start_day += stride;
        }
    }
    Ok(out)
}

/// Per-channel input standardization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose standard deviation was zero and replaced by 1.
    pub degenerate: Vec<usize>,
}

impl NormStats {
    /// Statistics over every input value of `windows`, channel by channel.
    pub fn fit<T: Scalar>(windows: &[WeatherWindow<T>]) -> Result<Self> {
        let c = windows
            .first()
            .map(|w| *w.x.shape().last().unwrap())
            .ok_or_else(|| Error::Data("cannot fit normalization on no windows".into()))?;
        let mut n = 0usize;
        let mut sum = vec![0.0; c];
        for w in windows {
            for px in w.x.data().chunks_exact(c) {
                for (s, v) in sum.iter_mut().zip(px) {
                    *s += v.as_f64();
                }
            }
            n += w.x.numel() / c;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut sq = vec![0.0; c];
        for w in windows {
            for px in w.x.data().chunks_exact(c) {
                for ((s, v), m) in sq.iter_mut().zip(px).zip(&mean) {
                    *s += (v.as_f64() - m).powi(2);
                }
            }
        }
        let mut degenerate = Vec::new();
        let std = sq
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    degenerate.push(i);
                    1.0
                }
            })
            .collect();
        Ok(NormStats { mean, std, degenerate })
    }

    pub fn normalize<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.apply(x, |v, m, s| v * s + m)
    }

    fn apply<T: Scalar>(&self, x: &Tensor<T>, f: impl Fn(f64, f64, f64) -> f64) -> Tensor<T> {
        let c = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = T::lit(f(v.as_f64(), self.mean[i % c], self.std[i % c]));
        }
        out
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        m.set("norm.mean", self.mean.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
        m.set("norm.std", self.std.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
    }

    pub fn from_manifest(m: &Manifest) -> Result<Option<Self>> {
        match (m.get_list::<f64>("norm.mean")?, m.get_list::<f64>("norm.std")?) {
            (Some(mean), Some(std)) if mean.len() == std.len() => Ok(Some(NormStats { mean, std, degenerate: Vec::new() })),
            (None, None) => Ok(None),
            _ => Err(Error::Config("inconsistent normalization entries".into())),
        }
    }
}

/// Standardizes the inputs of every window in place; targets stay raw.
pub fn normalize<T: Scalar>(windows: &mut [WeatherWindow<T>], stats: &NormStats) {
    for w in windows {
        w.x = stats.normalize(&w.x);
    }
}

/// Train / validation / test partition by calendar date.
#[derive(Clone, Debug)]
pub struct Splits<T> {
    pub train: Vec<WeatherWindow<T>>,
    pub val: Vec<WeatherWindow<T>>,
    pub test: Vec<WeatherWindow<T>>,
}

/// Assigns each window to the split containing all of its days:
/// train before `val_start`, validation before `test_start`, test after.
/// Windows straddling a boundary are dropped.
pub fn split_by_date<T: Scalar>(windows: Vec<WeatherWindow<T>>, val_start: NaiveDate, test_start: NaiveDate) -> Result<Splits<T>> {
    if val_start > test_start {
        return Err(Error::Config("validation must start before test".into()));
    }
    let mut s = Splits { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for w in windows {
        let (a, b) = (w.start, w.last_date());
        if b < val_start {
            s.train.push(w);
        } else if a >= val_start && b < test_start {
            s.val.push(w);
        } else if a >= test_start {
            s.test.push(w);
        }
    }
    assert_no_leakage(&s.train, &s.val)?;
    assert_no_leakage(&s.train, &s.test)?;
    assert_no_leakage(&s.val, &s.test)?;
    Ok(s)
}

/// Fails if any earlier-split window reaches a date of the later split.
pub fn assert_no_leakage<T: Scalar>(earlier: &[WeatherWindow<T>], later: &[WeatherWindow<T>]) -> Result<()> {
    let last = earlier.iter().map(WeatherWindow::last_date).max();
    let first = later.iter().map(|w| w.start).min();
    match (last, first) {
        (Some(l), Some(f)) if l >= f => Err(Error::Data(format!("split leakage: earlier split reaches {l}, later starts {f}"))),
        _ => Ok(()),
    }
}
