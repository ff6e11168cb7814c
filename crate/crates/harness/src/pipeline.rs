//! Dataset files and the series-to-splits preparation used by training,
//! prediction and grid search.

use std::path::Path;

use chrono::NaiveDate;
use trunet_core::data::calendar::{day, parse_date};
use trunet_core::data::tgrd::entry;
use trunet_core::data::{
    extract_windows, lattice_locations, normalize, read_grid_file, split_by_date, write_grid_file, GridSeries, GridTensor, Manifest,
    NormStats, Splits, SyntheticConfig, WindowSpec,
};
use trunet_core::data::synth::STEPS_PER_DAY;
use trunet_core::model::{manifest_path, ModelConfig};
use trunet_core::{Error, Result, Scalar};

/// Writes `series` as a TGRD file with `coarse` and `fine_rain` entries and
/// a sidecar manifest holding the start date.
pub fn write_dataset<T: Scalar>(path: &Path, series: &GridSeries<T>, extra: &Manifest) -> Result<()> {
    series.check()?;
    let entries = vec![
        ("coarse".to_string(), GridTensor::from(series.coarse.clone())),
        ("fine_rain".to_string(), GridTensor::from(series.fine_rain.clone())),
    ];
    write_grid_file(path, &entries)?;
    let mut m = extra.clone();
    m.set("start", series.start).set("days", series.days());
    m.write(manifest_path(path))
}

pub fn read_dataset<T: Scalar>(path: &Path) -> Result<GridSeries<T>> {
    let m = Manifest::read(manifest_path(path))?;
    let start = m.get_str("start").and_then(parse_date).ok_or_else(|| Error::Format("dataset manifest lacks a start date".into()))?;
    let entries = read_grid_file(path)?;
    let series = GridSeries {
        coarse: entry(&entries, "coarse")?.to_tensor(),
        fine_rain: entry(&entries, "fine_rain")?.to_tensor(),
        start,
    };
    series.check()?;
    Ok(series)
}

/// Synthetic generator settings as manifest entries.
pub fn synth_manifest(c: &SyntheticConfig) -> Manifest {
    let mut m = Manifest::new();
    m.set_list("synth.coarse", &[c.coarse.0, c.coarse.1])
        .set_list("synth.fine", &[c.fine.0, c.fine.1])
        .set("synth.rho", c.rho)
        .set("synth.length_scale", c.length_scale)
        .set("synth.occurrence_coupling", c.occurrence_coupling)
        .set("synth.intensity_gain", c.intensity_gain)
        .set("synth.seed", c.seed);
    m
}

/// How windows are cut from a series and split by date.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataPlan {
    /// Locations per grid side; `per_side^2` locations in total.
    pub per_side: usize,
    /// Days between consecutive window starts.
    pub stride: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataPlan {
    fn default() -> Self {
        DataPlan { per_side: 4, stride: 7, val_fraction: 0.15, test_fraction: 0.15 }
    }
}

impl DataPlan {
    pub fn validate(&self) -> Result<()> {
        let (v, t) = (self.val_fraction, self.test_fraction);
        if self.per_side == 0 || self.stride == 0 || !(v > 0.0 && t >= 0.0 && v + t < 1.0) {
            return Err(Error::Config(format!("invalid data plan {self:?}")));
        }
        Ok(())
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        m.set("per_side", self.per_side)
            .set("stride", self.stride)
            .set("val_fraction", self.val_fraction)
            .set("test_fraction", self.test_fraction);
    }

    pub fn merge_manifest(mut self, m: &Manifest) -> Result<Self> {
        if let Some(v) = m.get("per_side")? {
            self.per_side = v;
        }
        if let Some(v) = m.get("stride")? {
            self.stride = v;
        }
        if let Some(v) = m.get("val_fraction")? {
            self.val_fraction = v;
        }
        if let Some(v) = m.get("test_fraction")? {
            self.test_fraction = v;
        }
        self.validate()?;
        Ok(self)
    }

    /// First validation day and first test day of a `days`-long series.
    pub fn boundaries(&self, start: NaiveDate, days: usize) -> (NaiveDate, NaiveDate) {
        let train = ((1.0 - self.val_fraction - self.test_fraction) * days as f64).floor() as usize;
        let test = ((1.0 - self.test_fraction) * days as f64).floor() as usize;
        (day(start, train), day(start, test))
    }
}

/// Normalized splits and the training statistics used for them.
#[derive(Clone, Debug)]
pub struct Prepared<T> {
    pub splits: Splits<T>,
    pub stats: NormStats,
}

pub fn window_spec(config: &ModelConfig) -> Result<WindowSpec> {
    let spec = WindowSpec { days: config.days(), stencil: config.stencil(), crop: config.crop() };
    if spec.steps() != config.window() || config.window() != config.days() * STEPS_PER_DAY {
        return Err(Error::Config(format!(
            "model window of {} steps does not cover {} days of {STEPS_PER_DAY} steps",
            config.window(),
            config.days()
        )));
    }
    Ok(spec)
}

/// Cuts windows for `config`, splits them by date and standardizes inputs
/// with training-split statistics (or `stats`, when given).
pub fn prepare<T: Scalar>(series: &GridSeries<T>, config: &ModelConfig, plan: &DataPlan, stats: Option<NormStats>) -> Result<Prepared<T>> {
    plan.validate()?;
    let spec = window_spec(config)?;
    let locations = lattice_locations(series.fine_shape(), spec.stencil, plan.per_side)?;
    let windows = extract_windows(series, &locations, plan.stride, spec)?;
    let (val_start, test_start) = plan.boundaries(series.start, series.days());
    let mut splits = split_by_date(windows, val_start, test_start)?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Data(format!(
            "series of {} days leaves {} training and {} validation windows",
            series.days(),
            splits.train.len(),
            splits.val.len()
        )));
    }
    let stats = match stats {
        Some(s) => s,
        None => NormStats::fit(&splits.train)?,
    };
    normalize(&mut splits.train, &stats);
    normalize(&mut splits.val, &stats);
    normalize(&mut splits.test, &stats);
    Ok(Prepared { splits, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use trunet_core::data::synth_generate;
    use trunet_core::model::TruNetConfig;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let series = synth_generate::<f32>(&SyntheticConfig::micro(3), 30).unwrap();
        let path = dir.path().join("d.tgrd");
        write_dataset(&path, &series, &synth_manifest(&SyntheticConfig::micro(3))).unwrap();
        assert_eq!(read_dataset::<f32>(&path).unwrap(), series);
    }

    #[test]
    fn prepare_splits_in_date_order_with_train_statistics() {
        let series = synth_generate::<f64>(&SyntheticConfig::micro(1), 140).unwrap();
        let config = ModelConfig::TruNet(TruNetConfig::micro(true));
        let plan = DataPlan { per_side: 2, ..DataPlan::default() };
        let p = prepare(&series, &config, &plan, None).unwrap();
        assert!(!p.splits.test.is_empty());
        assert!(p.splits.train.iter().all(|w| w.x.shape() == [28, 8, 8, 6] && w.y.shape() == [7, 4, 4]));
        let c = 6;
        let mut sum = vec![0.0; c];
        let mut n = 0.0;
        for w in &p.splits.train {
            for px in w.x.data().chunks(c) {
                sum.iter_mut().zip(px).for_each(|(s, v)| *s += v);
                n += 1.0;
            }
        }
        assert!(sum.iter().all(|s| (s / n).abs() < 1e-6), "{sum:?}");
        let bad = ModelConfig::TruNet(TruNetConfig { factors: [1, 2, 7], ..TruNetConfig::micro(true) });
        assert!(prepare(&series, &bad, &plan, None).is_err());
    }
}
