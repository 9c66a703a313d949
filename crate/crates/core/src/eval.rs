//! Calibration, suite evaluation and the damping study.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{dominant_frequency, ConventionalEstimator, DominantFrequencyOptions};
use crate::material::MaterialModel;
use crate::metrics::{mae, rmse, Mae};
use crate::synth::{generate_wavefield, SceneSpec};
use crate::volume::WaveFieldVolume;

/// Least-squares scaling factor for `E ~ q * rho * 2 (1 + nu) * v^2`, fitted
/// in the elasticity domain: `q = sum(E_i x_i) / sum(x_i^2)` with
/// `x_i = rho * 2 (1 + nu) * v_i^2`.
pub fn calibrate_q(velocities: &[f64], ground_truths: &[f64], base: &MaterialModel) -> Result<f64> {
    if velocities.len() != ground_truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} velocities vs {} ground truths",
            velocities.len(),
            ground_truths.len()
        )));
    }
    if velocities.len() < 2 {
        return Err(Error::InvalidArgument(
            "calibration needs at least two samples".into(),
        ));
    }
    if velocities.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "velocities must be finite and >= 0".into(),
        ));
    }
    base.validate()?;
    let c = base.unscaled_coefficient();
    let (num, den) = velocities
        .iter()
        .zip(ground_truths)
        .fold((0.0, 0.0), |(num, den), (v, e)| {
            let x = c * v * v;
            (num + e * x, den + x * x)
        });
    if den == 0.0 {
        return Err(Error::InvalidArgument("all velocities are zero".into()));
    }
    Ok(num / den)
}

/// Output of an estimator for one volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub e_pa: Option<f64>,
    pub v_mps: f64,
    pub dominant_frequency_hz: f64,
}

pub trait Estimator: Sync {
    fn estimate(&self, volume: &WaveFieldVolume) -> Result<Estimate>;
}

impl Estimator for ConventionalEstimator {
    fn estimate(&self, volume: &WaveFieldVolume) -> Result<Estimate> {
        let e = ConventionalEstimator::estimate(self, volume)?;
        Ok(Estimate {
            e_pa: e.e_pa,
            v_mps: e.velocity.v_mps,
            dominant_frequency_hz: e.velocity.dominant_frequency_hz,
        })
    }
}

/// Returns the ground truth plus a constant offset.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEstimator {
    pub offset_pa: f64,
}

impl Estimator for OracleEstimator {
    fn estimate(&self, volume: &WaveFieldVolume) -> Result<Estimate> {
        let truth = volume
            .meta
            .ground_truth_e_pa
            .ok_or_else(|| Error::MissingGroundTruth(volume.meta.source_id.clone()))?;
        Ok(Estimate {
            e_pa: Some(truth + self.offset_pa),
            v_mps: 0.0,
            dominant_frequency_hz: volume.meta.excitation_frequency_hz.unwrap_or(0.0),
        })
    }
}

/// Predictions computed elsewhere, keyed by source id and frequency.
#[derive(Debug, Clone, Default)]
pub struct PredictionTable {
    rows: BTreeMap<(String, u64), Estimate>,
}

impl PredictionTable {
    pub fn from_rows(rows: &[ReportRow]) -> Self {
        let rows = rows
            .iter()
            .map(|r| {
                (
                    (r.source_id.clone(), r.frequency_hz.to_bits()),
                    Estimate {
                        e_pa: r.e_est_pa.filter(|_| r.valid),
                        v_mps: r.v_mps,
                        dominant_frequency_hz: r.dominant_frequency_hz,
                    },
                )
            })
            .collect();
        Self { rows }
    }
}

impl Estimator for PredictionTable {
    fn estimate(&self, volume: &WaveFieldVolume) -> Result<Estimate> {
        let freq = volume.meta.excitation_frequency_hz.unwrap_or(0.0);
        self.rows
            .get(&(volume.meta.source_id.clone(), freq.to_bits()))
            .copied()
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no prediction for {} at {freq} Hz",
                    volume.meta.source_id
                ))
            })
    }
}

/// Indexed collection of volumes that can be loaded independently.
pub trait VolumeSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<WaveFieldVolume>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl VolumeSource for [WaveFieldVolume] {
    fn len(&self) -> usize {
        <[WaveFieldVolume]>::len(self)
    }
    fn load(&self, index: usize) -> Result<WaveFieldVolume> {
        Ok(self[index].clone())
    }
}

impl VolumeSource for Vec<WaveFieldVolume> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn load(&self, index: usize) -> Result<WaveFieldVolume> {
        Ok(self[index].clone())
    }
}

/// Synthesises each scene on demand.
pub struct SceneSource<'a>(pub &'a [SceneSpec]);

impl VolumeSource for SceneSource<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn load(&self, index: usize) -> Result<WaveFieldVolume> {
        generate_wavefield(&self.0[index])
    }
}

/// Volume header files read from disk on demand.
pub struct FileSource(pub Vec<std::path::PathBuf>);

impl VolumeSource for FileSource {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn load(&self, index: usize) -> Result<WaveFieldVolume> {
        crate::io::read_volume(&self.0[index])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source_id: String,
    pub frequency_hz: f64,
    pub e_true_pa: f64,
    pub e_est_pa: Option<f64>,
    pub valid: bool,
    pub v_mps: f64,
    pub dominant_frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub frequency_hz: f64,
    pub count: usize,
    pub valid_count: usize,
    pub valid_fraction: f64,
    /// Over valid rows only; absent when none are valid.
    pub mae: Option<Mae>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    /// Positions with at least one valid estimate.
    pub count: usize,
    pub mae: Mae,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_dataset: Vec<ReportRow>,
    pub per_frequency: Vec<FrequencyStats>,
    pub ensemble: Option<EnsembleStats>,
}

fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        a.source_id
            .cmp(&b.source_id)
            .then(a.frequency_hz.total_cmp(&b.frequency_hz))
    });
}

fn valid_pairs<'a>(rows: impl Iterator<Item = &'a ReportRow>) -> (Vec<f64>, Vec<f64>) {
    rows.filter(|r| r.valid)
        .filter_map(|r| r.e_est_pa.map(|e| (e, r.e_true_pa)))
        .unzip()
}

impl EvaluationReport {
    /// Sorts the rows and recomputes every aggregate from them.
    pub fn from_rows(mut rows: Vec<ReportRow>) -> Result<Self> {
        sort_rows(&mut rows);

        let mut frequencies: Vec<f64> = rows.iter().map(|r| r.frequency_hz).collect();
        frequencies.sort_by(f64::total_cmp);
        frequencies.dedup();
        let per_frequency = frequencies
            .into_iter()
            .map(|f| {
                let group: Vec<&ReportRow> = rows.iter().filter(|r| r.frequency_hz == f).collect();
                let (pred, truth) = valid_pairs(group.iter().copied());
                let valid_count = pred.len();
                Ok(FrequencyStats {
                    frequency_hz: f,
                    count: group.len(),
                    valid_count,
                    valid_fraction: valid_count as f64 / group.len() as f64,
                    mae: (valid_count > 0).then(|| mae(&pred, &truth)).transpose()?,
                    rmse: (valid_count > 0).then(|| rmse(&pred, &truth)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        // Rows are sorted by source id, so positions are contiguous.
        let mut ens_pred = Vec::new();
        let mut ens_truth = Vec::new();
        for group in rows.chunk_by(|a, b| a.source_id == b.source_id) {
            let truth = group[0].e_true_pa;
            if group.iter().any(|r| r.e_true_pa != truth) {
                return Err(Error::InvalidArgument(format!(
                    "inconsistent ground truth for {}",
                    group[0].source_id
                )));
            }
            let (pred, _) = valid_pairs(group.iter());
            if !pred.is_empty() {
                ens_pred.push(pred.iter().sum::<f64>() / pred.len() as f64);
                ens_truth.push(truth);
            }
        }
        let ensemble = if ens_pred.is_empty() {
            None
        } else {
            Some(EnsembleStats {
                count: ens_pred.len(),
                mae: mae(&ens_pred, &ens_truth)?,
                rmse: rmse(&ens_pred, &ens_truth)?,
            })
        };

        Ok(Self {
            per_dataset: rows,
            per_frequency,
            ensemble,
        })
    }

    pub fn frequency(&self, frequency_hz: f64) -> Option<&FrequencyStats> {
        self.per_frequency
            .iter()
            .find(|s| s.frequency_hz == frequency_hz)
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            datasets: usize,
            per_frequency: &'a [FrequencyStats],
            ensemble: &'a Option<EnsembleStats>,
        }
        serde_json::to_string_pretty(&Summary {
            datasets: self.per_dataset.len(),
            per_frequency: &self.per_frequency,
            ensemble: &self.ensemble,
        })
        .expect("summary serialises")
    }
}

fn row_for(volume: &WaveFieldVolume, estimate: Estimate) -> Result<ReportRow> {
    let truth = volume
        .meta
        .ground_truth_e_pa
        .ok_or_else(|| Error::MissingGroundTruth(volume.meta.source_id.clone()))?;
    Ok(ReportRow {
        source_id: volume.meta.source_id.clone(),
        frequency_hz: volume.meta.excitation_frequency_hz.unwrap_or(0.0),
        e_true_pa: truth,
        e_est_pa: estimate.e_pa,
        valid: estimate.e_pa.is_some(),
        v_mps: estimate.v_mps,
        dominant_frequency_hz: estimate.dominant_frequency_hz,
    })
}

/// Runs `estimator` over every volume (in parallel) and aggregates errors
/// per excitation frequency and for the per-position ensemble.
pub fn evaluate_suite<S, E>(volumes: &S, estimator: &E) -> Result<EvaluationReport>
where
    S: VolumeSource + ?Sized,
    E: Estimator + ?Sized,
{
    let rows = (0..volumes.len())
        .into_par_iter()
        .map(|i| {
            let volume = volumes.load(i)?;
            if volume.meta.ground_truth_e_pa.is_none() {
                return Err(Error::MissingGroundTruth(volume.meta.source_id.clone()));
            }
            let estimate = estimator.estimate(&volume)?;
            row_for(&volume, estimate)
        })
        .collect::<Result<Vec<_>>>()?;
    EvaluationReport::from_rows(rows)
}

/// Fits `q` from the velocities an estimator reports on a labelled suite.
/// Invalid estimates are skipped.
pub fn calibrate_from_report(report: &EvaluationReport, base: &MaterialModel) -> Result<f64> {
    let (v, e): (Vec<f64>, Vec<f64>) = report
        .per_dataset
        .iter()
        .filter(|r| r.valid)
        .map(|r| (r.v_mps, r.e_true_pa))
        .unzip();
    calibrate_q(&v, &e, base)
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingRow {
    pub source_id: String,
    pub frequency_hz: f64,
    pub e_undamped_pa: Option<f64>,
    pub e_damped_pa: Option<f64>,
    pub measured_frequency_undamped_hz: f64,
    pub measured_frequency_damped_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingFrequencyStats {
    pub frequency_hz: f64,
    pub pairs: usize,
    /// Mean |E_damped - E_undamped| over pairs where both arms are valid.
    pub mean_abs_offset_pa: Option<f64>,
    pub median_deviation_undamped_hz: f64,
    pub median_deviation_damped_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingReport {
    pub rows: Vec<DampingRow>,
    pub per_frequency: Vec<DampingFrequencyStats>,
}

/// Undamped/damped volume pairs.
pub trait PairSource: Sync {
    fn len(&self) -> usize;
    fn load_pair(&self, index: usize) -> Result<(WaveFieldVolume, WaveFieldVolume)>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for [(WaveFieldVolume, WaveFieldVolume)] {
    fn len(&self) -> usize {
        <[(WaveFieldVolume, WaveFieldVolume)]>::len(self)
    }
    fn load_pair(&self, index: usize) -> Result<(WaveFieldVolume, WaveFieldVolume)> {
        Ok(self[index].clone())
    }
}

impl PairSource for Vec<(WaveFieldVolume, WaveFieldVolume)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn load_pair(&self, index: usize) -> Result<(WaveFieldVolume, WaveFieldVolume)> {
        Ok(self[index].clone())
    }
}

/// Header paths of matched undamped and damped volumes.
pub struct FilePairs(pub Vec<(std::path::PathBuf, std::path::PathBuf)>);

impl PairSource for FilePairs {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn load_pair(&self, index: usize) -> Result<(WaveFieldVolume, WaveFieldVolume)> {
        let (u, d) = &self.0[index];
        Ok((crate::io::read_volume(u)?, crate::io::read_volume(d)?))
    }
}

fn check_pair(undamped: &WaveFieldVolume, damped: &WaveFieldVolume) -> Result<f64> {
    let (u, d) = (&undamped.meta, &damped.meta);
    let frequency = u.excitation_frequency_hz.ok_or_else(|| {
        Error::MismatchedPair(format!("{} has no excitation frequency", u.source_id))
    })?;
    if u.source_id != d.source_id
        || u.excitation_frequency_hz != d.excitation_frequency_hz
        || u.ground_truth_e_pa != d.ground_truth_e_pa
        || undamped.geometry() != damped.geometry()
    {
        return Err(Error::MismatchedPair(format!(
            "{} @ {:?} Hz vs {} @ {:?} Hz",
            u.source_id, u.excitation_frequency_hz, d.source_id, d.excitation_frequency_hz
        )));
    }
    Ok(frequency)
}

/// Elasticity offset and excitation-vs-measured frequency deviation between
/// undamped and damped acquisitions of the same scenes.
pub fn damping_study<P, E>(
    pairs: &P,
    estimator: &E,
    frequency_options: &DominantFrequencyOptions,
) -> Result<DampingReport>
where
    P: PairSource + ?Sized,
    E: Estimator + ?Sized,
{
    let mut rows = (0..pairs.len())
        .into_par_iter()
        .map(|i| {
            let (undamped, damped) = pairs.load_pair(i)?;
            let frequency_hz = check_pair(&undamped, &damped)?;
            Ok(DampingRow {
                source_id: undamped.meta.source_id.clone(),
                frequency_hz,
                e_undamped_pa: estimator.estimate(&undamped)?.e_pa,
                e_damped_pa: estimator.estimate(&damped)?.e_pa,
                measured_frequency_undamped_hz: dominant_frequency(&undamped, frequency_options)?,
                measured_frequency_damped_hz: dominant_frequency(&damped, frequency_options)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.source_id
            .cmp(&b.source_id)
            .then(a.frequency_hz.total_cmp(&b.frequency_hz))
    });
    Ok(DampingReport {
        per_frequency: damping_stats(&rows),
        rows,
    })
}

pub fn damping_stats(rows: &[DampingRow]) -> Vec<DampingFrequencyStats> {
    let mut frequencies: Vec<f64> = rows.iter().map(|r| r.frequency_hz).collect();
    frequencies.sort_by(f64::total_cmp);
    frequencies.dedup();
    frequencies
        .into_iter()
        .map(|f| {
            let group: Vec<&DampingRow> = rows.iter().filter(|r| r.frequency_hz == f).collect();
            let offsets: Vec<f64> = group
                .iter()
                .filter_map(|r| Some((r.e_damped_pa? - r.e_undamped_pa?).abs()))
                .collect();
            let dev = |pick: fn(&DampingRow) -> f64| {
                let d: Vec<f64> = group.iter().map(|r| (pick(r) - f).abs()).collect();
                median(&d).unwrap_or(0.0)
            };
            DampingFrequencyStats {
                frequency_hz: f,
                pairs: group.len(),
                mean_abs_offset_pa: (!offsets.is_empty())
                    .then(|| offsets.iter().sum::<f64>() / offsets.len() as f64),
                median_deviation_undamped_hz: dev(|r| r.measured_frequency_undamped_hz),
                median_deviation_damped_hz: dev(|r| r.measured_frequency_damped_hz),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{AcquisitionMeta, Geometry};

    #[test]
    fn calibration_closed_form() {
        let base = MaterialModel::new(1.0, 1000.0, 0.5).unwrap();
        assert_eq!(
            calibrate_q(&[1.0, 2.0], &[3000.0, 12000.0], &base).unwrap(),
            1.0
        );
    }

    #[test]
    fn calibration_recovers_planted_q() {
        let base = MaterialModel::default();
        let v: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
        for q in [1.0, 0.84] {
            let e: Vec<f64> = v.iter().map(|v| q * 3000.0 * v * v).collect();
            let fitted = calibrate_q(&v, &e, &base).unwrap();
            assert!((fitted - q).abs() < 1e-9, "{fitted}");
            // scale consistency
            let e3: Vec<f64> = e.iter().map(|e| 3.0 * e).collect();
            assert!((calibrate_q(&v, &e3, &base).unwrap() - 3.0 * fitted).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_errors() {
        let base = MaterialModel::default();
        assert!(calibrate_q(&[0.0, 0.0], &[1.0, 2.0], &base).is_err());
        assert!(calibrate_q(&[1.0], &[1.0], &base).is_err());
        assert!(calibrate_q(&[1.0, 2.0], &[1.0], &base).is_err());
    }

    fn labelled(id: &str, f: f64, e: f64) -> WaveFieldVolume {
        let g = Geometry {
            width_px: 4,
            depth_px: 4,
            frames: 8,
            dx_m: 1e-5,
            dz_m: 1e-5,
            dt_s: 1e-4,
        };
        let meta = AcquisitionMeta {
            excitation_frequency_hz: Some(f),
            ground_truth_e_pa: Some(e),
            source_id: id.into(),
            ..Default::default()
        };
        WaveFieldVolume::zeros(g, meta).unwrap()
    }

    fn suite() -> Vec<WaveFieldVolume> {
        let mut v = Vec::new();
        for (i, e) in [17e3, 56e3, 97e3].into_iter().enumerate() {
            for f in [200.0, 600.0] {
                v.push(labelled(&format!("L{i}_P0_S00"), f, e));
            }
        }
        v
    }

    #[test]
    fn oracle_estimator_has_zero_error() {
        let report = evaluate_suite(&suite(), &OracleEstimator::default()).unwrap();
        assert_eq!(report.per_dataset.len(), 6);
        for s in &report.per_frequency {
            assert_eq!(s.mae.unwrap().mean, 0.0);
            assert_eq!(s.rmse.unwrap(), 0.0);
            assert_eq!(s.valid_fraction, 1.0);
        }
        assert_eq!(report.ensemble.as_ref().unwrap().count, 3);
        assert_eq!(report.ensemble.as_ref().unwrap().rmse, 0.0);
    }

    #[test]
    fn constant_offset_estimator() {
        let report = evaluate_suite(&suite(), &OracleEstimator { offset_pa: 5e3 }).unwrap();
        for s in &report.per_frequency {
            let m = s.mae.unwrap();
            assert!((m.mean - 5e3).abs() < 1e-9 && m.std.abs() < 1e-9);
            assert!((s.rmse.unwrap() - 5e3).abs() < 1e-9);
        }
        let ens = report.ensemble.unwrap();
        assert!((ens.mae.mean - 5e3).abs() < 1e-9);
    }

    #[test]
    fn missing_ground_truth_is_rejected() {
        let mut v = suite();
        v[2].meta.ground_truth_e_pa = None;
        assert!(matches!(
            evaluate_suite(&v, &OracleEstimator::default()),
            Err(Error::MissingGroundTruth(_))
        ));
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let rows = vec![
            ReportRow {
                source_id: "a".into(),
                frequency_hz: 200.0,
                e_true_pa: 10.0,
                e_est_pa: Some(12.0),
                valid: true,
                v_mps: 1.0,
                dominant_frequency_hz: 200.0,
            },
            ReportRow {
                source_id: "a".into(),
                frequency_hz: 400.0,
                e_true_pa: 10.0,
                e_est_pa: None,
                valid: false,
                v_mps: 11.0,
                dominant_frequency_hz: 400.0,
            },
            ReportRow {
                source_id: "b".into(),
                frequency_hz: 200.0,
                e_true_pa: 20.0,
                e_est_pa: Some(16.0),
                valid: true,
                v_mps: 1.0,
                dominant_frequency_hz: 200.0,
            },
            ReportRow {
                source_id: "b".into(),
                frequency_hz: 400.0,
                e_true_pa: 20.0,
                e_est_pa: Some(22.0),
                valid: true,
                v_mps: 1.0,
                dominant_frequency_hz: 400.0,
            },
        ];
        let report = EvaluationReport::from_rows(rows.clone()).unwrap();
        let f200 = report.frequency(200.0).unwrap();
        assert_eq!(
            f200.mae.unwrap(),
            mae(&[12.0, 16.0], &[10.0, 20.0]).unwrap()
        );
        let f400 = report.frequency(400.0).unwrap();
        assert_eq!(
            (f400.count, f400.valid_count, f400.valid_fraction),
            (2, 1, 0.5)
        );
        // ensemble: a -> 12 (only valid), b -> 19
        let ens = report.ensemble.as_ref().unwrap();
        assert_eq!(ens.mae, mae(&[12.0, 19.0], &[10.0, 20.0]).unwrap());
        let mut shuffled = rows;
        shuffled.reverse();
        assert_eq!(EvaluationReport::from_rows(shuffled).unwrap(), report);
    }

    #[test]
    fn median_convention() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
