//! Mode comparison: paired dt-native vs traditional runs.
//!
//! Each run index uses one seed for both modes, so the two runs see the
//! same arrivals and the saving is a paired difference — the seeds differ
//! across run indices. The headline saving follows the aggregate formula
//! `100·(mean_trad − mean_dt)/mean_trad` over mean processing times; the
//! confidence interval comes from the per-run paired savings, Student-t
//! with n−1 degrees of freedom.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{ExperimentConfig, GlobalConfig, Mode};
use crate::driver::run_experiment;
use crate::ExperimentError;

/// One row of the comparison CSV (`sensors,mode,run,mean_proc_ms,mean_lat_ms`).
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub sensors: usize,
    pub mode: Mode,
    pub run: usize,
    pub mean_proc_ms: f64,
    pub mean_lat_ms: f64,
}

/// Paired outcome at one sensor count.
#[derive(Debug, Clone)]
pub struct SensorComparison {
    pub sensors: usize,
    pub runs: usize,
    /// Per-run paired savings, percent.
    pub savings_pct: Vec<f64>,
    /// Mean of the per-run savings (center of the CI).
    pub mean_saving_pct: f64,
    /// Half width of the 95% CI around `mean_saving_pct`.
    pub ci95_pct: f64,
    /// The aggregate formula: 100·(mean_trad − mean_dt)/mean_trad.
    pub saving_of_means_pct: f64,
    pub mean_proc_dt_ms: f64,
    pub mean_proc_trad_ms: f64,
    pub mean_lat_dt_ms: f64,
    pub mean_lat_trad_ms: f64,
}

/// Everything `compare` produces.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub per_sensor: Vec<SensorComparison>,
}

pub const COMPARE_CSV_HEADER: &str = "sensors,mode,run,mean_proc_ms,mean_lat_ms";

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Two-sided 95% Student-t quantile (t_{0.975, df}); normal approximation
/// past df 30.
pub fn t975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        1..=30 => TABLE[df - 1],
        _ => 1.96,
    }
}

/// Runs both modes `runs` times at `base`'s sensor count, pairing seeds.
/// `base`'s mode is ignored; its fault drill is disabled (a drill would
/// unpair the arrival streams).
pub fn compare_at(
    base: &ExperimentConfig,
    runs: usize,
) -> Result<(SensorComparison, Vec<CompareRow>), ExperimentError> {
    if runs == 0 {
        return Err(ExperimentError::InvalidConfig("compare needs runs >= 1".into()));
    }
    let mut rows = Vec::with_capacity(runs * 2);
    let mut savings = Vec::with_capacity(runs);
    let mut proc = [Vec::with_capacity(runs), Vec::with_capacity(runs)];
    let mut lat = [Vec::with_capacity(runs), Vec::with_capacity(runs)];
    for run in 0..runs {
        let seed = base.seed.wrapping_add(run as u64);
        let mut pair = [f64::NAN; 2];
        for (slot, mode) in [Mode::DtNative, Mode::Traditional].into_iter().enumerate() {
            let mut cfg = base.clone();
            cfg.mode = mode;
            cfg.seed = seed;
            cfg.sim.seed = seed;
            cfg.fault_at_s = None;
            let out = run_experiment(&cfg)?;
            let mean_proc_ms = out.metrics.mean_processing_ms().ok_or_else(|| {
                ExperimentError::Protocol(format!("{} committed no events", cfg.run_id()))
            })?;
            let mean_lat_ms = out.metrics.mean_latency_ms().ok_or_else(|| {
                ExperimentError::Protocol(format!("{} received no events", cfg.run_id()))
            })?;
            rows.push(CompareRow { sensors: base.sensors, mode, run, mean_proc_ms, mean_lat_ms });
            pair[slot] = mean_proc_ms;
            proc[slot].push(mean_proc_ms);
            lat[slot].push(mean_lat_ms);
        }
        let [dt, trad] = pair;
        savings.push(100.0 * (trad - dt) / trad);
    }
    let mean_proc_dt_ms = mean(&proc[0]);
    let mean_proc_trad_ms = mean(&proc[1]);
    let mean_saving_pct = mean(&savings);
    let ci95_pct = if runs >= 2 {
        t975(runs - 1) * sample_std(&savings) / (runs as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok((
        SensorComparison {
            sensors: base.sensors,
            runs,
            savings_pct: savings,
            mean_saving_pct,
            ci95_pct,
            saving_of_means_pct: 100.0 * (mean_proc_trad_ms - mean_proc_dt_ms)
                / mean_proc_trad_ms,
            mean_proc_dt_ms,
            mean_proc_trad_ms,
            mean_lat_dt_ms: mean(&lat[0]),
            mean_lat_trad_ms: mean(&lat[1]),
        },
        rows,
    ))
}

/// Runs the full comparison across `sensor_counts`, `runs` paired runs each.
pub fn compare_modes(
    global: &GlobalConfig,
    sensor_counts: &[usize],
    runs: usize,
) -> Result<CompareReport, ExperimentError> {
    global.validate()?;
    let mut report = CompareReport { rows: Vec::new(), per_sensor: Vec::new() };
    for &sensors in sensor_counts {
        let base = ExperimentConfig::resolve(global, sensors, Mode::DtNative, global.sim.seed);
        let (sensor_cmp, rows) = compare_at(&base, runs)?;
        report.rows.extend(rows);
        report.per_sensor.push(sensor_cmp);
    }
    Ok(report)
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(COMPARE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.sensors, r.mode, r.run, r.mean_proc_ms, r.mean_lat_ms
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for s in &self.per_sensor {
            let _ = writeln!(
                out,
                "sensors={:>3}  processing dt={:>9.1} ms  trad={:>9.1} ms  \
                 saving {:.1}% (per-run mean {:.1}% ± {:.1} pp, 95% CI, n={})",
                s.sensors,
                s.mean_proc_dt_ms,
                s.mean_proc_trad_ms,
                s.saving_of_means_pct,
                s.mean_saving_pct,
                s.ci95_pct,
                s.runs,
            );
            let _ = writeln!(
                out,
                "             latency    dt={:>9.1} ms  trad={:>9.1} ms  ratio {:.3}",
                s.mean_lat_dt_ms,
                s.mean_lat_trad_ms,
                s.mean_lat_dt_ms / s.mean_lat_trad_ms,
            );
        }
        out
    }

    /// Writes the row CSV and a text summary next to it.
    pub fn write(&self, csv_path: &Path) -> Result<(), ExperimentError> {
        if let Some(parent) = csv_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ExperimentError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
        let io = |e| ExperimentError::Io { path: csv_path.display().to_string(), source: e };
        std::fs::write(csv_path, self.to_csv()).map_err(io)?;
        let txt = csv_path.with_extension("txt");
        std::fs::write(&txt, self.summary()).map_err(|e| ExperimentError::Io {
            path: txt.display().to_string(),
            source: e,
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantiles_match_the_table() {
        assert_eq!(t975(9), 2.262);
        assert_eq!(t975(1), 12.706);
        assert_eq!(t975(31), 1.96);
        assert!(t975(0).is_infinite());
    }

    #[test]
    fn stats_helpers() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((mean(&xs) - 2.5).abs() < 1e-12);
        assert!((sample_std(&xs) - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_has_the_contract_schema() {
        let report = CompareReport {
            rows: vec![CompareRow {
                sensors: 5,
                mode: Mode::DtNative,
                run: 0,
                mean_proc_ms: 5100.25,
                mean_lat_ms: 12.5,
            }],
            per_sensor: vec![],
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("sensors,mode,run,mean_proc_ms,mean_lat_ms"));
        assert_eq!(lines.next(), Some("5,dt-native,0,5100.25,12.5"));
    }
}
