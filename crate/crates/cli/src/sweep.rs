//! Learning-rate sweep over the twin-backed control environment.
//!
//! Trains one DDPG learner per (combo, seed) pair and reports per-episode
//! loss curves plus final-window means, the basis for ranking the
//! combinations by how well their critics converge.

use std::fmt::Write as _;
use std::path::Path;

use iovtwin_core::learner::{train, DdpgConfig, TrainingLog, TwinEnv, LR_RANGE};

use crate::config::GlobalConfig;
use crate::ExperimentError;

/// Rejects learning rates outside the accepted table range.
pub fn check_lr(name: &str, v: f64) -> Result<(), ExperimentError> {
    let (lo, hi) = LR_RANGE;
    if !(v.is_finite() && v >= lo && v <= hi) {
        return Err(ExperimentError::InvalidConfig(format!(
            "{name} = {v} outside the accepted range [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// One trained curve.
#[derive(Debug, Clone)]
pub struct SweepCurve {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub seed: u64,
    pub log: TrainingLog,
    /// Mean critic loss over the final window of episodes.
    pub final_mean_loss: f64,
}

/// All curves of one sweep, plus the per-seed ordering verdicts.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub curves: Vec<SweepCurve>,
    pub combos: Vec<(f64, f64)>,
    pub seeds: usize,
    pub episodes: usize,
    pub final_window: usize,
}

pub const SWEEP_CSV_HEADER: &str =
    "lr_actor,lr_critic,seed,episode,mean_critic_loss,mean_reward,epsilon_sigma";

/// Trains every (combo, seed) pair on the twin-backed environment.
pub fn sweep_learning_rates(global: &GlobalConfig) -> Result<SweepReport, ExperimentError> {
    global.validate()?;
    let knobs = &global.sweep;
    for &(a, c) in &knobs.combos {
        check_lr("lr_actor", a)?;
        check_lr("lr_critic", c)?;
    }
    let mut curves = Vec::with_capacity(knobs.combos.len() * knobs.seeds);
    for &(lr_actor, lr_critic) in &knobs.combos {
        for seed_idx in 0..knobs.seeds {
            let seed = global.sim.seed.wrapping_add(seed_idx as u64);
            let sim = iovtwin_core::sim::SimConfig { seed, ..global.sim.clone() };
            let mut env = TwinEnv::new(sim, global.pipeline.clone())
                .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
            let cfg = DdpgConfig {
                lr_actor,
                lr_critic,
                episodes: knobs.episodes,
                steps_per_episode: knobs.steps_per_episode,
                batch: knobs.batch,
                buffer_capacity: global.learner.buffer_capacity.max(knobs.batch),
                seed,
                ..global.learner.clone()
            };
            cfg.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
            let log = train(&mut env, &cfg)
                .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
            let final_mean_loss = log.final_mean_loss(knobs.final_window);
            curves.push(SweepCurve { lr_actor, lr_critic, seed, log, final_mean_loss });
        }
    }
    Ok(SweepReport {
        curves,
        combos: knobs.combos.clone(),
        seeds: knobs.seeds,
        episodes: knobs.episodes,
        final_window: knobs.final_window,
    })
}

impl SweepReport {
    fn curve(&self, combo: (f64, f64), seed_idx: usize) -> Option<&SweepCurve> {
        self.curves
            .iter()
            .filter(|c| c.lr_actor == combo.0 && c.lr_critic == combo.1)
            .nth(seed_idx)
    }

    /// For each seed: does `left` end with a strictly lower final-window
    /// mean loss than `right`?
    pub fn ordering_verdicts(&self, left: (f64, f64), right: (f64, f64)) -> Vec<bool> {
        (0..self.seeds)
            .filter_map(|i| {
                let l = self.curve(left, i)?;
                let r = self.curve(right, i)?;
                Some(l.final_mean_loss < r.final_mean_loss)
            })
            .collect()
    }

    /// Per-episode CSV of every curve, combo labels in the leading columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for c in &self.curves {
            for row in &c.log.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.lr_actor,
                    c.lr_critic,
                    c.seed,
                    row.episode,
                    row.mean_critic_loss,
                    row.mean_reward,
                    row.epsilon_sigma,
                );
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for &(a, c) in &self.combos {
            let finals: Vec<f64> = self
                .curves
                .iter()
                .filter(|x| x.lr_actor == a && x.lr_critic == c)
                .map(|x| x.final_mean_loss)
                .collect();
            let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
            let _ = writeln!(
                out,
                "combo ({a}, {c}): final-{}-episode mean critic loss {:.6} \
                 (per-seed: {})",
                self.final_window,
                mean,
                finals.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "),
            );
        }
        if self.combos.len() == 3 {
            let fast = self.ordering_verdicts(self.combos[2], self.combos[1]);
            let slow = self.ordering_verdicts(self.combos[0], self.combos[2]);
            let _ = writeln!(
                out,
                "ordering {:?} < {:?}: {}/{} seeds; {:?} > {:?}: {}/{} seeds",
                self.combos[2],
                self.combos[1],
                fast.iter().filter(|&&b| b).count(),
                fast.len(),
                self.combos[0],
                self.combos[2],
                slow.iter().filter(|&&b| !b).count(),
                slow.len(),
            );
        }
        out
    }

    pub fn write(&self, csv_path: &Path) -> Result<(), ExperimentError> {
        if let Some(parent) = csv_path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ExperimentError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
        std::fs::write(csv_path, self.to_csv()).map_err(|e| ExperimentError::Io {
            path: csv_path.display().to_string(),
            source: e,
        })?;
        let txt = csv_path.with_extension("txt");
        std::fs::write(&txt, self.summary()).map_err(|e| ExperimentError::Io {
            path: txt.display().to_string(),
            source: e,
        })?;
        Ok(())
    }
}
