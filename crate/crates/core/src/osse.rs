//! Twin experiments: nature run, synthetic observations, cycling and metrics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::ensf::{self, EnsfConfig};
use crate::error::{Error, Result};
use crate::forecast::{
    advance, climatological_amplitude, inject_model_error, propagate_ensemble, steps_for, Ensemble, ModelErrorConfig,
    Workers,
};
use crate::letkf::{letkf_analyze, LetkfConfig};
use crate::observation::{synthesize_observations, ObsOperator};
use crate::rng::{member_seed, stream, Purpose};
use crate::sqg::{write_snapshot, GridSpec, PhysicalField, SqgModel, SqgParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FreeRun,
    Letkf,
    Ensf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelQuality {
    Perfect,
    Imperfect,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::FreeRun, Variant::Letkf, Variant::Ensf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::FreeRun => "free_run",
            Variant::Letkf => "letkf",
            Variant::Ensf => "ensf",
        }
    }
}

impl ModelQuality {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelQuality::Perfect => "perfect",
            ModelQuality::Imperfect => "imperfect",
        }
    }
}

/// Everything one experiment needs. Serialized as the experiment config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub model_quality: ModelQuality,
    pub cycles: usize,
    /// Model hours between observations.
    pub obs_interval: f64,
    pub members: usize,
    pub seed: u64,
    pub spinup_hours: f64,
    /// Length of the independent free run the initial ensemble is drawn from.
    pub climatology_snapshots: usize,
    /// Standard deviation of the white-noise state the spinups start from.
    pub initial_amplitude: f64,
    /// Observation error variance (R = r I).
    pub obs_error_var: f64,
    /// Cycles at which truth, ensemble mean and error fields are dumped.
    pub snapshot_cycles: Vec<usize>,
    /// When `ensf.state_scale` is unset, run the score sampler in units of
    /// the climatological amplitude instead of model units.
    pub standardize_ensf: bool,
    pub grid: GridSpec,
    pub sqg: SqgParams,
    pub ensf: EnsfConfig,
    pub letkf: LetkfConfig,
    pub model_error: ModelErrorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ensf,
            model_quality: ModelQuality::Perfect,
            cycles: 300,
            obs_interval: 12.0,
            members: 20,
            seed: 0,
            spinup_hours: 720.0,
            climatology_snapshots: 100,
            initial_amplitude: 5.0,
            obs_error_var: 1.0,
            snapshot_cycles: Vec::new(),
            standardize_ensf: true,
            grid: GridSpec::default(),
            sqg: SqgParams::default(),
            // full relaxation lets dissipated sampler noise collapse the perfect-model ensemble
            ensf: EnsfConfig { relax_factor: 0.5, ..EnsfConfig::default() },
            letkf: LetkfConfig::default(),
            model_error: ModelErrorConfig { enabled: true, ..ModelErrorConfig::default() },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.sqg.validate()?;
        self.model_error.validate()?;
        self.letkf.validate()?;
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be >= 1".into()));
        }
        if !(self.obs_interval > 0.0) {
            return Err(Error::Config("obs_interval must be positive".into()));
        }
        steps_for(self.obs_interval, self.sqg.dt)?;
        steps_for(self.spinup_hours, self.sqg.dt)?;
        let min_members = if self.variant == Variant::FreeRun { 1 } else { 2 };
        if self.members < min_members {
            return Err(Error::Config(format!("{} needs at least {min_members} members", self.variant.as_str())));
        }
        if self.variant == Variant::Ensf {
            self.ensf.validate(self.members)?;
        }
        if self.climatology_snapshots < self.members {
            return Err(Error::InsufficientSnapshots { need: self.members, have: self.climatology_snapshots });
        }
        if !(self.obs_error_var >= 0.0) || !(self.initial_amplitude > 0.0) {
            return Err(Error::Config("obs_error_var must be >= 0 and initial_amplitude > 0".into()));
        }
        Ok(())
    }

    /// Output prefix, e.g. `ensf_imperfect`.
    pub fn label(&self) -> String {
        format!("{}_{}", self.variant.as_str(), self.model_quality.as_str())
    }

    pub fn model(&self) -> Result<SqgModel> {
        SqgModel::new(self.grid, self.sqg)
    }
}

/// Spin up from seeded white noise, then record every `interval` hours for `duration` hours.
pub fn nature_run(
    model: &SqgModel,
    amplitude: f64,
    spinup: f64,
    duration: f64,
    interval: f64,
    seed: u64,
    index: u64,
) -> Result<Vec<Vec<f64>>> {
    let spec = model.random_initial_condition(amplitude, seed, index)?;
    let x0 = model.inverse_transform(&spec)?.data;
    let mut state = advance(model, &x0, -spinup, spinup)?;
    let n = steps_for(duration, interval)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(state.clone());
    for k in 0..n {
        state = advance(model, &state, k as f64 * interval, interval)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// `m` distinct snapshots chosen without replacement.
pub fn initial_ensemble(climatology: &[Vec<f64>], m: usize, seed: u64) -> Result<Ensemble> {
    if climatology.len() < m || m == 0 {
        return Err(Error::InsufficientSnapshots { need: m.max(1), have: climatology.len() });
    }
    let mut rng = stream(seed, Purpose::InitialEnsemble, 0, 0);
    let picks = sample(&mut rng, climatology.len(), m);
    let members = picks.iter().map(|i| climatology[i].clone()).collect();
    Ensemble::new(members, (0..m).map(|k| member_seed(seed, k)).collect(), 0.0)
}

pub fn rmse(estimate: &[f64], truth: &[f64]) -> f64 {
    let sum: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    (sum / truth.len() as f64).sqrt()
}

/// Square root of the mean per-variable variance (M − 1 normalization).
pub fn spread(ens: &Ensemble) -> f64 {
    if ens.size() < 2 {
        return 0.0;
    }
    let sd = ens.std_dev();
    (sd.iter().map(|s| s * s).sum::<f64>() / sd.len() as f64).sqrt()
}

/// Truth trajectory and climatology shared by every variant of one configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    /// Truth at cycle k (k = 0 is the initial time).
    pub truth: Vec<Vec<f64>>,
    pub climatology: Vec<Vec<f64>>,
    pub climatological_amplitude: f64,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model()?;
        let duration = cfg.cycles as f64 * cfg.obs_interval;
        let truth =
            nature_run(&model, cfg.initial_amplitude, cfg.spinup_hours, duration, cfg.obs_interval, cfg.seed, 0)?;
        let clim_len = (cfg.climatology_snapshots - 1) as f64 * cfg.obs_interval;
        let climatology =
            nature_run(&model, cfg.initial_amplitude, cfg.spinup_hours, clim_len, cfg.obs_interval, cfg.seed, 1)?;
        let climatological_amplitude = climatological_amplitude(&climatology)?;
        Ok(Self { truth, climatology, climatological_amplitude })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub time: f64,
    pub forecast_rmse: f64,
    pub analysis_rmse: f64,
    pub forecast_spread: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub label: String,
    pub config_hash: String,
    pub climatological_amplitude: f64,
    pub records: Vec<CycleRecord>,
}

impl MetricsSeries {
    /// Mean analysis RMSE over cycles `first..=last` (1-based, clipped to the run).
    pub fn mean_analysis_rmse(&self, first: usize, last: usize) -> f64 {
        let sel: Vec<f64> =
            self.records.iter().filter(|r| r.cycle >= first && r.cycle <= last).map(|r| r.analysis_rmse).collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }

    pub fn mean_forecast_rmse(&self) -> f64 {
        self.records.iter().map(|r| r.forecast_rmse).sum::<f64>() / self.records.len().max(1) as f64
    }

    /// Least-squares slope (per cycle) of analysis RMSE over the last `n` cycles.
    pub fn analysis_trend(&self, n: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        let k = tail.len() as f64;
        let mx = tail.iter().map(|r| r.cycle as f64).sum::<f64>() / k;
        let my = tail.iter().map(|r| r.analysis_rmse).sum::<f64>() / k;
        let sxy: f64 = tail.iter().map(|r| (r.cycle as f64 - mx) * (r.analysis_rmse - my)).sum();
        let sxx: f64 = tail.iter().map(|r| (r.cycle as f64 - mx).powi(2)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,forecast_rmse,analysis_rmse,spread\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.time, r.forecast_rmse, r.analysis_rmse, r.spread));
        }
        s
    }
}

/// Cycle one variant against a prepared [`Setup`].
///
/// With `out_dir`, writes `<label>.jsonl` (flushed per cycle), `<label>.csv`,
/// `<label>_manifest.json` and the requested snapshot dumps.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    setup: &Setup,
    workers: &Workers,
    out_dir: Option<&Path>,
) -> Result<MetricsSeries> {
    cfg.validate()?;
    if setup.truth.len() < cfg.cycles + 1 {
        return Err(Error::InsufficientSnapshots { need: cfg.cycles + 1, have: setup.truth.len() });
    }
    let model = cfg.model()?;
    let label = cfg.label();
    let config_hash = crate::config::content_hash(cfg)?;
    let base_amplitude = cfg.model_error.base_amplitude.unwrap_or(setup.climatological_amplitude);
    let mut ensf_cfg = cfg.ensf.clone();
    if cfg.standardize_ensf && ensf_cfg.state_scale.is_none() {
        ensf_cfg.state_scale = Some(setup.climatological_amplitude);
    }
    let error_cfg = ModelErrorConfig {
        enabled: cfg.model_error.enabled && cfg.model_quality == ModelQuality::Imperfect,
        ..cfg.model_error.clone()
    };

    let mut jsonl = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let manifest = serde_json::json!({
                "label": label,
                "config_hash": config_hash,
                "seed": cfg.seed,
                "members": cfg.members,
                "climatological_amplitude": setup.climatological_amplitude,
                "model_error_base_amplitude": base_amplitude,
                "ensf_state_scale": ensf_cfg.state_scale,
            });
            fs::write(dir.join(format!("{label}_manifest.json")), serde_json::to_string_pretty(&manifest)? + "\n")?;
            Some(BufWriter::new(File::create(dir.join(format!("{label}.jsonl")))?))
        }
        None => None,
    };

    let mut ens = initial_ensemble(&setup.climatology, cfg.members, cfg.seed)?;
    let mut records = Vec::with_capacity(cfg.cycles);
    for cycle in 1..=cfg.cycles {
        let step = |ens: &Ensemble| -> Result<(Ensemble, CycleRecord)> {
            let truth = &setup.truth[cycle];
            let time = cycle as f64 * cfg.obs_interval;
            let fc = propagate_ensemble(&model, ens, cfg.obs_interval, workers)?;
            let fc = inject_model_error(&fc, &error_cfg, base_amplitude, cycle as u64)?;
            let forecast_rmse = rmse(&fc.mean(), truth);
            let forecast_spread = spread(&fc);
            let an = match cfg.variant {
                Variant::FreeRun => fc,
                Variant::Letkf | Variant::Ensf => {
                    let obs = synthesize_observations(
                        truth,
                        &cfg.grid,
                        ObsOperator::Identity,
                        cfg.obs_error_var,
                        cfg.seed,
                        cycle as u64,
                        time,
                    )?;
                    if cfg.variant == Variant::Letkf {
                        letkf_analyze(&fc, &obs, &cfg.letkf, &cfg.grid, workers)?
                    } else {
                        ensf::analyze(&fc, &obs, &ensf_cfg, cfg.seed, cycle as u64, workers)?
                    }
                }
            };
            if !an.is_finite() {
                return Err(Error::Blowup { time });
            }
            let rec = CycleRecord {
                cycle,
                time,
                forecast_rmse,
                analysis_rmse: rmse(&an.mean(), truth),
                forecast_spread,
                spread: spread(&an),
            };
            Ok((an, rec))
        };
        let (next, rec) = step(&ens).map_err(|e| Error::Cycle { cycle, source: Box::new(e) })?;
        if let Some(w) = jsonl.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if let Some(dir) = out_dir {
            if cfg.snapshot_cycles.contains(&cycle) {
                dump_fields(dir, &label, cycle, &cfg.grid, &setup.truth[cycle], &next.mean(), rec.time)?;
            }
        }
        records.push(rec);
        ens = next;
    }

    let series = MetricsSeries {
        label: label.clone(),
        config_hash,
        climatological_amplitude: setup.climatological_amplitude,
        records,
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join(format!("{label}.csv")), series.to_csv())?;
    }
    Ok(series)
}

fn dump_fields(
    dir: &Path,
    label: &str,
    cycle: usize,
    grid: &GridSpec,
    truth: &[f64],
    mean: &[f64],
    time: f64,
) -> Result<()> {
    let error: Vec<f64> = mean.iter().zip(truth).map(|(a, b)| a - b).collect();
    for (name, data) in [("truth", truth.to_vec()), ("mean", mean.to_vec()), ("error", error)] {
        let field = PhysicalField::from_vec(grid, data)?;
        let file = File::create(dir.join(format!("{label}_cycle{cycle:04}_{name}.sqg")))?;
        write_snapshot(BufWriter::new(file), &field, time)?;
    }
    Ok(())
}

/// Runs every variant under both model qualities on one shared setup.
pub fn run_roster(base: &ExperimentConfig, workers: &Workers, out_dir: Option<&Path>) -> Result<Vec<MetricsSeries>> {
    let setup = Setup::build(base)?;
    let mut all = Vec::new();
    for quality in [ModelQuality::Perfect, ModelQuality::Imperfect] {
        for variant in Variant::ALL {
            let cfg = ExperimentConfig { variant, model_quality: quality, ..base.clone() };
            all.push(run_experiment(&cfg, &setup, workers, out_dir)?);
        }
    }
    Ok(all)
}

/// `cycle,time,<label>...` table of analysis RMSE.
pub fn merged_table(series: &[MetricsSeries]) -> String {
    let mut s = String::from("cycle,time");
    for m in series {
        s.push(',');
        s.push_str(&m.label);
    }
    s.push('\n');
    let n = series.iter().map(|m| m.records.len()).min().unwrap_or(0);
    for k in 0..n {
        let r = &series[0].records[k];
        s.push_str(&format!("{},{}", r.cycle, r.time));
        for m in series {
            s.push_str(&format!(",{}", m.records[k].analysis_rmse));
        }
        s.push('\n');
    }
    s
}
