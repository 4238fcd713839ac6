//! `turbda`: nature runs, spectra, twin experiments and compute budgets.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use turbda::budget::{estimate_training_flops, vit_param_count, BudgetSpec};
use turbda::config;
use turbda::forecast::Workers;
use turbda::osse::{
    merged_table, nature_run, run_experiment, run_roster, ExperimentConfig, ModelQuality, Setup, Variant,
};
use turbda::sqg::{read_snapshot, write_snapshot, GridSpec, PhysicalField, SqgModel, INERTIAL_SHELLS};

#[derive(Parser)]
#[command(name = "turbda", version, about = "SQG twin experiments with score-based and LETKF data assimilation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spin up a nature run and write truth snapshots.
    Simulate(Common),
    /// Kinetic-energy spectrum and inertial-range slope of a state.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Snapshot to analyse; without it the spun-up initial truth is used.
        #[arg(long)]
        input: Option<PathBuf>,
        /// First and last shell of the slope fit.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        shells: Option<Vec<usize>>,
    },
    /// Cycle one assimilation variant against the nature run.
    Assimilate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long, value_enum)]
        quality: Option<QualityArg>,
    },
    /// Run every variant under both model qualities and merge the RMSE table.
    Compare(Common),
    /// Parameter count and training-cost estimates for a vision transformer.
    Budget(BudgetArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cycles: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    FreeRun,
    Letkf,
    Ensf,
}

#[derive(Clone, Copy, ValueEnum)]
enum QualityArg {
    Perfect,
    Imperfect,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long)]
    layers: u64,
    #[arg(long)]
    dim: u64,
    #[arg(long, default_value_t = 4.0)]
    mlp_ratio: f64,
    /// Input extent per spatial dimension, e.g. `256,256`; enables the FLOP estimate.
    #[arg(long, value_delimiter = ',')]
    input: Vec<u64>,
    /// Patch extent per spatial dimension.
    #[arg(long, value_delimiter = ',')]
    patch: Vec<u64>,
    #[arg(long, default_value_t = 1.0)]
    epochs: f64,
    #[arg(long, default_value_t = 1.0)]
    images: f64,
}

impl Common {
    fn experiment(&self) -> turbda::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => config::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(cycles) = self.cycles {
            cfg.cycles = cycles;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn simulate(common: &Common) -> turbda::Result<()> {
    let cfg = common.experiment()?;
    let model = cfg.model()?;
    let duration = cfg.cycles as f64 * cfg.obs_interval;
    let truth = nature_run(&model, cfg.initial_amplitude, cfg.spinup_hours, duration, cfg.obs_interval, cfg.seed, 0)?;
    fs::create_dir_all(&common.out_dir)?;
    for (k, state) in truth.iter().enumerate() {
        let field = PhysicalField::from_vec(&cfg.grid, state.clone())?;
        let file = File::create(common.out_dir.join(format!("truth_{k:04}.sqg")))?;
        write_snapshot(BufWriter::new(file), &field, k as f64 * cfg.obs_interval)?;
    }
    println!("wrote {} snapshots to {}", truth.len(), common.out_dir.display());
    Ok(())
}

fn spectrum(common: &Common, input: Option<&Path>, shells: Option<&[usize]>) -> turbda::Result<()> {
    let cfg = common.experiment()?;
    let (grid, state) = match input {
        Some(path) => {
            let snap = read_snapshot(BufReader::new(File::open(path)?))?;
            let grid = GridSpec::new(snap.field.nx, snap.field.ny, cfg.grid.lx, cfg.grid.ly, cfg.grid.h)?;
            (grid, snap.field)
        }
        None => {
            let model = cfg.model()?;
            let truth =
                nature_run(&model, cfg.initial_amplitude, cfg.spinup_hours, 0.0, cfg.obs_interval, cfg.seed, 0)?;
            (cfg.grid, PhysicalField::from_vec(&cfg.grid, truth[0].clone())?)
        }
    };
    let model = SqgModel::new(grid, cfg.sqg)?;
    let spec = model.ke_spectrum(&model.forward_transform(&state)?);
    let (lo, hi) = match shells {
        Some([lo, hi]) => (*lo, *hi),
        _ => INERTIAL_SHELLS,
    };
    let slope = spec.slope(lo, hi)?;
    println!("shell,kappa,energy");
    for (n, (k, e)) in spec.kappa.iter().zip(&spec.energy).enumerate() {
        println!("{n},{k},{e}");
    }
    println!("slope shells {lo}..={hi}: {slope:.4}");
    Ok(())
}

fn assimilate(common: &Common, variant: Option<VariantArg>, quality: Option<QualityArg>) -> turbda::Result<()> {
    let mut cfg = common.experiment()?;
    if let Some(v) = variant {
        cfg.variant = match v {
            VariantArg::FreeRun => Variant::FreeRun,
            VariantArg::Letkf => Variant::Letkf,
            VariantArg::Ensf => Variant::Ensf,
        };
    }
    if let Some(q) = quality {
        cfg.model_quality = match q {
            QualityArg::Perfect => ModelQuality::Perfect,
            QualityArg::Imperfect => ModelQuality::Imperfect,
        };
    }
    cfg.validate()?;
    let workers = Workers::from_env()?;
    let setup = Setup::build(&cfg)?;
    let series = run_experiment(&cfg, &setup, &workers, Some(&common.out_dir))?;
    let n = series.records.len();
    println!(
        "{}: mean analysis RMSE {:.4} (cycles 1..={n}), last-50 {:.4}",
        series.label,
        series.mean_analysis_rmse(1, n),
        series.mean_analysis_rmse(n.saturating_sub(49), n)
    );
    Ok(())
}

fn compare(common: &Common) -> turbda::Result<()> {
    let cfg = common.experiment()?;
    let workers = Workers::from_env()?;
    let series = run_roster(&cfg, &workers, Some(&common.out_dir))?;
    let table = merged_table(&series);
    let path = common.out_dir.join("rmse_table.csv");
    fs::write(&path, &table)?;
    for s in &series {
        let n = s.records.len();
        println!("{}: last-50 mean analysis RMSE {:.4}", s.label, s.mean_analysis_rmse(n.saturating_sub(49), n));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn budget(args: &BudgetArgs) -> turbda::Result<()> {
    let params = vit_param_count(args.layers, args.dim, args.mlp_ratio)?;
    println!("params {params:.3e}");
    if !args.input.is_empty() || !args.patch.is_empty() {
        let spec = BudgetSpec {
            input_dims: args.input.clone(),
            patch_dims: args.patch.clone(),
            epochs: args.epochs,
            params,
            dataset_images: args.images,
        };
        println!("tokens_per_image {}", spec.tokens_per_image()?);
        println!("training_flops {:.3e}", estimate_training_flops(&spec)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(common) => simulate(common),
        Command::Spectrum { common, input, shells } => spectrum(common, input.as_deref(), shells.as_deref()),
        Command::Assimilate { common, variant, quality } => assimilate(common, *variant, *quality),
        Command::Compare(common) => compare(common),
        Command::Budget(args) => budget(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
