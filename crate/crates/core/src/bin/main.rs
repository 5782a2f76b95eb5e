use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use bnn_hmc::harness::{
    self, dim_sweep, efficiency_sweep, error_order_experiment, generate_synthetic, proxy_scaling_experiment,
    run_grid, tuning_curves, write_dataset_csv, write_rows_csv, ExperimentKind, ExperimentManifest, GridOutput,
};

#[derive(Parser)]
#[command(name = "bnn-hmc", version, about = "HMC experiments on Bayesian neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON manifest; kind defaults apply when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the manifest's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic regression dataset as CSV.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    RunGrid(Common),
    EfficiencySweep(Common),
    DimSweep(Common),
    ErrorOrder(Common),
    CrossingStats(Common),
    ProxyScaling(Common),
    TuningCurves(Common),
}

fn load_manifest(common: &Common, kind: ExperimentKind) -> Result<ExperimentManifest> {
    let mut m = match &common.manifest {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let m = ExperimentManifest::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            if m.kind != kind {
                anyhow::bail!("manifest kind is {}, subcommand expects {}", m.kind.name(), kind.name());
            }
            m
        }
        None => ExperimentManifest::new(kind),
    };
    if let Some(seed) = common.seed {
        m.seed = seed;
    }
    Ok(m)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn summary_name(csv_name: &str) -> String {
    let stem = csv_name.strip_suffix(".csv").unwrap_or(csv_name);
    format!("{stem}.summary.json")
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    Ok(())
}

fn finish_grid(common: &Common, m: &ExperimentManifest, out: GridOutput) -> Result<bool> {
    let name = m.output();
    out.write_csv(create(&common.out_dir, &name)?)?;
    let mut w = create(&common.out_dir, &summary_name(&name))?;
    std::io::Write::write_all(&mut w, out.summary_json(m)?.as_bytes())?;
    let failed = out.n_failed();
    eprintln!("wrote {} rows to {}", out.rows.len(), common.out_dir.join(&name).display());
    if failed > 0 {
        eprintln!("{failed} cell(s) failed");
    }
    Ok(failed == 0)
}

fn run(cli: Cli) -> Result<bool> {
    let common = match &cli.command {
        Command::GenerateData { common, .. } => common,
        Command::RunGrid(c)
        | Command::EfficiencySweep(c)
        | Command::DimSweep(c)
        | Command::ErrorOrder(c)
        | Command::CrossingStats(c)
        | Command::ProxyScaling(c)
        | Command::TuningCurves(c) => c,
    }
    .clone();
    if let Some(n) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    let dir = &common.out_dir;
    match cli.command {
        Command::GenerateData { n, .. } => {
            let seed = common.seed.unwrap_or(0);
            let data = generate_synthetic(n, seed)?;
            write_dataset_csv(&data, create(dir, "synthetic.csv")?)?;
        }
        Command::RunGrid(_) => {
            let m = load_manifest(&common, ExperimentKind::Grid)?;
            return finish_grid(&common, &m, run_grid(&m)?);
        }
        Command::EfficiencySweep(_) => {
            let m = load_manifest(&common, ExperimentKind::EfficiencySweep)?;
            return finish_grid(&common, &m, efficiency_sweep(&m)?);
        }
        Command::DimSweep(_) => {
            let m = load_manifest(&common, ExperimentKind::DimSweep)?;
            return finish_grid(&common, &m, dim_sweep(&m)?);
        }
        Command::ErrorOrder(_) => {
            let m = load_manifest(&common, ExperimentKind::ErrorOrder)?;
            let out = error_order_experiment(&m)?;
            let name = m.output();
            write_rows_csv(&out.points, create(dir, &name)?)?;
            let fits = format!("{}.fits.csv", name.strip_suffix(".csv").unwrap_or(&name));
            write_rows_csv(&out.fits, create(dir, &fits)?)?;
            for f in &out.fits {
                eprintln!("{} [{}] {}: slope {:.3}", f.activation, f.hidden, f.measure, f.slope);
            }
        }
        Command::CrossingStats(_) => {
            let m = load_manifest(&common, ExperimentKind::CrossingStats)?;
            let table = harness::crossing_stats_experiment(&m)?;
            let name = m.output();
            table.write_csv(create(dir, &name)?)?;
            write_json(dir, &summary_name(&name), &table)?;
        }
        Command::ProxyScaling(_) => {
            let m = load_manifest(&common, ExperimentKind::ProxyScaling)?;
            let out = proxy_scaling_experiment(&m)?;
            let name = m.output();
            bnn_hmc::proxy::write_scaling_csv(&out.rows, create(dir, &name)?)?;
            write_json(dir, &summary_name(&name), &out)?;
        }
        Command::TuningCurves(_) => {
            let m = load_manifest(&common, ExperimentKind::TuningCurves)?;
            let curves = tuning_curves(&m)?;
            let name = m.output();
            let mut w = csv::Writer::from_writer(create(dir, &name)?);
            w.write_record(["order", "sigma", "l", "a", "efficiency"])?;
            for c in &curves {
                for k in 0..c.l.len() {
                    w.write_record([
                        c.order.to_string(),
                        c.sigma.to_string(),
                        c.l[k].to_string(),
                        c.acceptance[k].to_string(),
                        c.efficiency[k].to_string(),
                    ])?;
                }
            }
            w.flush()?;
            let optima: Vec<serde_json::Value> = curves
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "order": c.order, "sigma": c.sigma,
                        "l_opt": c.l_opt, "a_opt": c.a_opt, "efficiency_opt": c.efficiency_opt,
                    })
                })
                .collect();
            write_json(dir, &summary_name(&name), &optima)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
