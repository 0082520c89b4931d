//! Command-line surface: dataset generation, training, δ sweeps, estimator
//! convergence and reporting.

pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::datagen::{gen_by_schedule, gen_continual, gen_positional, gen_static, Schedule, SynthDataset};
use crate::harness::{
    delta_sweep, estimator_convergence, load_dataset, multi_seed, Checkpoint, ExperimentConfig,
    HarnessError, MultiSeedResult, RunResult, SweepRow,
};
use svg::{Chart, Series};

pub const TOOL_VERSION: &str = concat!("rmdn ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Format(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io { .. } | CliError::Format(_) => EXIT_IO,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_io() {
            CliError::Format(e.to_string())
        } else if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            match e {
                HarnessError::Config(_) | HarnessError::Parse { .. } => CliError::Usage(e.to_string()),
                other => CliError::Format(other.to_string()),
            }
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "rmdn", version, about = "Recursive metadata normalization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset container.
    Gen(GenArgs),
    /// Train every seed of a config and write result tables and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the confounder scaled by each δ.
    Sweep(SweepArgs),
    /// Stream samples through the recursive estimator and track its gap to least squares.
    Converge(ConvergeArgs),
    /// Summarize the metrics table of a training output directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// static, conf_shifts, main_shifts, both_shift or positional.
    #[arg(long)]
    pub schedule: String,
    /// Images per stage.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stage count; defaults to the schedule's own.
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// `container`, or `csv` to also write a per-image CSV next to it.
    #[arg(long, default_value = "container")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub deltas: Vec<f64>,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    /// Design width, including the label and intercept columns.
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    pub dir: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Converge(a) => cmd_converge(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Shortest round-trip decimal; blank for missing values.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(format!("cannot write {}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(format!("cannot create {}", dir.display())))
}

pub fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    let schedule = Schedule::parse(&a.schedule).map_err(|e| CliError::Usage(e.to_string()))?;
    let with_csv = match a.format.as_str() {
        "container" => false,
        "csv" => true,
        f => return Err(CliError::Usage(format!("unknown format {f:?}; expected container or csv"))),
    };
    let usage = |e: crate::datagen::DatagenError| CliError::Usage(e.to_string());
    let ds = match (schedule, a.stages) {
        (_, None) => gen_by_schedule(schedule, a.n, a.seed).map_err(usage)?,
        (Schedule::Static, Some(1)) => gen_static(a.n, a.seed).map_err(usage)?,
        (Schedule::Static, Some(s)) => {
            return Err(CliError::Usage(format!("static schedule has one stage, got {s}")))
        }
        (Schedule::Positional, Some(s)) => gen_positional(s, a.n, a.seed).map_err(usage)?,
        (s, Some(k)) => gen_continual(s, k, a.n, a.seed).map_err(usage)?,
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    ds.save(&a.out)
        .map_err(|e| CliError::Io {
            context: format!("cannot write {}", a.out.display()),
            source: io::Error::other(e.to_string()),
        })?;
    if with_csv {
        write_file(&a.out.with_extension("csv"), &ds.to_csv())?;
    }
    print!("{}", stage_summary(&ds));
    Ok(())
}

/// One line per stage: ranges, confounder position and theoretical maximum.
pub fn stage_summary(ds: &SynthDataset) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} schedule={} seed={} stages={} images={}",
        TOOL_VERSION,
        ds.schedule.name(),
        ds.seed,
        ds.num_stages(),
        ds.len()
    );
    for st in &ds.stages {
        let a = st.theoretical_max().map_or_else(|e| format!("n/a ({e})"), |v| v.to_string());
        let _ = writeln!(
            s,
            "stage {}: n={} sigma_a=[{},{}]/[{},{}] sigma_b=[{},{}]/[{},{}] conf_center=({},{}) max_acc={}",
            st.stage_id,
            st.n_images,
            st.sigma_a[0].low,
            st.sigma_a[0].high,
            st.sigma_a[1].low,
            st.sigma_a[1].high,
            st.sigma_b[0].low,
            st.sigma_b[0].high,
            st.sigma_b[1].low,
            st.sigma_b[1].high,
            st.conf_center.0,
            st.conf_center.1,
            a
        );
    }
    s
}

pub fn checkpoint_name(seed: u64) -> String {
    format!("checkpoint_seed{seed}.rmdn")
}

pub fn r_matrix_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("seed,stage_trained,stage_eval,accuracy\n");
    for run in runs {
        let (rows, cols) = run.r.shape();
        for i in 0..rows {
            for j in 0..cols {
                let _ = writeln!(s, "{},{i},{j},{}", run.seed, run.r[(i, j)]);
            }
        }
    }
    s
}

pub fn metrics_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("seed,accd,bwtd,fwtd,acc,bwt,fwt\n");
    for run in runs {
        let d = run.distance;
        let g = run.gem;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            run.seed,
            fmt_opt(d.map(|d| d.accd)),
            fmt_opt(d.map(|d| d.bwtd)),
            fmt_opt(d.map(|d| d.fwtd)),
            fmt_opt(g.map(|g| g.acc)),
            fmt_opt(g.map(|g| g.bwt)),
            fmt_opt(g.map(|g| g.fwt)),
        );
    }
    s
}

pub fn dcor_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("seed,stage_trained,stage_eval,group,dcor2\n");
    for run in runs {
        for d in &run.dcor {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                run.seed,
                d.stage_trained,
                d.stage_eval,
                d.group,
                fmt_opt(d.dcor2)
            );
        }
    }
    s
}

pub fn rates_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("seed,stage_trained,stage_eval,accuracy,balanced_accuracy,tpr,tnr\n");
    for run in runs {
        let n = run.stages();
        for i in 0..n {
            for j in 0..n {
                let r = run.rates_at(i, j);
                let _ = writeln!(
                    s,
                    "{},{i},{j},{},{},{},{}",
                    run.seed,
                    r.accuracy,
                    fmt_opt(r.balanced_accuracy),
                    fmt_opt(r.tpr),
                    fmt_opt(r.tnr)
                );
            }
        }
    }
    s
}

pub fn summary_csv(res: &MultiSeedResult) -> String {
    let mut s = String::from("metric,mean,std\n");
    for m in &res.summary {
        let _ = writeln!(s, "{},{},{}", m.name, m.mean, m.std);
    }
    s
}

pub fn stamp(cfg: &ExperimentConfig) -> String {
    format!(
        "tool = {TOOL_VERSION}\nconfig_hash = {}\n{}",
        cfg.hash(),
        cfg.to_text()
    )
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config)
        .map_err(io_err(format!("cannot read {}", a.config.display())))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| match e {
        HarnessError::Parse { line, column, message } => CliError::Usage(format!(
            "{}:{line}:{column}: {message}",
            a.config.display()
        )),
        other => CliError::from(other),
    })?;
    let ds = load_dataset(&cfg)?;
    ensure_dir(&a.out_dir)?;
    eprintln!("{TOOL_VERSION} config {} seeds {:?}", cfg.hash(), cfg.seeds);
    let res = multi_seed(&cfg, &ds, true)?;
    write_file(&a.out_dir.join("run.txt"), &stamp(&cfg))?;
    write_file(&a.out_dir.join("r_matrix.csv"), &r_matrix_csv(&res.runs))?;
    write_file(&a.out_dir.join("metrics.csv"), &metrics_csv(&res.runs))?;
    write_file(&a.out_dir.join("dcor.csv"), &dcor_csv(&res.runs))?;
    write_file(&a.out_dir.join("rates.csv"), &rates_csv(&res.runs))?;
    write_file(&a.out_dir.join("summary.csv"), &summary_csv(&res))?;
    for run in &res.runs {
        let ck = Checkpoint {
            config: cfg.clone(),
            seed: run.seed,
            snapshots: run.snapshots.clone(),
        };
        let path = a.out_dir.join(checkpoint_name(run.seed));
        ck.save(&path).map_err(|e| CliError::Io {
            context: format!("cannot write {}", path.display()),
            source: io::Error::other(e.to_string()),
        })?;
        eprintln!("seed {} finished in {:.1}s", run.seed, run.wall_clock_secs);
    }
    print!("{}", summary_table(&res));
    Ok(())
}

fn summary_table(res: &MultiSeedResult) -> String {
    let mut s = String::from("metric         mean       std\n");
    for m in &res.summary {
        let _ = writeln!(s, "{:<14} {:<10.4} {:.4}", m.name, m.mean, m.std);
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("stage_trained,stage_eval,delta,accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.stage_trained, r.stage_eval, r.delta, r.accuracy);
    }
    s
}

/// Accuracy against δ for the model after the final stage, one polyline per
/// evaluated stage.
pub fn sweep_chart(rows: &[SweepRow]) -> Chart {
    let last = rows.iter().map(|r| r.stage_trained).max().unwrap_or(0);
    let n_eval = rows.iter().map(|r| r.stage_eval + 1).max().unwrap_or(0);
    let series = (0..n_eval)
        .map(|j| Series {
            name: format!("stage {j}"),
            points: rows
                .iter()
                .filter(|r| r.stage_trained == last && r.stage_eval == j)
                .map(|r| (r.delta, r.accuracy))
                .collect(),
        })
        .collect();
    Chart {
        title: format!("Accuracy vs confounder intensity after stage {last}"),
        x_label: "delta".into(),
        y_label: "accuracy".into(),
        log_y: false,
        series,
    }
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| match e {
        HarnessError::Container(crate::datagen::ContainerError::Io(source)) => CliError::Io {
            context: format!("cannot read {}", a.checkpoint.display()),
            source,
        },
        other => CliError::Format(format!("{}: {other}", a.checkpoint.display())),
    })?;
    if a.deltas.is_empty() {
        return Err(CliError::Usage("no deltas given".into()));
    }
    let ds = load_dataset(&ck.config)?;
    let rows = delta_sweep(&ck.config, &ds, ck.seed, &ck.snapshots, &a.deltas)?;
    let dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a
            .checkpoint
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    ensure_dir(&dir)?;
    write_file(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    write_file(&dir.join("sweep.svg"), &sweep_chart(&rows).render())?;
    eprintln!("{TOOL_VERSION} config {} seed {}", ck.config.hash(), ck.seed);
    Ok(())
}

pub fn cmd_converge(a: &ConvergeArgs) -> Result<(), CliError> {
    if a.eps.is_empty() || a.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(CliError::Usage("--eps needs positive values".into()));
    }
    let curves = estimator_convergence(a.n, a.p, &a.eps, a.seed)?;
    ensure_dir(&a.out)?;
    let mut csv = String::from("eps,samples_seen,l2_gap\n");
    for c in &curves {
        for (t, g) in c.gaps.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{}", c.epsilon, t + 1, g);
        }
    }
    write_file(&a.out.join("converge.csv"), &csv)?;
    let chart = Chart {
        title: "Distance to the least-squares solution".into(),
        x_label: "samples seen".into(),
        y_label: "l2 gap (log)".into(),
        log_y: true,
        series: curves
            .iter()
            .map(|c| Series {
                name: format!("eps = {}", c.epsilon),
                points: c.gaps.iter().enumerate().map(|(t, &g)| ((t + 1) as f64, g)).collect(),
            })
            .collect(),
    };
    write_file(&a.out.join("converge.svg"), &chart.render())?;
    for c in &curves {
        println!("eps {}: final gap {}", c.epsilon, c.gaps.last().copied().unwrap_or(f64::NAN));
    }
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let path = a.dir.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(io_err(format!("cannot read {}", path.display())))?;
    let stamp = fs::read_to_string(a.dir.join("run.txt")).unwrap_or_default();
    print!("{}", render_report(&text, &stamp).map_err(CliError::Format)?);
    Ok(())
}

/// Mean and sample standard deviation of each metrics.csv column.
pub fn render_report(metrics_csv: &str, stamp: &str) -> Result<String, String> {
    let mut lines = metrics_csv.lines();
    let header: Vec<&str> = lines.next().ok_or("metrics.csv is empty")?.split(',').collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
    let mut n_rows = 0;
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(format!("metrics.csv row {} has {} fields", k + 2, fields.len()));
        }
        for (c, f) in fields.iter().enumerate().skip(1) {
            if !f.is_empty() {
                cols[c].push(f.parse().map_err(|_| format!("bad number {f:?} in metrics.csv"))?);
            }
        }
        n_rows += 1;
    }
    let mut s = String::new();
    for l in stamp.lines().take(2) {
        let _ = writeln!(s, "{l}");
    }
    let _ = writeln!(s, "runs: {n_rows}");
    let _ = writeln!(s, "| metric | mean | std |");
    let _ = writeln!(s, "|---|---|---|");
    for (c, name) in header.iter().enumerate().skip(1) {
        let v = &cols[c];
        if v.is_empty() {
            let _ = writeln!(s, "| {name} | | |");
            continue;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(s, "| {name} | {mean:.4} | {std:.4} |");
    }
    Ok(s)
}
