//! The `exwave` command line.
//!
//! Output directory layout: `metrics.csv`, `ablation.csv` plus
//! `curves/<mode>.csv`, `phase_maps/epoch_<e>/layer_<i>.pgm`, `checkpoint.bin`
//! and `config.resolved` (the effective configuration, usable as `--config`).

pub mod config;
pub mod fetch;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::data::{load_split, Dataset, DatasetName, Split};
use crate::error::{Error, Result};
use crate::metrics::{format_sig9, history_csv};
use crate::network::{Network, NetworkSpec};
use crate::training::{
    evaluate, grad_check, run_ablation, run_training, with_threads, AblationMode,
    GradCheckTolerance, ScoreHead, TrainOutcome,
};
use crate::wavelet::render_phase_map;

pub use config::RunConfig;
use fetch::{default_base_url, fetch_dataset, Fetcher, HttpFetcher};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.resolved";
pub const PHASE_MAP_DIR: &str = "phase_maps";
pub const SNAPSHOT_EPOCHS: [u32; 3] = [0, 10, 20];

#[derive(Debug, Parser)]
#[command(name = "exwave", version, about = "Optical diffractive network with wavelet phases and an expressway")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write metrics, checkpoint and phase maps.
    Train(RunArgs),
    /// Train the four shift/expressway combinations and tabulate accuracy.
    Ablate(RunArgs),
    /// Accuracy of a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every gradient on a small network.
    Gradcheck(GradcheckArgs),
    /// Write one PGM phase map per layer of a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Download the four IDX files of a dataset.
    Fetch {
        #[arg(long, default_value = "mnist", value_parser = config::parse_dataset)]
        dataset: DatasetName,
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        base_url: Option<String>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = config::parse_dataset)]
    pub dataset: Option<DatasetName>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub phase_maps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    Full,
    ShiftOnly,
    ExpressOnly,
    Neither,
    Dense,
}

impl From<ModeArg> for AblationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => AblationMode::Full,
            ModeArg::ShiftOnly => AblationMode::ShiftOnly,
            ModeArg::ExpressOnly => AblationMode::ExpressOnly,
            ModeArg::Neither => AblationMode::Neither,
            ModeArg::Dense => AblationMode::Dense,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub side: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    pub mode: ModeArg,
    /// Negate the analytic gradient before comparing (fault injection).
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

impl RunArgs {
    /// Loads `--config` (if any), applies flag overrides and resolves.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let t = &mut c.train;
        if let Some(v) = self.dataset {
            if t.dataset != v && self.data_dir.is_none() {
                c.data.dir = None;
            }
            t.dataset = v;
        }
        if let Some(v) = self.mode {
            t.ablation_mode = v.into();
        }
        if let Some(v) = self.layers {
            t.layer_count = v;
        }
        if let Some(v) = self.side {
            t.side = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.seed {
            t.master_seed = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.temperature {
            t.temperature = v;
        }
        if let Some(v) = self.threads {
            t.threads = v;
        }
        if let Some(v) = &self.out {
            c.output.dir = v.clone();
        }
        if let Some(v) = &self.data_dir {
            c.data.dir = Some(v.clone());
        }
        if let Some(v) = self.train_samples {
            c.data.train_samples = Some(v);
        }
        if let Some(v) = self.test_samples {
            c.data.test_samples = Some(v);
        }
        if self.phase_maps {
            c.output.phase_maps = true;
        }
        c.resolve()
    }
}

fn load_data(c: &RunConfig, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let data = load_split(&c.data_dir(), c.train.dataset, split)?;
    Ok(match limit {
        Some(n) => data.take(n),
        None => data,
    })
}

fn prepare_out(c: &RunConfig) -> Result<PathBuf> {
    let out = c.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join(CONFIG_FILE), c.to_toml().as_bytes())?;
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Phase maps of every layer as `dir/layer_<i>.pgm`, `i` counted from 1.
pub fn write_phase_maps(net: &Network, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    net.layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let path = dir.join(format!("layer_{}.pgm", i + 1));
            write(&path, &render_phase_map(layer).to_pgm())?;
            Ok(path)
        })
        .collect()
}

pub fn cmd_train(c: &RunConfig) -> Result<TrainOutcome> {
    let train = load_data(c, Split::Train, c.data.train_samples)?;
    let test = load_data(c, Split::Test, c.data.test_samples)?;
    let out = prepare_out(c)?;
    let maps = c.output.phase_maps;
    let maps_dir = out.join(PHASE_MAP_DIR);
    let metrics_path = out.join(METRICS_FILE);
    let layers = c.train.layer_count;
    let outcome = run_training(&c.train, c.geometry()?, &train, &test, |epoch, net, row| {
        if let Some(row) = row {
            eprintln!(
                "epoch {epoch}: loss {} accuracy {}",
                format_sig9(row.train_loss),
                format_sig9(row.test_accuracy)
            );
        }
        if maps && SNAPSHOT_EPOCHS.contains(&epoch) {
            write_phase_maps(net, &maps_dir.join(format!("epoch_{epoch}")))?;
        }
        Ok(())
    })?;
    write(&metrics_path, history_csv(layers, &outcome.state.history).as_bytes())?;
    checkpoint::save(&outcome.network, &out.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

/// Summary document: a header and one `mode,accuracy` row per ablation mode.
pub fn ablation_csv(dataset: DatasetName, rows: &[(AblationMode, f64)]) -> String {
    let mut s = format!("mode,{dataset}_accuracy\n");
    for (mode, acc) in rows {
        s.push_str(&format!("{mode},{}\n", format_sig9(*acc)));
    }
    s
}

pub fn cmd_ablate(c: &RunConfig) -> Result<Vec<(AblationMode, f64)>> {
    let train = load_data(c, Split::Train, c.data.train_samples)?;
    let test = load_data(c, Split::Test, c.data.test_samples)?;
    let out = prepare_out(c)?;
    let entries = run_ablation(&c.train, c.geometry()?, &train, &test)?;
    let curves = out.join("curves");
    fs::create_dir_all(&curves).map_err(|e| Error::io(&curves, e))?;
    for e in &entries {
        write(
            &curves.join(format!("{}.csv", e.mode)),
            history_csv(c.train.layer_count, &e.history).as_bytes(),
        )?;
    }
    let rows: Vec<_> = entries.iter().map(|e| (e.mode, e.accuracy)).collect();
    write(&out.join(ABLATION_FILE), ablation_csv(c.train.dataset, &rows).as_bytes())?;
    Ok(rows)
}

pub fn cmd_evaluate(c: &RunConfig, checkpoint_path: &Path) -> Result<f64> {
    let net = checkpoint::load(checkpoint_path)?;
    let test = load_data(c, Split::Test, c.data.test_samples)?;
    with_threads(c.train.threads, || evaluate(&net, &test))?
}

pub fn cmd_render(checkpoint_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    write_phase_maps(&checkpoint::load(checkpoint_path)?, out)
}

/// Returns the report text and whether every gradient passed.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(String, bool)> {
    use crate::seed::{stream_rng, Stream};
    use num_complex::Complex64;
    use rand::Rng;

    let mode = AblationMode::from(args.mode);
    let (shift, express) = mode.flags();
    let net = Network::random(&NetworkSpec {
        geometry: crate::diffraction::PropagationGeometry::with_defaults(args.side)?,
        layers: args.layers,
        phase_mode: mode.phase_mode(),
        shift,
        express,
        seed: args.seed,
    })?;
    let mut rng = stream_rng(args.seed, Stream::Probe(0));
    let input = crate::field::ComplexField::from_fn(args.side, |_, _| {
        Complex64::new(rng.gen_range(0.0..1.0), 0.0)
    })?;
    let label = rng.gen_range(0..crate::network::NUM_CLASSES);
    let head = ScoreHead { temperature: crate::training::DEFAULT_TEMPERATURE };
    let report = grad_check(&net, &head, &input, label, &GradCheckTolerance::default(), args.inject_sign_flip)?;
    let mut text = format!(
        "checked {} parameters\nmax relative error: {}\nmax absolute error: {}\n",
        report.checked,
        format_sig9(report.max_relative_error),
        format_sig9(report.max_abs_error),
    );
    if let Some(worst) = report.worst {
        text.push_str(&format!(
            "worst parameter: {worst} (analytic {}, numeric {})\n",
            format_sig9(report.worst_analytic),
            format_sig9(report.worst_numeric)
        ));
    }
    text.push_str(if report.passed() {
        "result: pass\n"
    } else {
        "result: FAIL\n"
    });
    Ok((text, report.passed()))
}

pub fn cmd_fetch(
    fetcher: &dyn Fetcher,
    dataset: DatasetName,
    dir: &Path,
    base_url: Option<&str>,
) -> Result<fetch::FetchReport> {
    fetch_dataset(fetcher, base_url.unwrap_or(default_base_url(dataset)), dir)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let c = args.resolve()?;
            let outcome = cmd_train(&c)?;
            println!("final test accuracy: {}", format_sig9(outcome.final_accuracy()));
            println!("outputs in {}", c.output.dir.display());
        }
        Command::Ablate(args) => {
            let c = args.resolve()?;
            for (mode, acc) in cmd_ablate(&c)? {
                println!("{mode}: {}", format_sig9(acc));
            }
        }
        Command::Evaluate { run, checkpoint } => {
            let c = run.resolve()?;
            println!("test accuracy: {}", format_sig9(cmd_evaluate(&c, &checkpoint)?));
        }
        Command::Gradcheck(args) => {
            let (text, passed) = cmd_gradcheck(&args)?;
            print!("{text}");
            if !passed {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Render { checkpoint, out } => {
            let files = cmd_render(&checkpoint, &out)?;
            println!("wrote {} phase maps to {}", files.len(), out.display());
        }
        Command::Fetch { dataset, dir, base_url } => {
            let dir = dir.unwrap_or_else(|| PathBuf::from("data").join(dataset.to_string()));
            let report = cmd_fetch(&HttpFetcher, dataset, &dir, base_url.as_deref())?;
            for p in &report.kept {
                println!("ok {}", p.display());
            }
            for p in &report.downloaded {
                println!("downloaded {}", p.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Parses `args` and runs the command; errors print to stderr and exit 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(64) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
