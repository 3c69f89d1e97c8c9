use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wgpr::dataset::{read_csv, write_csv, Dataset};
use wgpr::error::{io_err, Result};
use wgpr::format::{ensemble_from_str, ensemble_to_string};
use wgpr::run::{compare, run, RunConfig, SplitMode, Strategy, Trained};
use wgpr::synth::{generate, Regime, SynthConfig};

#[derive(Parser)]
#[command(name = "wgpr", version, about = "Streaming sparse GP ensembles with Wasserstein splitting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the two-regime 1-D dataset.
    Synth(SynthArgs),
    /// Stream a CSV through a strategy, save the ensemble and a result JSON.
    Train(TrainArgs),
    /// Score a saved ensemble on a CSV.
    Eval(EvalArgs),
    /// Sweep thresholds for WGPR and the distance baseline.
    Compare(CompareArgs),
    /// Write predictions of a saved ensemble for the rows of a CSV.
    Predict(PredictArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with a [synth] table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    split_point: Option<f64>,
    /// sigma_f,lengthscale,sigma_n
    #[arg(long, value_parser = parse_regime)]
    left: Option<Regime>,
    #[arg(long, value_parser = parse_regime)]
    right: Option<Regime>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())?;
    match v[..] {
        [sigma_f, lengthscale, sigma_n] => Ok(Regime { sigma_f, lengthscale, sigma_n }),
        _ => Err("expected sigma_f,lengthscale,sigma_n".into()),
    }
}

/// Run settings; flags override the config file.
#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Table inside the config file to use, e.g. `wgpr` or `baseline`.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    pseudo_points: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    j_hat: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    split: Option<SplitMode>,
    #[arg(long)]
    w_gen: Option<f64>,
    /// Baseline prediction over this many nearest centers.
    #[arg(long)]
    top_k: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_toml(&read_text(p)?, self.profile.as_deref())?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        set!(batch_size, pseudo_points, epsilon, j_hat, seed, strategy, target, train_fraction, split, w_gen);
        if self.top_k.is_some() {
            cfg.top_k = self.top_k;
        }
        if self.normalize {
            cfg.normalize = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Where to save the ensemble.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Optional CSV of test predictions.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Result JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated WGPR thresholds.
    #[arg(long, value_delimiter = ',')]
    epsilons: Vec<f64>,
    /// Comma-separated baseline thresholds.
    #[arg(long, value_delimiter = ',')]
    w_gens: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV of inputs; a target column, if present, is carried through.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    #[arg(long)]
    out: PathBuf,
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(io_err(p))
}

fn write_text(p: &Path, s: &str) -> Result<()> {
    std::fs::write(p, s).map_err(io_err(p))
}

fn emit(out: Option<&Path>, s: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, s),
        None => {
            println!("{s}");
            Ok(())
        }
    }
}

fn load_model(p: &Path) -> Result<Trained> {
    let (ensemble, header) = ensemble_from_str(&read_text(p)?)?;
    Ok(Trained { ensemble, header })
}

fn prediction_rows(features: &[String], preds: &[(Vec<f64>, Option<f64>, f64, f64, Option<usize>)]) -> String {
    let mut s = features.join(",");
    s.push_str(",y,mean,variance,model_index\n");
    for (x, y, m, v, j) in preds {
        for xi in x {
            s.push_str(&format!("{xi:?},"));
        }
        let y = y.map(|v| format!("{v:?}")).unwrap_or_default();
        let j = j.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{y},{m:?},{v:?},{j}\n"));
    }
    s
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::from_toml(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.n_points {
        cfg.n_points = v;
    }
    if let Some(v) = a.split_point {
        cfg.split = v;
    }
    if let Some(v) = a.left {
        cfg.left = v;
    }
    if let Some(v) = a.right {
        cfg.right = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    write_csv(&a.out, &generate(&cfg)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let data = read_csv(&a.data, &cfg.target)?;
    let out = run(&cfg, &data)?;
    if let Some(p) = &a.model {
        write_text(p, &ensemble_to_string(&out.trained.ensemble, &out.trained.header))?;
    }
    if let Some(p) = &a.predictions {
        let rows: Vec<_> =
            out.metrics.predictions.iter().map(|q| (q.x.clone(), Some(q.y), q.mean, q.variance, q.model)).collect();
        write_text(p, &prediction_rows(&data.features, &rows))?;
    }
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&out.result)?)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let trained = load_model(&a.model)?;
    let data = read_csv(&a.data, &a.target)?;
    let m = trained.evaluate(&data)?;
    let doc = serde_json::json!({
        "rmse": m.rmse,
        "smse": m.smse,
        "mean_variance": m.mean_variance,
        "n_models": trained.ensemble.len(),
        "n_test": data.len(),
    });
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&doc)?)
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let data = read_csv(&a.data, &cfg.target)?;
    let eps = if a.epsilons.is_empty() { vec![cfg.epsilon] } else { a.epsilons.clone() };
    let wg = if a.w_gens.is_empty() { vec![cfg.w_gen] } else { a.w_gens.clone() };
    let rows = compare(&cfg, &data, &eps, &wg);
    eprintln!("{:<18} {:>12} {:>8} {:>10} {:>14}", "strategy", "threshold", "models", "rmse", "samples/s");
    for r in &rows {
        match (&r.error, r.n_models, r.rmse, r.training_frequency) {
            (None, Some(n), Some(e), Some(f)) => {
                eprintln!("{:<18} {:>12.4e} {:>8} {:>10.4} {:>14.1}", r.strategy.name(), r.threshold, n, e, f)
            }
            (err, ..) => eprintln!("{:<18} {:>12.4e} failed: {}", r.strategy.name(), r.threshold, err.as_deref().unwrap_or("?")),
        }
    }
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&rows)?)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let trained = load_model(&a.model)?;
    let text = read_text(&a.data)?;
    let first = text.lines().next().unwrap_or_default();
    let has_target = first.split(',').any(|h| h.trim() == a.target);
    let data: Dataset = if has_target {
        wgpr::dataset::parse_csv(text.as_bytes(), &a.target)?
    } else {
        // Features only: parse with a placeholder target column.
        let mut padded = String::new();
        for (i, l) in text.lines().enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            padded.push_str(l);
            padded.push_str(if i == 0 { ",__target\n" } else { ",0\n" });
        }
        wgpr::dataset::parse_csv(padded.as_bytes(), "__target")?
    };
    let preds = trained.predict(&data.x)?;
    let rows: Vec<_> = preds
        .iter()
        .enumerate()
        .map(|(i, &(m, v, j))| (data.x.row(i).iter().copied().collect(), has_target.then(|| data.y[i]), m, v, j))
        .collect();
    write_text(&a.out, &prediction_rows(&data.features, &rows))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Predict(a) => cmd_predict(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
