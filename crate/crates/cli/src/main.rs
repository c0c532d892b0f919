use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pistress_core::physloss::format_table;
use pistress_core::pipeline::{
    checkpoint_path, evaluate, generate_dataset, load_model, super_resolve, train, Dataset, PipelineError, RunConfig,
    Split,
};
use pistress_core::selftest;

/// Coarse-to-fine stress contour super-resolution.
#[derive(Parser)]
#[command(name = "pistress", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every load case and write the image dataset and manifest.
    GenData(Common),
    /// Train the configured model and keep the best checkpoint.
    Train(Common),
    /// Loss table of a checkpoint on one split, with the coarse baseline.
    Eval(EvalArgs),
    /// Write super-resolved images and decoded stresses.
    SuperResolve(SrArgs),
    /// Run the built-in numerical checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides any config key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to the checkpoint of the configured model and seed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct SrArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "validation")]
    split: String,
    /// Base case ids to process (default: every case of the split).
    #[arg(long = "case")]
    cases: Vec<String>,
}

fn load_config(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&c.config)?;
    for kv in &c.overrides {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| PipelineError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Exclusive marker in the run directory, removed when dropped.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(".pistress.lock");
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            PipelineError::Data(format!("cannot lock {} ({e}); is another command running?", path.display()))
        })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(RunLock(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn summary(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_gen_data(c: &Common) -> Result<(), PipelineError> {
    let cfg = load_config(c)?;
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let m = generate_dataset(&cfg)?;
    let count = |s| m.count(s);
    eprintln!(
        "generated {} cases: {} train, {} test, {} validation",
        m.records.len(),
        count(Split::Train),
        count(Split::Test),
        count(Split::Validation)
    );
    summary(json!({
        "command": "gen-data",
        "status": "ok",
        "manifest": cfg.manifest_path(),
        "cases": m.records.len(),
        "train_cases": count(Split::Train),
        "test_cases": count(Split::Test),
        "validation_cases": count(Split::Validation),
    }));
    Ok(())
}

fn cmd_train(c: &Common) -> Result<(), PipelineError> {
    let cfg = load_config(c)?;
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let data = Dataset::load(&cfg)?;
    eprintln!(
        "training {} (seed {}) on {} samples, {} epochs",
        cfg.model.name(),
        cfg.seed,
        data.len(Split::Train),
        cfg.train.epochs
    );
    let out = train(&cfg, &data, |r| {
        let test = r.test.map(|t| format!(" test mse {:.3e} phys {:.3e}", t.mse, t.physical)).unwrap_or_default();
        eprintln!(
            "epoch {:>4} lr {:.1e} train total {:.4e} mse {:.4e} phys {:.4e}{test} ({:.1}s)",
            r.epoch, r.learning_rate, r.train.total, r.train.mse, r.train.physical, r.seconds
        );
    })?;
    let h = &out.history;
    summary(json!({
        "command": "train",
        "status": "ok",
        "model": h.model_name,
        "seed": h.seed,
        "checkpoint": h.checkpoint,
        "best_epoch": h.best_epoch,
        "best": h.best(),
    }));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), PipelineError> {
    let cfg = load_config(&a.common)?;
    let split: Split = a.split.parse()?;
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| checkpoint_path(&cfg));
    let loaded = load_model(&ckpt)?;
    let data = Dataset::load(&cfg)?;
    loaded.check_canvas(&data)?;
    let ev = evaluate(&loaded.model, &data, split)?;
    eprint!("{}", format_table(&ev.rows()));
    let table = json!({
        "command": "eval",
        "status": "ok",
        "checkpoint": ckpt,
        "split": split,
        "samples": ev.samples.len(),
        "rows": ev.rows().iter().map(|(name, r)| json!({
            "model": name, "total": r.total, "mse": r.mse, "physical": r.physical,
        })).collect::<Vec<_>>(),
    });
    let report_dir = cfg.run_dir.join("reports");
    fs::create_dir_all(&report_dir)?;
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let detail = serde_json::to_string_pretty(&ev).expect("serializable");
    fs::write(report_dir.join(format!("eval_{stem}_{}.json", a.split)), detail)?;
    fs::write(report_dir.join(format!("eval_{stem}_{}.txt", a.split)), format_table(&ev.rows()))?;
    summary(table);
    Ok(())
}

fn cmd_super_resolve(a: &SrArgs) -> Result<(), PipelineError> {
    let cfg = load_config(&a.common)?;
    let split: Split = a.split.parse()?;
    let _lock = RunLock::acquire(&cfg.run_dir)?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| checkpoint_path(&cfg));
    let loaded = load_model(&ckpt)?;
    let data = Dataset::load(&cfg)?;
    loaded.check_canvas(&data)?;
    let out_dir = cfg.run_dir.join("super_resolved");
    let mut results = Vec::new();
    for pair in data.base(split) {
        if !a.cases.is_empty() && !a.cases.contains(&pair.lineage.base_case) {
            continue;
        }
        let r = super_resolve(&loaded.model, pair, cfg.data.epsilon, &out_dir, cfg.data.export_images)?;
        eprintln!("{}: footprint mismatch {:.3}%", r.case_id, 100.0 * r.footprint_mismatch);
        results.push(r);
    }
    if results.is_empty() {
        return Err(PipelineError::Data("no matching cases".into()));
    }
    let worst = results.iter().map(|r| r.footprint_mismatch).fold(0.0, f64::max);
    summary(json!({
        "command": "super-resolve",
        "status": "ok",
        "output_dir": out_dir,
        "cases": results.len(),
        "max_footprint_mismatch": worst,
    }));
    Ok(())
}

fn cmd_selftest(seed: u64) -> Result<bool, PipelineError> {
    let results = selftest::run_all(seed);
    for r in &results {
        eprintln!(
            "{} {}: error {:.3e} (tolerance {:.0e})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.error,
            r.tolerance
        );
    }
    let ok = results.iter().all(|r| r.passed);
    summary(json!({ "command": "selftest", "status": if ok { "ok" } else { "failed" }, "checks": results }));
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(c) => cmd_gen_data(c).map(|_| true),
        Command::Train(c) => cmd_train(c).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::SuperResolve(a) => cmd_super_resolve(a).map(|_| true),
        Command::Selftest { seed } => cmd_selftest(*seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
