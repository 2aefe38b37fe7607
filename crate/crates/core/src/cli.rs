//! Command-line front end. Exit codes: 0 ok, 1 configuration, 2 missing
//! input, 3 runtime failure. Logs go to stderr as one JSON object per line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::render_table;
use crate::inference::Aggregation;
use crate::pipeline::{
    cmd_eval, cmd_explain, cmd_extract, cmd_gen_ds, cmd_synth, cmd_train, run_pipeline, ExplainFormat, RunConfig,
    ScorerBackend,
};

#[derive(Debug, Parser)]
#[command(name = "docrel", version, about = "Document-level drug-gene-mutation relation extraction")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per processor).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// `native` or `external:<host:port>`.
    #[arg(long, global = true)]
    pub scorer: Option<String>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, KB, gold set and queries.
    Synth,
    /// Build distantly supervised relation examples.
    GenDs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kb: PathBuf,
    },
    /// Train the relation detector and self-train the resolver.
    Train {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run inference for a query file.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Directory holding relation.json and pair.json (native backend).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Replace the detector with a constant positive scorer.
        #[arg(long)]
        always_positive: bool,
        /// No resolution graph: named mentions only.
        #[arg(long)]
        local: bool,
        #[arg(long)]
        noisy_or: bool,
        /// BP re-scoring of learned links before closure.
        #[arg(long)]
        bp: bool,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score predictions against gold; prints the report table.
    Eval {
        /// NAME=PATH, or PATH (named after its parent directory). Repeatable.
        #[arg(long = "predictions")]
        predictions: Vec<String>,
        #[arg(long)]
        gold: PathBuf,
        /// Test corpus, for the hard subset.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Line-delimited {system, positives, candidates} rows.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Explain one extraction result.
    Explain {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        id: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// synth, gen-ds, train, extract (full and ablations) and eval in one go.
    Pipeline,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::GenDs { .. } => "gen-ds",
            Command::Train { .. } => "train",
            Command::Extract { .. } => "extract",
            Command::Eval { .. } => "eval",
            Command::Explain { .. } => "explain",
            Command::Pipeline => "pipeline",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::MissingInput(_) => 2,
        _ => 3,
    }
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format(|buf, rec| {
            let line = serde_json::json!({
                "level": rec.level().as_str(),
                "target": rec.target(),
                "msg": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init();
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(r) = &common.run_id {
        cfg.run_id = Some(r.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = Some(j);
    }
    if let Some(s) = &common.scorer {
        cfg.scorer = s.parse::<ScorerBackend>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(path.to_path_buf()))
    }
}

fn named_prediction(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(spec);
            let name = p
                .parent()
                .and_then(|d| d.file_name())
                .map_or_else(|| spec.to_string(), |n| n.to_string_lossy().into_owned());
            (name, p)
        }
    }
}

/// Runs one parsed command line; output meant for the user goes to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve_config(&cli.common)?;
    if let Some(j) = cfg.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("worker pool already initialised: {e}");
        }
    }
    let dir = cfg.run_dir(cli.command.name());
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::Synth => {
            cmd_synth(&cfg, &dir)?;
        }
        Command::GenDs { corpus, kb } => {
            need(&corpus)?;
            need(&kb)?;
            cmd_gen_ds(&cfg, &corpus, &kb, &dir)?;
        }
        Command::Train { examples, corpus } => {
            need(&examples)?;
            need(&corpus)?;
            cmd_train(&cfg, &examples, &corpus, &dir)?;
        }
        Command::Extract { corpus, queries, models, always_positive, local, noisy_or, bp, k_max, threshold } => {
            need(&corpus)?;
            need(&queries)?;
            if let Some(m) = &models {
                need(m)?;
            }
            cfg.extract.resolution &= !local;
            cfg.extract.bp_rescoring |= bp;
            if noisy_or {
                cfg.extract.aggregation = Aggregation::NoisyOr;
            }
            if let Some(k) = k_max {
                cfg.extract.k_max = k;
            }
            if let Some(t) = threshold {
                cfg.extract.decision_threshold = t;
            }
            cfg.validate()?;
            cmd_extract(&cfg, &corpus, &queries, models.as_deref(), always_positive, &dir)?;
        }
        Command::Eval { predictions, gold, corpus, counts } => {
            let preds: Vec<(String, PathBuf)> = predictions.iter().map(|s| named_prediction(s)).collect();
            for p in preds.iter().map(|(_, p)| p).chain([&gold]).chain(corpus.iter()).chain(counts.iter()) {
                need(p)?;
            }
            let (_, report) = cmd_eval(&cfg, &preds, &gold, corpus.as_deref(), counts.as_deref(), &dir)?;
            out.write_all(render_table(&report.rows).as_bytes()).map_err(io)?;
        }
        Command::Explain { results, corpus, models, id, format } => {
            need(&results)?;
            need(&corpus)?;
            let fmt = match format {
                Format::Text => ExplainFormat::Text,
                Format::Json => ExplainFormat::Json,
            };
            let report = cmd_explain(&cfg, &results, &corpus, models.as_deref(), id, fmt)?;
            let ext = if matches!(format, Format::Json) { "json" } else { "txt" };
            let path = dir.join(format!("explain-{id}.{ext}"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            std::fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
            out.write_all(report.as_bytes()).map_err(io)?;
        }
        Command::Pipeline => {
            let report = run_pipeline(&cfg, &dir)?;
            out.write_all(render_table(&report.rows).as_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.common.log_level);
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::MissingInput("a".into())), 2);
        assert_eq!(exit_code(&Error::Validation("x".into())), 3);
    }

    #[test]
    fn bad_flag_is_a_config_error() {
        assert_eq!(main_with_args(["docrel", "--no-such-flag", "synth"]), 1);
        assert_eq!(main_with_args(["docrel", "--scorer", "gpu", "synth"]), 1);
    }

    #[test]
    fn missing_input_exits_2() {
        let d = tempfile::tempdir().unwrap();
        let code = main_with_args([
            "docrel",
            "--out-dir",
            d.path().to_str().unwrap(),
            "gen-ds",
            "--corpus",
            "/nonexistent/train.jsonl",
            "--kb",
            "/nonexistent/kb.jsonl",
        ]);
        assert_eq!(code, 2);
    }
}
