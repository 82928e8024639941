use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};
use iworld::experiment::{self, exit_code, ExperimentConfig, OUTPUT_DIR_ENV};
use iworld::models::Variant;
use iworld::train::EpochRecord;
use iworld::{Error, Result};
use serde_json::Value;

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "(unset)".into(),
        Value::Array(items) => items.iter().map(value_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn key_listing() -> String {
    let keys = ExperimentConfig::default_keys();
    let width = keys.keys().map(String::len).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (JSON file keys and --<key> flags), with defaults:\n");
    for (k, v) in &keys {
        out.push_str(&format!("  {k:width$}  {}\n", value_text(v)));
    }
    out.push_str(&format!("\nPrecedence: defaults < --config file < ${OUTPUT_DIR_ENV} (output.dir) < flags.\n"));
    out.push_str("Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure, 1 invalid operation.");
    out
}

fn common_args(cmd: Command) -> Command {
    let mut cmd = cmd
        .arg(Arg::new("config").long("config").value_name("FILE").help("Flat JSON config of dotted keys"))
        .arg(
            Arg::new("model")
                .long("model")
                .value_name("VARIANT")
                .help("Model variant: internal-world, ffn3l, cnn1d, pe-mlp, phys-entropy (sets model.variant)"),
        )
        .arg(Arg::new("data").long("data").value_name("CSV").help("Input CSV (sets data.csv)"))
        .arg(
            Arg::new("synth")
                .long("synth")
                .value_name("SPEC")
                .help("Synthetic data as pos=N,neg=N,sep=X (sets data.synth.*)"),
        )
        .arg(Arg::new("out").long("out").value_name("DIR").help("Output directory (sets output.dir)"))
        .next_help_heading("Configuration keys");
    for (key, default) in ExperimentConfig::default_keys() {
        cmd = cmd.arg(
            Arg::new(key.clone())
                .long(key)
                .value_name("VALUE")
                .allow_negative_numbers(true)
                .help(format!("default: {}", value_text(&default))),
        );
    }
    cmd
}

fn cli() -> Command {
    let path_arg = |name: &'static str, help: &'static str| Arg::new(name).long(name).value_name("PATH").help(help);
    Command::new("iworld")
        .about("Frozen transformer-slice wildfire classifier: training, evaluation and comparison")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_long_help(key_listing())
        .after_help("Run `iworld --help` for every configuration key and its default.")
        .subcommand(common_args(
            Command::new("train").about("Train one model and write checkpoint, history and report"),
        ))
        .subcommand(common_args(
            Command::new("evaluate")
                .about("Evaluate a checkpoint on the configured validation split")
                .arg(path_arg("checkpoint", "Model checkpoint (.nta)").required(true)),
        ))
        .subcommand(common_args(
            Command::new("compare").about("Train and compare several variants on identical splits").arg(
                Arg::new("variants")
                    .long("variants")
                    .value_name("LIST")
                    .help("Comma-separated variants (sets compare.variants)"),
            ),
        ))
        .subcommand(common_args(
            Command::new("synth")
                .about("Write a synthetic dataset as CSV")
                .arg(path_arg("file", "Output CSV [default: <output.dir>/synth.csv]")),
        ))
        .subcommand(common_args(
            Command::new("export-slice")
                .about("Export a frozen slice archive, from a checkpoint or seeded")
                .arg(path_arg("checkpoint", "Internal-world checkpoint to take the slice from"))
                .arg(path_arg("file", "Output archive [default: <output.dir>/slice.nta]")),
        ))
        .subcommand(common_args(
            Command::new("import-slice")
                .about("Validate a slice archive, optionally installing it into a checkpoint")
                .arg(path_arg("archive", "Slice archive to import").required(true))
                .arg(path_arg("checkpoint", "Internal-world checkpoint whose slice is replaced"))
                .arg(path_arg("file", "Output path [default: <output.dir>/slice.nta or model.nta]")),
        ))
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("No per-epoch progress"),
        )
}

fn parse_synth(spec: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        match part.split_once('=') {
            Some((k, v)) => match k.trim() {
                "pos" | "neg" => out.push((format!("data.synth.{}", k.trim()), v.trim().to_string())),
                "sep" | "separation" => out.push(("data.synth.separation".into(), v.trim().to_string())),
                other => bad.push(format!("--synth: unknown field {other:?} (expected pos, neg, sep)")),
            },
            None => bad.push(format!("--synth: expected key=value, got {part:?}")),
        }
    }
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(bad))
    }
}

fn collect_flags(m: &ArgMatches) -> Result<Vec<(String, String)>> {
    let mut flags = Vec::new();
    let get = |name: &str| m.try_get_one::<String>(name).ok().flatten().cloned();
    if let Some(v) = get("model") {
        flags.push(("model.variant".into(), Variant::from_str(&v)?.tag().to_string()));
    }
    if let Some(v) = get("data") {
        flags.push(("data.csv".into(), v));
    }
    if let Some(v) = get("synth") {
        flags.extend(parse_synth(&v)?);
    }
    if let Some(v) = get("out") {
        flags.push(("output.dir".into(), v));
    }
    if let Some(v) = get("variants") {
        let tags = v
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| Variant::from_str(s.trim()).map(|t| t.tag().to_string()))
            .collect::<Result<Vec<_>>>()?;
        flags.push(("compare.variants".into(), tags.join(",")));
    }
    for key in ExperimentConfig::default_keys().into_keys() {
        if let Some(v) = get(&key) {
            flags.push((key, v));
        }
    }
    Ok(flags)
}

fn progress(quiet: bool) -> impl FnMut(Variant, &EpochRecord) {
    move |v, r| {
        if !quiet {
            eprintln!(
                "[{v}] epoch {:>3}  loss {:.5}  val_f1 {:.4}  val_auc {:.4}{}",
                r.epoch,
                r.train_loss,
                r.val_f1,
                r.val_auc,
                if r.improved { "  *" } else { "" }
            );
        }
    }
}

fn path_or(m: &ArgMatches, name: &str, fallback: PathBuf) -> PathBuf {
    m.get_one::<String>(name).map(PathBuf::from).unwrap_or(fallback)
}

fn run(matches: &ArgMatches) -> Result<()> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    let quiet = m.get_flag("quiet");
    let flags = collect_flags(m)?;
    let env_out = std::env::var(OUTPUT_DIR_ENV).ok();
    let config_file = m.get_one::<String>("config").map(Path::new);
    let cfg = ExperimentConfig::resolve(config_file, env_out.as_deref(), &flags)?;
    let out = &cfg.output.dir;

    match name {
        "train" => {
            let run = experiment::run_train(&cfg, &mut progress(quiet))?;
            println!("{}", run.report.table_line());
            eprintln!("wrote {}", run.dir.display());
        }
        "evaluate" => {
            let checkpoint = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
            let report = experiment::run_evaluate(&cfg, &checkpoint)?;
            println!("{}", report.table_line());
        }
        "compare" => {
            let run = experiment::run_compare(&cfg, &mut progress(quiet))?;
            for r in &run.reports {
                println!("{}", r.table_line());
            }
            eprintln!("wrote {}", run.dir.display());
        }
        "synth" => {
            let file = path_or(m, "file", out.join("synth.csv"));
            let ds = experiment::run_synth(&cfg, &file)?;
            let (pos, neg) = ds.class_counts();
            println!(
                "wrote {} ({} rows: {pos} positive, {neg} negative, {} features)",
                file.display(),
                ds.len(),
                ds.dim()
            );
        }
        "export-slice" => {
            let file = path_or(m, "file", out.join("slice.nta"));
            let checkpoint = m.get_one::<String>("checkpoint").map(PathBuf::from);
            let archive = experiment::run_export_slice(&cfg, checkpoint.as_deref(), &file)?;
            println!(
                "wrote {} ({} tensors, {} scalars)",
                file.display(),
                archive.manifest().len(),
                archive.scalar_count()
            );
        }
        "import-slice" => {
            let archive = PathBuf::from(m.get_one::<String>("archive").expect("required"));
            let checkpoint = m.get_one::<String>("checkpoint").map(PathBuf::from);
            let default = if checkpoint.is_some() { "model.nta" } else { "slice.nta" };
            let file = path_or(m, "file", out.join(default));
            if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
            }
            let slice = experiment::run_import_slice(&cfg, &archive, checkpoint.as_deref(), &file)?;
            println!("imported {} parameters; wrote {}", slice.parameter_count(), file.display());
        }
        other => unreachable!("unknown subcommand {other}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
