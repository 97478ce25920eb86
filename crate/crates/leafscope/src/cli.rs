//! `leafscope` command line.

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{FlagOverrides, RunConfig};
use crate::{pipeline, report, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "leafscope", version, about = "Fine-tune CNN backbones on leaf-disease image folders")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Seed for splitting, augmentation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, env: &[(String, String)]) -> Result<RunConfig> {
        let flags = FlagOverrides {
            seed: self.seed,
            backbone: self.backbone.clone(),
            epochs: self.epochs,
        };
        RunConfig::resolve(Some(&self.config), env, &flags)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan the dataset, split it and write the manifest.
    Prepare(ConfigArgs),
    /// Train the configured backbone and keep the best checkpoint.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Print one line per epoch.
        #[arg(long)]
        verbose: bool,
    },
    /// Evaluate the best checkpoint on the test split, or import a
    /// confusion table with --matrix.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        /// Confusion table to import instead of running the checkpoint.
        #[arg(long, value_name = "CSV")]
        matrix: Option<PathBuf>,
        /// The imported table has predicted classes as rows.
        #[arg(long, requires = "matrix")]
        transpose_paper: bool,
    },
    /// Tabulate and chart several evaluated runs.
    Compare {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(required = true, value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
    },
    /// Render all artifacts of a run, or of an imported confusion table.
    Report {
        #[arg(long, value_name = "DIR", conflicts_with = "matrix", required_unless_present = "matrix")]
        run: Option<PathBuf>,
        #[arg(long, value_name = "CSV", requires = "out")]
        matrix: Option<PathBuf>,
        #[arg(long, requires = "matrix")]
        transpose_paper: bool,
        /// Backbone name recorded for an imported table.
        #[arg(long, requires = "matrix")]
        model: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli, env: &[(String, String)]) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => {
            let config = args.resolve(env)?;
            let file = pipeline::prepare(&config)?;
            let split = &file.split;
            eprintln!(
                "prepared {} samples in {} classes: {} train, {} validation, {} test",
                file.manifest.samples.len(),
                file.manifest.num_classes(),
                split.train_ids.len(),
                split.validation_ids.len(),
                split.test_ids.len()
            );
        }
        Command::Train { args, verbose } => {
            let config = args.resolve(env)?;
            let h = pipeline::train(&config, verbose)?;
            let best = &h.records[h.best_epoch];
            eprintln!(
                "trained {} epochs (best {}: val accuracy {:.4}){}",
                h.records.len(),
                h.best_epoch + 1,
                best.val_accuracy,
                if h.stopped_early { ", stopped early" } else { "" }
            );
        }
        Command::Evaluate {
            args,
            matrix,
            transpose_paper,
        } => {
            let config = args.resolve(env)?;
            let r = match matrix {
                Some(csv) => {
                    let dir = pipeline::RunLayout::new(config.run_dir()).reports();
                    pipeline::import_and_render(&csv, transpose_paper, &dir)?
                }
                None => pipeline::evaluate(&config)?,
            };
            eprint!("{}", report::classification_report_text(&r));
        }
        Command::Compare { out, runs } => {
            let table = pipeline::compare(&runs, &out)?;
            for r in &table.rows {
                eprintln!("{:<14} accuracy {:.4} macro precision {:.4}", r.model_name, r.overall_accuracy, r.macro_precision);
            }
        }
        Command::Report {
            run,
            matrix,
            transpose_paper,
            model,
            out,
        } => match (run, matrix) {
            (Some(run), _) => pipeline::render_run(&run)?,
            (None, Some(csv)) => {
                let out = out.ok_or_else(|| Error::Usage("--matrix needs --out".into()))?;
                let r = pipeline::import_and_render(&csv, transpose_paper, &out)?;
                if let Some(model) = model {
                    let bundle = report::RunBundle {
                        model_name: model,
                        history: Default::default(),
                        report: r,
                        config_hash: String::new(),
                    };
                    report::compare_runs(&[bundle], &out)?;
                }
            }
            (None, None) => return Err(Error::Usage("report needs --run or --matrix".into())),
        },
    }
    Ok(())
}

/// Runs the CLI on `argv` (program name first) with explicit environment
/// variables and returns the process exit code: 0 on success, 1 on usage
/// or validation errors, 2 on runtime errors.
pub fn run_command_with_env<I, T>(argv: I, env: &[(String, String)]) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{}", e.render());
            return 1;
        }
    };
    match execute(cli, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Core(leafscope_core::Error::Environment { .. }) = e {
                eprintln!("(the hint above names the setting to change)");
            }
            e.exit_code()
        }
    }
}

/// [`run_command_with_env`] with the process environment.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let env: Vec<(String, String)> = std::env::vars().collect();
    run_command_with_env(argv, &env)
}
