//! `dualformer`: describe, count, run, check and benchmark dual-level video
//! transformer configurations.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration or input error,
//! 3 numeric error.

mod args;
mod bench;
mod checks;
mod config;
mod describe;
mod error;
mod forward;
mod inflate;
mod output;

use std::process::ExitCode;

use clap::Parser;
use dualformer::analysis::{count_macs, count_params, CostReport};
use dualformer::checks::{gradient_suites, oracle_suites, residual_identity_check, CheckOptions, Fault};
use dualformer::model::PresetName;

use args::{Cli, Command, OutputArgs};
use error::{input, CliError};
use output::{emit, render, Render};

impl Render for CostReport {
    fn table(&self) -> String {
        self.to_table()
    }

    fn json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    fn csv(&self) -> Result<String, CliError> {
        Ok(self.to_csv()?)
    }
}

fn publish(r: &dyn Render, out: &OutputArgs) -> Result<(), CliError> {
    emit(&render(r, out.format)?, out.output.as_deref())
}

fn fault(on: bool) -> Option<Fault> {
    on.then_some(Fault::PerturbOutput)
}

/// Returns whether every check passed.
fn execute(cli: Cli) -> Result<bool, CliError> {
    if cli.threads == 0 {
        return Err(input("--threads must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| input(e.to_string()))?;

    match cli.command {
        Command::Describe { model, out } => {
            let cfg = config::resolve(&model, PresetName::Tiny)?;
            publish(&describe::Description::new(cfg)?, &out)?;
        }
        Command::Params { model, out } => {
            let cfg = config::resolve(&model, PresetName::Tiny)?;
            publish(&count_params(&cfg)?, &out)?;
        }
        Command::Flops { model, out } => {
            let cfg = config::resolve(&model, PresetName::Tiny)?;
            let [t, h, w, _] = cfg.input_extent;
            publish(&count_macs(&cfg, [t, h, w])?, &out)?;
        }
        Command::Forward {
            model,
            format,
            output,
            seed,
            weights,
            inject_nan,
        } => {
            let cfg = config::resolve(&model, PresetName::Micro)?;
            let summary = forward::run(&forward::ForwardRequest {
                config: &cfg,
                seed,
                weights: weights.as_deref(),
                logits_path: output.as_deref(),
                inject_nan,
            })?;
            emit(&render(&summary, format)?, None)?;
        }
        Command::Gradcheck {
            seed,
            eps,
            coords,
            out,
            inject_fault,
        } => {
            if !(eps > 0.0 && eps.is_finite()) || coords == 0 {
                return Err(input("--eps must be positive and --coords >= 1"));
            }
            let report = checks::CheckReport {
                results: gradient_suites(&CheckOptions {
                    seed,
                    coords,
                    eps,
                    fault: fault(inject_fault),
                    ..CheckOptions::default()
                })?,
            };
            publish(&report, &out)?;
            return Ok(report.passed());
        }
        Command::OracleCheck {
            model,
            seed,
            cases,
            out,
            inject_fault,
        } => {
            if cases == 0 {
                return Err(input("--cases must be >= 1"));
            }
            let cfg = config::resolve(&model, PresetName::Micro)?;
            let opts = CheckOptions {
                seed,
                cases,
                fault: fault(inject_fault),
                ..CheckOptions::default()
            };
            let mut results = oracle_suites(&opts)?;
            results.push(residual_identity_check(&cfg, seed, opts.fault)?);
            let report = checks::CheckReport { results };
            publish(&report, &out)?;
            return Ok(report.passed());
        }
        Command::Bench {
            ladder,
            dim,
            heads,
            window,
            repeat,
            seed,
            out,
        } => {
            let report = bench::run(bench::BenchSettings {
                ladder: ladder.into_iter().map(|e| e.0).collect(),
                dim,
                heads,
                window: window.0,
                repeat,
                seed,
            })?;
            publish(&report, &out)?;
        }
        Command::Inflate {
            input_dir,
            output_dir,
            t_extent,
            format,
        } => {
            let report = inflate::run(&input_dir, &output_dir, t_extent)?;
            emit(&render(&report, format)?, None)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more checks failed (rerun with the seed shown)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

