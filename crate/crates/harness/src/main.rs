use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mambatron::model::Checkpoint;
use mambatron::objective::Stage;
use mambatron_harness::ablation::{run_ablation_suite, write_ablation_csv};
use mambatron_harness::bench::{bench_complexity, doubling, write_bench_csv};
use mambatron_harness::data::{read_cloud, Dataset};
use mambatron_harness::eval::{evaluate, write_eval_csv};
use mambatron_harness::gradcheck::{run_grad_checks, GRAD_TOLERANCE};
use mambatron_harness::order::{order_cloud, write_order_csv, OrderMode, OrderOptions};
use mambatron_harness::train::{train_stage, write_log, Trained};
use mambatron_harness::{HarnessError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "mambatron", version, about = "Desk-scale MambaTron point cloud completion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = mambatron_harness::data::TRAIN_PER_CLASS)]
        train_per_class: usize,
        #[arg(long, default_value_t = mambatron_harness::data::TEST_PER_CLASS)]
        test_per_class: usize,
    },
    /// Unimodal stage from random init.
    TrainUni {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV; defaults to the checkpoint path with a .csv extension.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Cross-modal stage from a unimodal checkpoint.
    TrainCross {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score completions of the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate the training split instead.
        #[arg(long)]
        train_split: bool,
    },
    /// Cell vs full-attention compute scaling.
    Bench {
        #[arg(long, default_value_t = 256)]
        lmin: usize,
        #[arg(long, default_value_t = 8192)]
        lmax: usize,
        #[arg(long, default_value_t = 4)]
        wblk: usize,
        #[arg(long, default_value_t = 64)]
        c: usize,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serialize the points of a cloud file.
    Order {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// FPS keypoints to order; 0 orders every point.
        #[arg(long, default_value_t = 0)]
        n_p: usize,
        #[arg(long, default_value_t = mambatron::geometry::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Take the APR transform from a checkpoint instead of searching.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    GradCheck {
        #[arg(long)]
        module: Option<String>,
    },
    /// Baseline plus every single-flag ablation.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn log_path(out: &Path, log: Option<PathBuf>) -> PathBuf {
    log.unwrap_or_else(|| out.with_extension("csv"))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData {
            out,
            seed,
            train_per_class,
            test_per_class,
        } => {
            let d = Dataset::generate_sized(seed, train_per_class, test_per_class)?;
            d.write(&out)?;
            println!("wrote {} train and {} test samples to {}", d.train.len(), d.test.len(), out.display());
        }
        Cmd::TrainUni { config, data, out, log } => {
            let cfg = RunConfig::load(&config)?;
            let data = Dataset::read(&data)?;
            let mut t = Trained::init(&cfg)?;
            let l = train_stage(&mut t, Stage::Uni, &data)?;
            t.save(&out)?;
            write_log(&log_path(&out, log), &l)?;
            if let Some(e) = l.last() {
                println!("uni stage: final loss {:.6}", e.report.total);
            }
        }
        Cmd::TrainCross {
            config,
            init,
            data,
            out,
            log,
        } => {
            let cfg = RunConfig::load(&config)?;
            if !init.is_file() {
                return Err(HarnessError::Precondition(format!(
                    "unimodal checkpoint {} not found; run train-uni first",
                    init.display()
                )));
            }
            let mut t = Trained::from_checkpoint_with(&Checkpoint::read(&init)?, &cfg)?;
            let data = Dataset::read(&data)?;
            let l = train_stage(&mut t, Stage::Cross, &data)?;
            t.save(&out)?;
            write_log(&log_path(&out, log), &l)?;
            if let Some(e) = l.last() {
                println!("cross stage: final loss {:.6}", e.report.total);
            }
        }
        Cmd::Eval {
            ckpt,
            data,
            out,
            train_split,
        } => {
            let t = Trained::load(&ckpt)?;
            let data = Dataset::read(&data)?;
            let samples = if train_split { &data.train } else { &data.test };
            let rows = evaluate(&t, samples)?;
            write_eval_csv(&out, &rows)?;
            for r in &rows {
                println!("{:>8}  cd_e3 {:9.4}  fscore {:.4}  baseline {:9.4}  n {}", r.class, r.cd_e3, r.fscore, r.baseline_cd_e3, r.n);
            }
        }
        Cmd::Bench {
            lmin,
            lmax,
            wblk,
            c,
            reps,
            seed,
            out,
        } => {
            let (rows, s) = bench_complexity(&doubling(lmin, lmax)?, wblk, c, reps, seed)?;
            write_bench_csv(&out, &rows)?;
            println!("log-log slope, MACs: cell {:.3}, attention {:.3}", s.cell_macs, s.attn_macs);
            println!("log-log slope, time: cell {:.3}, attention {:.3}", s.cell_time, s.attn_time);
        }
        Cmd::Order {
            cloud,
            mode,
            out,
            n_p,
            bins,
            seed,
            ckpt,
        } => {
            let mode: OrderMode = mode.parse()?;
            let affine = match ckpt {
                Some(p) => Some(Trained::load(&p)?.affine),
                None => None,
            };
            let opts = OrderOptions {
                n_p,
                bins,
                seed,
                affine,
                ..OrderOptions::default()
            };
            let o = order_cloud(&read_cloud(&cloud)?, mode, &opts)?;
            write_order_csv(&out, &o)?;
            println!("path_length {:.6}", o.path_length);
        }
        Cmd::GradCheck { module } => {
            let res = run_grad_checks(module.as_deref())?;
            for r in &res {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!("{:10} {:22} {:.3e}  {verdict}", r.module, r.name, r.max_rel_err);
            }
            if let Some(bad) = res.iter().find(|r| !r.passed()) {
                return Err(HarnessError::Numeric(format!(
                    "{}/{} gradient error {:.3e} exceeds {GRAD_TOLERANCE:e}",
                    bad.module, bad.name, bad.max_rel_err
                )));
            }
        }
        Cmd::Ablate { config, data, out } => {
            let cfg = RunConfig::load(&config)?;
            let data = Dataset::read(&data)?;
            let rows = run_ablation_suite(&cfg, &data)?;
            write_ablation_csv(&out, &rows)?;
            for r in &rows {
                println!("{:15} cd_e3 {:9.4}  fscore {:.4}", r.variant, r.cd_e3, r.fscore);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
