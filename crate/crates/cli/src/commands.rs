use std::fs;
use std::path::{Path, PathBuf};

use djcm_core::channel::ChannelParams;
use djcm_core::constellation::build_spec;
use djcm_core::diff::{run_suite, NodeKind, SuiteOptions};
use djcm_core::oracle::{equivalence_report, write_summary, DistReport, McOptions};
use djcm_core::rng::RngState;
use djcm_core::toy::{
    evaluate, load_checkpoint, run_phase1, run_phase2, run_phase3, save_checkpoint, write_trace, Chain,
    Stage, ToyModel,
};

use crate::config::ExperimentConfig;
use crate::CliError;

fn runtime(e: djcm_core::Error) -> CliError {
    match e {
        djcm_core::Error::Checkpoint(_)
        | djcm_core::Error::PhaseOrder(_)
        | djcm_core::Error::Unsupported(_)
        | djcm_core::Error::Config(_)
        | djcm_core::Error::InvalidOrder(_) => CliError::Config(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> djcm_core::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    fill(&mut buf).map_err(runtime)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    fs::write(&tmp, &buf).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn out_dir(cfg: &ExperimentConfig, over: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = over.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn verify_dist(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out_dir(&cfg, out)?;
    let o = &cfg.oracle;
    let opts = McOptions {
        samples: o.samples,
        bins: o.bins,
    };
    let base = RngState::named(cfg.seed, "verify-dist");
    let mut reports: Vec<DistReport> = Vec::new();
    let mut failures = Vec::new();
    for &order in &o.orders {
        for &snr in &o.snr_db {
            let spec = build_spec(order, o.power).map_err(runtime)?;
            let params = ChannelParams::awgn(snr, o.power).map_err(runtime)?;
            let source = o.source.density(&spec);
            let rng = base.child(&format!("M{order}_snr{snr}"));
            let report = equivalence_report(&spec, &params, &source, &opts, rng).map_err(runtime)?;
            let path = dir.join(format!("dist_M{order}_snr{snr}.csv"));
            write_atomic(&path, |b| report.write_csv(b))?;

            let t = &o.thresholds;
            let mut notes = Vec::new();
            let sum_err = (report.pmf_sum() - 1.0).abs();
            if sum_err > t.pmf_sum_tol {
                notes.push(format!("pmf sum off by {sum_err:.3e}"));
            }
            let sigma = report.max_mc_sigma();
            if sigma > t.max_mc_sigma {
                notes.push(format!("MC deviates by {sigma:.2} standard errors"));
            }
            if let (Some(max), Some(d)) = (t.max_delta_inner, report.delta_inner) {
                if d > max {
                    notes.push(format!("delta_inner {d:.4} > {max}"));
                }
            }
            if let Some(max) = t.max_delta_edge {
                if report.delta_edge > max {
                    notes.push(format!("delta_edge {:.4} > {max}", report.delta_edge));
                }
            }
            let status = if notes.is_empty() { "ok" } else { "FAIL" };
            println!(
                "M={order:<5} snr={snr:<5} delta_inner={:<10} delta_edge={:.4e} mc_sigma={sigma:.2} {status} {}",
                report.delta_inner.map_or("-".into(), |d| format!("{d:.4e}")),
                report.delta_edge,
                notes.join("; ")
            );
            if !notes.is_empty() {
                failures.push(format!("M={order} snr={snr}: {}", notes.join("; ")));
            }
            reports.push(report);
        }
    }
    write_atomic(&dir.join("dist_summary.csv"), |b| write_summary(&reports, b))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(failures.join("\n")))
    }
}

pub fn gradcheck(cases: usize, fault: Option<String>) -> Result<(), CliError> {
    let fault = match fault {
        Some(name) => Some(
            NodeKind::parse(&name).ok_or_else(|| CliError::Config(format!("unknown node kind '{name}'")))?,
        ),
        None => None,
    };
    let opts = SuiteOptions {
        cases,
        fault,
        ..SuiteOptions::default()
    };
    let report = run_suite(&opts).map_err(runtime)?;
    report.write_csv(std::io::stdout()).map_err(runtime)?;
    if report.passed() {
        Ok(())
    } else {
        let w = report.worst().unwrap();
        Err(CliError::Threshold(format!(
            "gradient check failed; worst node {} with relative error {:.3e} (case {})",
            w.node, w.max_rel_err, w.worst_case
        )))
    }
}

fn checkpoint_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}.ckpt", stage.name()))
}

fn load_model(path: &Path) -> Result<ToyModel, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

const SWEEP_HEADER: [&str; 7] = ["lambda", "M", "snr_db", "chain", "mse", "psnr_db", "cbr"];

fn eval_grid(model: &ToyModel, cfg: &ExperimentConfig, path: &Path, print: bool) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for &order in &cfg.eval.orders {
        for &snr in &cfg.eval.snr_db {
            for chain in [Chain::Hard, Chain::Relaxed] {
                let r = evaluate(model, order, snr, chain, cfg.eval.n_eval, cfg.eval.seed).map_err(runtime)?;
                if print && chain == Chain::Hard {
                    println!(
                        "M={order:<5} snr={snr:<5} mse={:.6} psnr={:.3} dB cbr={:.4}",
                        r.mse, r.psnr_db, r.cbr
                    );
                }
                rows.push([
                    model.lambda.to_string(),
                    order.to_string(),
                    snr.to_string(),
                    chain.name().to_string(),
                    r.mse.to_string(),
                    r.psnr_db.to_string(),
                    r.cbr.to_string(),
                ]);
            }
        }
    }
    write_atomic(path, |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(SWEEP_HEADER)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

pub fn train_toy(config: &Path, resume: Option<Stage>) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let train = cfg.train_config();
    let dir = out_dir(&cfg, None)?;
    let (mut model, first) = match resume {
        None => (ToyModel::new(&train).map_err(runtime)?, 1),
        Some(Stage::Phase2) => (load_model(&checkpoint_path(&dir, Stage::Phase1))?, 2),
        Some(Stage::Phase3) => (load_model(&checkpoint_path(&dir, Stage::Phase2))?, 3),
        Some(other) => {
            return Err(CliError::Config(format!(
                "cannot resume at {}; use phase2 or phase3",
                other.name()
            )))
        }
    };
    let mut trace = Vec::new();
    let mut result = Ok(());
    for phase in first..=3 {
        let run = match phase {
            1 => run_phase1(&mut model, &train),
            2 => run_phase2(&mut model, &train),
            _ => run_phase3(&mut model, &train),
        };
        match run {
            Ok(rows) => trace.extend(rows),
            Err(e) => {
                result = Err(runtime(e));
                break;
            }
        }
        save_checkpoint(&model, &checkpoint_path(&dir, model.stage)).map_err(runtime)?;
        eprintln!("phase {phase} done");
    }
    write_atomic(&dir.join("trace.csv"), |b| write_trace(&trace, b))?;
    result?;
    eval_grid(&model, &cfg, &dir.join("eval.csv"), true)
}

pub fn sweep(config: &Path, checkpoint: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let model = load_model(checkpoint)?;
    let dir = out_dir(&cfg, None)?;
    eval_grid(&model, &cfg, &dir.join("sweep.csv"), false)
}
