use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pmdp_core::gradsuite::{gradient_suite, SuiteConfig};
use pmdp_core::metrics::evaluate_with_set;
use pmdp_core::schedule::{train_with, History, Progress};
use pmdp_core::verify::{check_definition2, minimize_spar_free, oracle_agreement};
use pmdp_core::{Checkpoint, Dataset, Error, ModelParams, Result, Streams};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::csv::{float, CsvWriter};

/// Held-out single-factor pairs used for the oracle-agreement score.
const AGREEMENT_PAIRS: usize = 2000;
const GRAD_TOLERANCE: f64 = 1e-4;

/// Exit code for an error: 2 for bad input, 3 for a numeric abort, 1 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Io(_) | Error::Dimension { .. } | Error::Format(_) => 2,
        Error::Numeric { .. } | Error::NonFinite { .. } => 3,
        Error::Contract(_) | Error::Degenerate(_) => 1,
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn threads() -> usize {
    std::env::var("PMDP_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `job` over `items` on up to `PMDP_THREADS` threads; results keep the
/// input order.
fn parallel<T: Sync, R: Send>(items: &[T], job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads().min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().unwrap() = Some(job(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every item ran"))
        .collect()
}

fn write_losses(path: &Path, history: &History) -> Result<()> {
    let mut w = CsvWriter::create(
        path,
        &[
            "step", "rec", "dis", "spar", "cons", "reg", "beta1", "beta2", "beta3",
        ],
    )?;
    for r in &history.steps {
        let b = &r.breakdown;
        let mut row = vec![r.step.to_string()];
        row.extend(
            [
                b.rec, b.dis, b.spar, b.cons, b.reg, b.beta1, b.beta2, b.beta3,
            ]
            .map(float),
        );
        w.row(&row)?;
    }
    w.finish()?;
    let mut w = CsvWriter::create(
        &path.with_file_name("epochs.csv"),
        &["step", "mean_rec", "oracle_agreement"],
    )?;
    for e in &history.epochs {
        w.row(&[
            e.step.to_string(),
            float(e.mean_rec),
            float(e.oracle_agreement),
        ])?;
    }
    w.finish()?;
    Ok(())
}

#[derive(Debug)]
pub struct RunStatus {
    pub name: String,
    pub seed: u64,
    pub outcome: Result<String>,
}

/// One training run into `dir`. Returns the checkpoint hash.
fn train_one(cfg: &RunConfig, dir: &Path) -> Result<String> {
    create_dir(dir)?;
    std::fs::write(dir.join("config.txt"), cfg.snapshot())?;
    let dataset = Dataset::new(cfg.train.dataset.clone())?;
    let mut aborted = None;
    let result = train_with(&cfg.train, &dataset, |p| {
        if let Progress::Abort { state, history, .. } = p {
            aborted = Some((state, history.clone()));
        }
    });
    match result {
        Ok(outcome) => {
            write_losses(&dir.join("loss.csv"), &outcome.history)?;
            let path = dir.join("checkpoint.pmdp");
            outcome.checkpoint().save(&path)?;
            sha256_file(&path)
        }
        Err(e) => {
            if let Some((state, history)) = aborted {
                write_losses(&dir.join("loss.csv"), &history)?;
                state.save(&dir.join("abort-checkpoint.pmdp"))?;
                std::fs::write(dir.join("abort.txt"), format!("{e}\n"))?;
            }
            Err(e)
        }
    }
}

/// Trains once, or once per seed into `seed-N` subdirectories, and writes
/// `manifest.txt`.
pub fn train(cfg: &RunConfig, out: &Path, seeds: Option<&[u64]>) -> Result<Vec<RunStatus>> {
    create_dir(out)?;
    std::fs::write(out.join("config.txt"), cfg.snapshot())?;
    let runs: Vec<(String, u64, PathBuf)> = match seeds {
        None => vec![(".".into(), cfg.train.seed, out.to_path_buf())],
        Some(s) => s
            .iter()
            .map(|&seed| {
                (
                    format!("seed-{seed}"),
                    seed,
                    out.join(format!("seed-{seed}")),
                )
            })
            .collect(),
    };
    let statuses = parallel(&runs, |(name, seed, dir)| {
        let mut run = cfg.clone();
        run.train.seed = *seed;
        let outcome = train_one(&run, dir);
        match &outcome {
            Ok(_) => log::info!("run {name} finished"),
            Err(e) => log::error!("run {name} failed: {e}"),
        }
        RunStatus {
            name: name.clone(),
            seed: *seed,
            outcome,
        }
    });

    let mut m = String::new();
    let _ = writeln!(m, "config_hash = {}", cfg.content_hash());
    let seed_list: Vec<String> = runs.iter().map(|r| r.1.to_string()).collect();
    let _ = writeln!(m, "seeds = {}", seed_list.join(","));
    let _ = writeln!(m, "out = {}", out.display());
    for s in &statuses {
        match &s.outcome {
            Ok(hash) => {
                let _ = writeln!(
                    m,
                    "run {} seed {} ok checkpoint_sha256 {hash}",
                    s.name, s.seed
                );
            }
            Err(e) => {
                let _ = writeln!(m, "run {} seed {} failed: {e}", s.name, s.seed);
            }
        }
    }
    std::fs::write(out.join("manifest.txt"), m)?;
    Ok(statuses)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scores each checkpoint; with several, also writes median rows.
pub fn eval(cfg: &RunConfig, checkpoints: &[PathBuf], out: &Path) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::Config {
            key: "--checkpoint".into(),
            reason: "at least one checkpoint is required".into(),
        });
    }
    let model_cfg = &cfg.train.model;
    let loaded = checkpoints
        .iter()
        .map(|p| Checkpoint::load(model_cfg, p))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let dataset = Dataset::new(cfg.train.dataset.clone())?;
    let results = parallel(&loaded, |ck| {
        evaluate_with_set(&ck.model(model_cfg), &dataset, &cfg.eval)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut report = CsvWriter::create(
        &out.join("report.csv"),
        &["run", "checkpoint", "metric", "value"],
    )?;
    let mut activity = CsvWriter::create(&out.join("activity.csv"), &["run", "subspace", "std"])?;
    let nf = dataset.spec().len();
    let (k, d) = (model_cfg.num_subspaces, model_cfg.latent_dim);
    let mut header = vec!["run".to_string()];
    header.extend((0..nf).map(|f| format!("factor{f}")));
    for i in 0..k {
        header.extend((0..d).map(|j| format!("s{i}_{j}")));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut codes = CsvWriter::create(&out.join("codes.csv"), &header)?;

    for (run, ((r, set), path)) in results.iter().zip(checkpoints).enumerate() {
        let run = run.to_string();
        let shown = path.display().to_string();
        for (name, v) in r.scores() {
            report.row(&[run.clone(), shown.clone(), name.to_string(), float(v)])?;
        }
        for (i, s) in r.activity.iter().enumerate() {
            activity.row(&[run.clone(), i.to_string(), float(*s)])?;
        }
        for (row, factors) in set.factors.iter().enumerate() {
            let mut fields = vec![run.clone()];
            fields.extend(factors.iter().map(ToString::to_string));
            for c in &set.codes {
                fields.extend(c.row(row).iter().map(|&v| float(v)));
            }
            codes.row(&fields)?;
        }
    }
    if results.len() > 1 {
        let names = results[0].0.scores().map(|(n, _)| n);
        for (j, name) in names.iter().enumerate() {
            let m = median(results.iter().map(|(r, _)| r.scores()[j].1).collect());
            report.row(&[
                "median".to_string(),
                String::new(),
                name.to_string(),
                float(m),
            ])?;
        }
    }
    report.finish()?;
    activity.finish()?;
    codes.finish()?;
    for (run, (r, _)) in results.iter().enumerate() {
        let scores: Vec<String> = r
            .scores()
            .iter()
            .map(|(n, v)| format!("{n} {v:.3}"))
            .collect();
        println!("run {run}: {}", scores.join("  "));
    }
    Ok(())
}

/// Optimizes `L_spar` alone from random starts; one trace per seed.
pub fn verify_spar(cfg: &RunConfig, out: &Path, seeds: Option<&[u64]>) -> Result<()> {
    create_dir(out)?;
    let seeds: Vec<u64> = match seeds {
        Some(s) => s.to_vec(),
        None => (0..cfg.spar_seeds as u64).collect(),
    };
    let runs = parallel(&seeds, |&seed| {
        minimize_spar_free(&cfg.spar, &mut Streams::new(seed).stream("verify.spar"))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut trace = CsvWriter::create(&out.join("overlap.csv"), &["seed", "step", "overlap"])?;
    let mut summary = CsvWriter::create(
        &out.join("spar_summary.csv"),
        &["seed", "final_overlap", "spar", "floor_penalty", "min_norm"],
    )?;
    for (seed, run) in seeds.iter().zip(&runs) {
        for &(step, o) in &run.trace {
            trace.row(&[seed.to_string(), step.to_string(), float(o)])?;
        }
        summary.row(&[
            seed.to_string(),
            float(run.final_overlap),
            float(run.spar),
            float(run.floor_penalty),
            float(run.min_norm),
        ])?;
        println!(
            "seed {seed}: final overlap {:.4}  spar {:.3e}",
            run.final_overlap, run.spar
        );
    }
    trace.finish()?;
    summary.finish()?;
    let good = runs.iter().filter(|r| r.final_overlap < 0.05).count();
    println!("{good} of {} seeds reached overlap < 0.05", runs.len());
    Ok(())
}

/// Hit and leak rates of a trained checkpoint, plus oracle agreement on
/// held-out single-factor pairs.
pub fn verify_def2(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let model_cfg = &cfg.train.model;
    let ck = Checkpoint::load(model_cfg, checkpoint)?;
    create_dir(out)?;
    let dataset = Dataset::new(cfg.train.dataset.clone())?;
    let model = ck.model(model_cfg);
    let mu = ck.tracker.mean_norms();
    let streams = Streams::new(cfg.eval.seed);
    let report = check_definition2(
        &model,
        mu,
        &dataset,
        &cfg.def2,
        &mut streams.stream("verify.def2"),
    )?;
    let per_factor = AGREEMENT_PAIRS.div_ceil(dataset.spec().len());
    let agreement = oracle_agreement(
        &model,
        mu,
        &dataset,
        cfg.def2.pairs,
        per_factor,
        &mut streams.stream("verify.agreement"),
    )?;
    let mut w = CsvWriter::create(&out.join("def2.csv"), &["metric", "value"])?;
    w.row(&["hit_rate".to_string(), float(report.hit_rate)])?;
    w.row(&["leak_rate".to_string(), float(report.leak_rate)])?;
    w.row(&["oracle_agreement".to_string(), float(agreement)])?;
    w.row(&[
        "active_subspaces".to_string(),
        report.active.len().to_string(),
    ])?;
    w.row(&[
        "matching_conflict".to_string(),
        report.matching.conflict.to_string(),
    ])?;
    for (f, s) in report.matching.factor_to_subspace.iter().enumerate() {
        w.row(&[format!("factor{f}_subspace"), s.to_string()])?;
    }
    w.finish()?;
    println!(
        "hit rate {:.4}  leak rate {:.4}  oracle agreement {:.4}  active {:?}",
        report.hit_rate, report.leak_rate, agreement, report.active
    );
    Ok(())
}

/// Central-difference check of every loss term, one draw per seed. Returns
/// whether every term passed.
pub fn gradcheck(out: &Path, seeds: Option<&[u64]>) -> Result<bool> {
    create_dir(out)?;
    let seeds = seeds.map_or(vec![0], <[u64]>::to_vec);
    let base = SuiteConfig::default();
    let names = ModelParams::zeros(&base.model)?.names().to_vec();
    let mut w = CsvWriter::create(
        &out.join("gradcheck.csv"),
        &[
            "seed",
            "term",
            "coordinates",
            "max_rel_error",
            "resolved_max_rel_error",
            "flat_coordinates",
            "noise",
            "worst_param",
            "worst_index",
            "analytic",
            "numeric",
            "pass",
        ],
    )?;
    let mut all = true;
    for &seed in &seeds {
        let cfg = SuiteConfig {
            seed,
            ..base.clone()
        };
        let (checks, draws) = gradient_suite(&cfg)?;
        log::info!("seed {seed}: kink-free draw after {draws} attempts");
        for t in &checks {
            let c = &t.check;
            let pass = c.passes(GRAD_TOLERANCE);
            all &= pass;
            w.row(&[
                seed.to_string(),
                t.term.to_string(),
                c.coordinates().to_string(),
                float(c.max_rel_error),
                float(c.resolved_max_rel_error(GRAD_TOLERANCE)),
                c.flat_coordinates(GRAD_TOLERANCE).to_string(),
                float(c.noise),
                names[c.worst.0].clone(),
                c.worst.1.to_string(),
                float(c.analytic),
                float(c.numeric),
                pass.to_string(),
            ])?;
            println!(
                "seed {seed} {:<5} rel err {:.2e} (resolved {:.2e})  {}",
                t.term,
                c.max_rel_error,
                c.resolved_max_rel_error(GRAD_TOLERANCE),
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    w.finish()?;
    Ok(all)
}
