//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 5 and 6 are directional desk-scale comparisons. They always run
//! and print their verdict, but only fail the process when
//! `MOBODY_STRICT_ACCEPTANCE=1` is set. `MOBODY_ACCEPTANCE_QUICK=1` skips them.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Context, Result};

use common::*;
use mobody::dara::{
    augment_source, delta_r_from_probs, train_classifiers, ClassifierPair, DaraConfig, DEFAULT_ETA,
    PROB_FLOOR,
};
use mobody::data::{
    load_dataset, save_dataset, DatasetMeta, Domain, Normalizer, TransitionDataset,
};
use mobody::dynamics::{
    gaussian_kl, max_std, DynMode, DynamicsArch, DynamicsEnsemble, ENSEMBLE_SIZE, LATENT_DIM,
};
use mobody::eval::{normalized_score, run_experiment, ExperimentConfig, RunReport, ScoreAnchors};
use mobody::math::{Mlp, Rng, Tensor};
use mobody::policy::{bc_weights, q_lambda, PolicyAgent, WeightMode};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---- 1, 2: gradients ----

fn gradient_correctness() -> Result<Verdict> {
    let reports = [
        transition_check(11, Domain::Trg),
        encoder_check(12, Domain::Src),
        cycle_check(13),
        reward_check(14, Domain::Trg),
        critic_check(15),
        actor_check(16, WeightMode::TargetQ),
    ];
    let pass = reports.iter().all(GradReport::ok);
    let parts: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.1e}", r.loss, r.max_rel))
        .collect();
    let n: usize = reports.iter().map(|r| r.checked).sum();
    Ok(verdict(
        pass,
        format!("{n} params, max rel err: {}", parts.join(", ")),
    ))
}

fn stop_gradient() -> Result<Verdict> {
    let (frozen, live) = stop_gradient_check(21);
    Ok(verdict(
        frozen.ok() && live > REL_TOL,
        format!(
            "phi_E vs frozen-branch FD {:.1e}; vs unfrozen FD {:.1e}",
            frozen.max_rel, live
        ),
    ))
}

// ---- 3: closed forms ----

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn closed_form_anchors() -> Result<Verdict> {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    check(
        "kl(0,1)",
        gaussian_kl(&Tensor::zeros(1, 4), &Tensor::filled(1, 4, 1.0)) == 0.0,
    );
    check(
        "kl(1,1)",
        close(
            gaussian_kl(&Tensor::row(vec![1.0]), &Tensor::row(vec![1.0])),
            0.5,
        ),
    );
    check(
        "dr(0.5,0.5)",
        delta_r_from_probs(0.5, 0.5, PROB_FLOOR) == 0.0,
    );
    check(
        "dr(0.8,0.5)",
        close(delta_r_from_probs(0.8, 0.5, PROB_FLOOR), 4f64.ln()),
    );
    // classifiers with all-zero weights output exactly 0.5 everywhere
    let mut pair = ClassifierPair::new(2, 1, &[4], Normalizer::identity(2), &mut Rng::new(0))?;
    for net in [&mut pair.sa_net, &mut pair.sas_net] {
        *net = Mlp::zeros(net.widths())?;
    }
    check(
        "dr(zero classifiers)",
        pair.delta_r(&[0.3, -1.0], &[0.5], &[1.0, 2.0])? == 0.0,
    );
    let anchors = ScoreAnchors::new("hand", -40.0, 160.0)?;
    check("score at random", normalized_score(-40.0, &anchors)? == 0.0);
    check(
        "score at expert",
        normalized_score(160.0, &anchors)? == 100.0,
    );
    check("lambda", close(q_lambda(2.0, &[1.0, -3.0]), 1.0));
    let w = bc_weights(&[1.0, -1.0], WeightMode::TargetQ);
    check("w+/w-", close(w[0] / w[1], 2f64.exp()));
    Ok(verdict(
        failed.is_empty(),
        if failed.is_empty() {
            "KL, dr, score, lambda and weight anchors exact to 1e-9".into()
        } else {
            format!("mismatch: {}", failed.join(", "))
        },
    ))
}

// ---- 4: ensemble uncertainty ----

fn ensemble_uq() -> Result<Verdict> {
    let arch = DynamicsArch::new(3, 1).with_hidden(16);
    let mut rng = Rng::new(41);
    let mut ens = DynamicsEnsemble::new(arch, Normalizer::identity(3), 4, 5.0, &mut rng)?;
    let first = ens.members[0].clone();
    ens.members.iter_mut().for_each(|m| *m = first.clone());
    let u_same = ens.uncertainty(Domain::Trg, &[0.1, -0.4, 2.0], &[0.7])?;

    let u_hand = max_std(&[&[1.0, 3.0], &[1.0, 5.0]]);

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dim = 1 + rng.index(6);
        let n = 2 + rng.index(6);
        let centre: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
        let mut devs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect();
        for j in 0..dim {
            let m = devs.iter().map(|d| d[j]).sum::<f64>() / n as f64;
            devs.iter_mut().for_each(|d| d[j] -= m);
        }
        let c = rng.uniform_range(0.05, 20.0);
        let u_at = |scale: f64| {
            let preds: Vec<Vec<f32>> = devs
                .iter()
                .map(|d| {
                    centre
                        .iter()
                        .zip(d)
                        .map(|(m, d)| (m + scale * d) as f32)
                        .collect()
                })
                .collect();
            let refs: Vec<&[f32]> = preds.iter().map(Vec::as_slice).collect();
            max_std(&refs)
        };
        let (base, scaled) = (u_at(1.0), u_at(c));
        worst = worst.max((scaled - c * base).abs() / (c * base).max(1e-6));
    }
    // predictions are stored as f32, so scaling holds to single-precision rounding
    let pass = u_same == 0.0 && close(u_hand, 1.0) && worst < 1e-4;
    Ok(verdict(
        pass,
        format!(
            "identical members u={u_same}, hand case u={u_hand}, scaling sweep max rel dev {worst:.1e} over 1000 cases"
        ),
    ))
}

// ---- 5, 6: desk-scale comparisons ----

fn desk(shift: &str, extra: &[(&str, &str)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::preset("desk")?;
    cfg.set("shift", shift)?;
    for (k, v) in extra {
        cfg.set(k, v)?;
    }
    cfg.seeds = vec![0, 1, 2];
    Ok(cfg)
}

fn dynamics_comparison(tmp: &Path, gravity_run: &mut Option<RunReport>) -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for shift in ["friction:0.5", "gravity:5"] {
        let cfg = desk(shift, &[("compare_dynamics", "true")])?;
        let report = run_experiment(&cfg, tmp.join(format!("compare_{shift}")))
            .with_context(|| format!("comparison run on {shift}"))?;
        let mse = |m: DynMode| report.mean_mse(m).unwrap_or(f64::NAN);
        let ours = mse(DynMode::Mobody);
        let others: Vec<String> = DynMode::all()
            .into_iter()
            .filter(|&m| m != DynMode::Mobody)
            .map(|m| {
                pass &= ours <= mse(m);
                format!("{} {:.4}", m.as_str(), mse(m))
            })
            .collect();
        parts.push(format!(
            "{shift}: mobody {ours:.4} vs {}",
            others.join(", ")
        ));
        if shift.starts_with("gravity") {
            *gravity_run = Some(report);
        }
    }
    Ok(verdict(pass, parts.join("; ")))
}

fn ablation_ordering(tmp: &Path, gravity_run: Option<RunReport>) -> Result<Verdict> {
    // the gravity comparison run trains the same full pipeline; its scores are reused
    let full = match gravity_run {
        Some(r) => r,
        None => run_experiment(&desk("gravity:5", &[])?, tmp.join("full"))?,
    };
    let ablation = run_experiment(
        &desk(
            "gravity:5",
            &[("disable_rollouts", "true"), ("weight_mode", "vanilla")],
        )?,
        tmp.join("ablation"),
    )?;
    let source_only = run_experiment(
        &desk(
            "gravity:5",
            &[
                ("disable_rollouts", "true"),
                ("weight_mode", "vanilla"),
                ("disable_dara", "true"),
                ("trg_batch", "0"),
            ],
        )?,
        tmp.join("source_only"),
    )?;
    let (f, a, s) = (
        full.mean_score(),
        ablation.mean_score(),
        source_only.mean_score(),
    );
    Ok(verdict(
        f > a && f > s,
        format!("normalized score full {f:.1}, no-rollout vanilla-BC {a:.1}, source-only {s:.1}"),
    ))
}

// ---- 7: DARA ----

fn synthetic(domain: Domain, n: usize, offset: f64, rng: &mut Rng) -> Result<TransitionDataset> {
    let meta = DatasetMeta {
        env_id: "synthetic".into(),
        shift_kind: if domain == Domain::Src {
            "none"
        } else {
            "offset"
        }
        .into(),
        shift_level: format!("{offset}"),
        behavior: "random".into(),
    };
    let mut ds = TransitionDataset::new(meta, domain, 2, 1);
    for _ in 0..n {
        let s = [rng.normal() as f32 + offset as f32, rng.normal() as f32];
        let a = [rng.uniform_range(-1.0, 1.0) as f32];
        let s2 = [s[0] + 0.1 * a[0], s[1] + 0.05 * rng.normal() as f32];
        ds.push(&s, &a, rng.normal() as f32, &s2, false)?;
    }
    Ok(ds)
}

fn trained_pair(offset: f64, seed: u64) -> Result<(f64, f64, ClassifierPair, TransitionDataset)> {
    let mut rng = Rng::new(seed);
    let src = synthetic(Domain::Src, 2000, 0.0, &mut rng)?;
    let trg = synthetic(Domain::Trg, 2000, offset, &mut rng)?;
    let mut pair = ClassifierPair::new(2, 1, &[32, 32], Normalizer::identity(2), &mut rng)?;
    let cfg = DaraConfig {
        steps: 1000,
        ..Default::default()
    };
    train_classifiers(&mut pair, &src, &trg, &cfg, &mut rng)?;
    let held_src = synthetic(Domain::Src, 5000, 0.0, &mut rng)?;
    let held_trg = synthetic(Domain::Trg, 5000, offset, &mut rng)?;
    let (sa, sas) = pair.accuracy(&held_src, &held_trg)?;
    Ok((sa, sas, pair, src))
}

fn dara_sanity() -> Result<Verdict> {
    let (sep_sa, sep_sas, _, _) = trained_pair(6.0, 71)?;
    let (same_sa, same_sas, pair, src) = trained_pair(0.0, 72)?;
    let copy = augment_source(&src, &pair, 0.0, PROB_FLOOR)?;
    let bits = |d: &TransitionDataset| d.rewards().iter().map(|r| r.to_bits()).collect::<Vec<_>>();
    let exact = copy == src && bits(&copy) == bits(&src);
    // a nonzero eta must actually move rewards, or the copy check is vacuous
    let moved = augment_source(&src, &pair, DEFAULT_ETA, PROB_FLOOR)? != src;
    let pass = sep_sa >= 0.95
        && sep_sas >= 0.95
        && (same_sa - 0.5).abs() <= 0.05
        && (same_sas - 0.5).abs() <= 0.05
        && exact
        && moved;
    Ok(verdict(
        pass,
        format!(
            "separable acc sa {sep_sa:.3} sas {sep_sas:.3}; identical acc sa {same_sa:.3} sas {same_sas:.3}; eta=0 copy bit-exact {exact}"
        ),
    ))
}

// ---- 8: determinism and persistence ----

fn round_trip<T: PartialEq>(
    path: &Path,
    scratch: &Path,
    load: impl Fn(&Path) -> mobody::Result<T>,
    save: impl Fn(&T, &Path) -> mobody::Result<()>,
) -> Result<bool> {
    let value = load(path).with_context(|| format!("loading {}", path.display()))?;
    save(&value, scratch)?;
    let again = load(scratch)?;
    Ok(std::fs::read(path)? == std::fs::read(scratch)? && again == value)
}

fn determinism(tmp: &Path) -> Result<Verdict> {
    let cfg = ExperimentConfig::preset("smoke")?;
    let (a, b) = (tmp.join("smoke_a"), tmp.join("smoke_b"));
    run_experiment(&cfg, &a)?;
    run_experiment(&cfg, &b)?;
    let metrics = std::fs::read(a.join("metrics.csv"))?;
    let rows = metrics.iter().filter(|&&c| c == b'\n').count();
    ensure!(rows > 10, "smoke metrics.csv has only {rows} lines");
    let identical = metrics == std::fs::read(b.join("metrics.csv"))?;

    let dir = a.join("seed_0");
    let scratch = tmp.join("scratch.bin");
    let trips = [
        (
            "dataset",
            round_trip(
                &dir.join("src.mbdy"),
                &scratch,
                |p| load_dataset(p),
                |v, p| save_dataset(v, p),
            )?,
        ),
        (
            "dynamics",
            round_trip(
                &dir.join("dynamics.mbdw"),
                &scratch,
                |p| DynamicsEnsemble::load(p),
                |v, p| v.save(p),
            )?,
        ),
        (
            "classifiers",
            round_trip(
                &dir.join("dara.mbdc"),
                &scratch,
                |p| ClassifierPair::load(p),
                |v, p| v.save(p),
            )?,
        ),
        (
            "agent",
            round_trip(
                &dir.join("agent.mbdp"),
                &scratch,
                |p| PolicyAgent::<f32>::load(p),
                |v, p| v.save(p),
            )?,
        ),
    ];
    let broken: Vec<&str> = trips.iter().filter(|t| !t.1).map(|t| t.0).collect();
    Ok(verdict(
        identical && broken.is_empty(),
        format!(
            "metrics.csv ({rows} lines) identical across runs: {identical}; checkpoint round trips failing: {}",
            if broken.is_empty() { "none".to_string() } else { broken.join(", ") }
        ),
    ))
}

// ---- 9: hyperparameters ----

fn hyperparameters() -> Result<Verdict> {
    let cfg = ExperimentConfig::default();
    let expected = include_str!("snapshots/default_config.txt");
    let snapshot = cfg.to_kv_text() == expected;
    let named = [
        ("dynamics lr", cfg.dynamics.lr == 3e-4),
        ("policy lr", cfg.policy.lr == 3e-4),
        ("classifier lr", cfg.dara.lr == 3e-4),
        ("gamma", cfg.gamma == 0.99),
        ("tau", cfg.tau == 5e-3),
        (
            "batches",
            cfg.policy.src_batch == 128 && cfg.policy.trg_batch == 128,
        ),
        ("d_z", LATENT_DIM == 16),
        ("ensemble", cfg.ensemble_size == 7 && ENSEMBLE_SIZE == 7),
        ("eta", cfg.dara.eta == 0.1),
        ("lambda_rep", cfg.dynamics.lambda_rep == 1.0),
    ];
    let off: Vec<&str> = named.iter().filter(|n| !n.1).map(|n| n.0).collect();
    Ok(verdict(
        snapshot && off.is_empty(),
        format!(
            "snapshot match {snapshot}; off-table values: {}",
            if off.is_empty() {
                "none".to_string()
            } else {
                off.join(", ")
            }
        ),
    ))
}

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1" || v == "true")
}

fn main() -> ExitCode {
    let strict = flag("MOBODY_STRICT_ACCEPTANCE");
    let quick = flag("MOBODY_ACCEPTANCE_QUICK");
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();
    let mut enforced_failures = 0;
    let mut gravity_run = None;

    let mut report =
        |id: u8, name: &str, enforced: bool, run: &mut dyn FnMut() -> Result<Verdict>| {
            let t = Instant::now();
            let (pass, detail) = match run() {
                Ok(v) => (v.pass, v.detail),
                Err(e) => (false, format!("error: {e:#}")),
            };
            let tag = match (pass, enforced) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "FAIL (reported, not enforced)",
            };
            if !pass && enforced {
                enforced_failures += 1;
            }
            println!(
                "criterion {id} {name}: {tag} [{:.1}s] {detail}",
                t.elapsed().as_secs_f64()
            );
        };

    report(1, "gradient correctness", true, &mut gradient_correctness);
    report(2, "stop-gradient semantics", true, &mut stop_gradient);
    report(3, "closed-form anchors", true, &mut closed_form_anchors);
    report(4, "ensemble uncertainty", true, &mut ensemble_uq);
    if quick {
        println!("criterion 5 dynamics-mode comparison: SKIP (quick mode)");
        println!("criterion 6 rollout/ablation ordering: SKIP (quick mode)");
    } else {
        report(5, "dynamics-mode comparison", strict, &mut || {
            dynamics_comparison(tmp, &mut gravity_run)
        });
        report(6, "rollout/ablation ordering", strict, &mut || {
            ablation_ordering(tmp, gravity_run.take())
        });
    }
    report(7, "classifier sanity", true, &mut dara_sanity);
    report(8, "determinism and persistence", true, &mut || {
        determinism(tmp)
    });
    report(9, "hyperparameter conformance", true, &mut hyperparameters);

    if enforced_failures > 0 {
        println!("{enforced_failures} enforced criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
