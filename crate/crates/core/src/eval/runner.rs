use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dara::{augment_source, train_classifiers, ClassifierPair};
use crate::data::{collect_dataset, save_dataset, TransitionDataset};
use crate::dynamics::{fit_normalizer, train_dynamics, DynMode, DynamicsArch, DynamicsEnsemble};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::eval::config::ExperimentConfig;
use crate::eval::metrics::{
    evaluate_policy, normalized_score, rollout_mse, MseOptions, ScoreAnchors, ANCHOR_SEED,
};
use crate::math::Rng;
use crate::policy::{train_mobody, PolicyAgent};

/// Stream ids used to derive independent per-stage seeds from a run seed.
pub mod streams {
    pub const SRC_DATA: u64 = 1;
    pub const TRG_DATA: u64 = 2;
    pub const DARA: u64 = 3;
    pub const DYNAMICS: u64 = 4;
    pub const POLICY: u64 = 5;
    pub const MSE: u64 = 6;
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    Rng::with_stream(seed, stream).next_u64()
}

/// First 12 hex digits of the SHA-256 of the config echo.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_kv_text().as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub const METRICS_HEADER: [&str; 9] = [
    "run_id",
    "env",
    "shift_kind",
    "shift_level",
    "seed",
    "stage",
    "step",
    "metric_name",
    "value",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub stage: String,
    pub step: usize,
    pub name: String,
    pub value: f64,
}

/// Long-format metric rows for one run; identifying columns are shared.
#[derive(Debug, Clone)]
pub struct MetricLog {
    pub run_id: String,
    pub env: String,
    pub shift_kind: String,
    pub shift_level: String,
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn new(run_id: String, target: &EnvSpec) -> Self {
        Self {
            run_id,
            env: target.env_id.as_str().to_string(),
            shift_kind: target.shift_kind_text().to_string(),
            shift_level: target.shift_level_text(),
            rows: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        seed: u64,
        stage: &str,
        step: usize,
        name: impl Into<String>,
        value: f64,
    ) {
        self.rows.push(MetricRow {
            seed,
            stage: stage.to_string(),
            step,
            name: name.into(),
            value,
        });
    }

    pub fn value(&self, seed: u64, stage: &str, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.seed == seed && r.stage == stage && r.name == name)
            .map(|r| r.value)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(METRICS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                self.run_id.as_str(),
                &self.env,
                &self.shift_kind,
                &self.shift_level,
                &r.seed.to_string(),
                &r.stage,
                &r.step.to_string(),
                &r.name,
                &r.value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn staged<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => e.in_stage(stage),
    })
}

fn mean_reward(ds: &TransitionDataset) -> f64 {
    ds.rewards().iter().map(|&r| r as f64).sum::<f64>() / ds.len().max(1) as f64
}

/// Behavior datasets for one seed: `(source, target)`.
pub fn generate_datasets(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(TransitionDataset, TransitionDataset)> {
    staged(
        "data",
        (|| {
            let src = collect_dataset(
                &cfg.source_spec(),
                cfg.behavior,
                cfg.src_size,
                derive_seed(seed, streams::SRC_DATA),
            )?;
            let trg = collect_dataset(
                &cfg.target_spec()?,
                cfg.behavior,
                cfg.trg_size,
                derive_seed(seed, streams::TRG_DATA),
            )?;
            Ok((src, trg))
        })(),
    )
}

/// Trains the domain classifiers (unless disabled) and returns them with the
/// reward-augmented source data.
pub fn dara_stage(
    cfg: &ExperimentConfig,
    src: &TransitionDataset,
    trg: &TransitionDataset,
    seed: u64,
    log: &mut MetricLog,
) -> Result<(Option<ClassifierPair>, TransitionDataset)> {
    if cfg.disable_dara {
        return Ok((None, src.clone()));
    }
    staged(
        "dara",
        (|| {
            let mut rng = Rng::new(derive_seed(seed, streams::DARA));
            let norm = fit_normalizer(src, trg);
            let mut pair = ClassifierPair::new(
                src.state_dim(),
                src.action_dim(),
                &cfg.dara.hidden,
                norm,
                &mut rng,
            )?;
            for rec in train_classifiers(&mut pair, src, trg, &cfg.dara, &mut rng)? {
                log.push(seed, "dara", rec.step, "loss", rec.loss);
                log.push(seed, "dara", rec.step, "sa_accuracy", rec.sa_accuracy);
                log.push(seed, "dara", rec.step, "sas_accuracy", rec.sas_accuracy);
            }
            let aug = augment_source(src, &pair, cfg.dara.eta, cfg.dara.prob_floor)?;
            log.push(
                seed,
                "dara",
                cfg.dara.steps,
                "reward_shift_mean",
                mean_reward(&aug) - mean_reward(src),
            );
            Ok((Some(pair), aug))
        })(),
    )
}

/// Trains an ensemble in `mode` on raw source and target data.
pub fn dynamics_stage(
    cfg: &ExperimentConfig,
    mode: DynMode,
    src: &TransitionDataset,
    trg: &TransitionDataset,
    seed: u64,
    log: &mut MetricLog,
) -> Result<DynamicsEnsemble> {
    staged(
        "dynamics",
        (|| {
            let mut rng = Rng::new(derive_seed(seed, streams::DYNAMICS));
            let arch =
                DynamicsArch::new(src.state_dim(), src.action_dim()).with_hidden(cfg.dyn_hidden);
            let mut ens = DynamicsEnsemble::new(
                arch,
                fit_normalizer(src, trg),
                cfg.ensemble_size,
                cfg.beta,
                &mut rng,
            )?;
            let dyn_cfg = cfg.with_mode(mode).dynamics;
            let history = train_dynamics(&mut ens, src, trg, &dyn_cfg, &mut rng)?;
            let stage = format!("dynamics_{}", mode.as_str());
            for rec in &history.records {
                let m = rec.member;
                let v = &rec.values;
                for (name, value) in [
                    ("transition", v.transition),
                    ("encoder", v.encoder),
                    ("kl", v.kl),
                    ("reconstruction", v.reconstruction),
                    ("reward", v.reward),
                    ("total", v.total),
                ] {
                    log.push(seed, &stage, rec.step, format!("m{m}.{name}"), value);
                }
            }
            Ok(ens)
        })(),
    )
}

/// Trains the policy; when `eval_every > 0` the normalized score on the
/// target env is logged along the way.
#[allow(clippy::too_many_arguments)]
pub fn policy_stage(
    cfg: &ExperimentConfig,
    ensemble: Option<&DynamicsEnsemble>,
    src_aug: &TransitionDataset,
    trg: &TransitionDataset,
    target: &EnvSpec,
    anchors: &ScoreAnchors,
    seed: u64,
    log: &mut MetricLog,
) -> Result<PolicyAgent> {
    staged(
        "policy",
        (|| {
            let mut rng = Rng::new(derive_seed(seed, streams::POLICY));
            let hidden = [cfg.policy_hidden; 2];
            let mut agent = PolicyAgent::new(
                src_aug.state_dim(),
                src_aug.action_dim(),
                &hidden,
                fit_normalizer(src_aug, trg),
                &mut rng,
            )?;
            agent.alpha = cfg.alpha;
            agent.bc_weight = cfg.bc_weight;
            agent.gamma = cfg.gamma;
            agent.tau = cfg.tau;
            agent.weight_mode = cfg.weight_mode;
            let ens = if cfg.policy.rollouts { ensemble } else { None };
            let last = cfg.policy.steps.saturating_sub(1);
            let mut on_eval = |step: usize, a: &PolicyAgent| -> Result<Vec<(String, f64)>> {
                if cfg.eval_every == 0 || (step % cfg.eval_every != 0 && step != last) {
                    return Ok(vec![]);
                }
                let (ret, _) = evaluate_policy(a, target, cfg.eval_episodes, ANCHOR_SEED)?;
                Ok(vec![
                    ("eval_return".to_string(), ret),
                    (
                        "normalized_score".to_string(),
                        normalized_score(ret, anchors)?,
                    ),
                ])
            };
            let metrics = train_mobody(
                &mut agent,
                ens,
                src_aug,
                trg,
                &cfg.policy,
                &mut rng,
                &mut on_eval,
            )?;
            for m in metrics {
                log.push(seed, "policy", m.step, m.name, m.value);
            }
            Ok(agent)
        })(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub normalized_score: f64,
    /// Absent when no dynamics model was trained.
    pub rollout_mse: Option<f64>,
}

pub fn mse_options(cfg: &ExperimentConfig) -> MseOptions {
    MseOptions {
        horizon: cfg.mse_horizon,
        open_loop: cfg.mse_open_loop,
    }
}

/// Final target-env evaluation and, given a model, its rollout MSE under `agent`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_stage(
    cfg: &ExperimentConfig,
    agent: &PolicyAgent,
    ensemble: Option<&DynamicsEnsemble>,
    target: &EnvSpec,
    anchors: &ScoreAnchors,
    seed: u64,
    log: &mut MetricLog,
) -> Result<SeedSummary> {
    staged(
        "evaluate",
        (|| {
            let step = cfg.policy.steps;
            let (mean, std) = evaluate_policy(agent, target, cfg.eval_episodes, ANCHOR_SEED)?;
            let score = normalized_score(mean, anchors)?;
            log.push(seed, "eval", step, "return_mean", mean);
            log.push(seed, "eval", step, "return_std", std);
            log.push(seed, "eval", step, "normalized_score", score);
            let mse = match ensemble {
                Some(ens) => {
                    let m = rollout_mse(
                        ens,
                        agent,
                        target,
                        cfg.mse_starts,
                        mse_options(cfg),
                        derive_seed(seed, streams::MSE),
                    )?;
                    log.push(seed, "eval", step, "rollout_mse", m);
                    Some(m)
                }
                None => None,
            };
            Ok(SeedSummary {
                seed,
                return_mean: mean,
                return_std: std,
                normalized_score: score,
                rollout_mse: mse,
            })
        })(),
    )
}

/// Rollout MSE of `mode`'s ensemble under `agent`, logged as `mse_<mode>`.
pub fn compare_mode(
    cfg: &ExperimentConfig,
    mode: DynMode,
    ens: &DynamicsEnsemble,
    agent: &PolicyAgent,
    target: &EnvSpec,
    seed: u64,
    log: &mut MetricLog,
) -> Result<f64> {
    staged(
        "compare",
        (|| {
            let m = rollout_mse(
                ens,
                agent,
                target,
                cfg.mse_starts,
                mse_options(cfg),
                derive_seed(seed, streams::MSE),
            )?;
            log.push(seed, "compare", 0, format!("mse_{}", mode.as_str()), m);
            Ok(m)
        })(),
    )
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

/// Anchors for the target env, cached as `anchors.txt` in `out_dir`.
pub fn anchors_for(target: &EnvSpec, out_dir: &Path) -> Result<ScoreAnchors> {
    staged(
        "anchors",
        ScoreAnchors::cached(target, out_dir.join("anchors.txt")),
    )
}

pub fn write_config_echo(cfg: &ExperimentConfig, out_dir: &Path) -> Result<String> {
    let id = run_id(cfg);
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    let text = format!(
        "# run_id={id}\n# seeds={}\n{}",
        seeds.join(","),
        cfg.to_kv_text()
    );
    fs::write(out_dir.join("config.txt"), text)?;
    Ok(id)
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run_id: String,
    pub log: MetricLog,
    pub seeds: Vec<SeedSummary>,
    /// `(mode, per-seed MSE)` when the dynamics comparison ran.
    pub mse_table: Vec<(DynMode, Vec<f64>)>,
}

impl RunReport {
    pub fn mean_score(&self) -> f64 {
        self.seeds.iter().map(|s| s.normalized_score).sum::<f64>() / self.seeds.len().max(1) as f64
    }

    pub fn mean_mse(&self, mode: DynMode) -> Option<f64> {
        self.mse_table
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|(_, v)| v.iter().sum::<f64>() / v.len().max(1) as f64)
    }
}

fn write_summary(report: &RunReport, out_dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record([
        "run_id",
        "env",
        "shift_kind",
        "shift_level",
        "seed",
        "return_mean",
        "return_std",
        "normalized_score",
        "rollout_mse",
    ])?;
    let log = &report.log;
    for s in &report.seeds {
        w.write_record([
            log.run_id.as_str(),
            &log.env,
            &log.shift_kind,
            &log.shift_level,
            &s.seed.to_string(),
            &s.return_mean.to_string(),
            &s.return_std.to_string(),
            &s.normalized_score.to_string(),
            &s.rollout_mse.map_or(String::new(), |m| m.to_string()),
        ])?;
    }
    w.flush()?;
    if !report.mse_table.is_empty() {
        let mut w = csv::Writer::from_path(out_dir.join("mse_table.csv"))?;
        w.write_record(["mode", "mse_mean", "mse_std", "seeds"])?;
        for (mode, v) in &report.mse_table {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            w.write_record([
                mode.as_str(),
                &mean.to_string(),
                &std.to_string(),
                &v.len().to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// The full pipeline for every seed. Checkpoints land in `out_dir/seed_<k>/`;
/// `config.txt`, `anchors.txt`, `metrics.csv`, `summary.csv` and, for a
/// dynamics comparison, `mse_table.csv` land in `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<RunReport> {
    let out_dir = out_dir.as_ref();
    staged("config", cfg.validate())?;
    fs::create_dir_all(out_dir)?;
    let id = write_config_echo(cfg, out_dir)?;
    let target = staged("config", cfg.target_spec())?;
    let anchors = anchors_for(&target, out_dir)?;
    let mut report = RunReport {
        run_id: id.clone(),
        log: MetricLog::new(id, &target),
        seeds: Vec::new(),
        mse_table: Vec::new(),
    };
    let mut per_mode: Vec<(DynMode, Vec<f64>)> =
        DynMode::all().iter().map(|&m| (m, vec![])).collect();
    let needs_model = cfg.policy.rollouts || cfg.compare_dynamics;

    for &seed in &cfg.seeds {
        let dir = seed_dir(out_dir, seed);
        fs::create_dir_all(&dir)?;
        let log = &mut report.log;

        let (src, trg) = generate_datasets(cfg, seed)?;
        staged("data", save_dataset(&src, dir.join("src.mbdy")))?;
        staged("data", save_dataset(&trg, dir.join("trg.mbdy")))?;
        log.push(seed, "data", 0, "src_transitions", src.len() as f64);
        log.push(seed, "data", 0, "trg_transitions", trg.len() as f64);
        log.push(seed, "data", 0, "src_reward_mean", mean_reward(&src));
        log.push(seed, "data", 0, "trg_reward_mean", mean_reward(&trg));

        let (pair, src_aug) = dara_stage(cfg, &src, &trg, seed, log)?;
        if let Some(p) = &pair {
            staged("dara", p.save(dir.join("dara.mbdc")))?;
        }

        let ens = if needs_model {
            let e = dynamics_stage(cfg, cfg.dynamics.mode, &src, &trg, seed, log)?;
            staged("dynamics", e.save(dir.join("dynamics.mbdw")))?;
            Some(e)
        } else {
            None
        };

        let agent = policy_stage(
            cfg,
            ens.as_ref(),
            &src_aug,
            &trg,
            &target,
            &anchors,
            seed,
            log,
        )?;
        staged("policy", agent.save(dir.join("agent.mbdp")))?;

        report.seeds.push(evaluate_stage(
            cfg,
            &agent,
            ens.as_ref(),
            &target,
            &anchors,
            seed,
            log,
        )?);

        if let (true, Some(main)) = (cfg.compare_dynamics, &ens) {
            for (mode, values) in per_mode.iter_mut() {
                let m = if *mode == cfg.dynamics.mode {
                    compare_mode(cfg, *mode, main, &agent, &target, seed, log)?
                } else {
                    let e = dynamics_stage(cfg, *mode, &src, &trg, seed, log)?;
                    staged(
                        "dynamics",
                        e.save(dir.join(format!("dynamics_{}.mbdw", mode.as_str()))),
                    )?;
                    compare_mode(cfg, *mode, &e, &agent, &target, seed, log)?
                };
                values.push(m);
            }
        }
    }
    if cfg.compare_dynamics {
        report.mse_table = per_mode;
    }
    staged("report", report.log.write_csv(out_dir.join("metrics.csv")))?;
    staged("report", write_summary(&report, out_dir))?;
    Ok(report)
}
