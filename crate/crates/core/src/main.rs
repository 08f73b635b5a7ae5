use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mobody::dara::ClassifierPair;
use mobody::data::{load_dataset, save_dataset, TransitionDataset};
use mobody::dynamics::DynamicsEnsemble;
use mobody::eval::{
    aggregate, anchors_for, dara_stage, dynamics_stage, evaluate_stage, generate_datasets,
    policy_stage, run_experiment, run_id, write_config_echo, write_report, ExperimentConfig,
    MetricLog,
};
use mobody::policy::PolicyAgent;

#[derive(Parser)]
#[command(
    name = "mobody",
    version,
    about = "Model-based off-dynamics offline RL on desk-scale envs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key=value config file applied on top of the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect source and target datasets into OUT_DIR/{src,trg}.mbdy.
    GenData(TrainArgs),
    /// Compute (or reuse) random/expert anchors in OUT_DIR/anchors.txt.
    CalibrateAnchors {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the domain classifiers and write dara.mbdc and src_aug.mbdy.
    TrainDara(TrainArgs),
    /// Train the dynamics ensemble (config `dyn_mode`) into dynamics.mbdw.
    TrainDynamics(TrainArgs),
    /// Train the policy into agent.mbdp.
    TrainPolicy(TrainArgs),
    /// Evaluate OUT_DIR/agent.mbdp on the target env.
    Evaluate(TrainArgs),
    /// Full pipeline for the given seeds (comma separated).
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        seed: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Aggregate metrics CSVs into a summary table.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("stage `config`: reading {}", path.display()))?;
        cfg.apply_kv_text(&text).context("stage `config`")?;
    }
    for kv in &args.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("stage `config`: --set expects KEY=VALUE, got {kv:?}");
        };
        cfg.set(k.trim(), v.trim()).context("stage `config`")?;
    }
    cfg.validate().context("stage `config`")?;
    Ok(cfg)
}

/// Config with the seed list pinned to `seed`, plus a prepared output dir and metric log.
fn prepare(args: &TrainArgs) -> Result<(ExperimentConfig, MetricLog)> {
    let mut cfg = load_config(&args.cfg)?;
    cfg.seeds = vec![args.seed];
    std::fs::create_dir_all(&args.out_dir)?;
    write_config_echo(&cfg, &args.out_dir)?;
    let target = cfg.target_spec()?;
    Ok((cfg.clone(), MetricLog::new(run_id(&cfg), &target)))
}

fn load_pair(dir: &Path) -> Result<(TransitionDataset, TransitionDataset)> {
    let load = |name: &str| {
        load_dataset(dir.join(name))
            .with_context(|| format!("stage `data`: loading {name}; run gen-data first"))
    };
    Ok((load("src.mbdy")?, load("trg.mbdy")?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(args) => {
            let (cfg, _) = prepare(&args)?;
            let (src, trg) = generate_datasets(&cfg, args.seed)?;
            save_dataset(&src, args.out_dir.join("src.mbdy"))?;
            save_dataset(&trg, args.out_dir.join("trg.mbdy"))?;
            println!(
                "wrote {} source and {} target transitions",
                src.len(),
                trg.len()
            );
        }
        Cmd::CalibrateAnchors { cfg, out_dir } => {
            let cfg = load_config(&cfg)?;
            std::fs::create_dir_all(&out_dir)?;
            let a = anchors_for(&cfg.target_spec()?, &out_dir)?;
            println!(
                "{}: random {} expert {}",
                a.key, a.random_score, a.expert_score
            );
        }
        Cmd::TrainDara(args) => {
            let (cfg, mut log) = prepare(&args)?;
            let (src, trg) = load_pair(&args.out_dir)?;
            let (pair, aug) = dara_stage(&cfg, &src, &trg, args.seed, &mut log)?;
            if let Some(p) = pair {
                p.save(args.out_dir.join("dara.mbdc"))?;
            }
            save_dataset(&aug, args.out_dir.join("src_aug.mbdy"))?;
            log.write_csv(args.out_dir.join("metrics_dara.csv"))?;
        }
        Cmd::TrainDynamics(args) => {
            let (cfg, mut log) = prepare(&args)?;
            let (src, trg) = load_pair(&args.out_dir)?;
            let ens = dynamics_stage(&cfg, cfg.dynamics.mode, &src, &trg, args.seed, &mut log)?;
            ens.save(args.out_dir.join("dynamics.mbdw"))?;
            log.write_csv(args.out_dir.join("metrics_dynamics.csv"))?;
        }
        Cmd::TrainPolicy(args) => {
            let (cfg, mut log) = prepare(&args)?;
            let (src, trg) = load_pair(&args.out_dir)?;
            let aug_path = args.out_dir.join("src_aug.mbdy");
            let src_aug = if !cfg.disable_dara && aug_path.exists() {
                load_dataset(&aug_path)?
            } else {
                src
            };
            let ens = if cfg.policy.rollouts {
                Some(
                    DynamicsEnsemble::load(args.out_dir.join("dynamics.mbdw")).context(
                        "stage `policy`: loading dynamics.mbdw; run train-dynamics first",
                    )?,
                )
            } else {
                None
            };
            let target = cfg.target_spec()?;
            let anchors = anchors_for(&target, &args.out_dir)?;
            let agent = policy_stage(
                &cfg,
                ens.as_ref(),
                &src_aug,
                &trg,
                &target,
                &anchors,
                args.seed,
                &mut log,
            )?;
            agent.save(args.out_dir.join("agent.mbdp"))?;
            log.write_csv(args.out_dir.join("metrics_policy.csv"))?;
        }
        Cmd::Evaluate(args) => {
            let (cfg, mut log) = prepare(&args)?;
            let agent = PolicyAgent::load(args.out_dir.join("agent.mbdp"))
                .context("stage `evaluate`: loading agent.mbdp")?;
            let dyn_path = args.out_dir.join("dynamics.mbdw");
            let ens = if dyn_path.exists() {
                Some(DynamicsEnsemble::load(&dyn_path)?)
            } else {
                None
            };
            // classifiers are not needed here, but a corrupt file should still surface
            let dara_path = args.out_dir.join("dara.mbdc");
            if dara_path.exists() {
                ClassifierPair::load(&dara_path).context("stage `evaluate`: loading dara.mbdc")?;
            }
            let target = cfg.target_spec()?;
            let anchors = anchors_for(&target, &args.out_dir)?;
            let s = evaluate_stage(
                &cfg,
                &agent,
                ens.as_ref(),
                &target,
                &anchors,
                args.seed,
                &mut log,
            )?;
            log.write_csv(args.out_dir.join("metrics_eval.csv"))?;
            println!(
                "return {:.3} ± {:.3}, normalized score {:.2}",
                s.return_mean, s.return_std, s.normalized_score
            );
            if let Some(m) = s.rollout_mse {
                println!("rollout MSE {m:.6}");
            }
        }
        Cmd::Run { cfg, seed, out_dir } => {
            let mut cfg = load_config(&cfg)?;
            cfg.seeds = seed;
            let report = run_experiment(&cfg, &out_dir)?;
            println!("run {}", report.run_id);
            for s in &report.seeds {
                println!(
                    "seed {}: normalized score {:.2}",
                    s.seed, s.normalized_score
                );
            }
            println!("mean normalized score {:.2}", report.mean_score());
            for (mode, _) in &report.mse_table {
                println!(
                    "{mode}: rollout MSE {:.6}",
                    report.mean_mse(*mode).unwrap_or(f64::NAN)
                );
            }
        }
        Cmd::Report { metrics, out } => {
            let rows = aggregate(&metrics)?;
            match out {
                Some(path) => write_report(&rows, std::fs::File::create(path)?)?,
                None => write_report(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
