use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vpl_lab::autodiff::Checkpoint;
use vpl_lab::error::{Error, Result};
use vpl_lab::harness::*;
use vpl_lab::models::{ModelKind, RewardModel};
use vpl_lab::policy::{ScalingVariant, ZBankPolicy};
use vpl_lab::worlds::PreferenceDataset;

#[derive(Parser)]
#[command(name = "vpl-lab", version, about = "Preference learning from diverse simulated annotators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults to the world preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// World preset used when no config is given.
    #[arg(long)]
    world: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Preset budget: full or desk.
    #[arg(long, default_value = "full")]
    budget: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a context-augmented preference dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of records.
        #[arg(long)]
        n: Option<usize>,
        /// Context triples per record.
        #[arg(long)]
        ctx_n: Option<usize>,
        /// Per-user pool the contexts are drawn from.
        #[arg(long)]
        pool_k: Option<usize>,
        /// Records sharing one target, each with its own context.
        #[arg(long)]
        aug_m: Option<usize>,
    },
    /// Train a reward model and save a checkpoint.
    TrainReward {
        #[command(flatten)]
        common: Common,
        /// Dataset written by gen-data; generated from the config otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Held-out and divergent accuracy of a checkpoint.
    EvalReward {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reward: PathBuf,
    },
    /// Relabel offline walks and plan one Q-table per bank latent.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        scaling: Option<String>,
        #[arg(long)]
        zbank: Option<usize>,
    },
    /// Per-user success with fresh test contexts.
    EvalPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reward: PathBuf,
        /// Required for grid worlds.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Per-user success when the test context is a chosen query batch.
    ActiveEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Query batch sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        q: Vec<usize>,
        /// active or random; both when omitted.
        #[arg(long)]
        strategy: Option<String>,
        /// Sampled candidate batches.
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Learned rewards over the world states for each user and prior draws.
    ExportSurface {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long, default_value_t = 8)]
        prior_samples: usize,
    },
    /// Posterior means of the dataset contexts.
    ExportLatents {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reward: PathBuf,
    },
    /// Run a named experiment suite over its seeds.
    RunSuite {
        name: String,
        #[arg(long, default_value = "full")]
        budget: String,
        /// Number of seeds, starting at --seed.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Worker threads; defaults to VPL_LAB_THREADS.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Config from `--config`, else the one saved beside `reward`, else the
/// world preset; `--model` and `--seed` override.
fn resolve(common: &Common, reward: Option<&Path>) -> Result<ExperimentConfig> {
    let beside = reward.and_then(|r| r.parent()).map(|d| d.join("config.json")).filter(|p| p.exists());
    let preset = |world: &str| budget_config(world, Budget::parse(&common.budget)?);
    let mut cfg = match (&common.config, beside) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(p)) => {
            let saved = ExperimentConfig::load(&p)?;
            if let Some(w) = &common.world {
                if preset(w)?.world != saved.world {
                    return Err(Error::config(format!(
                        "--world {w} does not match the world in {}",
                        p.display()
                    )));
                }
            }
            saved
        }
        (None, None) => preset(common.world.as_deref().unwrap_or("maze2"))?,
    };
    if let Some(m) = &common.model {
        cfg.model = ModelKind::parse(m)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), body)?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

/// `--out` naming a file (it has an extension) is used as is; otherwise the
/// artifact goes into that directory under `default`.
fn artifact(out: &Path, default: &str) -> (PathBuf, String) {
    match (out.extension(), out.file_name()) {
        (Some(_), Some(name)) => (
            out.parent().map(Path::to_path_buf).unwrap_or_default(),
            name.to_string_lossy().into_owned(),
        ),
        _ => (out.to_path_buf(), default.to_string()),
    }
}

fn write_artifact(out: &Path, default: &str, body: &str) -> Result<()> {
    let (dir, name) = artifact(out, default);
    write(&dir, &name, body)
}

fn load_model(path: &Path) -> Result<RewardModel> {
    RewardModel::from_checkpoint(&Checkpoint::load(path)?)
}

fn load_policy(path: Option<&Path>) -> Result<Option<ZBankPolicy>> {
    path.map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)).transpose()
}

fn data_for(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<PreparedData> {
    match path {
        Some(p) => {
            let ds = PreferenceDataset::load(p)?;
            Ok(PreparedData::new(cfg, build_world(cfg)?, ds))
        }
        None => prepare_data(cfg),
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData {
            common: c,
            n,
            ctx_n,
            pool_k,
            aug_m,
        } => {
            let mut cfg = resolve(&c, None)?;
            let d = &mut cfg.data;
            d.n_records = n.unwrap_or(d.n_records);
            d.n = ctx_n.unwrap_or(d.n);
            d.k = pool_k.unwrap_or(d.k);
            d.m = aug_m.unwrap_or(d.m);
            cfg.validate()?;
            let (_, ds) = generate_data(&cfg)?;
            let (dir, name) = artifact(&c.out, "dataset.jsonl");
            std::fs::create_dir_all(&dir)?;
            ds.save(&dir.join(&name))?;
            println!("wrote {}", dir.join(&name).display());
            write(&dir, "config.json", &cfg.to_json())?;
            println!("{} records", ds.len());
        }
        Cmd::TrainReward { common: c, data } => {
            let cfg = resolve(&c, None)?;
            let prepared = data_for(&cfg, data.as_deref())?;
            let mut model = init_model(&cfg, prepared.world.feature_dim())?;
            write(&c.out, "config.json", &cfg.to_json())?;
            let outcome = train_reward(&cfg, &mut model, &prepared);
            // the model holds its last finite parameters either way
            model.to_checkpoint().save(&c.out.join("reward.ckpt"))?;
            let (metrics, report) = outcome?;
            write(&c.out, "train_metrics.csv", &metrics.to_csv())?;
            if let Some(h) = report.heldout {
                println!("held-out accuracy {:.4}", h.overall);
            }
        }
        Cmd::EvalReward { common: c, reward } => {
            let cfg = resolve(&c, Some(&reward))?;
            let model = load_model(&reward)?;
            let data = prepare_data(&cfg)?;
            let heldout = eval_reward_accuracy(&model, &data.heldout)?;
            let fresh = fresh_eval_records(&cfg, &data.world, 8000, &data.train)?;
            let overall = eval_reward_accuracy(&model, &fresh)?;
            let divergent = divergent_accuracy(&model, &data.world, &fresh).ok();
            let body = serde_json::json!({
                "heldout": heldout,
                "fresh": overall,
                "fresh_divergent": divergent,
                "seed": cfg.seed,
                "config_hash": cfg.hash(),
            });
            write_artifact(&c.out, "reward_accuracy.json", &serde_json::to_string_pretty(&body)?)?;
        }
        Cmd::TrainPolicy {
            common: c,
            reward,
            scaling,
            zbank,
        } => {
            let mut cfg = resolve(&c, Some(&reward))?;
            if let Some(s) = scaling {
                cfg.policy.scaling = ScalingVariant::parse(&s)?;
            }
            if let Some(z) = zbank {
                cfg.policy.zbank = z;
            }
            cfg.validate()?;
            let model = load_model(&reward)?;
            let world = build_world(&cfg)?;
            let policy = train_policy_for(&cfg, &world, &model)?;
            write_artifact(&c.out, "policy.json", &serde_json::to_string(&policy)?)?;
        }
        Cmd::EvalPolicy { common: c, reward, policy } => {
            let cfg = resolve(&c, Some(&reward))?;
            let model = load_model(&reward)?;
            let policy = load_policy(policy.as_deref())?;
            let world = build_world(&cfg)?;
            let report = eval_policy(&cfg, &world, &model, policy.as_ref())?;
            write_artifact(&c.out, "success.csv", &report.to_csv(cfg.seed))?;
            println!("mean success {:.4}", report.mean);
        }
        Cmd::ActiveEval {
            common: c,
            reward,
            policy,
            q,
            strategy,
            s,
            episodes,
        } => {
            let mut cfg = resolve(&c, Some(&reward))?;
            cfg.active.s = s.unwrap_or(cfg.active.s);
            cfg.eval.episodes = episodes.unwrap_or(cfg.eval.episodes);
            let strategies = match strategy.as_deref() {
                None => vec![QueryStrategy::Active, QueryStrategy::Random],
                Some("active") => vec![QueryStrategy::Active],
                Some("random") => vec![QueryStrategy::Random],
                Some(other) => return Err(Error::config(format!("unknown strategy {other:?}"))),
            };
            for &qi in &q {
                cfg.active.q = qi;
                cfg.validate()?;
            }
            let model = load_model(&reward)?;
            let policy = load_policy(policy.as_deref())?;
            let world = build_world(&cfg)?;
            let mut csv = String::from("strategy,q,user_id,success_rate,episodes,seed\n");
            for &qi in &q {
                for &st in &strategies {
                    let report = eval_active(&cfg, &world, &model, policy.as_ref(), qi, st)?;
                    for (u, r) in report.per_user.iter().enumerate() {
                        csv.push_str(&format!("{},{qi},{u},{r},{},{}\n", st.name(), report.episodes, cfg.seed));
                    }
                    println!("{:<6} Q={qi}  mean success {:.4}", st.name(), report.mean);
                }
            }
            write_artifact(&c.out, "active.csv", &csv)?;
        }
        Cmd::ExportSurface {
            common: c,
            reward,
            prior_samples,
        } => {
            let cfg = resolve(&c, Some(&reward))?;
            let model = load_model(&reward)?;
            let (world, ds) = generate_data(&cfg)?;
            let rows = export_reward_surface(&model, &world, &ds.records, prior_samples, &root_rng(&cfg))?;
            write_artifact(&c.out, "reward_surface.csv", &surface_csv(&rows, cfg.seed, &cfg.hash()))?;
        }
        Cmd::ExportLatents { common: c, reward } => {
            let cfg = resolve(&c, Some(&reward))?;
            let model = load_model(&reward)?;
            let (_, ds) = generate_data(&cfg)?;
            let export = export_latents(&model, &ds.records)?;
            write_artifact(&c.out, "latents.csv", &latents_csv(&export, cfg.seed, &cfg.hash()))?;
            println!("separation ratio {:.3}", export.separation);
        }
        Cmd::RunSuite {
            name,
            budget,
            seeds,
            seed,
            steps,
            episodes,
            threads,
            config,
            out,
        } => {
            let opts = SuiteOptions {
                budget: Budget::parse(&budget)?,
                seeds: seeds.map(|n| (0..n).collect()),
                seed_offset: seed,
                steps,
                episodes,
                base: config.as_deref().map(ExperimentConfig::load).transpose()?,
                threads,
            };
            let dir = suite_dir(&out, &name);
            let result = run_suite(&name, &opts, Some(&dir))?;
            for (key, s) in &result.summary {
                println!("{key:<40} {:.4} ± {:.4}", s.mean, s.stderr);
            }
        }
    }
    Ok(())
}
