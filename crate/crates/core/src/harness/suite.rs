//! Named experiment suites: the full pipeline over several seeds, written
//! out as CSV tables and a JSON summary of means and standard errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelKind, RewardModel};
use crate::policy::{eval_oracle, eval_random, ScalingVariant, SuccessReport};
use crate::worlds::WorldKind;

use super::config::ExperimentConfig;
use super::metrics::{summarize, MetricsRecord, Summary};
use super::pipeline::*;
use super::train::eval_reward_accuracy;

pub const SUITES: [&str; 11] = [
    "didactic",
    "maze2",
    "maze10",
    "rearrange",
    "rearrange100",
    "pets",
    "tidy",
    "noise_sweep",
    "active_sweep",
    "scaling_ablation",
    "unimodal_parity",
];

pub const THREADS_ENV: &str = "VPL_LAB_THREADS";
pub const NOISE_RATES: [f64; 4] = [0.0, 0.1, 0.25, 0.5];
/// Context lengths crossed with [`NOISE_RATES`].
pub const NOISE_CTX_LENS: [usize; 2] = [2, 8];
pub const ACTIVE_QUERIES: [usize; 4] = [1, 2, 4, 8];
const FRESH_EVAL_RECORDS: usize = 8000;

/// Training budget for a suite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// The world presets unchanged.
    #[default]
    Full,
    /// Shorter, faster-converging runs sized for one laptop core.
    Desk,
}

impl Budget {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Budget::Full),
            "desk" => Ok(Budget::Desk),
            other => Err(Error::config(format!("unknown budget {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub budget: Budget,
    /// Defaults to five seeds, three for `rearrange100`.
    pub seeds: Option<Vec<u64>>,
    /// Added to every seed.
    pub seed_offset: u64,
    pub steps: Option<u64>,
    pub episodes: Option<usize>,
    /// Replaces the preset configuration of the suite's world.
    pub base: Option<ExperimentConfig>,
    /// Worker threads; falls back to `VPL_LAB_THREADS`, then the core count.
    pub threads: Option<usize>,
}

impl SuiteOptions {
    pub fn desk() -> Self {
        SuiteOptions {
            budget: Budget::Desk,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub seeds: Vec<u64>,
    pub budget: Budget,
    /// Every per-seed observation. `metric` names the quantity and model,
    /// `key` the user (`user<i>`) or `mean`.
    pub metrics: MetricsRecord,
    /// `metric/key` summarized across seeds.
    pub summary: BTreeMap<String, Summary>,
    #[serde(skip)]
    pub files: Vec<(String, String)>,
}

impl SuiteResult {
    pub fn get(&self, metric: &str, key: &str) -> Option<Summary> {
        self.summary.get(&format!("{metric}/{key}")).copied()
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.get(metric, "mean").map(|s| s.mean)
    }

    /// Per-seed values of one metric and key, in seed order.
    pub fn values(&self, metric: &str, key: &str) -> Vec<f64> {
        self.metrics.series(metric).filter(|r| r.key == key).map(|r| r.value).collect()
    }

    pub fn summary_json(&self) -> String {
        let body = serde_json::json!({
            "suite": self.suite,
            "seeds": self.seeds,
            "budget": self.budget,
            "summary": self.summary,
        });
        serde_json::to_string_pretty(&body).expect("summary serializes")
    }

    /// Writes `metrics.csv`, `summary.json` and the per-seed tables under
    /// `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(dir, "metrics.csv", &self.metrics.to_csv())?;
        write_file(dir, "summary.json", &self.summary_json())?;
        for (name, body) in &self.files {
            write_file(dir, name, body)?;
        }
        Ok(())
    }
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))
}

/// Preset world behind each suite.
pub fn suite_world(name: &str) -> Result<&'static str> {
    Ok(match name {
        "didactic" => "didactic",
        "maze2" | "active_sweep" | "scaling_ablation" => "maze2",
        "maze10" => "maze10",
        "rearrange" => "rearrange",
        "rearrange100" => "rearrange100",
        "pets" | "noise_sweep" => "pets",
        "tidy" => "tidy",
        "unimodal_parity" => "maze2_single",
        other => return Err(Error::config(format!("unknown suite {other:?}; expected one of {SUITES:?}"))),
    })
}

pub fn default_seeds(name: &str) -> Vec<u64> {
    if name == "rearrange100" {
        (0..3).collect()
    } else {
        (0..5).collect()
    }
}

/// Preset configuration for `world` under `budget`.
pub fn budget_config(world: &str, budget: Budget) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::for_world(world)?;
    if budget == Budget::Desk {
        cfg.train.learning_rate = 1e-3;
        cfg.train.steps = match cfg.world.kind() {
            WorldKind::DidacticGaussians => {
                cfg.train.learning_rate = 3e-3;
                cfg.train.batch_size = 128;
                3000
            }
            WorldKind::PetsLike => 2000,
            WorldKind::Maze if world == "maze10" => {
                // at weight 1 ten users need about four times the steps to separate
                cfg.train.beta_max = 0.1;
                2000
            }
            WorldKind::Rearrange => 3000,
            _ => 1000,
        };
    }
    cfg.train.log_every = (cfg.train.steps / 10).max(1);
    Ok(cfg)
}

pub fn thread_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1)
}

type SeedResult = std::result::Result<SeedOutput, (String, Error)>;

/// What one seed contributes.
#[derive(Default)]
struct SeedOutput {
    metrics: MetricsRecord,
    files: Vec<(String, String)>,
    /// Pipeline stage currently running, for failure reports.
    stage: String,
}

impl SeedOutput {
    fn push(&mut self, metric: &str, key: impl ToString, value: f64, cfg: &ExperimentConfig) {
        self.metrics.push(metric, key, value, cfg.seed, &cfg.hash());
    }

    fn push_success(&mut self, metric: &str, report: &SuccessReport, cfg: &ExperimentConfig) {
        for (u, v) in report.per_user.iter().enumerate() {
            self.push(metric, format!("user{u}"), *v, cfg);
        }
        self.push(metric, "mean", report.mean, cfg);
        let file = format!("{}_seed{}.csv", metric.replace('/', "_"), cfg.seed);
        self.files.push((file, report.to_csv(cfg.seed)));
    }

    fn push_curve(&mut self, label: &str, curve: &MetricsRecord, cfg: &ExperimentConfig) {
        let label = label.replace('/', "_");
        self.files.push((format!("train_{label}_seed{}.csv", cfg.seed), curve.to_csv()));
    }
}

struct Fitted {
    cfg: ExperimentConfig,
    data: PreparedData,
    model: RewardModel,
}

fn fit(cfg: &ExperimentConfig, out: &mut SeedOutput) -> Result<Fitted> {
    fit_labeled(cfg, cfg.model.name(), out)
}

fn fit_labeled(cfg: &ExperimentConfig, label: &str, out: &mut SeedOutput) -> Result<Fitted> {
    out.stage = format!("gen-data/{label}");
    let data = prepare_data(cfg)?;
    out.stage = format!("train-reward/{label}");
    let mut model = init_model(cfg, data.world.feature_dim())?;
    let (curve, report) = train_reward(cfg, &mut model, &data)?;
    out.push_curve(label, &curve, cfg);
    if let Some(h) = &report.heldout {
        out.push(&format!("heldout_accuracy/{label}"), "mean", h.overall, cfg);
    }
    Ok(Fitted {
        cfg: cfg.clone(),
        data,
        model,
    })
}

fn policy_success(f: &Fitted, metric: &str, out: &mut SeedOutput) -> Result<SuccessReport> {
    out.stage = format!("train-policy/{metric}");
    let policy = match f.data.world.grid() {
        Some(_) => Some(train_policy_for(&f.cfg, &f.data.world, &f.model)?),
        None => None,
    };
    out.stage = format!("eval-policy/{metric}");
    let report = eval_policy(&f.cfg, &f.data.world, &f.model, policy.as_ref())?;
    out.push_success(metric, &report, &f.cfg);
    Ok(report)
}

fn fresh_accuracy(f: &Fitted, metric: &str, divergent_only: bool, out: &mut SeedOutput) -> Result<()> {
    out.stage = format!("eval-reward/{metric}");
    let records = fresh_eval_records(&f.cfg, &f.data.world, FRESH_EVAL_RECORDS, &f.data.train)?;
    let acc = if divergent_only {
        divergent_accuracy(&f.model, &f.data.world, &records)?
    } else {
        eval_reward_accuracy(&f.model, &records)?
    };
    out.push(metric, "mean", acc.overall, &f.cfg);
    Ok(())
}

const COMPARED: [ModelKind; 2] = [ModelKind::Vpl, ModelKind::Btl];

fn run_seed(name: &str, base: &ExperimentConfig) -> SeedResult {
    let mut out = SeedOutput::default();
    match seed_stages(name, base, &mut out) {
        Ok(()) => Ok(out),
        Err(e) => Err((out.stage, e)),
    }
}

fn seed_stages(name: &str, base: &ExperimentConfig, out: &mut SeedOutput) -> Result<()> {
    match name {
        "didactic" => {
            for kind in COMPARED {
                let f = fit(&base.clone().with_model(kind), out)?;
                out.stage = format!("export-surface/{}", kind.name());
                let corr = user_correlations(&f.model, &f.data.world, &f.data.dataset.records)?;
                let metric = format!("correlation/{}", kind.name());
                for (u, c) in corr.iter().enumerate() {
                    out.push(&metric, format!("user{u}"), *c, &f.cfg);
                }
                out.push(&metric, "min", corr.iter().copied().fold(f64::INFINITY, f64::min), &f.cfg);
                let above = corr.iter().filter(|c| **c >= 0.9).count();
                out.push(&format!("users_above_0.9/{}", kind.name()), "mean", above as f64, &f.cfg);
                let rows = export_reward_surface(&f.model, &f.data.world, &f.data.dataset.records, 4, &root_rng(&f.cfg))?;
                out.files.push((
                    format!("surface_{}_seed{}.csv", kind.name(), f.cfg.seed),
                    surface_csv(&rows, f.cfg.seed, &f.cfg.hash()),
                ));
            }
        }
        "maze2" | "maze10" => {
            for kind in COMPARED {
                let f = fit(&base.clone().with_model(kind), out)?;
                policy_success(&f, &format!("success/{}", kind.name()), out)?;
            }
            out.stage = "eval-policy/oracle".to_string();
            let world = build_world(base)?;
            let oracle = eval_oracle(&world, base.eval.episodes, &eval_rng(base))?;
            out.push_success("success/oracle", &oracle, base);
            let random = eval_random(&world, base.eval.episodes, &eval_rng(base))?;
            out.push_success("success/random", &random, base);
        }
        "rearrange" | "rearrange100" | "tidy" => {
            for kind in COMPARED {
                let f = fit(&base.clone().with_model(kind), out)?;
                policy_success(&f, &format!("top1/{}", kind.name()), out)?;
            }
        }
        "pets" => {
            for kind in [ModelKind::Vpl, ModelKind::Btl, ModelKind::DplMeanVar, ModelKind::DplCategorical] {
                let f = fit(&base.clone().with_model(kind), out)?;
                fresh_accuracy(&f, &format!("divergent_accuracy/{}", kind.name()), true, out)?;
            }
        }
        "noise_sweep" => {
            for n in NOISE_CTX_LENS {
                for rate in NOISE_RATES {
                    let mut cfg = base.clone();
                    cfg.data.n = n;
                    cfg.data.noise_rate = rate;
                    for kind in COMPARED {
                        let label = format!("{}/noise{rate}/n{n}", kind.name());
                        let f = fit_labeled(&cfg.clone().with_model(kind), &label, out)?;
                        fresh_accuracy(&f, &format!("divergent_accuracy/{label}"), true, out)?;
                    }
                }
            }
        }
        "active_sweep" => {
            let f = fit(&base.clone().with_model(ModelKind::Vpl), out)?;
            out.stage = "train-policy/vpl".to_string();
            let policy = train_policy_for(&f.cfg, &f.data.world, &f.model)?;
            for q in ACTIVE_QUERIES {
                for strategy in [QueryStrategy::Active, QueryStrategy::Random] {
                    out.stage = format!("active-eval/{}/q{q}", strategy.name());
                    let report = eval_active(&f.cfg, &f.data.world, &f.model, Some(&policy), q, strategy)?;
                    out.push_success(&format!("success/{}/q{q}", strategy.name()), &report, &f.cfg);
                }
            }
        }
        "scaling_ablation" => {
            let mut f = fit(&base.clone().with_model(ModelKind::Vpl), out)?;
            for variant in ScalingVariant::ALL {
                f.cfg.policy.scaling = variant;
                policy_success(&f, &format!("success/{}", variant.name()), out)?;
            }
        }
        "unimodal_parity" => {
            for kind in COMPARED {
                let f = fit(&base.clone().with_model(kind), out)?;
                fresh_accuracy(&f, &format!("accuracy/{}", kind.name()), false, out)?;
            }
        }
        other => return Err(Error::config(format!("unknown suite {other:?}"))),
    }
    Ok(())
}

/// Configuration used for `seed` of suite `name`.
pub fn suite_config(name: &str, opts: &SuiteOptions, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = match &opts.base {
        Some(c) => c.clone(),
        None => budget_config(suite_world(name)?, opts.budget)?,
    };
    if let Some(steps) = opts.steps {
        cfg.train.steps = steps;
        cfg.train.log_every = (steps / 10).max(1);
    }
    if let Some(e) = opts.episodes {
        cfg.eval.episodes = e;
    }
    cfg.seed = seed + opts.seed_offset;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PartialManifest<'a> {
    suite: &'a str,
    completed_seeds: Vec<u64>,
    failed_seed: u64,
    failed_stage: String,
    error: String,
    exit_code: i32,
}

/// Runs suite `name` over its seeds. Seeds run on up to
/// [`thread_count`] workers; results are merged in seed order, so the output
/// does not depend on the thread count.
///
/// With `out` set, the tables are written there. If a seed fails, the
/// completed seeds and a `partial_manifest.json` naming the failure are
/// written before the error is returned.
pub fn run_suite(name: &str, opts: &SuiteOptions, out: Option<&Path>) -> Result<SuiteResult> {
    suite_world(name)?;
    let seeds: Vec<u64> = opts.seeds.clone().unwrap_or_else(|| default_seeds(name));
    if seeds.is_empty() {
        return Err(Error::config("a suite needs at least one seed"));
    }
    let configs = seeds
        .iter()
        .map(|&s| suite_config(name, opts, s))
        .collect::<Result<Vec<_>>>()?;
    let slots: Vec<Mutex<Option<SeedResult>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = thread_count(opts.threads).min(configs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let r = run_seed(name, &configs[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let mut result = SuiteResult {
        suite: name.to_string(),
        seeds: configs.iter().map(|c| c.seed).collect(),
        budget: opts.budget,
        metrics: MetricsRecord::new(),
        summary: BTreeMap::new(),
        files: Vec::new(),
    };
    let mut failure = None;
    for (cfg, slot) in configs.iter().zip(slots) {
        match slot.into_inner().expect("slot lock").expect("every seed ran") {
            Ok(seed_out) => {
                result.metrics.extend(&seed_out.metrics);
                result.files.extend(seed_out.files);
            }
            Err((stage, e)) => {
                if failure.is_none() {
                    failure = Some((cfg.seed, stage, e));
                }
            }
        }
    }
    result.files.push(("config.json".into(), configs[0].to_json()));
    result.summary = summarize_rows(&result.metrics);
    if let Some((seed, stage, err)) = failure {
        if let Some(dir) = out {
            let done: Vec<u64> = result.metrics.rows().iter().map(|r| r.seed).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            result.write(dir)?;
            let manifest = PartialManifest {
                suite: name,
                completed_seeds: done,
                failed_seed: seed,
                failed_stage: stage,
                error: err.to_string(),
                exit_code: err.exit_code(),
            };
            write_file(
                dir,
                "partial_manifest.json",
                &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
            )?;
        }
        return Err(err);
    }
    if let Some(dir) = out {
        result.write(dir)?;
    }
    Ok(result)
}

fn summarize_rows(metrics: &MetricsRecord) -> BTreeMap<String, Summary> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in metrics.rows() {
        groups.entry(format!("{}/{}", r.metric, r.key)).or_default().push(r.value);
    }
    groups.into_iter().map(|(k, v)| (k, summarize(&v))).collect()
}

/// Default output directory for a suite under `root`.
pub fn suite_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str) -> SuiteOptions {
        SuiteOptions {
            budget: Budget::Desk,
            seeds: Some(vec![0, 1]),
            steps: Some(20),
            episodes: Some(3),
            threads: Some(2),
            ..SuiteOptions::default()
        }
        .with_small_data(name)
    }

    impl SuiteOptions {
        fn with_small_data(mut self, name: &str) -> Self {
            let mut cfg = budget_config(suite_world(name).unwrap(), Budget::Desk).unwrap();
            cfg.data.n_records = 300;
            cfg.hidden = 8;
            cfg.policy.zbank = 4;
            cfg.policy.walks = 10;
            cfg.policy.comparison_size = 20;
            cfg.active.s = 3;
            cfg.active.pool_size = 6;
            cfg.active.mc_samples = 64;
            self.base = Some(cfg);
            self
        }
    }

    #[test]
    fn every_suite_maps_to_a_world() {
        for name in SUITES {
            assert!(budget_config(suite_world(name).unwrap(), Budget::Desk).is_ok(), "{name}");
        }
        assert!(matches!(suite_world("nope"), Err(Error::Config(_))));
        assert_eq!(default_seeds("rearrange100").len(), 3);
        assert_eq!(default_seeds("maze2").len(), 5);
    }

    #[test]
    fn results_do_not_depend_on_the_thread_count() {
        let mut one = tiny("maze2");
        one.threads = Some(1);
        let a = run_suite("maze2", &one, None).unwrap();
        let b = run_suite("maze2", &tiny("maze2"), None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.seeds, vec![0, 1]);
        assert_eq!(a.get("success/oracle", "mean").unwrap().mean, 1.0);
    }

    #[test]
    fn tables_and_summary_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_suite("scaling_ablation", &tiny("scaling_ablation"), Some(dir.path())).unwrap();
        for v in ScalingVariant::ALL {
            assert_eq!(r.values(&format!("success/{}", v.name()), "mean").len(), 2);
        }
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["suite"], "scaling_ablation");
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("success_spo_seed1.csv").exists());
    }

    #[test]
    fn a_failing_seed_leaves_a_partial_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = tiny("pets");
        opts.base.as_mut().unwrap().train.learning_rate = 1e200;
        let err = run_suite("pets", &opts, Some(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("partial_manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["failed_seed"], 0);
        assert_eq!(manifest["failed_stage"], "train-reward/vpl");
        assert_eq!(manifest["exit_code"], 3);
    }
}
