use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, SeededRng, Tape};
use crate::error::{Error, Result};
use crate::models::{beta_schedule, ModelKind, RewardModel};
use crate::types::Record;

use super::metrics::MetricsRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta_max: f64,
    pub log_every: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 20_000,
            batch_size: 256,
            learning_rate: 3e-4,
            beta_max: 1.0,
            log_every: 100,
        }
    }
}

/// Overall and per-user preference accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    pub per_user: BTreeMap<usize, f64>,
    pub n: usize,
}

/// 1 for a correct side of 0.5, 0.5 for an exact tie.
pub fn score_prediction(p: f64, label: bool) -> f64 {
    if p == 0.5 {
        0.5
    } else if (p > 0.5) == label {
        1.0
    } else {
        0.0
    }
}

pub fn accuracy_from_predictions(records: &[&Record], probs: &[f64]) -> AccuracyReport {
    let mut per: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for (r, p) in records.iter().zip(probs) {
        let s = score_prediction(*p, r.target.label);
        total += s;
        let e = per.entry(r.user_id).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    AccuracyReport {
        overall: if records.is_empty() { f64::NAN } else { total / records.len() as f64 },
        per_user: per.into_iter().map(|(u, (s, n))| (u, s / n as f64)).collect(),
        n: records.len(),
    }
}

/// Held-out preference accuracy; context-free models ignore each record's
/// context.
pub fn eval_reward_accuracy(model: &RewardModel, records: &[Record]) -> Result<AccuracyReport> {
    let refs: Vec<&Record> = records.iter().collect();
    let mut probs = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(512) {
        probs.extend(model.predict(chunk)?);
    }
    Ok(accuracy_from_predictions(&refs, &probs))
}

fn target_key(r: &Record) -> String {
    serde_json::to_string(&r.target).expect("triples serialize")
}

/// Splits records into train and held-out index sets by target, so every
/// augmented copy of a target lands on the same side. About `fraction` of
/// each user's distinct targets are held out.
pub fn split_by_target(records: &[Record], fraction: f64, rng: &SeededRng) -> (Vec<usize>, Vec<usize>) {
    let mut by_user: BTreeMap<usize, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(r.user_id).or_default().entry(target_key(r)).or_default().push(i);
    }
    let mut held = Vec::new();
    for (user, targets) in by_user {
        let mut groups: Vec<Vec<usize>> = targets.into_values().collect();
        groups.sort();
        let mut g = rng.fork(user as u64);
        g.shuffle(&mut groups);
        let take = (groups.len() as f64 * fraction).round() as usize;
        held.extend(groups.into_iter().take(take).flatten());
    }
    held.sort_unstable();
    let mut is_held = vec![false; records.len()];
    for &i in &held {
        is_held[i] = true;
    }
    let train = (0..records.len()).filter(|&i| !is_held[i]).collect();
    (train, held)
}

/// What a training run leaves behind besides the updated model.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub final_train_loss: f64,
    /// Lowest logged training loss.
    pub best_train_loss: f64,
    /// Lowest logged preference cross-entropy, without the KL term.
    pub best_recon_loss: f64,
    pub heldout: Option<AccuracyReport>,
}

/// Adam on the model's loss. Batches are drawn with replacement; the
/// latent model's KL weight follows [`beta_schedule`]. Every `log_every`
/// steps the mean training loss, KL term and held-out accuracy are appended
/// to `metrics`.
///
/// A non-finite loss or gradient aborts with a numerical error and leaves
/// `model` at its last finite parameters.
pub fn train_model(
    model: &mut RewardModel,
    train: &[Record],
    heldout: &[Record],
    settings: &TrainSettings,
    rng: &SeededRng,
    metrics: &mut MetricsRecord,
    config_hash: &str,
) -> Result<TrainReport> {
    if train.is_empty() && settings.steps > 0 {
        return Err(Error::config("no training records"));
    }
    let seed = rng.seed();
    let mut adam = Adam::new(settings.learning_rate);
    let mut batch_rng = rng.fork(1);
    let mut latent_rng = rng.fork(2);
    let batch = settings.batch_size.max(1);
    let log_every = settings.log_every.max(1);
    let (mut window_loss, mut window_recon, mut window_kl, mut window_n) = (0.0, 0.0, 0.0, 0usize);
    let mut report = TrainReport {
        final_train_loss: f64::NAN,
        best_train_loss: f64::INFINITY,
        best_recon_loss: f64::INFINITY,
        heldout: None,
    };
    for step in 0..settings.steps {
        let beta = if model.kind() == ModelKind::Vpl {
            beta_schedule(step, settings.steps, settings.beta_max)?
        } else {
            0.0
        };
        let records: Vec<&Record> = (0..batch).map(|_| &train[batch_rng.below(train.len())]).collect();
        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape);
        let terms = model.loss(&mut tape, &vars, &records, beta, &mut latent_rng)?;
        let loss = tape.value(terms.total).item();
        if !loss.is_finite() {
            return Err(Error::numerical(format!("non-finite loss {loss} at step {step}")));
        }
        let grads = tape.backward(terms.total)?;
        let grads: Vec<_> = vars.iter().map(|v| grads.wrt(*v)).collect();
        adam.step(model.params_mut(), &grads)?;
        model.set_step(model.step() + 1);

        window_loss += loss;
        window_recon += terms.recon;
        window_kl += terms.kl;
        window_n += 1;
        let done = step + 1 == settings.steps;
        if (step + 1) % log_every == 0 || done {
            let mean_loss = window_loss / window_n as f64;
            let mean_recon = window_recon / window_n as f64;
            metrics.push("train_loss", step + 1, mean_loss, seed, config_hash);
            metrics.push("recon_loss", step + 1, mean_recon, seed, config_hash);
            metrics.push("kl_term", step + 1, window_kl / window_n as f64, seed, config_hash);
            if !heldout.is_empty() {
                let acc = eval_reward_accuracy(model, heldout)?;
                metrics.push("eval_accuracy", step + 1, acc.overall, seed, config_hash);
                report.heldout = Some(acc);
            }
            report.best_train_loss = report.best_train_loss.min(mean_loss);
            report.best_recon_loss = report.best_recon_loss.min(mean_recon);
            report.final_train_loss = mean_loss;
            (window_loss, window_recon, window_kl, window_n) = (0.0, 0.0, 0.0, 0);
        }
    }
    if let Some(acc) = &report.heldout {
        for (u, a) in &acc.per_user {
            metrics.push("per_user_accuracy", u, *a, seed, config_hash);
        }
    }
    Ok(report)
}
