//! Reward models trained from binary preferences.
//!
//! Four flavors share one [`RewardModel`] type:
//!
//! - `btl`: a single reward MLP under the Bradley-Terry likelihood.
//! - `dpl_meanvar`: per-state Gaussian reward `(mean, log_std)` compared with
//!   a probit likelihood.
//! - `dpl_categorical`: per-state softmax over reward bins compared by the
//!   expected pairwise win probability.
//! - `vpl`: a set encoder maps a user's labeled comparisons to a Gaussian
//!   posterior over a latent `z`; a decoder scores `concat(state, z)`; the
//!   prior over `z` is learned. Trained on the evidence lower bound.

mod likelihood;
mod nn;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, CheckpointHeader, ParamId, ParamSet, SeededRng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::types::{LatentPosterior, PreferenceTriple, Record};

pub use likelihood::{
    beta_schedule, bin_centers, btl_likelihood, comparison_matrix, dpl_categorical_likelihood, dpl_meanvar_likelihood,
    kl_diag_gaussians, sample_latent, MAX_STDDEV, MIN_STDDEV,
};
pub use nn::Mlp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "btl")]
    Btl,
    #[serde(rename = "dpl_meanvar")]
    DplMeanVar,
    #[serde(rename = "dpl_categorical")]
    DplCategorical,
    #[serde(rename = "vpl")]
    Vpl,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Btl => "btl",
            ModelKind::DplMeanVar => "dpl_meanvar",
            ModelKind::DplCategorical => "dpl_categorical",
            ModelKind::Vpl => "vpl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config(format!("unknown model kind '{s}'")))
    }

    pub fn uses_context(self) -> bool {
        self == ModelKind::Vpl
    }
}

fn default_hidden() -> usize {
    256
}
fn default_latent() -> usize {
    8
}
fn default_bins() -> usize {
    10
}
fn default_r_max() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub feature_dim: usize,
    /// Width of both hidden layers of every MLP.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub r_min: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, feature_dim: usize) -> Self {
        ModelConfig {
            kind,
            feature_dim,
            hidden: default_hidden(),
            latent_dim: default_latent(),
            n_bins: default_bins(),
            r_min: 0.0,
            r_max: default_r_max(),
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_latent_dim(mut self, latent_dim: usize) -> Self {
        self.latent_dim = latent_dim;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Nets {
    Btl {
        reward: Mlp,
    },
    MeanVar {
        head: Mlp,
    },
    Categorical {
        head: Mlp,
        centers: Vec<f64>,
    },
    Vpl {
        pair_encoder: Mlp,
        head: Mlp,
        decoder: Mlp,
        prior_mean: ParamId,
        prior_log_std: ParamId,
    },
}

/// Per-state model outputs from which any pairwise likelihood follows.
#[derive(Clone, Debug, PartialEq)]
pub enum Heads {
    Scalar(Vec<f64>),
    MeanStd(Vec<(f64, f64)>),
    Bins { probs: Vec<Vec<f64>>, centers: Vec<f64> },
}

impl Heads {
    pub fn len(&self) -> usize {
        match self {
            Heads::Scalar(v) => v.len(),
            Heads::MeanStd(v) => v.len(),
            Heads::Bins { probs, .. } => probs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Probability that state `i` is preferred over state `j`.
    pub fn prefer(&self, i: usize, j: usize) -> Result<f64> {
        match self {
            Heads::Scalar(r) => btl_likelihood(r[i], r[j]),
            Heads::MeanStd(v) => dpl_meanvar_likelihood(v[i].0, v[i].1, v[j].0, v[j].1),
            Heads::Bins { probs, centers } => dpl_categorical_likelihood(&probs[i], &probs[j], centers),
        }
    }

    /// Scalar reward of state `i`: the raw reward, the Gaussian mean, or the
    /// expected bin value.
    pub fn reward(&self, i: usize) -> f64 {
        match self {
            Heads::Scalar(r) => r[i],
            Heads::MeanStd(v) => v[i].0,
            Heads::Bins { probs, centers } => probs[i].iter().zip(centers).map(|(p, c)| p * c).sum(),
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.reward(i)).collect()
    }
}

/// Loss handle plus its detached components.
pub struct LossTerms {
    pub total: Var,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    config: ModelConfig,
    params: ParamSet,
    nets: Nets,
    seed: u64,
    step: u64,
}

fn log_std_bounds() -> (f64, f64) {
    (MIN_STDDEV.ln(), MAX_STDDEV.ln())
}

fn rows_tensor<R: AsRef<[f64]>>(rows: &[R], dim: usize) -> Result<Tensor> {
    for r in rows {
        if r.as_ref().len() != dim {
            return Err(Error::shape("state features", &[dim], &[r.as_ref().len()]));
        }
    }
    if rows.is_empty() {
        return Tensor::new(vec![0, dim], Vec::new());
    }
    Tensor::from_rows(rows)
}

impl RewardModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.feature_dim == 0 || config.hidden == 0 {
            return Err(Error::config("feature_dim and hidden must be positive"));
        }
        let mut rng = SeededRng::with_stream(seed, 0x5eed);
        let mut params = ParamSet::new();
        let (d, h) = (config.feature_dim, config.hidden);
        let nets = match config.kind {
            ModelKind::Btl => Nets::Btl {
                reward: Mlp::new(&mut params, "reward", &[d, h, h, 1], &mut rng),
            },
            ModelKind::DplMeanVar => Nets::MeanVar {
                head: Mlp::new(&mut params, "meanvar", &[d, h, h, 2], &mut rng),
            },
            ModelKind::DplCategorical => {
                if config.n_bins < 2 {
                    return Err(Error::contract(format!(
                        "categorical model needs at least 2 bins, got {}",
                        config.n_bins
                    )));
                }
                Nets::Categorical {
                    head: Mlp::new(&mut params, "categorical", &[d, h, h, config.n_bins], &mut rng),
                    centers: bin_centers(config.n_bins, config.r_min, config.r_max),
                }
            }
            ModelKind::Vpl => {
                let l = config.latent_dim;
                if l == 0 {
                    return Err(Error::config("vpl needs latent_dim > 0"));
                }
                let pair_encoder = Mlp::new(&mut params, "encoder.pair", &[2 * d + 1, h, h, h], &mut rng);
                let head = Mlp::new(&mut params, "encoder.head", &[h, h, h, 2 * l], &mut rng);
                let decoder = Mlp::new(&mut params, "decoder", &[d + l, h, h, 1], &mut rng);
                let prior_mean = params.add("prior.mean", Tensor::zeros(&[l]));
                let prior_log_std = params.add("prior.log_std", Tensor::zeros(&[l]));
                Nets::Vpl {
                    pair_encoder,
                    head,
                    decoder,
                    prior_mean,
                    prior_log_std,
                }
            }
        };
        Ok(RewardModel {
            config,
            params,
            nets,
            seed,
            step: 0,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// Latent size, 0 for context-free models.
    pub fn latent_dim(&self) -> usize {
        match self.nets {
            Nets::Vpl { .. } => self.config.latent_dim,
            _ => 0,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn main_layer_sizes(&self) -> Vec<usize> {
        match &self.nets {
            Nets::Btl { reward } => reward.sizes().to_vec(),
            Nets::MeanVar { head } | Nets::Categorical { head, .. } => head.sizes().to_vec(),
            Nets::Vpl { decoder, .. } => decoder.sizes().to_vec(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                model_kind: self.kind().name().to_string(),
                layer_sizes: self.main_layer_sizes(),
                latent_dim: self.latent_dim(),
                seed: self.seed,
                step: self.step,
                blocks: self.params.layout(),
                arch: serde_json::to_value(&self.config).expect("config serializes"),
            },
            params: self.params.flatten(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ck.header.arch.clone())?;
        if config.kind.name() != ck.header.model_kind {
            return Err(Error::config(format!(
                "checkpoint kind '{}' disagrees with its architecture '{}'",
                ck.header.model_kind,
                config.kind.name()
            )));
        }
        let mut model = RewardModel::new(config, ck.header.seed)?;
        if !ck.header.blocks.is_empty() && ck.header.blocks != model.params.layout() {
            return Err(Error::config("checkpoint parameter layout does not match its architecture"));
        }
        model.params.load_flat(&ck.params)?;
        model.step = ck.header.step;
        Ok(model)
    }

    // ---- tape-level building blocks -------------------------------------

    /// Per-state head outputs on the tape. `z` must have one row per state
    /// for the latent-conditioned model and is ignored otherwise.
    fn heads_on_tape(&self, tape: &mut Tape, vars: &[Var], states: Var, z: Option<Var>) -> Result<Var> {
        match &self.nets {
            Nets::Btl { reward } => reward.forward(tape, vars, states),
            Nets::MeanVar { head } => head.forward(tape, vars, states),
            Nets::Categorical { head, .. } => {
                let logits = head.forward(tape, vars, states)?;
                Ok(tape.softmax(logits))
            }
            Nets::Vpl { decoder, .. } => {
                let z = z.ok_or_else(|| Error::contract("latent-conditioned reward needs z"))?;
                let input = tape.concat(&[states, z])?;
                decoder.forward(tape, vars, input)
            }
        }
    }

    /// Posterior `(mean, clamped log_std)` for each context set.
    fn encode_on_tape(&self, tape: &mut Tape, vars: &[Var], ctxs: &[&[PreferenceTriple]]) -> Result<(Var, Var)> {
        let Nets::Vpl { pair_encoder, head, .. } = &self.nets else {
            return Err(Error::contract("only the vpl model has a context encoder"));
        };
        let d = self.config.feature_dim;
        let mut rows = Vec::new();
        let mut sizes = Vec::with_capacity(ctxs.len());
        for ctx in ctxs {
            if ctx.is_empty() {
                return Err(Error::contract("encode_context needs a nonempty context"));
            }
            for t in ctx.iter() {
                if t.sa.len() != d || t.sb.len() != d {
                    return Err(Error::shape("encode_context", &[d], &[t.sa.len(), t.sb.len()]));
                }
                rows.push(t.encoder_input());
            }
            sizes.push(ctx.len());
        }
        let x = tape.leaf(Tensor::from_rows(&rows)?);
        let emb = pair_encoder.forward(tape, vars, x)?;
        let pooled = tape.segment_mean(emb, &sizes)?;
        let out = head.forward(tape, vars, pooled)?;
        let l = self.config.latent_dim;
        let mean = tape.slice(out, 0, l)?;
        let raw = tape.slice(out, l, 2 * l)?;
        let (lo, hi) = log_std_bounds();
        let log_std = tape.clamp(raw, lo, hi);
        Ok((mean, log_std))
    }

    /// Training loss averaged over `records`.
    ///
    /// Context-free models use Bernoulli cross-entropy on the target. The
    /// latent model draws one reparameterized `z` per record from the
    /// encoded context and adds `beta` times the KL to the learned prior.
    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        records: &[&Record],
        beta: f64,
        rng: &mut SeededRng,
    ) -> Result<LossTerms> {
        if records.is_empty() {
            return Err(Error::contract("loss over an empty batch"));
        }
        let d = self.config.feature_dim;
        let sa = tape.leaf(rows_tensor(&records.iter().map(|r| &r.target.sa).collect::<Vec<_>>(), d)?);
        let sb = tape.leaf(rows_tensor(&records.iter().map(|r| &r.target.sb).collect::<Vec<_>>(), d)?);
        let signs: Vec<f64> = records.iter().map(|r| if r.target.label { 1.0 } else { -1.0 }).collect();
        let n = records.len();
        let sign = tape.leaf(Tensor::new(vec![n, 1], signs)?);

        match &self.nets {
            Nets::Btl { .. } => {
                let ra = self.heads_on_tape(tape, vars, sa, None)?;
                let rb = self.heads_on_tape(tape, vars, sb, None)?;
                let logit = tape.sub(ra, rb)?;
                let total = signed_logit_bce(tape, logit, sign)?;
                Ok(LossTerms {
                    recon: tape.value(total).item(),
                    total,
                    kl: 0.0,
                })
            }
            Nets::MeanVar { .. } => {
                let ha = self.heads_on_tape(tape, vars, sa, None)?;
                let hb = self.heads_on_tape(tape, vars, sb, None)?;
                let (lo, hi) = log_std_bounds();
                let (ma, mb) = (tape.slice(ha, 0, 1)?, tape.slice(hb, 0, 1)?);
                let la = tape.slice(ha, 1, 2)?;
                let la = tape.clamp(la, lo, hi);
                let lb = tape.slice(hb, 1, 2)?;
                let lb = tape.clamp(lb, lo, hi);
                let la2 = tape.scale(la, 2.0);
                let va = tape.exp(la2);
                let lb2 = tape.scale(lb, 2.0);
                let vb = tape.exp(lb2);
                let var = tape.add(va, vb)?;
                let var = tape.add_scalar(var, 1e-8);
                let scale = tape.sqrt(var);
                let gap = tape.sub(ma, mb)?;
                let x = tape.div(gap, scale)?;
                let sx = tape.mul(x, sign)?;
                let p = tape.normal_cdf(sx);
                let total = clamped_nll(tape, p);
                Ok(LossTerms {
                    recon: tape.value(total).item(),
                    total,
                    kl: 0.0,
                })
            }
            Nets::Categorical { centers, .. } => {
                let pa = self.heads_on_tape(tape, vars, sa, None)?;
                let pb = self.heads_on_tape(tape, vars, sb, None)?;
                let k = centers.len();
                let m = tape.leaf(Tensor::new(vec![k, k], comparison_matrix(centers))?);
                let pam = tape.matmul(pa, m)?;
                let joint = tape.mul(pam, pb)?;
                let p = tape.sum_last(joint);
                // p(label) = sign * p + (1 - y)
                let offset: Vec<f64> = records.iter().map(|r| 1.0 - r.target.y()).collect();
                let offset = tape.leaf(Tensor::new(vec![n, 1], offset)?);
                let sp = tape.mul(p, sign)?;
                let pl = tape.add(sp, offset)?;
                let total = clamped_nll(tape, pl);
                Ok(LossTerms {
                    recon: tape.value(total).item(),
                    total,
                    kl: 0.0,
                })
            }
            Nets::Vpl {
                prior_mean,
                prior_log_std,
                ..
            } => {
                let ctxs: Vec<&[PreferenceTriple]> = records.iter().map(|r| r.ctx.as_slice()).collect();
                let (mean, log_std) = self.encode_on_tape(tape, vars, &ctxs)?;
                let l = self.config.latent_dim;
                let std = tape.exp(log_std);
                let eps = tape.leaf(Tensor::new(vec![n, l], rng.normals(n * l))?);
                let noise = tape.mul(std, eps)?;
                let z = tape.add(mean, noise)?;
                let ra = self.heads_on_tape(tape, vars, sa, Some(z))?;
                let rb = self.heads_on_tape(tape, vars, sb, Some(z))?;
                let logit = tape.sub(ra, rb)?;
                let recon = signed_logit_bce(tape, logit, sign)?;

                let (lo, hi) = log_std_bounds();
                let pm = vars[prior_mean.0];
                let pls = tape.clamp(vars[prior_log_std.0], lo, hi);
                let diff = tape.sub(mean, pm)?;
                let d2 = tape.mul(diff, diff)?;
                let s2 = tape.mul(std, std)?;
                let num = tape.add(s2, d2)?;
                let pls2 = tape.scale(pls, 2.0);
                let pvar = tape.exp(pls2);
                let den = tape.scale(pvar, 2.0);
                let quad = tape.div(num, den)?;
                let log_ratio = tape.sub(log_std, pls)?;
                let kl_elem = tape.sub(quad, log_ratio)?;
                let kl_elem = tape.add_scalar(kl_elem, -0.5);
                let kl_rows = tape.sum_last(kl_elem);
                let kl = tape.mean(kl_rows);
                let weighted = tape.scale(kl, beta);
                let total = tape.add(recon, weighted)?;
                Ok(LossTerms {
                    recon: tape.value(recon).item(),
                    kl: tape.value(kl).item(),
                    total,
                })
            }
        }
    }

    // ---- inference -------------------------------------------------------

    /// Learned prior parameters; the standard normal shape for context-free
    /// models is empty.
    pub fn prior(&self) -> LatentPosterior {
        match &self.nets {
            Nets::Vpl {
                prior_mean,
                prior_log_std,
                ..
            } => {
                let (lo, hi) = log_std_bounds();
                LatentPosterior {
                    mean: self.params.get(*prior_mean).data().to_vec(),
                    stddev: self
                        .params
                        .get(*prior_log_std)
                        .data()
                        .iter()
                        .map(|v| v.clamp(lo, hi).exp())
                        .collect(),
                }
            }
            _ => LatentPosterior::standard(0),
        }
    }

    /// Posterior for a nonempty context.
    pub fn encode_context(&self, ctx: &[PreferenceTriple]) -> Result<LatentPosterior> {
        Ok(self.encode_many(&[ctx])?.remove(0))
    }

    /// Posteriors for many contexts in one pass; empty contexts are rejected.
    pub fn encode_many(&self, ctxs: &[&[PreferenceTriple]]) -> Result<Vec<LatentPosterior>> {
        if ctxs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let (mean, log_std) = self.encode_on_tape(&mut tape, &vars, ctxs)?;
        let (m, s) = (tape.value(mean), tape.value(log_std));
        Ok((0..ctxs.len())
            .map(|i| LatentPosterior {
                mean: m.row(i).to_vec(),
                stddev: s.row(i).iter().map(|v| v.exp()).collect(),
            })
            .collect())
    }

    /// Prior for an empty context, encoder posterior otherwise.
    pub fn posterior_or_prior(&self, ctx: &[PreferenceTriple]) -> Result<LatentPosterior> {
        if ctx.is_empty() || self.kind() != ModelKind::Vpl {
            Ok(self.prior())
        } else {
            self.encode_context(ctx)
        }
    }

    /// Like [`Self::posterior_or_prior`] for many contexts at once.
    pub fn posteriors_or_prior(&self, ctxs: &[&[PreferenceTriple]]) -> Result<Vec<LatentPosterior>> {
        if self.kind() != ModelKind::Vpl {
            return Ok(vec![self.prior(); ctxs.len()]);
        }
        let nonempty: Vec<&[PreferenceTriple]> = ctxs.iter().copied().filter(|c| !c.is_empty()).collect();
        let mut encoded = self.encode_many(&nonempty)?.into_iter();
        let prior = self.prior();
        Ok(ctxs
            .iter()
            .map(|c| {
                if c.is_empty() {
                    prior.clone()
                } else {
                    encoded.next().expect("one posterior per nonempty context")
                }
            })
            .collect())
    }

    /// Head outputs for `states`, all conditioned on the same latent `z`
    /// (ignored by context-free models).
    pub fn heads<R: AsRef<[f64]>>(&self, states: &[R], z: Option<&[f64]>) -> Result<Heads> {
        let zs: Option<Vec<&[f64]>> = z.map(|z| vec![z; states.len()]);
        self.heads_per_state(states, zs.as_deref())
    }

    /// Head outputs with a separate latent for every state.
    pub fn heads_per_state<R: AsRef<[f64]>>(&self, states: &[R], zs: Option<&[&[f64]]>) -> Result<Heads> {
        let d = self.config.feature_dim;
        if states.is_empty() {
            return Ok(match &self.nets {
                Nets::MeanVar { .. } => Heads::MeanStd(Vec::new()),
                Nets::Categorical { centers, .. } => Heads::Bins {
                    probs: Vec::new(),
                    centers: centers.clone(),
                },
                _ => Heads::Scalar(Vec::new()),
            });
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.leaf(rows_tensor(states, d)?);
        let z = match (&self.nets, zs) {
            (Nets::Vpl { .. }, Some(zs)) => {
                let l = self.config.latent_dim;
                if zs.len() != states.len() {
                    return Err(Error::shape("heads", &[states.len()], &[zs.len()]));
                }
                Some(tape.leaf(rows_tensor(zs, l)?))
            }
            (Nets::Vpl { .. }, None) => return Err(Error::contract("latent-conditioned reward needs z")),
            _ => None,
        };
        let out = self.heads_on_tape(&mut tape, &vars, x, z)?;
        let t = tape.value(out);
        if !t.all_finite() {
            return Err(Error::numerical("non-finite reward head output"));
        }
        Ok(match &self.nets {
            Nets::Btl { .. } | Nets::Vpl { .. } => Heads::Scalar(t.data().to_vec()),
            Nets::MeanVar { .. } => {
                let (lo, hi) = log_std_bounds();
                Heads::MeanStd((0..t.rows()).map(|i| (t.row(i)[0], t.row(i)[1].clamp(lo, hi).exp())).collect())
            }
            Nets::Categorical { centers, .. } => Heads::Bins {
                probs: (0..t.rows()).map(|i| t.row(i).to_vec()).collect(),
                centers: centers.clone(),
            },
        })
    }

    /// Scalar rewards of `states` under latent `z`.
    pub fn rewards<R: AsRef<[f64]>>(&self, states: &[R], z: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self.heads(states, z)?.rewards())
    }

    /// Probability that `sa` is preferred over `sb` given latent `z`.
    pub fn preference(&self, sa: &[f64], sb: &[f64], z: Option<&[f64]>) -> Result<f64> {
        self.heads(&[sa, sb], z)?.prefer(0, 1)
    }

    /// `P(y = 1)` for each record's target. The latent model conditions on
    /// the posterior mean of the record's context; other models ignore it.
    pub fn predict(&self, records: &[&Record]) -> Result<Vec<f64>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let ctxs: Vec<&[PreferenceTriple]> = records.iter().map(|r| r.ctx.as_slice()).collect();
        let posts = self.posteriors_or_prior(&ctxs)?;
        self.predict_with_latents(records, &posts.iter().map(|p| p.mean.as_slice()).collect::<Vec<_>>())
    }

    /// `P(y = 1)` for each record's target under an explicit latent per record.
    pub fn predict_with_latents(&self, records: &[&Record], zs: &[&[f64]]) -> Result<Vec<f64>> {
        let mut states: Vec<&[f64]> = Vec::with_capacity(records.len() * 2);
        let mut lat: Vec<&[f64]> = Vec::with_capacity(records.len() * 2);
        for (r, z) in records.iter().zip(zs) {
            states.push(&r.target.sa);
            states.push(&r.target.sb);
            lat.push(z);
            lat.push(z);
        }
        let heads = if self.kind() == ModelKind::Vpl {
            self.heads_per_state(&states, Some(&lat))?
        } else {
            self.heads_per_state(&states, None)?
        };
        (0..records.len()).map(|i| heads.prefer(2 * i, 2 * i + 1)).collect()
    }
}

/// Mean of `-log sigmoid(sign * logit)`.
fn signed_logit_bce(tape: &mut Tape, logit: Var, sign: Var) -> Result<Var> {
    let s = tape.mul(logit, sign)?;
    let ls = tape.log_sigmoid(s);
    let m = tape.mean(ls);
    Ok(tape.neg(m))
}

/// Mean of `-log p` with `p` floored away from zero.
fn clamped_nll(tape: &mut Tape, p: Var) -> Var {
    let p = tape.clamp(p, 1e-12, 1.0);
    let lp = tape.log(p);
    let m = tape.mean(lp);
    tape.neg(m)
}

#[cfg(test)]
mod tests;
