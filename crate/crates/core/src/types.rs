//! Data types shared by the models, worlds and experiment code.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Feature vector of a single state.
pub type StateFeatures = Vec<f64>;

/// Two states and a binary preference; `label == true` means `sa` was
/// preferred. Serialized as `{sa, sb, y}` with `y` in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub sa: StateFeatures,
    pub sb: StateFeatures,
    #[serde(rename = "y", serialize_with = "label_out", deserialize_with = "label_in")]
    pub label: bool,
}

fn label_out<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn label_in<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    match u8::deserialize(d)? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
    }
}

impl PreferenceTriple {
    pub fn new(sa: StateFeatures, sb: StateFeatures, label: bool) -> Self {
        PreferenceTriple { sa, sb, label }
    }

    pub fn y(&self) -> f64 {
        if self.label {
            1.0
        } else {
            0.0
        }
    }

    pub fn flipped(&self) -> Self {
        PreferenceTriple {
            label: !self.label,
            ..self.clone()
        }
    }

    /// Pair-encoder input: `concat(sa, sb, y)`.
    pub fn encoder_input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.sa.len() * 2 + 1);
        v.extend_from_slice(&self.sa);
        v.extend_from_slice(&self.sb);
        v.push(self.y());
        v
    }
}

/// Labeled comparisons from one annotator. `annotator_id` is bookkeeping
/// and never a model input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub triples: Vec<PreferenceTriple>,
    pub annotator_id: usize,
}

/// Context set, target comparison and the annotator who labeled both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub user_id: usize,
    pub ctx: Vec<PreferenceTriple>,
    pub target: PreferenceTriple,
}

/// Diagonal Gaussian over the user latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPosterior {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl LatentPosterior {
    pub fn standard(dim: usize) -> Self {
        LatentPosterior {
            mean: vec![0.0; dim],
            stddev: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        self.stddev.iter().map(|s| c + s.ln()).sum()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let c = -0.5 * (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.stddev)
            .zip(z)
            .map(|((m, s), x)| {
                let u = (x - m) / s;
                c - s.ln() - 0.5 * u * u
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_json_uses_numeric_labels() {
        let t = PreferenceTriple::new(vec![0.5], vec![1.0], true);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"sa":[0.5],"sb":[1.0],"y":1}"#);
        let back: PreferenceTriple = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<PreferenceTriple>(r#"{"sa":[],"sb":[],"y":2}"#).is_err());
    }

    #[test]
    fn standard_entropy() {
        let p = LatentPosterior::standard(2);
        let expected = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((p.entropy() - expected).abs() < 1e-12);
    }
}
