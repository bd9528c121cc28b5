use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, SeededRng, Tape, Var};
use crate::error::Result;

/// Fully connected network with leaky-ReLU between layers and a linear
/// output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new(params: &mut ParamSet, prefix: &str, sizes: &[usize], rng: &mut SeededRng) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = params.add_weight(format!("{prefix}.{i}.weight"), w[0], w[1], rng);
                let bias = params.add_bias(format!("{prefix}.{i}.bias"), w[0], w[1], rng);
                (weight, bias)
            })
            .collect();
        Mlp {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    /// `x` is `[n, input_dim]`; `vars` are the tape handles from
    /// [`ParamSet::bind`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let lin = tape.matmul(h, vars[w.0])?;
            h = tape.add(lin, vars[b.0])?;
            if i + 1 < self.layers.len() {
                h = tape.leaky_relu(h);
            }
        }
        Ok(h)
    }
}
