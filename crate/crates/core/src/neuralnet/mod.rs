//! Policy networks mapping `(t/T′, S_t)` to holdings in each hedging instrument.
//!
//! The feedforward variant is a ReLU stack with an identity output layer.
//! The recurrent variant inserts a GRU layer after the second hidden layer;
//! its state carries information from one trading time to the next.
//!
//! Gradients are hand-derived for the fixed episode graph (dense, ReLU, GRU,
//! PnL accounting); there is no general autodiff tape.

mod adam;
mod checkpoint;
mod episode;
mod layers;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, InitDescriptor, NamedTensor};
pub use episode::{
    activation_signature, episode_gradient, episode_loss, forward, policy_schedule, EpisodeOutcome, Objective,
};
pub use layers::{Dense, GruParams};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Feedforward,
    Recurrent,
}

/// Layer layout of a policy network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    /// State width of the GRU layer; ignored by the feedforward variant.
    pub gru_cells: usize,
    pub output_dim: usize,
}

/// Number of hidden layers that precede the GRU layer.
pub const GRU_AFTER: usize = 2;

impl NetSpec {
    /// Three hidden layers of 100 units, `instruments` outputs.
    pub fn feedforward(instruments: usize) -> Self {
        Self {
            variant: Variant::Feedforward,
            input_dim: 2,
            hidden_widths: vec![100, 100, 100],
            gru_cells: 0,
            output_dim: instruments,
        }
    }

    /// The feedforward layout with a GRU layer of `instruments` cells after hidden layer 2.
    pub fn recurrent(instruments: usize) -> Self {
        Self {
            variant: Variant::Recurrent,
            gru_cells: instruments,
            ..Self::feedforward(instruments)
        }
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.hidden_widths = widths;
        self
    }

    pub fn is_recurrent(&self) -> bool {
        self.variant == Variant::Recurrent
    }

    /// Recurrent state width (0 for the feedforward variant).
    pub fn state_dim(&self) -> usize {
        if self.is_recurrent() {
            self.gru_cells
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 2 {
            return Err(config("policy networks take exactly two inputs (t, S)"));
        }
        if self.output_dim == 0 || self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(config("network layers must be non-empty"));
        }
        if self.is_recurrent() && (self.gru_cells == 0 || self.hidden_widths.len() <= GRU_AFTER) {
            return Err(config(format!(
                "recurrent network needs GRU cells and more than {GRU_AFTER} hidden layers"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, hidden layers first, output last.
    fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim;
        for (l, &h) in self.hidden_widths.iter().enumerate() {
            if self.is_recurrent() && l == GRU_AFTER {
                width = self.gru_cells;
            }
            shapes.push((width, h));
            width = h;
        }
        shapes.push((width, self.output_dim));
        shapes
    }

    pub fn param_count(&self) -> usize {
        let dense: usize = self.dense_shapes().iter().map(|(i, o)| i * o + o).sum();
        let gru = if self.is_recurrent() {
            let (x, h) = (self.hidden_widths[GRU_AFTER - 1], self.gru_cells);
            3 * (x * h + h * h + h)
        } else {
            0
        };
        dense + gru
    }
}

/// Weights and biases of a policy network.
///
/// `dense[l]` is hidden layer `l` for `l < hidden_widths.len()` and the
/// output layer last. The GRU, when present, sits between dense layers
/// `GRU_AFTER − 1` and `GRU_AFTER`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub dense: Vec<Dense>,
    pub gru: Option<GruParams>,
}

impl NetParams {
    pub fn zeros(spec: &NetSpec) -> Self {
        let dense = spec
            .dense_shapes()
            .into_iter()
            .map(|(i, o)| Dense {
                weight: Array2::zeros((i, o)),
                bias: Array1::zeros(o),
            })
            .collect();
        let gru = spec
            .is_recurrent()
            .then(|| GruParams::zeros(spec.hidden_widths[GRU_AFTER - 1], spec.gru_cells));
        Self { dense, gru }
    }

    /// He-uniform hidden layers with zero biases; `U(±1/√fan_in)` for the
    /// output layer and for every GRU gate (fan-in = input width + state width).
    pub fn init(spec: &NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        let layers = params.dense.len();
        for (l, d) in params.dense.iter_mut().enumerate() {
            let fan_in = d.weight.nrows() as f64;
            let limit = if l + 1 == layers {
                1.0 / fan_in.sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            d.weight.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        if let Some(g) = params.gru.as_mut() {
            let k = 1.0 / ((g.w_z.nrows() + g.u_z.nrows()) as f64).sqrt();
            for t in g.tensors_mut() {
                t.iter_mut().for_each(|w| *w = rng.random_range(-k..k));
            }
        }
        params
    }

    /// Tensors in canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (l, d) in self.dense.iter().enumerate() {
            if l == GRU_AFTER {
                if let Some(g) = &self.gru {
                    out.extend(g.named_tensors());
                }
            }
            out.push((format!("dense{l}.weight"), d.weight.shape().to_vec(), slice(&d.weight)));
            out.push((format!("dense{l}.bias"), vec![d.bias.len()], d.bias.as_slice().unwrap()));
        }
        out
    }

    /// Mutable tensors in the same order as [`NetParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut gru = self.gru.as_mut();
        for (l, d) in self.dense.iter_mut().enumerate() {
            if l == GRU_AFTER {
                if let Some(g) = gru.take() {
                    out.extend(g.tensors_mut());
                }
            }
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.named_tensors()
            .into_iter()
            .flat_map(|(_, _, t)| t.iter().copied())
            .collect()
    }

    pub fn from_flat(spec: &NetSpec, flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(spec);
        if flat.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, network has {}",
                flat.len(),
                spec.param_count()
            )));
        }
        let mut offset = 0;
        for t in params.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
