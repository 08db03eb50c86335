//! Leaky LSTM cells, bidirectional stacks and exact backpropagation through time.
//!
//! A leaky cell scales the forget gate by a constant `a` in `[0, 1]`:
//!
//! ```text
//! c_t = a * f_t ⊙ c_{t-1} + i_t ⊙ j_t
//! h_t = tanh(c_t) ⊙ o_t
//! ```
//!
//! With the forget gate fully open, a value stored at time `t - T` survives
//! as `a^T`, i.e. it decays with lifetime `tau = -hop / ln(a)`.
//!
//! Two wiring variants remove recurrent paths that would let temporal
//! information bypass the leak: [`CellVariant::RedCut`] drops the recurrent
//! weights of the input gate and the candidate, [`CellVariant::BlueCut`]
//! additionally drops those of the forget and output gates, so `h_{t-1}` is
//! never read. With `a = 0` the forget gate has no effect and its parameters
//! are not allocated.

mod cell;
mod count;
mod leak;
mod linear;
mod stack;

use serde::{Deserialize, Serialize};

pub use cell::{
    backward_direction, cell_forward, run_direction, CellParams, DirectionCache, DirectionGrads,
    Gate, GateOverride, GateParams, LayerState, StepCache,
};
pub use count::{count_params, count_stack_params};
pub use leak::{leak_to_lifetime, lifetime_to_leak};
pub use linear::Linear;
pub use stack::{blstm_forward, bptt_backward, LstmLayer, LstmStack, StackCache};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellVariant {
    Basic,
    RedCut,
    BlueCut,
}

impl CellVariant {
    pub const ALL: [CellVariant; 3] = [CellVariant::Basic, CellVariant::RedCut, CellVariant::BlueCut];

    /// Whether `gate` reads the previous output `h_{t-1}` under this wiring.
    pub fn has_recurrence(self, gate: Gate) -> bool {
        match self {
            CellVariant::Basic => true,
            CellVariant::RedCut => matches!(gate, Gate::Forget | Gate::Output),
            CellVariant::BlueCut => false,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellVariant::Basic => "basic",
            CellVariant::RedCut => "red_cut",
            CellVariant::BlueCut => "blue_cut",
        }
    }
}

impl std::fmt::Display for CellVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CellVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(CellVariant::Basic),
            "red_cut" => Ok(CellVariant::RedCut),
            "blue_cut" => Ok(CellVariant::BlueCut),
            other => Err(Error::Config(format!("unknown cell variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakConfig {
    pub a: f64,
    /// Frame hop in seconds, for converting `a` to a lifetime.
    pub hop_seconds: f64,
}

impl Default for LeakConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            hop_seconds: 0.008,
        }
    }
}

impl LeakConfig {
    pub fn lifetime_seconds(&self) -> f64 {
        leak_to_lifetime(self.a, self.hop_seconds)
    }

    /// Whether the forget-gate parameter group is allocated.
    pub fn has_forget_gate(&self) -> bool {
        self.a > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub layers: usize,
    pub units_per_direction: usize,
    pub bidirectional: bool,
    pub variant: CellVariant,
    pub leak: LeakConfig,
    /// Width of the linear head on top of the stack.
    pub output_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.layers == 0 || self.units_per_direction == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.leak.a) {
            return Err(Error::Config(format!("leak a={} outside [0, 1]", self.leak.a)));
        }
        if !(self.leak.hop_seconds > 0.0) {
            return Err(Error::Config("leak hop_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of each layer's output (and of the head's input).
    pub fn stack_output_dim(&self) -> usize {
        self.units_per_direction * self.directions()
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.stack_output_dim()
        }
    }

    /// The full-scale separation network: 129 log-magnitude bins in, two
    /// bidirectional layers of 600 units, 20-dimensional embeddings per bin.
    pub fn large_preset(variant: CellVariant, a: f64) -> Self {
        Self {
            input_dim: 129,
            layers: 2,
            units_per_direction: 600,
            bidirectional: true,
            variant,
            leak: LeakConfig { a, hop_seconds: 0.008 },
            output_dim: 20 * 129,
        }
    }
}
