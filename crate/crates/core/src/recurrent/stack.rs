use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::cell::{backward_direction, run_direction, CellParams, DirectionCache};
use super::ModelConfig;
use crate::params::{Parameters, TensorMut, TensorRef};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub forward: CellParams,
    /// Present for bidirectional stacks; runs over the time-reversed input.
    pub backward: Option<CellParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.units_per_direction;
        let a = cfg.leak.a;
        let layers = (0..cfg.layers)
            .map(|l| {
                let d = cfg.layer_input_dim(l);
                let forward = CellParams::init(cfg.variant, a, d, h, rng);
                let backward = cfg.bidirectional.then(|| CellParams::init(cfg.variant, a, d, h, rng));
                LstmLayer { forward, backward }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    forward: l.forward.zeros_like(),
                    backward: l.backward.as_ref().map(CellParams::zeros_like),
                })
                .collect(),
        }
    }

    /// Checks the stack against a configuration. The leak value may be zero
    /// for a stack trained with leakage enabled (evaluation-time override),
    /// but not the other way round.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.layers {
            return Err(Error::Shape(format!(
                "stack has {} layers, config says {}",
                self.layers.len(),
                cfg.layers
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.backward.is_some() != cfg.bidirectional {
                return Err(Error::Shape(format!("layer {l} directionality differs from config")));
            }
            for cell in std::iter::once(&layer.forward).chain(layer.backward.as_ref()) {
                cell.validate(cfg.variant, cfg.leak.a)?;
                if cell.hidden_dim() != cfg.units_per_direction || cell.input_dim() != cfg.layer_input_dim(l) {
                    return Err(Error::Shape(format!("layer {l} dimensions differ from config")));
                }
            }
        }
        Ok(())
    }
}

impl Parameters for LstmStack {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward.tensors(&format!("lstm.l{l}.fwd"), &mut out);
            if let Some(b) = &layer.backward {
                b.tensors(&format!("lstm.l{l}.bwd"), &mut out);
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let LstmLayer { forward, backward } = layer;
            forward.tensors_mut(&format!("lstm.l{l}.fwd"), &mut out);
            if let Some(b) = backward {
                b.tensors_mut(&format!("lstm.l{l}.bwd"), &mut out);
            }
        }
        out
    }
}

/// Per-layer caches; the backward-direction cache holds time-reversed rows.
#[derive(Debug, Clone)]
pub struct StackCache {
    pub layers: Vec<(DirectionCache, Option<DirectionCache>)>,
}

fn reversed(x: ArrayView2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

/// Runs the stack over `features` (`T x input_dim`). Each bidirectional
/// layer outputs `[h_forward | h_backward]` per frame, and both directions
/// use the configured leak.
pub fn blstm_forward(cfg: &ModelConfig, stack: &LstmStack, features: ArrayView2<f64>) -> Result<(Array2<f64>, StackCache)> {
    stack.validate(cfg)?;
    if features.ncols() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "features have {} columns, model expects {}",
            features.ncols(),
            cfg.input_dim
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::Data("empty feature sequence".into()));
    }
    let a = cfg.leak.a;
    let mut input = features.to_owned();
    let mut caches = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        let fwd = run_direction(&layer.forward, a, input.view(), None, None)?;
        let (out, bwd) = match &layer.backward {
            Some(bp) => {
                let bwd = run_direction(bp, a, reversed(input.view()).view(), None, None)?;
                let out = concatenate(Axis(1), &[fwd.h.view(), bwd.h.slice(s![..;-1, ..])])
                    .expect("directions share the time axis");
                (out, Some(bwd))
            }
            None => (fwd.h.clone(), None),
        };
        caches.push((fwd, bwd));
        input = out;
    }
    Ok((input, StackCache { layers: caches }))
}

/// Backpropagation through time for the whole stack. Returns parameter
/// gradients (same layout as `stack`) and the gradient on the input features.
pub fn bptt_backward(
    stack: &LstmStack,
    cache: &StackCache,
    grad_outputs: ArrayView2<f64>,
) -> Result<(LstmStack, Array2<f64>)> {
    if cache.layers.len() != stack.layers.len() {
        return Err(Error::Shape("cache depth differs from stack depth".into()));
    }
    let mut grads = Vec::with_capacity(stack.layers.len());
    let mut upstream = grad_outputs.to_owned();
    for (layer, (fwd, bwd)) in stack.layers.iter().zip(&cache.layers).rev() {
        let h = layer.forward.hidden_dim();
        let width = h * if layer.backward.is_some() { 2 } else { 1 };
        if upstream.ncols() != width || upstream.nrows() != fwd.len() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match layer output {}x{width}",
                upstream.dim(),
                fwd.len()
            )));
        }
        let gf = backward_direction(&layer.forward, fwd, upstream.slice(s![.., ..h]))?;
        let mut d_input = gf.d_input;
        let back = match (&layer.backward, bwd) {
            (Some(bp), Some(bc)) => {
                let d_rev = reversed(upstream.slice(s![.., h..]));
                let gb = backward_direction(bp, bc, d_rev.view())?;
                d_input += &gb.d_input.slice(s![..;-1, ..]);
                Some(gb.params)
            }
            (None, None) => None,
            _ => return Err(Error::Shape("cache directionality differs from stack".into())),
        };
        grads.push(LstmLayer {
            forward: gf.params,
            backward: back,
        });
        upstream = d_input;
    }
    grads.reverse();
    Ok((LstmStack { layers: grads }, upstream))
}
