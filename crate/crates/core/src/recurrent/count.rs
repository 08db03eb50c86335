use super::{CellVariant, Gate, ModelConfig};

fn gate_params(variant: CellVariant, gate: Gate, in_dim: usize, hidden: usize) -> u64 {
    let (d, h) = (in_dim as u64, hidden as u64);
    let recurrent = if variant.has_recurrence(gate) { h * h } else { 0 };
    h * d + recurrent + h
}

/// Trainable scalars in the recurrent stack alone.
pub fn count_stack_params(cfg: &ModelConfig) -> u64 {
    let gates: Vec<Gate> = Gate::ALL
        .into_iter()
        .filter(|&g| g != Gate::Forget || cfg.leak.has_forget_gate())
        .collect();
    (0..cfg.layers)
        .map(|l| {
            let d = cfg.layer_input_dim(l);
            let per_direction: u64 = gates
                .iter()
                .map(|&g| gate_params(cfg.variant, g, d, cfg.units_per_direction))
                .sum();
            per_direction * cfg.directions() as u64
        })
        .sum()
}

/// Trainable scalars of the stack, plus the affine output head when
/// `include_head` is set.
pub fn count_params(cfg: &ModelConfig, include_head: bool) -> u64 {
    let head = if include_head {
        let d = cfg.stack_output_dim() as u64;
        let o = cfg.output_dim as u64;
        d * o + o
    } else {
        0
    };
    count_stack_params(cfg) + head
}
