use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::CellVariant;
use crate::params::{standard, TensorMut, TensorRef};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Forget,
    Input,
    Output,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Candidate];

    pub fn key(self) -> &'static str {
        match self {
            Gate::Forget => "forget",
            Gate::Input => "input",
            Gate::Output => "output",
            Gate::Candidate => "candidate",
        }
    }
}

/// Weights of one gate: input weights `w` (H x in), optional recurrent
/// weights `r` (H x H) and bias `b` (H).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w: Array2<f64>,
    pub r: Option<Array2<f64>>,
    pub b: Array1<f64>,
}

impl GateParams {
    fn init<R: Rng>(in_dim: usize, hidden: usize, recurrent: bool, bias: f64, rng: &mut R) -> Self {
        let fan_in = in_dim + if recurrent { hidden } else { 0 };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut uniform = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound));
        let w = uniform((hidden, in_dim));
        let r = recurrent.then(|| uniform((hidden, hidden)));
        Self {
            w,
            r,
            b: Array1::from_elem(hidden, bias),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            r: self.r.as_ref().map(|r| Array2::zeros(r.dim())),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.r.as_ref().map_or(0, |r| r.len()) + self.b.len()
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef::matrix(format!("{prefix}.w"), &self.w));
        if let Some(r) = &self.r {
            out.push(TensorRef::matrix(format!("{prefix}.r"), r));
        }
        out.push(TensorRef::vector(format!("{prefix}.b"), &self.b));
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        let GateParams { w, r, b } = self;
        out.push(TensorMut::matrix(format!("{prefix}.w"), w));
        if let Some(r) = r {
            out.push(TensorMut::matrix(format!("{prefix}.r"), r));
        }
        out.push(TensorMut::vector(format!("{prefix}.b"), b));
    }
}

/// Trainable parameters of one direction of one leaky LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    /// Absent when the cell was built with `a = 0`.
    pub forget: Option<GateParams>,
    pub input: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

impl CellParams {
    /// Uniform `±1/sqrt(fan_in)` weights; the forget bias starts at +1.
    pub fn init<R: Rng>(variant: CellVariant, a: f64, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let forget = (a > 0.0)
            .then(|| GateParams::init(in_dim, hidden, variant.has_recurrence(Gate::Forget), 1.0, rng));
        let input = GateParams::init(in_dim, hidden, variant.has_recurrence(Gate::Input), 0.0, rng);
        let output = GateParams::init(in_dim, hidden, variant.has_recurrence(Gate::Output), 0.0, rng);
        let candidate = GateParams::init(in_dim, hidden, variant.has_recurrence(Gate::Candidate), 0.0, rng);
        Self {
            forget,
            input,
            output,
            candidate,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            forget: self.forget.as_ref().map(GateParams::zeros_like),
            input: self.input.zeros_like(),
            output: self.output.zeros_like(),
            candidate: self.candidate.zeros_like(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input.w.ncols()
    }

    pub fn gate(&self, gate: Gate) -> Option<&GateParams> {
        match gate {
            Gate::Forget => self.forget.as_ref(),
            Gate::Input => Some(&self.input),
            Gate::Output => Some(&self.output),
            Gate::Candidate => Some(&self.candidate),
        }
    }

    pub fn num_params(&self) -> usize {
        Gate::ALL
            .iter()
            .filter_map(|&g| self.gate(g))
            .map(GateParams::num_params)
            .sum()
    }

    /// Checks shapes and that recurrent weights are present exactly where
    /// the variant keeps them. A missing forget gate requires `a = 0`.
    pub fn validate(&self, variant: CellVariant, a: f64) -> Result<()> {
        let (h, d) = (self.hidden_dim(), self.input_dim());
        if a > 0.0 && self.forget.is_none() {
            return Err(Error::Shape(format!(
                "leak a={a} needs a forget gate but the cell has none"
            )));
        }
        for gate in Gate::ALL {
            let Some(p) = self.gate(gate) else { continue };
            if p.w.dim() != (h, d) || p.b.len() != h {
                return Err(Error::Shape(format!(
                    "{} gate weights {:?}/{} do not match H={h}, in={d}",
                    gate.key(),
                    p.w.dim(),
                    p.b.len()
                )));
            }
            match (&p.r, variant.has_recurrence(gate)) {
                (Some(r), true) if r.dim() == (h, h) => {}
                (None, false) => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "{} gate recurrent weights inconsistent with {variant} wiring",
                        gate.key()
                    )))
                }
            }
        }
        Ok(())
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        if let Some(f) = &self.forget {
            f.tensors(&format!("{prefix}.forget"), out);
        }
        self.input.tensors(&format!("{prefix}.input"), out);
        self.output.tensors(&format!("{prefix}.output"), out);
        self.candidate.tensors(&format!("{prefix}.candidate"), out);
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        let CellParams {
            forget,
            input,
            output,
            candidate,
        } = self;
        if let Some(f) = forget {
            f.tensors_mut(&format!("{prefix}.forget"), out);
        }
        input.tensors_mut(&format!("{prefix}.input"), out);
        output.tensors_mut(&format!("{prefix}.output"), out);
        candidate.tensors_mut(&format!("{prefix}.candidate"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LayerState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

/// Test hook: pins gate activations to fixed values. Pinned gates are
/// treated as constants by the backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GateOverride {
    pub forget: Option<f64>,
    pub input: Option<f64>,
    pub output: Option<f64>,
    pub candidate: Option<f64>,
}

/// Activations of a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    /// Empty when the cell has no forget gate.
    pub f: Array1<f64>,
    pub i: Array1<f64>,
    pub o: Array1<f64>,
    pub j: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Input contribution `W x + b` of one gate, summed left to right.
fn input_preactivation(p: &GateParams, x: &[f64]) -> Vec<f64> {
    p.w.rows()
        .into_iter()
        .zip(&p.b)
        .map(|(row, b)| dot(row.as_slice().expect("standard layout"), x) + b)
        .collect()
}

struct StepRows<'a> {
    f: &'a mut [f64],
    i: &'a mut [f64],
    o: &'a mut [f64],
    j: &'a mut [f64],
    c: &'a mut [f64],
    tc: &'a mut [f64],
    h: &'a mut [f64],
}

/// One recurrence step given the input pre-activations of each gate.
#[allow(clippy::too_many_arguments)]
fn step(
    params: &CellParams,
    a: f64,
    zf: Option<&[f64]>,
    zi: &[f64],
    zo: &[f64],
    zj: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    ov: &GateOverride,
    out: StepRows<'_>,
) -> Result<()> {
    let recur = |p: &GateParams, k: usize| -> f64 {
        match &p.r {
            Some(r) => dot(r.row(k).as_slice().expect("standard layout"), h_prev),
            None => 0.0,
        }
    };
    let hidden = params.hidden_dim();
    for k in 0..hidden {
        let i = ov.input.unwrap_or_else(|| sigmoid(zi[k] + recur(&params.input, k)));
        let o = ov.output.unwrap_or_else(|| sigmoid(zo[k] + recur(&params.output, k)));
        let j = ov.candidate.unwrap_or_else(|| (zj[k] + recur(&params.candidate, k)).tanh());
        let c = match (&params.forget, zf) {
            (Some(fp), Some(zf)) => {
                let f = ov.forget.unwrap_or_else(|| sigmoid(zf[k] + recur(fp, k)));
                out.f[k] = f;
                c_prev[k] * f * a + i * j
            }
            _ => i * j,
        };
        let tc = c.tanh();
        let h = tc * o;
        if !h.is_finite() || !c.is_finite() {
            return Err(Error::Divergence(format!("non-finite cell state at unit {k}")));
        }
        out.i[k] = i;
        out.o[k] = o;
        out.j[k] = j;
        out.c[k] = c;
        out.tc[k] = tc;
        out.h[k] = h;
    }
    Ok(())
}

/// Single leaky LSTM step.
pub fn cell_forward(
    params: &CellParams,
    variant: CellVariant,
    a: f64,
    x_t: ArrayView1<f64>,
    state_prev: &LayerState,
    overrides: Option<&GateOverride>,
) -> Result<(LayerState, StepCache)> {
    params.validate(variant, a)?;
    let hidden = params.hidden_dim();
    if x_t.len() != params.input_dim() || state_prev.h.len() != hidden || state_prev.c.len() != hidden {
        return Err(Error::Shape(format!(
            "input {} / state {} do not match cell in={} H={hidden}",
            x_t.len(),
            state_prev.h.len(),
            params.input_dim()
        )));
    }
    let x = x_t.to_vec();
    let zf = params.forget.as_ref().map(|p| input_preactivation(p, &x));
    let zi = input_preactivation(&params.input, &x);
    let zo = input_preactivation(&params.output, &x);
    let zj = input_preactivation(&params.candidate, &x);
    let mut cache = StepCache {
        f: Array1::zeros(if params.forget.is_some() { hidden } else { 0 }),
        i: Array1::zeros(hidden),
        o: Array1::zeros(hidden),
        j: Array1::zeros(hidden),
        c: Array1::zeros(hidden),
        tanh_c: Array1::zeros(hidden),
    };
    let mut h = Array1::zeros(hidden);
    let h_prev = state_prev.h.to_vec();
    let c_prev = state_prev.c.to_vec();
    step(
        params,
        a,
        zf.as_deref(),
        &zi,
        &zo,
        &zj,
        &h_prev,
        &c_prev,
        &overrides.copied().unwrap_or_default(),
        StepRows {
            f: cache.f.as_slice_mut().unwrap(),
            i: cache.i.as_slice_mut().unwrap(),
            o: cache.o.as_slice_mut().unwrap(),
            j: cache.j.as_slice_mut().unwrap(),
            c: cache.c.as_slice_mut().unwrap(),
            tc: cache.tanh_c.as_slice_mut().unwrap(),
            h: h.as_slice_mut().unwrap(),
        },
    )?;
    Ok((
        LayerState {
            h,
            c: cache.c.clone(),
        },
        cache,
    ))
}

/// Everything the backward pass needs from one direction over a sequence.
#[derive(Debug, Clone)]
pub struct DirectionCache {
    pub a: f64,
    pub x: Array2<f64>,
    pub init: LayerState,
    /// `T x H`, or `T x 0` without a forget gate.
    pub f: Array2<f64>,
    pub i: Array2<f64>,
    pub o: Array2<f64>,
    pub j: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
    pub overrides: GateOverride,
}

impl DirectionCache {
    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    pub fn final_state(&self) -> LayerState {
        match self.len() {
            0 => self.init.clone(),
            t => LayerState {
                h: self.h.row(t - 1).to_owned(),
                c: self.c.row(t - 1).to_owned(),
            },
        }
    }
}

/// Runs one direction over a whole sequence (rows of `x` in time order).
///
/// Input projections for all frames are computed up front as one matrix
/// product; only the recurrent terms are evaluated step by step.
pub fn run_direction(
    params: &CellParams,
    a: f64,
    x: ArrayView2<f64>,
    init: Option<&LayerState>,
    overrides: Option<&GateOverride>,
) -> Result<DirectionCache> {
    let (steps, in_dim) = x.dim();
    let hidden = params.hidden_dim();
    if in_dim != params.input_dim() {
        return Err(Error::Shape(format!(
            "sequence has {in_dim} features, cell expects {}",
            params.input_dim()
        )));
    }
    if steps == 0 {
        return Err(Error::Data("empty sequence".into()));
    }
    if a > 0.0 && params.forget.is_none() {
        return Err(Error::Shape(format!("leak a={a} needs a forget gate")));
    }
    let init = init.cloned().unwrap_or_else(|| LayerState::zeros(hidden));
    let project = |p: &GateParams| -> Array2<f64> {
        let mut z = standard(x.dot(&p.w.t()));
        z += &p.b;
        z
    };
    let zf = params.forget.as_ref().map(project);
    let zi = project(&params.input);
    let zo = project(&params.output);
    let zj = project(&params.candidate);

    let f_width = if params.forget.is_some() { hidden } else { 0 };
    let mut cache = DirectionCache {
        a,
        x: x.to_owned(),
        init,
        f: Array2::zeros((steps, f_width)),
        i: Array2::zeros((steps, hidden)),
        o: Array2::zeros((steps, hidden)),
        j: Array2::zeros((steps, hidden)),
        c: Array2::zeros((steps, hidden)),
        tanh_c: Array2::zeros((steps, hidden)),
        h: Array2::zeros((steps, hidden)),
        overrides: overrides.copied().unwrap_or_default(),
    };
    let mut h_prev = cache.init.h.to_vec();
    let mut c_prev = cache.init.c.to_vec();
    for t in 0..steps {
        let DirectionCache {
            f,
            i,
            o,
            j,
            c,
            tanh_c,
            h,
            overrides,
            ..
        } = &mut cache;
        step(
            params,
            a,
            zf.as_ref().map(|z| z.row(t).to_slice().unwrap()),
            zi.row(t).to_slice().unwrap(),
            zo.row(t).to_slice().unwrap(),
            zj.row(t).to_slice().unwrap(),
            &h_prev,
            &c_prev,
            overrides,
            StepRows {
                f: if f_width == 0 { &mut [] } else { f.row_mut(t).into_slice().unwrap() },
                i: i.row_mut(t).into_slice().unwrap(),
                o: o.row_mut(t).into_slice().unwrap(),
                j: j.row_mut(t).into_slice().unwrap(),
                c: c.row_mut(t).into_slice().unwrap(),
                tc: tanh_c.row_mut(t).into_slice().unwrap(),
                h: h.row_mut(t).into_slice().unwrap(),
            },
        )?;
        h_prev.copy_from_slice(cache.h.row(t).as_slice().unwrap());
        c_prev.copy_from_slice(cache.c.row(t).as_slice().unwrap());
    }
    Ok(cache)
}

#[derive(Debug, Clone)]
pub struct DirectionGrads {
    pub params: CellParams,
    /// Gradient with respect to each input frame, `T x in`.
    pub d_input: Array2<f64>,
    pub d_h0: Array1<f64>,
    pub d_c0: Array1<f64>,
}

/// Exact gradients of a scalar loss through one direction, given the
/// upstream gradient `d_h` (`T x H`) on every output frame.
pub fn backward_direction(params: &CellParams, cache: &DirectionCache, d_h: ArrayView2<f64>) -> Result<DirectionGrads> {
    let steps = cache.len();
    let hidden = params.hidden_dim();
    if d_h.dim() != (steps, hidden) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match cache {steps}x{hidden}",
            d_h.dim()
        )));
    }
    if cache.x.ncols() != params.input_dim() || cache.f.ncols() != if params.forget.is_some() { hidden } else { 0 } {
        return Err(Error::Shape("cache does not belong to these parameters".into()));
    }
    let a = cache.a;
    let ov = &cache.overrides;
    let has_forget = params.forget.is_some();
    let mut dz_f = Array2::zeros((steps, if has_forget { hidden } else { 0 }));
    let mut dz_i = Array2::zeros((steps, hidden));
    let mut dz_o = Array2::zeros((steps, hidden));
    let mut dz_j = Array2::zeros((steps, hidden));
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];

    for t in (0..steps).rev() {
        let c_prev = if t > 0 { cache.c.row(t - 1) } else { cache.init.c.view() };
        for k in 0..hidden {
            let dh = d_h[[t, k]] + dh_next[k];
            let (i, o, j, tc) = (cache.i[[t, k]], cache.o[[t, k]], cache.j[[t, k]], cache.tanh_c[[t, k]]);
            let d_o = dh * tc;
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            if has_forget {
                let f = cache.f[[t, k]];
                let df = dc * c_prev[k] * a;
                dz_f[[t, k]] = if ov.forget.is_some() { 0.0 } else { df * f * (1.0 - f) };
                dc_next[k] = dc * f * a;
            } else {
                dc_next[k] = 0.0;
            }
            dz_i[[t, k]] = if ov.input.is_some() { 0.0 } else { dc * j * i * (1.0 - i) };
            dz_o[[t, k]] = if ov.output.is_some() { 0.0 } else { d_o * o * (1.0 - o) };
            dz_j[[t, k]] = if ov.candidate.is_some() { 0.0 } else { dc * i * (1.0 - j * j) };
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let mut add_recurrent = |p: &GateParams, dz: &Array2<f64>| {
            if let Some(r) = &p.r {
                let g = dz.row(t).dot(r);
                for (acc, v) in dh_next.iter_mut().zip(g.iter()) {
                    *acc += v;
                }
            }
        };
        if let Some(fp) = &params.forget {
            add_recurrent(fp, &dz_f);
        }
        add_recurrent(&params.input, &dz_i);
        add_recurrent(&params.output, &dz_o);
        add_recurrent(&params.candidate, &dz_j);
    }

    // previous outputs seen at each step: [h0; h_0 .. h_{T-2}]
    let mut h_prev = Array2::zeros((steps, hidden));
    h_prev.row_mut(0).assign(&cache.init.h);
    if steps > 1 {
        h_prev.slice_mut(s![1.., ..]).assign(&cache.h.slice(s![..steps - 1, ..]));
    }
    let gate_grads = |p: &GateParams, dz: &Array2<f64>| GateParams {
        w: standard(dz.t().dot(&cache.x)),
        r: p.r.as_ref().map(|_| standard(dz.t().dot(&h_prev))),
        b: dz.sum_axis(Axis(0)),
    };
    let grads = CellParams {
        forget: params.forget.as_ref().map(|p| gate_grads(p, &dz_f)),
        input: gate_grads(&params.input, &dz_i),
        output: gate_grads(&params.output, &dz_o),
        candidate: gate_grads(&params.candidate, &dz_j),
    };
    let mut d_input = standard(dz_i.dot(&params.input.w));
    d_input += &dz_o.dot(&params.output.w);
    d_input += &dz_j.dot(&params.candidate.w);
    if let Some(fp) = &params.forget {
        d_input += &dz_f.dot(&fp.w);
    }
    Ok(DirectionGrads {
        params: grads,
        d_input,
        d_h0: Array1::from(dh_next),
        d_c0: Array1::from(dc_next),
    })
}
