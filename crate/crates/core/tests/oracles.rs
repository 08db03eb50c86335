//! Library routines checked against direct, independently written
//! computations.

use leakyspan::recurrent::{cell_forward, run_direction, CellParams, CellVariant, GateParams, LayerState};
use leakyspan::separation::{build_targets, dc_loss, kmeans, KMeansConfig};
use leakyspan::signal::{compute_norm_stats, FeatureSequence, Spectrogram, WindowKind};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn gate_pre(p: &GateParams, x: &[f64], h: &[f64], k: usize) -> f64 {
    let mut z = p.b[k];
    for (m, xm) in x.iter().enumerate() {
        z += p.w[[k, m]] * xm;
    }
    if let Some(r) = &p.r {
        for (m, hm) in h.iter().enumerate() {
            z += r[[k, m]] * hm;
        }
    }
    z
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `c = a f c_prev + i j`, `h = o tanh(c)`, one unit at a time.
fn oracle_step(p: &CellParams, a: f64, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hidden = h.len();
    let mut c_new = vec![0.0; hidden];
    let mut h_new = vec![0.0; hidden];
    for k in 0..hidden {
        let i = sig(gate_pre(&p.input, x, h, k));
        let o = sig(gate_pre(&p.output, x, h, k));
        let j = gate_pre(&p.candidate, x, h, k).tanh();
        let f = p.forget.as_ref().map_or(0.0, |g| sig(gate_pre(g, x, h, k)));
        c_new[k] = a * f * c[k] + i * j;
        h_new[k] = o * c_new[k].tanh();
    }
    (h_new, c_new)
}

#[test]
fn cell_steps_match_scalar_oracle() {
    for variant in CellVariant::ALL {
        for a in [0.0, 0.3, 0.9, 1.0] {
            for seed in 0..3 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let params = CellParams::init(variant, a, 3, 4, &mut rng);
                let x = uniform(&mut rng, 9, 3);
                let init = LayerState {
                    h: Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0)),
                    c: Array1::from_shape_simple_fn(4, || rng.random_range(-2.0..2.0)),
                };
                let (one, _) = cell_forward(&params, variant, a, x.row(0), &init, None).unwrap();
                let (h1, c1) = oracle_step(&params, a, x.row(0).as_slice().unwrap(), init.h.as_slice().unwrap(), init.c.as_slice().unwrap());
                for k in 0..4 {
                    assert!((one.h[k] - h1[k]).abs() < 1e-13, "{variant:?} a={a}");
                    assert!((one.c[k] - c1[k]).abs() < 1e-13, "{variant:?} a={a}");
                }
                let seq = run_direction(&params, a, x.view(), Some(&init), None).unwrap();
                let (mut h, mut c) = (init.h.to_vec(), init.c.to_vec());
                for t in 0..9 {
                    (h, c) = oracle_step(&params, a, x.row(t).as_slice().unwrap(), &h, &c);
                    for k in 0..4 {
                        assert!((seq.h[[t, k]] - h[k]).abs() < 1e-12, "{variant:?} a={a} t={t}");
                        assert!((seq.c[[t, k]] - c[k]).abs() < 1e-12, "{variant:?} a={a} t={t}");
                    }
                }
            }
        }
    }
}

fn naive_dc_loss(v: &Array2<f64>, u: &Array2<f64>) -> f64 {
    let n = v.nrows();
    let mut total = 0.0;
    for p in 0..n {
        for q in 0..n {
            let vv: f64 = (0..v.ncols()).map(|d| v[[p, d]] * v[[q, d]]).sum();
            let uu: f64 = (0..u.ncols()).map(|s| u[[p, s]] * u[[q, s]]).sum();
            total += (vv - uu).powi(2);
        }
    }
    total
}

fn unit_rows(mut v: Array2<f64>) -> Array2<f64> {
    for mut row in v.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    v
}

fn one_hot(labels: &[usize], s: usize) -> Array2<f64> {
    Array2::from_shape_fn((labels.len(), s), |(r, c)| if labels[r] == c { 1.0 } else { 0.0 })
}

#[test]
fn dc_loss_matches_naive_double_sum() {
    // Three bins, D = 2, S = 2.
    let v = unit_rows(ndarray::array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]);
    let u = one_hot(&[0, 0, 1], 2);
    let (fast, _) = dc_loss(v.view(), u.view()).unwrap();
    let slow = naive_dc_loss(&v, &u);
    assert!((fast - slow).abs() <= 1e-10 * slow, "{fast} vs {slow}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(n, d, s) in &[(7, 2, 2), (20, 5, 2), (48, 4, 3), (64, 20, 2), (64, 3, 4)] {
        for _ in 0..5 {
            let v = unit_rows(uniform(&mut rng, n, d));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..s)).collect();
            let u = one_hot(&labels, s);
            let (fast, _) = dc_loss(v.view(), u.view()).unwrap();
            let slow = naive_dc_loss(&v, &u);
            assert!((fast - slow).abs() <= 1e-10 * slow, "n={n}: {fast} vs {slow}");
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn dc_loss_is_exactly_invariant_to_target_column_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in 2..=4 {
        for _ in 0..5 {
            let n = 30;
            let v = unit_rows(uniform(&mut rng, n, 6));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..s)).collect();
            let soft = uniform(&mut rng, n, s);
            for u in [one_hot(&labels, s), soft] {
                let (base, _) = dc_loss(v.view(), u.view()).unwrap();
                for p in permutations(s) {
                    let permuted = Array2::from_shape_fn((n, s), |(r, c)| u[[r, p[c]]]);
                    assert_eq!(dc_loss(v.view(), permuted.view()).unwrap().0, base);
                }
            }
        }
    }
}

fn wcss(points: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let d = points.ncols();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|&i| points[[i, j]]).sum::<f64>() / members.len() as f64)
            .collect();
        for &i in &members {
            total += (0..d).map(|j| (points[[i, j]] - centroid[j]).powi(2)).sum::<f64>();
        }
    }
    total
}

#[test]
fn kmeans_reaches_the_exhaustive_optimum() {
    let cfg = KMeansConfig {
        restarts: 5,
        max_iter: 100,
    };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let points = Array2::from_shape_fn((8, 2), |(i, _)| {
            let centre = if i < 4 { -1.0 } else { 1.0 };
            centre + rng.random_range(-0.8..0.8)
        });
        let best = (1u32..255)
            .map(|mask| {
                let labels: Vec<usize> = (0..8).map(|i| ((mask >> i) & 1) as usize).collect();
                wcss(&points, &labels, 2)
            })
            .fold(f64::INFINITY, f64::min);
        let got = kmeans(points.view(), 2, seed, &cfg).unwrap();
        assert!((got.wcss - best).abs() <= 1e-9 * best.max(1.0), "seed {seed}: {} vs {best}", got.wcss);
        assert!((wcss(&points, &got.labels, 2) - got.wcss).abs() < 1e-9);
    }
}

#[test]
fn norm_stats_match_two_pass_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let seqs: Vec<FeatureSequence> = [5usize, 1, 17, 9]
        .iter()
        .map(|&t| FeatureSequence {
            values: Array2::from_shape_fn((t, 6), |(_, f)| 10.0 * f as f64 + rng.random_range(-3.0..3.0)),
            normalized: false,
        })
        .collect();
    let stats = compute_norm_stats(&seqs).unwrap();
    let rows: Vec<Vec<f64>> = seqs.iter().flat_map(|s| s.values.rows().into_iter().map(|r| r.to_vec())).collect();
    let n = rows.len() as f64;
    for f in 0..6 {
        let mean = rows.iter().map(|r| r[f]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n;
        assert!((stats.mean[f] - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((stats.std[f] - var.sqrt()).abs() <= 1e-12 * var.sqrt());
    }
}

fn spectrogram(values: Array2<Complex64>) -> Spectrogram {
    Spectrogram {
        bins: values,
        frame_len: 6,
        hop: 3,
        sample_rate: 8000,
        window: WindowKind::SqrtHann,
    }
}

#[test]
fn targets_match_scalar_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let specs: Vec<Spectrogram> = (0..2)
            .map(|_| {
                spectrogram(Array2::from_shape_simple_fn((3, 4), || {
                    // Coarse values make exact ties likely.
                    Complex64::new(rng.random_range(0..3) as f64, rng.random_range(0..2) as f64)
                }))
            })
            .collect();
        let labels = build_targets(&specs).unwrap().labels();
        for t in 0..3 {
            for f in 0..4 {
                let e0 = specs[0].bins[[t, f]].re.powi(2) + specs[0].bins[[t, f]].im.powi(2);
                let e1 = specs[1].bins[[t, f]].re.powi(2) + specs[1].bins[[t, f]].im.powi(2);
                let want = if e1 > e0 { 1 } else { 0 };
                assert_eq!(labels[t * 4 + f], want);
            }
        }
    }
}
