//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNMET` are still run and reported, but do not
//! fail the process; every other failure does.

use std::time::Instant;

use leakyspan::corpus::{mix_utterances, synth_speaker_corpus, synth_utterance, CorpusConfig, Voice};
use leakyspan::evaluation::{memory_probe, mismatch_experiment, ExperimentContext, ProbeConfig};
use leakyspan::params::Parameters;
use leakyspan::recurrent::{
    blstm_forward, bptt_backward, count_params, leak_to_lifetime, lifetime_to_leak, run_direction, CellParams,
    CellVariant, GateOverride, LayerState, LeakConfig, LstmStack, ModelConfig,
};
use leakyspan::separation::{dc_loss, separate, SeparationConfig, SeparationModel};
use leakyspan::signal::{NormStats, SignalConfig};
use leakyspan::speaker::{baum_welch_stats, extract_ivector, train_tv, BaumWelchStats, TotalVariability, Ubm};
use leakyspan::training::{prepare_dataset, TrainConfig};
use nalgebra::DMatrix;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const KNOWN_UNMET: &[u32] = &[7, 8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// 1 -----------------------------------------------------------------------

fn large_preset(variant: CellVariant, a: f64) -> ModelConfig {
    ModelConfig {
        input_dim: 129,
        layers: 2,
        units_per_direction: 600,
        bidirectional: true,
        variant,
        leak: LeakConfig { a, hop_seconds: 0.008 },
        output_dim: 2580,
    }
}

fn parameter_accounting() -> Outcome {
    let n = |v, a| count_params(&large_preset(v, a), true) as i64;
    let (b1, b0) = (n(CellVariant::Basic, 1.0), n(CellVariant::Basic, 0.0));
    let (r1, r0) = (n(CellVariant::RedCut, 1.0), n(CellVariant::RedCut, 0.0));
    let (u1, u0) = (n(CellVariant::BlueCut, 1.0), n(CellVariant::BlueCut, 0.0));
    let got = [b1 - r1, r1 - u1, b1 - b0, r1 - r0, u1 - u0];
    let want = [2_880_000, 2_880_000, 3_037_200, 3_037_200, 1_597_200];
    let millions: Vec<String> = got.iter().map(|d| format!("{:.2}M", *d as f64 / 1e6)).collect();
    outcome(got == want, format!("deltas {got:?} ({})", millions.join(", ")))
}

// 2 -----------------------------------------------------------------------

fn lifetime_formula() -> Outcome {
    let hop = 0.008;
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for tau in [0.0, 0.1, 0.3, 1.6, 8.0, f64::INFINITY, 0.025, 0.05, 2.5] {
        let a = lifetime_to_leak(tau, hop);
        let want = (-hop / tau).exp();
        if tau == 0.0 || tau.is_infinite() {
            exact &= a == want && leak_to_lifetime(a, hop) == tau;
        } else {
            worst = worst.max(((a - want) / want).abs());
            worst = worst.max(((leak_to_lifetime(a, hop) - tau) / tau).abs());
        }
    }
    outcome(exact && worst < 1e-9, format!("max relative error {worst:.1e}, limits exact: {exact}"))
}

// 3 -----------------------------------------------------------------------

fn decay_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pinned = GateOverride {
        forget: Some(1.0),
        input: Some(0.0),
        ..Default::default()
    };
    let mut mismatches = 0;
    for a in [0.25, 0.5, 0.9] {
        for variant in CellVariant::ALL {
            let params = CellParams::init(variant, a, 3, 5, &mut rng);
            let c0 = Array1::from_shape_simple_fn(5, || rng.random_range(-2.0..2.0));
            let init = LayerState {
                h: Array1::from_shape_simple_fn(5, || rng.random_range(-1.0..1.0)),
                c: c0.clone(),
            };
            let x = Array2::from_shape_simple_fn((50, 3), || rng.random_range(-1.0..1.0));
            let run = run_direction(&params, a, x.view(), Some(&init), Some(&pinned)).unwrap();
            for k in 0..5 {
                let mut expected = c0[k];
                for t in 0..50 {
                    expected *= a;
                    let got = run.c[[t, k]];
                    let power = c0[k] * a.powi(t as i32 + 1);
                    if got != expected || (got - power).abs() > 1e-14 * power.abs().max(1e-300) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over a in {{0.25, 0.5, 0.9}}, T <= 50"))
}

// 4 -----------------------------------------------------------------------

const STEP: f64 = 1e-5;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn stack_loss(cfg: &ModelConfig, stack: &LstmStack, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let (h, _) = blstm_forward(cfg, stack, x.view()).unwrap();
    (&h * w).sum() + 0.5 * h.mapv(|v| v * v).sum()
}

fn gradient_error(variant: CellVariant, a: f64, seed: u64) -> f64 {
    let cfg = ModelConfig {
        input_dim: 3,
        layers: 2,
        units_per_direction: 4,
        bidirectional: true,
        variant,
        leak: LeakConfig { a, hop_seconds: 0.008 },
        output_dim: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = LstmStack::init(&cfg, &mut rng);
    let x = Array2::from_shape_simple_fn((7, 3), || rng.random_range(-1.0..1.0));
    let w = Array2::from_shape_simple_fn((7, cfg.stack_output_dim()), || rng.random_range(-1.0..1.0));
    let (h, cache) = blstm_forward(&cfg, &stack, x.view()).unwrap();
    let (grads, _) = bptt_backward(&stack, &cache, (&w + &h).view()).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (ti, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let mut plus = stack.clone();
            plus.tensors_mut()[ti].data[k] += STEP;
            let mut minus = stack.clone();
            minus.tensors_mut()[ti].data[k] -= STEP;
            let numeric = (stack_loss(&cfg, &plus, &x, &w) - stack_loss(&cfg, &minus, &x, &w)) / (2.0 * STEP);
            worst = worst.max(relative_error(g[k], numeric));
        }
    }
    worst
}

fn gradient_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    for variant in CellVariant::ALL {
        for a in [0.0, 0.5, 1.0] {
            for seed in 0..5 {
                worst = worst.max(gradient_error(variant, a, seed));
            }
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 3 variants x 3 leaks x 5 seeds"))
}

// 5 -----------------------------------------------------------------------

fn unit_rows(mut v: Array2<f64>) -> Array2<f64> {
    for mut row in v.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    v
}

fn naive_dc(v: &Array2<f64>, u: &Array2<f64>) -> f64 {
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

fn dc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut permutation_exact = true;
    for &(n, d, s) in &[(3, 2, 2), (16, 4, 2), (40, 20, 2), (64, 20, 2), (64, 5, 3)] {
        for _ in 0..5 {
            let v = unit_rows(Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0)));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..s)).collect();
            let u = Array2::from_shape_fn((n, s), |(r, c)| if labels[r] == c { 1.0 } else { 0.0 });
            let fast = dc_loss(v.view(), u.view()).unwrap().0;
            let slow = naive_dc(&v, &u);
            worst = worst.max((fast - slow).abs() / slow);
            let reversed = Array2::from_shape_fn((n, s), |(r, c)| u[[r, s - 1 - c]]);
            let rotated = Array2::from_shape_fn((n, s), |(r, c)| u[[r, (c + 1) % s]]);
            permutation_exact &= dc_loss(v.view(), reversed.view()).unwrap().0 == fast;
            permutation_exact &= dc_loss(v.view(), rotated.view()).unwrap().0 == fast;
        }
    }
    outcome(
        worst <= 1e-10 && permutation_exact,
        format!("max relative error {worst:.1e}, permutation exact: {permutation_exact}"),
    )
}

// 6 -----------------------------------------------------------------------

fn memorylessness() -> Outcome {
    let cfg = ModelConfig {
        input_dim: 4,
        layers: 2,
        units_per_direction: 6,
        bidirectional: true,
        variant: CellVariant::BlueCut,
        leak: LeakConfig { a: 0.0, hop_seconds: 0.008 },
        output_dim: 1,
    };
    let mut leaked = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = LstmStack::init(&cfg, &mut rng);
        let x = Array2::from_shape_simple_fn((12, 4), || rng.random_range(-1.0..1.0));
        let (h, _) = blstm_forward(&cfg, &stack, x.view()).unwrap();
        for t in 0..12 {
            let mut y = x.clone();
            y.row_mut(t).mapv_inplace(|v| v + 1.5);
            let (g, _) = blstm_forward(&cfg, &stack, y.view()).unwrap();
            leaked += (0..12).filter(|&o| o != t && h.row(o) != g.row(o)).count();
        }
    }
    let rows = memory_probe(&ProbeConfig::default(), CellVariant::BlueCut, 0.0, &[1, 2, 5, 20], 0).unwrap();
    let min_p = rows.iter().map(|r| r.p_value).fold(f64::INFINITY, f64::min);
    let accs: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.delay, r.accuracy)).collect();
    outcome(
        leaked == 0 && min_p > 0.01,
        format!("{leaked} cross-frame changes; probe accuracy {} (chance 0.25), min p {min_p:.3}", accs.join(" ")),
    )
}

// 7, 8 --------------------------------------------------------------------

struct Mismatch {
    no_leak: f64,
    leak: f64,
    mismatched: f64,
    seeds: usize,
}

fn run_mismatch() -> Mismatch {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_speaker_corpus(dir.path(), &CorpusConfig::default(), 0).unwrap();
    let signal = SignalConfig::default();
    let separation = SeparationConfig::default();
    let data = prepare_dataset(&manifest, &signal, None).unwrap();
    let model = ModelConfig {
        input_dim: signal.num_bins(),
        layers: 2,
        units_per_direction: 64,
        bidirectional: true,
        variant: CellVariant::BlueCut,
        leak: LeakConfig {
            a: 1.0,
            hop_seconds: signal.hop_seconds(),
        },
        output_dim: signal.num_bins() * separation.embedding_dim,
    };
    let train = TrainConfig::default();
    let ctx = ExperimentContext {
        manifest: &manifest,
        data: &data,
        conditioned: None,
        model: &model,
        signal: &signal,
        separation: &separation,
        train: &train,
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = mismatch_experiment(&ctx, &[0, 1, 2], false, jobs).unwrap();
    let mean = |f: fn(&leakyspan::evaluation::MismatchRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    for r in &rows {
        println!(
            "  seed {}: a=1/a=1 {:.3} dB, a=0/a=0 {:.3} dB, a=1/a=0 {:.3} dB",
            r.seed, r.no_leak_train_no_leak_test_db, r.leak_train_leak_test_db, r.no_leak_train_leak_test_db
        );
    }
    Mismatch {
        no_leak: mean(|r| r.no_leak_train_no_leak_test_db),
        leak: mean(|r| r.leak_train_leak_test_db),
        mismatched: mean(|r| r.no_leak_train_leak_test_db),
        seeds: rows.len(),
    }
}

fn desk_scale_trend(m: &Mismatch) -> Outcome {
    let gap = m.no_leak - m.leak;
    outcome(
        gap >= 1.0,
        format!(
            "mean SI-SDR improvement a=1 {:.3} dB, a=0 {:.3} dB, gap {gap:.3} dB over {} seeds (need >= 1)",
            m.no_leak, m.leak, m.seeds
        ),
    )
}

fn mismatch_direction(m: &Mismatch) -> Outcome {
    outcome(
        m.leak >= m.mismatched,
        format!(
            "trained and tested with leak {:.3} dB, trained without / tested with leak {:.3} dB",
            m.leak, m.mismatched
        ),
    )
}

// 9 -----------------------------------------------------------------------

fn probe_lifetime() -> Outcome {
    let a = (-1.0f64 / 10.0).exp();
    let cfg = ProbeConfig::default();
    let gaps: Vec<f64> = (0..3)
        .map(|seed| {
            let rows = memory_probe(&cfg, CellVariant::BlueCut, a, &[2, 50], seed).unwrap();
            rows[0].accuracy - rows[1].accuracy
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    outcome(mean >= 0.3, format!("acc(2) - acc(50) per seed {gaps:.3?}, mean {mean:.3} (need >= 0.3)"))
}

// 10 ----------------------------------------------------------------------

const K: usize = 4;
const D: usize = 3;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn ubm() -> Ubm {
    Ubm {
        weights: Array1::from_elem(K, 1.0 / K as f64),
        means: array![[6.0, 6.0, 6.0], [6.0, -6.0, -6.0], [-6.0, 6.0, -6.0], [-6.0, -6.0, 6.0]],
        variances: Array2::from_elem((K, D), 1.0),
    }
}

fn frames(ubm: &Ubm, t: &Array2<f64>, w: &[f64], count: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let shift = t.dot(&Array1::from(w.to_vec()));
    let mut data = Vec::with_capacity(count * D);
    for _ in 0..count {
        let c = rng.random_range(0..K);
        for j in 0..D {
            data.push(ubm.means[[c, j]] + shift[c * D + j] + gauss(rng));
        }
    }
    Array2::from_shape_vec((count, D), data).unwrap()
}

fn subspace_angle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let qa = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]).qr().q();
    let qb = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[[i, j]]).qr().q();
    (qa.transpose() * qb).singular_values().min().clamp(-1.0, 1.0).acos().to_degrees()
}

fn ivector_recovery() -> Outcome {
    let ubm = ubm();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let truth = Array2::from_shape_simple_fn((K * D, 2), || 0.3 * gauss(&mut rng));
    let tv = TotalVariability { t: truth.clone() };

    let mut worst: f64 = 0.0;
    for w in [[0.8, -0.6], [-1.5, 0.4], [0.3, 1.2]] {
        let stats = baum_welch_stats(&ubm, frames(&ubm, &truth, &w, 20_000, &mut rng).view()).unwrap();
        let est = extract_ivector(&ubm, &tv, &stats).unwrap().w;
        let err = ((est[0] - w[0]).powi(2) + (est[1] - w[1]).powi(2)).sqrt() / (w[0].powi(2) + w[1].powi(2)).sqrt();
        worst = worst.max(err);
    }

    let stats: Vec<BaumWelchStats> = (0..300)
        .map(|_| {
            let w = [gauss(&mut rng), gauss(&mut rng)];
            baum_welch_stats(&ubm, frames(&ubm, &truth, &w, 1000, &mut rng).view()).unwrap()
        })
        .collect();
    let (est, _) = train_tv(&ubm, &stats, 2, 20, 8).unwrap();
    let angle = subspace_angle(&est.t, &truth);

    let zero = TotalVariability { t: Array2::zeros((K * D, 2)) };
    let w0 = extract_ivector(&ubm, &zero, &stats[0]).unwrap().w;
    let zero_exact = w0.iter().all(|&v| v == 0.0);

    outcome(
        worst < 0.1 && angle < 5.0 && zero_exact,
        format!("max relative error {worst:.3}, subspace angle {angle:.2} deg, T=0 gives w=0: {zero_exact}"),
    )
}

// 11 ----------------------------------------------------------------------

fn conservation() -> Outcome {
    let signal = SignalConfig::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (seed, variant, a) in [(1, CellVariant::Basic, 1.0), (2, CellVariant::RedCut, 0.5), (3, CellVariant::BlueCut, 0.0)] {
        let model = ModelConfig {
            input_dim: 0,
            layers: 2,
            units_per_direction: 16,
            bidirectional: true,
            variant,
            leak: LeakConfig {
                a,
                hop_seconds: signal.hop_seconds(),
            },
            output_dim: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sep = SeparationModel::init(
            model,
            signal.clone(),
            SeparationConfig::default(),
            0,
            NormStats::identity(signal.num_bins()),
            &mut rng,
        )
        .unwrap();
        for seconds in [0.01, 0.5, 1.37] {
            let first = synth_utterance(&Voice::random(&mut rng), seconds, &mut rng);
            let second = synth_utterance(&Voice::random(&mut rng), seconds, &mut rng);
            let gains = [0.0, rng.random_range(0.0..5.0)];
            let mixture = mix_utterances(&[&first, &second], &gains, &["a".into(), "b".into()]).unwrap().mixture;
            for sources in [1, 2, 3] {
                let parts = separate(&sep, &mixture, sources, None, seed).unwrap();
                for n in 0..mixture.len() {
                    let sum: f64 = parts.iter().map(|p| p.samples[n]).sum();
                    worst = worst.max((sum - mixture.samples[n]).abs());
                }
                cases += 1;
            }
        }
    }
    outcome(worst <= 1e-5, format!("max absolute sample error {worst:.1e} over {cases} separations"))
}

// -------------------------------------------------------------------------

fn report(id: u32, name: &str, start: Instant, result: Outcome, failures: &mut Vec<u32>) {
    let verdict = if result.pass { "PASS" } else { "FAIL" };
    let note = if !result.pass && KNOWN_UNMET.contains(&id) { " [known unmet]" } else { "" };
    println!(
        "{verdict} {id:>2} {name}: {} ({:.1} s){note}",
        result.detail,
        start.elapsed().as_secs_f64()
    );
    if !result.pass && !KNOWN_UNMET.contains(&id) {
        failures.push(id);
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let filter: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let wanted = |id: u32| filter.is_empty() || filter.contains(&id);
    let mut failures = Vec::new();

    let quick: [(u32, &str, fn() -> Outcome); 7] = [
        (1, "parameter accounting", parameter_accounting),
        (2, "lifetime formula", lifetime_formula),
        (3, "decay law", decay_law),
        (4, "gradient suite", gradient_suite),
        (5, "DC loss oracle", dc_oracle),
        (6, "memorylessness", memorylessness),
        (9, "probe lifetime", probe_lifetime),
    ];
    for (id, name, check) in quick {
        if wanted(id) {
            let start = Instant::now();
            report(id, name, start, check(), &mut failures);
        }
    }
    if wanted(10) {
        let start = Instant::now();
        report(10, "i-vector recovery", start, ivector_recovery(), &mut failures);
    }
    if wanted(11) {
        let start = Instant::now();
        report(11, "end-to-end conservation", start, conservation(), &mut failures);
    }
    if wanted(7) || wanted(8) {
        let start = Instant::now();
        let m = run_mismatch();
        if wanted(7) {
            report(7, "desk-scale leak trend", start, desk_scale_trend(&m), &mut failures);
        }
        if wanted(8) {
            report(8, "mismatch direction", start, mismatch_direction(&m), &mut failures);
        }
    }

    if !failures.is_empty() {
        eprintln!("acceptance failures: {failures:?}");
        std::process::exit(1);
    }
}
