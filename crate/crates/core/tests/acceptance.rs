//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the verdict lines always reach the terminal.
//! The long-horizon loss-ordering check (criterion 9) only runs when
//! `--include-ignored` or `--ignored` is passed.

use std::time::{Duration, Instant};

use merit_core::diagnostics::{
    attention_logits, bound_trigger_ratio, clip_trigger_ratio, count_bound_active, logit_upper_bound, max_row_abs_sum,
    norm_gap_ratio, top_eigenvalue, CurvatureOptions, QuadraticFixture,
};
use merit_core::harness::{accumulate_grads, next_batch, train, Checkpoint, Session, TrainConfig};
use merit_core::nanoformer::{finite_diff_grad, init_params, loss, loss_and_grads, ModelConfig, TokenBatch};
use merit_core::optim::{
    lamb_step, maxlamb_step, maxlamb_step_with_norm, merit_step, merit_trust_ratios, HyperParams, MeritVariant, Norm,
    OptimState,
};
use merit_core::tensor::{clip_elementwise, seeded_normal};
use merit_core::{Coordinate, Params, SeededRng, Tensor};

type Verdict = Result<String, String>;

/// Id, name, check, time budget, soft.
type Criterion = (u32, &'static str, fn() -> Verdict, Duration, bool);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn random_matrix(rng: &mut SeededRng, m: usize, n: usize) -> Tensor {
    let scale = (10f64).powf(rng.uniform() * 4.0 - 2.0);
    let mut t = seeded_normal(&[m, n], 0.0, scale, rng).unwrap();
    // Sprinkle exact zeros so degenerate rows and columns occur.
    for x in t.data_mut() {
        if rng.uniform() < 0.1 {
            *x = 0.0;
        }
    }
    t
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 || den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// Scalar-loop reference for (b, r, c, s).
fn ratio_oracle(w: &Tensor, d: &Tensor) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let at = |t: &Tensor, i: usize, j: usize| t.data()[i * n + j].abs();
    let (mut wmax, mut dmax) = (0.0f64, 0.0f64);
    for i in 0..m {
        for j in 0..n {
            wmax = wmax.max(at(w, i, j));
            dmax = dmax.max(at(d, i, j));
        }
    }
    let b = ratio(wmax, dmax);
    let mut r = vec![0.0; m];
    for (i, ri) in r.iter_mut().enumerate() {
        let (mut a, mut z) = (0.0f64, 0.0f64);
        for j in 0..n {
            a = a.max(at(w, i, j));
            z = z.max(at(d, i, j));
        }
        *ri = ratio(a, z);
    }
    let mut c = vec![0.0; n];
    for (j, cj) in c.iter_mut().enumerate() {
        let (mut a, mut z) = (0.0f64, 0.0f64);
        for i in 0..m {
            a = a.max(at(w, i, j));
            z = z.max(at(d, i, j));
        }
        *cj = ratio(a, z);
    }
    let mut s = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let rc = if r[i] > c[j] { r[i] } else { c[j] };
            s[i * n + j] = if rc > b { rc } else { b };
        }
    }
    (b, r, c, s)
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Verdict {
    let w = Tensor::from_rows(&[&[2.0, -1.0], &[0.5, 4.0]]);
    let d = Tensor::from_rows(&[&[1.0, 0.5], &[2.0, 1.0]]);
    let tr = merit_trust_ratios(&w, &d).map_err(|e| e.to_string())?;
    ensure(tr.s.data() == [2.0, 4.0, 2.0, 4.0], || {
        format!("worked example gave s = {:?}", tr.s.data())
    })?;
    ensure(
        tr.r.data() == [2.0, 2.0] && tr.c.data() == [1.0, 4.0] && tr.b == 2.0,
        || "worked example ratios".into(),
    )?;

    let mut rng = SeededRng::new(1);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let (m, n) = (1 + rng.below(8), 1 + rng.below(8));
        let w = random_matrix(&mut rng, m, n);
        let u = random_matrix(&mut rng, m, n);
        let lambda = if k % 2 == 0 { 0.0 } else { 0.1 };
        let d = u.zip_map(&w, |ui, wi| ui + lambda * wi).unwrap();
        let tr = merit_trust_ratios(&w, &d).map_err(|e| e.to_string())?;
        let (b, r, c, s) = ratio_oracle(&w, &d);
        worst = worst
            .max((tr.b - b).abs())
            .max(max_dev(tr.r.data(), &r))
            .max(max_dev(tr.c.data(), &c))
            .max(max_dev(tr.s.data(), &s));
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("1000 matrices, max deviation {worst:e}"))
}

fn random_state(rng: &mut SeededRng, shape: &[usize]) -> OptimState {
    let mut st = OptimState::new(shape);
    if rng.uniform() < 0.5 {
        for (m, v) in st.m.data_mut().iter_mut().zip(st.v.data_mut()) {
            let g = rng.standard_normal();
            *m = 0.1 * g;
            *v = 0.05 * g * g;
        }
        st.step = 1;
    }
    st
}

fn criterion_2() -> Verdict {
    let mut rng = SeededRng::new(2);
    let mut worst_scale = 0.0f64;
    for k in 0..1000 {
        let (m, n) = (1 + rng.below(8), 1 + rng.below(8));
        let mut w = random_matrix(&mut rng, m, n);
        let g = random_matrix(&mut rng, m, n);
        let mut st = random_state(&mut rng, &[m, n]);
        let hp = HyperParams {
            weight_decay: if k % 2 == 0 { 0.0 } else { 0.1 },
            ..HyperParams::default()
        };
        let lr = 10f64.powf(-4.0 + 3.0 * rng.uniform());
        let w0 = w.clone();
        let diag = merit_step(&mut w, &g, &mut st, &hp, lr).map_err(|e| e.to_string())?;
        let tr = diag.ratios.ok_or("matrix step without ratios")?;
        ensure(tr.s.data().iter().all(|&s| s >= tr.b), || format!("s < b at step {k}"))?;
        let post = clip_elementwise(&diag.pre_clip, 1.0).unwrap();
        ensure(post.max_norm().unwrap() <= 1.0, || {
            format!("post-clip update above 1 at step {k}")
        })?;
        for (a, b) in w0.data().iter().zip(w.data()) {
            // One rounding of w - lr·δ can exceed lr by an ulp of |w|.
            let slack = 4.0 * f64::EPSILON * a.abs().max(b.abs());
            ensure((a - b).abs() <= lr + slack, || {
                format!("|dw| = {} > lr = {lr} at step {k}", (a - b).abs())
            })?;
        }
        let d = w0.zip_map(&g, |_, gi| gi).unwrap().map(|x| x * 0.7 - 0.1);
        let base = merit_trust_ratios(&w0, &d).unwrap();
        for alpha in [0.5, 2.0, 10.0] {
            let scaled = merit_trust_ratios(&w0.scale(alpha), &d.scale(alpha)).unwrap();
            for (x, y) in scaled.s.data().iter().zip(base.s.data()) {
                worst_scale = worst_scale.max((x - y).abs() / y.abs().max(1.0));
            }
        }
    }
    ensure(worst_scale <= 1e-12, || {
        format!("scale invariance deviation {worst_scale:e}")
    })?;
    Ok(format!("1000 steps; scale-invariance deviation {worst_scale:e}"))
}

fn criterion_3() -> Verdict {
    let mut count = 0;
    let mut worst = 0.0f64;
    for &w0 in &[-3.0, -1.0, -0.4, 0.02, 0.5, 1.0, 2.5] {
        for &g in &[-2.0, -0.3, 0.0, 1e-3, 1.0, 7.0] {
            for &lambda in &[0.0, 0.1, 0.5] {
                for &lr in &[1e-3, 1e-2, 0.1] {
                    let hp = HyperParams {
                        weight_decay: lambda,
                        ..HyperParams::default()
                    };
                    let mut w = Tensor::from_rows(&[&[w0]]);
                    let mut st = OptimState::new(&[1, 1]);
                    merit_step(&mut w, &Tensor::from_rows(&[&[g]]), &mut st, &hp, lr).map_err(|e| e.to_string())?;
                    let u = 0.1 * g / ((0.05 * g * g).sqrt() + hp.eps);
                    let d = u + lambda * w0;
                    let sign = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    let expect = -lr * sign * w0.abs().min(1.0);
                    let got = w.data()[0] - w0;
                    worst = worst.max((got - expect).abs());
                    count += 1;
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("{count} grid points, max deviation {worst:e}"))
}

fn criterion_4() -> Verdict {
    let mut rng = SeededRng::new(4);
    for k in 0..200 {
        let shape = if k % 4 == 3 {
            vec![1 + rng.below(8)]
        } else {
            vec![1 + rng.below(8), 1 + rng.below(8)]
        };
        let n: usize = shape.iter().product();
        let w0 = Tensor::new(shape.clone(), random_matrix(&mut rng, 1, n).into_data()).unwrap();
        let g = Tensor::new(shape.clone(), random_matrix(&mut rng, 1, n).into_data()).unwrap();
        let st0 = random_state(&mut rng, &shape);
        let hp = HyperParams {
            weight_decay: if k % 2 == 0 { 0.0 } else { 0.1 },
            ..HyperParams::default()
        };
        let lr = 1e-2;

        let (mut a, mut sa) = (w0.clone(), st0.clone());
        lamb_step(&mut a, &g, &mut sa, &hp, lr).unwrap();
        let (mut b, mut sb) = (w0.clone(), st0.clone());
        maxlamb_step_with_norm(&mut b, &g, &mut sb, &hp, lr, Norm::L2).unwrap();
        ensure(a == b && sa == sb, || format!("lamb vs l2-maxlamb differ at input {k}"))?;

        let (mut c, mut sc) = (w0.clone(), st0.clone());
        maxlamb_step(&mut c, &g, &mut sc, &hp, lr).unwrap();
        let ablated = HyperParams {
            merit: MeritVariant {
                elementwise: false,
                weight_bound: true,
                clip: false,
            },
            ..hp.clone()
        };
        let (mut e, mut se) = (w0.clone(), st0.clone());
        merit_step(&mut e, &g, &mut se, &ablated, lr).unwrap();
        ensure(c == e && sc == se, || {
            format!("maxlamb vs ablated merit differ at input {k}")
        })?;
    }
    Ok("200 inputs, bit-identical".into())
}

fn criterion_5() -> Verdict {
    let cfg = ModelConfig {
        n_layer: 2,
        n_head: 2,
        d_model: 32,
        context_len: 16,
        vocab_size: 256,
        qk_norm: false,
    };
    let mut rng = SeededRng::new(5);
    let params = init_params(&cfg, &mut rng).map_err(|e| e.to_string())?;
    let ids: Vec<u32> = (0..2 * 17).map(|_| rng.below(256) as u32).collect();
    let x = TokenBatch::from_rows(&[ids[..16].to_vec(), ids[17..33].to_vec()]).unwrap();
    let y = TokenBatch::from_rows(&[ids[1..17].to_vec(), ids[18..34].to_vec()]).unwrap();
    let lg = loss_and_grads(&cfg, &params, &x, &y).map_err(|e| e.to_string())?;
    let f = |p: &Params| loss(&cfg, p, &x, &y);

    let names: Vec<(String, usize)> = params.iter().map(|(n, t)| (n.to_string(), t.numel())).collect();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for (name, numel) in &names {
        // Token embeddings only get gradient through rows that appear in the
        // batch or through the tied output layer; sample both kinds.
        for _ in 0..6 {
            let coord = Coordinate {
                name: name.clone(),
                index: rng.below(*numel),
            };
            let fd = finite_diff_grad(f, &params, &coord, 1e-5).map_err(|e| e.to_string())?;
            let an = lg.grads.coordinate(&coord).unwrap();
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
            coords += 1;
        }
    }
    ensure(coords >= 100, || format!("only {coords} coordinates"))?;
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!(
        "{coords} coordinates over {} tensors, max relative error {worst:.2e}",
        names.len()
    ))
}

fn criterion_6() -> Verdict {
    let mut rng = SeededRng::new(6);
    let mut max_ratio = 0.0f64;
    for _ in 0..1000 {
        let (t, n, d) = (2 + rng.below(10), 2 + rng.below(24), 1 + rng.below(12));
        let x = seeded_normal(&[t, n], 0.0, 10f64.powf(rng.uniform() * 2.0 - 1.0), &mut rng).unwrap();
        let wq = seeded_normal(&[n, d], 0.0, 10f64.powf(rng.uniform() * 2.0 - 1.5), &mut rng).unwrap();
        let wk = seeded_normal(&[n, d], 0.0, 10f64.powf(rng.uniform() * 2.0 - 1.5), &mut rng).unwrap();
        let bound = logit_upper_bound(
            wq.max_norm().unwrap(),
            wk.max_norm().unwrap(),
            max_row_abs_sum(&x).unwrap(),
            d,
        )
        .map_err(|e| e.to_string())?;
        let z = attention_logits(&x, &wq, &wk).map_err(|e| e.to_string())?;
        let top = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure(top <= bound, || format!("logit {top} exceeds bound {bound}"))?;
        max_ratio = max_ratio.max(top / bound);
    }
    Ok(format!(
        "1000 triples, zero violations (largest logit/bound {max_ratio:.3})"
    ))
}

fn quad_fixture(seed: u64) -> (QuadraticFixture, Vec<f64>) {
    let n = 10;
    let mut rng = SeededRng::new(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.iter().map(|x| x / norm).collect());
    }
    let eig: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| q[k][i] * eig[k] * q[k][j]).sum();
        }
    }
    let w0 = (0..n).map(|_| rng.standard_normal()).collect();
    (QuadraticFixture::new(Tensor::new(vec![n, n], a).unwrap()).unwrap(), w0)
}

/// Steps until max |grad| ≤ 1e-3 (if reached) and the loss trace.
fn merit_w_run(f: &QuadraticFixture, w0: &[f64], eta: f64) -> (Option<usize>, Vec<f64>) {
    use merit_core::diagnostics::GradientOracle;
    let hp = HyperParams {
        beta1: 0.0,
        weight_decay: 0.0,
        merit: MeritVariant {
            elementwise: false,
            weight_bound: true,
            clip: true,
        },
        ..HyperParams::default()
    };
    let mut p = f.params(w0.to_vec()).unwrap();
    let mut st = OptimState::new(&[w0.len()]);
    let mut reached = None;
    let mut losses = Vec::with_capacity(5001);
    for t in 0..=5000 {
        let g = f.gradient(&p).unwrap();
        let g = g.get(QuadraticFixture::PARAM).unwrap().clone();
        losses.push(f.loss(&p).unwrap());
        if reached.is_none() && g.max_norm().unwrap() <= 1e-3 {
            reached = Some(t);
        }
        if t == 5000 {
            break;
        }
        let w = p.get_mut(QuadraticFixture::PARAM).unwrap();
        merit_step(w, &g, &mut st, &hp, eta).unwrap();
    }
    (reached, losses)
}

fn criterion_7() -> Verdict {
    let grid = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let fixtures: Vec<_> = (0..3).map(|s| quad_fixture(70 + s)).collect();
    let mut best: Option<(f64, f64)> = None;
    for &eta in &grid {
        let steps: Vec<f64> = fixtures
            .iter()
            .map(|(f, w0)| merit_w_run(f, w0, eta).0.map_or(f64::INFINITY, |s| s as f64))
            .collect();
        let med = median(steps);
        if med.is_finite() && best.is_none_or(|(_, b)| med < b) {
            best = Some((eta, med));
        }
    }
    let (eta, med_steps) = best.ok_or("no learning rate on the grid converged within 5000 steps")?;
    let runs: Vec<Vec<f64>> = fixtures.iter().map(|(f, w0)| merit_w_run(f, w0, eta).1).collect();
    let median_curve: Vec<f64> = (0..runs[0].len())
        .map(|t| median(runs.iter().map(|r| r[t]).collect()))
        .collect();
    let rises = median_curve[50..].windows(2).filter(|w| w[1] > w[0]).count();
    ensure(rises == 0, || {
        format!("median loss rises {rises} times after step 50 at eta {eta}")
    })?;
    Ok(format!(
        "eta {eta:e}: median {med_steps} steps to max|grad| <= 1e-3, loss non-increasing after step 50"
    ))
}

fn toy_config(optimizer: &str, seed: u64, lr: f64, steps: u64, out: &std::path::Path) -> TrainConfig {
    let src = format!(
        r#"
optimizer = "{optimizer}"
batch_size_sequences = 256
seed = {seed}
eval_interval = 100000
eval_sequences = 256
out_dir = "{}"

[model]
n_layer = 4
n_head = 2
d_model = 16
context_len = 16

[data.synthetic]
length = 200000
order = 2
alphabet = 8
branching = 2

[schedule]
total_steps = {steps}

[hp]
peak_lr = {lr}
"#,
        out.display()
    );
    TrainConfig::from_toml_str(&src).unwrap()
}

/// Peak max attention logit per layer and the mean attention entropy over
/// all steps of a run.
fn attention_profile(cfg: &TrainConfig) -> Result<(Vec<f64>, f64), String> {
    let mut s = Session::new(cfg).map_err(|e| e.to_string())?;
    let mut peak = vec![f64::NEG_INFINITY; cfg.model.n_layer];
    let mut entropy = Vec::new();
    for _ in 0..cfg.schedule.total_steps {
        let r = s.step(cfg.hp.peak_lr).map_err(|e| e.to_string())?;
        if r.diverged {
            return Ok((vec![f64::INFINITY; peak.len()], 0.0));
        }
        for (p, v) in peak.iter_mut().zip(&r.per_layer_max_logit) {
            *p = p.max(*v);
        }
        entropy.push(r.mean_attention_entropy);
    }
    Ok((peak, entropy.iter().sum::<f64>() / entropy.len() as f64))
}

fn criterion_8() -> Verdict {
    let (lr, steps) = (1e-2, 150);
    let dir = std::env::temp_dir();
    let mut rows = Vec::new();
    for opt in ["merit", "adamw"] {
        let mut peaks = Vec::new();
        let mut layer_peaks: Vec<Vec<f64>> = vec![Vec::new(); 4];
        let mut ents = Vec::new();
        for seed in 0..3 {
            let (p, e) = attention_profile(&toy_config(opt, seed, lr, steps, &dir))?;
            peaks.push(p.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            for (l, v) in p.into_iter().enumerate() {
                layer_peaks[l].push(v);
            }
            ents.push(e);
        }
        let per_layer: Vec<f64> = layer_peaks.into_iter().map(median).collect();
        rows.push((opt, median(peaks), per_layer, median(ents)));
    }
    let (merit, adamw) = (&rows[0], &rows[1]);
    let detail = format!(
        "lr {lr:e}: median per-layer peak MAL merit {:.3?} vs adamw {:.3?} (worst layer {:.3} vs {:.3}); median entropy {:.4} vs {:.4}",
        merit.2, adamw.2, merit.1, adamw.1, merit.3, adamw.3
    );
    let layers_hold = merit.2.iter().zip(&adamw.2).all(|(m, a)| m <= a);
    ensure(layers_hold && merit.3 >= adamw.3, || detail.clone())?;
    Ok(detail)
}

fn criterion_9() -> Verdict {
    let steps = 2000;
    let grids: [(&str, [f64; 3]); 3] = [
        ("merit", [3e-3, 9e-3, 2.7e-2]),
        ("lamb", [3e-3, 1e-2, 3e-2]),
        ("adamw", [1e-3, 3e-3, 1e-2]),
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    for (opt, grid) in grids {
        let mut best = (f64::INFINITY, grid[0]);
        for lr in grid {
            let cfg = toy_config(opt, 0, lr, steps, &root.path().join(format!("{opt}-{lr}")));
            let v = train(&cfg)
                .map_err(|e| e.to_string())?
                .final_val_loss
                .unwrap_or(f64::INFINITY);
            eprintln!("  tune {opt} lr {lr:e}: val {v:.4}");
            if v < best.0 {
                best = (v, lr);
            }
        }
        let mut vals = vec![best.0];
        for seed in 1..3 {
            let cfg = toy_config(opt, seed, best.1, steps, &root.path().join(format!("{opt}-s{seed}")));
            vals.push(
                train(&cfg)
                    .map_err(|e| e.to_string())?
                    .final_val_loss
                    .unwrap_or(f64::INFINITY),
            );
        }
        eprintln!("  {opt} at lr {:e}: {vals:?}", best.1);
        finals.push((opt, median(vals)));
    }
    let detail = format!(
        "median final val loss merit {:.4}, lamb {:.4}, adamw {:.4}",
        finals[0].1, finals[1].1, finals[2].1
    );
    ensure(finals[0].1 <= finals[1].1 && finals[1].1 <= finals[2].1, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn criterion_10() -> Verdict {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mk = |sub: &str| {
        let mut cfg = toy_config("merit", 3, 1e-2, 8, &root.path().join(sub));
        cfg.batch_size_sequences = 8;
        cfg.eval_interval = 4;
        cfg.eval_sequences = 8;
        cfg
    };
    let a = train(&mk("a")).map_err(|e| e.to_string())?;
    let b = train(&mk("b")).map_err(|e| e.to_string())?;
    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| e.to_string());
    ensure(read(&a.metrics_path)? == read(&b.metrics_path)?, || {
        "metrics files differ".into()
    })?;

    let bytes = read(&a.checkpoint_path)?;
    let again = Checkpoint::from_bytes(&bytes)
        .map_err(|e| e.to_string())?
        .to_bytes()
        .map_err(|e| e.to_string())?;
    ensure(bytes == again, || "checkpoint round trip changed bytes".into())?;

    let cfg = mk("c");
    let session = Session::new(&cfg).map_err(|e| e.to_string())?;
    let micro: Vec<(TokenBatch, TokenBatch)> = (0..4)
        .map(|m| next_batch(&session.data().train, 9, 1, m, 8, 16).unwrap())
        .collect();
    let (la, ga, _, _) = accumulate_grads(&cfg.model, session.params(), &micro).map_err(|e| e.to_string())?;
    let big = (
        TokenBatch::concat(&micro.iter().map(|m| m.0.clone()).collect::<Vec<_>>()).unwrap(),
        TokenBatch::concat(&micro.iter().map(|m| m.1.clone()).collect::<Vec<_>>()).unwrap(),
    );
    let (lb, gb, _, _) = accumulate_grads(&cfg.model, session.params(), &[big]).map_err(|e| e.to_string())?;
    let mut diff = ga.clone();
    diff.axpy(-1.0, &gb).unwrap();
    let worst = diff
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .fold((la - lb).abs(), |m, x| m.max(x.abs()));
    ensure(worst <= 1e-10, || format!("accumulation deviates by {worst:e}"))?;
    Ok(format!(
        "metrics identical, checkpoint {} bytes round-trips, accumulation deviation {worst:e}",
        bytes.len()
    ))
}

fn criterion_11() -> Verdict {
    let diag: Vec<f64> = (1..=10).map(f64::from).collect();
    let f = QuadraticFixture::diagonal(&diag).unwrap();
    let w = f.params(vec![0.5; 10]).unwrap();
    let rep = top_eigenvalue(&f, &w, &CurvatureOptions::default()).map_err(|e| e.to_string())?;
    ensure((rep.top_eigenvalue - 10.0).abs() <= 1e-4, || {
        format!("top eigenvalue {}", rep.top_eigenvalue)
    })?;
    ensure((rep.trace_estimate - 55.0).abs() <= 0.05 * 55.0, || {
        format!("trace {}", rep.trace_estimate)
    })?;
    ensure(rep.probes_used == 100, || "probe count".into())?;

    let ng = norm_gap_ratio(&Tensor::eye(2)).unwrap();
    let expect = (2f64.sqrt() - 1.0) / 2f64.sqrt();
    ensure((ng - expect).abs() <= 1e-12, || format!("norm gap {ng}"))?;

    let mut rng = SeededRng::new(11);
    for _ in 0..500 {
        let (m, n) = (1 + rng.below(9), 1 + rng.below(9));
        let w = random_matrix(&mut rng, m, n);
        let d = random_matrix(&mut rng, m, n);
        let tr = merit_trust_ratios(&w, &d).unwrap();
        let mut bound = 0usize;
        for i in 0..m {
            for j in 0..n {
                if tr.b > tr.r.data()[i].max(tr.c.data()[j]) {
                    bound += 1;
                }
            }
        }
        ensure(count_bound_active(&tr) == bound, || "bound count".into())?;
        ensure(bound_trigger_ratio(&tr) == bound as f64 / (m * n) as f64, || {
            "bound ratio".into()
        })?;
        let pre = d.scale(1.0 / d.max_norm().unwrap().max(1e-300) * 2.0 * rng.uniform());
        let clipped = pre.data().iter().filter(|x| x.abs() > 1.0).count();
        ensure(clip_trigger_ratio(&pre) == clipped as f64 / (m * n) as f64, || {
            "clip ratio".into()
        })?;
    }
    Ok(format!(
        "top eigenvalue {:.6}, trace {:.3}, norm gap {ng:.12}, trigger counts exact",
        rep.top_eigenvalue, rep.trace_estimate
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let run_ignored = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 11] = [
        (
            1,
            "ratio oracle equivalence",
            criterion_1,
            Duration::from_secs(5),
            false,
        ),
        (2, "algorithm structure", criterion_2, Duration::from_secs(10), false),
        (3, "scalar closed form", criterion_3, Duration::from_secs(1), false),
        (4, "ablation algebra", criterion_4, Duration::from_secs(5), false),
        (5, "gradient exactness", criterion_5, Duration::from_secs(120), false),
        (6, "logit bound dominance", criterion_6, Duration::from_secs(30), false),
        (7, "convex smoke test", criterion_7, Duration::from_secs(10), false),
        (
            8,
            "max attention logit, merit vs adamw",
            criterion_8,
            Duration::from_secs(900),
            false,
        ),
        (9, "final loss ordering (soft)", criterion_9, Duration::MAX, true),
        (
            10,
            "determinism and persistence",
            criterion_10,
            Duration::from_secs(120),
            false,
        ),
        (11, "diagnostic fixtures", criterion_11, Duration::from_secs(30), false),
    ];
    let mut hard_failures = 0;
    for (id, name, run, budget, soft) in criteria {
        if soft && !run_ignored {
            println!("SKIP criterion {id} ({name}): long-running, pass --include-ignored to run");
            continue;
        }
        let t0 = Instant::now();
        let verdict = run();
        let took = t0.elapsed();
        let verdict = match verdict {
            Ok(msg) if took > budget => Err(format!("{msg}; took {took:.1?}, budget {budget:.0?}")),
            other => other,
        };
        match verdict {
            Ok(msg) => println!("PASS criterion {id} ({name}) [{took:.1?}]: {msg}"),
            Err(msg) => {
                println!("FAIL criterion {id} ({name}) [{took:.1?}]: {msg}");
                if !soft {
                    hard_failures += 1;
                }
            }
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} hard criteria failed");
        std::process::exit(1);
    }
}
