//! Central finite-difference oracle shared by the gradient tests and the
//! acceptance run. Every check returns the worst relative error it saw.

use lvrc::mol::{grad_all, BaselineSpec, ElementObjective, Regularizer};
use lvrc::model::{LossConfig, ModelConfig, Segment, WaveGruModel};
use lvrc::nn::{Conv1d, Dense, GruCell, Module, Parameter, TransposeConv1d, WeightMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Perturbs every parameter entry (or `sample` random entries per tensor)
/// of `module` and compares `d loss / d theta` with the accumulated gradient.
fn check_params<M: Module + Clone>(
    module: &M,
    grads: &M,
    loss: &dyn Fn(&M) -> f64,
    sample: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    grads.visit(&mut |p| analytic.push(p.grad.clone()));
    let mut worst: f64 = 0.0;
    for (pi, g) in analytic.iter().enumerate() {
        let idx: Vec<usize> = match sample {
            Some(k) if k < g.len() => (0..k).map(|_| rng.gen_range(0..g.len())).collect(),
            _ => (0..g.len()).collect(),
        };
        for i in idx {
            let eval = |delta: f64| {
                let mut m = module.clone();
                let mut which = 0;
                m.visit_mut(&mut |p: &mut Parameter| {
                    if which == pi {
                        p.value.values[i] += delta;
                    }
                    which += 1;
                });
                loss(&m)
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(g[i], numeric));
        }
    }
    worst
}

fn check_vec(analytic: &[f64], x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += STEP;
        xm[i] -= STEP;
        let numeric = (f(&xp) - f(&xm)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Random linear functional used as a scalar loss.
fn project(v: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
    v.iter().flatten().zip(w.iter().flatten()).map(|(a, b)| a * b).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dense_layer() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = [1, 2, 4][seed as usize % 3];
        let layer = Dense::new("d", 8, 4, blocks, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 8);
        let w = rand_vec(&mut rng, 4);
        let loss = |m: &Dense| dot(&m.forward(&x).unwrap(), &w);
        let mut g = layer.clone();
        let mut dx = vec![0.0; 8];
        g.backward(&x, &w, Some(&mut dx));
        worst = worst.max(check_params(&layer, &g, &loss, None, &mut rng));
        let fx = |xv: &[f64]| dot(&layer.forward(xv).unwrap(), &w);
        worst = worst.max(check_vec(&dx, &x, &fx));
    }
    worst
}

pub fn block_diagonal_matrix() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let m = WeightMatrix::glorot("w", 16, 16, 4, &mut rng).unwrap();
        let x = rand_vec(&mut rng, 16);
        let w = rand_vec(&mut rng, 16);
        let loss = |m: &WeightMatrix| {
            let mut y = vec![0.0; 16];
            m.matvec_acc(&x, &mut y);
            dot(&y, &w)
        };
        let mut g = m.clone();
        g.backward(&x, &w, None);
        worst = worst.max(check_params(&m, &g, &loss, None, &mut rng));
    }
    worst
}

pub fn gru_cell() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let blocks = if seed % 2 == 0 { 1 } else { 2 };
        let mut cell = GruCell::new("g", 4, 6, blocks, &mut rng).unwrap();
        cell.visit_mut(&mut |p| p.value.values.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3)));
        let x = rand_vec(&mut rng, 4);
        let h = rand_vec(&mut rng, 6);
        let w = rand_vec(&mut rng, 6);
        let loss = |c: &GruCell| dot(&c.step(&x, &h).0, &w);
        let mut g = cell.clone();
        let (_, cache) = cell.step(&x, &h);
        let (dx, dh) = g.backward(&cache, &w);
        worst = worst.max(check_params(&cell, &g, &loss, None, &mut rng));
        let fx = |xv: &[f64]| dot(&cell.step(xv, &h).0, &w);
        worst = worst.max(check_vec(&dx, &x, &fx));
        let fh = |hv: &[f64]| dot(&cell.step(&x, hv).0, &w);
        worst = worst.max(check_vec(&dh, &h, &fh));
    }
    worst
}

pub fn causal_dilated_conv() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let d = 1 + seed as usize % 4;
        let conv = Conv1d::causal("c", 3, 2, d, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..9).map(|_| rand_vec(&mut rng, 3)).collect();
        let ws: Vec<Vec<f64>> = (0..9).map(|_| rand_vec(&mut rng, 2)).collect();
        let loss = |c: &Conv1d| project(&c.forward(&xs).unwrap(), &ws);
        let mut g = conv.clone();
        let dxs = g.backward(&xs, &ws);
        worst = worst.max(check_params(&conv, &g, &loss, None, &mut rng));
        let fx = |v: &[f64]| {
            let seq: Vec<Vec<f64>> = v.chunks(3).map(|c| c.to_vec()).collect();
            project(&conv.forward(&seq).unwrap(), &ws)
        };
        worst = worst.max(check_vec(&dxs.concat(), &xs.concat(), &fx));
    }
    worst
}

pub fn centered_conv() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let conv = Conv1d::centered("c", 3, 2, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, 3)).collect();
        let ws: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, 2)).collect();
        let loss = |c: &Conv1d| project(&c.forward(&xs).unwrap(), &ws);
        let mut g = conv.clone();
        let dxs = g.backward(&xs, &ws);
        worst = worst.max(check_params(&conv, &g, &loss, None, &mut rng));
        let fx = |v: &[f64]| {
            let seq: Vec<Vec<f64>> = v.chunks(3).map(|c| c.to_vec()).collect();
            project(&conv.forward(&seq).unwrap(), &ws)
        };
        worst = worst.max(check_vec(&dxs.concat(), &xs.concat(), &fx));
    }
    worst
}

pub fn transpose_conv() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let tc = TransposeConv1d::new("t", 3, 2, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 3)).collect();
        let ws: Vec<Vec<f64>> = (0..8).map(|_| rand_vec(&mut rng, 2)).collect();
        let loss = |t: &TransposeConv1d| project(&t.forward(&xs).unwrap(), &ws);
        let mut g = tc.clone();
        let dxs = g.backward(&xs, &ws);
        worst = worst.max(check_params(&tc, &g, &loss, None, &mut rng));
        let fx = |v: &[f64]| {
            let seq: Vec<Vec<f64>> = v.chunks(3).map(|c| c.to_vec()).collect();
            project(&tc.forward(&seq).unwrap(), &ws)
        };
        worst = worst.max(check_vec(&dxs.concat(), &xs.concat(), &fx));
    }
    worst
}

fn random_raw(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut raw = Vec::with_capacity(3 * k);
    raw.extend((0..k).map(|_| rng.gen_range(-2.0..2.0)));
    raw.extend((0..k).map(|_| rng.gen_range(-1.0..1.0)));
    raw.extend((0..k).map(|_| rng.gen_range(-3.0..0.5)));
    raw
}

/// Per-element objective over `configs` random mixtures, K in 1..=8.
pub fn objective(objective: ElementObjective, seed_base: u64, configs: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + seed);
        let k = rng.gen_range(1..=8);
        let raw = random_raw(&mut rng, k);
        let x = rng.gen_range(-1.5..1.5);
        let nu = [0.0, 0.01, 1.0][seed as usize % 3];
        let g = grad_all(x, &raw, nu, &objective).unwrap();
        let f = |r: &[f64]| objective.value(x, r, nu).unwrap();
        worst = worst.max(check_vec(&g, &raw, &f));
    }
    worst
}

pub fn objective_linear() -> f64 {
    objective(ElementObjective::plain(Regularizer::Linear), 1000, 100)
}

pub fn objective_log() -> f64 {
    objective(ElementObjective::plain(Regularizer::Log { floor: 1e-4 }), 2000, 100)
}

pub fn objective_baseline(gamma0: f64) -> f64 {
    let objective = ElementObjective {
        regularizer: Regularizer::Log { floor: 1e-4 },
        baseline: Some(BaselineSpec { gamma0, mu0: 0.0, s0: 2.0 }),
    };
    self::objective(objective, 3000, 100)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        sample_rate: 1600,
        frame_rate: 50,
        n_bands: 4,
        n_mix: 3,
        gru_state: 8,
        cond_channels: 6,
        n_mels: 5,
        gru_blocks: 2,
    }
}

pub fn random_segment(rng: &mut ChaCha8Rng, cfg: &ModelConfig, steps: usize) -> Segment {
    let n = cfg.n_bands;
    Segment {
        mels: (0..4).map(|_| rand_vec(rng, cfg.n_mels)).collect(),
        first_frame: 2,
        prev: rand_vec(rng, n).iter().map(|v| 0.5 * v).collect(),
        targets: (0..steps).map(|_| rand_vec(rng, n).iter().map(|v| 0.5 * v).collect()).collect(),
        voicing: vec![rng.gen_range(0.0..1.0); 2],
    }
}

/// Whole-model gradient of the segment loss; also insists the training and
/// value-only paths agree exactly.
pub fn model(cfg: ModelConfig, loss_cfg: LossConfig, steps: usize, sample: Option<usize>, seeds: std::ops::Range<u64>) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = WaveGruModel::new(cfg.clone(), &mut rng).unwrap();
        let seg = random_segment(&mut rng, &cfg, steps);
        let mut g = model.clone();
        g.zero_grad();
        let terms = g.segment_loss(&seg, &loss_cfg, 1.0).unwrap();
        let value = model.segment_loss_value(&seg, &loss_cfg).unwrap();
        assert_eq!(terms, value);
        let loss = |m: &WaveGruModel| m.segment_loss_value(&seg, &loss_cfg).unwrap().loss;
        worst = worst.max(check_params(&model, &g, &loss, sample, &mut rng));
    }
    worst
}

pub fn model_two_steps() -> f64 {
    let loss = LossConfig { nu: 0.5, ..LossConfig::default() };
    model(tiny_config(), loss, 2, None, 0..SEEDS)
}

pub fn model_crossing_frames() -> f64 {
    // 1600 Hz / 4 bands = 400 steps/s, tile 1, 8 steps per frame
    let loss = LossConfig {
        nu: 0.3,
        regularizer: Regularizer::Linear,
        baseline: Some(BaselineSpec { gamma0: 0.3, mu0: 0.0, s0: 1.0 }),
        reg_bands: 2,
    };
    model(tiny_config(), loss, 11, None, 10..13)
}

pub fn toy_model_sampled() -> f64 {
    let loss = LossConfig { nu: 0.01, ..LossConfig::default() };
    model(ModelConfig::toy(), loss, 2, Some(6), 77..78)
}

/// Every check in the suite, labelled.
pub fn suite() -> Vec<(&'static str, f64)> {
    vec![
        ("dense", dense_layer()),
        ("block-diagonal matrix", block_diagonal_matrix()),
        ("gru cell", gru_cell()),
        ("causal dilated conv", causal_dilated_conv()),
        ("centered conv", centered_conv()),
        ("transpose conv", transpose_conv()),
        ("objective, linear regularizer", objective_linear()),
        ("objective, log regularizer", objective_log()),
        ("objective, baseline gamma0=0", objective_baseline(0.0)),
        ("objective, baseline gamma0=0.3", objective_baseline(0.3)),
        ("model, 2 steps", model_two_steps()),
        ("model, crossing frames", model_crossing_frames()),
        ("toy model, sampled", toy_model_sampled()),
    ]
}
