//! Random 6×6 instances and a central-difference gradient check.

#![allow(dead_code, clippy::needless_range_loop)]

use bayeseg::grid::{ImageGrid, StencilOperator};
use bayeseg::model::{init_state, BetaVector, Epsilon, GammaField, Hyperparams, VariationalState};
use bayeseg::var_loss::{evaluate_loss, grad_var_loss, Gradient, Supervision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
// relative errors are measured against max(|analytic|, |numeric|, FLOOR)
pub const FLOOR: f64 = 1e-2;

pub struct Instance {
    pub state: VariationalState,
    pub y: ImageGrid,
    pub labels: ImageGrid,
    pub mask: ImageGrid,
    pub eps: Epsilon,
    pub h: Hyperparams,
}

fn grid(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ImageGrid {
    let data = (0..36).map(|_| rng.random_range(lo..hi)).collect();
    ImageGrid::new(6, 6, data).unwrap()
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Hyperparams::with_k(2);
    let y = grid(&mut rng, -1.0, 1.0);
    let mut state = init_state(&y, &h, seed).unwrap();
    state.q_x.mean[0] = grid(&mut rng, -1.0, 1.0);
    state.q_x.log_variance[0] = grid(&mut rng, -3.0, 0.5);
    state.q_m.mean[0] = grid(&mut rng, -1.0, 1.0);
    state.q_m.log_variance[0] = grid(&mut rng, -3.0, 0.5);
    for c in 0..2 {
        state.q_z.mean[c] = grid(&mut rng, -2.0, 2.0);
        state.q_z.log_variance[c] = grid(&mut rng, -3.0, 0.5);
    }
    let gamma = |rng: &mut ChaCha8Rng, ch: usize| {
        GammaField::new(
            (0..ch).map(|_| grid(rng, 0.5, 3.0)).collect(),
            (0..ch).map(|_| grid(rng, 0.5, 3.0)).collect(),
        )
        .unwrap()
    };
    state.q_rho = gamma(&mut rng, 1);
    state.q_upsilon = gamma(&mut rng, 1);
    state.q_omega = gamma(&mut rng, 2);
    state.q_pi = BetaVector::new(
        vec![rng.random_range(1.0..20.0), rng.random_range(1.0..20.0)],
        vec![rng.random_range(1.0..20.0), rng.random_range(1.0..20.0)],
    )
    .unwrap();
    let labels = ImageGrid::new(6, 6, (0..36).map(|_| rng.random_range(0..2) as f64).collect()).unwrap();
    let mask = ImageGrid::from_fn(6, 6, |r, c| if (r + c) % 5 == 0 { 0.0 } else { 1.0 });
    let eps = Epsilon::draw(seed, 0, 6, 6, 2, 2);
    Instance { state, y, labels, mask, eps, h }
}

/// (factor, is_log_variance, channel) for every parameter grid.
fn slots() -> Vec<(char, bool, usize)> {
    let mut v = Vec::new();
    for lv in [false, true] {
        v.push(('x', lv, 0));
        v.push(('m', lv, 0));
        v.push(('z', lv, 0));
        v.push(('z', lv, 1));
    }
    v
}

fn param(state: &mut VariationalState, (f, lv, c): (char, bool, usize)) -> &mut ImageGrid {
    let field = match f {
        'x' => &mut state.q_x,
        'm' => &mut state.q_m,
        _ => &mut state.q_z,
    };
    if lv {
        &mut field.log_variance[c]
    } else {
        &mut field.mean[c]
    }
}

fn analytic(g: &Gradient, (f, lv, c): (char, bool, usize)) -> &ImageGrid {
    let field = match f {
        'x' => &g.x,
        'm' => &g.m,
        _ => &g.z,
    };
    if lv {
        &field.log_variance[c]
    } else {
        &field.mean[c]
    }
}

pub fn worst_error(inst: &Instance, supervised: bool) -> f64 {
    let op = StencilOperator::new(6, 6);
    let sup = supervised.then(|| Supervision::with_mask(&inst.labels, &inst.mask));
    let g = grad_var_loss(&inst.state, &inst.y, sup, &inst.h, &op, &inst.eps).unwrap();
    let mut worst: f64 = 0.0;
    for slot in slots() {
        for i in 0..36 {
            let mut s = inst.state.clone();
            let base = param(&mut s, slot).data()[i];
            param(&mut s, slot).data_mut()[i] = base + STEP;
            let up = evaluate_loss(&s, &inst.y, sup, &inst.h, &op, &inst.eps).unwrap().total;
            param(&mut s, slot).data_mut()[i] = base - STEP;
            let down = evaluate_loss(&s, &inst.y, sup, &inst.h, &op, &inst.eps).unwrap().total;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic(&g, slot).data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

