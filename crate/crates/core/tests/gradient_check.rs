//! Central finite differences against the analytic loss gradient.

#![allow(clippy::needless_range_loop)]

mod common;

use bayeseg::grid::{ImageGrid, StencilOperator};
use bayeseg::model::Epsilon;
use bayeseg::var_loss::{evaluate_loss, grad_var_loss};
use common::{instance, worst_error, REL_TOL};

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..30 {
        let inst = instance(seed);
        let sup = worst_error(&inst, true);
        let unsup = worst_error(&inst, false);
        assert!(sup <= REL_TOL, "seed {seed}: supervised rel error {sup:e}");
        assert!(unsup <= REL_TOL, "seed {seed}: unsupervised rel error {unsup:e}");
    }
}

#[test]
fn sigma_terms_are_minimised_by_gradient_descent() {
    // each σ-term has the form a·σ² − b·ln σ² with minimiser σ² = b/a
    let mut inst = instance(99);
    inst.eps = Epsilon::zeros(6, 6, 2, 1);
    inst.y = ImageGrid::zeros(6, 6);
    for f in [&mut inst.state.q_x, &mut inst.state.q_m, &mut inst.state.q_z] {
        for m in f.mean.iter_mut() {
            *m = ImageGrid::zeros(6, 6);
        }
    }
    inst.h.lambda = 1.0;
    let op = StencilOperator::new(6, 6);
    let mut s = inst.state.clone();
    for _ in 0..4000 {
        let g = grad_var_loss(&s, &inst.y, None, &inst.h, &op, &inst.eps).unwrap();
        for (p, d) in s.q_x.log_variance.iter_mut().zip(&g.x.log_variance)
            .chain(s.q_m.log_variance.iter_mut().zip(&g.m.log_variance))
            .chain(s.q_z.log_variance.iter_mut().zip(&g.z.log_variance))
        {
            for (v, dv) in p.data_mut().iter_mut().zip(d.data()) {
                *v -= 0.2 * dv;
            }
        }
    }
    let ups = s.q_upsilon.mean(0);
    let brackets = s.q_pi.brackets();
    for i in 0..36 {
        // softmax weights sum to one, so the contour minimiser is 1/(2υ)
        let vx = s.q_x.log_variance[0].data()[i].exp();
        let want = 1.0 / (2.0 * ups.data()[i]);
        assert!((vx / want - 1.0).abs() < 1e-4, "x {vx} vs {want}");
        let vm = s.q_m.log_variance[0].data()[i].exp();
        assert!((vm - 1.0 / inst.h.sigma0).abs() < 1e-4);
        for c in 0..2 {
            let vz = s.q_z.log_variance[c].data()[i].exp();
            let want = 1.0 / (2.0 * s.q_omega.mean(c).data()[i]);
            assert!((vz / want - 1.0).abs() < 1e-4, "z {vz} vs {want} (b {})", brackets[c]);
        }
    }
}

#[test]
fn loss_is_invariant_under_class_permutation() {
    let inst = instance(7);
    let op = StencilOperator::new(6, 6);
    let base = evaluate_loss(&inst.state, &inst.y, None, &inst.h, &op, &inst.eps).unwrap();
    let mut s = inst.state.clone();
    s.q_z.mean.swap(0, 1);
    s.q_z.log_variance.swap(0, 1);
    s.q_omega.shape.swap(0, 1);
    s.q_omega.rate.swap(0, 1);
    s.q_pi.alpha.swap(0, 1);
    s.q_pi.beta.swap(0, 1);
    let mut eps = inst.eps.clone();
    for zs in eps.z.iter_mut() {
        zs.swap(0, 1);
    }
    let perm = evaluate_loss(&s, &inst.y, None, &inst.h, &op, &eps).unwrap();
    assert!((perm.l_var - base.l_var).abs() <= 1e-12 * base.l_var.abs());
}
