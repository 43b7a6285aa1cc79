//! Closed-form conjugate refreshes of `q(υ)`, `q(ω)`, `q(π)` and `q(ρ)`.
//!
//! Every function reads the state it is given and returns a new factor; none
//! of them mutates the state. [`conjugate_sweep`] evaluates all four against
//! one snapshot, so their order inside a sweep does not matter.

use crate::error::Result;
use crate::grid::{ImageGrid, StencilOperator};
use crate::model::{softmax_channels, BetaVector, Epsilon, GammaField, Hyperparams, VariationalState};

/// Which residual drives the `q(ρ)` refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoSource {
    /// One reparameterised sample of `x` and `m`.
    Sample,
    /// The exact expectation `(y − μx − μm)² + σx² + σm²`.
    Expectation,
}

/// Line field: shape `γυ + K/2`, rate
/// `φυ + ½ Σ_k w_k [(D μx)² + Σ_j D_ij² σx_j²]`, with `w = softmax(μz)`.
pub fn update_q_upsilon(
    state: &VariationalState,
    h: &Hyperparams,
    op: &StencilOperator,
) -> Result<GammaField> {
    let k = state.k() as f64;
    let dmx = op.apply(&state.q_x.mean[0])?;
    let spread = op.row_squared_apply(&state.q_x.variance(0))?;
    let weights = softmax_channels(&state.q_z.mean);
    let (w, ht) = (state.width(), state.height());
    let rate: Vec<f64> = (0..state.pixels())
        .map(|i| {
            let wsum: f64 = weights.iter().map(|g| g.data()[i]).sum();
            let e = dmx.data()[i].powi(2) + spread.data()[i];
            h.phi_upsilon + 0.5 * wsum * e
        })
        .collect();
    GammaField::new(
        vec![ImageGrid::filled(w, ht, h.gamma_upsilon + 0.5 * k)],
        vec![ImageGrid::new(w, ht, rate)?],
    )
}

/// Boundary fields: shape `γω + ½`, rate
/// `φω + ½ E[−ln(1−π_k)] [(D μz_k)² + Σ_j D_ij² σz_kj²]`.
pub fn update_q_omega(
    state: &VariationalState,
    h: &Hyperparams,
    op: &StencilOperator,
) -> Result<GammaField> {
    let brackets = state.q_pi.brackets();
    let (w, ht) = (state.width(), state.height());
    let mut shape = Vec::with_capacity(state.k());
    let mut rate = Vec::with_capacity(state.k());
    for (c, &b) in brackets.iter().enumerate() {
        let dmz = op.apply(&state.q_z.mean[c])?;
        let spread = op.row_squared_apply(&state.q_z.variance(c))?;
        let r = dmz.zip_map(&spread, |d, s| h.phi_omega + 0.5 * b * (d * d + s))?;
        shape.push(ImageGrid::filled(w, ht, h.gamma_omega + 0.5));
        rate.push(r);
    }
    GammaField::new(shape, rate)
}

/// Class probabilities: `α̂_k = α_π + d/2`,
/// `β̂_k = β_π + ½ Σ_i E[ω_ki] [(D μz_k)_i² + 2 σz_ki²]`.
pub fn update_q_pi(
    state: &VariationalState,
    h: &Hyperparams,
    op: &StencilOperator,
) -> Result<BetaVector> {
    let d = state.pixels() as f64;
    let mut alpha = Vec::with_capacity(state.k());
    let mut beta = Vec::with_capacity(state.k());
    for c in 0..state.k() {
        let dmz = op.apply(&state.q_z.mean[c])?;
        let vz = state.q_z.variance(c);
        let om = state.q_omega.mean(c);
        let s: f64 = (0..state.pixels())
            .map(|i| om.data()[i] * (dmz.data()[i].powi(2) + 2.0 * vz.data()[i]))
            .fold(0.0, |a, v| a + v);
        alpha.push(h.alpha_pi + 0.5 * d);
        beta.push(h.beta_pi + 0.5 * s);
    }
    BetaVector::new(alpha, beta)
}

/// Basis precision from sampled contour and basis: shape `γρ + ½`, rate
/// `φρ + ½ (y − x − m)²`, so the mean is `(2γρ + 1)/(r² + 2φρ)`.
pub fn update_q_rho(
    state: &VariationalState,
    h: &Hyperparams,
    y: &ImageGrid,
    x_sample: &ImageGrid,
    m_sample: &ImageGrid,
) -> Result<GammaField> {
    let reference = &state.q_x.mean[0];
    reference.ensure_shape(y)?;
    reference.ensure_shape(x_sample)?;
    reference.ensure_shape(m_sample)?;
    let rate: Vec<f64> = y
        .data()
        .iter()
        .zip(x_sample.data())
        .zip(m_sample.data())
        .map(|((&yi, &xi), &mi)| h.phi_rho + 0.5 * (yi - xi - mi).powi(2))
        .collect();
    rho_field(state, h, rate)
}

/// Deterministic variant of [`update_q_rho`] using
/// `E[(y − x − m)²] = (y − μx − μm)² + σx² + σm²`.
pub fn update_q_rho_expected(
    state: &VariationalState,
    h: &Hyperparams,
    y: &ImageGrid,
) -> Result<GammaField> {
    state.q_x.mean[0].ensure_shape(y)?;
    let vx = state.q_x.variance(0);
    let vm = state.q_m.variance(0);
    let rate: Vec<f64> = (0..state.pixels())
        .map(|i| {
            let r = y.data()[i] - state.q_x.mean[0].data()[i] - state.q_m.mean[0].data()[i];
            h.phi_rho + 0.5 * (r * r + vx.data()[i] + vm.data()[i])
        })
        .collect();
    rho_field(state, h, rate)
}

fn rho_field(state: &VariationalState, h: &Hyperparams, rate: Vec<f64>) -> Result<GammaField> {
    let (w, ht) = (state.width(), state.height());
    GammaField::new(
        vec![ImageGrid::filled(w, ht, h.gamma_rho + 0.5)],
        vec![ImageGrid::new(w, ht, rate)?],
    )
}

/// New Gamma/Beta factors from one state snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateFactors {
    pub q_rho: GammaField,
    pub q_upsilon: GammaField,
    pub q_omega: GammaField,
    pub q_pi: BetaVector,
}

impl ConjugateFactors {
    pub fn apply_to(self, state: &mut VariationalState) {
        state.q_rho = self.q_rho;
        state.q_upsilon = self.q_upsilon;
        state.q_omega = self.q_omega;
        state.q_pi = self.q_pi;
    }
}

/// All four refreshes against the same snapshot. With [`RhoSource::Sample`]
/// the first Monte-Carlo replicate of `eps` supplies the residual.
pub fn conjugate_sweep(
    state: &VariationalState,
    h: &Hyperparams,
    op: &StencilOperator,
    y: &ImageGrid,
    eps: &Epsilon,
    rho: RhoSource,
) -> Result<ConjugateFactors> {
    let q_rho = match rho {
        RhoSource::Sample => {
            let xs = state.q_x.sample_with(&eps.x[..1]);
            let ms = state.q_m.sample_with(&eps.m[..1]);
            update_q_rho(state, h, y, &xs[0], &ms[0])?
        }
        RhoSource::Expectation => update_q_rho_expected(state, h, y)?,
    };
    Ok(ConjugateFactors {
        q_rho,
        q_upsilon: update_q_upsilon(state, h, op)?,
        q_omega: update_q_omega(state, h, op)?,
        q_pi: update_q_pi(state, h, op)?,
    })
}
