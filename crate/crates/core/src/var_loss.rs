//! Variational loss terms, cross-entropy and their analytic gradients.
//!
//! Gradients are taken with respect to the means and log-variances of the
//! three Gaussian factors. Gamma and Beta factors enter as constants; they
//! are refreshed only by the closed-form updates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, StencilOperator};
use crate::model::{
    softmax_channels, standard_normal_grid, Epsilon, GaussianField, GammaField, BetaVector,
    Hyperparams, VariationalState,
};

/// Individual loss terms. `l_var` is the sum of the seven variational terms
/// and `total = l_ce + λ·l_var`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct LossBreakdown {
    pub l_y: f64,
    pub l_mu_z: f64,
    pub l_sigma_z: f64,
    pub l_mu_x: f64,
    pub l_sigma_x: f64,
    pub l_mu_m: f64,
    pub l_sigma_m: f64,
    pub l_var: f64,
    pub l_ce: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(mut self, lambda: f64) -> Self {
        self.l_var = self.l_y
            + self.l_mu_z
            + self.l_sigma_z
            + self.l_mu_x
            + self.l_sigma_x
            + self.l_mu_m
            + self.l_sigma_m;
        self.total = self.l_ce + lambda * self.l_var;
        self
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_y,
            self.l_mu_z,
            self.l_sigma_z,
            self.l_mu_x,
            self.l_sigma_x,
            self.l_mu_m,
            self.l_sigma_m,
            self.l_ce,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("L_y", self.l_y),
            ("L_mu_z", self.l_mu_z),
            ("L_sigma_z", self.l_sigma_z),
            ("L_mu_x", self.l_mu_x),
            ("L_sigma_x", self.l_sigma_x),
            ("L_mu_m", self.l_mu_m),
            ("L_sigma_m", self.l_sigma_m),
            ("L_ce", self.l_ce),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Manual labels and an optional mask (non-zero = pixel counts).
#[derive(Debug, Clone, Copy)]
pub struct Supervision<'a> {
    pub labels: &'a ImageGrid,
    pub mask: Option<&'a ImageGrid>,
}

impl<'a> Supervision<'a> {
    pub fn new(labels: &'a ImageGrid) -> Self {
        Self { labels, mask: None }
    }

    pub fn with_mask(labels: &'a ImageGrid, mask: &'a ImageGrid) -> Self {
        Self {
            labels,
            mask: Some(mask),
        }
    }

    /// Class index per pixel, `None` where masked out.
    fn classes(&self, k: usize) -> Result<Vec<Option<usize>>> {
        if let Some(m) = self.mask {
            self.labels.ensure_shape(m)?;
        }
        self.labels
            .data()
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                if self.mask.is_some_and(|m| m.data()[i] == 0.0) {
                    return Ok(None);
                }
                if l < 0.0 || l.fract() != 0.0 || l >= k as f64 {
                    return Err(Error::LabelOutOfRange {
                        label: l,
                        pixel: i,
                        classes: k,
                    });
                }
                Ok(Some(l as usize))
            })
            .collect()
    }
}

/// Gradient with respect to one Gaussian factor, laid out like
/// [`GaussianField`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradient {
    pub mean: Vec<ImageGrid>,
    pub log_variance: Vec<ImageGrid>,
}

impl FieldGradient {
    fn zeros(width: usize, height: usize, channels: usize) -> Self {
        let z = ImageGrid::zeros(width, height);
        Self {
            mean: vec![z.clone(); channels],
            log_variance: vec![z; channels],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.mean
            .iter()
            .chain(&self.log_variance)
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum()
    }
}

/// Gradient of `L_ce + λ·L_var` over all Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub x: FieldGradient,
    pub m: FieldGradient,
    pub z: FieldGradient,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        (self.x.norm_sq() + self.m.norm_sq() + self.z.norm_sq()).sqrt()
    }
}

/// `½ Σ ρ (y − x − m)²`.
pub fn loss_y(
    y: &ImageGrid,
    x_sample: &ImageGrid,
    m_sample: &ImageGrid,
    rho_mean: &ImageGrid,
) -> Result<f64> {
    y.ensure_shape(x_sample)?;
    y.ensure_shape(m_sample)?;
    y.ensure_shape(rho_mean)?;
    Ok((0..y.len())
        .map(|i| {
            let r = y.data()[i] - x_sample.data()[i] - m_sample.data()[i];
            0.5 * rho_mean.data()[i] * r * r
        })
        .sum())
}

/// `(L_mu_z, L_sigma_z)` with the bracket `ψ(α̂+β̂) − ψ(β̂)` per class.
pub fn loss_z(
    q_z: &GaussianField,
    q_omega: &GammaField,
    q_pi: &BetaVector,
    op: &StencilOperator,
) -> Result<(f64, f64)> {
    if q_omega.channels() != q_z.channels() || q_pi.len() != q_z.channels() {
        return Err(Error::Dimension {
            expected: format!("{} label channels", q_z.channels()),
            actual: format!("omega {}, pi {}", q_omega.channels(), q_pi.len()),
        });
    }
    let brackets = q_pi.brackets();
    let (mut mu, mut sigma) = (0.0, 0.0);
    for (c, &b) in brackets.iter().enumerate() {
        let dmz = op.apply(&q_z.mean[c])?;
        let om = q_omega.mean(c);
        let (mut a, mut s) = (0.0, 0.0);
        for i in 0..dmz.len() {
            let lv = q_z.log_variance[c].data()[i];
            a += om.data()[i] * dmz.data()[i].powi(2);
            s += 2.0 * om.data()[i] * lv.exp() - lv;
        }
        mu += 0.5 * b * a;
        sigma += 0.5 * b * s;
    }
    Ok((mu, sigma))
}

/// `(L_mu_x, L_sigma_x)` with per-class weights `w_k` (usually
/// `softmax(μz)`) and line-field mean `υ`.
pub fn loss_x(
    q_x: &GaussianField,
    weights: &[ImageGrid],
    upsilon_mean: &ImageGrid,
    op: &StencilOperator,
) -> Result<(f64, f64)> {
    let mean = &q_x.mean[0];
    mean.ensure_shape(upsilon_mean)?;
    for w in weights {
        mean.ensure_shape(w)?;
    }
    let dmx = op.apply(mean)?;
    let (mut mu, mut sigma) = (0.0, 0.0);
    for i in 0..mean.len() {
        let s = upsilon_mean.data()[i] * weights.iter().map(|w| w.data()[i]).sum::<f64>();
        let lv = q_x.log_variance[0].data()[i];
        mu += 0.5 * s * dmx.data()[i].powi(2);
        // K copies of the (1/K) ln σ² piece sum to a single ln σ²
        sigma += s * lv.exp() - 0.5 * lv;
    }
    Ok((mu, sigma))
}

/// `(L_mu_m, L_sigma_m)`: `(σ0/2)‖μm − μ0‖²` and `½ Σ (σ0 σm² − ln σm²)`.
pub fn loss_m(q_m: &GaussianField, h: &Hyperparams) -> (f64, f64) {
    let mut mu = 0.0;
    let mut sigma = 0.0;
    for (&m, &lv) in q_m.mean[0].data().iter().zip(q_m.log_variance[0].data()) {
        mu += 0.5 * h.sigma0 * (m - h.mu0).powi(2);
        sigma += 0.5 * (h.sigma0 * lv.exp() - lv);
    }
    (mu, sigma)
}

/// Mean negative log-likelihood of the true class under the per-pixel
/// softmax of `z_sample`, over unmasked pixels. Zero if every pixel is
/// masked out.
pub fn cross_entropy(z_sample: &[ImageGrid], sup: Supervision<'_>) -> Result<f64> {
    for z in z_sample {
        z.ensure_shape(sup.labels)?;
    }
    let classes = sup.classes(z_sample.len())?;
    let counted = classes.iter().flatten().count();
    if counted == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, class) in classes.iter().enumerate() {
        if let Some(l) = *class {
            let hi = z_sample.iter().map(|z| z.data()[i]).fold(f64::MIN, f64::max);
            let lse = hi + z_sample.iter().map(|z| (z.data()[i] - hi).exp()).sum::<f64>().ln();
            total += lse - z_sample[l].data()[i];
        }
    }
    Ok(total / counted as f64)
}

/// Loss with fixed noise draws; averages over the replicates in `eps`.
pub fn evaluate_loss(
    state: &VariationalState,
    y: &ImageGrid,
    sup: Option<Supervision<'_>>,
    h: &Hyperparams,
    op: &StencilOperator,
    eps: &Epsilon,
) -> Result<LossBreakdown> {
    evaluate(state, y, sup, h, op, eps, false).map(|(l, _)| l)
}

/// Loss with one fresh reparameterised sample drawn from `rng`.
pub fn total_loss<R: Rng + ?Sized>(
    state: &VariationalState,
    y: &ImageGrid,
    sup: Option<Supervision<'_>>,
    h: &Hyperparams,
    op: &StencilOperator,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let (w, ht) = (state.width(), state.height());
    let eps = Epsilon {
        x: vec![standard_normal_grid(w, ht, rng)],
        m: vec![standard_normal_grid(w, ht, rng)],
        z: vec![(0..state.k()).map(|_| standard_normal_grid(w, ht, rng)).collect()],
    };
    evaluate_loss(state, y, sup, h, op, &eps)
}

/// Analytic gradient of `L_ce + λ·L_var` under fixed noise draws.
pub fn grad_var_loss(
    state: &VariationalState,
    y: &ImageGrid,
    sup: Option<Supervision<'_>>,
    h: &Hyperparams,
    op: &StencilOperator,
    eps: &Epsilon,
) -> Result<Gradient> {
    loss_and_grad(state, y, sup, h, op, eps).map(|(_, g)| g)
}

/// Loss and gradient from one pass.
pub fn loss_and_grad(
    state: &VariationalState,
    y: &ImageGrid,
    sup: Option<Supervision<'_>>,
    h: &Hyperparams,
    op: &StencilOperator,
    eps: &Epsilon,
) -> Result<(LossBreakdown, Gradient)> {
    evaluate(state, y, sup, h, op, eps, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn check_eps(eps: &Epsilon, k: usize, y: &ImageGrid) -> Result<()> {
    let ok = eps.samples() >= 1
        && eps.m.len() == eps.samples()
        && eps.z.len() == eps.samples()
        && eps.z.iter().all(|zs| zs.len() == k)
        && eps
            .x
            .iter()
            .chain(&eps.m)
            .chain(eps.z.iter().flatten())
            .all(|g| g.same_shape(y));
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: format!("noise draws of {}x{} with {k} label channels", y.width(), y.height()),
            actual: "mismatched draws".into(),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    state: &VariationalState,
    y: &ImageGrid,
    sup: Option<Supervision<'_>>,
    h: &Hyperparams,
    op: &StencilOperator,
    eps: &Epsilon,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradient>)> {
    state.q_x.mean[0].ensure_shape(y)?;
    let k = state.k();
    check_eps(eps, k, y)?;
    let n = y.len();
    let (w, ht) = (y.width(), y.height());
    let lambda = h.lambda;
    let samples = eps.samples() as f64;
    let mut out = LossBreakdown::default();
    let mut g = want_grad.then(|| Gradient {
        x: FieldGradient::zeros(w, ht, 1),
        m: FieldGradient::zeros(w, ht, 1),
        z: FieldGradient::zeros(w, ht, k),
    });

    // likelihood term, averaged over replicates
    let rho = state.q_rho.mean(0);
    let sx = state.q_x.std_dev(0);
    let sm = state.q_m.std_dev(0);
    for s in 0..eps.samples() {
        let (ex, em) = (eps.x[s].data(), eps.m[s].data());
        for i in 0..n {
            let xs = state.q_x.mean[0].data()[i] + sx.data()[i] * ex[i];
            let ms = state.q_m.mean[0].data()[i] + sm.data()[i] * em[i];
            let r = y.data()[i] - xs - ms;
            let p = rho.data()[i];
            out.l_y += 0.5 * p * r * r / samples;
            if let Some(g) = g.as_mut() {
                let d = -lambda * p * r / samples;
                g.x.mean[0].data_mut()[i] += d;
                g.x.log_variance[0].data_mut()[i] += d * 0.5 * sx.data()[i] * ex[i];
                g.m.mean[0].data_mut()[i] += d;
                g.m.log_variance[0].data_mut()[i] += d * 0.5 * sm.data()[i] * em[i];
            }
        }
    }

    // contour prior weighted by the label softmax
    let weights = softmax_channels(&state.q_z.mean);
    let ups = state.q_upsilon.mean(0);
    let (mu_x, sigma_x) = loss_x(&state.q_x, &weights, &ups, op)?;
    out.l_mu_x = mu_x;
    out.l_sigma_x = sigma_x;
    if let Some(g) = g.as_mut() {
        let dmx = op.apply(&state.q_x.mean[0])?;
        let vx = state.q_x.variance(0);
        let wsum: Vec<f64> = (0..n)
            .map(|i| weights.iter().map(|wk| wk.data()[i]).sum())
            .collect();
        let scaled = ImageGrid::new(
            w,
            ht,
            (0..n).map(|i| ups.data()[i] * wsum[i] * dmx.data()[i]).collect(),
        )?;
        let back = op.apply_transpose(&scaled)?;
        for i in 0..n {
            g.x.mean[0].data_mut()[i] += lambda * back.data()[i];
            g.x.log_variance[0].data_mut()[i] +=
                lambda * (ups.data()[i] * wsum[i] * vx.data()[i] - 0.5);
            // chain through softmax(μz); the weights enter only via their sum
            let gk = ups.data()[i] * (0.5 * dmx.data()[i].powi(2) + vx.data()[i]);
            let avg: f64 = weights.iter().map(|wk| wk.data()[i] * gk).sum();
            for (c, wk) in weights.iter().enumerate() {
                g.z.mean[c].data_mut()[i] += lambda * wk.data()[i] * (gk - avg);
            }
        }
    }

    // label prior
    let (mu_z, sigma_z) = loss_z(&state.q_z, &state.q_omega, &state.q_pi, op)?;
    out.l_mu_z = mu_z;
    out.l_sigma_z = sigma_z;
    if let Some(g) = g.as_mut() {
        let brackets = state.q_pi.brackets();
        for (c, &b) in brackets.iter().enumerate() {
            let om = state.q_omega.mean(c);
            let dmz = op.apply(&state.q_z.mean[c])?;
            let back = op.apply_transpose(&dmz.zip_map(&om, |d, o| d * o)?)?;
            let vz = state.q_z.variance(c);
            for i in 0..n {
                g.z.mean[c].data_mut()[i] += lambda * b * back.data()[i];
                g.z.log_variance[c].data_mut()[i] +=
                    lambda * b * (om.data()[i] * vz.data()[i] - 0.5);
            }
        }
    }

    // basis prior
    let (mu_m, sigma_m) = loss_m(&state.q_m, h);
    out.l_mu_m = mu_m;
    out.l_sigma_m = sigma_m;
    if let Some(g) = g.as_mut() {
        for i in 0..n {
            let m = state.q_m.mean[0].data()[i];
            let vm = state.q_m.log_variance[0].data()[i].exp();
            g.m.mean[0].data_mut()[i] += lambda * h.sigma0 * (m - h.mu0);
            g.m.log_variance[0].data_mut()[i] += lambda * 0.5 * (h.sigma0 * vm - 1.0);
        }
    }

    // supervised cross-entropy on sampled logits
    if let Some(sup) = sup {
        let classes = sup.classes(k)?;
        let counted = classes.iter().flatten().count();
        for s in 0..eps.samples() {
            let zs = state.q_z.sample_with(&eps.z[s]);
            out.l_ce += cross_entropy(&zs, sup)? / samples;
            if counted == 0 {
                continue;
            }
            if let Some(g) = g.as_mut() {
                let p = softmax_channels(&zs);
                let scale = 1.0 / (counted as f64 * samples);
                for (i, class) in classes.iter().enumerate() {
                    let Some(l) = *class else { continue };
                    for c in 0..k {
                        let onehot = if c == l { 1.0 } else { 0.0 };
                        let d = scale * (p[c].data()[i] - onehot);
                        let lv = state.q_z.log_variance[c].data()[i];
                        g.z.mean[c].data_mut()[i] += d;
                        g.z.log_variance[c].data_mut()[i] +=
                            d * 0.5 * (0.5 * lv).exp() * eps.z[s][c].data()[i];
                    }
                }
            }
        }
    }

    Ok((out.assemble(lambda), g))
}
