//! The fit loop and the user-level decompose / segment procedures.
//!
//! A sweep draws one set of noise values, takes a fixed number of Adam steps
//! on every Gaussian parameter, then refreshes the Gamma and Beta factors in
//! closed form.

mod metrics;
mod optim;
mod probe;

use std::time::{Duration, Instant};

use rand::RngCore;

pub use metrics::{argmax_labels, correlation, dice, dice_report, edge_mask, lowpass, masked_median};
pub use optim::{Adam, Trainable};
pub use probe::{generalization_probe, IntensityTransform, ProbeArm, ProbeReport};

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{ImageGrid, StencilOperator};
use crate::model::{init_state, stream_rng, BetaVector, Epsilon, GaussianField, Hyperparams, Stream, VariationalState};
use crate::var_loss::{evaluate_loss, loss_and_grad, LossBreakdown, Supervision};
use crate::vb_updates::{conjugate_sweep, RhoSource};

/// Hard ceiling on sweeps per fit.
pub const MAX_SWEEPS_CAP: usize = 2000;
/// Window of the moving average used for the stopping rule.
pub const MOVING_AVERAGE_WINDOW: usize = 5;
// Noise counter reserved for the per-sweep loss record.
const EVAL_COUNTER: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    pub max_sweeps: usize,
    pub grad_steps_per_sweep: usize,
    pub learning_rate: f64,
    /// The step size is multiplied by `lr_decay_factor` every this many sweeps.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Relative change of the moving-average loss that counts as converged.
    pub convergence_tol: f64,
    pub seed: u64,
    pub supervised: bool,
    /// Refresh `q(ρ)` from the exact residual expectation instead of a sample.
    pub exact_rho_expectation: bool,
    /// Monte-Carlo replicates averaged per loss evaluation.
    pub mc_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_sweeps: MAX_SWEEPS_CAP,
            grad_steps_per_sweep: 10,
            learning_rate: 1e-4,
            lr_decay_every: 500,
            lr_decay_factor: 0.1,
            convergence_tol: 1e-6,
            seed: 0,
            supervised: false,
            exact_rho_expectation: false,
            mc_samples: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Invalid(msg.to_string()));
        if self.max_sweeps < 1 || self.max_sweeps > MAX_SWEEPS_CAP {
            return fail("max_sweeps must lie in [1, 2000]");
        }
        if self.grad_steps_per_sweep < 1 {
            return fail("grad_steps_per_sweep must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and > 0");
        }
        if self.lr_decay_every < 1 {
            return fail("lr_decay_every must be at least 1");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail("lr_decay_factor must lie in (0, 1]");
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return fail("convergence_tol must be finite and >= 0");
        }
        if self.mc_samples < 1 || self.mc_samples > 256 {
            return fail("mc_samples must lie in [1, 256]");
        }
        Ok(())
    }

    /// Step size in effect during `sweep` (0-based).
    pub fn learning_rate_at(&self, sweep: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((sweep / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSweeps,
}

/// Per-sweep loss history. Equality ignores `wall_time`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitReport {
    pub history: Vec<LossBreakdown>,
    pub sweeps: usize,
    pub stop: StopReason,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PartialEq for FitReport {
    fn eq(&self, other: &Self) -> bool {
        self.history == other.history && self.sweeps == other.sweeps && self.stop == other.stop
    }
}

impl FitReport {
    pub fn final_loss(&self) -> Option<&LossBreakdown> {
        self.history.last()
    }

    /// Trailing moving averages of `total` over [`MOVING_AVERAGE_WINDOW`] sweeps.
    pub fn moving_average(&self) -> Vec<f64> {
        self.history
            .windows(MOVING_AVERAGE_WINDOW)
            .map(|w| w.iter().map(|l| l.total).sum::<f64>() / w.len() as f64)
            .collect()
    }
}

/// Knobs for continuing a fit from an existing state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    pub trainable: Trainable,
    /// Run the closed-form Gamma/Beta refresh after each sweep.
    pub conjugate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            trainable: Trainable::ALL,
            conjugate: true,
        }
    }
}

fn supervision<'a>(labels: Option<&'a ImageGrid>, cfg: &FitConfig) -> Result<Option<Supervision<'a>>> {
    match (labels, cfg.supervised) {
        (Some(l), true) => Ok(Some(Supervision::new(l))),
        (None, false) => Ok(None),
        (None, true) => Err(Error::Invalid("supervised fit requires labels".into())),
        (Some(_), false) => Err(Error::Invalid("labels given to an unsupervised fit".into())),
    }
}

/// Fits a fresh state to `y`.
pub fn fit(
    y: &ImageGrid,
    labels: Option<&ImageGrid>,
    h: &Hyperparams,
    cfg: &FitConfig,
) -> Result<(VariationalState, FitReport)> {
    let sup = supervision(labels, cfg)?;
    let state = init_state(y, h, cfg.seed)?;
    fit_from(state, y, sup, h, cfg, FitOptions::default())
}

/// Runs sweeps starting from `state`.
pub fn fit_from(
    mut state: VariationalState,
    y: &ImageGrid,
    sup: Option<Supervision<'_>>,
    h: &Hyperparams,
    cfg: &FitConfig,
    opts: FitOptions,
) -> Result<(VariationalState, FitReport)> {
    let started = Instant::now();
    h.validate()?;
    cfg.validate()?;
    if !y.all_finite() {
        return Err(Error::NonFinite("observed image".into()));
    }
    state.validate()?;
    state.q_x.mean[0].ensure_shape(y)?;
    if state.k() != h.k {
        return Err(Error::Dimension {
            expected: format!("{} label channels", h.k),
            actual: format!("{}", state.k()),
        });
    }
    let (w, ht, k) = (y.width(), y.height(), h.k);
    let op = StencilOperator::for_grid(y);
    let eval_eps = Epsilon::draw(cfg.seed, EVAL_COUNTER, w, ht, k, cfg.mc_samples);
    let rho = if cfg.exact_rho_expectation {
        RhoSource::Expectation
    } else {
        RhoSource::Sample
    };
    let mut adam = Adam::default();
    let mut history: Vec<LossBreakdown> = Vec::new();
    let mut stop = StopReason::MaxSweeps;

    for sweep in 0..cfg.max_sweeps {
        let eps = Epsilon::draw(cfg.seed, sweep as u32, w, ht, k, cfg.mc_samples);
        let lr = cfg.learning_rate_at(sweep);
        for _ in 0..cfg.grad_steps_per_sweep {
            let (loss, g) = loss_and_grad(&state, y, sup, h, &op, &eps)?;
            if let Some(term) = loss.first_non_finite() {
                return Err(Error::Divergence { sweep, term });
            }
            adam.step(&mut state, &g, lr, opts.trainable);
        }
        if opts.conjugate {
            conjugate_sweep(&state, h, &op, y, &eps, rho)?.apply_to(&mut state);
        }
        if !state.all_finite() {
            return Err(Error::Divergence {
                sweep,
                term: "state",
            });
        }
        let record = evaluate_loss(&state, y, sup, h, &op, &eval_eps)?;
        if let Some(term) = record.first_non_finite() {
            return Err(Error::Divergence { sweep, term });
        }
        history.push(record);
        if converged(&history, cfg.convergence_tol) {
            stop = StopReason::Converged;
            break;
        }
    }
    let report = FitReport {
        sweeps: history.len(),
        history,
        stop,
        wall_time: started.elapsed(),
    };
    Ok((state, report))
}

fn converged(history: &[LossBreakdown], tol: f64) -> bool {
    let n = MOVING_AVERAGE_WINDOW;
    if history.len() <= n {
        return false;
    }
    let avg = |s: &[LossBreakdown]| s.iter().map(|l| l.total).sum::<f64>() / n as f64;
    let now = avg(&history[history.len() - n..]);
    let before = avg(&history[history.len() - n - 1..history.len() - 1]);
    (now - before).abs() <= tol * before.abs().max(f64::MIN_POSITIVE)
}

/// Outputs of an unsupervised decomposition.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub contour: GaussianField,
    pub basis_mean: ImageGrid,
    pub basis_precision: ImageGrid,
    pub line: ImageGrid,
    pub state: VariationalState,
    pub report: FitReport,
}

impl Decomposition {
    /// Basis mean plus the low-pass part of what the contour and basis
    /// leave unexplained.
    pub fn recovered_basis(&self, y: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
        let explained = self.contour.mean[0].zip_map(&self.basis_mean, |x, m| x + m)?;
        let residual = y.zip_map(&explained, |a, b| a - b)?;
        lowpass(&residual, sigma).zip_map(&self.basis_mean, |r, m| r + m)
    }
}

pub fn decompose(y: &ImageGrid, h: &Hyperparams, cfg: &FitConfig) -> Result<Decomposition> {
    let cfg = FitConfig {
        supervised: false,
        ..cfg.clone()
    };
    let (state, report) = fit(y, None, h, &cfg)?;
    Ok(Decomposition {
        contour: state.q_x.clone(),
        basis_mean: state.q_m.mean[0].clone(),
        basis_precision: state.q_rho.mean(0),
        line: state.q_upsilon.mean(0),
        state,
        report,
    })
}

/// Outputs of a segmentation fit.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub label_map: ImageGrid,
    pub q_z: GaussianField,
    pub boundary: Vec<ImageGrid>,
    pub probs: BetaVector,
    pub state: VariationalState,
    pub report: FitReport,
}

/// Fits (supervised when `labels` is given) and reads off the per-pixel
/// argmax of the label means.
pub fn segment(
    y: &ImageGrid,
    labels: Option<&ImageGrid>,
    h: &Hyperparams,
    cfg: &FitConfig,
) -> Result<Segmentation> {
    let cfg = FitConfig {
        supervised: labels.is_some(),
        ..cfg.clone()
    };
    let (state, report) = fit(y, labels, h, &cfg)?;
    Ok(Segmentation {
        label_map: argmax_labels(&state.q_z.mean),
        q_z: state.q_z.clone(),
        boundary: (0..state.k()).map(|c| state.q_omega.mean(c)).collect(),
        probs: state.q_pi.clone(),
        state,
        report,
    })
}

/// One image of a batch fit.
#[derive(Debug, Clone)]
pub struct FitJob {
    pub y: ImageGrid,
    pub labels: Option<ImageGrid>,
}

/// Seed of the `index`-th batch member, split from the base seed.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    stream_rng(seed, Stream::Instance, index as u32, 0, 0).next_u64()
}

/// Fits independent images, in parallel when the feature is on. Each job
/// gets its own seed derived from `cfg.seed` and its index.
pub fn fit_batch(
    jobs: &[FitJob],
    h: &Hyperparams,
    cfg: &FitConfig,
) -> Vec<Result<(VariationalState, FitReport)>> {
    let indexed: Vec<(usize, &FitJob)> = jobs.iter().enumerate().collect();
    exec::map_batch(&indexed, |(i, job)| {
        let cfg = FitConfig {
            seed: instance_seed(cfg.seed, *i),
            supervised: job.labels.is_some(),
            ..cfg.clone()
        };
        fit(&job.y, job.labels.as_ref(), h, &cfg)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize, SceneSpec};

    fn quick() -> FitConfig {
        FitConfig {
            max_sweeps: 20,
            ..FitConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        for bad in [
            FitConfig { max_sweeps: 0, ..quick() },
            FitConfig { max_sweeps: 2001, ..quick() },
            FitConfig { learning_rate: 0.0, ..quick() },
            FitConfig { convergence_tol: -1.0, ..quick() },
            FitConfig { grad_steps_per_sweep: 0, ..quick() },
        ] {
            assert!(bad.validate().is_err());
        }
        let c = FitConfig { learning_rate: 1.0, ..quick() };
        assert_eq!(c.learning_rate_at(499), 1.0);
        assert!((c.learning_rate_at(500) - 0.1).abs() < 1e-15);
        assert!((c.learning_rate_at(1999) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn labels_required_iff_supervised() {
        let y = ImageGrid::zeros(4, 4);
        let h = Hyperparams::default();
        let sup = FitConfig { supervised: true, ..quick() };
        assert!(fit(&y, None, &h, &sup).is_err());
        assert!(fit(&y, Some(&y), &h, &quick()).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let scene = synthesize(&SceneSpec::standard(2), 3).unwrap();
        let h = Hyperparams::default();
        let cfg = FitConfig { supervised: true, ..quick() };
        let a = fit(&scene.y, Some(&scene.gt_label), &h, &cfg).unwrap();
        let b = fit(&scene.y, Some(&scene.gt_label), &h, &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.1.history.len(), a.1.sweeps);
    }

    #[test]
    fn single_class_segments_to_zero() {
        let scene = synthesize(&SceneSpec::standard(2), 1).unwrap();
        let h = Hyperparams::with_k(1);
        let s = segment(&scene.y, None, &h, &quick()).unwrap();
        assert!(s.label_map.data().iter().all(|&v| v == 0.0));
        assert!(s.report.history.iter().all(|l| l.l_ce == 0.0));
    }

    #[test]
    fn batch_matches_individual_fits() {
        let jobs: Vec<FitJob> = (0..3)
            .map(|i| FitJob {
                y: synthesize(&SceneSpec::standard(2), i).unwrap().y,
                labels: None,
            })
            .collect();
        let h = Hyperparams::default();
        let cfg = FitConfig { max_sweeps: 5, ..quick() };
        let batch = fit_batch(&jobs, &h, &cfg);
        for (i, r) in batch.into_iter().enumerate() {
            let one = fit(&jobs[i].y, None, &h, &FitConfig { seed: instance_seed(cfg.seed, i), ..cfg.clone() })
                .unwrap();
            assert_eq!(r.unwrap().0, one.0);
        }
    }

    #[test]
    fn constant_image_settles_into_the_contour() {
        // The SAR prior charges a constant contour only at the zero-padded
        // border while the basis prior charges every pixel, so the constant
        // ends up in the contour and the basis mean stays near zero.
        let (w, ht, c) = (8, 8, 0.8);
        let y = ImageGrid::filled(w, ht, c);
        let h = Hyperparams::default();
        let cfg = FitConfig {
            max_sweeps: 1500,
            learning_rate: 0.05,
            lr_decay_every: 250,
            lr_decay_factor: 0.3,
            convergence_tol: 0.0,
            exact_rho_expectation: true,
            mc_samples: 64,
            ..FitConfig::default()
        };
        let (s, _) = fit(&y, None, &h, &cfg).unwrap();

        // stationarity of the means given the fitted precisions:
        //   ρ(x + m − y) + Dᵀ(υ ⊙ D x) = 0,  ρ(x + m − y) + σ0 (m − μ0) = 0
        let d = w * ht;
        let dense = StencilOperator::new(w, ht).to_dense();
        let rho = s.q_rho.mean(0);
        let ups = s.q_upsilon.mean(0);
        let mut a = vec![vec![0.0; 2 * d]; 2 * d];
        let mut b = vec![0.0; 2 * d];
        for i in 0..d {
            let r = rho.data()[i];
            for j in 0..d {
                a[i][j] = (0..d).map(|l| dense[l][i] * ups.data()[l] * dense[l][j]).sum();
            }
            a[i][i] += r;
            a[i][d + i] = r;
            a[d + i][i] = r;
            a[d + i][d + i] = r + h.sigma0;
            b[i] = r * c;
            b[d + i] = r * c + h.sigma0 * h.mu0;
        }
        let sol = crate::model::sar::solve_dense(a, b).unwrap();
        let (ox, om) = sol.split_at(d);
        let om_mean = om.iter().sum::<f64>() / d as f64;
        assert!(om_mean.abs() < 0.1 * c, "oracle basis mean {om_mean}");
        assert!(ox[3 * w + 3] > 0.8 * c, "oracle interior contour {}", ox[3 * w + 3]);
        for i in 0..d {
            assert!((s.q_x.mean[0].data()[i] - ox[i]).abs() < 0.02, "x at {i}: {} vs {}", s.q_x.mean[0].data()[i], ox[i]);
            assert!((s.q_m.mean[0].data()[i] - om[i]).abs() < 0.02, "m at {i}: {} vs {}", s.q_m.mean[0].data()[i], om[i]);
        }
    }
}
