//! Variational state `q(ψ) = q(m) q(ρ) q(x) q(υ) q(z) q(ω) q(π)`, model
//! hyperparameters, reparameterised sampling and synthetic scenes.

mod codec;
pub(crate) mod sar;
mod synth;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use codec::{decode_state, encode_state, STATE_MAGIC, STATE_VERSION};
pub use sar::sample_sar_prior;
pub use synth::{synthesize, Scene, SceneShape, SceneSpec};

use crate::distributions::{BetaParams, GammaParams};
use crate::error::{check_positive, Error, Result};
use crate::grid::ImageGrid;

/// Initial log-variance of every Gaussian factor.
pub const INIT_LOG_VARIANCE: f64 = -4.605_170_185_988_091; // ln(1e-2)

/// Fixed prior and loss constants.
///
/// Gamma priors are kept in the model's own rate-first naming: `phi_*` is the
/// rate and `gamma_*` the shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of classes K.
    pub k: usize,
    pub mu0: f64,
    /// Precision of the Gaussian prior on the basis mean.
    pub sigma0: f64,
    pub phi_rho: f64,
    pub gamma_rho: f64,
    pub phi_upsilon: f64,
    pub gamma_upsilon: f64,
    pub phi_omega: f64,
    pub gamma_omega: f64,
    pub alpha_pi: f64,
    pub beta_pi: f64,
    /// Weight of the variational loss against the cross-entropy.
    pub lambda: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 2,
            mu0: 0.0,
            sigma0: 1.0,
            phi_rho: 2.0,
            gamma_rho: 1e-6,
            phi_upsilon: 2.0,
            gamma_upsilon: 1e-8,
            phi_omega: 2.0,
            gamma_omega: 1e-4,
            alpha_pi: 2.0,
            beta_pi: 2.0,
            lambda: 100.0,
        }
    }
}

impl Hyperparams {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Domain {
                name: "k",
                constraint: ">= 1",
                value: 0.0,
            });
        }
        if !self.mu0.is_finite() {
            return Err(Error::Domain {
                name: "mu0",
                constraint: "finite",
                value: self.mu0,
            });
        }
        check_positive("sigma0", self.sigma0)?;
        check_positive("phi_rho", self.phi_rho)?;
        check_positive("gamma_rho", self.gamma_rho)?;
        check_positive("phi_upsilon", self.phi_upsilon)?;
        check_positive("gamma_upsilon", self.gamma_upsilon)?;
        check_positive("phi_omega", self.phi_omega)?;
        check_positive("gamma_omega", self.gamma_omega)?;
        check_positive("alpha_pi", self.alpha_pi)?;
        check_positive("beta_pi", self.beta_pi)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain {
                name: "lambda",
                constraint: "finite and >= 0",
                value: self.lambda,
            });
        }
        Ok(())
    }
}

/// Factorised Gaussian over one or more channels, parameterised by mean and
/// log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianField {
    pub mean: Vec<ImageGrid>,
    pub log_variance: Vec<ImageGrid>,
}

impl GaussianField {
    pub fn new(mean: Vec<ImageGrid>, log_variance: Vec<ImageGrid>) -> Result<Self> {
        if mean.is_empty() || mean.len() != log_variance.len() {
            return Err(Error::Invalid(format!(
                "gaussian field needs matching non-empty channel lists, got {} and {}",
                mean.len(),
                log_variance.len()
            )));
        }
        for (m, lv) in mean.iter().zip(&log_variance) {
            mean[0].ensure_shape(m)?;
            mean[0].ensure_shape(lv)?;
        }
        Ok(Self { mean, log_variance })
    }

    pub fn constant(width: usize, height: usize, channels: usize, mean: f64, log_var: f64) -> Self {
        Self {
            mean: vec![ImageGrid::filled(width, height, mean); channels],
            log_variance: vec![ImageGrid::filled(width, height, log_var); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self, channel: usize) -> ImageGrid {
        self.log_variance[channel].map(f64::exp)
    }

    pub fn std_dev(&self, channel: usize) -> ImageGrid {
        self.log_variance[channel].map(|lv| (0.5 * lv).exp())
    }

    /// `mean + σ ⊙ ε`, one grid per channel.
    pub fn sample_with(&self, eps: &[ImageGrid]) -> Vec<ImageGrid> {
        assert_eq!(eps.len(), self.channels(), "noise channel count");
        self.mean
            .iter()
            .zip(&self.log_variance)
            .zip(eps)
            .map(|((m, lv), e)| {
                let data = m
                    .data()
                    .iter()
                    .zip(lv.data())
                    .zip(e.data())
                    .map(|((&mu, &l), &n)| mu + (0.5 * l).exp() * n)
                    .collect();
                ImageGrid::new(m.width(), m.height(), data).expect("finite sample")
            })
            .collect()
    }
}

/// Draws a reparameterised sample of every channel of `f`.
pub fn sample_gaussian_field<R: Rng + ?Sized>(f: &GaussianField, rng: &mut R) -> Vec<ImageGrid> {
    let (w, h) = (f.mean[0].width(), f.mean[0].height());
    let eps: Vec<ImageGrid> = (0..f.channels())
        .map(|_| standard_normal_grid(w, h, rng))
        .collect();
    f.sample_with(&eps)
}

pub fn standard_normal_grid<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> ImageGrid {
    let data = (0..width * height)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    ImageGrid::new(width, height, data).expect("finite normal draws")
}

/// Per-pixel softmax across channels. Channel weights are non-negative and
/// sum to one at every pixel.
pub fn softmax_channels(channels: &[ImageGrid]) -> Vec<ImageGrid> {
    let k = channels.len();
    let n = channels[0].len();
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; n]; k];
    let mut buf = vec![0.0; k];
    for i in 0..n {
        let mut hi = f64::NEG_INFINITY;
        for (c, ch) in channels.iter().enumerate() {
            buf[c] = ch.data()[i];
            hi = hi.max(buf[c]);
        }
        let mut total = 0.0;
        for v in buf.iter_mut() {
            *v = (*v - hi).exp();
            total += *v;
        }
        for (c, o) in out.iter_mut().enumerate() {
            o[i] = buf[c] / total;
        }
    }
    let (w, h) = (channels[0].width(), channels[0].height());
    out.into_iter()
        .map(|d| ImageGrid::new(w, h, d).expect("softmax of finite logits"))
        .collect()
}

/// Per-pixel Gamma factor in `(shape, rate)` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaField {
    pub shape: Vec<ImageGrid>,
    pub rate: Vec<ImageGrid>,
}

impl GammaField {
    pub fn new(shape: Vec<ImageGrid>, rate: Vec<ImageGrid>) -> Result<Self> {
        if shape.is_empty() || shape.len() != rate.len() {
            return Err(Error::Invalid("gamma field channel mismatch".into()));
        }
        for (a, b) in shape.iter().zip(&rate) {
            shape[0].ensure_shape(a)?;
            shape[0].ensure_shape(b)?;
            for (&x, &y) in a.data().iter().zip(b.data()) {
                check_positive("gamma field shape", x)?;
                check_positive("gamma field rate", y)?;
            }
        }
        Ok(Self { shape, rate })
    }

    pub fn constant(width: usize, height: usize, channels: usize, shape: f64, rate: f64) -> Self {
        Self {
            shape: vec![ImageGrid::filled(width, height, shape); channels],
            rate: vec![ImageGrid::filled(width, height, rate); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.shape.len()
    }

    /// Posterior mean `shape / rate`.
    pub fn mean(&self, channel: usize) -> ImageGrid {
        self.shape[channel]
            .zip_map(&self.rate[channel], |a, b| a / b)
            .expect("gamma field channels share a shape")
    }

    pub fn params_at(&self, channel: usize, pixel: usize) -> GammaParams {
        GammaParams::new(
            self.shape[channel].data()[pixel],
            self.rate[channel].data()[pixel],
        )
        .expect("gamma field invariant")
    }

    pub fn is_valid(&self) -> bool {
        self.shape.iter().zip(&self.rate).all(|(a, b)| {
            a.data()
                .iter()
                .zip(b.data())
                .all(|(&x, &y)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())
        })
    }
}

/// Per-class Beta factor on the segmentation probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaVector {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaVector {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != beta.len() {
            return Err(Error::Invalid("beta vector length mismatch".into()));
        }
        for (&a, &b) in alpha.iter().zip(&beta) {
            check_positive("beta alpha", a)?;
            check_positive("beta beta", b)?;
        }
        Ok(Self { alpha, beta })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn params(&self, k: usize) -> BetaParams {
        BetaParams::new(self.alpha[k], self.beta[k]).expect("beta vector invariant")
    }

    /// E[−ln(1 − π_k)] for every class.
    pub fn brackets(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.params(k).neg_ln1m_mean()).collect()
    }
}

/// Every variational factor of the model on one image grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub q_x: GaussianField,
    pub q_m: GaussianField,
    pub q_z: GaussianField,
    pub q_rho: GammaField,
    pub q_upsilon: GammaField,
    pub q_omega: GammaField,
    pub q_pi: BetaVector,
}

impl VariationalState {
    pub fn width(&self) -> usize {
        self.q_x.mean[0].width()
    }

    pub fn height(&self) -> usize {
        self.q_x.mean[0].height()
    }

    pub fn k(&self) -> usize {
        self.q_z.channels()
    }

    pub fn pixels(&self) -> usize {
        self.width() * self.height()
    }

    /// Checks channel counts, shapes and positivity of every factor.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let reference = &self.q_x.mean[0];
        let expect = |what: &str, got: usize, want: usize| -> Result<()> {
            if got == want {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{what}: expected {want} channels, got {got}")))
            }
        };
        expect("q_x", self.q_x.channels(), 1)?;
        expect("q_m", self.q_m.channels(), 1)?;
        expect("q_rho", self.q_rho.channels(), 1)?;
        expect("q_upsilon", self.q_upsilon.channels(), 1)?;
        expect("q_omega", self.q_omega.channels(), k)?;
        expect("q_pi", self.q_pi.len(), k)?;
        let grids = self
            .q_x
            .mean
            .iter()
            .chain(&self.q_x.log_variance)
            .chain(&self.q_m.mean)
            .chain(&self.q_m.log_variance)
            .chain(&self.q_z.mean)
            .chain(&self.q_z.log_variance)
            .chain(&self.q_rho.shape)
            .chain(&self.q_rho.rate)
            .chain(&self.q_upsilon.shape)
            .chain(&self.q_upsilon.rate)
            .chain(&self.q_omega.shape)
            .chain(&self.q_omega.rate);
        for g in grids {
            reference.ensure_shape(g)?;
            if !g.all_finite() {
                return Err(Error::NonFinite("state field".into()));
            }
        }
        for f in [&self.q_rho, &self.q_upsilon, &self.q_omega] {
            if !f.is_valid() {
                return Err(Error::Invalid("gamma field has non-positive entries".into()));
            }
        }
        BetaVector::new(self.q_pi.alpha.clone(), self.q_pi.beta.clone())?;
        Ok(())
    }

    /// True when every number in the state is finite.
    pub fn all_finite(&self) -> bool {
        self.validate().is_ok()
    }

    /// Rounds every stored value to `f32`, the precision of the state file.
    pub fn quantized(&self) -> Self {
        let q = |g: &ImageGrid| g.map(|v| v as f32 as f64);
        let qg = |f: &GaussianField| GaussianField {
            mean: f.mean.iter().map(q).collect(),
            log_variance: f.log_variance.iter().map(q).collect(),
        };
        let qm = |f: &GammaField| GammaField {
            shape: f.shape.iter().map(q).collect(),
            rate: f.rate.iter().map(q).collect(),
        };
        Self {
            q_x: qg(&self.q_x),
            q_m: qg(&self.q_m),
            q_z: qg(&self.q_z),
            q_rho: qm(&self.q_rho),
            q_upsilon: qm(&self.q_upsilon),
            q_omega: qm(&self.q_omega),
            q_pi: BetaVector {
                alpha: self.q_pi.alpha.iter().map(|&v| v as f32 as f64).collect(),
                beta: self.q_pi.beta.iter().map(|&v| v as f32 as f64).collect(),
            },
        }
    }
}

/// Starting point of a fit.
///
/// The basis mean is the spatial mean of `y`, the contour mean is `y` minus
/// that constant, label means are zero, every log-variance is `ln 1e-2`, and
/// the Gamma and Beta factors sit at their priors. The construction is
/// deterministic; `seed` is accepted so callers can thread one seed through
/// every stage.
pub fn init_state(y: &ImageGrid, h: &Hyperparams, seed: u64) -> Result<VariationalState> {
    let _ = seed;
    h.validate()?;
    if !y.all_finite() {
        return Err(Error::NonFinite("observed image".into()));
    }
    let (w, ht, k) = (y.width(), y.height(), h.k);
    let mean = y.mean();
    let q_x = GaussianField {
        mean: vec![y.map(|v| v - mean)],
        log_variance: vec![ImageGrid::filled(w, ht, INIT_LOG_VARIANCE)],
    };
    let q_m = GaussianField::constant(w, ht, 1, mean, INIT_LOG_VARIANCE);
    let q_z = GaussianField::constant(w, ht, k, 0.0, INIT_LOG_VARIANCE);
    Ok(VariationalState {
        q_x,
        q_m,
        q_z,
        q_rho: GammaField::constant(w, ht, 1, h.gamma_rho, h.phi_rho),
        q_upsilon: GammaField::constant(w, ht, 1, h.gamma_upsilon, h.phi_upsilon),
        q_omega: GammaField::constant(w, ht, k, h.gamma_omega, h.phi_omega),
        q_pi: BetaVector {
            alpha: vec![h.alpha_pi; k],
            beta: vec![h.beta_pi; k],
        },
    })
}

/// Identifies an independent random stream derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    ContourNoise,
    BasisNoise,
    LabelNoise,
    Scene,
    Instance,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::ContourNoise => 1,
            Stream::BasisNoise => 2,
            Stream::LabelNoise => 3,
            Stream::Scene => 4,
            Stream::Instance => 5,
        }
    }
}

/// Counter-based split of one 64-bit seed: the ChaCha stream id packs the
/// sweep counter (upper 32 bits), the Monte-Carlo sample index, the stream
/// tag and the channel, so every field of every sweep draws from its own
/// stream regardless of evaluation order or thread count.
pub fn stream_rng(seed: u64, stream: Stream, counter: u32, sample: u8, channel: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((counter as u64) << 32) | ((sample as u64) << 16) | (stream.tag() << 8) | channel as u64;
    rng.set_stream(id);
    rng
}

/// Standard-normal draws that drive the reparameterised samples of
/// `x`, `m` and `z`. Indexed `[sample]` and `[sample][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Epsilon {
    pub x: Vec<ImageGrid>,
    pub m: Vec<ImageGrid>,
    pub z: Vec<Vec<ImageGrid>>,
}

impl Epsilon {
    /// Fresh draws for `samples` Monte-Carlo replicates at `counter`.
    pub fn draw(seed: u64, counter: u32, width: usize, height: usize, k: usize, samples: usize) -> Self {
        assert!((1..=256).contains(&samples) && k <= 256);
        let grid = |stream, s: usize, c: usize| {
            let mut rng = stream_rng(seed, stream, counter, s as u8, c as u8);
            standard_normal_grid(width, height, &mut rng)
        };
        Self {
            x: (0..samples).map(|s| grid(Stream::ContourNoise, s, 0)).collect(),
            m: (0..samples).map(|s| grid(Stream::BasisNoise, s, 0)).collect(),
            z: (0..samples)
                .map(|s| (0..k).map(|c| grid(Stream::LabelNoise, s, c)).collect())
                .collect(),
        }
    }

    /// All-zero noise: samples equal the means.
    pub fn zeros(width: usize, height: usize, k: usize, samples: usize) -> Self {
        let z = ImageGrid::zeros(width, height);
        Self {
            x: vec![z.clone(); samples],
            m: vec![z.clone(); samples],
            z: vec![vec![z; k]; samples],
        }
    }

    pub fn samples(&self) -> usize {
        self.x.len()
    }
}
