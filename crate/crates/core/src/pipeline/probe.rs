//! Synthetic generalisation probe: fit with labels on one intensity
//! profile, then refit the means on a remapped copy under the same labels
//! and compare Dice.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::model::{Hyperparams, Scene, VariationalState};
use crate::var_loss::Supervision;

use super::{argmax_labels, dice_report, fit, fit_from, FitConfig, FitOptions, Trainable};

/// Monotone (or anti-monotone) intensity remap simulating a change of
/// acquisition sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntensityTransform {
    Identity,
    /// `t^γ` on the min-max normalised image.
    Gamma(f64),
    /// `max + min − y`.
    ContrastInversion,
}

impl IntensityTransform {
    pub fn apply(&self, y: &ImageGrid) -> Result<ImageGrid> {
        let (lo, hi) = (y.min(), y.max());
        match *self {
            Self::Identity => Ok(y.clone()),
            Self::Gamma(g) => {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(Error::Domain {
                        name: "gamma",
                        constraint: "finite and > 0",
                        value: g,
                    });
                }
                if hi == lo {
                    return Ok(ImageGrid::zeros(y.width(), y.height()));
                }
                Ok(y.map(|v| ((v - lo) / (hi - lo)).powf(g)))
            }
            Self::ContrastInversion => Ok(y.map(|v| hi + lo - v)),
        }
    }
}

impl fmt::Display for IntensityTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::Gamma(g) => write!(f, "gamma:{g}"),
            Self::ContrastInversion => write!(f, "invert"),
        }
    }
}

impl FromStr for IntensityTransform {
    type Err = Error;

    /// Accepts `identity`, `invert`, `gamma` (γ = 0.5) or `gamma:<value>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "invert" => Ok(Self::ContrastInversion),
            "gamma" => Ok(Self::Gamma(0.5)),
            _ => {
                let bad = || Error::Invalid(format!("unknown transform {s:?}"));
                let v = s.strip_prefix("gamma:").ok_or_else(bad)?;
                let g: f64 = v.parse().map_err(|_| bad())?;
                Ok(Self::Gamma(g))
            }
        }
    }
}

/// Average Dice for one value of λ.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ProbeArm {
    pub lambda: f64,
    /// After the supervised fit on the source image.
    pub dice_fit: f64,
    /// After the means-only refit on the source image.
    pub dice_source: f64,
    /// After the means-only refit on the remapped image.
    pub dice_target: f64,
    /// `dice_source − dice_target`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProbeReport {
    pub transform: String,
    pub with_prior: ProbeArm,
    pub without_prior: ProbeArm,
}

/// Means-only refit of a supervised state on `image`, with the
/// contour and basis restarted from that image.
fn refit(state: &VariationalState, image: &ImageGrid, scene: &Scene, h: &Hyperparams, cfg: &FitConfig) -> Result<f64> {
    let mut state = state.clone();
    let mean = image.mean();
    state.q_x.mean[0] = image.map(|v| v - mean);
    state.q_m.mean[0] = ImageGrid::filled(image.width(), image.height(), mean);
    let opts = FitOptions {
        trainable: Trainable::MEANS,
        conjugate: false,
    };
    let sup = Supervision::new(&scene.gt_label);
    let (state, _) = fit_from(state, image, Some(sup), h, cfg, opts)?;
    Ok(dice_report(&argmax_labels(&state.q_z.mean), &scene.gt_label, h.k)?.1)
}

fn arm(scene: &Scene, target: &ImageGrid, h: &Hyperparams, cfg: &FitConfig) -> Result<ProbeArm> {
    let cfg = FitConfig {
        supervised: true,
        ..cfg.clone()
    };
    let (state, _) = fit(&scene.y, Some(&scene.gt_label), h, &cfg)?;
    let (_, dice_fit) = dice_report(&argmax_labels(&state.q_z.mean), &scene.gt_label, h.k)?;
    // the source score goes through the same refit, so the gap only
    // reflects the change of image
    let dice_source = refit(&state, &scene.y, scene, h, &cfg)?;
    let dice_target = refit(&state, target, scene, h, &cfg)?;
    Ok(ProbeArm {
        lambda: h.lambda,
        dice_fit,
        dice_source,
        dice_target,
        gap: dice_source - dice_target,
    })
}

/// Runs both arms (`h.lambda` and λ = 0) on the same scene and seed.
pub fn generalization_probe(
    scene: &Scene,
    transform: IntensityTransform,
    h: &Hyperparams,
    cfg: &FitConfig,
) -> Result<ProbeReport> {
    let target = transform.apply(&scene.y)?;
    let with_prior = arm(scene, &target, h, cfg)?;
    let h0 = Hyperparams {
        lambda: 0.0,
        ..h.clone()
    };
    let without_prior = arm(scene, &target, &h0, cfg)?;
    Ok(ProbeReport {
        transform: transform.to_string(),
        with_prior,
        without_prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms() {
        let y = ImageGrid::new(3, 1, vec![0.2, 0.45, 1.2]).unwrap();
        assert_eq!(IntensityTransform::Identity.apply(&y).unwrap(), y);
        let g = IntensityTransform::Gamma(0.5).apply(&y).unwrap();
        assert_eq!(g.data()[0], 0.0);
        assert!((g.data()[1] - 0.5).abs() < 1e-12);
        assert_eq!(g.data()[2], 1.0);
        let inv = IntensityTransform::ContrastInversion.apply(&y).unwrap();
        assert!((inv.data()[0] - 1.2).abs() < 1e-12 && (inv.data()[2] - 0.2).abs() < 1e-12);
        assert!(IntensityTransform::Gamma(-1.0).apply(&y).is_err());
    }

    #[test]
    fn transform_names_round_trip() {
        for t in [
            IntensityTransform::Identity,
            IntensityTransform::Gamma(0.5),
            IntensityTransform::Gamma(2.0),
            IntensityTransform::ContrastInversion,
        ] {
            assert_eq!(t.to_string().parse::<IntensityTransform>().unwrap(), t);
        }
        assert_eq!("gamma".parse::<IntensityTransform>().unwrap(), IntensityTransform::Gamma(0.5));
        assert!("sepia".parse::<IntensityTransform>().is_err());
    }

    #[test]
    fn identity_remap_has_no_gap() {
        let scene = crate::model::synthesize(&crate::model::SceneSpec::standard(2), 3).unwrap();
        let cfg = FitConfig {
            max_sweeps: 20,
            ..FitConfig::default()
        };
        let h = Hyperparams::default();
        let r = generalization_probe(&scene, IntensityTransform::Identity, &h, &cfg).unwrap();
        for arm in [r.with_prior, r.without_prior] {
            assert!(arm.gap.abs() < 0.02, "{arm:?}");
        }
        assert_eq!(r.without_prior.lambda, 0.0);
        let again = generalization_probe(&scene, IntensityTransform::Identity, &h, &cfg).unwrap();
        assert_eq!(again, r);
    }
}
