//! Adaptive-moment (Adam) steps over the Gaussian parameters of a state.

use crate::model::VariationalState;
use crate::var_loss::Gradient;

/// Which parameter groups receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub means: bool,
    pub log_variances: bool,
}

impl Trainable {
    pub const ALL: Self = Self {
        means: true,
        log_variances: true,
    };
    pub const MEANS: Self = Self {
        means: true,
        log_variances: false,
    };
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

// Fixed order: x mean, x log-var, m mean, m log-var, then z mean / log-var per class.
fn params(state: &mut VariationalState) -> Vec<(bool, &mut [f64])> {
    let mut out: Vec<(bool, &mut [f64])> = Vec::new();
    for f in [&mut state.q_x, &mut state.q_m, &mut state.q_z] {
        for (m, lv) in f.mean.iter_mut().zip(f.log_variance.iter_mut()) {
            out.push((true, m.data_mut()));
            out.push((false, lv.data_mut()));
        }
    }
    out
}

fn grads(g: &Gradient) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for f in [&g.x, &g.m, &g.z] {
        for (m, lv) in f.mean.iter().zip(&f.log_variance) {
            out.push(m.data());
            out.push(lv.data());
        }
    }
    out
}

impl Adam {
    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, state: &mut VariationalState, g: &Gradient, lr: f64, which: Trainable) {
        let gs = grads(g);
        let mut ps = params(state);
        if self.m.is_empty() {
            self.m = gs.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (j, ((is_mean, p), g)) in ps.iter_mut().zip(gs).enumerate() {
            let on = if *is_mean { which.means } else { which.log_variances };
            if !on {
                continue;
            }
            let (m, v) = (&mut self.m[j], &mut self.v[j]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            }
        }
    }
}
