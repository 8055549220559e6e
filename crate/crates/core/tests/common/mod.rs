//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls the closed-form posterior or marginal code; the
//! oracles recompute the same quantities by quadrature, enumeration or
//! explicit transition-matrix products.

#![allow(dead_code)]

use std::cell::Cell;

use pocketdiff::denoiser::{CleanPredictor, DenoiserConfig, Prediction};
use pocketdiff::diffusion::{Complex, Molecule, ProteinContext};
use pocketdiff::geometry::Vec3;
use pocketdiff::tensor::Tensor;
use pocketdiff::Result;

fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

fn grid_moments(log_w: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let lw: Vec<f64> = xs.iter().map(|&x| log_w(x)).collect();
    let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, (&x, &l)) in xs.iter().zip(&lw).enumerate() {
        let w = (l - top).exp() * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Mean and variance of `p(x_{t−1} | x_t, x_0) ∝ N(x_t; √α_t x_{t−1}, β_t) ·
/// N(x_{t−1}; √ᾱ_{t−1} x_0, 1−ᾱ_{t−1})` by trapezoidal quadrature on a 1-D grid.
///
/// A coarse pass locates the posterior, a fine pass spans ±12 standard
/// deviations around it.
pub fn gaussian_posterior_by_quadrature(x0: f64, x_t: f64, alpha_t: f64, alpha_bar_prev: f64) -> (f64, f64) {
    let beta = 1.0 - alpha_t;
    let log_w = move |x: f64| {
        normal_log_density(x_t, alpha_t.sqrt() * x, beta)
            + normal_log_density(x, alpha_bar_prev.sqrt() * x0, 1.0 - alpha_bar_prev)
    };
    let span = 20.0 + x0.abs() + x_t.abs();
    let (m, v) = grid_moments(&log_w, -span, span, 400_001);
    let sd = v.sqrt();
    let (m, v) = grid_moments(&log_w, m - 12.0 * sd, m + 12.0 * sd, 20_001);
    let sd = v.sqrt();
    grid_moments(&log_w, m - 12.0 * sd, m + 12.0 * sd, 20_001)
}

/// One-step transition matrix `Q_s[i][j] = q(v_s = j | v_{s−1} = i)`.
pub fn transition(beta: f64, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| beta / k as f64 + if i == j { 1.0 - beta } else { 0.0 })
                .collect()
        })
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = a.len();
    (0..k)
        .map(|i| (0..k).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

/// `Q_1 Q_2 ⋯ Q_t` for 1-based step betas; identity for `t = 0`.
pub fn cumulative_transition(betas: &[f64], t: usize, k: usize) -> Vec<Vec<f64>> {
    let mut acc = transition(0.0, k);
    for &b in &betas[..t] {
        acc = matmul(&acc, &transition(b, k));
    }
    acc
}

/// `q(v_{t−1} = · | v_t, v_0)` by Bayes' rule over explicit transition
/// matrices, for one-hot `v_t` and `v_0` given as indices.
pub fn categorical_posterior_by_enumeration(v_t: usize, v0: usize, betas: &[f64], t: usize, k: usize) -> Vec<f64> {
    let step = transition(betas[t - 1], k);
    let prior = cumulative_transition(betas, t - 1, k);
    let joint: Vec<f64> = (0..k).map(|j| step[j][v_t] * prior[v0][j]).collect();
    let z: f64 = joint.iter().sum();
    joint.into_iter().map(|p| p / z).collect()
}

/// Critical value of the χ² distribution with `dof` degrees of freedom.
pub fn chi2_critical(dof: usize, significance: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof as f64).unwrap().inverse_cdf(1.0 - significance)
}

/// A 6-atom ligand in a 10-atom pocket with no symmetry.
pub fn small_complex() -> Complex {
    let ligand = vec![
        [0.3, -0.2, 0.1],
        [1.6, 0.4, -0.3],
        [2.1, 1.7, 0.2],
        [-0.9, 0.8, 0.6],
        [0.5, -1.4, 1.1],
        [-1.2, -0.7, -0.8],
    ];
    let pocket = vec![
        [4.0, 0.5, 0.2],
        [-3.8, 0.9, -0.4],
        [0.3, 4.2, 0.7],
        [0.1, -3.9, 0.5],
        [0.6, 0.2, 4.1],
        [-0.5, 0.4, -4.3],
        [2.9, 2.8, -1.2],
        [-2.7, -2.6, 1.9],
        [2.5, -2.9, -2.2],
        [-2.2, 3.1, 2.4],
    ];
    Complex {
        protein: ProteinContext::new(pocket, vec![0, 1, 0, 0, 1, 0, 1, 0, 0, 1], 2).unwrap(),
        ligand: Molecule::new(ligand, vec![0, 2, 0, 1, 3, 0], 4).unwrap(),
    }
}

pub fn tiny_denoiser(num_steps: usize) -> DenoiserConfig {
    DenoiserConfig {
        hidden: 12,
        layers: 3,
        time_dim: 8,
        num_steps,
        ..DenoiserConfig::default()
    }
}

/// Always predicts the same molecule, counting how often it is queried.
pub struct TemplatePredictor {
    pub template: Molecule,
    pub calls: Cell<usize>,
}

impl TemplatePredictor {
    pub fn new(template: Molecule) -> Self {
        Self {
            template,
            calls: Cell::new(0),
        }
    }
}

impl CleanPredictor for TemplatePredictor {
    fn predict_clean(&self, y_x: &[Vec3], _: &Tensor, _: usize, _: &ProteinContext) -> Result<Prediction> {
        assert_eq!(y_x.len(), self.template.len());
        self.calls.set(self.calls.get() + 1);
        Ok(Prediction {
            positions: self.template.positions.clone(),
            type_probs: self.template.one_hot(),
        })
    }
}

/// Untrained-network stand-in: predicts the origin for every atom and
/// uniform types.
pub struct ZeroPredictor {
    pub num_types: usize,
}

impl CleanPredictor for ZeroPredictor {
    fn predict_clean(&self, y_x: &[Vec3], _: &Tensor, _: usize, _: &ProteinContext) -> Result<Prediction> {
        let m = y_x.len();
        Ok(Prediction {
            positions: vec![[0.0; 3]; m],
            type_probs: Tensor::full(vec![m, self.num_types], 1.0 / self.num_types as f64),
        })
    }
}

/// Small synthetic training set.
pub fn tiny_corpus(n: usize, seed: u64) -> Vec<Complex> {
    let spec = pocketdiff::dataio::CorpusSpec {
        num_complexes: n,
        ligand_max: 7,
        pocket_min: 12,
        pocket_max: 14,
        seed,
        ..Default::default()
    };
    pocketdiff::dataio::generate_corpus(&spec)
        .unwrap()
        .into_iter()
        .map(|g| g.complex)
        .collect()
}

pub fn tiny_train_config(total_steps: u64) -> pocketdiff::trainer::TrainConfig {
    pocketdiff::trainer::TrainConfig {
        total_steps,
        batch_size: 3,
        lr: 1e-3,
        num_steps: 20,
        beta_start: 1e-3,
        beta_end: 0.2,
        hidden: 12,
        layers: 2,
        time_dim: 8,
        seed: 99,
        ..Default::default()
    }
}

/// Freshly initialized parameters with the coordinate head scaled up, so
/// position outputs move well away from the inputs.
pub fn sharpened_params(config: DenoiserConfig, seed: u64) -> pocketdiff::denoiser::DenoiserParams {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = pocketdiff::denoiser::DenoiserParams::init(config, &mut rng).unwrap();
    let layout = params.config.layout();
    for (tensor, (name, _)) in params.tensors.iter_mut().zip(&layout) {
        if name.ends_with("coord.w2") {
            *tensor = tensor.map(|v| v * 300.0);
        }
    }
    params
}
