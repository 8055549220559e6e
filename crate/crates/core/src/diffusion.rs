//! Hybrid forward process and closed-form posteriors.
//!
//! Positions follow a Gaussian chain, `x_t = √ᾱ_t x_0 + √(1−ᾱ_t) ε`.
//! Atom types follow a categorical chain that mixes the one-hot row with
//! the uniform distribution, `q(v_t | v_0) = C(ᾱ_t v_0 + (1−ᾱ_t)/K)`, and
//! are sampled with the Gumbel-max trick.

use pocketdiff_tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::Vec3;
use crate::schedules::NoiseSchedule;
use crate::{Error, Result};

/// Atom positions (Å) with categorical types drawn from `num_types` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub positions: Vec<Vec3>,
    pub types: Vec<usize>,
    pub num_types: usize,
}

fn validate_atoms(positions: &[Vec3], types: &[usize], num_types: usize) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::InvalidMolecule("no atoms".into()));
    }
    if positions.len() != types.len() {
        return Err(Error::InvalidMolecule(format!(
            "{} positions but {} types",
            positions.len(),
            types.len()
        )));
    }
    if let Some(t) = types.iter().find(|&&t| t >= num_types) {
        return Err(Error::InvalidMolecule(format!("type index {t} outside 0..{num_types}")));
    }
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMolecule("non-finite coordinate".into()));
    }
    Ok(())
}

impl Molecule {
    pub fn new(positions: Vec<Vec3>, types: Vec<usize>, num_types: usize) -> Result<Self> {
        validate_atoms(&positions, &types, num_types)?;
        Ok(Self {
            positions,
            types,
            num_types,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn one_hot(&self) -> Tensor {
        one_hot(&self.types, self.num_types)
    }
}

/// The conditioning pocket. Same layout as [`Molecule`], with its own type
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProteinContext {
    pub positions: Vec<Vec3>,
    pub types: Vec<usize>,
    pub num_types: usize,
}

impl ProteinContext {
    pub fn new(positions: Vec<Vec3>, types: Vec<usize>, num_types: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyProtein);
        }
        validate_atoms(&positions, &types, num_types)?;
        Ok(Self {
            positions,
            types,
            num_types,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// A ligand together with the pocket it binds.
#[derive(Debug, Clone, PartialEq)]
pub struct Complex {
    pub protein: ProteinContext,
    pub ligand: Molecule,
}

/// `M_t = [x_t, v_t]` at timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyState {
    pub positions: Vec<Vec3>,
    pub types: Vec<usize>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<Vec3>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPosterior {
    pub probs: Tensor,
}

pub fn one_hot(types: &[usize], num_types: usize) -> Tensor {
    let mut data = vec![0.0; types.len() * num_types];
    for (i, &t) in types.iter().enumerate() {
        data[i * num_types + t] = 1.0;
    }
    Tensor::matrix(types.len(), num_types, data).expect("one-hot shape")
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    probs
        .iter_rows()
        .take(probs.rows())
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Standard Gumbel draw `−log(−log u)` with `u` kept strictly inside (0, 1).
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u = rng.random::<f64>().max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

/// Closed-form Gaussian marginal `q(x_t | x_0)`.
pub fn perturb_positions<R: Rng + ?Sized>(
    x0: &[Vec3],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<Vec3>> {
    schedule.check_timestep(t)?;
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for (o, &c) in out.iter_mut().zip(p) {
                let eps: f64 = rng.sample(StandardNormal);
                *o = signal * c + noise * eps;
            }
            out
        })
        .collect())
}

/// Categorical marginal `ᾱ_t v_0 + (1−ᾱ_t)/K` for one-hot rows given by index.
pub fn type_marginal(v0: &[usize], num_types: usize, t: usize, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_timestep(t)?;
    let ab = schedule.alpha_bar(t);
    let uniform = (1.0 - ab) / num_types as f64;
    Ok(one_hot(v0, num_types).map(|v| ab * v + uniform))
}

/// Gumbel-max sample from the categorical marginal.
pub fn perturb_types<R: Rng + ?Sized>(
    v0: &[usize],
    num_types: usize,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let probs = type_marginal(v0, num_types, t, schedule)?;
    Ok(probs
        .iter_rows()
        .take(v0.len())
        .map(|row| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (k, &p) in row.iter().enumerate() {
                let score = p.ln() + gumbel(rng);
                if score > best_score {
                    best = k;
                    best_score = score;
                }
            }
            best
        })
        .collect())
}

/// Forward process for a whole molecule: Gaussian positions and Gumbel-max types.
pub fn noisy_state<R: Rng + ?Sized>(
    mol: &Molecule,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<NoisyState> {
    let positions = perturb_positions(&mol.positions, t, schedule, rng)?;
    let types = perturb_types(&mol.types, mol.num_types, t, schedule, rng)?;
    Ok(NoisyState { positions, types, t })
}

/// Coefficients of `μ̃_t = c0·x_0 + ct·x_t` and the variance `β̃_t`.
pub fn posterior_coefficients(t: usize, schedule: &NoiseSchedule) -> Result<(f64, f64, f64)> {
    schedule.check_timestep(t)?;
    let beta = schedule.beta(t);
    let alpha = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let denom = 1.0 - ab;
    let c0 = ab_prev.sqrt() * beta / denom;
    let ct = alpha.sqrt() * (1.0 - ab_prev) / denom;
    let var = (1.0 - ab_prev) / denom * beta;
    Ok((c0, ct, var))
}

/// `q(x_{t−1} | x_t, x_0)` for every atom.
pub fn gaussian_posterior(
    x_t: &[Vec3],
    x0: &[Vec3],
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<GaussianPosterior> {
    if x_t.len() != x0.len() {
        return Err(Error::InvalidMolecule(format!(
            "x_t has {} atoms, x_0 has {}",
            x_t.len(),
            x0.len()
        )));
    }
    let (c0, ct, variance) = posterior_coefficients(t, schedule)?;
    let mean = x0
        .iter()
        .zip(x_t)
        .map(|(a, b)| [c0 * a[0] + ct * b[0], c0 * a[1] + ct * b[1], c0 * a[2] + ct * b[2]])
        .collect();
    Ok(GaussianPosterior { mean, variance })
}

/// Unnormalized posterior `c* = [α_t v_t + (1−α_t)/K] ⊙ [ᾱ_{t−1} v_0 + (1−ᾱ_{t−1})/K]`.
pub fn categorical_posterior_unnormalized(
    v_t: &Tensor,
    v0: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_timestep(t)?;
    if v_t.shape() != v0.shape() || v_t.ndim() != 2 {
        return Err(Error::InvalidMolecule(format!(
            "type rows disagree: v_t {:?}, v_0 {:?}",
            v_t.shape(),
            v0.shape()
        )));
    }
    let k = v_t.cols() as f64;
    let alpha = schedule.alpha(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    Ok(v_t.zip_map(v0, |vt, v0| {
        (alpha * vt + (1.0 - alpha) / k) * (ab_prev * v0 + (1.0 - ab_prev) / k)
    }))
}

/// Normalized categorical posterior `c̃_t = c* / Σ_k c*_k`. `v0` may hold soft
/// probability rows (network predictions).
pub fn categorical_posterior(
    v_t: &Tensor,
    v0: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<CategoricalPosterior> {
    let mut probs = categorical_posterior_unnormalized(v_t, v0, t, schedule)?;
    let cols = probs.cols();
    let rows = probs.rows();
    for r in 0..rows {
        let row = probs.row_mut(r);
        let z: f64 = row.iter().sum();
        if !(z > 0.0) {
            return Err(Error::DegeneratePosterior { row: r });
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    debug_assert_eq!(probs.cols(), cols);
    Ok(CategoricalPosterior { probs })
}

/// Mean over rows of `Σ_k p log(p/q)`, with `0·log(0/q) = 0`.
pub fn kl_categorical(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::InvalidMolecule(format!(
            "KL rows disagree: {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let rows = p.rows();
    let mut total = 0.0;
    for r in 0..rows {
        for (k, (&pi, &qi)) in p.row(r).iter().zip(q.row(r)).enumerate() {
            if pi > 0.0 {
                if qi <= 0.0 {
                    return Err(Error::InfiniteDivergence { row: r, category: k });
                }
                total += pi * (pi / qi).ln();
            }
        }
    }
    Ok(total / rows.max(1) as f64)
}
