//! Reverse-process sampling of a ligand inside a pocket.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::CleanPredictor;
use crate::diffusion::{argmax_rows, categorical_posterior, gaussian_posterior, one_hot, Molecule, ProteinContext};
use crate::geometry::{add, centroid, sub, Vec3};
use crate::schedules::NoiseSchedule;
use crate::{Error, Result};

/// Where the sampler's randomness comes from. Any [`Rng`] works; tests plug
/// in transformed streams (e.g. rotated Gaussian noise).
pub trait NoiseSource {
    /// Three independent standard normal draws.
    fn gaussian3(&mut self) -> Vec3;
    /// One uniform draw in `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

impl<R: Rng + ?Sized> NoiseSource for R {
    fn gaussian3(&mut self) -> Vec3 {
        [
            self.sample(StandardNormal),
            self.sample(StandardNormal),
            self.sample(StandardNormal),
        ]
    }

    fn uniform(&mut self) -> f64 {
        self.random()
    }
}

fn draw_category(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left `u` above the last partial sum; take the last nonzero class.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Generates an `m`-atom ligand in `protein` by running the reverse chain
/// from `t = T` down to `1`.
///
/// Positions start as standard normal noise around the pocket's center of
/// mass and types as uniform one-hot draws. At `t = 1` the posterior
/// variance is zero, so the final step emits the mean and the argmax type.
pub fn sample_molecule<P, N>(
    protein: &ProteinContext,
    m: usize,
    num_types: usize,
    predictor: &P,
    schedule: &NoiseSchedule,
    noise: &mut N,
) -> Result<Molecule>
where
    P: CleanPredictor + ?Sized,
    N: NoiseSource + ?Sized,
{
    if m == 0 {
        return Err(Error::InvalidMolecule("sampled atom count must be at least 1".into()));
    }
    if protein.is_empty() {
        return Err(Error::EmptyProtein);
    }
    let offset = centroid(&protein.positions);
    let centered = ProteinContext {
        positions: protein.positions.iter().map(|&p| sub(p, offset)).collect(),
        ..protein.clone()
    };

    let mut x: Vec<Vec3> = (0..m).map(|_| noise.gaussian3()).collect();
    let mut v: Vec<usize> = (0..m)
        .map(|_| ((noise.uniform() * num_types as f64) as usize).min(num_types - 1))
        .collect();

    for t in (1..=schedule.num_steps()).rev() {
        let v_t = one_hot(&v, num_types);
        let pred = predictor.predict_clean(&x, &v_t, t, &centered)?;
        let post = gaussian_posterior(&x, &pred.positions, t, schedule)?;
        if t == 1 {
            x = post.mean;
            v = argmax_rows(&pred.type_probs);
        } else {
            let sd = post.variance.sqrt();
            x = post
                .mean
                .iter()
                .map(|&mu| {
                    let e = noise.gaussian3();
                    [mu[0] + sd * e[0], mu[1] + sd * e[1], mu[2] + sd * e[2]]
                })
                .collect();
            let cat = categorical_posterior(&v_t, &pred.type_probs, t, schedule)?;
            v = cat
                .probs
                .iter_rows()
                .take(m)
                .map(|row| draw_category(row, noise.uniform()))
                .collect();
        }
        if x.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::SamplerNonFinite { t });
        }
    }
    let positions = x.into_iter().map(|p| add(p, offset)).collect();
    Molecule::new(positions, v, num_types)
}

/// Empirical histogram of ligand sizes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SizeStats {
    counts: BTreeMap<usize, u64>,
}

impl SizeStats {
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for s in sizes {
            *counts.entry(s).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyStats);
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }
}

/// `size:count` pairs joined by commas, e.g. `6:50,10:50`.
impl fmt::Display for SizeStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.counts.iter().map(|(s, c)| format!("{s}:{c}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for SizeStats {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let parsed = part
                .split_once(':')
                .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            let (size, count): (usize, u64) =
                parsed.ok_or_else(|| Error::InvalidMolecule(format!("bad size histogram entry `{part}`")))?;
            *counts.entry(size).or_insert(0) += count;
        }
        if counts.is_empty() {
            return Err(Error::EmptyStats);
        }
        Ok(Self { counts })
    }
}

/// Draws a ligand size from `stats`, or returns `fixed` when given.
pub fn choose_atom_count<R: Rng + ?Sized>(stats: &SizeStats, fixed: Option<usize>, rng: &mut R) -> Result<usize> {
    if let Some(m) = fixed {
        return Ok(m);
    }
    let total = stats.total();
    if total == 0 {
        return Err(Error::EmptyStats);
    }
    let mut pick = rng.random_range(0..total);
    for (&size, &count) in &stats.counts {
        if pick < count {
            return Ok(size);
        }
        pick -= count;
    }
    unreachable!("pick is below the total count")
}
