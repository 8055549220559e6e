//! Noise schedule tables and probability annealing curves.
//!
//! [`NoiseSchedule`] holds `β_t`, `α_t = 1 − β_t` and the cumulative
//! products `ᾱ_t` for `t = 1..=T`, with `ᾱ_0 = 1`.
//!
//! [`AnnealSpec`] maps a training pseudo-epoch to the probability `p_T` of
//! conditioning on the true noisy molecule rather than the pseudo molecule.
//! Three curve families are supported:
//!
//! * `original`: `μ / (μ + exp(e/μ))`
//! * `linear`: `1 + slope·e`
//! * `arc`: `√max(r² − (e/100)², 0) / r`
//!
//! The raw value is scaled by `p_init`, floored at `lower_bound` and clipped
//! to `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linearly interpolated from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("step count must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("step count must be at least 1".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta_{} = {b} is outside (0, 1)", i + 1)));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for a in &alphas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// `T`.
    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `t ∈ 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `α_t` for `t ∈ 1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t` for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.num_steps(),
            });
        }
        Ok(())
    }
}

/// Radius of the arc curve. An infinite radius keeps `p_T ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArcRadius {
    Finite(f64),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnnealCurve {
    Original { mu: f64 },
    Linear { slope: f64 },
    Arc { radius: ArcRadius },
}

impl AnnealCurve {
    pub fn name(&self) -> &'static str {
        match self {
            AnnealCurve::Original { .. } => "original",
            AnnealCurve::Linear { .. } => "linear",
            AnnealCurve::Arc { .. } => "arc",
        }
    }

    /// Unclamped curve value at pseudo-epoch `e`.
    pub fn raw(&self, e: u64) -> f64 {
        let e = e as f64;
        match *self {
            AnnealCurve::Original { mu } => mu / (mu + (e / mu).exp()),
            AnnealCurve::Linear { slope } => 1.0 + slope * e,
            AnnealCurve::Arc {
                radius: ArcRadius::Infinite,
            } => 1.0,
            AnnealCurve::Arc {
                radius: ArcRadius::Finite(r),
            } => {
                let x = e / 100.0;
                (r * r - x * x).max(0.0).sqrt() / r
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSpec {
    pub curve: AnnealCurve,
    pub lower_bound: f64,
    pub epoch_divisor: u64,
    pub p_init: f64,
}

impl Default for AnnealSpec {
    fn default() -> Self {
        Self::arc(2.0)
    }
}

impl AnnealSpec {
    fn with_curve(curve: AnnealCurve) -> Self {
        Self {
            curve,
            lower_bound: 0.5,
            epoch_divisor: 1000,
            p_init: 1.0,
        }
    }

    pub fn arc(r: f64) -> Self {
        Self::with_curve(AnnealCurve::Arc {
            radius: ArcRadius::Finite(r),
        })
    }

    /// Arc with infinite radius: the pseudo molecule is never selected.
    pub fn disabled() -> Self {
        Self::with_curve(AnnealCurve::Arc {
            radius: ArcRadius::Infinite,
        })
    }

    pub fn original(mu: f64) -> Self {
        Self::with_curve(AnnealCurve::Original { mu })
    }

    pub fn linear(slope: f64) -> Self {
        Self::with_curve(AnnealCurve::Linear { slope })
    }

    pub fn with_lower_bound(mut self, lower_bound: f64) -> Self {
        self.lower_bound = lower_bound;
        self
    }

    pub fn with_epoch_divisor(mut self, divisor: u64) -> Self {
        self.epoch_divisor = divisor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidAnneal(m));
        if !(0.0..=1.0).contains(&self.lower_bound) {
            return bad(format!("lower_bound {} outside [0, 1]", self.lower_bound));
        }
        if !(0.0..=1.0).contains(&self.p_init) {
            return bad(format!("p_init {} outside [0, 1]", self.p_init));
        }
        if self.epoch_divisor == 0 {
            return bad("epoch_divisor must be at least 1".into());
        }
        match self.curve {
            AnnealCurve::Original { mu } if !(mu > 0.0 && mu.is_finite()) => bad(format!("mu must be positive, got {mu}")),
            AnnealCurve::Linear { slope } if !slope.is_finite() => bad(format!("slope must be finite, got {slope}")),
            AnnealCurve::Arc {
                radius: ArcRadius::Finite(r),
            } if !(r > 0.0 && r.is_finite()) => bad(format!("r must be positive, got {r}")),
            _ => Ok(()),
        }
    }

    /// `p_T` at pseudo-epoch `e`.
    pub fn probability(&self, e: u64) -> f64 {
        anneal_probability(self, e)
    }

    /// `p_T` for a training step, via [`epoch_from_step`].
    pub fn probability_at_step(&self, step: u64) -> Result<f64> {
        Ok(self.probability(epoch_from_step(step, self.epoch_divisor)?))
    }

    pub fn is_disabled(&self) -> bool {
        matches!(
            self.curve,
            AnnealCurve::Arc {
                radius: ArcRadius::Infinite
            }
        )
    }
}

/// Annealed selection probability: raw curve, then floored at the lower
/// bound, then clipped to `[0, 1]`.
pub fn anneal_probability(spec: &AnnealSpec, e: u64) -> f64 {
    let raw = spec.p_init * spec.curve.raw(e);
    raw.max(spec.lower_bound).clamp(0.0, 1.0)
}

/// Pseudo-epoch index `⌊step / divisor⌋`.
pub fn epoch_from_step(step: u64, divisor: u64) -> Result<u64> {
    if divisor == 0 {
        return Err(Error::InvalidAnneal("epoch divisor must be at least 1".into()));
    }
    Ok(step / divisor)
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

impl fmt::Display for AnnealSpec {
    /// Colon-separated form accepted by [`AnnealSpec::from_str`], e.g.
    /// `arc:r=2:lower_bound=0.5:epoch_divisor=1000:p_init=1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.curve {
            AnnealCurve::Original { mu } => write!(f, "original:mu={}", fmt_num(mu))?,
            AnnealCurve::Linear { slope } => write!(f, "linear:slope={}", fmt_num(slope))?,
            AnnealCurve::Arc {
                radius: ArcRadius::Finite(r),
            } => write!(f, "arc:r={}", fmt_num(r))?,
            AnnealCurve::Arc {
                radius: ArcRadius::Infinite,
            } => write!(f, "arc:r=inf")?,
        }
        write!(
            f,
            ":lower_bound={}:epoch_divisor={}:p_init={}",
            fmt_num(self.lower_bound),
            self.epoch_divisor,
            fmt_num(self.p_init)
        )
    }
}

impl FromStr for AnnealSpec {
    type Err = Error;

    /// Parses `kind[:key=value]*` where kind is `original`, `linear` or `arc`.
    /// Keys: `mu`, `slope`, `r` (`inf` allowed), `lower_bound` (or `lb`),
    /// `epoch_divisor`, `p_init`. Unspecified keys take the defaults.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split([':', ',']);
        let kind = parts.next().unwrap_or("").trim();
        let mut spec = match kind {
            "original" => AnnealSpec::original(12.0),
            "linear" => AnnealSpec::linear(-0.005),
            "arc" => AnnealSpec::arc(2.0),
            other => {
                return Err(Error::InvalidAnneal(format!(
                    "unknown curve kind `{other}` (expected original, linear or arc)"
                )))
            }
        };
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidAnneal(format!("expected key=value, got `{part}`")))?;
            spec.set_param(k.trim(), v.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl AnnealSpec {
    /// Sets one curve parameter by name.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::InvalidAnneal(format!("`{key}` needs a number, got `{v}`")))
        };
        match (key, &mut self.curve) {
            ("mu", AnnealCurve::Original { mu }) => *mu = num(value)?,
            ("slope", AnnealCurve::Linear { slope }) => *slope = num(value)?,
            ("r", AnnealCurve::Arc { radius }) => {
                *radius = match value {
                    "inf" | "infinity" | "∞" => ArcRadius::Infinite,
                    v => ArcRadius::Finite(num(v)?),
                }
            }
            ("lower_bound" | "lb", _) => self.lower_bound = num(value)?,
            ("p_init", _) => self.p_init = num(value)?,
            ("epoch_divisor", _) => {
                self.epoch_divisor = value
                    .parse()
                    .map_err(|_| Error::InvalidAnneal(format!("epoch_divisor needs an integer, got `{value}`")))?
            }
            (k, curve) => {
                return Err(Error::InvalidAnneal(format!(
                    "parameter `{k}` does not apply to the {} curve",
                    curve.name()
                )))
            }
        }
        Ok(())
    }
}

/// Curve values per epoch for several named specs.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub names: Vec<String>,
    pub rows: Vec<(u64, Vec<f64>)>,
}

impl CurveTable {
    /// CSV with header `epoch,<name>...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (e, values) in &self.rows {
            out.push_str(&e.to_string());
            for v in values {
                out.push_str(&format!(",{v:.9}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates each spec at epochs `0..=max_epoch`.
pub fn dump_curves(specs: &[(String, AnnealSpec)], max_epoch: u64) -> Result<CurveTable> {
    if max_epoch == 0 {
        return Err(Error::InvalidAnneal("max_epoch must be at least 1".into()));
    }
    let rows = (0..=max_epoch)
        .map(|e| (e, specs.iter().map(|(_, s)| s.probability(e)).collect()))
        .collect();
    Ok(CurveTable {
        names: specs.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}
