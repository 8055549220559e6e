//! Training with pseudo molecule estimation.
//!
//! Each sample draws `t ~ U{1..T}`, perturbs the centered ligand to `M_t`
//! and then, with probability `1 − p_T`, swaps the condition for a pseudo
//! molecule: the clean ligand is perturbed to `t+1`, denoised by the current
//! network, hardened to one-hot types and perturbed back to `t`. The
//! network is trained on the chosen condition with
//!
//! ```text
//! L = mean_atoms ‖x_0 − x̂_0‖² + α · KL(c(y_v, v_0) ‖ c(y_v, v̂_0))
//! ```
//!
//! `p_T` follows the configured annealing curve over pseudo-epochs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pocketdiff_tensor::{Adam, AdamState, Tape, Tensor, TensorError, Var};
use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_value, unknown_key, FlatConfig};
use crate::denoiser::{forward, CleanPredictor, DenoiserConfig, DenoiserParams};
use crate::diffusion::{
    argmax_rows, categorical_posterior, noisy_state, one_hot, perturb_positions, perturb_types, Complex, Molecule,
    NoisyState, ProteinContext,
};
use crate::geometry::{centroid, sub, Vec3};
use crate::rng::{stream, Purpose};
use crate::sampler::SizeStats;
use crate::schedules::{epoch_from_step, AnnealSpec, NoiseSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight α of the type KL term.
    pub kl_weight: f64,
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub anneal: AnnealSpec,
    pub seed: u64,
    /// Skip pseudo molecule estimation entirely (plain diffusion training).
    pub classic: bool,
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    pub cutoff: f64,
    pub dense_below: usize,
    /// Write an intermediate checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub metrics_file: String,
    pub checkpoint_file: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        Self {
            total_steps: 3000,
            batch_size: 4,
            lr: 1e-4,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            kl_weight: 100.0,
            num_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            anneal: AnnealSpec::default(),
            seed: 2021,
            classic: false,
            hidden: d.hidden,
            layers: d.layers,
            time_dim: d.time_dim,
            cutoff: d.cutoff,
            dense_below: d.dense_below,
            checkpoint_every: 0,
            metrics_file: "metrics.csv".into(),
            checkpoint_file: "checkpoint.bin".into(),
        }
    }
}

impl FlatConfig for TrainConfig {
    const KEYS: &'static [&'static str] = &[
        "total_steps",
        "batch_size",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "kl_weight",
        "num_steps",
        "beta_start",
        "beta_end",
        "anneal",
        "seed",
        "classic",
        "hidden",
        "layers",
        "time_dim",
        "cutoff",
        "dense_below",
        "checkpoint_every",
        "metrics_file",
        "checkpoint_file",
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "total_steps" => self.total_steps = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "eps" => self.eps = parse_value(key, value)?,
            "kl_weight" => self.kl_weight = parse_value(key, value)?,
            "num_steps" => self.num_steps = parse_value(key, value)?,
            "beta_start" => self.beta_start = parse_value(key, value)?,
            "beta_end" => self.beta_end = parse_value(key, value)?,
            "anneal" => self.anneal = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "classic" => self.classic = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "layers" => self.layers = parse_value(key, value)?,
            "time_dim" => self.time_dim = parse_value(key, value)?,
            "cutoff" => self.cutoff = parse_value(key, value)?,
            "dense_below" => self.dense_below = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "metrics_file" => self.metrics_file = value.to_string(),
            "checkpoint_file" => self.checkpoint_file = value.to_string(),
            _ => return Err(unknown_key(key, Self::KEYS)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("total_steps", self.total_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("kl_weight", self.kl_weight.to_string()),
            ("num_steps", self.num_steps.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("anneal", self.anneal.to_string()),
            ("seed", self.seed.to_string()),
            ("classic", self.classic.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("time_dim", self.time_dim.to_string()),
            ("cutoff", self.cutoff.to_string()),
            ("dense_below", self.dense_below.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("metrics_file", self.metrics_file.clone()),
            ("checkpoint_file", self.checkpoint_file.clone()),
        ]
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.num_steps, self.beta_start, self.beta_end)
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn denoiser(&self, ligand_types: usize, protein_types: usize) -> DenoiserConfig {
        DenoiserConfig {
            hidden: self.hidden,
            layers: self.layers,
            ligand_types,
            protein_types,
            time_dim: self.time_dim,
            num_steps: self.num_steps,
            cutoff: self.cutoff,
            dense_below: self.dense_below,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, value: String, reason: &str| Error::BadValue {
            key: key.into(),
            value,
            reason: reason.into(),
        };
        if self.batch_size == 0 {
            return Err(bad("batch_size", "0".into(), "must be at least 1"));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(bad("kl_weight", self.kl_weight.to_string(), "must be non-negative"));
        }
        self.anneal.validate()?;
        self.schedule()?;
        Ok(())
    }
}

/// Translates the complex so the pocket's center of mass is at the origin.
/// Returns the centered complex and the offset that was subtracted.
pub fn center_complex(complex: &Complex) -> Result<(Complex, Vec3)> {
    if complex.protein.is_empty() {
        return Err(Error::EmptyProtein);
    }
    let offset = centroid(&complex.protein.positions);
    let shift = |ps: &[Vec3]| ps.iter().map(|&p| sub(p, offset)).collect::<Vec<_>>();
    let mut out = complex.clone();
    out.protein.positions = shift(&complex.protein.positions);
    out.ligand.positions = shift(&complex.ligand.positions);
    Ok((out, offset))
}

/// The condition the network is trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMolecule {
    pub positions: Vec<Vec3>,
    pub types: Vec<usize>,
    /// `true` when `(x_t, v_t)` was used as is.
    pub chose_ground_truth: bool,
    /// `true` when the network was queried (never at `t = T`).
    pub estimated: bool,
}

/// Picks the ground-truth noisy state with probability `p`, otherwise builds
/// a pseudo molecule from the predictor's estimate at `t+1`.
///
/// The selection draw comes from `select_rng` and all estimation noise from
/// `estimate_rng`; the predictor output is treated as a constant.
#[allow(clippy::too_many_arguments)]
pub fn pseudo_molecule_estimation<P, R1, R2>(
    clean: &Molecule,
    noisy: &NoisyState,
    protein: &ProteinContext,
    p: f64,
    predictor: &P,
    schedule: &NoiseSchedule,
    select_rng: &mut R1,
    estimate_rng: &mut R2,
) -> Result<PseudoMolecule>
where
    P: CleanPredictor + ?Sized,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let t = noisy.t;
    schedule.check_timestep(t)?;
    let ground_truth = PseudoMolecule {
        positions: noisy.positions.clone(),
        types: noisy.types.clone(),
        chose_ground_truth: true,
        estimated: false,
    };
    let u: f64 = select_rng.random();
    if u < p || t == schedule.num_steps() {
        return Ok(ground_truth);
    }
    let k = clean.num_types;
    let x_next = perturb_positions(&clean.positions, t + 1, schedule, estimate_rng)?;
    let v_next = perturb_types(&clean.types, k, t + 1, schedule, estimate_rng)?;
    let pred = predictor.predict_clean(&x_next, &one_hot(&v_next, k), t + 1, protein)?;
    let hard = argmax_rows(&pred.type_probs);
    let positions = perturb_positions(&pred.positions, t, schedule, estimate_rng)?;
    let types = perturb_types(&hard, k, t, schedule, estimate_rng)?;
    Ok(PseudoMolecule {
        positions,
        types,
        chose_ground_truth: false,
        estimated: true,
    })
}

/// Handles and values of one sample's loss on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub loss: Var,
    pub mse: f64,
    pub kl: f64,
}

/// Records the loss for one (clean, condition) pair. `params` come from
/// [`DenoiserParams::attach`] on the same tape.
#[allow(clippy::too_many_arguments)]
pub fn loss_on_tape(
    tape: &mut Tape,
    config: &DenoiserConfig,
    params: &[Var],
    clean: &Molecule,
    condition_x: &[Vec3],
    condition_v: &[usize],
    t: usize,
    protein: &ProteinContext,
    schedule: &NoiseSchedule,
    kl_weight: f64,
) -> Result<LossVars> {
    let m = clean.len();
    let k = clean.num_types;
    let y_v = one_hot(condition_v, k);
    let out = forward(tape, config, params, condition_x, &y_v, t, protein)?;

    let x0 = tape.leaf(Tensor::from_rows(&clean.positions)?);
    let diff = tape.sub(out.positions, x0)?;
    let sq = tape.squared_norm(diff)?;
    let mse = tape.scale(sq, 1.0 / m as f64)?;

    // KL(q ‖ p̂) = Σ q log q − Σ q log p̂, with q fixed by the clean types.
    let q = categorical_posterior(&y_v, &clean.one_hot(), t, schedule)?.probs;
    let alpha = schedule.alpha(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let kf = k as f64;
    let left = tape.leaf(y_v.map(|v| alpha * v + (1.0 - alpha) / kf));
    let right = tape.scale(out.type_probs, ab_prev)?;
    let right = tape.add_scalar(right, (1.0 - ab_prev) / kf)?;
    let unnorm = tape.mul(left, right)?;
    let z = tape.row_sum(unnorm)?;
    let inv = tape.recip(z)?;
    let p_hat = tape.mul_col(unnorm, inv)?;
    let log_p = tape.log(p_hat)?;
    let q_entropy: f64 = q.data().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
    let qv = tape.leaf(q);
    let cross = tape.mul(qv, log_p)?;
    let cross = tape.sum(cross)?;
    let kl = tape.scale(cross, -1.0 / m as f64)?;
    let kl = tape.add_scalar(kl, q_entropy / m as f64)?;

    let weighted = tape.scale(kl, kl_weight)?;
    let loss = tape.add(mse, weighted)?;
    Ok(LossVars {
        loss,
        mse: tape.value(mse).item().expect("scalar"),
        kl: tape.value(kl).item().expect("scalar"),
    })
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub p: f64,
    pub mse: f64,
    pub kl: f64,
    pub loss: f64,
    pub chose_gt_fraction: f64,
    pub timesteps: Vec<usize>,
    pub estimations: usize,
}

pub const METRICS_HEADER: &str = "step,epoch,p_T,mse,kl,loss,chose_gt_fraction";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.epoch, self.p, self.mse, self.kl, self.loss, self.chose_gt_fraction
        )
    }
}

/// Indices of the batch used at `step`, drawn uniformly with replacement.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, dataset_len: usize) -> Vec<usize> {
    let mut rng = stream(seed, step, 0, Purpose::Batch);
    (0..batch_size).map(|_| rng.random_range(0..dataset_len)).collect()
}

/// Loss and parameter gradients for one batch. `estimator` produces the
/// pseudo molecules; in training it is the live network itself.
pub fn compute_gradients<E: CleanPredictor + ?Sized>(
    batch: &[&Complex],
    step: u64,
    config: &TrainConfig,
    params: &DenoiserParams,
    estimator: &E,
    schedule: &NoiseSchedule,
) -> Result<(StepRecord, Vec<Tensor>)> {
    let epoch = epoch_from_step(step, config.anneal.epoch_divisor)?;
    let p = config.anneal.probability(epoch);
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape);
    let mut total: Option<Var> = None;
    let (mut mse_sum, mut kl_sum, mut gt, mut estimations) = (0.0, 0.0, 0usize, 0usize);
    let mut timesteps = Vec::with_capacity(batch.len());

    for (item, complex) in batch.iter().enumerate() {
        let item = item as u64;
        let (centered, _) = center_complex(complex)?;
        let t = stream(config.seed, step, item, Purpose::Timestep).random_range(1..=schedule.num_steps());
        timesteps.push(t);
        let mut fwd = stream(config.seed, step, item, Purpose::ForwardNoise);
        let noisy = noisy_state(&centered.ligand, t, schedule, &mut fwd)?;
        let pseudo = if config.classic {
            PseudoMolecule {
                positions: noisy.positions.clone(),
                types: noisy.types.clone(),
                chose_ground_truth: true,
                estimated: false,
            }
        } else {
            pseudo_molecule_estimation(
                &centered.ligand,
                &noisy,
                &centered.protein,
                p,
                estimator,
                schedule,
                &mut stream(config.seed, step, item, Purpose::Selection),
                &mut stream(config.seed, step, item, Purpose::Estimation),
            )?
        };
        gt += pseudo.chose_ground_truth as usize;
        estimations += pseudo.estimated as usize;

        let lv = loss_on_tape(
            &mut tape,
            &params.config,
            &vars,
            &centered.ligand,
            &pseudo.positions,
            &pseudo.types,
            t,
            &centered.protein,
            schedule,
            config.kl_weight,
        )
        .map_err(|e| match e {
            Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss {
                step,
                t,
                mse: f64::NAN,
                kl: f64::NAN,
            },
            other => other,
        })?;
        if !(lv.mse.is_finite() && lv.kl.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                t,
                mse: lv.mse,
                kl: lv.kl,
            });
        }
        mse_sum += lv.mse;
        kl_sum += lv.kl;
        total = Some(match total {
            None => lv.loss,
            Some(acc) => tape.add(acc, lv.loss)?,
        });
    }

    let n = batch.len() as f64;
    let total = total.ok_or(Error::EmptyDataset)?;
    let mean = tape.scale(total, 1.0 / n)?;
    let grads = tape.backward(mean)?;
    let grads = vars.iter().map(|&v| grads.wrt(v)).collect();
    let record = StepRecord {
        step,
        epoch,
        p,
        mse: mse_sum / n,
        kl: kl_sum / n,
        loss: tape.value(mean).item().expect("scalar"),
        chose_gt_fraction: gt as f64 / n,
        timesteps,
        estimations,
    };
    Ok((record, grads))
}

/// Owns the network, optimizer state and step counter.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a [Complex],
    schedule: NoiseSchedule,
    params: DenoiserParams,
    adam: Adam,
    state: AdamState,
    step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a [Complex]) -> Result<Self> {
        config.validate()?;
        let first = data.first().ok_or(Error::EmptyDataset)?;
        let (k, kp) = (first.ligand.num_types, first.protein.num_types);
        if let Some(c) = data
            .iter()
            .find(|c| c.ligand.num_types != k || c.protein.num_types != kp)
        {
            return Err(Error::ParamMismatch(format!(
                "mixed vocabularies in dataset: ({k}, {kp}) vs ({}, {})",
                c.ligand.num_types, c.protein.num_types
            )));
        }
        let schedule = config.schedule()?;
        let mut init_rng = stream(config.seed, 0, 0, Purpose::Init);
        let params = DenoiserParams::init(config.denoiser(k, kp), &mut init_rng)?;
        let state = AdamState::new(&params.tensors);
        let adam = config.adam();
        Ok(Self {
            config,
            data,
            schedule,
            params,
            adam,
            state,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Runs one optimization step and returns its log record.
    pub fn step(&mut self) -> Result<StepRecord> {
        let idx = batch_indices(self.config.seed, self.step, self.config.batch_size, self.data.len());
        let batch: Vec<&Complex> = idx.iter().map(|&i| &self.data[i]).collect();
        let (record, grads) = compute_gradients(
            &batch,
            self.step,
            &self.config,
            &self.params,
            &self.params,
            &self.schedule,
        )?;
        self.adam
            .step(&mut self.params.tensors, &grads, &mut self.state)?;
        self.step += 1;
        Ok(record)
    }

    /// Checkpoint with the schedule, step and ligand-size statistics attached.
    pub fn checkpoint(&self) -> Checkpoint {
        let sizes = SizeStats::from_sizes(self.data.iter().map(|c| c.ligand.len()));
        Checkpoint::new(self.params.clone())
            .with_meta("schedule.num_steps", self.config.num_steps)
            .with_meta("schedule.beta_start", format!("{:?}", self.config.beta_start))
            .with_meta("schedule.beta_end", format!("{:?}", self.config.beta_end))
            .with_meta("train.step", self.step)
            .with_meta("train.anneal", &self.config.anneal)
            .with_meta("train.seed", self.config.seed)
            .with_meta("sizes", sizes.map(|s| s.to_string()).unwrap_or_default())
    }
}

/// What [`train`] produced.
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub records: Vec<StepRecord>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Renders records as the metrics CSV.
pub fn metrics_csv(records: &[StepRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Full training run writing the resolved config, metrics CSV and
/// checkpoints into `out_dir`.
pub fn train(config: &TrainConfig, data: &[Complex], out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let echo = out_dir.join("train_config.txt");
    std::fs::write(&echo, config.render()).map_err(|e| Error::io(&echo, e))?;

    let mut trainer = Trainer::new(config.clone(), data)?;
    let mut records = Vec::with_capacity(config.total_steps as usize);
    for _ in 0..config.total_steps {
        records.push(trainer.step()?);
        let s = trainer.step_index();
        if config.checkpoint_every > 0 && s % config.checkpoint_every == 0 && s < config.total_steps {
            trainer.checkpoint().save(&out_dir.join(format!("checkpoint_{s:06}.bin")))?;
        }
    }
    let metrics_path = out_dir.join(&config.metrics_file);
    std::fs::write(&metrics_path, metrics_csv(&records)).map_err(|e| Error::io(&metrics_path, e))?;
    let checkpoint_path = out_dir.join(&config.checkpoint_file);
    trainer.checkpoint().save(&checkpoint_path)?;
    Ok(TrainOutcome {
        params: trainer.params.clone(),
        records,
        metrics_path,
        checkpoint_path,
    })
}
