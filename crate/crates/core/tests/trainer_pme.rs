mod common;

use common::*;
use pocketdiff::checkpoint::Checkpoint;
use pocketdiff::denoiser::DenoiserParams;
use pocketdiff::diffusion::{noisy_state, Complex, Molecule};
use pocketdiff::schedules::{anneal_probability, epoch_from_step, AnnealSpec, NoiseSchedule};
use pocketdiff::trainer::{
    batch_indices, center_complex, compute_gradients, pseudo_molecule_estimation, train, StepRecord, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn constant_p(p: f64) -> AnnealSpec {
    AnnealSpec {
        p_init: p,
        ..AnnealSpec::linear(0.0).with_lower_bound(0.0)
    }
}

fn centered_ligand() -> (Molecule, pocketdiff::diffusion::ProteinContext) {
    let (c, _) = center_complex(&small_complex()).unwrap();
    (c.ligand, c.protein)
}

fn run(config: &pocketdiff::trainer::TrainConfig, data: &[Complex]) -> (Vec<StepRecord>, DenoiserParams) {
    let mut trainer = Trainer::new(config.clone(), data).unwrap();
    let records = (0..config.total_steps).map(|_| trainer.step().unwrap()).collect();
    (records, trainer.params().clone())
}

#[test]
fn selection_frequency_matches_p() {
    let schedule = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
    let (clean, protein) = centered_ligand();
    let predictor = ZeroPredictor { num_types: 4 };
    let trials = 100_000;
    for p in [0.0, 0.25, 0.5, 0.8, 1.0] {
        let mut select = ChaCha8Rng::seed_from_u64(1000 + (p * 100.0) as u64);
        let mut estimate = ChaCha8Rng::seed_from_u64(7);
        let mut noise = ChaCha8Rng::seed_from_u64(8);
        let noisy = noisy_state(&clean, 10, &schedule, &mut noise).unwrap();
        let mut hits = 0usize;
        for _ in 0..trials {
            let pm = pseudo_molecule_estimation(
                &clean,
                &noisy,
                &protein,
                p,
                &predictor,
                &schedule,
                &mut select,
                &mut estimate,
            )
            .unwrap();
            assert_eq!(pm.chose_ground_truth, !pm.estimated);
            hits += pm.chose_ground_truth as usize;
        }
        let freq = hits as f64 / trials as f64;
        assert!((freq - p).abs() <= 0.005, "p={p}: {freq}");
    }
}

#[test]
fn final_timestep_never_estimates() {
    let schedule = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
    let (clean, protein) = centered_ligand();
    let predictor = TemplatePredictor::new(clean.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let noisy = noisy_state(&clean, 20, &schedule, &mut rng).unwrap();
        let pm = pseudo_molecule_estimation(
            &clean,
            &noisy,
            &protein,
            0.0,
            &predictor,
            &schedule,
            &mut ChaCha8Rng::seed_from_u64(1),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert!(pm.chose_ground_truth && !pm.estimated);
        assert_eq!(pm.positions, noisy.positions);
    }
    assert_eq!(predictor.calls.get(), 0);
}

#[test]
fn positions_and_types_switch_together() {
    // With a near-identity chain each source is recognizable on its own.
    let schedule = NoiseSchedule::linear(10, 1e-10, 1e-10).unwrap();
    let (clean, protein) = centered_ligand();
    let template = Molecule::new(
        clean.positions.iter().map(|p| [p[0] + 5.0, p[1], p[2]]).collect(),
        clean.types.iter().map(|&t| (t + 1) % 4).collect(),
        4,
    )
    .unwrap();
    let predictor = TemplatePredictor::new(template.clone());
    let mut select = ChaCha8Rng::seed_from_u64(4);
    let mut estimate = ChaCha8Rng::seed_from_u64(5);
    let mut noise = ChaCha8Rng::seed_from_u64(6);
    let (mut gt, mut est) = (0, 0);
    for _ in 0..500 {
        let noisy = noisy_state(&clean, 4, &schedule, &mut noise).unwrap();
        let pm = pseudo_molecule_estimation(
            &clean,
            &noisy,
            &protein,
            0.5,
            &predictor,
            &schedule,
            &mut select,
            &mut estimate,
        )
        .unwrap();
        let near = |a: &[[f64; 3]], b: &[[f64; 3]]| a.iter().zip(b).all(|(x, y)| (0..3).all(|k| (x[k] - y[k]).abs() < 1e-3));
        if pm.chose_ground_truth {
            gt += 1;
            assert_eq!(pm.positions, noisy.positions);
            assert_eq!(pm.types, noisy.types);
        } else {
            est += 1;
            assert!(near(&pm.positions, &template.positions));
            assert_eq!(pm.types, template.types);
        }
    }
    assert!(gt > 0 && est > 0);
}

#[test]
fn untrained_estimate_has_prior_variance() {
    // ZeroPredictor returns the origin and uniform rows; argmax takes type 0,
    // so the pseudo molecule is the forward marginal of (0, type 0) at t.
    let schedule = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
    let t = 12;
    let ab = schedule.alpha_bar(t);
    let (clean, protein) = centered_ligand();
    let predictor = ZeroPredictor { num_types: 4 };
    let mut select = ChaCha8Rng::seed_from_u64(9);
    let mut estimate = ChaCha8Rng::seed_from_u64(10);
    let mut noise = ChaCha8Rng::seed_from_u64(11);
    let noisy = noisy_state(&clean, t, &schedule, &mut noise).unwrap();
    let (mut s1, mut s2, mut n) = (0.0, 0.0, 0usize);
    let mut counts = [0.0; 4];
    for _ in 0..20_000 {
        let pm = pseudo_molecule_estimation(
            &clean,
            &noisy,
            &protein,
            0.0,
            &predictor,
            &schedule,
            &mut select,
            &mut estimate,
        )
        .unwrap();
        for p in &pm.positions {
            for &c in p {
                s1 += c;
                s2 += c * c;
                n += 1;
            }
        }
        for &v in &pm.types {
            counts[v] += 1.0;
        }
    }
    let nf = n as f64;
    let var = 1.0 - ab;
    assert!((s1 / nf).abs() < 3.0 * (var / nf).sqrt(), "mean {}", s1 / nf);
    let s2c = s2 / nf;
    assert!((s2c - var).abs() < 3.0 * var * (2.0 / nf).sqrt(), "second moment {s2c} vs {var}");
    let total: f64 = counts.iter().sum();
    let stat: f64 = (0..4)
        .map(|j| {
            let p = ab * (j == 0) as u8 as f64 + (1.0 - ab) / 4.0;
            (counts[j] - total * p).powi(2) / (total * p)
        })
        .sum();
    assert!(stat < chi2_critical(3, 0.001), "χ²={stat}");
}

#[test]
fn always_ground_truth_matches_classic_mode_bit_for_bit() {
    let data = tiny_corpus(10, 1);
    let base = tiny_train_config(15);
    let classic = pocketdiff::trainer::TrainConfig {
        classic: true,
        ..base.clone()
    };
    for anneal in [AnnealSpec::disabled(), AnnealSpec::arc(2.0).with_lower_bound(1.0), constant_p(1.0)] {
        let cfg = pocketdiff::trainer::TrainConfig {
            anneal,
            ..base.clone()
        };
        let (ra, pa) = run(&cfg, &data);
        let (rb, pb) = run(&classic, &data);
        assert_eq!(ra, rb);
        assert_eq!(pa.tensors, pb.tensors);
        assert!(ra.iter().all(|r| r.estimations == 0 && r.chose_gt_fraction == 1.0));
    }
}

#[test]
fn estimation_contributes_no_gradient() {
    let data = tiny_corpus(10, 2);
    let config = pocketdiff::trainer::TrainConfig {
        anneal: constant_p(0.0),
        ..tiny_train_config(1)
    };
    let trainer = Trainer::new(config.clone(), &data).unwrap();
    let live = trainer.params();
    let frozen = live.clone();
    let schedule = trainer.schedule();
    let mut other = live.clone();
    for t in other.tensors.iter_mut() {
        *t = t.map(|v| v * 1.5);
    }
    let mut saw_estimate = false;
    for step in 0..6 {
        let idx = batch_indices(config.seed, step, config.batch_size, data.len());
        let batch: Vec<&Complex> = idx.iter().map(|&i| &data[i]).collect();
        let (ra, ga) = compute_gradients(&batch, step, &config, live, live, schedule).unwrap();
        let (rb, gb) = compute_gradients(&batch, step, &config, live, &frozen, schedule).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ga, gb);
        if ra.estimations > 0 {
            saw_estimate = true;
            let (rc, _) = compute_gradients(&batch, step, &config, live, &other, schedule).unwrap();
            assert_ne!(ra.loss, rc.loss, "estimator output is unused");
        }
    }
    assert!(saw_estimate);
}

#[test]
fn logged_p_follows_the_annealing_curve() {
    let data = tiny_corpus(8, 3);
    let anneal = AnnealSpec::arc(2.0).with_epoch_divisor(2);
    let config = pocketdiff::trainer::TrainConfig {
        anneal,
        ..tiny_train_config(40)
    };
    let (records, _) = run(&config, &data);
    for r in &records {
        let e = epoch_from_step(r.step, 2).unwrap();
        assert_eq!(r.epoch, e);
        assert_eq!(r.p, anneal_probability(&anneal, e));
        assert!(r.kl >= 0.0 && r.mse >= 0.0);
    }
}

#[test]
fn disabled_and_arc_traces_agree_until_first_estimate() {
    let data = tiny_corpus(10, 4);
    let base = tiny_train_config(80);
    let never = pocketdiff::trainer::TrainConfig {
        anneal: AnnealSpec::disabled().with_epoch_divisor(1),
        ..base.clone()
    };
    let arc = pocketdiff::trainer::TrainConfig {
        anneal: AnnealSpec::arc(2.0).with_epoch_divisor(1),
        ..base
    };
    let (ra, _) = run(&never, &data);
    let (rb, _) = run(&arc, &data);
    assert!(ra.iter().all(|r| r.estimations == 0));
    let first = rb
        .iter()
        .position(|r| r.estimations > 0)
        .expect("arc arm never estimated");
    for (a, b) in ra.iter().zip(&rb).take(first) {
        assert_eq!((a.mse, a.kl, a.loss, &a.timesteps), (b.mse, b.kl, b.loss, &b.timesteps));
    }
    assert_eq!(ra[first].timesteps, rb[first].timesteps);
    assert_ne!(ra[first].loss, rb[first].loss);
}

#[test]
fn same_seed_reproduces_files_exactly() {
    let data = tiny_corpus(8, 5);
    let config = pocketdiff::trainer::TrainConfig {
        anneal: AnnealSpec::arc(2.0).with_epoch_divisor(1),
        checkpoint_every: 5,
        ..tiny_train_config(12)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = train(&config, &data, a.path()).unwrap();
    let ob = train(&config, &data, b.path()).unwrap();
    for name in ["metrics.csv", "checkpoint.bin", "checkpoint_000005.bin", "checkpoint_000010.bin", "train_config.txt"] {
        let fa = std::fs::read(a.path().join(name)).unwrap();
        let fb = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(fa, fb, "{name}");
    }
    assert_eq!(oa.records, ob.records);
    let text = std::fs::read_to_string(&oa.metrics_path).unwrap();
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn zero_steps_saves_the_initial_network() {
    let data = tiny_corpus(4, 6);
    let config = tiny_train_config(0);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&config, &data, dir.path()).unwrap();
    assert!(out.records.is_empty());
    let init = Trainer::new(config, &data).unwrap();
    let loaded = Checkpoint::load(&out.checkpoint_path).unwrap();
    assert_eq!(loaded.params.tensors, init.params().tensors);
    assert_eq!(loaded.meta("train.step"), Some("0"));
}
