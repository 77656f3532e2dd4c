use fedgnp_core::datagen::{benchmark_shifts, dirichlet_partition, generate, GeneratorConfig};
use fedgnp_core::federation::{
    aggregate, client_rng, client_update, init_seed, run, run_from, sample_clients,
    sample_minibatch, FedConfig, FederatedData, ProjectionScope,
};
use fedgnp_core::model::{MlpClassifier, ModelDims, PeftMask, Sample};
use fedgnp_core::tensorlab::{frob_inner, project, Matrix, ParamSet, SeededRng};
use fedgnp_core::Error;
use rand::Rng;

fn data(seed: u64, clients: usize, alpha: f64) -> FederatedData {
    let g = generate(&GeneratorConfig {
        seed,
        n_train: 400,
        n_test: 150,
        dim: 8,
        classes: 3,
        class_sep: 2.5,
        noise_std: 1.0,
        shifts: benchmark_shifts(8, 3),
    })
    .unwrap();
    let partition = dirichlet_partition(&g.id_train, clients, alpha, seed).unwrap();
    FederatedData {
        train: g.id_train,
        id_test: g.id_test,
        ood_tests: g.ood_tests,
        partition,
    }
}

fn cfg(mask: PeftMask) -> FedConfig {
    FedConfig {
        clients: 5,
        rounds: 12,
        eta: 0.1,
        steps_per_epoch: 3,
        batch_size: 16,
        hidden: 12,
        indicator_period: 4,
        mask,
        alpha: 0.5,
        seed: 7,
        ..FedConfig::default()
    }
}

fn masks() -> [PeftMask; 4] {
    [
        PeftMask::Full,
        PeftMask::BiasOnly,
        PeftMask::LowRank(2),
        PeftMask::Bottleneck(4),
    ]
}

fn model(mask: PeftMask) -> MlpClassifier {
    let dims = ModelDims {
        input: 8,
        hidden: 12,
        classes: 3,
    };
    MlpClassifier::init(init_seed(7), dims, mask).unwrap()
}

#[test]
fn zero_learning_rate_returns_received_weights() {
    let d = data(1, 5, 1.0);
    let shard = &d.partition.shards(&d.train).unwrap()[0];
    let mut c = cfg(PeftMask::Full);
    c.eta = 0.0;
    let m = model(PeftMask::Full);
    let out = client_update(&m, shard, &c, &mut client_rng(7, 1, 0)).unwrap();
    assert_eq!(out.params, m.trainable_params());
}

#[test]
fn single_step_matches_manual_sgd() {
    let d = data(1, 5, 1.0);
    let shard = &d.partition.shards(&d.train).unwrap()[2];
    let mut c = cfg(PeftMask::LowRank(2));
    c.steps_per_epoch = 1;
    c.batch_size = 4;
    let m = model(PeftMask::LowRank(2));
    let out = client_update(&m, shard, &c, &mut client_rng(7, 3, 2)).unwrap();

    let idx = sample_minibatch(&mut client_rng(7, 3, 2), shard.len(), 4);
    let (loss, grads) = m.loss_and_grad(&Sample::batch(shard, &idx)).unwrap();
    let manual = m.sgd_step(&grads, c.eta).unwrap();
    assert_eq!(out.params, manual.trainable_params());
    assert_eq!(out.loss, loss);

    let again = client_update(&m, shard, &c, &mut client_rng(7, 3, 2)).unwrap();
    assert_eq!(out, again);
}

#[test]
fn aggregate_matches_brute_force_weighted_mean() {
    let mut rng = SeededRng::new(3, 0);
    for _ in 0..50 {
        let sets: Vec<ParamSet> = (0..3)
            .map(|_| {
                ParamSet::new()
                    .with("a", Matrix::from_fn(2, 3, |_, _| rng.random_range(-5.0..5.0)), true)
                    .with("b", Matrix::from_fn(4, 1, |_, _| rng.random_range(-5.0..5.0)), true)
            })
            .collect();
        let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(1..100)).collect();
        let agg = aggregate(&sets, &sizes).unwrap();
        let total: usize = sizes.iter().sum();
        for name in ["a", "b"] {
            let got = agg.get(name).unwrap().as_slice();
            for (e, g) in got.iter().enumerate() {
                let want: f64 = sets
                    .iter()
                    .zip(&sizes)
                    .map(|(s, n)| s.get(name).unwrap().as_slice()[e] * *n as f64)
                    .sum::<f64>()
                    / total as f64;
                assert!((g - want).abs() <= 1e-12);
            }
        }
    }
}

/// Plain FedAvg written against the public building blocks only.
fn reference_fedavg(c: &FedConfig, d: &FederatedData) -> MlpClassifier {
    let shards = d.partition.shards(&d.train).unwrap();
    let dims = ModelDims {
        input: d.train.dim(),
        hidden: c.hidden,
        classes: d.train.classes(),
    };
    let mut global = MlpClassifier::init(init_seed(c.seed), dims, c.mask).unwrap();
    for t in 1..=c.rounds {
        let ids = sample_clients(c, t);
        let mut locals = Vec::new();
        let mut sizes = Vec::new();
        for &k in &ids {
            let res = client_update(&global, &shards[k], c, &mut client_rng(c.seed, t, k)).unwrap();
            locals.push(res.params);
            sizes.push(shards[k].len());
        }
        global = global.with_trainable(&aggregate(&locals, &sizes).unwrap()).unwrap();
    }
    global
}

#[test]
fn baseline_matches_reference_fedavg_bit_for_bit() {
    let d = data(2, 5, 0.5);
    for mask in masks() {
        let c = cfg(mask);
        let log = run(&c, &d).unwrap();
        assert_eq!(log.final_model, reference_fedavg(&c, &d), "{mask}");
        assert!(log.records.iter().all(|r| r.gamma == 0.0 && r.noise_norm == 0.0));
    }
}

#[test]
fn single_client_full_participation_is_centralized_sgd() {
    let d = data(4, 1, 1.0);
    let c = FedConfig {
        clients: 1,
        sample_rate: 1.0,
        local_epochs: 2,
        steps_per_epoch: 2,
        batch_size: 0,
        ..cfg(PeftMask::Full)
    };
    let log = run(&c, &d).unwrap();
    let all: Vec<usize> = (0..d.train.len()).collect();
    let batch = Sample::batch(&d.train, &all);
    let mut m = log.initial_model.clone();
    for t in 0..c.rounds {
        for _ in 0..4 {
            let (_, g) = m.loss_and_grad(&batch).unwrap();
            m = m.sgd_step(&g, c.eta).unwrap();
        }
        let acc = m.accuracy(&d.id_test).unwrap();
        assert_eq!(log.records[t].id_accuracy, acc);
    }
    assert_eq!(log.final_model, m);
}

#[test]
fn frozen_tensors_survive_gnp_runs() {
    let d = data(5, 5, 0.1);
    for mask in masks() {
        let mut c = cfg(mask);
        c.gnp_enabled = true;
        let log = run(&c, &d).unwrap();
        let before = log.initial_model.params();
        let after = log.final_model.params();
        for (name, t) in before.iter() {
            if !before.is_trainable(name) {
                let a = after.get(name).unwrap();
                assert!(
                    t.as_slice().iter().zip(a.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()),
                    "{mask}: {name} changed"
                );
            }
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let d = data(6, 5, 0.3);
    let mut c = cfg(PeftMask::Bottleneck(4));
    c.gnp_enabled = true;
    assert_eq!(run(&c, &d).unwrap(), run(&c, &d).unwrap());
    let mut other = c.clone();
    other.seed = 8;
    assert_ne!(run(&c, &d).unwrap().final_model, run(&other, &d).unwrap().final_model);
}

#[test]
fn zero_gamma_ceiling_reduces_to_fedavg() {
    let d = data(7, 5, 0.3);
    let base = cfg(PeftMask::Full);
    let gnp = FedConfig {
        gnp_enabled: true,
        gamma_max: 0.0,
        ..base.clone()
    };
    let a = run(&base, &d).unwrap();
    let b = run(&gnp, &d).unwrap();
    assert_eq!(a.final_model, b.final_model);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.id_accuracy, y.id_accuracy);
        assert_eq!(x.ood_accuracies, y.ood_accuracies);
        assert_eq!(y.gamma, 0.0);
    }
}

#[test]
fn first_round_uses_initial_gamma() {
    let d = data(8, 5, 1.0);
    let c = FedConfig {
        rounds: 1,
        gnp_enabled: true,
        indicator_period: 10,
        ..cfg(PeftMask::Full)
    };
    let log = run(&c, &d).unwrap();
    assert_eq!(log.records.len(), 1);
    assert_eq!(log.records[0].gamma, 1.0);
    assert!(log.records[0].snapshot.is_none());
}

#[test]
fn snapshot_cadence_and_gamma_refresh() {
    let d = data(9, 5, 1.0);
    let mut c = cfg(PeftMask::Full);
    c.gnp_enabled = true;
    let log = run(&c, &d).unwrap();
    let rounds: Vec<usize> = log.snapshots().map(|s| s.round).collect();
    assert_eq!(rounds, vec![4, 8, 12]);
    for r in &log.records {
        assert!((0.0..=c.gamma_max).contains(&r.gamma));
        if let Some(s) = r.snapshot {
            assert_eq!(r.gamma, s.gamma.value);
        }
    }
    assert_eq!(log.records[4].gamma, log.records[3].gamma);
}

#[test]
fn noise_norm_tracks_robust_norm() {
    let d = data(10, 5, 0.2);
    let c = FedConfig {
        rounds: 100,
        gnp_enabled: true,
        ..cfg(PeftMask::LowRank(2))
    };
    let log = run(&c, &d).unwrap();
    let mut checked = 0;
    for r in &log.records {
        if r.robust_norm > 0.0 {
            let ratio = r.noise_norm / r.robust_norm;
            assert!((ratio - 1.0).abs() <= 1e-9, "round {}: {ratio}", r.round);
            checked += 1;
        }
    }
    assert!(checked > 90);
    let quiet = FedConfig {
        noise_enabled: false,
        ..c
    };
    assert!(run(&quiet, &d).unwrap().records.iter().all(|r| r.noise_norm == 0.0));
}

#[test]
fn robust_vector_is_orthogonal_to_previous_global() {
    use fedgnp_core::federation::robust_vector;
    let m = model(PeftMask::Full);
    let prev = m.trainable_params();
    let d = data(11, 5, 1.0);
    let shard = &d.partition.shards(&d.train).unwrap()[0];
    let new = client_update(&m, shard, &cfg(PeftMask::Full), &mut client_rng(1, 1, 0))
        .unwrap()
        .params;
    let r = robust_vector(&prev, &new, ProjectionScope::Global).unwrap();
    assert!(frob_inner(&r, &prev).unwrap().abs() < 1e-10 * prev.norm() * new.norm());
    let p = project(&prev, &new).unwrap();
    let lhs = new.norm().powi(2);
    assert!((lhs - p.norm().powi(2) - r.norm().powi(2)).abs() <= 1e-9 * lhs);
}

#[test]
fn per_tensor_scope_runs() {
    let d = data(12, 5, 0.5);
    let c = FedConfig {
        gnp_enabled: true,
        projection_scope: ProjectionScope::PerTensor,
        ..cfg(PeftMask::Full)
    };
    let log = run(&c, &d).unwrap();
    assert_eq!(log.records.len(), c.rounds);
    assert!(log.final_model.params().is_finite());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let d = data(13, 4, 1.0);
    assert!(matches!(run(&cfg(PeftMask::Full), &d), Err(Error::InvalidConfig(_))));
    let d = data(13, 5, 1.0);
    let err = run_from(&cfg(PeftMask::Full), &d, model(PeftMask::BiasOnly));
    assert!(err.is_err());
    let bad = FedConfig {
        sample_rate: 0.0,
        ..cfg(PeftMask::Full)
    };
    assert!(run(&bad, &d).is_err());
}
