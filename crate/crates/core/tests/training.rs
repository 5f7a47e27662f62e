use expograph::consensus::WeightSchedule;
use expograph::optimizer::{estimate_transient_iterations, run_training, Algorithm, StepSize, TrainConfig};
use expograph::synthdata::{generate_logistic, Heterogeneity, NodeDataset, REFERENCE_TOL};
use expograph::{Error, TopologyKind};

fn dataset(n: usize) -> NodeDataset {
    generate_logistic(n, 150, 4, Heterogeneity::NonIid, 3)
        .unwrap()
        .with_reference(REFERENCE_TOL)
        .unwrap()
}

fn config(schedule: WeightSchedule, algorithm: Algorithm) -> TrainConfig {
    TrainConfig {
        d: 4,
        gamma: StepSize::stepped(0.05, 0.5, 60, 200),
        iterations: 200,
        batch_size: 2,
        seed: 9,
        trials: 3,
        ..TrainConfig::new(schedule, algorithm)
    }
}

#[test]
fn fully_connected_dmsgd_is_parallel_msgd() {
    let ds = dataset(8);
    let full = WeightSchedule::fixed(TopologyKind::FullyConnected, 8).unwrap();
    let dm = run_training(&config(full.clone(), Algorithm::DmSgd), &ds).unwrap();
    let par = run_training(&config(full, Algorithm::ParallelMsgd), &ds).unwrap();
    assert_eq!(dm, par);
    assert!(dm.records.iter().all(|r| r.consensus <= 1e-12));
    // a non-trivial topology gives a different trace
    let ring = run_training(&config(WeightSchedule::fixed(TopologyKind::Ring, 8).unwrap(), Algorithm::DmSgd), &ds).unwrap();
    assert_ne!(ring, par);
}

#[test]
fn zero_momentum_dmsgd_is_dsgd() {
    let ds = dataset(6);
    let s = WeightSchedule::cyclic_one_peer(6).unwrap();
    let mut dm = config(s.clone(), Algorithm::DmSgd);
    dm.beta = 0.0;
    let dsgd = config(s, Algorithm::Dsgd);
    assert_eq!(run_training(&dm, &ds).unwrap(), run_training(&dsgd, &ds).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let ds = dataset(8);
    let cfg = config(WeightSchedule::permutation_one_peer(8, 4).unwrap(), Algorithm::DmSgd);
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = serial.install(|| run_training(&cfg, &ds).unwrap());
    let b = wide.install(|| run_training(&cfg, &ds).unwrap());
    assert_eq!(a, b);
    assert_eq!(a, run_training(&cfg, &ds).unwrap());
}

#[test]
fn sparse_records_are_a_subsequence() {
    let ds = dataset(4);
    let s = WeightSchedule::fixed(TopologyKind::StaticExponential, 4).unwrap();
    let dense = run_training(&config(s.clone(), Algorithm::DmSgd), &ds).unwrap();
    let mut cfg = config(s, Algorithm::DmSgd);
    cfg.record_every = 30;
    let sparse = run_training(&cfg, &ds).unwrap();
    let ks: Vec<u64> = sparse.records.iter().map(|r| r.k).collect();
    assert_eq!(ks, vec![30, 60, 90, 120, 150, 180, 200]);
    for r in &sparse.records {
        assert_eq!(*r, dense.records[r.k as usize - 1]);
    }
}

#[test]
fn training_makes_progress() {
    let ds = dataset(8);
    let mut cfg = config(WeightSchedule::fixed(TopologyKind::StaticExponential, 8).unwrap(), Algorithm::DmSgd);
    cfg.iterations = 600;
    cfg.gamma = StepSize::stepped(0.05, 0.5, 200, 600);
    let t = run_training(&cfg, &ds).unwrap();
    let first = &t.records[0];
    let last = t.last().unwrap();
    assert!(last.mse < 0.5 * first.mse, "{} vs {}", last.mse, first.mse);
    assert!(last.grad_norm < first.grad_norm);
}

#[test]
fn transient_estimate_against_itself_and_parallel() {
    let ds = dataset(8);
    let par = run_training(
        &config(WeightSchedule::fixed(TopologyKind::FullyConnected, 8).unwrap(), Algorithm::ParallelMsgd),
        &ds,
    )
    .unwrap();
    assert_eq!(estimate_transient_iterations(&par, &par, 0.1).unwrap(), 0);
    let ring = run_training(&config(WeightSchedule::fixed(TopologyKind::Ring, 8).unwrap(), Algorithm::DmSgd), &ds).unwrap();
    let k = estimate_transient_iterations(&ring, &par, 0.1).unwrap();
    assert!(k <= 200);
}

#[test]
fn divergence_names_the_trial() {
    let ds = dataset(4);
    let mut cfg = config(WeightSchedule::fixed(TopologyKind::Ring, 4).unwrap(), Algorithm::DmSgd);
    cfg.gamma = StepSize::constant(1e200);
    cfg.beta = 0.9;
    match run_training(&cfg, &ds) {
        Err(Error::Divergence { trial: Some(t), iteration }) => {
            assert!(t < 3);
            assert!(iteration >= 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn configuration_errors() {
    let ds = dataset(4);
    let bare = generate_logistic(4, 20, 4, Heterogeneity::NonIid, 1).unwrap();
    let cfg = config(WeightSchedule::fixed(TopologyKind::Ring, 4).unwrap(), Algorithm::DmSgd);
    assert!(matches!(run_training(&cfg, &bare), Err(Error::Domain(_))));
    assert!(matches!(run_training(&cfg, &dataset(5)), Err(Error::InvalidSize(_))));
    let mut bad = cfg.clone();
    bad.beta = 1.0;
    assert!(run_training(&bad, &ds).is_err());
    let mut bad = cfg;
    bad.record_every = 0;
    assert!(run_training(&bad, &ds).is_err());
}
