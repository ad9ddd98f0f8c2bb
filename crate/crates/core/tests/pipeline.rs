use oid_core::dataio::{
    load_dataset, split_warm_cold, synth_generate, write_udata, DatasetDescriptor, DatasetFormat, RatingScale,
    RatingsDataset, SynthSpec,
};
use oid_core::pmf::{estimate_noise, FactorModel, DEFAULT_SIGMA_FLOOR};
use oid_core::selection::{SelectionAlgorithm, SelectionContext};
use oid_core::simulate::{
    prepare_with_model, ridge_estimate, run_trial, PreparedExperiment, ResultTable, Setting, SimulationConfig,
    TrialOptions,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic(users: usize, dim: usize) -> (RatingsDataset, FactorModel) {
    let spec = SynthSpec {
        users,
        items: 120,
        dim,
        noise_sigma: 0.3,
        density: 0.4,
        ..SynthSpec::default()
    };
    synth_generate(&spec).unwrap()
}

fn ideal_config(dim: usize, algorithms: Vec<SelectionAlgorithm>, budgets: Vec<usize>) -> SimulationConfig {
    let mut cfg = SimulationConfig {
        setting: Setting::Ideal,
        algorithms,
        budgets,
        shared_sigma: Some(1.0),
        ..SimulationConfig::default()
    };
    cfg.hyper.latent_dim = dim;
    cfg
}

/// Runs on the generating factors so the test does not depend on training.
fn prepared(ds: &RatingsDataset, truth: FactorModel, cfg: &SimulationConfig) -> PreparedExperiment {
    let split = split_warm_cold(ds, cfg.warm_fraction, cfg.seed).unwrap();
    prepare_with_model(ds, split, truth, cfg).unwrap()
}

#[test]
fn noiseless_ideal_interviews_recover_the_profile() {
    let dim = 5;
    let (ds, truth) = synthetic(200, dim);
    let mut cfg = ideal_config(dim, vec![SelectionAlgorithm::FG2, SelectionAlgorithm::BG2], vec![dim, dim + 3]);
    cfg.ridge_gamma = Some(1e-9);
    let prep = prepared(&ds, truth, &cfg);
    assert!(!prep.trials.is_empty());
    let results = prep.run(&cfg).unwrap();
    let worst = results.iter().map(|r| r.profile_error).fold(0.0, f64::max);
    let worst_rmse = results.iter().map(|r| r.prediction_rmse).fold(0.0, f64::max);
    assert!(worst < 1e-6, "profile error {worst:e}");
    assert!(worst_rmse < 1e-4, "rmse {worst_rmse:e}");
}

#[test]
fn greedy_beats_random_and_improves_with_budget() {
    let dim = 6;
    let (ds, truth) = synthetic(800, dim);
    let mut cfg = ideal_config(dim, vec![SelectionAlgorithm::FG2, SelectionAlgorithm::RS], vec![4, 6, 8, 10]);
    cfg.observation_noise = true;
    cfg.ridge_gamma = Some(0.01);
    let prep = prepared(&ds, truth, &cfg);
    assert!(prep.trials.len() >= 200, "{} trials", prep.trials.len());
    let results = prep.run(&cfg).unwrap();
    let table = ResultTable::aggregate("synthetic", &cfg, &results);
    let mut last = f64::INFINITY;
    for b in [4, 6, 8, 10] {
        let fg = table.row(SelectionAlgorithm::FG2, b).unwrap();
        let rs = table.row(SelectionAlgorithm::RS, b).unwrap();
        eprintln!("b={b}: FG2 {:.4} RS {:.4}", fg.mean_profile_err, rs.mean_profile_err);
        assert!(fg.mean_profile_err <= rs.mean_profile_err);
        assert!(fg.mean_profile_err <= last);
        last = fg.mean_profile_err;
    }
}

#[test]
fn profile_error_is_the_squared_distance() {
    let dim = 4;
    let (ds, truth) = synthetic(150, dim);
    let cfg = ideal_config(dim, vec![SelectionAlgorithm::FG2], vec![6]);
    let prep = prepared(&ds, truth, &cfg);
    let env = prep.env(false);
    let opts = TrialOptions {
        selection: SelectionContext { shared_sigma: 1.0, ..Default::default() },
        ridge_gamma: 0.01,
    };
    for trial in prep.trials.iter().take(20) {
        let r = run_trial(trial, &env, SelectionAlgorithm::FG2, 6, &opts).unwrap();
        let v_b = prep.model.item_matrix(&r.selected).unwrap();
        let ratings: Vec<f64> = r
            .selected
            .iter()
            .map(|&j| prep.model.item(j).iter().zip(&trial.true_profile.vector).map(|(a, b)| a * b).sum())
            .collect();
        let sigmas: Vec<f64> = r.selected.iter().map(|&j| prep.noise.sigma(j)).collect();
        let est = ridge_estimate(&v_b, &sigmas, &ratings, 0.01).unwrap();
        let mut explicit = 0.0;
        for k in 0..dim {
            let diff = est.vector[k] - trial.true_profile.vector[k];
            explicit += diff * diff;
        }
        assert!((explicit - r.profile_error).abs() <= 1e-12);
    }
}

fn comparable(table: &ResultTable) -> Vec<(SelectionAlgorithm, usize, usize, [f64; 5])> {
    table
        .rows
        .iter()
        .map(|r| {
            (
                r.algorithm,
                r.budget,
                r.n_users,
                [r.mean_rmse, r.std_rmse, r.mean_profile_err, r.std_profile_err, r.mean_evals],
            )
        })
        .collect()
}

#[test]
fn aggregates_ignore_user_order() {
    let dim = 4;
    let (ds, truth) = synthetic(150, dim);
    let mut cfg = ideal_config(
        dim,
        vec![SelectionAlgorithm::AFG2, SelectionAlgorithm::RS, SelectionAlgorithm::PI],
        vec![3, 6],
    );
    cfg.observation_noise = true;
    let mut prep = prepared(&ds, truth, &cfg);
    let forward = ResultTable::aggregate("s", &cfg, &prep.run(&cfg).unwrap());
    prep.trials.reverse();
    let reversed = ResultTable::aggregate("s", &cfg, &prep.run(&cfg).unwrap());
    assert_eq!(comparable(&forward), comparable(&reversed));
}

#[test]
fn udata_round_trip_preserves_ratings() {
    let (ds, _) = synthetic(60, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ratings.data");
    write_udata(&ds, &path).unwrap();
    let desc = DatasetDescriptor {
        name: "round-trip".into(),
        path,
        format: DatasetFormat::UData,
        scale: ds.scale(),
        expected: None,
    };
    let back = load_dataset(&desc).unwrap().dataset;
    assert_eq!(back.len(), ds.len());
    let key = |d: &RatingsDataset| {
        let mut v: Vec<(String, String, u64)> = d
            .ratings()
            .iter()
            .map(|r| {
                (
                    d.user_ids().raw(r.user).to_string(),
                    d.item_ids().raw(r.item).to_string(),
                    r.value.to_bits(),
                )
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(key(&back), key(&ds));
}

#[test]
fn noise_estimate_ignores_rating_order() {
    let (ds, truth) = synthetic(100, 4);
    let mut shuffled = ds.ratings().to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let other = RatingsDataset::new(ds.num_users(), ds.num_items(), shuffled, ds.scale()).unwrap();
    let a = estimate_noise(&truth, &ds, DEFAULT_SIGMA_FLOOR).unwrap();
    let b = estimate_noise(&truth, &other, DEFAULT_SIGMA_FLOOR).unwrap();
    for (x, y) in a.sigmas().iter().zip(b.sigmas()) {
        assert!((x - y).abs() <= 1e-12 * x.max(1.0));
    }
}

#[test]
fn movielens_scale_rejects_out_of_range_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.data");
    std::fs::write(&path, "1\t1\t5\t0\n1\t2\t7\t0\n").unwrap();
    let desc = DatasetDescriptor::movielens_100k(&path);
    assert_eq!(desc.scale, Some(RatingScale::MOVIELENS));
    assert!(load_dataset(&desc).is_err());
}
