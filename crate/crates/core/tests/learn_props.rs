use kgdg::io::ModelArtifact;
use kgdg::learn::{fit_symbolic, Dataset, KnnModel, ModelKind, SymbolicModel, TrainConfig};
use kgdg::model::DRGrade;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [ModelKind; 4] = [ModelKind::Gbm, ModelKind::Logistic, ModelKind::Forest, ModelKind::Knn];

fn small_cfg(kind: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig { model_kind: kind, n_trees: 15, logistic_steps: 150, min_leaf: 2, seed, ..Default::default() }
}

/// Continuous features with a learnable grade signal; every grade present.
fn dataset(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![];
    let mut grades = vec![];
    for i in 0..n {
        let g = (i % 5) as i64;
        rows.push((0..d).map(|k| g as f64 * (k as f64 + 1.0) * 0.3 + rng.gen_range(-1.0..1.0)).collect());
        grades.push(DRGrade::new(g).unwrap());
    }
    Dataset::new((0..d).map(|k| format!("f{k}")).collect(), rows, grades).unwrap()
}

fn close(a: &[f64; 5], b: &[f64; 5]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identical_inputs_give_identical_artifacts(seed in any::<u64>(), k in 0usize..4) {
        let d = dataset(seed, 60, 3);
        let cfg = small_cfg(KINDS[k], seed);
        let a = fit_symbolic(&d, &d.subset(&[]), &cfg).unwrap();
        let b = fit_symbolic(&d, &d.subset(&[]), &cfg).unwrap();
        let fp = "0".repeat(64);
        prop_assert_eq!(
            ModelArtifact::new(a, fp.clone()).to_bytes().unwrap(),
            ModelArtifact::new(b, fp).to_bytes().unwrap()
        );
    }

    #[test]
    fn column_order_does_not_matter(seed in any::<u64>(), k in 0usize..4) {
        let d = dataset(seed, 60, 4);
        let test = dataset(seed ^ 1, 20, 4);
        let perm = [2, 0, 3, 1];
        let cfg = small_cfg(KINDS[k], seed);
        let m = fit_symbolic(&d, &d.subset(&[]), &cfg).unwrap();
        let pd = d.permute_columns(&perm);
        let mp = fit_symbolic(&pd, &pd.subset(&[]), &cfg).unwrap();
        let a = m.predict_dataset(&test).unwrap();
        let b = mp.predict_dataset(&test.permute_columns(&perm)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(close(x.as_array(), y.as_array()), "{:?} vs {:?}", x, y);
        }
    }

    #[test]
    fn one_nearest_neighbour_memorises_distinct_points(seed in any::<u64>()) {
        let d = dataset(seed, 50, 3);
        let cfg = TrainConfig { model_kind: ModelKind::Knn, k_neighbors: 1, ..Default::default() };
        let m = KnnModel::fit(&d, &cfg).unwrap();
        let model = SymbolicModel::Knn(m);
        for (row, g) in d.rows.iter().zip(&d.grades) {
            prop_assert_eq!(model.predict_row(row).unwrap().argmax(), *g);
        }
    }
}

#[test]
fn model_round_trip_preserves_predictions() {
    let d = dataset(7, 120, 3);
    let probe = dataset(8, 1000, 3);
    for kind in KINDS {
        let m = fit_symbolic(&d, &d.subset(&[]), &small_cfg(kind, 7)).unwrap();
        let art = ModelArtifact::new(m, "a".repeat(64));
        let back = ModelArtifact::from_bytes(&art.to_bytes().unwrap()).unwrap();
        assert_eq!(back, art);
        let before = art.parameters.predict_dataset(&probe).unwrap();
        let after = back.parameters.predict_dataset(&probe).unwrap();
        assert_eq!(before, after, "{kind:?}");
    }
}

#[test]
fn corrupted_artifact_is_rejected() {
    let d = dataset(9, 40, 2);
    let m = fit_symbolic(&d, &d.subset(&[]), &small_cfg(ModelKind::Gbm, 1)).unwrap();
    let mut bytes = ModelArtifact::new(m, "b".repeat(64)).to_bytes().unwrap();
    assert!(ModelArtifact::from_bytes(&bytes[1..]).is_err());
    let pos = bytes.windows(4).position(|w| w == b"\"b\"b" || w == b"bbbb").unwrap();
    bytes[pos] = b'c';
    assert!(ModelArtifact::from_bytes(&bytes).is_err());
}

#[test]
fn early_stopping_keeps_trained_rounds() {
    let d = dataset(11, 100, 3);
    let cfg = TrainConfig { n_trees: 300, early_stop_patience: 5, ..Default::default() };
    let (m, h) = kgdg::learn::GbmModel::fit_with_history(&d, &d, &cfg).unwrap();
    assert_eq!(m.n_rounds(), h.rounds_run);
    assert!(h.best_round <= h.rounds_run);
    if h.rounds_run < 300 {
        assert_eq!(h.rounds_run - h.best_round, 5);
    }
}
