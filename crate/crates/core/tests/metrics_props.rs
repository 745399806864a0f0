use kgdg::metrics::{accuracy, auc_ovr_macro, confusion_matrix, domain_kl, iou, macro_f1, DomainStats};
use kgdg::model::{BoundingBox, DRGrade, ProbabilityVector};
use proptest::prelude::*;

fn grades(n: usize) -> impl Strategy<Value = Vec<DRGrade>> {
    prop::collection::vec((0i64..5).prop_map(|g| DRGrade::new(g).unwrap()), n)
}

fn labelled(max: usize) -> impl Strategy<Value = (Vec<DRGrade>, Vec<DRGrade>)> {
    (1..max).prop_flat_map(|n| (grades(n), grades(n)))
}

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0.0f64..0.9, 0.0f64..0.9, 0.01f64..0.5, 0.01f64..0.5)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w.min(1.0 - x), h.min(1.0 - y)).unwrap())
}

fn stats(d: usize) -> impl Strategy<Value = DomainStats> {
    (prop::collection::vec(-5.0f64..5.0, d), prop::collection::vec(0.01f64..10.0, d))
        .prop_map(|(mean, variance)| DomainStats { mean, variance, n: 10 })
}

proptest! {
    #[test]
    fn scores_lie_in_unit_interval((t, p) in labelled(40)) {
        let a = accuracy(&t, &p).unwrap();
        let f = macro_f1(&t, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((0.0..=1.0).contains(&f));
        let cm = confusion_matrix(&t, &p).unwrap();
        prop_assert_eq!(cm.iter().flatten().sum::<usize>(), t.len());
        let trace: usize = (0..5).map(|i| cm[i][i]).sum();
        prop_assert!((a - trace as f64 / t.len() as f64).abs() < 1e-12);
        for (g, row) in cm.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), t.iter().filter(|x| x.index() == g).count());
        }
    }

    #[test]
    fn auc_ignores_monotone_rescaling(
        t in grades(30),
        raw in prop::collection::vec(prop::array::uniform5(0.01f64..1.0), 30),
        a in 0.01f64..1.0,
    ) {
        let probs: Vec<ProbabilityVector> = raw
            .iter()
            .map(|w| { let s: f64 = w.iter().sum(); ProbabilityVector::new(&w.map(|x| x / s)).unwrap() })
            .collect();
        // x -> a·x + (1-a)/5 is strictly increasing and stays on the simplex
        let shrunk: Vec<ProbabilityVector> = probs
            .iter()
            .map(|p| ProbabilityVector::new(&p.as_array().map(|x| a * x + (1.0 - a) / 5.0)).unwrap())
            .collect();
        match (auc_ovr_macro(&t, &probs), auc_ovr_macro(&t, &shrunk)) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "qualification changed: {:?}", other),
        }
    }

    #[test]
    fn iou_symmetric_and_reflexive(a in bbox(), b in bbox()) {
        let ab = iou(&a, &b);
        prop_assert!((ab - iou(&b, &a)).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        if a != b {
            prop_assert!(ab < 1.0);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(p in stats(4), q in stats(4)) {
        prop_assert!(domain_kl(&p, &q).unwrap() >= 0.0);
        prop_assert!(domain_kl(&p, &p).unwrap().abs() <= 1e-12);
        if p != q {
            prop_assert!(domain_kl(&p, &q).unwrap() > 0.0);
        }
    }
}

#[test]
fn kl_rejects_arity_mismatch() {
    let p = DomainStats { mean: vec![0.0], variance: vec![1.0], n: 1 };
    let q = DomainStats { mean: vec![0.0, 0.0], variance: vec![1.0, 1.0], n: 1 };
    assert!(domain_kl(&p, &q).is_err());
}
