use kgdg::io::{format_feature_table, format_probability_table, parse_feature_table, parse_probability_table};
use kgdg::model::{DRGrade, DomainId, FeatureSet, FeatureVector, LabeledExample, ProbabilityVector, VeinFeatures};
use proptest::prelude::*;

fn features(with_vein: bool) -> impl Strategy<Value = FeatureVector> {
    (
        prop::array::uniform5(0u32..500),
        any::<bool>(),
        any::<bool>(),
        0u8..=4,
        (1.0f64..2.0, 1.0f64..20.0, 0.0f64..180.0),
    )
        .prop_map(move |(c, sub, nv, q, (t, cal, ang))| FeatureVector {
            microaneurysm_count: c[0],
            exudate_count: c[1],
            hard_hemorrhage_count: c[2],
            soft_hemorrhage_count: c[3],
            cotton_wool_count: c[4],
            subhyaloid_present: sub,
            neovascularization_present: nv,
            hemorrhage_quadrants: q,
            vein: with_vein.then_some(VeinFeatures { tortuosity: t, caliber_mean: cal, branch_angle_mean: ang }),
        })
}

fn examples(with_vein: bool) -> impl Strategy<Value = Vec<LabeledExample>> {
    prop::collection::vec((features(with_vein), 0i64..5), 1..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (f, g))| LabeledExample {
                image_id: format!("img{i:04}"),
                domain: DomainId::new("dom").unwrap(),
                grade: DRGrade::new(g).unwrap(),
                features: f,
                neural_probs: None,
            })
            .collect()
    })
}

fn pv() -> impl Strategy<Value = ProbabilityVector> {
    prop::array::uniform5(0.0f64..1.0).prop_filter("mass", |w| w.iter().sum::<f64>() > 1e-3).prop_map(|w| {
        let s: f64 = w.iter().sum();
        ProbabilityVector::new(&w.map(|x| x / s)).unwrap()
    })
}

proptest! {
    #[test]
    fn probability_vectors_revalidate_unchanged(p in pv()) {
        prop_assert_eq!(ProbabilityVector::new(p.as_array()).unwrap(), p);
    }

    #[test]
    fn probability_table_round_trips(ps in prop::collection::vec(pv(), 1..30)) {
        let ids: Vec<String> = (0..ps.len()).map(|i| format!("x{i}")).collect();
        let text = format_probability_table(ids.iter().map(String::as_str).zip(&ps));
        let table = parse_probability_table(&text).unwrap();
        prop_assert!(table.renormalized.is_empty());
        for (id, p) in ids.iter().zip(&ps) {
            prop_assert_eq!(&table.rows[id], p);
        }
    }

    #[test]
    fn feature_tables_are_lossless(ex in examples(false), ev in examples(true)) {
        for (set, e) in [(FeatureSet::LesionsOnly, ex), (FeatureSet::LesionsVein, ev)] {
            let text = format_feature_table(&e).unwrap();
            let (parsed_set, back) = parse_feature_table(&text).unwrap();
            prop_assert_eq!(parsed_set, set);
            prop_assert_eq!(&back, &e);
            // loading is pure
            prop_assert_eq!(parse_feature_table(&text).unwrap().1, back);
        }
    }

    #[test]
    fn row_order_does_not_change_the_dataset(ex in examples(false), rot in 0usize..40) {
        let text = format_feature_table(&ex).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let k = rot % lines.len();
        lines.rotate_left(k);
        lines.reverse();
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let mut a = parse_feature_table(&text).unwrap().1;
        let mut b = parse_feature_table(&shuffled).unwrap().1;
        a.sort_by(|x, y| x.image_id.cmp(&y.image_id));
        b.sort_by(|x, y| x.image_id.cmp(&y.image_id));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn duplicate_ids_are_rejected() {
    let text = "image_id,p0,p1,p2,p3,p4\na,1,0,0,0,0\na,0,1,0,0,0\n";
    assert!(parse_probability_table(text).is_err());
}
