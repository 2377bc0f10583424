use mkvlab::measure::{w1_distance, wp_distance, EmpiricalMeasure};
use proptest::prelude::*;

fn cloud(m: usize, n: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec(-10.0f64..10.0, m * n).prop_map(move |p| EmpiricalMeasure::new(m, p).unwrap())
}

fn triple() -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure, EmpiricalMeasure)> {
    (1usize..=3, 1usize..=8).prop_flat_map(|(m, n)| (cloud(m, n), cloud(m, n), cloud(m, n)))
}

proptest! {
    #[test]
    fn w1_is_a_metric((a, b, c) in triple()) {
        let ab = w1_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - w1_distance(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!(w1_distance(&a, &a).unwrap() < 1e-12);
        let ac = w1_distance(&a, &c).unwrap();
        let cb = w1_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
    }

    #[test]
    fn w1_below_w2((a, b, _) in triple()) {
        prop_assert!(w1_distance(&a, &b).unwrap() <= wp_distance(&a, &b, 2.0).unwrap() + 1e-9);
    }

    #[test]
    fn translation_in_one_dimension(xs in prop::collection::vec(-5.0f64..5.0, 1..40), c in -3.0f64..3.0) {
        let a = EmpiricalMeasure::from_scalars(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let b = EmpiricalMeasure::from_scalars(&shifted).unwrap();
        prop_assert!((w1_distance(&a, &b).unwrap() - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn distance_to_origin_is_first_moment((a, _, _) in triple()) {
        let o = EmpiricalMeasure::origin_cloud(a.dim(), a.len());
        let norm_mean = a.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>() / a.len() as f64;
        prop_assert!((w1_distance(&a, &o).unwrap() - norm_mean).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip((a, _, _) in triple()) {
        prop_assert_eq!(EmpiricalMeasure::from_csv(&a.to_csv()).unwrap(), a);
    }
}

#[test]
fn unequal_sizes_in_one_dimension() {
    let a = EmpiricalMeasure::from_scalars(&[0.0, 1.0]).unwrap();
    let b = EmpiricalMeasure::from_scalars(&[0.5]).unwrap();
    assert!((w1_distance(&a, &b).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn unequal_sizes_rejected_in_higher_dimension() {
    let a = EmpiricalMeasure::new(2, vec![0.0; 4]).unwrap();
    let b = EmpiricalMeasure::new(2, vec![0.0; 6]).unwrap();
    assert!(w1_distance(&a, &b).is_err());
}
