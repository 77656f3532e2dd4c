use fedgnp_core::indicators::{gda, lsvr, snapshot, sve, ValueModel};
use fedgnp_core::tensorlab::Matrix;
use proptest::prelude::*;

fn spectrum() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.001f64..100.0, 1..20)
}

proptest! {
    #[test]
    fn sve_is_scale_invariant(sigma in spectrum(), c in 0.01f64..1000.0) {
        let scaled: Vec<f64> = sigma.iter().map(|s| s * c).collect();
        prop_assert!((sve(&sigma).unwrap() - sve(&scaled).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sve_bounded_by_log_len(sigma in spectrum()) {
        let h = sve(&sigma).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (sigma.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn lsvr_bounds(sigma in spectrum()) {
        let r = lsvr(&sigma).unwrap();
        prop_assert!(r >= 1.0 / sigma.len() as f64 - 1e-12);
        prop_assert!(r <= 1.0);
    }

    #[test]
    fn gda_in_unit_interval_and_scale_free(
        prev in proptest::collection::vec(-3.0f64..3.0, 6),
        curr in proptest::collection::vec(-3.0f64..3.0, 6),
        c in 0.1f64..10.0,
    ) {
        let p = Matrix::new(2, 3, prev).unwrap();
        let q = Matrix::new(2, 3, curr).unwrap();
        prop_assume!(q.frob_norm() > 1e-6 && p.frob_norm() > 1e-6);
        let g = gda(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!((gda(&p.scaled(c), &q.scaled(1.0 / c)).unwrap() - g).abs() < 1e-9);
    }

    #[test]
    fn gamma_is_monotone(
        gda_v in 0.0f64..1.0,
        lsvr_v in 0.01f64..1.0,
        sve_v in 0.01f64..4.0,
        bump in 0.0f64..0.5,
    ) {
        let vm = ValueModel { tau: 20.0, gamma_max: f64::MAX };
        let base = vm.gamma(gda_v, lsvr_v, sve_v).unwrap().value;
        prop_assert!(vm.gamma(gda_v + bump, lsvr_v, sve_v).unwrap().value >= base);
        prop_assert!(vm.gamma(gda_v, lsvr_v + bump, sve_v).unwrap().value >= base);
        prop_assert!(vm.gamma(gda_v, lsvr_v, sve_v + bump).unwrap().value <= base);

        let clamped = ValueModel::default().gamma(gda_v, lsvr_v, sve_v).unwrap();
        prop_assert!((0.0..=1.0).contains(&clamped.value));
        prop_assert_eq!(clamped.clamped, clamped.raw > 1.0);
    }
}

#[test]
fn orthogonal_classifiers_have_full_deviation() {
    let a = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let b = Matrix::new(2, 2, vec![0.0, 0.0, 0.0, 2.0]).unwrap();
    assert_eq!(gda(&a, &b).unwrap(), 1.0);
}

#[test]
fn snapshot_reports_all_indicators() {
    let prev = Matrix::new(3, 4, (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
    let curr = Matrix::new(3, 4, (0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
    let s = snapshot(&prev, &curr, &ValueModel::default(), 20).unwrap();
    assert_eq!(s.round, 20);
    assert!(s.sve > 0.0 && s.sve <= 3f64.ln() + 1e-12);
    assert!(s.lsvr >= 1.0 / 3.0 && s.lsvr <= 1.0);
    let raw = 20.0 * s.gda * s.lsvr / s.sve;
    assert!((s.gamma.raw - raw).abs() < 1e-12);
    assert!(snapshot(&prev, &Matrix::zeros(4, 3), &ValueModel::default(), 1).is_err());
}
