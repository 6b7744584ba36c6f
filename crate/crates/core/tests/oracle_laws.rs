use edl_core::asymptotics::Layers;
use edl_core::geometry::{make_annulus, make_ball};
use edl_core::nonlinearity::{make_classical_pb, IonSpecies, Nonlinearity};
use edl_core::profiles::{ProfileOptions, RobinData};
use edl_core::radial_oracle::*;
use proptest::prelude::*;

fn salt(c: f64) -> Nonlinearity {
    make_classical_pb(&[IonSpecies::bulk(1.0, c), IonSpecies::bulk(-1.0, c)]).unwrap()
}

fn plain_grid() -> GridOptions {
    GridOptions { extrapolate: false, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn robin_ball_conserves_and_stays_between_reference_and_data(
        d in 2usize..4,
        gamma in 0.0f64..2.0,
        phi_bd in -2.0f64..2.0,
        log_eps in -4.0f64..-2.0,
    ) {
        let f = salt(1.0);
        let dom = make_ball(d, 1.0, RobinData::new(gamma, phi_bd).unwrap()).unwrap();
        let res = solve_radial_robin_pb(&dom, &f, 10f64.powf(log_eps), &plain_grid()).unwrap();
        prop_assert!(res.conservation <= 1e-9, "conservation {}", res.conservation);
        let (lo, hi) = (phi_bd.min(0.0), phi_bd.max(0.0));
        for p in &res.phi {
            prop_assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12);
        }
    }

    #[test]
    fn annulus_pb_is_odd_in_the_data(gamma in 0.0f64..1.0, a in 0.5f64..1.5, b in -1.5f64..1.5) {
        let f = salt(1.0);
        let eps = 1e-3;
        let up = make_annulus(2, 1.0, 2.0, RobinData::new(gamma, a).unwrap(), RobinData::new(gamma, b).unwrap()).unwrap();
        let down = make_annulus(2, 1.0, 2.0, RobinData::new(gamma, -a).unwrap(), RobinData::new(gamma, -b).unwrap()).unwrap();
        let p = solve_radial_robin_pb(&up, &f, eps, &plain_grid()).unwrap();
        let m = solve_radial_robin_pb(&down, &f, eps, &plain_grid()).unwrap();
        for (x, y) in p.phi.iter().zip(&m.phi) {
            prop_assert!((x + y).abs() <= 1e-10);
        }
    }

    #[test]
    fn ccpb_oracle_is_neutral(gamma in 0.05f64..1.0, a in 0.2f64..1.5, mass in 0.5f64..2.0) {
        let salt = [IonSpecies::mass(1.0, mass), IonSpecies::mass(-1.0, mass)];
        let dom = make_annulus(2, 1.0, 2.0, RobinData::new(gamma, a).unwrap(), RobinData::new(gamma, -0.5).unwrap()).unwrap();
        let res = solve_radial_ccpb(&dom, &salt, 1e-3, &plain_grid()).unwrap();
        let c = res.ccpb.as_ref().unwrap();
        prop_assert!(c.neutrality <= 1e-8, "neutrality {}", c.neutrality);
        prop_assert!(res.checks.within_bounds == Some(true));
    }
}

#[test]
fn extrapolation_reduces_the_pb_two_term_error_gap() {
    let f = salt(1.0);
    let dom = make_ball(2, 1.0, RobinData::new(0.1, 1.0).unwrap()).unwrap();
    let layers = [Layers::pb(0, &f, dom.components[0].robin, &ProfileOptions::default()).unwrap()];
    let opts = CompareOptions { t: 5.0, beta: 0.25 };
    let eps = 1e-4;
    let plain = solve_radial_robin_pb(&dom, &f, eps, &plain_grid()).unwrap();
    let extra = solve_radial_robin_pb(&dom, &f, eps, &GridOptions::default()).unwrap();
    let fine = GridOptions {
        layer_points: 1280,
        first_spacing: 0.0025,
        max_spacing: 1.0 / 2048.0,
        extrapolate: true,
        ..Default::default()
    };
    let reference = solve_radial_robin_pb(&dom, &f, eps, &fine).unwrap();
    let e2 = |r: &RadialSolveResult| compare_expansion(r, &layers, opts).unwrap().components[0].e2;
    let target = e2(&reference);
    assert!((e2(&extra) - target).abs() < 0.1 * (e2(&plain) - target).abs());
    assert!((e2(&extra) - target).abs() <= 1e-3 * target);
}

#[test]
fn comparison_rejects_mismatched_models() {
    let f = salt(1.0);
    let dom = make_ball(2, 1.0, RobinData::new(0.1, 1.0).unwrap()).unwrap();
    let res = solve_radial_robin_pb(&dom, &f, 1e-3, &plain_grid()).unwrap();
    let salt_m = [IonSpecies::mass(1.0, 1.0), IonSpecies::mass(-1.0, 1.0)];
    let ann = make_annulus(2, 1.0, 2.0, RobinData::new(0.1, 1.0).unwrap(), RobinData::new(0.1, -1.0).unwrap()).unwrap();
    let c = edl_core::ccpb::ccpb_constants(
        &ann,
        &salt_m,
        &ProfileOptions::default(),
        edl_core::exec::Execution::Sequential,
    )
    .unwrap();
    let l = Layers::ccpb(&c, 0).unwrap();
    assert!(matches!(
        compare_expansion(&res, &[l], CompareOptions { t: 5.0, beta: 0.25 }),
        Err(edl_core::Error::ModelProfileMismatch(_))
    ));
}
