use std::f64::consts::TAU;

use phasekit::cycle::{find_limit_cycle, CycleOptions, LimitCycle, PhaseOptions, Section};
use phasekit::dynamics::{hopf, vanderpol, Model};
use phasekit::prc::{
    check_constraints, prc1_adjoint, prc1_direct, prc2_adjoint, prc2_direct, prc_adjoint,
    z_distance, AdjointOptions, DirectOptions, PrcPair,
};

fn hopf_setup(mu: f64, omega: f64) -> (Model, LimitCycle) {
    let m = hopf(mu, omega, 0.0).unwrap().compile().unwrap();
    let opts = CycleOptions {
        section: Some(Section {
            point: vec![0.0, 0.0],
            normal: vec![0.0, 1.0],
        }),
        ..Default::default()
    };
    let c = find_limit_cycle(&m, &[mu.sqrt() * 0.7, 0.1], &opts).unwrap();
    (m, c)
}

fn vdp_setup() -> (Model, LimitCycle) {
    let m = vanderpol(0.0).unwrap().compile().unwrap();
    let c = find_limit_cycle(&m, &[2.0, 0.0], &CycleOptions::default()).unwrap();
    (m, c)
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn hopf_adjoint_matches_closed_form() {
    for (mu, omega) in [(1.0, 1.0), (4.0, 3.0)] {
        let (m, c) = hopf_setup(mu, omega);
        let prc = prc_adjoint(&m, &c, 2, &AdjointOptions::default()).unwrap();
        let exact = PrcPair::hopf_exact(mu, &c.thetas());
        assert!(max_err(&prc.z, &exact.z) <= 1e-5, "Z mu={mu}");
        assert!(max_err(prc.h.as_ref().unwrap(), exact.h.as_ref().unwrap()) <= 1e-4, "H mu={mu}");
        let z0 = prc.z_at(0);
        assert!(z0[0].abs() <= 1e-5 && (z0[1] - 1.0 / mu.sqrt()).abs() <= 1e-5);
        let h0 = prc.h_at(0).unwrap();
        assert!(max_err(h0, &[0.0, -1.0 / mu, -1.0 / mu, 0.0]) <= 1e-4);
        for k in 0..prc.len() {
            let h = prc.h_at(k).unwrap();
            assert!((h[0] + h[3]).abs() <= 1e-4, "trace at {k}");
            assert!((h[1] - h[2]).abs() <= 1e-8);
        }
    }
}

#[test]
fn adjoint_satisfies_constraints_on_vanderpol() {
    let (m, c) = vdp_setup();
    let prc = prc_adjoint(&m, &c, 2, &AdjointOptions::default()).unwrap();
    let rep = check_constraints(&m, &c, &prc).unwrap();
    assert!(rep.normalization_rel <= 1e-6, "{rep:?}");
    assert!(rep.second_order_rel.unwrap() <= 1e-4, "{rep:?}");
    assert!(rep.max_asymmetry.unwrap() <= 1e-8);
    assert!(rep.passes);
}

#[test]
fn first_order_adjoint_is_normalized() {
    let (m, c) = vdp_setup();
    let z = prc1_adjoint(&m, &c, &AdjointOptions::default()).unwrap();
    let rep = check_constraints(&m, &c, &z).unwrap();
    assert!(rep.normalization <= 1e-6 * c.omega());
    // Same Z regardless of whether it was integrated alone or with H.
    let full = prc2_adjoint(&m, &c, &z, &AdjointOptions::default()).unwrap();
    assert!(max_err(&z.z, &full.z) <= 1e-8);
}

fn direct_opts(r: f64) -> DirectOptions {
    DirectOptions {
        r,
        stride: 32,
        phase: PhaseOptions {
            settle_periods: 5,
            steps_per_period: 2048,
            bbox: None,
        },
        off_diagonal: true,
    }
}

#[test]
fn hopf_direct_first_order() {
    let (m, c) = hopf_setup(1.0, 1.0);
    let d = prc1_direct(&m, &c, &direct_opts(1e-3)).unwrap();
    let exact = PrcPair::hopf_exact(1.0, &d.theta);
    assert!(max_err(&d.z, &exact.z) <= 1e-3);
    let adj = prc1_adjoint(&m, &c, &AdjointOptions::default()).unwrap();
    assert!(z_distance(&adj, &d) <= 5e-3);
}

#[test]
fn direct_central_scheme_is_second_order() {
    let (m, c) = vdp_setup();
    let adj = prc1_adjoint(&m, &c, &AdjointOptions::default()).unwrap();
    let e1 = z_distance(&adj, &prc1_direct(&m, &c, &direct_opts(4e-2)).unwrap());
    let e2 = z_distance(&adj, &prc1_direct(&m, &c, &direct_opts(2e-2)).unwrap());
    let ratio = e1 / e2;
    assert!(ratio > 3.0 && ratio < 5.5, "{e1} {e2} ratio {ratio}");
}

#[test]
fn hopf_direct_second_order() {
    let mu = 1.0;
    let (m, c) = hopf_setup(mu, 1.0);
    let d = prc2_direct(&m, &c, &direct_opts(1e-2)).unwrap();
    let adj = prc_adjoint(&m, &c, 2, &AdjointOptions::default()).unwrap();
    for (k, th) in d.theta.iter().enumerate() {
        let h = d.h_at(k).unwrap();
        assert!((h[0] - (2.0 * th).sin() / mu).abs() <= 1e-2, "H11 at {th}");
        assert!((h[0] + h[3]).abs() <= 2e-2);
        let ka = (th / TAU * c.grid_len() as f64).round() as usize;
        let ha = adj.h_at(ka).unwrap();
        assert!((h[0] - ha[0]).abs() <= 2e-2 && (h[3] - ha[3]).abs() <= 2e-2);
    }
}

#[test]
fn vanderpol_direct_agrees_with_adjoint() {
    let (m, c) = vdp_setup();
    let adj = prc_adjoint(&m, &c, 2, &AdjointOptions::default()).unwrap();
    let d1 = prc1_direct(&m, &c, &direct_opts(1e-3)).unwrap();
    assert!(z_distance(&adj, &d1) <= 5e-3);
    let d2 = prc2_direct(&m, &c, &direct_opts(1e-2)).unwrap();
    for (k, th) in d2.theta.iter().enumerate() {
        let ka = (th / TAU * c.grid_len() as f64).round() as usize;
        let ha = adj.h_at(ka).unwrap();
        let hd = d2.h_at(k).unwrap();
        assert!((hd[0] - ha[0]).abs() <= 2e-2 && (hd[3] - ha[3]).abs() <= 2e-2, "{th}: {hd:?} vs {ha:?}");
    }
}

#[test]
fn grid_mismatch_rejected() {
    let (m, c) = hopf_setup(1.0, 1.0);
    let wrong = PrcPair::hopf_exact(1.0, &[0.0, 1.0, 2.0]);
    assert!(matches!(
        prc2_adjoint(&m, &c, &wrong, &AdjointOptions::default()),
        Err(phasekit::Error::GridMismatch(_))
    ));
}
