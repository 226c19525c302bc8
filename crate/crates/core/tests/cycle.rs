use std::f64::consts::{PI, TAU};

use phasekit::cycle::{
    find_limit_cycle, integrate_ode, phase_of, CycleFile, CycleOptions, LimitCycle, PhaseOptions,
    Section,
};
use phasekit::dynamics::{hopf, vanderpol, Model};

fn x_axis() -> Option<Section> {
    Some(Section {
        point: vec![0.0, 0.0],
        normal: vec![0.0, 1.0],
    })
}

fn hopf_cycle(mu: f64, omega: f64) -> (Model, LimitCycle) {
    let m = hopf(mu, omega, 0.0).unwrap().compile().unwrap();
    let opts = CycleOptions {
        section: x_axis(),
        ..Default::default()
    };
    let c = find_limit_cycle(&m, &[0.5, 0.3], &opts).unwrap();
    (m, c)
}

fn wrapped(d: f64) -> f64 {
    (d + PI).rem_euclid(TAU) - PI
}

/// Independent period oracle: plain RK4 with bisection on the upward
/// crossing of x2 = 0, at two step sizes.
fn vdp_period_oracle(h: f64) -> f64 {
    let f = |x: [f64; 2]| [x[0] - x[0].powi(3) / 3.0 - x[1], x[0]];
    let step = |x: [f64; 2], h: f64| {
        let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        let k1 = f(x);
        let k2 = f(add(x, k1, h / 2.0));
        let k3 = f(add(x, k2, h / 2.0));
        let k4 = f(add(x, k3, h));
        [
            x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    };
    let mut x = [2.0, 0.0];
    let mut t = 0.0;
    while t < 200.0 {
        x = step(x, h);
        t += h;
    }
    let mut crossings = vec![];
    while crossings.len() < 3 {
        let y = step(x, h);
        if x[1] < 0.0 && y[1] >= 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if step(x, mid)[1] < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(t + hi);
        }
        x = y;
        t += h;
    }
    crossings[2] - crossings[1]
}

#[test]
fn hopf_period_and_radius() {
    let (_, c) = hopf_cycle(4.0, 3.0);
    assert!((c.period() - TAU / 3.0).abs() <= 1e-8, "{}", c.period());
    for k in 0..c.grid_len() {
        let x = c.sample(k);
        assert!((x[0].hypot(x[1]) - 2.0).abs() <= 1e-6);
    }
    assert!(c.closure_error() <= 1e-8);
}

#[test]
fn hopf_gamma_parameterization() {
    let mu: f64 = 4.0;
    let (_, c) = hopf_cycle(mu, 3.0);
    let g = c.gamma(PI / 2.0);
    assert!(g[0].abs() <= 1e-6 && (g[1] - mu.sqrt()).abs() <= 1e-6, "{g:?}");
    for k in [0, 5, 333] {
        assert_eq!(c.gamma(c.theta(k)), c.sample(k).to_vec());
    }
    for th in [0.1, 1.7, 4.4] {
        let a = c.gamma(th);
        let b = c.gamma(th + TAU);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
}

#[test]
fn vanderpol_period_matches_oracle() {
    let m = vanderpol(0.0).unwrap().compile().unwrap();
    let c = find_limit_cycle(&m, &[2.0, 0.0], &CycleOptions::default()).unwrap();
    let t1 = vdp_period_oracle(2e-3);
    let t2 = vdp_period_oracle(1e-3);
    // Richardson: the two oracle steps already agree far below the tolerance.
    assert!((t1 - t2).abs() < 1e-8, "{t1} {t2}");
    assert!((c.period() - t2).abs() < 1e-6, "{} vs {t2}", c.period());
    assert!((c.period() - 6.6633).abs() <= 1e-3);
    assert!(c.closure_error() <= 1e-6);

    // Re-integrating for one period closes the orbit.
    let tr = integrate_ode(&m, c.sample(0), c.period(), c.period() / 8192.0).unwrap();
    let d = tr.last().iter().zip(c.sample(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn speed_consistency() {
    let m = vanderpol(0.0).unwrap().compile().unwrap();
    let c = find_limit_cycle(&m, &[2.0, 0.0], &CycleOptions::default()).unwrap();
    let g = c.grid_len();
    let dth = TAU / g as f64;
    let mut worst: f64 = 0.0;
    let mut fmax: f64 = 0.0;
    for k in 0..g {
        let a = c.sample((k + g - 1) % g);
        let b = c.sample((k + 1) % g);
        let f = m.drift(c.sample(k)).unwrap();
        for i in 0..2 {
            let fd = (b[i] - a[i]) / (2.0 * dth) * c.omega();
            worst = worst.max((fd - f[i]).abs());
            fmax = fmax.max(f[i].abs());
        }
    }
    assert!(worst <= 1e-3 * fmax, "{worst} vs {fmax}");
}

#[test]
fn phase_of_on_and_off_cycle() {
    let mu: f64 = 1.0;
    let (m, c) = hopf_cycle(mu, 1.0);
    let opts = PhaseOptions::default();
    let on = phase_of(&m, &c, &c.gamma(1.234), &opts).unwrap();
    assert!((on - 1.234).abs() <= 1e-6, "{on}");
    let radial = phase_of(&m, &c, &[2.0 * mu.sqrt(), 0.0], &opts).unwrap();
    assert!(wrapped(radial).abs() <= 1e-6, "{radial}");
    let up = phase_of(&m, &c, &[0.0, 0.5 * mu.sqrt()], &opts).unwrap();
    assert!((up - PI / 2.0).abs() <= 1e-6, "{up}");
}

#[test]
fn phase_of_grid_identity_vanderpol() {
    let m = vanderpol(0.0).unwrap().compile().unwrap();
    let c = find_limit_cycle(&m, &[2.0, 0.0], &CycleOptions::default()).unwrap();
    let opts = PhaseOptions::default();
    for k in (0..c.grid_len()).step_by(64) {
        let p = phase_of(&m, &c, c.sample(k), &opts).unwrap();
        assert!(wrapped(p - c.theta(k)).abs() <= 1e-5, "{k}: {p}");
    }
}

#[test]
fn phase_of_rejects_escapes() {
    let (m, c) = hopf_cycle(1.0, 1.0);
    let r = phase_of(&m, &c, &[50.0, 0.0], &PhaseOptions::default());
    assert!(matches!(r, Err(phasekit::Error::BasinEscape { .. })));
}

#[test]
fn cycle_file_round_trip() {
    let (_, c) = hopf_cycle(1.0, 1.0);
    let f = CycleFile::from_cycle(&c);
    let text = serde_json::to_string(&f).unwrap();
    assert!(text.contains("\"T\"") && text.contains("\"closure_error\""));
    let back: CycleFile = serde_json::from_str(&text).unwrap();
    let c2 = back.to_cycle().unwrap();
    assert_eq!(c2.period(), c.period());
    assert_eq!(c2.samples(), c.samples());
}
