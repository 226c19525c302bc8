//! Periodic cubic splines on uniform grids.

/// Vector-valued periodic cubic spline through `G` uniformly spaced samples
/// covering one period `[0, period)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSpline {
    period: f64,
    h: f64,
    n: usize,
    channels: usize,
    /// Samples, row-major `n x channels`.
    y: Vec<f64>,
    /// Second derivatives at the nodes, same layout.
    m2: Vec<f64>,
}

impl PeriodicSpline {
    /// `values` is row-major `n x channels`; panics on `n < 3`.
    pub fn new(period: f64, values: Vec<f64>, channels: usize) -> PeriodicSpline {
        assert!(channels > 0 && values.len() % channels == 0);
        let n = values.len() / channels;
        assert!(n >= 3, "periodic spline needs at least 3 samples");
        let h = period / n as f64;
        let mut m2 = vec![0.0; values.len()];
        let mut rhs = vec![0.0; n];
        for c in 0..channels {
            for k in 0..n {
                let prev = values[((k + n - 1) % n) * channels + c];
                let next = values[((k + 1) % n) * channels + c];
                rhs[k] = 6.0 / (h * h) * (next - 2.0 * values[k * channels + c] + prev);
            }
            let sol = solve_cyclic_141(&rhs);
            for k in 0..n {
                m2[k * channels + c] = sol[k];
            }
        }
        PeriodicSpline {
            period,
            h,
            n,
            channels,
            y: values,
            m2,
        }
    }

    pub fn scalar(period: f64, values: Vec<f64>) -> PeriodicSpline {
        Self::new(period, values, 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn samples(&self) -> &[f64] {
        &self.y
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        &self.y[k * self.channels..(k + 1) * self.channels]
    }

    /// Cell index and local coordinate in `[0, 1)`; node hits snap to `t = 0`.
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let u = x.rem_euclid(self.period) / self.h;
        let r = u.round();
        if (u - r).abs() <= 1e-9 {
            return ((r as usize) % self.n, 0.0);
        }
        let k = u.floor();
        ((k as usize) % self.n, u - k)
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let (k, t) = self.locate(x);
        let c = self.channels;
        if t == 0.0 {
            out.copy_from_slice(&self.y[k * c..(k + 1) * c]);
            return;
        }
        let k1 = (k + 1) % self.n;
        let s = 1.0 - t;
        let h2 = self.h * self.h / 6.0;
        let a = (s * s * s - s) * h2;
        let b = (t * t * t - t) * h2;
        for (j, o) in out.iter_mut().enumerate() {
            *o = s * self.y[k * c + j]
                + t * self.y[k1 * c + j]
                + a * self.m2[k * c + j]
                + b * self.m2[k1 * c + j];
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.eval_into(x, &mut out);
        out
    }

    /// Channel 0 value.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let (k, t) = self.locate(x);
        let c = self.channels;
        if t == 0.0 {
            return self.y[k * c];
        }
        let k1 = (k + 1) % self.n;
        let s = 1.0 - t;
        let h2 = self.h * self.h / 6.0;
        s * self.y[k * c] + t * self.y[k1 * c] + (s * s * s - s) * h2 * self.m2[k * c]
            + (t * t * t - t) * h2 * self.m2[k1 * c]
    }

    pub fn deriv_into(&self, x: f64, out: &mut [f64]) {
        let (k, t) = self.locate(x);
        let c = self.channels;
        let k1 = (k + 1) % self.n;
        let s = 1.0 - t;
        let h6 = self.h / 6.0;
        for (j, o) in out.iter_mut().enumerate() {
            *o = (self.y[k1 * c + j] - self.y[k * c + j]) / self.h
                + h6 * (-(3.0 * s * s - 1.0) * self.m2[k * c + j]
                    + (3.0 * t * t - 1.0) * self.m2[k1 * c + j]);
        }
    }

    /// Channel 0 derivative.
    pub fn deriv(&self, x: f64) -> f64 {
        let mut out = vec![0.0; self.channels];
        self.deriv_into(x, &mut out);
        out[0]
    }

    /// Channel 0 second derivative.
    pub fn deriv2(&self, x: f64) -> f64 {
        let (k, t) = self.locate(x);
        let c = self.channels;
        let k1 = (k + 1) % self.n;
        (1.0 - t) * self.m2[k * c] + t * self.m2[k1 * c]
    }
}

/// Solve the cyclic system `M[k-1] + 4 M[k] + M[k+1] = d[k]` by
/// Sherman-Morrison on top of the Thomas algorithm.
fn solve_cyclic_141(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    // A = T + u v^T with corners removed from T: gamma = -b[0].
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] = 4.0 - gamma;
    diag[n - 1] = 4.0 - 1.0 / gamma;
    let thomas = |rhs: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        c[0] = 1.0 / diag[0];
        x[0] = rhs[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - c[i - 1];
            c[i] = 1.0 / m;
            x[i] = (rhs[i] - x[i - 1]) / m;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    };
    let y = thomas(d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = 1.0;
    let z = thomas(&u);
    let vy = y[0] + y[n - 1] / gamma;
    let vz = z[0] + z[n - 1] / gamma;
    let f = vy / (1.0 + vz);
    y.iter().zip(&z).map(|(a, b)| a - f * b).collect()
}
