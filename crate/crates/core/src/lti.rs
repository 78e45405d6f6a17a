//! Discrete LTI systems `x+ = A x + B u + E d`, `y = C x`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Tolerance};
use crate::trajectory::{Metadata, Trajectory};

/// Seedable generator used everywhere randomness is needed.
pub type Rng64 = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: Mat,
    pub b: Mat,
    pub e: Mat,
    pub c: Mat,
}

impl LtiSystem {
    pub fn new(a: Mat, b: Mat, e: Mat, c: Mat) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || e.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "inconsistent system: A {n}x{n}, B {}x{}, E {}x{}, C {}x{}",
                b.nrows(),
                b.ncols(),
                e.nrows(),
                e.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("E", &e), ("C", &c)] {
            linalg::ensure_finite(m, name)?;
        }
        Ok(Self { a, b, e, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn md(&self) -> usize {
        self.e.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `[B E]`
    pub fn input_matrix(&self) -> Mat {
        let n = self.n();
        let mut be = Mat::zeros(n, self.m() + self.md());
        be.view_mut((0, 0), (n, self.m())).copy_from(&self.b);
        be.view_mut((0, self.m()), (n, self.md())).copy_from(&self.e);
        be
    }
}

/// Run the recurrence for `u.ncols()` steps starting from `x0`.
///
/// Returns `x_0 .. x_{N-1}` and `y_t = C x_t`; the final successor state is
/// not part of the trajectory.
pub fn simulate(sys: &LtiSystem, x0: &DVector<f64>, u: &Mat, d: &Mat) -> Result<Trajectory> {
    let steps = u.ncols();
    if d.ncols() != steps {
        return Err(Error::Dimension(format!(
            "u has {steps} samples, d has {}",
            d.ncols()
        )));
    }
    if x0.len() != sys.n() || u.nrows() != sys.m() || d.nrows() != sys.md() {
        return Err(Error::Dimension(format!(
            "system (n={}, m={}, md={}) fed x0 of length {}, u with {} rows, d with {} rows",
            sys.n(),
            sys.m(),
            sys.md(),
            x0.len(),
            u.nrows(),
            d.nrows()
        )));
    }
    let mut x = Mat::zeros(sys.n(), steps);
    let mut state = x0.clone();
    for t in 0..steps {
        x.set_column(t, &state);
        state = &sys.a * &state + &sys.b * u.column(t) + &sys.e * d.column(t);
    }
    let y = &sys.c * &x;
    Trajectory::new(u.clone(), Some(d.clone()), x, y)
}

/// Additive Gaussian output noise. Recent-data noise enters the estimator as
/// an input disturbance; nothing in the crate bounds its effect.
pub fn add_output_noise(traj: &Trajectory, std: f64, seed: u64) -> Result<Trajectory> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise std must be >= 0, got {std}")));
    }
    let mut rng = rng_from_seed(seed);
    let noisy = traj.y().map(|v| {
        let w: f64 = StandardNormal.sample(&mut rng);
        v + std * w
    });
    let out = match traj.offline_unknown_input() {
        Some(d) => Trajectory::new(traj.u().clone(), Some(d.clone()), traj.x().clone(), noisy)?,
        None => Trajectory::with_declared_md(traj.u().clone(), traj.x().clone(), noisy, traj.md())?,
    };
    Ok(out.with_meta(traj.meta.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExcitationKind {
    /// Independent samples from `U(-amplitude, amplitude)`.
    UniformRandom { amplitude: f64 },
    Gaussian { std: f64 },
    /// Random binary sequence taking values `+-amplitude`.
    Prbs { amplitude: f64 },
    /// `ceil(order / 2)` sinusoids per channel with pairwise distinct,
    /// randomly drawn frequencies and phases; peak bounded by `amplitude`.
    Multisine { amplitude: f64, order: usize },
    /// `nominal_i + U(-s_i, s_i)` with `s_i = relative * |nominal_i| + floor`.
    ConstantPlusRandom {
        nominal: Vec<f64>,
        relative: f64,
        floor: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    pub dims: usize,
    pub length: usize,
    pub seed: u64,
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidParameter("excitation length must be >= 1".into()));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.kind {
            ExcitationKind::UniformRandom { amplitude }
            | ExcitationKind::Prbs { amplitude }
            | ExcitationKind::Multisine { amplitude, .. } => positive("amplitude", *amplitude),
            ExcitationKind::Gaussian { std } => positive("std", *std),
            ExcitationKind::ConstantPlusRandom {
                nominal,
                relative,
                floor,
            } => {
                if nominal.len() != self.dims {
                    return Err(Error::Dimension(format!(
                        "nominal has {} entries for a {}-dimensional signal",
                        nominal.len(),
                        self.dims
                    )));
                }
                if !(relative.is_finite() && *relative >= 0.0 && floor.is_finite() && *floor >= 0.0) {
                    return Err(Error::InvalidParameter(
                        "relative spread and floor must be >= 0".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Signal of `spec.dims` channels and `spec.length` samples, deterministic in the seed.
pub fn generate_excitation(spec: &ExcitationSpec) -> Result<Mat> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let (q, len) = (spec.dims, spec.length);
    let out = match &spec.kind {
        ExcitationKind::UniformRandom { amplitude } => {
            Mat::from_fn(q, len, |_, _| rng.random_range(-amplitude..=*amplitude))
        }
        ExcitationKind::Gaussian { std } => Mat::from_fn(q, len, |_, _| {
            let w: f64 = StandardNormal.sample(&mut rng);
            std * w
        }),
        ExcitationKind::Prbs { amplitude } => Mat::from_fn(q, len, |_, _| {
            if rng.random::<bool>() {
                *amplitude
            } else {
                -amplitude
            }
        }),
        ExcitationKind::Multisine { amplitude, order } => {
            let per_channel = order.div_ceil(2).max(1);
            let mut freqs: Vec<f64> = Vec::with_capacity(q * per_channel);
            while freqs.len() < q * per_channel {
                let w = rng.random_range(0.05..0.95) * std::f64::consts::PI;
                if freqs.iter().all(|f| (f - w).abs() > 1e-3) {
                    freqs.push(w);
                }
            }
            let phases: Vec<f64> = (0..freqs.len())
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            let gain = amplitude / per_channel as f64;
            Mat::from_fn(q, len, |i, t| {
                (0..per_channel)
                    .map(|k| {
                        let j = i * per_channel + k;
                        gain * (freqs[j] * t as f64 + phases[j]).sin()
                    })
                    .sum()
            })
        }
        ExcitationKind::ConstantPlusRandom {
            nominal,
            relative,
            floor,
        } => Mat::from_fn(q, len, |i, _| {
            let spread = relative * nominal[i].abs() + floor;
            if spread > 0.0 {
                nominal[i] + rng.random_range(-spread..=spread)
            } else {
                nominal[i]
            }
        }),
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Minimality {
    pub controllable: bool,
    pub observable: bool,
}

impl Minimality {
    pub fn is_minimal(&self) -> bool {
        self.controllable && self.observable
    }
}

/// `[M, A M, ..., A^{n-1} M]`
pub fn controllability_matrix(a: &Mat, m: &Mat) -> Mat {
    let n = a.nrows();
    let w = m.ncols();
    let mut out = Mat::zeros(n, n * w);
    let mut block = m.clone();
    for k in 0..n {
        out.view_mut((0, k * w), (n, w)).copy_from(&block);
        block = a * &block;
    }
    out
}

/// `[C; C A; ...; C A^{n-1}]`
pub fn observability_matrix(a: &Mat, c: &Mat) -> Mat {
    controllability_matrix(&a.transpose(), &c.transpose()).transpose()
}

/// Kalman rank tests on `(A, [B E])` and `(A, C)`.
pub fn check_minimality(sys: &LtiSystem, tol: &Tolerance) -> Result<Minimality> {
    let n = sys.n();
    let ctrb = controllability_matrix(&sys.a, &sys.input_matrix());
    let obsv = observability_matrix(&sys.a, &sys.c);
    Ok(Minimality {
        controllable: linalg::numerical_rank(&ctrb, tol)? == n,
        observable: linalg::numerical_rank(&obsv, tol)? == n,
    })
}

/// The two-step response map and the row permutation relating windows of a
/// trajectory.
///
/// `theta` maps `(u_t, u_{t+1}, d_t, d_{t+1}, x_t)` to
/// `(u_t, u_{t+1}, y_t, y_{t+1}, x_t, x_{t+1})`, and `p_r` reorders
/// `(v_t, x_t, v_{t+1}, x_{t+1})` into that same ordering. Both exist only to
/// cross-check Hankel blocks built from data: `[V_p; X_p; V_f; X_f]` must
/// equal `p_r^T theta [U; D; X_p]` for data generated by `sys`.
pub fn build_theta(sys: &LtiSystem) -> Result<(Mat, Mat)> {
    let (n, m, md, p) = (sys.n(), sys.m(), sys.md(), sys.p());
    let rows = 2 * m + 2 * p + 2 * n;
    let cols = 2 * m + 2 * md + n;
    let mut theta = Mat::zeros(rows, cols);

    let (ru, ry, rx) = (0, 2 * m, 2 * m + 2 * p);
    let (cu, cd, cx) = (0, 2 * m, 2 * m + 2 * md);

    theta
        .view_mut((ru, cu), (2 * m, 2 * m))
        .copy_from(&Mat::identity(2 * m, 2 * m));
    // future output and state respond to the first input sample only
    theta.view_mut((ry + p, cu), (p, m)).copy_from(&(&sys.c * &sys.b));
    theta.view_mut((ry + p, cd), (p, md)).copy_from(&(&sys.c * &sys.e));
    theta.view_mut((rx + n, cu), (n, m)).copy_from(&sys.b);
    theta.view_mut((rx + n, cd), (n, md)).copy_from(&sys.e);
    theta.view_mut((ry, cx), (p, n)).copy_from(&sys.c);
    theta.view_mut((ry + p, cx), (p, n)).copy_from(&(&sys.c * &sys.a));
    theta
        .view_mut((rx, cx), (n, n))
        .copy_from(&Mat::identity(n, n));
    theta.view_mut((rx + n, cx), (n, n)).copy_from(&sys.a);

    let q = m + p;
    let mut p_r = Mat::zeros(rows, rows);
    let mut place = |out_row: usize, in_col: usize| p_r[(out_row, in_col)] = 1.0;
    for step in 0..2 {
        let base = step * (q + n);
        for i in 0..m {
            place(step * m + i, base + i);
        }
        for i in 0..p {
            place(ry + step * p + i, base + m + i);
        }
        for i in 0..n {
            place(rx + step * n + i, base + q + i);
        }
    }
    Ok((theta, p_r))
}

/// Draw a random minimal system with spectral radius 0.95.
pub fn random_minimal_system(
    n: usize,
    m: usize,
    p: usize,
    md: usize,
    rng: &mut Rng64,
    tol: &Tolerance,
) -> Result<LtiSystem> {
    if n == 0 {
        return Err(Error::InvalidParameter("state dimension must be >= 1".into()));
    }
    let gauss = |r: usize, c: usize, rng: &mut Rng64| {
        Mat::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    };
    for _ in 0..1000 {
        let raw = gauss(n, n, rng);
        let rho = linalg::spectral_radius(&raw)?;
        if rho < 1e-6 {
            continue;
        }
        let a = raw * (0.95 / rho);
        let sys = LtiSystem::new(a, gauss(n, m, rng), gauss(n, md, rng), gauss(p, n, rng))?;
        if check_minimality(&sys, tol)?.is_minimal() {
            return Ok(sys);
        }
    }
    Err(Error::Numerical(format!(
        "no minimal system found for n={n}, m={m}, p={p}, md={md}"
    )))
}

/// Simulate `sys` from a random initial state under uniform random `u` and
/// `d`, recording the seed.
pub fn random_experiment(sys: &LtiSystem, len: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = rng_from_seed(seed);
    let x0 = DVector::from_fn(sys.n(), |_, _| rng.random_range(-1.0..1.0));
    let u = generate_excitation(&ExcitationSpec {
        kind: ExcitationKind::UniformRandom { amplitude: 1.0 },
        dims: sys.m(),
        length: len,
        seed: rng.random(),
    })?;
    let d = generate_excitation(&ExcitationSpec {
        kind: ExcitationKind::UniformRandom { amplitude: 1.0 },
        dims: sys.md(),
        length: len,
        seed: rng.random(),
    })?;
    Ok(simulate(sys, &x0, &u, &d)?.with_meta(Metadata {
        seed: Some(seed),
        ts: None,
        label: Some("random-experiment".into()),
    }))
}
