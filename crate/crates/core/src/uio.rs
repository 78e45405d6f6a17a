//! Existence test, synthesis and recursion of the data-driven UIO.
//!
//! With `S = [V_p; X_p; V_f]` built from historical data and `Xi = S^+`
//! partitioned column-wise as `[Xi_Vp  Xi_Xp  Xi_Vf]`, an observer
//!
//! ```text
//! z_{t+1} = A_uio z_t + B_uio v_t
//! xhat_t  = z_t + D_uio v_t
//! ```
//!
//! with `A_uio = X_f Xi_Xp`, `D_uio = X_f Xi_Vf` and
//! `B_uio = X_f (Xi_Vp + Xi_Xp X_f Xi_Vf)` reproduces every trajectory
//! compatible with the data iff `ker S` is contained in `ker X_f`. It is an
//! unknown-input observer iff, in addition, `A_uio` is Schur stable. The
//! estimator itself only needs the gain `X_f Xi`:
//! `xhat_{t+1} = X_f Xi (v_t, xhat_t, v_{t+1})`.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Tolerance};
use crate::lti::rng_from_seed;
use crate::trajectory::{self, BlockDims, HankelBlocks, PeVerdict, Trajectory};

/// Relative residual below which a window counts as lying in the data range.
pub const COMPATIBILITY_TOL: f64 = 1e-8;
/// Relative change allowed for the observer matrices under kernel perturbations of `Xi`.
pub const XI_INDEPENDENCE_TOL: f64 = 1e-8;

/// A solution operator for `S g = (v_t, x_t, v_{t+1})`, split into the
/// columns acting on `v_t`, `x_t` and `v_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiPartition {
    xi: Mat,
    v_dim: usize,
    n: usize,
}

impl XiPartition {
    pub fn new(xi: Mat, v_dim: usize, n: usize) -> Result<Self> {
        if xi.ncols() != 2 * v_dim + n {
            return Err(Error::Dimension(format!(
                "Xi has {} columns, expected {}",
                xi.ncols(),
                2 * v_dim + n
            )));
        }
        Ok(Self { xi, v_dim, n })
    }

    pub fn xi(&self) -> &Mat {
        &self.xi
    }
    pub fn xi_vp(&self) -> Mat {
        self.xi.columns(0, self.v_dim).into_owned()
    }
    pub fn xi_xp(&self) -> Mat {
        self.xi.columns(self.v_dim, self.n).into_owned()
    }
    pub fn xi_vf(&self) -> Mat {
        self.xi.columns(self.v_dim + self.n, self.v_dim).into_owned()
    }
}

/// `Xi = [V_p; X_p; V_f]^+`.
pub fn compute_xi(blocks: &HankelBlocks, tol: &Tolerance) -> Result<XiPartition> {
    let xi = linalg::pinv(&blocks.stack3(), tol)?;
    XiPartition::new(xi, blocks.dims.v_dim(), blocks.dims.n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelInclusion {
    pub holds: bool,
    pub rank_stack3: usize,
    pub rank_stack4: usize,
    pub kernel_dim: usize,
    /// `max |X_f N|` over an orthonormal kernel basis `N` of the 3-stack.
    pub max_kernel_product: f64,
    pub product_threshold: f64,
}

/// Decide `ker [V_p; X_p; V_f] ⊆ ker X_f` by two routes: rank equality of the
/// 3- and 4-block stacks, and the size of `X_f` on a kernel basis. The routes
/// must agree; otherwise the tolerances do not fit the data and an error is
/// returned.
pub fn kernel_inclusion(blocks: &HankelBlocks, tol: &Tolerance) -> Result<KernelInclusion> {
    let s3 = blocks.stack3();
    let s4 = blocks.stack4();
    let rank_stack3 = linalg::numerical_rank(&s3, tol)?;
    let rank_stack4 = linalg::numerical_rank(&s4, tol)?;
    let kernel = linalg::null_space_basis(&s3, tol)?;

    let sigma4 = linalg::singular_values(&s4)?;
    let sigma_max = sigma4.iter().copied().fold(0.0, f64::max);
    let product_threshold = tol.singular_cutoff(s4.nrows(), s4.ncols(), sigma_max);
    let max_kernel_product = linalg::max_abs(&(&blocks.xf * &kernel));

    let rank_test = rank_stack3 == rank_stack4;
    let product_test = max_kernel_product <= product_threshold;
    if rank_test != product_test {
        return Err(Error::ToleranceInconsistency {
            rank_test,
            product_test,
            residual: max_kernel_product,
        });
    }
    Ok(KernelInclusion {
        holds: rank_test,
        rank_stack3,
        rank_stack4,
        kernel_dim: kernel.ncols(),
        max_kernel_product,
        product_threshold,
    })
}

pub fn check_kernel_inclusion(blocks: &HankelBlocks, tol: &Tolerance) -> Result<bool> {
    Ok(kernel_inclusion(blocks, tol)?.holds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizationDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

impl RealizationDims {
    pub fn v_dim(&self) -> usize {
        self.m + self.p
    }
}

/// Observer matrices and the one-step gain `X_f Xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct UioRealization {
    pub a_uio: Mat,
    pub b_uio: Mat,
    pub d_uio: Mat,
    pub gain: Mat,
    pub dims: RealizationDims,
    pub tolerance: Tolerance,
    pub source_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceReport {
    pub kernel_inclusion_holds: bool,
    pub rank_stack3: usize,
    pub rank_stack4: usize,
    pub kernel_dim: usize,
    pub max_kernel_product: f64,
    pub product_threshold: f64,
    pub spectral_radius_auio: f64,
    pub schur: bool,
    /// Persistency of excitation of `(u, d)`; `None` when not evaluated.
    pub pe_checked: Option<PeVerdict>,
    pub condition_stack3: f64,
    pub exists: bool,
    pub tolerance: Tolerance,
    pub dims: BlockDims,
    pub source_digest: String,
}

impl ExistenceReport {
    /// Which condition failed, for diagnostics.
    pub fn failure_reason(&self) -> Option<String> {
        match (self.kernel_inclusion_holds, self.schur) {
            (true, true) => None,
            (false, true) => Some(format!(
                "kernel inclusion fails: rank [V_p;X_p;V_f] = {} < rank with X_f = {}",
                self.rank_stack3, self.rank_stack4
            )),
            (true, false) => Some(format!(
                "A_uio is not Schur stable: spectral radius {:.12}",
                self.spectral_radius_auio
            )),
            (false, false) => Some(format!(
                "kernel inclusion fails (ranks {} vs {}) and A_uio is not Schur (spectral radius {:.12})",
                self.rank_stack3, self.rank_stack4, self.spectral_radius_auio
            )),
        }
    }
}

struct ObserverMatrices {
    a: Mat,
    b: Mat,
    d: Mat,
    gain: Mat,
}

fn observer_matrices(xf: &Mat, xi: &XiPartition) -> ObserverMatrices {
    let a = xf * xi.xi_xp();
    let d = xf * xi.xi_vf();
    let b = xf * (xi.xi_vp() + xi.xi_xp() * xf * xi.xi_vf());
    ObserverMatrices {
        a,
        b,
        d,
        gain: xf * xi.xi(),
    }
}

/// Build the observer and the existence report. The realization is returned
/// even when no UIO exists so that it can be inspected.
pub fn synthesize(blocks: &HankelBlocks, tol: &Tolerance) -> Result<(UioRealization, ExistenceReport)> {
    tol.validate()?;
    let xi = compute_xi(blocks, tol)?;
    let mats = observer_matrices(&blocks.xf, &xi);
    let inclusion = kernel_inclusion(blocks, tol)?;
    let rho = linalg::spectral_radius(&mats.a)?;
    let schur = rho < 1.0 - tol.schur_margin;

    let report = ExistenceReport {
        kernel_inclusion_holds: inclusion.holds,
        rank_stack3: inclusion.rank_stack3,
        rank_stack4: inclusion.rank_stack4,
        kernel_dim: inclusion.kernel_dim,
        max_kernel_product: inclusion.max_kernel_product,
        product_threshold: inclusion.product_threshold,
        spectral_radius_auio: rho,
        schur,
        pe_checked: None,
        condition_stack3: linalg::condition_number(&blocks.stack3(), tol)?,
        exists: inclusion.holds && schur,
        tolerance: *tol,
        dims: blocks.dims,
        source_digest: blocks.source_digest.clone(),
    };
    let realization = UioRealization {
        a_uio: mats.a,
        b_uio: mats.b,
        d_uio: mats.d,
        gain: mats.gain,
        dims: RealizationDims {
            n: blocks.dims.n,
            m: blocks.dims.m,
            p: blocks.dims.p,
        },
        tolerance: *tol,
        source_digest: blocks.source_digest.clone(),
    };
    Ok((realization, report))
}

/// Block construction, excitation check and synthesis in one call.
pub fn synthesize_from_trajectory(
    traj: &Trajectory,
    tol: &Tolerance,
) -> Result<(UioRealization, ExistenceReport)> {
    let blocks = trajectory::build_blocks(traj)?;
    let (r, mut report) = synthesize(&blocks, tol)?;
    report.pe_checked = Some(trajectory::check_assumption1(traj, tol)?);
    Ok((r, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiIndependence {
    Invariant,
    Changed,
    /// The kernel-inclusion condition fails, so invariance is not expected.
    NotApplicable,
}

/// Perturb `Xi` by a random matrix whose range lies in `ker [V_p; X_p; V_f]`
/// and compare the resulting observer matrices with the unperturbed ones.
pub fn xi_independence_check(blocks: &HankelBlocks, tol: &Tolerance, seed: u64) -> Result<XiIndependence> {
    if !check_kernel_inclusion(blocks, tol)? {
        return Ok(XiIndependence::NotApplicable);
    }
    let xi = compute_xi(blocks, tol)?;
    let kernel = linalg::null_space_basis(&blocks.stack3(), tol)?;
    let mut rng = rng_from_seed(seed);
    let scale = xi.xi().norm().max(1.0);
    let mix = Mat::from_fn(kernel.ncols(), xi.xi().ncols(), |_, _| {
        let w: f64 = StandardNormal.sample(&mut rng);
        scale * w
    });
    let perturbed = XiPartition::new(xi.xi() + &kernel * mix, xi.v_dim, xi.n)?;

    let base = observer_matrices(&blocks.xf, &xi);
    let other = observer_matrices(&blocks.xf, &perturbed);
    let same = |a: &Mat, b: &Mat| (a - b).norm() <= XI_INDEPENDENCE_TOL * a.norm().max(f64::MIN_POSITIVE);
    Ok(
        if same(&base.a, &other.a) && same(&base.b, &other.b) && same(&base.d, &other.d) {
            XiIndependence::Invariant
        } else {
            XiIndependence::Changed
        },
    )
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what} has length {got}, expected {want}")))
    }
}

/// `xhat_{t+1} = X_f Xi (v_t, xhat_t, v_{t+1})`.
pub fn estimate_step(
    r: &UioRealization,
    xhat: &DVector<f64>,
    v_t: &DVector<f64>,
    v_next: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (n, q) = (r.dims.n, r.dims.v_dim());
    check_len("xhat", xhat.len(), n)?;
    check_len("v_t", v_t.len(), q)?;
    check_len("v_next", v_next.len(), q)?;
    let mut w = DVector::zeros(2 * q + n);
    w.rows_mut(0, q).copy_from(v_t);
    w.rows_mut(q, n).copy_from(xhat);
    w.rows_mut(q + n, q).copy_from(v_next);
    Ok(&r.gain * w)
}

/// Estimates `xhat_0 .. xhat_{N-1}` from measured `v` (one column per step).
pub fn run_estimator(r: &UioRealization, xhat0: &DVector<f64>, v: &Mat) -> Result<Mat> {
    let (n, q) = (r.dims.n, r.dims.v_dim());
    check_len("xhat0", xhat0.len(), n)?;
    check_len("v rows", v.nrows(), q)?;
    let steps = v.ncols();
    if steps == 0 {
        return Err(Error::InvalidData("estimator needs at least one sample".into()));
    }
    let mut out = Mat::zeros(n, steps);
    out.set_column(0, xhat0);
    let mut xhat = xhat0.clone();
    for t in 0..steps - 1 {
        xhat = estimate_step(r, &xhat, &v.column(t).into_owned(), &v.column(t + 1).into_owned())?;
        out.set_column(t + 1, &xhat);
    }
    Ok(out)
}

/// The same estimates produced by the observer in state-space form, started
/// from `z_0 = xhat_0 - D_uio v_0`.
pub fn run_state_space(r: &UioRealization, xhat0: &DVector<f64>, v: &Mat) -> Result<Mat> {
    let (n, q) = (r.dims.n, r.dims.v_dim());
    check_len("xhat0", xhat0.len(), n)?;
    check_len("v rows", v.nrows(), q)?;
    let steps = v.ncols();
    let mut out = Mat::zeros(n, steps);
    if steps == 0 {
        return Ok(out);
    }
    let mut z = xhat0 - &r.d_uio * v.column(0);
    for t in 0..steps {
        out.set_column(t, &(&z + &r.d_uio * v.column(t)));
        z = &r.a_uio * &z + &r.b_uio * v.column(t);
    }
    Ok(out)
}

/// Membership test for the column space of `[V_p; X_p; V_f; X_f]`.
#[derive(Debug, Clone)]
pub struct CompatibilityTest {
    projector: Mat,
    dims: BlockDims,
}

impl CompatibilityTest {
    pub fn new(blocks: &HankelBlocks, tol: &Tolerance) -> Result<Self> {
        let s = blocks.stack4();
        let projector = &s * linalg::pinv(&s, tol)?;
        Ok(Self {
            projector,
            dims: blocks.dims,
        })
    }

    /// `|(I - S S^+) w| / max(1, |w|)` for `w = (v_t, x_t, v_{t+1}, x_{t+1})`.
    pub fn residual(&self, window: &DVector<f64>) -> Result<f64> {
        check_len("window", window.len(), self.projector.nrows())?;
        let off = window - &self.projector * window;
        Ok(off.norm() / window.norm().max(1.0))
    }

    pub fn is_compatible(&self, window: &DVector<f64>) -> Result<bool> {
        Ok(self.residual(window)? < COMPATIBILITY_TOL)
    }

    /// Every two-step window of `(v, x)` must be compatible.
    pub fn trajectory_compatible(&self, v: &Mat, x: &Mat) -> Result<bool> {
        check_len("v rows", v.nrows(), self.dims.v_dim())?;
        check_len("x rows", x.nrows(), self.dims.n)?;
        check_len("x samples", x.ncols(), v.ncols())?;
        for t in 0..v.ncols().saturating_sub(1) {
            if !self.is_compatible(&window(v, x, t))? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// `(v_t, x_t, v_{t+1}, x_{t+1})`
pub fn window(v: &Mat, x: &Mat, t: usize) -> DVector<f64> {
    let (q, n) = (v.nrows(), x.nrows());
    let mut w = DVector::zeros(2 * (q + n));
    w.rows_mut(0, q).copy_from(&v.column(t));
    w.rows_mut(q, n).copy_from(&x.column(t));
    w.rows_mut(q + n, q).copy_from(&v.column(t + 1));
    w.rows_mut(2 * q + n, n).copy_from(&x.column(t + 1));
    w
}

pub fn verify_compatibility(
    blocks: &HankelBlocks,
    v_pair: (&DVector<f64>, &DVector<f64>),
    x_pair: (&DVector<f64>, &DVector<f64>),
    tol: &Tolerance,
) -> Result<bool> {
    let (q, n) = (blocks.dims.v_dim(), blocks.dims.n);
    for (what, len, want) in [
        ("v_t", v_pair.0.len(), q),
        ("v_next", v_pair.1.len(), q),
        ("x_t", x_pair.0.len(), n),
        ("x_next", x_pair.1.len(), n),
    ] {
        check_len(what, len, want)?;
    }
    let mut w = DVector::zeros(2 * (q + n));
    w.rows_mut(0, q).copy_from(v_pair.0);
    w.rows_mut(q, n).copy_from(x_pair.0);
    w.rows_mut(q + n, q).copy_from(v_pair.1);
    w.rows_mut(2 * q + n, n).copy_from(x_pair.1);
    CompatibilityTest::new(blocks, tol)?.is_compatible(&w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{random_experiment, random_minimal_system, LtiSystem};
    use crate::trajectory::build_blocks;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    /// System with a single unknown input whose transfer to the output has a
    /// zero at `zero`; the observer inherits that zero as an error pole.
    fn system_with_zero(zero: f64) -> LtiSystem {
        LtiSystem::new(
            Mat::from_row_slice(2, 2, &[0.0, 1.0, -0.06, 0.5]),
            Mat::zeros(2, 0),
            Mat::from_column_slice(2, 1, &[0.0, 1.0]),
            Mat::from_row_slice(1, 2, &[-zero, 1.0]),
        )
        .unwrap()
    }

    fn blocks_for(sys: &LtiSystem, len: usize, seed: u64) -> HankelBlocks {
        build_blocks(&random_experiment(sys, len, seed).unwrap()).unwrap()
    }

    fn standard_case(seed: u64) -> (LtiSystem, HankelBlocks) {
        let mut rng = rng_from_seed(seed);
        let sys = random_minimal_system(3, 1, 3, 0, &mut rng, &tol()).unwrap();
        let len = 40;
        (sys.clone(), blocks_for(&sys, len, seed + 100))
    }

    #[test]
    fn xi_of_single_column() {
        let traj = Trajectory::new(
            Mat::zeros(0, 2),
            None,
            Mat::from_row_slice(1, 2, &[1.0, 2.0]),
            Mat::from_row_slice(1, 2, &[3.0, 4.0]),
        )
        .unwrap();
        let b = build_blocks(&traj).unwrap();
        let s = b.stack3();
        let xi = compute_xi(&b, &tol()).unwrap();
        let expect = s.transpose() / s.norm_squared();
        assert!((xi.xi() - expect).norm() < 1e-15);
    }

    #[test]
    fn xi_partition_widths_and_identity_on_range() {
        let (_, b) = standard_case(1);
        let xi = compute_xi(&b, &tol()).unwrap();
        assert_eq!(xi.xi_vp().ncols(), 4);
        assert_eq!(xi.xi_xp().ncols(), 3);
        assert_eq!(xi.xi_vf().ncols(), 4);
        let s = b.stack3();
        assert!((&s * xi.xi() * &s - &s).norm() <= 1e-9 * s.norm());
        assert!(XiPartition::new(Mat::zeros(3, 5), 2, 2).is_err());
    }

    #[test]
    fn kernel_inclusion_trivial_cases() {
        let (_, mut b) = standard_case(2);
        b.xf.fill(0.0);
        assert!(check_kernel_inclusion(&b, &tol()).unwrap());

        // fewer columns than rank: trivial kernel
        let (_, b) = standard_case(3);
        let short = b.truncated(4).unwrap();
        let inc = kernel_inclusion(&short, &tol()).unwrap();
        assert_eq!(inc.kernel_dim, 0);
        assert!(inc.holds);
    }

    #[test]
    fn kernel_inclusion_fails_when_unknown_input_is_invisible() {
        // C E = 0: the next output says nothing about d_t
        let sys = LtiSystem::new(
            Mat::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]),
            Mat::zeros(2, 0),
            Mat::from_column_slice(2, 1, &[0.0, 1.0]),
            Mat::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let b = blocks_for(&sys, 30, 4);
        let inc = kernel_inclusion(&b, &tol()).unwrap();
        assert!(!inc.holds);
        assert!(inc.rank_stack4 > inc.rank_stack3);
        // explicit kernel vector that X_f does not annihilate
        let kernel = linalg::null_space_basis(&b.stack3(), &tol()).unwrap();
        assert!(linalg::max_abs(&(&b.xf * kernel)) > 1e-3);
        assert_eq!(
            xi_independence_check(&b, &tol(), 1).unwrap(),
            XiIndependence::NotApplicable
        );
        let (_, report) = synthesize(&b, &tol()).unwrap();
        assert!(!report.exists);
        assert!(report.failure_reason().unwrap().contains("kernel inclusion"));
    }

    #[test]
    fn known_input_case_has_uio() {
        for seed in 0..5 {
            let (_, b) = standard_case(10 + seed);
            let (_, report) = synthesize(&b, &tol()).unwrap();
            assert!(report.exists, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn error_pole_at_transmission_zero() {
        let b = blocks_for(&system_with_zero(1.0), 30, 7);
        let (_, report) = synthesize(&b, &tol()).unwrap();
        assert!(report.kernel_inclusion_holds);
        assert!((report.spectral_radius_auio - 1.0).abs() < 1e-8, "{report:?}");
        assert!(!report.schur && !report.exists);

        let b = blocks_for(&system_with_zero(1.5), 30, 7);
        let (_, report) = synthesize(&b, &tol()).unwrap();
        assert!(report.kernel_inclusion_holds && !report.exists);
        assert!((report.spectral_radius_auio - 1.5).abs() < 1e-8);

        let b = blocks_for(&system_with_zero(0.4), 30, 7);
        let (_, report) = synthesize(&b, &tol()).unwrap();
        assert!(report.exists);
        assert!((report.spectral_radius_auio - 0.4).abs() < 1e-8);
    }

    #[test]
    fn matrices_satisfy_definitions() {
        let (_, b) = standard_case(5);
        let (r, _) = synthesize(&b, &tol()).unwrap();
        let xi = compute_xi(&b, &tol()).unwrap();
        assert_eq!(r.a_uio, &b.xf * xi.xi_xp());
        assert_eq!(r.d_uio, &b.xf * xi.xi_vf());
        let gvp = &b.xf * xi.xi_vp();
        assert!((&r.b_uio - (&gvp + &r.a_uio * &r.d_uio)).norm() < 1e-10 * r.b_uio.norm().max(1.0));
        // X_f = [B - A D, A, D] S on the data
        let lifted = {
            let mut m = Mat::zeros(3, 11);
            m.columns_mut(0, 4).copy_from(&(&r.b_uio - &r.a_uio * &r.d_uio));
            m.columns_mut(4, 3).copy_from(&r.a_uio);
            m.columns_mut(7, 4).copy_from(&r.d_uio);
            m
        };
        assert!((lifted * b.stack3() - &b.xf).norm() <= 1e-9 * b.xf.norm());
    }

    #[test]
    fn one_step_exactness_on_data_and_fresh_runs() {
        let mut rng = rng_from_seed(31);
        let sys = random_minimal_system(4, 1, 3, 1, &mut rng, &tol()).unwrap();
        let hist = random_experiment(&sys, 60, 1).unwrap();
        let b = build_blocks(&hist).unwrap();
        let (r, report) = synthesize(&b, &tol()).unwrap();
        assert!(report.kernel_inclusion_holds);
        for j in 0..b.columns() {
            let next = estimate_step(
                &r,
                &b.xp.column(j).into_owned(),
                &b.vp.column(j).into_owned(),
                &b.vf.column(j).into_owned(),
            )
            .unwrap();
            assert!((next - b.xf.column(j)).norm() <= 1e-9 * b.xf.column(j).norm().max(1.0));
        }
        let fresh = random_experiment(&sys, 30, 2).unwrap();
        let est = run_estimator(&r, &fresh.x().column(0).into_owned(), &fresh.v()).unwrap();
        assert!((est - fresh.x()).norm() <= 1e-8 * fresh.x().norm());
    }

    #[test]
    fn estimate_step_linearity_and_zero_gain() {
        let (_, b) = standard_case(6);
        let (mut r, _) = synthesize(&b, &tol()).unwrap();
        let v0 = DVector::from_vec(vec![0.1, 0.2, -0.3, 0.4]);
        let v1 = DVector::from_vec(vec![-0.5, 0.6, 0.7, -0.8]);
        let x1 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x2 = DVector::from_vec(vec![-1.0, 0.5, 0.0]);
        let diff = estimate_step(&r, &x1, &v0, &v1).unwrap() - estimate_step(&r, &x2, &v0, &v1).unwrap();
        assert!((diff - &r.a_uio * (&x1 - &x2)).norm() < 1e-10);
        assert!(estimate_step(&r, &x1, &v1, &v0).is_ok());
        assert!(estimate_step(&r, &DVector::zeros(2), &v0, &v1).is_err());
        r.gain.fill(0.0);
        assert_eq!(estimate_step(&r, &x1, &v0, &v1).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn estimator_matches_state_space_form_and_error_law() {
        let (sys, b) = standard_case(8);
        let (r, _) = synthesize(&b, &tol()).unwrap();
        let run = random_experiment(&sys, 25, 77).unwrap();
        let xhat0 = DVector::from_vec(vec![3.0, -2.0, 1.0]);
        let est = run_estimator(&r, &xhat0, &run.v()).unwrap();
        let ss = run_state_space(&r, &xhat0, &run.v()).unwrap();
        for t in 0..25 {
            assert!((est.column(t) - ss.column(t)).norm() <= 1e-10 * est.column(t).norm().max(1.0));
        }
        let mut e = run.x().column(0) - &xhat0;
        for t in 0..25 {
            let err = run.x().column(t) - est.column(t);
            assert!((&err - &e).norm() <= 1e-9 * (1.0 + e.norm()));
            e = &r.a_uio * e;
        }
    }

    #[test]
    fn estimator_edge_cases() {
        let (_, b) = standard_case(9);
        let (r, _) = synthesize(&b, &tol()).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let one = run_estimator(&r, &x0, &Mat::zeros(4, 1)).unwrap();
        assert_eq!(one.column(0), x0.column(0));
        assert!(run_estimator(&r, &x0, &Mat::zeros(4, 0)).is_err());
        assert!(run_estimator(&r, &x0, &Mat::zeros(3, 5)).is_err());
    }

    #[test]
    fn xi_independence_on_nontrivial_kernel() {
        let (_, b) = standard_case(12);
        assert!(linalg::null_space_basis(&b.stack3(), &tol()).unwrap().ncols() > 0);
        assert_eq!(xi_independence_check(&b, &tol(), 3).unwrap(), XiIndependence::Invariant);

        let short = b.truncated(3).unwrap();
        assert_eq!(xi_independence_check(&short, &tol(), 3).unwrap(), XiIndependence::Invariant);
    }

    #[test]
    fn compatibility_examples() {
        let mut rng = rng_from_seed(40);
        let sys = random_minimal_system(3, 1, 2, 1, &mut rng, &tol()).unwrap();
        let b = blocks_for(&sys, 50, 1);
        let test = CompatibilityTest::new(&b, &tol()).unwrap();
        let s = b.stack4();
        for j in 0..s.ncols() {
            assert!(test.is_compatible(&s.column(j).into_owned()).unwrap());
        }
        let fresh = random_experiment(&sys, 20, 9).unwrap();
        assert!(test.trajectory_compatible(&fresh.v(), fresh.x()).unwrap());
        assert!(verify_compatibility(
            &b,
            (&fresh.v().column(3).into_owned(), &fresh.v().column(4).into_owned()),
            (&fresh.x().column(3).into_owned(), &fresh.x().column(4).into_owned()),
            &tol()
        )
        .unwrap());

        let other = random_minimal_system(3, 1, 2, 1, &mut rng, &tol()).unwrap();
        let foreign = random_experiment(&other, 20, 9).unwrap();
        assert!(!test.trajectory_compatible(&foreign.v(), foreign.x()).unwrap());
    }

    #[test]
    fn information_structure() {
        // the estimator runs on (u, y) alone: dropping d changes nothing
        let (sys, b) = standard_case(13);
        let (r, _) = synthesize(&b, &tol()).unwrap();
        let run = random_experiment(&sys, 10, 3).unwrap();
        let blind = Trajectory::with_declared_md(run.u().clone(), run.x().clone(), run.y().clone(), 0).unwrap();
        let x0 = DVector::zeros(3);
        assert_eq!(
            run_estimator(&r, &x0, &run.v()).unwrap(),
            run_estimator(&r, &x0, &blind.v()).unwrap()
        );
    }
}
