//! DC microgrid generation unit (DGU) with a primary voltage controller, and
//! the two monitoring scenarios: state estimation in safe operation and
//! detection of an additive attack on the communicated outputs.
//!
//! The state is `x = [V, I_t, v]` (PCC voltage, filter current, integrator
//! state) and the unknown input is `d = [I_net + I_L, V_ref + alpha]`. All
//! states are communicated, so `C = I` and there is no known input.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Tolerance};
use crate::lti::{self, rng_from_seed, ExcitationKind, ExcitationSpec, LtiSystem};
use crate::trajectory::{self, Metadata, PeVerdict, Trajectory};
use crate::uio::{self, UioRealization};

pub const STATE_DIM: usize = 3;
pub const DISTURBANCE_DIM: usize = 2;
/// Closed-loop poles (1/s) used to pick the default controller gains.
pub const DEFAULT_POLES: [f64; 3] = [-50.0, -80.0, -120.0];
pub const SAFE_STEPS: usize = 10;
pub const ATTACK_STEPS: usize = 100;
pub const ATTACK_START: usize = 50;
pub const ATTACK_MAGNITUDE: f64 = 0.1;
/// Seeds tried by [`collect_historical`] before giving up.
pub const MAX_COLLECT_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DguParams {
    /// Filter resistance (ohm).
    pub r_t: f64,
    /// Filter inductance (H).
    pub l_t: f64,
    /// Filter capacitance (F).
    pub c_t: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Nominal voltage reference (V).
    pub v_ref: f64,
    /// Nominal load current (A).
    pub i_l0: f64,
    /// Sampling period (s).
    pub ts: f64,
    /// Half-width of the random disturbance component, relative to nominal.
    pub disturbance_rel: f64,
}

impl Default for DguParams {
    fn default() -> Self {
        Self::with_poles(0.2, 1.8e-3, 2.2e-3, DEFAULT_POLES, 48.0, 5.0, 0.01)
            .expect("default parameters are valid")
    }
}

impl DguParams {
    /// Pick the controller gains that place the closed-loop poles at `poles`.
    ///
    /// The characteristic polynomial of `A_c` is
    /// `s^3 - (k2 - R)/L s^2 - (k1 - 1)/(L C) s + k3/(L C)`.
    pub fn with_poles(
        r_t: f64,
        l_t: f64,
        c_t: f64,
        poles: [f64; 3],
        v_ref: f64,
        i_l0: f64,
        ts: f64,
    ) -> Result<Self> {
        let [p1, p2, p3] = poles;
        let c2 = -(p1 + p2 + p3);
        let c1 = p1 * p2 + p1 * p3 + p2 * p3;
        let c0 = -(p1 * p2 * p3);
        let lc = l_t * c_t;
        let params = Self {
            r_t,
            l_t,
            c_t,
            k1: 1.0 - lc * c1,
            k2: r_t - l_t * c2,
            k3: lc * c0,
            v_ref,
            i_l0,
            ts,
            disturbance_rel: 0.1,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("R_t", self.r_t), ("L_t", self.l_t), ("C_t", self.c_t), ("T_s", self.ts)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("V_ref", self.v_ref),
            ("I_L0", self.i_l0),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if !(self.disturbance_rel.is_finite() && self.disturbance_rel >= 0.0) {
            return Err(Error::InvalidParameter("disturbance_rel must be >= 0".into()));
        }
        let abscissa = linalg::eigenvalues(&continuous_matrices(self).0)?
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        if abscissa >= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "primary controller does not stabilise the DGU (max Re eig = {abscissa})"
            )));
        }
        Ok(())
    }

    /// `d_0 = [I_L0, V_ref]`
    pub fn nominal_disturbance(&self) -> Vec<f64> {
        vec![self.i_l0, self.v_ref]
    }
}

fn continuous_matrices(p: &DguParams) -> (Mat, Mat) {
    let a_c = Mat::from_row_slice(
        3,
        3,
        &[
            0.0,
            1.0 / p.c_t,
            0.0,
            (p.k1 - 1.0) / p.l_t,
            (p.k2 - p.r_t) / p.l_t,
            p.k3 / p.l_t,
            -1.0,
            0.0,
            0.0,
        ],
    );
    let e_c = Mat::from_row_slice(3, 2, &[-1.0 / p.c_t, 0.0, 0.0, 0.0, 0.0, 1.0]);
    (a_c, e_c)
}

/// `(A_c, E_c)` of the controlled DGU; fails when `A_c` is not Hurwitz.
pub fn dgu_continuous(params: &DguParams) -> Result<(Mat, Mat)> {
    params.validate()?;
    Ok(continuous_matrices(params))
}

/// Zero-order-hold model at `params.ts` with `B` empty and `C = I`.
pub fn dgu_discrete(params: &DguParams) -> Result<LtiSystem> {
    let (a_c, e_c) = dgu_continuous(params)?;
    let (a, e) = linalg::discretize_exact(&a_c, &e_c, params.ts)?;
    LtiSystem::new(a, Mat::zeros(STATE_DIM, 0), e, Mat::identity(STATE_DIM, STATE_DIM))
}

/// Steady state under the nominal disturbance: `V = V_ref`, `I_t = I_L0`.
pub fn equilibrium(params: &DguParams) -> DVector<f64> {
    let v = params.v_ref;
    let i = params.i_l0;
    let integ = -((params.k1 - 1.0) * v + (params.k2 - params.r_t) * i) / params.k3;
    DVector::from_vec(vec![v, i, integ])
}

/// Equilibrium perturbed by up to 10% (plus 0.1 absolute) per component.
fn random_state(params: &DguParams, rng: &mut lti::Rng64) -> DVector<f64> {
    equilibrium(params).map(|x| {
        let spread = 0.1 * x.abs() + 0.1;
        x + rng.random_range(-spread..=spread)
    })
}

/// `d = d_0 + delta_d`, `delta_d` uniform within `disturbance_rel * |d_0| + 1e-3`.
fn disturbance(params: &DguParams, len: usize, seed: u64) -> Result<Mat> {
    lti::generate_excitation(&ExcitationSpec {
        kind: ExcitationKind::ConstantPlusRandom {
            nominal: params.nominal_disturbance(),
            relative: params.disturbance_rel,
            floor: 1e-3,
        },
        dims: DISTURBANCE_DIM,
        length: len,
        seed,
    })
}

/// Random initial state and disturbance, simulated for `len` steps. The
/// first `k` samples do not depend on `len`.
pub fn simulate_run(params: &DguParams, len: usize, seed: u64, label: &str) -> Result<Trajectory> {
    let sys = dgu_discrete(params)?;
    let mut rng = rng_from_seed(seed);
    let x0 = random_state(params, &mut rng);
    let d = disturbance(params, len, rng.random())?;
    let traj = lti::simulate(&sys, &x0, &Mat::zeros(0, len), &d)?;
    Ok(traj.with_meta(Metadata {
        seed: Some(seed),
        ts: Some(params.ts),
        label: Some(label.to_string()),
    }))
}

/// `(m + m_d + 1)(n + 2) + n`: the shortest exciting length plus `n + 1` samples of slack.
pub fn default_historical_length() -> usize {
    trajectory::min_exciting_length(DISTURBANCE_DIM, STATE_DIM + 2) + STATE_DIM + 1
}

/// Offline experiment from a random state. Seeds `seed, seed + 1, ...` are
/// tried until the disturbance is persistently exciting of order `n + 2`;
/// the seed that succeeded is stored in the metadata.
pub fn collect_historical(params: &DguParams, len: usize, seed: u64) -> Result<Trajectory> {
    let tol = Tolerance::default();
    for attempt in 0..MAX_COLLECT_ATTEMPTS {
        let s = seed.wrapping_add(attempt as u64);
        let traj = simulate_run(params, len, s, "dgu-historical")?;
        if trajectory::check_assumption1(&traj, &tol)? == PeVerdict::Exciting {
            return Ok(traj);
        }
        // too short to ever be exciting: no point in retrying
        if len < trajectory::min_exciting_length(DISTURBANCE_DIM, STATE_DIM + 2) {
            return Err(Error::NotExciting { attempts: attempt + 1 });
        }
    }
    Err(Error::NotExciting {
        attempts: MAX_COLLECT_ATTEMPTS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackSignal {
    Constant(Vec<f64>),
    /// `phi_t` indexed by absolute time; zero beyond the end.
    Sequence(Vec<Vec<f64>>),
}

/// Additive corruption `y^c_t = y_t + phi_t`, zero before `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    start: usize,
    signal: AttackSignal,
}

impl AttackSpec {
    pub fn new(start: usize, signal: AttackSignal) -> Result<Self> {
        let nonzero = |v: &[f64]| v.iter().any(|&x| x != 0.0);
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &signal {
            AttackSignal::Constant(phi) => {
                if !finite(phi) || !nonzero(phi) {
                    return Err(Error::InvalidParameter("constant attack must be finite and nonzero".into()));
                }
            }
            AttackSignal::Sequence(seq) => {
                if seq.iter().any(|phi| !finite(phi)) {
                    return Err(Error::InvalidParameter("attack sequence must be finite".into()));
                }
                if seq.iter().take(start).any(|phi| nonzero(phi)) {
                    return Err(Error::InvalidParameter(format!(
                        "attack sequence must vanish before start time {start}"
                    )));
                }
                if !seq.iter().skip(start).any(|phi| nonzero(phi)) {
                    return Err(Error::InvalidParameter("attack sequence is zero after start".into()));
                }
            }
        }
        Ok(Self { start, signal })
    }

    /// The constant attack `phi = [0.1, 0.1, 0.1]` from step 50.
    pub fn default_constant() -> Self {
        Self::new(ATTACK_START, AttackSignal::Constant(vec![ATTACK_MAGNITUDE; STATE_DIM]))
            .expect("valid attack")
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn signal(&self) -> &AttackSignal {
        &self.signal
    }

    fn phi(&self, t: usize) -> Option<DVector<f64>> {
        if t < self.start {
            return None;
        }
        match &self.signal {
            AttackSignal::Constant(phi) => Some(DVector::from_column_slice(phi)),
            AttackSignal::Sequence(seq) => seq.get(t).map(|phi| DVector::from_column_slice(phi)),
        }
    }

    fn check_width(&self, p: usize) -> Result<()> {
        let bad = match &self.signal {
            AttackSignal::Constant(phi) => phi.len() != p,
            AttackSignal::Sequence(seq) => seq.iter().any(|phi| phi.len() != p),
        };
        if bad {
            Err(Error::Dimension(format!("attack vectors must have length {p}")))
        } else {
            Ok(())
        }
    }
}

/// `y^c_t = y_t + phi_t`
pub fn apply_attack(y: &Mat, spec: &AttackSpec) -> Result<Mat> {
    spec.check_width(y.nrows())?;
    let mut out = y.clone();
    for t in 0..y.ncols() {
        if let Some(phi) = spec.phi(t) {
            let mut col = out.column_mut(t);
            col += phi;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub truth: Trajectory,
    /// Outputs as received by the monitor (`y^c`).
    pub received: Mat,
    pub estimates: Mat,
    /// `y^c_t - xhat_t`
    pub residuals: Mat,
    pub attack: Option<AttackSpec>,
    pub realization_digest: String,
    pub spectral_radius: f64,
}

impl ScenarioResult {
    pub fn steps(&self) -> usize {
        self.estimates.ncols()
    }

    /// `x_t - xhat_t`
    pub fn errors(&self) -> Mat {
        self.truth.x() - &self.estimates
    }

    pub fn attacked(&self, t: usize) -> bool {
        self.attack.as_ref().is_some_and(|a| t >= a.start())
    }
}

/// SHA-256 of the observer gain and dimensions.
pub fn realization_digest(r: &UioRealization) -> String {
    let mut h = Sha256::new();
    for dim in [r.dims.n, r.dims.m, r.dims.p] {
        h.update((dim as u64).to_le_bytes());
    }
    for v in r.gain.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Feed the (possibly attacked) outputs of `truth` to the estimator.
pub fn run_monitor(
    r: &UioRealization,
    truth: Trajectory,
    attack: Option<&AttackSpec>,
    xhat0: &DVector<f64>,
) -> Result<ScenarioResult> {
    let received = match attack {
        Some(spec) => apply_attack(truth.y(), spec)?,
        None => truth.y().clone(),
    };
    // m = 0, so the monitor's input v is the received output alone
    let estimates = uio::run_estimator(r, xhat0, &received)?;
    let residuals = &received - &estimates;
    Ok(ScenarioResult {
        truth,
        received,
        estimates,
        residuals,
        attack: attack.cloned(),
        realization_digest: realization_digest(r),
        spectral_radius: linalg::spectral_radius(&r.a_uio)?,
    })
}

/// Synthesize from historical data and insist that a UIO exists.
pub fn observer_from_history(hist: &Trajectory) -> Result<UioRealization> {
    let (r, report) = uio::synthesize_from_trajectory(hist, &Tolerance::default())?;
    if !report.exists {
        return Err(Error::InvalidData(format!(
            "historical data admits no UIO: {}",
            report.failure_reason().unwrap_or_default()
        )));
    }
    Ok(r)
}

/// Safe operation: fresh run of `steps` samples, estimator started from zero.
pub fn run_safe_scenario(params: &DguParams, hist: &Trajectory, steps: usize, seed: u64) -> Result<ScenarioResult> {
    let r = observer_from_history(hist)?;
    let truth = simulate_run(params, steps, seed, "dgu-safe")?;
    run_monitor(&r, truth, None, &DVector::zeros(STATE_DIM))
}

/// Same as the safe scenario, with the attack applied to the received outputs.
pub fn run_attack_scenario(
    params: &DguParams,
    hist: &Trajectory,
    steps: usize,
    spec: &AttackSpec,
    seed: u64,
) -> Result<ScenarioResult> {
    let r = observer_from_history(hist)?;
    let truth = simulate_run(params, steps, seed, "dgu-attack")?;
    run_monitor(&r, truth, Some(spec), &DVector::zeros(STATE_DIM))
}

/// Error and residual statistics of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub steps: usize,
    pub spectral_radius: f64,
    pub error_norms: Vec<f64>,
    pub residual_norms_inf: Vec<f64>,
    pub error_ratio_last_to_first: f64,
    pub burn_in: usize,
    pub monotone_after_burn_in: bool,
    pub attack_start: Option<usize>,
    pub max_residual_pre_attack: Option<f64>,
    pub max_residual_post_attack: Option<f64>,
    pub realization_digest: String,
}

pub const DEFAULT_BURN_IN: usize = 10;

impl ScenarioSummary {
    /// `burn_in` skips the initial transient in the pre-attack maximum and the
    /// monotonicity check.
    pub fn from_result(res: &ScenarioResult, burn_in: usize) -> Self {
        let errors = res.errors();
        let error_norms: Vec<f64> = errors.column_iter().map(|c| c.norm()).collect();
        let residual_norms_inf: Vec<f64> = res.residuals.column_iter().map(|c| c.amax()).collect();
        let first = error_norms.first().copied().unwrap_or(0.0);
        let last = error_norms.last().copied().unwrap_or(0.0);
        // non-increasing up to roundoff on the scale of the initial error
        let slack = 1e-12 * first.max(1.0);
        let monotone_burn_in = burn_in.min(error_norms.len().saturating_sub(1));
        let monotone = error_norms[monotone_burn_in..]
            .windows(2)
            .all(|w| w[1] <= w[0] + slack);
        let start = res.attack.as_ref().map(|a| a.start());
        let max_over = |lo: usize, hi: usize| {
            residual_norms_inf
                .get(lo..hi.min(residual_norms_inf.len()))
                .filter(|s| !s.is_empty())
                .map(|s| s.iter().copied().fold(0.0, f64::max))
        };
        Self {
            steps: res.steps(),
            spectral_radius: res.spectral_radius,
            error_ratio_last_to_first: if first > 0.0 { last / first } else { 0.0 },
            burn_in,
            monotone_after_burn_in: monotone,
            attack_start: start,
            max_residual_pre_attack: start.and_then(|s| max_over(burn_in, s)),
            max_residual_post_attack: start.and_then(|s| max_over(s, res.steps())),
            error_norms,
            residual_norms_inf,
            realization_digest: res.realization_digest.clone(),
        }
    }
}
