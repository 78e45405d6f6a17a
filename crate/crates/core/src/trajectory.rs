//! Experiment data and its Hankel-matrix representation.
//!
//! Signals are stored as matrices with one column per time step, so a
//! `q`-dimensional signal of length `T` is a `q x T` matrix. Zero-dimensional
//! signals (no known input, no unknown input) are `0 x T` matrices and flow
//! through every construction as zero-height blocks.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Tolerance};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: Option<u64>,
    pub ts: Option<f64>,
    pub label: Option<String>,
}

/// One experiment: known inputs `u`, optional unknown inputs `d`, states `x`
/// and outputs `y`, all sampled at the same `T` instants.
///
/// The unknown input is kept for offline checks only. The estimator never
/// receives a `Trajectory`; it is fed the stacked `v = (u, y)` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    m: usize,
    p: usize,
    md: usize,
    u: Mat,
    d: Option<Mat>,
    x: Mat,
    y: Mat,
    pub meta: Metadata,
}

impl Trajectory {
    /// `md` is taken from `d` when present; pass `d = None` with the
    /// declared unknown-input dimension through [`Trajectory::with_declared_md`].
    pub fn new(u: Mat, d: Option<Mat>, x: Mat, y: Mat) -> Result<Self> {
        let md = d.as_ref().map_or(0, |d| d.nrows());
        Self::build(u, d, md, x, y)
    }

    pub fn with_declared_md(u: Mat, x: Mat, y: Mat, md: usize) -> Result<Self> {
        Self::build(u, None, md, x, y)
    }

    fn build(u: Mat, d: Option<Mat>, md: usize, x: Mat, y: Mat) -> Result<Self> {
        let len = x.ncols();
        if len < 2 {
            return Err(Error::InvalidData(format!(
                "trajectory needs at least 2 samples, got {len}"
            )));
        }
        let check = |name: &str, s: &Mat| -> Result<()> {
            if s.ncols() != len {
                return Err(Error::Dimension(format!(
                    "signal {name} has {} samples, x has {len}",
                    s.ncols()
                )));
            }
            linalg::ensure_finite(s, name)
        };
        check("u", &u)?;
        check("x", &x)?;
        check("y", &y)?;
        if let Some(d) = &d {
            check("d", d)?;
        }
        Ok(Self {
            n: x.nrows(),
            m: u.nrows(),
            p: y.nrows(),
            md,
            u,
            d,
            x,
            y,
            meta: Metadata::default(),
        })
    }

    pub fn with_meta(mut self, meta: Metadata) -> Self {
        self.meta = meta;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn md(&self) -> usize {
        self.md
    }
    pub fn len(&self) -> usize {
        self.x.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u(&self) -> &Mat {
        &self.u
    }
    pub fn x(&self) -> &Mat {
        &self.x
    }
    pub fn y(&self) -> &Mat {
        &self.y
    }

    /// Unknown input recorded during the offline experiment, if any.
    pub fn offline_unknown_input(&self) -> Option<&Mat> {
        self.d.as_ref()
    }

    /// Measured signal `v_t = (u_t, y_t)`, one column per step.
    pub fn v(&self) -> Mat {
        stack_signals(&self.u, &self.y)
    }

    /// SHA-256 over dimensions and every sample, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for dim in [self.n, self.m, self.p, self.md, self.len()] {
            h.update((dim as u64).to_le_bytes());
        }
        let mut feed = |m: &Mat| {
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        };
        feed(&self.u);
        if let Some(d) = &self.d {
            feed(d);
        }
        feed(&self.x);
        feed(&self.y);
        hex::encode(h.finalize())
    }

    /// Keep the first `len` samples.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        if len > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate length {} trajectory to {len}",
                self.len()
            )));
        }
        let cut = |m: &Mat| m.columns(0, len).into_owned();
        let mut out = Self::build(
            cut(&self.u),
            self.d.as_ref().map(cut),
            self.md,
            cut(&self.x),
            cut(&self.y),
        )?;
        out.meta = self.meta.clone();
        Ok(out)
    }
}

/// Stack two signals with the same number of samples.
pub fn stack_signals(top: &Mat, bottom: &Mat) -> Mat {
    linalg::vstack(&[top, bottom]).expect("signals share the sample count")
}

/// Block-Hankel matrix of depth `depth`: block `(r, c)` is `signal[c + r]`.
pub fn hankel(signal: &Mat, depth: usize) -> Result<Mat> {
    let (q, len) = signal.shape();
    if depth == 0 || depth > len {
        return Err(Error::InvalidParameter(format!(
            "Hankel depth {depth} invalid for signal of length {len}"
        )));
    }
    let cols = len - depth + 1;
    let mut h = Mat::zeros(q * depth, cols);
    for r in 0..depth {
        h.view_mut((r * q, 0), (q, cols))
            .copy_from(&signal.columns(r, cols));
    }
    Ok(h)
}

/// Full row rank of the depth-`order` Hankel matrix. A signal shorter than
/// `order` cannot be exciting.
pub fn is_persistently_exciting(signal: &Mat, order: usize, tol: &Tolerance) -> Result<bool> {
    if order > signal.ncols() {
        return Ok(false);
    }
    let h = hankel(signal, order)?;
    Ok(linalg::numerical_rank(&h, tol)? == h.nrows())
}

/// Minimum length for a `q`-dimensional signal to be exciting of order `order`.
pub fn min_exciting_length(q: usize, order: usize) -> usize {
    (q + 1) * order - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeVerdict {
    Exciting,
    NotExciting,
    /// The unknown input was not recorded, so the condition cannot be tested.
    NotCheckable,
}

impl PeVerdict {
    pub fn holds(self) -> bool {
        self == PeVerdict::Exciting
    }
}

/// Persistency of excitation of `(u, d)` of order `n + 2`.
pub fn check_assumption1(traj: &Trajectory, tol: &Tolerance) -> Result<PeVerdict> {
    let Some(d) = traj.offline_unknown_input() else {
        return Ok(PeVerdict::NotCheckable);
    };
    let ud = stack_signals(traj.u(), d);
    Ok(if is_persistently_exciting(&ud, traj.n() + 2, tol)? {
        PeVerdict::Exciting
    } else {
        PeVerdict::NotExciting
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub md: usize,
    pub len: usize,
}

impl BlockDims {
    pub fn v_dim(&self) -> usize {
        self.m + self.p
    }
    /// Rows of `[V_p; X_p; V_f]`.
    pub fn stack3_rows(&self) -> usize {
        2 * self.v_dim() + self.n
    }
}

/// Past/future split of the depth-2 Hankel matrices of one experiment, with
/// one block row in the past and one in the future.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlocks {
    pub u: Mat,
    pub d: Option<Mat>,
    pub vp: Mat,
    pub xp: Mat,
    pub vf: Mat,
    pub xf: Mat,
    pub dims: BlockDims,
    pub source_digest: String,
}

impl HankelBlocks {
    /// `[V_p; X_p; V_f]`
    pub fn stack3(&self) -> Mat {
        linalg::vstack(&[&self.vp, &self.xp, &self.vf]).expect("blocks share columns")
    }

    /// `[V_p; X_p; V_f; X_f]`
    pub fn stack4(&self) -> Mat {
        linalg::vstack(&[&self.vp, &self.xp, &self.vf, &self.xf]).expect("blocks share columns")
    }

    /// `[U; D; X_p]`, available when the unknown input was recorded.
    pub fn input_state_stack(&self) -> Option<Mat> {
        let d = self.d.as_ref()?;
        Some(linalg::vstack(&[&self.u, d, &self.xp]).expect("blocks share columns"))
    }

    pub fn columns(&self) -> usize {
        self.xp.ncols()
    }

    /// Keep the first `cols` columns of every block.
    pub fn truncated(&self, cols: usize) -> Result<Self> {
        if cols == 0 || cols > self.columns() {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {cols} of {} block columns",
                self.columns()
            )));
        }
        let cut = |m: &Mat| m.columns(0, cols).into_owned();
        Ok(Self {
            u: cut(&self.u),
            d: self.d.as_ref().map(cut),
            vp: cut(&self.vp),
            xp: cut(&self.xp),
            vf: cut(&self.vf),
            xf: cut(&self.xf),
            dims: BlockDims {
                len: cols + 1,
                ..self.dims
            },
            source_digest: self.source_digest.clone(),
        })
    }
}

pub fn build_blocks(traj: &Trajectory) -> Result<HankelBlocks> {
    if traj.len() < 2 {
        return Err(Error::InvalidData("need at least 2 samples".into()));
    }
    let q = traj.m() + traj.p();
    let n = traj.n();
    let hv = hankel(&traj.v(), 2)?;
    let hx = hankel(traj.x(), 2)?;
    let cols = hv.ncols();
    Ok(HankelBlocks {
        u: hankel(traj.u(), 2)?,
        d: traj
            .offline_unknown_input()
            .map(|d| hankel(d, 2))
            .transpose()?,
        vp: hv.view((0, 0), (q, cols)).into_owned(),
        vf: hv.view((q, 0), (q, cols)).into_owned(),
        xp: hx.view((0, 0), (n, cols)).into_owned(),
        xf: hx.view((n, 0), (n, cols)).into_owned(),
        dims: BlockDims {
            n,
            m: traj.m(),
            p: traj.p(),
            md: traj.md(),
            len: traj.len(),
        },
        source_digest: traj.digest(),
    })
}
