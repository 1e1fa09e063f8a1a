//! Loose-saturation shaping of a linear state feedback.
//!
//! `sat(z) = z` on `[b, a]`, `a + m_a·(z − a)` above and `b + m_b·(z − b)`
//! below. The controller is `π(x; ψ) = sat(−K·x)` with `ψ = (a, b, m_a, m_b)`.

use crate::dynamics::StateVec;
use crate::error::{Error, Result};

/// Index of each entry of `ψ` in gradients and masks.
pub const PSI_A: usize = 0;
pub const PSI_B: usize = 1;
pub const PSI_MA: usize = 2;
pub const PSI_MB: usize = 3;

pub const PSI_NAMES: [&str; 4] = ["a", "b", "m_a", "m_b"];

/// Saturation parameters `ψ` plus the mask of entries that training may move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatParams {
    /// upper threshold
    pub a: f64,
    /// lower threshold
    pub b: f64,
    pub m_a: f64,
    pub m_b: f64,
    pub trainable: [bool; 4],
}

impl SatParams {
    /// Hard symmetric saturation at `±limit`, nothing trainable.
    pub fn symmetric(limit: f64) -> Self {
        Self {
            a: limit,
            b: -limit,
            m_a: 0.0,
            m_b: 0.0,
            trainable: [false; 4],
        }
    }

    pub fn with_trainable(mut self, trainable: [bool; 4]) -> Self {
        self.trainable = trainable;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "psi",
                reason: "entries must be finite",
            });
        }
        if self.b > self.a {
            return Err(Error::InvalidParameter {
                name: "b",
                reason: "lower threshold must not exceed the upper threshold",
            });
        }
        if self.m_a < 0.0 || self.m_b < 0.0 {
            return Err(Error::InvalidParameter {
                name: "m_a/m_b",
                reason: "slopes must be non-negative",
            });
        }
        Ok(())
    }

    #[inline]
    pub fn to_array(&self) -> [f64; 4] {
        [self.a, self.b, self.m_a, self.m_b]
    }

    pub fn set_array(&mut self, v: [f64; 4]) {
        self.a = v[PSI_A];
        self.b = v[PSI_B];
        self.m_a = v[PSI_MA];
        self.m_b = v[PSI_MB];
    }

    /// Zero the entries of `g` that are not trainable.
    #[inline]
    pub fn mask(&self, mut g: [f64; 4]) -> [f64; 4] {
        for (gi, t) in g.iter_mut().zip(self.trainable) {
            if !t {
                *gi = 0.0;
            }
        }
        g
    }
}

/// Trainable controller `u = sat_ψ(−K·x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatPolicy {
    pub k: [f64; 2],
    pub psi: SatParams,
    /// largest per-phase change of any trainable entry of `ψ`
    pub crop_radius: f64,
}

impl SatPolicy {
    pub fn new(k: [f64; 2], psi: SatParams, crop_radius: f64) -> Result<Self> {
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: "gain must be finite",
            });
        }
        if !(crop_radius > 0.0) {
            return Err(Error::InvalidParameter {
                name: "crop_radius",
                reason: "must be positive",
            });
        }
        psi.validate()?;
        Ok(Self {
            k,
            psi,
            crop_radius,
        })
    }

    /// Pre-saturation feedback `z = −K·x`.
    #[inline]
    pub fn feedback(&self, x: StateVec) -> f64 {
        -(self.k[0] * x.theta + self.k[1] * x.omega)
    }
}

#[inline]
pub fn sat(z: f64, psi: &SatParams) -> f64 {
    if z > psi.a {
        psi.a + psi.m_a * (z - psi.a)
    } else if z < psi.b {
        psi.b + psi.m_b * (z - psi.b)
    } else {
        z
    }
}

/// `d sat / dz`; the identity branch is used at the kinks.
#[inline]
pub fn sat_dz(z: f64, psi: &SatParams) -> f64 {
    if z > psi.a {
        psi.m_a
    } else if z < psi.b {
        psi.m_b
    } else {
        1.0
    }
}

/// `∂ sat / ∂ψ` at `z`, all four entries, ignoring the trainable mask.
#[inline]
pub fn sat_dpsi(z: f64, psi: &SatParams) -> [f64; 4] {
    let mut g = [0.0; 4];
    if z > psi.a {
        g[PSI_A] = 1.0 - psi.m_a;
        g[PSI_MA] = z - psi.a;
    } else if z < psi.b {
        g[PSI_B] = 1.0 - psi.m_b;
        g[PSI_MB] = z - psi.b;
    }
    g
}

#[inline]
pub fn policy_eval(x: StateVec, pol: &SatPolicy) -> f64 {
    sat(pol.feedback(x), &pol.psi)
}

/// `∂u/∂ψ` at `x`, zero on entries that are not trainable.
pub fn policy_grad_psi(x: StateVec, pol: &SatPolicy) -> [f64; 4] {
    pol.psi.mask(sat_dpsi(pol.feedback(x), &pol.psi))
}

/// Clamp each trainable entry of `proposed` to within `crop_radius` of `old`,
/// keep slopes non-negative, then restore `b ≤ a` by lowering `b`.
pub fn crop_update(old: &SatParams, proposed: &SatParams, crop_radius: f64) -> SatParams {
    let o = old.to_array();
    let p = proposed.to_array();
    let mut out = o;
    for i in 0..4 {
        if old.trainable[i] {
            out[i] = p[i].clamp(o[i] - crop_radius, o[i] + crop_radius);
        }
    }
    out[PSI_MA] = out[PSI_MA].max(0.0);
    out[PSI_MB] = out[PSI_MB].max(0.0);
    if out[PSI_B] > out[PSI_A] {
        out[PSI_B] = out[PSI_A];
    }
    let mut res = *old;
    res.set_array(out);
    res
}
