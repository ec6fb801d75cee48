//! Closed-loop agent dynamics `ẋ = A (x - x_sp)` advanced with the exact
//! discrete map `x' = x_sp + e^{A dt} (x - x_sp)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::invariant_sets::{is_hurwitz, p_norm_sq, spectral_abscissa, PositiveDefiniteMatrix};

pub const DEFAULT_DT: f64 = 0.02;
/// Physics steps per environment time-step.
pub const DEFAULT_SUBSTEPS: usize = 10;

pub const PLANAR_2D: &str = "planar-2d";
pub const QUAD_12: &str = "quad-12";

#[derive(Debug, Clone)]
pub struct LtiModel {
    label: String,
    a: DMatrix<f64>,
    dt: f64,
    transition: DMatrix<f64>,
}

impl LtiModel {
    pub fn new(label: impl Into<String>, a: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if !is_hurwitz(&a) {
            return Err(Error::NotHurwitz(spectral_abscissa(&a)));
        }
        let transition = (&a * dt).exp();
        Ok(Self {
            label: label.into(),
            a,
            dt,
            transition,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `e^{A dt}`.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    /// Same dynamics at a different step.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::new(self.label.clone(), self.a.clone(), dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPhysState {
    pub x: DVector<f64>,
    pub time: f64,
}

impl AgentPhysState {
    pub fn at_rest(x: DVector<f64>) -> Self {
        Self { x, time: 0.0 }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }
}

pub fn step(model: &LtiModel, state: &AgentPhysState, x_sp: &DVector<f64>) -> Result<AgentPhysState> {
    let n = model.dim();
    if state.x.len() != n {
        return Err(Error::dim(n, state.x.len()));
    }
    if x_sp.len() != n {
        return Err(Error::dim(n, x_sp.len()));
    }
    let x = x_sp + model.transition() * (&state.x - x_sp);
    Ok(AgentPhysState {
        x,
        time: state.time + model.dt(),
    })
}

/// `x ∈ 𝓔_s(x_sp)`.
pub fn reached_setpoint(
    state: &AgentPhysState,
    x_sp: &DVector<f64>,
    p: &PositiveDefiniteMatrix,
    s: f64,
) -> Result<bool> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("s must be positive, got {s}")));
    }
    Ok(p_norm_sq(p, &state.x, x_sp)? <= s)
}

/// Per-axis PD loop on a double integrator: `[[0, 1], [-kp, -kd]]` written into
/// `a` at rows/cols `(pos, vel)`.
fn close_axis(a: &mut DMatrix<f64>, pos: usize, vel: usize, kp: f64, kd: f64) {
    a[(pos, vel)] = 1.0;
    a[(vel, pos)] = -kp;
    a[(vel, vel)] = -kd;
}

/// State `[p_x, p_y, v_x, v_y]`, critically damped PD (`k_p = k_d = 4`) per axis.
pub fn planar_2d(dt: f64) -> Result<LtiModel> {
    let mut a = DMatrix::zeros(4, 4);
    close_axis(&mut a, 0, 2, 4.0, 4.0);
    close_axis(&mut a, 1, 3, 4.0, 4.0);
    LtiModel::new(PLANAR_2D, a, dt)
}

/// Near-hover quadrotor surrogate with state
/// `[p_x, p_y, p_z, v_x, v_y, v_z, φ, θ, ψ, p, q, r]`.
///
/// Translational axes are closed with poles at -10 (double), attitude axes at
/// -20 (double). The blocks are decoupled.
pub fn quad_12(dt: f64) -> Result<LtiModel> {
    let mut a = DMatrix::zeros(12, 12);
    for axis in 0..3 {
        close_axis(&mut a, axis, 3 + axis, 100.0, 20.0);
        close_axis(&mut a, 6 + axis, 9 + axis, 400.0, 40.0);
    }
    LtiModel::new(QUAD_12, a, dt)
}

pub fn default_models() -> Vec<LtiModel> {
    vec![
        planar_2d(DEFAULT_DT).expect("planar-2d is Hurwitz"),
        quad_12(DEFAULT_DT).expect("quad-12 is Hurwitz"),
    ]
}

pub fn model_by_label(label: &str, dt: f64) -> Result<LtiModel> {
    match label {
        PLANAR_2D => planar_2d(dt),
        QUAD_12 => quad_12(dt),
        other => Err(Error::Config(format!(
            "unknown model label {other:?} (expected {PLANAR_2D} or {QUAD_12})"
        ))),
    }
}
