//! Per-robot extended Kalman filter over the state `[x, y, vx, vy]`.
//!
//! The motion model is a constant-velocity integrator driven by white noise;
//! observations are the signal strengths of the external transmitters plus a
//! direct velocity reading.  The filter is written against a measurement
//! trait so linear models can be substituted for the signal model.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Point2, Vector2, Vector4};

use crate::domain::Transmitter;
use crate::error::{Error, Result};

/// Relative singular-value cutoff below which the observability matrix is
/// declared rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Angle (rad) under which two transmitter bearings count as parallel.
pub const COLLINEARITY_TOLERANCE: f64 = 1e-8;

/// One recorded localization estimate: position mean and covariance at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataTuple {
    /// Robot id (0-based).
    pub robot: usize,
    /// Record time (s).
    pub t: f64,
    /// Position estimate mean (m).
    pub mu: Vector2<f64>,
    /// Position estimate covariance (m^2).
    pub sigma: Matrix2<f64>,
}

/// Filter state: mean and covariance of `[x, y, vx, vy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ekf {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

/// State transition over one step of length `dt`.
pub fn transition_matrix(dt: f64) -> Matrix4<f64> {
    let mut a = Matrix4::identity();
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    a
}

/// Process noise for one step: variance `q_rate * dt` on every state.
pub fn process_noise_matrix(q_rate: f64, dt: f64) -> Matrix4<f64> {
    Matrix4::identity() * (q_rate * dt)
}

/// Measurement model: predicted observation and its Jacobian at an estimate.
pub trait ObservationModel {
    fn observe(&self, mean: &Vector4<f64>) -> DVector<f64>;
    fn jacobian(&self, mean: &Vector4<f64>) -> DMatrix<f64>;
}

/// Signal strengths of every transmitter followed by the velocity reading.
#[derive(Debug, Clone)]
pub struct RssiVelocityModel {
    pub transmitters: Vec<Transmitter>,
}

impl ObservationModel for RssiVelocityModel {
    fn observe(&self, mean: &Vector4<f64>) -> DVector<f64> {
        let l = self.transmitters.len();
        let p = Point2::new(mean[0], mean[1]);
        let mut z = DVector::zeros(l + 2);
        for (i, tx) in self.transmitters.iter().enumerate() {
            z[i] = tx.signal_at(&p);
        }
        z[l] = mean[2];
        z[l + 1] = mean[3];
        z
    }

    fn jacobian(&self, mean: &Vector4<f64>) -> DMatrix<f64> {
        let l = self.transmitters.len();
        let p = Point2::new(mean[0], mean[1]);
        let sx = measurement_jacobian(&self.transmitters, &p);
        let mut h = DMatrix::zeros(l + 2, 4);
        h.view_mut((0, 0), (l, 2)).copy_from(&sx);
        h[(l, 2)] = 1.0;
        h[(l + 1, 3)] = 1.0;
        h
    }
}

/// Signal strengths only: the nonlinear block of the stacked observation.
#[derive(Debug, Clone)]
pub struct SignalModel {
    pub transmitters: Vec<Transmitter>,
}

impl ObservationModel for SignalModel {
    fn observe(&self, mean: &Vector4<f64>) -> DVector<f64> {
        let p = Point2::new(mean[0], mean[1]);
        DVector::from_iterator(
            self.transmitters.len(),
            self.transmitters.iter().map(|tx| tx.signal_at(&p)),
        )
    }

    fn jacobian(&self, mean: &Vector4<f64>) -> DMatrix<f64> {
        let l = self.transmitters.len();
        let p = Point2::new(mean[0], mean[1]);
        let mut h = DMatrix::zeros(l, 4);
        h.view_mut((0, 0), (l, 2))
            .copy_from(&measurement_jacobian(&self.transmitters, &p));
        h
    }
}

/// Velocity reading only: the linear tail of the stacked observation.
#[derive(Debug, Clone, Copy)]
pub struct VelocityModel;

impl ObservationModel for VelocityModel {
    fn observe(&self, mean: &Vector4<f64>) -> DVector<f64> {
        DVector::from_column_slice(&[mean[2], mean[3]])
    }

    fn jacobian(&self, _mean: &Vector4<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(2, 4);
        h[(0, 2)] = 1.0;
        h[(1, 3)] = 1.0;
        h
    }
}

/// Direct linear observation of the full state (positions instead of signal
/// strengths); turns the filter into a plain Kalman filter.
#[derive(Debug, Clone, Copy)]
pub struct PositionVelocityModel;

impl ObservationModel for PositionVelocityModel {
    fn observe(&self, mean: &Vector4<f64>) -> DVector<f64> {
        DVector::from_column_slice(mean.as_slice())
    }

    fn jacobian(&self, _mean: &Vector4<f64>) -> DMatrix<f64> {
        DMatrix::identity(4, 4)
    }
}

/// Gradient rows of the signal map: row i is `dS_i/d(x, y)` evaluated at `p`,
/// i.e. `-alpha * k * pow * (p - p_i) / r^(alpha + 2)`.
pub fn measurement_jacobian(transmitters: &[Transmitter], p: &Point2<f64>) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(transmitters.len(), 2);
    for (i, tx) in transmitters.iter().enumerate() {
        let g = tx.signal_gradient(p);
        j[(i, 0)] = g.x;
        j[(i, 1)] = g.y;
    }
    j
}

impl Ekf {
    /// Filter initialized at an exactly known state with covariance `p0 * I`.
    pub fn new(pos: Point2<f64>, vel: Vector2<f64>, p0: f64) -> Self {
        Ekf {
            mean: Vector4::new(pos.x, pos.y, vel.x, vel.y),
            cov: Matrix4::identity() * p0,
        }
    }

    /// Time update: `mean <- A mean`, `P <- A P A' + Q`.
    pub fn predict(&mut self, a: &Matrix4<f64>, q: &Matrix4<f64>) {
        self.mean = a * self.mean;
        self.cov = a * self.cov * a.transpose() + q;
    }

    /// Measurement update with observation `z` and noise variances `r_diag`.
    ///
    /// On a singular innovation covariance or a non-finite result the state is
    /// left unchanged and an error is returned.
    pub fn update(
        &mut self,
        z: &DVector<f64>,
        model: &impl ObservationModel,
        r_diag: &DVector<f64>,
    ) -> Result<()> {
        self.update_gated(z, model, r_diag, f64::INFINITY).map(|_| ())
    }

    /// Measurement update with an innovation validation gate.
    ///
    /// The squared Mahalanobis norm of the innovation, `d2 = y' S^-1 y`, is
    /// tested against `gate` (a chi-square quantile for the measurement
    /// dimension).  An observation beyond the gate is discarded and the state
    /// left unchanged — such an innovation is either an outlier or lies where
    /// the local linearization of the signal model cannot be trusted, and
    /// applying it can throw the estimate far outside the workspace.  Returns
    /// whether the update was applied.
    pub fn update_gated(
        &mut self,
        z: &DVector<f64>,
        model: &impl ObservationModel,
        r_diag: &DVector<f64>,
        gate: f64,
    ) -> Result<bool> {
        let h = model.jacobian(&self.mean);
        let predicted = model.observe(&self.mean);
        let mut s = &h * self.cov * h.transpose();
        for i in 0..r_diag.len() {
            s[(i, i)] += r_diag[i];
        }
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        let innovation = z - predicted;
        let d2 = (innovation.transpose() * &s_inv * &innovation)[(0, 0)];
        if !d2.is_finite() {
            return Err(Error::Numerical("non-finite innovation".into()));
        }
        if d2 > gate {
            return Ok(false);
        }
        let k = self.cov * h.transpose() * s_inv;
        let mean = self.mean + &k * innovation;
        let cov = (Matrix4::identity() - &k * &h) * self.cov;
        if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite filter update".into()));
        }
        self.mean = mean;
        // Keep the covariance symmetric against round-off drift.
        self.cov = (cov + cov.transpose()) * 0.5;
        Ok(true)
    }

    /// Snapshot the position block as a data tuple.
    pub fn record(&self, robot: usize, t: f64) -> DataTuple {
        DataTuple {
            robot,
            t,
            mu: Vector2::new(self.mean[0], self.mean[1]),
            sigma: self.cov.fixed_view::<2, 2>(0, 0).into_owned(),
        }
    }
}

/// Rank analysis of the one-step observability structure at a position.
#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// True when the bearings to all transmitters are pairwise parallel,
    /// i.e. the position lies on the line through the transmitters.
    pub collinear: bool,
}

/// Reduced observability matrix `[S_X 0; 0 I; 0 dt*S_X]` for position `p`.
pub fn observability_matrix(
    transmitters: &[Transmitter],
    p: &Point2<f64>,
    dt: f64,
) -> DMatrix<f64> {
    let l = transmitters.len();
    let sx = measurement_jacobian(transmitters, p);
    let mut o = DMatrix::zeros(2 * l + 2, 4);
    o.view_mut((0, 0), (l, 2)).copy_from(&sx);
    o[(l, 2)] = 1.0;
    o[(l + 1, 3)] = 1.0;
    o.view_mut((l + 2, 2), (l, 2)).copy_from(&(sx * dt));
    o
}

/// Numerical rank and collinearity verdict for position `p`.
///
/// Rank counts singular values at or above `RANK_TOLERANCE` times the largest;
/// full rank (4) holds exactly when `p` is off the transmitter line.
pub fn observability_report(
    transmitters: &[Transmitter],
    p: &Point2<f64>,
    dt: f64,
) -> ObservabilityReport {
    let o = observability_matrix(transmitters, p, dt);
    let svd = o.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s >= RANK_TOLERANCE * smax).count()
    };

    let mut collinear = true;
    'outer: for i in 0..transmitters.len() {
        for j in (i + 1)..transmitters.len() {
            let a = p - transmitters[i].pos;
            let b = p - transmitters[j].pos;
            let cross = (a.x * b.y - a.y * b.x).abs();
            if cross > COLLINEARITY_TOLERANCE * a.norm() * b.norm() {
                collinear = false;
                break 'outer;
            }
        }
    }

    ObservabilityReport { rank, singular_values: sv, collinear }
}
