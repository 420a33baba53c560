//! Extended Kalman filter with additive Gaussian noise.
//!
//! The system is `x[k+1] = f(x[k]) + w[k]`, `y[k] = h(x[k]) + v[k]` with
//! `w ~ N(0, Q)` and `v ~ N(0, R)`. Each cycle linearizes `f` around the
//! current posterior and `h` around the prior, using analytic Jacobians when
//! the model provides them and central differences otherwise.
//!
//! The covariance update uses the plain `(I - K H) P` form followed by
//! symmetrization `P <- (P + P^T) / 2`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::trace::Trace;

/// Tolerance on negative eigenvalues of a covariance matrix.
pub const EIGEN_TOLERANCE: f64 = 1e-9;

/// Relative tolerance used when checking that a matrix is symmetric.
const SYMMETRY_TOLERANCE: f64 = 1e-9;

pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EkfError {
    #[error("state dimension must be positive")]
    ZeroDimension,
    #[error("{name} has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    Shape {
        name: &'static str,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("{0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("{0} is not positive semi-definite")]
    NotPositiveSemiDefinite(&'static str),
    #[error("measurement noise covariance R is not positive definite")]
    MeasurementNoiseNotPositiveDefinite,
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("numeric failure: {0} produced non-finite values")]
    NumericFailure(&'static str),
    #[error("innovation covariance H P H^T + R is singular")]
    SingularInnovation,
    #[error("measurement has dimension {found}, observation function yields {expected}")]
    MeasurementDimension { expected: usize, found: usize },
    #[error("cannot run a filter on an empty measurement sequence")]
    EmptyInput,
    #[error("at tick {tick}: {source}")]
    AtTick {
        tick: u64,
        #[source]
        source: Box<EkfError>,
    },
}

/// Dynamics `f`, observation `h`, their optional Jacobians, and the noise
/// covariances `Q` (process) and `R` (measurement).
#[derive(Clone)]
pub struct ProcessModel {
    state_dim: usize,
    transition: VectorFn,
    observation: VectorFn,
    transition_jacobian: Option<JacobianFn>,
    observation_jacobian: Option<JacobianFn>,
    process_noise: DMatrix<f64>,
    measurement_noise: DMatrix<f64>,
}

impl fmt::Debug for ProcessModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessModel")
            .field("state_dim", &self.state_dim)
            .field("analytic_f_jacobian", &self.transition_jacobian.is_some())
            .field("analytic_h_jacobian", &self.observation_jacobian.is_some())
            .field("q", &self.process_noise)
            .field("r", &self.measurement_noise)
            .finish()
    }
}

impl ProcessModel {
    /// Validates `Q` (symmetric PSD, `state_dim` square) and `R` (symmetric
    /// positive definite). The observation dimension is taken from `R`.
    pub fn new(
        state_dim: usize,
        transition: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        observation: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        process_noise: DMatrix<f64>,
        measurement_noise: DMatrix<f64>,
    ) -> Result<Self, EkfError> {
        if state_dim == 0 {
            return Err(EkfError::ZeroDimension);
        }
        check_shape("Q", &process_noise, state_dim, state_dim)?;
        let m = measurement_noise.nrows();
        if m == 0 {
            return Err(EkfError::ZeroDimension);
        }
        check_shape("R", &measurement_noise, m, m)?;
        check_covariance("Q", &process_noise)?;
        check_covariance("R", &measurement_noise)?;
        if measurement_noise.clone().cholesky().is_none() {
            return Err(EkfError::MeasurementNoiseNotPositiveDefinite);
        }
        Ok(Self {
            state_dim,
            transition: Arc::new(transition),
            observation: Arc::new(observation),
            transition_jacobian: None,
            observation_jacobian: None,
            process_noise,
            measurement_noise,
        })
    }

    pub fn with_transition_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.transition_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_observation_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.observation_jacobian = Some(Arc::new(jac));
        self
    }

    /// Linear model `f(x) = A x`, `h(x) = H x` with exact Jacobians.
    pub fn linear(
        transition: DMatrix<f64>,
        observation: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        measurement_noise: DMatrix<f64>,
    ) -> Result<Self, EkfError> {
        let n = transition.nrows();
        check_shape("A", &transition, n, n)?;
        check_shape("H", &observation, measurement_noise.nrows(), n)?;
        let (a, a_jac) = (transition.clone(), transition);
        let (h, h_jac) = (observation.clone(), observation);
        Ok(Self::new(
            n,
            move |x| &a * x,
            move |x| &h * x,
            process_noise,
            measurement_noise,
        )?
        .with_transition_jacobian(move |_| a_jac.clone())
        .with_observation_jacobian(move |_| h_jac.clone()))
    }

    /// Scalar random walk observed directly: `f(x) = x`, `h(x) = x`, with
    /// process variance `q` and measurement variance `r`.
    pub fn random_walk(q: f64, r: f64) -> Result<Self, EkfError> {
        Self::linear(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement_noise.nrows()
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_noise
    }

    pub fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.measurement_noise
    }

    pub fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.transition)(x)
    }

    pub fn observation(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.observation)(x)
    }

    pub fn has_analytic_jacobians(&self) -> (bool, bool) {
        (
            self.transition_jacobian.is_some(),
            self.observation_jacobian.is_some(),
        )
    }

    /// `F = df/dx` at `x`.
    pub fn transition_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, EkfError> {
        match &self.transition_jacobian {
            Some(jac) => finite_matrix(jac(x), "transition Jacobian"),
            None => scaled_numeric_jacobian(&*self.transition, x),
        }
    }

    /// `H = dh/dx` at `x`.
    pub fn observation_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, EkfError> {
        match &self.observation_jacobian {
            Some(jac) => finite_matrix(jac(x), "observation Jacobian"),
            None => scaled_numeric_jacobian(&*self.observation, x),
        }
    }
}

fn check_shape(
    name: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), EkfError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(EkfError::Shape {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            expected_rows: rows,
            expected_cols: cols,
        });
    }
    Ok(())
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= SYMMETRY_TOLERANCE * scale
}

fn check_covariance(name: &'static str, m: &DMatrix<f64>) -> Result<(), EkfError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EkfError::NumericFailure(name));
    }
    if !is_symmetric(m) {
        return Err(EkfError::NotSymmetric(name));
    }
    if m.diagonal().iter().any(|&d| d < 0.0) {
        return Err(EkfError::NotPositiveSemiDefinite(name));
    }
    let scale = m.amax().max(1.0);
    let eig = m.clone().symmetric_eigenvalues();
    if eig.iter().any(|&l| l < -EIGEN_TOLERANCE * scale) {
        return Err(EkfError::NotPositiveSemiDefinite(name));
    }
    Ok(())
}

fn finite_vector(v: DVector<f64>, what: &'static str) -> Result<DVector<f64>, EkfError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(EkfError::NumericFailure(what))
    }
}

fn finite_matrix(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, EkfError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(m)
    } else {
        Err(EkfError::NumericFailure(what))
    }
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Central-difference Jacobian with per-coordinate steps.
fn central_difference<F>(f: &F, x: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>, EkfError>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    for (j, &eps) in steps.iter().enumerate() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += eps;
        minus[j] -= eps;
        let col = (f(&plus) - f(&minus)) / (2.0 * eps);
        columns.push(finite_vector(col, "function under differentiation")?);
    }
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, n, |i, j| columns[j][i]))
}

/// Jacobian of `f` at `x` by central differences with a uniform step `eps`.
///
/// Column `j` is `(f(x + eps e_j) - f(x - eps e_j)) / (2 eps)`.
pub fn numeric_jacobian<F>(f: &F, x: &DVector<f64>, eps: f64) -> Result<DMatrix<f64>, EkfError>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(EkfError::InvalidStep(eps));
    }
    central_difference(f, x, &vec![eps; x.len()])
}

/// Step `1e-6 * max(1, |x_j|)` per coordinate; used when a model has no
/// analytic Jacobian.
pub fn scaled_numeric_jacobian<F>(f: &F, x: &DVector<f64>) -> Result<DMatrix<f64>, EkfError>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + ?Sized,
{
    let steps: Vec<f64> = x.iter().map(|v| 1e-6 * v.abs().max(1.0)).collect();
    central_difference(f, x, &steps)
}

/// State estimate and its covariance at some tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub tick: u64,
}

impl FilterState {
    pub fn new(x_hat: DVector<f64>, covariance: DMatrix<f64>, tick: u64) -> Result<Self, EkfError> {
        let n = x_hat.len();
        if n == 0 {
            return Err(EkfError::ZeroDimension);
        }
        check_shape("P", &covariance, n, n)?;
        finite_vector(x_hat.clone(), "initial state")?;
        check_covariance("P", &covariance)?;
        Ok(Self {
            x_hat,
            covariance,
            tick,
        })
    }

    pub fn scalar(x_hat: f64, variance: f64) -> Result<Self, EkfError> {
        Self::new(
            DVector::from_element(1, x_hat),
            DMatrix::from_element(1, 1, variance),
            0,
        )
    }

    pub fn dim(&self) -> usize {
        self.x_hat.len()
    }
}

/// Time update: `x(k+1|k) = f(x(k|k))`, `P(k+1|k) = F P F^T + Q`.
pub fn predict(state: &FilterState, model: &ProcessModel) -> Result<FilterState, EkfError> {
    if state.dim() != model.state_dim {
        return Err(EkfError::Shape {
            name: "x_hat",
            rows: state.dim(),
            cols: 1,
            expected_rows: model.state_dim,
            expected_cols: 1,
        });
    }
    let f_jac = model.transition_jacobian(&state.x_hat)?;
    check_shape("F", &f_jac, model.state_dim, model.state_dim)?;
    let x_prior = finite_vector(model.transition(&state.x_hat), "transition function")?;
    if x_prior.len() != model.state_dim {
        return Err(EkfError::Shape {
            name: "f(x)",
            rows: x_prior.len(),
            cols: 1,
            expected_rows: model.state_dim,
            expected_cols: 1,
        });
    }
    let p_prior = &f_jac * &state.covariance * f_jac.transpose() + &model.process_noise;
    let p_prior = finite_matrix(symmetrize(&p_prior), "predicted covariance")?;
    Ok(FilterState {
        x_hat: x_prior,
        covariance: p_prior,
        tick: state.tick + 1,
    })
}

/// Everything computed by one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub posterior: FilterState,
    /// `y - h(x(k+1|k))`.
    pub innovation: DVector<f64>,
    /// `H P H^T + R`.
    pub innovation_covariance: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// Measurement update; returns the posterior only.
pub fn update(
    prior: &FilterState,
    y: &DVector<f64>,
    model: &ProcessModel,
) -> Result<FilterState, EkfError> {
    update_detailed(prior, y, model).map(|o| o.posterior)
}

/// Measurement update:
/// `K = P H^T (H P H^T + R)^-1`, `x = x + K (y - h(x))`, `P = (I - K H) P`.
pub fn update_detailed(
    prior: &FilterState,
    y: &DVector<f64>,
    model: &ProcessModel,
) -> Result<UpdateOutcome, EkfError> {
    let m = model.measurement_dim();
    if y.len() != m {
        return Err(EkfError::MeasurementDimension {
            expected: m,
            found: y.len(),
        });
    }
    finite_vector(y.clone(), "measurement")?;
    let predicted_y = finite_vector(model.observation(&prior.x_hat), "observation function")?;
    if predicted_y.len() != m {
        return Err(EkfError::MeasurementDimension {
            expected: predicted_y.len(),
            found: m,
        });
    }
    let h_jac = model.observation_jacobian(&prior.x_hat)?;
    check_shape("H", &h_jac, m, prior.dim())?;

    let p = &prior.covariance;
    let s = &h_jac * p * h_jac.transpose() + &model.measurement_noise;
    let s_inv = s
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or(EkfError::SingularInnovation)?;
    let gain = p * h_jac.transpose() * s_inv;
    let innovation = y - predicted_y;
    let x_post = finite_vector(&prior.x_hat + &gain * &innovation, "updated state")?;
    let identity = DMatrix::<f64>::identity(prior.dim(), prior.dim());
    let p_post = (identity - &gain * &h_jac) * p;
    let p_post = finite_matrix(symmetrize(&p_post), "updated covariance")?;

    Ok(UpdateOutcome {
        posterior: FilterState {
            x_hat: x_post,
            covariance: p_post,
            tick: prior.tick,
        },
        innovation,
        innovation_covariance: s,
        gain,
    })
}

/// One predict-then-update cycle of [`run_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    /// Timestamp of the consumed measurement.
    pub timestamp: u64,
    pub measurement: DVector<f64>,
    pub posterior: FilterState,
    pub innovation: DVector<f64>,
}

impl FilterStep {
    /// Euclidean norm of the innovation.
    pub fn innovation_magnitude(&self) -> f64 {
        self.innovation.norm()
    }
}

/// Filters a scalar trace, one posterior per reading.
pub fn run_filter(
    model: &ProcessModel,
    init: &FilterState,
    measurements: &Trace,
) -> Result<Vec<FilterStep>, EkfError> {
    let ys: Vec<(u64, DVector<f64>)> = measurements
        .readings()
        .iter()
        .map(|m| (m.timestamp, DVector::from_element(1, m.value)))
        .collect();
    run_filter_vectors(model, init, &ys)
}

/// Filters an arbitrary sequence of `(timestamp, y)` measurement vectors.
pub fn run_filter_vectors(
    model: &ProcessModel,
    init: &FilterState,
    measurements: &[(u64, DVector<f64>)],
) -> Result<Vec<FilterStep>, EkfError> {
    if measurements.is_empty() {
        return Err(EkfError::EmptyInput);
    }
    let mut state = init.clone();
    let mut steps = Vec::with_capacity(measurements.len());
    for (timestamp, y) in measurements {
        let at_tick = |e: EkfError| EkfError::AtTick {
            tick: *timestamp,
            source: Box::new(e),
        };
        let prior = predict(&state, model).map_err(at_tick)?;
        let outcome = update_detailed(&prior, y, model).map_err(at_tick)?;
        state = outcome.posterior.clone();
        steps.push(FilterStep {
            timestamp: *timestamp,
            measurement: y.clone(),
            posterior: outcome.posterior,
            innovation: outcome.innovation,
        });
    }
    Ok(steps)
}

/// Writes `tick,measurement,estimate,variance` rows for the first state
/// component.
pub fn write_estimates_csv<W: Write>(steps: &[FilterStep], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tick", "measurement", "estimate", "variance"])?;
    for s in steps {
        w.write_record([
            s.timestamp.to_string(),
            s.measurement[0].to_string(),
            s.posterior.x_hat[0].to_string(),
            s.posterior.covariance[(0, 0)].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        q: f64,
        r: f64,
    ) -> ProcessModel {
        ProcessModel::new(
            1,
            move |x| DVector::from_element(1, f(x[0])),
            |x| x.clone(),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
        )
        .unwrap()
    }

    #[test]
    fn jacobian_of_identity_and_constant() {
        let x = DVector::from_vec(vec![0.3, -2.0, 7.5]);
        let id = |v: &DVector<f64>| v.clone();
        let j = numeric_jacobian(&id, &x, 1e-6).unwrap();
        assert!((j - DMatrix::<f64>::identity(3, 3)).amax() < 1e-9);

        let c = |_: &DVector<f64>| DVector::from_vec(vec![4.0, 1.0]);
        let j = numeric_jacobian(&c, &x, 1e-6).unwrap();
        assert_eq!(j.shape(), (2, 3));
        assert_eq!(j.amax(), 0.0);
    }

    #[test]
    fn jacobian_of_square_matches_derivative() {
        let sq = |v: &DVector<f64>| v.map(|e| e * e);
        let j = numeric_jacobian(&sq, &DVector::from_element(1, 3.0), 1e-5).unwrap();
        // d/dx x^2 = 2x = 6 at x = 3
        assert!((j[(0, 0)] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn jacobian_rejects_bad_step_and_divergence() {
        let id = |v: &DVector<f64>| v.clone();
        let x = DVector::from_element(1, 1.0);
        assert_eq!(
            numeric_jacobian(&id, &x, 0.0),
            Err(EkfError::InvalidStep(0.0))
        );
        assert!(numeric_jacobian(&id, &x, -1.0).is_err());
        let nan = |v: &DVector<f64>| v.map(|e| (e - 2.0).sqrt());
        assert!(matches!(
            numeric_jacobian(&nan, &x, 1e-3),
            Err(EkfError::NumericFailure(_))
        ));
    }

    #[test]
    fn predict_examples() {
        let m = scalar_model(|x| x, 0.0, 1.0);
        let p = predict(&FilterState::scalar(5.0, 1.0).unwrap(), &m).unwrap();
        assert!((p.x_hat[0] - 5.0).abs() < 1e-12);
        assert!((p.covariance[(0, 0)] - 1.0).abs() < 1e-9);
        assert_eq!(p.tick, 1);

        let m = scalar_model(|x| x, 0.1, 1.0);
        let p = predict(&FilterState::scalar(0.0, 1.0).unwrap(), &m).unwrap();
        assert!((p.covariance[(0, 0)] - 1.1).abs() < 1e-9);

        let m = scalar_model(|x| 2.0 * x, 0.0, 1.0);
        let p = predict(&FilterState::scalar(1.0, 1.0).unwrap(), &m).unwrap();
        assert!((p.x_hat[0] - 2.0).abs() < 1e-12);
        assert!((p.covariance[(0, 0)] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn update_examples() {
        let m = ProcessModel::random_walk(0.0, 1.0).unwrap();
        let prior = FilterState::scalar(0.0, 1.0).unwrap();
        let post = update(&prior, &DVector::from_element(1, 2.0), &m).unwrap();
        assert!((post.x_hat[0] - 1.0).abs() < 1e-12);
        assert!((post.covariance[(0, 0)] - 0.5).abs() < 1e-12);

        let m = ProcessModel::random_walk(0.0, 1e12).unwrap();
        let y = 37.0;
        let post = update(&prior, &DVector::from_element(1, y), &m).unwrap();
        assert!((post.x_hat[0] - prior.x_hat[0]).abs() < 1e-9 * y);

        let m = ProcessModel::random_walk(0.0, 1.0).unwrap();
        let exact = FilterState::scalar(3.25, 0.0).unwrap();
        let post = update(&exact, &DVector::from_element(1, -100.0), &m).unwrap();
        assert_eq!(post.x_hat[0], 3.25);
    }

    #[test]
    fn update_rejects_wrong_measurement_dimension() {
        let m = ProcessModel::random_walk(0.1, 0.1).unwrap();
        let prior = FilterState::scalar(0.0, 1.0).unwrap();
        let err = update(&prior, &DVector::from_vec(vec![1.0, 2.0]), &m).unwrap_err();
        assert_eq!(
            err,
            EkfError::MeasurementDimension {
                expected: 1,
                found: 2
            }
        );
    }

    #[test]
    fn singular_bracket_is_reported() {
        // R is validated as positive definite at construction, so a singular
        // bracket needs a tiny R against an ill-scaled prior.
        let m = ProcessModel::new(
            1,
            |x| x.clone(),
            |x| x.clone(),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1e-320),
        )
        .unwrap()
        .with_observation_jacobian(|_| DMatrix::from_element(1, 1, 1e-200));
        let prior = FilterState::scalar(0.0, 0.0).unwrap();
        let r = update(&prior, &DVector::from_element(1, 1.0), &m);
        assert_eq!(r, Err(EkfError::SingularInnovation));
    }

    #[test]
    fn model_validation() {
        let bad_r = ProcessModel::random_walk(0.1, 0.0);
        assert_eq!(
            bad_r.unwrap_err(),
            EkfError::MeasurementNoiseNotPositiveDefinite
        );
        let bad_q = ProcessModel::random_walk(-0.1, 0.1);
        assert!(matches!(bad_q, Err(EkfError::NotPositiveSemiDefinite("Q"))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let r = ProcessModel::new(
            2,
            |x| x.clone(),
            |x| x.clone(),
            asym,
            DMatrix::identity(2, 2),
        );
        assert!(matches!(r, Err(EkfError::NotSymmetric("Q"))));
        assert!(FilterState::scalar(0.0, -1.0).is_err());
    }

    #[test]
    fn single_measurement_is_predict_then_update() {
        let m = ProcessModel::random_walk(0.1, 0.1).unwrap();
        let init = FilterState::scalar(1.0, 2.0).unwrap();
        let trace =
            Trace::from_samples("n", crate::trace::SensorKind::Pressure, &[(4, 3.0)]).unwrap();
        let steps = run_filter(&m, &init, &trace).unwrap();
        assert_eq!(steps.len(), 1);
        let expected = update(
            &predict(&init, &m).unwrap(),
            &DVector::from_element(1, 3.0),
            &m,
        )
        .unwrap();
        assert_eq!(steps[0].posterior, expected);
        assert_eq!(steps[0].timestamp, 4);
    }

    #[test]
    fn constant_input_converges_monotonically() {
        let m = ProcessModel::random_walk(0.0, 0.1).unwrap();
        let c = 4.0;
        let samples: Vec<(u64, f64)> = (0..30).map(|t| (t, c)).collect();
        let trace = Trace::from_samples("n", crate::trace::SensorKind::Pressure, &samples).unwrap();
        let steps = run_filter(&m, &FilterState::scalar(0.0, 1.0).unwrap(), &trace).unwrap();
        // Scalar KF oracle: with q = 0 the gain is p/(p + r), p_{k+1} = p r/(p + r),
        // and the error shrinks by (1 - gain) each step.
        let (mut p, mut err) = (1.0_f64, c);
        for s in &steps {
            let k = p / (p + 0.1);
            err *= 1.0 - k;
            p = p * 0.1 / (p + 0.1);
            assert!(((c - s.posterior.x_hat[0]) - err).abs() < 1e-12);
        }
        let errs: Vec<f64> = steps
            .iter()
            .map(|s| (s.posterior.x_hat[0] - c).abs())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn errors_carry_tick() {
        let m = ProcessModel::new(
            1,
            |x| x.map(|v| if v > 10.0 { f64::NAN } else { v * 4.0 }),
            |x| x.clone(),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1e-6),
        )
        .unwrap();
        let samples: Vec<(u64, f64)> = (0..10)
            .map(|t| (100 + t, 4f64.powi(t as i32 + 1)))
            .collect();
        let trace = Trace::from_samples("n", crate::trace::SensorKind::Pressure, &samples).unwrap();
        let err = run_filter(&m, &FilterState::scalar(1.0, 1.0).unwrap(), &trace).unwrap_err();
        assert!(matches!(err, EkfError::AtTick { tick, .. } if tick > 100));
    }

    #[test]
    fn csv_output_has_one_row_per_step() {
        let m = ProcessModel::random_walk(0.1, 0.1).unwrap();
        let trace = Trace::from_samples(
            "n",
            crate::trace::SensorKind::Temperature,
            &[(0, 1.0), (1, 1.5), (2, 0.5)],
        )
        .unwrap();
        let steps = run_filter(&m, &FilterState::scalar(1.0, 1.0).unwrap(), &trace).unwrap();
        let mut buf = Vec::new();
        write_estimates_csv(&steps, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tick,measurement,estimate,variance");
        assert_eq!(lines.len(), 4);
    }
}
