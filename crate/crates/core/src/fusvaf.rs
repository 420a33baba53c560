//! Fuzzy sensor validation and fusion.
//!
//! Every measurement `z` gets a confidence `sigma(z)` in `[0, 1]` from a
//! piecewise bell-shaped validation gate centred on a prediction `x_hat`:
//!
//! ```text
//!             0                                                  z <= v_l
//! sigma(z) =  (e^-((x-z)/a_l)^2 - e^-((x-v_l)/a_l)^2) / (1 - e^-((x-v_l)/a_l)^2)   v_l < z <= x
//!             (e^-((x-z)/a_r)^2 - e^-((x-v_r)/a_r)^2) / (1 - e^-((x-v_r)/a_r)^2)   x < z <= v_r
//!             0                                                  z > v_r
//! ```
//!
//! The fused value is the confidence-weighted mean of the measurements with
//! the prediction added as one more term of weight `alpha / omega`.
//!
//! After each tick the gate is re-centred on the next prediction and its
//! half-width is set from the median absolute residual over a sliding window
//! (see [`GateAdaptation`]).

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ekf::{self, EkfError, FilterState, ProcessModel};
use crate::trace::{NodeId, Trace, TraceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusvafError {
    #[error("invalid validation gate: {0}")]
    InvalidGate(String),
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
    #[error("no information to fuse: all measurements invalidated and alpha = 0")]
    DegenerateDenominator,
    #[error("residual window is empty")]
    EmptyResiduals,
    #[error("prediction {0} is not finite")]
    NonFinitePrediction(f64),
    #[error("no measurements and no prediction available")]
    NoData,
    #[error("no input traces")]
    NoTraces,
    #[error("trace error: {0}")]
    Trace(String),
    #[error("predictor failed: {0}")]
    Predictor(#[from] EkfError),
    #[error("at tick {tick}: {source}")]
    AtTick {
        tick: u64,
        #[source]
        source: Box<FusvafError>,
    },
}

impl From<TraceError> for FusvafError {
    fn from(e: TraceError) -> Self {
        FusvafError::Trace(e.to_string())
    }
}

/// Prediction `x_hat`, boundaries `v_l < x_hat < v_r` and shape parameters
/// `a_l, a_r > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationGate {
    x_hat: f64,
    v_l: f64,
    v_r: f64,
    a_l: f64,
    a_r: f64,
}

impl ValidationGate {
    pub fn new(x_hat: f64, v_l: f64, v_r: f64, a_l: f64, a_r: f64) -> Result<Self, FusvafError> {
        if ![x_hat, v_l, v_r, a_l, a_r].iter().all(|v| v.is_finite()) {
            return Err(FusvafError::InvalidGate("non-finite parameter".into()));
        }
        if !(v_l < x_hat && x_hat < v_r) {
            return Err(FusvafError::InvalidGate(format!(
                "need v_l < x_hat < v_r, got {v_l} / {x_hat} / {v_r}"
            )));
        }
        if !(a_l > 0.0 && a_r > 0.0) {
            return Err(FusvafError::InvalidGate(format!(
                "shape parameters must be positive, got a_l={a_l} a_r={a_r}"
            )));
        }
        Ok(Self {
            x_hat,
            v_l,
            v_r,
            a_l,
            a_r,
        })
    }

    /// Gate `[x_hat - w, x_hat + w]` with `a_l = a_r = w / 2`.
    pub fn symmetric(x_hat: f64, half_width: f64) -> Result<Self, FusvafError> {
        Self::new(
            x_hat,
            x_hat - half_width,
            x_hat + half_width,
            half_width / 2.0,
            half_width / 2.0,
        )
    }

    pub fn x_hat(&self) -> f64 {
        self.x_hat
    }
    pub fn v_l(&self) -> f64 {
        self.v_l
    }
    pub fn v_r(&self) -> f64 {
        self.v_r
    }
    pub fn a_l(&self) -> f64 {
        self.a_l
    }
    pub fn a_r(&self) -> f64 {
        self.a_r
    }

    /// `v_r - v_l`.
    pub fn width(&self) -> f64 {
        self.v_r - self.v_l
    }

    pub fn confidence(&self, z: f64) -> f64 {
        confidence(self, z)
    }
}

/// One side of the gate: `(e^-u^2 - e^-b^2) / (1 - e^-b^2)` with
/// `u = d_z / a` and `b = d_v / a`, where `d_z = |x_hat - z| <= d_v = |x_hat - v|`.
fn bell_side(d_z: f64, d_v: f64, a: f64) -> f64 {
    let u = d_z / a;
    let b = d_v / a;
    // Rewritten with expm1 so that narrow gates (b -> 0) keep full precision:
    // numerator = e^-u^2 (1 - e^-(b^2 - u^2)), denominator = 1 - e^-b^2.
    let denom = -(-b * b).exp_m1();
    if denom == 0.0 {
        // b^2 underflowed; the ratio tends to 1 - (u/b)^2 = 1 - (d_z/d_v)^2.
        let r = d_z / d_v;
        return (1.0 - r * r).clamp(0.0, 1.0);
    }
    let gap = (b - u) * (b + u);
    let num = (-u * u).exp() * -(-gap).exp_m1();
    (num / denom).clamp(0.0, 1.0)
}

/// Confidence of measurement `z` under `gate`; 0 at and beyond both
/// boundaries, 1 at the prediction.
pub fn confidence(gate: &ValidationGate, z: f64) -> f64 {
    if !z.is_finite() || z <= gate.v_l || z >= gate.v_r {
        0.0
    } else if z <= gate.x_hat {
        bell_side(gate.x_hat - z, gate.x_hat - gate.v_l, gate.a_l)
    } else {
        bell_side(z - gate.x_hat, gate.v_r - gate.x_hat, gate.a_r)
    }
}

/// Weight `alpha` of the prediction and the constant scaling `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    alpha: f64,
    omega: f64,
}

impl FusionParams {
    pub fn new(alpha: f64, omega: f64) -> Result<Self, FusvafError> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(FusvafError::InvalidParams(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(FusvafError::InvalidParams(format!(
                "omega must be finite and > 0, got {omega}"
            )));
        }
        Ok(Self { alpha, omega })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self, FusvafError> {
        Self::new(alpha, self.omega)
    }
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            omega: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub value: f64,
    /// Confidence of each input, in input order.
    pub confidences: Vec<f64>,
    /// `sum sigma_i + alpha / omega`.
    pub total_weight: f64,
}

/// Fused estimate of `measurements`; see [`fuse_detailed`].
pub fn fuse(
    gate: &ValidationGate,
    params: &FusionParams,
    measurements: &[f64],
) -> Result<f64, FusvafError> {
    fuse_detailed(gate, params, measurements).map(|f| f.value)
}

/// `(sum z_i sigma_i + alpha x_hat / omega) / (sum sigma_i + alpha / omega)`.
///
/// Sums run over the measurements in sorted order so the result does not
/// depend on input order. The result is clamped to the hull of the terms that
/// carry weight, which it can only leave through rounding.
pub fn fuse_detailed(
    gate: &ValidationGate,
    params: &FusionParams,
    measurements: &[f64],
) -> Result<Fused, FusvafError> {
    let confidences: Vec<f64> = measurements.iter().map(|&z| confidence(gate, z)).collect();

    let mut order: Vec<usize> = (0..measurements.len()).collect();
    order.sort_by(|&a, &b| measurements[a].total_cmp(&measurements[b]));

    let prior_weight = params.alpha / params.omega;
    let mut num = 0.0;
    let mut den = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in &order {
        let s = confidences[i];
        if s > 0.0 {
            num += measurements[i] * s;
            den += s;
            lo = lo.min(measurements[i]);
            hi = hi.max(measurements[i]);
        }
    }
    if prior_weight > 0.0 {
        num += prior_weight * gate.x_hat;
        den += prior_weight;
        lo = lo.min(gate.x_hat);
        hi = hi.max(gate.x_hat);
    }
    if den <= 0.0 {
        return Err(FusvafError::DegenerateDenominator);
    }
    Ok(Fused {
        value: (num / den).clamp(lo, hi),
        confidences,
        total_weight: den,
    })
}

/// Median-absolute-residual gate rule: half-width
/// `w = clamp(k_sigma * median|r|, w_min, w_max)`, shape `a = w / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateAdaptation {
    pub k_sigma: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for GateAdaptation {
    fn default() -> Self {
        Self {
            k_sigma: 3.0,
            w_min: 0.1,
            w_max: 100.0,
        }
    }
}

impl GateAdaptation {
    pub fn validate(&self) -> Result<(), FusvafError> {
        if !(self.k_sigma > 0.0 && self.k_sigma.is_finite()) {
            return Err(FusvafError::InvalidParams(
                "k_sigma must be positive".into(),
            ));
        }
        if !(self.w_min > 0.0 && self.w_min <= self.w_max && self.w_max.is_finite()) {
            return Err(FusvafError::InvalidParams(
                "need 0 < w_min <= w_max < inf".into(),
            ));
        }
        Ok(())
    }

    pub fn half_width(&self, residuals: &[f64]) -> Result<f64, FusvafError> {
        let s = median_abs(residuals).ok_or(FusvafError::EmptyResiduals)?;
        Ok((self.k_sigma * s).clamp(self.w_min, self.w_max))
    }

    /// New gate centred on `new_prediction`, sized from `residuals`.
    pub fn adapt(
        &self,
        residuals: &[f64],
        new_prediction: f64,
    ) -> Result<ValidationGate, FusvafError> {
        if !new_prediction.is_finite() {
            return Err(FusvafError::NonFinitePrediction(new_prediction));
        }
        ValidationGate::symmetric(new_prediction, self.half_width(residuals)?)
    }
}

/// Re-centres `gate` on `new_prediction` with a width derived from
/// `recent_residuals`. The previous gate's width plays no role.
pub fn adapt_gate(
    _gate: &ValidationGate,
    recent_residuals: &[f64],
    new_prediction: f64,
    rule: &GateAdaptation,
) -> Result<ValidationGate, FusvafError> {
    rule.adapt(recent_residuals, new_prediction)
}

fn median_abs(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values
        .iter()
        .map(|x| x.abs())
        .filter(|x| !x.is_nan())
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

/// Source of the gate centre for the next tick.
pub trait Predictor: Send {
    /// Prediction for the upcoming tick, or `None` before the first fused value.
    fn predict(&mut self) -> Result<Option<f64>, FusvafError>;
    /// Feeds back the fused value of the tick just processed.
    fn correct(&mut self, fused: f64) -> Result<(), FusvafError>;
}

/// Scalar random-walk EKF tracking the fused value.
#[derive(Debug, Clone)]
pub struct EkfPredictor {
    model: ProcessModel,
    posterior: Option<FilterState>,
    prior: Option<FilterState>,
    initial_variance: f64,
}

impl EkfPredictor {
    pub fn new(q: f64, r: f64) -> Result<Self, FusvafError> {
        Ok(Self {
            model: ProcessModel::random_walk(q, r)?,
            posterior: None,
            prior: None,
            initial_variance: r,
        })
    }
}

impl Predictor for EkfPredictor {
    fn predict(&mut self) -> Result<Option<f64>, FusvafError> {
        match &self.posterior {
            None => Ok(None),
            Some(post) => {
                let prior = ekf::predict(post, &self.model)?;
                let x = prior.x_hat[0];
                self.prior = Some(prior);
                Ok(Some(x))
            }
        }
    }

    fn correct(&mut self, fused: f64) -> Result<(), FusvafError> {
        self.posterior = Some(match self.prior.take() {
            Some(prior) => ekf::update(&prior, &DVector::from_element(1, fused), &self.model)?,
            None => FilterState::scalar(fused, self.initial_variance)?,
        });
        Ok(())
    }
}

/// Two-state `[level, rate]` Kalman filter tracking the fused value. Follows
/// ramps without the steady lag of a random walk.
#[derive(Debug, Clone)]
pub struct ConstantVelocityPredictor {
    model: ProcessModel,
    posterior: Option<FilterState>,
    prior: Option<FilterState>,
    r: f64,
}

impl ConstantVelocityPredictor {
    /// `q_level` and `q_rate` are the process-noise variances of the two
    /// states, `r` the variance of the fused value.
    pub fn new(q_level: f64, q_rate: f64, r: f64) -> Result<Self, FusvafError> {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![q_level, q_rate]));
        let model = ProcessModel::linear(a, h, q, DMatrix::from_element(1, 1, r))?;
        Ok(Self {
            model,
            posterior: None,
            prior: None,
            r,
        })
    }
}

impl Predictor for ConstantVelocityPredictor {
    fn predict(&mut self) -> Result<Option<f64>, FusvafError> {
        match &self.posterior {
            None => Ok(None),
            Some(post) => {
                let prior = ekf::predict(post, &self.model)?;
                let x = prior.x_hat[0];
                self.prior = Some(prior);
                Ok(Some(x))
            }
        }
    }

    fn correct(&mut self, fused: f64) -> Result<(), FusvafError> {
        self.posterior = Some(match self.prior.take() {
            Some(prior) => ekf::update(&prior, &DVector::from_element(1, fused), &self.model)?,
            None => FilterState::new(
                DVector::from_vec(vec![fused, 0.0]),
                DMatrix::from_diagonal(&DVector::from_vec(vec![self.r, 1.0])),
                0,
            )?,
        });
        Ok(())
    }
}

/// Exponential smoothing `level <- beta * fused + (1 - beta) * level`.
#[derive(Debug, Clone)]
pub struct SmoothingPredictor {
    beta: f64,
    level: Option<f64>,
}

impl SmoothingPredictor {
    pub fn new(beta: f64) -> Result<Self, FusvafError> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(FusvafError::InvalidParams(format!(
                "smoothing factor must lie in (0, 1], got {beta}"
            )));
        }
        Ok(Self { beta, level: None })
    }
}

impl Default for SmoothingPredictor {
    fn default() -> Self {
        Self {
            beta: 0.5,
            level: None,
        }
    }
}

impl Predictor for SmoothingPredictor {
    fn predict(&mut self) -> Result<Option<f64>, FusvafError> {
        Ok(self.level)
    }

    fn correct(&mut self, fused: f64) -> Result<(), FusvafError> {
        self.level = Some(match self.level {
            None => fused,
            Some(l) => self.beta * fused + (1.0 - self.beta) * l,
        });
        Ok(())
    }
}

/// How `alpha` evolves from tick to tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    /// Fixed `alpha`.
    Constant(f64),
    /// `alpha = max(sum of confidences at the previous tick, floor)`; the
    /// first tick uses the configured initial alpha.
    PreviousConfidenceSum { floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusvafConfig {
    /// Initial `alpha` and the constant `omega`.
    pub params: FusionParams,
    pub alpha_policy: AlphaPolicy,
    pub adaptation: GateAdaptation,
    /// Number of ticks kept in the residual window; also the warm-up length.
    pub window: usize,
    /// Half-width of the gate during warm-up.
    pub initial_half_width: f64,
}

impl Default for FusvafConfig {
    fn default() -> Self {
        Self {
            params: FusionParams::default(),
            alpha_policy: AlphaPolicy::PreviousConfidenceSum { floor: 1e-3 },
            adaptation: GateAdaptation::default(),
            window: 10,
            initial_half_width: 10.0,
        }
    }
}

impl FusvafConfig {
    pub fn validate(&self) -> Result<(), FusvafError> {
        self.adaptation.validate()?;
        if self.window == 0 {
            return Err(FusvafError::InvalidParams("window must be >= 1".into()));
        }
        if !(self.initial_half_width > 0.0 && self.initial_half_width.is_finite()) {
            return Err(FusvafError::InvalidParams(
                "initial half-width must be positive".into(),
            ));
        }
        match self.alpha_policy {
            AlphaPolicy::Constant(a) => {
                self.params.with_alpha(a)?;
            }
            AlphaPolicy::PreviousConfidenceSum { floor } => {
                if !(floor >= 0.0 && floor.is_finite()) {
                    return Err(FusvafError::InvalidParams(
                        "alpha floor must be >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Output of one tick of a [`FusvafStream`].
#[derive(Debug, Clone, PartialEq)]
pub struct StreamStep {
    pub tick: u64,
    pub fused: f64,
    pub prediction: f64,
    pub gate: ValidationGate,
    pub alpha: f64,
    /// True while the gate still uses its initial width.
    pub warmup: bool,
    /// `(z, sigma)` per input slot; `None` where the slot had no reading.
    pub inputs: Vec<Option<(f64, f64)>>,
}

impl StreamStep {
    /// Values with non-zero confidence.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.inputs
            .iter()
            .flatten()
            .filter(|(_, s)| *s > 0.0)
            .map(|(z, _)| *z)
    }
}

/// Stateful predict / validate / fuse / adapt loop over a fixed set of input
/// slots.
pub struct FusvafStream {
    config: FusvafConfig,
    predictor: Box<dyn Predictor>,
    residuals: VecDeque<Vec<f64>>,
    ticks_seen: usize,
    last_confidence_sum: Option<f64>,
    lock_lost: bool,
}

impl FusvafStream {
    pub fn new(config: FusvafConfig, predictor: Box<dyn Predictor>) -> Result<Self, FusvafError> {
        config.validate()?;
        Ok(Self {
            config,
            predictor,
            residuals: VecDeque::new(),
            ticks_seen: 0,
            last_confidence_sum: None,
            lock_lost: false,
        })
    }

    /// Default configuration with the EKF predictor at `q = r = 0.1`.
    pub fn with_defaults() -> Self {
        Self::new(
            FusvafConfig::default(),
            Box::new(EkfPredictor::new(0.1, 0.1).expect("valid default noise")),
        )
        .expect("valid default config")
    }

    pub fn config(&self) -> &FusvafConfig {
        &self.config
    }

    fn alpha(&self) -> f64 {
        match self.config.alpha_policy {
            AlphaPolicy::Constant(a) => a,
            AlphaPolicy::PreviousConfidenceSum { floor } => match self.last_confidence_sum {
                None => self.config.params.alpha(),
                Some(s) => s.max(floor),
            },
        }
    }

    pub fn step(&mut self, tick: u64, values: &[Option<f64>]) -> Result<StreamStep, FusvafError> {
        self.step_inner(values)
            .map_err(|e| FusvafError::AtTick {
                tick,
                source: Box::new(e),
            })
            .map(|mut s| {
                s.tick = tick;
                s
            })
    }

    fn step_inner(&mut self, values: &[Option<f64>]) -> Result<StreamStep, FusvafError> {
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let prediction = match self.predictor.predict()? {
            Some(p) => p,
            None => median(&present).ok_or(FusvafError::NoData)?,
        };
        if !prediction.is_finite() {
            return Err(FusvafError::NonFinitePrediction(prediction));
        }

        // Losing lock ends warm-up early; the fixed initial gate would never
        // re-acquire a signal that left it.
        let warmup =
            (self.ticks_seen < self.config.window && !self.lock_lost) || self.residuals.is_empty();
        let gate = if warmup {
            ValidationGate::symmetric(prediction, self.config.initial_half_width)?
        } else {
            let flat: Vec<f64> = self.residuals.iter().flatten().copied().collect();
            self.config.adaptation.adapt(&flat, prediction)?
        };

        let alpha = self.alpha();
        let params = self.config.params.with_alpha(alpha)?;
        let fused = fuse_detailed(&gate, &params, &present)?;

        let mut inputs = Vec::with_capacity(values.len());
        let mut conf = fused.confidences.iter();
        for v in values {
            inputs.push(v.map(|z| (z, *conf.next().expect("one confidence per value"))));
        }

        // Only validated readings feed the width estimate, so a stuck or
        // faulty sensor cannot widen the gate around itself. When nothing was
        // validated the lock is lost: the window restarts from this tick's
        // residuals so the next gate is wide enough to re-acquire.
        let any_valid = fused.confidences.iter().any(|&s| s > 0.0);
        if !any_valid && !present.is_empty() {
            self.residuals.clear();
            self.lock_lost = true;
        }
        let tick_residuals: Vec<f64> = present
            .iter()
            .zip(&fused.confidences)
            .filter(|(_, &s)| !any_valid || s > 0.0)
            .map(|(z, _)| (z - fused.value).abs())
            .collect();
        self.residuals.push_back(tick_residuals);
        while self.residuals.len() > self.config.window {
            self.residuals.pop_front();
        }
        self.last_confidence_sum = Some(fused.confidences.iter().sum());
        self.ticks_seen += 1;
        self.predictor.correct(fused.value)?;

        Ok(StreamStep {
            tick: 0,
            fused: fused.value,
            prediction,
            gate,
            alpha,
            warmup,
            inputs,
        })
    }
}

/// Fuses time-aligned same-kind traces tick by tick. Input slot `i` of every
/// emitted step corresponds to `traces[i]`.
pub fn fusvaf_stream(
    traces: &[Trace],
    config: FusvafConfig,
    predictor: Box<dyn Predictor>,
) -> Result<Vec<StreamStep>, FusvafError> {
    if traces.is_empty() {
        return Err(FusvafError::NoTraces);
    }
    let kind = traces[0].sensor_kind();
    if let Some(other) = traces.iter().find(|t| t.sensor_kind() != kind) {
        return Err(TraceError::MixedSensorKinds(kind, other.sensor_kind()).into());
    }
    let mut aligned: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
    for (slot, trace) in traces.iter().enumerate() {
        for m in trace.readings() {
            aligned
                .entry(m.timestamp)
                .or_insert_with(|| vec![None; traces.len()])[slot] = Some(m.value);
        }
    }
    let mut stream = FusvafStream::new(config, predictor)?;
    let mut out = Vec::with_capacity(aligned.len());
    for (tick, slots) in &aligned {
        out.push(stream.step(*tick, slots)?);
    }
    Ok(out)
}

/// Writes `tick,fused,pred,z_1,sigma_1,...,z_n,sigma_n`; absent readings
/// leave empty cells.
pub fn write_stream_csv<W: Write>(
    steps: &[StreamStep],
    slots: usize,
    writer: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["tick".to_string(), "fused".into(), "pred".into()];
    for i in 1..=slots {
        header.push(format!("z_{i}"));
        header.push(format!("sigma_{i}"));
    }
    w.write_record(&header)?;
    for s in steps {
        let mut row = vec![
            s.tick.to_string(),
            s.fused.to_string(),
            s.prediction.to_string(),
        ];
        for i in 0..slots {
            match s.inputs.get(i).copied().flatten() {
                Some((z, sigma)) => {
                    row.push(z.to_string());
                    row.push(sigma.to_string());
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Node ids in slot order, for labelling CSV columns.
pub fn slot_labels(traces: &[Trace]) -> Vec<NodeId> {
    traces.iter().map(|t| t.node_id().clone()).collect()
}
