//! Tracks a damped pendulum from noisy horizontal-position readings. The
//! dynamics use an analytic Jacobian; the observation `sin(theta)` relies on
//! the built-in central differences.
//!
//! cargo run --example ekf_nonlinear

use nalgebra::{DMatrix, DVector};
use pipeline_fusion::ekf::{numeric_jacobian, predict, update, FilterState, ProcessModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DT: f64 = 0.05;
const G_OVER_L: f64 = 9.81;
const DAMPING: f64 = 0.2;

fn step(x: &DVector<f64>) -> DVector<f64> {
    let (theta, omega) = (x[0], x[1]);
    DVector::from_vec(vec![
        theta + DT * omega,
        omega - DT * (G_OVER_L * theta.sin() + DAMPING * omega),
    ])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ProcessModel::new(
        2,
        step,
        |x| DVector::from_element(1, x[0].sin()),
        DMatrix::from_diagonal(&DVector::from_vec(vec![1e-6, 1e-4])),
        DMatrix::from_element(1, 1, 0.05f64.powi(2)),
    )?
    .with_transition_jacobian(|x| {
        DMatrix::from_row_slice(
            2,
            2,
            &[1.0, DT, -DT * G_OVER_L * x[0].cos(), 1.0 - DT * DAMPING],
        )
    });

    let at = DVector::from_vec(vec![0.4, -0.3]);
    let numeric = numeric_jacobian(&step, &at, 1e-6)?;
    let analytic = model.transition_jacobian(&at)?;
    println!(
        "max Jacobian disagreement {:.2e}",
        (numeric - analytic).abs().max()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.05)?;
    let mut truth = DVector::from_vec(vec![0.8, 0.0]);
    let mut state = FilterState::new(
        DVector::from_vec(vec![0.0, 0.0]),
        DMatrix::identity(2, 2),
        0,
    )?;
    println!("{:>5} {:>9} {:>9} {:>9}", "tick", "theta", "estimate", "sd");
    for k in 1..=120u64 {
        truth = step(&truth);
        let y = DVector::from_element(1, truth[0].sin() + noise.sample(&mut rng));
        state = update(&predict(&state, &model)?, &y, &model)?;
        if k % 10 == 0 {
            println!(
                "{:>5} {:>9.4} {:>9.4} {:>9.4}",
                k,
                truth[0],
                state.x_hat[0],
                state.covariance[(0, 0)].sqrt()
            );
        }
    }
    Ok(())
}
