//! Small reference plants used throughout tests, benches and the CLI.

use nalgebra::DMatrix;

use crate::model::SystemModel;

/// Sampling period of the vehicle-trajectory plant, seconds.
pub const VTF_SAMPLING_PERIOD: f64 = 0.01;
/// Element-wise bound of the uniform process and measurement noise.
pub const VTF_NOISE_HALF_WIDTH: f64 = 0.05;

/// Scalar-output plant with stable `A = [[.3, 1], [0, .5]]`, `C = [1, 0]`.
pub fn scalar_plant(window: usize, delta_w: f64) -> SystemModel {
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.0, 0.5]),
        DMatrix::zeros(2, 1),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        delta_w,
        window,
    )
    .expect("plant is observable for N >= 2")
}

/// Discretised double integrator (position, velocity) with one position and
/// two velocity sensors, window 2.
pub fn vtf(delta_w: f64) -> SystemModel {
    let dt = VTF_SAMPLING_PERIOD;
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[dt * dt, dt]),
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]),
        delta_w,
        2,
    )
    .expect("vehicle plant is observable")
}

/// Conservative per-step noise bound for a plant driven by element-wise
/// uniform noise of half-width `h` on every state and output.
pub fn uniform_delta_w(model: &SystemModel, half_width: f64) -> f64 {
    let n = model.state_dim() as f64;
    let p = model.sensor_count() as f64;
    delta_w_bound(model, half_width * p.sqrt(), half_width * n.sqrt())
}

/// `delta_vM + ||C|| * sum_{j <= N-2} ||A^j|| * delta_vP`: worst-case norm of the
/// per-step window noise once the process noise entering inside the window
/// is folded into the output.
pub fn delta_w_bound(model: &SystemModel, delta_vm: f64, delta_vp: f64) -> f64 {
    let c_norm = crate::linalg::norm2(model.c());
    let n = model.window();
    let spread: f64 = (0..n.saturating_sub(1))
        .map(|j| crate::linalg::norm2(&model.a_pow(j)))
        .sum();
    delta_vm + c_norm * spread * delta_vp
}

/// Vehicle plant with the noise bound implied by `U(-.05, .05)` noise.
pub fn vtf_default() -> SystemModel {
    let base = vtf(0.0);
    let dw = uniform_delta_w(&base, VTF_NOISE_HALF_WIDTH);
    base.with_delta_w(dw).expect("finite bound")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vtf_default_bound() {
        let m = vtf_default();
        let expected = 0.05 * 3f64.sqrt() + 2f64.sqrt() * 0.05 * 2f64.sqrt();
        assert!((m.delta_w() - expected).abs() < 1e-12);
    }
}
