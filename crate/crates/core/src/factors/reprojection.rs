use nalgebra::{Matrix2x3, SMatrix, Vector2};

use super::{FactorError, Observation, PinholeCamera};
use crate::lie::{hat, Vec3};
use crate::state::{Extrinsics, StateVector};

pub type Mat2x6 = SMatrix<f64, 2, 6>;

/// `ᶜp = R_CB(R_BW·ᵂp + t) + t_CB`
pub fn point_in_camera(x: &StateVector, p_w: &Vec3, extr: &Extrinsics) -> Vec3 {
    extr.r_cb * (x.rot_bw() * p_w + x.t) + extr.t_cb
}

/// `π(ᶜp) − ū`, in pixels.
pub fn reprojection_residual(
    x: &StateVector,
    p_w: &Vec3,
    obs: &Observation,
    extr: &Extrinsics,
    cam: &PinholeCamera,
) -> Result<Vector2<f64>, FactorError> {
    Ok(cam.project(&point_in_camera(x, p_w, extr))? - obs.u)
}

/// Jacobians of the reprojection residual w.r.t. `[δφ, δt]` and `δᵂp`.
pub fn reprojection_jacobian(
    x: &StateVector,
    p_w: &Vec3,
    extr: &Extrinsics,
    cam: &PinholeCamera,
) -> Result<(Mat2x6, Matrix2x3<f64>), FactorError> {
    let r_bw = x.rot_bw();
    let p_c = point_in_camera(x, p_w, extr);
    let d_pi = cam.project_jacobian(&p_c)?;
    let r_cb = extr.r_cb.matrix();
    let d_phi = -r_cb * r_bw.matrix() * hat(p_w);
    let mut j_pose = Mat2x6::zeros();
    j_pose.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_pi * d_phi));
    j_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(d_pi * r_cb));
    let j_point = d_pi * r_cb * r_bw.matrix();
    Ok((j_pose, j_point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::ImuBias;
    use crate::lie::Rotation;
    use approx::assert_relative_eq;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn at(position: Vec3) -> StateVector {
        StateVector::from_world_pose(&Rotation::identity(), &position, Vec3::zeros(), ImuBias::zero(), 0.0)
    }

    #[test]
    fn zero_for_consistent_measurement() {
        let x = StateVector::from_world_pose(
            &Rotation::exp(&Vec3::new(0.1, -0.3, 0.2)),
            &Vec3::new(0.4, 0.2, -0.1),
            Vec3::zeros(),
            ImuBias::zero(),
            0.0,
        );
        let extr = Extrinsics::identity();
        let p_w = x.rot_wb() * Vec3::new(0.3, -0.2, 3.0) + x.position();
        let u = cam().project(&point_in_camera(&x, &p_w, &extr)).unwrap();
        let obs = Observation::isotropic(u, 1.0, 0, 0);
        let e = reprojection_residual(&x, &p_w, &obs, &extr, &cam()).unwrap();
        assert!(e.norm() < 1e-10);
    }

    #[test]
    fn translated_camera_shifts_pixel() {
        let p_w = Vec3::new(0.0, 0.0, 2.0);
        let obs = Observation::isotropic(Vector2::new(320.0, 240.0), 1.0, 0, 0);
        let e = reprojection_residual(&at(Vec3::new(0.1, 0.0, 0.0)), &p_w, &obs, &Extrinsics::identity(), &cam()).unwrap();
        // hand projection: x_C = −0.1, z = 2 → −400·0.1/2
        assert_relative_eq!(e.x, -20.0, epsilon = 1e-12);
        assert_relative_eq!(e.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn measurement_shift_is_linear() {
        let x = at(Vec3::new(0.05, 0.1, 0.0));
        let p_w = Vec3::new(0.2, -0.3, 2.5);
        let mut obs = Observation::isotropic(Vector2::new(300.0, 200.0), 1.0, 0, 0);
        let e0 = reprojection_residual(&x, &p_w, &obs, &Extrinsics::identity(), &cam()).unwrap();
        obs.u.x += 1.0;
        let e1 = reprojection_residual(&x, &p_w, &obs, &Extrinsics::identity(), &cam()).unwrap();
        assert_relative_eq!(e1 - e0, Vector2::new(-1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_propagates() {
        let obs = Observation::isotropic(Vector2::zeros(), 1.0, 0, 0);
        let r = reprojection_residual(&at(Vec3::zeros()), &Vec3::new(0.0, 0.0, -1.0), &obs, &Extrinsics::identity(), &cam());
        assert!(matches!(r, Err(FactorError::BehindCamera { .. })));
        assert!(reprojection_jacobian(&at(Vec3::zeros()), &Vec3::new(0.0, 0.0, -1.0), &Extrinsics::identity(), &cam()).is_err());
    }
}
