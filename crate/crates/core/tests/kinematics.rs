use cobot_core::kinematics::{
    forward_kinematics, jacobian, null_projector, point_jacobian, pseudo_inverse, JacobianKind, Joint, KinematicsError,
    RobotModel, TaskSpace,
};
use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;

type Mat4 = [[f64; 4]; 4];

fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn translation(v: [f64; 3]) -> Mat4 {
    [[1.0, 0.0, 0.0, v[0]], [0.0, 1.0, 0.0, v[1]], [0.0, 0.0, 1.0, v[2]], [0.0, 0.0, 0.0, 1.0]]
}

/// Rodrigues' formula written out entry by entry.
fn rotation(axis: [f64; 3], angle: f64) -> Mat4 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y, 0.0],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x, 0.0],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn brute_force_tool(model: &RobotModel, q: &[f64]) -> Mat4 {
    let mut t = translation([0.0; 3]);
    for (joint, &angle) in model.joints().iter().zip(q) {
        t = mul(&t, &translation([joint.offset.x, joint.offset.y, joint.offset.z]));
        t = mul(&t, &rotation([joint.axis.x, joint.axis.y, joint.axis.z], angle));
    }
    let tool = model.tool_offset();
    mul(&t, &translation([tool.x, tool.y, tool.z]))
}

fn arm() -> RobotModel {
    let z = Vector3::z_axis();
    let y = Vector3::y_axis();
    let joints = vec![
        Joint { axis: z, offset: Vector3::new(0.0, 0.0, 0.333) },
        Joint { axis: y, offset: Vector3::zeros() },
        Joint { axis: z, offset: Vector3::zeros() },
        Joint { axis: y, offset: Vector3::new(0.0, 0.0, 0.316) },
        Joint { axis: z, offset: Vector3::new(0.0, 0.0, 0.384) },
        Joint { axis: y, offset: Vector3::zeros() },
        Joint { axis: z, offset: Vector3::zeros() },
    ];
    RobotModel::new(joints, vec![[-2.9, 2.9]; 7], Vector3::new(0.0, 0.0, 0.2), TaskSpace::Spatial).unwrap()
}

/// A chain with skewed axes and offsets in every direction.
fn skewed() -> RobotModel {
    let joints = vec![
        Joint { axis: nalgebra::Unit::new_normalize(Vector3::new(0.2, 0.1, 1.0)), offset: Vector3::new(0.1, 0.0, 0.3) },
        Joint { axis: nalgebra::Unit::new_normalize(Vector3::new(0.0, 1.0, 0.3)), offset: Vector3::new(0.0, 0.05, 0.1) },
        Joint { axis: nalgebra::Unit::new_normalize(Vector3::new(1.0, 0.0, 0.0)), offset: Vector3::new(0.25, 0.0, 0.0) },
        Joint { axis: nalgebra::Unit::new_normalize(Vector3::new(0.3, -1.0, 0.2)), offset: Vector3::new(0.0, 0.2, 0.1) },
        Joint { axis: nalgebra::Unit::new_normalize(Vector3::new(0.0, 0.0, 1.0)), offset: Vector3::new(0.1, 0.1, 0.1) },
        Joint { axis: nalgebra::Unit::new_normalize(Vector3::new(1.0, 1.0, 0.0)), offset: Vector3::new(0.0, 0.0, 0.2) },
        Joint { axis: nalgebra::Unit::new_normalize(Vector3::new(0.1, 0.0, 1.0)), offset: Vector3::new(0.05, 0.0, 0.0) },
    ];
    RobotModel::new(joints, vec![[-3.0, 3.0]; 7], Vector3::new(0.0, 0.1, 0.15), TaskSpace::Spatial).unwrap()
}

fn q_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.5f64..2.5, 7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fk_matches_matrix_product(q in q_strategy()) {
        for model in [arm(), skewed()] {
            let pose = forward_kinematics(&model, &q).unwrap();
            let t = brute_force_tool(&model, &q);
            let r = pose.p.to_rotation_matrix();
            for i in 0..3 {
                prop_assert!((pose.r_t[i] - t[i][3]).abs() < 1e-12);
                for j in 0..3 {
                    prop_assert!((r[(i, j)] - t[i][j]).abs() < 1e-12);
                }
            }
            prop_assert!(pose.p.w >= 0.0);
            prop_assert!((nalgebra::UnitQuaternion::from_scaled_axis(pose.r_o).angle_to(&pose.p)).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_jacobian_matches_finite_differences(q in q_strategy()) {
        let model = skewed();
        let j = jacobian(&model, &q, JacobianKind::Geometric).unwrap();
        let h = 1e-6;
        for c in 0..7 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let (tp, tm) = (brute_force_tool(&model, &qp), brute_force_tool(&model, &qm));
            for i in 0..3 {
                prop_assert!(((tp[i][3] - tm[i][3]) / (2.0 * h) - j[(i, c)]).abs() < 1e-7);
            }
            // omega^ = R_dot R^T
            let t0 = brute_force_tool(&model, &q);
            let mut w = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    for k in 0..3 {
                        w[a][b] += (tp[a][k] - tm[a][k]) / (2.0 * h) * t0[b][k];
                    }
                }
            }
            let omega = [w[2][1], w[0][2], w[1][0]];
            for i in 0..3 {
                prop_assert!((omega[i] - j[(3 + i, c)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn analytic_jacobian_matches_rotation_vector_rates(q in q_strategy()) {
        let model = skewed();
        let r_o = forward_kinematics(&model, &q).unwrap().r_o;
        prop_assume!(r_o.norm() > 0.05 && r_o.norm() < 3.0);
        let j = jacobian(&model, &q, JacobianKind::Analytic).unwrap();
        let h = 1e-6;
        for c in 0..7 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let dr = (forward_kinematics(&model, &qp).unwrap().r_o - forward_kinematics(&model, &qm).unwrap().r_o) / (2.0 * h);
            for i in 0..3 {
                prop_assert!((dr[i] - j[(3 + i, c)]).abs() < 1e-6 * (1.0 + dr.norm()), "col {c}: {dr:?}");
            }
        }
    }

    #[test]
    fn projector_identities(q in q_strategy()) {
        let model = arm();
        let j = jacobian(&model, &q, JacobianKind::Geometric).unwrap();
        let sv = j.clone().svd(false, false).singular_values;
        prop_assume!(sv.min() > 1e-3);
        let jp = pseudo_inverse(&j, 1e-8).unwrap();
        let n = null_projector(&j, 1e-8).unwrap();
        prop_assert!((&j * &jp - DMatrix::identity(6, 6)).amax() < 1e-9);
        prop_assert!((&j * &n).amax() < 1e-9);
        prop_assert!((&n * &n - &n).amax() < 1e-9);
        prop_assert!((&n - n.transpose()).amax() < 1e-9);
        // Moore-Penrose agreement with the SVD pseudo-inverse
        let svd_pinv = j.clone().svd(true, true).pseudo_inverse(1e-12).unwrap();
        prop_assert!((jp - svd_pinv).amax() < 1e-8);
    }

    #[test]
    fn point_jacobian_matches_finite_differences(q in q_strategy(), index in 0usize..8) {
        let model = skewed();
        let j = point_jacobian(&model, &q, index).unwrap();
        let h = 1e-6;
        for c in 0..7 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[c] += h;
            qm[c] -= h;
            let dp = (model.joint_positions(&qp).unwrap()[index] - model.joint_positions(&qm).unwrap()[index]) / (2.0 * h);
            for i in 0..3 {
                prop_assert!((dp[i] - j[(i, c)]).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn singular_configuration_is_reported() {
    let model = RobotModel::planar(&[1.0, 1.0, 1.0]).unwrap();
    // fully stretched planar arm: radial motion is impossible
    let j = jacobian(&model, &[0.0, 0.0, 0.0], JacobianKind::Geometric).unwrap();
    assert!(matches!(pseudo_inverse(&j, 1e-8), Err(KinematicsError::Singular { .. })));
}

#[test]
fn planar_jacobian_rows() {
    let model = RobotModel::planar(&[0.5, 0.4, 0.3]).unwrap();
    let q = [0.3, -0.7, 1.1];
    let j = jacobian(&model, &q, JacobianKind::Geometric).unwrap();
    assert_eq!(j.shape(), (3, 3));
    // yaw rate is the sum of joint rates
    for c in 0..3 {
        assert!((j[(2, c)] - 1.0).abs() < 1e-12);
    }
    let pose = forward_kinematics(&model, &q).unwrap();
    let a = [q[0], q[0] + q[1], q[0] + q[1] + q[2]];
    let x = 0.5 * a[0].cos() + 0.4 * a[1].cos() + 0.3 * a[2].cos();
    let y = 0.5 * a[0].sin() + 0.4 * a[1].sin() + 0.3 * a[2].sin();
    assert!((pose.r_t.x - x).abs() < 1e-12 && (pose.r_t.y - y).abs() < 1e-12);
    assert!((pose.task_vector()[2] - a[2]).abs() < 1e-12);
}

#[test]
fn wrong_length_rejected() {
    let model = arm();
    assert!(matches!(forward_kinematics(&model, &[0.0; 6]), Err(KinematicsError::DimensionMismatch { .. })));
    assert!(matches!(point_jacobian(&model, &[0.0; 7], 8), Err(KinematicsError::DimensionMismatch { .. })));
}
