//! EWA projection of 3-D Gaussians and its hand-written adjoint.

use super::Camera;

/// Primitives at or closer than this camera-space depth are culled.
pub const NEAR_PLANE: f64 = 1e-4;
/// Added to the diagonal of every projected covariance.
pub const COV_REGULARIZATION: f64 = 1e-6;

type M3 = [[f64; 3]; 3];

/// Screen-space footprint of one primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub mean: [f64; 2],
    /// Regularized covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub cov: [f64; 3],
    /// Covariance before regularization.
    pub cov_raw: [f64; 3],
    pub depth: f64,
}

/// Rotation matrix of a quaternion `(w, x, y, z)`; the quaternion is used as given.
pub fn quat_to_rotation(q: [f64; 4]) -> M3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn matmul3(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose3(a: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Quantities shared by the forward projection and its adjoint.
struct Chain {
    p_cam: [f64; 3],
    rot: M3,
    scale: [f64; 3],
    /// `M = R S`.
    m: M3,
    sigma3: M3,
    /// `T = J W`, 2x3.
    t: [[f64; 3]; 2],
}

fn chain(mu: [f64; 3], log_scale: [f64; 3], quat: [f64; 4], cam: &Camera) -> Option<Chain> {
    let p_cam = cam.to_camera(mu);
    let [x, y, z] = p_cam;
    if z <= NEAR_PLANE {
        return None;
    }
    let rot = quat_to_rotation(quat);
    let scale = [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()];
    let mut m = rot;
    for row in m.iter_mut() {
        for j in 0..3 {
            row[j] *= scale[j];
        }
    }
    let sigma3 = matmul3(&m, &transpose3(&m));
    let j = [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ];
    let w = &cam.rotation;
    let mut t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            t[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    Some(Chain {
        p_cam,
        rot,
        scale,
        m,
        sigma3,
        t,
    })
}

/// Projects one primitive. `None` when it lies behind the near plane.
pub fn project_gaussian(mu: [f64; 3], log_scale: [f64; 3], quat: [f64; 4], cam: &Camera) -> Option<Projection> {
    let ch = chain(mu, log_scale, quat, cam)?;
    let [x, y, z] = ch.p_cam;
    let mean = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    // T Sigma T^T
    let mut ts = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            ts[r][c] = (0..3).map(|k| ch.t[r][k] * ch.sigma3[k][c]).sum();
        }
    }
    let s = |r: usize, c: usize| -> f64 { (0..3).map(|k| ts[r][k] * ch.t[c][k]).sum() };
    let cov_raw = [s(0, 0), s(0, 1), s(1, 1)];
    let cov = [
        cov_raw[0] + COV_REGULARIZATION,
        cov_raw[1],
        cov_raw[2] + COV_REGULARIZATION,
    ];
    Some(Projection {
        mean,
        cov,
        cov_raw,
        depth: z,
    })
}

/// Gradients of the projection inputs.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ProjectionGrad {
    pub mu: [f64; 3],
    pub log_scale: [f64; 3],
    pub quat: [f64; 4],
}

/// Adjoint of [`project_gaussian`] given gradients with respect to the
/// screen mean and the regularized covariance entries `(a, b, c)`.
pub(crate) fn project_backward(
    mu: [f64; 3],
    log_scale: [f64; 3],
    quat: [f64; 4],
    cam: &Camera,
    g_mean: [f64; 2],
    g_cov: [f64; 3],
) -> ProjectionGrad {
    let ch = match chain(mu, log_scale, quat, cam) {
        Some(c) => c,
        None => return ProjectionGrad::default(),
    };
    let [x, y, z] = ch.p_cam;
    let (fx, fy) = (cam.fx, cam.fy);

    // Symmetric gradient w.r.t. the 2x2 covariance; `b` appears twice.
    let g2 = [[g_cov[0], 0.5 * g_cov[1]], [0.5 * g_cov[1], g_cov[2]]];

    // dL/dSigma3 = T^T G T
    let mut g_sigma3 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    acc += ch.t[r][i] * g2[r][c] * ch.t[c][j];
                }
            }
            g_sigma3[i][j] = acc;
        }
    }

    // dL/dT = 2 G T Sigma3
    let mut gt_sig = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            gt_sig[r][c] = (0..3).map(|k| ch.t[r][k] * ch.sigma3[k][c]).sum();
        }
    }
    let mut g_t = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            g_t[r][c] = 2.0 * (0..2).map(|k| g2[r][k] * gt_sig[k][c]).sum::<f64>();
        }
    }
    // T = J W  =>  dL/dJ = dL/dT W^T
    let w = &cam.rotation;
    let mut g_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            g_j[r][c] = (0..3).map(|k| g_t[r][k] * w[c][k]).sum();
        }
    }

    let mut g_p = [0.0; 3];
    // screen mean
    g_p[0] += g_mean[0] * fx / z;
    g_p[1] += g_mean[1] * fy / z;
    g_p[2] += -g_mean[0] * fx * x / (z * z) - g_mean[1] * fy * y / (z * z);
    // Jacobian entries
    let z2 = z * z;
    let z3 = z2 * z;
    g_p[0] += g_j[0][2] * (-fx / z2);
    g_p[1] += g_j[1][2] * (-fy / z2);
    g_p[2] += g_j[0][0] * (-fx / z2)
        + g_j[0][2] * (2.0 * fx * x / z3)
        + g_j[1][1] * (-fy / z2)
        + g_j[1][2] * (2.0 * fy * y / z3);

    // p_cam = W mu + t
    let mut g_mu = [0.0; 3];
    for c in 0..3 {
        g_mu[c] = (0..3).map(|k| w[k][c] * g_p[k]).sum();
    }

    // Sigma3 = M M^T  =>  dL/dM = 2 G3 M (G3 symmetric)
    let mut g_m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g_m[i][j] = 2.0 * (0..3).map(|k| g_sigma3[i][k] * ch.m[k][j]).sum::<f64>();
        }
    }
    let _ = &ch.m;
    let mut g_r = [[0.0; 3]; 3];
    let mut g_ls = [0.0; 3];
    for j in 0..3 {
        let mut gs = 0.0;
        for i in 0..3 {
            g_r[i][j] = g_m[i][j] * ch.scale[j];
            gs += g_m[i][j] * ch.rot[i][j];
        }
        g_ls[j] = gs * ch.scale[j];
    }

    let [qw, qx, qy, qz] = quat;
    let g = g_r;
    let g_q = [
        2.0 * (-qz * g[0][1] + qy * g[0][2] + qz * g[1][0] - qx * g[1][2] - qy * g[2][0] + qx * g[2][1]),
        2.0 * (qy * g[0][1] + qz * g[0][2] + qy * g[1][0] - 2.0 * qx * g[1][1] - qw * g[1][2]
            + qz * g[2][0]
            + qw * g[2][1]
            - 2.0 * qx * g[2][2]),
        2.0 * (-2.0 * qy * g[0][0] + qx * g[0][1] + qw * g[0][2] + qx * g[1][0] + qz * g[1][2]
            - qw * g[2][0]
            + qz * g[2][1]
            - 2.0 * qy * g[2][2]),
        2.0 * (-2.0 * qz * g[0][0] - qw * g[0][1] + qx * g[0][2] + qw * g[1][0] - 2.0 * qz * g[1][1]
            + qy * g[1][2]
            + qx * g[2][0]
            + qy * g[2][1]),
    ];

    ProjectionGrad {
        mu: g_mu,
        log_scale: g_ls,
        quat: g_q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::frontal(64, 64, 3.0, 100.0)
    }

    #[test]
    fn isotropic_centered_primitive() {
        let sigma: f64 = 0.05;
        let p = project_gaussian([0.0; 3], [sigma.ln(); 3], [1.0, 0.0, 0.0, 0.0], &cam()).unwrap();
        let want = (100.0 * sigma / 3.0).powi(2);
        assert!((p.cov_raw[0] - want).abs() < 1e-12);
        assert!((p.cov_raw[2] - want).abs() < 1e-12);
        assert!(p.cov_raw[1].abs() < 1e-15);
        assert!((p.cov[0] - want - COV_REGULARIZATION).abs() < 1e-12);
        assert_eq!(p.mean, [32.0, 32.0]);
        assert_eq!(p.depth, 3.0);
    }

    #[test]
    fn primitives_behind_camera_are_culled() {
        assert!(project_gaussian([0.0, 0.0, 3.0], [0.0; 3], [1.0, 0.0, 0.0, 0.0], &cam()).is_none());
        assert!(project_gaussian([0.0, 0.0, 5.0], [0.0; 3], [1.0, 0.0, 0.0, 0.0], &cam()).is_none());
    }

    #[test]
    fn doubling_scales_quadruples_covariance() {
        let q = [0.9, 0.1, -0.3, 0.2];
        let n = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let q = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        let ls = [-3.0, -2.5, -3.4];
        let mu = [0.1, -0.2, 0.3];
        let a = project_gaussian(mu, ls, q, &cam()).unwrap();
        let ls2 = ls.map(|v| v + 2f64.ln());
        let b = project_gaussian(mu, ls2, q, &cam()).unwrap();
        for k in 0..3 {
            assert!((b.cov_raw[k] - 4.0 * a.cov_raw[k]).abs() < 1e-10 * a.cov_raw[k].abs().max(1.0));
        }
    }

    #[test]
    fn rotation_of_unit_quaternion_is_orthonormal() {
        let q = [0.5, 0.5, -0.5, 0.5];
        let r = quat_to_rotation(q);
        let rrt = matmul3(&r, &transpose3(&r));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((rrt[i][j] - want).abs() < 1e-12);
            }
        }
    }
}
