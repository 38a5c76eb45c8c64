//! Independent reference implementations used to check the library.
#![allow(dead_code)]

use gex_core::kinematics::{fingertip, Finger, HandModel, Vec3};
use gex_core::retarget::{Endpoint, KeyVectorSpec};

pub type M4 = [[f64; 4]; 4];

pub fn identity() -> M4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn mul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn translation(t: [f64; 3]) -> M4 {
    let mut m = identity();
    m[0][3] = t[0];
    m[1][3] = t[1];
    m[2][3] = t[2];
    m
}

pub fn rot_x(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0, 0.0], [0.0, c, -s, 0.0], [0.0, s, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

pub fn rot_y(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s, 0.0], [0.0, 1.0, 0.0, 0.0], [-s, 0.0, c, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

pub fn rot_z(a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
}

/// Rodrigues rotation about a unit axis.
pub fn rot_axis(k: [f64; 3], a: f64) -> M4 {
    let (s, c) = a.sin_cos();
    let v = 1.0 - c;
    let [x, y, z] = k;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s, 0.0],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s, 0.0],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Fixed-axis roll, pitch, yaw: Rz(y)·Ry(p)·Rx(r).
pub fn rpy(r: f64, p: f64, y: f64) -> M4 {
    mul(&rot_z(y), &mul(&rot_y(p), &rot_x(r)))
}

fn palm(model: &HandModel) -> M4 {
    let h = model.palm_frame.to_homogeneous();
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = h[(i, j)];
        }
    }
    m
}

/// Fingertip by chained 4×4 homogeneous matrices.
pub fn fk_tip(model: &HandModel, finger: Finger, q_finger: &[f64]) -> [f64; 3] {
    let chain = model.chain(finger).unwrap();
    let mut t = palm(model);
    for (j, &q) in chain.joints.iter().zip(q_finger) {
        let o = j.origin_translation;
        let [r, p, y] = j.origin_rpy;
        let a = j.axis.into_inner();
        t = mul(&t, &translation([o.x, o.y, o.z]));
        t = mul(&t, &rpy(r, p, y));
        t = mul(&t, &rot_axis([a.x, a.y, a.z], q));
    }
    let o = chain.tip_offset;
    let tip = mul(&t, &translation([o.x, o.y, o.z]));
    [tip[0][3], tip[1][3], tip[2][3]]
}

pub fn fk_tip_vec(model: &HandModel, finger: Finger, q_finger: &[f64]) -> Vec3 {
    let [x, y, z] = fk_tip(model, finger, q_finger);
    Vec3::new(x, y, z)
}

/// Positional Jacobian from the matrix chain: column i is z_i × (p_tip − p_i)
/// with z_i the joint axis and p_i the joint origin, both in the base frame.
pub fn oracle_jacobian(model: &HandModel, finger: Finger, q_finger: &[f64]) -> Vec<[f64; 3]> {
    let chain = model.chain(finger).unwrap();
    let mut t = palm(model);
    let mut axes = Vec::new();
    for (j, &q) in chain.joints.iter().zip(q_finger) {
        let o = j.origin_translation;
        let [r, p, y] = j.origin_rpy;
        let a = j.axis.into_inner();
        t = mul(&t, &translation([o.x, o.y, o.z]));
        t = mul(&t, &rpy(r, p, y));
        let z = [0, 1, 2].map(|row| t[row][0] * a.x + t[row][1] * a.y + t[row][2] * a.z);
        axes.push((z, [t[0][3], t[1][3], t[2][3]]));
        t = mul(&t, &rot_axis([a.x, a.y, a.z], q));
    }
    let tip = fk_tip(model, finger, q_finger);
    axes.iter()
        .map(|(z, p)| {
            let d = [tip[0] - p[0], tip[1] - p[1], tip[2] - p[2]];
            [z[1] * d[2] - z[2] * d[1], z[2] * d[0] - z[0] * d[2], z[0] * d[1] - z[1] * d[0]]
        })
        .collect()
}

/// Central-difference Jacobian of the fingertip (3 × n, row-major).
pub fn fd_jacobian(model: &HandModel, finger: Finger, q: &[f64], h: f64) -> Vec<[f64; 3]> {
    (0..q.len())
        .map(|i| {
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[i] += h;
            b[i] -= h;
            let pa = fk_tip(model, finger, &a);
            let pb = fk_tip(model, finger, &b);
            [(pa[0] - pb[0]) / (2.0 * h), (pa[1] - pb[1]) / (2.0 * h), (pa[2] - pb[2]) / (2.0 * h)]
        })
        .collect()
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, q: &[f64], h: f64) -> Vec<f64> {
    (0..q.len())
        .map(|i| {
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Bit-at-a-time CRC-16, polynomial 0x8005, init 0, no reflection.
pub fn crc16_bitwise(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0;
    for &b in bytes {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x8005 } else { crc << 1 };
        }
    }
    crc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefMode {
    Free,
    Engaged,
}

/// Reference hysteresis/debounce machine over a whole trace: from the start
/// of each segment, find the first window of `n` samples, all satisfying the
/// exit condition of the current mode, and switch on its last sample.
pub fn reference_fsm(trace: &[f64], engage: f64, release: f64, n: usize) -> Vec<RefMode> {
    let mut out = Vec::with_capacity(trace.len());
    let mut mode = RefMode::Free;
    let mut start = 0;
    while start < trace.len() {
        let exits = |c: &f64| match mode {
            RefMode::Free => c.abs() >= engage,
            RefMode::Engaged => c.abs() <= release,
        };
        let switch = (start + n - 1..trace.len()).find(|&k| trace[k + 1 - n..=k].iter().all(exits));
        match switch {
            Some(k) => {
                out.extend(std::iter::repeat_n(mode, k - start));
                mode = match mode {
                    RefMode::Free => RefMode::Engaged,
                    RefMode::Engaged => RefMode::Free,
                };
                out.push(mode);
                start = k + 1;
            }
            None => {
                out.extend(std::iter::repeat_n(mode, trace.len() - start));
                break;
            }
        }
    }
    out
}

const GRID: usize = 25;
const GRID_KEEP: usize = 30;

/// Lowest-cost points of a 25-per-joint grid over one finger, scored by
/// the squared error of its palm-to-tip vector against `target`.
fn finger_grid_candidates(hand: &HandModel, finger: Finger, target: Vec3) -> Vec<Vec<f64>> {
    let chain = hand.chain(finger).unwrap();
    let axes: Vec<Vec<f64>> = chain
        .joints
        .iter()
        .map(|j| (0..GRID).map(|k| j.limit_lo + (j.limit_hi - j.limit_lo) * k as f64 / (GRID - 1) as f64).collect())
        .collect();
    let decode = |mut r: usize| -> Vec<f64> {
        axes.iter()
            .map(|axis| {
                let v = axis[r % GRID];
                r /= GRID;
                v
            })
            .collect()
    };
    let total = GRID.pow(axes.len() as u32);
    let mut scored: Vec<(f64, usize)> = (0..total)
        .map(|idx| {
            let v = fingertip(hand, finger, &decode(idx)).unwrap() - hand.palm_origin();
            ((v - target).norm_squared(), idx)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.iter().take(GRID_KEEP).map(|&(_, idx)| decode(idx)).collect()
}

/// Exhaustive-grid estimate of the smallest retargeting cost: each finger
/// is gridded on its own palm-to-tip term (fingers decouple there), then
/// the best candidates are combined so the tip-to-tip terms are scored on
/// the product. `cost` evaluates the full objective on a joint vector.
pub fn grid_minimum(hand: &HandModel, specs: &[KeyVectorSpec], u: &[Vec3], cost: impl Fn(&[f64]) -> f64) -> f64 {
    let per_finger: Vec<Vec<Vec<f64>>> = hand
        .fingers
        .iter()
        .map(|f| {
            let k = specs.iter().position(|s| s.from == Endpoint::Palm && s.to == f.name).unwrap();
            finger_grid_candidates(hand, f.name, u[k])
        })
        .collect();
    let mut best = f64::INFINITY;
    for a in &per_finger[0] {
        for b in &per_finger[1] {
            for c in &per_finger[2] {
                let q: Vec<f64> = a.iter().chain(b).chain(c).copied().collect();
                best = best.min(cost(&q));
            }
        }
    }
    best
}
