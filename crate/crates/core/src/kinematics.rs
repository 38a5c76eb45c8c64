//! Serial-chain hand models: document loading, forward kinematics, positional
//! Jacobians, limit clamping and fingertip workspace sampling.
//!
//! All angles are radians. Model documents carry limits in degrees and are
//! converted on load.

use std::fmt;
use std::ops::{Deref, DerefMut, Range};
use std::str::FromStr;

use nalgebra::{IsometryMatrix3, Matrix3xX, Rotation3, Translation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Rigid transform with an explicit 3×3 rotation matrix.
pub type Transform = IsometryMatrix3<f64>;

const AXIS_NORM_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("model document parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("joint vector has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown finger `{0}`")]
    UnknownFinger(String),
}

pub type Result<T, E = KinematicsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
}

impl Finger {
    pub const ALL: [Finger; 3] = [Finger::Thumb, Finger::Index, Finger::Middle];

    pub fn as_str(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Finger {
    type Err = KinematicsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thumb" => Ok(Finger::Thumb),
            "index" => Ok(Finger::Index),
            "middle" => Ok(Finger::Middle),
            other => Err(KinematicsError::UnknownFinger(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub origin_translation: Vec3,
    /// Roll, pitch, yaw applied about fixed X, then Y, then Z.
    pub origin_rpy: [f64; 3],
    pub axis: Unit<Vec3>,
    pub limit_lo: f64,
    pub limit_hi: f64,
    pub motor_id: u8,
    /// Encoder tick reported at model-zero angle.
    pub zero_tick: u32,
    /// Home angle used by the device SDK.
    pub home: f64,
}

impl JointSpec {
    /// Fixed transform from the parent frame to this joint's frame at q = 0.
    pub fn origin(&self) -> Transform {
        let [r, p, y] = self.origin_rpy;
        Transform::from_parts(
            Translation3::from(self.origin_translation),
            Rotation3::from_euler_angles(r, p, y),
        )
    }

    pub fn motion(&self, q: f64) -> Transform {
        Transform::from_parts(
            Translation3::identity(),
            Rotation3::from_axis_angle(&self.axis, q),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerChain {
    pub name: Finger,
    pub joints: Vec<JointSpec>,
    pub tip_offset: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub name: String,
    pub fingers: Vec<FingerChain>,
    pub palm_frame: Transform,
    offsets: Vec<usize>,
}

/// Joint configuration in model declaration order (fingers in document order,
/// joints root to tip).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub model_name: String,
    pub values: Vec<f64>,
}

impl JointVector {
    pub fn new(model: &HandModel, values: Vec<f64>) -> Result<Self> {
        model.check_len(values.len())?;
        Ok(Self { model_name: model.name.clone(), values })
    }

    pub fn zeros(model: &HandModel) -> Self {
        Self { model_name: model.name.clone(), values: vec![0.0; model.dof()] }
    }
}

impl Deref for JointVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// World frames of every joint (after its own rotation) and every fingertip.
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    pub frames: Vec<Transform>,
    pub tips: Vec<Vec3>,
}

impl HandModel {
    pub fn new(name: impl Into<String>, fingers: Vec<FingerChain>, palm_frame: Transform) -> Result<Self> {
        let mut offsets = Vec::with_capacity(fingers.len() + 1);
        let mut acc = 0;
        for f in &fingers {
            offsets.push(acc);
            acc += f.joints.len();
        }
        offsets.push(acc);
        let model = Self { name: name.into(), fingers, palm_frame, offsets };
        model.validate()?;
        Ok(model)
    }

    pub fn dof(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn finger_index(&self, finger: Finger) -> Result<usize> {
        self.fingers
            .iter()
            .position(|f| f.name == finger)
            .ok_or_else(|| KinematicsError::UnknownFinger(finger.to_string()))
    }

    pub fn chain(&self, finger: Finger) -> Result<&FingerChain> {
        Ok(&self.fingers[self.finger_index(finger)?])
    }

    /// Slice of the full joint vector belonging to `finger`.
    pub fn finger_range(&self, finger: Finger) -> Result<Range<usize>> {
        let i = self.finger_index(finger)?;
        Ok(self.offsets[i]..self.offsets[i + 1])
    }

    pub fn joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.fingers.iter().flat_map(|f| f.joints.iter())
    }

    /// Finger owning each joint, in declaration order.
    pub fn joint_fingers(&self) -> Vec<Finger> {
        self.fingers
            .iter()
            .flat_map(|f| std::iter::repeat_n(f.name, f.joints.len()))
            .collect()
    }

    pub fn limits(&self) -> (Vec<f64>, Vec<f64>) {
        self.joints().map(|j| (j.limit_lo, j.limit_hi)).unzip()
    }

    pub fn mid_range(&self) -> JointVector {
        JointVector {
            model_name: self.name.clone(),
            values: self.joints().map(|j| 0.5 * (j.limit_lo + j.limit_hi)).collect(),
        }
    }

    pub fn home(&self) -> JointVector {
        JointVector { model_name: self.name.clone(), values: self.joints().map(|j| j.home).collect() }
    }

    pub fn palm_origin(&self) -> Vec3 {
        self.palm_frame.translation.vector
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), got });
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(KinematicsError::Validation(msg));
        if self.fingers.is_empty() {
            return fail("model has no fingers".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        let mut names = std::collections::BTreeSet::new();
        for f in &self.fingers {
            if !names.insert(f.name) {
                return fail(format!("finger `{}` declared twice", f.name));
            }
            if f.joints.is_empty() {
                return fail(format!("finger `{}` has no joints", f.name));
            }
            for j in &f.joints {
                if !(j.limit_lo <= j.limit_hi) {
                    return fail(format!("joint `{}` has inverted limits", j.name));
                }
                if !(j.limit_lo..=j.limit_hi).contains(&j.home) {
                    return fail(format!("joint `{}` home lies outside its limits", j.name));
                }
                if !ids.insert(j.motor_id) {
                    return fail(format!("motor_id {} used twice (joint `{}`)", j.motor_id, j.name));
                }
            }
        }
        let expected: Option<(usize, [usize; 3])> = match self.name.as_str() {
            "gx11" => Some((11, [3, 4, 4])),
            "ex12" => Some((12, [4, 4, 4])),
            _ => None,
        };
        if let Some((total, per_finger)) = expected {
            for (finger, n) in Finger::ALL.iter().zip(per_finger) {
                let got = self.chain(*finger).map(|c| c.joints.len()).unwrap_or(0);
                if got != n {
                    return fail(format!("{}: {finger} must have {n} joints, found {got}", self.name));
                }
            }
            if self.dof() != total {
                return fail(format!("{}: expected {total} joints, found {}", self.name, self.dof()));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Document schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    palm_frame: FrameDoc,
    fingers: Vec<FingerDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    translation: [f64; 3],
    rpy: [f64; 3],
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FingerDoc {
    name: String,
    tip_offset: [f64; 3],
    joints: Vec<JointDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    origin_translation: [f64; 3],
    origin_rpy: [f64; 3],
    axis: [f64; 3],
    limit_lo_deg: f64,
    limit_hi_deg: f64,
    motor_id: u8,
    #[serde(default = "default_zero_tick")]
    zero_tick: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    home_deg: Option<f64>,
}

fn default_zero_tick() -> u32 {
    2048
}

/// Parse and validate a model document.
pub fn load_model(text: &str) -> Result<HandModel> {
    let doc: ModelDoc = toml::from_str(text)?;
    let mut fingers = Vec::with_capacity(doc.fingers.len());
    for fd in doc.fingers {
        let name: Finger = fd.name.parse().map_err(|_| {
            KinematicsError::Validation(format!("finger name `{}` is not one of thumb/index/middle", fd.name))
        })?;
        let mut joints = Vec::with_capacity(fd.joints.len());
        for jd in fd.joints {
            let axis = Vec3::from(jd.axis);
            if (axis.norm() - 1.0).abs() > AXIS_NORM_TOL {
                return Err(KinematicsError::Validation(format!(
                    "joint `{}` axis {:?} is not unit length",
                    jd.name, jd.axis
                )));
            }
            if jd.zero_tick > 4095 {
                return Err(KinematicsError::Validation(format!(
                    "joint `{}` zero_tick {} exceeds 4095",
                    jd.name, jd.zero_tick
                )));
            }
            joints.push(JointSpec {
                name: jd.name,
                origin_translation: Vec3::from(jd.origin_translation),
                origin_rpy: jd.origin_rpy,
                axis: Unit::new_unchecked(axis),
                limit_lo: jd.limit_lo_deg.to_radians(),
                limit_hi: jd.limit_hi_deg.to_radians(),
                motor_id: jd.motor_id,
                zero_tick: jd.zero_tick,
                // Home defaults to zero, pulled inside limits that exclude it.
                home: jd
                    .home_deg
                    .unwrap_or_else(|| 0f64.clamp(jd.limit_lo_deg, jd.limit_hi_deg.max(jd.limit_lo_deg)))
                    .to_radians(),
            });
        }
        fingers.push(FingerChain { name, joints, tip_offset: Vec3::from(fd.tip_offset) });
    }
    let [r, p, y] = doc.palm_frame.rpy;
    let palm = Transform::from_parts(
        Translation3::from(Vec3::from(doc.palm_frame.translation)),
        Rotation3::from_euler_angles(r, p, y),
    );
    HandModel::new(doc.name, fingers, palm)
}

/// Serialize a model back to document form.
pub fn to_document(model: &HandModel) -> String {
    let (roll, pitch, yaw) = model.palm_frame.rotation.euler_angles();
    let doc = ModelDoc {
        name: model.name.clone(),
        palm_frame: FrameDoc { translation: model.palm_origin().into(), rpy: [roll, pitch, yaw] },
        fingers: model
            .fingers
            .iter()
            .map(|f| FingerDoc {
                name: f.name.to_string(),
                tip_offset: f.tip_offset.into(),
                joints: f
                    .joints
                    .iter()
                    .map(|j| JointDoc {
                        name: j.name.clone(),
                        origin_translation: j.origin_translation.into(),
                        origin_rpy: j.origin_rpy,
                        axis: j.axis.into_inner().into(),
                        limit_lo_deg: j.limit_lo.to_degrees(),
                        limit_hi_deg: j.limit_hi.to_degrees(),
                        motor_id: j.motor_id,
                        zero_tick: j.zero_tick,
                        home_deg: Some(j.home.to_degrees()),
                    })
                    .collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("model document serializes")
}

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

fn chain_frames(palm: &Transform, chain: &FingerChain, q: &[f64]) -> (Vec<Transform>, Vec3) {
    let mut frame = *palm;
    let mut frames = Vec::with_capacity(chain.joints.len());
    for (j, &qi) in chain.joints.iter().zip(q) {
        frame = frame * j.origin() * j.motion(qi);
        frames.push(frame);
    }
    let tip = frame.transform_point(&chain.tip_offset.into()).coords;
    (frames, tip)
}

pub fn forward_kinematics(model: &HandModel, q: &[f64]) -> Result<FkResult> {
    model.check_len(q.len())?;
    let mut frames = Vec::with_capacity(model.dof());
    let mut tips = Vec::with_capacity(model.fingers.len());
    for (i, chain) in model.fingers.iter().enumerate() {
        let (f, tip) = chain_frames(&model.palm_frame, chain, &q[model.offsets[i]..model.offsets[i + 1]]);
        frames.extend(f);
        tips.push(tip);
    }
    Ok(FkResult { frames, tips })
}

fn finger_joints<'a>(model: &'a HandModel, finger: Finger, q_finger: &[f64]) -> Result<&'a FingerChain> {
    let chain = model.chain(finger)?;
    if q_finger.len() != chain.joints.len() {
        return Err(KinematicsError::DimensionMismatch { expected: chain.joints.len(), got: q_finger.len() });
    }
    Ok(chain)
}

/// Tip position of one finger given only that finger's joints.
pub fn fingertip(model: &HandModel, finger: Finger, q_finger: &[f64]) -> Result<Vec3> {
    let chain = finger_joints(model, finger, q_finger)?;
    Ok(chain_frames(&model.palm_frame, chain, q_finger).1)
}

/// Positional Jacobian of a fingertip (3 × joints-in-finger, m/rad).
///
/// Column i is `z_i × (p_tip − p_i)` with `z_i` the world joint axis and `p_i`
/// the world joint origin.
pub fn position_jacobian(model: &HandModel, finger: Finger, q_finger: &[f64]) -> Result<Matrix3xX<f64>> {
    let chain = finger_joints(model, finger, q_finger)?;
    let (frames, tip) = chain_frames(&model.palm_frame, chain, q_finger);
    let mut jac = Matrix3xX::zeros(chain.joints.len());
    for (i, (frame, joint)) in frames.iter().zip(&chain.joints).enumerate() {
        let z = frame.rotation * joint.axis.into_inner();
        let p = frame.translation.vector;
        jac.set_column(i, &z.cross(&(tip - p)));
    }
    Ok(jac)
}

pub fn clamp_to_limits(model: &HandModel, q: &[f64]) -> Result<JointVector> {
    model.check_len(q.len())?;
    let values = model.joints().zip(q).map(|(j, &v)| v.clamp(j.limit_lo, j.limit_hi)).collect();
    Ok(JointVector { model_name: model.name.clone(), values })
}

/// One sampled joint configuration together with its fingertip.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceSample {
    pub q: Vec<f64>,
    pub tip: Vec3,
}

/// Fingertips of `n` joint vectors drawn uniformly within the finger's limits.
pub fn sample_workspace(model: &HandModel, finger: Finger, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    Ok(sample_workspace_with_joints(model, finger, n, seed)?.into_iter().map(|s| s.tip).collect())
}

pub fn sample_workspace_with_joints(
    model: &HandModel,
    finger: Finger,
    n: usize,
    seed: u64,
) -> Result<Vec<WorkspaceSample>> {
    let chain = model.chain(finger)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let q: Vec<f64> = chain
            .joints
            .iter()
            .map(|j| j.limit_lo + (j.limit_hi - j.limit_lo) * rng.random::<f64>())
            .collect();
        let tip = chain_frames(&model.palm_frame, chain, &q).1;
        out.push(WorkspaceSample { q, tip });
    }
    Ok(out)
}

/// Volume of the convex hull of a point cloud, or 0 for degenerate clouds.
pub fn hull_volume(points: &[Vec3]) -> f64 {
    if points.len() < 4 {
        return 0.0;
    }
    let pts: Vec<Vec<f64>> = points.iter().map(|p| vec![p.x, p.y, p.z]).collect();
    chull::ConvexHullWrapper::try_new(&pts, None).map(|h| h.volume()).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn single_joint(axis: [f64; 3]) -> String {
        format!(
            r#"
name = "probe"
[palm_frame]
translation = [0.0, 0.0, 0.0]
rpy = [0.0, 0.0, 0.0]
[[fingers]]
name = "thumb"
tip_offset = [0.03, 0.0, 0.0]
[[fingers.joints]]
name = "j0"
origin_translation = [0.0, 0.0, 0.0]
origin_rpy = [0.0, 0.0, 0.0]
axis = [{}, {}, {}]
limit_lo_deg = -90.0
limit_hi_deg = 90.0
motor_id = 1
"#,
            axis[0], axis[1], axis[2]
        )
    }

    #[test]
    fn minimal_document_has_one_dof() {
        let m = load_model(&single_joint([0.0, 0.0, 1.0])).unwrap();
        assert_eq!(m.dof(), 1);
        assert_eq!(m.fingers.len(), 1);
        assert_eq!(m.joints().next().unwrap().zero_tick, 2048);
    }

    #[test]
    fn rejects_non_unit_axis() {
        let err = load_model(&single_joint([0.0, 0.0, 2.0])).unwrap_err();
        assert!(matches!(err, KinematicsError::Validation(_)), "{err}");
    }

    #[test]
    fn rejects_malformed_document() {
        assert!(matches!(load_model("name = "), Err(KinematicsError::Parse(_))));
        let missing = single_joint([0.0, 0.0, 1.0]).replace("motor_id = 1", "");
        assert!(matches!(load_model(&missing), Err(KinematicsError::Parse(_))));
    }

    #[test]
    fn rejects_inverted_limits_and_duplicate_ids() {
        let inverted = single_joint([0.0, 0.0, 1.0]).replace("limit_lo_deg = -90.0", "limit_lo_deg = 95.0");
        assert!(matches!(load_model(&inverted), Err(KinematicsError::Validation(_))));

        let mut dup = single_joint([0.0, 0.0, 1.0]);
        dup.push_str(
            r#"
[[fingers.joints]]
name = "j1"
origin_translation = [0.0, 0.0, 0.0]
origin_rpy = [0.0, 0.0, 0.0]
axis = [0.0, 0.0, 1.0]
limit_lo_deg = -90.0
limit_hi_deg = 90.0
motor_id = 1
"#,
        );
        let err = load_model(&dup).unwrap_err();
        assert!(err.to_string().contains("motor_id 1"), "{err}");
    }

    #[test]
    fn named_models_enforce_joint_counts() {
        let wrong = single_joint([0.0, 0.0, 1.0]).replace("name = \"probe\"", "name = \"gx11\"");
        let err = load_model(&wrong).unwrap_err();
        assert!(err.to_string().contains("gx11"), "{err}");
    }

    #[test]
    fn identity_chain_tip() {
        let m = load_model(&single_joint([0.0, 0.0, 1.0])).unwrap();
        let fk = forward_kinematics(&m, &[0.0]).unwrap();
        assert!((fk.tips[0] - Vec3::new(0.03, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(fingertip(&m, Finger::Thumb, &[0.0]).unwrap(), Vec3::new(0.03, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = load_model(&single_joint([0.0, 0.0, 1.0])).unwrap();
        let tip = fingertip(&m, Finger::Thumb, &[FRAC_PI_2]).unwrap();
        assert!((tip - Vec3::new(0.0, 0.03, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn jacobian_single_joint_and_degenerate_axis() {
        let m = load_model(&single_joint([0.0, 0.0, 1.0])).unwrap();
        let j = position_jacobian(&m, Finger::Thumb, &[0.0]).unwrap();
        assert!((j.column(0) - Vec3::new(0.0, 0.03, 0.0)).norm() < 1e-15);

        // axis along x passes through the tip at (0.03, 0, 0)
        let m = load_model(&single_joint([1.0, 0.0, 0.0])).unwrap();
        let j = position_jacobian(&m, Finger::Thumb, &[0.3]).unwrap();
        assert!(j.column(0).norm() < 1e-15);
    }

    #[test]
    fn dimension_and_finger_errors() {
        let m = load_model(&single_joint([0.0, 0.0, 1.0])).unwrap();
        assert!(matches!(
            forward_kinematics(&m, &[0.0, 1.0]),
            Err(KinematicsError::DimensionMismatch { expected: 1, got: 2 })
        ));
        assert!(matches!(fingertip(&m, Finger::Index, &[0.0]), Err(KinematicsError::UnknownFinger(_))));
        assert!(matches!(
            position_jacobian(&m, Finger::Thumb, &[]),
            Err(KinematicsError::DimensionMismatch { .. })
        ));
        assert!("ring".parse::<Finger>().is_err());
    }

    #[test]
    fn clamp_cases() {
        let m = crate::fixtures::gx11();
        let (lo, hi) = m.limits();
        let mid = m.mid_range();
        assert_eq!(clamp_to_limits(&m, &mid).unwrap(), mid);
        let over: Vec<f64> = hi.iter().map(|h| h + 1.0).collect();
        assert_eq!(clamp_to_limits(&m, &over).unwrap().values, hi);
        let under: Vec<f64> = lo.iter().map(|l| l - 1.0).collect();
        assert_eq!(clamp_to_limits(&m, &under).unwrap().values, lo);
    }

    #[test]
    fn degenerate_limits_sample_single_point() {
        let doc = single_joint([0.0, 0.0, 1.0])
            .replace("limit_lo_deg = -90.0", "limit_lo_deg = 30.0")
            .replace("limit_hi_deg = 90.0", "limit_hi_deg = 30.0");
        let m = load_model(&doc).unwrap();
        let cloud = sample_workspace(&m, Finger::Thumb, 1, 3).unwrap();
        assert_eq!(cloud.len(), 1);
        let expected = fingertip(&m, Finger::Thumb, &[30f64.to_radians()]).unwrap();
        assert!((cloud[0] - expected).norm() < 1e-15);
    }

    #[test]
    fn document_round_trip() {
        let m = crate::fixtures::ex12();
        let again = load_model(&to_document(&m)).unwrap();
        assert_eq!(again.dof(), 12);
        let q = m.mid_range();
        let a = forward_kinematics(&m, &q).unwrap();
        let b = forward_kinematics(&again, &q).unwrap();
        for (x, y) in a.tips.iter().zip(&b.tips) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn hull_of_unit_cube() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        pts.push(Vec3::new(0.5, 0.5, 0.5));
        assert!((hull_volume(&pts) - 1.0).abs() < 1e-9);
        assert_eq!(hull_volume(&pts[..3]), 0.0);
    }
}
