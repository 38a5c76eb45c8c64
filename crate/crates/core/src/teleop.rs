//! Force-feedback teleoperation: the glove drives the hand through the
//! retargeting solver; hand contact with a cylinder scene switches the
//! matching glove finger from free motion to an impedance hold.

use serde::{Deserialize, Serialize};

use crate::gesture::GestureRecord;
use crate::bus::{self, ExternalSpring, OperatingMode, ServoProfile, SharedBus, VirtualBus};
use crate::kinematics::{self, Finger, HandModel, KinematicsError, Vec3};
use crate::retarget::{self, RetargetConfig, RetargetError, RetargetState};
use crate::sdk::{Device, SdkError};
use crate::transport::{LoopbackBus, Tap, Transport, WireLog};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error("glove: {0}")]
    Glove(#[source] SdkError),
    #[error("hand: {0}")]
    Hand(#[source] SdkError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid teleop config: {0}")]
    Config(String),
    #[error(transparent)]
    Bus(#[from] bus::BusError),
}

pub type Result<T, E = TeleopError> = std::result::Result<T, E>;

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cylinder,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

/// Fixed solid cylinder in the hand base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub shape: Shape,
    pub center: [f64; 3],
    pub radius: f64,
    pub height: f64,
    /// N/m.
    pub stiffness: f64,
    /// Cylinder axis; defaults to +z.
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
}

impl SceneObject {
    pub fn cylinder(center: Vec3, radius: f64, height: f64, stiffness: f64) -> Self {
        Self { shape: Shape::Cylinder, center: center.into(), radius, height, stiffness, axis: default_axis() }
    }

    pub fn load(text: &str) -> Result<Self> {
        let s: SceneObject = toml::from_str(text).map_err(|e| TeleopError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0 && self.height > 0.0 && self.stiffness > 0.0;
        let finite = self.center.iter().chain(&self.axis).all(|v| v.is_finite());
        if !ok || !finite {
            return Err(TeleopError::Config("scene radius, height and stiffness must be positive".into()));
        }
        if Vec3::from(self.axis).norm() < 1e-9 {
            return Err(TeleopError::Config("scene axis must be non-zero".into()));
        }
        Ok(())
    }

    /// Signed distance from `p` to the surface (negative inside) and the
    /// outward unit normal at the closest surface feature.
    pub fn signed_distance(&self, p: &Vec3) -> (f64, Vec3) {
        let a = Vec3::from(self.axis).normalize();
        let d = p - Vec3::from(self.center);
        let h = d.dot(&a);
        let radial = d - h * a;
        let rho = radial.norm();
        let radial_dir = if rho > 1e-12 { radial / rho } else { any_perpendicular(&a) };
        let axial_dir = if h >= 0.0 { a } else { -a };
        let dr = rho - self.radius;
        let dz = h.abs() - 0.5 * self.height;
        if dr <= 0.0 && dz <= 0.0 {
            if dr >= dz { (dr, radial_dir) } else { (dz, axial_dir) }
        } else {
            let (er, ez) = (dr.max(0.0), dz.max(0.0));
            let dist = er.hypot(ez);
            (dist, (er * radial_dir + ez * axial_dir) / dist)
        }
    }
}

fn any_perpendicular(a: &Vec3) -> Vec3 {
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    a.cross(&helper).normalize()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub force: Vec3,
    pub contact: bool,
    pub depth: f64,
}

/// Penalty contact of sphere fingertips of `tip_radius` against the scene.
/// Force acts on the fingertip along the outward normal; contact requires
/// strictly positive penetration.
pub fn contact_forces(scene: Option<&SceneObject>, tips: &[Vec3], tip_radius: f64) -> Vec<Contact> {
    tips.iter()
        .map(|p| {
            let Some(obj) = scene else {
                return Contact { force: Vec3::zeros(), contact: false, depth: 0.0 };
            };
            let (dist, normal) = obj.signed_distance(p);
            let depth = tip_radius - dist;
            if depth > 0.0 {
                Contact { force: obj.stiffness * depth * normal, contact: true, depth }
            } else {
                Contact { force: Vec3::zeros(), contact: false, depth: 0.0 }
            }
        })
        .collect()
}

/// Joint currents (mA) that a fingertip force induces on one finger:
/// τ = Jᵀ F, divided by the torque constant.
pub fn simulated_present_current(
    model: &HandModel,
    finger: Finger,
    q_finger: &[f64],
    force: &Vec3,
    torque_constant: f64,
) -> Result<Vec<f64>> {
    let jac = kinematics::position_jacobian(model, finger, q_finger)?;
    Ok(jac.tr_mul(force).iter().map(|tau| tau / torque_constant * 1000.0).collect())
}

// ---------------------------------------------------------------------------
// Contact detector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerMode {
    Free,
    Engaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactDetector {
    /// mA.
    pub engage_threshold: f64,
    /// mA, below `engage_threshold`.
    pub release_threshold: f64,
    pub debounce_cycles: u32,
}

impl Default for ContactDetector {
    fn default() -> Self {
        Self { engage_threshold: 60.0, release_threshold: 30.0, debounce_cycles: 3 }
    }
}

impl ContactDetector {
    pub fn validate(&self) -> Result<()> {
        if !(self.release_threshold < self.engage_threshold) || self.release_threshold < 0.0 || self.debounce_cycles < 1 {
            return Err(TeleopError::Config(
                "detector needs 0 ≤ release_threshold < engage_threshold and debounce_cycles ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-finger detector state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FingerFsm {
    pub mode: FingerMode,
    run: u32,
}

impl Default for FingerFsm {
    fn default() -> Self {
        Self { mode: FingerMode::Free, run: 0 }
    }
}

impl FingerFsm {
    /// Feed one cycle of joint currents; returns the (possibly new) mode.
    pub fn update(&mut self, det: &ContactDetector, currents: &[f64]) -> FingerMode {
        let peak = currents.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let leaving = match self.mode {
            FingerMode::Free => peak >= det.engage_threshold,
            FingerMode::Engaged => peak <= det.release_threshold,
        };
        self.run = if leaving { self.run + 1 } else { 0 };
        if self.run >= det.debounce_cycles {
            self.mode = match self.mode {
                FingerMode::Free => FingerMode::Engaged,
                FingerMode::Engaged => FingerMode::Free,
            };
            self.run = 0;
        }
        self.mode
    }
}

/// Mode sequence of one finger over a trace of peak currents.
pub fn run_detector(det: &ContactDetector, trace: &[f64]) -> Vec<FingerMode> {
    let mut fsm = FingerFsm::default();
    trace.iter().map(|&c| fsm.update(det, &[c])).collect()
}

// ---------------------------------------------------------------------------
// Impedance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceParams {
    /// N·m/rad.
    pub kp: f64,
    /// N·m·s/rad.
    pub kd: f64,
    /// N·m.
    pub torque_cap: f64,
}

impl Default for ImpedanceParams {
    fn default() -> Self {
        Self { kp: 0.5, kd: 0.005, torque_cap: 0.2 }
    }
}

impl ImpedanceParams {
    pub fn validate(&self, glove_rated: f64) -> Result<()> {
        if !(self.kp >= 0.0 && self.kd >= 0.0 && self.torque_cap >= 0.0) {
            return Err(TeleopError::Config("impedance gains and cap must be non-negative".into()));
        }
        if self.torque_cap > glove_rated {
            return Err(TeleopError::Config(format!(
                "torque_cap {} exceeds the glove servo rating {glove_rated}",
                self.torque_cap
            )));
        }
        Ok(())
    }
}

/// τ = kp(q_contact − q) − kd·ω, each joint clamped to ±torque_cap.
pub fn impedance_torque(params: &ImpedanceParams, q_contact: &[f64], q: &[f64], omega: &[f64]) -> Vec<f64> {
    q_contact
        .iter()
        .zip(q)
        .zip(omega)
        .map(|((qc, q), w)| (params.kp * (qc - q) - params.kd * w).clamp(-params.torque_cap, params.torque_cap))
        .collect()
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

/// The operator's finger, modelled as a spring-damper pulling each glove
/// joint toward the pose the operator intends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorParams {
    /// N·m/rad.
    pub stiffness: f64,
    /// N·m·s/rad.
    pub damping: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self { stiffness: 2.0, damping: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeleopConfig {
    /// Control period, s.
    pub dt: f64,
    pub hand_goal_pwm: u16,
    /// Fingertip contact sphere radius, m.
    pub tip_radius: f64,
    pub detector: ContactDetector,
    pub impedance: ImpedanceParams,
    pub operator: OperatorParams,
    pub retarget: RetargetConfig,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            hand_goal_pwm: 600,
            tip_radius: 0.008,
            detector: ContactDetector::default(),
            impedance: ImpedanceParams::default(),
            operator: OperatorParams::default(),
            retarget: RetargetConfig::default(),
        }
    }
}

impl TeleopConfig {
    pub fn validate(&self, glove_profile: &ServoProfile) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(TeleopError::Config("dt must lie in (0, 0.1] s".into()));
        }
        if !(self.tip_radius > 0.0) {
            return Err(TeleopError::Config("tip_radius must be positive".into()));
        }
        if self.hand_goal_pwm as i32 > bus::PWM_LIMIT {
            return Err(TeleopError::Config("hand_goal_pwm exceeds 885".into()));
        }
        if !(self.operator.stiffness >= 0.0 && self.operator.damping >= 0.0) {
            return Err(TeleopError::Config("operator stiffness and damping must be non-negative".into()));
        }
        self.detector.validate()?;
        self.impedance.validate(glove_profile.rated_torque)?;
        self.retarget.validate()?;
        Ok(())
    }
}

/// One control cycle. Angles in degrees, positions in metres, torques in N·m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub timestamp: f64,
    pub q_glove: Vec<f64>,
    pub q_hand: Vec<f64>,
    pub tips_glove: Vec<[f64; 3]>,
    pub tips_hand: Vec<[f64; 3]>,
    pub modes: Vec<FingerMode>,
    pub contact_flags: Vec<bool>,
    pub feedback_torques: Vec<f64>,
}

/// Virtual glove and hand, each on its own bus.
pub struct SimRig {
    pub glove_bus: SharedBus,
    pub hand_bus: SharedBus,
}

impl SimRig {
    pub fn new(glove: &HandModel, glove_profile: &ServoProfile, hand: &HandModel, hand_profile: &ServoProfile) -> Result<Self> {
        let build = |model: &HandModel, profile: &ServoProfile| -> Result<SharedBus> {
            let mut b = VirtualBus::new();
            for j in model.joints() {
                b.attach_servo(j.motor_id, profile.clone())?;
            }
            Ok(b.into_shared())
        };
        Ok(Self { glove_bus: build(glove, glove_profile)?, hand_bus: build(hand, hand_profile)? })
    }
}

/// Models and servo profiles of the glove and hand.
#[derive(Debug, Clone)]
pub struct RigSpec {
    pub glove: HandModel,
    pub glove_profile: ServoProfile,
    pub hand: HandModel,
    pub hand_profile: ServoProfile,
}

impl RigSpec {
    /// Shipped EX12 glove on M077 servos and GX11 hand on M288 servos.
    pub fn nominal() -> Self {
        use crate::fixtures;
        Self { glove: fixtures::ex12(), glove_profile: fixtures::m077(), hand: fixtures::gx11(), hand_profile: fixtures::m288() }
    }
}

type Port = Box<dyn Transport>;

pub struct Session {
    pub config: TeleopConfig,
    glove: Device<Port>,
    hand: Device<Port>,
    rig: SimRig,
    hand_torque_constant: f64,
    glove_torque_constant: f64,
    retarget: RetargetState,
    scene: Option<SceneObject>,
    fsm: Vec<FingerFsm>,
    q_contact: Vec<Vec<f64>>,
    operator_target: Vec<f64>,
    ticks: u64,
    glove_wire: Option<WireLog>,
}

fn rad(deg: &[f64]) -> Vec<f64> {
    deg.iter().map(|d| d.to_radians()).collect()
}

impl Session {
    /// Build the rig, connect both devices and place the glove at `initial`
    /// (degrees; the glove home pose when `None`).
    pub fn new(
        config: TeleopConfig,
        spec: RigSpec,
        scene: Option<SceneObject>,
        initial: Option<&[f64]>,
        capture_glove_wire: bool,
    ) -> Result<Self> {
        let RigSpec { glove: glove_model, glove_profile, hand: hand_model, hand_profile } = spec;
        config.validate(&glove_profile)?;
        config.retarget.validate_for(&glove_model)?;
        config.retarget.validate_for(&hand_model)?;
        if let Some(s) = &scene {
            s.validate()?;
        }
        if glove_model.fingers.iter().map(|f| f.name).ne(hand_model.fingers.iter().map(|f| f.name)) {
            return Err(TeleopError::Config("glove and hand must declare the same fingers in the same order".into()));
        }
        let rig = SimRig::new(&glove_model, &glove_profile, &hand_model, &hand_profile)?;
        let (glove_port, glove_wire): (Port, _) = if capture_glove_wire {
            let (tap, log) = Tap::new(LoopbackBus::new(rig.glove_bus.clone()));
            (Box::new(tap), Some(log))
        } else {
            (Box::new(LoopbackBus::new(rig.glove_bus.clone())), None)
        };
        let initial: Vec<f64> = match initial {
            Some(q) => {
                if q.len() != glove_model.dof() {
                    return Err(KinematicsError::DimensionMismatch { expected: glove_model.dof(), got: q.len() }.into());
                }
                q.to_vec()
            }
            None => glove_model.home().iter().map(|q| q.to_degrees()).collect(),
        };
        {
            let mut g = bus::lock(&rig.glove_bus);
            for (j, q) in glove_model.joints().zip(&initial) {
                let s = g.servo_mut(j.motor_id).expect("attached");
                s.set_theta(bus::ticks_to_rad(j.zero_tick) + q.to_radians());
            }
        }
        let mut glove = Device::new(glove_model.clone(), glove_port);
        let mut hand = Device::new(hand_model.clone(), Box::new(LoopbackBus::new(rig.hand_bus.clone())) as Port);
        // The glove stays limp until a finger engages; switching every joint
        // to current mode up front keeps later engagements to one torque write.
        glove.connect_passive().map_err(TeleopError::Glove)?;
        for i in 0..glove.motor_count() {
            glove.set_mode(i, OperatingMode::Current).map_err(TeleopError::Glove)?;
        }
        hand.connect(config.hand_goal_pwm).map_err(TeleopError::Hand)?;
        let n = glove_model.fingers.len();
        let mut session = Self {
            glove_torque_constant: glove_profile.torque_constant(),
            hand_torque_constant: hand_profile.torque_constant(),
            retarget: RetargetState::new(&hand_model),
            scene,
            fsm: vec![FingerFsm::default(); n],
            q_contact: vec![Vec::new(); n],
            operator_target: initial.clone(),
            ticks: 0,
            glove_wire,
            config,
            glove,
            hand,
            rig,
        };
        session.set_operator_target(&initial)?;
        Ok(session)
    }

    pub fn glove_model(&self) -> &HandModel {
        self.glove.model()
    }

    pub fn hand_model(&self) -> &HandModel {
        self.hand.model()
    }

    pub fn rig(&self) -> &SimRig {
        &self.rig
    }

    pub fn glove_wire(&self) -> Option<&WireLog> {
        self.glove_wire.as_ref()
    }

    pub fn scene(&self) -> Option<&SceneObject> {
        self.scene.as_ref()
    }

    pub fn set_scene(&mut self, scene: Option<SceneObject>) -> Result<()> {
        if let Some(s) = &scene {
            s.validate()?;
        }
        self.scene = scene;
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.config.dt
    }

    pub fn modes(&self) -> Vec<FingerMode> {
        self.fsm.iter().map(|f| f.mode).collect()
    }

    pub fn operator_target(&self) -> &[f64] {
        &self.operator_target
    }

    /// Restart warm starting from scratch (the next frame is solved as a
    /// first frame).
    pub fn reset_retarget(&mut self) {
        let model = self.hand.model().clone();
        self.retarget.reset(&model);
    }

    /// Pose (degrees) the operator pulls the glove toward. Values are clamped
    /// to the glove joint limits.
    pub fn set_operator_target(&mut self, deg: &[f64]) -> Result<()> {
        let model = self.glove.model();
        if deg.len() != model.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: model.dof(), got: deg.len() }.into());
        }
        if deg.iter().any(|d| !d.is_finite()) {
            return Err(TeleopError::Config("operator target must be finite".into()));
        }
        let clamped: Vec<f64> = model
            .joints()
            .zip(deg)
            .map(|(j, d)| d.clamp(j.limit_lo.to_degrees(), j.limit_hi.to_degrees()))
            .collect();
        let springs: Vec<(u8, f64)> =
            model.joints().zip(&clamped).map(|(j, d)| (j.motor_id, bus::ticks_to_rad(j.zero_tick) + d.to_radians())).collect();
        let op = self.config.operator;
        let mut g = bus::lock(&self.rig.glove_bus);
        for (id, target) in springs {
            g.servo_mut(id).expect("attached").external_spring =
                Some(ExternalSpring { target, stiffness: op.stiffness, damping: op.damping });
        }
        drop(g);
        self.operator_target = clamped;
        Ok(())
    }

    /// One control cycle.
    pub fn tick(&mut self) -> Result<TickReport> {
        let glove_model = self.glove.model().clone();
        let hand_model = self.hand.model().clone();
        let dt = self.config.dt;

        // Read the glove and retarget onto the hand.
        let q_glove = self.glove.getj().map_err(TeleopError::Glove)?;
        let omega_glove = self.glove.getv().map_err(TeleopError::Glove)?;
        let qg = rad(&q_glove);
        let u = retarget::glove_keyvectors(&glove_model, &qg, &self.config.retarget.specs)?;
        let q_cmd = retarget::solve_frame(&hand_model, &u, &mut self.retarget, &self.config.retarget)?;
        let q_cmd_deg: Vec<f64> = q_cmd.iter().map(|q| q.to_degrees()).collect();
        self.hand.setj_all(&q_cmd_deg).map_err(TeleopError::Hand)?;

        bus::lock(&self.rig.hand_bus).step(dt);
        bus::lock(&self.rig.glove_bus).step(dt);

        // Contact on the measured hand pose.
        let q_hand = self.hand.getj().map_err(TeleopError::Hand)?;
        let qh = rad(&q_hand);
        let fk_hand = kinematics::forward_kinematics(&hand_model, &qh)?;
        let contacts = contact_forces(self.scene.as_ref(), &fk_hand.tips, self.config.tip_radius);
        {
            let mut hb = bus::lock(&self.rig.hand_bus);
            for (f, c) in hand_model.fingers.iter().zip(&contacts) {
                let range = hand_model.finger_range(f.name)?;
                let ma = simulated_present_current(&hand_model, f.name, &qh[range], &c.force, self.hand_torque_constant)?;
                for (j, m) in f.joints.iter().zip(ma) {
                    hb.servo_mut(j.motor_id).expect("attached").inject_present_current(m);
                }
            }
        }
        let currents = self.hand.currents().map_err(TeleopError::Hand)?;

        // Detector, then glove feedback.
        let mut feedback = vec![0.0; glove_model.dof()];
        let mut goal_currents = Vec::new();
        let mut engage = Vec::new();
        let mut release = Vec::new();
        for (fi, (hf, gf)) in hand_model.fingers.iter().zip(&glove_model.fingers).enumerate() {
            let before = self.fsm[fi].mode;
            let mode = self.fsm[fi].update(&self.config.detector, &currents[hand_model.finger_range(hf.name)?]);
            let grange = glove_model.finger_range(gf.name)?;
            if mode != before {
                tracing::debug!(finger = %gf.name, ?mode, t = self.time(), "finger mode change");
            }
            match mode {
                FingerMode::Engaged => {
                    if before == FingerMode::Free {
                        self.q_contact[fi] = qg[grange.clone()].to_vec();
                        engage.extend(grange.clone());
                    }
                    let tau = impedance_torque(
                        &self.config.impedance,
                        &self.q_contact[fi],
                        &qg[grange.clone()],
                        &omega_glove[grange.clone()],
                    );
                    for (i, t) in grange.zip(tau) {
                        feedback[i] = t;
                        let ma = (t / self.glove_torque_constant * 1000.0).round();
                        goal_currents.push((i, ma.clamp(-(bus::CURRENT_LIMIT_MA as f64), bus::CURRENT_LIMIT_MA as f64) as i16));
                    }
                }
                FingerMode::Free => {
                    if before == FingerMode::Engaged {
                        release.extend(grange);
                    }
                }
            }
        }
        self.glove.set_torque_many(&release, false).map_err(TeleopError::Glove)?;
        self.glove.set_goal_currents(&goal_currents).map_err(TeleopError::Glove)?;
        self.glove.set_torque_many(&engage, true).map_err(TeleopError::Glove)?;

        let tips_glove = kinematics::forward_kinematics(&glove_model, &qg)?.tips;
        self.ticks += 1;
        Ok(TickReport {
            timestamp: self.time(),
            q_glove,
            q_hand,
            tips_glove: tips_glove.iter().map(|p| [p.x, p.y, p.z]).collect(),
            tips_hand: fk_hand.tips.iter().map(|p| [p.x, p.y, p.z]).collect(),
            modes: self.modes(),
            contact_flags: contacts.iter().map(|c| c.contact).collect(),
            feedback_torques: feedback,
        })
    }
}

/// Linear interpolation of a gesture (times `t`, poses in degrees) at time
/// `at`; holds the end poses outside the recorded span.
pub fn sample_gesture(times: &[f64], poses: &[Vec<f64>], at: f64) -> Vec<f64> {
    match times.iter().position(|&t| t > at) {
        Some(0) => poses[0].clone(),
        None => poses[poses.len() - 1].clone(),
        Some(k) => {
            let (t0, t1) = (times[k - 1], times[k]);
            let s = (at - t0) / (t1 - t0);
            poses[k - 1].iter().zip(&poses[k]).map(|(a, b)| a + s * (b - a)).collect()
        }
    }
}

/// One finger mode change during a replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub t: f64,
    pub finger: Finger,
    pub mode: FingerMode,
}

/// Outcome of a headless gesture replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub ticks: u64,
    pub duration: f64,
    /// Fingers that were Engaged at some point.
    pub engaged_fingers: Vec<Finger>,
    /// Longest uninterrupted contact per finger, s.
    pub contact_persistence: Vec<f64>,
    /// Largest |feedback torque| per finger, N·m.
    pub max_feedback_torque: Vec<f64>,
    pub mode_timeline: Vec<ModeChange>,
}

/// Operator targets of a gesture at each control tick from its first record
/// through its last.
#[derive(Debug, Clone)]
pub struct GesturePlayer {
    times: Vec<f64>,
    poses: Vec<Vec<f64>>,
    dt: f64,
    ticks: u64,
}

impl GesturePlayer {
    pub fn new(gesture: &[GestureRecord], dt: f64) -> Result<Self> {
        let (Some(first), Some(last)) = (gesture.first(), gesture.last()) else {
            return Err(TeleopError::Config("empty gesture".into()));
        };
        let ticks = ((last.t - first.t) / dt + 1e-9).floor() as u64 + 1;
        Ok(Self {
            times: gesture.iter().map(|g| g.t).collect(),
            poses: gesture.iter().map(|g| g.q_glove.clone()).collect(),
            dt,
            ticks,
        })
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn initial(&self) -> &[f64] {
        &self.poses[0]
    }

    /// Target for tick `k`, or `None` once the gesture has ended.
    pub fn target(&self, k: u64) -> Option<Vec<f64>> {
        (k < self.ticks).then(|| sample_gesture(&self.times, &self.poses, self.times[0] + k as f64 * self.dt))
    }
}

/// Accumulates a [`ReplaySummary`] from consecutive tick reports.
#[derive(Debug, Clone)]
pub struct ReplayTracker {
    fingers: Vec<Finger>,
    joint_finger: Vec<usize>,
    dt: f64,
    ticks: u64,
    engaged: Vec<bool>,
    run: Vec<u64>,
    best: Vec<u64>,
    max_tau: Vec<f64>,
    timeline: Vec<ModeChange>,
    prev_modes: Vec<FingerMode>,
}

impl ReplayTracker {
    pub fn new(session: &Session) -> Self {
        let model = session.glove_model();
        let fingers: Vec<Finger> = model.fingers.iter().map(|f| f.name).collect();
        let joint_finger = model
            .joint_fingers()
            .iter()
            .map(|f| fingers.iter().position(|x| x == f).expect("same fingers"))
            .collect();
        let n = fingers.len();
        Self {
            fingers,
            joint_finger,
            dt: session.config.dt,
            ticks: 0,
            engaged: vec![false; n],
            run: vec![0; n],
            best: vec![0; n],
            max_tau: vec![0.0; n],
            timeline: Vec::new(),
            prev_modes: session.modes(),
        }
    }

    pub fn observe(&mut self, report: &TickReport) {
        for (fi, &finger) in self.fingers.iter().enumerate() {
            let mode = report.modes[fi];
            if mode != self.prev_modes[fi] {
                self.timeline.push(ModeChange { t: report.timestamp, finger, mode });
            }
            self.engaged[fi] |= mode == FingerMode::Engaged;
            self.run[fi] = if report.contact_flags[fi] { self.run[fi] + 1 } else { 0 };
            self.best[fi] = self.best[fi].max(self.run[fi]);
        }
        for (tau, &fi) in report.feedback_torques.iter().zip(&self.joint_finger) {
            self.max_tau[fi] = self.max_tau[fi].max(tau.abs());
        }
        self.prev_modes.clone_from(&report.modes);
        self.ticks += 1;
    }

    pub fn finish(self) -> ReplaySummary {
        let dt = self.dt;
        ReplaySummary {
            ticks: self.ticks,
            duration: self.ticks as f64 * dt,
            engaged_fingers: self.fingers.iter().zip(&self.engaged).filter(|(_, e)| **e).map(|(f, _)| *f).collect(),
            // A contact seen on n consecutive ticks spans n − 1 control periods.
            contact_persistence: self.best.iter().map(|&b| b.saturating_sub(1) as f64 * dt).collect(),
            max_feedback_torque: self.max_tau,
            mode_timeline: self.timeline,
        }
    }
}

/// Drive `session` with a recorded gesture as the operator target, one tick
/// per control period from t = 0 through the last record.
pub fn replay_gesture(
    session: &mut Session,
    gesture: &[GestureRecord],
    mut on_tick: impl FnMut(&TickReport),
) -> Result<ReplaySummary> {
    let player = GesturePlayer::new(gesture, session.config.dt)?;
    let mut tracker = ReplayTracker::new(session);
    let mut k = 0;
    while let Some(target) = player.target(k) {
        session.set_operator_target(&target)?;
        let report = session.tick()?;
        tracker.observe(&report);
        on_tick(&report);
        k += 1;
    }
    Ok(tracker.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_debounces_and_releases() {
        let det = ContactDetector::default();
        let modes = run_detector(&det, &[70.0, 70.0, 70.0, 40.0, 20.0, 20.0, 20.0]);
        use FingerMode::*;
        assert_eq!(modes, vec![Free, Free, Engaged, Engaged, Engaged, Engaged, Free]);
    }

    #[test]
    fn impedance_equilibrium_and_clamp() {
        let p = ImpedanceParams { kp: 1.0, kd: 0.1, torque_cap: 0.2 };
        assert_eq!(impedance_torque(&p, &[0.3], &[0.3], &[0.0]), vec![0.0]);
        assert_eq!(impedance_torque(&p, &[0.0], &[1.0], &[0.0]), vec![-0.2]);
        assert_eq!(impedance_torque(&p, &[1.0], &[0.0], &[0.0]), vec![0.2]);
    }

    #[test]
    fn gesture_sampling_interpolates_and_holds() {
        let t = [0.0, 1.0];
        let p = vec![vec![0.0], vec![10.0]];
        assert_eq!(sample_gesture(&t, &p, -1.0), vec![0.0]);
        assert_eq!(sample_gesture(&t, &p, 0.25), vec![2.5]);
        assert_eq!(sample_gesture(&t, &p, 5.0), vec![10.0]);
    }
}
