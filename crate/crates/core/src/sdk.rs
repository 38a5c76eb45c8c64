//! Hand and glove handles over the servo bus: connect, home, joint get/set in
//! degrees, operating modes and per-finger forward kinematics.
//!
//! Motors are indexed from 0 in model declaration order. Fingers are named
//! (or numbered from 1 in [`Device::fk_finger_number`]).

use std::collections::BTreeMap;
use std::time::Duration;

use crate::bus::{reg, OperatingMode, TICKS_PER_REV};
use crate::kinematics::{self, Finger, HandModel, KinematicsError, Vec3};
use crate::protocol::{
    build_sync_read, build_sync_write, encode, InstructionPacket, Packet, ProtocolError, StatusError, StatusPacket,
    StreamDecoder,
};
use crate::transport::Transport;

/// Cached joint readings older than this are refreshed before use.
pub const CACHE_MAX_AGE: f64 = 0.05;
pub const HOME_TOLERANCE_DEG: f64 = 1.0;
pub const HOME_TIMEOUT: f64 = 2.0;
const HOME_POLL: Duration = Duration::from_millis(10);
const LIMIT_SLACK: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SdkError {
    #[error("device is not connected")]
    Disconnected,
    #[error("torque is disabled on motor(s) {0:?}")]
    TorqueDisabled(Vec<usize>),
    #[error("servo id(s) {0:?} did not answer")]
    Missing(Vec<u8>),
    #[error("motor index {index} out of range (device has {count})")]
    BadIndex { index: usize, count: usize },
    #[error("{value:.3}° is outside [{lo:.3}°, {hi:.3}°] for joint `{joint}`")]
    Limit { joint: String, value: f64, lo: f64, hi: f64 },
    #[error("servo {id} reported error: {}", .error.describe())]
    Servo { id: u8, error: StatusError },
    #[error("read incomplete, no answer from id(s) {missing:?}")]
    Partial { values: Vec<Option<f64>>, missing: Vec<u8> },
    #[error("home timed out, residuals (deg) {residuals:?}")]
    HomeTimeout { residuals: Vec<f64> },
    #[error("unexpected reply from id {0}")]
    UnexpectedReply(u8),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SdkError> = std::result::Result<T, E>;

/// Degrees relative to the joint zero → absolute Goal Position ticks.
pub fn deg_to_ticks(deg: f64, zero_tick: u32) -> i64 {
    zero_tick as i64 + (deg * TICKS_PER_REV as f64 / 360.0).round() as i64
}

/// Absolute encoder ticks → degrees relative to the joint zero, wrapped to
/// (−180°, 180°].
pub fn ticks_to_deg(ticks: u32, zero_tick: u32) -> f64 {
    let n = TICKS_PER_REV as i64;
    let half = n / 2;
    let mut d = (ticks as i64 - zero_tick as i64).rem_euclid(n);
    if d > half {
        d -= n;
    }
    d as f64 * 360.0 / n as f64
}

/// Request/response layer over a byte transport.
pub struct BusClient<T> {
    transport: T,
    decoder: StreamDecoder,
    pub timeout: Duration,
}

impl<T: Transport> BusClient<T> {
    pub fn new(transport: T) -> Self {
        Self { transport, decoder: StreamDecoder::new(), timeout: Duration::from_millis(50) }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn now(&self) -> f64 {
        self.transport.now()
    }

    pub fn idle(&mut self, dur: Duration) {
        self.transport.idle(dur)
    }

    /// Send one frame and collect up to `expected` status packets.
    pub fn transact(&mut self, pkt: &InstructionPacket, expected: usize) -> Result<Vec<StatusPacket>> {
        self.transport.write_all(&encode(pkt)?)?;
        let mut out = Vec::with_capacity(expected);
        let mut buf = [0u8; 512];
        while out.len() < expected {
            let n = self.transport.read(&mut buf, self.timeout)?;
            if n == 0 {
                break;
            }
            out.extend(self.decoder.feed(&buf[..n]).into_iter().filter_map(|p| match p {
                Packet::Status(s) => Some(s),
                Packet::Instruction(_) => None,
            }));
        }
        Ok(out)
    }

    pub fn send(&mut self, pkt: &InstructionPacket) -> Result<()> {
        self.transport.write_all(&encode(pkt)?)?;
        Ok(())
    }

    /// Single-servo request that must produce an error-free status.
    pub fn request(&mut self, pkt: &InstructionPacket) -> Result<StatusPacket> {
        let mut replies = self.transact(pkt, 1)?;
        match replies.pop() {
            None => Err(SdkError::Missing(vec![pkt.id])),
            Some(s) if s.id != pkt.id => Err(SdkError::UnexpectedReply(s.id)),
            Some(s) if !s.error.is_ok() => Err(SdkError::Servo { id: s.id, error: s.error }),
            Some(s) => Ok(s),
        }
    }
}

/// Binding between model joints and bus ids.
#[derive(Debug, Clone)]
pub struct DeviceBinding {
    pub model: HandModel,
    pub id_to_joint: BTreeMap<u8, (Finger, usize)>,
}

impl DeviceBinding {
    pub fn new(model: HandModel) -> Self {
        let mut id_to_joint = BTreeMap::new();
        for f in &model.fingers {
            for (j, joint) in f.joints.iter().enumerate() {
                id_to_joint.insert(joint.motor_id, (f.name, j));
            }
        }
        Self { model, id_to_joint }
    }

    /// Bus ids in motor-index order.
    pub fn ids(&self) -> Vec<u8> {
        self.model.joints().map(|j| j.motor_id).collect()
    }
}

#[derive(Debug, Clone)]
struct JointCache {
    at: f64,
    deg: Vec<f64>,
}

/// A hand or glove on one transport.
pub struct Device<T> {
    binding: DeviceBinding,
    client: BusClient<T>,
    connected: bool,
    torque: Vec<bool>,
    cache: Option<JointCache>,
}

impl<T: Transport> Device<T> {
    pub fn new(model: HandModel, transport: T) -> Self {
        let n = model.dof();
        Self {
            binding: DeviceBinding::new(model),
            client: BusClient::new(transport),
            connected: false,
            torque: vec![false; n],
            cache: None,
        }
    }

    pub fn model(&self) -> &HandModel {
        &self.binding.model
    }

    pub fn binding(&self) -> &DeviceBinding {
        &self.binding
    }

    pub fn client(&mut self) -> &mut BusClient<T> {
        &mut self.client
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn motor_count(&self) -> usize {
        self.binding.model.dof()
    }

    /// Ping every bound servo, then write Goal PWM and torque on all motors.
    pub fn connect(&mut self, goal_pwm: u16) -> Result<()> {
        self.ping_all()?;
        self.connected = true;
        let ids = self.binding.ids();
        let pwm: Vec<_> = ids.iter().map(|&id| (id, goal_pwm.to_le_bytes().to_vec())).collect();
        self.sync_write(reg::GOAL_PWM, 2, pwm)?;
        self.set_torque_all(true)
    }

    /// Ping every bound servo without writing any register.
    pub fn connect_passive(&mut self) -> Result<()> {
        self.ping_all()?;
        self.connected = true;
        Ok(())
    }

    pub fn disconnect(&mut self) {
        self.connected = false;
        self.cache = None;
    }

    fn ping_all(&mut self) -> Result<()> {
        let mut missing = Vec::new();
        for id in self.binding.ids() {
            let replies = self.client.transact(&InstructionPacket::ping(id), 1)?;
            if !replies.iter().any(|s| s.id == id) {
                missing.push(id);
            }
        }
        if missing.is_empty() { Ok(()) } else { Err(SdkError::Missing(missing)) }
    }

    fn ensure_connected(&self) -> Result<()> {
        if self.connected { Ok(()) } else { Err(SdkError::Disconnected) }
    }

    fn check_index(&self, index: usize) -> Result<u8> {
        let count = self.motor_count();
        self.binding
            .model
            .joints()
            .nth(index)
            .map(|j| j.motor_id)
            .ok_or(SdkError::BadIndex { index, count })
    }

    fn sync_write(&mut self, addr: u16, width: u16, entries: Vec<(u8, Vec<u8>)>) -> Result<()> {
        let pkt = build_sync_write(addr, width, &entries)?;
        self.client.send(&pkt)
    }

    fn write_one(&mut self, index: usize, addr: u16, data: &[u8]) -> Result<()> {
        self.ensure_connected()?;
        let id = self.check_index(index)?;
        self.client.request(&InstructionPacket::write(id, addr, data))?;
        Ok(())
    }

    pub fn set_torque(&mut self, index: usize, on: bool) -> Result<()> {
        self.write_one(index, reg::TORQUE_ENABLE, &[on as u8])?;
        self.torque[index] = on;
        Ok(())
    }

    /// Torque on or off for every motor in one frame.
    pub fn set_torque_all(&mut self, on: bool) -> Result<()> {
        self.ensure_connected()?;
        let entries = self.binding.ids().into_iter().map(|id| (id, vec![on as u8])).collect();
        self.sync_write(reg::TORQUE_ENABLE, 1, entries)?;
        self.torque.iter_mut().for_each(|t| *t = on);
        Ok(())
    }

    /// Torque on or off for a subset of motors in one frame.
    pub fn set_torque_many(&mut self, indices: &[usize], on: bool) -> Result<()> {
        self.ensure_connected()?;
        if indices.is_empty() {
            return Ok(());
        }
        let entries = indices
            .iter()
            .map(|&i| Ok((self.check_index(i)?, vec![on as u8])))
            .collect::<Result<Vec<_>>>()?;
        self.sync_write(reg::TORQUE_ENABLE, 1, entries)?;
        for &i in indices {
            self.torque[i] = on;
        }
        Ok(())
    }

    pub fn torque_enabled(&self, index: usize) -> bool {
        self.torque.get(index).copied().unwrap_or(false)
    }

    /// Write the Operating Mode register. The servo refuses while torque is on.
    pub fn set_mode(&mut self, index: usize, mode: OperatingMode) -> Result<()> {
        self.write_one(index, reg::OPERATING_MODE, &[mode.to_byte()])
    }

    /// Torque off, change mode, torque back on.
    pub fn switch_mode(&mut self, index: usize, mode: OperatingMode) -> Result<()> {
        self.set_torque(index, false)?;
        self.set_mode(index, mode)?;
        self.set_torque(index, true)
    }

    pub fn set_goal_current(&mut self, index: usize, milliamps: i16) -> Result<()> {
        self.write_one(index, reg::GOAL_CURRENT, &milliamps.to_le_bytes())
    }

    /// Goal currents for several motors in one frame.
    pub fn set_goal_currents(&mut self, targets: &[(usize, i16)]) -> Result<()> {
        self.ensure_connected()?;
        if targets.is_empty() {
            return Ok(());
        }
        let entries = targets
            .iter()
            .map(|&(i, ma)| Ok((self.check_index(i)?, ma.to_le_bytes().to_vec())))
            .collect::<Result<Vec<_>>>()?;
        self.sync_write(reg::GOAL_CURRENT, 2, entries)
    }

    fn goal_ticks(&self, index: usize, deg: f64) -> Result<u32> {
        let joint = self.binding.model.joints().nth(index).ok_or(SdkError::BadIndex {
            index,
            count: self.motor_count(),
        })?;
        let rad = deg.to_radians();
        if !deg.is_finite() || rad < joint.limit_lo - LIMIT_SLACK || rad > joint.limit_hi + LIMIT_SLACK {
            return Err(SdkError::Limit {
                joint: joint.name.clone(),
                value: deg,
                lo: joint.limit_lo.to_degrees(),
                hi: joint.limit_hi.to_degrees(),
            });
        }
        Ok(deg_to_ticks(deg, joint.zero_tick).rem_euclid(TICKS_PER_REV as i64) as u32)
    }

    pub fn setj(&mut self, index: usize, deg: f64) -> Result<()> {
        self.ensure_connected()?;
        let ticks = self.goal_ticks(index, deg)?;
        self.write_one(index, reg::GOAL_POSITION, &ticks.to_le_bytes())
    }

    /// Goal positions for every motor in one SYNC_WRITE frame.
    pub fn setj_all(&mut self, deg: &[f64]) -> Result<()> {
        self.ensure_connected()?;
        let n = self.motor_count();
        if deg.len() != n {
            return Err(KinematicsError::DimensionMismatch { expected: n, got: deg.len() }.into());
        }
        let ids = self.binding.ids();
        let entries = deg
            .iter()
            .enumerate()
            .map(|(i, &d)| Ok((ids[i], self.goal_ticks(i, d)?.to_le_bytes().to_vec())))
            .collect::<Result<Vec<_>>>()?;
        self.sync_write(reg::GOAL_POSITION, 4, entries)
    }

    fn sync_read_all(&mut self, addr: u16, width: u16) -> Result<Vec<Option<i64>>> {
        self.ensure_connected()?;
        let ids = self.binding.ids();
        let replies = self.client.transact(&build_sync_read(addr, width, &ids)?, ids.len())?;
        let mut values = vec![None; ids.len()];
        for s in replies {
            let Some(slot) = ids.iter().position(|&id| id == s.id) else {
                return Err(SdkError::UnexpectedReply(s.id));
            };
            if !s.error.is_ok() {
                return Err(SdkError::Servo { id: s.id, error: s.error });
            }
            if s.params.len() != width as usize {
                return Err(SdkError::UnexpectedReply(s.id));
            }
            let mut buf = [0u8; 8];
            buf[..width as usize].copy_from_slice(&s.params);
            let raw = i64::from_le_bytes(buf);
            let shift = 64 - 8 * width as u32;
            values[slot] = Some((raw << shift) >> shift);
        }
        Ok(values)
    }

    fn complete<F: Fn(usize, i64) -> f64>(&self, raw: Vec<Option<i64>>, convert: F) -> Result<Vec<f64>> {
        let ids = self.binding.ids();
        let values: Vec<Option<f64>> = raw.iter().enumerate().map(|(i, v)| v.map(|v| convert(i, v))).collect();
        let missing: Vec<u8> = values.iter().zip(&ids).filter(|(v, _)| v.is_none()).map(|(_, &id)| id).collect();
        if missing.is_empty() {
            Ok(values.into_iter().flatten().collect())
        } else {
            Err(SdkError::Partial { values, missing })
        }
    }

    /// Present Position of every joint in degrees, via one SYNC_READ.
    pub fn getj(&mut self) -> Result<Vec<f64>> {
        let raw = self.sync_read_all(reg::PRESENT_POSITION, 4)?;
        let zeros: Vec<u32> = self.binding.model.joints().map(|j| j.zero_tick).collect();
        let deg = self.complete(raw, |i, v| ticks_to_deg(v as u32, zeros[i]))?;
        self.cache = Some(JointCache { at: self.client.now(), deg: deg.clone() });
        Ok(deg)
    }

    /// Present Velocity of every joint in rad/s.
    pub fn getv(&mut self) -> Result<Vec<f64>> {
        let raw = self.sync_read_all(reg::PRESENT_VELOCITY, 4)?;
        self.complete(raw, |_, v| v as f64 * crate::bus::VELOCITY_UNIT)
    }

    /// Present Current of every joint in mA.
    pub fn currents(&mut self) -> Result<Vec<f64>> {
        let raw = self.sync_read_all(reg::PRESENT_CURRENT, 2)?;
        self.complete(raw, |_, v| v as f64)
    }

    /// Joint angles in degrees, reusing a reading younger than 50 ms.
    pub fn joints_cached(&mut self) -> Result<Vec<f64>> {
        self.ensure_connected()?;
        match &self.cache {
            Some(c) if self.client.now() - c.at <= CACHE_MAX_AGE => Ok(c.deg.clone()),
            _ => self.getj(),
        }
    }

    /// Fingertip position in the palm base frame, metres.
    pub fn fk_finger(&mut self, finger: Finger) -> Result<Vec3> {
        let deg = self.joints_cached()?;
        let q: Vec<f64> = deg.iter().map(|d| d.to_radians()).collect();
        let range = self.binding.model.finger_range(finger)?;
        Ok(kinematics::fingertip(&self.binding.model, finger, &q[range])?)
    }

    /// Fingertip by 1-based finger number in declaration order.
    pub fn fk_finger_number(&mut self, number: usize) -> Result<Vec3> {
        let finger = number
            .checked_sub(1)
            .and_then(|i| self.binding.model.fingers.get(i))
            .map(|f| f.name)
            .ok_or_else(|| KinematicsError::UnknownFinger(number.to_string()))?;
        self.fk_finger(finger)
    }

    /// Command the home pose in one frame and wait until every joint is within
    /// 1° of it, or fail after 2 s with the residuals.
    pub fn home(&mut self) -> Result<()> {
        self.ensure_connected()?;
        let off: Vec<usize> = (0..self.motor_count()).filter(|&i| !self.torque[i]).collect();
        if !off.is_empty() {
            return Err(SdkError::TorqueDisabled(off));
        }
        let home: Vec<f64> = self.binding.model.home().iter().map(|q| q.to_degrees()).collect();
        self.setj_all(&home)?;
        let start = self.client.now();
        loop {
            let q = self.getj()?;
            let residuals: Vec<f64> = q.iter().zip(&home).map(|(a, b)| a - b).collect();
            if residuals.iter().all(|r| r.abs() <= HOME_TOLERANCE_DEG) {
                return Ok(());
            }
            if self.client.now() - start >= HOME_TIMEOUT {
                return Err(SdkError::HomeTimeout { residuals });
            }
            self.client.idle(HOME_POLL);
        }
    }
}
