//! Virtual multidrop bus of XL330-class servos.
//!
//! Each servo owns a byte-addressable control table and a continuous
//! rotor state integrated semi-implicitly at no more than
//! [`MAX_SUBSTEP`] per integration step.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::protocol::{
    parse_sync_read, parse_sync_write, Instruction, InstructionPacket, StatusError, StatusPacket, BROADCAST_ID,
    MAX_ID,
};

pub const TICKS_PER_REV: u32 = 4096;
/// Encoder resolution in radians.
pub const TICK: f64 = TAU / TICKS_PER_REV as f64;
pub const DEFAULT_BAUD: u32 = 1_000_000;
/// Full-scale PWM value.
pub const PWM_LIMIT: i32 = 885;
pub const CURRENT_LIMIT_MA: i32 = 1750;
pub const VELOCITY_LIMIT: i32 = 445;
/// Present/Goal Velocity unit: 0.229 rpm per LSB.
pub const VELOCITY_UNIT: f64 = 0.229 * TAU / 60.0;
pub const MAX_SUBSTEP: f64 = 1e-3;
/// Gear ratio the profile friction figures are referred to.
pub const REFERENCE_GEAR_RATIO: f64 = 288.0;

/// Control-table addresses.
pub mod reg {
    pub const MODEL_NUMBER: u16 = 0;
    pub const FIRMWARE_VERSION: u16 = 6;
    pub const ID: u16 = 7;
    pub const OPERATING_MODE: u16 = 11;
    pub const TORQUE_ENABLE: u16 = 64;
    pub const GOAL_PWM: u16 = 100;
    pub const GOAL_CURRENT: u16 = 102;
    pub const GOAL_VELOCITY: u16 = 104;
    pub const GOAL_POSITION: u16 = 116;
    pub const PRESENT_CURRENT: u16 = 126;
    pub const PRESENT_VELOCITY: u16 = 128;
    pub const PRESENT_POSITION: u16 = 132;
}

pub const TABLE_LEN: usize = 148;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Access {
    ReadOnly,
    /// Writable only while torque is disabled.
    Eeprom,
    ReadWrite,
}

#[derive(Debug, Clone, Copy)]
pub struct Register {
    pub name: &'static str,
    pub addr: u16,
    pub width: u16,
    access: Access,
}

impl Register {
    pub fn writable(&self) -> bool {
        self.access != Access::ReadOnly
    }
}

const fn r(name: &'static str, addr: u16, width: u16, access: Access) -> Register {
    Register { name, addr, width, access }
}

pub const CONTROL_TABLE: [Register; 12] = [
    r("model_number", reg::MODEL_NUMBER, 2, Access::ReadOnly),
    r("firmware_version", reg::FIRMWARE_VERSION, 1, Access::ReadOnly),
    r("id", reg::ID, 1, Access::ReadOnly),
    r("operating_mode", reg::OPERATING_MODE, 1, Access::Eeprom),
    r("torque_enable", reg::TORQUE_ENABLE, 1, Access::ReadWrite),
    r("goal_pwm", reg::GOAL_PWM, 2, Access::ReadWrite),
    r("goal_current", reg::GOAL_CURRENT, 2, Access::ReadWrite),
    r("goal_velocity", reg::GOAL_VELOCITY, 4, Access::ReadWrite),
    r("goal_position", reg::GOAL_POSITION, 4, Access::ReadWrite),
    r("present_current", reg::PRESENT_CURRENT, 2, Access::ReadOnly),
    r("present_velocity", reg::PRESENT_VELOCITY, 4, Access::ReadOnly),
    r("present_position", reg::PRESENT_POSITION, 4, Access::ReadOnly),
];

pub fn register_at(addr: u16) -> Option<&'static Register> {
    CONTROL_TABLE.iter().find(|r| r.addr == addr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatingMode {
    Current,
    Velocity,
    Position,
    Pwm,
}

impl OperatingMode {
    pub fn to_byte(self) -> u8 {
        match self {
            OperatingMode::Current => 0,
            OperatingMode::Velocity => 1,
            OperatingMode::Position => 3,
            OperatingMode::Pwm => 16,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(OperatingMode::Current),
            1 => Some(OperatingMode::Velocity),
            3 => Some(OperatingMode::Position),
            16 => Some(OperatingMode::Pwm),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BusError {
    #[error("servo id {0} is already attached")]
    DuplicateId(u8),
    #[error("servo id {0} is outside 0..=253")]
    InvalidId(u8),
    #[error("profile parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// Physical parameters of one servo model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoProfile {
    pub model_name: String,
    pub model_number: u16,
    pub gear_ratio: f64,
    /// N·m at the output shaft.
    pub rated_torque: f64,
    #[serde(default = "default_ticks")]
    pub ticks_per_rev: u32,
    /// N·m per A; defaults to 1.0 scaled by gear_ratio / 288.
    #[serde(default)]
    pub torque_constant: Option<f64>,
    /// Coulomb friction referred to a 288:1 gearbox, N·m.
    pub coulomb_friction: f64,
    /// Effective output-side inertia, kg·m².
    pub rotor_inertia_eff: f64,
    /// Position-mode PD gains (N·m/rad, N·m·s/rad).
    pub position_kp: f64,
    pub position_kd: f64,
    /// Velocity-mode gain (N·m·s/rad).
    pub velocity_kv: f64,
}

fn default_ticks() -> u32 {
    TICKS_PER_REV
}

impl ServoProfile {
    pub fn load(text: &str) -> Result<Self, BusError> {
        let p: ServoProfile = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BusError> {
        let bad = |m: &str| Err(BusError::InvalidProfile(format!("{}: {m}", self.model_name)));
        if !(self.rated_torque > 0.0) {
            return bad("rated_torque must be positive");
        }
        if self.ticks_per_rev != TICKS_PER_REV {
            return bad("ticks_per_rev must be 4096");
        }
        if !(self.gear_ratio > 0.0 && self.rotor_inertia_eff > 0.0) {
            return bad("gear_ratio and rotor_inertia_eff must be positive");
        }
        if self.coulomb_friction < 0.0 || self.position_kp < 0.0 || self.position_kd < 0.0 || self.velocity_kv < 0.0 {
            return bad("friction and gains must be non-negative");
        }
        if matches!(self.torque_constant, Some(k) if !(k > 0.0)) {
            return bad("torque_constant must be positive");
        }
        Ok(())
    }

    pub fn torque_constant(&self) -> f64 {
        self.torque_constant.unwrap_or(self.gear_ratio / REFERENCE_GEAR_RATIO)
    }

    /// Friction actually felt at the output of this gearbox.
    pub fn effective_friction(&self) -> f64 {
        self.coulomb_friction * self.gear_ratio / REFERENCE_GEAR_RATIO
    }
}

/// Spring-damper attached to the output shaft from outside the servo (an
/// operator's finger, an object). Evaluated at every integration substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalSpring {
    pub target: f64,
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct VirtualServo {
    pub id: u8,
    pub profile: ServoProfile,
    registers: [u8; TABLE_LEN],
    /// Multi-turn output angle, rad.
    pub theta: f64,
    pub omega: f64,
    pub applied_external_torque: f64,
    pub external_spring: Option<ExternalSpring>,
    last_motor_torque: f64,
    peak_motor_torque: f64,
}

pub fn ticks_to_rad(ticks: u32) -> f64 {
    ticks as f64 * TICK
}

/// Single-turn encoder reading of a multi-turn angle.
pub fn wrap_ticks(theta: f64) -> u32 {
    let t = (theta / TICK).round() as i64;
    t.rem_euclid(TICKS_PER_REV as i64) as u32
}

/// Wrap an angle into [0, 2π).
pub fn wrap_angle(theta: f64) -> f64 {
    theta.rem_euclid(TAU)
}

impl VirtualServo {
    fn new(id: u8, profile: ServoProfile) -> Self {
        let mut s = Self {
            id,
            profile,
            registers: [0; TABLE_LEN],
            theta: PI,
            omega: 0.0,
            applied_external_torque: 0.0,
            external_spring: None,
            last_motor_torque: 0.0,
            peak_motor_torque: 0.0,
        };
        s.put(reg::MODEL_NUMBER, 2, s.profile.model_number as i64);
        s.put(reg::FIRMWARE_VERSION, 1, 52);
        s.put(reg::ID, 1, id as i64);
        s.put(reg::OPERATING_MODE, 1, OperatingMode::Position.to_byte() as i64);
        s.put(reg::GOAL_PWM, 2, PWM_LIMIT as i64);
        s.refresh_present();
        s.put(reg::GOAL_POSITION, 4, s.get(reg::PRESENT_POSITION, 4));
        s
    }

    fn put(&mut self, addr: u16, width: u16, value: i64) {
        let bytes = value.to_le_bytes();
        let a = addr as usize;
        self.registers[a..a + width as usize].copy_from_slice(&bytes[..width as usize]);
    }

    /// Read a register as a sign-extended little-endian integer.
    pub fn get(&self, addr: u16, width: u16) -> i64 {
        let a = addr as usize;
        let mut buf = [0u8; 8];
        buf[..width as usize].copy_from_slice(&self.registers[a..a + width as usize]);
        let raw = i64::from_le_bytes(buf);
        let shift = 64 - 8 * width as u32;
        (raw << shift) >> shift
    }

    pub fn registers(&self) -> &[u8; TABLE_LEN] {
        &self.registers
    }

    pub fn torque_enabled(&self) -> bool {
        self.registers[reg::TORQUE_ENABLE as usize] == 1
    }

    pub fn operating_mode(&self) -> Option<OperatingMode> {
        OperatingMode::from_byte(self.registers[reg::OPERATING_MODE as usize])
    }

    pub fn present_position_ticks(&self) -> u32 {
        self.get(reg::PRESENT_POSITION, 4) as u32
    }

    pub fn present_current_ma(&self) -> i64 {
        self.get(reg::PRESENT_CURRENT, 2)
    }

    /// Motor torque applied during the last integration substep.
    pub fn motor_torque(&self) -> f64 {
        self.last_motor_torque
    }

    pub fn peak_motor_torque(&self) -> f64 {
        self.peak_motor_torque
    }

    pub fn set_theta(&mut self, theta: f64) {
        self.theta = theta;
        self.omega = 0.0;
        self.refresh_present();
        if !self.torque_enabled() {
            self.put(reg::GOAL_POSITION, 4, self.get(reg::PRESENT_POSITION, 4));
        }
    }

    /// Overwrite the Present Current register (simulated load sensing).
    pub fn inject_present_current(&mut self, milliamps: f64) {
        let v = milliamps.round().clamp(i16::MIN as f64, i16::MAX as f64) as i64;
        self.put(reg::PRESENT_CURRENT, 2, v);
    }

    fn refresh_present(&mut self) {
        self.put(reg::PRESENT_POSITION, 4, wrap_ticks(self.theta) as i64);
        let vel = (self.omega / VELOCITY_UNIT).round() as i64;
        self.put(reg::PRESENT_VELOCITY, 4, vel);
        let ma = (self.last_motor_torque / self.profile.torque_constant() * 1000.0).round();
        self.put(reg::PRESENT_CURRENT, 2, ma.clamp(i16::MIN as f64, i16::MAX as f64) as i64);
    }

    fn torque_limit(&self) -> f64 {
        let pwm = self.get(reg::GOAL_PWM, 2).unsigned_abs() as f64;
        self.profile.rated_torque * (pwm / PWM_LIMIT as f64).min(1.0)
    }

    /// Motor torque requested by the active operating mode, after clamping.
    fn commanded_torque(&self) -> f64 {
        if !self.torque_enabled() {
            return 0.0;
        }
        let p = &self.profile;
        let rated = p.rated_torque;
        match self.operating_mode() {
            Some(OperatingMode::Position) => {
                let goal = ticks_to_rad(self.get(reg::GOAL_POSITION, 4) as u32);
                let tau = p.position_kp * (goal - self.theta) - p.position_kd * self.omega;
                let lim = self.torque_limit();
                tau.clamp(-lim, lim)
            }
            Some(OperatingMode::Velocity) => {
                let goal = self.get(reg::GOAL_VELOCITY, 4) as f64 * VELOCITY_UNIT;
                let lim = self.torque_limit();
                // Friction feedforward keeps the proportional loop free of a
                // steady-state deficit.
                let ff = if goal == 0.0 { 0.0 } else { p.effective_friction().copysign(goal) };
                (p.velocity_kv * (goal - self.omega) + ff).clamp(-lim, lim)
            }
            Some(OperatingMode::Current) => {
                let amps = self.get(reg::GOAL_CURRENT, 2) as f64 / 1000.0;
                (p.torque_constant() * amps).clamp(-rated, rated)
            }
            Some(OperatingMode::Pwm) => {
                let pwm = self.get(reg::GOAL_PWM, 2) as f64;
                (rated * pwm / PWM_LIMIT as f64).clamp(-rated, rated)
            }
            None => 0.0,
        }
    }

    fn integrate(&mut self, dt: f64) {
        let motor = self.commanded_torque();
        let mut external = self.applied_external_torque;
        if let Some(s) = self.external_spring {
            external += s.stiffness * (s.target - self.theta) - s.damping * self.omega;
        }
        let inertia = self.profile.rotor_inertia_eff;
        let free = self.omega + dt * (motor + external) / inertia;
        // Coulomb friction removes at most this much speed in one substep and
        // never reverses the direction of motion.
        let stop = self.profile.effective_friction() * dt / inertia;
        self.omega = if free.abs() <= stop { 0.0 } else { free - stop.copysign(free) };
        self.theta += dt * self.omega;
        self.last_motor_torque = motor;
        self.peak_motor_torque = self.peak_motor_torque.max(motor.abs());
    }

    fn read(&self, addr: u16, len: u16) -> Result<Vec<u8>, u8> {
        let end = addr as usize + len as usize;
        if len == 0 || end > TABLE_LEN {
            return Err(StatusError::ACCESS);
        }
        Ok(self.registers[addr as usize..end].to_vec())
    }

    fn write(&mut self, addr: u16, data: &[u8]) -> Result<(), u8> {
        let start = addr as usize;
        let end = start + data.len();
        if data.is_empty() || end > TABLE_LEN {
            return Err(StatusError::ACCESS);
        }
        // Every written byte must belong to a writable register that the
        // write covers completely.
        let mut touched = Vec::new();
        let mut pos = start;
        while pos < end {
            let reg = CONTROL_TABLE
                .iter()
                .find(|r| r.addr as usize == pos)
                .ok_or(StatusError::ACCESS)?;
            if pos + reg.width as usize > end {
                return Err(StatusError::DATA_LENGTH);
            }
            touched.push(*reg);
            pos += reg.width as usize;
        }
        let torque_on = self.torque_enabled();
        let value_of = |r: &Register| {
            let off = r.addr as usize - start;
            let mut buf = [0u8; 8];
            buf[..r.width as usize].copy_from_slice(&data[off..off + r.width as usize]);
            let shift = 64 - 8 * r.width as u32;
            (i64::from_le_bytes(buf) << shift) >> shift
        };
        let mode_after = touched
            .iter()
            .find(|r| r.addr == reg::OPERATING_MODE)
            .map(|r| value_of(r) as u8)
            .unwrap_or(self.registers[reg::OPERATING_MODE as usize]);
        for r in &touched {
            let v = value_of(r);
            match r.access {
                Access::ReadOnly => return Err(StatusError::ACCESS),
                Access::Eeprom if torque_on => return Err(StatusError::ACCESS),
                _ => {}
            }
            let in_range = match r.addr {
                reg::OPERATING_MODE => OperatingMode::from_byte(v as u8).is_some(),
                reg::TORQUE_ENABLE => v == 0 || v == 1,
                reg::GOAL_PWM => v.abs() <= PWM_LIMIT as i64,
                reg::GOAL_CURRENT => v.abs() <= CURRENT_LIMIT_MA as i64,
                reg::GOAL_VELOCITY => v.abs() <= VELOCITY_LIMIT as i64,
                reg::GOAL_POSITION => (0..TICKS_PER_REV as i64).contains(&v),
                _ => true,
            };
            if !in_range {
                return Err(StatusError::DATA_LIMIT);
            }
            if r.addr == reg::GOAL_CURRENT && OperatingMode::from_byte(mode_after) != Some(OperatingMode::Current) {
                return Err(StatusError::ACCESS);
            }
        }
        self.registers[start..end].copy_from_slice(data);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServoHandle(pub u8);

#[derive(Debug, Default, Clone)]
pub struct VirtualBus {
    servos: BTreeMap<u8, VirtualServo>,
    time: f64,
}

pub type SharedBus = Arc<Mutex<VirtualBus>>;

/// Lock a shared bus, recovering from a poisoned mutex.
pub fn lock(bus: &SharedBus) -> MutexGuard<'_, VirtualBus> {
    bus.lock().unwrap_or_else(|e| e.into_inner())
}

impl VirtualBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_shared(self) -> SharedBus {
        Arc::new(Mutex::new(self))
    }

    pub fn attach_servo(&mut self, id: u8, profile: ServoProfile) -> Result<ServoHandle, BusError> {
        if id > MAX_ID {
            return Err(BusError::InvalidId(id));
        }
        if self.servos.contains_key(&id) {
            return Err(BusError::DuplicateId(id));
        }
        profile.validate()?;
        self.servos.insert(id, VirtualServo::new(id, profile));
        Ok(ServoHandle(id))
    }

    pub fn detach_servo(&mut self, id: u8) -> Option<VirtualServo> {
        self.servos.remove(&id)
    }

    /// Attached ids in ascending order.
    pub fn ids(&self) -> Vec<u8> {
        self.servos.keys().copied().collect()
    }

    pub fn servo(&self, id: u8) -> Option<&VirtualServo> {
        self.servos.get(&id)
    }

    pub fn servo_mut(&mut self, id: u8) -> Option<&mut VirtualServo> {
        self.servos.get_mut(&id)
    }

    pub fn servos(&self) -> impl Iterator<Item = &VirtualServo> {
        self.servos.values()
    }

    /// Simulated time in seconds.
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn handle_packet(&mut self, pkt: &InstructionPacket) -> Vec<StatusPacket> {
        let targets: Vec<u8> = if pkt.id == BROADCAST_ID {
            self.ids()
        } else if self.servos.contains_key(&pkt.id) {
            vec![pkt.id]
        } else {
            Vec::new()
        };
        let broadcast = pkt.id == BROADCAST_ID;
        match pkt.instruction {
            Instruction::Ping => targets
                .iter()
                .map(|id| {
                    let s = &self.servos[id];
                    let mut params = s.read(reg::MODEL_NUMBER, 2).unwrap_or_default();
                    params.push(s.registers[reg::FIRMWARE_VERSION as usize]);
                    StatusPacket::ok(*id, params)
                })
                .collect(),
            Instruction::Read => {
                if broadcast {
                    return Vec::new();
                }
                targets
                    .iter()
                    .map(|id| match split_addr_len(&pkt.params) {
                        Some((addr, len)) => match self.servos[id].read(addr, len) {
                            Ok(bytes) => StatusPacket::ok(*id, bytes),
                            Err(code) => StatusPacket::error(*id, code),
                        },
                        None => StatusPacket::error(*id, StatusError::DATA_LENGTH),
                    })
                    .collect()
            }
            Instruction::Write => {
                let mut out = Vec::new();
                for id in &targets {
                    let result = if pkt.params.len() < 3 {
                        Err(StatusError::DATA_LENGTH)
                    } else {
                        let addr = u16::from_le_bytes([pkt.params[0], pkt.params[1]]);
                        self.servos.get_mut(id).expect("target exists").write(addr, &pkt.params[2..])
                    };
                    if !broadcast {
                        out.push(match result {
                            Ok(()) => StatusPacket::ok(*id, Vec::new()),
                            Err(code) => StatusPacket::error(*id, code),
                        });
                    }
                }
                out
            }
            Instruction::SyncWrite => {
                if let Ok(sw) = parse_sync_write(&pkt.params) {
                    for (id, value) in sw.entries {
                        if let Some(s) = self.servos.get_mut(&id) {
                            let _ = s.write(sw.addr, &value);
                        }
                    }
                }
                Vec::new()
            }
            Instruction::SyncRead => match parse_sync_read(&pkt.params) {
                Ok(sr) => sr
                    .ids
                    .iter()
                    .filter_map(|id| {
                        self.servos.get(id).map(|s| match s.read(sr.addr, sr.width) {
                            Ok(bytes) => StatusPacket::ok(*id, bytes),
                            Err(code) => StatusPacket::error(*id, code),
                        })
                    })
                    .collect(),
                Err(_) => Vec::new(),
            },
            Instruction::Status => Vec::new(),
        }
    }

    /// Advance every servo by `dt` seconds.
    pub fn step(&mut self, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        let n = (dt / MAX_SUBSTEP).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            for s in self.servos.values_mut() {
                s.integrate(h);
            }
        }
        for s in self.servos.values_mut() {
            s.refresh_present();
        }
        self.time += dt;
    }
}

fn split_addr_len(params: &[u8]) -> Option<(u16, u16)> {
    if params.len() != 4 {
        return None;
    }
    Some((u16::from_le_bytes([params[0], params[1]]), u16::from_le_bytes([params[2], params[3]])))
}

/// Seconds to transmit `bytes` at `baud` with 8N1 framing.
pub fn wire_time(bytes: usize, baud: u32) -> f64 {
    bytes as f64 * 10.0 / baud as f64
}
