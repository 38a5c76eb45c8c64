mod common;

use std::f64::consts::{PI, TAU};
use std::time::Duration;

use gex_core::bus::{
    lock, reg, ticks_to_rad, wrap_angle, OperatingMode, ServoProfile, VirtualBus, DEFAULT_BAUD, PWM_LIMIT, TICK,
};
use gex_core::fixtures;
use gex_core::protocol::{
    build_sync_write, encode, FrameEvent, InstructionPacket, Packet, StatusPacket, StreamDecoder, BROADCAST_ID,
};
use gex_core::transport::{memory_pair, spawn_endpoint, EndpointConfig, Transport};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bus_with(n: u8, profile: ServoProfile) -> VirtualBus {
    let mut bus = VirtualBus::new();
    for id in 0..n {
        bus.attach_servo(id, profile.clone()).unwrap();
    }
    bus
}

fn write(bus: &mut VirtualBus, id: u8, addr: u16, data: &[u8]) -> Vec<StatusPacket> {
    bus.handle_packet(&InstructionPacket::write(id, addr, data))
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[test]
fn m288_saturates_at_rated_torque() {
    let mut bus = bus_with(1, fixtures::m288());
    write(&mut bus, 0, reg::TORQUE_ENABLE, &[1]);
    let far = (2048u32 + 1024).to_le_bytes();
    write(&mut bus, 0, reg::GOAL_POSITION, &far);
    bus.step(0.001);
    let s = bus.servo(0).unwrap();
    assert_eq!(s.motor_torque(), 0.53);
    for _ in 0..200 {
        bus.step(0.001);
        assert!(bus.servo(0).unwrap().motor_torque().abs() <= 0.53);
    }
}

#[test]
fn tick_resolution_and_baud() {
    assert!((TICK.to_degrees() - 360.0 / 4096.0).abs() < 1e-15);
    assert!((TICK.to_degrees() - 0.088).abs() < 5e-4);
    assert_eq!(DEFAULT_BAUD, 1_000_000);
    assert_eq!(EndpointConfig::default().baud, 1_000_000);
}

/// Time for a freely coasting servo to stop from `omega0`.
fn coast_time(profile: ServoProfile, omega0: f64) -> f64 {
    let mut bus = bus_with(1, profile);
    bus.servo_mut(0).unwrap().omega = omega0;
    let mut t = 0.0;
    while bus.servo(0).unwrap().omega != 0.0 {
        bus.step(0.001);
        t += 0.001;
        assert!(t < 10.0);
    }
    t
}

#[test]
fn m077_coasts_longer_than_m288() {
    let slow = coast_time(fixtures::m288(), 3.0);
    let fast = coast_time(fixtures::m077(), 3.0);
    assert!(fast > slow, "M077 {fast} s vs M288 {slow} s");
}

#[test]
fn free_servo_energy_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for profile in [fixtures::m288(), fixtures::m077()] {
        for _ in 0..50 {
            let mut bus = bus_with(1, profile.clone());
            let inertia = profile.rotor_inertia_eff;
            bus.servo_mut(0).unwrap().omega = rng.random_range(-20.0..20.0);
            let mut ke = 0.5 * inertia * bus.servo(0).unwrap().omega.powi(2);
            for _ in 0..300 {
                bus.step(rng.random_range(1e-4..0.01));
                let next = 0.5 * inertia * bus.servo(0).unwrap().omega.powi(2);
                assert!(next <= ke);
                ke = next;
            }
        }
    }
}

#[test]
fn torque_stays_clamped_under_random_commands() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let profile = fixtures::m288();
    let mut bus = bus_with(1, profile.clone());
    for _ in 0..100_000 {
        let mode = [0u8, 1, 3, 16][rng.random_range(0..4)];
        write(&mut bus, 0, reg::TORQUE_ENABLE, &[0]);
        write(&mut bus, 0, reg::OPERATING_MODE, &[mode]);
        write(&mut bus, 0, reg::TORQUE_ENABLE, &[1]);
        match mode {
            0 => write(&mut bus, 0, reg::GOAL_CURRENT, &rng.random_range(-1750i16..=1750).to_le_bytes()),
            1 => write(&mut bus, 0, reg::GOAL_VELOCITY, &rng.random_range(-445i32..=445).to_le_bytes()),
            3 => write(&mut bus, 0, reg::GOAL_POSITION, &rng.random_range(0u32..4096).to_le_bytes()),
            _ => write(&mut bus, 0, reg::GOAL_PWM, &rng.random_range(-885i16..=885).to_le_bytes()),
        };
        bus.servo_mut(0).unwrap().applied_external_torque = rng.random_range(-1.0..1.0);
        bus.step(rng.random_range(1e-4..0.01));
        assert!(bus.servo(0).unwrap().motor_torque().abs() <= profile.rated_torque);
    }
    assert!(bus.servo(0).unwrap().peak_motor_torque() <= profile.rated_torque);
}

/// Independent fine-step integration of the position loop.
fn reference_position_run(p: &ServoProfile, goal: f64, theta0: f64, pwm: f64, t_end: f64) -> Vec<(f64, f64)> {
    let h = 1e-4;
    let lim = p.rated_torque * (pwm / 885.0).min(1.0);
    let friction = p.coulomb_friction * p.gear_ratio / 288.0;
    let (mut th, mut w, mut t) = (theta0, 0.0f64, 0.0);
    let mut out = vec![(0.0, th)];
    while t < t_end - 1e-12 {
        let tau = (p.position_kp * (goal - th) - p.position_kd * w).clamp(-lim, lim);
        let v = w + h * tau / p.rotor_inertia_eff;
        let stop = friction * h / p.rotor_inertia_eff;
        w = if v.abs() <= stop { 0.0 } else { v - stop * v.signum() };
        th += h * w;
        t += h;
        out.push((t, th));
    }
    out
}

#[test]
fn position_mode_settles_like_fine_reference() {
    for profile in [fixtures::m288(), fixtures::m077()] {
        let mut bus = bus_with(1, profile.clone());
        write(&mut bus, 0, reg::TORQUE_ENABLE, &[1]);
        let goal_ticks = 2048u32 + 1024;
        write(&mut bus, 0, reg::GOAL_POSITION, &goal_ticks.to_le_bytes());
        let goal = ticks_to_rad(goal_ticks);
        let reference = reference_position_run(&profile, goal, PI, PWM_LIMIT as f64, 0.5);
        let mut trace = Vec::with_capacity(500);
        for k in 1..=500 {
            bus.step(0.001);
            trace.push((k as f64 * 0.001, bus.servo(0).unwrap().theta));
        }
        let settle = |run: &[(f64, f64)]| {
            let last_out = run.iter().rposition(|&(_, th)| (th - goal).abs().to_degrees() > 0.5);
            last_out.map_or(0.0, |i| run.get(i + 1).map_or(f64::INFINITY, |p| p.0))
        };
        let (t_bus, t_ref) = (settle(&trace), settle(&reference));
        let name = &profile.model_name;
        assert!(t_bus <= 0.5, "{name}: settled at {t_bus} s");
        assert!(t_ref <= 0.5, "{name}: reference settled at {t_ref} s");
        assert!((t_bus - t_ref).abs() <= 0.02, "{name}: {t_bus} s vs reference {t_ref} s");
        let final_gap = (trace.last().unwrap().1 - reference.last().unwrap().1).abs().to_degrees();
        assert!(final_gap <= 0.5, "{name}: final states differ by {final_gap}°");
    }
}

#[test]
fn sync_write_to_eleven_servos_is_silent() {
    let mut bus = bus_with(11, fixtures::m288());
    let entries: Vec<(u8, Vec<u8>)> = (0..11u8).map(|id| (id, (1000u32 + id as u32).to_le_bytes().to_vec())).collect();
    let pkt = build_sync_write(reg::GOAL_POSITION, 4, &entries).unwrap();
    assert!(bus.handle_packet(&pkt).is_empty());
    for id in 0..11u8 {
        assert_eq!(bus.servo(id).unwrap().get(reg::GOAL_POSITION, 4), 1000 + id as i64);
    }
}

#[test]
fn eeprom_latches_while_torque_enabled() {
    let mut bus = bus_with(1, fixtures::m288());
    write(&mut bus, 0, reg::TORQUE_ENABLE, &[1]);
    let r = write(&mut bus, 0, reg::OPERATING_MODE, &[OperatingMode::Current.to_byte()]);
    assert!(!r[0].error.is_ok());
    assert_eq!(bus.servo(0).unwrap().operating_mode(), Some(OperatingMode::Position));
}

proptest! {
    #[test]
    fn present_position_tracks_theta(theta0 in -20.0f64..20.0, omega0 in -30.0f64..30.0, dt in 1e-4f64..0.01, steps in 1usize..20) {
        let mut bus = bus_with(1, fixtures::m077());
        {
            let s = bus.servo_mut(0).unwrap();
            s.set_theta(theta0);
            s.omega = omega0;
        }
        for _ in 0..steps {
            bus.step(dt);
            let s = bus.servo(0).unwrap();
            let gap = circular_gap(ticks_to_rad(s.present_position_ticks()), wrap_angle(s.theta));
            prop_assert!(gap <= 0.5 * TICK + 1e-12);
        }
    }
}

// ---------------------------------------------------------------------------
// Endpoint over an in-memory transport
// ---------------------------------------------------------------------------

fn read_frames(port: &mut impl Transport, want: usize) -> (Vec<Packet>, StreamDecoder) {
    let mut dec = StreamDecoder::new();
    let mut out = Vec::new();
    let mut buf = [0u8; 256];
    for _ in 0..200 {
        if out.len() >= want {
            break;
        }
        let n = port.read(&mut buf, Duration::from_millis(10)).unwrap();
        out.extend(dec.feed(&buf[..n]));
    }
    (out, dec)
}

#[test]
fn endpoint_answers_ping_over_memory_pair() {
    let bus = bus_with(2, fixtures::m288()).into_shared();
    let (mut host, dev) = memory_pair();
    let handle = spawn_endpoint(bus.clone(), dev, EndpointConfig::default());
    host.write_all(&encode(&InstructionPacket::ping(1)).unwrap()).unwrap();
    let (frames, _) = read_frames(&mut host, 1);
    assert_eq!(frames.len(), 1);
    assert!(matches!(&frames[0], Packet::Status(s) if s.id == 1 && s.params == vec![0xB0, 0x04, 52]));

    // Two frames in one write, two answers.
    let mut two = encode(&InstructionPacket::ping(0)).unwrap();
    two.extend(encode(&InstructionPacket::read(1, reg::PRESENT_POSITION, 4)).unwrap());
    host.write_all(&two).unwrap();
    let (frames, _) = read_frames(&mut host, 2);
    assert_eq!(frames.iter().map(Packet::id).collect::<Vec<_>>(), vec![0, 1]);

    // Corrupted frame followed by a valid one: one answer, one resync.
    let mut bad = encode(&InstructionPacket::ping(0)).unwrap();
    bad[8] ^= 0xFF;
    bad.extend(encode(&InstructionPacket::ping(1)).unwrap());
    host.write_all(&bad).unwrap();
    let (frames, _) = read_frames(&mut host, 1);
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].id(), 1);

    drop(host);
    let stats = handle.join().unwrap();
    assert_eq!(stats.packets, 4);
    assert_eq!(stats.responses, 4);
    assert!(stats.resyncs >= 1);
}

#[test]
fn broadcast_responses_never_interleave() {
    let bus = bus_with(11, fixtures::m288()).into_shared();
    let (mut host, dev) = memory_pair();
    let cfg = EndpointConfig { emulate_latency: false, ..Default::default() };
    let handle = spawn_endpoint(bus.clone(), dev, cfg);
    host.write_all(&encode(&InstructionPacket::ping(BROADCAST_ID)).unwrap()).unwrap();
    let mut dec = StreamDecoder::new();
    let mut events = Vec::new();
    let mut buf = [0u8; 7];
    while events.len() < 11 {
        // Small reads fragment the stream arbitrarily.
        let n = host.read(&mut buf, Duration::from_millis(50)).unwrap();
        assert!(n > 0, "bus went quiet after {} frames", events.len());
        events.extend(dec.feed_events(&buf[..n]));
    }
    let ids: Vec<u8> = events
        .iter()
        .map(|e| match e {
            FrameEvent::Packet(p) => p.id(),
            other => panic!("bad frame {other:?}"),
        })
        .collect();
    assert_eq!(ids, (0..11).collect::<Vec<_>>());
    assert_eq!(dec.resync_count(), 0);
    drop(host);
    handle.join().unwrap();
    assert_eq!(lock(&bus).ids().len(), 11);
}
