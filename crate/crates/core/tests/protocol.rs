mod common;

use gex_core::protocol::{
    crc16, crc16_table, encode, encode_packet, encode_status, parse_hex, stuff, unstuff, Crc16, FrameEvent, Instruction,
    InstructionPacket, Packet, StatusError, StatusPacket, StreamDecoder, BROADCAST_ID, MAX_FRAME, MAX_ID,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameter bytes biased toward the header pattern so stuffing is exercised.
fn random_params(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.random_range(0..=max);
    let mut out = Vec::with_capacity(n + 3);
    while out.len() < n {
        if rng.random_bool(0.2) {
            out.extend_from_slice(&[0xFF, 0xFF, 0xFD]);
        } else {
            out.push(rng.random());
        }
    }
    out.truncate(n);
    out
}

fn random_packet(rng: &mut ChaCha8Rng) -> Packet {
    if rng.random_bool(0.3) {
        let code = if rng.random_bool(0.5) { 0 } else { rng.random_range(1..=7) | if rng.random_bool(0.2) { 0x80 } else { 0 } };
        return Packet::Status(StatusPacket {
            id: rng.random_range(0..=MAX_ID),
            error: StatusError(code),
            params: random_params(rng, 64),
        });
    }
    let inst = [Instruction::Ping, Instruction::Read, Instruction::Write, Instruction::SyncRead, Instruction::SyncWrite]
        [rng.random_range(0..5)];
    let id = match inst {
        Instruction::SyncRead | Instruction::SyncWrite => BROADCAST_ID,
        _ if rng.random_bool(0.1) => BROADCAST_ID,
        _ => rng.random_range(0..=MAX_ID),
    };
    Packet::Instruction(InstructionPacket::new(id, inst, random_params(rng, 96)).unwrap())
}

#[test]
fn vendor_ping_frame() {
    let frame = encode(&InstructionPacket::ping(1)).unwrap();
    assert_eq!(frame, parse_hex("FF FF FD 00 01 03 00 01 19 4E").unwrap());
    let mut dec = StreamDecoder::new();
    assert_eq!(dec.feed(&frame), vec![Packet::Instruction(InstructionPacket::ping(1))]);
}

#[test]
fn crc_check_value() {
    assert_eq!(crc16(b"123456789"), 0xFEE8);
    assert_eq!(common::crc16_bitwise(b"123456789"), 0xFEE8);
}

#[test]
fn randomized_packets_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut dec = StreamDecoder::new();
    for _ in 0..10_000 {
        let p = random_packet(&mut rng);
        let frame = encode_packet(&p).unwrap();
        assert_eq!(dec.feed(&frame), vec![p]);
    }
    assert_eq!(dec.resync_count(), 0);
    assert_eq!(dec.buffered(), 0);
}

#[test]
fn fragmentation_does_not_change_decoding() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let packets: Vec<Packet> = (0..500).map(|_| random_packet(&mut rng)).collect();
    let stream: Vec<u8> = packets.iter().flat_map(|p| encode_packet(p).unwrap()).collect();
    let mut dec = StreamDecoder::new();
    let mut got = Vec::new();
    let mut i = 0;
    while i < stream.len() {
        let n = rng.random_range(1..=40).min(stream.len() - i);
        got.extend(dec.feed(&stream[i..i + n]));
        i += n;
    }
    assert_eq!(got, packets);
}

#[test]
fn fuzz_stream_never_panics_and_stays_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut dec = StreamDecoder::new();
    let mut fed = 0usize;
    let mut chunk = vec![0u8; 4096];
    while fed < 1_000_000 {
        let n = rng.random_range(1..=chunk.len());
        for b in &mut chunk[..n] {
            // Mostly noise, with header fragments so the decoder keeps
            // entering frame parsing.
            *b = match rng.random_range(0..10) {
                0 => 0xFF,
                1 => 0xFD,
                2 => 0x00,
                _ => rng.random(),
            };
        }
        let _ = dec.feed_events(&chunk[..n]);
        assert!(dec.buffered() <= MAX_FRAME);
        fed += n;
    }
    // A valid frame after the noise is still found once the decoder resyncs.
    let ping = encode(&InstructionPacket::ping(9)).unwrap();
    let mut found = dec.feed(&ping);
    found.extend(dec.feed(&[0u8; MAX_FRAME]));
    assert!(found.contains(&Packet::Instruction(InstructionPacket::ping(9))));
}

#[test]
fn corrupted_frame_then_valid_frame() {
    let mut bad = encode(&InstructionPacket::ping(1)).unwrap();
    let last = bad.len() - 1;
    bad[last] ^= 0x01;
    let good = encode(&InstructionPacket::read(2, 132, 4)).unwrap();
    let mut dec = StreamDecoder::new();
    let mut events = dec.feed_events(&bad);
    events.extend(dec.feed_events(&good));
    assert!(matches!(events[0], FrameEvent::CrcError { id: 1, .. }));
    assert_eq!(events.last(), Some(&FrameEvent::Packet(Packet::Instruction(InstructionPacket::read(2, 132, 4)))));
    assert!(dec.resync_count() >= 1);
}

#[test]
fn streaming_crc_equals_one_shot() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let data = random_params(&mut rng, 300);
        let mut c = Crc16::new();
        let mut i = 0;
        while i < data.len() {
            let n = rng.random_range(1..=17).min(data.len() - i);
            c.update(&data[i..i + n]);
            i += n;
        }
        assert_eq!(c.value(), crc16(&data));
    }
}

#[test]
fn table_crc_equals_bitwise_oracle() {
    let table = crc16_table();
    for (i, &entry) in table.iter().enumerate() {
        assert_eq!(entry, common::crc16_bitwise(&[i as u8]), "table entry {i}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let data = random_params(&mut rng, 200);
        assert_eq!(crc16(&data), common::crc16_bitwise(&data));
    }
}

#[test]
fn status_frames_carry_error_byte() {
    let s = StatusPacket::error(3, StatusError::ACCESS);
    let frame = encode_status(&s).unwrap();
    // header(4) id len(2) inst err crc(2)
    assert_eq!(frame.len(), 11);
    assert_eq!(frame[7], 0x55);
    assert_eq!(frame[8], StatusError::ACCESS);
}

proptest! {
    #[test]
    fn stuffing_round_trips(data in proptest::collection::vec(prop_oneof![Just(0xFFu8), Just(0xFD), any::<u8>()], 0..200)) {
        let s = stuff(&data);
        prop_assert_eq!(unstuff(&s).unwrap(), data.clone());
        // No header pattern survives in the stuffed block except as an escape.
        for w in s.windows(4) {
            if w[..3] == [0xFF, 0xFF, 0xFD] {
                prop_assert_eq!(w[3], 0xFD);
            }
        }
    }

    #[test]
    fn length_field_counts_stuffed_bytes(params in proptest::collection::vec(any::<u8>(), 0..100)) {
        let frame = encode(&InstructionPacket::new(1, Instruction::Write, params.clone()).unwrap()).unwrap();
        let len = u16::from_le_bytes([frame[5], frame[6]]) as usize;
        prop_assert_eq!(len, stuff(&params).len() + 3);
        prop_assert_eq!(frame.len(), 7 + len);
    }
}
