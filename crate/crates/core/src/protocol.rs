//! Servo bus protocol 2.0 codec.
//!
//! Frame layout:
//!
//! ```text
//! FF FF FD 00 | ID | LEN_L LEN_H | INST | [ERR] | stuffed params | CRC_L CRC_H
//! ```
//!
//! `LEN` counts everything after itself: instruction, error byte (status
//! only), stuffed parameters and the two CRC bytes. The CRC covers every byte
//! from the header up to the last parameter.

use std::fmt;
use std::sync::OnceLock;

pub const HEADER: [u8; 4] = [0xFF, 0xFF, 0xFD, 0x00];
pub const BROADCAST_ID: u8 = 0xFE;
pub const MAX_ID: u8 = 0xFD;
pub const MAX_PARAMS: usize = 1024;
/// Largest stuffed payload: every 3 bytes of the pattern gain one escape byte.
pub const MAX_STUFFED_PARAMS: usize = MAX_PARAMS + MAX_PARAMS / 3;
/// Largest legal value of the length field.
pub const MAX_LENGTH_FIELD: usize = MAX_STUFFED_PARAMS + 4;
pub const MAX_FRAME: usize = HEADER.len() + 3 + MAX_LENGTH_FIELD;

const CRC_POLY: u16 = 0x8005;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("parameter block of {0} bytes exceeds {MAX_PARAMS}")]
    Oversize(usize),
    #[error("id {0:#04x} is not valid for this packet")]
    InvalidId(u8),
    #[error("{0:?} is not an instruction")]
    StatusAsInstruction(Instruction),
    #[error("{0:?} must be broadcast")]
    SyncNotBroadcast(Instruction),
    #[error("dangling stuffing pattern at end of payload")]
    DanglingStuffing,
    #[error("stuffing pattern followed by {0:#04x} instead of 0xFD")]
    BadStuffing(u8),
    #[error("unknown instruction byte {0:#04x}")]
    UnknownInstruction(u8),
    #[error("duplicate id {0} in sync packet")]
    DuplicateId(u8),
    #[error("entry for id {id} has {got} bytes, expected {expected}")]
    WidthMismatch { id: u8, expected: usize, got: usize },
    #[error("truncated packet")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Instruction {
    Ping = 0x01,
    Read = 0x02,
    Write = 0x03,
    SyncRead = 0x82,
    SyncWrite = 0x83,
    Status = 0x55,
}

impl Instruction {
    pub const ALL: [Instruction; 6] = [
        Instruction::Ping,
        Instruction::Read,
        Instruction::Write,
        Instruction::SyncRead,
        Instruction::SyncWrite,
        Instruction::Status,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|i| *i as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            Instruction::Ping => "PING",
            Instruction::Read => "READ",
            Instruction::Write => "WRITE",
            Instruction::SyncRead => "SYNC_READ",
            Instruction::SyncWrite => "SYNC_WRITE",
            Instruction::Status => "STATUS",
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionPacket {
    pub id: u8,
    pub instruction: Instruction,
    pub params: Vec<u8>,
}

impl InstructionPacket {
    pub fn new(id: u8, instruction: Instruction, params: Vec<u8>) -> Result<Self, ProtocolError> {
        let pkt = Self { id, instruction, params };
        pkt.validate()?;
        Ok(pkt)
    }

    pub fn ping(id: u8) -> Self {
        Self { id, instruction: Instruction::Ping, params: Vec::new() }
    }

    pub fn read(id: u8, addr: u16, len: u16) -> Self {
        let mut params = addr.to_le_bytes().to_vec();
        params.extend_from_slice(&len.to_le_bytes());
        Self { id, instruction: Instruction::Read, params }
    }

    pub fn write(id: u8, addr: u16, data: &[u8]) -> Self {
        let mut params = addr.to_le_bytes().to_vec();
        params.extend_from_slice(data);
        Self { id, instruction: Instruction::Write, params }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.instruction == Instruction::Status {
            return Err(ProtocolError::StatusAsInstruction(self.instruction));
        }
        if self.id > BROADCAST_ID {
            return Err(ProtocolError::InvalidId(self.id));
        }
        if matches!(self.instruction, Instruction::SyncRead | Instruction::SyncWrite) && self.id != BROADCAST_ID {
            return Err(ProtocolError::SyncNotBroadcast(self.instruction));
        }
        if self.params.len() > MAX_PARAMS {
            return Err(ProtocolError::Oversize(self.params.len()));
        }
        Ok(())
    }
}

/// Error byte: bit 7 is the hardware alert flag, the low 7 bits an error code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatusError(pub u8);

impl StatusError {
    pub const NONE: StatusError = StatusError(0);
    pub const RESULT_FAIL: u8 = 0x01;
    pub const INSTRUCTION: u8 = 0x02;
    pub const CRC: u8 = 0x03;
    pub const DATA_RANGE: u8 = 0x04;
    pub const DATA_LENGTH: u8 = 0x05;
    pub const DATA_LIMIT: u8 = 0x06;
    pub const ACCESS: u8 = 0x07;

    pub fn code(self) -> u8 {
        self.0 & 0x7F
    }

    pub fn alert(self) -> bool {
        self.0 & 0x80 != 0
    }

    pub fn is_ok(self) -> bool {
        self.code() == 0
    }

    pub fn describe(self) -> &'static str {
        match self.code() {
            0 => "ok",
            Self::RESULT_FAIL => "result fail",
            Self::INSTRUCTION => "instruction error",
            Self::CRC => "crc error",
            Self::DATA_RANGE => "data range error",
            Self::DATA_LENGTH => "data length error",
            Self::DATA_LIMIT => "data limit error",
            Self::ACCESS => "access error",
            _ => "unknown error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusPacket {
    pub id: u8,
    pub error: StatusError,
    pub params: Vec<u8>,
}

impl StatusPacket {
    pub fn ok(id: u8, params: Vec<u8>) -> Self {
        Self { id, error: StatusError::NONE, params }
    }

    pub fn error(id: u8, code: u8) -> Self {
        Self { id, error: StatusError(code), params: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Instruction(InstructionPacket),
    Status(StatusPacket),
}

impl Packet {
    pub fn id(&self) -> u8 {
        match self {
            Packet::Instruction(p) => p.id,
            Packet::Status(p) => p.id,
        }
    }
}

// ---------------------------------------------------------------------------
// CRC-16 (poly 0x8005, init 0, MSB first, no reflection, no final xor)
// ---------------------------------------------------------------------------

fn crc_table() -> &'static [u16; 256] {
    static TABLE: OnceLock<[u16; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u16; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            let mut reg = (i as u16) << 8;
            for _ in 0..8 {
                reg = if reg & 0x8000 != 0 { (reg << 1) ^ CRC_POLY } else { reg << 1 };
            }
            *slot = reg;
        }
        table
    })
}

/// Incremental CRC register; feeding chunks is equivalent to one-shot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Crc16 {
    reg: u16,
}

impl Crc16 {
    pub fn new() -> Self {
        Self { reg: 0 }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        let table = crc_table();
        for &b in bytes {
            let idx = ((self.reg >> 8) as u8 ^ b) as usize;
            self.reg = (self.reg << 8) ^ table[idx];
        }
    }

    pub fn value(self) -> u16 {
        self.reg
    }
}

pub fn crc16(bytes: &[u8]) -> u16 {
    let mut c = Crc16::new();
    c.update(bytes);
    c.value()
}

/// The 256-entry lookup table, exposed for verification.
pub fn crc16_table() -> &'static [u16; 256] {
    crc_table()
}

// ---------------------------------------------------------------------------
// Byte stuffing
// ---------------------------------------------------------------------------

/// Escape every `FF FF FD` in `params` as `FF FF FD FD`.
pub fn stuff(params: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() + params.len() / 3);
    for &b in params {
        out.push(b);
        // An escape byte is FD and the pattern starts with FF, so a match
        // here is always made of original bytes.
        if out.len() >= 3 && out[out.len() - 3..] == [0xFF, 0xFF, 0xFD] {
            out.push(0xFD);
        }
    }
    out
}

pub fn unstuff(bytes: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        out.push(b);
        i += 1;
        if b == 0xFD && out.len() >= 3 && out[out.len() - 3..out.len() - 1] == [0xFF, 0xFF] {
            match bytes.get(i) {
                Some(0xFD) => i += 1,
                Some(&other) => return Err(ProtocolError::BadStuffing(other)),
                None => return Err(ProtocolError::DanglingStuffing),
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn frame(id: u8, body_head: &[u8], params: &[u8]) -> Vec<u8> {
    let stuffed = stuff(params);
    let length = (body_head.len() + stuffed.len() + 2) as u16;
    let mut out = Vec::with_capacity(HEADER.len() + 3 + length as usize);
    out.extend_from_slice(&HEADER);
    out.push(id);
    out.extend_from_slice(&length.to_le_bytes());
    out.extend_from_slice(body_head);
    out.extend_from_slice(&stuffed);
    let crc = crc16(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn encode(pkt: &InstructionPacket) -> Result<Vec<u8>, ProtocolError> {
    pkt.validate()?;
    Ok(frame(pkt.id, &[pkt.instruction as u8], &pkt.params))
}

pub fn encode_status(pkt: &StatusPacket) -> Result<Vec<u8>, ProtocolError> {
    if pkt.id > MAX_ID {
        return Err(ProtocolError::InvalidId(pkt.id));
    }
    if pkt.params.len() > MAX_PARAMS {
        return Err(ProtocolError::Oversize(pkt.params.len()));
    }
    Ok(frame(pkt.id, &[Instruction::Status as u8, pkt.error.0], &pkt.params))
}

pub fn encode_packet(pkt: &Packet) -> Result<Vec<u8>, ProtocolError> {
    match pkt {
        Packet::Instruction(p) => encode(p),
        Packet::Status(p) => encode_status(p),
    }
}

fn parse_body(id: u8, body: &[u8]) -> Result<Packet, ProtocolError> {
    let (&inst, rest) = body.split_first().ok_or(ProtocolError::Truncated)?;
    let instruction = Instruction::from_byte(inst).ok_or(ProtocolError::UnknownInstruction(inst))?;
    if instruction == Instruction::Status {
        let (&err, stuffed) = rest.split_first().ok_or(ProtocolError::Truncated)?;
        if id > MAX_ID {
            return Err(ProtocolError::InvalidId(id));
        }
        let params = unstuff(stuffed)?;
        if params.len() > MAX_PARAMS {
            return Err(ProtocolError::Oversize(params.len()));
        }
        Ok(Packet::Status(StatusPacket { id, error: StatusError(err), params }))
    } else {
        let pkt = InstructionPacket { id, instruction, params: unstuff(rest)? };
        pkt.validate()?;
        Ok(Packet::Instruction(pkt))
    }
}

// ---------------------------------------------------------------------------
// Sync helpers
// ---------------------------------------------------------------------------

fn sync_header(addr: u16, width: u16) -> Vec<u8> {
    let mut params = addr.to_le_bytes().to_vec();
    params.extend_from_slice(&width.to_le_bytes());
    params
}

fn check_distinct(ids: impl IntoIterator<Item = u8>) -> Result<(), ProtocolError> {
    let mut seen = [false; 256];
    for id in ids {
        if id > MAX_ID {
            return Err(ProtocolError::InvalidId(id));
        }
        if std::mem::replace(&mut seen[id as usize], true) {
            return Err(ProtocolError::DuplicateId(id));
        }
    }
    Ok(())
}

pub fn build_sync_write(addr: u16, width: u16, entries: &[(u8, Vec<u8>)]) -> Result<InstructionPacket, ProtocolError> {
    check_distinct(entries.iter().map(|(id, _)| *id))?;
    let mut params = sync_header(addr, width);
    for (id, value) in entries {
        if value.len() != width as usize {
            return Err(ProtocolError::WidthMismatch { id: *id, expected: width as usize, got: value.len() });
        }
        params.push(*id);
        params.extend_from_slice(value);
    }
    InstructionPacket::new(BROADCAST_ID, Instruction::SyncWrite, params)
}

pub fn build_sync_read(addr: u16, width: u16, ids: &[u8]) -> Result<InstructionPacket, ProtocolError> {
    check_distinct(ids.iter().copied())?;
    let mut params = sync_header(addr, width);
    params.extend_from_slice(ids);
    InstructionPacket::new(BROADCAST_ID, Instruction::SyncRead, params)
}

/// Decoded view of a SYNC_WRITE parameter block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncWrite {
    pub addr: u16,
    pub width: u16,
    pub entries: Vec<(u8, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncRead {
    pub addr: u16,
    pub width: u16,
    pub ids: Vec<u8>,
}

fn split_sync(params: &[u8]) -> Result<(u16, u16, &[u8]), ProtocolError> {
    if params.len() < 4 {
        return Err(ProtocolError::Truncated);
    }
    let addr = u16::from_le_bytes([params[0], params[1]]);
    let width = u16::from_le_bytes([params[2], params[3]]);
    Ok((addr, width, &params[4..]))
}

pub fn parse_sync_write(params: &[u8]) -> Result<SyncWrite, ProtocolError> {
    let (addr, width, rest) = split_sync(params)?;
    let block = width as usize + 1;
    if rest.len() % block != 0 {
        return Err(ProtocolError::Truncated);
    }
    let entries = rest.chunks(block).map(|c| (c[0], c[1..].to_vec())).collect();
    Ok(SyncWrite { addr, width, entries })
}

pub fn parse_sync_read(params: &[u8]) -> Result<SyncRead, ProtocolError> {
    let (addr, width, rest) = split_sync(params)?;
    Ok(SyncRead { addr, width, ids: rest.to_vec() })
}

// ---------------------------------------------------------------------------
// Stream decoder
// ---------------------------------------------------------------------------

/// Incremental frame decoder for an arbitrary byte stream.
///
/// A header is trusted together with its declared length. When the CRC of
/// the resulting frame fails, the first header byte is dropped and scanning
/// resumes one byte later. Buffered bytes never exceed [`MAX_FRAME`].
#[derive(Debug, Default, Clone)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    resyncs: u64,
    malformed: u64,
    frames: u64,
}

/// Outcome of one frame found in the stream, for tooling that reports bad
/// frames rather than just skipping them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameEvent {
    Packet(Packet),
    /// CRC mismatch on a frame with the given id.
    CrcError { id: u8, expected: u16, got: u16 },
    /// CRC was valid but the body did not parse.
    Malformed { id: u8, error: ProtocolError },
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of frames dropped on CRC failure (or impossible length).
    pub fn resync_count(&self) -> u64 {
        self.resyncs
    }

    pub fn malformed_count(&self) -> u64 {
        self.malformed
    }

    pub fn frame_count(&self) -> u64 {
        self.frames
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Packet> {
        self.feed_events(bytes)
            .into_iter()
            .filter_map(|e| match e {
                FrameEvent::Packet(p) => Some(p),
                _ => None,
            })
            .collect()
    }

    pub fn feed_events(&mut self, bytes: &[u8]) -> Vec<FrameEvent> {
        let mut events = Vec::new();
        for chunk in bytes.chunks(MAX_FRAME) {
            self.buf.extend_from_slice(chunk);
            self.drain(&mut events);
        }
        events
    }

    fn drain(&mut self, events: &mut Vec<FrameEvent>) {
        loop {
            // Align the buffer on a (possibly partial) header.
            match find_header(&self.buf) {
                Some(0) => {}
                Some(pos) => {
                    self.buf.drain(..pos);
                }
                None => {
                    let keep = partial_header_suffix(&self.buf);
                    let cut = self.buf.len() - keep;
                    self.buf.drain(..cut);
                    return;
                }
            }
            if self.buf.len() < HEADER.len() + 3 {
                return;
            }
            let id = self.buf[4];
            let length = u16::from_le_bytes([self.buf[5], self.buf[6]]) as usize;
            if !(3..=MAX_LENGTH_FIELD).contains(&length) {
                self.resyncs += 1;
                self.buf.drain(..1);
                continue;
            }
            let total = HEADER.len() + 3 + length;
            if self.buf.len() < total {
                return;
            }
            let expected = crc16(&self.buf[..total - 2]);
            let got = u16::from_le_bytes([self.buf[total - 2], self.buf[total - 1]]);
            if expected != got {
                self.resyncs += 1;
                events.push(FrameEvent::CrcError { id, expected, got });
                self.buf.drain(..1);
                continue;
            }
            match parse_body(id, &self.buf[HEADER.len() + 3..total - 2]) {
                Ok(p) => {
                    self.frames += 1;
                    events.push(FrameEvent::Packet(p));
                }
                Err(error) => {
                    self.malformed += 1;
                    events.push(FrameEvent::Malformed { id, error });
                }
            }
            self.buf.drain(..total);
        }
    }
}

fn find_header(buf: &[u8]) -> Option<usize> {
    buf.windows(HEADER.len()).position(|w| w == HEADER)
}

/// Length of the longest buffer suffix that is a proper prefix of the header.
fn partial_header_suffix(buf: &[u8]) -> usize {
    (1..HEADER.len()).rev().find(|&k| buf.len() >= k && buf[buf.len() - k..] == HEADER[..k]).unwrap_or(0)
}

/// Parse uppercase or lowercase hex pairs, ignoring whitespace.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, String> {
    let digits: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return Err("odd number of hex digits".into());
    }
    digits
        .chunks(2)
        .map(|pair| {
            let s: String = pair.iter().collect();
            u8::from_str_radix(&s, 16).map_err(|_| format!("invalid hex pair `{s}`"))
        })
        .collect()
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc_of_empty_input_is_zero() {
        assert_eq!(crc16(&[]), 0x0000);
    }

    #[test]
    fn instruction_packet_invariants() {
        assert!(InstructionPacket::new(1, Instruction::Status, vec![]).is_err());
        assert!(InstructionPacket::new(3, Instruction::SyncWrite, vec![0; 4]).is_err());
        assert!(InstructionPacket::new(0xFF, Instruction::Ping, vec![]).is_err());
        assert!(matches!(
            encode(&InstructionPacket::write(1, 116, &[0; MAX_PARAMS])),
            Err(ProtocolError::Oversize(_))
        ));
    }

    #[test]
    fn stuffing_cases() {
        assert_eq!(stuff(&[1, 2, 3]), vec![1, 2, 3]);
        assert_eq!(stuff(&[0xFF, 0xFF, 0xFD]), vec![0xFF, 0xFF, 0xFD, 0xFD]);
        assert_eq!(stuff(&[0xFF, 0xFF, 0xFF, 0xFD]), vec![0xFF, 0xFF, 0xFF, 0xFD, 0xFD]);
        assert_eq!(unstuff(&[0xFF, 0xFF, 0xFD]), Err(ProtocolError::DanglingStuffing));
        assert_eq!(unstuff(&[0xFF, 0xFF, 0xFD, 0x01]), Err(ProtocolError::BadStuffing(0x01)));
        assert_eq!(unstuff(&[0xFF, 0xFF, 0xFD, 0xFD, 0xFD]).unwrap(), vec![0xFF, 0xFF, 0xFD, 0xFD]);
    }

    #[test]
    fn stuffed_write_is_one_byte_longer() {
        let plain = encode(&InstructionPacket::write(2, 116, &[1, 2, 3, 4])).unwrap();
        let patterned = encode(&InstructionPacket::write(2, 116, &[0xFF, 0xFF, 0xFD, 4])).unwrap();
        assert_eq!(patterned.len(), plain.len() + 1);
        let len = u16::from_le_bytes([patterned[5], patterned[6]]);
        assert_eq!(len as usize, 1 + 2 + 5 + 2);
    }

    #[test]
    fn sync_builders() {
        let entries: Vec<(u8, Vec<u8>)> = (0..11).map(|id| (id, vec![id; 4])).collect();
        let p = build_sync_write(116, 4, &entries).unwrap();
        assert_eq!(p.params.len(), 4 + 11 * 5);
        assert_eq!(parse_sync_write(&p.params).unwrap().entries, entries);

        let empty = build_sync_read(132, 4, &[]).unwrap();
        assert_eq!(empty.params.len(), 4);

        assert_eq!(build_sync_read(132, 4, &[1, 2, 1]).unwrap_err(), ProtocolError::DuplicateId(1));
        assert!(matches!(
            build_sync_write(116, 4, &[(1, vec![0; 2])]),
            Err(ProtocolError::WidthMismatch { id: 1, expected: 4, got: 2 })
        ));
    }

    #[test]
    fn decoder_keeps_partial_header() {
        let frame = encode(&InstructionPacket::ping(7)).unwrap();
        let mut dec = StreamDecoder::new();
        assert!(dec.feed(&[0x00, 0x12, 0xFF, 0xFF]).is_empty());
        assert_eq!(dec.buffered(), 2);
        let out = dec.feed(&frame[2..]);
        assert_eq!(out, vec![Packet::Instruction(InstructionPacket::ping(7))]);
    }

    #[test]
    fn decoder_counts_impossible_length() {
        let mut dec = StreamDecoder::new();
        dec.feed(&[0xFF, 0xFF, 0xFD, 0x00, 0x01, 0x01, 0x00]);
        assert_eq!(dec.resync_count(), 1);
        let frame = encode(&InstructionPacket::ping(1)).unwrap();
        assert_eq!(dec.feed(&frame).len(), 1);
    }

    #[test]
    fn hex_round_trip() {
        let bytes = parse_hex("ff FF fd 00\n01").unwrap();
        assert_eq!(bytes, vec![0xFF, 0xFF, 0xFD, 0x00, 0x01]);
        assert_eq!(to_hex(&bytes), "FF FF FD 00 01");
        assert!(parse_hex("F").is_err());
        assert!(parse_hex("GG").is_err());
    }
}
