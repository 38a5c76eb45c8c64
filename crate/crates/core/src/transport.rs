//! Byte transports between a bus master and the servo bus, and the bus-side
//! endpoint that serves a [`VirtualBus`] over any of them.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Read, Write};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::bus::{self, wire_time, SharedBus, DEFAULT_BAUD};
use crate::protocol::{encode_status, Packet, StreamDecoder};

/// Duplex byte channel. Implementations preserve byte order but may fragment
/// arbitrarily.
pub trait Transport: Send {
    fn write_all(&mut self, bytes: &[u8]) -> io::Result<()>;

    /// Read available bytes, waiting at most `timeout`. `Ok(0)` means nothing
    /// arrived in time.
    fn read(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize>;

    /// Let `dur` pass on this transport's clock.
    fn idle(&mut self, dur: Duration) {
        std::thread::sleep(dur);
    }

    /// Seconds on this transport's clock.
    fn now(&self) -> f64 {
        monotonic_seconds()
    }

    /// True when every response is produced during `write_all`, so an empty
    /// read means the bus stayed silent.
    fn responds_inline(&self) -> bool {
        false
    }
}

fn monotonic_seconds() -> f64 {
    static START: OnceLock<Instant> = OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_secs_f64()
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn write_all(&mut self, bytes: &[u8]) -> io::Result<()> {
        (**self).write_all(bytes)
    }
    fn read(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize> {
        (**self).read(buf, timeout)
    }
    fn idle(&mut self, dur: Duration) {
        (**self).idle(dur)
    }
    fn now(&self) -> f64 {
        (**self).now()
    }
    fn responds_inline(&self) -> bool {
        (**self).responds_inline()
    }
}

// ---------------------------------------------------------------------------
// In-memory pair
// ---------------------------------------------------------------------------

#[derive(Default)]
struct Pipe {
    data: VecDeque<u8>,
    writer_closed: bool,
}

type SharedPipe = Arc<(Mutex<Pipe>, Condvar)>;

/// One end of an in-memory duplex pair.
pub struct MemoryPort {
    rx: SharedPipe,
    tx: SharedPipe,
}

pub fn memory_pair() -> (MemoryPort, MemoryPort) {
    let a: SharedPipe = Arc::default();
    let b: SharedPipe = Arc::default();
    (MemoryPort { rx: a.clone(), tx: b.clone() }, MemoryPort { rx: b, tx: a })
}

impl Drop for MemoryPort {
    fn drop(&mut self) {
        let (lock, cv) = &*self.tx;
        lock.lock().unwrap_or_else(|e| e.into_inner()).writer_closed = true;
        cv.notify_all();
    }
}

impl Transport for MemoryPort {
    fn write_all(&mut self, bytes: &[u8]) -> io::Result<()> {
        let (lock, cv) = &*self.tx;
        let mut pipe = lock.lock().unwrap_or_else(|e| e.into_inner());
        pipe.data.extend(bytes);
        cv.notify_all();
        Ok(())
    }

    fn read(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize> {
        let (lock, cv) = &*self.rx;
        let deadline = Instant::now() + timeout;
        let mut pipe = lock.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if !pipe.data.is_empty() {
                let n = buf.len().min(pipe.data.len());
                for (slot, b) in buf.iter_mut().zip(pipe.data.drain(..n)) {
                    *slot = b;
                }
                return Ok(n);
            }
            if pipe.writer_closed {
                return Err(io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(0);
            }
            pipe = cv.wait_timeout(pipe, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }
}

fn registry() -> &'static Mutex<HashMap<String, MemoryPort>> {
    static REG: OnceLock<Mutex<HashMap<String, MemoryPort>>> = OnceLock::new();
    REG.get_or_init(Default::default)
}

/// Create a named in-memory pair: the device end is returned, the host end is
/// parked until claimed with `open_transport("mem:<name>")`.
pub fn publish_memory_port(name: &str) -> MemoryPort {
    let (host, device) = memory_pair();
    registry().lock().unwrap_or_else(|e| e.into_inner()).insert(name.to_string(), host);
    device
}

// ---------------------------------------------------------------------------
// Inline virtual bus
// ---------------------------------------------------------------------------

/// Transport wired straight into a shared [`VirtualBus`]: each written frame
/// is handled synchronously and its responses queued for reading. `idle`
/// advances the bus by stepping its dynamics.
pub struct LoopbackBus {
    bus: SharedBus,
    decoder: StreamDecoder,
    pending: VecDeque<u8>,
}

impl LoopbackBus {
    pub fn new(bus: SharedBus) -> Self {
        Self { bus, decoder: StreamDecoder::new(), pending: VecDeque::new() }
    }

    pub fn bus(&self) -> &SharedBus {
        &self.bus
    }
}

impl Transport for LoopbackBus {
    fn write_all(&mut self, bytes: &[u8]) -> io::Result<()> {
        let packets = self.decoder.feed(bytes);
        let mut bus = bus::lock(&self.bus);
        for p in packets {
            if let Packet::Instruction(ip) = p {
                for status in bus.handle_packet(&ip) {
                    let frame = encode_status(&status).map_err(io::Error::other)?;
                    self.pending.extend(frame);
                }
            }
        }
        Ok(())
    }

    fn read(&mut self, buf: &mut [u8], _timeout: Duration) -> io::Result<usize> {
        let n = buf.len().min(self.pending.len());
        for (slot, b) in buf.iter_mut().zip(self.pending.drain(..n)) {
            *slot = b;
        }
        Ok(n)
    }

    fn idle(&mut self, dur: Duration) {
        let mut remaining = dur.as_secs_f64();
        let mut bus = bus::lock(&self.bus);
        while remaining > 1e-12 {
            let h = remaining.min(0.01);
            bus.step(h);
            remaining -= h;
        }
    }

    fn now(&self) -> f64 {
        bus::lock(&self.bus).time()
    }

    fn responds_inline(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Wire capture
// ---------------------------------------------------------------------------

pub type WireLog = Arc<Mutex<Vec<Vec<u8>>>>;

/// Records every buffer written through the inner transport.
pub struct Tap<T> {
    inner: T,
    log: WireLog,
}

impl<T: Transport> Tap<T> {
    pub fn new(inner: T) -> (Self, WireLog) {
        let log = WireLog::default();
        (Self { inner, log: log.clone() }, log)
    }
}

impl<T: Transport> Transport for Tap<T> {
    fn write_all(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(bytes.to_vec());
        self.inner.write_all(bytes)
    }
    fn read(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize> {
        self.inner.read(buf, timeout)
    }
    fn idle(&mut self, dur: Duration) {
        self.inner.idle(dur)
    }
    fn now(&self) -> f64 {
        self.inner.now()
    }
    fn responds_inline(&self) -> bool {
        self.inner.responds_inline()
    }
}

/// Decode every instruction frame captured in a wire log.
pub fn captured_packets(log: &WireLog) -> Vec<Packet> {
    let mut dec = StreamDecoder::new();
    let frames = log.lock().unwrap_or_else(|e| e.into_inner());
    frames.iter().flat_map(|f| dec.feed(f)).collect()
}

// ---------------------------------------------------------------------------
// OS serial device
// ---------------------------------------------------------------------------

pub struct SerialTransport {
    port: Box<dyn serialport::SerialPort>,
}

impl SerialTransport {
    pub fn open(path: &str, baud: u32) -> io::Result<Self> {
        let port = serialport::new(path, baud)
            .timeout(Duration::from_millis(10))
            .open()
            .map_err(io::Error::other)?;
        Ok(Self { port })
    }
}

impl Transport for SerialTransport {
    fn write_all(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.port.write_all(bytes)?;
        self.port.flush()
    }

    fn read(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<usize> {
        self.port.set_timeout(timeout).map_err(io::Error::other)?;
        match self.port.read(buf) {
            Ok(n) => Ok(n),
            Err(e) if e.kind() == io::ErrorKind::TimedOut => Ok(0),
            Err(e) => Err(e),
        }
    }
}

/// Open a transport from a selection string: `mem:<name>` claims a published
/// in-memory port, anything else is treated as a serial device path.
pub fn open_transport(spec: &str, baud: u32) -> io::Result<Box<dyn Transport>> {
    if let Some(name) = spec.strip_prefix("mem:") {
        let port = registry()
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(name)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no in-memory port named `{name}`")))?;
        return Ok(Box::new(port));
    }
    Ok(Box::new(SerialTransport::open(spec, baud)?))
}

// ---------------------------------------------------------------------------
// Bus endpoint
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct EndpointConfig {
    pub baud: u32,
    /// Delay each response by its transmission time at `baud`.
    pub emulate_latency: bool,
    pub poll: Duration,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self { baud: DEFAULT_BAUD, emulate_latency: true, poll: Duration::from_millis(5) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EndpointStats {
    pub packets: u64,
    pub responses: u64,
    pub resyncs: u64,
    pub malformed: u64,
}

/// Serve `bus` over `transport` until the peer closes the channel.
///
/// Responses are written one whole frame at a time, so status packets never
/// interleave on the wire.
pub fn serve_transport<T: Transport>(bus: &SharedBus, mut transport: T, cfg: EndpointConfig) -> EndpointStats {
    let mut decoder = StreamDecoder::new();
    let mut stats = EndpointStats::default();
    let mut buf = [0u8; 512];
    while let Ok(n) = transport.read(&mut buf, cfg.poll) {
        if n == 0 {
            continue;
        }
        for p in decoder.feed(&buf[..n]) {
            let Packet::Instruction(ip) = p else { continue };
            stats.packets += 1;
            let responses = bus::lock(bus).handle_packet(&ip);
            for status in responses {
                let Ok(frame) = encode_status(&status) else { continue };
                if cfg.emulate_latency {
                    std::thread::sleep(Duration::from_secs_f64(wire_time(frame.len(), cfg.baud)));
                }
                if transport.write_all(&frame).is_err() {
                    return finish(stats, &decoder);
                }
                stats.responses += 1;
            }
        }
    }
    finish(stats, &decoder)
}

fn finish(mut stats: EndpointStats, decoder: &StreamDecoder) -> EndpointStats {
    stats.resyncs = decoder.resync_count();
    stats.malformed = decoder.malformed_count();
    stats
}

pub fn spawn_endpoint<T: Transport + 'static>(
    bus: SharedBus,
    transport: T,
    cfg: EndpointConfig,
) -> JoinHandle<EndpointStats> {
    std::thread::spawn(move || serve_transport(&bus, transport, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_pair_is_duplex_and_reports_close() {
        let (mut a, mut b) = memory_pair();
        a.write_all(&[1, 2, 3]).unwrap();
        let mut buf = [0u8; 8];
        assert_eq!(b.read(&mut buf, Duration::from_millis(10)).unwrap(), 3);
        assert_eq!(&buf[..3], &[1, 2, 3]);
        assert_eq!(a.read(&mut buf, Duration::from_millis(1)).unwrap(), 0);
        drop(b);
        assert!(a.read(&mut buf, Duration::from_millis(1)).is_err());
    }

    #[test]
    fn named_ports_are_claimed_once() {
        let mut dev = publish_memory_port("transport-test");
        let mut host = open_transport("mem:transport-test", DEFAULT_BAUD).unwrap();
        host.write_all(&[9]).unwrap();
        let mut buf = [0u8; 1];
        assert_eq!(dev.read(&mut buf, Duration::from_millis(10)).unwrap(), 1);
        assert!(open_transport("mem:transport-test", DEFAULT_BAUD).is_err());
    }
}
