//! The live teleop loop behind `/ws`.
//!
//! One thread owns the [`Session`] and ticks it at the control rate. Clients
//! reach it only through a bounded mailbox, drained at tick boundaries, and
//! see it only through a bounded snapshot queue that drops the oldest entry
//! when a reader falls behind. Neither side ever blocks the loop.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::mpsc::{self as std_mpsc, TryRecvError, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use gex_client::api::SessionSetup;
use gex_client::messages::{Event, ParamsPatch, ServerMessage};
use gex_core::gesture::{write_record, GestureRecord, HandRecord};
use gex_core::teleop::{GesturePlayer, ReplayTracker, SceneObject, Session, TickReport};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, watch};

use crate::config::{check_setup, Settings};

/// Pending commands per loop; further commands are refused as busy.
pub const MAILBOX_CAPACITY: usize = 256;
/// Snapshots kept per reader before the oldest is dropped.
pub const SNAPSHOT_CAPACITY: usize = 16;
const STATS_WINDOW: usize = 1000;
const STATS_EVERY: u64 = 25;
/// A loop this many periods late restarts its schedule instead of
/// bursting to catch up.
const RESYNC_PERIODS: u32 = 5;

/// A client command, already parsed and checked by the connection task.
#[derive(Debug, Clone)]
pub enum Request {
    SetGloveQ(Vec<f64>),
    Replay { name: String, gesture: Vec<GestureRecord> },
    RecordStart(PathBuf),
    RecordStop,
    SetScene(Option<SceneObject>),
    SetParams(ParamsPatch),
}

#[derive(Debug)]
pub struct Envelope {
    pub seq: u64,
    pub request: Request,
    /// The connection's outbox for the reply.
    pub reply: mpsc::Sender<ServerMessage>,
}

enum Mail {
    Command(Envelope),
    Stop,
}

/// One control cycle as published to connections.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub report: TickReport,
    pub recording: bool,
    pub replaying: bool,
}

/// Tick cadence over the most recent window, in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    pub ticks: u64,
    pub period: f64,
    pub window: usize,
    /// 99th percentile and maximum of |interval − period| between tick starts.
    pub interval_dev_p99: f64,
    pub interval_dev_max: f64,
    /// 99th percentile of how late a tick started against its schedule.
    pub lateness_p99: f64,
    /// 99th percentile of the time spent inside a tick.
    pub busy_p99: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum MailError {
    #[error("server busy, command dropped")]
    Busy,
    #[error("control loop has stopped")]
    Stopped,
}

/// Cloneable access to a running loop.
#[derive(Clone)]
pub struct LiveHandle {
    mailbox: std_mpsc::SyncSender<Mail>,
    snapshots: broadcast::Sender<Arc<Snapshot>>,
    scene: watch::Receiver<Option<SceneObject>>,
    stats: watch::Receiver<LoopStats>,
}

impl LiveHandle {
    pub fn submit(&self, envelope: Envelope) -> Result<(), MailError> {
        self.mailbox.try_send(Mail::Command(envelope)).map_err(|e| match e {
            TrySendError::Full(_) => MailError::Busy,
            TrySendError::Disconnected(_) => MailError::Stopped,
        })
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<Snapshot>> {
        self.snapshots.subscribe()
    }

    pub fn scene(&self) -> watch::Receiver<Option<SceneObject>> {
        self.scene.clone()
    }

    pub fn stats(&self) -> LoopStats {
        self.stats.borrow().clone()
    }
}

/// Owner of the loop thread.
pub struct LiveLoop {
    handle: LiveHandle,
    thread: Option<JoinHandle<()>>,
}

impl LiveLoop {
    pub fn start(settings: Arc<Settings>) -> Result<Self, String> {
        let s = &settings;
        let home: Vec<f64> = s.rig.glove.home().iter().map(|q| q.to_degrees()).collect();
        let session = Session::new(s.teleop.clone(), s.rig.clone(), s.scene.clone(), Some(&home), false)
            .map_err(|e| e.to_string())?;
        let (mailbox, inbox) = std_mpsc::sync_channel(MAILBOX_CAPACITY);
        let (snapshots, _) = broadcast::channel(SNAPSHOT_CAPACITY);
        let (scene_tx, scene) = watch::channel(s.scene.clone());
        let (stats_tx, stats) = watch::channel(LoopStats { period: s.teleop.dt, ..Default::default() });
        let control = Control {
            settings: settings.clone(),
            session,
            recording: None,
            replay: None,
            pending_record: None,
            snapshots: snapshots.clone(),
            scene: scene_tx,
            stats: stats_tx,
        };
        let priority = s.control_priority;
        let thread = std::thread::Builder::new()
            .name("gex-control".into())
            .spawn(move || {
                if let Some(p) = priority {
                    realtime(p);
                }
                control.run(inbox)
            })
            .map_err(|e| e.to_string())?;
        Ok(Self { handle: LiveHandle { mailbox, snapshots, scene, stats }, thread: Some(thread) })
    }

    pub fn handle(&self) -> LiveHandle {
        self.handle.clone()
    }

    /// Stop the loop, closing any open recording.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = self.handle.mailbox.send(Mail::Stop);
            let _ = t.join();
        }
    }
}

impl Drop for LiveLoop {
    fn drop(&mut self) {
        self.stop();
    }
}

struct Recording {
    path: PathBuf,
    gesture: BufWriter<File>,
    hand: BufWriter<File>,
    records: u64,
}

impl Recording {
    fn open(path: PathBuf, setup: &SessionSetup) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(sidecar(&path, "setup.json"), serde_json::to_vec_pretty(setup)?)?;
        Ok(Self {
            gesture: BufWriter::new(File::create(&path)?),
            hand: BufWriter::new(File::create(sidecar(&path, "hand.jsonl"))?),
            path,
            records: 0,
        })
    }

    fn close(mut self) -> std::io::Result<(PathBuf, u64)> {
        self.gesture.flush()?;
        self.hand.flush()?;
        Ok((self.path, self.records))
    }
}

/// `<path>.<suffix>`: the files written next to a recorded gesture.
pub fn sidecar(path: &std::path::Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

struct LiveReplay {
    player: GesturePlayer,
    tracker: ReplayTracker,
    k: u64,
    seq: u64,
    reply: mpsc::Sender<ServerMessage>,
}

struct Control {
    settings: Arc<Settings>,
    session: Session,
    recording: Option<Recording>,
    replay: Option<LiveReplay>,
    pending_record: Option<(PathBuf, u64, mpsc::Sender<ServerMessage>)>,
    snapshots: broadcast::Sender<Arc<Snapshot>>,
    scene: watch::Sender<Option<SceneObject>>,
    stats: watch::Sender<LoopStats>,
}

fn send(reply: &mpsc::Sender<ServerMessage>, seq: u64, event: Event) {
    // A full outbox means the client stopped reading; the loop never waits.
    if reply.try_send(ServerMessage { seq, event }).is_err() {
        tracing::debug!(seq, "reply dropped");
    }
}

fn ack(detail: impl Into<Option<String>>) -> Event {
    Event::Ack { detail: detail.into() }
}

fn error(message: impl Into<String>) -> Event {
    Event::Error { message: message.into() }
}

impl Control {
    fn run(mut self, inbox: std_mpsc::Receiver<Mail>) {
        let dt = self.session.config.dt;
        let period = Duration::from_secs_f64(dt);
        let mut next = Instant::now();
        let mut last_start: Option<Instant> = None;
        let mut intervals = VecDeque::with_capacity(STATS_WINDOW);
        let mut lateness = VecDeque::with_capacity(STATS_WINDOW);
        let mut busy = VecDeque::with_capacity(STATS_WINDOW);
        let mut ticks = 0u64;
        tracing::info!(rate = 1.0 / dt, "control loop started");
        loop {
            let now = Instant::now();
            if now < next {
                std::thread::sleep(next - now);
            }
            let start = Instant::now();
            push_window(&mut lateness, start.saturating_duration_since(next).as_secs_f64());
            if let Some(prev) = last_start {
                push_window(&mut intervals, ((start - prev).as_secs_f64() - dt).abs());
            }
            last_start = Some(start);
            next += period;
            if start > next + period * RESYNC_PERIODS {
                tracing::warn!("control loop fell behind; restarting its schedule");
                next = start + period;
            }

            loop {
                match inbox.try_recv() {
                    Ok(Mail::Command(env)) => self.apply(env),
                    Ok(Mail::Stop) | Err(TryRecvError::Disconnected) => {
                        self.finish_recording();
                        tracing::info!(ticks, "control loop stopped");
                        return;
                    }
                    Err(TryRecvError::Empty) => break,
                }
            }
            if let Some((path, seq, reply)) = self.pending_record.take() {
                self.start_recording(path, seq, &reply);
            }
            self.step();
            push_window(&mut busy, start.elapsed().as_secs_f64());
            ticks += 1;
            if ticks.is_multiple_of(STATS_EVERY) {
                self.stats.send_replace(LoopStats {
                    ticks,
                    period: dt,
                    window: intervals.len(),
                    interval_dev_p99: percentile(&intervals, 0.99),
                    interval_dev_max: intervals.iter().cloned().fold(0.0, f64::max),
                    lateness_p99: percentile(&lateness, 0.99),
                    busy_p99: percentile(&busy, 0.99),
                });
            }
        }
    }

    fn busy(&self) -> Option<&'static str> {
        if self.replay.is_some() {
            Some("a replay is in progress")
        } else if self.recording.is_some() || self.pending_record.is_some() {
            Some("a recording is in progress")
        } else {
            None
        }
    }

    /// Restart the rig from `initial` (degrees) under the current setup.
    fn rebuild(&mut self, initial: &[f64]) -> Result<(), String> {
        let config = self.session.config.clone();
        let scene = self.session.scene().cloned();
        self.session = Session::new(config, self.settings.rig.clone(), scene, Some(initial), false).map_err(|e| e.to_string())?;
        Ok(())
    }

    fn apply(&mut self, env: Envelope) {
        let Envelope { seq, request, reply } = env;
        let result: Result<Option<String>, String> = match request {
            Request::SetGloveQ(q) => match self.replay {
                Some(_) => Err("a replay is in progress".into()),
                None => self.session.set_operator_target(&q).map(|_| None).map_err(|e| e.to_string()),
            },
            Request::SetScene(scene) => match self.busy() {
                Some(why) => Err(format!("{why}; the scene is fixed until it ends")),
                None => self.session.set_scene(scene.clone()).map_err(|e| e.to_string()).map(|_| {
                    self.scene.send_replace(scene);
                    None
                }),
            },
            Request::SetParams(patch) => match self.busy() {
                Some(why) => Err(format!("{why}; parameters are fixed until it ends")),
                None => self.set_params(patch).map(|_| None),
            },
            Request::RecordStart(path) => match self.busy() {
                Some(why) => Err(why.to_string()),
                None => {
                    // Opened after the mailbox is drained so that later
                    // commands in this batch land inside the recording.
                    self.pending_record = Some((path, seq, reply));
                    return;
                }
            },
            Request::RecordStop => match self.recording.take() {
                None => Err("not recording".into()),
                Some(r) => r
                    .close()
                    .map(|(path, n)| Some(format!("wrote {n} records to {}", path.display())))
                    .map_err(|e| e.to_string()),
            },
            Request::Replay { name, gesture } => match self.busy() {
                Some(why) => Err(why.to_string()),
                None => self.start_replay(&gesture, seq, reply.clone()).map(|n| Some(format!("replaying {name}: {n} ticks"))),
            },
        };
        send(&reply, seq, match result {
            Ok(detail) => ack(detail),
            Err(message) => error(message),
        });
    }

    fn set_params(&mut self, patch: ParamsPatch) -> Result<(), String> {
        let mut config = self.session.config.clone();
        if let Some(d) = patch.detector {
            config.detector = d;
        }
        if let Some(i) = patch.impedance {
            config.impedance = i;
        }
        if let Some(o) = patch.operator {
            config.operator = o;
        }
        if let Some(r) = patch.retarget {
            config.retarget = r;
        }
        check_setup(&self.settings.rig, &config, self.session.scene())?;
        let retarget_changed = config.retarget != self.session.config.retarget;
        self.session.config = config;
        let target = self.session.operator_target().to_vec();
        self.session.set_operator_target(&target).map_err(|e| e.to_string())?;
        if retarget_changed {
            self.session.reset_retarget();
        }
        Ok(())
    }

    fn start_recording(&mut self, path: PathBuf, seq: u64, reply: &mpsc::Sender<ServerMessage>) {
        // A recording starts from a fresh rig at the current operator pose,
        // the same state a headless replay of it starts from.
        let target = self.session.operator_target().to_vec();
        let setup = SessionSetup { teleop: self.session.config.clone(), scene: self.session.scene().cloned() };
        let result = self.rebuild(&target).and_then(|_| Recording::open(path.clone(), &setup).map_err(|e| e.to_string()));
        match result {
            Ok(r) => {
                tracing::info!(path = %path.display(), "recording started");
                self.recording = Some(r);
                send(reply, seq, ack(format!("recording to {}", path.display())));
            }
            Err(e) => send(reply, seq, error(e)),
        }
    }

    fn finish_recording(&mut self) {
        if let Some(r) = self.recording.take() {
            match r.close() {
                Ok((path, n)) => tracing::info!(path = %path.display(), records = n, "recording closed"),
                Err(e) => tracing::error!(error = %e, "closing recording failed"),
            }
        }
    }

    fn start_replay(&mut self, gesture: &[GestureRecord], seq: u64, reply: mpsc::Sender<ServerMessage>) -> Result<u64, String> {
        let player = GesturePlayer::new(gesture, self.session.config.dt).map_err(|e| e.to_string())?;
        self.rebuild(player.initial())?;
        let ticks = player.ticks();
        self.replay = Some(LiveReplay { tracker: ReplayTracker::new(&self.session), player, k: 0, seq, reply });
        Ok(ticks)
    }

    fn step(&mut self) {
        if let Some(r) = &self.replay {
            let target = r.player.target(r.k).expect("replay ends before its last tick");
            if let Err(e) = self.session.set_operator_target(&target) {
                tracing::error!(error = %e, "replay target rejected");
            }
        }
        let t = self.session.time();
        let q_glove = self.session.operator_target().to_vec();
        let report = match self.session.tick() {
            Ok(r) => r,
            Err(e) => {
                tracing::error!(error = %e, "control tick failed");
                return;
            }
        };
        if let Some(rec) = &mut self.recording {
            let written = write_record(&mut rec.gesture, &GestureRecord { t, q_glove })
                .and_then(|_| write_record(&mut rec.hand, &HandRecord { t: report.timestamp, q_hand: report.q_hand.clone() }));
            match written {
                Ok(()) => rec.records += 1,
                Err(e) => {
                    tracing::error!(error = %e, "recording failed; closing it");
                    self.finish_recording();
                }
            }
        }
        let mut finished = None;
        if let Some(r) = &mut self.replay {
            r.tracker.observe(&report);
            r.k += 1;
            if r.k == r.player.ticks() {
                finished = self.replay.take();
            }
        }
        if let Some(r) = finished {
            send(&r.reply, r.seq, Event::ReplayFinished { summary: r.tracker.finish() });
        }
        // Fails only when nobody is subscribed.
        let _ = self.snapshots.send(Arc::new(Snapshot {
            report,
            recording: self.recording.is_some(),
            replaying: self.replay.is_some(),
        }));
    }
}

/// Move the calling thread to FIFO scheduling. Failure (usually missing
/// privileges) is logged and the loop runs under the normal scheduler.
#[cfg(unix)]
fn realtime(priority: u8) {
    use thread_priority::*;
    let result = ThreadPriorityValue::try_from(priority).map_err(|e| e.to_string()).and_then(|value| {
        set_thread_priority_and_policy(
            thread_native_id(),
            ThreadPriority::Crossplatform(value),
            ThreadSchedulePolicy::Realtime(RealtimeThreadSchedulePolicy::Fifo),
        )
        .map_err(|e| format!("{e:?}"))
    });
    match result {
        Ok(()) => tracing::info!(priority, "control loop runs at real-time priority"),
        Err(e) => tracing::warn!(priority, error = %e, "real-time priority unavailable"),
    }
}

#[cfg(not(unix))]
fn realtime(priority: u8) {
    tracing::warn!(priority, "real-time priority is only supported on unix");
}

fn push_window(window: &mut VecDeque<f64>, value: f64) {
    if window.len() == STATS_WINDOW {
        window.pop_front();
    }
    window.push_back(value);
}

fn percentile(window: &VecDeque<f64>, p: f64) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let mut v: Vec<f64> = window.iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * p).round() as usize]
}
