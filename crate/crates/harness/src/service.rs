//! TCP telemetry and teleoperation service.
//!
//! One simulation thread owns the world and steps it at `dt / time_scale`
//! wall-clock seconds. Every connected client gets the latest state at
//! `stream_hz` through a bounded outbound queue that drops its oldest frame
//! when full, so a slow client never stalls the loop or the other clients.
//!
//! Each connection has a reader thread (frames → simulation thread) and a
//! writer thread (queue → socket). Client messages are applied at most one
//! step after they arrive; actions use a zero-order hold.

use std::collections::BTreeMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use absdl_core::dataset::{demonstrated_action, DatasetError, DemoHeader, DemoWriter, Provenance, Sample, SubTaskSpec};
use absdl_core::evaluator::{EpisodeContext, StepRecord, Trajectory};
use absdl_core::safety::{ControlMode, OverrideCommand, SafetyError, Verdict};
use absdl_core::sim::{Action, ManoeuvreKind, ManoeuvreSpec, Observation, SimError, WorldState};
use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::wire::{read_frame, write_frame, Envelope, RecordAction, Role, WireError, WireMessage};

/// Inbound events buffered before reader threads block.
const EVENT_QUEUE: usize = 1024;
/// Longest the simulation thread sleeps before re-checking the stop flag.
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("replay trajectory has no steps")]
    EmptyReplay,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What the service streams.
#[derive(Clone, Debug)]
pub enum Source {
    /// Step the configured scenario, starting with this manoeuvre.
    Live(ManoeuvreKind),
    /// Stream a logged trajectory in a loop; all commands are refused.
    Replay(Trajectory),
}

#[derive(Clone, Debug)]
pub struct ServiceOptions {
    pub source: Source,
    /// Directory for recorded sessions (one `<manoeuvre>.jsonl` dataset per
    /// sub-task). Recording is refused when unset.
    pub record_dir: Option<PathBuf>,
}

/// Counters returned when the service stops.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ServiceReport {
    pub steps: u64,
    pub updates_sent: u64,
    /// Outbound frames discarded because a client queue was full.
    pub updates_dropped: u64,
    /// Inbound frames dropped for a stale or repeated sequence number.
    pub stale_frames: u64,
    pub malformed_frames: u64,
    /// Dataset files written and their sample counts.
    pub recordings: Vec<(PathBuf, usize)>,
}

pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: JoinHandle<Result<ServiceReport, ServiceError>>,
    acceptor: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Flag that ends the service when set.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Stop the service and wait for its threads.
    pub fn shutdown(self) -> Result<ServiceReport, ServiceError> {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    /// Wait until the service stops (through the stop flag or a fatal error).
    pub fn join(self) -> Result<ServiceReport, ServiceError> {
        let result = self.sim.join().unwrap_or_else(|_| Err(io::Error::other("simulation thread panicked").into()));
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
        result
    }
}

/// Start serving on `listener`.
pub fn start(cfg: &ScenarioConfig, listener: TcpListener, options: ServiceOptions) -> Result<ServiceHandle, ServiceError> {
    cfg.validate()?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let (events_tx, events_rx) = bounded(EVENT_QUEUE);
    let sim = Simulation::new(cfg.clone(), options)?;
    let queue = cfg.service.queue;

    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::Builder::new()
            .name("absdl-accept".into())
            .spawn(move || accept_loop(listener, stop, events_tx, queue))?
    };
    let sim = {
        let stop = Arc::clone(&stop);
        thread::Builder::new().name("absdl-sim".into()).spawn(move || sim.run(&events_rx, &stop))?
    };
    log::info!("telemetry service listening on {addr}");
    Ok(ServiceHandle { addr, stop, sim, acceptor })
}

enum Event {
    Connected { id: u64, stream: TcpStream, tx: Sender<Envelope>, rx: Receiver<Envelope> },
    Frame { id: u64, env: Envelope },
    Malformed { id: u64, message: String },
    /// `notify` asks for the reason to be sent to the client before closing.
    Closed { id: u64, reason: String, notify: bool },
}

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, events: Sender<Event>, queue: usize) {
    let mut next_id = 1;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id;
                next_id += 1;
                log::info!("client {id} connected from {peer}");
                if let Err(e) = spawn_client(id, stream, &events, queue) {
                    log::warn!("client {id}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn spawn_client(id: u64, stream: TcpStream, events: &Sender<Event>, queue: usize) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut reader = stream.try_clone()?;
    let mut writer = stream.try_clone()?;
    let (tx, rx) = bounded::<Envelope>(queue);
    let writer_rx = rx.clone();
    if events.send(Event::Connected { id, stream, tx, rx }).is_err() {
        return Ok(());
    }
    let writer_events = events.clone();
    thread::Builder::new().name(format!("absdl-tx-{id}")).spawn(move || {
        for env in writer_rx.iter() {
            if let Err(e) = write_frame(&mut writer, &env) {
                let _ = writer_events.send(Event::Closed { id, reason: e.to_string(), notify: false });
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    })?;
    let events = events.clone();
    thread::Builder::new().name(format!("absdl-rx-{id}")).spawn(move || loop {
        let event = match read_frame(&mut reader) {
            Ok(env) => Event::Frame { id, env },
            Err(WireError::Malformed(message)) => Event::Malformed { id, message },
            Err(e) => {
                let notify = matches!(e, WireError::TooLarge(_));
                let reason = match e {
                    WireError::Io(ref io) if io.kind() == io::ErrorKind::UnexpectedEof => "disconnected".to_string(),
                    other => other.to_string(),
                };
                let _ = events.send(Event::Closed { id, reason, notify });
                break;
            }
        };
        if events.send(event).is_err() {
            break;
        }
    })?;
    Ok(())
}

struct Client {
    tx: Sender<Envelope>,
    /// Receiving end of the client's own queue, used to evict the oldest frame.
    rx: Receiver<Envelope>,
    stream: TcpStream,
    authorized: bool,
    last_seq: Option<u64>,
    out_seq: u64,
}

/// Open dataset file for one sub-task.
struct Recording {
    path: PathBuf,
    writer: DemoWriter,
    subtask: SubTaskSpec,
    next_episode: u32,
}

struct Live {
    ctx: EpisodeContext,
    spec: ManoeuvreSpec,
    world: WorldState,
    prev: Option<Observation>,
    step: usize,
    steps: usize,
    seed: u64,
    /// Action held from the controller's last command.
    held: Action,
    override_cmd: Option<(OverrideCommand, u64)>,
    /// Sub-task id being recorded and the file's key in `recordings`.
    recording: Option<(u32, u32)>,
    recordings: BTreeMap<u32, Recording>,
}

/// Latest published state.
struct Snapshot {
    t: f64,
    world: WorldState,
    observation: Observation,
    verdict: Verdict,
}

enum Stream {
    Live(Box<Live>),
    Replay { trajectory: Trajectory, index: usize },
}

struct Simulation {
    cfg: ScenarioConfig,
    record_dir: Option<PathBuf>,
    stream: Stream,
    snapshot: Snapshot,
    clients: BTreeMap<u64, Client>,
    controller: Option<u64>,
    report: ServiceReport,
}

impl Simulation {
    fn new(cfg: ScenarioConfig, options: ServiceOptions) -> Result<Self, ServiceError> {
        let (stream, snapshot) = match options.source {
            Source::Live(kind) => {
                let ctx = cfg.episode_context(kind)?;
                let live = Live::start(ctx, cfg.seed)?;
                let snapshot = Snapshot {
                    t: live.world.t,
                    world: live.world,
                    observation: live.ctx.observation.observe(&live.world, None)?,
                    verdict: Verdict::Pass,
                };
                (Stream::Live(Box::new(live)), snapshot)
            }
            Source::Replay(trajectory) => {
                let first = trajectory.records.first().ok_or(ServiceError::EmptyReplay)?;
                let snapshot = snapshot_of(first);
                (Stream::Replay { trajectory, index: 0 }, snapshot)
            }
        };
        Ok(Self {
            cfg,
            record_dir: options.record_dir,
            stream,
            snapshot,
            clients: BTreeMap::new(),
            controller: None,
            report: ServiceReport::default(),
        })
    }

    fn run(mut self, events: &Receiver<Event>, stop: &AtomicBool) -> Result<ServiceReport, ServiceError> {
        let tick = Duration::from_secs_f64(self.cfg.dt / self.cfg.service.time_scale);
        let frame = Duration::from_secs_f64(1.0 / self.cfg.service.stream_hz);
        let start = Instant::now();
        let mut next_tick = start + tick;
        let mut next_frame = start;
        let result = loop {
            if stop.load(Ordering::SeqCst) {
                break Ok(());
            }
            let now = Instant::now();
            if now >= next_tick {
                if let Err(e) = self.step() {
                    break Err(e);
                }
                next_tick = advance_deadline(next_tick, tick, now);
            }
            if now >= next_frame {
                self.broadcast();
                next_frame = advance_deadline(next_frame, frame, now);
            }
            let deadline = next_tick.min(next_frame).min(now + POLL);
            match events.recv_deadline(deadline) {
                Ok(event) => self.handle(event),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break Ok(()),
            }
        };
        self.close_all();
        result.map(|()| self.report)
    }

    fn step(&mut self) -> Result<(), ServiceError> {
        self.report.steps += 1;
        match &mut self.stream {
            Stream::Replay { trajectory, index } => {
                *index = (*index + 1) % trajectory.records.len();
                self.snapshot = snapshot_of(&trajectory.records[*index]);
            }
            Stream::Live(live) => {
                let connected = |id: u64| self.clients.contains_key(&id);
                self.snapshot = live.step(connected)?;
            }
        }
        Ok(())
    }

    fn broadcast(&mut self) {
        let recording = matches!(&self.stream, Stream::Live(l) if l.recording.is_some());
        let msg = WireMessage::StateUpdate {
            t: self.snapshot.t,
            world: self.snapshot.world,
            observation: self.snapshot.observation,
            verdict: self.snapshot.verdict,
            recording,
        };
        let ids: Vec<u64> = self.clients.keys().copied().collect();
        for id in ids {
            self.send(id, msg.clone());
            self.report.updates_sent += 1;
        }
    }

    /// Queue `msg` for client `id`, evicting its oldest frame if the queue is full.
    fn send(&mut self, id: u64, msg: WireMessage) {
        let Some(client) = self.clients.get_mut(&id) else { return };
        client.out_seq += 1;
        let mut env = Envelope::new(client.out_seq, msg);
        loop {
            match client.tx.try_send(env) {
                Ok(()) => return,
                Err(TrySendError::Full(back)) => {
                    if client.rx.try_recv().is_ok() {
                        self.report.updates_dropped += 1;
                    }
                    env = back;
                }
                Err(TrySendError::Disconnected(_)) => return,
            }
        }
    }

    fn reply_error(&mut self, id: u64, re: Option<u64>, message: impl Into<String>) {
        let message = message.into();
        log::debug!("client {id}: {message}");
        self.send(id, WireMessage::Error { re, message });
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Connected { id, stream, tx, rx } => {
                let authorized = self.cfg.service.token.is_none();
                self.clients.insert(id, Client { tx, rx, stream, authorized, last_seq: None, out_seq: 0 });
            }
            Event::Malformed { id, message } => {
                self.report.malformed_frames += 1;
                self.reply_error(id, None, format!("malformed frame: {message}"));
            }
            Event::Closed { id, reason, notify } => {
                if self.clients.contains_key(&id) {
                    log::info!("client {id} closed: {reason}");
                    if notify {
                        self.reply_error(id, None, reason);
                    }
                    self.remove(id);
                }
            }
            Event::Frame { id, env } => {
                let Some(client) = self.clients.get_mut(&id) else { return };
                if client.last_seq.is_some_and(|last| env.seq <= last) {
                    self.report.stale_frames += 1;
                    return;
                }
                client.last_seq = Some(env.seq);
                self.handle_message(id, env);
            }
        }
    }

    fn remove(&mut self, id: u64) {
        self.clients.remove(&id);
        if self.controller == Some(id) {
            self.remove_controller();
        }
    }

    fn handle_message(&mut self, id: u64, env: Envelope) {
        let re = env.seq;
        let authorized = self.clients.get(&id).is_some_and(|c| c.authorized);
        match env.msg {
            WireMessage::Hello { role, token } => {
                if let Some(expected) = &self.cfg.service.token {
                    if token.as_deref() != Some(expected.as_str()) {
                        return self.reply_error(id, Some(re), "invalid token");
                    }
                    if let Some(c) = self.clients.get_mut(&id) {
                        c.authorized = true;
                    }
                }
                if role == Role::Controller {
                    if self.controller.is_some_and(|c| c != id) {
                        return self.reply_error(id, Some(re), "a controller is already connected");
                    }
                    self.controller = Some(id);
                } else if self.controller == Some(id) {
                    self.remove_controller();
                }
                let detail = match role {
                    Role::Controller => "controller",
                    Role::Observer => "observer",
                };
                self.send(id, WireMessage::Ack { re, detail: detail.into() });
            }
            WireMessage::ActionCommand { action, .. } => {
                let controller = self.controller;
                let Stream::Live(live) = &mut self.stream else {
                    return self.reply_error(id, Some(re), "replay is read-only");
                };
                if controller != Some(id) {
                    return self.reply_error(id, Some(re), "only the registered controller may send actions");
                }
                live.held = action;
            }
            WireMessage::Override { mut command } => {
                let Stream::Live(live) = &mut self.stream else {
                    return self.reply_error(id, Some(re), "replay is read-only");
                };
                if !authorized {
                    return self.reply_error(id, Some(re), "override requires a valid token");
                }
                let detail = match command.mode {
                    ControlMode::Manual => {
                        command.timestamp = live.world.t;
                        live.override_cmd = Some((command, id));
                        "manual"
                    }
                    ControlMode::Autonomous => {
                        live.override_cmd = None;
                        "autonomous"
                    }
                };
                self.send(id, WireMessage::Ack { re, detail: detail.into() });
            }
            WireMessage::RecordControl { action, tag } => {
                if !authorized {
                    return self.reply_error(id, Some(re), "recording requires a valid token");
                }
                match self.record_control(action, tag) {
                    Ok(detail) => self.send(id, WireMessage::Ack { re, detail }),
                    Err(message) => self.reply_error(id, Some(re), message),
                }
            }
            WireMessage::StateUpdate { .. } | WireMessage::Ack { .. } | WireMessage::Error { .. } => {
                self.reply_error(id, Some(re), "unexpected message type from a client");
            }
        }
    }

    fn remove_controller(&mut self) {
        self.controller = None;
        if let Stream::Live(live) = &mut self.stream {
            live.held = Action::ZERO;
        }
    }

    fn record_control(&mut self, action: RecordAction, tag: u32) -> Result<String, String> {
        let Stream::Live(live) = &mut self.stream else { return Err("replay is read-only".into()) };
        match action {
            RecordAction::Start => {
                let dir = self.record_dir.as_ref().ok_or("recording is disabled for this service")?;
                if live.recording.is_some() {
                    return Err("already recording".into());
                }
                let subtask = self.cfg.subtask_by_tag(tag).ok_or_else(|| format!("unknown sub-task tag {tag}"))?;
                let kind = subtask.manoeuvre;
                if !live.recordings.contains_key(&tag) {
                    let path = dir.join(format!("{kind}.jsonl"));
                    let mut header = DemoHeader::new(self.cfg.dt, subtask.clone(), Provenance::Human);
                    header.config_fingerprint = Some(self.cfg.fingerprint());
                    let writer = DemoWriter::create(&path, &header).map_err(|e| e.to_string())?;
                    live.recordings.insert(tag, Recording { path, writer, subtask, next_episode: 0 });
                }
                let ctx = self.cfg.episode_context(kind).map_err(|e| e.to_string())?;
                live.restart(ctx).map_err(|e| e.to_string())?;
                let rec = live.recordings.get_mut(&tag).expect("inserted above");
                let episode = rec.next_episode;
                rec.next_episode += 1;
                live.recording = Some((tag, episode));
                Ok(format!("recording {kind} episode {episode} to {}", rec.path.display()))
            }
            RecordAction::Stop => {
                let (tag, _) = live.recording.take().ok_or("not recording")?;
                let rec = &live.recordings[&tag];
                Ok(format!("stopped; {} samples in {}", rec.writer.len(), rec.path.display()))
            }
        }
    }

    fn close_all(&mut self) {
        for client in self.clients.values() {
            let _ = client.stream.shutdown(Shutdown::Both);
        }
        self.clients.clear();
        if let Stream::Live(live) = &mut self.stream {
            let recordings = std::mem::take(&mut live.recordings);
            self.report.recordings = recordings.into_values().map(|r| (r.path, r.writer.len())).collect();
        }
    }
}

impl Live {
    fn start(ctx: EpisodeContext, seed: u64) -> Result<Self, ServiceError> {
        let (spec, world) = ctx.case(seed);
        let steps = spec.steps(ctx.arbiter.dt);
        Ok(Self {
            ctx,
            spec,
            world,
            prev: None,
            step: 0,
            steps,
            seed,
            held: Action::ZERO,
            override_cmd: None,
            recording: None,
            recordings: BTreeMap::new(),
        })
    }

    /// Switch to `ctx` and begin a fresh episode with the next seed.
    fn restart(&mut self, ctx: EpisodeContext) -> Result<(), ServiceError> {
        self.ctx = ctx;
        self.next_episode();
        Ok(())
    }

    fn next_episode(&mut self) {
        self.seed = self.seed.wrapping_add(1);
        let (spec, world) = self.ctx.case(self.seed);
        self.steps = spec.steps(self.ctx.arbiter.dt);
        self.spec = spec;
        self.world = world;
        self.prev = None;
        self.step = 0;
    }

    fn step(&mut self, connected: impl Fn(u64) -> bool) -> Result<Snapshot, ServiceError> {
        let observation = self.ctx.observation.observe(&self.world, self.prev.as_ref())?;
        // The override stays live while its sender is connected; after a
        // disconnect it ages out through the arbiter's staleness check.
        if let Some((cmd, owner)) = &mut self.override_cmd {
            if connected(*owner) {
                cmd.timestamp = self.world.t;
            }
        }
        let override_cmd = self.override_cmd.as_ref().map(|(c, _)| c);
        let arbitration = self.ctx.arbiter.arbitrate(self.held, &self.world, &self.spec, override_cmd)?;
        let (next, ugv_stopped) = self.ctx.arbiter.advance(&self.world, &arbitration, &self.spec)?;
        let record = StepRecord { t: self.world.t, world: self.world, observation, proposed: self.held, arbitration, ugv_stopped };
        if let Some((tag, episode)) = self.recording {
            let rec = self.recordings.get_mut(&tag).expect("recording file is open");
            let sample = Sample {
                t: record.t,
                state: observation.to_vector(),
                action: demonstrated_action(&record).as_array(),
                episode,
                tag: rec.subtask.id,
            };
            rec.writer.append(&sample)?;
        }
        let snapshot = snapshot_of(&record);
        self.world = next;
        self.prev = Some(observation);
        self.step += 1;
        if self.step >= self.steps {
            self.next_episode();
            // A session spanning several manoeuvre runs keeps recording, one
            // episode per run.
            if let Some((tag, episode)) = &mut self.recording {
                let rec = self.recordings.get_mut(tag).expect("recording file is open");
                *episode = rec.next_episode;
                rec.next_episode += 1;
            }
            log::debug!("episode finished; restarting with seed {}", self.seed);
        }
        Ok(snapshot)
    }
}

fn snapshot_of(r: &StepRecord) -> Snapshot {
    Snapshot { t: r.t, world: r.world, observation: r.observation, verdict: r.arbitration.verdict }
}

/// Next deadline on a fixed grid; skips ahead instead of bursting when the
/// loop has fallen more than a period behind.
fn advance_deadline(deadline: Instant, period: Duration, now: Instant) -> Instant {
    let next = deadline + period;
    if next + period < now {
        now + period
    } else {
        next
    }
}
