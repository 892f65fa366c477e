//! Lockstep experiment driver.
//!
//! One `Driver` owns the full stack of a single run: the simulated world
//! fronted by a [`ServerSession`], and the service layer — a
//! [`ClientSession`], the publisher relay, the broker, and the twin
//! repository. The two sides talk exclusively through encoded wire frames
//! in in-memory byte buffers, so every frame crosses the real codec, and
//! the whole run is a deterministic function of the config.
//!
//! Per simulated tick:
//!   1. the server drains client frames (feedback lands in the world),
//!   2. fault injection and recovery polling run,
//!   3. the world advances one step and emits its due events,
//!   4. streaming events are framed toward the client,
//!   5. a window close (dt-native) or poll (traditional) commits queued
//!      events into twins and may push one feedback command back,
//!   6. the client ingests this tick's frames into the queues.
//!
//! Commits therefore cover events received *before* the boundary, and a
//! feedback command issued at a boundary reaches the physical world at the
//! next tick — a one-tick actuation delay, identical in every run.
//!
//! Timing model: simulation timestamps measure the service behavior (they
//! are what the acceptance bands check and what determinism compares);
//! wall-clock milliseconds are recorded alongside for reference. Bursts
//! pay for serialization: the k-th event ingested or committed at one
//! instant lands k/service_rate later than the first.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use iovtwin_core::events::{EventType, FeedbackCommand, TimeInterval};
use iovtwin_core::pipeline::{BrokerState, FlowDecision, PublisherState};
use iovtwin_core::sim::{build_network, FlowTargets, World};
use iovtwin_core::twin::{
    TwinFilter, TwinInstance, TwinRepository, TwinState, DEFAULT_HISTORY_BOUND,
};
use iovtwin_core::wire::{
    ClientInput, ClientSession, DecodeOutcome, FrameCodec, Message, ServerInput, ServerSession,
};

use crate::config::{ExperimentConfig, Mode};
use crate::metrics::{DropCounts, EventRecord, MetricsReport};
use crate::ExperimentError;

/// Wall-clock stall budget: if no event commits for this long, the run is
/// declared wedged and aborted.
const WATCHDOG_SECS: u64 = 10;

/// Artifacts of one completed run.
#[derive(Debug)]
pub struct RunOutput {
    pub metrics: MetricsReport,
    /// Directory holding one XML file per twin.
    pub twin_dir: PathBuf,
    /// Per-event metrics CSV path.
    pub csv_path: PathBuf,
}

/// Client-side record of commanded magnitudes. Twins drive *which*
/// entities feedback targets; this view tracks the absolute values the
/// service itself has commanded (initialized from the scenario defaults),
/// since twin attributes carry rates and periods but not lane limits.
#[derive(Debug, Clone)]
struct CommandView {
    default_limit: f64,
    default_green: f64,
    default_red: f64,
    lane_limits: BTreeMap<String, f64>,
    lights: BTreeMap<String, (f64, f64)>,
    sensor_periods: BTreeMap<String, f64>,
    default_period: f64,
}

impl CommandView {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            default_limit: cfg.sim.speed_limit,
            default_green: cfg.sim.green_duration,
            default_red: cfg.sim.red_duration,
            default_period: cfg.sim.sensor_period,
            lane_limits: BTreeMap::new(),
            lights: BTreeMap::new(),
            sensor_periods: BTreeMap::new(),
        }
    }

    fn apply(&mut self, cmd: &FeedbackCommand) {
        match cmd {
            FeedbackCommand::SetSpeedLimit { lane, limit_mps } => {
                self.lane_limits.insert(lane.clone(), *limit_mps);
            }
            FeedbackCommand::SetSignalTiming { light, green_s, red_s } => {
                self.lights.insert(light.clone(), (*green_s, *red_s));
            }
            FeedbackCommand::SetSensorSampling { sensor, period_s } => {
                self.sensor_periods.insert(sensor.clone(), *period_s);
            }
        }
    }

    fn lane_limit(&self, lane: &str) -> f64 {
        self.lane_limits.get(lane).copied().unwrap_or(self.default_limit)
    }

    fn light(&self, id: &str) -> (f64, f64) {
        self.lights.get(id).copied().unwrap_or((self.default_green, self.default_red))
    }

    fn sensor_period(&self, id: &str) -> f64 {
        self.sensor_periods.get(id).copied().unwrap_or(self.default_period)
    }
}

pub struct Driver {
    cfg: ExperimentConfig,
    world: World,
    server: ServerSession,
    client: ClientSession,
    codec: FrameCodec,
    publisher: PublisherState,
    broker: BrokerState,
    repo: TwinRepository,
    view: CommandView,
    /// Client → server frames, as raw bytes.
    to_server: Vec<u8>,
    /// Server → client frames, as raw bytes.
    to_client: Vec<u8>,
    records: Vec<EventRecord>,
    /// (entity_id, emit_ts bits) → record index, for commit back-fill.
    open_records: BTreeMap<(String, u64), usize>,
    drops: DropCounts,
    feedback_count: u64,
    recoveries: u64,
    frames_sent: u64,
    bytes_sent: u64,
    fault_armed: bool,
    /// Flag reset scheduled for the tick after the fault: the stop-control
    /// needs one hop to reach the upstream server, so the fault tick's
    /// events are already in flight and get rejected at the broker.
    suspend_pending: bool,
    next_boundary: f64,
    started: Instant,
    last_commit: Instant,
}

impl Driver {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        cfg.validate()?;
        let world = build_network(&cfg.sim)
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        let twin_dir =
            PathBuf::from(&cfg.out_dir).join("twins").join(cfg.run_id());
        let boundary = match cfg.mode {
            Mode::DtNative => cfg.window_s,
            Mode::Traditional => cfg.poll_interval_s,
        };
        // The experiment-level fields are authoritative over the embedded
        // pipeline block, so CLI flags like --thresholds act on the broker.
        let mut pipeline = cfg.pipeline.clone();
        pipeline.thresholds = cfg.thresholds.clone();
        pipeline.window_s = cfg.window_s;
        pipeline.recovery_period_s = cfg.recovery_period_s;
        let now = Instant::now();
        Ok(Self {
            world,
            server: ServerSession::new(),
            client: ClientSession::new(),
            codec: FrameCodec::default(),
            publisher: PublisherState::new(),
            broker: BrokerState::new(&pipeline),
            repo: TwinRepository::new(twin_dir, DEFAULT_HISTORY_BOUND),
            view: CommandView::new(cfg),
            cfg: cfg.clone(),
            to_server: Vec::new(),
            to_client: Vec::new(),
            records: Vec::new(),
            open_records: BTreeMap::new(),
            drops: DropCounts::default(),
            feedback_count: 0,
            recoveries: 0,
            frames_sent: 0,
            bytes_sent: 0,
            fault_armed: true,
            suspend_pending: false,
            next_boundary: boundary,
            started: now,
            last_commit: now,
        })
    }

    fn wall_ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1000.0
    }

    /// Encodes client-side outputs onto the client → server buffer.
    fn send_to_server(&mut self, msgs: Vec<Message>) -> Result<(), ExperimentError> {
        for m in msgs {
            let bytes = self.codec.encode(&m)?;
            self.to_server.extend_from_slice(&bytes);
        }
        Ok(())
    }

    /// Encodes server-side outputs onto the server → client buffer.
    fn send_to_client(&mut self, msgs: Vec<Message>) -> Result<(), ExperimentError> {
        for m in msgs {
            let bytes = self.codec.encode(&m)?;
            self.frames_sent += 1;
            self.bytes_sent += bytes.len() as u64;
            self.to_client.extend_from_slice(&bytes);
        }
        Ok(())
    }

    /// Server consumes everything the client has sent; feedback commands
    /// land in the world.
    fn server_drain(&mut self) -> Result<(), ExperimentError> {
        let mut cursor = 0;
        let mut outputs = Vec::new();
        while let DecodeOutcome::Frame { message, consumed } =
            self.codec.decode(&self.to_server[cursor..])?
        {
            cursor += consumed;
            let step = self.server.step(ServerInput::Received(message))?;
            outputs.extend(step.outputs);
            if let Some(cmd) = step.delivered {
                self.world
                    .apply_command(&cmd)
                    .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
            }
        }
        self.to_server.drain(..cursor);
        self.send_to_client(outputs)
    }

    /// Client consumes everything the server has sent. Stream data flows
    /// publisher → broker and is stamped with its ingest receipt time.
    fn client_drain(&mut self, now: f64) -> Result<(), ExperimentError> {
        let mut cursor = 0;
        let mut burst = 0u64;
        let wall = self.wall_ms();
        while let DecodeOutcome::Frame { message, consumed } =
            self.codec.decode(&self.to_client[cursor..])?
        {
            cursor += consumed;
            let step = self.client.step(ClientInput::Received(message))?;
            self.send_to_server(step.outputs)?;
            if let Some(event) = step.delivered {
                burst += 1;
                let receipt_ts = now + burst as f64 / self.cfg.service_rate;
                let Some(event) = self.publisher.relay(event) else {
                    self.drops.publisher += 1;
                    continue;
                };
                let record = EventRecord {
                    event_type: event.event_type(),
                    entity_id: event.entity_id().to_string(),
                    emit_ts: event.timestamp(),
                    receipt_ts,
                    commit_ts: None,
                    feedback_ts: None,
                    emit_wall_ms: wall,
                    receipt_wall_ms: wall,
                    commit_wall_ms: None,
                };
                let key = (record.entity_id.clone(), record.emit_ts.to_bits());
                self.open_records.insert(key, self.records.len());
                self.records.push(record);
                if !self.broker.enqueue(event, receipt_ts) {
                    self.drops.rejected_during_recovery += 1;
                }
            }
        }
        self.to_client.drain(..cursor);
        Ok(())
    }

    /// Syn → SynAck → Ack + Notf, all over the byte buffers.
    fn handshake(&mut self) -> Result<(), ExperimentError> {
        let step = self.client.step(ClientInput::Start)?;
        self.send_to_server(step.outputs)?;
        self.server_drain()?;
        self.client_drain(0.0)?;
        self.server_drain()?;
        if !self.server.is_streaming() {
            return Err(ExperimentError::Protocol(
                "handshake did not leave the server streaming".into(),
            ));
        }
        self.publisher.set_stream();
        Ok(())
    }

    /// Picks feedback targets from the twin store: the most recently busy
    /// sensor names the lane, a light on that lane (or the first known
    /// light) carries the signal command, and the sampling command goes to
    /// the sensor still reporting fastest (so relief spreads across the
    /// fleet instead of re-commanding an already-throttled sensor — the
    /// period clamp makes repeats no-ops). Returns `None` until both a
    /// sensor twin and a light twin exist — without them the service has
    /// nothing safe to command.
    fn targets_from_twins(&self, boundary: f64) -> Option<FlowTargets> {
        let lookback = boundary - 2.0 * self.cfg.window_s;
        let sensors = self.repo.query(&TwinFilter {
            entity_type: Some(EventType::E2),
            entity_id: None,
            time_range: None,
        });
        let recent = |t: &TwinInstance| {
            t.history.iter().filter(|e| e.ts > lookback && e.ts <= boundary).count()
        };
        let busiest = sensors
            .iter()
            .max_by(|a, b| {
                recent(a).cmp(&recent(b)).then(b.entity_id.cmp(&a.entity_id))
            })?;
        let TwinState::Sensor { lane, .. } = &busiest.attributes().state else {
            return None;
        };
        // Sampling relief targets the fastest-reporting sensor per the
        // reactor's own command ledger (the view), falling back to recent
        // traffic and then id so the choice is total. The view beats the
        // twin here: a twin only echoes a new period after the sensor's
        // next report, and that lag would re-select a sensor whose fix is
        // already in flight.
        let flooding = sensors
            .iter()
            .min_by(|a, b| {
                self.view
                    .sensor_period(&a.entity_id)
                    .total_cmp(&self.view.sensor_period(&b.entity_id))
                    .then(recent(b).cmp(&recent(a)))
                    .then(a.entity_id.cmp(&b.entity_id))
            })?;
        let lights = self.repo.query(&TwinFilter {
            entity_type: Some(EventType::E3),
            entity_id: None,
            time_range: None,
        });
        let light = lights
            .iter()
            .find(|t| {
                matches!(&t.attributes().state, TwinState::TrafficLight { lane: l, .. } if l == lane)
            })
            .or_else(|| lights.first())?;
        let (green_s, red_s) = self.view.light(&light.entity_id);
        Some(FlowTargets {
            lane: lane.clone(),
            lane_limit: self.view.lane_limit(lane),
            light: light.entity_id.clone(),
            green_s,
            red_s,
            sensor: flooding.entity_id.clone(),
            sensor_period: self.view.sensor_period(&flooding.entity_id),
        })
    }

    /// Commits every queued event into the twin store. `delay` is the
    /// decision-completion delay owed by this boundary's drain.
    fn commit_drained(&mut self, boundary: f64, delay: f64, feedback_ts: Option<f64>) {
        let wall = self.wall_ms();
        for (j, event) in self.broker.drain().into_iter().enumerate() {
            let commit_ts = boundary + delay + (j + 1) as f64 / self.cfg.service_rate;
            if self.repo.upsert(&event).is_err() {
                self.drops.stale += 1;
                continue;
            }
            let key = (event.entity_id().to_string(), event.timestamp().to_bits());
            if let Some(idx) = self.open_records.remove(&key) {
                let r = &mut self.records[idx];
                r.commit_ts = Some(commit_ts);
                r.feedback_ts = feedback_ts;
                r.commit_wall_ms = Some(wall);
            }
            self.last_commit = Instant::now();
        }
    }

    /// Window close (dt-native): report densities, decide the flow, commit
    /// the window's events (waiting out the decision if one was taken),
    /// and push at most one feedback command toward the physical side.
    fn close_dt_window(&mut self, boundary: f64) -> Result<(), ExperimentError> {
        let report = self.broker.close_window(boundary);
        let decision = match self.targets_from_twins(boundary) {
            Some(targets) => self.broker.decide_flow(&report, &targets),
            None => FlowDecision::Forward,
        };
        match decision {
            FlowDecision::Forward => self.commit_drained(boundary, 0.0, None),
            FlowDecision::Feedback(cmd) => {
                let delay = self.cfg.decision_delay_s;
                self.commit_drained(boundary, delay, Some(boundary + delay));
                self.view.apply(&cmd);
                self.feedback_count += 1;
                let step = self.client.step(ClientInput::SendFeedback(cmd))?;
                self.send_to_server(step.outputs)?;
            }
        }
        Ok(())
    }

    /// Manual trigger (traditional): drain everything accumulated since
    /// the last poll straight into twins. No densities, no feedback.
    fn poll_traditional(&mut self, boundary: f64) {
        self.commit_drained(boundary, 0.0, None);
    }

    /// Runs the configured duration and writes the run's artifacts.
    pub fn run(&mut self) -> Result<RunOutput, ExperimentError> {
        self.handshake()?;
        let dt = self.cfg.sim.dt;
        let ticks = (self.cfg.duration_s / dt).round() as u64;
        for _ in 0..ticks {
            // Feedback issued at the previous boundary reaches the world
            // before this step: one tick of actuation delay.
            self.server_drain()?;
            self.inject_fault_if_due();
            self.tick_recovery()?;
            self.world.step();
            let now = self.world.time();
            let events = self.world.emit_events(TimeInterval::new(now - dt, now));
            let mut outputs = Vec::new();
            for event in events {
                let step = self.server.step(ServerInput::EventReady(event))?;
                if step.outputs.is_empty() {
                    self.drops.server_not_streaming += 1;
                } else {
                    outputs.extend(step.outputs);
                }
            }
            self.send_to_client(outputs)?;
            if now + 1e-9 >= self.next_boundary {
                let boundary = self.next_boundary;
                match self.cfg.mode {
                    Mode::DtNative => {
                        self.close_dt_window(boundary)?;
                        self.next_boundary += self.cfg.window_s;
                    }
                    Mode::Traditional => {
                        self.poll_traditional(boundary);
                        self.next_boundary += self.cfg.poll_interval_s;
                    }
                }
            }
            self.client_drain(now)?;
            if self.last_commit.elapsed().as_secs() >= WATCHDOG_SECS {
                return Err(ExperimentError::Watchdog {
                    secs: WATCHDOG_SECS,
                    sim_time: now,
                });
            }
        }
        // Orderly teardown: Fin both ways.
        let step = self.client.step(ClientInput::Close)?;
        self.send_to_server(step.outputs)?;
        self.server_drain()?;

        self.repo.flush().map_err(|e| ExperimentError::Io {
            path: self.repo.root_dir().display().to_string(),
            source: e,
        })?;
        self.drops.queue_overflow = self.broker.overflow_dropped();
        let metrics = MetricsReport {
            sensors: self.cfg.sensors,
            mode: self.cfg.mode,
            seed: self.cfg.seed,
            duration_s: self.cfg.duration_s,
            records: std::mem::take(&mut self.records),
            drops: self.drops,
            feedback_count: self.feedback_count,
            recoveries: self.recoveries,
            frames_sent: self.frames_sent,
            bytes_sent: self.bytes_sent,
        };
        let csv_path = PathBuf::from(&self.cfg.out_dir).join(format!("{}.csv", self.cfg.run_id()));
        crate::metrics::write_report(&metrics, &csv_path)?;
        Ok(RunOutput { metrics, twin_dir: self.repo.root_dir().to_path_buf(), csv_path })
    }

    /// Broker fault drill. The broker enters recovery immediately and
    /// starts rejecting arrivals; the STREAM-flag reset reaches the
    /// publisher and the upstream server one tick later (the stop-control
    /// has to cross the link), so the fault tick's in-flight events are
    /// turned away at the broker's door rather than silently vanishing.
    fn inject_fault_if_due(&mut self) {
        if self.suspend_pending {
            self.suspend_pending = false;
            self.publisher.reset_stream();
            self.server
                .step(ServerInput::StreamFlagReset)
                .expect("streaming server accepts suspension");
        }
        let Some(at) = self.cfg.fault_at_s else { return };
        if !self.fault_armed || self.world.time() < at {
            return;
        }
        self.fault_armed = false;
        self.broker.on_fault(self.world.time());
        self.suspend_pending = true;
    }

    /// Exactly-once recovery: when the broker's recovery period elapses it
    /// yields one `Awake`; the publisher resumes and the client re-requests
    /// the stream with a fresh `Notf`.
    fn tick_recovery(&mut self) -> Result<(), ExperimentError> {
        if let Some(awake) = self.broker.tick_recovery(self.world.time()) {
            self.recoveries += 1;
            self.publisher.set_stream();
            let step = self.client.step(ClientInput::Received(awake))?;
            self.send_to_server(step.outputs)?;
            self.server_drain()?;
        }
        Ok(())
    }
}

/// Boots the full stack for `cfg`, streams for its duration, and writes
/// twin XML plus the per-event metrics CSV under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    Driver::new(cfg)?.run()
}
