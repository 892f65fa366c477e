//! Property suites runnable from the CLI (`selftest`): independent oracles
//! re-checking the core numerics and protocol machinery, each reporting a
//! named pass/fail with timing. Everything is seeded, so a selftest run is
//! reproducible.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use iovtwin_core::events::{Event, FeedbackCommand, TimeInterval};
use iovtwin_core::learner::{
    actor_gradients, actor_normalized, critic_gradients, critic_input, Action, DdpgNets, Mlp,
    State, Transition,
};
use iovtwin_core::pipeline::{BrokerState, PipelineConfig};
use iovtwin_core::sim::SimConfig;
use iovtwin_core::wire::{
    ClientInput, ClientSession, DecodeOutcome, FrameCodec, Message, ServerInput, ServerSession,
};

/// Verdict of one suite.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    fn timed(name: &'static str, started: Instant, outcome: Result<String, String>) -> Self {
        let seconds = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => Self { name, passed: true, detail, seconds },
            Err(detail) => Self { name, passed: false, detail, seconds },
        }
    }
}

/// Runs every suite.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        density_recount(),
        gradient_finite_differences(),
        frame_roundtrip_fuzz(),
        decode_robustness(),
        session_enumeration(),
        fault_awake_enumeration(),
        tcp_transport_equivalence(),
    ]
}

// ---------------------------------------------------------------------------
// Random payload generators (shared by fuzz + density suites)
// ---------------------------------------------------------------------------

fn random_interval(rng: &mut impl Rng) -> TimeInterval {
    let start: f64 = rng.random_range(0.0..1.0e4);
    TimeInterval::new(start, start + rng.random_range(0.0..60.0))
}

fn random_event(rng: &mut impl Rng) -> Event {
    let entity_id = format!("ent-{:06}", rng.random_range(0u32..1_000_000));
    let x = rng.random_range(-1.0e4..1.0e4);
    let y = rng.random_range(-1.0e4..1.0e4);
    match rng.random_range(0..3) {
        0 => Event::Vehicle {
            entity_id,
            x,
            y,
            speed_mps: rng.random_range(0.0..60.0),
            interval: random_interval(rng),
        },
        1 => Event::Sensor {
            entity_id,
            x,
            y,
            lane: format!("lane-{}", rng.random_range(0u32..500)),
            interval: random_interval(rng),
        },
        _ => Event::TrafficLight {
            entity_id,
            x,
            y,
            lane: format!("lane-{}", rng.random_range(0u32..500)),
            duration_rate: rng.random_range(0.0..1.0),
            interval: random_interval(rng),
        },
    }
}

fn random_command(rng: &mut impl Rng) -> FeedbackCommand {
    match rng.random_range(0..3) {
        0 => FeedbackCommand::SetSpeedLimit {
            lane: format!("lane-{}", rng.random_range(0u32..500)),
            limit_mps: rng.random_range(5.0..13.89),
        },
        1 => FeedbackCommand::SetSignalTiming {
            light: format!("lig-{:03}", rng.random_range(0u32..500)),
            green_s: rng.random_range(5.0..120.0),
            red_s: rng.random_range(5.0..120.0),
        },
        _ => FeedbackCommand::SetSensorSampling {
            sensor: format!("sen-{:03}", rng.random_range(0u32..500)),
            period_s: rng.random_range(1.0..30.0),
        },
    }
}

fn random_message(rng: &mut impl Rng) -> Message {
    match rng.random_range(0..8) {
        0 => Message::Syn,
        1 => Message::SynAck,
        2 => Message::Ack,
        3 => Message::Notf,
        4 => Message::StreamData(random_event(rng)),
        5 => Message::Awake,
        6 => Message::Feedback(random_command(rng)),
        _ => Message::Fin,
    }
}

// ---------------------------------------------------------------------------
// Suite 1: density recount
// ---------------------------------------------------------------------------

/// Replays 1000 seeded random broker histories and recounts every window
/// by hand: the reported density must equal `min(accepted/capacity, 1)`
/// exactly, with acceptance tracked through the enqueue return values.
pub fn density_recount() -> CheckResult {
    let started = Instant::now();
    let mut windows_checked = 0u64;
    let outcome = (|| {
        for stream in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(0xD15C0 + stream);
            let capacity = rng.random_range(1..=8usize);
            let config = PipelineConfig {
                queue_capacity: capacity,
                recovery_period_s: rng.random_range(0.5..5.0),
                ..PipelineConfig::default()
            };
            let mut broker = BrokerState::new(&config);
            let mut accepted = [0u64; 3];
            let mut now = 0.0f64;
            for _ in 0..rng.random_range(10..120) {
                now += rng.random_range(0.01..2.0);
                match rng.random_range(0..10) {
                    0 => broker.on_fault(now),
                    1 => {
                        broker.tick_recovery(now);
                    }
                    2 => {
                        let report = broker.close_window(now);
                        for (i, &n) in accepted.iter().enumerate() {
                            let expected = (n as f64 / capacity as f64).clamp(0.0, 1.0);
                            if report.rho[i] != expected {
                                return Err(format!(
                                    "stream {stream}: type {i} reported {} , recount {expected}",
                                    report.rho[i]
                                ));
                            }
                        }
                        windows_checked += 1;
                        accepted = [0; 3];
                    }
                    _ => {
                        let event = random_event(&mut rng);
                        let ty = event.event_type().index();
                        if broker.enqueue(event, now) {
                            accepted[ty] += 1;
                        }
                    }
                }
            }
            // Always check the final window too.
            let report = broker.close_window(now + 1.0);
            for (i, &n) in accepted.iter().enumerate() {
                let expected = (n as f64 / capacity as f64).clamp(0.0, 1.0);
                if report.rho[i] != expected {
                    return Err(format!(
                        "stream {stream}: final window type {i}: {} vs {expected}",
                        report.rho[i]
                    ));
                }
            }
            windows_checked += 1;
        }
        Ok(format!("1000 streams, {windows_checked} windows recounted, exact equality"))
    })();
    CheckResult::timed("density-recount", started, outcome)
}

// ---------------------------------------------------------------------------
// Suite 2: finite-difference gradients
// ---------------------------------------------------------------------------

fn random_state(rng: &mut impl Rng) -> State {
    State(std::array::from_fn(|_| rng.random_range(0.0..1.0)))
}

fn random_transition(rng: &mut impl Rng) -> Transition {
    Transition {
        s: random_state(rng),
        a: Action::from_normalized(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
        r: rng.random_range(-1.0..1.0),
        s_next: random_state(rng),
        done: rng.random_bool(0.2),
    }
}

/// 50 critic + 50 actor randomized configurations; every parameter's
/// analytic gradient is compared against a central finite difference at
/// 1e-4 relative tolerance.
pub fn gradient_finite_differences() -> CheckResult {
    let started = Instant::now();
    let h = 1e-5;
    let tol = 1e-4;
    let gamma = 0.8;
    let mut max_rel = 0.0f64;
    let mut params_checked = 0u64;
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9AD5);
        for check in 0..50 {
            let nets = DdpgNets::with_hidden(6, &mut rng);
            let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng)).collect();

            // Critic: d(loss)/d(critic params).
            let (_, grads) = critic_gradients(&batch, &nets, gamma)
                .map_err(|e| format!("critic check {check}: {e}"))?;
            let analytic: Vec<f64> = grads.params().copied().collect();
            let loss_at = |critic: &Mlp| -> f64 {
                let probe = DdpgNets { critic: critic.clone(), ..nets.clone() };
                critic_gradients(&batch, &probe, gamma).expect("validated shapes").0
            };
            for (k, &a) in analytic.iter().enumerate() {
                let mut plus = nets.critic.clone();
                *plus.params_mut().nth(k).expect("k indexes params") += h;
                let mut minus = nets.critic.clone();
                *minus.params_mut().nth(k).expect("k indexes params") -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                max_rel = max_rel.max(rel);
                params_checked += 1;
                if rel > tol {
                    return Err(format!(
                        "critic check {check} param {k}: analytic {a} vs fd {fd} (rel {rel:.2e})"
                    ));
                }
            }

            // Actor: d(mean Q)/d(actor params).
            let nets = DdpgNets::with_hidden(6, &mut rng);
            let batch: Vec<Transition> = (0..4).map(|_| random_transition(&mut rng)).collect();
            let grads = actor_gradients(&batch, &nets)
                .map_err(|e| format!("actor check {check}: {e}"))?;
            let analytic: Vec<f64> = grads.params().copied().collect();
            let objective = |actor: &Mlp| -> f64 {
                batch
                    .iter()
                    .map(|t| {
                        let a = actor_normalized(actor, &t.s);
                        nets.critic
                            .forward(&critic_input(&t.s, a))
                            .expect("validated shapes")[0]
                    })
                    .sum::<f64>()
                    / batch.len() as f64
            };
            for (k, &a) in analytic.iter().enumerate() {
                let mut plus = nets.actor.clone();
                *plus.params_mut().nth(k).expect("k indexes params") += h;
                let mut minus = nets.actor.clone();
                *minus.params_mut().nth(k).expect("k indexes params") -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                max_rel = max_rel.max(rel);
                params_checked += 1;
                if rel > tol {
                    return Err(format!(
                        "actor check {check} param {k}: analytic {a} vs fd {fd} (rel {rel:.2e})"
                    ));
                }
            }
        }
        Ok(format!(
            "100 randomized checks ({params_checked} parameters), max relative error {max_rel:.2e}"
        ))
    })();
    CheckResult::timed("gradient-fd", started, outcome)
}

// ---------------------------------------------------------------------------
// Suite 3: frame roundtrip fuzz
// ---------------------------------------------------------------------------

/// 10^5 random messages encode → decode back to themselves, byte-exactly
/// on the message level, consuming exactly the encoded length.
pub fn frame_roundtrip_fuzz() -> CheckResult {
    let started = Instant::now();
    const FRAMES: usize = 100_000;
    let outcome = (|| {
        let codec = FrameCodec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0xF4A3E5);
        for i in 0..FRAMES {
            let msg = random_message(&mut rng);
            let bytes = codec.encode(&msg).map_err(|e| format!("frame {i}: encode: {e}"))?;
            match codec.decode(&bytes).map_err(|e| format!("frame {i}: decode: {e}"))? {
                DecodeOutcome::Frame { message, consumed } => {
                    if message != msg {
                        return Err(format!("frame {i}: roundtrip mismatch: {msg:?} → {message:?}"));
                    }
                    if consumed != bytes.len() {
                        return Err(format!(
                            "frame {i}: consumed {consumed} of {} bytes",
                            bytes.len()
                        ));
                    }
                }
                DecodeOutcome::NeedMoreData => {
                    return Err(format!("frame {i}: complete frame reported incomplete"));
                }
            }
        }
        Ok(format!("{FRAMES} frames roundtripped, zero failures"))
    })();
    CheckResult::timed("frame-roundtrip-fuzz", started, outcome)
}

// ---------------------------------------------------------------------------
// Suite 4: decoder robustness
// ---------------------------------------------------------------------------

/// Arbitrary byte soup never panics the decoder: every buffer yields
/// Ok(Frame), Ok(NeedMoreData), or a structured error.
pub fn decode_robustness() -> CheckResult {
    let started = Instant::now();
    const BUFFERS: usize = 20_000;
    let outcome = (|| {
        let codec = FrameCodec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
        let mut outcomes = [0u64; 3];
        for _ in 0..BUFFERS {
            let len = rng.random_range(0..64usize);
            let mut buf: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            // Half the time, make the length prefix plausible so the parser
            // gets past the header into tag/payload validation.
            if rng.random_bool(0.5) && buf.len() >= 4 {
                let inner = rng.random_range(0..48u32);
                buf[..4].copy_from_slice(&inner.to_be_bytes());
            }
            match codec.decode(&buf) {
                Ok(DecodeOutcome::Frame { .. }) => outcomes[0] += 1,
                Ok(DecodeOutcome::NeedMoreData) => outcomes[1] += 1,
                Err(_) => outcomes[2] += 1,
            }
        }
        Ok(format!(
            "{BUFFERS} arbitrary buffers: {} frames, {} partial, {} structured errors, no panics",
            outcomes[0], outcomes[1], outcomes[2]
        ))
    })();
    CheckResult::timed("decode-robustness", started, outcome)
}

// ---------------------------------------------------------------------------
// Suite 5: session enumeration
// ---------------------------------------------------------------------------

fn probe_event() -> Event {
    Event::Vehicle {
        entity_id: "veh-probe".into(),
        x: 1.0,
        y: 2.0,
        speed_mps: 3.0,
        interval: TimeInterval::new(0.0, 1.0),
    }
}

fn probe_command() -> FeedbackCommand {
    FeedbackCommand::SetSpeedLimit { lane: "lane-probe".into(), limit_mps: 10.0 }
}

fn server_inputs() -> Vec<ServerInput> {
    vec![
        ServerInput::Received(Message::Syn),
        ServerInput::Received(Message::Ack),
        ServerInput::Received(Message::Notf),
        ServerInput::Received(Message::Feedback(probe_command())),
        ServerInput::Received(Message::Fin),
        ServerInput::EventReady(probe_event()),
        ServerInput::StreamFlagSet,
        ServerInput::StreamFlagReset,
        ServerInput::Close,
    ]
}

fn client_inputs() -> Vec<ClientInput> {
    vec![
        ClientInput::Start,
        ClientInput::Received(Message::SynAck),
        ClientInput::Received(Message::StreamData(probe_event())),
        ClientInput::Received(Message::Awake),
        ClientInput::Received(Message::Fin),
        ClientInput::Tick,
        ClientInput::SendFeedback(probe_command()),
        ClientInput::Close,
    ]
}

/// Walks every behavior reachable by input sequences of length ≤ 8 on both
/// session machines. Distinct session states are finitely many, so a
/// visited set over (state, notf-seen-on-path) covers all sequences while
/// checking each step's outputs. Asserts the stream-gating property: a
/// server never emits StreamData before it accepted a Notf.
pub fn session_enumeration() -> CheckResult {
    let started = Instant::now();
    let outcome = (|| {
        // Server machine.
        let mut edges = 0u64;
        let mut stack = vec![(ServerSession::new(), false, 0u8)];
        let mut visited: Vec<(ServerSession, bool)> = Vec::new();
        while let Some((state, notf_before, depth)) = stack.pop() {
            if visited.iter().any(|(s, n)| *s == state && *n == notf_before) {
                continue;
            }
            visited.push((state.clone(), notf_before));
            if depth >= 8 {
                continue;
            }
            for input in server_inputs() {
                let is_notf = matches!(input, ServerInput::Received(Message::Notf));
                let mut next = state.clone();
                edges += 1;
                match next.step(input) {
                    Ok(step) => {
                        let emitted_stream =
                            step.outputs.iter().any(|m| matches!(m, Message::StreamData(_)));
                        if emitted_stream && !notf_before {
                            return Err(format!(
                                "server emitted StreamData before any accepted Notf \
                                 (phase {:?}, depth {depth})",
                                state.phase()
                            ));
                        }
                        let notf_now = notf_before || is_notf;
                        stack.push((next, notf_now, depth + 1));
                    }
                    Err(_) => {
                        // Rejected inputs leave the state unchanged; the
                        // subtree is the one we are already exploring.
                    }
                }
            }
        }
        let server_states = visited.len();
        let server_edges = edges;

        // Client machine: deliveries may only come from StreamData frames.
        let mut edges = 0u64;
        let mut stack = vec![(ClientSession::new(), 0u8)];
        let mut visited: Vec<ClientSession> = Vec::new();
        while let Some((state, depth)) = stack.pop() {
            if visited.iter().any(|s| *s == state) {
                continue;
            }
            visited.push(state.clone());
            if depth >= 8 {
                continue;
            }
            for input in client_inputs() {
                let is_stream_data =
                    matches!(input, ClientInput::Received(Message::StreamData(_)));
                let mut next = state.clone();
                edges += 1;
                match next.step(input) {
                    Ok(step) => {
                        if step.delivered.is_some() && !is_stream_data {
                            return Err(format!(
                                "client delivered an event from a non-StreamData input \
                                 (phase {:?}, depth {depth})",
                                state.phase()
                            ));
                        }
                        stack.push((next, depth + 1));
                    }
                    Err(_) => {}
                }
            }
        }
        Ok(format!(
            "server: {server_states} states / {server_edges} edges; client: {} states / {} \
             edges; stream gating holds",
            visited.len(),
            edges
        ))
    })();
    CheckResult::timed("session-enumeration", started, outcome)
}

// ---------------------------------------------------------------------------
// Suite 6: fault/recovery Awake enumeration
// ---------------------------------------------------------------------------

/// Exhausts every length-8 sequence over {fault, short tick, long tick}
/// against the broker and a four-line shadow model of the recovery timer:
/// an Awake fires exactly at the first tick at-or-past the deadline and
/// never again until the next fault.
pub fn fault_awake_enumeration() -> CheckResult {
    let started = Instant::now();
    let outcome = (|| {
        let period = 5.0;
        let config = PipelineConfig { recovery_period_s: period, ..PipelineConfig::default() };
        let mut sequences = 0u64;
        let mut awakes_seen = 0u64;
        // 3^8 sequences, digits: 0 = fault, 1 = tick after period/2,
        // 2 = tick after the full period.
        for code in 0..3u32.pow(8) {
            sequences += 1;
            let mut broker = BrokerState::new(&config);
            let mut now = 0.0f64;
            let mut deadline: Option<f64> = None;
            let mut digits = code;
            for step in 0..8 {
                let op = digits % 3;
                digits /= 3;
                match op {
                    0 => {
                        broker.on_fault(now);
                        deadline = Some(now + period);
                    }
                    tick => {
                        now += if tick == 1 { period / 2.0 } else { period };
                        let awake = broker.tick_recovery(now);
                        let expected = deadline.is_some_and(|d| now >= d);
                        match (&awake, expected) {
                            (Some(Message::Awake), true) => {
                                deadline = None;
                                awakes_seen += 1;
                            }
                            (None, false) => {}
                            (got, _) => {
                                return Err(format!(
                                    "sequence {code} step {step}: got {got:?}, expected awake = \
                                     {expected}"
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(format!(
            "{sequences} sequences, {awakes_seen} awakes, each exactly once per fault/recovery"
        ))
    })();
    CheckResult::timed("fault-awake-enumeration", started, outcome)
}

// ---------------------------------------------------------------------------
// Suite 7: TCP transport equivalence
// ---------------------------------------------------------------------------

/// Streams a short scenario over a real localhost socket and checks the
/// client decoded exactly the events the world emitted.
pub fn tcp_transport_equivalence() -> CheckResult {
    let started = Instant::now();
    let outcome = (|| {
        let cfg = SimConfig { sensors: 3, ..SimConfig::default() };
        let ticks = 120;
        let smoke =
            crate::tcp::stream_over_tcp(&cfg, ticks).map_err(|e| format!("stream: {e}"))?;
        let reference =
            crate::tcp::reference_events(&cfg, ticks).map_err(|e| format!("reference: {e}"))?;
        if smoke.events != reference {
            return Err(format!(
                "delivered {} events, world emitted {}; streams differ",
                smoke.events.len(),
                reference.len()
            ));
        }
        Ok(format!(
            "{} events over TCP identical to direct emission ({} frames)",
            reference.len(),
            smoke.frames
        ))
    })();
    CheckResult::timed("tcp-transport", started, outcome)
}
