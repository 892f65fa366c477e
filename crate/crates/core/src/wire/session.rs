//! Pure client/server session state machines.
//!
//! Both machines are deterministic transition functions: `step` consumes one
//! input and yields the messages to put on the wire plus anything delivered
//! to the layer above. Callers own all I/O and all clocks.
//!
//! The client is the digital-side endpoint (the event publisher's link): it
//! opens the session, requests streaming with `Notf`, consumes `StreamData`,
//! and pushes `Feedback` commands back down. The server fronts the physical
//! side: it answers the handshake, holds the STREAM flag, and emits
//! `StreamData` while the flag is set.
//!
//! Fault handling: when the broker behind the client faults, the host
//! suspends the server with [`ServerInput::StreamFlagReset`] (an out-of-band
//! control, since the wire vocabulary has no suspend message). When the
//! broker recovers it hands the client the `Awake` it produced, and the
//! client re-requests the stream with a fresh `Notf`, which the server
//! accepts from `Connected`.

use super::{Message, WireError};
use crate::events::{Event, FeedbackCommand};

/// Session lifecycle phase, shared by both roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Closed,
    SynSent,
    SynReceived,
    Connected,
    Streaming,
    Closing,
}

/// Inputs accepted by [`ClientSession::step`].
#[derive(Debug, Clone, PartialEq)]
pub enum ClientInput {
    /// Open the session (emit `Syn`).
    Start,
    /// A message arrived — from the wire, or (for `Awake`) from the broker.
    Received(Message),
    /// Time passed with nothing to do. No-op except while `Closing`.
    Tick,
    /// Push one feedback command down the wire.
    SendFeedback(FeedbackCommand),
    /// Tear the session down (emit `Fin`).
    Close,
}

/// Inputs accepted by [`ServerSession::step`].
#[derive(Debug, Clone, PartialEq)]
pub enum ServerInput {
    /// A message arrived from the wire.
    Received(Message),
    /// Host-side stream enable; legal only after a `Notf` was seen.
    StreamFlagSet,
    /// Host-side stream suspend.
    StreamFlagReset,
    /// The physical side produced an event. Dropped silently unless
    /// streaming — events are gated on the STREAM flag, never queued here.
    EventReady(Event),
    /// Tear the session down (emit `Fin`).
    Close,
}

/// Result of one client transition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientStep {
    /// Messages to transmit, in order.
    pub outputs: Vec<Message>,
    /// Event delivered upward (from a `StreamData` frame).
    pub delivered: Option<Event>,
}

/// Result of one server transition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ServerStep {
    /// Messages to transmit, in order.
    pub outputs: Vec<Message>,
    /// Feedback command delivered upward (to the physical system).
    pub delivered: Option<FeedbackCommand>,
}

fn violation(phase: Phase, input: impl Into<String>) -> WireError {
    WireError::ProtocolViolation { phase, input: input.into() }
}

/// Digital-side session endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientSession {
    phase: Phase,
    /// Set once a `Fin` has been sent or received; the session is then dead
    /// and never produces output again.
    terminated: bool,
}

impl Default for ClientSession {
    fn default() -> Self {
        Self::new()
    }
}

impl ClientSession {
    pub fn new() -> Self {
        Self { phase: Phase::Closed, terminated: false }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Applies one input. On `Err` the state is unchanged and the caller
    /// must close the session.
    pub fn step(&mut self, input: ClientInput) -> Result<ClientStep, WireError> {
        use ClientInput as I;
        use Message as M;

        // Fin is absorbing in every phase and produces nothing.
        if let I::Received(M::Fin) = input {
            self.phase = Phase::Closed;
            self.terminated = true;
            return Ok(ClientStep::default());
        }
        if let I::Tick = input {
            if self.phase == Phase::Closing {
                // Fin was flushed; finalize.
                self.phase = Phase::Closed;
            }
            return Ok(ClientStep::default());
        }
        if self.terminated {
            return Err(violation(self.phase, describe_client(&input)));
        }

        match (self.phase, input) {
            (Phase::Closed, I::Start) => {
                self.phase = Phase::SynSent;
                Ok(ClientStep { outputs: vec![M::Syn], delivered: None })
            }
            (Phase::SynSent, I::Received(M::SynAck)) => {
                // Ack completes the handshake; Notf immediately requests
                // streaming — there is no separate trigger between them.
                self.phase = Phase::Streaming;
                Ok(ClientStep { outputs: vec![M::Ack, M::Notf], delivered: None })
            }
            (Phase::Streaming, I::Received(M::StreamData(event))) => {
                Ok(ClientStep { outputs: vec![], delivered: Some(event) })
            }
            (Phase::Closing, I::Received(M::StreamData(event))) => {
                // Frames already in flight when we sent Fin still drain.
                Ok(ClientStep { outputs: vec![], delivered: Some(event) })
            }
            (Phase::Streaming, I::Received(M::Awake)) => {
                // Broker recovered; re-request the stream in-band.
                Ok(ClientStep { outputs: vec![M::Notf], delivered: None })
            }
            (Phase::Streaming, I::SendFeedback(cmd)) => {
                Ok(ClientStep { outputs: vec![M::Feedback(cmd)], delivered: None })
            }
            (Phase::SynSent | Phase::Streaming, I::Close) => {
                self.phase = Phase::Closing;
                self.terminated = true;
                Ok(ClientStep { outputs: vec![M::Fin], delivered: None })
            }
            (phase, input) => Err(violation(phase, describe_client(&input))),
        }
    }
}

/// Physical-side session endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerSession {
    phase: Phase,
    /// Whether a `Notf` has ever been received. `StreamFlagSet` may only
    /// re-enable a stream the client already asked for, so `StreamData` is
    /// never emitted before a `Notf`.
    notf_seen: bool,
    terminated: bool,
}

impl Default for ServerSession {
    fn default() -> Self {
        Self::new()
    }
}

impl ServerSession {
    pub fn new() -> Self {
        Self { phase: Phase::Closed, notf_seen: false, terminated: false }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// True while the STREAM flag is set, i.e. events flow.
    pub fn is_streaming(&self) -> bool {
        self.phase == Phase::Streaming
    }

    /// Applies one input. On `Err` the state is unchanged and the caller
    /// must close the session.
    pub fn step(&mut self, input: ServerInput) -> Result<ServerStep, WireError> {
        use Message as M;
        use ServerInput as I;

        if let I::Received(M::Fin) = input {
            self.phase = Phase::Closed;
            self.terminated = true;
            return Ok(ServerStep::default());
        }
        if let I::EventReady(event) = input {
            // Events are gated on the STREAM flag: emitted while streaming,
            // dropped silently otherwise (never queued, never an error).
            if self.phase == Phase::Streaming && !self.terminated {
                return Ok(ServerStep {
                    outputs: vec![M::StreamData(event)],
                    delivered: None,
                });
            }
            return Ok(ServerStep::default());
        }
        if self.terminated {
            return Err(violation(self.phase, describe_server(&input)));
        }

        match (self.phase, input) {
            (Phase::Closed, I::Received(M::Syn)) => {
                self.phase = Phase::SynReceived;
                Ok(ServerStep { outputs: vec![M::SynAck], delivered: None })
            }
            (Phase::SynReceived, I::Received(M::Ack)) => {
                self.phase = Phase::Connected;
                Ok(ServerStep::default())
            }
            (Phase::Connected, I::Received(M::Notf)) => {
                // Sets the STREAM flag; also the in-band re-entry path after
                // a suspension.
                self.phase = Phase::Streaming;
                self.notf_seen = true;
                Ok(ServerStep::default())
            }
            (Phase::Connected, I::StreamFlagSet) if self.notf_seen => {
                // Host-side resume; legal only for a stream the client
                // already requested once.
                self.phase = Phase::Streaming;
                Ok(ServerStep::default())
            }
            (Phase::Streaming, I::StreamFlagReset) => {
                self.phase = Phase::Connected;
                Ok(ServerStep::default())
            }
            (Phase::Connected | Phase::Streaming, I::Received(M::Feedback(cmd))) => {
                // Command delivery does not depend on the STREAM flag; a
                // window's decision may land while the stream is suspended.
                Ok(ServerStep { outputs: vec![], delivered: Some(cmd) })
            }
            (Phase::Connected | Phase::Streaming, I::Close) => {
                self.phase = Phase::Closing;
                self.terminated = true;
                Ok(ServerStep { outputs: vec![M::Fin], delivered: None })
            }
            (phase, input) => Err(violation(phase, describe_server(&input))),
        }
    }
}

fn describe_client(input: &ClientInput) -> String {
    match input {
        ClientInput::Start => "Start".into(),
        ClientInput::Received(m) => format!("Received({})", m.kind_name()),
        ClientInput::Tick => "Tick".into(),
        ClientInput::SendFeedback(_) => "SendFeedback".into(),
        ClientInput::Close => "Close".into(),
    }
}

fn describe_server(input: &ServerInput) -> String {
    match input {
        ServerInput::Received(m) => format!("Received({})", m.kind_name()),
        ServerInput::StreamFlagSet => "StreamFlagSet".into(),
        ServerInput::StreamFlagReset => "StreamFlagReset".into(),
        ServerInput::EventReady(_) => "EventReady".into(),
        ServerInput::Close => "Close".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::TimeInterval;
    use std::collections::{HashSet, VecDeque};

    fn sample_event() -> Event {
        Event::Vehicle {
            entity_id: "veh-000001".into(),
            x: 10.0,
            y: 0.0,
            speed_mps: 7.5,
            interval: TimeInterval::new(0.0, 10.0),
        }
    }

    fn sample_command() -> FeedbackCommand {
        FeedbackCommand::SetSpeedLimit { lane: "e-0-0".into(), limit_mps: 8.0 }
    }

    fn client_alphabet() -> Vec<ClientInput> {
        let mut inputs = vec![
            ClientInput::Start,
            ClientInput::Tick,
            ClientInput::Close,
            ClientInput::SendFeedback(sample_command()),
        ];
        for m in all_messages() {
            inputs.push(ClientInput::Received(m));
        }
        inputs
    }

    fn server_alphabet() -> Vec<ServerInput> {
        let mut inputs = vec![
            ServerInput::StreamFlagSet,
            ServerInput::StreamFlagReset,
            ServerInput::EventReady(sample_event()),
            ServerInput::Close,
        ];
        for m in all_messages() {
            inputs.push(ServerInput::Received(m));
        }
        inputs
    }

    fn all_messages() -> Vec<Message> {
        vec![
            Message::Syn,
            Message::SynAck,
            Message::Ack,
            Message::Notf,
            Message::StreamData(sample_event()),
            Message::Awake,
            Message::Feedback(sample_command()),
            Message::Fin,
        ]
    }

    #[test]
    fn client_handshake_rows() {
        let mut c = ClientSession::new();
        let step = c.step(ClientInput::Start).unwrap();
        assert_eq!(c.phase(), Phase::SynSent);
        assert_eq!(step.outputs, vec![Message::Syn]);

        let step = c.step(ClientInput::Received(Message::SynAck)).unwrap();
        assert_eq!(c.phase(), Phase::Streaming);
        assert_eq!(step.outputs, vec![Message::Ack, Message::Notf]);
    }

    #[test]
    fn client_delivers_stream_data_without_emitting() {
        let mut c = streaming_client();
        let step = c.step(ClientInput::Received(Message::StreamData(sample_event()))).unwrap();
        assert!(step.outputs.is_empty());
        assert_eq!(step.delivered, Some(sample_event()));
    }

    #[test]
    fn client_rejects_syn_while_streaming() {
        let mut c = streaming_client();
        let err = c.step(ClientInput::Received(Message::Syn)).unwrap_err();
        assert!(matches!(err, WireError::ProtocolViolation { phase: Phase::Streaming, .. }));
        assert_eq!(c.phase(), Phase::Streaming, "state unchanged on violation");
    }

    #[test]
    fn fin_closes_from_every_phase() {
        for reach in 0..4 {
            let mut c = ClientSession::new();
            if reach >= 1 {
                c.step(ClientInput::Start).unwrap();
            }
            if reach >= 2 {
                c.step(ClientInput::Received(Message::SynAck)).unwrap();
            }
            if reach >= 3 {
                c.step(ClientInput::Close).unwrap();
            }
            let step = c.step(ClientInput::Received(Message::Fin)).unwrap();
            assert_eq!(c.phase(), Phase::Closed);
            assert!(step.outputs.is_empty());
        }
    }

    #[test]
    fn server_handshake_rows() {
        let mut s = ServerSession::new();
        let step = s.step(ServerInput::Received(Message::Syn)).unwrap();
        assert_eq!(s.phase(), Phase::SynReceived);
        assert_eq!(step.outputs, vec![Message::SynAck]);

        s.step(ServerInput::Received(Message::Ack)).unwrap();
        assert_eq!(s.phase(), Phase::Connected);

        let step = s.step(ServerInput::Received(Message::Notf)).unwrap();
        assert_eq!(s.phase(), Phase::Streaming);
        assert!(step.outputs.is_empty());
    }

    #[test]
    fn server_drops_events_while_not_streaming() {
        let mut s = connected_server();
        let step = s.step(ServerInput::EventReady(sample_event())).unwrap();
        assert_eq!(s.phase(), Phase::Connected);
        assert!(step.outputs.is_empty());
    }

    #[test]
    fn server_streams_events_while_streaming() {
        let mut s = streaming_server();
        let step = s.step(ServerInput::EventReady(sample_event())).unwrap();
        assert_eq!(step.outputs, vec![Message::StreamData(sample_event())]);
    }

    #[test]
    fn suspend_and_resume_via_notf_reentry() {
        let mut s = streaming_server();
        s.step(ServerInput::StreamFlagReset).unwrap();
        assert_eq!(s.phase(), Phase::Connected);
        // Suspended: events drop silently.
        let step = s.step(ServerInput::EventReady(sample_event())).unwrap();
        assert!(step.outputs.is_empty());
        // Client re-requests after the broker's Awake.
        s.step(ServerInput::Received(Message::Notf)).unwrap();
        assert_eq!(s.phase(), Phase::Streaming);
    }

    #[test]
    fn stream_flag_set_requires_prior_notf() {
        // A fresh Connected server has never seen Notf: host enable refused.
        let mut s = connected_server();
        assert!(s.step(ServerInput::StreamFlagSet).is_err());
        // After a Notf and a suspension, host enable works.
        s.step(ServerInput::Received(Message::Notf)).unwrap();
        s.step(ServerInput::StreamFlagReset).unwrap();
        s.step(ServerInput::StreamFlagSet).unwrap();
        assert_eq!(s.phase(), Phase::Streaming);
    }

    #[test]
    fn feedback_delivered_even_while_suspended() {
        let mut s = streaming_server();
        s.step(ServerInput::StreamFlagReset).unwrap();
        let step = s.step(ServerInput::Received(Message::Feedback(sample_command()))).unwrap();
        assert_eq!(step.delivered, Some(sample_command()));
    }

    #[test]
    fn client_awake_triggers_notf_resend() {
        let mut c = streaming_client();
        let step = c.step(ClientInput::Received(Message::Awake)).unwrap();
        assert_eq!(step.outputs, vec![Message::Notf]);
        assert_eq!(c.phase(), Phase::Streaming);
    }

    #[test]
    fn close_emits_fin_then_tick_finalizes() {
        let mut c = streaming_client();
        let step = c.step(ClientInput::Close).unwrap();
        assert_eq!(step.outputs, vec![Message::Fin]);
        assert_eq!(c.phase(), Phase::Closing);
        c.step(ClientInput::Tick).unwrap();
        assert_eq!(c.phase(), Phase::Closed);
    }

    fn streaming_client() -> ClientSession {
        let mut c = ClientSession::new();
        c.step(ClientInput::Start).unwrap();
        c.step(ClientInput::Received(Message::SynAck)).unwrap();
        c
    }

    fn connected_server() -> ServerSession {
        let mut s = ServerSession::new();
        s.step(ServerInput::Received(Message::Syn)).unwrap();
        s.step(ServerInput::Received(Message::Ack)).unwrap();
        s
    }

    fn streaming_server() -> ServerSession {
        let mut s = connected_server();
        s.step(ServerInput::Received(Message::Notf)).unwrap();
        s
    }

    // Exhaustive reachability check. Both machines are pure and Markov in
    // their (small) state structs, so a breadth-first closure over the state
    // graph covers every input sequence of every length, not just length 8.
    #[test]
    fn server_never_streams_before_notf_and_never_outputs_after_fin() {
        let mut seen: HashSet<(Phase, bool, bool)> = HashSet::new();
        let mut frontier = VecDeque::from([ServerSession::new()]);
        seen.insert(key_server(&ServerSession::new()));
        let mut transitions = 0usize;
        while let Some(state) = frontier.pop_front() {
            for input in server_alphabet() {
                let mut next = state.clone();
                let before_notf = state.notf_seen;
                let before_term = state.terminated;
                match next.step(input.clone()) {
                    Ok(step) => {
                        transitions += 1;
                        let emits_data = step
                            .outputs
                            .iter()
                            .any(|m| matches!(m, Message::StreamData(_)));
                        assert!(
                            !emits_data || before_notf,
                            "StreamData emitted before any Notf: {state:?} + {input:?}"
                        );
                        assert!(
                            !before_term || step.outputs.is_empty(),
                            "output after Fin: {state:?} + {input:?}"
                        );
                        // Purity: replay yields the identical result.
                        let mut replay = state.clone();
                        assert_eq!(replay.step(input.clone()), Ok(step));
                        assert_eq!(replay, next);
                        if seen.insert(key_server(&next)) {
                            frontier.push_back(next);
                        }
                    }
                    Err(_) => {
                        // Violations leave the state untouched.
                        assert_eq!(next, state);
                    }
                }
            }
        }
        assert!(transitions > 0);
        // Streaming is reachable only with notf_seen.
        for (phase, notf, _) in &seen {
            if *phase == Phase::Streaming {
                assert!(*notf, "Streaming reached without Notf");
            }
        }
    }

    #[test]
    fn client_exhaustive_reachability_is_safe_and_pure() {
        let mut seen: HashSet<(Phase, bool)> = HashSet::new();
        let mut frontier = VecDeque::from([ClientSession::new()]);
        seen.insert(key_client(&ClientSession::new()));
        while let Some(state) = frontier.pop_front() {
            for input in client_alphabet() {
                let mut next = state.clone();
                match next.step(input.clone()) {
                    Ok(step) => {
                        assert!(
                            !state.terminated || step.outputs.is_empty(),
                            "output after Fin: {state:?} + {input:?}"
                        );
                        let mut replay = state.clone();
                        assert_eq!(replay.step(input.clone()), Ok(step));
                        assert_eq!(replay, next);
                        if seen.insert(key_client(&next)) {
                            frontier.push_back(next);
                        }
                    }
                    Err(_) => assert_eq!(next, state),
                }
            }
        }
        // The client never passes through Connected or SynReceived.
        assert!(seen.iter().all(|(p, _)| *p != Phase::Connected && *p != Phase::SynReceived));
    }

    fn key_server(s: &ServerSession) -> (Phase, bool, bool) {
        (s.phase, s.notf_seen, s.terminated)
    }

    fn key_client(c: &ClientSession) -> (Phase, bool) {
        (c.phase, c.terminated)
    }

    // Drive both endpoints against each other through a full session:
    // handshake, stream, feedback, fault/resume, teardown.
    #[test]
    fn full_session_against_peer() {
        let mut client = ClientSession::new();
        let mut server = ServerSession::new();

        let mut to_server: VecDeque<Message> = VecDeque::new();
        let mut to_client: VecDeque<Message> = VecDeque::new();

        let step = client.step(ClientInput::Start).unwrap();
        to_server.extend(step.outputs);
        pump(&mut client, &mut server, &mut to_server, &mut to_client);
        assert_eq!(client.phase(), Phase::Streaming);
        assert_eq!(server.phase(), Phase::Streaming);

        // Physical event flows up to the client.
        let step = server.step(ServerInput::EventReady(sample_event())).unwrap();
        to_client.extend(step.outputs);
        let mut delivered = Vec::new();
        pump_collect(&mut client, &mut server, &mut to_server, &mut to_client, &mut delivered);
        assert_eq!(delivered, vec![sample_event()]);

        // Feedback flows down to the server.
        let step = client.step(ClientInput::SendFeedback(sample_command())).unwrap();
        to_server.extend(step.outputs);
        let mut commands = Vec::new();
        while let Some(m) = to_server.pop_front() {
            let s = server.step(ServerInput::Received(m)).unwrap();
            to_client.extend(s.outputs);
            commands.extend(s.delivered);
        }
        assert_eq!(commands, vec![sample_command()]);

        // Fault: host suspends the server; events drop.
        server.step(ServerInput::StreamFlagReset).unwrap();
        let step = server.step(ServerInput::EventReady(sample_event())).unwrap();
        assert!(step.outputs.is_empty());

        // Recovery: broker's Awake reaches the client, which re-requests.
        let step = client.step(ClientInput::Received(Message::Awake)).unwrap();
        to_server.extend(step.outputs);
        pump(&mut client, &mut server, &mut to_server, &mut to_client);
        assert!(server.is_streaming());

        // Teardown from the client side.
        let step = client.step(ClientInput::Close).unwrap();
        to_server.extend(step.outputs);
        pump(&mut client, &mut server, &mut to_server, &mut to_client);
        client.step(ClientInput::Tick).unwrap();
        assert_eq!(client.phase(), Phase::Closed);
        assert_eq!(server.phase(), Phase::Closed);
        assert!(server.is_terminated());
    }

    fn pump(
        client: &mut ClientSession,
        server: &mut ServerSession,
        to_server: &mut VecDeque<Message>,
        to_client: &mut VecDeque<Message>,
    ) {
        let mut sink = Vec::new();
        pump_collect(client, server, to_server, to_client, &mut sink);
    }

    fn pump_collect(
        client: &mut ClientSession,
        server: &mut ServerSession,
        to_server: &mut VecDeque<Message>,
        to_client: &mut VecDeque<Message>,
        delivered: &mut Vec<Event>,
    ) {
        loop {
            let mut moved = false;
            if let Some(m) = to_server.pop_front() {
                let step = server.step(ServerInput::Received(m)).unwrap();
                to_client.extend(step.outputs);
                moved = true;
            }
            if let Some(m) = to_client.pop_front() {
                let step = client.step(ClientInput::Received(m)).unwrap();
                to_server.extend(step.outputs);
                delivered.extend(step.delivered);
                moved = true;
            }
            if !moved {
                break;
            }
        }
    }
}
