//! Real-socket transport for the wire protocol.
//!
//! Experiment runs keep their determinism by exchanging frames through
//! in-memory buffers inside the lockstep driver; this module runs the same
//! session machines over an actual TCP connection. It exists to prove the
//! transport doesn't matter — the byte stream decodes to exactly the events
//! the world emitted — and to surface socket setup failures as first-class
//! errors with their own exit code.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use iovtwin_core::events::{Event, TimeInterval};
use iovtwin_core::sim::{build_network, SimConfig};
use iovtwin_core::wire::{
    ClientInput, ClientSession, DecodeOutcome, FrameCodec, Message, ServerInput, ServerSession,
};

use crate::ExperimentError;

/// Outcome of one TCP streaming session, client's view.
#[derive(Debug)]
pub struct TcpSmoke {
    /// Events delivered to the client, in arrival order.
    pub events: Vec<Event>,
    /// Frames the server wrote (handshake + stream + close).
    pub frames: u64,
}

/// Binds a listener, reporting failures with the offending address.
pub fn bind(addr: &str) -> Result<TcpListener, ExperimentError> {
    TcpListener::bind(addr)
        .map_err(|e| ExperimentError::Bind { addr: addr.to_string(), source: e })
}

fn io_err(addr: &std::net::SocketAddr, e: std::io::Error) -> ExperimentError {
    ExperimentError::Io { path: format!("tcp://{addr}"), source: e }
}

/// Server half: accepts one connection, answers the handshake, streams
/// `ticks` steps of the scenario, and closes with a Fin. Runs on its own
/// thread; errors come back as strings through the join handle.
fn serve(listener: TcpListener, cfg: SimConfig, ticks: u64) -> Result<u64, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let (mut sock, _) = listener.accept().map_err(|e| err(&e))?;
    let codec = FrameCodec::default();
    let mut server = ServerSession::new();
    let mut world = build_network(&cfg).map_err(|e| err(&e))?;
    let mut frames = 0u64;

    let write_all = |sock: &mut TcpStream, msgs: Vec<Message>, frames: &mut u64| {
        for m in msgs {
            let bytes = codec.encode(&m).map_err(|e| err(&e))?;
            sock.write_all(&bytes).map_err(|e| err(&e))?;
            *frames += 1;
        }
        Ok::<(), String>(())
    };

    // Handshake: feed arriving frames to the session until the client's
    // Notf raises the STREAM flag.
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    while !server.is_streaming() {
        let n = sock.read(&mut chunk).map_err(|e| err(&e))?;
        if n == 0 {
            return Err("peer closed during handshake".into());
        }
        buf.extend_from_slice(&chunk[..n]);
        let mut cursor = 0;
        while let DecodeOutcome::Frame { message, consumed } =
            codec.decode(&buf[cursor..]).map_err(|e| err(&e))?
        {
            cursor += consumed;
            let step = server.step(ServerInput::Received(message)).map_err(|e| err(&e))?;
            write_all(&mut sock, step.outputs, &mut frames)?;
        }
        buf.drain(..cursor);
    }

    // Stream the scenario. The server has nothing more to read: the smoke
    // run carries no feedback, so writes are the only direction.
    let dt = cfg.dt;
    for _ in 0..ticks {
        world.step();
        let now = world.time();
        for event in world.emit_events(TimeInterval::new(now - dt, now)) {
            let step = server.step(ServerInput::EventReady(event)).map_err(|e| err(&e))?;
            write_all(&mut sock, step.outputs, &mut frames)?;
        }
    }
    let step = server.step(ServerInput::Close).map_err(|e| err(&e))?;
    write_all(&mut sock, step.outputs, &mut frames)?;
    sock.flush().map_err(|e| err(&e))?;
    Ok(frames)
}

/// Boots the sim server on an ephemeral localhost port, connects a pipeline
/// client, and streams `ticks` steps over the socket. Returns the events
/// the client decoded, in arrival order.
pub fn stream_over_tcp(cfg: &SimConfig, ticks: u64) -> Result<TcpSmoke, ExperimentError> {
    let listener = bind("127.0.0.1:0")?;
    let addr = listener
        .local_addr()
        .map_err(|e| ExperimentError::Bind { addr: "127.0.0.1:0".into(), source: e })?;
    let server = thread::spawn({
        let cfg = cfg.clone();
        move || serve(listener, cfg, ticks)
    });

    let mut sock = TcpStream::connect(addr)
        .map_err(|e| ExperimentError::Bind { addr: addr.to_string(), source: e })?;
    let codec = FrameCodec::default();
    let mut client = ClientSession::new();
    let step = client.step(ClientInput::Start)?;
    for m in step.outputs {
        sock.write_all(&codec.encode(&m)?).map_err(|e| io_err(&addr, e))?;
    }

    let mut events = Vec::new();
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    while !client.is_terminated() {
        let n = sock.read(&mut chunk).map_err(|e| io_err(&addr, e))?;
        if n == 0 {
            return Err(ExperimentError::Protocol(
                "server closed the socket without a Fin".into(),
            ));
        }
        buf.extend_from_slice(&chunk[..n]);
        let mut cursor = 0;
        while let DecodeOutcome::Frame { message, consumed } = codec.decode(&buf[cursor..])? {
            cursor += consumed;
            let step = client.step(ClientInput::Received(message))?;
            for m in step.outputs {
                sock.write_all(&codec.encode(&m)?).map_err(|e| io_err(&addr, e))?;
            }
            if let Some(event) = step.delivered {
                events.push(event);
            }
        }
        buf.drain(..cursor);
    }

    let frames = server
        .join()
        .map_err(|_| ExperimentError::Protocol("server thread panicked".into()))?
        .map_err(ExperimentError::Protocol)?;
    Ok(TcpSmoke { events, frames })
}

/// The same scenario replayed without any transport: what the world emits
/// is what a lossless stack must deliver.
pub fn reference_events(cfg: &SimConfig, ticks: u64) -> Result<Vec<Event>, ExperimentError> {
    let mut world =
        build_network(cfg).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let mut events = Vec::new();
    for _ in 0..ticks {
        world.step();
        let now = world.time();
        events.extend(world.emit_events(TimeInterval::new(now - cfg.dt, now)));
    }
    Ok(events)
}
