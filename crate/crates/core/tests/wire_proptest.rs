//! Property tests for the frame codec: arbitrary well-formed messages must
//! survive an encode/decode roundtrip bit-for-bit, streams of concatenated
//! frames must decode in order, strict prefixes must ask for more data, and
//! the decoder must never panic on arbitrary bytes.

use iovtwin_core::events::{Event, FeedbackCommand, TimeInterval};
use iovtwin_core::wire::{DecodeOutcome, FrameCodec, Message};
use proptest::prelude::*;

fn name_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z0-9:_-]{1,16}",
        // Unicode identifiers exercise the JSON string escaping path.
        "\\PC{0,10}",
    ]
}

fn interval_strategy() -> impl Strategy<Value = TimeInterval> {
    (0.0..86_400.0f64, 0.0..600.0f64)
        .prop_map(|(start, span)| TimeInterval::new(start, start + span))
}

fn event_strategy() -> impl Strategy<Value = Event> {
    let coord = -1e4..1e4f64;
    prop_oneof![
        (name_strategy(), coord.clone(), coord.clone(), 0.0..60.0f64, interval_strategy())
            .prop_map(|(entity_id, x, y, speed_mps, interval)| Event::Vehicle {
                entity_id,
                x,
                y,
                speed_mps,
                interval,
            }),
        (name_strategy(), coord.clone(), coord.clone(), name_strategy(), interval_strategy())
            .prop_map(|(entity_id, x, y, lane, interval)| Event::Sensor {
                entity_id,
                x,
                y,
                lane,
                interval,
            }),
        (
            name_strategy(),
            coord.clone(),
            coord,
            name_strategy(),
            0.0..=1.0f64,
            interval_strategy()
        )
            .prop_map(|(entity_id, x, y, lane, duration_rate, interval)| Event::TrafficLight {
                entity_id,
                x,
                y,
                lane,
                duration_rate,
                interval,
            }),
    ]
}

fn command_strategy() -> impl Strategy<Value = FeedbackCommand> {
    prop_oneof![
        (name_strategy(), 0.0..100.0f64)
            .prop_map(|(lane, limit_mps)| FeedbackCommand::SetSpeedLimit { lane, limit_mps }),
        (name_strategy(), 0.1..300.0f64, 0.1..300.0f64).prop_map(|(light, green_s, red_s)| {
            FeedbackCommand::SetSignalTiming { light, green_s, red_s }
        }),
        (name_strategy(), 0.1..120.0f64)
            .prop_map(|(sensor, period_s)| FeedbackCommand::SetSensorSampling { sensor, period_s }),
    ]
}

fn message_strategy() -> impl Strategy<Value = Message> {
    prop_oneof![
        Just(Message::Syn),
        Just(Message::SynAck),
        Just(Message::Ack),
        Just(Message::Notf),
        Just(Message::Awake),
        Just(Message::Fin),
        event_strategy().prop_map(Message::StreamData),
        command_strategy().prop_map(Message::Feedback),
    ]
}

proptest! {
    /// Encoding then decoding any message yields the same message and
    /// consumes exactly the encoded bytes.
    #[test]
    fn roundtrip_preserves_message(msg in message_strategy()) {
        let codec = FrameCodec::default();
        let bytes = codec.encode(&msg).expect("well-formed messages encode");
        match codec.decode(&bytes).expect("encoded frames decode") {
            DecodeOutcome::Frame { message, consumed } => {
                prop_assert_eq!(message, msg);
                prop_assert_eq!(consumed, bytes.len());
            }
            DecodeOutcome::NeedMoreData => prop_assert!(false, "complete frame reported as partial"),
        }
    }

    /// A stream of concatenated frames decodes back to the original
    /// sequence, frame by frame, with nothing left over.
    #[test]
    fn concatenated_frames_decode_in_order(msgs in prop::collection::vec(message_strategy(), 1..5)) {
        let codec = FrameCodec::default();
        let mut stream = Vec::new();
        for msg in &msgs {
            stream.extend(codec.encode(msg).expect("well-formed messages encode"));
        }
        let mut cursor = 0;
        let mut decoded = Vec::new();
        while cursor < stream.len() {
            match codec.decode(&stream[cursor..]).expect("stream holds valid frames") {
                DecodeOutcome::Frame { message, consumed } => {
                    prop_assert!(consumed > 0);
                    decoded.push(message);
                    cursor += consumed;
                }
                DecodeOutcome::NeedMoreData => prop_assert!(false, "stream ended mid-frame"),
            }
        }
        prop_assert_eq!(decoded, msgs);
    }

    /// Every strict prefix of a valid frame asks for more data rather than
    /// erroring or producing a frame.
    #[test]
    fn strict_prefixes_need_more_data(msg in message_strategy(), cut in 0.0..1.0f64) {
        let codec = FrameCodec::default();
        let bytes = codec.encode(&msg).expect("well-formed messages encode");
        let take = ((bytes.len() as f64) * cut) as usize; // always < len
        match codec.decode(&bytes[..take]) {
            Ok(DecodeOutcome::NeedMoreData) => {}
            other => prop_assert!(false, "prefix of {take}/{} bytes gave {other:?}", bytes.len()),
        }
    }

    /// Arbitrary bytes never panic the decoder, and successful decodes
    /// always make forward progress so the consumer loop terminates.
    #[test]
    fn arbitrary_bytes_never_panic(buf in prop::collection::vec(any::<u8>(), 0..256)) {
        let codec = FrameCodec::default();
        let mut cursor = 0;
        while cursor < buf.len() {
            match codec.decode(&buf[cursor..]) {
                Ok(DecodeOutcome::Frame { consumed, .. }) => {
                    prop_assert!(consumed > 0, "zero-length consumption would loop forever");
                    cursor += consumed;
                }
                Ok(DecodeOutcome::NeedMoreData) | Err(_) => break,
            }
        }
    }
}
