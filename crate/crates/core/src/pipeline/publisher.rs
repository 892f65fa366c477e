//! Event Publisher: a pure relay gated by the STREAM flag.

use crate::events::Event;

/// Relay point between the streaming session and the broker. While the
/// STREAM flag is set every event passes through unchanged and in order;
/// while it is unset events are dropped and counted, never both.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PublisherState {
    stream: bool,
    forwarded: u64,
    dropped: u64,
}

impl PublisherState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stream_enabled(&self) -> bool {
        self.stream
    }

    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Raises the STREAM flag (initial NOTF acknowledgement, or an AWAKE
    /// from the broker after recovery).
    pub fn set_stream(&mut self) {
        self.stream = true;
    }

    /// Clears the STREAM flag (broker fault).
    pub fn reset_stream(&mut self) {
        self.stream = false;
    }

    /// Forwards the event iff the STREAM flag is set; otherwise drops and
    /// counts it.
    pub fn relay(&mut self, event: Event) -> Option<Event> {
        if self.stream {
            self.forwarded += 1;
            Some(event)
        } else {
            self.dropped += 1;
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::TimeInterval;

    fn sample_event(i: usize) -> Event {
        Event::Vehicle {
            entity_id: format!("veh-{i:06}"),
            x: 1.0,
            y: 2.0,
            speed_mps: 9.0,
            interval: TimeInterval::new(i as f64, i as f64 + 1.0),
        }
    }

    #[test]
    fn forwards_unchanged_while_streaming() {
        let mut ep = PublisherState::new();
        ep.set_stream();
        let event = sample_event(1);
        assert_eq!(ep.relay(event.clone()), Some(event));
        assert_eq!((ep.forwarded(), ep.dropped()), (1, 0));
    }

    #[test]
    fn drops_and_counts_while_suspended() {
        let mut ep = PublisherState::new();
        assert_eq!(ep.relay(sample_event(1)), None);
        assert_eq!((ep.forwarded(), ep.dropped()), (0, 1));
    }

    #[test]
    fn hundred_events_keep_their_order() {
        let mut ep = PublisherState::new();
        ep.set_stream();
        let out: Vec<Event> = (0..100).filter_map(|i| ep.relay(sample_event(i))).collect();
        assert_eq!(out.len(), 100);
        for (i, event) in out.iter().enumerate() {
            assert_eq!(event.entity_id(), format!("veh-{i:06}"));
        }
        assert_eq!(ep.forwarded(), 100);
    }

    #[test]
    fn every_event_is_forwarded_or_dropped_never_both() {
        let mut ep = PublisherState::new();
        let mut forwarded = 0u64;
        for i in 0..50 {
            if i == 20 {
                ep.set_stream();
            }
            if i == 35 {
                ep.reset_stream();
            }
            if ep.relay(sample_event(i)).is_some() {
                forwarded += 1;
            }
        }
        assert_eq!(ep.forwarded(), forwarded);
        assert_eq!(ep.forwarded() + ep.dropped(), 50);
    }
}
