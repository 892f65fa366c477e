//! Event Broker: per-type FIFO queues, window densities, flow decisions,
//! and fault/recovery handling.

use std::collections::VecDeque;

use super::{PipelineConfig, Thresholds};
use crate::events::{bounds, Event, EventType, FeedbackCommand, TimeInterval};
use crate::sim::FlowTargets;
use crate::wire::Message;

/// Bounded FIFO queue for one event type. The window counter feeds the
/// density numerator and is reset only at window boundaries; the items
/// themselves stay until drained.
#[derive(Debug, Clone, PartialEq)]
pub struct EventQueue {
    pub event_type: EventType,
    pub capacity: usize,
    items: VecDeque<Event>,
    total_enqueued_in_window: u64,
    overflow_dropped: u64,
}

impl EventQueue {
    fn new(event_type: EventType, capacity: usize) -> Self {
        Self {
            event_type,
            capacity,
            items: VecDeque::with_capacity(capacity),
            total_enqueued_in_window: 0,
            overflow_dropped: 0,
        }
    }

    fn push(&mut self, event: Event) {
        if self.items.len() == self.capacity {
            // Bounded queue policy: the oldest item gives way and the drop
            // is recorded.
            self.items.pop_front();
            self.overflow_dropped += 1;
        }
        self.items.push_back(event);
        self.total_enqueued_in_window += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn window_count(&self) -> u64 {
        self.total_enqueued_in_window
    }

    pub fn overflow_dropped(&self) -> u64 {
        self.overflow_dropped
    }
}

/// Densities of one completed window, one entry per event type.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub rho: [f64; 3],
    pub window: TimeInterval,
}

impl DensityReport {
    pub fn rho(&self, ty: EventType) -> f64 {
        self.rho[ty.index()]
    }
}

/// Broker health. While `Recovering`, streaming is disabled and nothing is
/// enqueued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultState {
    Healthy,
    Recovering { until: f64 },
}

/// Where the window's data flows next: onward into the twin store, or back
/// into the physical layer as a correction.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowDecision {
    Forward,
    Feedback(FeedbackCommand),
}

/// The broker's full state: three per-type queues plus flow configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokerState {
    queues: [EventQueue; 3],
    stream_enabled: bool,
    fault: FaultState,
    config: PipelineConfig,
    window_start: f64,
    rejected_during_recovery: u64,
}

impl BrokerState {
    pub fn new(config: &PipelineConfig) -> Self {
        debug_assert!(config.validate().is_ok(), "caller validates the pipeline config");
        Self {
            queues: [
                EventQueue::new(EventType::E1, config.queue_capacity),
                EventQueue::new(EventType::E2, config.queue_capacity),
                EventQueue::new(EventType::E3, config.queue_capacity),
            ],
            stream_enabled: true,
            fault: FaultState::Healthy,
            config: config.clone(),
            window_start: 0.0,
            rejected_during_recovery: 0,
        }
    }

    pub fn queue(&self, ty: EventType) -> &EventQueue {
        &self.queues[ty.index()]
    }

    pub fn stream_enabled(&self) -> bool {
        self.stream_enabled
    }

    pub fn fault(&self) -> FaultState {
        self.fault
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.config.thresholds
    }

    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    pub fn rejected_during_recovery(&self) -> u64 {
        self.rejected_during_recovery
    }

    /// Total events evicted by overflow across all queues.
    pub fn overflow_dropped(&self) -> u64 {
        self.queues.iter().map(EventQueue::overflow_dropped).sum()
    }

    /// Routes the event to the queue of its type. While recovering, the
    /// event is rejected and counted instead; `true` means accepted.
    pub fn enqueue(&mut self, event: Event, now: f64) -> bool {
        debug_assert!(now >= self.window_start, "time runs forward within a window");
        if matches!(self.fault, FaultState::Recovering { .. }) {
            self.rejected_during_recovery += 1;
            return false;
        }
        self.queues[event.event_type().index()].push(event);
        true
    }

    /// Density of type-`ty` events in the current window: occurrences
    /// observed since the window opened, divided by the queue capacity,
    /// clamped to [0, 1].
    pub fn compute_density(&self, ty: EventType) -> f64 {
        let queue = &self.queues[ty.index()];
        (queue.total_enqueued_in_window as f64 / queue.capacity as f64).clamp(0.0, 1.0)
    }

    /// Closes the current window: reports all three densities over it and
    /// resets the window counters. Queue contents are untouched.
    pub fn close_window(&mut self, now: f64) -> DensityReport {
        let report = DensityReport {
            rho: [
                self.compute_density(EventType::E1),
                self.compute_density(EventType::E2),
                self.compute_density(EventType::E3),
            ],
            window: TimeInterval::new(self.window_start, now),
        };
        for queue in &mut self.queues {
            queue.total_enqueued_in_window = 0;
        }
        self.window_start = now;
        report
    }

    /// Turns a window's densities into a flow decision. If no density
    /// strictly exceeds its threshold the data flows forward; otherwise one
    /// feedback command is issued, chosen by fixed priority E1 > E3 > E2,
    /// targeting the entities the world currently reports as most loaded.
    /// Command magnitudes are clamped into the physical layer's accepted
    /// ranges so the reactor's bounds guard never trips in-system.
    pub fn decide_flow(&self, report: &DensityReport, targets: &FlowTargets) -> FlowDecision {
        let over = |ty: EventType| report.rho(ty) > self.config.thresholds.theta(ty);
        if over(EventType::E1) {
            let (lo, hi) = bounds::SPEED_LIMIT;
            return FlowDecision::Feedback(FeedbackCommand::SetSpeedLimit {
                lane: targets.lane.clone(),
                limit_mps: (targets.lane_limit * self.config.speed_factor).clamp(lo, hi),
            });
        }
        if over(EventType::E3) {
            // Keep the green share within the accepted ratio band:
            // g/(g+r) ≤ hi ⟺ g ≤ r·hi/(1−hi).
            let (lo, hi) = bounds::GREEN_RATIO;
            let max_green = targets.red_s * hi / (1.0 - hi);
            let min_green = targets.red_s * lo / (1.0 - lo);
            return FlowDecision::Feedback(FeedbackCommand::SetSignalTiming {
                light: targets.light.clone(),
                green_s: (targets.green_s * self.config.green_factor)
                    .clamp(min_green, max_green),
                red_s: targets.red_s,
            });
        }
        if over(EventType::E2) {
            let (lo, hi) = bounds::SAMPLING_PERIOD;
            return FlowDecision::Feedback(FeedbackCommand::SetSensorSampling {
                sensor: targets.sensor.clone(),
                period_s: (targets.sensor_period * self.config.sampling_factor).clamp(lo, hi),
            });
        }
        FlowDecision::Forward
    }

    /// Fault entry: disable streaming and start (or restart) the recovery
    /// timer. The caller propagates the flag reset to the publisher.
    pub fn on_fault(&mut self, now: f64) {
        self.fault = FaultState::Recovering { until: now + self.config.recovery_period_s };
        self.stream_enabled = false;
    }

    /// Recovery poll. At the first tick at or past the deadline the broker
    /// heals and emits the single AWAKE that tells the publisher to raise
    /// the STREAM flag again.
    pub fn tick_recovery(&mut self, now: f64) -> Option<Message> {
        match self.fault {
            FaultState::Recovering { until } if now >= until => {
                self.fault = FaultState::Healthy;
                self.stream_enabled = true;
                Some(Message::Awake)
            }
            _ => None,
        }
    }

    /// Empties all queues for processing, type-major (E1, then E2, then
    /// E3), FIFO within each type.
    pub fn drain(&mut self) -> Vec<Event> {
        let mut out = Vec::new();
        for queue in &mut self.queues {
            out.extend(queue.items.drain(..));
        }
        out
    }
}
