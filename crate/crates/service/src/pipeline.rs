//! Queue → classify workers → store, with failed events parked for redrive.

use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::alerts::{evaluate_alerts, AlertDispatcher, AlertRule};
use crate::inference::{classify, BackendConfig, DetectionBackend};
use crate::ingest::{BoundedQueue, IngestEvent, QueueStats};
use crate::store::{Store, StoreOutcome};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PipelineSummary {
    /// Events taken off the queue.
    pub processed: u64,
    /// Newly stored images.
    pub stored: u64,
    pub blanks: u64,
    pub detections: u64,
    /// Content already in the store.
    pub duplicates: u64,
    /// Events moved to the retry queue.
    pub parked: u64,
    pub alerts_fired: u64,
    pub queue: QueueStats,
}

impl PipelineSummary {
    /// Every dequeued event ended stored, duplicate or parked.
    pub fn is_accounted(&self) -> bool {
        self.processed == self.stored + self.duplicates + self.parked && self.queue.dequeued == self.processed
    }

    pub fn merge(&mut self, other: &PipelineSummary) {
        self.processed += other.processed;
        self.stored += other.stored;
        self.blanks += other.blanks;
        self.detections += other.detections;
        self.duplicates += other.duplicates;
        self.parked += other.parked;
        self.alerts_fired += other.alerts_fired;
        self.queue.enqueued += other.queue.enqueued;
        self.queue.dequeued += other.queue.dequeued;
        self.queue.dropped += other.queue.dropped;
        self.queue.in_flight += other.queue.in_flight;
    }
}

pub struct Pipeline {
    store: Arc<Store>,
    backend: Arc<dyn DetectionBackend>,
    config: BackendConfig,
    queue_capacity: usize,
    rules: Vec<AlertRule>,
    alerts: Option<AlertDispatcher>,
}

impl Pipeline {
    pub fn new(store: Arc<Store>, backend: Arc<dyn DetectionBackend>, config: BackendConfig, queue_capacity: usize) -> Self {
        Self {
            store,
            backend,
            config,
            queue_capacity: queue_capacity.max(1),
            rules: Vec::new(),
            alerts: None,
        }
    }

    pub fn with_alerts(mut self, rules: Vec<AlertRule>, dispatcher: AlertDispatcher) -> Self {
        self.rules = rules;
        self.alerts = Some(dispatcher);
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Runs `producer` against a fresh queue while the workers drain it. The
    /// queue is closed when the producer returns and every queued event is
    /// processed before this returns.
    pub fn run<R>(&self, producer: impl FnOnce(&BoundedQueue<IngestEvent>) -> R) -> (R, PipelineSummary) {
        let queue = BoundedQueue::new(self.queue_capacity);
        let totals = Mutex::new(PipelineSummary::default());
        let produced = std::thread::scope(|scope| {
            for i in 0..self.config.workers.max(1) {
                let (queue, totals) = (&queue, &totals);
                std::thread::Builder::new()
                    .name(format!("classify-{i}"))
                    .spawn_scoped(scope, move || {
                        let mut local = PipelineSummary::default();
                        while let Some(event) = queue.dequeue() {
                            self.process(event, &mut local);
                        }
                        totals.lock().unwrap_or_else(|p| p.into_inner()).merge(&local);
                    })
                    .expect("spawn classify worker");
            }
            let produced = producer(&queue);
            queue.close();
            produced
        });
        let mut summary = totals.into_inner().unwrap_or_else(|p| p.into_inner());
        summary.queue = queue.stats();
        tracing::info!(stage = "queue", enqueued = summary.queue.enqueued, dequeued = summary.queue.dequeued,
            dropped = summary.queue.dropped, in_flight = summary.queue.in_flight, "queue drained");
        (produced, summary)
    }

    pub fn run_events(&self, events: impl IntoIterator<Item = IngestEvent>) -> PipelineSummary {
        self.run(|queue| {
            for e in events {
                if queue.enqueue(e).is_err() {
                    break;
                }
            }
        })
        .1
    }

    /// Sends every parked event through the pipeline again.
    pub fn redrive(&self) -> Result<PipelineSummary, crate::store::StoreError> {
        let parked = self.store.take_parked()?;
        if parked.is_empty() {
            return Ok(PipelineSummary::default());
        }
        tracing::info!(stage = "queue", events = parked.len(), "redriving parked events");
        Ok(self.run_events(parked.into_iter().map(|p| p.event)))
    }

    fn process(&self, event: IngestEvent, out: &mut PipelineSummary) {
        out.processed += 1;
        tracing::debug!(stage = "queue", event_id = %event.event_id, "dequeued");
        let classified = match classify(self.backend.as_ref(), &event, &self.config) {
            Ok(c) => c,
            Err(failure) => {
                self.park(&event, failure.attempts, &failure.to_string(), out);
                return;
            }
        };
        match self.store.record_result(&classified, &event.meta()) {
            Ok(StoreOutcome::Stored { .. }) => {
                out.stored += 1;
                if classified.is_blank {
                    out.blanks += 1;
                }
                out.detections += classified.detections.len() as u64;
                if let Some(dispatcher) = &self.alerts {
                    for alert in evaluate_alerts(&classified, &self.rules) {
                        out.alerts_fired += 1;
                        dispatcher.submit(alert);
                    }
                }
            }
            Ok(StoreOutcome::Duplicate { .. }) => out.duplicates += 1,
            Err(e) => self.park(&event, 1, &e.to_string(), out),
        }
    }

    fn park(&self, event: &IngestEvent, attempts: u32, error: &str, out: &mut PipelineSummary) {
        out.parked += 1;
        if let Err(e) = self.store.park(event, attempts, error) {
            // Nowhere left to put it; make the loss loud.
            tracing::error!(stage = "store", event_id = %event.event_id, error = %e, "could not park event");
        }
    }
}
