use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::Serialize;

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

/// Counters of a [`BoundedQueue`]. `in_flight` counts items waiting in the
/// queue, so `enqueued == dequeued + dropped + in_flight` always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    pub enqueued: u64,
    pub dequeued: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl QueueStats {
    pub fn is_conserved(&self) -> bool {
        self.enqueued == self.dequeued + self.dropped + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("queue is shut down")]
pub struct QueueClosed<T>(pub T);

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    enqueued: u64,
    dequeued: u64,
    dropped: u64,
}

/// Multi-producer, multi-consumer FIFO. A full queue blocks producers.
pub struct BoundedQueue<T> {
    capacity: usize,
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            state: Mutex::new(State {
                items: VecDeque::with_capacity(capacity.min(4096)),
                closed: false,
                enqueued: 0,
                dequeued: 0,
                dropped: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Blocks while the queue is full. Fails, handing the item back, once the
    /// queue is closed.
    pub fn enqueue(&self, item: T) -> Result<(), QueueClosed<T>> {
        let mut s = self.lock();
        while !s.closed && s.items.len() >= self.capacity {
            s = self.not_full.wait(s).unwrap_or_else(|p| p.into_inner());
        }
        if s.closed {
            return Err(QueueClosed(item));
        }
        s.items.push_back(item);
        s.enqueued += 1;
        drop(s);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Non-blocking variant: `Err(item)` when full or closed.
    pub fn try_enqueue(&self, item: T) -> Result<(), T> {
        let mut s = self.lock();
        if s.closed || s.items.len() >= self.capacity {
            return Err(item);
        }
        s.items.push_back(item);
        s.enqueued += 1;
        drop(s);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Blocks until an item arrives. `None` once the queue is closed and drained.
    pub fn dequeue(&self) -> Option<T> {
        let mut s = self.lock();
        loop {
            if let Some(item) = s.items.pop_front() {
                s.dequeued += 1;
                drop(s);
                self.not_full.notify_one();
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.not_empty.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Like [`dequeue`](Self::dequeue) but gives up after `timeout`.
    pub fn dequeue_timeout(&self, timeout: Duration) -> Option<T> {
        let deadline = Instant::now() + timeout;
        let mut s = self.lock();
        loop {
            if let Some(item) = s.items.pop_front() {
                s.dequeued += 1;
                drop(s);
                self.not_full.notify_one();
                return Some(item);
            }
            let now = Instant::now();
            if s.closed || now >= deadline {
                return None;
            }
            s = self
                .not_empty
                .wait_timeout(s, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Stops accepting items; consumers drain what is left.
    pub fn close(&self) {
        self.lock().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    /// Stops accepting items and discards what is queued, counting it as dropped.
    pub fn abort(&self) -> Vec<T> {
        let mut s = self.lock();
        s.closed = true;
        let left: Vec<T> = s.items.drain(..).collect();
        s.dropped += left.len() as u64;
        drop(s);
        self.not_empty.notify_all();
        self.not_full.notify_all();
        left
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> QueueStats {
        let s = self.lock();
        QueueStats {
            enqueued: s.enqueued,
            dequeued: s.dequeued,
            dropped: s.dropped,
            in_flight: s.items.len() as u64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn fifo() {
        let q = BoundedQueue::new(4);
        for i in 0..4 {
            q.enqueue(i).unwrap();
        }
        assert_eq!(q.try_enqueue(9), Err(9));
        assert_eq!((0..4).map(|_| q.dequeue().unwrap()).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(q.stats().is_conserved());
    }

    #[test]
    fn full_queue_blocks_until_dequeue() {
        let q = Arc::new(BoundedQueue::new(1));
        q.enqueue(1).unwrap();
        let done = Arc::new(AtomicBool::new(false));
        let producer = {
            let (q, done) = (q.clone(), done.clone());
            thread::spawn(move || {
                q.enqueue(2).unwrap();
                done.store(true, Ordering::SeqCst);
            })
        };
        thread::sleep(Duration::from_millis(50));
        assert!(!done.load(Ordering::SeqCst));
        assert_eq!(q.dequeue(), Some(1));
        producer.join().unwrap();
        assert!(done.load(Ordering::SeqCst));
        assert_eq!(q.dequeue(), Some(2));
    }

    #[test]
    fn close_drains_then_ends() {
        let q = BoundedQueue::new(4);
        q.enqueue(1).unwrap();
        q.close();
        assert_eq!(q.enqueue(2), Err(QueueClosed(2)));
        assert_eq!(q.dequeue(), Some(1));
        assert_eq!(q.dequeue(), None);
        assert_eq!(q.dequeue_timeout(Duration::from_millis(1)), None);
    }

    #[test]
    fn close_wakes_blocked_consumer_and_producer() {
        let q = Arc::new(BoundedQueue::<u32>::new(1));
        let consumer = {
            let q = q.clone();
            thread::spawn(move || q.dequeue())
        };
        thread::sleep(Duration::from_millis(20));
        q.close();
        assert_eq!(consumer.join().unwrap(), None);
    }

    #[test]
    fn abort_counts_drops() {
        let q = BoundedQueue::new(8);
        for i in 0..5 {
            q.enqueue(i).unwrap();
        }
        q.dequeue();
        assert_eq!(q.abort(), vec![1, 2, 3, 4]);
        let s = q.stats();
        assert_eq!(s, QueueStats { enqueued: 5, dequeued: 1, dropped: 4, in_flight: 0 });
        assert!(s.is_conserved());
    }

    #[test]
    fn four_producers_stress() {
        let q = Arc::new(BoundedQueue::new(16));
        let producers: Vec<_> = (0..4)
            .map(|p| {
                let q = q.clone();
                thread::spawn(move || {
                    for i in 0..250 {
                        q.enqueue((p, i)).unwrap();
                        assert!(q.stats().is_conserved());
                    }
                })
            })
            .collect();
        let consumers: Vec<_> = (0..3)
            .map(|_| {
                let q = q.clone();
                thread::spawn(move || {
                    let mut got = Vec::new();
                    while let Some(x) = q.dequeue() {
                        got.push(x);
                    }
                    got
                })
            })
            .collect();
        for p in producers {
            p.join().unwrap();
        }
        q.close();
        let mut all: Vec<(i32, i32)> = consumers.into_iter().flat_map(|c| c.join().unwrap()).collect();
        // per-producer order survives within each consumer; overall nothing lost
        all.sort();
        assert_eq!(all.len(), 1000);
        all.dedup();
        assert_eq!(all.len(), 1000);
        assert_eq!(q.stats(), QueueStats { enqueued: 1000, dequeued: 1000, dropped: 0, in_flight: 0 });
    }
}
