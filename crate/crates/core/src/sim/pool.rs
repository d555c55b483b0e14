//! Processor-sharing server pool.

use std::collections::BTreeMap;

use crate::platform::Micros;

// Leftover work below this (in microseconds) counts as done.
const EPS: f64 = 1e-3;

/// `servers` identical servers shared equally by every job present: each job
/// progresses at `min(1, servers / occupancy)`.
#[derive(Debug, Clone)]
pub(crate) struct PsPool {
    servers: u32,
    /// Jobs that never finish but take their share.
    persistent: u32,
    jobs: BTreeMap<usize, f64>,
    clock: Micros,
    served: f64,
}

impl PsPool {
    pub(crate) fn new(servers: u32, persistent: u32) -> Self {
        PsPool {
            servers: servers.max(1),
            persistent,
            jobs: BTreeMap::new(),
            clock: Micros::ZERO,
            served: 0.0,
        }
    }

    pub(crate) fn occupancy(&self) -> u32 {
        self.jobs.len() as u32 + self.persistent
    }

    fn rate(&self) -> f64 {
        let n = self.occupancy();
        if n <= self.servers {
            1.0
        } else {
            f64::from(self.servers) / f64::from(n)
        }
    }

    /// Work delivered to finite jobs so far, in microseconds.
    pub(crate) fn served(&self) -> f64 {
        self.served
    }

    pub(crate) fn advance(&mut self, now: Micros) {
        debug_assert!(now >= self.clock);
        let dt = (now.0 - self.clock.0) as f64;
        if dt > 0.0 && !self.jobs.is_empty() {
            let step = dt * self.rate();
            for rem in self.jobs.values_mut() {
                let d = step.min(*rem);
                *rem -= d;
                self.served += d;
            }
        }
        self.clock = now;
    }

    /// Adds a job; the pool must already be advanced to the current time.
    pub(crate) fn add(&mut self, id: usize, work: Micros) {
        self.jobs.insert(id, work.0 as f64);
    }

    pub(crate) fn remove(&mut self, id: usize) -> Option<f64> {
        self.jobs.remove(&id)
    }

    pub(crate) fn next_completion(&self) -> Option<Micros> {
        let min = self.jobs.values().copied().fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return None;
        }
        if min <= EPS {
            return Some(self.clock);
        }
        let dt = (min / self.rate()).ceil() as u64;
        Some(Micros(self.clock.0 + dt.max(1)))
    }

    /// Removes and returns finished jobs in id order.
    pub(crate) fn take_finished(&mut self) -> Vec<usize> {
        let done: Vec<usize> = self
            .jobs
            .iter()
            .filter(|(_, r)| **r <= EPS)
            .map(|(id, _)| *id)
            .collect();
        for id in &done {
            self.jobs.remove(id);
        }
        done
    }
}
