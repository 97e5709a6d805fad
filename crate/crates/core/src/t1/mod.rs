//! Strided-prefetch offload engine.
//!
//! A small table driven by instructions carrying the S bit. Each entry walks
//! `Invalid -> Transient1 -> Transient2 -> Steady`: the second instance
//! yields a stride candidate and a few prefetches, the third confirms the
//! stride and launches a catch-up burst up to the prefetch distance
//! `n = ceil(latency / iteration_time)`, and every steady instance at
//! address `A` prefetches `A + n * stride`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct T1Config {
    pub entries: usize,
    /// Prefetches emitted when the first stride candidate is seen.
    pub initial_degree: u32,
    /// Maximum prefetches in one catch-up burst.
    pub max_burst: u32,
    /// Smoothing factor for iteration time and latency estimates.
    pub alpha: f64,
    /// Keep a per-observation log (debug aid; grows without bound).
    pub trace: bool,
}

impl Default for T1Config {
    fn default() -> Self {
        T1Config {
            entries: 16,
            initial_degree: 2,
            max_burst: 8,
            alpha: 0.5,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum T1State {
    Invalid,
    Transient1,
    Transient2,
    Steady,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T1Entry {
    pub pc: usize,
    pub state: T1State,
    pub last_addr: i64,
    pub stride: Option<i64>,
    pub last_cycle: u64,
    pub iter_time: f64,
    pub distance: u32,
    pub loop_pc: Option<usize>,
    lru: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct T1Stats {
    pub observations: u64,
    pub allocations: u64,
    pub evictions: u64,
    pub prefetches: u64,
    pub bursts: u64,
    pub stride_breaks: u64,
    pub loop_clears: u64,
}

/// One row of the debug log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T1Observation {
    pub pc: usize,
    pub addr: i64,
    pub cycle: u64,
    pub state_after: T1State,
    pub stride: Option<i64>,
    pub distance: u32,
    pub prefetches: Vec<i64>,
}

/// Per-pc smoothed memory latency, seeded with a full miss.
#[derive(Clone, Debug)]
pub struct LatencyEstimator {
    seed: f64,
    alpha: f64,
    est: HashMap<usize, f64>,
}

impl LatencyEstimator {
    pub fn new(seed: f64, alpha: f64) -> Self {
        LatencyEstimator {
            seed,
            alpha,
            est: HashMap::new(),
        }
    }

    pub fn get(&self, pc: usize) -> f64 {
        self.est.get(&pc).copied().unwrap_or(self.seed)
    }

    /// Folds in one observed miss latency.
    pub fn update(&mut self, pc: usize, latency: f64) {
        let e = self.est.entry(pc).or_insert(self.seed);
        *e = self.alpha * latency + (1.0 - self.alpha) * *e;
    }
}

#[derive(Clone, Debug)]
pub struct T1 {
    cfg: T1Config,
    entries: Vec<T1Entry>,
    clock: u64,
    pub stats: T1Stats,
    pub log: Vec<T1Observation>,
}

/// `ceil(latency / iteration)`, at least 1.
pub fn prefetch_distance(latency: f64, iter_time: f64) -> u32 {
    let d = (latency / iter_time.max(f64::MIN_POSITIVE)).ceil();
    if d.is_finite() {
        d.clamp(1.0, u32::MAX as f64) as u32
    } else {
        u32::MAX
    }
}

impl T1 {
    pub fn new(cfg: T1Config) -> Self {
        T1 {
            entries: Vec::with_capacity(cfg.entries),
            cfg,
            clock: 0,
            stats: T1Stats::default(),
            log: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[T1Entry] {
        &self.entries
    }

    pub fn entry(&self, pc: usize) -> Option<&T1Entry> {
        self.entries.iter().find(|e| e.pc == pc)
    }

    fn smooth(&self, old: f64, sample: f64) -> f64 {
        self.cfg.alpha * sample + (1.0 - self.cfg.alpha) * old
    }

    /// Feeds one dynamic instance of an S-bit instruction and returns the
    /// addresses to prefetch.
    pub fn observe(
        &mut self,
        pc: usize,
        addr: i64,
        cycle: u64,
        mem_latency_estimate: f64,
        loop_pc: Option<usize>,
    ) -> Vec<i64> {
        self.stats.observations += 1;
        self.clock += 1;
        let clock = self.clock;
        let Some(i) = self.entries.iter().position(|e| e.pc == pc) else {
            self.allocate(pc, addr, cycle, loop_pc);
            return self.logged(pc, addr, cycle, Vec::new());
        };
        let cfg_degree = self.cfg.initial_degree as i64;
        let max_burst = self.cfg.max_burst;
        let e = self.entries[i].clone();
        let delta = addr.wrapping_sub(e.last_addr);
        let interval = cycle.saturating_sub(e.last_cycle) as f64;
        let mut next = T1Entry {
            last_addr: addr,
            last_cycle: cycle,
            lru: clock,
            ..e.clone()
        };
        let mut out = Vec::new();
        match e.state {
            T1State::Invalid | T1State::Transient1 => {
                next.stride = Some(delta);
                next.iter_time = interval;
                next.state = T1State::Transient2;
                if delta != 0 {
                    out.extend((1..=cfg_degree).map(|k| addr.wrapping_add(k * delta)));
                }
            }
            T1State::Transient2 => {
                if Some(delta) == e.stride && delta != 0 {
                    next.iter_time = self.smooth(e.iter_time, interval);
                    let n = prefetch_distance(mem_latency_estimate, next.iter_time);
                    next.distance = n;
                    next.state = T1State::Steady;
                    let burst = n.min(max_burst) as i64;
                    out.extend((1..=burst).map(|k| addr.wrapping_add(k * delta)));
                    if n > max_burst {
                        out.push(addr.wrapping_add(n as i64 * delta));
                    }
                    self.stats.bursts += 1;
                } else {
                    next.stride = Some(delta);
                    next.iter_time = interval;
                }
            }
            T1State::Steady => {
                if Some(delta) == e.stride {
                    next.iter_time = self.smooth(e.iter_time, interval);
                    // Never lowered within a steady episode: a shorter
                    // distance re-requests lines already in flight, and
                    // growing back afterwards skips lines.
                    next.distance = prefetch_distance(mem_latency_estimate, next.iter_time).max(e.distance);
                    out.push(addr.wrapping_add(next.distance as i64 * delta));
                } else {
                    self.stats.stride_breaks += 1;
                    next.state = T1State::Transient1;
                    next.stride = None;
                    next.distance = 0;
                }
            }
        }
        out.retain(|&a| a >= 0);
        self.stats.prefetches += out.len() as u64;
        self.entries[i] = next;
        self.logged(pc, addr, cycle, out)
    }

    fn logged(&mut self, pc: usize, addr: i64, cycle: u64, prefetches: Vec<i64>) -> Vec<i64> {
        if self.cfg.trace {
            let (state_after, stride, distance) = self
                .entry(pc)
                .map_or((T1State::Invalid, None, 0), |e| (e.state, e.stride, e.distance));
            self.log.push(T1Observation {
                pc,
                addr,
                cycle,
                state_after,
                stride,
                distance,
                prefetches: prefetches.clone(),
            });
        }
        prefetches
    }

    fn allocate(&mut self, pc: usize, addr: i64, cycle: u64, loop_pc: Option<usize>) {
        self.stats.allocations += 1;
        let e = T1Entry {
            pc,
            state: T1State::Transient1,
            last_addr: addr,
            stride: None,
            last_cycle: cycle,
            iter_time: 0.0,
            distance: 0,
            loop_pc,
            lru: self.clock,
        };
        if self.entries.len() < self.cfg.entries {
            self.entries.push(e);
        } else if let Some(victim) = self.entries.iter_mut().min_by_key(|e| e.lru) {
            self.stats.evictions += 1;
            *victim = e;
        }
    }

    /// Invalidates the entries owned by a loop that just terminated.
    pub fn loop_end(&mut self, loop_pc: usize) {
        let before = self.entries.len();
        self.entries.retain(|e| e.loop_pc != Some(loop_pc));
        self.stats.loop_clears += (before - self.entries.len()) as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1() -> T1 {
        T1::new(T1Config::default())
    }

    #[test]
    fn steady_distance_grows_but_never_shrinks() {
        let mut t = t1();
        for (k, c) in [0u64, 50, 100].iter().enumerate() {
            t.observe(7, 1000 + 64 * k as i64, *c, 200.0, None);
        }
        assert_eq!(t.entry(7).unwrap().distance, 4);
        // A lower latency estimate keeps the distance.
        assert_eq!(t.observe(7, 1192, 150, 20.0, None), vec![1192 + 4 * 64]);
        // A higher one raises it.
        let out = t.observe(7, 1256, 200, 1000.0, None);
        let n = t.entry(7).unwrap().distance;
        assert!(n > 4);
        assert_eq!(out, vec![1256 + n as i64 * 64]);
    }

    #[test]
    fn stride_and_distance_from_three_instances() {
        let mut t = t1();
        assert!(t.observe(7, 1000, 0, 200.0, None).is_empty());
        assert_eq!(t.entry(7).unwrap().state, T1State::Transient1);
        let first = t.observe(7, 1064, 50, 200.0, None);
        assert_eq!(t.entry(7).unwrap().stride, Some(64));
        assert_eq!(first, vec![1128, 1192]);
        let burst = t.observe(7, 1128, 100, 200.0, None);
        let e = t.entry(7).unwrap();
        assert_eq!(e.state, T1State::Steady);
        assert_eq!(e.distance, 4);
        assert_eq!(burst, vec![1192, 1256, 1320, 1384]);
        let steady = t.observe(7, 1192, 150, 200.0, None);
        assert_eq!(steady, vec![1192 + 4 * 64]);
    }

    #[test]
    fn transient_mismatch_retrains_candidate() {
        let mut t = t1();
        t.observe(1, 0, 0, 100.0, None);
        t.observe(1, 64, 10, 100.0, None);
        assert!(t.observe(1, 100, 20, 100.0, None).is_empty());
        let e = t.entry(1).unwrap();
        assert_eq!(e.state, T1State::Transient2);
        assert_eq!(e.stride, Some(36));
        assert!(!t.observe(1, 136, 30, 100.0, None).is_empty());
        assert_eq!(t.entry(1).unwrap().state, T1State::Steady);
    }

    #[test]
    fn steady_mismatch_restarts() {
        let mut t = t1();
        for (i, a) in [0, 8, 16, 24].into_iter().enumerate() {
            t.observe(3, a, i as u64 * 10, 40.0, None);
        }
        assert_eq!(t.entry(3).unwrap().state, T1State::Steady);
        assert!(t.observe(3, 5000, 50, 40.0, None).is_empty());
        assert_eq!(t.entry(3).unwrap().state, T1State::Transient1);
        assert_eq!(t.stats.stride_breaks, 1);
    }

    #[test]
    fn burst_is_capped() {
        let mut t = t1();
        t.observe(2, 0, 0, 1000.0, None);
        t.observe(2, 64, 1, 1000.0, None);
        let burst = t.observe(2, 128, 2, 1000.0, None);
        let n = t.entry(2).unwrap().distance as i64;
        assert_eq!(n, 1000);
        assert_eq!(burst.len(), 9);
        assert_eq!(*burst.last().unwrap(), 128 + n * 64);
    }

    #[test]
    fn loop_end_clears_owned_entries_only() {
        let mut t = t1();
        t.observe(10, 0, 0, 100.0, Some(20));
        t.observe(11, 0, 0, 100.0, Some(30));
        t.loop_end(20);
        assert!(t.entry(10).is_none());
        assert!(t.entry(11).is_some());
        assert!(t.observe(10, 64, 5, 100.0, Some(20)).is_empty());
        assert_eq!(t.entry(10).unwrap().state, T1State::Transient1);
    }

    #[test]
    fn capacity_is_bounded_with_lru_eviction() {
        let mut t = t1();
        for pc in 0..40 {
            t.observe(pc, 0, pc as u64, 100.0, None);
            assert!(t.entries().len() <= 16);
        }
        assert_eq!(t.stats.evictions, 24);
        assert!(t.entry(39).is_some() && t.entry(0).is_none());
    }

    #[test]
    fn latency_estimator_smooths() {
        let mut l = LatencyEstimator::new(248.0, 0.5);
        assert_eq!(l.get(1), 248.0);
        l.update(1, 48.0);
        assert_eq!(l.get(1), 148.0);
    }
}
