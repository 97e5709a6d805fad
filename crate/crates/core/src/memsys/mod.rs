//! Three-level inclusive cache hierarchy with a flat-latency DRAM.
//!
//! Each core (main thread and look-ahead thread) owns a private L1D and L2;
//! the L3 and DRAM are shared. The model tracks tags and timing only: data
//! values live in the engine's architectural state. Lines carry a
//! `ready_at` cycle so that accesses to in-flight fills (including late
//! prefetches) pay the remaining latency instead of a fresh miss.

mod cache;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cache::{Cache, Evicted};

/// One cache level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub size_bytes: u64,
    pub assoc: u32,
    pub line_size: u64,
    pub hit_latency: u64,
    /// Outstanding demand misses the level can track.
    pub mshrs: u32,
}

impl LevelConfig {
    fn sets(&self) -> u64 {
        self.size_bytes / (self.line_size * self.assoc as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub l1: LevelConfig,
    pub l2: LevelConfig,
    pub l3: LevelConfig,
    pub dram_latency: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        let level = |size_bytes, assoc, hit_latency| LevelConfig {
            size_bytes,
            assoc,
            line_size: 64,
            hit_latency,
            mshrs: 32,
        };
        CacheConfig {
            l1: level(32 << 10, 4, 3),
            l2: level(256 << 10, 8, 9),
            l3: level(2 << 20, 16, 36),
            dram_latency: 200,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheConfigError {
    #[error("{level}: line sizes differ across levels")]
    LineSizeMismatch { level: &'static str },
    #[error("{level}: {what}")]
    Geometry { level: &'static str, what: String },
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheConfigError> {
        let line = self.l1.line_size;
        for (level, c) in [("l1", &self.l1), ("l2", &self.l2), ("l3", &self.l3)] {
            let geo = |what: String| CacheConfigError::Geometry { level, what };
            if c.line_size != line {
                return Err(CacheConfigError::LineSizeMismatch { level });
            }
            if c.line_size == 0 || !c.line_size.is_power_of_two() {
                return Err(geo(format!("line size {} is not a power of two", c.line_size)));
            }
            if c.assoc == 0 || c.mshrs == 0 {
                return Err(geo("associativity and mshrs must be positive".into()));
            }
            if c.size_bytes % c.line_size != 0 || !(c.size_bytes / c.line_size).is_power_of_two() {
                return Err(geo(format!(
                    "size {} is not a power-of-two multiple of the line size",
                    c.size_bytes
                )));
            }
            let sets = c.sets();
            if sets == 0 || sets * c.line_size * c.assoc as u64 != c.size_bytes {
                return Err(geo(format!(
                    "size {} not divisible into {}-way sets",
                    c.size_bytes, c.assoc
                )));
            }
        }
        Ok(())
    }

    /// Latency of an access that misses every level.
    pub fn cold_latency(&self) -> u64 {
        self.l1.hit_latency + self.l2.hit_latency + self.l3.hit_latency + self.dram_latency
    }

    pub fn level_latency(&self, level: HitLevel) -> u64 {
        match level {
            HitLevel::L1 => self.l1.hit_latency,
            HitLevel::L2 => self.l1.hit_latency + self.l2.hit_latency,
            HitLevel::L3 => self.l1.hit_latency + self.l2.hit_latency + self.l3.hit_latency,
            HitLevel::Dram => self.cold_latency(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Load,
    Store,
    Prefetch,
}

/// Which core issues the access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mt,
    Lt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitLevel {
    L1,
    L2,
    L3,
    Dram,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessResult {
    /// Cycles until the data is available to the requester.
    pub latency: u64,
    pub hit_level: HitLevel,
    /// The demand access found a line brought in by a prefetch.
    pub was_prefetched: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub mpki: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoreMemStats {
    pub l1: LevelStats,
    pub l2: LevelStats,
    pub prefetch_issued: u64,
    /// Demand hits on prefetched lines whose fill had completed.
    pub prefetch_useful: u64,
    /// Demand accesses that merged with a prefetch still in flight.
    pub prefetch_late: u64,
    /// Prefetches for lines already present in L1.
    pub prefetch_redundant: u64,
    /// Cycles demand misses waited for a free MSHR.
    pub mshr_stall_cycles: u64,
    /// Dirty lines dropped on eviction instead of being written back.
    pub dirty_discards: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemStats {
    pub mt: CoreMemStats,
    pub lt: CoreMemStats,
    pub l3: LevelStats,
    pub dram_reads: u64,
    pub writebacks: u64,
    /// Line transfers across the DRAM interface (reads plus writebacks).
    pub traffic_lines: u64,
}

struct Private {
    l1: Cache,
    l2: Cache,
    /// Completion cycles of outstanding demand misses.
    outstanding: Vec<u64>,
    stats: CoreMemStats,
}

impl Private {
    fn new(cfg: &CacheConfig) -> Self {
        Private {
            l1: Cache::new(cfg.l1.sets(), cfg.l1.assoc as usize),
            l2: Cache::new(cfg.l2.sets(), cfg.l2.assoc as usize),
            outstanding: Vec::new(),
            stats: CoreMemStats::default(),
        }
    }
}

/// The cache hierarchy shared by the two cores of one simulation.
pub struct MemSystem {
    cfg: CacheConfig,
    cores: [Private; 2],
    l3: Cache,
    l3_stats: LevelStats,
    dram_reads: u64,
    writebacks: u64,
}

fn idx(mode: Mode) -> usize {
    match mode {
        Mode::Mt => 0,
        Mode::Lt => 1,
    }
}

impl MemSystem {
    pub fn new(cfg: CacheConfig) -> Result<Self, CacheConfigError> {
        cfg.validate()?;
        Ok(MemSystem {
            cores: [Private::new(&cfg), Private::new(&cfg)],
            l3: Cache::new(cfg.l3.sets(), cfg.l3.assoc as usize),
            cfg,
            l3_stats: LevelStats::default(),
            dram_reads: 0,
            writebacks: 0,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn line_of(&self, addr: i64) -> u64 {
        debug_assert!(addr >= 0);
        addr as u64 / self.cfg.l1.line_size
    }

    /// True if the line holding `addr` is in `mode`'s L1 (possibly in flight).
    pub fn in_l1(&self, mode: Mode, addr: i64) -> bool {
        self.cores[idx(mode)].l1.contains(self.line_of(addr))
    }

    /// Performs one access at cycle `now`.
    pub fn access(&mut self, addr: i64, kind: AccessKind, mode: Mode, now: u64) -> AccessResult {
        assert!(addr >= 0, "negative address {addr}");
        let line = self.line_of(addr);
        let c = idx(mode);
        let demand = kind != AccessKind::Prefetch;
        let store = kind == AccessKind::Store;

        if kind == AccessKind::Prefetch {
            self.cores[c].stats.prefetch_issued += 1;
            if self.cores[c].l1.contains(line) {
                self.cores[c].stats.prefetch_redundant += 1;
                return AccessResult {
                    latency: self.cfg.l1.hit_latency,
                    hit_level: HitLevel::L1,
                    was_prefetched: false,
                };
            }
        }

        // L1
        if demand {
            self.cores[c].stats.l1.accesses += 1;
        }
        if let Some(l) = self.cores[c].l1.touch(line) {
            let l = *l;
            if demand {
                self.cores[c].stats.l1.hits += 1;
            }
            let was_prefetched = demand && l.prefetched;
            if was_prefetched {
                self.note_prefetch_use(c, l.ready_at, now);
                let l1 = self.cores[c].l1.get_mut(line).unwrap();
                l1.prefetched = false;
            }
            if store {
                self.mark_dirty_l1(c, line);
            }
            let latency = self.cfg.l1.hit_latency.max(l.ready_at.saturating_sub(now));
            return AccessResult {
                latency,
                hit_level: HitLevel::L1,
                was_prefetched,
            };
        }
        if demand {
            self.cores[c].stats.l1.misses += 1;
        }

        // A demand miss needs an MSHR; prefetches are not limited by them.
        let mut start = now;
        if demand {
            let core = &mut self.cores[c];
            core.outstanding.retain(|&t| t > now);
            if core.outstanding.len() >= self.cfg.l1.mshrs as usize {
                let earliest = *core.outstanding.iter().min().unwrap();
                core.stats.mshr_stall_cycles += earliest - now;
                start = earliest;
                let pos = core.outstanding.iter().position(|&t| t == earliest).unwrap();
                core.outstanding.swap_remove(pos);
            }
        }

        // L2, L3, DRAM
        let mut was_prefetched = false;
        let mut pending_until = 0;
        if demand {
            self.cores[c].stats.l2.accesses += 1;
        }
        let hit_level = if let Some(l) = self.cores[c].l2.touch(line).copied() {
            if demand {
                self.cores[c].stats.l2.hits += 1;
                if l.prefetched {
                    was_prefetched = true;
                    self.note_prefetch_use(c, l.ready_at, start);
                    self.cores[c].l2.get_mut(line).unwrap().prefetched = false;
                }
            }
            pending_until = l.ready_at;
            HitLevel::L2
        } else {
            if demand {
                self.cores[c].stats.l2.misses += 1;
                self.l3_stats.accesses += 1;
            }
            if let Some(l) = self.l3.touch(line).copied() {
                if demand {
                    self.l3_stats.hits += 1;
                    if l.prefetched {
                        was_prefetched = true;
                        self.note_prefetch_use(c, l.ready_at, start);
                        self.l3.get_mut(line).unwrap().prefetched = false;
                    }
                }
                pending_until = l.ready_at;
                HitLevel::L3
            } else {
                if demand {
                    self.l3_stats.misses += 1;
                }
                self.dram_reads += 1;
                HitLevel::Dram
            }
        };
        let latency = (start - now)
            + self
                .cfg
                .level_latency(hit_level)
                .max(pending_until.saturating_sub(start));
        let ready_at = now + latency;
        let prefetched = !demand;

        if hit_level == HitLevel::Dram {
            self.fill_l3(line, ready_at, prefetched);
        }
        if hit_level >= HitLevel::L3 {
            self.fill_l2(c, line, ready_at, prefetched);
        }
        self.fill_l1(c, line, ready_at, prefetched);
        if store {
            self.mark_dirty_l1(c, line);
        }
        if demand {
            self.cores[c].outstanding.push(ready_at);
        }
        AccessResult {
            latency,
            hit_level,
            was_prefetched,
        }
    }

    fn note_prefetch_use(&mut self, c: usize, ready_at: u64, now: u64) {
        if ready_at > now {
            self.cores[c].stats.prefetch_late += 1;
        } else {
            self.cores[c].stats.prefetch_useful += 1;
        }
    }

    fn mark_dirty_l1(&mut self, c: usize, line: u64) {
        if let Some(l) = self.cores[c].l1.get_mut(line) {
            l.dirty = true;
        }
    }

    fn fill_l1(&mut self, c: usize, line: u64, ready_at: u64, prefetched: bool) {
        if let Some(ev) = self.cores[c].l1.insert(line, ready_at, prefetched) {
            if ev.dirty {
                // Inclusion guarantees the line is still in L2.
                if let Some(l) = self.cores[c].l2.get_mut(ev.line) {
                    l.dirty = true;
                }
            }
        }
    }

    fn fill_l2(&mut self, c: usize, line: u64, ready_at: u64, prefetched: bool) {
        if let Some(ev) = self.cores[c].l2.insert(line, ready_at, prefetched) {
            let dirty = ev.dirty | self.cores[c].l1.invalidate(ev.line).unwrap_or(false);
            self.retire_private_dirty(c, ev.line, dirty);
        }
    }

    fn fill_l3(&mut self, line: u64, ready_at: u64, prefetched: bool) {
        if let Some(Evicted { line: victim, dirty }) = self.l3.insert(line, ready_at, prefetched) {
            let mut dirty = dirty;
            for c in 0..2 {
                let d1 = self.cores[c].l1.invalidate(victim).unwrap_or(false);
                let d2 = self.cores[c].l2.invalidate(victim).unwrap_or(false);
                if d1 || d2 {
                    if c == idx(Mode::Lt) {
                        self.cores[c].stats.dirty_discards += 1;
                    } else {
                        dirty = true;
                    }
                }
            }
            if dirty {
                self.writebacks += 1;
            }
        }
    }

    /// A dirty line leaving a core's private levels: the main thread writes it
    /// into the L3, the look-ahead thread drops it.
    fn retire_private_dirty(&mut self, c: usize, line: u64, dirty: bool) {
        if !dirty {
            return;
        }
        if c == idx(Mode::Lt) {
            self.cores[c].stats.dirty_discards += 1;
        } else if let Some(l) = self.l3.get_mut(line) {
            l.dirty = true;
        }
    }

    /// Statistics, with MPKI computed against `instructions` committed instructions.
    pub fn stats(&self, mt_instructions: u64, lt_instructions: u64) -> MemStats {
        let mpki = |s: LevelStats, n: u64| LevelStats {
            mpki: if n == 0 {
                0.0
            } else {
                s.misses as f64 * 1000.0 / n as f64
            },
            ..s
        };
        let core = |c: usize, n: u64| {
            let s = &self.cores[c].stats;
            CoreMemStats {
                l1: mpki(s.l1, n),
                l2: mpki(s.l2, n),
                ..s.clone()
            }
        };
        MemStats {
            mt: core(0, mt_instructions),
            lt: core(1, lt_instructions),
            l3: mpki(self.l3_stats, mt_instructions),
            dram_reads: self.dram_reads,
            writebacks: self.writebacks,
            traffic_lines: self.dram_reads + self.writebacks,
        }
    }
}
