//! Branch outcome queue (BOQ) and footnote queue (FQ) between the threads.
//!
//! The look-ahead thread pushes one BOQ entry per committed conditional
//! branch and attaches footnotes (prefetch addresses, values, branch
//! targets) to the most recent entry still in the queue. The main thread
//! pops entries in order and receives the footnotes with them.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoqEntry {
    /// Push order; unique for the lifetime of a run.
    pub tag: u64,
    pub taken: bool,
    pub has_footnotes: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FootnoteKind {
    PrefetchAddr { addr: i64 },
    ReuseValue { value: i64, offset: u32, pc: usize },
    BranchTarget { pc: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footnote {
    pub tag: u64,
    pub kind: FootnoteKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attach {
    Queued,
    /// No unread BOQ entry to attach to; the footnote is dropped.
    NoEntry,
    /// The FQ is full; the producer must retry later.
    Full,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueStats {
    pub boq_pushed: u64,
    pub boq_consumed: u64,
    pub boq_flushed: u64,
    pub boq_max_depth: u64,
    pub fq_pushed: u64,
    pub fq_consumed: u64,
    pub fq_flushed: u64,
    pub fq_dropped_no_entry: u64,
    pub fq_max_depth: u64,
}

#[derive(Clone, Debug)]
pub struct Channel {
    boq: VecDeque<BoqEntry>,
    fq: VecDeque<Footnote>,
    boq_capacity: usize,
    fq_capacity: usize,
    next_tag: u64,
    pub stats: QueueStats,
}

impl Channel {
    pub fn new(boq_capacity: usize, fq_capacity: usize) -> Self {
        Channel {
            boq: VecDeque::with_capacity(boq_capacity),
            fq: VecDeque::with_capacity(fq_capacity),
            boq_capacity,
            fq_capacity,
            next_tag: 0,
            stats: QueueStats::default(),
        }
    }

    pub fn boq_len(&self) -> usize {
        self.boq.len()
    }

    pub fn fq_len(&self) -> usize {
        self.fq.len()
    }

    pub fn boq_capacity(&self) -> usize {
        self.boq_capacity
    }

    pub fn fq_capacity(&self) -> usize {
        self.fq_capacity
    }

    pub fn boq_full(&self) -> bool {
        self.boq.len() >= self.boq_capacity
    }

    /// Appends a branch outcome and returns its tag.
    ///
    /// # Panics
    /// If the BOQ is full; producers reserve space before fetching.
    pub fn push_branch(&mut self, taken: bool) -> u64 {
        assert!(!self.boq_full(), "BOQ overflow");
        let tag = self.next_tag;
        self.next_tag += 1;
        self.boq.push_back(BoqEntry {
            tag,
            taken,
            has_footnotes: false,
        });
        self.stats.boq_pushed += 1;
        self.stats.boq_max_depth = self.stats.boq_max_depth.max(self.boq.len() as u64);
        tag
    }

    /// Attaches a footnote to the youngest unread BOQ entry.
    pub fn attach(&mut self, kind: FootnoteKind) -> Attach {
        let Some(tail) = self.boq.back_mut() else {
            self.stats.fq_dropped_no_entry += 1;
            return Attach::NoEntry;
        };
        if self.fq.len() >= self.fq_capacity {
            return Attach::Full;
        }
        tail.has_footnotes = true;
        self.fq.push_back(Footnote { tag: tail.tag, kind });
        self.stats.fq_pushed += 1;
        self.stats.fq_max_depth = self.stats.fq_max_depth.max(self.fq.len() as u64);
        Attach::Queued
    }

    /// Pops the oldest branch outcome with its footnotes.
    pub fn pop_branch(&mut self, footnotes: &mut Vec<Footnote>) -> Option<BoqEntry> {
        let e = self.boq.pop_front()?;
        self.stats.boq_consumed += 1;
        while let Some(f) = self.fq.front() {
            if f.tag > e.tag {
                break;
            }
            let f = self.fq.pop_front().expect("non-empty");
            self.stats.fq_consumed += 1;
            if f.tag == e.tag {
                footnotes.push(f);
            }
        }
        Some(e)
    }

    /// Discards everything in flight (reboot).
    pub fn flush(&mut self) {
        self.stats.boq_flushed += self.boq.len() as u64;
        self.stats.fq_flushed += self.fq.len() as u64;
        self.boq.clear();
        self.fq.clear();
    }

    /// `pushed - consumed - flushed == depth` for both queues.
    pub fn check_depth_law(&self) -> Result<(), String> {
        let s = &self.stats;
        let boq = s.boq_pushed as i128 - s.boq_consumed as i128 - s.boq_flushed as i128;
        if boq != self.boq.len() as i128 || self.boq.len() > self.boq_capacity {
            return Err(format!(
                "BOQ depth {} but pushed {} consumed {} flushed {}",
                self.boq.len(),
                s.boq_pushed,
                s.boq_consumed,
                s.boq_flushed
            ));
        }
        let fq = s.fq_pushed as i128 - s.fq_consumed as i128 - s.fq_flushed as i128;
        if fq != self.fq.len() as i128 || self.fq.len() > self.fq_capacity {
            return Err(format!(
                "FQ depth {} but pushed {} consumed {} flushed {}",
                self.fq.len(),
                s.fq_pushed,
                s.fq_consumed,
                s.fq_flushed
            ));
        }
        Ok(())
    }
}
