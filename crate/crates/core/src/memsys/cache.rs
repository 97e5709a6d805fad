//! One set-associative, LRU-replaced tag array.

#[derive(Clone, Copy, Debug, Default)]
pub(super) struct Line {
    pub line: u64,
    pub valid: bool,
    pub dirty: bool,
    /// Brought in by a prefetch and not yet touched by a demand access.
    pub prefetched: bool,
    pub ready_at: u64,
    stamp: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) struct Evicted {
    pub line: u64,
    pub dirty: bool,
}

pub(super) struct Cache {
    sets: u64,
    ways: usize,
    lines: Vec<Line>,
    clock: u64,
}

impl Cache {
    pub fn new(sets: u64, ways: usize) -> Self {
        Cache {
            sets,
            ways,
            lines: vec![Line::default(); sets as usize * ways],
            clock: 0,
        }
    }

    fn set(&self, line: u64) -> std::ops::Range<usize> {
        let s = (line % self.sets) as usize * self.ways;
        s..s + self.ways
    }

    fn find(&self, line: u64) -> Option<usize> {
        self.set(line)
            .find(|&i| self.lines[i].valid && self.lines[i].line == line)
    }

    pub fn contains(&self, line: u64) -> bool {
        self.find(line).is_some()
    }

    /// Looks the line up and, on a hit, makes it most recently used.
    pub fn touch(&mut self, line: u64) -> Option<&Line> {
        let i = self.find(line)?;
        self.clock += 1;
        self.lines[i].stamp = self.clock;
        Some(&self.lines[i])
    }

    /// Looks the line up without changing recency.
    pub fn get_mut(&mut self, line: u64) -> Option<&mut Line> {
        let i = self.find(line)?;
        Some(&mut self.lines[i])
    }

    /// Installs a clean line as most recently used and returns the victim.
    pub fn insert(&mut self, line: u64, ready_at: u64, prefetched: bool) -> Option<Evicted> {
        self.clock += 1;
        let fresh = Line {
            line,
            valid: true,
            dirty: false,
            prefetched,
            ready_at,
            stamp: self.clock,
        };
        if let Some(i) = self.find(line) {
            let dirty = self.lines[i].dirty;
            self.lines[i] = Line { dirty, ..fresh };
            return None;
        }
        let range = self.set(line);
        let slot = match range.clone().find(|&i| !self.lines[i].valid) {
            Some(i) => i,
            None => range.min_by_key(|&i| self.lines[i].stamp).unwrap(),
        };
        let old = self.lines[slot];
        self.lines[slot] = fresh;
        old.valid.then_some(Evicted {
            line: old.line,
            dirty: old.dirty,
        })
    }

    /// Removes the line; returns its dirty bit if it was present.
    pub fn invalidate(&mut self, line: u64) -> Option<bool> {
        let i = self.find(line)?;
        self.lines[i].valid = false;
        Some(self.lines[i].dirty)
    }
}
