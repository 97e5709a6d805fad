//! JSON-lines trace files: one [`TraceEvent`] per line.

use std::io::{self, BufRead, Write};

use super::TraceEvent;

pub fn write_trace_jsonl<W: Write>(mut out: W, events: &[TraceEvent]) -> io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl<R: BufRead>(input: R) -> io::Result<Vec<TraceEvent>> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line)?);
    }
    Ok(events)
}
