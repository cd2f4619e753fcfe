use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::river_world::Pose;

use super::Outcome;

/// One JSON-lines record per environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub pose: Pose,
    pub action: [usize; 4],
    pub reward: f64,
    pub cost: f64,
    pub outcome: Outcome,
}

pub fn write_trace<W: Write>(mut w: W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_trace<R: BufRead>(r: R) -> std::io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_roundtrip() {
        let recs = vec![TraceRecord {
            step: 1,
            pose: Pose::new(1.0, 2.0, 3.0, 0.5),
            action: [1, 2, 0, 1],
            reward: 0.25,
            cost: 0.0,
            outcome: Outcome::Running,
        }];
        let mut buf = Vec::new();
        write_trace(&mut buf, &recs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(read_trace(&buf[..]).unwrap(), recs);
    }
}
