//! Line-oriented text form of a sample path.
//!
//! ```text
//! # poswitch sample path
//! SEED 7
//! PATH 0
//! MODEL 3f2a...
//! HORIZON 1
//! POLICY0 0
//! CHAIN 0 1
//! ARRIVAL 0.137 0
//! SWITCH 0.2 0 1 flow
//! PAYOFF 0.61
//! ```
//!
//! Events are sorted by time; states, marks and policies are zero-based.
//! Numbers use the shortest representation that reads back exactly.

use std::fmt::Write as _;

use super::{SamplePath, SimError, SwitchRecord, SystemPath};
use crate::filter::Arrival;
use crate::Scalar;

/// Identification written at the top of a path file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathHeader {
    pub seed: u64,
    pub index: u64,
    pub model_hash: String,
}

pub fn write_path<T: Scalar>(header: &PathHeader, path: &SamplePath<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# poswitch sample path");
    let _ = writeln!(s, "SEED {}", header.seed);
    let _ = writeln!(s, "PATH {}", header.index);
    let _ = writeln!(s, "MODEL {}", header.model_hash);
    let _ = writeln!(s, "HORIZON {}", path.system.horizon);
    let _ = writeln!(s, "POLICY0 {}", path.initial_policy);

    let mut events: Vec<(T, u8, String)> = Vec::new();
    for &(t, state) in &path.system.chain {
        events.push((t, 0, format!("CHAIN {t} {state}")));
    }
    for a in &path.system.arrivals {
        events.push((a.time, 1, format!("ARRIVAL {} {}", a.time, a.mark)));
    }
    for sw in &path.switches {
        let kind = if sw.at_arrival { "arrival" } else { "flow" };
        events.push((sw.time, 2, format!("SWITCH {} {} {} {kind}", sw.time, sw.from, sw.to)));
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for (_, _, line) in events {
        s.push_str(&line);
        s.push('\n');
    }
    let _ = writeln!(s, "PAYOFF {}", path.payoff);
    s
}

/// Parses [`write_path`] output. Beliefs are not stored in the file and come
/// back empty.
pub fn parse_path<T: Scalar>(text: &str) -> Result<(PathHeader, SamplePath<T>), SimError> {
    let err = |line: usize, msg: &str| SimError::Input(format!("path file line {}: {msg}", line + 1));
    let mut header = PathHeader { seed: 0, index: 0, model_hash: String::new() };
    let mut path = SamplePath {
        seed: 0,
        index: 0,
        initial_policy: 0,
        system: SystemPath { chain: vec![], arrivals: vec![], horizon: T::zero() },
        beliefs: vec![],
        switches: vec![],
        payoff: T::zero(),
    };
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<T, SimError> {
            f.get(i).and_then(|s| s.parse::<f64>().ok()).map(T::of).ok_or_else(|| err(n, "bad number"))
        };
        let int = |i: usize| -> Result<u64, SimError> {
            f.get(i).and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| err(n, "bad integer"))
        };
        match f[0] {
            "SEED" => header.seed = int(1)?,
            "PATH" => header.index = int(1)?,
            "MODEL" => header.model_hash = f.get(1).unwrap_or(&"").to_string(),
            "HORIZON" => path.system.horizon = num(1)?,
            "POLICY0" => path.initial_policy = int(1)? as usize,
            "CHAIN" => path.system.chain.push((num(1)?, int(2)? as usize)),
            "ARRIVAL" => path.system.arrivals.push(Arrival { time: num(1)?, mark: int(2)? as usize }),
            "SWITCH" => path.switches.push(SwitchRecord {
                time: num(1)?,
                from: int(2)? as usize,
                to: int(3)? as usize,
                at_arrival: f.get(4) == Some(&"arrival"),
            }),
            "PAYOFF" => path.payoff = num(1)?,
            other => return Err(err(n, &format!("unknown record '{other}'"))),
        }
    }
    path.seed = header.seed;
    path.index = header.index;
    Ok((header, path))
}
