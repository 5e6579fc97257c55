//! Measurement records: `timestamp,bus,v,i,phase_offset,p,q`.
//!
//! Rows whose bus is `primary` are transformer-primary snapshots and need
//! `v`, `i` and `phase_offset`. Rows with a numeric bus id are load
//! snapshots and need `v`, `p` and `q`. Unused fields may be left empty.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimation::{LoadSnapshot, MeasurementSnapshot};

#[derive(Debug, Deserialize)]
struct Row {
    timestamp: f64,
    bus: String,
    v: f64,
    i: Option<f64>,
    phase_offset: Option<f64>,
    p: Option<f64>,
    q: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Measurements {
    pub primary: Vec<MeasurementSnapshot>,
    /// Keyed by bus id, in file order.
    pub loads: BTreeMap<usize, Vec<LoadSnapshot>>,
}

pub fn read_measurements<R: Read>(r: R, context: &str) -> Result<Measurements> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Measurements::default();
    for (k, row) in rd.deserialize::<Row>().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| Error::Parse {
            context: context.to_string(),
            message: e.to_string(),
        })?;
        let missing = |field: &str| Error::Parse {
            context: context.to_string(),
            message: format!("line {line}: field '{field}' is required for bus '{}'", row.bus),
        };
        if !(row.v > 0.0) {
            return Err(Error::validation(format!("{context} line {line}: voltage must be positive")));
        }
        if row.bus.eq_ignore_ascii_case("primary") {
            let i = row.i.ok_or_else(|| missing("i"))?;
            let phi = row.phase_offset.ok_or_else(|| missing("phase_offset"))?;
            out.primary.push(MeasurementSnapshot::from_magnitudes(row.v, i, phi, row.timestamp));
        } else {
            let id = row.bus.parse::<usize>().map_err(|_| Error::Parse {
                context: context.to_string(),
                message: format!("line {line}: bus '{}' is neither 'primary' nor a bus id", row.bus),
            })?;
            let p = row.p.ok_or_else(|| missing("p"))?;
            let q = row.q.ok_or_else(|| missing("q"))?;
            out.loads.entry(id).or_default().push(LoadSnapshot {
                p,
                q,
                v: row.v,
                timestamp: row.timestamp,
            });
        }
    }
    let ordered = |ts: &mut dyn Iterator<Item = f64>| {
        let ts: Vec<f64> = ts.collect();
        ts.windows(2).all(|w| w[0] <= w[1])
    };
    if !ordered(&mut out.primary.iter().map(|s| s.timestamp))
        || !out.loads.values().all(|v| ordered(&mut v.iter().map(|s| s.timestamp)))
    {
        return Err(Error::validation(format!("{context}: snapshots must be time-ordered")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primary_and_load_rows_split() {
        let text = "timestamp,bus,v,i,phase_offset,p,q\n\
                    0,primary,1.0,0.5,-0.3,,\n\
                    1,primary,0.99,0.6,-0.2,,\n\
                    0,14,0.97,,,0.1,0.05\n";
        let m = read_measurements(text.as_bytes(), "m.csv").unwrap();
        assert_eq!(m.primary.len(), 2);
        assert_eq!(m.primary[1].phase_offset, -0.2);
        assert_eq!(m.loads[&14][0].q, 0.05);
    }

    #[test]
    fn bad_rows_are_reported() {
        let missing = "timestamp,bus,v,i,phase_offset,p,q\n0,primary,1.0,,0.1,,\n";
        match read_measurements(missing.as_bytes(), "m.csv") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("line 2"), "{message}"),
            other => panic!("{other:?}"),
        }
        let unordered = "timestamp,bus,v,i,phase_offset,p,q\n1,primary,1.0,1,0,,\n0,primary,1.0,1,0,,\n";
        assert!(matches!(read_measurements(unordered.as_bytes(), "m.csv"), Err(Error::Validation(_))));
        let junk = "timestamp,bus,v,i,phase_offset,p,q\n0,feeder,1.0,1,0,,\n";
        assert!(matches!(read_measurements(junk.as_bytes(), "m.csv"), Err(Error::Parse { .. })));
    }
}
