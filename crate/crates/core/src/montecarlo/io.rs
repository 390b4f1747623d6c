//! `WLK1` path traces, one file per path.
//!
//! ```text
//! b"WLK1" | u32 version=1 | u32 d | u64 path id
//! records until EOF: f64 time | d x i64 unwrapped cell
//! ```
//!
//! The first record is the start at time 0; every further record is a jump.

use std::io::{ErrorKind, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::walk::{SegmentVisitor, WalkEnsemble};
use crate::environment::io::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::grid::MAX_DIM;

pub const WALK_MAGIC: &[u8; 4] = b"WLK1";

#[derive(Clone, Debug, PartialEq)]
pub struct PathTrace {
    pub d: usize,
    pub path_id: u64,
    pub times: Vec<f64>,
    pub cells: Vec<Vec<i64>>,
}

struct TraceWriter<'a, W: Write> {
    w: &'a mut W,
    d: usize,
    err: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<'_, W> {
    fn put(&mut self, t: f64, pos: &[i64; MAX_DIM]) {
        if self.err.is_some() {
            return;
        }
        let mut go = || -> std::io::Result<()> {
            self.w.write_f64::<LittleEndian>(t)?;
            for v in &pos[..self.d] {
                self.w.write_i64::<LittleEndian>(*v)?;
            }
            Ok(())
        };
        if let Err(e) = go() {
            self.err = Some(e);
        }
    }
}

impl<W: Write> SegmentVisitor for TraceWriter<'_, W> {
    fn segment(&mut self, _: usize, _: &[i64; MAX_DIM], _: f64, _: f64) {}

    fn jump(&mut self, t: f64, to: &[i64; MAX_DIM]) {
        self.put(t, to);
    }
}

/// Streams the full trajectory of path `index` by replaying it.
pub fn write_path<W: Write>(w: &mut W, ensemble: &WalkEnsemble, index: usize) -> Result<()> {
    let sample = ensemble
        .paths
        .get(index)
        .ok_or_else(|| Error::Range(format!("no path {index}")))?;
    let d = ensemble.dim();
    w.write_all(WALK_MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_u64::<LittleEndian>(index as u64)?;
    let mut tw = TraceWriter { w, d, err: None };
    tw.put(0.0, &sample.positions[0]);
    ensemble.replay(index, &mut tw);
    match tw.err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn read_path<R: Read>(r: &mut R) -> Result<PathTrace> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WALK_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected WLK1",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let d = r.read_u32::<LittleEndian>()? as usize;
    if d == 0 || d > MAX_DIM {
        return Err(Error::Format(format!("dimension {d} out of range")));
    }
    let path_id = r.read_u64::<LittleEndian>()?;
    let mut trace = PathTrace {
        d,
        path_id,
        times: Vec::new(),
        cells: Vec::new(),
    };
    loop {
        let t = match r.read_f64::<LittleEndian>() {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let cell = (0..d)
            .map(|_| r.read_i64::<LittleEndian>())
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|_| Error::Format("truncated record".into()))?;
        trace.times.push(t);
        trace.cells.push(cell);
    }
    Ok(trace)
}

/// Endpoint cloud at record `k`: `path,x0,..,x{d-1}` with displacements in physical units.
pub fn write_endpoints_csv<W: Write>(w: &mut W, ensemble: &WalkEnsemble, k: usize) -> Result<()> {
    if k >= ensemble.times.len() {
        return Err(Error::Range(format!("no record {k}")));
    }
    let d = ensemble.dim();
    let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    writeln!(w, "path,{}", header.join(","))?;
    for (p, x) in ensemble.paths.iter().zip(ensemble.displacements(k)) {
        let cols: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", p.index, cols.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate_field, EnvironmentSpec, Model};
    use crate::montecarlo::{simulate_walk, Start, WalkConfig};

    #[test]
    fn trace_round_trip_matches_records() {
        let f = generate_field(&EnvironmentSpec::new(Model::Identity, 2, 0), 8, 0.125).unwrap();
        let cfg = WalkConfig {
            start: Start::Cell(9),
            t_max: 0.2,
            paths: 3,
            seed: 1,
            record_stride: 0.2,
        };
        let e = simulate_walk(&f, &cfg).unwrap();
        let mut buf = Vec::new();
        write_path(&mut buf, &e, 2).unwrap();
        let trace = read_path(&mut buf.as_slice()).unwrap();
        assert_eq!(trace.path_id, 2);
        assert_eq!(trace.times.len() as u64, e.paths[2].jumps + 1);
        assert_eq!(trace.cells[0], vec![1, 1]);
        let last = &e.paths[2].positions[1];
        assert_eq!(trace.cells.last().unwrap(), &last[..2].to_vec());
        assert!(trace.times.windows(2).all(|w| w[0] < w[1]));
        buf[0] = b'X';
        assert!(matches!(
            read_path(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));

        let mut csv = Vec::new();
        write_endpoints_csv(&mut csv, &e, 1).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    }
}
