use std::fs::File;
use std::io::Write;
use std::path::Path;

use radial_opf::dica::IterationRecord;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const TRACE_HEADER: [&str; 7] = [
    "iter",
    "region",
    "primal_res",
    "dual_res",
    "local_obj",
    "solver_iters",
    "total_cost",
];

/// One row per (iteration, region), in that order, with a header.
pub fn write_trace_to<W: Write>(records: &[IterationRecord], out: W) -> Result<(), TraceError> {
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for rec in records {
        for r in &rec.regions {
            w.write_record([
                rec.iteration.to_string(),
                r.region.to_string(),
                r.primal_res.to_string(),
                r.dual_res.to_string(),
                r.local_obj.to_string(),
                r.solver_iters.to_string(),
                rec.total_cost.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the trace CSV to `path`. Nothing is created for an empty trace.
pub fn write_trace(records: &[IterationRecord], path: &Path) -> Result<(), TraceError> {
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    write_trace_to(records, File::create(path)?)
}
