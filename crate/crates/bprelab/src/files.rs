//! CSV side tables and the binary trajectory dump.

use std::io::{self, Read, Write};

use bprelab_core::simulate::SimPlan;
use bprelab_core::{LpEstimate, MomentTable, ReplicaStatus, SimConfig, TrajectoryBatch};

const DUMP_MAGIC: &[u8; 8] = b"BPRETRJ\0";
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a trajectory dump (bad magic bytes)")]
    BadMagic,
    #[error("unsupported dump version {0}, expected {DUMP_VERSION}")]
    Version(u32),
    #[error("corrupt dump: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] bprelab_core::Error),
}

fn status_fields(s: ReplicaStatus) -> (&'static str, Option<usize>) {
    match s {
        ReplicaStatus::Completed => ("completed", None),
        ReplicaStatus::Extinct { at } => ("extinct", Some(at)),
        ReplicaStatus::Capped { at } => ("capped", Some(at)),
    }
}

/// `replica,n,W,status` rows, one per replica and generation.
pub fn trajectories_csv(batch: &TrajectoryBatch) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replica", "n", "W", "status"])?;
    for i in 0..batch.replicas() {
        let (tag, at) = status_fields(batch.status(i));
        let status = match at {
            Some(at) => format!("{tag}@{at}"),
            None => tag.to_string(),
        };
        for (n, x) in batch.w(i).iter().enumerate() {
            w.write_record([i.to_string(), n.to_string(), x.to_string(), status.clone()])?;
        }
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// `n,j,value` rows of a moment table.
pub fn moments_csv(table: &MomentTable) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "j", "value"])?;
    for (n, j, v) in table.entries() {
        w.write_record([n.to_string(), j.to_string(), v.to_string()])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// `p,n,value,stderr` rows.
pub fn estimates_csv(estimates: &[LpEstimate]) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["p", "n", "value", "stderr"])?;
    for e in estimates {
        w.write_record([e.p.to_string(), e.n.to_string(), e.value.to_string(), e.stderr.to_string()])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// Layout (little endian): magic, `u32` version, `u64` length and JSON of
/// the simulation config, `u64` replica count, then the `W` column, the
/// `Ahat` column, and one `(u8 tag, u64 generation)` status per replica.
pub fn write_dump<W: Write>(batch: &TrajectoryBatch, out: &mut W) -> Result<(), DumpError> {
    let header = serde_json::to_vec(batch.config()).map_err(|e| DumpError::Corrupt(e.to_string()))?;
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    out.write_all(&(batch.replicas() as u64).to_le_bytes())?;
    for x in batch.w_column().iter().chain(batch.a_hat_column()) {
        out.write_all(&x.to_le_bytes())?;
    }
    for &s in batch.statuses() {
        let (tag, at) = match s {
            ReplicaStatus::Completed => (0u8, 0usize),
            ReplicaStatus::Extinct { at } => (1, at),
            ReplicaStatus::Capped { at } => (2, at),
        };
        out.write_all(&[tag])?;
        out.write_all(&(at as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn dump_bytes(batch: &TrajectoryBatch) -> Result<Vec<u8>, DumpError> {
    let mut out = Vec::new();
    write_dump(batch, &mut out)?;
    Ok(out)
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> io::Result<Vec<f64>> {
    let mut raw = vec![0u8; count * 8];
    r.read_exact(&mut raw)?;
    Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

/// Reads a dump back into a batch. The shared quenched path is rebuilt
/// from the stored config, which determines it.
pub fn read_dump<R: Read>(input: &mut R) -> Result<TrajectoryBatch, DumpError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(DumpError::BadMagic);
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != DUMP_VERSION {
        return Err(DumpError::Version(version));
    }
    let header_len = usize::try_from(read_u64(input)?).map_err(|_| DumpError::Corrupt("header too large".into()))?;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let config: SimConfig = serde_json::from_slice(&header).map_err(|e| DumpError::Corrupt(e.to_string()))?;
    let replicas = read_u64(input)? as usize;
    if replicas != config.replicas {
        return Err(DumpError::Corrupt(format!("{replicas} replicas stored, config says {}", config.replicas)));
    }
    let w = read_f64s(input, replicas * (config.n_max + 1))?;
    let a_hat = read_f64s(input, replicas * config.n_max * config.rho_grid.len())?;
    let mut status = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let at = read_u64(input)? as usize;
        status.push(match tag[0] {
            0 => ReplicaStatus::Completed,
            1 => ReplicaStatus::Extinct { at },
            2 => ReplicaStatus::Capped { at },
            t => return Err(DumpError::Corrupt(format!("unknown status tag {t}"))),
        });
    }
    let shared_path = SimPlan::new(config.clone())?.shared_path().cloned();
    Ok(TrajectoryBatch::from_raw_parts(config, shared_path, w, a_hat, status)?)
}
