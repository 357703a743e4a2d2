//! Rating files and the binary dataset snapshot.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use cfrl_core::dataset::{parse_ratings, RatingDataset, RatingFormat, RatingRecord, MOVIELENS_MIN_USER_RATINGS};

use crate::binio::{read_header, write_header, Reader, Writer};
use crate::IoError;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"CFRLDS\0\0";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Reads a MovieLens ratings file and checks the per-user rating minimum.
pub fn load_ratings(path: &Path, format: RatingFormat, min_user_ratings: usize) -> Result<RatingDataset, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::at(path, e))?;
    let records = parse_ratings(&text, format).map_err(|e| IoError::data(path, e))?;
    let ds = RatingDataset::from_records(&records).map_err(|e| IoError::data(path, e))?;
    ds.check_min_user_ratings(min_user_ratings).map_err(|e| IoError::data(path, e))?;
    Ok(ds)
}

/// [`load_ratings`] with the MovieLens minimum of 20 ratings per user.
pub fn load_movielens(path: &Path, format: RatingFormat) -> Result<RatingDataset, IoError> {
    load_ratings(path, format, MOVIELENS_MIN_USER_RATINGS)
}

/// Guesses the format from the first line.
pub fn sniff_format(path: &Path) -> Result<RatingFormat, IoError> {
    let mut head = [0u8; 256];
    let mut f = fs::File::open(path).map_err(|e| IoError::at(path, e))?;
    let k = f.read(&mut head).map_err(|e| IoError::at(path, e))?;
    let line = String::from_utf8_lossy(&head[..k]);
    Ok(if line.lines().next().unwrap_or("").contains("::") { RatingFormat::DoubleColon } else { RatingFormat::TabSeparated })
}

/// Loads either a snapshot (by magic) or a raw ratings file.
pub fn load_any(path: &Path, format: Option<RatingFormat>, min_user_ratings: usize) -> Result<RatingDataset, IoError> {
    let mut magic = [0u8; 8];
    let is_snapshot = fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == SNAPSHOT_MAGIC)
        .unwrap_or(false);
    if is_snapshot {
        let ds = read_snapshot(path)?;
        ds.check_min_user_ratings(min_user_ratings).map_err(|e| IoError::data(path, e))?;
        return Ok(ds);
    }
    let format = match format {
        Some(f) => f,
        None => sniff_format(path)?,
    };
    load_ratings(path, format, min_user_ratings)
}

/// Header: magic, version, m, n, count; then `(user id, item id, rating)`
/// records sorted by user then item. Timestamps are not kept.
pub fn write_snapshot(path: &Path, ds: &RatingDataset) -> Result<(), IoError> {
    let mut w = Writer::create(path)?;
    write_header(&mut w, SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
    w.u64(ds.num_users() as u64)?;
    w.u64(ds.num_items() as u64)?;
    w.u64(ds.num_ratings() as u64)?;
    for (u, i, r) in ds.iter() {
        w.u64(ds.user_id(u))?;
        w.u64(ds.item_id(i))?;
        w.u8(r)?;
    }
    w.finish()
}

pub fn read_snapshot(path: &Path) -> Result<RatingDataset, IoError> {
    let mut r = Reader::open(path)?;
    read_header(&mut r, SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
    let m = r.u64()? as usize;
    let n = r.u64()? as usize;
    let count = r.u64()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let user = r.u64()?;
        let item = r.u64()?;
        let rating = r.u8()?;
        records.push(RatingRecord { user, item, rating, timestamp: 0 });
    }
    r.expect_end()?;
    let ds = RatingDataset::from_records(&records).map_err(|e| IoError::data(path, e))?;
    if ds.num_users() != m || ds.num_items() != n {
        return Err(IoError::corrupt(path, format!("header says {m}x{n}, records give {}x{}", ds.num_users(), ds.num_items())));
    }
    Ok(ds)
}

/// Writes ratings back out as tab-separated text (timestamps zeroed).
pub fn write_tsv(out: &mut impl Write, ds: &RatingDataset) -> io::Result<()> {
    for (u, i, r) in ds.iter() {
        writeln!(out, "{}\t{}\t{}\t0", ds.user_id(u), ds.item_id(i), r)?;
    }
    Ok(())
}
