//! CSV readers and writers for locations, observations and matrices.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::Dataset;
use crate::variogram::Location;

fn parse_number(field: &str, what: impl Fn() -> String) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}: `{field}` is not a number", what())))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("{}: value is not finite", what())));
    }
    Ok(v)
}

/// Reads sites from CSV with header `id,x,y`.
pub fn read_locations<R: Read>(reader: R) -> Result<Vec<Location>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse(format!("locations header lacks `{name}`")))
    };
    let (ci, cx, cy) = (col("id")?, col("x")?, col("y")?);
    let mut sites = Vec::new();
    let mut seen = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let id = get(ci).to_string();
        if id.is_empty() {
            return Err(Error::Parse(format!(
                "locations row {}: empty id",
                line + 1
            )));
        }
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::Parse(format!("duplicate site id `{id}`")));
        }
        let x = parse_number(get(cx), || format!("locations row {}, x", line + 1))?;
        let y = parse_number(get(cy), || format!("locations row {}, y", line + 1))?;
        sites.push(Location::new(id, x, y));
    }
    if sites.is_empty() {
        return Err(Error::Parse("locations file has no sites".into()));
    }
    Ok(sites)
}

pub fn read_locations_file(path: &Path) -> Result<Vec<Location>> {
    read_locations(open(path)?)
}

pub fn write_locations<W: Write>(writer: W, sites: &[Location]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "x", "y"])?;
    for s in sites {
        w.write_record([s.id.clone(), s.x.to_string(), s.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads observations whose header names the sites.
///
/// Columns are reordered to follow `sites`; every site must appear exactly once.
pub fn read_dataset<R: Read>(reader: R, sites: &[Location]) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (c, h) in headers.iter().enumerate() {
        if index.insert(h, c).is_some() {
            return Err(Error::Parse(format!("data header repeats site `{h}`")));
        }
    }
    if headers.len() != sites.len() {
        return Err(Error::Parse(format!(
            "data has {} columns but there are {} sites",
            headers.len(),
            sites.len()
        )));
    }
    let order: Vec<usize> = sites
        .iter()
        .map(|s| {
            index
                .get(s.id.as_str())
                .copied()
                .ok_or_else(|| Error::Parse(format!("site `{}` missing from data header", s.id)))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = order
            .iter()
            .zip(sites)
            .map(|(&c, s)| {
                let field = rec.get(c).unwrap_or("");
                if field.is_empty() {
                    return Err(Error::Parse(format!(
                        "data row {}, site `{}`: missing value",
                        line + 1,
                        s.id
                    )));
                }
                parse_number(field, || format!("data row {}, site `{}`", line + 1, s.id))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Dataset::new(sites.iter().map(|s| s.id.clone()).collect(), rows)
}

pub fn read_dataset_file(path: &Path, sites: &[Location]) -> Result<Dataset> {
    read_dataset(open(path)?, sites)
}

/// Writes rows under a header of site ids, using shortest round-trip formatting.
pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&data.site_ids)?;
    for r in &data.rows {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Path of the metadata file written next to `out`.
pub fn metadata_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.jsonl");
    PathBuf::from(s)
}

/// Writes the data file and a one-record JSON-lines metadata file beside it.
pub fn write_samples<M: Serialize>(out: &Path, data: &Dataset, meta: &M) -> Result<()> {
    write_dataset(std::io::BufWriter::new(File::create(out)?), data)?;
    let mut f = File::create(metadata_path(out))?;
    let line = serde_json::to_string(meta).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Reads a headerless numeric CSV as rows.
pub fn read_matrix<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| parse_number(f, || format!("row {}, column {}", line + 1, c + 1)))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a vector stored as one row or one column.
pub fn read_vector<R: Read>(reader: R) -> Result<Vec<f64>> {
    let m = read_matrix(reader)?;
    match m.as_slice() {
        [] => Err(Error::Parse("empty vector".into())),
        [row] => Ok(row.clone()),
        rows if rows.iter().all(|r| r.len() == 1) => Ok(rows.iter().map(|r| r[0]).collect()),
        _ => Err(Error::Parse("vector must be a single row or column".into())),
    }
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}
