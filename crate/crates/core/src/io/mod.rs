//! File formats: binary containers, delimited text and JSON lines.

pub mod container;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metadata::MetadataMatrix;
use crate::model::ModelParams;
use crate::profile::{ProfileMatrix, RawSeries};
use crate::trainer::TracePoint;

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Read a whole file, naming it in the error.
pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    fs::read(path).map_err(|e| with_path(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| with_path(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| with_path(path, e))
}

fn csv_reader(path: impl AsRef<Path>) -> Result<csv::Reader<fs::File>> {
    Ok(csv::Reader::from_reader(open(path.as_ref())?))
}

/// Write to a temporary sibling file, then rename it over `path`.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    tmp.set_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_profile(path: impl AsRef<Path>, pm: &ProfileMatrix) -> Result<()> {
    atomic_write(path, &container::encode_profile(pm))
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ProfileMatrix> {
    container::decode_profile(&read_file(path)?)
}

pub fn save_metadata(path: impl AsRef<Path>, meta: &MetadataMatrix) -> Result<()> {
    atomic_write(path, &container::encode_sparse(meta))
}

/// Load an `SFSM` file, with the vocabulary from `vocab` when given.
pub fn load_metadata(path: impl AsRef<Path>, vocab: Option<&Path>) -> Result<MetadataMatrix> {
    let vocab = match vocab {
        Some(p) => read_vocab(p)?,
        None => Vec::new(),
    };
    container::decode_sparse(&read_file(path)?, vocab)
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    atomic_write(path, &container::encode_model(params))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    container::decode_model(&read_file(path)?)
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct LongRow {
    series_id: String,
    t: usize,
    value: Option<f64>,
}

/// Read `series_id,t,value` rows. Series keep their order of first
/// appearance; sample indices that never appear, and empty values, are
/// missing (NaN).
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<Vec<RawSeries>> {
    let mut rdr = csv_reader(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut values: HashMap<String, Vec<f64>> = HashMap::new();
    for row in rdr.deserialize() {
        let row: LongRow = row?;
        let v = values.entry(row.series_id.clone()).or_insert_with(|| {
            order.push(row.series_id.clone());
            Vec::new()
        });
        if v.len() <= row.t {
            v.resize(row.t + 1, f64::NAN);
        } else if !v[row.t].is_nan() {
            return Err(Error::Format(format!("duplicate sample {} of '{}'", row.t, row.series_id)));
        }
        v[row.t] = row.value.filter(|x| x.is_finite()).unwrap_or(f64::NAN);
    }
    if order.is_empty() {
        return Err(Error::EmptyInput("series file has no rows".into()));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let v = values.remove(&id).expect("collected");
            RawSeries::new(id, v)
        })
        .collect())
}

pub fn write_series_csv<W: Write>(out: W, series: &[RawSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        for (t, &v) in s.values.iter().enumerate() {
            w.serialize(LongRow {
                series_id: s.id.clone(),
                t,
                value: v.is_finite().then_some(v),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct OffsetRow {
    series_id: String,
    start_offset: usize,
}

/// Read the optional `series_id,start_offset` sidecar.
pub fn read_offsets_csv(path: impl AsRef<Path>) -> Result<HashMap<String, usize>> {
    let mut rdr = csv_reader(path)?;
    let mut out = HashMap::new();
    for row in rdr.deserialize() {
        let row: OffsetRow = row?;
        out.insert(row.series_id, row.start_offset);
    }
    Ok(out)
}

pub fn write_offsets_csv<W: Write>(out: W, series: &[RawSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        w.serialize(OffsetRow {
            series_id: s.id.clone(),
            start_offset: s.start_offset,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DocLine {
    series_id: String,
    tokens: Vec<String>,
}

/// Read `{"series_id": ..., "tokens": [...]}` lines; blank lines are skipped.
pub fn read_docs_jsonl(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<String>)>> {
    let file = BufReader::new(open(path.as_ref())?);
    let mut docs = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: DocLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        docs.push((doc.series_id, doc.tokens));
    }
    Ok(docs)
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &[String]) -> Result<()> {
    let mut s = String::new();
    for term in vocab {
        s.push_str(term);
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

/// Debug dump: one line per cell.
pub fn write_profile_text<W: Write>(out: W, pm: &ProfileMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "column", "series_id", "year", "value", "observed"])?;
    let index = pm.index();
    for e in index.entries() {
        for j in 0..pm.period() {
            w.write_record([
                j.to_string(),
                e.column.to_string(),
                e.series_id.to_string(),
                e.year.to_string(),
                pm.data()[[j, e.column]].to_string(),
                u8::from(pm.mask()[[j, e.column]]).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One forecast value addressed by raw sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub series_id: String,
    pub t: usize,
    pub value: f64,
}

pub fn write_forecast_csv<W: Write>(out: W, rows: &[ForecastRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_forecast_csv(path: impl AsRef<Path>) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv_reader(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "loss"])?;
    for p in trace {
        w.write_record([p.iteration.to_string(), format!("{:e}", p.loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// Serialize into an in-memory buffer and write it atomically.
pub fn write_with<F>(path: impl AsRef<Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    atomic_write(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_csv_roundtrip_with_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "series_id,t,value\nb,0,1.5\na,2,3\nb,1,\na,0,-1\n").unwrap();
        let s = read_series_csv(&p).unwrap();
        assert_eq!(s[0].id, "b");
        assert_eq!(s[0].values[0], 1.5);
        assert!(s[0].values[1].is_nan());
        assert_eq!(s[1].values.len(), 3);
        assert!(s[1].values[1].is_nan());

        let q = dir.path().join("t.csv");
        write_with(&q, |b| write_series_csv(b, &s)).unwrap();
        let back = read_series_csv(&q).unwrap();
        assert_eq!(back[1].values[2], 3.0);
        assert!(back[0].values[1].is_nan());
    }

    #[test]
    fn duplicate_sample_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "series_id,t,value\na,0,1\na,0,2\n").unwrap();
        assert!(read_series_csv(&p).is_err());
    }

    #[test]
    fn docs_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "{\"series_id\":\"a\",\"tokens\":[\"x\",\"y\"]}\n\n{\"series_id\":\"b\",\"tokens\":[]}\n").unwrap();
        let d = read_docs_jsonl(&p).unwrap();
        assert_eq!(d, vec![("a".into(), vec!["x".into(), "y".into()]), ("b".into(), vec![])]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
