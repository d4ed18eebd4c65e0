//! On-disk formats for simulated paths.
//!
//! A lookdown run is a directory with `events.csv` (`time,kind,i,j,x,J`,
//! where pair rows fill `i,j` and multiple-birth rows fill `x` and a
//! space-separated `J`), `positions.csv` (`checkpoint,level,x1..xd`) and
//! `meta.json`. Floats are written in shortest round-trip form, so reading a
//! directory back gives the identical path.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coalescent::BlockCountPath;
use crate::error::{Error, Result};
use crate::lookdown::{BirthEvent, BirthKind, EventLog, EventRef, Level, LookdownPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub measure: String,
    pub n: Level,
    pub d: usize,
    pub horizon: f64,
    pub seed: u64,
    pub checkpoints: Vec<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write a small CSV file from a header and preformatted records.
pub fn write_csv<I>(path: &Path, header: &str, records: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let mut w = create(path)?;
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for rec in records {
        writeln!(w, "{rec}").map_err(|e| Error::io(path, e))?;
    }
    finish(w, path)
}

/// `rep,jump_index,time,count`; jump index 0 is the initial count at time 0.
pub fn write_block_paths(paths: &[BlockCountPath], out: &Path) -> Result<()> {
    let records = paths.iter().enumerate().flat_map(|(rep, p)| {
        p.counts.iter().enumerate().map(move |(k, c)| {
            let time = if k == 0 { 0.0 } else { p.jump_times[k - 1] };
            format!("{rep},{k},{time},{c}")
        })
    });
    write_csv(out, "rep,jump_index,time,count", records)
}

fn coord_header(d: usize) -> String {
    (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",")
}

fn write_cloud_rows(w: &mut impl Write, t: f64, cloud: &[f64], d: usize) -> std::io::Result<()> {
    for (k, p) in cloud.chunks_exact(d).enumerate() {
        write!(w, "{t},{}", k + 1)?;
        for c in p {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_lookdown(path: &LookdownPath, measure: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ev_path = dir.join("events.csv");
    let records = path.events.iter().map(|(t, e)| match e {
        EventRef::Pair { i, j } => format!("{t},pair,{i},{j},,"),
        EventRef::Multi { x, participants } => {
            let j: Vec<String> = participants.iter().map(|l| l.to_string()).collect();
            format!("{t},multi,,,{x},{}", j.join(" "))
        }
    });
    write_csv(&ev_path, "time,kind,i,j,x,J", records)?;

    let header = format!("checkpoint,level,{}", coord_header(path.d));
    let pos_path = dir.join("positions.csv");
    let mut w = create(&pos_path)?;
    writeln!(w, "{header}").map_err(|e| Error::io(&pos_path, e))?;
    for (ci, &t) in path.checkpoints.iter().enumerate() {
        write_cloud_rows(&mut w, t, path.positions_at(ci), path.d).map_err(|e| Error::io(&pos_path, e))?;
    }
    finish(w, &pos_path)?;

    let coincident: Vec<usize> = path.coincident_checkpoints().collect();
    if !coincident.is_empty() {
        let pre_path = dir.join("left_positions.csv");
        let mut w = create(&pre_path)?;
        writeln!(w, "{header}").map_err(|e| Error::io(&pre_path, e))?;
        for ci in coincident {
            write_cloud_rows(&mut w, path.checkpoints[ci], path.left_positions_at(ci), path.d)
                .map_err(|e| Error::io(&pre_path, e))?;
        }
        finish(w, &pre_path)?;
    }

    let meta = PathMeta {
        measure: measure.into(),
        n: path.n,
        d: path.d,
        horizon: path.horizon,
        seed: path.seed,
        checkpoints: path.checkpoints.clone(),
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, path: &Path) -> Result<T> {
    rec.get(k)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::parse(path, format!("bad field {k} in record {:?}", rec)))
}

fn read_clouds(path: &Path, meta: &PathMeta) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        if rec.len() != 2 + meta.d {
            return Err(Error::parse(path, format!("expected {} fields, got {}", 2 + meta.d, rec.len())));
        }
        let t: f64 = field(&rec, 0, path)?;
        if out.last().is_none_or(|(last, _)| *last != t) {
            out.push((t, Vec::with_capacity(meta.n as usize * meta.d)));
        }
        for k in 0..meta.d {
            out.last_mut().unwrap().1.push(field(&rec, 2 + k, path)?);
        }
    }
    Ok(out)
}

pub fn read_lookdown(dir: &Path) -> Result<(LookdownPath, String)> {
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: PathMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.to_string()))?;

    let ev_path = dir.join("events.csv");
    let mut events = EventLog::new(meta.n);
    for rec in reader(&ev_path)?.records() {
        let rec = rec.map_err(|e| Error::parse(&ev_path, e.to_string()))?;
        let time: f64 = field(&rec, 0, &ev_path)?;
        let kind = match rec.get(1) {
            Some("pair") => BirthKind::Pair {
                i: field(&rec, 2, &ev_path)?,
                j: field(&rec, 3, &ev_path)?,
            },
            Some("multi") => BirthKind::Multi {
                x: field(&rec, 4, &ev_path)?,
                participants: rec
                    .get(5)
                    .unwrap_or("")
                    .split_whitespace()
                    .map(|s| s.parse().map_err(|_| Error::parse(&ev_path, format!("bad level {s:?}"))))
                    .collect::<Result<Vec<Level>>>()?,
            },
            other => return Err(Error::parse(&ev_path, format!("unknown event kind {other:?}"))),
        };
        events
            .push(&BirthEvent { time, kind })
            .map_err(|e| Error::parse(&ev_path, e.to_string()))?;
    }

    let pos_path = dir.join("positions.csv");
    let clouds = read_clouds(&pos_path, &meta)?;
    let times: Vec<f64> = clouds.iter().map(|c| c.0).collect();
    if times != meta.checkpoints {
        return Err(Error::parse(&pos_path, "checkpoints disagree with meta.json"));
    }
    let positions: Vec<f64> = clouds.into_iter().flat_map(|c| c.1).collect();

    let mut pre_event = BTreeMap::new();
    let pre_path = dir.join("left_positions.csv");
    if pre_path.exists() {
        for (t, cloud) in read_clouds(&pre_path, &meta)? {
            let ci = meta
                .checkpoints
                .iter()
                .position(|&c| c == t)
                .ok_or_else(|| Error::parse(&pre_path, format!("unknown checkpoint {t}")))?;
            pre_event.insert(ci, cloud);
        }
    }
    let path = LookdownPath::from_parts(
        meta.n,
        meta.d,
        meta.horizon,
        meta.seed,
        meta.checkpoints.clone(),
        events,
        positions,
        pre_event,
    )
    .map_err(|e| Error::parse(dir, e.to_string()))?;
    Ok((path, meta.measure))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lookdown::{dyadic_grid, generate_events, simulate, simulate_with_events, Init, Setup};
    use crate::measure::LambdaMeasure;

    #[test]
    fn lookdown_directory_round_trips() {
        let m = LambdaMeasure::mix(0.5, 1.5).unwrap();
        let setup = Setup::new(25, 2, 1.0, dyadic_grid(3, 1.0)).with_init(Init::Gaussian);
        let path = simulate(&m, &setup, 44).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_lookdown(&path, &m.label(), dir.path()).unwrap();
        let (back, label) = read_lookdown(dir.path()).unwrap();
        assert_eq!(back, path);
        assert_eq!(label, m.label());
    }

    #[test]
    fn coincident_checkpoints_keep_left_limits() {
        let m = LambdaMeasure::beta(1.5).unwrap();
        let log = generate_events(&m, 10, 1.0, &[], 3).unwrap();
        let t0 = log.time(0);
        let setup = Setup::new(10, 1, 1.0, vec![t0]).with_init(Init::Gaussian);
        let path = simulate_with_events(&setup, log, 3).unwrap();
        assert_eq!(path.coincident_checkpoints().count(), 1);
        let dir = tempfile::tempdir().unwrap();
        write_lookdown(&path, "beta:1.5", dir.path()).unwrap();
        assert_eq!(read_lookdown(dir.path()).unwrap().0, path);
    }

    #[test]
    fn corrupt_directories_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_lookdown(dir.path()).unwrap_err();
        assert!(err.to_string().contains("meta.json"));
    }
}
