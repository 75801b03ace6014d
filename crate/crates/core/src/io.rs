//! CSV and JSON artifacts. Every writer goes through [`write_atomic`], so a
//! crashed run never leaves a truncated file behind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{MduError, Result};
use crate::model::{Configuration, ResponseMatrix};
use crate::optimizer::{FitOptions, FitResult};

/// Writes through a temporary file in the destination directory, then
/// renames it over `path`.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| MduError::Io(e.error))?;
    Ok(())
}

fn read_records(text: &str) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

fn response_cell(s: &str) -> Option<Option<bool>> {
    match s {
        "0" => Some(Some(false)),
        "1" => Some(Some(true)),
        "NA" | "" => Some(None),
        _ => None,
    }
}

/// Parses a response matrix: `0`, `1`, and `NA` or empty for missing.
///
/// A header row is recognised by a non-response cell past the first column
/// of the first row; an ID column by a non-response first cell in any data
/// row. Row and column numbers in errors are one-based file positions.
pub fn parse_response_csv(text: &str) -> Result<ResponseMatrix> {
    let rows = read_records(text)?;
    if rows.is_empty() {
        return Err(MduError::Parse {
            row: 1,
            column: 1,
            message: "no data".into(),
        });
    }
    let has_header = rows[0].iter().skip(1).any(|c| response_cell(c).is_none())
        || (rows.len() > 1 && response_cell(&rows[0][0]).is_none() && rows[1..].iter().all(|r| response_cell(&r[0]).is_some()));
    let data_start = usize::from(has_header);
    let has_id = rows[data_start..].iter().any(|r| response_cell(&r[0]).is_none());
    let skip = usize::from(has_id);

    let body = &rows[data_start..];
    if body.is_empty() {
        return Err(MduError::Parse {
            row: rows.len() + 1,
            column: 1,
            message: "header without data rows".into(),
        });
    }
    let width = body[0].len();
    if width <= skip {
        return Err(MduError::Parse {
            row: data_start + 1,
            column: 1,
            message: "row has no response cells".into(),
        });
    }
    let j = width - skip;
    let mut cells = Vec::with_capacity(body.len() * j);
    for (r, rec) in body.iter().enumerate() {
        let row = data_start + r + 1;
        if rec.len() != width {
            return Err(MduError::Parse {
                row,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, s) in rec.iter().enumerate().skip(skip) {
            cells.push(response_cell(s).ok_or_else(|| MduError::Parse {
                row,
                column: c + 1,
                message: format!("invalid response {s:?}"),
            })?);
        }
    }
    ResponseMatrix::from_cells(Array2::from_shape_vec((body.len(), j), cells).expect("rectangular"))
}

pub fn load_response_csv(path: &Path) -> Result<ResponseMatrix> {
    parse_response_csv(&read_to_string(path)?)
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut s)?;
    Ok(s)
}

/// Headerless, ID-free, `NA` for missing.
pub fn write_response_csv(data: &ResponseMatrix, out: &mut dyn Write) -> Result<()> {
    let mut line = String::new();
    for row in data.cells().rows() {
        line.clear();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(match cell {
                Some(true) => "1",
                Some(false) => "0",
                None => "NA",
            });
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn save_response_csv(data: &ResponseMatrix, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_response_csv(data, w))
}

/// Rows `set,index,coord_1..coord_K` with 17 significant digits.
pub fn write_configuration(config: &Configuration, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["set".to_owned(), "index".to_owned()];
    header.extend((1..=config.dim()).map(|k| format!("coord_{k}")));
    w.write_record(&header)?;
    for (set, points) in [("person", config.persons()), ("item", config.items())] {
        for (i, row) in points.rows().into_iter().enumerate() {
            let mut rec = vec![set.to_owned(), i.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_configuration(config: &Configuration, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_configuration(config, w))
}

/// Inverse of [`write_configuration`]. With `bound` given, every point must
/// lie in that ball; otherwise the largest norm becomes the bound.
pub fn parse_configuration(text: &str, bound: Option<f64>) -> Result<Configuration> {
    let rows = read_records(text)?;
    let start = usize::from(rows.first().is_some_and(|r| r[0] == "set"));
    let mut persons: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut items: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut dim = None;
    for (r, rec) in rows.iter().enumerate().skip(start) {
        let row = r + 1;
        let err = |column: usize, message: String| MduError::Parse { row, column, message };
        if rec.len() < 3 {
            return Err(err(rec.len() + 1, "expected set, index and at least one coordinate".into()));
        }
        let k = rec.len() - 2;
        if *dim.get_or_insert(k) != k {
            return Err(err(rec.len(), format!("row has {k} coordinates, earlier rows {}", dim.unwrap())));
        }
        let index: usize = rec[1].parse().map_err(|_| err(2, format!("invalid index {:?}", rec[1])))?;
        let coords = rec[2..]
            .iter()
            .enumerate()
            .map(|(c, s)| s.parse::<f64>().map_err(|_| err(c + 3, format!("invalid coordinate {s:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        match rec[0].as_str() {
            "person" => persons.push((index, coords)),
            "item" => items.push((index, coords)),
            other => return Err(err(1, format!("set must be person or item, got {other:?}"))),
        }
    }
    let dim = dim.ok_or_else(|| MduError::Malformed("configuration file has no points".into()))?;
    let to_matrix = |what: &str, mut pts: Vec<(usize, Vec<f64>)>| -> Result<Array2<f64>> {
        pts.sort_by_key(|p| p.0);
        if pts.iter().enumerate().any(|(i, p)| p.0 != i) {
            return Err(MduError::Malformed(format!("{what} indices must be 0..n without gaps or repeats")));
        }
        let n = pts.len();
        Ok(Array2::from_shape_vec((n, dim), pts.into_iter().flat_map(|p| p.1).collect()).expect("checked widths"))
    };
    let (p, i) = (to_matrix("person", persons)?, to_matrix("item", items)?);
    match bound {
        Some(b) => Configuration::new(p, i, b),
        None => Configuration::unbounded(p, i),
    }
}

pub fn load_configuration(path: &Path, bound: Option<f64>) -> Result<Configuration> {
    parse_configuration(&read_to_string(path)?, bound)
}

/// Cluster labels as `set,index,label`, labels written one-based.
pub fn write_labels(person_labels: &[usize], item_labels: &[usize], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["set", "index", "label"])?;
    for (set, labels) in [("person", person_labels), ("item", item_labels)] {
        for (i, l) in labels.iter().enumerate() {
            w.write_record([set, &i.to_string(), &(l + 1).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_labels(person_labels: &[usize], item_labels: &[usize], path: &Path) -> Result<()> {
    write_atomic(path, |w| write_labels(person_labels, item_labels, w))
}

/// Reads a labels file back to zero-based `(person_labels, item_labels)`.
/// Either set may be absent.
pub fn parse_labels(text: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let rows = read_records(text)?;
    let start = usize::from(rows.first().is_some_and(|r| r[0] == "set"));
    let mut sets: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
    for (r, rec) in rows.iter().enumerate().skip(start) {
        let row = r + 1;
        let err = |column: usize, message: String| MduError::Parse { row, column, message };
        if rec.len() != 3 {
            return Err(err(1, format!("expected 3 fields, found {}", rec.len())));
        }
        let slot = match rec[0].as_str() {
            "person" => 0,
            "item" => 1,
            other => return Err(err(1, format!("set must be person or item, got {other:?}"))),
        };
        let index = rec[1].parse().map_err(|_| err(2, format!("invalid index {:?}", rec[1])))?;
        let label: usize = rec[2].parse().map_err(|_| err(3, format!("invalid label {:?}", rec[2])))?;
        if label == 0 {
            return Err(err(3, "labels are one-based".into()));
        }
        sets[slot].push((index, label - 1));
    }
    let [p, i] = sets.map(|mut v| {
        v.sort_by_key(|x| x.0);
        v
    });
    let finish = |what: &str, v: Vec<(usize, usize)>| -> Result<Vec<usize>> {
        if v.iter().enumerate().any(|(k, x)| x.0 != k) {
            return Err(MduError::Malformed(format!("{what} indices must be 0..n without gaps or repeats")));
        }
        Ok(v.into_iter().map(|x| x.1).collect())
    };
    Ok((finish("person", p)?, finish("item", i)?))
}

pub fn load_labels(path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    parse_labels(&read_to_string(path)?)
}

/// One numeric covariate per row, taken from the last column. A header row
/// is skipped when its last cell is not a number.
pub fn parse_covariate(text: &str) -> Result<Vec<f64>> {
    let rows = read_records(text)?;
    let last = |r: &Vec<String>| r.last().cloned().unwrap_or_default();
    let start = usize::from(rows.first().is_some_and(|r| last(r).parse::<f64>().is_err()));
    let values = rows
        .iter()
        .enumerate()
        .skip(start)
        .map(|(r, rec)| {
            let s = last(rec);
            s.parse::<f64>().ok().filter(|v| !v.is_nan()).ok_or_else(|| MduError::Parse {
                row: r + 1,
                column: rec.len(),
                message: format!("invalid covariate {s:?}"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(MduError::Malformed("covariate file has no values".into()));
    }
    Ok(values)
}

pub fn load_covariate(path: &Path) -> Result<Vec<f64>> {
    parse_covariate(&read_to_string(path)?)
}

/// Everything needed to audit or repeat a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub options: FitOptions,
    pub seed: u64,
    pub final_objective: f64,
    pub best_start: usize,
    pub per_start_objectives: Vec<f64>,
    pub per_start_iterations: Vec<usize>,
    pub per_start_converged: Vec<bool>,
    pub trace: Vec<f64>,
    pub seconds: f64,
    pub version: String,
}

impl RunReport {
    pub fn new(options: &FitOptions, fit: &FitResult, seconds: f64) -> Self {
        Self {
            options: options.clone(),
            seed: options.seed,
            final_objective: fit.final_objective,
            best_start: fit.start_index,
            per_start_objectives: fit.per_start_objectives.clone(),
            per_start_iterations: fit.per_start_iterations.clone(),
            per_start_converged: fit.per_start_converged.clone(),
            trace: fit.trace.clone(),
            seconds,
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn parses_plain_matrix() {
        let d = parse_response_csv("1,0,NA\n0,1,1").unwrap();
        assert_eq!((d.n_persons(), d.n_items(), d.observed_count()), (2, 3, 5));
        assert_eq!(d.get(0, 2), None);
        assert_eq!(d.get(1, 1), Some(true));
    }

    #[test]
    fn detects_header_and_ids() {
        let d = parse_response_csv("id,v1,v2\nA,1,\nB,0,1\n").unwrap();
        assert_eq!((d.n_persons(), d.n_items(), d.observed_count()), (2, 2, 3));
        // Data rows decide the ID column: here every first cell is a response.
        let d = parse_response_csv("v0,v1,v2\n1,0,1\n").unwrap();
        assert_eq!((d.n_persons(), d.n_items()), (1, 3));
        let d = parse_response_csv("7,1,0\n8,0,0\n").unwrap();
        assert_eq!((d.n_persons(), d.n_items()), (2, 2));
    }

    #[test]
    fn response_errors_name_position() {
        assert!(matches!(parse_response_csv(""), Err(MduError::Parse { .. })));
        match parse_response_csv("1,0\n0,2\n") {
            Err(MduError::Parse { row: 2, column: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_response_csv("1,0,1\n0,1\n") {
            Err(MduError::Parse { row: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn response_round_trip() {
        let d = parse_response_csv("1,0,NA\n0,NA,1\n").unwrap();
        let mut buf = Vec::new();
        write_response_csv(&d, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1,0,NA\n0,NA,1\n");
        assert_eq!(parse_response_csv(std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }

    #[test]
    fn configuration_round_trip_is_exact() {
        let c = Configuration::new(
            array![[0.1, -1.0 / 3.0], [f64::EPSILON, std::f64::consts::FRAC_1_SQRT_2]],
            array![[-0.0, 1e-300]],
            1.5,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_configuration(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("set,index,coord_1,coord_2\n"));
        let back = parse_configuration(&text, Some(1.5)).unwrap();
        for (a, b) in back.persons().iter().chain(back.items()).zip(c.persons().iter().chain(c.items())) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn configuration_errors() {
        let mixed = "set,index,coord_1,coord_2\nperson,0,0.1,0.2\nitem,0,0.3\n";
        assert!(matches!(parse_configuration(mixed, None), Err(MduError::Parse { row: 3, .. })));
        let far = "person,0,2.0\nitem,0,0.0\n";
        assert!(matches!(parse_configuration(far, Some(1.0)), Err(MduError::Constraint(_))));
        assert_eq!(parse_configuration(far, None).unwrap().bound(), 2.0);
        assert!(matches!(parse_configuration("person,1,0.0\nitem,0,0.0\n", None), Err(MduError::Malformed(_))));
        assert!(matches!(parse_configuration("robot,0,0.0\n", None), Err(MduError::Parse { column: 1, .. })));
    }

    #[test]
    fn labels_round_trip() {
        let mut buf = Vec::new();
        write_labels(&[0, 2, 1], &[1, 1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("person,1,3\n"));
        assert_eq!(parse_labels(&text).unwrap(), (vec![0, 2, 1], vec![1, 1]));
        assert!(parse_labels("person,0,0\n").is_err());
    }

    #[test]
    fn covariate_parsing() {
        assert_eq!(parse_covariate("party\n1\n-2.5\n").unwrap(), vec![1.0, -2.5]);
        assert_eq!(parse_covariate("a,3\nb,4\n").unwrap(), vec![3.0, 4.0]);
        assert!(matches!(parse_covariate("1\nx\n"), Err(MduError::Parse { row: 2, .. })));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        std::fs::write(&path, "old").unwrap();
        let failed = write_atomic(&path, |w| {
            w.write_all(b"partial")?;
            Err(MduError::Malformed("boom".into()))
        });
        assert!(failed.is_err());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "old");
        write_atomic(&path, |w| Ok(w.write_all(b"new")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "new");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
