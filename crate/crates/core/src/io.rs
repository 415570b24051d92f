//! File formats: region tables, sample matrices and CSV exports with a `#` metadata line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::catsim::RegionGeo;
use crate::{Error, Result, ScenarioMatrix};

pub const REGION_HEADER: [&str; 5] = ["id", "name", "wealth", "cx", "cy"];

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse_err(label: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: label.to_string(),
        line: line as usize,
        message: message.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_err(label: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(label, line, e.to_string())
}

fn number(label: &str, rec: &csv::StringRecord, idx: usize, column: &str) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(label, record_line(rec), format!("column `{column}`: `{raw}` is not a finite number")))
}

/// Reads `id,name,wealth,cx,cy` rows.
pub fn read_regions<R: Read>(r: R, label: &str) -> Result<Vec<RegionGeo>> {
    let mut rdr = reader(r);
    let header = rdr.headers().map_err(|e| csv_err(label, e))?.clone();
    if header.iter().collect::<Vec<_>>() != REGION_HEADER {
        return Err(parse_err(
            label,
            1,
            format!("expected header `{}`", REGION_HEADER.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut regions = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(label, e))?;
        let line = record_line(&rec);
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_err(label, line, "empty region id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(label, line, format!("duplicate region id `{id}`")));
        }
        let wealth = number(label, &rec, 2, "wealth")?;
        if wealth <= 0.0 {
            return Err(parse_err(label, line, format!("non-positive wealth {wealth} for region `{id}`")));
        }
        regions.push(RegionGeo {
            name: rec.get(1).unwrap_or("").to_string(),
            wealth,
            centroid: [number(label, &rec, 3, "cx")?, number(label, &rec, 4, "cy")?],
            id,
        });
    }
    if regions.is_empty() {
        return Err(parse_err(label, 1, "no regions"));
    }
    Ok(regions)
}

pub fn load_regions(path: &Path) -> Result<Vec<RegionGeo>> {
    read_regions(File::open(path)?, &path.display().to_string())
}

/// A wide table: one row per scenario, one column per region. A leading `scenario` column
/// is ignored.
pub fn read_matrix<R: Read>(r: R, label: &str) -> Result<(Vec<String>, ScenarioMatrix)> {
    let mut rdr = reader(r);
    let header = rdr.headers().map_err(|e| csv_err(label, e))?.clone();
    let skip = usize::from(header.get(0) == Some("scenario"));
    let columns: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
    if columns.is_empty() {
        return Err(parse_err(label, 1, "no region columns"));
    }
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(label, e))?;
        for (k, column) in columns.iter().enumerate() {
            values.push(number(label, &rec, k + skip, column)?);
        }
    }
    let m = ScenarioMatrix::new(columns.len(), values)?;
    Ok((columns, m))
}

pub fn load_matrix(path: &Path) -> Result<(Vec<String>, ScenarioMatrix)> {
    read_matrix(File::open(path)?, &path.display().to_string())
}

/// `region_id,premium` rows, returned in file order.
pub fn load_premiums(path: &Path) -> Result<Vec<(String, f64)>> {
    let label = path.display().to_string();
    let mut rdr = reader(File::open(path)?);
    let header = rdr.headers().map_err(|e| csv_err(&label, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["region_id", "premium"] {
        return Err(parse_err(&label, 1, "expected header `region_id,premium`"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&label, e))?;
        out.push((rec.get(0).unwrap_or("").to_string(), number(&label, &rec, 1, "premium")?));
    }
    Ok(out)
}

/// `key=value` pairs written as the first line of every exported table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(Vec<(String, String)>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn line(&self) -> String {
        let body: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# {}", body.join(" "))
    }
}

/// Rows of already formatted fields under a header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write_to<W: Write>(&self, w: W, meta: &Metadata) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "{}", meta.line())?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path, meta: &Metadata) -> Result<()> {
        self.write_to(File::create(path)?, meta)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Wide table of a scenario matrix with the given column names.
pub fn matrix_table(columns: &[String], m: &ScenarioMatrix) -> Table {
    let mut t = Table::new(std::iter::once("scenario".to_string()).chain(columns.iter().cloned()));
    for (s, row) in m.rows().enumerate() {
        t.push(std::iter::once(s.to_string()).chain(row.iter().map(|x| fmt_f64(*x))).collect());
    }
    t
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_parse() {
        let text = "id,name,wealth,cx,cy\n# comment\nA,Alpha,10.5,0,1\nB,Beta,8,2.5,-1\n";
        let r = read_regions(text.as_bytes(), "mem").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].centroid, [2.5, -1.0]);
    }

    #[test]
    fn duplicate_ids_are_named() {
        let text = "id,name,wealth,cx,cy\nA,Alpha,1,0,0\nA,Again,2,1,1\n";
        let err = read_regions(text.as_bytes(), "mem").unwrap_err().to_string();
        assert!(err.contains("duplicate region id `A`"), "{err}");
        assert!(err.contains("mem:3"), "{err}");
    }

    #[test]
    fn zero_wealth_is_rejected() {
        let text = "id,name,wealth,cx,cy\nA,Alpha,0,0,0\n";
        let err = read_regions(text.as_bytes(), "mem").unwrap_err().to_string();
        assert!(err.contains("non-positive wealth"), "{err}");
    }

    #[test]
    fn malformed_rows_report_lines() {
        let text = "id,name,wealth,cx,cy\nA,Alpha,1,0,0\nB,Beta,x,0,0\n";
        let err = read_regions(text.as_bytes(), "mem").unwrap_err().to_string();
        assert!(err.starts_with("mem:3"), "{err}");
        let short = "id,name,wealth,cx,cy\nA,Alpha,1,0\n";
        assert!(read_regions(short.as_bytes(), "mem").is_err());
        assert!(read_regions("a,b\n".as_bytes(), "mem").is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let m = ScenarioMatrix::from_rows(&[vec![0.1, 1.0 / 3.0], vec![2.0, 1e-17]]).unwrap();
        let cols = vec!["r1".to_string(), "r2".to_string()];
        let mut buf = Vec::new();
        matrix_table(&cols, &m).write_to(&mut buf, &Metadata::new().with("seed", 1)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed=1\nscenario,r1,r2\n"));
        let (c, back) = read_matrix(buf.as_slice(), "mem").unwrap();
        assert_eq!(c, cols);
        assert_eq!(back, m);
    }
}
