use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::ReturnsPanel;
use crate::error::{Error, Result};

/// A labelled matrix read from CSV: header row of column labels, first
/// column of row labels. Lines starting with `#` are comments.
#[derive(Debug, Clone)]
pub struct MatrixCsv {
    pub corner: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<MatrixCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse("CSV needs a label column and at least one value column".into()));
    }
    let corner = headers[0].to_string();
    let col_labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut row_labels = Vec::new();
    let mut flat = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                headers.len()
            )));
        }
        row_labels.push(record[0].to_string());
        for field in record.iter().skip(1) {
            let x: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: cannot parse {field:?} as a number", line + 1)))?;
            flat.push(x);
        }
    }
    if row_labels.is_empty() {
        return Err(Error::Parse("CSV has no data rows".into()));
    }
    let values = DMatrix::from_row_slice(row_labels.len(), col_labels.len(), &flat);
    Ok(MatrixCsv { corner, row_labels, col_labels, values })
}

fn read_path(path: &Path) -> Result<MatrixCsv> {
    let f = std::fs::File::open(path)?;
    read_matrix_csv(std::io::BufReader::new(f))
}

pub fn write_matrix_csv<W: Write>(
    mut writer: W,
    comment: Option<&str>,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(writer, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![corner.to_string()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header)?;
    for (r, label) in row_labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(values.row(r).iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel from a returns CSV and a matching volumes CSV, with
/// optional open-to-close returns and open prices of the same shape.
pub fn read_panel_csv(
    returns: &Path,
    volumes: &Path,
    intraday: Option<&Path>,
    open_prices: Option<&Path>,
) -> Result<ReturnsPanel> {
    let r = read_path(returns)?;
    let v = read_path(volumes)?;
    let same_labels = |m: &MatrixCsv, what: &str| -> Result<()> {
        if m.row_labels != r.row_labels || m.col_labels != r.col_labels {
            return Err(Error::Parse(format!("{what} CSV labels do not match the returns CSV")));
        }
        Ok(())
    };
    same_labels(&v, "volumes")?;
    let panel = ReturnsPanel::new(r.row_labels.clone(), r.col_labels.clone(), r.values.clone(), v.values)?;
    match intraday {
        None => Ok(panel),
        Some(p) => {
            let id = read_path(p)?;
            same_labels(&id, "intraday")?;
            let prices = match open_prices {
                Some(pp) => {
                    let m = read_path(pp)?;
                    same_labels(&m, "open prices")?;
                    Some(m.values)
                }
                None => None,
            };
            panel.with_intraday(id.values, prices)
        }
    }
}

/// Writes `returns.csv`, `volumes.csv` and, when present, `intraday.csv`
/// and `open_prices.csv` into `dir`.
pub fn write_panel_csv(panel: &ReturnsPanel, dir: &Path, comment: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, m: &DMatrix<f64>| -> Result<()> {
        let f = std::fs::File::create(dir.join(name))?;
        write_matrix_csv(std::io::BufWriter::new(f), comment, "ticker", panel.tickers(), panel.dates(), m)
    };
    write("returns.csv", panel.returns())?;
    write("volumes.csv", panel.volumes())?;
    if let Some(m) = panel.intraday() {
        write("intraday.csv", m)?;
    }
    if let Some(m) = panel.open_prices() {
        write("open_prices.csv", m)?;
    }
    Ok(())
}
