//! CSV panel ingestion and emission.
//!
//! Panels are wide CSV, UTF-8, '.' decimal separator, LF line endings:
//! a `date` header column followed by one column per asset. Dates must
//! be strictly increasing; missing or malformed cells are hard errors
//! with their location. Files are written atomically
//! (write-temp-then-rename).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use portopt_core::matrix::Matrix;
use portopt_core::panel::{
    log_returns_from_prices, simple_returns_from_prices, PanelError, ReturnsPanel,
};
use thiserror::Error;

/// Whether a CSV carries price levels or per-period returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelMode {
    Prices,
    Returns,
}

/// Which return convention the run works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnsKind {
    #[default]
    Simple,
    Log,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("the header must start with a 'date' column")]
    MissingDateHeader,
    #[error("no asset columns in the header")]
    NoAssets,
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("missing or non-numeric value at row {row}, column '{column}'")]
    BadCell { row: usize, column: String },
    #[error("dates must be strictly increasing: '{date}' at row {row} does not advance")]
    NonMonotoneDate { row: usize, date: String },
    #[error("benchmark column '{0}' not found in the header")]
    BenchmarkMissing(String),
    #[error("a benchmark column would leave no asset columns")]
    BenchmarkOnly,
    #[error("{0}")]
    Panel(#[from] PanelError),
}

/// Loads a wide CSV into a [`ReturnsPanel`].
///
/// `mode` says whether cells are price levels or returns; price panels
/// are converted (dropping the first row), using simple or log returns
/// per `kind`. Return panels pass through unchanged under
/// [`ReturnsKind::Simple`] and are mapped by `ln(1 + r)` under
/// [`ReturnsKind::Log`]. A named benchmark column is split out of the
/// asset set and receives the same conversion.
pub fn load_panel(
    path: &Path,
    mode: PanelMode,
    benchmark: Option<&str>,
    kind: ReturnsKind,
) -> Result<ReturnsPanel, DataError> {
    let raw = fs::read_to_string(path)
        .map_err(|source| DataError::Read { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    let mut columns = headers.iter();
    match columns.next() {
        Some(h) if h.trim().eq_ignore_ascii_case("date") => {}
        _ => return Err(DataError::MissingDateHeader),
    }
    let names: Vec<String> = columns.map(|c| c.trim().to_string()).collect();
    if names.is_empty() {
        return Err(DataError::NoAssets);
    }

    let mut dates: Vec<String> = Vec::new();
    let mut cells: Vec<f64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 2; // 1-based, after the header
        if record.len() != names.len() + 1 {
            return Err(DataError::RaggedRow { row, expected: names.len() + 1, found: record.len() });
        }
        let date = record.get(0).unwrap_or("").trim().to_string();
        if let Some(last) = dates.last() {
            if date.as_str() <= last.as_str() {
                return Err(DataError::NonMonotoneDate { row, date });
            }
        }
        dates.push(date);
        for (col, cell) in record.iter().skip(1).enumerate() {
            let parsed: f64 = cell.trim().parse().map_err(|_| DataError::BadCell {
                row,
                column: names[col].clone(),
            })?;
            if !parsed.is_finite() {
                return Err(DataError::BadCell { row, column: names[col].clone() });
            }
            cells.push(parsed);
        }
    }
    let matrix = Matrix::from_rows(dates.len(), names.len(), cells);

    let (matrix, dates) = match mode {
        PanelMode::Prices => {
            let converted = match kind {
                ReturnsKind::Simple => simple_returns_from_prices(&matrix)?,
                ReturnsKind::Log => log_returns_from_prices(&matrix)?,
            };
            (converted, dates[1..].to_vec())
        }
        PanelMode::Returns => {
            if dates.len() < 2 {
                return Err(DataError::Panel(PanelError::TooFewRows { rows: dates.len() }));
            }
            (matrix, dates)
        }
    };

    let (names, matrix, benchmark_series) = match benchmark {
        Some(bench_name) => {
            let bench_col = names
                .iter()
                .position(|n| n == bench_name)
                .ok_or_else(|| DataError::BenchmarkMissing(bench_name.to_string()))?;
            if names.len() == 1 {
                return Err(DataError::BenchmarkOnly);
            }
            let mut kept_names = Vec::with_capacity(names.len() - 1);
            let mut kept = Matrix::zeros(matrix.rows(), names.len() - 1);
            let mut series = Vec::with_capacity(matrix.rows());
            for r in 0..matrix.rows() {
                series.push(matrix.get(r, bench_col));
            }
            let mut out_col = 0;
            for (c, name) in names.iter().enumerate() {
                if c == bench_col {
                    continue;
                }
                kept_names.push(name.clone());
                for r in 0..matrix.rows() {
                    kept.set(r, out_col, matrix.get(r, c));
                }
                out_col += 1;
            }
            (kept_names, kept, Some(series))
        }
        None => (names, matrix, None),
    };

    let panel = ReturnsPanel::new(names, dates, matrix, benchmark_series);
    let panel = match mode {
        PanelMode::Returns if kind == ReturnsKind::Log => panel?.to_log_returns()?,
        _ => panel?,
    };
    Ok(panel)
}

/// Writes a panel back out in the identical wide format (mode=returns).
/// The benchmark series, if present, is emitted as a final column.
pub fn save_panel(
    path: &Path,
    panel: &ReturnsPanel,
    benchmark_name: &str,
) -> Result<(), DataError> {
    let mut out = String::from("date");
    for name in panel.assets() {
        out.push(',');
        out.push_str(name);
    }
    if panel.benchmark().is_some() {
        out.push(',');
        out.push_str(benchmark_name);
    }
    out.push('\n');
    let returns = panel.returns();
    for (t, date) in panel.dates().iter().enumerate() {
        out.push_str(date);
        for c in 0..panel.n_assets() {
            out.push(',');
            out.push_str(&format!("{}", returns.get(t, c)));
        }
        if let Some(b) = panel.benchmark() {
            out.push(',');
            out.push_str(&format!("{}", b[t]));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a file via a temp sibling and rename, so partially written
/// output never lands under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let wrap = |source: std::io::Error| DataError::Write { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(wrap)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut file = fs::File::create(&tmp).map_err(wrap)?;
        file.write_all(bytes).map_err(wrap)?;
        file.sync_all().map_err(wrap)?;
    }
    fs::rename(&tmp, path).map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn prices_convert_to_simple_returns() {
        let (_dir, path) = write_temp("date,X\n2020-01-01,100\n2020-01-02,110\n2020-01-03,99\n");
        let panel = load_panel(&path, PanelMode::Prices, None, ReturnsKind::Simple).unwrap();
        assert_eq!(panel.dates(), &["2020-01-02".to_string(), "2020-01-03".to_string()]);
        assert!((panel.returns().get(0, 0) - 0.10).abs() < 1e-12);
        assert!((panel.returns().get(1, 0) + 0.10).abs() < 1e-12);
    }

    #[test]
    fn returns_mode_passes_values_through() {
        let (_dir, path) = write_temp("date,X,Y\nd1,0.01,-0.02\nd2,0.005,0.03\n");
        let panel = load_panel(&path, PanelMode::Returns, None, ReturnsKind::Simple).unwrap();
        assert_eq!(panel.returns().get(0, 1), -0.02);
        assert_eq!(panel.returns().get(1, 0), 0.005);
    }

    #[test]
    fn duplicate_date_is_rejected_by_name() {
        let (_dir, path) =
            write_temp("date,X\n2020-01-01,100\n2020-01-02,101\n2020-01-02,102\n2020-01-03,103\n");
        match load_panel(&path, PanelMode::Prices, None, ReturnsKind::Simple) {
            Err(DataError::NonMonotoneDate { row, date }) => {
                assert_eq!(row, 4);
                assert_eq!(date, "2020-01-02");
            }
            other => panic!("expected NonMonotoneDate, got {other:?}"),
        }
    }

    #[test]
    fn missing_value_is_rejected_with_location() {
        let (_dir, path) = write_temp("date,X,Y\nd1,0.01,\nd2,0.02,0.01\n");
        match load_panel(&path, PanelMode::Returns, None, ReturnsKind::Simple) {
            Err(DataError::BadCell { row, column }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "Y");
            }
            other => panic!("expected BadCell, got {other:?}"),
        }
    }

    #[test]
    fn too_few_price_rows_is_rejected() {
        let (_dir, path) = write_temp("date,X\nd1,100\nd2,101\n");
        assert!(matches!(
            load_panel(&path, PanelMode::Prices, None, ReturnsKind::Simple),
            Err(DataError::Panel(PanelError::TooFewRows { rows: 2 }))
        ));
    }

    #[test]
    fn benchmark_column_is_split_out() {
        let (_dir, path) = write_temp("date,X,BMK,Y\nd1,0.01,0.002,0.03\nd2,0.02,-0.001,0.01\n");
        let panel =
            load_panel(&path, PanelMode::Returns, Some("BMK"), ReturnsKind::Simple).unwrap();
        assert_eq!(panel.assets(), &["X".to_string(), "Y".to_string()]);
        assert_eq!(panel.benchmark().unwrap(), &[0.002, -0.001]);
        assert_eq!(panel.returns().get(0, 1), 0.03);
    }

    #[test]
    fn compounding_loaded_returns_recovers_prices() {
        let prices = [100.0, 103.4, 99.2, 107.8, 101.1];
        let mut csv = String::from("date,X\n");
        for (i, p) in prices.iter().enumerate() {
            csv.push_str(&format!("2020-01-{:02},{p}\n", i + 1));
        }
        let (_dir, path) = write_temp(&csv);
        let panel = load_panel(&path, PanelMode::Prices, None, ReturnsKind::Simple).unwrap();
        let mut level = prices[0];
        for t in 0..panel.periods() {
            level *= 1.0 + panel.returns().get(t, 0);
            let expected = prices[t + 1];
            assert!((level - expected).abs() <= 1e-12 * expected.abs());
        }
    }

    #[test]
    fn save_then_load_round_trips() {
        let (_dir, path) = write_temp("date,X,Y\nd1,0.01,-0.02\nd2,0.005,0.03\nd3,-0.01,0.0\n");
        let panel = load_panel(&path, PanelMode::Returns, Some("Y"), ReturnsKind::Simple).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("resaved.csv");
        save_panel(&out, &panel, "Y").unwrap();
        let reloaded =
            load_panel(&out, PanelMode::Returns, Some("Y"), ReturnsKind::Simple).unwrap();
        assert_eq!(panel, reloaded);
    }

    #[test]
    fn column_order_is_preserved_from_the_file() {
        let (_dir, path) = write_temp("date,Z,A,M\nd1,0.1,0.2,0.3\nd2,0.1,0.2,0.3\n");
        let panel = load_panel(&path, PanelMode::Returns, None, ReturnsKind::Simple).unwrap();
        assert_eq!(panel.assets(), &["Z".to_string(), "A".to_string(), "M".to_string()]);
    }
}
