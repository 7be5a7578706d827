use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{DatasetError, PanelFrame};

/// Column layout of a price CSV.
///
/// Every column other than date, hour and price is read as a numeric feature
/// unless `features` restricts the selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub date_column: String,
    pub hour_column: String,
    pub price_column: String,
    /// Feature columns that must be present.
    pub required_features: Vec<String>,
    /// Explicit feature selection; `None` takes every remaining column.
    pub features: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date_column: "date".into(),
            hour_column: "hour".into(),
            price_column: "price".into(),
            required_features: Vec::new(),
            features: None,
        }
    }
}

/// A data row that was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowIssue {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CsvIngest {
    pub panel: PanelFrame,
    /// Data rows in the file, valid or not.
    pub rows_read: usize,
    pub skipped: Vec<RowIssue>,
}

impl CsvIngest {
    pub fn rows_accepted(&self) -> usize {
        self.rows_read - self.skipped.len()
    }
}

struct ParsedRow {
    price: f64,
    features: Vec<f64>,
}

/// Reads a day-ahead price CSV into a validated [`PanelFrame`].
///
/// Rows with unparseable or missing values are skipped and reported in
/// [`CsvIngest::skipped`]; the panel spans the full calendar between the first
/// and last valid day, so missing days show up as invalid cells.
pub fn load_prices_csv(path: &Path, schema: &CsvSchema) -> Result<CsvIngest, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let date_col = find(&schema.date_column)?;
    let hour_col = find(&schema.hour_column)?;
    let price_col = find(&schema.price_column)?;
    for name in &schema.required_features {
        find(name)?;
    }
    let feature_names: Vec<String> = match &schema.features {
        Some(list) => list.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![date_col, hour_col, price_col].contains(i))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let feature_cols = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows: BTreeMap<(NaiveDate, u8), ParsedRow> = BTreeMap::new();
    let mut seen: BTreeSet<(NaiveDate, u8)> = BTreeSet::new();
    let mut skipped = Vec::new();
    let mut rows_read = 0usize;

    for record in reader.records() {
        let record = record?;
        rows_read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");

        let day = match NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => {
                skipped.push(RowIssue {
                    line,
                    reason: format!("unparseable date `{}`", field(date_col)),
                });
                continue;
            }
        };
        let hour = match field(hour_col).parse::<u8>() {
            Ok(h) if h <= 23 => h,
            _ => {
                skipped.push(RowIssue {
                    line,
                    reason: format!("invalid hour `{}`", field(hour_col)),
                });
                continue;
            }
        };
        if !seen.insert((day, hour)) {
            return Err(DatasetError::DuplicateKey { day, hour, line });
        }
        let parse = |i: usize, name: &str| -> Result<f64, String> {
            let raw = field(i);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("unparseable numeric `{raw}` in column `{name}`")),
            }
        };
        let price = match parse(price_col, &schema.price_column) {
            Ok(p) => p,
            Err(reason) => {
                skipped.push(RowIssue { line, reason });
                continue;
            }
        };
        let features: Result<Vec<f64>, String> = feature_cols
            .iter()
            .zip(&feature_names)
            .map(|(&i, n)| parse(i, n))
            .collect();
        match features {
            Ok(features) => {
                rows.insert((day, hour), ParsedRow { price, features });
            }
            Err(reason) => skipped.push(RowIssue { line, reason }),
        }
    }

    let (first, last) = match (rows.keys().next(), rows.keys().next_back()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(DatasetError::Empty),
    };
    let hours: Vec<u8> = rows
        .keys()
        .map(|k| k.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let days: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    let nf = feature_names.len();
    let cells = days.len() * hours.len();
    let mut price = vec![f64::NAN; cells];
    let mut features = vec![f64::NAN; cells * nf];
    let mut valid = vec![false; cells];
    for ((day, hour), row) in rows {
        let d = (day - first).num_days() as usize;
        let h = hours.iter().position(|x| *x == hour).expect("hour collected above");
        let c = d * hours.len() + h;
        price[c] = row.price;
        features[c * nf..(c + 1) * nf].copy_from_slice(&row.features);
        valid[c] = true;
    }
    let panel = PanelFrame::new(days, hours, feature_names, price, features, valid)?;
    Ok(CsvIngest {
        panel,
        rows_read,
        skipped,
    })
}

/// Writes the valid cells of a panel in the layout [`load_prices_csv`] reads
/// with the default schema.
pub fn write_panel_csv(panel: &PanelFrame, path: &Path) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["date".to_string(), "hour".into(), "price".into()];
    header.extend(panel.feature_names().iter().cloned());
    writer.write_record(&header)?;
    for (d, day) in panel.days().iter().enumerate() {
        for (h, hour) in panel.hours().iter().enumerate() {
            if !panel.is_valid(d, h) {
                continue;
            }
            let mut rec = vec![
                day.format("%Y-%m-%d").to_string(),
                hour.to_string(),
                panel.price(d, h).to_string(),
            ];
            rec.extend(panel.features(d, h).iter().map(|v| v.to_string()));
            writer.write_record(&rec)?;
        }
    }
    let mut inner = writer.into_inner().map_err(|e| io_err(e.into_error()))?;
    inner.flush().map_err(io_err)?;
    Ok(())
}
