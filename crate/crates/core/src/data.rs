//! Dataset loading, growth-rate transformations and column permutations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    /// `400 (log x_t - log x_{t-1})`, an annualized quarterly growth rate.
    #[serde(rename = "log_diff_400")]
    LogDiff400,
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Transform::None),
            "log_diff_400" => Ok(Transform::LogDiff400),
            other => Err(Error::UnknownTransform(other.to_string())),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::LogDiff400 => "log_diff_400",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `T × n` observations after transformation.
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
    pub transforms: Vec<Transform>,
    pub dates: Option<Vec<String>>,
}

impl Dataset {
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let n = values.ncols();
        Self {
            values,
            names: (1..=n).map(|i| format!("y{i}")).collect(),
            transforms: vec![Transform::None; n],
            dates: None,
        }
    }

    pub fn periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    /// The first `rows` observations.
    pub fn head(&self, rows: usize) -> Dataset {
        Dataset {
            values: self.values.rows(0, rows).into_owned(),
            names: self.names.clone(),
            transforms: self.transforms.clone(),
            dates: self.dates.as_ref().map(|d| d[..rows].to_vec()),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = Vec::new();
        if self.dates.is_some() {
            header.push("date".into());
        }
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.periods() {
            let mut rec: Vec<String> = Vec::new();
            if let Some(d) = &self.dates {
                rec.push(d[t].clone());
            }
            rec.extend((0..self.n()).map(|j| format!("{:e}", self.values[(t, j)])));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Transformation tag per mnemonic; unlisted columns are left untransformed.
pub type TransformSpec = BTreeMap<String, Transform>;

/// Read a two-column `mnemonic,transform` CSV.
pub fn load_transform_sidecar(path: &Path) -> Result<TransformSpec> {
    let mut rdr = open_csv(path, csv::ReaderBuilder::new().has_headers(false).flexible(true))?;
    let mut spec = TransformSpec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::RaggedCsv {
                row: row + 1,
                expected: 2,
                got: rec.len(),
            });
        }
        let name = rec[0].trim();
        if row == 0 && name.eq_ignore_ascii_case("mnemonic") {
            continue;
        }
        spec.insert(name.to_string(), rec[1].parse()?);
    }
    Ok(spec)
}

fn open_csv(path: &Path, builder: &mut csv::ReaderBuilder) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(builder.from_reader(file))
}

fn looks_like_date_column(header: &str, first_value: Option<&str>) -> bool {
    header.to_ascii_lowercase().contains("date")
        || first_value.is_some_and(|v| v.trim().parse::<f64>().is_err())
}

/// Load raw levels from a CSV with a header row and apply the transforms.
pub fn load_csv(path: &Path, spec: &TransformSpec) -> Result<Dataset> {
    let mut rdr = open_csv(path, csv::ReaderBuilder::new().flexible(true))?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    parse_records(&header, &records, spec)
}

fn parse_records(
    header: &[String],
    records: &[csv::StringRecord],
    spec: &TransformSpec,
) -> Result<Dataset> {
    let width = header.len();
    for (row, rec) in records.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::RaggedCsv {
                row: row + 1,
                expected: width,
                got: rec.len(),
            });
        }
    }
    let has_dates = width > 0
        && looks_like_date_column(&header[0], records.first().and_then(|r| r.get(0)));
    let first = usize::from(has_dates);
    let names: Vec<String> = header[first..].to_vec();
    if names.is_empty() || records.is_empty() {
        return Err(Error::InsufficientData("no data columns or rows".into()));
    }
    for key in spec.keys() {
        if !names.contains(key) {
            return Err(Error::Config(format!("transform given for unknown column `{key}`")));
        }
    }
    let transforms: Vec<Transform> = names
        .iter()
        .map(|n| spec.get(n).copied().unwrap_or_default())
        .collect();

    let t_raw = records.len();
    let mut raw = DMatrix::zeros(t_raw, names.len());
    for (row, rec) in records.iter().enumerate() {
        for (j, name) in names.iter().enumerate() {
            let field = rec[first + j].trim();
            raw[(row, j)] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::MissingValue {
                    column: name.clone(),
                    row: row + 1,
                })?;
        }
    }
    let dates = has_dates.then(|| records.iter().map(|r| r[0].trim().to_string()).collect());
    apply_transforms(raw, names, transforms, dates)
}

/// Apply per-column transforms to raw levels, dropping the first row for all
/// columns when any column is differenced.
pub fn apply_transforms(
    raw: DMatrix<f64>,
    names: Vec<String>,
    transforms: Vec<Transform>,
    dates: Option<Vec<String>>,
) -> Result<Dataset> {
    let (t_raw, n) = raw.shape();
    let differenced = transforms.contains(&Transform::LogDiff400);
    let drop = usize::from(differenced);
    if t_raw <= drop {
        return Err(Error::InsufficientData(
            "differencing needs at least two rows".into(),
        ));
    }
    let mut values = DMatrix::zeros(t_raw - drop, n);
    for (j, tr) in transforms.iter().enumerate() {
        match tr {
            Transform::None => {
                for t in drop..t_raw {
                    values[(t - drop, j)] = raw[(t, j)];
                }
            }
            Transform::LogDiff400 => {
                for t in 0..t_raw {
                    if !(raw[(t, j)] > 0.0) {
                        return Err(Error::NonPositiveForLog {
                            column: names[j].clone(),
                            row: t + 1,
                            value: raw[(t, j)],
                        });
                    }
                }
                for t in 1..t_raw {
                    values[(t - 1, j)] = 400.0 * (raw[(t, j)].ln() - raw[(t - 1, j)].ln());
                }
            }
        }
    }
    Ok(Dataset {
        values,
        names,
        transforms,
        dates: dates.map(|d| d[drop..].to_vec()),
    })
}

/// Rebuild levels from annualized log growth rates and a starting level.
pub fn accumulate_log_diff(first_level: f64, growth: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(growth.len() + 1);
    let mut level = first_level;
    out.push(level);
    for g in growth {
        level *= (g / 400.0).exp();
        out.push(level);
    }
    out
}

/// Reorder columns so that new column `k` is old column `order[k]` (0-based).
pub fn permute_columns(data: &Dataset, order: &[usize]) -> Result<Dataset> {
    let n = data.n();
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(Error::NotAPermutation(n));
    }
    for &k in order {
        if k >= n || seen[k] {
            return Err(Error::NotAPermutation(n));
        }
        seen[k] = true;
    }
    Ok(Dataset {
        values: DMatrix::from_fn(data.periods(), n, |t, k| data.values[(t, order[k])]),
        names: order.iter().map(|&k| data.names[k].clone()).collect(),
        transforms: order.iter().map(|&k| data.transforms[k]).collect(),
        dates: data.dates.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn spec(pairs: &[(&str, Transform)]) -> TransformSpec {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn growth_rate_formula() {
        let f = write("GDPC1\n100\n102\n");
        let d = load_csv(f.path(), &spec(&[("GDPC1", Transform::LogDiff400)])).unwrap();
        assert_eq!(d.periods(), 1);
        assert!((d.values[(0, 0)] - 400.0 * 1.02f64.ln()).abs() < 1e-12);
        assert!((d.values[(0, 0)] - 7.921).abs() < 1e-3);
    }

    #[test]
    fn untransformed_and_mixed_alignment() {
        let f = write("date,UNRATE,GDPC1\n1959Q1,5.8,100\n1959Q2,5.1,101\n1959Q3,5.3,103\n");
        let d = load_csv(f.path(), &TransformSpec::new()).unwrap();
        assert_eq!(d.values.column(0).as_slice(), &[5.8, 5.1, 5.3]);
        assert_eq!(d.dates.as_ref().unwrap()[0], "1959Q1");
        let d = load_csv(f.path(), &spec(&[("GDPC1", Transform::LogDiff400)])).unwrap();
        assert_eq!(d.periods(), 2);
        assert_eq!(d.values.column(0).as_slice(), &[5.1, 5.3]);
        assert_eq!(d.dates.unwrap(), vec!["1959Q2", "1959Q3"]);
    }

    #[test]
    fn load_errors() {
        let f = write("A,B\n1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), &TransformSpec::new()),
            Err(Error::RaggedCsv { row: 2, .. })
        ));
        let f = write("A\n1\n-1\n");
        assert!(matches!(
            load_csv(f.path(), &spec(&[("A", Transform::LogDiff400)])),
            Err(Error::NonPositiveForLog { .. })
        ));
        let f = write("A,B\n1,\n3,4\n");
        assert!(matches!(
            load_csv(f.path(), &TransformSpec::new()),
            Err(Error::MissingValue { .. })
        ));
        assert!(matches!(
            "log".parse::<Transform>(),
            Err(Error::UnknownTransform(_))
        ));
        let side = write("mnemonic,transform\nA,log_diff_400\nB,none\n");
        let s = load_transform_sidecar(side.path()).unwrap();
        assert_eq!(s["A"], Transform::LogDiff400);
        let bad = write("A,cube\n");
        assert!(matches!(
            load_transform_sidecar(bad.path()),
            Err(Error::UnknownTransform(_))
        ));
    }

    #[test]
    fn reversal_by_hand() {
        let d = Dataset::from_values(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let r = permute_columns(&d, &[2, 1, 0]).unwrap();
        assert_eq!(r.values, DMatrix::from_row_slice(2, 3, &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]));
        assert_eq!(r.names, vec!["y3", "y2", "y1"]);
        assert_eq!(permute_columns(&d, &[0, 1, 2]).unwrap(), d);
        assert!(matches!(
            permute_columns(&d, &[0, 0, 1]),
            Err(Error::NotAPermutation(3))
        ));
    }

    fn perm_strategy(n: usize) -> impl Strategy<Value = Vec<usize>> {
        Just((0..n).collect::<Vec<_>>()).prop_shuffle()
    }

    proptest! {
        #[test]
        fn permutations_compose(p in perm_strategy(5), q in perm_strategy(5)) {
            let d = Dataset::from_values(DMatrix::from_fn(3, 5, |t, j| (10 * t + j) as f64));
            let composed: Vec<usize> = (0..5).map(|k| p[q[k]]).collect();
            let once = permute_columns(&d, &composed).unwrap();
            let twice = permute_columns(&permute_columns(&d, &p).unwrap(), &q).unwrap();
            prop_assert_eq!(&once, &twice);
            let mut inverse = vec![0; 5];
            for (k, &v) in p.iter().enumerate() {
                inverse[v] = k;
            }
            let back = permute_columns(&permute_columns(&d, &p).unwrap(), &inverse).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn growth_rates_round_trip(levels in prop::collection::vec(0.01f64..1e6, 2..40)) {
            let raw = DMatrix::from_column_slice(levels.len(), 1, &levels);
            let d = apply_transforms(raw, vec!["x".into()], vec![Transform::LogDiff400], None).unwrap();
            let rebuilt = accumulate_log_diff(levels[0], d.values.column(0).as_slice());
            for (a, b) in rebuilt.iter().zip(&levels) {
                prop_assert!(((a - b) / b).abs() < 1e-10);
            }
        }
    }
}
