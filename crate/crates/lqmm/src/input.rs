//! CSV input and output of longitudinal datasets, and quantile-list parsing.
//!
//! One observation per row with a header. Rows are grouped into clusters by
//! the group column; clusters appear in order of first appearance, rows keep
//! file order within their cluster.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use lqmm_core::{ClusterData, LongitudinalDataset, Matrix, QuantileLevel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name used for a column of ones.
pub const INTERCEPT: &str = "(Intercept)";

/// Which columns form the response, the two design matrices and the grouping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub response: String,
    /// Fixed-effects covariates, excluding the intercept.
    pub fixed: Vec<String>,
    /// Random-effects covariates; `1` or `intercept` denotes a random intercept.
    pub random: Vec<String>,
    pub group: String,
    /// Prepend an intercept to the fixed effects.
    pub intercept: bool,
}

/// Column names of the assembled design, intercepts included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignNames {
    pub fixed: Vec<String>,
    pub random: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: LongitudinalDataset,
    pub names: DesignNames,
    /// Rows skipped because a used column was empty or `NA`.
    pub dropped_rows: usize,
}

fn is_intercept_token(name: &str) -> bool {
    name == "1" || name.eq_ignore_ascii_case("intercept") || name == INTERCEPT
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

enum Column {
    Ones,
    Index(usize),
}

fn locate(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Input(format!("column {name:?} not found in the header")))
}

/// Reads a dataset from CSV text.
pub fn read_dataset<R: io::Read>(reader: R, spec: &DesignSpec) -> Result<LoadedData> {
    read_dataset_named(reader, spec, Path::new("<input>"))
}

/// Reads a dataset from a CSV file.
pub fn read_dataset_file(path: &Path, spec: &DesignSpec) -> Result<LoadedData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_named(file, spec, path)
}

fn read_dataset_named<R: io::Read>(reader: R, spec: &DesignSpec, path: &Path) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();

    let response = locate(&headers, &spec.response)?;
    let group = locate(&headers, &spec.group)?;
    let mut fixed_cols = Vec::new();
    let mut fixed_names = Vec::new();
    if spec.intercept {
        fixed_cols.push(Column::Ones);
        fixed_names.push(INTERCEPT.to_string());
    }
    for name in &spec.fixed {
        if is_intercept_token(name) {
            return Err(Error::Input(
                "the fixed intercept is controlled by --no-intercept, not by a column name".into(),
            ));
        }
        fixed_cols.push(Column::Index(locate(&headers, name)?));
        fixed_names.push(name.clone());
    }
    let mut random_cols = Vec::new();
    let mut random_names = Vec::new();
    for name in &spec.random {
        if is_intercept_token(name) {
            random_cols.push(Column::Ones);
            random_names.push(INTERCEPT.to_string());
        } else {
            random_cols.push(Column::Index(locate(&headers, name)?));
            random_names.push(name.clone());
        }
    }
    if fixed_cols.is_empty() {
        return Err(Error::Input("the model needs at least one fixed effect".into()));
    }
    if random_cols.is_empty() {
        return Err(Error::Input("the model needs at least one random effect".into()));
    }

    struct Rows {
        id: String,
        y: Vec<f64>,
        x: Vec<f64>,
        z: Vec<f64>,
    }
    let mut clusters: Vec<Rows> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dropped_rows = 0;

    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let line = row + 2;
        let field = |col: usize| record.get(col).unwrap_or("");
        let used = std::iter::once(response)
            .chain(std::iter::once(group))
            .chain(fixed_cols.iter().chain(&random_cols).filter_map(|c| match c {
                Column::Index(i) => Some(*i),
                Column::Ones => None,
            }));
        if used.into_iter().any(|c| is_missing(field(c))) {
            dropped_rows += 1;
            continue;
        }
        let number = |col: usize| -> Result<f64> {
            let text = field(col);
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Input(format!(
                        "line {line}: column {:?} holds {text:?}, not a finite number",
                        &headers[col]
                    ))
                })
        };
        let value = |c: &Column| match c {
            Column::Ones => Ok(1.0),
            Column::Index(i) => number(*i),
        };
        let id = field(group).to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            clusters.push(Rows {
                id,
                y: Vec::new(),
                x: Vec::new(),
                z: Vec::new(),
            });
            clusters.len() - 1
        });
        let rows = &mut clusters[slot];
        rows.y.push(number(response)?);
        for c in &fixed_cols {
            rows.x.push(value(c)?);
        }
        for c in &random_cols {
            rows.z.push(value(c)?);
        }
    }

    let p = fixed_cols.len();
    let q = random_cols.len();
    let clusters = clusters
        .into_iter()
        .map(|r| {
            let n = r.y.len();
            ClusterData::new(
                r.id,
                r.y,
                Matrix::from_row_major(n, p, r.x)?,
                Matrix::from_row_major(n, q, r.z)?,
            )
        })
        .collect::<lqmm_core::Result<Vec<_>>>()?;
    Ok(LoadedData {
        dataset: LongitudinalDataset::new(clusters)?,
        names: DesignNames {
            fixed: fixed_names,
            random: random_names,
        },
        dropped_rows,
    })
}

/// Writes a dataset as CSV with columns `group, y, x.., z..`.
///
/// Fixed-effects columns listed in `skip_fixed` (typically the intercept,
/// index 0) are left out; the remaining ones are named `x1, x2, …` and the
/// random-effects columns `z1, z2, …`.
pub fn write_dataset<W: io::Write>(
    writer: W,
    data: &LongitudinalDataset,
    skip_fixed: &[usize],
) -> Result<()> {
    let keep: Vec<usize> = (0..data.p()).filter(|j| !skip_fixed.contains(j)).collect();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["group".to_string(), "y".to_string()];
    header.extend((1..=keep.len()).map(|k| format!("x{k}")));
    header.extend((1..=data.q()).map(|k| format!("z{k}")));
    let out = Path::new("<output>");
    wtr.write_record(&header).map_err(|e| Error::csv(out, e))?;
    for c in data.clusters() {
        for j in 0..c.len() {
            let mut rec = vec![c.id.clone(), c.y[j].to_string()];
            rec.extend(keep.iter().map(|&k| c.x[(j, k)].to_string()));
            rec.extend(c.z.row(j).iter().map(f64::to_string));
            wtr.write_record(&rec).map_err(|e| Error::csv(out, e))?;
        }
    }
    wtr.flush().map_err(|e| Error::io(out, e))?;
    Ok(())
}

/// Parses a quantile list such as `0.1,0.5,0.9` or `1:19/20` (the levels
/// 1/20, 2/20, …, 19/20). Items may be mixed.
pub fn parse_taus(text: &str) -> Result<Vec<QuantileLevel>> {
    let bad = |item: &str| Error::Input(format!("cannot parse quantile level {item:?}"));
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((range, denom)) = item.split_once('/') {
            let denom: u32 = denom.trim().parse().map_err(|_| bad(item))?;
            let (lo, hi) = match range.split_once(':') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (range.trim(), range.trim()),
            };
            let lo: u32 = lo.parse().map_err(|_| bad(item))?;
            let hi: u32 = hi.parse().map_err(|_| bad(item))?;
            if denom == 0 || lo > hi {
                return Err(bad(item));
            }
            for k in lo..=hi {
                out.push(QuantileLevel::new(f64::from(k) / f64::from(denom))?);
            }
        } else {
            let t: f64 = item.parse().map_err(|_| bad(item))?;
            out.push(QuantileLevel::new(t)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Input("no quantile levels given".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DesignSpec {
        DesignSpec {
            response: "y".into(),
            fixed: vec!["age".into()],
            random: vec!["1".into()],
            group: "id".into(),
            intercept: true,
        }
    }

    const CSV: &str = "id,y,age\nb,1.0,3\na,2.0,4\nb,3.5,5\na,NA,6\nc,4,7\n";

    #[test]
    fn groups_by_first_appearance_and_adds_intercepts() {
        let loaded = read_dataset(CSV.as_bytes(), &spec()).unwrap();
        let data = &loaded.dataset;
        let ids: Vec<&str> = data.clusters().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(loaded.dropped_rows, 1);
        assert_eq!(data.n_obs(), 4);
        let b = &data.clusters()[0];
        assert_eq!(b.y, vec![1.0, 3.5]);
        assert_eq!(b.x.row(1), &[1.0, 5.0]);
        assert_eq!(b.z.row(0), &[1.0]);
        assert_eq!(loaded.names.fixed, vec![INTERCEPT, "age"]);
        assert_eq!(loaded.names.random, vec![INTERCEPT]);
    }

    #[test]
    fn no_intercept_and_random_slopes() {
        let mut s = spec();
        s.intercept = false;
        s.random = vec!["age".into()];
        let loaded = read_dataset(CSV.as_bytes(), &s).unwrap();
        assert_eq!(loaded.dataset.p(), 1);
        assert_eq!(loaded.dataset.clusters()[0].z.row(0), &[3.0]);
    }

    #[test]
    fn reports_unknown_columns_and_bad_numbers() {
        let mut s = spec();
        s.fixed = vec!["height".into()];
        assert!(matches!(read_dataset(CSV.as_bytes(), &s), Err(Error::Input(_))));
        let err = read_dataset("id,y,age\na,x,1\n".as_bytes(), &spec()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn write_then_read_round_trips() {
        let loaded = read_dataset(CSV.as_bytes(), &spec()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &loaded.dataset, &[0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("group,y,x1,z1\n"));
        let spec2 = DesignSpec {
            response: "y".into(),
            fixed: vec!["x1".into()],
            random: vec!["z1".into()],
            group: "group".into(),
            intercept: true,
        };
        let again = read_dataset(text.as_bytes(), &spec2).unwrap();
        assert_eq!(again.dataset.clusters(), loaded.dataset.clusters());
    }

    #[test]
    fn parses_quantile_lists() {
        let v: Vec<f64> = parse_taus("0.25, 0.5").unwrap().iter().map(|t| t.value()).collect();
        assert_eq!(v, [0.25, 0.5]);
        let vig = parse_taus("1:19/20").unwrap();
        assert_eq!(vig.len(), 19);
        assert_eq!(vig[0].value(), 0.05);
        assert_eq!(vig[18].value(), 0.95);
        assert!(parse_taus("1.5").is_err());
        assert!(parse_taus("0:3/3").is_err());
        assert!(parse_taus("").is_err());
    }
}
