//! Surveillance counts, neighbourhood structure, population shares and
//! covariates, together with their CSV readers and writers.
//!
//! Rows of a [`CountsPanel`] are weeks (0-based internally, week index
//! `t + 1` in model formulas) and columns are spatial units.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ISO-8601 week label such as `2011-W06`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IsoWeek {
    pub year: i32,
    pub week: u32,
}

impl IsoWeek {
    pub fn new(year: i32, week: u32) -> Result<Self> {
        if week == 0 || week > weeks_in_year(year) {
            return Err(Error::Data(format!(
                "invalid calendar week: {year}-W{week:02}"
            )));
        }
        Ok(IsoWeek { year, week })
    }

    pub fn next(self) -> Self {
        if self.week >= weeks_in_year(self.year) {
            IsoWeek {
                year: self.year + 1,
                week: 1,
            }
        } else {
            IsoWeek {
                year: self.year,
                week: self.week + 1,
            }
        }
    }
}

/// Number of ISO weeks (52 or 53) in `year`.
pub fn weeks_in_year(year: i32) -> u32 {
    if NaiveDate::from_isoywd_opt(year, 53, Weekday::Mon).is_some() {
        53
    } else {
        52
    }
}

impl FromStr for IsoWeek {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let malformed = || Error::Data(format!("malformed week label {s:?} (expected YYYY-Www)"));
        let (year, week) = s.split_once("-W").ok_or_else(malformed)?;
        if year.len() != 4 || week.len() != 2 {
            return Err(malformed());
        }
        let year: i32 = year.parse().map_err(|_| malformed())?;
        let week: u32 = week.parse().map_err(|_| malformed())?;
        IsoWeek::new(year, week)
    }
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-W{:02}", self.year, self.week)
    }
}

impl TryFrom<String> for IsoWeek {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<IsoWeek> for String {
    fn from(w: IsoWeek) -> String {
        w.to_string()
    }
}

/// `n` consecutive weeks starting at `start`.
pub fn week_sequence(start: IsoWeek, n: usize) -> Vec<IsoWeek> {
    std::iter::successors(Some(start), |w| Some(w.next()))
        .take(n)
        .collect()
}

/// Weekly counts, `T` weeks by `m` units.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsPanel {
    weeks: Vec<IsoWeek>,
    units: Vec<String>,
    counts: Vec<u64>,
}

impl CountsPanel {
    /// Builds a panel from row-major counts, validating shape and week succession.
    pub fn new(weeks: Vec<IsoWeek>, units: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let (t_len, m) = (weeks.len(), units.len());
        if m == 0 {
            return Err(Error::Data("panel needs at least one unit".into()));
        }
        if t_len < 2 {
            return Err(Error::Data(format!(
                "panel needs at least two weeks, got {t_len}"
            )));
        }
        if counts.len() != t_len * m {
            return Err(Error::Data(format!(
                "expected {} counts for {t_len} weeks x {m} units, got {}",
                t_len * m,
                counts.len()
            )));
        }
        for pair in weeks.windows(2) {
            if pair[0].next() != pair[1] {
                return Err(Error::Data(format!(
                    "week {} does not follow {}",
                    pair[1], pair[0]
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for u in &units {
            if !seen.insert(u.as_str()) {
                return Err(Error::Data(format!("duplicate unit name {u:?}")));
            }
        }
        Ok(CountsPanel {
            weeks,
            units,
            counts,
        })
    }

    /// Convenience constructor with generated unit names and weeks.
    pub fn from_rows(start: IsoWeek, rows: &[Vec<u64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Data("ragged rows".into()));
        }
        let units = (1..=m).map(|i| format!("unit{i}")).collect();
        CountsPanel::new(
            week_sequence(start, rows.len()),
            units,
            rows.iter().flatten().copied().collect(),
        )
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn weeks(&self) -> &[IsoWeek] {
        &self.weeks
    }

    #[inline]
    pub fn count(&self, t: usize, i: usize) -> u64 {
        self.counts[t * self.units.len() + i]
    }

    pub fn row(&self, t: usize) -> &[u64] {
        let m = self.units.len();
        &self.counts[t * m..(t + 1) * m]
    }

    /// Flat row-major counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn calendar_week(&self, t: usize) -> u32 {
        self.weeks[t].week
    }

    /// Column of a single unit.
    pub fn unit_series(&self, i: usize) -> Vec<u64> {
        (0..self.n_weeks()).map(|t| self.count(t, i)).collect()
    }

    /// First `len` weeks.
    pub fn prefix(&self, len: usize) -> Result<CountsPanel> {
        if len > self.n_weeks() {
            return Err(Error::Data(format!(
                "prefix of {len} weeks exceeds panel length {}",
                self.n_weeks()
            )));
        }
        CountsPanel::new(
            self.weeks[..len].to_vec(),
            self.units.clone(),
            self.counts[..len * self.n_units()].to_vec(),
        )
    }

    /// Weeks `range` of the panel.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<CountsPanel> {
        if range.start > range.end || range.end > self.n_weeks() {
            return Err(Error::Data(format!(
                "window {range:?} outside panel of {} weeks",
                self.n_weeks()
            )));
        }
        let m = self.n_units();
        CountsPanel::new(
            self.weeks[range.clone()].to_vec(),
            self.units.clone(),
            self.counts[range.start * m..range.end * m].to_vec(),
        )
    }

    /// Index of a week label within the panel.
    pub fn week_position(&self, week: IsoWeek) -> Option<usize> {
        self.weeks.iter().position(|w| *w == week)
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(rdr)
}

fn at(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::DataAt {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_count(field: &str) -> std::result::Result<u64, String> {
    if field.is_empty() {
        return Err("missing count".into());
    }
    if let Ok(v) = field.parse::<i64>() {
        return if v < 0 {
            Err(format!("negative count {v}"))
        } else {
            Ok(v as u64)
        };
    }
    Err(format!("non-integer count {field:?}"))
}

/// Reads a wide counts CSV (`week,<unit1>,...,<unitm>`).
pub fn load_counts(path: impl AsRef<Path>) -> Result<CountsPanel> {
    let path = path.as_ref();
    read_counts(open(path)?, path)
}

/// Same as [`load_counts`] from any reader; `source` names it in errors.
pub fn read_counts<R: Read>(rdr: R, source: &Path) -> Result<CountsPanel> {
    let mut records = csv_reader(rdr).into_records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(at(source, 1, "empty file")),
    };
    if header.get(0) != Some("week") {
        return Err(at(source, 1, "first header column must be `week`"));
    }
    let units: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if units.is_empty() {
        return Err(at(source, 1, "no unit columns"));
    }
    let mut weeks = Vec::new();
    let mut counts = Vec::new();
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != units.len() + 1 {
            return Err(at(
                source,
                line,
                format!(
                    "ragged row: {} fields, expected {}",
                    rec.len(),
                    units.len() + 1
                ),
            ));
        }
        let week: IsoWeek = rec[0]
            .parse()
            .map_err(|e: Error| at(source, line, e.to_string()))?;
        weeks.push(week);
        for field in rec.iter().skip(1) {
            counts.push(parse_count(field).map_err(|m| at(source, line, m))?);
        }
    }
    CountsPanel::new(weeks, units, counts).map_err(|e| match e {
        Error::Data(msg) => at(source, 0, msg),
        other => other,
    })
}

/// Writes the canonical wide CSV; inverse of [`read_counts`].
pub fn write_counts<W: Write>(panel: &CountsPanel, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    let mut header = vec!["week".to_string()];
    header.extend(panel.units.iter().cloned());
    w.write_record(&header)?;
    for t in 0..panel.n_weeks() {
        let mut rec = vec![panel.weeks[t].to_string()];
        rec.extend(panel.row(t).iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<counts output>", e))?;
    Ok(())
}

/// Path distances `o_ji` between units; zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourhoodMatrix {
    m: usize,
    order: Vec<u32>,
}

impl NeighbourhoodMatrix {
    pub fn new(m: usize, order: Vec<u32>) -> Result<Self> {
        if order.len() != m * m {
            return Err(Error::Data(format!(
                "neighbourhood matrix must be {m}x{m}, got {} entries",
                order.len()
            )));
        }
        for j in 0..m {
            if order[j * m + j] != 0 {
                return Err(Error::Data(format!("nonzero diagonal at unit {}", j + 1)));
            }
            for i in 0..m {
                if order[j * m + i] != order[i * m + j] {
                    return Err(Error::Data(format!(
                        "asymmetric neighbourhood: o[{},{}]={} but o[{},{}]={}",
                        j + 1,
                        i + 1,
                        order[j * m + i],
                        i + 1,
                        j + 1,
                        order[i * m + j]
                    )));
                }
                if i != j && order[j * m + i] == 0 {
                    return Err(Error::Data(format!(
                        "zero path distance between distinct units {} and {}",
                        j + 1,
                        i + 1
                    )));
                }
            }
        }
        Ok(NeighbourhoodMatrix { m, order })
    }

    /// Path distances from a boolean adjacency matrix (breadth-first search).
    pub fn from_adjacency(m: usize, adjacent: &[bool]) -> Result<Self> {
        if adjacent.len() != m * m {
            return Err(Error::Data("adjacency matrix has wrong size".into()));
        }
        let mut order = vec![u32::MAX; m * m];
        for src in 0..m {
            order[src * m + src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let d = order[src * m + u];
                for v in 0..m {
                    if v != u && adjacent[u * m + v] && order[src * m + v] == u32::MAX {
                        order[src * m + v] = d + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        if order.contains(&u32::MAX) {
            return Err(Error::Data("neighbourhood graph is not connected".into()));
        }
        NeighbourhoodMatrix::new(m, order)
    }

    /// Units on a line: `o_ji = |i - j|`.
    pub fn chain(m: usize) -> Self {
        let order = (0..m)
            .flat_map(|j| (0..m).map(move |i| j.abs_diff(i) as u32))
            .collect();
        NeighbourhoodMatrix { m, order }
    }

    pub fn n_units(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn order(&self, j: usize, i: usize) -> u32 {
        self.order[j * self.m + i]
    }
}

/// Reads a square neighbourhood CSV with unit labels in the header row and
/// first column, reordering it to match `units`.
pub fn load_neighbourhood(path: impl AsRef<Path>, units: &[String]) -> Result<NeighbourhoodMatrix> {
    let path = path.as_ref();
    read_neighbourhood(open(path)?, path, units)
}

pub fn read_neighbourhood<R: Read>(
    rdr: R,
    source: &Path,
    units: &[String],
) -> Result<NeighbourhoodMatrix> {
    let mut records = csv_reader(rdr).into_records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(at(source, 1, "empty file")),
    };
    let cols: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let m = units.len();
    let col_pos = label_positions(&cols, units).map_err(|m| at(source, 1, m))?;
    let mut rows: Vec<Option<Vec<u32>>> = vec![None; m];
    let mut n_rows = 0;
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != cols.len() + 1 {
            return Err(at(source, line, "ragged row"));
        }
        let label = &rec[0];
        let r = units.iter().position(|u| u == label).ok_or_else(|| {
            at(
                source,
                line,
                format!("label mismatch: unknown unit {label:?}"),
            )
        })?;
        if rows[r].is_some() {
            return Err(at(
                source,
                line,
                format!("duplicate row for unit {label:?}"),
            ));
        }
        let mut vals = vec![0u32; m];
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: u32 = field
                .parse()
                .map_err(|_| at(source, line, format!("invalid path distance {field:?}")))?;
            vals[col_pos[c]] = v;
        }
        rows[r] = Some(vals);
        n_rows += 1;
    }
    if n_rows != m {
        return Err(at(
            source,
            0,
            format!("label mismatch: expected {m} rows, found {n_rows}"),
        ));
    }
    let order = rows.into_iter().flat_map(Option::unwrap).collect();
    NeighbourhoodMatrix::new(m, order).map_err(|e| match e {
        Error::Data(msg) => at(source, 0, msg),
        other => other,
    })
}

fn label_positions(cols: &[String], units: &[String]) -> std::result::Result<Vec<usize>, String> {
    if cols.len() != units.len() {
        return Err(format!(
            "label mismatch: {} columns for {} units",
            cols.len(),
            units.len()
        ));
    }
    let mut pos = Vec::with_capacity(cols.len());
    for c in cols {
        let p = units
            .iter()
            .position(|u| u == c)
            .ok_or_else(|| format!("label mismatch: unknown unit {c:?}"))?;
        if pos.contains(&p) {
            return Err(format!("duplicate column {c:?}"));
        }
        pos.push(p);
    }
    Ok(pos)
}

/// Fractions `e_i` of the total population, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationShares {
    shares: Vec<f64>,
}

impl PopulationShares {
    /// Normalizes positive weights (shares or raw population sizes).
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("no population values".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Data(format!(
                "population share must be positive, got {v}"
            )));
        }
        let total: f64 = values.iter().sum();
        Ok(PopulationShares {
            shares: values.iter().map(|v| v / total).collect(),
        })
    }

    pub fn equal(m: usize) -> Self {
        PopulationShares {
            shares: vec![1.0 / m as f64; m],
        }
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }
}

/// Reads `unit,share` rows, matched to `units` by label.
pub fn load_populations(path: impl AsRef<Path>, units: &[String]) -> Result<PopulationShares> {
    let path = path.as_ref();
    let mut records = csv_reader(open(path)?).into_records();
    match records.next() {
        Some(r) => {
            let h = r?;
            if h.get(0) != Some("unit") || h.get(1) != Some("share") {
                return Err(at(path, 1, "header must be `unit,share`"));
            }
        }
        None => return Err(at(path, 1, "empty file")),
    }
    let mut vals = vec![f64::NAN; units.len()];
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != 2 {
            return Err(at(path, line, "ragged row"));
        }
        let i = units.iter().position(|u| u == &rec[0]).ok_or_else(|| {
            at(
                path,
                line,
                format!("label mismatch: unknown unit {:?}", &rec[0]),
            )
        })?;
        vals[i] = rec[1]
            .parse()
            .map_err(|_| at(path, line, format!("invalid share {:?}", &rec[1])))?;
    }
    if let Some(i) = vals.iter().position(|v| v.is_nan()) {
        return Err(at(
            path,
            0,
            format!("label mismatch: no share for unit {:?}", units[i]),
        ));
    }
    PopulationShares::from_values(&vals)
}

/// Named real-valued covariate columns of length `T`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovariateTable {
    columns: Vec<(String, Vec<f64>)>,
}

impl CovariateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let name = name.into();
        match self.columns.iter_mut().find(|(n, _)| *n == name) {
            Some(col) => col.1 = values,
            None => self.columns.push((name, values)),
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// Rows `range` of every column.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<CovariateTable> {
        let mut out = CovariateTable::new();
        for (name, col) in &self.columns {
            let part = col.get(range.clone()).ok_or_else(|| {
                Error::Data(format!("covariate {name:?} does not cover rows {range:?}"))
            })?;
            out.insert(name.clone(), part.to_vec());
        }
        Ok(out)
    }

    /// Table holding the derived christmas indicator and linear trend for `panel`.
    pub fn derived(panel: &CountsPanel) -> Self {
        let mut table = CovariateTable::new();
        table.insert("christmas", christmas_indicator(panel));
        let n = panel.n_weeks() as f64;
        table.insert(
            "trend",
            (1..=panel.n_weeks()).map(|t| t as f64 / n).collect(),
        );
        table
    }
}

/// Reads `week,<col1>,...` covariates aligned row-by-row with `panel`.
pub fn load_covariates(path: impl AsRef<Path>, panel: &CountsPanel) -> Result<CovariateTable> {
    let path = path.as_ref();
    let mut records = csv_reader(open(path)?).into_records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(at(path, 1, "empty file")),
    };
    if header.get(0) != Some("week") {
        return Err(at(path, 1, "first header column must be `week`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut cols = vec![Vec::new(); names.len()];
    let mut t = 0;
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != names.len() + 1 {
            return Err(at(path, line, "ragged row"));
        }
        let week: IsoWeek = rec[0]
            .parse()
            .map_err(|e: Error| at(path, line, e.to_string()))?;
        if panel.weeks().get(t) != Some(&week) {
            return Err(at(
                path,
                line,
                format!("week {week} not aligned with counts"),
            ));
        }
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| at(path, line, format!("invalid covariate value {field:?}")))?;
            if !v.is_finite() {
                return Err(at(path, line, "non-finite covariate value"));
            }
            cols[c].push(v);
        }
        t += 1;
    }
    if t != panel.n_weeks() {
        return Err(at(
            path,
            0,
            format!(
                "covariates cover {t} weeks, counts cover {}",
                panel.n_weeks()
            ),
        ));
    }
    let mut table = CovariateTable::new();
    for (n, c) in names.into_iter().zip(cols) {
        table.insert(n, c);
    }
    Ok(table)
}

/// 1 for calendar weeks 52 and 1, else 0. Week 53 maps to 0.
pub fn christmas_indicator(panel: &CountsPanel) -> Vec<f64> {
    christmas_indicator_for(panel.weeks())
}

pub fn christmas_indicator_for(weeks: &[IsoWeek]) -> Vec<f64> {
    weeks
        .iter()
        .map(|w| if matches!(w.week, 52 | 1) { 1.0 } else { 0.0 })
        .collect()
}
