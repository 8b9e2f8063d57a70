//! Aligned monthly panels of dengue cases, population and climate
//! covariates per canton, and the relative-risk response series.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Calendar month used as the panel time index.
///
/// Ordering is by `(year, month)` and differences are measured in months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthIndex {
    pub year: i32,
    pub month: u8,
}

impl MonthIndex {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if year < 1900 {
            return Err(Error::InvalidPanel(format!("year {year} before 1900")));
        }
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidPanel(format!("month {month} outside 1-12")));
        }
        Ok(Self { year, month })
    }

    /// Parse `"YYYY-MM"`.
    pub fn parse(s: &str) -> Result<Self> {
        let err = || Error::InvalidPanel(format!("cannot parse month '{s}', expected YYYY-MM"));
        let (y, m) = s.split_once('-').ok_or_else(err)?;
        let year: i32 = y.trim().parse().map_err(|_| err())?;
        let month: u8 = m.trim().parse().map_err(|_| err())?;
        Self::new(year, month)
    }

    /// The following calendar month.
    pub fn next(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// Signed number of months from `other` to `self`.
    pub fn months_since(self, other: Self) -> i64 {
        (i64::from(self.year) - i64::from(other.year)) * 12
            + (i64::from(self.month) - i64::from(other.month))
    }

    /// Month advanced by `n` months.
    pub fn plus_months(self, n: usize) -> Self {
        let total = i64::from(self.year) * 12 + i64::from(self.month) - 1 + n as i64;
        Self {
            year: (total.div_euclid(12)) as i32,
            month: (total.rem_euclid(12) + 1) as u8,
        }
    }
}

impl fmt::Display for MonthIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Reserved canton id carrying the country-level totals in input tables.
pub const NATIONAL_ID: &str = "__national__";

/// Monthly case and population counts for one canton.
#[derive(Debug, Clone)]
pub struct CantonSeries {
    pub canton_id: String,
    pub months: Vec<MonthIndex>,
    pub cases: Vec<u64>,
    pub population: Vec<u64>,
}

impl CantonSeries {
    pub fn new(
        canton_id: String,
        months: Vec<MonthIndex>,
        cases: Vec<u64>,
        population: Vec<u64>,
    ) -> Result<Self> {
        if months.len() != cases.len() || months.len() != population.len() {
            return Err(Error::InvalidPanel(format!(
                "canton '{canton_id}': months/cases/population lengths differ \
                 ({}/{}/{})",
                months.len(),
                cases.len(),
                population.len()
            )));
        }
        for w in months.windows(2) {
            if w[1] != w[0].next() {
                return Err(Error::InvalidPanel(format!(
                    "canton '{canton_id}': months not consecutive at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(i) = population.iter().position(|&p| p == 0) {
            return Err(Error::InvalidPanel(format!(
                "canton '{canton_id}': zero population in {}",
                months[i]
            )));
        }
        Ok(Self {
            canton_id,
            months,
            cases,
            population,
        })
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }
}

/// One month of the five climate covariates for a canton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClimateRecord {
    /// Monthly cumulative precipitation, mm.
    pub precip: f64,
    /// ENSO sea-surface temperature anomaly, degrees C.
    pub ssta: f64,
    /// Vegetation index in [-1, 1].
    pub ndvi: f64,
    /// Daytime land surface temperature, Kelvin.
    pub lst: f64,
    /// Tropical North Atlantic anomaly, degrees C.
    pub tna: f64,
}

impl ClimateRecord {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.precip, self.ssta, self.ndvi, self.lst, self.tna];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!(
                "non-finite climate record {self:?}"
            )));
        }
        if self.precip < 0.0 {
            return Err(Error::InvalidPanel(format!(
                "negative precipitation {}",
                self.precip
            )));
        }
        if !(-1.0..=1.0).contains(&self.ndvi) {
            return Err(Error::InvalidPanel(format!(
                "NDVI {} outside [-1, 1]",
                self.ndvi
            )));
        }
        if self.lst <= 0.0 {
            return Err(Error::InvalidPanel(format!(
                "non-positive LST {}",
                self.lst
            )));
        }
        Ok(())
    }

    pub fn get(&self, cov: Covariate) -> f64 {
        match cov {
            Covariate::Precip => self.precip,
            Covariate::Ssta => self.ssta,
            Covariate::Ndvi => self.ndvi,
            Covariate::Lst => self.lst,
            Covariate::Tna => self.tna,
        }
    }
}

/// The five climate covariates, in the order they enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Covariate {
    Precip,
    Ssta,
    Ndvi,
    Lst,
    Tna,
}

impl Covariate {
    pub const ALL: [Covariate; 5] = [
        Covariate::Precip,
        Covariate::Ssta,
        Covariate::Ndvi,
        Covariate::Lst,
        Covariate::Tna,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Precip => "precip",
            Covariate::Ssta => "ssta",
            Covariate::Ndvi => "ndvi",
            Covariate::Lst => "lst",
            Covariate::Tna => "tna",
        }
    }
}

/// Case/population series and climate records for one canton.
#[derive(Debug, Clone)]
pub struct CantonData {
    pub series: CantonSeries,
    pub climate: Vec<ClimateRecord>,
}

impl CantonData {
    /// Extract one covariate as a plain series.
    pub fn climate_series(&self, cov: Covariate) -> Vec<f64> {
        self.climate.iter().map(|r| r.get(cov)).collect()
    }
}

/// Country-level totals per month.
#[derive(Debug, Clone)]
pub struct NationalSeries {
    pub months: Vec<MonthIndex>,
    pub cases: Vec<u64>,
    pub population: Vec<u64>,
}

/// Aligned monthly panel: every canton spans the same month range.
#[derive(Debug, Clone)]
pub struct MonthlyPanel {
    pub months: Vec<MonthIndex>,
    pub cantons: BTreeMap<String, CantonData>,
    pub national: NationalSeries,
}

impl MonthlyPanel {
    pub fn new(cantons: BTreeMap<String, CantonData>, national: NationalSeries) -> Result<Self> {
        let first = cantons
            .values()
            .next()
            .ok_or_else(|| Error::InvalidPanel("panel has no cantons".into()))?;
        let months = first.series.months.clone();
        for (id, data) in &cantons {
            if data.series.months != months {
                return Err(Error::InvalidPanel(format!(
                    "canton '{id}' does not span the common month range"
                )));
            }
            if data.climate.len() != months.len() {
                return Err(Error::InvalidPanel(format!(
                    "canton '{id}' climate length {} != {} months",
                    data.climate.len(),
                    months.len()
                )));
            }
            for rec in &data.climate {
                rec.validate()?;
            }
        }
        if national.months != months {
            return Err(Error::InvalidPanel(
                "national series does not span the common month range".into(),
            ));
        }
        for (t, (&nc, &np)) in national.cases.iter().zip(&national.population).enumerate() {
            for (id, data) in &cantons {
                if data.series.cases[t] > nc || data.series.population[t] > np {
                    return Err(Error::InvalidPanel(format!(
                        "canton '{id}' exceeds national totals in {}",
                        months[t]
                    )));
                }
            }
        }
        Ok(Self {
            months,
            cantons,
            national,
        })
    }

    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    pub fn canton(&self, id: &str) -> Result<&CantonData> {
        self.cantons
            .get(id)
            .ok_or_else(|| Error::UnknownCanton(id.to_string()))
    }

    pub fn canton_ids(&self) -> Vec<String> {
        self.cantons.keys().cloned().collect()
    }

    /// Restrict the panel to the months in `[start, end]` (inclusive).
    pub fn slice(&self, start: MonthIndex, end: MonthIndex) -> Result<MonthlyPanel> {
        let lo = self
            .months
            .iter()
            .position(|&m| m == start)
            .ok_or_else(|| Error::InvalidPanel(format!("month {start} not in panel")))?;
        let hi = self
            .months
            .iter()
            .position(|&m| m == end)
            .ok_or_else(|| Error::InvalidPanel(format!("month {end} not in panel")))?;
        if hi < lo {
            return Err(Error::InvalidPanel(format!(
                "window {start}..{end} is empty"
            )));
        }
        let range = lo..=hi;
        let cantons = self
            .cantons
            .iter()
            .map(|(id, d)| {
                (
                    id.clone(),
                    CantonData {
                        series: CantonSeries {
                            canton_id: d.series.canton_id.clone(),
                            months: d.series.months[range.clone()].to_vec(),
                            cases: d.series.cases[range.clone()].to_vec(),
                            population: d.series.population[range.clone()].to_vec(),
                        },
                        climate: d.climate[range.clone()].to_vec(),
                    },
                )
            })
            .collect();
        let national = NationalSeries {
            months: self.national.months[range.clone()].to_vec(),
            cases: self.national.cases[range.clone()].to_vec(),
            population: self.national.population[range].to_vec(),
        };
        MonthlyPanel::new(cantons, national)
    }
}

/// Per-canton relative-risk series: canton incidence over national incidence.
#[derive(Debug, Clone)]
pub struct RiskSeries {
    pub canton_id: String,
    pub months: Vec<MonthIndex>,
    pub rr: Vec<f64>,
}

/// Relative risk of one canton against the national incidence,
/// month by month.
///
/// `rr[t] = (cases_i / pop_i) / (cases_national / pop_national)`.
/// Months with zero national cases make the ratio undefined and abort
/// with the offending month rather than emitting NaN.
pub fn compute_relative_risk(panel: &MonthlyPanel, canton_id: &str) -> Result<RiskSeries> {
    let data = panel.canton(canton_id)?;
    let mut rr = Vec::with_capacity(panel.n_months());
    for t in 0..panel.n_months() {
        let nat_cases = panel.national.cases[t];
        if nat_cases == 0 {
            return Err(Error::ZeroNationalCases(panel.months[t]));
        }
        let nat_inc = nat_cases as f64 / panel.national.population[t] as f64;
        let canton_inc = data.series.cases[t] as f64 / data.series.population[t] as f64;
        rr.push(canton_inc / nat_inc);
    }
    Ok(RiskSeries {
        canton_id: canton_id.to_string(),
        months: panel.months.clone(),
        rr,
    })
}

/// Matrix of lagged copies of a series: entry `(t, l) = x[t - l]`.
///
/// Rows with `t < max_lag` have incomplete history; their missing entries
/// are NaN and `complete_from` marks the first fully defined row.
#[derive(Debug, Clone)]
pub struct LagMatrix {
    pub values: DMatrix<f64>,
    pub complete_from: usize,
}

pub fn lag_matrix(x: &[f64], max_lag: usize) -> Result<LagMatrix> {
    let t_len = x.len();
    if max_lag >= t_len {
        return Err(Error::LagTooLarge {
            lag: max_lag,
            len: t_len,
        });
    }
    let mut values = DMatrix::from_element(t_len, max_lag + 1, f64::NAN);
    for t in 0..t_len {
        for l in 0..=max_lag.min(t) {
            values[(t, l)] = x[t - l];
        }
    }
    Ok(LagMatrix {
        values,
        complete_from: max_lag,
    })
}

/// One raw input row keyed by (canton, month); the building block for
/// [`align_panel`].
#[derive(Debug, Clone)]
pub struct RawRow<V> {
    pub canton: String,
    pub month: MonthIndex,
    pub value: V,
}

/// Raw unaligned tables as read from the input files.
#[derive(Debug, Clone, Default)]
pub struct RawTables {
    pub cases: Vec<RawRow<u64>>,
    pub population: Vec<RawRow<u64>>,
    pub climate: Vec<RawRow<ClimateRecord>>,
}

/// Months dropped while trimming to the common range, per canton.
#[derive(Debug, Clone, Default)]
pub struct AlignmentReport {
    pub dropped: BTreeMap<String, Vec<MonthIndex>>,
    pub common_start: Option<MonthIndex>,
    pub common_end: Option<MonthIndex>,
}

impl AlignmentReport {
    pub fn n_dropped(&self) -> usize {
        self.dropped.values().map(Vec::len).sum()
    }
}

fn index_rows<V: Clone>(
    rows: &[RawRow<V>],
    table: &'static str,
) -> Result<BTreeMap<String, BTreeMap<MonthIndex, V>>> {
    let mut out: BTreeMap<String, BTreeMap<MonthIndex, V>> = BTreeMap::new();
    for row in rows {
        let per_canton = out.entry(row.canton.clone()).or_default();
        if per_canton.insert(row.month, row.value.clone()).is_some() {
            return Err(Error::DuplicateKey {
                canton: row.canton.clone(),
                month: row.month,
                table,
            });
        }
    }
    Ok(out)
}

/// Inner-join raw case, population and climate tables into an aligned
/// panel over the widest month range common to every canton and table.
///
/// Months outside the common range are dropped and reported. Missing rows
/// *inside* the common range are a hard error; no interpolation is applied.
/// National totals must be supplied as rows with canton id
/// [`NATIONAL_ID`] in the cases and population tables.
pub fn align_panel(raw: &RawTables) -> Result<(MonthlyPanel, AlignmentReport)> {
    let cases = index_rows(&raw.cases, "cases")?;
    let population = index_rows(&raw.population, "population")?;
    let climate = index_rows(&raw.climate, "climate")?;

    if !cases.contains_key(NATIONAL_ID) || !population.contains_key(NATIONAL_ID) {
        return Err(Error::InvalidPanel(format!(
            "national totals (canton id '{NATIONAL_ID}') missing from cases or population table"
        )));
    }
    let canton_ids: BTreeSet<String> = cases
        .keys()
        .chain(population.keys())
        .chain(climate.keys())
        .filter(|id| id.as_str() != NATIONAL_ID)
        .cloned()
        .collect();
    if canton_ids.is_empty() {
        return Err(Error::InvalidPanel("no cantons in input tables".into()));
    }

    // Common range: latest start and earliest end across every keyed series.
    let mut start: Option<MonthIndex> = None;
    let mut end: Option<MonthIndex> = None;
    let mut consider = |months: &BTreeMap<MonthIndex, _>| {
        if let (Some(&lo), Some(&hi)) = (months.keys().next(), months.keys().last()) {
            start = Some(start.map_or(lo, |s: MonthIndex| s.max(lo)));
            end = Some(end.map_or(hi, |e: MonthIndex| e.min(hi)));
        }
    };
    fn blank<V>(m: &BTreeMap<MonthIndex, V>) -> BTreeMap<MonthIndex, ()> {
        m.keys().map(|&k| (k, ())).collect()
    }
    for id in canton_ids
        .iter()
        .chain(std::iter::once(&NATIONAL_ID.to_string()))
    {
        if let Some(m) = cases.get(id) {
            consider(&blank(m));
        }
        if let Some(m) = population.get(id) {
            consider(&blank(m));
        }
        if id != NATIONAL_ID {
            if let Some(m) = climate.get(id) {
                consider(&blank(m));
            }
        }
    }
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if s <= e => (s, e),
        _ => {
            return Err(Error::InvalidPanel(
                "input tables have no common month range".into(),
            ))
        }
    };
    let mut months = Vec::new();
    let mut m = start;
    loop {
        months.push(m);
        if m == end {
            break;
        }
        m = m.next();
    }

    let mut report = AlignmentReport {
        common_start: Some(start),
        common_end: Some(end),
        ..Default::default()
    };

    // Gather each canton, recording trimmed months and rejecting gaps.
    let mut cantons = BTreeMap::new();
    for id in &canton_ids {
        let case_map = cases.get(id).ok_or_else(|| {
            Error::InvalidPanel(format!("canton '{id}' missing from cases table"))
        })?;
        let pop_map = population.get(id).ok_or_else(|| {
            Error::InvalidPanel(format!("canton '{id}' missing from population table"))
        })?;
        let climate_map = climate.get(id).ok_or_else(|| {
            Error::InvalidPanel(format!("canton '{id}' missing from climate table"))
        })?;

        let mut missing = Vec::new();
        let mut canton_cases = Vec::with_capacity(months.len());
        let mut canton_pop = Vec::with_capacity(months.len());
        let mut canton_climate = Vec::with_capacity(months.len());
        for &month in &months {
            match (
                case_map.get(&month),
                pop_map.get(&month),
                climate_map.get(&month),
            ) {
                (Some(&c), Some(&p), Some(&r)) => {
                    canton_cases.push(c);
                    canton_pop.push(p);
                    canton_climate.push(r);
                }
                _ => missing.push(month),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingMonths {
                canton: id.clone(),
                months: missing,
            });
        }
        let dropped: Vec<MonthIndex> = case_map
            .keys()
            .chain(pop_map.keys())
            .chain(climate_map.keys())
            .filter(|&&m| m < start || m > end)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !dropped.is_empty() {
            report.dropped.insert(id.clone(), dropped);
        }
        let series = CantonSeries::new(id.clone(), months.clone(), canton_cases, canton_pop)?;
        cantons.insert(
            id.clone(),
            CantonData {
                series,
                climate: canton_climate,
            },
        );
    }

    // National totals over the same range.
    let nat_cases_map = &cases[NATIONAL_ID];
    let nat_pop_map = &population[NATIONAL_ID];
    let mut nat_cases = Vec::with_capacity(months.len());
    let mut nat_pop = Vec::with_capacity(months.len());
    let mut nat_missing = Vec::new();
    for &month in &months {
        match (nat_cases_map.get(&month), nat_pop_map.get(&month)) {
            (Some(&c), Some(&p)) => {
                nat_cases.push(c);
                nat_pop.push(p);
            }
            _ => nat_missing.push(month),
        }
    }
    if !nat_missing.is_empty() {
        return Err(Error::MissingMonths {
            canton: NATIONAL_ID.to_string(),
            months: nat_missing,
        });
    }
    let dropped: Vec<MonthIndex> = nat_cases_map
        .keys()
        .chain(nat_pop_map.keys())
        .filter(|&&m| m < start || m > end)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !dropped.is_empty() {
        report.dropped.insert(NATIONAL_ID.to_string(), dropped);
    }

    let national = NationalSeries {
        months: months.clone(),
        cases: nat_cases,
        population: nat_pop,
    };
    let panel = MonthlyPanel::new(cantons, national)?;
    Ok((panel, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn month(y: i32, m: u8) -> MonthIndex {
        MonthIndex::new(y, m).unwrap()
    }

    fn months_from(y: i32, m: u8, n: usize) -> Vec<MonthIndex> {
        let mut out = Vec::with_capacity(n);
        let mut cur = month(y, m);
        for _ in 0..n {
            out.push(cur);
            cur = cur.next();
        }
        out
    }

    fn single_canton_panel(
        cases: Vec<u64>,
        pop: u64,
        nat_cases: Vec<u64>,
        nat_pop: u64,
    ) -> MonthlyPanel {
        let n = cases.len();
        let months = months_from(2000, 1, n);
        let climate = vec![
            ClimateRecord {
                precip: 100.0,
                ssta: 0.1,
                ndvi: 0.5,
                lst: 300.0,
                tna: 0.2,
            };
            n
        ];
        let series =
            CantonSeries::new("alpha".into(), months.clone(), cases, vec![pop; n]).unwrap();
        let mut cantons = BTreeMap::new();
        cantons.insert("alpha".to_string(), CantonData { series, climate });
        let national = NationalSeries {
            months,
            cases: nat_cases,
            population: vec![nat_pop; n],
        };
        MonthlyPanel::new(cantons, national).unwrap()
    }

    #[test]
    fn month_index_arithmetic() {
        let m = month(2020, 12);
        assert_eq!(m.next(), month(2021, 1));
        assert_eq!(month(2021, 3).months_since(month(2020, 12)), 3);
        assert_eq!(month(2000, 1).plus_months(252), month(2021, 1));
        assert_eq!(MonthIndex::parse("2000-01").unwrap(), month(2000, 1));
        assert!(MonthIndex::parse("2000-13").is_err());
        assert!(month(2020, 1) < month(2020, 2));
        assert_eq!(format!("{}", month(2000, 3)), "2000-03");
    }

    #[test]
    fn relative_risk_equal_incidence_is_one() {
        let panel = single_canton_panel(vec![10], 100_000, vec![100], 1_000_000);
        let rr = compute_relative_risk(&panel, "alpha").unwrap();
        assert!((rr.rr[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn relative_risk_zero_cases_is_zero() {
        let panel = single_canton_panel(vec![0], 70_000, vec![100], 1_000_000);
        let rr = compute_relative_risk(&panel, "alpha").unwrap();
        assert_eq!(rr.rr[0], 0.0);
    }

    #[test]
    fn relative_risk_double_incidence_is_two() {
        // cases_i=20, pop_i=1e5, cases_CR=100, pop_CR=1e6
        let panel = single_canton_panel(vec![20], 100_000, vec![100], 1_000_000);
        let rr = compute_relative_risk(&panel, "alpha").unwrap();
        assert!((rr.rr[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn relative_risk_unknown_canton() {
        let panel = single_canton_panel(vec![1], 1000, vec![10], 100_000);
        assert!(matches!(
            compute_relative_risk(&panel, "beta"),
            Err(Error::UnknownCanton(_))
        ));
    }

    #[test]
    fn relative_risk_zero_national_aborts() {
        let panel = single_canton_panel(vec![0, 0], 1000, vec![5, 0], 100_000);
        match compute_relative_risk(&panel, "alpha") {
            Err(Error::ZeroNationalCases(m)) => assert_eq!(m, month(2000, 2)),
            other => panic!("expected ZeroNationalCases, got {other:?}"),
        }
    }

    #[test]
    fn relative_risk_scale_invariant_in_population() {
        // Multiplying every population by a constant leaves RR unchanged.
        let base = single_canton_panel(vec![7, 3, 11], 90_000, vec![50, 40, 60], 2_000_000);
        let scaled = single_canton_panel(
            vec![7, 3, 11],
            90_000 * 13,
            vec![50, 40, 60],
            2_000_000 * 13,
        );
        let rr0 = compute_relative_risk(&base, "alpha").unwrap();
        let rr1 = compute_relative_risk(&scaled, "alpha").unwrap();
        for (a, b) in rr0.rr.iter().zip(&rr1.rr) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lag_matrix_identity_and_windows() {
        let lm = lag_matrix(&[1.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(lm.complete_from, 0);
        assert_eq!(
            (0..3).map(|t| lm.values[(t, 0)]).collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0]
        );

        let lm = lag_matrix(&[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(lm.complete_from, 1);
        assert_eq!(lm.values[(2, 0)], 3.0);
        assert_eq!(lm.values[(2, 1)], 2.0);
        assert!(lm.values[(0, 1)].is_nan());
    }

    #[test]
    fn lag_matrix_dimensions_and_flags() {
        let x: Vec<f64> = (0..252).map(|i| i as f64).collect();
        let lm = lag_matrix(&x, 18).unwrap();
        assert_eq!(lm.values.nrows(), 252);
        assert_eq!(lm.values.ncols(), 19);
        assert_eq!(lm.complete_from, 18);
        // Complete rows count: T - L.
        let complete = (0..252)
            .filter(|&t| (0..19).all(|l| !lm.values[(t, l)].is_nan()))
            .count();
        assert_eq!(complete, 252 - 18);
        // Row t equals the reversed window x[t-L..=t].
        for t in 18..252 {
            for l in 0..=18 {
                assert_eq!(lm.values[(t, l)], x[t - l]);
            }
        }
    }

    #[test]
    fn lag_matrix_rejects_large_lag() {
        assert!(matches!(
            lag_matrix(&[1.0, 2.0], 2),
            Err(Error::LagTooLarge { .. })
        ));
    }

    fn raw_tables_for(n_months: usize, cantons: &[&str]) -> RawTables {
        let months = months_from(2000, 1, n_months);
        let mut raw = RawTables::default();
        for &id in cantons {
            for &m in &months {
                raw.cases.push(RawRow {
                    canton: id.into(),
                    month: m,
                    value: 5,
                });
                raw.population.push(RawRow {
                    canton: id.into(),
                    month: m,
                    value: 100_000,
                });
                raw.climate.push(RawRow {
                    canton: id.into(),
                    month: m,
                    value: ClimateRecord {
                        precip: 80.0,
                        ssta: 0.0,
                        ndvi: 0.4,
                        lst: 299.0,
                        tna: 0.1,
                    },
                });
            }
        }
        for &m in &months {
            raw.cases.push(RawRow {
                canton: NATIONAL_ID.into(),
                month: m,
                value: 500,
            });
            raw.population.push(RawRow {
                canton: NATIONAL_ID.into(),
                month: m,
                value: 5_000_000,
            });
        }
        raw
    }

    #[test]
    fn align_identical_tables() {
        let raw = raw_tables_for(12, &["alpha"]);
        let (panel, report) = align_panel(&raw).unwrap();
        assert_eq!(panel.n_months(), 12);
        assert_eq!(report.n_dropped(), 0);
    }

    #[test]
    fn align_missing_interior_month_is_error() {
        let mut raw = raw_tables_for(12, &["alpha"]);
        let gone = month(2000, 7);
        raw.climate.retain(|r| r.month != gone);
        match align_panel(&raw) {
            Err(Error::MissingMonths { canton, months }) => {
                assert_eq!(canton, "alpha");
                assert_eq!(months, vec![gone]);
            }
            other => panic!("expected MissingMonths, got {other:?}"),
        }
    }

    #[test]
    fn align_trims_to_overlap_with_report() {
        // alpha spans 252 months, beta only the first 240: intersection 240.
        let mut raw = raw_tables_for(252, &["alpha"]);
        let beta_raw = raw_tables_for(240, &["beta"]);
        raw.cases
            .extend(beta_raw.cases.into_iter().filter(|r| r.canton == "beta"));
        raw.population.extend(
            beta_raw
                .population
                .into_iter()
                .filter(|r| r.canton == "beta"),
        );
        raw.climate
            .extend(beta_raw.climate.into_iter().filter(|r| r.canton == "beta"));
        let (panel, report) = align_panel(&raw).unwrap();
        assert_eq!(panel.n_months(), 240);
        assert_eq!(report.dropped["alpha"].len(), 12);
        assert_eq!(report.dropped[NATIONAL_ID].len(), 12);
        assert!(!report.dropped.contains_key("beta"));
    }

    #[test]
    fn align_rejects_duplicate_keys() {
        let mut raw = raw_tables_for(3, &["alpha"]);
        raw.cases.push(RawRow {
            canton: "alpha".into(),
            month: month(2000, 2),
            value: 9,
        });
        assert!(matches!(align_panel(&raw), Err(Error::DuplicateKey { .. })));
    }

    #[test]
    fn weighted_canton_incidence_reconstructs_national() {
        // When the cantons partition the country, the population-weighted
        // mean incidence equals the national incidence.
        let months = months_from(2000, 1, 4);
        let mut cantons = BTreeMap::new();
        let specs = [
            ("a", 30u64, 100_000u64),
            ("b", 50, 250_000),
            ("c", 20, 150_000),
        ];
        let climate = ClimateRecord {
            precip: 10.0,
            ssta: 0.0,
            ndvi: 0.0,
            lst: 290.0,
            tna: 0.0,
        };
        for (id, cases, pop) in specs {
            let series =
                CantonSeries::new(id.into(), months.clone(), vec![cases; 4], vec![pop; 4]).unwrap();
            cantons.insert(
                id.to_string(),
                CantonData {
                    series,
                    climate: vec![climate; 4],
                },
            );
        }
        let nat_cases: u64 = specs.iter().map(|s| s.1).sum();
        let nat_pop: u64 = specs.iter().map(|s| s.2).sum();
        let national = NationalSeries {
            months: months.clone(),
            cases: vec![nat_cases; 4],
            population: vec![nat_pop; 4],
        };
        let panel = MonthlyPanel::new(cantons, national).unwrap();
        let weighted: f64 = specs
            .iter()
            .map(|&(id, _, pop)| {
                let rr = compute_relative_risk(&panel, id).unwrap();
                rr.rr[0] * pop as f64 / nat_pop as f64
            })
            .sum();
        // Population-weighted mean of RR over a full partition is 1.
        assert!((weighted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slice_restricts_months() {
        let panel = single_canton_panel(vec![1, 2, 3, 4, 5, 6], 10_000, vec![10; 6], 1_000_000);
        let sliced = panel.slice(month(2000, 2), month(2000, 4)).unwrap();
        assert_eq!(sliced.n_months(), 3);
        assert_eq!(sliced.cantons["alpha"].series.cases, vec![2, 3, 4]);
        assert!(panel.slice(month(1999, 1), month(2000, 4)).is_err());
    }
}
