//! CSV table schemas: input readers, output writers, and read-back of
//! the forecast table for scoring.
//!
//! Headers are matched exactly. Floating-point fields are written with
//! 17 significant digits so every file round-trips bit-exactly; reading
//! an output file back and re-serializing it reproduces the bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use lagcast_core::{
    align_panel, sig17, AlignmentReport, CantonOutput, ClimateRecord, ComparisonReport,
    ForecastResult, MonthIndex, MonthlyPanel, RawRow, RawTables, NATIONAL_ID,
};

use crate::config::RunConfig;
use crate::error::{csv_err, io_err, CliError, CliResult};

pub const CASES_HEADER: &str = "canton,year,month,cases";
pub const POPULATION_HEADER: &str = "canton,year,month,population";
pub const CLIMATE_HEADER: &str = "canton,year,month,precip,ssta,ndvi,lst,tna";
pub const FORECAST_HEADER: &str = "canton,method,year,month,point,lower,upper";
pub const SCORES_HEADER: &str = "canton,method,nrmse,nis,best";
pub const FITTED_HEADER: &str = "canton,method,year,month,observed,fitted";

fn reader(path: &Path) -> CliResult<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(file)))
}

fn writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Read every record of `path`, checking the first against the exact
/// expected header and handing the rest to `parse` with their 1-based
/// row numbers.
fn read_table<T>(
    path: &Path,
    expected_header: &'static str,
    mut parse: impl FnMut(usize, &csv::StringRecord) -> CliResult<T>,
) -> CliResult<Vec<T>> {
    let mut rdr = reader(path)?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        if idx == 0 {
            let got = record.iter().collect::<Vec<_>>().join(",");
            if got != expected_header {
                return Err(CliError::HeaderMismatch {
                    file: path.display().to_string(),
                    expected: expected_header,
                    got,
                });
            }
            saw_header = true;
            continue;
        }
        rows.push(parse(idx + 1, &record)?);
    }
    if !saw_header {
        return Err(CliError::HeaderMismatch {
            file: path.display().to_string(),
            expected: expected_header,
            got: String::new(),
        });
    }
    Ok(rows)
}

fn field<'r>(
    path: &Path,
    row: usize,
    record: &'r csv::StringRecord,
    idx: usize,
    name: &'static str,
) -> CliResult<&'r str> {
    record.get(idx).ok_or_else(|| CliError::NonNumericField {
        file: path.display().to_string(),
        row,
        field: name,
        value: "<missing>".into(),
    })
}

fn parse_num<T: std::str::FromStr>(
    path: &Path,
    row: usize,
    name: &'static str,
    raw: &str,
) -> CliResult<T> {
    raw.parse().map_err(|_| CliError::NonNumericField {
        file: path.display().to_string(),
        row,
        field: name,
        value: raw.to_string(),
    })
}

fn parse_month(path: &Path, row: usize, record: &csv::StringRecord) -> CliResult<MonthIndex> {
    let year: i32 = parse_num(path, row, "year", field(path, row, record, 1, "year")?)?;
    let month: u8 = parse_num(path, row, "month", field(path, row, record, 2, "month")?)?;
    MonthIndex::new(year, month).map_err(|e| CliError::NonNumericField {
        file: path.display().to_string(),
        row,
        field: "month",
        value: e.to_string(),
    })
}

fn read_counts(
    path: &Path,
    header: &'static str,
    value_name: &'static str,
) -> CliResult<Vec<RawRow<u64>>> {
    read_table(path, header, |row, record| {
        let canton = field(path, row, record, 0, "canton")?.to_string();
        let month = parse_month(path, row, record)?;
        let value = parse_num(
            path,
            row,
            value_name,
            field(path, row, record, 3, value_name)?,
        )?;
        Ok(RawRow {
            canton,
            month,
            value,
        })
    })
}

pub fn read_cases(path: &Path) -> CliResult<Vec<RawRow<u64>>> {
    read_counts(path, CASES_HEADER, "cases")
}

pub fn read_population(path: &Path) -> CliResult<Vec<RawRow<u64>>> {
    read_counts(path, POPULATION_HEADER, "population")
}

pub fn read_climate(path: &Path) -> CliResult<Vec<RawRow<ClimateRecord>>> {
    read_table(path, CLIMATE_HEADER, |row, record| {
        let canton = field(path, row, record, 0, "canton")?.to_string();
        let month = parse_month(path, row, record)?;
        let mut vals = [0.0f64; 5];
        for (slot, (idx, name)) in vals.iter_mut().zip([
            (3usize, "precip"),
            (4, "ssta"),
            (5, "ndvi"),
            (6, "lst"),
            (7, "tna"),
        ]) {
            *slot = parse_num(path, row, name, field(path, row, record, idx, name)?)?;
        }
        Ok(RawRow {
            canton,
            month,
            value: ClimateRecord {
                precip: vals[0],
                ssta: vals[1],
                ndvi: vals[2],
                lst: vals[3],
                tna: vals[4],
            },
        })
    })
}

/// Read and align the three configured input tables.
pub fn load_tables(cfg: &RunConfig) -> CliResult<(MonthlyPanel, AlignmentReport)> {
    let path = |p: &Option<std::path::PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| CliError::Constraint(format!("data.{what} is not configured")))
    };
    let raw = RawTables {
        cases: read_cases(&path(&cfg.cases, "cases")?)?,
        population: read_population(&path(&cfg.population, "population")?)?,
        climate: read_climate(&path(&cfg.climate, "climate")?)?,
    };
    Ok(align_panel(&raw)?)
}

fn write_rows(
    path: &Path,
    header: &'static str,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(header.split(','))
        .map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn month_fields(m: MonthIndex) -> [String; 2] {
    [m.year.to_string(), m.month.to_string()]
}

/// Write a panel back out in the three input schemas: national rows
/// first, then cantons in id order, months ascending. Climate has no
/// national rows.
pub fn write_panel(dir: &Path, panel: &MonthlyPanel) -> CliResult<()> {
    let months = &panel.months;

    let mut cases: Vec<Vec<String>> = Vec::new();
    let mut population: Vec<Vec<String>> = Vec::new();
    for (t, &m) in months.iter().enumerate() {
        let [y, mo] = month_fields(m);
        cases.push(vec![
            NATIONAL_ID.into(),
            y.clone(),
            mo.clone(),
            panel.national.cases[t].to_string(),
        ]);
        population.push(vec![
            NATIONAL_ID.into(),
            y,
            mo,
            panel.national.population[t].to_string(),
        ]);
    }
    let mut climate: Vec<Vec<String>> = Vec::new();
    for (id, data) in &panel.cantons {
        for (t, &m) in months.iter().enumerate() {
            let [y, mo] = month_fields(m);
            cases.push(vec![
                id.clone(),
                y.clone(),
                mo.clone(),
                data.series.cases[t].to_string(),
            ]);
            population.push(vec![
                id.clone(),
                y.clone(),
                mo.clone(),
                data.series.population[t].to_string(),
            ]);
            let r = data.climate[t];
            climate.push(vec![
                id.clone(),
                y,
                mo,
                sig17(r.precip),
                sig17(r.ssta),
                sig17(r.ndvi),
                sig17(r.lst),
                sig17(r.tna),
            ]);
        }
    }
    write_rows(&dir.join("cases.csv"), CASES_HEADER, cases)?;
    write_rows(&dir.join("population.csv"), POPULATION_HEADER, population)?;
    write_rows(&dir.join("climate.csv"), CLIMATE_HEADER, climate)?;
    Ok(())
}

/// Point forecasts with their bootstrap intervals per canton and method.
pub fn write_forecasts(path: &Path, outputs: &[CantonOutput]) -> CliResult<()> {
    let mut rows = Vec::new();
    for canton in outputs {
        for fc in &canton.forecasts {
            for (s, &m) in fc.months.iter().enumerate() {
                let [y, mo] = month_fields(m);
                rows.push(vec![
                    fc.canton_id.clone(),
                    fc.method.clone(),
                    y,
                    mo,
                    sig17(fc.point[s]),
                    sig17(fc.lower[s]),
                    sig17(fc.upper[s]),
                ]);
            }
        }
    }
    write_rows(path, FORECAST_HEADER, rows)
}

/// Read a forecast table back, grouping consecutive rows by (canton,
/// method). Row order within a group fixes the month order.
pub fn read_forecasts(path: &Path) -> CliResult<Vec<ForecastResult>> {
    let mut results: Vec<ForecastResult> = Vec::new();
    let rows = read_table(path, FORECAST_HEADER, |row, record| {
        let canton = field(path, row, record, 0, "canton")?.to_string();
        let method = field(path, row, record, 1, "method")?.to_string();
        let month = {
            let year: i32 = parse_num(path, row, "year", field(path, row, record, 2, "year")?)?;
            let m: u8 = parse_num(path, row, "month", field(path, row, record, 3, "month")?)?;
            MonthIndex::new(year, m).map_err(|e| CliError::NonNumericField {
                file: path.display().to_string(),
                row,
                field: "month",
                value: e.to_string(),
            })?
        };
        let point: f64 = parse_num(path, row, "point", field(path, row, record, 4, "point")?)?;
        let lower: f64 = parse_num(path, row, "lower", field(path, row, record, 5, "lower")?)?;
        let upper: f64 = parse_num(path, row, "upper", field(path, row, record, 6, "upper")?)?;
        Ok((canton, method, month, point, lower, upper))
    })?;
    for (canton, method, month, point, lower, upper) in rows {
        match results.last_mut() {
            Some(last) if last.canton_id == canton && last.method == method => {
                last.months.push(month);
                last.point.push(point);
                last.lower.push(lower);
                last.upper.push(upper);
            }
            _ => results.push(ForecastResult {
                canton_id: canton,
                method,
                months: vec![month],
                point: vec![point],
                lower: vec![lower],
                upper: vec![upper],
                clamped: 0,
            }),
        }
    }
    Ok(results)
}

/// In-sample fitted paths over the design rows.
pub fn write_fitted(path: &Path, outputs: &[CantonOutput]) -> CliResult<()> {
    let mut rows = Vec::new();
    for canton in outputs {
        for (method, fitted) in &canton.fitted {
            for (i, &m) in canton.train_months.iter().enumerate() {
                let [y, mo] = month_fields(m);
                rows.push(vec![
                    canton.canton_id.clone(),
                    method.clone(),
                    y,
                    mo,
                    sig17(canton.observed_train[i]),
                    sig17(fitted[i]),
                ]);
            }
        }
    }
    write_rows(path, FITTED_HEADER, rows)
}

/// Per-canton scores with the winning method flagged.
pub fn write_scores(path: &Path, reports: &[&ComparisonReport]) -> CliResult<()> {
    let mut rows = Vec::new();
    for report in reports {
        for (method, score) in &report.scores {
            rows.push(vec![
                report.canton_id.clone(),
                method.clone(),
                sig17(score.nrmse),
                sig17(score.nis),
                if *method == report.best { "1" } else { "0" }.to_string(),
            ]);
        }
    }
    write_rows(path, SCORES_HEADER, rows)
}

/// Generic key/value and meta tables used by fit and forecast outputs.
pub fn write_generic(path: &Path, header: &'static str, rows: Vec<Vec<String>>) -> CliResult<()> {
    write_rows(path, header, rows)
}

/// Read any CSV and re-serialize it; used to verify that output files
/// round-trip byte-exactly.
pub fn reserialize(path: &Path) -> CliResult<Vec<u8>> {
    let mut rdr = reader(path)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Constraint(format!("{}: {e}", path.display())))
}

/// Write a plain text file (model artifacts).
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;
    f.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}
