//! MATPOWER case parsing, admittance assembly and trace CSV files.
//!
//! Only `mpc.baseMVA`, `mpc.bus` and `mpc.branch` are consumed. Other
//! assignments (`gen`, `gencost`, cell arrays of names, ...) are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::trace::IterationRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    /// Bus number as written in the case file.
    pub id: i64,
    /// Shunt conductance, MW demanded at 1 p.u. voltage.
    pub gs: f64,
    /// Shunt susceptance, MVAr injected at 1 p.u. voltage.
    pub bs: f64,
    /// `(Vmin, Vmax)` in p.u. when the row carries usable bounds.
    pub voltage_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    /// Index of the from-bus in [`CaseData::buses`].
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b: f64,
    /// Off-nominal tap ratio as written; 0 means 1.
    pub ratio: f64,
    /// Phase shift in degrees.
    pub shift_deg: f64,
    pub in_service: bool,
    /// Source line of the row.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    /// Case-file bus number to contiguous index.
    pub id_map: BTreeMap<i64, usize>,
}

impl CaseData {
    pub fn has_phase_shifters(&self) -> bool {
        self.branches
            .iter()
            .any(|br| br.in_service && br.shift_deg != 0.0)
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = &BranchRecord> {
        self.branches.iter().filter(|br| br.in_service)
    }
}

#[derive(Debug)]
struct Table {
    rows: Vec<(usize, Vec<f64>)>,
}

enum State {
    Top,
    Matrix {
        name: String,
        rows: Vec<(usize, Vec<f64>)>,
        row: Vec<f64>,
    },
    Cell,
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' | '"' => quoted = !quoted,
            '%' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("invalid number '{tok}'")))
}

/// Splits matrix text into rows. Returns `true` once the closing `]` is seen.
fn consume_matrix_text(
    text: &str,
    line: usize,
    rows: &mut Vec<(usize, Vec<f64>)>,
    row: &mut Vec<f64>,
) -> Result<bool> {
    let mut token = String::new();
    let flush = |token: &mut String, row: &mut Vec<f64>| -> Result<()> {
        if !token.is_empty() {
            row.push(parse_number(token, line)?);
            token.clear();
        }
        Ok(())
    };
    for c in text.chars() {
        match c {
            ';' | ']' => {
                flush(&mut token, row)?;
                if !row.is_empty() {
                    rows.push((line, std::mem::take(row)));
                }
                if c == ']' {
                    return Ok(true);
                }
            }
            ',' => flush(&mut token, row)?,
            c if c.is_whitespace() => flush(&mut token, row)?,
            c => token.push(c),
        }
    }
    flush(&mut token, row)?;
    // A newline inside brackets ends the row.
    if !row.is_empty() {
        rows.push((line, std::mem::take(row)));
    }
    Ok(false)
}

fn collect_tables(text: &str) -> Result<(BTreeMap<String, f64>, BTreeMap<String, Table>)> {
    let mut scalars = BTreeMap::new();
    let mut tables = BTreeMap::new();
    let mut state = State::Top;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = strip_comment(raw);
        state = match state {
            State::Cell => {
                if line.contains('}') {
                    State::Top
                } else {
                    State::Cell
                }
            }
            State::Matrix {
                name,
                mut rows,
                mut row,
            } => {
                if consume_matrix_text(line, line_no, &mut rows, &mut row)? {
                    tables.insert(name, Table { rows });
                    State::Top
                } else {
                    State::Matrix { name, rows, row }
                }
            }
            State::Top => {
                let trimmed = line.trim();
                let Some(rest) = trimmed.strip_prefix("mpc.") else {
                    continue;
                };
                let Some((name, value)) = rest.split_once('=') else {
                    continue;
                };
                let name = name.trim().to_string();
                let value = value.trim();
                if let Some(body) = value.strip_prefix('[') {
                    let mut rows = Vec::new();
                    let mut row = Vec::new();
                    if consume_matrix_text(body, line_no, &mut rows, &mut row)? {
                        tables.insert(name, Table { rows });
                        State::Top
                    } else {
                        State::Matrix { name, rows, row }
                    }
                } else if let Some(body) = value.strip_prefix('{') {
                    if body.contains('}') {
                        State::Top
                    } else {
                        State::Cell
                    }
                } else {
                    let scalar = value.trim_end_matches(';').trim();
                    if let Ok(v) = scalar.parse::<f64>() {
                        scalars.insert(name, v);
                    }
                    State::Top
                }
            }
        };
    }
    if let State::Matrix { name, .. } = state {
        return Err(Error::parse(
            last_line,
            format!("unterminated matrix mpc.{name}"),
        ));
    }
    Ok((scalars, tables))
}

fn require_table<'a>(
    tables: &'a BTreeMap<String, Table>,
    name: &str,
    min_cols: usize,
    last_line: usize,
) -> Result<&'a Table> {
    let table = tables
        .get(name)
        .ok_or_else(|| Error::parse(last_line, format!("missing table mpc.{name}")))?;
    let width = table.rows.first().map_or(0, |(_, r)| r.len());
    for (line, row) in &table.rows {
        if row.len() != width {
            return Err(Error::parse(
                *line,
                format!(
                    "ragged row in mpc.{name}: {} columns, expected {width}",
                    row.len()
                ),
            ));
        }
    }
    if let Some((line, _)) = table.rows.first() {
        if width < min_cols {
            return Err(Error::parse(
                *line,
                format!("mpc.{name} needs at least {min_cols} columns, found {width}"),
            ));
        }
    }
    Ok(table)
}

/// Parses the subset of the MATPOWER case format needed for admittance
/// assembly. Bus numbers are renumbered to contiguous indices in file order.
pub fn parse_matpower_case(text: &str) -> Result<CaseData> {
    let (scalars, tables) = collect_tables(text)?;
    let last_line = text.lines().count();

    let base_mva = *scalars
        .get("baseMVA")
        .ok_or_else(|| Error::parse(last_line, "missing mpc.baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(Error::parse(
            last_line,
            format!("baseMVA must be positive, got {base_mva}"),
        ));
    }

    let bus_table = require_table(&tables, "bus", 6, last_line)?;
    let mut buses = Vec::with_capacity(bus_table.rows.len());
    let mut id_map = BTreeMap::new();
    for (line, row) in &bus_table.rows {
        let id = row[0] as i64;
        if row[0].fract() != 0.0 {
            return Err(Error::parse(
                *line,
                format!("bus number {} is not an integer", row[0]),
            ));
        }
        if id_map.insert(id, buses.len()).is_some() {
            return Err(Error::parse(*line, format!("duplicate bus number {id}")));
        }
        let voltage_bounds = match (row.get(12), row.get(11)) {
            (Some(&vmin), Some(&vmax)) if vmin > 0.0 && vmin <= vmax => Some((vmin, vmax)),
            _ => None,
        };
        buses.push(BusRecord {
            id,
            gs: row[4],
            bs: row[5],
            voltage_bounds,
        });
    }

    let branch_table = require_table(&tables, "branch", 5, last_line)?;
    let mut branches = Vec::with_capacity(branch_table.rows.len());
    for (line, row) in &branch_table.rows {
        let endpoint = |v: f64| {
            id_map
                .get(&(v as i64))
                .copied()
                .filter(|_| v.fract() == 0.0)
                .ok_or_else(|| Error::parse(*line, format!("branch references unknown bus {v}")))
        };
        branches.push(BranchRecord {
            from: endpoint(row[0])?,
            to: endpoint(row[1])?,
            r: row[2],
            x: row[3],
            b: row[4],
            ratio: row.get(8).copied().unwrap_or(0.0),
            shift_deg: row.get(9).copied().unwrap_or(0.0),
            in_service: row.get(10).is_none_or(|&s| s != 0.0),
            line: *line,
        });
    }

    Ok(CaseData {
        base_mva,
        buses,
        branches,
        id_map,
    })
}

pub fn read_matpower_case(path: impl AsRef<Path>) -> Result<CaseData> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matpower_case(&text)
}

/// Nodal admittance `Y = G + jB` from the π-model of every in-service branch
/// plus bus shunts.
pub fn build_admittance(case: &CaseData) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = case.buses.len();
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
    for (index, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::ZeroImpedance {
                index,
                from: case.buses[br.from].id,
                to: case.buses[br.to].id,
            });
        }
        let series = Complex::new(1.0, 0.0) / Complex::new(br.r, br.x);
        let charging = Complex::new(0.0, br.b / 2.0);
        let ratio = if br.ratio == 0.0 { 1.0 } else { br.ratio };
        let tap = Complex::from_polar(ratio, br.shift_deg.to_radians());
        let (f, t) = (br.from, br.to);
        y[(f, f)] += (series + charging) / tap.norm_sqr();
        y[(t, t)] += series + charging;
        y[(f, t)] -= series / tap.conj();
        y[(t, f)] -= series / tap;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex::new(bus.gs, bus.bs) / case.base_mva;
    }
    Ok((y.map(|c| c.re), y.map(|c| c.im)))
}

pub const TRACE_HEADER: &str =
    "iter,f,step_norm,M,ls_doublings,sub_gap,sub_iters,stat_surrogate,time_ms";

/// Renders a trace in the CSV layout of [`TRACE_HEADER`]: LF line endings,
/// floats in scientific notation with 17 significant digits, enough to
/// reproduce every `f64` exactly.
pub fn format_trace_csv(records: &[IterationRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{},{:.16e},{},{:.16e},{:.16e}",
            r.iter,
            r.f,
            r.step_norm,
            r.reg,
            r.ls_doublings,
            r.sub_gap,
            r.sub_iters,
            r.stat_surrogate,
            r.time_ms
        );
    }
    out
}

pub fn write_trace_csv(records: &[IterationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_trace_csv(records)).map_err(|e| Error::io(path, e))
}

/// Parses text produced by [`format_trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TRACE_HEADER => {}
        _ => return Err(Error::parse(1, "missing or unexpected trace header")),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::parse(
                line_no,
                format!("expected 9 columns, found {}", fields.len()),
            ));
        }
        let float = |i: usize| parse_number(fields[i].trim(), line_no);
        let count = |i: usize| {
            fields[i]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(line_no, format!("invalid count '{}'", fields[i])))
        };
        let record = IterationRecord {
            iter: count(0)?,
            f: float(1)?,
            step_norm: float(2)?,
            reg: float(3)?,
            ls_doublings: count(4)?,
            sub_gap: float(5)?,
            sub_iters: count(6)?,
            stat_surrogate: float(7)?,
            time_ms: float(8)?,
        };
        if record.iter != records.len() {
            return Err(Error::parse(
                line_no,
                format!(
                    "iteration {} out of sequence, expected {}",
                    record.iter,
                    records.len()
                ),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<IterationRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace_csv(&text)
}
