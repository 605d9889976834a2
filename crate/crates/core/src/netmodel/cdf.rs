//! IEEE Common Data Format reader and writer.
//!
//! Only the title card, `BUS DATA` and `BRANCH DATA` sections are consumed;
//! other sections (loss zones, interchange, tie lines) are skipped. Fields
//! are read by fixed column, 1-based and inclusive as in the format notes.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Bus, BusKind, GridNetwork, Line};
use crate::error::{Error, ParseError, Result};

/// Extracts columns `first..=last` (1-based), tolerating short lines.
fn cols(line: &str, first: usize, last: usize) -> &str {
    let bytes = line.as_bytes();
    let start = (first - 1).min(bytes.len());
    let end = last.min(bytes.len());
    line.get(start..end).unwrap_or("").trim()
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse(ParseError { line, message: message.into() })
}

fn num<T: std::str::FromStr>(line_no: usize, line: &str, first: usize, last: usize, what: &str) -> Result<T> {
    let field = cols(line, first, last);
    field
        .parse()
        .map_err(|_| perr(line_no, format!("bad {what} field '{field}' (columns {first}-{last})")))
}

fn num_or<T: std::str::FromStr>(line_no: usize, line: &str, first: usize, last: usize, what: &str, default: T) -> Result<T> {
    if cols(line, first, last).is_empty() {
        Ok(default)
    } else {
        num(line_no, line, first, last, what)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Bus,
    Branch,
    Other,
}

struct RawBranch {
    line_no: usize,
    from: u32,
    to: u32,
    r: f64,
    x: f64,
    b: f64,
}

/// Parses an IEEE CDF case into a [`GridNetwork`].
///
/// Parallel branches between the same bus pair are merged: series
/// admittances add and charging adds. The DC susceptance of a line is
/// `−Im` of its merged series admittance. The swing
/// bus (type 3) becomes the reference bus. Angles are converted to radians.
pub fn parse_ieee_cdf(text: &str) -> Result<GridNetwork> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim_end_matches('\r')));

    let (_, title) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| perr(0, "empty case file"))?;
    let base_mva: f64 = {
        let f = cols(title, 32, 37);
        if f.is_empty() {
            100.0
        } else {
            f.parse().unwrap_or(100.0)
        }
    };
    let name = {
        let n = cols(title, 46, 73);
        if n.is_empty() {
            title.trim().to_string()
        } else {
            n.to_string()
        }
    };

    let mut section: Option<(Section, usize)> = None;
    let mut seen_bus = false;
    let mut seen_branch = false;
    let mut branch_header = 0;
    let mut buses: Vec<Bus> = Vec::new();
    let mut numbers: HashMap<u32, usize> = HashMap::new();
    let mut raw_branches: Vec<RawBranch> = Vec::new();
    let mut swing: Option<usize> = None;

    for (line_no, line) in lines {
        let trimmed = line.trim();
        match section {
            None => {
                if trimmed.is_empty() {
                    continue;
                }
                let upper = trimmed.to_ascii_uppercase();
                if upper.starts_with("END OF DATA") {
                    break;
                }
                if !upper.contains("FOLLOWS") || !upper.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
                    return Err(perr(line_no, format!("malformed section header '{trimmed}'")));
                }
                let kind = if upper.starts_with("BUS DATA") {
                    if seen_bus {
                        return Err(perr(line_no, "duplicate BUS DATA section"));
                    }
                    seen_bus = true;
                    Section::Bus
                } else if upper.starts_with("BRANCH DATA") {
                    if !seen_bus {
                        return Err(perr(line_no, "BRANCH DATA section before BUS DATA"));
                    }
                    if seen_branch {
                        return Err(perr(line_no, "duplicate BRANCH DATA section"));
                    }
                    seen_branch = true;
                    branch_header = line_no;
                    Section::Branch
                } else {
                    Section::Other
                };
                section = Some((kind, line_no));
            }
            Some((kind, _)) => {
                if trimmed.starts_with("-9") {
                    section = None;
                    continue;
                }
                if trimmed.is_empty() {
                    continue;
                }
                match kind {
                    Section::Other => {}
                    Section::Bus => {
                        let number: u32 = num(line_no, line, 1, 4, "bus number")?;
                        let type_code: i32 = num_or(line_no, line, 25, 26, "bus type", 0)?;
                        let kind = match type_code {
                            0 | 1 => BusKind::Load,
                            2 => BusKind::Generator,
                            3 => BusKind::Swing,
                            other => return Err(perr(line_no, format!("unknown bus type {other}"))),
                        };
                        let vm: f64 = num(line_no, line, 28, 33, "voltage magnitude")?;
                        let va_deg: f64 = num(line_no, line, 34, 40, "voltage angle")?;
                        let base_kv: f64 = num_or(line_no, line, 77, 83, "base kV", 0.0)?;
                        if !(vm > 0.0) {
                            return Err(perr(line_no, format!("bus {number} has non-positive voltage {vm}")));
                        }
                        let id = buses.len();
                        if numbers.insert(number, id).is_some() {
                            return Err(perr(line_no, format!("duplicate bus number {number}")));
                        }
                        if kind == BusKind::Swing {
                            if swing.is_some() {
                                return Err(perr(line_no, "more than one swing bus"));
                            }
                            swing = Some(id);
                        }
                        let label = cols(line, 6, 17);
                        buses.push(Bus {
                            id,
                            number,
                            name: if label.is_empty() { number.to_string() } else { label.to_string() },
                            kind,
                            base_voltage: base_kv,
                            operating_angle: va_deg.to_radians(),
                            operating_magnitude: vm,
                        });
                    }
                    Section::Branch => {
                        let from: u32 = num(line_no, line, 1, 4, "tap bus number")?;
                        let to: u32 = num(line_no, line, 6, 9, "Z bus number")?;
                        let r: f64 = num_or(line_no, line, 20, 29, "resistance", 0.0)?;
                        let x: f64 = num(line_no, line, 30, 40, "reactance")?;
                        let b: f64 = num_or(line_no, line, 41, 50, "line charging", 0.0)?;
                        for bus in [from, to] {
                            if !numbers.contains_key(&bus) {
                                return Err(perr(line_no, format!("branch references unknown bus {bus}")));
                            }
                        }
                        if from == to {
                            return Err(perr(line_no, format!("branch {from}-{to} is a self loop")));
                        }
                        if x == 0.0 {
                            return Err(perr(line_no, format!("branch {from}-{to} has zero reactance")));
                        }
                        raw_branches.push(RawBranch { line_no, from, to, r, x, b });
                    }
                }
            }
        }
    }

    if let Some((_, start)) = section {
        return Err(perr(start, "section not terminated by -999"));
    }
    if !seen_bus {
        return Err(perr(0, "missing BUS DATA section"));
    }
    if !seen_branch {
        return Err(perr(0, "missing BRANCH DATA section"));
    }
    let reference = swing.ok_or_else(|| perr(0, "missing swing bus (type 3)"))?;

    let lines = merge_parallel(&raw_branches, &numbers)?;
    GridNetwork::new(name, base_mva, buses, lines, reference).map_err(|e| match e {
        Error::InvalidNetwork(msg) => perr(branch_header, msg),
        other => other,
    })
}

/// `(from, to, g, b, charging, circuits)` accumulated per unordered bus pair.
type Merged = (usize, usize, f64, f64, f64, usize);

fn merge_parallel(raw: &[RawBranch], numbers: &HashMap<u32, usize>) -> Result<Vec<Line>> {
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut acc: HashMap<(usize, usize), Merged> = HashMap::new();
    for br in raw {
        let i = numbers[&br.from];
        let j = numbers[&br.to];
        let key = if i < j { (i, j) } else { (j, i) };
        let d = br.r * br.r + br.x * br.x;
        let (g, b) = (br.r / d, -br.x / d);
        if !(g.is_finite() && b.is_finite()) {
            return Err(perr(br.line_no, "branch impedance is not finite"));
        }
        let entry = acc.entry(key).or_insert_with(|| {
            order.push(key);
            (i, j, 0.0, 0.0, 0.0, 0)
        });
        entry.2 += g;
        entry.3 += b;
        entry.4 += br.b;
        entry.5 += 1;
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let (from, to, g, b, charging, circuits) = acc[&key];
            let d = g * g + b * b;
            Line {
                from,
                to,
                series_resistance: g / d,
                series_reactance: -b / d,
                susceptance: -b,
                shunt_charging: charging,
                circuits,
            }
        })
        .collect())
}

fn put(row: &mut String, first: usize, width: usize, field: &str, left: bool) {
    while row.len() < first - 1 {
        row.push(' ');
    }
    let field = if field.len() > width { &field[..width] } else { field };
    if left {
        let _ = write!(row, "{field:<width$}");
    } else {
        let _ = write!(row, "{field:>width$}");
    }
}

/// Writes the network back out as a CDF case with merged lines. Load and
/// generation columns are zero since the network does not carry them.
pub fn write_ieee_cdf(net: &GridNetwork) -> String {
    let mut out = String::new();
    let mut title = String::new();
    put(&mut title, 2, 8, "01/01/00", false);
    put(&mut title, 11, 20, "framing", true);
    put(&mut title, 32, 6, &format!("{:.1}", net.base_mva), false);
    put(&mut title, 46, 28, &net.name, true);
    out.push_str(title.trim_end());
    out.push('\n');
    let _ = writeln!(out, "BUS DATA FOLLOWS                            {} ITEMS", net.bus_count());
    for bus in &net.buses {
        let mut row = String::new();
        let code = match bus.kind {
            BusKind::Load => "0",
            BusKind::Generator => "2",
            BusKind::Swing => "3",
        };
        put(&mut row, 1, 4, &bus.number.to_string(), false);
        put(&mut row, 6, 12, &bus.name, true);
        put(&mut row, 19, 2, "1", false);
        put(&mut row, 21, 3, "1", false);
        put(&mut row, 25, 2, code, false);
        put(&mut row, 28, 6, &format!("{:.4}", bus.operating_magnitude), false);
        put(&mut row, 34, 7, &format!("{:.2}", bus.operating_angle.to_degrees()), false);
        put(&mut row, 77, 7, &format!("{:.1}", bus.base_voltage), false);
        out.push_str(&row);
        out.push('\n');
    }
    out.push_str("-999\n");
    let _ = writeln!(out, "BRANCH DATA FOLLOWS                         {} ITEMS", net.line_count());
    for line in &net.lines {
        let mut row = String::new();
        put(&mut row, 1, 4, &net.buses[line.from].number.to_string(), false);
        put(&mut row, 6, 4, &net.buses[line.to].number.to_string(), false);
        put(&mut row, 11, 2, "1", false);
        put(&mut row, 13, 2, "1", false);
        put(&mut row, 17, 1, "1", false);
        put(&mut row, 19, 1, "0", false);
        put(&mut row, 20, 10, &format!("{:.6}", line.series_resistance), false);
        put(&mut row, 30, 11, &format!("{:.6}", line.series_reactance), false);
        put(&mut row, 41, 10, &format!("{:.5}", line.shunt_charging), false);
        out.push_str(&row);
        out.push('\n');
    }
    out.push_str("-999\nEND OF DATA\n");
    out
}
