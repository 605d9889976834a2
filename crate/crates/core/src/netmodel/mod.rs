//! Grid topology, line parameters and meter placement.
//!
//! Buses are renumbered to dense 0-based indices on load; the original case
//! numbers are kept on [`Bus::number`] for display and for the meter syntax
//! used on the command line (`"2-3"` is the flow meter from bus 2 to bus 3,
//! `"2"` the injection meter at bus 2).

mod cdf;

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

pub use cdf::{parse_ieee_cdf, write_ieee_cdf};

use crate::error::{Error, Result};

const IEEE14_CDF: &str = include_str!("../../data/ieee14.cdf");
const IEEE118_CDF: &str = include_str!("../../data/ieee118.cdf");

/// Bus type code from the case file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Load,
    Generator,
    Swing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Dense 0-based index.
    pub id: usize,
    /// Bus number as written in the case file.
    pub number: u32,
    pub name: String,
    pub kind: BusKind,
    /// kV
    pub base_voltage: f64,
    /// radians
    pub operating_angle: f64,
    /// p.u.
    pub operating_magnitude: f64,
}

/// A transmission line after parallel circuits have been merged.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Equivalent series resistance (p.u.) of the merged circuits.
    pub series_resistance: f64,
    /// Equivalent series reactance (p.u.) of the merged circuits.
    pub series_reactance: f64,
    /// DC susceptance `x/(r² + x²)` of the merged series admittance.
    pub susceptance: f64,
    /// Total line charging (p.u.), split equally between the two ends.
    pub shunt_charging: f64,
    /// Number of case-file branches merged into this line.
    pub circuits: usize,
}

impl Line {
    /// Series admittance `g + jb` of the pi-model.
    pub fn series_admittance(&self) -> (f64, f64) {
        let r = self.series_resistance;
        let x = self.series_reactance;
        let d = r * r + x * x;
        (r / d, -x / d)
    }

    /// The endpoint opposite `bus`, if `bus` is an endpoint.
    pub fn other(&self, bus: usize) -> Option<usize> {
        if bus == self.from {
            Some(self.to)
        } else if bus == self.to {
            Some(self.from)
        } else {
            None
        }
    }
}

/// Undirected grid graph with electrical parameters and a reference bus.
#[derive(Debug, Clone)]
pub struct GridNetwork {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub reference_bus: usize,
    by_number: HashMap<u32, usize>,
    by_pair: HashMap<(usize, usize), usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl GridNetwork {
    /// Validates and indexes a network. Lines must already be merged so that
    /// every unordered bus pair appears at most once.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        reference_bus: usize,
    ) -> Result<Self> {
        let nb = buses.len();
        if nb == 0 {
            return Err(Error::InvalidNetwork("network has no buses".into()));
        }
        let mut by_number = HashMap::with_capacity(nb);
        for (k, bus) in buses.iter().enumerate() {
            if bus.id != k {
                return Err(Error::InvalidNetwork(format!(
                    "bus ids must be dense: position {k} holds id {}",
                    bus.id
                )));
            }
            if !(bus.operating_magnitude > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "bus {} has non-positive voltage magnitude",
                    bus.number
                )));
            }
            if by_number.insert(bus.number, k).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate bus number {}", bus.number)));
            }
        }
        if reference_bus >= nb {
            return Err(Error::InvalidNetwork("reference bus out of range".into()));
        }
        let mut by_pair = HashMap::with_capacity(lines.len());
        let mut adjacency = vec![Vec::new(); nb];
        for (k, line) in lines.iter().enumerate() {
            if line.from >= nb || line.to >= nb {
                return Err(Error::InvalidNetwork(format!("line {k} references an unknown bus")));
            }
            if line.from == line.to {
                return Err(Error::InvalidNetwork(format!("line {k} is a self loop")));
            }
            if line.series_reactance == 0.0 || !line.susceptance.is_finite() {
                return Err(Error::InvalidNetwork(format!("line {k} has zero series reactance")));
            }
            let key = unordered(line.from, line.to);
            if by_pair.insert(key, k).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate line between buses {} and {}",
                    buses[line.from].number, buses[line.to].number
                )));
            }
            adjacency[line.from].push((line.to, k));
            adjacency[line.to].push((line.from, k));
        }
        let net = GridNetwork {
            name: name.into(),
            base_mva,
            buses,
            lines,
            reference_bus,
            by_number,
            by_pair,
            adjacency,
        };
        let all: Vec<usize> = (0..nb).collect();
        if !subnetwork_connected(&net, &all) {
            return Err(Error::InvalidNetwork("network graph is disconnected".into()));
        }
        Ok(net)
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// Dimension of the DC state (all angles except the reference).
    pub fn state_dim(&self) -> usize {
        self.buses.len() - 1
    }

    /// Dense index of the bus with case-file number `number`.
    pub fn bus_index(&self, number: u32) -> Option<usize> {
        self.by_number.get(&number).copied()
    }

    /// Index of the line joining `a` and `b` (either orientation).
    pub fn line_between(&self, a: usize, b: usize) -> Option<usize> {
        self.by_pair.get(&unordered(a, b)).copied()
    }

    /// `(neighbor, line index)` pairs incident to `bus`.
    pub fn neighbors(&self, bus: usize) -> &[(usize, usize)] {
        &self.adjacency[bus]
    }

    /// Column of bus `bus` in the reduced (reference-free) angle vector.
    pub fn angle_column(&self, bus: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match bus.cmp(&self.reference_bus) {
            Less => Some(bus),
            Equal => None,
            Greater => Some(bus - 1),
        }
    }

    /// Inverse of [`GridNetwork::angle_column`].
    pub fn column_bus(&self, col: usize) -> usize {
        if col < self.reference_bus {
            col
        } else {
            col + 1
        }
    }

    /// Operating-point angles of the non-reference buses, radians.
    pub fn operating_angles(&self) -> Vec<f64> {
        (0..self.state_dim())
            .map(|c| self.buses[self.column_bus(c)].operating_angle)
            .collect()
    }

    pub fn validate_meter(&self, meter: &MeterId) -> Result<()> {
        match *meter {
            MeterId::Injection(i) if i < self.bus_count() => Ok(()),
            MeterId::Injection(i) => Err(Error::InvalidMeter(format!("no bus with index {i}"))),
            MeterId::LineFlow { from, to } => {
                if self.line_between(from, to).is_some() && from != to {
                    Ok(())
                } else {
                    Err(Error::InvalidMeter(format!(
                        "no line between bus indices {from} and {to}"
                    )))
                }
            }
        }
    }

    /// Parses `"i-j"` (flow from bus `i` to bus `j`) or `"i"` (injection at
    /// bus `i`), using case-file bus numbers. Surrounding parentheses and a
    /// comma separator (`"(2,3)"`) are also accepted.
    pub fn parse_meter(&self, text: &str) -> Result<MeterId> {
        let t = text.trim().trim_start_matches('(').trim_end_matches(')').trim();
        let bad = || Error::InvalidMeter(format!("cannot parse meter '{text}'"));
        let bus = |s: &str| -> Result<usize> {
            let num: u32 = s.trim().parse().map_err(|_| bad())?;
            self.bus_index(num)
                .ok_or_else(|| Error::InvalidMeter(format!("unknown bus {num} in meter '{text}'")))
        };
        let meter = match t.split_once(['-', ',']) {
            Some((a, b)) => MeterId::LineFlow { from: bus(a)?, to: bus(b)? },
            None => MeterId::Injection(bus(t)?),
        };
        self.validate_meter(&meter)?;
        Ok(meter)
    }

    /// Comma- or whitespace-separated list in the `"2-3,3-4,4"` syntax.
    pub fn parse_meter_list(&self, text: &str) -> Result<Vec<MeterId>> {
        let mut out = Vec::new();
        let mut tokens = Vec::new();
        let mut current = String::new();
        let mut depth = 0usize;
        for ch in text.chars() {
            match ch {
                '(' => {
                    depth += 1;
                    current.push(ch);
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    current.push(ch);
                }
                ',' | ' ' | ';' | '\t' if depth == 0 => tokens.push(std::mem::take(&mut current)),
                _ => current.push(ch),
            }
        }
        tokens.push(current);
        for tok in tokens.iter().map(|s| s.as_str()).filter(|s| !s.trim().is_empty()) {
            let m = self.parse_meter(tok)?;
            if out.contains(&m) {
                return Err(Error::InvalidMeter(format!("meter '{tok}' listed twice")));
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Display label in the command-line syntax.
    pub fn meter_label(&self, meter: &MeterId) -> String {
        match *meter {
            MeterId::Injection(i) => self.buses[i].number.to_string(),
            MeterId::LineFlow { from, to } => {
                format!("{}-{}", self.buses[from].number, self.buses[to].number)
            }
        }
    }

    pub fn meter_list_label(&self, meters: &[MeterId]) -> String {
        meters.iter().map(|m| self.meter_label(m)).collect::<Vec<_>>().join(",")
    }
}

fn unordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Identity of a meter. Bus fields are dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeterId {
    LineFlow { from: usize, to: usize },
    Injection(usize),
}

impl fmt::Display for MeterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeterId::LineFlow { from, to } => write!(f, "flow[{from}->{to}]"),
            MeterId::Injection(i) => write!(f, "inj[{i}]"),
        }
    }
}

/// Ordered meter list; position `k` is row `k` of the measurement vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterLayout {
    meters: Vec<MeterId>,
    index: HashMap<MeterId, usize>,
}

impl MeterLayout {
    pub fn new(meters: Vec<MeterId>) -> Result<Self> {
        let mut index = HashMap::with_capacity(meters.len());
        for (k, m) in meters.iter().enumerate() {
            if index.insert(*m, k).is_some() {
                return Err(Error::InvalidMeter(format!("duplicate meter {m} in layout")));
            }
        }
        Ok(MeterLayout { meters, index })
    }

    pub fn meters(&self) -> &[MeterId] {
        &self.meters
    }

    /// Number of meters `m`.
    pub fn len(&self) -> usize {
        self.meters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meters.is_empty()
    }

    pub fn index_of(&self, meter: &MeterId) -> Option<usize> {
        self.index.get(meter).copied()
    }

    pub fn meter(&self, row: usize) -> MeterId {
        self.meters[row]
    }

    /// Row indices of `meters`, failing on any meter absent from the layout.
    pub fn rows_of(&self, meters: &[MeterId]) -> Result<Vec<usize>> {
        meters
            .iter()
            .map(|m| {
                self.index_of(m)
                    .ok_or_else(|| Error::InvalidMeter(format!("meter {m} is not in the layout")))
            })
            .collect()
    }
}

/// Injection meter at every bus plus flow meters in both directions on every
/// line. Rows: injections in bus order, then flows in line order with
/// `from->to` before `to->from`.
pub fn full_meter_layout(net: &GridNetwork) -> MeterLayout {
    let mut meters = Vec::with_capacity(net.bus_count() + 2 * net.line_count());
    meters.extend((0..net.bus_count()).map(MeterId::Injection));
    for line in &net.lines {
        meters.push(MeterId::LineFlow { from: line.from, to: line.to });
        meters.push(MeterId::LineFlow { from: line.to, to: line.from });
    }
    MeterLayout::new(meters).expect("full layout has no duplicates")
}

/// True iff the subgraph induced by `subset` is connected. An empty subset
/// is reported as disconnected.
pub fn subnetwork_connected(net: &GridNetwork, subset: &[usize]) -> bool {
    let Some(&start) = subset.first() else {
        return false;
    };
    let mut inside = vec![false; net.bus_count()];
    for &b in subset {
        if b >= net.bus_count() {
            return false;
        }
        inside[b] = true;
    }
    let target = inside.iter().filter(|&&x| x).count();
    let mut seen = vec![false; net.bus_count()];
    seen[start] = true;
    let mut reached = 1;
    let mut queue = VecDeque::from([start]);
    while let Some(b) = queue.pop_front() {
        for &(nb, _) in net.neighbors(b) {
            if inside[nb] && !seen[nb] {
                seen[nb] = true;
                reached += 1;
                queue.push_back(nb);
            }
        }
    }
    reached == target
}

/// Names accepted by [`load_case`] without touching the filesystem.
pub const BUILTIN_CASES: [&str; 2] = ["ieee14", "ieee118"];

/// Case-file text bundled with the crate.
pub fn builtin_case_text(name: &str) -> Option<&'static str> {
    match name.to_ascii_lowercase().as_str() {
        "ieee14" | "ieee-14" | "case14" => Some(IEEE14_CDF),
        "ieee118" | "ieee-118" | "case118" => Some(IEEE118_CDF),
        _ => None,
    }
}

/// Loads a bundled case by name, or parses the CDF file at `spec`.
pub fn load_case(spec: &str) -> Result<GridNetwork> {
    if let Some(text) = builtin_case_text(spec) {
        return parse_ieee_cdf(text);
    }
    let text = std::fs::read_to_string(Path::new(spec))?;
    parse_ieee_cdf(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> GridNetwork {
        let bus = |id: usize| Bus {
            id,
            number: id as u32 + 1,
            name: format!("B{}", id + 1),
            kind: if id == 0 { BusKind::Swing } else { BusKind::Load },
            base_voltage: 0.0,
            operating_angle: 0.0,
            operating_magnitude: 1.0,
        };
        let line = Line {
            from: 0,
            to: 1,
            series_resistance: 0.0,
            series_reactance: 0.2,
            susceptance: 5.0,
            shunt_charging: 0.0,
            circuits: 1,
        };
        GridNetwork::new("toy", 100.0, vec![bus(0), bus(1)], vec![line], 0).unwrap()
    }

    #[test]
    fn two_bus_layout_has_four_meters() {
        let net = two_bus();
        let layout = full_meter_layout(&net);
        assert_eq!(layout.len(), 4);
        assert_eq!(layout.meter(0), MeterId::Injection(0));
        assert_eq!(layout.meter(2), MeterId::LineFlow { from: 0, to: 1 });
        assert_eq!(layout.meter(3), MeterId::LineFlow { from: 1, to: 0 });
    }

    #[test]
    fn ieee14_counts_and_layout() {
        let net = load_case("ieee14").unwrap();
        assert_eq!(net.bus_count(), 14);
        assert_eq!(net.line_count(), 20);
        assert_eq!(full_meter_layout(&net).len(), 54);
        assert_eq!(net.buses[net.reference_bus].number, 1);
    }

    #[test]
    fn ieee118_layout_size() {
        let net = load_case("ieee118").unwrap();
        assert_eq!(net.bus_count(), 118);
        let layout = full_meter_layout(&net);
        assert_eq!(layout.len(), 118 + 2 * net.line_count());
        assert_eq!(net.buses[net.reference_bus].number, 69);
    }

    #[test]
    fn layout_is_deterministic() {
        let a = full_meter_layout(&load_case("ieee14").unwrap());
        let b = full_meter_layout(&load_case("ieee14").unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn connectivity_of_bus3_cut() {
        let net = load_case("ieee14").unwrap();
        let b3 = net.bus_index(3).unwrap();
        assert!(subnetwork_connected(&net, &[b3]));
        let rest: Vec<usize> = (0..14).filter(|&b| b != b3).collect();
        assert!(subnetwork_connected(&net, &rest));
        // buses 1 and 14 are not adjacent
        let pair = [net.bus_index(1).unwrap(), net.bus_index(14).unwrap()];
        assert!(!subnetwork_connected(&net, &pair));
    }

    #[test]
    fn meter_syntax_round_trip() {
        let net = load_case("ieee14").unwrap();
        let list = net.parse_meter_list("2-3,3-4, 4-3,(3,2),2").unwrap();
        assert_eq!(list.len(), 5);
        assert_eq!(net.meter_list_label(&list), "2-3,3-4,4-3,3-2,2");
        assert!(net.parse_meter("1-14").is_err());
        assert!(net.parse_meter("99").is_err());
        assert!(net.parse_meter_list("2,2").is_err());
    }

    #[test]
    fn duplicate_layout_rejected() {
        assert!(MeterLayout::new(vec![MeterId::Injection(0), MeterId::Injection(0)]).is_err());
    }
}
