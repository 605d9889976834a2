//! Observability tests, critical meter sets and cut discovery.
//!
//! A cut splitting the buses into two connected sides yields a critical set:
//! the flow meters on every cut line plus the injection meters at every
//! endpoint of those lines. Cuts are sampled with random edge contraction.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcmodel::LinearModel;
use crate::error::{Error, Result};
use crate::linalg::{complement, numerical_rank, select_rows};
use crate::netmodel::{subnetwork_connected, GridNetwork, MeterId, MeterLayout};
use crate::rng::stream_rng;

pub use crate::linalg::null_space_basis;

/// What a meter set stands for in an attack analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterRole {
    Adversary,
    Framed,
    Critical,
    FirstHalf,
    SecondHalf,
}

/// A role-tagged set of meters, kept in layout row order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSet {
    pub members: Vec<MeterId>,
    pub role: MeterRole,
}

impl MeterSet {
    /// Sorts `members` by layout row and rejects meters outside the layout.
    pub fn new(members: Vec<MeterId>, role: MeterRole, layout: &MeterLayout) -> Result<Self> {
        let mut rows = layout.rows_of(&members)?;
        rows.sort_unstable();
        rows.dedup();
        Ok(MeterSet { members: rows.into_iter().map(|r| layout.meter(r)).collect(), role })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, m: &MeterId) -> bool {
        self.members.contains(m)
    }
}

/// A bipartition of the buses and the lines crossing it.
///
/// `side_a` is the side holding bus 0, so equal cuts compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cut {
    pub side_a: Vec<usize>,
    pub side_b: Vec<usize>,
    /// Indices into `GridNetwork::lines`, ascending.
    pub cut_set: Vec<usize>,
}

impl Cut {
    /// Builds the cut separating `side` from the rest of the network.
    pub fn from_side(net: &GridNetwork, side: &[usize]) -> Result<Self> {
        let nb = net.bus_count();
        let mut mark = vec![false; nb];
        for &b in side {
            if b >= nb {
                return Err(Error::InvalidInput(format!("bus index {b} out of range")));
            }
            mark[b] = true;
        }
        if mark[0] {
            mark.iter_mut().for_each(|v| *v = !*v);
        }
        let side_b: Vec<usize> = (0..nb).filter(|&b| mark[b]).collect();
        let side_a: Vec<usize> = (0..nb).filter(|&b| !mark[b]).collect();
        if side_a.is_empty() || side_b.is_empty() {
            return Err(Error::InvalidInput("both sides of a cut must be nonempty".into()));
        }
        let cut_set = (0..net.line_count())
            .filter(|&l| mark[net.lines[l].from] != mark[net.lines[l].to])
            .collect();
        Ok(Cut { side_a, side_b, cut_set })
    }

    pub fn sides_connected(&self, net: &GridNetwork) -> bool {
        subnetwork_connected(net, &self.side_a) && subnetwork_connected(net, &self.side_b)
    }

    /// Smaller side, ties broken toward `side_b`.
    pub fn small_side(&self) -> &[usize] {
        if self.side_a.len() < self.side_b.len() {
            &self.side_a
        } else {
            &self.side_b
        }
    }
}

/// Full column rank of `h`.
pub fn is_observable(h: &DMatrix<f64>) -> bool {
    h.nrows() > 0 && numerical_rank(h) == h.ncols()
}

/// Rank of `H` with the listed rows deleted.
pub fn rank_without(h: &DMatrix<f64>, removed: &[usize]) -> usize {
    let keep = complement(h.nrows(), removed);
    if keep.is_empty() {
        return 0;
    }
    numerical_rank(&select_rows(h, &keep))
}

/// Removing `set` destroys observability while removing any proper subset
/// does not. Minimality is checked on every subset of size `|set| − 1`.
pub fn is_critical_set(model: &LinearModel, set: &[MeterId]) -> Result<bool> {
    if set.is_empty() {
        return Ok(false);
    }
    let rows = model.layout.rows_of(set)?;
    let n = model.state_dim();
    if rank_without(&model.h, &rows) >= n {
        return Ok(false);
    }
    for skip in 0..rows.len() {
        let subset: Vec<usize> = rows.iter().enumerate().filter(|&(k, _)| k != skip).map(|(_, &r)| r).collect();
        if rank_without(&model.h, &subset) < n {
            return Ok(false);
        }
    }
    Ok(true)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// One contraction run: contract lines in random order until two
/// super-nodes remain.
fn contract_once(net: &GridNetwork, seed: u64, run: u64) -> Cut {
    let nb = net.bus_count();
    let mut order: Vec<usize> = (0..net.line_count()).collect();
    let mut rng = stream_rng(seed, run);
    order.shuffle(&mut rng);
    let mut parent: Vec<usize> = (0..nb).collect();
    let mut groups = nb;
    for l in order {
        if groups == 2 {
            break;
        }
        let (a, b) = (find(&mut parent, net.lines[l].from), find(&mut parent, net.lines[l].to));
        if a != b {
            parent[a] = b;
            groups -= 1;
        }
    }
    let root0 = find(&mut parent, 0);
    let side: Vec<usize> = (0..nb).filter(|&b| find(&mut parent, b) != root0).collect();
    Cut::from_side(net, &side).expect("contraction leaves two nonempty groups")
}

/// Distinct cuts found by `runs` independent random contractions, in order
/// of first discovery. Each run draws from its own stream of `seed`.
pub fn find_cuts_contraction(net: &GridNetwork, runs: usize, seed: u64) -> Result<Vec<Cut>> {
    if runs == 0 {
        return Err(Error::InvalidInput("runs must be at least 1".into()));
    }
    if net.bus_count() < 2 {
        return Err(Error::InvalidInput("a cut needs at least two buses".into()));
    }
    let found: Vec<Cut> = (0..runs as u64).into_par_iter().map(|r| contract_once(net, seed, r)).collect();
    let mut seen = HashSet::new();
    Ok(found.into_iter().filter(|c| seen.insert(c.side_a.clone())).collect())
}

/// Meters associated with `cut`: both flow directions on every cut line and
/// the injections at every cut-line endpoint, in layout order.
pub fn critical_set_from_cut(net: &GridNetwork, layout: &MeterLayout, cut: &Cut) -> Result<MeterSet> {
    if !cut.sides_connected(net) {
        return Err(Error::InvalidInput("a side of the cut is disconnected".into()));
    }
    let mut members = Vec::new();
    for &l in &cut.cut_set {
        let line = &net.lines[l];
        for m in [
            MeterId::LineFlow { from: line.from, to: line.to },
            MeterId::LineFlow { from: line.to, to: line.from },
            MeterId::Injection(line.from),
            MeterId::Injection(line.to),
        ] {
            if layout.index_of(&m).is_some() && !members.contains(&m) {
                members.push(m);
            }
        }
    }
    MeterSet::new(members, MeterRole::Critical, layout)
}

/// Split of a cut's critical set into line-meter pairs and the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfPartition {
    pub s1: MeterSet,
    pub s2: MeterSet,
    /// Whether `||S₁| − |S|/2| ≤ 1` was achieved.
    pub within_bound: bool,
}

/// Adds the flow-meter pairs of the cut lines to `S₁` in line order until
/// `||S₁| − |S|/2| ≤ 1`; `S₂` is the remainder. When the bound cannot be
/// met the closest prefix is returned with `within_bound = false`.
pub fn half_partition(net: &GridNetwork, layout: &MeterLayout, set: &MeterSet, cut: &Cut) -> Result<HalfPartition> {
    let half = set.len() as f64 / 2.0;
    let mut s1: Vec<MeterId> = Vec::new();
    let mut best: (f64, usize) = (half, 0);
    let mut prefixes: Vec<Vec<MeterId>> = vec![Vec::new()];
    let mut within = false;
    for &l in &cut.cut_set {
        let line = &net.lines[l];
        for m in [MeterId::LineFlow { from: line.from, to: line.to }, MeterId::LineFlow { from: line.to, to: line.from }] {
            if set.contains(&m) {
                s1.push(m);
            }
        }
        prefixes.push(s1.clone());
        let gap = (s1.len() as f64 - half).abs();
        if gap < best.0 {
            best = (gap, prefixes.len() - 1);
        }
        if gap <= 1.0 {
            within = true;
            break;
        }
    }
    let chosen = prefixes.swap_remove(best.1);
    let rest: Vec<MeterId> = set.members.iter().copied().filter(|m| !chosen.contains(m)).collect();
    Ok(HalfPartition {
        s1: MeterSet::new(chosen, MeterRole::FirstHalf, layout)?,
        s2: MeterSet::new(rest, MeterRole::SecondHalf, layout)?,
        within_bound: within,
    })
}

/// One line per cut: side sizes, cut lines, meter set, criticality.
pub fn cut_listing(model: &LinearModel, cuts: &[Cut]) -> Result<String> {
    let net = &model.net;
    let mut out = String::from("# side_a side_b lines meters critical\n");
    for cut in cuts {
        let lines: Vec<String> = cut
            .cut_set
            .iter()
            .map(|&l| format!("{}-{}", net.buses[net.lines[l].from].number, net.buses[net.lines[l].to].number))
            .collect();
        let (meters, critical) = match critical_set_from_cut(net, &model.layout, cut) {
            Ok(set) => (net.meter_list_label(&set.members), is_critical_set(model, &set.members)?),
            Err(_) => ("-".to_string(), false),
        };
        writeln!(
            out,
            "{} {} {} {} {}",
            cut.side_a.len(),
            cut.side_b.len(),
            lines.join(","),
            meters,
            if critical { "yes" } else { "no" }
        )
        .expect("write to string");
    }
    Ok(out)
}
