//! Distributional comparison of generated and reference molecules.
//!
//! Bonds are detected from length windows per type pair, bond lengths and
//! all pairwise distances are pooled into histograms on shared bins, and
//! sets are compared with the base-2 Jensen–Shannon divergence.

use std::fmt::Write as _;

use crate::diffusion::{Molecule, ProteinContext};
use crate::geometry::{centroid, distance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Aromatic,
}

impl BondOrder {
    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Aromatic => ':',
        }
    }
}

/// A bond class: an unordered ligand type pair, its order and the accepted
/// length window in Å.
#[derive(Debug, Clone, PartialEq)]
pub struct BondSpec {
    pub types: (usize, usize),
    pub order: BondOrder,
    pub lo: f64,
    pub hi: f64,
    /// Display name such as `C=O`.
    pub label: String,
}

impl BondSpec {
    pub fn new(a: usize, b: usize, order: BondOrder, lo: f64, hi: f64, symbols: &[&str]) -> Result<Self> {
        if !(0.0 < lo && lo < hi) {
            return Err(Error::Binning(format!("bond window [{lo}, {hi}] must satisfy 0 < lo < hi")));
        }
        let label = format!("{}{}{}", symbols[a.min(b)], order.symbol(), symbols[a.max(b)]);
        Ok(Self {
            types: (a.min(b), a.max(b)),
            order,
            lo,
            hi,
            label,
        })
    }

    /// Window of `± tol` around a target length.
    pub fn around(a: usize, b: usize, order: BondOrder, length: f64, tol: f64, symbols: &[&str]) -> Result<Self> {
        Self::new(a, b, order, length - tol, length + tol, symbols)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn matches(&self, a: usize, b: usize, d: f64) -> bool {
        self.types == (a.min(b), a.max(b)) && self.lo <= d && d <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    /// Index into the bond table.
    pub spec: usize,
    pub length: f64,
}

/// Every atom pair `i < j` whose distance falls inside a window for its type
/// pair. When several windows contain the distance the one whose midpoint is
/// nearest wins (ties go to the earlier table entry).
pub fn detect_bonds(mol: &Molecule, table: &[BondSpec]) -> Vec<Bond> {
    let mut out = Vec::new();
    let n = mol.len();
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(mol.positions[i], mol.positions[j]);
            let (a, b) = (mol.types[i], mol.types[j]);
            let best = table
                .iter()
                .enumerate()
                .filter(|(_, s)| s.matches(a, b, d))
                .min_by(|(_, x), (_, y)| {
                    (x.midpoint() - d)
                        .abs()
                        .partial_cmp(&(y.midpoint() - d).abs())
                        .expect("finite distances")
                });
            if let Some((spec, _)) = best {
                out.push(Bond { i, j, spec, length: d });
            }
        }
    }
    out
}

/// Uniform bins over `[lo, hi]`; the upper edge belongs to the last bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return Err(Error::Binning(format!("need lo < hi and bins > 0, got [{lo}, {hi}] × {bins}")));
        }
        Ok(Self { lo, hi, bins })
    }

    /// 64 bins over [0.8, 2.2] Å.
    pub fn bond_lengths() -> Self {
        Self {
            lo: 0.8,
            hi: 2.2,
            bins: 64,
        }
    }

    /// 100 bins over [0, 12] Å.
    pub fn all_atom() -> Self {
        Self {
            lo: 0.0,
            hi: 12.0,
            bins: 100,
        }
    }

    pub fn index(&self, x: f64) -> Option<usize> {
        if !(self.lo..=self.hi).contains(&x) {
            return None;
        }
        let k = ((x - self.lo) / (self.hi - self.lo) * self.bins as f64) as usize;
        Some(k.min(self.bins - 1))
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|k| self.lo + w * k as f64).collect()
    }
}

/// Counts on a fixed binning. Values outside the range are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub binning: Binning,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(binning: Binning) -> Self {
        Self {
            binning,
            counts: vec![0; binning.bins],
        }
    }

    pub fn from_values(binning: Binning, values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::new(binning);
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn add(&mut self, x: f64) {
        if let Some(k) = self.binning.index(x) {
            self.counts[k] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Probability mass per bin; all zeros when empty.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.total();
        if n == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / n as f64).collect()
    }
}

/// Base-2 Jensen–Shannon divergence between two probability vectors.
pub fn jsd_probs(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Binning(format!("{} bins vs {} bins", p.len(), q.len())));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

pub fn jsd(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.binning != q.binning {
        return Err(Error::Binning(format!("{:?} vs {:?}", p.binning, q.binning)));
    }
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptySet("histogram has no counts".into()));
    }
    jsd_probs(&p.probabilities(), &q.probabilities())
}

/// All intra-molecular pairwise distances of a set.
pub fn pairwise_distances(set: &[Molecule]) -> Vec<f64> {
    let mut out = Vec::new();
    for mol in set {
        for i in 0..mol.len() {
            for j in i + 1..mol.len() {
                out.push(distance(mol.positions[i], mol.positions[j]));
            }
        }
    }
    out
}

pub fn all_atom_distance_jsd(generated: &[Molecule], reference: &[Molecule], binning: Binning) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::EmptySet("generated set".into()));
    }
    if reference.is_empty() {
        return Err(Error::EmptySet("reference set".into()));
    }
    let g = Histogram::from_values(binning, pairwise_distances(generated));
    let r = Histogram::from_values(binning, pairwise_distances(reference));
    jsd(&g, &r)
}

/// Bond lengths of each class over a set, indexed like `table`.
pub fn bond_lengths_by_class(set: &[Molecule], table: &[BondSpec]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); table.len()];
    for mol in set {
        for b in detect_bonds(mol, table) {
            out[b.spec].push(b.length);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub class: String,
    pub jsd: f64,
    /// Set when the class never occurs in the generated set.
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class,jsd,flag\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6},{}", r.metric, r.class, r.jsd, r.flag as u8);
        }
        out
    }

    pub fn get(&self, class: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.class == class)
    }
}

/// One JSD row per bond class present in the reference; classes missing
/// from the generated set get JSD 1 and a flag.
pub fn bond_report(
    generated: &[Molecule],
    reference: &[Molecule],
    table: &[BondSpec],
    binning: Binning,
) -> Result<Report> {
    let gen = bond_lengths_by_class(generated, table);
    let refs = bond_lengths_by_class(reference, table);
    let mut rows = Vec::new();
    for (k, spec) in table.iter().enumerate() {
        let r = Histogram::from_values(binning, refs[k].iter().copied());
        if r.is_empty() {
            continue;
        }
        let g = Histogram::from_values(binning, gen[k].iter().copied());
        let (value, flag) = if g.is_empty() { (1.0, true) } else { (jsd(&g, &r)?, false) };
        rows.push(ReportRow {
            metric: "bond_length".into(),
            class: spec.label.clone(),
            jsd: value,
            flag,
        });
    }
    Ok(Report { rows })
}

/// Bond rows followed by the `all_atom` distance row.
pub fn full_report(
    generated: &[Molecule],
    reference: &[Molecule],
    table: &[BondSpec],
    bond_binning: Binning,
    distance_binning: Binning,
) -> Result<Report> {
    let mut report = bond_report(generated, reference, table, bond_binning)?;
    report.rows.push(ReportRow {
        metric: "distance".into(),
        class: "all_atom".into(),
        jsd: all_atom_distance_jsd(generated, reference, distance_binning)?,
        flag: false,
    });
    Ok(report)
}

/// Fraction of ligand atoms within `radius` of the pocket's center of mass.
pub fn containment_fraction(mol: &Molecule, protein: &ProteinContext, radius: f64) -> f64 {
    let com = centroid(&protein.positions);
    let inside = mol.positions.iter().filter(|&&p| distance(p, com) <= radius).count();
    inside as f64 / mol.len().max(1) as f64
}
