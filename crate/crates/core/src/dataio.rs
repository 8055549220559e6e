//! Synthetic pocket/ligand corpus and XYZ file I/O.
//!
//! Ligands are instantiated from a small library of planar fragments (chains
//! with 120° bond angles and a benzene ring with substituents) whose bond
//! lengths come from [`BOND_LENGTHS`]. The same table, widened by ±0.1 Å,
//! drives bond detection in [`crate::evalkit`]. Pockets are shells of
//! protein atoms around the placed ligand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{parse_value, unknown_key, FlatConfig};
use crate::diffusion::{Complex, Molecule, ProteinContext};
use crate::evalkit::{BondOrder, BondSpec};
use crate::geometry::{add, distance, random_rotation, rotate, scale, Vec3};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

pub const LIGAND_SYMBOLS: [&str; 4] = ["C", "N", "O", "F"];
pub const PROTEIN_SYMBOLS: [&str; 2] = ["C", "N"];

const C: usize = 0;
const N: usize = 1;
const O: usize = 2;
const F: usize = 3;

/// Target lengths (Å) for every bond class the generator emits.
pub const BOND_LENGTHS: [(usize, usize, BondOrder, f64); 8] = [
    (C, C, BondOrder::Single, 1.54),
    (C, N, BondOrder::Single, 1.47),
    (C, O, BondOrder::Single, 1.43),
    (C, F, BondOrder::Single, 1.35),
    (C, C, BondOrder::Double, 1.34),
    (C, N, BondOrder::Double, 1.28),
    (C, O, BondOrder::Double, 1.23),
    (C, C, BondOrder::Aromatic, 1.39),
];

/// Half-width of the detection window around each target length.
pub const BOND_TOLERANCE: f64 = 0.1;

fn bond_length(a: usize, b: usize, order: BondOrder) -> f64 {
    let key = (a.min(b), a.max(b));
    BOND_LENGTHS
        .iter()
        .find(|(x, y, o, _)| (*x, *y) == key && *o == order)
        .map(|e| e.3)
        .expect("bond class present in table")
}

/// Detection windows matching the generator's bond lengths.
pub fn bond_table() -> Vec<BondSpec> {
    BOND_LENGTHS
        .iter()
        .map(|&(a, b, order, len)| {
            BondSpec::around(a, b, order, len, BOND_TOLERANCE, &LIGAND_SYMBOLS).expect("valid window")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateEdge {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
    pub length: f64,
}

/// A rigid fragment in its reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub types: Vec<usize>,
    pub positions: Vec<Vec3>,
    pub edges: Vec<TemplateEdge>,
}

impl Template {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Planar zigzag chain: consecutive bonds alternate ±30° from the x-axis,
    /// giving 120° bond angles.
    fn chain(name: String, types: &[usize], orders: &[BondOrder]) -> Self {
        let mut positions = vec![[0.0; 3]];
        let mut edges = Vec::new();
        let (s, c) = (0.5, 3f64.sqrt() / 2.0);
        for (k, &order) in orders.iter().enumerate() {
            let len = bond_length(types[k], types[k + 1], order);
            let dir = if k % 2 == 0 { [c, s, 0.0] } else { [c, -s, 0.0] };
            positions.push(add(positions[k], scale(dir, len)));
            edges.push(TemplateEdge {
                i: k,
                j: k + 1,
                order,
                length: len,
            });
        }
        Self {
            name,
            types: types.to_vec(),
            positions,
            edges,
        }
    }

    /// Benzene ring with substituents pointing radially outwards.
    fn arene(name: String, substituents: &[(usize, usize)]) -> Self {
        let side = bond_length(C, C, BondOrder::Aromatic);
        let mut types = vec![C; 6];
        let mut positions: Vec<Vec3> = (0..6)
            .map(|k| {
                let a = std::f64::consts::FRAC_PI_3 * k as f64;
                [side * a.cos(), side * a.sin(), 0.0]
            })
            .collect();
        let mut edges: Vec<TemplateEdge> = (0..6)
            .map(|k| TemplateEdge {
                i: k,
                j: (k + 1) % 6,
                order: BondOrder::Aromatic,
                length: side,
            })
            .collect();
        for &(at, ty) in substituents {
            let len = bond_length(C, ty, BondOrder::Single);
            let a = std::f64::consts::FRAC_PI_3 * at as f64;
            let p = positions[at];
            positions.push(add(p, [len * a.cos(), len * a.sin(), 0.0]));
            types.push(ty);
            edges.push(TemplateEdge {
                i: at,
                j: types.len() - 1,
                order: BondOrder::Single,
                length: len,
            });
        }
        Self {
            name,
            types,
            positions,
            edges,
        }
    }
}

/// The fragment library: alkanes, alcohols, amines, fluoroalkanes,
/// enones, imines and substituted benzenes, from 4 to 10 heavy atoms.
pub fn template_library() -> Vec<Template> {
    use BondOrder::*;
    let mut out = Vec::new();
    for n in 4..=8 {
        out.push(Template::chain(format!("alkane{n}"), &vec![C; n], &vec![Single; n - 1]));
    }
    for n in 3..=7 {
        let mut types = vec![C; n];
        types.push(O);
        out.push(Template::chain(format!("alcohol{}", n + 1), &types, &vec![Single; n]));
    }
    for n in 3..=6 {
        let mut types = vec![N];
        types.extend(vec![C; n]);
        types.push(O);
        out.push(Template::chain(format!("aminoalcohol{}", n + 2), &types, &vec![Single; n + 1]));
    }
    for n in 3..=6 {
        let mut types = vec![C; n];
        types.push(F);
        out.push(Template::chain(format!("fluoro{}", n + 1), &types, &vec![Single; n]));
    }
    for n in 4..=7 {
        // C=C–C...–C=O
        let mut types = vec![C; n];
        types.push(O);
        let mut orders = vec![Single; n];
        orders[0] = Double;
        orders[n - 1] = Double;
        out.push(Template::chain(format!("enone{}", n + 1), &types, &orders));
    }
    for n in 2..=5 {
        // C...–C=N–C
        let mut types = vec![C; n];
        types.push(N);
        types.push(C);
        let mut orders = vec![Single; n + 1];
        orders[n - 1] = Double;
        out.push(Template::chain(format!("imine{}", n + 2), &types, &orders));
    }
    out.push(Template::arene("benzene".into(), &[]));
    out.push(Template::arene("fluorobenzene".into(), &[(0, F)]));
    out.push(Template::arene("phenol".into(), &[(0, O)]));
    out.push(Template::arene("aniline".into(), &[(0, N)]));
    out.push(Template::arene("toluene".into(), &[(0, C)]));
    out.push(Template::arene("aminophenol".into(), &[(0, N), (3, O)]));
    out.push(Template::arene("difluorobenzene".into(), &[(0, F), (2, F)]));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub num_complexes: usize,
    pub ligand_min: usize,
    pub ligand_max: usize,
    pub pocket_min: usize,
    pub pocket_max: usize,
    /// Target distance (Å) from each protein atom to its nearest ligand atom.
    pub shell_radius: f64,
    /// Accepted deviation from `shell_radius`.
    pub shell_tolerance: f64,
    /// Minimum spacing between protein atoms.
    pub protein_spacing: f64,
    /// Largest per-atom ligand displacement (Å); offsets are uniform in the
    /// ball of this radius, so a bond moves by at most twice this.
    pub jitter: f64,
    /// Ligands are placed uniformly in a cube of this half-width.
    pub placement_box: f64,
    /// Fraction of pocket atoms typed N.
    pub protein_n_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_complexes: 600,
            ligand_min: 4,
            ligand_max: 10,
            pocket_min: 16,
            pocket_max: 24,
            shell_radius: 4.0,
            shell_tolerance: 0.5,
            protein_spacing: 2.5,
            jitter: 0.02,
            placement_box: 10.0,
            protein_n_fraction: 0.3,
            seed: 2021,
        }
    }
}

impl FlatConfig for CorpusSpec {
    const KEYS: &'static [&'static str] = &[
        "num_complexes",
        "ligand_min",
        "ligand_max",
        "pocket_min",
        "pocket_max",
        "shell_radius",
        "shell_tolerance",
        "protein_spacing",
        "jitter",
        "placement_box",
        "protein_n_fraction",
        "seed",
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "num_complexes" => self.num_complexes = parse_value(key, value)?,
            "ligand_min" => self.ligand_min = parse_value(key, value)?,
            "ligand_max" => self.ligand_max = parse_value(key, value)?,
            "pocket_min" => self.pocket_min = parse_value(key, value)?,
            "pocket_max" => self.pocket_max = parse_value(key, value)?,
            "shell_radius" => self.shell_radius = parse_value(key, value)?,
            "shell_tolerance" => self.shell_tolerance = parse_value(key, value)?,
            "protein_spacing" => self.protein_spacing = parse_value(key, value)?,
            "jitter" => self.jitter = parse_value(key, value)?,
            "placement_box" => self.placement_box = parse_value(key, value)?,
            "protein_n_fraction" => self.protein_n_fraction = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(unknown_key(key, Self::KEYS)),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("num_complexes", self.num_complexes.to_string()),
            ("ligand_min", self.ligand_min.to_string()),
            ("ligand_max", self.ligand_max.to_string()),
            ("pocket_min", self.pocket_min.to_string()),
            ("pocket_max", self.pocket_max.to_string()),
            ("shell_radius", self.shell_radius.to_string()),
            ("shell_tolerance", self.shell_tolerance.to_string()),
            ("protein_spacing", self.protein_spacing.to_string()),
            ("jitter", self.jitter.to_string()),
            ("placement_box", self.placement_box.to_string()),
            ("protein_n_fraction", self.protein_n_fraction.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Error::BadValue {
            key: key.into(),
            value: String::new(),
            reason: reason.into(),
        };
        if self.ligand_min > self.ligand_max || self.ligand_max == 0 {
            return Err(bad("ligand_min", "ligand size range is empty"));
        }
        if self.pocket_min > self.pocket_max || self.pocket_max == 0 {
            return Err(bad("pocket_min", "pocket size range is empty"));
        }
        if !(self.shell_radius > self.shell_tolerance && self.shell_tolerance >= 0.0) {
            return Err(bad("shell_radius", "must exceed shell_tolerance"));
        }
        if !(self.jitter >= 0.0) {
            return Err(bad("jitter", "must be non-negative"));
        }
        if self.templates().is_empty() {
            return Err(bad("ligand_min", "no template fits the ligand size range"));
        }
        Ok(())
    }

    /// Library entries whose size lies in the ligand range.
    pub fn templates(&self) -> Vec<Template> {
        template_library()
            .into_iter()
            .filter(|t| (self.ligand_min..=self.ligand_max).contains(&t.len()))
            .collect()
    }
}

/// A generated complex and the template it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedComplex {
    pub complex: Complex,
    pub template: String,
}

fn jittered<R: Rng + ?Sized>(p: Vec3, radius: f64, rng: &mut R) -> Vec3 {
    if radius == 0.0 {
        return p;
    }
    let r = radius * rng.random::<f64>().cbrt();
    add(p, scale(random_unit(rng), r))
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return scale(v, 1.0 / n);
        }
    }
}

/// One complex: a random template rigidly placed with jitter, wrapped in a
/// shell of protein atoms.
pub fn generate_complex<R: Rng + ?Sized>(spec: &CorpusSpec, rng: &mut R) -> Result<GeneratedComplex> {
    spec.validate()?;
    let templates = spec.templates();
    let template = &templates[rng.random_range(0..templates.len())];
    let rot = random_rotation(rng);
    let b = spec.placement_box;
    let shift = [
        rng.random_range(-b..=b),
        rng.random_range(-b..=b),
        rng.random_range(-b..=b),
    ];
    let mut ligand = Vec::with_capacity(template.len());
    for &p in &template.positions {
        let placed = add(rotate(&rot, p), shift);
        ligand.push(jittered(placed, spec.jitter, rng));
    }

    let target = rng.random_range(spec.pocket_min..=spec.pocket_max);
    let (lo, hi) = (spec.shell_radius - spec.shell_tolerance, spec.shell_radius + spec.shell_tolerance);
    let mut protein: Vec<Vec3> = Vec::with_capacity(target);
    let mut attempts = 0usize;
    while protein.len() < target {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidMolecule(format!(
                "could not place {target} pocket atoms around template {}",
                template.name
            )));
        }
        let anchor = ligand[rng.random_range(0..ligand.len())];
        let r = rng.random_range(lo..=hi);
        let cand = add(anchor, scale(random_unit(rng), r));
        let nearest = ligand.iter().map(|&p| distance(p, cand)).fold(f64::INFINITY, f64::min);
        if nearest < lo || nearest > hi {
            continue;
        }
        if protein.iter().any(|&q| distance(q, cand) < spec.protein_spacing) {
            continue;
        }
        protein.push(cand);
    }
    let protein_types = (0..protein.len())
        .map(|_| if rng.random::<f64>() < spec.protein_n_fraction { 1 } else { 0 })
        .collect();
    Ok(GeneratedComplex {
        complex: Complex {
            protein: ProteinContext::new(protein, protein_types, PROTEIN_SYMBOLS.len())?,
            ligand: Molecule::new(ligand, template.types.clone(), LIGAND_SYMBOLS.len())?,
        },
        template: template.name.clone(),
    })
}

/// The whole corpus; complex `i` uses its own random stream, so the result
/// is a pure function of its `CorpusSpec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<GeneratedComplex>> {
    spec.validate()?;
    (0..spec.num_complexes)
        .map(|i| generate_complex(spec, &mut stream(spec.seed, 0, i as u64, Purpose::Corpus)))
        .collect()
}

/// Hook for the RMSD-based complex filter used on docked data. Synthetic
/// complexes have no docking pose to compare against, so everything passes.
pub fn rmsd_filter(complexes: Vec<GeneratedComplex>) -> Vec<GeneratedComplex> {
    complexes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Ligand,
    Protein,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Ligand => "ligand",
            Role::Protein => "protein",
        }
    }

    pub fn symbols(self) -> &'static [&'static str] {
        match self {
            Role::Ligand => &LIGAND_SYMBOLS,
            Role::Protein => &PROTEIN_SYMBOLS,
        }
    }
}

/// Contents of one XYZ file.
#[derive(Debug, Clone, PartialEq)]
pub struct XyzRecord {
    pub role: Role,
    pub provenance: String,
    pub positions: Vec<Vec3>,
    pub types: Vec<usize>,
}

impl XyzRecord {
    pub fn num_types(&self) -> usize {
        self.role.symbols().len()
    }

    pub fn into_molecule(self) -> Result<Molecule> {
        let k = self.num_types();
        Molecule::new(self.positions, self.types, k)
    }

    pub fn into_protein(self) -> Result<ProteinContext> {
        let k = self.num_types();
        ProteinContext::new(self.positions, self.types, k)
    }
}

/// Renders the XYZ text: atom count, a `role=... K=... source=...` comment
/// line, then `TYPE x y z` rows with six decimals.
pub fn format_xyz(role: Role, positions: &[Vec3], types: &[usize], provenance: &str) -> String {
    let symbols = role.symbols();
    let mut out = String::new();
    let _ = writeln!(out, "{}", positions.len());
    let _ = writeln!(out, "role={} K={} source={}", role.name(), symbols.len(), provenance);
    for (p, &t) in positions.iter().zip(types) {
        let _ = writeln!(out, "{} {:.6} {:.6} {:.6}", symbols[t], p[0], p[1], p[2]);
    }
    out
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<XyzRecord> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let count_line = lines.next().ok_or_else(|| err(1, "missing atom count line".into()))?;
    let count: usize = count_line
        .trim()
        .parse()
        .map_err(|_| err(1, format!("atom count `{}` is not an integer", count_line.trim())))?;
    let comment = lines.next().ok_or_else(|| err(2, "missing comment line".into()))?;

    let mut role = None;
    let mut k = None;
    let mut provenance = String::new();
    for field in comment.split_whitespace() {
        match field.split_once('=') {
            Some(("role", "ligand")) => role = Some(Role::Ligand),
            Some(("role", "protein")) => role = Some(Role::Protein),
            Some(("role", other)) => return Err(err(2, format!("unknown role `{other}`"))),
            Some(("K", v)) => k = Some(v.parse::<usize>().map_err(|_| err(2, format!("bad K `{v}`")))?),
            Some(("source", v)) => provenance = v.to_string(),
            _ => {}
        }
    }
    let role = role.ok_or_else(|| err(2, "comment line lacks role=ligand|protein".into()))?;
    let symbols = role.symbols();
    if let Some(k) = k {
        if k != symbols.len() {
            return Err(err(2, format!("K={k} but the {} vocabulary has {}", role.name(), symbols.len())));
        }
    }

    let mut positions = Vec::with_capacity(count);
    let mut types = Vec::with_capacity(count);
    for (offset, raw) in lines.enumerate() {
        let line_no = offset + 3;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(line_no, format!("expected `TYPE x y z`, got {} fields", fields.len())));
        }
        let t = symbols
            .iter()
            .position(|&s| s == fields[0])
            .ok_or_else(|| err(line_no, format!("unknown {} atom type `{}`", role.name(), fields[0])))?;
        let mut p = [0.0; 3];
        for (c, f) in p.iter_mut().zip(&fields[1..]) {
            *c = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(line_no, format!("bad coordinate `{f}`")))?;
        }
        positions.push(p);
        types.push(t);
    }
    if positions.len() != count {
        return Err(err(
            1,
            format!("count line says {count} atoms but the file has {} atom rows", positions.len()),
        ));
    }
    Ok(XyzRecord {
        role,
        provenance,
        positions,
        types,
    })
}

pub fn write_xyz(path: &Path, role: Role, positions: &[Vec3], types: &[usize], provenance: &str) -> Result<()> {
    std::fs::write(path, format_xyz(role, positions, types, provenance)).map_err(|e| Error::io(path, e))
}

pub fn read_xyz(path: &Path) -> Result<XyzRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

pub fn write_molecule(path: &Path, mol: &Molecule, provenance: &str) -> Result<()> {
    write_xyz(path, Role::Ligand, &mol.positions, &mol.types, provenance)
}

pub fn read_molecule(path: &Path) -> Result<Molecule> {
    read_xyz(path)?.into_molecule()
}

pub fn write_pocket(path: &Path, protein: &ProteinContext, provenance: &str) -> Result<()> {
    write_xyz(path, Role::Protein, &protein.positions, &protein.types, provenance)
}

pub fn read_pocket(path: &Path) -> Result<ProteinContext> {
    read_xyz(path)?.into_protein()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub template: String,
    pub complex: Complex,
}

pub const MANIFEST_HEADER: &str = "id,template,ligand_atoms,pocket_atoms";

pub fn corpus_id(i: usize) -> String {
    format!("c{i:05}")
}

/// Writes `<id>_ligand.xyz`, `<id>_pocket.xyz` and `manifest.csv`.
pub fn write_corpus(dir: &Path, corpus: &[GeneratedComplex]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (i, g) in corpus.iter().enumerate() {
        let id = corpus_id(i);
        let source = format!("synthetic:{}", g.template);
        write_molecule(&dir.join(format!("{id}_ligand.xyz")), &g.complex.ligand, &source)?;
        write_pocket(&dir.join(format!("{id}_pocket.xyz")), &g.complex.protein, &source)?;
        let _ = writeln!(
            manifest,
            "{id},{},{},{}",
            g.template,
            g.complex.ligand.len(),
            g.complex.protein.len()
        );
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads every complex listed in `manifest.csv`.
pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusEntry>> {
    let path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let id = fields[0].to_string();
        let ligand = read_molecule(&dir.join(format!("{id}_ligand.xyz")))?;
        let protein = read_pocket(&dir.join(format!("{id}_pocket.xyz")))?;
        out.push(CorpusEntry {
            id,
            template: fields[1].to_string(),
            complex: Complex { protein, ligand },
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}
