//! Line-based experiment configuration.
//!
//! The format has `[section]` headers followed by `key = value` lines.
//! `#` starts a comment. Keys marked repeatable below may appear several
//! times; every other key at most once.
//!
//! ```text
//! [problem]
//! kind = cantilever_compliance   # or eigenvalue(2), perimeter, ...
//! [domain]
//! box = 0 0 2 1
//! segment = tip right 0.45 0.55  # repeatable: name side from to
//! dirichlet = left
//! load = tip 0 -1                # repeatable: name gx gy
//! [run]
//! n = 300
//! iters = 100
//! vt = 0.7
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use otto::geometry::{Domain, Point};
use otto::optimize::SeedConstraint;

/// Experiment family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Perimeter,
    /// Minimization of the `k`-th Dirichlet eigenvalue (1-based).
    Eigenvalue(usize),
    TwoPhaseConduction,
    CantileverCompliance,
    BridgeComplianceTopo,
    StressBridge,
}

impl ProblemKind {
    /// Whether the shape is a subset of cells of a diagram of the whole box.
    pub fn is_two_phase(self) -> bool {
        !matches!(self, ProblemKind::Perimeter | ProblemKind::Eigenvalue(_))
    }

    /// Whether the state is a linear elasticity problem.
    pub fn is_elastic(self) -> bool {
        matches!(
            self,
            ProblemKind::CantileverCompliance | ProblemKind::BridgeComplianceTopo | ProblemKind::StressBridge
        )
    }
}

/// Side of the box, counterclockwise from the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    pub fn name(self) -> &'static str {
        match self {
            Side::Bottom => "bottom",
            Side::Right => "right",
            Side::Top => "top",
            Side::Left => "left",
        }
    }

    fn parse(s: &str) -> Option<Side> {
        Side::ALL.into_iter().find(|side| side.name() == s)
    }
}

/// Named piece `[from, to]` of a box side, in the coordinate running along
/// that side (`x` for bottom and top, `y` for left and right).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub side: Side,
    pub from: f64,
    pub to: f64,
}

/// Cell update cadences in iterations; zero disables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cadences {
    pub lloyd: usize,
    pub resample: usize,
    pub islands: usize,
    pub topo: usize,
}

/// Material constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Materials {
    /// Conductivity of the background phase.
    pub gamma0: f64,
    /// Conductivity of the shape.
    pub gamma1: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Stiffness ratio of the void phase in elastic problems.
    pub ersatz: f64,
    /// Constant heat source.
    pub source: f64,
}

impl Default for Materials {
    fn default() -> Self {
        // Lamé pair of a unit Young modulus with Poisson ratio 0.3.
        Materials { gamma0: 1.0, gamma1: 10.0, lambda: 0.3 / (1.3 * 0.4), mu: 1.0 / 2.6, ersatz: 1e-3, source: 1.0 }
    }
}

/// Initial phase indicator for two-phase problems: cells take the
/// background phase unless their seed lies in one of the listed disks or
/// rectangles, which hold the other phase.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPhase {
    pub background_material: bool,
    pub disks: Vec<(Point, f64)>,
    pub rects: Vec<[f64; 4]>,
}

impl InitialPhase {
    pub fn is_material(&self, p: Point) -> bool {
        let inside = self.disks.iter().any(|(c, r)| (p - c).norm() < *r)
            || self.rects.iter().any(|b| p.x > b[0] && p.y > b[1] && p.x < b[2] && p.y < b[3]);
        self.background_material != inside
    }
}

/// Validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ProblemKind,
    /// `[x0, y0, x1, y1]`.
    pub bbox: [f64; 4],
    pub segments: Vec<Segment>,
    pub dirichlet: Vec<String>,
    /// Elastic surface loads by boundary name.
    pub loads: Vec<(String, Point)>,
    /// Scalar Neumann fluxes by boundary name.
    pub fluxes: Vec<(String, f64)>,
    pub n: usize,
    pub iters: usize,
    pub rng_seed: u64,
    pub vt: f64,
    pub n_arc: usize,
    /// Smoothing length of the gradient products in neighbour spacings.
    pub alpha: f64,
    pub seed_constraint: SeedConstraint,
    pub update_seeds: bool,
    pub update_measures: bool,
    pub max_halvings: usize,
    pub cadences: Cadences,
    /// Box in which initial seeds are sampled (defaults to `bbox`).
    pub sample_box: [f64; 4],
    pub materials: Materials,
    pub init: InitialPhase,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn area(&self) -> f64 {
        (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])
    }

    /// Boundary names with their integer labels: the four sides are 1 to 4
    /// and segments follow in order of appearance.
    pub fn labels(&self) -> Vec<(String, i32)> {
        let mut out: Vec<(String, i32)> = Side::ALL.iter().zip(1..).map(|(s, l)| (s.name().to_string(), l)).collect();
        out.extend(self.segments.iter().zip(5..).map(|(s, l)| (s.name.clone(), l)));
        out
    }

    pub fn label(&self, name: &str) -> Option<i32> {
        self.labels().into_iter().find(|(n, _)| n == name).map(|(_, l)| l)
    }

    /// The box as a polygon whose edges carry the side and segment labels.
    pub fn domain(&self) -> otto::Result<Domain> {
        let [x0, y0, x1, y1] = self.bbox;
        let mut verts = Vec::new();
        let mut labels = Vec::new();
        for (side, side_label) in Side::ALL.into_iter().zip(1..) {
            let (start, end) = match side {
                Side::Bottom => (x0, x1),
                Side::Right => (y0, y1),
                Side::Top => (x1, x0),
                Side::Left => (y1, y0),
            };
            let point = |t: f64| match side {
                Side::Bottom => Point::new(t, y0),
                Side::Right => Point::new(x1, t),
                Side::Top => Point::new(t, y1),
                Side::Left => Point::new(x0, t),
            };
            let segs: Vec<(f64, f64, i32)> = self
                .segments
                .iter()
                .zip(5..)
                .filter(|(s, _)| s.side == side)
                .map(|(s, l)| (s.from.min(s.to), s.from.max(s.to), l))
                .collect();
            let mut cuts = vec![start, end];
            for &(a, b, _) in &segs {
                cuts.extend([a, b].into_iter().filter(|t| (t - start).abs() > 0.0 && (t - end).abs() > 0.0));
            }
            let forward = end > start;
            cuts.sort_by(|a, b| if forward { a.total_cmp(b) } else { b.total_cmp(a) });
            cuts.dedup();
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let label = segs.iter().find(|(a, b, _)| *a < mid && mid < *b).map_or(side_label, |s| s.2);
                verts.push(point(w[0]));
                labels.push(label);
            }
        }
        Domain::new(verts, labels)
    }
}

/// A configuration problem at a given line (`None` for the whole file).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// All problems found in a configuration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "{}", lines.join("\n"))
    }
}

impl ConfigErrors {
    /// Whether some error message contains `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.0.iter().any(|e| e.message.contains(needle))
    }
}

const KEYS: &[(&str, &[&str], &[&str])] = &[
    ("problem", &["kind", "k"], &[]),
    ("domain", &["box", "dirichlet"], &["segment", "load", "flux"]),
    (
        "run",
        &[
            "n",
            "iters",
            "rng_seed",
            "vt",
            "n_arc",
            "alpha",
            "seed_constraint",
            "update_seeds",
            "update_measures",
            "max_halvings",
            "lloyd",
            "resample",
            "islands",
            "topo",
            "sample_box",
            "output",
        ],
        &[],
    ),
    ("materials", &["gamma0", "gamma1", "lambda", "mu", "ersatz", "source"], &[]),
    ("init", &["background"], &["disk", "rect"]),
];

type Entries = BTreeMap<(String, String), Vec<(usize, String)>>;

struct Reader {
    entries: Entries,
    sections: BTreeMap<String, usize>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn err(&mut self, line: Option<usize>, message: impl Into<String>) {
        self.errors.push(ConfigError { line, message: message.into() });
    }

    fn all(&self, section: &str, key: &str) -> Vec<(usize, String)> {
        self.entries.get(&(section.to_string(), key.to_string())).cloned().unwrap_or_default()
    }

    fn raw(&self, section: &str, key: &str) -> Option<(usize, String)> {
        self.all(section, key).into_iter().next()
    }

    fn required(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        let v = self.raw(section, key);
        if v.is_none() {
            let line = self.sections.get(section).copied();
            self.err(line, format!("missing required key `{key}` in [{section}]"));
        }
        v
    }

    fn parse<T: std::str::FromStr>(&mut self, (line, text): &(usize, String), what: &str) -> Option<T> {
        let v = text.parse().ok();
        if v.is_none() {
            self.err(Some(*line), format!("expected {what}, found `{text}`"));
        }
        v
    }

    fn numbers(&mut self, entry: &(usize, String), count: usize) -> Option<Vec<f64>> {
        let parts: Vec<&str> = entry.1.split_whitespace().collect();
        let vals: Option<Vec<f64>> = parts.iter().map(|p| p.parse().ok()).collect();
        match vals {
            Some(v) if v.len() == count && v.iter().all(|x: &f64| x.is_finite()) => Some(v),
            _ => {
                self.err(Some(entry.0), format!("expected {count} numbers, found `{}`", entry.1));
                None
            }
        }
    }

    fn get<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str, default: T) -> T {
        match self.raw(section, key) {
            Some(e) => self.parse(&e, what).unwrap_or(default),
            None => default,
        }
    }

    fn get_f64(&mut self, section: &str, key: &str, default: f64) -> f64 {
        self.get(section, key, "a number", default)
    }

    fn get_usize(&mut self, section: &str, key: &str, default: usize) -> usize {
        self.get(section, key, "a non-negative integer", default)
    }

    fn get_bool(&mut self, section: &str, key: &str, default: bool) -> bool {
        self.get(section, key, "true or false", default)
    }
}

fn tokenize(text: &str) -> Reader {
    let mut r = Reader { entries: Entries::new(), sections: BTreeMap::new(), errors: Vec::new() };
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|c| c.strip_suffix(']')) {
            let name = name.trim().to_string();
            if KEYS.iter().any(|(s, _, _)| *s == name) {
                r.sections.entry(name.clone()).or_insert(line);
                section = Some(name);
            } else {
                r.err(Some(line), format!("unknown section [{name}]"));
                section = None;
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            r.err(Some(line), format!("expected `key = value`, found `{content}`"));
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some(sec) = section.clone() else {
            r.err(Some(line), format!("key `{key}` outside of a known section"));
            continue;
        };
        let (_, single, multi) = KEYS.iter().find(|(s, _, _)| *s == sec).expect("known section");
        let repeatable = multi.contains(&key.as_str());
        if !repeatable && !single.contains(&key.as_str()) {
            r.err(Some(line), format!("unknown key `{key}` in [{sec}]"));
            continue;
        }
        let slot = r.entries.entry((sec.clone(), key.clone())).or_default();
        if !repeatable && !slot.is_empty() {
            let first = slot[0].0;
            r.err(Some(line), format!("duplicate key `{key}` in [{sec}] (first at line {first})"));
            continue;
        }
        slot.push((line, value));
    }
    r
}

fn parse_kind(r: &mut Reader) -> Option<ProblemKind> {
    let entry = r.required("problem", "kind")?;
    let text = entry.1.as_str();
    let k_key = r.raw("problem", "k");
    let kind = match text {
        "perimeter" => ProblemKind::Perimeter,
        "two_phase_conduction" => ProblemKind::TwoPhaseConduction,
        "cantilever_compliance" => ProblemKind::CantileverCompliance,
        "bridge_compliance_topo" => ProblemKind::BridgeComplianceTopo,
        "stress_bridge" => ProblemKind::StressBridge,
        "eigenvalue" => {
            let k = match &k_key {
                Some(e) => r.parse(e, "a positive integer")?,
                None => 1,
            };
            ProblemKind::Eigenvalue(k)
        }
        t if t.starts_with("eigenvalue(") && t.ends_with(')') => {
            let inner = (entry.0, t["eigenvalue(".len()..t.len() - 1].trim().to_string());
            ProblemKind::Eigenvalue(r.parse(&inner, "a positive integer")?)
        }
        _ => {
            r.err(Some(entry.0), format!("unknown problem kind `{text}`"));
            return None;
        }
    };
    if kind == ProblemKind::Eigenvalue(0) {
        r.err(Some(entry.0), "eigenvalue index starts at 1");
    }
    if k_key.is_some() && !matches!(kind, ProblemKind::Eigenvalue(_)) {
        r.err(k_key.map(|e| e.0), "`k` only applies to eigenvalue problems");
    }
    Some(kind)
}

fn parse_box(r: &mut Reader, entry: &(usize, String)) -> Option<[f64; 4]> {
    let v = r.numbers(entry, 4)?;
    if v[2] <= v[0] || v[3] <= v[1] {
        r.err(Some(entry.0), "box corners must satisfy x0 < x1 and y0 < y1");
        return None;
    }
    Some([v[0], v[1], v[2], v[3]])
}

/// Parses and validates a configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let mut r = tokenize(text);
    let kind = parse_kind(&mut r);
    let bbox = r.required("domain", "box").and_then(|e| parse_box(&mut r, &e));

    let mut segments = Vec::new();
    for e in r.all("domain", "segment") {
        let parts: Vec<&str> = e.1.split_whitespace().collect();
        let parsed = match parts.as_slice() {
            [name, side, a, b] => Side::parse(side)
                .zip(a.parse().ok())
                .zip(b.parse().ok())
                .map(|((side, from), to)| Segment { name: name.to_string(), side, from, to }),
            _ => None,
        };
        match parsed {
            Some(s) => segments.push((e.0, s)),
            None => r.err(Some(e.0), format!("expected `name side from to`, found `{}`", e.1)),
        }
    }
    let dirichlet_entry = r.raw("domain", "dirichlet");
    let dirichlet: Vec<String> =
        dirichlet_entry.as_ref().map_or(Vec::new(), |e| e.1.split_whitespace().map(str::to_string).collect());
    let mut loads = Vec::new();
    for e in r.all("domain", "load") {
        let parts: Vec<&str> = e.1.split_whitespace().collect();
        match parts.as_slice() {
            [name, gx, gy] => match (gx.parse::<f64>(), gy.parse::<f64>()) {
                (Ok(x), Ok(y)) => loads.push((e.0, name.to_string(), Point::new(x, y))),
                _ => r.err(Some(e.0), format!("expected `name gx gy`, found `{}`", e.1)),
            },
            _ => r.err(Some(e.0), format!("expected `name gx gy`, found `{}`", e.1)),
        }
    }
    let mut fluxes = Vec::new();
    for e in r.all("domain", "flux") {
        let parts: Vec<&str> = e.1.split_whitespace().collect();
        match parts.as_slice() {
            [name, g] => match g.parse::<f64>() {
                Ok(g) => fluxes.push((e.0, name.to_string(), g)),
                Err(_) => r.err(Some(e.0), format!("expected `name g`, found `{}`", e.1)),
            },
            _ => r.err(Some(e.0), format!("expected `name g`, found `{}`", e.1)),
        }
    }

    let n = r.required("run", "n").and_then(|e| r.parse::<usize>(&e, "a positive integer"));
    let iters = r.required("run", "iters").and_then(|e| r.parse::<usize>(&e, "a non-negative integer"));
    let rng_seed = r.get("run", "rng_seed", "a non-negative integer", 0u64);
    let vt_entry = r.raw("run", "vt");
    let vt = vt_entry.as_ref().and_then(|e| r.parse::<f64>(e, "a number"));
    let n_arc = r.get_usize("run", "n_arc", 2);
    let alpha = r.get_f64("run", "alpha", 2.0);
    let seed_constraint = match r.raw("run", "seed_constraint") {
        None => SeedConstraint::Kkt,
        Some((line, text)) => match text.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["kkt"] => SeedConstraint::Kkt,
            ["free"] => SeedConstraint::Free,
            ["penalty"] => SeedConstraint::Penalty(otto::optimize::DEFAULT_PENALTY),
            ["penalty", eps] => match eps.parse() {
                Ok(eps) => SeedConstraint::Penalty(eps),
                Err(_) => {
                    r.err(Some(line), format!("expected a penalty parameter, found `{eps}`"));
                    SeedConstraint::Kkt
                }
            },
            _ => {
                r.err(Some(line), format!("expected kkt, free or penalty [eps], found `{text}`"));
                SeedConstraint::Kkt
            }
        },
    };
    let two_phase = kind.is_some_and(ProblemKind::is_two_phase);
    let update_seeds = r.get_bool("run", "update_seeds", true);
    let update_measures = r.get_bool("run", "update_measures", two_phase);
    let max_halvings = r.get_usize("run", "max_halvings", otto::optimize::MAX_HALVINGS);
    let cadences = Cadences {
        lloyd: r.get_usize("run", "lloyd", if two_phase { 3 } else { 0 }),
        resample: r.get_usize("run", "resample", 0),
        islands: r.get_usize("run", "islands", if kind == Some(ProblemKind::TwoPhaseConduction) { 0 } else { 10 }),
        topo: r.get_usize("run", "topo", if kind == Some(ProblemKind::BridgeComplianceTopo) { 10 } else { 0 }),
    };
    let sample_box = r.raw("run", "sample_box").and_then(|e| parse_box(&mut r, &e));
    let output = r.raw("run", "output").map(|e| PathBuf::from(e.1));

    let defaults = Materials::default();
    let materials = Materials {
        gamma0: r.get_f64("materials", "gamma0", defaults.gamma0),
        gamma1: r.get_f64("materials", "gamma1", defaults.gamma1),
        lambda: r.get_f64("materials", "lambda", defaults.lambda),
        mu: r.get_f64("materials", "mu", defaults.mu),
        ersatz: r.get_f64("materials", "ersatz", defaults.ersatz),
        source: r.get_f64("materials", "source", defaults.source),
    };

    let background_material = match r.raw("init", "background") {
        None => true,
        Some((_, t)) if t == "material" => true,
        Some((_, t)) if t == "void" => false,
        Some((line, t)) => {
            r.err(Some(line), format!("expected material or void, found `{t}`"));
            true
        }
    };
    let mut init = InitialPhase { background_material, disks: Vec::new(), rects: Vec::new() };
    for e in r.all("init", "disk") {
        if let Some(v) = r.numbers(&e, 3) {
            init.disks.push((Point::new(v[0], v[1]), v[2]));
        }
    }
    for e in r.all("init", "rect") {
        if let Some(b) = parse_box(&mut r, &e) {
            init.rects.push(b);
        }
    }

    // Semantic checks.
    if let Some(b) = bbox {
        for (line, s) in &segments {
            let (lo, hi) = match s.side {
                Side::Bottom | Side::Top => (b[0], b[2]),
                Side::Left | Side::Right => (b[1], b[3]),
            };
            let (a, c) = (s.from.min(s.to), s.from.max(s.to));
            if a < lo || c > hi || a >= c {
                r.err(Some(*line), format!("segment `{}` must be a non-empty part of side {}", s.name, s.side.name()));
            }
        }
        for (i, (li, si)) in segments.iter().enumerate() {
            for (_, sj) in &segments[..i] {
                let overlap = si.side == sj.side
                    && si.from.min(si.to) < sj.from.max(sj.to)
                    && sj.from.min(sj.to) < si.from.max(si.to);
                if overlap {
                    r.err(Some(*li), format!("segments `{}` and `{}` overlap", sj.name, si.name));
                }
                if si.name == sj.name {
                    r.err(Some(*li), format!("segment name `{}` is used twice", si.name));
                }
            }
            if Side::parse(&si.name).is_some() {
                r.err(Some(*li), format!("segment name `{}` is reserved for a side", si.name));
            }
        }
    }
    let known = |name: &str| Side::parse(name).is_some() || segments.iter().any(|(_, s)| s.name == name);
    for name in &dirichlet {
        if !known(name) {
            r.err(dirichlet_entry.as_ref().map(|e| e.0), format!("unknown boundary label `{name}`"));
        }
    }
    for (line, name, _) in &loads {
        if !known(name) {
            r.err(Some(*line), format!("unknown boundary label `{name}`"));
        }
    }
    for (line, name, _) in &fluxes {
        if !known(name) {
            r.err(Some(*line), format!("unknown boundary label `{name}`"));
        }
    }
    if let Some(kind) = kind {
        let loc = r.sections.get("domain").copied();
        if kind.is_two_phase() && dirichlet.is_empty() {
            r.err(loc, "this problem needs a `dirichlet` boundary");
        }
        if kind.is_elastic() && loads.is_empty() {
            r.err(loc, "this problem needs at least one `load`");
        }
        if !kind.is_elastic() && !loads.is_empty() {
            r.err(Some(loads[0].0), "`load` only applies to elastic problems");
        }
        if kind != ProblemKind::TwoPhaseConduction && !fluxes.is_empty() {
            r.err(Some(fluxes[0].0), "`flux` only applies to conduction problems");
        }
    }
    if n == Some(0) {
        r.err(r.raw("run", "n").map(|e| e.0), "n must be positive");
    }
    if n_arc < 2 {
        r.err(r.raw("run", "n_arc").map(|e| e.0), "n_arc must be at least 2");
    }
    let area = bbox.map(|b| (b[2] - b[0]) * (b[3] - b[1]));
    let vt = match (vt, area) {
        (Some(v), Some(a)) => {
            let line = vt_entry.as_ref().map(|e| e.0);
            if v >= a {
                r.err(line, format!("V_T exceeds |D| ({v} >= {a})"));
            } else if v <= 0.0 {
                r.err(line, "V_T must be positive");
            }
            v
        }
        (None, Some(a)) => 0.3 * a,
        _ => 0.0,
    };

    if !r.errors.is_empty() {
        r.errors.sort_by_key(|e| e.line.unwrap_or(0));
        return Err(ConfigErrors(r.errors));
    }
    let bbox = bbox.expect("validated");
    Ok(RunConfig {
        kind: kind.expect("validated"),
        bbox,
        segments: segments.into_iter().map(|(_, s)| s).collect(),
        dirichlet,
        loads: loads.into_iter().map(|(_, n, g)| (n, g)).collect(),
        fluxes: fluxes.into_iter().map(|(_, n, g)| (n, g)).collect(),
        n: n.expect("validated"),
        iters: iters.expect("validated"),
        rng_seed,
        vt,
        n_arc,
        alpha,
        seed_constraint,
        update_seeds,
        update_measures,
        max_halvings,
        cadences,
        sample_box: sample_box.unwrap_or(bbox),
        materials,
        init,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\nkind = perimeter\n[domain]\nbox = 0 0 1 1\n[run]\nn = 100\niters = 300\n";

    #[test]
    fn minimal_perimeter_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.kind, ProblemKind::Perimeter);
        assert_eq!((c.n, c.iters, c.rng_seed, c.n_arc), (100, 300, 0, 2));
        assert_eq!(c.vt, 0.3);
        assert_eq!(c.sample_box, [0.0, 0.0, 1.0, 1.0]);
        assert!(!c.update_measures && c.update_seeds);
        assert_eq!(c.cadences, Cadences { lloyd: 0, resample: 0, islands: 10, topo: 0 });
        assert_eq!(c.materials, Materials::default());
    }

    #[test]
    fn volume_target_above_the_box_area_is_rejected() {
        let err = parse_config(&format!("{MINIMAL}vt = 1.5\n")).unwrap_err();
        assert!(err.mentions("V_T exceeds |D|"));
        assert_eq!(err.0[0].line, Some(8));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "[problem]\nkind = perimeter\ncolour = red\n[domain]\nbox = 0 0 1\n[run]\nn = many\n";
        let err = parse_config(text).unwrap_err();
        let find = |s: &str| err.0.iter().find(|e| e.message.contains(s)).cloned().unwrap();
        assert_eq!(find("unknown key `colour`").line, Some(3));
        assert_eq!(find("expected 4 numbers").line, Some(5));
        assert_eq!(find("expected a positive integer").line, Some(7));
        assert_eq!(find("missing required key `iters`").line, Some(6));
        let err = parse_config("[problem]\nkind = perimeter\n").unwrap_err();
        assert!(err.0.iter().any(|e| e.message.contains("`box` in [domain]") && e.line.is_none()));
    }

    #[test]
    fn duplicates_and_unknown_labels_are_reported() {
        let text =
            "[problem]\nkind = cantilever_compliance\n[domain]\nbox = 0 0 2 1\ndirichlet = west\nload = right 0 -1\n\
                    [run]\nn = 10\nn = 20\niters = 1\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.0.iter().any(|e| e.line == Some(5) && e.message.contains("`west`")));
        assert!(err.0.iter().any(|e| e.line == Some(9) && e.message.contains("duplicate")));
    }

    #[test]
    fn eigenvalue_index_forms() {
        let base = "[domain]\nbox = 0 0 1 1\n[run]\nn = 10\niters = 1\n";
        let k = |head: &str| parse_config(&format!("[problem]\n{head}\n{base}")).map(|c| c.kind);
        assert_eq!(k("kind = eigenvalue"), Ok(ProblemKind::Eigenvalue(1)));
        assert_eq!(k("kind = eigenvalue\nk = 3"), Ok(ProblemKind::Eigenvalue(3)));
        assert_eq!(k("kind = eigenvalue(2)"), Ok(ProblemKind::Eigenvalue(2)));
        assert!(k("kind = eigenvalue(0)").is_err());
        assert!(k("kind = perimeter\nk = 2").is_err());
    }

    #[test]
    fn segments_split_the_sides() {
        let text = "[problem]\nkind = cantilever_compliance\n[domain]\nbox = 0 0 2 1\nsegment = tip right 0.45 0.55\n\
                    dirichlet = left\nload = tip 0 -1\n[run]\nn = 10\niters = 1\nvt = 0.7\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.label("tip"), Some(5));
        assert_eq!(c.label("left"), Some(4));
        let d = c.domain().unwrap();
        assert_eq!(d.labels(), &[1, 2, 5, 2, 3, 4]);
        assert_eq!(d.vertices()[2], Point::new(2.0, 0.45));
        assert!((d.area() - 2.0).abs() < 1e-15);
        let bad = text.replace("0.45 0.55", "0.45 1.5");
        assert!(parse_config(&bad).unwrap_err().mentions("non-empty part of side right"));
    }

    #[test]
    fn initial_phase_indicator() {
        let init = InitialPhase { background_material: true, disks: vec![(Point::new(0.5, 0.5), 0.2)], rects: vec![] };
        assert!(!init.is_material(Point::new(0.5, 0.6)));
        assert!(init.is_material(Point::new(0.9, 0.9)));
    }
}
