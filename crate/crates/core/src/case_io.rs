//! MATPOWER case ingestion.
//!
//! Reads the `mpc.bus`, `mpc.gen`, `mpc.branch` and `mpc.gencost` matrices of a
//! version-2 MATPOWER file and converts everything to per-unit on `baseMVA`.
//! Unknown columns and unknown `mpc.*` fields are ignored. Out-of-service
//! branches and generators are dropped.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angle-difference bound substituted when a case leaves the angle
/// difference unconstrained (MATPOWER writes ±360°).
pub const DEFAULT_ANGLE_BOUND: f64 = std::f64::consts::PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusType {
    Pq,
    Pv,
    Ref,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusType,
    pub pd: f64,
    pub qd: f64,
    /// Shunt conductance `g_ii`.
    pub gs: f64,
    /// Shunt susceptance `b_ii`.
    pub bs: f64,
    pub vmin: f64,
    pub vmax: f64,
}

/// Real and imaginary parts of the four entries of a branch admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Admittance {
    pub gff: f64,
    pub bff: f64,
    pub gft: f64,
    pub bft: f64,
    pub gtf: f64,
    pub btf: f64,
    pub gtt: f64,
    pub btt: f64,
}

impl Admittance {
    /// The 2x2 complex matrix `[[Yff, Yft], [Ytf, Ytt]]`.
    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        [
            [
                Complex64::new(self.gff, self.bff),
                Complex64::new(self.gft, self.bft),
            ],
            [
                Complex64::new(self.gtf, self.btf),
                Complex64::new(self.gtt, self.btt),
            ],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Position of the from-bus in [`Network::buses`].
    pub from: usize,
    /// Position of the to-bus in [`Network::buses`].
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_charge: f64,
    pub tap: f64,
    pub shift: f64,
    /// Apparent-power limit; `f64::INFINITY` when the case gives no rating.
    #[serde(with = "finite_or_null")]
    pub s_max: f64,
    /// Lower bound on `theta_from - theta_to`, radians.
    pub angle_min: f64,
    /// Upper bound on `theta_from - theta_to`, radians.
    pub angle_max: f64,
    pub y: Admittance,
}

impl Branch {
    pub fn has_limit(&self) -> bool {
        self.s_max.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Position of the host bus in [`Network::buses`].
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Cost coefficients of `C(p) = c2 p^2 + c1 p + c0`, with `p` in per-unit.
    pub cost_quadratic: f64,
    pub cost_linear: f64,
    pub cost_constant: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_quadratic * p * p + self.cost_linear * p + self.cost_constant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    #[serde(skip)]
    adjacency: Vec<Vec<(usize, usize)>>,
    #[serde(skip)]
    ref_bus: usize,
}

#[derive(Deserialize)]
struct RawNetwork {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawNetwork::deserialize(d)?;
        Network::new(raw.name, raw.base_mva, raw.buses, raw.branches, raw.generators)
            .map_err(serde::de::Error::custom)
    }
}

impl Network {
    /// Builds and validates a network. Branch admittance blocks are taken as
    /// given but must agree with the branch's electrical parameters.
    pub fn new(
        name: String,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if buses.is_empty() {
            return Err(Error::invalid("network has no buses"));
        }
        let mut seen = HashMap::new();
        for (k, b) in buses.iter().enumerate() {
            if seen.insert(b.id, k).is_some() {
                return Err(Error::invalid(format!("duplicate bus id {}", b.id)));
            }
            if !(b.vmin > 0.0 && b.vmin <= b.vmax) {
                return Err(Error::invalid(format!(
                    "bus {}: voltage bounds [{}, {}] invalid",
                    b.id, b.vmin, b.vmax
                )));
            }
        }
        for (l, br) in branches.iter().enumerate() {
            if br.from >= buses.len() || br.to >= buses.len() || br.from == br.to {
                return Err(Error::invalid(format!("branch {l}: bad endpoints")));
            }
            if br.x == 0.0 {
                return Err(Error::invalid(format!("branch {l}: zero reactance")));
            }
            if !(br.s_max > 0.0) {
                return Err(Error::invalid(format!("branch {l}: non-positive rating")));
            }
            if !(br.angle_min < 0.0 && br.angle_max > 0.0) {
                return Err(Error::invalid(format!(
                    "branch {l}: angle bounds [{}, {}] must straddle zero",
                    br.angle_min, br.angle_max
                )));
            }
            let expect = branch_admittance(br.r, br.x, br.b_charge, br.tap, br.shift)?;
            let got = [br.y.gff, br.y.bff, br.y.gft, br.y.bft, br.y.gtf, br.y.btf, br.y.gtt, br.y.btt];
            let want = [
                expect.gff, expect.bff, expect.gft, expect.bft, expect.gtf, expect.btf, expect.gtt,
                expect.btt,
            ];
            for (a, b) in got.iter().zip(want) {
                if (a - b).abs() > 1e-9 * (1.0 + b.abs()) {
                    return Err(Error::invalid(format!(
                        "branch {l}: admittance blocks inconsistent with impedance"
                    )));
                }
            }
        }
        for (g, gen) in generators.iter().enumerate() {
            if gen.bus >= buses.len() {
                return Err(Error::invalid(format!("generator {g}: unknown bus")));
            }
            if gen.pmin > gen.pmax || gen.qmin > gen.qmax {
                return Err(Error::invalid(format!("generator {g}: inverted limits")));
            }
            if gen.cost_quadratic < 0.0 {
                return Err(Error::invalid(format!("generator {g}: concave cost")));
            }
        }

        let mut adjacency = vec![Vec::new(); buses.len()];
        for (l, br) in branches.iter().enumerate() {
            adjacency[br.from].push((br.to, l));
            adjacency[br.to].push((br.from, l));
        }
        let ref_bus = buses
            .iter()
            .position(|b| b.kind == BusType::Ref)
            .unwrap_or(0);

        let net = Network {
            name,
            base_mva,
            buses,
            branches,
            generators,
            adjacency,
            ref_bus,
        };
        if net.component_count() != 1 {
            return Err(Error::invalid("network graph is disconnected"));
        }
        Ok(net)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn ref_bus(&self) -> usize {
        self.ref_bus
    }

    /// `δ(i)`: `(neighbor, branch)` pairs incident to bus `i`. Parallel
    /// branches appear once each.
    pub fn neighbors(&self, bus: usize) -> &[(usize, usize)] {
        &self.adjacency[bus]
    }

    /// Generators hosted at each bus.
    pub fn generators_at(&self) -> Vec<Vec<usize>> {
        let mut at = vec![Vec::new(); self.buses.len()];
        for (g, gen) in self.generators.iter().enumerate() {
            at[gen.bus].push(g);
        }
        at
    }

    pub fn component_count(&self) -> usize {
        let n = self.buses.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(i) = queue.pop_front() {
                for &(j, _) in &self.adjacency[i] {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        count
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Two-port Π-model admittance with off-nominal tap ratio and phase shift.
pub fn branch_admittance(r: f64, x: f64, b_charge: f64, tap: f64, shift: f64) -> Result<Admittance> {
    if r == 0.0 && x == 0.0 {
        return Err(Error::invalid("zero series impedance"));
    }
    if !(tap > 0.0) {
        return Err(Error::invalid("tap ratio must be positive"));
    }
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    let t = Complex64::from_polar(tap, shift);
    let ytt = ys + Complex64::new(0.0, b_charge / 2.0);
    let yff = ytt / (tap * tap);
    let yft = -ys / t.conj();
    let ytf = -ys / t;
    Ok(Admittance {
        gff: yff.re,
        bff: yff.im,
        gft: yft.re,
        bft: yft.im,
        gtf: ytf.re,
        btf: ytf.im,
        gtt: ytt.re,
        btt: ytt.im,
    })
}

struct Matrix {
    /// (source line, values)
    rows: Vec<(usize, Vec<f64>)>,
}

/// Parses MATPOWER case text.
pub fn parse_case(text: &str) -> Result<Network> {
    let mut base_mva = None;
    let mut name = String::from("case");
    let mut tables: HashMap<String, Matrix> = HashMap::new();

    let lines: Vec<&str> = text.lines().collect();
    let mut k = 0;
    while k < lines.len() {
        let line_no = k + 1;
        let line = strip_comment(lines[k]).trim();
        k += 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, fname)) = rest.split_once('=') {
                name = fname.trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = line.strip_prefix("mpc.") else {
            continue;
        };
        let Some((field, value)) = rest.split_once('=') else {
            continue;
        };
        let field = field.trim();
        let value = value.trim();
        if field == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            base_mva = Some(
                v.parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("bad baseMVA '{v}'")))?,
            );
            continue;
        }
        if !matches!(field, "bus" | "gen" | "branch" | "gencost") {
            continue;
        }
        let Some(body) = value.strip_prefix('[') else {
            return Err(Error::parse(line_no, format!("expected '[' after mpc.{field}")));
        };
        let mut rows = Vec::new();
        let mut pending: Vec<f64> = Vec::new();
        let mut pending_line = line_no;
        let mut chunk = body.to_string();
        let mut chunk_line = line_no;
        let mut closed = false;
        loop {
            let (content, done) = match chunk.find(']') {
                Some(p) => (chunk[..p].to_string(), true),
                None => (chunk.clone(), false),
            };
            for piece in content.split_inclusive(';') {
                let ends_row = piece.ends_with(';');
                for tok in piece.trim_end_matches(';').split(|c: char| c.is_whitespace() || c == ',') {
                    if tok.is_empty() {
                        continue;
                    }
                    if pending.is_empty() {
                        pending_line = chunk_line;
                    }
                    let v = parse_number(tok).ok_or_else(|| {
                        Error::parse(chunk_line, format!("malformed number '{tok}' in mpc.{field}"))
                    })?;
                    pending.push(v);
                }
                if ends_row && !pending.is_empty() {
                    rows.push((pending_line, std::mem::take(&mut pending)));
                }
            }
            // A newline also ends a row in MATLAB matrix syntax.
            if !pending.is_empty() {
                rows.push((pending_line, std::mem::take(&mut pending)));
            }
            if done {
                closed = true;
                break;
            }
            if k >= lines.len() {
                break;
            }
            chunk = strip_comment(lines[k]).to_string();
            chunk_line = k + 1;
            k += 1;
        }
        if !closed {
            return Err(Error::parse(line_no, format!("unterminated matrix mpc.{field}")));
        }
        tables.insert(field.to_string(), Matrix { rows });
    }

    let base_mva = base_mva.ok_or_else(|| Error::parse(lines.len(), "missing mpc.baseMVA"))?;
    let mut take = |key: &str| {
        tables
            .remove(key)
            .ok_or_else(|| Error::parse(lines.len(), format!("missing mpc.{key} table")))
    };
    let bus_t = take("bus")?;
    let gen_t = take("gen")?;
    let branch_t = take("branch")?;
    let cost_t = take("gencost")?;

    let need = |row: &(usize, Vec<f64>), n: usize, what: &str| -> Result<()> {
        if row.1.len() < n {
            Err(Error::parse(row.0, format!("{what} row has {} columns, need {n}", row.1.len())))
        } else {
            Ok(())
        }
    };

    let mut buses = Vec::new();
    let mut index_of = HashMap::new();
    let mut isolated = HashSet::new();
    for row in &bus_t.rows {
        need(row, 13, "bus")?;
        let v = &row.1;
        let kind = match v[1] as i64 {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Ref,
            4 => {
                isolated.insert(v[0] as usize);
                continue;
            }
            other => return Err(Error::parse(row.0, format!("unknown bus type {other}"))),
        };
        let id = v[0] as usize;
        if index_of.insert(id, buses.len()).is_some() {
            return Err(Error::parse(row.0, format!("duplicate bus id {id}")));
        }
        buses.push(Bus {
            id,
            kind,
            pd: v[2] / base_mva,
            qd: v[3] / base_mva,
            gs: v[4] / base_mva,
            bs: v[5] / base_mva,
            vmax: v[11],
            vmin: v[12],
        });
    }

    if cost_t.rows.len() < gen_t.rows.len() {
        return Err(Error::parse(
            cost_t.rows.last().map(|r| r.0).unwrap_or(lines.len()),
            "gencost has fewer rows than gen",
        ));
    }
    let mut generators = Vec::new();
    for (row, cost) in gen_t.rows.iter().zip(&cost_t.rows) {
        need(row, 10, "gen")?;
        need(cost, 4, "gencost")?;
        let v = &row.1;
        if v[7] <= 0.0 {
            continue;
        }
        let bus = *index_of
            .get(&(v[0] as usize))
            .ok_or_else(|| Error::parse(row.0, format!("generator at unknown bus {}", v[0])))?;
        let c = &cost.1;
        if c[0] as i64 != 2 {
            return Err(Error::parse(cost.0, "only polynomial (model 2) costs are supported"));
        }
        let n = c[3] as usize;
        if n > 3 || c.len() < 4 + n {
            return Err(Error::parse(cost.0, "polynomial cost must have at most 3 terms"));
        }
        let coeffs = &c[4..4 + n];
        let mut c2 = 0.0;
        let mut c1 = 0.0;
        let mut c0 = 0.0;
        for (k, &val) in coeffs.iter().enumerate() {
            match n - 1 - k {
                2 => c2 = val,
                1 => c1 = val,
                _ => c0 = val,
            }
        }
        generators.push(Generator {
            bus,
            pmax: v[8] / base_mva,
            pmin: v[9] / base_mva,
            qmax: v[3] / base_mva,
            qmin: v[4] / base_mva,
            cost_quadratic: c2 * base_mva * base_mva,
            cost_linear: c1 * base_mva,
            cost_constant: c0,
        });
    }

    let mut branches = Vec::new();
    for row in &branch_t.rows {
        need(row, 11, "branch")?;
        let v = &row.1;
        if v[10] <= 0.0 {
            continue;
        }
        let lookup = |id: f64| {
            index_of
                .get(&(id as usize))
                .copied()
                .ok_or_else(|| Error::parse(row.0, format!("branch references unknown bus {id}")))
        };
        // Branches into dropped isolated buses disappear with them.
        if isolated.contains(&(v[0] as usize)) || isolated.contains(&(v[1] as usize)) {
            continue;
        }
        let (from, to) = (lookup(v[0])?, lookup(v[1])?);
        let (r, x, b) = (v[2], v[3], v[4]);
        if x == 0.0 {
            return Err(Error::invalid(format!(
                "branch {}-{} (line {}) has zero reactance",
                v[0], v[1], row.0
            )));
        }
        let tap = if v[8] == 0.0 { 1.0 } else { v[8] };
        let shift = v[9].to_radians();
        let s_max = if v[5] > 0.0 { v[5] / base_mva } else { f64::INFINITY };
        let (mut amin, mut amax) = if v.len() >= 13 {
            (v[11].to_radians(), v[12].to_radians())
        } else {
            (-DEFAULT_ANGLE_BOUND, DEFAULT_ANGLE_BOUND)
        };
        if amin <= -FRAC_PI_2 {
            amin = -DEFAULT_ANGLE_BOUND;
        }
        if amax >= FRAC_PI_2 {
            amax = DEFAULT_ANGLE_BOUND;
        }
        let y = branch_admittance(r, x, b, tap, shift)?;
        branches.push(Branch {
            from,
            to,
            r,
            x,
            b_charge: b,
            tap,
            shift,
            s_max,
            angle_min: amin,
            angle_max: amax,
            y,
        });
    }

    Network::new(name, base_mva, buses, branches, generators)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
