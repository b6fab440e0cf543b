#![allow(dead_code)]

use acuc_core::case_io::{branch_admittance, parse_case, Branch, Bus, BusType, Generator, Network};
use acuc_core::conic::{solve_conic, ConicOptions};
use acuc_core::formulation::build_socp;
use acuc_core::instance::{generate_instance, GeneratorType, UcGeneratorParams, UcInstance};
use acuc_core::schedule::{feasible_patterns, CommitmentSchedule};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn load_case(name: &str, seed: u64) -> UcInstance {
    let path = format!("{}/../../cases/{name}.m", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    generate_instance(&parse_case(&text).expect("case parses"), seed)
}

pub fn case_network(name: &str) -> Network {
    let path = format!("{}/../../cases/{name}.m", env!("CARGO_MANIFEST_DIR"));
    parse_case(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Uniform(ChaCha8Rng);

impl Uniform {
    fn next(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    fn pick(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
}

pub fn bus(id: usize, kind: BusType) -> Bus {
    Bus { id, kind, pd: 0.0, qd: 0.0, gs: 0.0, bs: 0.0, vmin: 0.9, vmax: 1.1 }
}

pub fn line(from: usize, to: usize, r: f64, x: f64, b: f64, s_max: f64, angle: f64) -> Branch {
    Branch {
        from,
        to,
        r,
        x,
        b_charge: b,
        tap: 1.0,
        shift: 0.0,
        s_max,
        angle_min: -angle,
        angle_max: angle,
        y: branch_admittance(r, x, b, 1.0, 0.0).unwrap(),
    }
}

pub fn unit(bus: usize, pmin: f64, pmax: f64, qmin: f64, qmax: f64, c2: f64, c1: f64, c0: f64) -> Generator {
    Generator { bus, pmin, pmax, qmin, qmax, cost_quadratic: c2, cost_linear: c1, cost_constant: c0 }
}

/// Random 2- or 3-bus network with one or two generators and four periods.
/// Three-bus networks are triangles half the time.
pub fn desk_instance(seed: u64) -> UcInstance {
    let mut rng = Uniform(ChaCha8Rng::seed_from_u64(seed));
    let nb = 2 + rng.pick(2);
    let ng = 1 + rng.pick(2);
    let mut buses: Vec<Bus> = (0..nb).map(|i| bus(i + 1, if i == 0 { BusType::Ref } else { BusType::Pq })).collect();
    if ng == 2 {
        buses[nb - 1].kind = BusType::Pv;
    }
    let mut pairs = vec![(0, 1)];
    if nb == 3 {
        pairs.push((1, 2));
        if rng.pick(2) == 0 {
            pairs.push((0, 2));
        }
    }
    let branches = pairs
        .into_iter()
        .map(|(f, t)| {
            let r = rng.next(0.005, 0.04);
            let x = rng.next(0.05, 0.2);
            let b = rng.next(0.0, 0.04);
            let s_max = if rng.pick(2) == 0 { f64::INFINITY } else { rng.next(1.2, 2.5) };
            line(f, t, r, x, b, s_max, 0.5)
        })
        .collect();
    let gen_buses = [0, nb - 1];
    let mut gens = Vec::new();
    let mut params = Vec::new();
    for (k, &gb) in gen_buses.iter().take(ng).enumerate() {
        let pmax = rng.next(1.5, 2.5);
        // The first unit can always follow the lowest demand.
        let pmin = pmax * if k == 0 { rng.next(0.0, 0.04) } else { rng.next(0.05, 0.4) };
        let c1 = rng.next(1000.0, 4000.0);
        let c2 = if rng.pick(2) == 0 { 0.0 } else { rng.next(50.0, 400.0) };
        let c0 = rng.next(0.0, 50.0);
        gens.push(unit(gb, pmin, pmax, -1.5, 1.5, c2, c1, c0));
        let kind = [GeneratorType::Type1, GeneratorType::Type2, GeneratorType::Type3][rng.pick(3)];
        let mut p = UcGeneratorParams::from_type(kind, pmin, pmax, c1 / 100.0);
        p.min_up = p.min_up.min(4);
        p.min_down = p.min_down.min(4);
        params.push(p);
    }
    let net = Network::new(format!("desk{seed}"), 100.0, buses, branches, gens).unwrap();
    let base: Vec<f64> = (1..nb).map(|_| rng.next(0.2, 0.6)).collect();
    let shape = [0.7, 1.0, 0.85, 0.5];
    let mut pd = vec![vec![0.0; 4]; nb];
    let mut qd = vec![vec![0.0; 4]; nb];
    for i in 1..nb {
        for t in 0..4 {
            pd[i][t] = base[i - 1] * shape[t];
            qd[i][t] = 0.3 * pd[i][t];
        }
    }
    UcInstance::new(format!("desk{seed}"), net, pd, qd, params).unwrap()
}

/// Every logically feasible schedule of a short-horizon instance.
pub fn all_schedules(inst: &UcInstance) -> Vec<CommitmentSchedule> {
    let per_gen: Vec<Vec<Vec<bool>>> = (0..inst.network.n_generators()).map(|g| feasible_patterns(inst, g)).collect();
    let mut out = vec![Vec::<Vec<bool>>::new()];
    for pats in &per_gen {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                pats.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.push(p.clone());
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(CommitmentSchedule::from_u).filter(|s| s.is_valid(inst)).collect()
}

/// Brute-force optimum of the MISOCP: every feasible pattern, each with its
/// continuous SOCP dispatch plus the fixed costs.
pub fn enumeration_optimum(inst: &UcInstance) -> Option<(f64, CommitmentSchedule)> {
    let opts = ConicOptions::default();
    let mut best: Option<(f64, CommitmentSchedule)> = None;
    for s in all_schedules(inst) {
        let sol = solve_conic(&build_socp(inst, Some(&s)), &opts).unwrap();
        if !sol.is_optimal() {
            continue;
        }
        let total = sol.objective + s.fixed_cost(inst);
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, s));
        }
    }
    best
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Cheapest recovered AC dispatch over every feasible pattern: an upper
/// estimate of the AC unit commitment optimum (each dispatch is a local
/// optimum).
pub fn ac_enumeration(inst: &UcInstance) -> Option<f64> {
    all_schedules(inst)
        .iter()
        .filter_map(|s| {
            let out = acuc_core::feasibility::recover_dispatch(inst, s, None).unwrap();
            let ok = out.is_feasible();
            out.dispatch.filter(|_| ok).map(|d| d.cost)
        })
        .min_by(f64::total_cmp)
}

fn two_bus(name: &str, r: f64, x: f64, gs: f64, gens: Vec<Generator>, p: f64, q: f64, costs: &[f64]) -> UcInstance {
    let mut b2 = bus(2, if gens.len() > 1 { BusType::Pv } else { BusType::Pq });
    b2.gs = gs;
    let net = Network::new(name.into(), 100.0, vec![bus(1, BusType::Ref), b2], vec![line(0, 1, r, x, 0.0, f64::INFINITY, 0.6)], gens).unwrap();
    let params = costs
        .iter()
        .zip(&net.generators)
        .map(|(&c1, g)| UcGeneratorParams::from_type(GeneratorType::Type1, g.pmin, g.pmax, c1 / 100.0))
        .collect();
    UcInstance::new(name, net, vec![vec![0.0; 4], vec![p; 4]], vec![vec![0.0; 4], vec![q; 4]], params).unwrap()
}

/// A single unit whose minimum output exceeds the load; the surplus can only
/// go into the load bus shunt, which the DC model does not see.
pub fn dc_infeasible_instance() -> UcInstance {
    two_bus("dc_shunt", 0.01, 0.05, 0.5, vec![unit(0, 1.0, 2.0, -1.0, 1.0, 0.0, 1000.0, 0.0)], 0.5, 0.1, &[1000.0])
}

/// A cheap remote unit behind a lossy line and a dearer local unit. The DC
/// model ignores losses and reactive transfer and keeps only the remote unit
/// on.
pub fn dc_suboptimal_instance() -> UcInstance {
    let gens = vec![unit(0, 0.0, 2.0, -1.0, 1.0, 0.0, 1000.0, 0.0), unit(1, 0.0, 1.0, -1.0, 1.0, 0.0, 1050.0, 0.0)];
    two_bus("dc_losses", 0.15, 0.1, 0.0, gens, 0.6, 0.6, &[1000.0, 1050.0])
}
