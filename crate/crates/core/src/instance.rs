//! Multi-period unit-commitment instances built from single-period AC OPF
//! cases: demand profiles, peak normalization, generator typing and cost
//! synthesis.
//!
//! Randomness comes from a ChaCha8 stream (`rand_chacha::ChaCha8Rng`) seeded
//! with `seed_from_u64(seed)`. A uniform pick from `n` options takes
//! `next_u64()` and reduces it modulo `n`, rejecting draws from the biased top
//! band. Draw order: one profile per demand bus in bus order, then one type
//! per generator in generator order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::case_io::Network;
use crate::error::{Error, Result};

pub const HORIZON: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileName {
    Real1,
    Real2,
    Real3,
    MaxReal,
    Reactive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub name: ProfileName,
    pub values: [f64; HORIZON],
}

const REAL1: [f64; HORIZON] = [
    0.68, 0.64, 0.61, 0.60, 0.60, 0.62, 0.67, 0.74, 0.80, 0.84, 0.89, 0.92, 0.94, 0.95, 0.97, 0.99,
    1.00, 0.96, 0.96, 0.92, 0.92, 0.88, 0.78, 0.76,
];
const REAL2: [f64; HORIZON] = [
    0.57, 0.64, 0.68, 0.71, 0.75, 0.78, 0.82, 0.85, 0.88, 0.92, 0.97, 1.00, 0.92, 0.88, 0.85, 0.78,
    0.71, 0.78, 0.85, 0.92, 0.85, 0.78, 0.71, 0.64,
];
const REAL3: [f64; HORIZON] = [
    0.67, 0.63, 0.60, 0.59, 0.59, 0.60, 0.74, 0.86, 0.95, 0.96, 0.96, 0.95, 0.95, 0.95, 0.93, 0.94,
    0.99, 1.00, 1.00, 0.96, 0.91, 0.83, 0.73, 0.63,
];
const MAX_REAL: [f64; HORIZON] = [
    0.68, 0.64, 0.68, 0.71, 0.75, 0.78, 0.82, 0.86, 0.95, 0.96, 0.97, 1.00, 0.95, 0.95, 0.97, 0.99,
    1.00, 1.00, 1.00, 0.96, 0.92, 0.88, 0.78, 0.76,
];
const REACTIVE: [f64; HORIZON] = [
    0.68, 0.65, 0.62, 0.60, 0.61, 0.63, 0.68, 0.69, 0.73, 0.81, 0.89, 0.92, 0.95, 0.95, 0.97, 1.00,
    1.00, 0.96, 0.96, 0.93, 0.93, 0.91, 0.77, 0.76,
];

/// The five tabulated 24-hour profiles, in table column order.
pub fn builtin_profiles() -> Vec<DemandProfile> {
    [
        (ProfileName::Real1, REAL1),
        (ProfileName::Real2, REAL2),
        (ProfileName::Real3, REAL3),
        (ProfileName::MaxReal, MAX_REAL),
        (ProfileName::Reactive, REACTIVE),
    ]
    .into_iter()
    .map(|(name, values)| DemandProfile { name, values })
    .collect()
}

pub fn profile(name: ProfileName) -> DemandProfile {
    builtin_profiles()
        .into_iter()
        .find(|p| p.name == name)
        .expect("all profiles are tabulated")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorType {
    Type1,
    Type2,
    Type3,
}

impl GeneratorType {
    pub fn min_time(self) -> usize {
        match self {
            GeneratorType::Type1 => 2,
            GeneratorType::Type2 => 3,
            GeneratorType::Type3 => 4,
        }
    }

    fn ramp_divisor(self) -> f64 {
        match self {
            GeneratorType::Type1 => 2.0,
            GeneratorType::Type2 => 3.0,
            GeneratorType::Type3 => 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcGeneratorParams {
    pub kind: Option<GeneratorType>,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub min_up: usize,
    pub min_down: usize,
    /// Per-period cost of being committed.
    pub fixed_cost: f64,
    pub startup_cost: f64,
    pub shutdown_cost: f64,
}

impl UcGeneratorParams {
    /// Parameters for a typed generator. `linear_cost` is the case file's
    /// linear cost coefficient in $/MWh.
    pub fn from_type(kind: GeneratorType, pmin: f64, pmax: f64, linear_cost: f64) -> Self {
        let ramp = pmin.max(pmax / kind.ramp_divisor());
        UcGeneratorParams {
            kind: Some(kind),
            ramp_up: ramp,
            ramp_down: ramp,
            min_up: kind.min_time(),
            min_down: kind.min_time(),
            fixed_cost: 5.0 * linear_cost,
            startup_cost: 100.0 * linear_cost,
            shutdown_cost: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcInstance {
    pub name: String,
    pub network: Network,
    pub horizon: usize,
    /// `pd[bus][t]`, per-unit.
    pub pd: Vec<Vec<f64>>,
    /// `qd[bus][t]`, per-unit.
    pub qd: Vec<Vec<f64>>,
    pub gen_params: Vec<UcGeneratorParams>,
    /// Real profile drawn for each bus; `None` for buses without demand.
    pub profiles: Vec<Option<ProfileName>>,
    pub seed: u64,
}

/// Instance-generation switches.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenerateOptions {
    /// Let buses draw the "max real" profile as a fourth option.
    pub include_max_real: bool,
}

pub fn generate_instance(network: &Network, seed: u64) -> UcInstance {
    generate_instance_with(network, seed, GenerateOptions::default())
}

pub fn generate_instance_with(network: &Network, seed: u64, opts: GenerateOptions) -> UcInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut choices = vec![ProfileName::Real1, ProfileName::Real2, ProfileName::Real3];
    if opts.include_max_real {
        choices.push(ProfileName::MaxReal);
    }
    let reactive = profile(ProfileName::Reactive).values;

    let mut pd = Vec::with_capacity(network.n_buses());
    let mut qd = Vec::with_capacity(network.n_buses());
    let mut profiles = Vec::with_capacity(network.n_buses());
    for bus in &network.buses {
        if bus.pd == 0.0 && bus.qd == 0.0 {
            pd.push(vec![0.0; HORIZON]);
            qd.push(vec![0.0; HORIZON]);
            profiles.push(None);
            continue;
        }
        let name = choices[uniform_index(&mut rng, choices.len())];
        let values = profile(name).values;
        pd.push(values.iter().map(|f| f * bus.pd).collect());
        qd.push(reactive.iter().map(|f| f * bus.qd).collect());
        profiles.push(Some(name));
    }

    let types = [GeneratorType::Type1, GeneratorType::Type2, GeneratorType::Type3];
    let gen_params = network
        .generators
        .iter()
        .map(|g| {
            let kind = types[uniform_index(&mut rng, types.len())];
            UcGeneratorParams::from_type(kind, g.pmin, g.pmax, g.cost_linear / network.base_mva)
        })
        .collect();

    UcInstance {
        name: network.name.clone(),
        network: network.clone(),
        horizon: HORIZON,
        pd,
        qd,
        gen_params,
        profiles,
        seed,
    }
}

fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let x = rng.next_u64();
        if x < zone {
            return (x % n) as usize;
        }
    }
}

impl UcInstance {
    /// A hand-built instance with explicit demand series and generator data.
    pub fn new(
        name: impl Into<String>,
        network: Network,
        pd: Vec<Vec<f64>>,
        qd: Vec<Vec<f64>>,
        gen_params: Vec<UcGeneratorParams>,
    ) -> Result<Self> {
        let horizon = pd.first().map(Vec::len).unwrap_or(0);
        let inst = UcInstance {
            name: name.into(),
            profiles: vec![None; network.n_buses()],
            network,
            horizon,
            pd,
            qd,
            gen_params,
            seed: 0,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let nb = self.network.n_buses();
        if self.horizon == 0 {
            return Err(Error::invalid("empty horizon"));
        }
        if self.pd.len() != nb || self.qd.len() != nb {
            return Err(Error::invalid("demand matrices must have one row per bus"));
        }
        if self
            .pd
            .iter()
            .chain(&self.qd)
            .any(|row| row.len() != self.horizon)
        {
            return Err(Error::invalid("demand rows must span the horizon"));
        }
        if self.gen_params.len() != self.network.n_generators() {
            return Err(Error::invalid("one UC parameter set per generator required"));
        }
        for (g, p) in self.gen_params.iter().enumerate() {
            if p.min_up == 0 || p.min_down == 0 || p.min_up > self.horizon || p.min_down > self.horizon {
                return Err(Error::invalid(format!("generator {g}: min up/down out of range")));
            }
        }
        Ok(())
    }

    pub fn n_periods(&self) -> usize {
        self.horizon
    }

    /// Previous period on the cyclic horizon (0-based).
    pub fn prev(&self, t: usize) -> usize {
        (t + self.horizon - 1) % self.horizon
    }

    /// Next period on the cyclic horizon (0-based).
    pub fn next(&self, t: usize) -> usize {
        (t + 1) % self.horizon
    }

    /// Minimum-uptime window of generator `g` ending at period `t` (0-based).
    pub fn uptime_window(&self, g: usize, t: usize) -> Vec<usize> {
        cyclic_window(t, self.gen_params[g].min_up, self.horizon)
    }

    /// Minimum-downtime window of generator `g` ending at period `t` (0-based).
    pub fn downtime_window(&self, g: usize, t: usize) -> Vec<usize> {
        cyclic_window(t, self.gen_params[g].min_down, self.horizon)
    }

    pub fn total_demand(&self, t: usize) -> f64 {
        self.pd.iter().map(|row| row[t]).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: UcInstance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    /// Truncates the horizon to the first `periods` periods (the cyclic
    /// coupling then wraps at the new horizon).
    pub fn truncated(&self, periods: usize) -> Result<Self> {
        if periods == 0 || periods > self.horizon {
            return Err(Error::invalid("truncation length out of range"));
        }
        let mut inst = self.clone();
        inst.horizon = periods;
        for row in inst.pd.iter_mut().chain(inst.qd.iter_mut()) {
            row.truncate(periods);
        }
        for p in &mut inst.gen_params {
            p.min_up = p.min_up.min(periods);
            p.min_down = p.min_down.min(periods);
        }
        Ok(inst)
    }
}

/// `t'` on a 1-based cyclic horizon of `horizon` periods.
pub fn wrap_prev(t: usize, horizon: usize) -> Result<usize> {
    check_period(t, horizon)?;
    Ok(if t == 1 { horizon } else { t - 1 })
}

/// `t''` on a 1-based cyclic horizon of `horizon` periods.
pub fn wrap_next(t: usize, horizon: usize) -> Result<usize> {
    check_period(t, horizon)?;
    Ok(if t == horizon { 1 } else { t + 1 })
}

/// 1-based window `{((t - len + j) mod horizon) + 1 : j = 0..len-1}`.
pub fn window_1based(t: usize, len: usize, horizon: usize) -> Result<Vec<usize>> {
    check_period(t, horizon)?;
    let h = horizon as i64;
    Ok((0..len as i64)
        .map(|j| ((t as i64 - len as i64 + j).rem_euclid(h) + 1) as usize)
        .collect())
}

fn check_period(t: usize, horizon: usize) -> Result<()> {
    if t == 0 || t > horizon {
        Err(Error::invalid(format!("period {t} outside 1..={horizon}")))
    } else {
        Ok(())
    }
}

/// 0-based window of `len` periods ending at `t`.
pub(crate) fn cyclic_window(t: usize, len: usize, horizon: usize) -> Vec<usize> {
    (0..len)
        .map(|j| (t + horizon * len + j + 1 - len) % horizon)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::parse_case;

    fn case9() -> Network {
        parse_case(include_str!("../../../cases/case9.m")).unwrap()
    }

    #[test]
    fn tabulated_values() {
        assert_eq!(profile(ProfileName::Real1).values[0], 0.68);
        assert_eq!(profile(ProfileName::Real2).values[11], 1.00);
        assert_eq!(profile(ProfileName::Reactive).values[15], 1.00);
        for p in builtin_profiles() {
            let max = p.values.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(max, 1.0, "{:?}", p.name);
            assert!(p.values.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn max_real_is_columnwise_max() {
        let m = profile(ProfileName::MaxReal).values;
        for t in 0..HORIZON {
            let want = REAL1[t].max(REAL2[t]).max(REAL3[t]);
            assert_eq!(m[t], want, "t={}", t + 1);
        }
    }

    #[test]
    fn typed_parameters() {
        let p = UcGeneratorParams::from_type(GeneratorType::Type1, 0.10, 1.00, 20.0);
        assert_eq!((p.ramp_up, p.ramp_down, p.min_up, p.min_down), (0.5, 0.5, 2, 2));
        let p = UcGeneratorParams::from_type(GeneratorType::Type3, 0.30, 1.00, 20.0);
        assert_eq!((p.ramp_up, p.min_up), (0.3, 4));
        assert_eq!((p.fixed_cost, p.startup_cost, p.shutdown_cost), (100.0, 2000.0, 0.0));
    }

    #[test]
    fn wraps() {
        assert_eq!(wrap_prev(1, 24).unwrap(), 24);
        assert_eq!(wrap_prev(5, 24).unwrap(), 4);
        assert_eq!(wrap_next(24, 24).unwrap(), 1);
        assert!(wrap_prev(0, 24).is_err());
        assert!(wrap_next(25, 24).is_err());
    }

    #[test]
    fn windows_by_hand() {
        assert_eq!(window_1based(1, 2, 24).unwrap(), vec![24, 1]);
        assert_eq!(window_1based(5, 3, 24).unwrap(), vec![3, 4, 5]);
        assert_eq!(window_1based(24, 2, 24).unwrap(), vec![23, 24]);
    }

    #[test]
    fn zero_based_window_matches_formula() {
        for len in 1..=4 {
            for t in 1..=24 {
                let want: Vec<usize> = window_1based(t, len, 24).unwrap().iter().map(|x| x - 1).collect();
                assert_eq!(cyclic_window(t - 1, len, 24), want);
            }
        }
    }

    #[test]
    fn peak_normalization_and_scaling() {
        let net = case9();
        let inst = generate_instance(&net, 7);
        for (i, bus) in net.buses.iter().enumerate() {
            let peak = inst.pd[i].iter().cloned().fold(f64::MIN, f64::max);
            if bus.pd > 0.0 {
                assert_eq!(peak, bus.pd);
                let prof = profile(inst.profiles[i].unwrap()).values;
                assert_eq!(inst.pd[i][2], prof[2] * bus.pd);
            } else {
                assert!(inst.pd[i].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn bus_5_real1_period_3() {
        // 0.61 * 0.90
        let v = REAL1[2] * 0.90;
        assert!((v - 0.549).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let net = case9();
        let a = generate_instance(&net, 42).to_json().unwrap();
        let b = generate_instance(&net, 42).to_json().unwrap();
        assert_eq!(a, b);
        let back = UcInstance::from_json(&a).unwrap();
        assert_eq!(back, generate_instance(&net, 42));
    }

    #[test]
    fn ramp_allows_cold_start() {
        let net = case9();
        for seed in 0..20 {
            let inst = generate_instance(&net, seed);
            for (g, p) in inst.gen_params.iter().enumerate() {
                assert!(p.ramp_up >= net.generators[g].pmin);
            }
        }
    }
}
