use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::UcInstance;

/// On/off, startup and shutdown decisions per generator and period.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommitmentSchedule {
    pub u: Vec<Vec<bool>>,
    pub v: Vec<Vec<bool>>,
    pub w: Vec<Vec<bool>>,
}

impl CommitmentSchedule {
    /// Derives startups and shutdowns from the on/off pattern on a cyclic
    /// horizon.
    pub fn from_u(u: Vec<Vec<bool>>) -> Self {
        let mut v = Vec::with_capacity(u.len());
        let mut w = Vec::with_capacity(u.len());
        for row in &u {
            let h = row.len();
            let prev = |t: usize| row[(t + h - 1) % h];
            v.push((0..h).map(|t| row[t] && !prev(t)).collect());
            w.push((0..h).map(|t| !row[t] && prev(t)).collect());
        }
        CommitmentSchedule { u, v, w }
    }

    pub fn all_on(generators: usize, horizon: usize) -> Self {
        Self::from_u(vec![vec![true; horizon]; generators])
    }

    pub fn n_generators(&self) -> usize {
        self.u.len()
    }

    pub fn horizon(&self) -> usize {
        self.u.first().map(Vec::len).unwrap_or(0)
    }

    pub fn is_on(&self, g: usize, t: usize) -> bool {
        self.u[g][t]
    }

    /// Logical system: cyclic transition identity, startup/shutdown
    /// consistency and the minimum up/down windows.
    pub fn check(&self, inst: &UcInstance) -> Result<()> {
        let ng = inst.network.n_generators();
        let h = inst.horizon;
        let shape_ok = |m: &Vec<Vec<bool>>| m.len() == ng && m.iter().all(|r| r.len() == h);
        if !(shape_ok(&self.u) && shape_ok(&self.v) && shape_ok(&self.w)) {
            return Err(Error::invalid("schedule shape does not match instance"));
        }
        let b = |x: bool| x as i32;
        for g in 0..ng {
            for t in 0..h {
                let (u, v, w) = (self.u[g][t], self.v[g][t], self.w[g][t]);
                let up = self.u[g][inst.prev(t)];
                if b(u) - b(up) != b(v) - b(w) {
                    return Err(Error::invalid(format!("transition identity fails at g{g} t{t}")));
                }
                if v && !u {
                    return Err(Error::invalid(format!("startup while off at g{g} t{t}")));
                }
                if w && u {
                    return Err(Error::invalid(format!("shutdown while on at g{g} t{t}")));
                }
                let starts: i32 = inst.uptime_window(g, t).iter().map(|&k| b(self.v[g][k])).sum();
                if starts > b(u) {
                    return Err(Error::invalid(format!("minimum uptime violated at g{g} t{t}")));
                }
                let stops: i32 = inst.downtime_window(g, t).iter().map(|&k| b(self.w[g][k])).sum();
                if stops > 1 - b(u) {
                    return Err(Error::invalid(format!("minimum downtime violated at g{g} t{t}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, inst: &UcInstance) -> bool {
        self.check(inst).is_ok()
    }

    /// Fixed-cost part of the objective: per-period commitment cost plus
    /// startup and shutdown costs.
    pub fn fixed_cost(&self, inst: &UcInstance) -> f64 {
        let mut total = 0.0;
        for (g, p) in inst.gen_params.iter().enumerate() {
            for t in 0..inst.horizon {
                if self.u[g][t] {
                    total += p.fixed_cost;
                }
                if self.v[g][t] {
                    total += p.startup_cost;
                }
                if self.w[g][t] {
                    total += p.shutdown_cost;
                }
            }
        }
        total
    }

    /// Compact text form, one line per generator (`1` on, `0` off).
    pub fn pattern(&self) -> String {
        self.u
            .iter()
            .map(|r| r.iter().map(|&x| if x { '1' } else { '0' }).collect::<String>())
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Every on/off pattern of one generator over `horizon` periods that obeys
/// its minimum up/down windows.
pub fn feasible_patterns(inst: &UcInstance, g: usize) -> Vec<Vec<bool>> {
    let h = inst.horizon;
    assert!(h < 24, "pattern enumeration is meant for short horizons");
    let mut out = Vec::new();
    for mask in 0u32..(1 << h) {
        let row: Vec<bool> = (0..h).map(|t| mask >> t & 1 == 1).collect();
        let mut u = vec![vec![false; h]; inst.network.n_generators()];
        u[g] = row.clone();
        let s = CommitmentSchedule::from_u(u);
        let ok = (0..h).all(|t| {
            let starts = inst.uptime_window(g, t).iter().filter(|&&k| s.v[g][k]).count();
            let stops = inst.downtime_window(g, t).iter().filter(|&&k| s.w[g][k]).count();
            starts <= s.u[g][t] as usize && stops <= 1 - s.u[g][t] as usize
        });
        if ok {
            out.push(row);
        }
    }
    out
}
