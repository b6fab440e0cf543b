use std::fmt::Write;

use super::{Integrality, LinExpr, ModelIR, Sense};

/// Plain-text dump of a model with `VARIABLES`, `CONES`, `ROWS` and
/// `OBJECTIVE` sections. Variables are referred to by their position.
///
/// ```text
/// VARIABLES 2
/// 0 p_gen[0,0] 0 1 C
/// ...
/// ROWS 1
/// active_generation[0,0] +1 x0 <= 1
/// ```
pub fn to_text(m: &ModelIR) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME {}", m.name);
    let _ = writeln!(out, "VARIABLES {}", m.variables.len());
    for (j, v) in m.variables.iter().enumerate() {
        let kind = match v.integrality {
            Integrality::Continuous => "C",
            Integrality::Binary => "B",
        };
        let _ = writeln!(
            out,
            "{j} {}[{},{}] {} {} {kind}",
            v.kind.name(),
            v.entity,
            v.period,
            num(v.lo),
            num(v.hi)
        );
    }
    let cones = m.socs.len() + m.rotated.len() + m.psds.len();
    let _ = writeln!(out, "CONES {cones}");
    for c in &m.socs {
        let lhs: Vec<String> = c.lhs.iter().map(expr).collect();
        let _ = writeln!(out, "{}[{},{}] SOC ({}) <= {}", c.info.tag, c.info.entity, c.info.period, lhs.join(", "), expr(&c.rhs));
    }
    for c in &m.rotated {
        let lhs: Vec<String> = c.lhs.iter().map(expr).collect();
        let _ = writeln!(
            out,
            "{}[{},{}] RSOC ({}) <= ({})*({})",
            c.info.tag,
            c.info.entity,
            c.info.period,
            lhs.join(", "),
            expr(&c.x),
            expr(&c.y)
        );
    }
    for c in &m.psds {
        let e: Vec<String> = c.entries.iter().map(expr).collect();
        let _ = writeln!(out, "{}[{},{}] PSD {} ({})", c.info.tag, c.info.entity, c.info.period, c.dim, e.join(", "));
    }
    let _ = writeln!(out, "ROWS {}", m.rows.len());
    for r in &m.rows {
        let sense = match r.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let lhs = expr(&LinExpr::new(r.terms.clone(), 0.0));
        let _ = writeln!(out, "{}[{},{}] {lhs} {sense} {}", r.info.tag, r.info.entity, r.info.period, num(r.rhs));
    }
    let _ = writeln!(out, "OBJECTIVE {}", expr(&m.objective));
    out
}

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn expr(e: &LinExpr) -> String {
    let mut parts: Vec<String> = e.terms.iter().map(|&(j, a)| format!("{a:+} x{j}")).collect();
    if e.constant != 0.0 || parts.is_empty() {
        parts.push(format!("{:+}", e.constant));
    }
    parts.join(" ")
}
