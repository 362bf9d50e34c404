//! CPLEX-style LP text dump for cross-checking problems in external solvers.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::{LinearConstraint, MilpProblem};
use crate::error::{Error, Result};

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect()
}

fn expression(p: &MilpProblem, terms: &[(usize, f64)], out: &mut String) {
    if terms.is_empty() {
        out.push_str(" 0");
        return;
    }
    for &(j, a) in terms {
        let sign = if a < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", a.abs(), sanitize(&p.var_name(j)));
    }
}

fn row(p: &MilpProblem, name: &str, c: &LinearConstraint, sense: &str, out: &mut String) {
    let _ = write!(out, " {name}:");
    expression(p, &c.terms, out);
    let _ = writeln!(out, " {sense} {}", c.rhs);
}

pub fn write_lp(p: &MilpProblem, w: &mut impl Write) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str("\\ binary program\n");
    if p.offset != 0.0 {
        let _ = writeln!(out, "\\ objective offset {}", p.offset);
    }
    out.push_str("Minimize\n obj:");
    let terms: Vec<(usize, f64)> = p.objective.iter().copied().enumerate().filter(|&(_, c)| c != 0.0).collect();
    expression(p, &terms, &mut out);
    out.push_str("\nSubject To\n");
    for (i, c) in p.eq_constraints.iter().enumerate() {
        row(p, &format!("e{i}"), c, "=", &mut out);
    }
    for (i, c) in p.le_constraints.iter().enumerate() {
        row(p, &format!("l{i}"), c, "<=", &mut out);
    }
    out.push_str("Binary\n");
    for j in 0..p.num_vars {
        let _ = writeln!(out, " {}", sanitize(&p.var_name(j)));
    }
    out.push_str("End\n");
    w.write_all(out.as_bytes())
}

pub fn write_lp_file(p: &MilpProblem, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_lp(p, &mut f).map_err(|e| Error::io(path, e))
}
