//! Text export of models (LP format) and import of solution files.
//!
//! Variable names are sanitized to the LP identifier charset deterministically
//! from the model, so a solution file written against an exported model maps
//! back without extra bookkeeping.  Solution files are plain `name value`
//! lines; `\` and `#` start comment lines.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::Error;
use crate::milp::{MilpModel, Sense, VarKind};

/// Significant digits carried by numbers in exported models.
const LP_DIGITS: usize = 12;

/// `%g`-style formatting with [`LP_DIGITS`] significant digits.
fn fmt_g(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..LP_DIGITS as i32).contains(&exp) {
        let frac = (LP_DIGITS as i32 - 1 - exp).max(0) as usize;
        let mut s = format!("{v:.frac$}");
        if s.contains('.') {
            while s.ends_with('0') {
                s.pop();
            }
            if s.ends_with('.') {
                s.pop();
            }
        }
        s
    } else {
        format!("{:.*e}", LP_DIGITS - 1, v)
    }
}

/// LP-safe, model-unique names for every variable, in variable order.
pub(crate) fn var_names(model: &MilpModel) -> Vec<String> {
    let mut used: HashMap<String, usize> = HashMap::new();
    model
        .vars
        .iter()
        .map(|v| {
            let mut s: String = v
                .name
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            if s.is_empty() {
                s = "v".into();
            }
            let b = s.as_bytes();
            let bad_start = b[0].is_ascii_digit()
                || b[0] == b'.'
                || ((b[0] == b'e' || b[0] == b'E')
                    && b.len() > 1
                    && (b[1].is_ascii_digit() || b[1] == b'.'));
            if bad_start {
                s = format!("v_{s}");
            }
            let n = used.entry(s.clone()).or_insert(0);
            *n += 1;
            if *n > 1 {
                s = format!("{s}__{}", *n - 1);
                used.entry(s.clone()).or_insert(1);
            }
            s
        })
        .collect()
}

fn push_terms(out: &mut String, terms: &[(f64, usize)], names: &[String]) {
    if terms.is_empty() {
        out.push_str("0 ");
        out.push_str(&names[0]);
        return;
    }
    for (k, &(c, v)) in terms.iter().enumerate() {
        if k == 0 {
            if c < 0.0 {
                out.push_str("- ");
            }
        } else if c < 0.0 {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        let _ = write!(out, "{} {}", fmt_g(c.abs()), names[v]);
        if (k + 1) % 8 == 0 && k + 1 < terms.len() {
            out.push_str("\n   ");
        }
    }
}

/// Renders the model in LP text format (Minimize / Subject To / Bounds /
/// Binaries / End).
pub fn export_lp(model: &MilpModel) -> String {
    let names = var_names(model);
    let mut out = String::new();
    out.push_str("\\ exported by dvfs-sched\n");
    out.push_str("Minimize\n obj: ");
    push_terms(&mut out, &model.objective, &names);
    out.push_str("\nSubject To\n");
    let mut row_used: HashMap<String, usize> = HashMap::new();
    for c in &model.constraints {
        let mut rname: String = c
            .name
            .chars()
            .map(|ch| {
                if ch.is_ascii_alphanumeric() || ch == '_' {
                    ch
                } else {
                    '_'
                }
            })
            .collect();
        if rname.is_empty() {
            rname = "c".into();
        }
        let n = row_used.entry(rname.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            rname = format!("{rname}__{}", *n - 1);
        }
        let _ = write!(out, " {rname}: ");
        push_terms(&mut out, &c.terms, &names);
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", fmt_g(c.rhs));
    }
    out.push_str("Bounds\n");
    for (i, v) in model.vars.iter().enumerate() {
        if v.kind == VarKind::Binary && v.lower == 0.0 && v.upper == 1.0 {
            continue;
        }
        let name = &names[i];
        if v.lower == v.upper {
            let _ = writeln!(out, " {name} = {}", fmt_g(v.lower));
        } else if v.lower == 0.0 && v.upper.is_infinite() {
            continue;
        } else if v.upper.is_infinite() {
            let _ = writeln!(out, " {name} >= {}", fmt_g(v.lower));
        } else if v.lower.is_infinite() {
            let _ = writeln!(out, " -inf <= {name} <= {}", fmt_g(v.upper));
        } else {
            let _ = writeln!(out, " {} <= {name} <= {}", fmt_g(v.lower), fmt_g(v.upper));
        }
    }
    let binaries: Vec<&String> = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| &names[i])
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for chunk in binaries.chunks(10) {
            out.push(' ');
            out.push_str(
                &chunk
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
            );
            out.push('\n');
        }
    }
    out.push_str("End\n");
    out
}

/// Renders an assignment as `name value` lines, full float precision.
pub fn export_solution(model: &MilpModel, x: &[f64]) -> String {
    assert_eq!(x.len(), model.vars.len());
    let names = var_names(model);
    let mut out = String::new();
    let _ = writeln!(out, "\\ objective {:e}", model.objective_value(x));
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(out, "{name} {:e}", x[i]);
    }
    out
}

/// Parses `name value` lines back into an assignment and checks it against
/// the model within `tol`.
///
/// Variables absent from the file default to 0 and are reported in the
/// returned warnings; an infeasible point is rejected naming the worst
/// violated row or bound.
pub fn import_solution(
    model: &MilpModel,
    text: &str,
    tol: f64,
) -> Result<(Vec<f64>, Vec<String>), Error> {
    let names = var_names(model);
    let index: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut x = vec![0.0f64; model.vars.len()];
    let mut seen = vec![false; model.vars.len()];
    let mut warnings = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') || line.starts_with('#') {
            continue;
        }
        let mut tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() == 3 && tokens[1] == "=" {
            tokens.remove(1);
        }
        if tokens.len() != 2 {
            return Err(Error::SolutionImport(format!(
                "line {}: expected `name value`, got {line:?}",
                lineno + 1
            )));
        }
        let id = *index.get(tokens[0]).ok_or_else(|| {
            Error::SolutionImport(format!(
                "line {}: unknown variable {:?}",
                lineno + 1,
                tokens[0]
            ))
        })?;
        let value: f64 = tokens[1].parse().map_err(|_| {
            Error::SolutionImport(format!(
                "line {}: cannot parse value {:?}",
                lineno + 1,
                tokens[1]
            ))
        })?;
        if seen[id] {
            warnings.push(format!(
                "line {}: value for {} reassigned",
                lineno + 1,
                tokens[0]
            ));
        }
        seen[id] = true;
        x[id] = value;
    }

    let missing: Vec<&str> = (0..x.len())
        .filter(|&i| !seen[i])
        .map(|i| names[i].as_str())
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
        warnings.push(format!(
            "{} variable(s) absent from the solution file defaulted to 0 ({shown}{})",
            missing.len(),
            if missing.len() > 5 { ", ..." } else { "" }
        ));
    }

    let violations = model.check_point(&x, tol);
    if let Some(worst) = violations.first() {
        return Err(Error::SolutionImport(format!(
            "point violates {} by {:.3e}",
            worst.what, worst.amount
        )));
    }
    Ok((x, warnings))
}
