//! Structured termination-argument reports.
//!
//! The structured format is a deterministic `key: value` document with
//! fixed field names; it is both the machine-readable output of
//! `synthesize` and the input of `check`. Apart from the leading version
//! header line (`# lassorank <version>`), output is byte-identical for a
//! fixed input, seed and configuration.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use thiserror::Error;

use crate::argument::{
    AffineFunction, RankingFunction, SupportingInvariant, TerminationArgument,
};
use crate::constraints::{build_constraints, Disjunct, InvariantMode, MotzkinCertificate};
use crate::parse::LassoProgram;
use crate::rational::{fmt_rational, parse_rational, Rational};
use crate::templates::{make_template, TemplateKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("malformed report line: '{0}'")]
    BadLine(String),
    #[error("missing report field '{0}'")]
    MissingField(String),
    #[error("bad value for '{field}': '{value}'")]
    BadValue { field: String, value: String },
    #[error("report status is '{0}', expected TERMINATING")]
    NotTerminating(String),
}

/// Extra numbers carried by a synthesis report.
#[derive(Debug, Clone)]
pub struct ReportExtras {
    pub nl_dimension: usize,
    pub nl_naive: usize,
    pub nl_bound: usize,
    pub total_branches: BigUint,
}

fn template_spec(kind: TemplateKind, k: usize) -> String {
    match kind {
        TemplateKind::Affine => "affine".to_string(),
        _ => format!("{}:{}", kind.as_str(), k),
    }
}

fn push_function(out: &mut String, prefix: &str, f: &AffineFunction, names: &[String]) {
    for (i, c) in f.coeffs.iter().enumerate() {
        out.push_str(&format!("{prefix}.coeff.{}: {}\n", names[i], fmt_rational(c)));
    }
    out.push_str(&format!("{prefix}.const: {}\n", fmt_rational(&f.constant)));
}

/// Renders a verified argument as the structured report document.
/// Multiplier values are keyed by their deterministic variable names,
/// which a rebuilt constraint system maps back to variables.
pub fn render_report(
    prog: &LassoProgram,
    arg: &TerminationArgument,
    extras: &ReportExtras,
) -> String {
    let sys = make_template(arg.template_kind, arg.k)
        .ok()
        .map(|t| build_constraints(prog, &t, arg.num_invariants, arg.mode, &arg.strict_slots));
    let names = &prog.var_names;
    let mut out = String::new();
    out.push_str(&format!("# lassorank {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str("status: TERMINATING\n");
    out.push_str(&format!("program-vars: {}\n", names.join(",")));
    out.push_str(&format!(
        "template: {}\n",
        template_spec(arg.template_kind, arg.k)
    ));
    out.push_str(&format!("mode: {}\n", arg.mode.as_str()));
    out.push_str(&format!("invariants: {}\n", arg.num_invariants));
    let strict: Vec<String> = arg
        .strict_slots
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    out.push_str(&format!("strict-slots: {}\n", strict.join(",")));
    out.push_str(&format!("branch-id: {}\n", arg.certificate.branch_id));
    out.push_str(&format!("nl-dimension: {}\n", extras.nl_dimension));
    out.push_str(&format!("nl-naive: {}\n", extras.nl_naive));
    out.push_str(&format!("nl-bound: {}\n", extras.nl_bound));
    out.push_str(&format!("branches-total: {}\n", extras.total_branches));
    out.push_str(&format!("ranking.kind: {}\n", arg.template_kind.as_str()));
    out.push_str(&format!("ranking.k: {}\n", arg.k));
    match &arg.ranking {
        RankingFunction::Affine { f, delta } => {
            out.push_str(&format!("ranking.delta.1: {}\n", fmt_rational(delta)));
            push_function(&mut out, "ranking.f.1", f, names);
        }
        RankingFunction::Multiphase { phases } => {
            for (i, (_, d)) in phases.iter().enumerate() {
                out.push_str(&format!("ranking.delta.{}: {}\n", i + 1, fmt_rational(d)));
            }
            for (i, (f, _)) in phases.iter().enumerate() {
                push_function(&mut out, &format!("ranking.f.{}", i + 1), f, names);
            }
        }
        RankingFunction::Piece {
            pieces,
            predicates,
            delta,
        } => {
            out.push_str(&format!("ranking.delta.1: {}\n", fmt_rational(delta)));
            for (i, f) in pieces.iter().enumerate() {
                push_function(&mut out, &format!("ranking.f.{}", i + 1), f, names);
            }
            for (i, g) in predicates.iter().enumerate() {
                push_function(&mut out, &format!("ranking.g.{}", i + 1), g, names);
            }
        }
        RankingFunction::Lex { components } => {
            for (i, (_, d)) in components.iter().enumerate() {
                out.push_str(&format!("ranking.delta.{}: {}\n", i + 1, fmt_rational(d)));
            }
            for (i, (f, _)) in components.iter().enumerate() {
                push_function(&mut out, &format!("ranking.f.{}", i + 1), f, names);
            }
        }
    }
    out.push_str(&format!("invariant.count: {}\n", arg.invariants.len()));
    for (i, inv) in arg.invariants.iter().enumerate() {
        let p = format!("invariant.{}", i + 1);
        push_function(&mut out, &p, &inv.func, names);
        out.push_str(&format!("{p}.strict: {}\n", inv.strict));
        out.push_str(&format!("{p}.trivial: {}\n", inv.is_trivial()));
    }
    let cert = &arg.certificate;
    out.push_str(&format!("cert.copies: {}\n", cert.copy_values.len()));
    for (c, (s, t)) in cert.copy_values.iter().enumerate() {
        for (i, v) in s.iter().enumerate() {
            out.push_str(&format!(
                "cert.copy.{}.s.{}: {}\n",
                c + 1,
                names[i],
                fmt_rational(v)
            ));
        }
        out.push_str(&format!("cert.copy.{}.t: {}\n", c + 1, fmt_rational(t)));
    }
    out.push_str(&format!("cert.subsystems: {}\n", cert.multipliers.len()));
    for (k, (mults, disjunct)) in cert.multipliers.iter().zip(&cert.disjuncts).enumerate() {
        out.push_str(&format!(
            "cert.sub.{}.disjunct: {}\n",
            k + 1,
            disjunct.as_str()
        ));
        let mut named: BTreeMap<String, &Rational> = BTreeMap::new();
        for (v, val) in mults {
            let name = match &sys {
                Some(sys) => sys.var_name(*v),
                None => format!("v_{}", v.0),
            };
            named.insert(name, val);
        }
        for (name, val) in named {
            out.push_str(&format!("cert.sub.{}.m.{}: {}\n", k + 1, name, fmt_rational(val)));
        }
    }
    out
}

/// Human-readable rendering of an argument.
pub fn render_human(
    prog: &LassoProgram,
    arg: &TerminationArgument,
    extras: &ReportExtras,
) -> String {
    let names = &prog.var_names;
    let mut out = String::new();
    out.push_str(&format!("# lassorank {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str("TERMINATING\n");
    out.push_str(&format!(
        "template: {}  invariants: {}  mode: {}\n",
        template_spec(arg.template_kind, arg.k),
        arg.num_invariants,
        arg.mode.as_str()
    ));
    match &arg.ranking {
        RankingFunction::Affine { f, delta } => {
            out.push_str(&format!(
                "ranking function: f = {}  (step size {})\n",
                f.render(names),
                fmt_rational(delta)
            ));
        }
        RankingFunction::Multiphase { phases } => {
            out.push_str("multiphase ranking function:\n");
            for (i, (f, d)) in phases.iter().enumerate() {
                out.push_str(&format!(
                    "  phase {}: f{} = {}  (step size {})\n",
                    i + 1,
                    i + 1,
                    f.render(names),
                    fmt_rational(d)
                ));
            }
        }
        RankingFunction::Piece {
            pieces,
            predicates,
            delta,
        } => {
            out.push_str(&format!(
                "piecewise ranking function (step size {}):\n",
                fmt_rational(delta)
            ));
            for (i, (f, g)) in pieces.iter().zip(predicates).enumerate() {
                out.push_str(&format!(
                    "  piece {}: f{} = {}  when  {} >= 0\n",
                    i + 1,
                    i + 1,
                    f.render(names),
                    g.render(names)
                ));
            }
        }
        RankingFunction::Lex { components } => {
            out.push_str("lexicographic ranking function:\n");
            for (i, (f, d)) in components.iter().enumerate() {
                out.push_str(&format!(
                    "  component {}: f{} = {}  (step size {})\n",
                    i + 1,
                    i + 1,
                    f.render(names),
                    fmt_rational(d)
                ));
            }
        }
    }
    if arg.invariants.is_empty() {
        out.push_str("supporting invariants: none\n");
    } else {
        out.push_str("supporting invariants:\n");
        for inv in &arg.invariants {
            let rel = if inv.strict { ">" } else { ">=" };
            let tag = if inv.is_trivial() { "  (trivial)" } else { "" };
            out.push_str(&format!("  {} {rel} 0{tag}\n", inv.func.render(names)));
        }
    }
    out.push_str(&format!(
        "branch: {}  of {} total\n",
        arg.certificate.branch_id, extras.total_branches
    ));
    out.push_str(&format!(
        "non-linear dimension: {} (naive bound {}, transformed bound {})\n",
        extras.nl_dimension, extras.nl_naive, extras.nl_bound
    ));
    out.push_str("certificate: verified\n");
    out
}

// ---------------------------------------------------------------------------
// Parsing

/// A report read back from disk; multipliers are keyed by variable name
/// until the constraint system is rebuilt against a program.
#[derive(Debug, Clone)]
pub struct ParsedReport {
    pub program_vars: Vec<String>,
    pub template_kind: TemplateKind,
    pub k: usize,
    pub num_invariants: usize,
    pub mode: InvariantMode,
    pub strict_slots: Vec<bool>,
    pub branch_id: BigUint,
    pub ranking: RankingFunction,
    pub invariants: Vec<SupportingInvariant>,
    pub copy_values: Vec<(Vec<Rational>, Rational)>,
    pub disjuncts: Vec<Disjunct>,
    pub multipliers_by_name: Vec<BTreeMap<String, Rational>>,
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn get(&self, key: &str) -> Result<&str, ReportError> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ReportError::MissingField(key.to_string()))
    }

    fn rational(&self, key: &str) -> Result<Rational, ReportError> {
        let raw = self.get(key)?;
        parse_rational(raw).ok_or_else(|| ReportError::BadValue {
            field: key.to_string(),
            value: raw.to_string(),
        })
    }

    fn usize(&self, key: &str) -> Result<usize, ReportError> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| ReportError::BadValue {
            field: key.to_string(),
            value: raw.to_string(),
        })
    }

    fn function(&self, prefix: &str, names: &[String]) -> Result<AffineFunction, ReportError> {
        Ok(AffineFunction {
            coeffs: names
                .iter()
                .map(|n| self.rational(&format!("{prefix}.coeff.{n}")))
                .collect::<Result<_, _>>()?,
            constant: self.rational(&format!("{prefix}.const"))?,
        })
    }
}

/// Parses the structured report format produced by `render_report`.
pub fn parse_report(text: &str) -> Result<ParsedReport, ReportError> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| ReportError::BadLine(line.to_string()))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    let fields = Fields(map);
    let status = fields.get("status")?;
    if status != "TERMINATING" {
        return Err(ReportError::NotTerminating(status.to_string()));
    }
    let program_vars: Vec<String> = fields
        .get("program-vars")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let (template_kind, k) = crate::templates::parse_template_spec(fields.get("template")?)
        .map_err(|e| ReportError::BadValue {
            field: "template".into(),
            value: e.to_string(),
        })?;
    let mode = match fields.get("mode")? {
        "general" => InvariantMode::General,
        "nondecreasing" => InvariantMode::NonDecreasing,
        other => {
            return Err(ReportError::BadValue {
                field: "mode".into(),
                value: other.to_string(),
            })
        }
    };
    let num_invariants = fields.usize("invariants")?;
    let mut strict_slots = vec![false; num_invariants];
    for part in fields.get("strict-slots")?.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let ix: usize = part.parse().map_err(|_| ReportError::BadValue {
            field: "strict-slots".into(),
            value: part.to_string(),
        })?;
        if ix == 0 || ix > num_invariants {
            return Err(ReportError::BadValue {
                field: "strict-slots".into(),
                value: part.to_string(),
            });
        }
        strict_slots[ix - 1] = true;
    }
    let branch_id: BigUint = fields
        .get("branch-id")?
        .parse()
        .map_err(|_| ReportError::BadValue {
            field: "branch-id".into(),
            value: fields.get("branch-id").unwrap_or("").to_string(),
        })?;
    let names = &program_vars;
    let ranking = match template_kind {
        TemplateKind::Affine => RankingFunction::Affine {
            f: fields.function("ranking.f.1", names)?,
            delta: fields.rational("ranking.delta.1")?,
        },
        TemplateKind::Phase => RankingFunction::Multiphase {
            phases: (1..=k)
                .map(|i| {
                    Ok((
                        fields.function(&format!("ranking.f.{i}"), names)?,
                        fields.rational(&format!("ranking.delta.{i}"))?,
                    ))
                })
                .collect::<Result<_, ReportError>>()?,
        },
        TemplateKind::Piece => RankingFunction::Piece {
            pieces: (1..=k)
                .map(|i| fields.function(&format!("ranking.f.{i}"), names))
                .collect::<Result<_, _>>()?,
            predicates: (1..=k)
                .map(|i| fields.function(&format!("ranking.g.{i}"), names))
                .collect::<Result<_, _>>()?,
            delta: fields.rational("ranking.delta.1")?,
        },
        TemplateKind::Lex => RankingFunction::Lex {
            components: (1..=k)
                .map(|i| {
                    Ok((
                        fields.function(&format!("ranking.f.{i}"), names)?,
                        fields.rational(&format!("ranking.delta.{i}"))?,
                    ))
                })
                .collect::<Result<_, ReportError>>()?,
        },
    };
    let inv_count = fields.usize("invariant.count")?;
    let mut invariants = Vec::with_capacity(inv_count);
    for i in 1..=inv_count {
        let p = format!("invariant.{i}");
        let func = fields.function(&p, names)?;
        let strict = fields.get(&format!("{p}.strict"))? == "true";
        invariants.push(SupportingInvariant { func, strict });
    }
    let copies = fields.usize("cert.copies")?;
    let mut copy_values = Vec::with_capacity(copies);
    for c in 1..=copies {
        let s: Vec<Rational> = names
            .iter()
            .map(|n| fields.rational(&format!("cert.copy.{c}.s.{n}")))
            .collect::<Result<_, _>>()?;
        let t = fields.rational(&format!("cert.copy.{c}.t"))?;
        copy_values.push((s, t));
    }
    let subsystems = fields.usize("cert.subsystems")?;
    let mut disjuncts = Vec::with_capacity(subsystems);
    let mut multipliers_by_name = Vec::with_capacity(subsystems);
    for s in 1..=subsystems {
        disjuncts.push(match fields.get(&format!("cert.sub.{s}.disjunct"))? {
            "classical" => Disjunct::Classical,
            "nonclassical" => Disjunct::NonClassical,
            other => {
                return Err(ReportError::BadValue {
                    field: format!("cert.sub.{s}.disjunct"),
                    value: other.to_string(),
                })
            }
        });
        let prefix = format!("cert.sub.{s}.m.");
        let mut mults = BTreeMap::new();
        for (key, value) in &fields.0 {
            if let Some(name) = key.strip_prefix(&prefix) {
                let r = parse_rational(value).ok_or_else(|| ReportError::BadValue {
                    field: key.clone(),
                    value: value.clone(),
                })?;
                mults.insert(name.to_string(), r);
            }
        }
        multipliers_by_name.push(mults);
    }
    Ok(ParsedReport {
        program_vars,
        template_kind,
        k,
        num_invariants,
        mode,
        strict_slots,
        branch_id,
        ranking,
        invariants,
        copy_values,
        disjuncts,
        multipliers_by_name,
    })
}

impl ParsedReport {
    /// Rebuilds the constraint system for `prog` and re-binds the named
    /// multipliers to its variables, producing a checkable argument.
    /// Pairing problems (different variables, different shape) are
    /// reported as an error string, not a parse failure.
    pub fn bind(&self, prog: &LassoProgram) -> Result<TerminationArgument, String> {
        if self.program_vars != prog.var_names {
            return Err("program/argument pairing mismatch: different variables".into());
        }
        let template = make_template(self.template_kind, self.k)
            .map_err(|e| format!("bad template: {e}"))?;
        let sys = build_constraints(
            prog,
            &template,
            self.num_invariants,
            self.mode,
            &self.strict_slots,
        );
        if sys.subsystems.len() != self.multipliers_by_name.len()
            || sys.copies.len() != self.copy_values.len()
        {
            return Err("program/argument pairing mismatch: different shape".into());
        }
        let mut multipliers = Vec::with_capacity(sys.subsystems.len());
        for (sub, named) in sys.subsystems.iter().zip(&self.multipliers_by_name) {
            let mut m = BTreeMap::new();
            for v in &sub.locals {
                let name = sys.var_name(*v);
                match named.get(&name) {
                    Some(val) => {
                        m.insert(*v, val.clone());
                    }
                    None => return Err(format!("certificate is missing {name}")),
                }
            }
            multipliers.push(m);
        }
        Ok(TerminationArgument {
            template_kind: self.template_kind,
            k: self.k,
            num_invariants: self.num_invariants,
            mode: self.mode,
            strict_slots: self.strict_slots.clone(),
            ranking: self.ranking.clone(),
            invariants: self.invariants.clone(),
            certificate: MotzkinCertificate {
                multipliers,
                disjuncts: self.disjuncts.clone(),
                copy_values: self.copy_values.clone(),
                branch_id: self.branch_id.clone(),
            },
        })
    }
}

/// Report text for an unproven run.
pub fn render_failure(status: &str, reason: &str, structured: bool) -> String {
    let mut out = String::new();
    out.push_str(&format!("# lassorank {}\n", env!("CARGO_PKG_VERSION")));
    if structured {
        out.push_str(&format!("status: {status}\n"));
        out.push_str(&format!("reason: {reason}\n"));
    } else {
        out.push_str(&format!("{status}\n"));
        out.push_str(&format!("reason: {reason}\n"));
        out.push_str(
            "note: analysis is over exact rationals; integer-domain programs are \
             handled by sound rational relaxation, which is incomplete over the \
             integers\n",
        );
    }
    out
}
