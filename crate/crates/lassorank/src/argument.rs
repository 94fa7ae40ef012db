//! Termination arguments: concrete ranking functions, supporting
//! invariants, ordinal ranks, exact certificate verification and sampled
//! execution checks.
//!
//! The certificate re-verification rebuilds the constraint subsystems for
//! the program and checks every equality and inequality in exact rational
//! arithmetic, including the chosen disjunct of each transposed
//! implication. A sampled-trace decrease check complements this as a
//! sanity check; the proof is the certificate.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::constraints::{
    build_constraints, ConstraintSystem, Disjunct, InvariantMode, MotzkinCertificate, Rel,
    SubsystemKind,
};
use crate::fm::{fm_feasible_with, Feasibility, ValuePick};
use crate::linear::{LinAtom, Polyhedron, Relation, Valuation, Var};
use crate::parse::LassoProgram;
use crate::rational::{ceil_to_nat, fmt_rational, Rational};
use crate::solver::Assignment;
use crate::templates::{make_template, TemplateKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArgumentError {
    #[error("step size must be positive")]
    NonPositiveDelta,
    #[error("assignment is missing variable {0}")]
    MissingVariable(String),
}

/// An affine map `coeffs . x + constant` over the program variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineFunction {
    pub coeffs: Vec<Rational>,
    pub constant: Rational,
}

impl AffineFunction {
    pub fn eval(&self, state: &Valuation) -> Rational {
        let mut acc = self.constant.clone();
        for (i, c) in self.coeffs.iter().enumerate() {
            if let Some(v) = state.get(&Var(i as u32)) {
                acc += c * v;
            }
        }
        acc
    }

    pub fn render(&self, names: &[String]) -> String {
        let mut out = String::new();
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let abs = c.abs();
            let term = if abs.is_one() {
                names[i].clone()
            } else {
                format!("{}*{}", fmt_rational(&abs), names[i])
            };
            if first {
                if c.is_negative() {
                    out.push('-');
                }
                first = false;
            } else {
                out.push_str(if c.is_negative() { " - " } else { " + " });
            }
            out.push_str(&term);
        }
        if !self.constant.is_zero() || first {
            let c = &self.constant;
            if first {
                out.push_str(&fmt_rational(c));
            } else {
                out.push_str(if c.is_negative() { " - " } else { " + " });
                out.push_str(&fmt_rational(&c.abs()));
            }
        }
        out
    }
}

/// An affine invariant `func(x) >= 0` (or `> 0` when strict).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportingInvariant {
    pub func: AffineFunction,
    pub strict: bool,
}

impl SupportingInvariant {
    pub fn holds(&self, state: &Valuation) -> bool {
        let v = self.func.eval(state);
        if self.strict {
            v.is_positive()
        } else {
            !v.is_negative()
        }
    }

    /// Trivial means the linear part vanishes and the constant satisfies
    /// the relation outright.
    pub fn is_trivial(&self) -> bool {
        self.func.coeffs.iter().all(Rational::is_zero)
            && if self.strict {
                self.func.constant.is_positive()
            } else {
                !self.func.constant.is_negative()
            }
    }
}

/// A concrete ranking function of one of the four template kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankingFunction {
    Affine {
        f: AffineFunction,
        delta: Rational,
    },
    Multiphase {
        phases: Vec<(AffineFunction, Rational)>,
    },
    Piece {
        pieces: Vec<AffineFunction>,
        predicates: Vec<AffineFunction>,
        delta: Rational,
    },
    Lex {
        components: Vec<(AffineFunction, Rational)>,
    },
}

impl RankingFunction {
    pub fn kind(&self) -> TemplateKind {
        match self {
            RankingFunction::Affine { .. } => TemplateKind::Affine,
            RankingFunction::Multiphase { .. } => TemplateKind::Phase,
            RankingFunction::Piece { .. } => TemplateKind::Piece,
            RankingFunction::Lex { .. } => TemplateKind::Lex,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            RankingFunction::Affine { .. } => 1,
            RankingFunction::Multiphase { phases } => phases.len(),
            RankingFunction::Piece { pieces, .. } => pieces.len(),
            RankingFunction::Lex { components } => components.len(),
        }
    }

    pub fn deltas(&self) -> Vec<&Rational> {
        match self {
            RankingFunction::Affine { delta, .. } => vec![delta],
            RankingFunction::Multiphase { phases } => phases.iter().map(|(_, d)| d).collect(),
            RankingFunction::Piece { delta, .. } => vec![delta],
            RankingFunction::Lex { components } => components.iter().map(|(_, d)| d).collect(),
        }
    }
}

/// An element of `omega^k` as a coefficient vector, most significant
/// first; comparison is lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrdinalValue(pub Vec<BigUint>);

impl OrdinalValue {
    pub fn finite(n: BigUint) -> Self {
        OrdinalValue(vec![n])
    }

    pub fn render(&self) -> String {
        let k = self.0.len();
        let mut parts = Vec::new();
        for (i, c) in self.0.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let power = k - 1 - i;
            match power {
                0 => parts.push(format!("{c}")),
                1 => parts.push(format!("w*{c}")),
                _ => parts.push(format!("w^{power}*{c}")),
            }
        }
        if parts.is_empty() {
            "0".into()
        } else {
            parts.join(" + ")
        }
    }
}

/// Strict lexicographic order on coefficient vectors; the shorter vector
/// is padded with leading zeros.
pub fn ordinal_less(a: &OrdinalValue, b: &OrdinalValue) -> bool {
    let k = a.0.len().max(b.0.len());
    let digit = |v: &OrdinalValue, i: usize| -> BigUint {
        let pad = k - v.0.len();
        if i < pad {
            BigUint::zero()
        } else {
            v.0[i - pad].clone()
        }
    };
    for i in 0..k {
        let (da, db) = (digit(a, i), digit(b, i));
        if da != db {
            return da < db;
        }
    }
    false
}

/// Ordinal ranking equivalent: `ceil(f(x) / delta)` when `f(x) > 0`,
/// otherwise 0. Requires a positive step size.
pub fn ordinal_equiv(
    f: &AffineFunction,
    delta: &Rational,
    state: &Valuation,
) -> Result<BigUint, ArgumentError> {
    if !delta.is_positive() {
        return Err(ArgumentError::NonPositiveDelta);
    }
    let v = f.eval(state);
    if !v.is_positive() {
        return Ok(BigUint::zero());
    }
    Ok(ceil_to_nat(&(v / delta)))
}

/// Ordinal rank of a state under a concrete ranking function.
pub fn rank(rf: &RankingFunction, state: &Valuation) -> OrdinalValue {
    match rf {
        RankingFunction::Affine { f, delta } => {
            OrdinalValue::finite(ordinal_equiv(f, delta, state).expect("positive delta"))
        }
        RankingFunction::Multiphase { phases } => {
            let k = phases.len();
            // in phase i when f_i(x) > 0 and f_j(x) <= 0 for all j < i;
            // the rank is w*(k-i) + ceil(f_i(x)/delta_i) for 1-based i
            for (i, (f, delta)) in phases.iter().enumerate() {
                if f.eval(state).is_positive() {
                    let inner = ordinal_equiv(f, delta, state).expect("positive delta");
                    return OrdinalValue(vec![BigUint::from(k - i - 1), inner]);
                }
            }
            OrdinalValue(vec![BigUint::zero(), BigUint::zero()])
        }
        RankingFunction::Piece {
            pieces,
            predicates,
            delta,
        } => {
            // max over the pieces whose predicate admits the state; 0 when
            // no predicate holds (such states never step in the loop)
            let mut best = BigUint::zero();
            for (f, g) in pieces.iter().zip(predicates) {
                if !g.eval(state).is_negative() {
                    let r = ordinal_equiv(f, delta, state).expect("positive delta");
                    if r > best {
                        best = r;
                    }
                }
            }
            OrdinalValue::finite(best)
        }
        RankingFunction::Lex { components } => OrdinalValue(
            components
                .iter()
                .map(|(f, d)| ordinal_equiv(f, d, state).expect("positive delta"))
                .collect(),
        ),
    }
}

/// Full synthesis context carried by an argument so the certificate can
/// be re-checked against a program alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerminationArgument {
    pub template_kind: TemplateKind,
    pub k: usize,
    pub num_invariants: usize,
    pub mode: InvariantMode,
    pub strict_slots: Vec<bool>,
    pub ranking: RankingFunction,
    /// Deduplicated supporting invariants (trivial ones flagged).
    pub invariants: Vec<SupportingInvariant>,
    pub certificate: MotzkinCertificate,
}

/// Reads the ranking function, invariants and Motzkin coefficients out of
/// a solver assignment. Replicated invariant copies are deduplicated by
/// exact coefficient equality for reporting; the certificate keeps the
/// per-copy values.
pub fn extract_argument(
    sys: &ConstraintSystem,
    template_kind: TemplateKind,
    assignment: &Assignment,
    disjuncts: &[Disjunct],
    branch_id: BigUint,
) -> Result<TerminationArgument, ArgumentError> {
    let lookup = |v: Var| -> Result<Rational, ArgumentError> {
        assignment
            .get(&v)
            .cloned()
            .ok_or_else(|| ArgumentError::MissingVariable(sys.var_name(v)))
    };
    let func = |f: usize| -> Result<AffineFunction, ArgumentError> {
        Ok(AffineFunction {
            coeffs: sys.template_vars.func_coeffs[f]
                .iter()
                .map(|v| lookup(*v))
                .collect::<Result<_, _>>()?,
            constant: lookup(sys.template_vars.func_consts[f])?,
        })
    };
    let scalar = |d: usize| lookup(sys.template_vars.scalars[d]);
    let ranking = match template_kind {
        TemplateKind::Affine => RankingFunction::Affine {
            f: func(0)?,
            delta: scalar(0)?,
        },
        TemplateKind::Phase => RankingFunction::Multiphase {
            phases: (0..sys.dims.num_funcs)
                .map(|i| Ok((func(i)?, scalar(i)?)))
                .collect::<Result<_, ArgumentError>>()?,
        },
        TemplateKind::Piece => {
            let k = sys.dims.num_funcs / 2;
            RankingFunction::Piece {
                pieces: (0..k).map(func).collect::<Result<_, _>>()?,
                predicates: (k..2 * k).map(func).collect::<Result<_, _>>()?,
                delta: scalar(0)?,
            }
        }
        TemplateKind::Lex => RankingFunction::Lex {
            components: (0..sys.dims.num_funcs)
                .map(|i| Ok((func(i)?, scalar(i)?)))
                .collect::<Result<_, ArgumentError>>()?,
        },
    };
    let mut copy_values = Vec::with_capacity(sys.copies.len());
    let mut invariants: Vec<SupportingInvariant> = Vec::new();
    for info in &sys.copies {
        let s: Vec<Rational> = info
            .coeff_vars
            .iter()
            .map(|v| lookup(*v))
            .collect::<Result<_, _>>()?;
        let t = lookup(info.const_var)?;
        // displayed form: s.x - t >= 0
        let inv = SupportingInvariant {
            func: AffineFunction {
                coeffs: s.clone(),
                constant: -t.clone(),
            },
            strict: info.strict,
        };
        if !invariants.contains(&inv) {
            invariants.push(inv);
        }
        copy_values.push((s, t));
    }
    let mut multipliers = Vec::with_capacity(sys.subsystems.len());
    for sub in &sys.subsystems {
        let mut m = BTreeMap::new();
        for v in &sub.locals {
            m.insert(*v, lookup(*v)?);
        }
        multipliers.push(m);
    }
    Ok(TerminationArgument {
        template_kind,
        k: ranking.k(),
        num_invariants: sys.dims.num_invariants,
        mode: sys.mode,
        strict_slots: sys.strict_slots.clone(),
        ranking,
        invariants,
        certificate: MotzkinCertificate {
            multipliers,
            disjuncts: disjuncts.to_vec(),
            copy_values,
            branch_id,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid(String),
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid)
    }
}

/// Rebuilds the constraint subsystems for `prog` and checks the
/// certificate in exact arithmetic: multiplier signs, every equation, the
/// bound, and the chosen disjunct per subsystem, plus consistency of the
/// reported ranking function and invariant list with the values used.
pub fn verify_certificate(prog: &LassoProgram, arg: &TerminationArgument) -> Verdict {
    for d in arg.ranking.deltas() {
        if !d.is_positive() {
            return Verdict::Invalid("delta > 0 violated".into());
        }
    }
    if arg.ranking.kind() != arg.template_kind || arg.ranking.k() != arg.k {
        return Verdict::Invalid("ranking function does not match template".into());
    }
    let template = match make_template(arg.template_kind, arg.k) {
        Ok(t) => t,
        Err(e) => return Verdict::Invalid(format!("bad template: {e}")),
    };
    let sys = build_constraints(prog, &template, arg.num_invariants, arg.mode, &arg.strict_slots);
    let cert = &arg.certificate;
    if cert.multipliers.len() != sys.subsystems.len()
        || cert.disjuncts.len() != sys.subsystems.len()
        || cert.copy_values.len() != sys.copies.len()
    {
        return Verdict::Invalid("certificate shape mismatch".into());
    }
    // assemble the valuation: template values from the ranking function,
    // copy values and multipliers from the certificate
    let mut values: BTreeMap<Var, Rational> = BTreeMap::new();
    let funcs: Vec<AffineFunction> = match &arg.ranking {
        RankingFunction::Affine { f, .. } => vec![f.clone()],
        RankingFunction::Multiphase { phases } => phases.iter().map(|(f, _)| f.clone()).collect(),
        RankingFunction::Piece { pieces, predicates, .. } => {
            pieces.iter().chain(predicates).cloned().collect()
        }
        RankingFunction::Lex { components } => components.iter().map(|(f, _)| f.clone()).collect(),
    };
    let scalars: Vec<Rational> = match &arg.ranking {
        RankingFunction::Affine { delta, .. } | RankingFunction::Piece { delta, .. } => {
            vec![delta.clone()]
        }
        RankingFunction::Multiphase { phases } => phases.iter().map(|(_, d)| d.clone()).collect(),
        RankingFunction::Lex { components } => components.iter().map(|(_, d)| d.clone()).collect(),
    };
    if funcs.len() != sys.dims.num_funcs || scalars.len() != sys.dims.num_scalars {
        return Verdict::Invalid("certificate shape mismatch".into());
    }
    for (f, af) in funcs.iter().enumerate() {
        if af.coeffs.len() != prog.n() {
            return Verdict::Invalid("certificate shape mismatch".into());
        }
        for (j, c) in af.coeffs.iter().enumerate() {
            values.insert(sys.template_vars.func_coeffs[f][j], c.clone());
        }
        values.insert(sys.template_vars.func_consts[f], af.constant.clone());
    }
    for (d, v) in scalars.iter().enumerate() {
        values.insert(sys.template_vars.scalars[d], v.clone());
    }
    for (info, (s, t)) in sys.copies.iter().zip(&cert.copy_values) {
        if s.len() != prog.n() {
            return Verdict::Invalid("certificate shape mismatch".into());
        }
        for (j, c) in s.iter().enumerate() {
            values.insert(info.coeff_vars[j], c.clone());
        }
        values.insert(info.const_var, t.clone());
    }
    for (sub, mults) in sys.subsystems.iter().zip(&cert.multipliers) {
        for v in &sub.locals {
            match mults.get(v) {
                Some(val) => {
                    if val.is_negative() {
                        return Verdict::Invalid(format!(
                            "negative Motzkin coefficient {}",
                            sys.var_name(*v)
                        ));
                    }
                    values.insert(*v, val.clone());
                }
                None => {
                    return Verdict::Invalid(format!(
                        "certificate shape mismatch: missing {}",
                        sys.var_name(*v)
                    ))
                }
            }
        }
    }
    // the reported invariants must be exactly the deduplicated copies
    let mut seen: Vec<SupportingInvariant> = Vec::new();
    for (info, (s, t)) in sys.copies.iter().zip(&cert.copy_values) {
        let inv = SupportingInvariant {
            func: AffineFunction {
                coeffs: s.clone(),
                constant: -t.clone(),
            },
            strict: info.strict,
        };
        if !seen.contains(&inv) {
            seen.push(inv);
        }
    }
    if seen != arg.invariants {
        return Verdict::Invalid("invariant list does not match certificate copies".into());
    }
    // exact check of every subsystem under the chosen disjunct
    for (ix, (sub, disjunct)) in sys.subsystems.iter().zip(&cert.disjuncts).enumerate() {
        let describe = || match sub.kind {
            SubsystemKind::Initiation { copy, .. } => {
                format!("invariant initiation (copy {copy})")
            }
            SubsystemKind::Consecution { copy, .. } => {
                format!("invariant consecution (copy {copy})")
            }
            SubsystemKind::TemplateImplication { conjunct, .. } => {
                format!("template implication (conjunct {conjunct})")
            }
        };
        for (expr, rel) in sub.atoms(&BTreeMap::new(), *disjunct) {
            let Some(val) = expr.eval(&values) else {
                return Verdict::Invalid(format!("unvalued expression in subsystem {ix}"));
            };
            let holds = match rel {
                Rel::Eq => val.is_zero(),
                Rel::Le => !val.is_positive(),
                Rel::Lt => val.is_negative(),
                Rel::Gt => val.is_positive(),
            };
            if !holds {
                return Verdict::Invalid(format!(
                    "{} fails: {rel:?} atom is off by {}",
                    describe(),
                    val
                ));
            }
        }
    }
    Verdict::Valid
}

// ---------------------------------------------------------------------------
// Sampled executions

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEnd {
    LoopExit,
    StepCap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub states: Vec<Valuation>,
    pub stem_satisfied: bool,
    pub ended: TraceEnd,
}

const SAMPLE_BOX: i64 = 1_000_000;

fn boxed(p: &Polyhedron) -> Polyhedron {
    let mut q = p.clone();
    for v in p.varspace.clone() {
        q.push(LinAtom::new(
            [(v, Rational::one())],
            Rational::from_integer(SAMPLE_BOX.into()),
            Relation::Le,
        ));
        q.push(LinAtom::new(
            [(v, -Rational::one())],
            Rational::from_integer(SAMPLE_BOX.into()),
            Relation::Le,
        ));
    }
    q
}

/// Samples an execution: the start state comes from a seed-chosen stem
/// disjunct, successors from the loop relation with the current state
/// substituted; coordinates are pushed towards random sides of their
/// bounding-box intervals so different seeds explore different paths.
/// Every step re-checks against the loop relation.
pub fn sample_execution(prog: &LassoProgram, max_steps: usize, seed: u64) -> Trace {
    use rand::RngCore;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = prog.n();
    let mut start = None;
    let offset = (seed as usize) % prog.stem.len().max(1);
    for i in 0..prog.stem.len() {
        let disjunct = &prog.stem[(offset + i) % prog.stem.len()];
        let mut coin = || rng.next_u32() & 1 == 0;
        let mut pick = ValuePick::Randomized(&mut coin);
        if let Feasibility::Sat(v) = fm_feasible_with(&boxed(disjunct), &mut pick) {
            start = Some(v);
            break;
        }
    }
    let Some(start) = start else {
        return Trace {
            states: Vec::new(),
            stem_satisfied: false,
            ended: TraceEnd::LoopExit,
        };
    };
    debug_assert!(prog.stem_contains(&start));
    let mut states = vec![start];
    let mut ended = TraceEnd::StepCap;
    for _ in 0..max_steps {
        let current = states.last().unwrap().clone();
        let mut successor = None;
        let offset = (rng.next_u32() as usize) % prog.loop_.len().max(1);
        for i in 0..prog.loop_.len() {
            let disjunct = &prog.loop_[(offset + i) % prog.loop_.len()];
            // substitute the pre-state, keeping only primed variables
            let mut atoms = Vec::new();
            let mut infeasible = false;
            for atom in disjunct.atoms() {
                let mut coeffs: BTreeMap<Var, Rational> = BTreeMap::new();
                let mut constant = atom.constant.clone();
                for (v, c) in &atom.coeffs {
                    if (v.0 as usize) < n {
                        constant -= c * &current[v];
                    } else {
                        coeffs.insert(*v, c.clone());
                    }
                }
                let substituted = LinAtom::new(coeffs, constant, atom.relation);
                if substituted.ground_truth() == Some(false) {
                    infeasible = true;
                    break;
                }
                atoms.push(substituted);
            }
            if infeasible {
                continue;
            }
            let vars: Vec<Var> = (n..2 * n).map(|i| Var(i as u32)).collect();
            let p = boxed(&Polyhedron::from_atoms(vars, atoms));
            let mut coin = || rng.next_u32() & 1 == 0;
            let mut pick = ValuePick::Randomized(&mut coin);
            if let Feasibility::Sat(v) = fm_feasible_with(&p, &mut pick) {
                let next: Valuation = (0..n)
                    .map(|i| (Var(i as u32), v[&Var((n + i) as u32)].clone()))
                    .collect();
                successor = Some(next);
                break;
            }
        }
        match successor {
            Some(next) => {
                // post-hoc containment check against the loop relation
                if !prog.loop_contains(&current, &next) {
                    debug_assert!(false, "sampled successor escaped the loop relation");
                    ended = TraceEnd::LoopExit;
                    break;
                }
                states.push(next);
            }
            None => {
                ended = TraceEnd::LoopExit;
                break;
            }
        }
    }
    Trace {
        states,
        stem_satisfied: true,
        ended,
    }
}

/// True iff the rank strictly decreases across every consecutive pair of
/// states and every invariant holds at every state.
pub fn check_decrease(
    trace: &Trace,
    rf: &RankingFunction,
    invariants: &[SupportingInvariant],
) -> bool {
    for state in &trace.states {
        if !invariants.iter().all(|inv| inv.holds(state)) {
            return false;
        }
    }
    for pair in trace.states.windows(2) {
        if !ordinal_less(&rank(rf, &pair[1]), &rank(rf, &pair[0])) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{desugar_assignments, normalize, parse_program};
    use crate::rational::{int, rat};

    fn prog(text: &str) -> LassoProgram {
        normalize(&desugar_assignments(&parse_program(text).unwrap()).unwrap()).unwrap()
    }

    fn val(pairs: &[(u32, i64)]) -> Valuation {
        pairs.iter().map(|(v, n)| (Var(*v), int(*n))).collect()
    }

    fn aff(coeffs: &[i64], constant: i64) -> AffineFunction {
        AffineFunction {
            coeffs: coeffs.iter().map(|c| int(*c)).collect(),
            constant: int(constant),
        }
    }

    #[test]
    fn ordinal_equiv_examples() {
        // f = q + 1, delta = 1/2 at q = 2: ceil(3 / (1/2)) = 6
        let f = aff(&[1, 0], 1);
        assert_eq!(
            ordinal_equiv(&f, &rat(1, 2), &val(&[(0, 2), (1, 0)])).unwrap(),
            BigUint::from(6u32)
        );
        assert_eq!(
            ordinal_equiv(&f, &rat(1, 2), &val(&[(0, -5), (1, 0)])).unwrap(),
            BigUint::zero()
        );
        assert_eq!(
            ordinal_equiv(&f, &int(1), &val(&[(0, 0), (1, 0)])).unwrap(),
            BigUint::one()
        );
        assert_eq!(
            ordinal_equiv(&f, &int(0), &val(&[(0, 0), (1, 0)])),
            Err(ArgumentError::NonPositiveDelta)
        );
    }

    #[test]
    fn multiphase_rank_examples() {
        // f1 = 1 - y, f2 = q + 1, step sizes 1
        let rf = RankingFunction::Multiphase {
            phases: vec![(aff(&[0, -1], 1), int(1)), (aff(&[1, 0], 1), int(1))],
        };
        // phase 1 at (q=5, y=0): w*1 + 1
        assert_eq!(
            rank(&rf, &val(&[(0, 5), (1, 0)])),
            OrdinalValue(vec![BigUint::one(), BigUint::one()])
        );
        // phase 2 at (q=5, y=2): 6
        assert_eq!(
            rank(&rf, &val(&[(0, 5), (1, 2)])),
            OrdinalValue(vec![BigUint::zero(), BigUint::from(6u32)])
        );
        // no phase positive at (q=-2, y=3): 0
        assert_eq!(
            rank(&rf, &val(&[(0, -2), (1, 3)])),
            OrdinalValue(vec![BigUint::zero(), BigUint::zero()])
        );
    }

    #[test]
    fn ordinal_less_examples() {
        let fin = |n: u32| OrdinalValue(vec![BigUint::from(n)]);
        // 6 < w + 1
        assert!(ordinal_less(
            &fin(6),
            &OrdinalValue(vec![BigUint::one(), BigUint::one()])
        ));
        // w*1 = w*1
        let w1 = OrdinalValue(vec![BigUint::one(), BigUint::zero()]);
        assert!(!ordinal_less(&w1, &w1));
        // w*5 + 3 < w^2
        assert!(ordinal_less(
            &OrdinalValue(vec![BigUint::from(5u32), BigUint::from(3u32)]),
            &OrdinalValue(vec![BigUint::one(), BigUint::zero(), BigUint::zero()])
        ));
    }

    #[test]
    fn rank_rendering() {
        let v = OrdinalValue(vec![BigUint::from(2u32), BigUint::zero(), BigUint::from(3u32)]);
        assert_eq!(v.render(), "w^2*2 + 3");
        assert_eq!(OrdinalValue(vec![BigUint::zero()]).render(), "0");
    }

    #[test]
    fn paper_trace_of_running_example() {
        // pin the start state via the stem
        let p = prog(
            "vars q, y; stem: q = 2 && y = 1; loop: q >= 0 && assign { q := q - y; y := y + 1; };",
        );
        let trace = sample_execution(&p, 5, 0);
        assert!(trace.stem_satisfied);
        assert_eq!(trace.ended, TraceEnd::LoopExit);
        assert_eq!(trace.states.len(), 3);
        assert_eq!(trace.states[0], val(&[(0, 2), (1, 1)]));
        assert_eq!(trace.states[1], val(&[(0, 1), (1, 2)]));
        assert_eq!(trace.states[2], val(&[(0, -1), (1, 3)]));
        // f = q + 1 with delta = 1/2 decreases: 6 > 4 > 0
        let rf = RankingFunction::Affine {
            f: aff(&[1, 0], 1),
            delta: rat(1, 2),
        };
        let ranks: Vec<BigUint> = trace
            .states
            .iter()
            .map(|s| rank(&rf, s).0[0].clone())
            .collect();
        assert_eq!(
            ranks,
            vec![BigUint::from(6u32), BigUint::from(4u32), BigUint::zero()]
        );
        assert!(check_decrease(&trace, &rf, &[]));
    }

    #[test]
    fn infeasible_stem_empty_trace() {
        let p = prog("vars x; stem: false; loop: x' = x;");
        let trace = sample_execution(&p, 5, 1);
        assert!(!trace.stem_satisfied);
        assert!(trace.states.is_empty());
    }

    #[test]
    fn step_cap_reached() {
        let p = prog("vars x; stem: x = 0; loop: x' = x;");
        let trace = sample_execution(&p, 5, 2);
        assert_eq!(trace.states.len(), 6);
        assert_eq!(trace.ended, TraceEnd::StepCap);
    }

    #[test]
    fn nondeterministic_trace_stays_in_relation() {
        let p = prog(
            "vars q, y; stem: true;\n\
             loop: (q >= 0 && y > 0 && y' = y && q' = q - y - 1)\n\
                || (q >= 0 && y <= 0 && y' = y && q' = q + y - 1);",
        );
        for seed in 0..5 {
            let trace = sample_execution(&p, 10, seed);
            for pair in trace.states.windows(2) {
                assert!(p.loop_contains(&pair[0], &pair[1]));
            }
        }
    }

    #[test]
    fn constant_rank_fails_decrease() {
        let p = prog("vars x; stem: x = 0; loop: x' = x;");
        let trace = sample_execution(&p, 2, 3);
        let rf = RankingFunction::Affine {
            f: aff(&[0], 5),
            delta: int(1),
        };
        assert!(!check_decrease(&trace, &rf, &[]));
        // vacuous on a single-state trace
        let single = Trace {
            states: trace.states[..1].to_vec(),
            stem_satisfied: true,
            ended: TraceEnd::StepCap,
        };
        assert!(check_decrease(&single, &rf, &[]));
    }

    #[test]
    fn invariant_checked_along_trace() {
        let p = prog("vars x; stem: x = 0; loop: x' = x - 1;");
        let trace = sample_execution(&p, 3, 4);
        let rf = RankingFunction::Affine {
            f: aff(&[-1], 0),
            delta: int(1),
        };
        // x >= 0 fails after one step
        let ge = SupportingInvariant {
            func: aff(&[1], 0),
            strict: false,
        };
        assert!(!check_decrease(&trace, &rf, &[ge]));
    }

    #[test]
    fn trivial_invariant_flag() {
        let trivial = SupportingInvariant {
            func: aff(&[0, 0], 0),
            strict: false,
        };
        assert!(trivial.is_trivial());
        let nontrivial = SupportingInvariant {
            func: aff(&[0, 1], -1),
            strict: false,
        };
        assert!(!nontrivial.is_trivial());
    }
}
