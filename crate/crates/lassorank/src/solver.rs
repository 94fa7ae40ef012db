//! Deciding satisfiability of the branched constraint system.
//!
//! Strategies, tried in the configured order:
//!
//! - internal linear solving: depth-first product over the `{0,1}` fixing
//!   branches and the classical/non-classical disjuncts, pruned by exact
//!   projections onto the shared (invariant/template) variables;
//! - candidate enumeration for the residual symbolic multipliers: each
//!   candidate substitution makes its subsystem linear and is fed to the
//!   same engine;
//! - an external SMT solver on an emitted QF_NRA script.
//!
//! The first satisfying branch in lexicographic order is reported; results
//! are deterministic for a fixed input and configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::constraints::{
    lower_atom, ConstraintSystem, Disjunct, QuadExpr, Rel, VarRole,
};
use crate::fm::{fm_eliminate, fm_feasible, Feasibility};
use crate::linear::{LinAtom, Polyhedron, Relation, Var};
use crate::rational::Rational;

pub type Assignment = BTreeMap<Var, Rational>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolverResult {
    Sat {
        assignment: Assignment,
        branch_id: BigUint,
        disjuncts: Vec<Disjunct>,
        /// whether candidate substitution was involved
        chi_used: bool,
    },
    Unsat,
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    Internal,
    Chi,
    Smt(String),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub strategies: Vec<Strategy>,
    pub timeout_secs: u64,
    pub branch_cap: u64,
    pub chi_depth: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategies: vec![Strategy::Internal, Strategy::Chi],
            timeout_secs: 60,
            branch_cap: 1 << 16,
            chi_depth: 1,
        }
    }
}

impl SolverConfig {
    /// Parses a comma-separated strategy list: `internal`, `chi`,
    /// `smt:<command>`.
    pub fn parse_strategies(spec: &str) -> Result<Vec<Strategy>, SolverError> {
        let mut out = Vec::new();
        for part in spec.split(',') {
            let part = part.trim();
            if part == "internal" {
                out.push(Strategy::Internal);
            } else if part == "chi" {
                out.push(Strategy::Chi);
            } else if let Some(cmd) = part.strip_prefix("smt:") {
                out.push(Strategy::Smt(cmd.to_string()));
            } else {
                return Err(SolverError::BadStrategy(part.to_string()));
            }
        }
        if out.is_empty() {
            return Err(SolverError::NoStrategy);
        }
        Ok(out)
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-linear branch routed to linear solver")]
    NonLinearBranch,
    #[error("branch cap exceeded ({0} branches explored)")]
    BranchCapExceeded(u64),
    #[error("unknown solver strategy '{0}'")]
    BadStrategy(String),
    #[error("at least one solver strategy must be enabled")]
    NoStrategy,
    #[error("external solver failed: {0}")]
    External(String),
    #[error("malformed solver model: {0}")]
    MalformedModel(String),
}

// ---------------------------------------------------------------------------
// Linear branch solving

/// Solves a conjunction of linear atoms over solver variables;
/// `nonneg` lists variables carrying a sign constraint. Errors if a
/// bilinear atom slipped through.
pub fn solve_linear_branch(
    atoms: &[(QuadExpr, Rel)],
    nonneg: &[Var],
) -> Result<Feasibility, SolverError> {
    let mut lin: Vec<LinAtom> = Vec::new();
    let mut vars: BTreeSet<Var> = nonneg.iter().copied().collect();
    for (expr, rel) in atoms {
        let lowered = lower_atom(expr, *rel).ok_or(SolverError::NonLinearBranch)?;
        for a in &lowered {
            vars.extend(a.coeffs.keys().copied());
        }
        lin.extend(lowered);
    }
    for v in nonneg {
        lin.push(LinAtom::new(
            [(*v, -Rational::from_integer(1.into()))],
            Rational::zero(),
            Relation::Le,
        ));
    }
    let p = Polyhedron::from_atoms(vars.into_iter().collect(), lin);
    Ok(fm_feasible(&p))
}

// ---------------------------------------------------------------------------
// Candidate sets for residual non-linear multipliers

/// Rational roots of `a x^2 + b x + c`.
fn quadratic_roots(a: &Rational, b: &Rational, c: &Rational) -> Vec<Rational> {
    if a.is_zero() {
        if b.is_zero() {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - Rational::from_integer(4.into()) * a * c;
    if disc.is_negative() {
        return Vec::new();
    }
    let sqrt_exact = |n: &num_bigint::BigInt| -> Option<num_bigint::BigInt> {
        let r = n.sqrt();
        (&r * &r == *n).then_some(r)
    };
    let (Some(np), Some(dp)) = (sqrt_exact(disc.numer()), sqrt_exact(disc.denom())) else {
        return Vec::new();
    };
    let root = Rational::new(np, dp);
    let two_a = Rational::from_integer(2.into()) * a;
    vec![(-b + &root) / &two_a, (-b - &root) / &two_a]
}

/// Candidate values for every residual symbolic Motzkin factor, derived
/// from the coupling rows of the subsystem that owns it: always `{0, 1}`,
/// at depth >= 1 the ratios `-a_j / a_{n+j}` of pre/post coefficients of
/// each constant row, and at depth >= 2 the rational roots of the
/// pairwise row-combination polynomials of one projection step.
pub fn chi_candidates(sys: &ConstraintSystem, depth: u32) -> BTreeMap<Var, Vec<Rational>> {
    let n = sys.dims.n;
    let mut out = BTreeMap::new();
    for sub in &sys.subsystems {
        let factors = residual_factors(sub);
        if factors.is_empty() {
            continue;
        }
        let mut cands: Vec<Rational> = Vec::new();
        if depth >= 1 && sub.eqs.len() == 2 * n {
            // constant-coefficient rows belong to the lambda/mu multipliers
            let row_vars: Vec<Var> = sub
                .locals
                .iter()
                .copied()
                .filter(|v| {
                    matches!(
                        sys.vars[v.0 as usize].role,
                        VarRole::Lambda { .. } | VarRole::Mu { .. }
                    )
                })
                .collect();
            let coeff = |w: Var, j: usize| -> Rational {
                sub.eqs[j]
                    .linear
                    .get(&w)
                    .cloned()
                    .unwrap_or_else(Rational::zero)
            };
            for w in &row_vars {
                for j in 0..n {
                    let pre = coeff(*w, j);
                    let post = coeff(*w, n + j);
                    if !post.is_zero() {
                        cands.push(-pre / post);
                    }
                }
            }
            if depth >= 2 {
                // one projection step: eliminate a pivot multiplier from a
                // pair of columns; roots of the quadratic combination
                // polynomials p(x) = pre + post*x are further candidates
                for j1 in 0..n {
                    for j2 in (j1 + 1)..n {
                        for (ki, k) in row_vars.iter().enumerate() {
                            for i in row_vars.iter().skip(ki + 1) {
                                let (a1, b1) = (coeff(*k, n + j2), coeff(*k, j2));
                                let (a2, b2) = (coeff(*i, n + j1), coeff(*i, j1));
                                let (a3, b3) = (coeff(*k, n + j1), coeff(*k, j1));
                                let (a4, b4) = (coeff(*i, n + j2), coeff(*i, j2));
                                let qa = &a1 * &a2 - &a3 * &a4;
                                let qb = &a1 * &b2 + &b1 * &a2 - (&a3 * &b4 + &b3 * &a4);
                                let qc = &b1 * &b2 - &b3 * &b4;
                                cands.extend(quadratic_roots(&qa, &qb, &qc));
                            }
                        }
                    }
                }
            }
        }
        cands.retain(|c| !c.is_negative());
        let mut ordered: Vec<Rational> =
            vec![Rational::zero(), Rational::from_integer(1.into())];
        let mut rest: Vec<Rational> = cands
            .into_iter()
            .filter(|c| !ordered.contains(c))
            .collect();
        rest.sort();
        rest.dedup();
        rest.truncate(30);
        ordered.extend(rest);
        for f in factors {
            out.insert(f, ordered.clone());
        }
    }
    out
}

/// Symbolic bilinear factors of a subsystem not covered by a fixing.
fn residual_factors(sub: &crate::constraints::Subsystem) -> Vec<Var> {
    let fixed: BTreeSet<Var> = sub.fixings.iter().map(|f| f.var).collect();
    let mut out: BTreeSet<Var> = BTreeSet::new();
    for expr in sub.exprs() {
        for (factor, _) in expr.bilinear.keys() {
            if !fixed.contains(factor) {
                out.insert(*factor);
            }
        }
    }
    out.into_iter().collect()
}

// ---------------------------------------------------------------------------
// The branch-enumeration engine

#[derive(Clone)]
struct Choice {
    fixing_index: usize,
    values: BTreeMap<Var, Rational>,
    disjunct: Disjunct,
    uses_chi: bool,
}

struct Engine<'a> {
    sys: &'a ConstraintSystem,
    cfg: &'a SolverConfig,
    choices: Vec<Vec<Choice>>,
    fixing_radix: Vec<BigUint>,
    /// Processing order: each template implication directly preceded by
    /// the initiations and consecutions of the invariant copies it uses,
    /// so a failing implication backtracks into its own premises instead
    /// of thrashing through unrelated subsystems.
    order: Vec<usize>,
    /// last processing position that mentions a shared variable
    last_use: BTreeMap<Var, usize>,
    projections: Vec<Vec<Option<Option<Vec<LinAtom>>>>>,
    leaves: u64,
    nodes: u64,
    chi_used: bool,
}

fn processing_order(sys: &ConstraintSystem) -> Vec<usize> {
    use crate::constraints::SubsystemKind;
    let mut order = Vec::with_capacity(sys.subsystems.len());
    let mut placed = vec![false; sys.subsystems.len()];
    let by_copy = |copy: usize| {
        sys.subsystems.iter().enumerate().filter(move |(_, s)| {
            matches!(s.kind,
                SubsystemKind::Initiation { copy: c, .. }
                | SubsystemKind::Consecution { copy: c, .. } if c == copy)
        })
    };
    for (ti_ix, sub) in sys.subsystems.iter().enumerate() {
        let SubsystemKind::TemplateImplication { conjunct, loop_disjunct } = sub.kind else {
            continue;
        };
        for (c, info) in sys.copies.iter().enumerate() {
            if info.conjunct == conjunct && info.loop_disjunct == loop_disjunct {
                for (ix, _) in by_copy(c) {
                    if !placed[ix] {
                        placed[ix] = true;
                        order.push(ix);
                    }
                }
            }
        }
        placed[ti_ix] = true;
        order.push(ti_ix);
    }
    // anything left over (no invariants: plain initiations/consecutions)
    for ix in 0..sys.subsystems.len() {
        if !placed[ix] {
            order.push(ix);
        }
    }
    order
}

fn decode_fixing(sub: &crate::constraints::Subsystem, index: usize) -> BTreeMap<Var, Rational> {
    let mut out = BTreeMap::new();
    let mut ix = index;
    for fix in sub.fixings.iter().rev() {
        let m = fix.values.len();
        out.insert(fix.var, fix.values[ix % m].clone());
        ix /= m;
    }
    out
}

fn fixing_count(sub: &crate::constraints::Subsystem) -> usize {
    sub.fixings.iter().map(|f| f.values.len()).product()
}

impl<'a> Engine<'a> {
    fn new(
        sys: &'a ConstraintSystem,
        cfg: &'a SolverConfig,
        chi: Option<&BTreeMap<Var, Vec<Rational>>>,
    ) -> Result<Self, String> {
        let mut choices = Vec::with_capacity(sys.subsystems.len());
        for sub in &sys.subsystems {
            let factors = residual_factors(sub);
            let mut subchoices = Vec::new();
            for fc in 0..fixing_count(sub) {
                let base = decode_fixing(sub, fc);
                for disjunct in [Disjunct::Classical, Disjunct::NonClassical] {
                    if factors.is_empty() {
                        subchoices.push(Choice {
                            fixing_index: fc,
                            values: base.clone(),
                            disjunct,
                            uses_chi: false,
                        });
                        continue;
                    }
                    let Some(chi) = chi else {
                        return Err(format!(
                            "non-linear branch skipped (symbolic multiplier {})",
                            sys.var_name(factors[0])
                        ));
                    };
                    // product over candidate tuples, lexicographic
                    let lists: Vec<&Vec<Rational>> = factors.iter().map(|f| &chi[f]).collect();
                    let mut tuple = vec![0usize; factors.len()];
                    'tuples: loop {
                        let mut values = base.clone();
                        for (i, f) in factors.iter().enumerate() {
                            values.insert(*f, lists[i][tuple[i]].clone());
                        }
                        subchoices.push(Choice {
                            fixing_index: fc,
                            values,
                            disjunct,
                            uses_chi: true,
                        });
                        let mut pos = factors.len();
                        while pos > 0 {
                            pos -= 1;
                            tuple[pos] += 1;
                            if tuple[pos] < lists[pos].len() {
                                continue 'tuples;
                            }
                            tuple[pos] = 0;
                        }
                        break;
                    }
                }
            }
            choices.push(subchoices);
        }
        // mixed-radix weights for branch ids over the fixing tree
        let mut fixing_radix = vec![BigUint::from(1u32); sys.subsystems.len()];
        let mut acc = BigUint::from(1u32);
        for (i, sub) in sys.subsystems.iter().enumerate().rev() {
            fixing_radix[i] = acc.clone();
            acc *= BigUint::from(fixing_count(sub));
        }
        let order = processing_order(sys);
        // last processing position that mentions each shared variable
        let mut last_use: BTreeMap<Var, usize> = BTreeMap::new();
        for (pos, &ix) in order.iter().enumerate() {
            let sub = &sys.subsystems[ix];
            let locals: BTreeSet<Var> = sub.locals.iter().copied().collect();
            for expr in sub.exprs() {
                for v in expr.vars() {
                    if !locals.contains(&v) {
                        last_use.insert(v, pos);
                    }
                }
            }
        }
        let projections = choices.iter().map(|c| vec![None; c.len()]).collect();
        Ok(Engine {
            sys,
            cfg,
            choices,
            fixing_radix,
            order,
            last_use,
            projections,
            leaves: 0,
            nodes: 0,
            chi_used: false,
        })
    }

    /// Exact projection of one subsystem choice onto the shared variables;
    /// `None` means the choice is infeasible on its own. Exactness holds
    /// because multiplier variables are disjoint across subsystems.
    fn projection(
        &mut self,
        sub_ix: usize,
        choice_ix: usize,
    ) -> Result<Option<Vec<LinAtom>>, SolverError> {
        if let Some(p) = &self.projections[sub_ix][choice_ix] {
            return Ok(p.clone());
        }
        let sub = &self.sys.subsystems[sub_ix];
        let choice = &self.choices[sub_ix][choice_ix];
        let mut atoms: Vec<LinAtom> = Vec::new();
        for (expr, rel) in sub.atoms(&choice.values, choice.disjunct) {
            match lower_atom(&expr, rel) {
                Some(lowered) => atoms.extend(lowered),
                None => return Err(SolverError::NonLinearBranch),
            }
        }
        let mut to_eliminate: BTreeSet<Var> = BTreeSet::new();
        for v in &sub.locals {
            if choice.values.contains_key(v) {
                continue;
            }
            atoms.push(LinAtom::new(
                [(*v, -Rational::from_integer(1.into()))],
                Rational::zero(),
                Relation::Le,
            ));
            to_eliminate.insert(*v);
        }
        // project the multipliers away cheapest-first, stopping when an
        // elimination stage grows past the budget; leftover multipliers
        // are unique to this subsystem, so keeping them stays exact
        let result = (|| {
            let mut atoms = crate::fm::simplify_atoms(atoms)?;
            loop {
                if atoms.len() > 200 {
                    return Some(atoms);
                }
                let mut best: Option<(i64, Var)> = None;
                for v in &to_eliminate {
                    let mut pos = 0i64;
                    let mut neg = 0i64;
                    for a in &atoms {
                        match a.coeffs.get(v) {
                            Some(c) if c.is_positive() => pos += 1,
                            Some(_) => neg += 1,
                            None => {}
                        }
                    }
                    let score = pos * neg - (pos + neg);
                    if best.as_ref().is_none_or(|(s, _)| score < *s) {
                        best = Some((score, *v));
                    }
                }
                let Some((_, v)) = best else {
                    return Some(atoms);
                };
                to_eliminate.remove(&v);
                atoms = crate::fm::simplify_atoms(crate::fm::eliminate_atoms(&atoms, v))?;
            }
        })();
        self.projections[sub_ix][choice_ix] = Some(result.clone());
        Ok(result)
    }

    /// Feasibility of the accumulated shared system restricted to the
    /// atoms transitively sharing variables with the fresh ones. Blocks
    /// are variable-disjoint, so per-block feasibility is global
    /// feasibility. A projection touching no accumulated variable is
    /// feasible on its own by construction and needs no check.
    fn block_feasible(acc: &[LinAtom], fresh: &[LinAtom]) -> bool {
        let mut vars: BTreeSet<Var> =
            fresh.iter().flat_map(|a| a.coeffs.keys().copied()).collect();
        let mut block: Vec<LinAtom> = fresh.to_vec();
        let mut used = vec![false; acc.len()];
        loop {
            let mut grew = false;
            for (i, a) in acc.iter().enumerate() {
                if used[i] {
                    continue;
                }
                if a.coeffs.keys().any(|v| vars.contains(v)) {
                    used[i] = true;
                    grew = true;
                    vars.extend(a.coeffs.keys().copied());
                    block.push(a.clone());
                }
            }
            if !grew {
                break;
            }
        }
        if block.len() == fresh.len() {
            return true;
        }
        let p = Polyhedron::from_atoms(vars.into_iter().collect(), block);
        // pruning is optional: a blown budget counts as feasible
        match crate::fm::fm_feasible_bounded(&p, 600) {
            Some(f) => f.is_sat(),
            None => true,
        }
    }

    /// Projects away shared variables that no later subsystem mentions,
    /// but only while each single elimination does not grow the atom
    /// count; dead variables whose elimination would blow up are simply
    /// kept (they only bloat the accumulator, never change feasibility).
    fn eliminate_dead(&self, acc: Vec<LinAtom>, level: usize) -> Option<Vec<LinAtom>> {
        let mut acc = crate::fm::simplify_atoms(acc)?;
        loop {
            let mut counts: BTreeMap<Var, (usize, usize)> = BTreeMap::new();
            for a in &acc {
                for (v, c) in &a.coeffs {
                    let e = counts.entry(*v).or_insert((0, 0));
                    if c.is_positive() {
                        e.0 += 1;
                    } else {
                        e.1 += 1;
                    }
                }
            }
            let victim = counts.iter().find(|(v, (pos, neg))| {
                self.last_use.get(v).is_none_or(|l| *l <= level) && pos * neg <= pos + neg
            });
            let Some((&v, _)) = victim else {
                return Some(acc);
            };
            acc = crate::fm::simplify_atoms(crate::fm::eliminate_atoms(&acc, v))?;
        }
    }

    fn search(&mut self) -> Result<Option<(Vec<usize>, Assignment)>, SolverError> {
        let mut chosen = Vec::new();
        self.dfs(0, Vec::new(), &mut chosen)
    }

    fn dfs(
        &mut self,
        level: usize,
        acc: Vec<LinAtom>,
        chosen: &mut Vec<usize>,
    ) -> Result<Option<(Vec<usize>, Assignment)>, SolverError> {
        if level == self.sys.subsystems.len() {
            self.leaves += 1;
            if self.leaves > self.cfg.branch_cap {
                return Err(SolverError::BranchCapExceeded(self.leaves));
            }
            return Ok(self.solve_leaf(chosen)?.map(|a| (chosen.clone(), a)));
        }
        let sub_ix = self.order[level];
        for choice_ix in 0..self.choices[sub_ix].len() {
            self.nodes += 1;
            if self.nodes > self.cfg.branch_cap.saturating_mul(64) {
                return Err(SolverError::BranchCapExceeded(self.nodes));
            }
            if std::env::var_os("LASSORANK_TRACE").is_some() {
                eprintln!("node={} level={} sub={} choice={} acc={}", self.nodes, level, sub_ix, choice_ix, acc.len());
            }
            let Some(proj) = self.projection(sub_ix, choice_ix)? else {
                continue;
            };
            if !Self::block_feasible(&acc, &proj) {
                continue;
            }
            let mut next = acc.clone();
            next.extend(proj);
            let Some(next) = self.eliminate_dead(next, level) else {
                continue;
            };
            if self.choices[sub_ix][choice_ix].uses_chi {
                self.chi_used = true;
            }
            chosen.push(choice_ix);
            let found = self.dfs(level + 1, next, chosen)?;
            if found.is_some() {
                return Ok(found);
            }
            chosen.pop();
        }
        Ok(None)
    }

    /// Re-solves the chosen branch on the original atoms to obtain a
    /// witness for every variable, including the per-subsystem
    /// multipliers.
    fn solve_leaf(&mut self, chosen: &[usize]) -> Result<Option<Assignment>, SolverError> {
        let mut atoms: Vec<(QuadExpr, Rel)> = Vec::new();
        let mut nonneg: Vec<Var> = Vec::new();
        let mut substituted: Assignment = Assignment::new();
        for (level, &choice_ix) in chosen.iter().enumerate() {
            let sub_ix = self.order[level];
            let sub = &self.sys.subsystems[sub_ix];
            let choice = &self.choices[sub_ix][choice_ix];
            atoms.extend(sub.atoms(&choice.values, choice.disjunct));
            substituted.extend(choice.values.clone());
            for v in &sub.locals {
                if !choice.values.contains_key(v) {
                    nonneg.push(*v);
                }
            }
        }
        match solve_linear_branch(&atoms, &nonneg)? {
            Feasibility::Sat(mut witness) => {
                witness.extend(substituted);
                // default any untouched variable to zero
                for sv in &self.sys.vars {
                    witness.entry(sv.var).or_insert_with(Rational::zero);
                }
                Ok(Some(witness))
            }
            Feasibility::Unsat => Ok(None),
        }
    }

    fn branch_id(&self, chosen: &[usize]) -> BigUint {
        let mut id = BigUint::zero();
        for (level, &choice_ix) in chosen.iter().enumerate() {
            let sub_ix = self.order[level];
            let fc = self.choices[sub_ix][choice_ix].fixing_index;
            id += BigUint::from(fc) * &self.fixing_radix[sub_ix];
        }
        id
    }
}

fn run_engine(
    sys: &ConstraintSystem,
    cfg: &SolverConfig,
    chi: Option<&BTreeMap<Var, Vec<Rational>>>,
) -> Result<SolverResult, SolverError> {
    let mut engine = match Engine::new(sys, cfg, chi) {
        Ok(e) => e,
        Err(reason) => return Ok(SolverResult::Unknown(reason)),
    };
    match engine.search()? {
        Some((chosen, assignment)) => {
            // report disjunct choices in canonical subsystem order
            let mut disjuncts = vec![Disjunct::Classical; sys.subsystems.len()];
            for (level, &c) in chosen.iter().enumerate() {
                let sub_ix = engine.order[level];
                disjuncts[sub_ix] = engine.choices[sub_ix][c].disjunct;
            }
            Ok(SolverResult::Sat {
                branch_id: engine.branch_id(&chosen),
                assignment,
                disjuncts,
                chi_used: engine.chi_used,
            })
        }
        None => {
            if engine.chi_used {
                // candidate sets are incomplete: exhausting them proves nothing
                Ok(SolverResult::Unknown(
                    "candidate enumeration exhausted without a solution".into(),
                ))
            } else {
                Ok(SolverResult::Unsat)
            }
        }
    }
}

/// Depth-first enumeration of the fixing branches with internal linear
/// solving only. Branches containing symbolic bilinear multipliers are
/// not explored; if any exist the result is `Unknown`, never `Unsat`.
pub fn enumerate_and_solve(
    sys: &ConstraintSystem,
    cfg: &SolverConfig,
) -> Result<SolverResult, SolverError> {
    run_engine(sys, cfg, None)
}

/// Enumeration with candidate substitution for the residual symbolic
/// multipliers. Exhaustion yields `Unknown` whenever a candidate was
/// actually used, because candidate sets are incomplete.
pub fn chi_enumerate_solve(
    sys: &ConstraintSystem,
    cfg: &SolverConfig,
) -> Result<SolverResult, SolverError> {
    let cands = chi_candidates(sys, cfg.chi_depth);
    run_engine(sys, cfg, Some(&cands))
}

/// Runs the configured strategy cascade.
pub fn solve_system(
    sys: &ConstraintSystem,
    cfg: &SolverConfig,
) -> Result<SolverResult, SolverError> {
    if cfg.strategies.is_empty() {
        return Err(SolverError::NoStrategy);
    }
    let mut last_unknown = String::from("no strategy produced a result");
    for strat in &cfg.strategies {
        let res = match strat {
            Strategy::Internal => enumerate_and_solve(sys, cfg)?,
            Strategy::Chi => chi_enumerate_solve(sys, cfg)?,
            Strategy::Smt(cmd) => solve_external(sys, cfg, cmd)?,
        };
        match res {
            SolverResult::Unknown(reason) => last_unknown = reason,
            decided => return Ok(decided),
        }
    }
    Ok(SolverResult::Unknown(last_unknown))
}

// ---------------------------------------------------------------------------
// SMT-LIB emission and model parsing

fn smt_rational(r: &Rational) -> String {
    let render = |r: &Rational| {
        if r.denom() == &num_bigint::BigInt::from(1) {
            format!("{}", r.numer())
        } else {
            format!("(/ {} {})", r.numer(), r.denom())
        }
    };
    if r.is_negative() {
        format!("(- {})", render(&-r))
    } else {
        render(r)
    }
}

fn smt_expr(expr: &QuadExpr, sys: &ConstraintSystem) -> String {
    let one = Rational::from_integer(1.into());
    let mut terms = Vec::new();
    if !expr.constant.is_zero() {
        terms.push(smt_rational(&expr.constant));
    }
    for (v, c) in &expr.linear {
        let name = sys.var_name(*v);
        if c == &one {
            terms.push(name);
        } else {
            terms.push(format!("(* {} {})", smt_rational(c), name));
        }
    }
    for ((a, b), c) in &expr.bilinear {
        let prod = format!("(* {} {})", sys.var_name(*a), sys.var_name(*b));
        if c == &one {
            terms.push(prod);
        } else {
            terms.push(format!("(* {} {})", smt_rational(c), prod));
        }
    }
    match terms.len() {
        0 => "0".to_string(),
        1 => terms.pop().unwrap(),
        _ => format!("(+ {})", terms.join(" ")),
    }
}

fn smt_atom(expr: &QuadExpr, rel: Rel, sys: &ConstraintSystem) -> String {
    let op = match rel {
        Rel::Eq => "=",
        Rel::Le => "<=",
        Rel::Lt => "<",
        Rel::Gt => ">",
    };
    format!("({op} {} 0)", smt_expr(expr, sys))
}

/// Emits the branched system as an SMT-LIB 2 script over the reals.
/// Fixing branches are expanded into disjunctions with the fixed values
/// substituted, so fixed multipliers never appear inside products.
pub fn emit_smtlib(sys: &ConstraintSystem) -> String {
    let mut out = String::new();
    out.push_str("(set-logic QF_NRA)\n");
    for sv in &sys.vars {
        out.push_str(&format!("(declare-fun {} () Real)\n", sv.role.name()));
    }
    for sv in &sys.vars {
        if sv.nonneg {
            out.push_str(&format!("(assert (>= {} 0))\n", sv.role.name()));
        }
    }
    for sub in &sys.subsystems {
        let branch = |values: &BTreeMap<Var, Rational>| -> String {
            let mut parts: Vec<String> = values
                .iter()
                .map(|(v, val)| format!("(= {} {})", sys.var_name(*v), smt_rational(val)))
                .collect();
            for eq in &sub.eqs {
                parts.push(smt_atom(&eq.substitute(values), Rel::Eq, sys));
            }
            parts.push(smt_atom(&sub.bound.substitute(values), Rel::Le, sys));
            parts.push(format!(
                "(or {} {})",
                smt_atom(&sub.classical.substitute(values), Rel::Lt, sys),
                smt_atom(&sub.nonclassical.substitute(values), Rel::Gt, sys)
            ));
            format!("(and {})", parts.join(" "))
        };
        if sub.fixings.is_empty() {
            out.push_str(&format!("(assert {})\n", branch(&BTreeMap::new())));
        } else {
            let branches: Vec<String> = (0..fixing_count(sub))
                .map(|fc| branch(&decode_fixing(sub, fc)))
                .collect();
            if branches.len() == 1 {
                out.push_str(&format!("(assert {})\n", branches[0]));
            } else {
                out.push_str(&format!("(assert (or {}))\n", branches.join(" ")));
            }
        }
    }
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn parse_sexps(text: &str) -> Result<Vec<Sexp>, SolverError> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    let mut atom = String::new();
    fn flush(stack: &mut [Vec<Sexp>], atom: &mut String) {
        if !atom.is_empty() {
            stack.last_mut().unwrap().push(Sexp::Atom(std::mem::take(atom)));
        }
    }
    for ch in text.chars() {
        match ch {
            '(' => {
                flush(&mut stack, &mut atom);
                stack.push(Vec::new());
            }
            ')' => {
                flush(&mut stack, &mut atom);
                let done = stack
                    .pop()
                    .ok_or_else(|| SolverError::MalformedModel("unbalanced ')'".into()))?;
                stack
                    .last_mut()
                    .ok_or_else(|| SolverError::MalformedModel("unbalanced ')'".into()))?
                    .push(Sexp::List(done));
            }
            c if c.is_whitespace() => flush(&mut stack, &mut atom),
            c => atom.push(c),
        }
    }
    flush(&mut stack, &mut atom);
    if stack.len() != 1 {
        return Err(SolverError::MalformedModel("unbalanced '('".into()));
    }
    Ok(stack.pop().unwrap())
}

fn sexp_rational(s: &Sexp) -> Result<Option<Rational>, SolverError> {
    match s {
        Sexp::Atom(a) => {
            if let Some(r) = crate::rational::parse_rational(a) {
                return Ok(Some(r));
            }
            // exact decimal literal, e.g. 2.5
            if let Some((int_part, frac)) = a.split_once('.') {
                let joined = format!("{int_part}{frac}");
                if let (Ok(n), false) = (joined.parse::<num_bigint::BigInt>(), frac.is_empty()) {
                    let denom = num_bigint::BigInt::from(10u32).pow(frac.len() as u32);
                    return Ok(Some(Rational::new(n, denom)));
                }
            }
            Ok(None)
        }
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), a] if op == "-" => Ok(sexp_rational(a)?.map(|r| -r)),
            [Sexp::Atom(op), a, b] if op == "/" => match (sexp_rational(a)?, sexp_rational(b)?) {
                (Some(x), Some(y)) if !y.is_zero() => Ok(Some(x / y)),
                _ => Ok(None),
            },
            _ => Ok(None),
        },
    }
}

/// Outcome of reading back a `(get-model)` answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelOutcome {
    Model(Assignment),
    Unknown(String),
}

/// Parses an SMT-LIB model, resolving each declared variable to an exact
/// rational. Root objects or other non-rational values yield `Unknown`;
/// a missing variable is an error.
pub fn parse_smt_model(text: &str, sys: &ConstraintSystem) -> Result<ModelOutcome, SolverError> {
    let sexps = parse_sexps(text)?;
    let mut values: BTreeMap<String, Rational> = BTreeMap::new();
    fn walk(
        s: &Sexp,
        values: &mut BTreeMap<String, Rational>,
    ) -> Result<Option<String>, SolverError> {
        if let Sexp::List(items) = s {
            if let [Sexp::Atom(head), Sexp::Atom(name), Sexp::List(args), _sort, value] =
                items.as_slice()
            {
                if head == "define-fun" && args.is_empty() {
                    match sexp_rational(value)? {
                        Some(r) => {
                            values.insert(name.clone(), r);
                        }
                        None => return Ok(Some("irrational model value".into())),
                    }
                    return Ok(None);
                }
            }
            for item in items {
                if let Some(reason) = walk(item, values)? {
                    return Ok(Some(reason));
                }
            }
        }
        Ok(None)
    }
    for s in &sexps {
        if let Some(reason) = walk(s, &mut values)? {
            return Ok(ModelOutcome::Unknown(reason));
        }
    }
    let mut assignment = Assignment::new();
    for sv in &sys.vars {
        let name = sv.role.name();
        match values.get(&name) {
            Some(r) => {
                assignment.insert(sv.var, r.clone());
            }
            None => {
                return Err(SolverError::MalformedModel(format!(
                    "missing required variable {name}"
                )))
            }
        }
    }
    Ok(ModelOutcome::Model(assignment))
}

// ---------------------------------------------------------------------------
// External solver

/// Runs `command <script-file>`, expecting `sat`/`unsat`/`unknown` on the
/// first output line, optionally followed by a model. The process is
/// killed after the timeout and the result treated as unknown.
pub fn run_external_solver(
    command: &str,
    script: &str,
    timeout_secs: u64,
) -> Result<(String, String), SolverError> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| SolverError::External("empty solver command".into()))?;
    let args: Vec<&str> = parts.collect();
    let path = std::env::temp_dir().join(format!(
        "lassorank-{}-{}.smt2",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    {
        let mut f = std::fs::File::create(&path)
            .map_err(|e| SolverError::External(format!("cannot write script: {e}")))?;
        f.write_all(script.as_bytes())
            .map_err(|e| SolverError::External(format!("cannot write script: {e}")))?;
    }
    let spawned = std::process::Command::new(program)
        .args(&args)
        .arg(&path)
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::null())
        .spawn();
    let mut child = match spawned {
        Ok(c) => c,
        Err(e) => {
            let _ = std::fs::remove_file(&path);
            return Err(SolverError::External(format!("cannot spawn '{program}': {e}")));
        }
    };
    let deadline = Instant::now() + Duration::from_secs(timeout_secs.max(1));
    let finished = loop {
        match child.try_wait() {
            Ok(Some(_)) => break true,
            Ok(None) => {
                if Instant::now() > deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    break false;
                }
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => {
                let _ = std::fs::remove_file(&path);
                return Err(SolverError::External(format!("wait failed: {e}")));
            }
        }
    };
    let output = if finished {
        let mut out = String::new();
        use std::io::Read;
        if let Some(mut stdout) = child.stdout.take() {
            let _ = stdout.read_to_string(&mut out);
        }
        out
    } else {
        String::new()
    };
    let _ = std::fs::remove_file(&path);
    if !finished {
        return Ok(("unknown".into(), String::new()));
    }
    let mut lines = output.lines();
    let status_line = lines
        .find(|l| !l.trim().is_empty())
        .unwrap_or("unknown")
        .trim()
        .to_string();
    let rest: String = lines.collect::<Vec<_>>().join("\n");
    Ok((status_line, rest))
}

fn solve_external(
    sys: &ConstraintSystem,
    cfg: &SolverConfig,
    command: &str,
) -> Result<SolverResult, SolverError> {
    let script = emit_smtlib(sys);
    let (status, rest) = run_external_solver(command, &script, cfg.timeout_secs)?;
    match status.as_str() {
        "unsat" => Ok(SolverResult::Unsat),
        "sat" => {
            let assignment = match parse_smt_model(&rest, sys)? {
                ModelOutcome::Model(a) => a,
                ModelOutcome::Unknown(reason) => return Ok(SolverResult::Unknown(reason)),
            };
            // recover branch index and disjunct choices from the model
            let mut weights = vec![BigUint::from(1u32); sys.subsystems.len()];
            let mut acc = BigUint::from(1u32);
            for (i, sub) in sys.subsystems.iter().enumerate().rev() {
                weights[i] = acc.clone();
                acc *= BigUint::from(fixing_count(sub));
            }
            let mut branch_id = BigUint::zero();
            let mut disjuncts = Vec::with_capacity(sys.subsystems.len());
            for (i, sub) in sys.subsystems.iter().enumerate() {
                let mut fc = 0usize;
                for fix in &sub.fixings {
                    let val = &assignment[&fix.var];
                    let pos = fix.values.iter().position(|v| v == val).unwrap_or(0);
                    fc = fc * fix.values.len() + pos;
                }
                branch_id += BigUint::from(fc) * &weights[i];
                let classical_holds = sub
                    .classical
                    .eval(&assignment)
                    .map(|v| v.is_negative())
                    .unwrap_or(false);
                disjuncts.push(if classical_holds {
                    Disjunct::Classical
                } else {
                    Disjunct::NonClassical
                });
            }
            Ok(SolverResult::Sat {
                assignment,
                branch_id,
                disjuncts,
                chi_used: false,
            })
        }
        _ => Ok(SolverResult::Unknown(format!(
            "external solver returned '{status}'"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_constraints, omit_quantifiers, InvariantMode};
    use crate::parse::{desugar_assignments, normalize, parse_program};
    use crate::rational::{int, rat};
    use crate::templates::{canonical_coloring, make_template, TemplateKind};

    fn prog(text: &str) -> crate::parse::LassoProgram {
        normalize(&desugar_assignments(&parse_program(text).unwrap()).unwrap()).unwrap()
    }

    fn omitted(
        text: &str,
        kind: TemplateKind,
        k: usize,
        inv: usize,
        mode: InvariantMode,
    ) -> ConstraintSystem {
        let p = prog(text);
        let t = make_template(kind, k).unwrap();
        let eta = canonical_coloring(&t);
        let sys = build_constraints(&p, &t, inv, mode, &[]);
        omit_quantifiers(&sys, &t, &eta).unwrap()
    }

    const P_Y_GE_1: &str =
        "vars q, y; stem: y = 1; loop: q >= 0 && assign { q := q - y; y := y + 1; };";
    const P_2PHASE: &str =
        "vars q, y; stem: true; loop: q >= 0 && assign { q := q - y; y := y + 1; };";

    #[test]
    fn running_example_sat_with_invariant() {
        let sys = omitted(P_Y_GE_1, TemplateKind::Affine, 1, 1, InvariantMode::NonDecreasing);
        let cfg = SolverConfig::default();
        match enumerate_and_solve(&sys, &cfg).unwrap() {
            SolverResult::Sat { assignment, .. } => {
                let delta = &assignment[&sys.template_vars.scalars[0]];
                assert!(delta > &int(0));
            }
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn running_example_unsat_without_invariants() {
        let sys = omitted(P_Y_GE_1, TemplateKind::Affine, 1, 0, InvariantMode::NonDecreasing);
        let cfg = SolverConfig::default();
        assert_eq!(enumerate_and_solve(&sys, &cfg).unwrap(), SolverResult::Unsat);
    }

    #[test]
    fn two_phase_affine_unsat() {
        let sys = omitted(P_2PHASE, TemplateKind::Affine, 1, 0, InvariantMode::NonDecreasing);
        let cfg = SolverConfig::default();
        assert_eq!(enumerate_and_solve(&sys, &cfg).unwrap(), SolverResult::Unsat);
    }

    #[test]
    fn two_phase_template_sat_via_candidates() {
        let sys = omitted(P_2PHASE, TemplateKind::Phase, 2, 0, InvariantMode::NonDecreasing);
        let cfg = SolverConfig::default();
        // the internal pass must skip the symbolic multiplier
        match enumerate_and_solve(&sys, &cfg).unwrap() {
            SolverResult::Unknown(_) => {}
            other => panic!("expected unknown from internal pass, got {other:?}"),
        }
        match chi_enumerate_solve(&sys, &cfg).unwrap() {
            SolverResult::Sat { chi_used, .. } => assert!(chi_used),
            other => panic!("expected sat, got {other:?}"),
        }
    }

    #[test]
    fn candidates_contain_half_for_halving_loop() {
        // y' = (y + 1) / 2 gives the pre/post ratio 1/2
        let text = "vars q, y; stem: y = 2; loop: q >= 0 && q' = q - y && 2*y' = y + 1;";
        let sys = omitted(text, TemplateKind::Affine, 1, 1, InvariantMode::General);
        let cands = chi_candidates(&sys, 1);
        assert!(!cands.is_empty());
        let with_half = cands.values().filter(|c| c.contains(&rat(1, 2))).count();
        assert!(with_half > 0, "expected candidate 1/2 somewhere");
        for c in cands.values() {
            assert!(c.contains(&int(0)) && c.contains(&int(1)));
        }
    }

    #[test]
    fn zero_bilinear_system_chi_equals_internal() {
        let sys = omitted(P_Y_GE_1, TemplateKind::Affine, 1, 0, InvariantMode::NonDecreasing);
        let cfg = SolverConfig::default();
        let a = enumerate_and_solve(&sys, &cfg).unwrap();
        let b = chi_enumerate_solve(&sys, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smtlib_linear_system_has_no_products() {
        let sys = omitted(P_Y_GE_1, TemplateKind::Affine, 1, 1, InvariantMode::NonDecreasing);
        let script = emit_smtlib(&sys);
        assert!(script.starts_with("(set-logic QF_NRA)"));
        assert!(script.contains("(check-sat)"));
        // degree 0 and non-decreasing: no products of two variables
        for line in script.lines() {
            assert!(!line.contains("(* v_"), "unexpected product in {line}");
        }
    }

    #[test]
    fn smtlib_empty_system() {
        let p = prog("vars x; stem: true; loop: true;");
        let t = make_template(TemplateKind::Affine, 1).unwrap();
        let sys = build_constraints(&p, &t, 0, InvariantMode::General, &[]);
        let mut empty = sys.clone();
        empty.subsystems.clear();
        empty.vars.clear();
        let script = emit_smtlib(&empty);
        assert_eq!(script, "(set-logic QF_NRA)\n(check-sat)\n(get-model)\n");
    }

    #[test]
    fn model_parsing() {
        let sys = omitted(P_Y_GE_1, TemplateKind::Affine, 1, 0, InvariantMode::NonDecreasing);
        let mut lines = vec!["(".to_string()];
        for sv in &sys.vars {
            lines.push(format!("(define-fun {} () Real (/ 1 2))", sv.role.name()));
        }
        lines.push(")".into());
        match parse_smt_model(&lines.join("\n"), &sys).unwrap() {
            ModelOutcome::Model(m) => assert!(m.values().all(|v| v == &rat(1, 2))),
            other => panic!("unexpected {other:?}"),
        }
        let sys2 = {
            let mut s = sys.clone();
            s.vars.truncate(2);
            s.subsystems.clear();
            s
        };
        let text = format!(
            "((define-fun {} () Real (- (/ 3 2))) (define-fun {} () Real 2.5))",
            sys2.vars[0].role.name(),
            sys2.vars[1].role.name()
        );
        match parse_smt_model(&text, &sys2).unwrap() {
            ModelOutcome::Model(m) => {
                assert_eq!(m[&sys2.vars[0].var], rat(-3, 2));
                assert_eq!(m[&sys2.vars[1].var], rat(5, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = format!(
            "((define-fun {} () Real (root-obj (+ (^ x 2) (- 2)) 2)))",
            sys2.vars[0].role.name()
        );
        assert!(matches!(
            parse_smt_model(&text, &sys2).unwrap(),
            ModelOutcome::Unknown(_)
        ));
        assert!(parse_smt_model("()", &sys2).is_err());
    }

    #[test]
    fn solve_linear_branch_rejects_bilinear() {
        let mut e = QuadExpr::zero();
        e.bilinear.insert((Var(0), Var(1)), int(1));
        assert!(matches!(
            solve_linear_branch(&[(e, Rel::Le)], &[]),
            Err(SolverError::NonLinearBranch)
        ));
    }

    #[test]
    fn determinism() {
        let sys = omitted(P_Y_GE_1, TemplateKind::Affine, 1, 1, InvariantMode::NonDecreasing);
        let cfg = SolverConfig::default();
        let a = enumerate_and_solve(&sys, &cfg).unwrap();
        let b = enumerate_and_solve(&sys, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strategy_parsing() {
        let s = SolverConfig::parse_strategies("internal,chi,smt:z3 -smt2").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[2], Strategy::Smt("z3 -smt2".into()));
        assert!(SolverConfig::parse_strategies("magic").is_err());
        assert!(SolverConfig::parse_strategies("").is_err());
    }
}
