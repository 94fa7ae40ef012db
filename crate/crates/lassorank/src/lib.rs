//! Termination-argument synthesis for linear lasso programs.
//!
//! A lasso program is a set of initial states (the stem) followed by a
//! loop transition; both are quantifier-free linear-arithmetic formulas.
//! This crate parses such programs from a small DSL, instantiates a
//! ranking-function template (affine, multiphase, piecewise or
//! lexicographic), transposes the resulting universally quantified
//! implications into an existential constraint system over exact
//! rationals, solves it, and re-verifies the solution as an independent
//! certificate before reporting termination.

pub mod argument;
pub mod cli;
pub mod constraints;
pub mod fm;
pub mod linear;
pub mod parse;
pub mod pipeline;
pub mod rational;
pub mod report;
pub mod solver;
pub mod templates;

pub use linear::{eval_atom, polyhedron_contains, LinAtom, Polyhedron, Relation, Valuation, Var};
pub use rational::Rational;
