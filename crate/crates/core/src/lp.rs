//! Small linear programs: a solver-neutral description, a text dump and a
//! simplex back end.

use std::fmt::Write as _;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};

/// Feasibility tolerance applied to the solution, measured on rows
/// equilibrated to unit largest coefficient in the scaled variables.
pub const SOLVER_TOLERANCE: f64 = 1e-7;

/// Smallest fraction of the original scale hint kept when rescaling.
const RESCALE_FLOOR: f64 = 1e-3;

/// Scaled coefficients below this are folded into the row bound.
const NEGLIGIBLE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(usize, f64)>, sense: Sense, bound: f64) -> Self {
        LinearConstraint { terms, sense, bound }
    }

    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the constraint (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.activity(x) - self.bound;
        match self.sense {
            Sense::Le => v.max(0.0),
            Sense::Ge => (-v).max(0.0),
            Sense::Eq => v.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
    /// Expected magnitude of the optimal value; used only for scaling.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub direction: Direction,
    pub variables: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
}

impl LinearProgram {
    pub fn new(direction: Direction) -> Self {
        LinearProgram {
            direction,
            variables: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64, objective: f64) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            objective,
            scale: 1.0,
        });
        self.variables.len() - 1
    }

    pub fn set_scale(&mut self, var: usize, scale: f64) {
        if scale.is_finite() && scale > 0.0 {
            self.variables[var].scale = scale;
        }
    }

    pub fn set_objective(&mut self, var: usize, coefficient: f64) {
        self.variables[var].objective = coefficient;
    }

    pub fn add_constraint(&mut self, c: LinearConstraint) -> Result<()> {
        if !c.bound.is_finite() || c.terms.iter().any(|&(j, a)| !a.is_finite() || j >= self.variables.len()) {
            return Err(Error::Solver("constraint with non-finite coefficient or unknown variable".into()));
        }
        self.constraints.push(c);
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.variables.iter().zip(x).map(|(v, x)| v.objective * x).sum()
    }

    /// Largest violation of any constraint or bound, with each row divided by
    /// its largest scaled coefficient.
    pub fn scaled_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xv) in self.variables.iter().zip(x) {
            worst = worst.max((v.lower - xv) / v.scale).max((xv - v.upper) / v.scale);
        }
        for c in &self.constraints {
            let norm = c
                .terms
                .iter()
                .map(|&(j, a)| (a * self.variables[j].scale).abs())
                .fold(0.0, f64::max);
            if norm > 0.0 {
                worst = worst.max(c.violation(x) / norm);
            } else {
                worst = worst.max(c.violation(x));
            }
        }
        worst
    }

    /// Copy with every term whose scaled coefficient is below `threshold`
    /// times the row's largest one moved into the bound at its least
    /// favourable value. Only bounded variables in inequality rows are
    /// touched, so the feasible set can only grow.
    pub fn relaxed(&self, threshold: f64) -> LinearProgram {
        let mut out = self.clone();
        for c in &mut out.constraints {
            relax_row(c, &self.variables, threshold);
        }
        out
    }

    /// CPLEX LP text for cross-checking with external solvers.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}",
            match self.direction {
                Direction::Minimize => "Minimize",
                Direction::Maximize => "Maximize",
            }
        );
        let obj: Vec<(usize, f64)> = self
            .variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.objective != 0.0)
            .map(|(j, v)| (j, v.objective))
            .collect();
        let _ = writeln!(s, " obj: {}", self.expression(&obj));
        let _ = writeln!(s, "Subject To");
        for (i, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(s, " c{i}: {} {op} {:e}", self.expression(&c.terms), c.bound);
        }
        let _ = writeln!(s, "Bounds");
        for v in &self.variables {
            let _ = writeln!(s, " {:e} <= {} <= {:e}", v.lower, v.name, v.upper);
        }
        let _ = writeln!(s, "End");
        s
    }

    fn expression(&self, terms: &[(usize, f64)]) -> String {
        if terms.is_empty() {
            return "0".into();
        }
        let mut s = String::new();
        for (k, &(j, a)) in terms.iter().enumerate() {
            let sign = if a < 0.0 { "-" } else if k > 0 { "+" } else { "" };
            let _ = write!(s, "{}{sign} {:e} {}", if k > 0 { " " } else { "" }, a.abs(), self.variables[j].name);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl LpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub objective: f64,
    pub status: LpStatus,
    pub solution: Vec<f64>,
}

impl BoundResult {
    pub fn failed(status: LpStatus) -> Self {
        BoundResult {
            objective: f64::NAN,
            status,
            solution: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

fn relax_row(c: &mut LinearConstraint, vars: &[Variable], threshold: f64) {
    if c.sense == Sense::Eq {
        return;
    }
    let norm = c
        .terms
        .iter()
        .map(|&(j, a)| (a * vars[j].scale).abs())
        .fold(0.0, f64::max);
    let mut bound = c.bound;
    c.terms.retain(|&(j, a)| {
        let v = &vars[j];
        if (a * v.scale).abs() >= threshold * norm || !v.lower.is_finite() || !v.upper.is_finite() {
            return true;
        }
        let (min, max) = if a > 0.0 { (a * v.lower, a * v.upper) } else { (a * v.upper, a * v.lower) };
        bound -= if c.sense == Sense::Le { min } else { max };
        false
    });
    c.bound = bound;
}

/// One solve of a cutting-plane sequence, handed to the separation callback.
#[derive(Debug, Clone, Copy)]
pub struct CutRound<'a> {
    pub objective: f64,
    pub solution: &'a [f64],
    /// False when the point misses the feasibility tolerance; such a point
    /// may guide further cuts but its objective is not a bound.
    pub verified: bool,
}

pub trait LpSolver: Sync {
    /// Solves `lp`. Infeasible and unbounded programs are reported through the
    /// status; `Err` is reserved for back-end failures.
    fn solve(&self, lp: &LinearProgram) -> Result<BoundResult>;

    /// Like `solve` but may return a point that misses the feasibility
    /// tolerance. Suitable for choosing linearization points, never for
    /// reporting a bound.
    fn solve_approximate(&self, lp: &LinearProgram) -> Result<BoundResult> {
        self.solve(lp)
    }

    /// Solves `lp`, then keeps adding the rows `separate` returns for the
    /// latest point and re-solving until it returns none. The rows must be
    /// valid for the problem being bounded, so each round can only tighten
    /// the objective. Returns the tightest verified optimum; a back-end
    /// failure after the first solve ends the sequence instead of discarding
    /// it.
    fn solve_with_cuts(
        &self,
        lp: &LinearProgram,
        separate: &mut dyn FnMut(&CutRound) -> Vec<LinearConstraint>,
    ) -> Result<BoundResult> {
        let first = self.solve(lp)?;
        if !first.is_optimal() {
            return Ok(first);
        }
        let mut lp = lp.clone();
        let mut best = first.clone();
        let mut current = (first, true);
        loop {
            let rows = separate(&CutRound {
                objective: current.0.objective,
                solution: &current.0.solution,
                verified: current.1,
            });
            if rows.is_empty() {
                break;
            }
            for row in rows {
                lp.add_constraint(row)?;
            }
            current = match self.solve(&lp) {
                Ok(r) if r.is_optimal() => (r, true),
                Ok(_) => break,
                Err(e) if e.is_numerical() => match self.solve_approximate(&lp) {
                    Ok(r) if r.is_optimal() => (r, false),
                    _ => break,
                },
                Err(e) => return Err(e),
            };
            if current.1 && tighter(lp.direction, current.0.objective, best.objective) {
                best = current.0.clone();
            }
        }
        Ok(best)
    }
}

fn tighter(direction: Direction, new: f64, old: f64) -> bool {
    match direction {
        Direction::Minimize => new > old,
        Direction::Maximize => new < old,
    }
}

/// Bounded-variable simplex from the `microlp` crate, run on a copy of the
/// program whose variables are measured in units of their scale hints and
/// whose rows are equilibrated.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimplexSolver;

impl LpSolver for SimplexSolver {
    /// A back-end failure, or a solution that misses the tolerance, is
    /// retried with the scale hints replaced by the magnitudes of that
    /// solution, and then with unit scales.
    fn solve(&self, lp: &LinearProgram) -> Result<BoundResult> {
        let mut attempt = lp.clone();
        let mut last = None;
        for round in 0..3 {
            let err = match Session::start(&attempt) {
                Ok((_, result)) if !result.is_optimal() => return Ok(result),
                Ok((session, result)) => match session.verify(&result) {
                    Ok(()) => return Ok(result),
                    Err(e) if round == 0 => {
                        for (v, x) in attempt.variables.iter_mut().zip(&result.solution) {
                            v.scale = x.abs().max(RESCALE_FLOOR * v.scale);
                        }
                        e
                    }
                    Err(e) => {
                        unit_scales(&mut attempt);
                        e
                    }
                },
                Err(e) if e.is_numerical() => {
                    unit_scales(&mut attempt);
                    e
                }
                Err(e) => return Err(e),
            };
            last = Some(err);
        }
        Err(last.expect("at least one attempt"))
    }

    fn solve_approximate(&self, lp: &LinearProgram) -> Result<BoundResult> {
        Ok(Session::start(lp)?.1)
    }
}

fn unit_scales(lp: &mut LinearProgram) {
    for v in &mut lp.variables {
        v.scale = 1.0;
    }
}

/// A microlp problem together with the relaxed copy it was built from.
struct Session {
    lp: LinearProgram,
    vars: Vec<microlp::Variable>,
}

impl Session {
    fn start(original: &LinearProgram) -> Result<(Session, BoundResult)> {
        let lp = original.relaxed(NEGLIGIBLE);
        let direction = match lp.direction {
            Direction::Minimize => OptimizationDirection::Minimize,
            Direction::Maximize => OptimizationDirection::Maximize,
        };
        let obj_norm = lp
            .variables
            .iter()
            .map(|v| (v.objective * v.scale).abs())
            .fold(0.0, f64::max);
        let obj_norm = if obj_norm > 0.0 { obj_norm } else { 1.0 };
        let mut problem = Problem::new(direction);
        let vars: Vec<_> = lp
            .variables
            .iter()
            .map(|v| problem.add_var(v.objective * v.scale / obj_norm, (v.lower / v.scale, v.upper / v.scale)))
            .collect();
        let session = Session { lp, vars };
        for c in &session.lp.constraints {
            match session.scaled_row(c) {
                Some((expr, op, rhs)) => problem.add_constraint(expr.as_slice(), op, rhs),
                None if c.violation(&vec![0.0; session.vars.len()]) > 0.0 => {
                    return Ok((session, BoundResult::failed(LpStatus::Infeasible)));
                }
                None => {}
            }
        }
        let result = session.finish(problem.solve())?;
        Ok((session, result))
    }

    /// Row in scaled variables divided by its largest coefficient; `None`
    /// for a row without nonzero terms.
    fn scaled_row(&self, c: &LinearConstraint) -> Option<(Vec<(microlp::Variable, f64)>, ComparisonOp, f64)> {
        let norm = c
            .terms
            .iter()
            .map(|&(j, a)| (a * self.lp.variables[j].scale).abs())
            .fold(0.0, f64::max);
        if norm == 0.0 {
            return None;
        }
        let expr = c
            .terms
            .iter()
            .map(|&(j, a)| (self.vars[j], a * self.lp.variables[j].scale / norm))
            .collect();
        let op = match c.sense {
            Sense::Le => ComparisonOp::Le,
            Sense::Ge => ComparisonOp::Ge,
            Sense::Eq => ComparisonOp::Eq,
        };
        Some((expr, op, c.bound / norm))
    }

    fn finish(&self, outcome: std::result::Result<microlp::SolveOutcome, microlp::Error>) -> Result<BoundResult> {
        let solution = match outcome {
            Ok(microlp::SolveOutcome::Solution(sol)) => sol,
            Ok(other) => return Err(Error::Solver(format!("solver stopped early: {other:?}"))),
            Err(microlp::Error::Infeasible) => return Ok(BoundResult::failed(LpStatus::Infeasible)),
            Err(microlp::Error::Unbounded) => return Ok(BoundResult::failed(LpStatus::Unbounded)),
            Err(e) => return Err(Error::Solver(e.to_string())),
        };
        let x: Vec<f64> = self
            .vars
            .iter()
            .zip(&self.lp.variables)
            .map(|(&v, var)| (solution.var_value(v) * var.scale).clamp(var.lower, var.upper))
            .collect();
        Ok(BoundResult {
            objective: self.lp.objective_value(&x),
            status: LpStatus::Optimal,
            solution: x,
        })
    }

    fn verify(&self, result: &BoundResult) -> Result<()> {
        let violation = self.lp.scaled_violation(&result.solution);
        if violation > SOLVER_TOLERANCE {
            return Err(Error::Solver(format!("solution violates constraints by {violation:e}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_program() {
        // max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x <= 3
        let mut lp = LinearProgram::new(Direction::Maximize);
        let x = lp.add_variable("x", 0.0, 3.0, 3.0);
        let y = lp.add_variable("y", 0.0, f64::INFINITY, 2.0);
        lp.add_constraint(LinearConstraint::new(vec![(x, 1.0), (y, 1.0)], Sense::Le, 4.0)).unwrap();
        lp.add_constraint(LinearConstraint::new(vec![(x, 1.0), (y, 3.0)], Sense::Le, 6.0)).unwrap();
        let r = SimplexSolver.solve(&lp).unwrap();
        assert!(r.is_optimal());
        assert!((r.objective - 11.0).abs() < 1e-9);
        assert!(lp.to_lp_format().contains("Maximize"));
    }

    #[test]
    fn small_magnitudes_survive_scaling() {
        let mut lp = LinearProgram::new(Direction::Minimize);
        let a = lp.add_variable("a", 0.0, 1.0, 1.0);
        let b = lp.add_variable("b", 0.0, 1.0, 0.0);
        lp.set_scale(a, 1e-7);
        lp.set_scale(b, 1e-7);
        lp.add_constraint(LinearConstraint::new(vec![(a, 0.5), (b, 0.5)], Sense::Ge, 1.3e-7)).unwrap();
        lp.add_constraint(LinearConstraint::new(vec![(b, 1.0)], Sense::Le, 1.1e-7)).unwrap();
        let r = SimplexSolver.solve(&lp).unwrap();
        assert!((r.objective - 1.5e-7).abs() < 1e-15);
    }

    #[test]
    fn infeasible_reported() {
        let mut lp = LinearProgram::new(Direction::Minimize);
        let a = lp.add_variable("a", 0.0, 1.0, 1.0);
        lp.add_constraint(LinearConstraint::new(vec![(a, 1.0)], Sense::Ge, 2.0)).unwrap();
        assert_eq!(SimplexSolver.solve(&lp).unwrap().status, LpStatus::Infeasible);
        let mut lp = LinearProgram::new(Direction::Maximize);
        lp.add_variable("a", 0.0, f64::INFINITY, 1.0);
        assert_eq!(SimplexSolver.solve(&lp).unwrap().status, LpStatus::Unbounded);
    }
}
