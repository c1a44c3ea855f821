//! Finite-domain backend: integers are one-hot encoded over the vocabulary
//! range and formulas are Tseitin-translated into a batsat instance.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use batsat::{lbool, Callbacks, Lit, Solver, SolverInterface, SolverOpts};

use super::formula::{BoolVar, Formula, IntTerm, IntVar, Model, Node, Vocab};
use crate::relational::CmpOp;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub timeout: Option<Duration>,
    pub seed: u64,
    /// Shrink unsat cores by deletion.
    pub minimize_core: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            timeout: Some(Duration::from_secs(30)),
            seed: 0,
            minimize_core: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict<L> {
    Sat(Model),
    /// Labels of an unsatisfiable subset of the labeled formulas (the hard
    /// formulas are always part of it).
    Unsat(Vec<L>),
    Unknown,
}

impl<L> Verdict<L> {
    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat(_))
    }
}

struct Deadline(Option<Instant>);

impl Callbacks for Deadline {
    fn stop(&self) -> bool {
        self.0.is_some_and(|d| Instant::now() >= d)
    }
}

struct Encoder<'v> {
    vocab: &'v Vocab,
    solver: Solver<Deadline>,
    bools: HashMap<BoolVar, Lit>,
    ints: HashMap<IntVar, Vec<Lit>>,
    memo: HashMap<usize, (Formula, Lit)>,
    cmp_memo: HashMap<(CmpOp, IntTerm, IntTerm), Lit>,
    truth: Lit,
}

impl<'v> Encoder<'v> {
    fn new(vocab: &'v Vocab, opts: &CheckOptions, deadline: Option<Instant>) -> Self {
        let sopts = SolverOpts {
            random_seed: 91648253.0 + opts.seed as f64,
            ..SolverOpts::default()
        };
        let mut solver = Solver::new(sopts, Deadline(deadline));
        let truth = Lit::new(solver.new_var_default(), true);
        solver.add_clause_reuse(&mut vec![truth]);
        Encoder {
            vocab,
            solver,
            bools: HashMap::new(),
            ints: HashMap::new(),
            memo: HashMap::new(),
            cmp_memo: HashMap::new(),
            truth,
        }
    }

    fn fresh(&mut self) -> Lit {
        Lit::new(self.solver.new_var_default(), true)
    }

    fn clause(&mut self, lits: &[Lit]) {
        let mut c = lits.to_vec();
        self.solver.add_clause_reuse(&mut c);
    }

    fn bool_lit(&mut self, v: BoolVar) -> Lit {
        if let Some(&l) = self.bools.get(&v) {
            return l;
        }
        let l = self.fresh();
        self.bools.insert(v, l);
        l
    }

    fn int_lits(&mut self, v: IntVar) -> Vec<Lit> {
        if let Some(ls) = self.ints.get(&v) {
            return ls.clone();
        }
        let (lo, hi) = self.vocab.range;
        let ls: Vec<Lit> = (lo..=hi).map(|_| self.fresh()).collect();
        self.clause(&ls);
        for i in 0..ls.len() {
            for j in i + 1..ls.len() {
                self.clause(&[!ls[i], !ls[j]]);
            }
        }
        self.ints.insert(v, ls.clone());
        ls
    }

    /// Literal equivalent to the disjunction of `lits`.
    fn or_lit(&mut self, lits: &[Lit]) -> Lit {
        match lits.len() {
            0 => !self.truth,
            1 => lits[0],
            _ => {
                let e = self.fresh();
                let mut big = vec![!e];
                big.extend_from_slice(lits);
                self.clause(&big);
                for &l in lits {
                    self.clause(&[!l, e]);
                }
                e
            }
        }
    }

    fn and_lit(&mut self, lits: &[Lit]) -> Lit {
        let negated: Vec<Lit> = lits.iter().map(|&l| !l).collect();
        !self.or_lit(&negated)
    }

    /// `x < c`, `x = c` and friends against a constant.
    fn var_const(&mut self, op: CmpOp, x: IntVar, c: i64) -> Lit {
        let lo = self.vocab.range.0;
        let ls = self.int_lits(x);
        let picked: Vec<Lit> = ls
            .iter()
            .enumerate()
            .filter(|(i, _)| op.holds((lo + *i as i64).cmp(&c)))
            .map(|(_, &l)| l)
            .collect();
        if picked.len() == ls.len() {
            return self.truth;
        }
        self.or_lit(&picked)
    }

    fn var_var(&mut self, op: CmpOp, x: IntVar, y: IntVar) -> Lit {
        match op {
            CmpOp::Ne => return !self.var_var(CmpOp::Eq, x, y),
            CmpOp::Gt => return self.var_var(CmpOp::Lt, y, x),
            CmpOp::Le => return !self.var_var(CmpOp::Lt, y, x),
            CmpOp::Ge => return !self.var_var(CmpOp::Lt, x, y),
            CmpOp::Eq | CmpOp::Lt => {}
        }
        let xs = self.int_lits(x);
        let ys = self.int_lits(y);
        let e = self.fresh();
        for (u, &xu) in xs.iter().enumerate() {
            for (v, &yv) in ys.iter().enumerate() {
                if op.holds(u.cmp(&v)) {
                    self.clause(&[!xu, !yv, e]);
                } else {
                    self.clause(&[!e, !xu, !yv]);
                }
            }
        }
        e
    }

    fn cmp_lit(&mut self, op: CmpOp, a: IntTerm, b: IntTerm) -> Lit {
        if let Some(&l) = self.cmp_memo.get(&(op, a, b)) {
            return l;
        }
        let l = match (a, b) {
            (IntTerm::Const(x), IntTerm::Const(y)) => {
                if op.holds(x.cmp(&y)) {
                    self.truth
                } else {
                    !self.truth
                }
            }
            (IntTerm::Var(x), IntTerm::Const(c)) => self.var_const(op, x, c),
            (IntTerm::Const(c), IntTerm::Var(x)) => self.var_const(op.flip(), x, c),
            (IntTerm::Var(x), IntTerm::Var(y)) => self.var_var(op, x, y),
        };
        self.cmp_memo.insert((op, a, b), l);
        l
    }

    fn lit(&mut self, f: &Formula) -> Lit {
        if let Some((_, l)) = self.memo.get(&f.id()) {
            return *l;
        }
        let l = match f.node() {
            Node::Const(true) => self.truth,
            Node::Const(false) => !self.truth,
            Node::Var(v) => self.bool_lit(*v),
            Node::Not(g) => !self.lit(g),
            Node::And(gs) => {
                let ls: Vec<Lit> = gs.iter().map(|g| self.lit(g)).collect();
                self.and_lit(&ls)
            }
            Node::Or(gs) => {
                let ls: Vec<Lit> = gs.iter().map(|g| self.lit(g)).collect();
                self.or_lit(&ls)
            }
            Node::Cmp(op, a, b) => self.cmp_lit(*op, *a, *b),
        };
        // keep the formula alive so its address stays unique
        self.memo.insert(f.id(), (f.clone(), l));
        l
    }

    /// Asserts `f`, splitting top-level conjunctions into separate clauses.
    fn assert(&mut self, f: &Formula) {
        match f.node() {
            Node::And(gs) => gs.iter().for_each(|g| self.assert(g)),
            Node::Or(gs) => {
                let ls: Vec<Lit> = gs.iter().map(|g| self.lit(g)).collect();
                self.clause(&ls);
            }
            _ => {
                let l = self.lit(f);
                self.clause(&[l]);
            }
        }
    }

    fn model(&self) -> Model {
        let value = |l: Lit| self.solver.value_lit(l) == lbool::TRUE;
        let lo = self.vocab.range.0;
        let bools = (0..self.vocab.bool_names.len() as u32)
            .map(|i| self.bools.get(&BoolVar(i)).is_some_and(|&l| value(l)))
            .collect();
        let ints = (0..self.vocab.int_names.len() as u32)
            .map(|i| match self.ints.get(&IntVar(i)) {
                Some(ls) => lo + ls.iter().position(|&l| value(l)).unwrap_or(0) as i64,
                None => lo,
            })
            .collect();
        Model { bools, ints }
    }
}

/// Decides `hard ∧ labeled`. On unsat, returns the labels of the labeled
/// formulas in a core, shrunk by deletion when `opts.minimize_core` is set.
pub fn check<L: Clone>(
    vocab: &Vocab,
    hard: &[Formula],
    labeled: &[(L, Formula)],
    opts: &CheckOptions,
) -> Verdict<L> {
    let deadline = opts.timeout.map(|t| Instant::now() + t);
    let mut enc = Encoder::new(vocab, opts, deadline);
    for f in hard {
        if f.is_false() {
            return Verdict::Unsat(Vec::new());
        }
        enc.assert(f);
    }
    let mut selectors: Vec<Lit> = Vec::with_capacity(labeled.len());
    for (_, f) in labeled {
        let s = enc.fresh();
        let l = enc.lit(f);
        enc.clause(&[!s, l]);
        selectors.push(s);
    }
    let all: Vec<usize> = (0..selectors.len()).collect();
    let core = match solve(&mut enc, &selectors, &all) {
        Outcome::Sat => return Verdict::Sat(enc.model()),
        Outcome::Unknown => return Verdict::Unknown,
        Outcome::Unsat(core) => core,
    };
    let core = if opts.minimize_core {
        minimize(&mut enc, &selectors, core)
    } else {
        core
    };
    Verdict::Unsat(core.into_iter().map(|i| labeled[i].0.clone()).collect())
}

enum Outcome {
    Sat,
    Unsat(Vec<usize>),
    Unknown,
}

fn solve(enc: &mut Encoder<'_>, selectors: &[Lit], active: &[usize]) -> Outcome {
    let assumptions: Vec<Lit> = active.iter().map(|&i| selectors[i]).collect();
    let r = enc.solver.solve_limited(&assumptions);
    if r == lbool::TRUE {
        Outcome::Sat
    } else if r == lbool::FALSE {
        let core = active
            .iter()
            .copied()
            .filter(|&i| enc.solver.unsat_core_contains_var(selectors[i].var()))
            .collect();
        Outcome::Unsat(core)
    } else {
        Outcome::Unknown
    }
}

fn minimize(enc: &mut Encoder<'_>, selectors: &[Lit], mut core: Vec<usize>) -> Vec<usize> {
    let mut i = 0;
    while i < core.len() {
        let mut trial = core.clone();
        trial.remove(i);
        match solve(enc, selectors, &trial) {
            Outcome::Unsat(smaller) => core = smaller,
            Outcome::Sat => i += 1,
            // out of time: keep what we have
            Outcome::Unknown => break,
        }
    }
    core
}
