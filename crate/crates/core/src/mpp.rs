//! Primitive-positive formulas with modular quantifier blocks.
//!
//! A formula has free variables, an ordered prefix of quantifier blocks, and
//! a conjunctive body of atoms (declared relations plus equality). A block is
//! either existential or modular: a modular block with modulus `p` keeps an
//! assignment of the outer variables iff the number of block completions
//! satisfying the rest of the formula is nonzero mod `p`. Blocks are
//! eliminated innermost-first (the last-listed block first), which matters:
//! quantifying two variables in one modular block and quantifying them in two
//! consecutive blocks define different relations in general.
//!
//! [`MppFormula::evaluate`] materializes the defined relation,
//! [`MppFormula::is_strict`] checks the membership-count normalization that
//! makes [`rewrite_instance`] count-preserving mod `p`, and
//! [`rewrite_instance`] inlines a defined relation into an instance, one
//! fresh copy of the bound variables per occurrence.

use std::collections::BTreeMap;

use crate::structure::{ConstraintRel, Instance, Structure};
use crate::{Error, Guards, Result};

/// Quantifier mode of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    Exists,
    Mod(u64),
}

/// One quantifier block: a set of bound variables (indices into the bound
/// half of the formula's variable table) with a mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub mode: BlockMode,
    pub vars: Vec<usize>,
}

/// Atom relation: a template symbol or equality on one sort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomRel {
    Sym(usize),
    Eq,
}

/// One atom of the conjunctive body; `args` index the unified variable table
/// (free variables first, then bound variables in block order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub rel: AtomRel,
    pub args: Vec<usize>,
}

/// A pp-formula with optional modular blocks, sort-checked against a fixed
/// template structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MppFormula {
    /// Free variables, sorted by name; their order is the column order of the
    /// defined relation.
    free: Vec<(String, usize)>,
    /// Bound variables in block order (names kept for rewriting).
    bound: Vec<(String, usize)>,
    /// Quantifier prefix, outermost first. `vars` index into `bound`.
    blocks: Vec<Block>,
    atoms: Vec<Atom>,
}

impl MppFormula {
    /// Builds and sort-checks a formula against `h`. Bound-variable sorts are
    /// inferred from atom usage (the interchange format declares sorts only
    /// for free variables); a bound variable that appears in no atom is
    /// rejected since its sort — and hence its completion-count contribution
    /// — would be undetermined.
    pub fn new(
        h: &Structure,
        free: Vec<(String, String)>,
        blocks: Vec<(Vec<String>, BlockMode)>,
        atoms: Vec<(String, Vec<String>)>,
    ) -> Result<MppFormula> {
        let mut free_vars: Vec<(String, usize)> = Vec::with_capacity(free.len());
        for (name, sortname) in free {
            let s = h.sort_index(&sortname).ok_or_else(|| {
                Error::Input(format!("free variable `{name}`: unknown sort `{sortname}`"))
            })?;
            if free_vars.iter().any(|(n, _)| *n == name) {
                return Err(Error::Input(format!("duplicate free variable `{name}`")));
            }
            free_vars.push((name, s));
        }
        free_vars.sort();

        let mut bound_names: Vec<String> = Vec::new();
        let mut block_list: Vec<Block> = Vec::new();
        for (vars, mode) in blocks {
            if let BlockMode::Mod(p) = mode {
                crate::require_prime(p)?;
            }
            let mut idxs = Vec::with_capacity(vars.len());
            let mut vars = vars;
            vars.sort();
            for v in vars {
                if free_vars.iter().any(|(n, _)| *n == v)
                    || bound_names.iter().any(|n| *n == v)
                {
                    return Err(Error::Input(format!(
                        "variable `{v}` bound twice or shadowing a free variable"
                    )));
                }
                idxs.push(bound_names.len());
                bound_names.push(v);
            }
            block_list.push(Block { mode, vars: idxs });
        }

        // Resolve atoms; infer bound sorts.
        let nf = free_vars.len();
        let mut bound_sorts: Vec<Option<usize>> = vec![None; bound_names.len()];
        let lookup = |name: &str| -> Option<usize> {
            free_vars
                .iter()
                .position(|(n, _)| n == name)
                .or_else(|| bound_names.iter().position(|n| n == name).map(|i| nf + i))
        };
        let mut atom_list: Vec<(AtomRel, Vec<usize>)> = Vec::new();
        for (relname, args) in &atoms {
            let rel = if relname == "=" {
                AtomRel::Eq
            } else {
                AtomRel::Sym(h.rel_index(relname).ok_or_else(|| {
                    Error::Input(format!("atom uses unknown relation `{relname}`"))
                })?)
            };
            let mut argidx = Vec::with_capacity(args.len());
            for a in args {
                argidx.push(lookup(a).ok_or_else(|| {
                    Error::Input(format!("atom argument `{a}` is not a declared variable"))
                })?);
            }
            atom_list.push((rel, argidx));
        }
        // Two passes so equality atoms can propagate inferred sorts.
        for _ in 0..2 {
            for (rel, args) in &atom_list {
                match rel {
                    AtomRel::Sym(r) => {
                        let sig = h.rel_sig(*r);
                        if sig.len() != args.len() {
                            return Err(Error::Input(format!(
                                "atom over `{}` has {} arguments, arity is {}",
                                h.rel_name(*r),
                                args.len(),
                                sig.len()
                            )));
                        }
                        for (&v, &s) in args.iter().zip(sig) {
                            unify_sort(&free_vars, &mut bound_sorts, nf, v, s, h)?;
                        }
                    }
                    AtomRel::Eq => {
                        if args.len() != 2 {
                            return Err(Error::Input("equality atom needs 2 arguments".into()));
                        }
                        let sa = var_sort_opt(&free_vars, &bound_sorts, nf, args[0]);
                        let sb = var_sort_opt(&free_vars, &bound_sorts, nf, args[1]);
                        match (sa, sb) {
                            (Some(s), _) => {
                                unify_sort(&free_vars, &mut bound_sorts, nf, args[1], s, h)?
                            }
                            (None, Some(s)) => {
                                unify_sort(&free_vars, &mut bound_sorts, nf, args[0], s, h)?
                            }
                            (None, None) => {}
                        }
                    }
                }
            }
        }
        let mut bound = Vec::with_capacity(bound_names.len());
        for (i, name) in bound_names.iter().enumerate() {
            match bound_sorts[i] {
                Some(s) => bound.push((name.clone(), s)),
                None => {
                    return Err(Error::Input(format!(
                        "cannot infer sort of bound variable `{name}` (appears in no typed atom)"
                    )))
                }
            }
        }
        Ok(MppFormula {
            free: free_vars,
            bound,
            blocks: block_list,
            atoms: atom_list
                .into_iter()
                .map(|(rel, args)| Atom { rel, args })
                .collect(),
        })
    }

    pub fn free_vars(&self) -> &[(String, usize)] {
        &self.free
    }

    pub fn bound_vars(&self) -> &[(String, usize)] {
        &self.bound
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Column sorts of the defined relation (free variables in name order).
    pub fn free_sig(&self) -> Vec<usize> {
        self.free.iter().map(|&(_, s)| s).collect()
    }

    fn var_sort(&self, v: usize) -> usize {
        if v < self.free.len() {
            self.free[v].1
        } else {
            self.bound[v - self.free.len()].1
        }
    }

    /// True iff the body holds under a full assignment to free + bound
    /// variables.
    fn body_holds(&self, h: &Structure, asg: &[u32]) -> bool {
        self.atoms.iter().all(|a| match a.rel {
            AtomRel::Eq => asg[a.args[0]] == asg[a.args[1]],
            AtomRel::Sym(r) => {
                let t: Vec<u32> = a.args.iter().map(|&v| asg[v]).collect();
                h.rel_contains(r, &t)
            }
        })
    }

    /// Truth value of the sub-formula starting at block `level` (blocks
    /// `level..` still quantified), given assignments to free variables and
    /// all outer blocks.
    fn holds_from(&self, h: &Structure, level: usize, asg: &mut Vec<u32>) -> bool {
        if level == self.blocks.len() {
            return self.body_holds(h, asg);
        }
        let count = self.count_block(h, level, asg);
        match self.blocks[level].mode {
            BlockMode::Exists => count > 0,
            BlockMode::Mod(p) => count % p != 0,
        }
    }

    /// Number of assignments to block `level`'s variables under which the
    /// rest of the formula holds.
    fn count_block(&self, h: &Structure, level: usize, asg: &mut Vec<u32>) -> u64 {
        let nf = self.free.len();
        let vars: Vec<usize> = self.blocks[level].vars.iter().map(|&b| nf + b).collect();
        if vars
            .iter()
            .any(|&v| h.sort_size(self.var_sort(v)) == 0)
        {
            return 0;
        }
        let mut count = 0u64;
        let mut cursor = vec![0u32; vars.len()];
        loop {
            for (i, &v) in vars.iter().enumerate() {
                asg[v] = cursor[i];
            }
            if self.holds_from(h, level + 1, asg) {
                count += 1;
            }
            let mut pos = vars.len();
            loop {
                if pos == 0 {
                    return count;
                }
                pos -= 1;
                cursor[pos] += 1;
                if (cursor[pos] as usize) < h.sort_size(self.var_sort(vars[pos])) {
                    break;
                }
                cursor[pos] = 0;
            }
        }
    }

    fn check_cost(&self, h: &Structure, guards: &Guards) -> Result<()> {
        guards.check_bound_vars(self.bound.len())?;
        let mut cells: u128 = 1;
        for v in 0..self.free.len() + self.bound.len() {
            cells = cells.saturating_mul(h.sort_size(self.var_sort(v)).max(1) as u128);
        }
        if cells > 100_000_000 {
            return Err(Error::Guard(format!(
                "formula enumeration space {cells} exceeds 1e8 assignments"
            )));
        }
        Ok(())
    }

    /// Materializes the relation the formula defines on its free variables
    /// (columns in free-variable name order).
    pub fn evaluate(&self, h: &Structure, guards: &Guards) -> Result<Vec<Vec<u32>>> {
        self.check_cost(h, guards)?;
        let nf = self.free.len();
        let nall = nf + self.bound.len();
        let mut out = Vec::new();
        let mut asg = vec![0u32; nall];
        if nf == 0 {
            // Nullary: the relation is {()} if the closed formula holds.
            if self.holds_from(h, 0, &mut asg.clone()) {
                out.push(Vec::new());
            }
            return Ok(out);
        }
        if self.free.iter().any(|&(_, s)| h.sort_size(s) == 0) {
            return Ok(out);
        }
        let mut cursor = vec![0u32; nf];
        loop {
            asg[..nf].copy_from_slice(&cursor);
            if self.holds_from(h, 0, &mut asg) {
                out.push(cursor.clone());
            }
            let mut pos = nf;
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                cursor[pos] += 1;
                if (cursor[pos] as usize) < h.sort_size(self.free[pos].1) {
                    break;
                }
                cursor[pos] = 0;
            }
        }
    }

    /// Strictness of the definition: with no blocks the unique completion
    /// makes it strict; otherwise the defining (outermost) block must be
    /// modular with modulus `p`, and every tuple of the defined relation must
    /// have completion count ≡ 1 (mod p) at that block. Defined relations of
    /// non-strict definitions cannot be inlined into instances without
    /// shifting counts.
    pub fn is_strict(&self, h: &Structure, guards: &Guards) -> Result<bool> {
        self.check_cost(h, guards)?;
        let p = match self.blocks.first() {
            None => return Ok(true),
            Some(Block {
                mode: BlockMode::Mod(p),
                ..
            }) => *p,
            Some(_) => {
                return Err(Error::Precondition(
                    "strictness is defined for formulas whose defining block is modular".into(),
                ))
            }
        };
        let nall = self.free.len() + self.bound.len();
        for t in self.evaluate(h, guards)? {
            let mut asg = vec![0u32; nall];
            asg[..t.len()].copy_from_slice(&t);
            if self.count_block(h, 0, &mut asg) % p != 1 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn var_sort_opt(
    free: &[(String, usize)],
    bound_sorts: &[Option<usize>],
    nf: usize,
    v: usize,
) -> Option<usize> {
    if v < nf {
        Some(free[v].1)
    } else {
        bound_sorts[v - nf]
    }
}

fn unify_sort(
    free: &[(String, usize)],
    bound_sorts: &mut [Option<usize>],
    nf: usize,
    v: usize,
    s: usize,
    h: &Structure,
) -> Result<()> {
    if v < nf {
        if free[v].1 != s {
            return Err(Error::Input(format!(
                "variable `{}` used at sort `{}` but declared `{}`",
                free[v].0,
                h.sort_name(s),
                h.sort_name(free[v].1)
            )));
        }
        return Ok(());
    }
    match bound_sorts[v - nf] {
        None => bound_sorts[v - nf] = Some(s),
        Some(old) if old != s => {
            return Err(Error::Input(format!(
                "bound variable used at two sorts (`{}` and `{}`)",
                h.sort_name(old),
                h.sort_name(s)
            )))
        }
        _ => {}
    }
    Ok(())
}

/// Inlines a defined relation into an instance. `inst` lives over `h_ext`
/// (the template `h` extended with a relation named `rel_name` whose
/// interpretation the formula defines); the result lives over `h`. Every
/// constraint on the defined relation is replaced by the formula's body on
/// the constraint's scope, with a fresh copy of the bound variables per
/// occurrence, so the solution count is preserved mod `p`.
///
/// The formula must be quantifier-free or carry a single modular block and be
/// strict: under exactly those shapes the inlining is count-preserving
/// (members contribute ≡ 1 completion, non-members ≡ 0 mod p). The formula's
/// defined relation must equal the installed interpretation.
pub fn rewrite_instance(
    inst: &Instance,
    h_ext: &Structure,
    rel_name: &str,
    f: &MppFormula,
    h: &Structure,
    guards: &Guards,
) -> Result<Instance> {
    match f.blocks() {
        [] => {}
        [Block {
            mode: BlockMode::Mod(_),
            ..
        }] => {
            if !f.is_strict(h, guards)? {
                return Err(Error::Precondition(
                    "definition is not strict; inlining would shift counts".into(),
                ));
            }
        }
        _ => {
            return Err(Error::Precondition(
                "inlining requires a quantifier-free or single-modular-block definition".into(),
            ));
        }
    }
    let r_ext = h_ext
        .rel_index(rel_name)
        .ok_or_else(|| Error::Input(format!("`{rel_name}` is not a relation of the template")))?;
    if !(0..h.sort_count().max(h_ext.sort_count())).all(|s| {
        s < h.sort_count()
            && s < h_ext.sort_count()
            && h.sort_name(s) == h_ext.sort_name(s)
            && h.elem_names(s) == h_ext.elem_names(s)
    }) {
        return Err(Error::Precondition(
            "extended and base templates must share the same sorts".into(),
        ));
    }
    // The formula must define exactly the installed interpretation.
    let defined = f.evaluate(h, guards)?;
    if defined != h_ext.rel_tuples(r_ext) {
        return Err(Error::Precondition(format!(
            "formula does not define the installed relation `{rel_name}`"
        )));
    }
    if f.free_sig()
        .iter()
        .map(|&s| h.sort_name(s))
        .ne(h_ext.rel_sig(r_ext).iter().map(|&s| h_ext.sort_name(s)))
    {
        return Err(Error::Precondition(format!(
            "formula free sorts do not match the signature of `{rel_name}`"
        )));
    }

    // Map relation indices of h_ext (minus the defined one) to h.
    let mut relmap: BTreeMap<usize, usize> = BTreeMap::new();
    for r in 0..h_ext.rel_count() {
        if r == r_ext {
            continue;
        }
        let rh = h.rel_index(h_ext.rel_name(r)).ok_or_else(|| {
            Error::Input(format!(
                "target template lacks relation `{}`",
                h_ext.rel_name(r)
            ))
        })?;
        relmap.insert(r, rh);
    }

    // Fresh-name prefix not colliding with any instance variable.
    let mut prefix = "b".to_string();
    while inst
        .vars()
        .iter()
        .any(|(n, _)| n.starts_with(&format!("_{prefix}")))
    {
        prefix.push('b');
    }

    let mut vars: Vec<(String, String)> = inst
        .vars()
        .iter()
        .map(|(n, s)| (n.clone(), h_ext.sort_name(*s).to_string()))
        .collect();
    let mut constraints: Vec<(Vec<String>, String)> = Vec::new();
    let mut occurrence = 0usize;
    for c in inst.constraints() {
        match c.rel {
            ConstraintRel::Eq => {
                let scope = c
                    .scope
                    .iter()
                    .map(|&v| inst.var_name(v).to_string())
                    .collect();
                constraints.push((scope, "=".to_string()));
            }
            ConstraintRel::Sym(r) if r != r_ext => {
                let scope = c
                    .scope
                    .iter()
                    .map(|&v| inst.var_name(v).to_string())
                    .collect();
                constraints.push((scope, h_ext.rel_name(r).to_string()));
            }
            ConstraintRel::Sym(_) => {
                // Inline the body: free variable i -> scope variable i (the
                // defined relation's columns are the free variables in name
                // order), bound variable j -> a fresh variable.
                let nf = f.free_vars().len();
                let fresh: Vec<String> = f
                    .bound_vars()
                    .iter()
                    .enumerate()
                    .map(|(j, _)| format!("_{prefix}{occurrence}_{j}"))
                    .collect();
                for ((_, s), name) in f.bound_vars().iter().zip(&fresh) {
                    vars.push((name.clone(), h.sort_name(*s).to_string()));
                }
                let var_at = |v: usize| -> String {
                    if v < nf {
                        inst.var_name(c.scope[v]).to_string()
                    } else {
                        fresh[v - nf].clone()
                    }
                };
                for a in f.atoms() {
                    let scope: Vec<String> = a.args.iter().map(|&v| var_at(v)).collect();
                    let rel = match a.rel {
                        AtomRel::Eq => "=".to_string(),
                        AtomRel::Sym(r) => h.rel_name(r).to_string(),
                    };
                    constraints.push((scope, rel));
                }
                occurrence += 1;
            }
        }
    }
    Instance::new(h, vars, constraints).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Single-sort structure over {0,1,2} with the ternary relation
    /// {(1,0,0),(1,1,0),(1,1,1),(2,2,2)}.
    fn grouping_example() -> Structure {
        Structure::new(
            vec![("D".into(), vec!["0".into(), "1".into(), "2".into()])],
            vec![(
                "R".into(),
                vec!["D".into(), "D".into(), "D".into()],
                vec![
                    vec!["1".into(), "0".into(), "0".into()],
                    vec!["1".into(), "1".into(), "0".into()],
                    vec!["1".into(), "1".into(), "1".into()],
                    vec!["2".into(), "2".into(), "2".into()],
                ],
            )],
        )
        .unwrap()
    }

    fn names(h: &Structure, tuples: &[Vec<u32>]) -> Vec<Vec<String>> {
        tuples
            .iter()
            .map(|t| t.iter().map(|&e| h.elem_name(0, e).to_string()).collect())
            .collect()
    }

    #[test]
    fn split_blocks_differ_from_grouped() {
        let h = grouping_example();
        let g = Guards::default();
        let split = MppFormula::new(
            &h,
            vec![("x".into(), "D".into())],
            vec![
                (vec!["y".into()], BlockMode::Mod(3)),
                (vec!["z".into()], BlockMode::Mod(3)),
            ],
            vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
        )
        .unwrap();
        assert_eq!(
            names(&h, &split.evaluate(&h, &g).unwrap()),
            vec![vec!["1".to_string()], vec!["2".to_string()]]
        );
        let grouped = MppFormula::new(
            &h,
            vec![("x".into(), "D".into())],
            vec![(vec!["y".into(), "z".into()], BlockMode::Mod(3))],
            vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
        )
        .unwrap();
        assert_eq!(
            names(&h, &grouped.evaluate(&h, &g).unwrap()),
            vec![vec!["2".to_string()]]
        );
    }

    #[test]
    fn existential_blocks_match_projection() {
        let h = grouping_example();
        let g = Guards::default();
        let f = MppFormula::new(
            &h,
            vec![("x".into(), "D".into())],
            vec![(vec!["y".into(), "z".into()], BlockMode::Exists)],
            vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
        )
        .unwrap();
        assert_eq!(
            names(&h, &f.evaluate(&h, &g).unwrap()),
            vec![vec!["1".to_string()], vec!["2".to_string()]]
        );
    }

    #[test]
    fn strictness_depends_on_completion_residues() {
        let h = grouping_example();
        let g = Guards::default();
        // x=1 has one y with nonzero inner count... strictness at the outer
        // block: completions y of (mod-3 z-block formula): x=1 -> y in {0,1}
        // (counts 1 and 2) -> 2 completions, 2 % 3 != 1 -> not strict.
        let split = MppFormula::new(
            &h,
            vec![("x".into(), "D".into())],
            vec![
                (vec!["y".into()], BlockMode::Mod(3)),
                (vec!["z".into()], BlockMode::Mod(3)),
            ],
            vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
        )
        .unwrap();
        assert!(!split.is_strict(&h, &g).unwrap());
        // Grouped: only x=2 qualifies, with exactly one (y,z) completion.
        let grouped = MppFormula::new(
            &h,
            vec![("x".into(), "D".into())],
            vec![(vec!["y".into(), "z".into()], BlockMode::Mod(3))],
            vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
        )
        .unwrap();
        assert!(grouped.is_strict(&h, &g).unwrap());
        // Quantifier-free formulas are strict by the unique completion.
        let qf = MppFormula::new(
            &h,
            vec![
                ("x".into(), "D".into()),
                ("y".into(), "D".into()),
                ("z".into(), "D".into()),
            ],
            vec![],
            vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
        )
        .unwrap();
        assert!(qf.is_strict(&h, &g).unwrap());
    }

    #[test]
    fn bound_sort_inference_failures_are_rejected() {
        let h = grouping_example();
        let err = MppFormula::new(
            &h,
            vec![("x".into(), "D".into())],
            vec![(vec!["y".into()], BlockMode::Exists)],
            vec![("R".into(), vec!["x".into(), "x".into(), "x".into()])],
        );
        assert!(err.is_err());
    }
}
