//! Structural properties of relations tied to counting complexity:
//! rectangularity, balancedness through rank-1 block count matrices,
//! congruences, and (modular) relation composition.
//!
//! A binary view of a relation is rectangular when its incidence pattern is a
//! disjoint union of complete bipartite blocks. Balancedness strengthens
//! this: for a three-segment view, the matrix of extension counts must be a
//! rank-1 block matrix — exactly (over the integers), or over the p-element
//! field for the modular variant. Composition comes in the classical flavor
//! (a middle witness exists) and the modular one (the number of middle
//! witnesses is nonzero mod p); comparing the two orders of modular
//! composition over congruences is the permutability check.
//!
//! All ranks are computed exactly: fraction-free elimination over the
//! integers, modular elimination over GF(p). No floating point.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::Zero;

use crate::oracle;
use crate::structure::Structure;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Rectangularity
// ---------------------------------------------------------------------------

/// Result of a rectangularity check. In a witness, the *missing* corner is
/// `(a, c)`: the pairs `(a,d)`, `(b,c)`, `(b,d)` all belong to the viewed
/// relation while `(a,c)` does not. The witness is the lexicographically
/// first such `(a, b, c, d)` over the realized projections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RectVerdict {
    Ok,
    Witness {
        a: Vec<u32>,
        b: Vec<u32>,
        c: Vec<u32>,
        d: Vec<u32>,
    },
}

impl RectVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, RectVerdict::Ok)
    }
}

/// Splits each tuple into (left, right) parts per the position set
/// `left_pos` (the remaining positions, in order, form the right part).
fn split_tuples(
    tuples: &[Vec<u32>],
    arity: usize,
    left_pos: &[usize],
) -> (Vec<Vec<u32>>, Vec<Vec<u32>>, Vec<(usize, usize)>) {
    let right_pos: Vec<usize> = (0..arity).filter(|i| !left_pos.contains(i)).collect();
    let mut lefts: Vec<Vec<u32>> = tuples
        .iter()
        .map(|t| left_pos.iter().map(|&i| t[i]).collect())
        .collect();
    let mut rights: Vec<Vec<u32>> = tuples
        .iter()
        .map(|t| right_pos.iter().map(|&i| t[i]).collect())
        .collect();
    lefts.sort();
    lefts.dedup();
    rights.sort();
    rights.dedup();
    let pairs = tuples
        .iter()
        .map(|t| {
            let l: Vec<u32> = left_pos.iter().map(|&i| t[i]).collect();
            let r: Vec<u32> = right_pos.iter().map(|&i| t[i]).collect();
            (
                lefts.binary_search(&l).unwrap(),
                rights.binary_search(&r).unwrap(),
            )
        })
        .collect();
    (lefts, rights, pairs)
}

/// Rectangularity of `tuples` viewed as a binary relation between the
/// positions in `left_pos` and the rest. `left_pos` must be a nonempty
/// proper subset of positions.
pub fn is_rectangular(tuples: &[Vec<u32>], arity: usize, left_pos: &[usize]) -> Result<RectVerdict> {
    if left_pos.is_empty() || left_pos.len() >= arity {
        return Err(Error::Precondition(
            "rectangularity view needs a nonempty proper position subset".into(),
        ));
    }
    let (lefts, rights, pairs) = split_tuples(tuples, arity, left_pos);
    let mut m = vec![vec![false; rights.len()]; lefts.len()];
    for (l, r) in pairs {
        m[l][r] = true;
    }
    for a in 0..lefts.len() {
        for b in 0..lefts.len() {
            if a == b {
                continue;
            }
            for c in 0..rights.len() {
                if m[a][c] || !m[b][c] {
                    continue;
                }
                for d in 0..rights.len() {
                    if m[a][d] && m[b][d] {
                        return Ok(RectVerdict::Witness {
                            a: lefts[a].clone(),
                            b: lefts[b].clone(),
                            c: rights[c].clone(),
                            d: rights[d].clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(RectVerdict::Ok)
}

/// Checks every binary view of the relation (position subsets containing
/// position 0 suffice: a view and its complement are rectangular together).
/// Returns the first failing view with its witness.
pub fn is_relation_rectangular(
    tuples: &[Vec<u32>],
    arity: usize,
) -> Result<Option<(Vec<usize>, RectVerdict)>> {
    if arity < 2 {
        return Ok(None);
    }
    // Subsets of {1..arity-1} joined with {0}, in size-then-lex order.
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    for mask in 0u64..(1u64 << (arity - 1)) {
        let mut s = vec![0usize];
        for i in 1..arity {
            if mask & (1 << (i - 1)) != 0 {
                s.push(i);
            }
        }
        if s.len() < arity {
            subsets.push(s);
        }
    }
    subsets.sort_by_key(|s| (s.len(), s.clone()));
    for s in subsets {
        let v = is_rectangular(tuples, arity, &s)?;
        if !v.is_ok() {
            return Ok(Some((s, v)));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Exact rank computations
// ---------------------------------------------------------------------------

/// Rank over the integers (equivalently the rationals) by fraction-free
/// elimination.
pub fn rank_int(m: &[Vec<BigInt>]) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut a: Vec<Vec<BigInt>> = m.to_vec();
    let mut prev = BigInt::from(1);
    let mut rank = 0usize;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows).find(|&r| !a[r][col].is_zero());
        let Some(p) = pivot else { continue };
        a.swap(rank, p);
        for i in rank + 1..rows {
            for j in col + 1..cols {
                let num = &a[rank][col] * &a[i][j] - &a[i][col] * &a[rank][j];
                debug_assert!((&num % &prev).is_zero());
                a[i][j] = num / &prev;
            }
            a[i][col] = BigInt::zero();
        }
        prev = a[rank][col].clone();
        rank += 1;
    }
    rank
}

/// Rank over GF(p) by modular Gaussian elimination. `p` must be prime.
pub fn rank_mod(m: &[Vec<u64>], p: u64) -> Result<usize> {
    crate::require_prime(p)?;
    let rows = m.len();
    if rows == 0 {
        return Ok(0);
    }
    let cols = m[0].len();
    let mut a: Vec<Vec<u64>> = m
        .iter()
        .map(|row| row.iter().map(|&x| x % p).collect())
        .collect();
    let inv = |x: u64| -> u64 {
        // Fermat inverse; p prime and x nonzero mod p.
        let mut base = x % p;
        let mut exp = p - 2;
        let mut acc = 1u64;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = ((acc as u128 * base as u128) % p as u128) as u64;
            }
            base = ((base as u128 * base as u128) % p as u128) as u64;
            exp >>= 1;
        }
        acc
    };
    let mut rank = 0usize;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let Some(pr) = (rank..rows).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(rank, pr);
        let pinv = inv(a[rank][col]);
        for i in rank + 1..rows {
            if a[i][col] == 0 {
                continue;
            }
            let factor = ((a[i][col] as u128 * pinv as u128) % p as u128) as u64;
            for j in col..cols {
                let sub = (factor as u128 * a[rank][j] as u128) % p as u128;
                a[i][j] = ((a[i][j] as u128 + p as u128 - sub) % p as u128) as u64;
            }
        }
        rank += 1;
    }
    Ok(rank)
}

/// True iff the matrix is a rank-1 block matrix: after permuting rows and
/// columns it is block-diagonal with every nonzero block of rank at most 1.
/// Equivalently, every connected component of the nonzero-entry bipartite
/// pattern induces a submatrix of rank ≤ 1. With a modulus, "nonzero" and
/// the rank are taken over GF(p); otherwise over the integers.
pub fn is_rank1_block(entries: &[Vec<u64>], modulus: Option<u64>) -> Result<bool> {
    if let Some(p) = modulus {
        crate::require_prime(p)?;
    }
    let rows = entries.len();
    let cols = entries.first().map_or(0, |r| r.len());
    let nz = |x: u64| match modulus {
        Some(p) => x % p != 0,
        None => x != 0,
    };
    // Union-find over rows (0..rows) and columns (rows..rows+cols).
    let mut parent: Vec<usize> = (0..rows + cols).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    for i in 0..rows {
        for j in 0..cols {
            if nz(entries[i][j]) {
                let a = find(&mut parent, i);
                let b = find(&mut parent, rows + j);
                parent[a] = b;
            }
        }
    }
    let mut comps: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..rows {
        if (0..cols).any(|j| nz(entries[i][j])) {
            comps.entry(find(&mut parent, i)).or_default().0.push(i);
        }
    }
    for j in 0..cols {
        if (0..rows).any(|i| nz(entries[i][j])) {
            comps
                .entry(find(&mut parent, rows + j))
                .or_default()
                .1
                .push(j);
        }
    }
    for (_, (ris, cjs)) in comps {
        let rank = match modulus {
            Some(p) => {
                let sub: Vec<Vec<u64>> = ris
                    .iter()
                    .map(|&i| cjs.iter().map(|&j| entries[i][j]).collect())
                    .collect();
                rank_mod(&sub, p)?
            }
            None => {
                let sub: Vec<Vec<BigInt>> = ris
                    .iter()
                    .map(|&i| cjs.iter().map(|&j| BigInt::from(entries[i][j])).collect())
                    .collect();
                rank_int(&sub)
            }
        };
        if rank > 1 {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Balancedness
// ---------------------------------------------------------------------------

/// Extension-count matrix of a relation viewed in three consecutive
/// segments: rows are realized prefixes of length `k`, columns realized
/// middle parts of length `l`, and each entry counts the tails completing
/// the pair to a member tuple (reduced mod p when a modulus is given).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    pub rows: Vec<Vec<u32>>,
    pub cols: Vec<Vec<u32>>,
    pub entries: Vec<Vec<u64>>,
    pub modulus: Option<u64>,
}

/// Builds the count matrix for the three-segment view `k | l | rest`.
pub fn count_matrix(
    tuples: &[Vec<u32>],
    arity: usize,
    k: usize,
    l: usize,
    modulus: Option<u64>,
) -> Result<CountMatrix> {
    if arity < 3 || k == 0 || l == 0 || k + l >= arity {
        return Err(Error::Precondition(format!(
            "three-segment view needs arity >= 3 and nonempty segments (got arity {arity}, k {k}, l {l})"
        )));
    }
    if let Some(p) = modulus {
        crate::require_prime(p)?;
    }
    let mut rows: Vec<Vec<u32>> = tuples.iter().map(|t| t[..k].to_vec()).collect();
    rows.sort();
    rows.dedup();
    let mut cols: Vec<Vec<u32>> = tuples.iter().map(|t| t[k..k + l].to_vec()).collect();
    cols.sort();
    cols.dedup();
    let mut entries = vec![vec![0u64; cols.len()]; rows.len()];
    for t in tuples {
        let r = rows.binary_search(&t[..k].to_vec()).unwrap();
        let c = cols.binary_search(&t[k..k + l].to_vec()).unwrap();
        entries[r][c] += 1;
    }
    if let Some(p) = modulus {
        for row in &mut entries {
            for e in row.iter_mut() {
                *e %= p;
            }
        }
    }
    Ok(CountMatrix {
        rows,
        cols,
        entries,
        modulus,
    })
}

/// Exact balancedness of the `k | l | rest` view: the integer count matrix
/// must be a rank-1 block matrix.
pub fn is_balanced(tuples: &[Vec<u32>], arity: usize, k: usize, l: usize) -> Result<bool> {
    let m = count_matrix(tuples, arity, k, l, None)?;
    is_rank1_block(&m.entries, None)
}

/// Modular balancedness: counts and ranks taken over GF(p).
pub fn is_p_balanced(
    tuples: &[Vec<u32>],
    arity: usize,
    k: usize,
    l: usize,
    p: u64,
) -> Result<bool> {
    let m = count_matrix(tuples, arity, k, l, Some(p))?;
    is_rank1_block(&m.entries, Some(p))
}

/// Balancedness across every consecutive three-segment view; `None` when all
/// views pass, otherwise the first failing `(k, l)`.
pub fn balanced_everywhere(
    tuples: &[Vec<u32>],
    arity: usize,
    modulus: Option<u64>,
) -> Result<Option<(usize, usize)>> {
    for k in 1..arity {
        for l in 1..arity - k {
            let ok = match modulus {
                Some(p) => is_p_balanced(tuples, arity, k, l, p)?,
                None => is_balanced(tuples, arity, k, l)?,
            };
            if !ok {
                return Ok(Some((k, l)));
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

/// Classical product of binary relations: `(a, b)` belongs to the result
/// iff some `c` has `(a, c)` in `r` and `(c, b)` in `q`.
pub fn compose_tuples(r: &[Vec<u32>], q: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut by_first: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for t in q {
        by_first.entry(t[0]).or_default().push(t[1]);
    }
    for t in r {
        if let Some(bs) = by_first.get(&t[1]) {
            for &b in bs {
                out.push(vec![t[0], b]);
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Modular product: `(a, b)` belongs iff the number of middle witnesses is
/// nonzero mod `p`.
pub fn compose_tuples_p(r: &[Vec<u32>], q: &[Vec<u32>], p: u64) -> Result<Vec<Vec<u32>>> {
    crate::require_prime(p)?;
    let mut counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut by_first: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for t in q {
        by_first.entry(t[0]).or_default().push(t[1]);
    }
    for t in r {
        if let Some(bs) = by_first.get(&t[1]) {
            for &b in bs {
                *counts.entry((t[0], b)).or_default() += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .filter(|&(_, n)| n % p != 0)
        .map(|((a, b), _)| vec![a, b])
        .collect())
}

// ---------------------------------------------------------------------------
// Congruences and permutability
// ---------------------------------------------------------------------------

/// An equivalence relation on an explicit carrier. The carrier is a list of
/// tuples (a sort is carried as 1-tuples); pairs are stored as index pairs
/// into the carrier, so composition can reuse the binary-relation helpers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Congruence {
    pub carrier: Vec<Vec<u32>>,
    pub pairs: Vec<Vec<u32>>,
}

impl Congruence {
    /// Builds and validates an equivalence from carrier tuples and related
    /// pairs of carrier tuples.
    pub fn new(carrier: Vec<Vec<u32>>, related: &[(Vec<u32>, Vec<u32>)]) -> Result<Congruence> {
        let mut carrier = carrier;
        carrier.sort();
        carrier.dedup();
        let idx = |t: &Vec<u32>| -> Result<u32> {
            carrier
                .binary_search(t)
                .map(|i| i as u32)
                .map_err(|_| Error::Input(format!("pair member {t:?} outside the carrier")))
        };
        let mut pairs: Vec<Vec<u32>> = Vec::new();
        for (a, b) in related {
            pairs.push(vec![idx(a)?, idx(b)?]);
        }
        pairs.sort();
        pairs.dedup();
        let c = Congruence { carrier, pairs };
        c.check_equivalence()?;
        Ok(c)
    }

    /// Interprets a binary relation of `h` on a single sort as an
    /// equivalence on that whole sort.
    pub fn on_sort(h: &Structure, rel: usize) -> Result<Congruence> {
        let sig = h.rel_sig(rel);
        if sig.len() != 2 || sig[0] != sig[1] {
            return Err(Error::Precondition(format!(
                "relation `{}` is not binary on one sort",
                h.rel_name(rel)
            )));
        }
        let carrier: Vec<Vec<u32>> = (0..h.sort_size(sig[0]) as u32).map(|e| vec![e]).collect();
        let related: Vec<(Vec<u32>, Vec<u32>)> = h
            .rel_tuples(rel)
            .iter()
            .map(|t| (vec![t[0]], vec![t[1]]))
            .collect();
        Congruence::new(carrier, &related)
    }

    /// Interprets a `2k`-ary tuple set as an equivalence on a `k`-ary
    /// carrier relation.
    pub fn on_relation(carrier: &[Vec<u32>], pairs_2k: &[Vec<u32>], k: usize) -> Result<Congruence> {
        let related: Vec<(Vec<u32>, Vec<u32>)> = pairs_2k
            .iter()
            .map(|t| {
                if t.len() != 2 * k {
                    return Err(Error::Input(format!(
                        "pair tuple {t:?} does not have arity {}",
                        2 * k
                    )));
                }
                Ok((t[..k].to_vec(), t[k..].to_vec()))
            })
            .collect::<Result<_>>()?;
        Congruence::new(carrier.to_vec(), &related)
    }

    fn check_equivalence(&self) -> Result<()> {
        let n = self.carrier.len() as u32;
        let has = |a: u32, b: u32| self.pairs.binary_search(&vec![a, b]).is_ok();
        for x in 0..n {
            if !has(x, x) {
                return Err(Error::Precondition(format!(
                    "not reflexive: {:?} unrelated to itself",
                    self.carrier[x as usize]
                )));
            }
        }
        for t in &self.pairs {
            if !has(t[1], t[0]) {
                return Err(Error::Precondition(format!(
                    "not symmetric at ({:?}, {:?})",
                    self.carrier[t[0] as usize], self.carrier[t[1] as usize]
                )));
            }
        }
        for t in &self.pairs {
            for u in &self.pairs {
                if u[0] == t[1] && !has(t[0], u[1]) {
                    return Err(Error::Precondition(format!(
                        "not transitive at ({:?}, {:?}, {:?})",
                        self.carrier[t[0] as usize],
                        self.carrier[t[1] as usize],
                        self.carrier[u[1] as usize]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Equivalence classes as sorted lists of carrier indices.
    pub fn classes(&self) -> Vec<Vec<u32>> {
        let n = self.carrier.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for x in 0..n as u32 {
            if seen[x as usize] {
                continue;
            }
            let cls: Vec<u32> = self
                .pairs
                .iter()
                .filter(|t| t[0] == x)
                .map(|t| t[1])
                .collect();
            for &y in &cls {
                seen[y as usize] = true;
            }
            out.push(cls);
        }
        out
    }
}

/// Result of a permutability check over a congruence list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PermutabilityVerdict {
    Ok,
    /// Congruences `first` and `second` (indices into the input list) with
    /// a pair of carrier tuples on which the two modular products disagree.
    Witness {
        first: usize,
        second: usize,
        pair: (Vec<u32>, Vec<u32>),
    },
}

/// Compares `α ∘_p β` with `β ∘_p α` for every pair of the given
/// congruences; all must share one carrier. The witness is drawn from the
/// symmetric difference of the two products, preferring the first pair (in
/// lexicographic order) related by neither congruence — a disagreement that
/// cannot be blamed on either input alone — and falling back to the overall
/// first difference pair when every one is internal to a congruence.
pub fn check_p_permutability(congs: &[Congruence], p: u64) -> Result<PermutabilityVerdict> {
    crate::require_prime(p)?;
    for c in congs.iter().skip(1) {
        if c.carrier != congs[0].carrier {
            return Err(Error::Precondition(
                "permutability check requires a common carrier".into(),
            ));
        }
    }
    for i in 0..congs.len() {
        for j in 0..congs.len() {
            if i == j {
                continue;
            }
            let ab = compose_tuples_p(&congs[i].pairs, &congs[j].pairs, p)?;
            let ba = compose_tuples_p(&congs[j].pairs, &congs[i].pairs, p)?;
            if ab != ba {
                // both sorted: the symmetric difference, in lexicographic order
                let mut diff: Vec<&Vec<u32>> = ab
                    .iter()
                    .filter(|t| ba.binary_search(t).is_err())
                    .chain(ba.iter().filter(|t| ab.binary_search(t).is_err()))
                    .collect();
                diff.sort();
                let unrelated = |t: &Vec<u32>| {
                    congs[i].pairs.binary_search(t).is_err()
                        && congs[j].pairs.binary_search(t).is_err()
                };
                let w = diff.iter().find(|t| unrelated(t)).copied().unwrap_or(diff[0]);
                return Ok(PermutabilityVerdict::Witness {
                    first: i,
                    second: j,
                    pair: (
                        congs[i].carrier[w[0] as usize].clone(),
                        congs[i].carrier[w[1] as usize].clone(),
                    ),
                });
            }
        }
    }
    Ok(PermutabilityVerdict::Ok)
}

// ---------------------------------------------------------------------------
// Bounded generator of definable relations
// ---------------------------------------------------------------------------

/// Limits for the definable-relation generator used by the test suite.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLimits {
    pub free_vars: usize,
    pub max_bound_vars: usize,
    pub max_atoms: usize,
    pub max_formulas: usize,
}

impl Default for GeneratorLimits {
    fn default() -> Self {
        GeneratorLimits {
            free_vars: 2,
            max_bound_vars: 1,
            max_atoms: 2,
            max_formulas: 400,
        }
    }
}

/// Enumerates small definable relations of a single-sorted structure:
/// formulas with `free_vars` free variables, up to `max_bound_vars` bound
/// variables in one block (modular when `p` is given, existential
/// otherwise), and conjunctive bodies drawn from every atom over the
/// declared relations. Returns each formula with its evaluated relation.
/// Deterministic and truncated at `max_formulas`.
pub fn generate_definable_relations(
    h: &Structure,
    p: Option<u64>,
    lim: GeneratorLimits,
    guards: &crate::Guards,
) -> Result<Vec<(crate::mpp::MppFormula, Vec<Vec<u32>>)>> {
    if h.sort_count() != 1 {
        return Err(Error::Precondition(
            "the definable-relation generator handles single-sorted structures".into(),
        ));
    }
    let sort = h.sort_name(0).to_string();
    let mut out = Vec::new();
    for nb in 0..=lim.max_bound_vars {
        let vars: Vec<String> = (0..lim.free_vars)
            .map(|i| format!("x{i}"))
            .chain((0..nb).map(|i| format!("y{i}")))
            .collect();
        // Atom pool: every relation applied to every argument tuple.
        let mut pool: Vec<(String, Vec<String>)> = Vec::new();
        for r in 0..h.rel_count() {
            let ar = h.rel_arity(r);
            if ar == 0 || ar > 3 {
                continue;
            }
            let mut cursor = vec![0usize; ar];
            loop {
                pool.push((
                    h.rel_name(r).to_string(),
                    cursor.iter().map(|&i| vars[i].clone()).collect(),
                ));
                let mut pos = ar;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    cursor[pos] += 1;
                    if cursor[pos] < vars.len() {
                        break;
                    }
                    cursor[pos] = 0;
                }
                if cursor.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        // Conjunctions: subsets of the pool of size 1..=max_atoms.
        let mut stack: Vec<Vec<usize>> = (0..pool.len()).map(|i| vec![i]).collect();
        while let Some(sel) = stack.pop() {
            if out.len() >= lim.max_formulas {
                return Ok(out);
            }
            let atoms: Vec<(String, Vec<String>)> =
                sel.iter().map(|&i| pool[i].clone()).collect();
            let blocks = if nb == 0 {
                vec![]
            } else {
                let mode = match p {
                    Some(p) => crate::mpp::BlockMode::Mod(p),
                    None => crate::mpp::BlockMode::Exists,
                };
                vec![((0..nb).map(|i| format!("y{i}")).collect::<Vec<_>>(), mode)]
            };
            let free = (0..lim.free_vars)
                .map(|i| (format!("x{i}"), sort.clone()))
                .collect();
            // Formulas whose bound variables escape sort inference are
            // skipped, not errors: the pool contains atoms not mentioning
            // every bound variable.
            if let Ok(f) = crate::mpp::MppFormula::new(h, free, blocks, atoms) {
                if let Ok(rel) = f.evaluate(h, guards) {
                    out.push((f, rel));
                }
            }
            if sel.len() < lim.max_atoms {
                let last = *sel.last().unwrap();
                for nxt in last + 1..pool.len() {
                    let mut s = sel.clone();
                    s.push(nxt);
                    stack.push(s);
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The two constructions linking balancedness and rectangularity at p = 2
// ---------------------------------------------------------------------------

/// Pads a relation with a duplicate of its last coordinate:
/// `Q(x1..xn, x_{n+1}) = R(x1..xn) ∧ x_n = x_{n+1}`.
pub fn pad_with_equality(tuples: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = tuples
        .iter()
        .map(|t| {
            let mut u = t.clone();
            u.push(*t.last().expect("nonempty tuples"));
            u
        })
        .collect();
    out.sort();
    out
}

/// The modular-projection tail: keeps the first `l` coordinates of the
/// tuples whose completion count is odd — the relation defined by
/// quantifying the tail with one mod-2 block.
pub fn mod2_tail(tuples: &[Vec<u32>], l: usize) -> Result<Vec<Vec<u32>>> {
    let positions: Vec<usize> = (0..l).collect();
    oracle::proj_mod(tuples, &positions, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The two-class equivalences on seven points whose modular products
    /// disagree.
    fn seven_point_pair() -> (Congruence, Congruence) {
        let carrier: Vec<Vec<u32>> = (0..7).map(|e| vec![e]).collect();
        let classes_r: [&[u32]; 2] = [&[0, 1, 2], &[3, 4, 5, 6]];
        let classes_q: [&[u32]; 2] = [&[0, 1, 3, 4], &[2, 5, 6]];
        let build = |classes: [&[u32]; 2]| {
            let mut rel = Vec::new();
            for cls in classes {
                for &a in cls {
                    for &b in cls {
                        rel.push((vec![a], vec![b]));
                    }
                }
            }
            Congruence::new(carrier.clone(), &rel).unwrap()
        };
        (build(classes_r), build(classes_q))
    }

    #[test]
    fn missing_corner_witness_is_lex_first() {
        // {(0,0),(0,1),(1,1)}: the missing pair is (1,0).
        let r = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
        match is_rectangular(&r, 2, &[0]).unwrap() {
            RectVerdict::Witness { a, b, c, d } => {
                assert_eq!((a, b, c, d), (vec![1], vec![0], vec![0], vec![1]));
            }
            RectVerdict::Ok => panic!("should not be rectangular"),
        }
        let full = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        assert!(is_rectangular(&full, 2, &[0]).unwrap().is_ok());
    }

    #[test]
    fn rank_routines_agree_with_hand_values() {
        let m = vec![vec![1u64, 1], vec![1, 0]];
        let mb: Vec<Vec<BigInt>> = m
            .iter()
            .map(|r| r.iter().map(|&x| BigInt::from(x)).collect())
            .collect();
        assert_eq!(rank_int(&mb), 2);
        assert_eq!(rank_mod(&m, 2).unwrap(), 2);
        assert!(!is_rank1_block(&m, None).unwrap());
        assert!(!is_rank1_block(&m, Some(2)).unwrap());
        // Diagonal: two 1x1 blocks.
        let d = vec![vec![3u64, 0], vec![0, 5]];
        assert!(is_rank1_block(&d, None).unwrap());
        // Rank-1 but connected: fine.
        let r1 = vec![vec![2u64, 4], vec![1, 2]];
        assert!(is_rank1_block(&r1, None).unwrap());
        // Mod 3 the same matrix stays rank 1; mod 2 it becomes diagonal-ish
        // pattern [[0,0],[1,0]] which is a single 1x1 block.
        assert!(is_rank1_block(&r1, Some(3)).unwrap());
        assert!(is_rank1_block(&r1, Some(2)).unwrap());
    }

    #[test]
    fn counts_with_even_extensions_break_two_balance() {
        // Ternary relation with extension counts [[1,1],[2,1]] on the 1|1
        // split: exact rank 2 and mod-2 rank 2 -> not balanced either way.
        let r = vec![
            vec![0, 0, 0],
            vec![0, 1, 1],
            vec![1, 0, 2],
            vec![1, 0, 3],
            vec![1, 1, 4],
        ];
        assert!(!is_balanced(&r, 3, 1, 1).unwrap());
        assert!(!is_p_balanced(&r, 3, 1, 1, 2).unwrap());
        // Its mod-2 tail of length 2 is the non-rectangular triangle.
        assert_eq!(
            mod2_tail(&r, 2).unwrap(),
            vec![vec![0, 0], vec![0, 1], vec![1, 1]]
        );
        // The full product is balanced everywhere.
        let mut full = Vec::new();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    full.push(vec![a, b, c]);
                }
            }
        }
        assert_eq!(balanced_everywhere(&full, 3, None).unwrap(), None);
        assert_eq!(balanced_everywhere(&full, 3, Some(2)).unwrap(), None);
    }

    #[test]
    fn modular_products_detect_asymmetry() {
        let (r, q) = seven_point_pair();
        let rq = compose_tuples_p(&r.pairs, &q.pairs, 2).unwrap();
        let qr = compose_tuples_p(&q.pairs, &r.pairs, 2).unwrap();
        // r-class {0,1,2} x q-class {2,5,6} and its transpose.
        assert!(rq.binary_search(&vec![0, 5]).is_ok());
        assert!(qr.binary_search(&vec![0, 5]).is_err());
        assert_eq!(rq.len(), 9);
        assert_eq!(qr.len(), 9);
        match check_p_permutability(&[r, q], 2).unwrap() {
            PermutabilityVerdict::Witness { first, second, pair } => {
                assert_eq!((first, second), (0, 1));
                // (0,2) disagrees first but is r-internal; (0,5) is the
                // first pair related by neither congruence.
                assert_eq!(pair, (vec![0u32], vec![5u32]));
            }
            PermutabilityVerdict::Ok => panic!("products differ"),
        }
    }

    #[test]
    fn interchangeable_classes_make_products_empty() {
        // Equivalences on six points with all classes of even size.
        let carrier: Vec<Vec<u32>> = (0..6).map(|e| vec![e]).collect();
        let build = |classes: [&[u32]; 2]| {
            let mut rel = Vec::new();
            for cls in classes {
                for &a in cls {
                    for &b in cls {
                        rel.push((vec![a], vec![b]));
                    }
                }
            }
            Congruence::new(carrier.clone(), &rel).unwrap()
        };
        let r = build([&[0, 1, 2, 3], &[4, 5]]);
        let q = build([&[0, 1, 4, 5], &[2, 3]]);
        assert!(compose_tuples_p(&r.pairs, &q.pairs, 2).unwrap().is_empty());
        assert!(compose_tuples_p(&q.pairs, &r.pairs, 2).unwrap().is_empty());
        assert_eq!(
            check_p_permutability(&[r.clone(), q], 2).unwrap(),
            PermutabilityVerdict::Ok
        );
        assert_eq!(
            check_p_permutability(&[r.clone(), r], 2).unwrap(),
            PermutabilityVerdict::Ok
        );
    }

    #[test]
    fn classical_product_composes_with_equality_identity() {
        let r = vec![vec![0, 1], vec![1, 2]];
        let eq = vec![vec![0, 0], vec![1, 1], vec![2, 2]];
        assert_eq!(compose_tuples(&r, &eq), r);
        assert_eq!(compose_tuples(&eq, &r), r);
    }
}
