//! Automorphisms, fixed-point substructures, and reduction to a rigid form.
//!
//! An automorphism is a sort-respecting permutation family preserving every
//! relation both ways. A structure is `p`-rigid when it has no automorphism
//! of order `p`; a non-rigid structure can be shrunk: restricting to the
//! fixed points of an order-`p` automorphism leaves homomorphism counts
//! unchanged mod `p`, so iterating until rigidity yields a canonical reduced
//! structure (unique up to isomorphism, independent of which automorphism is
//! picked at each step — we always pick the canonically first one).
//!
//! Everything here is exhaustive backtracking at desk scale (universes of
//! ten-ish elements); no group-theoretic shortcuts.

use serde::Serialize;

use crate::structure::{
    find_isomorphism, induced_substructure, search_isomorphisms, SortMaps, Structure,
};
use crate::Result;

/// A sort-respecting permutation family on a structure, with its cached
/// group order (lcm of cycle lengths over all sorts).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Automorphism {
    pub maps: SortMaps,
    pub order: u64,
}

impl Automorphism {
    pub(crate) fn from_maps(maps: SortMaps) -> Automorphism {
        let mut order = 1u64;
        for perm in &maps {
            let mut seen = vec![false; perm.len()];
            for start in 0..perm.len() {
                if seen[start] {
                    continue;
                }
                let mut len = 0u64;
                let mut cur = start;
                while !seen[cur] {
                    seen[cur] = true;
                    cur = perm[cur] as usize;
                    len += 1;
                }
                order = num_integer::lcm(order, len);
            }
        }
        Automorphism { maps, order }
    }

    pub fn is_identity(&self) -> bool {
        self.maps
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &v)| v as usize == i))
    }

    /// Per-sort fixed points.
    pub fn fixed_points(&self) -> Vec<Vec<u32>> {
        self.maps
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .filter(|&(i, &v)| v as usize == i)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect()
    }
}

/// All automorphisms of `h` in canonical (lexicographic image) order. The
/// identity is always first.
pub fn enumerate_automorphisms(h: &Structure) -> Vec<Automorphism> {
    let mut out = Vec::new();
    search_isomorphisms(h, h, &mut |m| {
        out.push(Automorphism::from_maps(m.clone()));
        true
    });
    out
}

/// Canonically first automorphism of order exactly `p`, if any. `None`
/// means `h` is `p`-rigid.
pub fn find_order_p_automorphism(h: &Structure, p: u64) -> Result<Option<Automorphism>> {
    crate::require_prime(p)?;
    let mut found = None;
    search_isomorphisms(h, h, &mut |m| {
        let a = Automorphism::from_maps(m.clone());
        if a.order == p {
            found = Some(a);
            false
        } else {
            true
        }
    });
    Ok(found)
}

/// True iff `h` has no order-`p` automorphism.
pub fn is_p_rigid(h: &Structure, p: u64) -> Result<bool> {
    Ok(find_order_p_automorphism(h, p)?.is_none())
}

/// The substructure induced by the fixed points of `π`.
pub fn fix_substructure(h: &Structure, pi: &Automorphism) -> Result<Structure> {
    if !crate::structure::is_homomorphism(&pi.maps, h, h)
        || pi
            .maps
            .iter()
            .enumerate()
            .any(|(s, p)| p.len() != h.sort_size(s))
    {
        return Err(crate::Error::Precondition(
            "fix_substructure requires an automorphism of the structure".into(),
        ));
    }
    induced_substructure(h, &pi.fixed_points()).map_err(crate::Error::from)
}

/// One step of a reduction: the automorphism applied (as element names) and
/// the fixed points kept.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionStep {
    /// Per sort: `element -> image` pairs of the applied automorphism.
    pub automorphism: Vec<Vec<(String, String)>>,
    /// Per sort: the element names that were fixed and kept.
    pub fixed: Vec<Vec<String>>,
}

/// The reduction chain from a structure down to its `p`-rigid form.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionTrace {
    pub p: u64,
    pub steps: Vec<ReductionStep>,
}

/// Reduces `h` to its `p`-rigid form: repeatedly restrict to the fixed
/// points of the canonically first order-`p` automorphism. The result is
/// unique up to isomorphism regardless of the choices made.
pub fn p_reduce(h: &Structure, p: u64) -> Result<(Structure, ReductionTrace)> {
    p_reduce_with(h, p, find_order_p_automorphism)
}

/// Reduction with a custom automorphism chooser (used by tests to confirm
/// choice-independence up to isomorphism).
pub fn p_reduce_with(
    h: &Structure,
    p: u64,
    mut choose: impl FnMut(&Structure, u64) -> Result<Option<Automorphism>>,
) -> Result<(Structure, ReductionTrace)> {
    crate::require_prime(p)?;
    let mut cur = h.clone();
    let mut steps = Vec::new();
    while let Some(pi) = choose(&cur, p)? {
        let fixed = pi.fixed_points();
        steps.push(ReductionStep {
            automorphism: (0..cur.sort_count())
                .map(|s| {
                    pi.maps[s]
                        .iter()
                        .enumerate()
                        .map(|(e, &img)| {
                            (
                                cur.elem_name(s, e as u32).to_string(),
                                cur.elem_name(s, img).to_string(),
                            )
                        })
                        .collect()
                })
                .collect(),
            fixed: (0..cur.sort_count())
                .map(|s| {
                    fixed[s]
                        .iter()
                        .map(|&e| cur.elem_name(s, e).to_string())
                        .collect()
                })
                .collect(),
        });
        cur = fix_substructure(&cur, &pi)?;
    }
    Ok((cur, ReductionTrace { p, steps }))
}

/// Last automorphism in canonical order with order exactly `p` — a
/// deliberately different preference used to confirm reduction results are
/// choice-independent up to isomorphism.
pub fn find_order_p_automorphism_last(h: &Structure, p: u64) -> Result<Option<Automorphism>> {
    crate::require_prime(p)?;
    let mut found = None;
    search_isomorphisms(h, h, &mut |m| {
        let a = Automorphism::from_maps(m.clone());
        if a.order == p {
            found = Some(a);
        }
        true
    });
    Ok(found)
}

/// Checks reduction confluence on one structure: reduce with first-choice
/// and last-choice preferences and compare results up to isomorphism.
pub fn reduction_is_confluent(h: &Structure, p: u64) -> Result<bool> {
    let (a, _) = p_reduce(h, p)?;
    let (b, _) = p_reduce_with(h, p, find_order_p_automorphism_last)?;
    Ok(find_isomorphism(&a, &b).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digraph(n: usize, edges: &[(usize, usize)]) -> Structure {
        let elems: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        Structure::new(
            vec![("V".into(), elems.clone())],
            vec![(
                "E".into(),
                vec!["V".into(), "V".into()],
                edges
                    .iter()
                    .map(|&(a, b)| vec![elems[a].clone(), elems[b].clone()])
                    .collect(),
            )],
        )
        .unwrap()
    }

    #[test]
    fn identity_always_enumerated_first() {
        let h = digraph(3, &[(0, 1), (1, 2), (2, 0)]);
        let autos = enumerate_automorphisms(&h);
        assert_eq!(autos.len(), 3); // rotations of a directed triangle
        assert!(autos[0].is_identity());
        assert_eq!(autos[0].order, 1);
        assert_eq!(autos[1].order, 3);
    }

    #[test]
    fn directed_path_is_rigid() {
        let h = digraph(3, &[(0, 1), (1, 2)]);
        assert_eq!(enumerate_automorphisms(&h).len(), 1);
        assert!(is_p_rigid(&h, 2).unwrap());
        assert!(is_p_rigid(&h, 3).unwrap());
    }

    #[test]
    fn reduction_shrinks_to_fixed_points() {
        // Two parallel edges sharing no vertices plus an isolated loop vertex:
        // swapping the two edges is an order-2 automorphism fixing the loop.
        let h = digraph(5, &[(0, 1), (2, 3), (4, 4)]);
        let pi = find_order_p_automorphism(&h, 2).unwrap().expect("swap");
        assert_eq!(pi.order, 2);
        let (reduced, trace) = p_reduce(&h, 2).unwrap();
        assert!(is_p_rigid(&reduced, 2).unwrap());
        assert!(!trace.steps.is_empty());
        // The loop vertex survives every step.
        assert!(reduced.sort_size(0) >= 1);
        assert!(reduction_is_confluent(&h, 2).unwrap());
    }

    #[test]
    fn hom_counts_preserved_mod_p_per_step() {
        let h = digraph(4, &[(0, 1), (2, 3)]);
        let g = digraph(2, &[(0, 1)]);
        let (reduced, _) = p_reduce(&h, 2).unwrap();
        let before = crate::oracle::count_hom_mod(&g, &h, 2).unwrap();
        let after = crate::oracle::count_hom_mod(&g, &reduced, 2).unwrap();
        assert_eq!(before, after);
    }
}
