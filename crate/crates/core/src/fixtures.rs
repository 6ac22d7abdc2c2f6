//! Bundled template structures used by the test suite, the regression
//! command, and the documentation.
//!
//! Every builder is deterministic and named for the shape it produces, and
//! each carries the structural facts the regression suite pins down (listed
//! on the builder). Element names are chosen so that the sorted order used
//! internally matches the reading order here.

use crate::structure::{Instance, Structure};
use crate::{Error, Result};

fn s(x: &str) -> String {
    x.to_string()
}

fn named_tuples(tuples: &[&[&str]]) -> Vec<Vec<String>> {
    tuples.iter().map(|t| t.iter().map(|e| s(e)).collect()).collect()
}

/// Adds one unary singleton relation `c{elem}` per element of every sort.
/// Fails if a relation of that name already exists.
pub fn with_all_constants(h: &Structure) -> Result<Structure> {
    let mut out = h.clone();
    for sort in 0..h.sort_count() {
        for e in h.elem_names(sort) {
            out = out.with_relation(
                &format!("c{e}"),
                vec![sort],
                vec![vec![h.elem_index(sort, e).expect("own element")]],
            )?;
        }
    }
    Ok(out)
}

/// Three-element template with one ternary relation whose mod-3 counting
/// quantifiers distinguish split from grouped blocks: binding the last two
/// variables in separate residue blocks keeps `{1, 2}`, binding them in one
/// block keeps only `{2}`.
pub fn three_elem_split() -> Structure {
    Structure::new(
        vec![(s("H"), vec![s("0"), s("1"), s("2")])],
        vec![(
            s("R"),
            vec![s("H"); 3],
            named_tuples(&[
                &["1", "0", "0"],
                &["1", "1", "0"],
                &["1", "1", "1"],
                &["2", "2", "2"],
            ]),
        )],
    )
    .expect("fixture is well-formed")
}

/// Five-element template with one ternary relation that is rectangular in
/// every view, yet whose mod-2 projection to the first two coordinates is
/// the non-rectangular triangle `{(0,0),(0,1),(1,1)}`. The structure has a
/// Mal'tsev polymorphism; without constants it also has an automorphism
/// swapping the two interchangeable witnesses at the last coordinate.
pub fn five_elem_skew() -> Structure {
    Structure::new(
        vec![(s("H"), (0..5).map(|e| e.to_string()).collect())],
        vec![(
            s("R"),
            vec![s("H"); 3],
            named_tuples(&[
                &["0", "0", "0"],
                &["0", "1", "1"],
                &["1", "0", "2"],
                &["1", "0", "3"],
                &["1", "1", "4"],
            ]),
        )],
    )
    .expect("fixture is well-formed")
}

/// [`five_elem_skew`] with all five constants adjoined, which removes the
/// swap automorphism and makes the structure rigid.
pub fn five_elem_skew_with_constants() -> Structure {
    with_all_constants(&five_elem_skew()).expect("fresh constant names")
}

/// Seven-point template carrying two equivalence relations whose mod-2
/// compositions disagree: composing one way relates `a1` to `a6`, the other
/// way does not, so the pair witnesses the failure of 2-permutability.
pub fn seven_point_two_equivalences() -> Structure {
    let names: Vec<String> = (1..=7).map(|i| format!("a{i}")).collect();
    let eq_rel = |classes: &[&[usize]]| -> Vec<Vec<String>> {
        let mut tuples = Vec::new();
        for class in classes {
            for &x in *class {
                for &y in *class {
                    tuples.push(vec![names[x - 1].clone(), names[y - 1].clone()]);
                }
            }
        }
        tuples
    };
    let r = eq_rel(&[&[1, 2, 3], &[4, 5, 6, 7]]);
    let q = eq_rel(&[&[1, 2, 4, 5], &[3, 6, 7]]);
    Structure::new(
        vec![(s("H"), names)],
        vec![(s("R"), vec![s("H"); 2], r), (s("Q"), vec![s("H"); 2], q)],
    )
    .expect("fixture is well-formed")
}

/// Six-point template with two crossing equivalence relations whose blocks
/// meet in even intersections, plus all constants: the classical
/// compositions are non-rectangular (so no Mal'tsev polymorphism exists),
/// but every mod-2 composition is empty, so the structure is 2-permutable.
pub fn six_point_interchangeable() -> Structure {
    let names: Vec<String> = (0..6).map(|e| e.to_string()).collect();
    let eq_rel = |classes: &[&[usize]]| -> Vec<Vec<String>> {
        let mut tuples = Vec::new();
        for class in classes {
            for &x in *class {
                for &y in *class {
                    tuples.push(vec![names[x].clone(), names[y].clone()]);
                }
            }
        }
        tuples
    };
    let r = eq_rel(&[&[0, 1, 2, 3], &[4, 5]]);
    let q = eq_rel(&[&[0, 1, 4, 5], &[2, 3]]);
    let base = Structure::new(
        vec![(s("H"), names)],
        vec![(s("R"), vec![s("H"); 2], r), (s("Q"), vec![s("H"); 2], q)],
    )
    .expect("fixture is well-formed");
    with_all_constants(&base).expect("fresh constant names")
}

/// Four-vertex digraph with trivial automorphism group whose direct square
/// nevertheless has an order-2 automorphism (swapping the two sink pairs
/// `(a,d)` and `(c,d)`): rigidity is not preserved by powers.
pub fn four_vertex_rigid_digraph() -> Structure {
    Structure::new(
        vec![(s("V"), vec![s("a"), s("b"), s("c"), s("d")])],
        vec![(
            s("E"),
            vec![s("V"); 2],
            named_tuples(&[&["b", "a"], &["b", "c"], &["c", "d"]]),
        )],
    )
    .expect("fixture is well-formed")
}

/// The `p+2`-element template behind the step-by-step counting pipeline,
/// without constants: the full binary square minus the pairs `(i, p)` for
/// `i < p`. Swapping elements inside `{0..p-1}` never breaks the relation,
/// so the bare structure is not p-rigid for p = 2.
pub fn t_p_bare(p: u64) -> Result<Structure> {
    crate::require_prime(p)?;
    if p > 7 {
        return Err(Error::Precondition(
            "pipeline template supports p up to 7 (single-digit element names)".into(),
        ));
    }
    let n = (p + 2) as u32;
    let names: Vec<String> = (0..n).map(|e| e.to_string()).collect();
    let tuples: Vec<Vec<String>> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !(b == p as u32 && a < p as u32))
        .map(|(a, b)| vec![names[a as usize].clone(), names[b as usize].clone()])
        .collect();
    Ok(Structure::new(
        vec![(s("T"), names)],
        vec![(s("R"), vec![s("T"); 2], tuples)],
    )?)
}

/// [`t_p_bare`] with all constants adjoined — the full pipeline template,
/// rigid for every p.
pub fn t_p(p: u64) -> Result<Structure> {
    with_all_constants(&t_p_bare(p)?)
}

/// The domain family whose refinement splits the pipeline template into its
/// useful parts: the full sort, one singleton per element, the top pair
/// `{p, p+1}`, and the mixed set `{0..p-1} ∪ {p+1}`. Entries are
/// `(sort, elements)` over [`t_p_bare`]'s single sort.
pub fn t_p_refinement_domains(p: u64) -> Result<Vec<(usize, Vec<u32>)>> {
    crate::require_prime(p)?;
    let n = (p + 2) as u32;
    let mut doms: Vec<(usize, Vec<u32>)> = vec![(0, (0..n).collect())];
    for e in 0..n {
        doms.push((0, vec![e]));
    }
    doms.push((0, vec![p as u32, p as u32 + 1]));
    let mut mixed: Vec<u32> = (0..p as u32).collect();
    mixed.push(p as u32 + 1);
    doms.push((0, mixed));
    Ok(doms)
}

/// Three-element digraph with a single edge `0 → 1` and an isolated vertex:
/// rigid (trivial automorphism group) for every p, but with three
/// endomorphisms, so the constants-elimination machinery has real work.
pub fn arrow3() -> Structure {
    Structure::new(
        vec![(s("V"), vec![s("0"), s("1"), s("2")])],
        vec![(s("E"), vec![s("V"); 2], named_tuples(&[&["0", "1"]]))],
    )
    .expect("fixture is well-formed")
}

/// [`arrow3`] with all three constants adjoined.
pub fn arrow3_with_constants() -> Structure {
    with_all_constants(&arrow3()).expect("fresh constant names")
}

/// Two-element affine template: the ternary even-parity relation plus both
/// constants. Coordinate-wise xor is a Mal'tsev polymorphism, so the parity
/// engine qualifies.
pub fn affine2() -> Structure {
    let xor3: Vec<Vec<String>> = (0..8u32)
        .map(|m| vec![m & 1, (m >> 1) & 1, (m >> 2) & 1])
        .filter(|t| t[0] ^ t[1] ^ t[2] == 0)
        .map(|t| t.iter().map(|e| e.to_string()).collect())
        .collect();
    let base = Structure::new(
        vec![(s("H"), vec![s("0"), s("1")])],
        vec![(s("xor3"), vec![s("H"); 3], xor3)],
    )
    .expect("fixture is well-formed");
    with_all_constants(&base).expect("fresh constant names")
}

/// Three-element affine template: the ternary zero-sum relation mod 3 plus
/// all constants. `x − y + z` is a Mal'tsev polymorphism.
pub fn z3affine() -> Structure {
    let sum3: Vec<Vec<String>> = (0..27u32)
        .map(|m| vec![m % 3, (m / 3) % 3, (m / 9) % 3])
        .filter(|t| (t[0] + t[1] + t[2]) % 3 == 0)
        .map(|t| t.iter().map(|e| e.to_string()).collect())
        .collect();
    let base = Structure::new(
        vec![(s("H"), vec![s("0"), s("1"), s("2")])],
        vec![(s("sum3"), vec![s("H"); 3], sum3)],
    )
    .expect("fixture is well-formed");
    with_all_constants(&base).expect("fresh constant names")
}

/// Two-element template with equality, the full unary relation, and both
/// constants — a degenerate affine structure the parity engine also
/// qualifies on.
pub fn eq2() -> Structure {
    let base = Structure::new(
        vec![(s("H"), vec![s("0"), s("1")])],
        vec![
            (s("eq"), vec![s("H"); 2], named_tuples(&[&["0", "0"], &["1", "1"]])),
            (s("U"), vec![s("H")], named_tuples(&[&["0"], &["1"]])),
        ],
    )
    .expect("fixture is well-formed");
    with_all_constants(&base).expect("fresh constant names")
}

/// [`z3affine`] extended with the successor relation `{(a, a+1 mod 3)}`,
/// which the Mal'tsev operation also preserves — the template for long
/// chain instances.
pub fn chain_template() -> Structure {
    z3affine()
        .with_relation("succ", vec![0, 0], vec![vec![0, 1], vec![1, 2], vec![2, 0]])
        .expect("fresh relation name")
}

/// Chain instance `rel(x_0, x_1), rel(x_1, x_2), …` on `n` variables over
/// the binary relation `rel` of `h`. Variable names are zero-padded so the
/// declaration order, the sorted order, and the chain order coincide.
pub fn chain_instance(h: &Structure, rel: &str, n: usize) -> Result<Instance> {
    if n == 0 || n > 999 {
        return Err(Error::Precondition(
            "chain length must be between 1 and 999".into(),
        ));
    }
    let Some(r) = h.rel_index(rel) else {
        return Err(Error::Precondition(format!("no relation named `{rel}`")));
    };
    let sig = h.rel_sig(r);
    if sig.len() != 2 || sig[0] != sig[1] {
        return Err(Error::Precondition(
            "chain building needs a binary relation on one sort".into(),
        ));
    }
    let sort = h.sort_name(sig[0]).to_string();
    let name = |i: usize| format!("x{i:03}");
    let vars: Vec<(String, String)> = (0..n).map(|i| (name(i), sort.clone())).collect();
    let cons: Vec<(Vec<String>, String)> = (0..n.saturating_sub(1))
        .map(|i| (vec![name(i), name(i + 1)], rel.to_string()))
        .collect();
    Ok(Instance::new(h, vars, cons)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automorphism::enumerate_automorphisms;
    use crate::oracle;

    #[test]
    fn pipeline_template_shape() {
        let bare = t_p_bare(2).unwrap();
        assert_eq!(bare.sort_size(0), 4);
        assert_eq!(bare.rel_tuples(0).len(), 14);
        assert!(!bare.rel_contains(0, &[0, 2]) && !bare.rel_contains(0, &[1, 2]));
        assert!(bare.rel_contains(0, &[2, 2]) && bare.rel_contains(0, &[3, 2]));
        let auts = enumerate_automorphisms(&bare);
        assert_eq!(auts.len(), 2, "swapping 0 and 1 preserves the relation");
        let full = t_p(2).unwrap();
        assert!(full.has_all_constants());
        assert_eq!(enumerate_automorphisms(&full).len(), 1);
    }

    #[test]
    fn arrow_template_is_rigid_with_three_endomorphisms() {
        let h = arrow3();
        assert_eq!(enumerate_automorphisms(&h).len(), 1);
        assert_eq!(oracle::enumerate_homs(&h, &h).unwrap().len(), 3);
        assert!(arrow3_with_constants().has_all_constants());
    }

    #[test]
    fn equivalence_templates_have_expected_sizes() {
        let seven = seven_point_two_equivalences();
        assert_eq!(seven.rel_tuples(seven.rel_index("R").unwrap()).len(), 9 + 16);
        assert_eq!(seven.rel_tuples(seven.rel_index("Q").unwrap()).len(), 16 + 9);
        let six = six_point_interchangeable();
        assert_eq!(six.rel_tuples(six.rel_index("R").unwrap()).len(), 16 + 4);
        assert_eq!(six.rel_tuples(six.rel_index("Q").unwrap()).len(), 16 + 4);
        assert!(six.has_all_constants());
    }

    #[test]
    fn rigid_digraph_and_its_square() {
        let h = four_vertex_rigid_digraph();
        assert_eq!(enumerate_automorphisms(&h).len(), 1);
        let hh = crate::structure::power(&h, 2).unwrap();
        let auts = enumerate_automorphisms(&hh);
        assert!(auts.iter().any(|a| !a.is_identity()));
    }

    #[test]
    fn chains_count_by_first_element() {
        let h = chain_template();
        for n in [1usize, 2, 5] {
            let inst = chain_instance(&h, "succ", n).unwrap();
            assert_eq!(oracle::count_solutions(&inst, &h).exact.to_string(), "3");
        }
        assert!(chain_instance(&h, "sum3", 3).is_err());
    }

    #[test]
    fn skew_template_variants() {
        let bare = five_elem_skew();
        assert_eq!(enumerate_automorphisms(&bare).len(), 2);
        let full = five_elem_skew_with_constants();
        assert_eq!(enumerate_automorphisms(&full).len(), 1);
    }
}
