//! Command-line entry point: one binary, nine subcommands, optional JSON
//! reports.
//!
//! Plain output goes to stdout (`count` and `parity` print a single number;
//! `reduce`, `refine`, and `binarize` print document JSON; `eval-formula`,
//! `analyze`, `gadget-scan`, and `regress` print human-readable lines).
//! `--json` replaces the plain text with a [`Report`] document. Identical
//! inputs produce byte-identical output up to the report's `timings_ms`
//! field.
//!
//! Exit codes: 0 on success, 1 on a violated precondition (named on
//! stderr), 2 when a cross-check against the counting oracle disagrees, and
//! 64 on usage errors. The `MODCSP_GUARD` environment variable overrides
//! the universe size guard; raising it is unsafe in the sense that searches
//! may then run for a very long time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use num_traits::Zero;
use serde_json::{json, Value};

use crate::automorphism::{
    enumerate_automorphisms, find_order_p_automorphism, fix_substructure, is_p_rigid, p_reduce,
    Automorphism,
};
use crate::binarize::{binarize, binarize_instance};
use crate::expansion::{
    count_with_constants, find_maltsev, is_polymorphism, satisfies_maltsev_identities,
};
use crate::fixtures;
use crate::gadget::{
    build_kr, find_rect_obstruction, find_standard_gadget, is_p_protected, relation_structure,
    StandardGadget,
};
use crate::guards::Guards;
use crate::json::{instance_to_doc, parse_formula, parse_instance, parse_structure, structure_to_doc};
use crate::mpp::{BlockMode, MppFormula};
use crate::oracle;
use crate::parity::{parity_count_with_trace, ParityContext};
use crate::properties::{
    balanced_everywhere, check_p_permutability, compose_tuples_p, is_relation_rectangular,
    Congruence, PermutabilityVerdict, RectVerdict,
};
use crate::refine::{
    arc_consistency, build_refinement, refine_and_reduce, refine_and_reduce_with, solve_tp,
    solver_based_domains, RefineDomain,
};
use crate::report::{Report, Timer};
use crate::structure::{power, Instance, SortMaps, Structure};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "modcsp",
    version,
    about = "Modular solution counting for constraint satisfaction problems"
)]
struct Cli {
    /// Emit a machine-readable JSON report instead of plain text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DomainMethod {
    /// Arc-consistency domains.
    Ac,
    /// Solver-based domains (first solution through each candidate value).
    Solver,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CarrierKind {
    /// Protect gadget blocks inside the bipartite graph of the gadget view.
    Graph,
    /// Protect them inside the one-sorted structure of the scanned relation.
    Relation,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count the solutions of an instance over a template.
    Count {
        /// Template structure JSON file.
        #[arg(long)]
        structure: String,
        /// Instance JSON file.
        #[arg(long)]
        instance: String,
        /// Prime modulus; the printed count becomes a residue.
        #[arg(long = "mod", value_name = "P")]
        modulus: Option<u64>,
        /// Count injective solutions only (distinct variables of a sort take
        /// distinct values).
        #[arg(long, conflicts_with = "via_constants_reduction")]
        inj: bool,
        /// Count through the constants-elimination reduction and cross-check
        /// the result against the direct oracle.
        #[arg(long = "via-constants-reduction", requires = "modulus")]
        via_constants_reduction: bool,
    },
    /// Strip order-p automorphisms from a structure until it is p-rigid.
    Reduce {
        #[arg(long)]
        structure: String,
        #[arg(long = "mod", value_name = "P")]
        modulus: u64,
        /// Write the reduction steps (automorphisms and kept fixed points)
        /// to this file.
        #[arg(long, value_name = "OUT")]
        trace: Option<String>,
    },
    /// Evaluate a formula with modular quantifier blocks to the relation it
    /// defines.
    EvalFormula {
        #[arg(long)]
        structure: String,
        /// Formula JSON file.
        #[arg(long)]
        formula: String,
    },
    /// Rectangularity, balancedness, Mal'tsev, and permutability analysis of
    /// a template.
    Analyze {
        #[arg(long)]
        structure: String,
        #[arg(long = "mod", value_name = "P")]
        modulus: u64,
    },
    /// Count solutions mod 2 with the frame-based algorithm.
    Parity {
        #[arg(long)]
        structure: String,
        #[arg(long)]
        instance: String,
        /// Cross-check against the brute-force oracle; disagreement exits 2.
        #[arg(long)]
        verify_oracle: bool,
    },
    /// Refine an instance's domains, strip order-p automorphisms, and count.
    Refine {
        #[arg(long)]
        structure: String,
        #[arg(long)]
        instance: String,
        #[arg(long = "mod", value_name = "P")]
        modulus: u64,
        /// How the per-variable domains are derived.
        #[arg(long, value_enum, default_value = "solver")]
        method: DomainMethod,
    },
    /// Scan for rectangularity obstructions and hardness gadgets, with
    /// protection verdicts under order-p reductions.
    GadgetScan {
        #[arg(long)]
        structure: String,
        #[arg(long = "mod", value_name = "P")]
        modulus: u64,
        /// Scan the relation a formula defines instead of the template's own
        /// relations.
        #[arg(long)]
        formula: Option<String>,
        /// Carrier structure on which block protection is decided.
        #[arg(long, value_enum, default_value = "graph")]
        carrier: CarrierKind,
    },
    /// Encode a structure (and optionally an instance) into the two-sorted
    /// tuple-domain form.
    Binarize {
        #[arg(long)]
        structure: String,
        #[arg(long)]
        instance: Option<String>,
    },
    /// Re-check the recorded facts of every bundled fixture.
    Regress,
}

fn command_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Count { .. } => "count",
        Cmd::Reduce { .. } => "reduce",
        Cmd::EvalFormula { .. } => "eval-formula",
        Cmd::Analyze { .. } => "analyze",
        Cmd::Parity { .. } => "parity",
        Cmd::Refine { .. } => "refine",
        Cmd::GadgetScan { .. } => "gadget-scan",
        Cmd::Binarize { .. } => "binarize",
        Cmd::Regress => "regress",
    }
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Library failures exit 1; cross-check disagreements exit 2.
enum Failure {
    Lib(Error),
    Mismatch(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Lib(e)
    }
}

type CmdResult = std::result::Result<String, Failure>;

pub fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(run(&args));
}

/// Parses and executes one invocation, printing to stdout/stderr; returns
/// the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors print to stderr.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return code;
        }
    };
    let guards = Guards::from_env();
    let mut report = Report::new(command_name(&cli.cmd));
    let timer = Timer::start();
    let out = dispatch(&cli.cmd, &mut report, &guards);
    timer.stop(&mut report, "total");
    match out {
        Ok(text) => {
            if cli.json {
                emit(&report.to_json());
            } else if !text.is_empty() {
                emit(&format!("{text}\n"));
            }
            0
        }
        Err(Failure::Lib(e)) => {
            emit_err(&format!("error: {e}\n"));
            1
        }
        Err(Failure::Mismatch(m)) => {
            emit_err(&format!("oracle mismatch: {m}\n"));
            2
        }
    }
}

/// Writes to stdout, ignoring errors so a closed pipe (e.g. `| head`) ends
/// the run quietly instead of panicking.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn emit_err(text: &str) {
    use std::io::Write;
    let _ = std::io::stderr().write_all(text.as_bytes());
}

fn dispatch(cmd: &Cmd, report: &mut Report, guards: &Guards) -> CmdResult {
    match cmd {
        Cmd::Count {
            structure,
            instance,
            modulus,
            inj,
            via_constants_reduction,
        } => cmd_count(structure, instance, *modulus, *inj, *via_constants_reduction, report, guards),
        Cmd::Reduce {
            structure,
            modulus,
            trace,
        } => cmd_reduce(structure, *modulus, trace.as_deref(), report),
        Cmd::EvalFormula { structure, formula } => cmd_eval_formula(structure, formula, report, guards),
        Cmd::Analyze { structure, modulus } => cmd_analyze(structure, *modulus, report, guards),
        Cmd::Parity {
            structure,
            instance,
            verify_oracle,
        } => cmd_parity(structure, instance, *verify_oracle, report, guards),
        Cmd::Refine {
            structure,
            instance,
            modulus,
            method,
        } => cmd_refine(structure, instance, *modulus, *method, report),
        Cmd::GadgetScan {
            structure,
            modulus,
            formula,
            carrier,
        } => cmd_gadget_scan(structure, *modulus, formula.as_deref(), *carrier, report, guards),
        Cmd::Binarize {
            structure,
            instance,
        } => cmd_binarize(structure, instance.as_deref(), report),
        Cmd::Regress => cmd_regress(report),
    }
}

// ---------------------------------------------------------------------------
// Input loading (one read per file; the digest covers the parsed bytes)
// ---------------------------------------------------------------------------

fn load_text(path: &str, report: &mut Report) -> Result<String> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read `{path}`: {e}")))?;
    report.add_input(path, text.as_bytes());
    Ok(text)
}

fn load_structure(path: &str, report: &mut Report) -> Result<Structure> {
    parse_structure(&load_text(path, report)?, path)
}

fn load_instance(path: &str, h: &Structure, report: &mut Report) -> Result<Instance> {
    parse_instance(&load_text(path, report)?, h, path)
}

fn load_formula(path: &str, h: &Structure, report: &mut Report) -> Result<MppFormula> {
    parse_formula(&load_text(path, report)?, h, path)
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("report values serialize")
}

// ---------------------------------------------------------------------------
// count
// ---------------------------------------------------------------------------

/// Solutions whose assignment is injective on every sort.
fn count_injective_solutions(inst: &Instance, h: &Structure) -> BigUint {
    let mut count = BigUint::zero();
    for sol in oracle::solutions(inst, h) {
        let mut seen: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); h.sort_count()];
        if (0..inst.var_count()).all(|v| seen[inst.var_sort(v)].insert(sol[v])) {
            count += 1u32;
        }
    }
    count
}

fn cmd_count(
    structure: &str,
    instance: &str,
    modulus: Option<u64>,
    inj: bool,
    via_constants: bool,
    report: &mut Report,
    guards: &Guards,
) -> CmdResult {
    let h = load_structure(structure, report)?;
    let inst = load_instance(instance, &h, report)?;
    if via_constants {
        let p = modulus.expect("flag requires --mod");
        let names: Vec<String> = h.constant_relations().iter().map(|(n, _, _)| n.clone()).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let base = h.without_relations(&name_refs);
        let via = count_with_constants(&inst, &h, &base, p, guards)?;
        let direct = oracle::count_solutions_mod(&inst, &h, p)?;
        if via != direct {
            return Err(Failure::Mismatch(format!(
                "constants reduction counts {via}, the direct oracle counts {direct} (mod {p})"
            )));
        }
        report.body = json!({
            "via": "constants-reduction",
            "modulus": p,
            "residue": via,
            "oracle_residue": direct,
            "eliminated_constants": names,
        });
        return Ok(via.to_string());
    }
    let exact = if inj {
        count_injective_solutions(&inst, &h)
    } else {
        oracle::count_solutions(&inst, &h).exact
    };
    match modulus {
        Some(p) => {
            crate::require_prime(p)?;
            let r: u64 = (&exact % p).try_into().expect("residue fits");
            report.body = json!({
                "via": "direct",
                "injective": inj,
                "modulus": p,
                "residue": r,
                "count": exact.to_string(),
            });
            Ok(r.to_string())
        }
        None => {
            report.body = json!({
                "via": "direct",
                "injective": inj,
                "count": exact.to_string(),
            });
            Ok(exact.to_string())
        }
    }
}

// ---------------------------------------------------------------------------
// reduce
// ---------------------------------------------------------------------------

fn cmd_reduce(structure: &str, p: u64, trace_path: Option<&str>, report: &mut Report) -> CmdResult {
    let h = load_structure(structure, report)?;
    let (reduced, trace) = p_reduce(&h, p)?;
    let doc = serde_json::to_value(structure_to_doc(&reduced)).expect("doc serializes");
    let trace_value = serde_json::to_value(&trace).expect("trace serializes");
    if let Some(path) = trace_path {
        let mut text = pretty(&trace_value);
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::Input(format!("cannot write `{path}`: {e}")))?;
    }
    report.body = json!({
        "reduced": doc,
        "steps": trace.steps.len(),
        "trace": trace_value,
    });
    Ok(pretty(&doc))
}

// ---------------------------------------------------------------------------
// eval-formula
// ---------------------------------------------------------------------------

fn cmd_eval_formula(
    structure: &str,
    formula: &str,
    report: &mut Report,
    guards: &Guards,
) -> CmdResult {
    let h = load_structure(structure, report)?;
    let f = load_formula(formula, &h, report)?;
    let rows = f.evaluate(&h, guards)?;
    let sig = f.free_sig();
    let named: Vec<Vec<String>> = rows
        .iter()
        .map(|t| {
            t.iter()
                .zip(&sig)
                .map(|(&e, &s)| h.elem_name(s, e).to_string())
                .collect()
        })
        .collect();
    report.body = json!({
        "free": f
            .free_vars()
            .iter()
            .map(|(n, s)| json!([n, h.sort_name(*s)]))
            .collect::<Vec<_>>(),
        "count": named.len(),
        "tuples": named,
    });
    let lines: Vec<String> = named.iter().map(|t| format!("({})", t.join(","))).collect();
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

fn named_tuple(h: &Structure, sorts: &[usize], t: &[u32]) -> String {
    let body: Vec<&str> = t.iter().zip(sorts).map(|(&e, &s)| h.elem_name(s, e)).collect();
    format!("({})", body.join(","))
}

fn cmd_analyze(structure: &str, p: u64, report: &mut Report, guards: &Guards) -> CmdResult {
    let h = load_structure(structure, report)?;
    crate::require_prime(p)?;
    let mut lines: Vec<String> = Vec::new();
    let mut relations: BTreeMap<String, Value> = BTreeMap::new();
    for r in 0..h.rel_count() {
        let name = h.rel_name(r).to_string();
        let sig = h.rel_sig(r).to_vec();
        let arity = sig.len();
        let tuples = h.rel_tuples(r).to_vec();
        let mut entry = serde_json::Map::new();
        entry.insert("arity".into(), json!(arity));
        entry.insert("tuples".into(), json!(tuples.len()));
        // Rectangularity over every binary view.
        match is_relation_rectangular(&tuples, arity)? {
            None => {
                entry.insert("rectangular".into(), json!(true));
                lines.push(format!("relation {name}: rectangular in every view"));
            }
            Some((view, RectVerdict::Witness { a, b, c, d })) => {
                let rest: Vec<usize> = (0..arity).filter(|i| !view.contains(i)).collect();
                let left: Vec<usize> = view.iter().map(|&i| sig[i]).collect();
                let right: Vec<usize> = rest.iter().map(|&i| sig[i]).collect();
                let an = named_tuple(&h, &left, &a);
                let bn = named_tuple(&h, &left, &b);
                let cn = named_tuple(&h, &right, &c);
                let dn = named_tuple(&h, &right, &d);
                lines.push(format!(
                    "relation {name}: not rectangular in view {view:?}; {an}{dn}, {bn}{cn}, {bn}{dn} present, corner {an}{cn} missing"
                ));
                entry.insert("rectangular".into(), json!(false));
                entry.insert(
                    "rect_witness".into(),
                    json!({"view": view, "a": an, "b": bn, "c": cn, "d": dn}),
                );
            }
            Some((_, RectVerdict::Ok)) => unreachable!("failing views carry witnesses"),
        }
        // Balancedness over every three-segment view (ternary and up).
        if arity >= 3 {
            let exact = balanced_everywhere(&tuples, arity, None)?;
            let modular = balanced_everywhere(&tuples, arity, Some(p))?;
            let describe = |v: &Option<(usize, usize)>| match v {
                None => "ok".to_string(),
                Some((k, l)) => format!("fails at {k}|{l}|{}", arity - k - l),
            };
            lines.push(format!(
                "relation {name}: balancedness {}, {p}-balancedness {}",
                describe(&exact),
                describe(&modular)
            ));
            entry.insert(
                "balanced".into(),
                json!({
                    "exact": exact.map(|(k, l)| vec![k, l]),
                    "modular": modular.map(|(k, l)| vec![k, l]),
                }),
            );
        }
        relations.insert(name, Value::Object(entry));
    }
    // Mal'tsev polymorphism.
    let maltsev = find_maltsev(&h, guards)?;
    lines.push(format!(
        "maltsev polymorphism: {}",
        if maltsev.is_some() { "found" } else { "none" }
    ));
    // Congruences: binary one-sort relations that are equivalences on their
    // whole sort, grouped by sort.
    let mut groups: BTreeMap<usize, Vec<(String, Congruence)>> = BTreeMap::new();
    for r in 0..h.rel_count() {
        let sig = h.rel_sig(r);
        if sig.len() == 2 && sig[0] == sig[1] {
            if let Ok(c) = Congruence::on_sort(&h, r) {
                groups.entry(sig[0]).or_default().push((h.rel_name(r).to_string(), c));
            }
        }
    }
    let mut permutability: BTreeMap<String, Value> = BTreeMap::new();
    for (sort, list) in &groups {
        let sort_name = h.sort_name(*sort).to_string();
        let names: Vec<&String> = list.iter().map(|(n, _)| n).collect();
        let congs: Vec<Congruence> = list.iter().map(|(_, c)| c.clone()).collect();
        let verdict = check_p_permutability(&congs, p)?;
        let (line, value) = match verdict {
            PermutabilityVerdict::Ok => (
                format!(
                    "congruences on {sort_name} ({}): {p}-permutable",
                    names.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(", ")
                ),
                json!({"congruences": names, "permutable": true}),
            ),
            PermutabilityVerdict::Witness { first, second, pair } => {
                let x = h.elem_name(*sort, pair.0[0]);
                let y = h.elem_name(*sort, pair.1[0]);
                (
                    format!(
                        "congruences on {sort_name}: {} and {} are not {p}-permutable; the products disagree at ({x}, {y})",
                        names[first], names[second]
                    ),
                    json!({
                        "congruences": names,
                        "permutable": false,
                        "first": names[first],
                        "second": names[second],
                        "pair": [x, y],
                    }),
                )
            }
        };
        lines.push(line);
        permutability.insert(sort_name, value);
    }
    report.body = json!({
        "relations": relations,
        "maltsev": maltsev.is_some(),
        "permutability": permutability,
    });
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------------------
// parity
// ---------------------------------------------------------------------------

fn cmd_parity(
    structure: &str,
    instance: &str,
    verify: bool,
    report: &mut Report,
    guards: &Guards,
) -> CmdResult {
    let h = load_structure(structure, report)?;
    let inst = load_instance(instance, &h, report)?;
    let ctx = ParityContext::search(h.clone(), guards)?;
    let (parity, levels) = parity_count_with_trace(&ctx, &inst, guards)?;
    let mut body = json!({
        "parity": parity,
        "levels": levels
            .iter()
            .map(|l| json!({
                "arity": l.arity,
                "relation_size": l.relation_size,
                "par_size": l.par_size,
                "tilde_size": l.tilde_size,
            }))
            .collect::<Vec<_>>(),
    });
    if verify {
        let direct = oracle::count_solutions_mod(&inst, &h, 2)?;
        if direct != parity {
            return Err(Failure::Mismatch(format!(
                "parity algorithm counts {parity}, the oracle counts {direct} (mod 2)"
            )));
        }
        body["oracle"] = json!(direct);
    }
    report.body = body;
    Ok(parity.to_string())
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

fn cmd_refine(
    structure: &str,
    instance: &str,
    p: u64,
    method: DomainMethod,
    report: &mut Report,
) -> CmdResult {
    let h = load_structure(structure, report)?;
    let inst = load_instance(instance, &h, report)?;
    let doms = match method {
        DomainMethod::Solver => solver_based_domains(&inst, &h)?,
        DomainMethod::Ac => arc_consistency(&inst, &h).assignment,
    };
    let out = refine_and_reduce_with(&inst, &h, p, &doms)?;
    let domains = match method {
        DomainMethod::Solver => "solver",
        DomainMethod::Ac => "ac",
    };
    let text_value = match &out.detail {
        None => json!({
            "residue": out.residue,
            "modulus": p,
            "method": out.method,
        }),
        Some(d) => {
            let refined = d.refinement.refined();
            json!({
                "structure": structure_to_doc(refined),
                "instance": instance_to_doc(&d.refined_instance, refined),
                "reduced": structure_to_doc(&d.reduced),
                "reduction_steps": d.reduction_steps,
                "residue": out.residue,
                "modulus": p,
                "method": out.method,
            })
        }
    };
    report.body = json!({
        "domains": domains,
        "result": text_value,
    });
    Ok(pretty(&text_value))
}

// ---------------------------------------------------------------------------
// gadget-scan
// ---------------------------------------------------------------------------

struct ScanCandidate {
    name: String,
    tuples: Vec<Vec<u32>>,
    arity: usize,
    sort: usize,
}

/// Per-block protection: a block stays usable while at least one of its
/// members survives every order-p reduction of the carrier, so each member
/// becomes one target (a graph vertex on its side; a projection tuple via
/// all its coordinates).
fn block_protection(
    g: &StandardGadget,
    carrier: CarrierKind,
    p: u64,
    guards: &Guards,
) -> Result<BTreeMap<&'static str, bool>> {
    let k = build_kr(g)?;
    let mut out = BTreeMap::new();
    match carrier {
        CarrierKind::Graph => {
            let s = k.as_structure()?;
            let blocks: [(&'static str, u8, &Vec<usize>); 4] = [
                ("a11", 1, &k.left_blocks.0),
                ("a12", 1, &k.left_blocks.1),
                ("a21", 2, &k.right_blocks.0),
                ("a22", 2, &k.right_blocks.1),
            ];
            for (label, side, ids) in blocks {
                let sort = if side == 1 { "L" } else { "R" };
                let targets: Vec<Vec<(String, String)>> = ids
                    .iter()
                    .map(|&i| vec![(sort.to_string(), k.vertex_name(side, i))])
                    .collect();
                out.insert(label, is_p_protected(&s, &targets, p, guards)?);
            }
        }
        CarrierKind::Relation => {
            let s = relation_structure(&g.tuples, g.arity, g.dom)?;
            let blocks: [(&'static str, &Vec<Vec<u32>>); 4] =
                [("a11", &g.a11), ("a12", &g.a12), ("a21", &g.a21), ("a22", &g.a22)];
            for (label, members) in blocks {
                let targets: Vec<Vec<(String, String)>> = members
                    .iter()
                    .map(|t| t.iter().map(|e| ("V".to_string(), e.to_string())).collect())
                    .collect();
                out.insert(label, is_p_protected(&s, &targets, p, guards)?);
            }
        }
    }
    Ok(out)
}

fn cmd_gadget_scan(
    structure: &str,
    p: u64,
    formula: Option<&str>,
    carrier: CarrierKind,
    report: &mut Report,
    guards: &Guards,
) -> CmdResult {
    let h = load_structure(structure, report)?;
    crate::require_prime(p)?;
    let mut candidates: Vec<ScanCandidate> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    match formula {
        Some(path) => {
            let f = load_formula(path, &h, report)?;
            let sig = f.free_sig();
            if sig.len() < 2 {
                return Err(Error::Precondition(
                    "gadget scan needs at least two free variables".into(),
                )
                .into());
            }
            if sig.iter().any(|&s| s != sig[0]) {
                return Err(Error::Precondition(
                    "gadget scan needs every free variable on one sort".into(),
                )
                .into());
            }
            candidates.push(ScanCandidate {
                name: "formula".into(),
                tuples: f.evaluate(&h, guards)?,
                arity: sig.len(),
                sort: sig[0],
            });
        }
        None => {
            for r in 0..h.rel_count() {
                let sig = h.rel_sig(r);
                let name = h.rel_name(r).to_string();
                if sig.len() < 2 {
                    continue;
                }
                if sig.iter().any(|&s| s != sig[0]) {
                    skipped.push(name);
                    continue;
                }
                candidates.push(ScanCandidate {
                    name,
                    tuples: h.rel_tuples(r).to_vec(),
                    arity: sig.len(),
                    sort: sig[0],
                });
            }
        }
    }
    let carrier_name = match carrier {
        CarrierKind::Graph => "graph",
        CarrierKind::Relation => "relation",
    };
    let mut lines: Vec<String> = Vec::new();
    let mut results: BTreeMap<String, Value> = BTreeMap::new();
    for cand in &candidates {
        let dom = h.sort_size(cand.sort) as u32;
        let mut entry = serde_json::Map::new();
        entry.insert("arity".into(), json!(cand.arity));
        entry.insert("tuples".into(), json!(cand.tuples.len()));
        let mut obstruction = None;
        for split in 1..cand.arity {
            if let Some(o) = find_rect_obstruction(&cand.tuples, cand.arity, split)? {
                obstruction = Some(o);
                break;
            }
        }
        let sorts = vec![cand.sort; cand.arity];
        match &obstruction {
            None => {
                entry.insert("obstruction".into(), Value::Null);
                lines.push(format!("{}: rectangular in every split view", cand.name));
            }
            Some(o) => {
                let left = &sorts[..o.split];
                let right = &sorts[o.split..];
                entry.insert(
                    "obstruction".into(),
                    json!({
                        "split": o.split,
                        "a": named_tuple(&h, left, &o.a),
                        "b": named_tuple(&h, left, &o.b),
                        "c": named_tuple(&h, right, &o.c),
                        "d": named_tuple(&h, right, &o.d),
                    }),
                );
                lines.push(format!(
                    "{}: obstruction at split {} — a={}, b={}, c={}, d={} with (b,d) missing",
                    cand.name,
                    o.split,
                    named_tuple(&h, left, &o.a),
                    named_tuple(&h, left, &o.b),
                    named_tuple(&h, right, &o.c),
                    named_tuple(&h, right, &o.d),
                ));
            }
        }
        let gadget = find_standard_gadget(&cand.tuples, cand.arity, dom)?;
        match &gadget {
            None => {
                entry.insert("gadget".into(), Value::Null);
                lines.push(format!("{}: no standard gadget", cand.name));
            }
            Some(g) => {
                let protection = block_protection(g, carrier, p, guards)?;
                let blocks = json!({
                    "split": g.split,
                    "a11": g.a11.len(),
                    "a12": g.a12.len(),
                    "a21": g.a21.len(),
                    "a22": g.a22.len(),
                });
                entry.insert(
                    "gadget".into(),
                    json!({
                        "blocks": blocks,
                        "carrier": carrier_name,
                        "protected": protection,
                    }),
                );
                let verdicts: Vec<String> = protection
                    .iter()
                    .map(|(b, ok)| format!("{b} {}", if *ok { "protected" } else { "unprotected" }))
                    .collect();
                lines.push(format!(
                    "{}: gadget at split {} with blocks {}/{}/{}/{}; {} carrier mod {p}: {}",
                    cand.name,
                    g.split,
                    g.a11.len(),
                    g.a12.len(),
                    g.a21.len(),
                    g.a22.len(),
                    carrier_name,
                    verdicts.join(", "),
                ));
            }
        }
        results.insert(cand.name.clone(), Value::Object(entry));
    }
    for name in &skipped {
        lines.push(format!("{name}: skipped (signature mixes sorts)"));
    }
    report.body = json!({
        "carrier": carrier_name,
        "modulus": p,
        "results": results,
        "skipped": skipped,
    });
    Ok(lines.join("\n"))
}

// ---------------------------------------------------------------------------
// binarize
// ---------------------------------------------------------------------------

fn cmd_binarize(structure: &str, instance: Option<&str>, report: &mut Report) -> CmdResult {
    let h = load_structure(structure, report)?;
    let bz = binarize(&h)?;
    let sdoc = serde_json::to_value(structure_to_doc(bz.binarized())).expect("doc serializes");
    match instance {
        None => {
            report.body = json!({ "structure": sdoc });
            Ok(pretty(&sdoc))
        }
        Some(path) => {
            let inst = load_instance(path, &h, report)?;
            let bi = binarize_instance(&inst, &h, &bz)?;
            let idoc = serde_json::to_value(instance_to_doc(&bi.instance, bz.binarized()))
                .expect("doc serializes");
            let both = json!({ "structure": sdoc, "instance": idoc });
            report.body = both.clone();
            Ok(pretty(&both))
        }
    }
}

// ---------------------------------------------------------------------------
// regress
// ---------------------------------------------------------------------------

fn cmd_regress(report: &mut Report) -> CmdResult {
    let outcomes = run_regression();
    let lines: Vec<String> = outcomes
        .iter()
        .map(|o| {
            if o.ok {
                format!("ok   {} — {}", o.name, o.detail)
            } else {
                format!("FAIL {} — {}", o.name, o.detail)
            }
        })
        .collect();
    let failed = outcomes.iter().filter(|o| !o.ok).count();
    report.body = json!({
        "checks": outcomes
            .iter()
            .map(|o| json!({"name": o.name, "ok": o.ok, "detail": o.detail}))
            .collect::<Vec<_>>(),
        "passed": outcomes.len() - failed,
        "failed": failed,
    });
    if failed > 0 {
        return Err(Failure::Mismatch(format!(
            "{failed} of {} regression checks failed\n{}",
            outcomes.len(),
            lines.join("\n")
        )));
    }
    Ok(format!(
        "{}\nall {} checks passed",
        lines.join("\n"),
        outcomes.len()
    ))
}

/// Outcome of one regression check.
#[derive(Debug, Clone)]
pub struct RegressOutcome {
    pub name: &'static str,
    pub ok: bool,
    /// Confirmation of the recorded fact, or the divergent value.
    pub detail: String,
}

/// Re-checks the recorded facts of every bundled fixture with default
/// guards (the suite is fixed; the guard override does not apply).
pub fn run_regression() -> Vec<RegressOutcome> {
    run_regression_with(&|_| None)
}

type Check = std::result::Result<String, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Regression suite with fixture injection: `substitute` may replace a
/// fixture structure by name (`three-elem-split`, `staircase-2`,
/// `staircase-3`, `staircase-bare-2`, `five-elem-skew`,
/// `seven-point-two-equivalences`, `six-point-interchangeable`,
/// `rigid-digraph`), which the tests use to prove the suite catches
/// divergence from the recorded values.
pub fn run_regression_with(substitute: &dyn Fn(&str) -> Option<Structure>) -> Vec<RegressOutcome> {
    let guards = Guards::default();
    let fallible = |name: &str, make: &dyn Fn() -> Result<Structure>| -> std::result::Result<Structure, String> {
        match substitute(name) {
            Some(h) => Ok(h),
            None => make().map_err(err),
        }
    };
    let fixed = |name: &str, make: &dyn Fn() -> Structure| -> Structure {
        substitute(name).unwrap_or_else(make)
    };
    let tp_inst = |h: &Structure, cons: &[(&[&str], &str)]| -> std::result::Result<Instance, String> {
        let mut names: BTreeSet<&str> = BTreeSet::new();
        for (scope, _) in cons {
            names.extend(*scope);
        }
        Instance::new(
            h,
            names.iter().map(|v| (v.to_string(), "T".into())).collect(),
            cons.iter()
                .map(|(sc, r)| (sc.iter().map(|s| s.to_string()).collect(), r.to_string()))
                .collect(),
        )
        .map_err(err)
    };

    let mut out: Vec<RegressOutcome> = Vec::new();
    let mut run = |name: &'static str, body: &mut dyn FnMut() -> Check| match body() {
        Ok(detail) => out.push(RegressOutcome { name, ok: true, detail }),
        Err(detail) => out.push(RegressOutcome { name, ok: false, detail }),
    };

    run("modular-scope-grouping", &mut || {
        let h = fixed("three-elem-split", &fixtures::three_elem_split);
        let project = |blocks: Vec<(Vec<String>, BlockMode)>| -> std::result::Result<Vec<String>, String> {
            let f = MppFormula::new(
                &h,
                vec![("x".into(), "H".into())],
                blocks,
                vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
            )
            .map_err(err)?;
            let mut rows = f.evaluate(&h, &guards).map_err(err)?;
            rows.sort();
            Ok(rows.iter().map(|t| h.elem_name(0, t[0]).to_string()).collect())
        };
        let split = project(vec![
            (vec!["y".into()], BlockMode::Mod(3)),
            (vec!["z".into()], BlockMode::Mod(3)),
        ])?;
        if split != ["1", "2"] {
            return Err(format!(
                "split mod-3 blocks define {{{}}}, expected {{1,2}}",
                split.join(",")
            ));
        }
        let grouped = project(vec![(vec!["y".into(), "z".into()], BlockMode::Mod(3))])?;
        if grouped != ["2"] {
            return Err(format!(
                "the grouped mod-3 block defines {{{}}}, expected {{2}}",
                grouped.join(",")
            ));
        }
        Ok("split blocks keep {1,2}, the grouped block keeps {2}".into())
    });

    run("staircase-rigidity", &mut || {
        for p in [2u64, 3] {
            let h = fallible(&format!("staircase-{p}"), &|| fixtures::t_p(p))?;
            if !is_p_rigid(&h, p).map_err(err)? {
                return Err(format!("the constant-full p={p} template has an order-{p} automorphism"));
            }
        }
        let bare = fallible("staircase-bare-2", &|| fixtures::t_p_bare(2))?;
        let pi = find_order_p_automorphism(&bare, 2)
            .map_err(err)?
            .ok_or_else(|| "the bare template lost its low swap".to_string())?;
        if pi.maps[0][0] != 1 || pi.maps[0][1] != 0 {
            return Err(format!(
                "the bare template's automorphism sends 0 to {}, expected the 0/1 swap",
                bare.elem_name(0, pi.maps[0][0])
            ));
        }
        Ok("constant-full templates are rigid; the bare one swaps its low pair".into())
    });

    run("staircase-pipeline", &mut || {
        let mut residues = Vec::new();
        for p in [2u64, 3] {
            let h = fallible(&format!("staircase-{p}"), &|| fixtures::t_p(p))?;
            let top = format!("c{p}");
            let blocked = tp_inst(&h, &[(&["v"], "c0"), (&["v", "w"], "R"), (&["w"], &top)])?;
            let got = solve_tp(&blocked, &h, p).map_err(err)?;
            if got != 0 {
                return Err(format!("a blocked chain counts {got} mod {p}, expected 0"));
            }
            let chain = tp_inst(&h, &[(&["v", "w"], "R"), (&["w", "x"], "R"), (&["x"], "c2")])?;
            let got = solve_tp(&chain, &h, p).map_err(err)?;
            let want = oracle::count_solutions_mod(&chain, &h, p).map_err(err)?;
            if got != want {
                return Err(format!("the pipeline counts {got} mod {p}, the oracle counts {want}"));
            }
            residues.push(format!("{got} (mod {p})"));
        }
        let h = fallible("staircase-2", &|| fixtures::t_p(2))?;
        let inst = tp_inst(&h, &[(&["v"], "c0"), (&["v", "w"], "R")])?;
        let out = refine_and_reduce(&inst, &h, 2).map_err(err)?;
        if out.method != "product" {
            return Err(format!(
                "reduction ended in method `{}`, expected the product shortcut",
                out.method
            ));
        }
        if out.residue != 1 {
            return Err(format!("the product shortcut counts {}, expected 1", out.residue));
        }
        Ok(format!(
            "chains count {}; the reduced template counts by domain products",
            residues.join(" and ")
        ))
    });

    run("staircase-refined-cycle", &mut || {
        let bare = fallible("staircase-bare-2", &|| fixtures::t_p_bare(2))?;
        let family: Vec<RefineDomain> = fixtures::t_p_refinement_domains(2)
            .map_err(err)?
            .into_iter()
            .enumerate()
            .map(|(k, (sort, elems))| RefineDomain {
                name: match k {
                    0 => "all".to_string(),
                    5 => "top".to_string(),
                    6 => "mix".to_string(),
                    _ => format!("e{}", k - 1),
                },
                sort,
                elems,
            })
            .collect();
        let refinement = build_refinement(&bare, &family).map_err(err)?;
        let tstar = refinement.refined();
        // The recorded symmetry: swap the low pair inside the full-domain
        // copy and the mixed copy, fix everything else.
        let maps: SortMaps = (0..tstar.sort_count())
            .map(|s| {
                let mut m: Vec<u32> = (0..tstar.sort_size(s) as u32).collect();
                if matches!(tstar.sort_name(s), "all" | "mix") {
                    let a = tstar.elem_index(s, "0").expect("copy keeps element 0") as usize;
                    let b = tstar.elem_index(s, "1").expect("copy keeps element 1") as usize;
                    m.swap(a, b);
                }
                m
            })
            .collect();
        let pi = Automorphism::from_maps(maps);
        let fixed_sub = fix_substructure(tstar, &pi)
            .map_err(|e| format!("the low swap is not an automorphism of the refined template: {e}"))?;
        let copy = |name: &str| -> Vec<String> {
            fixed_sub
                .sort_index(name)
                .map(|s| fixed_sub.elem_names(s).to_vec())
                .unwrap_or_default()
        };
        if copy("all") != ["2", "3"] {
            return Err(format!(
                "the full copy's fixed points are {{{}}}, expected {{2,3}}",
                copy("all").join(",")
            ));
        }
        if copy("mix") != ["3"] {
            return Err(format!(
                "the mixed copy's fixed points are {{{}}}, expected {{3}}",
                copy("mix").join(",")
            ));
        }
        Ok("the refined template's low swap fixes exactly the top pair and the mixed copy's top".into())
    });

    run("skew-projection-maltsev", &mut || {
        let h = fixed("five-elem-skew", &fixtures::five_elem_skew);
        let f = MppFormula::new(
            &h,
            vec![("x".into(), "H".into()), ("y".into(), "H".into())],
            vec![(vec!["z".into()], BlockMode::Mod(2))],
            vec![("R".into(), vec!["x".into(), "y".into(), "z".into()])],
        )
        .map_err(err)?;
        let mut rows = f.evaluate(&h, &guards).map_err(err)?;
        rows.sort();
        let triangle = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
        if rows != triangle {
            return Err(format!("the mod-2 projection is {rows:?}, expected the triangle {triangle:?}"));
        }
        match is_relation_rectangular(&rows, 2).map_err(err)? {
            Some((_, RectVerdict::Witness { a, c, .. })) => {
                if (a, c) != (vec![1], vec![0]) {
                    return Err("the projection's witness names an unexpected missing corner".into());
                }
            }
            _ => return Err("the projection reported rectangular; a witness was expected".into()),
        }
        let maltsev = find_maltsev(&h, &guards)
            .map_err(err)?
            .ok_or_else(|| "no Mal'tsev polymorphism found".to_string())?;
        if !is_polymorphism(&h, &maltsev) || !satisfies_maltsev_identities(&h, &maltsev) {
            return Err("the returned operation fails re-verification".into());
        }
        Ok("the projection is the non-rectangular triangle; a Mal'tsev polymorphism exists".into())
    });

    run("seven-point-composition", &mut || {
        let h = fixed("seven-point-two-equivalences", &fixtures::seven_point_two_equivalences);
        let rel = |n: &str| h.rel_index(n).ok_or_else(|| format!("no relation `{n}`"));
        let cr = Congruence::on_sort(&h, rel("R")?).map_err(err)?;
        let cq = Congruence::on_sort(&h, rel("Q")?).map_err(err)?;
        let verdict = check_p_permutability(&[cr.clone(), cq.clone()], 2).map_err(err)?;
        let PermutabilityVerdict::Witness { pair, .. } = verdict else {
            return Err("the pair reported 2-permutable; a witness was expected".into());
        };
        let x = h.elem_name(0, pair.0[0]);
        let y = h.elem_name(0, pair.1[0]);
        if (x, y) != ("a1", "a6") {
            return Err(format!("the witness pair is ({x}, {y}), expected (a1, a6)"));
        }
        let rq = compose_tuples_p(&cr.pairs, &cq.pairs, 2).map_err(err)?;
        let qr = compose_tuples_p(&cq.pairs, &cr.pairs, 2).map_err(err)?;
        let target = vec![0u32, 5];
        if !rq.contains(&target) || qr.contains(&target) {
            return Err(format!(
                "(a1,a6) sits in the first modular product: {}, in the second: {}; expected true then false",
                rq.contains(&target),
                qr.contains(&target)
            ));
        }
        Ok("the modular products disagree exactly as recorded at (a1, a6)".into())
    });

    run("interchangeable-permutability", &mut || {
        let h = fixed("six-point-interchangeable", &fixtures::six_point_interchangeable);
        let rel = |n: &str| h.rel_index(n).ok_or_else(|| format!("no relation `{n}`"));
        let cr = Congruence::on_sort(&h, rel("R")?).map_err(err)?;
        let cq = Congruence::on_sort(&h, rel("Q")?).map_err(err)?;
        match check_p_permutability(&[cr, cq], 2).map_err(err)? {
            PermutabilityVerdict::Ok => {}
            PermutabilityVerdict::Witness { pair, .. } => {
                return Err(format!(
                    "a 2-permutability witness appeared at ({}, {})",
                    h.elem_name(0, pair.0[0]),
                    h.elem_name(0, pair.1[0])
                ));
            }
        }
        if find_maltsev(&h, &guards).map_err(err)?.is_some() {
            return Err("a Mal'tsev polymorphism was found; none should exist".into());
        }
        Ok("mod-2 compositions commute and no Mal'tsev polymorphism exists".into())
    });

    run("rigid-digraph-square", &mut || {
        let h = fixed("rigid-digraph", &fixtures::four_vertex_rigid_digraph);
        let auts = enumerate_automorphisms(&h);
        if auts.len() != 1 || !auts[0].is_identity() {
            return Err(format!(
                "the digraph has {} automorphisms, expected only the identity",
                auts.len()
            ));
        }
        let hh = power(&h, 2).map_err(err)?;
        let ad = hh
            .elem_index(0, "(a,d)")
            .ok_or_else(|| "the square lost vertex (a,d)".to_string())?;
        let cd = hh
            .elem_index(0, "(c,d)")
            .ok_or_else(|| "the square lost vertex (c,d)".to_string())?;
        let square_auts = enumerate_automorphisms(&hh);
        if !square_auts
            .iter()
            .any(|a| a.order == 2 && a.maps[0][ad as usize] == cd)
        {
            return Err("no order-2 automorphism of the square swaps (a,d) with (c,d)".into());
        }
        Ok(format!(
            "the square regains symmetry: {} automorphisms including the sink-pair swap",
            square_auts.len()
        ))
    });

    out
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        std::iter::once("modcsp")
            .chain(parts.iter().copied())
            .map(str::to_string)
            .collect()
    }

    #[test]
    fn usage_errors_exit_64_and_help_exits_0() {
        assert_eq!(run(&argv(&["no-such-command"])), 64);
        assert_eq!(run(&argv(&["count"])), 64, "missing required flags");
        assert_eq!(run(&argv(&["--help"])), 0);
        assert_eq!(run(&argv(&["count", "--help"])), 0);
    }

    #[test]
    fn missing_files_exit_1() {
        assert_eq!(
            run(&argv(&["count", "--structure", "/nonexistent.json", "--instance", "/nonexistent.json"])),
            1
        );
        assert_eq!(run(&argv(&["reduce", "--structure", "/nonexistent.json", "--mod", "2"])), 1);
    }

    #[test]
    fn regression_suite_is_green() {
        let outcomes = run_regression();
        assert_eq!(outcomes.len(), 8);
        for o in &outcomes {
            assert!(o.ok, "{} failed: {}", o.name, o.detail);
            assert!(!o.detail.is_empty());
        }
    }

    #[test]
    fn regression_suite_catches_a_mutated_fixture() {
        // Drop one relation tuple from the split fixture; the scope check
        // must fail and name the divergent defined set.
        let mutated = Structure::new(
            vec![("H".into(), vec!["0".into(), "1".into(), "2".into()])],
            vec![(
                "R".into(),
                vec!["H".into(); 3],
                [["1", "0", "0"], ["1", "1", "0"], ["1", "1", "1"]]
                    .iter()
                    .map(|t| t.iter().map(|s| s.to_string()).collect())
                    .collect(),
            )],
        )
        .unwrap();
        let outcomes = run_regression_with(&|name| {
            (name == "three-elem-split").then(|| mutated.clone())
        });
        let hit = outcomes.iter().find(|o| o.name == "modular-scope-grouping").unwrap();
        assert!(!hit.ok);
        assert!(hit.detail.contains("expected {1,2}"), "{}", hit.detail);
        assert!(hit.detail.contains("{1}"), "names the divergent set: {}", hit.detail);
        // The untouched checks still pass.
        assert!(outcomes.iter().filter(|o| o.name != "modular-scope-grouping").all(|o| o.ok));
    }
}
