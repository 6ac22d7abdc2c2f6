//! JSON interchange for structures, instances, and formulas.
//!
//! The canonical wire shapes, used by every CLI command (unknown fields are
//! rejected everywhere):
//!
//! ```json
//! { "sorts": {"V": ["a","b"]}, "relations": {"E": {"signature": ["V","V"], "tuples": [["a","b"]]}} }
//! { "variables": {"x": "V"}, "constraints": [{"scope": ["x","x"], "relation": "E"}] }
//! { "free": {"x": "V"}, "blocks": [{"vars": ["y"], "mode": "mod", "p": 2}], "atoms": [{"relation": "E", "args": ["x","y"]}] }
//! ```
//!
//! Maps are ordered so serialization is deterministic; instances and formulas
//! deserialize against a template structure that resolves sorts and symbols.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mpp::{BlockMode, MppFormula};
use crate::structure::{ConstraintRel, Instance, Structure};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureDoc {
    pub sorts: BTreeMap<String, Vec<String>>,
    pub relations: BTreeMap<String, RelationDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDoc {
    pub signature: Vec<String>,
    pub tuples: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub variables: BTreeMap<String, String>,
    pub constraints: Vec<ConstraintDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDoc {
    pub scope: Vec<String>,
    pub relation: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormulaDoc {
    pub free: BTreeMap<String, String>,
    pub blocks: Vec<BlockDoc>,
    pub atoms: Vec<AtomDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub vars: Vec<String>,
    pub mode: ModeDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeDoc {
    Exists,
    Mod,
}

// -- conversions ------------------------------------------------------------

pub fn structure_to_doc(h: &Structure) -> StructureDoc {
    let sorts = (0..h.sort_count())
        .map(|s| (h.sort_name(s).to_string(), h.elem_names(s).to_vec()))
        .collect();
    let relations = (0..h.rel_count())
        .map(|r| {
            let sig = h.rel_sig(r);
            (
                h.rel_name(r).to_string(),
                RelationDoc {
                    signature: sig.iter().map(|&s| h.sort_name(s).to_string()).collect(),
                    tuples: h
                        .rel_tuples(r)
                        .iter()
                        .map(|t| {
                            sig.iter()
                                .zip(t)
                                .map(|(&s, &e)| h.elem_name(s, e).to_string())
                                .collect()
                        })
                        .collect(),
                },
            )
        })
        .collect();
    StructureDoc { sorts, relations }
}

pub fn structure_from_doc(doc: &StructureDoc) -> Result<Structure> {
    Structure::new(
        doc.sorts
            .iter()
            .map(|(n, es)| (n.clone(), es.clone()))
            .collect(),
        doc.relations
            .iter()
            .map(|(n, r)| (n.clone(), r.signature.clone(), r.tuples.clone()))
            .collect(),
    )
    .map_err(Error::from)
}

pub fn instance_to_doc(p: &Instance, h: &Structure) -> InstanceDoc {
    InstanceDoc {
        variables: p
            .vars()
            .iter()
            .map(|(n, s)| (n.clone(), h.sort_name(*s).to_string()))
            .collect(),
        constraints: p
            .constraints()
            .iter()
            .map(|c| ConstraintDoc {
                scope: c.scope.iter().map(|&v| p.var_name(v).to_string()).collect(),
                relation: match c.rel {
                    ConstraintRel::Eq => "=".to_string(),
                    ConstraintRel::Sym(r) => h.rel_name(r).to_string(),
                },
            })
            .collect(),
    }
}

pub fn instance_from_doc(doc: &InstanceDoc, h: &Structure) -> Result<Instance> {
    Instance::new(
        h,
        doc.variables
            .iter()
            .map(|(n, s)| (n.clone(), s.clone()))
            .collect(),
        doc.constraints
            .iter()
            .map(|c| (c.scope.clone(), c.relation.clone()))
            .collect(),
    )
    .map_err(Error::from)
}

pub fn formula_to_doc(f: &MppFormula, h: &Structure) -> FormulaDoc {
    let free = f
        .free_vars()
        .iter()
        .map(|(n, s)| (n.clone(), h.sort_name(*s).to_string()))
        .collect();
    let blocks = f
        .blocks()
        .iter()
        .map(|b| {
            let vars = b
                .vars
                .iter()
                .map(|&i| f.bound_vars()[i].0.clone())
                .collect();
            match b.mode {
                BlockMode::Exists => BlockDoc {
                    vars,
                    mode: ModeDoc::Exists,
                    p: None,
                },
                BlockMode::Mod(p) => BlockDoc {
                    vars,
                    mode: ModeDoc::Mod,
                    p: Some(p),
                },
            }
        })
        .collect();
    let nf = f.free_vars().len();
    let var_name = |v: usize| {
        if v < nf {
            f.free_vars()[v].0.clone()
        } else {
            f.bound_vars()[v - nf].0.clone()
        }
    };
    let atoms = f
        .atoms()
        .iter()
        .map(|a| AtomDoc {
            relation: match a.rel {
                crate::mpp::AtomRel::Eq => "=".to_string(),
                crate::mpp::AtomRel::Sym(r) => h.rel_name(r).to_string(),
            },
            args: a.args.iter().map(|&v| var_name(v)).collect(),
        })
        .collect();
    FormulaDoc {
        free,
        blocks,
        atoms,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomDoc {
    pub relation: String,
    pub args: Vec<String>,
}

pub fn formula_from_doc(doc: &FormulaDoc, h: &Structure) -> Result<MppFormula> {
    let blocks = doc
        .blocks
        .iter()
        .map(|b| {
            let mode = match (b.mode, b.p) {
                (ModeDoc::Exists, None) => Ok(BlockMode::Exists),
                (ModeDoc::Exists, Some(_)) => Err(Error::Input(
                    "existential block must not carry a modulus".into(),
                )),
                (ModeDoc::Mod, Some(p)) => Ok(BlockMode::Mod(p)),
                (ModeDoc::Mod, None) => {
                    Err(Error::Input("modular block requires a modulus `p`".into()))
                }
            }?;
            Ok((b.vars.clone(), mode))
        })
        .collect::<Result<Vec<_>>>()?;
    MppFormula::new(
        h,
        doc.free
            .iter()
            .map(|(n, s)| (n.clone(), s.clone()))
            .collect(),
        blocks,
        doc.atoms
            .iter()
            .map(|a| (a.relation.clone(), a.args.clone()))
            .collect(),
    )
}

// -- text and file helpers --------------------------------------------------

/// Parses a structure document; `origin` names the source in error messages.
pub fn parse_structure(text: &str, origin: &str) -> Result<Structure> {
    let doc: StructureDoc = serde_json::from_str(text)
        .map_err(|e| Error::Input(format!("`{origin}` is not a structure document: {e}")))?;
    structure_from_doc(&doc)
}

/// Parses an instance document over `h`; `origin` names the source in error
/// messages.
pub fn parse_instance(text: &str, h: &Structure, origin: &str) -> Result<Instance> {
    let doc: InstanceDoc = serde_json::from_str(text)
        .map_err(|e| Error::Input(format!("`{origin}` is not an instance document: {e}")))?;
    instance_from_doc(&doc, h)
}

/// Parses a formula document over `h`; `origin` names the source in error
/// messages.
pub fn parse_formula(text: &str, h: &Structure, origin: &str) -> Result<MppFormula> {
    let doc: FormulaDoc = serde_json::from_str(text)
        .map_err(|e| Error::Input(format!("`{origin}` is not a formula document: {e}")))?;
    formula_from_doc(&doc, h)
}

fn read_file(path: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read `{path}`: {e}")))
}

pub fn read_structure(path: &str) -> Result<Structure> {
    parse_structure(&read_file(path)?, path)
}

pub fn read_instance(path: &str, h: &Structure) -> Result<Instance> {
    parse_instance(&read_file(path)?, h, path)
}

pub fn read_formula(path: &str, h: &Structure) -> Result<MppFormula> {
    parse_formula(&read_file(path)?, h, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_round_trips() {
        let text = r#"{"sorts":{"V":["a","b"]},"relations":{"E":{"signature":["V","V"],"tuples":[["a","b"],["b","a"]]}}}"#;
        let doc: StructureDoc = serde_json::from_str(text).unwrap();
        let h = structure_from_doc(&doc).unwrap();
        let doc2 = structure_to_doc(&h);
        let h2 = structure_from_doc(&doc2).unwrap();
        assert_eq!(h, h2);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"sorts":{},"relations":{},"extra":1}"#;
        assert!(serde_json::from_str::<StructureDoc>(text).is_err());
        let text = r#"{"variables":{},"constraints":[],"comment":"x"}"#;
        assert!(serde_json::from_str::<InstanceDoc>(text).is_err());
    }

    #[test]
    fn formula_doc_round_trips() {
        let h = structure_from_doc(
            &serde_json::from_str(
                r#"{"sorts":{"V":["0","1"]},"relations":{"E":{"signature":["V","V"],"tuples":[["0","1"]]}}}"#,
            )
            .unwrap(),
        )
        .unwrap();
        let text = r#"{"free":{"x":"V"},"blocks":[{"vars":["y"],"mode":"mod","p":2}],"atoms":[{"relation":"E","args":["x","y"]}]}"#;
        let doc: FormulaDoc = serde_json::from_str(text).unwrap();
        let f = formula_from_doc(&doc, &h).unwrap();
        let doc2 = formula_to_doc(&f, &h);
        let f2 = formula_from_doc(&doc2, &h).unwrap();
        assert_eq!(f, f2);
    }
}
