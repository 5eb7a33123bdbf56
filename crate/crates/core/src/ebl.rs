//! Grammar specialization by chunking approved derivations into macro-rules.
//!
//! A derivation is cut at its root, at nodes whose category is in the cut
//! set, and (by default) at the phrasal layer. Each piece becomes a
//! macro-rule whose body is the piece's tree of rule ids with `_` marking the
//! frontier. The macro's features are the composition of its rules' features
//! so it applies in one unification step.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::chart::{build, from_signature, Constituent, Derivation, Production};
use crate::grammar::{load_document, Category, FeatureTerm, Grammar, GrammarError, RuleKind, Subst, Value};
use crate::lr::{compile_lr, LrTable};
use crate::sexpr::SExpr;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum EblError {
    #[error("rule `{0}` is not in the grammar")]
    UnknownRule(String),
    #[error("corrupted macro body for `{id}`: {message}")]
    BadBody { id: String, message: String },
    #[error("bad treebank derivation for sentence {id}: {message}")]
    BadDerivation { id: u64, message: String },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("not a specialized grammar file (missing `specialized:` header)")]
    NotSpecialized,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutCriteria {
    pub cut_categories: BTreeSet<String>,
    /// Let chunks extend through phrasal rules down to lexical items instead
    /// of stopping at the phrasal layer.
    pub include_lexical_frontier: bool,
    /// Macro-rules seen fewer times are dropped.
    pub min_freq: u32,
}

impl Default for CutCriteria {
    fn default() -> Self {
        CutCriteria {
            cut_categories: ["NP".to_string()].into_iter().collect(),
            include_lexical_frontier: false,
            min_freq: 1,
        }
    }
}

impl CutCriteria {
    pub fn cuts(cats: &[&str]) -> Self {
        CutCriteria {
            cut_categories: cats.iter().map(|s| s.to_string()).collect(),
            ..CutCriteria::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroRule {
    pub id: String,
    pub lhs: Category,
    pub rhs: Vec<Category>,
    /// Tree of original rule ids; `_` marks a frontier slot.
    pub body: SExpr,
    pub frequency: u32,
    pub level: u8,
    pub(crate) var_count: u32,
}

impl MacroRule {
    pub fn production(&self) -> Production {
        Production::new(&self.id, self.lhs.clone(), self.rhs.clone(), self.level, self.var_count)
    }
}

/// Composes the rules of a body into one rule shape.
pub fn compose(body: &SExpr, grammar: &Grammar) -> Result<(Category, Vec<Category>, u8, u32), EblError> {
    let bad = |m: String| EblError::BadBody {
        id: body.to_string(),
        message: m,
    };
    let total = count_vars(body, grammar)?;
    let mut subst = Subst::with_capacity(total);
    let mut offset = 0;
    let mut frontier = Vec::new();
    let (root_sym, root_lhs, level) = instantiate(body, grammar, &mut subst, &mut offset, &mut frontier).map_err(bad)?;
    // canonical variable numbering over lhs then frontier
    let mut map: HashMap<u32, u32> = HashMap::new();
    let mut renumber = |t: &FeatureTerm| {
        let t = t.resolved(&subst);
        let pairs: Vec<(String, Value)> = t
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    Value::Var(i) => {
                        let next = map.len() as u32;
                        Value::Var(*map.entry(*i).or_insert(next))
                    }
                    a => a.clone(),
                };
                (k.to_string(), v)
            })
            .collect();
        FeatureTerm::from_pairs(pairs).expect("unique names")
    };
    let lhs = Category {
        symbol: root_sym,
        features: renumber(&root_lhs),
    };
    let rhs: Vec<Category> = frontier
        .iter()
        .map(|(s, t)| Category {
            symbol: s.clone(),
            features: renumber(t),
        })
        .collect();
    if rhs.is_empty() {
        return Err(EblError::BadBody {
            id: body.to_string(),
            message: "body has no frontier".into(),
        });
    }
    let vars = map.len() as u32;
    Ok((lhs, rhs, level, vars))
}

fn count_vars(body: &SExpr, grammar: &Grammar) -> Result<u32, EblError> {
    match body {
        SExpr::Atom(_) => Ok(0),
        SExpr::List(items) => {
            let id = items.first().and_then(SExpr::as_atom).unwrap_or("");
            let rule = grammar.rule(id).ok_or_else(|| EblError::UnknownRule(id.to_string()))?;
            let mut n = rule.var_count;
            for c in &items[1..] {
                n += count_vars(c, grammar)?;
            }
            Ok(n)
        }
    }
}

type Frontier = Vec<(Arc<str>, FeatureTerm)>;

fn instantiate(
    node: &SExpr,
    grammar: &Grammar,
    subst: &mut Subst,
    offset: &mut u32,
    frontier: &mut Frontier,
) -> Result<(Arc<str>, FeatureTerm, u8), String> {
    let SExpr::List(items) = node else {
        return Err(format!("expected a rule node, found `{node}`"));
    };
    let id = items.first().and_then(SExpr::as_atom).ok_or("node without rule id")?;
    let rule = grammar.rule(id).ok_or_else(|| format!("unknown rule `{id}`"))?;
    if rule.rhs.len() != items.len() - 1 {
        return Err(format!("rule `{id}` takes {} daughters", rule.rhs.len()));
    }
    let mine = *offset;
    *offset += rule.var_count;
    for (pat, child) in rule.rhs.iter().zip(&items[1..]) {
        let pat_t = pat.features.shifted(mine);
        match child {
            SExpr::Atom(a) if a == "_" => frontier.push((pat.symbol.clone(), pat_t)),
            SExpr::Atom(a) => return Err(format!("unexpected leaf `{a}` in body")),
            SExpr::List(_) => {
                let (sym, lhs, _) = instantiate(child, grammar, subst, offset, frontier)?;
                if sym != pat.symbol {
                    return Err(format!("`{id}` expects {} but got {sym}", pat.symbol));
                }
                if !subst.unify_terms(&pat_t, &lhs) {
                    return Err(format!("features clash under `{id}`"));
                }
            }
        }
    }
    Ok((rule.lhs.symbol.clone(), rule.lhs.features.shifted(mine), rule.level))
}

/// Splits one derivation into chunks; each chunk is returned as a body.
fn chunk_bodies(d: &Constituent, grammar: &Grammar, criteria: &CutCriteria, out: &mut Vec<SExpr>) -> Result<(), EblError> {
    if !is_chunk_root(d, grammar, criteria)? {
        return Ok(());
    }
    let mut frontier = Vec::new();
    out.push(chunk_node(d, grammar, criteria, &mut frontier)?);
    for f in frontier {
        chunk_bodies(&f, grammar, criteria, out)?;
    }
    Ok(())
}

fn is_chunk_root(d: &Constituent, grammar: &Grammar, criteria: &CutCriteria) -> Result<bool, EblError> {
    let Derivation::Rule { rule, .. } = &d.derivation else {
        return Ok(false);
    };
    let r = grammar.rule(rule).ok_or_else(|| EblError::UnknownRule(rule.to_string()))?;
    // the phrasal layer passes through unchanged
    Ok(r.kind != RuleKind::Phrasal || criteria.include_lexical_frontier)
}

/// Builds the body rooted at `d`, collecting the frontier daughters.
fn chunk_node(
    d: &Constituent,
    grammar: &Grammar,
    criteria: &CutCriteria,
    frontier: &mut Vec<Arc<Constituent>>,
) -> Result<SExpr, EblError> {
    let Derivation::Rule { rule, children } = &d.derivation else {
        unreachable!("chunk roots are rule nodes")
    };
    let mut items = vec![SExpr::Atom(rule.to_string())];
    for c in children {
        let absorbed = is_chunk_root(c, grammar, criteria)? && !criteria.cut_categories.contains(c.symbol());
        if absorbed {
            items.push(chunk_node(c, grammar, criteria, frontier)?);
        } else {
            items.push(SExpr::Atom("_".into()));
            frontier.push(c.clone());
        }
    }
    Ok(SExpr::List(items))
}

/// Re-expresses an original derivation with the specialized grammar's
/// macro-rules; fails when a chunk has no macro.
pub fn chunk_analysis(d: &Arc<Constituent>, spec: &SpecializedGrammar, grammar: &Grammar) -> Result<Arc<Constituent>, EblError> {
    if !is_chunk_root(d, grammar, &spec.criteria)? {
        return Ok(d.clone());
    }
    let mut frontier = Vec::new();
    let body = chunk_node(d, grammar, &spec.criteria, &mut frontier)?.to_string();
    let m = spec
        .macro_by_body(&body)
        .ok_or_else(|| EblError::BadBody { id: body.clone(), message: "no macro-rule for this chunk".into() })?;
    let kids = frontier
        .iter()
        .map(|f| chunk_analysis(f, spec, grammar))
        .collect::<Result<Vec<_>, _>>()?;
    build(&m.production(), kids, None)
        .map(Arc::new)
        .ok_or_else(|| EblError::BadBody { id: m.id.clone(), message: "macro does not apply".into() })
}

/// Cuts a derivation into macro-rules (frequency 1 each, in body order).
pub fn chunk_derivation(d: &Constituent, grammar: &Grammar, criteria: &CutCriteria) -> Result<Vec<MacroRule>, EblError> {
    let mut bodies = Vec::new();
    chunk_bodies(d, grammar, criteria, &mut bodies)?;
    bodies
        .into_iter()
        .enumerate()
        .map(|(i, body)| {
            let (lhs, rhs, level, var_count) = compose(&body, grammar)?;
            Ok(MacroRule {
                id: format!("c{}", i + 1),
                lhs,
                rhs,
                body,
                frequency: 1,
                level,
                var_count,
            })
        })
        .collect()
}

/// Macro-rules plus the compiled LR table, built lazily.
#[derive(Debug)]
pub struct SpecializedGrammar {
    pub grammar_id: String,
    pub treebank_id: String,
    pub criteria: CutCriteria,
    pub macros: Vec<MacroRule>,
    /// Start symbol of the original grammar.
    pub start: Category,
    productions: Vec<Production>,
    by_id: HashMap<String, usize>,
    by_body: HashMap<String, usize>,
    table: OnceLock<LrTable>,
    /// Categories the LR driver reads from the phrasal layer.
    input_categories: BTreeSet<String>,
}

impl Clone for SpecializedGrammar {
    fn clone(&self) -> Self {
        Self::assemble(
            self.grammar_id.clone(),
            self.treebank_id.clone(),
            self.criteria.clone(),
            self.macros.clone(),
            self.start.clone(),
            self.input_categories.clone(),
        )
    }
}

impl SpecializedGrammar {
    fn assemble(
        grammar_id: String,
        treebank_id: String,
        criteria: CutCriteria,
        macros: Vec<MacroRule>,
        start: Category,
        input_categories: BTreeSet<String>,
    ) -> Self {
        let productions = macros.iter().map(MacroRule::production).collect();
        let by_id = macros.iter().enumerate().map(|(i, m)| (m.id.clone(), i)).collect();
        let by_body = macros.iter().enumerate().map(|(i, m)| (m.body.to_string(), i)).collect();
        SpecializedGrammar {
            grammar_id,
            treebank_id,
            criteria,
            macros,
            start,
            productions,
            by_id,
            by_body,
            table: OnceLock::new(),
            input_categories,
        }
    }

    pub fn new(grammar: &Grammar, treebank_id: &str, criteria: CutCriteria, macros: Vec<MacroRule>) -> Self {
        Self::assemble(
            grammar.id(),
            treebank_id.to_string(),
            criteria,
            macros,
            grammar.start.clone(),
            input_categories(grammar),
        )
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn macro_rule(&self, id: &str) -> Option<&MacroRule> {
        self.by_id.get(id).map(|&i| &self.macros[i])
    }

    pub fn macro_by_body(&self, body: &str) -> Option<&MacroRule> {
        self.by_body.get(body).map(|&i| &self.macros[i])
    }

    pub fn input_categories(&self) -> &BTreeSet<String> {
        &self.input_categories
    }

    pub fn table(&self) -> &LrTable {
        self.table.get_or_init(|| compile_lr(self))
    }

    /// The original grammar text followed by the specialization header and
    /// one line per macro-rule.
    pub fn serialize(&self, grammar: &Grammar) -> String {
        let mut out = grammar.serialize();
        let cuts: Vec<&str> = self.criteria.cut_categories.iter().map(String::as_str).collect();
        out.push_str(&format!(
            "specialized: cuts={} lexical_frontier={} min_freq={} treebank={} grammar={}\n",
            cuts.join(","),
            self.criteria.include_lexical_frontier,
            self.criteria.min_freq,
            self.treebank_id,
            self.grammar_id
        ));
        for m in &self.macros {
            out.push_str(&format!("macro {} freq={} body={}\n", m.id, m.frequency, m.body));
        }
        out
    }

    /// Reads a specialized grammar file; macro features are recomposed from
    /// the bodies.
    pub fn load(text: &str) -> Result<(Grammar, SpecializedGrammar), EblError> {
        let doc = load_document(text)?;
        let header = doc.specialized.ok_or(EblError::NotSpecialized)?;
        let grammar = doc.grammar;
        let mut macros = Vec::with_capacity(doc.macros.len());
        for m in doc.macros {
            let (lhs, rhs, level, var_count) = compose(&m.body, &grammar).map_err(|e| match e {
                EblError::BadBody { message, .. } => EblError::BadBody { id: m.id.clone(), message },
                other => other,
            })?;
            macros.push(MacroRule {
                id: m.id,
                lhs,
                rhs,
                body: m.body,
                frequency: m.freq,
                level,
                var_count,
            });
        }
        let criteria = CutCriteria {
            cut_categories: header.cuts.into_iter().collect(),
            include_lexical_frontier: header.lexical_frontier,
            min_freq: header.min_freq,
        };
        let mut spec = SpecializedGrammar::new(&grammar, &header.treebank, criteria, macros);
        spec.grammar_id = header.grammar;
        Ok((grammar, spec))
    }
}

/// Lexical categories and phrasal-rule outputs: what the LR driver reads.
pub fn input_categories(grammar: &Grammar) -> BTreeSet<String> {
    let mut s: BTreeSet<String> = grammar.lexicon.iter().map(|e| e.category.symbol.to_string()).collect();
    s.insert(crate::grammar::UNKNOWN_CATEGORY.to_string());
    s.extend(grammar.phrasal_rules().map(|r| r.lhs.symbol.to_string()));
    s
}

/// Chunks every approved derivation and merges identical bodies, summing
/// frequencies. Output is ordered by frequency (descending) then body, and
/// ids are assigned in that order.
pub fn specialize(
    derivations: &[(u64, Arc<Constituent>)],
    grammar: &Grammar,
    treebank_id: &str,
    criteria: &CutCriteria,
) -> Result<SpecializedGrammar, EblError> {
    let mut counts: BTreeMap<String, (SExpr, u32)> = BTreeMap::new();
    for (id, d) in derivations {
        let mut bodies = Vec::new();
        chunk_bodies(d, grammar, criteria, &mut bodies).map_err(|e| EblError::BadDerivation {
            id: *id,
            message: e.to_string(),
        })?;
        for b in bodies {
            counts.entry(b.to_string()).or_insert((b, 0)).1 += 1;
        }
    }
    let mut ranked: Vec<(String, SExpr, u32)> = counts
        .into_iter()
        .filter(|(_, (_, f))| *f >= criteria.min_freq)
        .map(|(k, (b, f))| (k, b, f))
        .collect();
    ranked.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    let width = ranked.len().to_string().len();
    let mut macros = Vec::with_capacity(ranked.len());
    for (i, (_, body, freq)) in ranked.into_iter().enumerate() {
        let (lhs, rhs, level, var_count) = compose(&body, grammar)?;
        macros.push(MacroRule {
            id: format!("m{:0width$}", i + 1),
            lhs,
            rhs,
            body,
            frequency: freq,
            level,
            var_count,
        });
    }
    Ok(SpecializedGrammar::new(grammar, treebank_id, criteria.clone(), macros))
}

/// Rebuilds treebank derivations from their signatures.
pub fn derivations_from_signatures(
    entries: &[(u64, String)],
    grammar: &Grammar,
    unknown_tag: &str,
) -> Result<Vec<(u64, Arc<Constituent>)>, EblError> {
    entries
        .iter()
        .map(|(id, sig)| {
            let e = SExpr::parse(sig).map_err(|m| EblError::BadDerivation { id: *id, message: m })?;
            let d = from_signature(&e, grammar, unknown_tag, 0).map_err(|m| EblError::BadDerivation {
                id: *id,
                message: m.to_string(),
            })?;
            Ok((*id, d))
        })
        .collect()
}

/// Replaces macro nodes by their bodies, re-checking every original rule.
pub fn expand(analysis: &Constituent, spec: &SpecializedGrammar, grammar: &Grammar) -> Result<Arc<Constituent>, EblError> {
    match &analysis.derivation {
        Derivation::Rule { rule, children } => {
            let kids: Vec<Arc<Constituent>> = children
                .iter()
                .map(|c| expand(c, spec, grammar))
                .collect::<Result<_, _>>()?;
            if let Some(m) = spec.macro_rule(rule) {
                let mut slots = kids.into_iter();
                let out = rebuild(&m.body, &mut slots, grammar).map_err(|message| EblError::BadBody {
                    id: m.id.clone(),
                    message,
                })?;
                if slots.next().is_some() {
                    return Err(EblError::BadBody {
                        id: m.id.clone(),
                        message: "too few slots".into(),
                    });
                }
                Ok(out)
            } else {
                let r = grammar.rule(rule).ok_or_else(|| EblError::UnknownRule(rule.to_string()))?;
                build(&Production::from_rule(r), kids, None)
                    .map(Arc::new)
                    .ok_or_else(|| EblError::BadBody {
                        id: rule.to_string(),
                        message: "rule no longer applies".into(),
                    })
            }
        }
        _ => Ok(Arc::new(analysis.clone())),
    }
}

fn rebuild(
    body: &SExpr,
    slots: &mut impl Iterator<Item = Arc<Constituent>>,
    grammar: &Grammar,
) -> Result<Arc<Constituent>, String> {
    let SExpr::List(items) = body else {
        return Err(format!("expected rule node, found `{body}`"));
    };
    let id = items.first().and_then(SExpr::as_atom).ok_or("node without rule id")?;
    let rule = grammar.rule(id).ok_or_else(|| format!("unknown rule `{id}`"))?;
    let mut kids = Vec::with_capacity(items.len() - 1);
    for it in &items[1..] {
        match it {
            SExpr::Atom(a) if a == "_" => kids.push(slots.next().ok_or("too many slots")?),
            SExpr::Atom(a) => return Err(format!("unexpected leaf `{a}`")),
            SExpr::List(_) => kids.push(rebuild(it, slots, grammar)?),
        }
    }
    if kids.len() != rule.rhs.len() {
        return Err(format!("rule `{id}` takes {} daughters", rule.rhs.len()));
    }
    build(&Production::from_rule(rule), kids, None)
        .map(Arc::new)
        .ok_or_else(|| format!("rule `{id}` fails on the expanded daughters"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::load_grammar;

    const G: &str = "\
categories: S NP VP Det Noun Verb Pron
tags: DT NNS VB PRP
start: S
rule np: NP[num=N] -> Det[num=N] Noun[num=N] phrasal head=2
rule pro: NP -> Pron phrasal
rule vp: VP[num=N] -> Verb[num=N] NP level=2
rule s: S -> NP[num=N] VP[num=N] level=3 head=2
lex \"the\": Det tag=DT
lex \"flights\": Noun[num=pl] tag=NNS sem=flight
lex \"show\": Verb[num=pl] tag=VB
lex \"we\": Pron tag=PRP
";

    fn derivation(g: &Grammar, sig: &str) -> Arc<Constituent> {
        from_signature(&SExpr::parse(sig).unwrap(), g, "UNK", 0).unwrap()
    }

    const SIG: &str = "(s (pro we/PRP) (vp show/VB (np the/DT flights/NNS)))";

    #[test]
    fn cut_at_np_gives_one_flat_macro() {
        let g = load_grammar(G).unwrap();
        let d = derivation(&g, SIG);
        let ms = chunk_derivation(&d, &g, &CutCriteria::cuts(&["NP"])).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].body.to_string(), "(s _ (vp _ _))");
        let rhs: Vec<String> = ms[0].rhs.iter().map(|c| c.symbol.to_string()).collect();
        assert_eq!(rhs, vec!["NP", "Verb", "NP"]);
        // agreement composed through the VP: S's NP and the verb share num
        assert_eq!(ms[0].rhs[0].features.get("num"), ms[0].rhs[1].features.get("num"));
        assert!(ms[0].rhs[0].features.get("num").is_some());
    }

    #[test]
    fn cut_everywhere_is_identity() {
        let g = load_grammar(G).unwrap();
        let d = derivation(&g, SIG);
        let ms = chunk_derivation(&d, &g, &CutCriteria::cuts(&["S", "NP", "VP"])).unwrap();
        let mut bodies: Vec<String> = ms.iter().map(|m| m.body.to_string()).collect();
        bodies.sort();
        assert_eq!(bodies, vec!["(s _ _)", "(vp _ _)"]);
    }

    #[test]
    fn expand_reconstructs() {
        let g = load_grammar(G).unwrap();
        let d = derivation(&g, SIG);
        let spec = specialize(&[(1, d.clone()), (2, d.clone())], &g, "tb", &CutCriteria::default()).unwrap();
        assert_eq!(spec.macros.len(), 1);
        assert_eq!(spec.macros[0].frequency, 2);
        let m = &spec.macros[0];
        // the same sentence parsed with the macro, then expanded
        let kids: Vec<Arc<Constituent>> = vec![
            d.children()[0].clone(),
            d.children()[1].children()[0].clone(),
            d.children()[1].children()[1].clone(),
        ];
        let as_macro = build(&m.production(), kids, None).unwrap();
        let back = expand(&as_macro, &spec, &g).unwrap();
        assert_eq!(back.signature(), SIG);
        let chunked = chunk_analysis(&d, &spec, &g).unwrap();
        assert_eq!(chunked.signature(), as_macro.signature());
        assert_eq!(back.bindings(), as_macro.bindings());
    }

    #[test]
    fn file_round_trip() {
        let g = load_grammar(G).unwrap();
        let d = derivation(&g, SIG);
        let spec = specialize(&[(1, d)], &g, "tb", &CutCriteria::default()).unwrap();
        let text = spec.serialize(&g);
        let (g2, spec2) = SpecializedGrammar::load(&text).unwrap();
        assert_eq!(g2.rules.len(), g.rules.len());
        assert_eq!(spec2.macros, spec.macros);
        assert_eq!(spec2.criteria, spec.criteria);
    }
}
