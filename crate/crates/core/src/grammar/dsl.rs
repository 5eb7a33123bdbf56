//! Line-oriented grammar DSL.
//!
//! ```text
//! grammar: atis-toy
//! categories: S NP VP Det Noun
//! tags: DT NN VB
//! start: S
//! rule r1: NP[num=N] -> Det[num=N] Noun[num=N] phrasal head=2
//! rule r2: S -> NP VP level=4 head=2
//! lex "flights": Noun[num=pl] tag=NNS sem=flight
//! xfer t1: show(X, Y) => visa(*, X, Y) level=2
//! macro m1 freq=3 body=(r2 _ (r5 _ _))
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::term::{is_ident, parse_term_body};
use super::{Category, Grammar, GrammarError, LexEntry, Rule, RuleKind, UNKNOWN_CATEGORY};
use crate::sexpr::SExpr;
use crate::translator::TransferRule;

/// A parsed grammar file: the grammar plus any specialization lines.
#[derive(Clone, Debug)]
pub struct Document {
    pub grammar: Grammar,
    pub macros: Vec<MacroDecl>,
    pub specialized: Option<SpecializedHeader>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacroDecl {
    pub id: String,
    pub freq: u32,
    pub body: SExpr,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SpecializedHeader {
    pub cuts: Vec<String>,
    pub lexical_frontier: bool,
    pub min_freq: u32,
    pub treebank: String,
    pub grammar: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    Arrow,
    FatArrow,
    Colon,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn scan(line_no: usize, line: &str) -> Result<Vec<Token>, GrammarError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c == '"' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && chars[j] != '"' {
                j += 1;
            }
            if j >= chars.len() {
                return Err(syntax(line_no, col, "unterminated string"));
            }
            out.push(Token {
                tok: Tok::Quoted(chars[start..j].iter().collect()),
                col,
            });
            i = j + 1;
            continue;
        }
        if c == ':' {
            out.push(Token { tok: Tok::Colon, col });
            i += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push(Token { tok: Tok::Arrow, col });
            i += 2;
            continue;
        }
        if c == '=' && chars.get(i + 1) == Some(&'>') {
            out.push(Token {
                tok: Tok::FatArrow,
                col,
            });
            i += 2;
            continue;
        }
        let mut word = String::new();
        let mut depth: i32 = 0;
        while i < chars.len() {
            let c = chars[i];
            match c {
                '[' | '(' => depth += 1,
                ']' | ')' => depth -= 1,
                _ => {}
            }
            if depth == 0 && (c.is_whitespace() || c == '#' || c == '"') {
                break;
            }
            // a colon terminates a bare word (`rule r1:`) but not `X:role`
            if depth == 0 && c == ':' && !chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()) {
                break;
            }
            word.push(c);
            i += 1;
        }
        if depth != 0 {
            return Err(syntax(line_no, col, "unbalanced brackets"));
        }
        out.push(Token {
            tok: Tok::Word(word),
            col,
        });
    }
    Ok(out)
}

struct Cursor<'a> {
    line: usize,
    toks: &'a [Token],
    pos: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn word(&mut self, what: &str) -> Result<(String, usize), GrammarError> {
        let col = self.col();
        match self.next() {
            Some(Token {
                tok: Tok::Word(w), ..
            }) => Ok((w.clone(), col)),
            _ => Err(syntax(self.line, col, format!("expected {what}"))),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), GrammarError> {
        let col = self.col();
        match self.next() {
            Some(t) if t.tok == tok => Ok(()),
            _ => Err(syntax(self.line, col, format!("expected {what}"))),
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

struct Pending {
    name: Option<String>,
    categories: Option<(BTreeSet<String>, usize)>,
    tags: Option<BTreeSet<String>>,
    start: Option<(Category, usize, usize)>,
    rules: Vec<(Rule, usize, Vec<(String, usize)>)>,
    lexicon: Vec<(LexEntry, usize, usize, usize)>,
    transfer: Vec<TransferRule>,
    macros: Vec<MacroDecl>,
    specialized: Option<SpecializedHeader>,
}

fn parse_category(
    text: &str,
    line: usize,
    col: usize,
    names: &mut BTreeMap<String, u32>,
) -> Result<Category, GrammarError> {
    let (sym, feats) = match text.find('[') {
        Some(i) => (&text[..i], &text[i..]),
        None => (text, ""),
    };
    if sym.is_empty() || !is_ident(sym) {
        return Err(syntax(line, col, format!("bad category `{text}`")));
    }
    let features = if feats.is_empty() {
        Default::default()
    } else {
        parse_term_body(feats, names).map_err(|m| syntax(line, col + sym.len(), m))?
    };
    Ok(Category::new(sym, features))
}

fn key_value<'s>(w: &'s str, key: &str) -> Option<&'s str> {
    w.strip_prefix(key).and_then(|r| r.strip_prefix('='))
}

/// Parses a grammar document, including any macro and transfer lines.
pub fn load_document(text: &str) -> Result<Document, GrammarError> {
    let mut p = Pending {
        name: None,
        categories: None,
        tags: None,
        start: None,
        rules: Vec::new(),
        lexicon: Vec::new(),
        transfer: Vec::new(),
        macros: Vec::new(),
        specialized: None,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks = scan(line, raw)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor {
            line,
            toks: &toks,
            pos: 0,
            end_col: raw.chars().count() + 1,
        };
        let (head, col) = cur.word("directive")?;
        match head.as_str() {
            "grammar" | "categories" | "tags" | "start" | "specialized" => {
                cur.expect(Tok::Colon, "`:`")?;
                let mut words = Vec::new();
                while !cur.done() {
                    words.push(cur.word("name")?);
                }
                header(&mut p, &head, line, col, words)?;
            }
            "rule" => {
                let (id, _) = cur.word("rule id")?;
                cur.expect(Tok::Colon, "`:` after rule id")?;
                let mut names = BTreeMap::new();
                let (lhs_text, lcol) = cur.word("left-hand category")?;
                let lhs = parse_category(&lhs_text, line, lcol, &mut names)?;
                cur.expect(Tok::Arrow, "`->`")?;
                let mut rhs = Vec::new();
                let mut used = vec![(lhs.symbol.to_string(), lcol)];
                let mut kind = None;
                let mut head_idx = None;
                let mut rel = false;
                while !cur.done() {
                    let (w, wcol) = cur.word("category or annotation")?;
                    if w == "phrasal" {
                        kind = Some((RuleKind::Phrasal, 1u8));
                    } else if let Some(v) = key_value(&w, "level") {
                        let k: u8 = v
                            .parse()
                            .map_err(|_| syntax(line, wcol, format!("bad level `{v}`")))?;
                        if k < 2 {
                            return Err(syntax(line, wcol, "non-phrasal levels start at 2"));
                        }
                        kind = Some((RuleKind::NonPhrasal, k));
                    } else if let Some(v) = key_value(&w, "head") {
                        let h: usize = v
                            .parse()
                            .map_err(|_| syntax(line, wcol, format!("bad head `{v}`")))?;
                        head_idx = Some((h, wcol));
                    } else if w == "rel" {
                        rel = true;
                    } else if kind.is_some() {
                        return Err(syntax(line, wcol, format!("unexpected `{w}` after level")));
                    } else {
                        let c = parse_category(&w, line, wcol, &mut names)?;
                        used.push((c.symbol.to_string(), wcol));
                        rhs.push(c);
                    }
                }
                let (kind, level) =
                    kind.ok_or_else(|| syntax(line, cur.end_col, "expected `phrasal` or `level=<k>`"))?;
                if rhs.is_empty() {
                    return Err(syntax(line, cur.end_col, "rule needs at least one daughter"));
                }
                let mut rule = Rule::new(&id, lhs, rhs, kind, level);
                if let Some((h, hcol)) = head_idx {
                    if h == 0 || h > rule.rhs.len() {
                        return Err(syntax(line, hcol, format!("head {h} out of range")));
                    }
                    rule.head = h - 1;
                }
                rule.rel = rel;
                p.rules.push((rule, line, used));
            }
            "lex" => {
                let col = cur.col();
                let surface = match cur.next() {
                    Some(Token {
                        tok: Tok::Quoted(s),
                        ..
                    }) if !s.is_empty() => s.clone(),
                    _ => return Err(syntax(line, col, "expected quoted surface form")),
                };
                cur.expect(Tok::Colon, "`:` after surface form")?;
                let (ctext, ccol) = cur.word("category")?;
                let category = parse_category(&ctext, line, ccol, &mut BTreeMap::new())?;
                let mut tag = None;
                let mut sem = None;
                while !cur.done() {
                    let (w, wcol) = cur.word("annotation")?;
                    if let Some(v) = key_value(&w, "tag") {
                        tag = Some((v.to_string(), wcol));
                    } else if let Some(v) = key_value(&w, "sem") {
                        sem = Some(v.to_string());
                    } else {
                        return Err(syntax(line, wcol, format!("unexpected `{w}`")));
                    }
                }
                let (tag, tcol) = tag.ok_or_else(|| syntax(line, cur.end_col, "missing tag="))?;
                let sem = sem.unwrap_or_else(|| surface.clone());
                p.lexicon.push((
                    LexEntry {
                        surface,
                        category,
                        tag,
                        sem,
                    },
                    line,
                    ccol,
                    tcol,
                ));
            }
            "xfer" => {
                let (id, _) = cur.word("transfer rule id")?;
                cur.expect(Tok::Colon, "`:` after transfer id")?;
                let (src, scol) = cur.word("source pattern")?;
                cur.expect(Tok::FatArrow, "`=>`")?;
                let (tgt, tcol) = cur.word("target pattern")?;
                let mut level = 2u8;
                while !cur.done() {
                    let (w, wcol) = cur.word("annotation")?;
                    match key_value(&w, "level") {
                        Some(v) => {
                            level = v
                                .parse()
                                .map_err(|_| syntax(line, wcol, format!("bad level `{v}`")))?
                        }
                        None => return Err(syntax(line, wcol, format!("unexpected `{w}`"))),
                    }
                }
                let rule = TransferRule::parse(&id, &src, &tgt, level).map_err(|(which, m)| {
                    syntax(line, if which == 0 { scol } else { tcol }, m)
                })?;
                p.transfer.push(rule);
            }
            "macro" => {
                let (id, _) = cur.word("macro id")?;
                let mut freq = None;
                let mut body = None;
                while !cur.done() {
                    let (w, wcol) = cur.word("annotation")?;
                    if let Some(v) = key_value(&w, "freq") {
                        freq = Some(
                            v.parse()
                                .map_err(|_| syntax(line, wcol, format!("bad freq `{v}`")))?,
                        );
                    } else if let Some(v) = key_value(&w, "body") {
                        body = Some(SExpr::parse(v).map_err(|m| syntax(line, wcol, m))?);
                    } else {
                        return Err(syntax(line, wcol, format!("unexpected `{w}`")));
                    }
                }
                p.macros.push(MacroDecl {
                    id,
                    freq: freq.ok_or_else(|| syntax(line, cur.end_col, "missing freq="))?,
                    body: body.ok_or_else(|| syntax(line, cur.end_col, "missing body="))?,
                    line,
                });
            }
            other => return Err(syntax(line, col, format!("unknown directive `{other}`"))),
        }
    }
    finish(p)
}

fn header(
    p: &mut Pending,
    head: &str,
    line: usize,
    col: usize,
    words: Vec<(String, usize)>,
) -> Result<(), GrammarError> {
    match head {
        "grammar" => {
            let (n, _) = words
                .into_iter()
                .next()
                .ok_or_else(|| syntax(line, col, "missing grammar name"))?;
            p.name = Some(n);
        }
        "categories" => {
            let set = p.categories.get_or_insert((BTreeSet::new(), line));
            set.0.extend(words.into_iter().map(|w| w.0));
        }
        "tags" => {
            let set = p.tags.get_or_insert_with(BTreeSet::new);
            set.extend(words.into_iter().map(|w| w.0));
        }
        "start" => {
            let (w, wcol) = words
                .into_iter()
                .next()
                .ok_or_else(|| syntax(line, col, "missing start category"))?;
            let c = parse_category(&w, line, wcol, &mut BTreeMap::new())?;
            p.start = Some((c, line, wcol));
        }
        "specialized" => {
            let mut h = SpecializedHeader {
                min_freq: 1,
                ..Default::default()
            };
            for (w, wcol) in words {
                if let Some(v) = key_value(&w, "cuts") {
                    h.cuts = v.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
                } else if let Some(v) = key_value(&w, "lexical_frontier") {
                    h.lexical_frontier = v == "true";
                } else if let Some(v) = key_value(&w, "min_freq") {
                    h.min_freq = v.parse().map_err(|_| syntax(line, wcol, "bad min_freq"))?;
                } else if let Some(v) = key_value(&w, "treebank") {
                    h.treebank = v.to_string();
                } else if let Some(v) = key_value(&w, "grammar") {
                    h.grammar = v.to_string();
                } else {
                    return Err(syntax(line, wcol, format!("unexpected `{w}`")));
                }
            }
            p.specialized = Some(h);
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn finish(p: Pending) -> Result<Document, GrammarError> {
    let (categories, _) = p
        .categories
        .ok_or(GrammarError::MissingHeader("categories"))?;
    let tags = p.tags.ok_or(GrammarError::MissingHeader("tags"))?;
    let (start, sline, scol) = p.start.ok_or(GrammarError::MissingHeader("start"))?;
    let declared = |s: &str| categories.contains(s) || s == UNKNOWN_CATEGORY;
    if !declared(&start.symbol) {
        return Err(GrammarError::UndeclaredCategory {
            name: start.symbol.to_string(),
            line: sline,
            col: scol,
        });
    }
    let mut seen = HashSet::new();
    let mut rules = Vec::with_capacity(p.rules.len());
    for (rule, line, used) in p.rules {
        if let Some((name, col)) = used.into_iter().find(|(s, _)| !declared(s)) {
            return Err(GrammarError::UndeclaredCategory { name, line, col });
        }
        if !seen.insert(rule.id.clone()) {
            return Err(GrammarError::DuplicateRule {
                id: rule.id.to_string(),
                line,
            });
        }
        rules.push(rule);
    }
    let mut lexicon = Vec::with_capacity(p.lexicon.len());
    for (entry, line, ccol, tcol) in p.lexicon {
        if !declared(&entry.category.symbol) {
            return Err(GrammarError::UndeclaredCategory {
                name: entry.category.symbol.to_string(),
                line,
                col: ccol,
            });
        }
        if !tags.contains(&entry.tag) {
            return Err(GrammarError::UndeclaredTag {
                name: entry.tag,
                line,
                col: tcol,
            });
        }
        lexicon.push(entry);
    }
    if !rules.iter().any(|r| r.lhs.symbol == start.symbol) {
        return Err(GrammarError::NoStartRule(start.symbol.to_string()));
    }
    let grammar = Grammar::assemble(p.name, categories, tags, start, rules, lexicon, p.transfer);
    Ok(Document {
        grammar,
        macros: p.macros,
        specialized: p.specialized,
    })
}

/// Loads a plain grammar. Macro lines, if present, are ignored here; use
/// [`crate::ebl::SpecializedGrammar::load`] to read them.
pub fn load_grammar(text: &str) -> Result<Grammar, GrammarError> {
    load_document(text).map(|d| d.grammar)
}

fn rule_line(r: &Rule) -> String {
    let mut s = format!("rule {}: {} ->", r.id, r.lhs);
    for c in &r.rhs {
        s.push(' ');
        s.push_str(&c.to_string());
    }
    match r.kind {
        RuleKind::Phrasal => s.push_str(" phrasal"),
        RuleKind::NonPhrasal => s.push_str(&format!(" level={}", r.level)),
    }
    if r.head != 0 {
        s.push_str(&format!(" head={}", r.head + 1));
    }
    if r.rel {
        s.push_str(" rel");
    }
    s
}

pub(super) fn serialize(g: &Grammar) -> String {
    let mut out = String::new();
    if let Some(n) = &g.name {
        out.push_str(&format!("grammar: {n}\n"));
    }
    let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(" ");
    out.push_str(&format!("categories: {}\n", join(&g.categories)));
    out.push_str(&format!("tags: {}\n", join(&g.tags)));
    out.push_str(&format!("start: {}\n", g.start));
    for r in &g.rules {
        out.push_str(&rule_line(r));
        out.push('\n');
    }
    for e in &g.lexicon {
        out.push_str(&format!(
            "lex \"{}\": {} tag={} sem={}\n",
            e.surface, e.category, e.tag, e.sem
        ));
    }
    for t in &g.transfer {
        out.push_str(&t.to_dsl());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
# toy
categories: S NP VP Det Noun Verb
tags: DT NN NNS VB
start: S
rule r1: NP[num=N] -> Det[num=N] Noun[num=N] phrasal head=2
rule r2: VP -> Verb NP level=2
rule r3: S -> VP level=3
lex \"the\": Det tag=DT
lex \"flights\": Noun[num=pl] tag=NNS sem=flight
lex \"show\": Verb tag=VB
";

    #[test]
    fn single_phrasal_rule() {
        let g = load_grammar(
            "categories: NP Det Noun\ntags: DT\nstart: NP\n\
             rule r1: NP[num=N] -> Det[num=N] Noun[num=N] phrasal",
        )
        .unwrap();
        assert_eq!(g.rules.len(), 1);
        assert_eq!(g.rules[0].kind, RuleKind::Phrasal);
        assert_eq!(g.rules[0].level, 1);
    }

    #[test]
    fn undeclared_category_reports_line() {
        let text = "categories: S NP\ntags: DT\nstart: S\nrule r1: S -> NP XP level=2\n";
        match load_grammar(text) {
            Err(GrammarError::UndeclaredCategory { name, line, col }) => {
                assert_eq!(name, "XP");
                assert_eq!(line, 4);
                assert_eq!(col, 18);
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = load_grammar(text).unwrap_err().to_string();
        assert!(msg.starts_with("undeclared category XP at line 4"), "{msg}");
    }

    #[test]
    fn duplicate_rule_id() {
        let text = "categories: S NP\ntags: DT\nstart: S\n\
                    rule r1: S -> NP level=2\nrule r1: S -> NP NP level=2\n";
        assert_eq!(
            load_grammar(text).unwrap_err(),
            GrammarError::DuplicateRule {
                id: "r1".into(),
                line: 5
            }
        );
    }

    #[test]
    fn syntax_errors_carry_location() {
        let text = "categories: S NP\ntags: DT\nstart: S\nrule r1: S NP level=2\n";
        match load_grammar(text) {
            Err(GrammarError::Syntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = "categories: S\ntags: DT\nstart: S\nrule r1: S -> S level=1\n";
        assert!(matches!(load_grammar(text), Err(GrammarError::Syntax { line: 4, .. })));
    }

    #[test]
    fn undeclared_tag() {
        let text = "categories: S\ntags: DT\nstart: S\nrule r: S -> S level=2\nlex \"x\": S tag=ZZ\n";
        assert!(matches!(
            load_grammar(text),
            Err(GrammarError::UndeclaredTag { line: 5, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let g = load_grammar(SMALL).unwrap();
        let again = load_grammar(&g.serialize()).unwrap();
        assert_eq!(g, again);
        assert_eq!(g.rules[0].head, 1);
        assert_eq!(g.lexicon[0].sem, "the");
    }

    #[test]
    fn variables_renumbered_consistently() {
        let g = load_grammar(
            "categories: S A\ntags: T\nstart: S\nrule r: S[b=Y, a=X] -> A[v=X] A[v=Y] level=2\n",
        )
        .unwrap();
        let again = load_grammar(&g.serialize()).unwrap();
        assert_eq!(g, again);
    }
}
