//! Regenerates the sentence fixtures under `fixtures/` from a seeded
//! generator over the toy air-travel grammar.
//!
//! Every generated sentence carries its intended derivation and a reference
//! translation rendered directly from the generator's structure. The
//! treebank is produced by a simulated annotator who answers each presented
//! discriminant according to the intended derivation.
//!
//!     cargo run --example make_fixtures -- fixtures

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slt_core::chart::{analyses_of, Engine};
use slt_core::grammar::{load_grammar, Grammar};
use slt_core::treebanker::{build_incidence, write_treebank, ResolveMode, Session, Status, TreebankEntry, Verdict};

const CITIES: &[&str] = &[
    "boston", "denver", "dallas", "atlanta", "pittsburgh", "washington", "baltimore", "philadelphia", "oakland",
    "chicago",
];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const HEADS: &[(&str, &str)] = &[
    ("flights", "flight"),
    ("fares", "fare"),
    ("tickets", "ticket"),
    ("airlines", "airline"),
    ("seats", "seat"),
    ("meals", "meal"),
];
const ADJS: &[&str] = &["cheap", "cheapest", "direct", "early", "late", "nonstop", "first", "last"];
const CMPS: &[&str] = &["morning", "evening"];

fn french(w: &str, head: Option<&str>) -> &'static str {
    match w {
        "the" => "le",
        "a" => "un",
        "all" => "tous",
        "any" => "des",
        "no" => "aucun",
        "some" => "quelques",
        "this" => "ce",
        "these" => "ces",
        "cheap" => "economique",
        "cheapest" => "moins cher",
        "direct" => "direct",
        "early" if matches!(head, Some("flight" | "flights")) => "matinal",
        "early" => "tot",
        "late" => "tardif",
        "nonstop" => "sans escale",
        "first" => "premier",
        "last" => "dernier",
        "flight" => "vol",
        "flights" => "vols",
        "fare" => "tarif",
        "fares" => "tarifs",
        "ticket" => "billet",
        "tickets" => "billets",
        "stop" => "escale",
        "stops" => "escales",
        "morning" => "matin",
        "evening" => "soir",
        "airline" => "compagnie",
        "airlines" => "compagnies",
        "meal" | "meals" => "repas",
        "seat" => "place",
        "seats" => "places",
        "trip" => "voyage",
        "class" => "classe",
        "me" => "moi",
        "i" => "je",
        "you" => "vous",
        "us" => "nous",
        "show" => "montrez",
        "list" => "listez",
        "give" => "donnez",
        "find" => "trouvez",
        "want" => "veux",
        "need" => "necessite",
        "book" => "reservez",
        "have" => "avez",
        "has" => "a",
        "leave" => "partent",
        "leaves" => "part",
        "arrive" => "arrivent",
        "arrives" => "arrive",
        "serve" => "servent",
        "serves" => "sert",
        "from" => "de",
        "to" | "at" => "a",
        "on" => "le",
        "with" => "avec",
        "before" => "avant",
        "after" => "apres",
        "in" => "dans",
        "for" => "pour",
        "via" => "via",
        "philadelphia" => "philadelphie",
        "monday" => "lundi",
        "tuesday" => "mardi",
        "wednesday" => "mercredi",
        "thursday" => "jeudi",
        "friday" => "vendredi",
        "saturday" => "samedi",
        "sunday" => "dimanche",
        "that" | "which" => "qui",
        "and" => "et",
        "or" => "ou",
        "can" => "pouvez",
        "could" => "pourriez",
        "please" => "svp",
        "today" => "aujourdhui",
        "tomorrow" => "demain",
        other => CITIES.iter().find(|c| **c == other).copied().unwrap_or_else(|| panic!("no translation for {other}")),
    }
}

#[derive(Clone, Debug)]
enum Np {
    Pron(&'static str),
    Name(&'static str),
    Day(&'static str),
    Common {
        det: Option<&'static str>,
        adjs: Vec<&'static str>,
        cmp: Option<&'static str>,
        noun: &'static str,
    },
    Mod {
        base: Box<Np>,
        pps: Vec<(&'static str, Np)>,
        rel: Option<Box<Vp>>,
    },
}

#[derive(Clone, Debug)]
struct Vp {
    verb: &'static str,
    objs: Vec<Np>,
    pp: Option<(&'static str, Np)>,
    adv: Option<&'static str>,
}

#[derive(Clone, Debug)]
enum S {
    Imp(Vp),
    Decl(Np, Vp),
    Aux(&'static str, Np, Vp),
    Adv(&'static str, Box<S>),
    Frag(Np),
}

/// English words, intended signature, reference translation.
struct Out<'g> {
    g: &'g Grammar,
    words: Vec<String>,
}

impl Out<'_> {
    fn leaf(&mut self, w: &str) -> String {
        self.words.push(w.to_string());
        format!("{w}/{}", self.g.best_tag(w).unwrap_or_else(|| panic!("{w} not in lexicon")))
    }
}

fn node(rule: &str, kids: &[String]) -> String {
    format!("({rule} {})", kids.join(" "))
}

fn np_sig(np: &Np, o: &mut Out) -> String {
    match np {
        Np::Pron(w) => node("np_pron", &[o.leaf(w)]),
        Np::Name(w) => node("np_name", &[o.leaf(w)]),
        Np::Day(w) => node("np_day", &[o.leaf(w)]),
        Np::Common { det, adjs, cmp, noun } => {
            let d = det.map(|d| o.leaf(d));
            let a: Vec<String> = adjs.iter().map(|w| o.leaf(w)).collect();
            let c = cmp.map(|w| o.leaf(w));
            let mut nbar = node("nbar_n", &[o.leaf(noun)]);
            if let Some(c) = c {
                nbar = node("nbar_cmp", &[c, nbar]);
            }
            for a in a.into_iter().rev() {
                nbar = node("nbar_adj", &[a, nbar]);
            }
            match d {
                Some(d) => node("np_det", &[d, nbar]),
                None => node("np_bare", &[nbar]),
            }
        }
        Np::Mod { base, pps, rel } => {
            let mut s = np_sig(base, o);
            for (p, obj) in pps {
                let pl = o.leaf(p);
                let pp = node("pp", &[pl, np_sig(obj, o)]);
                s = node("np_pp", &[s, pp]);
            }
            if let Some(vp) = rel {
                let w = o.leaf("that");
                let r = node("rel", &[w, vp_sig(vp, o)]);
                s = node("np_rel", &[s, r]);
            }
            s
        }
    }
}

fn vp_sig(vp: &Vp, o: &mut Out) -> String {
    let v = o.leaf(vp.verb);
    let mut s = match (&vp.objs[..], &vp.pp) {
        ([], Some((p, obj))) => {
            let pl = o.leaf(p);
            let pp = node("pp", &[pl, np_sig(obj, o)]);
            node("vp_v_pp", &[v, pp])
        }
        ([], None) => node("vp_v", &[v]),
        ([a], _) => {
            let a = np_sig(a, o);
            node("vp_np", &[v, a])
        }
        ([a, b], _) => {
            let a = np_sig(a, o);
            let b = np_sig(b, o);
            node("vp_np_np", &[v, a, b])
        }
        _ => unreachable!(),
    };
    if let Some(adv) = vp.adv {
        s = node("vp_adv", &[s, o.leaf(adv)]);
    }
    s
}

fn s_sig(s: &S, o: &mut Out) -> String {
    match s {
        S::Imp(vp) => node("s_imp", &[vp_sig(vp, o)]),
        S::Decl(np, vp) => {
            let n = np_sig(np, o);
            node("s_decl", &[n, vp_sig(vp, o)])
        }
        S::Aux(aux, np, vp) => {
            let a = o.leaf(aux);
            let n = np_sig(np, o);
            node("s_aux", &[a, n, vp_sig(vp, o)])
        }
        S::Adv(adv, inner) => {
            let a = o.leaf(adv);
            node("s_adv", &[a, s_sig(inner, o)])
        }
        S::Frag(np) => node("s_np", &[np_sig(np, o)]),
    }
}

fn np_fr(np: &Np, out: &mut Vec<&'static str>) {
    match np {
        Np::Pron(w) | Np::Name(w) | Np::Day(w) => out.push(french(w, None)),
        Np::Common { det, adjs, cmp, noun } => {
            if let Some(d) = det {
                out.push(french(d, None));
            }
            out.push(french(noun, None));
            for a in adjs {
                out.push(french(a, Some(noun)));
            }
            if let Some(c) = cmp {
                out.push("de");
                out.push(french(c, None));
            }
        }
        Np::Mod { base, pps, rel } => {
            np_fr(base, out);
            for (p, obj) in pps {
                out.push(french(p, None));
                np_fr(obj, out);
            }
            if let Some(vp) = rel {
                out.push("qui");
                vp_fr(vp, out);
            }
        }
    }
}

fn vp_fr(vp: &Vp, out: &mut Vec<&'static str>) {
    out.push(french(vp.verb, None));
    for o in &vp.objs {
        np_fr(o, out);
    }
    if let Some((p, obj)) = &vp.pp {
        out.push(french(p, None));
        np_fr(obj, out);
    }
    if let Some(a) = vp.adv {
        out.push(french(a, None));
    }
}

fn s_fr(s: &S, out: &mut Vec<&'static str>) {
    match s {
        S::Imp(vp) => vp_fr(vp, out),
        S::Decl(np, vp) => {
            np_fr(np, out);
            vp_fr(vp, out);
        }
        S::Aux(aux, np, vp) => {
            out.push(french(aux, None));
            np_fr(np, out);
            vp_fr(vp, out);
        }
        S::Adv(adv, inner) => {
            out.push(french(adv, None));
            s_fr(inner, out);
        }
        S::Frag(np) => np_fr(np, out),
    }
}

fn reorders(s: &S) -> bool {
    fn np(n: &Np) -> bool {
        match n {
            Np::Common { adjs, cmp, .. } => !adjs.is_empty() || cmp.is_some(),
            Np::Mod { base, pps, rel } => np(base) || pps.iter().any(|(_, o)| np(o)) || rel.as_deref().is_some_and(vp),
            _ => false,
        }
    }
    fn vp(v: &Vp) -> bool {
        v.objs.iter().any(np) || v.pp.as_ref().is_some_and(|(_, o)| np(o))
    }
    match s {
        S::Imp(v) => vp(v),
        S::Decl(n, v) | S::Aux(_, n, v) => np(n) || vp(v),
        S::Adv(_, inner) => reorders(inner),
        S::Frag(n) => np(n),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mods {
    Any,
    Plain,
    Reorder,
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn pick(&mut self, xs: &[&'static str]) -> &'static str {
        xs.choose(&mut self.rng).copied().unwrap()
    }

    fn head_np(&mut self, mods: Mods) -> Np {
        let (pl, sg) = HEADS.choose(&mut self.rng).copied().unwrap();
        let plural = self.rng.gen_bool(0.7);
        let noun = if plural { pl } else { sg };
        let det = if plural {
            let d = self.pick(&["the", "the", "the", "all", "any", "some", "these", "no", ""]);
            (!d.is_empty()).then_some(d)
        } else {
            Some(self.pick(&["the", "the", "a", "a", "this", "any", "no"]))
        };
        let roll: f64 = self.rng.gen();
        let (mut adjs, mut cmp) = (Vec::new(), None);
        let choice = match mods {
            Mods::Plain => 0,
            Mods::Reorder if roll < 0.55 => 1,
            Mods::Reorder if roll < 0.75 => 2,
            Mods::Reorder => 3,
            Mods::Any if roll < 0.25 => 1,
            Mods::Any if roll < 0.32 => 2,
            Mods::Any if roll < 0.42 => 3,
            Mods::Any => 0,
        };
        match choice {
            1 => adjs.push(self.pick(ADJS)),
            2 => {
                let a = self.pick(ADJS);
                let mut b = self.pick(ADJS);
                while b == a {
                    b = self.pick(ADJS);
                }
                adjs.extend([a, b]);
            }
            3 => cmp = Some(self.pick(CMPS)),
            _ => {}
        }
        Np::Common { det, adjs, cmp, noun }
    }

    fn pp(&mut self) -> (&'static str, Np) {
        match self.rng.gen_range(0..10) {
            0..=5 => (self.pick(&["from", "to", "to", "from", "via"]), Np::Name(self.pick(CITIES))),
            6 | 7 => ("on", Np::Day(self.pick(DAYS))),
            8 => (
                self.pick(&["before", "after", "in"]),
                Np::Common {
                    det: Some("the"),
                    adjs: vec![],
                    cmp: None,
                    noun: self.pick(CMPS),
                },
            ),
            _ => (
                "with",
                Np::Common {
                    det: Some(self.pick(&["a", "no"])),
                    adjs: vec![],
                    cmp: None,
                    noun: self.pick(&["meal", "stop"]),
                },
            ),
        }
    }

    fn rel(&mut self) -> Vp {
        match self.rng.gen_range(0..4) {
            0 => Vp {
                verb: "has",
                objs: vec![Np::Common {
                    det: Some("no"),
                    adjs: vec![],
                    cmp: None,
                    noun: "stops",
                }],
                pp: None,
                adv: None,
            },
            1 => Vp {
                verb: "serves",
                objs: vec![Np::Common {
                    det: None,
                    adjs: vec![],
                    cmp: None,
                    noun: "meals",
                }],
                pp: None,
                adv: None,
            },
            2 => Vp {
                verb: self.pick(&["leaves", "arrives"]),
                objs: vec![],
                pp: Some((self.pick(&["before", "after", "in"]), Np::Common {
                    det: Some("the"),
                    adjs: vec![],
                    cmp: None,
                    noun: self.pick(CMPS),
                })),
                adv: None,
            },
            _ => Vp {
                verb: self.pick(&["leaves", "arrives"]),
                objs: vec![],
                pp: Some(("on", Np::Day(self.pick(DAYS)))),
                adv: None,
            },
        }
    }

    fn object(&mut self, mods: Mods) -> Np {
        let base = self.head_np(mods);
        let n = *[0usize, 0, 0, 1, 1, 1, 1, 2, 2, 3].choose(&mut self.rng).unwrap();
        let pps: Vec<_> = (0..n).map(|_| self.pp()).collect();
        let rel = self.rng.gen_bool(0.12).then(|| Box::new(self.rel()));
        if pps.is_empty() && rel.is_none() {
            base
        } else {
            Np::Mod {
                base: Box::new(base),
                pps,
                rel,
            }
        }
    }

    fn command(&mut self, mods: Mods) -> Vp {
        let verb = self.pick(&["show", "show", "show", "list", "give", "find", "book"]);
        let obj = self.object(mods);
        let objs = if matches!(verb, "show" | "give") && self.rng.gen_bool(0.6) {
            vec![Np::Pron(self.pick(&["me", "me", "me", "us"])), obj]
        } else {
            vec![obj]
        };
        let adv = self.rng.gen_bool(0.08).then(|| self.pick(&["please", "today", "tomorrow"]));
        Vp {
            verb,
            objs,
            pp: None,
            adv,
        }
    }

    fn sentence(&mut self, mods: Mods) -> S {
        match self.rng.gen_range(0..20) {
            0..=9 => S::Imp(self.command(mods)),
            10..=12 => S::Decl(
                Np::Pron("i"),
                Vp {
                    verb: self.pick(&["want", "need"]),
                    objs: vec![self.object(mods)],
                    pp: None,
                    adv: None,
                },
            ),
            13..=15 => S::Aux(self.pick(&["can", "could"]), Np::Pron("you"), self.command(mods)),
            16 | 17 => S::Adv("please", Box::new(S::Imp(self.command(mods)))),
            _ => S::Frag(self.object(mods)),
        }
    }

    /// Swaps cities and days, keeping the tag sequence.
    fn relexicalize(&mut self, s: &S) -> S {
        fn np(g: &mut Gen, n: &Np) -> Np {
            match n {
                Np::Name(_) => Np::Name(g.pick(CITIES)),
                Np::Day(_) => Np::Day(g.pick(DAYS)),
                Np::Mod { base, pps, rel } => Np::Mod {
                    base: Box::new(np(g, base)),
                    pps: pps.iter().map(|(p, o)| (*p, np(g, o))).collect(),
                    rel: rel.as_ref().map(|v| Box::new(vp(g, v))),
                },
                other => other.clone(),
            }
        }
        fn vp(g: &mut Gen, v: &Vp) -> Vp {
            Vp {
                verb: v.verb,
                objs: v.objs.iter().map(|o| np(g, o)).collect(),
                pp: v.pp.as_ref().map(|(p, o)| (*p, np(g, o))),
                adv: v.adv,
            }
        }
        match s {
            S::Imp(v) => S::Imp(vp(self, v)),
            S::Decl(n, v) => S::Decl(np(self, n), vp(self, v)),
            S::Aux(a, n, v) => S::Aux(a, np(self, n), vp(self, v)),
            S::Adv(a, inner) => S::Adv(a, Box::new(self.relexicalize(inner))),
            S::Frag(n) => S::Frag(np(self, n)),
        }
    }
}

struct Item {
    text: String,
    gold: String,
    reference: String,
    reorder: bool,
}

fn render(s: &S, g: &Grammar) -> Item {
    let mut o = Out { g, words: Vec::new() };
    let gold = s_sig(s, &mut o);
    let mut fr = Vec::new();
    s_fr(s, &mut fr);
    Item {
        text: o.words.join(" "),
        gold,
        reference: fr.join(" "),
        reorder: reorders(s),
    }
}

/// Answers presented discriminants from the intended analysis until the
/// session resolves.
fn annotate(id: u64, item: &Item, g: &Grammar) -> TreebankEntry {
    let analyses = analyses_of(&item.text, g, None, Engine::Chart).expect("parse");
    let sigs: Vec<String> = analyses.iter().map(|a| a.signature()).collect();
    let gold = sigs
        .iter()
        .position(|s| *s == item.gold)
        .unwrap_or_else(|| panic!("intended analysis missing for `{}`:\n{}", item.text, item.gold));
    let m = Arc::new(build_incidence(&analyses, g).expect("incidence"));
    let mut session = Session::new(m.clone());
    let mut ts = 0;
    while session.status() == Status::Open {
        let d = *m
            .presentable()
            .iter()
            .find(|&&d| session.verdict(d).is_none())
            .expect("open session has an undecided discriminant");
        let v = if m.holds(d, gold) { Verdict::Correct } else { Verdict::Incorrect };
        ts += 1;
        session.judge(&m.discriminants[d].key, v, ts).expect("consistent judgment");
    }
    let mode = if session.remaining_count() == 1 {
        ResolveMode::UniqueRequired
    } else {
        ResolveMode::AcceptSet
    };
    session.resolve(mode).expect("resolves");
    TreebankEntry::from_session(id, &item.text, &session).expect("approved")
}

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let g = load_grammar(&std::fs::read_to_string(dir.join("atis.slt"))?)?;
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(20_260_115),
    };

    let mut seen = BTreeSet::new();
    let fresh = |gen: &mut Gen, mods: Mods, seen: &mut BTreeSet<String>| loop {
        let s = gen.sentence(mods);
        let item = render(&s, &g);
        if item.text.split(' ').count() <= 16 && seen.insert(item.text.clone()) {
            return (s, item);
        }
    };

    let mut treebank = Vec::new();
    let mut multi = 0;
    for i in 0..300 {
        let (_, item) = fresh(&mut gen, Mods::Any, &mut seen);
        let e = annotate(i as u64 + 1, &item, &g);
        multi += usize::from(e.approved.len() > 1);
        treebank.push(e);
    }
    std::fs::write(dir.join("treebank.jsonl"), write_treebank(&treebank))?;

    let mut heldout = String::new();
    let mut gold = String::new();
    for _ in 0..100 {
        let (_, item) = fresh(&mut gen, Mods::Any, &mut seen);
        writeln!(heldout, "{}", item.text)?;
        writeln!(gold, "{}\t{}", item.text, item.gold)?;
    }
    std::fs::write(dir.join("heldout.txt"), heldout)?;
    std::fs::write(dir.join("heldout_gold.tsv"), gold)?;

    let mut bilingual = String::from("# source\treference\treorders\n");
    for i in 0..50 {
        let mods = if i % 5 < 2 { Mods::Reorder } else { Mods::Plain };
        let (_, item) = fresh(&mut gen, mods, &mut seen);
        assert_eq!(item.reorder, mods == Mods::Reorder);
        writeln!(bilingual, "{}\t{}\t{}", item.text, item.reference, u8::from(item.reorder))?;
    }
    std::fs::write(dir.join("bilingual_test.tsv"), bilingual)?;

    let skeletons: Vec<S> = (0..60).map(|_| gen.sentence(Mods::Any)).collect();
    let weights: Vec<f64> = (1..=skeletons.len()).map(|r| 1.0 / (r as f64).powf(1.1)).collect();
    let dist = rand::distributions::WeightedIndex::new(&weights)?;
    let mut corpus = String::new();
    for _ in 0..500 {
        let k = gen.rng.sample(&dist);
        let a = gen.relexicalize(&skeletons[k]);
        let mut line = render(&a, &g).text;
        if gen.rng.gen_bool(0.1) {
            let k = gen.rng.sample(&dist);
            let b = gen.relexicalize(&skeletons[k]);
            line = format!("{line} and then {}", render(&b, &g).text);
        }
        writeln!(corpus, "{line}")?;
    }
    std::fs::write(dir.join("corpus.txt"), corpus)?;

    eprintln!("treebank: 300 entries ({multi} with several approved analyses)");
    Ok(())
}
