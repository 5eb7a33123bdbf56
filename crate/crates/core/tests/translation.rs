mod common;

use std::time::Duration;

use slt_core::chart::Stage;
use slt_core::pipeline::{ResourcePaths, Resources};
use slt_core::translator::{surface_translate, BilingualLexicon, LexPreferences, Method, SourceToken, TranslateConfig};

fn resources() -> Resources {
    Resources::load(&ResourcePaths {
        grammar: common::fixture("atis.slt"),
        lexicon: Some(common::fixture("bilingual.lex")),
        prefs: Some(common::fixture("prefs.jsonl")),
        ..ResourcePaths::default()
    })
    .unwrap()
}

fn last(res: &Resources, text: &str) -> String {
    let it = res.translate_text(text, Duration::from_secs(5)).unwrap();
    it.last().unwrap().text.clone()
}

#[test]
fn context_picks_the_adjective_sense() {
    let res = resources();
    assert_eq!(last(&res, "the early flights"), "le vols matinal");
    assert_eq!(last(&res, "the early fares"), "le tarifs tot");
}

#[test]
fn raw_stage_is_word_for_word() {
    let res = resources();
    let it = res.translate_text("the early flights", Duration::from_secs(5)).unwrap();
    assert_eq!(it[0].stage, Stage::Raw);
    assert_eq!(it[0].text, "le matinal vols");
}

#[test]
fn reordering_sentences_match_references() {
    let res = resources();
    let rows = common::bilingual();
    assert!(rows.iter().filter(|r| r.2).count() >= 10);
    for (src, reference, _) in rows.iter().filter(|r| r.2).take(10) {
        assert_eq!(&last(&res, src), reference, "{src}");
    }
}

#[test]
fn specialized_grammar_translates_the_same() {
    let plain = resources();
    let mut spec = resources();
    spec.specialized = Some(common::specialized(&spec.grammar));
    for (src, _, _) in common::bilingual().iter().take(15) {
        assert_eq!(last(&spec, src), last(&plain, src), "{src}");
    }
}

#[test]
fn surface_tiles_longest_phrase() {
    let lex = BilingualLexicon::parse(&common::read_fixture("bilingual.lex")).unwrap();
    let tokens: Vec<SourceToken> = "show me the flights"
        .split(' ')
        .enumerate()
        .map(|(i, w)| SourceToken { word: w.into(), tag: None, from: i, to: i + 1 })
        .collect();
    let edges = surface_translate(&tokens, &lex, &TranslateConfig::default());
    assert_eq!(edges.len(), 3);
    assert_eq!((edges[0].from, edges[0].to), (0, 2));
    assert_eq!(edges[0].text, ["montrez", "moi"]);
    assert!(edges.iter().all(|e| e.method == Method::Surface));
}

#[test]
fn malformed_resources_are_rejected() {
    assert!(BilingualLexicon::parse("src \"a\" => \"b\"\n").is_err());
    assert!(LexPreferences::parse_jsonl("{\"source\": \"a\"}\n").is_err());
    let prefs = LexPreferences::parse_jsonl(&common::read_fixture("prefs.jsonl")).unwrap();
    assert!(prefs.get("early", "matinal", Some("flights")) > prefs.get("early", "tot", Some("flights")));
    assert!(prefs.get("early", "tot", None) > prefs.get("early", "matinal", None));
}
