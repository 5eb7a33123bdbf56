//! Loading the resource files and running parse and translate end to end.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::chart::{parse_staged, parse_staged_with, ParseConfig, StageOutputs};
use crate::ebl::SpecializedGrammar;
use crate::grammar::{load_grammar, Grammar};
use crate::lattice::{linear_lattice, Lattice};
use crate::pruner::PruneModel;
use crate::translator::{self, AnytimeTranslator, BilingualLexicon, Emission, LexPreferences, TranslateConfig};

/// Paths of the resource files; only the grammar is required.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourcePaths {
    pub grammar: PathBuf,
    pub specialized: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub prefs: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

pub struct Resources {
    pub grammar: Grammar,
    pub specialized: Option<SpecializedGrammar>,
    pub lexicon: BilingualLexicon,
    pub prefs: LexPreferences,
    pub model: Option<PruneModel>,
    pub parse: ParseConfig,
    pub translate: TranslateConfig,
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

impl Resources {
    pub fn new(grammar: Grammar) -> Self {
        Resources {
            grammar,
            specialized: None,
            lexicon: BilingualLexicon::default(),
            prefs: LexPreferences::default(),
            model: None,
            parse: ParseConfig::default(),
            translate: TranslateConfig::default(),
        }
    }

    pub fn load(paths: &ResourcePaths) -> anyhow::Result<Self> {
        let grammar = load_grammar(&read(&paths.grammar)?).with_context(|| format!("loading {}", paths.grammar.display()))?;
        let mut res = Resources::new(grammar);
        if let Some(p) = &paths.specialized {
            let (g, spec) = SpecializedGrammar::load(&read(p)?).with_context(|| format!("loading {}", p.display()))?;
            if g.id() != res.grammar.id() {
                bail!("{} was specialized from grammar {}, not {}", p.display(), g.id(), res.grammar.id());
            }
            res.specialized = Some(spec);
        }
        if let Some(p) = &paths.lexicon {
            res.lexicon = BilingualLexicon::parse(&read(p)?).with_context(|| format!("loading {}", p.display()))?;
        }
        if let Some(p) = &paths.prefs {
            res.prefs = LexPreferences::parse_jsonl(&read(p)?).with_context(|| format!("loading {}", p.display()))?;
        }
        if let Some(p) = &paths.model {
            res.model = Some(PruneModel::from_jsonl(&read(p)?).with_context(|| format!("loading {}", p.display()))?);
        }
        Ok(res)
    }

    pub fn translation_resources(&self) -> translator::Resources<'_> {
        translator::Resources {
            grammar: &self.grammar,
            specialized: self.specialized.as_ref(),
            lexicon: &self.lexicon,
            prefs: &self.prefs,
        }
    }

    pub fn parse(&self, lattice: &Lattice) -> anyhow::Result<StageOutputs> {
        Ok(parse_staged(
            lattice,
            &self.grammar,
            self.specialized.as_ref(),
            self.model.as_ref(),
            &self.parse,
        )?)
    }

    pub fn parse_text(&self, text: &str) -> anyhow::Result<StageOutputs> {
        self.parse(&linear_lattice(text, 0.0)?)
    }

    /// Parses stage by stage, translating after each, until the stages run
    /// out or `time_limit` has passed.
    pub fn translate(&self, lattice: &Lattice, time_limit: Duration) -> anyhow::Result<Vec<Emission>> {
        if time_limit.is_zero() {
            return Err(translator::TranslateError::BadTimeLimit.into());
        }
        let deadline = Instant::now() + time_limit;
        let tres = self.translation_resources();
        let mut t = AnytimeTranslator::new(lattice.vertex_count(), &tres, &self.translate);
        parse_staged_with(
            lattice,
            &self.grammar,
            self.specialized.as_ref(),
            self.model.as_ref(),
            &self.parse,
            &mut |snap| {
                t.feed(snap);
                Instant::now() < deadline
            },
        )?;
        Ok(t.into_emissions())
    }

    pub fn translate_text(&self, text: &str, time_limit: Duration) -> anyhow::Result<Vec<Emission>> {
        self.translate(&linear_lattice(text, 0.0)?, time_limit)
    }
}

/// Approved derivations of treebank entries, one per approved analysis.
/// Entries whose signatures do not rebuild under `grammar` are returned
/// separately with the reason.
pub fn treebank_derivations(
    entries: &[crate::treebanker::TreebankEntry],
    grammar: &Grammar,
    unknown_tag: &str,
) -> (Vec<(u64, std::sync::Arc<crate::chart::Constituent>)>, Vec<(u64, String)>) {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for e in entries {
        let pairs: Vec<(u64, String)> = e.approved.iter().map(|s| (e.id, s.clone())).collect();
        match crate::ebl::derivations_from_signatures(&pairs, grammar, unknown_tag) {
            Ok(mut d) => good.append(&mut d),
            Err(err) => bad.push((e.id, err.to_string())),
        }
    }
    (good, bad)
}

/// Short content digest naming a treebank.
pub fn treebank_id(entries: &[crate::treebanker::TreebankEntry]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(crate::treebanker::write_treebank(entries).as_bytes());
    format!("tb-{}", digest.iter().take(6).map(|b| format!("{b:02x}")).collect::<String>())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub index: usize,
    pub sentence: String,
    pub original_ms: f64,
    pub specialized_ms: f64,
    pub original_parsed: bool,
    pub specialized_parsed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    pub median_original_ms: f64,
    pub median_specialized_ms: f64,
    /// Median specialized time over median original time.
    pub median_ratio: f64,
    /// Per-sentence specialized/original ratios at the 10/25/50/75/90th
    /// percentiles.
    pub ratio_percentiles: Vec<(u8, f64)>,
    /// Share of sentences parsed by the original grammar that the
    /// specialized one also parses.
    pub coverage_retention: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => s[n / 2],
        _ => (s[n / 2 - 1] + s[n / 2]) / 2.0,
    }
}

fn time_best<T>(repeat: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeat.max(1) {
        let t = Instant::now();
        let r = f();
        best = best.min(t.elapsed().as_secs_f64() * 1000.0);
        out = Some(r);
    }
    (best, out.expect("at least one run"))
}

/// Times the unpruned original chart parse against the specialized GLR
/// parse of each sentence, keeping the best of `repeat` runs.
pub fn bench(grammar: &Grammar, spec: &SpecializedGrammar, sentences: &[String], repeat: usize) -> BenchSummary {
    use crate::chart::{analyses_of, Engine};
    spec.table();
    let rows: Vec<BenchRow> = sentences
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let (original_ms, a) = time_best(repeat, || analyses_of(s, grammar, None, Engine::Chart));
            let (specialized_ms, b) = time_best(repeat, || analyses_of(s, grammar, Some(spec), Engine::Lr));
            BenchRow {
                index,
                sentence: s.clone(),
                original_ms,
                specialized_ms,
                original_parsed: a.is_ok_and(|v| !v.is_empty()),
                specialized_parsed: b.is_ok_and(|v| !v.is_empty()),
            }
        })
        .collect();
    let orig: Vec<f64> = rows.iter().map(|r| r.original_ms).collect();
    let specialized: Vec<f64> = rows.iter().map(|r| r.specialized_ms).collect();
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.specialized_ms / r.original_ms.max(1e-9)).collect();
    ratios.sort_by(f64::total_cmp);
    let parsed = rows.iter().filter(|r| r.original_parsed).count();
    let kept = rows.iter().filter(|r| r.original_parsed && r.specialized_parsed).count();
    let (mo, ms) = (median(&orig), median(&specialized));
    BenchSummary {
        median_original_ms: mo,
        median_specialized_ms: ms,
        median_ratio: ms / mo,
        ratio_percentiles: [10u8, 25, 50, 75, 90]
            .iter()
            .map(|&p| (p, percentile(&ratios, p as f64)))
            .collect(),
        coverage_retention: if parsed == 0 { 1.0 } else { kept as f64 / parsed as f64 },
        rows,
    }
}

impl BenchSummary {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("index\toriginal_ms\tspecialized_ms\toriginal_parsed\tspecialized_parsed\tsentence\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.3}\t{:.3}\t{}\t{}\t{}\n",
                r.index, r.original_ms, r.specialized_ms, r.original_parsed as u8, r.specialized_parsed as u8, r.sentence
            ));
        }
        let pct: Vec<String> = self.ratio_percentiles.iter().map(|(p, v)| format!("p{p}={v:.3}")).collect();
        out.push_str(&format!(
            "# median_original_ms={:.3} median_specialized_ms={:.3} median_ratio={:.3} median_speedup={:.2} coverage_retention={:.3} ratios {}\n",
            self.median_original_ms,
            self.median_specialized_ms,
            self.median_ratio,
            1.0 / self.median_ratio,
            self.coverage_retention,
            pct.join(" ")
        ));
        out
    }
}
