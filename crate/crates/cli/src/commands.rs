use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use fairlens_core::cooccur::{self, Anchor, EmptyHallucinations};
use fairlens_core::corpus;
use fairlens_core::hallucination::{self, SubCategoryRule, DEFAULT_HIERARCHY};
use fairlens_core::lexicon::{self, DEFAULT_LEXICON};
use fairlens_core::lic::{self, LicConfig};
use fairlens_core::retrieval::{self, DesiredDistribution, DesiredSource, NeutralHandling, RetrievalConfig};
use fairlens_core::{
    rng, vlbias, CaptionRecord, FairlensError, Gender, GenderCatalog, GenderLexicon, ObjectAnnotation,
    PredictionRecord, Result, SynonymHierarchy,
};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::report::{number, InputDigest, MetricReport};

/// Named stream choosing which reference caption stands for an image in LIC.
pub const REFERENCE_PICK_STREAM: &str = "lic.reference";

pub struct Context {
    pub global: GlobalArgs,
    pub lexicon: GenderLexicon,
    pub report: MetricReport,
}

impl Context {
    pub fn new(global: GlobalArgs, command: &str) -> Result<Self> {
        let mut report = MetricReport::new(command);
        let lexicon = match &global.lexicon {
            Some(path) => {
                report.input("lexicon", InputDigest::of_file(path)?);
                GenderLexicon::load(path)?
            }
            None => {
                report.input("lexicon", InputDigest::of_bundled(DEFAULT_LEXICON));
                GenderLexicon::default()
            }
        };
        Ok(Context {
            lexicon: lexicon.with_plurals(global.plurals),
            global,
            report,
        })
    }

    fn read<T>(&mut self, role: &str, path: &Path, reader: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
        self.report.input(role, InputDigest::of_file(path)?);
        reader(path)
    }

    fn hierarchy(&mut self, path: Option<&Path>) -> Result<SynonymHierarchy> {
        match path {
            Some(p) => self.read("hierarchy", p, |p| SynonymHierarchy::load(p)),
            None => {
                self.report
                    .input("hierarchy", InputDigest::of_bundled(DEFAULT_HIERARCHY));
                SynonymHierarchy::from_json(DEFAULT_HIERARCHY)
            }
        }
    }

    /// Gold labels from the catalog when given, else derived from references.
    fn gold(&mut self, catalog: Option<&Path>, refs: Option<&[CaptionRecord]>) -> Result<Option<GenderCatalog>> {
        if let Some(path) = catalog {
            return self.read("catalog", path, |p| corpus::read_catalog(p)).map(Some);
        }
        match refs {
            Some(refs) => derive_catalog(refs, &self.lexicon).map(Some),
            None => Ok(None),
        }
    }
}

fn derive_catalog(refs: &[CaptionRecord], lex: &GenderLexicon) -> Result<GenderCatalog> {
    let mut catalog = GenderCatalog::new();
    for r in refs {
        catalog.insert(r.image_id.clone(), lexicon::image_gender(&r.captions, lex)?);
    }
    Ok(catalog)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io_err = |e| FairlensError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(io_err)?;
    corpus::write_records(BufWriter::new(file), rows).map_err(io_err)
}

fn read_word_file(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| FairlensError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect())
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(FairlensError::InvalidArgument(
            "--k needs one or more positive integers".into(),
        ));
    }
    Ok(())
}

pub fn execute(ctx: &mut Context, command: &Command) -> Result<()> {
    match command {
        Command::Mask(a) => mask(ctx, a),
        Command::Label(a) => label(ctx, a),
        Command::Error(a) => error(ctx, a),
        Command::Lic(a) => lic_command(ctx, a),
        Command::Biasamp(a) => biasamp(ctx, a),
        Command::Chair(a) => chair_command(ctx, a),
        Command::Hitratio(a) => hitratio(ctx, a),
        Command::Retrieval(a) => retrieval_command(ctx, a),
        Command::Resolution(a) => resolution(ctx, a),
        Command::Vlbias(a) => vlbias_command(ctx, a),
        Command::Report(a) => report(ctx, a),
    }
}

#[derive(Serialize)]
struct MaskedLine<'a> {
    image_id: &'a str,
    source: &'static str,
    masked: String,
    source_gender: lexicon::GenderLabel,
}

fn mask(ctx: &mut Context, a: &MaskArgs) -> Result<()> {
    let mut texts: Vec<(String, &'static str, String)> = Vec::new();
    if let Some(path) = &a.pred {
        for p in ctx.read("pred", path, |p| corpus::read_predictions(p))? {
            texts.push((p.image_id, "pred", p.caption));
        }
    }
    if let Some(path) = &a.refs {
        for r in ctx.read("refs", path, |p| corpus::read_captions(p))? {
            for c in r.captions {
                texts.push((r.image_id.clone(), "refs", c));
            }
        }
    }
    let mut counts = corpus::LabelCounts::default();
    let mut n_masked = 0usize;
    let mut lines = Vec::with_capacity(texts.len());
    for (id, source, text) in &texts {
        let m = lexicon::mask_gender(text, &ctx.lexicon);
        counts.add(m.source_gender);
        n_masked += m.tokens.iter().filter(|t| *t == lexicon::GENDER_SENTINEL).count();
        if a.masked_out.is_some() {
            lines.push(MaskedLine {
                image_id: id,
                source,
                masked: m.rendered(),
                source_gender: m.source_gender,
            });
        }
    }
    if let Some(out) = &a.masked_out {
        write_jsonl(out, &lines)?;
    }
    let r = &mut ctx.report;
    r.set("mask", "n_texts", texts.len());
    r.set("mask", "n_masked_tokens", n_masked);
    r.set("mask", "male", counts.male);
    r.set("mask", "female", counts.female);
    r.set("mask", "neutral", counts.neutral);
    let only_text: Vec<&str> = texts.iter().map(|t| t.2.as_str()).collect();
    let rate = lexicon::gender_mention_rate(&only_text, &ctx.lexicon);
    if let Some(v) = ctx.report.settle("gender", "mention_rate", rate)? {
        ctx.report.set_f64("gender", "mention_rate", v);
    }
    Ok(())
}

fn label(ctx: &mut Context, a: &LabelArgs) -> Result<()> {
    let refs = ctx.read("refs", &a.refs, |p| corpus::read_captions(p))?;
    let catalog = derive_catalog(&refs, &ctx.lexicon)?;
    if let Some(out) = &a.catalog_out {
        let entries: Vec<_> = catalog.entries().collect();
        write_jsonl(out, &entries)?;
    }
    let d = catalog.distribution();
    let r = &mut ctx.report;
    r.set("label", "n_images", d.total());
    r.set("label", "male", d.male);
    r.set("label", "female", d.female);
    r.set("label", "neutral", d.neutral);
    Ok(())
}

fn error_metrics(ctx: &mut Context, preds: &[PredictionRecord], gold: &GenderCatalog) -> Result<()> {
    let tally = lexicon::error_tally(preds, gold, &ctx.lexicon)?;
    let r = &mut ctx.report;
    if let Some(v) = r.settle("error", "rate", tally.rate())? {
        r.set_f64("error", "rate", v);
    }
    r.set("error", "errors", tally.errors);
    r.set("error", "gendered", tally.gendered);
    r.set("error", "neutral_predictions", tally.neutral_predictions);
    r.set("error", "neutral_gold", tally.neutral_gold);
    let captions: Vec<&str> = preds.iter().map(|p| p.caption.as_str()).collect();
    let rate = lexicon::gender_mention_rate(&captions, &ctx.lexicon);
    if let Some(v) = r.settle("gender", "mention_rate", rate)? {
        r.set_f64("gender", "mention_rate", v);
    }
    Ok(())
}

fn error(ctx: &mut Context, a: &ErrorArgs) -> Result<()> {
    let preds = ctx.read("pred", &a.pred, |p| corpus::read_predictions(p))?;
    let refs = match &a.refs {
        Some(path) => Some(ctx.read("refs", path, |p| corpus::read_captions(p))?),
        None => None,
    };
    let gold = ctx
        .gold(a.gold.catalog.as_deref(), refs.as_deref())?
        .expect("clap requires --refs or --catalog");
    error_metrics(ctx, &preds, &gold)
}

/// Masked reference and generated corpora for LIC, both labeled with the
/// image's gold gender. Each image contributes one seeded reference caption.
pub fn lic_corpora(
    preds: &[PredictionRecord],
    refs: &[CaptionRecord],
    gold: &GenderCatalog,
    lex: &GenderLexicon,
    seed: u64,
) -> Result<(Vec<lexicon::MaskedCaption>, Vec<lexicon::MaskedCaption>)> {
    let by_id: BTreeMap<&str, &CaptionRecord> = refs.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut pick = rng::stream(seed, REFERENCE_PICK_STREAM);
    let mut ground_truth = Vec::new();
    let mut generated = Vec::new();
    for p in preds {
        let label = gold
            .get(&p.image_id)
            .ok_or_else(|| FairlensError::MissingGoldLabel(p.image_id.clone()))?;
        if label.gender().is_none() {
            continue;
        }
        let r = by_id.get(p.image_id.as_str()).ok_or_else(|| {
            FairlensError::JoinMismatch(format!("no reference captions for image `{}`", p.image_id))
        })?;
        let caption = &r.captions[pick.gen_range(0..r.captions.len())];
        let mut d = lexicon::mask_gender(caption, lex);
        d.source_gender = label;
        ground_truth.push(d);
        let mut m = lexicon::mask_gender(&p.caption, lex);
        m.source_gender = label;
        generated.push(m);
    }
    Ok((ground_truth, generated))
}

fn lic_metrics(
    ctx: &mut Context,
    preds: &[PredictionRecord],
    refs: &[CaptionRecord],
    gold: &GenderCatalog,
    opts: &LicOptions,
) -> Result<()> {
    let seed = ctx.global.seed;
    let (d, m) = lic_corpora(preds, refs, gold, &ctx.lexicon, seed)?;
    let config = LicConfig {
        seed,
        eval_fraction: opts.eval_fraction,
        smoothing: opts.smoothing,
    };
    let r = &mut ctx.report;
    if let Some(res) = r.settle("lic", "lic", lic::lic_score(&d, &m, &config))? {
        r.set_f64("lic", "lic", res.lic);
        r.set_f64("lic", "lic_d", res.lic_d);
        r.set_f64("lic", "lic_m", res.lic_m);
        r.set("lic", "n_train_d", res.n_train_d);
        r.set("lic", "n_train_m", res.n_train_m);
        r.set("lic", "n_eval_d", res.n_eval_d);
        r.set("lic", "n_eval_m", res.n_eval_m);
        r.set("lic", "ties_d", res.ties_d);
        r.set("lic", "ties_m", res.ties_m);
    }
    Ok(())
}

fn lic_command(ctx: &mut Context, a: &LicArgs) -> Result<()> {
    let preds = ctx.read("pred", &a.pred, |p| corpus::read_predictions(p))?;
    let refs = ctx.read("refs", &a.refs, |p| corpus::read_captions(p))?;
    let gold = ctx.gold(a.gold.catalog.as_deref(), Some(&refs))?.expect("refs given");
    lic_metrics(ctx, &preds, &refs, &gold, &a.lic)
}

fn word_list(ctx: &mut Context, train: &Path, w: &WordListArgs) -> Result<BTreeSet<String>> {
    if let Some(path) = &w.words {
        return ctx.read("words", path, read_word_file);
    }
    let Some(top_n) = w.top_n else {
        return Err(FairlensError::InvalidArgument(
            "BiasAmp needs --words or --top-n".into(),
        ));
    };
    let stoplist = match &w.stoplist {
        Some(path) => ctx.read("stoplist", path, read_word_file)?,
        None => BTreeSet::new(),
    };
    let lex = ctx.lexicon.clone();
    ctx.read("train", train, |p| {
        cooccur::derive_word_list_from(corpus::stream_captions(p)?, &lex, top_n, &stoplist)
    })
}

fn biasamp_metrics(
    ctx: &mut Context,
    train: &Path,
    preds: &[PredictionRecord],
    words: BTreeSet<String>,
) -> Result<()> {
    let pred_images: Vec<CaptionRecord> = preds.iter().map(CaptionRecord::from).collect();
    let lex = ctx.lexicon.clone();
    let train_table = ctx.read("train", train, |p| {
        cooccur::build_table_from(corpus::stream_captions(p)?, &lex, words.clone(), None)
    })?;
    let pred_table = cooccur::build_table(&pred_images, &ctx.lexicon, words, None)?;
    let r = &mut ctx.report;
    if let Some(res) = r.settle("biasamp", "value", cooccur::bias_amp(&train_table, &pred_table))? {
        r.set_f64("biasamp", "value", res.value);
        r.set("biasamp", "n_words", res.n_words);
        r.set_serialized("biasamp", "skipped_words", &res.skipped_words);
        r.set_serialized("biasamp", "excluded_words", &res.excluded_words);
        if !res.excluded_words.is_empty() {
            r.warn(format!(
                "biasamp: {} listed word(s) never co-occur with a gender in training and were left out",
                res.excluded_words.len()
            ));
        }
    }
    Ok(())
}

fn biasamp(ctx: &mut Context, a: &BiasAmpArgs) -> Result<()> {
    let preds = ctx.read("pred", &a.pred, |p| corpus::read_predictions(p))?;
    let words = word_list(ctx, &a.train, &a.words)?;
    biasamp_metrics(ctx, &a.train, &preds, words)
}

/// Ground-truth object set per predicted image.
pub fn ground_truths(
    preds: &[PredictionRecord],
    refs: Option<&[CaptionRecord]>,
    annotations: Option<&[ObjectAnnotation]>,
    h: &SynonymHierarchy,
) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let refs: BTreeMap<&str, &CaptionRecord> = refs
        .unwrap_or_default()
        .iter()
        .map(|r| (r.image_id.as_str(), r))
        .collect();
    let annotations: BTreeMap<&str, &ObjectAnnotation> = annotations
        .unwrap_or_default()
        .iter()
        .map(|a| (a.image_id.as_str(), a))
        .collect();
    let none: Vec<String> = Vec::new();
    let mut out = BTreeMap::new();
    for p in preds {
        let id = p.image_id.as_str();
        let captions = refs.get(id).map_or(&none, |r| &r.captions);
        let gt = hallucination::ground_truth_objects(annotations.get(id).copied(), captions, h)
            .map_err(|e| match e {
                FairlensError::NoGroundTruth(_) => FairlensError::NoGroundTruth(id.to_string()),
                other => other,
            })?;
        out.insert(id.to_string(), gt);
    }
    Ok(out)
}

struct ObjectInputs {
    preds: Vec<PredictionRecord>,
    refs: Option<Vec<CaptionRecord>>,
    hierarchy: SynonymHierarchy,
    ground_truths: BTreeMap<String, BTreeSet<String>>,
    rule: SubCategoryRule,
}

fn object_inputs(ctx: &mut Context, pred: &Path, refs: Option<&Path>, o: &ObjectArgs) -> Result<ObjectInputs> {
    let preds = ctx.read("pred", pred, |p| corpus::read_predictions(p))?;
    let refs = match refs {
        Some(path) => Some(ctx.read("refs", path, |p| corpus::read_captions(p))?),
        None => None,
    };
    let annotations = match &o.annotations {
        Some(path) => Some(ctx.read("annotations", path, |p| corpus::read_annotations(p))?),
        None => None,
    };
    let hierarchy = ctx.hierarchy(o.hierarchy.as_deref())?;
    let ground_truths = ground_truths(&preds, refs.as_deref(), annotations.as_deref(), &hierarchy)?;
    let rule = if o.relax_sub {
        SubCategoryRule::RelaxSub
    } else {
        SubCategoryRule::Strict
    };
    Ok(ObjectInputs {
        preds,
        refs,
        hierarchy,
        ground_truths,
        rule,
    })
}

fn chair_metrics(ctx: &mut Context, inputs: &ObjectInputs) -> Result<Option<hallucination::ChairResult>> {
    let outcome = hallucination::chair(&inputs.preds, &inputs.ground_truths, &inputs.hierarchy, inputs.rule);
    let r = &mut ctx.report;
    let Some(res) = r.settle("chair", "chair_s", outcome)? else {
        return Ok(None);
    };
    if let Some(v) = r.settle("chair", "chair_i", res.chair_i())? {
        r.set_f64("chair", "chair_i", v);
    }
    r.set_f64("chair", "chair_s", res.chair_s);
    r.set("chair", "n_objects", res.n_objects);
    r.set("chair", "n_hallucinated_objects", res.n_hallucinated_objects);
    r.set("chair", "n_captions", res.n_captions);
    r.set("chair", "n_hallucinated_captions", res.n_hallucinated_captions);
    Ok(Some(res))
}

#[derive(Serialize)]
struct ImageLine<'a> {
    image_id: &'a str,
    mentioned: &'a BTreeSet<String>,
    hallucinated: &'a BTreeSet<String>,
}

fn chair_command(ctx: &mut Context, a: &ChairArgs) -> Result<()> {
    let inputs = object_inputs(ctx, &a.pred, a.refs.as_deref(), &a.objects)?;
    let res = chair_metrics(ctx, &inputs)?;
    if let (Some(out), Some(res)) = (&a.per_image_out, &res) {
        let lines: Vec<ImageLine> = res
            .per_image
            .iter()
            .map(|(id, img)| ImageLine {
                image_id: id,
                mentioned: &img.mentioned,
                hallucinated: &img.hallucinated,
            })
            .collect();
        write_jsonl(out, &lines)?;
    }
    Ok(())
}

fn hitratio(ctx: &mut Context, a: &HitRatioArgs) -> Result<()> {
    check_ks(&a.k)?;
    let inputs = object_inputs(ctx, &a.pred, a.refs.as_deref(), &a.objects)?;
    let Some(chair) = chair_metrics(ctx, &inputs)? else {
        return Ok(());
    };
    let h = &inputs.hierarchy;
    let lex = ctx.lexicon.clone();
    let table = ctx.read("train", &a.train, |p| {
        cooccur::build_object_table_from(corpus::stream_captions(p)?, &lex, h)
    })?;
    let per_image = chair.hallucinations();
    let empty = if a.empty_as_zero {
        EmptyHallucinations::CountAsZero
    } else {
        EmptyHallucinations::Exclude
    };

    for anchor in &a.anchor {
        let canonical = h
            .canonical_of(&anchor.to_lowercase())
            .map(str::to_string)
            .ok_or_else(|| FairlensError::UnknownObject(anchor.clone()))?;
        let with_anchor: BTreeSet<String> = inputs
            .ground_truths
            .iter()
            .filter(|(_, gt)| gt.contains(&canonical))
            .map(|(id, _)| id.clone())
            .collect();
        for &k in &a.k {
            let c_set: BTreeSet<String> =
                cooccur::top_cooccurring(&table, &Anchor::Object(canonical.clone()), k)?.into_iter().collect();
            let name = format!("object.{canonical}@{k}");
            let hr = cooccur::hit_ratio_object(&per_image, &c_set, &with_anchor, empty);
            if let Some(hr) = ctx.report.settle("hitratio", &name, hr)? {
                ctx.report.set_serialized("hitratio", &name, &hr);
            }
        }
    }

    let gold = ctx.gold(a.gold.catalog.as_deref(), inputs.refs.as_deref())?;
    let Some(gold) = gold else {
        ctx.report
            .warn("hitratio: no --catalog or --refs, gender hit ratios skipped");
        return Ok(());
    };
    let predicted: GenderCatalog = inputs
        .preds
        .iter()
        .filter_map(|p| gold.get(&p.image_id).map(|l| (p.image_id.clone(), l)))
        .collect();
    for g in Gender::BOTH {
        for &k in &a.k {
            let name = format!("gender.{g}@{k}");
            let c_set = match cooccur::top_cooccurring(&table, &Anchor::Gender(g), k) {
                Ok(c) => c.into_iter().collect::<BTreeSet<_>>(),
                Err(FairlensError::UnknownAnchor(_)) => {
                    ctx.report.set("hitratio", &name, Value::Null);
                    ctx.report
                        .warn(format!("hitratio.{name}: no {g} image in the training captions"));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let hr = cooccur::hit_ratio_gender(&per_image, &predicted, g, &c_set, empty);
            if let Some(hr) = ctx.report.settle("hitratio", &name, hr)? {
                ctx.report.set_serialized("hitratio", &name, &hr);
            }
        }
    }
    Ok(())
}

fn desired_source(ctx: &mut Context, spec: &str) -> Result<DesiredSource> {
    match spec {
        "uniform" => Ok(DesiredSource::Fixed(DesiredDistribution::UNIFORM)),
        "from-candidates" => Ok(DesiredSource::FromCandidates),
        path => {
            let path = Path::new(path);
            let d: DesiredDistribution = ctx.read("desired", path, |p| {
                let text = std::fs::read_to_string(p).map_err(|e| FairlensError::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| FairlensError::InvalidDesired(format!("{}: {e}", p.display())))
            })?;
            d.validate()?;
            Ok(DesiredSource::Fixed(d))
        }
    }
}

#[derive(Serialize)]
struct QueryLine<'a> {
    query_id: &'a str,
    #[serde(flatten)]
    metrics: &'a retrieval::QueryMetrics,
}

fn retrieval_command(ctx: &mut Context, a: &RetrievalArgs) -> Result<()> {
    check_ks(&a.k)?;
    let rankings = ctx.read("rankings", &a.rankings, |p| corpus::read_rankings(p))?;
    let catalog = ctx.read("catalog", &a.catalog, |p| corpus::read_catalog(p))?;
    let config = RetrievalConfig {
        ks: a.k.clone(),
        epsilon: a.epsilon,
        desired: desired_source(ctx, &a.desired)?,
        neutral: if a.neutral_as_mass {
            NeutralHandling::AsMass
        } else {
            NeutralHandling::Exclude
        },
    };
    let res = retrieval::evaluate_rankings(&rankings, &catalog, &config)?;
    if let Some(out) = &a.per_query_out {
        let lines: Vec<QueryLine> = res
            .per_query
            .iter()
            .map(|(id, q)| QueryLine { query_id: id, metrics: q })
            .collect();
        write_jsonl(out, &lines)?;
    }

    let r = &mut ctx.report;
    r.set("retrieval", "n_queries", rankings.len());
    let summary = |r: &mut MetricReport, name: String, s: Option<&retrieval::Summary>| match s {
        Some(s) => r.set(
            "retrieval",
            &name,
            json!({"mean": number(s.mean), "sigma": number(s.sigma), "n": s.n}),
        ),
        None => {
            r.set("retrieval", &name, Value::Null);
            r.warn(format!("retrieval.{name}: undefined for every query"));
            r.undefined = true;
        }
    };
    let has_relevant = rankings.iter().any(|q| !q.relevant.is_empty());
    for &k in &a.k {
        summary(r, format!("bias@{k}"), res.aggregate.bias.get(&k));
        summary(r, format!("max_skew@{k}"), res.aggregate.max_skew.get(&k));
        if has_relevant {
            summary(r, format!("recall@{k}"), res.aggregate.recall.get(&k));
        }
    }
    summary(r, "ndkl".to_string(), res.aggregate.ndkl.as_ref());
    r.set("retrieval", "ndkl_units", "nats");
    if !has_relevant {
        r.warn("retrieval: rankings carry no relevant sets, Recall@K not computed");
    }
    for (k, n) in &res.truncated {
        if *n > 0 {
            r.warn(format!("retrieval: {n} ranking(s) shorter than k = {k}, scored on the whole list"));
        }
    }
    for (k, n) in &res.undefined_max_skew {
        if *n > 0 && res.aggregate.max_skew.contains_key(k) {
            r.warn(format!("retrieval: MaxSkew@{k} undefined for {n} query(ies), left out of the mean"));
        }
    }
    if res.undefined_desired > 0 {
        r.warn(format!(
            "retrieval: {} query(ies) have no gendered candidate, no desired distribution",
            res.undefined_desired
        ));
    }
    Ok(())
}

fn resolution(ctx: &mut Context, a: &ResolutionArgs) -> Result<()> {
    let instances = ctx.read("instances", &a.instances, |p| corpus::read_resolution(p))?;
    let r = &mut ctx.report;
    let Some(res) = r.settle("resolution", "accuracy", retrieval::resolution_metrics(&instances))? else {
        return Ok(());
    };
    r.set("resolution", "n_instances", instances.len());
    r.set_f64("resolution", "accuracy", res.accuracy);
    let gaps: serde_json::Map<String, Value> =
        res.delta_ra.iter().map(|(k, v)| (k.clone(), number(*v))).collect();
    r.set("resolution", "delta_ra", gaps);
    for (code, occupations) in &res.excluded {
        r.warn(format!(
            "resolution: {code} occupations without both genders left out of the gap: {}",
            occupations.iter().cloned().collect::<Vec<_>>().join(", ")
        ));
    }
    for code in res.per_occupation.keys() {
        if !res.delta_ra.contains_key(code) {
            r.warn(format!("resolution.delta_ra.{code}: no occupation has both genders"));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TargetLine<'a> {
    target: &'a str,
    value: Option<f64>,
    pairs: usize,
    skipped_pairs: usize,
}

fn vlbias_command(ctx: &mut Context, a: &VlBiasArgs) -> Result<()> {
    let records = ctx.read("dump", &a.dump, |p| corpus::read_vlbias(p))?;
    let r = &mut ctx.report;
    r.set("vlbias", "n_pairs", records.len());
    let Some(res) = r.settle("vlbias", "dataset_bias", vlbias::dataset_bias(&records, a.delta))? else {
        return Ok(());
    };
    let skipped: usize = res.skipped_pairs.values().sum();
    r.set_f64("vlbias", "dataset_bias", res.dataset_bias);
    let per_target: serde_json::Map<String, Value> =
        res.per_target.iter().map(|(k, v)| (k.clone(), number(*v))).collect();
    r.set("vlbias", "per_target", per_target);
    if !res.per_group.is_empty() {
        let per_group: serde_json::Map<String, Value> =
            res.per_group.iter().map(|(k, v)| (k.clone(), number(*v))).collect();
        r.set("vlbias", "per_group", per_group);
    }
    r.set("vlbias", "skipped_pairs", skipped);
    r.set_serialized("vlbias", "undefined_targets", &res.undefined_targets);
    if skipped > 0 {
        r.warn(format!(
            "vlbias: {skipped} of {} pair(s) skipped, gender probability shift below {}",
            records.len(),
            a.delta
        ));
    }
    if let Some(out) = &a.per_target_out {
        let lines: Vec<TargetLine> = res
            .pair_counts
            .iter()
            .map(|(t, n)| TargetLine {
                target: t,
                value: res.per_target.get(t).copied(),
                pairs: *n,
                skipped_pairs: res.skipped_pairs.get(t).copied().unwrap_or(0),
            })
            .collect();
        write_jsonl(out, &lines)?;
    }
    Ok(())
}

fn report(ctx: &mut Context, a: &ReportArgs) -> Result<()> {
    let inputs = object_inputs(ctx, &a.pred, Some(&a.refs), &a.objects)?;
    let refs = inputs.refs.as_deref().expect("refs given");
    let join = corpus::validate_join(&inputs.preds, refs, None, false)?;
    if !join.predictions_missing_reference.is_empty() {
        return Err(FairlensError::JoinMismatch(format!(
            "predictions without references: {}",
            join.predictions_missing_reference.join(", ")
        )));
    }
    if !join.references_missing_prediction.is_empty() {
        ctx.report.warn(format!(
            "report: {} reference image(s) have no prediction",
            join.references_missing_prediction.len()
        ));
    }
    let gold = ctx.gold(a.gold.catalog.as_deref(), Some(refs))?.expect("refs given");
    error_metrics(ctx, &inputs.preds, &gold)?;
    lic_metrics(ctx, &inputs.preds, refs, &gold, &a.lic)?;
    chair_metrics(ctx, &inputs)?;
    if let Some(train_path) = &a.train {
        let words = word_list(ctx, train_path, &a.words)?;
        biasamp_metrics(ctx, train_path, &inputs.preds, words)?;
    }
    Ok(())
}
