mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use fairlens_core::cooccur::{
    bias_amp, build_table, hit_ratio_gender, hit_ratio_object, top_cooccurring, Anchor, CooccurrenceTable,
    EmptyHallucinations,
};
use fairlens_core::corpus::{write_records, GenderShifts, ProbabilityShift};
use fairlens_core::hallucination::{chair, is_hallucinated, SubCategoryRule};
use fairlens_core::lexicon::{caption_gender, mask_gender, tokenize, GENDER_SENTINEL};
use fairlens_core::lic::{lic_score, LicConfig};
use fairlens_core::retrieval::{
    bias_at_k, max_skew_at_k, ndkl, recall_at_k, DesiredDistribution, NeutralHandling,
};
use fairlens_core::vlbias::{dataset_bias, pair_bias, PairBias, DEFAULT_DELTA};
use fairlens_core::{
    rng, synth, CaptionRecord, Gender, GenderCatalog, GenderLabel, GenderLexicon, MaskedCaption,
    PredictionRecord, RankedRetrieval, Split, SynonymHierarchy, VlBiasRecord,
};
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;
type Criterion = fn() -> Check;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn gen_label(rng: &mut impl Rng) -> GenderLabel {
    *[GenderLabel::Male, GenderLabel::Female, GenderLabel::Neutral].choose(rng).unwrap()
}

// Retrieval: every metric recounted from the raw prefix.

fn prefix_counts(labels: &[GenderLabel], k: usize) -> (f64, f64) {
    let top = &labels[..k.min(labels.len())];
    let m = top.iter().filter(|l| **l == GenderLabel::Male).count() as f64;
    let f = top.iter().filter(|l| **l == GenderLabel::Female).count() as f64;
    (m, f)
}

fn oracle_bias(labels: &[GenderLabel], k: usize) -> f64 {
    let (m, f) = prefix_counts(labels, k);
    if m + f == 0.0 {
        0.0
    } else {
        (m - f) / (m + f)
    }
}

fn oracle_skew(labels: &[GenderLabel], k: usize, d: (f64, f64)) -> Option<f64> {
    let (m, f) = prefix_counts(labels, k);
    if m + f == 0.0 {
        return None;
    }
    [(m, d.0), (f, d.1)]
        .into_iter()
        .filter(|(count, want)| *count > 0.0 && *want > 0.0)
        .map(|(count, want)| (count / (m + f) / want).ln())
        .reduce(f64::max)
}

fn oracle_ndkl(labels: &[GenderLabel], d: (f64, f64), eps: f64) -> f64 {
    let q = [(d.0 + eps) / (1.0 + 2.0 * eps), (d.1 + eps) / (1.0 + 2.0 * eps)];
    let (mut num, mut z) = (0.0, 0.0);
    for k in 1..=labels.len() {
        let (m, f) = prefix_counts(labels, k);
        let total = m + f + 2.0 * eps;
        let p = [(m + eps) / total, (f + eps) / total];
        let kl: f64 = p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).log2()).sum();
        let w = 1.0 / (k as f64 + 1.0).log2();
        num += w * kl;
        z += w;
    }
    num / z * std::f64::consts::LN_2
}

fn oracle_recall(rankings: &[RankedRetrieval], k: usize) -> f64 {
    let hits = rankings
        .iter()
        .filter(|r| r.ranking.iter().take(k).any(|id| r.relevant.contains(id)))
        .count();
    hits as f64 / rankings.len() as f64
}

fn criterion_1() -> Check {
    let mut rng = rng::stream(1, "acceptance.retrieval");
    let eps = 1e-6;
    let mut rankings = Vec::new();
    let mut checks = 0usize;
    for q in 0..200 {
        let len = rng.gen_range(1..=50);
        let labels: Vec<GenderLabel> = (0..len).map(|_| gen_label(&mut rng)).collect();
        let ids: Vec<String> = (0..len).map(|i| format!("q{q}i{i}")).collect();
        let catalog: GenderCatalog = ids.iter().cloned().zip(labels.iter().copied()).collect();
        let relevant: BTreeSet<String> = (0..rng.gen_range(1..=3))
            .map(|_| format!("q{q}i{}", rng.gen_range(0..len + 10)))
            .collect();
        let r = RankedRetrieval {
            query_id: format!("q{q}"),
            ranking: ids,
            relevant,
        };
        let dm: f64 = if rng.gen_bool(0.2) { 0.5 } else { rng.gen_range(0.0..=1.0) };
        let desired = DesiredDistribution { male: dm, female: 1.0 - dm };
        for k in 1..=len + 3 {
            let got = bias_at_k(&r, &catalog, k).map_err(|e| e.to_string())?;
            let want = oracle_bias(&labels, k);
            ensure!((got - want).abs() < 1e-9, "Bias@{k} query {q}: {got} vs {want}");
            match (max_skew_at_k(&r, &catalog, &desired, k, NeutralHandling::Exclude), oracle_skew(&labels, k, (dm, 1.0 - dm))) {
                (Ok(got), Some(want)) => ensure!((got - want).abs() < 1e-9, "MaxSkew@{k} query {q}: {got} vs {want}"),
                (Err(e), None) if e.is_undefined_metric() => {}
                (got, want) => return Err(format!("MaxSkew@{k} query {q}: {got:?} vs {want:?}")),
            }
            let got = recall_at_k(std::slice::from_ref(&r), k).map_err(|e| e.to_string())?;
            let want = oracle_recall(std::slice::from_ref(&r), k);
            ensure!((got - want).abs() < 1e-9, "Recall@{k} query {q}: {got} vs {want}");
            checks += 3;
        }
        let got = ndkl(&r, &catalog, &desired, eps, NeutralHandling::Exclude).map_err(|e| e.to_string())?;
        let want = oracle_ndkl(&labels, (dm, 1.0 - dm), eps);
        ensure!((got - want).abs() < 1e-6, "NDKL query {q}: {got} vs {want}");
        checks += 1;
        rankings.push(r);
    }
    for k in [1, 5, 10, 50] {
        let got = recall_at_k(&rankings, k).map_err(|e| e.to_string())?;
        ensure!((got - oracle_recall(&rankings, k)).abs() < 1e-9, "pooled Recall@{k}");
    }
    Ok(format!("200 rankings, {checks} metric values match the prefix oracle"))
}

// CHAIR: three-level vocabulary and a nested-loop reference.

const SYNONYMS: &[(&str, &str)] = &[
    ("person", "person"), ("people", "person"), ("woman", "woman"), ("lady", "woman"), ("man", "man"),
    ("guy", "man"), ("girl", "girl"), ("little girl", "girl"), ("boy", "boy"), ("vehicle", "vehicle"),
    ("car", "car"), ("taxi", "taxi"), ("yellow cab", "taxi"), ("truck", "truck"),
    ("pick up truck", "truck"), ("bag", "bag"), ("purse", "purse"), ("dog", "dog"), ("hot dog", "hot dog"),
];
const PARENTS: &[(&str, &str)] = &[
    ("woman", "person"), ("man", "person"), ("girl", "woman"), ("boy", "man"), ("car", "vehicle"),
    ("taxi", "car"), ("truck", "vehicle"), ("purse", "bag"),
];
const CHAIR_WORDS: &[&str] = &[
    "a", "the", "next", "to", "with", "in", "person", "people", "woman", "lady", "man", "guy", "girl",
    "little", "boy", "vehicle", "car", "taxi", "yellow", "cab", "truck", "pick", "up", "bag", "purse", "dog",
    "hot",
];
const CHAIR_OBJECTS: &[&str] = &[
    "person", "woman", "man", "girl", "boy", "vehicle", "car", "taxi", "truck", "bag", "purse", "dog", "hot dog",
];

fn three_level() -> SynonymHierarchy {
    SynonymHierarchy::new(
        SYNONYMS.iter().map(|(a, b)| (a.to_string(), b.to_string())),
        PARENTS.iter().map(|(a, b)| (a.to_string(), b.to_string())),
    )
    .unwrap()
}

fn reference_mentions(caption: &str, surface: &HashMap<&str, &str>) -> BTreeSet<String> {
    let lower = caption.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < words.len() {
        let mut step = 1;
        for n in [3, 2, 1] {
            if i + n <= words.len() {
                if let Some(c) = surface.get(words[i..i + n].join(" ").as_str()) {
                    out.insert(c.to_string());
                    step = n;
                    break;
                }
            }
        }
        i += step;
    }
    out
}

fn reference_hallucinated(o: &str, gt: &BTreeSet<String>, parent: &HashMap<&str, &str>) -> bool {
    for g in gt {
        let mut cur = g.as_str();
        if cur == o {
            return false;
        }
        while let Some(p) = parent.get(cur) {
            if *p == o {
                return false;
            }
            cur = p;
        }
    }
    true
}

fn criterion_2() -> Check {
    let h = three_level();
    let surface: HashMap<&str, &str> = SYNONYMS.iter().copied().collect();
    let parent: HashMap<&str, &str> = PARENTS.iter().copied().collect();
    let mut rng = rng::stream(2, "acceptance.chair");
    for fixture in 0..20 {
        let mut preds = Vec::new();
        let mut gts = BTreeMap::new();
        for i in 0..50 {
            let id = format!("img{i:02}");
            let words: Vec<&str> = (0..rng.gen_range(0..14)).map(|_| *CHAIR_WORDS.choose(&mut rng).unwrap()).collect();
            let gt: BTreeSet<String> =
                (0..rng.gen_range(0..4)).map(|_| CHAIR_OBJECTS.choose(&mut rng).unwrap().to_string()).collect();
            preds.push(PredictionRecord { image_id: id.clone(), caption: words.join(" ") });
            gts.insert(id, gt);
        }
        let res = chair(&preds, &gts, &h, SubCategoryRule::Strict).map_err(|e| e.to_string())?;
        let (mut mentioned, mut hallucinated, mut bad) = (0usize, 0usize, 0usize);
        for p in &preds {
            let mut any = false;
            for o in reference_mentions(&p.caption, &surface) {
                mentioned += 1;
                if reference_hallucinated(&o, &gts[&p.image_id], &parent) {
                    hallucinated += 1;
                    any = true;
                }
            }
            bad += usize::from(any);
        }
        ensure!(res.n_objects == mentioned, "fixture {fixture}: {} objects vs {mentioned}", res.n_objects);
        ensure!(res.n_hallucinated_objects == hallucinated, "fixture {fixture}: hallucinated count");
        ensure!(res.chair_s == bad as f64 / 50.0, "fixture {fixture}: chair_s {} vs {}", res.chair_s, bad as f64 / 50.0);
        let want_i = (mentioned > 0).then(|| hallucinated as f64 / mentioned as f64);
        ensure!(res.chair_i == want_i, "fixture {fixture}: chair_i {:?} vs {want_i:?}", res.chair_i);
    }
    for h in [three_level(), SynonymHierarchy::default()] {
        let person_over_woman = is_hallucinated("person", &set(&["woman"]), &h, SubCategoryRule::Strict);
        let woman_over_man = is_hallucinated("woman", &set(&["man"]), &h, SubCategoryRule::Strict);
        ensure!(person_over_woman.ok() == Some(false), "person over {{woman}} flagged");
        ensure!(woman_over_man.ok() == Some(true), "woman over {{man}} not flagged");
    }
    Ok("20 fixtures x 50 images exact; person/{woman} safe, woman/{man} hallucinated".into())
}

// BiasAmp.

fn captions_table(captions: &[String], words: &[&str]) -> CooccurrenceTable {
    let images: Vec<CaptionRecord> = captions
        .iter()
        .enumerate()
        .map(|(i, c)| CaptionRecord { image_id: format!("i{i}"), captions: vec![c.clone()], split: Split::Train })
        .collect();
    build_table(&images, &GenderLexicon::default(), set(words), None).unwrap()
}

fn criterion_3() -> Check {
    let tokens = ["man", "woman", "he", "she", "dog", "kite", "pizza", "a", "with", "person", "her"];
    let words = ["dog", "kite", "pizza"];
    let mut rng = rng::stream(3, "acceptance.biasamp");
    let mut defined = 0;
    for t in 0..100 {
        let captions: Vec<String> = (0..rng.gen_range(5..60))
            .map(|_| (0..rng.gen_range(1..8)).map(|_| *tokens.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" "))
            .collect();
        let table = captions_table(&captions, &words);
        match bias_amp(&table, &table) {
            Ok(r) => {
                ensure!(r.value == 0.0, "table {t}: bias_amp(T, T) = {}", r.value);
                defined += 1;
            }
            Err(e) => ensure!(e.is_undefined_metric(), "table {t}: {e}"),
        }
    }
    let mut train = vec!["a man plays soccer".to_string(); 8];
    train.extend(vec!["a woman plays soccer".to_string(); 2]);
    let mut pred = vec!["he is at soccer".to_string(); 9];
    pred.push("she is at soccer".to_string());
    let r = bias_amp(&captions_table(&train, &["soccer"]), &captions_table(&pred, &["soccer"])).map_err(|e| e.to_string())?;
    ensure!((r.value - 0.1).abs() <= 1e-12, "hand case gives {}", r.value);

    let half = ["a man with a kite".to_string(), "a woman with a kite".to_string()];
    let skewed = vec!["a man with a kite".to_string(); 3];
    let r = bias_amp(&captions_table(&half, &["kite"]), &captions_table(&skewed, &["kite"])).map_err(|e| e.to_string())?;
    ensure!(r.value == 0.0, "b = 0.5 counted as leaning: {}", r.value);
    Ok(format!("self-amplification 0 on 100 tables ({defined} defined), hand case +0.1, b = 0.5 not counted"))
}

// LIC.

fn masked(text: &str, g: GenderLabel) -> MaskedCaption {
    MaskedCaption { tokens: text.split_whitespace().map(str::to_string).collect(), source_gender: g }
}

fn uninformative(n: usize) -> Vec<MaskedCaption> {
    (0..n)
        .flat_map(|_| [GenderLabel::Male, GenderLabel::Female].map(|g| masked("a [GENDER] standing in a room", g)))
        .collect()
}

fn separable(n: usize) -> Vec<MaskedCaption> {
    (0..n)
        .flat_map(|i| {
            [
                masked(&format!("[GENDER] skateboard ramp helmet trick{}", i % 3), GenderLabel::Male),
                masked(&format!("[GENDER] kitchen oven apron recipe{}", i % 3), GenderLabel::Female),
            ]
        })
        .collect()
}

fn random_masked(rng: &mut impl Rng) -> Vec<MaskedCaption> {
    let words = ["a", "dog", "kitchen", "ball", "park", "oven", "[GENDER]", "table", "street"];
    let mut out: Vec<MaskedCaption> = (0..rng.gen_range(10..60))
        .map(|_| {
            let text: Vec<&str> = (0..rng.gen_range(1..7)).map(|_| *words.choose(rng).unwrap()).collect();
            let g = if rng.gen_bool(0.5) { GenderLabel::Male } else { GenderLabel::Female };
            masked(&text.join(" "), g)
        })
        .collect();
    for g in [GenderLabel::Male, GenderLabel::Female, GenderLabel::Male, GenderLabel::Female] {
        out.push(masked("a dog", g));
    }
    out
}

fn criterion_4() -> Check {
    let config = LicConfig { seed: 7, ..Default::default() };
    let err = |e: fairlens_core::FairlensError| e.to_string();
    let same = lic_score(&separable(40), &separable(40), &config).map_err(err)?;
    ensure!(same.lic.abs() <= 0.02, "identical corpora LIC {}", same.lic);
    let noisy = random_masked(&mut rng::stream(4, "acceptance.lic.identical"));
    let same_noisy = lic_score(&noisy, &noisy, &config).map_err(err)?;
    ensure!(same_noisy.lic.abs() <= 0.02, "identical noisy corpora LIC {}", same_noisy.lic);
    let gap = lic_score(&uninformative(40), &separable(40), &config).map_err(err)?;
    ensure!((gap.lic - 0.75).abs() <= 0.05, "separable vs uninformative LIC {}", gap.lic);

    let mut rng = rng::stream(4, "acceptance.lic");
    for seed in 0..32u64 {
        let (d, m) = (random_masked(&mut rng), random_masked(&mut rng));
        let config = LicConfig { seed, ..Default::default() };
        let forward = lic_score(&d, &m, &config).map_err(err)?;
        let backward = lic_score(&m, &d, &config).map_err(err)?;
        ensure!((forward.lic + backward.lic).abs() <= 1e-12, "seed {seed}: {} vs {}", forward.lic, backward.lic);
    }
    Ok(format!("identical |LIC| = {:.4}, separable vs uninformative LIC = {:.4}, antisymmetric over 32 seeds", same_noisy.lic.abs().max(same.lic.abs()), gap.lic))
}

// Lexicon.

const FEMALE: &[&str] = &[
    "woman", "female", "lady", "mother", "girl", "aunt", "wife", "actress", "princess", "waitress", "sister",
    "queen", "chairwoman", "policewoman", "girlfriend", "pregnant", "daughter", "she", "her", "hers", "herself",
];
const MALE: &[&str] = &[
    "man", "male", "father", "gentleman", "boy", "uncle", "husband", "actor", "prince", "waiter", "son",
    "brother", "guy", "emperor", "dude", "cowboy", "boyfriend", "chairman", "policeman", "he", "his", "him",
    "himself",
];

fn criterion_5() -> Check {
    let lex = GenderLexicon::default();
    ensure!(lex.female_words().len() + lex.male_words().len() == 44, "bundled list has the wrong size");
    for (words, g) in [(FEMALE, Gender::Female), (MALE, Gender::Male)] {
        for w in words {
            ensure!(lex.gender_of(w) == Some(g), "{w} not {g}");
            let m = mask_gender(&format!("A photo of {} outside", w.to_uppercase()), &lex);
            ensure!(m.source_gender == GenderLabel::from(g), "{w} labels {:?}", m.source_gender);
            ensure!(m.tokens[3] == GENDER_SENTINEL, "{w} not masked");
        }
    }
    for w in ["women", "men", "person", "mom", "herd", "hero", "womanly"] {
        ensure!(lex.gender_of(w).is_none(), "{w} wrongly gendered");
    }
    let mut vocab: Vec<&str> = FEMALE.iter().chain(MALE).copied().collect();
    vocab.extend(["a", "dog", "Park", "on", "sitting", "MAN", "She's", "bench", "[GENDER]", "x-ray", "123"]);
    let seps = [" ", ", ", " - ", "! ", "'"];
    let mut rng = rng::stream(5, "acceptance.lexicon");
    for i in 0..1000 {
        let caption: String = (0..rng.gen_range(0..20))
            .map(|_| format!("{}{}", vocab.choose(&mut rng).unwrap(), seps.choose(&mut rng).unwrap()))
            .collect();
        let once = mask_gender(&caption, &lex);
        let twice = mask_gender(&once.rendered(), &lex);
        ensure!(once.tokens == twice.tokens, "caption {i} `{caption}`: masking not idempotent");
        ensure!(twice.source_gender == GenderLabel::Neutral, "caption {i}: remasked label not neutral");
        ensure!(caption_gender(&once.rendered(), &lex) == GenderLabel::Neutral, "caption {i}: masked caption gendered");
        ensure!(once.tokens.len() == tokenize(&caption).len(), "caption {i}: token count changed");
    }
    Ok("44 words exact, idempotent and neutral on 1000 fuzzed captions".into())
}

// VL-Bias.

fn shift(rng: &mut impl Rng) -> ProbabilityShift {
    ProbabilityShift { factual: rng.gen_range(0.0..=1.0), counterfactual: rng.gen_range(0.0..=1.0) }
}

fn vl_records(rng: &mut impl Rng, n: usize) -> Vec<VlBiasRecord> {
    (0..n)
        .map(|i| {
            let (p_t, male, female) = (shift(rng), shift(rng), shift(rng));
            let mut r = VlBiasRecord {
                pair_id: format!("p{i}"),
                target: format!("t{}", rng.gen_range(0..8)),
                p_t,
                p_a: GenderShifts { male, female },
                group: None,
            };
            if rng.gen_bool(0.05) {
                r.p_a.female.counterfactual = r.p_a.female.factual + 1e-4;
            }
            r
        })
        .collect()
}

fn criterion_6() -> Check {
    let mut rng = rng::stream(6, "acceptance.vlbias");
    let records = vl_records(&mut rng, 1000);
    let base = dataset_bias(&records, DEFAULT_DELTA).map_err(|e| e.to_string())?;

    let swapped: Vec<VlBiasRecord> = records
        .iter()
        .map(|r| {
            let mut s = r.clone();
            std::mem::swap(&mut s.p_a.male, &mut s.p_a.female);
            s
        })
        .collect();
    let neg = dataset_bias(&swapped, DEFAULT_DELTA).map_err(|e| e.to_string())?;
    ensure!((base.dataset_bias + neg.dataset_bias).abs() <= 1e-12, "swap: {} vs {}", base.dataset_bias, neg.dataset_bias);
    for (t, v) in &base.per_target {
        ensure!((v + neg.per_target[t]).abs() <= 1e-12, "swap on {t}");
    }

    // Scaling the target shift by c scales every score by c; the tolerance is
    // 1e-12 relative to the magnitude of the summed pair ratios.
    let mut worst: f64 = 0.0;
    for c in [0.3, 0.5, 0.77, 2.0] {
        let scaled: Vec<VlBiasRecord> = records
            .iter()
            .map(|r| {
                let mut s = r.clone();
                s.p_t.factual *= c;
                s.p_t.counterfactual *= c;
                s
            })
            .collect();
        let res = dataset_bias(&scaled, DEFAULT_DELTA).map_err(|e| e.to_string())?;
        for (t, v) in &base.per_target {
            let magnitude: f64 = records
                .iter()
                .filter(|r| &r.target == t)
                .filter_map(|r| {
                    let m = pair_bias(r, Gender::Male, DEFAULT_DELTA).value()?;
                    let f = pair_bias(r, Gender::Female, DEFAULT_DELTA).value()?;
                    Some(m.abs() + f.abs())
                })
                .sum::<f64>()
                / (base.pair_counts[t] - base.skipped_pairs[t]) as f64;
            let err = (res.per_target[t] - c * v).abs() / (c * magnitude);
            worst = worst.max(err);
            ensure!(err <= 1e-12, "scaling by {c} on {t}: relative error {err:e}");
        }
    }

    let mut skipped = 0usize;
    for (t, n) in &base.pair_counts {
        let usable = records
            .iter()
            .filter(|r| &r.target == t)
            .filter(|r| {
                pair_bias(r, Gender::Male, DEFAULT_DELTA) != PairBias::Skip
                    && pair_bias(r, Gender::Female, DEFAULT_DELTA) != PairBias::Skip
            })
            .count();
        ensure!(base.skipped_pairs[t] == n - usable, "guard count on {t}");
        skipped += base.skipped_pairs[t];
    }
    ensure!(base.pair_counts.values().sum::<usize>() == records.len(), "pair counts do not sum to the input");
    ensure!(skipped > 0, "fixture never exercised the guard");
    Ok(format!("1000 records: swap negates exactly, scaling linear (worst {worst:.1e}), {skipped} guarded pairs accounted"))
}

// Hit ratios.

fn criterion_7() -> Check {
    let per_image: BTreeMap<String, BTreeSet<String>> = [
        ("a", set(&["handbag", "dog"])),
        ("b", set(&["handbag"])),
        ("c", set(&[])),
        ("d", set(&["car", "dog", "cup"])),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let catalog: GenderCatalog = [("a", GenderLabel::Female), ("b", GenderLabel::Female), ("c", GenderLabel::Female), ("d", GenderLabel::Male)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let c = set(&["handbag", "cup"]);
    let cases = [
        (Gender::Female, EmptyHallucinations::Exclude, (0.5 + 1.0) / 2.0),
        (Gender::Female, EmptyHallucinations::CountAsZero, (0.5 + 1.0 + 0.0) / 3.0),
        (Gender::Male, EmptyHallucinations::Exclude, 1.0 / 3.0),
    ];
    for (g, empty, want) in cases {
        let hr = hit_ratio_gender(&per_image, &catalog, g, &c, empty).map_err(|e| e.to_string())?;
        ensure!(hr.value == want, "{g} {empty:?}: {} vs {want}", hr.value);
    }
    let hr = hit_ratio_object(&per_image, &set(&["dog"]), &set(&["a", "b", "d"]), EmptyHallucinations::Exclude)
        .map_err(|e| e.to_string())?;
    ensure!(hr.value == (0.5 + 0.0 + 1.0 / 3.0) / 3.0, "object anchor: {}", hr.value);

    let lex = GenderLexicon::default();
    let mut rng = rng::stream(7, "acceptance.hitratio");
    let name = |i: u8| format!("o{i}");
    let mut curves = 0;
    for _ in 0..100 {
        let mut table = CooccurrenceTable::new(set(&["x"]), &lex).unwrap();
        let mut first = None;
        for _ in 0..rng.gen_range(5..30) {
            let objects: BTreeSet<String> = (0..rng.gen_range(1..5)).map(|_| name(rng.gen_range(0..10))).collect();
            first.get_or_insert_with(|| objects.iter().next().unwrap().clone());
            let g = [None, Some(Gender::Male), Some(Gender::Female)].choose(&mut rng).copied().flatten();
            table.add_image_objects(g, &objects);
        }
        let hallucinations: BTreeMap<String, BTreeSet<String>> = (0..rng.gen_range(5..30))
            .map(|i| (format!("img{i}"), (0..rng.gen_range(0..4)).map(|_| name(rng.gen_range(0..10))).collect()))
            .collect();
        let labels: GenderCatalog = hallucinations.keys().map(|id| (id.clone(), gen_label(&mut rng))).collect();
        let everyone: BTreeSet<String> = hallucinations.keys().cloned().collect();
        let mut anchors = vec![Anchor::Object(first.unwrap())];
        anchors.extend(Gender::BOTH.map(Anchor::Gender));
        for anchor in anchors {
            let mut last = f64::NEG_INFINITY;
            for k in 1..12 {
                let Ok(top) = top_cooccurring(&table, &anchor, k) else { break };
                let c_set: BTreeSet<String> = top.into_iter().collect();
                let hr = match &anchor {
                    Anchor::Object(_) => hit_ratio_object(&hallucinations, &c_set, &everyone, EmptyHallucinations::Exclude),
                    Anchor::Gender(g) => hit_ratio_gender(&hallucinations, &labels, *g, &c_set, EmptyHallucinations::Exclude),
                };
                let Ok(hr) = hr else { break };
                ensure!((0.0..=1.0).contains(&hr.value), "HR {} outside [0, 1]", hr.value);
                ensure!(hr.value >= last, "HR fell from {last} to {} at K = {k}", hr.value);
                last = hr.value;
            }
            curves += 1;
        }
    }
    Ok(format!("4-image fixture exact; {curves} fuzzed HR curves bounded and monotone in K"))
}

// Determinism over the CLI.

fn criterion_8() -> Check {
    let runs = common::every_subcommand();
    for args in &runs {
        for format in ["json", "table"] {
            let mut argv = vec!["--seed".to_string(), "7".to_string(), "--format".to_string(), format.to_string()];
            argv.extend(args.iter().cloned());
            let first = common::run(&argv);
            let second = common::run(&argv);
            ensure!(first.code == 0, "{} exited {}: {}", args[0], first.code, first.stderr);
            ensure!(!first.stdout.is_empty(), "{} printed nothing", args[0]);
            ensure!(first.stdout == second.stdout, "{} {format} output differs between runs", args[0]);
        }
    }
    Ok(format!("{} subcommands byte-identical across two runs in json and table form", runs.len()))
}

// Scale.

fn status_kib(field: &str) -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with(field))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Peak resident memory added while `f` runs, in KiB, where the kernel lets
/// the high-water mark be reset.
fn peak_growth_kib<T>(f: impl FnOnce() -> T) -> (T, Option<u64>) {
    let reset = std::fs::write("/proc/self/clear_refs", "5").is_ok();
    let before = status_kib("VmRSS:");
    let out = f();
    let peak = status_kib("VmHWM:");
    let growth = match (reset, before, peak) {
        (true, Some(b), Some(p)) => Some(p.saturating_sub(b)),
        _ => None,
    };
    (out, growth)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let file = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    write_records(file, rows).unwrap();
}

/// Synthetic training captions written a slice at a time so that building
/// the file never holds the whole corpus.
fn write_captions_in_parts(path: &Path, images: usize, seed: u64) {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    for part in 0..images / 2_000 {
        let mut rows = synth::caption_corpus(2_000, 5, seed + part as u64);
        for row in &mut rows {
            row.image_id = format!("p{part}-{}", row.image_id);
        }
        write_records(&mut file, &rows).unwrap();
    }
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let refs_path = dir.path().join("refs.jsonl");
    let pred_path = dir.path().join("pred.jsonl");
    let train_path = dir.path().join("train.jsonl");
    let big_train_path = dir.path().join("train_big.jsonl");
    {
        let refs = synth::caption_corpus(20_000, 5, 91);
        write_jsonl(&refs_path, &refs);
        write_jsonl(&pred_path, &synth::predictions_for(&refs, 92));
    }
    write_captions_in_parts(&train_path, 20_000, 93);
    write_captions_in_parts(&big_train_path, 100_000, 94);
    let p = |path: &Path| path.display().to_string();
    let size_kib = |path: &Path| std::fs::metadata(path).map(|m| m.len() / 1024).unwrap_or(0);

    // Training corpora are streamed: going from 100k to 500k captions may
    // only add the image-id index, not the caption text.
    let biasamp = |train: &Path| {
        common::run(&[
            "biasamp".to_string(), "--train".into(), p(train), "--pred".into(), p(&pred_path),
            "--top-n".into(), "200".into(),
        ])
    };
    let (small, small_growth) = peak_growth_kib(|| biasamp(&train_path));
    ensure!(small.code == 0, "biasamp exited {}: {}", small.code, small.stderr);
    let (big, big_growth) = peak_growth_kib(|| biasamp(&big_train_path));
    ensure!(big.code == 0, "biasamp exited {}: {}", big.code, big.stderr);
    let extra_kib = size_kib(&big_train_path) - size_kib(&train_path);
    // Holding the big corpus in memory is the control the streamed runs are
    // compared against.
    let (loaded, control) = peak_growth_kib(|| fairlens_core::corpus::read_captions(&big_train_path));
    drop(loaded);
    let memory = match (small_growth, big_growth, control) {
        (Some(s), Some(g), Some(c)) => {
            ensure!(c >= extra_kib, "control load grew only {c} KiB; measurement is not sensitive");
            ensure!(
                g.saturating_sub(s) < extra_kib / 2 && g < c / 2,
                "streamed peak grew {s} KiB at 100k and {g} KiB at 500k captions; loading costs {c} KiB"
            );
            format!("streamed training peak +{s} KiB at 100k captions, +{g} KiB at 500k, loading it whole +{c} KiB")
        }
        _ => "peak memory not measurable on this platform".to_string(),
    };

    let start = Instant::now();
    let out = common::run(&[
        "--seed".to_string(), "7".into(), "report".into(), "--pred".into(), p(&pred_path), "--refs".into(),
        p(&refs_path), "--train".into(), p(&train_path), "--top-n".into(), "200".into(),
    ]);
    let elapsed = start.elapsed();
    ensure!(out.code == 0, "report exited {}: {}", out.code, out.stderr);
    let report = out.json();
    for key in [("error", "rate"), ("lic", "lic"), ("chair", "chair_s"), ("biasamp", "value")] {
        ensure!(report["metrics"][key.0][key.1].is_number(), "{}.{} missing", key.0, key.1);
    }
    ensure!(elapsed < Duration::from_secs(30), "100k reference + 100k training captions took {elapsed:?}");
    Ok(format!("report over 100k reference captions in {:.1}s; {memory}", elapsed.as_secs_f64()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Criterion); 9] = [
        ("retrieval metrics match the prefix oracle", criterion_1),
        ("CHAIR matches the nested-loop reference", criterion_2),
        ("BiasAmp identities", criterion_3),
        ("LIC calibration", criterion_4),
        ("lexicon conformance", criterion_5),
        ("VL-Bias symmetries", criterion_6),
        ("hit ratios", criterion_7),
        ("determinism", criterion_8),
        ("scale", criterion_9),
    ];
    // Written to the stdout handle rather than through `println!` so the
    // lines appear even when the harness captures output.
    let mut stdout = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                writeln!(stdout, "[PASS] criterion {}: {name}: {detail} ({secs:.1}s)", i + 1).unwrap();
            }
            Err(detail) => {
                writeln!(stdout, "[FAIL] criterion {}: {name}: {detail} ({secs:.1}s)", i + 1).unwrap();
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
