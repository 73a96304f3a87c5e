use std::collections::{BTreeSet, HashSet};

use approx::assert_abs_diff_eq;
use morphome::corpus::{AlternationSpec, CellTag, ConjClass, SuffixTable, VerbClass};
use morphome::eval::*;
use morphome::Result;
use proptest::prelude::*;

fn tag(s: &str) -> CellTag {
    s.parse().unwrap()
}

fn label(s: &str) -> CellTag {
    CellTag::ALL.into_iter().find(|c| c.label() == s).unwrap()
}

fn rec(class: VerbClass, tgt: &str, gold: &str, pred: &str) -> PredictionRecord {
    PredictionRecord {
        lemma: "poner".into(),
        verb_class: class,
        conj_class: ConjClass::Er,
        src_tags: [tag("V;IND;PRS;3;SG"), tag("V;IND;PRS;1;PL")],
        tgt_tag: tag(tgt),
        gold: gold.into(),
        prediction: pred.into(),
        log_prob: -0.5,
    }
}

const SBJV_2SG: &str = "V;SBJV;PRS;2;SG";

#[test]
fn sequence_accuracy_examples() {
    let ok = rec(VerbClass::L, SBJV_2SG, "pongas", "pongas");
    let all = sequence_accuracy(&[ok.clone(), ok.clone()], GroupBy::Overall).unwrap();
    assert_eq!(all[0].accuracy, Some(1.0));
    let last_char = rec(VerbClass::L, SBJV_2SG, "pongas", "pongan");
    assert_eq!(sequence_accuracy(&[last_char.clone()], GroupBy::Overall).unwrap()[0].accuracy, Some(0.0));
    let mixed = [ok.clone(), ok.clone(), ok.clone(), last_char];
    assert_eq!(sequence_accuracy(&mixed, GroupBy::Overall).unwrap()[0].accuracy, Some(0.75));
}

#[test]
fn empty_group_is_absent_not_zero() {
    let r = rec(VerbClass::NL, SBJV_2SG, "comas", "comas");
    let t = sequence_accuracy(&[r], GroupBy::VerbClass).unwrap();
    assert_eq!(t[0].group, "L");
    assert_eq!((t[0].total, t[0].accuracy), (0, None));
    assert_eq!((t[1].total, t[1].accuracy), (1, Some(1.0)));
    assert!(sequence_accuracy(&[], GroupBy::Overall).is_err());
}

#[test]
fn stem_accuracy_examples() {
    let table = SuffixTable::default();
    // Stems worked out by hand: pongas = pong+as, pongan = pong+an, ponas = pon+as.
    let cases = [("pongan", true), ("ponas", false), ("pongas", true)];
    for (pred, want) in cases {
        let r = rec(VerbClass::L, SBJV_2SG, "pongas", pred);
        assert_eq!(stem_correct(&r, &table, StemMode::Strict).0, want, "{}", pred);
    }
    let recs: Vec<_> = cases.iter().map(|(p, _)| rec(VerbClass::L, SBJV_2SG, "pongas", p)).collect();
    let rep = stem_accuracy(&recs, &table, GroupBy::VerbClass, StemMode::Strict).unwrap();
    assert_abs_diff_eq!(rep.groups[0].accuracy.unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    assert_eq!(rep.groups[1].accuracy, None);
    assert_eq!(rep.unmatched, 0);
}

#[test]
fn unmatched_gold_suffix_is_flagged() {
    let r = rec(VerbClass::NL, SBJV_2SG, "xyz", "xyz");
    let rep = stem_accuracy(&[r], &SuffixTable::default(), GroupBy::Overall, StemMode::Strict).unwrap();
    assert_eq!(rep.unmatched, 1);
    assert_eq!(rep.groups[0].accuracy, Some(1.0));
}

#[test]
fn relaxed_mode_ignores_accents_and_vowel_quality() {
    let table = SuffixTable::default();
    let r = rec(VerbClass::L, "V;IND;PRS;3;SG", "ˈpone", "pɔne");
    assert!(!stem_correct(&r, &table, StemMode::Strict).0);
    assert!(stem_correct(&r, &table, StemMode::Relaxed).0);
}

#[test]
fn records_round_trip() {
    let recs = vec![rec(VerbClass::L, SBJV_2SG, "pongas", "pongan"), rec(VerbClass::NL, "V;IND;PRS;1;SG", "como", "coma")];
    assert_eq!(parse_records(&records_to_tsv(&recs), "r.tsv").unwrap(), recs);
    assert!(parse_records("a\tb\n", "r.tsv").is_err());
}

const FORMS: [&str; 6] = ["pongas", "pongan", "ponas", "pongo", "ponemos", "ˈpongas"];

fn arb_record() -> impl Strategy<Value = PredictionRecord> {
    (0usize..12, 0usize..FORMS.len(), 0usize..FORMS.len(), any::<bool>()).prop_map(|(c, g, p, l)| PredictionRecord {
        tgt_tag: CellTag::ALL[c],
        verb_class: if l { VerbClass::L } else { VerbClass::NL },
        ..rec(VerbClass::L, SBJV_2SG, FORMS[g], FORMS[p])
    })
}

proptest! {
    #[test]
    fn sequence_correct_implies_stem_correct(r in arb_record()) {
        let r = PredictionRecord { prediction: r.gold.clone(), ..r };
        let (stem_ok, matched) = stem_correct(&r, &SuffixTable::default(), StemMode::Strict);
        prop_assert!(!matched || stem_ok);
    }

    #[test]
    fn shape_ignores_order_and_duplication(mut recs in prop::collection::vec(arb_record(), 1..40), seed in any::<u64>()) {
        let table = SuffixTable::default();
        let a = paradigm_shape(&recs, &table, StemMode::Strict);
        let mut doubled = recs.clone();
        doubled.extend(recs.clone());
        let b = paradigm_shape(&doubled, &table, StemMode::Strict);
        prop_assert_eq!(a.raw, b.raw);
        use rand::{seq::SliceRandom, SeedableRng};
        recs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(paradigm_shape(&recs, &table, StemMode::Strict).raw, a.raw);
    }

    #[test]
    fn transform_is_an_involution_off_the_l_cells(i in 0usize..12, raw in 0.0f64..=1.0) {
        let c = CellTag::ALL[i];
        let t = transform(c, transform(c, raw));
        prop_assert!((t - raw).abs() < 1e-12);
        if c.is_l_cell() {
            prop_assert_eq!(transform(c, raw), raw);
        }
    }

    #[test]
    fn kmeans_ignores_input_order(scores in prop::array::uniform12(0.0f64..1.0), seed in any::<u64>()) {
        let input: Vec<(CellTag, f64)> = CellTag::ALL.into_iter().zip(scores).collect();
        let a = kmeans_cells(&input).unwrap();
        let mut shuffled = input.clone();
        use rand::{seq::SliceRandom, SeedableRng};
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = kmeans_cells(&shuffled).unwrap();
        for c in CellTag::ALL {
            prop_assert_eq!(a.of(c), b.of(c));
        }
        shuffled.sort_by(|x, y| x.1.total_cmp(&y.1));
        let c = kmeans_cells(&shuffled).unwrap();
        for cell in CellTag::ALL {
            prop_assert_eq!(a.of(cell), c.of(cell));
        }
    }

    #[test]
    fn kmeans_matches_exhaustive_partition(scores in prop::array::uniform12(0.0f64..1.0)) {
        let input: Vec<(CellTag, f64)> = CellTag::ALL.into_iter().zip(scores).collect();
        let got = kmeans_cells(&input).unwrap();
        let got_l: BTreeSet<usize> = (0..12).filter(|&i| got.of(CellTag::ALL[i]) == Some(Cluster::L)).collect();
        prop_assert_eq!(got_l, exhaustive_upper(&scores));
    }
}

/// Minimum within-cluster squared error over all 2^12 subsets; returns the
/// group with the higher mean.
fn exhaustive_upper(x: &[f64; 12]) -> BTreeSet<usize> {
    let sse = |idx: &[usize]| {
        let m = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (x[i] - m).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, Vec::new(), Vec::new());
    for mask in 1u32..(1 << 12) - 1 {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..12).partition(|i| mask >> i & 1 == 1);
        let cost = sse(&a) + sse(&b);
        if cost < best.0 {
            best = (cost, a, b);
        }
    }
    let mean = |v: &[usize]| v.iter().map(|&i| x[i]).sum::<f64>() / v.len() as f64;
    let upper = if mean(&best.1) > mean(&best.2) { best.1 } else { best.2 };
    upper.into_iter().collect()
}

#[test]
fn shape_examples() {
    let scores = CellScores { raw: [Some(1.0); 12], counts: [1; 12] };
    for c in CellTag::ALL {
        assert_eq!(scores.transformed(c), Some(if c.is_l_cell() { 1.0 } else { 0.0 }));
    }
    assert_abs_diff_eq!(transform(label("2SG.IND"), 0.8), 0.2, epsilon = 1e-12);
    assert_eq!(transform(label("1SG.SBJV"), 0.9), 0.9);
}

#[test]
fn empty_cells_are_excluded_from_clustering() {
    let table = SuffixTable::default();
    let r = rec(VerbClass::L, SBJV_2SG, "pongas", "pongas");
    let s = paradigm_shape(&[r], &table, StemMode::Strict);
    assert_eq!(s.missing().len(), 11);
    assert_eq!(s.clustering_input(), vec![(tag(SBJV_2SG), 1.0)]);
}

#[test]
fn cell_score_means_skip_missing_runs() {
    let mut a = CellScores { raw: [Some(0.2); 12], counts: [5; 12] };
    let b = CellScores { raw: [Some(0.6); 12], counts: [5; 12] };
    a.raw[0] = None;
    let m = CellScores::mean(&[a, b]);
    assert_abs_diff_eq!(m.raw[0].unwrap(), 0.6, epsilon = 1e-12);
    assert_abs_diff_eq!(m.raw[1].unwrap(), 0.4, epsilon = 1e-12);
}

fn separated() -> Vec<(CellTag, f64)> {
    CellTag::ALL.into_iter().map(|c| (c, if c.is_l_cell() { 0.9 } else { 0.1 })).collect()
}

/// High transformed scores on the L-cells except 1PL.SBJV and 2PL.SBJV,
/// which sit with the indicative cells.
fn partial_l_shape() -> Vec<(CellTag, f64)> {
    [
        ("1SG.IND", 0.82),
        ("2SG.IND", 0.12),
        ("3SG.IND", 0.15),
        ("1PL.IND", 0.22),
        ("2PL.IND", 0.18),
        ("3PL.IND", 0.14),
        ("1SG.SBJV", 0.78),
        ("2SG.SBJV", 0.74),
        ("3SG.SBJV", 0.77),
        ("1PL.SBJV", 0.31),
        ("2PL.SBJV", 0.27),
        ("3PL.SBJV", 0.69),
    ]
    .into_iter()
    .map(|(l, s)| (label(l), s))
    .collect()
}

#[test]
fn clustering_examples() {
    let a = kmeans_cells(&separated()).unwrap();
    assert!(!a.degenerate);
    assert!(compare_expected(&a).is_empty());
    assert_abs_diff_eq!(a.centroids.0, 0.9, epsilon = 1e-12);

    let p = kmeans_cells(&partial_l_shape()).unwrap();
    assert_eq!(compare_expected(&p), vec![label("1PL.SBJV"), label("2PL.SBJV")]);
}

#[test]
fn identical_scores_form_one_cluster() {
    let high: Vec<_> = CellTag::ALL.into_iter().map(|c| (c, 0.7)).collect();
    let a = kmeans_cells(&high).unwrap();
    assert!(a.degenerate);
    assert_eq!(compare_expected(&a).len(), 5);
    let low: Vec<_> = CellTag::ALL.into_iter().map(|c| (c, 0.2)).collect();
    assert_eq!(compare_expected(&kmeans_cells(&low).unwrap()).len(), 7);
    assert!(kmeans_cells(&[]).is_err());
    assert!(kmeans_cells(&[(label("1SG.IND"), f64::NAN)]).is_err());
}

#[test]
fn synthetic_wug_set_has_ninety_items() {
    let items = synthesize_wug_items(15, &AlternationSpec::default(), &HashSet::new(), 1).unwrap();
    assert_eq!(items.len(), 90);
    let lemmas: BTreeSet<_> = items.iter().map(|i| i.lemma.clone()).collect();
    assert_eq!(lemmas.len(), 15);
    assert_eq!(items.iter().filter(|i| i.swapped).count(), 45);
    for i in &items {
        assert!(WUG_TARGETS.contains(&i.tgt_tag));
        assert!(i.src1.form.starts_with(&i.expected_stem) || i.src2.form.starts_with(&i.expected_stem));
    }
    let table = SuffixTable::default();
    let back = parse_wug_items(&wug_items_to_tsv(&items), "w.tsv", &table).unwrap();
    assert_eq!(back, items);
}

#[test]
fn wug_file_schema_is_checked() {
    let table = SuffixTable::default();
    let head = "lemma\tconj_class\tsrc1_form\tsrc1_tag\tsrc2_form\tsrc2_tag\ttgt_tag\texpected_stem\n";
    let good = format!("{}buser\tER\tbuse\t3SG.IND\tbutamos\t1PL.SBJV\t1SG.IND\tbut\n", head);
    assert_eq!(parse_wug_items(&good, "w", &table).unwrap().len(), 2);
    for bad in [
        good.replace("1SG.IND\tbut", "2SG.IND\tbut"),
        good.replace("\tbut\n", "\tbuk\n"),
        good.replace("\tER\t", "\tQQ\t"),
        good.replace("\tbut\n", "\n"),
    ] {
        assert!(parse_wug_items(&bad, "w", &table).is_err(), "{}", bad);
    }
}

/// Copies the stem of whichever source is given first.
struct CopyFirst;

impl Predictor for CopyFirst {
    fn predict(&mut self, queries: &[Query]) -> Result<Vec<Prediction>> {
        let table = SuffixTable::default();
        Ok(queries
            .iter()
            .map(|q| {
                let stem = table.stem(&q.src1.form, q.src1.tag, ConjClass::Er);
                let suffix = &table.candidates(ConjClass::Er, q.tgt_tag)[0];
                Prediction { form: format!("{}{}", stem, suffix), log_prob: 0.0 }
            })
            .collect())
    }
}

#[test]
fn wug_scoring_by_matcher() {
    let table = SuffixTable::default();
    let items = synthesize_wug_items(5, &AlternationSpec::default(), &HashSet::new(), 3).unwrap();
    let (results, produced) = wug_evaluate(&mut CopyFirst, &items, &table, &WugMatcher::ALL).unwrap();
    assert_eq!(produced.len(), 30);
    for r in &results {
        // Only the swapped ordering puts the L stem first.
        assert_eq!(r.per_order, [Some(0.0), Some(1.0)]);
        assert_abs_diff_eq!(r.overall, 0.5, epsilon = 1e-12);
        assert!(r.per_cell.iter().all(|(_, v)| *v == Some(0.5)));
    }
}

#[test]
fn human_means_use_retained_responses() {
    let table = SuffixTable::default();
    let items = synthesize_wug_items(2, &AlternationSpec::default(), &HashSet::new(), 4).unwrap();
    let a = &items[0];
    let stem = &a.expected_stem;
    let other = a.src1.form.trim_end_matches('e');
    let tsv = format!(
        "participant\tverb\tcell\tresponse_form\tretained_flag\n\
         p1\t{v}\t1SG.IND\t{s}o\t1\n\
         p2\t{v}\t1SG.IND\t{o}o\t1\n\
         p3\t{v}\t1SG.IND\t{o}o\t0\n\
         p1\t{v}\t2SG.SBJV\t{s}as\t1\n",
        v = a.lemma,
        s = stem,
        o = other
    );
    let resp = parse_human_responses(&tsv, "h.tsv").unwrap();
    assert_eq!(resp.len(), 4);
    let means = human_cell_means(&resp, &items, &table, WugMatcher::Stem).unwrap();
    assert_eq!(means[0], (label("1SG.IND"), Some(0.5)));
    assert_eq!(means[1], (label("2SG.SBJV"), Some(1.0)));
    assert_eq!(means[2], (label("3SG.SBJV"), None));
    assert!(parse_human_responses("p\tv\t1SG.IND\tx\tmaybe\n", "h").is_err());
    let unknown = parse_human_responses("p\tnope\t1SG.IND\tx\t1\n", "h").unwrap();
    assert!(human_cell_means(&unknown, &items, &table, WugMatcher::Stem).is_err());
}

#[test]
fn report_rows_round_trip_through_csv() {
    let rows = vec![
        AccuracyRow { variant: "VANILLA".into(), condition: "0.1".into(), run: "s1_u2".into(), metric: "seq".into(), group: "L".into(), value: None },
        AccuracyRow { variant: "VANILLA".into(), condition: "0.1".into(), run: "s1_u2".into(), metric: "seq".into(), group: "NL".into(), value: Some(0.5) },
    ];
    let text = write_csv(&rows).unwrap();
    assert!(text.starts_with("variant,condition,run,metric,group,value\n"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    std::fs::write(&path, text).unwrap();
    assert_eq!(read_csv::<AccuracyRow>(&path).unwrap(), rows);
}
