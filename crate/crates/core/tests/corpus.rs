use std::collections::HashSet;

use morphome::corpus::*;
use morphome::Error;
use proptest::prelude::*;

const PONER: [&str; 12] = [
    "pongo", "pones", "pone", "ponemos", "ponéis", "ponen", "ponga", "pongas", "ponga", "pongamos", "pongáis", "pongan",
];

fn tag(s: &str) -> CellTag {
    s.parse().unwrap()
}

fn poner() -> Paradigm {
    Paradigm::new("poner", ConjClass::Er, PONER.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn poner_tsv(skip: Option<usize>) -> String {
    let mut s = String::from("lemma\tconj_class\tcell_tag\tform\n");
    for (i, (cell, form)) in CellTag::ALL.iter().zip(PONER).enumerate() {
        if Some(i) != skip {
            s.push_str(&format!("poner\tER\t{}\t{}\n", cell, form));
        }
    }
    s
}

/// ER paradigm where each cell takes stem `a` or `b` per the bit pattern.
fn two_stem_paradigm(mask: u16, a: &str, b: &str) -> Paradigm {
    let t = SuffixTable::default();
    let forms = CellTag::ALL
        .iter()
        .map(|&c| {
            let stem = if mask >> c.index() & 1 == 1 { b } else { a };
            format!("{}{}", stem, t.candidates(ConjClass::Er, c)[0])
        })
        .collect();
    Paradigm::new("x", ConjClass::Er, forms).unwrap()
}

#[test]
fn loads_the_poner_paradigm() {
    let loaded = parse_paradigms(&poner_tsv(None), "poner.tsv").unwrap();
    assert!(loaded.rejected.is_empty());
    assert_eq!(loaded.paradigms, vec![poner()]);
    assert_eq!(loaded.paradigms[0].form(tag("V;IND;PRS;2;SG")), "pones");
}

#[test]
fn empty_file_gives_no_paradigms() {
    let loaded = parse_paradigms("", "empty.tsv").unwrap();
    assert!(loaded.paradigms.is_empty() && loaded.rejected.is_empty());
}

#[test]
fn missing_cell_rejects_the_lemma() {
    let loaded = parse_paradigms(&poner_tsv(Some(4)), "p.tsv").unwrap();
    assert!(loaded.paradigms.is_empty());
    assert_eq!(loaded.rejected.len(), 1);
    assert_eq!(loaded.rejected[0].missing, vec![tag("V;IND;PRS;2;PL")]);
    assert!(loaded.rejected[0].to_string().contains("V;IND;PRS;2;PL"));
}

#[test]
fn malformed_tag_names_the_line() {
    let text = poner_tsv(None).replace("V;SBJV;PRS;3;PL", "V;SBJV;PRS;4;PL");
    match parse_paradigms(&text, "p.tsv") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 13),
        other => panic!("expected parse error, got {:?}", other),
    }
}

#[test]
fn duplicate_cell_is_an_error() {
    let text = format!("{}poner\tER\tV;IND;PRS;1;SG\tpongo\n", poner_tsv(None));
    assert!(matches!(parse_paradigms(&text, "p.tsv"), Err(Error::DuplicateCell { line: 14, .. })));
}

#[test]
fn class_is_inferred_from_the_infinitive() {
    let text: String = poner_tsv(None).lines().skip(1).map(|l| l.replace("\tER\t", "\t\t") + "\n").collect();
    assert_eq!(parse_paradigms(&text, "p.tsv").unwrap().paradigms[0].conj_class, ConjClass::Er);
    let three: String = poner_tsv(None).lines().skip(1).map(|l| l.replace("\tER\t", "\t") + "\n").collect();
    assert_eq!(parse_paradigms(&three, "p.tsv").unwrap().paradigms[0].conj_class, ConjClass::Er);
    assert_eq!(ConjClass::from_infinitive("ablaɾ"), Some(ConjClass::Ar));
    assert_eq!(ConjClass::from_infinitive("biˈβiɾ"), Some(ConjClass::Ir));
    assert_eq!(ConjClass::from_infinitive("xyz"), None);
}

#[test]
fn tsv_writer_round_trips() {
    let ps = synthesize_paradigms(3, 3, &AlternationSpec::default(), 4).unwrap();
    assert_eq!(parse_paradigms(&paradigms_to_tsv(&ps), "t").unwrap().paradigms, ps);
}

#[test]
fn extract_stem_examples() {
    let t = SuffixTable::default();
    let s = t.extract_stem("pongo", tag("V;IND;PRS;1;SG"), ConjClass::Er);
    assert_eq!((s.stem.as_str(), s.matched()), ("pong", true));
    let s = t.extract_stem("pones", tag("V;IND;PRS;2;SG"), ConjClass::Er);
    assert_eq!((s.stem.as_str(), s.matched()), ("pon", true));
    let s = t.extract_stem("x", tag("V;IND;PRS;1;SG"), ConjClass::Er);
    assert_eq!((s.stem.as_str(), s.matched()), ("x", false));
    let s = t.extract_stem("pongan", tag("V;SBJV;PRS;2;SG"), ConjClass::Er);
    assert_eq!((s.stem.as_str(), s.source), ("pong", SuffixMatch::ClassFallback));
    assert_eq!(t.stem("ponas", tag("V;SBJV;PRS;2;SG"), ConjClass::Er), "pon");
}

#[test]
fn poner_is_l_shaped() {
    assert_eq!(classify_verb(&poner(), &SuffixTable::default()), VerbClass::L);
}

#[test]
fn uniform_stem_is_nl() {
    let p = two_stem_paradigm(0, "kom", "kom");
    assert_eq!(classify_verb(&p, &SuffixTable::default()), VerbClass::NL);
}

#[test]
fn classifier_truth_table_over_two_stem_patterns() {
    let table = SuffixTable::default();
    let l_set: HashSet<usize> = CellTag::l_cells().map(|c| c.index()).collect();
    let mut l_count = 0;
    for mask in 0u16..4096 {
        let p = two_stem_paradigm(mask, "pon", "pong");
        // Oracle: the cells sharing 1SG.IND's stem are exactly the L-cells.
        let first = mask & 1;
        let same: HashSet<usize> = (0..12).filter(|i| (mask >> i) & 1 == first).collect();
        let expected = if same == l_set { VerbClass::L } else { VerbClass::NL };
        assert_eq!(classify_verb(&p, &table), expected, "mask {:012b}", mask);
        l_count += (expected == VerbClass::L) as usize;
    }
    // The L-cell pattern and its complement.
    assert_eq!(l_count, 2);
    let mut mask = 0u16;
    for c in CellTag::l_cells() {
        mask |= 1 << c.index();
    }
    let leaky = two_stem_paradigm(mask | 1 << tag("V;IND;PRS;2;SG").index(), "pon", "pong");
    assert_eq!(classify_verb(&leaky, &table), VerbClass::NL);
}

fn stem_alphabet() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop::sample::select(vec!['p', 't', 'k', 'm', 'n', 'l', 'a', 'e', 'i', 'o', 'u', 'ˈ', 'é', 'ɾ']), 0..7)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #[test]
    fn stem_plus_suffix_is_the_form(stem in stem_alphabet(), cell in 0usize..12, class in 0usize..3, tail in stem_alphabet()) {
        let t = SuffixTable::default();
        let class = ConjClass::ALL[class];
        let cell = CellTag::ALL[cell];
        let form = format!("{}{}", stem, tail);
        let s = t.extract_stem(&form, cell, class);
        if s.matched() {
            prop_assert_eq!(format!("{}{}", s.stem, s.suffix), form);
            prop_assert!(!s.stem.is_empty());
        } else {
            prop_assert_eq!(s.stem, form);
        }
    }

    #[test]
    fn classification_survives_renaming(seed in 0u64..500, shift in 1u32..20) {
        let spec = AlternationSpec::default();
        let ps = synthesize_paradigms(2, 2, &spec, seed).unwrap();
        let t = SuffixTable::default();
        // Injective renaming of stem consonants onto fresh code points.
        let rename = |s: &str| -> String {
            s.chars().map(|c| if "aeiou".contains(c) { c } else { char::from_u32(0x4E00 + shift * 256 + c as u32).unwrap() }).collect()
        };
        for p in &ps {
            // Only stems are renamed so the endings stay recognisable.
            let forms = p.forms().map(|(c, f)| {
                let split = t.extract_stem(f, c, p.conj_class);
                format!("{}{}", rename(&split.stem), split.suffix)
            }).collect();
            let renamed = Paradigm::new(format!("other_{}", p.lemma), p.conj_class, forms).unwrap();
            prop_assert_eq!(classify_verb(&renamed, &t), classify_verb(p, &t));
        }
    }
}

fn pool(n_l: usize, n_nl: usize, seed: u64) -> Lexicon {
    Lexicon::classify(synthesize_paradigms(n_l, n_nl, &AlternationSpec::default(), seed).unwrap(), &SuffixTable::default())
}

#[test]
fn condition_class_counts() {
    let lex = pool(320, 320, 1);
    for (frac, l) in [(0.10, 33), (0.50, 166), (0.90, 299)] {
        let s = sample_condition(&lex, frac, 332, 7).unwrap();
        assert_eq!((s.l.len(), s.nl.len()), (l, 332 - l));
        for lemma in &s.l {
            assert_eq!(lex.class_of(lemma), Some(VerbClass::L));
        }
    }
}

#[test]
fn exact_pool_suffices_and_short_pool_names_the_class() {
    let lex = pool(299, 40, 2);
    assert!(sample_condition(&lex, 0.90, 332, 1).is_ok());
    match sample_condition(&lex, 0.50, 332, 1) {
        Err(Error::InsufficientPool { class, needed, available }) => {
            assert_eq!((class, needed, available), (VerbClass::NL, 166, 40))
        }
        other => panic!("{:?}", other),
    }
}

#[test]
fn sampling_is_deterministic() {
    let lex = pool(100, 300, 3);
    assert_eq!(sample_condition(&lex, 0.1, 332, 9).unwrap(), sample_condition(&lex, 0.1, 332, 9).unwrap());
    assert_ne!(sample_condition(&lex, 0.1, 332, 9).unwrap(), sample_condition(&lex, 0.1, 332, 10).unwrap());
}

fn fake_sample(n_l: usize, n_nl: usize) -> LemmaSample {
    LemmaSample { l: (0..n_l).map(|i| format!("l{}", i)).collect(), nl: (0..n_nl).map(|i| format!("n{}", i)).collect() }
}

#[test]
fn canonical_split_sizes() {
    let s = split_lemmas(&fake_sample(33, 299), SplitRatios::default(), 0.1, 5).unwrap();
    assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (232, 34, 66));
    let s = split_lemmas(&fake_sample(1, 9), SplitRatios::default(), 0.1, 5).unwrap();
    assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (7, 1, 2));
}

#[test]
fn ratios_must_sum_to_one() {
    let r = SplitRatios { train: 0.7, dev: 0.2, test: 0.2 };
    assert!(matches!(split_lemmas(&fake_sample(5, 5), r, 0.5, 1), Err(Error::InvalidRatios(_))));
}

#[test]
fn apportionment_oracle() {
    // Hand-computed quotas for 33 L lemmas over 232/34/66: 23.06, 3.38, 6.56.
    assert_eq!(apportion(33, &[232, 34, 66]), vec![23, 3, 7]);
    assert_eq!(apportion(166, &[232, 34, 66]), vec![116, 17, 33]);
    assert_eq!(apportion(299, &[232, 34, 66]), vec![209, 31, 59]);
}

proptest! {
    #[test]
    fn splits_are_disjoint_stratified_partitions(n_l in 0usize..60, n_nl in 0usize..60, seed in any::<u64>()) {
        prop_assume!(n_l + n_nl > 0);
        let sample = fake_sample(n_l, n_nl);
        let s = split_lemmas(&sample, SplitRatios::default(), 0.0, seed).unwrap();
        let mut all: Vec<&String> = s.parts().iter().flat_map(|p| p.iter()).collect();
        prop_assert_eq!(all.len(), n_l + n_nl);
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n_l + n_nl);
        let frac = n_l as f64 / (n_l + n_nl) as f64;
        for part in s.parts() {
            let l = part.iter().filter(|x| x.starts_with('l')).count() as f64;
            prop_assert!((l - frac * part.len() as f64).abs() <= 1.0);
        }
        prop_assert_eq!(&s, &split_lemmas(&sample, SplitRatios::default(), 0.0, seed).unwrap());
    }

    #[test]
    fn apportion_stays_within_one_of_quota(total in 0usize..400, w in proptest::collection::vec(0usize..300, 1..5)) {
        let sum: usize = w.iter().sum();
        prop_assume!(sum > 0);
        let out = apportion(total, &w);
        prop_assert_eq!(out.iter().sum::<usize>(), total);
        for (o, wi) in out.iter().zip(&w) {
            let q = total as f64 * *wi as f64 / sum as f64;
            prop_assert!((*o as f64 - q).abs() < 1.0);
        }
    }
}

#[test]
fn triples_of_poner() {
    let ts = generate_triples(&poner());
    assert_eq!(ts.len(), 660);
    let keys: HashSet<_> = ts.iter().map(|t| t.key()).collect();
    assert_eq!(keys.len(), 660);
    assert!(ts.iter().all(|t| t.tgt_tag != t.src1.tag && t.tgt_tag != t.src2.tag));
    let want = ReinflectionInstance::new(
        "poner",
        Source::new("pongo", tag("V;IND;PRS;1;SG")),
        Source::new("ponga", tag("V;SBJV;PRS;1;SG")),
        tag("V;SBJV;PRS;2;SG"),
        "pongas",
    )
    .unwrap();
    assert!(ts.contains(&want));
    for t in &ts {
        assert!(t.src1.tag.to_string() < t.src2.tag.to_string());
        assert_eq!(t.tgt_form, poner().form(t.tgt_tag));
    }
}

#[test]
fn source_order_does_not_matter() {
    let a = Source::new("ponga", tag("V;SBJV;PRS;1;SG"));
    let b = Source::new("pongo", tag("V;IND;PRS;1;SG"));
    let t = tag("V;SBJV;PRS;2;SG");
    assert_eq!(
        ReinflectionInstance::new("poner", a.clone(), b.clone(), t, "pongas").unwrap(),
        ReinflectionInstance::new("poner", b, a.clone(), t, "pongas").unwrap()
    );
    assert!(ReinflectionInstance::new("poner", a.clone(), a, t, "pongas").is_err());
}

#[test]
fn instance_tsv_round_trip() {
    let ts = generate_triples(&poner());
    assert_eq!(parse_instances(&instances_to_tsv(&ts), "t").unwrap(), ts);
}

#[test]
fn subsampling_per_lemma() {
    let ps = synthesize_paradigms(2, 2, &AlternationSpec::default(), 8).unwrap();
    let refs: Vec<&Paradigm> = ps.iter().collect();
    let all = triples_for(&refs);
    let a = subsample_triples(&all, 0.25, 1, SubsampleScope::PerLemma).unwrap();
    assert_eq!(a.len(), 4 * 165);
    for p in &ps {
        assert_eq!(a.iter().filter(|t| t.lemma == p.lemma).count(), 165);
    }
    let b = subsample_triples(&all, 0.25, 2, SubsampleScope::PerLemma).unwrap();
    assert_eq!(b.len(), a.len());
    assert_ne!(a, b);
    assert_eq!(subsample_triples(&all, 1.0, 3, SubsampleScope::PerLemma).unwrap(), all);
    assert_eq!(subsample_triples(&all, 0.25, 1, SubsampleScope::Global).unwrap().len(), 660);
    assert_eq!(a, subsample_triples(&all, 0.25, 1, SubsampleScope::PerLemma).unwrap());
    assert!(subsample_triples(&all, 0.0, 1, SubsampleScope::PerLemma).is_err());
}

#[test]
fn synthetic_verbs_classify_as_requested() {
    let t = SuffixTable::default();
    let one = synthesize_paradigms(1, 0, &AlternationSpec::default(), 0).unwrap();
    assert_eq!(classify_verb(&one[0], &t), VerbClass::L);
    let five = synthesize_paradigms(0, 5, &AlternationSpec::default(), 0).unwrap();
    assert!(five.iter().all(|p| classify_verb(p, &t) == VerbClass::NL));
}

#[test]
fn synthetic_forms_use_the_declared_alphabet() {
    let spec = AlternationSpec::default();
    let mut alphabet: HashSet<char> = HashSet::new();
    for s in spec.onsets.iter().chain(&spec.vowels).chain(&spec.l_codas).chain(&spec.nl_codas).chain(&spec.insertions) {
        alphabet.extend(s.chars());
    }
    for c in ConjClass::ALL {
        for s in spec.suffixes.class_inventory(c) {
            alphabet.extend(s.chars());
        }
    }
    for p in synthesize_paradigms(20, 20, &spec, 11).unwrap() {
        for (_, f) in p.forms() {
            assert!(f.chars().all(|c| alphabet.contains(&c)), "{}", f);
        }
    }
}

#[test]
fn synthetic_pool_feeds_a_condition() {
    let lex = pool(10, 90, 12);
    assert_eq!((lex.count(VerbClass::L), lex.count(VerbClass::NL)), (10, 90));
    let s = sample_condition(&lex, 0.10, 100, 0).unwrap();
    assert_eq!((s.l.len(), s.nl.len()), (10, 90));
}

#[test]
fn suffix_table_and_spec_survive_json() {
    let t = SuffixTable::default();
    let back: SuffixTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back.to_tsv(), t.to_tsv());
    let spec = AlternationSpec { insertions: vec!["x".into()], ..AlternationSpec::default() };
    let back: AlternationSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
    assert_eq!(back, spec);
}
