mod common;

use common::{paradigms, small_config, Setup};
use morphome::encoding::{build_vocab, ArchVariant, EncodedSequence, InputToken, TokenType, Vocab, BOS, EOS, SPECIALS};
use morphome::model::{beam_search, greedy_decode, sinusoid_table, DecoderBatch, Memory, ModelConfig, TransformerModel};
use morphome::Error;
use morphome_numcore::{Graph, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logits<T: Scalar>(model: &TransformerModel<T>, enc: &[&EncodedSequence], tgt: &[&[usize]]) -> Tensor<T> {
    let eb = model.encoder_batch(enc).unwrap();
    let db = DecoderBatch::from_targets(tgt).unwrap();
    model.logits(&eb, &db).unwrap()
}

fn embedded<T: Scalar>(model: &TransformerModel<T>, seq: &EncodedSequence) -> Tensor<T> {
    let eb = model.encoder_batch(&[seq]).unwrap();
    let mut g = Graph::new(model.params());
    let x = model.embed_input(&mut g, &eb).unwrap();
    g.value(x).clone()
}

#[test]
fn pe_at_zero_alternates() {
    let pe = sinusoid_table(3, 8);
    assert_eq!(&pe[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!((pe[8] - 1f64.sin()).abs() < 1e-15);
    assert!((pe[9] - 1f64.cos()).abs() < 1e-15);
    assert!((pe[10] - (1.0 / 10000f64.powf(0.25)).sin()).abs() < 1e-15);
}

#[test]
fn parameter_counts() {
    let d = 256;
    let dense = |i: usize, o: usize| i * o + o;
    // Hand count: 4 attention projections, two FFN layers and 2 or 3 norms.
    let enc = 4 * dense(d, d) + dense(d, 1024) + dense(1024, d) + 4 * d;
    let dec = 8 * dense(d, d) + dense(d, 1024) + dense(1024, d) + 6 * d;
    let (v, out) = (36, 36);
    let mut totals = Vec::new();
    for (variant, width) in [(ArchVariant::FeatureOnehot, 7), (ArchVariant::FeatureGeometric, 4)] {
        let cfg = ModelConfig::canonical(variant, v, out);
        let m = TransformerModel::<f32>::new(cfg.clone(), 0).unwrap();
        let expected = v * d + width * d + 4 * (enc + dec) + dense(d, out);
        assert_eq!(m.num_params(), expected);
        assert_eq!(cfg.expected_params(), expected);
        totals.push(expected);
    }
    assert_eq!(totals[0] - totals[1], 3 * d);
    let m = TransformerModel::<f32>::new(ModelConfig::canonical(ArchVariant::Vanilla, v + 12, out), 0).unwrap();
    assert_eq!(m.num_params(), ModelConfig::canonical(ArchVariant::Vanilla, v + 12, out).expected_params());
}

#[test]
fn config_validation() {
    let mut c = ModelConfig::canonical(ArchVariant::Vanilla, 40, 30);
    c.heads = 3;
    assert!(TransformerModel::<f32>::new(c, 0).is_err());
}

#[test]
fn output_bias_starts_at_zero() {
    let s = Setup::<f32>::new(ArchVariant::Vanilla, 1, 16, 0);
    let id = s.model.params().id("out.b").unwrap();
    assert!(s.model.params().value(id).data().iter().all(|&x| x == 0.0));
}

#[test]
fn identical_feature_tags_embed_identically() {
    let s = Setup::<f64>::new(ArchVariant::FeatureOnehot, 1, 16, 3);
    let (mut seq, _) = s.encode(0);
    let tag_rows: Vec<usize> = (0..seq.len()).filter(|&i| seq.token_type[i] == TokenType::Tag).collect();
    seq.tokens[tag_rows[2]] = seq.tokens[tag_rows[0]].clone();
    let e = embedded(&s.model, &seq);
    assert_eq!(e.row(tag_rows[0]), e.row(tag_rows[2]));
}

#[test]
fn vanilla_tag_rows_differ_by_the_pe_difference() {
    let s = Setup::<f64>::new(ArchVariant::Vanilla, 1, 16, 4);
    let (seq, _) = s.encode(10);
    let mut moved = seq.clone();
    let j = seq.len() - 1;
    moved.tokens.swap(0, j);
    let (a, b) = (embedded(&s.model, &seq), embedded(&s.model, &moved));
    let pe = sinusoid_table(64, 16);
    for c in 0..16 {
        let diff = b.row(j)[c] - a.row(0)[c];
        assert!((diff - (pe[j * 16 + c] - pe[c])).abs() < 1e-12);
    }
}

#[test]
fn wrong_feature_width_is_rejected() {
    let s = Setup::<f32>::new(ArchVariant::FeatureGeometric, 1, 16, 0);
    let (mut seq, _) = s.encode(0);
    seq.tokens[0] = InputToken::Features(vec![1, 0, 0, 1, 0, 1, 0]);
    assert!(matches!(s.model.encoder_batch(&[&seq]), Err(Error::FeatureWidth { got: 7, expected: 4 })));
}

#[test]
fn overlength_is_rejected() {
    let s = Setup::<f32>::new(ArchVariant::Vanilla, 1, 16, 0);
    let (seq, tgt) = s.encode(0);
    let mut long = seq.clone();
    for _ in 0..64 {
        long.tokens.push(seq.tokens[1].clone());
        long.token_type.push(TokenType::Char);
        long.positions.push(long.positions.len());
    }
    assert!(matches!(s.model.encoder_batch(&[&long]), Err(Error::Overlength { .. })));
    let mut t = tgt.clone();
    t.resize(70, 5);
    let eb = s.model.encoder_batch(&[&seq]).unwrap();
    let db = DecoderBatch::from_targets(&[&t]).unwrap();
    assert!(matches!(s.model.logits(&eb, &db), Err(Error::Overlength { .. })));
}

#[test]
fn zero_layers_is_projection_of_decoder_embedding() {
    let s = Setup::<f64>::new(ArchVariant::Vanilla, 0, 8, 5);
    let (seq, tgt) = s.encode(3);
    let out = logits(&s.model, &[&seq], &[&tgt]);
    let p = s.model.params();
    let table = p.value(p.id("embed").unwrap());
    let w = p.value(p.id("out.w").unwrap());
    let b = p.value(p.id("out.b").unwrap());
    let pe = sinusoid_table(64, 8);
    let v = s.vocab.output_size();
    for (t, &tok) in tgt[..tgt.len() - 1].iter().enumerate() {
        let x: Vec<f64> = (0..8).map(|c| table.row(tok)[c] * 8f64.sqrt() + pe[t * 8 + c]).collect();
        for o in 0..v {
            let y = b.data()[o] + (0..8).map(|c| x[c] * w.data()[c * v + o]).sum::<f64>();
            assert!((y - out.row(t)[o]).abs() < 1e-12);
        }
    }
}

#[test]
fn decoder_is_causal() {
    let s = Setup::<f64>::new(ArchVariant::Vanilla, 2, 16, 6);
    let (seq, tgt) = s.encode(7);
    let base = logits(&s.model, &[&seq], &[&tgt]);
    let v = s.vocab.output_size();
    for t in 1..tgt.len() - 1 {
        let mut changed = tgt.clone();
        changed[t] = if changed[t] == 4 { 5 } else { 4 };
        let other = logits(&s.model, &[&seq], &[&changed]);
        assert_eq!(&base.data()[..t * v], &other.data()[..t * v], "position {}", t);
        assert_ne!(&base.data()[t * v..(t + 1) * v], &other.data()[t * v..(t + 1) * v]);
    }
}

#[test]
fn encoder_padding_does_not_change_logits() {
    for variant in ArchVariant::ALL {
        let s = Setup::<f32>::new(variant, 2, 16, 7);
        let (short, t1) = s.encode(0);
        let (long, t2) = s.encode(500);
        assert!(long.len() != short.len() || t1.len() != t2.len());
        let alone = logits(&s.model, &[&short], &[&t1]);
        let batched = logits(&s.model, &[&short, &long], &[&t1, &t2]);
        let v = s.vocab.output_size();
        for t in 0..t1.len() - 1 {
            for o in 0..v {
                assert!((alone.row(t)[o] - batched.row(t)[o]).abs() < 1e-5, "{}", variant);
            }
        }
    }
}

/// Swaps tag contents between the tag blocks, keeping every position.
fn permute_tag_blocks(seq: &EncodedSequence, order: &[usize]) -> EncodedSequence {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut prev_tag = false;
    for (i, ty) in seq.token_type.iter().enumerate() {
        let is_tag = *ty == TokenType::Tag;
        if is_tag && !prev_tag {
            blocks.push(Vec::new());
        }
        if is_tag {
            blocks.last_mut().unwrap().push(i);
        }
        prev_tag = is_tag;
    }
    let mut out = seq.clone();
    for (slot, &src) in order.iter().enumerate() {
        for (&dst_i, &src_i) in blocks[slot].iter().zip(&blocks[src]) {
            out.tokens[dst_i] = seq.tokens[src_i].clone();
        }
    }
    out
}

fn max_abs<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.max_abs_diff(b).to_f64().unwrap()
}

#[test]
fn tag_permutation_invariance_by_class() {
    let perms = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for variant in ArchVariant::ALL {
        let mut differ = 0;
        let trials = 20;
        for trial in 0..trials {
            let s = Setup::<f32>::new(variant, 2, 32, trial);
            let i = rng.gen_range(0..s.instances.len());
            let (seq, tgt) = s.encode(i);
            let perm = perms.choose(&mut rng).unwrap();
            let moved = permute_tag_blocks(&seq, perm);
            assert_ne!(moved, seq);
            let d = max_abs(&logits(&s.model, &[&seq], &[&tgt]), &logits(&s.model, &[&moved], &[&tgt]));
            if variant.pos() == morphome::encoding::PosPolicy::TagFixedZero {
                assert!(d < 1e-4, "{} trial {}: {}", variant, trial, d);
            } else if d > 1e-3 {
                differ += 1;
            }
        }
        if variant.pos() == morphome::encoding::PosPolicy::Sequential {
            assert!(differ * 10 >= trials * 9, "{}: only {} of {} differ", variant, differ, trials);
        }
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let s = Setup::<f64>::new(ArchVariant::CharSeparated, 2, 16, 9);
    let (seq, tgt) = s.encode(42);
    let mut order: Vec<usize> = (0..seq.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let permuted = EncodedSequence {
        tokens: order.iter().map(|&i| seq.tokens[i].clone()).collect(),
        token_type: order.iter().map(|&i| seq.token_type[i]).collect(),
        positions: order.iter().map(|&i| seq.positions[i]).collect(),
    };
    let enc_out = |x: &EncodedSequence| {
        let eb = s.model.encoder_batch(&[x]).unwrap();
        let mut g = Graph::new(s.model.params());
        let m = s.model.encode(&mut g, &eb, &mut None).unwrap();
        g.value(m).clone()
    };
    let (a, b) = (enc_out(&seq), enc_out(&permuted));
    for (new, &old) in order.iter().enumerate() {
        for c in 0..16 {
            assert!((a.row(old)[c] - b.row(new)[c]).abs() < 1e-10);
        }
    }
    let d = max_abs(&logits(&s.model, &[&seq], &[&tgt]), &logits(&s.model, &[&permuted], &[&tgt]));
    assert!(d < 1e-5);
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let s = Setup::<f64>::new(ArchVariant::FeatureGeometric, 2, 16, 12);
    let items: Vec<(EncodedSequence, Vec<usize>)> = [3, 100, 650].iter().map(|&i| s.encode(i)).collect();
    let encs: Vec<&EncodedSequence> = items.iter().map(|x| &x.0).collect();
    let tgts: Vec<&[usize]> = items.iter().map(|x| x.1.as_slice()).collect();
    let full = logits(&s.model, &encs, &tgts);
    let eb = s.model.encoder_batch(&encs).unwrap();
    let memory: Memory<f64> = s.model.memory(&eb).unwrap();
    let steps = full.shape()[0] / items.len();
    let v = s.vocab.output_size();
    let mut state = morphome::model::DecoderState::empty(2);
    // Feed the instances in reverse row order to exercise the parent mapping.
    let instance = vec![2, 1, 0];
    for t in 0..steps {
        let parents = if t == 0 { vec![0, 0, 0] } else { vec![0, 1, 2] };
        let tokens: Vec<usize> = instance.iter().map(|&i| tgts[i].get(t).copied().unwrap_or(EOS)).collect();
        let (lg, next) = s.model.step(&memory, &state, &parents, &instance, &tokens);
        state = next;
        for (r, &i) in instance.iter().enumerate() {
            if t + 1 < tgts[i].len() {
                for o in 0..v {
                    assert!((lg[r * v + o] - full.row(i * steps + t)[o]).abs() < 1e-10);
                }
            }
        }
    }
}

fn toy(seed: u64, chars: &str) -> (Vocab, TransformerModel<f64>, EncodedSequence) {
    let vocab = Vocab::new(chars.chars(), ArchVariant::FeatureOnehot.scheme());
    let mut cfg = small_config(ArchVariant::FeatureOnehot, &vocab, 1, 8);
    cfg.max_len = 16;
    let model = TransformerModel::new(cfg, seed).unwrap();
    let src = |c: usize| morphome::corpus::Source::new(&chars[..1], morphome::corpus::CellTag::ALL[c]);
    let seq = morphome::encoding::encode_sources(&src(0), &src(1), morphome::corpus::CellTag::ALL[2], ArchVariant::FeatureOnehot, &vocab).unwrap();
    (vocab, model, seq)
}

/// Log-probability of emitting `tokens` (and EOS when `finished`) by full
/// forward passes.
fn sequence_log_prob(model: &TransformerModel<f64>, seq: &EncodedSequence, tokens: &[usize], finished: bool) -> f64 {
    let mut full = vec![BOS];
    full.extend_from_slice(tokens);
    if finished {
        full.push(EOS);
    }
    let inputs = &full[..full.len() - 1];
    let out = logits_prefix(model, seq, inputs);
    let v = model.config().out_vocab;
    (0..inputs.len())
        .map(|t| {
            let row = &out[t * v..(t + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row[full[t + 1]] - lse
        })
        .sum()
}

fn logits_prefix(model: &TransformerModel<f64>, seq: &EncodedSequence, inputs: &[usize]) -> Vec<f64> {
    let eb = model.encoder_batch(&[seq]).unwrap();
    let db = DecoderBatch::from_prefixes(&[inputs]).unwrap();
    model.logits(&eb, &db).unwrap().into_data()
}

fn all_sequences(alphabet: &[usize], max_len: usize) -> Vec<(Vec<usize>, bool)> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for len in 0..=max_len {
        for s in &layer {
            out.push((s.clone(), len == max_len));
        }
        if len == max_len {
            break;
        }
        layer = layer.iter().flat_map(|s| alphabet.iter().map(move |&c| [s.clone(), vec![c]].concat())).collect();
    }
    // Sequences shorter than max_len end in EOS; the longest are truncated.
    out.into_iter().map(|(s, truncated)| (s, !truncated)).collect()
}

#[test]
fn exhaustive_beam_finds_the_argmax() {
    for seed in 0..5 {
        let (vocab, model, seq) = toy(seed, "ab");
        let max_len = 4;
        let alphabet: Vec<usize> = (SPECIALS.len()..vocab.output_size()).collect();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for (tokens, finished) in all_sequences(&alphabet, max_len) {
            let lp = sequence_log_prob(&model, &seq, &tokens, finished);
            let score = lp / (tokens.len() + finished as usize) as f64;
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, tokens));
            }
        }
        let (score, tokens) = best.unwrap();
        let hyps = beam_search(&model, &vocab, &[seq.clone()], 81, max_len).unwrap();
        assert_eq!(hyps[0][0].tokens, tokens, "seed {}", seed);
        assert!((hyps[0][0].score - score).abs() < 1e-9);
        // Every finished sequence is reachable with this width.
        assert_eq!(hyps[0].len(), 15 + 16);
    }
}

#[test]
fn width_one_beam_is_greedy() {
    for variant in ArchVariant::ALL {
        let s = Setup::<f64>::new(variant, 2, 16, 21);
        let inputs: Vec<EncodedSequence> = (0..6).map(|i| s.encode(i * 97).0).collect();
        let beam = beam_search(&s.model, &s.vocab, &inputs, 1, 12).unwrap();
        let greedy = greedy_decode(&s.model, &s.vocab, &inputs, 12).unwrap();
        for (b, g) in beam.iter().zip(&greedy) {
            assert_eq!(b.len(), 1);
            assert_eq!(b[0].tokens, g.tokens);
            assert!((b[0].log_prob - g.log_prob).abs() < 1e-9);
        }
    }
}

#[test]
fn beam_returns_distinct_ranked_hypotheses() {
    let s = Setup::<f32>::new(ArchVariant::Vanilla, 1, 16, 2);
    let inputs: Vec<EncodedSequence> = (0..70).map(|i| s.encode(i * 9).0).collect();
    let a = beam_search(&s.model, &s.vocab, &inputs, 5, 20).unwrap();
    assert_eq!(a, beam_search(&s.model, &s.vocab, &inputs, 5, 20).unwrap());
    for hyps in &a {
        assert!(!hyps.is_empty() && hyps.len() <= 5);
        let forms: std::collections::HashSet<_> = hyps.iter().map(|h| &h.form).collect();
        assert_eq!(forms.len(), hyps.len());
        assert!(hyps.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

#[test]
fn checkpoint_round_trip_preserves_logits() {
    let s = Setup::<f32>::new(ArchVariant::FeatureOnehot, 1, 16, 8);
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("m");
    s.model.save(&stem, serde_json::json!({"seed": 8})).unwrap();
    let (back, meta) = TransformerModel::<f32>::load(&stem).unwrap();
    assert_eq!(meta["seed"], 8);
    let (seq, tgt) = s.encode(5);
    assert_eq!(logits(&s.model, &[&seq], &[&tgt]), logits(&back, &[&seq], &[&tgt]));
    let (wide, _) = TransformerModel::<f64>::load(&stem).unwrap();
    let diff = max_abs(&logits(&wide, &[&seq], &[&tgt]), &logits(&s.model, &[&seq], &[&tgt]).cast());
    assert!(diff < 1e-5);
    let other = build_vocab(&paradigms(2, 9), ArchVariant::Vanilla).unwrap();
    let wrong = small_config(ArchVariant::Vanilla, &other, 1, 16);
    assert!(TransformerModel::from_store(wrong, back.into_params()).is_err());
}
