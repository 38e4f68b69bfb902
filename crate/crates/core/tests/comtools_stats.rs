use std::collections::HashMap;

use agent6g_core::comtools::{
    awgn_transmit, bleu_score, bleu_tokenize, count_params, register_comtools, semantic_similarity, ChannelConfig,
    ComtoolsError, FsOp, FsOutput, FsTool, Signal,
};
use agent6g_core::mcp::{build_chain, execute_chain, Strategy as PlanStrategy, SubTask, ToolRegistry, DEFAULT_TOOL_BUDGET};
use agent6g_core::sc_case::SCModelSpec;
use proptest::prelude::*;
use serde_json::json;

fn unit_power_signal(n: usize, seed: u64) -> Signal {
    // Random ±1 symbols: exactly unit power regardless of pattern.
    let mut s = seed | 1;
    Signal::new(
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                if s & 1 == 0 { 1.0 } else { -1.0 }
            })
            .collect(),
    )
}

#[test]
fn awgn_noise_statistics() {
    for snr in [0.0, 10.0, 20.0] {
        let expected = 10f64.powf(-snr / 10.0);
        for seed in [1u64, 2, 3, 42, 20240601] {
            let x = unit_power_signal(100_000, seed);
            assert!((x.power() - 1.0).abs() < 1e-12);
            let y = awgn_transmit(&x, &ChannelConfig { snr_db: snr, seed }).unwrap();
            let noise: Vec<f64> = y.samples.iter().zip(&x.samples).map(|(a, b)| a - b).collect();
            let n = noise.len() as f64;
            let mean = noise.iter().sum::<f64>() / n;
            let var = noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 0.01, "snr {snr} seed {seed}: mean {mean}");
            assert!((var - expected).abs() / expected < 0.03, "snr {snr} seed {seed}: var {var} vs {expected}");
        }
    }
}

#[test]
fn awgn_scales_with_measured_power() {
    let x = Signal::new(unit_power_signal(50_000, 9).samples.iter().map(|v| 3.0 * v).collect());
    let y = awgn_transmit(&x, &ChannelConfig { snr_db: 10.0, seed: 5 }).unwrap();
    let var = y.samples.iter().zip(&x.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 50_000.0;
    assert!((var - 0.9).abs() / 0.9 < 0.03, "{var}");
}

#[test]
fn awgn_errors_and_determinism() {
    let cfg = ChannelConfig { snr_db: 5.0, seed: 3 };
    assert!(matches!(awgn_transmit(&Signal::new(vec![]), &cfg), Err(ComtoolsError::EmptySignal)));
    assert!(matches!(awgn_transmit(&Signal::new(vec![0.0; 4]), &cfg), Err(ComtoolsError::ZeroPowerSignal)));
    let x = unit_power_signal(64, 1);
    assert_eq!(awgn_transmit(&x, &cfg).unwrap(), awgn_transmit(&x, &cfg).unwrap());
    assert_ne!(awgn_transmit(&x, &cfg).unwrap(), awgn_transmit(&x, &ChannelConfig { seed: 4, ..cfg }).unwrap());
}

/// Straightforward corpus BLEU used as an oracle for the library version.
fn bleu_oracle(cands: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> f64 {
    let grams = |t: &[String], n: usize| {
        let mut m: HashMap<String, usize> = HashMap::new();
        for i in 0..t.len().saturating_sub(n - 1) {
            if i + n <= t.len() {
                *m.entry(t[i..i + n].join("\u{1}")).or_default() += 1;
            }
        }
        m
    };
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (c, r) in cands.iter().zip(refs) {
            let (gc, gr) = (grams(c, n), grams(r, n));
            for (g, k) in &gc {
                hit += (*k).min(*gr.get(g).unwrap_or(&0));
                tot += k;
            }
        }
        if hit == 0 {
            return 0.0;
        }
        log_sum += (hit as f64 / tot as f64).ln();
    }
    let c: usize = cands.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / max_n as f64).exp()
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "the"]).prop_map(String::from), 1..12)
}

proptest! {
    #[test]
    fn bleu_bounded_and_matches_oracle(
        pairs in prop::collection::vec((words(), words()), 1..6),
        max_n in 1usize..=4,
    ) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let b = bleu_score(&c, &r, max_n).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((b - bleu_oracle(&c, &r, max_n)).abs() < 1e-12);
    }

    #[test]
    fn bleu_invariant_under_reordering(
        pairs in prop::collection::vec((words(), words()), 1..6),
        rot in 0usize..6,
    ) {
        let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let (c2, r2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        let a = bleu_score(&c, &r, 2).unwrap();
        let b = bleu_score(&c2, &r2, 2).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn param_count_monotone(v in 0usize..50_000, d in 4usize..512, dv in 0usize..100, dd in 0usize..100) {
        let spec = |v, d| SCModelSpec { vocab_size: v, embed_dim: d, repetition: 1, codebook_seed: 0, label: String::new() };
        let base = count_params(&spec(v, d));
        prop_assert!(count_params(&spec(v + dv, d)) >= base);
        prop_assert!(count_params(&spec(v, d + dd)) >= base);
    }

    #[test]
    fn similarity_symmetric_and_reflexive(a in "[a-z ]{0,60}", b in "[a-z ]{0,60}") {
        let ab = semantic_similarity(&a, &b);
        prop_assert!((ab - semantic_similarity(&b, &a)).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        if a.chars().any(|c| c != ' ') {
            prop_assert!((semantic_similarity(&a, &a) - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn bleu_fixtures() {
    let t = |s: &str| bleu_tokenize(s);
    assert_eq!(bleu_score(&[t("a b c d")], &[t("a b c d")], 4).unwrap(), 1.0);
    assert_eq!(bleu_score(&[t("a b c")], &[t("x y z")], 4).unwrap(), 0.0);
    let clip = bleu_score(&[t("the the the the the the the")], &[t("the cat is on the mat")], 1).unwrap();
    assert!((clip - 2.0 / 7.0).abs() < 1e-12);
    assert!(matches!(bleu_score(&[t("a")], &[], 1), Err(ComtoolsError::LengthMismatch(1, 0))));
    assert!(matches!(bleu_score::<String>(&[], &[], 1), Err(ComtoolsError::EmptyCorpus)));
    assert_eq!(t("Hello, World!"), ["hello", ",", "world", "!"]);
}

#[test]
fn param_count_fixtures() {
    let spec = |v, d| SCModelSpec { vocab_size: v, embed_dim: d, repetition: 1, codebook_seed: 0, label: String::new() };
    assert_eq!(count_params(&spec(0, 64)), 64);
    assert_eq!(count_params(&spec(1000, 64)), 64_064);
    assert_eq!(count_params(&spec(28_543, 64)), 1_826_816);
}

#[test]
fn similarity_drops_with_corruption() {
    let clean = "the receiver averages every copy before it decodes the word";
    let words: Vec<&str> = clean.split(' ').collect();
    let corrupt = |k: usize| {
        words.iter().enumerate().map(|(i, w)| if i < k { "zq" } else { w }).collect::<Vec<_>>().join(" ")
    };
    assert_eq!(words.len(), 10);
    let one = semantic_similarity(clean, &corrupt(1));
    let eight = semantic_similarity(clean, &corrupt(8));
    assert!(one > eight, "{one} vs {eight}");
}

#[test]
fn fs_tool_sandbox() {
    let dir = tempfile::tempdir().unwrap();
    let fs = FsTool::new(dir.path());
    assert_eq!(fs.run(FsOp::List, ".", None).unwrap(), FsOutput::Listing(vec![]));
    fs.run(FsOp::Write, "notes/a.txt", Some("payload ✓")).unwrap();
    assert_eq!(fs.run(FsOp::Read, "notes/./a.txt", None).unwrap(), FsOutput::Text("payload ✓".into()));
    assert_eq!(fs.run(FsOp::List, "", None).unwrap(), FsOutput::Listing(vec!["notes/".into()]));
    for bad in ["../../etc/x", "/etc/passwd", "notes/../../x"] {
        assert!(matches!(fs.run(FsOp::Read, bad, None), Err(ComtoolsError::SandboxEscape(_))), "{bad}");
    }
    assert!(matches!(fs.run(FsOp::Read, "missing", None), Err(ComtoolsError::Io(_))));
}

#[test]
fn registered_tools_follow_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let mut reg = ToolRegistry::new();
    register_comtools(&mut reg, Some(FsTool::new(dir.path()))).unwrap();
    assert_eq!(reg.names().collect::<Vec<_>>(), ["awgn", "bleu", "fs", "params", "simtext"]);
    let call = |name: &str, v: serde_json::Value| {
        let mut step = SubTask::new("t1", format!("call {name}")).with_tool(name).producing("out");
        step.inputs = serde_json::from_value(v).unwrap();
        let chain = build_chain("p", PlanStrategy::Cot, vec![step], vec![]).unwrap();
        let r = execute_chain(&chain, &reg, DEFAULT_TOOL_BUDGET, 1);
        match r.error {
            None => Ok(r.artifacts["out"].clone()),
            Some(e) => Err(e),
        }
    };
    let y = call("awgn", json!({"samples": [1.0, -1.0], "snr_db": 300.0, "seed": 1})).unwrap();
    assert!((y[0].as_f64().unwrap() - 1.0).abs() < 1e-10);
    let b = call("bleu", json!({"candidates": ["the cat"], "references": [["the", "cat"]], "max_n": 2})).unwrap();
    assert_eq!(b.as_f64(), Some(1.0));
    let p = call("params", json!({"spec": {"vocab_size": 1000, "embed_dim": 64, "repetition": 1, "codebook_seed": 0}}));
    assert_eq!(p.unwrap().as_u64(), Some(64_064));
    assert_eq!(call("simtext", json!({"a": "same", "b": "same"})).unwrap().as_f64().map(|s| (s - 1.0).abs() < 1e-9), Some(true));
    call("fs", json!({"op": "write", "path": "x.txt", "payload": "hi"})).unwrap();
    assert_eq!(call("fs", json!({"op": "read", "path": "x.txt"})).unwrap(), json!("hi"));
    assert!(call("awgn", json!({"samples": [], "snr_db": 1.0, "seed": 1})).is_err());
}
