//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hssas::cli;
use hssas::corpus::{Document, PAD};
use hssas::encoder::{encode_sentences, encode_words};
use hssas::inference::{lead3, summarize, Budget};
use hssas::model::{HssasModel, ModelConfig};
use hssas::numerics::{finite_diff_check, Tape, Tensor};
use hssas::rouge::{lcs_len, rouge_l, rouge_n, CorpusScores, EvalMode};
use hssas::training::{adadelta_step, evaluate_loss, train, train_batch, Adadelta, Checkpoint, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const ATTN_SUM_TOL: f64 = 1e-12;
const FOUR_DECIMALS: f64 = 5e-5;
const ADADELTA_FIRST_STEP: f64 = -4.47209e-3;
const ADADELTA_TOL: f64 = 1e-8;
const LEAD_MATCH_RATE: f64 = 0.95;
const OVERFIT_LOSS: f64 = 0.05;
const OVERFIT_EPOCHS: usize = 500;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);

/// Hand-computed LEAD-3 scores on the 5-document fixture, truncated recall.
const LEAD3_R1: f64 = 0.8547;
const LEAD3_R2: f64 = 0.5415;
const LEAD3_RL: f64 = 0.7819;

type Check = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        word_dim: 8,
        hidden: 4,
        attention_dim: 5,
        position_dim: 3,
        max_position: 10,
        fine_tune_embeddings: true,
    }
}

fn labeled(id: &str, sentences: Vec<Vec<usize>>, labels: Vec<u8>) -> Document {
    Document {
        id: id.into(),
        text: sentences.iter().map(|s| format!("sentence of {} words", s.len())).collect(),
        sentences,
        labels: Some(labels),
        references: None,
    }
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let model = HssasModel::new(tiny_config(), 20, None, 17).map_err(|e| e.to_string())?;
    let doc = labeled(
        "g",
        vec![vec![2, 5, 9, 13], vec![4, 4, 17, 1], vec![19, 3, 8, 11]],
        vec![1, 0, 1],
    );
    let report = finite_diff_check(&model.store, |t| model.loss(t, &doc, false), 1e-5).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let groups = [
        "embedding",
        "word_encoder.",
        "word_attention.",
        "sentence_encoder.",
        "sentence_attention.",
        "position.",
        "classifier.",
    ];
    for g in groups {
        if !report.per_param.iter().any(|(n, _)| n.starts_with(g)) {
            return Err(format!("parameter group {g} not checked"));
        }
    }
    let detail = format!(
        "max rel error {:.2e} over {} coordinates in {} params, {:.1}s",
        report.max_rel_error,
        report.coordinates,
        report.per_param.len(),
        elapsed.as_secs_f64()
    );
    if report.max_rel_error >= GRAD_TOL {
        let worst = report
            .per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, e)| format!("{n} {e:.2e}"))
            .unwrap_or_default();
        return Err(format!("{detail}; worst {worst}"));
    }
    if elapsed > GRAD_BUDGET {
        return Err(format!("{detail}; over the {}s budget", GRAD_BUDGET.as_secs()));
    }
    Ok(detail)
}

fn check_weights(w: &[f64], mask: &[bool]) -> Result<(), String> {
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > ATTN_SUM_TOL {
        return Err(format!("weights sum to {sum}"));
    }
    for (&a, &live) in w.iter().zip(mask) {
        if a < 0.0 {
            return Err(format!("negative weight {a}"));
        }
        if !live && a != 0.0 {
            return Err(format!("masked weight {a}"));
        }
    }
    Ok(())
}

fn attention_contracts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut masked_words = 0;
    let mut masked_sentences = 0;
    for case in 0..100 {
        let model = HssasModel::new(tiny_config(), 20, None, case).map_err(|e| e.to_string())?;
        let mut tape = Tape::new(&model.store);
        let n = rng.gen_range(1..7);
        let mut vectors = Vec::new();
        for _ in 0..n {
            let live = rng.gen_range(1..7);
            let pad = rng.gen_range(0..4);
            let ids: Vec<usize> = (0..live).map(|_| rng.gen_range(1..20)).chain(std::iter::repeat_n(PAD, pad)).collect();
            let mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
            masked_words += pad;
            let enc = encode_words(&mut tape, &ids, &model.embedding, &model.word_encoder, &model.word_attention)
                .map_err(|e| e.to_string())?;
            check_weights(tape.value(enc.attention).data(), &mask).map_err(|e| format!("case {case} words: {e}"))?;
            vectors.push(enc.vector);
        }
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        let keep = rng.gen_range(0..n);
        mask[keep] = true;
        masked_sentences += mask.iter().filter(|&&m| !m).count();
        let doc = encode_sentences(
            &mut tape,
            &vectors,
            Some(&mask),
            &model.sentence_encoder,
            &model.sentence_attention,
        )
        .map_err(|e| e.to_string())?;
        check_weights(tape.value(doc.attention).data(), &mask).map_err(|e| format!("case {case} sentences: {e}"))?;
    }
    Ok(format!(
        "100 random documents, {masked_words} padded words and {masked_sentences} masked sentences"
    ))
}

fn summary_state_semantics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = HssasModel::new(tiny_config(), 20, None, 5).map_err(|e| e.to_string())?;
    let c = &model.classifier;
    let width = 2 * model.config.hidden;
    let random_vec = |rng: &mut ChaCha8Rng, k: usize| Tensor::vector((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect());

    let n = 5;
    let sents: Vec<Tensor> = (0..n).map(|_| random_vec(&mut rng, width)).collect();
    let d = random_vec(&mut rng, width);
    let run = |sents: &[Tensor]| -> Result<(Vec<f64>, f64), String> {
        let mut tape = Tape::new(&model.store);
        let s: Vec<_> = sents.iter().map(|t| tape.constant(t.clone())).collect();
        let p: Vec<_> = (1..=n)
            .map(|j| model.positions.position_embed(&mut tape, j, n))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let dv = tape.constant(d.clone());
        let scores = c.score_document(&mut tape, &s, &p, dv, None).map_err(|e| e.to_string())?;
        let probs = scores.probs.iter().map(|&v| tape.scalar(v).unwrap()).collect();
        Ok((probs, tape.scalar(scores.features[0].novelty).unwrap()))
    };
    let (base, n1) = run(&sents)?;
    if n1 != 0.0 {
        return Err(format!("N_1 = {n1}"));
    }
    for j in 0..n - 1 {
        let mut edited = sents.clone();
        edited[j + 1] = random_vec(&mut rng, width);
        let (probs, _) = run(&edited)?;
        if probs[..=j] != base[..=j] {
            return Err(format!("editing sentence {} changed an earlier probability", j + 2));
        }
        if probs[j + 1] == base[j + 1] {
            return Err(format!("editing sentence {} left its probability unchanged", j + 2));
        }
    }
    for _ in 0..50 {
        let [cc, m, nn, pp, b]: [f64; 5] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
        let h = 1e-6;
        let slope =
            (hssas::classifier::sentence_prob(cc, m, nn + h, pp, b) - hssas::classifier::sentence_prob(cc, m, nn - h, pp, b)) / (2.0 * h);
        if slope >= 0.0 {
            return Err(format!("dp/dN = {slope} at N = {nn}"));
        }
    }
    Ok("N_1 = 0 exactly, prefix property over 4 edits, dp/dN < 0 at 50 points".into())
}

fn overfit() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocab = 40;
    let docs: Vec<Document> = (0..10)
        .map(|i| {
            let n = rng.gen_range(3..=6);
            let sentences = (0..n)
                .map(|_| (0..rng.gen_range(4..9)).map(|_| rng.gen_range(2..vocab)).collect())
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
            let forced = rng.gen_range(0..n);
            labels[forced] = 1;
            labeled(&format!("o{i}"), sentences, labels)
        })
        .collect();
    let config = ModelConfig {
        word_dim: 16,
        hidden: 16,
        attention_dim: 32,
        position_dim: 8,
        max_position: 10,
        fine_tune_embeddings: true,
    };
    let mut model = HssasModel::new(config, vocab, None, 8).map_err(|e| e.to_string())?;
    let tc = TrainConfig::default();
    let mut optimizer = Adadelta::new(&model.store, tc.rho, tc.epsilon).map_err(|e| e.to_string())?;
    let batch: Vec<&Document> = docs.iter().collect();
    let mut loss = f64::INFINITY;
    let mut epochs = 0;
    while epochs < OVERFIT_EPOCHS && loss >= OVERFIT_LOSS {
        train_batch(&mut model, &mut optimizer, &batch, &tc).map_err(|e| e.to_string())?;
        epochs += 1;
        loss = evaluate_loss(&model, &docs).map_err(|e| e.to_string())?;
    }
    let elapsed = start.elapsed();
    let mut wrong = Vec::new();
    for d in &docs {
        let pred = model.predict(&d.sentences).map_err(|e| e.to_string())?;
        let picked: Vec<u8> = pred.probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
        if Some(&picked) != d.labels.as_ref() {
            wrong.push(d.id.clone());
        }
    }
    let detail = format!(
        "mean loss {loss:.4} after {epochs} epochs, {}/10 documents exact, {:.1}s",
        10 - wrong.len(),
        elapsed.as_secs_f64()
    );
    if loss < OVERFIT_LOSS && wrong.is_empty() && elapsed <= OVERFIT_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Clipped matches counted from scratch with linear scans.
fn oracle_rouge_n(cand: &[u8], reference: &[u8], n: usize) -> (f64, f64) {
    let grams = |t: &[u8]| -> Vec<Vec<u8>> {
        if t.len() < n {
            Vec::new()
        } else {
            (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
        }
    };
    let (cg, rg) = (grams(cand), grams(reference));
    let mut seen: Vec<&Vec<u8>> = Vec::new();
    let mut matched = 0;
    for g in &cg {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let a = cg.iter().filter(|x| *x == g).count();
        let b = rg.iter().filter(|x| *x == g).count();
        matched += a.min(b);
    }
    let ratio = |m: usize, d: usize| if d == 0 { 0.0 } else { m as f64 / d as f64 };
    (ratio(matched, rg.len()), ratio(matched, cg.len()))
}

fn is_subsequence(sub: &[u8], of: &[u8]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Longest subsequence of `a` (all 2^len enumerated) that is also one of `b`.
fn oracle_lcs(a: &[u8], b: &[u8]) -> usize {
    (0u32..1 << a.len())
        .map(|mask| (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect::<Vec<_>>())
        .filter(|s| is_subsequence(s, b))
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn rouge_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.gen_range(0..=8)).map(|_| rng.gen_range(0..4)).collect() };
    let as_tokens = |s: &[u8]| -> Vec<String> { s.iter().map(|b| ((b'a' + b) as char).to_string()).collect() };
    for pair in 0..1000 {
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let (ta, tb) = (as_tokens(&a), as_tokens(&b));
        for n in 1..=2 {
            let s = rouge_n(&ta, std::slice::from_ref(&tb), n).map_err(|e| e.to_string())?;
            let (r, p) = oracle_rouge_n(&a, &b, n);
            if s.recall != r || s.precision != p {
                return Err(format!("pair {pair} n={n}: {s:?} vs oracle ({r}, {p})"));
            }
        }
        let l = oracle_lcs(&a, &b);
        if lcs_len(&ta, &tb) != l {
            return Err(format!("pair {pair}: lcs {} vs oracle {l}", lcs_len(&ta, &tb)));
        }
        let s = rouge_l(&ta, std::slice::from_ref(&tb)).map_err(|e| e.to_string())?;
        let expect_r = if a.is_empty() || b.is_empty() { 0.0 } else { l as f64 / b.len() as f64 };
        if s.recall != expect_r {
            return Err(format!("pair {pair}: rouge-l recall {} vs {expect_r}", s.recall));
        }
    }

    let refs = [words("the cat sat on the mat")];
    let cand = words("the cat the mat");
    let r1 = rouge_n(&cand, &refs, 1).map_err(|e| e.to_string())?;
    let r2 = rouge_n(&cand, &refs, 2).map_err(|e| e.to_string())?;
    let rl = rouge_l(&words("a c b d"), &[words("a b c d")]).map_err(|e| e.to_string())?;
    let fixed = [
        ("R1 recall", r1.recall, 0.6667),
        ("R1 precision", r1.precision, 1.0),
        ("R1 F1", r1.f1, 0.8),
        ("R2 recall", r2.recall, 0.4),
        ("R2 precision", r2.precision, 0.6667),
        ("RL F1", rl.f1, 0.75),
    ];
    for (name, got, want) in fixed {
        if (got - want).abs() >= FOUR_DECIMALS {
            return Err(format!("{name} = {got:.4}, expected {want:.4}"));
        }
    }
    Ok("1000 random pairs exact; worked fixtures to 4 decimals".into())
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(std::iter::once("hssas").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        return Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)));
    }
    Ok(String::from_utf8(out).expect("utf-8 output"))
}

fn lead3_pipeline() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = fixtures().join("lead3_corpus.jsonl");
    let system = dir.path().join("lead3.jsonl");
    run_cli(&["lead3", "--input", corpus.to_str().unwrap(), "--output", system.to_str().unwrap()])?;
    let json = run_cli(&[
        "rouge",
        "--system",
        system.to_str().unwrap(),
        "--reference",
        corpus.to_str().unwrap(),
        "--mode",
        "recall75",
        "--json",
    ])?;
    let scores: CorpusScores = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    if scores.mode != EvalMode::RecallTruncated || scores.documents != 5 {
        return Err(format!("unexpected run: {scores:?}"));
    }
    let got = [scores.rouge_1.recall, scores.rouge_2.recall, scores.rouge_l.recall];
    let want = [LEAD3_R1, LEAD3_R2, LEAD3_RL];
    if got.iter().zip(want).any(|(g, w)| (g - w).abs() >= FOUR_DECIMALS) {
        return Err(format!("got {got:.4?}, expected {want:?}"));
    }
    Ok(format!("R1/R2/RL recall {:.4}/{:.4}/{:.4}", got[0], got[1], got[2]))
}

fn adadelta_check() -> Check {
    let (mut x, mut a, mut b) = ([0.0], [0.0], [0.0]);
    adadelta_step(&mut x, &[1.0], &mut a, &mut b, 0.95, 1e-6);
    if (x[0] - ADADELTA_FIRST_STEP).abs() >= ADADELTA_TOL {
        return Err(format!("first step {:.8e}", x[0]));
    }
    let (mut w, mut a, mut b) = ([1.0f64], [0.0], [0.0]);
    let mut f = w[0] * w[0];
    for step in 0..100 {
        let g = 2.0 * w[0];
        adadelta_step(&mut w, &[g], &mut a, &mut b, 0.95, 1e-6);
        let next = w[0] * w[0];
        if next >= f {
            return Err(format!("f did not decrease at step {step}"));
        }
        f = next;
    }
    Ok(format!("first step {:.6e}, f(w) after 100 steps {f:.6}", x[0]))
}

fn determinism() -> Check {
    let fx = fixtures();
    let config = std::fs::read_to_string(fx.join("train.toml")).map_err(|e| e.to_string())?;
    let config = config
        .replace("\"train_corpus.jsonl\"", &format!("{:?}", fx.join("train_corpus.jsonl")))
        .replace("\"val_corpus.jsonl\"", &format!("{:?}", fx.join("val_corpus.jsonl")));
    let mut runs = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = dir.path().join("train.toml");
        std::fs::write(&cfg, &config).map_err(|e| e.to_string())?;
        run_cli(&["train", "--config", cfg.to_str().unwrap()])?;
        let log = std::fs::read(dir.path().join("run").join(cli::LOG_FILE)).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(dir.path().join("run").join(cli::CHECKPOINT_FILE)).map_err(|e| e.to_string())?;
        runs.push((log, ckpt));
        dirs.push(dir);
    }
    if runs[0].0 != runs[1].0 {
        return Err("training logs differ".into());
    }
    if runs[0].1 != runs[1].1 {
        return Err("checkpoints differ".into());
    }

    let ckpt = Checkpoint::from_bytes(&runs[0].1, None).map_err(|e| e.to_string())?;
    let again = Checkpoint::from_bytes(&ckpt.to_bytes().map_err(|e| e.to_string())?, Some(&ckpt.model.config))
        .map_err(|e| e.to_string())?;
    let doc = vec![vec![2, 3, 4], vec![5, 6], vec![7, 8, 9, 10]];
    let a = ckpt.model.predict(&doc).map_err(|e| e.to_string())?;
    let b = again.model.predict(&doc).map_err(|e| e.to_string())?;
    if a != b {
        return Err("forward outputs differ after checkpoint round trip".into());
    }
    Ok(format!(
        "2 runs: logs and checkpoints ({} bytes) identical; round trip bitwise",
        runs[0].1.len()
    ))
}

fn lead_corpus(rng: &mut ChaCha8Rng, prefix: &str, count: usize, k: usize, vocab: usize) -> Vec<Document> {
    (0..count)
        .map(|i| {
            let n = rng.gen_range(k + 1..=8);
            let sentences = (0..n)
                .map(|_| (0..rng.gen_range(3..7)).map(|_| rng.gen_range(2..vocab)).collect())
                .collect();
            let labels = (0..n).map(|j| u8::from(j < k)).collect();
            labeled(&format!("{prefix}{i}"), sentences, labels)
        })
        .collect()
}

fn directional_sanity() -> Check {
    let k = 2;
    let vocab = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train_docs = lead_corpus(&mut rng, "t", 60, k, vocab);
    let held_out = lead_corpus(&mut rng, "h", 40, k, vocab);
    let config = ModelConfig {
        word_dim: 8,
        hidden: 6,
        attention_dim: 8,
        position_dim: 4,
        max_position: 12,
        fine_tune_embeddings: true,
    };
    let mut model = HssasModel::new(config, vocab, None, 1).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        batch_size: 4,
        max_epochs: 15,
        seed: 4,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &train_docs, &[], &tc).map_err(|e| e.to_string())?;
    let matches = held_out
        .iter()
        .filter(|d| {
            summarize(d, &model, Budget::SentenceCount(k))
                .map(|s| s.selected == lead3(d.len())[..k])
                .unwrap_or(false)
        })
        .count();
    let rate = matches as f64 / held_out.len() as f64;
    let last = outcome.log.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    let detail = format!("{matches}/{} held-out documents match LEAD-{k}, final train loss {last:.4}", held_out.len());
    if rate >= LEAD_MATCH_RATE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("gradient suite", gradient_suite),
        ("attention contracts", attention_contracts),
        ("summary state semantics", summary_state_semantics),
        ("overfit", overfit),
        ("ROUGE oracle equivalence", rouge_oracles),
        ("LEAD-3 pipeline", lead3_pipeline),
        ("adadelta", adadelta_check),
        ("determinism", determinism),
        ("directional sanity", directional_sanity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
