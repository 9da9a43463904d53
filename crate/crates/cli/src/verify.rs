//! Fast self-checks behind `ptk verify`.

use ptk_core::curve::{hilbert_rank, morton_rank};
use ptk_core::fixtures::lattice;
use ptk_core::partition::compute_splits;
use ptk_core::sequence::validate;
use ptk_core::{tokenize, CellIndex, TokenizerConfig};
use ptk_model::gradcheck::{grad_check, GradCheckOptions};
use ptk_model::model::{forward, softmax_rows};
use ptk_model::{embed_sequence, vocab, Example, ToyModelConfig, ToyModelParams};

type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lattice_layout() -> Check {
    let out = tokenize(&lattice(2, 3, 3, 8), &TokenizerConfig::with_mk(8, 3)).map_err(|e| e.to_string())?;
    let s = validate(&out.sequence.tokens, true).map_err(|e| e.to_string())?;
    ensure(
        (s.patches, s.layer_seps, s.row_seps) == (18, 1, 4),
        format!("got {} patches, {} layer, {} row separators", s.patches, s.layer_seps, s.row_seps),
    )
}

fn split_formula() -> Check {
    for (n, target, k) in [(12_800, 12_800, 5), (2_559, 2_560, 5), (100_000, 512, 5), (0, 7, 3)] {
        let want = (n / target).clamp(1, k);
        ensure(compute_splits(n, target, k) == want, format!("splits({n}, {target}, {k})"))?;
    }
    Ok(())
}

fn curve_bijection() -> Check {
    let order = 2;
    let side = 1usize << order;
    let mut seen = [vec![false; side.pow(3)], vec![false; side.pow(3)]];
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let c = CellIndex::new(z, y, x);
                let ranks = [morton_rank(c, order), hilbert_rank(c, order)];
                for (slot, rank) in seen.iter_mut().zip(ranks) {
                    let r = rank.map_err(|e| e.to_string())? as usize;
                    ensure(!slot[r], format!("rank {r} repeated"))?;
                    slot[r] = true;
                }
            }
        }
    }
    Ok(())
}

fn small_model() -> Result<(ToyModelParams, Example), String> {
    let cfg = ToyModelConfig {
        d_model: 16,
        n_heads: 4,
        vocab_size: 40,
        max_seq: 32,
        m: 4,
        ..ToyModelConfig::default()
    };
    let params = ToyModelParams::init(cfg).map_err(|e| e.to_string())?;
    let seq = tokenize(&lattice(1, 2, 2, 4), &TokenizerConfig::with_mk(4, 2))
        .map_err(|e| e.to_string())?
        .sequence;
    let ex = Example::with_answer(seq, &[vocab::id("what")], &[vocab::id("cube"), vocab::id("<eos>")])
        .map_err(|e| e.to_string())?;
    Ok((params, ex))
}

fn gradients() -> Check {
    let (params, ex) = small_model()?;
    let report = grad_check(&params, &[ex], &GradCheckOptions::default()).map_err(|e| e.to_string())?;
    ensure(report.checked >= 200, format!("only {} coordinates checked", report.checked))
}

fn causality() -> Check {
    let (params, ex) = small_model()?;
    let base = embed_sequence(&params, &ex.sequence).map_err(|e| e.to_string())?;
    let t = base.rows / 2;
    let mut bumped = base.clone();
    bumped.row_mut(t).iter_mut().for_each(|v| *v += 1.0);
    let (a, b) = (
        forward(&params, &base).map_err(|e| e.to_string())?,
        forward(&params, &bumped).map_err(|e| e.to_string())?,
    );
    for s in 0..t {
        ensure(a.row(s) == b.row(s), format!("row {s} depends on row {t}"))?;
    }
    let probs = softmax_rows(&a);
    for s in 0..probs.rows {
        ensure((probs.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-6, "softmax row does not sum to 1")?;
    }
    Ok(())
}

pub fn run_all() -> Vec<(&'static str, Check)> {
    vec![
        ("lattice_layout", lattice_layout()),
        ("split_formula", split_formula()),
        ("curve_bijection", curve_bijection()),
        ("gradient_check", gradients()),
        ("causality", causality()),
    ]
}
