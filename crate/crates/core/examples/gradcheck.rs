//! Compare tape gradients of the full model loss with central finite
//! differences on every parameter coordinate.
//!
//!     cargo run --release --example gradcheck

use hierdefect::autograd::{finite_diff_check, Tape, Tensor, Var};
use hierdefect::model::*;
use hierdefect::preprocess::{FileWindow, WindowOrigin};
use hierdefect::tokenizer::PAD_ID;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hierdefect::Result<()> {
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        max_lines: 4,
        tokens_per_line: 4,
        vocab_size: 16,
        dropout: 0.0,
        init_std: 0.3,
        ..Default::default()
    };
    let params = init_params(&cfg, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let (l, t) = (cfg.max_lines, cfg.tokens_per_line);
    let mut window = FileWindow {
        rows: l,
        cols: t,
        token_ids: vec![PAD_ID; l * t],
        token_mask: vec![0; l * t],
        line_mask: vec![1, 1, 1, 0],
        line_labels: vec![1, 0, 1, 0],
        origin: WindowOrigin {
            path: "toy.py".into(),
            start_line: 1,
        },
    };
    for r in 0..3 {
        for c in 0..rng.gen_range(1..=t) {
            window.token_ids[r * t + c] = rng.gen_range(2..cfg.vocab_size as u32);
            window.token_mask[r * t + c] = 1;
        }
    }

    let names = params.names();
    let tensors: Vec<Tensor> = names
        .iter()
        .map(|n| params.get(n).unwrap().clone())
        .collect();
    let loss = |tape: &mut Tape, vars: &[Var]| {
        let bound = BoundParams::from_vars(&names, vars);
        let probs = forward_window(tape, &bound, &cfg, &window, false, 0)?;
        tape.masked_cross_entropy(probs, &window.line_labels, &window.line_mask, &[1.0, 1.0])
    };
    let report = finite_diff_check(loss, &tensors, 3e-5)?;
    let (p, c) = report.worst.expect("at least one coordinate");
    println!(
        "{} coordinates, max relative error {:.2e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
        report.n_coords, report.max_rel_error, names[p], c, report.analytic, report.numeric
    );
    Ok(())
}
