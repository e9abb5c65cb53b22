// Batch normalization, cross-correlation and the Barlow Twins terms for two
// small embedding batches.

use mixbt::diffcore::Tape;
use mixbt::losses::{barlow_twins_loss, cross_correlation, normalize_embeddings};
use mixbt::Tensor;

fn main() -> mixbt::Result<()> {
    let za = Tensor::from_rows(&[[0.9, 0.1, -0.3], [0.2, 1.4, 0.5], [-1.0, 0.3, 0.8], [0.4, -0.7, -1.2]]);
    let zb = Tensor::from_rows(&[[1.0, 0.0, -0.2], [0.1, 1.2, 0.7], [-0.8, 0.5, 0.6], [0.3, -0.9, -1.0]]);

    let mut tape = Tape::new();
    let a = tape.leaf(za);
    let b = tape.leaf(zb);
    let an = normalize_embeddings(&mut tape, a)?;
    let bn = normalize_embeddings(&mut tape, b)?;
    let c = cross_correlation(&mut tape, an, bn)?;
    let terms = barlow_twins_loss(&mut tape, c, 0.0078125)?;
    let (inv, red, l_bt) = terms.values(&tape);

    let cm = tape.value(c);
    println!("cross-correlation:");
    for i in 0..cm.rows() {
        println!("  {:?}", cm.row(i).iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>());
    }
    println!("invariance {inv:.6}  redundancy {red:.6}  l_bt {l_bt:.6}");

    tape.backward(terms.l_bt)?;
    let g = tape.grad(a).expect("leaf");
    println!("|dL/dza|^2 = {:.6}", g.sum_sq());

    // Perfectly correlated, decorrelated views give zero loss.
    let mut t = Tape::new();
    let ident = t.constant(Tensor::identity(3));
    let zero = barlow_twins_loss(&mut t, ident, 0.5)?;
    assert_eq!(t.value(zero.l_bt).item()?, 0.0);
    Ok(())
}
