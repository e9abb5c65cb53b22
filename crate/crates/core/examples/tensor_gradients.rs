// Reverse-mode gradients on the tape, checked against central differences.

use mixbt::diffcore::Tape;
use mixbt::oracle::{compare_grads, finite_difference_grads};
use mixbt::Tensor;

fn loss(tape: &mut Tape, x: &Tensor, w: &Tensor) -> mixbt::Result<(mixbt::diffcore::Var, mixbt::diffcore::Var)> {
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone());
    let h = tape.matmul(xv, wv)?;
    let h = tape.relu(h)?;
    let h2 = tape.pow2(h)?;
    let l = tape.mean(h2)?;
    Ok((wv, l))
}

fn main() -> mixbt::Result<()> {
    let x = Tensor::from_rows(&[[1.0, -2.0, 0.5], [0.3, 0.8, -1.1]]);
    let w = Tensor::from_rows(&[[0.2, -0.4], [0.7, 0.1], [-0.3, 0.9]]);

    let mut tape = Tape::new();
    let (wv, l) = loss(&mut tape, &x, &w)?;
    tape.backward(l)?;
    let analytic = tape.grad(wv).expect("leaf has a gradient").clone();
    println!("loss {:.6}", tape.value(l).item()?);
    println!("dL/dW {:?}", analytic.data());

    let numeric = finite_difference_grads(&[w], 1e-5, |p| {
        let mut t = Tape::new();
        let (_, l) = loss(&mut t, &x, &p[0])?;
        t.value(l).item()
    })?;
    let bad = compare_grads(&[analytic], &numeric, 1e-6, 1e-9);
    println!("finite-difference mismatches: {}", bad.len());
    assert!(bad.is_empty());

    // A second backward on the same tape is refused.
    assert!(tape.backward(l).is_err());
    Ok(())
}
